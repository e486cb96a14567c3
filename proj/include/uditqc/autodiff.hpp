#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "uditqc/common.hpp"
#include "uditqc/rng.hpp"
#include "uditqc/tensor.hpp"

namespace uditqc::nn {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

// Reverse-mode autodiff over Tensor. Each op returns a Node holding the
// forward value plus a closure that scatters the node's gradient into its
// parents. Graphs are rebuilt per forward pass and freed when the root
// drops out of scope.
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::uint64_t order = 0;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backward_fn;

    void ensure_grad() {
        if (grad.numel() != value.numel()) grad = Tensor::zeros(value.shape());
    }
};

using NodePtr = std::shared_ptr<Node>;

inline std::atomic<std::uint64_t>& node_counter() {
    static std::atomic<std::uint64_t> counter{0};
    return counter;
}

// When disabled, ops keep values but record no parents, so intermediate
// nodes free as soon as they leave scope (inference mode).
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool saved;
    NoGradGuard() : saved(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = saved; }
};

inline NodePtr make_node(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->order = node_counter().fetch_add(1, std::memory_order_relaxed);
    return n;
}

inline NodePtr constant(Tensor value) { return make_node(std::move(value)); }

inline NodePtr parameter(Tensor value) {
    NodePtr n = make_node(std::move(value));
    n->requires_grad = true;
    n->ensure_grad();
    return n;
}

namespace detail {

inline bool track(const std::vector<NodePtr>& parents) {
    if (!grad_mode()) return false;
    for (const NodePtr& p : parents) {
        if (p->requires_grad) return true;
    }
    return false;
}

inline NodePtr finish(NodePtr n, std::vector<NodePtr> parents, std::function<void()> backward) {
    if (track(parents)) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward);
    }
    return n;
}

}  // namespace detail

inline void backward(const NodePtr& root) {
    require(root->value.numel() == 1, "backward expects a scalar root");
    if (!root->requires_grad) return;
    // topological order by creation index
    std::vector<Node*> topo;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{root.get()};
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        if (!seen.insert(n).second) continue;
        topo.push_back(n);
        for (const NodePtr& p : n->parents) {
            if (p->requires_grad) stack.push_back(p.get());
        }
    }
    std::sort(topo.begin(), topo.end(), [](Node* a, Node* b) { return a->order > b->order; });
    root->ensure_grad();
    root->grad[0] = 1.0;
    for (Node* n : topo) {
        if (n->backward_fn) n->backward_fn();
    }
}

// ---- elementwise ----

inline NodePtr add(const NodePtr& a, const NodePtr& b) {
    require(a->value.same_shape(b->value), "add: shape mismatch");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b->value[i];
    NodePtr n = make_node(std::move(out));
    Node* self = n.get();
    Node* pa = a.get();
    Node* pb = b.get();
    return detail::finish(n, {a, b}, [self, pa, pb]() {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < self->grad.numel(); ++i) pa->grad[i] += self->grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < self->grad.numel(); ++i) pb->grad[i] += self->grad[i];
        }
    });
}

inline NodePtr sub(const NodePtr& a, const NodePtr& b) {
    require(a->value.same_shape(b->value), "sub: shape mismatch");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
    NodePtr n = make_node(std::move(out));
    Node* self = n.get();
    Node* pa = a.get();
    Node* pb = b.get();
    return detail::finish(n, {a, b}, [self, pa, pb]() {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < self->grad.numel(); ++i) pa->grad[i] += self->grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < self->grad.numel(); ++i) pb->grad[i] -= self->grad[i];
        }
    });
}

inline NodePtr mul(const NodePtr& a, const NodePtr& b) {
    require(a->value.same_shape(b->value), "mul: shape mismatch");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
    NodePtr n = make_node(std::move(out));
    Node* self = n.get();
    Node* pa = a.get();
    Node* pb = b.get();
    return detail::finish(n, {a, b}, [self, pa, pb]() {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < self->grad.numel(); ++i) {
                pa->grad[i] += self->grad[i] * pb->value[i];
            }
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < self->grad.numel(); ++i) {
                pb->grad[i] += self->grad[i] * pa->value[i];
            }
        }
    });
}

inline NodePtr scale(const NodePtr& a, double c) {
    Tensor out = a->value;
    for (double& v : out.vec()) v *= c;
    NodePtr n = make_node(std::move(out));
    Node* self = n.get();
    Node* pa = a.get();
    return detail::finish(n, {a}, [self, pa, c]() {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (std::size_t i = 0; i < self->grad.numel(); ++i) pa->grad[i] += c * self->grad[i];
    });
}

// ---- shape ops ----

inline NodePtr reshape(const NodePtr& a, std::vector<std::size_t> shape) {
    NodePtr n = make_node(a->value.reshaped(std::move(shape)));
    Node* self = n.get();
    Node* pa = a.get();
    return detail::finish(n, {a}, [self, pa]() {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (std::size_t i = 0; i < self->grad.numel(); ++i) pa->grad[i] += self->grad[i];
    });
}

// out[i] = x[map[i]]; the map need not be a bijection, backward scatter-adds
inline NodePtr reindex(const NodePtr& a, std::vector<std::size_t> map,
                       std::vector<std::size_t> out_shape) {
    require(map.size() == Tensor::numel_of(out_shape), "reindex: map does not match shape");
    Tensor out(std::move(out_shape));
    for (std::size_t i = 0; i < map.size(); ++i) out[i] = a->value[map[i]];
    NodePtr n = make_node(std::move(out));
    Node* self = n.get();
    Node* pa = a.get();
    auto shared_map = std::make_shared<std::vector<std::size_t>>(std::move(map));
    return detail::finish(n, {a}, [self, pa, shared_map]() {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        const auto& m = *shared_map;
        for (std::size_t i = 0; i < m.size(); ++i) pa->grad[m[i]] += self->grad[i];
    });
}

inline NodePtr slice_last(const NodePtr& a, std::size_t start, std::size_t len) {
    const auto& shape = a->value.shape();
    const std::size_t last = shape.back();
    require(start + len <= last, "slice_last out of range");
    const std::size_t rows = a->value.numel() / last;
    std::vector<std::size_t> out_shape = shape;
    out_shape.back() = len;
    Tensor out(out_shape);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < len; ++j) out[r * len + j] = a->value[r * last + start + j];
    }
    NodePtr n = make_node(std::move(out));
    Node* self = n.get();
    Node* pa = a.get();
    return detail::finish(n, {a}, [self, pa, start, len, last, rows]() {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < len; ++j) {
                pa->grad[r * last + start + j] += self->grad[r * len + j];
            }
        }
    });
}

inline NodePtr concat_last(const NodePtr& a, const NodePtr& b) {
    const auto& sa = a->value.shape();
    const auto& sb = b->value.shape();
    require(sa.size() == sb.size(), "concat_last: rank mismatch");
    for (std::size_t i = 0; i + 1 < sa.size(); ++i) {
        require(sa[i] == sb[i], "concat_last: leading dims differ");
    }
    const std::size_t la = sa.back(), lb = sb.back();
    const std::size_t rows = a->value.numel() / la;
    std::vector<std::size_t> out_shape = sa;
    out_shape.back() = la + lb;
    Tensor out(out_shape);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < la; ++j) out[r * (la + lb) + j] = a->value[r * la + j];
        for (std::size_t j = 0; j < lb; ++j) out[r * (la + lb) + la + j] = b->value[r * lb + j];
    }
    NodePtr n = make_node(std::move(out));
    Node* self = n.get();
    Node* pa = a.get();
    Node* pb = b.get();
    return detail::finish(n, {a, b}, [self, pa, pb, la, lb, rows]() {
        for (std::size_t r = 0; r < rows; ++r) {
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (std::size_t j = 0; j < la; ++j) {
                    pa->grad[r * la + j] += self->grad[r * (la + lb) + j];
                }
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::size_t j = 0; j < lb; ++j) {
                    pb->grad[r * lb + j] += self->grad[r * (la + lb) + la + j];
                }
            }
        }
    });
}

// ---- linear algebra ----

// x: [..., k] times w: [k, n] -> [..., n]
inline NodePtr matmul(const NodePtr& x, const NodePtr& w) {
    require(w->value.rank() == 2, "matmul: weight must be rank 2");
    const std::size_t k = w->value.dim(0), ncols = w->value.dim(1);
    require(x->value.shape().back() == k, "matmul: inner dims differ");
    const std::size_t rows = x->value.numel() / k;
    std::vector<std::size_t> out_shape = x->value.shape();
    out_shape.back() = ncols;
    Tensor out(out_shape);
    {
        ECMap xm(x->value.data(), rows, k);
        ECMap wm(w->value.data(), k, ncols);
        EMap om(out.data(), rows, ncols);
        om.noalias() = xm * wm;
    }
    NodePtr n = make_node(std::move(out));
    Node* self = n.get();
    Node* px = x.get();
    Node* pw = w.get();
    return detail::finish(n, {x, w}, [self, px, pw, rows, k, ncols]() {
        ECMap gy(self->grad.data(), rows, ncols);
        if (px->requires_grad) {
            px->ensure_grad();
            EMap gx(px->grad.data(), rows, k);
            ECMap wm(pw->value.data(), k, ncols);
            gx.noalias() += gy * wm.transpose();
        }
        if (pw->requires_grad) {
            pw->ensure_grad();
            EMap gw(pw->grad.data(), k, ncols);
            ECMap xm(px->value.data(), rows, k);
            gw.noalias() += xm.transpose() * gy;
        }
    });
}

// a: [B, m, k] times b: [B, k, n] -> [B, m, n]
inline NodePtr bmm(const NodePtr& a, const NodePtr& b) {
    require(a->value.rank() == 3 && b->value.rank() == 3, "bmm expects rank-3 inputs");
    const std::size_t B = a->value.dim(0), m = a->value.dim(1), k = a->value.dim(2);
    require(b->value.dim(0) == B && b->value.dim(1) == k, "bmm: shape mismatch");
    const std::size_t ncols = b->value.dim(2);
    Tensor out({B, m, ncols});
    for (std::size_t i = 0; i < B; ++i) {
        ECMap am(a->value.data() + i * m * k, m, k);
        ECMap bm(b->value.data() + i * k * ncols, k, ncols);
        EMap om(out.data() + i * m * ncols, m, ncols);
        om.noalias() = am * bm;
    }
    NodePtr n = make_node(std::move(out));
    Node* self = n.get();
    Node* pa = a.get();
    Node* pb = b.get();
    return detail::finish(n, {a, b}, [self, pa, pb, B, m, k, ncols]() {
        for (std::size_t i = 0; i < B; ++i) {
            ECMap gy(self->grad.data() + i * m * ncols, m, ncols);
            if (pa->requires_grad) {
                pa->ensure_grad();
                EMap ga(pa->grad.data() + i * m * k, m, k);
                ECMap bm(pb->value.data() + i * k * ncols, k, ncols);
                ga.noalias() += gy * bm.transpose();
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                EMap gb(pb->grad.data() + i * k * ncols, k, ncols);
                ECMap am(pa->value.data() + i * m * k, m, k);
                gb.noalias() += am.transpose() * gy;
            }
        }
    });
}

inline NodePtr transpose_last(const NodePtr& a) {
    require(a->value.rank() == 3, "transpose_last expects rank 3");
    const std::size_t B = a->value.dim(0), m = a->value.dim(1), k = a->value.dim(2);
    Tensor out({B, k, m});
    for (std::size_t i = 0; i < B; ++i) {
        for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t c = 0; c < k; ++c) {
                out[i * k * m + c * m + r] = a->value[i * m * k + r * k + c];
            }
        }
    }
    NodePtr n = make_node(std::move(out));
    Node* self = n.get();
    Node* pa = a.get();
    return detail::finish(n, {a}, [self, pa, B, m, k]() {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (std::size_t i = 0; i < B; ++i) {
            for (std::size_t r = 0; r < m; ++r) {
                for (std::size_t c = 0; c < k; ++c) {
                    pa->grad[i * m * k + r * k + c] += self->grad[i * k * m + c * m + r];
                }
            }
        }
    });
}

// ---- broadcasts ----

inline NodePtr add_bias(const NodePtr& x, const NodePtr& b) {
    require(b->value.rank() == 1, "add_bias expects rank-1 bias");
    const std::size_t h = b->value.dim(0);
    require(x->value.shape().back() == h, "add_bias: width mismatch");
    const std::size_t rows = x->value.numel() / h;
    Tensor out = x->value;
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < h; ++j) out[r * h + j] += b->value[j];
    }
    NodePtr n = make_node(std::move(out));
    Node* self = n.get();
    Node* px = x.get();
    Node* pb = b.get();
    return detail::finish(n, {x, b}, [self, px, pb, rows, h]() {
        if (px->requires_grad) {
            px->ensure_grad();
            for (std::size_t i = 0; i < self->grad.numel(); ++i) px->grad[i] += self->grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t j = 0; j < h; ++j) pb->grad[j] += self->grad[r * h + j];
            }
        }
    });
}

// x: [B, K, H] plus a constant [K, H] table (positional embeddings)
inline NodePtr add_rows_const(const NodePtr& x, const Tensor& table) {
    require(x->value.rank() == 3, "add_rows_const expects rank 3");
    const std::size_t B = x->value.dim(0), K = x->value.dim(1), H = x->value.dim(2);
    require(table.rank() == 2 && table.dim(0) == K && table.dim(1) == H,
            "add_rows_const: table shape mismatch");
    Tensor out = x->value;
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t i = 0; i < K * H; ++i) out[b * K * H + i] += table[i];
    }
    NodePtr n = make_node(std::move(out));
    Node* self = n.get();
    Node* px = x.get();
    return detail::finish(n, {x}, [self, px]() {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (std::size_t i = 0; i < self->grad.numel(); ++i) px->grad[i] += self->grad[i];
    });
}

// x: [B, K, H] scaled per (batch, channel) by s: [B, H]
inline NodePtr bcast_mul(const NodePtr& x, const NodePtr& s) {
    require(x->value.rank() == 3 && s->value.rank() == 2, "bcast_mul expects [B,K,H] and [B,H]");
    const std::size_t B = x->value.dim(0), K = x->value.dim(1), H = x->value.dim(2);
    require(s->value.dim(0) == B && s->value.dim(1) == H, "bcast_mul: shape mismatch");
    Tensor out = x->value;
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t k = 0; k < K; ++k) {
            for (std::size_t h = 0; h < H; ++h) out[(b * K + k) * H + h] *= s->value[b * H + h];
        }
    }
    NodePtr n = make_node(std::move(out));
    Node* self = n.get();
    Node* px = x.get();
    Node* ps = s.get();
    return detail::finish(n, {x, s}, [self, px, ps, B, K, H]() {
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t k = 0; k < K; ++k) {
                for (std::size_t h = 0; h < H; ++h) {
                    const std::size_t i = (b * K + k) * H + h;
                    if (px->requires_grad) {
                        px->ensure_grad();
                        px->grad[i] += self->grad[i] * ps->value[b * H + h];
                    }
                    if (ps->requires_grad) {
                        ps->ensure_grad();
                        ps->grad[b * H + h] += self->grad[i] * px->value[i];
                    }
                }
            }
        }
    });
}

// adaLN modulation: out = x * (1 + g) + be, g/be broadcast over tokens
inline NodePtr modulate(const NodePtr& x, const NodePtr& g, const NodePtr& be) {
    require(x->value.rank() == 3, "modulate expects [B,K,H]");
    const std::size_t B = x->value.dim(0), K = x->value.dim(1), H = x->value.dim(2);
    require(g->value.rank() == 2 && g->value.dim(0) == B && g->value.dim(1) == H,
            "modulate: scale shape mismatch");
    require(be->value.same_shape(g->value), "modulate: shift shape mismatch");
    Tensor out = x->value;
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t k = 0; k < K; ++k) {
            for (std::size_t h = 0; h < H; ++h) {
                const std::size_t i = (b * K + k) * H + h;
                out[i] = out[i] * (1.0 + g->value[b * H + h]) + be->value[b * H + h];
            }
        }
    }
    NodePtr n = make_node(std::move(out));
    Node* self = n.get();
    Node* px = x.get();
    Node* pg = g.get();
    Node* pb = be.get();
    return detail::finish(n, {x, g, be}, [self, px, pg, pb, B, K, H]() {
        if (px->requires_grad) px->ensure_grad();
        if (pg->requires_grad) pg->ensure_grad();
        if (pb->requires_grad) pb->ensure_grad();
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t k = 0; k < K; ++k) {
                for (std::size_t h = 0; h < H; ++h) {
                    const std::size_t i = (b * K + k) * H + h;
                    const double gy = self->grad[i];
                    if (px->requires_grad) px->grad[i] += gy * (1.0 + pg->value[b * H + h]);
                    if (pg->requires_grad) pg->grad[b * H + h] += gy * px->value[i];
                    if (pb->requires_grad) pb->grad[b * H + h] += gy;
                }
            }
        }
    });
}

// ---- normalization / activations ----

// LayerNorm over the last dim, no learned affine (adaLN regresses it).
inline NodePtr layer_norm(const NodePtr& x, double eps = 1e-6) {
    const std::size_t h = x->value.shape().back();
    const std::size_t rows = x->value.numel() / h;
    Tensor out(x->value.shape());
    Tensor rstd({rows});
    for (std::size_t r = 0; r < rows; ++r) {
        const double* v = x->value.data() + r * h;
        double mean = 0.0;
        for (std::size_t j = 0; j < h; ++j) mean += v[j];
        mean /= static_cast<double>(h);
        double var = 0.0;
        for (std::size_t j = 0; j < h; ++j) var += (v[j] - mean) * (v[j] - mean);
        var /= static_cast<double>(h);
        const double r_std = 1.0 / std::sqrt(var + eps);
        rstd[r] = r_std;
        for (std::size_t j = 0; j < h; ++j) out[r * h + j] = (v[j] - mean) * r_std;
    }
    NodePtr n = make_node(std::move(out));
    Node* self = n.get();
    Node* px = x.get();
    auto aux = std::make_shared<Tensor>(std::move(rstd));
    return detail::finish(n, {x}, [self, px, aux, rows, h]() {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self->value.data() + r * h;
            const double* gy = self->grad.data() + r * h;
            double mean_gy = 0.0, mean_gy_y = 0.0;
            for (std::size_t j = 0; j < h; ++j) {
                mean_gy += gy[j];
                mean_gy_y += gy[j] * y[j];
            }
            mean_gy /= static_cast<double>(h);
            mean_gy_y /= static_cast<double>(h);
            const double r_std = (*aux)[r];
            double* gx = px->grad.data() + r * h;
            for (std::size_t j = 0; j < h; ++j) {
                gx[j] += r_std * (gy[j] - mean_gy - y[j] * mean_gy_y);
            }
        }
    });
}

inline NodePtr softmax_last(const NodePtr& x) {
    const std::size_t h = x->value.shape().back();
    const std::size_t rows = x->value.numel() / h;
    Tensor out(x->value.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* v = x->value.data() + r * h;
        double mx = v[0];
        for (std::size_t j = 1; j < h; ++j) mx = std::max(mx, v[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < h; ++j) {
            out[r * h + j] = std::exp(v[j] - mx);
            sum += out[r * h + j];
        }
        for (std::size_t j = 0; j < h; ++j) out[r * h + j] /= sum;
    }
    NodePtr n = make_node(std::move(out));
    Node* self = n.get();
    Node* px = x.get();
    return detail::finish(n, {x}, [self, px, rows, h]() {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self->value.data() + r * h;
            const double* gy = self->grad.data() + r * h;
            double dot = 0.0;
            for (std::size_t j = 0; j < h; ++j) dot += y[j] * gy[j];
            double* gx = px->grad.data() + r * h;
            for (std::size_t j = 0; j < h; ++j) gx[j] += y[j] * (gy[j] - dot);
        }
    });
}

inline NodePtr gelu(const NodePtr& x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440084436210485;
    constexpr double inv_sqrt2pi = 0.39894228040143267793994605993438;
    Tensor out(x->value.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) {
        const double v = x->value[i];
        out[i] = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
    }
    NodePtr n = make_node(std::move(out));
    Node* self = n.get();
    Node* px = x.get();
    return detail::finish(n, {x}, [self, px]() {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (std::size_t i = 0; i < self->grad.numel(); ++i) {
            const double v = px->value[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
            px->grad[i] += self->grad[i] * (cdf + v * pdf);
        }
    });
}

inline NodePtr silu(const NodePtr& x) {
    Tensor out(x->value.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) {
        const double v = x->value[i];
        out[i] = v / (1.0 + std::exp(-v));
    }
    NodePtr n = make_node(std::move(out));
    Node* self = n.get();
    Node* px = x.get();
    return detail::finish(n, {x}, [self, px]() {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (std::size_t i = 0; i < self->grad.numel(); ++i) {
            const double v = px->value[i];
            const double sig = 1.0 / (1.0 + std::exp(-v));
            px->grad[i] += self->grad[i] * sig * (1.0 + v * (1.0 - sig));
        }
    });
}

// ---- convolutions / resampling ----

// x: [B, L, C], w: [k, C, Cout], b: [Cout]; zero padding (k-1)/2 each side.
inline NodePtr conv1d(const NodePtr& x, const NodePtr& w, const NodePtr& b, std::size_t stride) {
    require(x->value.rank() == 3 && w->value.rank() == 3, "conv1d: bad ranks");
    const std::size_t B = x->value.dim(0), L = x->value.dim(1), C = x->value.dim(2);
    const std::size_t k = w->value.dim(0), Cout = w->value.dim(2);
    require(w->value.dim(1) == C, "conv1d: channel mismatch");
    require(k % 2 == 1, "conv1d: kernel must be odd");
    if (stride == 2) require(L % 2 == 0, "conv1d: stride-2 requires even length");
    const std::size_t pad = (k - 1) / 2;
    const std::size_t Lout = (L + 2 * pad - k) / stride + 1;
    // im2col: [B*Lout, k*C]
    Tensor cols({B * Lout, k * C});
    for (std::size_t bi = 0; bi < B; ++bi) {
        for (std::size_t o = 0; o < Lout; ++o) {
            double* row = cols.data() + (bi * Lout + o) * k * C;
            for (std::size_t t = 0; t < k; ++t) {
                const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(o * stride + t) -
                                           static_cast<std::ptrdiff_t>(pad);
                if (src < 0 || src >= static_cast<std::ptrdiff_t>(L)) continue;
                const double* cell = x->value.data() + (bi * L + src) * C;
                for (std::size_t c = 0; c < C; ++c) row[t * C + c] = cell[c];
            }
        }
    }
    Tensor out({B, Lout, Cout});
    {
        ECMap cm(cols.data(), B * Lout, k * C);
        ECMap wm(w->value.data(), k * C, Cout);
        EMap om(out.data(), B * Lout, Cout);
        om.noalias() = cm * wm;
    }
    for (std::size_t r = 0; r < B * Lout; ++r) {
        for (std::size_t c = 0; c < Cout; ++c) out[r * Cout + c] += b->value[c];
    }
    NodePtr n = make_node(std::move(out));
    Node* self = n.get();
    Node* px = x.get();
    Node* pw = w.get();
    Node* pb = b.get();
    auto saved_cols = std::make_shared<Tensor>(std::move(cols));
    return detail::finish(n, {x, w, b}, [self, px, pw, pb, saved_cols, B, L, C, k, Cout, Lout,
                                         stride, pad]() {
        ECMap gy(self->grad.data(), B * Lout, Cout);
        if (pw->requires_grad) {
            pw->ensure_grad();
            EMap gw(pw->grad.data(), k * C, Cout);
            ECMap cm(saved_cols->data(), B * Lout, k * C);
            gw.noalias() += cm.transpose() * gy;
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t r = 0; r < B * Lout; ++r) {
                for (std::size_t c = 0; c < Cout; ++c) pb->grad[c] += self->grad[r * Cout + c];
            }
        }
        if (px->requires_grad) {
            px->ensure_grad();
            Tensor gcols({B * Lout, k * C});
            EMap gc(gcols.data(), B * Lout, k * C);
            ECMap wm(pw->value.data(), k * C, Cout);
            gc.noalias() = gy * wm.transpose();
            for (std::size_t bi = 0; bi < B; ++bi) {
                for (std::size_t o = 0; o < Lout; ++o) {
                    const double* row = gcols.data() + (bi * Lout + o) * k * C;
                    for (std::size_t t = 0; t < k; ++t) {
                        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(o * stride + t) -
                                                   static_cast<std::ptrdiff_t>(pad);
                        if (src < 0 || src >= static_cast<std::ptrdiff_t>(L)) continue;
                        double* cell = px->grad.data() + (bi * L + src) * C;
                        for (std::size_t c = 0; c < C; ++c) cell[c] += row[t * C + c];
                    }
                }
            }
        }
    });
}

// Doubles the token axis by linear interpolation with edge clamping:
// out[2i] = x[i], out[2i+1] = (x[i] + x[i+1]) / 2.
inline NodePtr upsample2x(const NodePtr& x) {
    require(x->value.rank() == 3, "upsample2x expects [B,L,C]");
    const std::size_t B = x->value.dim(0), L = x->value.dim(1), C = x->value.dim(2);
    Tensor out({B, 2 * L, C});
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t i = 0; i < L; ++i) {
            const std::size_t next = std::min(i + 1, L - 1);
            const double* xi = x->value.data() + (b * L + i) * C;
            const double* xn = x->value.data() + (b * L + next) * C;
            double* even = out.data() + (b * 2 * L + 2 * i) * C;
            double* odd = out.data() + (b * 2 * L + 2 * i + 1) * C;
            for (std::size_t c = 0; c < C; ++c) {
                even[c] = xi[c];
                odd[c] = 0.5 * (xi[c] + xn[c]);
            }
        }
    }
    NodePtr n = make_node(std::move(out));
    Node* self = n.get();
    Node* px = x.get();
    return detail::finish(n, {x}, [self, px, B, L, C]() {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t i = 0; i < L; ++i) {
                const std::size_t next = std::min(i + 1, L - 1);
                const double* even = self->grad.data() + (b * 2 * L + 2 * i) * C;
                const double* odd = self->grad.data() + (b * 2 * L + 2 * i + 1) * C;
                double* gi = px->grad.data() + (b * L + i) * C;
                double* gn = px->grad.data() + (b * L + next) * C;
                for (std::size_t c = 0; c < C; ++c) {
                    gi[c] += even[c] + 0.5 * odd[c];
                    gn[c] += 0.5 * odd[c];
                }
            }
        }
    });
}

// x: [B, H, W, C], w: [kh, kw, C, Cout]; pad chooses zero padding per side.
inline NodePtr conv2d(const NodePtr& x, const NodePtr& w, const NodePtr& b, std::size_t stride,
                      std::size_t pad) {
    require(x->value.rank() == 4 && w->value.rank() == 4, "conv2d: bad ranks");
    const std::size_t B = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2),
                      C = x->value.dim(3);
    const std::size_t kh = w->value.dim(0), kw = w->value.dim(1), Cout = w->value.dim(3);
    require(w->value.dim(2) == C, "conv2d: channel mismatch");
    const std::size_t Hout = (H + 2 * pad - kh) / stride + 1;
    const std::size_t Wout = (W + 2 * pad - kw) / stride + 1;
    const std::size_t patch = kh * kw * C;
    Tensor cols({B * Hout * Wout, patch});
    for (std::size_t bi = 0; bi < B; ++bi) {
        for (std::size_t oy = 0; oy < Hout; ++oy) {
            for (std::size_t ox = 0; ox < Wout; ++ox) {
                double* row = cols.data() + ((bi * Hout + oy) * Wout + ox) * patch;
                for (std::size_t ty = 0; ty < kh; ++ty) {
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(oy * stride + ty) -
                                              static_cast<std::ptrdiff_t>(pad);
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) continue;
                    for (std::size_t tx = 0; tx < kw; ++tx) {
                        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(ox * stride + tx) -
                                                  static_cast<std::ptrdiff_t>(pad);
                        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(W)) continue;
                        const double* cell = x->value.data() + ((bi * H + sy) * W + sx) * C;
                        for (std::size_t c = 0; c < C; ++c) {
                            row[(ty * kw + tx) * C + c] = cell[c];
                        }
                    }
                }
            }
        }
    }
    Tensor out({B, Hout, Wout, Cout});
    {
        ECMap cm(cols.data(), B * Hout * Wout, patch);
        ECMap wm(w->value.data(), patch, Cout);
        EMap om(out.data(), B * Hout * Wout, Cout);
        om.noalias() = cm * wm;
    }
    for (std::size_t r = 0; r < B * Hout * Wout; ++r) {
        for (std::size_t c = 0; c < Cout; ++c) out[r * Cout + c] += b->value[c];
    }
    NodePtr n = make_node(std::move(out));
    Node* self = n.get();
    Node* px = x.get();
    Node* pw = w.get();
    Node* pb = b.get();
    auto saved_cols = std::make_shared<Tensor>(std::move(cols));
    return detail::finish(n, {x, w, b}, [self, px, pw, pb, saved_cols, B, H, W, C, kh, kw, Cout,
                                         Hout, Wout, stride, pad, patch]() {
        ECMap gy(self->grad.data(), B * Hout * Wout, Cout);
        if (pw->requires_grad) {
            pw->ensure_grad();
            EMap gw(pw->grad.data(), patch, Cout);
            ECMap cm(saved_cols->data(), B * Hout * Wout, patch);
            gw.noalias() += cm.transpose() * gy;
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t r = 0; r < B * Hout * Wout; ++r) {
                for (std::size_t c = 0; c < Cout; ++c) pb->grad[c] += self->grad[r * Cout + c];
            }
        }
        if (px->requires_grad) {
            px->ensure_grad();
            Tensor gcols({B * Hout * Wout, patch});
            EMap gc(gcols.data(), B * Hout * Wout, patch);
            ECMap wm(pw->value.data(), patch, Cout);
            gc.noalias() = gy * wm.transpose();
            for (std::size_t bi = 0; bi < B; ++bi) {
                for (std::size_t oy = 0; oy < Hout; ++oy) {
                    for (std::size_t ox = 0; ox < Wout; ++ox) {
                        const double* row = gcols.data() + ((bi * Hout + oy) * Wout + ox) * patch;
                        for (std::size_t ty = 0; ty < kh; ++ty) {
                            const std::ptrdiff_t sy =
                                static_cast<std::ptrdiff_t>(oy * stride + ty) -
                                static_cast<std::ptrdiff_t>(pad);
                            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) continue;
                            for (std::size_t tx = 0; tx < kw; ++tx) {
                                const std::ptrdiff_t sx =
                                    static_cast<std::ptrdiff_t>(ox * stride + tx) -
                                    static_cast<std::ptrdiff_t>(pad);
                                if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(W)) continue;
                                double* cell = px->grad.data() + ((bi * H + sy) * W + sx) * C;
                                for (std::size_t c = 0; c < C; ++c) {
                                    cell[c] += row[(ty * kw + tx) * C + c];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
}

// ---- lookup, dropout, loss ----

inline NodePtr gather_rows(const NodePtr& table, const std::vector<int>& indices) {
    require(table->value.rank() == 2, "gather_rows expects a rank-2 table");
    const std::size_t rows = table->value.dim(0), c = table->value.dim(1);
    Tensor out({indices.size(), c});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        require(indices[i] >= 0 && static_cast<std::size_t>(indices[i]) < rows,
                "gather_rows: index out of range");
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = table->value[indices[i] * c + j];
    }
    NodePtr n = make_node(std::move(out));
    Node* self = n.get();
    Node* pt = table.get();
    auto idx = std::make_shared<std::vector<int>>(indices);
    return detail::finish(n, {table}, [self, pt, idx, c]() {
        if (!pt->requires_grad) return;
        pt->ensure_grad();
        for (std::size_t i = 0; i < idx->size(); ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                pt->grad[(*idx)[i] * c + j] += self->grad[i * c + j];
            }
        }
    });
}

// Inverted dropout; identity when not training.
inline NodePtr dropout(const NodePtr& x, double p, Rng& rng, bool training) {
    if (!training || p <= 0.0) return x;
    require(p < 1.0, "dropout probability must be < 1");
    Tensor mask(x->value.shape());
    const double keep_scale = 1.0 / (1.0 - p);
    for (std::size_t i = 0; i < mask.numel(); ++i) {
        mask[i] = rng.bernoulli(p) ? 0.0 : keep_scale;
    }
    Tensor out(x->value.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x->value[i] * mask[i];
    NodePtr n = make_node(std::move(out));
    Node* self = n.get();
    Node* px = x.get();
    auto saved = std::make_shared<Tensor>(std::move(mask));
    return detail::finish(n, {x}, [self, px, saved]() {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (std::size_t i = 0; i < self->grad.numel(); ++i) {
            px->grad[i] += self->grad[i] * (*saved)[i];
        }
    });
}

// mean over all elements of (pred - target)^2
inline NodePtr mse_loss(const NodePtr& pred, const Tensor& target) {
    require(pred->value.same_shape(target), "mse_loss: shape mismatch");
    const std::size_t n_elems = pred->value.numel();
    double acc = 0.0;
    for (std::size_t i = 0; i < n_elems; ++i) {
        const double d = pred->value[i] - target[i];
        acc += d * d;
    }
    Tensor out({std::size_t{1}});
    out[0] = acc / static_cast<double>(n_elems);
    NodePtr n = make_node(std::move(out));
    Node* self = n.get();
    Node* pp = pred.get();
    auto tgt = std::make_shared<Tensor>(target);
    return detail::finish(n, {pred}, [self, pp, tgt, n_elems]() {
        if (!pp->requires_grad) return;
        pp->ensure_grad();
        const double g = 2.0 * self->grad[0] / static_cast<double>(n_elems);
        for (std::size_t i = 0; i < n_elems; ++i) {
            pp->grad[i] += g * (pp->value[i] - (*tgt)[i]);
        }
    });
}

inline NodePtr mean_all(const NodePtr& x) {
    const std::size_t n_elems = x->value.numel();
    Tensor out({std::size_t{1}});
    double acc = 0.0;
    for (std::size_t i = 0; i < n_elems; ++i) acc += x->value[i];
    out[0] = acc / static_cast<double>(n_elems);
    NodePtr n = make_node(std::move(out));
    Node* self = n.get();
    Node* px = x.get();
    return detail::finish(n, {x}, [self, px, n_elems]() {
        if (!px->requires_grad) return;
        px->ensure_grad();
        const double g = self->grad[0] / static_cast<double>(n_elems);
        for (std::size_t i = 0; i < n_elems; ++i) px->grad[i] += g;
    });
}

}  // namespace uditqc::nn
