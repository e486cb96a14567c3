#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "uditqc/autodiff.hpp"
#include "uditqc/common.hpp"
#include "uditqc/rng.hpp"
#include "uditqc/tensor.hpp"

namespace uditqc::nn {

// Learnable weights addressable by stable hierarchical names; iteration
// order is the name order, which keeps optimizer updates deterministic.
struct ParamStore {
    std::map<std::string, NodePtr> params;

    NodePtr add(const std::string& name, Tensor init) {
        require(params.find(name) == params.end(), "duplicate parameter name: " + name);
        NodePtr p = parameter(std::move(init));
        params[name] = p;
        return p;
    }

    NodePtr get(const std::string& name) const {
        auto it = params.find(name);
        require(it != params.end(), "unknown parameter: " + name);
        return it->second;
    }

    void zero_grad() {
        for (auto& [name, p] : params) {
            p->ensure_grad();
            std::fill(p->grad.vec().begin(), p->grad.vec().end(), 0.0);
        }
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& [name, p] : params) n += p->value.numel();
        return n;
    }
};

struct Linear {
    NodePtr w, b;

    Linear() = default;
    Linear(ParamStore& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
           bool zero_init = false) {
        Tensor wt({in, out});
        if (!zero_init) {
            const double s = 1.0 / std::sqrt(static_cast<double>(in));
            for (double& v : wt.vec()) v = s * rng.normal();
        }
        w = ps.add(name + ".w", std::move(wt));
        b = ps.add(name + ".b", Tensor({out}));
    }

    NodePtr operator()(const NodePtr& x) const { return add_bias(matmul(x, w), b); }
};

inline std::vector<std::size_t> split_heads_map(std::size_t B, std::size_t K, std::size_t H,
                                                std::size_t heads) {
    const std::size_t dh = H / heads;
    std::vector<std::size_t> map(B * K * H);
    std::size_t i = 0;
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t k = 0; k < K; ++k) {
                for (std::size_t d = 0; d < dh; ++d) {
                    map[i++] = (b * K + k) * H + h * dh + d;
                }
            }
        }
    }
    return map;
}

inline std::vector<std::size_t> merge_heads_map(std::size_t B, std::size_t K, std::size_t H,
                                                std::size_t heads) {
    const std::size_t dh = H / heads;
    std::vector<std::size_t> map(B * K * H);
    std::size_t i = 0;
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t k = 0; k < K; ++k) {
            for (std::size_t h = 0; h < heads; ++h) {
                for (std::size_t d = 0; d < dh; ++d) {
                    map[i++] = ((b * heads + h) * K + k) * dh + d;
                }
            }
        }
    }
    return map;
}

// Full (global) multi-head self-attention over [B, K, H].
struct SelfAttention {
    Linear qkv, proj;
    std::size_t heads = 1;

    SelfAttention() = default;
    SelfAttention(ParamStore& ps, const std::string& name, std::size_t hidden, std::size_t n_heads,
                  Rng& rng)
        : qkv(ps, name + ".qkv", hidden, 3 * hidden, rng),
          proj(ps, name + ".proj", hidden, hidden, rng),
          heads(n_heads) {
        require(hidden % n_heads == 0, "hidden must be divisible by head count");
    }

    NodePtr operator()(const NodePtr& x) const {
        const std::size_t B = x->value.dim(0), K = x->value.dim(1), H = x->value.dim(2);
        const std::size_t dh = H / heads;
        const NodePtr fused = qkv(x);  // [B, K, 3H]
        const NodePtr q = slice_last(fused, 0, H);
        const NodePtr k = slice_last(fused, H, H);
        const NodePtr v = slice_last(fused, 2 * H, H);
        const auto split = split_heads_map(B, K, H, heads);
        const std::vector<std::size_t> bh_shape = {B * heads, K, dh};
        const NodePtr qh = reindex(q, split, bh_shape);
        const NodePtr kh = reindex(k, split, bh_shape);
        const NodePtr vh = reindex(v, split, bh_shape);
        NodePtr scores = bmm(qh, transpose_last(kh));
        scores = scale(scores, 1.0 / std::sqrt(static_cast<double>(dh)));
        const NodePtr attn = softmax_last(scores);
        const NodePtr ctx = bmm(attn, vh);  // [B*heads, K, dh]
        const NodePtr merged = reindex(ctx, merge_heads_map(B, K, H, heads), {B, K, H});
        return proj(merged);
    }
};

struct Mlp {
    Linear fc1, fc2;

    Mlp() = default;
    Mlp(ParamStore& ps, const std::string& name, std::size_t hidden, std::size_t inner, Rng& rng)
        : fc1(ps, name + ".fc1", hidden, inner, rng), fc2(ps, name + ".fc2", inner, hidden, rng) {}

    NodePtr operator()(const NodePtr& x) const { return fc2(gelu(fc1(x))); }
};

// adaLN-Zero DiT block: the six modulation vectors are regressed from the
// condition through a zero-initialized affine map, so a fresh block is the
// identity.
struct DitBlock {
    SelfAttention attn;
    Mlp mlp;
    Linear modulation;
    std::size_t hidden = 0;

    DitBlock() = default;
    DitBlock(ParamStore& ps, const std::string& name, std::size_t hidden_dim, std::size_t heads,
             std::size_t cond_dim, double mlp_ratio, Rng& rng)
        : attn(ps, name + ".attn", hidden_dim, heads, rng),
          mlp(ps, name + ".mlp", hidden_dim,
              static_cast<std::size_t>(mlp_ratio * static_cast<double>(hidden_dim)), rng),
          modulation(ps, name + ".mod", cond_dim, 6 * hidden_dim, rng, /*zero_init=*/true),
          hidden(hidden_dim) {}

    NodePtr operator()(const NodePtr& x, const NodePtr& cond) const {
        const std::size_t H = hidden;
        const NodePtr mod = modulation(silu(cond));  // [B, 6H]
        const NodePtr gamma1 = slice_last(mod, 0, H);
        const NodePtr beta1 = slice_last(mod, H, H);
        const NodePtr alpha1 = slice_last(mod, 2 * H, H);
        const NodePtr gamma2 = slice_last(mod, 3 * H, H);
        const NodePtr beta2 = slice_last(mod, 4 * H, H);
        const NodePtr alpha2 = slice_last(mod, 5 * H, H);
        NodePtr y = add(x, bcast_mul(attn(modulate(layer_norm(x), gamma1, beta1)), alpha1));
        return add(y, bcast_mul(mlp(modulate(layer_norm(y), gamma2, beta2)), alpha2));
    }
};

// Plain pre-LN transformer encoder block (used by the unitary encoder).
struct TransformerBlock {
    SelfAttention attn;
    Mlp mlp;

    TransformerBlock() = default;
    TransformerBlock(ParamStore& ps, const std::string& name, std::size_t hidden,
                     std::size_t heads, double mlp_ratio, Rng& rng)
        : attn(ps, name + ".attn", hidden, heads, rng),
          mlp(ps, name + ".mlp", hidden,
              static_cast<std::size_t>(mlp_ratio * static_cast<double>(hidden)), rng) {}

    NodePtr operator()(const NodePtr& x) const {
        NodePtr y = add(x, attn(layer_norm(x)));
        return add(y, mlp(layer_norm(y)));
    }
};

// ---- deterministic sinusoidal tables ----

// Standard frequency ladder: channel pair i uses 10000^(-2i/dim).
inline void fill_sincos(double* out, double position, std::size_t dim) {
    const std::size_t half = dim / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * (2.0 * static_cast<double>(i)) /
                                     static_cast<double>(dim));
        out[2 * i] = std::sin(position * freq);
        out[2 * i + 1] = std::cos(position * freq);
    }
}

// Token grid table: token k sits at (qubit k % Q, timestep k / Q); the
// first half of the channels encodes the qubit index, the second half the
// timestep.
inline Tensor positional_embedding(std::size_t Q, std::size_t T, std::size_t hidden) {
    require(hidden % 4 == 0, "positional embedding needs hidden divisible by 4");
    const std::size_t K = Q * T;
    Tensor table({K, hidden});
    const std::size_t half = hidden / 2;
    for (std::size_t k = 0; k < K; ++k) {
        const std::size_t q = k % Q;
        const std::size_t t = k / Q;
        fill_sincos(table.data() + k * hidden, static_cast<double>(q), half);
        fill_sincos(table.data() + k * hidden + half, static_cast<double>(t), half);
    }
    return table;
}

// 2-D grid table for S x S feature maps, flattened row-major.
inline Tensor positional_embedding_2d(std::size_t S, std::size_t channels) {
    require(channels % 4 == 0, "2-D positional embedding needs channels divisible by 4");
    Tensor table({S * S, channels});
    const std::size_t half = channels / 2;
    for (std::size_t r = 0; r < S; ++r) {
        for (std::size_t c = 0; c < S; ++c) {
            double* cell = table.data() + (r * S + c) * channels;
            fill_sincos(cell, static_cast<double>(r), half);
            fill_sincos(cell + half, static_cast<double>(c), half);
        }
    }
    return table;
}

// 256-dim sinusoidal timestep features (cos half then sin half).
inline Tensor timestep_features(const std::vector<int>& timesteps, std::size_t dim = 256) {
    require(dim % 2 == 0, "timestep feature dim must be even");
    const std::size_t half = dim / 2;
    Tensor out({timesteps.size(), dim});
    for (std::size_t b = 0; b < timesteps.size(); ++b) {
        for (std::size_t i = 0; i < half; ++i) {
            const double freq =
                std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
            const double arg = static_cast<double>(timesteps[b]) * freq;
            out[b * dim + i] = std::cos(arg);
            out[b * dim + half + i] = std::sin(arg);
        }
    }
    return out;
}

// ---- optimizer ----

// AdamW with decoupled weight decay.
struct AdamW {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    std::int64_t step_count = 0;
    std::map<std::string, Tensor> m, v;

    void step(ParamStore& ps, double lr) {
        ++step_count;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
        for (auto& [name, p] : ps.params) {
            p->ensure_grad();
            Tensor& mi = m.try_emplace(name, Tensor::zeros(p->value.shape())).first->second;
            Tensor& vi = v.try_emplace(name, Tensor::zeros(p->value.shape())).first->second;
            for (std::size_t i = 0; i < p->value.numel(); ++i) {
                const double g = p->grad[i];
                mi[i] = beta1 * mi[i] + (1.0 - beta1) * g;
                vi[i] = beta2 * vi[i] + (1.0 - beta2) * g * g;
                const double mhat = mi[i] / bc1;
                const double vhat = vi[i] / bc2;
                p->value[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p->value[i]);
            }
        }
    }
};

// One-cycle policy: linear warmup from peak/div to peak over the warmup
// fraction, then cosine annealing down to peak/div.
inline double one_cycle_lr(std::int64_t step, std::int64_t total_steps, double peak,
                           double warmup_fraction = 0.1, double div = 25.0) {
    require(total_steps >= 1, "one_cycle_lr needs at least one step");
    const double floor_lr = peak / div;
    const double warmup_steps =
        std::max(1.0, warmup_fraction * static_cast<double>(total_steps));
    const double s = static_cast<double>(step);
    if (s < warmup_steps) {
        return floor_lr + (peak - floor_lr) * (s / warmup_steps);
    }
    const double progress =
        (s - warmup_steps) / std::max(1.0, static_cast<double>(total_steps) - warmup_steps);
    const double pi = 3.14159265358979323846;
    return floor_lr + 0.5 * (peak - floor_lr) * (1.0 + std::cos(pi * std::min(1.0, progress)));
}

}  // namespace uditqc::nn
