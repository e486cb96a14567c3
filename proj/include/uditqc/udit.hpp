#pragma once

#include <array>
#include <string>
#include <vector>

#include "uditqc/nn.hpp"

namespace uditqc {

// Five stages: encoder at K and K/2, middle at K/4, decoder at K/2 and K.
// Hidden width stays constant across stages; stages differ in block count
// and head count.
struct UDiTConfig {
    std::size_t Q = 3;
    std::size_t T = 16;
    std::size_t d = 4;
    std::size_t hidden = 128;
    std::size_t cond_dim = 128;
    std::array<std::size_t, 5> depths = {2, 2, 4, 3, 3};
    std::array<std::size_t, 5> heads = {6, 6, 3, 6, 6};
    double mlp_ratio = 4.0;
    bool residual_connections = true;
    bool asymmetric = true;

    std::size_t K() const { return Q * T; }

    void validate() const {
        require(Q >= 1 && T >= 1 && d >= 1, "canvas dims must be positive");
        require(K() % 4 == 0, "K = Q*T must be divisible by 4 (two halvings)");
        require(hidden % 4 == 0, "hidden must be divisible by 4");
        std::size_t total_depth = 0;
        for (std::size_t i = 0; i < 5; ++i) {
            require(depths[i] >= 1, "every stage needs at least one block");
            require(hidden % heads[i] == 0, "hidden must be divisible by each stage's heads");
            total_depth += depths[i];
        }
        require(total_depth >= 5, "depths must sum to at least 5");
        if (!asymmetric) {
            require(depths[0] == depths[4] && depths[1] == depths[3],
                    "symmetric variant requires mirrored stage depths");
        }
    }
};

namespace detail {

inline std::vector<std::size_t> patchify_map(std::size_t B, std::size_t Q, std::size_t T,
                                             std::size_t d) {
    // token k = t*Q + q, so one timestep's qubits stay contiguous
    std::vector<std::size_t> map(B * Q * T * d);
    std::size_t i = 0;
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t q = 0; q < Q; ++q) {
                for (std::size_t f = 0; f < d; ++f) {
                    map[i++] = ((b * Q + q) * T + t) * d + f;
                }
            }
        }
    }
    return map;
}

inline std::vector<std::size_t> unpatchify_map(std::size_t B, std::size_t Q, std::size_t T,
                                               std::size_t d) {
    const std::size_t K = Q * T;
    std::vector<std::size_t> map(B * K * d);
    std::size_t i = 0;
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t q = 0; q < Q; ++q) {
            for (std::size_t t = 0; t < T; ++t) {
                for (std::size_t f = 0; f < d; ++f) {
                    map[i++] = (b * K + t * Q + q) * d + f;
                }
            }
        }
    }
    return map;
}

}  // namespace detail

// The UDiT denoiser epsilon_theta(x_t, t, c). Residual staging follows
//   f(x) = f_u(U(f_m(D(h)) - D(h)) + h),  h = f_d(x)
// applied twice: stages 0/4 wrap stages 1/3, which wrap the middle stage.
class UDiT {
public:
    UDiT() = default;

    UDiT(nn::ParamStore& ps, const UDiTConfig& config, Rng& rng) : cfg_(config) {
        cfg_.validate();
        patch_proj_ = nn::Linear(ps, "udit.patchify", cfg_.d, cfg_.hidden, rng);
        for (std::size_t s = 0; s < 5; ++s) {
            for (std::size_t i = 0; i < cfg_.depths[s]; ++i) {
                stages_[s].emplace_back(ps,
                                        "udit.stage" + std::to_string(s) + ".block" +
                                            std::to_string(i),
                                        cfg_.hidden, cfg_.heads[s], cfg_.cond_dim, cfg_.mlp_ratio,
                                        rng);
            }
        }
        // resampling convs carry zero biases so zero input stays zero at init
        const double conv_std = 1.0 / std::sqrt(3.0 * static_cast<double>(cfg_.hidden));
        for (int i = 0; i < 2; ++i) {
            down_w_[i] = ps.add("udit.down" + std::to_string(i) + ".w",
                                Tensor::randn({3, cfg_.hidden, cfg_.hidden}, rng, conv_std));
            down_b_[i] = ps.add("udit.down" + std::to_string(i) + ".b", Tensor({cfg_.hidden}));
            up_w_[i] = ps.add("udit.up" + std::to_string(i) + ".w",
                              Tensor::randn({3, cfg_.hidden, cfg_.hidden}, rng, conv_std));
            up_b_[i] = ps.add("udit.up" + std::to_string(i) + ".b", Tensor({cfg_.hidden}));
        }
        final_mod_ = nn::Linear(ps, "udit.final.mod", cfg_.cond_dim, 2 * cfg_.hidden, rng,
                                /*zero_init=*/true);
        final_proj_ = nn::Linear(ps, "udit.final.proj", cfg_.hidden, cfg_.d, rng,
                                 /*zero_init=*/true);
        pos_ = nn::positional_embedding(cfg_.Q, cfg_.T, cfg_.hidden);
    }

    const UDiTConfig& config() const { return cfg_; }
    const Tensor& positional_table() const { return pos_; }

    // x: [B, Q, T, d] -> tokens [B, K, hidden] with positional embedding
    nn::NodePtr patchify(const nn::NodePtr& x) const {
        const std::size_t B = x->value.dim(0);
        require(x->value.rank() == 4 && x->value.dim(1) == cfg_.Q && x->value.dim(2) == cfg_.T &&
                    x->value.dim(3) == cfg_.d,
                "patchify: input shape mismatch, got " + x->value.shape_string());
        nn::NodePtr seq = nn::reindex(x, detail::patchify_map(B, cfg_.Q, cfg_.T, cfg_.d),
                                      {B, cfg_.K(), cfg_.d});
        return nn::add_rows_const(patch_proj_(seq), pos_);
    }

    nn::NodePtr run_stage(std::size_t s, nn::NodePtr x, const nn::NodePtr& cond) const {
        for (const nn::DitBlock& block : stages_[s]) x = block(x, cond);
        return x;
    }

    nn::NodePtr downsample(std::size_t i, const nn::NodePtr& x) const {
        return nn::conv1d(x, down_w_[i], down_b_[i], 2);
    }

    nn::NodePtr upsample(std::size_t i, const nn::NodePtr& x) const {
        return nn::conv1d(nn::upsample2x(x), up_w_[i], up_b_[i], 1);
    }

    // token pipeline between patchify and the final decoder layer
    nn::NodePtr forward_tokens(const nn::NodePtr& tokens, const nn::NodePtr& cond) const {
        nn::NodePtr out_tokens;
        if (cfg_.residual_connections) {
            const nn::NodePtr h1 = run_stage(0, tokens, cond);
            const nn::NodePtr z1 = downsample(0, h1);
            const nn::NodePtr h2 = run_stage(1, z1, cond);
            const nn::NodePtr z2 = downsample(1, h2);
            const nn::NodePtr mid = run_stage(2, z2, cond);
            const nn::NodePtr dec2 =
                run_stage(3, nn::add(upsample(1, nn::sub(mid, z2)), h2), cond);
            out_tokens = run_stage(4, nn::add(upsample(0, nn::sub(dec2, z1)), h1), cond);
        } else {
            nn::NodePtr h = run_stage(0, tokens, cond);
            h = run_stage(1, downsample(0, h), cond);
            h = run_stage(2, downsample(1, h), cond);
            h = run_stage(3, upsample(1, h), cond);
            out_tokens = run_stage(4, upsample(0, h), cond);
        }
        return out_tokens;
    }

    nn::NodePtr forward(const nn::NodePtr& x, const nn::NodePtr& cond) const {
        require(cond->value.rank() == 2 && cond->value.dim(1) == cfg_.cond_dim,
                "forward: condition must be [B, cond_dim]");
        require(cond->value.dim(0) == x->value.dim(0), "forward: batch mismatch");
        const std::size_t B = x->value.dim(0);
        const nn::NodePtr out_tokens = forward_tokens(patchify(x), cond);
        // final decoder: LN + regressed shift/scale + zero-initialized affine
        const nn::NodePtr mod = final_mod_(nn::silu(cond));
        const nn::NodePtr shift = nn::slice_last(mod, 0, cfg_.hidden);
        const nn::NodePtr scl = nn::slice_last(mod, cfg_.hidden, cfg_.hidden);
        const nn::NodePtr decoded =
            final_proj_(nn::modulate(nn::layer_norm(out_tokens), scl, shift));
        return nn::reindex(decoded, detail::unpatchify_map(B, cfg_.Q, cfg_.T, cfg_.d),
                           {B, cfg_.Q, cfg_.T, cfg_.d});
    }

    // exposed for the staging tests
    nn::NodePtr down_kernel(std::size_t i) const { return down_w_[i]; }
    nn::NodePtr up_kernel(std::size_t i) const { return up_w_[i]; }
    std::vector<nn::DitBlock>& stage_blocks(std::size_t s) { return stages_[s]; }

private:
    UDiTConfig cfg_;
    nn::Linear patch_proj_;
    std::array<std::vector<nn::DitBlock>, 5> stages_;
    std::array<nn::NodePtr, 2> down_w_, down_b_, up_w_, up_b_;
    nn::Linear final_mod_, final_proj_;
    Tensor pos_;
};

}  // namespace uditqc
