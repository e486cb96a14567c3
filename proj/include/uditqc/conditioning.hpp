#pragma once

#include <optional>
#include <string>
#include <vector>

#include "uditqc/circuit.hpp"
#include "uditqc/nn.hpp"

namespace uditqc {

// Unitary-matrix encoder (U-enc). Real and imaginary parts enter as two
// channels; each scale runs one global self-attention block and then a
// 2x2 strided convolution until the grid reaches 2x2.
struct UEncConfig {
    int qubits = 3;
    std::vector<std::size_t> channels = {32, 64};
    std::size_t heads = 4;
    double mlp_ratio = 4.0;
    double dropout_p = 0.1;
    std::size_t cond_dim = 128;

    std::size_t side() const { return std::size_t{1} << qubits; }
    std::size_t num_scales() const {
        std::size_t scales = 0;
        for (std::size_t s = side(); s > 2; s /= 2) ++scales;
        return scales;
    }

    void validate() const {
        require(qubits >= 1, "U-enc needs at least one qubit");
        require(side() >= 2, "matrix side must be at least 2");
        require(!channels.empty(), "channel schedule is empty");
        for (std::size_t c : channels) {
            require(c % 4 == 0 && c % heads == 0,
                    "U-enc channels must divide by 4 and by the head count");
        }
    }
};

class UnitaryEncoder {
public:
    UnitaryEncoder() = default;

    UnitaryEncoder(nn::ParamStore& ps, const UEncConfig& config, Rng& rng) : cfg_(config) {
        cfg_.validate();
        const std::size_t ch0 = cfg_.channels[0];
        conv_in_w_ = ps.add("uenc.conv_in.w", Tensor::randn({3, 3, 2, ch0}, rng,
                                                            1.0 / std::sqrt(9.0 * 2.0)));
        conv_in_b_ = ps.add("uenc.conv_in.b", Tensor({ch0}));
        pos_ = nn::positional_embedding_2d(cfg_.side(), ch0);
        std::size_t ch = ch0;
        for (std::size_t s = 0; s < cfg_.num_scales(); ++s) {
            blocks_.emplace_back(ps, "uenc.scale" + std::to_string(s) + ".attn_block", ch,
                                 cfg_.heads, cfg_.mlp_ratio, rng);
            const std::size_t ch_next = cfg_.channels[std::min(s + 1, cfg_.channels.size() - 1)];
            down_w_.push_back(ps.add("uenc.scale" + std::to_string(s) + ".down.w",
                                     Tensor::randn({2, 2, ch, ch_next}, rng,
                                                   1.0 / std::sqrt(4.0 * static_cast<double>(ch)))));
            down_b_.push_back(
                ps.add("uenc.scale" + std::to_string(s) + ".down.b", Tensor({ch_next})));
            ch = ch_next;
        }
        conv_out_w_ = ps.add("uenc.conv_out.w",
                             Tensor::randn({3, 3, ch, ch}, rng,
                                           1.0 / std::sqrt(9.0 * static_cast<double>(ch))));
        conv_out_b_ = ps.add("uenc.conv_out.b", Tensor({ch}));
        const std::size_t flat = 2 * 2 * ch;
        out_proj_ = nn::Linear(ps, "uenc.out", flat, cfg_.cond_dim, rng);
    }

    const UEncConfig& config() const { return cfg_; }

    static Tensor unitaries_to_tensor(const std::vector<UnitaryMatrix>& us, std::size_t side) {
        Tensor x({us.size(), side, side, 2});
        for (std::size_t b = 0; b < us.size(); ++b) {
            require(us[b].rows() == static_cast<Eigen::Index>(side) &&
                        us[b].cols() == static_cast<Eigen::Index>(side),
                    "unitary side does not match the encoder configuration");
            for (std::size_t r = 0; r < side; ++r) {
                for (std::size_t c = 0; c < side; ++c) {
                    const auto v = us[b](static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
                    x[((b * side + r) * side + c) * 2] = v.real();
                    x[((b * side + r) * side + c) * 2 + 1] = v.imag();
                }
            }
        }
        return x;
    }

    nn::NodePtr forward(const std::vector<UnitaryMatrix>& us, bool training, Rng& rng) const {
        const std::size_t side = cfg_.side();
        const std::size_t B = us.size();
        nn::NodePtr x = nn::constant(unitaries_to_tensor(us, side));
        x = nn::conv2d(x, conv_in_w_, conv_in_b_, 1, 1);
        std::size_t grid = side;
        std::size_t ch = cfg_.channels[0];
        x = nn::reshape(x, {B, grid * grid, ch});
        x = nn::add_rows_const(x, pos_);
        for (std::size_t s = 0; s < blocks_.size(); ++s) {
            x = blocks_[s](x);
            x = nn::dropout(x, cfg_.dropout_p, rng, training);
            x = nn::reshape(x, {B, grid, grid, ch});
            x = nn::conv2d(x, down_w_[s], down_b_[s], 2, 0);
            grid /= 2;
            ch = cfg_.channels[std::min(s + 1, cfg_.channels.size() - 1)];
            x = nn::reshape(x, {B, grid * grid, ch});
        }
        x = nn::reshape(x, {B, grid, grid, ch});
        x = nn::conv2d(x, conv_out_w_, conv_out_b_, 1, 1);
        x = nn::reshape(x, {B, grid * grid * ch});
        x = out_proj_(x);
        return nn::dropout(x, cfg_.dropout_p, rng, training);
    }

private:
    UEncConfig cfg_;
    nn::NodePtr conv_in_w_, conv_in_b_, conv_out_w_, conv_out_b_;
    std::vector<nn::TransformerBlock> blocks_;
    std::vector<nn::NodePtr> down_w_, down_b_;
    nn::Linear out_proj_;
    Tensor pos_;
};

// Timestep + class-label conditioning, with the optional unitary branch.
// combined = t_embed + label_embed, or affine(concat(sum, unitary_embed))
// when a unitary condition participates.
class Conditioning {
public:
    Conditioning() = default;

    Conditioning(nn::ParamStore& ps, std::size_t cond_dim, int num_classes, double dropout_p,
                 std::optional<UEncConfig> uenc_config, Rng& rng)
        : cond_dim_(cond_dim), num_classes_(num_classes), dropout_p_(dropout_p) {
        require(num_classes >= 1, "need at least one class");
        require(dropout_p >= 0.0 && dropout_p <= 1.0, "label dropout must be in [0, 1]");
        time_fc1_ = nn::Linear(ps, "cond.time.fc1", kTimeFeatureDim, cond_dim, rng);
        time_fc2_ = nn::Linear(ps, "cond.time.fc2", cond_dim, cond_dim, rng);
        label_rows_ = ps.add("cond.label.table",
                             Tensor::randn({static_cast<std::size_t>(num_classes) + 1, cond_dim},
                                           rng, 0.02));
        if (uenc_config) {
            UEncConfig uc = *uenc_config;
            uc.cond_dim = cond_dim;
            uenc_.emplace(ps, uc, rng);
            unitary_combine_ = nn::Linear(ps, "cond.unitary_combine", 2 * cond_dim, cond_dim, rng);
        }
    }

    static constexpr std::size_t kTimeFeatureDim = 256;

    int num_classes() const { return num_classes_; }
    int null_label() const { return num_classes_; }
    double label_dropout() const { return dropout_p_; }
    bool has_unitary_branch() const { return uenc_.has_value(); }
    const UnitaryEncoder& unitary_encoder() const { return *uenc_; }

    nn::NodePtr embed_timestep(const std::vector<int>& ts, std::size_t schedule_T) const {
        for (int t : ts) {
            require(t >= 0 && static_cast<std::size_t>(t) < schedule_T,
                    "timestep out of range: " + std::to_string(t));
        }
        const nn::NodePtr features = nn::constant(nn::timestep_features(ts, kTimeFeatureDim));
        return time_fc2_(nn::silu(time_fc1_(features)));
    }

    // In training, each label flips to the learned null row with
    // probability dropout_p (classifier-free guidance).
    nn::NodePtr embed_label(const std::vector<int>& labels, bool training, Rng& rng) const {
        std::vector<int> effective(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i) {
            require(labels[i] >= 0 && labels[i] <= num_classes_,
                    "label out of range: " + std::to_string(labels[i]));
            effective[i] = (training && rng.bernoulli(dropout_p_)) ? null_label() : labels[i];
        }
        return nn::gather_rows(label_rows_, effective);
    }

    nn::NodePtr encode_unitary(const std::vector<UnitaryMatrix>& us, bool training,
                               Rng& rng) const {
        require(uenc_.has_value(), "model has no unitary branch");
        return uenc_->forward(us, training, rng);
    }

    nn::NodePtr combine(const nn::NodePtr& t_embed, const nn::NodePtr& label_embed,
                        const nn::NodePtr& unitary_embed = nullptr) const {
        require(t_embed->value.same_shape(label_embed->value), "condition dim mismatch");
        const nn::NodePtr base = nn::add(t_embed, label_embed);
        if (!unitary_embed) return base;
        require(uenc_.has_value(), "model has no unitary branch");
        require(unitary_embed->value.same_shape(base->value), "unitary embed dim mismatch");
        return unitary_combine_(nn::concat_last(base, unitary_embed));
    }

    // The unconditional branch for guidance: null label, zeroed unitary
    // embedding, same code path.
    nn::NodePtr null_unitary_embed(std::size_t batch) const {
        return nn::constant(Tensor::zeros({batch, cond_dim_}));
    }

private:
    std::size_t cond_dim_ = 0;
    int num_classes_ = 0;
    double dropout_p_ = 0.1;
    nn::Linear time_fc1_, time_fc2_;
    nn::NodePtr label_rows_;
    std::optional<UnitaryEncoder> uenc_;
    nn::Linear unitary_combine_;
};

}  // namespace uditqc
