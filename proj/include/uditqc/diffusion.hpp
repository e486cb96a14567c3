#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "uditqc/model.hpp"

namespace uditqc {

struct NoiseSchedule {
    std::size_t T = 0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;

    double alpha_bar_prev(std::size_t t) const { return t == 0 ? 1.0 : alpha_bar[t - 1]; }

    void validate() const {
        require(T >= 2 && beta.size() == T && alpha_bar.size() == T, "schedule arrays mismatch");
        for (std::size_t t = 0; t < T; ++t) {
            require(beta[t] > 0.0 && beta[t] < 1.0, "beta out of range");
            require(alpha_bar[t] < alpha_bar_prev(t), "alpha_bar must strictly decrease");
        }
    }
};

// Squared-cosine beta schedule: f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2),
// s = 0.008; alpha_bar_t = f(t+1)/f(0), betas clipped at 0.999 and
// alpha_bar recomputed from the clipped betas.
inline NoiseSchedule cosine_schedule(std::size_t T) {
    require(T >= 2, "schedule needs at least two steps");
    const double s0 = 0.008;
    const double pi_half = 1.5707963267948966192313216916398;
    auto f = [&](double t) {
        const double arg = ((t / static_cast<double>(T) + s0) / (1.0 + s0)) * pi_half;
        const double c = std::cos(arg);
        return c * c;
    };
    NoiseSchedule sched;
    sched.T = T;
    sched.beta.resize(T);
    sched.alpha.resize(T);
    sched.alpha_bar.resize(T);
    double prev = 1.0;
    double running = 1.0;
    for (std::size_t t = 0; t < T; ++t) {
        const double raw = f(static_cast<double>(t + 1)) / f(0.0);
        sched.beta[t] = std::min(1.0 - raw / prev, 0.999);
        sched.alpha[t] = 1.0 - sched.beta[t];
        running *= sched.alpha[t];
        sched.alpha_bar[t] = running;
        prev = raw;
    }
    sched.validate();
    return sched;
}

// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps
inline Tensor q_sample(const Tensor& x0, std::size_t t, const Tensor& eps,
                       const NoiseSchedule& sched) {
    require(x0.same_shape(eps), "q_sample: eps shape mismatch");
    require(t < sched.T, "q_sample: timestep out of range");
    const double a = std::sqrt(sched.alpha_bar[t]);
    const double b = std::sqrt(1.0 - sched.alpha_bar[t]);
    Tensor out(x0.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a * x0[i] + b * eps[i];
    return out;
}

// ---- training ----

struct TrainingSet {
    std::vector<Tensor> x0;  // each [Q, T, d]
    std::vector<int> labels;
    std::vector<UnitaryMatrix> unitaries;  // empty, or one per record

    std::size_t size() const { return x0.size(); }
    bool has_unitaries() const { return !unitaries.empty(); }
};

inline TrainingSet encode_records(const std::vector<CircuitRecord>& records,
                                  const DenoiserModel& model) {
    const GateVocabulary vocab = model.spec().vocabulary();
    const UDiTConfig& cfg = model.spec().udit;
    TrainingSet set;
    set.x0.reserve(records.size());
    set.labels.reserve(records.size());
    for (const CircuitRecord& rec : records) {
        const TokenMatrix tokens = tokenize(rec.circuit, static_cast<int>(cfg.Q),
                                            static_cast<int>(cfg.T), vocab);
        const CircuitTensor tensor = embed(tokens, model.embedding_table());
        set.x0.push_back(Tensor({cfg.Q, cfg.T, cfg.d}, tensor.values));
        set.labels.push_back(rec.label);
        if (rec.unitary) set.unitaries.push_back(*rec.unitary);
    }
    if (!set.unitaries.empty()) {
        require(set.unitaries.size() == set.x0.size(),
                "either all records carry unitaries or none");
    }
    return set;
}

// One Eq.-7 minibatch loss: t ~ U[0, T), eps ~ N(0, I), MSE between eps
// and the model's prediction under label dropout.
inline nn::NodePtr training_loss(const DenoiserModel& model, const NoiseSchedule& sched,
                                 const TrainingSet& set, const std::vector<std::size_t>& batch,
                                 Rng& rng, bool training = true) {
    require(!batch.empty(), "empty batch");
    const UDiTConfig& cfg = model.spec().udit;
    const std::size_t B = batch.size();
    const std::size_t cell = cfg.Q * cfg.T * cfg.d;
    Tensor x_t({B, cfg.Q, cfg.T, cfg.d});
    Tensor eps({B, cfg.Q, cfg.T, cfg.d});
    std::vector<int> ts(B);
    std::vector<int> labels(B);
    std::vector<UnitaryMatrix> us;
    for (std::size_t i = 0; i < B; ++i) {
        const std::size_t r = batch[i];
        ts[i] = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(sched.T) - 1));
        labels[i] = set.labels[r];
        if (set.has_unitaries()) us.push_back(set.unitaries[r]);
        const double a = std::sqrt(sched.alpha_bar[ts[i]]);
        const double b = std::sqrt(1.0 - sched.alpha_bar[ts[i]]);
        for (std::size_t j = 0; j < cell; ++j) {
            const double e = rng.normal();
            eps[i * cell + j] = e;
            x_t[i * cell + j] = a * set.x0[r][j] + b * e;
        }
    }
    const nn::NodePtr pred =
        model.epsilon(x_t, ts, labels, set.has_unitaries() ? &us : nullptr, training, rng);
    const nn::NodePtr loss = nn::mse_loss(pred, eps);
    if (!std::isfinite(loss->value[0])) throw NumericError("non-finite training loss");
    return loss;
}

struct TrainConfig {
    int epochs = 300;
    std::size_t batch_size = 128;
    double base_lr = 3e-4;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double warmup_fraction = 0.1;
    double lr_div = 25.0;
    double divergence_threshold = 1e3;
    std::uint64_t seed = 0;
    int checkpoint_every = 0;  // epochs between checkpoint callbacks; 0 = final only
    std::string log_path;      // JSONL {step, epoch, lr, loss}; empty = no log

    void validate() const {
        require(epochs >= 1, "epochs must be >= 1");
        require(batch_size >= 1, "batch size must be >= 1");
        require(base_lr > 0.0, "learning rate must be positive");
    }
};

struct TrainResult {
    std::vector<double> epoch_mean_loss;
    std::int64_t steps = 0;
    bool diverged = false;
    double last_lr = 0.0;
};

// Shuffled minibatch epochs with AdamW under a one-cycle LR policy. The
// checkpoint callback runs every `checkpoint_every` epochs and after the
// final epoch; on divergence the loop stops without a final callback so
// the last good checkpoint survives.
inline TrainResult train(DenoiserModel& model, const NoiseSchedule& sched, const TrainingSet& set,
                         const TrainConfig& config,
                         const std::function<void(int epoch)>& checkpoint_cb = {}) {
    config.validate();
    require(set.size() > 0, "training set is empty");
    Rng rng(Rng::mix(config.seed, 0x7ea1));
    nn::AdamW opt;
    opt.beta1 = config.beta1;
    opt.beta2 = config.beta2;
    opt.weight_decay = config.weight_decay;
    const std::int64_t steps_per_epoch =
        static_cast<std::int64_t>((set.size() + config.batch_size - 1) / config.batch_size);
    const std::int64_t total_steps = steps_per_epoch * config.epochs;
    std::ofstream log;
    if (!config.log_path.empty()) {
        log.open(config.log_path);
        if (!log) throw IoError("cannot open training log: " + config.log_path);
    }
    TrainResult result;
    std::vector<std::size_t> order(set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::int64_t step = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            const std::size_t j =
                static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
            std::swap(order[i - 1], order[j]);
        }
        double epoch_loss = 0.0;
        std::int64_t epoch_batches = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
            const std::size_t end = std::min(order.size(), begin + config.batch_size);
            const std::vector<std::size_t> batch(order.begin() + begin, order.begin() + end);
            model.params().zero_grad();
            nn::NodePtr loss;
            try {
                loss = training_loss(model, sched, set, batch, rng, true);
            } catch (const NumericError&) {
                result.diverged = true;
                break;
            }
            const double loss_value = loss->value[0];
            if (!std::isfinite(loss_value) || loss_value > config.divergence_threshold) {
                result.diverged = true;
                break;
            }
            nn::backward(loss);
            const double lr = nn::one_cycle_lr(step, total_steps, config.base_lr,
                                               config.warmup_fraction, config.lr_div);
            opt.step(model.params(), lr);
            result.last_lr = lr;
            if (log.is_open()) {
                log << "{\"step\": " << step << ", \"epoch\": " << epoch << ", \"lr\": " << lr
                    << ", \"loss\": " << loss_value << "}\n";
            }
            epoch_loss += loss_value;
            ++epoch_batches;
            ++step;
        }
        if (result.diverged) break;
        result.epoch_mean_loss.push_back(epoch_loss / std::max<std::int64_t>(1, epoch_batches));
        const bool last = epoch == config.epochs - 1;
        if (checkpoint_cb &&
            (last || (config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0))) {
            checkpoint_cb(epoch);
        }
    }
    result.steps = step;
    return result;
}

// ---- guidance and sampling ----

// eps_hat = eps_null + s * (eps_cond - eps_null), applied to all channels
inline Tensor cfg_epsilon(const Tensor& eps_cond, const Tensor& eps_null, double s) {
    require(eps_cond.same_shape(eps_null), "cfg_epsilon: shape mismatch");
    Tensor out(eps_cond.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out[i] = eps_null[i] + s * (eps_cond[i] - eps_null[i]);
    }
    return out;
}

// Noise prediction as a plain function of (x_t, t); samplers are written
// against this so tests can swap in closed-form oracles.
using EpsilonFn = std::function<Tensor(const Tensor& x_t, int t)>;

inline EpsilonFn guided_epsilon_fn(const DenoiserModel& model, std::vector<int> labels,
                                   std::vector<UnitaryMatrix> unitaries, double cfg_scale,
                                   Rng& rng) {
    return [&model, labels = std::move(labels), unitaries = std::move(unitaries), cfg_scale,
            &rng](const Tensor& x_t, int t) {
        nn::NoGradGuard no_grad;
        const std::vector<int> ts(x_t.dim(0), t);
        const nn::NodePtr cond = model.epsilon(
            x_t, ts, labels, unitaries.empty() ? nullptr : &unitaries, false, rng);
        const nn::NodePtr null = model.epsilon_null(x_t, ts, rng);
        return cfg_epsilon(cond->value, null->value, cfg_scale);
    };
}

enum class SamplerKind { Ancestral, Strided };

struct SamplerConfig {
    std::size_t steps = 100;
    double cfg_scale = 7.5;
    SamplerKind kind = SamplerKind::Strided;
    double eta = 0.0;

    void validate(std::size_t schedule_T) const {
        require(steps >= 1 && steps <= schedule_T, "sampler steps must be in [1, T]");
        require(cfg_scale >= 1.0, "cfg_scale must be >= 1");
        require(eta >= 0.0, "eta must be >= 0");
    }
};

// Evenly spaced timesteps from T-1 down to 0, inclusive on both ends.
inline std::vector<std::size_t> strided_timesteps(std::size_t T, std::size_t steps) {
    std::vector<std::size_t> ts(steps);
    if (steps == 1) {
        ts[0] = T - 1;
        return ts;
    }
    for (std::size_t i = 0; i < steps; ++i) {
        const double frac =
            static_cast<double>(steps - 1 - i) / static_cast<double>(steps - 1);
        ts[i] = static_cast<std::size_t>(std::llround(frac * static_cast<double>(T - 1)));
    }
    return ts;
}

namespace detail {

inline void check_finite(const Tensor& x) {
    for (std::size_t i = 0; i < x.numel(); ++i) {
        if (!std::isfinite(x[i])) throw NumericError("non-finite state during sampling");
    }
}

}  // namespace detail

// Ancestral DDPM over all T steps with the fixed posterior variance
// beta_t * (1 - abar_{t-1}) / (1 - abar_t); the final step adds no noise.
// The strided variant walks an even timestep subset with the eta-update
// (eta = 0 deterministic).
inline Tensor sample(const EpsilonFn& eps_fn, std::size_t batch,
                     const std::vector<std::size_t>& cell_shape, const SamplerConfig& sampler,
                     const NoiseSchedule& sched, Rng& rng,
                     const std::function<void(Tensor& x, std::ptrdiff_t t_next, Rng& rng)>&
                         constrain = {}) {
    sampler.validate(sched.T);
    std::vector<std::size_t> shape = {batch};
    shape.insert(shape.end(), cell_shape.begin(), cell_shape.end());
    Tensor x = Tensor::randn(shape, rng);
    if (sampler.kind == SamplerKind::Ancestral) {
        require(sampler.steps == sched.T, "ancestral sampler runs all T steps");
        if (constrain) constrain(x, static_cast<std::ptrdiff_t>(sched.T) - 1, rng);
        for (std::size_t i = 0; i < sched.T; ++i) {
            const std::size_t t = sched.T - 1 - i;
            const Tensor eps_hat = eps_fn(x, static_cast<int>(t));
            const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha[t]);
            const double eps_coef = sched.beta[t] / std::sqrt(1.0 - sched.alpha_bar[t]);
            const double var =
                sched.beta[t] * (1.0 - sched.alpha_bar_prev(t)) / (1.0 - sched.alpha_bar[t]);
            const double sigma = t > 0 ? std::sqrt(var) : 0.0;
            for (std::size_t j = 0; j < x.numel(); ++j) {
                double v = inv_sqrt_alpha * (x[j] - eps_coef * eps_hat[j]);
                if (t > 0) v += sigma * rng.normal();
                x[j] = v;
            }
            detail::check_finite(x);
            if (constrain) constrain(x, static_cast<std::ptrdiff_t>(t) - 1, rng);
        }
        return x;
    }
    const std::vector<std::size_t> ts = strided_timesteps(sched.T, sampler.steps);
    if (constrain) constrain(x, static_cast<std::ptrdiff_t>(ts.front()), rng);
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const std::size_t t = ts[i];
        const bool final_step = i + 1 == ts.size();
        const Tensor eps_hat = eps_fn(x, static_cast<int>(t));
        const double abar = sched.alpha_bar[t];
        const double sqrt_abar = std::sqrt(abar);
        const double sqrt_one_minus = std::sqrt(1.0 - abar);
        if (final_step) {
            for (std::size_t j = 0; j < x.numel(); ++j) {
                x[j] = (x[j] - sqrt_one_minus * eps_hat[j]) / sqrt_abar;
            }
            detail::check_finite(x);
            if (constrain) constrain(x, -1, rng);
            break;
        }
        const std::size_t t_prev = ts[i + 1];
        const double abar_prev = sched.alpha_bar[t_prev];
        const double sigma = sampler.eta * std::sqrt((1.0 - abar_prev) / (1.0 - abar)) *
                             std::sqrt(1.0 - abar / abar_prev);
        const double dir = std::sqrt(std::max(0.0, 1.0 - abar_prev - sigma * sigma));
        for (std::size_t j = 0; j < x.numel(); ++j) {
            const double x0_hat = (x[j] - sqrt_one_minus * eps_hat[j]) / sqrt_abar;
            double v = std::sqrt(abar_prev) * x0_hat + dir * eps_hat[j];
            if (sampler.eta > 0.0) v += sigma * rng.normal();
            x[j] = v;
        }
        detail::check_finite(x);
        if (constrain) constrain(x, static_cast<std::ptrdiff_t>(t_prev), rng);
    }
    return x;
}

// ---- inpainting ----

// Cells with mask = true are pinned to known_tokens: during denoising they
// are replaced by q_sample(embed(known), t) and at the final step by the
// exact embedding.
struct InpaintSpec {
    TokenMatrix known_tokens;
    std::vector<std::uint8_t> mask;  // Q*T, row-major, 1 = enforced

    bool enforced(int q, int t) const {
        return mask[static_cast<std::size_t>(q) * known_tokens.T + t] != 0;
    }

    void validate(const GateVocabulary& vocab) const {
        require(mask.size() ==
                    static_cast<std::size_t>(known_tokens.Q) * known_tokens.T,
                "inpaint mask does not match the token canvas");
        for (int q = 0; q < known_tokens.Q; ++q) {
            for (int t = 0; t < known_tokens.T; ++t) {
                if (enforced(q, t)) {
                    require(std::abs(known_tokens.at(q, t)) <= vocab.padding_id(),
                            "enforced token outside vocabulary");
                }
            }
        }
    }
};

inline Tensor inpaint_sample(const EpsilonFn& eps_fn, const InpaintSpec& spec, std::size_t batch,
                             const SamplerConfig& sampler, const NoiseSchedule& sched,
                             const EmbeddingTable& table, const GateVocabulary& vocab, Rng& rng) {
    spec.validate(vocab);
    const CircuitTensor known = embed(spec.known_tokens, table);
    const std::size_t Q = known.Q, T = known.T, d = static_cast<std::size_t>(known.d);
    const std::size_t cell_count = Q * T;
    auto constrain = [&](Tensor& x, std::ptrdiff_t t_next, Rng& r) {
        const std::size_t B = x.dim(0);
        double a = 1.0, b = 0.0;
        if (t_next >= 0) {
            a = std::sqrt(sched.alpha_bar[static_cast<std::size_t>(t_next)]);
            b = std::sqrt(1.0 - sched.alpha_bar[static_cast<std::size_t>(t_next)]);
        }
        for (std::size_t bi = 0; bi < B; ++bi) {
            for (std::size_t c = 0; c < cell_count; ++c) {
                if (!spec.mask[c]) continue;
                double* cell = x.data() + (bi * cell_count + c) * d;
                const double* k = known.values.data() + c * d;
                for (std::size_t f = 0; f < d; ++f) {
                    cell[f] = t_next >= 0 ? a * k[f] + b * r.normal() : k[f];
                }
            }
        }
    };
    return sample(eps_fn, batch, {Q, T, d}, sampler, sched, rng, constrain);
}

}  // namespace uditqc
