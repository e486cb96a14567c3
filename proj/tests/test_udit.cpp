#include <catch2/catch_amalgamated.hpp>

#include "gradcheck.hpp"
#include "uditqc/udit.hpp"

using namespace uditqc;
using namespace uditqc::nn;

namespace {

UDiTConfig tiny_config() {
    UDiTConfig cfg;
    cfg.Q = 2;
    cfg.T = 4;
    cfg.d = 4;
    cfg.hidden = 16;
    cfg.cond_dim = 16;
    cfg.depths = {1, 1, 1, 1, 1};
    cfg.heads = {2, 2, 2, 2, 2};
    return cfg;
}

void perturb_params(ParamStore& ps, std::uint64_t seed, double scale = 0.05) {
    Rng rng(seed);
    for (auto& [name, p] : ps.params) {
        for (double& v : p->value.vec()) v += scale * rng.normal();
    }
}

}  // namespace

TEST_CASE("config validation", "[udit]") {
    UDiTConfig cfg = tiny_config();
    CHECK_NOTHROW(cfg.validate());
    cfg.T = 3;  // K = 6 not divisible by 4
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = tiny_config();
    cfg.heads = {3, 2, 2, 2, 2};  // 16 % 3 != 0
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = tiny_config();
    cfg.asymmetric = false;
    cfg.depths = {1, 2, 1, 1, 1};  // not mirrored
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg.depths = {1, 2, 1, 2, 1};
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("patchify flattens qubit-fastest with positional embedding", "[udit]") {
    ParamStore ps;
    Rng rng(1);
    UDiTConfig cfg;
    cfg.Q = 3;
    cfg.T = 16;
    cfg.d = 4;
    cfg.hidden = 16;
    cfg.cond_dim = 16;
    cfg.depths = {1, 1, 1, 1, 1};
    cfg.heads = {2, 2, 2, 2, 2};
    UDiT model(ps, cfg, rng);
    CHECK(cfg.K() == 48);

    // zero input with the zero-initialized projection bias: tokens equal
    // the positional table exactly
    const NodePtr zero = constant(Tensor::zeros({2, 3, 16, 4}));
    const NodePtr tokens = model.patchify(zero);
    REQUIRE(tokens->value.shape() == std::vector<std::size_t>{2, 48, 16});
    const Tensor& pos = model.positional_table();
    for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t i = 0; i < 48 * 16; ++i) {
            CHECK(tokens->value[b * 48 * 16 + i] == pos[i]);
        }
    }
}

TEST_CASE("patchify and unpatchify maps are inverse", "[udit]") {
    const std::size_t B = 2, Q = 3, T = 4, d = 2;
    const auto fwd = uditqc::detail::patchify_map(B, Q, T, d);
    const auto bwd = uditqc::detail::unpatchify_map(B, Q, T, d);
    for (std::size_t i = 0; i < fwd.size(); ++i) {
        CHECK(fwd[bwd[i]] == i);
        CHECK(bwd[fwd[i]] == i);
    }
    // token t*Q + q corresponds to cell (q, t)
    const std::size_t q = 1, t = 3, f = 0;
    const std::size_t token_index = (0 * Q * T + t * Q + q) * d + f;
    CHECK(fwd[token_index] == ((0 * Q + q) * T + t) * d + f);
}

TEST_CASE("fresh model outputs exactly zero", "[udit]") {
    ParamStore ps;
    Rng rng(2);
    UDiT model(ps, tiny_config(), rng);
    Rng data_rng(3);
    const NodePtr x = constant(Tensor::randn({2, 2, 4, 4}, data_rng));
    const NodePtr cond = constant(Tensor::randn({2, 16}, data_rng));
    const NodePtr y = model.forward(x, cond);
    REQUIRE(y->value.shape() == x->value.shape());
    for (std::size_t i = 0; i < y->value.numel(); ++i) CHECK(y->value[i] == 0.0);
}

TEST_CASE("forward preserves shape on the reference canvas", "[udit]") {
    ParamStore ps;
    Rng rng(4);
    UDiTConfig cfg;
    cfg.Q = 3;
    cfg.T = 16;
    cfg.d = 4;
    cfg.hidden = 24;
    cfg.cond_dim = 24;
    cfg.depths = {1, 1, 2, 1, 1};
    cfg.heads = {2, 2, 2, 2, 2};
    UDiT model(ps, cfg, rng);
    perturb_params(ps, 5);
    Rng data_rng(6);
    const NodePtr x = constant(Tensor::randn({2, 3, 16, 4}, data_rng));
    const NodePtr cond = constant(Tensor::randn({2, 24}, data_rng));
    CHECK(model.forward(x, cond)->value.shape() == std::vector<std::size_t>{2, 3, 16, 4});
}

TEST_CASE("sequence lengths halve and restore across stages", "[udit]") {
    ParamStore ps;
    Rng rng(7);
    UDiTConfig cfg;
    cfg.Q = 3;
    cfg.T = 16;
    cfg.d = 4;
    cfg.hidden = 16;
    cfg.cond_dim = 16;
    cfg.depths = {1, 1, 1, 1, 1};
    cfg.heads = {2, 2, 2, 2, 2};
    UDiT model(ps, cfg, rng);
    Rng data_rng(8);
    const NodePtr tokens = constant(Tensor::randn({1, 48, 16}, data_rng));
    const NodePtr z1 = model.downsample(0, tokens);
    CHECK(z1->value.dim(1) == 24);
    const NodePtr z2 = model.downsample(1, z1);
    CHECK(z2->value.dim(1) == 12);
    const NodePtr u2 = model.upsample(1, z2);
    CHECK(u2->value.dim(1) == 24);
    const NodePtr u1 = model.upsample(0, u2);
    CHECK(u1->value.dim(1) == 48);
    CHECK_THROWS_AS(model.downsample(0, constant(Tensor::zeros({1, 7, 16}))), ValidationError);
}

TEST_CASE("residual staging reduces to f_u(h) with zero resampling kernels", "[udit]") {
    ParamStore ps;
    Rng rng(9);
    UDiT model(ps, tiny_config(), rng);
    // break only the encoder and decoder stages; middle stages stay identity
    Rng noise(10);
    for (auto& [name, p] : ps.params) {
        if (name.find("stage0") != std::string::npos ||
            name.find("stage4") != std::string::npos) {
            for (double& v : p->value.vec()) v += 0.1 * noise.normal();
        }
    }
    for (int i = 0; i < 2; ++i) {
        std::fill(model.down_kernel(i)->value.vec().begin(),
                  model.down_kernel(i)->value.vec().end(), 0.0);
        std::fill(model.up_kernel(i)->value.vec().begin(), model.up_kernel(i)->value.vec().end(),
                  0.0);
    }
    Rng data_rng(11);
    const NodePtr tokens = constant(Tensor::randn({2, 8, 16}, data_rng));
    const NodePtr cond = constant(Tensor::randn({2, 16}, data_rng));
    const NodePtr staged = model.forward_tokens(tokens, cond);
    const NodePtr direct = model.run_stage(4, model.run_stage(0, tokens, cond), cond);
    REQUIRE(staged->value.same_shape(direct->value));
    for (std::size_t i = 0; i < staged->value.numel(); ++i) {
        CHECK(std::abs(staged->value[i] - direct->value[i]) < 1e-14);
    }
}

TEST_CASE("without residual connections forward is the plain stage chain", "[udit]") {
    UDiTConfig cfg = tiny_config();
    cfg.residual_connections = false;
    ParamStore ps;
    Rng rng(12);
    UDiT model(ps, cfg, rng);
    perturb_params(ps, 13);
    Rng data_rng(14);
    const NodePtr tokens = constant(Tensor::randn({1, 8, 16}, data_rng));
    const NodePtr cond = constant(Tensor::randn({1, 16}, data_rng));
    const NodePtr got = model.forward_tokens(tokens, cond);
    NodePtr h = model.run_stage(0, tokens, cond);
    h = model.run_stage(1, model.downsample(0, h), cond);
    h = model.run_stage(2, model.downsample(1, h), cond);
    h = model.run_stage(3, model.upsample(1, h), cond);
    h = model.run_stage(4, model.upsample(0, h), cond);
    REQUIRE(got->value.same_shape(h->value));
    for (std::size_t i = 0; i < got->value.numel(); ++i) {
        CHECK(got->value[i] == h->value[i]);
    }
}

TEST_CASE("forward is deterministic", "[udit]") {
    ParamStore ps;
    Rng rng(15);
    UDiT model(ps, tiny_config(), rng);
    perturb_params(ps, 16);
    Rng data_rng(17);
    const Tensor x_data = Tensor::randn({2, 2, 4, 4}, data_rng);
    const Tensor c_data = Tensor::randn({2, 16}, data_rng);
    const NodePtr a = model.forward(constant(x_data), constant(c_data));
    const NodePtr b = model.forward(constant(x_data), constant(c_data));
    for (std::size_t i = 0; i < a->value.numel(); ++i) CHECK(a->value[i] == b->value[i]);
}

TEST_CASE("tiny udit gradient check over sampled parameters", "[udit]") {
    ParamStore ps;
    Rng rng(18);
    UDiT model(ps, tiny_config(), rng);
    perturb_params(ps, 19);
    Rng data_rng(20);
    const Tensor x_data = Tensor::randn({1, 2, 4, 4}, data_rng);
    const Tensor c_data = Tensor::randn({1, 16}, data_rng);
    const Tensor target = Tensor::randn({1, 2, 4, 4}, data_rng);

    auto loss = [&]() {
        return mse_loss(model.forward(constant(x_data), constant(c_data)), target);
    };
    ps.zero_grad();
    NodePtr l = loss();
    backward(l);

    // probe 60 random parameter entries with central differences
    Rng probe(21);
    std::vector<std::string> names;
    for (const auto& [name, p] : ps.params) names.push_back(name);
    const double h = 1e-5;
    for (int trial = 0; trial < 60; ++trial) {
        const auto& name = names[probe.uniform_int(0, static_cast<std::int64_t>(names.size()) - 1)];
        NodePtr p = ps.get(name);
        const std::size_t i =
            static_cast<std::size_t>(probe.uniform_int(0, static_cast<std::int64_t>(p->value.numel()) - 1));
        const double saved = p->value[i];
        p->value[i] = saved + h;
        const double up = loss()->value[0];
        p->value[i] = saved - h;
        const double down = loss()->value[0];
        p->value[i] = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double analytic = p->grad[i];
        INFO(name << "[" << i << "] analytic=" << analytic << " numeric=" << numeric);
        CHECK(gradcheck::relative_error(analytic, numeric) < 1e-3);
    }
}
