#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "uditqc/codec.hpp"

using namespace uditqc;

namespace {

TokenMatrix random_valid_tokens(Rng& rng, const GateVocabulary& vocab, int max_q, int max_gates,
                                Circuit* out_circuit = nullptr) {
    const int q = static_cast<int>(rng.uniform_int(3, max_q));
    std::vector<GateKind> pool;
    for (GateKind k : vocab.kinds) {
        if (gate_arity(k) <= q) pool.push_back(k);
    }
    const Circuit c = oracles::random_circuit(rng, q, 1, max_gates, pool);
    if (out_circuit) *out_circuit = c;
    return tokenize(c, max_q, max_gates, vocab);
}

}  // namespace

TEST_CASE("vocabulary ids are dense and stable", "[codec]") {
    const GateVocabulary vocab = compile_vocabulary();
    CHECK(vocab.gate_count() == 6);
    CHECK(vocab.feature_dim() == 8);
    CHECK(vocab.padding_id() == 7);
    CHECK(vocab.token_id(GateKind::H) == 1);
    CHECK(vocab.token_id(GateKind::SWAP) == 6);
    CHECK(vocab.kind_of(2) == GateKind::CX);
    CHECK_THROWS_AS(vocab.kind_of(0), ValidationError);

    const GateVocabulary ent = entanglement_vocabulary();
    CHECK(ent.gate_count() == 2);
    CHECK(ent.feature_dim() == 4);
}

TEST_CASE("embedding table is orthonormal and deterministic", "[codec]") {
    const GateVocabulary vocab = compile_vocabulary();
    const EmbeddingTable table = build_embedding_table(vocab, 42);
    const int d = table.dim;
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) {
            double dot = 0.0;
            for (int f = 0; f < d; ++f) dot += table.row(i)[f] * table.row(j)[f];
            CHECK(std::abs(dot - (i == j ? 1.0 : 0.0)) < 1e-9);
        }
    }
    for (double v : table.rows) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }

    const EmbeddingTable again = build_embedding_table(vocab, 42);
    CHECK(table.rows == again.rows);

    const EmbeddingTable other = build_embedding_table(vocab, 43);
    double max_diff = 0.0;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        max_diff = std::max(max_diff, std::abs(table.rows[i] - other.rows[i]));
    }
    CHECK(max_diff > 1e-6);
}

TEST_CASE("tokenize fills gates, background, padding", "[codec]") {
    const GateVocabulary vocab = entanglement_vocabulary();
    const int pad = vocab.padding_id();

    const TokenMatrix empty = tokenize(Circuit(3), 3, 4, vocab);
    for (int tok : empty.tokens) CHECK(tok == pad);

    Circuit h(2);
    h.add(GateKind::H, {0});
    const TokenMatrix m = tokenize(h, 2, 2, vocab);
    CHECK(m.at(0, 0) == 1);
    CHECK(m.at(1, 0) == 0);
    CHECK(m.at(0, 1) == pad);
    CHECK(m.at(1, 1) == pad);

    Circuit cx(2);
    cx.add(GateKind::CX, {0, 1});
    const TokenMatrix mc = tokenize(cx, 2, 1, vocab);
    CHECK(mc.at(0, 0) == -2);
    CHECK(mc.at(1, 0) == 2);

    // rows past num_qubits are padding even in active columns
    const TokenMatrix mr = tokenize(h, 3, 2, vocab);
    CHECK(mr.at(2, 0) == pad);
    CHECK(mr.at(2, 1) == pad);
}

TEST_CASE("tokenize node pattern per kind", "[codec]") {
    const GateVocabulary vocab = compile_vocabulary();
    Circuit c(3);
    c.add(GateKind::SWAP, {0, 2}).add(GateKind::CCX, {0, 1, 2});
    const TokenMatrix m = tokenize(c, 3, 2, vocab);
    const int swap_id = vocab.token_id(GateKind::SWAP);
    const int ccx_id = vocab.token_id(GateKind::CCX);
    CHECK(m.at(0, 0) == swap_id);  // both SWAP nodes are targets
    CHECK(m.at(2, 0) == swap_id);
    CHECK(m.at(1, 0) == 0);
    CHECK(m.at(0, 1) == -ccx_id);  // two controls, one target
    CHECK(m.at(1, 1) == -ccx_id);
    CHECK(m.at(2, 1) == ccx_id);
}

TEST_CASE("tokenize rejects circuits beyond the canvas", "[codec]") {
    const GateVocabulary vocab = entanglement_vocabulary();
    Circuit big(4);
    CHECK_THROWS_AS(tokenize(big, 3, 4, vocab), ValidationError);
    Circuit long_circuit(2);
    for (int i = 0; i < 5; ++i) long_circuit.add(GateKind::H, {0});
    CHECK_THROWS_AS(tokenize(long_circuit, 2, 4, vocab), ValidationError);
}

TEST_CASE("embed uses signed rows", "[codec]") {
    const GateVocabulary vocab = entanglement_vocabulary();
    const EmbeddingTable table = build_embedding_table(vocab, 7);
    TokenMatrix m(1, 3);
    m.at(0, 0) = 0;
    m.at(0, 1) = -2;
    m.at(0, 2) = 2;
    const CircuitTensor t = embed(m, table);
    for (int f = 0; f < table.dim; ++f) {
        CHECK(t.cell(0, 0)[f] == table.row(0)[f]);
        CHECK(t.cell(0, 1)[f] == -table.row(2)[f]);
        CHECK(t.cell(0, 2)[f] == table.row(2)[f]);
    }
}

TEST_CASE("decode inverts embed exactly and is scale invariant", "[codec]") {
    const GateVocabulary vocab = compile_vocabulary();
    const EmbeddingTable table = build_embedding_table(vocab, 11);
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const TokenMatrix m = random_valid_tokens(rng, vocab, 5, 12);
        CircuitTensor t = embed(m, table);
        CHECK(decode(t, table) == m);
        const double lambda = 0.25 + 3.0 * rng.uniform();
        for (double& v : t.values) v *= lambda;
        CHECK(decode(t, table) == m);
    }
}

TEST_CASE("decode handles zero cells and explicit sign rule", "[codec]") {
    const GateVocabulary vocab = compile_vocabulary();
    const EmbeddingTable table = build_embedding_table(vocab, 3);
    CircuitTensor t(1, 2, table.dim);
    const int cx = vocab.token_id(GateKind::CX);
    for (int f = 0; f < table.dim; ++f) {
        t.cell(0, 0)[f] = 0.0;  // zero vector -> background
        t.cell(0, 1)[f] = -table.row(cx)[f];
    }
    const TokenMatrix m = decode(t, table);
    CHECK(m.at(0, 0) == GateVocabulary::background_id);
    CHECK(m.at(0, 1) == -cx);
}

TEST_CASE("decode recovers tokens under bounded noise", "[codec]") {
    const GateVocabulary vocab = compile_vocabulary();
    const EmbeddingTable table = build_embedding_table(vocab, 19);
    const double bound = 0.3 / std::sqrt(static_cast<double>(table.dim));
    Rng rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        const TokenMatrix m = random_valid_tokens(rng, vocab, 5, 12);
        CircuitTensor t = embed(m, table);
        for (double& v : t.values) v += bound * (2.0 * rng.uniform() - 1.0);
        CHECK(decode(t, table) == m);
    }
}

TEST_CASE("detokenize inverts tokenize", "[codec]") {
    const GateVocabulary vocab = compile_vocabulary();
    Rng rng(17);
    for (int trial = 0; trial < 300; ++trial) {
        Circuit c;
        const TokenMatrix m = random_valid_tokens(rng, vocab, 6, 14, &c);
        const DetokenizeResult r = detokenize(m, vocab);
        REQUIRE(!is_error(r));
        CHECK(std::get<Circuit>(r) == c);
    }
}

TEST_CASE("full roundtrip tokenize-embed-decode-detokenize", "[codec]") {
    const GateVocabulary vocab = compile_vocabulary();
    const EmbeddingTable table = build_embedding_table(vocab, 23);
    Rng rng(29);
    for (int trial = 0; trial < 500; ++trial) {
        Circuit c;
        const TokenMatrix m = random_valid_tokens(rng, vocab, 8, 16, &c);
        const DetokenizeResult r = detokenize(decode(embed(m, table), table), vocab);
        REQUIRE(!is_error(r));
        CHECK(std::get<Circuit>(r) == c);
    }
}

TEST_CASE("detokenize reports typed errors", "[codec]") {
    const GateVocabulary vocab = entanglement_vocabulary();
    const int pad = vocab.padding_id();

    SECTION("two single-qubit gates in one timestep") {
        TokenMatrix m(2, 1);
        m.at(0, 0) = 1;
        m.at(1, 0) = 1;
        const auto r = detokenize(m, vocab);
        REQUIRE(is_error(r));
        CHECK(std::get<ErrorCircuit>(r).reason == ErrorCircuit::Reason::WrongNodePattern);
    }
    SECTION("control without target") {
        TokenMatrix m(3, 1);
        m.at(0, 0) = -2;
        m.at(1, 0) = 0;
        m.at(2, 0) = 0;
        const auto r = detokenize(m, vocab);
        REQUIRE(is_error(r));
        CHECK(std::get<ErrorCircuit>(r).reason == ErrorCircuit::Reason::WrongNodePattern);
    }
    SECTION("mixed gate ids in a column") {
        TokenMatrix m(2, 1);
        m.at(0, 0) = 1;
        m.at(1, 0) = 2;
        const auto r = detokenize(m, vocab);
        REQUIRE(is_error(r));
        CHECK(std::get<ErrorCircuit>(r).reason == ErrorCircuit::Reason::MixedIdsInColumn);
    }
    SECTION("gate after termination") {
        TokenMatrix m(2, 2);
        m.at(0, 0) = pad;
        m.at(1, 0) = pad;
        m.at(0, 1) = 1;
        m.at(1, 1) = 0;
        const auto r = detokenize(m, vocab);
        REQUIRE(is_error(r));
        CHECK(std::get<ErrorCircuit>(r).reason == ErrorCircuit::Reason::GateAfterTermination);
    }
    SECTION("padding mixed into the middle of a column") {
        TokenMatrix m(3, 1);
        m.at(0, 0) = 1;
        m.at(1, 0) = pad;
        m.at(2, 0) = 0;
        const auto r = detokenize(m, vocab);
        REQUIRE(is_error(r));
        CHECK(std::get<ErrorCircuit>(r).reason == ErrorCircuit::Reason::PaddingMixedWithGate);
    }
    SECTION("inconsistent padded rows across columns") {
        TokenMatrix m(3, 2);
        m.at(0, 0) = 1;
        m.at(1, 0) = 0;
        m.at(2, 0) = pad;
        m.at(0, 1) = 1;
        m.at(1, 1) = 0;
        m.at(2, 1) = 0;
        const auto r = detokenize(m, vocab);
        REQUIRE(is_error(r));
        CHECK(std::get<ErrorCircuit>(r).reason == ErrorCircuit::Reason::RowPaddingInconsistent);
    }
    SECTION("negative padding is rejected") {
        TokenMatrix m(2, 1);
        m.at(0, 0) = -pad;
        m.at(1, 0) = 1;
        const auto r = detokenize(m, vocab);
        REQUIRE(is_error(r));
        CHECK(std::get<ErrorCircuit>(r).reason == ErrorCircuit::Reason::WrongNodePattern);
    }
    SECTION("reason strings name every case") {
        CHECK(ErrorCircuit{ErrorCircuit::Reason::MixedIdsInColumn}.reason_string() ==
              "mixed-ids-in-column");
        CHECK(ErrorCircuit{ErrorCircuit::Reason::RowPaddingInconsistent}.reason_string() ==
              "row-padding-inconsistent");
    }
}

TEST_CASE("detokenize of an all-padding canvas is an empty full-width circuit", "[codec]") {
    const GateVocabulary vocab = entanglement_vocabulary();
    const TokenMatrix m = tokenize(Circuit(3), 3, 4, vocab);
    const auto r = detokenize(m, vocab);
    REQUIRE(!is_error(r));
    CHECK(std::get<Circuit>(r).num_qubits == 3);
    CHECK(std::get<Circuit>(r).gates.empty());
}
