#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "uditqc/circuit.hpp"
#include "uditqc/common.hpp"
#include "uditqc/rng.hpp"

namespace uditqc {

// Token ids: 0 = background, 1..N = gates, N+1 = padding. The sign of a
// gate token marks the node role (negative = control, positive = target).
struct GateVocabulary {
    std::vector<GateKind> kinds;

    explicit GateVocabulary(std::vector<GateKind> ks) : kinds(std::move(ks)) {
        require(!kinds.empty(), "vocabulary needs at least one gate kind");
    }

    int gate_count() const { return static_cast<int>(kinds.size()); }
    int padding_id() const { return gate_count() + 1; }
    static constexpr int background_id = 0;
    int feature_dim() const { return gate_count() + 2; }

    int token_id(GateKind k) const {
        for (int i = 0; i < gate_count(); ++i) {
            if (kinds[i] == k) return i + 1;
        }
        throw ValidationError("gate kind not in vocabulary: " + gate_name(k));
    }

    GateKind kind_of(int token_id) const {
        require(token_id >= 1 && token_id <= gate_count(), "token id is not a gate");
        return kinds[token_id - 1];
    }

    bool operator==(const GateVocabulary& other) const { return kinds == other.kinds; }
};

inline GateVocabulary entanglement_vocabulary() {
    return GateVocabulary({GateKind::H, GateKind::CX});
}

inline GateVocabulary compile_vocabulary() {
    return GateVocabulary({GateKind::H, GateKind::CX, GateKind::Z, GateKind::X, GateKind::CCX,
                           GateKind::SWAP});
}

// (N+2) orthonormal rows of dimension d = N+2, row index = token id.
// Built by Gram-Schmidt on a seeded Gaussian matrix, so the table is a
// deterministic function of (vocabulary size, seed).
struct EmbeddingTable {
    int dim = 0;
    std::uint64_t seed = 0;
    std::vector<double> rows;  // (dim) x (dim), row-major

    const double* row(int token_id) const { return rows.data() + token_id * dim; }
};

inline EmbeddingTable build_embedding_table(const GateVocabulary& vocab, std::uint64_t seed) {
    const int d = vocab.feature_dim();
    EmbeddingTable table;
    table.dim = d;
    table.seed = seed;
    table.rows.assign(static_cast<std::size_t>(d) * d, 0.0);
    Rng rng = Rng(seed).derive(0x0e6b);
    for (int i = 0; i < d; ++i) {
        double* v = table.rows.data() + i * d;
        for (int j = 0; j < d; ++j) v[j] = rng.normal();
        for (int k = 0; k < i; ++k) {
            const double* u = table.rows.data() + k * d;
            double dot = 0.0;
            for (int j = 0; j < d; ++j) dot += v[j] * u[j];
            for (int j = 0; j < d; ++j) v[j] -= dot * u[j];
        }
        double norm = 0.0;
        for (int j = 0; j < d; ++j) norm += v[j] * v[j];
        norm = std::sqrt(norm);
        if (norm < 1e-8) throw NumericError("degenerate draw while orthogonalizing embeddings");
        for (int j = 0; j < d; ++j) v[j] /= norm;
    }
    return table;
}

struct TokenMatrix {
    int Q = 0;
    int T = 0;
    std::vector<int> tokens;  // row-major, Q rows of T columns

    TokenMatrix() = default;
    TokenMatrix(int q, int t) : Q(q), T(t), tokens(static_cast<std::size_t>(q) * t, 0) {}

    int& at(int q, int t) { return tokens[static_cast<std::size_t>(q) * T + t]; }
    int at(int q, int t) const { return tokens[static_cast<std::size_t>(q) * T + t]; }

    bool operator==(const TokenMatrix& other) const {
        return Q == other.Q && T == other.T && tokens == other.tokens;
    }
};

struct CircuitTensor {
    int Q = 0;
    int T = 0;
    int d = 0;
    std::vector<double> values;  // index ((q*T)+t)*d + f

    CircuitTensor() = default;
    CircuitTensor(int q, int t, int dim)
        : Q(q), T(t), d(dim), values(static_cast<std::size_t>(q) * t * dim, 0.0) {}

    double* cell(int q, int t) { return values.data() + (static_cast<std::size_t>(q) * T + t) * d; }
    const double* cell(int q, int t) const {
        return values.data() + (static_cast<std::size_t>(q) * T + t) * d;
    }
};

// Gate g at time t fills column t: targets +id, controls -id, other rows
// background. Columns past the gate count and rows past num_qubits are
// padding, so variable-size circuits live inside the fixed (Q, T) canvas.
inline TokenMatrix tokenize(const Circuit& circuit, int Q, int T, const GateVocabulary& vocab) {
    circuit.validate();
    if (circuit.num_qubits > Q || static_cast<int>(circuit.gates.size()) > T) {
        throw ValidationError("circuit does not fit the (Q, T) canvas");
    }
    const int pad = vocab.padding_id();
    TokenMatrix m(Q, T);
    const int ng = static_cast<int>(circuit.gates.size());
    for (int q = 0; q < Q; ++q) {
        for (int t = 0; t < T; ++t) {
            m.at(q, t) = (q >= circuit.num_qubits || t >= ng) ? pad : GateVocabulary::background_id;
        }
    }
    for (int t = 0; t < ng; ++t) {
        const Gate& g = circuit.gates[t];
        const int id = vocab.token_id(g.kind);
        for (int i = 0; i < gate_control_count(g.kind); ++i) m.at(g.control(i), t) = -id;
        for (int i = 0; i < gate_target_count(g.kind); ++i) m.at(g.target(i), t) = id;
    }
    return m;
}

// Cell value = sign(token) * row(|token|); background and padding use +row.
inline CircuitTensor embed(const TokenMatrix& tokens, const EmbeddingTable& table) {
    CircuitTensor out(tokens.Q, tokens.T, table.dim);
    for (int q = 0; q < tokens.Q; ++q) {
        for (int t = 0; t < tokens.T; ++t) {
            const int tok = tokens.at(q, t);
            const int id = std::abs(tok);
            if (id >= table.dim) throw ValidationError("token id outside vocabulary");
            const double s = tok < 0 ? -1.0 : 1.0;
            const double* r = table.row(id);
            double* c = out.cell(q, t);
            for (int f = 0; f < table.dim; ++f) c[f] = s * r[f];
        }
    }
    return out;
}

// Per cell: pick the row with the highest |cosine similarity|, then carry
// the similarity's sign onto the token. Ties break toward the smallest id
// (an exact zero cell therefore decodes to background), and background /
// padding are forced non-negative.
inline TokenMatrix decode(const CircuitTensor& tensor, const EmbeddingTable& table) {
    require(tensor.d == table.dim, "tensor feature dim does not match embedding table");
    TokenMatrix out(tensor.Q, tensor.T);
    const int pad_id = table.dim - 1;
    for (int q = 0; q < tensor.Q; ++q) {
        for (int t = 0; t < tensor.T; ++t) {
            const double* v = tensor.cell(q, t);
            for (int f = 0; f < tensor.d; ++f) {
                if (!std::isfinite(v[f])) throw ValidationError("non-finite value in tensor cell");
            }
            // rows are orthonormal, so |cos| ranks identically to |dot|
            int best = 0;
            double best_abs = -1.0;
            double best_dot = 0.0;
            for (int k = 0; k < table.dim; ++k) {
                const double* r = table.row(k);
                double dot = 0.0;
                for (int f = 0; f < tensor.d; ++f) dot += r[f] * v[f];
                if (std::abs(dot) > best_abs + 1e-15) {
                    best_abs = std::abs(dot);
                    best_dot = dot;
                    best = k;
                }
            }
            int tok = best;
            if (best_dot < 0.0 && best != GateVocabulary::background_id && best != pad_id) {
                tok = -best;
            }
            out.at(q, t) = tok;
        }
    }
    return out;
}

struct ErrorCircuit {
    enum class Reason {
        MixedIdsInColumn,
        WrongNodePattern,
        PaddingMixedWithGate,
        GateAfterTermination,
        RowPaddingInconsistent,
    };
    Reason reason;
    int column = -1;

    std::string reason_string() const {
        switch (reason) {
            case Reason::MixedIdsInColumn: return "mixed-ids-in-column";
            case Reason::WrongNodePattern: return "wrong-node-pattern";
            case Reason::PaddingMixedWithGate: return "padding-mixed-with-gate";
            case Reason::GateAfterTermination: return "gate-after-termination";
            case Reason::RowPaddingInconsistent: return "row-padding-inconsistent";
        }
        return "unknown";
    }
};

using DetokenizeResult = std::variant<Circuit, ErrorCircuit>;

inline bool is_error(const DetokenizeResult& r) { return std::holds_alternative<ErrorCircuit>(r); }

// Scans columns left to right. An all-padding column terminates the
// circuit; every other column must hold exactly one gate whose sign
// multiset matches its kind. The padded row suffix fixes the qubit count;
// a token matrix with no active columns decodes to an empty Q-qubit
// circuit (the canvas cannot express the qubit count of an empty circuit).
inline DetokenizeResult detokenize(const TokenMatrix& tokens, const GateVocabulary& vocab) {
    const int pad = vocab.padding_id();
    const int Q = tokens.Q;
    bool terminated = false;
    int padded_rows = -1;  // -1 = no active column seen yet
    std::vector<Gate> gates;
    for (int t = 0; t < tokens.T; ++t) {
        int column_padding = 0;
        int first_padded_row = Q;
        for (int q = 0; q < Q; ++q) {
            const int tok = tokens.at(q, t);
            if (std::abs(tok) > pad) throw ValidationError("token id outside vocabulary");
            if (tok == -pad) return ErrorCircuit{ErrorCircuit::Reason::WrongNodePattern, t};
            if (tok == pad) {
                ++column_padding;
                first_padded_row = std::min(first_padded_row, q);
            }
        }
        if (column_padding == Q) {
            terminated = true;
            continue;
        }
        if (terminated) return ErrorCircuit{ErrorCircuit::Reason::GateAfterTermination, t};
        // padding inside an active column must be a row suffix
        if (column_padding != Q - first_padded_row) {
            return ErrorCircuit{ErrorCircuit::Reason::PaddingMixedWithGate, t};
        }
        if (padded_rows == -1) {
            padded_rows = column_padding;
        } else if (padded_rows != column_padding) {
            return ErrorCircuit{ErrorCircuit::Reason::RowPaddingInconsistent, t};
        }
        int magnitude = 0;
        std::vector<int> controls;
        std::vector<int> targets;
        for (int q = 0; q < first_padded_row; ++q) {
            const int tok = tokens.at(q, t);
            if (tok == GateVocabulary::background_id) continue;
            const int id = std::abs(tok);
            if (magnitude == 0) magnitude = id;
            if (id != magnitude) return ErrorCircuit{ErrorCircuit::Reason::MixedIdsInColumn, t};
            if (tok < 0) {
                controls.push_back(q);
            } else {
                targets.push_back(q);
            }
        }
        if (magnitude == 0) return ErrorCircuit{ErrorCircuit::Reason::WrongNodePattern, t};
        const GateKind kind = vocab.kind_of(magnitude);
        if (static_cast<int>(controls.size()) != gate_control_count(kind) ||
            static_cast<int>(targets.size()) != gate_target_count(kind)) {
            return ErrorCircuit{ErrorCircuit::Reason::WrongNodePattern, t};
        }
        std::vector<int> qs = controls;
        qs.insert(qs.end(), targets.begin(), targets.end());
        gates.emplace_back(kind, std::move(qs));
    }
    Circuit circuit(padded_rows == -1 ? Q : Q - padded_rows);
    circuit.gates = std::move(gates);
    circuit.validate();
    return circuit;
}

}  // namespace uditqc
