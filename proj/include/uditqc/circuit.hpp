#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "uditqc/common.hpp"

namespace uditqc {

using Statevector = Eigen::VectorXcd;
using UnitaryMatrix = Eigen::MatrixXcd;

// Per-qubit reduced-density-matrix ranks; entries in {1,2} for the gate
// pool used here. A valid SRV never has exactly one entry equal to 2.
using SRV = std::vector<int>;

enum class GateKind : int { H = 0, X, Z, CX, SWAP, CCX };

constexpr int kNumGateKinds = 6;

struct GateKindInfo {
    const char* name;
    int arity;
    int control_count;
};

inline const GateKindInfo& gate_kind_info(GateKind k) {
    static const std::array<GateKindInfo, kNumGateKinds> table = {{
        {"h", 1, 0},
        {"x", 1, 0},
        {"z", 1, 0},
        {"cx", 2, 1},
        {"swap", 2, 0},
        {"ccx", 3, 2},
    }};
    return table[static_cast<int>(k)];
}

inline int gate_arity(GateKind k) { return gate_kind_info(k).arity; }
inline int gate_control_count(GateKind k) { return gate_kind_info(k).control_count; }
inline int gate_target_count(GateKind k) { return gate_arity(k) - gate_control_count(k); }
inline std::string gate_name(GateKind k) { return gate_kind_info(k).name; }

inline GateKind gate_kind_from_name(const std::string& name) {
    for (int i = 0; i < kNumGateKinds; ++i) {
        if (name == gate_kind_info(static_cast<GateKind>(i)).name) return static_cast<GateKind>(i);
    }
    throw ValidationError("unknown gate kind: " + name);
}

// Qubit list holds controls first, then targets. Controls are sorted
// ascending and targets sorted ascending at construction; every kind in
// the pool is symmetric under those permutations, so this canonical form
// loses nothing and makes (de)tokenization and dedup keys unambiguous.
struct Gate {
    GateKind kind;
    std::vector<int> qubits;

    Gate(GateKind k, std::vector<int> qs) : kind(k), qubits(std::move(qs)) {
        const auto& info = gate_kind_info(kind);
        require(static_cast<int>(qubits.size()) == info.arity,
                std::string("gate ") + info.name + " expects " + std::to_string(info.arity) +
                    " qubits, got " + std::to_string(qubits.size()));
        std::sort(qubits.begin(), qubits.begin() + info.control_count);
        std::sort(qubits.begin() + info.control_count, qubits.end());
        for (std::size_t i = 0; i + 1 < qubits.size(); ++i) {
            for (std::size_t j = i + 1; j < qubits.size(); ++j) {
                require(qubits[i] != qubits[j], "gate qubits must be distinct");
            }
        }
        for (int q : qubits) require(q >= 0, "negative qubit index");
    }

    int control(int i) const { return qubits[i]; }
    int target(int i) const { return qubits[gate_control_count(kind) + i]; }

    bool touches(int q) const {
        return std::find(qubits.begin(), qubits.end(), q) != qubits.end();
    }

    bool operator==(const Gate& other) const {
        return kind == other.kind && qubits == other.qubits;
    }
};

struct Circuit {
    int num_qubits = 1;
    std::vector<Gate> gates;

    Circuit() = default;
    explicit Circuit(int q) : num_qubits(q) {
        require(q >= 1, "circuit needs at least one qubit");
    }

    Circuit& add(GateKind k, std::vector<int> qs) {
        Gate g(k, std::move(qs));
        for (int q : g.qubits) {
            require(q < num_qubits, "qubit index " + std::to_string(q) + " out of range for " +
                                        std::to_string(num_qubits) + "-qubit circuit");
        }
        gates.push_back(std::move(g));
        return *this;
    }

    void validate() const {
        require(num_qubits >= 1, "circuit needs at least one qubit");
        for (const Gate& g : gates) {
            for (int q : g.qubits) {
                require(q >= 0 && q < num_qubits, "qubit index out of range");
            }
        }
    }

    bool operator==(const Circuit& other) const {
        return num_qubits == other.num_qubits && gates == other.gates;
    }
};

namespace detail {

// Applies the gate in place. Basis convention: index i carries qubit k's
// bit at bit-position k (qubit 0 = least significant). Templated so the
// same kernel runs on statevectors and on unitary-matrix columns.
template <class Vec>
void apply_gate(Vec&& v, const Gate& g, int num_qubits) {
    const std::int64_t dim = std::int64_t{1} << num_qubits;
    const double inv_sqrt2 = 0.70710678118654752440084436210485;
    switch (g.kind) {
        case GateKind::H: {
            const std::int64_t b = std::int64_t{1} << g.target(0);
            for (std::int64_t i = 0; i < dim; ++i) {
                if (i & b) continue;
                const auto a0 = v[i];
                const auto a1 = v[i | b];
                v[i] = (a0 + a1) * inv_sqrt2;
                v[i | b] = (a0 - a1) * inv_sqrt2;
            }
            break;
        }
        case GateKind::X: {
            const std::int64_t b = std::int64_t{1} << g.target(0);
            for (std::int64_t i = 0; i < dim; ++i) {
                if (i & b) continue;
                std::swap(v[i], v[i | b]);
            }
            break;
        }
        case GateKind::Z: {
            const std::int64_t b = std::int64_t{1} << g.target(0);
            for (std::int64_t i = 0; i < dim; ++i) {
                if (i & b) v[i] = -v[i];
            }
            break;
        }
        case GateKind::CX: {
            const std::int64_t c = std::int64_t{1} << g.control(0);
            const std::int64_t t = std::int64_t{1} << g.target(0);
            for (std::int64_t i = 0; i < dim; ++i) {
                if ((i & c) && !(i & t)) std::swap(v[i], v[i | t]);
            }
            break;
        }
        case GateKind::SWAP: {
            const std::int64_t a = std::int64_t{1} << g.target(0);
            const std::int64_t b = std::int64_t{1} << g.target(1);
            for (std::int64_t i = 0; i < dim; ++i) {
                if ((i & a) && !(i & b)) std::swap(v[i], v[(i ^ a) | b]);
            }
            break;
        }
        case GateKind::CCX: {
            const std::int64_t c1 = std::int64_t{1} << g.control(0);
            const std::int64_t c2 = std::int64_t{1} << g.control(1);
            const std::int64_t t = std::int64_t{1} << g.target(0);
            for (std::int64_t i = 0; i < dim; ++i) {
                if ((i & c1) && (i & c2) && !(i & t)) std::swap(v[i], v[i | t]);
            }
            break;
        }
    }
}

}  // namespace detail

// State after applying the gates in order to |0...0>.
inline Statevector simulate(const Circuit& circuit) {
    circuit.validate();
    require(circuit.num_qubits <= 12, "simulate supports at most 12 qubits");
    const std::int64_t dim = std::int64_t{1} << circuit.num_qubits;
    Statevector state = Statevector::Zero(dim);
    state(0) = 1.0;
    for (const Gate& g : circuit.gates) detail::apply_gate(state, g, circuit.num_qubits);
    return state;
}

// Product of the gate matrices in application order.
inline UnitaryMatrix circuit_unitary(const Circuit& circuit) {
    circuit.validate();
    require(circuit.num_qubits <= 10, "circuit_unitary supports at most 10 qubits");
    const std::int64_t dim = std::int64_t{1} << circuit.num_qubits;
    UnitaryMatrix u = UnitaryMatrix::Identity(dim, dim);
    for (const Gate& g : circuit.gates) {
        for (std::int64_t col = 0; col < dim; ++col) {
            auto c = u.col(col);
            detail::apply_gate(c, g, circuit.num_qubits);
        }
    }
    return u;
}

// Rank threshold on reduced-density-matrix eigenvalues. Gate entries are
// dyadic/sqrt(2)-rational, so true eigenvalues sit far from this cutoff.
constexpr double kSrvRankEps = 1e-9;

inline SRV compute_srv(const Statevector& state, int num_qubits) {
    const std::int64_t dim = std::int64_t{1} << num_qubits;
    require(state.size() == dim, "state length does not match qubit count");
    require(std::abs(state.norm() - 1.0) < 1e-9, "state is not normalized");
    SRV ranks(num_qubits, 1);
    for (int k = 0; k < num_qubits; ++k) {
        const std::int64_t b = std::int64_t{1} << k;
        double r00 = 0.0, r11 = 0.0;
        std::complex<double> r01 = 0.0;
        for (std::int64_t i = 0; i < dim; ++i) {
            if (i & b) continue;
            r00 += std::norm(state(i));
            r11 += std::norm(state(i | b));
            r01 += state(i) * std::conj(state(i | b));
        }
        // eigenvalues of the 2x2 Hermitian reduced density matrix
        const double tr = r00 + r11;
        const double det = r00 * r11 - std::norm(r01);
        const double disc = std::sqrt(std::max(0.0, tr * tr - 4.0 * det));
        const double lo = (tr - disc) / 2.0;
        const double hi = (tr + disc) / 2.0;
        ranks[k] = (hi > kSrvRankEps ? 1 : 0) + (lo > kSrvRankEps ? 1 : 0);
    }
    return ranks;
}

// All {1,2}-vectors of length q excluding those with exactly one 2, in
// lexicographic order; count = 2^q - q.
inline std::vector<SRV> enumerate_srvs(int q) {
    require(q >= 1 && q <= 16, "enumerate_srvs supports 1 <= q <= 16");
    std::vector<SRV> out;
    const std::uint32_t total = std::uint32_t{1} << q;
    for (std::uint32_t m = 0; m < total; ++m) {
        int ones = 0;
        for (int i = 0; i < q; ++i) ones += (m >> i) & 1u;
        if (ones == 1) continue;
        SRV v(q);
        for (int i = 0; i < q; ++i) v[i] = 1 + ((m >> (q - 1 - i)) & 1u);
        out.push_back(std::move(v));
    }
    return out;
}

inline int srv_class_index(const SRV& srv, int q) {
    const auto all = enumerate_srvs(q);
    for (std::size_t i = 0; i < all.size(); ++i) {
        if (all[i] == srv) return static_cast<int>(i);
    }
    return -1;
}

// Cancels adjacent identical self-inverse pairs acting on the same qubits,
// allowing commutation across gates with disjoint support, until fixpoint.
// A per-qubit stack of pending gates makes one pass reach the fixpoint:
// cancelling a pair re-exposes the gates beneath it.
inline Circuit optimize_circuit(const Circuit& circuit) {
    circuit.validate();
    std::vector<const Gate*> pending;
    std::vector<std::vector<std::size_t>> last_on_qubit(circuit.num_qubits);
    std::vector<bool> alive;
    for (const Gate& g : circuit.gates) {
        bool cancelled = false;
        // candidate = most recent alive gate touching g's first qubit
        auto& stack0 = last_on_qubit[g.qubits.front()];
        if (!stack0.empty()) {
            const std::size_t p = stack0.back();
            if (*pending[p] == g) {
                bool top_everywhere = true;
                for (int q : g.qubits) {
                    if (last_on_qubit[q].empty() || last_on_qubit[q].back() != p) {
                        top_everywhere = false;
                        break;
                    }
                }
                if (top_everywhere) {
                    for (int q : g.qubits) last_on_qubit[q].pop_back();
                    alive[p] = false;
                    cancelled = true;
                }
            }
        }
        if (!cancelled) {
            pending.push_back(&g);
            alive.push_back(true);
            for (int q : g.qubits) last_on_qubit[q].push_back(pending.size() - 1);
        }
    }
    Circuit out(circuit.num_qubits);
    for (std::size_t i = 0; i < pending.size(); ++i) {
        if (alive[i]) out.gates.push_back(*pending[i]);
    }
    return out;
}

// 1/2 * sum |A_ij - B_ij|^2
inline double frobenius_distance(const UnitaryMatrix& a, const UnitaryMatrix& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "unitary dimension mismatch");
    return 0.5 * (a - b).squaredNorm();
}

// Auxiliary metric, reported separately: minimum of the Frobenius distance
// over a global phase e^{i phi} applied to B.
inline double frobenius_distance_phase_insensitive(const UnitaryMatrix& a,
                                                   const UnitaryMatrix& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "unitary dimension mismatch");
    const double overlap = std::abs((b.adjoint() * a).trace());
    return 0.5 * (a.squaredNorm() + b.squaredNorm()) - overlap;
}

}  // namespace uditqc
