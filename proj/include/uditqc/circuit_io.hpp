#pragma once

#include <json.hpp>
#include <sstream>
#include <string>

#include "uditqc/circuit.hpp"

namespace uditqc {

// Circuit JSON object: {"qubits": q, "gates": [{"kind": "cx", "qubits": [c, t]}, ...]}
inline nlohmann::json circuit_to_json(const Circuit& c) {
    nlohmann::json gates = nlohmann::json::array();
    for (const Gate& g : c.gates) {
        gates.push_back({{"kind", gate_name(g.kind)}, {"qubits", g.qubits}});
    }
    return {{"qubits", c.num_qubits}, {"gates", gates}};
}

inline Circuit circuit_from_json(const nlohmann::json& j) {
    Circuit c(j.at("qubits").get<int>());
    for (const auto& jg : j.at("gates")) {
        c.add(gate_kind_from_name(jg.at("kind").get<std::string>()),
              jg.at("qubits").get<std::vector<int>>());
    }
    return c;
}

// The circuit JSON string doubles as the dedup key: gate order is
// preserved, so structurally distinct circuits get distinct keys.
inline std::string canonical_key(const Circuit& c) { return circuit_to_json(c).dump(); }

// One column per timestep. Controls render as '*', targets as the gate
// letter ('x' for both SWAP halves).
inline std::string circuit_diagram(const Circuit& c) {
    const std::size_t cols = c.gates.size();
    std::vector<std::string> rows(c.num_qubits);
    for (int q = 0; q < c.num_qubits; ++q) {
        rows[q] = "q" + std::to_string(q) + ": ";
        while (rows[q].size() < 5) rows[q] += ' ';
    }
    for (std::size_t t = 0; t < cols; ++t) {
        const Gate& g = c.gates[t];
        for (int q = 0; q < c.num_qubits; ++q) {
            char symbol = '-';
            for (int i = 0; i < gate_control_count(g.kind); ++i) {
                if (g.control(i) == q) symbol = '*';
            }
            for (int i = 0; i < gate_target_count(g.kind); ++i) {
                if (g.target(i) == q) {
                    switch (g.kind) {
                        case GateKind::H: symbol = 'H'; break;
                        case GateKind::X: symbol = 'X'; break;
                        case GateKind::Z: symbol = 'Z'; break;
                        case GateKind::CX: symbol = 'X'; break;
                        case GateKind::SWAP: symbol = 'x'; break;
                        case GateKind::CCX: symbol = 'X'; break;
                    }
                }
            }
            rows[q] += '-';
            rows[q] += symbol;
            rows[q] += '-';
        }
    }
    std::ostringstream out;
    for (const auto& r : rows) out << r << '\n';
    return out.str();
}

}  // namespace uditqc
