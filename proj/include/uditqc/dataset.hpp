#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "uditqc/circuit.hpp"
#include "uditqc/circuit_io.hpp"
#include "uditqc/common.hpp"
#include "uditqc/rng.hpp"

namespace uditqc {

enum class Task { Srv, Compile };

inline std::string task_name(Task t) { return t == Task::Srv ? "srv" : "compile"; }
inline Task task_from_name(const std::string& s) {
    if (s == "srv") return Task::Srv;
    if (s == "compile") return Task::Compile;
    throw ConfigError("unknown task: " + s);
}

struct DatasetSpec {
    Task task = Task::Srv;
    std::vector<GateKind> gate_pool;
    int qubits = 3;
    int min_gates = 2;
    int max_gates = 16;
    std::size_t balanced_size = 1;
    std::uint64_t seed = 0;
    // rejection-sampling attempt budget, per class, as a multiple of balanced_size
    std::size_t budget_factor = 200;

    void validate() const {
        require(!gate_pool.empty(), "gate pool is empty");
        require(qubits >= 1, "qubits must be positive");
        require(min_gates >= 0 && min_gates <= max_gates, "min_gates must be <= max_gates");
        require(balanced_size >= 1, "balanced_size must be >= 1");
        for (GateKind k : gate_pool) {
            if (gate_arity(k) > qubits) {
                throw ValidationError("gate " + gate_name(k) + " does not fit " +
                                      std::to_string(qubits) + " qubits");
            }
        }
    }
};

struct CircuitRecord {
    Circuit circuit;
    int label = 0;
    std::optional<SRV> srv;
    std::optional<UnitaryMatrix> unitary;
    std::string key;
};

struct GateSubsetLabel {
    int index = 0;
    std::vector<GateKind> kinds;
};

// Nonempty subsets of the pool in ascending bitmask order, bit i = pool[i];
// the subset index is the class label for the compile task.
inline std::vector<GateSubsetLabel> enumerate_gate_subsets(const std::vector<GateKind>& pool) {
    require(!pool.empty() && pool.size() <= 16, "pool size must be in [1, 16]");
    std::vector<GateSubsetLabel> out;
    const std::uint32_t total = std::uint32_t{1} << pool.size();
    for (std::uint32_t mask = 1; mask < total; ++mask) {
        GateSubsetLabel label;
        label.index = static_cast<int>(mask) - 1;
        for (std::size_t i = 0; i < pool.size(); ++i) {
            if (mask & (std::uint32_t{1} << i)) label.kinds.push_back(pool[i]);
        }
        out.push_back(std::move(label));
    }
    return out;
}

// Gate count uniform in {min..max}; each gate kind uniform over the pool;
// qubit tuples uniform over ordered tuples of distinct qubits (the Gate
// constructor then canonicalizes control/target order).
inline Circuit sample_random_circuit(const DatasetSpec& spec, Rng& rng) {
    spec.validate();
    Circuit c(spec.qubits);
    const std::int64_t n_gates = rng.uniform_int(spec.min_gates, spec.max_gates);
    for (std::int64_t i = 0; i < n_gates; ++i) {
        const GateKind kind =
            spec.gate_pool[rng.uniform_int(0, static_cast<std::int64_t>(spec.gate_pool.size()) - 1)];
        std::vector<int> available(spec.qubits);
        for (int q = 0; q < spec.qubits; ++q) available[q] = q;
        std::vector<int> qs;
        for (int a = 0; a < gate_arity(kind); ++a) {
            const std::int64_t pick = rng.uniform_int(0, static_cast<std::int64_t>(available.size()) - 1);
            qs.push_back(available[pick]);
            available.erase(available.begin() + pick);
        }
        c.add(kind, qs);
    }
    return c;
}

struct DatasetBuild {
    std::vector<CircuitRecord> records;
    std::vector<std::size_t> class_counts;
    std::uint64_t attempts = 0;
    bool complete = true;
};

// reserved RNG stream id for the final deterministic shuffle
constexpr std::uint64_t kShuffleStream = 0x51afu;

namespace detail {

// Ordered parallel map over candidate indices: worker w handles indices
// congruent to w, results are consumed in index order, so output is
// independent of scheduling and worker count.
template <class Fn>
void for_each_candidate(std::uint64_t begin, std::uint64_t end, int workers, Fn&& fn) {
    if (workers <= 1) {
        for (std::uint64_t i = begin; i < end; ++i) fn(i);
        return;
    }
    std::vector<std::thread> threads;
    for (int w = 0; w < workers; ++w) {
        threads.emplace_back([&, w]() {
            for (std::uint64_t i = begin + w; i < end; i += workers) fn(i);
        });
    }
    for (auto& t : threads) t.join();
}

inline void shuffle_records(std::vector<CircuitRecord>& records, Rng& rng) {
    for (std::size_t i = records.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
        std::swap(records[i - 1], records[j]);
    }
}

}  // namespace detail

// sample -> optimize -> dedup by canonical key -> label by SRV class, until
// every class holds balanced_size records or the attempt budget runs out.
inline DatasetBuild generate_srv_dataset(const DatasetSpec& spec, int workers = 1) {
    spec.validate();
    require(spec.task == Task::Srv, "generate_srv_dataset requires an srv spec");
    const auto classes = enumerate_srvs(spec.qubits);
    const std::size_t num_classes = classes.size();
    std::unordered_map<std::string, int> class_of;
    for (std::size_t i = 0; i < num_classes; ++i) {
        std::string key;
        for (int r : classes[i]) key += static_cast<char>('0' + r);
        class_of[key] = static_cast<int>(i);
    }

    DatasetBuild build;
    build.class_counts.assign(num_classes, 0);
    std::unordered_set<std::string> seen;
    const Rng base(spec.seed);
    const std::uint64_t budget =
        static_cast<std::uint64_t>(spec.budget_factor) * spec.balanced_size * num_classes;
    const std::uint64_t chunk = std::max<std::uint64_t>(256, 16 * static_cast<std::uint64_t>(workers));

    struct Candidate {
        Circuit circuit;
        SRV srv;
        std::string key;
    };

    std::uint64_t next = 0;
    std::size_t filled = 0;
    while (filled < num_classes && next < budget) {
        const std::uint64_t hi = std::min(budget, next + chunk);
        std::vector<std::optional<Candidate>> batch(hi - next);
        detail::for_each_candidate(next, hi, workers, [&](std::uint64_t i) {
            Rng rng = base.derive(i);
            Circuit c = optimize_circuit(sample_random_circuit(spec, rng));
            Candidate cand{std::move(c), {}, {}};
            cand.srv = compute_srv(simulate(cand.circuit), spec.qubits);
            cand.key = canonical_key(cand.circuit);
            batch[i - next] = std::move(cand);
        });
        for (std::uint64_t i = next; i < hi; ++i) {
            auto& cand = *batch[i - next];
            ++build.attempts;
            if (!seen.insert(cand.key).second) continue;
            std::string key;
            for (int r : cand.srv) key += static_cast<char>('0' + r);
            const int label = class_of.at(key);
            if (build.class_counts[label] >= spec.balanced_size) continue;
            CircuitRecord rec;
            rec.circuit = std::move(cand.circuit);
            rec.label = label;
            rec.srv = std::move(cand.srv);
            rec.key = std::move(cand.key);
            build.records.push_back(std::move(rec));
            if (++build.class_counts[label] == spec.balanced_size) ++filled;
            if (filled == num_classes) break;
        }
        next = hi;
    }
    build.complete = filled == num_classes;
    Rng shuffle_rng = base.derive(kShuffleStream);
    detail::shuffle_records(build.records, shuffle_rng);
    return build;
}

// Per subset label: sample circuits from that subset only, optimize, dedup
// within the subset, cap at balanced_size (all distinct kept when fewer
// exist); the unitary is computed and stored on every record.
inline DatasetBuild generate_compile_dataset(const DatasetSpec& spec, int workers = 1) {
    spec.validate();
    require(spec.task == Task::Compile, "generate_compile_dataset requires a compile spec");
    const auto subsets = enumerate_gate_subsets(spec.gate_pool);
    DatasetBuild build;
    build.class_counts.assign(subsets.size(), 0);
    build.complete = true;
    const Rng base(spec.seed);
    const std::uint64_t budget_per_subset =
        static_cast<std::uint64_t>(spec.budget_factor) * spec.balanced_size;

    for (const GateSubsetLabel& subset : subsets) {
        DatasetSpec sub = spec;
        sub.gate_pool = subset.kinds;
        std::unordered_set<std::string> seen;
        const Rng subset_base = base.derive(0xc0de0000ULL + static_cast<std::uint64_t>(subset.index));
        std::uint64_t next = 0;
        const std::uint64_t chunk = std::max<std::uint64_t>(256, 16 * static_cast<std::uint64_t>(workers));
        std::size_t kept = 0;
        while (kept < spec.balanced_size && next < budget_per_subset) {
            const std::uint64_t hi = std::min(budget_per_subset, next + chunk);
            std::vector<Circuit> batch(hi - next);
            detail::for_each_candidate(next, hi, workers, [&](std::uint64_t i) {
                Rng rng = subset_base.derive(i);
                batch[i - next] = optimize_circuit(sample_random_circuit(sub, rng));
            });
            for (std::uint64_t i = next; i < hi && kept < spec.balanced_size; ++i) {
                ++build.attempts;
                Circuit& c = batch[i - next];
                std::string key = canonical_key(c);
                if (!seen.insert(key).second) continue;
                CircuitRecord rec;
                rec.unitary = circuit_unitary(c);
                rec.circuit = std::move(c);
                rec.label = subset.index;
                rec.key = std::move(key);
                build.records.push_back(std::move(rec));
                ++kept;
            }
            next = hi;
        }
        build.class_counts[subset.index] = kept;
        if (kept < spec.balanced_size) build.complete = false;  // small subsets saturate
    }
    Rng shuffle_rng = base.derive(kShuffleStream);
    detail::shuffle_records(build.records, shuffle_rng);
    return build;
}

inline nlohmann::json unitary_to_json(const UnitaryMatrix& u) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < u.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < u.cols(); ++c) {
            row.push_back({u(r, c).real(), u(r, c).imag()});
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

inline UnitaryMatrix unitary_from_json(const nlohmann::json& j) {
    const Eigen::Index n = static_cast<Eigen::Index>(j.size());
    UnitaryMatrix u(n, n);
    for (Eigen::Index r = 0; r < n; ++r) {
        const auto& row = j.at(r);
        require(static_cast<Eigen::Index>(row.size()) == n, "unitary rows must be square");
        for (Eigen::Index c = 0; c < n; ++c) {
            u(r, c) = std::complex<double>(row.at(c).at(0).get<double>(),
                                           row.at(c).at(1).get<double>());
        }
    }
    return u;
}

inline nlohmann::json record_to_json(const CircuitRecord& rec) {
    nlohmann::json j = {{"circuit", circuit_to_json(rec.circuit)}, {"label", rec.label}};
    if (rec.srv) j["srv"] = *rec.srv;
    if (rec.unitary) j["unitary"] = unitary_to_json(*rec.unitary);
    return j;
}

inline CircuitRecord record_from_json(const nlohmann::json& j) {
    CircuitRecord rec;
    rec.circuit = circuit_from_json(j.at("circuit"));
    rec.label = j.at("label").get<int>();
    if (j.contains("srv")) rec.srv = j.at("srv").get<SRV>();
    if (j.contains("unitary")) rec.unitary = unitary_from_json(j.at("unitary"));
    rec.key = canonical_key(rec.circuit);
    return rec;
}

inline void write_dataset(const std::string& path, const std::vector<CircuitRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    for (const CircuitRecord& rec : records) out << record_to_json(rec).dump() << '\n';
    if (!out) throw IoError("write failed: " + path);
}

inline std::vector<CircuitRecord> read_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    std::vector<CircuitRecord> records;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) throw ParseError("malformed dataset line", line_number);
        try {
            records.push_back(record_from_json(j));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("bad record: ") + e.what(), line_number);
        }
    }
    return records;
}

inline std::uint64_t fnv1a_file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for hashing: " + path);
    std::uint64_t h = 14695981039346656037ULL;
    char buf[1 << 14];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ULL;
        }
    }
    return h;
}

inline nlohmann::json dataset_spec_to_json(const DatasetSpec& spec) {
    nlohmann::json pool = nlohmann::json::array();
    for (GateKind k : spec.gate_pool) pool.push_back(gate_name(k));
    return {{"task", task_name(spec.task)},   {"gate_pool", pool},
            {"qubits", spec.qubits},          {"min_gates", spec.min_gates},
            {"max_gates", spec.max_gates},    {"balanced_size", spec.balanced_size},
            {"seed", spec.seed},              {"budget_factor", spec.budget_factor}};
}

inline DatasetSpec dataset_spec_from_json(const nlohmann::json& j) {
    DatasetSpec spec;
    spec.task = task_from_name(j.at("task").get<std::string>());
    for (const auto& name : j.at("gate_pool")) {
        spec.gate_pool.push_back(gate_kind_from_name(name.get<std::string>()));
    }
    spec.qubits = j.at("qubits").get<int>();
    spec.min_gates = j.at("min_gates").get<int>();
    spec.max_gates = j.at("max_gates").get<int>();
    spec.balanced_size = j.at("balanced_size").get<std::size_t>();
    spec.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("budget_factor")) spec.budget_factor = j.at("budget_factor").get<std::size_t>();
    return spec;
}

inline nlohmann::json dataset_manifest(const DatasetSpec& spec, const DatasetBuild& build,
                                       const std::string& dataset_path) {
    return {{"spec", dataset_spec_to_json(spec)},
            {"seed", spec.seed},
            {"num_records", build.records.size()},
            {"class_counts", build.class_counts},
            {"attempts", build.attempts},
            {"complete", build.complete},
            {"content_hash", fnv1a_file_hash(dataset_path)}};
}

}  // namespace uditqc
