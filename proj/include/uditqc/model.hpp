#pragma once

#include <optional>
#include <vector>

#include "uditqc/codec.hpp"
#include "uditqc/conditioning.hpp"
#include "uditqc/dataset.hpp"
#include "uditqc/udit.hpp"

namespace uditqc {

// Everything that pins a trained model down: task, vocabulary, canvas,
// architecture, conditioning and the embedding-table seed. Serialized in
// the checkpoint manifest so decode stays reproducible.
struct ModelSpec {
    Task task = Task::Srv;
    int qubits = 3;
    std::vector<GateKind> gate_pool = {GateKind::H, GateKind::CX};
    UDiTConfig udit;
    std::size_t schedule_steps = 1000;
    double label_dropout = 0.1;
    std::uint64_t embed_seed = 0;
    UEncConfig uenc;

    GateVocabulary vocabulary() const { return GateVocabulary(gate_pool); }

    int num_classes() const {
        if (task == Task::Srv) {
            return static_cast<int>(enumerate_srvs(qubits).size());
        }
        return static_cast<int>(enumerate_gate_subsets(gate_pool).size());
    }

    void validate() const {
        require(qubits >= 1, "model spec: qubits must be positive");
        require(static_cast<int>(udit.Q) >= qubits, "model spec: canvas rows < qubits");
        require(udit.d == static_cast<std::size_t>(vocabulary().feature_dim()),
                "model spec: token feature dim must equal vocabulary feature dim");
        udit.validate();
        if (task == Task::Compile) {
            UEncConfig uc = uenc;
            uc.qubits = qubits;
            uc.validate();
        }
    }
};

class DenoiserModel {
public:
    DenoiserModel(ModelSpec spec, std::uint64_t init_seed) : spec_(std::move(spec)) {
        spec_.validate();
        Rng rng(Rng::mix(init_seed, 0xb00d));
        udit_ = UDiT(params_, spec_.udit, rng);
        std::optional<UEncConfig> uenc;
        if (spec_.task == Task::Compile) {
            uenc = spec_.uenc;
            uenc->qubits = spec_.qubits;
            uenc->cond_dim = spec_.udit.cond_dim;
        }
        cond_ = Conditioning(params_, spec_.udit.cond_dim, spec_.num_classes(),
                             spec_.label_dropout, uenc, rng);
        table_ = build_embedding_table(spec_.vocabulary(), spec_.embed_seed);
    }

    const ModelSpec& spec() const { return spec_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }
    UDiT& udit() { return udit_; }
    const UDiT& udit() const { return udit_; }
    const Conditioning& conditioning() const { return cond_; }
    const EmbeddingTable& embedding_table() const { return table_; }

    // Noise prediction for a batch. `unitaries`, when present, must match
    // the batch size; labels use the learned null row at index
    // num_classes().
    nn::NodePtr epsilon(const Tensor& x_t, const std::vector<int>& ts,
                        const std::vector<int>& labels,
                        const std::vector<UnitaryMatrix>* unitaries, bool training,
                        Rng& rng) const {
        const std::size_t B = x_t.dim(0);
        require(ts.size() == B && labels.size() == B, "epsilon: batch size mismatch");
        const nn::NodePtr t_embed = cond_.embed_timestep(ts, spec_.schedule_steps);
        const nn::NodePtr l_embed = cond_.embed_label(labels, training, rng);
        nn::NodePtr u_embed;
        if (cond_.has_unitary_branch()) {
            if (unitaries) {
                require(unitaries->size() == B, "epsilon: unitary batch mismatch");
                u_embed = cond_.encode_unitary(*unitaries, training, rng);
            } else {
                u_embed = cond_.null_unitary_embed(B);
            }
        } else {
            require(unitaries == nullptr, "model has no unitary branch");
        }
        const nn::NodePtr combined = cond_.combine(t_embed, l_embed, u_embed);
        return udit_.forward(nn::constant(x_t), combined);
    }

    // Unconditional branch for classifier-free guidance: null label and,
    // when the branch exists, a zeroed unitary embedding.
    nn::NodePtr epsilon_null(const Tensor& x_t, const std::vector<int>& ts, Rng& rng) const {
        const std::vector<int> nulls(x_t.dim(0), cond_.null_label());
        return epsilon(x_t, ts, nulls, nullptr, false, rng);
    }

private:
    ModelSpec spec_;
    nn::ParamStore params_;
    UDiT udit_;
    Conditioning cond_;
    EmbeddingTable table_;
};

}  // namespace uditqc
