#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "aila/tensor.hpp"

namespace aila {

/// Outputs of all completed layers, in order. Every entry shares one shape:
/// (batch x time x d) for sequence bases, (batch x d) for MLP bases.
struct LayerState {
    std::vector<Tensor> outputs;

    bool empty() const { return outputs.empty(); }
    std::size_t size() const { return outputs.size(); }
    void push(Tensor h) { outputs.push_back(std::move(h)); }
};

/// Optional learned task vector appended to the Arch-1 candidate set.
struct TaskEmbedding {
    Tensor t;  // length d_t
    bool present = false;
};

/// Linear cross-layer integrator. One d x d projection per predecessor, an
/// optional d_t x d task projection, and per-head scorer vectors laid out as
/// one segment of length d/heads per candidate (candidate order: own output,
/// task embedding if present, then predecessors oldest first).
struct Arch1Integrator {
    std::vector<Tensor> proj;         // (j-1) matrices, each d x d
    Tensor task_proj;                 // d_t x d, only when task present
    std::vector<Tensor> head_scorers; // heads vectors, each candidates*(d/heads)
    std::size_t num_heads = 1;
    std::size_t width = 0;  // d

    std::size_t candidates(bool task_present) const {
        return proj.size() + 1 + (task_present ? 1 : 0);
    }
};

/// Dot-product cross-layer integrator. Query from the layer's own preliminary
/// output; one shared key and one shared value projection applied to every
/// predecessor.
struct Arch2Integrator {
    Tensor w_query;  // d x d_k
    Tensor w_key;    // d x d_k
    Tensor w_value;  // d x d_v
    std::size_t num_heads = 1;
};

/// One attention distribution captured during a forward pass: weights has
/// shape (positions x predecessors) for one layer/head pair.
struct AttnRecord {
    std::size_t layer = 0;  // 1-based
    std::size_t head = 0;   // 0-based
    Tensor weights;
};

using AttnTrace = std::vector<AttnRecord>;

/// Head-wise scored blend of {own output, task embedding, projected
/// predecessors}; softmax over candidates within each head, head outputs
/// averaged. Empty predecessor set with no task embedding yields zero.
Tensor arch1_integrate(const Tensor& h_tilde, const LayerState& state,
                       const Arch1Integrator& integ, const TaskEmbedding& task);

/// Scaled dot-product attention over predecessor outputs (position-wise);
/// multi-head outputs are concatenated. Empty predecessor set yields zero.
Tensor arch2_integrate(const Tensor& h_tilde, const LayerState& state,
                       const Arch2Integrator& integ, std::size_t layer_index = 0,
                       AttnTrace* trace = nullptr);

struct LayerNormParams {
    Tensor gain;
    Tensor bias;
    double eps = 1e-5;
};

/// h_j = LayerNorm(ReLU(h_tilde + aggregate)); pass an undefined aggregate to
/// drop the residual term.
Tensor layer_update(const Tensor& h_tilde, const Tensor& aggregate, const LayerNormParams& ln);

enum class BaseKind : std::uint8_t { lstm, mlp };

struct MlpParams {
    Tensor w;  // in x d
    Tensor b;  // d
};

struct BaseParams {
    BaseKind kind = BaseKind::lstm;
    LstmParams lstm;
    MlpParams mlp;
};

/// Layer body before integration: LSTM returns the full hidden sequence
/// (batch x time x d); MLP returns ReLU(x w + b).
Tensor base_forward(const Tensor& x, const BaseParams& params);

}  // namespace aila
