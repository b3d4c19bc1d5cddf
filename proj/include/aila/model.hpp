#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "aila/layers.hpp"
#include "aila/tensor.hpp"

namespace aila {

enum class Variant : std::uint8_t { aila1, aila2, plain, residual_sum, dense_concat };
enum class HeadKind : std::uint8_t { regression, binary_classification, multiclass };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);
std::string to_string(BaseKind b);
BaseKind base_kind_from_string(const std::string& s);
std::string to_string(HeadKind h);
HeadKind head_kind_from_string(const std::string& s);

struct ModelConfig {
    Variant variant = Variant::aila2;
    std::size_t num_layers = 4;
    std::size_t hidden = 64;
    std::size_t d_k = 64;
    std::size_t d_v = 64;
    std::size_t heads = 1;
    BaseKind base = BaseKind::lstm;
    HeadKind head = HeadKind::regression;
    std::size_t num_classes = 2;           // multiclass heads
    std::size_t input_dim = 1;             // feature width seen by layer 1
    std::optional<std::size_t> task_dim;   // enables the Arch-1 task embedding
    std::size_t vocab = 0;                 // >0 adds a token embedding front end
    std::size_t embed_dim = 0;

    void validate() const;  // ConfigError on violated invariants
    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

struct Layer {
    BaseParams base;
    std::optional<Arch1Integrator> arch1;
    std::optional<Arch2Integrator> arch2;
    Tensor dense_proj;  // dense_concat input projection, layers >= 2
    LayerNormParams ln;
};

/// Everything a forward pass can report besides the prediction.
struct ForwardTrace {
    LayerState state;  // h_1..h_N as seen by integrators (post-knockout)
    AttnTrace attn;
};

/// A full N-layer network: optional token embedding, per-layer base +
/// integrator + LayerNorm, and a task head reading the last position of h_N.
/// The registry lists every learnable tensor exactly once, in creation order.
class Model {
  public:
    static Model build(const ModelConfig& config, std::uint64_t seed);

    Tensor forward(const Tensor& x, const std::set<std::size_t>* knockout = nullptr,
                   ForwardTrace* trace = nullptr,
                   const std::vector<std::size_t>* lengths = nullptr) const;

    const ModelConfig& config() const { return config_; }
    const std::vector<std::pair<std::string, Tensor>>& registry() const { return registry_; }
    std::vector<std::pair<std::string, Tensor>>& registry() { return registry_; }

    std::size_t param_count() const;
    std::uint64_t param_checksum() const;

    std::vector<Tensor> snapshot_params() const;
    void restore_params(const std::vector<Tensor>& snapshot);

    void save_checkpoint(const std::string& path, const nlohmann::json& run_echo = {}) const;
    static Model load_checkpoint(const std::string& path, nlohmann::json* run_echo = nullptr);

    const TaskEmbedding& task() const { return task_; }
    const std::vector<Layer>& layers() const { return layers_; }

  private:
    ModelConfig config_;
    Tensor embed_;  // vocab x embed_dim when vocab > 0
    TaskEmbedding task_;
    std::vector<Layer> layers_;
    Tensor head_w_, head_b_;
    std::vector<std::pair<std::string, Tensor>> registry_;

    void register_param(const std::string& name, const Tensor& t);
};

/// Fixed-skip baseline constructor; variant must be plain, residual_sum or
/// dense_concat (aila variants go through Model::build directly as well —
/// this wrapper just guards the variant class).
Model build_baseline(Variant variant, const ModelConfig& config, std::uint64_t seed);

}  // namespace aila
