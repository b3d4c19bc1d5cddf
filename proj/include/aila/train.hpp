#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "aila/data.hpp"
#include "aila/model.hpp"
#include "aila/tensor.hpp"

namespace aila {

/// Raised when a run turns numerically unusable (NaN loss or gradient);
/// train() converts it into a diverged RunReport instead of crashing.
struct DivergedError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class LossKind : std::uint8_t { mse, binary_ce, multiclass_ce };

std::string to_string(LossKind k);
LossKind loss_kind_from_string(const std::string& s);

struct TrainConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t epochs = 100;
    std::size_t batch_size = 32;
    std::size_t patience = 10;
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    LossKind loss = LossKind::mse;
    std::optional<double> grad_clip;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

// Batch-mean losses. Classification losses use log-sum-exp-stable forms and
// reject out-of-range labels with DataError.
Tensor mse_loss(const Tensor& pred, const Tensor& target);
Tensor binary_ce(const Tensor& logits, const Tensor& labels);
Tensor multiclass_ce(const Tensor& logits, const Tensor& labels);
Tensor loss_of(LossKind kind, const Tensor& pred, const Tensor& target);

/// Anything train() can optimize: a prediction function plus its parameters.
class TrainableModel {
  public:
    virtual ~TrainableModel() = default;
    virtual Tensor predict(const Batch& batch) const = 0;
    virtual std::vector<std::pair<std::string, Tensor>>& params() = 0;
};

/// Binds a Model to the TrainableModel interface.
class ModelAdapter final : public TrainableModel {
  public:
    explicit ModelAdapter(Model& m) : model_(&m) {}
    Tensor predict(const Batch& batch) const override;
    std::vector<std::pair<std::string, Tensor>>& params() override { return model_->registry(); }

  private:
    Model* model_;
};

/// Adam with bias correction. Moments are owned here, parallel to the
/// parameter list; a NaN gradient aborts with the parameter's name.
class Adam {
  public:
    Adam(std::vector<std::pair<std::string, Tensor>>& params, const TrainConfig& cfg);
    void step();
    void zero_grad();
    std::size_t t() const { return t_; }

  private:
    std::vector<std::pair<std::string, Tensor>>* params_;
    TrainConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t t_ = 0;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct RunReport {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    double best_val = 0.0;
    double test_metric = 0.0;
    std::string metric_name;
    double train_seconds = 0.0;
    double inference_seconds = 0.0;
    std::uint64_t seed = 0;
    bool diverged = false;
    std::string diverged_reason;
    nlohmann::json config_echo;
};

double evaluate_loss(const TrainableModel& model, const BatchSource& src, LossKind kind);

/// Test-set figure of merit: MSE for regression losses, accuracy otherwise.
double evaluate_metric(const TrainableModel& model, const BatchSource& src, LossKind kind);
std::string metric_name_of(LossKind kind);

RunReport train(TrainableModel& model, const BatchSource& train_src, const BatchSource& val_src,
                const BatchSource& test_src, const TrainConfig& cfg, std::uint64_t seed);

/// Deterministic record stream (header, one record per epoch, summary);
/// wall-clock timings go to a separate sidecar so reports byte-compare
/// across reruns.
void write_report_jsonl(const RunReport& report, const std::string& path);
void write_timing_json(const RunReport& report, const std::string& path);

struct SeedAggregate {
    std::vector<double> per_seed;
    double mean = 0.0;
    double stddev = 0.0;  // sample std, 0 for a single seed
};

SeedAggregate aggregate_metrics(const std::vector<double>& per_seed);

/// Everything needed to reproduce one training run.
struct RunContext {
    ModelConfig model;
    TrainConfig train;
    DataSpec data;

    nlohmann::json echo(std::uint64_t seed) const;
};

/// Build the model for the context (adopting the dataset's embedding table
/// for token tasks), train it, and hand back the trained model if asked.
RunReport run_single(const RunContext& ctx, const BuiltData& data, std::uint64_t seed,
                     Model* trained = nullptr);

}  // namespace aila
