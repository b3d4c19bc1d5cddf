#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "aila/tensor.hpp"

namespace aila {

struct Batch {
    Tensor x;
    Tensor y;                          // (batch x 1): value, 0/1 label, or class id
    std::vector<std::size_t> lengths;  // token sequences only
};

/// One split of a dataset, addressable by example index.
class BatchSource {
  public:
    virtual ~BatchSource() = default;
    virtual std::size_t size() const = 0;
    virtual Batch gather(std::span<const std::size_t> idx) const = 0;
};

enum class Split : std::uint8_t { train, val, test };

/// Per-feature normalization statistics, log domain.
struct NormRecord {
    double mean = 0.0;
    double stddev = 1.0;

    double normalize(double log_v) const { return (log_v - mean) / stddev; }
    double denormalize(double z) const { return z * stddev + mean; }
};

/// Sliding-window series task: windows of length T predicting the value
/// `horizon` steps past the window end, chronologically split 70/15/15.
struct SeriesDataset {
    std::size_t window = 0;  // T
    std::size_t horizon = 1;
    std::size_t input_dim = 1;
    std::vector<double> inputs;   // n * T * input_dim, row-major
    std::vector<double> targets;  // n
    NormRecord norm;
    std::size_t train_end = 0;  // window-index split boundaries
    std::size_t val_end = 0;

    std::size_t size() const { return targets.size(); }
    std::unique_ptr<BatchSource> view(Split s) const;
    std::uint64_t fingerprint() const;

    void save_cache(const std::string& path) const;
    static SeriesDataset load_cache(const std::string& path);
};

/// Synthetic token-classification task: padded id sequences with binary
/// labels, plus the initial (learnable) embedding table models adopt.
struct TokenDataset {
    std::size_t length = 0;  // L, padded length
    std::size_t vocab = 0;
    std::size_t pad_id = 0;
    std::size_t embed_dim = 0;
    std::vector<int> tokens;  // n * L
    std::vector<std::size_t> lengths;
    std::vector<int> labels;
    Tensor embedding;  // vocab x embed_dim
    std::size_t train_end = 0;
    std::size_t val_end = 0;

    std::size_t size() const { return labels.size(); }
    std::unique_ptr<BatchSource> view(Split s) const;
    std::uint64_t fingerprint() const;
};

/// CSV schema: header row, ISO-8601 'date' column, named value column,
/// extra columns ignored. Values are log-transformed; normalization uses
/// training-split statistics only. Optional month-end aggregation.
SeriesDataset load_csv_series(const std::string& path, const std::string& value_column,
                              std::size_t window, std::size_t horizon, bool monthly = false);

/// Target depends only on the input `lag` steps before the window end,
/// through a fixed nonlinearity; white-noise inputs make the last step
/// useless, so solving the task requires reaching back.
SeriesDataset synth_long_memory(std::size_t num_examples, std::size_t window, std::size_t lag,
                                std::uint64_t seed, double noise_scale = 0.05);

/// The nonlinearity behind synth_long_memory targets.
double long_memory_target_fn(double x);

/// Label 1 iff marker token A occurs before marker token B; classes balanced
/// within one example by construction.
TokenDataset synth_token_task(std::size_t num_examples, std::size_t length, std::size_t vocab,
                              std::uint64_t seed, std::size_t embed_dim = 16);

std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t shuffle_seed);
std::vector<Batch> batches(const BatchSource& src, std::size_t batch_size,
                           std::uint64_t shuffle_seed);

// ---------------------------------------------------------------------------
// Dataset specification shared by the CLI, training and ablation layers.
// ---------------------------------------------------------------------------

struct DataSpec {
    std::string kind;  // csv | synth_long_memory | synth_token

    std::string path;          // csv
    std::string value_column;  // csv
    bool monthly = false;      // csv

    std::size_t window = 24;
    std::size_t horizon = 1;

    std::size_t examples = 2000;  // synthetic
    std::size_t lag = 12;
    double noise = 0.05;
    std::uint64_t seed = 7;

    std::size_t length = 16;  // tokens
    std::size_t vocab = 16;
    std::size_t embed_dim = 16;

    nlohmann::json to_json() const;
    static DataSpec from_json(const nlohmann::json& j);
};

/// A materialized DataSpec: exactly one of the dataset members is set.
struct BuiltData {
    std::optional<SeriesDataset> series;
    std::optional<TokenDataset> tokens;

    bool is_series() const { return series.has_value(); }
    std::unique_ptr<BatchSource> view(Split s) const;
    std::uint64_t fingerprint() const;
};

BuiltData make_dataset(const DataSpec& spec);

}  // namespace aila
