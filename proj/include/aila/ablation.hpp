#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "aila/train.hpp"

namespace aila {

enum class AblationAxis : std::uint8_t { variant, heads, depth, knockout };

std::string to_string(AblationAxis a);
AblationAxis ablation_axis_from_string(const std::string& s);

/// One sweep: vary a single axis of the base context across `values`.
/// Knockout values are 1-based layer indices and are evaluated on the
/// trained base model without retraining (unless retrain_knockout is set).
struct AblationPlan {
    RunContext base;
    AblationAxis axis = AblationAxis::variant;
    std::vector<std::string> values;
    bool retrain_knockout = false;
    std::string out_dir;  // empty: keep the report in memory only

    void validate() const;
};

struct CellResult {
    std::string label;
    std::vector<std::uint64_t> seeds;
    std::vector<double> per_seed;  // test metric per seed
    std::vector<bool> diverged;
    double mean = 0.0;
    double stddev = 0.0;
    double delta_vs_base = 0.0;
    bool within_noise = false;  // |delta| inside the base cell's seed std
    double train_seconds = 0.0;
    double inference_seconds = 0.0;
    std::size_t param_count = 0;
    std::uint64_t dataset_fingerprint = 0;
    bool any_diverged = false;
};

struct AblationReport {
    std::string axis;
    std::string base_label;
    std::string metric_name;
    std::vector<CellResult> cells;

    const CellResult& base_cell() const;
    nlohmann::json to_json() const;
    std::string to_text() const;
};

AblationReport run_ablation(const AblationPlan& plan);

/// The five-way variant comparison at matched depth/width; reports metric,
/// parameter count and wall-clock per variant.
AblationReport compare_variants(const RunContext& base, const std::string& out_dir = "");

}  // namespace aila
