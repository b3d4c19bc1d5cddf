#pragma once

#include <string>
#include <vector>

#include "aila/ablation.hpp"
#include "aila/train.hpp"

namespace aila {

/// Parsed run configuration file. The format is a flat two-level document:
/// top-level `section:` headers (model, train, data, ablation) with 2-space
/// indented `key: value` lines, plus scalar top-level keys (output_dir).
/// '#' starts a comment. Unknown keys are rejected with file:line messages.
struct RunConfigFile {
    RunContext ctx;
    std::string output_dir = "runs";
    bool has_ablation = false;
    AblationAxis axis = AblationAxis::variant;
    std::vector<std::string> values;
    bool retrain_knockout = false;
};

RunConfigFile parse_run_config_text(const std::string& text, const std::string& filename);
RunConfigFile parse_run_config(const std::string& path);

/// Applies one `section.key=value` (or `output_dir=value`) override on top of
/// a parsed file; bad keys fail exactly like bad file keys.
void apply_override(RunConfigFile& cfg, const std::string& assignment);

/// Loss kind and head kind must agree before a run starts.
void check_compatibility(const RunConfigFile& cfg);

/// Deterministic round-trip rendering of the resolved configuration, in the
/// same format parse_run_config accepts.
std::string render_run_config(const RunConfigFile& cfg);

}  // namespace aila
