#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace aila {

// Exit codes, one per failure class so shells can assert failure modes.
namespace exit_code {
constexpr int ok = 0;
constexpr int internal = 1;   // unexpected errors, failed gradcheck
constexpr int config = 2;     // bad config/usage
constexpr int data = 3;       // unreadable or invalid data
constexpr int diverged = 4;   // training produced non-finite numbers
constexpr int checkpoint = 5; // checkpoint unreadable or mismatched
}  // namespace exit_code

struct TrainOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    bool overwrite = false;
    std::vector<std::string> overrides;  // section.key=value
};

struct EvalOptions {
    std::string checkpoint_path;
    std::optional<std::string> data_config;  // config file whose data section wins
    std::optional<std::string> knockout;     // "3" (1-based) or "all"
};

struct AblateOptions {
    std::string plan_path;
    std::optional<std::string> out_dir;
    bool overwrite = false;
};

struct CompareOptions {
    std::string config_path;
    std::optional<std::string> out_dir;
    bool overwrite = false;
};

struct GradcheckOptions {
    std::string scale = "small";  // small | full
};

int cmd_train(const TrainOptions& opts, std::ostream& out, std::ostream& err);
int cmd_eval(const EvalOptions& opts, std::ostream& out, std::ostream& err);
int cmd_ablate(const AblateOptions& opts, std::ostream& out, std::ostream& err);
int cmd_compare(const CompareOptions& opts, std::ostream& out, std::ostream& err);
int cmd_gradcheck(const GradcheckOptions& opts, std::ostream& out, std::ostream& err);

/// Resolves the output root: AILA_OUT_ROOT env var, then the config's
/// output_dir, then "runs".
std::string output_root(const std::string& config_dir);
std::string output_root();

}  // namespace aila
