#include "aila/ablation.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace aila {

std::string to_string(AblationAxis a) {
    switch (a) {
        case AblationAxis::variant: return "variant";
        case AblationAxis::heads: return "heads";
        case AblationAxis::depth: return "depth";
        case AblationAxis::knockout: return "knockout";
    }
    return "?";
}

AblationAxis ablation_axis_from_string(const std::string& s) {
    if (s == "variant") return AblationAxis::variant;
    if (s == "heads") return AblationAxis::heads;
    if (s == "depth") return AblationAxis::depth;
    if (s == "knockout") return AblationAxis::knockout;
    throw ConfigError("unknown ablation axis '" + s + "'");
}

void AblationPlan::validate() const {
    if (values.empty()) throw ConfigError("ablation values list is empty");
    base.model.validate();
    base.train.validate();
    if (axis == AblationAxis::knockout) {
        for (const std::string& v : values) {
            std::size_t layer = 0;
            try {
                layer = std::stoul(v);
            } catch (const std::exception&) {
                throw ConfigError("knockout value '" + v + "' is not a layer index");
            }
            if (layer < 1 || layer > base.model.num_layers) {
                throw ConfigError("knockout layer " + v + " out of range 1.." +
                                  std::to_string(base.model.num_layers));
            }
        }
    }
}

const CellResult& AblationReport::base_cell() const {
    for (const auto& c : cells) {
        if (c.label == base_label) return c;
    }
    throw ContractError("report has no base cell '" + base_label + "'");
}

// ---------------------------------------------------------------------------

namespace {

namespace fs = std::filesystem;

std::string sanitize(const std::string& s) {
    std::string out = s;
    for (char& c : out) {
        if (c == '=' ) c = '-';
        if (c == ' ' || c == '/') c = '_';
    }
    return out;
}

void finalize_cell(CellResult& cell) {
    const SeedAggregate agg = aggregate_metrics(cell.per_seed);
    cell.mean = agg.mean;
    cell.stddev = agg.stddev;
    cell.any_diverged = std::any_of(cell.diverged.begin(), cell.diverged.end(),
                                    [](bool d) { return d; });
}

void write_run_outputs(const std::string& out_dir, const std::string& label, std::uint64_t seed,
                       const RunReport& report, const Model* model) {
    if (out_dir.empty()) return;
    const fs::path dir = fs::path(out_dir) / "cells" / sanitize(label) / ("seed" + std::to_string(seed));
    fs::create_directories(dir);
    write_report_jsonl(report, (dir / "report.jsonl").string());
    write_timing_json(report, (dir / "timing.json").string());
    {
        std::ofstream f(dir / "echo.json", std::ios::trunc);
        f << report.config_echo.dump(2) << "\n";
    }
    if (model) model->save_checkpoint((dir / "checkpoint.bin").string(), report.config_echo);
}

/// Knockout wrapper: evaluation-time zeroing of chosen layers.
class KnockoutAdapter final : public TrainableModel {
  public:
    KnockoutAdapter(Model& m, std::set<std::size_t> mask) : model_(&m), mask_(std::move(mask)) {}

    Tensor predict(const Batch& batch) const override {
        return model_->forward(batch.x, &mask_, nullptr,
                               batch.lengths.empty() ? nullptr : &batch.lengths);
    }
    std::vector<std::pair<std::string, Tensor>>& params() override { return model_->registry(); }

  private:
    Model* model_;
    std::set<std::size_t> mask_;
};

RunContext context_for(const AblationPlan& plan, const std::string& value) {
    RunContext ctx = plan.base;
    switch (plan.axis) {
        case AblationAxis::variant:
            ctx.model.variant = variant_from_string(value);
            break;
        case AblationAxis::heads:
            ctx.model.heads = std::stoul(value);
            break;
        case AblationAxis::depth:
            ctx.model.num_layers = std::stoul(value);
            break;
        case AblationAxis::knockout:
            break;  // knockout never changes the trained model
    }
    ctx.model.validate();
    return ctx;
}

std::string label_for(const AblationPlan& plan, const std::string& value) {
    return to_string(plan.axis) + "=" + value;
}

std::string base_value_of(const AblationPlan& plan) {
    switch (plan.axis) {
        case AblationAxis::variant: return to_string(plan.base.model.variant);
        case AblationAxis::heads: return std::to_string(plan.base.model.heads);
        case AblationAxis::depth: return std::to_string(plan.base.model.num_layers);
        case AblationAxis::knockout: return "base";
    }
    return "base";
}

CellResult train_cell(const AblationPlan& plan, const RunContext& ctx, const std::string& label,
                      const BuiltData& data) {
    CellResult cell;
    cell.label = label;
    cell.dataset_fingerprint = data.fingerprint();
    cell.param_count = Model::build(ctx.model, ctx.train.seeds.front()).param_count();
    for (const std::uint64_t seed : ctx.train.seeds) {
        Model trained;
        const RunReport report = run_single(ctx, data, seed, &trained);
        cell.seeds.push_back(seed);
        cell.per_seed.push_back(report.test_metric);
        cell.diverged.push_back(report.diverged);
        cell.train_seconds += report.train_seconds;
        cell.inference_seconds += report.inference_seconds;
        write_run_outputs(plan.out_dir, label, seed, report, &trained);
    }
    finalize_cell(cell);
    return cell;
}

AblationReport knockout_ablation(const AblationPlan& plan, const BuiltData& data) {
    AblationReport report;
    report.axis = to_string(plan.axis);
    report.base_label = "base";
    report.metric_name = metric_name_of(plan.base.train.loss);

    CellResult base_cell;
    base_cell.label = "base";
    base_cell.dataset_fingerprint = data.fingerprint();
    base_cell.param_count =
        Model::build(plan.base.model, plan.base.train.seeds.front()).param_count();

    std::vector<CellResult> knock_cells;
    for (const std::string& v : plan.values) {
        CellResult c;
        c.label = label_for(plan, v);
        c.dataset_fingerprint = base_cell.dataset_fingerprint;
        c.param_count = base_cell.param_count;
        knock_cells.push_back(std::move(c));
    }

    const auto test_view = data.view(Split::test);
    for (const std::uint64_t seed : plan.base.train.seeds) {
        Model trained;
        const RunReport run = run_single(plan.base, data, seed, &trained);
        base_cell.seeds.push_back(seed);
        base_cell.per_seed.push_back(run.test_metric);
        base_cell.diverged.push_back(run.diverged);
        base_cell.train_seconds += run.train_seconds;
        base_cell.inference_seconds += run.inference_seconds;
        write_run_outputs(plan.out_dir, "base", seed, run, &trained);

        const std::uint64_t checksum_before = trained.param_checksum();
        for (std::size_t i = 0; i < plan.values.size(); ++i) {
            const std::size_t layer = std::stoul(plan.values[i]);  // 1-based
            double metric = 0.0;
            bool diverged = run.diverged;
            if (plan.retrain_knockout) {
                // optional mode: retrain with the layer silenced throughout
                Model fresh = Model::build(plan.base.model, seed);
                KnockoutAdapter adapter(fresh, {layer - 1});
                const auto train_view = data.view(Split::train);
                const auto val_view = data.view(Split::val);
                RunReport rr = train(adapter, *train_view, *val_view, *test_view,
                                     plan.base.train, seed);
                metric = rr.test_metric;
                diverged = rr.diverged;
            } else if (!run.diverged) {
                KnockoutAdapter adapter(trained, {layer - 1});
                metric = evaluate_metric(adapter, *test_view, plan.base.train.loss);
            }
            knock_cells[i].seeds.push_back(seed);
            knock_cells[i].per_seed.push_back(metric);
            knock_cells[i].diverged.push_back(diverged);
        }
        if (!plan.retrain_knockout && trained.param_checksum() != checksum_before) {
            throw ContractError("knockout evaluation mutated trained parameters");
        }
    }

    finalize_cell(base_cell);
    report.cells.push_back(std::move(base_cell));
    for (auto& c : knock_cells) {
        finalize_cell(c);
        c.delta_vs_base = c.mean - report.cells.front().mean;
        c.within_noise = std::abs(c.delta_vs_base) <= report.cells.front().stddev;
        report.cells.push_back(std::move(c));
    }
    return report;
}

void write_report_files(const AblationReport& report, const std::string& out_dir) {
    if (out_dir.empty()) return;
    fs::create_directories(out_dir);
    {
        std::ofstream f(fs::path(out_dir) / "report.json", std::ios::trunc);
        f << report.to_json().dump(2) << "\n";
    }
    {
        std::ofstream f(fs::path(out_dir) / "report.txt", std::ios::trunc);
        f << report.to_text();
    }
}

}  // namespace

AblationReport run_ablation(const AblationPlan& plan) {
    plan.validate();
    const BuiltData data = make_dataset(plan.base.data);

    AblationReport report;
    if (plan.axis == AblationAxis::knockout) {
        report = knockout_ablation(plan, data);
    } else {
        report.axis = to_string(plan.axis);
        report.metric_name = metric_name_of(plan.base.train.loss);
        const std::string base_value = base_value_of(plan);
        report.base_label = to_string(plan.axis) + "=" + base_value;

        std::vector<std::string> values = plan.values;
        if (std::find(values.begin(), values.end(), base_value) == values.end()) {
            values.insert(values.begin(), base_value);
        }
        for (const std::string& v : values) {
            report.cells.push_back(train_cell(plan, context_for(plan, v), label_for(plan, v), data));
        }
        const double base_mean = report.base_cell().mean;
        const double base_std = report.base_cell().stddev;
        for (auto& c : report.cells) {
            c.delta_vs_base = c.mean - base_mean;
            c.within_noise = c.label != report.base_label &&
                             std::abs(c.delta_vs_base) <= base_std;
        }
    }
    write_report_files(report, plan.out_dir);
    return report;
}

AblationReport compare_variants(const RunContext& base, const std::string& out_dir) {
    AblationPlan plan;
    plan.base = base;
    plan.axis = AblationAxis::variant;
    plan.values = {"aila1", "aila2", "plain", "residual_sum", "dense_concat"};
    plan.out_dir = out_dir;
    return run_ablation(plan);
}

// ---------------------------------------------------------------------------
// Report rendering
// ---------------------------------------------------------------------------

nlohmann::json AblationReport::to_json() const {
    nlohmann::json cells_json = nlohmann::json::array();
    for (const auto& c : cells) {
        cells_json.push_back({{"label", c.label},
                              {"seeds", c.seeds},
                              {"per_seed", c.per_seed},
                              {"diverged", c.diverged},
                              {"mean", c.mean},
                              {"stddev", c.stddev},
                              {"delta_vs_base", c.delta_vs_base},
                              {"within_noise", c.within_noise},
                              {"train_seconds", c.train_seconds},
                              {"inference_seconds", c.inference_seconds},
                              {"param_count", c.param_count},
                              {"dataset_fingerprint", c.dataset_fingerprint},
                              {"any_diverged", c.any_diverged}});
    }
    return nlohmann::json{{"schema", "aila.ablation/1"},
                          {"axis", axis},
                          {"base", base_label},
                          {"metric", metric_name},
                          {"cells", cells_json}};
}

std::string AblationReport::to_text() const {
    std::ostringstream os;
    os << "ablation axis: " << axis << "   metric: " << metric_name << "   base: " << base_label
       << "\n";
    os << std::left << std::setw(22) << "cell" << std::right << std::setw(12) << "mean"
       << std::setw(12) << "std" << std::setw(12) << "delta" << std::setw(10) << "params"
       << std::setw(10) << "train_s" << "\n";
    for (const auto& c : cells) {
        os << std::left << std::setw(22) << (c.label + (c.any_diverged ? " !" : ""))
           << std::right << std::fixed << std::setprecision(5) << std::setw(12) << c.mean
           << std::setw(12) << c.stddev << std::setw(12) << c.delta_vs_base << std::setw(10)
           << c.param_count << std::setprecision(1) << std::setw(10) << c.train_seconds;
        os.unsetf(std::ios::fixed);
        if (c.within_noise) os << "  (within noise)";
        os << "\n";
    }
    return os.str();
}

}  // namespace aila
