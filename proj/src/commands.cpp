#include "aila/commands.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "aila/ablation.hpp"
#include "aila/config.hpp"
#include "aila/gradcheck.hpp"
#include "aila/model.hpp"
#include "aila/train.hpp"

namespace aila {

namespace {

namespace fs = std::filesystem;

// internal marker: checkpoint load already reported, map to its exit code
struct CheckpointFailure {};

int map_exception(std::ostream& err) {
    try {
        throw;
    } catch (const CheckpointFailure&) {
        return exit_code::checkpoint;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return exit_code::config;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return exit_code::data;
    } catch (const DivergedError& e) {
        err << "diverged: " << e.what() << "\n";
        return exit_code::diverged;
    } catch (const ShapeError& e) {
        err << "shape error: " << e.what() << "\n";
        return exit_code::internal;
    } catch (const ContractError& e) {
        err << "error: " << e.what() << "\n";
        return exit_code::internal;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_code::internal;
    }
}

std::string timestamp_dir(const std::string& prefix) {
    const auto now = std::chrono::system_clock::now();
    const std::time_t tt = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    const auto us = std::chrono::duration_cast<std::chrono::microseconds>(
                        now.time_since_epoch()).count() % 1000000;
    std::ostringstream os;
    os << prefix << "-" << std::put_time(&tm, "%Y%m%dT%H%M%S") << std::setw(6)
       << std::setfill('0') << us;
    return os.str();
}

// Fresh timestamped directory by default; an explicit --out must either not
// exist yet or be forced with --overwrite.
fs::path resolve_out_dir(const std::optional<std::string>& requested, bool overwrite,
                         const std::string& root, const std::string& prefix) {
    if (requested) {
        const fs::path dir(*requested);
        if (fs::exists(dir) && !overwrite) {
            throw ConfigError("output directory exists: " + *requested +
                              " (pass --overwrite to reuse it)");
        }
        fs::create_directories(dir);
        return dir;
    }
    fs::path dir = fs::path(root) / timestamp_dir(prefix);
    while (fs::exists(dir)) dir += "x";  // same-microsecond rerun
    fs::create_directories(dir);
    return dir;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot write " + path.string());
    f << text;
}

}  // namespace

// env var wins over the config's output_dir, which wins over "runs"
std::string output_root(const std::string& config_dir) {
    if (const char* env = std::getenv("AILA_OUT_ROOT"); env && *env) return env;
    return config_dir.empty() ? std::string("runs") : config_dir;
}

std::string output_root() { return output_root(""); }

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const TrainOptions& opts, std::ostream& out, std::ostream& err) {
    try {
        RunConfigFile cfg = parse_run_config(opts.config_path);
        for (const std::string& o : opts.overrides) apply_override(cfg, o);
        check_compatibility(cfg);

        std::vector<std::uint64_t> seeds =
            opts.seed ? std::vector<std::uint64_t>{*opts.seed} : cfg.ctx.train.seeds;

        const fs::path run_dir = resolve_out_dir(
            opts.out_dir, opts.overwrite,
            output_root(cfg.output_dir), "train");
        write_text(run_dir / "config.echo", render_run_config(cfg));

        const BuiltData data = make_dataset(cfg.ctx.data);
        std::vector<double> metrics;
        bool any_diverged = false;
        for (const std::uint64_t seed : seeds) {
            const fs::path seed_dir = run_dir / ("seed" + std::to_string(seed));
            fs::create_directories(seed_dir);
            Model trained;
            const RunReport report = run_single(cfg.ctx, data, seed, &trained);
            write_report_jsonl(report, (seed_dir / "report.jsonl").string());
            write_timing_json(report, (seed_dir / "timing.json").string());
            write_text(seed_dir / "echo.json", report.config_echo.dump(2) + "\n");
            trained.save_checkpoint((seed_dir / "checkpoint.bin").string(), report.config_echo);
            if (report.diverged) {
                any_diverged = true;
                err << "seed " << seed << " diverged: " << report.diverged_reason << "\n";
                continue;
            }
            metrics.push_back(report.test_metric);
            const std::streamsize saved = out.precision();
            out << "seed " << seed << ": test " << report.metric_name << " "
                << report.test_metric << " (best val " << report.best_val << " @ epoch "
                << report.best_epoch << ", " << std::fixed << std::setprecision(1)
                << report.train_seconds << "s)\n";
            out.unsetf(std::ios::fixed);
            out.precision(saved);
        }
        if (!metrics.empty()) {
            const SeedAggregate agg = aggregate_metrics(metrics);
            nlohmann::json summary{{"schema", "aila.aggregate/1"},
                                   {"seeds", seeds},
                                   {"mean", agg.mean},
                                   {"stddev", agg.stddev},
                                   {"metric", metric_name_of(cfg.ctx.train.loss)},
                                   {"diverged_runs", any_diverged}};
            write_text(run_dir / "aggregate.json", summary.dump(2) + "\n");
            out << "mean " << metric_name_of(cfg.ctx.train.loss) << " " << agg.mean << " +/- "
                << agg.stddev << "\n";
        }
        out << "run directory: " << run_dir.string() << "\n";
        return any_diverged ? exit_code::diverged : exit_code::ok;
    } catch (...) {
        return map_exception(err);
    }
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int cmd_eval(const EvalOptions& opts, std::ostream& out, std::ostream& err) {
    try {
        nlohmann::json run_echo;
        Model model = [&] {
            try {
                return Model::load_checkpoint(opts.checkpoint_path, &run_echo);
            } catch (const DataError& e) {
                err << "checkpoint error: " << e.what() << "\n";
                throw CheckpointFailure{};
            } catch (const ContractError& e) {
                err << "checkpoint mismatch: " << e.what() << "\n";
                throw CheckpointFailure{};
            }
        }();

        DataSpec data_spec;
        LossKind loss = LossKind::mse;
        if (opts.data_config) {
            RunConfigFile cfg = parse_run_config(*opts.data_config);
            data_spec = cfg.ctx.data;
            loss = cfg.ctx.train.loss;
        } else if (run_echo.contains("data")) {
            data_spec = DataSpec::from_json(run_echo.at("data"));
            loss = loss_kind_from_string(run_echo.at("train").at("loss").get<std::string>());
        } else {
            throw ConfigError("checkpoint has no data echo; pass --data");
        }

        const BuiltData data = make_dataset(data_spec);
        const auto test_view = data.view(Split::test);

        std::vector<std::optional<std::size_t>> knockouts;  // nullopt = none
        if (!opts.knockout) {
            knockouts.push_back(std::nullopt);
        } else if (*opts.knockout == "all") {
            for (std::size_t j = 1; j <= model.config().num_layers; ++j) knockouts.push_back(j);
        } else {
            std::size_t layer = 0;
            try {
                layer = std::stoul(*opts.knockout);
            } catch (const std::exception&) {
                throw ConfigError("--knockout expects a layer index or 'all'");
            }
            if (layer < 1 || layer > model.config().num_layers) {
                throw ConfigError("--knockout " + *opts.knockout + " out of range 1.." +
                                  std::to_string(model.config().num_layers));
            }
            knockouts.push_back(layer);
        }

        for (const auto& k : knockouts) {
            double metric = 0.0;
            if (k) {
                struct Masked final : TrainableModel {
                    Model* m;
                    std::set<std::size_t> mask;
                    Tensor predict(const Batch& b) const override {
                        return m->forward(b.x, &mask, nullptr,
                                          b.lengths.empty() ? nullptr : &b.lengths);
                    }
                    std::vector<std::pair<std::string, Tensor>>& params() override {
                        return m->registry();
                    }
                } masked;
                masked.m = &model;
                masked.mask = {*k - 1};
                metric = evaluate_metric(masked, *test_view, loss);
            } else {
                ModelAdapter adapter(model);
                metric = evaluate_metric(adapter, *test_view, loss);
            }
            nlohmann::json rec{{"metric", metric}, {"metric_name", metric_name_of(loss)}};
            rec["knockout"] = k ? nlohmann::json(*k) : nlohmann::json(nullptr);
            out << rec.dump() << "\n";
        }
        return exit_code::ok;
    } catch (...) {
        return map_exception(err);
    }
}

// ---------------------------------------------------------------------------
// ablate / compare
// ---------------------------------------------------------------------------

int cmd_ablate(const AblateOptions& opts, std::ostream& out, std::ostream& err) {
    try {
        RunConfigFile cfg = parse_run_config(opts.plan_path);
        check_compatibility(cfg);
        if (!cfg.has_ablation) {
            throw ConfigError(opts.plan_path + ": plan needs an 'ablation' section");
        }
        if (cfg.values.empty()) {
            throw ConfigError(opts.plan_path + ": ablation values list is empty");
        }
        const fs::path dir = resolve_out_dir(
            opts.out_dir, opts.overwrite,
            output_root(cfg.output_dir), "ablate");
        write_text(dir / "config.echo", render_run_config(cfg));

        AblationPlan plan;
        plan.base = cfg.ctx;
        plan.axis = cfg.axis;
        plan.values = cfg.values;
        plan.retrain_knockout = cfg.retrain_knockout;
        plan.out_dir = dir.string();
        const AblationReport report = run_ablation(plan);
        out << report.to_text();
        out << "report directory: " << dir.string() << "\n";
        return exit_code::ok;
    } catch (...) {
        return map_exception(err);
    }
}

int cmd_compare(const CompareOptions& opts, std::ostream& out, std::ostream& err) {
    try {
        RunConfigFile cfg = parse_run_config(opts.config_path);
        check_compatibility(cfg);
        const fs::path dir = resolve_out_dir(
            opts.out_dir, opts.overwrite,
            output_root(cfg.output_dir), "compare");
        write_text(dir / "config.echo", render_run_config(cfg));
        const AblationReport report = compare_variants(cfg.ctx, dir.string());
        out << report.to_text();
        out << "report directory: " << dir.string() << "\n";
        return exit_code::ok;
    } catch (...) {
        return map_exception(err);
    }
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

int cmd_gradcheck(const GradcheckOptions& opts, std::ostream& out, std::ostream& err) {
    try {
        if (opts.scale != "small" && opts.scale != "full") {
            throw ConfigError("--scale expects 'small' or 'full'");
        }
        const auto results = gradcheck_suite(opts.scale == "full");
        std::size_t passed = 0;
        out << "gradcheck scale=" << opts.scale << "\n";
        for (const auto& r : results) {
            out << "  " << std::left << std::setw(34) << r.name << std::right
                << std::scientific << std::setprecision(2) << " max_err " << r.max_err
                << "  tol " << r.tol << (r.pass ? "  ok" : "  FAIL") << "\n";
            out.unsetf(std::ios::scientific);
            if (r.pass) ++passed;
        }
        out << passed << "/" << results.size() << " within tolerance\n";
        return passed == results.size() ? exit_code::ok : exit_code::internal;
    } catch (...) {
        return map_exception(err);
    }
}

}  // namespace aila
