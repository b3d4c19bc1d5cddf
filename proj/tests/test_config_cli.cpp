#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "aila/commands.hpp"
#include "aila/config.hpp"

using namespace aila;

namespace {

namespace fs = std::filesystem;

const char* kGoodConfig = R"(# tiny run
model:
  variant: aila2
  layers: 2
  hidden: 4
  dk: 4
  dv: 4
  base: lstm
  head: regression
train:
  lr: 0.002
  epochs: 2
  batch: 16
  patience: 5
  seeds: 1,2
  loss: mse
data:
  kind: synth_long_memory
  examples: 60
  window: 6
  lag: 2
  noise: 0.05
  seed: 9
output_dir: runs
)";

std::string write_temp(const std::string& name, const std::string& content) {
    const std::string path = (fs::temp_directory_path() / name).string();
    std::ofstream f(path, std::ios::trunc);
    f << content;
    return path;
}

struct CliResult {
    int exit_code = -1;
    std::string output;  // stdout + stderr
};

CliResult run_cli(const std::string& args, const std::string& env_prefix = "") {
    const std::string cmd = env_prefix + std::string(AILA_CLI_BIN) + " " + args + " 2>&1";
    std::array<char, 4096> buf{};
    std::string output;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    while (fgets(buf.data(), buf.size(), pipe)) output += buf.data();
    const int status = pclose(pipe);
    return {WEXITSTATUS(status), output};
}

std::string file_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("run config files parse into the three configs") {
    const RunConfigFile cfg = parse_run_config_text(kGoodConfig, "test.yaml");
    CHECK(cfg.ctx.model.variant == Variant::aila2);
    CHECK(cfg.ctx.model.num_layers == 2);
    CHECK(cfg.ctx.train.lr == 0.002);
    CHECK(cfg.ctx.train.seeds == std::vector<std::uint64_t>{1, 2});
    CHECK(cfg.ctx.data.kind == "synth_long_memory");
    CHECK(cfg.ctx.data.examples == 60);
    CHECK(cfg.output_dir == "runs");
    check_compatibility(cfg);
}

TEST_CASE("unknown keys are rejected with the offending line") {
    const std::string bad = "modle:\n  variant: aila2\ndata:\n  kind: synth_long_memory\n";
    try {
        parse_run_config_text(bad, "bad.yaml");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("bad.yaml:1") != std::string::npos);
        CHECK(msg.find("modle") != std::string::npos);
    }

    const std::string bad_sub = "model:\n  variant: aila2\n  hiden: 4\n";
    try {
        parse_run_config_text(bad_sub, "bad2.yaml");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("bad2.yaml:3") != std::string::npos);
        CHECK(msg.find("hiden") != std::string::npos);
    }
}

TEST_CASE("config values are validated with key and line context") {
    const std::string bad_num = "train:\n  lr: fast\ndata:\n  kind: synth_long_memory\n";
    CHECK_THROWS_AS(parse_run_config_text(bad_num, "x.yaml"), ConfigError);

    const std::string no_kind = "model:\n  variant: aila2\n";
    CHECK_THROWS_AS(parse_run_config_text(no_kind, "x.yaml"), ConfigError);

    const std::string bad_variant = "model:\n  variant: aila3\ndata:\n  kind: csv\n";
    try {
        parse_run_config_text(bad_variant, "x.yaml");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("x.yaml:2") != std::string::npos);
    }
}

TEST_CASE("overrides reuse the config schema") {
    RunConfigFile cfg = parse_run_config_text(kGoodConfig, "test.yaml");
    apply_override(cfg, "model.heads=2");
    apply_override(cfg, "train.lr=0.01");
    apply_override(cfg, "output_dir=elsewhere");
    CHECK(cfg.ctx.model.heads == 2);
    CHECK(cfg.ctx.train.lr == 0.01);
    CHECK(cfg.output_dir == "elsewhere");
    CHECK_THROWS_AS(apply_override(cfg, "model.hiden=4"), ConfigError);
    CHECK_THROWS_AS(apply_override(cfg, "no_equals"), ConfigError);
}

TEST_CASE("rendered configs parse back to the same values") {
    RunConfigFile cfg = parse_run_config_text(kGoodConfig, "test.yaml");
    const RunConfigFile back = parse_run_config_text(render_run_config(cfg), "render.yaml");
    CHECK(back.ctx.model.to_json() == cfg.ctx.model.to_json());
    CHECK(back.ctx.train.to_json() == cfg.ctx.train.to_json());
    CHECK(back.ctx.data.to_json() == cfg.ctx.data.to_json());
}

TEST_CASE("incompatible head and loss kinds are rejected") {
    RunConfigFile cfg = parse_run_config_text(kGoodConfig, "test.yaml");
    cfg.ctx.train.loss = LossKind::binary_ce;
    CHECK_THROWS_AS(check_compatibility(cfg), ConfigError);
}

TEST_CASE("cli trains, evaluates and reproduces runs byte-identically") {
    const std::string config = write_temp("aila_cli_cfg.yaml", kGoodConfig);
    const fs::path out1 = fs::temp_directory_path() / "aila_cli_run1";
    const fs::path out2 = fs::temp_directory_path() / "aila_cli_run2";
    fs::remove_all(out1);
    fs::remove_all(out2);

    const CliResult r1 =
        run_cli("train -c " + config + " --seed 1 --out " + out1.string());
    INFO(r1.output);
    REQUIRE(r1.exit_code == 0);
    CHECK(fs::exists(out1 / "seed1" / "report.jsonl"));
    CHECK(fs::exists(out1 / "seed1" / "checkpoint.bin"));
    CHECK(fs::exists(out1 / "seed1" / "timing.json"));
    CHECK(fs::exists(out1 / "config.echo"));
    CHECK(fs::exists(out1 / "aggregate.json"));

    // rerunning into an existing directory is refused without --overwrite
    const CliResult refused =
        run_cli("train -c " + config + " --seed 1 --out " + out1.string());
    CHECK(refused.exit_code == exit_code::config);

    const CliResult r2 =
        run_cli("train -c " + config + " --seed 1 --out " + out2.string());
    REQUIRE(r2.exit_code == 0);
    CHECK(file_bytes(out1 / "seed1" / "checkpoint.bin") ==
          file_bytes(out2 / "seed1" / "checkpoint.bin"));
    CHECK(file_bytes(out1 / "seed1" / "report.jsonl") ==
          file_bytes(out2 / "seed1" / "report.jsonl"));

    // eval reproduces the reported test metric exactly
    std::ifstream rep(out1 / "seed1" / "report.jsonl");
    std::string line, last;
    while (std::getline(rep, line)) {
        if (!line.empty()) last = line;
    }
    const double reported = nlohmann::json::parse(last).at("test_metric").get<double>();
    const CliResult ev = run_cli("eval " + (out1 / "seed1" / "checkpoint.bin").string());
    REQUIRE(ev.exit_code == 0);
    const double evaluated = nlohmann::json::parse(ev.output).at("metric").get<double>();
    CHECK(std::abs(evaluated - reported) < 1e-12);

    // --data pointing at the same spec reproduces the same metric
    const CliResult ev2 = run_cli("eval " + (out1 / "seed1" / "checkpoint.bin").string() +
                                  " --data " + config);
    REQUIRE(ev2.exit_code == 0);
    CHECK(std::abs(nlohmann::json::parse(ev2.output).at("metric").get<double>() - reported) <
          1e-12);

    // knockout: index 0 is a usage error, 'all' yields one record per layer
    const CliResult bad =
        run_cli("eval " + (out1 / "seed1" / "checkpoint.bin").string() + " --knockout 0");
    CHECK(bad.exit_code == exit_code::config);
    const CliResult all =
        run_cli("eval " + (out1 / "seed1" / "checkpoint.bin").string() + " --knockout all");
    REQUIRE(all.exit_code == 0);
    std::istringstream lines(all.output);
    std::size_t records = 0;
    while (std::getline(lines, line)) {
        if (!line.empty() && line.front() == '{') ++records;
    }
    CHECK(records == 2);  // two layers

    fs::remove_all(out1);
    fs::remove_all(out2);
    std::remove(config.c_str());
}

TEST_CASE("cli maps failure classes to distinct exit codes") {
    // bad config key -> config error, message cites the line
    const std::string bad = write_temp("aila_cli_bad.yaml",
                                       "modle:\n  variant: aila2\ndata:\n  kind: synth_long_memory\n");
    const CliResult r = run_cli("train -c " + bad);
    CHECK(r.exit_code == exit_code::config);
    CHECK(r.output.find(":1") != std::string::npos);
    CHECK(r.output.find("modle") != std::string::npos);
    std::remove(bad.c_str());

    // missing config file -> config error
    CHECK(run_cli("train -c /nonexistent.yaml").exit_code == exit_code::config);

    // unreadable csv -> data error
    const std::string csv_cfg = write_temp("aila_cli_csv.yaml",
                                           "data:\n  kind: csv\n  path: /nope.csv\n  column: p\n");
    CHECK(run_cli("train -c " + csv_cfg).exit_code == exit_code::data);
    std::remove(csv_cfg.c_str());

    // divergence -> its own exit code
    std::string diverge(kGoodConfig);
    diverge.replace(diverge.find("lr: 0.002"), 9, "lr: 1e155");
    const std::string dcfg = write_temp("aila_cli_div.yaml", diverge);
    const fs::path dout = fs::temp_directory_path() / "aila_cli_div";
    fs::remove_all(dout);
    CHECK(run_cli("train -c " + dcfg + " --seed 1 --out " + dout.string()).exit_code ==
          exit_code::diverged);
    fs::remove_all(dout);
    std::remove(dcfg.c_str());

    // unreadable checkpoint -> checkpoint error
    const std::string nockpt = write_temp("aila_cli_nockpt.bin", "junk");
    CHECK(run_cli("eval " + nockpt).exit_code == exit_code::checkpoint);
    std::remove(nockpt.c_str());
}

TEST_CASE("cli ablate validates plans and writes cell directories") {
    std::string plan(kGoodConfig);
    plan += "ablation:\n  axis: knockout\n  values: 1,2\n";
    const std::string plan_path = write_temp("aila_cli_plan.yaml", plan);
    const fs::path out = fs::temp_directory_path() / "aila_cli_ablate";
    fs::remove_all(out);

    const CliResult r = run_cli("ablate " + plan_path + " --out " + out.string());
    INFO(r.output);
    REQUIRE(r.exit_code == 0);
    CHECK(fs::exists(out / "report.json"));
    CHECK(fs::exists(out / "report.txt"));
    CHECK(fs::exists(out / "cells" / "base" / "seed1" / "checkpoint.bin"));
    fs::remove_all(out);

    std::string empty_plan(kGoodConfig);
    empty_plan += "ablation:\n  axis: depth\n";
    const std::string empty_path = write_temp("aila_cli_plan_empty.yaml", empty_plan);
    CHECK(run_cli("ablate " + empty_path).exit_code == exit_code::config);
    std::remove(empty_path.c_str());
    std::remove(plan_path.c_str());
}

TEST_CASE("environment variable overrides the output root") {
    const fs::path root = fs::temp_directory_path() / "aila_env_root";
    fs::remove_all(root);
    const std::string config = write_temp("aila_cli_env.yaml", kGoodConfig);
    const CliResult r =
        run_cli("train -c " + config + " --seed 1", "AILA_OUT_ROOT=" + root.string() + " ");
    INFO(r.output);
    REQUIRE(r.exit_code == 0);
    bool found = false;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (fs::exists(entry.path() / "seed1" / "checkpoint.bin")) found = true;
    }
    CHECK(found);
    fs::remove_all(root);
    std::remove(config.c_str());
}

TEST_CASE("cli gradcheck small passes quickly") {
    const CliResult r = run_cli("gradcheck --scale small");
    INFO(r.output);
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("within tolerance") != std::string::npos);
}
