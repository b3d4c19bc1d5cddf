#include <iostream>

#include <CLI11.hpp>

#include "aila/commands.hpp"

int main(int argc, char** argv) {
    CLI::App app{"AILA experiments: adaptive cross-layer attention networks"};
    app.require_subcommand(1);

    aila::TrainOptions train_opts;
    auto* train = app.add_subcommand("train", "train a model from a config file");
    train->add_option("-c,--config", train_opts.config_path, "run config file")->required();
    std::uint64_t seed_value = 0;
    auto* seed_opt = train->add_option("--seed", seed_value, "run a single seed");
    std::string out_value;
    auto* out_opt = train->add_option("--out", out_value, "output directory");
    train->add_flag("--overwrite", train_opts.overwrite, "reuse an existing --out directory");
    train->add_option("--set", train_opts.overrides, "override config values (section.key=value)");

    aila::EvalOptions eval_opts;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("checkpoint", eval_opts.checkpoint_path, "checkpoint file")->required();
    std::string eval_data;
    auto* eval_data_opt = eval->add_option("--data", eval_data, "config file overriding the data");
    std::string knockout_value;
    auto* knockout_opt =
        eval->add_option("--knockout", knockout_value, "zero one layer (1-based index) or 'all'");

    aila::AblateOptions ablate_opts;
    auto* ablate = app.add_subcommand("ablate", "run an ablation plan");
    ablate->add_option("plan", ablate_opts.plan_path, "plan config file")->required();
    std::string ablate_out;
    auto* ablate_out_opt = ablate->add_option("--out", ablate_out, "output directory");
    ablate->add_flag("--overwrite", ablate_opts.overwrite, "reuse an existing --out directory");

    aila::CompareOptions compare_opts;
    auto* compare = app.add_subcommand("compare", "train all five variants and compare");
    compare->add_option("-c,--config", compare_opts.config_path, "run config file")->required();
    std::string compare_out;
    auto* compare_out_opt = compare->add_option("--out", compare_out, "output directory");
    compare->add_flag("--overwrite", compare_opts.overwrite, "reuse an existing --out directory");

    aila::GradcheckOptions grad_opts;
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    gradcheck->add_option("--scale", grad_opts.scale, "small (default) or full");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : aila::exit_code::config;
    }

    if (train->parsed()) {
        if (!seed_opt->empty()) train_opts.seed = seed_value;
        if (!out_opt->empty()) train_opts.out_dir = out_value;
        return aila::cmd_train(train_opts, std::cout, std::cerr);
    }
    if (eval->parsed()) {
        if (!eval_data_opt->empty()) eval_opts.data_config = eval_data;
        if (!knockout_opt->empty()) eval_opts.knockout = knockout_value;
        return aila::cmd_eval(eval_opts, std::cout, std::cerr);
    }
    if (ablate->parsed()) {
        if (!ablate_out_opt->empty()) ablate_opts.out_dir = ablate_out;
        return aila::cmd_ablate(ablate_opts, std::cout, std::cerr);
    }
    if (compare->parsed()) {
        if (!compare_out_opt->empty()) compare_opts.out_dir = compare_out;
        return aila::cmd_compare(compare_opts, std::cout, std::cerr);
    }
    if (gradcheck->parsed()) {
        return aila::cmd_gradcheck(grad_opts, std::cout, std::cerr);
    }
    return aila::exit_code::config;
}
