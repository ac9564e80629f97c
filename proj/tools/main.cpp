#include <CLI11.hpp>

#include "cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"stpconv: gap filling for spatiotemporal raster blocks with partial convolutions"};
    app.require_subcommand(1);

    std::string config_path;
    std::string method = "stpconv";
    std::string strategy = "gaps";
    bool merge = false;

    auto add_config = [&config_path](CLI::App* cmd) {
        cmd->add_option("-c,--config", config_path, "key=value run configuration file")
            ->required();
    };

    auto* generate = app.add_subcommand("generate", "write a synthetic block dataset");
    add_config(generate);

    auto* train = app.add_subcommand("train", "train a model on a block dataset");
    add_config(train);

    auto* predict = app.add_subcommand("predict", "fill gaps in every block of a dataset");
    add_config(predict);
    predict->add_option("--method", method, "stpconv, mean, or interp")
        ->check(CLI::IsMember({"stpconv", "mean", "interp"}));
    predict->add_flag("--merge", merge, "keep original observations where present");

    auto* evaluate = app.add_subcommand("evaluate", "score a method under a validation strategy");
    add_config(evaluate);
    evaluate->add_option("--method", method, "stpconv, mean, or interp")
        ->check(CLI::IsMember({"stpconv", "mean", "interp"}));
    evaluate->add_option("--strategy", strategy, "gaps or onestep")
        ->check(CLI::IsMember({"gaps", "onestep"}));

    auto* simulate = app.add_subcommand("simulate-gaps", "write gap-masked copies of a dataset");
    add_config(simulate);

    auto* stitch = app.add_subcommand("stitch", "tiled prediction over a large raster");
    add_config(stitch);
    stitch->add_option("--method", method, "stpconv, mean, or interp")
        ->check(CLI::IsMember({"stpconv", "mean", "interp"}));

    CLI11_PARSE(app, argc, argv);

    return stpconv::cli::run_guarded([&]() {
        const stpconv::cli::RunConfig config = stpconv::cli::parse_run_config(config_path);
        if (generate->parsed()) return stpconv::cli::cmd_generate(config);
        if (train->parsed()) return stpconv::cli::cmd_train(config);
        if (predict->parsed()) return stpconv::cli::cmd_predict(config, method, merge);
        if (evaluate->parsed()) return stpconv::cli::cmd_evaluate(config, strategy, method);
        if (simulate->parsed()) return stpconv::cli::cmd_simulate_gaps(config);
        if (stitch->parsed()) return stpconv::cli::cmd_stitch(config, method);
        return 1;
    });
}
