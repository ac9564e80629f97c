#pragma once

#include <functional>
#include <map>
#include <string>

#include "stpconv/blocks.hpp"
#include "stpconv/maskgen.hpp"
#include "stpconv/model.hpp"
#include "stpconv/train.hpp"

namespace stpconv::cli {

// One plain-text key=value file drives every command; unknown keys are
// rejected so typos cannot silently fall back to defaults. Every command
// writes the fully resolved configuration next to its outputs.
struct RunConfig {
    ModelSpec model;
    std::uint64_t model_seed = 1;
    TrainConfig train;
    GapConfig gaps;
    SyntheticConfig synthetic;
    Dims3 grid_block{128, 128, 16};
    Dims3 grid_margin{4, 4, 0};
    std::string data_dir;
    std::string model_dir;
    std::string output_dir;
    std::string raster_path;
    int threads = 0;  // 0: all cores for prediction, single-threaded training
    double render_vmin = 0.0;
    double render_vmax = 0.07;

    std::map<std::string, std::string> raw;  // as parsed, for the resolved copy

    int prediction_threads() const;
    int training_threads() const;
};

RunConfig parse_run_config(const std::string& path);

// The resolved key=value text (defaults filled in, fixed key order).
std::string resolved_config_text(const RunConfig& config);

struct CommandTiming {
    double predict_seconds = 0.0;
    double io_seconds = 0.0;
};

int cmd_generate(const RunConfig& config);
int cmd_train(const RunConfig& config);
int cmd_predict(const RunConfig& config, const std::string& method, bool merge,
                CommandTiming* timing = nullptr);
int cmd_evaluate(const RunConfig& config, const std::string& strategy, const std::string& method,
                 CommandTiming* timing = nullptr);
int cmd_simulate_gaps(const RunConfig& config);
int cmd_stitch(const RunConfig& config, const std::string& method,
               CommandTiming* timing = nullptr);

// Maps exceptions to the documented exit codes: 1 usage/config, 2 data,
// 3 numerical failure.
int run_guarded(const std::function<int()>& body);

}  // namespace stpconv::cli
