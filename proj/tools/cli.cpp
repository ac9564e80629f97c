#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "stpconv/baselines.hpp"
#include "stpconv/eval.hpp"
#include "stpconv/parallel.hpp"
#include "stpconv/rng.hpp"

namespace stpconv::cli {

namespace fs = std::filesystem;

namespace {

using SchemaEntry = std::pair<const char*, const char*>;  // key, default

// Every legal key with its default. Order defines the resolved-file layout.
const std::vector<SchemaEntry>& schema() {
    static const std::vector<SchemaEntry> entries = {
        {"model.num_blocks", "2"},
        {"model.layers_per_block", "1"},
        {"model.strides", "2,2,2;2,2,2"},
        {"model.kernels", "3,3,3"},
        {"model.filters", "16,16"},
        {"model.alpha", "0.1"},
        {"model.in_channels", "1"},
        {"model.out_channels", "1"},
        {"model.seed", "1"},
        {"train.learning_rate", "0.005"},
        {"train.lr_decay_every", "10"},
        {"train.lr_decay_factor", "0.1"},
        {"train.epochs", "30"},
        {"train.batch_size", "6"},
        {"train.seed", "1"},
        {"train.adam_beta1", "0.9"},
        {"train.adam_beta2", "0.999"},
        {"train.adam_epsilon", "1e-8"},
        {"gaps.correlation_length", "10"},
        {"gaps.fraction", "0.3"},
        {"gaps.seed", "1"},
        {"synthetic.n_blocks", "8"},
        {"synthetic.shape", "64,64,16,1"},
        {"synthetic.bumps", "6"},
        {"synthetic.amp", "0.02,0.05"},
        {"synthetic.sigma", "5,10"},
        {"synthetic.velocity", "1.5,-1.0"},
        {"synthetic.velocity_jitter", "0"},
        {"synthetic.noise_sd", "0.0005"},
        {"synthetic.native_fraction", "0.2"},
        {"synthetic.native_correlation", "6"},
        {"synthetic.seed", "1"},
        {"grid.block", "128,128,16"},
        {"grid.margin", "4,4,0"},
        {"paths.data_dir", ""},
        {"paths.model_dir", ""},
        {"paths.output_dir", ""},
        {"paths.raster", ""},
        {"run.threads", "0"},
        {"render.vmin", "0"},
        {"render.vmax", "0.07"},
    };
    return entries;
}

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

class KeyValues {
  public:
    explicit KeyValues(std::map<std::string, std::string> values) : values_(std::move(values)) {}

    std::string get(const std::string& key) const {
        const auto it = values_.find(key);
        if (it != values_.end()) return it->second;
        for (const auto& [k, d] : schema()) {
            if (key == k) return d;
        }
        throw ConfigError("config key '" + key + "' is not in the schema");
    }

    std::int64_t get_i64(const std::string& key) const {
        try {
            return std::stoll(get(key));
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "': expected an integer, got '" + get(key) +
                              "'");
        }
    }

    std::uint64_t get_u64(const std::string& key) const {
        try {
            return std::stoull(get(key));
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "': expected an unsigned integer, got '" +
                              get(key) + "'");
        }
    }

    double get_f64(const std::string& key) const {
        try {
            return std::stod(get(key));
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "': expected a number, got '" + get(key) +
                              "'");
        }
    }

    std::vector<std::int64_t> get_i64_list(const std::string& key, char sep = ',') const {
        std::vector<std::int64_t> out;
        std::stringstream ss(get(key));
        std::string item;
        while (std::getline(ss, item, sep)) {
            item = trim(item);
            if (item.empty()) continue;
            try {
                out.push_back(std::stoll(item));
            } catch (const std::exception&) {
                throw ConfigError("config key '" + key + "': expected integers, got '" + item +
                                  "'");
            }
        }
        return out;
    }

    std::vector<double> get_f64_list(const std::string& key, char sep = ',') const {
        std::vector<double> out;
        std::stringstream ss(get(key));
        std::string item;
        while (std::getline(ss, item, sep)) {
            item = trim(item);
            if (item.empty()) continue;
            try {
                out.push_back(std::stod(item));
            } catch (const std::exception&) {
                throw ConfigError("config key '" + key + "': expected numbers, got '" + item +
                                  "'");
            }
        }
        return out;
    }

    Dims3 get_dims3(const std::string& key) const {
        const auto v = get_i64_list(key);
        if (v.size() != 3) {
            throw ConfigError("config key '" + key + "': expected an x,y,t triple");
        }
        return Dims3{v[0], v[1], v[2]};
    }

    const std::map<std::string, std::string>& raw() const { return values_; }

  private:
    std::map<std::string, std::string> values_;
};

std::vector<Dims3> parse_triples(const KeyValues& kv, const std::string& key) {
    std::vector<Dims3> out;
    std::stringstream ss(kv.get(key));
    std::string group;
    while (std::getline(ss, group, ';')) {
        group = trim(group);
        if (group.empty()) continue;
        std::vector<std::int64_t> v;
        std::stringstream gs(group);
        std::string item;
        while (std::getline(gs, item, ',')) v.push_back(std::stoll(trim(item)));
        if (v.size() != 3) {
            throw ConfigError("config key '" + key + "': expected x,y,t triples, got '" + group +
                              "'");
        }
        out.push_back(Dims3{v[0], v[1], v[2]});
    }
    if (out.empty()) throw ConfigError("config key '" + key + "': no triples given");
    return out;
}

std::vector<std::string> list_block_files(const std::string& dir) {
    if (!fs::is_directory(dir)) {
        throw DataError("data directory '" + dir + "' does not exist");
    }
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".stpb") {
            files.push_back(entry.path().string());
        }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("data directory '" + dir + "' holds no .stpb files");
    return files;
}

std::vector<MaskedBlock> load_blocks(const std::vector<std::string>& files) {
    std::vector<MaskedBlock> blocks;
    blocks.reserve(files.size());
    for (const auto& f : files) blocks.push_back(load_block(f));
    return blocks;
}

void require_dir_key(const std::string& value, const std::string& key) {
    if (value.empty()) throw ConfigError("config key '" + key + "' is required by this command");
}

void write_resolved_config(const RunConfig& config, const std::string& dir) {
    fs::create_directories(dir);
    std::ofstream out(dir + "/config.resolved.txt", std::ios::trunc);
    if (!out) throw DataError("cannot write resolved config in '" + dir + "'");
    out << resolved_config_text(config);
}

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double stop() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

// Accumulates prediction time across worker threads; ordering does not
// matter for a sum of durations.
class SharedStopwatch {
  public:
    void add(double seconds) {
        const std::lock_guard<std::mutex> lock(mutex_);
        total_ += seconds;
    }
    double total() const { return total_; }

  private:
    std::mutex mutex_;
    double total_ = 0.0;
};

Predictor make_predictor(const RunConfig& config, const std::string& method, ModelSpec& spec_out,
                         ModelState& state_out, SharedStopwatch* watch) {
    if (method == "mean") {
        return [watch](const MaskedBlock& x) {
            const Timer t;
            PredictionResult r = predict_block_mean(x);
            if (watch != nullptr) watch->add(t.stop());
            return r;
        };
    }
    if (method == "interp") {
        return [watch](const MaskedBlock& x) {
            const Timer t;
            PredictionResult r = predict_time_interp(x);
            if (watch != nullptr) watch->add(t.stop());
            return r;
        };
    }
    if (method == "stpconv") {
        require_dir_key(config.model_dir, "paths.model_dir");
        load_model(config.model_dir, spec_out, state_out);
        const ModelSpec* spec = &spec_out;
        const ModelState* state = &state_out;
        return [spec, state, watch](const MaskedBlock& x) {
            const Timer t;
            const ForwardTrace trace = model_forward(*state, *spec, x);
            PredictionResult r{trace.output, Tensor4(trace.output.shape(), 1.0f)};
            if (watch != nullptr) watch->add(t.stop());
            return r;
        };
    }
    throw ConfigError("unknown method '" + method + "' (expected stpconv, mean, or interp)");
}

std::string block_file_name(std::int64_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "block_%04d.stpb", static_cast<int>(index));
    return buf;
}

}  // namespace

int RunConfig::prediction_threads() const {
    return threads > 0 ? threads : hardware_threads();
}

int RunConfig::training_threads() const { return threads > 0 ? threads : 1; }

RunConfig parse_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");

    std::map<std::string, std::string> values;
    std::string line;
    std::int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto comment = line.find('#');
        if (comment != std::string::npos) line = line.substr(0, comment);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) +
                              ": expected key = value, got '" + line + "'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const bool known = std::any_of(schema().begin(), schema().end(),
                                       [&key](const SchemaEntry& e) { return key == e.first; });
        if (!known) {
            throw ConfigError("unknown config key '" + key + "' on line " +
                              std::to_string(line_no));
        }
        values[key] = value;
    }

    const KeyValues kv(values);
    RunConfig config;
    config.raw = kv.raw();

    config.model.num_blocks = kv.get_i64("model.num_blocks");
    config.model.layers_per_block = kv.get_i64("model.layers_per_block");
    config.model.strides = parse_triples(kv, "model.strides");
    config.model.kernel_sizes = parse_triples(kv, "model.kernels");
    config.model.filters = kv.get_i64_list("model.filters");
    config.model.alpha = kv.get_f64("model.alpha");
    config.model.in_channels = kv.get_i64("model.in_channels");
    config.model.out_channels = kv.get_i64("model.out_channels");
    config.model_seed = kv.get_u64("model.seed");

    config.train.initial_lr = kv.get_f64("train.learning_rate");
    config.train.lr_decay_every = kv.get_i64("train.lr_decay_every");
    config.train.lr_decay_factor = kv.get_f64("train.lr_decay_factor");
    config.train.min_epochs = kv.get_i64("train.epochs");
    config.train.batch_size = kv.get_i64("train.batch_size");
    config.train.seed = kv.get_u64("train.seed");
    config.train.adam_beta1 = kv.get_f64("train.adam_beta1");
    config.train.adam_beta2 = kv.get_f64("train.adam_beta2");
    config.train.adam_epsilon = kv.get_f64("train.adam_epsilon");

    config.gaps.correlation_length = kv.get_f64("gaps.correlation_length");
    config.gaps.mask_fraction = kv.get_f64("gaps.fraction");
    config.gaps.seed = kv.get_u64("gaps.seed");

    config.synthetic.n_blocks = kv.get_i64("synthetic.n_blocks");
    {
        const auto s = kv.get_i64_list("synthetic.shape");
        if (s.size() != 4) throw ConfigError("synthetic.shape: expected nx,ny,nt,nc");
        config.synthetic.shape = Shape4{s[0], s[1], s[2], s[3]};
    }
    config.synthetic.n_bumps = kv.get_i64("synthetic.bumps");
    {
        const auto a = kv.get_f64_list("synthetic.amp");
        if (a.size() != 2) throw ConfigError("synthetic.amp: expected min,max");
        config.synthetic.amp_min = a[0];
        config.synthetic.amp_max = a[1];
        const auto sg = kv.get_f64_list("synthetic.sigma");
        if (sg.size() != 2) throw ConfigError("synthetic.sigma: expected min,max");
        config.synthetic.sigma_min = sg[0];
        config.synthetic.sigma_max = sg[1];
        const auto v = kv.get_f64_list("synthetic.velocity");
        if (v.size() != 2) throw ConfigError("synthetic.velocity: expected vx,vy");
        config.synthetic.velocity_x = v[0];
        config.synthetic.velocity_y = v[1];
    }
    config.synthetic.velocity_jitter = kv.get_f64("synthetic.velocity_jitter");
    config.synthetic.noise_sd = kv.get_f64("synthetic.noise_sd");
    config.synthetic.native_gap_fraction = kv.get_f64("synthetic.native_fraction");
    config.synthetic.native_gap_correlation = kv.get_f64("synthetic.native_correlation");
    config.synthetic.seed = kv.get_u64("synthetic.seed");

    config.grid_block = kv.get_dims3("grid.block");
    config.grid_margin = kv.get_dims3("grid.margin");

    config.data_dir = kv.get("paths.data_dir");
    config.model_dir = kv.get("paths.model_dir");
    config.output_dir = kv.get("paths.output_dir");
    config.raster_path = kv.get("paths.raster");

    config.threads = static_cast<int>(kv.get_i64("run.threads"));
    config.render_vmin = kv.get_f64("render.vmin");
    config.render_vmax = kv.get_f64("render.vmax");
    return config;
}

std::string resolved_config_text(const RunConfig& config) {
    std::ostringstream out;
    for (const auto& [key, def] : schema()) {
        const auto it = config.raw.find(key);
        out << key << " = " << (it != config.raw.end() ? it->second : def) << "\n";
    }
    return out.str();
}

int cmd_generate(const RunConfig& config) {
    require_dir_key(config.output_dir, "paths.output_dir");
    const auto blocks = generate_synthetic(config.synthetic);
    fs::create_directories(config.output_dir);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        save_block(config.output_dir + "/" + block_file_name(static_cast<std::int64_t>(i)),
                   blocks[i]);
    }
    write_resolved_config(config, config.output_dir);
    std::cout << "generated " << blocks.size() << " blocks of "
              << config.synthetic.shape.str() << " in " << config.output_dir << "\n";
    return 0;
}

int cmd_train(const RunConfig& config) {
    require_dir_key(config.data_dir, "paths.data_dir");
    require_dir_key(config.model_dir, "paths.model_dir");
    const auto blocks = load_blocks(list_block_files(config.data_dir));

    ModelState state = build_model<float>(config.model, config.model_seed);
    std::cout << "training on " << blocks.size() << " blocks, "
              << state.parameter_count() << " parameters, " << config.train.min_epochs
              << " epochs\n";
    const FitResult result = fit(blocks, config.model, state, config.gaps, config.train,
                                 config.training_threads(), &std::cout);

    save_model(config.model_dir, config.model, state);
    std::ofstream log(config.model_dir + "/loss_log.csv", std::ios::trunc);
    if (!log) throw DataError("cannot write loss log in '" + config.model_dir + "'");
    write_loss_log_csv(log, result);
    write_resolved_config(config, config.model_dir);
    if (result.skipped_items > 0) {
        std::cout << "skipped " << result.skipped_items << " batch items with empty target sets\n";
    }
    std::cout << "model written to " << config.model_dir << "\n";
    return 0;
}

int cmd_predict(const RunConfig& config, const std::string& method, bool merge,
                CommandTiming* timing) {
    require_dir_key(config.data_dir, "paths.data_dir");
    require_dir_key(config.output_dir, "paths.output_dir");

    const Timer io_timer;
    const auto files = list_block_files(config.data_dir);
    const auto blocks = load_blocks(files);
    double io_seconds = io_timer.stop();

    ModelSpec spec;
    ModelState state;
    SharedStopwatch watch;
    const Predictor predictor = make_predictor(config, method, spec, state, &watch);

    std::vector<PredictionResult> results(blocks.size());
    parallel_for(static_cast<std::int64_t>(blocks.size()), config.prediction_threads(),
                 [&](std::int64_t lo, std::int64_t hi) {
                     for (std::int64_t i = lo; i < hi; ++i) {
                         results[static_cast<std::size_t>(i)] =
                             predictor(blocks[static_cast<std::size_t>(i)]);
                     }
                 });

    const Timer write_timer;
    fs::create_directories(config.output_dir);
    for (std::size_t i = 0; i < results.size(); ++i) {
        Tensor4 values = merge ? merge_with_observations(results[i].values, blocks[i])
                               : results[i].values;
        Tensor4 predicted = results[i].predicted;
        if (merge) {
            for (std::int64_t j = 0; j < predicted.size(); ++j) {
                if (blocks[i].mask[j] != 0.0f) predicted[j] = 1.0f;
            }
        }
        for (std::int64_t j = 0; j < values.size(); ++j) {
            if (predicted[j] == 0.0f) values[j] = 0.0f;
        }
        save_block(config.output_dir + "/" + fs::path(files[i]).filename().string(),
                   MaskedBlock{std::move(values), std::move(predicted)});
    }
    io_seconds += write_timer.stop();

    write_resolved_config(config, config.output_dir);
    nlohmann::json j;
    j["method"] = method;
    j["merge"] = merge;
    j["n_blocks"] = blocks.size();
    j["predict_seconds"] = watch.total();
    j["io_seconds"] = io_seconds;
    std::ofstream summary(config.output_dir + "/predict_summary.json", std::ios::trunc);
    summary << j.dump(2) << "\n";
    std::cout << "predict_seconds=" << watch.total() << " io_seconds=" << io_seconds << "\n";
    if (timing != nullptr) *timing = CommandTiming{watch.total(), io_seconds};
    return 0;
}

int cmd_evaluate(const RunConfig& config, const std::string& strategy, const std::string& method,
                 CommandTiming* timing) {
    require_dir_key(config.data_dir, "paths.data_dir");
    require_dir_key(config.output_dir, "paths.output_dir");

    const Timer io_timer;
    const auto files = list_block_files(config.data_dir);
    const auto blocks = load_blocks(files);
    const double io_seconds = io_timer.stop();

    ModelSpec spec;
    ModelState state;
    SharedStopwatch watch;
    const Predictor predictor = make_predictor(config, method, spec, state, &watch);

    ScoreReport report;
    if (strategy == "gaps") {
        report = validate_gapfilling(blocks, predictor, config.gaps, config.prediction_threads());
    } else if (strategy == "onestep") {
        report = validate_one_step_ahead(blocks, predictor, config.prediction_threads());
    } else {
        throw ConfigError("unknown strategy '" + strategy + "' (expected gaps or onestep)");
    }
    for (std::size_t i = 0; i < report.per_block.size() && i < files.size(); ++i) {
        report.per_block[i].id = fs::path(files[i]).stem().string();
    }

    fs::create_directories(config.output_dir);
    const std::string stem = config.output_dir + "/report_" + strategy + "_" + method;
    std::ofstream csv(stem + ".csv", std::ios::trunc);
    write_report_csv(csv, report);
    std::ofstream json(stem + ".json", std::ios::trunc);
    write_report_json(json, report, strategy + "/" + method,
                      {{"predict_seconds", watch.total()}, {"io_seconds", io_seconds}});
    write_resolved_config(config, config.output_dir);

    std::cout << strategy << "/" << method << ": mae=";
    if (report.defined()) {
        std::cout << report.mae << " rmse=" << report.rmse;
    } else {
        std::cout << "NA rmse=NA";
    }
    std::cout << " n_scored=" << report.n_scored << " n_excluded=" << report.n_excluded
              << " predict_seconds=" << watch.total() << " io_seconds=" << io_seconds << "\n";
    if (timing != nullptr) *timing = CommandTiming{watch.total(), io_seconds};
    return 0;
}

int cmd_simulate_gaps(const RunConfig& config) {
    require_dir_key(config.data_dir, "paths.data_dir");
    require_dir_key(config.output_dir, "paths.output_dir");
    const auto files = list_block_files(config.data_dir);
    fs::create_directories(config.output_dir);
    for (std::size_t i = 0; i < files.size(); ++i) {
        const MaskedBlock block = load_block(files[i]);
        GapConfig per_block = config.gaps;
        per_block.seed = rng::mix(config.gaps.seed, static_cast<std::uint64_t>(i));
        const Tensor4 gap_mask = make_gap_mask(block.shape(), per_block);
        const GappedBlock gapped = apply_gaps(block, gap_mask);
        save_block(config.output_dir + "/" + fs::path(files[i]).filename().string(), gapped.x);
    }
    write_resolved_config(config, config.output_dir);
    std::cout << "wrote " << files.size() << " gap-masked blocks to " << config.output_dir << "\n";
    return 0;
}

int cmd_stitch(const RunConfig& config, const std::string& method, CommandTiming* timing) {
    if (config.raster_path.empty()) {
        throw ConfigError("config key 'paths.raster' is required by this command");
    }
    require_dir_key(config.output_dir, "paths.output_dir");

    const Timer io_timer;
    const MaskedBlock raster = load_block(config.raster_path);
    double io_seconds = io_timer.stop();

    BlockGrid grid;
    grid.raster = raster.shape();
    grid.block = config.grid_block;
    grid.margin = config.grid_margin;
    grid.validate();

    ModelSpec spec;
    ModelState state;
    SharedStopwatch watch;
    const Predictor predictor = make_predictor(config, method, spec, state, &watch);

    std::vector<TiledBlock> tiles = tile(raster, grid);
    std::vector<std::pair<Tensor4, Placement>> predictions(tiles.size());
    parallel_for(static_cast<std::int64_t>(tiles.size()), config.prediction_threads(),
                 [&](std::int64_t lo, std::int64_t hi) {
                     for (std::int64_t i = lo; i < hi; ++i) {
                         auto& tb = tiles[static_cast<std::size_t>(i)];
                         predictions[static_cast<std::size_t>(i)] = {
                             predictor(tb.block).values, tb.placement};
                     }
                 });
    const Tensor4 stitched = stitch(predictions, grid);

    const Timer write_timer;
    fs::create_directories(config.output_dir);
    const MaskedBlock result{stitched, Tensor4(stitched.shape(), 1.0f)};
    save_block(config.output_dir + "/stitched.stpb", result);
    render_pgm_slices(config.output_dir + "/stitched", result, config.render_vmin,
                      config.render_vmax);
    io_seconds += write_timer.stop();
    write_resolved_config(config, config.output_dir);

    nlohmann::json j;
    j["method"] = method;
    j["n_blocks"] = tiles.size();
    j["predict_seconds"] = watch.total();
    j["io_seconds"] = io_seconds;
    std::ofstream summary(config.output_dir + "/stitch_summary.json", std::ios::trunc);
    summary << j.dump(2) << "\n";
    std::cout << "stitched " << tiles.size() << " blocks; predict_seconds=" << watch.total()
              << " io_seconds=" << io_seconds << "\n";
    if (timing != nullptr) *timing = CommandTiming{watch.total(), io_seconds};
    return 0;
}

int run_guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace stpconv::cli
