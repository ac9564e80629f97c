#include <filesystem>

#include <json.hpp>

#include "io_util.hpp"
#include "stpconv/model.hpp"

namespace stpconv {

namespace {

using nlohmann::json;

json dims_to_json(const Dims3& d) { return json::array({d.x, d.y, d.t}); }

Dims3 dims_from_json(const json& j) {
    if (!j.is_array() || j.size() != 3) throw DataError("model.json: expected a [x,y,t] triple");
    return Dims3{j[0].get<std::int64_t>(), j[1].get<std::int64_t>(), j[2].get<std::int64_t>()};
}

json spec_to_json(const ModelSpec& spec) {
    json j;
    j["num_blocks"] = spec.num_blocks;
    j["layers_per_block"] = spec.layers_per_block;
    j["strides"] = json::array();
    for (const auto& s : spec.strides) j["strides"].push_back(dims_to_json(s));
    j["kernel_sizes"] = json::array();
    for (const auto& k : spec.kernel_sizes) j["kernel_sizes"].push_back(dims_to_json(k));
    j["filters"] = spec.filters;
    j["alpha"] = spec.alpha;
    j["in_channels"] = spec.in_channels;
    j["out_channels"] = spec.out_channels;
    return j;
}

ModelSpec spec_from_json(const json& j) {
    ModelSpec spec;
    spec.num_blocks = j.at("num_blocks").get<std::int64_t>();
    spec.layers_per_block = j.at("layers_per_block").get<std::int64_t>();
    spec.strides.clear();
    for (const auto& s : j.at("strides")) spec.strides.push_back(dims_from_json(s));
    spec.kernel_sizes.clear();
    for (const auto& k : j.at("kernel_sizes")) spec.kernel_sizes.push_back(dims_from_json(k));
    spec.filters = j.at("filters").get<std::vector<std::int64_t>>();
    spec.alpha = j.at("alpha").get<double>();
    spec.in_channels = j.at("in_channels").get<std::int64_t>();
    spec.out_channels = j.at("out_channels").get<std::int64_t>();
    return spec;
}

}  // namespace

void save_model(const std::string& dir, const ModelSpec& spec, const ModelState& state) {
    spec.validate();
    std::filesystem::create_directories(dir);

    std::string weights;
    json manifest = json::array();
    std::int64_t offset = 0;
    for_each_param_tensor<float>(
        state, [&](const std::string& name, const std::vector<float>& buf,
                   const std::vector<std::int64_t>& shape) {
            json entry;
            entry["name"] = name;
            entry["shape"] = shape;
            entry["byte_offset"] = offset;
            entry["byte_length"] = static_cast<std::int64_t>(buf.size()) * 4;
            manifest.push_back(entry);
            for (float v : buf) detail::put_f32le(weights, v);
            offset += static_cast<std::int64_t>(buf.size()) * 4;
        });

    json root;
    root["format"] = "stpconv-model";
    root["version"] = 1;
    root["spec"] = spec_to_json(spec);
    root["parameter_count"] = state.parameter_count();
    root["tensors"] = manifest;

    detail::write_file(dir + "/model.json", root.dump(2) + "\n");
    detail::write_file(dir + "/weights.bin", weights);
}

void load_model(const std::string& dir, ModelSpec& spec, ModelState& state) {
    const auto json_bytes = detail::read_file(dir + "/model.json");
    json root;
    try {
        root = json::parse(json_bytes.begin(), json_bytes.end());
    } catch (const json::parse_error& e) {
        throw DataError("model.json: " + std::string(e.what()));
    }
    if (root.value("format", "") != "stpconv-model" || root.value("version", 0) != 1) {
        throw DataError("model.json: not a version-1 stpconv model description");
    }
    ModelSpec loaded = spec_from_json(root.at("spec"));
    ModelState rebuilt = build_model<float>(loaded, 0);

    const auto weights = detail::read_file(dir + "/weights.bin");
    const json& manifest = root.at("tensors");

    std::size_t entry = 0;
    for_each_param_tensor<float>(
        rebuilt, [&](const std::string& name, std::vector<float>& buf,
                     const std::vector<std::int64_t>& shape) {
            if (entry >= manifest.size()) {
                throw DataError("model.json: manifest is missing tensor " + name);
            }
            const json& m = manifest[entry++];
            if (m.at("name").get<std::string>() != name) {
                throw DataError("model.json: manifest tensor '" +
                                m.at("name").get<std::string>() + "' where '" + name +
                                "' was expected");
            }
            if (m.at("shape").get<std::vector<std::int64_t>>() != shape) {
                throw DataError("model.json: tensor " + name + " has unexpected shape");
            }
            const std::int64_t off = m.at("byte_offset").get<std::int64_t>();
            const std::int64_t len = m.at("byte_length").get<std::int64_t>();
            if (len != static_cast<std::int64_t>(buf.size()) * 4) {
                throw DataError("model.json: tensor " + name + " has unexpected byte length");
            }
            if (off < 0 || off + len > static_cast<std::int64_t>(weights.size())) {
                throw DataError("weights.bin: tensor " + name + " at byte offset " +
                                std::to_string(off) + " overruns the file");
            }
            for (std::size_t i = 0; i < buf.size(); ++i) {
                buf[i] = detail::get_f32le(weights.data() + off + 4 * static_cast<std::int64_t>(i));
            }
        });
    if (entry != manifest.size()) {
        throw DataError("model.json: manifest lists more tensors than the architecture has");
    }

    spec = std::move(loaded);
    state = std::move(rebuilt);
}

}  // namespace stpconv
