#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "stpconv/model.hpp"

using namespace stpconv;

TEST_SUITE_BEGIN("model");

namespace {

ModelSpec paper_spec() {
    ModelSpec spec;
    spec.num_blocks = 2;
    spec.layers_per_block = 1;
    spec.strides = {Dims3{2, 2, 2}, Dims3{2, 2, 2}};
    spec.kernel_sizes = {Dims3{3, 3, 3}};
    spec.filters = {16, 16};
    spec.alpha = 0.1;
    spec.in_channels = 1;
    spec.out_channels = 1;
    return spec;
}

template <typename T>
MaskedBlockT<T> random_block(const Shape4& shape, std::uint64_t seed, double valid_p) {
    rng::Stream rand(seed);
    MaskedBlockT<T> block{Tensor4T<T>(shape, T(0)), Tensor4T<T>(shape, T(0))};
    for (std::int64_t i = 0; i < block.data.size(); ++i) {
        if (rand.uniform01() < valid_p) {
            block.mask[i] = T(1);
            block.data[i] = static_cast<T>(rand.uniform(-1.0, 1.0));
        }
    }
    return block;
}

MaskVolume to_volume_any_channel(const Tensor4& mask) {
    const Shape4& s = mask.shape();
    MaskVolume v;
    v.nx = s.nx;
    v.ny = s.ny;
    v.nt = s.nt;
    v.valid.assign(static_cast<std::size_t>(s.nx * s.ny * s.nt), 0);
    for (std::int64_t c = 0; c < s.nc; ++c) {
        for (std::int64_t t = 0; t < s.nt; ++t) {
            for (std::int64_t y = 0; y < s.ny; ++y) {
                for (std::int64_t x = 0; x < s.nx; ++x) {
                    if (mask.at(x, y, t, c) != 0.0f) {
                        v.valid[static_cast<std::size_t>(v.index(x, y, t))] = 1;
                    }
                }
            }
        }
    }
    return v;
}

}  // namespace

TEST_CASE("parameter count stays under the target budget") {
    const ModelSpec spec = paper_spec();
    const ModelState state = build_model<float>(spec, 1);
    CHECK(state.parameter_count() < 50000);
    // 448 + 6928 + 13840 + 7360 + 17 for this decoder layout
    CHECK(state.parameter_count() == 28593);
}

TEST_CASE("tiny spec parameter accounting") {
    ModelSpec spec;
    spec.num_blocks = 1;
    spec.layers_per_block = 1;
    spec.strides = {Dims3{1, 1, 1}};
    spec.kernel_sizes = {Dims3{1, 1, 1}};
    spec.filters = {1};
    spec.in_channels = 1;
    spec.out_channels = 1;
    const ModelState state = build_model<float>(spec, 1);
    CHECK(state.encoder.size() == 1);
    CHECK(state.encoder[0].weight_count() + state.encoder[0].cout == 2);
}

TEST_CASE("seeded build is bitwise deterministic") {
    const ModelSpec spec = paper_spec();
    const ModelState a = build_model<float>(spec, 9);
    const ModelState b = build_model<float>(spec, 9);
    for (std::size_t i = 0; i < a.encoder.size(); ++i) {
        CHECK(a.encoder[i].kernels == b.encoder[i].kernels);
    }
    for (std::size_t i = 0; i < a.decoder.size(); ++i) {
        CHECK(a.decoder[i].kernels == b.decoder[i].kernels);
    }
    CHECK(a.projection.kernels == b.projection.kernels);

    const ModelState c = build_model<float>(spec, 10);
    CHECK(a.encoder[0].kernels != c.encoder[0].kernels);
}

TEST_CASE("spec validation") {
    ModelSpec spec = paper_spec();
    spec.filters = {16};
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec = paper_spec();
    spec.kernel_sizes = {Dims3{2, 3, 3}};
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec = paper_spec();
    spec.strides = {Dims3{2, 2, 2}, Dims3{0, 2, 2}};
    CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("forward shapes follow the encoder/decoder contract") {
    const ModelSpec spec = paper_spec();
    const ModelState state = build_model<float>(spec, 3);
    const auto input = random_block<float>(Shape4{128, 128, 16, 1}, 4, 0.6);
    const ForwardTrace trace = model_forward(state, spec, input);
    CHECK(trace.enc_preact[0].shape() == Shape4{64, 64, 8, 16});
    CHECK(trace.enc_preact[1].shape() == Shape4{32, 32, 4, 16});
    CHECK(trace.output.shape() == Shape4{128, 128, 16, 1});
    // plenty of valid data: the decoded mask is fully filled
    CHECK(to_volume_any_channel(trace.output_mask).all_valid());
}

TEST_CASE("all-zero mask input yields all-zero output") {
    const ModelSpec spec = paper_spec();
    const ModelState state = build_model<float>(spec, 3);
    MaskedBlock input{Tensor4(Shape4{16, 16, 8, 1}, 0.0f), Tensor4(Shape4{16, 16, 8, 1}, 0.0f)};
    const ForwardTrace trace = model_forward(state, spec, input);
    for (std::int64_t i = 0; i < trace.output.size(); ++i) {
        CHECK(trace.output[i] == 0.0f);
        CHECK(trace.output_mask[i] == 0.0f);
    }
}

TEST_CASE("indivisible input is rejected") {
    const ModelSpec spec = paper_spec();
    const ModelState state = build_model<float>(spec, 3);
    const auto input = random_block<float>(Shape4{10, 16, 8, 1}, 4, 0.6);
    CHECK_THROWS_AS(model_forward(state, spec, input), ShapeError);
}

TEST_CASE("model is the plain composition of its layer operations") {
    ModelSpec spec;
    spec.num_blocks = 1;
    spec.layers_per_block = 1;
    spec.strides = {Dims3{2, 2, 1}};
    spec.kernel_sizes = {Dims3{3, 3, 1}};
    spec.filters = {3};
    spec.alpha = 0.1;
    spec.in_channels = 2;
    spec.out_channels = 2;
    const ModelState state = build_model<float>(spec, 5);
    const auto x = random_block<float>(Shape4{6, 4, 2, 2}, 6, 0.7);

    // forward, spelled out
    const MaskedBlock e = pconv_forward(x, state.encoder[0]);
    const MaskedBlock ea{leaky_relu(e.data, spec.alpha), e.mask};
    const MaskedBlock up = upsample_nearest(ea, spec.strides[0]);
    const MaskedBlock cat = detail::concat_channels(up, x);
    const MaskedBlock d = pconv_forward(cat, state.decoder[0]);
    const MaskedBlock da{leaky_relu(d.data, spec.alpha), d.mask};
    const MaskedBlock head = pconv_forward(da, state.projection);

    const ForwardTrace trace = model_forward(state, spec, x);
    CHECK(trace.output == head.data);
    CHECK(trace.output_mask == head.mask);

    // backward, spelled out
    rng::Stream rand(8);
    Tensor4 g(head.data.shape(), 0.0f);
    for (std::int64_t i = 0; i < g.size(); ++i) g[i] = static_cast<float>(rand.uniform(-1, 1));

    const PConvGrads pg_proj = pconv_backward(da, state.projection, g);
    const Tensor4 gd = leaky_relu_backward(d.data, pg_proj.input_data, spec.alpha);
    const PConvGrads pg_dec = pconv_backward(cat, state.decoder[0], gd);
    const Tensor4 up_grad = detail::slice_channels(pg_dec.input_data, 0, 3);
    const Tensor4 skip_grad = detail::slice_channels(pg_dec.input_data, 3, 2);
    const Tensor4 ge_act = upsample_nearest_backward(up_grad, spec.strides[0], ea.shape());
    const Tensor4 ge = leaky_relu_backward(e.data, ge_act, spec.alpha);
    const PConvGrads pg_enc = pconv_backward(x, state.encoder[0], ge);

    const auto result = model_backward(state, spec, trace, g);
    CHECK(result.grads.tensors[0] == pg_enc.kernels);
    CHECK(result.grads.tensors[1] == pg_enc.bias);
    CHECK(result.grads.tensors[2] == pg_dec.kernels);
    CHECK(result.grads.tensors[3] == pg_dec.bias);
    CHECK(result.grads.tensors[4] == pg_proj.kernels);
    CHECK(result.grads.tensors[5] == pg_proj.bias);
    const Tensor4 expected_input_grad = add(pg_enc.input_data, skip_grad);
    CHECK(result.input_grad == expected_input_grad);
}

TEST_CASE("zero upstream gives zero model gradients") {
    const ModelSpec spec = paper_spec();
    const ModelState state = build_model<float>(spec, 3);
    const auto input = random_block<float>(Shape4{16, 16, 8, 1}, 4, 0.6);
    const ForwardTrace trace = model_forward(state, spec, input);
    const Tensor4 zero(trace.output.shape(), 0.0f);
    const auto result = model_backward(state, spec, trace, zero);
    for (const auto& tensor : result.grads.tensors) {
        for (float v : tensor) CHECK(v == 0.0f);
    }
}

TEST_CASE("stale intermediates are rejected") {
    const ModelSpec spec = paper_spec();
    const ModelState state = build_model<float>(spec, 3);
    const auto input = random_block<float>(Shape4{16, 16, 8, 1}, 4, 0.6);
    ForwardTrace trace = model_forward(state, spec, input);
    trace.dec_inputs.pop_back();
    const Tensor4 g(trace.output.shape(), 1.0f);
    CHECK_THROWS_AS(model_backward(state, spec, trace, g), ContractError);
}

TEST_CASE("end-to-end gradients match finite differences in 64-bit mode") {
    const ModelSpec spec = paper_spec();
    ModelStateT<double> state = build_model<double>(spec, 17);
    auto input = random_block<double>(Shape4{16, 16, 8, 1}, 18, 0.6);

    rng::Stream rand(19);
    const ForwardTraceT<double> trace0 = model_forward(state, spec, input);
    Tensor4d g(trace0.output.shape(), 0.0);
    for (std::int64_t i = 0; i < g.size(); ++i) g[i] = rand.uniform(-1.0, 1.0);

    const auto result = model_backward(state, spec, trace0, g);

    std::size_t slot = 0;
    for_each_param_tensor<double>(state, [&](const std::string& name, std::vector<double>& buf,
                                             const std::vector<std::int64_t>&) {
        const oracle::TensorFdSummary summary = oracle::fd_check_tensor(
            buf, result.grads.tensors[slot], state, spec, input, g, rand);
        CAPTURE(name);
        CHECK(summary.valid >= 3);  // the kink filter must leave real coverage behind
        CHECK(summary.max_rel < 1e-3);
        ++slot;
    });

    // input-data gradients at valid positions
    int valid_inputs = 0;
    for (int attempt = 0; attempt < 80 && valid_inputs < 10; ++attempt) {
        const std::int64_t i = static_cast<std::int64_t>(
            rand.next_below(static_cast<std::uint64_t>(input.data.size())));
        if (input.mask[i] == 0.0) {
            CHECK(result.input_grad[i] == 0.0);
            continue;
        }
        const oracle::FdSample fd =
            oracle::model_central_difference(input.data[i], state, spec, input, g);
        if (!fd.valid) continue;
        ++valid_inputs;
        CHECK(oracle::close_rel(result.input_grad[i], fd.value, 1e-3, 1e-7));
    }
    CHECK(valid_inputs >= 10);
}

TEST_CASE("float output mask equals the index-level propagation simulation") {
    rng::Stream rand(23);
    for (int trial = 0; trial < 6; ++trial) {
        ModelSpec spec;
        spec.num_blocks = 1 + static_cast<std::int64_t>(rand.next_below(2));
        spec.layers_per_block = 1 + static_cast<std::int64_t>(rand.next_below(2));
        spec.kernel_sizes.clear();
        for (std::int64_t j = 0; j < spec.layers_per_block; ++j) {
            spec.kernel_sizes.push_back(Dims3{1 + 2 * static_cast<std::int64_t>(rand.next_below(2)),
                                              1 + 2 * static_cast<std::int64_t>(rand.next_below(2)),
                                              1 + 2 * static_cast<std::int64_t>(rand.next_below(2))});
        }
        spec.strides.clear();
        spec.filters.clear();
        for (std::int64_t b = 0; b < spec.num_blocks; ++b) {
            spec.strides.push_back(Dims3{1 + static_cast<std::int64_t>(rand.next_below(2)),
                                         1 + static_cast<std::int64_t>(rand.next_below(2)),
                                         1 + static_cast<std::int64_t>(rand.next_below(2))});
            spec.filters.push_back(1 + static_cast<std::int64_t>(rand.next_below(3)));
        }
        spec.in_channels = 1;
        spec.out_channels = 1;

        const Dims3 total = spec.total_stride();
        const Shape4 shape{total.x * (2 + static_cast<std::int64_t>(rand.next_below(3))),
                           total.y * (2 + static_cast<std::int64_t>(rand.next_below(3))),
                           total.t * (1 + static_cast<std::int64_t>(rand.next_below(3))), 1};
        const ModelState state = build_model<float>(spec, 100 + trial);
        const auto input =
            random_block<float>(shape, 200 + static_cast<std::uint64_t>(trial), 0.15);
        const ForwardTrace trace = model_forward(state, spec, input);

        MaskVolume in_vol = to_volume_any_channel(input.mask);
        const MaskVolume expect = simulate_mask_propagation(spec, in_vol);
        const MaskVolume got = to_volume_any_channel(trace.output_mask);
        CAPTURE(trial);
        REQUIRE(got.valid.size() == expect.valid.size());
        CHECK(got.valid == expect.valid);
    }
}

TEST_CASE("fill checker claim holds on a single-voxel forward") {
    const ModelSpec spec = paper_spec();
    const FillReport fill = guaranteed_fill(spec);
    CHECK(fill.radius.x >= 1);
    CHECK(fill.gap_diameter.x == 2 * fill.radius.x);

    const Shape4 shape{32, 32, 8, 1};
    const ModelState state = build_model<float>(spec, 31);
    for (const auto& seed_pos :
         {Dims3{16, 16, 4}, Dims3{0, 0, 0}, Dims3{31, 5, 7}, Dims3{3, 30, 2}}) {
        MaskedBlock input{Tensor4(shape, 0.0f), Tensor4(shape, 0.0f)};
        input.mask.at(seed_pos.x, seed_pos.y, seed_pos.t, 0) = 1.0f;
        input.data.at(seed_pos.x, seed_pos.y, seed_pos.t, 0) = 1.0f;
        const ForwardTrace trace = model_forward(state, spec, input);
        for (std::int64_t t = std::max<std::int64_t>(0, seed_pos.t - fill.radius.t);
             t <= std::min(shape.nt - 1, seed_pos.t + fill.radius.t); ++t) {
            for (std::int64_t y = std::max<std::int64_t>(0, seed_pos.y - fill.radius.y);
                 y <= std::min(shape.ny - 1, seed_pos.y + fill.radius.y); ++y) {
                for (std::int64_t x = std::max<std::int64_t>(0, seed_pos.x - fill.radius.x);
                     x <= std::min(shape.nx - 1, seed_pos.x + fill.radius.x); ++x) {
                    CHECK(trace.output_mask.at(x, y, t, 0) == 1.0f);
                }
            }
        }
    }
}

TEST_CASE("forward does not depend on previously processed blocks") {
    const ModelSpec spec = paper_spec();
    const ModelState state = build_model<float>(spec, 3);
    const auto a = random_block<float>(Shape4{16, 16, 8, 1}, 51, 0.5);
    const auto b = random_block<float>(Shape4{16, 16, 8, 1}, 52, 0.5);
    const Tensor4 first = model_forward(state, spec, a).output;
    (void)model_forward(state, spec, b);
    const Tensor4 second = model_forward(state, spec, a).output;
    CHECK(first == second);
}

TEST_CASE("serialization round-trips bit-exactly") {
    const ModelSpec spec = paper_spec();
    const ModelState state = build_model<float>(spec, 77);
    const std::string dir = (std::filesystem::temp_directory_path() / "stpconv_model_rt").string();
    save_model(dir, spec, state);

    ModelSpec loaded_spec;
    ModelState loaded;
    load_model(dir, loaded_spec, loaded);
    CHECK(loaded_spec.filters == spec.filters);
    for (std::size_t i = 0; i < state.encoder.size(); ++i) {
        CHECK(loaded.encoder[i].kernels == state.encoder[i].kernels);
        CHECK(loaded.encoder[i].bias == state.encoder[i].bias);
    }
    CHECK(loaded.projection.kernels == state.projection.kernels);

    // a second save of the loaded model is byte-identical
    const std::string dir2 = dir + "_2";
    save_model(dir2, loaded_spec, loaded);
    const auto slurp = [](const std::string& p) {
        std::ifstream f(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
    };
    CHECK(slurp(dir + "/weights.bin") == slurp(dir2 + "/weights.bin"));
    CHECK(slurp(dir + "/model.json") == slurp(dir2 + "/model.json"));

    // truncated weights are rejected
    std::filesystem::resize_file(dir + "/weights.bin", 100);
    CHECK_THROWS_AS(load_model(dir, loaded_spec, loaded), DataError);
    CHECK_THROWS_AS(load_model(dir + "_missing", loaded_spec, loaded), DataError);
}

TEST_SUITE_END();
