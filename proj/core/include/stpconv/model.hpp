#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "stpconv/pconv.hpp"

namespace stpconv {

// Architecture of the encoder/decoder network. The encoder applies
// num_blocks blocks of layers_per_block partial convolutions each, striding
// on the last layer of a block; the decoder mirrors the encoder with
// nearest-neighbor upsampling and skip concatenation (data and mask); a final
// 1x1x1 partial convolution with linear activation maps to out_channels.
struct ModelSpec {
    std::int64_t num_blocks = 2;
    std::int64_t layers_per_block = 1;
    std::vector<Dims3> strides;       // one per block
    std::vector<Dims3> kernel_sizes;  // one per layer within a block
    std::vector<std::int64_t> filters;  // output channels per block
    double alpha = 0.1;
    std::int64_t in_channels = 1;
    std::int64_t out_channels = 1;

    void validate() const;

    Dims3 total_stride() const;

    // Channels of the stream entering encoder block b.
    std::int64_t encoder_in_channels(std::int64_t b) const {
        return b == 0 ? in_channels : filters[static_cast<std::size_t>(b - 1)];
    }
    // Channels of the skip stream concatenated in decoder block b (the stream
    // that entered encoder block b).
    std::int64_t skip_channels(std::int64_t b) const { return encoder_in_channels(b); }
    // Channels produced by decoder block b.
    std::int64_t decoder_out_channels(std::int64_t b) const {
        return b == 0 ? filters[0] : filters[static_cast<std::size_t>(b - 1)];
    }
};

// All learned parameters. Decoder layers are stored in application order,
// deepest block first.
template <typename T>
struct ModelStateT {
    std::vector<PConvLayerT<T>> encoder;  // num_blocks * layers_per_block, block-major
    std::vector<PConvLayerT<T>> decoder;  // num_blocks * layers_per_block, deepest block first
    PConvLayerT<T> projection;

    std::int64_t parameter_count() const {
        std::int64_t n = 0;
        for (const auto& l : encoder) n += l.weight_count() + l.cout;
        for (const auto& l : decoder) n += l.weight_count() + l.cout;
        return n + projection.weight_count() + projection.cout;
    }
};

using ModelState = ModelStateT<float>;

// Visits every parameter tensor in a fixed order (encoder blocks shallow to
// deep, decoder blocks deep to shallow, projection; kernels before bias).
// This order defines the Adam moment layout and the weight file manifest.
template <typename T, typename State, typename Fn>
void for_each_param_tensor(State& state, Fn&& fn) {
    auto visit_layer = [&fn](auto& layer, const std::string& name) {
        fn(name + ".kernels", layer.kernels,
           std::vector<std::int64_t>{layer.kx, layer.ky, layer.kt, layer.cin, layer.cout});
        fn(name + ".bias", layer.bias, std::vector<std::int64_t>{layer.cout});
    };
    for (std::size_t i = 0; i < state.encoder.size(); ++i) {
        visit_layer(state.encoder[i], "encoder" + std::to_string(i));
    }
    for (std::size_t i = 0; i < state.decoder.size(); ++i) {
        visit_layer(state.decoder[i], "decoder" + std::to_string(i));
    }
    visit_layer(state.projection, "projection");
}

// Gradients (or any per-parameter data) laid out in for_each_param_tensor
// order.
template <typename T>
struct ModelGradsT {
    std::vector<std::vector<T>> tensors;
};

using ModelGrads = ModelGradsT<float>;

template <typename T>
ModelGradsT<T> zero_grads_like(const ModelStateT<T>& state) {
    ModelGradsT<T> g;
    for_each_param_tensor<T>(state, [&g](const std::string&, const std::vector<T>& buf,
                                         const std::vector<std::int64_t>&) {
        g.tensors.emplace_back(buf.size(), T(0));
    });
    return g;
}

// Deterministic parameter initialization from the seed.
template <typename T>
ModelStateT<T> build_model(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    rng::Stream rand(rng::mix(seed, 0x6d6f64656cull));
    ModelStateT<T> state;
    const std::int64_t B = spec.num_blocks;
    const std::int64_t L = spec.layers_per_block;
    for (std::int64_t b = 0; b < B; ++b) {
        const std::int64_t out_ch = spec.filters[static_cast<std::size_t>(b)];
        for (std::int64_t j = 0; j < L; ++j) {
            const std::int64_t in_ch = j == 0 ? spec.encoder_in_channels(b) : out_ch;
            const Dims3 k = spec.kernel_sizes[static_cast<std::size_t>(j)];
            const Dims3 s = j == L - 1 ? spec.strides[static_cast<std::size_t>(b)] : Dims3{};
            state.encoder.push_back(
                make_pconv_layer<T>(k.x, k.y, k.t, in_ch, out_ch, s, rand));
        }
    }
    for (std::int64_t b = B - 1; b >= 0; --b) {
        const std::int64_t up_ch =
            b == B - 1 ? spec.filters[static_cast<std::size_t>(B - 1)] : spec.decoder_out_channels(b + 1);
        const std::int64_t out_ch = spec.decoder_out_channels(b);
        for (std::int64_t j = 0; j < L; ++j) {
            const std::int64_t in_ch = j == 0 ? up_ch + spec.skip_channels(b) : out_ch;
            const Dims3 k = spec.kernel_sizes[static_cast<std::size_t>(j)];
            state.decoder.push_back(make_pconv_layer<T>(k.x, k.y, k.t, in_ch, out_ch, Dims3{}, rand));
        }
    }
    state.projection =
        make_pconv_layer<T>(1, 1, 1, spec.decoder_out_channels(0), spec.out_channels, Dims3{}, rand);
    return state;
}

// Everything backward needs from a forward pass.
template <typename T>
struct ForwardTraceT {
    std::vector<MaskedBlockT<T>> enc_inputs;   // input to each encoder layer
    std::vector<MaskedBlockT<T>> enc_preact;   // pconv output before activation
    std::vector<MaskedBlockT<T>> dec_inputs;   // input to each decoder layer
    std::vector<MaskedBlockT<T>> dec_preact;
    MaskedBlockT<T> proj_input;
    Tensor4T<T> output;       // final values (linear head)
    Tensor4T<T> output_mask;  // validity propagated to the output
};

using ForwardTrace = ForwardTraceT<float>;

namespace detail {

template <typename T>
MaskedBlockT<T> concat_channels(const MaskedBlockT<T>& a, const MaskedBlockT<T>& b) {
    const Shape4& sa = a.shape();
    const Shape4& sb = b.shape();
    if (sa.nx != sb.nx || sa.ny != sb.ny || sa.nt != sb.nt) {
        throw ShapeError("concat: spatial/temporal shapes differ: " + sa.str() + " vs " + sb.str());
    }
    const Shape4 out{sa.nx, sa.ny, sa.nt, sa.nc + sb.nc};
    MaskedBlockT<T> r{Tensor4T<T>(out, T(0)), Tensor4T<T>(out, T(0))};
    const std::int64_t plane = sa.nx * sa.ny * sa.nt;
    std::copy_n(a.data.data(), plane * sa.nc, r.data.data());
    std::copy_n(b.data.data(), plane * sb.nc, r.data.data() + plane * sa.nc);
    std::copy_n(a.mask.data(), plane * sa.nc, r.mask.data());
    std::copy_n(b.mask.data(), plane * sb.nc, r.mask.data() + plane * sa.nc);
    return r;
}

// Channel range [c0, c0+nc) of a tensor as its own tensor.
template <typename T>
Tensor4T<T> slice_channels(const Tensor4T<T>& x, std::int64_t c0, std::int64_t nc) {
    const Shape4& s = x.shape();
    Tensor4T<T> r(Shape4{s.nx, s.ny, s.nt, nc}, T(0));
    const std::int64_t plane = s.nx * s.ny * s.nt;
    std::copy_n(x.data() + plane * c0, plane * nc, r.data());
    return r;
}

template <typename T>
void check_divisible(const Shape4& in, const ModelSpec& spec) {
    const Dims3 total = spec.total_stride();
    if (in.nx % total.x != 0 || in.ny % total.y != 0 || in.nt % total.t != 0) {
        throw ShapeError("model input " + in.str() +
                         " is not divisible by the total stride (" + std::to_string(total.x) + "," +
                         std::to_string(total.y) + "," + std::to_string(total.t) + ")");
    }
}

}  // namespace detail

template <typename T>
ForwardTraceT<T> model_forward(const ModelStateT<T>& state, const ModelSpec& spec,
                               const MaskedBlockT<T>& input) {
    spec.validate();
    const Shape4& in = input.shape();
    if (in.nc != spec.in_channels) {
        throw ShapeError("model input has " + std::to_string(in.nc) + " channels, spec expects " +
                         std::to_string(spec.in_channels));
    }
    detail::check_divisible<T>(in, spec);
    const std::int64_t B = spec.num_blocks;
    const std::int64_t L = spec.layers_per_block;
    if (static_cast<std::int64_t>(state.encoder.size()) != B * L ||
        static_cast<std::int64_t>(state.decoder.size()) != B * L) {
        throw ContractError("model state does not match spec layer counts");
    }

    ForwardTraceT<T> trace;
    MaskedBlockT<T> stream = input;
    for (std::int64_t i = 0; i < B * L; ++i) {
        trace.enc_inputs.push_back(stream);
        MaskedBlockT<T> conv = pconv_forward(stream, state.encoder[static_cast<std::size_t>(i)]);
        trace.enc_preact.push_back(conv);
        stream = MaskedBlockT<T>{leaky_relu(conv.data, spec.alpha), std::move(conv.mask)};
    }
    for (std::int64_t b = B - 1; b >= 0; --b) {
        const MaskedBlockT<T> up = upsample_nearest(stream, spec.strides[static_cast<std::size_t>(b)]);
        const MaskedBlockT<T>& skip = trace.enc_inputs[static_cast<std::size_t>(b * L)];
        stream = detail::concat_channels(up, skip);
        for (std::int64_t j = 0; j < L; ++j) {
            const std::int64_t idx = (B - 1 - b) * L + j;
            trace.dec_inputs.push_back(stream);
            MaskedBlockT<T> conv = pconv_forward(stream, state.decoder[static_cast<std::size_t>(idx)]);
            trace.dec_preact.push_back(conv);
            stream = MaskedBlockT<T>{leaky_relu(conv.data, spec.alpha), std::move(conv.mask)};
        }
    }
    trace.proj_input = stream;
    MaskedBlockT<T> head = pconv_forward(stream, state.projection);
    trace.output = std::move(head.data);
    trace.output_mask = std::move(head.mask);
    return trace;
}

// Chain rule over the recorded forward pass. Returns parameter gradients in
// for_each_param_tensor order plus the gradient w.r.t. the input data.
template <typename T>
struct ModelBackwardResultT {
    ModelGradsT<T> grads;
    Tensor4T<T> input_grad;
};

template <typename T>
ModelBackwardResultT<T> model_backward(const ModelStateT<T>& state, const ModelSpec& spec,
                                       const ForwardTraceT<T>& trace,
                                       const Tensor4T<T>& grad_output) {
    spec.validate();
    const std::int64_t B = spec.num_blocks;
    const std::int64_t L = spec.layers_per_block;
    if (static_cast<std::int64_t>(trace.enc_inputs.size()) != B * L ||
        static_cast<std::int64_t>(trace.dec_inputs.size()) != B * L) {
        throw ContractError("model backward: intermediates do not match spec layer counts");
    }
    detail::require_same_shape(grad_output.shape(), trace.output.shape(),
                               "model backward grad_output");

    // Slot layout: per layer a kernels tensor then a bias tensor, encoder
    // first, then decoder, then projection.
    ModelGradsT<T> grads = zero_grads_like(state);
    auto store = [&grads](std::int64_t slot, PConvGradsT<T>&& g) {
        grads.tensors[static_cast<std::size_t>(2 * slot)] = std::move(g.kernels);
        grads.tensors[static_cast<std::size_t>(2 * slot + 1)] = std::move(g.bias);
    };

    PConvGradsT<T> pg = pconv_backward(trace.proj_input, state.projection, grad_output);
    Tensor4T<T> stream_grad = std::move(pg.input_data);
    store(2 * B * L, std::move(pg));

    // Skip gradients accumulate where the encoder stream branched.
    std::vector<Tensor4T<T>> skip_grads(static_cast<std::size_t>(B));

    for (std::int64_t b = 0; b < B; ++b) {  // decoder blocks, shallowest applied last
        for (std::int64_t j = L - 1; j >= 0; --j) {
            const std::int64_t idx = (B - 1 - b) * L + j;
            const auto& preact = trace.dec_preact[static_cast<std::size_t>(idx)];
            stream_grad = leaky_relu_backward(preact.data, stream_grad, spec.alpha);
            PConvGradsT<T> g = pconv_backward(trace.dec_inputs[static_cast<std::size_t>(idx)],
                                              state.decoder[static_cast<std::size_t>(idx)],
                                              stream_grad);
            stream_grad = std::move(g.input_data);
            store(B * L + idx, std::move(g));
        }
        // Split the concatenation: upsampled stream first, then the skip.
        const std::int64_t up_ch =
            b == B - 1 ? spec.filters[static_cast<std::size_t>(B - 1)] : spec.decoder_out_channels(b + 1);
        const std::int64_t sk_ch = spec.skip_channels(b);
        Tensor4T<T> up_grad = detail::slice_channels(stream_grad, 0, up_ch);
        skip_grads[static_cast<std::size_t>(b)] = detail::slice_channels(stream_grad, up_ch, sk_ch);
        const Shape4& skip_shape = trace.enc_inputs[static_cast<std::size_t>(b * L)].shape();
        const Dims3 s = spec.strides[static_cast<std::size_t>(b)];
        const Shape4 low{skip_shape.nx / s.x, skip_shape.ny / s.y, skip_shape.nt / s.t, up_ch};
        stream_grad = upsample_nearest_backward(up_grad, s, low);
    }

    for (std::int64_t b = B - 1; b >= 0; --b) {
        for (std::int64_t j = L - 1; j >= 0; --j) {
            const std::int64_t idx = b * L + j;
            const auto& preact = trace.enc_preact[static_cast<std::size_t>(idx)];
            stream_grad = leaky_relu_backward(preact.data, stream_grad, spec.alpha);
            PConvGradsT<T> g = pconv_backward(trace.enc_inputs[static_cast<std::size_t>(idx)],
                                              state.encoder[static_cast<std::size_t>(idx)],
                                              stream_grad);
            stream_grad = std::move(g.input_data);
            store(idx, std::move(g));
        }
        // The stream entering block b also fed the decoder skip.
        Tensor4T<T>& sg = skip_grads[static_cast<std::size_t>(b)];
        for (std::int64_t i = 0; i < stream_grad.size(); ++i) stream_grad[i] += sg[i];
    }

    return ModelBackwardResultT<T>{std::move(grads), std::move(stream_grad)};
}

// Name of the first layer whose pre-activation output holds a non-finite
// value, or empty if all are finite. Used for loss-diagnostics.
template <typename T>
std::string first_non_finite_layer(const ForwardTraceT<T>& trace) {
    auto scan = [](const Tensor4T<T>& x) {
        for (std::int64_t i = 0; i < x.size(); ++i) {
            if (!std::isfinite(static_cast<double>(x[i]))) return true;
        }
        return false;
    };
    for (std::size_t i = 0; i < trace.enc_preact.size(); ++i) {
        if (scan(trace.enc_preact[i].data)) return "encoder" + std::to_string(i);
    }
    for (std::size_t i = 0; i < trace.dec_preact.size(); ++i) {
        if (scan(trace.dec_preact[i].data)) return "decoder" + std::to_string(i);
    }
    if (scan(trace.output)) return "projection";
    return "";
}

// ---- configuration checker -------------------------------------------------

// Channel-free boolean mask over one spatiotemporal block.
struct MaskVolume {
    std::int64_t nx = 0, ny = 0, nt = 0;
    std::vector<std::uint8_t> valid;

    std::int64_t index(std::int64_t x, std::int64_t y, std::int64_t t) const {
        return x + nx * (y + ny * t);
    }
    bool all_valid() const;
};

// Exact index-level simulation of how validity propagates through the
// network: an output voxel is valid iff at least one valid input voxel lies
// in its receptive window at every stage. Independent of the float pipeline;
// model_forward's output mask must match this bit for bit.
MaskVolume simulate_mask_propagation(const ModelSpec& spec, const MaskVolume& input);

// How far validity spreads from a single valid voxel, and hence the largest
// gap the architecture is guaranteed to fill: any invalid voxel within
// `radius` (per axis) of a valid one becomes valid at the output. Computed by
// simulating single-voxel inputs over all stride parities and taking the
// worst case.
struct FillReport {
    Dims3 radius;        // guaranteed one-sided fill reach per axis
    Dims3 gap_diameter;  // 2 * radius: largest guaranteed-filled centered gap
};

FillReport guaranteed_fill(const ModelSpec& spec);

// ---- serialization ----------------------------------------------------------

// Writes dir/model.json (spec plus an ordered tensor manifest with byte
// offsets) and dir/weights.bin (concatenated little-endian 32-bit floats in
// manifest order). Round-trips bit-exactly.
void save_model(const std::string& dir, const ModelSpec& spec, const ModelState& state);
void load_model(const std::string& dir, ModelSpec& spec, ModelState& state);

}  // namespace stpconv
