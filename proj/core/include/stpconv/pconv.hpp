#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "stpconv/rng.hpp"
#include "stpconv/tensor.hpp"

namespace stpconv {

// One partial convolutional layer. Kernels are centered (odd sizes) with
// symmetric zero-extension padding of data and mask; output size per axis is
// ceil(n / stride).
template <typename T>
struct PConvLayerT {
    std::int64_t kx = 1, ky = 1, kt = 1;
    std::int64_t cin = 1, cout = 1;
    Dims3 stride;

    std::vector<T> kernels;  // laid out dx fastest, then dy, dt, cin, cout
    std::vector<T> bias;     // one per output channel

    // Window element count Σ1 used as the renormalization numerator.
    std::int64_t window_volume() const { return kx * ky * kt * cin; }
    std::int64_t weight_count() const { return kx * ky * kt * cin * cout; }

    std::int64_t weight_index(std::int64_t dx, std::int64_t dy, std::int64_t dt, std::int64_t ic,
                              std::int64_t oc) const {
        return dx + kx * (dy + ky * (dt + kt * (ic + cin * oc)));
    }

    void validate() const {
        if (kx < 1 || ky < 1 || kt < 1 || kx % 2 == 0 || ky % 2 == 0 || kt % 2 == 0) {
            throw ConfigError("pconv layer: kernel sizes must be odd and >= 1, got (" +
                              std::to_string(kx) + "," + std::to_string(ky) + "," +
                              std::to_string(kt) + ")");
        }
        if (cin < 1 || cout < 1) throw ConfigError("pconv layer: channel counts must be >= 1");
        if (stride.x < 1 || stride.y < 1 || stride.t < 1) {
            throw ConfigError("pconv layer: strides must be >= 1");
        }
        if (static_cast<std::int64_t>(kernels.size()) != weight_count() ||
            static_cast<std::int64_t>(bias.size()) != cout) {
            throw ConfigError("pconv layer: parameter buffer sizes do not match geometry");
        }
    }
};

using PConvLayer = PConvLayerT<float>;

// Fan-in scaled uniform init in [-b, b] with b = sqrt(6 / (kx*ky*kt*cin)),
// bias zero.
template <typename T>
PConvLayerT<T> make_pconv_layer(std::int64_t kx, std::int64_t ky, std::int64_t kt,
                                std::int64_t cin, std::int64_t cout, Dims3 stride,
                                rng::Stream& rand) {
    PConvLayerT<T> layer;
    layer.kx = kx;
    layer.ky = ky;
    layer.kt = kt;
    layer.cin = cin;
    layer.cout = cout;
    layer.stride = stride;
    layer.kernels.resize(static_cast<std::size_t>(layer.weight_count()));
    layer.bias.assign(static_cast<std::size_t>(cout), T(0));
    layer.validate();
    const double bound = std::sqrt(6.0 / static_cast<double>(layer.window_volume()));
    for (auto& w : layer.kernels) w = static_cast<T>(rand.uniform(-bound, bound));
    return layer;
}

inline std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

template <typename T>
Shape4 pconv_output_shape(const Shape4& in, const PConvLayerT<T>& layer) {
    return Shape4{ceil_div(in.nx, layer.stride.x), ceil_div(in.ny, layer.stride.y),
                  ceil_div(in.nt, layer.stride.t), layer.cout};
}

namespace detail {

// Valid kernel-offset range [lo, hi) along one axis for output position o:
// input coordinate o*stride + d - k/2 must land in [0, n). Offsets outside
// the range fall in the zero padding and contribute nothing to either sum.
inline void window_range(std::int64_t o, std::int64_t stride, std::int64_t k, std::int64_t n,
                         std::int64_t& lo, std::int64_t& hi) {
    const std::int64_t center = o * stride - k / 2;
    lo = std::max<std::int64_t>(0, -center);
    hi = std::min<std::int64_t>(k, n - center);
}

// Count of valid mask elements per output voxel, over all input channels.
template <typename T>
std::vector<std::int32_t> window_mask_counts(const MaskedBlockT<T>& input,
                                             const PConvLayerT<T>& layer, const Shape4& out) {
    const Shape4& in = input.shape();
    std::vector<std::int32_t> counts(static_cast<std::size_t>(out.nx * out.ny * out.nt), 0);
    const T* mask = input.mask.data();
    std::int64_t o = 0;
    for (std::int64_t ot = 0; ot < out.nt; ++ot) {
        std::int64_t tlo, thi;
        window_range(ot, layer.stride.t, layer.kt, in.nt, tlo, thi);
        const std::int64_t tbase = ot * layer.stride.t - layer.kt / 2;
        for (std::int64_t oy = 0; oy < out.ny; ++oy) {
            std::int64_t ylo, yhi;
            window_range(oy, layer.stride.y, layer.ky, in.ny, ylo, yhi);
            const std::int64_t ybase = oy * layer.stride.y - layer.ky / 2;
            for (std::int64_t ox = 0; ox < out.nx; ++ox, ++o) {
                std::int64_t xlo, xhi;
                window_range(ox, layer.stride.x, layer.kx, in.nx, xlo, xhi);
                const std::int64_t xbase = ox * layer.stride.x - layer.kx / 2;
                std::int32_t cnt = 0;
                for (std::int64_t ic = 0; ic < layer.cin; ++ic) {
                    for (std::int64_t dt = tlo; dt < thi; ++dt) {
                        for (std::int64_t dy = ylo; dy < yhi; ++dy) {
                            const T* row =
                                mask + input.mask.index(xbase + xlo, ybase + dy, tbase + dt, ic);
                            for (std::int64_t dx = xlo; dx < xhi; ++dx) {
                                cnt += (row[dx - xlo] != T(0));
                            }
                        }
                    }
                }
                counts[static_cast<std::size_t>(o)] = cnt;
            }
        }
    }
    return counts;
}

// Kernel weights rearranged with the output channel fastest, so the inner
// convolution loops read them contiguously while each data element is loaded
// once for all output channels.
template <typename T>
std::vector<T> transpose_kernels_oc_fastest(const PConvLayerT<T>& layer) {
    std::vector<T> t(static_cast<std::size_t>(layer.weight_count()));
    std::int64_t w = 0;  // source order: dx fastest, then dy, dt, ic, oc
    for (std::int64_t oc = 0; oc < layer.cout; ++oc) {
        for (std::int64_t ic = 0; ic < layer.cin; ++ic) {
            for (std::int64_t dt = 0; dt < layer.kt; ++dt) {
                for (std::int64_t dy = 0; dy < layer.ky; ++dy) {
                    for (std::int64_t dx = 0; dx < layer.kx; ++dx, ++w) {
                        const std::int64_t idx =
                            (((ic * layer.kt + dt) * layer.ky + dy) * layer.kx + dx) * layer.cout +
                            oc;
                        t[static_cast<std::size_t>(idx)] = layer.kernels[static_cast<std::size_t>(w)];
                    }
                }
            }
        }
    }
    return t;
}

}  // namespace detail

// Partial convolution forward pass. For every output voxel, sums kernel
// times data over the window, rescales by (window elements) / (valid mask
// elements), and adds the bias; where the window holds no valid element the
// output value and mask are 0. The output mask is shared by all output
// channels. Relies on the MaskedBlock invariant that data is zero at
// masked-out positions, so data ⊙ mask == data.
template <typename T>
MaskedBlockT<T> pconv_forward(const MaskedBlockT<T>& input, const PConvLayerT<T>& layer) {
    layer.validate();
    detail::require_same_shape(input.data.shape(), input.mask.shape(), "pconv input");
    const Shape4& in = input.shape();
    if (in.nc != layer.cin) {
        throw ShapeError("pconv: input has " + std::to_string(in.nc) + " channels, layer expects " +
                         std::to_string(layer.cin));
    }
    const Shape4 out = pconv_output_shape(in, layer);

    const std::vector<std::int32_t> counts = detail::window_mask_counts(input, layer, out);
    const double volume = static_cast<double>(layer.window_volume());
    const std::vector<T> kt = detail::transpose_kernels_oc_fastest(layer);

    MaskedBlockT<T> result{Tensor4T<T>(out, T(0)), Tensor4T<T>(out, T(0))};
    const T* data = input.data.data();
    const std::int64_t plane = out.nx * out.ny * out.nt;
    const std::int64_t cout = layer.cout;
    constexpr std::int64_t kChunk = 16;

    for (std::int64_t oc0 = 0; oc0 < cout; oc0 += kChunk) {
        const std::int64_t ocn = std::min(kChunk, cout - oc0);
        std::int64_t o = 0;
        for (std::int64_t ot = 0; ot < out.nt; ++ot) {
            std::int64_t tlo, thi;
            detail::window_range(ot, layer.stride.t, layer.kt, in.nt, tlo, thi);
            const std::int64_t tbase = ot * layer.stride.t - layer.kt / 2;
            for (std::int64_t oy = 0; oy < out.ny; ++oy) {
                std::int64_t ylo, yhi;
                detail::window_range(oy, layer.stride.y, layer.ky, in.ny, ylo, yhi);
                const std::int64_t ybase = oy * layer.stride.y - layer.ky / 2;
                for (std::int64_t ox = 0; ox < out.nx; ++ox, ++o) {
                    const std::int32_t cnt = counts[static_cast<std::size_t>(o)];
                    if (cnt == 0) continue;
                    std::int64_t xlo, xhi;
                    detail::window_range(ox, layer.stride.x, layer.kx, in.nx, xlo, xhi);
                    const std::int64_t xbase = ox * layer.stride.x - layer.kx / 2;
                    double acc[kChunk] = {};
                    for (std::int64_t ic = 0; ic < layer.cin; ++ic) {
                        for (std::int64_t dt = tlo; dt < thi; ++dt) {
                            for (std::int64_t dy = ylo; dy < yhi; ++dy) {
                                const T* __restrict drow =
                                    data +
                                    input.data.index(xbase + xlo, ybase + dy, tbase + dt, ic);
                                const T* __restrict krow =
                                    kt.data() +
                                    ((((ic * layer.kt + dt) * layer.ky + dy) * layer.kx + xlo) *
                                     cout) +
                                    oc0;
                                for (std::int64_t dx = 0; dx < xhi - xlo; ++dx) {
                                    const double v = static_cast<double>(drow[dx]);
                                    const T* __restrict kk = krow + dx * cout;
                                    for (std::int64_t oc = 0; oc < ocn; ++oc) {
                                        acc[oc] += v * static_cast<double>(kk[oc]);
                                    }
                                }
                            }
                        }
                    }
                    const double ratio = volume / static_cast<double>(cnt);
                    for (std::int64_t oc = 0; oc < ocn; ++oc) {
                        result.data[(oc0 + oc) * plane + o] = static_cast<T>(
                            acc[oc] * ratio +
                            static_cast<double>(layer.bias[static_cast<std::size_t>(oc0 + oc)]));
                    }
                }
            }
        }
    }
    // Mask plane is channel-shared.
    for (std::int64_t oc = 0; oc < out.nc; ++oc) {
        T* m = result.mask.data() + oc * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
            m[i] = counts[static_cast<std::size_t>(i)] > 0 ? T(1) : T(0);
        }
    }
    return result;
}

template <typename T>
struct PConvGradsT {
    std::vector<T> kernels;   // same layout as PConvLayerT::kernels
    std::vector<T> bias;      // per output channel
    Tensor4T<T> input_data;   // gradient w.r.t. input data; 0 at masked-out positions
};

using PConvGrads = PConvGradsT<float>;

// Exact gradients of sum(upstream ⊙ forward_output) w.r.t. kernels, bias and
// input data. The mask and the renormalization ratio depend only on the mask
// and carry no gradient.
template <typename T>
PConvGradsT<T> pconv_backward(const MaskedBlockT<T>& input, const PConvLayerT<T>& layer,
                              const Tensor4T<T>& upstream) {
    layer.validate();
    const Shape4& in = input.shape();
    if (in.nc != layer.cin) {
        throw ShapeError("pconv backward: input has " + std::to_string(in.nc) +
                         " channels, layer expects " + std::to_string(layer.cin));
    }
    const Shape4 out = pconv_output_shape(in, layer);
    detail::require_same_shape(upstream.shape(), out, "pconv backward upstream");

    const std::vector<std::int32_t> counts = detail::window_mask_counts(input, layer, out);
    const double volume = static_cast<double>(layer.window_volume());
    const std::int64_t plane = out.nx * out.ny * out.nt;

    // Upstream gradient times the per-voxel renormalization ratio; zero on
    // the invalid branch.
    std::vector<double> coef(static_cast<std::size_t>(plane * out.nc), 0.0);
    for (std::int64_t oc = 0; oc < out.nc; ++oc) {
        const T* up = upstream.data() + oc * plane;
        double* cf = coef.data() + oc * plane;
        for (std::int64_t o = 0; o < plane; ++o) {
            const std::int32_t cnt = counts[static_cast<std::size_t>(o)];
            if (cnt > 0) {
                cf[o] = static_cast<double>(up[o]) * (volume / static_cast<double>(cnt));
            }
        }
    }

    PConvGradsT<T> grads;
    grads.kernels.assign(static_cast<std::size_t>(layer.weight_count()), T(0));
    grads.bias.assign(static_cast<std::size_t>(layer.cout), T(0));
    grads.input_data = Tensor4T<T>(in, T(0));

    // Bias: plain sum of upstream over valid voxels (the ratio does not apply).
    for (std::int64_t oc = 0; oc < layer.cout; ++oc) {
        const T* up = upstream.data() + oc * plane;
        double acc = 0.0;
        for (std::int64_t o = 0; o < plane; ++o) {
            if (counts[static_cast<std::size_t>(o)] > 0) acc += static_cast<double>(up[o]);
        }
        grads.bias[static_cast<std::size_t>(oc)] = static_cast<T>(acc);
    }

    const std::vector<T> kt = detail::transpose_kernels_oc_fastest(layer);
    const std::int64_t cout = layer.cout;

    // Upstream-times-ratio with the output channel fastest, for the gathers.
    std::vector<double> coef_t(static_cast<std::size_t>(plane * cout));
    for (std::int64_t o = 0; o < plane; ++o) {
        for (std::int64_t oc = 0; oc < cout; ++oc) {
            coef_t[static_cast<std::size_t>(o * cout + oc)] =
                coef[static_cast<std::size_t>(oc * plane + o)];
        }
    }

    // Kernel gradients: scatter coef * data over each window, all output
    // channels per data load.
    {
        std::vector<double> kacc(static_cast<std::size_t>(layer.weight_count()), 0.0);
        const T* data = input.data.data();
        std::int64_t o = 0;
        for (std::int64_t ot = 0; ot < out.nt; ++ot) {
            std::int64_t tlo, thi;
            detail::window_range(ot, layer.stride.t, layer.kt, in.nt, tlo, thi);
            const std::int64_t tbase = ot * layer.stride.t - layer.kt / 2;
            for (std::int64_t oy = 0; oy < out.ny; ++oy) {
                std::int64_t ylo, yhi;
                detail::window_range(oy, layer.stride.y, layer.ky, in.ny, ylo, yhi);
                const std::int64_t ybase = oy * layer.stride.y - layer.ky / 2;
                for (std::int64_t ox = 0; ox < out.nx; ++ox, ++o) {
                    if (counts[static_cast<std::size_t>(o)] == 0) continue;
                    const double* __restrict c = coef_t.data() + o * cout;
                    std::int64_t xlo, xhi;
                    detail::window_range(ox, layer.stride.x, layer.kx, in.nx, xlo, xhi);
                    const std::int64_t xbase = ox * layer.stride.x - layer.kx / 2;
                    for (std::int64_t ic = 0; ic < layer.cin; ++ic) {
                        for (std::int64_t dt = tlo; dt < thi; ++dt) {
                            for (std::int64_t dy = ylo; dy < yhi; ++dy) {
                                const T* __restrict drow =
                                    data +
                                    input.data.index(xbase + xlo, ybase + dy, tbase + dt, ic);
                                double* __restrict krow =
                                    kacc.data() +
                                    ((((ic * layer.kt + dt) * layer.ky + dy) * layer.kx + xlo) *
                                     cout);
                                for (std::int64_t dx = 0; dx < xhi - xlo; ++dx) {
                                    const double v = static_cast<double>(drow[dx]);
                                    double* __restrict kk = krow + dx * cout;
                                    for (std::int64_t oc = 0; oc < cout; ++oc) {
                                        kk[oc] += c[oc] * v;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        // back from oc-fastest to the layer's weight layout
        std::int64_t w = 0;
        for (std::int64_t oc = 0; oc < cout; ++oc) {
            for (std::int64_t ic = 0; ic < layer.cin; ++ic) {
                for (std::int64_t dt = 0; dt < layer.kt; ++dt) {
                    for (std::int64_t dy = 0; dy < layer.ky; ++dy) {
                        for (std::int64_t dx = 0; dx < layer.kx; ++dx, ++w) {
                            const std::int64_t idx =
                                (((ic * layer.kt + dt) * layer.ky + dy) * layer.kx + dx) * cout +
                                oc;
                            grads.kernels[static_cast<std::size_t>(w)] =
                                static_cast<T>(kacc[static_cast<std::size_t>(idx)]);
                        }
                    }
                }
            }
        }
    }

    // Input gradients: gather over the output voxels whose windows reach each
    // input position; zero where the input mask is 0. Only kernel offsets on
    // the right stride residue can map back to an output voxel, so the loops
    // step by the stride instead of testing divisibility.
    {
        const T* mask = input.mask.data();
        T* gi = grads.input_data.data();
        const std::int64_t ht = layer.kt / 2, hy = layer.ky / 2, hx = layer.kx / 2;
        const std::int64_t sx = layer.stride.x, sy = layer.stride.y, st = layer.stride.t;
        constexpr std::int64_t kChunk = 16;
        for (std::int64_t ic = 0; ic < layer.cin; ++ic) {
            for (std::int64_t it = 0; it < in.nt; ++it) {
                const std::int64_t dt0 = (it + ht) % st;
                for (std::int64_t iy = 0; iy < in.ny; ++iy) {
                    const std::int64_t dy0 = (iy + hy) % sy;
                    for (std::int64_t ix = 0; ix < in.nx; ++ix) {
                        const std::int64_t i = input.data.index(ix, iy, it, ic);
                        if (mask[i] == T(0)) continue;
                        const std::int64_t dx0 = (ix + hx) % sx;
                        // per-channel partial sums keep the inner loop free of
                        // a serial reduction; the cross-channel sum happens
                        // once at the end, in fixed channel order
                        double acc = 0.0;
                        for (std::int64_t oc0 = 0; oc0 < cout; oc0 += kChunk) {
                            const std::int64_t ocn = std::min(kChunk, cout - oc0);
                            double accv[kChunk] = {};
                            for (std::int64_t dt = dt0; dt < layer.kt; dt += st) {
                                const std::int64_t ot = (it + ht - dt) / st;
                                if (ot < 0 || ot >= out.nt) continue;
                                for (std::int64_t dy = dy0; dy < layer.ky; dy += sy) {
                                    const std::int64_t oy = (iy + hy - dy) / sy;
                                    if (oy < 0 || oy >= out.ny) continue;
                                    const std::int64_t obase = out.nx * (oy + out.ny * ot);
                                    for (std::int64_t dx = dx0; dx < layer.kx; dx += sx) {
                                        const std::int64_t ox = (ix + hx - dx) / sx;
                                        if (ox < 0 || ox >= out.nx) continue;
                                        const double* __restrict c =
                                            coef_t.data() + (obase + ox) * cout + oc0;
                                        const T* __restrict kk =
                                            kt.data() +
                                            (((ic * layer.kt + dt) * layer.ky + dy) * layer.kx +
                                             dx) *
                                                cout +
                                            oc0;
                                        for (std::int64_t oc = 0; oc < ocn; ++oc) {
                                            accv[oc] += c[oc] * static_cast<double>(kk[oc]);
                                        }
                                    }
                                }
                            }
                            for (std::int64_t oc = 0; oc < ocn; ++oc) acc += accv[oc];
                        }
                        gi[i] = static_cast<T>(acc);
                    }
                }
            }
        }
    }
    return grads;
}

// Nearest-neighbor upsampling: voxel (x,y,t) replicates to the factor-sized
// block starting at (x*fx, y*fy, t*ft); mask replicates identically.
template <typename T>
MaskedBlockT<T> upsample_nearest(const MaskedBlockT<T>& input, Dims3 factor) {
    if (factor.x < 1 || factor.y < 1 || factor.t < 1) {
        throw ConfigError("upsample: factors must be >= 1");
    }
    const Shape4& in = input.shape();
    const Shape4 out{in.nx * factor.x, in.ny * factor.y, in.nt * factor.t, in.nc};
    out.volume();
    MaskedBlockT<T> result{Tensor4T<T>(out, T(0)), Tensor4T<T>(out, T(0))};
    for (std::int64_t c = 0; c < out.nc; ++c) {
        for (std::int64_t t = 0; t < out.nt; ++t) {
            for (std::int64_t y = 0; y < out.ny; ++y) {
                const std::int64_t sy = y / factor.y, st = t / factor.t;
                for (std::int64_t x = 0; x < out.nx; ++x) {
                    const std::int64_t src = input.data.index(x / factor.x, sy, st, c);
                    const std::int64_t dst = result.data.index(x, y, t, c);
                    result.data[dst] = input.data[src];
                    result.mask[dst] = input.mask[src];
                }
            }
        }
    }
    return result;
}

// Adjoint of upsample_nearest: sums the gradient over each replicated cell.
template <typename T>
Tensor4T<T> upsample_nearest_backward(const Tensor4T<T>& grad_output, Dims3 factor,
                                      const Shape4& input_shape) {
    const Shape4 expect{input_shape.nx * factor.x, input_shape.ny * factor.y,
                        input_shape.nt * factor.t, input_shape.nc};
    detail::require_same_shape(grad_output.shape(), expect, "upsample backward");
    Tensor4T<T> grad_in(input_shape, T(0));
    const Shape4& out = grad_output.shape();
    for (std::int64_t c = 0; c < out.nc; ++c) {
        for (std::int64_t t = 0; t < out.nt; ++t) {
            for (std::int64_t y = 0; y < out.ny; ++y) {
                const std::int64_t sy = y / factor.y, st = t / factor.t;
                for (std::int64_t x = 0; x < out.nx; ++x) {
                    grad_in.at(x / factor.x, sy, st, c) += grad_output.at(x, y, t, c);
                }
            }
        }
    }
    return grad_in;
}

// y = x for x >= 0, alpha * x otherwise.
template <typename T>
Tensor4T<T> leaky_relu(const Tensor4T<T>& x, double alpha) {
    Tensor4T<T> y(x.shape(), T(0));
    const T a = static_cast<T>(alpha);
    for (std::int64_t i = 0; i < x.size(); ++i) {
        const T v = x[i];
        y[i] = v >= T(0) ? v : a * v;
    }
    return y;
}

// Slope 1 on x >= 0 and alpha on x < 0, applied to the upstream gradient.
template <typename T>
Tensor4T<T> leaky_relu_backward(const Tensor4T<T>& pre_activation, const Tensor4T<T>& grad_y,
                                double alpha) {
    detail::require_same_shape(pre_activation.shape(), grad_y.shape(), "leaky_relu backward");
    Tensor4T<T> grad_x(grad_y.shape(), T(0));
    const T a = static_cast<T>(alpha);
    for (std::int64_t i = 0; i < grad_y.size(); ++i) {
        grad_x[i] = pre_activation[i] >= T(0) ? grad_y[i] : a * grad_y[i];
    }
    return grad_x;
}

}  // namespace stpconv
