#include <doctest.h>

#include "oracles.hpp"
#include "stpconv/pconv.hpp"

using namespace stpconv;

TEST_SUITE_BEGIN("pconv");

namespace {

PConvLayer ones_kernel_layer(std::int64_t kx, std::int64_t ky, std::int64_t kt, std::int64_t cin,
                             std::int64_t cout, Dims3 stride = Dims3{}) {
    PConvLayer layer;
    layer.kx = kx;
    layer.ky = ky;
    layer.kt = kt;
    layer.cin = cin;
    layer.cout = cout;
    layer.stride = stride;
    layer.kernels.assign(static_cast<std::size_t>(layer.weight_count()), 1.0f);
    layer.bias.assign(static_cast<std::size_t>(cout), 0.0f);
    return layer;
}

}  // namespace

TEST_CASE("renormalized window, worked example") {
    MaskedBlock in{Tensor4(Shape4{3, 1, 1, 1}, 0.0f), Tensor4(Shape4{3, 1, 1, 1}, 0.0f)};
    in.data[0] = 2.0f;
    in.data[2] = 4.0f;
    in.mask[0] = 1.0f;
    in.mask[2] = 1.0f;

    const MaskedBlock out = pconv_forward(in, ones_kernel_layer(3, 1, 1, 1, 1));
    // center window: sum 6 over 2 valid of 3 -> 6 * 3/2
    CHECK(out.data[1] == doctest::Approx(9.0).epsilon(1e-6));
    CHECK(out.mask[1] == 1.0f);
    // edge windows hold one valid value each, ratio 3/1
    CHECK(out.data[0] == doctest::Approx(6.0).epsilon(1e-6));
    CHECK(out.data[2] == doctest::Approx(12.0).epsilon(1e-6));
    CHECK(out.mask[0] == 1.0f);
    CHECK(out.mask[2] == 1.0f);
}

TEST_CASE("all-zero mask propagates the invalid branch") {
    MaskedBlock in{Tensor4(Shape4{4, 3, 2, 2}, 0.0f), Tensor4(Shape4{4, 3, 2, 2}, 0.0f)};
    rng::Stream rand(3);
    auto layer = make_pconv_layer<float>(3, 3, 1, 2, 2, Dims3{}, rand);
    const MaskedBlock out = pconv_forward(in, layer);
    for (std::int64_t i = 0; i < out.data.size(); ++i) {
        CHECK(out.data[i] == 0.0f);
        CHECK(out.mask[i] == 0.0f);
    }
}

TEST_CASE("all-ones mask: interior equals the ordinary convolution oracle") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto inst = oracle::random_instance(1000 + seed, /*all_valid=*/true);
        const auto out = pconv_forward(inst.input, inst.layer);
        const auto naive = oracle::naive_conv(inst.input.data, inst.layer);
        const Shape4 os = out.data.shape();
        for (std::int64_t ot = 0; ot < os.nt; ++ot) {
            for (std::int64_t oy = 0; oy < os.ny; ++oy) {
                for (std::int64_t ox = 0; ox < os.nx; ++ox) {
                    if (!oracle::interior_window(inst.input.shape(), inst.layer, ox, oy, ot)) {
                        continue;
                    }
                    for (std::int64_t oc = 0; oc < os.nc; ++oc) {
                        CAPTURE(seed);
                        CHECK(oracle::close_rel(out.data.at(ox, oy, ot, oc),
                                                naive.at(ox, oy, ot, oc), 1e-5));
                    }
                }
            }
        }
    }
}

TEST_CASE("all-ones mask: boundary rescales the oracle by window/valid") {
    auto inst = oracle::random_instance(77, /*all_valid=*/true);
    for (auto& b : inst.layer.bias) b = 0.0;
    const auto out = pconv_forward(inst.input, inst.layer);
    const auto naive = oracle::naive_conv(inst.input.data, inst.layer);
    const Shape4 os = out.data.shape();
    const Shape4& is = inst.input.shape();
    for (std::int64_t ot = 0; ot < os.nt; ++ot) {
        for (std::int64_t oy = 0; oy < os.ny; ++oy) {
            for (std::int64_t ox = 0; ox < os.nx; ++ox) {
                // count in-range window positions
                std::int64_t inside = 0;
                for (std::int64_t dt = 0; dt < inst.layer.kt; ++dt) {
                    for (std::int64_t dy = 0; dy < inst.layer.ky; ++dy) {
                        for (std::int64_t dx = 0; dx < inst.layer.kx; ++dx) {
                            const std::int64_t ix = ox * inst.layer.stride.x + dx - inst.layer.kx / 2;
                            const std::int64_t iy = oy * inst.layer.stride.y + dy - inst.layer.ky / 2;
                            const std::int64_t it = ot * inst.layer.stride.t + dt - inst.layer.kt / 2;
                            if (ix >= 0 && ix < is.nx && iy >= 0 && iy < is.ny && it >= 0 &&
                                it < is.nt) {
                                ++inside;
                            }
                        }
                    }
                }
                const double ratio = static_cast<double>(inst.layer.window_volume()) /
                                     static_cast<double>(inside * inst.layer.cin);
                for (std::int64_t oc = 0; oc < os.nc; ++oc) {
                    CHECK(oracle::close_rel(out.data.at(ox, oy, ot, oc),
                                            naive.at(ox, oy, ot, oc) * ratio, 1e-5));
                }
            }
        }
    }
}

TEST_CASE("mask update matches the window-OR oracle") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto inst = oracle::random_instance(2000 + seed);
        const auto out = pconv_forward(inst.input, inst.layer);
        const Shape4 os = out.data.shape();
        for (std::int64_t ot = 0; ot < os.nt; ++ot) {
            for (std::int64_t oy = 0; oy < os.ny; ++oy) {
                for (std::int64_t ox = 0; ox < os.nx; ++ox) {
                    const bool expect = oracle::window_has_valid(inst.input, inst.layer, ox, oy, ot);
                    for (std::int64_t oc = 0; oc < os.nc; ++oc) {
                        CHECK(out.mask.at(ox, oy, ot, oc) == (expect ? 1.0 : 0.0));
                    }
                }
            }
        }
    }
}

TEST_CASE("stride-1 valid set never shrinks") {
    auto inst = oracle::random_instance(42);
    inst.layer.stride = Dims3{1, 1, 1};
    const auto out = pconv_forward(inst.input, inst.layer);
    for (std::int64_t c = 0; c < inst.input.shape().nc; ++c) {
        for (std::int64_t t = 0; t < inst.input.shape().nt; ++t) {
            for (std::int64_t y = 0; y < inst.input.shape().ny; ++y) {
                for (std::int64_t x = 0; x < inst.input.shape().nx; ++x) {
                    if (inst.input.mask.at(x, y, t, c) != 0.0) {
                        CHECK(out.mask.at(x, y, t, 0) == 1.0);
                    }
                }
            }
        }
    }
}

TEST_CASE("constant field is reproduced exactly up to the window scale") {
    // Constant c, all-ones kernels, zero bias: output = c * kx*ky*kt*cin
    // wherever any valid voxel is in reach, no matter how many.
    rng::Stream rand(5);
    const Shape4 s{9, 7, 3, 2};
    const float c = 0.37f;
    MaskedBlock in{Tensor4(s, 0.0f), Tensor4(s, 0.0f)};
    for (std::int64_t i = 0; i < in.data.size(); ++i) {
        if (rand.uniform01() < 0.4) {
            in.mask[i] = 1.0f;
            in.data[i] = c;
        }
    }
    const auto layer = ones_kernel_layer(3, 3, 3, 2, 1);
    const double expect = static_cast<double>(c) * static_cast<double>(layer.window_volume());
    const MaskedBlock out = pconv_forward(in, layer);
    for (std::int64_t i = 0; i < out.data.size(); ++i) {
        if (out.mask[i] != 0.0f) {
            CHECK(oracle::close_rel(out.data[i], expect, 1e-5));
        }
    }
}

TEST_CASE("gradients match central finite differences") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto inst = oracle::random_instance(3000 + seed);
        const auto grads = pconv_backward(inst.input, inst.layer, inst.upstream);
        CAPTURE(seed);

        for (std::size_t w = 0; w < inst.layer.kernels.size(); ++w) {
            const double fd = oracle::central_difference(inst.layer.kernels[w], inst);
            CHECK(oracle::close_rel(grads.kernels[w], fd, 1e-4));
        }
        for (std::size_t b = 0; b < inst.layer.bias.size(); ++b) {
            const double fd = oracle::central_difference(inst.layer.bias[b], inst);
            CHECK(oracle::close_rel(grads.bias[b], fd, 1e-4));
        }
        for (std::int64_t i = 0; i < inst.input.data.size(); ++i) {
            if (inst.input.mask[i] == 0.0) {
                CHECK(grads.input_data[i] == 0.0);
                continue;
            }
            const double fd = oracle::central_difference(inst.input.data[i], inst);
            CHECK(oracle::close_rel(grads.input_data[i], fd, 1e-4));
        }
    }
}

TEST_CASE("bias gradient sums upstream over valid voxels") {
    auto inst = oracle::random_instance(99);
    const auto out = pconv_forward(inst.input, inst.layer);
    const auto grads = pconv_backward(inst.input, inst.layer, inst.upstream);
    const Shape4 os = out.data.shape();
    const std::int64_t plane = os.nx * os.ny * os.nt;
    for (std::int64_t oc = 0; oc < os.nc; ++oc) {
        double expect = 0.0;
        for (std::int64_t o = 0; o < plane; ++o) {
            if (out.mask[o] != 0.0) expect += inst.upstream[oc * plane + o];
        }
        CHECK(oracle::close_rel(grads.bias[static_cast<std::size_t>(oc)], expect, 1e-9));
    }
}

TEST_CASE("zero upstream gives zero gradients") {
    auto inst = oracle::random_instance(123);
    const Tensor4d zero(inst.upstream.shape(), 0.0);
    const auto grads = pconv_backward(inst.input, inst.layer, zero);
    for (double g : grads.kernels) CHECK(g == 0.0);
    for (double g : grads.bias) CHECK(g == 0.0);
    for (std::int64_t i = 0; i < grads.input_data.size(); ++i) CHECK(grads.input_data[i] == 0.0);
}

TEST_CASE("shape errors") {
    MaskedBlock in{Tensor4(Shape4{4, 4, 2, 2}, 0.0f), Tensor4(Shape4{4, 4, 2, 2}, 0.0f)};
    const auto layer = ones_kernel_layer(3, 3, 1, 3, 1);  // expects 3 channels
    CHECK_THROWS_AS(pconv_forward(in, layer), ShapeError);

    const auto ok_layer = ones_kernel_layer(3, 3, 1, 2, 1);
    Tensor4 bad_upstream(Shape4{4, 4, 2, 2}, 0.0f);  // cout must be 1
    CHECK_THROWS_AS(pconv_backward(in, ok_layer, bad_upstream), ShapeError);

    PConvLayer even = ok_layer;
    even.kx = 2;
    even.kernels.assign(static_cast<std::size_t>(even.weight_count()), 1.0f);
    CHECK_THROWS_AS(pconv_forward(in, even), ConfigError);
}

TEST_CASE("upsample replication") {
    MaskedBlock one{Tensor4(Shape4{1, 1, 1, 1}, 7.0f), Tensor4(Shape4{1, 1, 1, 1}, 1.0f)};
    const auto up = upsample_nearest(one, Dims3{2, 2, 2});
    CHECK(up.shape() == Shape4{2, 2, 2, 1});
    for (std::int64_t i = 0; i < 8; ++i) {
        CHECK(up.data[i] == 7.0f);
        CHECK(up.mask[i] == 1.0f);
    }

    MaskedBlock two{Tensor4(Shape4{2, 1, 1, 1}, 0.0f), Tensor4(Shape4{2, 1, 1, 1}, 0.0f)};
    two.data[0] = 3.0f;
    two.mask[0] = 1.0f;
    CHECK(upsample_nearest(two, Dims3{1, 1, 1}).data == two.data);
    const auto upx = upsample_nearest(two, Dims3{2, 1, 1});
    CHECK(upx.mask[0] == 1.0f);
    CHECK(upx.mask[1] == 1.0f);
    CHECK(upx.mask[2] == 0.0f);
    CHECK(upx.mask[3] == 0.0f);
}

TEST_CASE("upsample backward is the adjoint of upsample") {
    rng::Stream rand(11);
    const Shape4 s{3, 2, 2, 2};
    MaskedBlockd in{Tensor4d(s, 0.0), Tensor4d(s, 1.0)};
    for (std::int64_t i = 0; i < in.data.size(); ++i) in.data[i] = rand.uniform(-1.0, 1.0);
    const Dims3 f{2, 3, 1};
    const auto up = upsample_nearest(in, f);
    Tensor4d g(up.data.shape(), 0.0);
    for (std::int64_t i = 0; i < g.size(); ++i) g[i] = rand.uniform(-1.0, 1.0);
    const Tensor4d gin = upsample_nearest_backward(g, f, s);

    double lhs = 0.0, rhs = 0.0;
    for (std::int64_t i = 0; i < g.size(); ++i) lhs += g[i] * up.data[i];
    for (std::int64_t i = 0; i < gin.size(); ++i) rhs += gin[i] * in.data[i];
    CHECK(oracle::close_rel(lhs, rhs, 1e-12));
}

TEST_CASE("leaky relu and its slope") {
    Tensor4 x(Shape4{3, 1, 1, 1}, 0.0f);
    x[0] = 2.0f;
    x[1] = -2.0f;
    x[2] = -1.0f;
    const Tensor4 y = leaky_relu(x, 0.1);
    CHECK(y[0] == 2.0f);
    CHECK(y[1] == doctest::Approx(-0.2f));

    Tensor4 g(Shape4{3, 1, 1, 1}, 1.0f);
    const Tensor4 gx = leaky_relu_backward(x, g, 0.1);
    CHECK(gx[0] == 1.0f);
    CHECK(gx[2] == doctest::Approx(0.1f));
}

TEST_CASE("seeded init is deterministic and fan-in bounded") {
    rng::Stream a(21), b(21);
    const auto la = make_pconv_layer<float>(3, 3, 3, 4, 2, Dims3{2, 2, 2}, a);
    const auto lb = make_pconv_layer<float>(3, 3, 3, 4, 2, Dims3{2, 2, 2}, b);
    CHECK(la.kernels == lb.kernels);
    const double bound = std::sqrt(6.0 / static_cast<double>(la.window_volume()));
    for (float w : la.kernels) {
        CHECK(std::abs(w) <= bound);
    }
    for (float bias : la.bias) CHECK(bias == 0.0f);
}

TEST_SUITE_END();
