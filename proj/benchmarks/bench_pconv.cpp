#include <benchmark/benchmark.h>

#include "stpconv/pconv.hpp"
#include "stpconv/rng.hpp"

namespace {

using namespace stpconv;

MaskedBlock random_block(const Shape4& shape, double valid_p) {
    rng::Stream rand(11);
    MaskedBlock block{Tensor4(shape, 0.0f), Tensor4(shape, 0.0f)};
    for (std::int64_t i = 0; i < block.data.size(); ++i) {
        if (rand.uniform01() < valid_p) {
            block.mask[i] = 1.0f;
            block.data[i] = static_cast<float>(rand.uniform(-1.0, 1.0));
        }
    }
    return block;
}

void BM_PConvForward(benchmark::State& state) {
    const std::int64_t channels = state.range(0);
    rng::Stream rand(3);
    const auto layer =
        make_pconv_layer<float>(3, 3, 3, channels, channels, Dims3{1, 1, 1}, rand);
    const MaskedBlock input = random_block(Shape4{64, 64, 16, channels}, 0.6);
    for (auto _ : state) {
        benchmark::DoNotOptimize(pconv_forward(input, layer));
    }
    state.SetItemsProcessed(state.iterations() * input.data.size());
}
BENCHMARK(BM_PConvForward)->Arg(1)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_PConvForwardStrided(benchmark::State& state) {
    rng::Stream rand(3);
    const auto layer = make_pconv_layer<float>(3, 3, 3, 8, 8, Dims3{2, 2, 2}, rand);
    const MaskedBlock input = random_block(Shape4{64, 64, 16, 8}, 0.6);
    for (auto _ : state) {
        benchmark::DoNotOptimize(pconv_forward(input, layer));
    }
}
BENCHMARK(BM_PConvForwardStrided)->Unit(benchmark::kMillisecond);

void BM_PConvBackward(benchmark::State& state) {
    const std::int64_t channels = state.range(0);
    rng::Stream rand(3);
    const auto layer =
        make_pconv_layer<float>(3, 3, 3, channels, channels, Dims3{1, 1, 1}, rand);
    const MaskedBlock input = random_block(Shape4{64, 64, 16, channels}, 0.6);
    const Shape4 out = pconv_output_shape(input.shape(), layer);
    Tensor4 upstream(out, 0.0f);
    rng::Stream urand(5);
    for (std::int64_t i = 0; i < upstream.size(); ++i) {
        upstream[i] = static_cast<float>(urand.uniform(-1.0, 1.0));
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(pconv_backward(input, layer, upstream));
    }
}
BENCHMARK(BM_PConvBackward)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_UpsampleNearest(benchmark::State& state) {
    const MaskedBlock input = random_block(Shape4{32, 32, 8, 16}, 0.6);
    for (auto _ : state) {
        benchmark::DoNotOptimize(upsample_nearest(input, Dims3{2, 2, 2}));
    }
}
BENCHMARK(BM_UpsampleNearest)->Unit(benchmark::kMillisecond);

}  // namespace
