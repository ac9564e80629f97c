#include <benchmark/benchmark.h>

#include "stpconv/baselines.hpp"
#include "stpconv/blocks.hpp"
#include "stpconv/maskgen.hpp"
#include "stpconv/model.hpp"

namespace {

using namespace stpconv;

ModelSpec bench_spec(std::int64_t filters) {
    ModelSpec spec;
    spec.num_blocks = 2;
    spec.layers_per_block = 1;
    spec.strides = {Dims3{2, 2, 2}, Dims3{2, 2, 2}};
    spec.kernel_sizes = {Dims3{3, 3, 3}};
    spec.filters = {filters, filters};
    return spec;
}

MaskedBlock bench_block(const Shape4& shape) {
    SyntheticConfig cfg;
    cfg.n_blocks = 1;
    cfg.shape = shape;
    cfg.seed = 21;
    return generate_synthetic(cfg).front();
}

// Single-block model prediction, the unit of the tiled inference path.
void BM_ModelPredictBlock(benchmark::State& state) {
    const std::int64_t filters = state.range(0);
    const ModelSpec spec = bench_spec(filters);
    const ModelState model = build_model<float>(spec, 1);
    const MaskedBlock block = bench_block(Shape4{64, 64, 16, 1});
    for (auto _ : state) {
        benchmark::DoNotOptimize(model_forward(model, spec, block));
    }
}
BENCHMARK(BM_ModelPredictBlock)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_ModelPredictPaperSizedBlock(benchmark::State& state) {
    const ModelSpec spec = bench_spec(16);
    const ModelState model = build_model<float>(spec, 1);
    const MaskedBlock block = bench_block(Shape4{128, 128, 16, 1});
    for (auto _ : state) {
        benchmark::DoNotOptimize(model_forward(model, spec, block));
    }
}
BENCHMARK(BM_ModelPredictPaperSizedBlock)->Unit(benchmark::kMillisecond);

void BM_BlockMean(benchmark::State& state) {
    const MaskedBlock block = bench_block(Shape4{128, 128, 16, 1});
    for (auto _ : state) {
        benchmark::DoNotOptimize(predict_block_mean(block));
    }
}
BENCHMARK(BM_BlockMean)->Unit(benchmark::kMillisecond);

void BM_TimeInterp(benchmark::State& state) {
    const MaskedBlock block = bench_block(Shape4{128, 128, 16, 1});
    for (auto _ : state) {
        benchmark::DoNotOptimize(predict_time_interp(block));
    }
}
BENCHMARK(BM_TimeInterp)->Unit(benchmark::kMillisecond);

void BM_GapMask(benchmark::State& state) {
    GapConfig cfg;
    cfg.correlation_length = 10.0;
    cfg.mask_fraction = 0.3;
    cfg.seed = 5;
    for (auto _ : state) {
        benchmark::DoNotOptimize(make_gap_mask(Shape4{128, 128, 16, 1}, cfg));
    }
}
BENCHMARK(BM_GapMask)->Unit(benchmark::kMillisecond);

void BM_TileAndStitch(benchmark::State& state) {
    const MaskedBlock raster = bench_block(Shape4{240, 240, 16, 1});
    BlockGrid grid;
    grid.raster = raster.shape();
    grid.block = Dims3{128, 128, 16};
    grid.margin = Dims3{4, 4, 0};
    for (auto _ : state) {
        std::vector<std::pair<Tensor4, Placement>> predictions;
        for (TiledBlock& tb : tile(raster, grid)) {
            predictions.emplace_back(std::move(tb.block.data), tb.placement);
        }
        benchmark::DoNotOptimize(stitch(predictions, grid));
    }
}
BENCHMARK(BM_TileAndStitch)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
