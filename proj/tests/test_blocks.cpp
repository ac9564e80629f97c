#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "stpconv/blocks.hpp"
#include "stpconv/rng.hpp"

using namespace stpconv;

TEST_SUITE_BEGIN("blocks");

namespace {

std::filesystem::path tmp_path(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "stpconv_blocks_test";
    std::filesystem::create_directories(dir);
    return dir / name;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("block file round trip with NaN-coded gaps") {
    const Shape4 s{2, 2, 1, 1};
    MaskedBlock block{Tensor4(s, 0.0f), Tensor4(s, 1.0f)};
    block.data[0] = 1.25f;
    block.data[1] = -2.5f;
    block.data[2] = 0.1f;
    block.mask[3] = 0.0f;

    const auto path = tmp_path("roundtrip.stpb");
    save_block(path.string(), block);
    const MaskedBlock loaded = load_block(path.string());
    CHECK(loaded.mask[0] == 1.0f);
    CHECK(loaded.mask[1] == 1.0f);
    CHECK(loaded.mask[2] == 1.0f);
    CHECK(loaded.mask[3] == 0.0f);
    CHECK(loaded.data == block.data);

    const auto path2 = tmp_path("roundtrip2.stpb");
    save_block(path2.string(), loaded);
    CHECK(slurp(path) == slurp(path2));
}

TEST_CASE("file size follows the header contract") {
    const Shape4 s{128, 128, 16, 1};
    MaskedBlock block{Tensor4(s, 1.0f), Tensor4(s, 1.0f)};
    const auto path = tmp_path("sized.stpb");
    save_block(path.string(), block);
    // 21-byte header + 128*128*16*4 bytes of payload
    CHECK(std::filesystem::file_size(path) == 21 + 1048576);
}

TEST_CASE("malformed files are rejected with a byte offset") {
    const auto path = tmp_path("broken.stpb");
    {
        MaskedBlock block{Tensor4(Shape4{2, 2, 2, 1}, 1.0f), Tensor4(Shape4{2, 2, 2, 1}, 1.0f)};
        save_block(path.string(), block);
    }
    auto bytes = slurp(path);

    SUBCASE("bad magic") {
        bytes[0] = 'X';
        std::ofstream(path, std::ios::binary) << bytes;
        CHECK_THROWS_WITH_AS(load_block(path.string()), doctest::Contains("byte offset 0"),
                             DataError);
    }
    SUBCASE("bad version") {
        bytes[4] = 9;
        std::ofstream(path, std::ios::binary) << bytes;
        CHECK_THROWS_WITH_AS(load_block(path.string()), doctest::Contains("byte offset 4"),
                             DataError);
    }
    SUBCASE("truncated payload") {
        std::ofstream(path, std::ios::binary) << bytes.substr(0, bytes.size() - 5);
        CHECK_THROWS_WITH_AS(load_block(path.string()), doctest::Contains("byte offset"),
                             DataError);
    }
}

TEST_CASE("synthetic blocks: static configuration repeats slices") {
    SyntheticConfig cfg;
    cfg.n_blocks = 1;
    cfg.shape = Shape4{24, 24, 4, 1};
    cfg.velocity_x = 0.0;
    cfg.velocity_y = 0.0;
    cfg.noise_sd = 0.0;
    cfg.native_gap_fraction = 0.0;
    cfg.seed = 7;
    const auto blocks = generate_synthetic(cfg);
    REQUIRE(blocks.size() == 1);
    const MaskedBlock& b = blocks[0];
    for (std::int64_t t = 1; t < 4; ++t) {
        for (std::int64_t y = 0; y < 24; ++y) {
            for (std::int64_t x = 0; x < 24; ++x) {
                CHECK(b.data.at(x, y, t, 0) == b.data.at(x, y, 0, 0));
            }
        }
    }
}

TEST_CASE("synthetic blocks translate by the configured velocity") {
    SyntheticConfig cfg;
    cfg.n_blocks = 1;
    cfg.shape = Shape4{32, 32, 4, 1};
    cfg.velocity_x = 1.0;
    cfg.velocity_y = 0.0;
    cfg.velocity_jitter = 0.0;
    cfg.noise_sd = 0.0;
    cfg.native_gap_fraction = 0.0;
    cfg.seed = 8;
    const auto blocks = generate_synthetic(cfg);
    const MaskedBlock& b = blocks[0];
    double max_diff = 0.0;
    for (std::int64_t t = 0; t + 1 < 4; ++t) {
        for (std::int64_t y = 2; y < 30; ++y) {
            for (std::int64_t x = 2; x < 30; ++x) {
                max_diff = std::max(max_diff,
                                    std::abs(static_cast<double>(b.data.at(x, y, t + 1, 0)) -
                                             static_cast<double>(b.data.at(x - 1, y, t, 0))));
            }
        }
    }
    CHECK(max_diff < 1e-5);
}

TEST_CASE("synthetic generation is deterministic and in range") {
    SyntheticConfig cfg;
    cfg.n_blocks = 3;
    cfg.shape = Shape4{16, 16, 4, 1};
    cfg.seed = 9;
    const auto a = generate_synthetic(cfg);
    const auto b = generate_synthetic(cfg);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].data == b[i].data);
        CHECK(a[i].mask == b[i].mask);
        a[i].validate();
        for (std::int64_t j = 0; j < a[i].data.size(); ++j) {
            CHECK(a[i].data[j] < 0.4f);
            CHECK(a[i].data[j] > -0.1f);
        }
    }
}

TEST_CASE("tile geometry follows the overlap contract") {
    BlockGrid grid;
    grid.raster = Shape4{240, 128, 16, 1};
    grid.block = Dims3{128, 128, 16};
    grid.margin = Dims3{4, 0, 0};
    grid.validate();
    CHECK(grid.core() == Dims3{120, 128, 16});
    CHECK(grid.counts() == Dims3{2, 1, 1});

    MaskedBlock raster{Tensor4(grid.raster, 1.0f), Tensor4(grid.raster, 1.0f)};
    const auto tiles = tile(raster, grid);
    REQUIRE(tiles.size() == 2);
    CHECK(tiles[0].placement.core_lo.x == 0);
    CHECK(tiles[0].placement.core_hi.x == 120);
    CHECK(tiles[1].placement.core_lo.x == 120);
    CHECK(tiles[1].placement.core_hi.x == 240);
    // adjacent blocks overlap by twice the margin
    const std::int64_t overlap = (tiles[0].placement.origin.x + grid.block.x) -
                                 tiles[1].placement.origin.x;
    CHECK(overlap == 8);
}

TEST_CASE("every raster voxel lies in exactly one core") {
    BlockGrid grid;
    grid.raster = Shape4{50, 40, 10, 1};
    grid.block = Dims3{24, 24, 8};
    grid.margin = Dims3{3, 2, 1};
    grid.validate();
    const Dims3 counts = grid.counts();
    std::vector<int> covered(static_cast<std::size_t>(grid.raster.volume()), 0);
    MaskedBlock raster{Tensor4(grid.raster, 0.5f), Tensor4(grid.raster, 1.0f)};
    for (const TiledBlock& tb : tile(raster, grid)) {
        const Placement& p = tb.placement;
        for (std::int64_t t = p.core_lo.t; t < p.core_hi.t; ++t) {
            for (std::int64_t y = p.core_lo.y; y < p.core_hi.y; ++y) {
                for (std::int64_t x = p.core_lo.x; x < p.core_hi.x; ++x) {
                    covered[static_cast<std::size_t>(raster.data.index(x, y, t, 0))] += 1;
                }
            }
        }
    }
    for (int c : covered) CHECK(c == 1);
    // cores (18, 20, 6): ceil(50/18) * ceil(40/20) * ceil(10/6)
    CHECK(counts.x * counts.y * counts.t == 12);
}

TEST_CASE("tile then stitch with the identity reproduces the raster") {
    rng::Stream rand(61);
    BlockGrid grid;
    grid.raster = Shape4{40, 30, 8, 2};
    grid.block = Dims3{20, 20, 8};
    grid.margin = Dims3{4, 4, 0};
    MaskedBlock raster{Tensor4(grid.raster, 0.0f), Tensor4(grid.raster, 0.0f)};
    for (std::int64_t i = 0; i < raster.data.size(); ++i) {
        if (rand.uniform01() < 0.8) {
            raster.mask[i] = 1.0f;
            raster.data[i] = static_cast<float>(rand.uniform(-3.0, 3.0));
        }
    }
    std::vector<std::pair<Tensor4, Placement>> predictions;
    for (TiledBlock& tb : tile(raster, grid)) {
        predictions.emplace_back(tb.block.data, tb.placement);
    }
    const Tensor4 stitched = stitch(predictions, grid);
    for (std::int64_t i = 0; i < raster.data.size(); ++i) {
        if (raster.mask[i] != 0.0f) {
            CHECK(stitched[i] == raster.data[i]);
        }
    }
}

TEST_CASE("overlap voxels take the core owner's value") {
    BlockGrid grid;
    grid.raster = Shape4{8, 4, 2, 1};
    grid.block = Dims3{6, 4, 2};
    grid.margin = Dims3{1, 0, 0};  // cores of width 4: two blocks along x
    grid.validate();
    MaskedBlock raster{Tensor4(grid.raster, 0.0f), Tensor4(grid.raster, 1.0f)};
    auto tiles = tile(raster, grid);
    REQUIRE(tiles.size() == 2);
    std::vector<std::pair<Tensor4, Placement>> predictions;
    predictions.emplace_back(Tensor4(Shape4{6, 4, 2, 1}, 1.0f), tiles[0].placement);
    predictions.emplace_back(Tensor4(Shape4{6, 4, 2, 1}, 2.0f), tiles[1].placement);
    const Tensor4 stitched = stitch(predictions, grid);
    for (std::int64_t x = 0; x < 8; ++x) {
        CHECK(stitched.at(x, 0, 0, 0) == (x < 4 ? 1.0f : 2.0f));
    }
}

TEST_CASE("grid and stitch error handling") {
    BlockGrid grid;
    grid.raster = Shape4{16, 16, 4, 1};
    grid.block = Dims3{8, 8, 4};
    grid.margin = Dims3{4, 0, 0};  // margin is half the block: empty core
    CHECK_THROWS_AS(grid.validate(), ConfigError);

    grid.margin = Dims3{1, 1, 0};
    MaskedBlock raster{Tensor4(grid.raster, 0.0f), Tensor4(grid.raster, 1.0f)};
    auto tiles = tile(raster, grid);
    std::vector<std::pair<Tensor4, Placement>> predictions;
    for (std::size_t i = 0; i + 1 < tiles.size(); ++i) {  // drop one placement
        predictions.emplace_back(tiles[i].block.data, tiles[i].placement);
    }
    CHECK_THROWS_AS(stitch(predictions, grid), DataError);
}

TEST_CASE("merge keeps observations bit-exact") {
    rng::Stream rand(67);
    const Shape4 s{6, 6, 2, 1};
    MaskedBlock original{Tensor4(s, 0.0f), Tensor4(s, 0.0f)};
    Tensor4 pred(s, 0.0f);
    for (std::int64_t i = 0; i < s.volume(); ++i) {
        pred[i] = static_cast<float>(rand.uniform(-1.0, 1.0));
        if (rand.uniform01() < 0.5) {
            original.mask[i] = 1.0f;
            original.data[i] = static_cast<float>(rand.uniform(-1.0, 1.0));
        }
    }
    const Tensor4 merged = merge_with_observations(pred, original);
    for (std::int64_t i = 0; i < s.volume(); ++i) {
        CHECK(merged[i] == (original.mask[i] != 0.0f ? original.data[i] : pred[i]));
    }

    MaskedBlock full{pred, Tensor4(s, 1.0f)};
    CHECK(merge_with_observations(Tensor4(s, 9.0f), full) == pred);
    MaskedBlock empty{Tensor4(s, 0.0f), Tensor4(s, 0.0f)};
    CHECK(merge_with_observations(pred, empty) == pred);
}

TEST_CASE("pgm rendering writes one image per slice") {
    const Shape4 s{4, 3, 2, 1};
    MaskedBlock block{Tensor4(s, 0.0f), Tensor4(s, 1.0f)};
    block.data[0] = 0.07f;
    block.mask[5] = 0.0f;
    const auto prefix = tmp_path("render");
    render_pgm_slices(prefix.string(), block, 0.0, 0.07);
    for (int t = 0; t < 2; ++t) {
        const auto p = tmp_path("render_t00" + std::to_string(t) + ".pgm");
        REQUIRE(std::filesystem::exists(p));
        const std::string bytes = slurp(p);
        CHECK(bytes.rfind("P5\n4 3\n255\n", 0) == 0);
        CHECK(bytes.size() == 11 + 12);
    }
    const std::string first = slurp(tmp_path("render_t000.pgm"));
    CHECK(static_cast<unsigned char>(first[11]) == 254);  // 0.07 at the top of the scale
    CHECK(static_cast<unsigned char>(first[11 + 5]) == 255);  // missing sentinel
}

TEST_SUITE_END();
