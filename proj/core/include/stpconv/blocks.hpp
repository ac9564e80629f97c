#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stpconv/tensor.hpp"

namespace stpconv {

// Block file format ("STPB"): magic, a version byte, four u32 little-endian
// axis sizes, then nx*ny*nt*nc little-endian 32-bit floats in x-fastest
// order. Missing voxels are stored as quiet NaN and become (0 data, 0 mask)
// in memory; everything else round-trips bit-exactly.
void save_block(const std::string& path, const MaskedBlock& block);
MaskedBlock load_block(const std::string& path);

// Overlap tiling of a large raster: fixed-size blocks whose margin-trimmed
// cores partition the raster; adjacent blocks overlap by twice the margin.
// Blocks protruding past the raster edge are padded with mask 0.
struct BlockGrid {
    Shape4 raster;  // nc = channel count of the raster
    Dims3 block;    // block sizes per axis
    Dims3 margin;   // per-axis core trim; core = block - 2 * margin

    void validate() const;
    Dims3 core() const { return Dims3{block.x - 2 * margin.x, block.y - 2 * margin.y,
                                      block.t - 2 * margin.t}; }
    Dims3 counts() const;  // number of blocks per axis
};

struct Placement {
    Dims3 index;      // block coordinates in the grid
    Dims3 origin;     // raster coordinates of the block's (0,0,0) voxel (may be negative)
    Dims3 core_lo;    // inclusive raster start of the core window
    Dims3 core_hi;    // exclusive raster end (clipped to the raster)
};

struct TiledBlock {
    MaskedBlock block;
    Placement placement;
};

std::vector<TiledBlock> tile(const MaskedBlock& raster, const BlockGrid& grid);

// Reassembles per-block predictions: every output voxel takes the value from
// the unique block whose core contains it. Throws DataError unless the
// placements cover the raster exactly.
Tensor4 stitch(const std::vector<std::pair<Tensor4, Placement>>& predictions,
               const BlockGrid& grid);

// Original value where observed, prediction elsewhere.
Tensor4 merge_with_observations(const Tensor4& pred, const MaskedBlock& original);

// Desk-scale synthetic dataset: smooth Gaussian bumps translating linearly in
// time plus low-amplitude noise, with native gaps drawn from the gap
// generator. Value range is scaled to roughly [0, 0.07].
struct SyntheticConfig {
    std::int64_t n_blocks = 8;
    Shape4 shape{64, 64, 16, 1};
    std::int64_t n_bumps = 6;
    double amp_min = 0.02, amp_max = 0.05;
    double sigma_min = 5.0, sigma_max = 10.0;
    double velocity_x = 1.5, velocity_y = -1.0;  // pixels per time step
    double velocity_jitter = 0.0;                // uniform per-block perturbation
    double noise_sd = 0.0005;
    double native_gap_fraction = 0.2;  // 0 disables native gaps
    double native_gap_correlation = 6.0;
    std::uint64_t seed = 0;

    void validate() const;
};

std::vector<MaskedBlock> generate_synthetic(const SyntheticConfig& config);

// Writes one binary 8-bit PGM per time slice ("<prefix>_t000.pgm", ...).
// Gray = round(254 * (v - vmin) / (vmax - vmin)) clamped to [0, 254]; missing
// voxels use the sentinel gray 255. Channel c is rendered.
void render_pgm_slices(const std::string& prefix, const MaskedBlock& block, double vmin,
                       double vmax, std::int64_t channel = 0);

}  // namespace stpconv
