#pragma once

#include <cstdint>
#include <vector>

#include "stpconv/tensor.hpp"

namespace stpconv {

// Artificial gap geometry: per time slice, a smooth random field is
// thresholded at the mask_fraction quantile so that gaps form contiguous
// blobs of tunable size rather than salt-and-pepper noise.
struct GapConfig {
    double correlation_length = 10.0;  // pixels
    double mask_fraction = 0.3;
    std::uint64_t seed = 0;

    void validate() const;
};

// Zero-mean, approximately unit-variance smooth random field of size
// (nx, ny, 1, 1): white noise convolved with an isotropic Gaussian of scale
// correlation_length, then standardized. Deterministic per seed.
Tensor4 simulate_field(std::int64_t nx, std::int64_t ny, const GapConfig& config);

// Binary gap mask for a whole block: 0 marks a gap. Each time slice gets an
// independently seeded field; exactly floor(mask_fraction * nx * ny) pixels
// per slice are masked (lowest field values); channels share the slice mask.
Tensor4 make_gap_mask(const Shape4& block_shape, const GapConfig& config);

// X = block with the gap mask applied. target_indices lists the flat indices
// that are valid in the block but masked by the gap mask — the voxels a
// gap-filling method is scored on.
struct GappedBlock {
    MaskedBlock x;
    std::vector<std::int64_t> target_indices;
};

GappedBlock apply_gaps(const MaskedBlock& block, const Tensor4& gap_mask);

}  // namespace stpconv
