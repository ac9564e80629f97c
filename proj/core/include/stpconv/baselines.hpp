#pragma once

#include "stpconv/tensor.hpp"

namespace stpconv {

// Completed block plus a flag tensor marking which voxels actually carry a
// prediction (or an observation passed through). Voxels with predicted == 0
// are excluded from scoring.
struct PredictionResult {
    Tensor4 values;
    Tensor4 predicted;
};

// Fills every missing voxel of a channel with the empirical mean of that
// channel's valid voxels; valid voxels pass through unchanged. A channel with
// no valid voxel at all is flagged unpredictable.
PredictionResult predict_block_mean(const MaskedBlock& block);

// Per-pixel linear interpolation along t between valid samples; leading and
// trailing gaps take the nearest valid value. A series with no valid sample
// is flagged unpredictable.
PredictionResult predict_time_interp(const MaskedBlock& block);

}  // namespace stpconv
