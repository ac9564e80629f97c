#pragma once

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "stpconv/baselines.hpp"
#include "stpconv/maskgen.hpp"

namespace stpconv {

struct BlockScore {
    std::string id;
    double missing_fraction = 0.0;  // of the predictor input, added gaps included
    double mae = 0.0;
    double rmse = 0.0;
    std::int64_t n_scored = 0;
    std::int64_t n_excluded = 0;
};

// MAE/RMSE over held-out voxels, pooled across blocks. When n_scored is 0 the
// metrics are undefined and reported as NaN.
struct ScoreReport {
    double mae = 0.0;
    double rmse = 0.0;
    std::int64_t n_scored = 0;
    std::int64_t n_excluded = 0;
    std::vector<BlockScore> per_block;

    bool defined() const { return n_scored > 0; }
};

// Scores predictions against the truth on exactly holdout ∩ truth-valid ∩
// predicted. Holdout voxels the predictor flagged unpredictable (or that are
// invalid in the truth) count as excluded. Reads no truth voxel outside the
// holdout set.
ScoreReport score(const PredictionResult& pred, const MaskedBlock& truth,
                  std::span<const std::int64_t> holdout);

using Predictor = std::function<PredictionResult(const MaskedBlock&)>;

// Validation strategy 1: per block, add artificial gaps (per-block derived
// seeds), predict from the gapped input, and score on the voxels valid in the
// truth but removed by the gaps. Voxel-pooled across blocks.
ScoreReport validate_gapfilling(std::span<const MaskedBlock> blocks, const Predictor& predictor,
                                const GapConfig& gaps, int threads = 1);

// Validation strategy 2: blank the entire last time slice of each block,
// predict, and score on the truth-valid voxels of that slice.
ScoreReport validate_one_step_ahead(std::span<const MaskedBlock> blocks,
                                    const Predictor& predictor, int threads = 1);

// Per-block rows as CSV (block id, missing fraction, mae, rmse, counts).
void write_report_csv(std::ostream& out, const ScoreReport& report);

// Pooled summary as JSON; `label` tags the method/strategy combination and
// `extra` may add fields such as timing.
void write_report_json(std::ostream& out, const ScoreReport& report, const std::string& label,
                       const std::vector<std::pair<std::string, double>>& extra = {});

}  // namespace stpconv
