#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "stpconv/maskgen.hpp"
#include "stpconv/model.hpp"

namespace stpconv {

struct TrainConfig {
    double initial_lr = 0.005;
    std::int64_t lr_decay_every = 10;  // epochs
    double lr_decay_factor = 0.1;
    std::int64_t min_epochs = 30;  // the loop runs exactly this many epochs
    std::int64_t batch_size = 6;
    std::uint64_t seed = 0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;

    void validate() const;
};

// Mean absolute error over exactly the target voxels, with its gradient
// w.r.t. the prediction: sign(pred - target) / n on targets (0 at exact
// ties), 0 elsewhere. Throws DataError when the target set is empty.
struct MaskedMae {
    double loss = 0.0;
    Tensor4 grad;
};

MaskedMae masked_mae(const Tensor4& pred, const Tensor4& target,
                     std::span<const std::int64_t> target_indices);

// initial_lr * lr_decay_factor^floor((epoch - 1) / lr_decay_every), epoch >= 1.
double lr_at_epoch(std::int64_t epoch, const TrainConfig& config);

// First/second moment buffers laid out like the parameter traversal.
struct AdamState {
    std::int64_t step = 0;
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;
};

AdamState make_adam_state(const ModelState& state);

// Standard Adam update with bias correction; increments the step counter.
void adam_step(ModelState& params, const ModelGrads& grads, AdamState& moments, double lr,
               const TrainConfig& config);

struct EpochLog {
    std::int64_t epoch = 0;
    double lr = 0.0;
    double train_mae = 0.0;
    double wall_seconds = 0.0;
};

struct FitResult {
    std::vector<EpochLog> log;
    std::int64_t optimizer_steps = 0;
    std::int64_t skipped_items = 0;  // batch items with an empty target set
};

// Trains in place. Per epoch: seeded shuffle, fresh artificial gaps per block
// (epoch-derived seeds), batches with gradient averaging in batch order, one
// Adam step per batch. Batch items may evaluate in parallel; the reduction
// order is fixed, so results are bitwise independent of `threads`.
FitResult fit(std::span<const MaskedBlock> dataset, const ModelSpec& spec, ModelState& state,
              const GapConfig& gaps, const TrainConfig& config, int threads = 1,
              std::ostream* progress = nullptr);

// epoch,lr,train_mae,wall_seconds with round-trip float formatting.
void write_loss_log_csv(std::ostream& out, const FitResult& result);

}  // namespace stpconv
