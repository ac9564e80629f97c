#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>

#include "io_util.hpp"
#include "stpconv/parallel.hpp"
#include "stpconv/train.hpp"

namespace stpconv {

void TrainConfig::validate() const {
    if (!(initial_lr > 0.0)) throw ConfigError("train config: initial_lr must be > 0");
    if (lr_decay_every < 1) throw ConfigError("train config: lr_decay_every must be >= 1");
    if (!(lr_decay_factor > 0.0)) throw ConfigError("train config: lr_decay_factor must be > 0");
    if (min_epochs < 1) throw ConfigError("train config: min_epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
    if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0 && adam_beta2 > 0.0 && adam_beta2 < 1.0)) {
        throw ConfigError("train config: adam betas must lie in (0, 1)");
    }
    if (!(adam_epsilon > 0.0)) throw ConfigError("train config: adam_epsilon must be > 0");
}

MaskedMae masked_mae(const Tensor4& pred, const Tensor4& target,
                     std::span<const std::int64_t> target_indices) {
    detail::require_same_shape(pred.shape(), target.shape(), "masked_mae");
    if (target_indices.empty()) throw DataError("masked_mae: empty target set, loss undefined");
    MaskedMae out;
    out.grad = Tensor4(pred.shape(), 0.0f);
    const double inv_n = 1.0 / static_cast<double>(target_indices.size());
    double acc = 0.0;
    for (std::int64_t i : target_indices) {
        const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
        acc += std::abs(d);
        out.grad[i] = d > 0.0 ? static_cast<float>(inv_n)
                              : (d < 0.0 ? static_cast<float>(-inv_n) : 0.0f);
    }
    out.loss = acc * inv_n;
    return out;
}

double lr_at_epoch(std::int64_t epoch, const TrainConfig& config) {
    if (epoch < 1) throw ConfigError("lr_at_epoch: epochs are 1-based");
    const std::int64_t steps = (epoch - 1) / config.lr_decay_every;
    return config.initial_lr * std::pow(config.lr_decay_factor, static_cast<double>(steps));
}

AdamState make_adam_state(const ModelState& state) {
    AdamState adam;
    for_each_param_tensor<float>(state, [&adam](const std::string&, const std::vector<float>& buf,
                                                const std::vector<std::int64_t>&) {
        adam.m.emplace_back(buf.size(), 0.0f);
        adam.v.emplace_back(buf.size(), 0.0f);
    });
    return adam;
}

void adam_step(ModelState& params, const ModelGrads& grads, AdamState& moments, double lr,
               const TrainConfig& config) {
    config.validate();
    std::size_t slot = 0;
    moments.step += 1;
    const double b1 = config.adam_beta1;
    const double b2 = config.adam_beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(moments.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(moments.step));
    for_each_param_tensor<float>(params, [&](const std::string& name, std::vector<float>& buf,
                                             const std::vector<std::int64_t>&) {
        if (slot >= grads.tensors.size() || slot >= moments.m.size()) {
            throw ContractError("adam_step: gradient/moment layout does not match parameters");
        }
        const std::vector<float>& g = grads.tensors[slot];
        std::vector<float>& m = moments.m[slot];
        std::vector<float>& v = moments.v[slot];
        if (g.size() != buf.size() || m.size() != buf.size()) {
            throw ContractError("adam_step: size mismatch for tensor " + name);
        }
        for (std::size_t i = 0; i < buf.size(); ++i) {
            const double gi = static_cast<double>(g[i]);
            const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * gi;
            const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * gi * gi;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            buf[i] = static_cast<float>(static_cast<double>(buf[i]) -
                                        lr * mhat / (std::sqrt(vhat) + config.adam_epsilon));
        }
        ++slot;
    });
}

namespace {

struct ItemResult {
    bool used = false;
    double loss = 0.0;
    ModelGrads grads;
};

}  // namespace

FitResult fit(std::span<const MaskedBlock> dataset, const ModelSpec& spec, ModelState& state,
              const GapConfig& gaps, const TrainConfig& config, int threads,
              std::ostream* progress) {
    spec.validate();
    config.validate();
    gaps.validate();
    if (dataset.empty()) throw DataError("fit: dataset is empty");
    for (const MaskedBlock& b : dataset) detail::check_divisible<float>(b.shape(), spec);

    AdamState adam = make_adam_state(state);
    FitResult result;

    std::vector<std::int64_t> order(dataset.size());
    std::iota(order.begin(), order.end(), std::int64_t{0});

    for (std::int64_t epoch = 1; epoch <= config.min_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = lr_at_epoch(epoch, config);

        rng::Stream shuffle(rng::mix(config.seed, 0x73687566ull, static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle.next_below(i))]);
        }

        double epoch_loss = 0.0;
        std::int64_t epoch_items = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            const std::int64_t n_items = static_cast<std::int64_t>(end - start);
            std::vector<ItemResult> items(static_cast<std::size_t>(n_items));

            parallel_for(n_items, threads, [&](std::int64_t lo, std::int64_t hi) {
                for (std::int64_t k = lo; k < hi; ++k) {
                    const std::int64_t block_idx = order[start + static_cast<std::size_t>(k)];
                    const MaskedBlock& block = dataset[static_cast<std::size_t>(block_idx)];
                    GapConfig g = gaps;
                    g.seed = rng::mix(gaps.seed, static_cast<std::uint64_t>(epoch),
                                      static_cast<std::uint64_t>(block_idx));
                    const Tensor4 gap_mask = make_gap_mask(block.shape(), g);
                    const GappedBlock gapped = apply_gaps(block, gap_mask);
                    if (gapped.target_indices.empty()) continue;

                    ForwardTrace trace = model_forward(state, spec, gapped.x);
                    MaskedMae mae = masked_mae(trace.output, block.data, gapped.target_indices);
                    if (!std::isfinite(mae.loss)) {
                        const std::string layer = first_non_finite_layer(trace);
                        throw NumericError(
                            "fit: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(start / static_cast<std::size_t>(config.batch_size)) +
                            ", first non-finite activation in layer '" +
                            (layer.empty() ? "<loss only>" : layer) + "'");
                    }
                    ItemResult& r = items[static_cast<std::size_t>(k)];
                    r.used = true;
                    r.loss = mae.loss;
                    r.grads = model_backward(state, spec, trace, mae.grad).grads;
                }
            });

            // Reduce in batch order so results do not depend on thread count.
            ModelGrads acc = zero_grads_like(state);
            std::int64_t used = 0;
            for (const ItemResult& r : items) {
                if (!r.used) {
                    ++result.skipped_items;
                    continue;
                }
                ++used;
                epoch_loss += r.loss;
                for (std::size_t s = 0; s < acc.tensors.size(); ++s) {
                    const std::vector<float>& g = r.grads.tensors[s];
                    std::vector<float>& a = acc.tensors[s];
                    for (std::size_t i = 0; i < a.size(); ++i) a[i] += g[i];
                }
            }
            if (used == 0) continue;
            epoch_items += used;
            const float inv = 1.0f / static_cast<float>(used);
            for (auto& tensor : acc.tensors) {
                for (float& g : tensor) g *= inv;
            }
            adam_step(state, acc, adam, lr, config);
            ++result.optimizer_steps;
        }

        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const double mean_loss =
            epoch_items > 0 ? epoch_loss / static_cast<double>(epoch_items) : 0.0;
        result.log.push_back(EpochLog{epoch, lr, mean_loss, wall});
        if (progress != nullptr) {
            *progress << "epoch " << epoch << "/" << config.min_epochs << " lr " << lr
                      << " train_mae " << mean_loss << " (" << wall << " s)\n";
            progress->flush();
        }
    }
    return result;
}

void write_loss_log_csv(std::ostream& out, const FitResult& result) {
    out << "epoch,lr,train_mae,wall_seconds\n";
    for (const EpochLog& row : result.log) {
        out << row.epoch << ',' << detail::format_double(row.lr) << ','
            << detail::format_double(row.train_mae) << ','
            << detail::format_double(row.wall_seconds) << '\n';
    }
}

}  // namespace stpconv
