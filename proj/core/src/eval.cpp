#include <cmath>
#include <limits>
#include <ostream>

#include <json.hpp>

#include "io_util.hpp"
#include "stpconv/eval.hpp"
#include "stpconv/parallel.hpp"
#include "stpconv/rng.hpp"

namespace stpconv {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

struct Accum {
    double abs_sum = 0.0;
    double sq_sum = 0.0;
    std::int64_t n_scored = 0;
    std::int64_t n_excluded = 0;

    void add(const Accum& o) {
        abs_sum += o.abs_sum;
        sq_sum += o.sq_sum;
        n_scored += o.n_scored;
        n_excluded += o.n_excluded;
    }
    double mae() const { return n_scored > 0 ? abs_sum / static_cast<double>(n_scored) : kNan; }
    double rmse() const {
        return n_scored > 0 ? std::sqrt(sq_sum / static_cast<double>(n_scored)) : kNan;
    }
};

Accum accumulate_scores(const PredictionResult& pred, const MaskedBlock& truth,
                        std::span<const std::int64_t> holdout) {
    detail::require_same_shape(pred.values.shape(), truth.data.shape(), "score");
    detail::require_same_shape(pred.predicted.shape(), truth.data.shape(), "score");
    Accum a;
    for (std::int64_t i : holdout) {
        if (i < 0 || i >= truth.data.size()) {
            throw ShapeError("score: holdout index " + std::to_string(i) + " out of range");
        }
        if (truth.mask[i] == 0.0f || pred.predicted[i] == 0.0f) {
            ++a.n_excluded;
            continue;
        }
        const double e = static_cast<double>(pred.values[i]) - static_cast<double>(truth.data[i]);
        a.abs_sum += std::abs(e);
        a.sq_sum += e * e;
        ++a.n_scored;
    }
    return a;
}

ScoreReport finalize(const std::vector<BlockScore>& rows, const Accum& pooled) {
    ScoreReport report;
    report.mae = pooled.mae();
    report.rmse = pooled.rmse();
    report.n_scored = pooled.n_scored;
    report.n_excluded = pooled.n_excluded;
    report.per_block = rows;
    return report;
}

}  // namespace

ScoreReport score(const PredictionResult& pred, const MaskedBlock& truth,
                  std::span<const std::int64_t> holdout) {
    const Accum a = accumulate_scores(pred, truth, holdout);
    BlockScore row{"", 0.0, a.mae(), a.rmse(), a.n_scored, a.n_excluded};
    return finalize({row}, a);
}

ScoreReport validate_gapfilling(std::span<const MaskedBlock> blocks, const Predictor& predictor,
                                const GapConfig& gaps, int threads) {
    gaps.validate();
    const std::int64_t n = static_cast<std::int64_t>(blocks.size());
    std::vector<BlockScore> rows(static_cast<std::size_t>(n));
    std::vector<Accum> accums(static_cast<std::size_t>(n));
    parallel_for(n, threads, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t b = lo; b < hi; ++b) {
            const MaskedBlock& truth = blocks[static_cast<std::size_t>(b)];
            GapConfig per_block = gaps;
            per_block.seed = rng::mix(gaps.seed, static_cast<std::uint64_t>(b));
            const Tensor4 gap_mask = make_gap_mask(truth.shape(), per_block);
            const GappedBlock gapped = apply_gaps(truth, gap_mask);
            const PredictionResult pred = predictor(gapped.x);
            const Accum a = accumulate_scores(pred, truth, gapped.target_indices);
            accums[static_cast<std::size_t>(b)] = a;
            rows[static_cast<std::size_t>(b)] =
                BlockScore{"block" + std::to_string(b), gapped.x.missing_fraction(), a.mae(),
                           a.rmse(), a.n_scored, a.n_excluded};
        }
    });
    Accum pooled;
    for (const Accum& a : accums) pooled.add(a);
    return finalize(rows, pooled);
}

ScoreReport validate_one_step_ahead(std::span<const MaskedBlock> blocks,
                                    const Predictor& predictor, int threads) {
    const std::int64_t n = static_cast<std::int64_t>(blocks.size());
    std::vector<BlockScore> rows(static_cast<std::size_t>(n));
    std::vector<Accum> accums(static_cast<std::size_t>(n));
    parallel_for(n, threads, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t b = lo; b < hi; ++b) {
            const MaskedBlock& truth = blocks[static_cast<std::size_t>(b)];
            const Shape4& s = truth.shape();
            if (s.nt < 2) throw ShapeError("one-step-ahead validation needs nt >= 2");

            MaskedBlock input = truth;
            std::vector<std::int64_t> holdout;
            const std::int64_t last = s.nt - 1;
            for (std::int64_t c = 0; c < s.nc; ++c) {
                for (std::int64_t y = 0; y < s.ny; ++y) {
                    for (std::int64_t x = 0; x < s.nx; ++x) {
                        const std::int64_t i = input.data.index(x, y, last, c);
                        if (truth.mask[i] != 0.0f) holdout.push_back(i);
                        input.mask[i] = 0.0f;
                        input.data[i] = 0.0f;
                    }
                }
            }
            const PredictionResult pred = predictor(input);
            const Accum a = accumulate_scores(pred, truth, holdout);
            accums[static_cast<std::size_t>(b)] = a;
            rows[static_cast<std::size_t>(b)] =
                BlockScore{"block" + std::to_string(b), input.missing_fraction(), a.mae(), a.rmse(),
                           a.n_scored, a.n_excluded};
        }
    });
    Accum pooled;
    for (const Accum& a : accums) pooled.add(a);
    return finalize(rows, pooled);
}

namespace {

std::string metric_str(double v) {
    if (std::isnan(v)) return "NA";
    return detail::format_double(v);
}

}  // namespace

void write_report_csv(std::ostream& out, const ScoreReport& report) {
    out << "block,missing_fraction,mae,rmse,n_scored,n_excluded\n";
    for (const BlockScore& r : report.per_block) {
        out << r.id << ',' << metric_str(r.missing_fraction) << ',' << metric_str(r.mae) << ','
            << metric_str(r.rmse) << ',' << r.n_scored << ',' << r.n_excluded << '\n';
    }
}

void write_report_json(std::ostream& out, const ScoreReport& report, const std::string& label,
                       const std::vector<std::pair<std::string, double>>& extra) {
    nlohmann::json j;
    j["label"] = label;
    j["mae"] = report.defined() ? nlohmann::json(report.mae) : nlohmann::json(nullptr);
    j["rmse"] = report.defined() ? nlohmann::json(report.rmse) : nlohmann::json(nullptr);
    j["n_scored"] = report.n_scored;
    j["n_excluded"] = report.n_excluded;
    j["n_blocks"] = report.per_block.size();
    for (const auto& [k, v] : extra) j[k] = v;
    out << j.dump(2) << "\n";
}

}  // namespace stpconv
