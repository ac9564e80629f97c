#include "stpconv/baselines.hpp"

namespace stpconv {

PredictionResult predict_block_mean(const MaskedBlock& block) {
    detail::require_same_shape(block.data.shape(), block.mask.shape(), "predict_block_mean");
    const Shape4& s = block.shape();
    PredictionResult out{Tensor4(s, 0.0f), Tensor4(s, 0.0f)};
    const std::int64_t plane = s.nx * s.ny * s.nt;
    for (std::int64_t c = 0; c < s.nc; ++c) {
        const std::int64_t base = c * plane;
        double sum = 0.0;
        std::int64_t n = 0;
        for (std::int64_t i = 0; i < plane; ++i) {
            if (block.mask[base + i] != 0.0f) {
                sum += static_cast<double>(block.data[base + i]);
                ++n;
            }
        }
        if (n == 0) continue;  // unpredictable channel, flags stay 0
        const float mean = static_cast<float>(sum / static_cast<double>(n));
        for (std::int64_t i = 0; i < plane; ++i) {
            out.values[base + i] = block.mask[base + i] != 0.0f ? block.data[base + i] : mean;
            out.predicted[base + i] = 1.0f;
        }
    }
    return out;
}

PredictionResult predict_time_interp(const MaskedBlock& block) {
    detail::require_same_shape(block.data.shape(), block.mask.shape(), "predict_time_interp");
    const Shape4& s = block.shape();
    PredictionResult out{Tensor4(s, 0.0f), Tensor4(s, 0.0f)};
    std::vector<std::int64_t> valid_t;
    valid_t.reserve(static_cast<std::size_t>(s.nt));
    for (std::int64_t c = 0; c < s.nc; ++c) {
        for (std::int64_t y = 0; y < s.ny; ++y) {
            for (std::int64_t x = 0; x < s.nx; ++x) {
                valid_t.clear();
                for (std::int64_t t = 0; t < s.nt; ++t) {
                    if (block.mask.at(x, y, t, c) != 0.0f) valid_t.push_back(t);
                }
                if (valid_t.empty()) continue;  // not predicted, not scored
                std::size_t seg = 0;
                for (std::int64_t t = 0; t < s.nt; ++t) {
                    float v;
                    if (t <= valid_t.front()) {
                        v = block.data.at(x, y, valid_t.front(), c);
                    } else if (t >= valid_t.back()) {
                        v = block.data.at(x, y, valid_t.back(), c);
                    } else {
                        while (valid_t[seg + 1] < t) ++seg;
                        const std::int64_t t0 = valid_t[seg];
                        const std::int64_t t1 = valid_t[seg + 1];
                        if (t == t0) {
                            v = block.data.at(x, y, t0, c);
                        } else {
                            const double w =
                                static_cast<double>(t - t0) / static_cast<double>(t1 - t0);
                            v = static_cast<float>(
                                (1.0 - w) * static_cast<double>(block.data.at(x, y, t0, c)) +
                                w * static_cast<double>(block.data.at(x, y, t1, c)));
                        }
                    }
                    out.values.at(x, y, t, c) = v;
                    out.predicted.at(x, y, t, c) = 1.0f;
                }
            }
        }
    }
    return out;
}

}  // namespace stpconv
