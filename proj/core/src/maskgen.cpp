#include <algorithm>
#include <cmath>
#include <numeric>

#include "stpconv/maskgen.hpp"
#include "stpconv/rng.hpp"

namespace stpconv {

void GapConfig::validate() const {
    if (!(correlation_length > 0.0)) throw ConfigError("gap config: correlation_length must be > 0");
    if (!(mask_fraction > 0.0 && mask_fraction < 1.0)) {
        throw ConfigError("gap config: mask_fraction must lie in (0, 1)");
    }
}

namespace {

// Separable Gaussian blur with truncated, per-position renormalized taps so
// edges keep comparable variance.
void blur_axis(std::vector<double>& field, std::int64_t nx, std::int64_t ny, bool along_x,
               const std::vector<double>& taps) {
    const std::int64_t radius = static_cast<std::int64_t>(taps.size()) / 2;
    const std::int64_t n = along_x ? nx : ny;
    const std::int64_t m = along_x ? ny : nx;
    std::vector<double> line(static_cast<std::size_t>(n));
    for (std::int64_t j = 0; j < m; ++j) {
        for (std::int64_t i = 0; i < n; ++i) {
            line[static_cast<std::size_t>(i)] =
                along_x ? field[static_cast<std::size_t>(j * nx + i)]
                        : field[static_cast<std::size_t>(i * nx + j)];
        }
        for (std::int64_t i = 0; i < n; ++i) {
            const std::int64_t lo = std::max<std::int64_t>(-radius, -i);
            const std::int64_t hi = std::min<std::int64_t>(radius, n - 1 - i);
            double acc = 0.0, wsum = 0.0;
            for (std::int64_t d = lo; d <= hi; ++d) {
                const double w = taps[static_cast<std::size_t>(d + radius)];
                acc += w * line[static_cast<std::size_t>(i + d)];
                wsum += w;
            }
            const double v = acc / wsum;
            if (along_x) {
                field[static_cast<std::size_t>(j * nx + i)] = v;
            } else {
                field[static_cast<std::size_t>(i * nx + j)] = v;
            }
        }
    }
}

std::vector<double> gaussian_taps(double sigma) {
    const std::int64_t radius = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(3.0 * sigma)));
    std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
    for (std::int64_t d = -radius; d <= radius; ++d) {
        taps[static_cast<std::size_t>(d + radius)] =
            std::exp(-0.5 * static_cast<double>(d * d) / (sigma * sigma));
    }
    return taps;
}

}  // namespace

Tensor4 simulate_field(std::int64_t nx, std::int64_t ny, const GapConfig& config) {
    config.validate();
    if (nx < 1 || ny < 1) throw ShapeError("simulate_field: sizes must be >= 1");

    rng::Stream rand(rng::mix(config.seed, 0x6669656c64ull));
    std::vector<double> field(static_cast<std::size_t>(nx * ny));
    for (auto& v : field) v = rand.normal();

    const std::vector<double> taps = gaussian_taps(config.correlation_length);
    blur_axis(field, nx, ny, true, taps);
    blur_axis(field, nx, ny, false, taps);

    double mean = 0.0;
    for (double v : field) mean += v;
    mean /= static_cast<double>(field.size());
    double var = 0.0;
    for (double v : field) var += (v - mean) * (v - mean);
    var /= static_cast<double>(field.size());
    const double scale = var > 0.0 ? 1.0 / std::sqrt(var) : 1.0;

    Tensor4 out(Shape4{nx, ny, 1, 1}, 0.0f);
    for (std::int64_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<float>((field[static_cast<std::size_t>(i)] - mean) * scale);
    }
    return out;
}

Tensor4 make_gap_mask(const Shape4& block_shape, const GapConfig& config) {
    config.validate();
    block_shape.volume();
    Tensor4 mask(block_shape, 1.0f);
    const std::int64_t pixels = block_shape.nx * block_shape.ny;
    const std::int64_t n_masked =
        static_cast<std::int64_t>(config.mask_fraction * static_cast<double>(pixels));

    std::vector<std::int64_t> order(static_cast<std::size_t>(pixels));
    for (std::int64_t t = 0; t < block_shape.nt; ++t) {
        GapConfig slice_cfg = config;
        slice_cfg.seed = rng::mix(config.seed, static_cast<std::uint64_t>(t));
        const Tensor4 field = simulate_field(block_shape.nx, block_shape.ny, slice_cfg);

        // Mask exactly the n_masked lowest field values; ties broken by index
        // so the selection does not depend on the sorting implementation.
        std::iota(order.begin(), order.end(), std::int64_t{0});
        std::sort(order.begin(), order.end(), [&field](std::int64_t a, std::int64_t b) {
            const float fa = field[a], fb = field[b];
            return fa < fb || (fa == fb && a < b);
        });
        for (std::int64_t r = 0; r < n_masked; ++r) {
            const std::int64_t p = order[static_cast<std::size_t>(r)];
            const std::int64_t x = p % block_shape.nx;
            const std::int64_t y = p / block_shape.nx;
            for (std::int64_t c = 0; c < block_shape.nc; ++c) {
                mask.at(x, y, t, c) = 0.0f;
            }
        }
    }
    return mask;
}

GappedBlock apply_gaps(const MaskedBlock& block, const Tensor4& gap_mask) {
    detail::require_same_shape(block.shape(), gap_mask.shape(), "apply_gaps");
    GappedBlock out;
    out.x.data = Tensor4(block.shape(), 0.0f);
    out.x.mask = Tensor4(block.shape(), 0.0f);
    for (std::int64_t i = 0; i < block.data.size(); ++i) {
        const bool was_valid = block.mask[i] != 0.0f;
        const bool keep = gap_mask[i] != 0.0f;
        if (was_valid && keep) {
            out.x.mask[i] = 1.0f;
            out.x.data[i] = block.data[i];
        } else if (was_valid) {
            out.target_indices.push_back(i);
        }
    }
    return out;
}

}  // namespace stpconv
