#include <algorithm>

#include "stpconv/model.hpp"

namespace stpconv {

void ModelSpec::validate() const {
    if (num_blocks < 1) throw ConfigError("model spec: num_blocks must be >= 1");
    if (layers_per_block < 1) throw ConfigError("model spec: layers_per_block must be >= 1");
    if (static_cast<std::int64_t>(filters.size()) != num_blocks) {
        throw ConfigError("model spec: filters must list one channel count per block");
    }
    if (static_cast<std::int64_t>(strides.size()) != num_blocks) {
        throw ConfigError("model spec: strides must list one triple per block");
    }
    if (static_cast<std::int64_t>(kernel_sizes.size()) != layers_per_block) {
        throw ConfigError("model spec: kernel_sizes must list one triple per layer of a block");
    }
    for (std::int64_t f : filters) {
        if (f < 1) throw ConfigError("model spec: filter counts must be >= 1");
    }
    for (const Dims3& s : strides) {
        if (s.x < 1 || s.y < 1 || s.t < 1) throw ConfigError("model spec: strides must be >= 1");
    }
    for (const Dims3& k : kernel_sizes) {
        if (k.x < 1 || k.y < 1 || k.t < 1 || k.x % 2 == 0 || k.y % 2 == 0 || k.t % 2 == 0) {
            throw ConfigError("model spec: kernel sizes must be odd and >= 1");
        }
    }
    if (in_channels < 1 || out_channels < 1) {
        throw ConfigError("model spec: channel counts must be >= 1");
    }
    if (!(alpha >= 0.0) || alpha >= 1.0) {
        throw ConfigError("model spec: alpha must lie in [0, 1)");
    }
}

Dims3 ModelSpec::total_stride() const {
    Dims3 total;
    for (const Dims3& s : strides) {
        total.x *= s.x;
        total.y *= s.y;
        total.t *= s.t;
    }
    return total;
}

bool MaskVolume::all_valid() const {
    return std::all_of(valid.begin(), valid.end(), [](std::uint8_t v) { return v != 0; });
}

namespace {

// Output voxel valid iff any valid input in its centered window, with
// zero-extension outside the volume; output size ceil(n/stride).
MaskVolume dilate_strided(const MaskVolume& in, Dims3 kernel, Dims3 stride) {
    MaskVolume out;
    out.nx = ceil_div(in.nx, stride.x);
    out.ny = ceil_div(in.ny, stride.y);
    out.nt = ceil_div(in.nt, stride.t);
    out.valid.assign(static_cast<std::size_t>(out.nx * out.ny * out.nt), 0);
    for (std::int64_t ot = 0; ot < out.nt; ++ot) {
        const std::int64_t t0 = std::max<std::int64_t>(0, ot * stride.t - kernel.t / 2);
        const std::int64_t t1 = std::min(in.nt, ot * stride.t - kernel.t / 2 + kernel.t);
        for (std::int64_t oy = 0; oy < out.ny; ++oy) {
            const std::int64_t y0 = std::max<std::int64_t>(0, oy * stride.y - kernel.y / 2);
            const std::int64_t y1 = std::min(in.ny, oy * stride.y - kernel.y / 2 + kernel.y);
            for (std::int64_t ox = 0; ox < out.nx; ++ox) {
                const std::int64_t x0 = std::max<std::int64_t>(0, ox * stride.x - kernel.x / 2);
                const std::int64_t x1 = std::min(in.nx, ox * stride.x - kernel.x / 2 + kernel.x);
                std::uint8_t v = 0;
                for (std::int64_t t = t0; t < t1 && !v; ++t) {
                    for (std::int64_t y = y0; y < y1 && !v; ++y) {
                        for (std::int64_t x = x0; x < x1; ++x) {
                            if (in.valid[static_cast<std::size_t>(in.index(x, y, t))]) {
                                v = 1;
                                break;
                            }
                        }
                    }
                }
                out.valid[static_cast<std::size_t>(out.index(ox, oy, ot))] = v;
            }
        }
    }
    return out;
}

MaskVolume upsample(const MaskVolume& in, Dims3 factor) {
    MaskVolume out;
    out.nx = in.nx * factor.x;
    out.ny = in.ny * factor.y;
    out.nt = in.nt * factor.t;
    out.valid.resize(static_cast<std::size_t>(out.nx * out.ny * out.nt));
    for (std::int64_t t = 0; t < out.nt; ++t) {
        for (std::int64_t y = 0; y < out.ny; ++y) {
            for (std::int64_t x = 0; x < out.nx; ++x) {
                out.valid[static_cast<std::size_t>(out.index(x, y, t))] =
                    in.valid[static_cast<std::size_t>(
                        in.index(x / factor.x, y / factor.y, t / factor.t))];
            }
        }
    }
    return out;
}

MaskVolume unite(const MaskVolume& a, const MaskVolume& b) {
    MaskVolume out = a;
    for (std::size_t i = 0; i < out.valid.size(); ++i) out.valid[i] |= b.valid[i];
    return out;
}

}  // namespace

MaskVolume simulate_mask_propagation(const ModelSpec& spec, const MaskVolume& input) {
    spec.validate();
    const std::int64_t B = spec.num_blocks;
    const std::int64_t L = spec.layers_per_block;
    std::vector<MaskVolume> skips;
    MaskVolume stream = input;
    for (std::int64_t b = 0; b < B; ++b) {
        skips.push_back(stream);
        for (std::int64_t j = 0; j < L; ++j) {
            const Dims3 s = j == L - 1 ? spec.strides[static_cast<std::size_t>(b)] : Dims3{};
            stream = dilate_strided(stream, spec.kernel_sizes[static_cast<std::size_t>(j)], s);
        }
    }
    for (std::int64_t b = B - 1; b >= 0; --b) {
        stream = unite(upsample(stream, spec.strides[static_cast<std::size_t>(b)]),
                       skips[static_cast<std::size_t>(b)]);
        for (std::int64_t j = 0; j < L; ++j) {
            stream = dilate_strided(stream, spec.kernel_sizes[static_cast<std::size_t>(j)], Dims3{});
        }
    }
    // 1x1x1 projection leaves validity unchanged.
    return stream;
}

namespace {

std::int64_t round_up(std::int64_t n, std::int64_t m) { return ceil_div(n, m) * m; }

// One-sided fill reach along a single axis, worst case over stride parities,
// measured on a volume that is thin in the other two axes. Box-shaped windows
// spread validity along each axis independently, so the thin probe yields the
// same per-axis reach as a full-size one.
std::int64_t axis_reach(const ModelSpec& spec, int axis) {
    const Dims3 total = spec.total_stride();
    std::int64_t per_layer = 0;
    for (const Dims3& k : spec.kernel_sizes) per_layer += std::max({k.x, k.y, k.t});
    const std::int64_t mult = std::max({total.x, total.y, total.t});
    const std::int64_t span =
        round_up(4 * (per_layer + 1) * mult * spec.num_blocks + 4 * mult,
                 axis == 0 ? total.x : axis == 1 ? total.y : total.t);

    MaskVolume probe;
    probe.nx = axis == 0 ? span : total.x;
    probe.ny = axis == 1 ? span : total.y;
    probe.nt = axis == 2 ? span : total.t;

    const std::int64_t stride = axis == 0 ? total.x : axis == 1 ? total.y : total.t;
    std::int64_t worst = span;
    for (std::int64_t parity = 0; parity < stride; ++parity) {
        const std::int64_t cx = axis == 0 ? probe.nx / 2 + parity : probe.nx / 2;
        const std::int64_t cy = axis == 1 ? probe.ny / 2 + parity : probe.ny / 2;
        const std::int64_t ct = axis == 2 ? probe.nt / 2 + parity : probe.nt / 2;
        probe.valid.assign(static_cast<std::size_t>(probe.nx * probe.ny * probe.nt), 0);
        probe.valid[static_cast<std::size_t>(probe.index(cx, cy, ct))] = 1;
        const MaskVolume filled = simulate_mask_propagation(spec, probe);
        auto ray = [&](std::int64_t step, std::int64_t limit) {
            std::int64_t r = 0;
            while (r + 1 <= limit) {
                const std::int64_t x = axis == 0 ? cx + step * (r + 1) : cx;
                const std::int64_t y = axis == 1 ? cy + step * (r + 1) : cy;
                const std::int64_t t = axis == 2 ? ct + step * (r + 1) : ct;
                if (!filled.valid[static_cast<std::size_t>(filled.index(x, y, t))]) break;
                ++r;
            }
            return r;
        };
        const std::int64_t cpos = axis == 0 ? cx : axis == 1 ? cy : ct;
        worst = std::min({worst, ray(-1, cpos), ray(+1, span - 1 - cpos)});
    }
    return worst;
}

// True if the full box [c - r, c + r] around every stride parity of a single
// seed voxel comes out valid.
bool box_filled(const ModelSpec& spec, Dims3 r) {
    const Dims3 total = spec.total_stride();
    MaskVolume probe;
    probe.nx = round_up(2 * r.x + 1 + 4 * total.x, total.x);
    probe.ny = round_up(2 * r.y + 1 + 4 * total.y, total.y);
    probe.nt = round_up(2 * r.t + 1 + 4 * total.t, total.t);
    for (std::int64_t pt = 0; pt < total.t; ++pt) {
        for (std::int64_t py = 0; py < total.y; ++py) {
            for (std::int64_t px = 0; px < total.x; ++px) {
                const std::int64_t cx = probe.nx / 2 + px;
                const std::int64_t cy = probe.ny / 2 + py;
                const std::int64_t ct = probe.nt / 2 + pt;
                probe.valid.assign(static_cast<std::size_t>(probe.nx * probe.ny * probe.nt), 0);
                probe.valid[static_cast<std::size_t>(probe.index(cx, cy, ct))] = 1;
                const MaskVolume filled = simulate_mask_propagation(spec, probe);
                for (std::int64_t t = ct - r.t; t <= ct + r.t; ++t) {
                    for (std::int64_t y = cy - r.y; y <= cy + r.y; ++y) {
                        for (std::int64_t x = cx - r.x; x <= cx + r.x; ++x) {
                            if (!filled.valid[static_cast<std::size_t>(filled.index(x, y, t))]) {
                                return false;
                            }
                        }
                    }
                }
            }
        }
    }
    return true;
}

}  // namespace

FillReport guaranteed_fill(const ModelSpec& spec) {
    spec.validate();
    Dims3 r{axis_reach(spec, 0), axis_reach(spec, 1), axis_reach(spec, 2)};
    // The per-axis rays bound the reach; shrink until the whole box is
    // certified, so the reported radius is a sound guarantee.
    while (!box_filled(spec, r)) {
        std::int64_t& largest = r.x >= r.y && r.x >= r.t ? r.x : (r.y >= r.t ? r.y : r.t);
        if (largest == 0) break;
        --largest;
    }
    return FillReport{r, Dims3{2 * r.x, 2 * r.y, 2 * r.t}};
}

}  // namespace stpconv
