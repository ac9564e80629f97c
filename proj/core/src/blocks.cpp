#include <algorithm>
#include <cmath>
#include <cstdio>

#include "io_util.hpp"
#include "stpconv/blocks.hpp"
#include "stpconv/maskgen.hpp"
#include "stpconv/pconv.hpp"
#include "stpconv/rng.hpp"

namespace stpconv {

namespace {

constexpr char kMagic[4] = {'S', 'T', 'P', 'B'};
constexpr unsigned char kVersion = 1;
constexpr std::uint32_t kQuietNanBits = 0x7fc00000u;
constexpr std::int64_t kHeaderBytes = 4 + 1 + 4 * 4;

}  // namespace

void save_block(const std::string& path, const MaskedBlock& block) {
    detail::require_same_shape(block.data.shape(), block.mask.shape(), "save_block");
    const Shape4& s = block.shape();
    std::string bytes;
    bytes.reserve(static_cast<std::size_t>(kHeaderBytes + 4 * s.volume()));
    bytes.append(kMagic, 4);
    bytes.push_back(static_cast<char>(kVersion));
    for (std::int64_t axis : {s.nx, s.ny, s.nt, s.nc}) {
        detail::put_u32le(bytes, static_cast<std::uint32_t>(axis));
    }
    for (std::int64_t i = 0; i < block.data.size(); ++i) {
        if (block.mask[i] == 0.0f) {
            detail::put_u32le(bytes, kQuietNanBits);
        } else {
            detail::put_f32le(bytes, block.data[i]);
        }
    }
    detail::write_file(path, bytes);
}

MaskedBlock load_block(const std::string& path) {
    const std::vector<unsigned char> bytes = detail::read_file(path);
    if (static_cast<std::int64_t>(bytes.size()) < kHeaderBytes) {
        throw DataError(path + ": truncated header, file ends at byte offset " +
                        std::to_string(bytes.size()));
    }
    if (!std::equal(kMagic, kMagic + 4, bytes.begin())) {
        throw DataError(path + ": bad magic at byte offset 0");
    }
    if (bytes[4] != kVersion) {
        throw DataError(path + ": unsupported version " + std::to_string(bytes[4]) +
                        " at byte offset 4");
    }
    Shape4 s;
    s.nx = detail::get_u32le(bytes.data() + 5);
    s.ny = detail::get_u32le(bytes.data() + 9);
    s.nt = detail::get_u32le(bytes.data() + 13);
    s.nc = detail::get_u32le(bytes.data() + 17);
    std::int64_t volume;
    try {
        volume = s.volume();
    } catch (const ShapeError& e) {
        throw DataError(path + ": invalid dimensions at byte offset 5: " + e.what());
    }
    const std::int64_t expected = kHeaderBytes + 4 * volume;
    if (static_cast<std::int64_t>(bytes.size()) != expected) {
        throw DataError(path + ": payload ends at byte offset " + std::to_string(bytes.size()) +
                        ", expected " + std::to_string(expected));
    }
    MaskedBlock block{Tensor4(s, 0.0f), Tensor4(s, 0.0f)};
    for (std::int64_t i = 0; i < volume; ++i) {
        const float v = detail::get_f32le(bytes.data() + kHeaderBytes + 4 * i);
        if (std::isnan(v)) continue;
        if (!std::isfinite(v)) {
            throw DataError(path + ": non-finite value at byte offset " +
                            std::to_string(kHeaderBytes + 4 * i));
        }
        block.data[i] = v;
        block.mask[i] = 1.0f;
    }
    return block;
}

void BlockGrid::validate() const {
    raster.volume();
    if (block.x < 1 || block.y < 1 || block.t < 1) {
        throw ConfigError("block grid: block sizes must be >= 1");
    }
    if (margin.x < 0 || margin.y < 0 || margin.t < 0) {
        throw ConfigError("block grid: margins must be >= 0");
    }
    const Dims3 c = core();
    if (c.x < 1 || c.y < 1 || c.t < 1) {
        throw ConfigError("block grid: margin is at least half the block size, core is empty");
    }
}

Dims3 BlockGrid::counts() const {
    const Dims3 c = core();
    return Dims3{ceil_div(raster.nx, c.x), ceil_div(raster.ny, c.y), ceil_div(raster.nt, c.t)};
}

std::vector<TiledBlock> tile(const MaskedBlock& raster, const BlockGrid& grid) {
    grid.validate();
    detail::require_same_shape(raster.shape(), grid.raster, "tile");
    const Dims3 core = grid.core();
    const Dims3 counts = grid.counts();
    std::vector<TiledBlock> out;
    out.reserve(static_cast<std::size_t>(counts.x * counts.y * counts.t));
    for (std::int64_t bt = 0; bt < counts.t; ++bt) {
        for (std::int64_t by = 0; by < counts.y; ++by) {
            for (std::int64_t bx = 0; bx < counts.x; ++bx) {
                Placement p;
                p.index = Dims3{bx, by, bt};
                p.core_lo = Dims3{bx * core.x, by * core.y, bt * core.t};
                p.core_hi = Dims3{std::min(grid.raster.nx, (bx + 1) * core.x),
                                  std::min(grid.raster.ny, (by + 1) * core.y),
                                  std::min(grid.raster.nt, (bt + 1) * core.t)};
                p.origin = Dims3{p.core_lo.x - grid.margin.x, p.core_lo.y - grid.margin.y,
                                 p.core_lo.t - grid.margin.t};

                const Shape4 bs{grid.block.x, grid.block.y, grid.block.t, grid.raster.nc};
                MaskedBlock blk{Tensor4(bs, 0.0f), Tensor4(bs, 0.0f)};
                for (std::int64_t c = 0; c < bs.nc; ++c) {
                    for (std::int64_t t = 0; t < bs.nt; ++t) {
                        const std::int64_t rt = p.origin.t + t;
                        if (rt < 0 || rt >= grid.raster.nt) continue;
                        for (std::int64_t y = 0; y < bs.ny; ++y) {
                            const std::int64_t ry = p.origin.y + y;
                            if (ry < 0 || ry >= grid.raster.ny) continue;
                            for (std::int64_t x = 0; x < bs.nx; ++x) {
                                const std::int64_t rx = p.origin.x + x;
                                if (rx < 0 || rx >= grid.raster.nx) continue;
                                const std::int64_t src = raster.data.index(rx, ry, rt, c);
                                const std::int64_t dst = blk.data.index(x, y, t, c);
                                blk.data[dst] = raster.data[src];
                                blk.mask[dst] = raster.mask[src];
                            }
                        }
                    }
                }
                out.push_back(TiledBlock{std::move(blk), p});
            }
        }
    }
    return out;
}

Tensor4 stitch(const std::vector<std::pair<Tensor4, Placement>>& predictions,
               const BlockGrid& grid) {
    grid.validate();
    Tensor4 out(grid.raster, 0.0f);
    std::vector<std::uint8_t> covered(static_cast<std::size_t>(grid.raster.volume()), 0);
    for (const auto& [values, p] : predictions) {
        const Shape4& vs = values.shape();
        if (vs.nx != grid.block.x || vs.ny != grid.block.y || vs.nt != grid.block.t ||
            vs.nc != grid.raster.nc) {
            throw ShapeError("stitch: prediction shape " + vs.str() +
                             " does not match the grid block size");
        }
        for (std::int64_t c = 0; c < vs.nc; ++c) {
            for (std::int64_t rt = p.core_lo.t; rt < p.core_hi.t; ++rt) {
                for (std::int64_t ry = p.core_lo.y; ry < p.core_hi.y; ++ry) {
                    for (std::int64_t rx = p.core_lo.x; rx < p.core_hi.x; ++rx) {
                        const std::int64_t dst = out.index(rx, ry, rt, c);
                        out[dst] = values.at(rx - p.origin.x, ry - p.origin.y, rt - p.origin.t, c);
                        covered[static_cast<std::size_t>(dst)] = 1;
                    }
                }
            }
        }
    }
    for (std::size_t i = 0; i < covered.size(); ++i) {
        if (!covered[i]) {
            throw DataError("stitch: raster voxel at flat index " + std::to_string(i) +
                            " is covered by no block core");
        }
    }
    return out;
}

Tensor4 merge_with_observations(const Tensor4& pred, const MaskedBlock& original) {
    detail::require_same_shape(pred.shape(), original.data.shape(), "merge_with_observations");
    Tensor4 out = pred;
    for (std::int64_t i = 0; i < out.size(); ++i) {
        if (original.mask[i] != 0.0f) out[i] = original.data[i];
    }
    return out;
}

void SyntheticConfig::validate() const {
    if (n_blocks < 1) throw ConfigError("synthetic config: n_blocks must be >= 1");
    shape.volume();
    if (n_bumps < 0) throw ConfigError("synthetic config: n_bumps must be >= 0");
    if (!(sigma_min > 0.0) || sigma_max < sigma_min) {
        throw ConfigError("synthetic config: bump widths must satisfy 0 < sigma_min <= sigma_max");
    }
    if (amp_max < amp_min) throw ConfigError("synthetic config: amp_max must be >= amp_min");
    if (noise_sd < 0.0) throw ConfigError("synthetic config: noise_sd must be >= 0");
    if (native_gap_fraction < 0.0 || native_gap_fraction >= 1.0) {
        throw ConfigError("synthetic config: native_gap_fraction must lie in [0, 1)");
    }
}

std::vector<MaskedBlock> generate_synthetic(const SyntheticConfig& config) {
    config.validate();
    const Shape4& s = config.shape;
    std::vector<MaskedBlock> blocks;
    blocks.reserve(static_cast<std::size_t>(config.n_blocks));

    for (std::int64_t b = 0; b < config.n_blocks; ++b) {
        rng::Stream rand(rng::mix(config.seed, 0x626c6f636bull, static_cast<std::uint64_t>(b)));
        struct Bump {
            double cx, cy, amp, inv_two_sigma2;
        };
        std::vector<Bump> bumps(static_cast<std::size_t>(config.n_bumps));
        for (auto& bump : bumps) {
            bump.cx = rand.uniform(0.0, static_cast<double>(s.nx));
            bump.cy = rand.uniform(0.0, static_cast<double>(s.ny));
            bump.amp = rand.uniform(config.amp_min, config.amp_max);
            const double sigma = rand.uniform(config.sigma_min, config.sigma_max);
            bump.inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
        }
        const double vx = config.velocity_x +
                          config.velocity_jitter * rand.uniform(-1.0, 1.0);
        const double vy = config.velocity_y +
                          config.velocity_jitter * rand.uniform(-1.0, 1.0);

        MaskedBlock block{Tensor4(s, 0.0f), Tensor4(s, 1.0f)};
        for (std::int64_t c = 0; c < s.nc; ++c) {
            for (std::int64_t t = 0; t < s.nt; ++t) {
                const double ox = vx * static_cast<double>(t);
                const double oy = vy * static_cast<double>(t);
                for (std::int64_t y = 0; y < s.ny; ++y) {
                    for (std::int64_t x = 0; x < s.nx; ++x) {
                        double v = 0.0;
                        for (const Bump& bump : bumps) {
                            const double dx = static_cast<double>(x) - bump.cx - ox;
                            const double dy = static_cast<double>(y) - bump.cy - oy;
                            v += bump.amp *
                                 std::exp(-(dx * dx + dy * dy) * bump.inv_two_sigma2);
                        }
                        if (config.noise_sd > 0.0) v += config.noise_sd * rand.normal();
                        block.data.at(x, y, t, c) = static_cast<float>(v);
                    }
                }
            }
        }

        if (config.native_gap_fraction > 0.0) {
            GapConfig native;
            native.correlation_length = config.native_gap_correlation;
            native.mask_fraction = config.native_gap_fraction;
            native.seed = rng::mix(config.seed, 0x6e617469ull, static_cast<std::uint64_t>(b));
            const Tensor4 gap_mask = make_gap_mask(s, native);
            for (std::int64_t i = 0; i < block.data.size(); ++i) {
                if (gap_mask[i] == 0.0f) {
                    block.mask[i] = 0.0f;
                    block.data[i] = 0.0f;
                }
            }
        }
        blocks.push_back(std::move(block));
    }
    return blocks;
}

void render_pgm_slices(const std::string& prefix, const MaskedBlock& block, double vmin,
                       double vmax, std::int64_t channel) {
    detail::require_same_shape(block.data.shape(), block.mask.shape(), "render_pgm_slices");
    const Shape4& s = block.shape();
    if (channel < 0 || channel >= s.nc) throw ShapeError("render: channel out of range");
    if (!(vmax > vmin)) throw ConfigError("render: vmax must exceed vmin");
    const double scale = 254.0 / (vmax - vmin);
    for (std::int64_t t = 0; t < s.nt; ++t) {
        std::string bytes = "P5\n" + std::to_string(s.nx) + " " + std::to_string(s.ny) + "\n255\n";
        bytes.reserve(bytes.size() + static_cast<std::size_t>(s.nx * s.ny));
        for (std::int64_t y = 0; y < s.ny; ++y) {
            for (std::int64_t x = 0; x < s.nx; ++x) {
                if (block.mask.at(x, y, t, channel) == 0.0f) {
                    bytes.push_back(static_cast<char>(255));
                } else {
                    const double g =
                        std::round((static_cast<double>(block.data.at(x, y, t, channel)) - vmin) *
                                   scale);
                    bytes.push_back(static_cast<char>(
                        static_cast<unsigned char>(std::clamp(g, 0.0, 254.0))));
                }
            }
        }
        char suffix[16];
        std::snprintf(suffix, sizeof(suffix), "_t%03d.pgm", static_cast<int>(t));
        detail::write_file(prefix + suffix, bytes);
    }
}

}  // namespace stpconv
