// Copyright (c) 2026 bidedpo authors
// SPDX-License-Identifier: Apache-2.0
#include "bidedpo/world.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "bidedpo/common.hpp"

namespace bidedpo {

const char* to_string(ShapeClass s) {
    switch (s) {
        case ShapeClass::square: return "square";
        case ShapeClass::disc: return "disc";
        case ShapeClass::cross: return "cross";
    }
    return "?";
}
const char* to_string(IntensityClass s) {
    switch (s) {
        case IntensityClass::absent: return "absent";
        case IntensityClass::dim: return "dim";
        case IntensityClass::bright: return "bright";
    }
    return "?";
}
const char* to_string(StripeOrientation s) {
    switch (s) {
        case StripeOrientation::absent: return "absent";
        case StripeOrientation::horizontal: return "horizontal";
        case StripeOrientation::vertical: return "vertical";
    }
    return "?";
}

namespace {

// Packed 256-cell mask for fast template IoU.
struct Bits256 {
    std::array<std::uint64_t, 4> w{};
    void set(int idx) { w[idx >> 6] |= (1ULL << (idx & 63)); }
    int count() const {
        return std::popcount(w[0]) + std::popcount(w[1]) + std::popcount(w[2]) +
               std::popcount(w[3]);
    }
};

double bits_iou(const Bits256& a, const Bits256& b) {
    int inter = 0, uni = 0;
    for (int i = 0; i < 4; ++i) {
        inter += std::popcount(a.w[i] & b.w[i]);
        uni += std::popcount(a.w[i] | b.w[i]);
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
}

Bits256 to_bits(const ConditionMap& m) {
    Bits256 b;
    for (int i = 0; i < kCanvasCells; ++i)
        if (m.mask[i] > 0.5) b.set(i);
    return b;
}

bool cell_in_shape(ShapeClass shape, const Placement& p, int r, int c) {
    const double dx = c - p.cx;
    const double dy = r - p.cy;
    const double h = 0.5 * p.scale;
    switch (shape) {
        case ShapeClass::square:
            return std::fabs(dx) <= h && std::fabs(dy) <= h;
        case ShapeClass::disc:
            return dx * dx + dy * dy <= h * h;
        case ShapeClass::cross: {
            const double arm = std::max(1.0, p.scale / 5.0);
            const bool horiz_arm = std::fabs(dy) <= arm && std::fabs(dx) <= h;
            const bool vert_arm = std::fabs(dx) <= arm && std::fabs(dy) <= h;
            return horiz_arm || vert_arm;
        }
    }
    return false;
}

constexpr double kTemplateScaleMax = 11.0;

// Below these scales the rasterizations of different families collide
// (a small disc is exactly a square), so neither placements nor templates
// go below them.
double family_scale_floor(ShapeClass s) {
    switch (s) {
        case ShapeClass::square: return 5.0;
        case ShapeClass::disc: return 6.0;
        case ShapeClass::cross: return 6.0;
    }
    return 5.0;
}

// Every rendered placement lives on this 0.5-step lattice, so clean
// rasterizations always have an exact template twin.
const std::array<std::vector<Bits256>, 3>& template_bank() {
    static const std::array<std::vector<Bits256>, 3> bank = [] {
        std::array<std::vector<Bits256>, 3> out;
        for (int f = 0; f < 3; ++f) {
            auto shape = static_cast<ShapeClass>(f);
            for (double s = family_scale_floor(shape); s <= kTemplateScaleMax + 1e-9; s += 0.5) {
                const double h = 0.5 * s;
                for (double cx = h; cx <= kCanvasSide - 1 - h + 1e-9; cx += 0.5) {
                    for (double cy = h; cy <= kCanvasSide - 1 - h + 1e-9; cy += 0.5) {
                        Placement p{cx, cy, s};
                        Bits256 b;
                        for (int r = 0; r < kCanvasSide; ++r)
                            for (int c = 0; c < kCanvasSide; ++c)
                                if (cell_in_shape(shape, p, r, c)) b.set(r * kCanvasSide + c);
                        if (b.count() >= 4) out[f].push_back(b);
                    }
                }
            }
        }
        return out;
    }();
    return bank;
}

double best_family_iou(const Bits256& mask, ShapeClass family) {
    double best = 0.0;
    for (const auto& tpl : template_bank()[static_cast<int>(family)])
        best = std::max(best, bits_iou(mask, tpl));
    return best;
}

std::uint64_t placement_key(const Placement& p) {
    const auto qx = static_cast<std::uint64_t>(std::llround(p.cx * 2.0));
    const auto qy = static_cast<std::uint64_t>(std::llround(p.cy * 2.0));
    const auto qs = static_cast<std::uint64_t>(std::llround(p.scale * 2.0));
    std::uint64_t h = fnv1a64(&qx, sizeof qx);
    h = fnv1a64(&qy, sizeof qy, h);
    h = fnv1a64(&qs, sizeof qs, h);
    return h;
}

bool placement_in_pool(const Placement& p, PlacementPool pool) {
    if (pool == PlacementPool::all) return true;
    const bool heldout = (placement_key(p) % 5) == 0;
    return pool == PlacementPool::heldout ? heldout : !heldout;
}

}  // namespace

ConditionMap rasterize_shape(ShapeClass shape, const Placement& p) {
    ConditionMap m;
    m.mask = Array::Zero(kCanvasCells);
    for (int r = 0; r < kCanvasSide; ++r)
        for (int c = 0; c < kCanvasSide; ++c)
            if (cell_in_shape(shape, p, r, c)) m.mask[r * kCanvasSide + c] = 1.0;
    return m;
}

bool placement_in_bounds(ShapeClass, const Placement& p) {
    const double h = 0.5 * p.scale;
    return p.cx - h >= 0.0 && p.cx + h <= kCanvasSide - 1 && p.cy - h >= 0.0 &&
           p.cy + h <= kCanvasSide - 1 && p.scale >= 3.0;
}

Placement sample_placement(ShapeClass shape, IntensityClass intensity, RngStream& rng,
                           const WorldConfig& cfg, PlacementPool pool) {
    double smin = cfg.scale_min_dim, smax = cfg.scale_max_bright;
    if (intensity == IntensityClass::dim) {
        smin = cfg.scale_min_dim;
        smax = cfg.scale_max_dim;
    } else if (intensity == IntensityClass::bright) {
        smin = cfg.scale_min_bright;
        smax = cfg.scale_max_bright;
    }
    smin = std::max(smin, family_scale_floor(shape));
    smax = std::max(smax, smin);
    for (int tries = 0; tries < 1000; ++tries) {
        const int n_scales = static_cast<int>(std::lround((smax - smin) * 2.0)) + 1;
        const double s = smin + 0.5 * static_cast<double>(rng.uniform_index(n_scales));
        const double h = 0.5 * s;
        const int n_centers = static_cast<int>(std::lround((kCanvasSide - 1 - 2 * h) * 2.0)) + 1;
        if (n_centers <= 0) continue;
        Placement p;
        p.scale = s;
        p.cx = h + 0.5 * static_cast<double>(rng.uniform_index(n_centers));
        p.cy = h + 0.5 * static_cast<double>(rng.uniform_index(n_centers));
        if (placement_in_bounds(shape, p) && placement_in_pool(p, pool)) return p;
    }
    throw std::runtime_error("sample_placement: no admissible placement found");
}

Canvas render_reference(const PromptSpec& prompt, const Placement& placement, RngStream& rng,
                        const WorldConfig& cfg) {
    if (!placement_in_bounds(prompt.shape, placement))
        throw std::invalid_argument("render_reference: placement out of bounds");

    const ConditionMap mask = rasterize_shape(prompt.shape, placement);
    const double mu = cfg.intensity_mu(prompt.intensity);
    Canvas canvas(kCanvasCells);
    for (int r = 0; r < kCanvasSide; ++r) {
        for (int c = 0; c < kCanvasSide; ++c) {
            const int idx = r * kCanvasSide + c;
            double v;
            if (mask.mask[idx] > 0.5) {
                double offset = 0.0;
                if (prompt.stripes == StripeOrientation::horizontal)
                    offset = (r % 2 == 0) ? cfg.stripe_amplitude : -cfg.stripe_amplitude;
                else if (prompt.stripes == StripeOrientation::vertical)
                    offset = (c % 2 == 0) ? cfg.stripe_amplitude : -cfg.stripe_amplitude;
                v = mu + offset + cfg.fill_noise * rng.normal();
            } else {
                v = cfg.background_noise * rng.normal();
            }
            canvas[idx] = std::clamp(v, 0.0, 1.0);
        }
    }
    return canvas;
}

Canvas smooth_canvas(const Canvas& canvas) {
    // Center-heavy 3x3 kernel (4 / 1 / 0.5), edge-renormalized. Heavy center
    // keeps one-cell structures above threshold while still damping speckle.
    auto weight = [](int dr, int dc) {
        const int taps = std::abs(dr) + std::abs(dc);
        return taps == 0 ? 4.0 : (taps == 1 ? 1.0 : 0.5);
    };
    Canvas out(kCanvasCells);
    for (int r = 0; r < kCanvasSide; ++r) {
        for (int c = 0; c < kCanvasSide; ++c) {
            double acc = 0.0, wsum = 0.0;
            for (int dr = -1; dr <= 1; ++dr) {
                for (int dc = -1; dc <= 1; ++dc) {
                    const int rr = r + dr, cc = c + dc;
                    if (rr < 0 || rr >= kCanvasSide || cc < 0 || cc >= kCanvasSide) continue;
                    const double w = weight(dr, dc);
                    acc += w * canvas[rr * kCanvasSide + cc];
                    wsum += w;
                }
            }
            out[r * kCanvasSide + c] = acc / wsum;
        }
    }
    return out;
}

ConditionMap extract_condition(const Canvas& canvas, const WorldConfig& cfg) {
    if (canvas.size() != kCanvasCells)
        throw std::invalid_argument("extract_condition: wrong canvas size");
    if ((canvas < -1e-9).any() || (canvas > 1.0 + 1e-9).any())
        throw std::invalid_argument("extract_condition: canvas values outside [0,1]");

    const Canvas smoothed = smooth_canvas(canvas);
    std::vector<double> sorted(smoothed.data(), smoothed.data() + kCanvasCells);
    const auto p95_idx = static_cast<std::size_t>(0.95 * (kCanvasCells - 1));
    std::nth_element(sorted.begin(), sorted.begin() + p95_idx, sorted.end());
    const double p95 = sorted[p95_idx];
    const double tau = std::max(cfg.tau_floor, cfg.tau_frac * p95);

    ConditionMap m;
    m.mask = (smoothed > tau).cast<double>();
    const int active = m.active_cells();
    if (active < cfg.min_active_cells || active > cfg.max_active_cells)
        throw DegenerateCondition("extract_condition: " + std::to_string(active) +
                                  " active cells");
    return m;
}

double mask_iou(const ConditionMap& a, const ConditionMap& b) {
    return bits_iou(to_bits(a), to_bits(b));
}

double orientation_statistic(const Canvas& canvas, const ConditionMap& mask) {
    double sum_dx = 0.0, sum_dy = 0.0;
    for (int r = 0; r < kCanvasSide; ++r) {
        for (int c = 0; c < kCanvasSide; ++c) {
            const int idx = r * kCanvasSide + c;
            if (mask.mask[idx] < 0.5) continue;
            if (c + 1 < kCanvasSide && mask.mask[idx + 1] > 0.5)
                sum_dx += std::fabs(canvas[idx + 1] - canvas[idx]);
            if (r + 1 < kCanvasSide && mask.mask[idx + kCanvasSide] > 0.5)
                sum_dy += std::fabs(canvas[idx + kCanvasSide] - canvas[idx]);
        }
    }
    return (sum_dy - sum_dx) / (sum_dy + sum_dx + 1e-12);
}

JudgeVerdict OracleJudge::judge(const Canvas& canvas, const PromptSpec& prompt) const {
    return judge_text(canvas, prompt, cfg_);
}

JudgeVerdict judge_text(const Canvas& canvas, const PromptSpec& prompt, const WorldConfig& cfg) {
    if (!prompt.is_target())
        throw std::invalid_argument("judge_text: prompt must be a target prompt");

    ConditionMap mask;
    try {
        mask = extract_condition(canvas, cfg);
    } catch (const DegenerateCondition&) {
        return {false, kJudgeFailSentinel};
    }

    const Bits256 bits = to_bits(mask);
    const double iou_req = best_family_iou(bits, prompt.shape);
    double iou_other = 0.0;
    for (int f = 0; f < 3; ++f) {
        if (f == static_cast<int>(prompt.shape)) continue;
        iou_other = std::max(iou_other, best_family_iou(bits, static_cast<ShapeClass>(f)));
    }
    double margin = std::min(iou_req - cfg.judge_shape_iou_min, iou_req - iou_other);

    if (prompt.intensity != IntensityClass::absent) {
        double mean = 0.0;
        int n = 0;
        for (int i = 0; i < kCanvasCells; ++i) {
            if (mask.mask[i] > 0.5) {
                mean += canvas[i];
                ++n;
            }
        }
        mean /= std::max(1, n);
        const double lo = prompt.intensity == IntensityClass::dim ? cfg.bands.dim_lo
                                                                  : cfg.bands.bright_lo;
        const double hi = prompt.intensity == IntensityClass::dim ? cfg.bands.dim_hi
                                                                  : cfg.bands.bright_hi;
        margin = std::min(margin, std::min(mean - lo, hi - mean));
    }

    if (prompt.stripes != StripeOrientation::absent) {
        const double stat = orientation_statistic(canvas, mask);
        const double oriented = prompt.stripes == StripeOrientation::horizontal ? stat : -stat;
        margin = std::min(margin, oriented - cfg.judge_orientation_min);
    }

    return {margin >= 0.0, margin};
}

std::pair<PromptSpec, PromptSpec> make_conflict_case(RngStream& rng, const WorldConfig& cfg) {
    const auto shape = static_cast<ShapeClass>(rng.uniform_index(3));
    PromptSpec source{shape, IntensityClass::absent, StripeOrientation::absent};

    PromptSpec target = source;
    const double pb = cfg.bias.p_bright[static_cast<int>(shape)];
    if (pb > 0.5)
        target.intensity = IntensityClass::dim;
    else if (pb < 0.5)
        target.intensity = IntensityClass::bright;
    else
        target.intensity = rng.bernoulli(0.5) ? IntensityClass::bright : IntensityClass::dim;

    if (rng.bernoulli(0.5)) {
        const double ph = cfg.bias.p_horizontal[static_cast<int>(shape)];
        if (ph > 0.5)
            target.stripes = StripeOrientation::vertical;
        else if (ph < 0.5)
            target.stripes = StripeOrientation::horizontal;
        else
            target.stripes =
                rng.bernoulli(0.5) ? StripeOrientation::horizontal : StripeOrientation::vertical;
    }
    return {source, target};
}

Canvas transpose_canvas(const Canvas& c) {
    Canvas out(kCanvasCells);
    for (int r = 0; r < kCanvasSide; ++r)
        for (int cc = 0; cc < kCanvasSide; ++cc)
            out[cc * kCanvasSide + r] = c[r * kCanvasSide + cc];
    return out;
}

}  // namespace bidedpo
