// Copyright (c) 2026 bidedpo authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bidedpo/rng.hpp"
#include "bidedpo/tensor.hpp"

namespace bidedpo {

// 16x16 grayscale grid, values in [0,1], row-major.
inline constexpr int kCanvasSide = 16;
inline constexpr int kCanvasCells = kCanvasSide * kCanvasSide;
using Canvas = Array;

enum class ShapeClass : int { square = 0, disc = 1, cross = 2 };
enum class IntensityClass : int { absent = 0, dim = 1, bright = 2 };
enum class StripeOrientation : int { absent = 0, horizontal = 1, vertical = 2 };

const char* to_string(ShapeClass s);
const char* to_string(IntensityClass s);
const char* to_string(StripeOrientation s);

// A source prompt names only the shape; a target prompt adds >=1 attribute.
struct PromptSpec {
    ShapeClass shape = ShapeClass::square;
    IntensityClass intensity = IntensityClass::absent;
    StripeOrientation stripes = StripeOrientation::absent;

    bool is_source() const {
        return intensity == IntensityClass::absent && stripes == StripeOrientation::absent;
    }
    bool is_target() const { return !is_source(); }
    bool operator==(const PromptSpec&) const = default;
};

// Binary structural constraint; stored as 0/1 doubles so it shares the
// canvas blob format on disk.
struct ConditionMap {
    Array mask;  // kCanvasCells entries, each 0.0 or 1.0

    int active_cells() const { return static_cast<int>(mask.sum()); }
    bool operator==(const ConditionMap& o) const {
        return mask.size() == o.mask.size() && (mask == o.mask).all();
    }
};

// (prompt, condition-map) pair: the composite conditioning context.
struct Context {
    PromptSpec prompt;
    ConditionMap condition;
};

struct JudgeVerdict {
    bool passed = false;
    double margin = 0.0;  // signed distance to the decision threshold
};

inline constexpr double kJudgeFailSentinel = -1e30;

struct Placement {
    double cx = 7.5;
    double cy = 7.5;
    double scale = 8.0;
};

// Per-shape attribute priors used when rendering pretraining data. The
// conflict generator requests the opposite of whatever these favor.
struct BiasTable {
    std::array<double, 3> p_bright{0.9, 0.1, 0.9};      // indexed by ShapeClass
    double p_has_stripes = 0.5;                          // pretraining renders
    std::array<double, 3> p_horizontal{0.9, 0.9, 0.9};   // given stripes
};

struct IntensityBands {
    double dim_lo = 0.15, dim_hi = 0.45;
    double bright_lo = 0.60, bright_hi = 0.95;
};

struct WorldConfig {
    IntensityBands bands;
    BiasTable bias;
    double background_noise = 0.02;
    double fill_noise = 0.02;
    double stripe_amplitude = 0.08;
    // Extraction threshold: tau = max(tau_floor, tau_frac * p95(smoothed)).
    double tau_floor = 0.075;
    double tau_frac = 0.55;
    int min_active_cells = 8;
    int max_active_cells = 192;
    double judge_shape_iou_min = 0.5;
    double judge_orientation_min = 0.2;
    // Fraction of pretraining samples whose prompt carries the rendered
    // attributes (the rest see the bare source prompt).
    double p_full_prompt = 0.5;
    // Default placement scale ranges; bright shapes sit at the top of the
    // range so condition geometry encodes the biased attribute's scale.
    double scale_min_dim = 5.0, scale_max_dim = 7.0;
    double scale_min_bright = 7.5, scale_max_bright = 10.0;

    double intensity_mu(IntensityClass c) const {
        switch (c) {
            case IntensityClass::dim: return 0.5 * (bands.dim_lo + bands.dim_hi);
            case IntensityClass::bright: return 0.5 * (bands.bright_lo + bands.bright_hi);
            case IntensityClass::absent: break;
        }
        // Dead-zone center; satisfies no band, used when only stripes are asked.
        return 0.5 * (bands.dim_hi + bands.bright_lo);
    }
};

// Which placement lattice bucket a draw may come from. Benchmark cases use
// the held-out bucket so test combinations never appear in training pools.
enum class PlacementPool { train, heldout, all };

// ----------------------------- operations -----------------------------

// Cell-center rasterization of the shape at the given placement.
ConditionMap rasterize_shape(ShapeClass shape, const Placement& p);

bool placement_in_bounds(ShapeClass shape, const Placement& p);

// Draws (center, scale) on a 0.5-step lattice, in bounds, restricted to the
// requested pool; scale range follows the intensity class.
Placement sample_placement(ShapeClass shape, IntensityClass intensity, RngStream& rng,
                           const WorldConfig& cfg, PlacementPool pool);

// Ground-truth renderer. The prompt's absent attributes fall back to the
// neutral fill / no stripes; placement must keep the shape inside the canvas.
Canvas render_reference(const PromptSpec& prompt, const Placement& placement, RngStream& rng,
                        const WorldConfig& cfg);

// Binary mask from a canvas: binomial 3x3 smoothing, then a scale-relative
// threshold. Throws DegenerateCondition for empty/full masks.
ConditionMap extract_condition(const Canvas& canvas, const WorldConfig& cfg);

Canvas smooth_canvas(const Canvas& canvas);

// Pluggable text judge; the oracle below is the deterministic default.
class TextJudge {
public:
    virtual ~TextJudge() = default;
    virtual JudgeVerdict judge(const Canvas& canvas, const PromptSpec& prompt) const = 0;
};

class OracleJudge final : public TextJudge {
public:
    explicit OracleJudge(WorldConfig cfg) : cfg_(std::move(cfg)) {}
    JudgeVerdict judge(const Canvas& canvas, const PromptSpec& prompt) const override;

private:
    WorldConfig cfg_;
};

// Free-function form used throughout the library.
JudgeVerdict judge_text(const Canvas& canvas, const PromptSpec& prompt, const WorldConfig& cfg);

// (p_source, p_target) with target attributes anti-correlated with the bias
// table; shape drawn uniformly.
std::pair<PromptSpec, PromptSpec> make_conflict_case(RngStream& rng, const WorldConfig& cfg);

// Diagnostics used by the judge and by tests.
double mask_iou(const ConditionMap& a, const ConditionMap& b);
// (sum_dy - sum_dx) / (sum_dy + sum_dx + eps) over in-mask neighbor pairs;
// positive means horizontal banding dominates.
double orientation_statistic(const Canvas& canvas, const ConditionMap& mask);

Canvas transpose_canvas(const Canvas& c);

}  // namespace bidedpo
