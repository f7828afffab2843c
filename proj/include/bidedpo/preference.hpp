// Copyright (c) 2026 bidedpo authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>

#include "bidedpo/diffusion.hpp"

namespace bidedpo {

enum class PairKind { text, condition };

// (preferred, dispreferred) canvases scored under one shared context.
struct PreferencePair {
    Canvas preferred;
    Canvas dispreferred;
    Context context;
    PairKind kind = PairKind::text;
};

// Noise/timestep draws for one pair. Preferred and dispreferred members share
// the draw by default (common random numbers keeps the estimator variance
// down; the expectation is over independent draws either way).
struct PairDraw {
    int t_pos = 0;
    int t_neg = 0;
    Canvas eps_pos;
    Canvas eps_neg;
};

PairDraw draw_pair_noise(RngStream& rng, const NoiseSchedule& schedule, bool shared = true);

struct LossBreakdown {
    double total = 0.0;
    double l_text = 0.0;
    double l_cond = 0.0;
    double w_text = 0.5;
    double w_cond = 0.5;
    double r_t = 0.0;  // batch-mean text reward difference
    double r_c = 0.0;  // batch-mean condition reward difference
};

enum class AlbMode { instance_mean, historical_mean, fixed };

struct AlbSettings {
    AlbMode mode = AlbMode::instance_mean;
    double decay = 0.99;        // historical_mean EMA
    double fixed_w_text = 0.5;  // fixed mode
};

AlbMode alb_mode_from_string(const std::string& s);
const char* to_string(AlbMode m);

// EMA of batch-mean losses carried across steps for historical_mean.
struct AlbState {
    bool initialized = false;
    double ema_text = 0.0;
    double ema_cond = 0.0;
};

// Reduction in denoising error of the tuned model vs the frozen reference
// on x_t = forward_noise(x0, t, eps).
double sample_reward(const DenoiserModel& model, const DenoiserModel& ref, const Canvas& x0,
                     const Context& context, int t, const Canvas& eps,
                     const NoiseSchedule& schedule);

// reward(preferred) - reward(dispreferred).
double reward_difference(const DenoiserModel& model, const DenoiserModel& ref,
                         const PreferencePair& pair, const PairDraw& draw,
                         const NoiseSchedule& schedule);

// Per-pair reward differences of a batch as a {N} graph tensor (gradients
// flow into the tuned model only).
Tensor reward_difference_batch(const DenoiserModel& model, const DenoiserModel& ref,
                               std::span<const PreferencePair> pairs,
                               std::span<const PairDraw> draws, const NoiseSchedule& schedule);

// Batch mean of -log sigmoid(beta_t * delta_i); the single-pair naive-DPO
// objective when the batch has one coupled pair.
Tensor coupled_dpo_loss(const DenoiserModel& model, const DenoiserModel& ref,
                        std::span<const PreferencePair> pairs, std::span<const PairDraw> draws,
                        double beta_t, const NoiseSchedule& schedule);

// w_text = l_text / (l_text + l_cond), detached; degenerate inputs fall back
// to (0.5, 0.5) with a logged warning.
std::pair<double, double> alb_weights(double l_text, double l_cond);

struct BidedpoResult {
    Tensor total;  // graph scalar: w_text * l_text + w_cond * l_cond
    LossBreakdown breakdown;
};

BidedpoResult bidedpo_loss(const DenoiserModel& model, const DenoiserModel& ref,
                           std::span<const PreferencePair> text_pairs,
                           std::span<const PairDraw> text_draws,
                           std::span<const PreferencePair> cond_pairs,
                           std::span<const PairDraw> cond_draws, double beta_t,
                           const AlbSettings& alb, AlbState* state,
                           const NoiseSchedule& schedule);

// Contrast of the coupled-pair gradient against the decoupled ones on a case
// built from the same underlying samples: the coupled pair takes the
// condition branch's preferred sample against the text branch's dispreferred
// one under the condition context.
struct EntanglementReport {
    double r_t = 0.0;
    double r_c = 0.0;
    double delta_coupled = 0.0;
    double prefactor_coupled = 0.0;   // 1 - sigmoid(beta_t * delta_coupled)
    double prefactor_text = 0.0;      // 1 - sigmoid(beta_t * r_t)
    double swallow_factor = 0.0;      // prefactor_coupled / prefactor_text
    double cos_coupled_text = 0.0;    // cos(grad coupled, grad l_text)
    double cos_decoupled_text = 0.0;  // cos(grad bidedpo total, grad l_text)
    bool degenerate = false;          // a zero-norm gradient made cosines undefined
};

EntanglementReport entanglement_diagnostic(const DenoiserModel& model, const DenoiserModel& ref,
                                           const PreferencePair& text_pair,
                                           const PairDraw& text_draw,
                                           const PreferencePair& cond_pair,
                                           const PairDraw& cond_draw, double beta_t,
                                           const NoiseSchedule& schedule);

// Gradient steps on the condition-pair objective alone; pushes R_C up while
// leaving the text pair nearly untouched. Used to stage swallow cases.
void tune_condition_gap(DenoiserModel& model, const DenoiserModel& ref,
                        const PreferencePair& cond_pair, const PairDraw& cond_draw,
                        double beta_t, const NoiseSchedule& schedule, int steps, double lr);

}  // namespace bidedpo
