// Copyright (c) 2026 bidedpo authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>

#include "bidedpo/model.hpp"
#include "bidedpo/schedule.hpp"

namespace bidedpo {

// One training sample for the noise-prediction objective.
struct DiffusionSample {
    Canvas x0;
    Context context;
    int t = 0;
    Canvas eps;
};

// sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
Canvas forward_noise(const Canvas& x0, int t, const Canvas& eps, const NoiseSchedule& schedule);

// Mean over the batch of |eps - eps_theta(x_t, t, c)|^2, as a graph tensor.
Tensor simple_loss(const DenoiserModel& model, std::span<const DiffusionSample> batch,
                   const NoiseSchedule& schedule);

// Ancestral sampler. Deterministic given (parameters, context, rng stream);
// clamps to [0,1] at the end only. Throws NumericError naming the timestep
// if the state stops being finite.
Canvas sample(const DenoiserModel& model, const PromptSpec& prompt, const ConditionMap& cond,
              const NoiseSchedule& schedule, RngStream& rng);

}  // namespace bidedpo
