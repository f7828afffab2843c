// Copyright (c) 2026 bidedpo authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

namespace bidedpo {

// Per-timestep diffusion coefficients.
struct NoiseSchedule {
    int t_steps = 0;
    std::vector<double> beta;
    std::vector<double> alpha;      // 1 - beta_t
    std::vector<double> alpha_bar;  // prod_{s<=t} alpha_s

    static NoiseSchedule linear(int t_steps = 100, double beta_start = 1e-4,
                                double beta_end = 0.02) {
        NoiseSchedule s;
        s.t_steps = t_steps;
        s.beta.resize(t_steps);
        s.alpha.resize(t_steps);
        s.alpha_bar.resize(t_steps);
        double bar = 1.0;
        for (int t = 0; t < t_steps; ++t) {
            const double frac = t_steps > 1 ? static_cast<double>(t) / (t_steps - 1) : 0.0;
            s.beta[t] = beta_start + (beta_end - beta_start) * frac;
            s.alpha[t] = 1.0 - s.beta[t];
            bar *= s.alpha[t];
            s.alpha_bar[t] = bar;
        }
        s.validate();
        return s;
    }

    void validate() const {
        if (t_steps <= 0) throw std::invalid_argument("schedule: t_steps must be positive");
        double prev = 2.0;
        for (int t = 0; t < t_steps; ++t) {
            if (!(beta[t] > 0.0 && beta[t] < 1.0))
                throw std::invalid_argument("schedule: beta out of (0,1)");
            if (!(alpha_bar[t] < prev))
                throw std::invalid_argument("schedule: alpha_bar not strictly decreasing");
            prev = alpha_bar[t];
        }
        if (alpha_bar[0] > 1.0 || alpha_bar[t_steps - 1] <= 0.0)
            throw std::invalid_argument("schedule: alpha_bar endpoints out of range");
    }
};

}  // namespace bidedpo
