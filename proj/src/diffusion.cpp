// Copyright (c) 2026 bidedpo authors
// SPDX-License-Identifier: Apache-2.0
#include "bidedpo/diffusion.hpp"

#include <cmath>

#include "bidedpo/common.hpp"

namespace bidedpo {

Canvas forward_noise(const Canvas& x0, int t, const Canvas& eps, const NoiseSchedule& schedule) {
    if (x0.size() != eps.size())
        throw std::invalid_argument("forward_noise: x0/eps shape mismatch");
    if (t < 0 || t >= schedule.t_steps)
        throw std::invalid_argument("forward_noise: timestep out of range");
    const double abar = schedule.alpha_bar[t];
    return std::sqrt(abar) * x0 + std::sqrt(1.0 - abar) * eps;
}

Tensor simple_loss(const DenoiserModel& model, std::span<const DiffusionSample> batch,
                   const NoiseSchedule& schedule) {
    if (batch.empty()) throw std::invalid_argument("simple_loss: empty batch");
    const DenoiserConfig& cfg = model.config();
    const int b = static_cast<int>(batch.size());

    MatrixRM input(cfg.input_dim(), b);
    Array eps_flat(static_cast<long>(kCanvasCells) * b);
    MapMat eps_mat(eps_flat.data(), kCanvasCells, b);
    for (int j = 0; j < b; ++j) {
        const DiffusionSample& s = batch[j];
        const Canvas x_t = forward_noise(s.x0, s.t, s.eps, schedule);
        fill_input_column(input, j, x_t, s.context.condition, s.context.prompt, s.t,
                          schedule.t_steps, cfg);
        eps_mat.col(j) = Eigen::Map<const Eigen::VectorXd>(s.eps.data(), kCanvasCells);
    }

    Tensor input_t = Tensor::from_array({cfg.input_dim(), b},
                                        Eigen::Map<const Array>(input.data(), input.size()));
    Tensor eps_t = Tensor::from_array({kCanvasCells, b}, std::move(eps_flat));
    Tensor pred = model.forward_graph(input_t);
    return mean(colwise_squared_norm(sub(eps_t, pred)));
}

Canvas sample(const DenoiserModel& model, const PromptSpec& prompt, const ConditionMap& cond,
              const NoiseSchedule& schedule, RngStream& rng) {
    const DenoiserConfig& cfg = model.config();
    Canvas x(kCanvasCells);
    for (int i = 0; i < kCanvasCells; ++i) x[i] = rng.normal();

    MatrixRM input(cfg.input_dim(), 1);
    for (int t = schedule.t_steps - 1; t >= 0; --t) {
        fill_input_column(input, 0, x, cond, prompt, t, schedule.t_steps, cfg);
        const MatrixRM eps_hat = model.forward_eval(input);
        const double abar = schedule.alpha_bar[t];
        const double beta = schedule.beta[t];
        const double inv_sqrt_alpha = 1.0 / std::sqrt(schedule.alpha[t]);
        const double noise_coef = beta / std::sqrt(1.0 - abar);
        for (int i = 0; i < kCanvasCells; ++i)
            x[i] = inv_sqrt_alpha * (x[i] - noise_coef * eps_hat(i, 0));
        if (t > 0) {
            const double abar_prev = schedule.alpha_bar[t - 1];
            const double sigma = std::sqrt((1.0 - abar_prev) / (1.0 - abar) * beta);
            for (int i = 0; i < kCanvasCells; ++i) x[i] += sigma * rng.normal();
        }
        if (!x.isFinite().all())
            throw NumericError("sample: non-finite canvas at timestep " + std::to_string(t), t);
    }
    return x.min(1.0).max(0.0);
}

}  // namespace bidedpo
