// Copyright (c) 2026 bidedpo authors
// SPDX-License-Identifier: Apache-2.0
#include "bidedpo/preference.hpp"

#include <cmath>
#include <limits>

#include "bidedpo/common.hpp"

namespace bidedpo {

namespace {

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Squared per-column denoising errors of the frozen reference, as plain data.
Array ref_errors(const DenoiserModel& ref, const MatrixRM& input, const MatrixRM& eps) {
    const MatrixRM pred = ref.forward_eval(input);
    Array out(input.cols());
    for (int j = 0; j < input.cols(); ++j) out[j] = (eps.col(j) - pred.col(j)).squaredNorm();
    return out;
}

struct MemberBatch {
    MatrixRM input;   // {in_dim, N}
    MatrixRM eps;     // {canvas, N}
};

MemberBatch assemble(const DenoiserConfig& cfg, std::span<const PreferencePair> pairs,
                     std::span<const PairDraw> draws, bool preferred,
                     const NoiseSchedule& schedule) {
    const int n = static_cast<int>(pairs.size());
    MemberBatch b{MatrixRM(cfg.input_dim(), n), MatrixRM(kCanvasCells, n)};
    for (int j = 0; j < n; ++j) {
        const PreferencePair& pair = pairs[j];
        const PairDraw& d = draws[j];
        const Canvas& x0 = preferred ? pair.preferred : pair.dispreferred;
        const Canvas& eps = preferred ? d.eps_pos : d.eps_neg;
        const int t = preferred ? d.t_pos : d.t_neg;
        const Canvas x_t = forward_noise(x0, t, eps, schedule);
        fill_input_column(b.input, j, x_t, pair.context.condition, pair.context.prompt, t,
                          schedule.t_steps, cfg);
        b.eps.col(j) = Eigen::Map<const Eigen::VectorXd>(eps.data(), kCanvasCells);
    }
    return b;
}

Tensor as_tensor(const MatrixRM& m) {
    return Tensor::from_array({static_cast<int>(m.rows()), static_cast<int>(m.cols())},
                              Eigen::Map<const Array>(m.data(), m.size()));
}

// Graph of per-pair rewards for one member side: r_j = ref_err_j - theta_err_j.
Tensor member_rewards(const DenoiserModel& model, const DenoiserModel& ref,
                      const MemberBatch& b) {
    Tensor input = as_tensor(b.input);
    Tensor eps = as_tensor(b.eps);
    Tensor theta_err = colwise_squared_norm(sub(eps, model.forward_graph(input)));
    Array ref_err = ref_errors(ref, b.input, b.eps);
    const int n = static_cast<int>(ref_err.size());
    Tensor ref_err_t = Tensor::from_array({n}, std::move(ref_err));
    return sub(ref_err_t, theta_err);
}

void check_finite(double v, const char* term) {
    if (!std::isfinite(v))
        throw NumericError(std::string("preference loss: non-finite ") + term);
}

double grad_cosine(const std::vector<Tensor>& a, const std::vector<Tensor>& b, bool& degenerate) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += (a[i].value() * b[i].value()).sum();
        na += a[i].value().square().sum();
        nb += b[i].value().square().sum();
    }
    if (na <= 0.0 || nb <= 0.0) {
        degenerate = true;
        return 0.0;
    }
    return dot / std::sqrt(na * nb);
}

}  // namespace

PairDraw draw_pair_noise(RngStream& rng, const NoiseSchedule& schedule, bool shared) {
    PairDraw d;
    d.t_pos = static_cast<int>(rng.uniform_index(schedule.t_steps));
    d.eps_pos = Canvas(kCanvasCells);
    for (int i = 0; i < kCanvasCells; ++i) d.eps_pos[i] = rng.normal();
    if (shared) {
        d.t_neg = d.t_pos;
        d.eps_neg = d.eps_pos;
    } else {
        d.t_neg = static_cast<int>(rng.uniform_index(schedule.t_steps));
        d.eps_neg = Canvas(kCanvasCells);
        for (int i = 0; i < kCanvasCells; ++i) d.eps_neg[i] = rng.normal();
    }
    return d;
}

AlbMode alb_mode_from_string(const std::string& s) {
    if (s == "instance_mean") return AlbMode::instance_mean;
    if (s == "historical_mean") return AlbMode::historical_mean;
    if (s == "fixed") return AlbMode::fixed;
    throw ConfigError("unknown alb mode: " + s);
}

const char* to_string(AlbMode m) {
    switch (m) {
        case AlbMode::instance_mean: return "instance_mean";
        case AlbMode::historical_mean: return "historical_mean";
        case AlbMode::fixed: return "fixed";
    }
    return "?";
}

double sample_reward(const DenoiserModel& model, const DenoiserModel& ref, const Canvas& x0,
                     const Context& context, int t, const Canvas& eps,
                     const NoiseSchedule& schedule) {
    const DenoiserConfig& cfg = model.config();
    const Canvas x_t = forward_noise(x0, t, eps, schedule);
    MatrixRM input(cfg.input_dim(), 1);
    fill_input_column(input, 0, x_t, context.condition, context.prompt, t, schedule.t_steps, cfg);
    const Eigen::Map<const Eigen::VectorXd> eps_v(eps.data(), kCanvasCells);
    const double err_theta = (eps_v - model.forward_eval(input).col(0)).squaredNorm();
    const double err_ref = (eps_v - ref.forward_eval(input).col(0)).squaredNorm();
    return err_ref - err_theta;
}

double reward_difference(const DenoiserModel& model, const DenoiserModel& ref,
                         const PreferencePair& pair, const PairDraw& draw,
                         const NoiseSchedule& schedule) {
    const double r_pos = sample_reward(model, ref, pair.preferred, pair.context, draw.t_pos,
                                       draw.eps_pos, schedule);
    const double r_neg = sample_reward(model, ref, pair.dispreferred, pair.context, draw.t_neg,
                                       draw.eps_neg, schedule);
    return r_pos - r_neg;
}

Tensor reward_difference_batch(const DenoiserModel& model, const DenoiserModel& ref,
                               std::span<const PreferencePair> pairs,
                               std::span<const PairDraw> draws, const NoiseSchedule& schedule) {
    if (pairs.empty() || pairs.size() != draws.size())
        throw std::invalid_argument("reward_difference_batch: pair/draw size mismatch");
    const DenoiserConfig& cfg = model.config();
    const MemberBatch pos = assemble(cfg, pairs, draws, true, schedule);
    const MemberBatch neg = assemble(cfg, pairs, draws, false, schedule);
    return sub(member_rewards(model, ref, pos), member_rewards(model, ref, neg));
}

Tensor coupled_dpo_loss(const DenoiserModel& model, const DenoiserModel& ref,
                        std::span<const PreferencePair> pairs, std::span<const PairDraw> draws,
                        double beta_t, const NoiseSchedule& schedule) {
    Tensor delta = reward_difference_batch(model, ref, pairs, draws, schedule);
    // -log sigmoid(beta_t * delta) == softplus(-beta_t * delta)
    Tensor loss = mean(softplus(scale(delta, -beta_t)));
    check_finite(loss.item(), "coupled loss");
    return loss;
}

std::pair<double, double> alb_weights(double l_text, double l_cond) {
    if (l_text < 0.0 || l_cond < 0.0)
        throw std::invalid_argument("alb_weights: losses must be non-negative");
    const double total = l_text + l_cond;
    if (total < 1e-12) {
        log_warn("alb_weights: degenerate losses (%g, %g); falling back to (0.5, 0.5)", l_text,
                 l_cond);
        return {0.5, 0.5};
    }
    const double w_text = l_text / total;
    return {w_text, 1.0 - w_text};
}

BidedpoResult bidedpo_loss(const DenoiserModel& model, const DenoiserModel& ref,
                           std::span<const PreferencePair> text_pairs,
                           std::span<const PairDraw> text_draws,
                           std::span<const PreferencePair> cond_pairs,
                           std::span<const PairDraw> cond_draws, double beta_t,
                           const AlbSettings& alb, AlbState* state,
                           const NoiseSchedule& schedule) {
    for (const auto& p : text_pairs)
        if (p.kind != PairKind::text)
            throw std::invalid_argument("bidedpo_loss: non-text pair in text branch");
    for (const auto& p : cond_pairs)
        if (p.kind != PairKind::condition)
            throw std::invalid_argument("bidedpo_loss: non-condition pair in condition branch");

    Tensor delta_t = reward_difference_batch(model, ref, text_pairs, text_draws, schedule);
    Tensor delta_c = reward_difference_batch(model, ref, cond_pairs, cond_draws, schedule);
    Tensor l_text = mean(softplus(scale(delta_t, -beta_t)));
    Tensor l_cond = mean(softplus(scale(delta_c, -beta_t)));

    LossBreakdown br;
    br.l_text = l_text.item();
    br.l_cond = l_cond.item();
    br.r_t = delta_t.value().mean();
    br.r_c = delta_c.value().mean();
    check_finite(br.l_text, "l_text");
    check_finite(br.l_cond, "l_cond");

    switch (alb.mode) {
        case AlbMode::instance_mean:
            std::tie(br.w_text, br.w_cond) = alb_weights(br.l_text, br.l_cond);
            break;
        case AlbMode::historical_mean: {
            if (!state) throw std::invalid_argument("bidedpo_loss: historical_mean needs state");
            if (!state->initialized) {
                state->ema_text = br.l_text;
                state->ema_cond = br.l_cond;
                state->initialized = true;
            } else {
                state->ema_text = alb.decay * state->ema_text + (1.0 - alb.decay) * br.l_text;
                state->ema_cond = alb.decay * state->ema_cond + (1.0 - alb.decay) * br.l_cond;
            }
            std::tie(br.w_text, br.w_cond) = alb_weights(state->ema_text, state->ema_cond);
            break;
        }
        case AlbMode::fixed:
            br.w_text = alb.fixed_w_text;
            br.w_cond = 1.0 - alb.fixed_w_text;
            break;
    }

    // Weights enter as plain constants: exactly the detached semantics.
    Tensor total = add(scale(l_text, br.w_text), scale(l_cond, br.w_cond));
    br.total = total.item();
    check_finite(br.total, "total");
    return {total, br};
}

EntanglementReport entanglement_diagnostic(const DenoiserModel& model, const DenoiserModel& ref,
                                           const PreferencePair& text_pair,
                                           const PairDraw& text_draw,
                                           const PreferencePair& cond_pair,
                                           const PairDraw& cond_draw, double beta_t,
                                           const NoiseSchedule& schedule) {
    // Coupled pair from the same underlying samples: condition-branch positive
    // vs text-branch negative, judged under the condition context.
    PreferencePair coupled;
    coupled.preferred = cond_pair.preferred;
    coupled.dispreferred = text_pair.dispreferred;
    coupled.context = cond_pair.context;
    coupled.kind = PairKind::condition;
    PairDraw coupled_draw;
    coupled_draw.t_pos = cond_draw.t_pos;
    coupled_draw.eps_pos = cond_draw.eps_pos;
    coupled_draw.t_neg = text_draw.t_neg;
    coupled_draw.eps_neg = text_draw.eps_neg;

    const std::vector<Tensor> params = model.trainable_params();
    EntanglementReport rep;

    Tensor delta_coupled =
        reward_difference_batch(model, ref, std::span(&coupled, 1), std::span(&coupled_draw, 1),
                                schedule);
    rep.delta_coupled = delta_coupled.value()[0];
    Tensor coupled_loss = mean(softplus(scale(delta_coupled, -beta_t)));
    auto g_coupled = reverse_grad(coupled_loss, params);

    Tensor delta_text = reward_difference_batch(model, ref, std::span(&text_pair, 1),
                                                std::span(&text_draw, 1), schedule);
    rep.r_t = delta_text.value()[0];
    Tensor l_text = mean(softplus(scale(delta_text, -beta_t)));
    auto g_text = reverse_grad(l_text, params);

    Tensor delta_cond = reward_difference_batch(model, ref, std::span(&cond_pair, 1),
                                                std::span(&cond_draw, 1), schedule);
    rep.r_c = delta_cond.value()[0];
    Tensor l_cond = mean(softplus(scale(delta_cond, -beta_t)));

    auto [w_text, w_cond] = alb_weights(l_text.item(), l_cond.item());
    Tensor total = add(scale(l_text, w_text), scale(l_cond, w_cond));
    auto g_total = reverse_grad(total, params);

    rep.prefactor_coupled = 1.0 - stable_sigmoid(beta_t * rep.delta_coupled);
    rep.prefactor_text = 1.0 - stable_sigmoid(beta_t * rep.r_t);
    rep.swallow_factor = rep.prefactor_text > 0.0
                             ? rep.prefactor_coupled / rep.prefactor_text
                             : std::numeric_limits<double>::infinity();
    rep.cos_coupled_text = grad_cosine(g_coupled, g_text, rep.degenerate);
    rep.cos_decoupled_text = grad_cosine(g_total, g_text, rep.degenerate);
    return rep;
}

void tune_condition_gap(DenoiserModel& model, const DenoiserModel&,
                        const PreferencePair& cond_pair, const PairDraw& cond_draw,
                        double /*beta_t*/, const NoiseSchedule& schedule, int steps, double lr) {
    // Regress the tuned model toward the preferred member's noise target.
    // This raises r(x_C+) and with it R_C and the coupled reward difference,
    // while barely moving predictions on unrelated inputs.
    const DenoiserConfig& cfg = model.config();
    const Canvas x_t =
        forward_noise(cond_pair.preferred, cond_draw.t_pos, cond_draw.eps_pos, schedule);
    MatrixRM input(cfg.input_dim(), 1);
    fill_input_column(input, 0, x_t, cond_pair.context.condition, cond_pair.context.prompt,
                      cond_draw.t_pos, schedule.t_steps, cfg);
    Tensor input_t = Tensor::from_array({cfg.input_dim(), 1},
                                        Eigen::Map<const Array>(input.data(), input.size()));
    Tensor eps_t = Tensor::from_array({kCanvasCells, 1},
                                      Eigen::Map<const Array>(cond_draw.eps_pos.data(),
                                                              kCanvasCells));
    const std::vector<Tensor> params = model.trainable_params();
    for (int s = 0; s < steps; ++s) {
        Tensor loss = scale(squared_norm(sub(eps_t, model.forward_graph(input_t))),
                            1.0 / kCanvasCells);
        auto grads = reverse_grad(loss, params);
        for (std::size_t i = 0; i < params.size(); ++i)
            const_cast<Tensor&>(params[i]).value() -= lr * grads[i].value();
    }
}

}  // namespace bidedpo
