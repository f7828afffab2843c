// Copyright (c) 2026 bidedpo authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>

#include "bidedpo/tensor.hpp"

namespace bidedpo {

struct GradCheckResult {
    double max_rel_error = 0.0;
    // Coordinate (param index, flat offset) of the worst error.
    int worst_param = -1;
    long worst_offset = -1;
    // Set when f produced a non-finite value during probing.
    bool nan_encountered = false;
    int nan_param = -1;
    long nan_offset = -1;
};

// Central-difference check of reverse-mode gradients, with one Richardson
// extrapolation step over the stencil (4 evaluations per coordinate).
//
// f must be deterministic: it is called once to build the graph for the
// autodiff gradient and then 4x per parameter coordinate with perturbed
// values. Relative error uses |g_fd| + 1e-12 in the denominator; coordinates
// where autodiff and the probe agree within `atol` absolutely count as exact,
// since slopes at that scale are cancellation dust below what central
// differences can resolve in double precision.
GradCheckResult finite_diff_check(
    const std::function<Tensor(std::span<const Tensor>)>& f,
    std::span<const Tensor> params, double eps = 1e-5, double atol = 1e-8);

}  // namespace bidedpo
