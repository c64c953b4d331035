// Copyright (c) 2026 The mammoth-mil Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mammoth/ops.hpp"
#include "mammoth/tensor.hpp"

namespace mammoth {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst;  // "<input>[<index>]" of the worst entry
    std::size_t checked = 0;
    std::size_t kinks = 0;  // entries skipped as non-differentiable points
};

/// Compares the analytic gradient of a scalar loss against central finite
/// differences, entry by entry, for every tensor in `inputs`.
///
/// Relative error is |a - n| / max(|a|, |n|, abs_floor). At h = 1e-5 the
/// central difference carries roundoff of about eps·|loss|/h ~ 1e-10, so
/// the floor keeps entries whose true gradient is ~0 from dividing that
/// noise by itself.
///
/// An entry whose forward and backward one-sided differences disagree by
/// more than `kink_tol`·max(1, |slope|) sits within h of a ReLU, max or
/// top-k boundary; the loss is not differentiable there, so the entry is
/// counted in `kinks` and excluded. The test uses only loss values, never
/// the analytic gradient.
template <typename Fn>
GradCheckResult gradcheck(Fn&& loss_fn, std::vector<std::pair<std::string, Tensor<double>>> inputs,
                          double h = 1e-5, double abs_floor = 1e-5, double kink_tol = 1e-3) {
    for (auto& [name, t] : inputs) t.zero_grad();
    Tensor<double> loss = loss_fn();
    loss.backward();
    double base = 0.0;
    {
        NoGradGuard guard;
        base = loss_fn().item();
    }
    GradCheckResult result;
    for (auto& [name, t] : inputs) {
        const std::vector<double> analytic(t.grad().begin(), t.grad().end());
        auto values = t.data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            double plus = 0.0, minus = 0.0;
            {
                NoGradGuard guard;
                values[i] = saved + h;
                plus = loss_fn().item();
                values[i] = saved - h;
                minus = loss_fn().item();
                values[i] = saved;
            }
            const double forward = (plus - base) / h, backward = (base - minus) / h;
            if (std::abs(forward - backward) > kink_tol * std::max({1.0, std::abs(forward), std::abs(backward)})) {
                ++result.kinks;
                continue;
            }
            const double numeric = (plus - minus) / (2.0 * h);
            const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), abs_floor});
            const double rel = std::abs(analytic[i] - numeric) / denom;
            ++result.checked;
            if (result.worst.empty() || rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst = name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return result;
}

/// sum(out ⊙ weights): a scalar that depends on every output entry.
template <typename T>
Tensor<T> projection_loss(const Tensor<T>& out, const Tensor<T>& weights) {
    return sum(mul(out, weights));
}

}  // namespace mammoth
