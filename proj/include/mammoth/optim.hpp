// Copyright (c) 2026 The mammoth-mil Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "mammoth/errors.hpp"
#include "mammoth/module.hpp"

namespace mammoth {

struct AdamWOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-5;
};

/// AdamW with decoupled weight decay: p -= lr·wd·p, then the bias-corrected
/// Adam update. Moments are kept in double regardless of T.
template <typename T>
class AdamW {
public:
    AdamW(std::vector<NamedParam<T>> params, AdamWOptions opts = {}) : params_(std::move(params)), opts_(opts) {
        for (const auto& p : params_) {
            m_.emplace_back(p.tensor.numel(), 0.0);
            v_.emplace_back(p.tensor.numel(), 0.0);
        }
    }

    std::size_t steps() const noexcept { return step_; }
    const AdamWOptions& options() const noexcept { return opts_; }

    void zero_grad() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

    /// Applies one update at learning rate `lr`. Gradients are checked for
    /// finiteness before any parameter is touched.
    void step(double lr) {
        for (const auto& p : params_) {
            for (T g : p.tensor.grad()) {
                if (!std::isfinite(static_cast<double>(g))) {
                    throw NumericError("non-finite gradient in parameter '" + p.name + "' at step " +
                                       std::to_string(step_ + 1));
                }
            }
        }
        ++step_;
        const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto data = params_[k].tensor.data();
            auto grad = params_[k].tensor.grad();
            auto& m = m_[k];
            auto& v = v_[k];
            for (std::size_t i = 0; i < data.size(); ++i) {
                double p = static_cast<double>(data[i]);
                const double g = static_cast<double>(grad[i]);
                p -= lr * opts_.weight_decay * p;
                m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g;
                v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g * g;
                const double m_hat = m[i] / bc1;
                const double v_hat = v[i] / bc2;
                p -= lr * m_hat / (std::sqrt(v_hat) + opts_.eps);
                data[i] = static_cast<T>(p);
            }
        }
    }

private:
    std::vector<NamedParam<T>> params_;
    AdamWOptions opts_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t step_ = 0;
};

/// base_lr·0.5·(1 + cos(π·step/total)); step is clamped to [0, total].
inline double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr) {
    if (total_steps == 0) return base_lr;
    const double t = static_cast<double>(std::min(step, total_steps)) / static_cast<double>(total_steps);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

}  // namespace mammoth
