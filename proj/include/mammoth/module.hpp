// Copyright (c) 2026 The mammoth-mil Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>

#include "mammoth/rng.hpp"
#include "mammoth/tensor.hpp"

namespace mammoth {

template <typename T>
struct NamedParam {
    std::string name;
    Tensor<T> tensor;
};

/// Anything owning trainable tensors. Parameter names are stable and are
/// used as checkpoint keys.
template <typename T>
class Module {
public:
    virtual ~Module() = default;
    virtual std::vector<NamedParam<T>> parameters() const = 0;

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : parameters()) n += p.tensor.numel();
        return n;
    }

    void zero_grad() {
        for (auto& p : parameters()) p.tensor.zero_grad();
    }
};

namespace init {

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the fan-in scaled uniform used by
/// common linear-layer defaults.
template <typename T>
Tensor<T> kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    boost::random::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(dist(rng));
    return Tensor<T>(std::move(shape), std::move(v), true);
}

template <typename T>
Tensor<T> gaussian(Shape shape, double stddev, Rng& rng) {
    boost::random::normal_distribution<double> dist(0.0, stddev);
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(dist(rng));
    return Tensor<T>(std::move(shape), std::move(v), true);
}

template <typename T>
Tensor<T> constant(Shape shape, T value) {
    return Tensor<T>::filled(std::move(shape), value, true);
}

}  // namespace init

}  // namespace mammoth
