// Copyright (c) 2026 The mammoth-mil Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_int_distribution.hpp>

#include "mammoth/gradcheck.hpp"
#include "mammoth/mammoth_layer.hpp"
#include "mammoth/mil_heads.hpp"
#include "mammoth/moe_baselines.hpp"
#include "mammoth/ops.hpp"

namespace mammoth {

/// Finite-difference checks over every differentiable op and every layer
/// variant at tiny fp64 shapes. Each case draws fresh random inputs per
/// instance.
struct GradCase {
    std::string name;
    std::function<GradCheckResult(Rng&)> run;
};

struct GradSuiteRow {
    std::string name;
    double max_rel_error = 0.0;
    std::string worst;
    std::size_t instances = 0;
    std::size_t checked = 0;
    std::size_t kinks = 0;
};

namespace detail {

using T64 = Tensor<double>;

inline T64 randn(Shape shape, Rng& rng, double scale = 1.0, bool requires_grad = true) {
    boost::random::normal_distribution<double> dist(0.0, scale);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = dist(rng);
    return T64(std::move(shape), std::move(v), requires_grad);
}

/// Values bounded away from zero, for ops with a kink there.
inline T64 randn_away_from_zero(Shape shape, Rng& rng) {
    T64 t = randn(std::move(shape), rng);
    for (auto& x : t.data())
        if (std::abs(x) < 1e-2) x = x < 0 ? x - 1e-2 : x + 1e-2;
    return t;
}

inline T64 rand_positive(Shape shape, Rng& rng) {
    T64 t = randn(std::move(shape), rng);
    for (auto& x : t.data()) x = 0.5 + std::abs(x);
    return t;
}

/// Scalar = sum(out ⊙ w) with a fixed random w per instance.
template <typename Fn>
GradCheckResult check_projected(Fn&& fwd, std::vector<std::pair<std::string, T64>> inputs, Rng& rng) {
    T64 probe = fwd();
    const T64 w = randn(probe.shape(), rng, 1.0, false);
    return gradcheck([&] { return projection_loss(fwd(), w); }, std::move(inputs));
}

template <typename LayerT>
GradCheckResult check_layer(LayerT& layer, const T64& x, Rng& rng) {
    std::vector<std::pair<std::string, T64>> inputs{{"x", x}};
    for (const auto& p : layer.parameters()) inputs.emplace_back(p.name, p.tensor);
    Rng unused(0);
    return check_projected([&] { return layer.forward(x, false, unused); }, std::move(inputs), rng);
}

}  // namespace detail

inline std::vector<GradCase> gradient_cases() {
    using detail::T64;
    using detail::randn;
    std::vector<GradCase> c;
    const auto unary_case = [&](std::string name, std::function<T64(const T64&)> op, bool avoid_zero) {
        c.push_back({name, [op, avoid_zero](Rng& rng) {
                         T64 x = avoid_zero ? detail::randn_away_from_zero({3, 4}, rng) : randn({3, 4}, rng);
                         return detail::check_projected([&] { return op(x); }, {{"x", x}}, rng);
                     }});
    };

    c.push_back({"matmul", [](Rng& rng) {
                     T64 a = randn({3, 4}, rng), b = randn({4, 2}, rng);
                     return detail::check_projected([&] { return matmul(a, b); }, {{"a", a}, {"b", b}}, rng);
                 }});
    c.push_back({"matmul_nt", [](Rng& rng) {
                     T64 a = randn({3, 4}, rng), b = randn({2, 4}, rng);
                     return detail::check_projected([&] { return matmul_nt(a, b); }, {{"a", a}, {"b", b}}, rng);
                 }});
    c.push_back({"transpose", [](Rng& rng) {
                     T64 a = randn({3, 4}, rng);
                     return detail::check_projected([&] { return transpose(a); }, {{"a", a}}, rng);
                 }});
    c.push_back({"add", [](Rng& rng) {
                     T64 a = randn({3, 4}, rng), b = randn({3, 4}, rng);
                     return detail::check_projected([&] { return add(a, b); }, {{"a", a}, {"b", b}}, rng);
                 }});
    c.push_back({"add_row", [](Rng& rng) {
                     T64 a = randn({3, 4}, rng), b = randn({1, 4}, rng);
                     return detail::check_projected([&] { return add_row(a, b); }, {{"a", a}, {"row", b}}, rng);
                 }});
    c.push_back({"mul", [](Rng& rng) {
                     T64 a = randn({3, 4}, rng), b = randn({3, 4}, rng);
                     return detail::check_projected([&] { return mul(a, b); }, {{"a", a}, {"b", b}}, rng);
                 }});
    unary_case("scale", [](const T64& x) { return scale(x, -1.7); }, false);
    unary_case("relu", [](const T64& x) { return relu(x); }, true);
    unary_case("tanh", [](const T64& x) { return tanh(x); }, false);
    unary_case("sigmoid", [](const T64& x) { return sigmoid(x); }, false);
    unary_case("softmax_rows", [](const T64& x) { return softmax(x, 1); }, false);
    unary_case("softmax_cols", [](const T64& x) { return softmax(x, 0); }, false);
    c.push_back({"normalize", [](Rng& rng) {
                     T64 x = detail::rand_positive({3, 4}, rng);
                     return detail::check_projected([&] { return normalize(x, 1); }, {{"x", x}}, rng);
                 }});
    c.push_back({"layer_norm", [](Rng& rng) {
                     T64 x = randn({4, 8}, rng), g = randn({1, 8}, rng), b = randn({1, 8}, rng);
                     return detail::check_projected([&] { return layer_norm(x, g, b); },
                                                    {{"x", x}, {"gamma", g}, {"beta", b}}, rng);
                 }});
    c.push_back({"dropout", [](Rng& rng) {
                     T64 x = randn({4, 5}, rng);
                     const std::uint64_t seed = rng();
                     return detail::check_projected(
                         [&] {
                             Rng mask_rng(seed);
                             return dropout(x, 0.25, true, mask_rng);
                         },
                         {{"x", x}}, rng);
                 }});
    c.push_back({"concat_last_axis", [](Rng& rng) {
                     T64 a = randn({3, 2}, rng), b = randn({3, 3}, rng);
                     return detail::check_projected([&] { return concat_last_axis<double>({a, b}); },
                                                    {{"a", a}, {"b", b}}, rng);
                 }});
    c.push_back({"concat_rows", [](Rng& rng) {
                     T64 a = randn({2, 3}, rng), b = randn({1, 3}, rng);
                     return detail::check_projected([&] { return concat_rows<double>({a, b}); },
                                                    {{"a", a}, {"b", b}}, rng);
                 }});
    c.push_back({"slice_columns", [](Rng& rng) {
                     T64 a = randn({3, 5}, rng);
                     return detail::check_projected([&] { return slice_columns(a, 1, 3); }, {{"a", a}}, rng);
                 }});
    c.push_back({"slice_rows", [](Rng& rng) {
                     T64 a = randn({5, 3}, rng);
                     return detail::check_projected([&] { return slice_rows(a, 2, 2); }, {{"a", a}}, rng);
                 }});
    c.push_back({"gather_rows", [](Rng& rng) {
                     T64 a = randn({4, 3}, rng);
                     return detail::check_projected([&] { return gather_rows(a, {2, 0, 2}); }, {{"a", a}}, rng);
                 }});
    c.push_back({"scatter_rows", [](Rng& rng) {
                     T64 a = randn({3, 3}, rng);
                     return detail::check_projected([&] { return scatter_rows(a, {3, 0, 1}, 5); }, {{"a", a}}, rng);
                 }});
    c.push_back({"gather_entries", [](Rng& rng) {
                     T64 a = randn({3, 4}, rng);
                     return detail::check_projected([&] { return gather_entries(a, {0, 2, 2}, {3, 1, 0}); },
                                                    {{"a", a}}, rng);
                 }});
    c.push_back({"scale_rows", [](Rng& rng) {
                     T64 a = randn({3, 4}, rng), s = randn({3, 1}, rng);
                     return detail::check_projected([&] { return scale_rows(a, s); }, {{"a", a}, {"s", s}}, rng);
                 }});
    c.push_back({"reshape", [](Rng& rng) {
                     T64 a = randn({3, 4}, rng);
                     return detail::check_projected([&] { return reshape(a, {6, 2}); }, {{"a", a}}, rng);
                 }});
    unary_case("reduce_sum", [](const T64& x) { return reduce_sum(x, 0); }, false);
    unary_case("reduce_mean", [](const T64& x) { return reduce_mean(x, 1); }, false);
    unary_case("reduce_max", [](const T64& x) { return reduce_max_with_argmax(x, 1).values; }, false);
    unary_case("sum", [](const T64& x) { return sum(x); }, false);
    c.push_back({"cross_entropy", [](Rng& rng) {
                     T64 z = randn({1, 4}, rng);
                     boost::random::uniform_int_distribution<std::size_t> pick(0, 3);
                     const std::size_t label = pick(rng);
                     return gradcheck([&] { return cross_entropy_with_logits(z, label); }, {{"logits", z}});
                 }});
    c.push_back({"sinkhorn_gate", [](Rng& rng) {
                     T64 x = randn({5, 3}, rng);
                     return detail::check_projected([&] { return sinkhorn_gate(x, 3); }, {{"logits", x}}, rng);
                 }});
    c.push_back({"route_and_pool", [](Rng& rng) {
                     T64 x = randn({5, 3}, rng), s = randn({4, 3}, rng);
                     return detail::check_projected([&] { return route_and_pool(x, s).pooled; },
                                                    {{"x", x}, {"prototypes", s}}, rng);
                 }});

    // Full layers at tiny shapes.
    c.push_back({"layer_linear", [](Rng& rng) {
                     LinearLayer<double> layer(LinearConfig{6, 4}, rng);
                     return detail::check_layer(layer, randn({5, 6}, rng), rng);
                 }});
    c.push_back({"layer_mammoth", [](Rng& rng) {
                     MammothConfig cfg;
                     cfg.d_in = 12;
                     cfg.d_out = 8;
                     cfg.heads = 2;
                     cfg.part_dim = 3;
                     cfg.experts = 2;
                     cfg.slots = 2;
                     cfg.rank = 2;
                     MammothLayer<double> layer(cfg, rng);
                     return detail::check_layer(layer, randn({5, 12}, rng), rng);
                 }});
    c.push_back({"layer_mammoth_global_phi", [](Rng& rng) {
                     MammothConfig cfg;
                     cfg.d_in = 12;
                     cfg.d_out = 8;
                     cfg.heads = 2;
                     cfg.part_dim = 3;
                     cfg.experts = 3;
                     cfg.slots = 1;
                     cfg.rank = 2;
                     cfg.global_phi = true;
                     MammothLayer<double> layer(cfg, rng);
                     return detail::check_layer(layer, randn({4, 12}, rng), rng);
                 }});
    c.push_back({"layer_soft_moe", [](Rng& rng) {
                     SoftMoE<double> layer(SoftMoEConfig{6, 4, 2, 2}, rng);
                     return detail::check_layer(layer, randn({5, 6}, rng), rng);
                 }});
    for (const auto gating : {Gating::softmax, Gating::sinkhorn}) {
        c.push_back({gating == Gating::softmax ? "layer_sparse_softmax" : "layer_sparse_sinkhorn", [gating](Rng& rng) {
                         SparseMoEConfig cfg;
                         cfg.d_in = 6;
                         cfg.d_out = 4;
                         cfg.experts = 3;
                         cfg.top_k = 2;
                         cfg.gating = gating;
                         SparseMoE<double> layer(cfg, rng);
                         return detail::check_layer(layer, randn({6, 6}, rng), rng);
                     }});
    }
    c.push_back({"layer_sparse_mh", [](Rng& rng) {
                     SparseMultiheadConfig cfg;
                     cfg.d_in = 8;
                     cfg.d_out = 4;
                     cfg.heads = 2;
                     cfg.experts = 3;
                     cfg.top_k = 2;
                     SparseMultiheadMoE<double> layer(cfg, rng);
                     return detail::check_layer(layer, randn({4, 8}, rng), rng);
                 }});
    for (const auto kind : {AggKind::mean, AggKind::max, AggKind::abmil}) {
        c.push_back({"agg_" + std::string(agg_tag(kind)), [kind](Rng& rng) {
                         MilHead<double> head(AggregatorConfig{kind, 5, 3, 4}, rng);
                         T64 z = randn({4, 5}, rng);
                         std::vector<std::pair<std::string, T64>> inputs{{"z", z}};
                         for (const auto& p : head.parameters()) inputs.emplace_back(p.name, p.tensor);
                         return gradcheck([&] { return cross_entropy_with_logits(head.forward(z).logits, 1); },
                                          std::move(inputs));
                     }});
    }
    return c;
}

/// Runs every case on `instances` independent random draws and keeps the
/// worst relative error per case.
inline std::vector<GradSuiteRow> run_gradient_suite(std::size_t instances, std::uint64_t seed) {
    std::vector<GradSuiteRow> rows;
    for (const auto& gc : gradient_cases()) {
        Rng rng(child_seed(seed, "gradcheck/" + gc.name));
        GradSuiteRow row{gc.name, 0.0, {}, instances, 0, 0};
        for (std::size_t i = 0; i < instances; ++i) {
            const GradCheckResult r = gc.run(rng);
            row.checked += r.checked;
            row.kinks += r.kinks;
            if (row.worst.empty() || r.max_rel_error > row.max_rel_error) {
                row.max_rel_error = r.max_rel_error;
                row.worst = r.worst + " (instance " + std::to_string(i) + ")";
            }
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace mammoth
