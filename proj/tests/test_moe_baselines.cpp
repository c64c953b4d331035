// Copyright (c) 2026 The mammoth-mil Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "mammoth/gradient_suite.hpp"
#include "mammoth/model.hpp"
#include "mammoth/moe_baselines.hpp"

using namespace mammoth;
using Td = Tensor<double>;

namespace {

void set_values(Td t, const std::vector<double>& v) {
    ASSERT_EQ(t.numel(), v.size());
    std::copy(v.begin(), v.end(), t.data().begin());
}

std::vector<double> eye(std::size_t n, double s = 1.0) {
    std::vector<double> v(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = s;
    return v;
}

}  // namespace

TEST(Linear, IdentityAndNegatedIdentity) {
    Rng rng(0);
    LinearLayer<double> layer(LinearConfig{3, 3}, rng);
    const Td x = Td::matrix(2, 3, {0.5, 1.0, 0.0, 2.0, 0.25, 3.0});
    set_values(layer.weight(), eye(3));
    EXPECT_EQ(layer.forward(x, false, rng).to_vector(), x.to_vector());
    set_values(layer.weight(), eye(3, -1.0));
    const Td pos = Td::matrix(1, 3, {1, 2, 3});
    EXPECT_EQ(layer.forward(pos, false, rng).to_vector(), (std::vector<double>{0, 0, 0}));
    EXPECT_EQ(LinearConfig{}.param_count(), 524288u);
}

TEST(SoftMoE, OneExpertOneSlotBroadcastsSlotOutput) {
    Rng rng(1);
    SoftMoE<double> layer(SoftMoEConfig{4, 3, 1, 1}, rng);
    const Td x = detail::randn({5, 4}, rng, 1.0, false);
    const auto out = layer.forward_full(x);
    ASSERT_EQ(out.out.shape(), (Shape{5, 3}));
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_DOUBLE_EQ(out.combine(i, 0), 1.0);
        for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(out.out(i, c), out.out(0, c), 1e-15);
    }
    // The slot input is the dispatch-weighted mean of instances.
    const Td slot_in = matmul(transpose(out.dispatch), x);
    const Td want = relu(matmul_nt(slot_in, layer.expert(0)));
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(out.out(0, c), want(0, c), 1e-14);
}

TEST(SoftMoE, DispatchAndCombineNormalized) {
    Rng rng(2);
    SoftMoE<double> layer(SoftMoEConfig{6, 4, 3, 2}, rng);
    for (std::size_t n : {1u, 7u, 40u}) {
        const auto out = layer.forward_full(detail::randn({n, 6}, rng, 3.0, false));
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0;
            for (std::size_t j = 0; j < 6; ++j) s += out.combine(i, j);
            EXPECT_NEAR(s, 1.0, 1e-6);
        }
        for (std::size_t j = 0; j < 6; ++j) {
            double s = 0;
            for (std::size_t i = 0; i < n; ++i) s += out.dispatch(i, j);
            EXPECT_NEAR(s, 1.0, 1e-6);
        }
    }
    EXPECT_THROW(layer.forward_full(Td({0, 6}, {})), EmptyBagError);
}

TEST(SoftMoE, DefaultSlotCount) {
    LayerOptions o;
    o.kind = LayerKind::soft_moe;
    const auto cfg = SoftMoEConfig::from_json(o.to_config());
    EXPECT_EQ(cfg.experts, 5u);
    EXPECT_EQ(cfg.slots_total(), 200u);
}

TEST(TopK, GateExample) {
    const auto r = route_top_k(softmax(Td::row({2, 1, 0}), 1), 2, 2.0);
    EXPECT_NEAR(r.weights(0, 0), 0.73106, 1e-5);
    EXPECT_NEAR(r.weights(0, 1), 0.26894, 1e-5);
    EXPECT_EQ(r.weights(0, 2), 0.0);
}

TEST(TopK, CapacityDropsLowestWeight) {
    // N=4, E=2, k=1, cf=1 → capacity 2. Tokens 0, 1, 2 prefer expert 0;
    // token 1 has the weakest preference and is dropped.
    const Td probs = Td::matrix(4, 2, {0.9, 0.1, 0.6, 0.4, 0.8, 0.2, 0.3, 0.7});
    const auto r = route_top_k(probs, 1, 1.0);
    EXPECT_EQ(r.capacity, 2u);
    EXPECT_EQ(r.assigned[0], (std::vector<std::size_t>{0, 2}));
    EXPECT_EQ(r.dropped[0], (std::vector<std::size_t>{1}));
    EXPECT_EQ(r.assigned[1], (std::vector<std::size_t>{3}));
    EXPECT_EQ(r.weights(1, 0), 0.0);
    EXPECT_EQ(r.weights(1, 1), 0.0);
    EXPECT_DOUBLE_EQ(r.weights(0, 0), 1.0);
}

TEST(TopK, CapacityTiesFavorLowerIndex) {
    const Td probs = Td::matrix(3, 2, {0.7, 0.3, 0.7, 0.3, 0.7, 0.3});
    const auto r = route_top_k(probs, 1, 1.0);  // capacity ceil(3/2) = 2
    EXPECT_EQ(r.assigned[0], (std::vector<std::size_t>{0, 1}));
    EXPECT_EQ(r.dropped[0], (std::vector<std::size_t>{2}));
}

TEST(TopK, AtMostKNonzeroAndSumAtMostOne) {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const Td probs = softmax(detail::randn({17, 5}, rng, 2.0, false), 1);
        const auto r = route_top_k(probs, 2, 1.25);
        for (std::size_t i = 0; i < 17; ++i) {
            int nonzero = 0;
            double s = 0;
            for (std::size_t e = 0; e < 5; ++e) {
                nonzero += r.weights(i, e) != 0.0;
                s += r.weights(i, e);
            }
            EXPECT_LE(nonzero, 2);
            EXPECT_LE(s, 1.0 + 1e-12);
        }
        for (const auto& a : r.assigned) EXPECT_LE(a.size(), r.capacity);
    }
    EXPECT_THROW(route_top_k(Td::row({0.5, 0.5}), 3, 1.0), ConfigError);
}

TEST(SparseMoE, SingleExpertEqualsLinear) {
    Rng rng(4);
    SparseMoEConfig cfg;
    cfg.d_in = 5;
    cfg.d_out = 3;
    cfg.experts = 1;
    cfg.top_k = 1;
    SparseMoE<double> sparse(cfg, rng);
    LinearLayer<double> lin(LinearConfig{5, 3}, rng);
    set_values(lin.weight(), sparse.expert(0).to_vector());
    const Td x = detail::randn({6, 5}, rng, 1.0, false);
    const Td a = sparse.forward(x, false, rng), b = lin.forward(x, false, rng);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-14);
}

TEST(SparseMoE, ParamCountAndOutputRows) {
    SparseMoEConfig cfg;
    EXPECT_EQ(cfg.param_count(), 2626560u);
    Rng rng(5);
    cfg.d_in = 8;
    cfg.d_out = 4;
    for (auto g : {Gating::softmax, Gating::sinkhorn}) {
        cfg.gating = g;
        SparseMoE<double> layer(cfg, rng);
        EXPECT_EQ(layer.parameter_count(), cfg.param_count());
        for (std::size_t n : {1u, 9u, 33u}) EXPECT_EQ(layer.forward(detail::randn({n, 8}, rng, 1.0, false), true, rng).shape(), (Shape{n, 4}));
    }
}

TEST(Sinkhorn, Examples) {
    const Td uni = sinkhorn_gate(Td::filled({4, 3}, 0.7), 5);
    for (double v : uni.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);

    Rng rng(6);
    const Td g = sinkhorn_gate(detail::randn({9, 4}, rng, 3.0, false), 3);
    for (std::size_t i = 0; i < 9; ++i) {
        double s = 0;
        for (std::size_t e = 0; e < 4; ++e) s += g(i, e);
        EXPECT_NEAR(s, 1.0, 1e-6);
    }

    const Td two = sinkhorn_gate(Td::matrix(2, 2, {1, 0, 0, 1}), 3);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_NEAR(two(i, 0) + two(i, 1), 1.0, 0.05);
        EXPECT_NEAR(two(0, i) + two(1, i), 1.0, 0.05);
    }
    EXPECT_THROW(sinkhorn_gate(Td::filled({2, 2}, 0.0), 0), ConfigError);
}

TEST(SparseMultihead, HiddenDimAndDivisibility) {
    EXPECT_EQ(SparseMultiheadConfig::default_hidden(1024, 512, 16), 5461u);
    SparseMultiheadConfig c;
    c.d_in = 10;
    c.d_out = 8;
    c.heads = 4;
    EXPECT_THROW(c.validate(), ConfigError);
    Rng rng(0);
    EXPECT_THROW(SparseMultiheadMoE<double>(c, rng), ConfigError);
}

TEST(SparseMultihead, SingleHeadIsTopKWithTwoLayerExperts) {
    Rng rng(7);
    SparseMultiheadConfig c;
    c.d_in = 6;
    c.d_out = 4;
    c.heads = 1;
    c.experts = 3;
    c.top_k = 2;
    c.hidden = 5;
    SparseMultiheadMoE<double> layer(c, rng);
    const auto p = layer.parameters();  // gate, W1_0, W2_0, W1_1, ...
    const Td x = detail::randn({7, 6}, rng, 1.0, false);
    const auto r = route_top_k(softmax(matmul_nt(x, p[0].tensor), 1), 2, c.capacity_eval);
    const Td y = layer.forward(x, false, rng);
    for (std::size_t i = 0; i < 7; ++i) {
        std::vector<double> want(4, 0.0);
        for (std::size_t e = 0; e < 3; ++e) {
            if (r.weights(i, e) == 0.0) continue;
            const Td h = relu(matmul_nt(slice_rows(x, i, 1), p[1 + 2 * e].tensor));
            const Td o = matmul_nt(h, p[2 + 2 * e].tensor);
            for (std::size_t c2 = 0; c2 < 4; ++c2) want[c2] += r.weights(i, e) * o.data()[c2];
        }
        for (std::size_t c2 = 0; c2 < 4; ++c2) EXPECT_NEAR(y(i, c2), want[c2], 1e-12);
    }
}

TEST(SparseMultihead, OutputShapeAndParamCount) {
    Rng rng(8);
    SparseMultiheadConfig c;
    c.d_in = 16;
    c.d_out = 8;
    c.heads = 4;
    SparseMultiheadMoE<double> layer(c, rng);
    EXPECT_EQ(layer.parameter_count(), c.param_count());
    for (std::size_t n : {1u, 5u, 21u}) EXPECT_EQ(layer.forward(detail::randn({n, 16}, rng, 1.0, false), true, rng).shape(), (Shape{n, 8}));
}

TEST(Variants, OnlyMammothEmitsSlotSet) {
    Rng rng(9);
    for (const auto kind : {LayerKind::linear, LayerKind::mammoth, LayerKind::soft_moe, LayerKind::sparse_softmax,
                            LayerKind::sparse_sinkhorn, LayerKind::sparse_multihead}) {
        LayerOptions o;
        o.kind = kind;
        o.d_in = 32;
        o.d_out = 16;
        o.heads = 4;
        o.part_dim = 2;
        o.rank = 2;
        const auto layer = make_layer<double>(o.to_config(), rng);
        EXPECT_EQ(layer->kind(), kind);
        EXPECT_EQ(layer->output_kind() == OutputKind::slot_set, kind == LayerKind::mammoth);
        EXPECT_EQ(layer->parameter_count(), layer_param_count(o.to_config()));
        const Td y = layer->forward(detail::randn({11, 32}, rng, 1.0, false), false, rng);
        EXPECT_EQ(y.cols(), 16u);
        if (kind != LayerKind::mammoth) {
            EXPECT_EQ(y.rows(), 11u);
        }
    }
    EXPECT_THROW(parse_layer_tag("dense"), ConfigError);
}

class VariantGradient : public ::testing::TestWithParam<std::string> {};

TEST_P(VariantGradient, MatchesFiniteDifferences) {
    for (const auto& gc : gradient_cases()) {
        if (gc.name != GetParam()) continue;
        Rng rng(child_seed(77, gc.name));
        for (int i = 0; i < 20; ++i) {
            const auto r = gc.run(rng);
            EXPECT_LT(r.max_rel_error, 1e-4) << gc.name << " instance " << i << " worst " << r.worst;
        }
        return;
    }
    FAIL() << "no gradient case named " << GetParam();
}

INSTANTIATE_TEST_SUITE_P(Layers, VariantGradient,
                         ::testing::Values("layer_linear", "layer_soft_moe", "layer_sparse_softmax",
                                           "layer_sparse_sinkhorn", "layer_sparse_mh", "sinkhorn_gate"));
