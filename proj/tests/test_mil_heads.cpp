// Copyright (c) 2026 The mammoth-mil Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "mammoth/gradient_suite.hpp"
#include "mammoth/mil_heads.hpp"
#include "mammoth/model.hpp"

using namespace mammoth;
using Td = Tensor<double>;

TEST(MeanPool, Examples) {
    const Td head = Td::matrix(2, 3, {1, 0, 2, -1, 3, 0.5});
    const Td bias = Td::filled({1, 2}, 0.0);
    const Td z = Td::row({0.5, -1, 2});
    const Td one = mean_pool_classify(z, head, bias);
    EXPECT_DOUBLE_EQ(one(0, 0), 0.5 + 4);
    EXPECT_DOUBLE_EQ(one(0, 1), -0.5 - 3 + 1);
    const Td sym = mean_pool_classify(Td::matrix(2, 3, {0.5, -1, 2, -0.5, 1, -2}), head, bias);
    EXPECT_EQ(sym.to_vector(), (std::vector<double>{0, 0}));
    EXPECT_THROW(mean_pool_classify(Td({0, 3}, {}), head, bias), EmptyBagError);
}

TEST(MaxPool, Examples) {
    const Td id = Td::matrix(2, 2, {1, 0, 0, 1});
    const Td bias = Td::filled({1, 2}, 0.0);
    const auto out = max_pool_classify(Td::matrix(2, 2, {10, 0, 0, 1}), id, bias);
    EXPECT_EQ(out.logits.to_vector(), (std::vector<double>{10, 0}));
    EXPECT_EQ(out.selected_row, 0u);
    const auto single = max_pool_classify(Td::row({-2, 3}), id, bias);
    EXPECT_EQ(single.logits.to_vector(), (std::vector<double>{-2, 3}));
    const auto tie = max_pool_classify(Td::matrix(3, 2, {0, 1, 5, 2, 5, 2}), id, bias);
    EXPECT_EQ(tie.selected_row, 1u);
}

TEST(MaxPool, GradientFlowsOnlyThroughSelectedRow) {
    Td z = Td::matrix(3, 2, {0.1, 0.2, 3.0, -1.0, 0.5, 0.4}, true);
    const Td id = Td::matrix(2, 2, {1, 0, 0, 1});
    const auto out = max_pool_classify(z, id, Td::filled({1, 2}, 0.0));
    sum(out.logits).backward();
    EXPECT_EQ(std::vector<double>(z.grad().begin(), z.grad().end()), (std::vector<double>{0, 0, 1, 1, 0, 0}));
}

TEST(Abmil, Examples) {
    Rng rng(1);
    MilHead<double> head(AggregatorConfig{AggKind::abmil, 4, 3, 8}, rng);
    const Td z1 = detail::randn({1, 4}, rng, 1.0, false);
    const auto one = head.forward(z1);
    EXPECT_DOUBLE_EQ(one.attention(0, 0), 1.0);
    const Td direct = matmul_nt(z1, head.head());
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(one.logits(0, c), direct(0, c), 1e-14);

    const Td same = concat_rows<double>({z1, z1, z1, z1});
    const auto uniform = head.forward(same);
    for (double a : uniform.attention.data()) EXPECT_NEAR(a, 0.25, 1e-15);

    const auto rnd = head.forward(detail::randn({9, 4}, rng, 2.0, false));
    double s = 0;
    for (double a : rnd.attention.data()) {
        EXPECT_GT(a, 0.0);
        s += a;
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
}

TEST(Aggregators, PermutationInvariant) {
    Rng rng(2);
    const Td z = detail::randn({6, 5}, rng, 1.0, false);
    const std::vector<std::size_t> perm{4, 2, 0, 5, 1, 3};
    for (auto kind : {AggKind::mean, AggKind::max, AggKind::abmil}) {
        MilHead<double> head(AggregatorConfig{kind, 5, 3, 4}, rng);
        const Td a = head.forward(z).logits, b = head.forward(gather_rows(z, perm)).logits;
        for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(a(0, c), b(0, c), 1e-6) << agg_tag(kind);
    }
}

TEST(Aggregators, ConfigParsing) {
    EXPECT_EQ(parse_agg_tag("abmil"), AggKind::abmil);
    EXPECT_THROW(parse_agg_tag("transmil"), ConfigError);
    Rng rng(0);
    EXPECT_THROW(MilHead<double>(AggregatorConfig{AggKind::mean, 4, 1, 8}, rng), ConfigError);
    const AggregatorConfig c{AggKind::max, 7, 4, 16};
    const auto back = AggregatorConfig::from_json(c.to_json());
    EXPECT_EQ(back.kind, AggKind::max);
    EXPECT_EQ(back.embed_dim, 7u);
    EXPECT_EQ(back.num_classes, 4u);
}

TEST(Aggregators, BiasStartsAtZero) {
    Rng rng(3);
    MilHead<double> head(AggregatorConfig{AggKind::mean, 4, 3, 8}, rng);
    EXPECT_EQ(head.bias().to_vector(), (std::vector<double>{0, 0, 0}));
}

TEST(MilModel, SlotSetFeedsAggregator) {
    Rng rng(4);
    LayerOptions o;
    o.d_in = 16;
    o.d_out = 8;
    o.heads = 2;
    o.part_dim = 2;
    o.experts = 3;
    o.slots = 2;
    MilModel<double> model(o.to_config(), AggregatorConfig{AggKind::abmil, 0, 3, 4}, rng);
    EXPECT_EQ(model.head().cfg().embed_dim, 8u);
    const Td x = detail::randn({5, 16}, rng, 1.0, false);
    const auto out = model.forward(x, false, rng);
    EXPECT_EQ(out.logits.shape(), (Shape{1, 3}));
    EXPECT_EQ(out.attention.shape(), (Shape{6, 1}));  // one weight per slot
    EXPECT_THROW(model.forward(Td({0, 16}, {}), false, rng), EmptyBagError);
    EXPECT_EQ(model.parameter_count(), model.layer().parameter_count() + model.head().parameter_count());
}

class AggGradient : public ::testing::TestWithParam<std::string> {};

TEST_P(AggGradient, ThroughCrossEntropy) {
    for (const auto& gc : gradient_cases()) {
        if (gc.name != GetParam()) continue;
        Rng rng(child_seed(9, gc.name));
        for (int i = 0; i < 20; ++i) {
            const auto r = gc.run(rng);
            EXPECT_LT(r.max_rel_error, 1e-4) << gc.name << " instance " << i << " worst " << r.worst;
        }
        return;
    }
    FAIL() << "no gradient case named " << GetParam();
}

INSTANTIATE_TEST_SUITE_P(Heads, AggGradient, ::testing::Values("agg_mean", "agg_max", "agg_abmil"));
