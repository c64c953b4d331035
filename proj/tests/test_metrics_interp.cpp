// Copyright (c) 2026 The mammoth-mil Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_int_distribution.hpp>

#include "mammoth/interp.hpp"
#include "mammoth/metrics.hpp"
#include "mammoth/model.hpp"
#include "oracles.hpp"

using namespace mammoth;

TEST(BalancedAccuracy, Examples) {
    EXPECT_DOUBLE_EQ(balanced_accuracy({0, 1, 1, 1}, {0, 0, 1, 1}), 0.75);
    EXPECT_DOUBLE_EQ(balanced_accuracy({2, 0, 1, 1}, {2, 0, 1, 1}), 1.0);
    EXPECT_DOUBLE_EQ(balanced_accuracy({1, 1, 1, 1}, {0, 0, 1, 1}), 0.5);
    EXPECT_THROW(balanced_accuracy({0, 0}, {0, 0}, 2), std::invalid_argument);
    EXPECT_THROW(balanced_accuracy({0}, {0, 1}), std::invalid_argument);
}

TEST(BalancedAccuracy, InvariantToDuplicatingAClass) {
    std::vector<int> preds{0, 1, 1, 2, 2, 0, 1}, labels{0, 0, 1, 1, 2, 2, 2};
    const double base = balanced_accuracy(preds, labels);
    EXPECT_NEAR(base, (0.5 + 0.5 + 1.0 / 3.0) / 3.0, 1e-15);
    for (std::size_t i = 0; i < 7; ++i)
        if (labels[i] == 2) {
            preds.push_back(preds[i]);
            labels.push_back(2);
        }
    EXPECT_NEAR(balanced_accuracy(preds, labels), base, 1e-15);
}

TEST(Auroc, Examples) {
    EXPECT_DOUBLE_EQ(auroc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}), 0.75);
    EXPECT_DOUBLE_EQ(auroc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}), 1.0);
    EXPECT_DOUBLE_EQ(auroc({0.5, 0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1, 1}), 0.5);
    EXPECT_THROW(auroc({0.1, 0.2}, {1, 1}), std::invalid_argument);
}

TEST(Auroc, MatchesPairwiseCounting) {
    Rng rng(child_seed(0, "auroc"));
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 2 + static_cast<std::size_t>(rng.uniform() * 199);
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        for (std::size_t i = 0; i < n; ++i) {
            scores[i] = std::floor(rng.uniform() * 20) / 20;  // coarse grid forces ties
            labels[i] = rng.uniform() < 0.4 ? 1 : 0;
        }
        labels[0] = 0;
        labels[1] = 1;
        EXPECT_NEAR(auroc(scores, labels), oracle::pairwise_auroc(scores, labels), 1e-12) << "n=" << n;
    }
}

TEST(Ari, Examples) {
    EXPECT_NEAR(adjusted_rand_index({0, 0, 1, 1}, {0, 0, 1, 2}), 4.0 / 7.0, 1e-12);
    // One agreeing pair against an expected count of exactly one.
    EXPECT_NEAR(adjusted_rand_index({0, 0, 1, 1}, {0, 0, 0, 1}), 0.0, 1e-15);
    EXPECT_DOUBLE_EQ(adjusted_rand_index({3, 3, 5, 1}, {0, 0, 2, 1}), 1.0);
    EXPECT_DOUBLE_EQ(adjusted_rand_index({0, 0, 0, 0, 0}, {0, 1, 2, 3, 4}), 0.0);
    EXPECT_THROW(adjusted_rand_index({0, 1}, {0}), std::invalid_argument);
}

TEST(Ari, PartitionEnumeratorCountsBellNumbers) {
    const std::vector<std::size_t> bell{1, 1, 2, 5, 15, 52, 203, 877};
    for (std::size_t n = 1; n < bell.size(); ++n) {
        std::size_t count = 0;
        oracle::for_each_partition(n, [&](const std::vector<int>&) { ++count; });
        EXPECT_EQ(count, bell[n]) << n;
    }
}

TEST(Ari, MatchesPairCountingOnAllSmallPartitionPairs) {
    for (std::size_t n = 1; n <= 5; ++n) {
        std::vector<std::vector<int>> all;
        oracle::for_each_partition(n, [&](const std::vector<int>& p) { all.push_back(p); });
        for (const auto& a : all)
            for (const auto& b : all) ASSERT_NEAR(adjusted_rand_index(a, b), oracle::pair_count_ari(a, b), 1e-12);
    }
}

TEST(Ari, MatchesPairCountingAgainstRandomReferenceUpTo9) {
    Rng rng(5);
    for (std::size_t n = 6; n <= 9; ++n) {
        std::vector<int> ref(n);
        for (auto& r : ref) r = static_cast<int>(rng.uniform() * 3);
        oracle::for_each_partition(n, [&](const std::vector<int>& p) {
            ASSERT_NEAR(adjusted_rand_index(p, ref), oracle::pair_count_ari(p, ref), 1e-12);
        });
    }
}

TEST(KMeans, SeparatedBlobs) {
    Rng rng(1);
    boost::random::normal_distribution<double> noise(0.0, 0.1);
    std::vector<double> x;
    std::vector<int> truth;
    for (int i = 0; i < 60; ++i) {
        const int c = i % 3;
        x.push_back(10.0 * c + noise(rng));
        x.push_back(-5.0 * c + noise(rng));
        truth.push_back(c);
    }
    const auto km = kmeans(x, 60, 2, 3, rng);
    EXPECT_DOUBLE_EQ(adjusted_rand_index(km.assignments, truth), 1.0);
}

TEST(KMeans, OneClusterPerPointAndDuplicates) {
    Rng rng(2);
    const std::vector<double> x{0, 0, 1, 0, 0, 1, 5, 5};
    const auto km = kmeans(x, 4, 2, 4, rng);
    EXPECT_DOUBLE_EQ(km.inertia, 0.0);
    std::set<int> ids(km.assignments.begin(), km.assignments.end());
    EXPECT_EQ(ids.size(), 4u);

    const std::vector<double> dup{2, 3, 2, 3, 2, 3};
    const auto one = kmeans(dup, 3, 2, 1, rng);
    EXPECT_EQ(one.centers[0], (std::vector<double>{2, 3}));
    EXPECT_THROW(kmeans(dup, 3, 2, 4, rng), std::invalid_argument);
}

TEST(Cosine, Examples) {
    const std::vector<double> g{0.3, -1.2, 4.0};
    EXPECT_DOUBLE_EQ(cosine_similarity(g, {-0.3, 1.2, -4.0}), -1.0);
    EXPECT_DOUBLE_EQ(cosine_similarity(g, g), 1.0);
    EXPECT_DOUBLE_EQ(cosine_similarity(g, {0, 0, 0}), 0.0);
}

TEST(Welch, TwoGroupExample) {
    const std::vector<double> a{27.5, 21.0, 19.0, 23.6, 17.0, 17.9, 16.9, 20.1, 21.9, 22.6, 23.1, 19.6, 19.0, 21.7, 21.4};
    const std::vector<double> b{27.1, 22.0, 20.8, 23.4, 23.4, 23.5, 25.8, 22.0, 24.8, 20.2, 21.9, 22.1, 22.9, 20.5, 24.4};
    const auto r = welch_t_test(a, b);
    EXPECT_NEAR(r.t, -2.455356398, 1e-8);
    EXPECT_NEAR(r.df, 24.98852929, 1e-6);
    EXPECT_NEAR(r.p_value, 1.0 - 0.021378001462866985 / 2, 1e-9);
    const auto flipped = welch_t_test(b, a);
    EXPECT_NEAR(flipped.p_value, 0.021378001462866985 / 2, 1e-9);
    EXPECT_THROW(welch_t_test({1.0}, b), std::invalid_argument);
}

TEST(ProjectionAri, IdentityAndZero) {
    SynthSpec s;
    s.dim = 8;
    s.concepts = 4;
    s.n_min = 40;
    s.n_max = 60;
    s.mix = 5.0;
    s.rule = Rule::parse("majority");
    s.n_train = 6;
    s.n_val = s.n_test = 0;
    const Dataset ds = generate_dataset(s);
    std::vector<double> eye(64, 0.0);
    for (std::size_t i = 0; i < 8; ++i) eye[i * 9] = 1.0;
    EXPECT_DOUBLE_EQ(projection_ari(ds.train, Tensor<double>({8, 8}, eye), 4, 0), 1.0);
    EXPECT_NEAR(projection_ari(ds.train, Tensor<double>::filled({8, 8}, 0.0), 4, 0), 0.0, 0.05);
}

namespace {

std::unique_ptr<MilModel<double>> linear_model(std::size_t d, std::uint64_t seed) {
    LayerOptions o;
    o.kind = LayerKind::linear;
    o.d_in = d;
    o.d_out = 8;
    Rng rng(child_seed(seed, "init"));
    return std::make_unique<MilModel<double>>(o.to_config(), AggregatorConfig{AggKind::mean, 8, 2, 8}, rng);
}

}  // namespace

TEST(Igi, DuplicatedInstancesHaveUnitIntraSimilarity) {
    Bag bag;
    bag.id = "dups";
    bag.n = 8;
    bag.d = 3;
    bag.label = 1;
    for (std::size_t i = 0; i < 8; ++i) {
        const float v = i % 2 ? 4.0f : -4.0f;
        bag.features.insert(bag.features.end(), {v, 1.0f, -v});
        bag.concepts.push_back(static_cast<std::uint16_t>(i % 2));
    }
    auto model = linear_model(3, 1);
    const auto r = igi_protocol(*model, {bag}, IgiOptions{IgiTarget::linear, 2, 10, 0});
    EXPECT_EQ(r.n_intra, 12u);
    EXPECT_EQ(r.n_inter, 16u);
    EXPECT_NEAR(r.intra_mean, 1.0, 1e-12);
    EXPECT_LT(r.inter_mean, 1.0);
    EXPECT_GE(r.test.p_value, 0.0);
    EXPECT_LE(r.test.p_value, 1.0);
}

TEST(Igi, ConflictingConceptsInterfereUnderALinearLayer) {
    const Dataset ds = generate_dataset(conflicting_label_spec(3, 4));
    auto model = linear_model(64, 3);
    const auto r = igi_protocol(*model, ds.train, IgiOptions{IgiTarget::linear, 2, 10, 3});
    EXPECT_GT(r.intra_mean, r.inter_mean);
    EXPECT_LT(r.test.p_value, 0.05);
}

TEST(Igi, TargetMustMatchLayer) {
    const Dataset ds = generate_dataset(conflicting_label_spec(0, 1));
    auto model = linear_model(64, 0);
    EXPECT_THROW(igi_protocol(*model, ds.train, IgiOptions{IgiTarget::multi_expert, 2, 5, 0}), ConfigError);
}

TEST(Igi, MultiExpertReportsPerExpertMeans) {
    const Dataset ds = generate_dataset(conflicting_label_spec(1, 2));
    LayerOptions o;
    o.d_in = 64;
    o.d_out = 16;
    o.heads = 2;
    o.part_dim = 4;
    o.experts = 4;
    o.slots = 1;
    Rng rng(child_seed(1, "init"));
    MilModel<double> model(o.to_config(), AggregatorConfig{AggKind::mean, 16, 2, 8}, rng);
    const auto r = igi_protocol(model, ds.train, IgiOptions{IgiTarget::multi_expert, 2, 6, 1});
    EXPECT_EQ(r.per_expert_mean.size(), 4u);
    EXPECT_GT(r.n_within_expert, 0u);
    EXPECT_GE(r.within_expert_mean, -1.0);
    EXPECT_LE(r.within_expert_mean, 1.0);
    EXPECT_TRUE(r.to_json().contains("p_value"));
}
