// Copyright (c) 2026 The mammoth-mil Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "mammoth/bench.hpp"
#include "mammoth/model.hpp"

using namespace mammoth;

namespace {

nlohmann::json mammoth_cfg(std::size_t e, std::size_t s, std::size_t h, std::size_t q) {
    MammothConfig c = MammothConfig::reference();
    c.experts = e;
    c.slots = s;
    c.heads = h;
    c.part_dim = 256 / h;
    c.rank = q;
    auto j = c.to_json();
    j["variant"] = "mammoth";
    return j;
}

}  // namespace

TEST(Macs, LinearIsNTimesDTimesDout) {
    LayerOptions o;
    o.kind = LayerKind::linear;
    EXPECT_EQ(count_macs(o.to_config(), 10000), 5'242'880'000ull);
    o.d_in = 7;
    o.d_out = 3;
    EXPECT_EQ(count_macs(o.to_config(), 11), 7u * 3 * 11);
}

TEST(Macs, MammothDefaultsBelowLinearAndInBand) {
    const auto m = count_macs(LayerOptions{}.to_config(), 10000);
    EXPECT_EQ(m, 4'007'157'760ull);
    EXPECT_LT(m, 5'242'880'000ull);
    EXPECT_GE(m, 2'000'000'000ull);
    EXPECT_LE(m, 4'500'000'000ull);
}

TEST(Macs, MammothHandCount) {
    // N=3, D=4, H=1, P=2, E=2, S=1, Q=1, D_out=2:
    // projection 3·4·2, scores 2·2·3, pooling 2·3·2, Φ 2·2·1, W_low 2·1·2
    MammothConfig c;
    c.d_in = 4;
    c.d_out = 2;
    c.heads = 1;
    c.part_dim = 2;
    c.experts = 2;
    c.slots = 1;
    c.rank = 1;
    auto j = c.to_json();
    j["variant"] = "mammoth";
    EXPECT_EQ(count_macs(j, 3), 24u + 12 + 12 + 4 + 4);
}

TEST(Macs, ZeroInstancesCostNothing) {
    for (auto kind : {LayerKind::linear, LayerKind::mammoth, LayerKind::soft_moe, LayerKind::sparse_softmax,
                      LayerKind::sparse_multihead}) {
        LayerOptions o;
        o.kind = kind;
        EXPECT_EQ(count_macs(o.to_config(), 0), 0u) << layer_tag(kind);
    }
}

TEST(Macs, MammothMonotoneInEachKnob) {
    const auto at = [](std::size_t n, std::size_t e, std::size_t s, std::size_t h, std::size_t q) {
        return count_macs(mammoth_cfg(e, s, h, q), n);
    };
    std::uint64_t prev = 0;
    for (std::size_t n : {1, 10, 100, 1000, 10000}) {
        EXPECT_GE(at(n, 30, 9, 16, 16), prev);
        prev = at(n, 30, 9, 16, 16);
    }
    prev = 0;
    for (std::size_t e : {1, 5, 10, 30, 60}) {
        EXPECT_GE(at(500, e, 9, 16, 16), prev);
        prev = at(500, e, 9, 16, 16);
    }
    prev = 0;
    for (std::size_t s : {1, 2, 9, 20}) {
        EXPECT_GE(at(500, 30, s, 16, 16), prev);
        prev = at(500, 30, s, 16, 16);
    }
    prev = 0;
    for (std::size_t h : {1, 2, 4, 8, 16}) {
        EXPECT_GE(at(500, 30, 9, h, 16), prev);
        prev = at(500, 30, 9, h, 16);
    }
    prev = 0;
    for (std::size_t q : {1, 4, 16, 64}) {
        EXPECT_GE(at(500, 30, 9, 16, q), prev);
        prev = at(500, 30, 9, 16, q);
    }
}

TEST(PeakBytes, GrowsWithN) {
    for (auto kind : {LayerKind::linear, LayerKind::mammoth, LayerKind::soft_moe, LayerKind::sparse_sinkhorn}) {
        LayerOptions o;
        o.kind = kind;
        const auto cfg = o.to_config();
        EXPECT_LT(peak_bytes(cfg, 100), peak_bytes(cfg, 1000)) << layer_tag(kind);
        EXPECT_GE(peak_bytes(cfg, 100), 4u * 100 * 1024);
    }
}

TEST(Latency, SingleTrialHasZeroStd) {
    Rng rng(1);
    LinearLayer<float> layer(LinearConfig{32, 16}, rng);
    const auto s = measure_latency(layer, 64, 1, 0, rng);
    EXPECT_EQ(s.trials, 1u);
    EXPECT_EQ(s.std_ms, 0.0);
    EXPECT_GT(s.mean_ms, 0.0);
    EXPECT_THROW(measure_latency(layer, 64, 0, 0, rng), ConfigError);
}

TEST(Latency, LinearScalesWithN) {
    Rng rng(2);
    LinearLayer<float> layer(LinearConfig{256, 128}, rng);
    const double base = measure_latency(layer, 2000, 15, 3, rng).mean_ms;
    const double twice = measure_latency(layer, 4000, 15, 3, rng).mean_ms;
    EXPECT_GE(twice / base, 1.5);
    EXPECT_LE(twice / base, 3.0);
}

TEST(CompareParams, BudgetFlags) {
    LayerOptions lin;
    lin.kind = LayerKind::linear;
    LayerOptions sparse;
    sparse.kind = LayerKind::sparse_softmax;
    LayerOptions five;
    five.experts = 5;
    const auto rows = compare_params({lin.to_config(), sparse.to_config(), five.to_config(), LayerOptions{}.to_config()});
    ASSERT_EQ(rows.size(), 4u);
    EXPECT_EQ(rows[0].params, 524'288u);
    EXPECT_FALSE(rows[0].over_budget);
    EXPECT_EQ(rows[1].params, 2'626'560u);
    EXPECT_TRUE(rows[1].over_budget);
    EXPECT_EQ(rows[2].experts, 5u);
    EXPECT_EQ(rows[3].params, 582'144u);
    for (std::size_t i : {2, 3}) EXPECT_LE(rows[i].params, 524'288u * 115 / 100);
}

TEST(BenchCsv, Header) {
    BenchResult r;
    r.variant = "linear";
    r.n = 10;
    const std::string csv = bench_csv({r});
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "variant,N,D,D_out,macs,latency_ms_mean,latency_ms_std,params,peak_bytes");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
}
