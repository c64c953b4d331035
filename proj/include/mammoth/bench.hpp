// Copyright (c) 2026 The mammoth-mil Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include <boost/random/normal_distribution.hpp>

#include "json.hpp"
#include "mammoth/model.hpp"

namespace mammoth {

/// Multiply-accumulates of every matrix product in one eval-mode forward
/// pass on an N-instance bag, routing and pooling products included.
/// Elementwise work (activations, norms, softmax) is not counted. Sparse
/// variants assume every token reaches its top-k experts.
inline std::uint64_t count_macs(const nlohmann::json& cfg, std::uint64_t n) {
    if (n == 0) return 0;
    switch (parse_layer_tag(cfg.at("variant").get<std::string>())) {
        case LayerKind::linear: {
            const auto c = LinearConfig::from_json(cfg);
            return n * c.d_in * c.d_out;
        }
        case LayerKind::mammoth: {
            const auto c = MammothConfig::from_json(cfg);
            const std::uint64_t s = c.slots_total(), p = c.part_dim, q = c.rank;
            const std::uint64_t per_head = s * p * n      // prototype scores
                                           + s * n * p    // weighted pooling
                                           + s * p * q    // shared Φ
                                           + s * q * c.head_out();  // W_low
            return n * c.d_in * c.mid_dim() + c.heads * per_head;
        }
        case LayerKind::soft_moe: {
            const auto c = SoftMoEConfig::from_json(cfg);
            const std::uint64_t s = c.slots_total();
            return n * c.d_in * s + s * n * c.d_in + s * c.d_in * c.d_out + n * s * c.d_out;
        }
        case LayerKind::sparse_softmax:
        case LayerKind::sparse_sinkhorn: {
            const auto c = SparseMoEConfig::from_json(cfg);
            return n * c.d_in * c.experts + n * c.top_k * c.d_in * c.d_out;
        }
        case LayerKind::sparse_multihead: {
            const auto c = SparseMultiheadConfig::from_json(cfg);
            const std::uint64_t tokens = n * c.heads, din = c.d_in / c.heads, dout = c.d_out / c.heads;
            const std::uint64_t hd = c.hidden_dim();
            return tokens * din * c.experts + tokens * c.top_k * (din * hd + hd * dout);
        }
    }
    return 0;
}

/// Bytes of the input plus every intermediate a forward pass materializes,
/// at 4 bytes per value. The graph keeps intermediates alive until the
/// output is released, so this is also the forward working set.
inline std::uint64_t peak_bytes(const nlohmann::json& cfg, std::uint64_t n) {
    std::uint64_t values = n * cfg.at("d_in").get<std::uint64_t>();
    switch (parse_layer_tag(cfg.at("variant").get<std::string>())) {
        case LayerKind::linear: {
            const auto c = LinearConfig::from_json(cfg);
            values += 2 * n * c.d_out;  // product, ReLU
            break;
        }
        case LayerKind::mammoth: {
            const auto c = MammothConfig::from_json(cfg);
            const std::uint64_t s = c.slots_total();
            values += 2 * n * c.mid_dim();  // projection, head slices
            values += c.heads * (2 * s * n + s * c.part_dim + s * c.rank + 3 * s * c.head_out());
            values += s * c.d_out;
            break;
        }
        case LayerKind::soft_moe: {
            const auto c = SoftMoEConfig::from_json(cfg);
            const std::uint64_t s = c.slots_total();
            values += 3 * n * s + s * c.d_in + 2 * s * c.d_out + n * c.d_out;
            break;
        }
        case LayerKind::sparse_softmax:
        case LayerKind::sparse_sinkhorn: {
            const auto c = SparseMoEConfig::from_json(cfg);
            values += 2 * n * c.experts + c.top_k * n * (c.d_in + 2 * c.d_out) + 2 * n * c.d_out;
            break;
        }
        case LayerKind::sparse_multihead: {
            const auto c = SparseMultiheadConfig::from_json(cfg);
            const std::uint64_t tokens = n * c.heads, hd = c.hidden_dim();
            values += n * c.d_in + 2 * tokens * c.experts +
                      c.top_k * tokens * (c.d_in / c.heads + 2 * hd + 2 * (c.d_out / c.heads)) + 2 * n * c.d_out;
            break;
        }
    }
    return values * 4;
}

struct LatencyStats {
    double mean_ms = 0.0;
    double std_ms = 0.0;
    std::size_t trials = 0;
};

/// Eval-mode forward timing on fresh N(0,1) inputs; warmup runs discarded.
/// std is the sample standard deviation (0 for a single trial).
template <typename T>
LatencyStats measure_latency(Layer<T>& layer, std::size_t n, std::size_t trials, std::size_t warmup, Rng& rng) {
    if (trials < 1) throw ConfigError("measure_latency: trials must be >= 1");
    NoGradGuard guard;
    boost::random::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t d = layer.in_dim();
    std::vector<double> samples;
    for (std::size_t t = 0; t < warmup + trials; ++t) {
        std::vector<T> v(n * d);
        for (auto& x : v) x = static_cast<T>(normal(rng));
        Tensor<T> input({n, d}, std::move(v));
        const auto start = std::chrono::steady_clock::now();
        Tensor<T> out = layer.forward(input, false, rng);
        const auto stop = std::chrono::steady_clock::now();
        if (t >= warmup) samples.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
    }
    LatencyStats s;
    s.trials = samples.size();
    for (double x : samples) s.mean_ms += x / static_cast<double>(samples.size());
    if (samples.size() > 1) {
        double ss = 0.0;
        for (double x : samples) ss += (x - s.mean_ms) * (x - s.mean_ms);
        s.std_ms = std::sqrt(ss / static_cast<double>(samples.size() - 1));
    }
    return s;
}

struct BenchResult {
    std::string variant;
    std::uint64_t n = 0, d = 0, d_out = 0;
    std::uint64_t macs = 0;
    double latency_ms_mean = 0.0, latency_ms_std = 0.0;
    std::uint64_t params = 0;
    std::uint64_t peak_bytes = 0;
};

inline std::string bench_csv(const std::vector<BenchResult>& rows) {
    std::ostringstream os;
    os.precision(10);
    os << "variant,N,D,D_out,macs,latency_ms_mean,latency_ms_std,params,peak_bytes\n";
    for (const auto& r : rows) {
        os << r.variant << ',' << r.n << ',' << r.d << ',' << r.d_out << ',' << r.macs << ',' << r.latency_ms_mean
           << ',' << r.latency_ms_std << ',' << r.params << ',' << r.peak_bytes << '\n';
    }
    return os.str();
}

struct ParamRow {
    std::string variant;
    std::size_t experts = 0;
    std::size_t params = 0;
    bool over_budget = false;  // exceeds the D·D_out linear count
};

/// Exact counts per layer config, flagged against the linear budget.
inline std::vector<ParamRow> compare_params(const std::vector<nlohmann::json>& configs) {
    std::vector<ParamRow> out;
    for (const auto& c : configs) {
        const std::size_t budget = c.at("d_in").get<std::size_t>() * c.at("d_out").get<std::size_t>();
        ParamRow r;
        r.variant = c.at("variant").get<std::string>();
        r.experts = c.value("experts", std::size_t{1});
        r.params = layer_param_count(c);
        r.over_budget = r.params > budget;
        out.push_back(r);
    }
    return out;
}

}  // namespace mammoth
