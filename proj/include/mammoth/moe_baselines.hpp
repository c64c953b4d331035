// Copyright (c) 2026 The mammoth-mil Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "mammoth/errors.hpp"
#include "mammoth/layer.hpp"
#include "mammoth/module.hpp"
#include "mammoth/ops.hpp"

namespace mammoth {

// ---------------------------------------------------------------------------
// Baseline linear layer: ReLU(x·Wᵀ)

struct LinearConfig {
    std::size_t d_in = 1024;
    std::size_t d_out = 512;

    std::size_t param_count() const { return d_in * d_out; }
    nlohmann::json to_json() const { return {{"d_in", d_in}, {"d_out", d_out}}; }
    static LinearConfig from_json(const nlohmann::json& j) { return {j.at("d_in"), j.at("d_out")}; }
};

template <typename T>
class LinearLayer final : public Layer<T> {
public:
    LinearLayer(LinearConfig cfg, Rng& rng)
        : cfg_(cfg), w_(init::kaiming_uniform<T>({cfg.d_out, cfg.d_in}, cfg.d_in, rng)) {}

    LayerKind kind() const override { return LayerKind::linear; }
    std::size_t in_dim() const override { return cfg_.d_in; }
    std::size_t out_dim() const override { return cfg_.d_out; }
    nlohmann::json config() const override { return cfg_.to_json(); }
    std::vector<NamedParam<T>> parameters() const override { return {{"W", w_}}; }

    Tensor<T>& weight() { return w_; }

    Tensor<T> forward(const Tensor<T>& x, bool, Rng&) override { return relu(matmul_nt(x, w_)); }

private:
    LinearConfig cfg_;
    Tensor<T> w_;
};

// ---------------------------------------------------------------------------
// Sparse routing

/// Alternating row/column normalization of exp(logits) for `iters` rounds,
/// then a final row normalization. Differentiable.
template <typename T>
Tensor<T> sinkhorn_gate(const Tensor<T>& logits, std::size_t iters) {
    if (iters < 1) throw ConfigError("sinkhorn_gate: iters must be >= 1");
    Tensor<T> a = softmax(logits, 1);  // first row normalization of exp(logits)
    for (std::size_t t = 0; t < iters; ++t) {
        if (t > 0) a = normalize(a, 1);
        a = normalize(a, 0);
    }
    return normalize(a, 1);
}

inline std::size_t expert_capacity(double capacity_factor, std::size_t tokens, std::size_t k, std::size_t experts) {
    return static_cast<std::size_t>(
        std::ceil(capacity_factor * static_cast<double>(tokens * k) / static_cast<double>(experts)));
}

template <typename T>
struct TopKRoute {
    Tensor<T> weights;                               // N×E, zero where unselected or dropped
    std::vector<std::vector<std::size_t>> assigned;  // per expert, kept tokens in priority order
    std::vector<std::vector<std::size_t>> dropped;   // per expert, over-capacity tokens
    std::size_t capacity = 0;
};

/// Top-k expert selection over router probabilities (ties: lower expert
/// index), per-expert capacity ceil(cf·N·k/E) filled in descending
/// probability order (ties: lower token index). Combination weights are the
/// selected probabilities renormalized per token, then zeroed where dropped.
template <typename T>
TopKRoute<T> route_top_k(const Tensor<T>& probs, std::size_t k, double capacity_factor) {
    const std::size_t n = probs.rows(), e = probs.cols();
    if (k < 1 || k > e) throw ConfigError("route_top_k: need 1 <= k <= E");
    const auto p = probs.data();
    std::vector<T> select(n * e, T(0));
    std::vector<std::vector<std::size_t>> candidates(e);
    std::vector<std::size_t> order(e);
    for (std::size_t i = 0; i < n; ++i) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return p[i * e + a] > p[i * e + b]; });
        for (std::size_t r = 0; r < k; ++r) {
            select[i * e + order[r]] = T(1);
            candidates[order[r]].push_back(i);
        }
    }
    TopKRoute<T> route;
    route.capacity = expert_capacity(capacity_factor, n, k, e);
    route.assigned.resize(e);
    route.dropped.resize(e);
    std::vector<T> keep(n * e, T(0));
    for (std::size_t x = 0; x < e; ++x) {
        auto& c = candidates[x];
        std::stable_sort(c.begin(), c.end(), [&](std::size_t a, std::size_t b) { return p[a * e + x] > p[b * e + x]; });
        for (std::size_t r = 0; r < c.size(); ++r) {
            if (r < route.capacity) {
                route.assigned[x].push_back(c[r]);
                keep[c[r] * e + x] = T(1);
            } else {
                route.dropped[x].push_back(c[r]);
            }
        }
    }
    const Tensor<T> select_mask({n, e}, std::move(select));
    const Tensor<T> keep_mask({n, e}, std::move(keep));
    route.weights = mul(normalize(mul(probs, select_mask), 1), keep_mask);
    return route;
}

/// Σ_e scatter(w[:, e] ⊙ expert_e(x[assigned_e])) over experts; tokens
/// dropped by every selected expert get a zero row.
template <typename T, typename ExpertFn>
Tensor<T> combine_experts(const Tensor<T>& x, const TopKRoute<T>& route, std::size_t out_dim, ExpertFn&& expert) {
    const std::size_t n = x.rows();
    Tensor<T> acc;
    for (std::size_t e = 0; e < route.assigned.size(); ++e) {
        const auto& idx = route.assigned[e];
        if (idx.empty()) continue;
        Tensor<T> ye = expert(e, gather_rows(x, idx));
        Tensor<T> we = gather_entries(route.weights, idx, std::vector<std::size_t>(idx.size(), e));
        Tensor<T> contrib = scatter_rows(scale_rows(ye, we), idx, n);
        acc = acc.defined() ? add(acc, contrib) : contrib;
    }
    return acc.defined() ? acc : Tensor<T>({n, out_dim});
}

// ---------------------------------------------------------------------------
// Sparse MoE with softmax or Sinkhorn gating; experts are ReLU(W_e x).

enum class Gating { softmax, sinkhorn };

struct SparseMoEConfig {
    std::size_t d_in = 1024;
    std::size_t d_out = 512;
    std::size_t experts = 5;
    std::size_t top_k = 2;
    double capacity_train = 1.25;
    double capacity_eval = 2.0;
    Gating gating = Gating::softmax;
    std::size_t sinkhorn_iters = 3;

    std::size_t param_count() const { return experts * d_in * d_out + experts * d_in; }

    nlohmann::json to_json() const {
        return {{"d_in", d_in},
                {"d_out", d_out},
                {"experts", experts},
                {"top_k", top_k},
                {"capacity_train", capacity_train},
                {"capacity_eval", capacity_eval},
                {"gating", gating == Gating::softmax ? "softmax" : "sinkhorn"},
                {"sinkhorn_iters", sinkhorn_iters}};
    }

    static SparseMoEConfig from_json(const nlohmann::json& j) {
        SparseMoEConfig c;
        c.d_in = j.at("d_in");
        c.d_out = j.at("d_out");
        c.experts = j.at("experts");
        c.top_k = j.at("top_k");
        c.capacity_train = j.at("capacity_train");
        c.capacity_eval = j.at("capacity_eval");
        c.gating = j.at("gating") == "softmax" ? Gating::softmax : Gating::sinkhorn;
        c.sinkhorn_iters = j.at("sinkhorn_iters");
        return c;
    }
};

template <typename T>
class SparseMoE final : public Layer<T> {
public:
    SparseMoE(SparseMoEConfig cfg, Rng& rng) : cfg_(cfg) {
        if (cfg_.top_k < 1 || cfg_.top_k > cfg_.experts) throw ConfigError("sparse moe: need 1 <= k <= E");
        gate_ = init::kaiming_uniform<T>({cfg_.experts, cfg_.d_in}, cfg_.d_in, rng);
        for (std::size_t e = 0; e < cfg_.experts; ++e)
            experts_.push_back(init::kaiming_uniform<T>({cfg_.d_out, cfg_.d_in}, cfg_.d_in, rng));
    }

    const SparseMoEConfig& cfg() const { return cfg_; }
    LayerKind kind() const override {
        return cfg_.gating == Gating::softmax ? LayerKind::sparse_softmax : LayerKind::sparse_sinkhorn;
    }
    std::size_t in_dim() const override { return cfg_.d_in; }
    std::size_t out_dim() const override { return cfg_.d_out; }
    nlohmann::json config() const override { return cfg_.to_json(); }

    std::vector<NamedParam<T>> parameters() const override {
        std::vector<NamedParam<T>> out{{"gate", gate_}};
        for (std::size_t e = 0; e < experts_.size(); ++e) out.push_back({"expert" + std::to_string(e) + ".W", experts_[e]});
        return out;
    }

    Tensor<T>& gate() { return gate_; }
    Tensor<T>& expert(std::size_t e) { return experts_.at(e); }

    Tensor<T> router_probs(const Tensor<T>& x) const {
        Tensor<T> logits = matmul_nt(x, gate_);
        return cfg_.gating == Gating::softmax ? softmax(logits, 1) : sinkhorn_gate(logits, cfg_.sinkhorn_iters);
    }

    TopKRoute<T> route(const Tensor<T>& x, bool training) const {
        return route_top_k(router_probs(x), cfg_.top_k, training ? cfg_.capacity_train : cfg_.capacity_eval);
    }

    Tensor<T> forward(const Tensor<T>& x, bool training, Rng&) override {
        if (x.rows() == 0) throw EmptyBagError();
        const auto r = route(x, training);
        return combine_experts(x, r, cfg_.d_out,
                               [this](std::size_t e, const Tensor<T>& xe) { return relu(matmul_nt(xe, experts_[e])); });
    }

private:
    SparseMoEConfig cfg_;
    Tensor<T> gate_;
    std::vector<Tensor<T>> experts_;
};

// ---------------------------------------------------------------------------
// Sparse multi-head MoE: instances split into H sub-tokens routed through a
// shared pool of two-layer experts.

struct SparseMultiheadConfig {
    std::size_t d_in = 1024;
    std::size_t d_out = 512;
    std::size_t heads = 16;
    std::size_t experts = 5;
    std::size_t top_k = 2;
    std::size_t hidden = 0;  // 0: floor(H·D·D_out / (D + D_out))
    double capacity_train = 1.25;
    double capacity_eval = 2.0;

    static std::size_t default_hidden(std::size_t d_in, std::size_t d_out, std::size_t heads) {
        return heads * d_in * d_out / (d_in + d_out);
    }

    std::size_t hidden_dim() const { return hidden ? hidden : default_hidden(d_in, d_out, heads); }

    void validate() const {
        if (heads < 1 || d_in % heads != 0 || d_out % heads != 0) {
            throw ConfigError("sparse multihead moe: D (" + std::to_string(d_in) + ") and D_out (" +
                              std::to_string(d_out) + ") must be divisible by H (" + std::to_string(heads) + ")");
        }
        if (top_k < 1 || top_k > experts) throw ConfigError("sparse multihead moe: need 1 <= k <= E");
    }

    std::size_t param_count() const {
        const std::size_t hd = hidden_dim();
        return experts * (d_in / heads) + experts * (hd * (d_in / heads) + (d_out / heads) * hd);
    }

    nlohmann::json to_json() const {
        return {{"d_in", d_in},       {"d_out", d_out},   {"heads", heads},
                {"experts", experts}, {"top_k", top_k},   {"hidden", hidden_dim()},
                {"capacity_train", capacity_train}, {"capacity_eval", capacity_eval}};
    }

    static SparseMultiheadConfig from_json(const nlohmann::json& j) {
        SparseMultiheadConfig c;
        c.d_in = j.at("d_in");
        c.d_out = j.at("d_out");
        c.heads = j.at("heads");
        c.experts = j.at("experts");
        c.top_k = j.at("top_k");
        c.hidden = j.at("hidden");
        c.capacity_train = j.at("capacity_train");
        c.capacity_eval = j.at("capacity_eval");
        return c;
    }
};

template <typename T>
class SparseMultiheadMoE final : public Layer<T> {
public:
    SparseMultiheadMoE(SparseMultiheadConfig cfg, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        const std::size_t din = cfg_.d_in / cfg_.heads, dout = cfg_.d_out / cfg_.heads, hd = cfg_.hidden_dim();
        gate_ = init::kaiming_uniform<T>({cfg_.experts, din}, din, rng);
        for (std::size_t e = 0; e < cfg_.experts; ++e) {
            w1_.push_back(init::kaiming_uniform<T>({hd, din}, din, rng));
            w2_.push_back(init::kaiming_uniform<T>({dout, hd}, hd, rng));
        }
    }

    const SparseMultiheadConfig& cfg() const { return cfg_; }
    LayerKind kind() const override { return LayerKind::sparse_multihead; }
    std::size_t in_dim() const override { return cfg_.d_in; }
    std::size_t out_dim() const override { return cfg_.d_out; }
    nlohmann::json config() const override { return cfg_.to_json(); }

    std::vector<NamedParam<T>> parameters() const override {
        std::vector<NamedParam<T>> out{{"gate", gate_}};
        for (std::size_t e = 0; e < w1_.size(); ++e) {
            out.push_back({"expert" + std::to_string(e) + ".W1", w1_[e]});
            out.push_back({"expert" + std::to_string(e) + ".W2", w2_[e]});
        }
        return out;
    }

    Tensor<T> forward(const Tensor<T>& x, bool training, Rng&) override {
        if (x.rows() == 0) throw EmptyBagError();
        if (x.cols() != cfg_.d_in) throw DimensionError("sparse_mh: input must have D columns");
        const std::size_t n = x.rows(), h = cfg_.heads;
        Tensor<T> tokens = reshape(x, {n * h, cfg_.d_in / h});
        const auto r = route_top_k(softmax(matmul_nt(tokens, gate_), 1), cfg_.top_k,
                                   training ? cfg_.capacity_train : cfg_.capacity_eval);
        Tensor<T> y = combine_experts(tokens, r, cfg_.d_out / h, [this](std::size_t e, const Tensor<T>& xe) {
            return matmul_nt(relu(matmul_nt(xe, w1_[e])), w2_[e]);
        });
        return reshape(y, {n, cfg_.d_out});
    }

private:
    SparseMultiheadConfig cfg_;
    Tensor<T> gate_;
    std::vector<Tensor<T>> w1_, w2_;
};

// ---------------------------------------------------------------------------
// Soft MoE with per-instance (patch) outputs.

struct SoftMoEConfig {
    std::size_t d_in = 1024;
    std::size_t d_out = 512;
    std::size_t experts = 5;
    std::size_t slots = 40;  // per expert; 200 total at E=5

    std::size_t slots_total() const { return experts * slots; }
    std::size_t param_count() const { return experts * d_in * d_out + slots_total() * d_in; }

    nlohmann::json to_json() const {
        return {{"d_in", d_in}, {"d_out", d_out}, {"experts", experts}, {"slots", slots}};
    }
    static SoftMoEConfig from_json(const nlohmann::json& j) {
        return {j.at("d_in"), j.at("d_out"), j.at("experts"), j.at("slots")};
    }
};

template <typename T>
struct SoftMoEOutput {
    Tensor<T> out;       // N×D_out
    Tensor<T> dispatch;  // N×S_tot, columns sum to 1
    Tensor<T> combine;   // N×S_tot, rows sum to 1
};

template <typename T>
class SoftMoE final : public Layer<T> {
public:
    SoftMoE(SoftMoEConfig cfg, Rng& rng) : cfg_(cfg) {
        if (cfg_.slots_total() < 1) throw ConfigError("soft moe: need at least one slot");
        slots_ = init::gaussian<T>({cfg_.slots_total(), cfg_.d_in}, 1.0 / std::sqrt(static_cast<double>(cfg_.d_in)), rng);
        for (std::size_t e = 0; e < cfg_.experts; ++e)
            experts_.push_back(init::kaiming_uniform<T>({cfg_.d_out, cfg_.d_in}, cfg_.d_in, rng));
    }

    const SoftMoEConfig& cfg() const { return cfg_; }
    LayerKind kind() const override { return LayerKind::soft_moe; }
    std::size_t in_dim() const override { return cfg_.d_in; }
    std::size_t out_dim() const override { return cfg_.d_out; }
    nlohmann::json config() const override { return cfg_.to_json(); }

    std::vector<NamedParam<T>> parameters() const override {
        std::vector<NamedParam<T>> out{{"slots", slots_}};
        for (std::size_t e = 0; e < experts_.size(); ++e) out.push_back({"expert" + std::to_string(e) + ".W", experts_[e]});
        return out;
    }

    Tensor<T>& slot_prototypes() { return slots_; }
    Tensor<T>& expert(std::size_t e) { return experts_.at(e); }

    SoftMoEOutput<T> forward_full(const Tensor<T>& x) const {
        if (x.rows() == 0) throw EmptyBagError();
        Tensor<T> logits = matmul_nt(x, slots_);  // N×S_tot
        Tensor<T> dispatch = softmax(logits, 0);
        Tensor<T> slot_inputs = matmul(transpose(dispatch), x);  // S_tot×D
        std::vector<Tensor<T>> z;
        for (std::size_t e = 0; e < cfg_.experts; ++e) {
            Tensor<T> rows = cfg_.experts == 1 ? slot_inputs : slice_rows(slot_inputs, e * cfg_.slots, cfg_.slots);
            z.push_back(relu(matmul_nt(rows, experts_[e])));
        }
        Tensor<T> slot_out = z.size() == 1 ? z.front() : concat_rows(z);
        Tensor<T> combine = softmax(logits, 1);
        return {matmul(combine, slot_out), std::move(dispatch), std::move(combine)};
    }

    Tensor<T> forward(const Tensor<T>& x, bool, Rng&) override { return forward_full(x).out; }

private:
    SoftMoEConfig cfg_;
    Tensor<T> slots_;
    std::vector<Tensor<T>> experts_;
};

}  // namespace mammoth
