// Copyright (c) 2026 The mammoth-mil Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "mammoth/errors.hpp"
#include "mammoth/layer.hpp"
#include "mammoth/module.hpp"
#include "mammoth/ops.hpp"

namespace mammoth {

/// Largest rank Q that keeps the layer within the D·D_out budget of a dense
/// linear layer: floor((D·D_out - D·P·H) / (H·P + E·D_out)).
inline std::size_t solve_q(std::size_t d_in, std::size_t d_out, std::size_t part_dim, std::size_t heads,
                           std::size_t experts) {
    const long long budget = static_cast<long long>(d_in) * static_cast<long long>(d_out);
    const long long projection = static_cast<long long>(d_in) * static_cast<long long>(part_dim * heads);
    const long long residual = budget - projection;
    if (residual <= 0) {
        throw ConfigError("budget solver: need D*D_out > D*P*H, got " + std::to_string(budget) +
                          " <= " + std::to_string(projection));
    }
    const long long per_rank = static_cast<long long>(heads * part_dim + experts * d_out);
    const long long q = residual / per_rank;
    if (q < 1) {
        throw ConfigError("budget solver: need D*D_out - D*P*H >= H*P + E*D_out, got " + std::to_string(residual) +
                          " < " + std::to_string(per_rank));
    }
    return static_cast<std::size_t>(q);
}

/// max(floor(total / experts), 1).
inline std::size_t slots_per_expert(std::size_t total_slots, std::size_t experts) {
    if (total_slots < 1 || experts < 1) throw ConfigError("slots_per_expert: total slots and experts must be >= 1");
    return std::max<std::size_t>(total_slots / experts, 1);
}

struct MammothConfig {
    std::size_t d_in = 1024;
    std::size_t d_out = 512;
    std::size_t heads = 16;
    std::size_t part_dim = 16;  // P
    std::size_t rank = 16;      // Q
    std::size_t experts = 30;
    std::size_t slots = 9;  // per expert
    bool global_phi = false;
    double input_dropout = 0.1;
    double ff_dropout = 0.25;

    std::size_t mid_dim() const { return part_dim * heads; }
    std::size_t head_out() const { return d_out / heads; }
    std::size_t slots_total() const { return experts * slots; }

    void validate() const {
        if (d_in < 1 || d_out < 1 || heads < 1 || part_dim < 1 || rank < 1 || experts < 1 || slots < 1) {
            throw ConfigError("mammoth: all dimensions must be >= 1");
        }
        if (d_out % heads != 0) {
            throw ConfigError("mammoth: D_out (" + std::to_string(d_out) + ") must be divisible by H (" +
                              std::to_string(heads) + ")");
        }
    }

    /// Q from the budget solver.
    static MammothConfig with_budget(std::size_t d_in, std::size_t d_out, std::size_t heads, std::size_t part_dim,
                                     std::size_t experts, std::size_t slots) {
        MammothConfig c;
        c.d_in = d_in;
        c.d_out = d_out;
        c.heads = heads;
        c.part_dim = part_dim;
        c.experts = experts;
        c.slots = slots;
        c.rank = solve_q(d_in, d_out, part_dim, heads, experts);
        c.validate();
        return c;
    }

    /// E=30, H=16, S=9, P=256/H, D=1024, D_out=512, Q from the solver (16).
    static MammothConfig reference() { return with_budget(1024, 512, 16, 256 / 16, 30, 9); }

    /// Exact trainable scalar count.
    std::size_t param_count() const {
        const std::size_t phis = global_phi ? 1 : heads;
        return mid_dim() * d_in                             // W
               + heads * slots_total() * part_dim            // prototypes
               + phis * rank * part_dim                      // Phi
               + heads * experts * head_out() * rank         // W_low
               + 2 * d_out;                                  // LayerNorm affines
    }

    /// The terms the budget solver accounts for (W, Phi, W_low).
    std::size_t budget_param_count() const {
        const std::size_t phis = global_phi ? 1 : heads;
        return mid_dim() * d_in + phis * rank * part_dim + heads * experts * head_out() * rank;
    }

    nlohmann::json to_json() const {
        return {{"d_in", d_in},         {"d_out", d_out},        {"heads", heads},
                {"part_dim", part_dim}, {"rank", rank},          {"experts", experts},
                {"slots", slots},       {"global_phi", global_phi}, {"input_dropout", input_dropout},
                {"ff_dropout", ff_dropout}};
    }

    static MammothConfig from_json(const nlohmann::json& j) {
        MammothConfig c;
        c.d_in = j.at("d_in");
        c.d_out = j.at("d_out");
        c.heads = j.at("heads");
        c.part_dim = j.at("part_dim");
        c.rank = j.at("rank");
        c.experts = j.at("experts");
        c.slots = j.at("slots");
        c.global_phi = j.value("global_phi", false);
        c.input_dropout = j.value("input_dropout", 0.1);
        c.ff_dropout = j.value("ff_dropout", 0.25);
        c.validate();
        return c;
    }
};

/// Dispatch weights of one bag: alpha(h, k, j, i) for head h, expert k,
/// slot j, instance i. Each (h, k, j) row is a softmax over instances.
struct RoutingRecord {
    std::string bag_id;
    std::size_t heads = 0, experts = 0, slots = 0, n = 0;
    std::vector<double> alpha;  // [heads][experts*slots][n]

    double at(std::size_t h, std::size_t k, std::size_t j, std::size_t i) const {
        return alpha[((h * experts + k) * slots + j) * n + i];
    }

    double head_mean(std::size_t k, std::size_t j, std::size_t i) const {
        double s = 0.0;
        for (std::size_t h = 0; h < heads; ++h) s += at(h, k, j, i);
        return s / static_cast<double>(heads);
    }

    /// Expert receiving the largest head-averaged dispatch weight of instance i.
    std::size_t argmax_expert(std::size_t i) const {
        std::size_t best = 0;
        double best_w = -1.0;
        for (std::size_t k = 0; k < experts; ++k)
            for (std::size_t j = 0; j < slots; ++j)
                if (const double w = head_mean(k, j, i); w > best_w) {
                    best_w = w;
                    best = k;
                }
        return best;
    }
};

inline void write_routing_csv(std::ostream& os, const RoutingRecord& r, bool header = true) {
    if (header) os << "bag_id,head,expert,slot,instance,alpha\n";
    os.precision(9);
    for (std::size_t h = 0; h < r.heads; ++h)
        for (std::size_t k = 0; k < r.experts; ++k)
            for (std::size_t j = 0; j < r.slots; ++j)
                for (std::size_t i = 0; i < r.n; ++i)
                    os << r.bag_id << ',' << h << ',' << k << ',' << j << ',' << i << ',' << r.at(h, k, j, i) << '\n';
}

inline void write_routing_mean_csv(std::ostream& os, const RoutingRecord& r, bool header = true) {
    if (header) os << "bag_id,expert,slot,instance,alpha_mean\n";
    os.precision(9);
    for (std::size_t k = 0; k < r.experts; ++k)
        for (std::size_t j = 0; j < r.slots; ++j)
            for (std::size_t i = 0; i < r.n; ++i)
                os << r.bag_id << ',' << k << ',' << j << ',' << i << ',' << r.head_mean(k, j, i) << '\n';
}

template <typename T>
struct RoutedSlots {
    Tensor<T> alpha;  // S_tot×N
    Tensor<T> pooled;  // S_tot×P
};

template <typename T>
struct MammothOutput {
    Tensor<T> slots;                // (E·S)×D_out
    std::vector<Tensor<T>> pooled;  // per head (E·S)×P
    std::vector<Tensor<T>> alpha;   // per head (E·S)×N
    std::size_t experts = 0, slots_per_expert = 0;

    RoutingRecord routing(std::string bag_id = {}) const {
        RoutingRecord r;
        r.bag_id = std::move(bag_id);
        r.heads = alpha.size();
        r.experts = experts;
        r.slots = slots_per_expert;
        r.n = alpha.front().cols();
        r.alpha.reserve(r.heads * alpha.front().numel());
        for (const auto& a : alpha) r.alpha.insert(r.alpha.end(), a.data().begin(), a.data().end());
        return r;
    }
};

/// Softmax over instances of prototype·instance scores, then the
/// score-weighted average of instances per slot.
template <typename T>
RoutedSlots<T> route_and_pool(const Tensor<T>& xh, const Tensor<T>& prototypes) {
    if (xh.rows() == 0) throw EmptyBagError();
    Tensor<T> scores = matmul_nt(prototypes, xh);  // S_tot×N
    Tensor<T> alpha = softmax(scores, 1);
    Tensor<T> pooled = matmul(alpha, xh);
    return {std::move(alpha), std::move(pooled)};
}

/// Multi-head soft mixture of low-rank experts over slot-pooled instances.
template <typename T>
class MammothLayer final : public Layer<T> {
public:
    MammothLayer(MammothConfig config, Rng& rng) : cfg_(std::move(config)) {
        cfg_.validate();
        const std::size_t p = cfg_.part_dim, q = cfg_.rank, dh = cfg_.head_out();
        w_ = init::kaiming_uniform<T>({cfg_.mid_dim(), cfg_.d_in}, cfg_.d_in, rng);
        const double proto_std = 1.0 / std::sqrt(static_cast<double>(p));
        for (std::size_t h = 0; h < cfg_.heads; ++h) {
            prototypes_.push_back(init::gaussian<T>({cfg_.slots_total(), p}, proto_std, rng));
            if (!cfg_.global_phi || h == 0) phi_.push_back(init::kaiming_uniform<T>({q, p}, p, rng));
            std::vector<Tensor<T>> experts;
            for (std::size_t k = 0; k < cfg_.experts; ++k) experts.push_back(init::kaiming_uniform<T>({dh, q}, q, rng));
            w_low_.push_back(std::move(experts));
            ln_gamma_.push_back(init::constant<T>({1, dh}, T(1)));
            ln_beta_.push_back(init::constant<T>({1, dh}, T(0)));
        }
    }

    const MammothConfig& cfg() const { return cfg_; }
    LayerKind kind() const override { return LayerKind::mammoth; }
    std::size_t in_dim() const override { return cfg_.d_in; }
    std::size_t out_dim() const override { return cfg_.d_out; }
    nlohmann::json config() const override { return cfg_.to_json(); }

    std::vector<NamedParam<T>> parameters() const override {
        std::vector<NamedParam<T>> out{{"W", w_}};
        for (std::size_t h = 0; h < cfg_.heads; ++h) {
            const std::string hp = "head" + std::to_string(h) + ".";
            out.push_back({hp + "prototypes", prototypes_[h]});
            if (!cfg_.global_phi) out.push_back({hp + "phi", phi_[h]});
            for (std::size_t k = 0; k < cfg_.experts; ++k)
                out.push_back({hp + "expert" + std::to_string(k) + ".w_low", w_low_[h][k]});
            out.push_back({hp + "ln_gamma", ln_gamma_[h]});
            out.push_back({hp + "ln_beta", ln_beta_[h]});
        }
        if (cfg_.global_phi) out.push_back({"phi", phi_[0]});
        return out;
    }

    Tensor<T>& projection() { return w_; }
    Tensor<T>& prototypes(std::size_t h) { return prototypes_.at(h); }
    Tensor<T>& phi(std::size_t h) { return phi_.at(cfg_.global_phi ? 0 : h); }
    Tensor<T>& w_low(std::size_t h, std::size_t k) { return w_low_.at(h).at(k); }
    Tensor<T>& ln_gamma(std::size_t h) { return ln_gamma_.at(h); }
    Tensor<T>& ln_beta(std::size_t h) { return ln_beta_.at(h); }

    /// x·Wᵀ split into H consecutive column blocks of width P. N = 0 yields
    /// H empty blocks.
    std::vector<Tensor<T>> project_and_partition(const Tensor<T>& x) const {
        if (x.rank() != 2 || x.cols() != cfg_.d_in) {
            throw DimensionError("mammoth: input must be Nx" + std::to_string(cfg_.d_in) + ", got " +
                                 shape_str(x.shape()));
        }
        Tensor<T> y = matmul_nt(x, w_);
        std::vector<Tensor<T>> parts;
        for (std::size_t h = 0; h < cfg_.heads; ++h) parts.push_back(slice_columns(y, h * cfg_.part_dim, cfg_.part_dim));
        return parts;
    }

    /// LayerNorm(ReLU(W_low^(k) · Φ · u)) for every slot row u; rows
    /// [k·S, (k+1)·S) belong to expert k.
    Tensor<T> expert_transform(const Tensor<T>& u, std::size_t h, bool training, Rng& rng) const {
        Tensor<T> shared = matmul_nt(u, phi_[cfg_.global_phi ? 0 : h]);  // S_tot×Q
        std::vector<Tensor<T>> per_expert;
        per_expert.reserve(cfg_.experts);
        for (std::size_t k = 0; k < cfg_.experts; ++k) {
            Tensor<T> rows = cfg_.experts == 1 ? shared : slice_rows(shared, k * cfg_.slots, cfg_.slots);
            per_expert.push_back(matmul_nt(rows, w_low_[h][k]));
        }
        Tensor<T> z = per_expert.size() == 1 ? per_expert.front() : concat_rows(per_expert);
        z = layer_norm(relu(z), ln_gamma_[h], ln_beta_[h]);
        return dropout(z, cfg_.ff_dropout, training, rng);
    }

    MammothOutput<T> forward_full(const Tensor<T>& x, bool training, Rng& rng) const {
        if (x.rank() == 2 && x.rows() == 0) throw EmptyBagError();
        Tensor<T> xin = dropout(x, cfg_.input_dropout, training, rng);
        auto parts = project_and_partition(xin);
        MammothOutput<T> out;
        out.experts = cfg_.experts;
        out.slots_per_expert = cfg_.slots;
        std::vector<Tensor<T>> z_heads;
        for (std::size_t h = 0; h < cfg_.heads; ++h) {
            auto routed = route_and_pool(parts[h], prototypes_[h]);
            z_heads.push_back(expert_transform(routed.pooled, h, training, rng));
            out.alpha.push_back(std::move(routed.alpha));
            out.pooled.push_back(std::move(routed.pooled));
        }
        out.slots = z_heads.size() == 1 ? z_heads.front() : concat_last_axis(z_heads);
        return out;
    }

    Tensor<T> forward(const Tensor<T>& x, bool training, Rng& rng) override {
        return forward_full(x, training, rng).slots;
    }

private:
    MammothConfig cfg_;
    Tensor<T> w_;
    std::vector<Tensor<T>> prototypes_;
    std::vector<Tensor<T>> phi_;
    std::vector<std::vector<Tensor<T>>> w_low_;
    std::vector<Tensor<T>> ln_gamma_;
    std::vector<Tensor<T>> ln_beta_;
};

}  // namespace mammoth
