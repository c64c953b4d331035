// Copyright (c) 2026 The mammoth-mil Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "mammoth/errors.hpp"
#include "mammoth/module.hpp"
#include "mammoth/ops.hpp"

namespace mammoth {

enum class AggKind { mean, max, abmil };

inline std::string_view agg_tag(AggKind k) {
    switch (k) {
        case AggKind::mean: return "mean";
        case AggKind::max: return "max";
        case AggKind::abmil: return "abmil";
    }
    return "unknown";
}

inline AggKind parse_agg_tag(std::string_view tag) {
    if (tag == "mean") return AggKind::mean;
    if (tag == "max") return AggKind::max;
    if (tag == "abmil") return AggKind::abmil;
    throw ConfigError("unknown aggregator '" + std::string(tag) + "' (expected mean|max|abmil)");
}

struct AggregatorConfig {
    AggKind kind = AggKind::mean;
    std::size_t embed_dim = 512;
    std::size_t num_classes = 2;
    std::size_t attn_dim = 256;  // ABMIL only

    void validate() const {
        if (num_classes < 2) throw ConfigError("aggregator: need at least 2 classes");
        if (embed_dim < 1 || attn_dim < 1) throw ConfigError("aggregator: dimensions must be >= 1");
    }

    nlohmann::json to_json() const {
        return {{"kind", agg_tag(kind)}, {"embed_dim", embed_dim}, {"num_classes", num_classes}, {"attn_dim", attn_dim}};
    }
    static AggregatorConfig from_json(const nlohmann::json& j) {
        AggregatorConfig c{parse_agg_tag(j.at("kind").get<std::string>()), j.at("embed_dim"), j.at("num_classes"),
                           j.at("attn_dim")};
        c.validate();
        return c;
    }
};

template <typename T>
struct AggOutput {
    Tensor<T> logits;     // 1×C
    Tensor<T> attention;  // M×1, ABMIL only
    std::size_t selected_row = 0;  // MaxMIL only
};

namespace detail {
template <typename T>
void require_nonempty(const Tensor<T>& z) {
    if (z.rank() != 2 || z.rows() == 0) throw EmptyBagError();
}
}  // namespace detail

template <typename T>
Tensor<T> mean_pool_classify(const Tensor<T>& z, const Tensor<T>& head, const Tensor<T>& bias) {
    detail::require_nonempty(z);
    return add(matmul_nt(reduce_mean(z, 0), head), bias);
}

/// Logits of the row holding the globally largest logit (ties: lowest row).
template <typename T>
AggOutput<T> max_pool_classify(const Tensor<T>& z, const Tensor<T>& head, const Tensor<T>& bias) {
    detail::require_nonempty(z);
    Tensor<T> row_logits = add_row(matmul_nt(z, head), bias);
    const std::size_t c = row_logits.cols();
    const auto v = row_logits.data();
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    AggOutput<T> out;
    out.selected_row = best / c;
    out.logits = select_row(row_logits, out.selected_row);
    return out;
}

/// Gated attention: a ∝ exp(wᵀ(tanh(V z) ⊙ sigmoid(U z))) over rows.
template <typename T>
AggOutput<T> abmil_classify(const Tensor<T>& z, const Tensor<T>& v, const Tensor<T>& u, const Tensor<T>& w,
                            const Tensor<T>& head, const Tensor<T>& bias) {
    detail::require_nonempty(z);
    Tensor<T> gated = mul(tanh(matmul_nt(z, v)), sigmoid(matmul_nt(z, u)));
    Tensor<T> attention = softmax(matmul_nt(gated, w), 0);  // M×1
    Tensor<T> pooled = matmul(transpose(attention), z);      // 1×D
    AggOutput<T> out;
    out.logits = add(matmul_nt(pooled, head), bias);
    out.attention = std::move(attention);
    return out;
}

/// Aggregator plus linear classifier (zero-initialized bias).
template <typename T>
class MilHead final : public Module<T> {
public:
    MilHead(AggregatorConfig cfg, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        head_ = init::kaiming_uniform<T>({cfg_.num_classes, cfg_.embed_dim}, cfg_.embed_dim, rng);
        bias_ = init::constant<T>({1, cfg_.num_classes}, T(0));
        if (cfg_.kind == AggKind::abmil) {
            v_ = init::kaiming_uniform<T>({cfg_.attn_dim, cfg_.embed_dim}, cfg_.embed_dim, rng);
            u_ = init::kaiming_uniform<T>({cfg_.attn_dim, cfg_.embed_dim}, cfg_.embed_dim, rng);
            w_ = init::kaiming_uniform<T>({1, cfg_.attn_dim}, cfg_.attn_dim, rng);
        }
    }

    const AggregatorConfig& cfg() const { return cfg_; }
    Tensor<T>& head() { return head_; }
    Tensor<T>& bias() { return bias_; }

    std::vector<NamedParam<T>> parameters() const override {
        std::vector<NamedParam<T>> out;
        if (cfg_.kind == AggKind::abmil) {
            out.push_back({"attn.V", v_});
            out.push_back({"attn.U", u_});
            out.push_back({"attn.w", w_});
        }
        out.push_back({"head.W", head_});
        out.push_back({"head.b", bias_});
        return out;
    }

    AggOutput<T> forward(const Tensor<T>& z) const {
        switch (cfg_.kind) {
            case AggKind::mean: return {mean_pool_classify(z, head_, bias_), {}, 0};
            case AggKind::max: return max_pool_classify(z, head_, bias_);
            case AggKind::abmil: return abmil_classify(z, v_, u_, w_, head_, bias_);
        }
        throw ConfigError("aggregator: unknown kind");
    }

private:
    AggregatorConfig cfg_;
    Tensor<T> head_, bias_, v_, u_, w_;
};

}  // namespace mammoth
