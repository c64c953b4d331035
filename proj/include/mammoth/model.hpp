// Copyright (c) 2026 The mammoth-mil Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "mammoth/layer.hpp"
#include "mammoth/mammoth_layer.hpp"
#include "mammoth/mil_heads.hpp"
#include "mammoth/moe_baselines.hpp"

namespace mammoth {

/// Flat set of layer hyperparameters, as exposed on the command line. Zero
/// means "variant default": Q from the budget solver, 30 experts for
/// MAMMOTH and 5 for baselines, P = 256/H, 9 slots for MAMMOTH and 200 total
/// slots for Soft MoE.
struct LayerOptions {
    LayerKind kind = LayerKind::mammoth;
    std::size_t d_in = 1024;
    std::size_t d_out = 512;
    std::size_t heads = 16;
    std::size_t part_dim = 0;
    std::size_t rank = 0;
    std::size_t experts = 0;
    std::size_t slots = 0;
    std::size_t total_slots = 0;
    std::size_t top_k = 2;
    std::size_t sinkhorn_iters = 3;
    bool global_phi = false;
    double input_dropout = 0.1;
    double ff_dropout = 0.25;

    std::size_t resolved_experts() const {
        if (experts) return experts;
        return kind == LayerKind::mammoth ? 30 : 5;
    }

    /// Variant config as JSON, including the "variant" tag.
    nlohmann::json to_config() const {
        const std::size_t e = resolved_experts();
        nlohmann::json j;
        switch (kind) {
            case LayerKind::linear: j = LinearConfig{d_in, d_out}.to_json(); break;
            case LayerKind::mammoth: {
                MammothConfig c;
                c.d_in = d_in;
                c.d_out = d_out;
                c.heads = heads;
                c.part_dim = part_dim ? part_dim : std::max<std::size_t>(256 / heads, 1);
                c.experts = e;
                c.slots = slots ? slots : (total_slots ? slots_per_expert(total_slots, e) : 9);
                c.rank = rank ? rank : solve_q(d_in, d_out, c.part_dim, heads, e);
                c.global_phi = global_phi;
                c.input_dropout = input_dropout;
                c.ff_dropout = ff_dropout;
                c.validate();
                j = c.to_json();
                break;
            }
            case LayerKind::soft_moe: {
                SoftMoEConfig c{d_in, d_out, e, slots ? slots : slots_per_expert(total_slots ? total_slots : 200, e)};
                j = c.to_json();
                break;
            }
            case LayerKind::sparse_softmax:
            case LayerKind::sparse_sinkhorn: {
                SparseMoEConfig c;
                c.d_in = d_in;
                c.d_out = d_out;
                c.experts = e;
                c.top_k = top_k;
                c.gating = kind == LayerKind::sparse_softmax ? Gating::softmax : Gating::sinkhorn;
                c.sinkhorn_iters = sinkhorn_iters;
                j = c.to_json();
                break;
            }
            case LayerKind::sparse_multihead: {
                SparseMultiheadConfig c;
                c.d_in = d_in;
                c.d_out = d_out;
                c.heads = heads;
                c.experts = e;
                c.top_k = top_k;
                c.validate();
                j = c.to_json();
                break;
            }
        }
        j["variant"] = std::string(layer_tag(kind));
        return j;
    }
};

template <typename T>
std::unique_ptr<Layer<T>> make_layer(const nlohmann::json& cfg, Rng& rng) {
    switch (parse_layer_tag(cfg.at("variant").get<std::string>())) {
        case LayerKind::linear: return std::make_unique<LinearLayer<T>>(LinearConfig::from_json(cfg), rng);
        case LayerKind::mammoth: return std::make_unique<MammothLayer<T>>(MammothConfig::from_json(cfg), rng);
        case LayerKind::soft_moe: return std::make_unique<SoftMoE<T>>(SoftMoEConfig::from_json(cfg), rng);
        case LayerKind::sparse_softmax:
        case LayerKind::sparse_sinkhorn: return std::make_unique<SparseMoE<T>>(SparseMoEConfig::from_json(cfg), rng);
        case LayerKind::sparse_multihead:
            return std::make_unique<SparseMultiheadMoE<T>>(SparseMultiheadConfig::from_json(cfg), rng);
    }
    throw ConfigError("make_layer: unhandled variant");
}

/// Exact parameter count of a layer config without allocating it.
inline std::size_t layer_param_count(const nlohmann::json& cfg) {
    switch (parse_layer_tag(cfg.at("variant").get<std::string>())) {
        case LayerKind::linear: return LinearConfig::from_json(cfg).param_count();
        case LayerKind::mammoth: return MammothConfig::from_json(cfg).param_count();
        case LayerKind::soft_moe: return SoftMoEConfig::from_json(cfg).param_count();
        case LayerKind::sparse_softmax:
        case LayerKind::sparse_sinkhorn: return SparseMoEConfig::from_json(cfg).param_count();
        case LayerKind::sparse_multihead: return SparseMultiheadConfig::from_json(cfg).param_count();
    }
    return 0;
}

/// Task-specific layer followed by a MIL aggregator and classifier.
template <typename T>
class MilModel final : public Module<T> {
public:
    MilModel(const nlohmann::json& layer_cfg, AggregatorConfig agg, Rng& rng, double feature_dropout = 0.1)
        : layer_(make_layer<T>(layer_cfg, rng)), feature_dropout_(feature_dropout) {
        agg.embed_dim = layer_->out_dim();
        head_ = std::make_unique<MilHead<T>>(agg, rng);
    }

    Layer<T>& layer() { return *layer_; }
    const Layer<T>& layer() const { return *layer_; }
    MilHead<T>& head() { return *head_; }
    const MilHead<T>& head() const { return *head_; }
    std::size_t num_classes() const { return head_->cfg().num_classes; }

    std::vector<NamedParam<T>> parameters() const override {
        std::vector<NamedParam<T>> out;
        for (auto& p : layer_->parameters()) out.push_back({"layer." + p.name, p.tensor});
        for (auto& p : head_->parameters()) out.push_back({"agg." + p.name, p.tensor});
        return out;
    }

    nlohmann::json config() const {
        nlohmann::json layer = layer_->config();
        layer["variant"] = std::string(layer_tag(layer_->kind()));
        return {{"layer", layer}, {"aggregator", head_->cfg().to_json()}, {"feature_dropout", feature_dropout_}};
    }

    /// Feature dropout is applied here for baselines; MAMMOTH applies its own.
    AggOutput<T> forward(const Tensor<T>& x, bool training, Rng& rng) {
        if (x.rank() != 2 || x.rows() == 0) throw EmptyBagError();
        Tensor<T> in = layer_->kind() == LayerKind::mammoth ? x : dropout(x, feature_dropout_, training, rng);
        return head_->forward(layer_->forward(in, training, rng));
    }

private:
    std::unique_ptr<Layer<T>> layer_;
    std::unique_ptr<MilHead<T>> head_;
    double feature_dropout_;
};

template <typename T>
std::unique_ptr<MilModel<T>> make_model(const nlohmann::json& model_cfg, Rng& rng) {
    return std::make_unique<MilModel<T>>(model_cfg.at("layer"),
                                         AggregatorConfig::from_json(model_cfg.at("aggregator")), rng,
                                         model_cfg.value("feature_dropout", 0.1));
}

}  // namespace mammoth
