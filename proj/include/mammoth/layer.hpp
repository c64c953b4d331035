// Copyright (c) 2026 The mammoth-mil Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>

#include "json.hpp"
#include "mammoth/errors.hpp"
#include "mammoth/module.hpp"
#include "mammoth/rng.hpp"
#include "mammoth/tensor.hpp"

namespace mammoth {

enum class LayerKind { linear, mammoth, soft_moe, sparse_softmax, sparse_sinkhorn, sparse_multihead };

/// Baselines keep one output row per instance; MAMMOTH emits E·S slot rows.
enum class OutputKind { per_instance, slot_set };

inline constexpr std::array<std::pair<LayerKind, std::string_view>, 6> kLayerTags{{
    {LayerKind::linear, "linear"},
    {LayerKind::mammoth, "mammoth"},
    {LayerKind::soft_moe, "soft"},
    {LayerKind::sparse_softmax, "sparse_softmax"},
    {LayerKind::sparse_sinkhorn, "sparse_sinkhorn"},
    {LayerKind::sparse_multihead, "sparse_mh"},
}};

inline std::string_view layer_tag(LayerKind kind) {
    for (const auto& [k, tag] : kLayerTags)
        if (k == kind) return tag;
    return "unknown";
}

inline LayerKind parse_layer_tag(std::string_view tag) {
    for (const auto& [k, t] : kLayerTags)
        if (t == tag) return k;
    throw ConfigError("unknown layer variant '" + std::string(tag) +
                      "' (expected linear|mammoth|soft|sparse_softmax|sparse_sinkhorn|sparse_mh)");
}

/// The task-specific transformation that sits between instance features and
/// the MIL aggregator: N×D in, N×D_out or (E·S)×D_out out.
template <typename T>
class Layer : public Module<T> {
public:
    virtual LayerKind kind() const = 0;
    virtual std::size_t in_dim() const = 0;
    virtual std::size_t out_dim() const = 0;
    virtual Tensor<T> forward(const Tensor<T>& x, bool training, Rng& rng) = 0;
    /// Hyperparameters sufficient to rebuild the layer (tensor values excluded).
    virtual nlohmann::json config() const = 0;

    OutputKind output_kind() const {
        return kind() == LayerKind::mammoth ? OutputKind::slot_set : OutputKind::per_instance;
    }
};

}  // namespace mammoth
