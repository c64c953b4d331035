// Copyright (c) 2026 The mammoth-mil Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>

#include "mammoth/checkpoint.hpp"
#include "mammoth/gradient_suite.hpp"

using namespace mammoth;

namespace {

nlohmann::json model_config(LayerKind kind, AggKind agg) {
    LayerOptions o;
    o.kind = kind;
    o.d_in = 12;
    o.d_out = 8;
    o.heads = 2;
    o.part_dim = 2;
    o.experts = 3;
    o.slots = 2;
    return {{"layer", o.to_config()}, {"aggregator", AggregatorConfig{agg, 8, 3, 4}.to_json()}, {"feature_dropout", 0.1}};
}

}  // namespace

TEST(Checkpoint, RoundTripIsByteIdentical) {
    for (auto kind : {LayerKind::linear, LayerKind::mammoth, LayerKind::soft_moe, LayerKind::sparse_sinkhorn,
                      LayerKind::sparse_multihead}) {
        Rng rng(child_seed(1, layer_tag(kind)));
        auto model = make_model<float>(model_config(kind, AggKind::abmil), rng);
        const std::string bytes = encode_checkpoint(*model, {{"note", "x"}});
        const auto loaded = decode_checkpoint<float>(bytes);
        EXPECT_EQ(encode_checkpoint(*loaded.model, loaded.header.at("meta")), bytes) << layer_tag(kind);
        EXPECT_EQ(loaded.header.at("variant"), layer_tag(kind));

        const Tensor<float> x = Tensor<float>::filled({5, 12}, 0.25f);
        Rng unused(0);
        EXPECT_EQ(model->forward(x, false, unused).logits.to_vector(),
                  loaded.model->forward(x, false, unused).logits.to_vector());
    }
}

TEST(Checkpoint, FileRoundTrip) {
    const auto path = std::filesystem::temp_directory_path() / "mammoth_ckpt_test.mmth";
    Rng rng(2);
    auto model = make_model<double>(model_config(LayerKind::mammoth, AggKind::mean), rng);
    save_checkpoint(path, *model);
    const auto back = load_checkpoint<double>(path);
    const auto a = model->parameters(), b = back.model->parameters();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].name, b[i].name);
        for (std::size_t j = 0; j < a[i].tensor.numel(); ++j)
            EXPECT_EQ(static_cast<float>(a[i].tensor.data()[j]), static_cast<float>(b[i].tensor.data()[j]));
    }
}

TEST(Checkpoint, CorruptFilesAreRejected) {
    Rng rng(3);
    auto model = make_model<float>(model_config(LayerKind::linear, AggKind::mean), rng);
    const std::string good = encode_checkpoint(*model);

    std::string bad = good;
    bad[1] = 'X';
    EXPECT_THROW(decode_checkpoint<float>(bad), ParseError);
    EXPECT_THROW(decode_checkpoint<float>(good.substr(0, good.size() - 1)), ParseError);
    EXPECT_THROW(decode_checkpoint<float>(good + "0"), ParseError);

    // Rewrite the header so one tensor claims a different shape.
    std::size_t pos = 4;
    const auto len = detail::get_le<std::uint32_t>(good, pos, "len");
    auto header = nlohmann::json::parse(good.substr(8, len));
    header["tensors"][0]["shape"] = Shape{1, 1};
    const std::string text = header.dump();
    std::string reshaped = "MMTH";
    detail::put_le<std::uint32_t>(reshaped, static_cast<std::uint32_t>(text.size()));
    reshaped += text + good.substr(8 + len);
    EXPECT_THROW(decode_checkpoint<float>(reshaped), ParseError);
}
