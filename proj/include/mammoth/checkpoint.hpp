// Copyright (c) 2026 The mammoth-mil Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>

#include "json.hpp"
#include "mammoth/errors.hpp"
#include "mammoth/model.hpp"
#include "mammoth/synthgen.hpp"

namespace mammoth {

// Checkpoint: "MMTH" | u32 header length | JSON header | f32 LE payload.
// The header holds {"model": config, "variant": tag, "tensors": [{name,
// shape, offset}], "meta": ...}; offsets are bytes from the payload start.

inline constexpr char kCheckpointMagic[4] = {'M', 'M', 'T', 'H'};

template <typename T>
std::string encode_checkpoint(const MilModel<T>& model, const nlohmann::json& meta = nlohmann::json::object()) {
    nlohmann::json table = nlohmann::json::array();
    std::string payload;
    for (const auto& p : model.parameters()) {
        table.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"offset", payload.size()}});
        for (T v : p.tensor.data()) detail::put_le<float>(payload, static_cast<float>(v));
    }
    const nlohmann::json header = {{"model", model.config()},
                                   {"variant", std::string(layer_tag(model.layer().kind()))},
                                   {"tensors", table},
                                   {"meta", meta}};
    const std::string text = header.dump();
    std::string out(kCheckpointMagic, 4);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
    out += text;
    out += payload;
    return out;
}

template <typename T>
struct LoadedCheckpoint {
    nlohmann::json header;
    std::unique_ptr<MilModel<T>> model;
};

template <typename T>
LoadedCheckpoint<T> decode_checkpoint(const std::string& bytes) {
    if (bytes.size() < 8 || bytes.compare(0, 4, kCheckpointMagic, 4) != 0) {
        throw ParseError("bad checkpoint magic (expected MMTH)", 0);
    }
    std::size_t pos = 4;
    const auto len = detail::get_le<std::uint32_t>(bytes, pos, "header length");
    if (pos + len > bytes.size()) throw ParseError("checkpoint header runs past end of file", pos);
    LoadedCheckpoint<T> out;
    try {
        out.header = nlohmann::json::parse(bytes.substr(pos, len));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint header is not valid JSON: ") + e.what(), pos);
    }
    const std::size_t payload = pos + len;
    Rng init_rng(0);
    out.model = make_model<T>(out.header.at("model"), init_rng);

    std::map<std::string, nlohmann::json> entries;
    for (const auto& e : out.header.at("tensors")) entries[e.at("name").template get<std::string>()] = e;
    const auto params = out.model->parameters();
    if (entries.size() != params.size()) throw ParseError("checkpoint tensor table does not match the model", pos);
    std::size_t expected_offset = 0;
    for (const auto& p : params) {
        const auto it = entries.find(p.name);
        if (it == entries.end()) throw ParseError("checkpoint is missing tensor '" + p.name + "'", pos);
        if (it->second.at("shape").template get<Shape>() != p.tensor.shape()) {
            throw ParseError("checkpoint tensor '" + p.name + "' has the wrong shape", pos);
        }
        const auto offset = it->second.at("offset").template get<std::size_t>();
        if (offset != expected_offset) throw ParseError("checkpoint tensor '" + p.name + "' overlaps or leaves a gap", pos);
        std::size_t cursor = payload + offset;
        Tensor<T> t = p.tensor;
        for (auto& v : t.data()) v = static_cast<T>(detail::get_le<float>(bytes, cursor, "tensor payload"));
        expected_offset += t.numel() * 4;
    }
    if (payload + expected_offset != bytes.size()) {
        throw ParseError("trailing bytes after checkpoint payload", payload + expected_offset);
    }
    return out;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const MilModel<T>& model,
                     const nlohmann::json& meta = nlohmann::json::object()) {
    write_file_atomic(path, encode_checkpoint(model, meta));
}

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint<T>(read_file_bytes(path));
}

}  // namespace mammoth
