// Copyright (c) 2026 The mammoth-mil Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <boost/random/gamma_distribution.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_int_distribution.hpp>

#include "json.hpp"
#include "mammoth/errors.hpp"
#include "mammoth/rng.hpp"
#include "mammoth/tensor.hpp"

namespace mammoth {

enum class RuleKind { presence, co_occurrence, majority };

/// Bag-label rule over realized concept fractions f_c.
///   presence(a, rho):         1 iff f_a >= rho
///   co_occurrence(a, b, rho): 1 iff f_a >= rho and f_b >= rho
///   majority:                 the most frequent concept (ties: lowest id); K classes
struct Rule {
    RuleKind kind = RuleKind::co_occurrence;
    std::size_t a = 0;
    std::size_t b = 1;
    double rho = 0.1;

    std::size_t num_classes(std::size_t k) const { return kind == RuleKind::majority ? k : 2; }

    std::string to_string() const {
        std::ostringstream os;
        switch (kind) {
            case RuleKind::presence: os << "presence:" << a << ':' << rho; break;
            case RuleKind::co_occurrence: os << "co_occurrence:" << a << ':' << b << ':' << rho; break;
            case RuleKind::majority: os << "majority"; break;
        }
        return os.str();
    }

    /// Parses "presence:A:RHO", "co_occurrence:A:B:RHO" or "majority".
    static Rule parse(const std::string& text) {
        std::vector<std::string> parts;
        std::stringstream ss(text);
        for (std::string item; std::getline(ss, item, ':');) parts.push_back(item);
        Rule r;
        try {
            if (parts.size() == 3 && parts[0] == "presence") {
                r.kind = RuleKind::presence;
                r.a = std::stoul(parts[1]);
                r.rho = std::stod(parts[2]);
            } else if (parts.size() == 4 && parts[0] == "co_occurrence") {
                r.kind = RuleKind::co_occurrence;
                r.a = std::stoul(parts[1]);
                r.b = std::stoul(parts[2]);
                r.rho = std::stod(parts[3]);
            } else if (parts.size() == 1 && parts[0] == "majority") {
                r.kind = RuleKind::majority;
            } else {
                throw ConfigError("");
            }
        } catch (const std::exception&) {
            throw ConfigError("invalid rule '" + text +
                              "' (expected presence:A:RHO, co_occurrence:A:B:RHO or majority)");
        }
        if (r.kind != RuleKind::majority && !(r.rho > 0.0 && r.rho < 1.0)) {
            throw ConfigError("rule threshold rho must lie in (0, 1)");
        }
        return r;
    }
};

struct SynthSpec {
    std::size_t concepts = 8;  // K
    std::size_t dim = 64;      // D
    double sigma = 1.0;
    double sep = 6.0;
    std::size_t n_min = 64;
    std::size_t n_max = 256;
    double mix = 1.0;  // Dirichlet concentration
    Rule rule{};
    std::size_t n_train = 200;
    std::size_t n_val = 50;
    std::size_t n_test = 50;
    std::uint64_t seed = 0;

    std::size_t num_classes() const { return rule.num_classes(concepts); }

    void validate() const {
        if (concepts < 2) throw ConfigError("synth: need K >= 2 concepts");
        if (!(sep > 0.0)) throw ConfigError("synth: sep must be positive");
        if (sigma < 0.0) throw ConfigError("synth: sigma must be nonnegative");
        if (n_min < 1 || n_min > n_max) throw ConfigError("synth: need 1 <= N_min <= N_max");
        if (!(mix > 0.0)) throw ConfigError("synth: Dirichlet concentration must be positive");
        if (rule.kind != RuleKind::majority && (rule.a >= concepts || rule.b >= concepts)) {
            throw ConfigError("synth: rule references a concept id >= K");
        }
    }

    nlohmann::json to_json() const {
        return {{"concepts", concepts}, {"dim", dim},         {"sigma", sigma},   {"sep", sep},
                {"n_min", n_min},       {"n_max", n_max},     {"mix", mix},       {"rule", rule.to_string()},
                {"n_train", n_train},   {"n_val", n_val},     {"n_test", n_test}, {"seed", seed}};
    }
};

struct Bag {
    std::string id;
    std::size_t n = 0;
    std::size_t d = 0;
    std::int32_t label = 0;
    std::vector<float> features;          // n×d row-major
    std::vector<std::uint16_t> concepts;  // ground truth, evaluation only

    template <typename T = float>
    Tensor<T> tensor() const {
        return Tensor<T>({n, d}, std::vector<T>(features.begin(), features.end()));
    }

    bool operator==(const Bag& o) const {
        return n == o.n && d == o.d && label == o.label && features == o.features && concepts == o.concepts;
    }
};

struct Dataset {
    std::vector<std::vector<double>> concept_means;
    std::vector<Bag> train, val, test;
};

/// Label of a bag with the given concept assignments.
inline std::int32_t apply_rule(const Rule& rule, const std::vector<std::uint16_t>& concepts, std::size_t k) {
    std::vector<std::size_t> counts(k, 0);
    for (auto c : concepts) ++counts.at(c);
    const double n = static_cast<double>(concepts.size());
    const auto frac = [&](std::size_t c) { return static_cast<double>(counts.at(c)) / n; };
    switch (rule.kind) {
        case RuleKind::presence: return frac(rule.a) >= rule.rho ? 1 : 0;
        case RuleKind::co_occurrence: return frac(rule.a) >= rule.rho && frac(rule.b) >= rule.rho ? 1 : 0;
        case RuleKind::majority:
            return static_cast<std::int32_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    }
    return 0;
}

/// K centered Gaussian means rescaled so the closest pair sits at
/// sep·sigma (sep alone when sigma == 0).
inline std::vector<std::vector<double>> make_concepts(std::size_t k, std::size_t d, double sep, double sigma,
                                                      Rng& rng) {
    if (d < 63 && k > (std::size_t{1} << d)) throw ConfigError("make_concepts: K exceeds 2^D");
    const double target = sep * (sigma > 0.0 ? sigma : 1.0);
    boost::random::normal_distribution<double> normal(0.0, 1.0);
    for (int attempt = 0; attempt < 1000; ++attempt) {
        std::vector<std::vector<double>> means(k, std::vector<double>(d));
        std::vector<double> centroid(d, 0.0);
        for (auto& m : means)
            for (std::size_t j = 0; j < d; ++j) {
                m[j] = normal(rng);
                centroid[j] += m[j] / static_cast<double>(k);
            }
        for (auto& m : means)
            for (std::size_t j = 0; j < d; ++j) m[j] -= centroid[j];
        double min_dist = std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < k; ++a)
            for (std::size_t b = a + 1; b < k; ++b) {
                double s = 0.0;
                for (std::size_t j = 0; j < d; ++j) s += (means[a][j] - means[b][j]) * (means[a][j] - means[b][j]);
                min_dist = std::min(min_dist, std::sqrt(s));
            }
        if (!(min_dist > 1e-9)) continue;
        const double factor = target / min_dist * (1.0 + 1e-12);
        for (auto& m : means)
            for (auto& v : m) v *= factor;
        return means;
    }
    throw ConfigError("make_concepts: could not satisfy the separation constraint in 1000 attempts");
}

namespace detail {

inline std::vector<double> sample_dirichlet(std::size_t k, double alpha, Rng& rng) {
    boost::random::gamma_distribution<double> gamma(alpha, 1.0);
    std::vector<double> w(k);
    double total = 0.0;
    while (!(total > 0.0)) {
        total = 0.0;
        for (auto& v : w) total += (v = gamma(rng));
    }
    for (auto& v : w) v /= total;
    return w;
}

inline std::size_t sample_categorical(const std::vector<double>& probs, Rng& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) return i;
    }
    return probs.size() - 1;
}

}  // namespace detail

/// N ~ U[N_min, N_max]; composition ~ Dirichlet(mix); concept per instance
/// from the composition; feature = mean + N(0, sigma² I).
inline Bag sample_bag(const SynthSpec& spec, const std::vector<std::vector<double>>& means, Rng& rng) {
    boost::random::uniform_int_distribution<std::size_t> count(spec.n_min, spec.n_max);
    boost::random::normal_distribution<double> noise(0.0, 1.0);
    Bag bag;
    bag.n = count(rng);
    bag.d = spec.dim;
    const auto composition = detail::sample_dirichlet(spec.concepts, spec.mix, rng);
    bag.concepts.resize(bag.n);
    bag.features.resize(bag.n * bag.d);
    for (std::size_t i = 0; i < bag.n; ++i) {
        const std::size_t c = detail::sample_categorical(composition, rng);
        bag.concepts[i] = static_cast<std::uint16_t>(c);
        for (std::size_t j = 0; j < bag.d; ++j) {
            const double eps = spec.sigma > 0.0 ? spec.sigma * noise(rng) : 0.0;
            bag.features[i * bag.d + j] = static_cast<float>(means[c][j] + eps);
        }
    }
    bag.label = apply_rule(spec.rule, bag.concepts, spec.concepts);
    return bag;
}

/// Rejection-samples until the rule yields `target`.
inline Bag sample_bag_with_label(const SynthSpec& spec, const std::vector<std::vector<double>>& means,
                                 std::int32_t target, Rng& rng) {
    for (int attempt = 0; attempt < 100000; ++attempt) {
        Bag bag = sample_bag(spec, means, rng);
        if (bag.label == target) return bag;
    }
    throw ConfigError("synth: rule " + spec.rule.to_string() + " did not produce label " + std::to_string(target) +
                      " in 100000 draws");
}

/// Deterministic train/val/test splits. Bag i of a split targets label
/// i mod C, so every split is class-balanced to within one bag.
inline Dataset generate_dataset(const SynthSpec& spec) {
    spec.validate();
    Rng rng(child_seed(spec.seed, "data"));
    Dataset ds;
    ds.concept_means = make_concepts(spec.concepts, spec.dim, spec.sep, spec.sigma, rng);
    const std::size_t c = spec.num_classes();
    const auto fill = [&](std::vector<Bag>& out, std::size_t count, const char* split) {
        for (std::size_t i = 0; i < count; ++i) {
            Bag bag = sample_bag_with_label(spec, ds.concept_means, static_cast<std::int32_t>(i % c), rng);
            bag.id = std::string(split) + "_" + std::to_string(i);
            out.push_back(std::move(bag));
        }
    };
    fill(ds.train, spec.n_train, "train");
    fill(ds.val, spec.n_val, "val");
    fill(ds.test, spec.n_test, "test");
    return ds;
}

// ---------------------------------------------------------------------------
// Bag file: "MILB" | u8 version=1 | u32 N | u32 D | i32 label |
//           f32[N·D] features | u16[N] concept ids. Little-endian.

inline constexpr std::array<char, 4> kBagMagic{'M', 'I', 'L', 'B'};
inline constexpr std::uint8_t kBagVersion = 1;

namespace detail {

template <typename U>
void put_le(std::string& out, U value) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, &value, sizeof(U));
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

template <typename U>
U get_le(const std::string& in, std::size_t& pos, const char* field) {
    if (pos + sizeof(U) > in.size()) throw ParseError(std::string("truncated bag file while reading ") + field, pos);
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    pos += sizeof(U);
    U value;
    std::memcpy(&value, &bits, sizeof(U));
    return value;
}

}  // namespace detail

inline std::string encode_bag(const Bag& bag) {
    std::string out(kBagMagic.begin(), kBagMagic.end());
    detail::put_le<std::uint8_t>(out, kBagVersion);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(bag.n));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(bag.d));
    detail::put_le<std::int32_t>(out, bag.label);
    for (float f : bag.features) detail::put_le<float>(out, f);
    for (auto c : bag.concepts) detail::put_le<std::uint16_t>(out, c);
    return out;
}

inline Bag decode_bag(const std::string& bytes) {
    std::size_t pos = 0;
    if (bytes.size() < 4 || !std::equal(kBagMagic.begin(), kBagMagic.end(), bytes.begin())) {
        throw ParseError("bad bag magic (expected MILB)", 0);
    }
    pos = 4;
    const auto version = detail::get_le<std::uint8_t>(bytes, pos, "version");
    if (version != kBagVersion) throw ParseError("unsupported bag version " + std::to_string(version), pos - 1);
    Bag bag;
    bag.n = detail::get_le<std::uint32_t>(bytes, pos, "N");
    bag.d = detail::get_le<std::uint32_t>(bytes, pos, "D");
    bag.label = detail::get_le<std::int32_t>(bytes, pos, "label");
    const std::size_t need = pos + bag.n * bag.d * 4 + bag.n * 2;
    if (bytes.size() < need) throw ParseError("truncated bag file: payload shorter than N*D*4 + N*2", bytes.size());
    if (bytes.size() > need) throw ParseError("trailing bytes after bag payload", need);
    bag.features.resize(bag.n * bag.d);
    for (auto& f : bag.features) f = detail::get_le<float>(bytes, pos, "features");
    bag.concepts.resize(bag.n);
    for (auto& c : bag.concepts) c = detail::get_le<std::uint16_t>(bytes, pos, "concepts");
    return bag;
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes to a sibling temp file, then renames over the destination.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline void write_bag(const std::filesystem::path& path, const Bag& bag) { write_file_atomic(path, encode_bag(bag)); }

inline Bag read_bag(const std::filesystem::path& path) {
    Bag bag = decode_bag(read_file_bytes(path));
    bag.id = path.stem().string();
    return bag;
}

// ---------------------------------------------------------------------------
// Manifest: CSV "path,label,split"; paths are relative to the manifest.

struct ManifestEntry {
    std::string path;
    std::int32_t label = 0;
    std::string split;
};

inline std::string encode_manifest(const std::vector<ManifestEntry>& entries) {
    std::string out = "path,label,split\n";
    for (const auto& e : entries) out += e.path + "," + std::to_string(e.label) + "," + e.split + "\n";
    return out;
}

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::istringstream in(read_file_bytes(path));
    std::string line;
    if (!std::getline(in, line) || line != "path,label,split") {
        throw std::runtime_error("manifest " + path.string() + ": expected header 'path,label,split'");
    }
    std::vector<ManifestEntry> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto c1 = line.find(','), c2 = line.rfind(',');
        if (c1 == std::string::npos || c1 == c2) {
            throw std::runtime_error("manifest line " + std::to_string(lineno) + ": expected 3 fields");
        }
        ManifestEntry e{line.substr(0, c1), std::stoi(line.substr(c1 + 1, c2 - c1 - 1)), line.substr(c2 + 1)};
        if (e.split != "train" && e.split != "val" && e.split != "test") {
            throw std::runtime_error("manifest line " + std::to_string(lineno) + ": unknown split '" + e.split + "'");
        }
        out.push_back(std::move(e));
    }
    return out;
}

/// Loads every bag named in a manifest into its split.
inline Dataset load_dataset(const std::filesystem::path& manifest) {
    Dataset ds;
    const auto dir = manifest.parent_path();
    for (const auto& e : read_manifest(manifest)) {
        Bag bag = read_bag(dir / e.path);
        if (bag.label != e.label) throw std::runtime_error("manifest label mismatch for " + e.path);
        (e.split == "train" ? ds.train : e.split == "val" ? ds.val : ds.test).push_back(std::move(bag));
    }
    return ds;
}

}  // namespace mammoth
