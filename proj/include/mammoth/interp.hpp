// Copyright (c) 2026 The mammoth-mil Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "json.hpp"
#include "mammoth/errors.hpp"
#include "mammoth/metrics.hpp"
#include "mammoth/model.hpp"
#include "mammoth/synthgen.hpp"

namespace mammoth {

/// Mean ARI between K-means(k) on raw instances and K-means(k) on x·Wᵀ, one
/// clustering pair per bag. Both runs of a bag share the same seed.
template <typename T>
double projection_ari(const std::vector<Bag>& bags, const Tensor<T>& w, std::size_t k, std::uint64_t seed) {
    if (bags.empty()) throw std::invalid_argument("projection_ari: no bags");
    const std::size_t out = w.rows(), d = w.cols();
    double total = 0.0;
    for (std::size_t b = 0; b < bags.size(); ++b) {
        const Bag& bag = bags[b];
        if (bag.d != d) throw DimensionError("projection_ari: bag dim does not match W");
        std::vector<double> raw(bag.features.begin(), bag.features.end());
        std::vector<double> proj(bag.n * out, 0.0);
        for (std::size_t i = 0; i < bag.n; ++i)
            for (std::size_t o = 0; o < out; ++o) {
                double s = 0.0;
                for (std::size_t j = 0; j < d; ++j) s += raw[i * d + j] * static_cast<double>(w(o, j));
                proj[i * out + o] = s;
            }
        const std::uint64_t bag_seed = child_seed(seed, "ari/" + std::to_string(b));
        Rng r1(bag_seed), r2(bag_seed);
        const auto ref = kmeans(raw, bag.n, d, k, r1);
        const auto got = kmeans(proj, bag.n, out, k, r2);
        total += adjusted_rand_index(ref.assignments, got.assignments);
    }
    return total / static_cast<double>(bags.size());
}

inline double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

struct WelchResult {
    double t = 0.0;
    double df = 0.0;
    double p_value = 1.0;  // one-sided, H1: mean(a) > mean(b)
};

inline WelchResult welch_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("welch_t_test: need at least 2 samples per group");
    const auto moments = [](const std::vector<double>& x) {
        const double n = static_cast<double>(x.size());
        const double m = std::accumulate(x.begin(), x.end(), 0.0) / n;
        double ss = 0.0;
        for (double v : x) ss += (v - m) * (v - m);
        return std::pair{m, ss / (n - 1.0)};
    };
    const auto [ma, va] = moments(a);
    const auto [mb, vb] = moments(b);
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    const double se2 = va / na + vb / nb;
    WelchResult r;
    if (se2 == 0.0) {
        r.t = ma > mb ? std::numeric_limits<double>::infinity() : ma < mb ? -std::numeric_limits<double>::infinity() : 0.0;
        r.df = na + nb - 2.0;
        r.p_value = ma > mb ? 0.0 : ma < mb ? 1.0 : 0.5;
        return r;
    }
    r.t = (ma - mb) / std::sqrt(se2);
    r.df = se2 * se2 / ((va / na) * (va / na) / (na - 1.0) + (vb / nb) * (vb / nb) / (nb - 1.0));
    boost::math::students_t dist(r.df);
    r.p_value = boost::math::cdf(boost::math::complement(dist, r.t));
    return r;
}

/// Which weights the per-instance gradients are taken against.
enum class IgiTarget {
    linear,        // W of a linear layer
    single_expert, // all W_low blocks of a one-expert MAMMOTH layer
    multi_expert,  // each instance against the W_low blocks of its argmax expert
};

struct IgiOptions {
    IgiTarget target = IgiTarget::linear;
    std::size_t clusters = 8;
    std::size_t per_cluster = 100;
    std::uint64_t seed = 0;
};

struct IGIReport {
    double intra_mean = 0.0;
    double inter_mean = 0.0;
    double layer_mean = 0.0;  // over all sampled pairs
    double within_expert_mean = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> per_expert_mean;  // NaN where an expert received < 2 instances
    std::size_t n_intra = 0, n_inter = 0, n_within_expert = 0;
    std::size_t bags_used = 0, bags_skipped = 0;
    WelchResult test;

    nlohmann::json to_json() const {
        const auto num = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
        nlohmann::json pe = nlohmann::json::array();
        for (double v : per_expert_mean) pe.push_back(num(v));
        return {{"intra_mean", intra_mean},
                {"inter_mean", inter_mean},
                {"layer_mean", layer_mean},
                {"within_expert_mean", num(within_expert_mean)},
                {"per_expert_mean", pe},
                {"n_intra", n_intra},
                {"n_inter", n_inter},
                {"n_within_expert", n_within_expert},
                {"bags_used", bags_used},
                {"bags_skipped", bags_skipped},
                {"t_statistic", test.t},
                {"df", test.df},
                {"p_value", test.p_value}};
    }
};

namespace detail {

/// Per-instance surrogate loss: the instance alone as a bag, through the
/// layer in eval mode, mean-pooled and classified by the model's head.
template <typename T>
std::vector<std::vector<double>> instance_gradients(MilModel<T>& model, const Tensor<T>& x, std::size_t row,
                                                    int label, const std::vector<Tensor<T>>& targets) {
    for (auto t : targets) t.zero_grad();
    Rng unused(0);
    Tensor<T> xi = slice_rows(x, row, 1).detach();
    Tensor<T> z = model.layer().forward(xi, false, unused);
    Tensor<T> loss = cross_entropy_with_logits(mean_pool_classify(z, model.head().head(), model.head().bias()),
                                               static_cast<std::size_t>(label));
    loss.backward();
    std::vector<std::vector<double>> out;
    for (const auto& t : targets) out.emplace_back(t.grad().begin(), t.grad().end());
    return out;
}

inline std::vector<double> concat(const std::vector<std::vector<double>>& parts) {
    std::vector<double> v;
    for (const auto& p : parts) v.insert(v.end(), p.begin(), p.end());
    return v;
}

}  // namespace detail

/// Gradient-interference protocol at fixed parameters. Per bag: K-means the
/// instances, sample up to `per_cluster` instances per cluster, compute each
/// sampled instance's gradient, and compare cosine similarity within and
/// across clusters (one-sided Welch test, intra > inter).
template <typename T>
IGIReport igi_protocol(MilModel<T>& model, const std::vector<Bag>& bags, const IgiOptions& opts) {
    std::vector<Tensor<T>> targets;
    std::size_t experts = 1, heads = 1;
    if (opts.target == IgiTarget::linear) {
        auto* lin = dynamic_cast<LinearLayer<T>*>(&model.layer());
        if (!lin) throw ConfigError("igi: linear target requires a linear layer");
        targets.push_back(lin->weight());
    } else {
        auto* mm = dynamic_cast<MammothLayer<T>*>(&model.layer());
        if (!mm) throw ConfigError("igi: expert targets require a mammoth layer");
        experts = mm->cfg().experts;
        heads = mm->cfg().heads;
        if (opts.target == IgiTarget::single_expert && experts != 1) {
            throw ConfigError("igi: single_expert target requires E = 1");
        }
        for (std::size_t k = 0; k < experts; ++k)
            for (std::size_t h = 0; h < heads; ++h) targets.push_back(mm->w_low(h, k));
    }

    Rng rng(child_seed(opts.seed, "igi"));
    std::vector<double> intra, inter;
    std::vector<double> expert_sum(experts, 0.0);
    std::vector<std::size_t> expert_pairs(experts, 0);
    std::size_t skipped = 0;

    for (const auto& bag : bags) {
        const Tensor<T> x = bag.tensor<T>();
        std::vector<double> raw(bag.features.begin(), bag.features.end());
        const std::size_t k = std::min(opts.clusters, bag.n);
        const auto km = kmeans(raw, bag.n, bag.d, k, rng);

        std::vector<std::vector<std::size_t>> members(k);
        for (std::size_t i = 0; i < bag.n; ++i) members[static_cast<std::size_t>(km.assignments[i])].push_back(i);
        std::vector<std::size_t> sample;
        std::vector<std::size_t> cluster_of;
        std::size_t usable = 0;
        for (std::size_t c = 0; c < k; ++c) {
            auto& m = members[c];
            for (std::size_t i = 0; i + 1 < m.size(); ++i) {  // partial Fisher-Yates
                const std::size_t j = i + static_cast<std::size_t>(rng.uniform() * static_cast<double>(m.size() - i));
                std::swap(m[i], m[std::min(j, m.size() - 1)]);
            }
            const std::size_t take = std::min(opts.per_cluster, m.size());
            if (take >= 2) ++usable;
            for (std::size_t t = 0; t < take; ++t) {
                sample.push_back(m[t]);
                cluster_of.push_back(c);
            }
        }
        if (usable < 2) {  // no intra/inter contrast available in this bag
            ++skipped;
            continue;
        }

        std::vector<std::size_t> routed(sample.size(), 0);
        if (opts.target == IgiTarget::multi_expert) {
            NoGradGuard guard;
            Rng unused(0);
            auto* mm = dynamic_cast<MammothLayer<T>*>(&model.layer());
            const RoutingRecord rec = mm->forward_full(x, false, unused).routing(bag.id);
            for (std::size_t s = 0; s < sample.size(); ++s) routed[s] = rec.argmax_expert(sample[s]);
        }

        std::vector<std::vector<double>> full(sample.size()), own(sample.size());
        for (std::size_t s = 0; s < sample.size(); ++s) {
            auto grads = detail::instance_gradients(model, x, sample[s], bag.label, targets);
            full[s] = detail::concat(grads);
            if (opts.target == IgiTarget::multi_expert) {
                std::vector<std::vector<double>> blocks(grads.begin() + static_cast<std::ptrdiff_t>(routed[s] * heads),
                                                        grads.begin() + static_cast<std::ptrdiff_t>((routed[s] + 1) * heads));
                own[s] = detail::concat(blocks);
            }
        }
        for (std::size_t a = 0; a < sample.size(); ++a)
            for (std::size_t b = a + 1; b < sample.size(); ++b) {
                const double s = cosine_similarity(full[a], full[b]);
                (cluster_of[a] == cluster_of[b] ? intra : inter).push_back(s);
                if (opts.target == IgiTarget::multi_expert && routed[a] == routed[b]) {
                    expert_sum[routed[a]] += cosine_similarity(own[a], own[b]);
                    ++expert_pairs[routed[a]];
                }
            }
    }

    if (skipped == bags.size()) {
        throw ConfigError("igi: no bag has 2 clusters with >= 2 sampled instances");
    }
    IGIReport r;
    r.bags_used = bags.size() - skipped;
    r.bags_skipped = skipped;
    const auto mean = [](const std::vector<double>& v) {
        return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };
    r.intra_mean = mean(intra);
    r.inter_mean = mean(inter);
    r.n_intra = intra.size();
    r.n_inter = inter.size();
    r.layer_mean = (r.intra_mean * static_cast<double>(r.n_intra) + r.inter_mean * static_cast<double>(r.n_inter)) /
                   static_cast<double>(std::max<std::size_t>(r.n_intra + r.n_inter, 1));
    r.test = welch_t_test(intra, inter);
    if (opts.target == IgiTarget::multi_expert) {
        double total = 0.0;
        for (std::size_t k = 0; k < experts; ++k) {
            r.per_expert_mean.push_back(expert_pairs[k] ? expert_sum[k] / static_cast<double>(expert_pairs[k])
                                                        : std::numeric_limits<double>::quiet_NaN());
            total += expert_sum[k];
            r.n_within_expert += expert_pairs[k];
        }
        if (r.n_within_expert) r.within_expert_mean = total / static_cast<double>(r.n_within_expert);
    } else {
        r.within_expert_mean = r.layer_mean;
        r.n_within_expert = r.n_intra + r.n_inter;
    }
    return r;
}

/// Two concepts, each bag labeled by whether concept 1 is the majority, so
/// the two concepts pull a shared layer toward opposite classes.
inline SynthSpec conflicting_label_spec(std::uint64_t seed, std::size_t bags = 8) {
    SynthSpec s;
    s.concepts = 2;
    s.dim = 64;
    s.sigma = 1.0;
    s.sep = 6.0;
    s.n_min = 64;
    s.n_max = 128;
    s.mix = 1.0;
    s.rule = Rule{RuleKind::presence, 1, 1, 0.5};
    s.n_train = bags;
    s.n_val = 0;
    s.n_test = 0;
    s.seed = seed;
    return s;
}

}  // namespace mammoth
