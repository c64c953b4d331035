// Copyright (c) 2026 The mammoth-mil Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/random/uniform_real_distribution.hpp>

#include "json.hpp"
#include "mammoth/errors.hpp"
#include "mammoth/rng.hpp"

namespace mammoth {

/// Mean of per-class recall over the classes present in `labels`.
inline std::vector<double> per_class_recall(const std::vector<int>& preds, const std::vector<int>& labels,
                                            std::size_t num_classes) {
    if (preds.size() != labels.size()) throw std::invalid_argument("recall: preds and labels differ in length");
    std::vector<double> hit(num_classes, 0.0), total(num_classes, 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto c = static_cast<std::size_t>(labels[i]);
        if (c >= num_classes) throw std::invalid_argument("recall: label out of range");
        total[c] += 1.0;
        if (preds[i] == labels[i]) hit[c] += 1.0;
    }
    std::vector<double> out(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (total[c] == 0.0) throw std::invalid_argument("recall: class " + std::to_string(c) + " has no samples");
        out[c] = hit[c] / total[c];
    }
    return out;
}

inline double balanced_accuracy(const std::vector<int>& preds, const std::vector<int>& labels,
                                std::size_t num_classes) {
    const auto r = per_class_recall(preds, labels, num_classes);
    return std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(r.size());
}

/// Class count inferred as 1 + max label.
inline double balanced_accuracy(const std::vector<int>& preds, const std::vector<int>& labels) {
    if (labels.empty()) throw std::invalid_argument("balanced_accuracy: empty input");
    return balanced_accuracy(preds, labels, static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end())) + 1);
}

/// Mann-Whitney AUROC via midranks; ties contribute 1/2.
inline double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("auroc: scores and labels differ in length");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
    double pos = 0, neg = 0, rank_sum = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
        for (std::size_t t = i; t < j; ++t)
            if (labels[order[t]] == 1) rank_sum += midrank;
        i = j;
    }
    for (int l : labels) {
        if (l == 1) ++pos;
        else if (l == 0) ++neg;
        else throw std::invalid_argument("auroc: labels must be 0 or 1");
    }
    if (pos == 0 || neg == 0) throw std::invalid_argument("auroc: both classes must be present");
    return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

struct MetricReport {
    double balanced_accuracy = 0.0;
    double auroc = std::numeric_limits<double>::quiet_NaN();  // binary only
    double loss = 0.0;
    std::vector<double> recall;
    std::vector<std::vector<std::size_t>> confusion;  // [true][pred]

    bool binary() const { return recall.size() == 2; }
    /// AUROC for binary tasks, balanced accuracy otherwise.
    double primary() const { return binary() ? auroc : balanced_accuracy; }

    nlohmann::json to_json() const {
        nlohmann::json j = {{"balanced_accuracy", balanced_accuracy}, {"loss", loss},
                            {"per_class_recall", recall}, {"confusion", confusion}};
        j["auroc"] = binary() ? nlohmann::json(auroc) : nlohmann::json(nullptr);
        return j;
    }
};

/// `scores` holds P(class 1) per sample; used only when num_classes == 2.
inline MetricReport make_report(const std::vector<int>& preds, const std::vector<int>& labels,
                                const std::vector<double>& scores, std::size_t num_classes) {
    MetricReport r;
    r.recall = per_class_recall(preds, labels, num_classes);
    r.balanced_accuracy = std::accumulate(r.recall.begin(), r.recall.end(), 0.0) / static_cast<double>(num_classes);
    r.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
    for (std::size_t i = 0; i < labels.size(); ++i) ++r.confusion[labels[i]][preds[i]];
    if (num_classes == 2) r.auroc = auroc(scores, labels);
    return r;
}

// ---------------------------------------------------------------------------
// Clustering

struct KMeansResult {
    std::vector<int> assignments;
    std::vector<std::vector<double>> centers;
    double inertia = 0.0;
    std::size_t iterations = 0;
};

namespace detail {
inline double sq_dist(const double* a, const double* b, std::size_t d) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
    return s;
}

/// One Lloyd run from a k-means++ seeding.
inline KMeansResult kmeans_once(const std::vector<double>& x, std::size_t m, std::size_t d, std::size_t k, Rng& rng,
                                std::size_t max_iters) {
    if (x.size() != m * d) throw std::invalid_argument("kmeans: data size does not match m*d");
    if (k == 0 || m < k) throw std::invalid_argument("kmeans: need 1 <= k <= number of points");
    const auto row = [&](std::size_t i) { return x.data() + i * d; };

    std::vector<std::vector<double>> centers;
    const std::size_t first = std::min(static_cast<std::size_t>(rng.uniform() * static_cast<double>(m)), m - 1);
    centers.emplace_back(row(first), row(first) + d);
    std::vector<double> dist(m);
    for (std::size_t i = 0; i < m; ++i) dist[i] = detail::sq_dist(row(i), centers[0].data(), d);
    while (centers.size() < k) {
        const double total = std::accumulate(dist.begin(), dist.end(), 0.0);
        std::size_t pick = 0;
        if (total > 0.0) {
            const double u = rng.uniform() * total;
            double acc = 0.0;
            pick = m - 1;
            for (std::size_t i = 0; i < m; ++i) {
                acc += dist[i];
                if (u < acc && dist[i] > 0.0) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = std::min(static_cast<std::size_t>(rng.uniform() * static_cast<double>(m)), m - 1);
        }
        centers.emplace_back(row(pick), row(pick) + d);
        for (std::size_t i = 0; i < m; ++i) dist[i] = std::min(dist[i], detail::sq_dist(row(i), centers.back().data(), d));
    }

    KMeansResult res;
    res.assignments.assign(m, -1);
    for (std::size_t it = 0; it < max_iters; ++it) {
        bool changed = false;
        for (std::size_t i = 0; i < m; ++i) {
            int best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < k; ++c) {
                const double dd = detail::sq_dist(row(i), centers[c].data(), d);
                if (dd < best_d) {
                    best_d = dd;
                    best = static_cast<int>(c);
                }
            }
            if (res.assignments[i] != best) {
                res.assignments[i] = best;
                changed = true;
            }
        }
        res.iterations = it + 1;
        if (!changed && it > 0) break;

        std::vector<std::vector<double>> sums(k, std::vector<double>(d, 0.0));
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < m; ++i) {
            const auto c = static_cast<std::size_t>(res.assignments[i]);
            ++counts[c];
            for (std::size_t j = 0; j < d; ++j) sums[c][j] += row(i)[j];
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) {
                std::size_t far = 0;
                double far_d = -1.0;
                for (std::size_t i = 0; i < m; ++i) {
                    const double dd =
                        detail::sq_dist(row(i), centers[static_cast<std::size_t>(res.assignments[i])].data(), d);
                    if (dd > far_d) {
                        far_d = dd;
                        far = i;
                    }
                }
                centers[c].assign(row(far), row(far) + d);
                res.assignments[far] = static_cast<int>(c);
                changed = true;
                continue;
            }
            for (std::size_t j = 0; j < d; ++j) centers[c][j] = sums[c][j] / static_cast<double>(counts[c]);
        }
    }
    res.inertia = 0.0;
    for (std::size_t i = 0; i < m; ++i)
        res.inertia += detail::sq_dist(row(i), centers[static_cast<std::size_t>(res.assignments[i])].data(), d);
    res.centers = std::move(centers);
    return res;
}

}  // namespace detail

/// Lloyd's algorithm with k-means++ seeding on row-major m×d data. Each run
/// stops on an unchanged assignment or after `max_iters`; an empty cluster
/// is re-seeded at the point farthest from its current center. The run
/// with the lowest inertia out of `restarts` is returned.
inline KMeansResult kmeans(const std::vector<double>& x, std::size_t m, std::size_t d, std::size_t k, Rng& rng,
                           std::size_t max_iters = 100, std::size_t restarts = 10) {
    if (x.size() != m * d) throw std::invalid_argument("kmeans: data size does not match m*d");
    if (k == 0 || m < k) throw std::invalid_argument("kmeans: need 1 <= k <= number of points");
    KMeansResult best;
    for (std::size_t r = 0; r < std::max<std::size_t>(restarts, 1); ++r) {
        KMeansResult run = detail::kmeans_once(x, m, d, k, rng, max_iters);
        if (r == 0 || run.inertia < best.inertia) best = std::move(run);
    }
    return best;
}

/// Hubert-Arabie adjusted Rand index from the contingency table.
inline double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("adjusted_rand_index: partitions differ in length");
    const double n = static_cast<double>(a.size());
    std::map<std::pair<int, int>, double> table;
    std::map<int, double> rows, cols;
    for (std::size_t i = 0; i < a.size(); ++i) {
        table[{a[i], b[i]}] += 1.0;
        rows[a[i]] += 1.0;
        cols[b[i]] += 1.0;
    }
    const auto c2 = [](double v) { return v * (v - 1.0) / 2.0; };
    double index = 0.0, sum_a = 0.0, sum_b = 0.0;
    for (const auto& [_, v] : table) index += c2(v);
    for (const auto& [_, v] : rows) sum_a += c2(v);
    for (const auto& [_, v] : cols) sum_b += c2(v);
    const double total = c2(n);
    if (total == 0.0) return 1.0;
    const double expected = sum_a * sum_b / total;
    const double max_index = 0.5 * (sum_a + sum_b);
    // Both partitions trivial (all-one-cluster or all-singletons on both sides).
    if (max_index == expected) return index == expected && sum_a == sum_b ? 1.0 : 0.0;
    return (index - expected) / (max_index - expected);
}

}  // namespace mammoth
