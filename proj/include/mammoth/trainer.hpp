// Copyright (c) 2026 The mammoth-mil Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/random/uniform_int_distribution.hpp>

#include "json.hpp"
#include "mammoth/errors.hpp"
#include "mammoth/metrics.hpp"
#include "mammoth/model.hpp"
#include "mammoth/optim.hpp"
#include "mammoth/rng.hpp"
#include "mammoth/synthgen.hpp"

namespace mammoth {

struct TrainConfig {
    double lr = 1e-4;
    double weight_decay = 1e-5;
    std::size_t max_epochs = 20;
    std::size_t min_epochs = 10;
    std::size_t patience = 5;
    std::size_t epochs_no_val = 10;
    std::uint64_t seed = 0;

    void validate() const {
        if (min_epochs > max_epochs) throw ConfigError("train: min_epochs must not exceed max_epochs");
        if (patience < 1) throw ConfigError("train: patience must be >= 1");
        if (lr < 0.0 || weight_decay < 0.0) throw ConfigError("train: lr and weight_decay must be nonnegative");
    }

    nlohmann::json to_json() const {
        return {{"lr", lr},         {"weight_decay", weight_decay}, {"max_epochs", max_epochs},
                {"min_epochs", min_epochs}, {"patience", patience}, {"epochs_no_val", epochs_no_val},
                {"seed", seed}};
    }
};

/// One epoch of bag indices. Each draw picks a class uniformly among the
/// classes (probability ∝ 1/count, summed over members), then a uniform
/// member of that class.
inline std::vector<std::size_t> weighted_sampler(const std::vector<int>& labels, std::size_t num_classes, Rng& rng) {
    std::vector<std::vector<std::size_t>> members(num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto c = static_cast<std::size_t>(labels[i]);
        if (c >= num_classes) throw ConfigError("sampler: label " + std::to_string(labels[i]) + " out of range");
        members[c].push_back(i);
    }
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (members[c].empty()) throw ConfigError("sampler: class " + std::to_string(c) + " has no bags");
    }
    std::vector<std::size_t> out(labels.size());
    boost::random::uniform_int_distribution<std::size_t> pick_class(0, num_classes - 1);
    for (auto& idx : out) {
        const auto& m = members[pick_class(rng)];
        boost::random::uniform_int_distribution<std::size_t> pick(0, m.size() - 1);
        idx = m[pick(rng)];
    }
    return out;
}

/// Stops once `patience` epochs past max(best_epoch, min_epochs) have gone by
/// without a strict improvement. Epochs are 1-based.
class EarlyStopping {
public:
    EarlyStopping(std::size_t min_epochs, std::size_t patience) : min_epochs_(min_epochs), patience_(patience) {}

    /// Records the metric for `epoch`; returns true if training should stop.
    bool update(std::size_t epoch, double metric) {
        if (best_epoch_ == 0 || metric > best_) {
            best_ = metric;
            best_epoch_ = epoch;
            improved_ = true;
        } else {
            improved_ = false;
        }
        return epoch >= min_epochs_ && epoch - std::max(best_epoch_, min_epochs_) >= patience_;
    }

    bool improved() const noexcept { return improved_; }
    std::size_t best_epoch() const noexcept { return best_epoch_; }
    double best() const noexcept { return best_; }

private:
    std::size_t min_epochs_, patience_;
    std::size_t best_epoch_ = 0;
    double best_ = -std::numeric_limits<double>::infinity();
    bool improved_ = false;
};

template <typename T>
struct Example {
    Tensor<T> x;
    int label = 0;
    std::string id;
};

template <typename T>
std::vector<Example<T>> to_examples(const std::vector<Bag>& bags) {
    std::vector<Example<T>> out;
    out.reserve(bags.size());
    for (const auto& b : bags) out.push_back({b.tensor<T>(), b.label, b.id});
    return out;
}

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_metric = std::numeric_limits<double>::quiet_NaN();
    double lr = 0.0;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    std::size_t epochs_run = 0;

    std::string history_csv() const {
        std::ostringstream os;
        os.precision(10);
        os << "epoch,train_loss,val_metric,lr\n";
        for (const auto& r : history) {
            os << r.epoch << ',' << r.train_loss << ',';
            if (!std::isnan(r.val_metric)) os << r.val_metric;
            os << ',' << r.lr << '\n';
        }
        return os.str();
    }
};

template <typename T>
struct Prediction {
    std::vector<double> probs;
    int label = 0;
};

template <typename T>
Prediction<T> predict(MilModel<T>& model, const Tensor<T>& x) {
    NoGradGuard guard;
    Rng unused(0);
    const Tensor<T> p = softmax(model.forward(x, false, unused).logits, 1);
    Prediction<T> out;
    out.probs.assign(p.data().begin(), p.data().end());
    out.label = static_cast<int>(std::max_element(out.probs.begin(), out.probs.end()) - out.probs.begin());
    return out;
}

/// Eval-mode metrics over a set of bags; `loss` is the mean cross-entropy.
template <typename T>
MetricReport evaluate(MilModel<T>& model, const std::vector<Example<T>>& data) {
    std::vector<int> preds, labels;
    std::vector<double> scores;
    double loss = 0.0;
    for (const auto& ex : data) {
        const auto p = predict(model, ex.x);
        preds.push_back(p.label);
        labels.push_back(ex.label);
        scores.push_back(p.probs.size() == 2 ? p.probs[1] : 0.0);
        loss -= std::log(std::max(p.probs.at(static_cast<std::size_t>(ex.label)), 1e-300));
    }
    MetricReport r = make_report(preds, labels, scores, model.num_classes());
    r.loss = data.empty() ? 0.0 : loss / static_cast<double>(data.size());
    return r;
}

struct TrainHooks {
    /// Replaces the validation metric of an epoch (1-based) when set.
    std::function<double(std::size_t)> val_metric_override;
    /// Called after every epoch.
    std::function<void(const EpochRecord&)> on_epoch;
};

/// Batch-size-1 AdamW training with per-step cosine decay over
/// max_epochs × |train| steps and class-weighted sampling. With validation
/// data the best-scoring parameters are restored at the end.
template <typename T>
TrainResult train(MilModel<T>& model, const std::vector<Example<T>>& train_set, const std::vector<Example<T>>* val_set,
                  const TrainConfig& cfg, const TrainHooks& hooks = {}) {
    cfg.validate();
    if (train_set.empty()) throw ConfigError("train: empty training set");
    const bool has_val = val_set != nullptr && !val_set->empty();
    const bool monitored = has_val || static_cast<bool>(hooks.val_metric_override);
    const std::size_t epochs = monitored ? cfg.max_epochs : cfg.epochs_no_val;
    const std::size_t total_steps = cfg.max_epochs * train_set.size();

    Rng sampler_rng(child_seed(cfg.seed, "sampler"));
    Rng dropout_rng(child_seed(cfg.seed, "dropout"));
    AdamW<T> opt(model.parameters(), {0.9, 0.999, 1e-8, cfg.weight_decay});
    EarlyStopping stopper(cfg.min_epochs, cfg.patience);

    std::vector<int> labels;
    for (const auto& ex : train_set) labels.push_back(ex.label);

    const auto params = model.parameters();
    std::vector<std::vector<T>> best_state;
    TrainResult result;
    std::size_t step = 0;

    for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
        const auto order = weighted_sampler(labels, model.num_classes(), sampler_rng);
        double loss_sum = 0.0;
        double lr = cfg.lr;
        for (std::size_t idx : order) {
            const auto& ex = train_set[idx];
            opt.zero_grad();
            const Tensor<T> loss =
                cross_entropy_with_logits(model.forward(ex.x, true, dropout_rng).logits, static_cast<std::size_t>(ex.label));
            const double l = static_cast<double>(loss.item());
            if (!std::isfinite(l)) {
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " on bag '" + ex.id + "'");
            }
            loss.backward();
            lr = cosine_lr(step, total_steps, cfg.lr);
            opt.step(lr);
            ++step;
            loss_sum += l;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(order.size());
        rec.lr = lr;
        bool stop = false;
        if (monitored) {
            rec.val_metric = hooks.val_metric_override ? hooks.val_metric_override(epoch)
                                                       : evaluate(model, *val_set).primary();
            stop = stopper.update(epoch, rec.val_metric);
            if (stopper.improved()) {
                best_state.clear();
                for (const auto& p : params) best_state.push_back(p.tensor.to_vector());
                result.best_epoch = epoch;
            }
        }
        result.history.push_back(rec);
        result.epochs_run = epoch;
        if (hooks.on_epoch) hooks.on_epoch(rec);
        if (stop) break;
    }

    if (!best_state.empty()) {
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto dst = params[k].tensor.node()->data.begin();
            std::copy(best_state[k].begin(), best_state[k].end(), dst);
        }
    }
    return result;
}

}  // namespace mammoth
