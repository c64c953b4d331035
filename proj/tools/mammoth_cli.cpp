// Copyright (c) 2026 The mammoth-mil Authors
// SPDX-License-Identifier: Apache-2.0

// mammoth_cli: dataset generation, training, evaluation, benchmarking,
// routing export, gradient-interference analysis and gradient checks.
//
// Options may also come from a "key = value" file given with --config;
// flags on the command line win over the file.
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mammoth/bench.hpp"
#include "mammoth/checkpoint.hpp"
#include "mammoth/gradient_suite.hpp"
#include "mammoth/interp.hpp"
#include "mammoth/synthgen.hpp"
#include "mammoth/trainer.hpp"

namespace fs = std::filesystem;
using namespace mammoth;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Options {
    std::string out = "out";
    std::uint64_t seed = 0;

    // data
    SynthSpec synth;
    std::string rule = "co_occurrence:0:1:0.1";
    std::string data;  // manifest
    std::string split = "test";

    // model
    std::string layer = "mammoth";
    std::string agg = "mean";
    LayerOptions lo;
    std::size_t attn_dim = 128;
    double feature_dropout = 0.1;

    TrainConfig train;

    // route / eval
    std::string checkpoint;
    std::string bag;

    // bench
    std::vector<std::string> variants{"linear", "mammoth"};
    std::size_t bench_n = 10000;
    std::size_t trials = 1000;
    std::size_t warmup = 50;

    // igi
    std::string igi_target = "auto";
    std::size_t clusters = 8;
    std::size_t per_cluster = 100;

    // gradcheck
    std::size_t instances = 20;
    double tolerance = 1e-4;
};

void write_json(const fs::path& path, const nlohmann::json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

nlohmann::json model_config(const Options& o, std::size_t d_in, std::size_t classes) {
    LayerOptions lo = o.lo;
    lo.kind = parse_layer_tag(o.layer);
    lo.d_in = d_in;
    AggregatorConfig agg{parse_agg_tag(o.agg), lo.d_out, classes, o.attn_dim};
    return {{"layer", lo.to_config()}, {"aggregator", agg.to_json()}, {"feature_dropout", o.feature_dropout}};
}

nlohmann::json run_config(const Options& o, const std::string& command) {
    nlohmann::json j = {{"command", command},       {"out", o.out},         {"seed", o.seed},
                        {"layer", o.layer},         {"aggregator", o.agg},  {"train", o.train.to_json()},
                        {"feature_dropout", o.feature_dropout}};
    if (!o.data.empty()) j["data"] = o.data;
    if (!o.checkpoint.empty()) j["checkpoint"] = o.checkpoint;
    if (command == "gen") j["synth"] = o.synth.to_json();
    return j;
}

std::size_t num_classes(const Dataset& ds) {
    int top = 0;
    for (const auto* split : {&ds.train, &ds.val, &ds.test})
        for (const auto& b : *split) top = std::max(top, b.label);
    return static_cast<std::size_t>(std::max(top + 1, 2));
}

const std::vector<Bag>& pick_split(const Dataset& ds, const std::string& split) {
    if (split == "train") return ds.train;
    if (split == "val") return ds.val;
    if (split == "test") return ds.test;
    throw UsageError("unknown split '" + split + "' (expected train, val or test)");
}

Dataset load_manifest(const Options& o) {
    if (o.data.empty()) throw UsageError("--data <manifest.csv> is required");
    if (!fs::exists(o.data)) throw UsageError("manifest not found: " + o.data);
    return load_dataset(o.data);
}

int cmd_gen(Options o) {
    o.synth.rule = Rule::parse(o.rule);
    o.synth.seed = o.seed;
    o.synth.validate();
    const Dataset ds = generate_dataset(o.synth);
    const fs::path dir = o.out;
    fs::create_directories(dir / "bags");
    std::vector<ManifestEntry> entries;
    std::map<std::string, std::map<int, std::size_t>> counts;
    std::size_t n_lo = SIZE_MAX, n_hi = 0, n_sum = 0;
    for (const auto& [split, bags] : {std::pair{"train", &ds.train}, {"val", &ds.val}, {"test", &ds.test}}) {
        for (const auto& b : *bags) {
            const std::string rel = "bags/" + b.id + ".milb";
            write_bag(dir / rel, b);
            entries.push_back({rel, b.label, split});
            ++counts[split][b.label];
            n_lo = std::min(n_lo, b.n);
            n_hi = std::max(n_hi, b.n);
            n_sum += b.n;
        }
    }
    write_file_atomic(dir / "manifest.csv", encode_manifest(entries));
    nlohmann::json summary = {{"run_config", run_config(o, "gen")}, {"bags", entries.size()}};
    for (const auto& [split, c] : counts) {
        std::cout << split << ":";
        for (const auto& [label, n] : c) {
            std::cout << " class" << label << "=" << n;
            summary["class_counts"][split][std::to_string(label)] = n;
        }
        std::cout << "\n";
    }
    if (!entries.empty()) {
        const double mean = static_cast<double>(n_sum) / static_cast<double>(entries.size());
        std::cout << "instances per bag: min " << n_lo << ", mean " << mean << ", max " << n_hi << "\n";
        summary["instances"] = {{"min", n_lo}, {"mean", mean}, {"max", n_hi}};
    }
    write_json(dir / "dataset.json", summary);
    std::cout << "wrote " << entries.size() << " bags and " << (dir / "manifest.csv").string() << "\n";
    return 0;
}

int cmd_train(const Options& o) {
    const Dataset ds = load_manifest(o);
    if (ds.train.empty()) throw UsageError("manifest has no train split");
    const std::size_t classes = num_classes(ds);
    Rng init(child_seed(o.seed, "init"));
    auto model = make_model<float>(model_config(o, ds.train.front().d, classes), init);
    TrainConfig tc = o.train;
    tc.seed = o.seed;
    const auto tr = to_examples<float>(ds.train), va = to_examples<float>(ds.val), te = to_examples<float>(ds.test);
    std::cout << "training " << o.layer << " + " << o.agg << " (" << model->parameter_count() << " parameters) on "
              << tr.size() << " bags\n";
    const TrainResult result = train(*model, tr, va.empty() ? nullptr : &va, tc, TrainHooks{{}, [](const EpochRecord& r) {
                                         std::cout << "epoch " << r.epoch << " loss " << r.train_loss;
                                         if (!std::isnan(r.val_metric)) std::cout << " val " << r.val_metric;
                                         std::cout << "\n";
                                     }});
    const fs::path dir = o.out;
    fs::create_directories(dir);
    write_file_atomic(dir / "history.csv", result.history_csv());
    const nlohmann::json rc = run_config(o, "train");
    save_checkpoint(dir / "model.mmth", *model, {{"run_config", rc}});

    nlohmann::json report = {{"run_config", rc},
                             {"model", model->config()},
                             {"parameters", model->parameter_count()},
                             {"epochs_run", result.epochs_run},
                             {"best_epoch", result.best_epoch}};
    if (!te.empty()) {
        const MetricReport m = evaluate(*model, te);
        report["test"] = m.to_json();
        std::cout << "test balanced_accuracy " << m.balanced_accuracy;
        if (m.binary()) std::cout << " auroc " << m.auroc;
        std::cout << "\n";
    }
    write_json(dir / "report.json", report);
    return 0;
}

int cmd_eval(const Options& o) {
    if (o.checkpoint.empty()) throw UsageError("--checkpoint is required");
    const auto ck = load_checkpoint<float>(o.checkpoint);
    const Dataset ds = load_manifest(o);
    const auto& bags = pick_split(ds, o.split);
    if (bags.empty()) throw UsageError("split '" + o.split + "' is empty");
    const MetricReport m = evaluate(*ck.model, to_examples<float>(bags));
    fs::create_directories(o.out);
    write_json(fs::path(o.out) / "eval.json",
               {{"run_config", run_config(o, "eval")}, {"split", o.split}, {"metrics", m.to_json()}});
    std::cout << o.split << " balanced_accuracy " << m.balanced_accuracy;
    if (m.binary()) std::cout << " auroc " << m.auroc;
    std::cout << "\n";
    return 0;
}

int cmd_bench(const Options& o) {
    std::vector<BenchResult> rows;
    std::vector<nlohmann::json> configs;
    Rng rng(child_seed(o.seed, "bench"));
    for (const auto& tag : o.variants) {
        LayerOptions lo = o.lo;
        lo.kind = parse_layer_tag(tag);
        const nlohmann::json cfg = lo.to_config();
        configs.push_back(cfg);
        auto layer = make_layer<float>(cfg, rng);
        BenchResult r;
        r.variant = tag;
        r.n = o.bench_n;
        r.d = lo.d_in;
        r.d_out = lo.d_out;
        r.macs = count_macs(cfg, o.bench_n);
        r.params = layer->parameter_count();
        r.peak_bytes = peak_bytes(cfg, o.bench_n);
        const LatencyStats s = measure_latency(*layer, o.bench_n, o.trials, o.warmup, rng);
        r.latency_ms_mean = s.mean_ms;
        r.latency_ms_std = s.std_ms;
        std::cout << tag << ": " << r.macs << " MACs, " << r.params << " params, " << s.mean_ms << " +- " << s.std_ms
                  << " ms\n";
        rows.push_back(r);
    }
    fs::create_directories(o.out);
    write_file_atomic(fs::path(o.out) / "bench.csv", bench_csv(rows));
    nlohmann::json table = nlohmann::json::array();
    for (const auto& p : compare_params(configs))
        table.push_back({{"variant", p.variant}, {"experts", p.experts}, {"params", p.params}, {"over_budget", p.over_budget}});
    write_json(fs::path(o.out) / "params.json", {{"run_config", run_config(o, "bench")}, {"params", table}});
    return 0;
}

int cmd_route(const Options& o) {
    if (o.checkpoint.empty() || o.bag.empty()) throw UsageError("--checkpoint and --bag are required");
    const auto ck = load_checkpoint<float>(o.checkpoint);
    auto* layer = dynamic_cast<MammothLayer<float>*>(&ck.model->layer());
    if (!layer) throw UsageError("route needs a mammoth checkpoint, got variant '" +
                                 ck.header.at("variant").get<std::string>() + "'");
    const Bag bag = read_bag(o.bag);
    Rng unused(0);
    NoGradGuard guard;
    const RoutingRecord rec = layer->forward_full(bag.tensor<float>(), false, unused).routing(bag.id);
    fs::create_directories(o.out);
    std::ostringstream per_head, mean;
    write_routing_csv(per_head, rec);
    write_routing_mean_csv(mean, rec);
    write_file_atomic(fs::path(o.out) / "routing.csv", per_head.str());
    write_file_atomic(fs::path(o.out) / "routing_mean.csv", mean.str());
    std::cout << "routing for " << bag.n << " instances over " << rec.heads << " heads x " << rec.experts
              << " experts x " << rec.slots << " slots\n";
    return 0;
}

int cmd_igi(const Options& o) {
    const Dataset ds = load_manifest(o);
    const auto& bags = pick_split(ds, o.split);
    if (bags.empty()) throw UsageError("split '" + o.split + "' is empty");
    std::unique_ptr<MilModel<double>> model;
    if (!o.checkpoint.empty()) {
        model = load_checkpoint<double>(o.checkpoint).model;
    } else {
        Rng init(child_seed(o.seed, "init"));
        model = make_model<double>(model_config(o, bags.front().d, num_classes(ds)), init);
    }
    IgiOptions io;
    io.clusters = o.clusters;
    io.per_cluster = o.per_cluster;
    io.seed = o.seed;
    const LayerKind kind = model->layer().kind();
    if (o.igi_target == "auto") {
        if (kind == LayerKind::linear) io.target = IgiTarget::linear;
        else if (kind == LayerKind::mammoth)
            io.target = model->layer().config().at("experts").get<std::size_t>() == 1 ? IgiTarget::single_expert
                                                                                      : IgiTarget::multi_expert;
        else throw UsageError("igi supports linear and mammoth layers only");
    } else if (o.igi_target == "linear") {
        io.target = IgiTarget::linear;
    } else if (o.igi_target == "single_expert") {
        io.target = IgiTarget::single_expert;
    } else if (o.igi_target == "multi_expert") {
        io.target = IgiTarget::multi_expert;
    } else {
        throw UsageError("unknown --igi-target '" + o.igi_target + "'");
    }
    const IGIReport r = igi_protocol(*model, bags, io);
    fs::create_directories(o.out);
    write_json(fs::path(o.out) / "igi.json", {{"run_config", run_config(o, "igi")}, {"igi", r.to_json()}});
    std::cout << "intra " << r.intra_mean << " inter " << r.inter_mean << " p " << r.test.p_value;
    if (!std::isnan(r.within_expert_mean)) std::cout << " within-expert " << r.within_expert_mean;
    std::cout << "\n";
    return 0;
}

int cmd_gradcheck(const Options& o) {
    const auto rows = run_gradient_suite(o.instances, o.seed);
    std::ostringstream csv;
    csv << "case,instances,checked,kinks,max_rel_error,worst\n";
    bool ok = true;
    for (const auto& r : rows) {
        csv << r.name << ',' << r.instances << ',' << r.checked << ',' << r.kinks << ',' << r.max_rel_error << ','
            << r.worst << '\n';
        if (!(r.max_rel_error < o.tolerance)) {
            ok = false;
            std::cout << "FAIL " << r.name << " max rel error " << r.max_rel_error << " at " << r.worst << "\n";
        }
    }
    fs::create_directories(o.out);
    write_file_atomic(fs::path(o.out) / "gradcheck.csv", csv.str());
    std::cout << rows.size() << " cases checked, " << (ok ? "all" : "not all") << " below " << o.tolerance << "\n";
    return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    Options o;
    CLI::App app{"Mixture-of-experts layers for multiple instance learning"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "", "Read options from a file of 'key = value' lines");
    app.allow_config_extras(CLI::config_extras_mode::error);

    app.add_option("--out", o.out, "Output directory")->capture_default_str();
    app.add_option("--seed", o.seed, "Master seed")->capture_default_str();

    auto* g = app.add_option_group("data");
    g->add_option("--data", o.data, "Dataset manifest (manifest.csv)");
    g->add_option("--split", o.split, "Split for eval/igi")->capture_default_str();
    g->add_option("--rule", o.rule, "Label rule: presence:A:RHO, co_occurrence:A:B:RHO or majority")->capture_default_str();
    g->add_option("--concepts", o.synth.concepts)->capture_default_str();
    g->add_option("--dim", o.synth.dim)->capture_default_str();
    g->add_option("--sigma", o.synth.sigma)->capture_default_str();
    g->add_option("--sep", o.synth.sep)->capture_default_str();
    g->add_option("--n-min", o.synth.n_min)->capture_default_str();
    g->add_option("--n-max", o.synth.n_max)->capture_default_str();
    g->add_option("--mix", o.synth.mix, "Dirichlet concentration")->capture_default_str();
    g->add_option("--n-train", o.synth.n_train)->capture_default_str();
    g->add_option("--n-val", o.synth.n_val)->capture_default_str();
    g->add_option("--n-test", o.synth.n_test)->capture_default_str();

    auto* m = app.add_option_group("model");
    m->add_option("--layer", o.layer, "linear|mammoth|soft|sparse_softmax|sparse_sinkhorn|sparse_mh")->capture_default_str();
    m->add_option("--agg", o.agg, "mean|max|abmil")->capture_default_str();
    m->add_option("--d-in", o.lo.d_in, "Input dim (bench only; training uses the data)")->capture_default_str();
    m->add_option("--d-out", o.lo.d_out)->capture_default_str();
    m->add_option("--heads", o.lo.heads)->capture_default_str();
    m->add_option("--part-dim", o.lo.part_dim, "0 = 256/heads");
    m->add_option("--rank", o.lo.rank, "0 = budget solver");
    m->add_option("--experts", o.lo.experts, "0 = variant default");
    m->add_option("--slots", o.lo.slots, "Slots per expert, 0 = default");
    m->add_option("--total-slots", o.lo.total_slots, "Total slots, split evenly over experts");
    m->add_option("--top-k", o.lo.top_k)->capture_default_str();
    m->add_option("--sinkhorn-iters", o.lo.sinkhorn_iters)->capture_default_str();
    m->add_flag("--global-phi", o.lo.global_phi, "Share one Phi across heads");
    m->add_option("--input-dropout", o.lo.input_dropout)->capture_default_str();
    m->add_option("--ff-dropout", o.lo.ff_dropout)->capture_default_str();
    m->add_option("--feature-dropout", o.feature_dropout)->capture_default_str();
    m->add_option("--attn-dim", o.attn_dim)->capture_default_str();

    auto* t = app.add_option_group("training");
    t->add_option("--lr", o.train.lr)->capture_default_str();
    t->add_option("--weight-decay", o.train.weight_decay)->capture_default_str();
    t->add_option("--max-epochs", o.train.max_epochs)->capture_default_str();
    t->add_option("--min-epochs", o.train.min_epochs)->capture_default_str();
    t->add_option("--patience", o.train.patience)->capture_default_str();
    t->add_option("--epochs-no-val", o.train.epochs_no_val)->capture_default_str();

    auto* x = app.add_option_group("analysis");
    x->add_option("--checkpoint", o.checkpoint, "Model checkpoint (.mmth)");
    x->add_option("--bag", o.bag, "Bag file (.milb) for route");
    x->add_option("--variants", o.variants, "Layer variants to benchmark")->delimiter(',');
    x->add_option("--n", o.bench_n, "Instances per benchmark input")->capture_default_str();
    x->add_option("--trials", o.trials)->capture_default_str();
    x->add_option("--warmup", o.warmup)->capture_default_str();
    x->add_option("--igi-target", o.igi_target, "auto|linear|single_expert|multi_expert")->capture_default_str();
    x->add_option("--clusters", o.clusters)->capture_default_str();
    x->add_option("--per-cluster", o.per_cluster)->capture_default_str();
    x->add_option("--instances", o.instances, "Random instances per gradient case")->capture_default_str();
    x->add_option("--tolerance", o.tolerance)->capture_default_str();

    const std::map<std::string, std::function<int(const Options&)>> commands{
        {"gen", cmd_gen},       {"train", cmd_train}, {"eval", cmd_eval},          {"bench", cmd_bench},
        {"route", cmd_route},   {"igi", cmd_igi},     {"gradcheck", cmd_gradcheck},
    };
    const std::map<std::string, std::string> help{
        {"gen", "Generate a synthetic bag dataset and manifest"},
        {"train", "Train a model; writes model.mmth, history.csv and report.json"},
        {"eval", "Evaluate a checkpoint on a manifest split"},
        {"bench", "MACs, parameters, working set and latency per variant"},
        {"route", "Export per-head and head-averaged routing weights for one bag"},
        {"igi", "Instance gradient interference analysis"},
        {"gradcheck", "Finite-difference check of every op and layer"},
    };
    for (const auto& [name, text] : help) app.add_subcommand(name, text);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }
    const std::string name = app.get_subcommands().front()->get_name();
    try {
        return commands.at(name)(o);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
