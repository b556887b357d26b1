// Command-line entry point: ingest, train, eval, bench, gradcheck.
//
// Exit codes: 0 success, 1 config validation error, 2 runtime failure,
// 3 verification-suite failure.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "echomamba/checkpoint.hpp"
#include "echomamba/config.hpp"
#include "echomamba/data.hpp"
#include "echomamba/evaluator.hpp"
#include "echomamba/trainer.hpp"
#include "echomamba/verify.hpp"

using namespace echomamba;
using nlohmann::ordered_json;

namespace {

SequenceDataset load_dataset(const RunConfig& cfg) {
    if (!cfg.cache_path.empty() && std::filesystem::exists(cfg.cache_path))
        return load_dataset_cache(cfg.cache_path);
    if (cfg.dataset_path.empty())
        throw ConfigError("dataset.path is required (no usable dataset.cache_path)");
    auto log = ingest(cfg.dataset_path, parse_log_format(cfg.dataset_format));
    auto filtered = k_core_filter(log, static_cast<int>(cfg.k_core),
                                  parse_k_core_mode(cfg.k_core_mode));
    return build_sequences(filtered);
}

int cmd_ingest(const RunConfig& cfg) {
    auto ds = load_dataset(cfg);
    if (!cfg.cache_path.empty()) save_dataset_cache(ds, cfg.cache_path);
    ordered_json stats;
    stats["n_users"] = ds.stats.n_users;
    stats["n_items"] = ds.stats.n_items;
    stats["n_interactions"] = ds.stats.n_interactions;
    stats["avg_length"] = ds.stats.avg_length;
    if (ds.excluded_short_users) stats["excluded_short_users"] = ds.excluded_short_users;
    std::cout << stats.dump() << "\n";
    return 0;
}

template <typename T>
int cmd_train(const RunConfig& cfg) {
    auto ds = load_dataset(cfg);
    Rng init = SeededStreams(cfg.seed).stream("init");
    auto model = EchoMambaModel<T>::init(model_config_from(cfg, ds.n_items()), init);
    std::ofstream file;
    if (!cfg.log_path.empty()) {
        file.open(cfg.log_path);
        if (!file) throw DataError("cannot open log file: " + cfg.log_path);
    }
    std::ostream& log = cfg.log_path.empty() ? std::cout : file;
    auto summary = train(model, ds, cfg, log);
    ordered_json done;
    done["epochs_run"] = summary.epochs_run;
    done["final_train_loss"] = summary.final_train_loss;
    done["best_val_hr10"] = summary.best_val_hr10;
    log << done.dump() << "\n";
    return 0;
}

template <typename T>
int cmd_eval(const RunConfig& cfg) {
    RunConfig arch = cfg;
    if (!cfg.checkpoint_path.empty())
        // the checkpoint's embedded config is authoritative for architecture
        arch = parse_config_text(peek_checkpoint_config(cfg.checkpoint_path), cfg);
    auto ds = load_dataset(cfg);
    Rng init = SeededStreams(arch.seed).stream("init");
    auto model = EchoMambaModel<T>::init(model_config_from(arch, ds.n_items()), init);
    if (!cfg.checkpoint_path.empty()) {
        auto params = model.parameters();
        AdamState<T> adam;
        Rng d(0), s(0);
        load_checkpoint(cfg.checkpoint_path, params, adam, d, s);
    }
    const Split split = (cfg.eval_split == "validation") ? Split::Validation : Split::Test;
    auto rep = evaluate(model, ds, split, cfg.eval_batch_size, 10, cfg.mask_seen);
    ordered_json out;
    out["k"] = rep.k;
    out["hr"] = rep.hr;
    out["ndcg"] = rep.ndcg;
    out["mrr"] = rep.mrr;
    out["n_users"] = rep.n_users;
    out["timing"] = {{"eval_seconds", rep.eval_seconds},
                     {"scored_items_per_second", rep.scored_items_per_second}};
    std::cout << out.dump() << "\n";
    return 0;
}

template <typename T>
int cmd_bench(const RunConfig& cfg) {
    auto ds = load_dataset(cfg);
    Rng init = SeededStreams(cfg.seed).stream("init");
    auto model = EchoMambaModel<T>::init(model_config_from(cfg, ds.n_items()), init);

    // median-of-5 training seconds per epoch (forward + loss + backward + adam)
    SeededStreams streams(cfg.seed);
    Rng dropout_rng = streams.stream("dropout");
    Rng shuffle_rng = streams.stream("shuffle");
    auto params = model.parameters();
    AdamState<T> adam;
    adam.lr = cfg.lr;
    adam.reset(params);
    BatchOptions bopt;
    bopt.batch_size = cfg.batch_size;
    bopt.l_max = cfg.l_max;
    bopt.all_prefixes = cfg.all_prefixes;
    std::vector<double> epoch_times;
    for (int run = 0; run < 5; ++run) {
        const auto t0 = std::chrono::steady_clock::now();
        auto batches = make_batches(ds, Split::Train, bopt, &shuffle_rng);
        for (const auto& batch : batches) {
            Tape<T> tape;
            {
                TapeScope<T> scope(tape);
                auto scores = model_forward(model, batch, true, dropout_rng);
                auto loss = cross_entropy(scores, batch.targets);
                backward(loss, tape);
            }
            adam_step(params, adam);
            for (auto& [name, p] : params) p.zero_grad();
        }
        const auto t1 = std::chrono::steady_clock::now();
        epoch_times.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    std::sort(epoch_times.begin(), epoch_times.end());

    auto rep = evaluate(model, ds, Split::Test, cfg.eval_batch_size, 10);
    auto scan = scan_scaling<T>();

    ordered_json out;
    out["train_seconds_per_epoch_median"] = epoch_times[2];
    out["inference_seconds"] = rep.eval_seconds;
    out["parameters"] = model.parameter_count();
    out["parameter_bytes"] = model.parameter_count() * static_cast<std::int64_t>(sizeof(T));
    out["activation_bytes_estimate"] =
        activation_elements_estimate(model.cfg, cfg.batch_size) *
        static_cast<std::int64_t>(sizeof(T));
    out["scan_scaling"] = {{"base_length", scan.base_length},
                           {"seconds_l", scan.seconds_l},
                           {"seconds_2l", scan.seconds_2l},
                           {"ratio", scan.ratio}};
    std::cout << out.dump() << "\n";
    return 0;
}

int cmd_gradcheck() {
    const bool ok = run_gradcheck_suite(std::cout);
    std::cout << (ok ? "[gradcheck] all checks passed\n" : "[gradcheck] FAILURES detected\n");
    return ok ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bidirectional selective state-space sequential recommender"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::int64_t seed = -1;
    int precision = 0;
    bool no_filter = false, unidirectional = false, euler = false, mask_seen = false;
    app.add_option("--config", config_path, "flat key=value config file");
    app.add_option("--seed", seed, "master random seed (overrides config)");
    app.add_option("--precision", precision, "32 or 64 (overrides config)")
        ->check(CLI::IsMember({0, 32, 64}));
    app.add_flag("--no-filter", no_filter, "disable the spectral filter layer");
    app.add_flag("--unidirectional", unidirectional, "forward branch only (no reverse block)");
    app.add_flag("--euler-discretization", euler, "simplified Euler b_bar = delta * B");
    app.add_flag("--mask-seen", mask_seen, "mask already-interacted items during ranking");

    auto* ingest_cmd = app.add_subcommand("ingest", "parse, filter, split, cache, print stats");
    auto* train_cmd = app.add_subcommand("train", "train a model; writes log and checkpoint");
    auto* eval_cmd = app.add_subcommand("eval", "rank held-out targets; prints metrics JSON");
    auto* bench_cmd = app.add_subcommand("bench", "timing / memory / scan-scaling report");
    auto* gradcheck_cmd =
        app.add_subcommand("gradcheck", "64-bit finite-difference verification suite");

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg;
        if (!config_path.empty()) cfg = parse_config_file(config_path, cfg);
        if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
        if (precision != 0) cfg.precision = precision;
        if (no_filter) cfg.filter_enabled = false;
        if (unidirectional) cfg.bidirectional = false;
        if (euler) cfg.discretization = "euler";
        if (mask_seen) cfg.mask_seen = true;
        validate_config(cfg);

        if (gradcheck_cmd->parsed()) return cmd_gradcheck();
        if (ingest_cmd->parsed()) return cmd_ingest(cfg);
        const bool wide = (cfg.precision == 64);
        if (train_cmd->parsed()) return wide ? cmd_train<double>(cfg) : cmd_train<float>(cfg);
        if (eval_cmd->parsed()) return wide ? cmd_eval<double>(cfg) : cmd_eval<float>(cfg);
        if (bench_cmd->parsed()) return wide ? cmd_bench<double>(cfg) : cmd_bench<float>(cfg);
        std::cerr << "no command selected\n";
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
