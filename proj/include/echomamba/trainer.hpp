#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "echomamba/adam.hpp"
#include "echomamba/checkpoint.hpp"
#include "echomamba/config.hpp"
#include "echomamba/data.hpp"
#include "echomamba/evaluator.hpp"
#include "echomamba/model.hpp"

namespace echomamba {

inline ModelConfig model_config_from(const RunConfig& cfg, std::int64_t vocab) {
    ModelConfig mc;
    mc.vocab = vocab;
    mc.d_model = cfg.d_model;
    mc.n_state = cfg.n_state;
    mc.kernel = cfg.kernel;
    mc.expand = cfg.expand;
    mc.n_layers = cfg.n_layers;
    mc.l_max = cfg.l_max;
    mc.dropout = cfg.dropout;
    mc.filter_dropout = cfg.effective_filter_dropout();
    mc.filter_enabled = cfg.filter_enabled;
    mc.filter_per_layer = cfg.filter_per_layer;
    mc.bidirectional = cfg.bidirectional;
    mc.ssm.discretization = (cfg.discretization == "euler") ? DiscretizationMode::EulerB
                                                            : DiscretizationMode::ExactZoh;
    mc.ssm.combine = (cfg.block_combine == "residual") ? BlockCombine::Residual
                                                       : BlockCombine::Gated;
    return mc;
}

struct TrainSummary {
    std::int64_t epochs_run = 0;
    double final_train_loss = 0.0;
    double best_val_hr10 = -1.0;
    std::vector<double> epoch_losses;
    std::vector<double> val_hr10s;
};

// Epoch loop: batches -> forward -> cross-entropy -> backward -> Adam, with
// per-epoch validation HR@10, early stopping, JSON-lines logging and an
// optional per-epoch checkpoint.
template <typename T>
TrainSummary train(EchoMambaModel<T>& model, const SequenceDataset& ds, const RunConfig& cfg,
                   std::ostream& log) {
    SeededStreams streams(cfg.seed);
    Rng dropout_rng = streams.stream("dropout");
    Rng shuffle_rng = streams.stream("shuffle");

    auto params = model.parameters();
    AdamState<T> adam;
    adam.lr = cfg.lr;
    adam.reset(params);

    TrainProgress progress;
    if (!cfg.resume_from.empty())
        progress = load_checkpoint(cfg.resume_from, params, adam, dropout_rng, shuffle_rng);

    {
        nlohmann::ordered_json header;
        nlohmann::ordered_json conf = nlohmann::ordered_json::object();
        for (const auto& [k, v] : config_to_kv(cfg)) conf[k] = v;
        header["config"] = conf;
        header["n_users"] = ds.stats.n_users;
        header["n_items"] = ds.stats.n_items;
        header["parameters"] = model.parameter_count();
        log << header.dump() << "\n";
    }

    BatchOptions bopt;
    bopt.batch_size = cfg.batch_size;
    bopt.l_max = cfg.l_max;
    bopt.all_prefixes = cfg.all_prefixes;

    TrainSummary summary;
    summary.best_val_hr10 = progress.best_val_hr;
    for (std::int64_t epoch = progress.epochs_done; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        auto batches = make_batches(ds, Split::Train, bopt, &shuffle_rng);
        double loss_sum = 0.0;
        std::int64_t rows = 0;
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            const Batch& batch = batches[bi];
            Tape<T> tape;
            double loss_value;
            {
                TapeScope<T> scope(tape);
                Tensor<T> scores = model_forward(model, batch, /*training=*/true, dropout_rng);
                Tensor<T> loss = cross_entropy(scores, batch.targets);
                loss_value = static_cast<double>(loss.item());
                if (!std::isfinite(loss_value))
                    throw NumericError("training diverged: non-finite loss at epoch " +
                                       std::to_string(epoch) + ", batch " + std::to_string(bi));
                backward(loss, tape);
            }
            adam_step(params, adam);
            for (auto& [name, p] : params) p.zero_grad();
            loss_sum += loss_value * static_cast<double>(batch.rows);
            rows += batch.rows;
        }
        const double train_loss = rows ? loss_sum / static_cast<double>(rows) : 0.0;

        EvalReport val = evaluate(model, ds, Split::Validation, cfg.eval_batch_size, 10);
        const auto t1 = std::chrono::steady_clock::now();

        nlohmann::ordered_json line;
        line["epoch"] = epoch;
        line["train_loss"] = train_loss;
        line["val_hr10"] = val.hr;
        if (cfg.log_timing) line["wall_seconds"] = std::chrono::duration<double>(t1 - t0).count();
        log << line.dump() << "\n";

        summary.epochs_run = epoch + 1;
        summary.final_train_loss = train_loss;
        summary.epoch_losses.push_back(train_loss);
        summary.val_hr10s.push_back(val.hr);

        if (val.hr > progress.best_val_hr) {
            progress.best_val_hr = val.hr;
            progress.epochs_since_best = 0;
        } else {
            ++progress.epochs_since_best;
        }
        summary.best_val_hr10 = progress.best_val_hr;
        progress.epochs_done = epoch + 1;
        if (!cfg.checkpoint_path.empty())
            save_checkpoint(cfg.checkpoint_path, config_to_text(cfg), params, adam, progress,
                            dropout_rng, shuffle_rng);
        if (progress.epochs_since_best >= cfg.patience) break;
    }
    return summary;
}

}  // namespace echomamba
