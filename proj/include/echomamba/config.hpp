#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "echomamba/errors.hpp"

namespace echomamba {

// Every knob of one run. File values override defaults, flags override the
// file; the effective values are echoed into the run log header.
struct RunConfig {
    // dataset
    std::string dataset_path;
    std::string dataset_format = "csv_triples";  // movielens_dat | csv_triples
    std::int64_t k_core = 5;
    std::string k_core_mode = "iterative";  // iterative | single_pass
    std::int64_t l_max = 200;
    std::string cache_path;

    // model
    std::int64_t d_model = 64;
    std::int64_t n_state = 16;
    std::int64_t kernel = 4;
    std::int64_t expand = 2;
    std::int64_t n_layers = 1;
    double dropout = 0.2;
    double filter_dropout = -1.0;  // -1 = follow model.dropout
    bool filter_enabled = true;
    bool filter_per_layer = false;
    bool bidirectional = true;
    std::string discretization = "zoh";   // zoh | euler
    std::string block_combine = "gated";  // gated | residual

    // training
    double lr = 0.001;
    std::int64_t batch_size = 2048;
    std::int64_t eval_batch_size = 4096;
    std::int64_t epochs = 300;
    std::int64_t patience = 10;
    std::uint64_t seed = 42;
    int precision = 32;  // 32 | 64
    bool all_prefixes = false;
    bool log_timing = true;
    std::string resume_from;

    // output
    std::string log_path;  // empty = stdout
    std::string checkpoint_path;

    // eval
    bool mask_seen = false;
    std::string eval_split = "test";  // validation | test

    double effective_filter_dropout() const {
        return filter_dropout < 0.0 ? dropout : filter_dropout;
    }
};

// Apply one "key = value" assignment; throws ConfigError on unknown keys or
// unparseable values.
void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value);

// Parse a flat key=value file ('#' comments, blank lines allowed) on top of
// `base`. Collects every bad line before throwing.
RunConfig parse_config_file(const std::string& path, RunConfig base = {});

// Same, from an in-memory string (used by checkpoints).
RunConfig parse_config_text(const std::string& text, RunConfig base = {});

// Every effective key in stable order.
std::vector<std::pair<std::string, std::string>> config_to_kv(const RunConfig& cfg);
std::string config_to_text(const RunConfig& cfg);

// Range/consistency checks; lists every offending key in one error.
void validate_config(const RunConfig& cfg);

}  // namespace echomamba
