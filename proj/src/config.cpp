#include "echomamba/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace echomamba {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    std::size_t b = s.find_last_not_of(" \t\r");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

std::int64_t parse_int(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        const std::int64_t x = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return x;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected an integer, got '" + v + "'");
    }
}

std::uint64_t parse_uint(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        const std::uint64_t x = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return x;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    }
}

double parse_real(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return x;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
}

// shortest representation that round-trips exactly
std::string fmt_real(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace

void apply_config_entry(RunConfig& c, const std::string& key, const std::string& value) {
    if (key == "dataset.path") c.dataset_path = value;
    else if (key == "dataset.format") c.dataset_format = value;
    else if (key == "dataset.k_core") c.k_core = parse_int(value, key);
    else if (key == "dataset.k_core_mode") c.k_core_mode = value;
    else if (key == "dataset.l_max") c.l_max = parse_int(value, key);
    else if (key == "dataset.cache_path") c.cache_path = value;
    else if (key == "model.d") c.d_model = parse_int(value, key);
    else if (key == "model.n") c.n_state = parse_int(value, key);
    else if (key == "model.k") c.kernel = parse_int(value, key);
    else if (key == "model.e") c.expand = parse_int(value, key);
    else if (key == "model.layers") c.n_layers = parse_int(value, key);
    else if (key == "model.dropout") c.dropout = parse_real(value, key);
    else if (key == "model.filter_dropout") c.filter_dropout = parse_real(value, key);
    else if (key == "model.filter_enabled") c.filter_enabled = parse_bool(value, key);
    else if (key == "model.filter_per_layer") c.filter_per_layer = parse_bool(value, key);
    else if (key == "model.bidirectional") c.bidirectional = parse_bool(value, key);
    else if (key == "model.discretization") c.discretization = value;
    else if (key == "model.block_combine") c.block_combine = value;
    else if (key == "training.lr") c.lr = parse_real(value, key);
    else if (key == "training.batch_size") c.batch_size = parse_int(value, key);
    else if (key == "training.eval_batch_size") c.eval_batch_size = parse_int(value, key);
    else if (key == "training.epochs") c.epochs = parse_int(value, key);
    else if (key == "training.patience") c.patience = parse_int(value, key);
    else if (key == "training.seed") c.seed = parse_uint(value, key);
    else if (key == "training.precision") c.precision = static_cast<int>(parse_int(value, key));
    else if (key == "training.all_prefixes") c.all_prefixes = parse_bool(value, key);
    else if (key == "training.log_timing") c.log_timing = parse_bool(value, key);
    else if (key == "training.resume_from") c.resume_from = value;
    else if (key == "output.log_path") c.log_path = value;
    else if (key == "output.checkpoint_path") c.checkpoint_path = value;
    else if (key == "eval.mask_seen") c.mask_seen = parse_bool(value, key);
    else if (key == "eval.split") c.eval_split = value;
    else throw ConfigError("unknown config key '" + key + "'");
}

namespace {

RunConfig parse_config_stream(std::istream& in, const std::string& origin, RunConfig cfg) {
    std::vector<std::string> problems;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            problems.push_back(origin + ":" + std::to_string(line_no) + ": expected key = value");
            continue;
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            apply_config_entry(cfg, key, value);
        } catch (const ConfigError& e) {
            problems.push_back(origin + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (!problems.empty()) {
        std::string msg = "invalid config:";
        for (const auto& p : problems) msg += "\n  " + p;
        throw ConfigError(msg);
    }
    return cfg;
}

}  // namespace

RunConfig parse_config_file(const std::string& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    return parse_config_stream(in, path, std::move(base));
}

RunConfig parse_config_text(const std::string& text, RunConfig base) {
    std::istringstream in(text);
    return parse_config_stream(in, "<config>", std::move(base));
}

std::vector<std::pair<std::string, std::string>> config_to_kv(const RunConfig& c) {
    std::vector<std::pair<std::string, std::string>> kv;
    auto add = [&](const std::string& k, const std::string& v) { kv.emplace_back(k, v); };
    add("dataset.path", c.dataset_path);
    add("dataset.format", c.dataset_format);
    add("dataset.k_core", std::to_string(c.k_core));
    add("dataset.k_core_mode", c.k_core_mode);
    add("dataset.l_max", std::to_string(c.l_max));
    add("dataset.cache_path", c.cache_path);
    add("model.d", std::to_string(c.d_model));
    add("model.n", std::to_string(c.n_state));
    add("model.k", std::to_string(c.kernel));
    add("model.e", std::to_string(c.expand));
    add("model.layers", std::to_string(c.n_layers));
    add("model.dropout", fmt_real(c.dropout));
    add("model.filter_dropout", fmt_real(c.effective_filter_dropout()));
    add("model.filter_enabled", c.filter_enabled ? "true" : "false");
    add("model.filter_per_layer", c.filter_per_layer ? "true" : "false");
    add("model.bidirectional", c.bidirectional ? "true" : "false");
    add("model.discretization", c.discretization);
    add("model.block_combine", c.block_combine);
    add("training.lr", fmt_real(c.lr));
    add("training.batch_size", std::to_string(c.batch_size));
    add("training.eval_batch_size", std::to_string(c.eval_batch_size));
    add("training.epochs", std::to_string(c.epochs));
    add("training.patience", std::to_string(c.patience));
    add("training.seed", std::to_string(c.seed));
    add("training.precision", std::to_string(c.precision));
    add("training.all_prefixes", c.all_prefixes ? "true" : "false");
    add("training.log_timing", c.log_timing ? "true" : "false");
    add("training.resume_from", c.resume_from);
    add("output.log_path", c.log_path);
    add("output.checkpoint_path", c.checkpoint_path);
    add("eval.mask_seen", c.mask_seen ? "true" : "false");
    add("eval.split", c.eval_split);
    return kv;
}

std::string config_to_text(const RunConfig& cfg) {
    std::string out;
    for (const auto& [k, v] : config_to_kv(cfg)) out += k + " = " + v + "\n";
    return out;
}

void validate_config(const RunConfig& c) {
    std::vector<std::string> bad;
    auto require = [&](bool ok, const std::string& msg) {
        if (!ok) bad.push_back(msg);
    };
    require(c.dataset_format == "movielens_dat" || c.dataset_format == "csv_triples",
            "dataset.format: must be movielens_dat or csv_triples");
    require(c.k_core >= 1, "dataset.k_core: must be >= 1");
    require(c.k_core_mode == "iterative" || c.k_core_mode == "single_pass",
            "dataset.k_core_mode: must be iterative or single_pass");
    require(c.l_max >= 1, "dataset.l_max: must be >= 1");
    require(c.d_model >= 1, "model.d: must be >= 1");
    require(c.n_state >= 1, "model.n: must be >= 1");
    require(c.kernel >= 1, "model.k: must be >= 1");
    require(c.expand >= 1, "model.e: must be >= 1");
    require(c.n_layers >= 1, "model.layers: must be >= 1");
    require(c.dropout >= 0.0 && c.dropout < 1.0, "model.dropout: must be in [0, 1)");
    require(c.filter_dropout < 1.0, "model.filter_dropout: must be in [0, 1) or -1");
    require(c.discretization == "zoh" || c.discretization == "euler",
            "model.discretization: must be zoh or euler");
    require(c.block_combine == "gated" || c.block_combine == "residual",
            "model.block_combine: must be gated or residual");
    require(c.lr > 0.0, "training.lr: must be positive");
    require(c.batch_size >= 1, "training.batch_size: must be >= 1");
    require(c.eval_batch_size >= 1, "training.eval_batch_size: must be >= 1");
    require(c.epochs >= 0, "training.epochs: must be >= 0");
    require(c.patience >= 1, "training.patience: must be >= 1");
    require(c.precision == 32 || c.precision == 64, "training.precision: must be 32 or 64");
    require(c.eval_split == "validation" || c.eval_split == "test",
            "eval.split: must be validation or test");
    require(!(c.filter_per_layer && !c.filter_enabled),
            "model.filter_per_layer: conflicts with model.filter_enabled = false");
    if (!bad.empty()) {
        std::string msg = "invalid config:";
        for (const auto& b : bad) msg += "\n  " + b;
        throw ConfigError(msg);
    }
}

}  // namespace echomamba
