#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "echomamba/adam.hpp"
#include "echomamba/errors.hpp"
#include "echomamba/rng.hpp"
#include "echomamba/tensor.hpp"

namespace echomamba {

// Versioned binary container: config text, epoch counters, rng streams,
// named parameter arrays and optimizer moments. Reloading into the same
// architecture and precision reproduces bit-identical forward passes.

namespace ckpt_detail {

constexpr char kMagic[8] = {'E', 'M', 'C', 'K', '0', '0', '0', '1'};

template <typename T>
void write_pod(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw ParseError("truncated checkpoint: " + path);
    return v;
}

inline void write_string(std::ofstream& out, const std::string& s) {
    write_pod<std::uint64_t>(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::ifstream& in, const std::string& path) {
    const auto len = read_pod<std::uint64_t>(in, path);
    std::string s(len, '\0');
    in.read(s.data(), static_cast<std::streamsize>(len));
    if (!in) throw ParseError("truncated checkpoint: " + path);
    return s;
}

template <typename T>
void write_array(std::ofstream& out, const std::vector<T>& v) {
    write_pod<std::uint64_t>(out, v.size());
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(T)));
}

template <typename T>
void read_array_into(std::ifstream& in, std::vector<T>& v, const std::string& path) {
    const auto len = read_pod<std::uint64_t>(in, path);
    if (len != v.size())
        throw ParseError("checkpoint array length " + std::to_string(len) +
                         " does not match model (" + std::to_string(v.size()) + "): " + path);
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(len * sizeof(T)));
    if (!in) throw ParseError("truncated checkpoint: " + path);
}

}  // namespace ckpt_detail

struct TrainProgress {
    std::int64_t epochs_done = 0;
    double best_val_hr = -1.0;
    std::int64_t epochs_since_best = 0;
};

template <typename T>
void save_checkpoint(const std::string& path, const std::string& config_text,
                     std::vector<std::pair<std::string, Tensor<T>>>& params,
                     const AdamState<T>& adam, const TrainProgress& progress,
                     const Rng& dropout_rng, const Rng& shuffle_rng) {
    namespace d = ckpt_detail;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out.write(d::kMagic, sizeof(d::kMagic));
    d::write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(sizeof(T)));
    d::write_string(out, config_text);
    d::write_pod<std::int64_t>(out, progress.epochs_done);
    d::write_pod<double>(out, progress.best_val_hr);
    d::write_pod<std::int64_t>(out, progress.epochs_since_best);
    d::write_string(out, dropout_rng.serialize());
    d::write_string(out, shuffle_rng.serialize());

    d::write_pod<std::uint64_t>(out, params.size());
    for (auto& [name, p] : params) {
        d::write_string(out, name);
        d::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p.shape().size()));
        for (auto dim : p.shape()) d::write_pod<std::int64_t>(out, dim);
        d::write_array(out, p.values());
    }

    d::write_pod<std::int64_t>(out, adam.step);
    d::write_pod<double>(out, adam.lr);
    d::write_pod<double>(out, adam.beta1);
    d::write_pod<double>(out, adam.beta2);
    d::write_pod<double>(out, adam.eps);
    d::write_pod<std::uint64_t>(out, adam.m.size());
    for (std::size_t i = 0; i < adam.m.size(); ++i) {
        d::write_array(out, adam.m[i]);
        d::write_array(out, adam.v[i]);
    }
    if (!out) throw DataError("failed writing checkpoint: " + path);
}

// Reads only the embedded config text (to rebuild the architecture before
// loading the arrays).
inline std::string peek_checkpoint_config(const std::string& path) {
    namespace d = ckpt_detail;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || !std::equal(magic, magic + 8, d::kMagic))
        throw ParseError("not a checkpoint (bad magic): " + path);
    (void)d::read_pod<std::uint8_t>(in, path);
    return d::read_string(in, path);
}

template <typename T>
TrainProgress load_checkpoint(const std::string& path,
                              std::vector<std::pair<std::string, Tensor<T>>>& params,
                              AdamState<T>& adam, Rng& dropout_rng, Rng& shuffle_rng) {
    namespace d = ckpt_detail;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || !std::equal(magic, magic + 8, d::kMagic))
        throw ParseError("not a checkpoint (bad magic): " + path);
    const auto prec = d::read_pod<std::uint8_t>(in, path);
    if (prec != sizeof(T))
        throw ParseError("checkpoint precision (" + std::to_string(prec * 8) +
                         "-bit) does not match this run (" + std::to_string(sizeof(T) * 8) +
                         "-bit): " + path);
    (void)d::read_string(in, path);  // config text already consumed by the caller

    TrainProgress progress;
    progress.epochs_done = d::read_pod<std::int64_t>(in, path);
    progress.best_val_hr = d::read_pod<double>(in, path);
    progress.epochs_since_best = d::read_pod<std::int64_t>(in, path);
    dropout_rng.deserialize(d::read_string(in, path));
    shuffle_rng.deserialize(d::read_string(in, path));

    const auto n_params = d::read_pod<std::uint64_t>(in, path);
    if (n_params != params.size())
        throw ParseError("checkpoint has " + std::to_string(n_params) + " parameters, model has " +
                         std::to_string(params.size()) + ": " + path);
    for (auto& [name, p] : params) {
        const std::string got = d::read_string(in, path);
        if (got != name)
            throw ParseError("checkpoint parameter '" + got + "' where model expects '" + name +
                             "': " + path);
        const auto rank = d::read_pod<std::uint32_t>(in, path);
        Shape shape(rank);
        for (auto& dim : shape) dim = d::read_pod<std::int64_t>(in, path);
        if (shape != p.shape())
            throw ParseError("checkpoint shape " + shape_str(shape) + " for '" + name +
                             "' does not match model " + shape_str(p.shape()) + ": " + path);
        d::read_array_into(in, p.values(), path);
    }

    adam.step = d::read_pod<std::int64_t>(in, path);
    adam.lr = d::read_pod<double>(in, path);
    adam.beta1 = d::read_pod<double>(in, path);
    adam.beta2 = d::read_pod<double>(in, path);
    adam.eps = d::read_pod<double>(in, path);
    const auto n_moments = d::read_pod<std::uint64_t>(in, path);
    if (n_moments != params.size())
        throw ParseError("checkpoint moment count mismatch: " + path);
    adam.m.assign(params.size(), {});
    adam.v.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
        adam.m[i].resize(params[i].second.values().size());
        adam.v[i].resize(params[i].second.values().size());
        d::read_array_into(in, adam.m[i], path);
        d::read_array_into(in, adam.v[i], path);
    }
    return progress;
}

}  // namespace echomamba
