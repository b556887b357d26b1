#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "echomamba/data.hpp"
#include "echomamba/nn.hpp"
#include "echomamba/rng.hpp"
#include "echomamba/spectral.hpp"
#include "echomamba/ssm.hpp"
#include "echomamba/tensor.hpp"

namespace echomamba {

struct ModelConfig {
    std::int64_t vocab = 0;  // |V|, real items; embedding row 0 is padding
    std::int64_t d_model = 64;
    std::int64_t n_state = 16;
    std::int64_t kernel = 4;
    std::int64_t expand = 2;
    std::int64_t n_layers = 1;
    std::int64_t l_max = 200;
    double dropout = 0.2;
    double filter_dropout = 0.2;
    bool filter_enabled = true;
    bool filter_per_layer = false;
    bool bidirectional = true;
    SsmOptions ssm;
};

// Embedding -> (spectral filter) -> stacked bidirectional SSM layers ->
// dot-product scores against the tied embedding table.
template <typename T>
struct EchoMambaModel {
    ModelConfig cfg;
    EmbeddingTable<T> embedding;
    LayerNormParams<T> embed_norm;
    SpectralFilterLayer<T> filter;  // constructed only when filter_enabled
    std::vector<EchoMambaLayer<T>> layers;

    static EchoMambaModel init(const ModelConfig& cfg, Rng& rng) {
        EchoMambaModel m;
        m.cfg = cfg;
        m.embedding = EmbeddingTable<T>::init(cfg.vocab, cfg.d_model, rng);
        m.embed_norm = LayerNormParams<T>::init(cfg.d_model);
        if (cfg.filter_enabled)
            m.filter = SpectralFilterLayer<T>::init(cfg.l_max, cfg.d_model, cfg.filter_dropout, rng);
        for (std::int64_t i = 0; i < cfg.n_layers; ++i)
            m.layers.push_back(EchoMambaLayer<T>::init(cfg.d_model, cfg.n_state, cfg.kernel,
                                                       cfg.expand, cfg.bidirectional, rng));
        return m;
    }

    // Ordered so checkpoints and the optimizer see a stable layout.
    std::vector<std::pair<std::string, Tensor<T>>> parameters() {
        std::vector<std::pair<std::string, Tensor<T>>> out;
        out.emplace_back("embedding", embedding.matrix);
        out.emplace_back("embed_norm.gain", embed_norm.gain);
        out.emplace_back("embed_norm.shift", embed_norm.shift);
        if (cfg.filter_enabled) {
            out.emplace_back("filter.k_re", filter.k_re);
            out.emplace_back("filter.k_im", filter.k_im);
            out.emplace_back("filter.norm.gain", filter.norm.gain);
            out.emplace_back("filter.norm.shift", filter.norm.shift);
        }
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const std::string p = "layer" + std::to_string(i) + ".";
            auto add_block = [&](const std::string& bp, SsmParams<T>& b) {
                out.emplace_back(bp + "a_log", b.a_log);
                out.emplace_back(bp + "proj_in.w", b.proj_in.weight);
                out.emplace_back(bp + "proj_in.b", b.proj_in.bias);
                out.emplace_back(bp + "conv.k", b.conv.kernels);
                out.emplace_back(bp + "conv.b", b.conv.bias);
                out.emplace_back(bp + "proj_bcd.w", b.proj_bcd.weight);
                out.emplace_back(bp + "proj_bcd.b", b.proj_bcd.bias);
                out.emplace_back(bp + "delta_proj.w", b.delta_proj.weight);
                out.emplace_back(bp + "delta_proj.b", b.delta_proj.bias);
                out.emplace_back(bp + "proj_out.w", b.proj_out.weight);
                out.emplace_back(bp + "proj_out.b", b.proj_out.bias);
                out.emplace_back(bp + "d_skip", b.d_skip);
            };
            auto& l = layers[i];
            add_block(p + "fwd.", l.forward_block);
            if (l.bidirectional) {
                add_block(p + "rev.", l.reverse_block);
                out.emplace_back(p + "fuse.w", l.fuse.weight);
                out.emplace_back(p + "fuse.b", l.fuse.bias);
            }
            out.emplace_back(p + "glu.w1", l.glu_params.w1);
            out.emplace_back(p + "glu.b1", l.glu_params.b1);
            out.emplace_back(p + "glu.w2", l.glu_params.w2);
            out.emplace_back(p + "glu.b2", l.glu_params.b2);
            out.emplace_back(p + "norm_fwd.gain", l.norm_fwd.gain);
            out.emplace_back(p + "norm_fwd.shift", l.norm_fwd.shift);
            if (l.bidirectional) {
                out.emplace_back(p + "norm_rev.gain", l.norm_rev.gain);
                out.emplace_back(p + "norm_rev.shift", l.norm_rev.shift);
            }
            out.emplace_back(p + "norm_out.gain", l.norm_out.gain);
            out.emplace_back(p + "norm_out.shift", l.norm_out.shift);
        }
        return out;
    }

    std::int64_t parameter_count() {
        std::int64_t n = 0;
        for (auto& [name, t] : parameters()) n += t.numel();
        return n;
    }
};

// Dot-product scores of a [B x D] state against every embedding row; the
// padding column 0 is forced to the lowest representable value.
template <typename T>
Tensor<T> score_items(const Tensor<T>& state, const EmbeddingTable<T>& table) {
    Tensor<T> scores = matmul(state, transpose2d(table.matrix));
    return mask_last_dim_index(scores, std::int64_t(0), std::numeric_limits<T>::lowest());
}

// Full model forward: scores [B x (|V|+1)] from a left-padded batch.
template <typename T>
Tensor<T> model_forward(EchoMambaModel<T>& model, const Batch& batch, bool training,
                        Rng& dropout_rng) {
    const auto& cfg = model.cfg;
    if (batch.l_max != cfg.l_max)
        throw ShapeError("batch L_max " + std::to_string(batch.l_max) +
                         " does not match model L_max " + std::to_string(cfg.l_max));
    Tensor<T> h = embed(batch.item_ids, batch.rows, batch.l_max, model.embedding);
    h = layer_norm(dropout(h, cfg.dropout, training, dropout_rng), model.embed_norm);
    if (cfg.filter_enabled && !cfg.filter_per_layer)
        h = filter_layer_forward(h, model.filter, training, dropout_rng);
    for (auto& layer : model.layers) {
        if (cfg.filter_enabled && cfg.filter_per_layer)
            h = filter_layer_forward(h, model.filter, training, dropout_rng);
        h = echomamba_layer_forward(h, batch.lengths, layer, cfg.ssm);
    }
    // left padding puts each row's most recent item at the final position
    Tensor<T> last = select_time(h, cfg.l_max - 1);
    return score_items(last, model.embedding);
}

// Mean cross-entropy over the batch with a max-subtracted log-softmax; the
// padding column is excluded from the normalizer outright.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& scores, const std::vector<std::int64_t>& targets) {
    if (scores.rank() != 2)
        throw ShapeError("cross_entropy expects [B x (V+1)] scores, got " + shape_str(scores.shape()));
    const std::int64_t B = scores.dim(0), V1 = scores.dim(1);
    if (static_cast<std::int64_t>(targets.size()) != B)
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for batch " +
                         std::to_string(B));
    for (auto t : targets)
        if (t < 1 || t >= V1)
            throw ContractError("cross_entropy target " + std::to_string(t) +
                                " outside [1, " + std::to_string(V1 - 1) + "] (0 is padding)");

    Tensor<T> out = Tensor<T>::zeros({});
    const T* ps = scores.data();
    double total = 0.0;
    for (std::int64_t b = 0; b < B; ++b) {
        const T* row = ps + b * V1;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::int64_t v = 1; v < V1; ++v) mx = std::max(mx, static_cast<double>(row[v]));
        double z = 0.0;
        for (std::int64_t v = 1; v < V1; ++v) z += std::exp(static_cast<double>(row[v]) - mx);
        total += mx + std::log(z) - static_cast<double>(row[targets[static_cast<std::size_t>(b)]]);
    }
    out.values()[0] = static_cast<T>(total / static_cast<double>(B));
    detail::finalize(out, "cross_entropy");

    if (detail::want_grad<T>({&scores})) {
        out.set_requires_grad(true);
        Tensor<T> si = scores, oi = out;
        Tape<T>::active()->record([si, oi, targets, B, V1]() mutable {
            if (!oi.has_grad()) return;
            const T g = oi.grad()[0];
            const T* ps = si.data();
            T* gs = si.grad().data();
            const T scale = g / static_cast<T>(B);
            for (std::int64_t b = 0; b < B; ++b) {
                const T* row = ps + b * V1;
                double mx = -std::numeric_limits<double>::infinity();
                for (std::int64_t v = 1; v < V1; ++v) mx = std::max(mx, static_cast<double>(row[v]));
                double z = 0.0;
                for (std::int64_t v = 1; v < V1; ++v) z += std::exp(static_cast<double>(row[v]) - mx);
                for (std::int64_t v = 1; v < V1; ++v) {
                    const double p = std::exp(static_cast<double>(row[v]) - mx) / z;
                    T delta = static_cast<T>(p);
                    if (v == targets[static_cast<std::size_t>(b)]) delta -= T(1);
                    gs[b * V1 + v] += scale * delta;
                }
            }
        });
    }
    return out;
}

}  // namespace echomamba
