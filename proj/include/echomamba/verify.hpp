#pragma once

// The 64-bit finite-difference verification suite behind `gradcheck`: every
// differentiable op plus the end-to-end toy model, checked against central
// differences.

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "echomamba/gradcheck.hpp"
#include "echomamba/model.hpp"
#include "echomamba/trainer.hpp"

namespace echomamba {

namespace verify_detail {

inline Tensor<double> rnd(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0,
                          bool requires_grad = true) {
    Tensor<double> t = Tensor<double>::zeros(std::move(shape));
    for (auto& v : t.values()) v = rng.uniform(lo, hi);
    t.set_requires_grad(requires_grad);
    return t;
}

}  // namespace verify_detail

inline bool run_gradcheck_suite(std::ostream& out) {
    using verify_detail::rnd;
    struct Check {
        std::string name;
        std::function<GradCheckReport()> run;
    };
    std::vector<Check> checks;
    Rng rng(20240901);

    {
        auto a = rnd({3, 4}, rng), b = rnd({4, 2}, rng);
        checks.push_back({"matmul", [=]() {
            return check_gradients([=]() { return sum(mul(matmul(a, b), matmul(a, b))); },
                                   {{"a", a}, {"b", b}});
        }});
    }
    {
        auto a = rnd({2, 2, 3}, rng), b = rnd({3, 5}, rng);
        checks.push_back({"matmul_batched", [=]() {
            return check_gradients([=]() { return sum(mul(matmul(a, b), matmul(a, b))); },
                                   {{"a", a}, {"b", b}});
        }});
    }
    {
        auto x = rnd({2, 5}, rng);
        checks.push_back({"elementwise_unary", [=]() {
            return check_gradients(
                [=]() {
                    auto y = silu(add(sigmoid(x), softplus(neg(x))));
                    return sum(mul(y, echomamba::exp(mul_scalar(x, 0.3))));
                },
                {{"x", x}});
        }});
    }
    {
        auto a = rnd({2, 3}, rng), b = rnd({3}, rng);
        checks.push_back({"elementwise_broadcast", [=]() {
            return check_gradients(
                [=]() { return sum(mul(mul(a, b), add(sub(a, b), b))); }, {{"a", a}, {"b", b}});
        }});
    }
    {
        auto x = rnd({3, 4}, rng);
        checks.push_back({"reduce_and_layout", [=]() {
            return check_gradients(
                [=]() {
                    auto m = mean(x, 1);
                    auto s = sum(transpose2d(reshape(x, {4, 3})), 0);
                    return add(sum(mul(m, m)), sum(mul(s, s)));
                },
                {{"x", x}});
        }});
    }
    {
        EmbeddingTable<double> table;
        table.matrix = rnd({6, 3}, rng);
        auto probe = rnd({2, 2, 3}, rng, -1.0, 1.0, false);
        checks.push_back({"embed", [=]() {
            return check_gradients(
                [=]() {
                    auto e = embed({1, 4, 0, 4}, 2, 2, table);
                    return sum(mul(mul(e, e), probe));
                },
                {{"table", table.matrix}});
        }});
    }
    {
        auto p = LayerNormParams<double>::init(5);
        init_uniform(p.gain, rng, 0.5, 1.5);
        auto x = rnd({3, 5}, rng);
        auto probe = rnd({3, 5}, rng, -1.0, 1.0, false);
        checks.push_back({"layer_norm", [=]() {
            return check_gradients(
                [=]() { return sum(mul(mul(layer_norm(x, p), probe), add_scalar(layer_norm(x, p), 0.4))); },
                {{"x", x}, {"gain", p.gain}, {"shift", p.shift}});
        }});
    }
    {
        auto x = rnd({4, 4}, rng);
        checks.push_back({"dropout", [=]() {
            return check_gradients(
                [=]() {
                    Rng mask_rng(7);
                    auto y = dropout(x, 0.3, true, mask_rng);
                    return sum(mul(y, y));
                },
                {{"x", x}});
        }});
    }
    {
        auto g = GluParams<double>::init(3, 3, rng);
        auto x = rnd({4, 3}, rng);
        checks.push_back({"glu", [=]() {
            return check_gradients([=]() { return sum(mul(glu(x, g), glu(x, g))); },
                                   {{"x", x},
                                    {"w1", g.w1},
                                    {"b1", g.b1},
                                    {"w2", g.w2},
                                    {"b2", g.b2}});
        }});
    }
    {
        auto conv = Conv1DDepthwise<double>::init(2, 3, rng);
        auto x = rnd({2, 5, 2}, rng);
        checks.push_back({"conv1d_depthwise", [=]() {
            return check_gradients(
                [=]() {
                    auto y = conv1d_depthwise(x, conv);
                    return sum(mul(y, y));
                },
                {{"x", x}, {"kernels", conv.kernels}, {"bias", conv.bias}});
        }});
    }
    {
        auto layer = SpectralFilterLayer<double>::init(6, 2, 0.0, rng);
        auto x = rnd({2, 6, 2}, rng);
        auto probe = rnd({2, 6, 2}, rng, -1.0, 1.0, false);
        checks.push_back({"spectral_filter", [=]() {
            return check_gradients(
                [=]() {
                    Rng drop(1);
                    auto y = filter_layer_forward(x, layer, false, drop);
                    return sum(mul(mul(y, probe), add_scalar(y, 0.2)));
                },
                {{"x", x},
                 {"k_re", layer.k_re},
                 {"k_im", layer.k_im},
                 {"norm.gain", layer.norm.gain},
                 {"norm.shift", layer.norm.shift}});
        }});
    }
    for (auto mode : {DiscretizationMode::ExactZoh, DiscretizationMode::EulerB}) {
        auto a_log = rnd({3, 2}, rng, -1.0, 1.0);
        auto delta = rnd({2, 3, 3}, rng, 0.05, 1.0);
        auto b = rnd({2, 3, 2}, rng);
        auto pa = rnd({2, 3, 3, 2}, rng, -1.0, 1.0, false);
        auto pb = rnd({2, 3, 3, 2}, rng, -1.0, 1.0, false);
        checks.push_back(
            {mode == DiscretizationMode::ExactZoh ? "discretize_zoh" : "discretize_euler", [=]() {
                 return check_gradients(
                     [=]() {
                         auto [ab, bb] = discretize(a_log, delta, b, mode);
                         return add(sum(mul(ab, pa)), sum(mul(mul(bb, bb), pb)));
                     },
                     {{"a_log", a_log}, {"delta", delta}, {"b", b}});
             }});
    }
    {
        const std::int64_t B = 2, L = 5, Di = 2, N = 3;
        auto x = rnd({B, L, Di}, rng, -1.0, 1.0);
        auto a = rnd({B, L, Di, N}, rng, 0.2, 0.95);
        auto b = rnd({B, L, Di, N}, rng, -1.0, 1.0);
        auto c = rnd({B, L, N}, rng, -1.0, 1.0);
        auto d = rnd({Di}, rng, -1.0, 1.0);
        auto probe = rnd({B, L, Di}, rng, -1.0, 1.0, false);
        checks.push_back({"selective_scan", [=]() {
            return check_gradients(
                [=]() {
                    auto y = selective_scan(x, a, b, c, d);
                    return sum(mul(mul(y, probe), add_scalar(y, 0.3)));
                },
                {{"x", x}, {"a", a}, {"b", b}, {"c", c}, {"d", d}});
        }});
    }
    {
        auto x = rnd({2, 4, 2}, rng);
        auto probe = rnd({2, 4, 2}, rng, -1.0, 1.0, false);
        const std::vector<std::int64_t> lengths = {3, 1};
        checks.push_back({"reverse_valid", [=]() {
            return check_gradients(
                [=]() {
                    auto y = reverse_valid(x, lengths);
                    return sum(mul(mul(y, probe), y));
                },
                {{"x", x}});
        }});
    }
    for (auto combine : {BlockCombine::Gated, BlockCombine::Residual}) {
        auto p = SsmParams<double>::init(4, 2, 2, 2, rng);
        auto f = rnd({2, 6, 4}, rng, -1.0, 1.0);
        auto probe = rnd({2, 6, 4}, rng, -1.0, 1.0, false);
        SsmOptions opts;
        opts.combine = combine;
        checks.push_back(
            {combine == BlockCombine::Gated ? "mamba_block_gated" : "mamba_block_residual", [=]() {
                 return check_gradients(
                     [=]() {
                         auto y = mamba_block_forward(f, p, opts);
                         return sum(mul(mul(y, probe), add_scalar(y, 0.5)));
                     },
                     {{"f", f},
                      {"a_log", p.a_log},
                      {"proj_in.w", p.proj_in.weight},
                      {"proj_in.b", p.proj_in.bias},
                      {"conv.k", p.conv.kernels},
                      {"conv.b", p.conv.bias},
                      {"proj_bcd.w", p.proj_bcd.weight},
                      {"proj_bcd.b", p.proj_bcd.bias},
                      {"delta_proj.w", p.delta_proj.weight},
                      {"delta_proj.b", p.delta_proj.bias},
                      {"proj_out.w", p.proj_out.weight},
                      {"proj_out.b", p.proj_out.bias},
                      {"d_skip", p.d_skip}});
             }});
    }
    {
        auto layer = EchoMambaLayer<double>::init(4, 2, 2, 2, true, rng);
        auto f = rnd({2, 4, 4}, rng, -1.0, 1.0);
        auto probe = rnd({2, 4, 4}, rng, -1.0, 1.0, false);
        const std::vector<std::int64_t> lengths = {4, 3};
        checks.push_back({"echomamba_layer", [=]() mutable {
            return check_gradients(
                [=]() mutable {
                    auto y = echomamba_layer_forward(f, lengths, layer);
                    return sum(mul(mul(y, probe), add_scalar(y, 0.1)));
                },
                {{"f", f},
                 {"fuse.w", layer.fuse.weight},
                 {"glu.w1", layer.glu_params.w1},
                 {"fwd.a_log", layer.forward_block.a_log},
                 {"rev.a_log", layer.reverse_block.a_log},
                 {"norm_out.gain", layer.norm_out.gain}});
        }});
    }
    {
        auto scores = rnd({4, 7}, rng);
        const std::vector<std::int64_t> targets = {1, 6, 3, 3};
        checks.push_back({"cross_entropy", [=]() {
            return check_gradients([=]() { return cross_entropy(scores, targets); },
                                   {{"scores", scores}});
        }});
    }
    {
        // end-to-end toy model: |V|=12, D=4, N=2, K=2, L=6, one layer
        ModelConfig mc;
        mc.vocab = 12;
        mc.d_model = 4;
        mc.n_state = 2;
        mc.kernel = 2;
        mc.expand = 2;
        mc.n_layers = 1;
        mc.l_max = 6;
        mc.dropout = 0.0;
        mc.filter_dropout = 0.0;
        Rng init = SeededStreams(77).stream("init");
        auto model = std::make_shared<EchoMambaModel<double>>(EchoMambaModel<double>::init(mc, init));
        Batch batch;
        batch.rows = 2;
        batch.l_max = 6;
        batch.item_ids = {0, 0, 3, 9, 1, 12, 5, 2, 2, 7, 11, 4};
        batch.lengths = {4, 6};
        batch.targets = {6, 10};
        batch.users = {0, 1};
        checks.push_back({"end_to_end_model", [model, batch]() {
            auto params = model->parameters();
            return check_gradients(
                [model, batch]() {
                    Rng drop(1);
                    auto scores = model_forward(*model, batch, true, drop);
                    return cross_entropy(scores, batch.targets);
                },
                params);
        }});
    }

    bool all_ok = true;
    for (auto& check : checks) {
        const auto report = check.run();
        out << "[gradcheck] " << check.name << ": " << (report.ok ? "PASS" : "FAIL")
            << " (max rel err " << report.max_rel_err << " at " << report.worst << ")\n";
        all_ok = all_ok && report.ok;
    }
    return all_ok;
}

}  // namespace echomamba
