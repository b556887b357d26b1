#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "echomamba/gradcheck.hpp"
#include "echomamba/ssm.hpp"

using namespace echomamba;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0,
                        bool requires_grad = false) {
    Tensor<T> t = Tensor<T>::zeros(std::move(shape));
    for (auto& v : t.values()) v = static_cast<T>(rng.uniform(lo, hi));
    t.set_requires_grad(requires_grad);
    return t;
}

void zero_biases(SsmParams<double>& p) {
    auto zero = [](Tensor<double>& t) { std::fill(t.values().begin(), t.values().end(), 0.0); };
    zero(p.proj_in.bias);
    zero(p.conv.bias);
    zero(p.proj_bcd.bias);
    zero(p.delta_proj.bias);
    zero(p.proj_out.bias);
}

std::vector<std::pair<std::string, Tensor<double>>> block_params(SsmParams<double>& p,
                                                                 const std::string& prefix) {
    return {{prefix + "a_log", p.a_log},
            {prefix + "proj_in.w", p.proj_in.weight},
            {prefix + "proj_in.b", p.proj_in.bias},
            {prefix + "conv.k", p.conv.kernels},
            {prefix + "conv.b", p.conv.bias},
            {prefix + "proj_bcd.w", p.proj_bcd.weight},
            {prefix + "proj_bcd.b", p.proj_bcd.bias},
            {prefix + "delta_proj.w", p.delta_proj.weight},
            {prefix + "delta_proj.b", p.delta_proj.bias},
            {prefix + "proj_out.w", p.proj_out.weight},
            {prefix + "proj_out.b", p.proj_out.bias},
            {prefix + "d_skip", p.d_skip}};
}

}  // namespace

TEST_CASE("discretize limit: delta -> 0 gives a_bar -> 1, b_bar -> 0") {
    auto a_log = Tensor<double>::zeros({2, 2});  // A = -1
    auto delta = Tensor<double>::full({1, 1, 2}, 1e-12);
    auto b = Tensor<double>::full({1, 1, 2}, 3.0);
    auto [a_bar, b_bar] = discretize(a_log, delta, b);
    for (double v : a_bar.values()) CHECK(std::fabs(v - 1.0) <= 1e-9);
    for (double v : b_bar.values()) CHECK(std::fabs(v) <= 1e-9);
}

TEST_CASE("discretize closed form: A = -1, delta = ln 2") {
    auto a_log = Tensor<double>::zeros({1, 1});
    auto delta = Tensor<double>::full({1, 1, 1}, std::log(2.0));
    auto b = Tensor<double>::full({1, 1, 1}, 4.0);
    auto [a_bar, b_bar] = discretize(a_log, delta, b);
    CHECK(a_bar.values()[0] == doctest::Approx(0.5).epsilon(1e-12));
    // ((0.5 - 1) / -1) * B = 0.5 * B
    CHECK(b_bar.values()[0] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("euler mode gives b_bar = delta * B exactly") {
    Rng rng(1);
    auto a_log = random_tensor<double>({3, 2}, rng, -1.0, 1.0);
    auto delta = random_tensor<double>({2, 4, 3}, rng, 0.05, 0.5);
    auto b = random_tensor<double>({2, 4, 2}, rng);
    auto [a_bar, b_bar] = discretize(a_log, delta, b, DiscretizationMode::EulerB);
    for (std::int64_t bb = 0; bb < 2; ++bb)
        for (std::int64_t l = 0; l < 4; ++l)
            for (std::int64_t d = 0; d < 3; ++d)
                for (std::int64_t n = 0; n < 2; ++n)
                    CHECK(b_bar.at({bb, l, d, n}) == delta.at({bb, l, d}) * b.at({bb, l, n}));
    // stability holds in euler mode too
    for (double v : a_bar.values()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
}

TEST_CASE("discretize rejects nonpositive delta") {
    auto a_log = Tensor<double>::zeros({1, 1});
    auto delta = Tensor<double>::zeros({1, 1, 1});
    auto b = Tensor<double>::full({1, 1, 1}, 1.0);
    CHECK_THROWS_AS((void)discretize(a_log, delta, b), ContractError);
}

TEST_CASE("zoh and euler converge at O(delta^2)") {
    auto a_log = Tensor<double>::zeros({1, 1});  // A = -1
    auto b = Tensor<double>::full({1, 1, 1}, 1.0);
    auto gap = [&](double dt) {
        auto delta = Tensor<double>::full({1, 1, 1}, dt);
        auto [a1, zoh] = discretize(a_log, delta, b, DiscretizationMode::ExactZoh);
        auto [a2, eul] = discretize(a_log, delta, b, DiscretizationMode::EulerB);
        return std::fabs(zoh.values()[0] - eul.values()[0]);
    };
    const double ratio = gap(1e-2) / gap(1e-3);
    CHECK(ratio > 95.0);
    CHECK(ratio < 105.0);
}

TEST_CASE("discretize gradients pass finite differences in both modes") {
    Rng rng(2);
    auto a_log = random_tensor<double>({3, 2}, rng, -1.0, 1.0, true);
    auto delta = random_tensor<double>({2, 3, 3}, rng, 0.05, 1.0, true);
    auto b = random_tensor<double>({2, 3, 2}, rng, -2.0, 2.0, true);
    auto probe_a = random_tensor<double>({2, 3, 3, 2}, rng);
    auto probe_b = random_tensor<double>({2, 3, 3, 2}, rng);
    for (auto mode : {DiscretizationMode::ExactZoh, DiscretizationMode::EulerB}) {
        auto forward = [&]() {
            auto [a_bar, b_bar] = discretize(a_log, delta, b, mode);
            return add(sum(mul(a_bar, probe_a)), sum(mul(mul(b_bar, b_bar), probe_b)));
        };
        auto report =
            check_gradients(forward, {{"a_log", a_log}, {"delta", delta}, {"b", b}});
        INFO("mode=", mode == DiscretizationMode::ExactZoh ? "zoh" : "euler",
             " worst=", report.worst, " rel=", report.max_rel_err);
        CHECK(report.ok);
    }
}

TEST_CASE("scan with a_bar = 0 is memoryless") {
    Rng rng(3);
    const std::int64_t B = 1, L = 4, Di = 2, N = 3;
    auto x = random_tensor<double>({B, L, Di}, rng);
    auto a = Tensor<double>::zeros({B, L, Di, N});
    auto b = random_tensor<double>({B, L, Di, N}, rng);
    auto c = random_tensor<double>({B, L, N}, rng);
    auto d = random_tensor<double>({Di}, rng);
    auto y = selective_scan(x, a, b, c, d);
    for (std::int64_t l = 0; l < L; ++l)
        for (std::int64_t di = 0; di < Di; ++di) {
            double dot = 0.0;
            for (std::int64_t n = 0; n < N; ++n) dot += c.at({0, l, n}) * b.at({0, l, di, n});
            const double expect = (dot + d.at({di})) * x.at({0, l, di});
            CHECK(y.at({0, l, di}) == doctest::Approx(expect).epsilon(1e-12));
        }
}

TEST_CASE("scan integrator: running sum") {
    auto x = Tensor<double>::from_data({1, 3, 1}, {1, 1, 1});
    auto a = Tensor<double>::full({1, 3, 1, 1}, 1.0);
    auto b = Tensor<double>::full({1, 3, 1, 1}, 1.0);
    auto c = Tensor<double>::full({1, 3, 1}, 1.0);
    auto d = Tensor<double>::zeros({1});
    auto y = selective_scan(x, a, b, c, d);
    CHECK(y.values()[0] == 1.0);
    CHECK(y.values()[1] == 2.0);
    CHECK(y.values()[2] == 3.0);
}

TEST_CASE("blocked scan matches the sequential loop oracle") {
    Rng rng(4);
    const std::int64_t B = 2, L = 32, Di = 3, N = 4;
    auto x = random_tensor<double>({B, L, Di}, rng);
    auto a = random_tensor<double>({B, L, Di, N}, rng, 0.1, 0.99);
    auto b = random_tensor<double>({B, L, Di, N}, rng);
    auto c = random_tensor<double>({B, L, N}, rng);
    auto d = random_tensor<double>({Di}, rng);
    auto seq = selective_scan(x, a, b, c, d);
    for (std::int64_t chunk : {1, 5, 8, 64}) {
        auto blk = selective_scan_blocked(x, a, b, c, d, chunk);
        double worst = 0.0;
        for (std::size_t i = 0; i < seq.values().size(); ++i)
            worst = std::max(worst, std::fabs(seq.values()[i] - blk.values()[i]));
        INFO("chunk=", chunk);
        CHECK(worst <= 1e-10);
    }
}

TEST_CASE("blocked scan matches in 32-bit mode within 1e-5") {
    Rng rng(5);
    const std::int64_t B = 2, L = 32, Di = 3, N = 4;
    auto x = random_tensor<float>({B, L, Di}, rng);
    auto a = random_tensor<float>({B, L, Di, N}, rng, 0.1, 0.99);
    auto b = random_tensor<float>({B, L, Di, N}, rng);
    auto c = random_tensor<float>({B, L, N}, rng);
    auto d = random_tensor<float>({Di}, rng);
    auto seq = selective_scan(x, a, b, c, d);
    auto blk = selective_scan_blocked(x, a, b, c, d, 7);
    for (std::size_t i = 0; i < seq.values().size(); ++i)
        CHECK(std::fabs(seq.values()[i] - blk.values()[i]) <= 1e-5f);
}

TEST_CASE("scan rejects mismatched shapes") {
    auto x = Tensor<double>::zeros({1, 3, 2});
    auto a = Tensor<double>::zeros({1, 3, 2, 4});
    auto b = Tensor<double>::zeros({1, 3, 2, 4});
    auto c = Tensor<double>::zeros({1, 2, 4});  // wrong L
    auto d = Tensor<double>::zeros({2});
    CHECK_THROWS_AS((void)selective_scan(x, a, b, c, d), ShapeError);
}

TEST_CASE("scan gradients pass finite differences") {
    Rng rng(6);
    const std::int64_t B = 2, L = 5, Di = 2, N = 3;
    auto x = random_tensor<double>({B, L, Di}, rng, -1.0, 1.0, true);
    auto a = random_tensor<double>({B, L, Di, N}, rng, 0.2, 0.95, true);
    auto b = random_tensor<double>({B, L, Di, N}, rng, -1.0, 1.0, true);
    auto c = random_tensor<double>({B, L, N}, rng, -1.0, 1.0, true);
    auto d = random_tensor<double>({Di}, rng, -1.0, 1.0, true);
    auto probe = random_tensor<double>({B, L, Di}, rng);
    auto forward = [&]() {
        auto y = selective_scan(x, a, b, c, d);
        return sum(mul(mul(y, probe), add_scalar(y, 0.3)));
    };
    auto report = check_gradients(
        forward, {{"x", x}, {"a", a}, {"b", b}, {"c", c}, {"d", d}});
    INFO("worst=", report.worst, " rel=", report.max_rel_err);
    CHECK(report.ok);
}

TEST_CASE("reverse_valid flips only the valid suffix") {
    // rows: [PAD, PAD, 1, 2, 3] with len 3 -> [PAD, PAD, 3, 2, 1]
    auto x = Tensor<double>::from_data({1, 5, 1}, {-7, -8, 1, 2, 3});
    auto out = reverse_valid(x, {3});
    CHECK(out.values() == std::vector<double>{-7, -8, 3, 2, 1});

    auto ids = reverse_valid_ids({0, 0, 1, 2, 3}, 1, 5, {3});
    CHECK(ids == std::vector<std::int64_t>{0, 0, 3, 2, 1});
}

TEST_CASE("reverse_valid with length 1 is the identity") {
    Rng rng(7);
    auto x = random_tensor<double>({2, 4, 3}, rng);
    auto out = reverse_valid(x, {1, 1});
    CHECK(out.values() == x.values());
}

TEST_CASE("reverse_valid is an involution on random batches") {
    Rng rng(8);
    for (int trial = 0; trial < 5; ++trial) {
        const std::int64_t B = 3, L = 6;
        auto x = random_tensor<double>({B, L, 2}, rng);
        std::vector<std::int64_t> lengths;
        for (std::int64_t b = 0; b < B; ++b)
            lengths.push_back(1 + static_cast<std::int64_t>(rng.below(L)));
        auto twice = reverse_valid(reverse_valid(x, lengths), lengths);
        CHECK(twice.values() == x.values());
    }
}

TEST_CASE("reverse_valid rejects lengths above L") {
    auto x = Tensor<double>::zeros({1, 3, 1});
    CHECK_THROWS_AS((void)reverse_valid(x, {4}), ContractError);
}

TEST_CASE("reverse_valid gradient passes finite differences") {
    Rng rng(9);
    auto x = random_tensor<double>({2, 4, 2}, rng, -2.0, 2.0, true);
    auto probe = random_tensor<double>({2, 4, 2}, rng);
    const std::vector<std::int64_t> lengths = {3, 1};
    auto forward = [&]() {
        auto y = reverse_valid(x, lengths);
        return sum(mul(mul(y, probe), y));
    };
    auto report = check_gradients(forward, {{"x", x}});
    CHECK(report.ok);
}

TEST_CASE("mamba block maps zero input to zero with zero biases") {
    Rng rng(10);
    auto p = SsmParams<double>::init(4, 2, 2, 2, rng);
    zero_biases(p);
    auto f = Tensor<double>::zeros({2, 5, 4});
    for (auto combine : {BlockCombine::Gated, BlockCombine::Residual}) {
        SsmOptions opts;
        opts.combine = combine;
        auto y = mamba_block_forward(f, p, opts);
        for (double v : y.values()) CHECK(v == 0.0);
    }
}

TEST_CASE("mamba block is causal") {
    Rng rng(11);
    const std::int64_t L = 7, D = 4;
    auto p = SsmParams<double>::init(D, 2, 3, 2, rng);
    auto f = random_tensor<double>({1, L, D}, rng, -1.0, 1.0);
    auto base = mamba_block_forward(f, p);
    for (std::int64_t t = 0; t < L; ++t) {
        auto fp = f.clone();
        fp.set({0, t, 1}, fp.at({0, t, 1}) + 0.25);
        auto out = mamba_block_forward(fp, p);
        bool changed_before_t = false;
        bool changed_at_or_after = false;
        for (std::int64_t s = 0; s < L; ++s)
            for (std::int64_t d = 0; d < D; ++d) {
                if (out.at({0, s, d}) != base.at({0, s, d})) {
                    if (s < t)
                        changed_before_t = true;
                    else
                        changed_at_or_after = true;
                }
            }
        CHECK_FALSE(changed_before_t);
        CHECK(changed_at_or_after);
    }
}

TEST_CASE("mamba block gradients pass finite differences on every parameter") {
    Rng rng(12);
    const std::int64_t B = 2, L = 8, D = 4, N = 2, K = 2, E = 2;
    auto p = SsmParams<double>::init(D, N, K, E, rng);
    auto f = random_tensor<double>({B, L, D}, rng, -1.0, 1.0, true);
    auto probe = random_tensor<double>({B, L, D}, rng);
    for (auto combine : {BlockCombine::Gated, BlockCombine::Residual}) {
        SsmOptions opts;
        opts.combine = combine;
        auto forward = [&]() {
            auto y = mamba_block_forward(f, p, opts);
            return sum(mul(mul(y, probe), add_scalar(y, 0.5)));
        };
        auto params = block_params(p, "");
        params.emplace_back("f", f);
        auto report = check_gradients(forward, params);
        INFO("combine=", combine == BlockCombine::Gated ? "gated" : "residual",
             " worst=", report.worst, " rel=", report.max_rel_err);
        CHECK(report.ok);
    }
}

TEST_CASE("weight-tied branches agree on single-item sequences") {
    Rng rng(13);
    const std::int64_t B = 3, L = 4, D = 4;
    auto layer = EchoMambaLayer<double>::init(D, 2, 2, 2, true, rng);
    // tie: overwrite reverse weights with forward weights
    auto tie = [](Tensor<double>& dst, const Tensor<double>& src) { dst.values() = src.values(); };
    tie(layer.reverse_block.a_log, layer.forward_block.a_log);
    tie(layer.reverse_block.proj_in.weight, layer.forward_block.proj_in.weight);
    tie(layer.reverse_block.proj_in.bias, layer.forward_block.proj_in.bias);
    tie(layer.reverse_block.conv.kernels, layer.forward_block.conv.kernels);
    tie(layer.reverse_block.conv.bias, layer.forward_block.conv.bias);
    tie(layer.reverse_block.proj_bcd.weight, layer.forward_block.proj_bcd.weight);
    tie(layer.reverse_block.proj_bcd.bias, layer.forward_block.proj_bcd.bias);
    tie(layer.reverse_block.delta_proj.weight, layer.forward_block.delta_proj.weight);
    tie(layer.reverse_block.delta_proj.bias, layer.forward_block.delta_proj.bias);
    tie(layer.reverse_block.proj_out.weight, layer.forward_block.proj_out.weight);
    tie(layer.reverse_block.proj_out.bias, layer.forward_block.proj_out.bias);
    tie(layer.reverse_block.d_skip, layer.forward_block.d_skip);
    tie(layer.norm_rev.gain, layer.norm_fwd.gain);
    tie(layer.norm_rev.shift, layer.norm_fwd.shift);

    auto f = random_tensor<double>({B, L, D}, rng);
    const std::vector<std::int64_t> lengths = {1, 1, 1};
    auto y_fwd = layer_norm(add(f, mamba_block_forward(f, layer.forward_block)), layer.norm_fwd);
    auto rev_in = reverse_valid(f, lengths);
    auto y_rev = reverse_valid(
        layer_norm(add(rev_in, mamba_block_forward(rev_in, layer.reverse_block)), layer.norm_rev),
        lengths);
    for (std::size_t i = 0; i < y_fwd.values().size(); ++i)
        CHECK(y_fwd.values()[i] == y_rev.values()[i]);
}

TEST_CASE("bidirectional layer is intentionally anti-causal") {
    Rng rng(14);
    const std::int64_t L = 6, D = 4;
    auto layer = EchoMambaLayer<double>::init(D, 2, 2, 2, true, rng);
    auto f = random_tensor<double>({1, L, D}, rng);
    const std::vector<std::int64_t> lengths = {L};
    auto base = echomamba_layer_forward(f, lengths, layer);
    // perturb the last position: the reverse branch must leak it backwards
    auto fp = f.clone();
    fp.set({0, L - 1, 0}, fp.at({0, L - 1, 0}) + 0.5);
    auto out = echomamba_layer_forward(fp, lengths, layer);
    bool changed_earlier = false;
    for (std::int64_t s = 0; s < L - 1 && !changed_earlier; ++s)
        for (std::int64_t d = 0; d < D; ++d)
            if (out.at({0, s, d}) != base.at({0, s, d})) {
                changed_earlier = true;
                break;
            }
    CHECK(changed_earlier);
}

TEST_CASE("full bidirectional layer passes finite differences at toy size") {
    Rng rng(15);
    const std::int64_t B = 2, L = 4, D = 4;
    auto layer = EchoMambaLayer<double>::init(D, 2, 2, 2, true, rng);
    auto f = random_tensor<double>({B, L, D}, rng, -1.0, 1.0, true);
    auto probe = random_tensor<double>({B, L, D}, rng);
    const std::vector<std::int64_t> lengths = {3, 4};
    auto forward = [&]() {
        auto y = echomamba_layer_forward(f, lengths, layer);
        return sum(mul(mul(y, probe), add_scalar(y, 0.2)));
    };
    auto params = block_params(layer.forward_block, "fwd.");
    auto rev = block_params(layer.reverse_block, "rev.");
    params.insert(params.end(), rev.begin(), rev.end());
    params.emplace_back("fuse.w", layer.fuse.weight);
    params.emplace_back("fuse.b", layer.fuse.bias);
    params.emplace_back("glu.w1", layer.glu_params.w1);
    params.emplace_back("glu.b1", layer.glu_params.b1);
    params.emplace_back("glu.w2", layer.glu_params.w2);
    params.emplace_back("glu.b2", layer.glu_params.b2);
    params.emplace_back("norm_fwd.g", layer.norm_fwd.gain);
    params.emplace_back("norm_fwd.s", layer.norm_fwd.shift);
    params.emplace_back("norm_rev.g", layer.norm_rev.gain);
    params.emplace_back("norm_rev.s", layer.norm_rev.shift);
    params.emplace_back("norm_out.g", layer.norm_out.gain);
    params.emplace_back("norm_out.s", layer.norm_out.shift);
    params.emplace_back("f", f);
    auto report = check_gradients(forward, params);
    INFO("worst=", report.worst, " rel=", report.max_rel_err);
    CHECK(report.ok);
}
