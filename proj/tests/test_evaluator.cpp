#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "echomamba/evaluator.hpp"
#include "echomamba/trainer.hpp"
#include "support/synthetic.hpp"

using namespace echomamba;

namespace {

template <typename T>
EchoMambaModel<T> toy_model(std::int64_t vocab, std::int64_t l_max, std::uint64_t seed) {
    ModelConfig mc;
    mc.vocab = vocab;
    mc.d_model = 8;
    mc.n_state = 4;
    mc.kernel = 2;
    mc.expand = 2;
    mc.n_layers = 1;
    mc.l_max = l_max;
    mc.dropout = 0.0;
    mc.filter_dropout = 0.0;
    Rng init = SeededStreams(seed).stream("init");
    return EchoMambaModel<T>::init(mc, init);
}

}  // namespace

TEST_CASE("rank rule: one-hot scores put the target first") {
    std::vector<double> row(8, 0.0);
    row[5] = 1.0;
    CHECK(rank_of_target(row.data(), 8, 5) == 1);
}

TEST_CASE("rank rule: constant scores rank by item index") {
    std::vector<double> row(8, 0.5);
    for (std::int64_t t = 1; t < 8; ++t) CHECK(rank_of_target(row.data(), 8, t) == t);
}

TEST_CASE("rank rule: masked items are excluded") {
    std::vector<double> row = {0, 9, 8, 7, 1};
    std::unordered_set<std::int64_t> masked = {1, 2};
    CHECK(rank_of_target(row.data(), 5, 4, &masked) == 2);  // only item 3 beats it
}

TEST_CASE("metric trivia") {
    CHECK(hr_at_k({1, 1, 1}, 10) == 1.0);
    CHECK(ndcg_at_k({1, 1, 1}, 10) == 1.0);
    CHECK(mrr_at_k({1, 1, 1}, 10) == 1.0);

    CHECK(hr_at_k({3}, 10) == 1.0);
    CHECK(ndcg_at_k({3}, 10) == doctest::Approx(0.5).epsilon(1e-12));  // 1/log2(4)
    CHECK(mrr_at_k({3}, 10) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    CHECK(hr_at_k({11}, 10) == 0.0);
    CHECK(ndcg_at_k({11}, 10) == 0.0);
    CHECK(mrr_at_k({11}, 10) == 0.0);

    CHECK_THROWS_AS((void)hr_at_k({1}, 0), ContractError);
    CHECK_THROWS_AS((void)ndcg_at_k({}, 5), ContractError);
}

TEST_CASE("metrics match a brute-force per-user oracle and obey the ordering") {
    Rng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        const std::int64_t k = 1 + static_cast<std::int64_t>(rng.below(20));
        std::vector<std::int64_t> ranks;
        const std::size_t n = 1 + rng.below(40);
        for (std::size_t i = 0; i < n; ++i)
            ranks.push_back(1 + static_cast<std::int64_t>(rng.below(50)));

        double hr = 0, ndcg = 0, mrr = 0;
        for (auto r : ranks) {
            if (r <= k) {
                hr += 1.0;
                ndcg += 1.0 / std::log2(static_cast<double>(r) + 1.0);
                mrr += 1.0 / static_cast<double>(r);
            }
        }
        hr /= static_cast<double>(n);
        ndcg /= static_cast<double>(n);
        mrr /= static_cast<double>(n);
        CHECK(std::fabs(hr_at_k(ranks, k) - hr) <= 1e-12);
        CHECK(std::fabs(ndcg_at_k(ranks, k) - ndcg) <= 1e-12);
        CHECK(std::fabs(mrr_at_k(ranks, k) - mrr) <= 1e-12);
        CHECK(mrr_at_k(ranks, k) <= ndcg_at_k(ranks, k) + 1e-15);
        CHECK(ndcg_at_k(ranks, k) <= hr_at_k(ranks, k) + 1e-15);
        CHECK(hr_at_k(ranks, k) <= 1.0);
        CHECK(mrr_at_k(ranks, k) >= 0.0);
    }
}

TEST_CASE("rank_targets matches an unbatched per-user oracle") {
    auto log = synthetic::planted_cycles(17, 12, 6, 10, 0.2, 13);
    auto ds = build_sequences(log);
    auto model = toy_model<double>(ds.n_items(), 10, 3);
    auto batched = rank_targets(model, ds, Split::Test, 8);

    // oracle: score and rank one user at a time, straight off the sequences
    BatchOptions opt;
    opt.batch_size = 1;
    opt.l_max = 10;
    auto singles = make_batches(ds, Split::Test, opt, nullptr);
    REQUIRE(singles.size() == static_cast<std::size_t>(ds.n_users()));
    Rng drop(1);
    std::vector<std::int64_t> expect;
    for (const auto& b : singles) {
        auto scores = model_forward(model, b, false, drop);
        const double st = scores.at({0, b.targets[0]});
        std::int64_t rank = 1;
        for (std::int64_t v = 1; v <= ds.n_items(); ++v) {
            if (v == b.targets[0]) continue;
            const double sv = scores.at({0, v});
            if (sv > st || (sv == st && v < b.targets[0])) ++rank;
        }
        expect.push_back(rank);
    }
    CHECK(batched == expect);
}

TEST_CASE("rank_targets is invariant to the evaluation batch size") {
    auto log = synthetic::planted_cycles(23, 15, 6, 12, 0.1, 19);
    auto ds = build_sequences(log);
    auto model = toy_model<double>(ds.n_items(), 12, 5);
    auto base = rank_targets(model, ds, Split::Test, 1);
    for (std::int64_t bs : {3, 7, 64}) {
        auto got = rank_targets(model, ds, Split::Test, bs);
        CHECK(got == base);
    }
}

TEST_CASE("mask_seen removes history items from the candidate set") {
    auto log = synthetic::planted_cycles(11, 10, 5, 9, 0.0, 23);
    auto ds = build_sequences(log);
    auto model = toy_model<double>(ds.n_items(), 9, 7);
    auto plain = rank_targets(model, ds, Split::Test, 16, false);
    auto masked = rank_targets(model, ds, Split::Test, 16, true);
    REQUIRE(plain.size() == masked.size());
    for (std::size_t i = 0; i < plain.size(); ++i) CHECK(masked[i] <= plain[i]);
}

TEST_CASE("evaluate produces a coherent report") {
    auto log = synthetic::planted_cycles(19, 14, 7, 12, 0.1, 29);
    auto ds = build_sequences(log);
    auto model = toy_model<double>(ds.n_items(), 12, 11);
    auto rep = evaluate(model, ds, Split::Validation, 8, 10);
    CHECK(rep.n_users == ds.n_users());
    CHECK(rep.hr >= 0.0);
    CHECK(rep.hr <= 1.0);
    CHECK(rep.mrr <= rep.ndcg + 1e-15);
    CHECK(rep.ndcg <= rep.hr + 1e-15);
    CHECK(rep.eval_seconds >= 0.0);
}

TEST_CASE("parameter count equals the analytic shape sum") {
    // D=64, N=16, K=4, E=2, one layer, |V|=100, L_max=200, bidirectional
    ModelConfig mc;
    mc.vocab = 100;
    mc.d_model = 64;
    mc.n_state = 16;
    mc.kernel = 4;
    mc.expand = 2;
    mc.n_layers = 1;
    mc.l_max = 200;
    Rng init(1);
    auto model = EchoMambaModel<double>::init(mc, init);

    const std::int64_t d = 64, di = 128, n = 16, k = 4, r = (di + 15) / 16, v1 = 101,
                       bins = 200 / 2 + 1;
    const std::int64_t embedding = v1 * d;
    const std::int64_t embed_norm = 2 * d;
    const std::int64_t filter = 2 * bins * d + 2 * d;
    const std::int64_t block = di * n + (d * 2 * di + 2 * di) + (di * k + di) +
                               (di * (2 * n + r) + (2 * n + r)) + (r * di + di) +
                               (di * d + d) + di;
    const std::int64_t fuse = 2 * d * d + d;
    const std::int64_t glu_p = 2 * (d * d + d);
    const std::int64_t norms = 3 * 2 * d;
    const std::int64_t expect = embedding + embed_norm + filter + 2 * block + fuse + glu_p + norms;
    CHECK(model.parameter_count() == expect);
}

TEST_CASE("doubling the catalog roughly doubles embedding parameter bytes") {
    ModelConfig mc;
    mc.vocab = 100;
    mc.d_model = 16;
    mc.n_state = 4;
    mc.kernel = 2;
    mc.expand = 2;
    mc.n_layers = 1;
    mc.l_max = 20;
    Rng i1(1), i2(1);
    auto small = EchoMambaModel<double>::init(mc, i1);
    mc.vocab = 200;
    auto big = EchoMambaModel<double>::init(mc, i2);
    const std::int64_t delta = big.parameter_count() - small.parameter_count();
    CHECK(delta == 100 * 16);  // exactly the added embedding rows
}

TEST_CASE("activation estimate scales linearly with batch size") {
    ModelConfig mc;
    mc.vocab = 50;
    mc.l_max = 20;
    const auto one = activation_elements_estimate(mc, 1);
    const auto eight = activation_elements_estimate(mc, 8);
    CHECK(eight == 8 * one);
}
