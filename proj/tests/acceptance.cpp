// Acceptance suite: every criterion runs at its stated tolerance and prints
// one PASS/FAIL line. Exit 0 iff all pass.

#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "echomamba/evaluator.hpp"
#include "echomamba/trainer.hpp"
#include "echomamba/verify.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

using namespace echomamba;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
    static fs::path dir = [] {
        auto p = fs::temp_directory_path() / "echomamba_acceptance";
        fs::create_directories(p);
        return p;
    }();
    return dir;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

// --------------------------------------------------------------------------
// A1 — ingestion fidelity
// --------------------------------------------------------------------------
// Preferred: the public MovieLens-1M ratings file (checked against the
// published post-filter statistics within 1%). When it is not present, the
// bundled synthetic fixture substitutes with exact-equality expectations
// derived from an independent in-process k-core oracle.
bool run_a1(std::string& detail) {
    std::string ml1m;
    if (const char* env = std::getenv("MOVIELENS_1M_PATH")) ml1m = env;
    if (ml1m.empty() && fs::exists("ml-1m/ratings.dat")) ml1m = "ml-1m/ratings.dat";

    if (!ml1m.empty()) {
        auto log = ingest(ml1m, LogFormat::MovieLensDat);
        auto filtered = k_core_filter(log, 5, KCoreMode::Iterative);
        auto ds = build_sequences(filtered);
        const bool users_ok = std::fabs(ds.stats.n_users - 6040.0) / 6040.0 <= 0.01;
        const bool items_ok = std::fabs(ds.stats.n_items - 3416.0) / 3416.0 <= 0.01;
        const bool inter_ok = std::fabs(ds.stats.n_interactions - 999611.0) / 999611.0 <= 0.01;
        const bool len_ok = std::fabs(ds.stats.avg_length - 165.4) <= 0.5;
        detail = "MovieLens-1M: users " + std::to_string(ds.stats.n_users) + ", items " +
                 std::to_string(ds.stats.n_items) + ", interactions " +
                 std::to_string(ds.stats.n_interactions) + ", avg " + fmt(ds.stats.avg_length);
        return users_ok && items_ok && inter_ok && len_ok;
    }

    // synthetic fixture: frozen expectations for seed 424242 (raw 914
    // records; the 5-core cascade removes 10 fringe users and 7 drifters)
    auto fixture = synthetic::k_core_fixture(424242);
    const auto path = (scratch_dir() / "fixture.dat").string();
    synthetic::write_movielens_dat(fixture, path);

    auto log = ingest(path, LogFormat::MovieLensDat);
    if (log.records.size() != 914) {
        detail = "fixture raw count " + std::to_string(log.records.size()) + " != 914";
        return false;
    }
    auto filtered = k_core_filter(log, 5, KCoreMode::Iterative);
    auto ds = build_sequences(filtered);

    // independent oracle: recount-and-erase to fixpoint with ordered maps
    auto cur = log;
    while (true) {
        std::map<std::string, int> uc, ic;
        for (const auto& r : cur.records) {
            ++uc[r.user];
            ++ic[r.item];
        }
        std::vector<Interaction> keep;
        for (const auto& r : cur.records)
            if (uc[r.user] >= 5 && ic[r.item] >= 5) keep.push_back(r);
        if (keep.size() == cur.records.size()) break;
        cur.records = keep;
    }

    const bool frozen_ok = ds.stats.n_users == 60 && ds.stats.n_items == 40 &&
                           ds.stats.n_interactions == 857 &&
                           std::fabs(ds.stats.avg_length - 857.0 / 60.0) < 1e-12;
    const bool oracle_ok = cur.records.size() == filtered.records.size();
    detail = "fixture: users " + std::to_string(ds.stats.n_users) + "/60, items " +
             std::to_string(ds.stats.n_items) + "/40, interactions " +
             std::to_string(ds.stats.n_interactions) + "/857 (oracle " +
             std::to_string(cur.records.size()) + ")";
    return frozen_ok && oracle_ok;
}

// --------------------------------------------------------------------------
// A2 — gradient suite
// --------------------------------------------------------------------------
bool run_a2(std::string& detail) {
    std::ostringstream out;
    const bool ok = run_gradcheck_suite(out);
    std::string line;
    int checks = 0;
    std::istringstream is(out.str());
    while (std::getline(is, line)) ++checks;
    detail = std::to_string(checks) + " finite-difference checks, rel err < 1e-4 (64-bit)";
    if (!ok) detail += "\n" + out.str();
    return ok;
}

// --------------------------------------------------------------------------
// A3 — spectral oracles
// --------------------------------------------------------------------------
bool run_a3(std::string& detail) {
    Rng rng(333);
    double worst_rt = 0.0, worst_conv = 0.0, worst_parseval = 0.0;
    for (std::int64_t L : {4, 8, 50, 200}) {
        const std::int64_t D = 3, B = 2;
        Tensor<double> x = Tensor<double>::zeros({B, L, D});
        for (auto& v : x.values()) v = rng.uniform(-2.0, 2.0);

        // round trip
        auto back = irfft(rfft(x), L);
        for (std::size_t i = 0; i < x.values().size(); ++i)
            worst_rt = std::max(worst_rt, std::fabs(back.values()[i] - x.values()[i]));

        // convolution theorem: frequency multiply == circular convolution
        auto layer = SpectralFilterLayer<double>::init(L, D, 0.0, rng);
        auto branch = spectral_apply(x, layer.k_re, layer.k_im);
        ComplexTensor<double> spec = layer.coefficients();
        spec.shape = {1, L / 2 + 1, D};
        auto kernels = irfft(spec, L);
        for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t d = 0; d < D; ++d) {
                std::vector<double> sig(static_cast<std::size_t>(L)), ker(static_cast<std::size_t>(L));
                for (std::int64_t t = 0; t < L; ++t) {
                    sig[static_cast<std::size_t>(t)] = x.at({b, t, d});
                    ker[static_cast<std::size_t>(t)] = kernels.at({0, t, d});
                }
                auto expect = oracles::circular_conv(sig, ker);
                for (std::int64_t t = 0; t < L; ++t)
                    worst_conv = std::max(worst_conv,
                                          std::fabs(branch.at({b, t, d}) -
                                                    expect[static_cast<std::size_t>(t)]));
            }

        // Parseval with Hermitian-half weighting
        auto sx = rfft(x);
        const std::int64_t M = L / 2 + 1;
        for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t d = 0; d < D; ++d) {
                double te = 0.0, fe = 0.0;
                for (std::int64_t t = 0; t < L; ++t) te += x.at({b, t, d}) * x.at({b, t, d});
                for (std::int64_t m = 0; m < M; ++m) {
                    const bool degenerate = (m == 0) || (L % 2 == 0 && m == L / 2);
                    const auto o = static_cast<std::size_t>((b * M + m) * D + d);
                    fe += (degenerate ? 1.0 : 2.0) *
                          (sx.real[o] * sx.real[o] + sx.imag[o] * sx.imag[o]);
                }
                fe /= static_cast<double>(L);
                worst_parseval = std::max(worst_parseval, std::fabs(te - fe) / te);
            }
    }
    detail = "round trip " + fmt(worst_rt) + " (<=1e-10), conv theorem " + fmt(worst_conv) +
             " (<=1e-9), parseval " + fmt(worst_parseval) + " rel (<=1e-9), L in {4,8,50,200}";
    return worst_rt <= 1e-10 && worst_conv <= 1e-9 && worst_parseval <= 1e-9;
}

// --------------------------------------------------------------------------
// A4 — scan equivalence + linear-time scaling
// --------------------------------------------------------------------------
bool run_a4(std::string& detail) {
    // equivalence in 64-bit
    Rng rng(444);
    const std::int64_t B = 4, L = 512, Di = 16, N = 8;
    Tensor<double> x = Tensor<double>::zeros({B, L, Di});
    Tensor<double> a = Tensor<double>::zeros({B, L, Di, N});
    Tensor<double> b = Tensor<double>::zeros({B, L, Di, N});
    Tensor<double> c = Tensor<double>::zeros({B, L, N});
    Tensor<double> d = Tensor<double>::zeros({Di});
    for (auto& v : x.values()) v = rng.uniform(-1.0, 1.0);
    for (auto& v : a.values()) v = rng.uniform(0.1, 0.99);
    for (auto& v : b.values()) v = rng.uniform(-1.0, 1.0);
    for (auto& v : c.values()) v = rng.uniform(-1.0, 1.0);
    for (auto& v : d.values()) v = rng.uniform(-1.0, 1.0);
    auto seq = selective_scan(x, a, b, c, d);
    double worst = 0.0;
    for (std::int64_t chunk : {16, 64, 100}) {
        auto blk = selective_scan_blocked(x, a, b, c, d, chunk);
        for (std::size_t i = 0; i < seq.values().size(); ++i)
            worst = std::max(worst, std::fabs(seq.values()[i] - blk.values()[i]));
    }

    // linear-time claim: median-of-5 ratio at B=8, D_inner=64, N=16
    auto scaling = scan_scaling<float>(2048, 8, 64, 16);
    detail = "blocked vs sequential " + fmt(worst) + " (<=1e-10); time(4096)/time(2048) = " +
             fmt(scaling.ratio) + " (in [1.6, 2.8]; " + fmt(scaling.seconds_l) + "s vs " +
             fmt(scaling.seconds_2l) + "s)";
    return worst <= 1e-10 && scaling.ratio >= 1.6 && scaling.ratio <= 2.8;
}

// --------------------------------------------------------------------------
// A5 — learning smoke test on the planted-cycle dataset
// --------------------------------------------------------------------------
bool run_a5(std::string& detail) {
    auto log = synthetic::planted_cycles(500, 50, 20, 40, 0.10, 20240807);
    auto ds = build_sequences(log);

    // popularity baseline computed by this harness from training histories
    std::map<std::int64_t, std::int64_t> pop;
    for (const auto& seq : ds.sequences)
        for (std::size_t i = 0; i + 2 < seq.size(); ++i) ++pop[seq[i]];
    std::vector<std::pair<std::int64_t, std::int64_t>> by_count(pop.begin(), pop.end());
    std::stable_sort(by_count.begin(), by_count.end(),
                     [](auto l, auto r) { return l.second > r.second; });
    std::set<std::int64_t> top10;
    for (int i = 0; i < 10 && i < static_cast<int>(by_count.size()); ++i)
        top10.insert(by_count[static_cast<std::size_t>(i)].first);
    double pop_hr = 0.0;
    for (const auto& seq : ds.sequences) pop_hr += top10.count(seq.back()) ? 1.0 : 0.0;
    pop_hr /= static_cast<double>(ds.n_users());

    RunConfig cfg;
    cfg.l_max = 40;
    cfg.d_model = 32;
    cfg.n_state = 8;
    cfg.kernel = 2;
    cfg.expand = 2;
    cfg.n_layers = 1;
    cfg.dropout = 0.1;
    cfg.lr = 0.015;
    cfg.batch_size = 125;
    cfg.eval_batch_size = 500;
    cfg.epochs = 25;
    cfg.patience = 1000;
    cfg.seed = 1234;
    cfg.precision = 32;
    Rng init = SeededStreams(cfg.seed).stream("init");
    auto model = EchoMambaModel<float>::init(model_config_from(cfg, ds.n_items()), init);
    std::ostringstream sink;
    train(model, ds, cfg, sink);
    auto rep = evaluate(model, ds, Split::Test, cfg.eval_batch_size, 10);

    detail = "test HR@10 = " + fmt(rep.hr) + " (>= 0.5) vs popularity baseline " + fmt(pop_hr) +
             " (<= 0.25), 25 epochs";
    return rep.hr >= 0.5 && pop_hr <= 0.25;
}

// --------------------------------------------------------------------------
// A6 — metric oracle
// --------------------------------------------------------------------------
bool run_a6(std::string& detail) {
    Rng rng(666);
    double worst = 0.0;
    bool ordering = true;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng.below(50);
        std::vector<std::int64_t> ranks;
        for (std::size_t i = 0; i < n; ++i)
            ranks.push_back(1 + static_cast<std::int64_t>(rng.below(40)));
        const std::int64_t k = 10;
        double hr = 0.0, ndcg = 0.0, mrr = 0.0;
        for (auto r : ranks)
            if (r <= k) {
                hr += 1.0;
                ndcg += 1.0 / std::log2(static_cast<double>(r) + 1.0);
                mrr += 1.0 / static_cast<double>(r);
            }
        hr /= static_cast<double>(n);
        ndcg /= static_cast<double>(n);
        mrr /= static_cast<double>(n);
        worst = std::max({worst, std::fabs(hr_at_k(ranks, k) - hr),
                          std::fabs(ndcg_at_k(ranks, k) - ndcg),
                          std::fabs(mrr_at_k(ranks, k) - mrr)});
        ordering = ordering && mrr_at_k(ranks, k) <= ndcg_at_k(ranks, k) + 1e-15 &&
                   ndcg_at_k(ranks, k) <= hr_at_k(ranks, k) + 1e-15;
    }
    detail = "1000 random rank vectors, worst abs diff " + fmt(worst) +
             " (<=1e-12), MRR<=NDCG<=HR on all";
    return worst <= 1e-12 && ordering;
}

// --------------------------------------------------------------------------
// A7 — ablation reduces to a hand-assembled unidirectional graph
// --------------------------------------------------------------------------
bool run_a7(std::string& detail) {
    ModelConfig mc;
    mc.vocab = 12;
    mc.d_model = 4;
    mc.n_state = 2;
    mc.kernel = 2;
    mc.expand = 2;
    mc.n_layers = 2;
    mc.l_max = 6;
    mc.dropout = 0.0;
    mc.filter_dropout = 0.0;
    mc.filter_enabled = false;   // --no-filter
    mc.bidirectional = false;    // --unidirectional
    Rng init = SeededStreams(909).stream("init");
    auto model = EchoMambaModel<double>::init(mc, init);

    Batch batch;
    batch.rows = 2;
    batch.l_max = 6;
    batch.item_ids = {0, 0, 3, 9, 1, 12, 5, 2, 2, 7, 11, 4};
    batch.lengths = {4, 6};
    batch.targets = {6, 10};
    batch.users = {0, 1};
    Rng drop(1);
    auto got = model_forward(model, batch, false, drop);

    // reference graph assembled by hand from the same weights: embedding ->
    // layer norm -> per layer (add&norm around the forward Mamba block, then
    // GLU with its own add&norm) -> last position -> tied-embedding scores
    Tensor<double> h = embed(batch.item_ids, batch.rows, batch.l_max, model.embedding);
    h = layer_norm(h, model.embed_norm);
    for (auto& layer : model.layers) {
        Tensor<double> y =
            layer_norm(add(h, mamba_block_forward(h, layer.forward_block, mc.ssm)), layer.norm_fwd);
        h = layer_norm(add(y, glu(y, layer.glu_params)), layer.norm_out);
    }
    Tensor<double> expect = score_items(select_time(h, mc.l_max - 1), model.embedding);

    double worst = 0.0;
    for (std::size_t i = 0; i < expect.values().size(); ++i) {
        const double e = expect.values()[i];
        const double g = got.values()[i];
        if (e == g) continue;  // covers the lowest() padding column
        worst = std::max(worst, std::fabs(e - g));
    }
    detail = "no-filter unidirectional forward vs hand graph: max abs diff " + fmt(worst) +
             " (<=1e-10), 2 layers, 64-bit";
    return worst <= 1e-10;
}

// --------------------------------------------------------------------------
// A8 — determinism
// --------------------------------------------------------------------------
bool run_a8(std::string& detail) {
    auto log = synthetic::planted_cycles(100, 30, 10, 20, 0.1, 808);
    auto ds = build_sequences(log);
    RunConfig cfg;
    cfg.l_max = 20;
    cfg.d_model = 16;
    cfg.n_state = 4;
    cfg.kernel = 2;
    cfg.expand = 2;
    cfg.dropout = 0.2;
    cfg.lr = 0.01;
    cfg.batch_size = 32;
    cfg.eval_batch_size = 128;
    cfg.epochs = 6;
    cfg.patience = 100;
    cfg.seed = 31337;
    cfg.precision = 32;
    cfg.log_timing = false;  // wall-clock fields are the one nondeterministic output

    auto one_run = [&]() {
        Rng init = SeededStreams(cfg.seed).stream("init");
        auto model = EchoMambaModel<float>::init(model_config_from(cfg, ds.n_items()), init);
        std::ostringstream log_out;
        train(model, ds, cfg, log_out);
        return log_out.str();
    };
    const std::string first = one_run();
    const std::string second = one_run();
    detail = "two 6-epoch runs, 32-bit, single-threaded: logs " +
             std::string(first == second ? "bit-identical" : "DIFFER") + " (" +
             std::to_string(first.size()) + " bytes)";
    return !first.empty() && first == second;
}

}  // namespace

int main() {
    struct Criterion {
        const char* id;
        const char* what;
        double budget_seconds;
        std::function<bool(std::string&)> run;
    };
    const std::vector<Criterion> criteria = {
        {"A1", "ingestion fidelity", 60.0, run_a1},
        {"A2", "gradient suite", 120.0, run_a2},
        {"A3", "spectral oracles", 10.0, run_a3},
        {"A4", "scan equivalence + scaling", 60.0, run_a4},
        {"A5", "learning smoke test", 600.0, run_a5},
        {"A6", "metric oracle", 5.0, run_a6},
        {"A7", "ablation structure", 10.0, run_a7},
        {"A8", "determinism", 120.0, run_a8},
    };

    int passed = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        std::string detail;
        bool ok = false;
        try {
            ok = c.run(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (secs > c.budget_seconds) {
            ok = false;
            detail += " [over " + fmt(c.budget_seconds) + "s budget]";
        }
        std::printf("[%s] %s — %s (%.1fs) — %s\n", c.id, ok ? "PASS" : "FAIL", c.what, secs,
                    detail.c_str());
        std::fflush(stdout);
        if (ok) ++passed;
    }
    std::printf("[==] %d/%zu acceptance criteria passed\n", passed, criteria.size());
    return passed == static_cast<int>(criteria.size()) ? 0 : 1;
}
