#pragma once

// Synthetic interaction generators shared by the unit and acceptance suites.

#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "echomamba/data.hpp"
#include "echomamba/rng.hpp"

namespace synthetic {

// Each user walks their own random cyclic permutation of `cycle_len` items
// (drawn from `n_items`), `walk_len` steps from a random phase; each emitted
// item is replaced by a uniform random item with probability `noise`.
inline echomamba::InteractionLog planted_cycles(std::int64_t n_users, std::int64_t n_items,
                                                std::int64_t cycle_len, std::int64_t walk_len,
                                                double noise, std::uint64_t seed) {
    echomamba::Rng rng(seed);
    echomamba::InteractionLog log;
    std::vector<std::int64_t> pool(static_cast<std::size_t>(n_items));
    std::iota(pool.begin(), pool.end(), 1);
    for (std::int64_t u = 0; u < n_users; ++u) {
        rng.shuffle(pool);
        std::vector<std::int64_t> cycle(pool.begin(), pool.begin() + cycle_len);
        const std::int64_t phase = static_cast<std::int64_t>(rng.below(cycle_len));
        for (std::int64_t s = 0; s < walk_len; ++s) {
            std::int64_t item = cycle[static_cast<std::size_t>((phase + s) % cycle_len)];
            if (rng.next_unit() < noise)
                item = 1 + static_cast<std::int64_t>(rng.below(n_items));
            log.records.push_back({"u" + std::to_string(u), "i" + std::to_string(item), s});
        }
    }
    return log;
}

inline void write_csv_triples(const echomamba::InteractionLog& log, const std::string& path) {
    std::ofstream out(path);
    out << "user_id,item_id,timestamp\n";
    for (const auto& r : log.records) out << r.user << ',' << r.item << ',' << r.timestamp << "\n";
}

inline void write_movielens_dat(const echomamba::InteractionLog& log, const std::string& path) {
    std::ofstream out(path);
    for (const auto& r : log.records)
        out << r.user << "::" << r.item << "::3::" << r.timestamp << "\n";
}

// Fixture for the ingestion check: a designed interaction set whose 5-core
// is known by construction. `core_users` heavy users over `core_items`
// popular items survive; fringe users sit at exactly k interactions but
// lean on rare items, so the iterative fixpoint peels them away while a
// single user+item pass keeps part of the chain.
inline echomamba::InteractionLog k_core_fixture(std::uint64_t seed) {
    echomamba::Rng rng(seed);
    echomamba::InteractionLog log;
    const std::int64_t core_users = 60, core_items = 40;
    std::int64_t ts = 0;
    auto push = [&](std::int64_t u, std::int64_t i) {
        log.records.push_back({"u" + std::to_string(u), "i" + std::to_string(i), ts++});
    };
    // dense core: every core user hits 8..20 distinct core items
    std::vector<std::int64_t> items(static_cast<std::size_t>(core_items));
    std::iota(items.begin(), items.end(), 0);
    for (std::int64_t u = 0; u < core_users; ++u) {
        rng.shuffle(items);
        const std::int64_t cnt = 8 + static_cast<std::int64_t>(rng.below(13));
        for (std::int64_t j = 0; j < cnt; ++j) push(u, items[static_cast<std::size_t>(j)]);
    }
    // cascade chain: fringe user 100+j has exactly 5 interactions, 4 on core
    // items and 1 on rare item 1000+j, which only that user touches
    for (std::int64_t j = 0; j < 10; ++j) {
        const std::int64_t u = 100 + j;
        for (std::int64_t c = 0; c < 4; ++c)
            push(u, items[static_cast<std::size_t>((j + c) % core_items)]);
        push(u, 1000 + j);
    }
    // drifters with too few interactions in any case
    for (std::int64_t j = 0; j < 7; ++j) push(200 + j, 1100 + j);
    return log;
}

}  // namespace synthetic
