#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "echomamba/errors.hpp"
#include "echomamba/rng.hpp"

namespace echomamba {

struct Interaction {
    std::string user;
    std::string item;
    std::int64_t timestamp = 0;
};

struct InteractionLog {
    std::vector<Interaction> records;  // file order, exact duplicates removed
};

enum class LogFormat { MovieLensDat, CsvTriples };

LogFormat parse_log_format(const std::string& name);

// movielens_dat: "user::item::rating::timestamp" (rating discarded).
// csv_triples:   header "user_id,item_id,timestamp" then rows.
InteractionLog ingest(const std::string& path, LogFormat format);

enum class KCoreMode { Iterative, SinglePass };

KCoreMode parse_k_core_mode(const std::string& name);

// Iterative mode removes users/items with < k interactions until fixpoint;
// single-pass does one user pass then one item pass.
InteractionLog k_core_filter(const InteractionLog& log, int k = 5,
                             KCoreMode mode = KCoreMode::Iterative);

struct DatasetStats {
    std::int64_t n_users = 0;
    std::int64_t n_items = 0;
    std::int64_t n_interactions = 0;
    double avg_length = 0.0;
};

// Per-user chronological item sequences over contiguous internal ids.
// Items start at 1; id 0 is the padding item. Splits are positional: per
// user the last item is the test target and the second-to-last the
// validation target.
struct SequenceDataset {
    std::vector<std::string> user_ids;               // internal user index -> external id
    std::vector<std::string> item_ids;               // internal item id -> external id; [0] = padding
    std::vector<std::vector<std::int64_t>> sequences;  // per user, ids in [1, n_items]
    DatasetStats stats;
    std::int64_t excluded_short_users = 0;  // < 3 interactions: no usable splits

    std::int64_t n_users() const { return static_cast<std::int64_t>(sequences.size()); }
    std::int64_t n_items() const { return static_cast<std::int64_t>(item_ids.size()) - 1; }
};

SequenceDataset build_sequences(const InteractionLog& log);

enum class Split { Train, Validation, Test };

// Left-padded batch: row positions [L_max - length, L_max) hold the most
// recent items in order, everything before is padding id 0.
struct Batch {
    std::int64_t rows = 0;
    std::int64_t l_max = 0;
    std::vector<std::int64_t> item_ids;  // [rows x l_max]
    std::vector<std::int64_t> lengths;   // [rows], each >= 1
    std::vector<std::int64_t> targets;   // [rows], each >= 1
    std::vector<std::int64_t> users;     // [rows] dataset user index
};

struct BatchOptions {
    std::int64_t batch_size = 2048;
    std::int64_t l_max = 200;
    bool all_prefixes = false;  // training only: one row per history prefix
};

// Training rows shuffle user order through `shuffle_rng` (pass nullptr for
// deterministic user-index order); the final partial batch is emitted.
std::vector<Batch> make_batches(const SequenceDataset& ds, Split split, const BatchOptions& opt,
                                Rng* shuffle_rng);

// Versioned binary cache of index maps, sequences, splits and stats.
void save_dataset_cache(const SequenceDataset& ds, const std::string& path);
SequenceDataset load_dataset_cache(const std::string& path);

}  // namespace echomamba
