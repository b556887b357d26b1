#include "echomamba/data.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

namespace echomamba {

namespace {

void rstrip_cr(std::string& s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.pop_back();
}

std::int64_t parse_timestamp(const std::string& field, const std::string& path, std::size_t line_no) {
    try {
        std::size_t pos = 0;
        const std::int64_t v = std::stoll(field, &pos);
        if (pos != field.size()) throw std::invalid_argument("trailing junk");
        return v;
    } catch (const std::exception&) {
        throw ParseError(path + ":" + std::to_string(line_no) + ": timestamp '" + field +
                         "' is not an integer");
    }
}

std::vector<std::string> split_on(const std::string& s, const std::string& sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = s.find(sep, start);
        if (pos == std::string::npos) {
            out.push_back(s.substr(start));
            break;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + sep.size();
    }
    return out;
}

std::string dedup_key(const Interaction& r) {
    return r.user + '\x1f' + r.item + '\x1f' + std::to_string(r.timestamp);
}

}  // namespace

LogFormat parse_log_format(const std::string& name) {
    if (name == "movielens_dat") return LogFormat::MovieLensDat;
    if (name == "csv_triples") return LogFormat::CsvTriples;
    throw ConfigError("unknown dataset format '" + name + "' (movielens_dat | csv_triples)");
}

KCoreMode parse_k_core_mode(const std::string& name) {
    if (name == "iterative") return KCoreMode::Iterative;
    if (name == "single_pass") return KCoreMode::SinglePass;
    throw ConfigError("unknown k-core mode '" + name + "' (iterative | single_pass)");
}

InteractionLog ingest(const std::string& path, LogFormat format) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open interaction file: " + path);

    InteractionLog log;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    bool header_done = false;

    while (std::getline(in, line)) {
        ++line_no;
        rstrip_cr(line);
        if (format == LogFormat::CsvTriples && !header_done) {
            header_done = true;
            if (line != "user_id,item_id,timestamp")
                throw ParseError(path + ":1: expected header 'user_id,item_id,timestamp', got '" +
                                 line + "'");
            continue;
        }
        if (line.empty()) continue;

        Interaction r;
        if (format == LogFormat::MovieLensDat) {
            const auto fields = split_on(line, "::");
            if (fields.size() != 4)
                throw ParseError(path + ":" + std::to_string(line_no) +
                                 ": expected user::item::rating::timestamp, got " +
                                 std::to_string(fields.size()) + " field(s)");
            r.user = fields[0];
            r.item = fields[1];
            r.timestamp = parse_timestamp(fields[3], path, line_no);
        } else {
            const auto fields = split_on(line, ",");
            if (fields.size() != 3)
                throw ParseError(path + ":" + std::to_string(line_no) +
                                 ": expected user_id,item_id,timestamp, got " +
                                 std::to_string(fields.size()) + " field(s)");
            r.user = fields[0];
            r.item = fields[1];
            r.timestamp = parse_timestamp(fields[2], path, line_no);
        }
        if (r.user.empty() || r.item.empty())
            throw ParseError(path + ":" + std::to_string(line_no) + ": empty user or item id");
        if (seen.insert(dedup_key(r)).second) log.records.push_back(std::move(r));
    }
    if (log.records.empty()) throw DataError("no interactions found in " + path);
    return log;
}

namespace {

// One removal sweep; returns the surviving records in original order.
std::vector<Interaction> filter_once(std::vector<Interaction> records, int k, bool by_user,
                                     bool by_item) {
    std::unordered_map<std::string, int> user_count, item_count;
    for (const auto& r : records) {
        ++user_count[r.user];
        ++item_count[r.item];
    }
    std::vector<Interaction> kept;
    kept.reserve(records.size());
    for (auto& r : records) {
        if (by_user && user_count[r.user] < k) continue;
        if (by_item && item_count[r.item] < k) continue;
        kept.push_back(std::move(r));
    }
    return kept;
}

}  // namespace

InteractionLog k_core_filter(const InteractionLog& log, int k, KCoreMode mode) {
    if (k < 1) throw ContractError("k-core k must be >= 1, got " + std::to_string(k));
    std::vector<Interaction> records = log.records;
    if (mode == KCoreMode::SinglePass) {
        records = filter_once(std::move(records), k, true, false);
        records = filter_once(std::move(records), k, false, true);
    } else {
        while (true) {
            const std::size_t before = records.size();
            records = filter_once(std::move(records), k, true, true);
            if (records.size() == before) break;
        }
    }
    if (records.empty())
        throw DataError("dataset fully filtered: no user/item survives the " + std::to_string(k) +
                        "-core");
    InteractionLog out;
    out.records = std::move(records);
    return out;
}

SequenceDataset build_sequences(const InteractionLog& log) {
    SequenceDataset ds;
    ds.item_ids.push_back("");  // padding slot

    std::unordered_map<std::string, std::int64_t> user_index, item_index;
    std::vector<std::vector<std::pair<std::int64_t, std::int64_t>>> per_user;  // (timestamp, item)

    for (const auto& r : log.records) {
        auto [uit, user_new] = user_index.try_emplace(
            r.user, static_cast<std::int64_t>(ds.user_ids.size()));
        if (user_new) {
            ds.user_ids.push_back(r.user);
            per_user.emplace_back();
        }
        auto [iit, item_new] = item_index.try_emplace(
            r.item, static_cast<std::int64_t>(ds.item_ids.size()));
        if (item_new) ds.item_ids.push_back(r.item);
        per_user[static_cast<std::size_t>(uit->second)].emplace_back(r.timestamp, iit->second);
    }

    std::int64_t total = 0;
    std::vector<std::string> kept_users;
    for (std::size_t u = 0; u < per_user.size(); ++u) {
        auto& events = per_user[u];
        std::stable_sort(events.begin(), events.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        if (events.size() < 3) {
            ++ds.excluded_short_users;
            continue;
        }
        std::vector<std::int64_t> seq;
        seq.reserve(events.size());
        for (const auto& [ts, item] : events) seq.push_back(item);
        total += static_cast<std::int64_t>(seq.size());
        ds.sequences.push_back(std::move(seq));
        kept_users.push_back(ds.user_ids[u]);
    }
    ds.user_ids = std::move(kept_users);
    if (ds.excluded_short_users > 0)
        std::fprintf(stderr, "warning: excluded %lld user(s) with < 3 interactions\n",
                     static_cast<long long>(ds.excluded_short_users));

    ds.stats.n_users = ds.n_users();
    ds.stats.n_items = ds.n_items();
    ds.stats.n_interactions = total;
    ds.stats.avg_length =
        ds.stats.n_users ? static_cast<double>(total) / static_cast<double>(ds.stats.n_users) : 0.0;
    return ds;
}

namespace {

void push_row(Batch& b, const std::vector<std::int64_t>& prefix, std::int64_t target,
              std::int64_t user, std::int64_t l_max) {
    const std::int64_t take = std::min<std::int64_t>(static_cast<std::int64_t>(prefix.size()), l_max);
    b.item_ids.resize(b.item_ids.size() + static_cast<std::size_t>(l_max), 0);
    std::int64_t* row = b.item_ids.data() + b.rows * l_max;
    for (std::int64_t i = 0; i < take; ++i)
        row[l_max - take + i] = prefix[prefix.size() - static_cast<std::size_t>(take) +
                                       static_cast<std::size_t>(i)];
    b.lengths.push_back(take);
    b.targets.push_back(target);
    b.users.push_back(user);
    ++b.rows;
}

}  // namespace

std::vector<Batch> make_batches(const SequenceDataset& ds, Split split, const BatchOptions& opt,
                                Rng* shuffle_rng) {
    if (opt.batch_size < 1 || opt.l_max < 1)
        throw ContractError("batch_size and l_max must be positive");

    // (user, prefix length, target index) rows before batching
    struct RowSpec {
        std::int64_t user;
        std::int64_t prefix_len;
        std::int64_t target_idx;
    };
    std::vector<RowSpec> rows;
    for (std::int64_t u = 0; u < ds.n_users(); ++u) {
        const auto& seq = ds.sequences[static_cast<std::size_t>(u)];
        const std::int64_t n = static_cast<std::int64_t>(seq.size());
        switch (split) {
            case Split::Test:
                rows.push_back({u, n - 1, n - 1});
                break;
            case Split::Validation:
                rows.push_back({u, n - 2, n - 2});
                break;
            case Split::Train:
                if (opt.all_prefixes) {
                    for (std::int64_t j = 1; j <= n - 3; ++j) rows.push_back({u, j, j});
                } else if (n >= 4) {
                    rows.push_back({u, n - 3, n - 3});
                }
                break;
        }
    }
    if (split == Split::Train && shuffle_rng != nullptr) shuffle_rng->shuffle(rows);

    std::vector<Batch> batches;
    Batch current;
    current.l_max = opt.l_max;
    for (const auto& r : rows) {
        const auto& seq = ds.sequences[static_cast<std::size_t>(r.user)];
        std::vector<std::int64_t> prefix(seq.begin(), seq.begin() + r.prefix_len);
        push_row(current, prefix, seq[static_cast<std::size_t>(r.target_idx)], r.user, opt.l_max);
        if (current.rows == opt.batch_size) {
            batches.push_back(std::move(current));
            current = Batch{};
            current.l_max = opt.l_max;
        }
    }
    if (current.rows > 0) batches.push_back(std::move(current));
    return batches;
}

// ---------------------------------------------------------------------------
// Dataset cache (versioned binary, native little-endian)
// ---------------------------------------------------------------------------

namespace {

constexpr char kCacheMagic[8] = {'E', 'M', 'D', 'C', '0', '0', '0', '1'};

template <typename T>
void write_pod(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw ParseError("truncated dataset cache: " + path);
    return v;
}

void write_string(std::ofstream& out, const std::string& s) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::ifstream& in, const std::string& path) {
    const auto len = read_pod<std::uint32_t>(in, path);
    std::string s(len, '\0');
    in.read(s.data(), static_cast<std::streamsize>(len));
    if (!in) throw ParseError("truncated dataset cache: " + path);
    return s;
}

}  // namespace

void save_dataset_cache(const SequenceDataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write dataset cache: " + path);
    out.write(kCacheMagic, sizeof(kCacheMagic));
    write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(ds.user_ids.size()));
    write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(ds.item_ids.size()));
    for (const auto& s : ds.user_ids) write_string(out, s);
    for (const auto& s : ds.item_ids) write_string(out, s);
    for (const auto& seq : ds.sequences) {
        write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(seq.size()));
        out.write(reinterpret_cast<const char*>(seq.data()),
                  static_cast<std::streamsize>(seq.size() * sizeof(std::int64_t)));
        // positional split markers: train prefix length, validation and test targets
        const std::int64_t n = static_cast<std::int64_t>(seq.size());
        write_pod<std::int64_t>(out, n - 2);
        write_pod<std::int64_t>(out, seq[static_cast<std::size_t>(n - 2)]);
        write_pod<std::int64_t>(out, seq[static_cast<std::size_t>(n - 1)]);
    }
    write_pod<std::int64_t>(out, ds.stats.n_users);
    write_pod<std::int64_t>(out, ds.stats.n_items);
    write_pod<std::int64_t>(out, ds.stats.n_interactions);
    write_pod<double>(out, ds.stats.avg_length);
    write_pod<std::int64_t>(out, ds.excluded_short_users);
    if (!out) throw DataError("failed writing dataset cache: " + path);
}

SequenceDataset load_dataset_cache(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open dataset cache: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || !std::equal(magic, magic + 8, kCacheMagic))
        throw ParseError("not a dataset cache (bad magic): " + path);

    SequenceDataset ds;
    const auto n_users = read_pod<std::uint64_t>(in, path);
    const auto n_items = read_pod<std::uint64_t>(in, path);
    ds.user_ids.reserve(n_users);
    for (std::uint64_t i = 0; i < n_users; ++i) ds.user_ids.push_back(read_string(in, path));
    ds.item_ids.reserve(n_items);
    for (std::uint64_t i = 0; i < n_items; ++i) ds.item_ids.push_back(read_string(in, path));
    ds.sequences.resize(n_users);
    for (auto& seq : ds.sequences) {
        const auto len = read_pod<std::uint64_t>(in, path);
        seq.resize(len);
        in.read(reinterpret_cast<char*>(seq.data()),
                static_cast<std::streamsize>(len * sizeof(std::int64_t)));
        if (!in) throw ParseError("truncated dataset cache: " + path);
        (void)read_pod<std::int64_t>(in, path);  // split markers are positional
        (void)read_pod<std::int64_t>(in, path);
        (void)read_pod<std::int64_t>(in, path);
    }
    ds.stats.n_users = read_pod<std::int64_t>(in, path);
    ds.stats.n_items = read_pod<std::int64_t>(in, path);
    ds.stats.n_interactions = read_pod<std::int64_t>(in, path);
    ds.stats.avg_length = read_pod<double>(in, path);
    ds.excluded_short_users = read_pod<std::int64_t>(in, path);
    return ds;
}

}  // namespace echomamba
