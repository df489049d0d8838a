// Database = report store + LSH index + cached fingerprints, kept in step.
//
// Fingerprints are corpus-relative, so any store mutation invalidates all of
// them; refresh() recomputes the cache in one pass. Signatures depend only on
// each document's own token set and never go stale.
#pragma once

#include <filesystem>
#include <string>
#include <unordered_map>

#include "dysign/common.hpp"
#include "dysign/lsh_index.hpp"
#include "dysign/minhash.hpp"
#include "dysign/store.hpp"
#include "dysign/vectorizer.hpp"

namespace dysign {

struct Database {
    ReportStore store;
    LshIndex index;
    IdfMode idf_mode = IdfMode::Literal;
    std::unordered_map<std::string, Fingerprint> fingerprints;
    bool fingerprints_fresh = false;

    static Database build(ReportStore store, const MinHashParams& params,
                          IdfMode mode = IdfMode::Literal, unsigned threads = 1) {
        Database db{std::move(store), LshIndex(params), mode, {}, false};
        MinHasher hasher(params);
        const auto& records = db.store.records();
        std::vector<const std::pair<const std::string, StoredRecord>*> items;
        items.reserve(records.size());
        for (const auto& entry : records) items.push_back(&entry);
        auto sigs = parallel_map(items.size(), threads, [&](std::size_t i) {
            return hasher.sign_bag(items[i]->second.bag);
        });
        for (std::size_t i = 0; i < items.size(); ++i)
            db.index.insert(items[i]->first, sigs[i]);
        db.refresh_fingerprints(threads);
        return db;
    }

    void refresh_fingerprints(unsigned threads = 1) {
        // Unconditional: incremental updates number new tokens in arrival
        // order, and the rebuild renumbers them canonically (id order) so a
        // grown database is bit-identical to one built from scratch. Costs
        // one extra corpus pass, same order as the recompute below.
        store.refresh();
        const auto& stats = store.corpus();
        std::vector<const std::pair<const std::string, StoredRecord>*> items;
        items.reserve(store.records().size());
        for (const auto& entry : store.records()) items.push_back(&entry);
        auto fps = parallel_map(items.size(), threads, [&](std::size_t i) {
            return make_fingerprint(items[i]->second.bag, stats, idf_mode);
        });
        fingerprints.clear();
        fingerprints.reserve(items.size());
        for (std::size_t i = 0; i < items.size(); ++i)
            fingerprints.emplace(items[i]->first, std::move(fps[i]));
        fingerprints_fresh = true;
    }

    // Incremental: store stats absorb the report, the index gets its
    // signature, and the fingerprint cache is marked stale (every cached
    // weight shifted with the corpus).
    void update(const AnalysisReport& report) {
        store.update(report);
        index.insert(report.id, MinHasher(index.params()).sign_bag(report.bag));
        fingerprints_fresh = false;
    }

    const Fingerprint& fingerprint_of(const std::string& id) const {
        auto it = fingerprints.find(id);
        if (it == fingerprints.end())
            throw ConflictError("no fingerprint cached for id '" + id + "'");
        return it->second;
    }
};

// On-disk layout: <dir>/store.jsonl and <dir>/index.jsonl. Fingerprints are
// derived data and are always recomputed on load.
inline std::filesystem::path store_path(const std::filesystem::path& db_dir) {
    return db_dir / "store.jsonl";
}
inline std::filesystem::path index_path(const std::filesystem::path& db_dir) {
    return db_dir / "index.jsonl";
}

inline void save_database(const Database& db, const std::filesystem::path& db_dir) {
    std::filesystem::create_directories(db_dir);
    save_store(db.store, store_path(db_dir));
    save_index(db.index, index_path(db_dir));
}

inline Database load_database(const std::filesystem::path& db_dir,
                              const std::optional<MinHashParams>& expected_params = std::nullopt,
                              IdfMode mode = IdfMode::Literal, unsigned threads = 1) {
    ReportStore store = load_store(store_path(db_dir));
    LshIndex index = load_index(index_path(db_dir), expected_params);
    if (index.size() != store.size())
        throw FormatError(db_dir.string() + ": store has " + std::to_string(store.size()) +
                          " records but index has " + std::to_string(index.size()));
    Database db{std::move(store), std::move(index), mode, {}, false};
    db.refresh_fingerprints(threads);
    return db;
}

}  // namespace dysign
