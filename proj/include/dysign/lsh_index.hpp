// Banded LSH index over minhash signatures.
//
// A signature's N rows split into b bands of r rows; each band hashes to a
// bucket key. Two documents become candidates when any band key matches, so a
// pair with Jaccard similarity s collides with probability 1 - (1 - s^r)^b,
// an S-curve with threshold near (1/b)^(1/r) (~0.42 at b=32, r=4). Queries
// re-rank the candidates by exact cosine over tf-idf fingerprints, which the
// index does not own: callers supply a lookup.
#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "dysign/common.hpp"
#include "dysign/minhash.hpp"
#include "dysign/vectorizer.hpp"

namespace dysign {

inline constexpr int kIndexFormatVersion = 1;

struct Neighbor {
    std::string id;
    double similarity = 0.0;

    bool operator==(const Neighbor&) const = default;
};

struct KnnResult {
    std::vector<Neighbor> neighbors;
    bool fallback_used = false;
    // True when the top similarity was shared by more than one scored
    // candidate, even if truncation to k hid the runner-up.
    bool tie_at_top = false;
};

class LshIndex {
public:
    explicit LshIndex(const MinHashParams& params) : params_(params) {
        params_.validate();
        buckets_.resize(params_.n_bands);
    }

    const MinHashParams& params() const { return params_; }
    std::size_t size() const { return handle_of_.size(); }
    bool contains(const std::string& id) const { return handle_of_.count(id) != 0; }

    void insert(const std::string& id, const MinHashSignature& sig) {
        check_signature(sig);
        if (contains(id)) throw ConflictError("lsh index already contains id '" + id + "'");
        std::uint32_t h;
        if (!free_handles_.empty()) {
            h = free_handles_.back();
            free_handles_.pop_back();
            ids_[h] = id;
            sigs_[h] = sig;
        } else {
            h = static_cast<std::uint32_t>(ids_.size());
            ids_.push_back(id);
            sigs_.push_back(sig);
        }
        handle_of_.emplace(id, h);
        for (std::uint32_t band = 0; band < params_.n_bands; ++band)
            buckets_[band][band_key(sig, band, params_.rows_per_band)].push_back(h);
    }

    void remove(const std::string& id) {
        auto it = handle_of_.find(id);
        if (it == handle_of_.end())
            throw ConflictError("lsh index does not contain id '" + id + "'");
        std::uint32_t h = it->second;
        for (std::uint32_t band = 0; band < params_.n_bands; ++band) {
            std::uint64_t key = band_key(sigs_[h], band, params_.rows_per_band);
            auto bucket_it = buckets_[band].find(key);
            auto& members = bucket_it->second;
            members.erase(std::find(members.begin(), members.end(), h));
            if (members.empty()) buckets_[band].erase(bucket_it);
        }
        handle_of_.erase(it);
        ids_[h].clear();
        sigs_[h].values.clear();
        free_handles_.push_back(h);
    }

    const MinHashSignature& signature_of(const std::string& id) const {
        auto it = handle_of_.find(id);
        if (it == handle_of_.end())
            throw ConflictError("lsh index does not contain id '" + id + "'");
        return sigs_[it->second];
    }

    // Union of the query's band buckets, sorted by id.
    std::vector<std::string> candidates(const MinHashSignature& sig) const {
        std::vector<std::string> out;
        for (std::uint32_t h : candidate_handles(sig)) out.push_back(ids_[h]);
        std::sort(out.begin(), out.end());
        return out;
    }

    // k nearest stored documents by exact cosine between query_fp and the
    // candidates' fingerprints (ties broken by ascending id). When fewer than
    // k candidates surface and fallback is allowed, scores the whole index
    // instead and flags that it did.
    template <typename FingerprintLookup>
    KnnResult knn(const Fingerprint& query_fp, const MinHashSignature& query_sig, std::size_t k,
                  FingerprintLookup&& lookup, bool allow_fallback = true) const {
        if (k == 0) throw InvalidInputError("knn: k must be >= 1");
        KnnResult result;
        if (handle_of_.empty()) return result;
        std::vector<std::uint32_t> pool = candidate_handles(query_sig);
        if (pool.size() < k && allow_fallback) {
            pool.clear();
            pool.reserve(handle_of_.size());
            for (const auto& [id, h] : handle_of_) {
                (void)id;
                pool.push_back(h);
            }
            result.fallback_used = true;
        }
        std::vector<std::pair<double, std::uint32_t>> scored;
        scored.reserve(pool.size());
        for (std::uint32_t h : pool)
            scored.emplace_back(cosine(query_fp, lookup(ids_[h])), h);
        std::sort(scored.begin(), scored.end(), [this](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return ids_[a.second] < ids_[b.second];
        });
        if (scored.size() >= 2 && scored[0].first == scored[1].first) result.tie_at_top = true;
        if (scored.size() > k) scored.resize(k);
        result.neighbors.reserve(scored.size());
        for (const auto& [sim, h] : scored) result.neighbors.push_back({ids_[h], sim});
        return result;
    }

    // All stored ids, ascending. Brute-force baselines and serialization walk this.
    std::vector<std::string> ids() const {
        std::vector<std::string> out;
        out.reserve(handle_of_.size());
        for (const auto& [id, h] : handle_of_) {
            (void)h;
            out.push_back(id);
        }
        std::sort(out.begin(), out.end());
        return out;
    }

    // Bucket contents by band with member ids sorted; test hook for the
    // insert/remove inverse property and rehash checks.
    std::vector<std::map<std::uint64_t, std::vector<std::string>>> bucket_snapshot() const {
        std::vector<std::map<std::uint64_t, std::vector<std::string>>> snap(params_.n_bands);
        for (std::uint32_t band = 0; band < params_.n_bands; ++band) {
            for (const auto& [key, members] : buckets_[band]) {
                auto& entry = snap[band][key];
                for (std::uint32_t h : members) entry.push_back(ids_[h]);
                std::sort(entry.begin(), entry.end());
            }
        }
        return snap;
    }

    // Every stored id must sit in exactly one bucket per band, under the key
    // its stored signature hashes to.
    bool check_integrity() const {
        for (std::uint32_t band = 0; band < params_.n_bands; ++band) {
            std::size_t members = 0;
            for (const auto& [key, bucket] : buckets_[band]) {
                members += bucket.size();
                for (std::uint32_t h : bucket) {
                    if (ids_[h].empty()) return false;
                    if (band_key(sigs_[h], band, params_.rows_per_band) != key) return false;
                }
            }
            if (members != handle_of_.size()) return false;
        }
        return true;
    }

private:
    void check_signature(const MinHashSignature& sig) const {
        if (sig.values.size() != params_.n_hashes)
            throw InvalidInputError("signature length " + std::to_string(sig.values.size()) +
                                    " does not match index n_hashes " +
                                    std::to_string(params_.n_hashes));
    }

    std::vector<std::uint32_t> candidate_handles(const MinHashSignature& sig) const {
        check_signature(sig);
        std::vector<std::uint32_t> out;
        std::unordered_set<std::uint32_t> seen;
        for (std::uint32_t band = 0; band < params_.n_bands; ++band) {
            auto it = buckets_[band].find(band_key(sig, band, params_.rows_per_band));
            if (it == buckets_[band].end()) continue;
            for (std::uint32_t h : it->second)
                if (seen.insert(h).second) out.push_back(h);
        }
        return out;
    }

    MinHashParams params_;
    std::vector<std::string> ids_;          // handle -> id ("" when free)
    std::vector<MinHashSignature> sigs_;    // handle -> signature
    std::unordered_map<std::string, std::uint32_t> handle_of_;
    std::vector<std::uint32_t> free_handles_;
    std::vector<std::unordered_map<std::uint64_t, std::vector<std::uint32_t>>> buckets_;
};

// ---------------------------------------------------------------------------
// Serialization: JSON lines. Line 1 is a header with the format version and
// the minhash parameters; each further line is one {"id", "values"} record.
// Appending records is legal (see store.hpp for the shared convention), so
// record_count reflects the last full save and may undercount.
// ---------------------------------------------------------------------------

inline void append_index_record(std::ostream& out, const std::string& id,
                                const MinHashSignature& sig) {
    nlohmann::json rec{{"id", id}, {"values", sig.values}};
    out << rec.dump() << "\n";
}

inline void save_index(const LshIndex& index, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write index file: " + path.string());
    const auto& p = index.params();
    nlohmann::json header{{"format_version", kIndexFormatVersion},
                          {"kind", "lsh-index"},
                          {"n_hashes", p.n_hashes},
                          {"n_bands", p.n_bands},
                          {"rows_per_band", p.rows_per_band},
                          {"seed", p.seed},
                          {"record_count", index.size()}};
    out << header.dump() << "\n";
    for (const auto& id : index.ids()) append_index_record(out, id, index.signature_of(id));
    if (!out) throw IoError("write failed: " + path.string());
}

inline LshIndex load_index(const std::filesystem::path& path,
                           const std::optional<MinHashParams>& expected = std::nullopt) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open index file: " + path.string());
    std::string line;
    if (!std::getline(in, line) || line.empty())
        throw FormatError(path.string() + ":1: missing index header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ":1: bad index header: " + e.what());
    }
    int version = header.value("format_version", -1);
    if (version != kIndexFormatVersion)
        throw FormatError(path.string() + ": index format version " + std::to_string(version) +
                          " is incompatible with supported version " +
                          std::to_string(kIndexFormatVersion));
    MinHashParams params;
    try {
        params.n_hashes = header.at("n_hashes").get<std::uint32_t>();
        params.n_bands = header.at("n_bands").get<std::uint32_t>();
        params.rows_per_band = header.at("rows_per_band").get<std::uint32_t>();
        params.seed = header.at("seed").get<std::uint64_t>();
        params.validate();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ":1: bad index header: " + e.what());
    }
    if (expected && !(params == *expected)) {
        throw FormatError(path.string() + ": index parameters (N=" +
                          std::to_string(params.n_hashes) + ", b=" + std::to_string(params.n_bands) +
                          ", r=" + std::to_string(params.rows_per_band) +
                          ", seed=" + std::to_string(params.seed) + ") do not match expected (N=" +
                          std::to_string(expected->n_hashes) + ", b=" +
                          std::to_string(expected->n_bands) + ", r=" +
                          std::to_string(expected->rows_per_band) + ", seed=" +
                          std::to_string(expected->seed) + ")");
    }
    LshIndex index(params);
    std::uint64_t declared = header.value("record_count", std::uint64_t{0});
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
            MinHashSignature sig;
            sig.values = rec.at("values").get<std::vector<std::uint64_t>>();
            index.insert(rec.at("id").get<std::string>(), sig);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) +
                              ": corrupt index record: " + e.what());
        } catch (const ConflictError& e) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (index.size() < declared)
        throw FormatError(path.string() + ": truncated index: header declares " +
                          std::to_string(declared) + " records, found " +
                          std::to_string(index.size()));
    return index;
}

}  // namespace dysign
