// Detection pipeline: approximate nearest-neighbor classification of new
// reports against the database, with an exact full-rescan conformance mode.
#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dysign/common.hpp"
#include "dysign/db.hpp"
#include "dysign/detector_config.hpp"

namespace dysign {

enum class Decision { Benign, Malicious };

inline const char* to_string(Decision d) { return d == Decision::Benign ? "Benign" : "Malicious"; }

struct Verdict {
    Decision decision = Decision::Benign;
    std::optional<std::string> family;
    double max_similarity = 0.0;
    std::optional<std::string> neighbor_id;
    bool fallback_used = false;
    std::size_t k_used = 0;
    // Diagnostics: ties at the top similarity are resolved toward the
    // lexicographically smallest id and flagged here.
    bool tie_detected = false;
    bool empty_store = false;
};

namespace detail {

inline void check_config(const DetectorConfig& cfg) {
    if (cfg.k < 1) throw InvalidInputError("detector k must be >= 1");
    if (!(cfg.min_similarity >= 0.0 && cfg.min_similarity < 1.0))
        throw InvalidInputError("min_similarity must lie in [0, 1)");
}

// Turns a ranked neighbor list (best first) into a verdict.
inline Verdict decide(const Database& db, const std::vector<Neighbor>& neighbors,
                      const DetectorConfig& cfg) {
    Verdict v;
    v.k_used = neighbors.size();
    const Neighbor& top = neighbors.front();
    v.max_similarity = top.similarity;
    v.neighbor_id = top.id;
    for (std::size_t i = 1; i < neighbors.size(); ++i)
        if (neighbors[i].similarity == top.similarity) v.tie_detected = true;

    auto label_of = [&](const std::string& id) -> const Label& {
        return db.store.record(id).label;
    };

    if (cfg.vote == Vote::NearestOnly) {
        if (top.similarity > cfg.min_similarity) {
            const Label& label = label_of(top.id);
            if (label.kind == LabelKind::Malware) {
                v.decision = Decision::Malicious;
                v.family = label.family;
            }
        }
        return v;
    }

    // MajorityOfK over the neighbors that clear the similarity bar. Vote ties
    // go to the nearest voter's side; the reported neighbor is the nearest
    // member of the winning side.
    std::vector<const Neighbor*> voters;
    for (const auto& n : neighbors)
        if (n.similarity > cfg.min_similarity) voters.push_back(&n);
    if (voters.empty()) return v;
    std::size_t malicious = 0;
    for (const auto* n : voters)
        if (label_of(n->id).kind == LabelKind::Malware) ++malicious;
    std::size_t benign = voters.size() - malicious;
    bool is_malicious = malicious != benign
                            ? malicious > benign
                            : label_of(voters.front()->id).kind == LabelKind::Malware;
    if (!is_malicious) {
        for (const auto* n : voters) {
            if (label_of(n->id).kind != LabelKind::Malware) {
                v.neighbor_id = n->id;
                break;
            }
        }
        return v;
    }
    v.decision = Decision::Malicious;
    std::map<std::string, std::size_t> family_votes;  // family -> count, first hit wins ties
    const Neighbor* deciding = nullptr;
    for (const auto* n : voters) {
        const Label& label = label_of(n->id);
        if (label.kind != LabelKind::Malware) continue;
        if (!deciding) deciding = n;
        ++family_votes[*label.family];
    }
    v.neighbor_id = deciding->id;
    std::string best_family;
    std::size_t best_votes = 0;
    for (const auto& [family, count] : family_votes) {
        if (count > best_votes) {
            best_family = family;
            best_votes = count;
        }
    }
    // Plurality tie: fall back to the nearest malicious voter's family.
    std::size_t with_best = 0;
    for (const auto& [family, count] : family_votes)
        if (count == best_votes) ++with_best;
    v.family = with_best == 1 ? best_family : *label_of(deciding->id).family;
    return v;
}

// Full joint rescan: rebuild corpus statistics over every stored report plus
// the query, fingerprint everything under them, and take the best cosine over
// the whole store. Quadratic per query; used for conformance checks.
inline Verdict classify_exact(const Database& db, const TokenBag& query, const DetectorConfig& cfg) {
    CorpusStats joint;
    for (const auto& [id, rec] : db.store.records()) {
        (void)id;
        joint.add_document(rec.bag);
    }
    joint.add_document(query);
    Fingerprint query_fp = make_fingerprint(query, joint, cfg.idf_mode);

    Verdict v;
    v.k_used = 1;
    bool first = true;
    double best = 0.0;
    std::string best_id;
    for (const auto& [id, rec] : db.store.records()) {
        double sim = cosine(query_fp, make_fingerprint(rec.bag, joint, cfg.idf_mode));
        if (first || sim > best) {  // strict: earliest (smallest) id keeps ties
            best = sim;
            best_id = id;
            first = false;
        } else if (sim == best) {
            v.tie_detected = true;
        }
    }
    v.max_similarity = best;
    v.neighbor_id = best_id;
    if (best > cfg.min_similarity) {
        const Label& label = db.store.record(best_id).label;
        if (label.kind == LabelKind::Malware) {
            v.decision = Decision::Malicious;
            v.family = label.family;
        }
    }
    return v;
}

}  // namespace detail

inline Verdict classify(const Database& db, const TokenBag& query, const DetectorConfig& cfg = {}) {
    detail::check_config(cfg);
    if (db.store.empty()) {
        log_warn("classify called against an empty store; returning Benign");
        Verdict v;
        v.empty_store = true;
        return v;
    }
    if (db.store.dirty() || !db.fingerprints_fresh)
        throw PreconditionError("database is stale; refresh fingerprints before classifying");
    if (cfg.idf_mode != db.idf_mode)
        throw PreconditionError("detector idf mode does not match the database's");
    if (cfg.exact) return detail::classify_exact(db, query, cfg);

    Fingerprint query_fp = make_query_fingerprint(query, db.store.corpus(), cfg.idf_mode);
    MinHashSignature query_sig = MinHasher(db.index.params()).sign_bag(query);
    KnnResult knn = db.index.knn(query_fp, query_sig, static_cast<std::size_t>(cfg.k),
                                 [&](const std::string& id) -> const Fingerprint& {
                                     return db.fingerprint_of(id);
                                 });
    Verdict v = detail::decide(db, knn.neighbors, cfg);
    v.fallback_used = knn.fallback_used;
    if (knn.tie_at_top) v.tie_detected = true;
    return v;
}

// ---------------------------------------------------------------------------
// Batch scanning
// ---------------------------------------------------------------------------

struct BatchItem {
    std::filesystem::path path;
    std::string query_id;
    std::optional<Verdict> verdict;
    std::string error;  // non-empty when this item failed to ingest
};

inline std::vector<BatchItem> classify_batch(const Database& db,
                                             const std::vector<std::filesystem::path>& paths,
                                             const DetectorConfig& cfg = {}, unsigned threads = 1) {
    detail::check_config(cfg);
    return parallel_map(paths.size(), threads, [&](std::size_t i) {
        BatchItem item;
        item.path = paths[i];
        try {
            AnalysisReport rep = ingest_report(paths[i], Label::unknown(), db.store.tokenizer());
            item.query_id = rep.id;
            item.verdict = classify(db, rep.bag, cfg);
        } catch (const Error& e) {
            item.error = e.what();
        }
        return item;
    });
}

// In-memory variant used by the evaluation harness.
inline std::vector<Verdict> classify_bags(const Database& db, const std::vector<TokenBag>& bags,
                                          const DetectorConfig& cfg = {}, unsigned threads = 1) {
    detail::check_config(cfg);
    return parallel_map(bags.size(), threads,
                        [&](std::size_t i) { return classify(db, bags[i], cfg); });
}

// One verdict line of the scan output stream.
inline nlohmann::json verdict_to_json(const std::string& query_id, const Verdict& v) {
    return {{"decision", to_string(v.decision)},
            {"fallback_used", v.fallback_used},
            {"family", v.family ? nlohmann::json(*v.family) : nlohmann::json()},
            {"max_similarity", v.max_similarity},
            {"neighbor_id", v.neighbor_id ? nlohmann::json(*v.neighbor_id) : nlohmann::json()},
            {"query_id", query_id}};
}

}  // namespace dysign
