// Corpus-relative tf-idf fingerprints and cosine similarity.
//
// A fingerprint's weights depend on the whole corpus through idf, so the
// corpus statistics (document count, document frequencies, vocabulary) are
// first-class and every weight is derived from them on demand:
//
//   tfidf(w, d) = tf(w, d) * idf(w)          tf = raw occurrence count
//   idf(w)      = ln(|D| / (1 + df(w)))      natural log
//
// idf can go negative once df(w) >= |D| (a token in every document). Literal
// mode keeps that value; FloorZero clamps it to 0, which drops the token.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dysign/common.hpp"
#include "dysign/report.hpp"

namespace dysign {

enum class IdfMode { Literal, FloorZero };

inline const char* to_string(IdfMode m) {
    return m == IdfMode::Literal ? "literal" : "floor0";
}

inline IdfMode idf_mode_from_string(std::string_view s) {
    if (s == "literal") return IdfMode::Literal;
    if (s == "floor0") return IdfMode::FloorZero;
    throw InvalidInputError("unknown idf mode: '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Corpus statistics
// ---------------------------------------------------------------------------

// Vocabulary ids are dense and assigned in first-appearance order over the
// bag sequence handed to build_corpus (token-sorted within each bag). Ids are
// a per-corpus detail: two stats built from the same documents in different
// orders agree on every df value but may number tokens differently.
struct CorpusStats {
    std::uint64_t n_docs = 0;
    std::unordered_map<std::string, std::uint32_t> vocab;  // token -> dense id
    std::vector<std::string> tokens;                       // dense id -> token
    std::vector<std::uint32_t> df;                         // dense id -> document frequency

    std::size_t vocab_size() const { return tokens.size(); }

    // Folds one more document into the statistics. New tokens get the next
    // free ids in bag order.
    void add_document(const TokenBag& bag) {
        for (const auto& [token, count] : bag.entries()) {
            (void)count;
            auto [it, inserted] = vocab.try_emplace(token, static_cast<std::uint32_t>(tokens.size()));
            if (inserted) {
                tokens.push_back(token);
                df.push_back(1);
            } else {
                ++df[it->second];
            }
        }
        ++n_docs;
    }
};

template <typename BagRange>
CorpusStats build_corpus(const BagRange& bags) {
    CorpusStats stats;
    for (const TokenBag& bag : bags) stats.add_document(bag);
    if (stats.n_docs == 0) throw InvalidInputError("build_corpus: empty document sequence");
    return stats;
}

// Same documents, regardless of numbering: document count and per-token df
// must match exactly. This is the equality that incremental updates preserve.
inline bool equivalent_stats(const CorpusStats& a, const CorpusStats& b) {
    if (a.n_docs != b.n_docs || a.vocab.size() != b.vocab.size()) return false;
    for (const auto& [token, id] : a.vocab) {
        auto it = b.vocab.find(token);
        if (it == b.vocab.end()) return false;
        if (a.df[id] != b.df[it->second]) return false;
    }
    return true;
}

inline double idf(const CorpusStats& stats, std::uint32_t token_id, IdfMode mode) {
    if (token_id >= stats.df.size())
        throw InvalidInputError("idf: unknown token id " + std::to_string(token_id));
    double value = std::log(static_cast<double>(stats.n_docs) /
                            (1.0 + static_cast<double>(stats.df[token_id])));
    if (mode == IdfMode::FloorZero && value < 0.0) return 0.0;
    return value;
}

// ---------------------------------------------------------------------------
// Fingerprints
// ---------------------------------------------------------------------------

// Sparse tf-idf vector: (token id, weight) entries sorted by id, zero weights
// omitted, L2 norm cached at construction.
struct Fingerprint {
    std::vector<std::pair<std::uint32_t, double>> entries;
    double norm = 0.0;

    bool empty() const { return entries.empty(); }

    static Fingerprint from_entries(std::vector<std::pair<std::uint32_t, double>> e) {
        Fingerprint fp;
        fp.entries = std::move(e);
        std::sort(fp.entries.begin(), fp.entries.end());
        double sq = 0.0;
        for (const auto& [id, w] : fp.entries) {
            (void)id;
            sq += w * w;
        }
        fp.norm = std::sqrt(sq);
        return fp;
    }
};

// Tokens missing from the vocabulary are skipped: they cannot match any
// document in the corpus the statistics describe.
inline Fingerprint make_fingerprint(const TokenBag& bag, const CorpusStats& stats, IdfMode mode) {
    std::vector<std::pair<std::uint32_t, double>> entries;
    entries.reserve(bag.distinct());
    for (const auto& [token, count] : bag.entries()) {
        auto it = stats.vocab.find(token);
        if (it == stats.vocab.end()) continue;
        double w = static_cast<double>(count) * idf(stats, it->second, mode);
        if (w == 0.0) continue;
        entries.emplace_back(it->second, w);
    }
    return Fingerprint::from_entries(std::move(entries));
}

// Fingerprint of a query that is not part of the corpus, weighted as if it
// were: document count n+1, and each query token's df bumped by one for the
// query's own occurrence. Keeps stored fingerprints untouched while new
// reports are scanned.
inline Fingerprint make_query_fingerprint(const TokenBag& bag, const CorpusStats& stats,
                                          IdfMode mode) {
    std::vector<std::pair<std::uint32_t, double>> entries;
    entries.reserve(bag.distinct());
    double n = static_cast<double>(stats.n_docs) + 1.0;
    for (const auto& [token, count] : bag.entries()) {
        auto it = stats.vocab.find(token);
        if (it == stats.vocab.end()) continue;
        double value = std::log(n / (2.0 + static_cast<double>(stats.df[it->second])));
        if (mode == IdfMode::FloorZero && value < 0.0) value = 0.0;
        double w = static_cast<double>(count) * value;
        if (w == 0.0) continue;
        entries.emplace_back(it->second, w);
    }
    return Fingerprint::from_entries(std::move(entries));
}

// Cosine similarity over the shared entries; either vector having zero norm
// yields 0 by convention.
inline double cosine(const Fingerprint& a, const Fingerprint& b) {
    if (a.norm == 0.0 || b.norm == 0.0) return 0.0;
    double dot = 0.0;
    auto ia = a.entries.begin();
    auto ib = b.entries.begin();
    while (ia != a.entries.end() && ib != b.entries.end()) {
        if (ia->first < ib->first) {
            ++ia;
        } else if (ib->first < ia->first) {
            ++ib;
        } else {
            dot += ia->second * ib->second;
            ++ia;
            ++ib;
        }
    }
    // Rounding can push a self-product a hair past 1; keep the result in range.
    return std::clamp(dot / (a.norm * b.norm), -1.0, 1.0);
}

}  // namespace dysign
