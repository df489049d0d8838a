// Minhash signatures over token sets.
//
// Signature position i holds the minimum of h_i over the set's tokens, where
// h_i comes from a seeded family of 64-bit hash functions (member i is salted
// with seed ^ i). The fraction of agreeing positions between two signatures
// estimates the Jaccard similarity of the underlying sets.
#pragma once

#include <cstdint>
#include <limits>
#include <string_view>
#include <vector>

#include "dysign/common.hpp"
#include "dysign/report.hpp"

namespace dysign {

// The empty set has no minimum; every position takes this sentinel.
inline constexpr std::uint64_t kEmptySetSentinel = std::numeric_limits<std::uint64_t>::max();

struct MinHashParams {
    std::uint32_t n_hashes = 128;      // signature length N
    std::uint32_t n_bands = 32;        // b
    std::uint32_t rows_per_band = 4;   // r, with b * r == N
    std::uint64_t seed = 0;

    void validate() const {
        if (n_hashes == 0 || n_bands == 0 || rows_per_band == 0)
            throw InvalidInputError("minhash params must be positive");
        if (n_bands * rows_per_band != n_hashes)
            throw InvalidInputError("minhash params need n_bands * rows_per_band == n_hashes (" +
                                    std::to_string(n_bands) + " * " + std::to_string(rows_per_band) +
                                    " != " + std::to_string(n_hashes) + ")");
    }

    bool operator==(const MinHashParams&) const = default;
};

struct MinHashSignature {
    std::vector<std::uint64_t> values;

    bool operator==(const MinHashSignature&) const = default;
};

// Precomputes the per-position salts once; reuse across documents when
// signing a whole corpus.
class MinHasher {
public:
    explicit MinHasher(const MinHashParams& params) : params_(params) {
        params_.validate();
        salts_.resize(params_.n_hashes);
        for (std::uint32_t i = 0; i < params_.n_hashes; ++i)
            salts_[i] = mix64(params_.seed ^ static_cast<std::uint64_t>(i));
    }

    const MinHashParams& params() const { return params_; }

    template <typename TokenRange>
    MinHashSignature sign(const TokenRange& tokens) const {
        MinHashSignature sig;
        sig.values.assign(params_.n_hashes, kEmptySetSentinel);
        for (const auto& token : tokens) {
            std::uint64_t base = fnv1a64(std::string_view(token));
            for (std::uint32_t i = 0; i < params_.n_hashes; ++i) {
                std::uint64_t h = mix64(base ^ salts_[i]);
                if (h < sig.values[i]) sig.values[i] = h;
            }
        }
        return sig;
    }

    // Counts only the distinct tokens; multiplicity is a tf-idf concern.
    MinHashSignature sign_bag(const TokenBag& bag) const {
        struct FirstView {
            const std::vector<TokenBag::Entry>& entries;
            struct It {
                std::vector<TokenBag::Entry>::const_iterator it;
                const std::string& operator*() const { return it->first; }
                It& operator++() { ++it; return *this; }
                bool operator!=(const It& o) const { return it != o.it; }
            };
            It begin() const { return {entries.begin()}; }
            It end() const { return {entries.end()}; }
        };
        return sign(FirstView{bag.entries()});
    }

private:
    MinHashParams params_;
    std::vector<std::uint64_t> salts_;
};

template <typename TokenRange>
MinHashSignature minhash(const TokenRange& tokens, const MinHashParams& params) {
    return MinHasher(params).sign(tokens);
}

inline MinHashSignature minhash_bag(const TokenBag& bag, const MinHashParams& params) {
    return MinHasher(params).sign_bag(bag);
}

// Fraction of agreeing positions: the Jaccard estimate.
inline double signature_agreement(const MinHashSignature& a, const MinHashSignature& b) {
    if (a.values.size() != b.values.size() || a.values.empty())
        throw InvalidInputError("signature_agreement: signatures must have equal nonzero length");
    std::size_t agree = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i)
        if (a.values[i] == b.values[i]) ++agree;
    return static_cast<double>(agree) / static_cast<double>(a.values.size());
}

// Key of one band: a hash over that band's r signature rows, salted with the
// band index so band j of one signature never matches band k of another.
inline std::uint64_t band_key(const MinHashSignature& sig, std::uint32_t band,
                              std::uint32_t rows_per_band) {
    std::uint64_t h = mix64(0x5851F42D4C957F2DULL ^ (static_cast<std::uint64_t>(band) + 1));
    std::size_t start = static_cast<std::size_t>(band) * rows_per_band;
    for (std::size_t i = 0; i < rows_per_band; ++i) h = mix64(h ^ sig.values[start + i]);
    return h;
}

}  // namespace dysign
