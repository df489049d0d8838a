#pragma once

#include <string_view>

#include "dysign/common.hpp"
#include "dysign/vectorizer.hpp"

namespace dysign {

// NearestOnly follows the single best match; MajorityOfK lets the k retrieved
// neighbors vote. With k = 1 the two are identical.
enum class Vote { NearestOnly, MajorityOfK };

inline const char* to_string(Vote v) {
    return v == Vote::NearestOnly ? "nearest" : "majority";
}

inline Vote vote_from_string(std::string_view s) {
    if (s == "nearest") return Vote::NearestOnly;
    if (s == "majority") return Vote::MajorityOfK;
    throw InvalidInputError("unknown vote mode: '" + std::string(s) + "'");
}

struct DetectorConfig {
    int k = 1;
    Vote vote = Vote::NearestOnly;
    // Abstention bar: a neighbor only counts when its similarity strictly
    // exceeds this. 0 disables abstention but still keeps zero-similarity
    // matches from deciding anything.
    double min_similarity = 0.0;
    IdfMode idf_mode = IdfMode::Literal;
    // Conformance mode: recompute joint corpus statistics with the query
    // folded in and rescan the entire store instead of using the LSH index.
    bool exact = false;
};

}  // namespace dysign
