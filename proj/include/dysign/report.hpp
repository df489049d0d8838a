// Report model: labels, tokenization of plain-text analysis reports into
// bags of words, file ingestion and manifest parsing.
#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dysign/common.hpp"

namespace dysign {

// ---------------------------------------------------------------------------
// Labels
// ---------------------------------------------------------------------------

enum class LabelKind { Benign, Malware, Unknown };

inline const char* to_string(LabelKind k) {
    switch (k) {
        case LabelKind::Benign: return "Benign";
        case LabelKind::Malware: return "Malware";
        default: return "Unknown";
    }
}

inline LabelKind label_kind_from_string(std::string_view s) {
    if (s == "Benign") return LabelKind::Benign;
    if (s == "Malware") return LabelKind::Malware;
    if (s == "Unknown") return LabelKind::Unknown;
    throw FormatError("unknown label kind: '" + std::string(s) + "'");
}

// A label carries a family name exactly when the kind is Malware.
struct Label {
    LabelKind kind = LabelKind::Unknown;
    std::optional<std::string> family;

    static Label benign() { return {LabelKind::Benign, std::nullopt}; }
    static Label unknown() { return {LabelKind::Unknown, std::nullopt}; }
    static Label malware(std::string family_name) {
        if (family_name.empty()) throw InvalidInputError("malware label requires a family name");
        return {LabelKind::Malware, std::move(family_name)};
    }

    bool valid() const { return family.has_value() == (kind == LabelKind::Malware); }
    bool operator==(const Label&) const = default;
};

// ---------------------------------------------------------------------------
// Token bags
// ---------------------------------------------------------------------------

// Multiset of tokens stored as (token, count) entries sorted by token.
// The sorted layout gives deterministic iteration everywhere a bag feeds a
// corpus or a signature, and keeps memory flat for large stores.
class TokenBag {
public:
    using Entry = std::pair<std::string, std::uint32_t>;

    TokenBag() = default;

    static TokenBag from_counts(std::unordered_map<std::string, std::uint32_t> counts) {
        TokenBag bag;
        bag.entries_.reserve(counts.size());
        for (auto& [token, count] : counts) {
            if (count == 0) continue;
            bag.total_ += count;
            bag.entries_.emplace_back(token, count);
        }
        std::sort(bag.entries_.begin(), bag.entries_.end());
        return bag;
    }

    // Entries must arrive sorted by token with no duplicates and no zeros.
    static TokenBag from_sorted_entries(std::vector<Entry> entries) {
        TokenBag bag;
        bag.entries_ = std::move(entries);
        for (const auto& [token, count] : bag.entries_) bag.total_ += count;
        return bag;
    }

    const std::vector<Entry>& entries() const { return entries_; }
    std::uint64_t total() const { return total_; }
    std::size_t distinct() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    std::uint32_t count(std::string_view token) const {
        auto it = std::lower_bound(entries_.begin(), entries_.end(), token,
                                   [](const Entry& e, std::string_view t) { return e.first < t; });
        if (it == entries_.end() || it->first != token) return 0;
        return it->second;
    }

    bool operator==(const TokenBag&) const = default;

private:
    std::vector<Entry> entries_;
    std::uint64_t total_ = 0;
};

// ---------------------------------------------------------------------------
// Tokenizer
// ---------------------------------------------------------------------------

// Delimiters are single bytes. The default set covers ASCII whitespace plus
// the punctuation that sandbox traces use for structure; everything between
// delimiters is a token.
struct TokenizerConfig {
    std::string delimiters = " \t\n\r\f\v{}[](),:\"'";
    bool lowercase = true;
    std::size_t min_token_len = 1;
    std::size_t max_token_len = 256;

    bool operator==(const TokenizerConfig&) const = default;
};

inline TokenBag tokenize(std::string_view text, const TokenizerConfig& cfg = {}) {
    if (cfg.min_token_len < 1) throw InvalidInputError("min_token_len must be >= 1");
    if (cfg.max_token_len < cfg.min_token_len)
        throw InvalidInputError("max_token_len must be >= min_token_len");

    std::array<bool, 256> is_delim{};
    for (unsigned char c : cfg.delimiters) is_delim[c] = true;

    std::unordered_map<std::string, std::uint32_t> counts;
    std::string token;
    auto flush = [&]() {
        if (token.size() >= cfg.min_token_len && token.size() <= cfg.max_token_len)
            ++counts[token];
        token.clear();
    };
    for (unsigned char c : text) {
        if (is_delim[c]) {
            if (!token.empty()) flush();
            continue;
        }
        if (cfg.lowercase && c >= 'A' && c <= 'Z') c = static_cast<unsigned char>(c - 'A' + 'a');
        token.push_back(static_cast<char>(c));
    }
    if (!token.empty()) flush();
    return TokenBag::from_counts(std::move(counts));
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

// One sandbox output. `raw` is the (sanitized) text as read; `bytes` is its
// size, which doubles as the report-size statistic later on.
struct AnalysisReport {
    std::string id;
    Label label;
    std::string raw;
    std::uint64_t bytes = 0;
    TokenBag bag;
    std::size_t decode_warnings = 0;
};

inline std::string report_id_for(std::string_view raw, const std::filesystem::path& path) {
    return hex16(fnv1a64(raw)) + "-" + path.stem().string();
}

inline AnalysisReport ingest_report(const std::filesystem::path& path, Label label,
                                    const TokenizerConfig& cfg = {}) {
    if (!label.valid()) throw InvalidInputError("label requires family iff Malware");
    AnalysisReport report;
    report.raw = read_file(path);
    report.decode_warnings = utf8_sanitize(report.raw);
    if (report.decode_warnings > 0) {
        log_warn("replaced " + std::to_string(report.decode_warnings) +
                 " ill-formed UTF-8 byte(s) in " + path.string());
    }
    report.id = report_id_for(report.raw, path);
    report.label = std::move(label);
    report.bytes = report.raw.size();
    report.bag = tokenize(report.raw, cfg);
    return report;
}

// ---------------------------------------------------------------------------
// Manifests: one record per line, `<path>\t<Benign|Malware>\t<family-or-->`.
// Relative paths resolve against the manifest's own directory.
// ---------------------------------------------------------------------------

struct ManifestEntry {
    std::filesystem::path path;
    Label label;
};

inline ManifestEntry parse_manifest_line(std::string_view line,
                                         const std::filesystem::path& base_dir) {
    auto fields = split(line, '\t');
    if (fields.size() != 3)
        throw FormatError("manifest line needs 3 tab-separated fields, got " +
                          std::to_string(fields.size()));
    if (fields[0].empty()) throw FormatError("manifest line has an empty path");
    LabelKind kind = label_kind_from_string(fields[1]);
    if (kind == LabelKind::Unknown)
        throw FormatError("manifest labels must be Benign or Malware");
    Label label;
    if (kind == LabelKind::Malware) {
        if (fields[2] == "-" || fields[2].empty())
            throw FormatError("malware manifest entry is missing its family");
        label = Label::malware(fields[2]);
    } else {
        if (fields[2] != "-")
            throw FormatError("non-malware manifest entry must use '-' for family");
        label = (kind == LabelKind::Benign) ? Label::benign() : Label::unknown();
    }
    std::filesystem::path p(fields[0]);
    if (p.is_relative()) p = base_dir / p;
    return {std::move(p), std::move(label)};
}

// Blank lines are skipped. A malformed line is an error: manifests are
// machine-written, a bad line means the wrong file was passed.
inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest_path) {
    std::string text = read_file(manifest_path);
    std::filesystem::path base = manifest_path.parent_path();
    std::vector<ManifestEntry> entries;
    std::size_t line_no = 0;
    for (const auto& line : split(text, '\n')) {
        ++line_no;
        std::string_view sv(line);
        if (!sv.empty() && sv.back() == '\r') sv.remove_suffix(1);
        if (sv.empty()) continue;
        try {
            entries.push_back(parse_manifest_line(sv, base));
        } catch (const Error& e) {
            throw FormatError(manifest_path.string() + ":" + std::to_string(line_no) + ": " +
                              e.what());
        }
    }
    return entries;
}

}  // namespace dysign
