// Report store: the labeled token bags the detector matches against, plus
// incrementally maintained corpus statistics.
//
// On disk the store is JSON lines: line 1 a manifest (format version,
// creation stamp, tokenizer configuration, record count), then one record per
// line with keys sorted, records ordered by id. Raw report text is not
// persisted, only bags and byte sizes. New records may be appended without
// rewriting earlier lines; the manifest's record_count is the count at the
// last full save, so a loader accepts extra lines but rejects missing ones.
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dysign/common.hpp"
#include "dysign/report.hpp"
#include "dysign/vectorizer.hpp"

namespace dysign {

inline constexpr int kStoreFormatVersion = 1;

// Creation stamps come from SOURCE_DATE_EPOCH so that rebuilding the same
// inputs yields byte-identical files; without it the stamp is 0 rather than
// wall time, keeping every subcommand deterministic.
inline std::uint64_t creation_timestamp() {
    if (const char* epoch = getenv_or_null("SOURCE_DATE_EPOCH")) {
        try {
            return static_cast<std::uint64_t>(std::stoull(epoch));
        } catch (...) {
            log_warn("ignoring non-numeric SOURCE_DATE_EPOCH");
        }
    }
    return 0;
}

struct StoreManifest {
    int format_version = kStoreFormatVersion;
    std::uint64_t created_at = 0;
    TokenizerConfig tokenizer;
    std::uint64_t record_count = 0;
};

struct StoredRecord {
    Label label;
    TokenBag bag;
    std::uint64_t bytes = 0;

    bool operator==(const StoredRecord&) const = default;
};

class ReportStore {
public:
    ReportStore() : created_at_(creation_timestamp()) {}
    explicit ReportStore(TokenizerConfig tok)
        : tokenizer_(std::move(tok)), created_at_(creation_timestamp()) {}

    const TokenizerConfig& tokenizer() const { return tokenizer_; }
    std::uint64_t created_at() const { return created_at_; }
    void set_created_at(std::uint64_t t) { created_at_ = t; }
    const std::map<std::string, StoredRecord>& records() const { return records_; }
    std::size_t size() const { return records_.size(); }
    bool empty() const { return records_.empty(); }
    bool dirty() const { return dirty_; }

    const CorpusStats& corpus() const {
        if (dirty_) throw PreconditionError("corpus statistics are stale; call refresh()");
        return corpus_;
    }

    bool contains(const std::string& id) const { return records_.count(id) != 0; }

    const StoredRecord& record(const std::string& id) const {
        auto it = records_.find(id);
        if (it == records_.end()) throw ConflictError("store does not contain id '" + id + "'");
        return it->second;
    }

    // Bulk insertion: statistics go stale until refresh(). Used by loaders
    // and initial builds where one rebuild at the end beats n incremental
    // updates.
    void add(const std::string& id, StoredRecord rec) {
        if (!rec.label.valid()) throw InvalidInputError("record label requires family iff Malware");
        auto [it, inserted] = records_.emplace(id, std::move(rec));
        (void)it;
        if (!inserted) throw ConflictError("store already contains id '" + id + "'");
        dirty_ = true;
    }

    // Incremental insertion: document frequencies and the vocabulary absorb
    // the new bag directly, so statistics stay fresh. Requires fresh stats
    // going in; a duplicate id leaves the store untouched.
    void update(const AnalysisReport& report) {
        if (dirty_) throw PreconditionError("corpus statistics are stale; call refresh()");
        if (!report.label.valid())
            throw InvalidInputError("record label requires family iff Malware");
        if (records_.count(report.id))
            throw ConflictError("store already contains id '" + report.id + "'");
        records_.emplace(report.id, StoredRecord{report.label, report.bag, report.bytes});
        corpus_.add_document(report.bag);
    }

    // Rebuilds corpus statistics from scratch over records in id order.
    void refresh() {
        corpus_ = CorpusStats{};
        for (const auto& [id, rec] : records_) {
            (void)id;
            corpus_.add_document(rec.bag);
        }
        dirty_ = false;
    }

private:
    TokenizerConfig tokenizer_;
    std::map<std::string, StoredRecord> records_;
    CorpusStats corpus_;
    bool dirty_ = false;  // empty store has trivially fresh (empty) stats
    std::uint64_t created_at_ = 0;
};

inline void update_store(ReportStore& store, const AnalysisReport& report) {
    store.update(report);
}

// ---------------------------------------------------------------------------
// Initial build from manifests
// ---------------------------------------------------------------------------

struct IngestError {
    std::filesystem::path path;
    std::string message;
};

// Ingests every manifest entry. Files are read and tokenized in parallel;
// the merge happens in manifest order, so the result is identical for every
// thread count. Unreadable files and duplicate ids become collected
// per-entry errors rather than failures.
inline std::vector<AnalysisReport> ingest_entries(const std::vector<ManifestEntry>& entries,
                                                  const TokenizerConfig& cfg = {},
                                                  unsigned threads = 1,
                                                  std::vector<IngestError>* errors = nullptr) {
    struct Slot {
        std::optional<AnalysisReport> report;
        std::string error;
    };
    std::vector<Slot> slots = parallel_map(entries.size(), threads, [&](std::size_t i) {
        Slot slot;
        try {
            slot.report = ingest_report(entries[i].path, entries[i].label, cfg);
        } catch (const Error& e) {
            slot.error = e.what();
        }
        return slot;
    });

    std::vector<AnalysisReport> reports;
    reports.reserve(entries.size());
    std::unordered_set<std::string> ids;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (!slots[i].report) {
            if (errors) errors->push_back({entries[i].path, slots[i].error});
            log_warn("skipping " + entries[i].path.string() + ": " + slots[i].error);
            continue;
        }
        if (!ids.insert(slots[i].report->id).second) {
            std::string message = "duplicate report id '" + slots[i].report->id + "'";
            if (errors) errors->push_back({entries[i].path, message});
            log_warn("skipping " + entries[i].path.string() + ": " + message);
            continue;
        }
        reports.push_back(std::move(*slots[i].report));
    }
    return reports;
}

// Builds a fresh store from the two label manifests (malware first). Ending
// up with zero records is fatal. When `kept_raw` is given, the ingested
// reports (including raw text) are moved there as well.
inline ReportStore init_store(const std::filesystem::path& malware_manifest,
                              const std::filesystem::path& benign_manifest,
                              const TokenizerConfig& cfg = {}, unsigned threads = 1,
                              std::vector<IngestError>* errors = nullptr,
                              std::vector<AnalysisReport>* kept_raw = nullptr) {
    std::vector<ManifestEntry> entries = read_manifest(malware_manifest);
    {
        std::vector<ManifestEntry> benign = read_manifest(benign_manifest);
        entries.insert(entries.end(), std::make_move_iterator(benign.begin()),
                       std::make_move_iterator(benign.end()));
    }
    std::vector<AnalysisReport> reports = ingest_entries(entries, cfg, threads, errors);

    ReportStore store(cfg);
    for (AnalysisReport& rep : reports) {
        store.add(rep.id, StoredRecord{rep.label, rep.bag, rep.bytes});
        if (kept_raw) kept_raw->push_back(std::move(rep));
    }
    if (store.empty())
        throw InvalidInputError("no ingestible reports: every manifest entry failed");
    store.refresh();
    return store;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json tokenizer_to_json(const TokenizerConfig& cfg) {
    std::string delims = cfg.delimiters;
    std::sort(delims.begin(), delims.end());
    delims.erase(std::unique(delims.begin(), delims.end()), delims.end());
    return {{"delimiters", delims},
            {"lowercase", cfg.lowercase},
            {"max_token_len", cfg.max_token_len},
            {"min_token_len", cfg.min_token_len}};
}

inline TokenizerConfig tokenizer_from_json(const nlohmann::json& j) {
    TokenizerConfig cfg;
    cfg.delimiters = j.at("delimiters").get<std::string>();
    cfg.lowercase = j.at("lowercase").get<bool>();
    cfg.min_token_len = j.at("min_token_len").get<std::size_t>();
    cfg.max_token_len = j.at("max_token_len").get<std::size_t>();
    return cfg;
}

inline nlohmann::json record_to_json(const std::string& id, const StoredRecord& rec) {
    nlohmann::json bag = nlohmann::json::object();
    for (const auto& [token, count] : rec.bag.entries()) bag[token] = count;
    return {{"bag", std::move(bag)},
            {"bytes", rec.bytes},
            {"family", rec.label.family ? nlohmann::json(*rec.label.family) : nlohmann::json()},
            {"id", id},
            {"label", to_string(rec.label.kind)}};
}

inline std::pair<std::string, StoredRecord> record_from_json(const nlohmann::json& j) {
    StoredRecord rec;
    LabelKind kind = label_kind_from_string(j.at("label").get<std::string>());
    if (kind == LabelKind::Malware) {
        rec.label = Label::malware(j.at("family").get<std::string>());
    } else {
        if (!j.at("family").is_null())
            throw FormatError("non-malware record carries a family");
        rec.label = (kind == LabelKind::Benign) ? Label::benign() : Label::unknown();
    }
    rec.bytes = j.at("bytes").get<std::uint64_t>();
    std::vector<TokenBag::Entry> entries;
    const auto& bag = j.at("bag");
    entries.reserve(bag.size());
    for (auto it = bag.begin(); it != bag.end(); ++it)  // object iteration is key-sorted
        entries.emplace_back(it.key(), it.value().get<std::uint32_t>());
    rec.bag = TokenBag::from_sorted_entries(std::move(entries));
    return {j.at("id").get<std::string>(), std::move(rec)};
}

}  // namespace detail

inline void save_store(const ReportStore& store, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write store file: " + path.string());
    nlohmann::json manifest{{"created_at", store.created_at()},
                            {"format_version", kStoreFormatVersion},
                            {"kind", "report-store"},
                            {"record_count", store.size()},
                            {"tokenizer", detail::tokenizer_to_json(store.tokenizer())}};
    out << manifest.dump() << "\n";
    for (const auto& [id, rec] : store.records())
        out << detail::record_to_json(id, rec).dump() << "\n";
    if (!out) throw IoError("write failed: " + path.string());
}

inline void append_store_record(const std::filesystem::path& path, const std::string& id,
                                const StoredRecord& rec) {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) throw IoError("cannot append to store file: " + path.string());
    out << detail::record_to_json(id, rec).dump() << "\n";
    if (!out) throw IoError("write failed: " + path.string());
}

inline ReportStore load_store(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open store file: " + path.string());
    std::string line;
    if (!std::getline(in, line) || line.empty())
        throw FormatError(path.string() + ":1: missing store manifest line");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ":1: bad store manifest: " + e.what());
    }
    int version = manifest.value("format_version", -1);
    if (version != kStoreFormatVersion)
        throw FormatError(path.string() + ": store format version " + std::to_string(version) +
                          " is incompatible with supported version " +
                          std::to_string(kStoreFormatVersion));
    ReportStore store;
    std::uint64_t declared = 0;
    try {
        store = ReportStore(detail::tokenizer_from_json(manifest.at("tokenizer")));
        store.set_created_at(manifest.at("created_at").get<std::uint64_t>());
        declared = manifest.at("record_count").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ":1: bad store manifest: " + e.what());
    }
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            auto [id, rec] = detail::record_from_json(nlohmann::json::parse(line));
            store.add(id, std::move(rec));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) +
                              ": corrupt store record: " + e.what());
        } catch (const ConflictError& e) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (store.size() < declared)
        throw FormatError(path.string() + ": truncated store: manifest declares " +
                          std::to_string(declared) + " records, found " +
                          std::to_string(store.size()));
    store.refresh();
    return store;
}

}  // namespace dysign
