// Synthetic corpus generator.
//
// Token pools are disjoint by construction: each family gets a private pool
// ("f03_0042"), every malware report can also draw from one shared pool
// ("s_0007"), and a global pool ("g_0133") supplies noise. A malware report
// samples tokens_per_report tokens, each taken from the global pool with
// probability noise_rate and uniformly from family+shared otherwise. Benign
// reports sample uniformly from shared+global only. Everything is a pure
// function of the spec, so one seed always yields byte-identical corpora.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "dysign/common.hpp"
#include "dysign/report.hpp"

namespace dysign {

struct SynthCorpusSpec {
    int n_families = 8;
    std::vector<int> samples_per_family = {87, 61, 57, 52, 31, 30, 13, 12};
    int family_vocab_size = 120;
    int shared_vocab_size = 60;
    int global_vocab_size = 150;
    double noise_rate = 0.3;
    int tokens_per_report = 500;
    int benign_count = 520;
    std::uint64_t seed = 42;

    int malware_count() const {
        int total = 0;
        for (int c : samples_per_family) total += c;
        return total;
    }
    int total_count() const { return malware_count() + benign_count; }

    void validate() const {
        if (n_families < 1) throw InvalidInputError("synth spec: n_families must be >= 1");
        if (static_cast<int>(samples_per_family.size()) != n_families)
            throw InvalidInputError("synth spec: samples_per_family must list one count per family");
        for (int c : samples_per_family)
            if (c < 1) throw InvalidInputError("synth spec: family sample counts must be >= 1");
        if (family_vocab_size < 1)
            throw InvalidInputError("synth spec: family_vocab_size must be >= 1");
        if (shared_vocab_size < 0 || global_vocab_size < 0 || benign_count < 0)
            throw InvalidInputError("synth spec: pool sizes and benign_count must be >= 0");
        if (tokens_per_report < 1)
            throw InvalidInputError("synth spec: tokens_per_report must be >= 1");
        if (!(noise_rate >= 0.0 && noise_rate < 1.0))
            throw InvalidInputError("synth spec: noise_rate must lie in [0, 1)");
        if (noise_rate > 0.0 && global_vocab_size == 0)
            throw InvalidInputError("synth spec: noise_rate > 0 needs a non-empty global pool");
        if (benign_count > 0 && shared_vocab_size + global_vocab_size == 0)
            throw InvalidInputError("synth spec: benign reports need a non-empty shared+global pool");
    }
};

// Profile for timing runs at 10k+ reports: smaller reports and wider pools,
// so per-query candidate sets stay a thin slice of the index as it grows,
// and balanced family sizes, so no family is sparse enough to make
// zero-candidate fallback rescans routine at the small rungs. The default
// spec above is the accuracy profile with tightly clustered families.
inline SynthCorpusSpec bench_corpus_spec() {
    SynthCorpusSpec spec;
    spec.samples_per_family = {43, 43, 43, 43, 43, 43, 43, 42};
    spec.family_vocab_size = 150;
    spec.shared_vocab_size = 25;
    spec.global_vocab_size = 625;
    spec.noise_rate = 0.3;
    spec.tokens_per_report = 100;
    return spec;
}

// Rescales per-family and benign counts to approximately target_total reports
// while keeping the class proportions.
inline SynthCorpusSpec scaled_spec(SynthCorpusSpec base, int target_total) {
    if (target_total < 1) throw InvalidInputError("scaled_spec: target must be >= 1");
    double factor = static_cast<double>(target_total) / static_cast<double>(base.total_count());
    for (int& c : base.samples_per_family)
        c = std::max(1, static_cast<int>(std::llround(c * factor)));
    base.benign_count = static_cast<int>(std::llround(base.benign_count * factor));
    return base;
}

// ---------------------------------------------------------------------------
// Spec JSON: starts from the defaults, overrides listed keys, rejects unknown
// ones so a typo cannot silently fall back to a default.
// ---------------------------------------------------------------------------

inline nlohmann::json spec_to_json(const SynthCorpusSpec& spec) {
    return {{"benign_count", spec.benign_count},
            {"family_vocab_size", spec.family_vocab_size},
            {"global_vocab_size", spec.global_vocab_size},
            {"n_families", spec.n_families},
            {"noise_rate", spec.noise_rate},
            {"samples_per_family", spec.samples_per_family},
            {"seed", spec.seed},
            {"shared_vocab_size", spec.shared_vocab_size},
            {"tokens_per_report", spec.tokens_per_report}};
}

inline SynthCorpusSpec spec_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw FormatError("synth spec must be a JSON object");
    SynthCorpusSpec spec;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& key = it.key();
        try {
            if (key == "benign_count") spec.benign_count = it.value().get<int>();
            else if (key == "family_vocab_size") spec.family_vocab_size = it.value().get<int>();
            else if (key == "global_vocab_size") spec.global_vocab_size = it.value().get<int>();
            else if (key == "n_families") spec.n_families = it.value().get<int>();
            else if (key == "noise_rate") spec.noise_rate = it.value().get<double>();
            else if (key == "samples_per_family")
                spec.samples_per_family = it.value().get<std::vector<int>>();
            else if (key == "seed") spec.seed = it.value().get<std::uint64_t>();
            else if (key == "shared_vocab_size") spec.shared_vocab_size = it.value().get<int>();
            else if (key == "tokens_per_report") spec.tokens_per_report = it.value().get<int>();
            else throw FormatError("synth spec: unknown key '" + key + "'");
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("synth spec: bad value for '" + key + "': " + e.what());
        }
    }
    spec.validate();
    return spec;
}

inline SynthCorpusSpec load_spec(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": bad spec JSON: " + e.what());
    }
    return spec_from_json(j);
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

struct GeneratedReport {
    std::string filename;
    Label label;
    std::string text;
};

namespace detail {

inline std::string pool_token(char prefix, int pool_index, int token_index) {
    char buf[24];
    if (prefix == 'f')
        std::snprintf(buf, sizeof(buf), "f%02d_%04d", pool_index, token_index);
    else
        std::snprintf(buf, sizeof(buf), "%c_%04d", prefix, token_index);
    return buf;
}

// rng() % n keeps the stream identical on every platform; pools are tiny
// compared to 2^64 so modulo bias is irrelevant here.
inline std::size_t bounded(std::mt19937_64& rng, std::size_t n) { return rng() % n; }

inline double unit(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace detail

inline std::string synth_family_name(int family_index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "fam%02d", family_index);
    return buf;
}

inline std::vector<GeneratedReport> generate_corpus(const SynthCorpusSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);

    std::vector<GeneratedReport> reports;
    reports.reserve(static_cast<std::size_t>(spec.total_count()));

    std::string text;
    auto emit = [&](const std::string& stem, Label label, auto&& draw_token) {
        text.clear();
        for (int t = 0; t < spec.tokens_per_report; ++t) {
            if (t) text.push_back(' ');
            text += draw_token();
        }
        text.push_back('\n');
        reports.push_back({stem + ".txt", std::move(label), text});
    };

    std::size_t fam = static_cast<std::size_t>(spec.family_vocab_size);
    std::size_t shared = static_cast<std::size_t>(spec.shared_vocab_size);
    std::size_t global = static_cast<std::size_t>(spec.global_vocab_size);

    for (int f = 0; f < spec.n_families; ++f) {
        std::string family = synth_family_name(f);
        for (int k = 0; k < spec.samples_per_family[static_cast<std::size_t>(f)]; ++k) {
            char stem[20];
            std::snprintf(stem, sizeof(stem), "%s_%05d", family.c_str(), k);
            emit(stem, Label::malware(family), [&]() {
                if (spec.noise_rate > 0.0 && detail::unit(rng) < spec.noise_rate)
                    return detail::pool_token('g', 0, static_cast<int>(detail::bounded(rng, global)));
                std::size_t pick = detail::bounded(rng, fam + shared);
                if (pick < fam) return detail::pool_token('f', f, static_cast<int>(pick));
                return detail::pool_token('s', 0, static_cast<int>(pick - fam));
            });
        }
    }
    for (int k = 0; k < spec.benign_count; ++k) {
        char stem[20];
        std::snprintf(stem, sizeof(stem), "benign_%05d", k);
        emit(stem, Label::benign(), [&]() {
            std::size_t pick = detail::bounded(rng, shared + global);
            if (pick < shared) return detail::pool_token('s', 0, static_cast<int>(pick));
            return detail::pool_token('g', 0, static_cast<int>(pick - shared));
        });
    }
    return reports;
}

// Tokenizes generated reports in place, producing the same ids and bags a
// round trip through files and ingest_report would. The evaluation harness
// and the benchmark consume corpora this way without touching the disk.
inline std::vector<AnalysisReport> materialize_corpus(const std::vector<GeneratedReport>& reports,
                                                      const TokenizerConfig& cfg = {}) {
    std::vector<AnalysisReport> out;
    out.reserve(reports.size());
    for (const auto& report : reports) {
        AnalysisReport rep;
        rep.id = report_id_for(report.text, report.filename);
        rep.label = report.label;
        rep.bytes = report.text.size();
        rep.bag = tokenize(report.text, cfg);
        out.push_back(std::move(rep));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Materialization to disk: report files, manifest.tsv, and the resolved spec
// as spec.json for provenance.
// ---------------------------------------------------------------------------

struct CorpusOnDisk {
    std::filesystem::path manifest_path;
    std::size_t n_malware = 0;
    std::size_t n_benign = 0;
};

inline CorpusOnDisk write_corpus(const SynthCorpusSpec& spec,
                                 const std::filesystem::path& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create corpus directory " + out_dir.string() + ": " + ec.message());

    CorpusOnDisk result;
    result.manifest_path = out_dir / "manifest.tsv";
    std::string manifest, malware_manifest, benign_manifest;
    for (const auto& report : generate_corpus(spec)) {
        write_file(out_dir / report.filename, report.text);
        std::string line = report.filename;
        line.push_back('\t');
        line += to_string(report.label.kind);
        line.push_back('\t');
        line += report.label.family ? *report.label.family : "-";
        line.push_back('\n');
        manifest += line;
        if (report.label.kind == LabelKind::Malware) {
            malware_manifest += line;
            ++result.n_malware;
        } else {
            benign_manifest += line;
            ++result.n_benign;
        }
    }
    write_file(result.manifest_path, manifest);
    // Split manifests so the output feeds a database build directly.
    write_file(out_dir / "manifest_malware.tsv", malware_manifest);
    write_file(out_dir / "manifest_benign.tsv", benign_manifest);
    write_file(out_dir / "spec.json", spec_to_json(spec).dump(2) + "\n");
    return result;
}

}  // namespace dysign
