#include "dysign/synth.hpp"

#include <algorithm>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include <gtest/gtest.h>

#include "dysign/store.hpp"

namespace fs = std::filesystem;
using namespace dysign;

namespace {

fs::path make_temp_dir() {
    static int counter = 0;
    fs::path dir = fs::temp_directory_path() /
                   ("dysign_synth_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(dir);
    return dir;
}

std::set<std::string> vocab_of(const GeneratedReport& report) {
    TokenBag bag = tokenize(report.text);  // keep alive while iterating entries()
    std::set<std::string> tokens;
    for (const auto& [token, count] : bag.entries()) {
        (void)count;
        tokens.insert(token);
    }
    return tokens;
}

}  // namespace

TEST(SynthSpec, DefaultsDescribeTheStandardCorpus) {
    SynthCorpusSpec spec;
    EXPECT_EQ(spec.malware_count(), 343);
    EXPECT_EQ(spec.benign_count, 520);
    EXPECT_EQ(spec.total_count(), 863);
    EXPECT_EQ(spec.n_families, 8);
    EXPECT_NO_THROW(spec.validate());
}

TEST(SynthSpec, ValidateCatchesEachBadField) {
    auto broken = [](auto&& mutate) {
        SynthCorpusSpec spec;
        mutate(spec);
        return spec;
    };
    EXPECT_THROW(broken([](auto& s) { s.n_families = 0; }).validate(), InvalidInputError);
    EXPECT_THROW(broken([](auto& s) { s.samples_per_family.pop_back(); }).validate(),
                 InvalidInputError);
    EXPECT_THROW(broken([](auto& s) { s.samples_per_family[0] = 0; }).validate(),
                 InvalidInputError);
    EXPECT_THROW(broken([](auto& s) { s.family_vocab_size = 0; }).validate(), InvalidInputError);
    EXPECT_THROW(broken([](auto& s) { s.shared_vocab_size = -1; }).validate(), InvalidInputError);
    EXPECT_THROW(broken([](auto& s) { s.tokens_per_report = 0; }).validate(), InvalidInputError);
    EXPECT_THROW(broken([](auto& s) { s.noise_rate = 1.0; }).validate(), InvalidInputError);
    EXPECT_THROW(broken([](auto& s) { s.noise_rate = -0.1; }).validate(), InvalidInputError);
    EXPECT_THROW(broken([](auto& s) {
                     s.noise_rate = 0.2;
                     s.global_vocab_size = 0;
                 }).validate(),
                 InvalidInputError);
    EXPECT_THROW(broken([](auto& s) {
                     s.noise_rate = 0.0;
                     s.shared_vocab_size = 0;
                     s.global_vocab_size = 0;
                 }).validate(),
                 InvalidInputError);
}

TEST(SynthSpec, ScaledSpecKeepsProportionsAndFloorsAtOne) {
    SynthCorpusSpec half = scaled_spec(SynthCorpusSpec{}, 432);
    EXPECT_NEAR(half.total_count(), 432, 8);
    EXPECT_EQ(half.n_families, 8);
    for (std::size_t f = 0; f < half.samples_per_family.size(); ++f)
        EXPECT_GE(half.samples_per_family[f], 1);

    // scaling far below one sample per family bottoms out at one each
    SynthCorpusSpec tiny = scaled_spec(SynthCorpusSpec{}, 10);
    for (int c : tiny.samples_per_family) EXPECT_EQ(c, 1);
    EXPECT_THROW(scaled_spec(SynthCorpusSpec{}, 0), InvalidInputError);
}

TEST(SynthSpec, JsonRoundTripAndUnknownKeyRejection) {
    SynthCorpusSpec spec;
    spec.n_families = 3;
    spec.samples_per_family = {4, 5, 6};
    spec.noise_rate = 0.25;
    spec.seed = 999;
    SynthCorpusSpec back = spec_from_json(spec_to_json(spec));
    EXPECT_EQ(back.samples_per_family, spec.samples_per_family);
    EXPECT_EQ(back.seed, 999u);
    EXPECT_DOUBLE_EQ(back.noise_rate, 0.25);

    // overrides start from the defaults
    SynthCorpusSpec partial = spec_from_json({{"benign_count", 7}});
    EXPECT_EQ(partial.benign_count, 7);
    EXPECT_EQ(partial.n_families, 8);

    EXPECT_THROW(spec_from_json({{"benihn_count", 7}}), FormatError);
    EXPECT_THROW(spec_from_json({{"benign_count", "many"}}), FormatError);
    EXPECT_THROW(spec_from_json(nlohmann::json::array()), FormatError);
}

TEST(SynthSpec, LoadSpecReadsAFile) {
    fs::path dir = make_temp_dir();
    write_file(dir / "spec.json", R"({"n_families": 2, "samples_per_family": [3, 3]})");
    SynthCorpusSpec spec = load_spec(dir / "spec.json");
    EXPECT_EQ(spec.n_families, 2);
    write_file(dir / "bad.json", "{not json");
    EXPECT_THROW(load_spec(dir / "bad.json"), FormatError);
    fs::remove_all(dir);
}

TEST(SynthGenerate, SeededRunsAreByteIdentical) {
    SynthCorpusSpec spec = scaled_spec(SynthCorpusSpec{}, 60);
    std::vector<GeneratedReport> a = generate_corpus(spec);
    std::vector<GeneratedReport> b = generate_corpus(spec);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].filename, b[i].filename);
        EXPECT_EQ(a[i].text, b[i].text);
    }
    spec.seed = 43;
    std::vector<GeneratedReport> c = generate_corpus(spec);
    int differing = 0;
    for (std::size_t i = 0; i < a.size(); ++i) differing += a[i].text != c[i].text;
    EXPECT_GT(differing, 0);
}

TEST(SynthGenerate, PoolPrefixesKeepMalwareAndBenignDisjoint) {
    SynthCorpusSpec spec = scaled_spec(SynthCorpusSpec{}, 80);
    spec.shared_vocab_size = 0;
    spec.noise_rate = 0.0;
    std::set<std::string> malware_vocab, benign_vocab;
    for (const auto& report : generate_corpus(spec)) {
        auto& side = report.label.kind == LabelKind::Malware ? malware_vocab : benign_vocab;
        std::set<std::string> tokens = vocab_of(report);
        side.insert(tokens.begin(), tokens.end());
    }
    std::vector<std::string> overlap;
    std::set_intersection(malware_vocab.begin(), malware_vocab.end(), benign_vocab.begin(),
                          benign_vocab.end(), std::back_inserter(overlap));
    EXPECT_TRUE(overlap.empty());
    for (const auto& token : malware_vocab) EXPECT_EQ(token[0], 'f') << token;
    for (const auto& token : benign_vocab) EXPECT_EQ(token[0], 'g') << token;
}

TEST(SynthGenerate, FamiliesUseTheirOwnPools) {
    SynthCorpusSpec spec = scaled_spec(SynthCorpusSpec{}, 80);
    spec.shared_vocab_size = 0;
    spec.noise_rate = 0.0;
    for (const auto& report : generate_corpus(spec)) {
        if (report.label.kind != LabelKind::Malware) continue;
        // fam03 draws only from the f03_* pool
        std::string prefix = "f" + report.label.family->substr(3) + "_";
        for (const auto& token : vocab_of(report))
            EXPECT_EQ(token.rfind(prefix, 0), 0u) << token << " in " << *report.label.family;
    }
}

TEST(SynthGenerate, CountsAndNamesFollowTheSpec) {
    SynthCorpusSpec spec;
    spec.n_families = 2;
    spec.samples_per_family = {3, 5};
    spec.benign_count = 4;
    std::vector<GeneratedReport> reports = generate_corpus(spec);
    ASSERT_EQ(reports.size(), 12u);
    EXPECT_EQ(reports[0].filename, "fam00_00000.txt");
    EXPECT_EQ(reports[2].label, Label::malware("fam00"));
    EXPECT_EQ(reports[3].label, Label::malware("fam01"));
    EXPECT_EQ(reports[11].filename, "benign_00003.txt");
    EXPECT_EQ(reports[11].label, Label::benign());
}

TEST(SynthMaterialize, MatchesAFileRoundTrip) {
    SynthCorpusSpec spec = scaled_spec(SynthCorpusSpec{}, 40);
    std::vector<AnalysisReport> direct = materialize_corpus(generate_corpus(spec));

    fs::path dir = make_temp_dir();
    CorpusOnDisk on_disk = write_corpus(spec, dir);
    std::vector<AnalysisReport> via_files = ingest_entries(read_manifest(on_disk.manifest_path));

    ASSERT_EQ(direct.size(), via_files.size());
    for (std::size_t i = 0; i < direct.size(); ++i) {
        EXPECT_EQ(direct[i].id, via_files[i].id);
        EXPECT_EQ(direct[i].label, via_files[i].label);
        EXPECT_EQ(direct[i].bytes, via_files[i].bytes);
        EXPECT_EQ(direct[i].bag.entries(), via_files[i].bag.entries());
    }
    fs::remove_all(dir);
}

TEST(SynthWrite, EmitsManifestsSplitsAndSpec) {
    SynthCorpusSpec spec = scaled_spec(SynthCorpusSpec{}, 40);
    fs::path dir = make_temp_dir();
    CorpusOnDisk result = write_corpus(spec, dir);
    EXPECT_EQ(result.n_malware + result.n_benign, static_cast<std::size_t>(spec.total_count()));

    auto mixed = read_manifest(dir / "manifest.tsv");
    auto malware = read_manifest(dir / "manifest_malware.tsv");
    auto benign = read_manifest(dir / "manifest_benign.tsv");
    EXPECT_EQ(mixed.size(), malware.size() + benign.size());
    EXPECT_EQ(malware.size(), result.n_malware);
    for (const auto& entry : malware) EXPECT_EQ(entry.label.kind, LabelKind::Malware);
    for (const auto& entry : benign) EXPECT_EQ(entry.label.kind, LabelKind::Benign);
    for (const auto& entry : mixed) EXPECT_TRUE(fs::exists(entry.path)) << entry.path;

    SynthCorpusSpec reloaded = load_spec(dir / "spec.json");
    EXPECT_EQ(reloaded.seed, spec.seed);
    EXPECT_EQ(reloaded.samples_per_family, spec.samples_per_family);
    fs::remove_all(dir);
}

TEST(SynthBenchProfile, DiffersFromTheAccuracyProfile) {
    SynthCorpusSpec bench = bench_corpus_spec();
    EXPECT_NO_THROW(bench.validate());
    EXPECT_LT(bench.tokens_per_report, SynthCorpusSpec{}.tokens_per_report);
    EXPECT_GT(bench.global_vocab_size, SynthCorpusSpec{}.global_vocab_size);
}
