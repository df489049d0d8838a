#include "dysign/eval.hpp"

#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <gtest/gtest.h>

#include "dysign/synth.hpp"

using namespace dysign;

namespace {

std::vector<std::pair<std::string, std::string>> labeled_ids(
    const std::map<std::string, int>& class_sizes) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& [cls, n] : class_sizes)
        for (int i = 0; i < n; ++i) out.emplace_back(cls + "_" + std::to_string(i), cls);
    return out;
}

// Token pools with no overlap at all: families never share a token with each
// other or with benign reports, so a correct pipeline scores perfectly.
SynthCorpusSpec disjoint_spec() {
    SynthCorpusSpec spec;
    spec.n_families = 3;
    spec.samples_per_family = {12, 10, 8};
    spec.family_vocab_size = 30;
    spec.shared_vocab_size = 0;
    spec.global_vocab_size = 40;
    spec.noise_rate = 0.0;
    spec.tokens_per_report = 60;
    spec.benign_count = 20;
    spec.seed = 7;
    return spec;
}

// Small vocabulary plus heavy shared/global traffic, so families blur into
// each other and the metrics land strictly between 0 and 1.
SynthCorpusSpec muddy_spec() {
    SynthCorpusSpec spec;
    spec.n_families = 3;
    spec.samples_per_family = {12, 10, 8};
    spec.family_vocab_size = 4;
    spec.shared_vocab_size = 40;
    spec.global_vocab_size = 20;
    spec.noise_rate = 0.5;
    spec.tokens_per_report = 25;
    spec.benign_count = 20;
    spec.seed = 19;
    return spec;
}

std::vector<AnalysisReport> corpus_of(const SynthCorpusSpec& spec) {
    return materialize_corpus(generate_corpus(spec));
}

std::vector<AnalysisReport> malware_only(std::vector<AnalysisReport> reports) {
    std::erase_if(reports, [](const AnalysisReport& r) { return r.label.kind != LabelKind::Malware; });
    return reports;
}

}  // namespace

// ---------------------------------------------------------------------------
// Fold planning
// ---------------------------------------------------------------------------

TEST(Kfold, CoversEveryIdWithValidFoldNumbers) {
    auto ids = labeled_ids({{"famA", 13}, {"famB", 8}, {"Benign", 21}});
    FoldPlan plan = kfold(ids, 4, 99);
    EXPECT_TRUE(plan.stratified);
    EXPECT_FALSE(plan.downgraded);
    ASSERT_EQ(plan.assignment.size(), ids.size());
    for (const auto& [id, cls] : ids) {
        (void)cls;
        int fold = plan.fold_of(id);
        EXPECT_GE(fold, 0);
        EXPECT_LT(fold, 4);
    }
}

TEST(Kfold, PerStratumFoldSizesDifferByAtMostOne) {
    auto ids = labeled_ids({{"famA", 13}, {"famB", 8}, {"Benign", 21}});
    FoldPlan plan = kfold(ids, 4, 99);
    std::map<std::string, std::map<int, int>> sizes;  // class -> fold -> count
    for (const auto& [id, cls] : ids) ++sizes[cls][plan.fold_of(id)];
    for (const auto& [cls, per_fold] : sizes) {
        ASSERT_EQ(per_fold.size(), 4u) << cls << " missing from some fold";
        int lo = per_fold.begin()->second, hi = lo;
        for (const auto& [fold, n] : per_fold) {
            (void)fold;
            lo = std::min(lo, n);
            hi = std::max(hi, n);
        }
        EXPECT_LE(hi - lo, 1) << cls;
    }
}

TEST(Kfold, PlansAreSeedDeterministic) {
    auto ids = labeled_ids({{"famA", 13}, {"famB", 8}, {"Benign", 21}});
    FoldPlan a = kfold(ids, 4, 1234);
    FoldPlan b = kfold(ids, 4, 1234);
    EXPECT_EQ(a.assignment, b.assignment);
    FoldPlan c = kfold(ids, 4, 1235);
    EXPECT_NE(a.assignment, c.assignment);
}

TEST(Kfold, TinyStratumDowngradesToUnstratified) {
    auto ids = labeled_ids({{"famA", 20}, {"famRare", 2}});
    FoldPlan plan = kfold(ids, 3, 5);
    EXPECT_TRUE(plan.downgraded);
    EXPECT_FALSE(plan.stratified);
    EXPECT_EQ(plan.assignment.size(), ids.size());
    // unstratified still deals everything out evenly overall
    std::map<int, int> per_fold;
    for (const auto& [id, cls] : ids) {
        (void)cls;
        ++per_fold[plan.fold_of(id)];
    }
    ASSERT_EQ(per_fold.size(), 3u);
}

TEST(Kfold, RejectsBadArguments) {
    auto ids = labeled_ids({{"famA", 6}});
    EXPECT_THROW(kfold(ids, 1, 0), InvalidInputError);
    EXPECT_THROW(kfold(ids, 7, 0), InvalidInputError);  // fewer records than folds
    auto dup = ids;
    dup.push_back(ids.front());
    EXPECT_THROW(kfold(dup, 2, 0), ConflictError);
}

// ---------------------------------------------------------------------------
// Metric arithmetic
// ---------------------------------------------------------------------------

TEST(Metrics, FinalizeComputesTheUsualRates) {
    MetricsReport m;
    m.tp = 8;
    m.fp = 2;
    m.fn = 4;
    m.tn = 86;
    m.finalize();
    EXPECT_DOUBLE_EQ(m.precision, 0.8);
    EXPECT_DOUBLE_EQ(m.recall, 8.0 / 12.0);
    EXPECT_DOUBLE_EQ(m.f1, 2.0 * m.precision * m.recall / (m.precision + m.recall));
    EXPECT_TRUE(m.flags.empty());
    EXPECT_EQ(m.total(), 100u);
}

TEST(Metrics, ZeroDenominatorsFlagAndZeroOut) {
    MetricsReport m;
    m.tn = 5;  // nothing predicted or truly positive
    m.finalize();
    EXPECT_EQ(m.precision, 0.0);
    EXPECT_EQ(m.recall, 0.0);
    EXPECT_EQ(m.f1, 0.0);
    EXPECT_EQ(join_flags(m.flags), "undefined_precision;undefined_recall;undefined_f1");

    MetricsReport only_fn;
    only_fn.fn = 3;
    only_fn.finalize();
    EXPECT_EQ(join_flags(only_fn.flags), "undefined_precision;undefined_f1");
    EXPECT_EQ(only_fn.recall, 0.0);
}

// ---------------------------------------------------------------------------
// Confusion matrices
// ---------------------------------------------------------------------------

TEST(Confusion, FromPairsCountsAndSortsClasses) {
    ConfusionMatrix cm = ConfusionMatrix::from_pairs({
        {"b", "a"}, {"a", "a"}, {"a", "a"}, {"b", "b"}, {"a", "c"},
    });
    ASSERT_EQ(cm.classes, (std::vector<std::string>{"a", "b", "c"}));
    EXPECT_EQ(cm.counts[cm.index_of("a")][cm.index_of("a")], 2u);
    EXPECT_EQ(cm.counts[cm.index_of("b")][cm.index_of("a")], 1u);
    EXPECT_EQ(cm.counts[cm.index_of("a")][cm.index_of("c")], 1u);
    EXPECT_EQ(cm.total(), 5u);
    EXPECT_EQ(cm.trace(), 3u);
    EXPECT_EQ(cm.row_total(0), 3u);
    EXPECT_EQ(cm.col_total(0), 3u);
}

TEST(Confusion, ExtraClassesGetEmptyRowsAndColumns) {
    ConfusionMatrix cm = ConfusionMatrix::from_pairs({{"x", "x"}}, {"Benign"});
    ASSERT_EQ(cm.classes, (std::vector<std::string>{"Benign", "x"}));
    EXPECT_EQ(cm.row_total(cm.index_of("Benign")), 0u);
    EXPECT_EQ(cm.col_total(cm.index_of("Benign")), 0u);
}

TEST(Confusion, Log10ViewCompressesCounts) {
    ConfusionMatrix cm = ConfusionMatrix::from_pairs({{"x", "x"}, {"x", "x"}, {"x", "x"},
                                                      {"x", "x"}, {"x", "x"}, {"x", "x"},
                                                      {"x", "x"}, {"x", "x"}, {"x", "x"}});
    EXPECT_DOUBLE_EQ(cm.log10_view(0, 0), 1.0);  // log10(1 + 9)
}

TEST(Confusion, IndexOfUnknownClassThrows) {
    ConfusionMatrix cm = ConfusionMatrix::from_pairs({{"x", "x"}});
    EXPECT_THROW(cm.index_of("y"), InvalidInputError);
}

// ---------------------------------------------------------------------------
// Detection evaluation
// ---------------------------------------------------------------------------

TEST(EvalDetection, PerfectOnDisjointPools) {
    EvalOptions opts;
    opts.n_folds = 5;
    opts.seed = 3;
    DetectionResult result = evaluate_detection(corpus_of(disjoint_spec()), opts);
    EXPECT_TRUE(result.warnings.empty());
    EXPECT_EQ(result.aggregate.fp, 0u);
    EXPECT_EQ(result.aggregate.fn, 0u);
    EXPECT_DOUBLE_EQ(result.aggregate.f1, 1.0);
    EXPECT_EQ(result.aggregate.total(), 50u);
}

TEST(EvalDetection, AggregateIsTheSumOfFoldCounts) {
    EvalOptions opts;
    opts.n_folds = 5;
    opts.seed = 3;
    std::vector<AnalysisReport> reports = corpus_of(muddy_spec());
    DetectionResult result = evaluate_detection(reports, opts);
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0, tested = 0;
    for (const auto& m : result.per_fold) {
        tp += m.tp;
        fp += m.fp;
        fn += m.fn;
        tn += m.tn;
        tested += m.total();
    }
    EXPECT_EQ(result.aggregate.tp, tp);
    EXPECT_EQ(result.aggregate.fp, fp);
    EXPECT_EQ(result.aggregate.fn, fn);
    EXPECT_EQ(result.aggregate.tn, tn);
    EXPECT_EQ(tested, reports.size());  // every report tested exactly once
}

TEST(EvalDetection, AllBenignCorpusExcludesEveryFold) {
    std::vector<AnalysisReport> reports;
    for (int i = 0; i < 10; ++i) {
        AnalysisReport rep;
        rep.id = "ben_" + std::to_string(i);
        rep.label = Label::benign();
        rep.bag = tokenize("open read close");
        rep.bytes = 20;
        reports.push_back(std::move(rep));
    }
    EvalOptions opts;
    opts.n_folds = 2;
    DetectionResult result = evaluate_detection(reports, opts);
    EXPECT_EQ(result.warnings.size(), 2u);
    for (const auto& m : result.per_fold) {
        EXPECT_EQ(join_flags(m.flags).find("single_class_training_excluded"), 0u);
        EXPECT_EQ(m.total(), 0u);
    }
    EXPECT_EQ(result.aggregate.total(), 0u);
    EXPECT_EQ(result.aggregate.f1, 0.0);
}

TEST(EvalDetection, RejectsUnknownLabels) {
    std::vector<AnalysisReport> reports = corpus_of(disjoint_spec());
    reports.front().label = Label::unknown();
    EvalOptions opts;
    EXPECT_THROW(evaluate_detection(reports, opts), InvalidInputError);
}

// ---------------------------------------------------------------------------
// Attribution evaluation
// ---------------------------------------------------------------------------

TEST(EvalAttribution, DiagonalOnDisjointPools) {
    EvalOptions opts;
    opts.n_folds = 4;
    opts.seed = 3;
    AttributionResult result = evaluate_attribution(malware_only(corpus_of(disjoint_spec())), opts);
    EXPECT_EQ(result.confusion.trace(), result.confusion.total());
    EXPECT_EQ(result.confusion.total(), 30u);
    EXPECT_DOUBLE_EQ(result.precision, 1.0);
    EXPECT_DOUBLE_EQ(result.recall, 1.0);
    EXPECT_DOUBLE_EQ(result.f1, 1.0);
}

TEST(EvalAttribution, BenignColumnIsAlwaysPresent) {
    EvalOptions opts;
    opts.n_folds = 4;
    opts.seed = 3;
    AttributionResult result = evaluate_attribution(malware_only(corpus_of(disjoint_spec())), opts);
    const auto& classes = result.confusion.classes;
    EXPECT_NE(std::find(classes.begin(), classes.end(), "Benign"), classes.end());
}

TEST(EvalAttribution, WeightedF1IsTheHarmonicMean) {
    EvalOptions opts;
    opts.n_folds = 4;
    opts.seed = 3;
    AttributionResult result = evaluate_attribution(malware_only(corpus_of(muddy_spec())), opts);
    double expected = result.precision + result.recall > 0.0
                          ? 2.0 * result.precision * result.recall /
                                (result.precision + result.recall)
                          : 0.0;
    EXPECT_DOUBLE_EQ(result.f1, expected);
    // every malware report is tested exactly once
    std::uint64_t total_support = 0;
    for (std::uint64_t s : result.support) total_support += s;
    EXPECT_EQ(total_support, 30u);
}

TEST(EvalAttribution, RejectsBenignReports) {
    EvalOptions opts;
    EXPECT_THROW(evaluate_attribution(corpus_of(disjoint_spec()), opts), InvalidInputError);
}

// ---------------------------------------------------------------------------
// Size statistics
// ---------------------------------------------------------------------------

TEST(SizeStats, SummariesPerLabelKind) {
    std::vector<std::pair<Label, std::uint64_t>> sizes = {
        {Label::malware("famA"), 100}, {Label::malware("famB"), 300},
        {Label::malware("famA"), 200}, {Label::benign(), 50},
        {Label::benign(), 150},
    };
    SizeStats stats = size_stats(sizes);
    ASSERT_EQ(stats.groups.size(), 2u);
    EXPECT_EQ(stats.groups[0].label, "Benign");
    EXPECT_EQ(stats.groups[1].label, "Malware");
    const SizeStatsGroup& benign = stats.groups[0];
    EXPECT_EQ(benign.count, 2u);
    EXPECT_DOUBLE_EQ(benign.mean, 100.0);
    EXPECT_DOUBLE_EQ(benign.median, 100.0);  // even count: midpoint
    EXPECT_EQ(benign.max, 150u);
    const SizeStatsGroup& malware = stats.groups[1];
    EXPECT_DOUBLE_EQ(malware.median, 200.0);  // odd count: middle element
    EXPECT_EQ(malware.max, 300u);
    ASSERT_EQ(malware.bytes_hist.size(), 16u);
    std::uint64_t binned = 0;
    for (const auto& bin : malware.bytes_hist) binned += bin.count;
    EXPECT_EQ(binned, 3u);
}

TEST(SizeStats, ZeroByteReportsGetTheLogSentinel) {
    EXPECT_DOUBLE_EQ(log10_size(0), -1.0);
    EXPECT_DOUBLE_EQ(log10_size(1000), 3.0);
    SizeStats stats = size_stats({{Label::benign(), 0}, {Label::benign(), 1000}});
    const auto& logs = stats.groups[0].log10_hist;
    ASSERT_FALSE(logs.empty());
    EXPECT_DOUBLE_EQ(logs.front().lo, -1.0);
    EXPECT_EQ(logs.front().count, 1u);  // the empty report
}

TEST(SizeStats, TopEdgeIsInclusive) {
    SizeStats stats = size_stats({{Label::benign(), 16}, {Label::benign(), 1}});
    const auto& bins = stats.groups[0].bytes_hist;
    ASSERT_EQ(bins.size(), 16u);
    EXPECT_EQ(bins.back().count, 1u);  // max value lands in the last bin, not past it
}

// ---------------------------------------------------------------------------
// CSV output
// ---------------------------------------------------------------------------

TEST(EvalCsv, PreambleAndFixedPointFormat) {
    EXPECT_EQ(csv_double(1.0), "1.000000");
    EXPECT_EQ(csv_double(0.123456789), "0.123457");

    EvalOptions opts;
    opts.seed = 77;
    std::ostringstream out;
    write_csv_preamble(out, opts, "extra note");
    std::istringstream in(out.str());
    std::string line;
    int comment_lines = 0;
    bool saw_seed = false;
    while (std::getline(in, line)) {
        ASSERT_FALSE(line.empty());
        EXPECT_EQ(line[0], '#');
        ++comment_lines;
        if (line.find("seed=77") != std::string::npos) saw_seed = true;
    }
    EXPECT_EQ(comment_lines, 4);
    EXPECT_TRUE(saw_seed);
}

TEST(EvalCsv, DetectionLayoutHasNoWallTimes) {
    EvalOptions opts;
    opts.n_folds = 5;
    opts.seed = 3;
    DetectionResult result = evaluate_detection(corpus_of(disjoint_spec()), opts);
    std::ostringstream out;
    write_detection_csv(out, result, opts);
    std::istringstream in(out.str());
    std::string line;
    std::vector<std::string> rows;
    while (std::getline(in, line))
        if (!line.empty() && line[0] != '#') rows.push_back(line);
    ASSERT_EQ(rows.size(), 7u);  // header + 5 folds + aggregate
    EXPECT_EQ(rows.front(), "fold,tp,fp,fn,tn,precision,recall,f1,flags");
    EXPECT_EQ(rows.back().rfind("aggregate,", 0), 0u);
    EXPECT_NE(rows.back().find("1.000000"), std::string::npos);
    EXPECT_EQ(out.str().find("wall"), std::string::npos);

    // a rerun of the same evaluation writes the same bytes
    DetectionResult again = evaluate_detection(corpus_of(disjoint_spec()), opts);
    std::ostringstream out2;
    write_detection_csv(out2, again, opts);
    EXPECT_EQ(out.str(), out2.str());
}

TEST(EvalCsv, AttributionAndConfusionLayout) {
    EvalOptions opts;
    opts.n_folds = 4;
    opts.seed = 3;
    AttributionResult result = evaluate_attribution(malware_only(corpus_of(disjoint_spec())), opts);

    std::ostringstream att;
    write_attribution_csv(att, result, opts);
    EXPECT_NE(att.str().find("class,support,tp,fp,fn,tn,precision,recall,f1,flags"),
              std::string::npos);
    EXPECT_NE(att.str().find("\nweighted,30,"), std::string::npos);

    std::ostringstream conf, conf_log;
    write_confusion_csv(conf, result.confusion, false, opts);
    write_confusion_csv(conf_log, result.confusion, true, opts);
    EXPECT_NE(conf.str().find("true\\predicted,Benign,fam00,fam01,fam02"), std::string::npos);
    EXPECT_NE(conf_log.str().find("log10(1+count)"), std::string::npos);
    // counts view holds integers, log view fixed-point doubles
    EXPECT_NE(conf_log.str().find("0.000000"), std::string::npos);
}
