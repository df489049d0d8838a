// Evaluation harness: stratified k-fold cross-validation of detection
// (malicious vs benign, micro-averaged) and family attribution (one-vs-rest
// per class, support-weighted), confusion matrices, and report-size
// statistics.
//
// Every CSV this module writes is byte-deterministic for a fixed seed: wall
// times live in the result structs and the logs, never in the CSVs.
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <random>
#include <ostream>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dysign/common.hpp"
#include "dysign/detector.hpp"
#include "dysign/report.hpp"
#include "dysign/store.hpp"

namespace dysign {

// Stratum / confusion class of a label: the family for malware, the kind
// name otherwise.
inline std::string class_of(const Label& label) {
    return label.family ? *label.family : to_string(label.kind);
}

// ---------------------------------------------------------------------------
// Fold planning
// ---------------------------------------------------------------------------

struct FoldPlan {
    int n_folds = 10;
    std::uint64_t seed = 0;
    bool stratified = true;   // as executed
    bool downgraded = false;  // a stratum was smaller than n_folds
    std::unordered_map<std::string, int> assignment;  // id -> fold

    int fold_of(const std::string& id) const { return assignment.at(id); }
};

namespace detail {

// Fisher-Yates with our own bounded draw, so plans are identical across
// standard libraries and runs.
inline void deterministic_shuffle(std::vector<std::string>& items, std::mt19937_64& rng) {
    for (std::size_t i = items.size(); i > 1; --i)
        std::swap(items[i - 1], items[rng() % i]);
}

}  // namespace detail

// Assigns each id to one of n_folds folds, stratified by class: within each
// stratum, ids are shuffled and dealt round-robin, so per-stratum fold sizes
// differ by at most one. If any stratum has fewer members than n_folds the
// whole plan downgrades to unstratified with a warning.
inline FoldPlan kfold(const std::vector<std::pair<std::string, std::string>>& id_and_class,
                      int n_folds, std::uint64_t seed, bool stratified = true) {
    if (n_folds < 2) throw InvalidInputError("kfold: n_folds must be >= 2");
    if (id_and_class.size() < static_cast<std::size_t>(n_folds))
        throw InvalidInputError("kfold: need at least one record per fold");

    std::map<std::string, std::vector<std::string>> strata;
    for (const auto& [id, cls] : id_and_class) {
        auto& members = strata[stratified ? cls : std::string("all")];
        members.push_back(id);
    }
    if (stratified) {
        for (const auto& [cls, members] : strata) {
            if (members.size() < static_cast<std::size_t>(n_folds)) {
                log_warn("stratum '" + cls + "' has " + std::to_string(members.size()) +
                         " records (< " + std::to_string(n_folds) +
                         " folds); downgrading to an unstratified plan");
                FoldPlan plan = kfold(id_and_class, n_folds, seed, false);
                plan.downgraded = true;
                return plan;
            }
        }
    }

    FoldPlan plan;
    plan.n_folds = n_folds;
    plan.seed = seed;
    plan.stratified = stratified;
    std::mt19937_64 rng(seed);
    for (auto& [cls, members] : strata) {
        (void)cls;
        std::sort(members.begin(), members.end());
        detail::deterministic_shuffle(members, rng);
        for (std::size_t i = 0; i < members.size(); ++i) {
            auto [it, inserted] = plan.assignment.emplace(members[i], static_cast<int>(i) % n_folds);
            (void)it;
            if (!inserted) throw ConflictError("kfold: duplicate id '" + members[i] + "'");
        }
    }
    return plan;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct MetricsReport {
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
    double precision = 0.0, recall = 0.0, f1 = 0.0;
    double wall_seconds = 0.0;
    std::vector<std::string> flags;

    std::uint64_t total() const { return tp + fp + fn + tn; }

    // Precision, recall, F1 with the usual zero-denominator convention:
    // undefined values become 0 and get flagged.
    void finalize() {
        if (tp + fp > 0) {
            precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        } else {
            precision = 0.0;
            flags.push_back("undefined_precision");
        }
        if (tp + fn > 0) {
            recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
        } else {
            recall = 0.0;
            flags.push_back("undefined_recall");
        }
        if (precision + recall > 0.0) {
            f1 = 2.0 * precision * recall / (precision + recall);
        } else {
            f1 = 0.0;
            flags.push_back("undefined_f1");
        }
    }
};

struct ConfusionMatrix {
    std::vector<std::string> classes;                 // sorted
    std::vector<std::vector<std::uint64_t>> counts;   // [true][predicted]

    std::size_t index_of(const std::string& cls) const {
        auto it = std::lower_bound(classes.begin(), classes.end(), cls);
        if (it == classes.end() || *it != cls)
            throw InvalidInputError("confusion matrix has no class '" + cls + "'");
        return static_cast<std::size_t>(it - classes.begin());
    }

    std::uint64_t total() const {
        std::uint64_t t = 0;
        for (const auto& row : counts)
            for (std::uint64_t c : row) t += c;
        return t;
    }

    std::uint64_t trace() const {
        std::uint64_t t = 0;
        for (std::size_t i = 0; i < counts.size(); ++i) t += counts[i][i];
        return t;
    }

    std::uint64_t row_total(std::size_t i) const {
        std::uint64_t t = 0;
        for (std::uint64_t c : counts[i]) t += c;
        return t;
    }

    std::uint64_t col_total(std::size_t j) const {
        std::uint64_t t = 0;
        for (const auto& row : counts) t += row[j];
        return t;
    }

    // Compressed view for plotting: log10(1 + count).
    double log10_view(std::size_t i, std::size_t j) const {
        return std::log10(1.0 + static_cast<double>(counts[i][j]));
    }

    static ConfusionMatrix from_pairs(
        const std::vector<std::pair<std::string, std::string>>& true_and_pred,
        const std::set<std::string>& extra_classes = {}) {
        std::set<std::string> names(extra_classes);
        for (const auto& [t, p] : true_and_pred) {
            names.insert(t);
            names.insert(p);
        }
        ConfusionMatrix cm;
        cm.classes.assign(names.begin(), names.end());
        cm.counts.assign(cm.classes.size(), std::vector<std::uint64_t>(cm.classes.size(), 0));
        for (const auto& [t, p] : true_and_pred) ++cm.counts[cm.index_of(t)][cm.index_of(p)];
        return cm;
    }
};

// ---------------------------------------------------------------------------
// Shared evaluation scaffolding
// ---------------------------------------------------------------------------

struct EvalOptions {
    int n_folds = 10;
    std::uint64_t seed = 42;
    bool stratified = true;
    unsigned threads = 1;
    MinHashParams lsh;
    DetectorConfig detector;
};

namespace detail {

inline Database build_fold_database(const std::vector<const AnalysisReport*>& train,
                                    const EvalOptions& opts) {
    ReportStore store;
    for (const auto* rep : train)
        store.add(rep->id, StoredRecord{rep->label, rep->bag, rep->bytes});
    store.refresh();
    return Database::build(std::move(store), opts.lsh, opts.detector.idf_mode, opts.threads);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Detection: Malicious-vs-benign over a mixed corpus, micro-averaged across
// folds (counts are summed, then the rates computed once).
// ---------------------------------------------------------------------------

struct DetectionResult {
    FoldPlan plan;
    std::vector<MetricsReport> per_fold;
    MetricsReport aggregate;
    std::vector<std::string> warnings;
};

inline DetectionResult evaluate_detection(const std::vector<AnalysisReport>& reports,
                                          const EvalOptions& opts) {
    std::vector<std::pair<std::string, std::string>> id_and_class;
    id_and_class.reserve(reports.size());
    for (const auto& rep : reports) {
        if (rep.label.kind == LabelKind::Unknown)
            throw InvalidInputError("evaluation requires Benign or Malware ground truth");
        id_and_class.emplace_back(rep.id, class_of(rep.label));
    }

    DetectionResult result;
    result.plan = kfold(id_and_class, opts.n_folds, opts.seed, opts.stratified);
    if (result.plan.downgraded)
        result.warnings.push_back("stratification downgraded: a stratum was smaller than n_folds");
    result.per_fold.resize(static_cast<std::size_t>(opts.n_folds));

    for (int fold = 0; fold < opts.n_folds; ++fold) {
        auto started = std::chrono::steady_clock::now();
        std::vector<const AnalysisReport*> train;
        std::vector<const AnalysisReport*> test;
        for (const auto& rep : reports)
            (result.plan.fold_of(rep.id) == fold ? test : train).push_back(&rep);

        MetricsReport& metrics = result.per_fold[static_cast<std::size_t>(fold)];
        bool has_malware = false, has_benign = false;
        for (const auto* rep : train) {
            (rep->label.kind == LabelKind::Malware ? has_malware : has_benign) = true;
        }
        if (!has_malware || !has_benign) {
            metrics.flags.push_back("single_class_training_excluded");
            result.warnings.push_back("fold " + std::to_string(fold) +
                                      " has a single-class training set; excluded from aggregate");
            metrics.finalize();
            continue;
        }

        Database db = detail::build_fold_database(train, opts);
        std::vector<TokenBag> bags;
        bags.reserve(test.size());
        for (const auto* rep : test) bags.push_back(rep->bag);
        std::vector<Verdict> verdicts = classify_bags(db, bags, opts.detector, opts.threads);
        for (std::size_t i = 0; i < test.size(); ++i) {
            bool truly_malware = test[i]->label.kind == LabelKind::Malware;
            bool flagged = verdicts[i].decision == Decision::Malicious;
            if (truly_malware && flagged) ++metrics.tp;
            else if (truly_malware) ++metrics.fn;
            else if (flagged) ++metrics.fp;
            else ++metrics.tn;
        }
        metrics.finalize();
        metrics.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

        result.aggregate.tp += metrics.tp;
        result.aggregate.fp += metrics.fp;
        result.aggregate.fn += metrics.fn;
        result.aggregate.tn += metrics.tn;
        result.aggregate.wall_seconds += metrics.wall_seconds;
    }
    result.aggregate.finalize();
    return result;
}

// ---------------------------------------------------------------------------
// Attribution: family prediction over a malware-only corpus. A report the
// detector calls Benign lands in the "Benign" column of the confusion matrix
// and counts against its true family's recall.
// ---------------------------------------------------------------------------

struct AttributionResult {
    FoldPlan plan;
    ConfusionMatrix confusion;
    std::vector<MetricsReport> per_class;  // aligned with confusion.classes
    std::vector<std::uint64_t> support;    // true-class totals, same order
    // Support-weighted precision/recall; F1 is their harmonic mean.
    double precision = 0.0, recall = 0.0, f1 = 0.0;
    double wall_seconds = 0.0;
    std::vector<std::string> flags;
    std::vector<std::string> warnings;
};

inline AttributionResult evaluate_attribution(const std::vector<AnalysisReport>& reports,
                                              const EvalOptions& opts) {
    std::vector<std::pair<std::string, std::string>> id_and_class;
    id_and_class.reserve(reports.size());
    for (const auto& rep : reports) {
        if (rep.label.kind != LabelKind::Malware)
            throw InvalidInputError("attribution evaluation requires a malware-only corpus");
        id_and_class.emplace_back(rep.id, class_of(rep.label));
    }

    AttributionResult result;
    result.plan = kfold(id_and_class, opts.n_folds, opts.seed, opts.stratified);
    if (result.plan.downgraded)
        result.warnings.push_back("stratification downgraded: a stratum was smaller than n_folds");

    std::vector<std::pair<std::string, std::string>> true_and_pred;
    std::set<std::string> all_families;
    for (const auto& rep : reports) all_families.insert(*rep.label.family);

    for (int fold = 0; fold < opts.n_folds; ++fold) {
        auto started = std::chrono::steady_clock::now();
        std::vector<const AnalysisReport*> train;
        std::vector<const AnalysisReport*> test;
        for (const auto& rep : reports)
            (result.plan.fold_of(rep.id) == fold ? test : train).push_back(&rep);

        std::set<std::string> train_families;
        for (const auto* rep : train) train_families.insert(*rep->label.family);
        if (train_families.size() < 2) {
            result.warnings.push_back("fold " + std::to_string(fold) +
                                      " has a single-class training set; excluded from aggregate");
            continue;
        }
        for (const auto& family : all_families) {
            if (!train_families.count(family))
                result.warnings.push_back("fold " + std::to_string(fold) + ": family '" + family +
                                          "' absent from training; its test samples count as errors");
        }

        Database db = detail::build_fold_database(train, opts);
        std::vector<TokenBag> bags;
        bags.reserve(test.size());
        for (const auto* rep : test) bags.push_back(rep->bag);
        std::vector<Verdict> verdicts = classify_bags(db, bags, opts.detector, opts.threads);
        for (std::size_t i = 0; i < test.size(); ++i) {
            std::string predicted = verdicts[i].decision == Decision::Malicious
                                        ? *verdicts[i].family
                                        : to_string(LabelKind::Benign);
            true_and_pred.emplace_back(*test[i]->label.family, predicted);
        }
        result.wall_seconds +=
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    }

    // The Benign column always exists: it is where abstentions land.
    result.confusion =
        ConfusionMatrix::from_pairs(true_and_pred, {to_string(LabelKind::Benign)});
    const auto& cm = result.confusion;
    result.per_class.resize(cm.classes.size());
    result.support.resize(cm.classes.size());
    double weighted_p = 0.0, weighted_r = 0.0;
    std::uint64_t total_support = 0;
    for (std::size_t c = 0; c < cm.classes.size(); ++c) {
        MetricsReport& m = result.per_class[c];
        m.tp = cm.counts[c][c];
        m.fn = cm.row_total(c) - m.tp;
        m.fp = cm.col_total(c) - m.tp;
        m.tn = cm.total() - m.tp - m.fn - m.fp;
        m.finalize();
        result.support[c] = cm.row_total(c);
        weighted_p += m.precision * static_cast<double>(result.support[c]);
        weighted_r += m.recall * static_cast<double>(result.support[c]);
        total_support += result.support[c];
    }
    if (total_support > 0) {
        result.precision = weighted_p / static_cast<double>(total_support);
        result.recall = weighted_r / static_cast<double>(total_support);
    } else {
        result.flags.push_back("no_support");
    }
    if (result.precision + result.recall > 0.0) {
        result.f1 = 2.0 * result.precision * result.recall / (result.precision + result.recall);
    } else {
        result.flags.push_back("undefined_f1");
    }
    return result;
}

// ---------------------------------------------------------------------------
// Report-size statistics per label kind (byte sizes and their log10 view,
// as a sanity check on corpus shape).
// ---------------------------------------------------------------------------

struct HistogramBin {
    double lo = 0.0, hi = 0.0;
    std::uint64_t count = 0;
};

struct SizeStatsGroup {
    std::string label;
    std::uint64_t count = 0;
    double mean = 0.0;
    double median = 0.0;
    std::uint64_t max = 0;
    std::vector<HistogramBin> bytes_hist;
    std::vector<HistogramBin> log10_hist;
};

struct SizeStats {
    std::vector<SizeStatsGroup> groups;  // ordered by label name
};

// log10 of a byte size; empty files get the sentinel -1 so they stay visible
// in the log-scale view.
inline double log10_size(std::uint64_t bytes) {
    return bytes == 0 ? -1.0 : std::log10(static_cast<double>(bytes));
}

namespace detail {

inline std::vector<HistogramBin> build_histogram(const std::vector<double>& values, double lo,
                                                 double hi, std::size_t n_bins) {
    if (hi <= lo) hi = lo + 1.0;
    std::vector<HistogramBin> bins(n_bins);
    double width = (hi - lo) / static_cast<double>(n_bins);
    for (std::size_t i = 0; i < n_bins; ++i) {
        bins[i].lo = lo + width * static_cast<double>(i);
        bins[i].hi = lo + width * static_cast<double>(i + 1);
    }
    for (double v : values) {
        auto idx = static_cast<std::size_t>((v - lo) / width);
        if (idx >= n_bins) idx = n_bins - 1;  // top edge is inclusive
        ++bins[idx].count;
    }
    return bins;
}

}  // namespace detail

inline SizeStats size_stats(const std::vector<std::pair<Label, std::uint64_t>>& labeled_sizes) {
    std::map<std::string, std::vector<std::uint64_t>> by_label;
    for (const auto& [label, bytes] : labeled_sizes)
        by_label[to_string(label.kind)].push_back(bytes);

    SizeStats stats;
    for (auto& [name, sizes] : by_label) {
        std::sort(sizes.begin(), sizes.end());
        SizeStatsGroup group;
        group.label = name;
        group.count = sizes.size();
        group.max = sizes.back();
        double sum = 0.0;
        std::vector<double> raw, logs;
        raw.reserve(sizes.size());
        logs.reserve(sizes.size());
        for (std::uint64_t b : sizes) {
            sum += static_cast<double>(b);
            raw.push_back(static_cast<double>(b));
            logs.push_back(log10_size(b));
        }
        group.mean = sum / static_cast<double>(sizes.size());
        std::size_t mid = sizes.size() / 2;
        group.median = sizes.size() % 2 == 1
                           ? static_cast<double>(sizes[mid])
                           : (static_cast<double>(sizes[mid - 1]) + static_cast<double>(sizes[mid])) / 2.0;
        group.bytes_hist = detail::build_histogram(raw, 0.0, static_cast<double>(group.max), 16);
        double max_log = std::ceil(*std::max_element(logs.begin(), logs.end()));
        group.log10_hist = detail::build_histogram(logs, -1.0, max_log,
                                                   static_cast<std::size_t>(std::max(1.0, (max_log + 1.0) / 0.5)));
        stats.groups.push_back(std::move(group));
    }
    return stats;
}

inline SizeStats size_stats(const ReportStore& store) {
    std::vector<std::pair<Label, std::uint64_t>> sizes;
    sizes.reserve(store.size());
    for (const auto& [id, rec] : store.records()) {
        (void)id;
        sizes.emplace_back(rec.label, rec.bytes);
    }
    return size_stats(sizes);
}

// ---------------------------------------------------------------------------
// CSV output. Comment lines carry tool version, seed and parameters; values
// use fixed six-decimal formatting so reruns are byte-identical.
// ---------------------------------------------------------------------------

inline std::string csv_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

inline std::string join_flags(const std::vector<std::string>& flags) {
    std::string out;
    for (std::size_t i = 0; i < flags.size(); ++i) {
        if (i) out.push_back(';');
        out += flags[i];
    }
    return out;
}

inline void write_csv_preamble(std::ostream& out, const EvalOptions& opts,
                               const std::string& extra = {}) {
    out << "# tool=dysign " << kVersion << "\n";
    out << "# seed=" << opts.seed << " folds=" << opts.n_folds
        << " stratified=" << (opts.stratified ? "yes" : "no") << "\n";
    out << "# lsh=N" << opts.lsh.n_hashes << ",b" << opts.lsh.n_bands << ",r"
        << opts.lsh.rows_per_band << " idf_mode=" << to_string(opts.detector.idf_mode)
        << " k=" << opts.detector.k << " vote=" << to_string(opts.detector.vote) << "\n";
    if (!extra.empty()) out << "# " << extra << "\n";
}

inline void write_metrics_row(std::ostream& out, const std::string& name, const MetricsReport& m) {
    out << name << "," << m.tp << "," << m.fp << "," << m.fn << "," << m.tn << ","
        << csv_double(m.precision) << "," << csv_double(m.recall) << "," << csv_double(m.f1) << ","
        << join_flags(m.flags) << "\n";
}

inline void write_detection_csv(std::ostream& out, const DetectionResult& result,
                                const EvalOptions& opts) {
    write_csv_preamble(out, opts, "aggregation=micro (counts summed across folds)");
    out << "fold,tp,fp,fn,tn,precision,recall,f1,flags\n";
    for (std::size_t i = 0; i < result.per_fold.size(); ++i)
        write_metrics_row(out, std::to_string(i), result.per_fold[i]);
    write_metrics_row(out, "aggregate", result.aggregate);
}

inline void write_attribution_csv(std::ostream& out, const AttributionResult& result,
                                  const EvalOptions& opts) {
    write_csv_preamble(out, opts,
                       "aggregation=support-weighted one-vs-rest; f1=harmonic(P,R)");
    out << "class,support,tp,fp,fn,tn,precision,recall,f1,flags\n";
    for (std::size_t c = 0; c < result.per_class.size(); ++c) {
        const MetricsReport& m = result.per_class[c];
        out << result.confusion.classes[c] << "," << result.support[c] << "," << m.tp << ","
            << m.fp << "," << m.fn << "," << m.tn << "," << csv_double(m.precision) << ","
            << csv_double(m.recall) << "," << csv_double(m.f1) << "," << join_flags(m.flags)
            << "\n";
    }
    std::uint64_t total_support = 0;
    for (std::uint64_t s : result.support) total_support += s;
    out << "weighted," << total_support << ",,,,," << csv_double(result.precision) << ","
        << csv_double(result.recall) << "," << csv_double(result.f1) << ","
        << join_flags(result.flags) << "\n";
}

inline void write_confusion_csv(std::ostream& out, const ConfusionMatrix& cm, bool log10_view,
                                const EvalOptions& opts) {
    write_csv_preamble(out, opts,
                       log10_view ? "confusion matrix, log10(1+count)" : "confusion matrix, counts");
    out << "true\\predicted";
    for (const auto& cls : cm.classes) out << "," << cls;
    out << "\n";
    for (std::size_t i = 0; i < cm.classes.size(); ++i) {
        out << cm.classes[i];
        for (std::size_t j = 0; j < cm.classes.size(); ++j) {
            out << ",";
            if (log10_view)
                out << csv_double(cm.log10_view(i, j));
            else
                out << cm.counts[i][j];
        }
        out << "\n";
    }
}

inline void write_size_stats_csv(std::ostream& out, const SizeStats& stats,
                                 const EvalOptions& opts) {
    write_csv_preamble(out, opts, "report size statistics per label");
    out << "label,count,mean_bytes,median_bytes,max_bytes\n";
    for (const auto& g : stats.groups)
        out << g.label << "," << g.count << "," << csv_double(g.mean) << ","
            << csv_double(g.median) << "," << g.max << "\n";
    out << "label,space,bin_lo,bin_hi,count\n";
    for (const auto& g : stats.groups) {
        for (const auto& bin : g.bytes_hist)
            out << g.label << ",bytes," << csv_double(bin.lo) << "," << csv_double(bin.hi) << ","
                << bin.count << "\n";
        for (const auto& bin : g.log10_hist)
            out << g.label << ",log10," << csv_double(bin.lo) << "," << csv_double(bin.hi) << ","
                << bin.count << "\n";
    }
}

}  // namespace dysign
