// Scaling benchmark: generates synthetic corpora at increasing sizes and
// times the two hot paths (fingerprint construction over the whole corpus,
// and query matching through the banded index), recording detection and
// attribution quality alongside so throughput numbers cannot hide a broken
// matcher.
#pragma once

#include <algorithm>
#include <chrono>
#include <new>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "dysign/common.hpp"
#include "dysign/db.hpp"
#include "dysign/detector.hpp"
#include "dysign/eval.hpp"
#include "dysign/synth.hpp"

namespace dysign {

struct BenchRow {
    std::size_t n_reports = 0;
    double tfidf_time = 0.0;      // seconds: corpus stats + all fingerprints
    double lsh_match_time = 0.0;  // seconds: sign + probe + re-rank, all queries
    std::uint64_t corpus_bytes = 0;
    double f1_detection = 0.0;
    double f1_attribution = 0.0;
};

struct BenchOptions {
    std::vector<std::size_t> ladder = {1000, 2000, 5000, 10000, 20000, 40000};
    SynthCorpusSpec base = bench_corpus_spec();
    MinHashParams lsh;
    DetectorConfig detector;
    unsigned threads = 1;
    int repetitions = 3;  // best-of-N timing
};

namespace detail {

template <typename Fn>
double best_of(int repetitions, Fn&& fn) {
    double best = 0.0;
    for (int i = 0; i < repetitions; ++i) {
        auto started = std::chrono::steady_clock::now();
        fn();
        double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        if (i == 0 || elapsed < best) best = elapsed;
    }
    return best;
}

// Deterministic 90/10 train/query split, stratified by class so every rung
// has malware and benign on both sides.
inline void split_for_bench(const std::vector<AnalysisReport>& reports, std::uint64_t seed,
                            std::vector<const AnalysisReport*>& train,
                            std::vector<const AnalysisReport*>& queries) {
    std::vector<std::pair<std::string, std::string>> id_and_class;
    id_and_class.reserve(reports.size());
    for (const auto& rep : reports) id_and_class.emplace_back(rep.id, class_of(rep.label));
    FoldPlan plan = kfold(id_and_class, 10, seed);
    for (const auto& rep : reports)
        (plan.fold_of(rep.id) == 0 ? queries : train).push_back(&rep);
}

}  // namespace detail

// Runs one rung of the ladder. Throws std::bad_alloc upward; the caller
// decides whether to keep going.
inline BenchRow bench_rung(std::size_t n_reports, const BenchOptions& opts) {
    SynthCorpusSpec spec = scaled_spec(opts.base, n_reports);
    std::vector<GeneratedReport> generated = generate_corpus(spec);
    std::vector<AnalysisReport> reports = materialize_corpus(generated, TokenizerConfig{});

    BenchRow row;
    row.n_reports = reports.size();
    for (const auto& g : generated) row.corpus_bytes += g.text.size();
    generated.clear();
    generated.shrink_to_fit();

    std::vector<const AnalysisReport*> train, queries;
    detail::split_for_bench(reports, spec.seed, train, queries);

    // Fingerprint path: stats over the full corpus, then every fingerprint.
    row.tfidf_time = detail::best_of(opts.repetitions, [&] {
        CorpusStats stats;
        for (const auto& rep : reports) stats.add_document(rep.bag);
        std::vector<Fingerprint> fps = parallel_map(
            reports.size(), opts.threads,
            [&](std::size_t i) { return make_fingerprint(reports[i].bag, stats, opts.detector.idf_mode); });
        if (fps.size() != reports.size()) throw Error("fingerprint count mismatch");
    });

    ReportStore store;
    for (const auto* rep : train)
        store.add(rep->id, StoredRecord{rep->label, rep->bag, rep->bytes});
    store.refresh();
    Database db =
        Database::build(std::move(store), opts.lsh, opts.detector.idf_mode, opts.threads);

    std::vector<TokenBag> query_bags;
    query_bags.reserve(queries.size());
    for (const auto* rep : queries) query_bags.push_back(rep->bag);

    // Match path: everything a scan pays per query once the store is built.
    std::vector<Verdict> verdicts;
    row.lsh_match_time = detail::best_of(opts.repetitions, [&] {
        verdicts = classify_bags(db, query_bags, opts.detector, opts.threads);
    });

    MetricsReport detection;
    std::vector<std::pair<std::string, std::string>> true_and_pred;
    for (std::size_t i = 0; i < queries.size(); ++i) {
        bool truly_malware = queries[i]->label.kind == LabelKind::Malware;
        bool flagged = verdicts[i].decision == Decision::Malicious;
        if (truly_malware && flagged) ++detection.tp;
        else if (truly_malware) ++detection.fn;
        else if (flagged) ++detection.fp;
        else ++detection.tn;
        if (truly_malware)
            true_and_pred.emplace_back(*queries[i]->label.family,
                                       flagged ? *verdicts[i].family
                                               : to_string(LabelKind::Benign));
    }
    detection.finalize();
    row.f1_detection = detection.f1;

    ConfusionMatrix cm = ConfusionMatrix::from_pairs(true_and_pred);
    double weighted_p = 0.0, weighted_r = 0.0;
    std::uint64_t total_support = 0;
    for (std::size_t c = 0; c < cm.classes.size(); ++c) {
        MetricsReport m;
        m.tp = cm.counts[c][c];
        m.fn = cm.row_total(c) - m.tp;
        m.fp = cm.col_total(c) - m.tp;
        m.finalize();
        std::uint64_t support = cm.row_total(c);
        weighted_p += m.precision * static_cast<double>(support);
        weighted_r += m.recall * static_cast<double>(support);
        total_support += support;
    }
    if (total_support > 0) {
        weighted_p /= static_cast<double>(total_support);
        weighted_r /= static_cast<double>(total_support);
    }
    row.f1_attribution = weighted_p + weighted_r > 0.0
                             ? 2.0 * weighted_p * weighted_r / (weighted_p + weighted_r)
                             : 0.0;
    return row;
}

// Runs the whole ladder. An allocation failure aborts the current rung but
// keeps every row already measured.
inline std::vector<BenchRow> scaling_bench(const BenchOptions& opts) {
    std::vector<BenchRow> rows;
    for (std::size_t n : opts.ladder) {
        log_info("bench: rung " + std::to_string(n));
        try {
            rows.push_back(bench_rung(n, opts));
        } catch (const std::bad_alloc&) {
            log_warn("bench: out of memory at rung " + std::to_string(n) +
                     "; keeping earlier rows");
            break;
        }
    }
    return rows;
}

inline void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows,
                            const BenchOptions& opts) {
    out << "# tool=dysign " << kVersion << "\n";
    out << "# seed=" << opts.base.seed << " threads=" << opts.threads
        << " repetitions=" << opts.repetitions << " (best-of)\n";
    out << "# lsh=N" << opts.lsh.n_hashes << ",b" << opts.lsh.n_bands << ",r"
        << opts.lsh.rows_per_band << " idf_mode=" << to_string(opts.detector.idf_mode) << "\n";
    out << "n_reports,tfidf_time,lsh_match_time,corpus_bytes,f1_detection,f1_attribution\n";
    for (const auto& row : rows)
        out << row.n_reports << "," << csv_double(row.tfidf_time) << ","
            << csv_double(row.lsh_match_time) << "," << row.corpus_bytes << ","
            << csv_double(row.f1_detection) << "," << csv_double(row.f1_attribution) << "\n";
}

}  // namespace dysign
