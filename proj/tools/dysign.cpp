// dysign command-line front end.
//
// Exit codes: 0 success, 1 refusal or fatal error, 2 partial per-item
// errors, 3 detection hit with --fail-on-detect, 64 usage error.

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "dysign/bench.hpp"
#include "dysign/common.hpp"
#include "dysign/db.hpp"
#include "dysign/detector.hpp"
#include "dysign/eval.hpp"
#include "dysign/store.hpp"
#include "dysign/synth.hpp"

namespace fs = std::filesystem;
using namespace dysign;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFatal = 1;
constexpr int kExitPartial = 2;
constexpr int kExitDetected = 3;
constexpr int kExitUsage = 64;

struct GlobalFlags {
    std::string db;
    std::uint64_t seed = 42;
    unsigned threads = std::max(1u, std::thread::hardware_concurrency());
    std::string idf_mode = "literal";
    std::string lsh = "128,32,4";
    std::string log_level = "info";
    bool seed_given = false;
    bool lsh_given = false;

    MinHashParams lsh_params() const {
        auto parts = split(lsh, ',');
        if (parts.size() != 3) throw InvalidInputError("--lsh expects N,b,r");
        MinHashParams p;
        try {
            p.n_hashes = std::stoul(parts[0]);
            p.n_bands = std::stoul(parts[1]);
            p.rows_per_band = std::stoul(parts[2]);
        } catch (const std::exception&) {
            throw InvalidInputError("--lsh expects three positive integers N,b,r");
        }
        p.seed = seed;
        p.validate();  // enforces b*r == N
        return p;
    }

    // When the user left the index geometry at its defaults, accept whatever
    // an existing database was built with instead of demanding a match.
    std::optional<MinHashParams> expected_params() const {
        if (seed_given || lsh_given) return lsh_params();
        return std::nullopt;
    }

    IdfMode idf() const { return idf_mode_from_string(idf_mode); }
};

int require_db(const GlobalFlags& g) {
    if (g.db.empty()) {
        std::cerr << "error: --db is required (or set DYSIGN_DB)\n";
        return kExitUsage;
    }
    return kExitOk;
}

void apply_log_level(const std::string& name) {
    if (name == "debug") log_level() = LogLevel::Debug;
    else if (name == "info") log_level() = LogLevel::Info;
    else if (name == "warn") log_level() = LogLevel::Warn;
    else log_level() = LogLevel::Error;
}

// ---------------------------------------------------------------------------
// build-db
// ---------------------------------------------------------------------------

struct BuildDbFlags {
    std::string malware, benign;
    bool force = false;
    bool keep_raw = false;
};

int run_build_db(const GlobalFlags& g, const BuildDbFlags& f) {
    if (int rc = require_db(g)) return rc;
    fs::path db_dir(g.db);
    if (fs::exists(store_path(db_dir)) && !f.force) {
        std::cerr << "error: " << store_path(db_dir).string()
                  << " already exists; pass --force to rebuild\n";
        return kExitFatal;
    }

    std::vector<IngestError> errors;
    std::vector<AnalysisReport> kept;
    ReportStore store = init_store(f.malware, f.benign, TokenizerConfig{}, g.threads, &errors,
                                   f.keep_raw ? &kept : nullptr);
    Database db = Database::build(std::move(store), g.lsh_params(), g.idf(), g.threads);
    save_database(db, db_dir);

    if (f.keep_raw) {
        fs::create_directories(db_dir / "raw");
        for (const auto& rep : kept) write_file(db_dir / "raw" / (rep.id + ".txt"), rep.raw);
    }

    std::size_t n_benign = 0;
    std::map<std::string, std::size_t> families;
    for (const auto& [id, rec] : db.store.records()) {
        (void)id;
        if (rec.label.kind == LabelKind::Malware) ++families[*rec.label.family];
        else ++n_benign;
    }
    std::cout << "db written to " << db_dir.string() << "\n";
    std::cout << "records: " << db.store.size() << " ("
              << (db.store.size() - n_benign) << " Malware, " << n_benign << " Benign)\n";
    for (const auto& [family, count] : families)
        std::cout << "  " << family << ": " << count << "\n";
    if (!errors.empty()) {
        std::cerr << errors.size() << " entr" << (errors.size() == 1 ? "y" : "ies")
                  << " failed to ingest\n";
        return kExitPartial;
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// update
// ---------------------------------------------------------------------------

struct UpdateFlags {
    std::string report;
    std::string label;
    std::string family;
    std::string watch_dir;
    double interval = 2.0;
    int watch_rounds = 0;  // 0 = run until interrupted
};

Label label_from_flags(const UpdateFlags& f) {
    LabelKind kind = label_kind_from_string(f.label);
    if (kind == LabelKind::Malware) {
        if (f.family.empty())
            throw InvalidInputError("--label Malware requires --family");
        return Label::malware(f.family);
    }
    if (!f.family.empty())
        throw InvalidInputError("--family is only valid with --label Malware");
    return Label::benign();
}

// Appends the new record to both files the database loaded from. Called only
// after the in-memory update succeeded, so a duplicate leaves disk untouched.
void append_to_disk(const fs::path& db_dir, const Database& db, const AnalysisReport& rep) {
    append_store_record(store_path(db_dir), rep.id,
                        StoredRecord{rep.label, rep.bag, rep.bytes});
    std::ofstream out(index_path(db_dir), std::ios::binary | std::ios::app);
    if (!out) throw IoError("cannot append to index file: " + index_path(db_dir).string());
    append_index_record(out, rep.id, db.index.signature_of(rep.id));
}

int run_update(const GlobalFlags& g, const UpdateFlags& f) {
    if (int rc = require_db(g)) return rc;
    fs::path db_dir(g.db);
    Label label = label_from_flags(f);
    Database db = load_database(db_dir, g.expected_params(), g.idf(), g.threads);

    if (!f.report.empty()) {
        AnalysisReport rep = ingest_report(f.report, label, db.store.tokenizer());
        db.update(rep);  // throws ConflictError on duplicate, db untouched
        append_to_disk(db_dir, db, rep);
        std::cout << "added " << rep.id << " (" << to_string(rep.label.kind) << ")\n";
        return kExitOk;
    }

    // Watch mode: poll the directory, ingesting files we have not seen yet.
    // A file whose id is already stored is skipped, so re-runs are harmless.
    std::set<fs::path> seen;
    int rounds = 0;
    for (;;) {
        std::vector<fs::path> fresh;
        for (const auto& entry : fs::directory_iterator(f.watch_dir))
            if (entry.is_regular_file() && !seen.count(entry.path())) fresh.push_back(entry.path());
        std::sort(fresh.begin(), fresh.end());
        for (const auto& path : fresh) {
            seen.insert(path);
            try {
                AnalysisReport rep = ingest_report(path, label, db.store.tokenizer());
                if (db.store.records().count(rep.id)) {
                    log_info("watch: " + path.string() + " already stored as " + rep.id);
                    continue;
                }
                db.update(rep);
                append_to_disk(db_dir, db, rep);
                log_info("watch: added " + rep.id + " from " + path.string());
            } catch (const Error& e) {
                log_warn("watch: skipping " + path.string() + ": " + e.what());
            }
        }
        if (f.watch_rounds > 0 && ++rounds >= f.watch_rounds) break;
        std::this_thread::sleep_for(std::chrono::duration<double>(f.interval));
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// scan
// ---------------------------------------------------------------------------

struct ScanFlags {
    std::string report;
    std::string batch;
    int k = 1;
    std::string vote = "nearest";
    double min_similarity = 0.0;
    bool exact = false;
    bool fail_on_detect = false;
};

// A batch file lists one report path per line, resolved relative to the
// batch file itself. Manifest rows also work: only the path field is read.
std::vector<fs::path> read_batch(const fs::path& batch_path) {
    std::string text = read_file(batch_path);
    fs::path base = batch_path.parent_path();
    std::vector<fs::path> paths;
    for (const auto& line : split(text, '\n')) {
        std::string_view sv(line);
        if (!sv.empty() && sv.back() == '\r') sv.remove_suffix(1);
        if (sv.empty()) continue;
        auto fields = split(sv, '\t');
        fs::path p(fields[0]);
        paths.push_back(p.is_absolute() ? p : base / p);
    }
    return paths;
}

int run_scan(const GlobalFlags& g, const ScanFlags& f) {
    if (int rc = require_db(g)) return rc;
    Database db = load_database(g.db, g.expected_params(), g.idf(), g.threads);

    DetectorConfig cfg;
    cfg.k = f.k;
    cfg.vote = vote_from_string(f.vote);
    cfg.min_similarity = f.min_similarity;
    cfg.idf_mode = g.idf();
    cfg.exact = f.exact;

    std::vector<fs::path> paths;
    if (!f.report.empty()) paths.emplace_back(f.report);
    else paths = read_batch(f.batch);

    std::vector<BatchItem> items = classify_batch(db, paths, cfg, g.threads);
    bool any_error = false, any_detected = false;
    for (const auto& item : items) {
        if (!item.error.empty()) {
            log_error("scan: " + item.path.string() + ": " + item.error);
            any_error = true;
            continue;
        }
        std::cout << verdict_to_json(item.query_id, *item.verdict).dump() << "\n";
        if (item.verdict->decision == Decision::Malicious) any_detected = true;
    }
    if (f.fail_on_detect && any_detected) return kExitDetected;
    if (any_error) return kExitPartial;
    return kExitOk;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateFlags {
    std::string mode;
    std::string manifest;
    std::string out_dir;
    int folds = 10;
    bool unstratified = false;
    int k = 1;
    std::string vote = "nearest";
    double min_similarity = 0.0;
};

void write_csv_file(const fs::path& path, const std::function<void(std::ostream&)>& writer) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    writer(out);
    if (!out) throw IoError("write failed: " + path.string());
}

// The detection aggregate is binary, but the same confusion files are
// emitted for both modes so downstream plotting has one shape to deal with.
ConfusionMatrix detection_confusion(const MetricsReport& m) {
    ConfusionMatrix cm;
    cm.classes = {to_string(LabelKind::Benign), to_string(LabelKind::Malware)};
    cm.counts = {{m.tn, m.fp}, {m.fn, m.tp}};
    return cm;
}

int run_evaluate(const GlobalFlags& g, const EvaluateFlags& f) {
    std::vector<ManifestEntry> entries = read_manifest(f.manifest);
    std::vector<IngestError> errors;
    std::vector<AnalysisReport> reports =
        ingest_entries(entries, TokenizerConfig{}, g.threads, &errors);
    if (reports.empty()) {
        std::cerr << "error: no ingestible reports in " << f.manifest << "\n";
        return kExitFatal;
    }

    EvalOptions opts;
    opts.n_folds = f.folds;
    opts.seed = g.seed;
    opts.stratified = !f.unstratified;
    opts.threads = g.threads;
    opts.lsh = g.lsh_params();
    opts.detector.k = f.k;
    opts.detector.vote = vote_from_string(f.vote);
    opts.detector.min_similarity = f.min_similarity;
    opts.detector.idf_mode = g.idf();

    fs::path out_dir(f.out_dir);
    fs::create_directories(out_dir);

    std::vector<std::pair<Label, std::uint64_t>> sizes;
    for (const auto& rep : reports) sizes.emplace_back(rep.label, rep.bytes);
    SizeStats stats = size_stats(sizes);
    write_csv_file(out_dir / "size_stats.csv",
                   [&](std::ostream& o) { write_size_stats_csv(o, stats, opts); });

    if (f.mode == "detection") {
        DetectionResult result = evaluate_detection(reports, opts);
        for (const auto& w : result.warnings) log_warn("evaluate: " + w);
        write_csv_file(out_dir / "metrics_detection.csv",
                       [&](std::ostream& o) { write_detection_csv(o, result, opts); });
        ConfusionMatrix cm = detection_confusion(result.aggregate);
        write_csv_file(out_dir / "confusion.csv",
                       [&](std::ostream& o) { write_confusion_csv(o, cm, false, opts); });
        write_csv_file(out_dir / "confusion_log10.csv",
                       [&](std::ostream& o) { write_confusion_csv(o, cm, true, opts); });
        std::cout << "detection: precision=" << csv_double(result.aggregate.precision)
                  << " recall=" << csv_double(result.aggregate.recall)
                  << " f1=" << csv_double(result.aggregate.f1) << " (folds=" << f.folds << ")\n";
    } else {
        AttributionResult result = evaluate_attribution(reports, opts);
        for (const auto& w : result.warnings) log_warn("evaluate: " + w);
        write_csv_file(out_dir / "metrics_attribution.csv",
                       [&](std::ostream& o) { write_attribution_csv(o, result, opts); });
        write_csv_file(out_dir / "confusion.csv", [&](std::ostream& o) {
            write_confusion_csv(o, result.confusion, false, opts);
        });
        write_csv_file(out_dir / "confusion_log10.csv", [&](std::ostream& o) {
            write_confusion_csv(o, result.confusion, true, opts);
        });
        std::cout << "attribution: precision=" << csv_double(result.precision)
                  << " recall=" << csv_double(result.recall) << " f1=" << csv_double(result.f1)
                  << " (folds=" << f.folds << ")\n";
    }
    std::cout << "wrote CSVs to " << out_dir.string() << "\n";
    return errors.empty() ? kExitOk : kExitPartial;
}

// ---------------------------------------------------------------------------
// bench / gen-corpus
// ---------------------------------------------------------------------------

struct BenchFlags {
    std::string ladder = "1000,2000,5000,10000,20000,40000";
    std::string spec;
    std::string out;
    int repetitions = 3;
};

int run_bench(const GlobalFlags& g, const BenchFlags& f) {
    BenchOptions opts;
    opts.ladder.clear();
    for (const auto& part : split(f.ladder, ','))
        opts.ladder.push_back(std::stoul(part));
    if (opts.ladder.empty()) throw InvalidInputError("--ladder needs at least one size");
    opts.base = f.spec.empty() ? bench_corpus_spec() : load_spec(f.spec);
    if (g.seed_given || f.spec.empty()) opts.base.seed = g.seed;
    opts.base.validate();
    opts.lsh = g.lsh_params();
    opts.detector.idf_mode = g.idf();
    opts.threads = g.threads;
    opts.repetitions = f.repetitions;

    std::vector<BenchRow> rows = scaling_bench(opts);
    if (f.out.empty()) {
        write_bench_csv(std::cout, rows, opts);
    } else {
        write_csv_file(f.out, [&](std::ostream& o) { write_bench_csv(o, rows, opts); });
        std::cout << "wrote " << rows.size() << " rows to " << f.out << "\n";
    }
    return rows.size() == opts.ladder.size() ? kExitOk : kExitPartial;
}

struct GenCorpusFlags {
    std::string spec;
    std::string out_dir;
};

int run_gen_corpus(const GlobalFlags& g, const GenCorpusFlags& f) {
    SynthCorpusSpec spec = f.spec.empty() ? SynthCorpusSpec{} : load_spec(f.spec);
    if (g.seed_given || f.spec.empty()) spec.seed = g.seed;
    spec.validate();
    CorpusOnDisk corpus = write_corpus(spec, f.out_dir);
    std::cout << "wrote " << corpus.n_malware << " malware + " << corpus.n_benign
              << " benign reports to " << f.out_dir << " (manifest: "
              << corpus.manifest_path.string() << ")\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Behavioral malware fingerprinting over sandbox analysis reports"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", std::string(kVersion));

    GlobalFlags g;
    app.add_option("--db", g.db, "database directory (env: DYSIGN_DB)")->envname("DYSIGN_DB");
    auto* seed_opt = app.add_option("--seed", g.seed, "RNG seed for hashing, folds, synthesis");
    app.add_option("--threads", g.threads, "worker threads (default: hardware concurrency)");
    app.add_option("--idf-mode", g.idf_mode, "idf weighting: literal or floor0")
        ->check(CLI::IsMember({"literal", "floor0"}));
    auto* lsh_opt =
        app.add_option("--lsh", g.lsh, "minhash geometry N,b,r with b*r = N (default 128,32,4)");
    app.add_option("--log-level", g.log_level, "stderr verbosity: debug, info, warn, error")
        ->check(CLI::IsMember({"debug", "info", "warn", "error"}));

    BuildDbFlags build_flags;
    CLI::App* build = app.add_subcommand("build-db", "ingest manifests into a fresh database");
    build->add_option("--malware", build_flags.malware, "malware manifest (path\\tMalware\\tfamily)")
        ->required()
        ->check(CLI::ExistingFile);
    build->add_option("--benign", build_flags.benign, "benign manifest (path\\tBenign\\t-)")
        ->required()
        ->check(CLI::ExistingFile);
    build->add_flag("--force", build_flags.force, "overwrite an existing database");
    build->add_flag("--keep-raw", build_flags.keep_raw,
                    "also store raw report text under <db>/raw/");

    UpdateFlags update_flags;
    CLI::App* update = app.add_subcommand("update", "add reports to an existing database");
    auto* report_opt =
        update->add_option("--report", update_flags.report, "one report file to add")
            ->check(CLI::ExistingFile);
    auto* watch_opt =
        update->add_option("--watch", update_flags.watch_dir, "poll a directory for new reports")
            ->check(CLI::ExistingDirectory);
    report_opt->excludes(watch_opt);
    update->add_option("--label", update_flags.label, "label for added reports")
        ->required()
        ->check(CLI::IsMember({"Benign", "Malware"}));
    update->add_option("--family", update_flags.family, "family name (required for Malware)");
    update->add_option("--interval", update_flags.interval, "watch poll interval in seconds")
        ->check(CLI::PositiveNumber);
    update->add_option("--watch-rounds", update_flags.watch_rounds,
                       "stop watching after N polls (0 = run until interrupted)");

    ScanFlags scan_flags;
    CLI::App* scan = app.add_subcommand("scan", "classify reports against the database");
    auto* scan_report =
        scan->add_option("--report", scan_flags.report, "one report file to classify")
            ->check(CLI::ExistingFile);
    auto* scan_batch =
        scan->add_option("--batch", scan_flags.batch, "file listing report paths, one per line")
            ->check(CLI::ExistingFile);
    scan_report->excludes(scan_batch);
    scan->add_option("--k", scan_flags.k, "neighbors to retrieve")->check(CLI::PositiveNumber);
    scan->add_option("--vote", scan_flags.vote, "verdict rule: nearest or majority")
        ->check(CLI::IsMember({"nearest", "majority"}));
    scan->add_option("--min-similarity", scan_flags.min_similarity,
                     "cosine a match must exceed to count as malicious");
    scan->add_flag("--exact-alg3", scan_flags.exact,
                   "bypass the index: recompute joint tf-idf and scan every record");
    scan->add_flag("--fail-on-detect", scan_flags.fail_on_detect,
                   "exit 3 when any verdict is Malicious");

    EvaluateFlags eval_flags;
    CLI::App* evaluate = app.add_subcommand("evaluate", "k-fold cross-validation on a manifest");
    evaluate->add_option("--mode", eval_flags.mode, "detection or attribution")
        ->required()
        ->check(CLI::IsMember({"detection", "attribution"}));
    evaluate->add_option("--manifest", eval_flags.manifest, "labeled report manifest")
        ->required()
        ->check(CLI::ExistingFile);
    evaluate->add_option("--out", eval_flags.out_dir, "directory for CSV output")->required();
    evaluate->add_option("--folds", eval_flags.folds, "number of folds")
        ->check(CLI::Range(2, 1000));
    evaluate->add_flag("--unstratified", eval_flags.unstratified,
                       "plain random folds instead of per-class stratification");
    evaluate->add_option("--k", eval_flags.k, "neighbors to retrieve")
        ->check(CLI::PositiveNumber);
    evaluate->add_option("--vote", eval_flags.vote, "verdict rule: nearest or majority")
        ->check(CLI::IsMember({"nearest", "majority"}));
    evaluate->add_option("--min-similarity", eval_flags.min_similarity,
                         "cosine a match must exceed to count as malicious");

    BenchFlags bench_flags;
    CLI::App* bench = app.add_subcommand("bench", "scaling benchmark over synthetic corpora");
    bench->add_option("--ladder", bench_flags.ladder, "comma-separated corpus sizes");
    bench->add_option("--spec", bench_flags.spec, "synthesis spec JSON (default: bench profile)")
        ->check(CLI::ExistingFile);
    bench->add_option("--out", bench_flags.out, "CSV output file (default: stdout)");
    bench->add_option("--repetitions", bench_flags.repetitions, "timing repetitions (best-of)")
        ->check(CLI::PositiveNumber);

    GenCorpusFlags gen_flags;
    CLI::App* gen = app.add_subcommand("gen-corpus", "write a synthetic labeled corpus");
    gen->add_option("--spec", gen_flags.spec, "synthesis spec JSON (default: built-in profile)")
        ->check(CLI::ExistingFile);
    gen->add_option("--out", gen_flags.out_dir, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    apply_log_level(g.log_level);
    g.seed_given = seed_opt->count() > 0;
    g.lsh_given = lsh_opt->count() > 0;

    try {
        if (app.got_subcommand(build)) return run_build_db(g, build_flags);
        if (app.got_subcommand(update)) {
            if (update_flags.report.empty() == update_flags.watch_dir.empty()) {
                std::cerr << "error: update needs exactly one of --report or --watch\n";
                return kExitUsage;
            }
            return run_update(g, update_flags);
        }
        if (app.got_subcommand(scan)) {
            if (scan_flags.report.empty() == scan_flags.batch.empty()) {
                std::cerr << "error: scan needs exactly one of --report or --batch\n";
                return kExitUsage;
            }
            return run_scan(g, scan_flags);
        }
        if (app.got_subcommand(evaluate)) return run_evaluate(g, eval_flags);
        if (app.got_subcommand(bench)) return run_bench(g, bench_flags);
        if (app.got_subcommand(gen)) return run_gen_corpus(g, gen_flags);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFatal;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFatal;
    }
    return kExitUsage;
}
