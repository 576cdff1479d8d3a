#include "cli.hpp"

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "patrec/errors.hpp"
#include "patrec/eval.hpp"
#include "patrec/miner.hpp"
#include "patrec/model.hpp"
#include "patrec/retrieval.hpp"
#include "patrec/sessions.hpp"
#include "patrec/training.hpp"

namespace patrec::cli {
namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

struct RunConfig {
    uint64_t seed = 0;
    int workers = 1;

    std::string sessions_path;
    fs::path splits_dir = "splits";
    fs::path patterns_dir = "patterns";
    fs::path checkpoints_dir = "checkpoints";
    fs::path reports_dir = "reports";

    std::vector<std::string> attribute_types;
    size_t max_len = 50;
    int min_days = 5;
    int valid_days = 1;
    int test_days = 1;

    MinerConfig miner;          // min_support ≤ 0 means auto
    RetrievalConfig retrieval;
    ModelConfig model;
    TrainConfig train;
    std::vector<size_t> eval_ks = {10, 20};
    std::vector<size_t> horizons = {3, 5, 10};
    size_t recommend_k = 10;
};

// Config problems exit with code 2, so config parsing raises ConfigError
// (not the DataError used for data artifacts).
RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config file not found: " + path);
    ordered_json j = ordered_json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        throw ConfigError("config file is not a JSON object: " + path);
    RunConfig cfg;
    try {
        cfg.seed = j.value("seed", uint64_t{0});
        cfg.workers = j.value("workers", 1);

        if (j.contains("paths")) {
            const auto& p = j.at("paths");
            cfg.sessions_path = p.value("sessions", std::string{});
            cfg.splits_dir = p.value("splits_dir", std::string{"splits"});
            cfg.patterns_dir = p.value("patterns_dir", std::string{"patterns"});
            cfg.checkpoints_dir = p.value("checkpoints_dir", std::string{"checkpoints"});
            cfg.reports_dir = p.value("reports_dir", std::string{"reports"});
        }
        const auto& d = j.at("data");
        cfg.attribute_types = d.at("attribute_types").get<std::vector<std::string>>();
        cfg.max_len = d.value("max_len", size_t{50});
        cfg.min_days = d.value("min_days", 5);
        cfg.valid_days = d.value("valid_days", 1);
        cfg.test_days = d.value("test_days", 1);

        if (j.contains("miner")) {
            const auto& m = j.at("miner");
            cfg.miner.max_nodes = m.value("max_nodes", 4);
            cfg.miner.min_support = m.value("min_support", int64_t{0});
            cfg.miner.require_cycle = m.value("require_cycle", true);
        } else {
            cfg.miner.min_support = 0;
        }
        if (j.contains("retrieval"))
            cfg.retrieval.max_patterns = j.at("retrieval").value("max_patterns", 12);

        if (j.contains("model")) {
            const auto& m = j.at("model");
            cfg.model.d = m.value("d", size_t{100});
            cfg.model.heads = m.value("heads", size_t{4});
            cfg.model.max_neighbors = m.value("max_neighbors", size_t{12});
            cfg.model.bias_buckets = m.value("bias_buckets", size_t{32});
            cfg.model.max_distance = m.value("max_distance", size_t{128});
            cfg.model.dropout = m.value("dropout", 0.0);
        }
        if (j.contains("train")) {
            const auto& t = j.at("train");
            cfg.train.lr = t.value("lr", 1e-3);
            cfg.train.weight_decay = t.value("weight_decay", 1e-5);
            cfg.train.batch_size = t.value("batch_size", size_t{100});
            cfg.train.epochs = t.value("epochs", size_t{10});
            std::string loss = t.value("loss", std::string{"cross_entropy"});
            if (loss == "cross_entropy")
                cfg.train.loss = LossKind::cross_entropy;
            else if (loss == "bpr")
                cfg.train.loss = LossKind::bpr;
            else
                throw ConfigError("config: train.loss must be cross_entropy or bpr");
            cfg.train.warmup_fraction = t.value("warmup_fraction", 0.1);
            cfg.train.bpr_negatives = t.value("bpr_negatives", size_t{1});
            cfg.train.patience = t.value("patience", size_t{5});
        }
        if (j.contains("eval")) {
            const auto& e = j.at("eval");
            if (e.contains("ks")) cfg.eval_ks = e.at("ks").get<std::vector<size_t>>();
            if (e.contains("horizons"))
                cfg.horizons = e.at("horizons").get<std::vector<size_t>>();
        }
        if (j.contains("recommend")) cfg.recommend_k = j.at("recommend").value("k", size_t{10});
    } catch (const ConfigError&) {
        throw;
    } catch (const ordered_json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (cfg.eval_ks.empty()) throw ConfigError("config: eval.ks must not be empty");

    cfg.model.attribute_types = cfg.attribute_types;
    cfg.model.max_len = cfg.max_len;
    cfg.model.max_patterns = static_cast<size_t>(cfg.retrieval.max_patterns);
    cfg.model.validate();
    cfg.miner.workers = cfg.workers;
    cfg.train.seed = cfg.seed;
    cfg.train.validate();
    return cfg;
}

// --- artifact paths ---------------------------------------------------------

fs::path split_path(const RunConfig& cfg, const std::string& name) {
    return cfg.splits_dir / (name + ".jsonl");
}
fs::path catalog_path(const RunConfig& cfg) { return cfg.splits_dir / "catalog.json"; }
fs::path pattern_path(const RunConfig& cfg, const std::string& type) {
    return cfg.patterns_dir / ("patterns." + type + ".jsonl");
}
fs::path checkpoint_path(const RunConfig& cfg) { return cfg.checkpoints_dir / "model.bin"; }
fs::path metrics_path(const RunConfig& cfg) { return cfg.checkpoints_dir / "metrics.log"; }
fs::path reports_path(const RunConfig& cfg) { return cfg.reports_dir / "reports.jsonl"; }
fs::path stats_path(const RunConfig& cfg) { return cfg.reports_dir / "stats.json"; }
fs::path summary_path(const RunConfig& cfg) { return cfg.reports_dir / "summary.txt"; }

void require_file(const fs::path& path, const std::string& hint) {
    if (!fs::exists(path))
        throw DependencyError("missing " + path.string() + " (" + hint + ")");
}

AttributeSchema schema_of(const RunConfig& cfg) { return AttributeSchema{cfg.attribute_types}; }

ItemCatalog load_catalog_artifact(const RunConfig& cfg) {
    require_file(catalog_path(cfg), "run `patrec ingest` first");
    return read_catalog(catalog_path(cfg).string(), schema_of(cfg));
}

std::vector<Session> load_split(const RunConfig& cfg, const std::string& name) {
    require_file(split_path(cfg, name), "run `patrec ingest` first");
    return load_sessions(split_path(cfg, name).string(), schema_of(cfg), cfg.max_len).sessions;
}

std::vector<PatternStore> load_stores(const RunConfig& cfg) {
    std::vector<PatternStore> stores;
    for (const auto& type : cfg.attribute_types) {
        require_file(pattern_path(cfg, type), "run `patrec mine` first");
        stores.push_back(PatternStore::load(pattern_path(cfg, type).string(), type));
    }
    return stores;
}

ModelParams load_model(const RunConfig& cfg, const ItemCatalog& catalog) {
    require_file(checkpoint_path(cfg), "run `patrec train` first");
    return load_checkpoint(checkpoint_path(cfg).string(), cfg.model, catalog);
}

// --- subcommands ------------------------------------------------------------

int do_ingest(const RunConfig& cfg) {
    if (cfg.sessions_path.empty())
        throw ConfigError("config: paths.sessions is required for ingest");
    require_file(cfg.sessions_path, "point paths.sessions at the raw session file");
    LoadResult loaded = load_sessions(cfg.sessions_path, schema_of(cfg), cfg.max_len);
    std::vector<Session> filtered = core_filter(loaded.sessions, cfg.min_days);
    DatasetSplit split = split_by_day(filtered, cfg.valid_days, cfg.test_days);
    ItemCatalog catalog = restrict_catalog(split.train, loaded.catalog);

    fs::create_directories(cfg.splits_dir);
    write_catalog(catalog_path(cfg).string(), catalog);
    write_sessions(split_path(cfg, "train").string(), split.train, catalog);
    write_sessions(split_path(cfg, "valid").string(), split.valid, catalog);
    write_sessions(split_path(cfg, "test").string(), split.test, catalog);
    std::cout << "ingested " << loaded.sessions.size() << " sessions -> train "
              << split.train.size() << ", valid " << split.valid.size() << ", test "
              << split.test.size() << ", catalog " << catalog.size() << " items\n";
    return 0;
}

int do_mine(const RunConfig& cfg) {
    ItemCatalog catalog = load_catalog_artifact(cfg);
    std::vector<Session> train = load_split(cfg, "train");

    MinerConfig miner = cfg.miner;
    if (miner.min_support <= 0)
        miner.min_support =
            std::max<long long>(10, static_cast<long long>(train.size()) / 1000);

    std::vector<std::vector<LabeledGraph>> graphs(cfg.attribute_types.size());
    for (const Session& s : train) {
        MultiplexSessionGraph mx = to_multiplex(s, catalog);
        for (size_t m = 0; m < cfg.attribute_types.size(); ++m)
            graphs[m].push_back(to_labeled_graph(mx.layers[m], cfg.attribute_types[m]));
    }
    fs::create_directories(cfg.patterns_dir);
    for (size_t m = 0; m < cfg.attribute_types.size(); ++m) {
        auto patterns = filter_loose(mine_frequent(graphs[m], miner));
        write_patterns(pattern_path(cfg, cfg.attribute_types[m]).string(), patterns);
        std::cout << cfg.attribute_types[m] << ": " << patterns.size()
                  << " patterns (min support " << miner.min_support << ")\n";
    }
    return 0;
}

int do_index(const RunConfig& cfg) {
    auto stores = load_stores(cfg);
    for (const auto& store : stores) {
        std::set<std::string> labels;
        for (size_t i = 0; i < store.size(); ++i)
            labels.insert(store.label_set(static_cast<int>(i)).begin(),
                          store.label_set(static_cast<int>(i)).end());
        std::cout << store.attribute_type() << ": " << store.size() << " patterns over "
                  << labels.size() << " labels\n";
    }
    return 0;
}

int do_train(const RunConfig& cfg) {
    ItemCatalog catalog = load_catalog_artifact(cfg);
    DatasetSplit split;
    split.train = load_split(cfg, "train");
    split.valid = load_split(cfg, "valid");
    auto stores = load_stores(cfg);

    TrainResult result = train(split, catalog, stores, cfg.model, cfg.train);

    fs::create_directories(cfg.checkpoints_dir);
    save_checkpoint(checkpoint_path(cfg).string(), result.params);
    std::ofstream log(metrics_path(cfg));
    if (!log) throw InputError("cannot write " + metrics_path(cfg).string());
    for (const EpochLog& e : result.log) log << to_json_line(e) << '\n';
    std::cout << "trained " << result.log.size() << " epochs; kept epoch "
              << result.best_epoch << " (valid MRR@10 "
              << result.log[result.best_epoch - 1].valid_mrr10 << ")\n";
    return 0;
}

int do_eval(const RunConfig& cfg) {
    ItemCatalog catalog = load_catalog_artifact(cfg);
    std::vector<Session> test = load_split(cfg, "test");
    auto stores = load_stores(cfg);
    ModelParams params = load_model(cfg, catalog);
    SessionScorer scorer(params, catalog, stores, cfg.retrieval);

    std::vector<MetricReport> reports = evaluate_next_item(test, scorer, cfg.eval_ks);
    for (auto& r : evaluate_attributes(test, scorer, cfg.eval_ks)) reports.push_back(r);
    for (auto& r : evaluate_periods(test, scorer, cfg.horizons)) reports.push_back(r);

    fs::create_directories(cfg.reports_dir);
    std::ofstream out(reports_path(cfg));
    if (!out) throw InputError("cannot write " + reports_path(cfg).string());
    for (const auto& r : reports) out << to_json_line(r) << '\n';
    std::cout << "wrote " << reports.size() << " report lines to "
              << reports_path(cfg).string() << '\n';
    return 0;
}

int do_recommend(const RunConfig& cfg, const std::string& input, size_t k) {
    ItemCatalog catalog = load_catalog_artifact(cfg);
    auto stores = load_stores(cfg);
    ModelParams params = load_model(cfg, catalog);

    std::string line;
    if (!input.empty()) {
        require_file(input, "pass --input a file holding one session line");
        std::ifstream in(input);
        std::getline(in, line);
    } else if (!std::getline(std::cin, line)) {
        throw InputError("recommend: expected one session line on standard input");
    }
    ordered_json j = ordered_json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        throw ParseError("recommend: the session line is not a JSON object");
    Session session;
    session.id = j.value("id", std::string{"query"});
    session.day = j.value("day", 0);
    if (!j.contains("items") || !j.at("items").is_array() || j.at("items").empty())
        throw SchemaError("recommend: the session line needs a non-empty items array");
    for (const auto& item : j.at("items")) session.items.push_back(item.get<std::string>());

    SessionScorer scorer(params, catalog, stores, cfg.retrieval);
    std::vector<double> scores = scorer(session);
    std::vector<std::string> top = rank_items(scores, catalog, k);
    std::cout << std::fixed << std::setprecision(6);
    for (size_t i = 0; i < top.size(); ++i)
        std::cout << (i + 1) << '\t' << top[i] << '\t'
                  << scores[catalog.item_index(top[i])] << '\n';
    return 0;
}

int do_stats(const RunConfig& cfg) {
    std::vector<Session> train = load_split(cfg, "train");
    auto stores = load_stores(cfg);
    std::vector<std::vector<AttributePattern>> pattern_sets;
    for (const auto& store : stores) pattern_sets.push_back(store.patterns());

    DensityStats d = density_stats(train, pattern_sets);
    ordered_json j;
    j["session_mean"] = d.session_mean;
    j["global"] = d.global;
    j["shortcut_mean"] = d.shortcut_mean;
    j["pattern_mean"] = d.pattern_mean;
    fs::create_directories(cfg.reports_dir);
    std::ofstream out(stats_path(cfg));
    if (!out) throw InputError("cannot write " + stats_path(cfg).string());
    out << j.dump() << '\n';
    std::cout << "density: session " << d.session_mean << ", global " << d.global
              << ", shortcut " << d.shortcut_mean << ", pattern " << d.pattern_mean << '\n';
    return 0;
}

std::string format_cell(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << v;
    return os.str();
}

int do_report(const RunConfig& cfg) {
    if (!fs::exists(reports_path(cfg))) {
        std::cout << "no reports found in " << cfg.reports_dir.string() << '\n';
        return 0;
    }
    std::vector<MetricReport> reports;
    std::ifstream in(reports_path(cfg));
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) reports.push_back(report_from_json(line));
    if (reports.empty()) {
        std::cout << "no reports found in " << cfg.reports_dir.string() << '\n';
        return 0;
    }

    // Rows keyed by protocol (period rows per horizon), columns metric@K.
    std::vector<std::pair<std::string, std::vector<const MetricReport*>>> rows;
    auto row_label = [](const MetricReport& r) {
        return r.horizon ? r.protocol + "(n=" + std::to_string(*r.horizon) + ")" : r.protocol;
    };
    for (const auto& r : reports) {
        std::string label = row_label(r);
        auto it = std::find_if(rows.begin(), rows.end(),
                               [&](const auto& row) { return row.first == label; });
        if (it == rows.end()) {
            rows.push_back({label, {&r}});
        } else {
            it->second.push_back(&r);
        }
    }
    std::set<size_t> ks;
    for (const auto& r : reports) ks.insert(r.k);

    std::ostringstream table;
    size_t label_width = 8;
    for (const auto& [label, group] : rows) label_width = std::max(label_width, label.size());
    table << std::left << std::setw(static_cast<int>(label_width) + 2) << "protocol";
    const char* metrics[] = {"hits", "ndcg", "mrr"};
    for (size_t k : ks)
        for (const char* m : metrics)
            table << std::right << std::setw(12) << (std::string(m) + "@" + std::to_string(k));
    table << '\n';
    for (const auto& [label, group] : rows) {
        table << std::left << std::setw(static_cast<int>(label_width) + 2) << label;
        for (size_t k : ks) {
            const MetricReport* cell = nullptr;
            for (const MetricReport* r : group)
                if (r->k == k) cell = r;
            for (int m = 0; m < 3; ++m) {
                if (!cell) {
                    table << std::right << std::setw(12) << "-";
                    continue;
                }
                double v = m == 0 ? cell->hits : (m == 1 ? cell->ndcg : cell->mrr);
                table << std::right << std::setw(12) << format_cell(v);
            }
        }
        table << '\n';
    }
    std::cout << table.str();
    std::ofstream out(summary_path(cfg));
    if (!out) throw InputError("cannot write " + summary_path(cfg).string());
    out << table.str();
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"frequent-pattern session recommender"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand

    std::string config_path;
    app.add_option("-c,--config", config_path, "run configuration (JSON)")->required();
    std::optional<uint64_t> seed_flag;
    app.add_option("--seed", seed_flag, "override the config seed");
    std::optional<size_t> epochs_flag;
    app.add_option("--epochs", epochs_flag, "override train.epochs");
    std::optional<long long> support_flag;
    app.add_option("--min-support", support_flag, "override miner.min_support");

    app.add_subcommand("ingest", "load, filter and split the raw sessions");
    app.add_subcommand("mine", "mine frequent attribute patterns from the training split");
    app.add_subcommand("index", "validate the pattern stores");
    app.add_subcommand("train", "train the recommender");
    app.add_subcommand("eval", "run the three evaluation protocols on the test split");
    auto* recommend =
        app.add_subcommand("recommend", "score one session line and print the top items");
    std::string input_path;
    recommend->add_option("--input", input_path, "file holding one session line (default stdin)");
    std::optional<size_t> k_flag;
    recommend->add_option("-k,--top", k_flag, "how many items to print");
    app.add_subcommand("stats", "write the graph density report");
    app.add_subcommand("report", "render collected metric reports as a table");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;  // bad flags are configuration errors
    }

    try {
        RunConfig cfg = load_run_config(config_path);
        if (seed_flag) {
            cfg.seed = *seed_flag;
            cfg.train.seed = *seed_flag;
        }
        if (epochs_flag) cfg.train.epochs = *epochs_flag;
        if (support_flag) cfg.miner.min_support = *support_flag;
        cfg.train.validate();

        if (app.got_subcommand("ingest")) return do_ingest(cfg);
        if (app.got_subcommand("mine")) return do_mine(cfg);
        if (app.got_subcommand("index")) return do_index(cfg);
        if (app.got_subcommand("train")) return do_train(cfg);
        if (app.got_subcommand("eval")) return do_eval(cfg);
        if (app.got_subcommand("recommend"))
            return do_recommend(cfg, input_path, k_flag.value_or(cfg.recommend_k));
        if (app.got_subcommand("stats")) return do_stats(cfg);
        if (app.got_subcommand("report")) return do_report(cfg);
        throw ConfigError("unknown subcommand");
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const DependencyError& e) {
        std::cerr << "dependency error: " << e.what() << '\n';
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 4;
    }
}

}  // namespace patrec::cli
