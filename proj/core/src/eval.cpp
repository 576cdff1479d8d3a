#include "patrec/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "patrec/errors.hpp"

namespace patrec {

using ordered_json = nlohmann::ordered_json;

std::optional<size_t> rank_of(const std::string& target,
                              const std::vector<std::string>& ranked) {
    for (size_t i = 0; i < ranked.size(); ++i)
        if (ranked[i] == target) return i + 1;
    return std::nullopt;
}

MetricValues metrics_at_k(const std::vector<std::optional<size_t>>& ranks, size_t k) {
    if (ranks.empty()) throw InputError("metrics_at_k: no ranks to aggregate");
    if (k == 0) throw InputError("metrics_at_k: K must be at least 1");
    MetricValues out;
    for (const auto& r : ranks) {
        if (!r || *r > k) continue;
        double rank = static_cast<double>(*r);
        out.hits += 1.0;
        out.mrr += 1.0 / rank;
        out.ndcg += 1.0 / std::log2(1.0 + rank);
    }
    double n = static_cast<double>(ranks.size());
    out.hits /= n;
    out.mrr /= n;
    out.ndcg /= n;
    return out;
}

std::vector<std::string> rank_items(const std::vector<double>& scores,
                                    const ItemCatalog& catalog, size_t k) {
    if (scores.size() != catalog.size())
        throw InputError("rank_items: scores must cover the whole catalog");
    std::vector<int> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return catalog.item_id(a) < catalog.item_id(b);
    });
    if (order.size() > k) order.resize(k);
    std::vector<std::string> ids;
    ids.reserve(order.size());
    for (int idx : order) ids.push_back(catalog.item_id(idx));
    return ids;
}

size_t rank_by_score(const std::vector<double>& scores, int target,
                     const ItemCatalog& catalog) {
    if (target < 0 || static_cast<size_t>(target) >= scores.size())
        throw InputError("rank_by_score: target index out of range");
    if (scores.size() != catalog.size())
        throw InputError("rank_by_score: scores must cover the whole catalog");
    double st = scores[target];
    const std::string& tid = catalog.item_id(target);
    size_t rank = 1;
    for (size_t v = 0; v < scores.size(); ++v) {
        if (static_cast<int>(v) == target) continue;
        if (scores[v] > st || (scores[v] == st && catalog.item_id(v) < tid)) ++rank;
    }
    return rank;
}

std::optional<size_t> attribute_rank(const std::vector<std::string>& ranked_items,
                                     const ItemCatalog& catalog, int type,
                                     const std::string& target_value) {
    std::vector<std::string> values;
    for (const auto& id : ranked_items) {
        int idx = catalog.item_index(id);
        if (idx < 0) throw InputError("attribute_rank: unknown item " + id);
        const std::string& value = catalog.value_of(idx, type);
        if (std::find(values.begin(), values.end(), value) == values.end())
            values.push_back(value);
    }
    return rank_of(target_value, values);
}

std::optional<PeriodResult> period_recommendation(const std::vector<std::string>& top10,
                                                  const std::vector<std::string>& future) {
    if (future.empty()) return std::nullopt;
    std::set<std::string> unique_future(future.begin(), future.end());
    PeriodResult out;
    double hits = 0.0, dcg = 0.0;
    for (size_t j = 0; j < top10.size(); ++j) {
        if (!unique_future.count(top10[j])) continue;
        hits += 1.0;
        dcg += 1.0 / std::log2(2.0 + static_cast<double>(j));  // position j+1
    }
    double idcg = 0.0;
    size_t ideal = std::min(unique_future.size(), size_t{10});
    for (size_t j = 1; j <= ideal; ++j) idcg += 1.0 / std::log2(1.0 + static_cast<double>(j));
    out.recall = hits / static_cast<double>(unique_future.size());
    out.ndcg = idcg > 0.0 ? dcg / idcg : 0.0;
    return out;
}

namespace {

// |E|/|V| of the deduplicated undirected projection of an item sequence.
double transition_density(const std::vector<std::string>& items) {
    LabeledGraph g = to_labeled_graph(to_session_graph(items, WeightMode::none), "");
    if (g.node_count() == 0) return 0.0;
    return static_cast<double>(g.edge_count()) / static_cast<double>(g.node_count());
}

}  // namespace

DensityStats density_stats(const std::vector<Session>& sessions,
                           const std::vector<std::vector<AttributePattern>>& pattern_sets) {
    if (sessions.empty()) throw InputError("density_stats: empty corpus");
    DensityStats out;

    std::set<std::pair<std::string, std::string>> global_edges;
    std::unordered_set<std::string> global_nodes;
    for (const Session& s : sessions) {
        out.session_mean += transition_density(s.items);

        std::set<std::string> unique(s.items.begin(), s.items.end());
        double u = static_cast<double>(unique.size());
        out.shortcut_mean += u > 0.0 ? (u * (u - 1.0) / 2.0) / u : 0.0;

        for (const auto& it : s.items) global_nodes.insert(it);
        for (size_t i = 0; i + 1 < s.items.size(); ++i) {
            const std::string &a = s.items[i], &b = s.items[i + 1];
            if (a == b) continue;
            global_edges.insert(a < b ? std::make_pair(a, b) : std::make_pair(b, a));
        }
    }
    double n = static_cast<double>(sessions.size());
    out.session_mean /= n;
    out.shortcut_mean /= n;
    out.global = global_nodes.empty()
                     ? 0.0
                     : static_cast<double>(global_edges.size()) /
                           static_cast<double>(global_nodes.size());

    size_t pattern_count = 0;
    double pattern_sum = 0.0;
    for (const auto& set : pattern_sets)
        for (const auto& p : set) {
            ++pattern_count;
            pattern_sum += static_cast<double>(p.graph.edge_count()) /
                           static_cast<double>(p.graph.node_count());
        }
    out.pattern_mean = pattern_count > 0 ? pattern_sum / static_cast<double>(pattern_count) : 0.0;
    return out;
}

SessionScorer::SessionScorer(const ModelParams& params, const ItemCatalog& catalog,
                             std::vector<PatternStore> stores, RetrievalConfig retrieval)
    : params_(&params),
      catalog_(&catalog),
      stores_(std::move(stores)),
      retrieval_(retrieval) {
    if (stores_.size() != params.config.num_attributes())
        throw ConfigError("SessionScorer: need one pattern store per attribute type");
}

std::vector<double> SessionScorer::operator()(const Session& prefix) const {
    Session view = prefix;
    size_t max_len = params_->config.max_len;
    if (view.items.size() > max_len)  // match the encoder's truncation window
        view.items.assign(prefix.items.end() - max_len, prefix.items.end());
    auto memory = retrieve_memory(view, *catalog_, stores_, retrieval_);
    Tape tape;
    ParamVars pv = bind_params(tape, *params_, false);
    ForwardTrace trace = forward(tape, view, *catalog_, memory, pv, params_->config, false);
    return trace.scores.value().values;
}

std::string to_json_line(const MetricReport& report) {
    ordered_json j;
    j["protocol"] = report.protocol;
    j["K"] = report.k;
    j["hits"] = report.hits;
    j["ndcg"] = report.ndcg;
    j["mrr"] = report.mrr;
    if (report.horizon) j["n"] = *report.horizon;
    return j.dump();
}

MetricReport report_from_json(const std::string& line) {
    ordered_json j = ordered_json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw ParseError("report line is not a JSON object");
    MetricReport out;
    try {
        out.protocol = j.at("protocol").get<std::string>();
        out.k = j.at("K").get<size_t>();
        out.hits = j.at("hits").get<double>();
        out.ndcg = j.at("ndcg").get<double>();
        out.mrr = j.at("mrr").get<double>();
        if (j.contains("n")) out.horizon = j.at("n").get<size_t>();
    } catch (const ordered_json::exception& e) {
        throw SchemaError(std::string("report line: ") + e.what());
    }
    return out;
}

namespace {

// Every (prefix, target) pair of every session, in corpus order.
struct NextItemExample {
    const Session* session;
    size_t prefix_len;
};

std::vector<NextItemExample> next_item_examples(const std::vector<Session>& sessions) {
    std::vector<NextItemExample> out;
    for (const Session& s : sessions)
        for (size_t len = 1; len < s.items.size(); ++len) out.push_back({&s, len});
    return out;
}

Session prefix_of(const NextItemExample& ex) {
    return Session{ex.session->id, ex.session->day,
                   {ex.session->items.begin(), ex.session->items.begin() + ex.prefix_len}};
}

}  // namespace

std::vector<MetricReport> evaluate_next_item(const std::vector<Session>& sessions,
                                             const SessionScorer& scorer,
                                             const std::vector<size_t>& ks) {
    auto examples = next_item_examples(sessions);
    if (examples.empty() || ks.empty()) return {};
    const ItemCatalog& catalog = scorer.catalog();
    std::vector<std::optional<size_t>> ranks;
    ranks.reserve(examples.size());
    for (const auto& ex : examples) {
        int target = catalog.item_index(ex.session->items[ex.prefix_len]);
        if (target < 0) throw InputError("evaluate_next_item: unknown target item");
        ranks.push_back(rank_by_score(scorer(prefix_of(ex)), target, catalog));
    }
    std::vector<MetricReport> reports;
    for (size_t k : ks) {
        MetricValues m = metrics_at_k(ranks, k);
        reports.push_back({"next_item", k, m.hits, m.ndcg, m.mrr, std::nullopt, ranks.size()});
    }
    return reports;
}

std::vector<MetricReport> evaluate_attributes(const std::vector<Session>& sessions,
                                              const SessionScorer& scorer,
                                              const std::vector<size_t>& ks) {
    const ItemCatalog& catalog = scorer.catalog();
    size_t types = catalog.num_attributes();
    auto examples = next_item_examples(sessions);
    if (types == 0 || examples.empty() || ks.empty()) return {};
    size_t max_k = *std::max_element(ks.begin(), ks.end());

    // ranks[k index] pooled over examples × attribute types
    std::vector<std::vector<std::optional<size_t>>> ranks(ks.size());
    for (const auto& ex : examples) {
        int target = catalog.item_index(ex.session->items[ex.prefix_len]);
        if (target < 0) throw InputError("evaluate_attributes: unknown target item");
        std::vector<double> scores = scorer(prefix_of(ex));
        std::vector<std::string> ranked = rank_items(scores, catalog, max_k);
        for (size_t ki = 0; ki < ks.size(); ++ki) {
            std::vector<std::string> top(ranked.begin(),
                                         ranked.begin() + std::min(ks[ki], ranked.size()));
            for (size_t t = 0; t < types; ++t)
                ranks[ki].push_back(attribute_rank(top, catalog, static_cast<int>(t),
                                                   catalog.value_of(target, static_cast<int>(t))));
        }
    }
    std::vector<MetricReport> reports;
    for (size_t ki = 0; ki < ks.size(); ++ki) {
        MetricValues m = metrics_at_k(ranks[ki], ks[ki]);
        reports.push_back(
            {"attribute", ks[ki], m.hits, m.ndcg, m.mrr, std::nullopt, ranks[ki].size()});
    }
    return reports;
}

std::vector<MetricReport> evaluate_periods(const std::vector<Session>& sessions,
                                           const SessionScorer& scorer,
                                           const std::vector<size_t>& horizons) {
    const ItemCatalog& catalog = scorer.catalog();
    std::vector<MetricReport> reports;
    for (size_t n : horizons) {
        double recall = 0.0, ndcg = 0.0;
        size_t count = 0;
        for (const Session& s : sessions) {
            if (s.items.size() < n + 1) continue;  // need a non-empty prefix
            Session prefix{s.id, s.day, {s.items.begin(), s.items.end() - n}};
            std::vector<std::string> future(s.items.end() - n, s.items.end());
            auto result =
                period_recommendation(rank_items(scorer(prefix), catalog, 10), future);
            if (!result) continue;
            recall += result->recall;
            ndcg += result->ndcg;
            ++count;
        }
        if (count == 0) continue;
        reports.push_back({"period", 10, recall / static_cast<double>(count),
                           ndcg / static_cast<double>(count), 0.0, n, count});
    }
    return reports;
}

}  // namespace patrec
