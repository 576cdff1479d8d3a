#pragma once

#include <optional>
#include <string>
#include <vector>

#include "patrec/model.hpp"
#include "patrec/retrieval.hpp"
#include "patrec/sessions.hpp"

namespace patrec {

// --- ranking primitives ----------------------------------------------------

// 1-based position of target in a deduplicated ranked list; nullopt if absent.
std::optional<size_t> rank_of(const std::string& target,
                              const std::vector<std::string>& ranked);

struct MetricValues {
    double hits = 0.0;
    double ndcg = 0.0;
    double mrr = 0.0;
};

// hits = mean[rank ≤ K]; mrr = mean[1/rank if rank ≤ K else 0];
// ndcg = mean[1/log2(1+rank) if rank ≤ K else 0]. Absent ranks count 0.
// Throws InputError on empty input or K = 0.
MetricValues metrics_at_k(const std::vector<std::optional<size_t>>& ranks, size_t k);

// Item ids ordered by (score descending, id ascending), truncated to k.
// scores are indexed by catalog item index and must cover the whole catalog.
std::vector<std::string> rank_items(const std::vector<double>& scores,
                                    const ItemCatalog& catalog, size_t k);

// 1-based rank of catalog index `target` under the same tie rule:
// 1 + #{better score} + #{equal score with smaller id}.
size_t rank_by_score(const std::vector<double>& scores, int target,
                     const ItemCatalog& catalog);

// Map ranked items to their `type` attribute values, deduplicate keeping the
// first occurrence, and rank target_value in that list.
std::optional<size_t> attribute_rank(const std::vector<std::string>& ranked_items,
                                     const ItemCatalog& catalog, int type,
                                     const std::string& target_value);

struct PeriodResult {
    double recall = 0.0;
    double ndcg = 0.0;
};

// Binary-relevance recall and NDCG of the top-10 list against the next
// clicks: recall = |top10 ∩ future| / |unique(future)|, DCG sums 1/log2(1+j)
// over hit positions j, IDCG over the first min(|unique(future)|, 10)
// positions. Empty future -> nullopt (the example is skipped).
std::optional<PeriodResult> period_recommendation(const std::vector<std::string>& top10,
                                                  const std::vector<std::string>& future);

// --- graph density report ---------------------------------------------------

struct DensityStats {
    double session_mean = 0.0;   // mean |E|/|V| of per-session transition graphs
    double global = 0.0;         // union of all session adjacencies
    double shortcut_mean = 0.0;  // complete graph over each session's unique items
    double pattern_mean = 0.0;   // mean over mined patterns; 0 when none given
};

// Densities of deduplicated undirected graphs (self-loops dropped).
// Throws InputError on an empty corpus.
DensityStats density_stats(const std::vector<Session>& sessions,
                           const std::vector<std::vector<AttributePattern>>& pattern_sets);

// --- protocol drivers -------------------------------------------------------

// Scores session prefixes with a trained model; pattern memory is retrieved
// per prefix from the stores (one per attribute type, schema order).
class SessionScorer {
public:
    SessionScorer(const ModelParams& params, const ItemCatalog& catalog,
                  std::vector<PatternStore> stores, RetrievalConfig retrieval);

    // Full-catalog scores for the next item after `prefix`.
    std::vector<double> operator()(const Session& prefix) const;
    const ItemCatalog& catalog() const { return *catalog_; }

private:
    const ModelParams* params_;
    const ItemCatalog* catalog_;
    std::vector<PatternStore> stores_;
    RetrievalConfig retrieval_;
};

struct MetricReport {
    std::string protocol;  // next_item | attribute | period
    size_t k = 0;
    double hits = 0.0;
    double ndcg = 0.0;
    double mrr = 0.0;
    std::optional<size_t> horizon;  // period protocol: number of future clicks
    size_t count = 0;               // evaluated examples (not serialized)
};

// One JSON object per line: {"protocol", "K", "hits", "ndcg", "mrr", "n"?}
// where "n" is the period horizon. Parsing rejects malformed lines.
std::string to_json_line(const MetricReport& report);
MetricReport report_from_json(const std::string& line);

// Next-item prediction over every prefix (length ≥ 1) of every session; one
// report per K. Sessions shorter than 2 items contribute nothing; returns
// empty when no example exists.
std::vector<MetricReport> evaluate_next_item(const std::vector<Session>& sessions,
                                             const SessionScorer& scorer,
                                             const std::vector<size_t>& ks);

// Attribute estimation pooled over attribute types: the top-K items of each
// next-item example are mapped to values and the target item's value is
// ranked. Empty when the catalog has no attributes or no example exists.
std::vector<MetricReport> evaluate_attributes(const std::vector<Session>& sessions,
                                              const SessionScorer& scorer,
                                              const std::vector<size_t>& ks);

// Period recommendation: the top-10 list scored once from the session minus
// its last n clicks is compared against those clicks, n ∈ horizons. Sessions
// with fewer than n+1 items are skipped. The report's mrr field is 0.
std::vector<MetricReport> evaluate_periods(const std::vector<Session>& sessions,
                                           const SessionScorer& scorer,
                                           const std::vector<size_t>& horizons = {3, 5, 10});

}  // namespace patrec
