#pragma once

#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "patrec/miner.hpp"
#include "patrec/sessions.hpp"

namespace patrec {

struct RetrievalConfig {
    int max_patterns = 12;  // cap on memory slots per attribute type
};

// Immutable pattern collection for one attribute type with an inverted
// label -> pattern-indices index so candidate generation touches only
// patterns sharing at least one label with the query session.
class PatternStore {
public:
    PatternStore() = default;
    PatternStore(std::string attribute_type, std::vector<AttributePattern> patterns);

    static PatternStore load(const std::string& path, const std::string& attribute_type);

    const std::string& attribute_type() const { return attribute_type_; }
    const std::vector<AttributePattern>& patterns() const { return patterns_; }
    size_t size() const { return patterns_.size(); }
    const std::set<std::string>& label_set(int idx) const { return label_sets_[idx]; }
    // Ascending pattern indices containing the label; nullptr when absent.
    const std::vector<int>* candidates(const std::string& label) const;

private:
    std::string attribute_type_;
    std::vector<AttributePattern> patterns_;
    std::vector<std::set<std::string>> label_sets_;
    std::unordered_map<std::string, std::vector<int>> inverted_;
};

// |a∩b| / |a∪b|; 0 when both sets are empty.
double jaccard(const std::set<std::string>& a, const std::set<std::string>& b);

// Indices (into store.patterns()) of the up-to-I patterns with the largest
// Jaccard similarity between session node labels and pattern node labels.
// Zero-score patterns are excluded; ties break by (support desc, canonical
// code asc). Score comparisons are exact (integer cross-multiplication).
std::vector<int> retrieve_indices(const LabeledGraph& session_layer, const PatternStore& store,
                                  const RetrievalConfig& config);

std::vector<AttributePattern> retrieve(const LabeledGraph& session_layer,
                                       const PatternStore& store, const RetrievalConfig& config);

// Pattern memory for one session: layer m of the multiplex graph, reduced to
// its undirected label graph, retrieves from stores[m]. Requires one store per
// catalog attribute type (in schema order); throws ConfigError otherwise.
std::vector<std::vector<AttributePattern>> retrieve_memory(const Session& session,
                                                           const ItemCatalog& catalog,
                                                           const std::vector<PatternStore>& stores,
                                                           const RetrievalConfig& config);

}  // namespace patrec
