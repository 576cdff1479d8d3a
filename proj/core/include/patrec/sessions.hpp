#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "patrec/labeled_graph.hpp"

namespace patrec {

// Ordered list of attribute type names; position m is the type index used
// everywhere downstream (embeddings, pattern stores, gates).
struct AttributeSchema {
    std::vector<std::string> types;

    size_t size() const { return types.size(); }
    int type_index(const std::string& name) const {
        for (size_t m = 0; m < types.size(); ++m)
            if (types[m] == name) return static_cast<int>(m);
        return -1;
    }
};

// Item universe with per-item attribute values. Items and attribute values
// are indexed in first-appearance order, so indices are stable for a given
// input file and double as embedding-table rows.
class ItemCatalog {
public:
    ItemCatalog() = default;
    explicit ItemCatalog(AttributeSchema schema) : schema_(std::move(schema)) {}

    // First registration of an item wins; later conflicting values are ignored.
    int add_item(const std::string& item, const std::vector<std::string>& values);

    bool contains(const std::string& item) const { return index_.count(item) > 0; }
    int item_index(const std::string& item) const;
    const std::string& item_id(int idx) const { return items_[idx]; }
    const std::vector<std::string>& item_values(int idx) const { return values_[idx]; }
    const std::string& value_of(int item_idx, int type_idx) const { return values_[item_idx][type_idx]; }

    size_t size() const { return items_.size(); }
    size_t num_attributes() const { return schema_.size(); }
    const AttributeSchema& schema() const { return schema_; }

    int value_index(int type_idx, const std::string& value) const;
    size_t vocab_size(int type_idx) const { return vocab_[type_idx].size(); }
    const std::vector<std::string>& vocabulary(int type_idx) const { return vocab_[type_idx]; }

private:
    AttributeSchema schema_;
    std::vector<std::string> items_;
    std::vector<std::vector<std::string>> values_;  // per item, one value per schema type
    std::unordered_map<std::string, int> index_;
    std::vector<std::vector<std::string>> vocab_;   // per type, first-appearance order
    std::vector<std::unordered_map<std::string, int>> vocab_index_;
};

struct Session {
    std::string id;
    int day = 0;
    std::vector<std::string> items;  // ordered, repeats allowed

    size_t length() const { return items.size(); }
};

enum class WeightMode { none, indegree, outdegree };

// Directed transition graph of one session (or of one attribute projection
// of it). Edge multiplicity is kept as a count; weights are derived lazily
// per WeightMode. `last_pos` is the latest sequence index i at which the
// transition (seq[i] -> seq[i+1]) produced the edge, used for recency
// ranking when neighbor lists are truncated.
struct SessionGraph {
    struct Edge {
        int src = 0;
        int dst = 0;
        int count = 0;
        int last_pos = 0;
    };

    std::vector<std::string> nodes;  // unique labels, first-occurrence order
    std::vector<Edge> edges;         // first-occurrence order of (src, dst)
    WeightMode weight_mode = WeightMode::none;

    int node_index(const std::string& label) const {
        auto it = index_.find(label);
        return it == index_.end() ? -1 : it->second;
    }
    int add_node(const std::string& label);
    void add_transition(int src, int dst, int pos);
    double edge_weight(size_t edge_idx) const;

private:
    std::unordered_map<std::string, int> index_;
};

// Item transition graph plus one attribute transition graph per schema type,
// anchored back to items: anchors[m][base_node] is the layer-m node holding
// that item's m-th attribute value.
struct MultiplexSessionGraph {
    SessionGraph base;
    std::vector<SessionGraph> layers;
    std::vector<std::vector<int>> anchors;
};

struct DatasetSplit {
    std::vector<Session> train;
    std::vector<Session> valid;
    std::vector<Session> test;
    int first_valid_day = 0;  // day boundaries actually used
    int first_test_day = 0;
};

struct LoadResult {
    ItemCatalog catalog;
    std::vector<Session> sessions;
};

// Reads the session line format: one JSON object per line,
//   {"id": str, "day": int, "items": [str], "attrs": {"<type>": [str]}}
// where every attrs list has the same length as items. Sessions longer than
// max_len are truncated to their most recent max_len actions.
LoadResult load_sessions(const std::string& path, const AttributeSchema& schema,
                         size_t max_len = 50);

// Removes items seen on fewer than min_days distinct days, drops sessions
// that shrink below two actions, and repeats until a fixpoint.
std::vector<Session> core_filter(std::vector<Session> sessions, int min_days);

// Last test_days days become the test split, the valid_days before them the
// validation split, the rest training. Valid/test sessions containing items
// absent from training are dropped. Throws ConfigError when training ends up
// empty.
DatasetSplit split_by_day(const std::vector<Session>& sessions, int valid_days, int test_days);

SessionGraph to_session_graph(const std::vector<std::string>& sequence, WeightMode mode);
SessionGraph to_session_graph(const Session& session, WeightMode mode = WeightMode::none);

// Projects the item sequence through each attribute map and builds one
// transition graph per attribute type. Throws InputError when an item is
// missing from the catalog.
MultiplexSessionGraph to_multiplex(const Session& session, const ItemCatalog& catalog,
                                   WeightMode mode = WeightMode::none);

// Undirected simple view of a transition graph (drops direction,
// multiplicity and self-loops) for mining and retrieval.
LabeledGraph to_labeled_graph(const SessionGraph& graph, const std::string& attribute_type);

// Catalog restricted to items occurring in the given sessions (attribute
// values copied from `full`), in first-appearance order.
ItemCatalog restrict_catalog(const std::vector<Session>& sessions, const ItemCatalog& full);

// JSONL persistence for splits and catalogs.
void write_sessions(const std::string& path, const std::vector<Session>& sessions,
                    const ItemCatalog& catalog);
void write_catalog(const std::string& path, const ItemCatalog& catalog);
ItemCatalog read_catalog(const std::string& path, const AttributeSchema& schema);

}  // namespace patrec
