#pragma once

#include <set>
#include <string>
#include <utility>
#include <vector>

namespace patrec {

// Undirected simple graph with string-labeled nodes. This is the form the
// miner, the pattern store and pattern retrieval operate on; session
// transition graphs are converted into it by stripping direction,
// multiplicity and self-loops.
struct LabeledGraph {
    std::vector<std::string> labels;         // node id -> label, ids dense 0..n-1
    std::vector<std::pair<int, int>> edges;  // undirected, stored with first < second, no duplicates
    std::string attribute_type;

    size_t node_count() const { return labels.size(); }
    size_t edge_count() const { return edges.size(); }

    // Inserts edge {u, v} unless it is a self-loop or already present.
    void add_edge(int u, int v) {
        if (u == v) return;
        if (u > v) std::swap(u, v);
        for (const auto& e : edges) {
            if (e.first == u && e.second == v) return;
        }
        edges.emplace_back(u, v);
    }

    bool has_edge(int u, int v) const {
        if (u > v) std::swap(u, v);
        for (const auto& e : edges) {
            if (e.first == u && e.second == v) return true;
        }
        return false;
    }

    std::set<std::string> label_set() const {
        return {labels.begin(), labels.end()};
    }

    std::vector<std::vector<int>> adjacency() const {
        std::vector<std::vector<int>> adj(labels.size());
        for (const auto& [u, v] : edges) {
            adj[u].push_back(v);
            adj[v].push_back(u);
        }
        return adj;
    }
};

}  // namespace patrec
