#pragma once

#include <string>
#include <vector>

#include "patrec/labeled_graph.hpp"

namespace patrec {

// A small frequent labeled undirected graph over attribute values.
// Isomorphic patterns share one canonical (minimum DFS) code, so the code
// doubles as the pattern's identity.
struct AttributePattern {
    LabeledGraph graph;
    std::string canonical_code;
    long long support = 0;
    std::string attribute_type;
};

struct MinerConfig {
    int max_nodes = 4;        // hard cap, must be <= 4
    long long min_support = 1;
    bool require_cycle = true;
    int workers = 1;          // parallelism across root edges
};

// True iff some connected component has at least as many edges as nodes,
// i.e. the graph contains a cycle (triangles are the 3-node case).
bool contains_cycle(const LabeledGraph& graph);

// Minimum DFS code of a connected labeled graph, encoded as
// "i,j,<label_i>,<label_j>;..." with ',', ';' and '\' escaped inside labels.
// Invariant under node relabeling: isomorphic graphs share one code.
std::string canonical_code(const LabeledGraph& graph);

// Frequent subgraph mining restricted to patterns of 3..max_nodes nodes.
// Support counts distinct source graphs (not embeddings). Patterns are grown
// by rightmost-path extension with minimality pruning, so each isomorphism
// class is visited once; acyclic intermediates are still grown because
// cyclic patterns extend them. Output sorted by (support desc, code asc).
std::vector<AttributePattern> mine_frequent(const std::vector<LabeledGraph>& graphs,
                                            const MinerConfig& config);

// Label-preserving injective node map under which every edge of `small`
// maps to an edge of `big` (non-induced subgraph isomorphism).
bool is_subgraph(const LabeledGraph& small, const LabeledGraph& big);
bool is_subgraph(const AttributePattern& small, const AttributePattern& big);

// Keeps exactly the maximal patterns: a pattern is removed iff it is a
// proper subgraph of another input pattern. Input order preserved.
std::vector<AttributePattern> filter_loose(std::vector<AttributePattern> patterns);

// Pattern store file, one pattern per line:
//   {"code": str, "support": int, "nodes": [label], "edges": [[i,j]]}
void write_patterns(const std::string& path, const std::vector<AttributePattern>& patterns);
std::vector<AttributePattern> read_patterns(const std::string& path,
                                            const std::string& attribute_type);

}  // namespace patrec
