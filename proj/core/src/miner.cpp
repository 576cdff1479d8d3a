#include "patrec/miner.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <future>
#include <map>
#include <numeric>
#include <set>
#include <tuple>

#include <nlohmann/json.hpp>

#include "patrec/errors.hpp"

namespace patrec {

namespace {

using json = nlohmann::ordered_json;

std::string escape_label(const std::string& label) {
    std::string out;
    out.reserve(label.size());
    for (char c : label) {
        if (c == '\\' || c == ',' || c == ';') out.push_back('\\');
        out.push_back(c);
    }
    return out;
}

// One edge of a DFS code: discovery indices plus endpoint labels. Forward
// edges have j == i's subtree frontier (j > i), backward edges close cycles
// back to the rightmost path (j < i).
struct DfsEdge {
    int i = 0;
    int j = 0;
    std::string li;
    std::string lj;

    bool forward() const { return j > i; }
    bool operator==(const DfsEdge&) const = default;
};

using DfsCode = std::vector<DfsEdge>;

// gSpan edge order: structural (i,j) comparison by the four forward/backward
// cases, then labels lexicographically when structurally equal.
bool edge_less(const DfsEdge& a, const DfsEdge& b) {
    bool fa = a.forward(), fb = b.forward();
    if (fa && fb) {
        if (a.j != b.j) return a.j < b.j;
        if (a.i != b.i) return a.i > b.i;
    } else if (!fa && !fb) {
        if (a.i != b.i) return a.i < b.i;
        if (a.j != b.j) return a.j < b.j;
    } else if (!fa && fb) {
        return a.i < b.j;
    } else {
        return a.j <= b.i;
    }
    if (a.li != b.li) return a.li < b.li;
    return a.lj < b.lj;
}

// Lexicographic order over equal-length codes.
bool code_less(const DfsCode& a, const DfsCode& b) {
    for (size_t t = 0; t < a.size() && t < b.size(); ++t) {
        if (edge_less(a[t], b[t])) return true;
        if (edge_less(b[t], a[t])) return false;
    }
    return a.size() < b.size();
}

std::string code_string(const DfsCode& code) {
    std::string out;
    for (size_t t = 0; t < code.size(); ++t) {
        if (t) out.push_back(';');
        out += std::to_string(code[t].i) + "," + std::to_string(code[t].j) + "," +
               escape_label(code[t].li) + "," + escape_label(code[t].lj);
    }
    return out;
}

// Enumerates every DFS code of a connected graph (all roots, all child
// orders; backward edges are emitted at discovery time in ascending target
// order, as gSpan prescribes) and keeps the minimum. Exponential, but only
// ever called on pattern-sized graphs.
class CodeEnumerator {
public:
    explicit CodeEnumerator(const LabeledGraph& g) : g_(g), adj_(g.adjacency()) {}

    DfsCode minimum() {
        size_t n = g_.node_count();
        order_.assign(n, -1);
        for (int root = 0; root < static_cast<int>(n); ++root) {
            order_[root] = 0;
            discovered_ = {root};
            stack_ = {root};
            current_.clear();
            extend();
            order_[root] = -1;
        }
        if (!has_best_) throw InputError("canonical code requires a connected graph");
        return best_;
    }

private:
    void extend() {
        if (has_best_ && !current_.empty()) {
            // Prune once the current prefix is strictly above the best code;
            // a strictly smaller prefix must keep growing.
            for (size_t t = 0; t < current_.size() && t < best_.size(); ++t) {
                if (edge_less(current_[t], best_[t])) break;
                if (edge_less(best_[t], current_[t])) return;
            }
        }
        if (stack_.empty()) {
            if (discovered_.size() == g_.node_count() &&
                (!has_best_ || code_less(current_, best_))) {
                best_ = current_;
                has_best_ = true;
            }
            return;
        }
        int u = stack_.back();
        std::vector<int> unvisited;
        for (int w : adj_[u])
            if (order_[w] < 0) unvisited.push_back(w);
        if (unvisited.empty()) {
            stack_.pop_back();
            extend();
            stack_.push_back(u);
            return;
        }
        for (int w : unvisited) {
            size_t mark = current_.size();
            order_[w] = static_cast<int>(discovered_.size());
            discovered_.push_back(w);
            current_.push_back(DfsEdge{order_[u], order_[w], g_.labels[u], g_.labels[w]});
            // Backward edges of the new vertex, ascending by discovery index.
            std::vector<int> back;
            for (int x : adj_[w])
                if (x != u && order_[x] >= 0) back.push_back(order_[x]);
            std::sort(back.begin(), back.end());
            for (int oi : back)
                current_.push_back(DfsEdge{order_[w], oi, g_.labels[w], g_.labels[discovered_[oi]]});
            stack_.push_back(w);
            extend();
            stack_.pop_back();
            current_.resize(mark);
            discovered_.pop_back();
            order_[w] = -1;
        }
    }

    const LabeledGraph& g_;
    std::vector<std::vector<int>> adj_;
    std::vector<int> order_;       // node -> discovery index, -1 unvisited
    std::vector<int> discovered_;  // discovery index -> node
    std::vector<int> stack_;
    DfsCode current_;
    DfsCode best_;
    bool has_best_ = false;
};

LabeledGraph graph_from_code(const DfsCode& code, const std::string& attribute_type) {
    LabeledGraph g;
    g.attribute_type = attribute_type;
    int n = 0;
    for (const auto& e : code) n = std::max({n, e.i + 1, e.j + 1});
    g.labels.resize(n);
    for (const auto& e : code) {
        g.labels[e.i] = e.li;
        g.labels[e.j] = e.lj;
        g.add_edge(e.i, e.j);
    }
    return g;
}

bool is_min_code(const DfsCode& code) {
    LabeledGraph g = graph_from_code(code, "");
    return !code_less(CodeEnumerator(g).minimum(), code);
}

// One occurrence of the current DFS code inside a source graph: map from
// code discovery index to concrete node.
struct Embedding {
    int gid = 0;
    std::vector<int> map;
};

struct MiningOutput {
    DfsCode code;
    long long support = 0;
};

class GspanMiner {
public:
    GspanMiner(const std::vector<LabeledGraph>& graphs, const MinerConfig& config)
        : graphs_(graphs), config_(config) {
        adj_.reserve(graphs.size());
        for (const auto& g : graphs) adj_.push_back(g.adjacency());
    }

    // Grows everything reachable from one root edge code.
    std::vector<MiningOutput> mine_root(const DfsCode& root, std::vector<Embedding> embeddings) {
        std::vector<MiningOutput> out;
        grow(root, embeddings, out);
        return out;
    }

private:
    static long long distinct_graphs(const std::vector<Embedding>& embeddings) {
        long long support = 0;
        int last = -1;
        for (const auto& e : embeddings)
            if (e.gid != last) {
                ++support;
                last = e.gid;
            }
        return support;
    }

    void grow(const DfsCode& code, const std::vector<Embedding>& embeddings,
              std::vector<MiningOutput>& out) {
        long long support = distinct_graphs(embeddings);
        if (support < config_.min_support) return;

        int nodes = 0;
        for (const auto& e : code) nodes = std::max({nodes, e.i + 1, e.j + 1});
        if (nodes >= 3) {
            bool keep = true;
            if (config_.require_cycle) keep = contains_cycle(graph_from_code(code, ""));
            if (keep) out.push_back(MiningOutput{code, support});
        }

        // Rightmost path as code indices, rightmost vertex first.
        int rightmost = nodes - 1;
        std::vector<int> path;
        {
            int v = rightmost;
            path.push_back(v);
            while (v != 0) {
                for (const auto& e : code)
                    if (e.forward() && e.j == v) {
                        v = e.i;
                        break;
                    }
                path.push_back(v);
            }
        }
        std::vector<bool> on_path(nodes, false);
        for (int v : path) on_path[v] = true;

        std::map<std::tuple<int, int, std::string, std::string>, std::vector<Embedding>> candidates;
        for (const auto& emb : embeddings) {
            const LabeledGraph& g = graphs_[emb.gid];
            std::set<std::pair<int, int>> used;
            for (const auto& e : code) {
                int a = emb.map[e.i], b = emb.map[e.j];
                used.insert({std::min(a, b), std::max(a, b)});
            }
            std::vector<bool> mapped(g.node_count(), false);
            for (int v : emb.map) mapped[v] = true;

            // Backward: rightmost vertex closing a cycle onto the path.
            int vr = emb.map[rightmost];
            for (int pi : path) {
                if (pi == rightmost) continue;
                int target = emb.map[pi];
                int a = std::min(vr, target), b = std::max(vr, target);
                if (g.has_edge(a, b) && !used.count({a, b}))
                    candidates[{rightmost, pi, g.labels[vr], g.labels[target]}].push_back(emb);
            }
            // Forward: new vertex hanging off any rightmost-path vertex.
            if (nodes < config_.max_nodes) {
                for (int pi : path) {
                    int src = emb.map[pi];
                    for (int w : adj_[emb.gid][src]) {
                        if (mapped[w]) continue;
                        Embedding child = emb;
                        child.map.push_back(w);
                        candidates[{pi, nodes, g.labels[src], g.labels[w]}].push_back(
                            std::move(child));
                    }
                }
            }
        }

        for (auto& [key, child_embeddings] : candidates) {
            DfsCode child = code;
            child.push_back(DfsEdge{std::get<0>(key), std::get<1>(key), std::get<2>(key),
                                    std::get<3>(key)});
            if (!is_min_code(child)) continue;
            grow(child, child_embeddings, out);
        }
    }

    const std::vector<LabeledGraph>& graphs_;
    const MinerConfig& config_;
    std::vector<std::vector<std::vector<int>>> adj_;
};

}  // namespace

bool contains_cycle(const LabeledGraph& graph) {
    size_t n = graph.node_count();
    std::vector<int> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (auto [u, v] : graph.edges) {
        int ru = find(u), rv = find(v);
        if (ru == rv) return true;  // edge inside an existing component closes a cycle
        parent[ru] = rv;
    }
    return false;
}

std::string canonical_code(const LabeledGraph& graph) {
    if (graph.node_count() == 0) return "";
    if (graph.node_count() == 1) return escape_label(graph.labels[0]);
    return code_string(CodeEnumerator(graph).minimum());
}

std::vector<AttributePattern> mine_frequent(const std::vector<LabeledGraph>& graphs,
                                            const MinerConfig& config) {
    if (config.max_nodes < 3 || config.max_nodes > 4)
        throw ConfigError("miner max_nodes must be 3 or 4");
    if (config.min_support < 1) throw ConfigError("miner min_support must be >= 1");
    for (const auto& g : graphs)
        if (g.attribute_type != graphs.front().attribute_type)
            throw InputError("mine_frequent requires graphs of one attribute type");

    // Root codes: every frequent single labeled edge, la <= lb.
    std::map<std::pair<std::string, std::string>, std::vector<Embedding>> roots;
    for (size_t gid = 0; gid < graphs.size(); ++gid) {
        const LabeledGraph& g = graphs[gid];
        for (auto [u, v] : g.edges) {
            if (g.labels[u] <= g.labels[v])
                roots[{g.labels[u], g.labels[v]}].push_back(
                    Embedding{static_cast<int>(gid), {u, v}});
            if (g.labels[v] <= g.labels[u])
                roots[{g.labels[v], g.labels[u]}].push_back(
                    Embedding{static_cast<int>(gid), {v, u}});
        }
    }

    GspanMiner miner(graphs, config);
    std::vector<std::pair<DfsCode, std::vector<Embedding>>> root_jobs;
    for (auto& [key, embeddings] : roots)
        root_jobs.push_back(
            {{DfsEdge{0, 1, key.first, key.second}}, std::move(embeddings)});

    std::vector<std::vector<MiningOutput>> per_root(root_jobs.size());
    int workers = std::max(1, config.workers);
    if (workers == 1 || root_jobs.size() <= 1) {
        for (size_t r = 0; r < root_jobs.size(); ++r)
            per_root[r] = miner.mine_root(root_jobs[r].first, std::move(root_jobs[r].second));
    } else {
        std::atomic<size_t> next{0};
        auto work = [&]() {
            while (true) {
                size_t r = next.fetch_add(1);
                if (r >= root_jobs.size()) break;
                per_root[r] = miner.mine_root(root_jobs[r].first, std::move(root_jobs[r].second));
            }
        };
        std::vector<std::future<void>> futures;
        for (int t = 0; t < workers; ++t) futures.push_back(std::async(std::launch::async, work));
        for (auto& f : futures) f.get();
    }

    std::vector<AttributePattern> patterns;
    for (auto& chunk : per_root)
        for (auto& mined : chunk) {
            AttributePattern p;
            p.graph = graph_from_code(mined.code, graphs.empty() ? "" : graphs.front().attribute_type);
            p.canonical_code = code_string(mined.code);
            p.support = mined.support;
            p.attribute_type = p.graph.attribute_type;
            patterns.push_back(std::move(p));
        }
    std::sort(patterns.begin(), patterns.end(), [](const auto& a, const auto& b) {
        if (a.support != b.support) return a.support > b.support;
        return a.canonical_code < b.canonical_code;
    });
    return patterns;
}

namespace {

bool extend_mapping(const LabeledGraph& small, const LabeledGraph& big, std::vector<int>& map,
                    std::vector<bool>& taken, size_t k) {
    if (k == small.node_count()) return true;
    for (size_t cand = 0; cand < big.node_count(); ++cand) {
        if (taken[cand] || big.labels[cand] != small.labels[k]) continue;
        bool ok = true;
        for (auto [u, v] : small.edges) {
            size_t a = static_cast<size_t>(u), b = static_cast<size_t>(v);
            if (a == k && b < k && !big.has_edge(static_cast<int>(cand), map[b])) ok = false;
            if (b == k && a < k && !big.has_edge(map[a], static_cast<int>(cand))) ok = false;
            if (!ok) break;
        }
        if (!ok) continue;
        map[k] = static_cast<int>(cand);
        taken[cand] = true;
        if (extend_mapping(small, big, map, taken, k + 1)) return true;
        taken[cand] = false;
    }
    return false;
}

}  // namespace

bool is_subgraph(const LabeledGraph& small, const LabeledGraph& big) {
    if (small.node_count() > big.node_count() || small.edge_count() > big.edge_count())
        return false;
    std::vector<int> map(small.node_count(), -1);
    std::vector<bool> taken(big.node_count(), false);
    return extend_mapping(small, big, map, taken, 0);
}

bool is_subgraph(const AttributePattern& small, const AttributePattern& big) {
    return is_subgraph(small.graph, big.graph);
}

std::vector<AttributePattern> filter_loose(std::vector<AttributePattern> patterns) {
    std::vector<bool> maximal(patterns.size(), true);
    for (size_t i = 0; i < patterns.size(); ++i)
        for (size_t j = 0; j < patterns.size(); ++j) {
            if (i == j || patterns[i].canonical_code == patterns[j].canonical_code) continue;
            if (is_subgraph(patterns[i], patterns[j])) {
                maximal[i] = false;
                break;
            }
        }
    std::vector<AttributePattern> kept;
    kept.reserve(patterns.size());
    for (size_t i = 0; i < patterns.size(); ++i)
        if (maximal[i]) kept.push_back(std::move(patterns[i]));
    return kept;
}

void write_patterns(const std::string& path, const std::vector<AttributePattern>& patterns) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write pattern file: " + path);
    for (const auto& p : patterns) {
        json obj;
        obj["code"] = p.canonical_code;
        obj["support"] = p.support;
        obj["nodes"] = p.graph.labels;
        json edges = json::array();
        for (auto [u, v] : p.graph.edges) edges.push_back(json::array({u, v}));
        obj["edges"] = edges;
        out << obj.dump() << "\n";
    }
}

std::vector<AttributePattern> read_patterns(const std::string& path,
                                            const std::string& attribute_type) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open pattern file: " + path);
    std::vector<AttributePattern> patterns;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!obj.contains("code") || !obj.contains("support") || !obj.contains("nodes") ||
            !obj.contains("edges"))
            throw SchemaError("line " + std::to_string(line_no) +
                              ": pattern record needs code/support/nodes/edges");
        AttributePattern p;
        p.attribute_type = attribute_type;
        p.graph.attribute_type = attribute_type;
        p.graph.labels = obj["nodes"].get<std::vector<std::string>>();
        for (const auto& e : obj["edges"]) {
            if (!e.is_array() || e.size() != 2)
                throw SchemaError("line " + std::to_string(line_no) + ": bad edge entry");
            int u = e[0].get<int>(), v = e[1].get<int>();
            if (u < 0 || v < 0 || u >= static_cast<int>(p.graph.labels.size()) ||
                v >= static_cast<int>(p.graph.labels.size()))
                throw SchemaError("line " + std::to_string(line_no) + ": edge endpoint out of range");
            p.graph.add_edge(u, v);
        }
        p.canonical_code = obj["code"].get<std::string>();
        p.support = obj["support"].get<long long>();
        if (canonical_code(p.graph) != p.canonical_code)
            throw SchemaError("line " + std::to_string(line_no) +
                              ": stored code does not match graph");
        patterns.push_back(std::move(p));
    }
    return patterns;
}

}  // namespace patrec
