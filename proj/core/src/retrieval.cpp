#include "patrec/retrieval.hpp"

#include <algorithm>

#include "patrec/errors.hpp"

namespace patrec {

PatternStore::PatternStore(std::string attribute_type, std::vector<AttributePattern> patterns)
    : attribute_type_(std::move(attribute_type)), patterns_(std::move(patterns)) {
    label_sets_.reserve(patterns_.size());
    for (size_t i = 0; i < patterns_.size(); ++i) {
        const auto& p = patterns_[i];
        if (p.attribute_type != attribute_type_)
            throw InputError("pattern attribute type '" + p.attribute_type +
                             "' does not match store type '" + attribute_type_ + "'");
        label_sets_.push_back(p.graph.label_set());
        for (const auto& label : label_sets_.back())
            inverted_[label].push_back(static_cast<int>(i));
    }
}

PatternStore PatternStore::load(const std::string& path, const std::string& attribute_type) {
    return PatternStore(attribute_type, read_patterns(path, attribute_type));
}

const std::vector<int>* PatternStore::candidates(const std::string& label) const {
    auto it = inverted_.find(label);
    return it == inverted_.end() ? nullptr : &it->second;
}

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
    if (a.empty() && b.empty()) return 0.0;
    size_t inter = 0;
    for (const auto& x : a) inter += b.count(x);
    return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

std::vector<int> retrieve_indices(const LabeledGraph& session_layer, const PatternStore& store,
                                  const RetrievalConfig& config) {
    if (session_layer.attribute_type != store.attribute_type())
        throw InputError("session layer type '" + session_layer.attribute_type +
                         "' does not match store type '" + store.attribute_type() + "'");
    if (config.max_patterns <= 0) return {};

    auto session_labels = session_layer.label_set();
    // Intersection sizes via the inverted index: each stored pattern lists
    // each of its labels once, so per-label bumps accumulate |P ∩ S|.
    std::unordered_map<int, long long> inter;
    for (const auto& label : session_labels) {
        const auto* cands = store.candidates(label);
        if (!cands) continue;
        for (int idx : *cands) ++inter[idx];
    }

    struct Scored {
        int idx;
        long long inter;
        long long uni;
    };
    std::vector<Scored> scored;
    scored.reserve(inter.size());
    for (const auto& [idx, count] : inter)
        scored.push_back(Scored{idx, count,
                                static_cast<long long>(session_labels.size()) +
                                    static_cast<long long>(store.label_set(idx).size()) - count});
    std::sort(scored.begin(), scored.end(), [&](const Scored& a, const Scored& b) {
        long long lhs = a.inter * b.uni, rhs = b.inter * a.uni;  // exact score compare
        if (lhs != rhs) return lhs > rhs;
        const auto& pa = store.patterns()[a.idx];
        const auto& pb = store.patterns()[b.idx];
        if (pa.support != pb.support) return pa.support > pb.support;
        return pa.canonical_code < pb.canonical_code;
    });
    if (scored.size() > static_cast<size_t>(config.max_patterns))
        scored.resize(static_cast<size_t>(config.max_patterns));
    std::vector<int> out;
    out.reserve(scored.size());
    for (const auto& s : scored) out.push_back(s.idx);
    return out;
}

std::vector<AttributePattern> retrieve(const LabeledGraph& session_layer,
                                       const PatternStore& store, const RetrievalConfig& config) {
    std::vector<AttributePattern> out;
    for (int idx : retrieve_indices(session_layer, store, config))
        out.push_back(store.patterns()[idx]);
    return out;
}

std::vector<std::vector<AttributePattern>> retrieve_memory(const Session& session,
                                                           const ItemCatalog& catalog,
                                                           const std::vector<PatternStore>& stores,
                                                           const RetrievalConfig& config) {
    const auto& types = catalog.schema().types;
    if (stores.size() != types.size())
        throw ConfigError("retrieve_memory: need one pattern store per attribute type");
    for (size_t m = 0; m < types.size(); ++m)
        if (stores[m].attribute_type() != types[m])
            throw ConfigError("retrieve_memory: store order must match the catalog schema");
    MultiplexSessionGraph mx = to_multiplex(session, catalog);
    std::vector<std::vector<AttributePattern>> memory(types.size());
    for (size_t m = 0; m < types.size(); ++m)
        memory[m] = retrieve(to_labeled_graph(mx.layers[m], types[m]), stores[m], config);
    return memory;
}

}  // namespace patrec
