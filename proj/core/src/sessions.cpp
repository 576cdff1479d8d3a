#include "patrec/sessions.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "patrec/errors.hpp"

namespace patrec {

using json = nlohmann::ordered_json;

int ItemCatalog::add_item(const std::string& item, const std::vector<std::string>& values) {
    auto it = index_.find(item);
    if (it != index_.end()) return it->second;
    if (values.size() != schema_.size())
        throw SchemaError("item '" + item + "' has " + std::to_string(values.size()) +
                          " attribute values, expected " + std::to_string(schema_.size()));
    if (vocab_.empty()) {
        vocab_.resize(schema_.size());
        vocab_index_.resize(schema_.size());
    }
    int idx = static_cast<int>(items_.size());
    items_.push_back(item);
    values_.push_back(values);
    index_.emplace(item, idx);
    for (size_t m = 0; m < values.size(); ++m) {
        if (!vocab_index_[m].count(values[m])) {
            vocab_index_[m].emplace(values[m], static_cast<int>(vocab_[m].size()));
            vocab_[m].push_back(values[m]);
        }
    }
    return idx;
}

int ItemCatalog::item_index(const std::string& item) const {
    auto it = index_.find(item);
    return it == index_.end() ? -1 : it->second;
}

int ItemCatalog::value_index(int type_idx, const std::string& value) const {
    if (vocab_index_.empty()) return -1;
    const auto& m = vocab_index_[type_idx];
    auto it = m.find(value);
    return it == m.end() ? -1 : it->second;
}

int SessionGraph::add_node(const std::string& label) {
    auto it = index_.find(label);
    if (it != index_.end()) return it->second;
    int idx = static_cast<int>(nodes.size());
    nodes.push_back(label);
    index_.emplace(label, idx);
    return idx;
}

void SessionGraph::add_transition(int src, int dst, int pos) {
    for (auto& e : edges) {
        if (e.src == src && e.dst == dst) {
            ++e.count;
            e.last_pos = pos;
            return;
        }
    }
    edges.push_back(Edge{src, dst, 1, pos});
}

double SessionGraph::edge_weight(size_t edge_idx) const {
    const Edge& e = edges[edge_idx];
    if (weight_mode == WeightMode::none) return static_cast<double>(e.count);
    long long denom = 0;
    for (const auto& o : edges) {
        if (weight_mode == WeightMode::outdegree ? o.src == e.src : o.dst == e.dst)
            denom += o.count;
    }
    return static_cast<double>(e.count) / static_cast<double>(denom);
}

namespace {

std::vector<std::string> parse_string_list(const json& arr, const std::string& what, int line_no) {
    if (!arr.is_array())
        throw SchemaError("line " + std::to_string(line_no) + ": " + what + " must be an array");
    std::vector<std::string> out;
    out.reserve(arr.size());
    for (const auto& v : arr) {
        if (!v.is_string())
            throw SchemaError("line " + std::to_string(line_no) + ": " + what +
                              " must contain only strings");
        out.push_back(v.get<std::string>());
    }
    return out;
}

}  // namespace

LoadResult load_sessions(const std::string& path, const AttributeSchema& schema, size_t max_len) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open session file: " + path);
    LoadResult result;
    result.catalog = ItemCatalog(schema);
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
        if (!obj.is_object())
            throw SchemaError("line " + std::to_string(line_no) + ": expected a JSON object");
        if (!obj.contains("id") || !obj["id"].is_string())
            throw SchemaError("line " + std::to_string(line_no) + ": missing string field 'id'");
        if (!obj.contains("day") || !obj["day"].is_number_integer())
            throw SchemaError("line " + std::to_string(line_no) + ": missing integer field 'day'");
        if (!obj.contains("items"))
            throw SchemaError("line " + std::to_string(line_no) + ": missing field 'items'");

        Session s;
        s.id = obj["id"].get<std::string>();
        s.day = obj["day"].get<int>();
        s.items = parse_string_list(obj["items"], "'items'", line_no);

        std::vector<std::vector<std::string>> attr_lists(schema.size());
        const json attrs = obj.contains("attrs") ? obj["attrs"] : json::object();
        if (!attrs.is_object())
            throw SchemaError("line " + std::to_string(line_no) + ": 'attrs' must be an object");
        for (size_t m = 0; m < schema.size(); ++m) {
            const std::string& type = schema.types[m];
            if (!attrs.contains(type))
                throw SchemaError("line " + std::to_string(line_no) +
                                  ": missing attribute list '" + type + "'");
            attr_lists[m] = parse_string_list(attrs[type], "attrs['" + type + "']", line_no);
            if (attr_lists[m].size() != s.items.size())
                throw SchemaError("line " + std::to_string(line_no) + ": attrs['" + type +
                                  "'] has " + std::to_string(attr_lists[m].size()) +
                                  " entries for " + std::to_string(s.items.size()) + " items");
        }

        for (size_t i = 0; i < s.items.size(); ++i) {
            std::vector<std::string> values(schema.size());
            for (size_t m = 0; m < schema.size(); ++m) values[m] = attr_lists[m][i];
            result.catalog.add_item(s.items[i], values);
        }
        if (max_len > 0 && s.items.size() > max_len)
            s.items.erase(s.items.begin(), s.items.end() - static_cast<long>(max_len));
        result.sessions.push_back(std::move(s));
    }
    return result;
}

std::vector<Session> core_filter(std::vector<Session> sessions, int min_days) {
    bool changed = true;
    while (changed) {
        changed = false;
        std::unordered_map<std::string, std::set<int>> days_seen;
        for (const auto& s : sessions)
            for (const auto& item : s.items) days_seen[item].insert(s.day);
        std::unordered_set<std::string> keep;
        for (const auto& [item, days] : days_seen)
            if (static_cast<int>(days.size()) >= min_days) keep.insert(item);

        std::vector<Session> next;
        next.reserve(sessions.size());
        for (auto& s : sessions) {
            std::vector<std::string> items;
            items.reserve(s.items.size());
            for (auto& item : s.items)
                if (keep.count(item)) items.push_back(std::move(item));
            if (items.size() != s.items.size()) changed = true;
            if (items.size() < 2) {
                changed = changed || !s.items.empty();
                continue;
            }
            s.items = std::move(items);
            next.push_back(std::move(s));
        }
        if (next.size() != sessions.size()) changed = true;
        sessions = std::move(next);
    }
    return sessions;
}

DatasetSplit split_by_day(const std::vector<Session>& sessions, int valid_days, int test_days) {
    if (sessions.empty()) throw ConfigError("cannot split an empty session set");
    int dmax = sessions[0].day;
    for (const auto& s : sessions) dmax = std::max(dmax, s.day);

    DatasetSplit split;
    split.first_test_day = dmax - test_days + 1;
    split.first_valid_day = split.first_test_day - valid_days;
    for (const auto& s : sessions) {
        if (s.day >= split.first_test_day)
            split.test.push_back(s);
        else if (s.day >= split.first_valid_day)
            split.valid.push_back(s);
        else
            split.train.push_back(s);
    }
    if (split.train.empty())
        throw ConfigError("training split is empty; reduce valid/test day windows");

    std::unordered_set<std::string> train_items;
    for (const auto& s : split.train)
        for (const auto& item : s.items) train_items.insert(item);
    auto prune = [&](std::vector<Session>& split_sessions) {
        std::vector<Session> kept;
        kept.reserve(split_sessions.size());
        for (auto& s : split_sessions) {
            bool ok = true;
            for (const auto& item : s.items)
                if (!train_items.count(item)) {
                    ok = false;
                    break;
                }
            if (ok) kept.push_back(std::move(s));
        }
        split_sessions = std::move(kept);
    };
    prune(split.valid);
    prune(split.test);
    return split;
}

SessionGraph to_session_graph(const std::vector<std::string>& sequence, WeightMode mode) {
    SessionGraph g;
    g.weight_mode = mode;
    for (const auto& label : sequence) g.add_node(label);
    for (size_t i = 0; i + 1 < sequence.size(); ++i)
        g.add_transition(g.node_index(sequence[i]), g.node_index(sequence[i + 1]),
                         static_cast<int>(i));
    return g;
}

SessionGraph to_session_graph(const Session& session, WeightMode mode) {
    return to_session_graph(session.items, mode);
}

MultiplexSessionGraph to_multiplex(const Session& session, const ItemCatalog& catalog,
                                   WeightMode mode) {
    MultiplexSessionGraph mg;
    mg.base = to_session_graph(session.items, mode);
    size_t num_types = catalog.num_attributes();
    mg.layers.resize(num_types);
    mg.anchors.assign(num_types, std::vector<int>(mg.base.nodes.size(), -1));
    for (size_t m = 0; m < num_types; ++m) {
        std::vector<std::string> projected;
        projected.reserve(session.items.size());
        for (const auto& item : session.items) {
            int idx = catalog.item_index(item);
            if (idx < 0) throw InputError("item '" + item + "' missing from catalog");
            projected.push_back(catalog.value_of(idx, static_cast<int>(m)));
        }
        mg.layers[m] = to_session_graph(projected, mode);
        for (size_t n = 0; n < mg.base.nodes.size(); ++n) {
            int idx = catalog.item_index(mg.base.nodes[n]);
            mg.anchors[m][n] = mg.layers[m].node_index(catalog.value_of(idx, static_cast<int>(m)));
        }
    }
    return mg;
}

LabeledGraph to_labeled_graph(const SessionGraph& graph, const std::string& attribute_type) {
    LabeledGraph g;
    g.attribute_type = attribute_type;
    g.labels = graph.nodes;
    for (const auto& e : graph.edges) g.add_edge(e.src, e.dst);
    return g;
}

ItemCatalog restrict_catalog(const std::vector<Session>& sessions, const ItemCatalog& full) {
    ItemCatalog out(full.schema());
    for (const auto& s : sessions)
        for (const auto& item : s.items) {
            int idx = full.item_index(item);
            if (idx < 0) throw InputError("item '" + item + "' missing from catalog");
            out.add_item(item, full.item_values(idx));
        }
    return out;
}

void write_sessions(const std::string& path, const std::vector<Session>& sessions,
                    const ItemCatalog& catalog) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write session file: " + path);
    for (const auto& s : sessions) {
        json obj;
        obj["id"] = s.id;
        obj["day"] = s.day;
        obj["items"] = s.items;
        json attrs = json::object();
        for (size_t m = 0; m < catalog.num_attributes(); ++m) {
            std::vector<std::string> list;
            list.reserve(s.items.size());
            for (const auto& item : s.items) {
                int idx = catalog.item_index(item);
                if (idx < 0) throw InputError("item '" + item + "' missing from catalog");
                list.push_back(catalog.value_of(idx, static_cast<int>(m)));
            }
            attrs[catalog.schema().types[m]] = list;
        }
        obj["attrs"] = attrs;
        out << obj.dump() << "\n";
    }
}

void write_catalog(const std::string& path, const ItemCatalog& catalog) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write catalog file: " + path);
    for (size_t i = 0; i < catalog.size(); ++i) {
        json obj;
        obj["item"] = catalog.item_id(static_cast<int>(i));
        json attrs = json::object();
        for (size_t m = 0; m < catalog.num_attributes(); ++m)
            attrs[catalog.schema().types[m]] =
                catalog.value_of(static_cast<int>(i), static_cast<int>(m));
        obj["attrs"] = attrs;
        out << obj.dump() << "\n";
    }
}

ItemCatalog read_catalog(const std::string& path, const AttributeSchema& schema) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open catalog file: " + path);
    ItemCatalog catalog(schema);
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
        if (!obj.contains("item") || !obj["item"].is_string())
            throw SchemaError("line " + std::to_string(line_no) + ": missing string field 'item'");
        if (!obj.contains("attrs") || !obj["attrs"].is_object())
            throw SchemaError("line " + std::to_string(line_no) + ": missing object field 'attrs'");
        std::vector<std::string> values(schema.size());
        for (size_t m = 0; m < schema.size(); ++m) {
            const std::string& type = schema.types[m];
            if (!obj["attrs"].contains(type) || !obj["attrs"][type].is_string())
                throw SchemaError("line " + std::to_string(line_no) +
                                  ": missing attribute value '" + type + "'");
            values[m] = obj["attrs"][type].get<std::string>();
        }
        catalog.add_item(obj["item"].get<std::string>(), values);
    }
    return catalog;
}

}  // namespace patrec
