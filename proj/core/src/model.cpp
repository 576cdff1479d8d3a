#include "patrec/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

#include "patrec/errors.hpp"

namespace patrec {

using ordered_json = nlohmann::ordered_json;

void ModelConfig::validate() const {
    if (d == 0 || heads == 0 || max_neighbors == 0 || max_patterns == 0 || max_len == 0)
        throw ConfigError("model config: all size fields must be positive");
    if (d % heads != 0)
        throw ConfigError("model config: hidden width " + std::to_string(d) +
                          " is not divisible by " + std::to_string(heads) + " heads");
    if (bias_buckets < 2)
        throw ConfigError("model config: need at least 2 relative-position buckets");
    if (max_distance <= bias_buckets / 2)
        throw ConfigError("model config: max_distance must exceed bias_buckets/2");
    if (dropout < 0.0 || dropout >= 1.0)
        throw ConfigError("model config: dropout must lie in [0, 1)");
}

// The checkpoint order. entries(), bind_params() and params_from_vars() all
// walk parameters in exactly this sequence.
template <typename Params, typename Fn>
static void visit_params(Params& p, Fn&& fn) {
    fn("item_emb", p.item_emb);
    for (size_t m = 0; m < p.config.attribute_types.size(); ++m) {
        const std::string& t = p.config.attribute_types[m];
        fn("attr_emb." + t, p.attr_emb[m]);
        fn("relations." + t, p.relations[m]);
        fn("gate_w." + t, p.gate_w[m]);
        fn("gate_b." + t, p.gate_b[m]);
    }
    fn("cls", p.cls_emb);
    fn("mask", p.mask_emb);
    fn("mem.wq", p.mem_wq);
    fn("mem.wk", p.mem_wk);
    fn("mem.wv", p.mem_wv);
    fn("mem.wo", p.mem_wo);
    fn("mem.bias", p.mem_bias);
    fn("blk.wq", p.blk_wq);
    fn("blk.wk", p.blk_wk);
    fn("blk.wv", p.blk_wv);
    fn("blk.wo", p.blk_wo);
    fn("blk.ffn_w1", p.ffn_w1);
    fn("blk.ffn_b1", p.ffn_b1);
    fn("blk.ffn_w2", p.ffn_w2);
    fn("blk.ffn_b2", p.ffn_b2);
    fn("blk.ln1_gain", p.ln1_gain);
    fn("blk.ln1_bias", p.ln1_bias);
    fn("blk.ln2_gain", p.ln2_gain);
    fn("blk.ln2_bias", p.ln2_bias);
    fn("pos_emb", p.pos_emb);
    fn("w_z", p.w_z);
    fn("b_z", p.b_z);
    fn("w_gamma", p.w_gamma);
    fn("b_gamma", p.b_gamma);
    fn("r_gamma", p.r_gamma);
}

std::vector<std::pair<std::string, Tensor*>> ModelParams::entries() {
    std::vector<std::pair<std::string, Tensor*>> out;
    visit_params(*this, [&](const std::string& name, Tensor& t) { out.emplace_back(name, &t); });
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::entries() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    visit_params(*this,
                 [&](const std::string& name, const Tensor& t) { out.emplace_back(name, &t); });
    return out;
}

ModelParams init_params(const ModelConfig& config, const ItemCatalog& catalog, uint64_t seed) {
    config.validate();
    if (catalog.size() == 0) throw ConfigError("init_params: empty item catalog");
    if (config.attribute_types != catalog.schema().types)
        throw ConfigError("init_params: model attribute types must match the catalog schema");

    const size_t d = config.d;
    SplitMix64 rng(seed);
    ModelParams p;
    p.config = config;

    double emb = 0.1;
    double proj = 1.0 / std::sqrt(static_cast<double>(d));
    p.item_emb = gaussian_tensor(catalog.size(), d, emb, rng);
    for (size_t m = 0; m < config.num_attributes(); ++m) {
        p.attr_emb.push_back(gaussian_tensor(catalog.vocab_size(m) + 1, d, emb, rng));
        p.relations.push_back(gaussian_tensor(3, d, emb, rng));
        p.gate_w.push_back(gaussian_tensor(d, d, proj, rng));
        p.gate_b.emplace_back(1, d, 0.0);
    }
    p.cls_emb = gaussian_tensor(1, d, emb, rng);
    p.mask_emb = gaussian_tensor(1, d, emb, rng);
    p.mem_wq = gaussian_tensor(d, d, proj, rng);
    p.mem_wk = gaussian_tensor(d, d, proj, rng);
    p.mem_wv = gaussian_tensor(d, d, proj, rng);
    p.mem_wo = gaussian_tensor(d, d, proj, rng);
    p.mem_bias = Tensor(config.bias_buckets + 1, config.heads, 0.0);
    p.blk_wq = gaussian_tensor(d, d, proj, rng);
    p.blk_wk = gaussian_tensor(d, d, proj, rng);
    p.blk_wv = gaussian_tensor(d, d, proj, rng);
    p.blk_wo = gaussian_tensor(d, d, proj, rng);
    p.ffn_w1 = gaussian_tensor(d, 4 * d, proj, rng);
    p.ffn_b1 = Tensor(1, 4 * d, 0.0);
    p.ffn_w2 = gaussian_tensor(4 * d, d, 1.0 / std::sqrt(4.0 * static_cast<double>(d)), rng);
    p.ffn_b2 = Tensor(1, d, 0.0);
    p.ln1_gain = Tensor(1, d, 1.0);
    p.ln1_bias = Tensor(1, d, 0.0);
    p.ln2_gain = Tensor(1, d, 1.0);
    p.ln2_bias = Tensor(1, d, 0.0);
    p.pos_emb = gaussian_tensor(config.max_len + 2, d, emb, rng);
    p.w_z = gaussian_tensor(2 * d, d, 1.0 / std::sqrt(2.0 * static_cast<double>(d)), rng);
    p.b_z = Tensor(1, d, 0.0);
    p.w_gamma = gaussian_tensor(d, d, proj, rng);
    p.b_gamma = Tensor(1, d, 0.0);
    p.r_gamma = gaussian_tensor(1, d, proj, rng);
    return p;
}

void save_checkpoint(const std::string& path, const ModelParams& params) {
    std::vector<std::pair<std::string, Tensor>> arrays;
    for (const auto& [name, tensor] : params.entries()) arrays.emplace_back(name, *tensor);
    save_arrays(path, arrays);

    ordered_json manifest;
    manifest["d"] = params.config.d;
    manifest["heads"] = params.config.heads;
    manifest["M"] = params.config.num_attributes();
    manifest["attribute_types"] = params.config.attribute_types;
    manifest["max_len"] = params.config.max_len;
    std::ofstream out(path + ".manifest", std::ios::binary);
    if (!out) throw InputError("cannot write checkpoint manifest: " + path + ".manifest");
    out << manifest.dump() << "\n";
}

ModelParams load_checkpoint(const std::string& path, const ModelConfig& config,
                            const ItemCatalog& catalog) {
    std::ifstream in(path + ".manifest", std::ios::binary);
    if (!in) throw InputError("cannot open checkpoint manifest: " + path + ".manifest");
    std::string line;
    std::getline(in, line);
    ordered_json manifest;
    try {
        manifest = ordered_json::parse(line);
    } catch (const std::exception& e) {
        throw ParseError("checkpoint manifest: " + std::string(e.what()));
    }
    if (manifest.value("d", size_t{0}) != config.d ||
        manifest.value("heads", size_t{0}) != config.heads ||
        manifest.value("M", size_t{0}) != config.num_attributes() ||
        manifest.value("max_len", size_t{0}) != config.max_len ||
        manifest.value("attribute_types", std::vector<std::string>{}) != config.attribute_types)
        throw SchemaError("checkpoint manifest does not match the model config");

    // Shapes are derived the same way init does it, then overwritten.
    ModelParams params = init_params(config, catalog, 0);
    auto arrays = load_arrays(path);
    auto slots = params.entries();
    if (arrays.size() != slots.size())
        throw SchemaError("checkpoint holds " + std::to_string(arrays.size()) +
                          " arrays, expected " + std::to_string(slots.size()));
    for (size_t k = 0; k < slots.size(); ++k) {
        if (arrays[k].first != slots[k].first)
            throw SchemaError("checkpoint array '" + arrays[k].first + "' where '" +
                              slots[k].first + "' was expected");
        if (arrays[k].second.shape != slots[k].second->shape)
            throw SchemaError("checkpoint array '" + arrays[k].first + "' has the wrong shape");
        *slots[k].second = std::move(arrays[k].second);
    }
    return params;
}

// Consumes vars positionally in the visit_params order.
static void assign_fields(ParamVars& pv, const ModelConfig& config, const std::vector<Var>& vars) {
    size_t k = 0;
    auto next = [&]() { return vars.at(k++); };
    pv.item_emb = next();
    for (size_t m = 0; m < config.num_attributes(); ++m) {
        pv.attr_emb.push_back(next());
        pv.relations.push_back(next());
        pv.gate_w.push_back(next());
        pv.gate_b.push_back(next());
    }
    pv.cls_emb = next();
    pv.mask_emb = next();
    pv.mem_wq = next();
    pv.mem_wk = next();
    pv.mem_wv = next();
    pv.mem_wo = next();
    pv.mem_bias = next();
    pv.blk_wq = next();
    pv.blk_wk = next();
    pv.blk_wv = next();
    pv.blk_wo = next();
    pv.ffn_w1 = next();
    pv.ffn_b1 = next();
    pv.ffn_w2 = next();
    pv.ffn_b2 = next();
    pv.ln1_gain = next();
    pv.ln1_bias = next();
    pv.ln2_gain = next();
    pv.ln2_bias = next();
    pv.pos_emb = next();
    pv.w_z = next();
    pv.b_z = next();
    pv.w_gamma = next();
    pv.b_gamma = next();
    pv.r_gamma = next();
    if (k != vars.size())
        throw ContractError("params_from_vars: var count does not match the layout");
}

ParamVars bind_params(Tape& tape, const ModelParams& params, bool requires_grad) {
    std::vector<Var> vars;
    std::vector<std::string> names;
    for (const auto& [name, tensor] : params.entries()) {
        vars.push_back(tape.input(*tensor, requires_grad));
        names.push_back(name);
    }
    ParamVars pv;
    assign_fields(pv, params.config, vars);
    for (size_t k = 0; k < vars.size(); ++k) pv.named.emplace_back(names[k], vars[k]);
    return pv;
}

ParamVars params_from_vars(const ModelConfig& config, const std::vector<Var>& vars) {
    ParamVars pv;
    assign_fields(pv, config, vars);
    return pv;
}

GatGraph gat_graph_from_layer(const SessionGraph& layer, size_t max_neighbors) {
    GatGraph g;
    g.node_count = layer.nodes.size();
    struct Cand {
        int neighbor;
        int relation;
        int last_pos;
    };
    for (size_t i = 0; i < layer.nodes.size(); ++i) {
        std::vector<Cand> cands;
        for (const auto& e : layer.edges) {
            if (e.src == e.dst) continue;  // covered by the structural self-loop
            if (e.src == static_cast<int>(i)) cands.push_back({e.dst, 0, e.last_pos});
            if (e.dst == static_cast<int>(i)) cands.push_back({e.src, 1, e.last_pos});
        }
        std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
            if (a.last_pos != b.last_pos) return a.last_pos > b.last_pos;
            if (a.relation != b.relation) return a.relation < b.relation;
            return a.neighbor < b.neighbor;
        });
        if (cands.size() > max_neighbors - 1) cands.resize(max_neighbors - 1);
        g.pair_center.push_back(static_cast<int>(i));
        g.pair_neighbor.push_back(static_cast<int>(i));
        g.pair_relation.push_back(2);
        for (const Cand& c : cands) {
            g.pair_center.push_back(static_cast<int>(i));
            g.pair_neighbor.push_back(c.neighbor);
            g.pair_relation.push_back(c.relation);
        }
    }
    return g;
}

GatGraph gat_graph_from_pattern(const LabeledGraph& pattern) {
    GatGraph g;
    g.node_count = pattern.node_count();
    auto adj = pattern.adjacency();
    for (size_t i = 0; i < pattern.node_count(); ++i) {
        g.pair_center.push_back(static_cast<int>(i));
        g.pair_neighbor.push_back(static_cast<int>(i));
        g.pair_relation.push_back(2);
        std::sort(adj[i].begin(), adj[i].end());
        for (int j : adj[i]) {
            g.pair_center.push_back(static_cast<int>(i));
            g.pair_neighbor.push_back(j);
            g.pair_relation.push_back(0);
        }
    }
    return g;
}

Var gat_layer(Tape& tape, const GatGraph& graph, Var embeds, Var relations,
              const ModelConfig& config, std::vector<Var>* alphas_out) {
    const size_t d = config.d;
    const size_t dh = config.head_dim();
    if (graph.node_count == 0) return tape.input(Tensor(0, d), false);

    Var ei = gather_rows(embeds, graph.pair_center);
    Var ej = gather_rows(embeds, graph.pair_neighbor);
    Var rel = gather_rows(relations, graph.pair_relation);
    Var prod = mul(mul(ej, ei), rel);

    std::vector<Var> heads;
    for (size_t h = 0; h < config.heads; ++h) {
        Var score = sum_rows(slice_cols(prod, h * dh, (h + 1) * dh));
        Var alpha = segment_softmax(leaky_relu(score, 0.01), graph.pair_center, graph.node_count);
        if (alphas_out) alphas_out->push_back(alpha);
        Var weighted = mul(slice_cols(ej, h * dh, (h + 1) * dh), alpha);
        heads.push_back(segment_sum(weighted, graph.pair_center, graph.node_count));
    }
    return concat_cols(heads);
}

Var encode_pattern(Tape& tape, const AttributePattern& pattern, Var attr_table,
                   const ItemCatalog& catalog, int type_idx, Var relations,
                   const ModelConfig& config) {
    std::vector<int> rows;
    int oov = static_cast<int>(catalog.vocab_size(type_idx));
    for (const std::string& label : pattern.graph.labels) {
        int idx = catalog.value_index(type_idx, label);
        rows.push_back(idx < 0 ? oov : idx);
    }
    GatGraph g = gat_graph_from_pattern(pattern.graph);
    Var nodes = gat_layer(tape, g, gather_rows(attr_table, rows), relations, config);
    return mean_cols(nodes);
}

Var fuse_views(Tape& tape, const std::vector<Var>& view_rows, Var item_rows) {
    (void)tape;
    if (view_rows.empty()) return item_rows;
    Var acc = view_rows[0];
    for (size_t m = 1; m < view_rows.size(); ++m) acc = add(acc, view_rows[m]);
    return add(scale(acc, 1.0 / static_cast<double>(view_rows.size())), item_rows);
}

int relative_bucket(size_t distance, size_t buckets, size_t max_distance) {
    size_t exact = buckets / 2;
    if (distance < exact) return static_cast<int>(distance);
    double frac = std::log(static_cast<double>(distance) / static_cast<double>(exact)) /
                  std::log(static_cast<double>(max_distance) / static_cast<double>(exact));
    size_t bucket = exact + static_cast<size_t>(frac * static_cast<double>(buckets - exact));
    return static_cast<int>(std::min(bucket, buckets - 1));
}

namespace {

constexpr double kMaskedLogit = -1e30;
constexpr double kAttentionDropout = 0.2;

// Multi-head scaled dot-product attention with optional additive extras
// (position bias, visibility mask) applied to every head's logits.
Var attention(Tape& tape, Var queries, Var keys, Var wq, Var wk, Var wv, Var wo,
              const ModelConfig& config, bool train, Var bias_flat, Var mask,
              std::vector<Var>* probs_out) {
    const size_t dh = config.head_dim();
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Var q = matmul(queries, wq);
    Var k = matmul(keys, wk);
    Var v = matmul(keys, wv);
    std::vector<Var> heads;
    for (size_t h = 0; h < config.heads; ++h) {
        Var logits = scale(matmul_nt(slice_cols(q, h * dh, (h + 1) * dh),
                                     slice_cols(k, h * dh, (h + 1) * dh)),
                           inv_scale);
        if (bias_flat.valid())
            logits = add(logits, reshape(slice_cols(bias_flat, h, h + 1), queries.rows(),
                                         keys.rows()));
        if (mask.valid()) logits = add(logits, mask);
        Var probs = softmax_rows(logits);
        if (probs_out) probs_out->push_back(probs);
        if (train) probs = dropout(probs, kAttentionDropout);
        heads.push_back(matmul(probs, slice_cols(v, h * dh, (h + 1) * dh)));
    }
    return matmul(concat_cols(heads), wo);
}

}  // namespace

Var memory_attention(Tape& tape, Var memory, Var seq, const ParamVars& pv,
                     const ModelConfig& config, bool train, std::vector<Var>* probs_out) {
    const size_t rows = seq.rows();           // CLS + items + MASK
    const size_t mem = memory.valid() ? memory.rows() : 0;
    const size_t keys = mem + rows;
    Var all = mem > 0 ? concat_rows({memory, seq}) : seq;

    std::vector<int> buckets(rows * keys, 0);
    Tensor mask(rows, keys, 0.0);
    for (size_t qi = 0; qi < rows; ++qi) {
        for (size_t kj = 0; kj < keys; ++kj) {
            if (kj < mem) {
                buckets[qi * keys + kj] = static_cast<int>(config.bias_buckets);
                continue;
            }
            size_t ks = kj - mem;
            if (ks > qi) {
                mask.at(qi, kj) = kMaskedLogit;
                continue;
            }
            buckets[qi * keys + kj] =
                relative_bucket(qi - ks, config.bias_buckets, config.max_distance);
        }
    }
    Var bias_flat = gather_rows(pv.mem_bias, buckets);
    Var mask_var = tape.input(std::move(mask), false);
    Var out = attention(tape, seq, all, pv.mem_wq, pv.mem_wk, pv.mem_wv, pv.mem_wo, config,
                        train, bias_flat, mask_var, probs_out);
    if (train && config.dropout > 0.0) out = dropout(out, config.dropout);
    return out;
}

Var gate_fuse(Tape& tape, const std::vector<Var>& seq_bar, const std::vector<Var>& seq_hat,
              Var residual, const ParamVars& pv, Var* beta_out) {
    (void)tape;
    const size_t m_count = seq_hat.size();
    if (m_count == 0) return residual;
    std::vector<Var> scores;
    for (size_t m = 0; m < m_count; ++m)
        scores.push_back(mean_rows(add(matmul(seq_bar[m], pv.gate_w[m]), pv.gate_b[m])));
    Var beta = softmax_rows(m_count == 1 ? scores[0] : concat_cols(scores));
    if (beta_out) *beta_out = beta;
    Var acc = mul(seq_hat[0], slice_cols(beta, 0, 1));
    for (size_t m = 1; m < m_count; ++m)
        acc = add(acc, mul(seq_hat[m], slice_cols(beta, m, m + 1)));
    return add(acc, residual);
}

Var transformer_block(Tape& tape, Var x, const ParamVars& pv, const ModelConfig& config,
                      bool train, std::vector<Var>* probs_out) {
    Var attn = attention(tape, x, x, pv.blk_wq, pv.blk_wk, pv.blk_wv, pv.blk_wo, config, train,
                         Var{}, Var{}, probs_out);
    if (train && config.dropout > 0.0) attn = dropout(attn, config.dropout);
    Var h1 = layer_norm(add(x, attn), pv.ln1_gain, pv.ln1_bias);
    Var ff = add(matmul(relu(add(matmul(h1, pv.ffn_w1), pv.ffn_b1)), pv.ffn_w2), pv.ffn_b2);
    if (train && config.dropout > 0.0) ff = dropout(ff, config.dropout);
    return layer_norm(add(h1, ff), pv.ln2_gain, pv.ln2_bias);
}

Prediction predict_scores(Tape& tape, Var encoded, const ParamVars& pv,
                          const ModelConfig& config) {
    (void)tape;
    const size_t rows = encoded.rows();
    const size_t L = rows - 2;
    std::vector<int> reversed;
    for (size_t i = 0; i < rows; ++i) reversed.push_back(static_cast<int>(L + 1 - i));
    Var t = gather_rows(pv.pos_emb, reversed);
    Var z = tanh(add(matmul(concat_cols({encoded, t}), pv.w_z), pv.b_z));
    Var z_mask = slice_rows(z, rows - 1, rows);
    Var g = sigmoid(add(add(matmul(z, pv.w_gamma), z_mask), pv.b_gamma));
    Var gamma = matmul_nt(g, pv.r_gamma);
    Prediction out;
    out.session_vec = matmul_tn(slice_rows(gamma, 1, rows - 1), slice_rows(encoded, 1, rows - 1));
    out.scores = matmul_nt(out.session_vec, pv.item_emb);
    return out;
}

ForwardTrace forward(Tape& tape, const Session& session, const ItemCatalog& catalog,
                     const std::vector<std::vector<AttributePattern>>& patterns_per_type,
                     const ParamVars& pv, const ModelConfig& config, bool train) {
    config.validate();
    if (session.items.empty()) throw InputError("forward: empty session");
    if (config.attribute_types != catalog.schema().types)
        throw ConfigError("forward: model attribute types must match the catalog schema");
    const size_t m_count = config.num_attributes();
    if (patterns_per_type.size() != m_count)
        throw InputError("forward: expected one pattern list per attribute type");

    Session s = session;
    if (s.items.size() > config.max_len)
        s.items.assign(s.items.end() - config.max_len, s.items.end());

    MultiplexSessionGraph mx = to_multiplex(s, catalog);
    std::vector<int> base_of_pos;
    std::vector<int> item_rows_idx;
    for (const std::string& item : s.items) {
        base_of_pos.push_back(mx.base.node_index(item));
        item_rows_idx.push_back(catalog.item_index(item));
    }

    ForwardTrace trace;
    std::vector<Var> view_rows;
    for (size_t m = 0; m < m_count; ++m) {
        const SessionGraph& layer = mx.layers[m];
        std::vector<int> emb_idx;
        int oov = static_cast<int>(catalog.vocab_size(m));
        for (const std::string& label : layer.nodes) {
            int idx = catalog.value_index(static_cast<int>(m), label);
            emb_idx.push_back(idx < 0 ? oov : idx);
        }
        GatGraph g = gat_graph_from_layer(layer, config.max_neighbors);
        std::vector<Var> alphas;
        Var nodes = gat_layer(tape, g, gather_rows(pv.attr_emb[m], emb_idx), pv.relations[m],
                              config, &alphas);
        for (Var a : alphas) {
            trace.alphas.push_back(a);
            trace.alpha_segments.push_back(g.pair_center);
        }
        trace.layer_nodes.push_back(nodes);

        std::vector<Var> slots;
        const auto& pats = patterns_per_type[m];
        for (size_t k = 0; k < pats.size() && k < config.max_patterns; ++k)
            slots.push_back(encode_pattern(tape, pats[k], pv.attr_emb[m], catalog,
                                           static_cast<int>(m), pv.relations[m], config));
        trace.pattern_memory.push_back(slots.empty()
                                           ? Var{}
                                           : (slots.size() == 1 ? slots[0] : concat_rows(slots)));

        std::vector<int> anchor_idx;
        for (int b : base_of_pos) anchor_idx.push_back(mx.anchors[m][b]);
        Var positioned = gather_rows(nodes, anchor_idx);
        view_rows.push_back(positioned);
        trace.seq_bar.push_back(concat_rows({pv.cls_emb, positioned, pv.mask_emb}));
    }

    Var item_rows = gather_rows(pv.item_emb, item_rows_idx);
    trace.fused = concat_rows({pv.cls_emb, fuse_views(tape, view_rows, item_rows), pv.mask_emb});

    for (size_t m = 0; m < m_count; ++m)
        trace.seq_hat.push_back(memory_attention(tape, trace.pattern_memory[m], trace.seq_bar[m],
                                                 pv, config, train, &trace.attention_rows));

    trace.gated = m_count == 0 ? trace.fused
                               : gate_fuse(tape, trace.seq_bar, trace.seq_hat, trace.fused, pv,
                                           &trace.beta);
    trace.encoded = transformer_block(tape, trace.gated, pv, config, train, &trace.attention_rows);
    Prediction pred = predict_scores(tape, trace.encoded, pv, config);
    trace.session_vec = pred.session_vec;
    trace.scores = pred.scores;
    return trace;
}

}  // namespace patrec
