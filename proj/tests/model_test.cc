#include "patrec/model.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "patrec/errors.hpp"

namespace patrec {
namespace {

// --- independent plain-double oracles (explicit loops, no autodiff) -------

Tensor oracle_gat(const GatGraph& g, const Tensor& emb, const Tensor& rel, size_t heads) {
    size_t d = emb.cols(), dh = d / heads;
    Tensor out(g.node_count, d, 0.0);
    for (size_t h = 0; h < heads; ++h) {
        for (size_t c = 0; c < g.node_count; ++c) {
            std::vector<size_t> pairs;
            for (size_t p = 0; p < g.pair_center.size(); ++p)
                if (g.pair_center[p] == static_cast<int>(c)) pairs.push_back(p);
            std::vector<double> scores;
            for (size_t p : pairs) {
                double s = 0.0;
                for (size_t k = h * dh; k < (h + 1) * dh; ++k)
                    s += rel.at(g.pair_relation[p], k) * emb.at(g.pair_neighbor[p], k) *
                         emb.at(c, k);
                scores.push_back(s > 0 ? s : 0.01 * s);
            }
            double mx = *std::max_element(scores.begin(), scores.end());
            double z = 0.0;
            for (double s : scores) z += std::exp(s - mx);
            for (size_t q = 0; q < pairs.size(); ++q) {
                double alpha = std::exp(scores[q] - mx) / z;
                for (size_t k = h * dh; k < (h + 1) * dh; ++k)
                    out.at(c, k) += alpha * emb.at(g.pair_neighbor[pairs[q]], k);
            }
        }
    }
    return out;
}

// Memory attention: queries = seq rows, keys = [mem ‖ seq], causal over the
// sequence part, bias table lookup per bucket, scaled dot product, then the
// output projection. No dropout.
Tensor oracle_memory_attention(const Tensor& mem, const Tensor& seq, const Tensor& wq,
                               const Tensor& wk, const Tensor& wv, const Tensor& wo,
                               const Tensor& bias, const ModelConfig& cfg) {
    size_t d = cfg.d, dh = cfg.head_dim();
    size_t rows = seq.rows(), m = mem.rows(), keys = m + rows;
    auto full_at = [&](size_t r, size_t c) { return r < m ? mem.at(r, c) : seq.at(r - m, c); };
    auto project = [&](const Tensor& w, bool is_query, size_t r, size_t c) {
        double s = 0.0;
        for (size_t k = 0; k < d; ++k) s += (is_query ? seq.at(r, k) : full_at(r, k)) * w.at(k, c);
        return s;
    };
    Tensor concat(rows, d, 0.0);
    for (size_t h = 0; h < cfg.heads; ++h) {
        for (size_t qi = 0; qi < rows; ++qi) {
            std::vector<size_t> allowed;
            std::vector<double> logits;
            for (size_t kj = 0; kj < keys; ++kj) {
                if (kj >= m && kj - m > qi) continue;
                double dot = 0.0;
                for (size_t k = h * dh; k < (h + 1) * dh; ++k)
                    dot += project(wq, true, qi, k) * project(wk, false, kj, k);
                dot /= std::sqrt(static_cast<double>(dh));
                int bucket = kj < m ? static_cast<int>(cfg.bias_buckets)
                                    : relative_bucket(qi - (kj - m), cfg.bias_buckets,
                                                      cfg.max_distance);
                allowed.push_back(kj);
                logits.push_back(dot + bias.at(bucket, h));
            }
            double mx = *std::max_element(logits.begin(), logits.end());
            double z = 0.0;
            for (double l : logits) z += std::exp(l - mx);
            for (size_t a = 0; a < allowed.size(); ++a) {
                double p = std::exp(logits[a] - mx) / z;
                for (size_t k = h * dh; k < (h + 1) * dh; ++k)
                    concat.at(qi, k) += p * project(wv, false, allowed[a], k);
            }
        }
    }
    Tensor out(rows, d, 0.0);
    for (size_t r = 0; r < rows; ++r)
        for (size_t c = 0; c < d; ++c)
            for (size_t k = 0; k < d; ++k) out.at(r, c) += concat.at(r, k) * wo.at(k, c);
    return out;
}

Tensor oracle_layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
    Tensor out = x;
    for (size_t r = 0; r < x.rows(); ++r) {
        double mean = 0.0, var = 0.0;
        for (size_t c = 0; c < x.cols(); ++c) mean += x.at(r, c);
        mean /= static_cast<double>(x.cols());
        for (size_t c = 0; c < x.cols(); ++c) {
            double dv = x.at(r, c) - mean;
            var += dv * dv;
        }
        var /= static_cast<double>(x.cols());
        double inv = 1.0 / std::sqrt(var + 1e-12);
        for (size_t c = 0; c < x.cols(); ++c)
            out.at(r, c) = (x.at(r, c) - mean) * inv * gain.at(0, c) + bias.at(0, c);
    }
    return out;
}

Tensor oracle_block(const Tensor& x, const ModelParams& p, const ModelConfig& cfg) {
    Tensor zero(0, cfg.d);
    ModelConfig plain = cfg;
    Tensor attn =
        oracle_memory_attention(zero, x, p.blk_wq, p.blk_wk, p.blk_wv, p.blk_wo,
                                Tensor(cfg.bias_buckets + 1, cfg.heads, 0.0), plain);
    // The block is bidirectional: recompute without the causal restriction by
    // evaluating attention with queries==keys directly.
    size_t d = cfg.d, dh = cfg.head_dim(), rows = x.rows();
    Tensor concat(rows, d, 0.0);
    auto proj = [&](const Tensor& w, size_t r, size_t c) {
        double s = 0.0;
        for (size_t k = 0; k < d; ++k) s += x.at(r, k) * w.at(k, c);
        return s;
    };
    for (size_t h = 0; h < cfg.heads; ++h) {
        for (size_t qi = 0; qi < rows; ++qi) {
            std::vector<double> logits(rows);
            for (size_t kj = 0; kj < rows; ++kj) {
                double dot = 0.0;
                for (size_t k = h * dh; k < (h + 1) * dh; ++k)
                    dot += proj(p.blk_wq, qi, k) * proj(p.blk_wk, kj, k);
                logits[kj] = dot / std::sqrt(static_cast<double>(dh));
            }
            double mx = *std::max_element(logits.begin(), logits.end());
            double z = 0.0;
            for (double l : logits) z += std::exp(l - mx);
            for (size_t kj = 0; kj < rows; ++kj) {
                double prob = std::exp(logits[kj] - mx) / z;
                for (size_t k = h * dh; k < (h + 1) * dh; ++k)
                    concat.at(qi, k) += prob * proj(p.blk_wv, kj, k);
            }
        }
    }
    attn = Tensor(rows, d, 0.0);
    for (size_t r = 0; r < rows; ++r)
        for (size_t c = 0; c < d; ++c)
            for (size_t k = 0; k < d; ++k) attn.at(r, c) += concat.at(r, k) * p.blk_wo.at(k, c);

    Tensor sum1 = x;
    for (size_t i = 0; i < sum1.values.size(); ++i) sum1.values[i] += attn.values[i];
    Tensor h1 = oracle_layer_norm(sum1, p.ln1_gain, p.ln1_bias);

    size_t hidden = 4 * d;
    Tensor ff(rows, d, 0.0);
    for (size_t r = 0; r < rows; ++r) {
        std::vector<double> mid(hidden);
        for (size_t c = 0; c < hidden; ++c) {
            double s = p.ffn_b1.at(0, c);
            for (size_t k = 0; k < d; ++k) s += h1.at(r, k) * p.ffn_w1.at(k, c);
            mid[c] = s > 0 ? s : 0.0;
        }
        for (size_t c = 0; c < d; ++c) {
            double s = p.ffn_b2.at(0, c);
            for (size_t k = 0; k < hidden; ++k) s += mid[k] * p.ffn_w2.at(k, c);
            ff.at(r, c) = s;
        }
    }
    Tensor sum2 = h1;
    for (size_t i = 0; i < sum2.values.size(); ++i) sum2.values[i] += ff.values[i];
    return oracle_layer_norm(sum2, p.ln2_gain, p.ln2_bias);
}

// Reversed-positions head: z, gamma, session vector, scores.
Tensor oracle_predict(const Tensor& H, const ModelParams& p, double* u_out = nullptr) {
    size_t rows = H.rows(), d = H.cols(), L = rows - 2;
    Tensor z(rows, d, 0.0);
    for (size_t i = 0; i < rows; ++i) {
        for (size_t c = 0; c < d; ++c) {
            double s = p.b_z.at(0, c);
            for (size_t k = 0; k < d; ++k) s += H.at(i, k) * p.w_z.at(k, c);
            for (size_t k = 0; k < d; ++k) s += p.pos_emb.at(L + 1 - i, k) * p.w_z.at(d + k, c);
            z.at(i, c) = std::tanh(s);
        }
    }
    std::vector<double> gamma(rows, 0.0);
    for (size_t i = 0; i < rows; ++i) {
        for (size_t c = 0; c < d; ++c) {
            double s = p.b_gamma.at(0, c) + z.at(rows - 1, c);
            for (size_t k = 0; k < d; ++k) s += z.at(i, k) * p.w_gamma.at(k, c);
            gamma[i] += p.r_gamma.at(0, c) / (1.0 + std::exp(-s));
        }
    }
    std::vector<double> u(d, 0.0);
    for (size_t i = 1; i + 1 < rows; ++i)
        for (size_t c = 0; c < d; ++c) u[c] += gamma[i] * H.at(i, c);
    if (u_out) std::copy(u.begin(), u.end(), u_out);
    Tensor scores(1, p.item_emb.rows(), 0.0);
    for (size_t v = 0; v < p.item_emb.rows(); ++v) {
        double s = 0.0;
        for (size_t c = 0; c < d; ++c) s += u[c] * p.item_emb.at(v, c);
        scores.at(0, v) = s;
    }
    return scores;
}

// --- fixtures --------------------------------------------------------------

ModelConfig tiny_config(size_t d, size_t heads, std::vector<std::string> types) {
    ModelConfig cfg;
    cfg.d = d;
    cfg.heads = heads;
    cfg.max_neighbors = 12;
    cfg.max_patterns = 12;
    cfg.bias_buckets = 4;
    cfg.max_distance = 8;
    cfg.max_len = 8;
    cfg.dropout = 0.0;
    cfg.attribute_types = std::move(types);
    return cfg;
}

ItemCatalog tiny_catalog() {
    ItemCatalog cat(AttributeSchema{{"brand", "category"}});
    cat.add_item("i1", {"apple", "phone"});
    cat.add_item("i2", {"apple", "tablet"});
    cat.add_item("i3", {"samsung", "phone"});
    cat.add_item("i4", {"google", "laptop"});
    cat.add_item("i5", {"samsung", "tablet"});
    return cat;
}

AttributePattern triangle_pattern(const std::string& type, std::vector<std::string> labels) {
    AttributePattern p;
    p.graph.labels = std::move(labels);
    p.graph.attribute_type = type;
    p.graph.add_edge(0, 1);
    p.graph.add_edge(1, 2);
    p.graph.add_edge(0, 2);
    p.attribute_type = type;
    p.support = 1;
    p.canonical_code = canonical_code(p.graph);
    return p;
}

void expect_tensor_near(const Tensor& got, const Tensor& want, double tol) {
    ASSERT_EQ(got.shape, want.shape);
    for (size_t i = 0; i < got.values.size(); ++i)
        EXPECT_NEAR(got.values[i], want.values[i], tol) << "flat index " << i;
}

std::vector<double> segment_sums(const Tensor& alpha, const std::vector<int>& segs) {
    std::vector<double> sums;
    for (int s : segs)
        while (sums.size() <= static_cast<size_t>(s)) sums.push_back(0.0);
    for (size_t k = 0; k < segs.size(); ++k) sums[segs[k]] += alpha.values[k];
    return sums;
}

TEST(ModelConfigTest, RejectsBadShapes) {
    ModelConfig cfg = tiny_config(6, 4, {"brand"});
    EXPECT_THROW(cfg.validate(), ConfigError);  // 6 % 4 != 0
    cfg = tiny_config(8, 2, {"brand"});
    cfg.max_neighbors = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = tiny_config(8, 2, {"brand"});
    cfg.dropout = 1.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    EXPECT_NO_THROW(tiny_config(8, 2, {"brand"}).validate());
}

TEST(GatLayerTest, IsolatedNodeKeepsItsEmbedding) {
    ModelConfig cfg = tiny_config(4, 1, {"brand"});
    Tape tape;
    GatGraph g;
    g.node_count = 1;
    g.pair_center = {0};
    g.pair_neighbor = {0};
    g.pair_relation = {2};
    Tensor emb = Tensor::from({1.0, -2.0, 0.5, 3.0}, 1, 4);
    Var out = gat_layer(tape, g, tape.input(emb, false),
                        tape.input(Tensor(3, 4, 0.7), false), cfg);
    EXPECT_EQ(out.value().values, emb.values);
}

TEST(GatLayerTest, AlphaRowsSumToOne) {
    SplitMix64 rng(5);
    ModelConfig cfg = tiny_config(8, 2, {"brand"});
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::string> seq;
        for (int i = 0; i < 8; ++i) seq.push_back("v" + std::to_string(rng.next() % 4));
        SessionGraph layer = to_session_graph(seq, WeightMode::none);
        GatGraph g = gat_graph_from_layer(layer, cfg.max_neighbors);
        Tape tape;
        std::vector<Var> alphas;
        gat_layer(tape, g, tape.input(gaussian_tensor(layer.nodes.size(), 8, 1.0, rng), false),
                  tape.input(gaussian_tensor(3, 8, 1.0, rng), false), cfg, &alphas);
        ASSERT_EQ(alphas.size(), cfg.heads);
        for (const Var& a : alphas)
            for (double s : segment_sums(a.value(), g.pair_center)) EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(GatLayerTest, TwoNodeLayerMatchesHandEvaluation) {
    ModelConfig cfg = tiny_config(2, 1, {"brand"});
    SessionGraph layer = to_session_graph(std::vector<std::string>{"a", "b"}, WeightMode::none);
    GatGraph g = gat_graph_from_layer(layer, cfg.max_neighbors);
    Tensor emb = Tensor::from({1.0, 2.0, 0.5, -1.0}, 2, 2);
    Tensor rel = Tensor::from({0.3, 0.2, -0.1, 0.4, 1.0, -1.0}, 3, 2);

    Tape tape;
    Var out = gat_layer(tape, g, tape.input(emb, false), tape.input(rel, false), cfg);
    expect_tensor_near(out.value(), oracle_gat(g, emb, rel, 1), 1e-12);

    // Cross-check one alpha by explicit arithmetic: node a sees {self, b}.
    double s_self = std::max(1.0 * 1 * 1 + (-1.0) * 2 * 2, 0.0) +
                    std::min(1.0 * 1 * 1 + (-1.0) * 2 * 2, 0.0) * 0.01;
    double s_b = std::max(0.3 * 0.5 * 1 + 0.2 * (-1) * 2, 0.0) +
                 std::min(0.3 * 0.5 * 1 + 0.2 * (-1) * 2, 0.0) * 0.01;
    double alpha_self = std::exp(s_self) / (std::exp(s_self) + std::exp(s_b));
    EXPECT_NEAR(out.value().at(0, 0), alpha_self * 1.0 + (1 - alpha_self) * 0.5, 1e-12);
}

TEST(GatLayerTest, MatchesOracleOnRandomMultiHeadGraphs) {
    SplitMix64 rng(6);
    ModelConfig cfg = tiny_config(8, 4, {"brand"});
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<std::string> seq;
        size_t len = 2 + rng.next() % 7;
        for (size_t i = 0; i < len; ++i) seq.push_back("v" + std::to_string(rng.next() % 5));
        SessionGraph layer = to_session_graph(seq, WeightMode::none);
        GatGraph g = gat_graph_from_layer(layer, cfg.max_neighbors);
        Tensor emb = gaussian_tensor(layer.nodes.size(), 8, 0.8, rng);
        Tensor rel = gaussian_tensor(3, 8, 0.8, rng);
        Tape tape;
        Var out = gat_layer(tape, g, tape.input(emb, false), tape.input(rel, false), cfg);
        expect_tensor_near(out.value(), oracle_gat(g, emb, rel, 4), 1e-12);
    }
}

TEST(GatGraphTest, TruncationKeepsMostRecentNeighborsAndSelf) {
    SessionGraph layer;
    int hub = layer.add_node("hub");
    for (int i = 0; i < 15; ++i) {
        int other = layer.add_node("n" + std::to_string(i));
        layer.add_transition(hub, other, i);
    }
    GatGraph g = gat_graph_from_layer(layer, 12);
    std::vector<int> hub_neighbors;
    for (size_t p = 0; p < g.pair_center.size(); ++p)
        if (g.pair_center[p] == hub) hub_neighbors.push_back(g.pair_neighbor[p]);
    ASSERT_EQ(hub_neighbors.size(), 12u);
    EXPECT_EQ(hub_neighbors[0], hub);  // self first
    // Others are the 11 most recent transitions: positions 14 down to 4.
    for (int k = 0; k < 11; ++k) EXPECT_EQ(layer.nodes[hub_neighbors[k + 1]],
                                           "n" + std::to_string(14 - k));
}

TEST(GatGraphTest, RepeatedValueSelfTransitionsDoNotDuplicateSelfSlot) {
    SessionGraph layer = to_session_graph(std::vector<std::string>{"a", "a", "b"},
                                          WeightMode::none);
    GatGraph g = gat_graph_from_layer(layer, 12);
    int a = layer.node_index("a");
    int self_slots = 0;
    for (size_t p = 0; p < g.pair_center.size(); ++p)
        if (g.pair_center[p] == a && g.pair_neighbor[p] == a) ++self_slots;
    EXPECT_EQ(self_slots, 1);
}

TEST(EncodePatternTest, MeanPoolAndOovRow) {
    ModelConfig cfg = tiny_config(4, 2, {"brand"});
    ItemCatalog cat(AttributeSchema{{"brand"}});
    cat.add_item("x", {"apple"});
    cat.add_item("y", {"samsung"});

    SplitMix64 rng(11);
    Tensor table = gaussian_tensor(3, 4, 0.6, rng);  // apple, samsung, OOV
    Tensor rel = gaussian_tensor(3, 4, 0.6, rng);

    // Unknown label "nokia" must hit the OOV row (index 2).
    AttributePattern tri = triangle_pattern("brand", {"apple", "samsung", "nokia"});
    Tape tape;
    Var p = encode_pattern(tape, tri, tape.input(table, false), cat, 0,
                           tape.input(rel, false), cfg);
    ASSERT_EQ(p.rows(), 1u);
    ASSERT_EQ(p.cols(), 4u);

    GatGraph g = gat_graph_from_pattern(tri.graph);
    Tensor emb(3, 4, 0.0);
    std::vector<int> rows = {0, 1, 2};
    for (size_t r = 0; r < 3; ++r)
        for (size_t c = 0; c < 4; ++c) emb.at(r, c) = table.at(rows[r], c);
    Tensor nodes = oracle_gat(g, emb, rel, 2);
    for (size_t c = 0; c < 4; ++c) {
        double mean = (nodes.at(0, c) + nodes.at(1, c) + nodes.at(2, c)) / 3.0;
        EXPECT_NEAR(p.value().at(0, c), mean, 1e-12);
    }
}

TEST(EncodePatternTest, UniformLabelsEncodeToThatEmbedding) {
    ModelConfig cfg = tiny_config(4, 1, {"brand"});
    ItemCatalog cat(AttributeSchema{{"brand"}});
    cat.add_item("x", {"apple"});
    SplitMix64 rng(12);
    Tensor table = gaussian_tensor(2, 4, 0.6, rng);
    AttributePattern tri = triangle_pattern("brand", {"apple", "apple", "apple"});
    Tape tape;
    Var p = encode_pattern(tape, tri, tape.input(table, false), cat, 0,
                           tape.input(gaussian_tensor(3, 4, 0.6, rng), false), cfg);
    for (size_t c = 0; c < 4; ++c) EXPECT_NEAR(p.value().at(0, c), table.at(0, c), 1e-12);
}

TEST(FuseViewsTest, NoViewsIsIdentity) {
    Tape tape;
    Var items = tape.input(Tensor::from({1, 2, 3, 4}, 2, 2), false);
    Var fused = fuse_views(tape, {}, items);
    EXPECT_EQ(fused.node, items.node);
}

TEST(FuseViewsTest, OppositeViewsCancel) {
    Tape tape;
    SplitMix64 rng(13);
    Tensor x = gaussian_tensor(3, 4, 1.0, rng);
    Tensor neg = x;
    for (double& v : neg.values) v = -v;
    Tensor e = gaussian_tensor(3, 4, 1.0, rng);
    Var fused = fuse_views(tape, {tape.input(x, false), tape.input(neg, false)},
                           tape.input(e, false));
    expect_tensor_near(fused.value(), e, 1e-15);
}

TEST(FuseViewsTest, AveragePlusItemEmbedding) {
    Tape tape;
    SplitMix64 rng(14);
    Tensor a = gaussian_tensor(2, 3, 1.0, rng), b = gaussian_tensor(2, 3, 1.0, rng);
    Tensor e = gaussian_tensor(2, 3, 1.0, rng);
    Var fused = fuse_views(tape, {tape.input(a, false), tape.input(b, false)},
                           tape.input(e, false));
    for (size_t i = 0; i < fused.value().values.size(); ++i)
        EXPECT_NEAR(fused.value().values[i],
                    (a.values[i] + b.values[i]) / 2.0 + e.values[i], 1e-12);
}

TEST(RelativeBucketTest, ExactThenLogSpacedThenCapped) {
    for (size_t dist = 0; dist < 16; ++dist) EXPECT_EQ(relative_bucket(dist, 32, 128),
                                                       static_cast<int>(dist));
    EXPECT_EQ(relative_bucket(16, 32, 128), 16);
    EXPECT_EQ(relative_bucket(127, 32, 128), 31);
    EXPECT_EQ(relative_bucket(128, 32, 128), 31);
    EXPECT_EQ(relative_bucket(100000, 32, 128), 31);
    int prev = 0;
    for (size_t dist = 0; dist < 300; ++dist) {
        int b = relative_bucket(dist, 32, 128);
        EXPECT_GE(b, prev);
        EXPECT_LT(b, 32);
        prev = b;
    }
}

ModelParams random_params(const ModelConfig& cfg, const ItemCatalog& cat, uint64_t seed) {
    ModelParams p = init_params(cfg, cat, seed);
    // Make the zero-initialized pieces informative for forward oracles.
    SplitMix64 rng(SplitMix64::mix(seed, 99));
    p.mem_bias = gaussian_tensor(cfg.bias_buckets + 1, cfg.heads, 0.3, rng);
    p.b_z = gaussian_tensor(1, cfg.d, 0.3, rng);
    p.b_gamma = gaussian_tensor(1, cfg.d, 0.3, rng);
    for (size_t m = 0; m < cfg.num_attributes(); ++m)
        p.gate_b[m] = gaussian_tensor(1, cfg.d, 0.3, rng);
    p.ffn_b1 = gaussian_tensor(1, 4 * cfg.d, 0.3, rng);
    p.ffn_b2 = gaussian_tensor(1, cfg.d, 0.3, rng);
    return p;
}

TEST(MemoryAttentionTest, ZeroMemorySingleItemAttendsClsAndItself) {
    ModelConfig cfg = tiny_config(4, 2, {"brand", "category"});
    ItemCatalog cat = tiny_catalog();
    ModelParams params = random_params(cfg, cat, 21);
    Tape tape;
    ParamVars pv = bind_params(tape, params, false);
    SplitMix64 rng(22);
    Var seq = tape.input(gaussian_tensor(3, 4, 1.0, rng), false);  // CLS, item, MASK
    std::vector<Var> probs;
    Var out = memory_attention(tape, Var{}, seq, pv, cfg, false, &probs);
    EXPECT_EQ(out.rows(), 3u);
    ASSERT_EQ(probs.size(), cfg.heads);
    for (const Var& p : probs) {
        // Row 1 = the item: sees CLS (col 0) and itself (col 1), never MASK.
        EXPECT_GT(p.value().at(1, 0), 0.0);
        EXPECT_GT(p.value().at(1, 1), 0.0);
        EXPECT_EQ(p.value().at(1, 2), 0.0);
        EXPECT_EQ(p.value().at(0, 1), 0.0);  // CLS sees only itself
        for (size_t r = 0; r < 3; ++r) {
            double sum = 0.0;
            for (size_t c = 0; c < 3; ++c) sum += p.value().at(r, c);
            EXPECT_NEAR(sum, 1.0, 1e-12);
        }
    }
}

TEST(MemoryAttentionTest, LaterPositionsCannotChangeEarlierOutputs) {
    ModelConfig cfg = tiny_config(8, 2, {"brand", "category"});
    ItemCatalog cat = tiny_catalog();
    ModelParams params = random_params(cfg, cat, 23);
    SplitMix64 rng(24);
    for (int trial = 0; trial < 20; ++trial) {
        size_t L = 3 + rng.next() % 4;
        Tensor seq = gaussian_tensor(L + 2, 8, 1.0, rng);
        Tensor mem = gaussian_tensor(2, 8, 1.0, rng);
        size_t j = 1 + rng.next() % (L + 1);  // perturbed sequence row ≥ 1
        Tensor perturbed = seq;
        perturbed.at(j, rng.next() % 8) += 1.0 + 0.5 * rng.next_double();

        auto run = [&](const Tensor& s) {
            Tape tape;
            ParamVars pv = bind_params(tape, params, false);
            return memory_attention(tape, tape.input(mem, false), tape.input(s, false), pv,
                                    cfg, false)
                .value();
        };
        Tensor a = run(seq), b = run(perturbed);
        for (size_t r = 0; r < j; ++r)
            for (size_t c = 0; c < 8; ++c)
                EXPECT_EQ(a.at(r, c), b.at(r, c)) << "row " << r << " col " << c;
    }
}

TEST(MemoryAttentionTest, MatchesHandEvaluationWithMemoryAndBias) {
    ModelConfig cfg = tiny_config(2, 1, {"brand", "category"});
    ItemCatalog cat = tiny_catalog();
    ModelParams params = random_params(cfg, cat, 25);
    SplitMix64 rng(26);
    Tensor mem = gaussian_tensor(1, 2, 1.0, rng);
    Tensor seq = gaussian_tensor(4, 2, 1.0, rng);  // CLS + 2 items + MASK

    Tape tape;
    ParamVars pv = bind_params(tape, params, false);
    Var out = memory_attention(tape, tape.input(mem, false), tape.input(seq, false), pv, cfg,
                               false);
    Tensor want = oracle_memory_attention(mem, seq, params.mem_wq, params.mem_wk, params.mem_wv,
                                          params.mem_wo, params.mem_bias, cfg);
    expect_tensor_near(out.value(), want, 1e-12);
}

TEST(MemoryAttentionTest, MultiHeadMatchesOracle) {
    ModelConfig cfg = tiny_config(8, 4, {"brand", "category"});
    ItemCatalog cat = tiny_catalog();
    ModelParams params = random_params(cfg, cat, 27);
    SplitMix64 rng(28);
    Tensor mem = gaussian_tensor(3, 8, 0.9, rng);
    Tensor seq = gaussian_tensor(6, 8, 0.9, rng);
    Tape tape;
    ParamVars pv = bind_params(tape, params, false);
    Var out = memory_attention(tape, tape.input(mem, false), tape.input(seq, false), pv, cfg,
                               false);
    expect_tensor_near(out.value(),
                       oracle_memory_attention(mem, seq, params.mem_wq, params.mem_wk,
                                               params.mem_wv, params.mem_wo, params.mem_bias,
                                               cfg),
                       1e-12);
}

TEST(MemoryAttentionTest, MemorySlotOrderDoesNotMatter) {
    ModelConfig cfg = tiny_config(8, 2, {"brand", "category"});
    ItemCatalog cat = tiny_catalog();
    ModelParams params = random_params(cfg, cat, 29);
    SplitMix64 rng(30);
    Tensor mem = gaussian_tensor(4, 8, 1.0, rng);
    Tensor seq = gaussian_tensor(5, 8, 1.0, rng);
    Tensor swapped = mem;
    for (size_t c = 0; c < 8; ++c) {
        std::swap(swapped.at(0, c), swapped.at(3, c));
        std::swap(swapped.at(1, c), swapped.at(2, c));
    }
    auto run = [&](const Tensor& m) {
        Tape tape;
        ParamVars pv = bind_params(tape, params, false);
        return memory_attention(tape, tape.input(m, false), tape.input(seq, false), pv, cfg,
                                false)
            .value();
    };
    expect_tensor_near(run(swapped), run(mem), 1e-12);
}

TEST(GateFuseTest, SingleTypeIsResidualPlusAttended) {
    ModelConfig cfg = tiny_config(4, 2, {"brand"});
    ItemCatalog cat(AttributeSchema{{"brand"}});
    cat.add_item("x", {"a"});
    ModelParams params = random_params(cfg, cat, 31);
    Tape tape;
    ParamVars pv = bind_params(tape, params, false);
    SplitMix64 rng(32);
    Var bar = tape.input(gaussian_tensor(3, 4, 1.0, rng), false);
    Var hat = tape.input(gaussian_tensor(3, 4, 1.0, rng), false);
    Var res = tape.input(gaussian_tensor(3, 4, 1.0, rng), false);
    Var beta;
    Var out = gate_fuse(tape, {bar}, {hat}, res, pv, &beta);
    for (double b : beta.value().values) EXPECT_DOUBLE_EQ(b, 1.0);
    for (size_t i = 0; i < out.value().values.size(); ++i)
        EXPECT_NEAR(out.value().values[i], hat.value().values[i] + res.value().values[i], 1e-15);
}

TEST(GateFuseTest, IdenticalInputsGiveUniformWeights) {
    std::vector<std::string> types = {"brand", "category", "price"};
    ModelConfig cfg = tiny_config(4, 2, types);
    ItemCatalog cat(AttributeSchema{types});
    cat.add_item("x", {"a", "b", "c"});
    ModelParams params = init_params(cfg, cat, 33);
    // Same gate weights for every type -> identical inputs give uniform betas.
    params.gate_w[1] = params.gate_w[0];
    params.gate_w[2] = params.gate_w[0];
    Tape tape;
    ParamVars pv = bind_params(tape, params, false);
    SplitMix64 rng(34);
    Var bar = tape.input(gaussian_tensor(3, 4, 1.0, rng), false);
    std::vector<Var> hats;
    for (int m = 0; m < 3; ++m) hats.push_back(tape.input(gaussian_tensor(3, 4, 1.0, rng), false));
    Var beta;
    gate_fuse(tape, {bar, bar, bar}, hats, bar, pv, &beta);
    for (double b : beta.value().values) EXPECT_NEAR(b, 1.0 / 3.0, 1e-12);
}

TEST(GateFuseTest, TwoTypeWeightsMatchHandSoftmax) {
    std::vector<std::string> types = {"brand", "category"};
    ModelConfig cfg = tiny_config(2, 1, types);
    ItemCatalog cat(AttributeSchema{types});
    cat.add_item("x", {"a", "b"});
    ModelParams params = random_params(cfg, cat, 35);
    SplitMix64 rng(36);
    Tensor bar0 = gaussian_tensor(3, 2, 1.0, rng), bar1 = gaussian_tensor(3, 2, 1.0, rng);
    Tensor hat0 = gaussian_tensor(3, 2, 1.0, rng), hat1 = gaussian_tensor(3, 2, 1.0, rng);
    Tensor res = gaussian_tensor(3, 2, 1.0, rng);
    Tape tape;
    ParamVars pv = bind_params(tape, params, false);
    Var beta;
    Var out = gate_fuse(tape,
                        {tape.input(bar0, false), tape.input(bar1, false)},
                        {tape.input(hat0, false), tape.input(hat1, false)},
                        tape.input(res, false), pv, &beta);
    for (size_t r = 0; r < 3; ++r) {
        auto gate_score = [&](const Tensor& bar, const Tensor& w, const Tensor& b) {
            double s = 0.0;
            for (size_t c = 0; c < 2; ++c) {
                double g = b.at(0, c);
                for (size_t k = 0; k < 2; ++k) g += bar.at(r, k) * w.at(k, c);
                s += g;
            }
            return s / 2.0;
        };
        double s0 = gate_score(bar0, params.gate_w[0], params.gate_b[0]);
        double s1 = gate_score(bar1, params.gate_w[1], params.gate_b[1]);
        double b0 = std::exp(s0) / (std::exp(s0) + std::exp(s1));
        EXPECT_NEAR(beta.value().at(r, 0), b0, 1e-12);
        EXPECT_NEAR(beta.value().at(r, 1), 1.0 - b0, 1e-12);
        for (size_t c = 0; c < 2; ++c)
            EXPECT_NEAR(out.value().at(r, c),
                        b0 * hat0.at(r, c) + (1 - b0) * hat1.at(r, c) + res.at(r, c), 1e-12);
    }
}

TEST(TransformerBlockTest, IdenticalRowsStayIdentical) {
    ModelConfig cfg = tiny_config(8, 2, {"brand", "category"});
    ItemCatalog cat = tiny_catalog();
    ModelParams params = random_params(cfg, cat, 37);
    Tape tape;
    ParamVars pv = bind_params(tape, params, false);
    Tensor x(4, 8, 0.0);
    SplitMix64 rng(38);
    for (size_t c = 0; c < 8; ++c) {
        double v = rng.next_gaussian();
        for (size_t r = 0; r < 4; ++r) x.at(r, c) = v;
    }
    Var out = transformer_block(tape, tape.input(x, false), pv, cfg, false);
    EXPECT_EQ(out.rows(), 4u);
    for (size_t r = 1; r < 4; ++r)
        for (size_t c = 0; c < 8; ++c) EXPECT_DOUBLE_EQ(out.value().at(r, c),
                                                        out.value().at(0, c));
}

TEST(TransformerBlockTest, MatchesHandEvaluation) {
    ModelConfig cfg = tiny_config(4, 2, {"brand", "category"});
    ItemCatalog cat = tiny_catalog();
    ModelParams params = random_params(cfg, cat, 39);
    SplitMix64 rng(40);
    Tensor x = gaussian_tensor(3, 4, 0.9, rng);
    Tape tape;
    ParamVars pv = bind_params(tape, params, false);
    std::vector<Var> probs;
    Var out = transformer_block(tape, tape.input(x, false), pv, cfg, false, &probs);
    expect_tensor_near(out.value(), oracle_block(x, params, cfg), 1e-11);
    ASSERT_EQ(probs.size(), cfg.heads);
    for (const Var& p : probs)
        for (size_t r = 0; r < 3; ++r) {
            double sum = 0.0;
            for (size_t c = 0; c < 3; ++c) sum += p.value().at(r, c);
            EXPECT_NEAR(sum, 1.0, 1e-12);
        }
}

TEST(PredictScoresTest, SingleItemSessionVectorIsGammaTimesH) {
    ModelConfig cfg = tiny_config(4, 2, {"brand", "category"});
    ItemCatalog cat = tiny_catalog();
    ModelParams params = random_params(cfg, cat, 41);
    SplitMix64 rng(42);
    Tensor H = gaussian_tensor(3, 4, 1.0, rng);  // CLS, one item, MASK
    Tape tape;
    ParamVars pv = bind_params(tape, params, false);
    Prediction pred = predict_scores(tape, tape.input(H, false), pv, cfg);
    Tensor want = oracle_predict(H, params);
    expect_tensor_near(pred.scores.value(), want, 1e-11);
    // u must be a scalar multiple of the single item row.
    double ratio = pred.session_vec.value().at(0, 0) / H.at(1, 0);
    for (size_t c = 1; c < 4; ++c)
        EXPECT_NEAR(pred.session_vec.value().at(0, c), ratio * H.at(1, c), 1e-12);
}

TEST(PredictScoresTest, TwoItemToyMatchesHandEvaluation) {
    ModelConfig cfg = tiny_config(4, 2, {"brand", "category"});
    ItemCatalog cat = tiny_catalog();
    ModelParams params = random_params(cfg, cat, 43);
    SplitMix64 rng(44);
    Tensor H = gaussian_tensor(4, 4, 1.0, rng);
    Tape tape;
    ParamVars pv = bind_params(tape, params, false);
    Prediction pred = predict_scores(tape, tape.input(H, false), pv, cfg);
    expect_tensor_near(pred.scores.value(), oracle_predict(H, params), 1e-11);
}

TEST(PredictScoresTest, AlignedEmbeddingRanksFirst) {
    ModelConfig cfg = tiny_config(4, 2, {"brand", "category"});
    ItemCatalog cat = tiny_catalog();
    ModelParams params = random_params(cfg, cat, 45);
    SplitMix64 rng(46);
    Tensor H = gaussian_tensor(3, 4, 1.0, rng);
    // First compute u, then align item 2 with it and orthogonalize the rest.
    Tape probe;
    ParamVars pv0 = bind_params(probe, params, false);
    Prediction p0 = predict_scores(probe, probe.input(H, false), pv0, cfg);
    Tensor u = p0.session_vec.value();
    params.item_emb = Tensor(5, 4, 0.0);
    for (size_t c = 0; c < 4; ++c) params.item_emb.at(2, c) = 3.0 * u.at(0, c);
    params.item_emb.at(0, 0) = u.at(0, 1);
    params.item_emb.at(0, 1) = -u.at(0, 0);  // orthogonal to u
    Tape tape;
    ParamVars pv = bind_params(tape, params, false);
    Prediction pred = predict_scores(tape, tape.input(H, false), pv, cfg);
    const Tensor& s = pred.scores.value();
    for (size_t v = 0; v < 5; ++v)
        if (v != 2) EXPECT_GT(s.at(0, 2), s.at(0, v));
}

std::vector<std::vector<AttributePattern>> toy_patterns() {
    return {{triangle_pattern("brand", {"apple", "samsung", "google"})},
            {triangle_pattern("category", {"phone", "tablet", "laptop"})}};
}

TEST(ForwardTest, ComposesExactlyFromComponentOps) {
    ModelConfig cfg = tiny_config(4, 2, {"brand", "category"});
    ItemCatalog cat = tiny_catalog();
    ModelParams params = random_params(cfg, cat, 47);
    Session s{"s1", 1, {"i1", "i3", "i2"}};
    auto pats = toy_patterns();

    Tape tape;
    ParamVars pv = bind_params(tape, params, false);
    ForwardTrace trace = forward(tape, s, cat, pats, pv, cfg, false);

    Tape manual;
    ParamVars mv = bind_params(manual, params, false);
    MultiplexSessionGraph mx = to_multiplex(s, cat);
    std::vector<int> item_idx;
    for (const auto& it : s.items) item_idx.push_back(cat.item_index(it));

    std::vector<Var> bars, hats, views;
    std::vector<Var> memories;
    for (size_t m = 0; m < 2; ++m) {
        std::vector<int> emb_idx;
        for (const auto& label : mx.layers[m].nodes)
            emb_idx.push_back(cat.value_index(static_cast<int>(m), label));
        GatGraph g = gat_graph_from_layer(mx.layers[m], cfg.max_neighbors);
        Var nodes = gat_layer(manual, g, gather_rows(mv.attr_emb[m], emb_idx), mv.relations[m],
                              cfg);
        memories.push_back(encode_pattern(manual, pats[m][0], mv.attr_emb[m], cat,
                                          static_cast<int>(m), mv.relations[m], cfg));
        std::vector<int> anchor_idx;
        for (const auto& it : s.items)
            anchor_idx.push_back(mx.anchors[m][mx.base.node_index(it)]);
        Var positioned = gather_rows(nodes, anchor_idx);
        views.push_back(positioned);
        bars.push_back(concat_rows({mv.cls_emb, positioned, mv.mask_emb}));
    }
    Var fused = concat_rows({mv.cls_emb,
                             fuse_views(manual, views, gather_rows(mv.item_emb, item_idx)),
                             mv.mask_emb});
    for (size_t m = 0; m < 2; ++m)
        hats.push_back(memory_attention(manual, memories[m], bars[m], mv, cfg, false));
    Var gated = gate_fuse(manual, bars, hats, fused, mv);
    Var encoded = transformer_block(manual, gated, mv, cfg, false);
    Prediction pred = predict_scores(manual, encoded, mv, cfg);

    EXPECT_EQ(trace.fused.value().values, fused.value().values);
    for (size_t m = 0; m < 2; ++m) {
        EXPECT_EQ(trace.seq_bar[m].value().values, bars[m].value().values);
        EXPECT_EQ(trace.pattern_memory[m].value().values, memories[m].value().values);
        EXPECT_EQ(trace.seq_hat[m].value().values, hats[m].value().values);
    }
    EXPECT_EQ(trace.gated.value().values, gated.value().values);
    EXPECT_EQ(trace.encoded.value().values, encoded.value().values);
    EXPECT_EQ(trace.scores.value().values, pred.scores.value().values);
}

TEST(ForwardTest, NoAttributesEqualsPlainTransformerPipeline) {
    ModelConfig cfg = tiny_config(8, 2, {});
    ItemCatalog cat(AttributeSchema{{}});
    cat.add_item("i1", {});
    cat.add_item("i2", {});
    cat.add_item("i3", {});
    ModelParams params = random_params(cfg, cat, 48);
    Session s{"s1", 1, {"i1", "i3", "i2", "i1"}};

    Tape tape;
    ParamVars pv = bind_params(tape, params, false);
    ForwardTrace trace = forward(tape, s, cat, {}, pv, cfg, false);

    Tape plain;
    ParamVars qv = bind_params(plain, params, false);
    std::vector<int> idx;
    for (const auto& it : s.items) idx.push_back(cat.item_index(it));
    Var x = concat_rows({qv.cls_emb, gather_rows(qv.item_emb, idx), qv.mask_emb});
    Var encoded = transformer_block(plain, x, qv, cfg, false);
    Prediction pred = predict_scores(plain, encoded, qv, cfg);

    EXPECT_EQ(trace.scores.value().values, pred.scores.value().values);
    EXPECT_EQ(trace.encoded.value().values, encoded.value().values);
    EXPECT_FALSE(trace.beta.valid());
}

TEST(ForwardTest, SingleItemSessionProducesScores) {
    ModelConfig cfg = tiny_config(4, 2, {"brand", "category"});
    ItemCatalog cat = tiny_catalog();
    ModelParams params = random_params(cfg, cat, 49);
    Tape tape;
    ParamVars pv = bind_params(tape, params, false);
    ForwardTrace trace = forward(tape, Session{"s", 1, {"i4"}}, cat, {{}, {}}, pv, cfg, false);
    EXPECT_EQ(trace.encoded.rows(), 3u);
    ASSERT_EQ(trace.scores.cols(), cat.size());
    for (double v : trace.scores.value().values) EXPECT_TRUE(std::isfinite(v));
    EXPECT_FALSE(trace.pattern_memory[0].valid());
}

TEST(ForwardTest, RepeatedItemsShareGraphRepresentations) {
    ModelConfig cfg = tiny_config(4, 2, {"brand", "category"});
    ItemCatalog cat = tiny_catalog();
    ModelParams params = random_params(cfg, cat, 50);
    Tape tape;
    ParamVars pv = bind_params(tape, params, false);
    Session s{"s", 1, {"i1", "i3", "i1"}};
    ForwardTrace trace = forward(tape, s, cat, {{}, {}}, pv, cfg, false);
    for (size_t m = 0; m < 2; ++m) {
        const Tensor& bar = trace.seq_bar[m].value();
        for (size_t c = 0; c < 4; ++c) EXPECT_EQ(bar.at(1, c), bar.at(3, c));
    }
    const Tensor& fused = trace.fused.value();
    for (size_t c = 0; c < 4; ++c) EXPECT_EQ(fused.at(1, c), fused.at(3, c));
}

TEST(ForwardTest, LongSessionsKeepMostRecentItems) {
    ModelConfig cfg = tiny_config(4, 2, {"brand", "category"});
    cfg.max_len = 3;
    ItemCatalog cat = tiny_catalog();
    ModelParams params = random_params(cfg, cat, 51);
    Tape tape;
    ParamVars pv = bind_params(tape, params, false);
    Session longer{"s", 1, {"i4", "i5", "i1", "i3", "i2"}};
    ForwardTrace a = forward(tape, longer, cat, {{}, {}}, pv, cfg, false);
    Session tail{"s", 1, {"i1", "i3", "i2"}};
    ForwardTrace b = forward(tape, tail, cat, {{}, {}}, pv, cfg, false);
    EXPECT_EQ(a.scores.value().values, b.scores.value().values);
}

TEST(ForwardTest, NormalizationFamiliesSumToOne) {
    ModelConfig cfg = tiny_config(8, 2, {"brand", "category"});
    ItemCatalog cat = tiny_catalog();
    ModelParams params = random_params(cfg, cat, 52);
    SplitMix64 rng(53);
    std::vector<std::string> ids = {"i1", "i2", "i3", "i4", "i5"};
    for (int trial = 0; trial < 25; ++trial) {
        Session s{"s", 1, {}};
        size_t len = 1 + rng.next() % 6;
        for (size_t i = 0; i < len; ++i) s.items.push_back(ids[rng.next() % ids.size()]);
        Tape tape;
        ParamVars pv = bind_params(tape, params, false);
        ForwardTrace trace = forward(tape, s, cat, toy_patterns(), pv, cfg, false);
        for (size_t a = 0; a < trace.alphas.size(); ++a)
            for (double sum : segment_sums(trace.alphas[a].value(), trace.alpha_segments[a]))
                EXPECT_NEAR(sum, 1.0, 1e-12);
        ASSERT_TRUE(trace.beta.valid());
        for (size_t r = 0; r < trace.beta.rows(); ++r) {
            double sum = 0.0;
            for (size_t c = 0; c < trace.beta.cols(); ++c) sum += trace.beta.value().at(r, c);
            EXPECT_NEAR(sum, 1.0, 1e-12);
        }
        for (const Var& p : trace.attention_rows)
            for (size_t r = 0; r < p.rows(); ++r) {
                double sum = 0.0;
                for (size_t c = 0; c < p.cols(); ++c) sum += p.value().at(r, c);
                EXPECT_NEAR(sum, 1.0, 1e-12);
            }
    }
}

TEST(ForwardTest, TrainModeIsSeedDeterministic) {
    ModelConfig cfg = tiny_config(4, 2, {"brand", "category"});
    cfg.dropout = 0.3;
    ItemCatalog cat = tiny_catalog();
    ModelParams params = random_params(cfg, cat, 54);
    Session s{"s", 1, {"i1", "i2", "i3"}};
    auto run = [&](uint64_t seed) {
        Tape tape(seed);
        ParamVars pv = bind_params(tape, params, false);
        return forward(tape, s, cat, toy_patterns(), pv, cfg, true).scores.value().values;
    };
    EXPECT_EQ(run(7), run(7));
    EXPECT_NE(run(7), run(8));
}

TEST(ForwardTest, EndToEndGradientsMatchFiniteDifferences) {
    ModelConfig cfg = tiny_config(4, 2, {"brand", "category"});
    cfg.max_len = 6;
    ItemCatalog cat = tiny_catalog();
    ModelParams params = random_params(cfg, cat, 55);
    Session s{"s", 1, {"i1", "i3", "i2", "i5"}};
    auto pats = toy_patterns();
    pats[0].push_back(triangle_pattern("brand", {"apple", "apple", "samsung"}));
    int target = cat.item_index("i4");

    std::vector<Tensor> points;
    for (const auto& [name, tensor] : params.entries()) points.push_back(*tensor);
    auto fn = [&](Tape& tape, const std::vector<Var>& vars) {
        ParamVars pv = params_from_vars(cfg, vars);
        ForwardTrace trace = forward(tape, s, cat, pats, pv, cfg, false);
        return scale(slice_cols(log_softmax_rows(trace.scores), target, target + 1), -1.0);
    };
    GradCheckReport report = grad_check(fn, points, 1e-5, 1e-3);
    EXPECT_TRUE(report.pass) << report.worst << " rel=" << report.max_rel_error;
    EXPECT_GT(report.coordinates_checked, 200u);
}

TEST(CheckpointTest, SaveLoadRoundTripsBitwise) {
    ModelConfig cfg = tiny_config(4, 2, {"brand", "category"});
    ItemCatalog cat = tiny_catalog();
    ModelParams params = random_params(cfg, cat, 56);
    auto path = (std::filesystem::temp_directory_path() / "patrec_model_ckpt.bin").string();
    save_checkpoint(path, params);
    ModelParams loaded = load_checkpoint(path, cfg, cat);
    auto a = params.entries(), b = loaded.entries();
    ASSERT_EQ(a.size(), b.size());
    for (size_t k = 0; k < a.size(); ++k) {
        EXPECT_EQ(a[k].first, b[k].first);
        EXPECT_EQ(a[k].second->values, b[k].second->values);
    }
    ModelConfig other = cfg;
    other.d = 8;
    other.heads = 2;
    EXPECT_THROW(load_checkpoint(path, other, cat), SchemaError);
    std::filesystem::remove(path);
    std::filesystem::remove(path + ".manifest");
}

TEST(ForwardTest, MismatchedSchemaRejected) {
    ModelConfig cfg = tiny_config(4, 2, {"brand"});
    ItemCatalog cat = tiny_catalog();  // schema has two types
    ModelParams params = init_params(tiny_config(4, 2, {"brand", "category"}), cat, 57);
    Tape tape;
    ParamVars pv = bind_params(tape, params, false);
    EXPECT_THROW(forward(tape, Session{"s", 1, {"i1"}}, cat, {{}}, pv, cfg, false), ConfigError);
    EXPECT_THROW(init_params(cfg, cat, 1), ConfigError);
}

}  // namespace
}  // namespace patrec
