#pragma once

#include <string>
#include <utility>
#include <vector>

#include "patrec/autodiff.hpp"
#include "patrec/miner.hpp"
#include "patrec/sessions.hpp"

namespace patrec {

struct ModelConfig {
    size_t d = 100;             // hidden width, split across heads
    size_t heads = 4;
    size_t max_neighbors = 12;  // graph-attention neighborhood cap, self included
    size_t max_patterns = 12;   // memory slots per attribute type
    size_t bias_buckets = 32;   // relative-position buckets (+1 shared memory bucket)
    size_t max_distance = 128;  // distances at or past this share the last bucket
    size_t max_len = 50;        // longest encoded session
    double dropout = 0.0;       // between-module dropout; attention dropout is fixed 0.2
    std::vector<std::string> attribute_types;

    size_t num_attributes() const { return attribute_types.size(); }
    size_t head_dim() const { return d / heads; }
    // Throws ConfigError on zero counts or d not divisible by heads.
    void validate() const;
};

// Every trainable tensor, enumerable in a stable order for checkpoints,
// optimizer state and gradient checks.
struct ModelParams {
    ModelConfig config;

    Tensor item_emb;               // N×d
    std::vector<Tensor> attr_emb;  // per type: (vocab+1)×d, last row = out-of-vocabulary
    std::vector<Tensor> relations; // per type: 3×d rows {out-edge, in-edge, self-loop}
    std::vector<Tensor> gate_w;    // per type: d×d
    std::vector<Tensor> gate_b;    // per type: 1×d
    Tensor cls_emb;                // 1×d
    Tensor mask_emb;               // 1×d
    Tensor mem_wq, mem_wk, mem_wv, mem_wo;  // d×d memory-attention projections
    Tensor mem_bias;               // (bias_buckets+1)×heads, last row = memory slots
    Tensor blk_wq, blk_wk, blk_wv, blk_wo;  // d×d transformer-block projections
    Tensor ffn_w1, ffn_b1;         // d×4d, 1×4d
    Tensor ffn_w2, ffn_b2;         // 4d×d, 1×d
    Tensor ln1_gain, ln1_bias;     // 1×d
    Tensor ln2_gain, ln2_bias;     // 1×d
    Tensor pos_emb;                // (max_len+2)×d reversed positional table
    Tensor w_z, b_z;               // 2d×d, 1×d
    Tensor w_gamma, b_gamma;       // d×d, 1×d
    Tensor r_gamma;                // 1×d

    std::vector<std::pair<std::string, Tensor*>> entries();
    std::vector<std::pair<std::string, const Tensor*>> entries() const;
};

ModelParams init_params(const ModelConfig& config, const ItemCatalog& catalog, uint64_t seed);

// Checkpoint = named-array file plus a manifest line
// {"d":…,"heads":…,"M":…,"attribute_types":[…],"max_len":…} at path + ".manifest".
void save_checkpoint(const std::string& path, const ModelParams& params);
// Throws SchemaError when manifest or array shapes disagree with config/catalog.
ModelParams load_checkpoint(const std::string& path, const ModelConfig& config,
                            const ItemCatalog& catalog);

// Tape-bound view of ModelParams; `named` follows the entries() order.
struct ParamVars {
    std::vector<std::pair<std::string, Var>> named;

    Var item_emb;
    std::vector<Var> attr_emb, relations, gate_w, gate_b;
    Var cls_emb, mask_emb;
    Var mem_wq, mem_wk, mem_wv, mem_wo, mem_bias;
    Var blk_wq, blk_wk, blk_wv, blk_wo;
    Var ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    Var ln1_gain, ln1_bias, ln2_gain, ln2_bias;
    Var pos_emb, w_z, b_z, w_gamma, b_gamma, r_gamma;
};

ParamVars bind_params(Tape& tape, const ModelParams& params, bool requires_grad);
// Reassembles a ParamVars from vars laid out in entries() order (gradient checks).
ParamVars params_from_vars(const ModelConfig& config, const std::vector<Var>& vars);

// Attention-ready graph: one (center, neighbor, relation) triple per attention
// slot, grouped by center. Relation 0 = center→neighbor transition, 1 =
// neighbor→center, 2 = self-loop. Neighbor lists beyond max_neighbors keep the
// most recent transitions; the self-loop always stays.
struct GatGraph {
    size_t node_count = 0;
    std::vector<int> pair_center;
    std::vector<int> pair_neighbor;
    std::vector<int> pair_relation;
};

GatGraph gat_graph_from_layer(const SessionGraph& layer, size_t max_neighbors);
GatGraph gat_graph_from_pattern(const LabeledGraph& pattern);

// Multi-head relational graph attention: score(i,j) = leaky_relu(r_rel ·
// (e_j ∘ e_i)) per head slice, softmax over i's neighborhood, output =
// attention-weighted sum of neighbor embeddings, heads concatenated.
// alphas_out (optional) receives the per-head attention columns paired with
// pair_center segments.
Var gat_layer(Tape& tape, const GatGraph& graph, Var embeds, Var relations,
              const ModelConfig& config, std::vector<Var>* alphas_out = nullptr);

// Graph-attention encode + mean pool over pattern nodes -> 1×d memory slot.
// Unknown labels hit the out-of-vocabulary embedding row.
Var encode_pattern(Tape& tape, const AttributePattern& pattern, Var attr_table,
                   const ItemCatalog& catalog, int type_idx, Var relations,
                   const ModelConfig& config);

// Averages the per-type node representations and adds the item embedding;
// returns item_rows untouched when there are no attribute views.
Var fuse_views(Tape& tape, const std::vector<Var>& view_rows, Var item_rows);

// Bucket index for a non-negative key→query distance: exact buckets below
// buckets/2, then log-spaced up to max_distance, capped at buckets-1.
int relative_bucket(size_t distance, size_t buckets, size_t max_distance);

// Memory-augmented attention over [memory ‖ CLS ‖ items ‖ MASK]: sequence
// position i attends to all memory slots plus sequence positions ≤ i, with a
// bucketed relative-position bias on sequence-sequence logits and the shared
// final bucket on memory keys. Returns the (L+2)×d attended sequence; no
// residual or normalization is applied here. memory may be invalid() for the
// no-pattern case. probs_out receives per-head attention matrices.
Var memory_attention(Tape& tape, Var memory, Var seq, const ParamVars& pv,
                     const ModelConfig& config, bool train,
                     std::vector<Var>* probs_out = nullptr);

// Softmax over per-type gate scores (mean-reduced affine of the attention
// inputs) weighting the attention outputs, plus the fused residual.
// beta_out receives the (L+2)×M gate matrix.
Var gate_fuse(Tape& tape, const std::vector<Var>& seq_bar, const std::vector<Var>& seq_hat,
              Var residual, const ParamVars& pv, Var* beta_out = nullptr);

// One post-norm transformer block (bidirectional self-attention + 4d
// feed-forward, residuals, layer norms) over the L+2 rows.
Var transformer_block(Tape& tape, Var x, const ParamVars& pv, const ModelConfig& config,
                      bool train, std::vector<Var>* probs_out = nullptr);

// Reversed-position head: z_i = tanh([h_i ‖ t_{L-i+1}]·W_z + b_z), soft
// attention γ_i = r_γ·sigmoid(z_i·W_γ + z_MASK + b_γ) over item rows,
// u = Σ γ_i h_i, scores = u·item_embᵀ.
struct Prediction {
    Var session_vec;  // 1×d
    Var scores;       // 1×N
};
Prediction predict_scores(Tape& tape, Var encoded, const ParamVars& pv,
                          const ModelConfig& config);

struct ForwardTrace {
    std::vector<Var> layer_nodes;     // per type: per-node graph representations
    std::vector<Var> pattern_memory;  // per type: P×d memory (invalid when P = 0)
    std::vector<Var> seq_bar;         // per type: (L+2)×d attention inputs
    Var fused;                        // (L+2)×d residual [CLS ‖ fused items ‖ MASK]
    std::vector<Var> seq_hat;         // per type: (L+2)×d attention outputs
    Var gated;                        // (L+2)×d
    Var encoded;                      // (L+2)×d transformer output
    Var session_vec;                  // 1×d
    Var scores;                       // 1×N

    // Normalization diagnostics for invariant checks.
    std::vector<Var> alphas;          // graph-attention columns (with segments)
    std::vector<std::vector<int>> alpha_segments;
    Var beta;                         // (L+2)×M, invalid when M = 0
    std::vector<Var> attention_rows;  // every attention probability matrix
};

// Full pipeline: multiplex graphs -> graph attention per type -> pattern
// memories -> per-type memory attention -> gating -> transformer -> scores.
// Sessions longer than max_len keep their most recent max_len items. With no
// attribute types this is exactly the plain embedding transformer pipeline.
ForwardTrace forward(Tape& tape, const Session& session, const ItemCatalog& catalog,
                     const std::vector<std::vector<AttributePattern>>& patterns_per_type,
                     const ParamVars& pv, const ModelConfig& config, bool train);

}  // namespace patrec
