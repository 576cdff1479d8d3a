#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "patrec/model.hpp"
#include "patrec/retrieval.hpp"
#include "patrec/sessions.hpp"

namespace patrec {

enum class LossKind { cross_entropy, bpr };

struct TrainConfig {
    double lr = 1e-3;
    double weight_decay = 1e-5;  // decoupled: applied outside the Adam moments
    size_t batch_size = 100;
    size_t epochs = 10;
    uint64_t seed = 0;
    LossKind loss = LossKind::cross_entropy;
    double warmup_fraction = 0.1;  // share of total steps spent warming up
    size_t bpr_negatives = 1;      // uniform negatives per example
    size_t patience = 5;           // epochs without validation improvement

    // Throws ConfigError on batch_size < 1, warmup outside (0,1), zero
    // epochs, or negative lr / weight decay.
    void validate() const;
};

// cross_entropy: −log softmax(scores)[target].
// bpr: mean over negatives of −log sigmoid(scores[target] − scores[neg]).
// scores must be one row; target (and every negative) must index into it.
Var compute_loss(Var scores, int target, LossKind kind,
                 const std::vector<int>& negatives = {});

// Piecewise-linear schedule: 0 → lr over the first warmup fraction of
// total_steps, then lr → 0 over the remainder. 0 ≤ step ≤ total_steps.
double lr_at(size_t step, size_t total_steps, const TrainConfig& config);

// Next-item examples: items[0..len) predicts items[len], len ≥ 1.
struct PrefixExample {
    size_t session = 0;  // index into the source vector
    size_t prefix_len = 0;
};
std::vector<PrefixExample> expand_prefixes(const std::vector<Session>& sessions);

// AdamW: bias-corrected moments, decoupled weight decay. Moment buffers
// mirror params.entries(); a zero-gradient step with zero decay is a no-op.
class AdamW {
public:
    explicit AdamW(const ModelParams& params, double beta1 = 0.9, double beta2 = 0.999,
                   double eps = 1e-8);
    // grads aligned with params.entries(); lr and decay may vary per step.
    void step(ModelParams& params, const std::vector<Tensor>& grads, double lr,
              double weight_decay);
    size_t steps_taken() const { return t_; }

private:
    std::vector<Tensor> m_, v_;
    double beta1_, beta2_, eps_;
    size_t t_ = 0;
};

struct EpochLog {
    size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double valid_mrr10 = 0.0;
    double lr = 0.0;  // learning rate of the epoch's final step
};
// {"epoch": int, "train_loss": float, "valid_mrr10": float, "lr": float}
std::string to_json_line(const EpochLog& log);

struct TrainResult {
    ModelParams params;  // best validation MRR@10; final epoch without valid data
    std::vector<EpochLog> log;
    size_t best_epoch = 0;  // 1-based
};

// Prefix-expanded mini-batch training with per-epoch validation MRR@10 and
// early stopping. All randomness (shuffle, dropout, negative sampling)
// derives from config.seed. Throws ConfigError when the training split is
// empty or yields no example.
TrainResult train(const DatasetSplit& split, const ItemCatalog& catalog,
                  const std::vector<PatternStore>& stores, const ModelConfig& model_config,
                  const TrainConfig& config);

}  // namespace patrec
