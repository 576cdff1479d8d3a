#include "patrec/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "patrec/errors.hpp"
#include "patrec/eval.hpp"

namespace patrec {

using ordered_json = nlohmann::ordered_json;

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("train: batch size must be at least 1");
    if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0))
        throw ConfigError("train: warmup fraction must lie strictly between 0 and 1");
    if (epochs < 1) throw ConfigError("train: need at least one epoch");
    if (lr < 0.0) throw ConfigError("train: learning rate must be non-negative");
    if (weight_decay < 0.0) throw ConfigError("train: weight decay must be non-negative");
    if (loss == LossKind::bpr && bpr_negatives < 1)
        throw ConfigError("train: bpr needs at least one negative per example");
}

Var compute_loss(Var scores, int target, LossKind kind, const std::vector<int>& negatives) {
    if (scores.rows() != 1) throw ShapeError("compute_loss: scores must be a single row");
    int n = static_cast<int>(scores.cols());
    if (target < 0 || target >= n) throw InputError("compute_loss: target item out of range");
    if (kind == LossKind::cross_entropy)
        return scale(slice_cols(log_softmax_rows(scores), target, target + 1), -1.0);

    if (negatives.empty()) throw InputError("compute_loss: bpr needs sampled negatives");
    Var target_score = slice_cols(scores, target, target + 1);
    Var acc;
    for (int neg : negatives) {
        if (neg < 0 || neg >= n) throw InputError("compute_loss: negative item out of range");
        Var margin = add(target_score, scale(slice_cols(scores, neg, neg + 1), -1.0));
        Var term = scale(log_sigmoid(margin), -1.0);
        acc = acc.valid() ? add(acc, term) : term;
    }
    return scale(acc, 1.0 / static_cast<double>(negatives.size()));
}

double lr_at(size_t step, size_t total_steps, const TrainConfig& config) {
    if (total_steps == 0) return 0.0;
    double total = static_cast<double>(total_steps);
    double warm = config.warmup_fraction * total;
    double s = std::min(static_cast<double>(step), total);
    if (s <= warm) return config.lr * s / warm;
    return config.lr * (total - s) / (total - warm);
}

std::vector<PrefixExample> expand_prefixes(const std::vector<Session>& sessions) {
    std::vector<PrefixExample> out;
    for (size_t i = 0; i < sessions.size(); ++i)
        for (size_t len = 1; len < sessions[i].items.size(); ++len) out.push_back({i, len});
    return out;
}

AdamW::AdamW(const ModelParams& params, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& [name, tensor] : params.entries()) {
        m_.emplace_back(tensor->rows(), tensor->cols(), 0.0);
        v_.emplace_back(tensor->rows(), tensor->cols(), 0.0);
    }
}

void AdamW::step(ModelParams& params, const std::vector<Tensor>& grads, double lr,
                 double weight_decay) {
    auto entries = params.entries();
    if (grads.size() != entries.size())
        throw ShapeError("adam: gradient count does not match parameter count");
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < entries.size(); ++i) {
        Tensor& p = *entries[i].second;
        const Tensor& g = grads[i];
        if (g.shape != p.shape)
            throw ShapeError("adam: gradient shape mismatch for " + entries[i].first);
        for (size_t k = 0; k < p.values.size(); ++k) {
            double gk = g.values[k];
            m_[i].values[k] = beta1_ * m_[i].values[k] + (1.0 - beta1_) * gk;
            v_[i].values[k] = beta2_ * v_[i].values[k] + (1.0 - beta2_) * gk * gk;
            double mhat = m_[i].values[k] / bc1;
            double vhat = v_[i].values[k] / bc2;
            p.values[k] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay * p.values[k]);
        }
    }
}

std::string to_json_line(const EpochLog& log) {
    ordered_json j;
    j["epoch"] = log.epoch;
    j["train_loss"] = log.train_loss;
    j["valid_mrr10"] = log.valid_mrr10;
    j["lr"] = log.lr;
    return j.dump();
}

namespace {

struct PreparedExample {
    Session prefix;
    std::vector<std::vector<AttributePattern>> memory;
    int target = 0;
};

// Truncate to the encoder window, retrieve pattern memory, resolve the target.
PreparedExample prepare(const Session& session, size_t prefix_len, const ItemCatalog& catalog,
                        const std::vector<PatternStore>& stores, const ModelConfig& model_config,
                        const RetrievalConfig& rcfg) {
    PreparedExample out;
    out.prefix = Session{session.id, session.day,
                         {session.items.begin(), session.items.begin() + prefix_len}};
    if (out.prefix.items.size() > model_config.max_len)
        out.prefix.items.assign(out.prefix.items.end() - model_config.max_len,
                                out.prefix.items.end());
    out.memory = retrieve_memory(out.prefix, catalog, stores, rcfg);
    out.target = catalog.item_index(session.items[prefix_len]);
    if (out.target < 0) throw InputError("train: item " + session.items[prefix_len] +
                                         " missing from the catalog");
    return out;
}

}  // namespace

TrainResult train(const DatasetSplit& split, const ItemCatalog& catalog,
                  const std::vector<PatternStore>& stores, const ModelConfig& model_config,
                  const TrainConfig& config) {
    model_config.validate();
    config.validate();
    if (split.train.empty()) throw ConfigError("train: empty training split");
    auto examples = expand_prefixes(split.train);
    if (examples.empty())
        throw ConfigError("train: no usable example (every session has a single item)");

    RetrievalConfig rcfg{static_cast<int>(model_config.max_patterns)};
    std::vector<PreparedExample> prepared;
    prepared.reserve(examples.size());
    for (const auto& ex : examples)
        prepared.push_back(prepare(split.train[ex.session], ex.prefix_len, catalog, stores,
                                   model_config, rcfg));

    // Validation: each session's final click given everything before it.
    std::vector<PreparedExample> valid;
    for (const Session& s : split.valid) {
        if (s.items.size() < 2) continue;
        valid.push_back(prepare(s, s.items.size() - 1, catalog, stores, model_config, rcfg));
    }

    ModelParams params = init_params(model_config, catalog, config.seed);
    AdamW optimizer(params);
    size_t steps_per_epoch = (prepared.size() + config.batch_size - 1) / config.batch_size;
    size_t total_steps = steps_per_epoch * config.epochs;

    TrainResult result;
    result.params = params;
    double best_mrr = -1.0;
    size_t epochs_since_best = 0;
    size_t global_step = 0;

    std::vector<size_t> order(prepared.size());
    std::iota(order.begin(), order.end(), 0);

    for (size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        SplitMix64 shuffle_rng(SplitMix64::mix(config.seed, epoch));
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.next() % i]);

        double loss_sum = 0.0;
        double last_lr = 0.0;
        for (size_t start = 0; start < order.size(); start += config.batch_size) {
            size_t end = std::min(start + config.batch_size, order.size());
            double batch_scale = 1.0 / static_cast<double>(end - start);

            std::vector<Tensor> grads;
            for (const auto& [name, tensor] : params.entries())
                grads.emplace_back(tensor->rows(), tensor->cols(), 0.0);

            for (size_t b = start; b < end; ++b) {
                const PreparedExample& ex = prepared[order[b]];
                uint64_t stream = SplitMix64::mix(SplitMix64::mix(config.seed, epoch), order[b]);
                Tape tape(SplitMix64::mix(stream, 1));
                ParamVars pv = bind_params(tape, params, true);
                ForwardTrace trace =
                    forward(tape, ex.prefix, catalog, ex.memory, pv, model_config, true);

                std::vector<int> negatives;
                if (config.loss == LossKind::bpr) {
                    SplitMix64 neg_rng(SplitMix64::mix(stream, 2));
                    while (negatives.size() < config.bpr_negatives) {
                        int cand = static_cast<int>(neg_rng.next() % catalog.size());
                        if (cand != ex.target) negatives.push_back(cand);
                    }
                }
                Var loss = compute_loss(trace.scores, ex.target, config.loss, negatives);
                tape.backward(loss);
                loss_sum += loss.value().at(0, 0);
                for (size_t i = 0; i < pv.named.size(); ++i) {
                    const Tensor& g = pv.named[i].second.grad();
                    for (size_t k = 0; k < g.values.size(); ++k)
                        grads[i].values[k] += batch_scale * g.values[k];
                }
            }
            ++global_step;
            last_lr = lr_at(global_step, total_steps, config);
            optimizer.step(params, grads, last_lr, config.weight_decay);
        }

        // Validation MRR@10 with the deterministic tie rule.
        double mrr = 0.0;
        for (const PreparedExample& ex : valid) {
            Tape tape;
            ParamVars pv = bind_params(tape, params, false);
            ForwardTrace trace =
                forward(tape, ex.prefix, catalog, ex.memory, pv, model_config, false);
            size_t rank = rank_by_score(trace.scores.value().values, ex.target, catalog);
            if (rank <= 10) mrr += 1.0 / static_cast<double>(rank);
        }
        if (!valid.empty()) mrr /= static_cast<double>(valid.size());

        result.log.push_back({epoch, loss_sum / static_cast<double>(prepared.size()), mrr,
                              last_lr});

        if (valid.empty()) {
            result.params = params;  // keep the latest state
            result.best_epoch = epoch;
            continue;
        }
        if (mrr > best_mrr) {
            best_mrr = mrr;
            result.params = params;
            result.best_epoch = epoch;
            epochs_since_best = 0;
        } else if (++epochs_since_best >= config.patience) {
            break;
        }
    }
    return result;
}

}  // namespace patrec
