#pragma once

// Adam over shuffled mini-batches with early stopping on validation MSE.

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "streetreview/model.hpp"
#include "streetreview/stats.hpp"

namespace streetreview::model {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 16;
  std::size_t max_epochs = 200;
  std::size_t patience = 20;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  bool restore_best = true;  // false: return the last epoch's parameters

  void validate() const {
    if (!(learning_rate >= 0.0)) throw invalid_argument("learning_rate must be >= 0");
    if (batch_size == 0 || max_epochs == 0 || patience == 0)
      throw invalid_argument("batch_size, max_epochs and patience must be positive");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && epsilon > 0))
      throw invalid_argument("invalid Adam hyperparameters");
  }
};

inline json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},       {"patience", c.patience},
          {"beta1", c.beta1},                 {"beta2", c.beta2},
          {"epsilon", c.epsilon},             {"seed", c.seed},
          {"restore_best", c.restore_best}};
}

struct EpochStats {
  double train_mse = 0.0;
  double val_mse = 0.0;
  std::optional<double> val_r2;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;  // 1-based
  bool stopped_early = false;
};

inline std::string history_csv(const TrainHistory& h) {
  std::string out = "epoch,train_mse,val_mse,val_r2\n";
  for (std::size_t i = 0; i < h.epochs.size(); ++i) {
    const auto& e = h.epochs[i];
    out += std::to_string(i + 1) + "," + json(e.train_mse).dump() + "," + json(e.val_mse).dump() +
           "," + (e.val_r2 ? json(*e.val_r2).dump() : std::string("nan")) + "\n";
  }
  return out;
}

class Adam {
 public:
  Adam(std::size_t n, const TrainConfig& cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::vector<double>& params, const std::vector<double>& grad) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
      const double mhat = m_[i] / bc1;
      const double vhat = v_[i] / bc2;
      params[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
  }

 private:
  TrainConfig cfg_;
  std::vector<double> m_, v_;
  std::uint64_t t_ = 0;
};

struct SetMetrics {
  double mse = 0.0;  // mean of per-example masked MSE
  std::optional<double> r2;
  std::vector<Output> preds;
};

inline SetMetrics evaluate_set(const ModelParams& p, std::span<const Example> set,
                               std::size_t jobs = 1) {
  SetMetrics m;
  if (set.empty()) return m;
  std::vector<segmentation::FeatureSequence> seqs;
  seqs.reserve(set.size());
  for (const auto& e : set) seqs.push_back(e.seq);
  for (const auto& pr : predict_batch(p, seqs, jobs)) m.preds.push_back(pr.raw);
  std::vector<double> flat_pred, flat_target;
  std::vector<unsigned char> flat_mask;
  double s = 0.0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    s += loss_mse(m.preds[i], set[i].target, set[i].mask);
    flat_pred.insert(flat_pred.end(), m.preds[i].begin(), m.preds[i].end());
    flat_target.insert(flat_target.end(), set[i].target.begin(), set[i].target.end());
    flat_mask.insert(flat_mask.end(), set[i].mask.begin(), set[i].mask.end());
  }
  m.mse = s / static_cast<double>(set.size());
  if (set.size() >= 2) {
    const auto cols = stats::column_sums_of_squares(flat_pred, flat_target, flat_mask, kOutputDim);
    m.r2 = stats::pooled_r2(cols);
  }
  return m;
}

struct TrainResult {
  ModelParams params;
  TrainHistory history;
};

// Deterministic given the model and train seeds. Returns the parameters of the
// epoch with the lowest validation MSE, or of the last epoch run when
// restore_best is off.
inline TrainResult train(std::span<const Example> train_set, std::span<const Example> val_set,
                         const ModelConfig& model_cfg, const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.empty() || val_set.empty())
    throw invalid_argument("train: train and validation sets must be non-empty");
  for (const auto& set : {train_set, val_set})
    for (const auto& e : set)
      for (std::size_t i = 0; i < kOutputDim; ++i)
        if (e.mask[i] && !std::isfinite(e.target[i]))
          throw invalid_argument("train: unresolved target for " + e.seq.frame_id + " output " +
                                 ratings::output_label(i));

  ModelParams params = init_model(model_cfg);
  TrainResult result{params, {}};
  Adam adam(params.size(), cfg);
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    shuffle(order, rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<const Example*> batch;
      for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch_size); ++k)
        batch.push_back(&train_set[order[k]]);
      const auto g = gradients(params, std::span<const Example* const>(batch), cfg.jobs);
      adam.step(params.values(), g.values());
    }
    const auto tr = evaluate_set(params, train_set, cfg.jobs);
    const auto va = evaluate_set(params, val_set, cfg.jobs);
    if (!std::isfinite(tr.mse) || !std::isfinite(va.mse))
      throw Error("diverged", "training diverged at epoch " + std::to_string(epoch));
    result.history.epochs.push_back({tr.mse, va.mse, va.r2});
    if (va.mse < best) {
      best = va.mse;
      since_best = 0;
      result.params = params;
      result.history.best_epoch = epoch;
    } else if (++since_best >= cfg.patience) {
      result.history.stopped_early = true;
      break;
    }
  }
  if (!cfg.restore_best) result.params = params;
  return result;
}

}  // namespace streetreview::model
