#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "qscore/corpus.hpp"
#include "qscore/model.hpp"
#include "qscore/tokenizer.hpp"

namespace qscore {

// ---------------------------------------------------------------------------
// Target preprocessing: average-rank transform followed by min-max scaling.

/// Fitted state for one target column.
class ColumnTransform {
 public:
  /// Average ranks (1-based, ties share the mean of their positions), then
  /// min-max scaled to [0,1]. A constant column is flagged degenerate and
  /// maps everything to 0.5.
  static ColumnTransform fit(std::span<const double> values);

  /// Raw -> [0,1]. Values between training values interpolate linearly in
  /// rank; values outside the training range clamp to 0 or 1.
  double apply(double x) const;
  /// [0,1] -> the training value whose scaled rank is nearest.
  double invert(double v) const;

  bool degenerate() const { return degenerate_; }
  const std::vector<double>& distinct_values() const { return values_; }
  const std::vector<double>& average_ranks() const { return ranks_; }

 private:
  double scale(double rank) const;

  std::vector<double> values_;  // distinct training values, ascending
  std::vector<double> ranks_;   // average rank of each distinct value
  bool degenerate_ = false;
};

class TargetTransform {
 public:
  bool fitted() const { return !columns_.empty(); }
  const ColumnTransform& column(std::size_t t) const;
  std::vector<std::size_t> degenerate_columns() const;

  /// Throws Error(kNotFitted) before fit.
  TargetVector apply(const TargetVector& raw) const;
  TargetVector invert(const TargetVector& transformed) const;

  friend TargetTransform fit_target_transform(std::span<const TargetVector> train_targets);

 private:
  std::vector<ColumnTransform> columns_;
};

/// Requires at least two rows.
TargetTransform fit_target_transform(std::span<const TargetVector> train_targets);

// ---------------------------------------------------------------------------
// Metrics

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

/// Mean over all entries of -[t ln p + (1-t) ln(1-p)], p clamped to
/// [1e-7, 1-1e-7].
double bce_loss(const Matrix& predictions, const Matrix& targets);
/// Mean squared error over all entries.
double mse(const Matrix& predictions, const Matrix& targets);

// ---------------------------------------------------------------------------
// Optimizer

struct OptimizerConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

struct AdamState {
  ModelWeights<float> m;
  ModelWeights<float> v;
  std::uint64_t step = 0;

  static AdamState zeros(const ModelConfig& config);
};

/// One Adam update with bias correction for step index `step` (1-based) and
/// decoupled weight decay applied when `decay` is set.
void adam_update(std::span<float> w, std::span<const float> g, std::span<float> m, std::span<float> v,
                 std::uint64_t step, double learning_rate, const OptimizerConfig& opt, bool decay);

/// Advances state.step and updates every tensor; bias and layer-norm tensors
/// skip weight decay.
void adam_step(ModelWeights<float>& weights, const ModelWeights<float>& grads, AdamState& state,
               double learning_rate, const OptimizerConfig& opt);

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double learning_rate = 3e-5;
  std::size_t epochs = 5;
  std::size_t batch_size = 6;
  std::size_t max_len = 512;
  SplitPlan split;
  std::uint64_t seed = 42;
  OptimizerConfig optimizer;
  bool report_raw_mse = false;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j, TrainConfig defaults);
  static TrainConfig from_json(const nlohmann::json& j) { return from_json(j, TrainConfig()); }
};

struct EpochRecord {
  double train_loss = 0.0;
  double val_mse = 0.0;
  std::optional<double> val_mse_raw;
  double seconds = 0.0;
};

struct FoldRun {
  std::size_t train_rows = 0;
  std::size_t validation_rows = 0;
  double baseline_mse = 0.0;  // constant training-mean predictor on validation
  std::vector<EpochRecord> epochs;
};

struct TrainResult {
  ModelWeights<float> weights;       // from the last fold
  TargetTransform transform;         // fitted on the last fold's training rows
  std::vector<double> val_mse;       // per epoch, mean over folds
  std::vector<double> epoch_seconds; // per epoch, summed over folds
  std::vector<FoldRun> folds;
  std::uint64_t corpus_fingerprint = 0;
  std::size_t corpus_rows = 0;
};

struct TrainHooks {
  std::ostream* log = nullptr;
};

/// Encodes every corpus row once with the configured max_len.
std::vector<TokenizedInput> encode_corpus(const Corpus& corpus, const Vocabulary& vocab, std::size_t max_len);

/// Fine-tunes from a fresh seeded initialization on each fold of the split.
/// The target transform is fitted on training rows only; validation MSE is
/// measured on the transformed scale after every epoch in eval mode.
TrainResult train_run(const Corpus& corpus, const Vocabulary& vocab, const ModelConfig& model_config,
                      const TrainConfig& config, const TrainHooks& hooks = {});

/// Eval-mode predictions for the given rows, one score row per index.
Matrix predict_rows(const ModelWeights<float>& weights, std::span<const TokenizedInput> inputs,
                    std::span<const std::size_t> rows);

struct Evaluation {
  double mse = 0.0;
  std::optional<double> mse_raw;
  std::size_t rows = 0;
};

/// MSE of `weights` on the validation side of the last fold of `config.split`,
/// with the target transform refitted on that fold's training rows.
Evaluation evaluate(const Corpus& corpus, const Vocabulary& vocab, const ModelWeights<float>& weights,
                    const TrainConfig& config);

nlohmann::json run_manifest(const ModelConfig& model_config, const TrainConfig& config, const TrainResult& result);

struct EvalGrid {
  std::vector<double> learning_rates;
  std::size_t epochs = 0;
  std::vector<std::vector<double>> mse;  // [lr][epoch]

  nlohmann::json to_json() const;
  /// Rows are epochs, columns are learning rates.
  std::string to_csv() const;
};

inline const std::vector<double> kDefaultLearningRates = {1e-5, 3e-5, 5e-5, 7e-5, 9e-5};

/// Trains once per learning rate with identical seed and split. `on_run`
/// receives every finished run.
EvalGrid lr_sweep(const Corpus& corpus, const Vocabulary& vocab, const ModelConfig& model_config,
                  const TrainConfig& base, const std::vector<double>& learning_rates, const TrainHooks& hooks = {},
                  const std::function<void(double, const TrainResult&)>& on_run = {});

}  // namespace qscore
