#include "qscore/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>

#include "qscore/error.hpp"
#include "qscore/rng.hpp"
#include "qscore/textfeat.hpp"

namespace qscore {

// ---------------------------------------------------------------------------
// Rank transform

ColumnTransform ColumnTransform::fit(std::span<const double> values) {
  if (values.size() < 2) throw Error(ErrorCode::kInvalidConfig, "rank transform needs at least 2 rows");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());

  ColumnTransform t;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    // Positions i..j-1 hold one tied value; 1-based ranks i+1..j average to (i+j+1)/2.
    t.values_.push_back(sorted[i]);
    t.ranks_.push_back(static_cast<double>(i + j + 1) / 2.0);
    i = j;
  }
  t.degenerate_ = t.values_.size() == 1;
  return t;
}

double ColumnTransform::scale(double rank) const {
  if (degenerate_) return 0.5;
  return (rank - ranks_.front()) / (ranks_.back() - ranks_.front());
}

double ColumnTransform::apply(double x) const {
  if (values_.empty()) throw Error(ErrorCode::kNotFitted, "column transform used before fit");
  if (degenerate_) return 0.5;
  if (x <= values_.front()) return 0.0;
  if (x >= values_.back()) return 1.0;
  const auto it = std::lower_bound(values_.begin(), values_.end(), x);
  const auto hi = static_cast<std::size_t>(it - values_.begin());
  if (*it == x) return scale(ranks_[hi]);
  const std::size_t lo = hi - 1;
  const double frac = (x - values_[lo]) / (values_[hi] - values_[lo]);
  return scale(ranks_[lo] + frac * (ranks_[hi] - ranks_[lo]));
}

double ColumnTransform::invert(double v) const {
  if (values_.empty()) throw Error(ErrorCode::kNotFitted, "column transform used before fit");
  if (degenerate_) return values_.front();
  v = std::clamp(v, 0.0, 1.0);
  // Scaled ranks are strictly increasing; find the nearest one.
  std::size_t lo = 0;
  std::size_t hi = values_.size() - 1;
  while (hi - lo > 1) {
    const std::size_t mid = (lo + hi) / 2;
    if (scale(ranks_[mid]) <= v) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double dlo = std::abs(v - scale(ranks_[lo]));
  const double dhi = std::abs(scale(ranks_[hi]) - v);
  return dhi < dlo ? values_[hi] : values_[lo];
}

const ColumnTransform& TargetTransform::column(std::size_t t) const {
  if (!fitted()) throw Error(ErrorCode::kNotFitted, "target transform used before fit");
  return columns_.at(t);
}

std::vector<std::size_t> TargetTransform::degenerate_columns() const {
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < columns_.size(); ++t) {
    if (columns_[t].degenerate()) out.push_back(t);
  }
  return out;
}

TargetVector TargetTransform::apply(const TargetVector& raw) const {
  if (!fitted()) throw Error(ErrorCode::kNotFitted, "target transform used before fit");
  TargetVector out;
  for (std::size_t t = 0; t < kNumTargets; ++t) out[t] = columns_[t].apply(raw[t]);
  return out;
}

TargetVector TargetTransform::invert(const TargetVector& transformed) const {
  if (!fitted()) throw Error(ErrorCode::kNotFitted, "target transform used before fit");
  TargetVector out;
  for (std::size_t t = 0; t < kNumTargets; ++t) out[t] = columns_[t].invert(transformed[t]);
  return out;
}

TargetTransform fit_target_transform(std::span<const TargetVector> train_targets) {
  if (train_targets.size() < 2) throw Error(ErrorCode::kInvalidConfig, "rank transform needs at least 2 rows");
  TargetTransform tt;
  std::vector<double> col(train_targets.size());
  for (std::size_t t = 0; t < kNumTargets; ++t) {
    for (std::size_t i = 0; i < train_targets.size(); ++i) col[i] = train_targets[i][t];
    tt.columns_.push_back(ColumnTransform::fit(col));
  }
  return tt;
}

// ---------------------------------------------------------------------------
// Metrics

namespace {
void check_same_shape(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows || a.cols != b.cols || a.data.size() != a.rows * a.cols || b.data.size() != b.rows * b.cols) {
    throw Error(ErrorCode::kShapeMismatch, std::to_string(a.rows) + "x" + std::to_string(a.cols) + " vs " +
                                               std::to_string(b.rows) + "x" + std::to_string(b.cols));
  }
  if (a.data.empty()) throw Error(ErrorCode::kShapeMismatch, "empty matrices");
}
}  // namespace

double bce_loss(const Matrix& predictions, const Matrix& targets) {
  check_same_shape(predictions, targets);
  constexpr double kEps = 1e-7;
  double sum = 0.0;
  for (std::size_t i = 0; i < predictions.data.size(); ++i) {
    const double p = std::clamp(predictions.data[i], kEps, 1.0 - kEps);
    const double t = targets.data[i];
    sum += -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
  }
  return sum / static_cast<double>(predictions.data.size());
}

double mse(const Matrix& predictions, const Matrix& targets) {
  check_same_shape(predictions, targets);
  double sum = 0.0;
  for (std::size_t i = 0; i < predictions.data.size(); ++i) {
    const double d = predictions.data[i] - targets.data[i];
    sum += d * d;
  }
  return sum / static_cast<double>(predictions.data.size());
}

// ---------------------------------------------------------------------------
// Optimizer

AdamState AdamState::zeros(const ModelConfig& config) {
  return AdamState{ModelWeights<float>::zeros(config), ModelWeights<float>::zeros(config), 0};
}

void adam_update(std::span<float> w, std::span<const float> g, std::span<float> m, std::span<float> v,
                 std::uint64_t step, double learning_rate, const OptimizerConfig& opt, bool decay) {
  if (g.size() != w.size() || m.size() != w.size() || v.size() != w.size()) {
    throw Error(ErrorCode::kShapeMismatch, "optimizer state does not match weights");
  }
  if (step == 0) throw Error(ErrorCode::kInvalidConfig, "adam step index is 1-based");
  const double t = static_cast<double>(step);
  const double bc1 = 1.0 - std::pow(opt.beta1, t);
  const double bc2 = 1.0 - std::pow(opt.beta2, t);
  const double wd = decay ? opt.weight_decay : 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double gi = g[i];
    const double mi = opt.beta1 * m[i] + (1.0 - opt.beta1) * gi;
    const double vi = opt.beta2 * v[i] + (1.0 - opt.beta2) * gi * gi;
    m[i] = static_cast<float>(mi);
    v[i] = static_cast<float>(vi);
    const double update = (mi / bc1) / (std::sqrt(vi / bc2) + opt.epsilon);
    w[i] = static_cast<float>(w[i] - learning_rate * (update + wd * w[i]));
  }
}

void adam_step(ModelWeights<float>& weights, const ModelWeights<float>& grads, AdamState& state, double learning_rate,
               const OptimizerConfig& opt) {
  if (!(weights.config == grads.config) || !(weights.config == state.m.config) || !(weights.config == state.v.config)) {
    throw Error(ErrorCode::kShapeMismatch, "weights, gradients and optimizer state disagree on config");
  }
  ++state.step;
  std::vector<Tensor<float>*> w, m, v;
  std::vector<const Tensor<float>*> g;
  std::vector<std::string> names;
  weights.visit([&](const std::string& name, Tensor<float>& t) {
    names.push_back(name);
    w.push_back(&t);
  });
  grads.visit([&](const std::string&, const Tensor<float>& t) { g.push_back(&t); });
  state.m.visit([&](const std::string&, Tensor<float>& t) { m.push_back(&t); });
  state.v.visit([&](const std::string&, Tensor<float>& t) { v.push_back(&t); });
  for (std::size_t i = 0; i < w.size(); ++i) {
    adam_update(w[i]->data, g[i]->data, m[i]->data, v[i]->data, state.step, learning_rate, opt,
                !decay_exempt(names[i]));
  }
}

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::kInvalidConfig, msg); };
  if (!(learning_rate >= 1e-6 && learning_rate <= 1e-2)) fail("learning_rate outside [1e-6, 1e-2]");
  if (batch_size == 0) fail("batch_size must be positive");
  if (max_len < 3 || max_len > kMaxSequenceLength) fail("max_len must lie in [3, 512]");
  if (optimizer.weight_decay < 0.0) fail("weight_decay must be non-negative");
  if (split.kind == SplitKind::kHoldout && !(split.holdout_fraction > 0.0 && split.holdout_fraction < 1.0)) {
    fail("holdout_fraction must lie in (0,1)");
  }
  if (split.kind == SplitKind::kGroupKFold && split.n_folds < 2) fail("n_folds must be at least 2");
}

nlohmann::json TrainConfig::to_json() const {
  return nlohmann::json{{"learning_rate", learning_rate},
                        {"epochs", epochs},
                        {"batch_size", batch_size},
                        {"max_len", max_len},
                        {"seed", seed},
                        {"split", qscore::to_json(split)},
                        {"optimizer",
                         {{"beta1", optimizer.beta1},
                          {"beta2", optimizer.beta2},
                          {"epsilon", optimizer.epsilon},
                          {"weight_decay", optimizer.weight_decay}}},
                        {"report_raw_mse", report_raw_mse}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, TrainConfig c) {
  try {
    if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("epochs")) c.epochs = j.at("epochs").get<std::size_t>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<std::size_t>();
    if (j.contains("max_len")) c.max_len = j.at("max_len").get<std::size_t>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("split")) c.split = split_plan_from_json(j.at("split"), c.split);
    if (j.contains("report_raw_mse")) c.report_raw_mse = j.at("report_raw_mse").get<bool>();
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      c.optimizer.beta1 = o.value("beta1", c.optimizer.beta1);
      c.optimizer.beta2 = o.value("beta2", c.optimizer.beta2);
      c.optimizer.epsilon = o.value("epsilon", c.optimizer.epsilon);
      c.optimizer.weight_decay = o.value("weight_decay", c.optimizer.weight_decay);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("train config: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Training loop

std::vector<TokenizedInput> encode_corpus(const Corpus& corpus, const Vocabulary& vocab, std::size_t max_len) {
  std::vector<TokenizedInput> out;
  out.reserve(corpus.size());
  for (const auto& ex : corpus.rows) out.push_back(encode_pair(ex.record.title, ex.record.body, vocab, max_len));
  return out;
}

Matrix predict_rows(const ModelWeights<float>& weights, std::span<const TokenizedInput> inputs,
                    std::span<const std::size_t> rows) {
  const std::size_t O = weights.config.n_outputs;
  Matrix out(rows.size(), O);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto scores = forward(weights, inputs[rows[r]], ForwardOptions{Mode::kEval, 0});
    for (std::size_t o = 0; o < O; ++o) out(r, o) = scores[o];
  }
  return out;
}

namespace {

struct ValidationScores {
  double mse = 0.0;
  std::optional<double> mse_raw;
};

Matrix target_matrix(const std::vector<TargetVector>& rows) {
  Matrix m(rows.size(), kNumTargets);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t t = 0; t < kNumTargets; ++t) m(r, t) = rows[r][t];
  }
  return m;
}

ValidationScores score_validation(const ModelWeights<float>& weights, const std::vector<TokenizedInput>& inputs,
                                  const Corpus& corpus, const Fold& fold, const TargetTransform& transform,
                                  bool raw) {
  const Matrix pred = predict_rows(weights, inputs, fold.validation);
  std::vector<TargetVector> transformed;
  transformed.reserve(fold.validation.size());
  for (std::size_t i : fold.validation) transformed.push_back(transform.apply(corpus.rows[i].targets));
  ValidationScores s;
  s.mse = mse(pred, target_matrix(transformed));
  if (raw) {
    std::vector<TargetVector> raw_targets;
    Matrix raw_pred(pred.rows, pred.cols);
    for (std::size_t r = 0; r < fold.validation.size(); ++r) {
      raw_targets.push_back(corpus.rows[fold.validation[r]].targets);
      TargetVector p;
      for (std::size_t t = 0; t < kNumTargets; ++t) p[t] = pred(r, t);
      const TargetVector back = transform.invert(p);
      for (std::size_t t = 0; t < kNumTargets; ++t) raw_pred(r, t) = back[t];
    }
    s.mse_raw = mse(raw_pred, target_matrix(raw_targets));
  }
  return s;
}

TargetTransform fit_on_rows(const Corpus& corpus, const std::vector<std::size_t>& rows) {
  std::vector<TargetVector> train_targets;
  train_targets.reserve(rows.size());
  for (std::size_t i : rows) train_targets.push_back(corpus.rows[i].targets);
  return fit_target_transform(train_targets);
}

double constant_mean_baseline(const Corpus& corpus, const Fold& fold, const TargetTransform& transform) {
  TargetVector mean{};
  for (std::size_t i : fold.train) {
    const auto t = transform.apply(corpus.rows[i].targets);
    for (std::size_t k = 0; k < kNumTargets; ++k) mean[k] += t[k];
  }
  for (auto& m : mean.values) m /= static_cast<double>(fold.train.size());
  Matrix pred(fold.validation.size(), kNumTargets);
  Matrix truth(fold.validation.size(), kNumTargets);
  for (std::size_t r = 0; r < fold.validation.size(); ++r) {
    const auto t = transform.apply(corpus.rows[fold.validation[r]].targets);
    for (std::size_t k = 0; k < kNumTargets; ++k) {
      pred(r, k) = mean[k];
      truth(r, k) = t[k];
    }
  }
  return mse(pred, truth);
}

}  // namespace

TrainResult train_run(const Corpus& corpus, const Vocabulary& vocab, const ModelConfig& model_config,
                      const TrainConfig& config, const TrainHooks& hooks) {
  using Clock = std::chrono::steady_clock;
  config.validate();
  model_config.validate();
  if (model_config.n_outputs != kNumTargets) {
    throw Error(ErrorCode::kInvalidConfig, "model must emit " + std::to_string(kNumTargets) + " outputs");
  }
  if (model_config.vocab_size != vocab.size()) {
    throw Error(ErrorCode::kInvalidConfig, "model vocab_size " + std::to_string(model_config.vocab_size) +
                                               " differs from vocabulary size " + std::to_string(vocab.size()));
  }
  if (config.max_len > model_config.max_positions) {
    throw Error(ErrorCode::kInvalidConfig, "max_len exceeds the model's max_positions");
  }

  const auto folds = make_split(corpus, config.split);
  const auto inputs = encode_corpus(corpus, vocab, config.max_len);

  TrainResult result;
  result.corpus_fingerprint = corpus.fingerprint();
  result.corpus_rows = corpus.size();
  result.val_mse.assign(config.epochs, 0.0);
  result.epoch_seconds.assign(config.epochs, 0.0);

  for (std::size_t f = 0; f < folds.size(); ++f) {
    const Fold& fold = folds[f];
    if (fold.train.size() < 2 || fold.validation.empty()) {
      throw Error(ErrorCode::kInvalidConfig, "fold " + std::to_string(f) + " has too few rows");
    }
    FoldRun run;
    run.train_rows = fold.train.size();
    run.validation_rows = fold.validation.size();

    // No validation row contributes to the transform.
    TargetTransform transform = fit_on_rows(corpus, fold.train);
    if (hooks.log) {
      for (std::size_t t : transform.degenerate_columns()) {
        *hooks.log << "warning: DegenerateColumn " << kTargetNames[t] << " is constant on the training rows\n";
      }
    }
    run.baseline_mse = constant_mean_baseline(corpus, fold, transform);

    std::vector<std::vector<double>> train_targets(corpus.size());
    for (std::size_t i : fold.train) {
      const auto t = transform.apply(corpus.rows[i].targets);
      train_targets[i].assign(t.values.begin(), t.values.end());
    }

    auto weights = init_weights(model_config, config.seed);
    auto grads = ModelWeights<float>::zeros(model_config);
    auto state = AdamState::zeros(model_config);
    Rng order_rng(mix_seed(config.seed, 0x5eedULL));
    std::vector<std::size_t> order = fold.train;
    std::vector<TokenizedInput> batch_inputs;
    std::vector<std::vector<double>> batch_targets;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
      const auto start = Clock::now();
      order_rng.shuffle(order);
      double loss_sum = 0.0;
      std::size_t batches = 0;
      for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
        const std::size_t e = std::min(order.size(), b + config.batch_size);
        batch_inputs.clear();
        batch_targets.clear();
        for (std::size_t k = b; k < e; ++k) {
          batch_inputs.push_back(inputs[order[k]]);
          batch_targets.push_back(train_targets[order[k]]);
        }
        const ForwardOptions opts{Mode::kTrain, mix_seed(config.seed, state.step + 1)};
        loss_sum += batch_gradients<float>(weights, batch_inputs, batch_targets, opts, grads);
        adam_step(weights, grads, state, config.learning_rate, config.optimizer);
        ++batches;
      }
      const auto val = score_validation(weights, inputs, corpus, fold, transform, config.report_raw_mse);
      EpochRecord rec;
      rec.train_loss = loss_sum / static_cast<double>(batches);
      rec.val_mse = val.mse;
      rec.val_mse_raw = val.mse_raw;
      rec.seconds = std::chrono::duration<double>(Clock::now() - start).count();
      run.epochs.push_back(rec);
      result.val_mse[epoch] += rec.val_mse / static_cast<double>(folds.size());
      result.epoch_seconds[epoch] += rec.seconds;
      if (hooks.log) {
        *hooks.log << "fold " << f + 1 << "/" << folds.size() << " epoch " << epoch + 1 << "/" << config.epochs
                   << " lr " << format_real(config.learning_rate) << " train_bce " << rec.train_loss
                   << " val_mse " << rec.val_mse << " (" << rec.seconds << " s)\n";
      }
    }
    result.folds.push_back(std::move(run));
    result.weights = std::move(weights);
    result.transform = std::move(transform);
  }
  return result;
}

Evaluation evaluate(const Corpus& corpus, const Vocabulary& vocab, const ModelWeights<float>& weights,
                    const TrainConfig& config) {
  config.validate();
  if (weights.config.vocab_size != vocab.size()) {
    throw Error(ErrorCode::kInvalidConfig, "archive vocab_size differs from the vocabulary");
  }
  const auto folds = make_split(corpus, config.split);
  const Fold& fold = folds.back();
  const auto transform = fit_on_rows(corpus, fold.train);
  std::vector<TokenizedInput> inputs = encode_corpus(corpus, vocab, config.max_len);
  const auto s = score_validation(weights, inputs, corpus, fold, transform, config.report_raw_mse);
  return Evaluation{s.mse, s.mse_raw, fold.validation.size()};
}

nlohmann::json run_manifest(const ModelConfig& model_config, const TrainConfig& config, const TrainResult& result) {
  char fp[17];
  std::snprintf(fp, sizeof fp, "%016llx", static_cast<unsigned long long>(result.corpus_fingerprint));
  nlohmann::json folds = nlohmann::json::array();
  nlohmann::json fold_seconds = nlohmann::json::array();
  for (const auto& run : result.folds) {
    nlohmann::json epochs = nlohmann::json::array();
    nlohmann::json secs = nlohmann::json::array();
    for (std::size_t e = 0; e < run.epochs.size(); ++e) {
      nlohmann::json rec{{"epoch", e + 1}, {"train_bce", run.epochs[e].train_loss}, {"val_mse", run.epochs[e].val_mse}};
      if (run.epochs[e].val_mse_raw) rec["val_mse_raw"] = *run.epochs[e].val_mse_raw;
      epochs.push_back(std::move(rec));
      secs.push_back(run.epochs[e].seconds);
    }
    folds.push_back({{"train_rows", run.train_rows},
                     {"validation_rows", run.validation_rows},
                     {"baseline_mse", run.baseline_mse},
                     {"epochs", std::move(epochs)}});
    fold_seconds.push_back(std::move(secs));
  }
  return nlohmann::json{
      {"model_config", model_config.to_json()},
      {"train_config", config.to_json()},
      {"seed", config.seed},
      {"corpus", {{"fingerprint", fp}, {"rows", result.corpus_rows}}},
      {"val_mse", result.val_mse},
      {"folds", std::move(folds)},
      // Wall-clock data lives only under "timing".
      {"timing", {{"epoch_seconds", result.epoch_seconds}, {"fold_epoch_seconds", std::move(fold_seconds)}}},
  };
}

nlohmann::json EvalGrid::to_json() const {
  return nlohmann::json{{"metric", "mse"}, {"learning_rates", learning_rates}, {"epochs", epochs}, {"mse", mse}};
}

std::string EvalGrid::to_csv() const {
  std::string out = "epoch";
  for (double lr : learning_rates) out += ",lr=" + format_real(lr);
  out += "\n";
  for (std::size_t e = 0; e < epochs; ++e) {
    out += std::to_string(e + 1);
    for (std::size_t r = 0; r < learning_rates.size(); ++r) out += "," + format_real(mse[r][e]);
    out += "\n";
  }
  return out;
}

EvalGrid lr_sweep(const Corpus& corpus, const Vocabulary& vocab, const ModelConfig& model_config,
                  const TrainConfig& base, const std::vector<double>& learning_rates, const TrainHooks& hooks,
                  const std::function<void(double, const TrainResult&)>& on_run) {
  if (learning_rates.empty()) throw Error(ErrorCode::kInvalidConfig, "learning-rate grid is empty");
  EvalGrid grid;
  grid.learning_rates = learning_rates;
  grid.epochs = base.epochs;
  for (double lr : learning_rates) {
    TrainConfig c = base;
    c.learning_rate = lr;
    auto result = train_run(corpus, vocab, model_config, c, hooks);
    grid.mse.push_back(result.val_mse);
    if (on_run) on_run(lr, result);
  }
  return grid;
}

}  // namespace qscore
