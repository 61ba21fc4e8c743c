#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "qscore/tokenizer.hpp"

namespace qscore {

/// Encoder shape. Field names follow the usual transformer vocabulary:
/// `layers` stacked encoder blocks of width `hidden` with `heads` attention
/// heads each and a feed-forward block of width `ff_size`.
struct ModelConfig {
  std::size_t layers = 2;
  std::size_t hidden = 64;
  std::size_t heads = 2;
  std::size_t ff_size = 128;
  std::size_t vocab_size = 30522;
  std::size_t max_positions = 512;
  std::size_t type_vocab_size = 2;
  double dropout = 0.1;
  std::size_t n_outputs = 20;
  double layer_norm_eps = 1e-12;

  /// "base" (12 x 768, 12 heads, ff 3072) or "tiny" (2 x 64, 2 heads, ff 128).
  static ModelConfig preset(std::string_view name);

  /// Throws Error(kInvalidConfig) on an inconsistent shape.
  void validate() const;
  std::size_t head_dim() const { return hidden / heads; }

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

struct TensorSpec {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t size() const;
};

/// Every parameter tensor with its shape, in canonical order.
std::vector<TensorSpec> tensor_layout(const ModelConfig& config);
std::size_t parameter_count(const ModelConfig& config);

/// Biases and layer-norm parameters are exempt from weight decay.
bool decay_exempt(std::string_view tensor_name);

template <class T>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<T> data;

  std::size_t size() const { return data.size(); }
  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }
};

template <class T>
struct EncoderLayerWeights {
  Tensor<T> query_w, query_b, key_w, key_b, value_w, value_b;
  Tensor<T> attn_out_w, attn_out_b, attn_ln_gamma, attn_ln_beta;
  Tensor<T> ff_in_w, ff_in_b, ff_out_w, ff_out_b, out_ln_gamma, out_ln_beta;
};

/// Named parameter tensors of the encoder plus pooler and regression head.
/// Dense kernels are stored [in, out] so that y = x W + b.
template <class T>
struct ModelWeights {
  ModelConfig config;
  Tensor<T> word_emb, position_emb, segment_emb, emb_ln_gamma, emb_ln_beta;
  std::vector<EncoderLayerWeights<T>> layers;
  Tensor<T> pooler_w, pooler_b, head_w, head_b;

  /// Zero-filled tensors with the shapes `config` dictates.
  static ModelWeights zeros(const ModelConfig& config);

  /// Visit (name, tensor) pairs in tensor_layout() order.
  void visit(const std::function<void(const std::string&, Tensor<T>&)>& fn);
  void visit(const std::function<void(const std::string&, const Tensor<T>&)>& fn) const;

  std::size_t parameter_count() const;
  void fill(T value);
};

/// Throws Error(kShapeMismatch) naming the first tensor whose shape disagrees
/// with its config.
template <class T>
void audit_shapes(const ModelWeights<T>& weights);

/// Truncated normal(0, 0.02) for embeddings and kernels, zero biases,
/// unit layer-norm scale. Deterministic per seed.
ModelWeights<float> init_weights(const ModelConfig& config, std::uint64_t seed);

template <class U, class T>
ModelWeights<U> cast_weights(const ModelWeights<T>& w) {
  ModelWeights<U> out = ModelWeights<U>::zeros(w.config);
  std::vector<const Tensor<T>*> src;
  w.visit([&](const std::string&, const Tensor<T>& t) { src.push_back(&t); });
  std::size_t i = 0;
  out.visit([&](const std::string&, Tensor<U>& t) {
    for (std::size_t k = 0; k < t.size(); ++k) t.data[k] = static_cast<U>(src[i]->data[k]);
    ++i;
  });
  return out;
}

enum class Mode { kTrain, kEval };

/// Per-call options. Dropout is active only in train mode with a nonzero
/// rate; its masks are drawn from `dropout_seed`.
struct ForwardOptions {
  Mode mode = Mode::kEval;
  std::uint64_t dropout_seed = 0;
};

/// Sigmoid scores for the n_outputs targets, strictly inside (0,1). Masked
/// positions are removed before attention, which is equivalent to masking
/// their logits to -inf.
template <class T>
std::vector<T> forward(const ModelWeights<T>& weights, const TokenizedInput& input,
                       const ForwardOptions& options = {});

/// Attention probabilities of one forward pass, [layer][head][query][key]
/// over the unmasked positions only. For inspection and tests.
template <class T>
std::vector<std::vector<std::vector<std::vector<T>>>> attention_maps(const ModelWeights<T>& weights,
                                                                     const TokenizedInput& input);

/// Forward pass plus reverse-mode gradients of
///   scale * mean_k BCE(score_k, target_k)
/// accumulated into `grads` (which must have the same config). Returns the
/// unscaled per-example mean BCE. `scores_out`, if given, receives the scores.
template <class T>
double forward_backward(const ModelWeights<T>& weights, const TokenizedInput& input,
                        std::span<const double> target, double scale, const ForwardOptions& options,
                        ModelWeights<T>& grads, std::vector<T>* scores_out = nullptr);

/// Mean-reduced BCE over a batch together with its gradient, which is
/// written (not accumulated) into `grads`.
template <class T>
double batch_gradients(const ModelWeights<T>& weights, std::span<const TokenizedInput> inputs,
                       std::span<const std::vector<double>> targets, const ForwardOptions& options,
                       ModelWeights<T>& grads);

}  // namespace qscore
