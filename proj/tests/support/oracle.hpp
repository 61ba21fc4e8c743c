#pragma once

// Reference implementations shared by the unit and acceptance tests.
// naive_forward and naive_bce use none of the library's numerical code.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "qscore/model.hpp"
#include "qscore/rng.hpp"
#include "qscore/tokenizer.hpp"

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;  // row-major [row][col]

inline Mat dense(const Mat& x, const qscore::Tensor<double>& w, const qscore::Tensor<double>& b) {
  const std::size_t in = w.shape[0];
  const std::size_t out = w.shape[1];
  Mat y(x.size(), Vec(out, 0.0));
  for (std::size_t r = 0; r < x.size(); ++r) {
    for (std::size_t o = 0; o < out; ++o) {
      double s = b.data[o];
      for (std::size_t i = 0; i < in; ++i) s += x[r][i] * w.data[i * out + o];
      y[r][o] = s;
    }
  }
  return y;
}

inline Mat layer_norm(const Mat& x, const qscore::Tensor<double>& g, const qscore::Tensor<double>& b, double eps) {
  Mat y = x;
  for (std::size_t r = 0; r < x.size(); ++r) {
    const double n = static_cast<double>(x[r].size());
    double mean = 0.0;
    for (double v : x[r]) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : x[r]) var += (v - mean) * (v - mean);
    var /= n;
    for (std::size_t j = 0; j < x[r].size(); ++j) y[r][j] = g.data[j] * (x[r][j] - mean) / std::sqrt(var + eps) + b.data[j];
  }
  return y;
}

inline Mat add(const Mat& a, const Mat& b) {
  Mat y = a;
  for (std::size_t r = 0; r < a.size(); ++r) {
    for (std::size_t j = 0; j < a[r].size(); ++j) y[r][j] += b[r][j];
  }
  return y;
}

/// Straight-line BERT forward: all positions (padding included) are carried
/// through every layer and padded keys get -inf attention logits.
inline Vec naive_forward(const qscore::ModelWeights<double>& w, const qscore::TokenizedInput& in) {
  const auto& c = w.config;
  const std::size_t n = in.token_ids.size();
  const std::size_t H = c.hidden;
  const std::size_t A = c.heads;
  const std::size_t D = H / A;

  Mat x(n, Vec(H));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < H; ++j) {
      x[i][j] = w.word_emb.data[static_cast<std::size_t>(in.token_ids[i]) * H + j] + w.position_emb.data[i * H + j] +
                w.segment_emb.data[static_cast<std::size_t>(in.segment_ids[i]) * H + j];
    }
  }
  x = layer_norm(x, w.emb_ln_gamma, w.emb_ln_beta, c.layer_norm_eps);

  for (const auto& L : w.layers) {
    const Mat q = dense(x, L.query_w, L.query_b);
    const Mat k = dense(x, L.key_w, L.key_b);
    const Mat v = dense(x, L.value_w, L.value_b);
    Mat ctx(n, Vec(H, 0.0));
    for (std::size_t h = 0; h < A; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        Vec logit(n, -std::numeric_limits<double>::infinity());
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
          if (!in.attention_mask[j]) continue;
          double s = 0.0;
          for (std::size_t d = 0; d < D; ++d) s += q[i][h * D + d] * k[j][h * D + d];
          logit[j] = s / std::sqrt(static_cast<double>(D));
          mx = std::max(mx, logit[j]);
        }
        double z = 0.0;
        Vec p(n, 0.0);
        for (std::size_t j = 0; j < n; ++j) {
          p[j] = std::exp(logit[j] - mx);
          z += p[j];
        }
        for (std::size_t j = 0; j < n; ++j) {
          for (std::size_t d = 0; d < D; ++d) ctx[i][h * D + d] += p[j] / z * v[j][h * D + d];
        }
      }
    }
    x = layer_norm(add(x, dense(ctx, L.attn_out_w, L.attn_out_b)), L.attn_ln_gamma, L.attn_ln_beta, c.layer_norm_eps);
    Mat f = dense(x, L.ff_in_w, L.ff_in_b);
    for (auto& row : f) {
      for (auto& u : row) u = 0.5 * u * (1.0 + std::erf(u / std::sqrt(2.0)));
    }
    x = layer_norm(add(x, dense(f, L.ff_out_w, L.ff_out_b)), L.out_ln_gamma, L.out_ln_beta, c.layer_norm_eps);
  }

  Mat pooled = dense(Mat{x[0]}, w.pooler_w, w.pooler_b);
  for (auto& u : pooled[0]) u = std::tanh(u);
  const Mat logits = dense(pooled, w.head_w, w.head_b);
  Vec out(c.n_outputs);
  for (std::size_t o = 0; o < c.n_outputs; ++o) out[o] = 1.0 / (1.0 + std::exp(-logits[0][o]));
  return out;
}

inline double naive_bce(const Vec& p, const std::vector<double>& t) {
  double s = 0.0;
  for (std::size_t o = 0; o < p.size(); ++o) {
    const double q = std::clamp(p[o], 1e-7, 1.0 - 1e-7);
    s -= t[o] * std::log(q) + (1.0 - t[o]) * std::log(1.0 - q);
  }
  return s / static_cast<double>(p.size());
}

/// Random well-formed input: CLS, segment-0 run, SEP, segment-1 run, SEP,
/// then `pad` masked positions.
inline qscore::TokenizedInput random_input(qscore::Rng& rng, std::size_t vocab_size, std::size_t len, std::size_t pad) {
  qscore::TokenizedInput in;
  const std::size_t split = 1 + rng.index(len - 2);
  for (std::size_t i = 0; i < len; ++i) {
    in.token_ids.push_back(static_cast<qscore::TokenId>(4 + rng.index(vocab_size - 4)));
    in.segment_ids.push_back(i > split ? 1 : 0);
    in.attention_mask.push_back(1);
  }
  in.token_ids[0] = 2;
  in.token_ids[split] = 3;
  in.token_ids[len - 1] = 3;
  for (std::size_t i = 0; i < pad; ++i) {
    in.token_ids.push_back(0);
    in.segment_ids.push_back(0);
    in.attention_mask.push_back(0);
  }
  return in;
}

/// Weights drawn wider than the usual initializer so that every nonlinearity
/// sees a non-trivial operating range.
inline qscore::ModelWeights<double> random_weights(const qscore::ModelConfig& c, std::uint64_t seed) {
  auto w = qscore::ModelWeights<double>::zeros(c);
  qscore::Rng rng(seed);
  w.visit([&](const std::string& name, qscore::Tensor<double>& t) {
    const bool is_gamma = name.size() >= 5 && name.compare(name.size() - 5, 5, "gamma") == 0;
    for (auto& v : t.data) v = is_gamma ? 1.0 + 0.2 * rng.normal() : 0.3 * rng.normal();
  });
  return w;
}

struct GradCheckResult {
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true
/// gradient is zero (up to rounding) from producing meaningless ratios.
inline double rel_error(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

/// Central differences of the batch loss over every parameter, compared with
/// the library's analytic gradient for the same batch. The loss is evaluated
/// with the library forward pass (checked separately against naive_forward)
/// and an independent BCE.
inline GradCheckResult grad_check(const qscore::ModelWeights<double>& w,
                                  const std::vector<qscore::TokenizedInput>& inputs,
                                  const std::vector<std::vector<double>>& targets, double step, double floor,
                                  const qscore::ForwardOptions& options = {}) {
  auto grads = qscore::ModelWeights<double>::zeros(w.config);
  qscore::batch_gradients<double>(w, inputs, targets, options, grads);

  std::map<std::string, const qscore::Tensor<double>*> analytic;
  grads.visit([&](const std::string& name, const qscore::Tensor<double>& t) { analytic[name] = &t; });

  auto loss = [&](const qscore::ModelWeights<double>& m) {
    double s = 0.0;
    for (std::size_t b = 0; b < inputs.size(); ++b) {
      // Same per-example dropout stream as batch_gradients.
      qscore::ForwardOptions o = options;
      o.dropout_seed = qscore::mix_seed(options.dropout_seed, b);
      s += naive_bce(qscore::forward<double>(m, inputs[b], o), targets[b]);
    }
    return s / static_cast<double>(inputs.size());
  };

  GradCheckResult r;
  auto probe = w;
  probe.visit([&](const std::string& name, qscore::Tensor<double>& t) {
    const auto& a = *analytic.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double orig = t.data[i];
      t.data[i] = orig + step;
      const double up = loss(probe);
      t.data[i] = orig - step;
      const double down = loss(probe);
      t.data[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double e = rel_error(a.data[i], numeric, floor);
      ++r.checked;
      if (e > r.max_rel_error) {
        r.max_rel_error = e;
        r.worst_tensor = name;
        r.worst_index = i;
        r.worst_analytic = a.data[i];
        r.worst_numeric = numeric;
      }
    }
  });
  return r;
}

}  // namespace oracle
