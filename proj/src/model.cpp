#include "qscore/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <type_traits>

#include "qscore/error.hpp"
#include "qscore/rng.hpp"

namespace qscore {

// ---------------------------------------------------------------------------
// Configuration and layout

ModelConfig ModelConfig::preset(std::string_view name) {
  ModelConfig c;
  if (name == "tiny") {
    c.layers = 2;
    c.hidden = 64;
    c.heads = 2;
    c.ff_size = 128;
  } else if (name == "base") {
    c.layers = 12;
    c.hidden = 768;
    c.heads = 12;
    c.ff_size = 3072;
  } else {
    throw Error(ErrorCode::kInvalidConfig, "unknown preset '" + std::string(name) + "'");
  }
  return c;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::kInvalidConfig, msg); };
  if (layers == 0 || hidden == 0 || heads == 0 || ff_size == 0) fail("layers, hidden, heads and ff_size must be positive");
  if (hidden % heads != 0) {
    fail("hidden size " + std::to_string(hidden) + " not divisible by " + std::to_string(heads) + " heads");
  }
  if (vocab_size < 4) fail("vocab_size must cover the special tokens");
  if (max_positions < 3) fail("max_positions must be at least 3");
  if (type_vocab_size < 2) fail("type_vocab_size must be at least 2");
  if (n_outputs == 0) fail("n_outputs must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0,1)");
  if (!(layer_norm_eps > 0.0)) fail("layer_norm_eps must be positive");
}

nlohmann::json ModelConfig::to_json() const {
  return nlohmann::json{{"layers", layers},
                        {"hidden", hidden},
                        {"heads", heads},
                        {"ff_size", ff_size},
                        {"vocab_size", vocab_size},
                        {"max_positions", max_positions},
                        {"type_vocab_size", type_vocab_size},
                        {"dropout", dropout},
                        {"n_outputs", n_outputs},
                        {"layer_norm_eps", layer_norm_eps}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.layers = j.at("layers").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.ff_size = j.at("ff_size").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.max_positions = j.at("max_positions").get<std::size_t>();
    c.type_vocab_size = j.value("type_vocab_size", c.type_vocab_size);
    c.dropout = j.at("dropout").get<double>();
    c.n_outputs = j.at("n_outputs").get<std::size_t>();
    c.layer_norm_eps = j.value("layer_norm_eps", c.layer_norm_eps);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

std::size_t TensorSpec::size() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::vector<TensorSpec> tensor_layout(const ModelConfig& c) {
  const std::size_t H = c.hidden;
  const std::size_t F = c.ff_size;
  std::vector<TensorSpec> out = {
      {"embeddings.word", {c.vocab_size, H}},
      {"embeddings.position", {c.max_positions, H}},
      {"embeddings.segment", {c.type_vocab_size, H}},
      {"embeddings.layer_norm.gamma", {H}},
      {"embeddings.layer_norm.beta", {H}},
  };
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string p = "encoder." + std::to_string(l) + ".";
    out.push_back({p + "attention.query.kernel", {H, H}});
    out.push_back({p + "attention.query.bias", {H}});
    out.push_back({p + "attention.key.kernel", {H, H}});
    out.push_back({p + "attention.key.bias", {H}});
    out.push_back({p + "attention.value.kernel", {H, H}});
    out.push_back({p + "attention.value.bias", {H}});
    out.push_back({p + "attention.output.kernel", {H, H}});
    out.push_back({p + "attention.output.bias", {H}});
    out.push_back({p + "attention.layer_norm.gamma", {H}});
    out.push_back({p + "attention.layer_norm.beta", {H}});
    out.push_back({p + "feed_forward.in.kernel", {H, F}});
    out.push_back({p + "feed_forward.in.bias", {F}});
    out.push_back({p + "feed_forward.out.kernel", {F, H}});
    out.push_back({p + "feed_forward.out.bias", {H}});
    out.push_back({p + "output.layer_norm.gamma", {H}});
    out.push_back({p + "output.layer_norm.beta", {H}});
  }
  out.push_back({"pooler.kernel", {H, H}});
  out.push_back({"pooler.bias", {H}});
  out.push_back({"head.kernel", {H, c.n_outputs}});
  out.push_back({"head.bias", {c.n_outputs}});
  return out;
}

std::size_t parameter_count(const ModelConfig& config) {
  std::size_t n = 0;
  for (const auto& t : tensor_layout(config)) n += t.size();
  return n;
}

bool decay_exempt(std::string_view name) {
  return name.ends_with(".bias") || name.ends_with(".gamma") || name.ends_with(".beta");
}

// ---------------------------------------------------------------------------
// ModelWeights

template <class T>
ModelWeights<T> ModelWeights<T>::zeros(const ModelConfig& config) {
  config.validate();
  ModelWeights<T> w;
  w.config = config;
  w.layers.resize(config.layers);
  const auto layout = tensor_layout(config);
  std::size_t i = 0;
  w.visit([&](const std::string&, Tensor<T>& t) {
    t.shape = layout[i].shape;
    t.data.assign(layout[i].size(), T(0));
    ++i;
  });
  return w;
}

template <class T>
void ModelWeights<T>::visit(const std::function<void(const std::string&, Tensor<T>&)>& fn) {
  const auto layout = tensor_layout(config);
  std::size_t i = 0;
  auto v = [&](Tensor<T>& t) { fn(layout[i++].name, t); };
  v(word_emb);
  v(position_emb);
  v(segment_emb);
  v(emb_ln_gamma);
  v(emb_ln_beta);
  for (auto& l : layers) {
    v(l.query_w);
    v(l.query_b);
    v(l.key_w);
    v(l.key_b);
    v(l.value_w);
    v(l.value_b);
    v(l.attn_out_w);
    v(l.attn_out_b);
    v(l.attn_ln_gamma);
    v(l.attn_ln_beta);
    v(l.ff_in_w);
    v(l.ff_in_b);
    v(l.ff_out_w);
    v(l.ff_out_b);
    v(l.out_ln_gamma);
    v(l.out_ln_beta);
  }
  v(pooler_w);
  v(pooler_b);
  v(head_w);
  v(head_b);
}

template <class T>
void ModelWeights<T>::visit(const std::function<void(const std::string&, const Tensor<T>&)>& fn) const {
  const_cast<ModelWeights<T>*>(this)->visit([&](const std::string& name, Tensor<T>& t) { fn(name, t); });
}

template <class T>
std::size_t ModelWeights<T>::parameter_count() const {
  std::size_t n = 0;
  visit([&](const std::string&, const Tensor<T>& t) { n += t.size(); });
  return n;
}

template <class T>
void ModelWeights<T>::fill(T value) {
  visit([&](const std::string&, Tensor<T>& t) { std::fill(t.data.begin(), t.data.end(), value); });
}

template <class T>
void audit_shapes(const ModelWeights<T>& w) {
  if (w.layers.size() != w.config.layers) {
    throw Error(ErrorCode::kShapeMismatch, "config declares " + std::to_string(w.config.layers) + " layers, weights hold " +
                                               std::to_string(w.layers.size()));
  }
  const auto layout = tensor_layout(w.config);
  std::size_t i = 0;
  w.visit([&](const std::string& name, const Tensor<T>& t) {
    const auto& spec = layout[i++];
    if (t.shape != spec.shape || t.data.size() != spec.size()) {
      throw Error(ErrorCode::kShapeMismatch, "tensor " + name);
    }
  });
}

ModelWeights<float> init_weights(const ModelConfig& config, std::uint64_t seed) {
  auto w = ModelWeights<float>::zeros(config);
  Rng rng(seed);
  w.visit([&](const std::string& name, Tensor<float>& t) {
    if (name.ends_with(".gamma")) {
      std::fill(t.data.begin(), t.data.end(), 1.0f);
    } else if (!decay_exempt(name)) {
      for (auto& x : t.data) x = static_cast<float>(rng.truncated_normal(0.02));
    }
  });
  return w;
}

// ---------------------------------------------------------------------------
// Kernels

namespace {

template <class T>
using Acc = std::conditional_t<(sizeof(T) < sizeof(double)), double, T>;

// c[n x m] = a[n x k] * b[k x m] (+ c when accumulate)
template <class T>
void matmul(const T* a, const T* b, T* c, std::size_t n, std::size_t k, std::size_t m, bool accumulate) {
  if (!accumulate) std::fill(c, c + n * m, T(0));
  for (std::size_t i = 0; i < n; ++i) {
    T* ci = c + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T(0)) continue;
      const T* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[k x m] += a[n x k]^T * b[n x m]
template <class T>
void matmul_tn_acc(const T* a, const T* b, T* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* bi = b + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T(0)) continue;
      T* cp = c + p * m;
      for (std::size_t j = 0; j < m; ++j) cp[j] += av * bi[j];
    }
  }
}

// c[n x k] (+)= a[n x m] * b[k x m]^T
template <class T>
void matmul_nt(const T* a, const T* b, T* c, std::size_t n, std::size_t m, std::size_t k, bool accumulate) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* ai = a + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const T* bp = b + p * m;
      T s = T(0);
      for (std::size_t j = 0; j < m; ++j) s += ai[j] * bp[j];
      c[i * k + p] = accumulate ? c[i * k + p] + s : s;
    }
  }
}

template <class T>
void add_bias(T* x, const T* bias, std::size_t n, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) x[i * m + j] += bias[j];
  }
}

template <class T>
void colsum_acc(const T* x, T* out, std::size_t n, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) out[j] += x[i * m + j];
  }
}

template <class T>
void layer_norm(const std::vector<T>& x, const T* gamma, const T* beta, std::size_t n, std::size_t m, double eps,
                std::vector<T>& xhat, std::vector<T>& rstd, std::vector<T>& y) {
  xhat.resize(n * m);
  rstd.resize(n);
  y.resize(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    const T* xi = x.data() + i * m;
    Acc<T> mean = 0;
    for (std::size_t j = 0; j < m; ++j) mean += xi[j];
    mean /= static_cast<Acc<T>>(m);
    Acc<T> var = 0;
    for (std::size_t j = 0; j < m; ++j) {
      const Acc<T> d = xi[j] - mean;
      var += d * d;
    }
    var /= static_cast<Acc<T>>(m);
    const Acc<T> r = Acc<T>(1) / std::sqrt(var + static_cast<Acc<T>>(eps));
    rstd[i] = static_cast<T>(r);
    for (std::size_t j = 0; j < m; ++j) {
      const T h = static_cast<T>((xi[j] - mean) * r);
      xhat[i * m + j] = h;
      y[i * m + j] = gamma[j] * h + beta[j];
    }
  }
}

// dx = LN'(dy); accumulates dgamma, dbeta.
template <class T>
void layer_norm_backward(const std::vector<T>& dy, const std::vector<T>& xhat, const std::vector<T>& rstd,
                         const T* gamma, std::size_t n, std::size_t m, T* dgamma, T* dbeta, std::vector<T>& dx) {
  dx.resize(n * m);
  std::vector<T> dxhat(m);
  for (std::size_t i = 0; i < n; ++i) {
    Acc<T> mean_d = 0;
    Acc<T> mean_dh = 0;
    for (std::size_t j = 0; j < m; ++j) {
      const T g = dy[i * m + j];
      dgamma[j] += g * xhat[i * m + j];
      dbeta[j] += g;
      dxhat[j] = g * gamma[j];
      mean_d += dxhat[j];
      mean_dh += static_cast<Acc<T>>(dxhat[j]) * xhat[i * m + j];
    }
    mean_d /= static_cast<Acc<T>>(m);
    mean_dh /= static_cast<Acc<T>>(m);
    for (std::size_t j = 0; j < m; ++j) {
      dx[i * m + j] = static_cast<T>(rstd[i] * (dxhat[j] - mean_d - xhat[i * m + j] * mean_dh));
    }
  }
}

template <class T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(M_SQRT1_2)));
}

template <class T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(M_SQRT1_2)));
  const T pdf = std::exp(T(-0.5) * x * x) * T(0.5 * M_2_SQRTPI * M_SQRT1_2);
  return cdf + x * pdf;
}

// Empty mask means identity.
template <class T>
void draw_dropout(std::vector<T>& mask, std::size_t count, double rate, bool active, Rng& rng) {
  mask.clear();
  if (!active) return;
  mask.resize(count);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (auto& m : mask) m = rng.bernoulli(rate) ? T(0) : keep_scale;
}

template <class T>
void apply_mask(std::vector<T>& x, const std::vector<T>& mask) {
  if (mask.empty()) return;
  for (std::size_t i = 0; i < x.size(); ++i) x[i] *= mask[i];
}

template <class T>
T sigmoid_open(Acc<T> z) {
  // Computed wide, then kept strictly inside (0,1) at T's precision.
  const Acc<T> p = z >= 0 ? Acc<T>(1) / (Acc<T>(1) + std::exp(-z)) : std::exp(z) / (Acc<T>(1) + std::exp(z));
  const T lo = std::numeric_limits<T>::min();
  const T hi = std::nextafter(T(1), T(0));
  return std::clamp(static_cast<T>(p), lo, hi);
}

double bce_term(double p, double t) {
  constexpr double kEps = 1e-7;
  p = std::clamp(p, kEps, 1.0 - kEps);
  return -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
}

template <class T>
struct LayerTrace {
  std::vector<T> x_in, q, k, v, probs, probs_mask, probs_dropped, ctx, attn_mask;
  std::vector<T> ln1_xhat, ln1_rstd, x1, ff_pre, ff_act, ff_mask, ln2_xhat, ln2_rstd, x_out;
};

template <class T>
struct Trace {
  std::size_t n = 0;
  std::vector<std::size_t> positions;
  std::vector<TokenId> tokens;
  std::vector<std::uint8_t> segments;
  std::vector<T> emb_xhat, emb_rstd, emb_mask, x0;
  std::vector<LayerTrace<T>> layers;
  std::vector<T> cls, pooled, pool_mask, pooled_dropped, logits, scores;
};

template <class T>
void check_input(const ModelConfig& c, const TokenizedInput& in) {
  const std::size_t len = in.token_ids.size();
  if (in.segment_ids.size() != len || in.attention_mask.size() != len) {
    throw Error(ErrorCode::kShapeMismatch, "token, segment and mask sequences differ in length");
  }
  if (len == 0 || len > c.max_positions) {
    throw Error(ErrorCode::kShapeMismatch,
                "input length " + std::to_string(len) + " outside [1, " + std::to_string(c.max_positions) + "]");
  }
  if (in.attention_mask[0] == 0) throw Error(ErrorCode::kShapeMismatch, "position 0 (CLS) is masked");
  for (std::size_t i = 0; i < len; ++i) {
    if (in.token_ids[i] < 0 || static_cast<std::size_t>(in.token_ids[i]) >= c.vocab_size) {
      throw Error(ErrorCode::kShapeMismatch, "token id " + std::to_string(in.token_ids[i]) + " outside vocabulary");
    }
    if (in.segment_ids[i] >= c.type_vocab_size) {
      throw Error(ErrorCode::kShapeMismatch, "segment id outside type vocabulary");
    }
  }
}

template <class T>
void run_forward(const ModelWeights<T>& w, const TokenizedInput& in, const ForwardOptions& opt, Trace<T>& tr) {
  const ModelConfig& c = w.config;
  audit_shapes(w);
  check_input<T>(c, in);

  const std::size_t H = c.hidden;
  const std::size_t F = c.ff_size;
  const std::size_t A = c.heads;
  const std::size_t D = c.head_dim();
  const bool drop = opt.mode == Mode::kTrain && c.dropout > 0.0;
  Rng rng(opt.dropout_seed);

  tr.positions.clear();
  tr.tokens.clear();
  tr.segments.clear();
  for (std::size_t i = 0; i < in.token_ids.size(); ++i) {
    if (in.attention_mask[i] == 0) continue;
    tr.positions.push_back(i);
    tr.tokens.push_back(in.token_ids[i]);
    tr.segments.push_back(in.segment_ids[i]);
  }
  const std::size_t n = tr.positions.size();
  tr.n = n;

  std::vector<T> e(n * H);
  for (std::size_t i = 0; i < n; ++i) {
    const T* we = w.word_emb.ptr() + static_cast<std::size_t>(tr.tokens[i]) * H;
    const T* pe = w.position_emb.ptr() + tr.positions[i] * H;
    const T* se = w.segment_emb.ptr() + tr.segments[i] * H;
    for (std::size_t j = 0; j < H; ++j) e[i * H + j] = we[j] + pe[j] + se[j];
  }
  layer_norm(e, w.emb_ln_gamma.ptr(), w.emb_ln_beta.ptr(), n, H, c.layer_norm_eps, tr.emb_xhat, tr.emb_rstd, tr.x0);
  draw_dropout(tr.emb_mask, n * H, c.dropout, drop, rng);
  apply_mask(tr.x0, tr.emb_mask);

  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(D)));
  tr.layers.resize(c.layers);
  const std::vector<T>* x = &tr.x0;
  for (std::size_t l = 0; l < c.layers; ++l) {
    const auto& lw = w.layers[l];
    auto& lt = tr.layers[l];
    lt.x_in = *x;

    lt.q.resize(n * H);
    lt.k.resize(n * H);
    lt.v.resize(n * H);
    matmul(lt.x_in.data(), lw.query_w.ptr(), lt.q.data(), n, H, H, false);
    add_bias(lt.q.data(), lw.query_b.ptr(), n, H);
    matmul(lt.x_in.data(), lw.key_w.ptr(), lt.k.data(), n, H, H, false);
    add_bias(lt.k.data(), lw.key_b.ptr(), n, H);
    matmul(lt.x_in.data(), lw.value_w.ptr(), lt.v.data(), n, H, H, false);
    add_bias(lt.v.data(), lw.value_b.ptr(), n, H);

    lt.probs.assign(A * n * n, T(0));
    for (std::size_t h = 0; h < A; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        T* row = lt.probs.data() + (h * n + i) * n;
        const T* qi = lt.q.data() + i * H + h * D;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
          const T* kj = lt.k.data() + j * H + h * D;
          T s = T(0);
          for (std::size_t d = 0; d < D; ++d) s += qi[d] * kj[d];
          row[j] = s * scale;
          mx = std::max(mx, row[j]);
        }
        Acc<T> sum = 0;
        for (std::size_t j = 0; j < n; ++j) {
          row[j] = std::exp(row[j] - mx);
          sum += row[j];
        }
        for (std::size_t j = 0; j < n; ++j) row[j] = static_cast<T>(row[j] / sum);
      }
    }
    draw_dropout(lt.probs_mask, A * n * n, c.dropout, drop, rng);
    lt.probs_dropped = lt.probs;
    apply_mask(lt.probs_dropped, lt.probs_mask);

    lt.ctx.assign(n * H, T(0));
    for (std::size_t h = 0; h < A; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        const T* row = lt.probs_dropped.data() + (h * n + i) * n;
        T* ci = lt.ctx.data() + i * H + h * D;
        for (std::size_t j = 0; j < n; ++j) {
          const T p = row[j];
          const T* vj = lt.v.data() + j * H + h * D;
          for (std::size_t d = 0; d < D; ++d) ci[d] += p * vj[d];
        }
      }
    }

    std::vector<T> attn_out(n * H);
    matmul(lt.ctx.data(), lw.attn_out_w.ptr(), attn_out.data(), n, H, H, false);
    add_bias(attn_out.data(), lw.attn_out_b.ptr(), n, H);
    draw_dropout(lt.attn_mask, n * H, c.dropout, drop, rng);
    apply_mask(attn_out, lt.attn_mask);
    for (std::size_t i = 0; i < n * H; ++i) attn_out[i] += lt.x_in[i];
    layer_norm(attn_out, lw.attn_ln_gamma.ptr(), lw.attn_ln_beta.ptr(), n, H, c.layer_norm_eps, lt.ln1_xhat,
               lt.ln1_rstd, lt.x1);

    lt.ff_pre.resize(n * F);
    matmul(lt.x1.data(), lw.ff_in_w.ptr(), lt.ff_pre.data(), n, H, F, false);
    add_bias(lt.ff_pre.data(), lw.ff_in_b.ptr(), n, F);
    lt.ff_act.resize(n * F);
    for (std::size_t i = 0; i < n * F; ++i) lt.ff_act[i] = gelu(lt.ff_pre[i]);
    std::vector<T> ff_out(n * H);
    matmul(lt.ff_act.data(), lw.ff_out_w.ptr(), ff_out.data(), n, F, H, false);
    add_bias(ff_out.data(), lw.ff_out_b.ptr(), n, H);
    draw_dropout(lt.ff_mask, n * H, c.dropout, drop, rng);
    apply_mask(ff_out, lt.ff_mask);
    for (std::size_t i = 0; i < n * H; ++i) ff_out[i] += lt.x1[i];
    layer_norm(ff_out, lw.out_ln_gamma.ptr(), lw.out_ln_beta.ptr(), n, H, c.layer_norm_eps, lt.ln2_xhat,
               lt.ln2_rstd, lt.x_out);
    x = &lt.x_out;
  }

  // Pooler over the first (CLS) position, then the regression head.
  tr.cls.assign(x->begin(), x->begin() + static_cast<std::ptrdiff_t>(H));
  tr.pooled.resize(H);
  matmul(tr.cls.data(), w.pooler_w.ptr(), tr.pooled.data(), 1, H, H, false);
  for (std::size_t j = 0; j < H; ++j) tr.pooled[j] = std::tanh(tr.pooled[j] + w.pooler_b.data[j]);
  draw_dropout(tr.pool_mask, H, c.dropout, drop, rng);
  tr.pooled_dropped = tr.pooled;
  apply_mask(tr.pooled_dropped, tr.pool_mask);

  const std::size_t O = c.n_outputs;
  tr.logits.resize(O);
  matmul(tr.pooled_dropped.data(), w.head_w.ptr(), tr.logits.data(), 1, H, O, false);
  tr.scores.resize(O);
  for (std::size_t o = 0; o < O; ++o) {
    tr.logits[o] += w.head_b.data[o];
    tr.scores[o] = sigmoid_open<T>(tr.logits[o]);
  }
}

template <class T>
void run_backward(const ModelWeights<T>& w, const Trace<T>& tr, std::span<const T> dlogits, ModelWeights<T>& g) {
  const ModelConfig& c = w.config;
  const std::size_t n = tr.n;
  const std::size_t H = c.hidden;
  const std::size_t F = c.ff_size;
  const std::size_t A = c.heads;
  const std::size_t D = c.head_dim();
  const std::size_t O = c.n_outputs;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(D)));

  // Head.
  matmul_tn_acc(tr.pooled_dropped.data(), dlogits.data(), g.head_w.ptr(), 1, H, O);
  for (std::size_t o = 0; o < O; ++o) g.head_b.data[o] += dlogits[o];
  std::vector<T> dpooled(H);
  matmul_nt(dlogits.data(), w.head_w.ptr(), dpooled.data(), 1, O, H, false);
  apply_mask(dpooled, tr.pool_mask);

  // Pooler.
  std::vector<T> du(H);
  for (std::size_t j = 0; j < H; ++j) du[j] = dpooled[j] * (T(1) - tr.pooled[j] * tr.pooled[j]);
  matmul_tn_acc(tr.cls.data(), du.data(), g.pooler_w.ptr(), 1, H, H);
  for (std::size_t j = 0; j < H; ++j) g.pooler_b.data[j] += du[j];

  std::vector<T> dx(n * H, T(0));
  matmul_nt(du.data(), w.pooler_w.ptr(), dx.data(), 1, H, H, false);

  std::vector<T> dsum, tmp;
  for (std::size_t l = c.layers; l-- > 0;) {
    const auto& lw = w.layers[l];
    const auto& lt = tr.layers[l];
    auto& lg = g.layers[l];

    // Output sublayer: x_out = LN(x1 + drop(ff_act W2 + b2)).
    layer_norm_backward(dx, lt.ln2_xhat, lt.ln2_rstd, lw.out_ln_gamma.ptr(), n, H, lg.out_ln_gamma.ptr(),
                        lg.out_ln_beta.ptr(), dsum);
    std::vector<T> dx1 = dsum;
    std::vector<T> dff_out = dsum;
    apply_mask(dff_out, lt.ff_mask);
    matmul_tn_acc(lt.ff_act.data(), dff_out.data(), lg.ff_out_w.ptr(), n, F, H);
    colsum_acc(dff_out.data(), lg.ff_out_b.ptr(), n, H);
    std::vector<T> dpre(n * F);
    matmul_nt(dff_out.data(), lw.ff_out_w.ptr(), dpre.data(), n, H, F, false);
    for (std::size_t i = 0; i < n * F; ++i) dpre[i] *= gelu_grad(lt.ff_pre[i]);
    matmul_tn_acc(lt.x1.data(), dpre.data(), lg.ff_in_w.ptr(), n, H, F);
    colsum_acc(dpre.data(), lg.ff_in_b.ptr(), n, F);
    matmul_nt(dpre.data(), lw.ff_in_w.ptr(), dx1.data(), n, F, H, true);

    // Attention sublayer: x1 = LN(x_in + drop(ctx Wo + bo)).
    layer_norm_backward(dx1, lt.ln1_xhat, lt.ln1_rstd, lw.attn_ln_gamma.ptr(), n, H, lg.attn_ln_gamma.ptr(),
                        lg.attn_ln_beta.ptr(), dsum);
    std::vector<T> dx_in = dsum;
    std::vector<T> dattn = dsum;
    apply_mask(dattn, lt.attn_mask);
    matmul_tn_acc(lt.ctx.data(), dattn.data(), lg.attn_out_w.ptr(), n, H, H);
    colsum_acc(dattn.data(), lg.attn_out_b.ptr(), n, H);
    std::vector<T> dctx(n * H);
    matmul_nt(dattn.data(), lw.attn_out_w.ptr(), dctx.data(), n, H, H, false);

    std::vector<T> dq(n * H, T(0)), dk(n * H, T(0)), dv(n * H, T(0));
    std::vector<T> dp(n);
    for (std::size_t h = 0; h < A; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        const T* p = lt.probs.data() + (h * n + i) * n;
        const T* pd = lt.probs_dropped.data() + (h * n + i) * n;
        const T* mrow = lt.probs_mask.empty() ? nullptr : lt.probs_mask.data() + (h * n + i) * n;
        const T* dci = dctx.data() + i * H + h * D;
        // dP_dropped[j] = dctx_i . v_j ; dV_j += P_dropped[i,j] * dctx_i
        for (std::size_t j = 0; j < n; ++j) {
          const T* vj = lt.v.data() + j * H + h * D;
          T* dvj = dv.data() + j * H + h * D;
          T s = T(0);
          for (std::size_t d = 0; d < D; ++d) {
            s += dci[d] * vj[d];
            dvj[d] += pd[j] * dci[d];
          }
          dp[j] = mrow ? s * mrow[j] : s;
        }
        Acc<T> dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += static_cast<Acc<T>>(dp[j]) * p[j];
        const T* qi = lt.q.data() + i * H + h * D;
        T* dqi = dq.data() + i * H + h * D;
        for (std::size_t j = 0; j < n; ++j) {
          const T ds = p[j] * static_cast<T>(dp[j] - dot) * scale;
          if (ds == T(0)) continue;
          const T* kj = lt.k.data() + j * H + h * D;
          T* dkj = dk.data() + j * H + h * D;
          for (std::size_t d = 0; d < D; ++d) {
            dqi[d] += ds * kj[d];
            dkj[d] += ds * qi[d];
          }
        }
      }
    }

    matmul_tn_acc(lt.x_in.data(), dq.data(), lg.query_w.ptr(), n, H, H);
    colsum_acc(dq.data(), lg.query_b.ptr(), n, H);
    matmul_tn_acc(lt.x_in.data(), dk.data(), lg.key_w.ptr(), n, H, H);
    colsum_acc(dk.data(), lg.key_b.ptr(), n, H);
    matmul_tn_acc(lt.x_in.data(), dv.data(), lg.value_w.ptr(), n, H, H);
    colsum_acc(dv.data(), lg.value_b.ptr(), n, H);
    matmul_nt(dq.data(), lw.query_w.ptr(), dx_in.data(), n, H, H, true);
    matmul_nt(dk.data(), lw.key_w.ptr(), dx_in.data(), n, H, H, true);
    matmul_nt(dv.data(), lw.value_w.ptr(), dx_in.data(), n, H, H, true);
    dx = std::move(dx_in);
  }

  // Embeddings.
  apply_mask(dx, tr.emb_mask);
  layer_norm_backward(dx, tr.emb_xhat, tr.emb_rstd, w.emb_ln_gamma.ptr(), n, H, g.emb_ln_gamma.ptr(),
                      g.emb_ln_beta.ptr(), tmp);
  for (std::size_t i = 0; i < n; ++i) {
    T* gw = g.word_emb.ptr() + static_cast<std::size_t>(tr.tokens[i]) * H;
    T* gp = g.position_emb.ptr() + tr.positions[i] * H;
    T* gs = g.segment_emb.ptr() + tr.segments[i] * H;
    for (std::size_t j = 0; j < H; ++j) {
      const T d = tmp[i * H + j];
      gw[j] += d;
      gp[j] += d;
      gs[j] += d;
    }
  }
}

}  // namespace

template <class T>
std::vector<T> forward(const ModelWeights<T>& weights, const TokenizedInput& input, const ForwardOptions& options) {
  Trace<T> tr;
  run_forward(weights, input, options, tr);
  return tr.scores;
}

template <class T>
std::vector<std::vector<std::vector<std::vector<T>>>> attention_maps(const ModelWeights<T>& weights,
                                                                     const TokenizedInput& input) {
  Trace<T> tr;
  run_forward(weights, input, ForwardOptions{}, tr);
  const std::size_t n = tr.n;
  const std::size_t A = weights.config.heads;
  std::vector<std::vector<std::vector<std::vector<T>>>> maps(tr.layers.size());
  for (std::size_t l = 0; l < tr.layers.size(); ++l) {
    maps[l].resize(A, std::vector<std::vector<T>>(n, std::vector<T>(n)));
    for (std::size_t h = 0; h < A; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) maps[l][h][i][j] = tr.layers[l].probs[(h * n + i) * n + j];
      }
    }
  }
  return maps;
}

template <class T>
double forward_backward(const ModelWeights<T>& weights, const TokenizedInput& input, std::span<const double> target,
                        double scale, const ForwardOptions& options, ModelWeights<T>& grads,
                        std::vector<T>* scores_out) {
  const std::size_t O = weights.config.n_outputs;
  if (target.size() != O) {
    throw Error(ErrorCode::kShapeMismatch, "target has " + std::to_string(target.size()) + " values, model emits " +
                                               std::to_string(O));
  }
  if (!(grads.config == weights.config)) throw Error(ErrorCode::kShapeMismatch, "gradient buffer config differs");
  audit_shapes(grads);

  Trace<T> tr;
  run_forward(weights, input, options, tr);

  // d/dz of BCE(sigmoid(z), t) is p - t; the mean over outputs divides by O.
  std::vector<T> dlogits(O);
  double loss = 0.0;
  const double per_output = scale / static_cast<double>(O);
  for (std::size_t o = 0; o < O; ++o) {
    const double p = static_cast<double>(tr.scores[o]);
    loss += bce_term(p, target[o]);
    dlogits[o] = static_cast<T>((p - target[o]) * per_output);
  }
  run_backward(weights, tr, std::span<const T>(dlogits), grads);
  if (scores_out) *scores_out = tr.scores;
  return loss / static_cast<double>(O);
}

template <class T>
double batch_gradients(const ModelWeights<T>& weights, std::span<const TokenizedInput> inputs,
                       std::span<const std::vector<double>> targets, const ForwardOptions& options,
                       ModelWeights<T>& grads) {
  if (inputs.size() != targets.size() || inputs.empty()) {
    throw Error(ErrorCode::kShapeMismatch, "batch inputs and targets differ in size or are empty");
  }
  grads.fill(T(0));
  const double scale = 1.0 / static_cast<double>(inputs.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    ForwardOptions o = options;
    o.dropout_seed = mix_seed(options.dropout_seed, i);
    loss += forward_backward(weights, inputs[i], targets[i], scale, o, grads);
  }
  return loss * scale;
}

#define QSCORE_INSTANTIATE(T)                                                                                   \
  template struct ModelWeights<T>;                                                                              \
  template void audit_shapes<T>(const ModelWeights<T>&);                                                       \
  template std::vector<T> forward<T>(const ModelWeights<T>&, const TokenizedInput&, const ForwardOptions&);    \
  template std::vector<std::vector<std::vector<std::vector<T>>>> attention_maps<T>(const ModelWeights<T>&,      \
                                                                                   const TokenizedInput&);      \
  template double forward_backward<T>(const ModelWeights<T>&, const TokenizedInput&, std::span<const double>,   \
                                      double, const ForwardOptions&, ModelWeights<T>&, std::vector<T>*);        \
  template double batch_gradients<T>(const ModelWeights<T>&, std::span<const TokenizedInput>,                   \
                                     std::span<const std::vector<double>>, const ForwardOptions&,               \
                                     ModelWeights<T>&);

QSCORE_INSTANTIATE(float)
QSCORE_INSTANTIATE(double)

#undef QSCORE_INSTANTIATE

}  // namespace qscore
