#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "dwrec/error.hpp"
#include "dwrec/rng.hpp"

namespace dwrec {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::RowVectorXd;

// Causal pre-LN transformer over item-id sequences. Item id 0 is padding.
struct EncoderConfig {
  int embed_dim = 256;
  int num_layers = 4;
  int num_heads = 8;
  int ff_hidden = 1024;
  double dropout = 0.1;
  int max_seq_len = 64;
  int vocab_size = 0;

  void validate() const {
    if (embed_dim <= 0 || num_layers <= 0 || num_heads <= 0 || ff_hidden <= 0 || max_seq_len <= 0)
      throw ConfigError("encoder: dimensions must be positive");
    if (embed_dim % num_heads != 0) throw ConfigError("encoder: embed_dim must be divisible by num_heads");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("encoder: dropout must lie in [0, 1)");
    if (vocab_size < 1) throw ConfigError("encoder: vocab_size must include the padding slot");
  }

  int head_dim() const { return embed_dim / num_heads; }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

inline nlohmann::json to_json(const EncoderConfig& c) {
  return {{"embed_dim", c.embed_dim}, {"num_layers", c.num_layers}, {"num_heads", c.num_heads},
          {"ff_hidden", c.ff_hidden}, {"dropout", c.dropout},       {"max_seq_len", c.max_seq_len},
          {"vocab_size", c.vocab_size}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.embed_dim = j.at("embed_dim").get<int>();
  c.num_layers = j.at("num_layers").get<int>();
  c.num_heads = j.at("num_heads").get<int>();
  c.ff_hidden = j.at("ff_hidden").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  return c;
}

struct LayerParams {
  Matrix ln1_gain, ln1_bias;
  Matrix wq, wk, wv, wo;
  Matrix bq, bk, bv, bo;
  Matrix ln2_gain, ln2_bias;
  Matrix w1, b1;
  Matrix w2, b2;
};

// All learnable tensors. Gradients share this type.
struct EncoderParams {
  EncoderConfig config;
  Matrix item_embedding;      // vocab x D
  Matrix position_embedding;  // max_seq_len x D
  std::vector<LayerParams> layers;
  Matrix final_gain, final_bias;
  // Bumped on every in-place update; forward caches remember it.
  std::uint64_t version = 0;

  static EncoderParams zeros(const EncoderConfig& c) {
    c.validate();
    EncoderParams p;
    p.config = c;
    const int D = c.embed_dim, F = c.ff_hidden;
    p.item_embedding = Matrix::Zero(c.vocab_size, D);
    p.position_embedding = Matrix::Zero(c.max_seq_len, D);
    p.layers.resize(static_cast<std::size_t>(c.num_layers));
    for (auto& l : p.layers) {
      for (Matrix* m : {&l.ln1_gain, &l.ln1_bias, &l.bq, &l.bk, &l.bv, &l.bo, &l.ln2_gain, &l.ln2_bias, &l.b2})
        *m = Matrix::Zero(1, D);
      for (Matrix* m : {&l.wq, &l.wk, &l.wv, &l.wo}) *m = Matrix::Zero(D, D);
      l.w1 = Matrix::Zero(D, F);
      l.b1 = Matrix::Zero(1, F);
      l.w2 = Matrix::Zero(F, D);
    }
    p.final_gain = Matrix::Zero(1, D);
    p.final_bias = Matrix::Zero(1, D);
    return p;
  }

  // Visits every tensor with a stable name, in a fixed order.
  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    f(std::string("item_embedding"), self.item_embedding);
    f(std::string("position_embedding"), self.position_embedding);
    for (std::size_t i = 0; i < self.layers.size(); ++i) {
      auto& l = self.layers[i];
      const std::string p = "layer" + std::to_string(i) + ".";
      f(p + "ln1_gain", l.ln1_gain);
      f(p + "ln1_bias", l.ln1_bias);
      f(p + "wq", l.wq);
      f(p + "bq", l.bq);
      f(p + "wk", l.wk);
      f(p + "bk", l.bk);
      f(p + "wv", l.wv);
      f(p + "bv", l.bv);
      f(p + "wo", l.wo);
      f(p + "bo", l.bo);
      f(p + "ln2_gain", l.ln2_gain);
      f(p + "ln2_bias", l.ln2_bias);
      f(p + "w1", l.w1);
      f(p + "b1", l.b1);
      f(p + "w2", l.w2);
      f(p + "b2", l.b2);
    }
    f(std::string("final_gain"), self.final_gain);
    f(std::string("final_bias"), self.final_bias);
  }
  template <typename F>
  void for_each(F&& f) {
    visit(*this, std::forward<F>(f));
  }
  template <typename F>
  void for_each(F&& f) const {
    visit(*this, std::forward<F>(f));
  }

  void set_zero() {
    for_each([](const std::string&, Matrix& m) { m.setZero(); });
  }

  std::size_t num_scalars() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
  }

  bool all_finite() const {
    bool ok = true;
    for_each([&](const std::string&, const Matrix& m) { ok = ok && m.allFinite(); });
    return ok;
  }
};

inline bool same_values(const EncoderParams& a, const EncoderParams& b) {
  if (!(a.config == b.config)) return false;
  std::vector<const Matrix*> lhs, rhs;
  a.for_each([&](const std::string&, const Matrix& m) { lhs.push_back(&m); });
  b.for_each([&](const std::string&, const Matrix& m) { rhs.push_back(&m); });
  for (std::size_t i = 0; i < lhs.size(); ++i) {
    if (lhs[i]->rows() != rhs[i]->rows() || lhs[i]->cols() != rhs[i]->cols()) return false;
    if (*lhs[i] != *rhs[i]) return false;
  }
  return true;
}

// Embedding tables ~ N(0, 1/D); projections ~ N(0, 1/fan_in); layer-norm
// gains 1 and every bias 0. The padding row stays zero.
inline EncoderParams init_params(const EncoderConfig& config, std::uint64_t seed) {
  EncoderParams p = EncoderParams::zeros(config);
  Rng rng = make_rng(seed, "init");
  auto fill = [&](Matrix& m, double scale) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * standard_normal(rng);
  };
  const double D = config.embed_dim;
  fill(p.item_embedding, 1.0 / std::sqrt(D));
  p.item_embedding.row(0).setZero();
  fill(p.position_embedding, 1.0 / std::sqrt(D));
  for (auto& l : p.layers) {
    l.ln1_gain.setOnes();
    l.ln2_gain.setOnes();
    for (Matrix* m : {&l.wq, &l.wk, &l.wv, &l.wo}) fill(*m, 1.0 / std::sqrt(D));
    fill(l.w1, 1.0 / std::sqrt(D));
    fill(l.w2, 1.0 / std::sqrt(static_cast<double>(config.ff_hidden)));
  }
  p.final_gain.setOnes();
  return p;
}

enum class Mode { kTrain, kEval };

namespace detail {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)

struct LayerNormCache {
  Matrix xhat;
  Eigen::VectorXd inv_std;
};

inline Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, LayerNormCache* cache) {
  const auto T = x.rows();
  const double D = static_cast<double>(x.cols());
  Matrix xhat(T, x.cols());
  Eigen::VectorXd inv_std(T);
  for (Eigen::Index t = 0; t < T; ++t) {
    const double mean = x.row(t).sum() / D;
    const RowVector centered = x.row(t).array() - mean;
    const double var = centered.squaredNorm() / D;
    inv_std(t) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(t) = centered * inv_std(t);
  }
  Matrix y = (xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
  if (cache) *cache = {std::move(xhat), std::move(inv_std)};
  return y;
}

// Accumulates gain/bias gradients and returns dL/dx.
inline Matrix layer_norm_backward(const Matrix& dy, const LayerNormCache& c, const Matrix& gain,
                                  Matrix& dgain, Matrix& dbias) {
  dgain += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  dbias += dy.colwise().sum();
  const Matrix dxhat = dy.array().rowwise() * gain.row(0).array();
  const double D = static_cast<double>(dy.cols());
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index t = 0; t < dy.rows(); ++t) {
    const double sum = dxhat.row(t).sum();
    const double dot = dxhat.row(t).dot(c.xhat.row(t));
    dx.row(t) = (c.inv_std(t) / D) * (D * dxhat.row(t).array() - sum - c.xhat.row(t).array() * dot).matrix();
  }
  return dx;
}

inline double gelu(double z) { return 0.5 * z * (1.0 + std::tanh(kGeluC * (z + 0.044715 * z * z * z))); }

inline double gelu_grad(double z) {
  const double th = std::tanh(kGeluC * (z + 0.044715 * z * z * z));
  return 0.5 * (1.0 + th) + 0.5 * z * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * 0.044715 * z * z);
}

inline Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  Matrix m(rows, cols);
  const double keep = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform01(rng) < p ? 0.0 : keep;
  return m;
}

}  // namespace detail

struct LayerCache {
  Matrix x_in;
  detail::LayerNormCache ln1;
  Matrix h1, q, k, v;
  std::vector<Matrix> probs;      // per head, post-softmax
  std::vector<Matrix> attn_mask;  // per head, empty when dropout is off
  Matrix attn_concat;
  detail::LayerNormCache ln2;
  Matrix h2, z1, g;
  Matrix ff_mask;
};

// Activations of one train-mode forward pass.
struct ForwardCache {
  std::vector<std::int32_t> items;  // after truncation
  std::vector<LayerCache> layers;
  detail::LayerNormCache final_ln;
  const EncoderParams* params = nullptr;
  std::uint64_t params_version = 0;
};

struct ForwardResult {
  RowVector embedding;           // final hidden state at the last position
  Matrix hidden;                 // T x D final hidden states, every position
  std::optional<ForwardCache> cache;
};

// Keeps the most recent `max_len` items.
inline std::vector<std::int32_t> truncate_recent(std::span<const std::int32_t> items, int max_len) {
  const auto n = static_cast<std::ptrdiff_t>(items.size());
  const auto start = std::max<std::ptrdiff_t>(0, n - max_len);
  return {items.begin() + start, items.end()};
}

inline ForwardResult forward(const EncoderParams& params, std::span<const std::int32_t> sequence, Mode mode,
                             std::uint64_t seed = 0) {
  const auto& cfg = params.config;
  if (sequence.empty()) throw ContractError("forward: empty sequence");
  auto items = truncate_recent(sequence, cfg.max_seq_len);
  for (auto id : items)
    if (id < 0 || id >= cfg.vocab_size) throw ContractError("forward: item id " + std::to_string(id) + " out of range");

  const auto T = static_cast<Eigen::Index>(items.size());
  const int D = cfg.embed_dim, H = cfg.num_heads, dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool train = mode == Mode::kTrain;
  const bool use_dropout = train && cfg.dropout > 0.0;
  Rng rng(seed);

  Matrix x(T, D);
  for (Eigen::Index t = 0; t < T; ++t) x.row(t) = params.item_embedding.row(items[t]) + params.position_embedding.row(t);

  ForwardCache cache;
  if (train) cache.layers.resize(params.layers.size());

  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    const auto& L = params.layers[li];
    LayerCache local;
    LayerCache& c = train ? cache.layers[li] : local;
    if (train) c.x_in = x;

    c.h1 = detail::layer_norm(x, L.ln1_gain, L.ln1_bias, &c.ln1);
    c.q = (c.h1 * L.wq).rowwise() + L.bq.row(0);
    c.k = (c.h1 * L.wk).rowwise() + L.bk.row(0);
    c.v = (c.h1 * L.wv).rowwise() + L.bv.row(0);
    c.attn_concat.resize(T, D);
    c.probs.resize(static_cast<std::size_t>(H));
    if (use_dropout) c.attn_mask.resize(static_cast<std::size_t>(H));
    for (int h = 0; h < H; ++h) {
      const auto qh = c.q.middleCols(h * dh, dh);
      const auto kh = c.k.middleCols(h * dh, dh);
      Matrix s = (qh * kh.transpose()) * scale;
      Matrix& a = c.probs[static_cast<std::size_t>(h)];
      a = Matrix::Zero(T, T);
      for (Eigen::Index t = 0; t < T; ++t) {
        const double m = s.row(t).head(t + 1).maxCoeff();
        double z = 0.0;
        for (Eigen::Index j = 0; j <= t; ++j) z += (a(t, j) = std::exp(s(t, j) - m));
        a.row(t).head(t + 1) /= z;
      }
      if (use_dropout) {
        auto& mask = c.attn_mask[static_cast<std::size_t>(h)];
        mask = detail::dropout_mask(T, T, cfg.dropout, rng);
        c.attn_concat.middleCols(h * dh, dh) = a.cwiseProduct(mask) * c.v.middleCols(h * dh, dh);
      } else {
        c.attn_concat.middleCols(h * dh, dh) = a * c.v.middleCols(h * dh, dh);
      }
    }
    x += (c.attn_concat * L.wo).rowwise() + L.bo.row(0);

    c.h2 = detail::layer_norm(x, L.ln2_gain, L.ln2_bias, &c.ln2);
    c.z1 = (c.h2 * L.w1).rowwise() + L.b1.row(0);
    c.g = c.z1.unaryExpr([](double z) { return detail::gelu(z); });
    Matrix ff = (c.g * L.w2).rowwise() + L.b2.row(0);
    if (use_dropout) {
      c.ff_mask = detail::dropout_mask(T, D, cfg.dropout, rng);
      ff = ff.cwiseProduct(c.ff_mask);
    }
    x += ff;
  }

  ForwardResult out;
  out.hidden = detail::layer_norm(x, params.final_gain, params.final_bias, train ? &cache.final_ln : nullptr);
  out.embedding = out.hidden.row(T - 1);
  if (train) {
    cache.items = std::move(items);
    cache.params = &params;
    cache.params_version = params.version;
    out.cache = std::move(cache);
  }
  return out;
}

// Accumulates into `grads` the gradient of a scalar whose derivative with
// respect to the output embedding is `d_embedding`.
inline void backward(const EncoderParams& params, const std::optional<ForwardCache>& cache,
                     const RowVector& d_embedding, EncoderParams& grads) {
  if (!cache) throw ContractError("backward: no cache (forward must run in train mode)");
  if (cache->params != &params || cache->params_version != params.version)
    throw ContractError("backward: cache is stale (parameters changed since forward)");
  const auto& cfg = params.config;
  const auto T = static_cast<Eigen::Index>(cache->items.size());
  const int D = cfg.embed_dim, H = cfg.num_heads, dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix dy = Matrix::Zero(T, D);
  dy.row(T - 1) = d_embedding;
  Matrix dx = detail::layer_norm_backward(dy, cache->final_ln, params.final_gain, grads.final_gain, grads.final_bias);

  for (std::size_t li = params.layers.size(); li-- > 0;) {
    const auto& L = params.layers[li];
    const auto& c = cache->layers[li];
    auto& G = grads.layers[li];

    // Feed-forward block.
    const Matrix dff = c.ff_mask.size() ? Matrix(dx.cwiseProduct(c.ff_mask)) : dx;
    G.w2.noalias() += c.g.transpose() * dff;
    G.b2 += dff.colwise().sum();
    Matrix dz1 = dff * L.w2.transpose();
    dz1.array() *= c.z1.unaryExpr([](double z) { return detail::gelu_grad(z); }).array();
    G.w1.noalias() += c.h2.transpose() * dz1;
    G.b1 += dz1.colwise().sum();
    const Matrix dh2 = dz1 * L.w1.transpose();
    dx += detail::layer_norm_backward(dh2, c.ln2, L.ln2_gain, G.ln2_gain, G.ln2_bias);

    // Attention block.
    G.wo.noalias() += c.attn_concat.transpose() * dx;
    G.bo += dx.colwise().sum();
    const Matrix dconcat = dx * L.wo.transpose();
    Matrix dq(T, D), dk(T, D), dv(T, D);
    for (int h = 0; h < H; ++h) {
      const auto& a = c.probs[static_cast<std::size_t>(h)];
      const bool masked = !c.attn_mask.empty();
      const Matrix dropped = masked ? Matrix(a.cwiseProduct(c.attn_mask[static_cast<std::size_t>(h)])) : a;
      const auto dout = dconcat.middleCols(h * dh, dh);
      dv.middleCols(h * dh, dh) = dropped.transpose() * dout;
      Matrix da = dout * c.v.middleCols(h * dh, dh).transpose();
      if (masked) da = da.cwiseProduct(c.attn_mask[static_cast<std::size_t>(h)]);
      Matrix ds(T, T);
      for (Eigen::Index t = 0; t < T; ++t) {
        const double dot = da.row(t).dot(a.row(t));
        ds.row(t) = a.row(t).array() * (da.row(t).array() - dot);
      }
      ds *= scale;
      dq.middleCols(h * dh, dh) = ds * c.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh) = ds.transpose() * c.q.middleCols(h * dh, dh);
    }
    G.wq.noalias() += c.h1.transpose() * dq;
    G.wk.noalias() += c.h1.transpose() * dk;
    G.wv.noalias() += c.h1.transpose() * dv;
    G.bq += dq.colwise().sum();
    G.bk += dk.colwise().sum();
    G.bv += dv.colwise().sum();
    const Matrix dh1 = dq * L.wq.transpose() + dk * L.wk.transpose() + dv * L.wv.transpose();
    dx += detail::layer_norm_backward(dh1, c.ln1, L.ln1_gain, G.ln1_gain, G.ln1_bias);
  }

  for (Eigen::Index t = 0; t < T; ++t) {
    grads.item_embedding.row(cache->items[static_cast<std::size_t>(t)]) += dx.row(t);
    grads.position_embedding.row(t) += dx.row(t);
  }
}

}  // namespace dwrec
