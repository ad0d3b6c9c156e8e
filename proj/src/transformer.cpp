// SPDX-License-Identifier: Apache-2.0
//
// Small pre-LN transformer backend: learned positional embeddings, causal
// multi-head attention, GELU MLP, final LayerNorm, untied unembedding.
// Forward caches every activation needed for an exact hand-written backward;
// gradients reach the caller through sequence_grad / hidden_grad /
// prompt_ce_grad, which all reduce to "inject d(logits) rows and/or a
// d(hidden) vector, then backpropagate".

#include <cmath>
#include <map>

#include "mpo/model.hpp"
#include "mpo/rng.hpp"

namespace mpo {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.79788456080286535588;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double gelu(double x) {
  const double t = kGeluC * (x + kGeluA * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(t));
}

double gelu_deriv(double x) {
  const double t = kGeluC * (x + kGeluA * x * x * x);
  const double th = std::tanh(t);
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

// Parameter block offsets inside the flat vector, one per layer.
struct LayerOffsets {
  std::size_t ln1_g, ln1_b;
  std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
  std::size_t ln2_g, ln2_b;
  std::size_t w1, b1, w2, b2;
};

struct LayerCache {
  Vec ln1_xhat, ln1_rstd;  // T*d, T
  Vec q, k, v;             // T*d
  Vec attw;                // heads*T*T (row t: weights over u <= t)
  Vec att_o;               // T*d, concatenated head outputs before Wo
  Vec x_mid;               // T*d, after attention residual
  Vec ln2_xhat, ln2_rstd;
  Vec u1, gel;             // T*dff
  Vec x_out;               // T*d
};

struct Cache {
  int T = 0;
  TokenSeq ext;
  Vec x0;  // T*d, layer-0 input
  std::vector<LayerCache> layers;
  Vec lnf_xhat, lnf_rstd;
  Vec f;  // T*d, post-final-LN hidden states
};

class TransformerBackend final : public Backend {
 public:
  TransformerBackend(int vocab_size, const TransformerConfig& cfg, std::uint64_t seed)
      : vocab_(vocab_size), cfg_(cfg) {
    if (vocab_size < 2) throw ConfigError("transformer backend requires vocab_size >= 2");
    if (cfg.d_model < 2 || cfg.n_heads < 1 || cfg.d_model % cfg.n_heads != 0)
      throw ConfigError("d_model must be a positive multiple of n_heads");
    if (cfg.n_layers < 1 || cfg.d_ff < 1 || cfg.max_seq < 2)
      throw ConfigError("transformer shape fields must be positive (max_seq >= 2)");
    layout();
    params_.assign(total_params_, 0.0);
    init_params(seed);
  }

  BackendKind kind() const override { return BackendKind::transformer; }
  int vocab_size() const override { return vocab_; }
  std::size_t param_count() const override { return params_.size(); }
  std::span<const double> params() const override { return params_; }
  std::span<double> params_mut() override { return params_; }
  std::unique_ptr<Backend> clone() const override { return std::make_unique<TransformerBackend>(*this); }
  std::vector<int> shape_ints() const override {
    return {vocab_, cfg_.n_layers, cfg_.d_model, cfg_.n_heads, cfg_.d_ff, cfg_.max_seq};
  }

  SequenceScore score_sequence(TokenSpan x, TokenSpan y) const override {
    Cache cache;
    forward(extend(x, y), cache);
    SequenceScore s;
    s.length = static_cast<int>(y.size());
    s.per_token_logprobs.resize(y.size());
    Vec logits(static_cast<std::size_t>(vocab_)), lp(static_cast<std::size_t>(vocab_));
    const std::size_t m = x.size();
    for (std::size_t j = 0; j < y.size(); ++j) {
      logits_at(cache, m + j, logits);
      log_softmax_into(logits, lp);
      s.per_token_logprobs[j] = lp[static_cast<std::size_t>(y[j])];
      s.total_logprob += s.per_token_logprobs[j];
    }
    s.avg_logprob = s.total_logprob / s.length;
    return s;
  }

  void sequence_grad(TokenSpan x, TokenSpan y, std::span<const double> weights, double scale,
                     std::span<double> grad) const override {
    Cache cache;
    forward(extend(x, y), cache);
    // d(sum_j w_j log p(y_j)) / d(logits row) = w_j * (onehot - softmax).
    std::map<std::size_t, Vec> dlogits;
    Vec logits(static_cast<std::size_t>(vocab_)), p(static_cast<std::size_t>(vocab_));
    const std::size_t m = x.size();
    for (std::size_t j = 0; j < y.size(); ++j) {
      const double w = scale * weights[j];
      if (w == 0.0) continue;
      const std::size_t pos = m + j;
      logits_at(cache, pos, logits);
      softmax_into(logits, p);
      Vec dl(static_cast<std::size_t>(vocab_));
      for (int v = 0; v < vocab_; ++v) dl[static_cast<std::size_t>(v)] = -w * p[static_cast<std::size_t>(v)];
      dl[static_cast<std::size_t>(y[j])] += w;
      dlogits.emplace(pos, std::move(dl));
    }
    backward(cache, dlogits, nullptr, 0, grad);
  }

  int hidden_dim() const override { return cfg_.d_model; }

  Vec hidden_at_last(TokenSpan x) const override {
    Cache cache;
    forward(extend(x, {}), cache);
    const std::size_t pos = x.size();  // ext[pos] is the last prompt token
    const std::size_t d = static_cast<std::size_t>(cfg_.d_model);
    return Vec(cache.f.begin() + static_cast<std::ptrdiff_t>(pos * d),
               cache.f.begin() + static_cast<std::ptrdiff_t>((pos + 1) * d));
  }

  void hidden_grad(TokenSpan x, std::span<const double> upstream, double scale,
                   std::span<double> grad) const override {
    Cache cache;
    forward(extend(x, {}), cache);
    Vec dh(upstream.size());
    for (std::size_t i = 0; i < upstream.size(); ++i) dh[i] = scale * upstream[i];
    std::map<std::size_t, Vec> none;
    backward(cache, none, &dh, x.size(), grad);
  }

  Vec next_token_logprobs(TokenSpan prefix) const override {
    Cache cache;
    forward(extend(prefix, {}), cache);
    Vec logits(static_cast<std::size_t>(vocab_)), lp(static_cast<std::size_t>(vocab_));
    logits_at(cache, prefix.size(), logits);
    log_softmax_into(logits, lp);
    return lp;
  }

  std::vector<Vec> prompt_log_distributions(TokenSpan x) const override {
    Cache cache;
    forward(extend(x, {}), cache);
    std::vector<Vec> out(x.size(), Vec(static_cast<std::size_t>(vocab_)));
    Vec logits(static_cast<std::size_t>(vocab_));
    for (std::size_t j = 0; j < x.size(); ++j) {
      logits_at(cache, j, logits);
      log_softmax_into(logits, out[j]);
    }
    return out;
  }

  void prompt_ce_grad(TokenSpan x, const std::vector<Vec>& target, double scale,
                      std::span<double> grad) const override {
    Cache cache;
    forward(extend(x, {}), cache);
    std::map<std::size_t, Vec> dlogits;
    Vec logits(static_cast<std::size_t>(vocab_)), p(static_cast<std::size_t>(vocab_));
    for (std::size_t j = 0; j < x.size(); ++j) {
      logits_at(cache, j, logits);
      softmax_into(logits, p);
      double tsum = 0.0;
      for (const double t : target[j]) tsum += t;
      Vec dl(static_cast<std::size_t>(vocab_));
      for (int v = 0; v < vocab_; ++v)
        dl[static_cast<std::size_t>(v)] =
            scale * (target[j][static_cast<std::size_t>(v)] - tsum * p[static_cast<std::size_t>(v)]);
      dlogits.emplace(j, std::move(dl));
    }
    backward(cache, dlogits, nullptr, 0, grad);
  }

 private:
  // ------------------------------------------------------------ layout ----
  void layout() {
    const auto d = static_cast<std::size_t>(cfg_.d_model);
    const auto dff = static_cast<std::size_t>(cfg_.d_ff);
    std::size_t at = 0;
    auto take = [&at](std::size_t n) {
      const std::size_t o = at;
      at += n;
      return o;
    };
    tok_emb_ = take(static_cast<std::size_t>(vocab_ + 1) * d);
    pos_emb_ = take(static_cast<std::size_t>(cfg_.max_seq) * d);
    offsets_.resize(static_cast<std::size_t>(cfg_.n_layers));
    for (auto& o : offsets_) {
      o.ln1_g = take(d);
      o.ln1_b = take(d);
      o.wq = take(d * d);
      o.bq = take(d);
      o.wk = take(d * d);
      o.bk = take(d);
      o.wv = take(d * d);
      o.bv = take(d);
      o.wo = take(d * d);
      o.bo = take(d);
      o.ln2_g = take(d);
      o.ln2_b = take(d);
      o.w1 = take(dff * d);
      o.b1 = take(dff);
      o.w2 = take(d * dff);
      o.b2 = take(d);
    }
    lnf_g_ = take(d);
    lnf_b_ = take(d);
    w_u_ = take(static_cast<std::size_t>(vocab_) * d);
    b_u_ = take(static_cast<std::size_t>(vocab_));
    total_params_ = at;
  }

  void init_params(std::uint64_t seed) {
    Rng rng = Rng::derive(seed, {"transformer-init"});
    auto gauss = [&](std::size_t off, std::size_t n) {
      for (std::size_t i = 0; i < n; ++i) params_[off + i] = cfg_.init_std * rng.normal();
    };
    auto ones = [&](std::size_t off, std::size_t n) {
      for (std::size_t i = 0; i < n; ++i) params_[off + i] = 1.0;
    };
    const auto d = static_cast<std::size_t>(cfg_.d_model);
    const auto dff = static_cast<std::size_t>(cfg_.d_ff);
    gauss(tok_emb_, static_cast<std::size_t>(vocab_ + 1) * d);
    gauss(pos_emb_, static_cast<std::size_t>(cfg_.max_seq) * d);
    for (const auto& o : offsets_) {
      ones(o.ln1_g, d);
      gauss(o.wq, d * d);
      gauss(o.wk, d * d);
      gauss(o.wv, d * d);
      gauss(o.wo, d * d);
      ones(o.ln2_g, d);
      gauss(o.w1, dff * d);
      gauss(o.w2, d * dff);
    }
    ones(lnf_g_, d);
    gauss(w_u_, static_cast<std::size_t>(vocab_) * d);
  }

  TokenSeq extend(TokenSpan x, TokenSpan y) const {
    TokenSeq ext;
    ext.reserve(1 + x.size() + y.size());
    ext.push_back(vocab_);  // BOS embedding row
    ext.insert(ext.end(), x.begin(), x.end());
    ext.insert(ext.end(), y.begin(), y.end());
    if (static_cast<int>(ext.size()) > cfg_.max_seq)
      throw InputError("sequence length " + std::to_string(ext.size()) + " exceeds max_seq " +
                       std::to_string(cfg_.max_seq));
    return ext;
  }

  // ----------------------------------------------------------- forward ----

  // y[i] = g[i] * (x[i] - mu) * rstd + b[i]; xhat and rstd cached.
  void layer_norm(const double* x, const double* g, const double* b, double* y, double* xhat,
                  double* rstd_out) const {
    const int d = cfg_.d_model;
    double mu = 0.0;
    for (int i = 0; i < d; ++i) mu += x[i];
    mu /= d;
    double var = 0.0;
    for (int i = 0; i < d; ++i) {
      const double c = x[i] - mu;
      var += c * c;
    }
    var /= d;
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    *rstd_out = rstd;
    for (int i = 0; i < d; ++i) {
      xhat[i] = (x[i] - mu) * rstd;
      y[i] = g[i] * xhat[i] + b[i];
    }
  }

  // out[i] = sum_j W[i*cols+j] * in[j] + b[i]
  void affine(const double* W, const double* b, const double* in, double* out, int rows,
              int cols) const {
    for (int i = 0; i < rows; ++i) {
      double s = b ? b[i] : 0.0;
      const double* w = W + static_cast<std::size_t>(i) * static_cast<std::size_t>(cols);
      for (int j = 0; j < cols; ++j) s += w[j] * in[j];
      out[i] = s;
    }
  }

  void forward(TokenSeq ext, Cache& cache) const {
    const int T = static_cast<int>(ext.size());
    const int d = cfg_.d_model;
    const int dff = cfg_.d_ff;
    const int nh = cfg_.n_heads;
    const int dh = d / nh;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    const auto du = static_cast<std::size_t>(d);
    cache.T = T;
    cache.ext = std::move(ext);
    cache.x0.assign(static_cast<std::size_t>(T) * du, 0.0);
    const double* P = params_.data();
    for (int t = 0; t < T; ++t) {
      const double* te = P + tok_emb_ + static_cast<std::size_t>(cache.ext[static_cast<std::size_t>(t)]) * du;
      const double* pe = P + pos_emb_ + static_cast<std::size_t>(t) * du;
      double* x = &cache.x0[static_cast<std::size_t>(t) * du];
      for (int i = 0; i < d; ++i) x[i] = te[i] + pe[i];
    }

    cache.layers.resize(static_cast<std::size_t>(cfg_.n_layers));
    const Vec* x_in = &cache.x0;
    Vec a(static_cast<std::size_t>(T) * du), m(static_cast<std::size_t>(T) * du);
    for (int l = 0; l < cfg_.n_layers; ++l) {
      const auto& o = offsets_[static_cast<std::size_t>(l)];
      auto& lc = cache.layers[static_cast<std::size_t>(l)];
      lc.ln1_xhat.resize(static_cast<std::size_t>(T) * du);
      lc.ln1_rstd.resize(static_cast<std::size_t>(T));
      lc.q.resize(static_cast<std::size_t>(T) * du);
      lc.k.resize(static_cast<std::size_t>(T) * du);
      lc.v.resize(static_cast<std::size_t>(T) * du);
      lc.attw.assign(static_cast<std::size_t>(nh) * static_cast<std::size_t>(T) * static_cast<std::size_t>(T), 0.0);
      lc.att_o.assign(static_cast<std::size_t>(T) * du, 0.0);
      lc.x_mid.resize(static_cast<std::size_t>(T) * du);
      lc.ln2_xhat.resize(static_cast<std::size_t>(T) * du);
      lc.ln2_rstd.resize(static_cast<std::size_t>(T));
      lc.u1.resize(static_cast<std::size_t>(T) * static_cast<std::size_t>(dff));
      lc.gel.resize(static_cast<std::size_t>(T) * static_cast<std::size_t>(dff));
      lc.x_out.resize(static_cast<std::size_t>(T) * du);

      for (int t = 0; t < T; ++t) {
        layer_norm(&(*x_in)[static_cast<std::size_t>(t) * du], P + o.ln1_g, P + o.ln1_b,
                   &a[static_cast<std::size_t>(t) * du], &lc.ln1_xhat[static_cast<std::size_t>(t) * du],
                   &lc.ln1_rstd[static_cast<std::size_t>(t)]);
        affine(P + o.wq, P + o.bq, &a[static_cast<std::size_t>(t) * du], &lc.q[static_cast<std::size_t>(t) * du], d, d);
        affine(P + o.wk, P + o.bk, &a[static_cast<std::size_t>(t) * du], &lc.k[static_cast<std::size_t>(t) * du], d, d);
        affine(P + o.wv, P + o.bv, &a[static_cast<std::size_t>(t) * du], &lc.v[static_cast<std::size_t>(t) * du], d, d);
      }

      // Causal attention per head.
      Vec scores(static_cast<std::size_t>(T));
      for (int h = 0; h < nh; ++h) {
        const int hoff = h * dh;
        for (int t = 0; t < T; ++t) {
          const double* qt = &lc.q[static_cast<std::size_t>(t) * du] + hoff;
          double mx = -1e300;
          for (int u = 0; u <= t; ++u) {
            const double* ku = &lc.k[static_cast<std::size_t>(u) * du] + hoff;
            double s = 0.0;
            for (int i = 0; i < dh; ++i) s += qt[i] * ku[i];
            s *= inv_sqrt_dh;
            scores[static_cast<std::size_t>(u)] = s;
            if (s > mx) mx = s;
          }
          double denom = 0.0;
          for (int u = 0; u <= t; ++u) {
            scores[static_cast<std::size_t>(u)] = std::exp(scores[static_cast<std::size_t>(u)] - mx);
            denom += scores[static_cast<std::size_t>(u)];
          }
          double* wrow = &lc.attw[(static_cast<std::size_t>(h) * static_cast<std::size_t>(T) +
                                   static_cast<std::size_t>(t)) * static_cast<std::size_t>(T)];
          double* ot = &lc.att_o[static_cast<std::size_t>(t) * du] + hoff;
          for (int u = 0; u <= t; ++u) {
            const double w = scores[static_cast<std::size_t>(u)] / denom;
            wrow[u] = w;
            const double* vu = &lc.v[static_cast<std::size_t>(u) * du] + hoff;
            for (int i = 0; i < dh; ++i) ot[i] += w * vu[i];
          }
        }
      }

      Vec att_out(du);
      for (int t = 0; t < T; ++t) {
        affine(P + o.wo, P + o.bo, &lc.att_o[static_cast<std::size_t>(t) * du], att_out.data(), d, d);
        double* xm = &lc.x_mid[static_cast<std::size_t>(t) * du];
        const double* xi = &(*x_in)[static_cast<std::size_t>(t) * du];
        for (int i = 0; i < d; ++i) xm[i] = xi[i] + att_out[static_cast<std::size_t>(i)];

        layer_norm(xm, P + o.ln2_g, P + o.ln2_b, &m[static_cast<std::size_t>(t) * du],
                   &lc.ln2_xhat[static_cast<std::size_t>(t) * du], &lc.ln2_rstd[static_cast<std::size_t>(t)]);
        affine(P + o.w1, P + o.b1, &m[static_cast<std::size_t>(t) * du],
               &lc.u1[static_cast<std::size_t>(t) * static_cast<std::size_t>(dff)], dff, d);
        double* gl = &lc.gel[static_cast<std::size_t>(t) * static_cast<std::size_t>(dff)];
        const double* u1 = &lc.u1[static_cast<std::size_t>(t) * static_cast<std::size_t>(dff)];
        for (int i = 0; i < dff; ++i) gl[i] = gelu(u1[i]);
        Vec mlp(du);
        affine(P + o.w2, P + o.b2, gl, mlp.data(), d, dff);
        double* xo = &lc.x_out[static_cast<std::size_t>(t) * du];
        for (int i = 0; i < d; ++i) xo[i] = xm[i] + mlp[static_cast<std::size_t>(i)];
      }
      x_in = &lc.x_out;
    }

    cache.lnf_xhat.resize(static_cast<std::size_t>(T) * du);
    cache.lnf_rstd.resize(static_cast<std::size_t>(T));
    cache.f.resize(static_cast<std::size_t>(T) * du);
    for (int t = 0; t < T; ++t)
      layer_norm(&(*x_in)[static_cast<std::size_t>(t) * du], P + lnf_g_, P + lnf_b_,
                 &cache.f[static_cast<std::size_t>(t) * du], &cache.lnf_xhat[static_cast<std::size_t>(t) * du],
                 &cache.lnf_rstd[static_cast<std::size_t>(t)]);
  }

  void logits_at(const Cache& cache, std::size_t pos, Vec& out) const {
    const auto d = static_cast<std::size_t>(cfg_.d_model);
    affine(params_.data() + w_u_, params_.data() + b_u_, &cache.f[pos * d], out.data(), vocab_,
           cfg_.d_model);
  }

  // ---------------------------------------------------------- backward ----

  // LN backward for one position.  dy: upstream (length d); accumulates into
  // dg/db; writes dx (length d).
  void layer_norm_backward(const double* dy, const double* xhat, double rstd, const double* g,
                           double* dg, double* db, double* dx) const {
    const int d = cfg_.d_model;
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (int i = 0; i < d; ++i) {
      const double dxh = dy[i] * g[i];
      mean_dxhat += dxh;
      mean_dxhat_xhat += dxh * xhat[i];
      dg[i] += dy[i] * xhat[i];
      db[i] += dy[i];
    }
    mean_dxhat /= d;
    mean_dxhat_xhat /= d;
    for (int i = 0; i < d; ++i) {
      const double dxh = dy[i] * g[i];
      dx[i] = rstd * (dxh - mean_dxhat - xhat[i] * mean_dxhat_xhat);
    }
  }

  // dlogits: sparse rows pos -> d(loss)/d(logits[pos]); dhidden: optional
  // d(loss)/d(f[hpos]).  Accumulates parameter gradients into grad.
  void backward(const Cache& cache, const std::map<std::size_t, Vec>& dlogits, const Vec* dhidden,
                std::size_t hpos, std::span<double> grad) const {
    const int T = cache.T;
    const int d = cfg_.d_model;
    const int dff = cfg_.d_ff;
    const int nh = cfg_.n_heads;
    const int dh = d / nh;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    const auto du = static_cast<std::size_t>(d);
    const double* P = params_.data();
    double* G = grad.data();

    // d(loss)/d(f): unembedding backward.
    Vec df(static_cast<std::size_t>(T) * du, 0.0);
    for (const auto& [pos, dl] : dlogits) {
      const double* f = &cache.f[pos * du];
      double* dft = &df[pos * du];
      for (int v = 0; v < vocab_; ++v) {
        const double dv = dl[static_cast<std::size_t>(v)];
        if (dv == 0.0) continue;
        const double* wu = P + w_u_ + static_cast<std::size_t>(v) * du;
        double* gwu = G + w_u_ + static_cast<std::size_t>(v) * du;
        for (int i = 0; i < d; ++i) {
          dft[i] += dv * wu[i];
          gwu[i] += dv * f[i];
        }
        G[b_u_ + static_cast<std::size_t>(v)] += dv;
      }
    }
    if (dhidden)
      for (int i = 0; i < d; ++i) df[hpos * du + static_cast<std::size_t>(i)] += (*dhidden)[static_cast<std::size_t>(i)];

    // Final LN backward -> dx over the last layer's output.
    Vec dx(static_cast<std::size_t>(T) * du, 0.0);
    for (int t = 0; t < T; ++t) {
      const auto ti = static_cast<std::size_t>(t) * du;
      bool any = dhidden && hpos == static_cast<std::size_t>(t);
      if (!any)
        for (int i = 0; i < d && !any; ++i) any = df[ti + static_cast<std::size_t>(i)] != 0.0;
      if (!any) continue;
      layer_norm_backward(&df[ti], &cache.lnf_xhat[ti], cache.lnf_rstd[static_cast<std::size_t>(t)],
                          P + lnf_g_, G + lnf_g_, G + lnf_b_, &dx[ti]);
    }

    Vec da(static_cast<std::size_t>(T) * du), dm(du), du1(static_cast<std::size_t>(dff));
    Vec dq(static_cast<std::size_t>(T) * du), dk(static_cast<std::size_t>(T) * du), dv(static_cast<std::size_t>(T) * du);
    Vec do_(static_cast<std::size_t>(T) * du);
    Vec a_row(du), m_row(du);
    Vec dattw(static_cast<std::size_t>(T)), ds(static_cast<std::size_t>(T));

    for (int l = cfg_.n_layers - 1; l >= 0; --l) {
      const auto& o = offsets_[static_cast<std::size_t>(l)];
      const auto& lc = cache.layers[static_cast<std::size_t>(l)];

      // MLP block backward: x_out = x_mid + W2 gelu(W1 m + b1) + b2,
      // m = ln2(x_mid).  dx currently holds d/dx_out; produce d/dx_mid.
      for (int t = 0; t < T; ++t) {
        const auto ti = static_cast<std::size_t>(t) * du;
        const auto tf = static_cast<std::size_t>(t) * static_cast<std::size_t>(dff);
        const double* dxo = &dx[ti];
        // dgel = W2^T dxo; param grads for W2, b2.
        std::fill(du1.begin(), du1.end(), 0.0);
        for (int i = 0; i < d; ++i) {
          const double dvi = dxo[i];
          if (dvi == 0.0) continue;
          const double* w2 = P + o.w2 + static_cast<std::size_t>(i) * static_cast<std::size_t>(dff);
          double* gw2 = G + o.w2 + static_cast<std::size_t>(i) * static_cast<std::size_t>(dff);
          for (int j = 0; j < dff; ++j) {
            du1[static_cast<std::size_t>(j)] += dvi * w2[j];
            gw2[j] += dvi * lc.gel[tf + static_cast<std::size_t>(j)];
          }
          G[o.b2 + static_cast<std::size_t>(i)] += dvi;
        }
        // through GELU
        for (int j = 0; j < dff; ++j)
          du1[static_cast<std::size_t>(j)] *= gelu_deriv(lc.u1[tf + static_cast<std::size_t>(j)]);
        // dm = W1^T du1; param grads for W1, b1 (needs m = ln2 output).
        const double* xh2 = &lc.ln2_xhat[ti];
        for (int i = 0; i < d; ++i)
          m_row[static_cast<std::size_t>(i)] = P[o.ln2_g + static_cast<std::size_t>(i)] * xh2[i] +
                                               P[o.ln2_b + static_cast<std::size_t>(i)];
        std::fill(dm.begin(), dm.end(), 0.0);
        for (int j = 0; j < dff; ++j) {
          const double dj = du1[static_cast<std::size_t>(j)];
          if (dj == 0.0) continue;
          const double* w1 = P + o.w1 + static_cast<std::size_t>(j) * du;
          double* gw1 = G + o.w1 + static_cast<std::size_t>(j) * du;
          for (int i = 0; i < d; ++i) {
            dm[static_cast<std::size_t>(i)] += dj * w1[i];
            gw1[i] += dj * m_row[static_cast<std::size_t>(i)];
          }
          G[o.b1 + static_cast<std::size_t>(j)] += dj;
        }
        // ln2 backward; dx_mid = dx_out (residual) + ln2-path.
        Vec dxm(du, 0.0);
        layer_norm_backward(dm.data(), xh2, lc.ln2_rstd[static_cast<std::size_t>(t)], P + o.ln2_g,
                            G + o.ln2_g, G + o.ln2_b, dxm.data());
        double* dxt = &dx[ti];
        for (int i = 0; i < d; ++i) dxt[i] += dxm[static_cast<std::size_t>(i)];
        // dx now holds d/dx_mid.
      }

      // Attention block backward: x_mid = x_in + Wo att_o + bo.
      std::fill(do_.begin(), do_.end(), 0.0);
      std::fill(dq.begin(), dq.end(), 0.0);
      std::fill(dk.begin(), dk.end(), 0.0);
      std::fill(dv.begin(), dv.end(), 0.0);
      for (int t = 0; t < T; ++t) {
        const auto ti = static_cast<std::size_t>(t) * du;
        const double* dxm = &dx[ti];
        double* dot = &do_[ti];
        for (int i = 0; i < d; ++i) {
          const double dvi = dxm[i];
          if (dvi == 0.0) continue;
          const double* wo = P + o.wo + static_cast<std::size_t>(i) * du;
          double* gwo = G + o.wo + static_cast<std::size_t>(i) * du;
          for (int j = 0; j < d; ++j) {
            dot[j] += dvi * wo[j];
            gwo[j] += dvi * lc.att_o[ti + static_cast<std::size_t>(j)];
          }
          G[o.bo + static_cast<std::size_t>(i)] += dvi;
        }
      }
      for (int h = 0; h < nh; ++h) {
        const int hoff = h * dh;
        for (int t = 0; t < T; ++t) {
          const auto ti = static_cast<std::size_t>(t) * du;
          const double* dot = &do_[ti] + hoff;
          const double* wrow = &lc.attw[(static_cast<std::size_t>(h) * static_cast<std::size_t>(T) +
                                         static_cast<std::size_t>(t)) * static_cast<std::size_t>(T)];
          double inner = 0.0;
          for (int u = 0; u <= t; ++u) {
            const double* vu = &lc.v[static_cast<std::size_t>(u) * du] + hoff;
            double dw = 0.0;
            for (int i = 0; i < dh; ++i) dw += dot[i] * vu[i];
            dattw[static_cast<std::size_t>(u)] = dw;
            inner += wrow[u] * dw;
            double* dvu = &dv[static_cast<std::size_t>(u) * du] + hoff;
            for (int i = 0; i < dh; ++i) dvu[i] += wrow[u] * dot[i];
          }
          for (int u = 0; u <= t; ++u)
            ds[static_cast<std::size_t>(u)] = wrow[u] * (dattw[static_cast<std::size_t>(u)] - inner);
          double* dqt = &dq[ti] + hoff;
          const double* qt = &lc.q[ti] + hoff;
          for (int u = 0; u <= t; ++u) {
            const double s = ds[static_cast<std::size_t>(u)] * inv_sqrt_dh;
            if (s == 0.0) continue;
            const double* ku = &lc.k[static_cast<std::size_t>(u) * du] + hoff;
            double* dku = &dk[static_cast<std::size_t>(u) * du] + hoff;
            for (int i = 0; i < dh; ++i) {
              dqt[i] += s * ku[i];
              dku[i] += s * qt[i];
            }
          }
        }
      }
      // Back through the Q/K/V projections into da, then ln1 into dx_in.
      std::fill(da.begin(), da.end(), 0.0);
      for (int t = 0; t < T; ++t) {
        const auto ti = static_cast<std::size_t>(t) * du;
        const double* xh1 = &lc.ln1_xhat[ti];
        for (int i = 0; i < d; ++i)
          a_row[static_cast<std::size_t>(i)] = P[o.ln1_g + static_cast<std::size_t>(i)] * xh1[i] +
                                               P[o.ln1_b + static_cast<std::size_t>(i)];
        double* dat = &da[ti];
        struct Proj {
          std::size_t w, b;
          const Vec* dvec;
        };
        const Proj projs[3] = {{o.wq, o.bq, &dq}, {o.wk, o.bk, &dk}, {o.wv, o.bv, &dv}};
        for (const auto& pr : projs) {
          const double* dz = &(*pr.dvec)[ti];
          for (int i = 0; i < d; ++i) {
            const double dvi = dz[i];
            if (dvi == 0.0) continue;
            const double* w = P + pr.w + static_cast<std::size_t>(i) * du;
            double* gw = G + pr.w + static_cast<std::size_t>(i) * du;
            for (int j = 0; j < d; ++j) {
              dat[j] += dvi * w[j];
              gw[j] += dvi * a_row[static_cast<std::size_t>(j)];
            }
            G[pr.b + static_cast<std::size_t>(i)] += dvi;
          }
        }
        Vec dxi(du, 0.0);
        layer_norm_backward(dat, xh1, lc.ln1_rstd[static_cast<std::size_t>(t)], P + o.ln1_g,
                            G + o.ln1_g, G + o.ln1_b, dxi.data());
        double* dxt = &dx[ti];
        for (int i = 0; i < d; ++i) dxt[i] += dxi[static_cast<std::size_t>(i)];
        // dx now holds d/dx_in for this layer.
      }
    }

    // Embedding gradients.
    for (int t = 0; t < T; ++t) {
      const auto ti = static_cast<std::size_t>(t) * du;
      double* gte = G + tok_emb_ + static_cast<std::size_t>(cache.ext[static_cast<std::size_t>(t)]) * du;
      double* gpe = G + pos_emb_ + static_cast<std::size_t>(t) * du;
      for (int i = 0; i < d; ++i) {
        const double g = dx[ti + static_cast<std::size_t>(i)];
        gte[i] += g;
        gpe[i] += g;
      }
    }
  }

  int vocab_;
  TransformerConfig cfg_;
  std::size_t tok_emb_ = 0, pos_emb_ = 0, lnf_g_ = 0, lnf_b_ = 0, w_u_ = 0, b_u_ = 0;
  std::vector<LayerOffsets> offsets_;
  std::size_t total_params_ = 0;
  Vec params_;
};

}  // namespace

std::unique_ptr<Backend> make_transformer_backend(int vocab_size, const TransformerConfig& cfg,
                                                  std::uint64_t seed) {
  return std::make_unique<TransformerBackend>(vocab_size, cfg, seed);
}

}  // namespace mpo
