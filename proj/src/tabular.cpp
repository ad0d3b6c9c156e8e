// SPDX-License-Identifier: Apache-2.0
//
// Tabular-softmax backend: one logit row per context, context = the last k
// tokens of the BOS-extended sequence (BOS-padded on the left).  Exact and
// cheap enough for brute-force oracles.

#include <cmath>

#include "mpo/model.hpp"
#include "mpo/rng.hpp"

namespace mpo {

namespace {

class TabularBackend final : public Backend {
 public:
  TabularBackend(int vocab_size, int order, double init_std, std::uint64_t seed)
      : vocab_(vocab_size), order_(order) {
    if (vocab_size < 2) throw ConfigError("tabular backend requires vocab_size >= 2");
    if (order < 0 || order > 3) throw ConfigError("tabular context order must be in [0,3]");
    std::size_t rows = 1;
    for (int i = 0; i < order; ++i) rows *= static_cast<std::size_t>(vocab_ + 1);
    rows_ = rows;
    params_.assign(rows_ * static_cast<std::size_t>(vocab_), 0.0);
    if (init_std > 0.0) {
      Rng rng = Rng::derive(seed, {"tabular-init"});
      for (double& p : params_) p = init_std * rng.normal();
    }
  }

  BackendKind kind() const override { return BackendKind::tabular; }
  int vocab_size() const override { return vocab_; }
  std::size_t param_count() const override { return params_.size(); }
  std::span<const double> params() const override { return params_; }
  std::span<double> params_mut() override { return params_; }
  std::unique_ptr<Backend> clone() const override { return std::make_unique<TabularBackend>(*this); }
  std::vector<int> shape_ints() const override { return {vocab_, order_}; }

  SequenceScore score_sequence(TokenSpan x, TokenSpan y) const override {
    const TokenSeq ext = extend(x, y);
    SequenceScore s;
    s.length = static_cast<int>(y.size());
    s.per_token_logprobs.resize(y.size());
    Vec lp(static_cast<std::size_t>(vocab_));
    const std::size_t m = x.size();
    for (std::size_t j = 0; j < y.size(); ++j) {
      const std::size_t row = context_index(ext, m + j);
      log_softmax_into(row_span(row), lp);
      s.per_token_logprobs[j] = lp[static_cast<std::size_t>(y[j])];
      s.total_logprob += s.per_token_logprobs[j];
    }
    s.avg_logprob = s.total_logprob / s.length;
    return s;
  }

  void sequence_grad(TokenSpan x, TokenSpan y, std::span<const double> weights, double scale,
                     std::span<double> grad) const override {
    const TokenSeq ext = extend(x, y);
    Vec p(static_cast<std::size_t>(vocab_));
    const std::size_t m = x.size();
    for (std::size_t j = 0; j < y.size(); ++j) {
      const double w = scale * weights[j];
      if (w == 0.0) continue;
      const std::size_t row = context_index(ext, m + j);
      softmax_into(row_span(row), p);
      double* g = grad.data() + row * static_cast<std::size_t>(vocab_);
      for (int v = 0; v < vocab_; ++v) g[v] -= w * p[static_cast<std::size_t>(v)];
      g[y[j]] += w;
    }
  }

  int hidden_dim() const override { return vocab_; }

  Vec hidden_at_last(TokenSpan x) const override {
    const std::size_t row = prompt_row(x);
    const auto r = row_span(row);
    return Vec(r.begin(), r.end());
  }

  void hidden_grad(TokenSpan x, std::span<const double> upstream, double scale,
                   std::span<double> grad) const override {
    const std::size_t row = prompt_row(x);
    double* g = grad.data() + row * static_cast<std::size_t>(vocab_);
    for (int v = 0; v < vocab_; ++v) g[v] += scale * upstream[static_cast<std::size_t>(v)];
  }

  Vec next_token_logprobs(TokenSpan prefix) const override {
    const TokenSeq ext = extend(prefix, {});
    Vec lp(static_cast<std::size_t>(vocab_));
    log_softmax_into(row_span(context_index(ext, prefix.size())), lp);
    return lp;
  }

  std::vector<Vec> prompt_log_distributions(TokenSpan x) const override {
    const TokenSeq ext = extend(x, {});
    std::vector<Vec> out(x.size(), Vec(static_cast<std::size_t>(vocab_)));
    for (std::size_t j = 0; j < x.size(); ++j)
      log_softmax_into(row_span(context_index(ext, j)), out[j]);
    return out;
  }

  void prompt_ce_grad(TokenSpan x, const std::vector<Vec>& target, double scale,
                      std::span<double> grad) const override {
    const TokenSeq ext = extend(x, {});
    Vec p(static_cast<std::size_t>(vocab_));
    for (std::size_t j = 0; j < x.size(); ++j) {
      const std::size_t row = context_index(ext, j);
      softmax_into(row_span(row), p);
      double tsum = 0.0;
      for (const double t : target[j]) tsum += t;
      double* g = grad.data() + row * static_cast<std::size_t>(vocab_);
      for (int v = 0; v < vocab_; ++v)
        g[v] += scale * (target[j][static_cast<std::size_t>(v)] - tsum * p[static_cast<std::size_t>(v)]);
    }
  }

 private:
  TokenSeq extend(TokenSpan x, TokenSpan y) const {
    TokenSeq ext;
    ext.reserve(1 + x.size() + y.size());
    ext.push_back(vocab_);  // BOS
    ext.insert(ext.end(), x.begin(), x.end());
    ext.insert(ext.end(), y.begin(), y.end());
    return ext;
  }

  // Row index of the context whose most recent token is ext[i] (the row that
  // predicts ext[i+1]); BOS-padded on the left for i < order-1.
  std::size_t context_index(const TokenSeq& ext, std::size_t i) const {
    std::size_t ctx = 0, mult = 1;
    for (int j = 0; j < order_; ++j) {
      const std::ptrdiff_t idx = static_cast<std::ptrdiff_t>(i) - j;
      const Token t = idx >= 0 ? ext[static_cast<std::size_t>(idx)] : vocab_;
      ctx += static_cast<std::size_t>(t) * mult;
      mult *= static_cast<std::size_t>(vocab_ + 1);
    }
    return ctx;
  }

  std::size_t prompt_row(TokenSpan x) const {
    const TokenSeq ext = extend(x, {});
    return context_index(ext, x.size());
  }

  std::span<const double> row_span(std::size_t row) const {
    return {params_.data() + row * static_cast<std::size_t>(vocab_), static_cast<std::size_t>(vocab_)};
  }

  int vocab_;
  int order_;
  std::size_t rows_ = 0;
  Vec params_;
};

}  // namespace

std::unique_ptr<Backend> make_tabular_backend(int vocab_size, int context_order, double init_std,
                                              std::uint64_t seed) {
  return std::make_unique<TabularBackend>(vocab_size, context_order, init_std, seed);
}

}  // namespace mpo
