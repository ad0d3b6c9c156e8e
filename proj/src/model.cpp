// SPDX-License-Identifier: Apache-2.0

#include "mpo/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace mpo {

void log_softmax_into(std::span<const double> logits, std::span<double> out) {
  double mx = logits[0];
  for (const double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += std::exp(logits[i] - mx);
  const double lse = mx + std::log(sum);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
}

void softmax_into(std::span<const double> logits, std::span<double> out) {
  log_softmax_into(logits, out);
  for (double& v : out) v = std::exp(v);
}

void check_tokens_in_vocab(TokenSpan seq, int vocab_size, const char* field) {
  for (std::size_t i = 0; i < seq.size(); ++i)
    if (seq[i] < 0 || seq[i] >= vocab_size)
      throw InputError("token id " + std::to_string(seq[i]) + " out of range (vocab " +
                       std::to_string(vocab_size) + ") at " + field + " position " + std::to_string(i));
}

// -------------------------------------------------------- LanguageModel ----

LanguageModel::LanguageModel(const LanguageModel& other)
    : backend_(other.backend_ ? other.backend_->clone() : nullptr), role_(other.role_) {}

LanguageModel& LanguageModel::operator=(const LanguageModel& other) {
  if (this != &other) {
    backend_ = other.backend_ ? other.backend_->clone() : nullptr;
    role_ = other.role_;
  }
  return *this;
}

LanguageModel LanguageModel::tabular(int vocab_size, int context_order, double init_std,
                                     std::uint64_t seed) {
  return LanguageModel(make_tabular_backend(vocab_size, context_order, init_std, seed), Role::policy);
}

LanguageModel LanguageModel::transformer(int vocab_size, const TransformerConfig& cfg,
                                         std::uint64_t seed) {
  return LanguageModel(make_transformer_backend(vocab_size, cfg, seed), Role::policy);
}

std::span<double> LanguageModel::mutable_params() {
  if (role_ == Role::reference)
    throw RoleError("reference model parameters are frozen; snapshot_reference() copies are immutable");
  return backend_->params_mut();
}

SequenceScore LanguageModel::score_sequence(TokenSpan x, TokenSpan y) const {
  if (y.empty()) throw InputError("score_sequence requires |y| >= 1");
  check_tokens_in_vocab(x, vocab_size(), "x");
  check_tokens_in_vocab(y, vocab_size(), "y");
  return backend_->score_sequence(x, y);
}

Vec LanguageModel::hidden_at_last(TokenSpan x) const {
  if (x.empty()) throw InputError("hidden_at_last requires a nonempty prompt");
  check_tokens_in_vocab(x, vocab_size(), "x");
  return backend_->hidden_at_last(x);
}

std::vector<Vec> LanguageModel::prompt_log_distributions(TokenSpan x) const {
  if (x.empty()) throw InputError("prompt_log_distributions requires a nonempty prompt");
  check_tokens_in_vocab(x, vocab_size(), "x");
  return backend_->prompt_log_distributions(x);
}

std::vector<Vec> LanguageModel::prompt_distributions(TokenSpan x) const {
  std::vector<Vec> rows = prompt_log_distributions(x);
  for (Vec& row : rows)
    for (double& v : row) v = std::exp(v);
  return rows;
}

TokenSeq LanguageModel::greedy_decode(TokenSpan x, int max_len, Token end_token) const {
  if (max_len < 1) throw InputError("greedy_decode requires max_len >= 1");
  check_tokens_in_vocab(x, vocab_size(), "x");
  TokenSeq prefix(x.begin(), x.end());
  TokenSeq out;
  for (int step = 0; step < max_len; ++step) {
    const Vec lp = backend_->next_token_logprobs(prefix);
    int best = 0;
    for (int v = 1; v < vocab_size(); ++v)
      if (lp[static_cast<std::size_t>(v)] > lp[static_cast<std::size_t>(best)]) best = v;  // ties -> lowest index
    out.push_back(best);
    if (best == end_token) break;
    prefix.push_back(best);
  }
  return out;
}

LanguageModel LanguageModel::snapshot_reference() const {
  return LanguageModel(backend_->clone(), Role::reference);
}

// ----------------------------------------------------------- checkpoints ---
//
// Layout (all little-endian):
//   magic   8 bytes  "MPOCKPT1"
//   u32     backend kind (0 tabular, 1 transformer)
//   u32     number of shape ints
//   u32[]   shape ints (tabular: vocab, order; transformer: vocab, layers,
//           d_model, heads, d_ff, max_seq)
//   u64     parameter count
//   f64[]   parameters

namespace {

constexpr char kMagic[8] = {'M', 'P', 'O', 'C', 'K', 'P', 'T', '1'};

void put_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ofstream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::ifstream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError("truncated checkpoint: " + path);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::ifstream& in, const std::string& path) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw IoError("truncated checkpoint: " + path);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void LanguageModel::save_checkpoint(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint path for writing: " + path);
  out.write(kMagic, 8);
  put_u32(out, backend_->kind() == BackendKind::tabular ? 0u : 1u);
  const auto shape = backend_->shape_ints();
  put_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (const int s : shape) put_u32(out, static_cast<std::uint32_t>(s));
  const auto p = backend_->params();
  put_u64(out, p.size());
  for (const double v : p) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
  }
  if (!out) throw IoError("checkpoint write failed: " + path);
}

LanguageModel LanguageModel::load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw IoError("bad checkpoint magic: " + path);
  const std::uint32_t kind = get_u32(in, path);
  const std::uint32_t n_shape = get_u32(in, path);
  std::vector<int> shape(n_shape);
  for (auto& s : shape) s = static_cast<int>(get_u32(in, path));

  std::unique_ptr<Backend> backend;
  if (kind == 0) {
    if (n_shape != 2) throw IoError("tabular checkpoint expects 2 shape ints: " + path);
    backend = make_tabular_backend(shape[0], shape[1]);
  } else if (kind == 1) {
    if (n_shape != 6) throw IoError("transformer checkpoint expects 6 shape ints: " + path);
    TransformerConfig cfg;
    cfg.n_layers = shape[1];
    cfg.d_model = shape[2];
    cfg.n_heads = shape[3];
    cfg.d_ff = shape[4];
    cfg.max_seq = shape[5];
    backend = make_transformer_backend(shape[0], cfg, 0);
  } else {
    throw IoError("unknown backend kind " + std::to_string(kind) + " in " + path);
  }

  const std::uint64_t n = get_u64(in, path);
  if (n != backend->param_count())
    throw IoError("checkpoint parameter count " + std::to_string(n) + " does not match shape (expected " +
                  std::to_string(backend->param_count()) + "): " + path);
  auto p = backend->params_mut();
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::uint64_t bits = get_u64(in, path);
    double v;
    std::memcpy(&v, &bits, 8);
    p[static_cast<std::size_t>(i)] = v;
  }
  return LanguageModel(std::move(backend), Role::policy);
}

}  // namespace mpo
