// SPDX-License-Identifier: Apache-2.0
//
// Tiny autoregressive language models with exact gradients.
//
// Two backends share one interface: a tabular-softmax model (one logit row
// per context; brute-force checkable) and a small pre-LN transformer
// (realistic parameter sharing; hand-written backprop).  Sequences are scored
// against an internal BOS token (id == vocab_size) prepended to x ++ y, so
// position i of the extended sequence predicts token i of x ++ y.  All
// log-likelihoods are in nats.

#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "mpo/common.hpp"

namespace mpo {

enum class Role { policy, reference };
enum class BackendKind { tabular, transformer };

struct SequenceScore {
  double total_logprob = 0.0;
  Vec per_token_logprobs;
  int length = 0;
  double avg_logprob = 0.0;
};

struct TransformerConfig {
  int n_layers = 2;
  int d_model = 32;
  int n_heads = 2;
  int d_ff = 128;   // 4 * d_model
  int max_seq = 64; // extended-sequence capacity, BOS included
  double init_std = 0.08;
};

// Backend contract.  Scoring functions are const and safe to call
// concurrently; the *_grad accumulators only write into caller-owned
// buffers.  `weights` pairs with y: grad += scale * sum_j w_j * d log
// p(y_j | x, y_<j) / d params.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual BackendKind kind() const = 0;
  virtual int vocab_size() const = 0;
  virtual std::size_t param_count() const = 0;
  virtual std::span<const double> params() const = 0;
  virtual std::span<double> params_mut() = 0;
  virtual std::unique_ptr<Backend> clone() const = 0;
  virtual std::vector<int> shape_ints() const = 0;

  virtual SequenceScore score_sequence(TokenSpan x, TokenSpan y) const = 0;
  virtual void sequence_grad(TokenSpan x, TokenSpan y, std::span<const double> weights,
                             double scale, std::span<double> grad) const = 0;

  virtual int hidden_dim() const = 0;
  virtual Vec hidden_at_last(TokenSpan x) const = 0;
  virtual void hidden_grad(TokenSpan x, std::span<const double> upstream, double scale,
                           std::span<double> grad) const = 0;

  // Next-token distribution after `prefix` (prefix may be empty: BOS only).
  virtual Vec next_token_logprobs(TokenSpan prefix) const = 0;
  // Rows j = 0..|x|-1: log distribution used to predict x[j].  Log space keeps
  // KL terms finite even when a probability underflows.
  virtual std::vector<Vec> prompt_log_distributions(TokenSpan x) const = 0;
  // grad += scale * d/dparams sum_j sum_v target[j][v] * log p(v | x_<j).
  virtual void prompt_ce_grad(TokenSpan x, const std::vector<Vec>& target, double scale,
                              std::span<double> grad) const = 0;
};

std::unique_ptr<Backend> make_tabular_backend(int vocab_size, int context_order,
                                              double init_std = 0.0, std::uint64_t seed = 0);
std::unique_ptr<Backend> make_transformer_backend(int vocab_size, const TransformerConfig& cfg,
                                                  std::uint64_t seed);

// Role-aware wrapper.  Copying clones the backend; snapshot_reference()
// returns a frozen deep copy whose parameters can never be mutated again.
class LanguageModel {
 public:
  LanguageModel() = default;
  LanguageModel(const LanguageModel& other);
  LanguageModel& operator=(const LanguageModel& other);
  LanguageModel(LanguageModel&&) noexcept = default;
  LanguageModel& operator=(LanguageModel&&) noexcept = default;

  static LanguageModel tabular(int vocab_size, int context_order, double init_std = 0.0,
                               std::uint64_t seed = 0);
  static LanguageModel transformer(int vocab_size, const TransformerConfig& cfg,
                                   std::uint64_t seed);

  BackendKind backend_kind() const { return backend_->kind(); }
  Role role() const { return role_; }
  int vocab_size() const { return backend_->vocab_size(); }
  int hidden_dim() const { return backend_->hidden_dim(); }
  std::size_t param_count() const { return backend_->param_count(); }
  std::span<const double> params() const { return backend_->params(); }
  std::span<double> mutable_params();  // throws RoleError on reference models

  SequenceScore score_sequence(TokenSpan x, TokenSpan y) const;
  Vec hidden_at_last(TokenSpan x) const;
  Vec next_token_logprobs(TokenSpan prefix) const { return backend_->next_token_logprobs(prefix); }
  std::vector<Vec> prompt_log_distributions(TokenSpan x) const;
  std::vector<Vec> prompt_distributions(TokenSpan x) const;  // exp of the above
  TokenSeq greedy_decode(TokenSpan x, int max_len, Token end_token = -1) const;
  LanguageModel snapshot_reference() const;

  void sequence_grad(TokenSpan x, TokenSpan y, std::span<const double> weights, double scale,
                     std::span<double> grad) const {
    backend_->sequence_grad(x, y, weights, scale, grad);
  }
  void hidden_grad(TokenSpan x, std::span<const double> upstream, double scale,
                   std::span<double> grad) const {
    backend_->hidden_grad(x, upstream, scale, grad);
  }
  void prompt_ce_grad(TokenSpan x, const std::vector<Vec>& target, double scale,
                      std::span<double> grad) const {
    backend_->prompt_ce_grad(x, target, scale, grad);
  }

  const Backend& backend() const { return *backend_; }

  void save_checkpoint(const std::string& path) const;
  static LanguageModel load_checkpoint(const std::string& path);  // loads as policy

 private:
  LanguageModel(std::unique_ptr<Backend> b, Role r) : backend_(std::move(b)), role_(r) {}
  std::unique_ptr<Backend> backend_;
  Role role_ = Role::policy;
};

// Shared by both backends: stable log-softmax of a logit row.
void log_softmax_into(std::span<const double> logits, std::span<double> out);
// softmax probabilities
void softmax_into(std::span<const double> logits, std::span<double> out);

void check_tokens_in_vocab(TokenSpan seq, int vocab_size, const char* field);

}  // namespace mpo
