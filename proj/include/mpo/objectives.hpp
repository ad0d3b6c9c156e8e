// SPDX-License-Identifier: Apache-2.0
//
// Preference-optimization objectives over a policy / frozen-reference pair.
//
// The centerpiece couples two reward gaps: the policy's gap on a target-
// language pair is pulled toward the frozen reference's gap on the aligned
// dominant-language pair (squared error, scaled by beta), plus a retention
// term that pins dominant-language behavior (hidden-state anchor or prompt
// KL).  Nine single-pair baselines share the same scoring primitives.
//
// Losses are composed on a Graph whose leaves carry analytic pullbacks into
// the model backends; gradient checks in the tests cross-validate every
// objective against finite differences.

#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mpo/common.hpp"
#include "mpo/corpus.hpp"
#include "mpo/graph.hpp"
#include "mpo/model.hpp"
#include "mpo/parallel.hpp"

namespace mpo {

// --------------------------------------------------------------- configs ---

enum class RetentionMode { representation, kl, none };
enum class PivotMode { instance, dataset_mean, fixed };
enum class HiddenPosition { prompt_end, sequence_end };

const char* retention_mode_name(RetentionMode m);
RetentionMode retention_mode_from_name(const std::string& s);  // ConfigError
const char* pivot_mode_name(PivotMode m);
PivotMode pivot_mode_from_name(const std::string& s);  // ConfigError

struct MpoConfig {
  double beta = 1.0;              // scales the policy-side gap inside the match
  double retention_weight = 1.0;  // weight of the retention term in the total
  bool length_normalize = true;   // per-token (true) vs total (false) logprobs
  RetentionMode retention_mode = RetentionMode::representation;
  PivotMode pivot_mode = PivotMode::instance;
  double pivot_constant = 0.0;  // anchor gap when pivot_mode == fixed
  HiddenPosition hidden_position = HiddenPosition::prompt_end;

  void validate() const;  // ConfigError on beta <= 0 or retention_weight < 0
};

// Hyperparameters of the comparison objectives.  Defaults are the published
// operating points; validate() rejects values outside the published ranges
// unless allow_outside_ranges is set (eps >= 0.5 is always rejected: the
// label-noise correction divides by 1 - 2*eps).
struct BaselineHyperparams {
  double beta_dpo = 0.1;    // shared by dpo, rdpo, cpo, r_dpo; range [0.01, 0.1]
  double tau_ipo = 0.5;     // range [0.01, 1.0]
  double eps_rdpo = 0.1;    // range [0, 0.5)
  double lambda_cpo = 1.0;  // weight of the winner NLL term
  double lambda_w = 1.0;    // kto winner weight
  double lambda_l = 1.0;    // kto loser weight
  double beta_kto = 0.1;    // kto gap scale
  double lambda_orpo = 1.0;
  double alpha_rdpo_len = 0.1;  // r_dpo length-difference coefficient
  double beta_simpo = 2.0;      // range [2.0, 2.5]
  double gamma_simpo = 1.0;     // range [1.0, 1.6]
  bool allow_outside_ranges = false;

  void validate() const;  // HyperparamError
};

// ------------------------------------------------------------ reward gaps ---

// Length-normalized (or total) logprob gap of one pair under a single model:
//   gap = avg logprob(y_w) - avg logprob(y_l).
double reward_gap_simpo(const LanguageModel& model, const PreferenceExample& ex,
                        bool length_normalize = true);

// Reference-adjusted gap:
//   beta * [ (log pi(y_w) - log ref(y_w)) - (log pi(y_l) - log ref(y_l)) ].
// Throws CompatError if the two models have different vocab sizes.
double reward_gap_dpo(const LanguageModel& policy, const LanguageModel& reference,
                      const PreferenceExample& ex, double beta);

struct RewardGapRecord {
  int pair_id = 0;
  std::string language;
  bool flipped = false;
  double gap_simpo = 0.0;      // policy, length-normalized
  double gap_total = 0.0;      // policy, unnormalized
  double gap_dpo = 0.0;        // reference-adjusted, at beta_dpo
  double avg_logprob_w = 0.0;  // policy
  double avg_logprob_l = 0.0;  // policy
};

RewardGapRecord reward_gaps(const LanguageModel& policy, const LanguageModel& reference,
                            const PreferenceExample& ex, double beta_dpo = 1.0);

// ------------------------------------------------------------- pivot table ---

// Frozen-reference gaps on the pivot-language side, cached once per dataset so
// training never rescores them (they carry no gradient).  rg_for() applies the
// pivot mode: per-instance value, dataset mean, or a fixed constant.
class PivotTable {
 public:
  static PivotTable build(const LanguageModel& reference,
                          std::span<const PreferenceExample> pivot_examples,
                          const MpoConfig& cfg);

  double rg_for(int pair_id) const;  // PairingError if instance-mode id missing
  double dataset_mean() const { return mean_; }
  std::size_t size() const { return gaps_.size(); }
  const std::map<int, double>& instance_gaps() const { return gaps_; }

 private:
  std::map<int, double> gaps_;
  double mean_ = 0.0;
  PivotMode mode_ = PivotMode::instance;
  double constant_ = 0.0;
};

// ----------------------------------------------------------- loss results ---

struct LossBreakdown {
  double total = 0.0;
  double l1 = 0.0;  // gap-matching term (or the baseline loss itself)
  double l2 = 0.0;  // retention term (0 for baselines)
  double w_theta = 0.0;  // mean of beta * rg_target - rg_pivot over the batch
  double mean_rg_t = 0.0;
  double mean_rg_d = 0.0;
};

struct ValuedGrad {
  double value = 0.0;
  Vec grad;
};

// --------------------------------------------------------------- mpo terms ---

struct MpoPair {
  const PreferenceExample* target = nullptr;  // trained language
  const PreferenceExample* pivot = nullptr;   // aligned dominant-language twin
};

// Gap-matching term for one aligned pair:
//   l1 = (beta * rg_policy(target) - rg_reference(pivot))^2.
// Throws PairingError on pair_id mismatch and RoleError if `reference` is not
// a frozen reference (the pivot side must never be scored by the policy).
double mpo_l1(const LanguageModel& policy, const LanguageModel& reference,
              const PreferenceExample& target, const PreferenceExample& pivot,
              const MpoConfig& cfg);
ValuedGrad mpo_l1_with_grad(const LanguageModel& policy, const LanguageModel& reference,
                            const PreferenceExample& target, const PreferenceExample& pivot,
                            const MpoConfig& cfg, ExecMode mode = ExecMode::serial);

// Retention term on a dominant-language prompt:
//   representation: || h_policy(x) - h_reference(x) ||^2 at the anchor position;
//   kl: mean_j KL(reference(. | x_<j) || policy(. | x_<j)).
// Throws CompatError if the hidden dimensions (or vocabs) differ.
double mpo_l2(const LanguageModel& policy, const LanguageModel& reference, TokenSpan prompt,
              const MpoConfig& cfg);
ValuedGrad mpo_l2_with_grad(const LanguageModel& policy, const LanguageModel& reference,
                            TokenSpan prompt, const MpoConfig& cfg,
                            ExecMode mode = ExecMode::serial);

// Batch objective: mean l1 over pairs + retention_weight * mean l2 over the
// pivot prompts.  Throws InputError on an empty batch.  The pivot gap comes
// from `pivots` when given (pivot-mode aware), else from instance rescoring.
LossBreakdown mpo_total(const LanguageModel& policy, const LanguageModel& reference,
                        std::span<const MpoPair> batch, const MpoConfig& cfg,
                        const PivotTable* pivots = nullptr);
ValuedGrad mpo_total_with_grad(const LanguageModel& policy, const LanguageModel& reference,
                               std::span<const MpoPair> batch, const MpoConfig& cfg,
                               const PivotTable* pivots = nullptr,
                               LossBreakdown* breakdown = nullptr,
                               ExecMode mode = ExecMode::serial);

// ---------------------------------------------------------------- baselines ---

// "sft", "dpo", "ipo", "rdpo", "cpo", "kto", "orpo", "r_dpo", "simpo".
// Unknown names raise DispatchError listing the valid set.  kto's shared
// batch statistic degenerates to the single-pair estimate here; use
// batch_objective for the coupled form.
double baseline_loss(const std::string& name, const LanguageModel& policy,
                     const LanguageModel& reference, const PreferenceExample& ex,
                     const BaselineHyperparams& hp);
ValuedGrad baseline_loss_with_grad(const std::string& name, const LanguageModel& policy,
                                   const LanguageModel& reference, const PreferenceExample& ex,
                                   const BaselineHyperparams& hp,
                                   ExecMode mode = ExecMode::serial);

const std::vector<std::string>& baseline_names();

// ------------------------------------------------------------ batch driver ---

// One objective selector shared by the trainer, the gradient checker and the
// CLI: "mpo" or any baseline name.
struct ObjectiveSpec {
  std::string name = "mpo";
  MpoConfig mpo;
  BaselineHyperparams hp;

  bool is_mpo() const { return name == "mpo"; }
  void validate() const;  // DispatchError on unknown name, then sub-validate
};

// Batch items pair a trained example with (for mpo) its dominant-language
// twin; baselines ignore the pivot pointer.
struct BatchItem {
  const PreferenceExample* example = nullptr;
  const PreferenceExample* pivot = nullptr;
};

// Mean per-pair loss over the batch.  For kto the batch also shares the
// clamped mean prompt-KL statistic, so pairs are coupled through it exactly
// as during training.  Fills `breakdown` (if given) with the mpo split or
// with total-only for baselines.
ValuedGrad batch_objective(const ObjectiveSpec& spec, const LanguageModel& policy,
                           const LanguageModel& reference, std::span<const BatchItem> batch,
                           const PivotTable* pivots, LossBreakdown* breakdown,
                           ExecMode mode = ExecMode::serial);

// Loss-only evaluation (no gradient).
LossBreakdown batch_objective_value(const ObjectiveSpec& spec, const LanguageModel& policy,
                                    const LanguageModel& reference,
                                    std::span<const BatchItem> batch, const PivotTable* pivots);

// ------------------------------------------------------------ graph leaves ---
// Exposed for tests: scalar leaves whose pullbacks land in model parameters.
// The referenced model and sequences are captured; the model must outlive the
// Graph backward pass.

Graph::Id total_logprob_leaf(Graph& g, const LanguageModel& model, TokenSeq x, TokenSeq y);
Graph::Id hidden_sqdist_leaf(Graph& g, const LanguageModel& policy,
                             const LanguageModel& reference, TokenSeq x);
// mean_j KL(reference || policy) over prompt positions (retention form).
Graph::Id kl_ref_policy_leaf(Graph& g, const LanguageModel& policy,
                             const LanguageModel& reference, TokenSeq x);
// mean_j KL(policy || reference) over prompt positions (kto's statistic).
Graph::Id kl_policy_ref_leaf(Graph& g, const LanguageModel& policy,
                             const LanguageModel& reference, TokenSeq x);

}  // namespace mpo
