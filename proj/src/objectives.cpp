// SPDX-License-Identifier: Apache-2.0

#include "mpo/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace mpo {

// ---------------------------------------------------------------- configs ---

const char* retention_mode_name(RetentionMode m) {
  switch (m) {
    case RetentionMode::representation: return "representation";
    case RetentionMode::kl: return "kl";
    case RetentionMode::none: return "none";
  }
  return "?";
}

RetentionMode retention_mode_from_name(const std::string& s) {
  if (s == "representation") return RetentionMode::representation;
  if (s == "kl") return RetentionMode::kl;
  if (s == "none") return RetentionMode::none;
  throw ConfigError("unknown retention_mode '" + s + "' (representation|kl|none)");
}

const char* pivot_mode_name(PivotMode m) {
  switch (m) {
    case PivotMode::instance: return "instance";
    case PivotMode::dataset_mean: return "dataset_mean";
    case PivotMode::fixed: return "fixed";
  }
  return "?";
}

PivotMode pivot_mode_from_name(const std::string& s) {
  if (s == "instance") return PivotMode::instance;
  if (s == "dataset_mean") return PivotMode::dataset_mean;
  if (s == "fixed") return PivotMode::fixed;
  throw ConfigError("unknown pivot_mode '" + s + "' (instance|dataset_mean|fixed)");
}

void MpoConfig::validate() const {
  if (!(beta > 0.0)) throw ConfigError("mpo beta must be > 0, got " + fmt_g17(beta));
  if (retention_weight < 0.0)
    throw ConfigError("retention_weight must be >= 0, got " + fmt_g17(retention_weight));
}

void BaselineHyperparams::validate() const {
  // Hard constraints first: these break formulas regardless of overrides.
  if (eps_rdpo < 0.0 || eps_rdpo >= 0.5)
    throw HyperparamError("eps_rdpo must lie in [0, 0.5): denominator 1-2*eps, got " +
                          fmt_g17(eps_rdpo));
  if (!(beta_dpo > 0.0)) throw HyperparamError("beta_dpo must be > 0");
  if (!(tau_ipo > 0.0)) throw HyperparamError("tau_ipo must be > 0 (divides 1/(2*tau))");
  if (!(beta_kto > 0.0)) throw HyperparamError("beta_kto must be > 0");
  if (!(beta_simpo > 0.0)) throw HyperparamError("beta_simpo must be > 0");
  if (lambda_cpo < 0.0 || lambda_w < 0.0 || lambda_l < 0.0 || lambda_orpo < 0.0 ||
      alpha_rdpo_len < 0.0)
    throw HyperparamError("lambda/alpha hyperparameters must be >= 0");
  if (allow_outside_ranges) return;
  // Published search ranges (interval hull of each grid).
  auto in = [](double v, double lo, double hi) { return v >= lo && v <= hi; };
  if (!in(beta_dpo, 0.01, 0.1))
    throw HyperparamError("beta_dpo outside [0.01, 0.1]: " + fmt_g17(beta_dpo));
  if (!in(tau_ipo, 0.01, 1.0))
    throw HyperparamError("tau_ipo outside [0.01, 1.0]: " + fmt_g17(tau_ipo));
  if (!in(beta_kto, 0.01, 1.0))
    throw HyperparamError("beta_kto outside [0.01, 1.0]: " + fmt_g17(beta_kto));
  if (!in(lambda_orpo, 0.01, 1.0))
    throw HyperparamError("lambda_orpo outside [0.01, 1.0]: " + fmt_g17(lambda_orpo));
  if (!in(alpha_rdpo_len, 0.05, 1.0))
    throw HyperparamError("alpha_rdpo_len outside [0.05, 1.0]: " + fmt_g17(alpha_rdpo_len));
  if (!in(beta_simpo, 2.0, 2.5))
    throw HyperparamError("beta_simpo outside [2.0, 2.5]: " + fmt_g17(beta_simpo));
  if (!in(gamma_simpo, 1.0, 1.6))
    throw HyperparamError("gamma_simpo outside [1.0, 1.6]: " + fmt_g17(gamma_simpo));
}

// ----------------------------------------------------------- graph leaves ---

Graph::Id total_logprob_leaf(Graph& g, const LanguageModel& model, TokenSeq x, TokenSeq y) {
  const SequenceScore s = model.score_sequence(x, y);
  const LanguageModel* m = &model;
  auto xs = std::make_shared<const TokenSeq>(std::move(x));
  auto ys = std::make_shared<const TokenSeq>(std::move(y));
  return g.leaf(s.total_logprob, [m, xs, ys](double adjoint, std::span<double> grad) {
    const Vec ones(ys->size(), 1.0);
    m->sequence_grad(*xs, *ys, ones, adjoint, grad);
  });
}

Graph::Id hidden_sqdist_leaf(Graph& g, const LanguageModel& policy,
                             const LanguageModel& reference, TokenSeq x) {
  const Vec h = policy.hidden_at_last(x);
  const Vec h_ref = reference.hidden_at_last(x);
  if (h.size() != h_ref.size())
    throw CompatError("hidden dimension mismatch: policy " + std::to_string(h.size()) +
                      " vs reference " + std::to_string(h_ref.size()));
  double value = 0.0;
  auto upstream = std::make_shared<Vec>(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double d = h[i] - h_ref[i];
    value += d * d;
    (*upstream)[i] = 2.0 * d;
  }
  const LanguageModel* m = &policy;
  auto xs = std::make_shared<const TokenSeq>(std::move(x));
  return g.leaf(value, [m, xs, upstream](double adjoint, std::span<double> grad) {
    m->hidden_grad(*xs, *upstream, adjoint, grad);
  });
}

namespace {

void check_vocab_compat(const LanguageModel& a, const LanguageModel& b) {
  if (a.vocab_size() != b.vocab_size())
    throw CompatError("vocab size mismatch: " + std::to_string(a.vocab_size()) + " vs " +
                      std::to_string(b.vocab_size()));
}

// Shared body of the two KL leaves.  `policy_first` selects KL(p||q) with p
// the policy row (kto statistic) vs KL(q||p) with q the reference row
// (retention form).  Gradients w.r.t. the policy reduce to a frozen-target
// cross-entropy pullback in both cases:
//   d KL(q||p) /d logits = -(q - p)           -> targets q,        scale -1/n
//   d KL(p||q) /d logits = t - (sum t) p      -> targets p*(lp-lq), scale +1/n
Graph::Id kl_leaf_impl(Graph& g, const LanguageModel& policy, const LanguageModel& reference,
                       TokenSeq x, bool policy_first) {
  check_vocab_compat(policy, reference);
  const std::vector<Vec> lp = policy.prompt_log_distributions(x);
  const std::vector<Vec> lq = reference.prompt_log_distributions(x);
  const double n = static_cast<double>(x.size());
  double value = 0.0;
  auto targets = std::make_shared<std::vector<Vec>>(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    Vec& t = (*targets)[j];
    t.resize(lp[j].size());
    double kl = 0.0;
    for (std::size_t v = 0; v < t.size(); ++v) {
      if (policy_first) {
        const double p = std::exp(lp[j][v]);
        t[v] = p * (lp[j][v] - lq[j][v]);
        kl += t[v];
      } else {
        const double q = std::exp(lq[j][v]);
        t[v] = q;
        kl += q * (lq[j][v] - lp[j][v]);
      }
    }
    value += kl;
  }
  value /= n;
  const double scale = policy_first ? 1.0 / n : -1.0 / n;
  const LanguageModel* m = &policy;
  auto xs = std::make_shared<const TokenSeq>(std::move(x));
  return g.leaf(value, [m, xs, targets, scale](double adjoint, std::span<double> grad) {
    m->prompt_ce_grad(*xs, *targets, scale * adjoint, grad);
  });
}

}  // namespace

Graph::Id kl_ref_policy_leaf(Graph& g, const LanguageModel& policy,
                             const LanguageModel& reference, TokenSeq x) {
  return kl_leaf_impl(g, policy, reference, std::move(x), /*policy_first=*/false);
}

Graph::Id kl_policy_ref_leaf(Graph& g, const LanguageModel& policy,
                             const LanguageModel& reference, TokenSeq x) {
  return kl_leaf_impl(g, policy, reference, std::move(x), /*policy_first=*/true);
}

// ------------------------------------------------------------ reward gaps ---

double reward_gap_simpo(const LanguageModel& model, const PreferenceExample& ex,
                        bool length_normalize) {
  const SequenceScore w = model.score_sequence(ex.x, ex.y_w);
  const SequenceScore l = model.score_sequence(ex.x, ex.y_l);
  return length_normalize ? w.avg_logprob - l.avg_logprob : w.total_logprob - l.total_logprob;
}

double reward_gap_dpo(const LanguageModel& policy, const LanguageModel& reference,
                      const PreferenceExample& ex, double beta) {
  check_vocab_compat(policy, reference);
  const double sw = policy.score_sequence(ex.x, ex.y_w).total_logprob;
  const double sl = policy.score_sequence(ex.x, ex.y_l).total_logprob;
  const double rw = reference.score_sequence(ex.x, ex.y_w).total_logprob;
  const double rl = reference.score_sequence(ex.x, ex.y_l).total_logprob;
  return beta * ((sw - rw) - (sl - rl));
}

RewardGapRecord reward_gaps(const LanguageModel& policy, const LanguageModel& reference,
                            const PreferenceExample& ex, double beta_dpo) {
  check_vocab_compat(policy, reference);
  RewardGapRecord rec;
  rec.pair_id = ex.pair_id;
  rec.language = ex.language;
  rec.flipped = ex.flipped;
  const SequenceScore sw = policy.score_sequence(ex.x, ex.y_w);
  const SequenceScore sl = policy.score_sequence(ex.x, ex.y_l);
  const SequenceScore rw = reference.score_sequence(ex.x, ex.y_w);
  const SequenceScore rl = reference.score_sequence(ex.x, ex.y_l);
  rec.avg_logprob_w = sw.avg_logprob;
  rec.avg_logprob_l = sl.avg_logprob;
  rec.gap_simpo = sw.avg_logprob - sl.avg_logprob;
  rec.gap_total = sw.total_logprob - sl.total_logprob;
  rec.gap_dpo =
      beta_dpo * ((sw.total_logprob - rw.total_logprob) - (sl.total_logprob - rl.total_logprob));
  return rec;
}

// ------------------------------------------------------------- pivot table ---

PivotTable PivotTable::build(const LanguageModel& reference,
                             std::span<const PreferenceExample> pivot_examples,
                             const MpoConfig& cfg) {
  if (reference.role() != Role::reference)
    throw RoleError("pivot gaps must be scored by a frozen reference model");
  PivotTable t;
  t.mode_ = cfg.pivot_mode;
  t.constant_ = cfg.pivot_constant;
  double sum = 0.0;
  for (const PreferenceExample& ex : pivot_examples) {
    const double rg = reward_gap_simpo(reference, ex, cfg.length_normalize);
    if (!t.gaps_.emplace(ex.pair_id, rg).second)
      throw PairingError("duplicate pair_id " + std::to_string(ex.pair_id) +
                         " among pivot examples");
    sum += rg;
  }
  t.mean_ = t.gaps_.empty() ? 0.0 : sum / static_cast<double>(t.gaps_.size());
  return t;
}

double PivotTable::rg_for(int pair_id) const {
  switch (mode_) {
    case PivotMode::dataset_mean: return mean_;
    case PivotMode::fixed: return constant_;
    case PivotMode::instance: break;
  }
  const auto it = gaps_.find(pair_id);
  if (it == gaps_.end())
    throw PairingError("no pivot-language gap cached for pair_id " + std::to_string(pair_id));
  return it->second;
}

// ------------------------------------------------------ per-example leaves ---

namespace {

struct ExampleLeaves {
  Graph::Id tw = -1, tl = -1;        // policy total logprobs
  Graph::Id avg_w = -1, avg_l = -1;  // length-normalized nodes
  double rw = 0.0, rl = 0.0;         // frozen reference totals
  int len_w = 0, len_l = 0;
};

ExampleLeaves make_leaves(Graph& g, const LanguageModel& policy, const LanguageModel* reference,
                          const PreferenceExample& ex) {
  ExampleLeaves L;
  L.len_w = static_cast<int>(ex.y_w.size());
  L.len_l = static_cast<int>(ex.y_l.size());
  L.tw = total_logprob_leaf(g, policy, ex.x, ex.y_w);
  L.tl = total_logprob_leaf(g, policy, ex.x, ex.y_l);
  L.avg_w = g.scale(L.tw, 1.0 / static_cast<double>(L.len_w));
  L.avg_l = g.scale(L.tl, 1.0 / static_cast<double>(L.len_l));
  if (reference != nullptr) {
    check_vocab_compat(policy, *reference);
    L.rw = reference->score_sequence(ex.x, ex.y_w).total_logprob;
    L.rl = reference->score_sequence(ex.x, ex.y_l).total_logprob;
  }
  return L;
}

// beta * [(log pi(y_w) - log ref(y_w)) - (log pi(y_l) - log ref(y_l))]
Graph::Id dpo_margin(Graph& g, const ExampleLeaves& L, double beta) {
  const Graph::Id dw = g.add_const(L.tw, -L.rw);
  const Graph::Id dl = g.add_const(L.tl, -L.rl);
  return g.scale(g.sub(dw, dl), beta);
}

Graph::Id build_sft(Graph& g, const ExampleLeaves& L) { return g.neg(L.avg_w); }

Graph::Id build_dpo(Graph& g, const ExampleLeaves& L, double beta) {
  return g.neg(g.log_sigmoid(dpo_margin(g, L, beta)));
}

Graph::Id build_ipo(Graph& g, const ExampleLeaves& L, double tau) {
  const Graph::Id gap = g.sub(g.add_const(L.tw, -L.rw), g.add_const(L.tl, -L.rl));
  return g.square(g.add_const(gap, -1.0 / (2.0 * tau)));
}

Graph::Id build_rdpo(Graph& g, const ExampleLeaves& L, double beta, double eps) {
  // Swapping the roles of y_w / y_l negates the margin.
  const Graph::Id m = dpo_margin(g, L, beta);
  const Graph::Id loss_wl = g.neg(g.log_sigmoid(m));
  const Graph::Id loss_lw = g.neg(g.log_sigmoid(g.neg(m)));
  const Graph::Id num = g.sub(g.scale(loss_wl, 1.0 - eps), g.scale(loss_lw, eps));
  return g.scale(num, 1.0 / (1.0 - 2.0 * eps));
}

Graph::Id build_cpo(Graph& g, const ExampleLeaves& L, double beta, double lambda) {
  const Graph::Id margin = g.scale(g.sub(L.tw, L.tl), beta);
  return g.sub(g.neg(g.log_sigmoid(margin)), g.scale(L.tw, lambda));
}

Graph::Id build_kto(Graph& g, const ExampleLeaves& L, Graph::Id z, const BaselineHyperparams& hp) {
  const Graph::Id dw = g.scale(g.add_const(L.tw, -L.rw), hp.beta_kto);
  const Graph::Id dl = g.scale(g.add_const(L.tl, -L.rl), hp.beta_kto);
  const Graph::Id win = g.scale(g.sigmoid(g.sub(dw, z)), -hp.lambda_w);
  const Graph::Id lose = g.scale(g.sigmoid(g.sub(z, dl)), hp.lambda_l);
  return g.add(win, lose);
}

// log odds of p = exp(avg logprob): avg - log(1 - p), with 1 - p = -expm1(avg)
// evaluated without cancellation.
Graph::Id log_odds(Graph& g, Graph::Id avg) {
  const Graph::Id one_minus_p = g.neg(g.expm1(avg));
  return g.sub(avg, g.log(one_minus_p));
}

Graph::Id build_orpo(Graph& g, const ExampleLeaves& L, double lambda) {
  const Graph::Id ratio = g.sub(log_odds(g, L.avg_w), log_odds(g, L.avg_l));
  return g.sub(g.neg(L.avg_w), g.scale(g.log_sigmoid(ratio), lambda));
}

Graph::Id build_r_dpo(Graph& g, const ExampleLeaves& L, double beta, double alpha) {
  const double len_term = alpha * static_cast<double>(L.len_w) -
                          alpha * static_cast<double>(L.len_l);
  return g.neg(g.log_sigmoid(g.add_const(dpo_margin(g, L, beta), len_term)));
}

Graph::Id build_simpo(Graph& g, const ExampleLeaves& L, double beta, double gamma) {
  const Graph::Id margin = g.sub(g.scale(L.avg_w, beta), g.scale(L.avg_l, beta));
  return g.neg(g.log_sigmoid(g.add_const(margin, -gamma)));
}

bool baseline_needs_reference(const std::string& name) {
  return name == "dpo" || name == "ipo" || name == "rdpo" || name == "kto" || name == "r_dpo";
}

// Shared clamped batch statistic: z = max(0, beta * mean prompt-KL).  The
// exact-zero case (policy == reference) is replaced by a constant: the KL is
// at its minimum there, so the true gradient is zero and the clamp kink never
// has to be differentiated.
Graph::Id build_kto_z(Graph& g, const LanguageModel& policy, const LanguageModel& reference,
                      std::span<const BatchItem> batch, double beta_kto) {
  Graph::Id sum = -1;
  for (const BatchItem& item : batch) {
    const Graph::Id k = kl_policy_ref_leaf(g, policy, reference, item.example->x);
    sum = (sum < 0) ? k : g.add(sum, k);
  }
  const Graph::Id mean = g.scale(sum, 1.0 / static_cast<double>(batch.size()));
  const Graph::Id z_raw = g.scale(mean, beta_kto);
  if (g.value(z_raw) == 0.0) return g.constant(0.0);
  return g.clamp_min(z_raw, 0.0);
}

Graph::Id build_from_leaves(Graph& g, const std::string& name, const ExampleLeaves& L,
                            const BaselineHyperparams& hp, Graph::Id kto_z) {
  if (name == "sft") return build_sft(g, L);
  if (name == "dpo") return build_dpo(g, L, hp.beta_dpo);
  if (name == "ipo") return build_ipo(g, L, hp.tau_ipo);
  if (name == "rdpo") return build_rdpo(g, L, hp.beta_dpo, hp.eps_rdpo);
  if (name == "cpo") return build_cpo(g, L, hp.beta_dpo, hp.lambda_cpo);
  if (name == "kto") return build_kto(g, L, kto_z, hp);
  if (name == "orpo") return build_orpo(g, L, hp.lambda_orpo);
  if (name == "r_dpo") return build_r_dpo(g, L, hp.beta_dpo, hp.alpha_rdpo_len);
  if (name == "simpo") return build_simpo(g, L, hp.beta_simpo, hp.gamma_simpo);
  throw DispatchError("unknown objective '" + name + "'; valid: " + join(baseline_names(), ", "));
}

Graph::Id build_baseline_example(Graph& g, const std::string& name, const LanguageModel& policy,
                                 const LanguageModel& reference, const PreferenceExample& ex,
                                 const BaselineHyperparams& hp, Graph::Id kto_z,
                                 ExampleLeaves* leaves_out = nullptr) {
  const LanguageModel* ref = baseline_needs_reference(name) ? &reference : nullptr;
  const ExampleLeaves L = make_leaves(g, policy, ref, ex);
  if (leaves_out != nullptr) *leaves_out = L;
  return build_from_leaves(g, name, L, hp, kto_z);
}

// Policy-side length-normalized gap as a graph node, shared by mpo and the
// reporting paths.
Graph::Id policy_gap_node(Graph& g, const ExampleLeaves& L, bool length_normalize) {
  return length_normalize ? g.sub(L.avg_w, L.avg_l) : g.sub(L.tw, L.tl);
}

Graph::Id retention_node(Graph& g, const LanguageModel& policy, const LanguageModel& reference,
                         const PreferenceExample& pivot, const MpoConfig& cfg) {
  TokenSeq anchor = pivot.x;
  if (cfg.hidden_position == HiddenPosition::sequence_end)
    anchor.insert(anchor.end(), pivot.y_w.begin(), pivot.y_w.end());
  if (cfg.retention_mode == RetentionMode::kl)
    return kl_ref_policy_leaf(g, policy, reference, std::move(anchor));
  return hidden_sqdist_leaf(g, policy, reference, std::move(anchor));
}

struct MpoBatchNodes {
  Graph::Id total = -1;
  Graph::Id l1 = -1;
  Graph::Id l2 = -1;  // -1 when retention off
};

MpoBatchNodes build_mpo_batch(Graph& g, const LanguageModel& policy,
                              const LanguageModel& reference, std::span<const MpoPair> batch,
                              const MpoConfig& cfg, const PivotTable* pivots,
                              LossBreakdown* breakdown) {
  if (batch.empty()) throw InputError("mpo batch must be nonempty");
  cfg.validate();
  if (reference.role() != Role::reference)
    throw RoleError("the pivot-language gap must be scored by a frozen reference model");
  check_vocab_compat(policy, reference);
  const double n = static_cast<double>(batch.size());
  Graph::Id l1_sum = -1;
  Graph::Id l2_sum = -1;
  double w_sum = 0.0, rg_t_sum = 0.0, rg_d_sum = 0.0;
  for (const MpoPair& pair : batch) {
    if (pair.target == nullptr || pair.pivot == nullptr)
      throw InputError("mpo batch item missing target or pivot example");
    const PreferenceExample& target = *pair.target;
    const PreferenceExample& pivot = *pair.pivot;
    if (target.pair_id != pivot.pair_id)
      throw PairingError("target pair_id " + std::to_string(target.pair_id) +
                         " does not match pivot pair_id " + std::to_string(pivot.pair_id));
    double rg_d;
    if (pivots != nullptr) {
      rg_d = pivots->rg_for(target.pair_id);
    } else if (cfg.pivot_mode == PivotMode::fixed) {
      rg_d = cfg.pivot_constant;
    } else if (cfg.pivot_mode == PivotMode::instance) {
      rg_d = reward_gap_simpo(reference, pivot, cfg.length_normalize);
    } else {
      throw ConfigError("pivot_mode dataset_mean requires a prebuilt pivot table");
    }
    const ExampleLeaves L = make_leaves(g, policy, nullptr, target);
    const Graph::Id gap = policy_gap_node(g, L, cfg.length_normalize);
    const Graph::Id resid = g.add_const(g.scale(gap, cfg.beta), -rg_d);
    const Graph::Id l1_i = g.square(resid);
    l1_sum = (l1_sum < 0) ? l1_i : g.add(l1_sum, l1_i);
    w_sum += g.value(resid);
    rg_t_sum += g.value(gap);
    rg_d_sum += rg_d;
    if (cfg.retention_mode != RetentionMode::none) {
      const Graph::Id l2_i = retention_node(g, policy, reference, pivot, cfg);
      l2_sum = (l2_sum < 0) ? l2_i : g.add(l2_sum, l2_i);
    }
  }
  MpoBatchNodes out;
  out.l1 = g.scale(l1_sum, 1.0 / n);
  if (l2_sum >= 0) {
    out.l2 = g.scale(l2_sum, 1.0 / n);
    out.total = g.add(out.l1, g.scale(out.l2, cfg.retention_weight));
  } else {
    out.total = out.l1;
  }
  if (breakdown != nullptr) {
    breakdown->l1 = g.value(out.l1);
    breakdown->l2 = (out.l2 >= 0) ? g.value(out.l2) : 0.0;
    breakdown->total = g.value(out.total);
    breakdown->w_theta = w_sum / n;
    breakdown->mean_rg_t = rg_t_sum / n;
    breakdown->mean_rg_d = rg_d_sum / n;
  }
  return out;
}

}  // namespace

// --------------------------------------------------------------- mpo terms ---

namespace {

void check_mpo_pairing(const LanguageModel& reference, const PreferenceExample& target,
                       const PreferenceExample& pivot) {
  if (target.pair_id != pivot.pair_id)
    throw PairingError("target pair_id " + std::to_string(target.pair_id) +
                       " does not match pivot pair_id " + std::to_string(pivot.pair_id));
  if (reference.role() != Role::reference)
    throw RoleError("the pivot-language gap must be scored by a frozen reference model");
}

}  // namespace

double mpo_l1(const LanguageModel& policy, const LanguageModel& reference,
              const PreferenceExample& target, const PreferenceExample& pivot,
              const MpoConfig& cfg) {
  cfg.validate();
  check_mpo_pairing(reference, target, pivot);
  check_vocab_compat(policy, reference);
  const double rg_t = reward_gap_simpo(policy, target, cfg.length_normalize);
  const double rg_d = reward_gap_simpo(reference, pivot, cfg.length_normalize);
  const double resid = cfg.beta * rg_t - rg_d;
  return resid * resid;
}

ValuedGrad mpo_l1_with_grad(const LanguageModel& policy, const LanguageModel& reference,
                            const PreferenceExample& target, const PreferenceExample& pivot,
                            const MpoConfig& cfg, ExecMode mode) {
  cfg.validate();
  check_mpo_pairing(reference, target, pivot);
  check_vocab_compat(policy, reference);
  Graph g;
  const double rg_d = reward_gap_simpo(reference, pivot, cfg.length_normalize);
  const ExampleLeaves L = make_leaves(g, policy, nullptr, target);
  const Graph::Id gap = policy_gap_node(g, L, cfg.length_normalize);
  const Graph::Id root = g.square(g.add_const(g.scale(gap, cfg.beta), -rg_d));
  return ValuedGrad{g.value(root), g.gradient(root, policy.param_count(), mode)};
}

double mpo_l2(const LanguageModel& policy, const LanguageModel& reference, TokenSpan prompt,
              const MpoConfig& cfg) {
  if (cfg.retention_mode == RetentionMode::none) return 0.0;
  if (cfg.retention_mode == RetentionMode::kl) {
    Graph g;
    const Graph::Id k =
        kl_ref_policy_leaf(g, policy, reference, TokenSeq(prompt.begin(), prompt.end()));
    return g.value(k);
  }
  const Vec h = policy.hidden_at_last(prompt);
  const Vec h_ref = reference.hidden_at_last(prompt);
  if (h.size() != h_ref.size())
    throw CompatError("hidden dimension mismatch: policy " + std::to_string(h.size()) +
                      " vs reference " + std::to_string(h_ref.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) s += (h[i] - h_ref[i]) * (h[i] - h_ref[i]);
  return s;
}

ValuedGrad mpo_l2_with_grad(const LanguageModel& policy, const LanguageModel& reference,
                            TokenSpan prompt, const MpoConfig& cfg, ExecMode mode) {
  Graph g;
  TokenSeq x(prompt.begin(), prompt.end());
  Graph::Id root;
  if (cfg.retention_mode == RetentionMode::none) {
    root = g.constant(0.0);
  } else if (cfg.retention_mode == RetentionMode::kl) {
    root = kl_ref_policy_leaf(g, policy, reference, std::move(x));
  } else {
    root = hidden_sqdist_leaf(g, policy, reference, std::move(x));
  }
  return ValuedGrad{g.value(root), g.gradient(root, policy.param_count(), mode)};
}

LossBreakdown mpo_total(const LanguageModel& policy, const LanguageModel& reference,
                        std::span<const MpoPair> batch, const MpoConfig& cfg,
                        const PivotTable* pivots) {
  Graph g;
  LossBreakdown out;
  build_mpo_batch(g, policy, reference, batch, cfg, pivots, &out);
  return out;
}

ValuedGrad mpo_total_with_grad(const LanguageModel& policy, const LanguageModel& reference,
                               std::span<const MpoPair> batch, const MpoConfig& cfg,
                               const PivotTable* pivots, LossBreakdown* breakdown,
                               ExecMode mode) {
  Graph g;
  LossBreakdown local;
  const MpoBatchNodes nodes = build_mpo_batch(g, policy, reference, batch, cfg, pivots, &local);
  if (breakdown != nullptr) *breakdown = local;
  return ValuedGrad{local.total, g.gradient(nodes.total, policy.param_count(), mode)};
}

// ---------------------------------------------------------------- baselines ---

const std::vector<std::string>& baseline_names() {
  static const std::vector<std::string> names = {"sft", "dpo",  "ipo",  "rdpo", "cpo",
                                                 "kto", "orpo", "r_dpo", "simpo"};
  return names;
}

namespace {

Graph::Id build_single_baseline(Graph& g, const std::string& name, const LanguageModel& policy,
                                const LanguageModel& reference, const PreferenceExample& ex,
                                const BaselineHyperparams& hp) {
  hp.validate();
  Graph::Id z = -1;
  if (name == "kto") {
    const BatchItem item{&ex, nullptr};
    z = build_kto_z(g, policy, reference, std::span<const BatchItem>(&item, 1), hp.beta_kto);
  }
  return build_baseline_example(g, name, policy, reference, ex, hp, z);
}

}  // namespace

double baseline_loss(const std::string& name, const LanguageModel& policy,
                     const LanguageModel& reference, const PreferenceExample& ex,
                     const BaselineHyperparams& hp) {
  Graph g;
  return g.value(build_single_baseline(g, name, policy, reference, ex, hp));
}

ValuedGrad baseline_loss_with_grad(const std::string& name, const LanguageModel& policy,
                                   const LanguageModel& reference, const PreferenceExample& ex,
                                   const BaselineHyperparams& hp, ExecMode mode) {
  Graph g;
  const Graph::Id root = build_single_baseline(g, name, policy, reference, ex, hp);
  return ValuedGrad{g.value(root), g.gradient(root, policy.param_count(), mode)};
}

// ------------------------------------------------------------ batch driver ---

void ObjectiveSpec::validate() const {
  if (is_mpo()) {
    mpo.validate();
    return;
  }
  const auto& names = baseline_names();
  if (std::find(names.begin(), names.end(), name) == names.end())
    throw DispatchError("unknown objective '" + name + "'; valid: mpo, " + join(names, ", "));
  hp.validate();
}

namespace {

ValuedGrad baseline_batch(const ObjectiveSpec& spec, const LanguageModel& policy,
                          const LanguageModel& reference, std::span<const BatchItem> batch,
                          LossBreakdown* breakdown, bool want_grad, ExecMode mode) {
  Graph g;
  Graph::Id z = -1;
  if (spec.name == "kto") z = build_kto_z(g, policy, reference, batch, spec.hp.beta_kto);
  Graph::Id sum = -1;
  double rg_t_sum = 0.0;
  for (const BatchItem& item : batch) {
    if (item.example == nullptr) throw InputError("batch item missing example");
    ExampleLeaves L;
    const Graph::Id li =
        build_baseline_example(g, spec.name, policy, reference, *item.example, spec.hp, z, &L);
    sum = (sum < 0) ? li : g.add(sum, li);
    rg_t_sum += g.value(L.avg_w) - g.value(L.avg_l);  // policy gap for the run log
  }
  const double n = static_cast<double>(batch.size());
  const Graph::Id root = g.scale(sum, 1.0 / n);
  if (breakdown != nullptr) {
    *breakdown = LossBreakdown{};
    breakdown->total = g.value(root);
    breakdown->l1 = g.value(root);
    breakdown->mean_rg_t = rg_t_sum / n;
  }
  ValuedGrad out;
  out.value = g.value(root);
  if (want_grad) out.grad = g.gradient(root, policy.param_count(), mode);
  return out;
}

std::vector<MpoPair> to_mpo_pairs(std::span<const BatchItem> batch) {
  std::vector<MpoPair> pairs;
  pairs.reserve(batch.size());
  for (const BatchItem& item : batch) {
    if (item.example == nullptr) throw InputError("batch item missing example");
    if (item.pivot == nullptr)
      throw PairingError("mpo requires a dominant-language twin for pair_id " +
                         std::to_string(item.example->pair_id));
    pairs.push_back(MpoPair{item.example, item.pivot});
  }
  return pairs;
}

}  // namespace

ValuedGrad batch_objective(const ObjectiveSpec& spec, const LanguageModel& policy,
                           const LanguageModel& reference, std::span<const BatchItem> batch,
                           const PivotTable* pivots, LossBreakdown* breakdown, ExecMode mode) {
  spec.validate();
  if (batch.empty()) throw InputError("batch must be nonempty");
  if (spec.is_mpo()) {
    const std::vector<MpoPair> pairs = to_mpo_pairs(batch);
    return mpo_total_with_grad(policy, reference, pairs, spec.mpo, pivots, breakdown, mode);
  }
  return baseline_batch(spec, policy, reference, batch, breakdown, /*want_grad=*/true, mode);
}

LossBreakdown batch_objective_value(const ObjectiveSpec& spec, const LanguageModel& policy,
                                    const LanguageModel& reference,
                                    std::span<const BatchItem> batch, const PivotTable* pivots) {
  spec.validate();
  if (batch.empty()) throw InputError("batch must be nonempty");
  LossBreakdown out;
  if (spec.is_mpo()) {
    const std::vector<MpoPair> pairs = to_mpo_pairs(batch);
    out = mpo_total(policy, reference, pairs, spec.mpo, pivots);
  } else {
    baseline_batch(spec, policy, reference, batch, &out, /*want_grad=*/false, ExecMode::serial);
  }
  return out;
}

}  // namespace mpo
