// SPDX-License-Identifier: Apache-2.0

#include "mpo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "mpo/rng.hpp"

namespace mpo {

void TrainConfig::validate() const {
  objective.validate();
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (lr < 0.0) throw ConfigError("lr must be >= 0");
  if (!(warmup_fraction > 0.0) || !(warmup_fraction < 1.0))
    throw ConfigError("warmup_fraction must lie in (0, 1)");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if (grad_clip && !(grad_clip_norm > 0.0)) throw ConfigError("grad_clip_norm must be > 0");
}

double lr_at(int step, int total_steps, const TrainConfig& config) {
  if (total_steps == 0) throw InputError("lr_at requires total_steps >= 1");
  if (step < 0 || step > total_steps)
    throw InputError("step " + std::to_string(step) + " outside [0, " +
                     std::to_string(total_steps) + "]");
  const double t = static_cast<double>(step);
  const double total = static_cast<double>(total_steps);
  const double warm = config.warmup_fraction * total;
  if (t < warm) return config.lr * t / warm;
  const double progress = (t - warm) / (total - warm);
  return config.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

namespace {

// Adam with bias correction; lr supplied per step by the schedule.
class Adam {
 public:
  explicit Adam(std::size_t n) : m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<double> params, std::span<const double> grad, double lr) {
    ++t_;
    const double b1c = 1.0 - std::pow(kBeta1, t_);
    const double b2c = 1.0 - std::pow(kBeta2, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * grad[i];
      v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * grad[i] * grad[i];
      const double mhat = m_[i] / b1c;
      const double vhat = v_[i] / b2c;
      params[i] -= lr * mhat / (std::sqrt(vhat) + kEps);
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  Vec m_, v_;
  int t_ = 0;
};

void clip_global_norm(std::span<double> grad, double max_norm) {
  double sq = 0.0;
  for (const double gv : grad) sq += gv * gv;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (double& gv : grad) gv *= s;
  }
}

void fisher_yates(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1], idx[rng.bounded(static_cast<std::uint64_t>(i))]);
}

// The per-run training set: items plus, for mpo, the pivot twins and cache.
struct TrainingPlan {
  std::vector<BatchItem> items;
  PivotTable pivots;  // mpo only
  bool has_pivots = false;
};

TrainingPlan make_plan(const Corpus& corpus, const LanguageModel& reference,
                       const TrainConfig& cfg) {
  TrainingPlan plan;
  if (!cfg.objective.is_mpo()) {
    for (const PreferenceExample& ex : corpus.examples)
      plan.items.push_back(BatchItem{&ex, nullptr});
    if (plan.items.empty()) throw ConfigError("training corpus is empty");
    return plan;
  }
  std::string pivot_lang = cfg.pivot_language;
  if (pivot_lang.empty()) pivot_lang = corpus.manifest.dominant_language().id;
  if (!corpus.manifest.has_language(pivot_lang))
    throw ConfigError("mpo pivot language '" + pivot_lang + "' not present in the corpus");
  std::map<int, const PreferenceExample*> pivot_by_id;
  std::vector<const PreferenceExample*> pivot_examples;
  for (const PreferenceExample& ex : corpus.examples) {
    if (ex.language != pivot_lang) continue;
    if (!pivot_by_id.emplace(ex.pair_id, &ex).second)
      throw PairingError("duplicate pivot example for pair_id " + std::to_string(ex.pair_id));
    pivot_examples.push_back(&ex);
  }
  if (pivot_by_id.empty())
    throw ConfigError("mpo objective requires pivot-language ('" + pivot_lang + "') examples");
  std::vector<PreferenceExample> pivot_copy;  // PivotTable wants a contiguous span
  pivot_copy.reserve(pivot_examples.size());
  for (const PreferenceExample* p : pivot_examples) pivot_copy.push_back(*p);
  plan.pivots = PivotTable::build(reference, pivot_copy, cfg.objective.mpo);
  plan.has_pivots = true;
  for (const PreferenceExample& ex : corpus.examples) {
    if (ex.language == pivot_lang) continue;
    const auto it = pivot_by_id.find(ex.pair_id);
    if (it == pivot_by_id.end())
      throw PairingError("no pivot-language twin for pair_id " + std::to_string(ex.pair_id) +
                         " (language " + ex.language + ")");
    plan.items.push_back(BatchItem{&ex, it->second});
  }
  if (plan.items.empty())
    throw ConfigError("mpo objective found no target-language examples to train on");
  return plan;
}

// Deterministic epoch order.  Mixed mode shuffles everything together;
// homogeneous mode shuffles within languages and emits language-pure batches
// in shuffled language order.
std::vector<std::vector<std::size_t>> epoch_batches(const TrainingPlan& plan,
                                                    const TrainConfig& cfg, int epoch) {
  const std::size_t n = plan.items.size();
  Rng rng(Rng::derive(cfg.seed, {"epoch", std::to_string(epoch)}));
  std::vector<std::vector<std::size_t>> batches;
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  if (cfg.mixed_language_batches) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    fisher_yates(idx, rng);
    for (std::size_t at = 0; at < n; at += bs) {
      const std::size_t end = std::min(n, at + bs);
      batches.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(at),
                           idx.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
  }
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) groups[plan.items[i].example->language].push_back(i);
  std::vector<std::string> langs;
  for (const auto& [lang, _] : groups) langs.push_back(lang);
  std::vector<std::size_t> order(langs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  fisher_yates(order, rng);
  for (const std::size_t li : order) {
    std::vector<std::size_t>& g = groups[langs[li]];
    fisher_yates(g, rng);
    for (std::size_t at = 0; at < g.size(); at += bs) {
      const std::size_t end = std::min(g.size(), at + bs);
      batches.emplace_back(g.begin() + static_cast<std::ptrdiff_t>(at),
                           g.begin() + static_cast<std::ptrdiff_t>(end));
    }
  }
  return batches;
}

// Locate the pair whose loss went non-finite, for the abort message.
int offending_pair(const TrainConfig& cfg, const LanguageModel& policy,
                   const LanguageModel& reference, std::span<const BatchItem> batch,
                   const PivotTable* pivots) {
  for (const BatchItem& item : batch) {
    try {
      const LossBreakdown one = batch_objective_value(
          cfg.objective, policy, reference, std::span<const BatchItem>(&item, 1), pivots);
      if (!std::isfinite(one.total)) return item.example->pair_id;
    } catch (const Error&) {
      return item.example->pair_id;
    }
  }
  return batch.empty() ? -1 : batch.front().example->pair_id;
}

}  // namespace

TrainResult train(LanguageModel policy, const Corpus& corpus, const TrainConfig& config) {
  config.validate();
  TrainResult result;
  result.reference = policy.snapshot_reference();
  const TrainingPlan plan = make_plan(corpus, result.reference, config);
  const PivotTable* pivots = plan.has_pivots ? &plan.pivots : nullptr;

  // The schedule needs the run length up front; batch counts per epoch are
  // deterministic, so precompute them.
  int total_steps = 0;
  std::vector<std::vector<std::vector<std::size_t>>> all_batches;
  all_batches.reserve(static_cast<std::size_t>(config.epochs));
  for (int e = 0; e < config.epochs; ++e) {
    all_batches.push_back(epoch_batches(plan, config, e));
    total_steps += static_cast<int>(all_batches.back().size());
  }
  result.total_steps = total_steps;
  if (total_steps == 0) {
    result.policy = std::move(policy);
    return result;
  }

  Adam opt(policy.param_count());
  int step = 0;
  std::vector<BatchItem> batch;
  for (int e = 0; e < config.epochs; ++e) {
    for (const std::vector<std::size_t>& idx : all_batches[static_cast<std::size_t>(e)]) {
      batch.clear();
      for (const std::size_t i : idx) batch.push_back(plan.items[i]);
      LossBreakdown breakdown;
      ValuedGrad vg = batch_objective(config.objective, policy, result.reference, batch, pivots,
                                      &breakdown, config.exec);
      if (!std::isfinite(vg.value))
        throw TrainError("non-finite loss at step " + std::to_string(step) + " (pair_id " +
                         std::to_string(offending_pair(config, policy, result.reference, batch,
                                                       pivots)) +
                         ")");
      const double lr = lr_at(step, total_steps, config);
      if (step % config.eval_every == 0 || step == total_steps - 1) {
        RunLogRow row;
        row.step = step;
        row.lr = lr;
        row.total = breakdown.total;
        row.l1 = breakdown.l1;
        row.l2 = breakdown.l2;
        row.w_theta_mean = breakdown.w_theta;
        row.rg_t_mean = breakdown.mean_rg_t;
        row.rg_d_mean = breakdown.mean_rg_d;
        row.is_mpo = config.objective.is_mpo();
        result.log.push_back(row);
      }
      if (config.grad_clip) clip_global_norm(vg.grad, config.grad_clip_norm);
      opt.step(policy.mutable_params(), vg.grad, lr);
      ++step;
    }
  }
  result.policy = std::move(policy);
  return result;
}

// ------------------------------------------------------------------ run log ---

void write_run_log(const std::vector<RunLogRow>& log, const std::string& path) {
  std::ofstream out(path, std::ios::binary);  // binary: stable newlines everywhere
  if (!out) throw IoError("cannot open run log for writing: " + path);
  out << "step,lr,total,l1,l2,w_theta_mean,rg_t_mean,rg_d_mean\n";
  for (const RunLogRow& r : log) {
    out << r.step << ',' << fmt_g17(r.lr) << ',' << fmt_g17(r.total) << ',' << fmt_g17(r.l1);
    if (r.is_mpo) {
      out << ',' << fmt_g17(r.l2) << ',' << fmt_g17(r.w_theta_mean) << ','
          << fmt_g17(r.rg_t_mean) << ',' << fmt_g17(r.rg_d_mean);
    } else {
      out << ",,,,";
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing run log: " + path);
}

std::vector<RunLogRow> read_run_log(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open run log: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": empty run log");
  std::vector<RunLogRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    while (cells.size() < 8) cells.emplace_back();
    if (cells.size() != 8)
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected 8 columns");
    RunLogRow r;
    try {
      r.step = std::stoi(cells[0]);
      r.lr = std::stod(cells[1]);
      r.total = std::stod(cells[2]);
      r.l1 = std::stod(cells[3]);
      r.is_mpo = !cells[4].empty();
      if (r.is_mpo) {
        r.l2 = std::stod(cells[4]);
        r.w_theta_mean = std::stod(cells[5]);
        r.rg_t_mean = std::stod(cells[6]);
        r.rg_d_mean = std::stod(cells[7]);
      }
    } catch (const std::exception&) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": malformed numeric cell");
    }
    rows.push_back(r);
  }
  return rows;
}

// --------------------------------------------------------------- grad check ---

GradCheckReport grad_check(const LanguageModel& policy, const LanguageModel& reference,
                           const ObjectiveSpec& spec, std::span<const BatchItem> batch,
                           const PivotTable* pivots, int n_probes, std::uint64_t seed,
                           double fd_step, double tolerance) {
  if (n_probes < 1) throw InputError("grad_check requires n_probes >= 1");
  const ValuedGrad vg = batch_objective(spec, policy, reference, batch, pivots, nullptr);
  LanguageModel probe = policy;  // clone; mutations never touch the input model
  const std::size_t n = probe.param_count();
  Rng rng(Rng::derive(seed, {"grad-check"}));
  GradCheckReport report;
  report.n_probes = n_probes;
  Vec dir(n);
  for (int p = 0; p < n_probes; ++p) {
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      dir[i] = rng.normal();
      sq += dir[i] * dir[i];
    }
    const double inv = 1.0 / std::sqrt(sq);
    double analytic = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      dir[i] *= inv;
      analytic += vg.grad[i] * dir[i];
    }
    // Rebuild from the pristine base each evaluation so probes never
    // accumulate floating-point restore drift.
    const std::span<const double> base = policy.params();
    auto eval_at = [&](double shift) {
      std::span<double> params = probe.mutable_params();
      for (std::size_t i = 0; i < n; ++i) params[i] = base[i] + shift * dir[i];
      return batch_objective_value(spec, probe, reference, batch, pivots).total;
    };
    const double numeric = (eval_at(fd_step) - eval_at(-fd_step)) / (2.0 * fd_step);
    const double rel = std::abs(analytic - numeric) /
                       std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    report.max_rel_err = std::max(report.max_rel_err, rel);
  }
  report.pass = report.max_rel_err < tolerance;
  return report;
}

}  // namespace mpo
