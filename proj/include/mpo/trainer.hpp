// SPDX-License-Identifier: Apache-2.0
//
// Deterministic training loop: Adam, cosine schedule with linear warmup,
// reference snapshotting, pivot-gap caching, CSV run logging, and a
// finite-difference gradient checker.  Bit-identical results per
// (corpus, config): batch order comes only from the seed, and gradient
// reductions are order-fixed in both execution modes.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mpo/corpus.hpp"
#include "mpo/model.hpp"
#include "mpo/objectives.hpp"
#include "mpo/parallel.hpp"

namespace mpo {

struct TrainConfig {
  ObjectiveSpec objective;
  int batch_size = 8;
  int epochs = 2;
  double lr = 1e-3;  // tabular default; transformer runs use ~3e-4
  double warmup_fraction = 0.10;
  std::uint64_t seed = 1;
  int eval_every = 1;  // run-log row frequency (final step always logged)
  bool grad_clip = true;
  double grad_clip_norm = 1.0;
  bool mixed_language_batches = true;  // false: language-homogeneous batches
  std::string pivot_language;          // empty: the corpus's dominant language
  ExecMode exec = ExecMode::serial;

  void validate() const;  // ConfigError; objective validated via its own rules
};

struct RunLogRow {
  int step = 0;
  double lr = 0.0;
  double total = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
  double w_theta_mean = 0.0;
  double rg_t_mean = 0.0;
  double rg_d_mean = 0.0;
  bool is_mpo = false;  // false leaves the mpo-only cells empty in the CSV
};

struct TrainResult {
  LanguageModel policy;
  LanguageModel reference;  // the frozen pre-step-0 snapshot
  std::vector<RunLogRow> log;
  int total_steps = 0;
};

// Cosine decay to 0 after a linear 0 -> lr warmup over the first
// warmup_fraction of steps.  Throws InputError on total_steps == 0 or a step
// outside [0, total_steps].
double lr_at(int step, int total_steps, const TrainConfig& config);

// Trains `policy` on the corpus.  mpo pairs every non-pivot-language example
// with its pivot-language twin (PairingError if a twin is missing;
// ConfigError if the corpus lacks the pivot language); baselines train on
// every example.  Throws TrainError with step and pair_id on non-finite loss.
TrainResult train(LanguageModel policy, const Corpus& corpus, const TrainConfig& config);

// step,lr,total,l1,l2,w_theta_mean,rg_t_mean,rg_d_mean with %.17g floats;
// mpo-only columns stay empty for baseline rows.
void write_run_log(const std::vector<RunLogRow>& log, const std::string& path);
std::vector<RunLogRow> read_run_log(const std::string& path);

// ------------------------------------------------------------- grad check ---

struct GradCheckReport {
  double max_rel_err = 0.0;
  int n_probes = 0;
  bool pass = false;  // max_rel_err < tolerance
};

// Central finite differences along n_probes random unit directions vs the
// analytic directional derivative.  Relative error is measured against
// max(|analytic|, |numeric|, 1e-6).
GradCheckReport grad_check(const LanguageModel& policy, const LanguageModel& reference,
                           const ObjectiveSpec& spec, std::span<const BatchItem> batch,
                           const PivotTable* pivots, int n_probes, std::uint64_t seed,
                           double fd_step = 1e-5, double tolerance = 1e-4);

}  // namespace mpo
