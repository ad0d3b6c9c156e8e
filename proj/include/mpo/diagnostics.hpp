// SPDX-License-Identifier: Apache-2.0
//
// Read-only analytics: per-language reward-gap aggregates, the rank
// correlation between reward gap and attack success, and a 2-component PCA
// of hidden representations for external plotting.

#pragma once

#include <array>
#include <string>
#include <vector>

#include "mpo/corpus.hpp"
#include "mpo/evalsuite.hpp"
#include "mpo/model.hpp"
#include "mpo/objectives.hpp"

namespace mpo {

struct RgLanguageRow {
  std::string language;
  int n = 0;
  double mean_rg_simpo = 0.0;
  double std_rg_simpo = 0.0;
  double mean_rg_dpo = 0.0;
  double std_rg_dpo = 0.0;
};

struct RgReport {
  std::vector<RgLanguageRow> rows;       // manifest language order
  std::vector<std::string> warnings;     // declared languages with no examples
  std::vector<RewardGapRecord> records;  // per-example detail
};

// Per-language aggregates over every example of the eval corpus.  Languages
// declared in the manifest but absent from the examples are omitted from
// `rows` and recorded in `warnings`.
RgReport rg_report(const LanguageModel& policy, const LanguageModel& reference,
                   const Corpus& eval_corpus, double beta_dpo = 1.0);

void write_rg_report_csv(const RgReport& report, const std::string& path);

// Rank correlation (Spearman with average ranks; Pearson behind the flag)
// between per-language mean RG and ASR, joined by language tag.  Throws
// InputError when fewer than 3 languages join, DegenerateInputError when
// either joined vector is constant.
double rg_asr_correlation(const RgReport& report, std::span<const MetricsRow> metrics,
                          bool use_pearson = false);

// --------------------------------------------------------------------- pca ---

struct PcaProjection {
  Vec axis1, axis2;  // orthonormal top-2 eigendirections, length d
  double lambda1 = 0.0, lambda2 = 0.0;        // eigenvalues, lambda1 >= lambda2
  double explained1 = 0.0, explained2 = 0.0;  // fractions of total variance
  std::vector<std::array<double, 2>> points;  // centered data projected on axes
  std::vector<std::string> language_labels;
  std::vector<int> safe_labels;  // 1 = safe, 0 = unsafe
};

// Top-2 principal directions of the centered covariance via power iteration
// with deflation (tolerance 1e-10, max 1e4 iterations).  Throws InputError on
// < 3 points or dimension < 2 or label-length mismatch, DegenerateInputError
// on zero-variance data.
PcaProjection pca_project(const std::vector<Vec>& representations,
                          const std::vector<std::string>& language_labels,
                          const std::vector<int>& safe_labels);

// language,safe,p1,p2 rows for external plotting.
void write_pca_points_csv(const PcaProjection& projection, const std::string& path);

}  // namespace mpo
