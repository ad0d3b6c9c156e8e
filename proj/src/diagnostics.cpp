// SPDX-License-Identifier: Apache-2.0

#include "mpo/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

namespace mpo {

RgReport rg_report(const LanguageModel& policy, const LanguageModel& reference,
                   const Corpus& eval_corpus, double beta_dpo) {
  RgReport report;
  for (const LanguageSpec& lang : eval_corpus.manifest.languages) {
    const std::vector<const PreferenceExample*> examples = eval_corpus.in_language(lang.id);
    if (examples.empty()) {
      report.warnings.push_back("language '" + lang.id + "' has no examples; omitted");
      continue;
    }
    double sum_s = 0.0, sum_d = 0.0;
    std::vector<double> simpo_vals, dpo_vals;
    simpo_vals.reserve(examples.size());
    dpo_vals.reserve(examples.size());
    for (const PreferenceExample* ex : examples) {
      RewardGapRecord rec = reward_gaps(policy, reference, *ex, beta_dpo);
      sum_s += rec.gap_simpo;
      sum_d += rec.gap_dpo;
      simpo_vals.push_back(rec.gap_simpo);
      dpo_vals.push_back(rec.gap_dpo);
      report.records.push_back(std::move(rec));
    }
    const double n = static_cast<double>(examples.size());
    RgLanguageRow row;
    row.language = lang.id;
    row.n = static_cast<int>(examples.size());
    row.mean_rg_simpo = sum_s / n;
    row.mean_rg_dpo = sum_d / n;
    double var_s = 0.0, var_d = 0.0;
    for (std::size_t i = 0; i < simpo_vals.size(); ++i) {
      var_s += (simpo_vals[i] - row.mean_rg_simpo) * (simpo_vals[i] - row.mean_rg_simpo);
      var_d += (dpo_vals[i] - row.mean_rg_dpo) * (dpo_vals[i] - row.mean_rg_dpo);
    }
    row.std_rg_simpo = std::sqrt(var_s / n);  // population std: single-example -> 0
    row.std_rg_dpo = std::sqrt(var_d / n);
    report.rows.push_back(std::move(row));
  }
  return report;
}

void write_rg_report_csv(const RgReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open rg report for writing: " + path);
  out << "language,n,mean_rg_simpo,std_rg_simpo,mean_rg_dpo,std_rg_dpo\n";
  for (const RgLanguageRow& r : report.rows)
    out << r.language << ',' << r.n << ',' << fmt_g17(r.mean_rg_simpo) << ','
        << fmt_g17(r.std_rg_simpo) << ',' << fmt_g17(r.mean_rg_dpo) << ','
        << fmt_g17(r.std_rg_dpo) << '\n';
  for (const std::string& w : report.warnings) out << "# warning: " << w << '\n';
  if (!out) throw IoError("failed writing rg report: " + path);
}

namespace {

// Average ranks (1-based); ties share the mean of their rank positions.
std::vector<double> average_ranks(const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double shared = 0.5 * static_cast<double>(i + j) + 1.0;  // mean of i..j, 1-based
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = shared;
    i = j + 1;
  }
  return ranks;
}

bool is_constant(const std::vector<double>& v) {
  for (double x : v)
    if (x != v.front()) return false;
  return true;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (is_constant(a) || is_constant(b))
    throw DegenerateInputError("correlation undefined for a constant input vector");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0)
    throw DegenerateInputError("correlation undefined for a constant input vector");
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

double rg_asr_correlation(const RgReport& report, std::span<const MetricsRow> metrics,
                          bool use_pearson) {
  std::map<std::string, double> asr_by_lang;
  for (const MetricsRow& m : metrics) asr_by_lang.emplace(m.language, m.asr);
  std::vector<double> rg, asr_vals;
  for (const RgLanguageRow& row : report.rows) {
    const auto it = asr_by_lang.find(row.language);
    if (it == asr_by_lang.end()) continue;
    rg.push_back(row.mean_rg_simpo);
    asr_vals.push_back(it->second);
  }
  if (rg.size() < 3)
    throw InputError("rg_asr_correlation requires >= 3 languages with both RG and ASR, got " +
                     std::to_string(rg.size()));
  if (use_pearson) return pearson(rg, asr_vals);
  return pearson(average_ranks(rg), average_ranks(asr_vals));
}

// ----------------------------------------------------------------------- pca ---

namespace {

// Deterministic power iteration on a dense symmetric matrix.  Returns the
// dominant eigenpair; `prev` (if any) is re-orthogonalized against every
// sweep so the deflated run stays in the complement subspace.
void power_iterate(const std::vector<Vec>& cov, Vec& v, double& lambda, const Vec* prev) {
  const std::size_t d = cov.size();
  constexpr double kTol = 1e-10;
  constexpr int kMaxIters = 10000;
  Vec next(d);
  for (int it = 0; it < kMaxIters; ++it) {
    for (std::size_t i = 0; i < d; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += cov[i][j] * v[j];
      next[i] = s;
    }
    if (prev != nullptr) {
      double along = 0.0;
      for (std::size_t i = 0; i < d; ++i) along += next[i] * (*prev)[i];
      for (std::size_t i = 0; i < d; ++i) next[i] -= along * (*prev)[i];
    }
    double norm = 0.0;
    for (const double x : next) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-300) {  // (near-)zero matrix in this subspace: eigenvalue 0
      lambda = 0.0;
      return;
    }
    double delta = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      next[i] /= norm;
      delta = std::max(delta, std::abs(next[i] - v[i]));
    }
    // Sign flips oscillate for negative-definite directions; compare both.
    double delta_neg = 0.0;
    for (std::size_t i = 0; i < d; ++i)
      delta_neg = std::max(delta_neg, std::abs(next[i] + v[i]));
    v = next;
    if (std::min(delta, delta_neg) < kTol) break;
  }
  // Rayleigh quotient (v is unit length).
  lambda = 0.0;
  for (std::size_t i = 0; i < cov.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < cov.size(); ++j) s += cov[i][j] * v[j];
    lambda += v[i] * s;
  }
}

// Fixed sign convention so projections are bit-reproducible: the component
// of largest magnitude is positive (lowest index wins magnitude ties).
void fix_sign(Vec& v) {
  std::size_t arg = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (std::abs(v[i]) > std::abs(v[arg])) arg = i;
  if (v[arg] < 0.0)
    for (double& x : v) x = -x;
}

// Deterministic unit vector orthogonal to `a` (used when the residual
// subspace has zero variance and power iteration has nothing to find).
Vec orthogonal_unit(const Vec& a) {
  std::size_t arg = 0;  // basis vector least aligned with a
  for (std::size_t i = 1; i < a.size(); ++i)
    if (std::abs(a[i]) < std::abs(a[arg])) arg = i;
  Vec v(a.size(), 0.0);
  v[arg] = 1.0;
  double along = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) along += v[i] * a[i];
  for (std::size_t i = 0; i < a.size(); ++i) v[i] -= along * a[i];
  double norm = 0.0;
  for (const double x : v) norm += x * x;
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

}  // namespace

PcaProjection pca_project(const std::vector<Vec>& representations,
                          const std::vector<std::string>& language_labels,
                          const std::vector<int>& safe_labels) {
  const std::size_t n = representations.size();
  if (n < 3) throw InputError("pca_project requires >= 3 points");
  const std::size_t d = representations.front().size();
  if (d < 2) throw InputError("pca_project requires dimension >= 2");
  for (const Vec& r : representations)
    if (r.size() != d) throw InputError("pca_project: inconsistent point dimensions");
  if (language_labels.size() != n || safe_labels.size() != n)
    throw InputError("pca_project: label count does not match point count");

  Vec mean(d, 0.0);
  for (const Vec& r : representations)
    for (std::size_t j = 0; j < d; ++j) mean[j] += r[j];
  for (double& m : mean) m /= static_cast<double>(n);

  std::vector<Vec> cov(d, Vec(d, 0.0));
  for (const Vec& r : representations)
    for (std::size_t i = 0; i < d; ++i) {
      const double ci = r[i] - mean[i];
      for (std::size_t j = 0; j < d; ++j) cov[i][j] += ci * (r[j] - mean[j]);
    }
  double trace = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) cov[i][j] /= static_cast<double>(n);
    trace += cov[i][i];
  }
  if (trace <= 0.0 || !(trace > 1e-30))
    throw DegenerateInputError("pca_project: zero-variance representations");

  PcaProjection out;
  // Deterministic start: the diagonal-dominant basis vector.
  Vec v1(d, 0.0);
  std::size_t arg = 0;
  for (std::size_t i = 1; i < d; ++i)
    if (cov[i][i] > cov[arg][arg]) arg = i;
  v1[arg] = 1.0;
  power_iterate(cov, v1, out.lambda1, nullptr);
  fix_sign(v1);

  // Deflate and repeat in the orthogonal complement.
  std::vector<Vec> deflated = cov;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) deflated[i][j] -= out.lambda1 * v1[i] * v1[j];
  Vec v2 = orthogonal_unit(v1);
  power_iterate(deflated, v2, out.lambda2, &v1);
  if (out.lambda2 < 0.0) out.lambda2 = 0.0;  // roundoff on rank-1 data
  if (out.lambda2 == 0.0) v2 = orthogonal_unit(v1);
  fix_sign(v2);

  out.axis1 = std::move(v1);
  out.axis2 = std::move(v2);
  out.explained1 = out.lambda1 / trace;
  out.explained2 = out.lambda2 / trace;
  out.points.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    double p1 = 0.0, p2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = representations[k][j] - mean[j];
      p1 += c * out.axis1[j];
      p2 += c * out.axis2[j];
    }
    out.points[k] = {p1, p2};
  }
  out.language_labels = language_labels;
  out.safe_labels = safe_labels;
  return out;
}

void write_pca_points_csv(const PcaProjection& projection, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open pca points file for writing: " + path);
  out << "language,safe,p1,p2\n";
  for (std::size_t i = 0; i < projection.points.size(); ++i)
    out << projection.language_labels[i] << ',' << projection.safe_labels[i] << ','
        << fmt_g17(projection.points[i][0]) << ',' << fmt_g17(projection.points[i][1]) << '\n';
  if (!out) throw IoError("failed writing pca points file: " + path);
}

}  // namespace mpo
