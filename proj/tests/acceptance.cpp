// SPDX-License-Identifier: Apache-2.0
//
// Acceptance gate: twelve numbered checks covering gradient exactness, the
// closed-form update, fixed-point behavior, directional training claims, the
// brute-force oracle, and byte-level reproducibility.  Each criterion prints
// exactly one [PASS]/[FAIL] line with its measured numbers; the process exits
// nonzero if any criterion fails.  Tolerances are pinned next to each check.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "mpo/diagnostics.hpp"
#include "mpo/experiments.hpp"
#include "mpo/trainer.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace mpo;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_failures = 0;

std::string num(double v, const char* fmt = "%.3g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

void report(int id, const char* name, const Outcome& o, double seconds) {
  std::printf("[%s] criterion %2d (%s): %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", id, name,
              o.detail.c_str(), seconds);
  std::fflush(stdout);
  if (!o.pass) ++g_failures;
}

const std::filesystem::path kTmp = "acceptance_tmp";

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Small-length manifest shared by the cheap criteria.
CorpusManifest small_lengths(CorpusManifest m) {
  m.prompt_len_min = 3;
  m.prompt_len_max = 6;
  m.safe_len_min = 3;
  m.safe_len_max = 6;
  m.unsafe_len_min = 4;
  m.unsafe_len_max = 8;
  return m;
}

// Random preference example in a given vocab (content distinct from y_w/y_l).
PreferenceExample random_example(Rng& rng, int vocab, int pair_id, const std::string& lang) {
  const auto seq = [&](int lo, int hi) {
    TokenSeq s(static_cast<std::size_t>(rng.uniform_int(lo, hi)));
    for (Token& t : s) t = rng.uniform_int(0, vocab - 1);
    return s;
  };
  PreferenceExample ex = testsup::make_example(pair_id, lang, seq(1, 4), seq(1, 4), seq(2, 6));
  while (ex.y_l == ex.y_w) ex.y_l = seq(2, 6);
  return ex;
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

// ---------------------------------------------------------------------------
// Criterion 1: analytic gradients vs central finite differences, every
// objective, both backends, 20 seeds each.  Tolerance: max rel err < 1e-4.
// ---------------------------------------------------------------------------
Outcome criterion_1() {
  constexpr double kTol = 1e-4;
  constexpr int kSeeds = 20;
  constexpr int kProbes = 2;
  constexpr double kStep = 1e-5;
  const int vocab = 10;

  double worst = 0.0;
  std::string worst_tag;
  const auto track = [&](double e, const std::string& tag) {
    if (e > worst) {
      worst = e;
      worst_tag = tag;
    }
  };

  for (const bool use_transformer : {false, true}) {
    const char* backend = use_transformer ? "transformer" : "tabular";
    for (int seed = 1; seed <= kSeeds; ++seed) {
      TransformerConfig tc;
      tc.n_layers = 1;
      tc.d_model = 16;
      tc.n_heads = 2;
      tc.d_ff = 32;
      tc.max_seq = 32;
      const LanguageModel policy =
          use_transformer ? LanguageModel::transformer(vocab, tc, static_cast<unsigned>(seed))
                          : LanguageModel::tabular(vocab, 1, 0.5, static_cast<unsigned>(seed));
      const LanguageModel reference =
          (use_transformer
               ? LanguageModel::transformer(vocab, tc, static_cast<unsigned>(seed) + 500)
               : LanguageModel::tabular(vocab, 1, 0.5, static_cast<unsigned>(seed) + 500))
              .snapshot_reference();
      Rng rng(static_cast<std::uint64_t>(seed) * 977 + (use_transformer ? 1 : 0));
      const PreferenceExample target = random_example(rng, vocab, seed, "t1");
      const PreferenceExample pivot = random_example(rng, vocab, seed, "dom");
      const PreferenceExample target2 = random_example(rng, vocab, seed + 100, "t1");
      const PreferenceExample pivot2 = random_example(rng, vocab, seed + 100, "dom");
      const BaselineHyperparams hp;

      struct Probe {
        std::string name;
        Vec grad;
        std::function<double(const LanguageModel&)> value;
      };
      std::vector<Probe> probes;

      MpoConfig l1_cfg;
      l1_cfg.beta = 1.3;
      l1_cfg.length_normalize = (seed % 2 == 0);
      probes.push_back({"mpo_l1",
                        mpo_l1_with_grad(policy, reference, target, pivot, l1_cfg).grad,
                        [&, l1_cfg](const LanguageModel& pm) {
                          return mpo_l1(pm, reference, target, pivot, l1_cfg);
                        }});

      MpoConfig l2_cfg;
      l2_cfg.retention_mode = (seed % 2 == 0) ? RetentionMode::representation : RetentionMode::kl;
      probes.push_back({"mpo_l2",
                        mpo_l2_with_grad(policy, reference, pivot.x, l2_cfg).grad,
                        [&, l2_cfg](const LanguageModel& pm) {
                          return mpo_l2(pm, reference, pivot.x, l2_cfg);
                        }});

      MpoConfig total_cfg;
      total_cfg.beta = 1.2;
      total_cfg.retention_weight = 0.7;
      const std::vector<MpoPair> batch{{&target, &pivot}, {&target2, &pivot2}};
      probes.push_back({"mpo_total",
                        mpo_total_with_grad(policy, reference, batch, total_cfg).grad,
                        [&, total_cfg](const LanguageModel& pm) {
                          return mpo_total(pm, reference, batch, total_cfg).total;
                        }});

      for (const std::string& name : baseline_names())
        probes.push_back({name,
                          baseline_loss_with_grad(name, policy, reference, target, hp).grad,
                          [&, name](const LanguageModel& pm) {
                            return baseline_loss(name, pm, reference, target, hp);
                          }});

      for (const Probe& p : probes) {
        for (int k = 0; k < kProbes; ++k) {
          const Vec dir = testsup::random_unit(policy.param_count(), rng);
          const double analytic = dot(p.grad, dir);
          const double numeric = testsup::model_directional_fd(policy, p.value, dir, kStep);
          track(rel_err(analytic, numeric), p.name + "/" + backend);
        }
      }
    }
  }
  return {worst < kTol,
          "max rel err " + num(worst) + " (worst " + worst_tag + "), tolerance 1e-4, " +
              std::to_string(kSeeds) + " seeds x 2 backends x 12 objectives"};
}

// ---------------------------------------------------------------------------
// Criterion 2: the assembled closed form 2*beta*w*grad(RG_t) equals the
// autodiff gradient of the gap-matching term within 1e-8 absolute (tabular).
// ---------------------------------------------------------------------------
Outcome criterion_2() {
  constexpr double kTol = 1e-8;
  constexpr int kSeeds = 20;
  const int vocab = 8;
  double worst = 0.0;
  for (int seed = 1; seed <= kSeeds; ++seed) {
    const LanguageModel policy = LanguageModel::tabular(vocab, 1, 0.6, 70 + seed);
    const LanguageModel reference =
        LanguageModel::tabular(vocab, 1, 0.6, 170 + seed).snapshot_reference();
    Rng rng(991 + seed);
    const PreferenceExample target = random_example(rng, vocab, seed, "t1");
    const PreferenceExample pivot = random_example(rng, vocab, seed, "dom");
    for (const bool ln : {true, false}) {
      MpoConfig cfg;
      cfg.length_normalize = ln;
      cfg.beta = 0.5 + 0.1 * seed;
      const double rg_t = reward_gap_simpo(policy, target, ln);
      const double rg_d = reward_gap_simpo(reference, pivot, ln);
      const double w = cfg.beta * rg_t - rg_d;

      Vec assembled(policy.param_count(), 0.0);
      const Vec ww(target.y_w.size(), ln ? 1.0 / static_cast<double>(target.y_w.size()) : 1.0);
      const Vec wl(target.y_l.size(), ln ? 1.0 / static_cast<double>(target.y_l.size()) : 1.0);
      policy.sequence_grad(target.x, target.y_w, ww, 2.0 * cfg.beta * w, assembled);
      policy.sequence_grad(target.x, target.y_l, wl, -2.0 * cfg.beta * w, assembled);

      const Vec autodiff = mpo_l1_with_grad(policy, reference, target, pivot, cfg).grad;
      for (std::size_t i = 0; i < assembled.size(); ++i)
        worst = std::max(worst, std::abs(assembled[i] - autodiff[i]));
    }
  }
  return {worst < kTol, "max |assembled - autodiff| " + num(worst) + ", tolerance 1e-8, " +
                            std::to_string(kSeeds) + " seeds x both normalizations"};
}

// ---------------------------------------------------------------------------
// Criterion 3: when beta*RG_t == RG_d on every pair and the retention term is
// zero, the total loss is 0 and the gradient norm is < 1e-10.
// ---------------------------------------------------------------------------
Outcome criterion_3() {
  constexpr double kGradTol = 1e-10;
  const int vocab = 8;
  double worst_total = 0.0, worst_grad = 0.0;

  // Construction A: policy == reference and target == pivot with beta = 1, so
  // beta*RG_t and RG_d are the same number, and the representation retention
  // is exactly zero.  Length-normalized runs use power-of-two response
  // lengths so that scaling by 1/len is exact in both code paths.
  for (int seed = 1; seed <= 10; ++seed) {
    const LanguageModel policy =
        LanguageModel::tabular(vocab, 1, 0.5, 300 + static_cast<std::uint64_t>(seed));
    const LanguageModel reference = policy.snapshot_reference();
    const bool ln = (seed % 2 == 0);
    Rng rng(401 + static_cast<std::uint64_t>(seed));
    std::vector<PreferenceExample> pairs;
    for (int k = 0; k < 4; ++k) {
      PreferenceExample ex = random_example(rng, vocab, k, "dom");
      if (ln) {
        const auto pow2 = [&] {
          TokenSeq s(static_cast<std::size_t>(1) << rng.uniform_int(0, 2));
          for (Token& t : s) t = rng.uniform_int(0, vocab - 1);
          return s;
        };
        ex.y_w = pow2();
        ex.y_l = pow2();
        while (ex.y_l == ex.y_w) ex.y_l = pow2();
      }
      pairs.push_back(ex);
    }
    std::vector<MpoPair> batch;
    for (const PreferenceExample& ex : pairs) batch.push_back({&ex, &ex});
    MpoConfig cfg;  // beta 1, representation retention, weight 1
    cfg.length_normalize = ln;
    const ValuedGrad vg = mpo_total_with_grad(policy, reference, batch, cfg);
    worst_total = std::max(worst_total, std::abs(vg.value));
    worst_grad = std::max(worst_grad, std::sqrt(norm2(vg.grad)));
  }

  // Construction B: distinct models, one pair, fixed pivot constant chosen as
  // beta*RG_t under the policy (computed with the same reciprocal-scaling
  // arithmetic the loss uses), retention disabled.
  for (int seed = 1; seed <= 10; ++seed) {
    const LanguageModel policy =
        LanguageModel::tabular(vocab, 1, 0.5, 500 + static_cast<std::uint64_t>(seed));
    const LanguageModel reference =
        LanguageModel::tabular(vocab, 1, 0.5, 600 + static_cast<std::uint64_t>(seed))
            .snapshot_reference();
    Rng rng(701 + static_cast<std::uint64_t>(seed));
    const PreferenceExample target = random_example(rng, vocab, 0, "t1");
    const PreferenceExample pivot = random_example(rng, vocab, 0, "dom");
    MpoConfig cfg;
    cfg.beta = 2.0;
    cfg.retention_mode = RetentionMode::none;
    cfg.retention_weight = 0.0;
    cfg.pivot_mode = PivotMode::fixed;
    const double tw = policy.score_sequence(target.x, target.y_w).total_logprob;
    const double tl = policy.score_sequence(target.x, target.y_l).total_logprob;
    const double rg_t = tw * (1.0 / static_cast<double>(target.y_w.size())) -
                        tl * (1.0 / static_cast<double>(target.y_l.size()));
    cfg.pivot_constant = rg_t * cfg.beta;
    const std::vector<MpoPair> batch{{&target, &pivot}};
    const ValuedGrad vg = mpo_total_with_grad(policy, reference, batch, cfg);
    worst_total = std::max(worst_total, std::abs(vg.value));
    worst_grad = std::max(worst_grad, std::sqrt(norm2(vg.grad)));
  }
  return {worst_total == 0.0 && worst_grad < kGradTol,
          "max |total| " + num(worst_total) + ", max grad norm " + num(worst_grad) +
              " (tolerance 1e-10), 20 constructions"};
}

// ---------------------------------------------------------------------------
// Criterion 4: with |w_theta| > 0.1, one small gradient step moves RG_t
// against the sign of w_theta, 100/100 trials (tabular).
// ---------------------------------------------------------------------------
Outcome criterion_4() {
  constexpr int kTrials = 100;
  constexpr int kMaxAttempts = 3000;
  constexpr double kEta = 1e-3;
  int done = 0, correct = 0, attempts = 0;
  Rng rng(4242);
  while (done < kTrials && attempts < kMaxAttempts) {
    ++attempts;
    const int vocab = rng.uniform_int(6, 12);
    const LanguageModel policy =
        LanguageModel::tabular(vocab, 1, 0.6, 900 + static_cast<std::uint64_t>(attempts));
    const LanguageModel reference =
        LanguageModel::tabular(vocab, 1, 0.6, 9900 + static_cast<std::uint64_t>(attempts))
            .snapshot_reference();
    const PreferenceExample target = random_example(rng, vocab, 0, "t1");
    const PreferenceExample pivot = random_example(rng, vocab, 0, "dom");
    MpoConfig cfg;
    cfg.beta = 0.5 + 0.5 * rng.uniform_int(0, 3);  // 0.5, 1.0, 1.5, 2.0
    cfg.retention_mode = RetentionMode::none;
    cfg.retention_weight = 0.0;
    const double rg_before = reward_gap_simpo(policy, target, true);
    const double w = cfg.beta * rg_before - reward_gap_simpo(reference, pivot, true);
    if (std::abs(w) <= 0.1) continue;
    const ValuedGrad vg = mpo_l1_with_grad(policy, reference, target, pivot, cfg);
    if (norm2(vg.grad) == 0.0) continue;  // degenerate direction, cannot move
    LanguageModel stepped = policy;
    auto params = stepped.mutable_params();
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= kEta * vg.grad[i];
    const double rg_after = reward_gap_simpo(stepped, target, true);
    ++done;
    if ((rg_after - rg_before) * w < 0.0) ++correct;
  }
  return {done == kTrials && correct == kTrials,
          std::to_string(correct) + "/" + std::to_string(done) +
              " trials moved RG_t against sign(w_theta), step 1e-3, |w|>0.1"};
}

// --------------------------------------------------------------------------
// Shared recipe for the directional criteria (5-7, 9-10): order-1 tabular
// policies over a 96-token vocabulary.  Order 1 keeps the safety-relevant
// transition rows dense enough to generalize to the held-out evaluation
// prompts, and the larger vocabulary leaves room to re-seed each manifest
// until every language's refusal/compliance marker images are pairwise
// distinct -- a cipher collision (one language's refusal image doubling as
// another's compliance image) makes greedy-decode classification meaningless.
// --------------------------------------------------------------------------
constexpr int kDirVocab = 96;        // vocabulary for the directional recipes
constexpr int kDirDecodeLen = 6;     // greedy-decode budget for classification
constexpr int kDirEvalPairs = 48;    // held-out pairs per language
constexpr int kDirBenign = 16;       // benign sequences per language
constexpr double kDirBaseLr = 0.1;   // sft preparation step size

bool markers_disjoint(const CorpusManifest& manifest) {
  std::set<Token> seen;
  std::size_t total = 0;
  for (const LanguageSpec& lang : manifest.languages) {
    for (Token t : manifest.refusal_markers_in(lang.id)) {
      seen.insert(t);
      ++total;
    }
    for (Token t : manifest.compliance_markers_in(lang.id)) {
      seen.insert(t);
      ++total;
    }
  }
  return seen.size() == total;
}

// First manifest seed >= start whose ciphers keep all marker images distinct.
std::uint64_t marker_safe_seed(CorpusManifest manifest, std::uint64_t start) {
  for (std::uint64_t s = start;; ++s) {
    manifest.seed = s;
    if (markers_disjoint(manifest)) return s;
  }
}

LanguageModel order1_policy() { return LanguageModel::tabular(kDirVocab, 1, 0.0, 0); }

ObjectiveSpec mpo_spec(double beta = 1.0, double retention = 1.0, bool ln = true) {
  ObjectiveSpec spec;
  spec.name = "mpo";
  spec.mpo.beta = beta;
  spec.mpo.retention_weight = retention;
  spec.mpo.length_normalize = ln;
  return spec;
}

// ---------------------------------------------------------------------------
// Criterion 5: dropping length normalization raises post-training ASR on
// every target language (unsafe responses are longer than safe ones, so the
// un-normalized gap is dominated by response length rather than content).
// ---------------------------------------------------------------------------
Outcome criterion_5() {
  constexpr int kBaseEpochs = 4;
  constexpr double kPrefLr = 0.05;
  constexpr int kPrefEpochs = 3;
  constexpr int kKeepEvery = 4;  // low-resource targets: every 4th pair only
  CorpusManifest manifest = uniform_noise_manifest(/*seed=*/31, /*n_pairs=*/64,
                                                   /*n_targets=*/2, /*epsilon=*/0.0);
  manifest.vocab_size = kDirVocab;
  for (LanguageSpec& lang : manifest.languages)
    if (lang.tier != Tier::dominant) lang.rho = 0.0;
  manifest.seed = marker_safe_seed(manifest, 31);
  const DataBundle bundle = build_bundle(manifest, kDirEvalPairs, kDirBenign);
  Corpus prep_corpus = bundle.train;
  std::erase_if(prep_corpus.examples, [&](const PreferenceExample& ex) {
    return ex.language != "dom" && (ex.pair_id % kKeepEvery) != 0;
  });
  const LanguageModel prepped =
      base_prep(order1_policy(), prep_corpus, kDirBaseLr, kBaseEpochs, 131);
  const TrainResult normalized = preference_run(prepped, bundle.train, mpo_spec(1.0, 1.0, true),
                                                kPrefLr, kPrefEpochs, 7);
  const TrainResult unnormalized = preference_run(
      prepped, bundle.train, mpo_spec(1.0, 1.0, false), kPrefLr, kPrefEpochs, 7);
  const auto rows_n = bundle_metrics(normalized.policy, bundle, kDirDecodeLen);
  const auto rows_u = bundle_metrics(unnormalized.policy, bundle, kDirDecodeLen);
  bool all = true;
  std::string detail;
  for (const char* langv : {"t1", "t2"}) {
    const double an = asr_of(rows_n, langv), au = asr_of(rows_u, langv);
    all = all && (au > an);
    detail += std::string(langv) + " " + num(au) + ">" + num(an) + " ";
  }
  return {all, "unnormalized vs normalized ASR per target: " + detail};
}

// ---------------------------------------------------------------------------
// Criterion 6: on sft-prepared (not preference-trained) models over a
// resource ladder (tier k sees 1/2^k of the pairs during preparation),
// Spearman(per-language mean RG, ASR) <= -0.5 on each of 5 seeds.
// ---------------------------------------------------------------------------
Outcome criterion_6() {
  constexpr double kBound = -0.5;
  constexpr int kBaseEpochs = 6;
  bool all = true;
  std::string detail = "rho:";
  for (std::uint64_t seed = 11; seed <= 15; ++seed) {
    CorpusManifest manifest;
    manifest.vocab_size = kDirVocab;
    manifest.n_pairs = 96;
    manifest.languages = {{"dom", Tier::dominant, 0.0, 0.0},
                          {"t1", Tier::high, 0.0, 0.0},
                          {"t2", Tier::medium, 0.0, 0.0},
                          {"t3", Tier::low, 0.0, 0.0},
                          {"t4", Tier::low, 0.0, 0.0}};
    manifest.seed = marker_safe_seed(manifest, 1000 * seed);
    const DataBundle bundle = build_bundle(manifest, kDirEvalPairs, kDirBenign);
    Corpus prep_corpus = bundle.train;
    std::erase_if(prep_corpus.examples, [&](const PreferenceExample& ex) {
      int divisor = 1;
      if (ex.language == "t1") divisor = 2;
      else if (ex.language == "t2") divisor = 4;
      else if (ex.language == "t3") divisor = 8;
      else if (ex.language == "t4") divisor = 16;
      return (ex.pair_id % divisor) != 0;
    });
    const LanguageModel prepped =
        base_prep(order1_policy(), prep_corpus, kDirBaseLr, kBaseEpochs, seed);
    const auto metrics = bundle_metrics(prepped, bundle, kDirDecodeLen);
    const RgReport report = rg_report(prepped, prepped.snapshot_reference(), bundle.eval);
    const double rho = rg_asr_correlation(report, metrics);
    all = all && (rho <= kBound);
    detail += " " + num(rho);
  }
  return {all, detail + " (all must be <= -0.5; 5 languages on an exposure ladder)"};
}

// ---------------------------------------------------------------------------
// Criterion 7: at label-flip rate 0.30, mpo's mean target ASR is strictly
// below dpo's and simpo's in >= 4 of 5 paired-seed runs.  A long, clean
// dominant preparation raises the supervision anchor well above the margins
// the pairwise baselines aim for; the quadratic loss then keeps pulling the
// targets toward that anchor while the baselines spend their remaining
// gradient enforcing margins on the 30% flipped pairs.
// ---------------------------------------------------------------------------
Outcome criterion_7() {
  constexpr int kBaseEpochs = 12;
  constexpr double kPrefLr = 0.08;
  constexpr int kPrefEpochs = 12;
  constexpr double kMpoBeta = 0.5;  // raises the target gap: RG -> RG_d / beta
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed = 21; seed <= 25; ++seed) {
    CorpusManifest manifest =
        uniform_noise_manifest(seed, /*n_pairs=*/64, /*n_targets=*/2, /*epsilon=*/0.30);
    manifest.vocab_size = kDirVocab;
    for (LanguageSpec& lang : manifest.languages)
      if (lang.tier != Tier::dominant) lang.rho = 0.0;
    manifest.seed = marker_safe_seed(manifest, 1000 * seed);
    const DataBundle bundle = build_bundle(manifest, kDirEvalPairs, kDirBenign);
    const LanguageModel prepped =
        base_prep(order1_policy(), bundle.train, kDirBaseLr, kBaseEpochs, seed);
    const auto run = [&](const ObjectiveSpec& spec) {
      const TrainResult res =
          preference_run(prepped, bundle.train, spec, kPrefLr, kPrefEpochs, seed);
      return mean_asr_excluding(bundle_metrics(res.policy, bundle, kDirDecodeLen), "dom");
    };
    ObjectiveSpec dpo;
    dpo.name = "dpo";
    ObjectiveSpec simpo;
    simpo.name = "simpo";
    const double a_mpo = run(mpo_spec(kMpoBeta));
    const double a_dpo = run(dpo);
    const double a_simpo = run(simpo);
    const bool win = a_mpo < a_dpo && a_mpo < a_simpo;
    wins += win ? 1 : 0;
    detail += " [mpo " + num(a_mpo) + " dpo " + num(a_dpo) + " simpo " + num(a_simpo) + "]";
  }
  return {wins >= 4, std::to_string(wins) + "/5 paired seeds favor mpo;" + detail};
}

// ---------------------------------------------------------------------------
// Criterion 8: removing the retention term increases dominant representation
// drift >= 2x, and with retention the dominant perplexity stays within 5% of
// the pre-preference-training value (transformer backend).
// ---------------------------------------------------------------------------
Outcome criterion_8() {
  constexpr double kBaseLr = 3e-3;
  constexpr int kBaseEpochs = 3;
  constexpr double kPrefLr = 1e-3;
  constexpr int kPrefEpochs = 3;
  const CorpusManifest manifest =
      uniform_noise_manifest(/*seed=*/41, /*n_pairs=*/16, /*n_targets=*/2, /*epsilon=*/0.10);
  DataBundle bundle = build_bundle(manifest, 12, 12);
  const LanguageModel prepped = base_prep(make_transformer_model(manifest.vocab_size, 41),
                                          bundle.train, kBaseLr, kBaseEpochs, 141);
  const double ppl_before = language_ppl(prepped, bundle, "dom");

  const TrainResult with_l2 =
      preference_run(prepped, bundle.train, mpo_spec(1.0, 1.0), kPrefLr, kPrefEpochs, 8);
  const TrainResult without_l2 =
      preference_run(prepped, bundle.train, mpo_spec(1.0, 0.0), kPrefLr, kPrefEpochs, 8);

  const double drift_with =
      representation_drift(with_l2.policy, with_l2.reference, bundle.eval, "dom");
  const double drift_without =
      representation_drift(without_l2.policy, without_l2.reference, bundle.eval, "dom");
  const double ppl_after = language_ppl(with_l2.policy, bundle, "dom");
  const double rel_ppl = std::abs(ppl_after / ppl_before - 1.0);

  const bool pass = drift_without >= 2.0 * drift_with && rel_ppl <= 0.05;
  return {pass, "drift without/with L2 = " + num(drift_without) + "/" + num(drift_with) + " = " +
                    num(drift_with > 0 ? drift_without / drift_with : INFINITY) +
                    "x (need >= 2x); dominant ppl " + num(ppl_before) + " -> " + num(ppl_after) +
                    " (" + num(100.0 * rel_ppl, "%.2f") + "%, need <= 5%)"};
}

// ---------------------------------------------------------------------------
// Criterion 9: with the trainee set held fixed at {m1, m2}, supervising from
// a noisy low-tier pivot yields strictly worse mean target ASR than
// supervising from the dominant pivot, on every seed.
// ---------------------------------------------------------------------------
Outcome criterion_9() {
  constexpr int kBaseEpochs = 12;
  constexpr double kPrefLr = 0.08;
  constexpr int kPrefEpochs = 12;
  bool all = true;
  std::string detail;
  for (std::uint64_t seed = 31; seed <= 33; ++seed) {
    CorpusManifest manifest;
    manifest.vocab_size = kDirVocab;
    manifest.n_pairs = 64;
    manifest.languages = {{"dom", Tier::dominant, 0.0, 0.0},
                          {"m1", Tier::medium, 0.0, 0.05},
                          {"m2", Tier::medium, 0.0, 0.05},
                          {"lp", Tier::low, 0.25, 0.45}};
    manifest.seed = marker_safe_seed(manifest, 1000 * seed);
    const DataBundle bundle = build_bundle(manifest, kDirEvalPairs, kDirBenign);
    const LanguageModel prepped =
        base_prep(order1_policy(), bundle.train, kDirBaseLr, kBaseEpochs, seed);
    const auto run = [&](const std::string& pivot_lang) {
      // Both arms train exactly {m1, m2}: the trainer already excludes the
      // pivot language from the trainees, and the other anchor language is
      // dropped here, so the two runs differ only in where the supervision
      // gaps come from.
      Corpus corpus = bundle.train;
      const std::string drop = pivot_lang == "lp" ? "dom" : "lp";
      std::erase_if(corpus.examples,
                    [&](const PreferenceExample& ex) { return ex.language == drop; });
      TrainConfig cfg;
      cfg.objective = mpo_spec();
      cfg.lr = kPrefLr;
      cfg.epochs = kPrefEpochs;
      cfg.seed = seed;
      cfg.eval_every = 1 << 20;
      cfg.pivot_language = pivot_lang;
      const TrainResult res = train(prepped, corpus, cfg);
      const auto rows = bundle_metrics(res.policy, bundle, kDirDecodeLen);
      return (asr_of(rows, "m1") + asr_of(rows, "m2")) / 2.0;
    };
    const double clean = run("dom");
    const double noisy = run("lp");
    all = all && (noisy > clean);
    detail += " [dom-pivot " + num(clean) + " vs lp-pivot " + num(noisy) + "]";
  }
  return {all, "mean ASR over {m1,m2}:" + detail + " (noisy pivot must be worse on every seed)"};
}

// ---------------------------------------------------------------------------
// Criterion 10: fixed supervision at 10x the dominant corpus-mean RG degrades
// dominant perplexity by > 5%; instance-level supervision does not.  The
// retention term is disabled in both arms so the comparison isolates the
// supervision constant itself.
// ---------------------------------------------------------------------------
Outcome criterion_10() {
  constexpr int kBaseEpochs = 12;
  constexpr double kPrefLr = 0.08;
  constexpr int kPrefEpochs = 6;
  CorpusManifest manifest =
      uniform_noise_manifest(/*seed=*/51, /*n_pairs=*/64, /*n_targets=*/2, /*epsilon=*/0.0);
  manifest.vocab_size = kDirVocab;
  for (LanguageSpec& lang : manifest.languages)
    if (lang.tier != Tier::dominant) lang.rho = 0.0;
  manifest.seed = marker_safe_seed(manifest, 51000);
  const DataBundle bundle = build_bundle(manifest, kDirEvalPairs, kDirBenign);
  const LanguageModel prepped =
      base_prep(order1_policy(), bundle.train, kDirBaseLr, kBaseEpochs, 151);
  const double ppl_before = language_ppl(prepped, bundle, "dom");

  // Dataset-mean reference gap over the dominant pairs of the train corpus.
  const LanguageModel reference = prepped.snapshot_reference();
  std::vector<PreferenceExample> dominant;
  for (const PreferenceExample& ex : bundle.train.examples)
    if (ex.language == "dom") dominant.push_back(ex);
  MpoConfig mean_cfg;
  mean_cfg.pivot_mode = PivotMode::dataset_mean;
  const double mean_rg = PivotTable::build(reference, dominant, mean_cfg).dataset_mean();

  ObjectiveSpec fixed = mpo_spec(1.0, 0.0);
  fixed.mpo.pivot_mode = PivotMode::fixed;
  fixed.mpo.pivot_constant = 10.0 * mean_rg;
  const ObjectiveSpec instance = mpo_spec(1.0, 0.0);  // default: per-pair supervision

  const TrainResult run_fixed =
      preference_run(prepped, bundle.train, fixed, kPrefLr, kPrefEpochs, 9);
  const TrainResult run_inst =
      preference_run(prepped, bundle.train, instance, kPrefLr, kPrefEpochs, 9);
  const double deg_fixed = language_ppl(run_fixed.policy, bundle, "dom") / ppl_before - 1.0;
  const double deg_inst = language_ppl(run_inst.policy, bundle, "dom") / ppl_before - 1.0;
  const bool pass = deg_fixed > 0.05 && deg_inst <= 0.05;
  return {pass, "dominant ppl change: fixed@10x " + num(100.0 * deg_fixed, "%.2f") +
                    "% (need > 5%), instance " + num(100.0 * deg_inst, "%.2f") +
                    "% (need <= 5%); mean RG " + num(mean_rg)};
}

// ---------------------------------------------------------------------------
// Criterion 11: on tabular order-1 models with vocab <= 8, every reward gap
// and baseline loss matches the long-double softmax-table oracle within 1e-10.
// ---------------------------------------------------------------------------
Outcome criterion_11() {
  constexpr double kTol = 1e-10;
  const int vocab = 6, order = 1;
  double worst = 0.0;
  std::string worst_tag;
  const auto track = [&](double e, const char* tag) {
    if (e > worst) {
      worst = e;
      worst_tag = tag;
    }
  };
  for (int trial = 0; trial < 50; ++trial) {
    const LanguageModel policy =
        LanguageModel::tabular(vocab, order, 0.7, 1200 + static_cast<std::uint64_t>(trial));
    const LanguageModel reference =
        LanguageModel::tabular(vocab, order, 0.7, 3400 + static_cast<std::uint64_t>(trial))
            .snapshot_reference();
    Rng rng(5600 + static_cast<std::uint64_t>(trial));
    const PreferenceExample ex = random_example(rng, vocab, trial, "t1");
    const Vec pp = testsup::to_vec(policy.params());
    const Vec rp = testsup::to_vec(reference.params());

    oracle::PairScores s;
    s.tw = oracle::score(pp, vocab, order, ex.x, ex.y_w).total;
    s.tl = oracle::score(pp, vocab, order, ex.x, ex.y_l).total;
    s.rw = oracle::score(rp, vocab, order, ex.x, ex.y_w).total;
    s.rl = oracle::score(rp, vocab, order, ex.x, ex.y_l).total;
    s.lw = static_cast<int>(ex.y_w.size());
    s.ll = static_cast<int>(ex.y_l.size());

    track(std::abs(reward_gap_simpo(policy, ex, true) - oracle::gap_normalized(s)), "gap_ln");
    track(std::abs(reward_gap_simpo(policy, ex, false) - oracle::gap_total(s)), "gap_total");
    track(std::abs(reward_gap_dpo(policy, reference, ex, 0.07) -
                   oracle::gap_ref_adjusted(s, 0.07)),
          "gap_dpo");

    const BaselineHyperparams hp;
    const double z = std::max(
        0.0, hp.beta_kto * oracle::prompt_kl_policy_ref(pp, rp, vocab, order, ex.x));
    track(std::abs(baseline_loss("sft", policy, reference, ex, hp) - oracle::sft(s)), "sft");
    track(std::abs(baseline_loss("dpo", policy, reference, ex, hp) - oracle::dpo(s, hp.beta_dpo)),
          "dpo");
    track(std::abs(baseline_loss("ipo", policy, reference, ex, hp) - oracle::ipo(s, hp.tau_ipo)),
          "ipo");
    track(std::abs(baseline_loss("rdpo", policy, reference, ex, hp) -
                   oracle::rdpo(s, hp.beta_dpo, hp.eps_rdpo)),
          "rdpo");
    track(std::abs(baseline_loss("cpo", policy, reference, ex, hp) -
                   oracle::cpo(s, hp.beta_dpo, hp.lambda_cpo)),
          "cpo");
    track(std::abs(baseline_loss("kto", policy, reference, ex, hp) -
                   oracle::kto(s, hp.beta_kto, hp.lambda_w, hp.lambda_l, z)),
          "kto");
    track(std::abs(baseline_loss("orpo", policy, reference, ex, hp) -
                   oracle::orpo(s, hp.lambda_orpo)),
          "orpo");
    track(std::abs(baseline_loss("r_dpo", policy, reference, ex, hp) -
                   oracle::r_dpo(s, hp.beta_dpo, hp.alpha_rdpo_len)),
          "r_dpo");
    track(std::abs(baseline_loss("simpo", policy, reference, ex, hp) -
                   oracle::simpo(s, hp.beta_simpo, hp.gamma_simpo)),
          "simpo");

    // The gap-matching term against the same oracle scores.
    MpoConfig cfg;
    cfg.beta = 1.4;
    const PreferenceExample piv = random_example(rng, vocab, trial, "dom");
    oracle::PairScores ps;
    ps.tw = oracle::score(rp, vocab, order, piv.x, piv.y_w).total;
    ps.tl = oracle::score(rp, vocab, order, piv.x, piv.y_l).total;
    ps.lw = static_cast<int>(piv.y_w.size());
    ps.ll = static_cast<int>(piv.y_l.size());
    track(std::abs(mpo_l1(policy, reference, ex, piv, cfg) -
                   oracle::mpo_l1(oracle::gap_normalized(s), oracle::gap_normalized(ps),
                                  cfg.beta)),
          "mpo_l1");
  }
  return {worst < kTol, "max |library - oracle| " + num(worst) + " (worst " + worst_tag +
                            "), tolerance 1e-10, 50 random pairs, vocab 6"};
}

// ---------------------------------------------------------------------------
// Criterion 12: identical configs and seeds produce byte-identical
// checkpoints, run logs, and metrics files.
// ---------------------------------------------------------------------------
Outcome criterion_12() {
  const CorpusManifest manifest = small_lengths(
      uniform_noise_manifest(/*seed=*/61, /*n_pairs=*/12, /*n_targets=*/2, /*epsilon=*/0.10));
  const DataBundle bundle = build_bundle(manifest, 8, 8);
  const LanguageModel init = LanguageModel::tabular(manifest.vocab_size, 1, 0.2, 9);
  TrainConfig cfg;
  cfg.objective = mpo_spec();
  cfg.batch_size = 4;
  cfg.epochs = 2;
  cfg.lr = 0.03;
  cfg.seed = 5;

  const auto run = [&](const std::string& tag) {
    const TrainResult res = train(init, bundle.train, cfg);
    const auto ckpt = kTmp / (tag + "_checkpoint.bin");
    const auto log = kTmp / (tag + "_run_log.csv");
    const auto metrics = kTmp / (tag + "_metrics.csv");
    res.policy.save_checkpoint(ckpt.string());
    write_run_log(res.log, log.string());
    write_metrics_csv(bundle_metrics(res.policy, bundle), metrics.string());
    return std::array<std::string, 3>{slurp(ckpt), slurp(log), slurp(metrics)};
  };
  const auto a = run("rep_a");
  const auto b = run("rep_b");
  const bool pass = !a[0].empty() && a[0] == b[0] && a[1] == b[1] && a[2] == b[2];
  return {pass, "checkpoint " + std::to_string(a[0].size()) + "B, run log " +
                    std::to_string(a[1].size()) + "B, metrics " + std::to_string(a[2].size()) +
                    "B: " + (pass ? "all byte-identical across two runs" : "MISMATCH")};
}

}  // namespace

int main() {
  std::filesystem::create_directories(kTmp);
  const auto t0 = std::chrono::steady_clock::now();
  struct Entry {
    int id;
    const char* name;
    Outcome (*fn)();
  };
  const Entry entries[] = {
      {1, "gradient correctness", criterion_1},
      {2, "closed-form update", criterion_2},
      {3, "zero-loss fixed point", criterion_3},
      {4, "gradient direction", criterion_4},
      {5, "length-bias demonstration", criterion_5},
      {6, "inverse RG-ASR relationship", criterion_6},
      {7, "noise robustness", criterion_7},
      {8, "retention ablation", criterion_8},
      {9, "pivot ablation", criterion_9},
      {10, "fixed-constant ablation", criterion_10},
      {11, "oracle equivalence", criterion_11},
      {12, "determinism", criterion_12},
  };
  for (const Entry& e : entries) {
    const auto c0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = e.fn();
    } catch (const std::exception& ex) {
      o = {false, std::string("exception: ") + ex.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - c0).count();
    report(e.id, e.name, o, secs);
  }
  const double total =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%d/12 criteria passed in %.1fs\n", 12 - g_failures, total);
  std::error_code ec;
  std::filesystem::remove_all(kTmp, ec);
  return g_failures == 0 ? 0 : 1;
}
