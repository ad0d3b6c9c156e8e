// SPDX-License-Identifier: Apache-2.0

#include "mpo/experiments.hpp"

#include <algorithm>

namespace mpo {

namespace {

LanguageSpec lang(std::string id, Tier tier, double rho, double epsilon) {
  LanguageSpec spec;
  spec.id = std::move(id);
  spec.tier = tier;
  spec.rho = rho;
  spec.epsilon = epsilon;
  return spec;
}

}  // namespace

CorpusManifest tiered_manifest(std::uint64_t seed, int n_pairs) {
  CorpusManifest m;
  m.seed = seed;
  m.n_pairs = n_pairs;
  m.languages = {
      lang("dom", Tier::dominant, 0.0, 0.0), lang("hi1", Tier::high, 0.01, 0.02),
      lang("hi2", Tier::high, 0.02, 0.04),   lang("md1", Tier::medium, 0.04, 0.10),
      lang("md2", Tier::medium, 0.05, 0.12), lang("lo1", Tier::low, 0.08, 0.22),
      lang("lo2", Tier::low, 0.10, 0.26),
  };
  return m;
}

CorpusManifest ladder_manifest(std::uint64_t seed, int n_pairs) {
  CorpusManifest m;
  m.seed = seed;
  m.n_pairs = n_pairs;
  m.languages = {
      lang("dom", Tier::dominant, 0.0, 0.0), lang("t1", Tier::high, 0.01, 0.06),
      lang("t2", Tier::medium, 0.03, 0.14),  lang("t3", Tier::low, 0.05, 0.22),
      lang("t4", Tier::low, 0.08, 0.30),
  };
  return m;
}

CorpusManifest uniform_noise_manifest(std::uint64_t seed, int n_pairs, int n_targets,
                                      double epsilon) {
  if (n_targets < 1) throw ConfigError("uniform_noise_manifest requires >= 1 target language");
  CorpusManifest m;
  m.seed = seed;
  m.n_pairs = n_pairs;
  m.languages = {lang("dom", Tier::dominant, 0.0, 0.0)};
  for (int i = 0; i < n_targets; ++i)
    m.languages.push_back(lang("t" + std::to_string(i + 1), Tier::low, 0.02, epsilon));
  return m;
}

DataBundle build_bundle(const CorpusManifest& train_manifest, int eval_pairs,
                        int benign_sequences, ExecMode mode) {
  DataBundle bundle;
  bundle.train = build_corpus(train_manifest, mode);
  CorpusManifest eval_manifest = train_manifest;
  eval_manifest.split = "eval";
  eval_manifest.n_pairs = eval_pairs;
  bundle.eval = build_corpus(eval_manifest, mode);
  for (const LanguageSpec& l : train_manifest.languages)
    bundle.benign.emplace(l.id, generate_benign(train_manifest, l.id, benign_sequences));
  return bundle;
}

LanguageModel make_tabular_model(int vocab_size) {
  return LanguageModel::tabular(vocab_size, /*context_order=*/2);
}

LanguageModel make_transformer_model(int vocab_size, std::uint64_t seed) {
  return LanguageModel::transformer(vocab_size, TransformerConfig{}, seed);
}

LanguageModel base_prep(LanguageModel init, const Corpus& train_corpus, double lr, int epochs,
                        std::uint64_t seed, ExecMode mode) {
  TrainConfig cfg;
  cfg.objective.name = "sft";
  cfg.lr = lr;
  cfg.epochs = epochs;
  cfg.seed = seed;
  cfg.eval_every = 1 << 20;  // only first/last rows matter here
  cfg.exec = mode;
  return train(std::move(init), train_corpus, cfg).policy;
}

TrainResult preference_run(LanguageModel init, const Corpus& train_corpus,
                           const ObjectiveSpec& spec, double lr, int epochs, std::uint64_t seed,
                           ExecMode mode, int batch_size) {
  TrainConfig cfg;
  cfg.objective = spec;
  cfg.lr = lr;
  cfg.epochs = epochs;
  cfg.seed = seed;
  cfg.batch_size = batch_size;
  cfg.eval_every = 1 << 20;
  cfg.exec = mode;
  return train(std::move(init), train_corpus, cfg);
}

std::vector<MetricsRow> bundle_metrics(const LanguageModel& policy, const DataBundle& bundle,
                                       int max_decode_len, ExecMode mode) {
  return evaluate_model(policy, bundle.eval, bundle.benign, max_decode_len, mode);
}

double mean_asr_excluding(std::span<const MetricsRow> rows, const std::string& exclude) {
  double sum = 0.0;
  int n = 0;
  for (const MetricsRow& r : rows) {
    if (r.language == exclude) continue;
    sum += r.asr;
    ++n;
  }
  if (n == 0) throw InputError("mean_asr_excluding: no rows left after exclusion");
  return sum / static_cast<double>(n);
}

double asr_of(std::span<const MetricsRow> rows, const std::string& language) {
  for (const MetricsRow& r : rows)
    if (r.language == language) return r.asr;
  throw InputError("no metrics row for language '" + language + "'");
}

double language_ppl(const LanguageModel& policy, const DataBundle& bundle,
                    const std::string& language) {
  const auto it = bundle.benign.find(language);
  if (it == bundle.benign.end() || it->second.empty())
    throw InputError("no benign text for language '" + language + "'");
  return utility_ppl(policy, it->second);
}

double representation_drift(const LanguageModel& policy, const LanguageModel& reference,
                            const Corpus& eval_corpus, const std::string& language) {
  const std::vector<const PreferenceExample*> examples = eval_corpus.in_language(language);
  if (examples.empty()) throw InputError("no examples for language '" + language + "'");
  double sum = 0.0;
  for (const PreferenceExample* ex : examples) {
    const Vec h = policy.hidden_at_last(ex->x);
    const Vec h_ref = reference.hidden_at_last(ex->x);
    if (h.size() != h_ref.size()) throw CompatError("hidden dimension mismatch");
    for (std::size_t i = 0; i < h.size(); ++i) sum += (h[i] - h_ref[i]) * (h[i] - h_ref[i]);
  }
  return sum / static_cast<double>(examples.size());
}

}  // namespace mpo
