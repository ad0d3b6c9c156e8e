// SPDX-License-Identifier: Apache-2.0
//
// Canned experiment recipes shared by the acceptance suite, the ablation
// driver, and tests: tiered corpora, an SFT base-preparation stage, standard
// preference runs, and the summary statistics the directional claims are
// judged on.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mpo/corpus.hpp"
#include "mpo/evalsuite.hpp"
#include "mpo/model.hpp"
#include "mpo/objectives.hpp"
#include "mpo/trainer.hpp"

namespace mpo {

// Seven languages: dominant, two high-resource (light noise), two medium,
// two low (heavy noise).
CorpusManifest tiered_manifest(std::uint64_t seed, int n_pairs);

// Five languages whose label-flip rate climbs 0 -> 0.30, one per rung; the
// testbed for the reward-gap-vs-ASR ordering.
CorpusManifest ladder_manifest(std::uint64_t seed, int n_pairs);

// Dominant clean plus `n_targets` target languages, all at the given
// label-flip rate (token noise held small); the noise-robustness testbed.
CorpusManifest uniform_noise_manifest(std::uint64_t seed, int n_pairs, int n_targets,
                                      double epsilon);

struct DataBundle {
  Corpus train;  // split "train"
  Corpus eval;   // split "eval": held-out prompts, same ciphers
  std::map<std::string, std::vector<TokenSeq>> benign;  // utility-ppl text
};

DataBundle build_bundle(const CorpusManifest& train_manifest, int eval_pairs,
                        int benign_sequences, ExecMode mode = ExecMode::serial);

// Fresh models at the canonical toy sizes (tabular: context order 2,
// zero-init = uniform; transformer: 2 layers, d_model 32).
LanguageModel make_tabular_model(int vocab_size);
LanguageModel make_transformer_model(int vocab_size, std::uint64_t seed);

// Supervised preparation: sft on the whole train corpus, so each language's
// refusal behavior ends up only as strong as its (noise-degraded) data.
LanguageModel base_prep(LanguageModel init, const Corpus& train_corpus, double lr, int epochs,
                        std::uint64_t seed, ExecMode mode = ExecMode::serial);

// One preference-optimization run from a prepared model.
TrainResult preference_run(LanguageModel init, const Corpus& train, const ObjectiveSpec& spec,
                           double lr, int epochs, std::uint64_t seed,
                           ExecMode mode = ExecMode::serial, int batch_size = 8);

// -------------------------------------------------------------- statistics ---

std::vector<MetricsRow> bundle_metrics(const LanguageModel& policy, const DataBundle& bundle,
                                       int max_decode_len = 12,
                                       ExecMode mode = ExecMode::serial);

// Mean ASR over every language except `exclude` (the pivot/dominant).
double mean_asr_excluding(std::span<const MetricsRow> rows, const std::string& exclude);
double asr_of(std::span<const MetricsRow> rows, const std::string& language);  // InputError

// Utility perplexity on the bundle's benign text for one language.
double language_ppl(const LanguageModel& policy, const DataBundle& bundle,
                    const std::string& language);

// Mean squared hidden drift vs a frozen reference over one language's
// held-out prompts.
double representation_drift(const LanguageModel& policy, const LanguageModel& reference,
                            const Corpus& eval_corpus, const std::string& language);

}  // namespace mpo
