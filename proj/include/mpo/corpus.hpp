// SPDX-License-Identifier: Apache-2.0
//
// Synthetic multilingual safety-preference corpora.
//
// A corpus is built in a shared token vocabulary.  The dominant language is
// the raw token space; every target language is a bijective token cipher of
// it, applied with token-noise rate rho (a token survives ciphering with
// probability 1-rho, otherwise it is replaced by a uniformly random token)
// and label-flip rate epsilon (the preferred/dispreferred roles of a pair are
// swapped).  Prompts end with a two-token "topic" suffix drawn from a small
// trigger set so that held-out prompts share decode contexts with training
// prompts; safe responses open with a refusal marker, unsafe responses with a
// compliance marker.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mpo/common.hpp"
#include "mpo/parallel.hpp"
#include "mpo/rng.hpp"

namespace mpo {

enum class Tier { dominant, high, medium, low };

std::string tier_name(Tier t);
Tier tier_from_name(const std::string& name);

struct LanguageSpec {
  std::string id;
  Tier tier = Tier::high;
  double rho = 0.0;      // token-noise rate in [0,1]
  double epsilon = 0.0;  // label-flip rate in [0,1]
};

struct PreferenceExample {
  int pair_id = 0;
  std::string language;
  TokenSeq x;    // prompt
  TokenSeq y_w;  // preferred (safe) response
  TokenSeq y_l;  // dispreferred (unsafe) response
  bool flipped = false;
};

struct CorpusManifest {
  int vocab_size = 64;
  std::uint64_t seed = 1;
  int n_pairs = 100;
  std::string split = "train";  // independent stream per split, same ciphers
  std::vector<LanguageSpec> languages;
  std::vector<Token> refusal_markers = {1, 2, 3};
  std::vector<Token> compliance_markers = {4, 5, 6};
  std::vector<Token> trigger_tokens = {7, 8, 9, 10, 11, 12, 13, 14};
  // Length ranges, inclusive.
  int prompt_len_min = 4, prompt_len_max = 16;
  int safe_len_min = 3, safe_len_max = 12;
  int unsafe_len_min = 8, unsafe_len_max = 24;
  // Which fields receive token noise during translation.
  bool noise_x = true, noise_y_w = true, noise_y_l = true;

  void validate() const;  // throws ConfigError
  const LanguageSpec& dominant_language() const;
  const LanguageSpec& language(const std::string& id) const;
  bool has_language(const std::string& id) const;

  // Deterministic bijective permutation for a language; identity for the
  // dominant language.  Derived from (seed, "cipher", id) only, so all splits
  // of one manifest seed speak the same languages.
  std::vector<Token> cipher_for(const std::string& lang_id) const;
  static std::vector<Token> invert_cipher(const std::vector<Token>& cipher);

  // Marker sets as seen in a given language (cipher image of the dominant
  // sets).  Used by response classification.
  std::vector<Token> refusal_markers_in(const std::string& lang_id) const;
  std::vector<Token> compliance_markers_in(const std::string& lang_id) const;

  std::string to_json_string() const;
  static CorpusManifest from_json_string(const std::string& text);
};

struct Corpus {
  CorpusManifest manifest;
  std::vector<PreferenceExample> examples;  // dominant block first, then each
                                            // target language in manifest order

  std::vector<const PreferenceExample*> in_language(const std::string& id) const;
  // pair_id -> example for one language; throws PairingError on absent pair.
  std::map<int, const PreferenceExample*> pairs_of(const std::string& id) const;
};

// --- generation ------------------------------------------------------------

// Dominant-language pairs; deterministic in (manifest.seed, manifest.split).
std::vector<PreferenceExample> generate_dominant(const CorpusManifest& manifest);

// Cipher + noise translation of one dominant example into lang.
PreferenceExample translate(const PreferenceExample& example, const LanguageSpec& lang,
                            const CorpusManifest& manifest, Rng& rng);

// Full corpus (dominant + all target languages).  Per-language translation
// derives an independent stream from (seed, split, language id) and may run
// in parallel; output order is fixed by the manifest.
Corpus build_corpus(const CorpusManifest& manifest, ExecMode mode = ExecMode::serial);

// Benign continuation text for the utility-perplexity proxy: content-token
// sequences (no markers, no triggers), ciphered per language.  Structurally
// disjoint from preference prompts, which always end in trigger tokens.
std::vector<TokenSeq> generate_benign(const CorpusManifest& manifest,
                                      const std::string& lang_id, int n_sequences,
                                      int len_min = 8, int len_max = 20);

// --- file I/O ---------------------------------------------------------------

void write_corpus(const Corpus& corpus, const std::string& path);
std::vector<PreferenceExample> read_corpus_records(const std::string& path);
void write_manifest(const CorpusManifest& manifest, const std::string& path);
CorpusManifest read_manifest(const std::string& path);

}  // namespace mpo
