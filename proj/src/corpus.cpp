// SPDX-License-Identifier: Apache-2.0

#include "mpo/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace mpo {

using nlohmann::json;

std::string tier_name(Tier t) {
  switch (t) {
    case Tier::dominant: return "dominant";
    case Tier::high: return "high";
    case Tier::medium: return "medium";
    case Tier::low: return "low";
  }
  throw InputError("unknown tier enum value");
}

Tier tier_from_name(const std::string& name) {
  if (name == "dominant") return Tier::dominant;
  if (name == "high") return Tier::high;
  if (name == "medium") return Tier::medium;
  if (name == "low") return Tier::low;
  throw ParseError("unknown tier name '" + name + "' (expected dominant|high|medium|low)");
}

// ------------------------------------------------------------- manifest ----

void CorpusManifest::validate() const {
  if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
  if (n_pairs < 0) throw ConfigError("n_pairs must be >= 0");
  auto in_vocab = [this](Token t) { return t >= 0 && t < vocab_size; };
  for (Token t : refusal_markers)
    if (!in_vocab(t)) throw ConfigError("refusal marker out of vocabulary");
  for (Token t : compliance_markers)
    if (!in_vocab(t)) throw ConfigError("compliance marker out of vocabulary");
  for (Token t : trigger_tokens)
    if (!in_vocab(t)) throw ConfigError("trigger token out of vocabulary");
  if (refusal_markers.empty() || compliance_markers.empty())
    throw ConfigError("marker sets must be nonempty");
  if (trigger_tokens.empty()) throw ConfigError("trigger set must be nonempty");
  std::set<Token> reserved;
  for (Token t : refusal_markers) reserved.insert(t);
  const std::size_t n_refusal = reserved.size();
  for (Token t : compliance_markers) reserved.insert(t);
  if (reserved.size() != n_refusal + compliance_markers.size())
    throw ConfigError("refusal and compliance marker sets must be disjoint");
  for (Token t : trigger_tokens) reserved.insert(t);
  if (static_cast<int>(reserved.size()) >= vocab_size)
    throw ConfigError("vocab too small to host both marker sets, the trigger set, and content tokens (vocab_size=" +
                      std::to_string(vocab_size) + ", reserved=" + std::to_string(reserved.size()) + ")");
  int n_dominant = 0;
  std::set<std::string> ids;
  for (const auto& l : languages) {
    if (l.id.empty()) throw ConfigError("language id must be nonempty");
    if (!ids.insert(l.id).second) throw ConfigError("duplicate language id '" + l.id + "'");
    if (l.rho < 0.0 || l.rho > 1.0) throw ConfigError("rho out of [0,1] for language '" + l.id + "'");
    if (l.epsilon < 0.0 || l.epsilon > 1.0)
      throw ConfigError("epsilon out of [0,1] for language '" + l.id + "'");
    if (l.tier == Tier::dominant) {
      ++n_dominant;
      if (l.rho != 0.0 || l.epsilon != 0.0)
        throw ConfigError("dominant language must have rho = 0 and epsilon = 0");
    }
  }
  if (languages.empty()) throw ConfigError("manifest declares no languages");
  if (n_dominant != 1) throw ConfigError("manifest must declare exactly one dominant language");
  if (prompt_len_min < 3 || prompt_len_max < prompt_len_min)
    throw ConfigError("prompt length range invalid (min >= 3 to fit the trigger suffix)");
  if (safe_len_min < 1 || safe_len_max < safe_len_min)
    throw ConfigError("safe response length range invalid");
  if (unsafe_len_min < 1 || unsafe_len_max < unsafe_len_min)
    throw ConfigError("unsafe response length range invalid");
}

const LanguageSpec& CorpusManifest::dominant_language() const {
  for (const auto& l : languages)
    if (l.tier == Tier::dominant) return l;
  throw ConfigError("manifest has no dominant language");
}

bool CorpusManifest::has_language(const std::string& id) const {
  for (const auto& l : languages)
    if (l.id == id) return true;
  return false;
}

const LanguageSpec& CorpusManifest::language(const std::string& id) const {
  for (const auto& l : languages)
    if (l.id == id) return l;
  throw InputError("unknown language id '" + id + "'");
}

std::vector<Token> CorpusManifest::cipher_for(const std::string& lang_id) const {
  std::vector<Token> perm(static_cast<std::size_t>(vocab_size));
  for (int i = 0; i < vocab_size; ++i) perm[static_cast<std::size_t>(i)] = i;
  if (language(lang_id).tier == Tier::dominant) return perm;  // identity
  Rng rng = Rng::derive(seed, {"cipher", lang_id});
  for (int i = vocab_size - 1; i > 0; --i) {
    const auto j = static_cast<int>(rng.bounded(static_cast<std::uint64_t>(i) + 1));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  return perm;
}

std::vector<Token> CorpusManifest::invert_cipher(const std::vector<Token>& cipher) {
  std::vector<Token> inv(cipher.size());
  for (std::size_t i = 0; i < cipher.size(); ++i)
    inv[static_cast<std::size_t>(cipher[i])] = static_cast<Token>(i);
  return inv;
}

std::vector<Token> CorpusManifest::refusal_markers_in(const std::string& lang_id) const {
  const auto cipher = cipher_for(lang_id);
  std::vector<Token> out;
  out.reserve(refusal_markers.size());
  for (Token t : refusal_markers) out.push_back(cipher[static_cast<std::size_t>(t)]);
  return out;
}

std::vector<Token> CorpusManifest::compliance_markers_in(const std::string& lang_id) const {
  const auto cipher = cipher_for(lang_id);
  std::vector<Token> out;
  out.reserve(compliance_markers.size());
  for (Token t : compliance_markers) out.push_back(cipher[static_cast<std::size_t>(t)]);
  return out;
}

// ------------------------------------------------------------ generation ---

namespace {

// Content tokens: everything not reserved for markers or triggers.
std::vector<Token> content_tokens(const CorpusManifest& m) {
  std::set<Token> reserved(m.refusal_markers.begin(), m.refusal_markers.end());
  reserved.insert(m.compliance_markers.begin(), m.compliance_markers.end());
  reserved.insert(m.trigger_tokens.begin(), m.trigger_tokens.end());
  std::vector<Token> out;
  for (Token t = 0; t < m.vocab_size; ++t)
    if (!reserved.count(t)) out.push_back(t);
  return out;
}

Token pick(const std::vector<Token>& pool, Rng& rng) {
  return pool[rng.bounded(pool.size())];
}

// Response body: opening marker from `markers`, then a half/half mix of the
// marker family and content tokens.
TokenSeq make_response(const std::vector<Token>& markers, const std::vector<Token>& content,
                       int len, Rng& rng) {
  TokenSeq out;
  out.reserve(static_cast<std::size_t>(len));
  out.push_back(pick(markers, rng));
  for (int i = 1; i < len; ++i)
    out.push_back(rng.bernoulli(0.5) ? pick(markers, rng) : pick(content, rng));
  return out;
}

}  // namespace

std::vector<PreferenceExample> generate_dominant(const CorpusManifest& manifest) {
  manifest.validate();
  const auto content = content_tokens(manifest);
  const std::string dom_id = manifest.dominant_language().id;
  Rng rng = Rng::derive(manifest.seed, {"gen", manifest.split});
  std::vector<PreferenceExample> out;
  out.reserve(static_cast<std::size_t>(manifest.n_pairs));
  for (int pair = 0; pair < manifest.n_pairs; ++pair) {
    PreferenceExample ex;
    ex.pair_id = pair;
    ex.language = dom_id;
    const int plen = rng.uniform_int(manifest.prompt_len_min, manifest.prompt_len_max);
    ex.x.reserve(static_cast<std::size_t>(plen));
    for (int i = 0; i < plen - 2; ++i) ex.x.push_back(pick(content, rng));
    // Harm-topic suffix: two trigger tokens shared between train and held-out
    // prompts, so refusal behaviour generalizes to unseen prompts.
    ex.x.push_back(pick(manifest.trigger_tokens, rng));
    ex.x.push_back(pick(manifest.trigger_tokens, rng));
    const int wlen = rng.uniform_int(manifest.safe_len_min, manifest.safe_len_max);
    const int llen = rng.uniform_int(manifest.unsafe_len_min, manifest.unsafe_len_max);
    ex.y_w = make_response(manifest.refusal_markers, content, wlen, rng);
    ex.y_l = make_response(manifest.compliance_markers, content, llen, rng);
    out.push_back(std::move(ex));
  }
  return out;
}

PreferenceExample translate(const PreferenceExample& example, const LanguageSpec& lang,
                            const CorpusManifest& manifest, Rng& rng) {
  if (lang.tier == Tier::dominant)
    throw InputError("translate target must not be the dominant language");
  const auto cipher = manifest.cipher_for(lang.id);
  auto map_seq = [&](const TokenSeq& in, bool noisy) {
    TokenSeq out;
    out.reserve(in.size());
    for (Token t : in) {
      if (noisy && lang.rho > 0.0 && rng.bernoulli(lang.rho))
        out.push_back(static_cast<Token>(rng.bounded(static_cast<std::uint64_t>(manifest.vocab_size))));
      else
        out.push_back(cipher[static_cast<std::size_t>(t)]);
    }
    return out;
  };
  PreferenceExample out;
  out.pair_id = example.pair_id;
  out.language = lang.id;
  out.x = map_seq(example.x, manifest.noise_x);
  out.y_w = map_seq(example.y_w, manifest.noise_y_w);
  out.y_l = map_seq(example.y_l, manifest.noise_y_l);
  out.flipped = lang.epsilon > 0.0 && rng.bernoulli(lang.epsilon);
  if (out.flipped) std::swap(out.y_w, out.y_l);
  return out;
}

Corpus build_corpus(const CorpusManifest& manifest, ExecMode mode) {
  manifest.validate();
  Corpus corpus;
  corpus.manifest = manifest;
  const auto dominant = generate_dominant(manifest);

  std::vector<const LanguageSpec*> targets;
  for (const auto& l : manifest.languages)
    if (l.tier != Tier::dominant) targets.push_back(&l);

  std::vector<std::vector<PreferenceExample>> blocks(targets.size());
  for_each_index(targets.size(), mode, [&](std::size_t i) {
    const LanguageSpec& lang = *targets[i];
    Rng rng = Rng::derive(manifest.seed, {"translate", manifest.split, lang.id});
    auto& block = blocks[i];
    block.reserve(dominant.size());
    for (const auto& ex : dominant) block.push_back(translate(ex, lang, manifest, rng));
  });

  corpus.examples = dominant;
  for (auto& block : blocks)
    for (auto& ex : block) corpus.examples.push_back(std::move(ex));
  return corpus;
}

std::vector<TokenSeq> generate_benign(const CorpusManifest& manifest, const std::string& lang_id,
                                      int n_sequences, int len_min, int len_max) {
  manifest.validate();
  const auto content = content_tokens(manifest);
  const auto cipher = manifest.cipher_for(lang_id);
  Rng rng = Rng::derive(manifest.seed, {"benign", lang_id});
  std::vector<TokenSeq> out;
  out.reserve(static_cast<std::size_t>(n_sequences));
  for (int i = 0; i < n_sequences; ++i) {
    const int len = rng.uniform_int(len_min, len_max);
    TokenSeq seq;
    seq.reserve(static_cast<std::size_t>(len));
    for (int j = 0; j < len; ++j) seq.push_back(cipher[static_cast<std::size_t>(pick(content, rng))]);
    out.push_back(std::move(seq));
  }
  return out;
}

// ------------------------------------------------------------------ corpus --

std::vector<const PreferenceExample*> Corpus::in_language(const std::string& id) const {
  std::vector<const PreferenceExample*> out;
  for (const auto& ex : examples)
    if (ex.language == id) out.push_back(&ex);
  return out;
}

std::map<int, const PreferenceExample*> Corpus::pairs_of(const std::string& id) const {
  std::map<int, const PreferenceExample*> out;
  for (const auto& ex : examples) {
    if (ex.language != id) continue;
    if (!out.emplace(ex.pair_id, &ex).second)
      throw PairingError("duplicate pair_id " + std::to_string(ex.pair_id) + " in language '" + id + "'");
  }
  return out;
}

// --------------------------------------------------------------------- io --

namespace {

json manifest_to_json(const CorpusManifest& m) {
  json j;
  j["vocab_size"] = m.vocab_size;
  j["seed"] = m.seed;
  j["n_pairs"] = m.n_pairs;
  j["split"] = m.split;
  j["refusal_markers"] = m.refusal_markers;
  j["compliance_markers"] = m.compliance_markers;
  j["trigger_tokens"] = m.trigger_tokens;
  j["prompt_len"] = {m.prompt_len_min, m.prompt_len_max};
  j["safe_len"] = {m.safe_len_min, m.safe_len_max};
  j["unsafe_len"] = {m.unsafe_len_min, m.unsafe_len_max};
  j["noise_fields"] = json::object({{"x", m.noise_x}, {"y_w", m.noise_y_w}, {"y_l", m.noise_y_l}});
  json langs = json::array();
  for (const auto& l : m.languages)
    langs.push_back({{"id", l.id}, {"tier", tier_name(l.tier)}, {"rho", l.rho}, {"epsilon", l.epsilon}});
  j["languages"] = langs;
  return j;
}

CorpusManifest manifest_from_json(const json& j) {
  CorpusManifest m;
  try {
    m.vocab_size = j.at("vocab_size").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.n_pairs = j.at("n_pairs").get<int>();
    if (j.contains("split")) m.split = j.at("split").get<std::string>();
    if (j.contains("refusal_markers")) m.refusal_markers = j.at("refusal_markers").get<std::vector<Token>>();
    if (j.contains("compliance_markers"))
      m.compliance_markers = j.at("compliance_markers").get<std::vector<Token>>();
    if (j.contains("trigger_tokens")) m.trigger_tokens = j.at("trigger_tokens").get<std::vector<Token>>();
    if (j.contains("prompt_len")) {
      m.prompt_len_min = j.at("prompt_len").at(0).get<int>();
      m.prompt_len_max = j.at("prompt_len").at(1).get<int>();
    }
    if (j.contains("safe_len")) {
      m.safe_len_min = j.at("safe_len").at(0).get<int>();
      m.safe_len_max = j.at("safe_len").at(1).get<int>();
    }
    if (j.contains("unsafe_len")) {
      m.unsafe_len_min = j.at("unsafe_len").at(0).get<int>();
      m.unsafe_len_max = j.at("unsafe_len").at(1).get<int>();
    }
    if (j.contains("noise_fields")) {
      const auto& nf = j.at("noise_fields");
      m.noise_x = nf.value("x", true);
      m.noise_y_w = nf.value("y_w", true);
      m.noise_y_l = nf.value("y_l", true);
    }
    for (const auto& lj : j.at("languages")) {
      LanguageSpec l;
      l.id = lj.at("id").get<std::string>();
      l.tier = tier_from_name(lj.at("tier").get<std::string>());
      l.rho = lj.at("rho").get<double>();
      l.epsilon = lj.at("epsilon").get<double>();
      m.languages.push_back(std::move(l));
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("manifest field error: ") + e.what());
  }
  m.validate();
  return m;
}

}  // namespace

std::string CorpusManifest::to_json_string() const { return manifest_to_json(*this).dump(2); }

CorpusManifest CorpusManifest::from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("manifest parse error: ") + e.what());
  }
  return manifest_from_json(j);
}

void write_manifest(const CorpusManifest& manifest, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open manifest path for writing: " + path);
  out << manifest.to_json_string() << "\n";
  if (!out) throw IoError("write failed: " + path);
}

CorpusManifest read_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return CorpusManifest::from_json_string(buf.str());
}

void write_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open corpus path for writing: " + path);
  for (const auto& ex : corpus.examples) {
    json j;
    j["pair_id"] = ex.pair_id;
    j["language"] = ex.language;
    j["x"] = ex.x;
    j["y_w"] = ex.y_w;
    j["y_l"] = ex.y_l;
    j["flipped"] = ex.flipped;
    out << j.dump() << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

std::vector<PreferenceExample> read_corpus_records(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus: " + path);
  std::vector<PreferenceExample> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      PreferenceExample ex;
      ex.pair_id = j.at("pair_id").get<int>();
      ex.language = j.at("language").get<std::string>();
      ex.x = j.at("x").get<TokenSeq>();
      ex.y_w = j.at("y_w").get<TokenSeq>();
      ex.y_l = j.at("y_l").get<TokenSeq>();
      ex.flipped = j.at("flipped").get<bool>();
      out.push_back(std::move(ex));
    } catch (const json::exception& e) {
      throw ParseError("corpus record error at " + path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace mpo
