// SPDX-License-Identifier: Apache-2.0

#include "mpo/commands.hpp"

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "nlohmann/json.hpp"

#include "mpo/diagnostics.hpp"
#include "mpo/experiments.hpp"
#include "mpo/trainer.hpp"

namespace mpo::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// ------------------------------------------------------------- key table ---

const std::vector<ConfigKey>& train_config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"objective", KeyKind::text, "mpo or a baseline name (sft, dpo, ...)"},
      {"corpus", KeyKind::text, "path to the training corpus (JSONL)"},
      {"manifest", KeyKind::text, "path to the corpus manifest (JSON)"},
      {"output_dir", KeyKind::text, "run directory for all artifacts"},
      {"backend", KeyKind::text, "tabular or transformer"},
      {"init_checkpoint", KeyKind::text, "optional checkpoint to start from"},
      {"batch_size", KeyKind::integer, "examples per optimizer step"},
      {"epochs", KeyKind::integer, "passes over the corpus"},
      {"lr", KeyKind::real, "peak learning rate"},
      {"warmup_fraction", KeyKind::real, "linear warmup fraction of total steps"},
      {"seed", KeyKind::unsigned64, "run seed (batch order)"},
      {"eval_every", KeyKind::integer, "run-log row frequency in steps"},
      {"grad_clip", KeyKind::boolean, "clip gradient to a global norm"},
      {"grad_clip_norm", KeyKind::real, "global-norm clip threshold"},
      {"mixed_language_batches", KeyKind::boolean, "mix languages per batch"},
      {"pivot_language", KeyKind::text, "mpo pivot language (default: dominant)"},
      {"exec", KeyKind::text, "serial or parallel"},
      {"beta", KeyKind::real, "mpo gap-match scale"},
      {"retention_weight", KeyKind::real, "mpo retention term weight"},
      {"length_normalize", KeyKind::boolean, "per-token (true) vs total logprobs"},
      {"retention_mode", KeyKind::text, "representation, kl, or none"},
      {"pivot_mode", KeyKind::text, "instance, dataset_mean, or fixed"},
      {"pivot_constant", KeyKind::real, "anchor gap for pivot_mode=fixed"},
      {"hidden_position", KeyKind::text, "prompt_end or sequence_end"},
      {"beta_dpo", KeyKind::real, "beta for dpo/rdpo/cpo/r_dpo"},
      {"tau_ipo", KeyKind::real, "ipo tau"},
      {"eps_rdpo", KeyKind::real, "rdpo label-noise rate"},
      {"lambda_cpo", KeyKind::real, "cpo winner-NLL weight"},
      {"lambda_w", KeyKind::real, "kto winner weight"},
      {"lambda_l", KeyKind::real, "kto loser weight"},
      {"beta_kto", KeyKind::real, "kto gap scale"},
      {"lambda_orpo", KeyKind::real, "orpo odds-ratio weight"},
      {"alpha_rdpo_len", KeyKind::real, "r_dpo length coefficient"},
      {"beta_simpo", KeyKind::real, "simpo gap scale"},
      {"gamma_simpo", KeyKind::real, "simpo margin"},
      {"allow_outside_ranges", KeyKind::boolean, "skip published-range checks"},
      {"context_order", KeyKind::integer, "tabular context length"},
      {"n_layers", KeyKind::integer, "transformer layers"},
      {"d_model", KeyKind::integer, "transformer width"},
      {"n_heads", KeyKind::integer, "attention heads"},
      {"d_ff", KeyKind::integer, "feed-forward width"},
      {"max_seq", KeyKind::integer, "transformer context limit"},
      {"init_std", KeyKind::real, "transformer init scale"},
      {"model_seed", KeyKind::unsigned64, "model initialization seed"},
  };
  return keys;
}

namespace {

json default_train_config() {
  json c;
  c["objective"] = "mpo";
  c["corpus"] = "";
  c["manifest"] = "";
  c["output_dir"] = "";
  c["backend"] = "tabular";
  c["init_checkpoint"] = "";
  c["batch_size"] = 8;
  c["epochs"] = 2;
  c["lr"] = 1e-3;
  c["warmup_fraction"] = 0.10;
  c["seed"] = std::uint64_t{1};
  c["eval_every"] = 1;
  c["grad_clip"] = true;
  c["grad_clip_norm"] = 1.0;
  c["mixed_language_batches"] = true;
  c["pivot_language"] = "";
  c["exec"] = "serial";
  c["beta"] = 1.0;
  c["retention_weight"] = 1.0;
  c["length_normalize"] = true;
  c["retention_mode"] = "representation";
  c["pivot_mode"] = "instance";
  c["pivot_constant"] = 0.0;
  c["hidden_position"] = "prompt_end";
  c["beta_dpo"] = 0.1;
  c["tau_ipo"] = 0.5;
  c["eps_rdpo"] = 0.1;
  c["lambda_cpo"] = 1.0;
  c["lambda_w"] = 1.0;
  c["lambda_l"] = 1.0;
  c["beta_kto"] = 0.1;
  c["lambda_orpo"] = 1.0;
  c["alpha_rdpo_len"] = 0.1;
  c["beta_simpo"] = 2.0;
  c["gamma_simpo"] = 1.0;
  c["allow_outside_ranges"] = false;
  c["context_order"] = 2;
  c["n_layers"] = 2;
  c["d_model"] = 32;
  c["n_heads"] = 2;
  c["d_ff"] = 128;
  c["max_seq"] = 64;
  c["init_std"] = 0.08;
  c["model_seed"] = std::uint64_t{0};
  return c;
}

const ConfigKey* find_key(const std::string& name) {
  for (const ConfigKey& k : train_config_keys())
    if (name == k.name) return &k;
  return nullptr;
}

void apply_json_value(json& cfg, const ConfigKey& key, const json& v) {
  switch (key.kind) {
    case KeyKind::text:
      if (!v.is_string()) throw ConfigError(std::string(key.name) + " must be a string");
      break;
    case KeyKind::integer:
      if (!v.is_number_integer()) throw ConfigError(std::string(key.name) + " must be an integer");
      break;
    case KeyKind::unsigned64:
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
        throw ConfigError(std::string(key.name) + " must be a non-negative integer");
      break;
    case KeyKind::real:
      if (!v.is_number()) throw ConfigError(std::string(key.name) + " must be a number");
      break;
    case KeyKind::boolean:
      if (!v.is_boolean()) throw ConfigError(std::string(key.name) + " must be a boolean");
      break;
  }
  cfg[key.name] = v;
}

void apply_string_value(json& cfg, const ConfigKey& key, const std::string& s) {
  try {
    switch (key.kind) {
      case KeyKind::text: cfg[key.name] = s; return;
      case KeyKind::integer: cfg[key.name] = std::stoi(s); return;
      case KeyKind::unsigned64: cfg[key.name] = static_cast<std::uint64_t>(std::stoull(s)); return;
      case KeyKind::real: cfg[key.name] = std::stod(s); return;
      case KeyKind::boolean:
        if (s == "true" || s == "1") {
          cfg[key.name] = true;
        } else if (s == "false" || s == "0") {
          cfg[key.name] = false;
        } else {
          throw ConfigError(std::string(key.name) + ": expected true/false, got '" + s + "'");
        }
        return;
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    throw ConfigError(std::string(key.name) + ": cannot parse value '" + s + "'");
  }
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open file for writing: " + path);
  out << content;
  if (!out) throw IoError("failed writing file: " + path);
}

std::string iso_utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string resolve_output_dir(const std::string& dir) {
  if (dir.empty()) throw ConfigError("output_dir must be set");
  fs::path p(dir);
  if (p.is_relative()) {
    if (const char* root = std::getenv(kOutputRootEnv); root != nullptr && *root != '\0')
      p = fs::path(root) / p;
  }
  return p.string();
}

int exit_code_for(const Error& e) {
  if (dynamic_cast<const ConfigError*>(&e) != nullptr ||
      dynamic_cast<const ParseError*>(&e) != nullptr ||
      dynamic_cast<const HyperparamError*>(&e) != nullptr ||
      dynamic_cast<const DispatchError*>(&e) != nullptr ||
      dynamic_cast<const IoError*>(&e) != nullptr ||
      dynamic_cast<const CompatError*>(&e) != nullptr ||
      dynamic_cast<const InputError*>(&e) != nullptr)
    return 2;
  return 1;
}

// Shared try/catch shell: commands below only throw.
template <typename Fn>
int run_command(Fn&& fn) {
  try {
    fn();
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
}

Corpus load_corpus(const std::string& corpus_path, const std::string& manifest_path) {
  Corpus corpus;
  corpus.manifest = read_manifest(manifest_path);
  corpus.examples = read_corpus_records(corpus_path);
  for (const PreferenceExample& ex : corpus.examples)
    if (!corpus.manifest.has_language(ex.language))
      throw ConfigError("corpus example pair_id " + std::to_string(ex.pair_id) +
                        " uses language '" + ex.language + "' absent from the manifest");
  return corpus;
}

std::map<std::string, std::vector<TokenSeq>> default_benign(const CorpusManifest& manifest,
                                                            int n_sequences = 32) {
  std::map<std::string, std::vector<TokenSeq>> benign;
  for (const LanguageSpec& l : manifest.languages)
    benign.emplace(l.id, generate_benign(manifest, l.id, n_sequences));
  return benign;
}

}  // namespace

// ------------------------------------------------------------ config plumbing ---

std::string effective_train_config(const std::string& config_path,
                                   const std::map<std::string, std::string>& overrides) {
  json cfg = default_train_config();
  if (!config_path.empty()) {
    const std::string text = read_text_file(config_path);
    json file;
    try {
      file = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ParseError(config_path + ": " + e.what());
    }
    if (!file.is_object()) throw ParseError(config_path + ": config must be a JSON object");
    for (const auto& [k, v] : file.items()) {
      const ConfigKey* key = find_key(k);
      if (key == nullptr) throw ConfigError(config_path + ": unknown config key '" + k + "'");
      apply_json_value(cfg, *key, v);
    }
  }
  for (const auto& [k, v] : overrides) {
    const ConfigKey* key = find_key(k);
    if (key == nullptr) throw ConfigError("unknown config key '" + k + "'");
    apply_string_value(cfg, *key, v);
  }
  return cfg.dump(2);
}

std::string config_hash(const std::string& effective_config_json) {
  json cfg = json::parse(effective_config_json);
  cfg.erase("output_dir");  // where a run lands does not change what it is
  const std::string canon = cfg.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (const unsigned char c : canon) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ------------------------------------------------------------------ gen-data ---

int cmd_gen_data(const std::string& manifest_path, const std::string& out_path, bool parallel) {
  return run_command([&] {
    const CorpusManifest manifest = read_manifest(manifest_path);
    const Corpus corpus =
        build_corpus(manifest, parallel ? ExecMode::parallel : ExecMode::serial);
    if (const fs::path parent = fs::path(out_path).parent_path(); !parent.empty())
      fs::create_directories(parent);
    write_corpus(corpus, out_path);
    std::cout << "wrote " << corpus.examples.size() << " examples to " << out_path << '\n';
    for (const LanguageSpec& l : manifest.languages)
      std::cout << "language " << l.id << " (" << tier_name(l.tier)
                << "): " << corpus.in_language(l.id).size() << " examples\n";
  });
}

// --------------------------------------------------------------------- train ---

namespace {

struct ParsedTrainConfig {
  TrainConfig train;
  std::string corpus, manifest, output_dir, backend, init_checkpoint;
  int context_order = 2;
  TransformerConfig transformer;
  std::uint64_t model_seed = 0;
};

ParsedTrainConfig parse_train_config(const json& c) {
  ParsedTrainConfig p;
  p.train.objective.name = c.at("objective").get<std::string>();
  p.train.objective.mpo.beta = c.at("beta").get<double>();
  p.train.objective.mpo.retention_weight = c.at("retention_weight").get<double>();
  p.train.objective.mpo.length_normalize = c.at("length_normalize").get<bool>();
  p.train.objective.mpo.retention_mode =
      retention_mode_from_name(c.at("retention_mode").get<std::string>());
  p.train.objective.mpo.pivot_mode = pivot_mode_from_name(c.at("pivot_mode").get<std::string>());
  p.train.objective.mpo.pivot_constant = c.at("pivot_constant").get<double>();
  const std::string hidden = c.at("hidden_position").get<std::string>();
  if (hidden == "prompt_end") {
    p.train.objective.mpo.hidden_position = HiddenPosition::prompt_end;
  } else if (hidden == "sequence_end") {
    p.train.objective.mpo.hidden_position = HiddenPosition::sequence_end;
  } else {
    throw ConfigError("hidden_position must be prompt_end or sequence_end, got '" + hidden + "'");
  }
  BaselineHyperparams& hp = p.train.objective.hp;
  hp.beta_dpo = c.at("beta_dpo").get<double>();
  hp.tau_ipo = c.at("tau_ipo").get<double>();
  hp.eps_rdpo = c.at("eps_rdpo").get<double>();
  hp.lambda_cpo = c.at("lambda_cpo").get<double>();
  hp.lambda_w = c.at("lambda_w").get<double>();
  hp.lambda_l = c.at("lambda_l").get<double>();
  hp.beta_kto = c.at("beta_kto").get<double>();
  hp.lambda_orpo = c.at("lambda_orpo").get<double>();
  hp.alpha_rdpo_len = c.at("alpha_rdpo_len").get<double>();
  hp.beta_simpo = c.at("beta_simpo").get<double>();
  hp.gamma_simpo = c.at("gamma_simpo").get<double>();
  hp.allow_outside_ranges = c.at("allow_outside_ranges").get<bool>();
  p.train.batch_size = c.at("batch_size").get<int>();
  p.train.epochs = c.at("epochs").get<int>();
  p.train.lr = c.at("lr").get<double>();
  p.train.warmup_fraction = c.at("warmup_fraction").get<double>();
  p.train.seed = c.at("seed").get<std::uint64_t>();
  p.train.eval_every = c.at("eval_every").get<int>();
  p.train.grad_clip = c.at("grad_clip").get<bool>();
  p.train.grad_clip_norm = c.at("grad_clip_norm").get<double>();
  p.train.mixed_language_batches = c.at("mixed_language_batches").get<bool>();
  p.train.pivot_language = c.at("pivot_language").get<std::string>();
  const std::string exec = c.at("exec").get<std::string>();
  if (exec == "serial") {
    p.train.exec = ExecMode::serial;
  } else if (exec == "parallel") {
    p.train.exec = ExecMode::parallel;
  } else {
    throw ConfigError("exec must be serial or parallel, got '" + exec + "'");
  }
  p.corpus = c.at("corpus").get<std::string>();
  p.manifest = c.at("manifest").get<std::string>();
  p.output_dir = c.at("output_dir").get<std::string>();
  p.backend = c.at("backend").get<std::string>();
  p.init_checkpoint = c.at("init_checkpoint").get<std::string>();
  p.context_order = c.at("context_order").get<int>();
  p.transformer.n_layers = c.at("n_layers").get<int>();
  p.transformer.d_model = c.at("d_model").get<int>();
  p.transformer.n_heads = c.at("n_heads").get<int>();
  p.transformer.d_ff = c.at("d_ff").get<int>();
  p.transformer.max_seq = c.at("max_seq").get<int>();
  p.transformer.init_std = c.at("init_std").get<double>();
  p.model_seed = c.at("model_seed").get<std::uint64_t>();
  return p;
}

LanguageModel make_model(const ParsedTrainConfig& p, const CorpusManifest& manifest) {
  if (!p.init_checkpoint.empty()) {
    LanguageModel m = LanguageModel::load_checkpoint(p.init_checkpoint);
    if (m.vocab_size() != manifest.vocab_size)
      throw CompatError("checkpoint vocab " + std::to_string(m.vocab_size()) +
                        " does not match manifest vocab " +
                        std::to_string(manifest.vocab_size));
    return m;
  }
  if (p.backend == "tabular")
    return LanguageModel::tabular(manifest.vocab_size, p.context_order);
  if (p.backend == "transformer")
    return LanguageModel::transformer(manifest.vocab_size, p.transformer, p.model_seed);
  throw ConfigError("backend must be tabular or transformer, got '" + p.backend + "'");
}

}  // namespace

int cmd_train(const std::string& config_path,
              const std::map<std::string, std::string>& overrides) {
  return run_command([&] {
    const std::string effective = effective_train_config(config_path, overrides);
    const ParsedTrainConfig parsed = parse_train_config(json::parse(effective));
    parsed.train.validate();  // fail before creating the run directory
    if (parsed.corpus.empty() || parsed.manifest.empty())
      throw ConfigError("both corpus and manifest must be set");
    const std::string out_dir = resolve_output_dir(parsed.output_dir);
    const Corpus corpus = load_corpus(parsed.corpus, parsed.manifest);
    LanguageModel model = make_model(parsed, corpus.manifest);

    const TrainResult result = train(std::move(model), corpus, parsed.train);

    fs::create_directories(out_dir);
    const std::string hash = config_hash(effective);
    const fs::path dir(out_dir);
    const std::string checkpoint_path = (dir / "checkpoint.bin").string();
    const std::string reference_path = (dir / "reference.bin").string();
    const std::string log_path = (dir / "run_log.csv").string();
    const std::string config_out = (dir / "effective_config.json").string();
    const std::string manifest_out = (dir / "run_manifest.json").string();
    result.policy.save_checkpoint(checkpoint_path);
    result.reference.save_checkpoint(reference_path);
    write_run_log(result.log, log_path);
    write_text_file(config_out, effective + "\n");
    json rm;
    rm["config_hash"] = hash;
    rm["version"] = kVersion;
    rm["created_utc"] = iso_utc_now();
    rm["corpus_manifest"] = parsed.manifest;
    rm["corpus"] = parsed.corpus;
    rm["total_steps"] = result.total_steps;
    rm["artifacts"] = json::array({"checkpoint.bin", "reference.bin", "run_log.csv",
                                   "effective_config.json", "run_manifest.json"});
    write_text_file(manifest_out, rm.dump(2) + "\n");
    std::cout << "run " << hash << ": " << result.total_steps << " steps, objective "
              << parsed.train.objective.name << ", artifacts in " << out_dir << '\n';
    if (!result.log.empty())
      std::cout << "final loss " << fmt_g17(result.log.back().total) << " at step "
                << result.log.back().step << '\n';
  });
}

// ---------------------------------------------------------------------- eval ---

int cmd_eval(const std::string& checkpoint_path, const std::string& corpus_path,
             const std::string& manifest_path, const std::string& out_dir,
             const std::string& method, int max_decode_len) {
  return run_command([&] {
    const LanguageModel policy = LanguageModel::load_checkpoint(checkpoint_path);
    const Corpus corpus = load_corpus(corpus_path, manifest_path);
    const auto benign = default_benign(corpus.manifest);
    const std::vector<MetricsRow> rows =
        evaluate_model(policy, corpus, benign, max_decode_len);
    const std::string resolved = resolve_output_dir(out_dir);
    fs::create_directories(resolved);
    const fs::path dir(resolved);
    write_metrics_csv(rows, (dir / "metrics.csv").string());
    json args;
    args["checkpoint"] = checkpoint_path;
    args["corpus"] = corpus_path;
    args["manifest"] = manifest_path;
    args["max_decode_len"] = max_decode_len;
    write_text_file((dir / "summary.json").string(),
                    metrics_summary_json(method, config_hash(args.dump(2)),
                                         corpus.manifest.seed, rows) +
                        "\n");
    for (const MetricsRow& r : rows)
      std::cout << r.language << ": asr " << fmt_g17(r.asr) << ", ppl "
                << fmt_g17(r.utility_ppl) << ", mean_rg " << fmt_g17(r.mean_rg) << " ("
                << r.n_prompts << " prompts)\n";
  });
}

// ----------------------------------------------------------------- rg-report ---

int cmd_rg_report(const std::string& checkpoint_path, const std::string& reference_path,
                  const std::string& corpus_path, const std::string& manifest_path,
                  const std::string& out_dir, bool use_pearson, int max_decode_len) {
  return run_command([&] {
    const LanguageModel policy = LanguageModel::load_checkpoint(checkpoint_path);
    const LanguageModel reference = reference_path.empty()
                                        ? policy.snapshot_reference()
                                        : LanguageModel::load_checkpoint(reference_path)
                                              .snapshot_reference();
    const Corpus corpus = load_corpus(corpus_path, manifest_path);
    const std::string resolved = resolve_output_dir(out_dir);
    fs::create_directories(resolved);
    const fs::path dir(resolved);

    const RgReport report = rg_report(policy, reference, corpus);
    write_rg_report_csv(report, (dir / "rg_report.csv").string());
    for (const std::string& w : report.warnings) std::cout << "warning: " << w << '\n';

    const auto benign = default_benign(corpus.manifest);
    const std::vector<MetricsRow> rows =
        evaluate_model(policy, corpus, benign, max_decode_len);
    std::string corr_text;
    try {
      const double c = rg_asr_correlation(report, rows, use_pearson);
      corr_text = std::string(use_pearson ? "pearson," : "spearman,") + fmt_g17(c);
      std::cout << "rg-asr correlation: " << fmt_g17(c) << '\n';
    } catch (const DegenerateInputError& e) {
      corr_text = std::string(use_pearson ? "pearson," : "spearman,") + "undefined";
      std::cout << "rg-asr correlation undefined: " << e.what() << '\n';
    }
    write_text_file((dir / "correlation.csv").string(), "method,value\n" + corr_text + "\n");

    // Safe/unsafe response representations, for external PCA plots.
    std::vector<Vec> reps;
    std::vector<std::string> langs;
    std::vector<int> safe;
    for (const PreferenceExample& ex : corpus.examples) {
      TokenSeq with_w = ex.x;
      with_w.insert(with_w.end(), ex.y_w.begin(), ex.y_w.end());
      TokenSeq with_l = ex.x;
      with_l.insert(with_l.end(), ex.y_l.begin(), ex.y_l.end());
      reps.push_back(policy.hidden_at_last(with_w));
      langs.push_back(ex.language);
      safe.push_back(1);
      reps.push_back(policy.hidden_at_last(with_l));
      langs.push_back(ex.language);
      safe.push_back(0);
    }
    try {
      const PcaProjection proj = pca_project(reps, langs, safe);
      write_pca_points_csv(proj, (dir / "pca_points.csv").string());
      std::cout << "pca explained variance: " << fmt_g17(proj.explained1) << ", "
                << fmt_g17(proj.explained2) << '\n';
    } catch (const DegenerateInputError& e) {
      std::cout << "pca skipped: " << e.what() << '\n';
    }
  });
}

// ---------------------------------------------------------------- grad-check ---

int cmd_grad_check(const std::string& backend, const std::string& objective, std::uint64_t seed,
                   int n_probes) {
  return run_command([&] {
    ObjectiveSpec spec;
    spec.name = objective;
    spec.validate();
    if (backend != "tabular" && backend != "transformer")
      throw ConfigError("backend must be tabular or transformer, got '" + backend + "'");

    CorpusManifest manifest = ladder_manifest(seed, /*n_pairs=*/4);
    manifest.vocab_size = 24;
    const Corpus corpus = build_corpus(manifest);

    LanguageModel policy =
        backend == "tabular"
            ? LanguageModel::tabular(manifest.vocab_size, 1, /*init_std=*/0.3, seed)
            : LanguageModel::transformer(manifest.vocab_size,
                                         TransformerConfig{2, 16, 2, 32, 64, 0.08}, seed);
    const LanguageModel reference =
        (backend == "tabular"
             ? LanguageModel::tabular(manifest.vocab_size, 1, 0.3, seed + 1)
             : LanguageModel::transformer(manifest.vocab_size,
                                          TransformerConfig{2, 16, 2, 32, 64, 0.08}, seed + 1))
            .snapshot_reference();

    const auto dominant_pairs = corpus.pairs_of("dom");
    std::vector<BatchItem> batch;
    for (const PreferenceExample& ex : corpus.examples) {
      if (ex.language == "dom") continue;
      batch.push_back(BatchItem{&ex, dominant_pairs.at(ex.pair_id)});
      if (batch.size() == 4) break;
    }
    const GradCheckReport report =
        grad_check(policy, reference, spec, batch, nullptr, n_probes, seed);
    std::cout << "objective " << objective << ", backend " << backend << ": max rel err "
              << fmt_g17(report.max_rel_err) << " over " << report.n_probes << " probes -> "
              << (report.pass ? "PASS" : "FAIL") << '\n';
    if (!report.pass) throw TrainError("gradient check failed");
  });
}

// -------------------------------------------------------- reproduce-ablations ---

namespace {

struct AblationOutcome {
  double target_asr = 0.0;
  double dominant_ppl = 0.0;
  double dominant_drift = 0.0;
};

AblationOutcome run_ablation(const DataBundle& bundle, const LanguageModel& base,
                             const ObjectiveSpec& spec, double lr, int epochs,
                             std::uint64_t seed) {
  const TrainResult result = preference_run(base, bundle.train, spec, lr, epochs, seed);
  AblationOutcome out;
  const std::vector<MetricsRow> rows = bundle_metrics(result.policy, bundle);
  const std::string dom = bundle.train.manifest.dominant_language().id;
  out.target_asr = mean_asr_excluding(rows, dom);
  out.dominant_ppl = language_ppl(result.policy, bundle, dom);
  out.dominant_drift = representation_drift(result.policy, result.reference, bundle.eval, dom);
  return out;
}

}  // namespace

int cmd_reproduce_ablations(const std::string& out_dir, bool quick) {
  return run_command([&] {
    const std::string resolved = resolve_output_dir(out_dir);
    fs::create_directories(resolved);
    const fs::path dir(resolved);
    const int n_pairs = quick ? 12 : 32;
    const int eval_pairs = quick ? 12 : 24;
    const double sft_lr = 0.08;
    const double pref_lr = 0.02;
    const int epochs = 2;
    const std::uint64_t seed = 11;

    const CorpusManifest manifest = uniform_noise_manifest(seed, n_pairs, 3, 0.10);
    const DataBundle bundle = build_bundle(manifest, eval_pairs, 24);
    const LanguageModel base =
        base_prep(make_tabular_model(manifest.vocab_size), bundle.train, sft_lr, 2, seed);
    const std::string dom = manifest.dominant_language().id;
    const double base_ppl = language_ppl(base, bundle, dom);

    {  // retention-mode sweep
      std::ostringstream csv;
      csv << "# base_dominant_ppl," << fmt_g17(base_ppl) << '\n';
      csv << "retention_mode,target_asr,dominant_ppl,dominant_drift\n";
      for (const RetentionMode mode :
           {RetentionMode::representation, RetentionMode::kl, RetentionMode::none}) {
        ObjectiveSpec spec;
        spec.mpo.retention_mode = mode;
        const AblationOutcome o = run_ablation(bundle, base, spec, pref_lr, epochs, seed);
        csv << retention_mode_name(mode) << ',' << fmt_g17(o.target_asr) << ','
            << fmt_g17(o.dominant_ppl) << ',' << fmt_g17(o.dominant_drift) << '\n';
      }
      write_text_file((dir / "retention_sweep.csv").string(), csv.str());
    }
    {  // fixed-constant supervision sweep
      PivotTable table = PivotTable::build(
          base.snapshot_reference(),
          [&] {
            std::vector<PreferenceExample> pivots;
            for (const PreferenceExample& ex : bundle.train.examples)
              if (ex.language == dom) pivots.push_back(ex);
            return pivots;
          }(),
          MpoConfig{});
      const double mean_gap = table.dataset_mean();
      std::ostringstream csv;
      csv << "pivot_mode,constant,target_asr,dominant_ppl\n";
      {
        ObjectiveSpec spec;
        const AblationOutcome o = run_ablation(bundle, base, spec, pref_lr, epochs, seed);
        csv << "instance,," << fmt_g17(o.target_asr) << ',' << fmt_g17(o.dominant_ppl) << '\n';
      }
      for (const double mult : {0.5, 1.0, 2.0, 5.0, 10.0}) {
        ObjectiveSpec spec;
        spec.mpo.pivot_mode = PivotMode::fixed;
        spec.mpo.pivot_constant = mult * mean_gap;
        const AblationOutcome o = run_ablation(bundle, base, spec, pref_lr, epochs, seed);
        csv << "fixed," << fmt_g17(spec.mpo.pivot_constant) << ',' << fmt_g17(o.target_asr)
            << ',' << fmt_g17(o.dominant_ppl) << '\n';
      }
      write_text_file((dir / "constant_sweep.csv").string(), csv.str());
    }
    {  // pivot-language sweep
      std::ostringstream csv;
      csv << "pivot_language,target_asr\n";
      for (const LanguageSpec& l : manifest.languages) {
        ObjectiveSpec spec;
        TrainConfig cfg;
        cfg.objective = spec;
        cfg.lr = pref_lr;
        cfg.epochs = epochs;
        cfg.seed = seed;
        cfg.eval_every = 1 << 20;
        cfg.pivot_language = l.id;
        const TrainResult r = train(base, bundle.train, cfg);
        const std::vector<MetricsRow> rows = bundle_metrics(r.policy, bundle);
        csv << l.id << ',' << fmt_g17(mean_asr_excluding(rows, l.id)) << '\n';
      }
      write_text_file((dir / "pivot_sweep.csv").string(), csv.str());
    }
    {  // label-noise sweep across methods
      std::ostringstream csv;
      csv << "epsilon,method,target_asr\n";
      for (const double eps : {0.0, 0.10, 0.20, 0.30}) {
        const CorpusManifest nm = uniform_noise_manifest(seed + 1, n_pairs, 3, eps);
        const DataBundle nb = build_bundle(nm, eval_pairs, 24);
        const LanguageModel nbase =
            base_prep(make_tabular_model(nm.vocab_size), nb.train, sft_lr, 2, seed);
        for (const std::string method : {"mpo", "dpo", "simpo"}) {
          ObjectiveSpec spec;
          spec.name = method;
          spec.hp.allow_outside_ranges = true;
          spec.hp.beta_dpo = 0.5;  // toy-scale operating point
          const TrainResult r = preference_run(nbase, nb.train, spec, pref_lr, epochs, seed);
          const std::vector<MetricsRow> rows = bundle_metrics(r.policy, nb);
          csv << fmt_g17(eps) << ',' << method << ','
              << fmt_g17(mean_asr_excluding(rows, dom)) << '\n';
        }
      }
      write_text_file((dir / "noise_sweep.csv").string(), csv.str());
    }
    {  // corpus-size sweep
      std::ostringstream csv;
      csv << "n_pairs,target_asr\n";
      for (const int np : {8, 16, 32, quick ? 40 : 64}) {
        const CorpusManifest sm = uniform_noise_manifest(seed + 2, np, 3, 0.10);
        const DataBundle sb = build_bundle(sm, eval_pairs, 24);
        const LanguageModel sbase =
            base_prep(make_tabular_model(sm.vocab_size), sb.train, sft_lr, 2, seed);
        ObjectiveSpec spec;
        const TrainResult r = preference_run(sbase, sb.train, spec, pref_lr, epochs, seed);
        const std::vector<MetricsRow> rows = bundle_metrics(r.policy, sb);
        csv << np << ',' << fmt_g17(mean_asr_excluding(rows, dom)) << '\n';
      }
      write_text_file((dir / "size_sweep.csv").string(), csv.str());
    }
    std::cout << "ablation sweeps written to " << resolved << '\n';
  });
}

}  // namespace mpo::cli
