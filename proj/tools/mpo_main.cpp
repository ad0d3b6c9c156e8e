// SPDX-License-Identifier: Apache-2.0
//
// `mpo` command-line front end.  All behavior lives in mpo::cli (commands.cpp);
// this file only parses flags.  Exit codes: 0 success, 2 configuration /
// parsing / missing-file problems, 1 internal errors.

#include <cstdint>
#include <map>
#include <string>

#include "CLI11.hpp"

#include "mpo/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"mpo-lab: a preference-optimization laboratory for tiny "
               "multilingual language models"};
  app.set_version_flag("--version", std::string(mpo::cli::kVersion));
  app.require_subcommand(1);

  // ---- gen-data ----
  auto* gen = app.add_subcommand("gen-data", "Build a synthetic corpus from a manifest");
  std::string gen_manifest, gen_out;
  bool gen_parallel = false;
  gen->add_option("--manifest", gen_manifest, "manifest JSON path")->required();
  gen->add_option("--out", gen_out, "output corpus path (JSONL)")->required();
  gen->add_flag("--parallel", gen_parallel, "translate languages in parallel");

  // ---- train ----
  auto* tr = app.add_subcommand("train", "Train a policy; flags override the config file");
  std::string train_config;
  std::map<std::string, std::string> overrides;
  tr->add_option("--config", train_config, "JSON config file (defaults used if omitted)");
  for (const mpo::cli::ConfigKey& key : mpo::cli::train_config_keys()) {
    tr->add_option_function<std::string>(
        "--" + std::string(key.name),
        [&overrides, name = std::string(key.name)](const std::string& v) {
          overrides[name] = v;
        },
        key.help);
  }

  // ---- eval ----
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a corpus");
  std::string ev_ckpt, ev_corpus, ev_manifest, ev_out, ev_method = "unspecified";
  int ev_decode = 12;
  ev->add_option("--checkpoint", ev_ckpt, "policy checkpoint")->required();
  ev->add_option("--corpus", ev_corpus, "eval corpus (JSONL)")->required();
  ev->add_option("--manifest", ev_manifest, "manifest JSON path")->required();
  ev->add_option("--out", ev_out, "output directory")->required();
  ev->add_option("--method", ev_method, "method label for summary.json");
  ev->add_option("--max-decode-len", ev_decode, "greedy decode length for ASR");

  // ---- rg-report ----
  auto* rg = app.add_subcommand("rg-report",
                                "Per-language reward-gap report, ASR correlation, PCA points");
  std::string rg_ckpt, rg_ref, rg_corpus, rg_manifest, rg_out;
  bool rg_pearson = false;
  int rg_decode = 12;
  rg->add_option("--checkpoint", rg_ckpt, "policy checkpoint")->required();
  rg->add_option("--reference", rg_ref, "reference checkpoint (default: the policy itself)");
  rg->add_option("--corpus", rg_corpus, "eval corpus (JSONL)")->required();
  rg->add_option("--manifest", rg_manifest, "manifest JSON path")->required();
  rg->add_option("--out", rg_out, "output directory")->required();
  rg->add_flag("--pearson", rg_pearson, "Pearson instead of Spearman correlation");
  rg->add_option("--max-decode-len", rg_decode, "greedy decode length for ASR");

  // ---- grad-check ----
  auto* gc = app.add_subcommand("grad-check",
                                "Finite-difference gradient check on a fresh toy problem");
  std::string gc_backend = "tabular", gc_objective = "mpo";
  std::uint64_t gc_seed = 7;
  int gc_probes = 10;
  gc->add_option("--backend", gc_backend, "tabular or transformer");
  gc->add_option("--objective", gc_objective, "mpo or a baseline name");
  gc->add_option("--seed", gc_seed, "probe seed");
  gc->add_option("--probes", gc_probes, "number of random directions");

  // ---- reproduce-ablations ----
  auto* ab = app.add_subcommand("reproduce-ablations",
                                "Run the retention/pivot/noise/size sweeps into CSV files");
  std::string ab_out;
  bool ab_quick = false;
  ab->add_option("--out", ab_out, "output directory")->required();
  ab->add_flag("--quick", ab_quick, "smaller corpora for a fast pass");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // help/version exit 0; bad usage is a config error
  }

  if (*gen) return mpo::cli::cmd_gen_data(gen_manifest, gen_out, gen_parallel);
  if (*tr) return mpo::cli::cmd_train(train_config, overrides);
  if (*ev) return mpo::cli::cmd_eval(ev_ckpt, ev_corpus, ev_manifest, ev_out, ev_method, ev_decode);
  if (*rg)
    return mpo::cli::cmd_rg_report(rg_ckpt, rg_ref, rg_corpus, rg_manifest, rg_out, rg_pearson,
                                   rg_decode);
  if (*gc) return mpo::cli::cmd_grad_check(gc_backend, gc_objective, gc_seed, gc_probes);
  if (*ab) return mpo::cli::cmd_reproduce_ablations(ab_out, ab_quick);
  return 2;
}
