// SPDX-License-Identifier: Apache-2.0
//
// Command implementations behind the `mpo` binary.  Each command takes
// parsed arguments, returns a process exit code, and writes its artifacts
// into a self-describing run directory.  Exit codes: 0 success; 2 for
// configuration, parsing, and missing-file problems; 1 for internal errors.

#pragma once

#include <map>
#include <string>
#include <vector>

namespace mpo::cli {

inline constexpr const char* kVersion = "mpo-lab 1.0.0";
inline constexpr const char* kOutputRootEnv = "MPO_OUTPUT_ROOT";

// Flat config keys shared by the config file and the command-line flags
// (flags override file values).
enum class KeyKind { text, integer, unsigned64, real, boolean };
struct ConfigKey {
  const char* name;
  KeyKind kind;
  const char* help;
};
const std::vector<ConfigKey>& train_config_keys();

// Defaults -> file -> overrides, as a canonical JSON object.
std::string effective_train_config(const std::string& config_path,
                                   const std::map<std::string, std::string>& overrides);

// FNV-1a over the canonical config text minus the output-path key.
std::string config_hash(const std::string& effective_config_json);

int cmd_gen_data(const std::string& manifest_path, const std::string& out_path, bool parallel);

int cmd_train(const std::string& config_path, const std::map<std::string, std::string>& overrides);

int cmd_eval(const std::string& checkpoint_path, const std::string& corpus_path,
             const std::string& manifest_path, const std::string& out_dir,
             const std::string& method, int max_decode_len);

int cmd_rg_report(const std::string& checkpoint_path, const std::string& reference_path,
                  const std::string& corpus_path, const std::string& manifest_path,
                  const std::string& out_dir, bool use_pearson, int max_decode_len);

int cmd_grad_check(const std::string& backend, const std::string& objective, std::uint64_t seed,
                   int n_probes);

int cmd_reproduce_ablations(const std::string& out_dir, bool quick);

}  // namespace mpo::cli
