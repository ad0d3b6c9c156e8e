// SPDX-License-Identifier: Apache-2.0
//
// Shared basics: token type, error taxonomy, small numeric helpers.

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mpo {

using Token = std::int32_t;
using TokenSeq = std::vector<Token>;
using TokenSpan = std::span<const Token>;
using Vec = std::vector<double>;

// ---------------------------------------------------------------- errors --

// Base for everything this library throws on purpose.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Bad configuration: out-of-range sizes, missing required pieces.
struct ConfigError : Error { using Error::Error; };
// Malformed caller input: out-of-range token ids, shape mismatches.
struct InputError : Error { using Error::Error; };
// File-level problems: unreadable paths, short reads, bad magic.
struct IoError : Error { using Error::Error; };
// Unparseable text input (JSON corpora, configs).
struct ParseError : Error { using Error::Error; };
// Target/dominant examples that do not belong to the same pair.
struct PairingError : Error { using Error::Error; };
// Mutation attempted on a frozen reference model, or a policy expected
// where a reference is required (and vice versa).
struct RoleError : Error { using Error::Error; };
// Two models whose shapes cannot be combined (e.g. hidden dims differ).
struct CompatError : Error { using Error::Error; };
// Unknown objective name in a dispatch-by-name call.
struct DispatchError : Error { using Error::Error; };
// Hyperparameter outside its allowed search range.
struct HyperparamError : Error { using Error::Error; };
// Training aborted (non-finite loss et al.).
struct TrainError : Error { using Error::Error; };
// Expression-graph misuse: non-differentiable node requested.
struct ConstructionError : Error { using Error::Error; };
// Statistics on degenerate input (zero variance, too few points).
struct DegenerateInputError : Error { using Error::Error; };

// --------------------------------------------------------------- numerics --

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Squared L2 norm -- deliberately no square root; retention math and the
// gradient-norm tests both consume the squared form.
inline double norm2(std::span<const double> a) {
  double s = 0.0;
  for (double v : a) s += v * v;
  return s;
}

inline double logistic(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// log(sigmoid(x)) without overflow on either tail.
inline double log_logistic(double x) {
  return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

// Fixed-format float for CSV output: round-trips exactly, locale-free.
std::string fmt_g17(double v);

// "a,b,c" convenience join for error messages.
std::string join(const std::vector<std::string>& parts, const std::string& sep);

}  // namespace mpo
