// SPDX-License-Identifier: Apache-2.0
//
// Wall-clock comparison of the serial reference path against the OpenMP path
// for the three parallel kernels: corpus translation, batch gradients, and
// ASR decoding.  Also asserts that both paths produce bit-identical numbers,
// which is the property the parallel design is built around (per-leaf
// gradient buffers reduced in a fixed order).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "mpo/corpus.hpp"
#include "mpo/evalsuite.hpp"
#include "mpo/experiments.hpp"
#include "mpo/model.hpp"
#include "mpo/objectives.hpp"
#include "mpo/parallel.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

template <typename Fn>
double time_best_of(int reps, Fn&& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = Clock::now();
    fn();
    best = std::min(best, ms_since(t0));
  }
  return best;
}

void report(const char* name, double serial_ms, double parallel_ms, bool identical) {
  std::printf("%-26s %10.2f ms %10.2f ms   x%.2f   %s\n", name, serial_ms, parallel_ms,
              serial_ms / parallel_ms, identical ? "bit-identical" : "MISMATCH");
}

bool same_bits(const mpo::Vec& a, const mpo::Vec& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace

int main() {
  using namespace mpo;
  std::printf("threads available: %d\n\n", max_threads());

  // ---- corpus translation -------------------------------------------------
  const CorpusManifest manifest = tiered_manifest(/*seed=*/3, /*n_pairs=*/400);
  Corpus serial_corpus, parallel_corpus;
  const double corpus_serial =
      time_best_of(3, [&] { serial_corpus = build_corpus(manifest, ExecMode::serial); });
  const double corpus_parallel =
      time_best_of(3, [&] { parallel_corpus = build_corpus(manifest, ExecMode::parallel); });
  bool corpus_same = serial_corpus.examples.size() == parallel_corpus.examples.size();
  if (corpus_same)
    for (std::size_t i = 0; i < serial_corpus.examples.size(); ++i) {
      const PreferenceExample& a = serial_corpus.examples[i];
      const PreferenceExample& b = parallel_corpus.examples[i];
      if (a.x != b.x || a.y_w != b.y_w || a.y_l != b.y_l || a.flipped != b.flipped) {
        corpus_same = false;
        break;
      }
    }
  report("corpus translation", corpus_serial, corpus_parallel, corpus_same);

  // ---- batch gradients ----------------------------------------------------
  const auto bench_gradient = [&](const char* name, LanguageModel&& policy_in, int batch_pairs,
                                  int reps) {
    const LanguageModel policy = std::move(policy_in);
    const LanguageModel reference = policy.snapshot_reference();
    const auto dominant = serial_corpus.pairs_of("dom");
    std::vector<BatchItem> batch;
    for (const PreferenceExample& ex : serial_corpus.examples) {
      if (ex.language == "dom") continue;
      batch.push_back(BatchItem{&ex, dominant.at(ex.pair_id)});
      if (static_cast<int>(batch.size()) == batch_pairs) break;
    }
    const ObjectiveSpec spec;  // mpo defaults
    ValuedGrad serial_grad, parallel_grad;
    const double t_serial = time_best_of(reps, [&] {
      serial_grad =
          batch_objective(spec, policy, reference, batch, nullptr, nullptr, ExecMode::serial);
    });
    const double t_parallel = time_best_of(reps, [&] {
      parallel_grad =
          batch_objective(spec, policy, reference, batch, nullptr, nullptr, ExecMode::parallel);
    });
    const bool identical = serial_grad.value == parallel_grad.value &&
                           same_bits(serial_grad.grad, parallel_grad.grad);
    report(name, t_serial, t_parallel, identical);
  };
  bench_gradient("tabular batch gradient",
                 LanguageModel::tabular(manifest.vocab_size, 2, 0.05, 11), 64, 5);
  bench_gradient("transformer batch grad",
                 LanguageModel::transformer(manifest.vocab_size, TransformerConfig{}, 11), 16, 3);

  // ---- ASR decoding -------------------------------------------------------
  {
    const LanguageModel model = LanguageModel::transformer(manifest.vocab_size,
                                                           TransformerConfig{}, 19);
    std::vector<TokenSeq> prompts;
    for (const PreferenceExample* ex : serial_corpus.in_language("lo1"))
      prompts.push_back(ex->x);
    double asr_serial_value = 0.0, asr_parallel_value = 0.0;
    const double t_serial = time_best_of(3, [&] {
      asr_serial_value = asr(model, prompts, manifest, "lo1", 12, ExecMode::serial);
    });
    const double t_parallel = time_best_of(3, [&] {
      asr_parallel_value = asr(model, prompts, manifest, "lo1", 12, ExecMode::parallel);
    });
    report("asr greedy decode", t_serial, t_parallel, asr_serial_value == asr_parallel_value);
  }

  std::printf("\nnote: serial and parallel paths must agree bitwise; any MISMATCH above "
              "is a bug, not noise.\n");
  return 0;
}
