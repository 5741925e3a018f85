#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "protoner/corpus.hpp"
#include "protoner/encoder.hpp"
#include "protoner/episodes.hpp"
#include "protoner/intervention.hpp"
#include "protoner/objective.hpp"

namespace protoner {

enum class FlagSetting { automatic, on, off };

struct RunConfig {
  int way = 5;
  int shot_lo = 1;
  int shot_hi = 2;
  int query_per_class = 1;
  int episodes_train = 2000;
  int episodes_eval = 500;
  double learning_rate = 1e-4;
  int batch_size = 20;  // episodes per optimizer step
  int max_len = 32;
  double dropout = 0.1;
  double mmd_weight = 1.0;
  std::string mmd_target = "query";  // "query" | "test_support"
  FlagSetting span_detection = FlagSetting::automatic;
  FlagSetting context_intervention = FlagSetting::automatic;
  FlagSetting prototype_intervention = FlagSetting::automatic;
  FlagSetting sample_reweighting = FlagSetting::automatic;
  double lambda = 0.5;
  double tau = 1.0;
  std::uint64_t seed = 1;
  // tiny-encoder profile
  int encoder_dim = 32;
  int hash_buckets = 4096;
  int context_window = 1;
  // extras
  std::string pool_scope = "support";  // "support" | "corpus"
  bool memory_at_test = true;
  int mmd_max_batch = 256;
  std::vector<double> mmd_bandwidths;  // empty = median heuristic

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

struct ResolvedFlags {
  bool span = true;
  bool ci = false;
  bool sr = false;
  bool pi = false;
};

// auto defaults: span on; context intervention on iff shot_hi > 2; prototype
// intervention and sample reweighting on iff shot_hi <= 2.
ResolvedFlags resolve_flags(const RunConfig& config);

EncoderConfig encoder_config_of(const RunConfig& config);
MMDConfig mmd_config_of(const RunConfig& config);

struct EpisodeMetrics {
  long tp = 0;
  long fp = 0;
  long fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

EpisodeMetrics metrics_from_counts(long tp, long fp, long fn);
// Exact (start, end, label) matching between one aligned pair of span sets.
EpisodeMetrics span_f1(const std::vector<Span>& gold, const std::vector<Span>& pred);

struct StepRecord {
  int step = 0;
  int episode_id = 0;
  double ce = 0.0;
  double mmd = 0.0;
  double total = 0.0;
  long tp = 0;
  long fp = 0;
  long fn = 0;
};

struct TrainResult {
  EncoderState encoder;
  PrototypeMemory memory;
  std::vector<StepRecord> steps;
  std::string metrics_jsonl;
  std::set<std::string> train_classes;
  RunConfig config;
};

// Episodic training. `mmd_target_corpus` supplies the transductive target
// when config.mmd_target == "test_support". `log_sink`, when given, receives
// metric records (and the diagnostic record on abort) as they are produced.
TrainResult train(const RunConfig& config, const Corpus& corpus,
                  const Corpus* mmd_target_corpus = nullptr,
                  std::ostream* log_sink = nullptr);

struct EpisodeEvalRecord {
  int episode_id = 0;
  double ce = 0.0;
  long tp = 0;
  long fp = 0;
  long fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct EvalResult {
  EpisodeMetrics micro;
  double f1_mean = 0.0;
  double f1_std = 0.0;
  std::vector<EpisodeEvalRecord> episodes;
  std::string metrics_jsonl;
  PrototypeMemory memory;  // state after the run (memory_at_test updates)
};

// Predicted label sequences for an episode's query sentences; lets tests plug
// oracle predictors into the aggregation path.
using ClassifyHook =
    std::function<std::vector<std::vector<std::string>>(const Episode&)>;

EvalResult evaluate(const EncoderState& encoder, const PrototypeMemory& memory,
                    const RunConfig& config, const Corpus& eval_corpus,
                    const std::set<std::string>& train_classes,
                    const ClassifyHook& hook = nullptr);

// One evaluation episode against explicit prototypes/memory; exposed for the
// crafted cross-episode scenarios.
struct EpisodeEvalOutput {
  std::vector<std::vector<std::string>> predictions;
  std::map<std::string, Vec> current_protos;
};
EpisodeEvalOutput eval_episode(const EncoderState& encoder, const Episode& episode,
                               const ResolvedFlags& flags, double tau,
                               PrototypeMemory* memory, bool memory_at_test);

struct AblationRow {
  bool span = false;
  bool ci = false;
  bool sr = false;
  bool pi = false;
  std::vector<double> f1s;
  double f1_mean = 0.0;
  double f1_std = 0.0;
};

struct AblationTable {
  std::vector<AblationRow> rows;
  std::vector<std::uint64_t> seeds;
};

// The fixed flag matrix: 5 rows for shot_hi <= 2, 3 rows for shot_hi > 2.
std::vector<AblationRow> ablation_rows(int shot_hi);

AblationTable ablate(const RunConfig& config, const Corpus& train_corpus,
                     const Corpus& eval_corpus,
                     const std::vector<std::uint64_t>& seeds,
                     std::ostream* progress = nullptr);

std::string ablation_table_text(const AblationTable& table);

// Per-token feature dump for the plot tooling: source = support features,
// target = query features (or `target_corpus` support features when given).
struct FeatureDump {
  std::vector<std::string> roles;
  std::vector<std::string> labels;
  std::vector<Vec> features;
};

FeatureDump dump_features(const EncoderState& encoder, const RunConfig& config,
                          const Corpus& corpus, int episodes,
                          const Corpus* target_corpus = nullptr);

}  // namespace protoner
