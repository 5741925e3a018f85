#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "protoner/encoder.hpp"
#include "protoner/episodes.hpp"
#include "protoner/protonet.hpp"

namespace protoner {

struct MMDConfig {
  // Explicit kernel widths; empty means median heuristic with `multipliers`
  // applied to the median pairwise distance of the pooled batches.
  std::vector<double> bandwidths;
  std::vector<double> multipliers = {0.5, 1.0, 2.0, 4.0, 8.0};
  // Deterministic stride subsample cap per side (0 = unlimited). Keeps the
  // quadratic estimator affordable on augmented episodes.
  int max_batch = 0;
};

struct LossBreakdown {
  double ce = 0.0;
  double mmd = 0.0;
  double total = 0.0;
  double mmd_weight = 0.0;
};

// Mean over tokens of -log_score(gold). Scores must be log-softmax outputs.
double cross_entropy(const std::vector<std::map<std::string, double>>& log_scores,
                     const std::vector<std::string>& gold);

// Biased (V-statistic) squared-MMD estimate with Gaussian kernels, averaged
// over bandwidths and clamped at 0.
double mmd(const std::vector<Vec>& source, const std::vector<Vec>& target,
           const MMDConfig& config);

LossBreakdown total_loss(double ce, double mmd, double mmd_weight);

struct LossFlags {
  bool span = false;
  bool reweight = false;
  bool memory = false;
};

struct EpisodeLossResult {
  LossBreakdown loss;
  std::map<std::string, Vec> current_protos;  // unweighted means, for memory
  long tp = 0;
  long fp = 0;
  long fn = 0;
  std::vector<std::vector<std::string>> query_predictions;
};

// Full forward pass of one episode (encode, prototypes, reweighting, span
// fusion, CE + weighted MMD) with an optional hand-written backward into
// `grads_out`. `memory` contributes frozen prototype blends when flags.memory
// is set. MMD source = support token features; target = query token features,
// or the features of `mmd_target_sentences` when given (transductive mode).
EpisodeLossResult episode_loss(const EncoderState& encoder, const Episode& episode,
                               const LossFlags& flags, const PrototypeMemory* memory,
                               const MMDConfig& mmd_config, double mmd_weight,
                               double tau, bool train_mode, std::uint64_t dropout_seed,
                               const std::vector<Sentence>* mmd_target_sentences,
                               EncoderGrads* grads_out);

}  // namespace protoner
