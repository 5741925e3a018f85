#pragma once

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "protoner/tensor.hpp"

namespace protoner {

struct PrototypeSet {
  std::map<std::string, Vec> class_protos;  // includes "O"
  Vec span_entity;
  Vec span_nonentity;
  bool has_span = false;
};

struct TokenPrediction {
  std::map<std::string, double> scores;  // class -> log score
  std::string predicted;                 // argmax; ties broken lexicographically
};

// Cross-episode prototype knowledge: exponential blend with weight lambda on
// the stored vector.
struct PrototypeMemory {
  std::map<std::string, Vec> protos;
  double lambda = 0.5;
};

std::map<std::string, Vec> class_prototypes(
    const std::map<std::string, std::vector<Vec>>& by_label);

double sq_euclid(std::span<const double> a, std::span<const double> b);

// Convex weights over one class's supports: softmax_i(-sq_euclid(q,s_i)/tau).
Vec reweight_supports(const Vec& query, const std::vector<Vec>& supports,
                      double tau);

std::map<std::string, Vec> reweighted_prototypes(
    const Vec& query, const std::map<std::string, std::vector<Vec>>& by_label,
    double tau);

// (entity mean, non-entity mean); both groups must be non-empty.
std::pair<Vec, Vec> span_prototypes(const std::vector<Vec>& entity,
                                    const std::vector<Vec>& nonentity);

// (log p_entity, log p_nonentity): log-softmax over negative squared
// distances to the two span prototypes.
std::pair<double, double> span_scores(const Vec& token, const Vec& proto_entity,
                                      const Vec& proto_nonentity);

// Additive log-space fusion; log-probabilities are clamped at -30 before the
// addition. Entity classes receive log p_entity, "O" receives log p_nonentity.
TokenPrediction fuse_logits(const std::map<std::string, double>& class_logprobs,
                            double log_p_entity, double log_p_nonentity);

std::string argmax_label(const std::map<std::string, double>& scores);

struct ClassifyFlags {
  bool use_reweighting = false;
  bool use_span = false;
};

// Nearest-prototype classification of every query token. When reweighting is
// on, class prototypes are recomputed per query token from `support_by_label`
// and blended with `memory` (if given) exactly as the precomputed set was.
std::vector<TokenPrediction> classify_tokens(
    const Matrix& query_embeddings, const PrototypeSet& protos,
    const ClassifyFlags& flags,
    const std::map<std::string, std::vector<Vec>>& support_by_label,
    double tau, const PrototypeMemory* memory = nullptr);

}  // namespace protoner
