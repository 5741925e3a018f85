#include "protoner/protonet.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "protoner/corpus.hpp"
#include "protoner/errors.hpp"

namespace protoner {

namespace {

constexpr double kLogClamp = -30.0;

double clamp_log(double x) { return std::max(x, kLogClamp); }

Vec mean_of(const std::vector<Vec>& vecs) {
  Vec m(vecs.front().size(), 0.0);
  for (const Vec& v : vecs) {
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += v[i];
  }
  const double inv = 1.0 / static_cast<double>(vecs.size());
  for (double& x : m) x *= inv;
  return m;
}

void log_softmax_inplace(std::vector<double>& z) {
  double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - mx);
  double lse = mx + std::log(sum);
  for (double& v : z) v -= lse;
}

}  // namespace

std::map<std::string, Vec> class_prototypes(
    const std::map<std::string, std::vector<Vec>>& by_label) {
  std::map<std::string, Vec> protos;
  for (const auto& [label, vecs] : by_label) {
    if (vecs.empty()) {
      throw ConfigError("class '" + label + "' has no support tokens");
    }
    protos[label] = mean_of(vecs);
  }
  return protos;
}

double sq_euclid(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ConfigError("sq_euclid: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

Vec reweight_supports(const Vec& query, const std::vector<Vec>& supports,
                      double tau) {
  if (supports.empty()) throw ConfigError("reweight_supports: empty support set");
  if (tau <= 0.0) throw ConfigError("reweight_supports: tau must be positive");
  std::vector<double> z(supports.size());
  for (std::size_t i = 0; i < supports.size(); ++i) {
    z[i] = -sq_euclid(query, supports[i]) / tau;
  }
  log_softmax_inplace(z);
  Vec alpha(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) alpha[i] = std::exp(z[i]);
  return alpha;
}

std::map<std::string, Vec> reweighted_prototypes(
    const Vec& query, const std::map<std::string, std::vector<Vec>>& by_label,
    double tau) {
  std::map<std::string, Vec> protos;
  for (const auto& [label, vecs] : by_label) {
    Vec alpha = reweight_supports(query, vecs, tau);
    Vec p(query.size(), 0.0);
    for (std::size_t i = 0; i < vecs.size(); ++i) {
      axpy(alpha[i], vecs[i], std::span<double>(p));
    }
    protos[label] = std::move(p);
  }
  return protos;
}

std::pair<Vec, Vec> span_prototypes(const std::vector<Vec>& entity,
                                    const std::vector<Vec>& nonentity) {
  if (entity.empty()) throw ConfigError("span_prototypes: no entity tokens");
  if (nonentity.empty()) throw ConfigError("span_prototypes: no non-entity tokens");
  return {mean_of(entity), mean_of(nonentity)};
}

std::pair<double, double> span_scores(const Vec& token, const Vec& proto_entity,
                                      const Vec& proto_nonentity) {
  std::vector<double> z = {-sq_euclid(token, proto_entity),
                           -sq_euclid(token, proto_nonentity)};
  log_softmax_inplace(z);
  return {z[0], z[1]};
}

std::string argmax_label(const std::map<std::string, double>& scores) {
  // std::map iterates lexicographically, so strict > implements the tie rule
  std::string best;
  double best_score = -std::numeric_limits<double>::infinity();
  for (const auto& [label, s] : scores) {
    if (s > best_score) {
      best_score = s;
      best = label;
    }
  }
  return best;
}

TokenPrediction fuse_logits(const std::map<std::string, double>& class_logprobs,
                            double log_p_entity, double log_p_nonentity) {
  TokenPrediction pred;
  for (const auto& [label, lp] : class_logprobs) {
    double span_term = label == kOutsideLabel ? log_p_nonentity : log_p_entity;
    pred.scores[label] = clamp_log(lp) + clamp_log(span_term);
  }
  pred.predicted = argmax_label(pred.scores);
  return pred;
}

std::vector<TokenPrediction> classify_tokens(
    const Matrix& query_embeddings, const PrototypeSet& protos,
    const ClassifyFlags& flags,
    const std::map<std::string, std::vector<Vec>>& support_by_label,
    double tau, const PrototypeMemory* memory) {
  std::vector<TokenPrediction> out;
  out.reserve(static_cast<std::size_t>(query_embeddings.rows));

  for (int t = 0; t < query_embeddings.rows; ++t) {
    Vec q(query_embeddings.row(t), query_embeddings.row(t) + query_embeddings.cols);

    std::map<std::string, Vec> protos_q;
    if (flags.use_reweighting) {
      protos_q = reweighted_prototypes(q, support_by_label, tau);
    } else {
      protos_q = protos.class_protos;
    }
    if (memory != nullptr) {
      for (auto& [label, p] : protos_q) {
        auto it = memory->protos.find(label);
        if (it == memory->protos.end()) continue;
        const double lam = memory->lambda;
        for (std::size_t i = 0; i < p.size(); ++i) {
          p[i] = lam * it->second[i] + (1.0 - lam) * p[i];
        }
      }
      // remembered classes absent from the episode become extra candidates
      for (const auto& [label, p] : memory->protos) {
        protos_q.emplace(label, p);
      }
    }

    std::vector<std::string> labels;
    std::vector<double> z;
    for (const auto& [label, p] : protos_q) {
      labels.push_back(label);
      z.push_back(-sq_euclid(q, p));
    }
    log_softmax_inplace(z);

    std::map<std::string, double> class_lp;
    for (std::size_t i = 0; i < labels.size(); ++i) class_lp[labels[i]] = z[i];

    if (flags.use_span) {
      if (!protos.has_span) {
        throw ConfigError("span fusion requested without span prototypes");
      }
      auto [lpe, lpn] = span_scores(q, protos.span_entity, protos.span_nonentity);
      out.push_back(fuse_logits(class_lp, lpe, lpn));
    } else {
      TokenPrediction pred;
      pred.scores = std::move(class_lp);
      pred.predicted = argmax_label(pred.scores);
      out.push_back(std::move(pred));
    }
  }
  return out;
}

}  // namespace protoner
