#include "protoner/objective.hpp"

#include <algorithm>
#include <cmath>

#include "protoner/errors.hpp"

namespace protoner {

namespace {

constexpr double kLogClamp = -30.0;

void log_softmax_inplace(std::vector<double>& z) {
  double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - mx);
  double lse = mx + std::log(sum);
  for (double& v : z) v -= lse;
}

std::vector<double> resolve_bandwidths(const std::vector<Vec>& source,
                                       const std::vector<Vec>& target,
                                       const MMDConfig& config) {
  if (!config.bandwidths.empty()) {
    for (double b : config.bandwidths) {
      if (b <= 0.0) throw ConfigError("mmd bandwidths must be positive");
    }
    return config.bandwidths;
  }
  std::vector<const Vec*> pooled;
  pooled.reserve(source.size() + target.size());
  for (const Vec& v : source) pooled.push_back(&v);
  for (const Vec& v : target) pooled.push_back(&v);
  std::vector<double> dists;
  dists.reserve(pooled.size() * (pooled.size() - 1) / 2);
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    for (std::size_t j = i + 1; j < pooled.size(); ++j) {
      dists.push_back(std::sqrt(sq_euclid(*pooled[i], *pooled[j])));
    }
  }
  double median = 1.0;
  if (!dists.empty()) {
    std::size_t k = (dists.size() - 1) / 2;
    std::nth_element(dists.begin(), dists.begin() + k, dists.end());
    median = dists[k];
    if (median <= 0.0) median = 1.0;
  }
  std::vector<double> out;
  for (double m : config.multipliers) out.push_back(m * median);
  return out;
}

std::vector<std::size_t> cap_indices(std::size_t n, int cap) {
  std::vector<std::size_t> idx;
  if (cap <= 0 || n <= static_cast<std::size_t>(cap)) {
    idx.resize(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    return idx;
  }
  // deterministic stride subsample
  idx.reserve(static_cast<std::size_t>(cap));
  double stride = static_cast<double>(n) / cap;
  for (int i = 0; i < cap; ++i) {
    idx.push_back(static_cast<std::size_t>(i * stride));
  }
  return idx;
}

}  // namespace

double cross_entropy(const std::vector<std::map<std::string, double>>& log_scores,
                     const std::vector<std::string>& gold) {
  if (log_scores.size() != gold.size()) {
    throw ConfigError("cross_entropy: score/gold counts differ");
  }
  if (log_scores.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    auto it = log_scores[i].find(gold[i]);
    if (it == log_scores[i].end()) {
      throw ConfigError("cross_entropy: gold label '" + gold[i] +
                        "' missing from the score map");
    }
    sum -= it->second;
  }
  return sum / static_cast<double>(gold.size());
}

double mmd(const std::vector<Vec>& source, const std::vector<Vec>& target,
           const MMDConfig& config) {
  if (source.empty() || target.empty()) {
    throw ConfigError("mmd: both feature sets must be non-empty");
  }
  std::vector<double> sigmas = resolve_bandwidths(source, target, config);
  const double m = static_cast<double>(source.size());
  const double n = static_cast<double>(target.size());

  double acc = 0.0;
  for (double sigma : sigmas) {
    const double inv = 1.0 / (2.0 * sigma * sigma);
    double ss = 0.0, tt = 0.0, st = 0.0;
    for (const Vec& a : source) {
      for (const Vec& b : source) ss += std::exp(-sq_euclid(a, b) * inv);
      for (const Vec& b : target) st += std::exp(-sq_euclid(a, b) * inv);
    }
    for (const Vec& a : target) {
      for (const Vec& b : target) tt += std::exp(-sq_euclid(a, b) * inv);
    }
    acc += ss / (m * m) + tt / (n * n) - 2.0 * st / (m * n);
  }
  double value = acc / static_cast<double>(sigmas.size());
  return std::max(0.0, value);
}

LossBreakdown total_loss(double ce, double mmd, double mmd_weight) {
  if (!std::isfinite(ce) || !std::isfinite(mmd) || !std::isfinite(mmd_weight)) {
    throw ConfigError("total_loss: non-finite input");
  }
  LossBreakdown out;
  out.ce = ce;
  out.mmd = mmd;
  out.mmd_weight = mmd_weight;
  out.total = ce + mmd_weight * mmd;
  return out;
}

namespace {

struct TokenRef {
  int sentence = 0;
  int row = 0;
};

// Everything the backward pass needs about one query token.
struct QueryTokenCache {
  TokenRef ref;
  int gold = -1;  // class index, -1 when the gold label is not a candidate
  std::vector<double> z;       // class logits (-d^2)
  std::vector<double> lp;      // log-softmax of z
  std::vector<std::vector<double>> alphas;  // per class, reweighting weights
  std::vector<Vec> protos;     // per class, the prototype used (post blend)
  double y_e = 0.0, y_n = 0.0;   // span logits
  double lp_e = 0.0, lp_n = 0.0; // span log-probs
  std::vector<double> f;       // fused scores
  std::vector<double> final_lp;
};

}  // namespace

EpisodeLossResult episode_loss(const EncoderState& encoder, const Episode& episode,
                               const LossFlags& flags, const PrototypeMemory* memory,
                               const MMDConfig& mmd_config, double mmd_weight,
                               double tau, bool train_mode, std::uint64_t dropout_seed,
                               const std::vector<Sentence>* mmd_target_sentences,
                               EncoderGrads* grads_out) {
  const int dim = encoder.config.dim;
  const bool want_grads = grads_out != nullptr;
  Rng dropout_rng(mix_seed(dropout_seed, 23));

  // ---- encode ----
  auto encode_set = [&](const std::vector<Sentence>& sents,
                        std::vector<Matrix>& H, std::vector<EncodeCache>& caches) {
    H.reserve(sents.size());
    caches.resize(want_grads ? sents.size() : 0);
    for (std::size_t i = 0; i < sents.size(); ++i) {
      EncodeCache* cache = want_grads ? &caches[i] : nullptr;
      H.push_back(encode_tokens(encoder, sents[i], train_mode, &dropout_rng, cache));
    }
  };

  std::vector<Matrix> Hs, Hq, Ht;
  std::vector<EncodeCache> Cs, Cq, Ct;
  encode_set(episode.support, Hs, Cs);
  encode_set(episode.query, Hq, Cq);
  const bool transductive = mmd_target_sentences != nullptr;
  if (transductive) encode_set(*mmd_target_sentences, Ht, Ct);

  // ---- group support tokens by label ----
  std::map<std::string, std::vector<TokenRef>> groups;
  std::vector<TokenRef> entity_refs, nonentity_refs, support_refs;
  for (std::size_t s = 0; s < episode.support.size(); ++s) {
    for (int t = 0; t < Hs[s].rows; ++t) {
      TokenRef ref{static_cast<int>(s), t};
      const std::string& label = episode.support[s].labels[static_cast<std::size_t>(t)];
      groups[label].push_back(ref);
      (label == kOutsideLabel ? nonentity_refs : entity_refs).push_back(ref);
      support_refs.push_back(ref);
    }
  }
  auto vec_at = [dim](const std::vector<Matrix>& H, TokenRef r) {
    return std::span<const double>(H[static_cast<std::size_t>(r.sentence)].row(r.row),
                                   static_cast<std::size_t>(dim));
  };

  std::vector<std::string> class_names;
  for (const auto& [label, refs] : groups) {
    if (refs.empty()) throw ConfigError("class '" + label + "' has no support tokens");
    class_names.push_back(label);
  }
  const int n_classes = static_cast<int>(class_names.size());

  // unweighted means (also the memory update payload)
  std::map<std::string, Vec> current_protos;
  for (const auto& [label, refs] : groups) {
    Vec p(static_cast<std::size_t>(dim), 0.0);
    for (TokenRef r : refs) axpy(1.0, vec_at(Hs, r), std::span<double>(p));
    for (double& v : p) v /= static_cast<double>(refs.size());
    current_protos[label] = std::move(p);
  }

  Vec span_e, span_n;
  if (flags.span) {
    if (entity_refs.empty() || nonentity_refs.empty()) {
      throw ConfigError("span prototypes need entity and non-entity support tokens");
    }
    span_e.assign(static_cast<std::size_t>(dim), 0.0);
    span_n.assign(static_cast<std::size_t>(dim), 0.0);
    for (TokenRef r : entity_refs) axpy(1.0, vec_at(Hs, r), std::span<double>(span_e));
    for (TokenRef r : nonentity_refs) axpy(1.0, vec_at(Hs, r), std::span<double>(span_n));
    for (double& v : span_e) v /= static_cast<double>(entity_refs.size());
    for (double& v : span_n) v /= static_cast<double>(nonentity_refs.size());
  }

  auto blend_with_memory = [&](const std::string& label, Vec cur) {
    if (flags.memory && memory != nullptr) {
      auto it = memory->protos.find(label);
      if (it != memory->protos.end()) {
        const double lam = memory->lambda;
        for (std::size_t i = 0; i < cur.size(); ++i) {
          cur[i] = lam * it->second[i] + (1.0 - lam) * cur[i];
        }
      }
    }
    return cur;
  };

  std::map<std::string, Vec> combined_protos;
  for (const auto& [label, p] : current_protos) {
    combined_protos[label] = blend_with_memory(label, p);
  }

  // ---- forward over query tokens ----
  std::vector<QueryTokenCache> qcache;
  double ce_sum = 0.0;
  long n_query_tokens = 0;
  EpisodeLossResult result;

  for (std::size_t s = 0; s < episode.query.size(); ++s) {
    std::vector<std::string> predicted_labels;
    for (int t = 0; t < Hq[s].rows; ++t) {
      QueryTokenCache qc;
      qc.ref = TokenRef{static_cast<int>(s), t};
      Vec q(Hq[s].row(t), Hq[s].row(t) + dim);

      qc.protos.resize(static_cast<std::size_t>(n_classes));
      if (flags.reweight) qc.alphas.resize(static_cast<std::size_t>(n_classes));
      for (int c = 0; c < n_classes; ++c) {
        const std::string& label = class_names[static_cast<std::size_t>(c)];
        if (flags.reweight) {
          const auto& refs = groups[label];
          std::vector<double> zz(refs.size());
          for (std::size_t i = 0; i < refs.size(); ++i) {
            zz[i] = -sq_euclid(q, vec_at(Hs, refs[i])) / tau;
          }
          log_softmax_inplace(zz);
          Vec p(static_cast<std::size_t>(dim), 0.0);
          std::vector<double> alpha(refs.size());
          for (std::size_t i = 0; i < refs.size(); ++i) {
            alpha[i] = std::exp(zz[i]);
            axpy(alpha[i], vec_at(Hs, refs[i]), std::span<double>(p));
          }
          qc.alphas[static_cast<std::size_t>(c)] = std::move(alpha);
          qc.protos[static_cast<std::size_t>(c)] = blend_with_memory(label, std::move(p));
        } else {
          qc.protos[static_cast<std::size_t>(c)] = combined_protos[label];
        }
      }

      qc.z.resize(static_cast<std::size_t>(n_classes));
      for (int c = 0; c < n_classes; ++c) {
        qc.z[static_cast<std::size_t>(c)] =
            -sq_euclid(q, qc.protos[static_cast<std::size_t>(c)]);
      }
      qc.lp = qc.z;
      log_softmax_inplace(qc.lp);

      if (flags.span) {
        qc.y_e = -sq_euclid(q, span_e);
        qc.y_n = -sq_euclid(q, span_n);
        std::vector<double> sp = {qc.y_e, qc.y_n};
        log_softmax_inplace(sp);
        qc.lp_e = sp[0];
        qc.lp_n = sp[1];
        qc.f.resize(static_cast<std::size_t>(n_classes));
        for (int c = 0; c < n_classes; ++c) {
          const std::string& label = class_names[static_cast<std::size_t>(c)];
          double span_term = label == kOutsideLabel ? qc.lp_n : qc.lp_e;
          qc.f[static_cast<std::size_t>(c)] =
              std::max(qc.lp[static_cast<std::size_t>(c)], kLogClamp) +
              std::max(span_term, kLogClamp);
        }
        qc.final_lp = qc.f;
        log_softmax_inplace(qc.final_lp);
      } else {
        qc.final_lp = qc.lp;
      }

      const std::string& gold = episode.query[s].labels[static_cast<std::size_t>(t)];
      auto it = std::find(class_names.begin(), class_names.end(), gold);
      if (it == class_names.end()) {
        throw ConfigError("query gold label '" + gold +
                          "' has no support prototype in this episode");
      }
      qc.gold = static_cast<int>(it - class_names.begin());
      ce_sum -= qc.final_lp[static_cast<std::size_t>(qc.gold)];
      ++n_query_tokens;

      int best = 0;
      for (int c = 1; c < n_classes; ++c) {
        if (qc.final_lp[static_cast<std::size_t>(c)] >
            qc.final_lp[static_cast<std::size_t>(best)]) {
          best = c;
        }
      }
      predicted_labels.push_back(class_names[static_cast<std::size_t>(best)]);
      qcache.push_back(std::move(qc));
    }

    // span-level counts against the (possibly truncated) gold labels
    Sentence pred_sent;
    pred_sent.tokens.assign(predicted_labels.size(), "_");
    pred_sent.labels = predicted_labels;
    Sentence gold_sent;
    gold_sent.tokens.assign(predicted_labels.size(), "_");
    gold_sent.labels.assign(episode.query[s].labels.begin(),
                            episode.query[s].labels.begin() +
                                static_cast<long>(predicted_labels.size()));
    auto pred_spans = extract_spans(pred_sent);
    auto gold_spans = extract_spans(gold_sent);
    for (const Span& sp : pred_spans) {
      if (std::find(gold_spans.begin(), gold_spans.end(), sp) != gold_spans.end()) {
        ++result.tp;
      } else {
        ++result.fp;
      }
    }
    for (const Span& sp : gold_spans) {
      if (std::find(pred_spans.begin(), pred_spans.end(), sp) == pred_spans.end()) {
        ++result.fn;
      }
    }
    result.query_predictions.push_back(std::move(predicted_labels));
  }

  const double ce = n_query_tokens > 0 ? ce_sum / static_cast<double>(n_query_tokens) : 0.0;

  // ---- MMD ----
  std::vector<TokenRef> target_refs;
  const std::vector<Matrix>* Htarget = &Hq;
  if (transductive) {
    Htarget = &Ht;
    for (std::size_t s = 0; s < Ht.size(); ++s) {
      for (int t = 0; t < Ht[s].rows; ++t) {
        target_refs.push_back(TokenRef{static_cast<int>(s), t});
      }
    }
  } else {
    for (std::size_t s = 0; s < Hq.size(); ++s) {
      for (int t = 0; t < Hq[s].rows; ++t) {
        target_refs.push_back(TokenRef{static_cast<int>(s), t});
      }
    }
  }

  double mmd_raw = 0.0;
  std::vector<std::size_t> src_sel, tgt_sel;
  std::vector<double> sigmas;
  const bool use_mmd = mmd_weight != 0.0 && !support_refs.empty() && !target_refs.empty();
  if (use_mmd) {
    src_sel = cap_indices(support_refs.size(), mmd_config.max_batch);
    tgt_sel = cap_indices(target_refs.size(), mmd_config.max_batch);
    std::vector<Vec> src_feats, tgt_feats;
    src_feats.reserve(src_sel.size());
    tgt_feats.reserve(tgt_sel.size());
    for (std::size_t i : src_sel) {
      auto v = vec_at(Hs, support_refs[i]);
      src_feats.emplace_back(v.begin(), v.end());
    }
    for (std::size_t i : tgt_sel) {
      auto v = vec_at(*Htarget, target_refs[i]);
      tgt_feats.emplace_back(v.begin(), v.end());
    }
    sigmas = resolve_bandwidths(src_feats, tgt_feats, mmd_config);
    MMDConfig fixed;
    fixed.bandwidths = sigmas;
    mmd_raw = mmd(src_feats, tgt_feats, fixed);
  }

  result.loss = total_loss(ce, mmd_raw, mmd_weight);
  result.current_protos = current_protos;
  if (!std::isfinite(result.loss.total)) {
    throw ConfigError("non-finite episode loss");
  }
  if (!want_grads) return result;

  // ---- backward ----
  std::vector<Matrix> dHs(Hs.size()), dHq(Hq.size()), dHt(Ht.size());
  for (std::size_t i = 0; i < Hs.size(); ++i) dHs[i] = Matrix(Hs[i].rows, dim);
  for (std::size_t i = 0; i < Hq.size(); ++i) dHq[i] = Matrix(Hq[i].rows, dim);
  for (std::size_t i = 0; i < Ht.size(); ++i) dHt[i] = Matrix(Ht[i].rows, dim);

  auto grad_at = [&](std::vector<Matrix>& dH, TokenRef r) {
    return std::span<double>(dH[static_cast<std::size_t>(r.sentence)].row(r.row),
                             static_cast<std::size_t>(dim));
  };

  // accumulated upstream gradient for the shared (non-reweighted) prototypes
  std::map<std::string, Vec> dproto_shared;
  for (const std::string& c : class_names) {
    dproto_shared[c] = Vec(static_cast<std::size_t>(dim), 0.0);
  }
  Vec dspan_e(static_cast<std::size_t>(dim), 0.0);
  Vec dspan_n(static_cast<std::size_t>(dim), 0.0);
  const double inv_nq = n_query_tokens > 0 ? 1.0 / static_cast<double>(n_query_tokens) : 0.0;

  for (QueryTokenCache& qc : qcache) {
    std::span<double> dq =
        grad_at(dHq, qc.ref);
    Vec q(Hq[static_cast<std::size_t>(qc.ref.sentence)].row(qc.ref.row),
          Hq[static_cast<std::size_t>(qc.ref.sentence)].row(qc.ref.row) + dim);

    // d(ce)/d(final input scores)
    std::vector<double> dlp(static_cast<std::size_t>(n_classes), 0.0);
    double dsp_e = 0.0, dsp_n = 0.0;
    if (flags.span) {
      std::vector<double> df(static_cast<std::size_t>(n_classes));
      for (int c = 0; c < n_classes; ++c) {
        double p = std::exp(qc.final_lp[static_cast<std::size_t>(c)]);
        df[static_cast<std::size_t>(c)] = (p - (c == qc.gold ? 1.0 : 0.0)) * inv_nq;
      }
      for (int c = 0; c < n_classes; ++c) {
        if (qc.lp[static_cast<std::size_t>(c)] > kLogClamp) {
          dlp[static_cast<std::size_t>(c)] = df[static_cast<std::size_t>(c)];
        }
        const std::string& label = class_names[static_cast<std::size_t>(c)];
        if (label == kOutsideLabel) {
          if (qc.lp_n > kLogClamp) dsp_n += df[static_cast<std::size_t>(c)];
        } else {
          if (qc.lp_e > kLogClamp) dsp_e += df[static_cast<std::size_t>(c)];
        }
      }
    } else {
      for (int c = 0; c < n_classes; ++c) {
        double p = std::exp(qc.lp[static_cast<std::size_t>(c)]);
        dlp[static_cast<std::size_t>(c)] =
            (p - (c == qc.gold ? 1.0 : 0.0)) * inv_nq;
      }
      // fall through to the generic log-softmax backward with dlp as the
      // already-folded gradient: dz = dlp here because the fold above already
      // produced softmax - onehot. Mark by clearing to avoid double backward.
    }

    // log-softmax backward for class scores: dz_c = dlp_c - p_c * sum(dlp)
    std::vector<double> dz(static_cast<std::size_t>(n_classes));
    if (flags.span) {
      double total_dlp = 0.0;
      for (double v : dlp) total_dlp += v;
      for (int c = 0; c < n_classes; ++c) {
        double p = std::exp(qc.lp[static_cast<std::size_t>(c)]);
        dz[static_cast<std::size_t>(c)] = dlp[static_cast<std::size_t>(c)] - p * total_dlp;
      }
    } else {
      dz = dlp;  // already softmax - onehot
    }

    // span log-softmax backward
    double dy_e = 0.0, dy_n = 0.0;
    if (flags.span) {
      double pe = std::exp(qc.lp_e);
      double pn = std::exp(qc.lp_n);
      double tot = dsp_e + dsp_n;
      dy_e = dsp_e - pe * tot;
      dy_n = dsp_n - pn * tot;
      // y = -sq_euclid(q, span proto)
      for (int i = 0; i < dim; ++i) {
        double de = q[static_cast<std::size_t>(i)] - span_e[static_cast<std::size_t>(i)];
        double dn = q[static_cast<std::size_t>(i)] - span_n[static_cast<std::size_t>(i)];
        dq[static_cast<std::size_t>(i)] += dy_e * (-2.0) * de + dy_n * (-2.0) * dn;
        dspan_e[static_cast<std::size_t>(i)] += dy_e * 2.0 * de;
        dspan_n[static_cast<std::size_t>(i)] += dy_n * 2.0 * dn;
      }
    }

    // class logits: z_c = -sq_euclid(q, proto_c)
    for (int c = 0; c < n_classes; ++c) {
      const double g = dz[static_cast<std::size_t>(c)];
      if (g == 0.0) continue;
      const Vec& proto = qc.protos[static_cast<std::size_t>(c)];
      Vec dproto(static_cast<std::size_t>(dim));
      for (int i = 0; i < dim; ++i) {
        double d = q[static_cast<std::size_t>(i)] - proto[static_cast<std::size_t>(i)];
        dq[static_cast<std::size_t>(i)] += g * (-2.0) * d;
        dproto[static_cast<std::size_t>(i)] = g * 2.0 * d;
      }

      // memory blend scales the flow into the current-episode prototype
      const std::string& label = class_names[static_cast<std::size_t>(c)];
      double mem_scale = 1.0;
      if (flags.memory && memory != nullptr && memory->protos.contains(label)) {
        mem_scale = 1.0 - memory->lambda;
      }

      if (flags.reweight) {
        const auto& refs = groups[label];
        const auto& alpha = qc.alphas[static_cast<std::size_t>(c)];
        // p = sum alpha_i s_i with alpha = softmax(-d^2/tau)
        // dL/dalpha_i = g_vec . s_i ; dz_i = alpha_i (dalpha_i - sum_j alpha_j dalpha_j)
        std::vector<double> dalpha(refs.size());
        double mix = 0.0;
        for (std::size_t i = 0; i < refs.size(); ++i) {
          dalpha[i] = mem_scale * dot(std::span<const double>(dproto), vec_at(Hs, refs[i]));
          mix += alpha[i] * dalpha[i];
        }
        for (std::size_t i = 0; i < refs.size(); ++i) {
          double dz_i = alpha[i] * (dalpha[i] - mix);
          auto s_i = vec_at(Hs, refs[i]);
          auto ds_i = grad_at(dHs, refs[i]);
          for (int k = 0; k < dim; ++k) {
            double diff = q[static_cast<std::size_t>(k)] - s_i[static_cast<std::size_t>(k)];
            ds_i[static_cast<std::size_t>(k)] +=
                mem_scale * alpha[i] * dproto[static_cast<std::size_t>(k)] +
                dz_i * 2.0 * diff / tau;
            dq[static_cast<std::size_t>(k)] += dz_i * (-2.0) * diff / tau;
          }
        }
      } else {
        axpy(mem_scale, dproto, std::span<double>(dproto_shared[label]));
      }
    }
  }

  // distribute shared prototype gradients over class members
  if (!flags.reweight) {
    for (const auto& [label, refs] : groups) {
      const Vec& dp = dproto_shared[label];
      const double inv = 1.0 / static_cast<double>(refs.size());
      for (TokenRef r : refs) {
        auto ds = grad_at(dHs, r);
        for (int k = 0; k < dim; ++k) {
          ds[static_cast<std::size_t>(k)] += dp[static_cast<std::size_t>(k)] * inv;
        }
      }
    }
  }
  if (flags.span) {
    const double inv_e = 1.0 / static_cast<double>(entity_refs.size());
    for (TokenRef r : entity_refs) {
      auto ds = grad_at(dHs, r);
      for (int k = 0; k < dim; ++k) {
        ds[static_cast<std::size_t>(k)] += dspan_e[static_cast<std::size_t>(k)] * inv_e;
      }
    }
    const double inv_n = 1.0 / static_cast<double>(nonentity_refs.size());
    for (TokenRef r : nonentity_refs) {
      auto ds = grad_at(dHs, r);
      for (int k = 0; k < dim; ++k) {
        ds[static_cast<std::size_t>(k)] += dspan_n[static_cast<std::size_t>(k)] * inv_n;
      }
    }
  }

  // MMD backward (clamp gate: zero gradient when the raw estimate was <= 0)
  if (use_mmd && mmd_raw > 0.0) {
    const double B = static_cast<double>(sigmas.size());
    const double m = static_cast<double>(src_sel.size());
    const double n = static_cast<double>(tgt_sel.size());
    auto coef = [&](double d2) {
      double c = 0.0;
      for (double sigma : sigmas) {
        c += std::exp(-d2 / (2.0 * sigma * sigma)) / (sigma * sigma);
      }
      return c / B;
    };
    std::vector<Matrix>& dHtarget = transductive ? dHt : dHq;
    for (std::size_t ia = 0; ia < src_sel.size(); ++ia) {
      auto a = vec_at(Hs, support_refs[src_sel[ia]]);
      auto da = grad_at(dHs, support_refs[src_sel[ia]]);
      for (std::size_t jb = 0; jb < src_sel.size(); ++jb) {
        if (ia == jb) continue;
        auto b = vec_at(Hs, support_refs[src_sel[jb]]);
        double c = coef(sq_euclid(a, b));
        double scale = mmd_weight * (-2.0 / (m * m)) * c;
        for (int k = 0; k < dim; ++k) {
          da[static_cast<std::size_t>(k)] +=
              scale * (a[static_cast<std::size_t>(k)] - b[static_cast<std::size_t>(k)]);
        }
      }
      for (std::size_t jb = 0; jb < tgt_sel.size(); ++jb) {
        auto b = vec_at(*Htarget, target_refs[tgt_sel[jb]]);
        double c = coef(sq_euclid(a, b));
        double scale = mmd_weight * (2.0 / (m * n)) * c;
        for (int k = 0; k < dim; ++k) {
          da[static_cast<std::size_t>(k)] +=
              scale * (a[static_cast<std::size_t>(k)] - b[static_cast<std::size_t>(k)]);
        }
      }
    }
    for (std::size_t ia = 0; ia < tgt_sel.size(); ++ia) {
      auto a = vec_at(*Htarget, target_refs[tgt_sel[ia]]);
      auto da = grad_at(dHtarget, target_refs[tgt_sel[ia]]);
      for (std::size_t jb = 0; jb < tgt_sel.size(); ++jb) {
        if (ia == jb) continue;
        auto b = vec_at(*Htarget, target_refs[tgt_sel[jb]]);
        double c = coef(sq_euclid(a, b));
        double scale = mmd_weight * (-2.0 / (n * n)) * c;
        for (int k = 0; k < dim; ++k) {
          da[static_cast<std::size_t>(k)] +=
              scale * (a[static_cast<std::size_t>(k)] - b[static_cast<std::size_t>(k)]);
        }
      }
      for (std::size_t jb = 0; jb < src_sel.size(); ++jb) {
        auto b = vec_at(Hs, support_refs[src_sel[jb]]);
        double c = coef(sq_euclid(a, b));
        double scale = mmd_weight * (2.0 / (m * n)) * c;
        for (int k = 0; k < dim; ++k) {
          da[static_cast<std::size_t>(k)] +=
              scale * (a[static_cast<std::size_t>(k)] - b[static_cast<std::size_t>(k)]);
        }
      }
    }
  }

  // ---- push token gradients through the encoder ----
  for (std::size_t s = 0; s < episode.support.size(); ++s) {
    encode_backward(encoder, episode.support[s], Cs[s], dHs[s], *grads_out);
  }
  for (std::size_t s = 0; s < episode.query.size(); ++s) {
    encode_backward(encoder, episode.query[s], Cq[s], dHq[s], *grads_out);
  }
  if (transductive) {
    for (std::size_t s = 0; s < mmd_target_sentences->size(); ++s) {
      encode_backward(encoder, (*mmd_target_sentences)[s], Ct[s], dHt[s], *grads_out);
    }
  }

  return result;
}

}  // namespace protoner
