#include "protoner/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <json.hpp>

#include "protoner/errors.hpp"

namespace protoner {

namespace {

// AdamW constants; decay is decoupled from the adaptive step.
constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kEps = 1e-8;
constexpr double kWeightDecay = 0.01;

struct AdamState {
  Matrix m_emb, v_emb, m_mix, v_mix, m_out, v_out;
  long t = 0;

  explicit AdamState(const EncoderState& enc)
      : m_emb(enc.embedding.rows, enc.embedding.cols),
        v_emb(enc.embedding.rows, enc.embedding.cols),
        m_mix(enc.wmix.rows, enc.wmix.cols),
        v_mix(enc.wmix.rows, enc.wmix.cols),
        m_out(enc.wout.rows, enc.wout.cols),
        v_out(enc.wout.rows, enc.wout.cols) {}
};

void adamw_tensor(Matrix& param, const Matrix& grad, Matrix& m, Matrix& v,
                  long t, double lr) {
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.data.size(); ++i) {
    double g = grad.data[i];
    m.data[i] = kBeta1 * m.data[i] + (1.0 - kBeta1) * g;
    v.data[i] = kBeta2 * v.data[i] + (1.0 - kBeta2) * g * g;
    double mhat = m.data[i] / bc1;
    double vhat = v.data[i] / bc2;
    param.data[i] -= lr * (mhat / (std::sqrt(vhat) + kEps) + kWeightDecay * param.data[i]);
  }
  snap_to_float(param);
}

void adamw_step(EncoderState& enc, const EncoderGrads& grads, AdamState& adam,
                double lr) {
  ++adam.t;
  adamw_tensor(enc.embedding, grads.embedding, adam.m_emb, adam.v_emb, adam.t, lr);
  adamw_tensor(enc.wmix, grads.wmix, adam.m_mix, adam.v_mix, adam.t, lr);
  adamw_tensor(enc.wout, grads.wout, adam.m_out, adam.v_out, adam.t, lr);
}

nlohmann::ordered_json flag_json(const ResolvedFlags& f) {
  nlohmann::ordered_json j;
  j["span"] = f.span;
  j["ci"] = f.ci;
  j["sr"] = f.sr;
  j["pi"] = f.pi;
  return j;
}

std::string step_record_json(const StepRecord& rec, const ResolvedFlags& flags,
                             std::uint64_t seed) {
  EpisodeMetrics m = metrics_from_counts(rec.tp, rec.fp, rec.fn);
  nlohmann::ordered_json j;
  j["step"] = rec.step;
  j["episode_id"] = rec.episode_id;
  j["ce"] = rec.ce;
  j["mmd"] = rec.mmd;
  j["total"] = rec.total;
  j["tp"] = rec.tp;
  j["fp"] = rec.fp;
  j["fn"] = rec.fn;
  j["p"] = m.precision;
  j["r"] = m.recall;
  j["f1"] = m.f1;
  j["flags"] = flag_json(flags);
  j["seed"] = seed;
  return j.dump();
}

std::string eval_record_json(const EpisodeEvalRecord& rec, const ResolvedFlags& flags,
                             std::uint64_t seed) {
  nlohmann::ordered_json j;
  j["step"] = rec.episode_id;
  j["episode_id"] = rec.episode_id;
  j["ce"] = rec.ce;
  j["mmd"] = 0.0;
  j["total"] = rec.ce;
  j["tp"] = rec.tp;
  j["fp"] = rec.fp;
  j["fn"] = rec.fn;
  j["p"] = rec.precision;
  j["r"] = rec.recall;
  j["f1"] = rec.f1;
  j["flags"] = flag_json(flags);
  j["seed"] = seed;
  return j.dump();
}

ReplacementPool episode_pool(const Episode& ep, const RunConfig& config,
                             const ReplacementPool& corpus_pool) {
  if (config.pool_scope == "corpus") {
    ReplacementPool filtered;
    for (const std::string& c : ep.classes) {
      auto it = corpus_pool.forms.find(c);
      if (it != corpus_pool.forms.end()) filtered.forms[c] = it->second;
    }
    return filtered;
  }
  std::vector<Sentence> originals(ep.support.begin(),
                                  ep.support.begin() + (ep.support_original >= 0
                                                            ? ep.support_original
                                                            : static_cast<long>(ep.support.size())));
  return build_pool(originals, ep.classes);
}

// Sentences of one sampled episode's support from the transductive target
// corpus; the paper-literal "test support data" MMD target.
std::vector<Sentence> transductive_target(const RunConfig& config,
                                          const Corpus& target_corpus,
                                          const ClassIndex& target_index,
                                          std::uint64_t seed) {
  Episode ep = sample_episode(target_corpus, target_index, config.way, config.shot_lo,
                              config.shot_hi, 0, seed);
  return ep.support;
}

double population_std(const std::vector<double>& xs, double mean) {
  if (xs.empty()) return 0.0;
  double acc = 0.0;
  for (double x : xs) acc += (x - mean) * (x - mean);
  return std::sqrt(acc / static_cast<double>(xs.size()));
}

}  // namespace

ResolvedFlags resolve_flags(const RunConfig& config) {
  auto pick = [](FlagSetting f, bool auto_value) {
    switch (f) {
      case FlagSetting::on: return true;
      case FlagSetting::off: return false;
      case FlagSetting::automatic: return auto_value;
    }
    return auto_value;
  };
  ResolvedFlags out;
  out.span = pick(config.span_detection, true);
  out.ci = pick(config.context_intervention, config.shot_hi > 2);
  out.pi = pick(config.prototype_intervention, config.shot_hi <= 2);
  out.sr = pick(config.sample_reweighting, config.shot_hi <= 2);
  return out;
}

EncoderConfig encoder_config_of(const RunConfig& config) {
  EncoderConfig ec;
  ec.dim = config.encoder_dim;
  ec.max_len = config.max_len;
  ec.vocab_hash_buckets = config.hash_buckets;
  ec.context_window = config.context_window;
  ec.dropout = config.dropout;
  ec.seed = config.seed;
  return ec;
}

MMDConfig mmd_config_of(const RunConfig& config) {
  MMDConfig mc;
  mc.bandwidths = config.mmd_bandwidths;
  mc.max_batch = config.mmd_max_batch;
  return mc;
}

EpisodeMetrics metrics_from_counts(long tp, long fp, long fn) {
  EpisodeMetrics m;
  m.tp = tp;
  m.fp = fp;
  m.fn = fn;
  m.precision = (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  m.recall = (tp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  m.f1 = (m.precision + m.recall) > 0.0
             ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;
  return m;
}

EpisodeMetrics span_f1(const std::vector<Span>& gold, const std::vector<Span>& pred) {
  long tp = 0, fp = 0, fn = 0;
  for (const Span& sp : pred) {
    if (std::find(gold.begin(), gold.end(), sp) != gold.end()) {
      ++tp;
    } else {
      ++fp;
    }
  }
  for (const Span& sp : gold) {
    if (std::find(pred.begin(), pred.end(), sp) == pred.end()) ++fn;
  }
  return metrics_from_counts(tp, fp, fn);
}

std::vector<AblationRow> ablation_rows(int shot_hi) {
  auto row = [](bool span, bool ci, bool sr, bool pi) {
    AblationRow r;
    r.span = span;
    r.ci = ci;
    r.sr = sr;
    r.pi = pi;
    return r;
  };
  if (shot_hi <= 2) {
    return {row(true, false, true, true), row(true, false, true, false),
            row(false, false, true, true), row(false, false, false, true),
            row(false, false, true, false)};
  }
  return {row(true, true, false, false), row(false, true, false, false),
          row(true, false, false, false)};
}

TrainResult train(const RunConfig& config, const Corpus& corpus,
                  const Corpus* mmd_target_corpus, std::ostream* log_sink) {
  if (config.episodes_train < 0 || config.batch_size < 1 || config.learning_rate <= 0.0) {
    throw ConfigError("invalid training config");
  }
  const bool transductive = config.mmd_target == "test_support";
  if (transductive && config.mmd_weight != 0.0 && mmd_target_corpus == nullptr) {
    throw ConfigError("mmd_target=test_support needs a target corpus");
  }

  TrainResult result;
  result.config = config;
  result.train_classes = corpus.label_set;
  result.encoder = init_encoder(encoder_config_of(config));
  result.memory.lambda = config.lambda;

  const ResolvedFlags rf = resolve_flags(config);
  LossFlags lf;
  lf.span = rf.span;
  lf.reweight = rf.sr;
  lf.memory = rf.pi;
  const MMDConfig mmd_cfg = mmd_config_of(config);

  ClassIndex index = build_class_index(corpus);
  ClassIndex target_index;
  if (transductive && mmd_target_corpus != nullptr) {
    target_index = build_class_index(*mmd_target_corpus);
  }

  ReplacementPool corpus_pool;
  if (rf.ci && config.pool_scope == "corpus") {
    std::vector<std::string> all_labels(corpus.label_set.begin(), corpus.label_set.end());
    corpus_pool = build_pool(corpus.sentences, all_labels);
  }

  AdamState adam(result.encoder);
  EncoderGrads grads = zero_grads(result.encoder);
  EncoderGrads episode_grads = zero_grads(result.encoder);

  auto emit = [&](const std::string& line) {
    result.metrics_jsonl += line;
    result.metrics_jsonl += '\n';
    if (log_sink != nullptr) (*log_sink) << line << '\n';
  };

  int episode_id = 0;
  int step = 0;
  while (episode_id < config.episodes_train) {
    const int batch_n =
        std::min(config.batch_size, config.episodes_train - episode_id);
    grads.zero();
    StepRecord rec;
    rec.step = step;

    for (int b = 0; b < batch_n; ++b, ++episode_id) {
      Episode ep;
      try {
        ep = sample_episode(corpus, index, config.way, config.shot_lo, config.shot_hi,
                            config.query_per_class,
                            mix_seed(config.seed, 40, static_cast<std::uint64_t>(episode_id)));
        if (rf.ci) {
          ReplacementPool pool = episode_pool(ep, config, corpus_pool);
          ep = augment_support(ep, pool, /*train_mode=*/true, config.max_len);
        }

        std::vector<Sentence> target;
        if (transductive && config.mmd_weight != 0.0) {
          target = transductive_target(config, *mmd_target_corpus, target_index,
                                       mix_seed(config.seed, 42,
                                                static_cast<std::uint64_t>(episode_id)));
        }

        episode_grads.zero();
        EpisodeLossResult lr = episode_loss(
            result.encoder, ep, lf, rf.pi ? &result.memory : nullptr, mmd_cfg,
            config.mmd_weight, config.tau, /*train_mode=*/true,
            mix_seed(config.seed, 41, static_cast<std::uint64_t>(episode_id)),
            target.empty() ? nullptr : &target, &episode_grads);

        if (rf.pi) {
          result.memory = update_memory(result.memory, lr.current_protos).second;
        }
        grads.add_scaled(episode_grads, 1.0);
        rec.ce += lr.loss.ce;
        rec.mmd += lr.loss.mmd;
        rec.total += lr.loss.total;
        rec.tp += lr.tp;
        rec.fp += lr.fp;
        rec.fn += lr.fn;
        rec.episode_id = episode_id;
      } catch (const std::exception& e) {
        nlohmann::ordered_json diag;
        diag["event"] = "abort";
        diag["step"] = step;
        diag["episode_id"] = episode_id;
        diag["error"] = e.what();
        emit(diag.dump());
        throw;
      }
    }

    rec.ce /= batch_n;
    rec.mmd /= batch_n;
    rec.total /= batch_n;
    grads.scale(1.0 / batch_n);
    adamw_step(result.encoder, grads, adam, config.learning_rate);
    emit(step_record_json(rec, rf, config.seed));
    result.steps.push_back(rec);
    ++step;
  }
  return result;
}

EpisodeEvalOutput eval_episode(const EncoderState& encoder, const Episode& episode,
                               const ResolvedFlags& flags, double tau,
                               PrototypeMemory* memory, bool memory_at_test) {
  EpisodeEvalOutput out;

  std::map<std::string, std::vector<Vec>> by_label;
  std::vector<Vec> entity, nonentity;
  for (const Sentence& s : episode.support) {
    Matrix H = encode_tokens(encoder, s, /*train_mode=*/false);
    for (int t = 0; t < H.rows; ++t) {
      Vec v(H.row(t), H.row(t) + H.cols);
      const std::string& label = s.labels[static_cast<std::size_t>(t)];
      (label == kOutsideLabel ? nonentity : entity).push_back(v);
      by_label[label].push_back(std::move(v));
    }
  }

  PrototypeSet protos;
  protos.class_protos = class_prototypes(by_label);
  out.current_protos = protos.class_protos;
  if (flags.span) {
    auto [pe, pn] = span_prototypes(entity, nonentity);
    protos.span_entity = std::move(pe);
    protos.span_nonentity = std::move(pn);
    protos.has_span = true;
  }

  const PrototypeMemory* blend = nullptr;
  if (flags.pi && memory != nullptr && memory_at_test) blend = memory;

  ClassifyFlags cf;
  cf.use_reweighting = flags.sr;
  cf.use_span = flags.span;
  for (const Sentence& q : episode.query) {
    Matrix H = encode_tokens(encoder, q, /*train_mode=*/false);
    std::vector<TokenPrediction> preds =
        classify_tokens(H, protos, cf, by_label, tau, blend);
    std::vector<std::string> labels;
    labels.reserve(preds.size());
    for (const TokenPrediction& p : preds) labels.push_back(p.predicted);
    out.predictions.push_back(std::move(labels));
  }

  if (flags.pi && memory != nullptr && memory_at_test) {
    *memory = update_memory(*memory, out.current_protos).second;
  }
  return out;
}

EvalResult evaluate(const EncoderState& encoder, const PrototypeMemory& memory,
                    const RunConfig& config, const Corpus& eval_corpus,
                    const std::set<std::string>& train_classes,
                    const ClassifyHook& hook) {
  for (const std::string& label : eval_corpus.label_set) {
    if (train_classes.contains(label)) {
      throw ConfigError("evaluation class '" + label +
                        "' overlaps the training class set");
    }
  }

  const ResolvedFlags rf = resolve_flags(config);
  ClassIndex index = build_class_index(eval_corpus);

  EvalResult result;
  result.memory = memory;
  long tp = 0, fp = 0, fn = 0;
  std::vector<double> f1s;

  for (int i = 0; i < config.episodes_eval; ++i) {
    Episode ep = sample_episode(eval_corpus, index, config.way, config.shot_lo,
                                config.shot_hi, config.query_per_class,
                                mix_seed(config.seed, 50, static_cast<std::uint64_t>(i)));

    std::vector<std::vector<std::string>> predictions;
    double ce = 0.0;
    if (hook) {
      predictions = hook(ep);
    } else {
      EpisodeEvalOutput out = eval_episode(encoder, ep, rf, config.tau,
                                           &result.memory, config.memory_at_test);
      predictions = std::move(out.predictions);
    }

    EpisodeEvalRecord rec;
    rec.episode_id = i;
    long etp = 0, efp = 0, efn = 0;
    for (std::size_t s = 0; s < ep.query.size(); ++s) {
      const std::vector<std::string>& pred = predictions.at(s);
      Sentence pred_sent;
      Sentence gold_sent;
      std::size_t n = std::min(pred.size(), ep.query[s].labels.size());
      pred_sent.tokens.assign(n, "_");
      pred_sent.labels.assign(pred.begin(), pred.begin() + static_cast<long>(n));
      gold_sent.tokens.assign(n, "_");
      gold_sent.labels.assign(ep.query[s].labels.begin(),
                              ep.query[s].labels.begin() + static_cast<long>(n));
      EpisodeMetrics m = span_f1(extract_spans(gold_sent), extract_spans(pred_sent));
      etp += m.tp;
      efp += m.fp;
      efn += m.fn;
    }

    EpisodeMetrics em = metrics_from_counts(etp, efp, efn);
    rec.ce = ce;
    rec.tp = etp;
    rec.fp = efp;
    rec.fn = efn;
    rec.precision = em.precision;
    rec.recall = em.recall;
    rec.f1 = em.f1;
    result.episodes.push_back(rec);
    result.metrics_jsonl += eval_record_json(rec, rf, config.seed);
    result.metrics_jsonl += '\n';
    tp += etp;
    fp += efp;
    fn += efn;
    f1s.push_back(em.f1);
  }

  result.micro = metrics_from_counts(tp, fp, fn);
  if (!f1s.empty()) {
    double mean = 0.0;
    for (double v : f1s) mean += v;
    mean /= static_cast<double>(f1s.size());
    result.f1_mean = mean;
    result.f1_std = population_std(f1s, mean);
  }
  return result;
}

AblationTable ablate(const RunConfig& config, const Corpus& train_corpus,
                     const Corpus& eval_corpus,
                     const std::vector<std::uint64_t>& seeds,
                     std::ostream* progress) {
  AblationTable table;
  table.seeds = seeds;
  table.rows = ablation_rows(config.shot_hi);
  for (AblationRow& row : table.rows) {
    for (std::uint64_t seed : seeds) {
      RunConfig rc = config;
      rc.seed = seed;
      rc.span_detection = row.span ? FlagSetting::on : FlagSetting::off;
      rc.context_intervention = row.ci ? FlagSetting::on : FlagSetting::off;
      rc.sample_reweighting = row.sr ? FlagSetting::on : FlagSetting::off;
      rc.prototype_intervention = row.pi ? FlagSetting::on : FlagSetting::off;
      TrainResult tr = train(rc, train_corpus,
                             rc.mmd_target == "test_support" ? &eval_corpus : nullptr);
      EvalResult ev = evaluate(tr.encoder, tr.memory, rc, eval_corpus, tr.train_classes);
      row.f1s.push_back(ev.micro.f1);
      if (progress != nullptr) {
        (*progress) << "ablation row span=" << row.span << " ci=" << row.ci
                    << " sr=" << row.sr << " pi=" << row.pi << " seed=" << seed
                    << " f1=" << ev.micro.f1 << "\n";
      }
    }
    double mean = 0.0;
    for (double v : row.f1s) mean += v;
    mean /= static_cast<double>(row.f1s.size());
    row.f1_mean = mean;
    row.f1_std = population_std(row.f1s, mean);
  }
  return table;
}

std::string ablation_table_text(const AblationTable& table) {
  std::string out =
      "span_detection\tcontext_intervention\tsample_reweighting\tprototype_intervention\tf1_mean\tf1_std\tseeds\n";
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return std::string(buf);
  };
  for (const AblationRow& row : table.rows) {
    out += row.span ? "1" : "0";
    out += '\t';
    out += row.ci ? "1" : "0";
    out += '\t';
    out += row.sr ? "1" : "0";
    out += '\t';
    out += row.pi ? "1" : "0";
    out += '\t';
    out += fmt(row.f1_mean);
    out += '\t';
    out += fmt(row.f1_std);
    out += '\t';
    for (std::size_t i = 0; i < table.seeds.size(); ++i) {
      if (i) out += ',';
      out += std::to_string(table.seeds[i]);
    }
    out += '\n';
  }
  return out;
}

FeatureDump dump_features(const EncoderState& encoder, const RunConfig& config,
                          const Corpus& corpus, int episodes,
                          const Corpus* target_corpus) {
  FeatureDump dump;
  ClassIndex index = build_class_index(corpus);
  ClassIndex target_index;
  if (target_corpus != nullptr) target_index = build_class_index(*target_corpus);

  auto add = [&](const Sentence& s, const char* role) {
    Matrix H = encode_tokens(encoder, s, /*train_mode=*/false);
    for (int t = 0; t < H.rows; ++t) {
      dump.roles.emplace_back(role);
      dump.labels.push_back(s.labels[static_cast<std::size_t>(t)]);
      dump.features.emplace_back(H.row(t), H.row(t) + H.cols);
    }
  };

  for (int i = 0; i < episodes; ++i) {
    Episode ep = sample_episode(corpus, index, config.way, config.shot_lo,
                                config.shot_hi, config.query_per_class,
                                mix_seed(config.seed, 60, static_cast<std::uint64_t>(i)));
    for (const Sentence& s : ep.support) add(s, "source");
    if (target_corpus == nullptr) {
      for (const Sentence& s : ep.query) add(s, "target");
    }
  }
  if (target_corpus != nullptr) {
    for (int i = 0; i < episodes; ++i) {
      Episode ep = sample_episode(*target_corpus, target_index, config.way,
                                  config.shot_lo, config.shot_hi, 0,
                                  mix_seed(config.seed, 61, static_cast<std::uint64_t>(i)));
      for (const Sentence& s : ep.support) add(s, "target");
    }
  }
  return dump;
}

}  // namespace protoner
