#include "protoner/episodes.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "protoner/errors.hpp"
#include "protoner/rng.hpp"

namespace protoner {

ClassIndex build_class_index(const Corpus& corpus) {
  ClassIndex index;
  for (std::size_t i = 0; i < corpus.sentences.size(); ++i) {
    std::set<std::string> seen;
    for (const Span& sp : extract_spans(corpus.sentences[i])) seen.insert(sp.label);
    for (const std::string& label : seen) {
      index[label].push_back(static_cast<int>(i));
    }
  }
  return index;
}

Sentence mask_sentence(const Sentence& sentence,
                       const std::vector<std::string>& classes) {
  Sentence out = sentence;
  for (std::string& label : out.labels) {
    if (label != kOutsideLabel &&
        std::find(classes.begin(), classes.end(), label) == classes.end()) {
      label = kOutsideLabel;
    }
  }
  return out;
}

namespace {

// Mention counts restricted to the episode's classes.
std::map<std::string, int> mention_counts(const Sentence& sentence,
                                          const std::vector<std::string>& classes) {
  std::map<std::string, int> counts;
  for (const Span& sp : extract_spans(sentence)) {
    if (std::find(classes.begin(), classes.end(), sp.label) != classes.end()) {
      ++counts[sp.label];
    }
  }
  return counts;
}

struct AttemptResult {
  bool ok = false;
  std::string blocking_class;
  Episode episode;
};

AttemptResult attempt_episode(const Corpus& corpus, const ClassIndex& index,
                              int way, int shot_lo, int shot_hi,
                              int query_per_class, Rng& rng) {
  AttemptResult res;

  std::vector<std::string> all_classes;
  for (const auto& [label, _] : index) all_classes.push_back(label);
  rng.shuffle(all_classes);
  std::vector<std::string> classes(all_classes.begin(), all_classes.begin() + way);
  std::sort(classes.begin(), classes.end());

  std::map<std::string, int> counts;
  for (const std::string& c : classes) counts[c] = 0;
  std::set<int> used;
  std::vector<int> support_idx;

  for (const std::string& c : classes) {
    std::vector<int> candidates = index.at(c);
    rng.shuffle(candidates);
    std::size_t next = 0;
    while (counts[c] < shot_lo) {
      bool added = false;
      for (; next < candidates.size(); ++next) {
        int idx = candidates[next];
        if (used.contains(idx)) continue;
        auto add = mention_counts(corpus.sentences[static_cast<std::size_t>(idx)], classes);
        bool overshoot = false;
        for (const auto& [label, n] : add) {
          if (counts[label] + n > shot_hi) {
            overshoot = true;
            break;
          }
        }
        if (overshoot) continue;
        for (const auto& [label, n] : add) counts[label] += n;
        used.insert(idx);
        support_idx.push_back(idx);
        ++next;
        added = true;
        break;
      }
      if (!added) {
        res.blocking_class = c;
        return res;
      }
    }
  }

  std::vector<int> query_idx;
  for (const std::string& c : classes) {
    std::vector<int> candidates = index.at(c);
    rng.shuffle(candidates);
    int taken = 0;
    for (int idx : candidates) {
      if (taken >= query_per_class) break;
      if (used.contains(idx)) continue;
      used.insert(idx);
      query_idx.push_back(idx);
      ++taken;
    }
    if (taken < query_per_class) {
      res.blocking_class = c;
      return res;
    }
  }

  Episode ep;
  ep.classes = classes;
  ep.way = way;
  ep.shot_lo = shot_lo;
  ep.shot_hi = shot_hi;
  ep.query_per_class = query_per_class;
  ep.support_idx = support_idx;
  ep.query_idx = query_idx;
  for (int idx : support_idx) {
    ep.support.push_back(mask_sentence(corpus.sentences[static_cast<std::size_t>(idx)], classes));
  }
  for (int idx : query_idx) {
    ep.query.push_back(mask_sentence(corpus.sentences[static_cast<std::size_t>(idx)], classes));
  }
  ep.support_original = static_cast<int>(ep.support.size());
  res.ok = true;
  res.episode = std::move(ep);
  return res;
}

}  // namespace

Episode sample_episode(const Corpus& corpus, const ClassIndex& index, int way,
                       int shot_lo, int shot_hi, int query_per_class,
                       std::uint64_t seed) {
  if (way < 1 || shot_lo < 1 || shot_hi < shot_lo || query_per_class < 0) {
    throw SamplingError("invalid episode parameters");
  }
  if (static_cast<int>(index.size()) < way) {
    throw SamplingError("corpus has " + std::to_string(index.size()) +
                        " classes, need " + std::to_string(way));
  }

  Rng rng(mix_seed(seed, 7));
  std::string blocking;
  for (int attempt = 0; attempt < 100; ++attempt) {
    AttemptResult res = attempt_episode(corpus, index, way, shot_lo, shot_hi,
                                        query_per_class, rng);
    if (res.ok) return std::move(res.episode);
    blocking = res.blocking_class;
  }
  throw SamplingError("cannot satisfy shot window [" + std::to_string(shot_lo) +
                      "," + std::to_string(shot_hi) + "] after 100 retries; blocking class: " +
                      blocking);
}

std::vector<std::string> validate_episode(const Episode& ep) {
  std::vector<std::string> violations;

  if (static_cast<int>(ep.classes.size()) != ep.way) {
    violations.push_back("class list size " + std::to_string(ep.classes.size()) +
                         " != way " + std::to_string(ep.way));
  }

  // support/query disjointness; fall back to structural equality when a
  // sentence has no source index
  for (std::size_t i = 0; i < ep.support.size(); ++i) {
    for (std::size_t j = 0; j < ep.query.size(); ++j) {
      int si = i < ep.support_idx.size() ? ep.support_idx[i] : -1;
      int qj = j < ep.query_idx.size() ? ep.query_idx[j] : -1;
      bool same = (si >= 0 && qj >= 0) ? si == qj : ep.support[i] == ep.query[j];
      if (same) {
        violations.push_back("support/query overlap (support " + std::to_string(i) +
                             ", query " + std::to_string(j) + ")");
      }
    }
  }

  std::map<std::string, int> counts;
  for (const std::string& c : ep.classes) counts[c] = 0;
  int originals = ep.support_original >= 0
                      ? std::min<int>(ep.support_original, static_cast<int>(ep.support.size()))
                      : static_cast<int>(ep.support.size());
  for (int i = 0; i < originals; ++i) {
    for (const Span& sp : extract_spans(ep.support[static_cast<std::size_t>(i)])) {
      auto it = counts.find(sp.label);
      if (it != counts.end()) ++it->second;
    }
  }
  for (const auto& [label, n] : counts) {
    if (n < ep.shot_lo || n > ep.shot_hi) {
      violations.push_back("class " + label + " has " + std::to_string(n) +
                           " support mentions, outside [" + std::to_string(ep.shot_lo) +
                           "," + std::to_string(ep.shot_hi) + "]");
    }
  }

  auto check_masked = [&](const std::vector<Sentence>& sents, const char* side) {
    for (std::size_t i = 0; i < sents.size(); ++i) {
      if (sents[i].tokens.empty() || sents[i].tokens.size() != sents[i].labels.size()) {
        violations.push_back(std::string(side) + " sentence " + std::to_string(i) +
                             " malformed");
        continue;
      }
      for (const std::string& label : sents[i].labels) {
        if (label != kOutsideLabel &&
            std::find(ep.classes.begin(), ep.classes.end(), label) == ep.classes.end()) {
          violations.push_back(std::string(side) + " sentence " + std::to_string(i) +
                               " carries unmasked out-of-episode label '" + label + "'");
        }
      }
    }
  };
  check_masked(ep.support, "support");
  check_masked(ep.query, "query");

  return violations;
}

std::string episode_to_record(const Episode& ep) {
  nlohmann::ordered_json j;
  j["classes"] = ep.classes;
  j["support"] = ep.support_idx;
  j["query"] = ep.query_idx;
  j["way"] = ep.way;
  j["shot_lo"] = ep.shot_lo;
  j["shot_hi"] = ep.shot_hi;
  j["query_per_class"] = ep.query_per_class;
  return j.dump();
}

Episode episode_from_record(const std::string& line, const Corpus& corpus) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad episode record: ") + e.what());
  }
  Episode ep;
  ep.classes = j.at("classes").get<std::vector<std::string>>();
  ep.support_idx = j.at("support").get<std::vector<int>>();
  ep.query_idx = j.at("query").get<std::vector<int>>();
  ep.way = j.at("way").get<int>();
  ep.shot_lo = j.at("shot_lo").get<int>();
  ep.shot_hi = j.at("shot_hi").get<int>();
  ep.query_per_class = j.at("query_per_class").get<int>();
  auto fetch = [&](int idx) -> Sentence {
    if (idx < 0 || idx >= static_cast<int>(corpus.sentences.size())) {
      throw ParseError("episode record references sentence " + std::to_string(idx) +
                       " outside the corpus");
    }
    return mask_sentence(corpus.sentences[static_cast<std::size_t>(idx)], ep.classes);
  };
  for (int idx : ep.support_idx) ep.support.push_back(fetch(idx));
  for (int idx : ep.query_idx) ep.query.push_back(fetch(idx));
  ep.support_original = static_cast<int>(ep.support.size());
  return ep;
}

void write_episodes(const std::vector<Episode>& episodes,
                    const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  for (const Episode& ep : episodes) out << episode_to_record(ep) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<Episode> read_episodes(const std::filesystem::path& path,
                                   const Corpus& corpus) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open episodes file: " + path.string());
  std::vector<Episode> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(episode_from_record(line, corpus));
  }
  return out;
}

}  // namespace protoner
