#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "protoner/corpus.hpp"

namespace protoner {

// One N-way K~2K-shot task. Sentences are stored masked: mentions of classes
// outside `classes` are relabeled "O". support_idx/query_idx hold source
// corpus indices (-1 for sentences created by augmentation).
struct Episode {
  std::vector<std::string> classes;
  std::vector<Sentence> support;
  std::vector<Sentence> query;
  std::vector<int> support_idx;
  std::vector<int> query_idx;
  int way = 0;
  int shot_lo = 0;
  int shot_hi = 0;
  int query_per_class = 0;
  // Number of leading support sentences that came from the sampler; the
  // remainder are augmentations. Validation counts mentions only over these.
  int support_original = -1;

  friend bool operator==(const Episode&, const Episode&) = default;
};

using ClassIndex = std::map<std::string, std::vector<int>>;

ClassIndex build_class_index(const Corpus& corpus);

Episode sample_episode(const Corpus& corpus, const ClassIndex& index, int way,
                       int shot_lo, int shot_hi, int query_per_class,
                       std::uint64_t seed);

// Empty result = valid; otherwise one message per violated invariant.
std::vector<std::string> validate_episode(const Episode& episode);

// Relabels mentions of classes outside `classes` to "O".
Sentence mask_sentence(const Sentence& sentence,
                       const std::vector<std::string>& classes);

// Line-delimited record: class list plus corpus sentence indices.
std::string episode_to_record(const Episode& episode);
Episode episode_from_record(const std::string& line, const Corpus& corpus);

void write_episodes(const std::vector<Episode>& episodes,
                    const std::filesystem::path& path);
std::vector<Episode> read_episodes(const std::filesystem::path& path,
                                   const Corpus& corpus);

}  // namespace protoner
