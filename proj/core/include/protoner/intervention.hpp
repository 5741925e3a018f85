#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "protoner/corpus.hpp"
#include "protoner/episodes.hpp"
#include "protoner/protonet.hpp"

namespace protoner {

// Deduplicated entity surface forms per class, harvested from a pool scope.
struct ReplacementPool {
  std::map<std::string, std::vector<std::vector<std::string>>> forms;
};

enum class PoolScope { support, corpus };

ReplacementPool build_pool(const std::vector<Sentence>& scope,
                           const std::vector<std::string>& classes);

// One new sentence per (entity span, alternative same-class form); the
// original sentence is never part of the output. Splices exceeding max_len
// are truncated.
std::vector<Sentence> enumerate_replacements(const Sentence& sentence,
                                             const ReplacementPool& pool,
                                             int max_len);

// Training-only support augmentation; with train_mode=false the episode is
// returned unchanged.
Episode augment_support(const Episode& episode, const ReplacementPool& pool,
                        bool train_mode, int max_len);

// combined(c) = lambda*memory(c) + (1-lambda)*current(c) for remembered
// classes, current(c) otherwise; memory takes the combined vectors and keeps
// classes absent from `current` untouched.
std::pair<std::map<std::string, Vec>, PrototypeMemory> update_memory(
    const PrototypeMemory& memory, const std::map<std::string, Vec>& current);

}  // namespace protoner
