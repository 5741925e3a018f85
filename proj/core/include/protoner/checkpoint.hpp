#pragma once

#include <filesystem>
#include <set>
#include <string>

#include "protoner/encoder.hpp"
#include "protoner/pipeline.hpp"
#include "protoner/protonet.hpp"

namespace protoner {

// Versioned binary container: encoder config + parameter tensors (little-
// endian float32), prototype memory, run config, and the training label set.
// Parameters are float32-representable in memory, so save/load is bit-exact.
struct Checkpoint {
  EncoderState encoder;
  PrototypeMemory memory;
  RunConfig config;
  std::set<std::string> train_classes;
};

std::string checkpoint_to_bytes(const Checkpoint& ckpt);
Checkpoint checkpoint_from_bytes(const std::string& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace protoner
