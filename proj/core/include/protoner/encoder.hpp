#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "protoner/corpus.hpp"
#include "protoner/rng.hpp"
#include "protoner/tensor.hpp"

namespace protoner {

struct EncoderConfig {
  int dim = 32;
  int max_len = 32;
  int vocab_hash_buckets = 4096;
  int context_window = 1;
  double dropout = 0.1;
  std::uint64_t seed = 1;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

// Tiny trainable encoder: hashed token embeddings, a projection of the
// concatenated +/-context_window embeddings, tanh, then an output projection.
struct EncoderState {
  EncoderConfig config;
  Matrix embedding;  // buckets x dim
  Matrix wmix;       // dim x (2*window+1)*dim
  Matrix wout;       // dim x dim
  bool frozen = false;

  friend bool operator==(const EncoderState&, const EncoderState&) = default;
};

struct EncoderGrads {
  Matrix embedding;
  Matrix wmix;
  Matrix wout;

  void add_scaled(const EncoderGrads& other, double scale);
  void scale(double s);
  void zero();
};

// Per-sentence forward cache for the backward pass.
struct EncodeCache {
  std::vector<int> buckets;  // per encoded row
  Matrix activation;         // tanh output, rows x dim
  std::vector<double> drop_mask;  // rows*dim, multiplicative (1/(1-p) or 0)
};

EncoderState init_encoder(const EncoderConfig& config);
EncoderGrads zero_grads(const EncoderState& state);

std::uint64_t token_bucket(const std::string& token, int buckets);

// One row per token, truncated at max_len. Pass a cache and (for train mode)
// a dropout rng when the result feeds a backward pass.
Matrix encode_tokens(const EncoderState& state, const Sentence& sentence,
                     bool train_mode, Rng* dropout_rng = nullptr,
                     EncodeCache* cache = nullptr);

// Backward of encode_tokens for one sentence. upstream is rows x dim.
void encode_backward(const EncoderState& state, const Sentence& sentence,
                     const EncodeCache& cache, const Matrix& upstream,
                     EncoderGrads& grads);

// Batch gradient entry point (eval-mode forward recomputed internally).
EncoderGrads encoder_grads(const EncoderState& state,
                           const std::vector<Sentence>& batch,
                           const std::vector<Matrix>& upstream);

// External adapter: per-token vectors loaded from a file; unknown tokens map
// to the zero vector. Satisfies the encode contract with no trainable state.
class FixedEmbeddingEncoder {
 public:
  FixedEmbeddingEncoder(int dim, std::map<std::string, Vec> table, int max_len = 32);
  static FixedEmbeddingEncoder from_file(const std::filesystem::path& path,
                                         int max_len = 32);

  int dim() const { return dim_; }
  Matrix encode_tokens(const Sentence& sentence) const;

 private:
  int dim_;
  int max_len_;
  std::map<std::string, Vec> table_;
};

}  // namespace protoner
