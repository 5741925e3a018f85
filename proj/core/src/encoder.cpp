#include "protoner/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "protoner/errors.hpp"

namespace protoner {

void EncoderGrads::add_scaled(const EncoderGrads& other, double scale) {
  axpy(scale, other.embedding.data, std::span<double>(embedding.data));
  axpy(scale, other.wmix.data, std::span<double>(wmix.data));
  axpy(scale, other.wout.data, std::span<double>(wout.data));
}

void EncoderGrads::scale(double s) {
  for (double& v : embedding.data) v *= s;
  for (double& v : wmix.data) v *= s;
  for (double& v : wout.data) v *= s;
}

void EncoderGrads::zero() {
  embedding.fill(0.0);
  wmix.fill(0.0);
  wout.fill(0.0);
}

std::uint64_t token_bucket(const std::string& token, int buckets) {
  // FNV-1a, 64 bit
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : token) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h % static_cast<std::uint64_t>(buckets);
}

EncoderState init_encoder(const EncoderConfig& config) {
  if (config.dim < 2 || config.max_len < 2 || config.vocab_hash_buckets < 1 ||
      config.context_window < 0 || config.dropout < 0.0 || config.dropout >= 1.0) {
    throw ConfigError("invalid encoder config");
  }
  EncoderState st;
  st.config = config;
  const int win = 2 * config.context_window + 1;
  st.embedding = Matrix(config.vocab_hash_buckets, config.dim);
  st.wmix = Matrix(config.dim, win * config.dim);
  st.wout = Matrix(config.dim, config.dim);

  Rng rng(mix_seed(config.seed, 11));
  const double emb_std = 0.2;
  const double mix_std = 1.0 / std::sqrt(static_cast<double>(win * config.dim));
  const double out_std = 1.0 / std::sqrt(static_cast<double>(config.dim));
  for (double& v : st.embedding.data) v = emb_std * rng.normal();
  for (double& v : st.wmix.data) v = mix_std * rng.normal();
  for (double& v : st.wout.data) v = out_std * rng.normal();
  snap_to_float(st.embedding);
  snap_to_float(st.wmix);
  snap_to_float(st.wout);
  return st;
}

EncoderGrads zero_grads(const EncoderState& state) {
  EncoderGrads g;
  g.embedding = Matrix(state.embedding.rows, state.embedding.cols);
  g.wmix = Matrix(state.wmix.rows, state.wmix.cols);
  g.wout = Matrix(state.wout.rows, state.wout.cols);
  return g;
}

Matrix encode_tokens(const EncoderState& state, const Sentence& sentence,
                     bool train_mode, Rng* dropout_rng, EncodeCache* cache) {
  if (sentence.tokens.empty()) throw ParseError("cannot encode an empty sentence");
  const EncoderConfig& cfg = state.config;
  const int rows = std::min<int>(static_cast<int>(sentence.tokens.size()), cfg.max_len);
  const int dim = cfg.dim;
  const int w = cfg.context_window;
  const int win = 2 * w + 1;

  std::vector<int> buckets(static_cast<std::size_t>(rows));
  for (int t = 0; t < rows; ++t) {
    buckets[static_cast<std::size_t>(t)] =
        static_cast<int>(token_bucket(sentence.tokens[static_cast<std::size_t>(t)],
                                      cfg.vocab_hash_buckets));
  }

  Matrix out(rows, dim);
  Matrix activation(rows, dim);
  std::vector<double> drop_mask;
  const bool use_dropout = train_mode && cfg.dropout > 0.0;
  if (use_dropout) {
    if (dropout_rng == nullptr) {
      throw ConfigError("train-mode encoding with dropout needs an rng");
    }
    drop_mask.assign(static_cast<std::size_t>(rows) * dim, 1.0);
  }

  std::vector<double> x(static_cast<std::size_t>(win) * dim);
  for (int t = 0; t < rows; ++t) {
    std::fill(x.begin(), x.end(), 0.0);
    for (int k = -w; k <= w; ++k) {
      int src = t + k;
      if (src < 0 || src >= rows) continue;
      const double* emb = state.embedding.row(buckets[static_cast<std::size_t>(src)]);
      double* dst = x.data() + static_cast<std::size_t>(k + w) * dim;
      std::copy(emb, emb + dim, dst);
    }
    for (int i = 0; i < dim; ++i) {
      double a = dot(state.wmix.row_span(i), x);
      double u = std::tanh(a);
      if (use_dropout) {
        double keep = dropout_rng->uniform_real() >= cfg.dropout
                          ? 1.0 / (1.0 - cfg.dropout)
                          : 0.0;
        drop_mask[static_cast<std::size_t>(t) * dim + i] = keep;
        u *= keep;
      }
      activation.at(t, i) = u;
    }
    for (int i = 0; i < dim; ++i) {
      out.at(t, i) = dot(state.wout.row_span(i), activation.row_span(t));
    }
  }

  if (cache != nullptr) {
    cache->buckets = std::move(buckets);
    cache->activation = std::move(activation);
    cache->drop_mask = std::move(drop_mask);
  }
  return out;
}

void encode_backward(const EncoderState& state, const Sentence&,
                     const EncodeCache& cache, const Matrix& upstream,
                     EncoderGrads& grads) {
  const EncoderConfig& cfg = state.config;
  const int rows = static_cast<int>(cache.buckets.size());
  const int dim = cfg.dim;
  const int w = cfg.context_window;
  const int win = 2 * w + 1;
  if (upstream.rows != rows || upstream.cols != dim) {
    throw ConfigError("upstream gradient shape does not match the encoded output");
  }
  if (state.frozen) return;

  std::vector<double> x(static_cast<std::size_t>(win) * dim);
  std::vector<double> da(static_cast<std::size_t>(dim));
  std::vector<double> dx(static_cast<std::size_t>(win) * dim);

  for (int t = 0; t < rows; ++t) {
    // reassemble the concatenated window input
    std::fill(x.begin(), x.end(), 0.0);
    for (int k = -w; k <= w; ++k) {
      int src = t + k;
      if (src < 0 || src >= rows) continue;
      const double* emb =
          state.embedding.row(cache.buckets[static_cast<std::size_t>(src)]);
      std::copy(emb, emb + dim, x.data() + static_cast<std::size_t>(k + w) * dim);
    }

    // wout: out = wout * act
    const double* act = cache.activation.row(t);
    std::vector<double> dact(static_cast<std::size_t>(dim), 0.0);
    for (int i = 0; i < dim; ++i) {
      double g = upstream.at(t, i);
      double* wrow = grads.wout.row(i);
      const double* srow = state.wout.row(i);
      for (int j = 0; j < dim; ++j) {
        wrow[j] += g * act[j];
        dact[static_cast<std::size_t>(j)] += g * srow[j];
      }
    }

    // dropout and tanh
    for (int i = 0; i < dim; ++i) {
      double mask = cache.drop_mask.empty()
                        ? 1.0
                        : cache.drop_mask[static_cast<std::size_t>(t) * dim + i];
      double u_masked = act[i];
      // recover pre-dropout tanh value; mask==0 kills the gradient anyway
      double u = mask == 0.0 ? 0.0 : u_masked / mask;
      da[static_cast<std::size_t>(i)] = dact[static_cast<std::size_t>(i)] * mask * (1.0 - u * u);
    }

    // wmix: a = wmix * x
    std::fill(dx.begin(), dx.end(), 0.0);
    for (int i = 0; i < dim; ++i) {
      double g = da[static_cast<std::size_t>(i)];
      if (g == 0.0) continue;
      double* wrow = grads.wmix.row(i);
      const double* srow = state.wmix.row(i);
      for (int j = 0; j < win * dim; ++j) {
        wrow[j] += g * x[static_cast<std::size_t>(j)];
        dx[static_cast<std::size_t>(j)] += g * srow[j];
      }
    }

    // scatter into embedding gradients
    for (int k = -w; k <= w; ++k) {
      int src = t + k;
      if (src < 0 || src >= rows) continue;
      double* erow = grads.embedding.row(cache.buckets[static_cast<std::size_t>(src)]);
      const double* part = dx.data() + static_cast<std::size_t>(k + w) * dim;
      for (int j = 0; j < dim; ++j) erow[j] += part[j];
    }
  }
}

EncoderGrads encoder_grads(const EncoderState& state,
                           const std::vector<Sentence>& batch,
                           const std::vector<Matrix>& upstream) {
  if (batch.size() != upstream.size()) {
    throw ConfigError("batch and upstream gradient counts differ");
  }
  EncoderGrads grads = zero_grads(state);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    EncodeCache cache;
    Matrix out = encode_tokens(state, batch[i], false, nullptr, &cache);
    if (upstream[i].rows != out.rows || upstream[i].cols != out.cols) {
      throw ConfigError("upstream gradient shape mismatch in sentence " +
                        std::to_string(i));
    }
    encode_backward(state, batch[i], cache, upstream[i], grads);
  }
  return grads;
}

FixedEmbeddingEncoder::FixedEmbeddingEncoder(int dim, std::map<std::string, Vec> table,
                                             int max_len)
    : dim_(dim), max_len_(max_len), table_(std::move(table)) {
  for (const auto& [token, vec] : table_) {
    if (static_cast<int>(vec.size()) != dim_) {
      throw ConfigError("embedding for '" + token + "' has wrong dimension");
    }
  }
}

FixedEmbeddingEncoder FixedEmbeddingEncoder::from_file(
    const std::filesystem::path& path, int max_len) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open embedding file: " + path.string());
  std::map<std::string, Vec> table;
  int dim = -1;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string token;
    if (!(ss >> token)) continue;
    Vec v;
    double x;
    while (ss >> x) v.push_back(x);
    if (v.empty()) {
      throw ParseError("embedding file line " + std::to_string(line_no) +
                       ": no values");
    }
    if (dim < 0) dim = static_cast<int>(v.size());
    if (static_cast<int>(v.size()) != dim) {
      throw ParseError("embedding file line " + std::to_string(line_no) +
                       ": inconsistent dimension");
    }
    table[token] = std::move(v);
  }
  if (dim < 0) throw ParseError("embedding file is empty");
  return FixedEmbeddingEncoder(dim, std::move(table), max_len);
}

Matrix FixedEmbeddingEncoder::encode_tokens(const Sentence& sentence) const {
  if (sentence.tokens.empty()) throw ParseError("cannot encode an empty sentence");
  const int rows = std::min<int>(static_cast<int>(sentence.tokens.size()), max_len_);
  Matrix out(rows, dim_);
  for (int t = 0; t < rows; ++t) {
    auto it = table_.find(sentence.tokens[static_cast<std::size_t>(t)]);
    if (it == table_.end()) continue;  // zero vector for unknown tokens
    std::copy(it->second.begin(), it->second.end(), out.row(t));
  }
  return out;
}

}  // namespace protoner
