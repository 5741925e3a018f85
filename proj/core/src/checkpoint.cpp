#include "protoner/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "protoner/config.hpp"
#include "protoner/errors.hpp"

namespace protoner {

namespace {

constexpr char kMagic[4] = {'P', 'R', 'N', 'C'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

void put_f64(std::string& out, double v) {
  put_u64(out, std::bit_cast<std::uint64_t>(v));
}

void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

void put_matrix(std::string& out, const Matrix& m) {
  put_u32(out, static_cast<std::uint32_t>(m.rows));
  put_u32(out, static_cast<std::uint32_t>(m.cols));
  for (double v : m.data) put_f32(out, static_cast<float>(v));
}

struct Reader {
  const std::string& bytes;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > bytes.size()) throw CheckpointError("checkpoint truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    }
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    }
    pos += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    std::uint32_t n = u32();
    need(n);
    std::string s = bytes.substr(pos, n);
    pos += n;
    return s;
  }
  Matrix matrix() {
    std::uint32_t r = u32();
    std::uint32_t c = u32();
    Matrix m(static_cast<int>(r), static_cast<int>(c));
    for (double& v : m.data) v = static_cast<double>(f32());
    return m;
  }
};

}  // namespace

std::string checkpoint_to_bytes(const Checkpoint& ckpt) {
  std::string out;
  out.append(kMagic, 4);
  std::string body;
  {
    // encoder section
    const EncoderConfig& ec = ckpt.encoder.config;
    put_u32(body, static_cast<std::uint32_t>(ec.dim));
    put_u32(body, static_cast<std::uint32_t>(ec.max_len));
    put_u32(body, static_cast<std::uint32_t>(ec.vocab_hash_buckets));
    put_u32(body, static_cast<std::uint32_t>(ec.context_window));
    put_f64(body, ec.dropout);
    put_u64(body, ec.seed);
    put_matrix(body, ckpt.encoder.embedding);
    put_matrix(body, ckpt.encoder.wmix);
    put_matrix(body, ckpt.encoder.wout);
    // memory section
    put_f64(body, ckpt.memory.lambda);
    put_u32(body, static_cast<std::uint32_t>(ckpt.memory.protos.size()));
    for (const auto& [label, vec] : ckpt.memory.protos) {
      put_str(body, label);
      put_u32(body, static_cast<std::uint32_t>(vec.size()));
      for (double v : vec) put_f32(body, static_cast<float>(v));
    }
    // run config as the canonical key=value text
    put_str(body, config_to_text(ckpt.config));
    // training label set
    put_u32(body, static_cast<std::uint32_t>(ckpt.train_classes.size()));
    for (const std::string& label : ckpt.train_classes) put_str(body, label);
  }
  put_u32(out, kVersion);
  put_u64(out, body.size());
  out += body;
  return out;
}

Checkpoint checkpoint_from_bytes(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  Reader r{bytes, 4};
  std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  std::uint64_t body_len = r.u64();
  if (r.pos + body_len != bytes.size()) {
    throw CheckpointError("checkpoint length mismatch");
  }

  Checkpoint ckpt;
  EncoderConfig ec;
  ec.dim = static_cast<int>(r.u32());
  ec.max_len = static_cast<int>(r.u32());
  ec.vocab_hash_buckets = static_cast<int>(r.u32());
  ec.context_window = static_cast<int>(r.u32());
  ec.dropout = r.f64();
  ec.seed = r.u64();
  ckpt.encoder.config = ec;
  ckpt.encoder.embedding = r.matrix();
  ckpt.encoder.wmix = r.matrix();
  ckpt.encoder.wout = r.matrix();

  ckpt.memory.lambda = r.f64();
  std::uint32_t n_mem = r.u32();
  for (std::uint32_t i = 0; i < n_mem; ++i) {
    std::string label = r.str();
    std::uint32_t dim = r.u32();
    Vec v(dim);
    for (double& x : v) x = static_cast<double>(r.f32());
    ckpt.memory.protos[label] = std::move(v);
  }

  ckpt.config = parse_config_text(r.str(), /*apply_env=*/false);
  std::uint32_t n_cls = r.u32();
  for (std::uint32_t i = 0; i < n_cls; ++i) ckpt.train_classes.insert(r.str());
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::string bytes = checkpoint_to_bytes(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_bytes(buf.str());
}

}  // namespace protoner
