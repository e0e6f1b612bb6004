#include "berto/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace berto {

namespace {

constexpr char kMagic[8] = {'B', 'E', 'R', 'T', 'O', 'C', 'K', 'P'};
constexpr std::uint64_t kMaxElements = 1ULL << 32;

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

void put_str(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void read_exact(std::istream& in, char* dst, std::size_t n) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) throw CheckpointError("checkpoint: truncated file");
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  read_exact(in, reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  read_exact(in, reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

std::string get_str(std::istream& in) {
  const auto n = get_u32(in);
  if (n > (1u << 20)) throw CheckpointError("checkpoint: implausible string length");
  std::string s(n, '\0');
  read_exact(in, s.data(), n);
  return s;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void Checkpoint::write(std::ostream& out) const {
  out.write(kMagic, 8);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    put_str(out, k);
    put_str(out, v);
  }
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put_str(out, t.name);
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put_u64(out, static_cast<std::uint64_t>(d));
    for (double x : t.data) put_u64(out, std::bit_cast<std::uint64_t>(x));
  }
}

Checkpoint Checkpoint::read(std::istream& in) {
  char magic[8];
  read_exact(in, magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0) throw CheckpointError("checkpoint: bad magic");
  const auto version = get_u32(in);
  if (version != kVersion) throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint c;
  const auto nmeta = get_u32(in);
  for (std::uint32_t i = 0; i < nmeta; ++i) {
    auto k = get_str(in);
    c.meta[k] = get_str(in);
  }
  const auto ntensors = get_u32(in);
  for (std::uint32_t i = 0; i < ntensors; ++i) {
    NamedTensor t;
    t.name = get_str(in);
    const auto ndim = get_u32(in);
    if (ndim > 8) throw CheckpointError("checkpoint: too many dimensions for '" + t.name + "'");
    std::uint64_t count = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      const auto dim = get_u64(in);
      t.shape.push_back(static_cast<std::int64_t>(dim));
      count *= dim;
      if (count > kMaxElements) throw CheckpointError("checkpoint: tensor '" + t.name + "' too large");
    }
    t.data.resize(count);
    for (auto& x : t.data) x = std::bit_cast<double>(get_u64(in));
    c.tensors.push_back(std::move(t));
  }
  return c;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("checkpoint: cannot write " + path.string());
  write(out);
  if (!out) throw CheckpointError("checkpoint: write failed for " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path.string());
  return read(in);
}

const std::string& Checkpoint::get(const std::string& key) const {
  const auto it = meta.find(key);
  if (it == meta.end()) throw CheckpointError("checkpoint: missing metadata '" + key + "'");
  return it->second;
}

std::map<std::string, std::string> config_to_meta(const ModelConfig& cfg) {
  std::string dims;
  for (std::size_t i = 0; i < cfg.head_dims.size(); ++i) dims += (i ? "," : "") + std::to_string(cfg.head_dims[i]);
  return {{"model.layers", std::to_string(cfg.layers)},
          {"model.hidden", std::to_string(cfg.hidden)},
          {"model.heads", std::to_string(cfg.heads)},
          {"model.ffn_dim", std::to_string(cfg.ffn_dim)},
          {"model.vocab_size", std::to_string(cfg.vocab_size)},
          {"model.max_len", std::to_string(cfg.max_len)},
          {"model.pool_kernel", std::to_string(cfg.pool_kernel)},
          {"model.pool_stride", std::to_string(cfg.pool_stride)},
          {"model.head_dims", dims},
          {"model.output_offset", fmt_double(cfg.output_offset)},
          {"model.output_scale", fmt_double(cfg.output_scale)}};
}

ModelConfig config_from_meta(const std::map<std::string, std::string>& meta) {
  auto get = [&](const std::string& k) -> const std::string& {
    const auto it = meta.find(k);
    if (it == meta.end()) throw CheckpointError("checkpoint: missing metadata '" + k + "'");
    return it->second;
  };
  ModelConfig c;
  c.layers = std::stoi(get("model.layers"));
  c.hidden = std::stoi(get("model.hidden"));
  c.heads = std::stoi(get("model.heads"));
  c.ffn_dim = std::stoi(get("model.ffn_dim"));
  c.vocab_size = std::stoi(get("model.vocab_size"));
  c.max_len = std::stoi(get("model.max_len"));
  c.pool_kernel = std::stoi(get("model.pool_kernel"));
  c.pool_stride = std::stoi(get("model.pool_stride"));
  c.head_dims.clear();
  std::istringstream dims(get("model.head_dims"));
  std::string d;
  while (std::getline(dims, d, ',')) c.head_dims.push_back(std::stoi(d));
  c.output_offset = std::stod(get("model.output_offset"));
  c.output_scale = std::stod(get("model.output_scale"));
  c.validate();
  return c;
}

Checkpoint to_checkpoint(const ModelWeights& w, const Vocabulary& vocab) {
  Checkpoint c;
  c.meta = config_to_meta(w.config);
  c.meta["kind"] = "bert";
  c.meta["vocab_hash"] = hex64(vocab.hash());
  c.tensors = export_tensors(w);
  return c;
}

ModelWeights model_from_checkpoint(const Checkpoint& c, const Vocabulary& vocab) {
  if (c.get("kind") != "bert") throw CheckpointError("checkpoint: expected a transformer checkpoint, got '" + c.get("kind") + "'");
  if (c.get("vocab_hash") != hex64(vocab.hash()))
    throw CheckpointError("checkpoint: vocabulary hash mismatch (checkpoint " + c.get("vocab_hash") + ", runtime " +
                          hex64(vocab.hash()) + ")");
  const auto cfg = config_from_meta(c.meta);
  if (cfg.vocab_size != vocab.size()) throw CheckpointError("checkpoint: vocabulary size mismatch");
  auto w = ModelWeights::zeros(cfg);
  try {
    import_tensors(w, c.tensors);
  } catch (const ModelInputError& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  }
  return w;
}

Checkpoint to_checkpoint(const FnnWeights& w) {
  Checkpoint c;
  c.meta["kind"] = "fnn";
  c.meta["fnn.value_scale"] = fmt_double(w.value_scale);
  w.for_each([&](const std::string& name, const Mat& m) {
    c.tensors.push_back({name, {m.rows(), m.cols()}, std::vector<double>(m.data(), m.data() + m.size())});
  });
  return c;
}

FnnWeights fnn_from_checkpoint(const Checkpoint& c) {
  if (c.get("kind") != "fnn") throw CheckpointError("checkpoint: expected an fnn checkpoint, got '" + c.get("kind") + "'");
  FnnWeights w;
  w.value_scale = std::stod(c.get("fnn.value_scale"));
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : c.tensors) by_name[t.name] = &t;
  w.for_each([&](const std::string& name, Mat& m) {
    const auto it = by_name.find(name);
    if (it == by_name.end() || it->second->shape.size() != 2) throw CheckpointError("checkpoint: missing tensor " + name);
    const auto& t = *it->second;
    m = Eigen::Map<const Mat>(t.data.data(), t.shape[0], t.shape[1]);
  });
  if (w.w1.cols() != w.b1.cols() || w.w1.cols() != w.w2.rows() || w.w2.cols() != 1)
    throw CheckpointError("checkpoint: inconsistent fnn shapes");
  return w;
}

}  // namespace berto
