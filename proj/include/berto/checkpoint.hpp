#pragma once

#include <filesystem>
#include <istream>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "berto/baselines.hpp"
#include "berto/model.hpp"
#include "berto/prompting.hpp"

namespace berto {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Versioned container of named float64 tensors plus string metadata.
///
/// Byte layout, all integers little-endian:
///   magic        8 bytes  "BERTOCKP"
///   version      u32      (currently 1)
///   meta_count   u32
///   meta_count x { u32 key_len, key bytes, u32 value_len, value bytes }
///   tensor_count u32
///   tensor_count x { u32 name_len, name bytes, u32 ndim, ndim x u64 dim,
///                    prod(dim) x f64 (IEEE-754, little-endian, row-major) }
///
/// Metadata keys written by this library: "kind" (bert | fnn), "vocab_hash"
/// (16 hex digits), the ModelConfig fields prefixed "model.", and free-form
/// training provenance ("train.loss", "train.seed", "berto.orientation").
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::map<std::string, std::string> meta;
  std::vector<NamedTensor> tensors;

  void write(std::ostream& out) const;
  static Checkpoint read(std::istream& in);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  const std::string& get(const std::string& key) const;
};

std::string hex64(std::uint64_t v);

Checkpoint to_checkpoint(const ModelWeights& w, const Vocabulary& vocab);
/// Throws CheckpointError when the kind or vocabulary hash does not match.
ModelWeights model_from_checkpoint(const Checkpoint& c, const Vocabulary& vocab);

Checkpoint to_checkpoint(const FnnWeights& w);
FnnWeights fnn_from_checkpoint(const Checkpoint& c);

std::map<std::string, std::string> config_to_meta(const ModelConfig& cfg);
ModelConfig config_from_meta(const std::map<std::string, std::string>& meta);

}  // namespace berto
