#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "roundtrip/bpe.hpp"
#include "roundtrip/config.hpp"
#include "roundtrip/tape.hpp"
#include "roundtrip/vocab.hpp"

namespace roundtrip::ckpt {

/// Raised when a checkpoint's parameter structure does not match the run.
class StructureMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct MomentEntry {
  std::string name;
  Tensor m;
  Tensor v;
};

/// Little-endian binary file: magic, version, element width (4 or 8 bytes),
/// structural hash, then length-prefixed config, metadata, vocabulary and
/// subword blobs, named parameter tensors and optimiser moments.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::uint64_t structural_hash = 0;
  std::uint32_t element_bytes = sizeof(Real);
  RunConfig config;
  std::map<std::string, std::string> metadata;
  data::Vocab vocab;
  data::SubwordModel bpe;
  std::vector<NamedTensor> parameters;
  std::vector<MomentEntry> moments;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  const std::string& meta(const std::string& key) const;
};

/// Copies checkpoint tensors into `store`. Every store parameter must be
/// present with the same shape unless `allow_missing`; checkpoint tensors
/// unknown to the store are an error.
void restore_parameters(ad::ParameterStore& store, const Checkpoint& ckpt, bool allow_missing = false);
std::vector<NamedTensor> snapshot_parameters(const ad::ParameterStore& store);

/// Throws StructureMismatch unless cfg and the checkpoint agree on every
/// shape-determining key and the vocabulary size.
void verify_structure(const RunConfig& cfg, const Checkpoint& ckpt);

}  // namespace roundtrip::ckpt
