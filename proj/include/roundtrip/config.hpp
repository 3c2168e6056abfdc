#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "roundtrip/tensor.hpp"

namespace roundtrip {

enum class Phase { pretrain, finetune };
enum class ReconMode { none, sampled, hidden };
enum class Reduction { mean, sum };

std::string to_string(Phase p);
std::string to_string(ReconMode m);
std::string to_string(Reduction r);
Phase parse_phase(const std::string& s);
ReconMode parse_recon_mode(const std::string& s);
Reduction parse_reduction(const std::string& s);

/// Every run setting, serialised as flat `key=value` lines.
struct RunConfig {
  // data
  std::string data_dir = "data";
  std::string src_lang = "en";
  std::string tgt_lang = "sw";
  std::size_t max_len = 80;
  std::size_t bpe_merges = 0;
  bool lowercase = true;

  // model
  std::size_t embed_dim = 64;
  std::size_t hidden_dim = 64;
  std::size_t attention_dim = 64;
  Real dropout = Real(0.2);
  bool layer_norm = true;

  // optimisation and schedule
  std::size_t batch_size = 48;
  Real pretrain_lr = Real(1e-3);
  Real finetune_lr = Real(1e-4);
  Real lr_decay = Real(0.7);
  std::size_t patience_decay = 4;
  std::size_t patience_stop = 10;
  std::size_t checkpoint_interval = 1000;
  std::size_t max_updates = 0;  // 0: until early stopping
  Real clip_norm = 0;           // 0: no clipping
  Real adam_beta1 = Real(0.9);
  Real adam_beta2 = Real(0.999);
  Real adam_epsilon = Real(1e-8);
  Reduction reduction = Reduction::mean;

  // reconstruction
  ReconMode recon_mode = ReconMode::sampled;
  Real beta = 0;
  Real tau = 2;
  std::size_t cap_factor = 2;
  std::size_t cap_offset = 5;
  bool sampling_dropout = true;
  bool teacher_forced_sampling = false;
  Real hidden_enc_weight = Real(0.5);
  Real hidden_dec_weight = Real(0.5);

  // decoding
  std::size_t beam_width = 5;

  // run
  std::uint64_t seed = 1;
  std::string out_dir = "run";

  static const std::vector<std::string>& keys();
  std::string get(const std::string& key) const;
  /// Throws std::invalid_argument on unknown keys or malformed values.
  void set(const std::string& key, const std::string& value);

  std::string serialize() const;
  /// Parses `key=value` lines; blank lines and `#` comments are ignored.
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// FNV-1a over the keys that fix parameter shapes.
  std::uint64_t structural_hash(std::size_t vocab_size) const;

  friend bool operator==(const RunConfig& a, const RunConfig& b) { return a.serialize() == b.serialize(); }
};

/// Shortest text that parses back to the same value.
std::string format_real(Real v);
Real parse_real(const std::string& s);

std::uint64_t fnv1a(const std::string& bytes, std::uint64_t seed = 1469598103934665603ULL);

}  // namespace roundtrip
