#include "roundtrip/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace roundtrip {

std::string to_string(Phase p) { return p == Phase::pretrain ? "pretrain" : "finetune"; }

std::string to_string(ReconMode m) {
  switch (m) {
    case ReconMode::none: return "none";
    case ReconMode::sampled: return "sampled";
    case ReconMode::hidden: return "hidden";
  }
  return "?";
}

std::string to_string(Reduction r) { return r == Reduction::mean ? "mean" : "sum"; }

Phase parse_phase(const std::string& s) {
  if (s == "pretrain") return Phase::pretrain;
  if (s == "finetune") return Phase::finetune;
  throw std::invalid_argument("unknown phase '" + s + "' (pretrain|finetune)");
}

ReconMode parse_recon_mode(const std::string& s) {
  if (s == "none") return ReconMode::none;
  if (s == "sampled") return ReconMode::sampled;
  if (s == "hidden") return ReconMode::hidden;
  throw std::invalid_argument("unknown recon mode '" + s + "' (sampled|hidden|none)");
}

Reduction parse_reduction(const std::string& s) {
  if (s == "mean") return Reduction::mean;
  if (s == "sum") return Reduction::sum;
  throw std::invalid_argument("unknown reduction '" + s + "' (mean|sum)");
}

std::string format_real(Real v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& s) {
  T out{};
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw std::invalid_argument("config key '" + key + "': cannot parse '" + s + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::invalid_argument("config key '" + key + "': expected true/false, got '" + s + "'");
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  bool structural = false;
};

template <typename T>
Field field(T RunConfig::*member, bool structural = false) {
  Field f;
  f.structural = structural;
  f.get = [member](const RunConfig& c) -> std::string {
    const T& v = c.*member;
    if constexpr (std::is_same_v<T, std::string>) {
      return v;
    } else if constexpr (std::is_same_v<T, bool>) {
      return v ? "true" : "false";
    } else if constexpr (std::is_floating_point_v<T>) {
      return format_real(v);
    } else if constexpr (std::is_same_v<T, Phase> || std::is_same_v<T, ReconMode> || std::is_same_v<T, Reduction>) {
      return to_string(v);
    } else {
      return std::to_string(v);
    }
  };
  f.set = [member](RunConfig& c, const std::string& key, const std::string& s) {
    T& v = c.*member;
    if constexpr (std::is_same_v<T, std::string>) {
      v = s;
    } else if constexpr (std::is_same_v<T, bool>) {
      v = parse_bool(key, s);
    } else if constexpr (std::is_same_v<T, ReconMode>) {
      v = parse_recon_mode(s);
    } else if constexpr (std::is_same_v<T, Reduction>) {
      v = parse_reduction(s);
    } else {
      v = parse_number<T>(key, s);
    }
  };
  return f;
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"data_dir", field(&RunConfig::data_dir)},
      {"src_lang", field(&RunConfig::src_lang)},
      {"tgt_lang", field(&RunConfig::tgt_lang)},
      {"max_len", field(&RunConfig::max_len)},
      {"bpe_merges", field(&RunConfig::bpe_merges)},
      {"lowercase", field(&RunConfig::lowercase)},
      {"embed_dim", field(&RunConfig::embed_dim, true)},
      {"hidden_dim", field(&RunConfig::hidden_dim, true)},
      {"attention_dim", field(&RunConfig::attention_dim, true)},
      {"dropout", field(&RunConfig::dropout)},
      {"layer_norm", field(&RunConfig::layer_norm, true)},
      {"batch_size", field(&RunConfig::batch_size)},
      {"pretrain_lr", field(&RunConfig::pretrain_lr)},
      {"finetune_lr", field(&RunConfig::finetune_lr)},
      {"lr_decay", field(&RunConfig::lr_decay)},
      {"patience_decay", field(&RunConfig::patience_decay)},
      {"patience_stop", field(&RunConfig::patience_stop)},
      {"checkpoint_interval", field(&RunConfig::checkpoint_interval)},
      {"max_updates", field(&RunConfig::max_updates)},
      {"clip_norm", field(&RunConfig::clip_norm)},
      {"adam_beta1", field(&RunConfig::adam_beta1)},
      {"adam_beta2", field(&RunConfig::adam_beta2)},
      {"adam_epsilon", field(&RunConfig::adam_epsilon)},
      {"reduction", field(&RunConfig::reduction)},
      {"recon_mode", field(&RunConfig::recon_mode)},
      {"beta", field(&RunConfig::beta)},
      {"tau", field(&RunConfig::tau)},
      {"cap_factor", field(&RunConfig::cap_factor)},
      {"cap_offset", field(&RunConfig::cap_offset)},
      {"sampling_dropout", field(&RunConfig::sampling_dropout)},
      {"teacher_forced_sampling", field(&RunConfig::teacher_forced_sampling)},
      {"hidden_enc_weight", field(&RunConfig::hidden_enc_weight)},
      {"hidden_dec_weight", field(&RunConfig::hidden_dec_weight)},
      {"beam_width", field(&RunConfig::beam_width)},
      {"seed", field(&RunConfig::seed)},
      {"out_dir", field(&RunConfig::out_dir)},
  };
  return table;
}

const Field& lookup(const std::string& key) {
  for (const auto& [name, f] : fields())
    if (name == key) return f;
  throw std::invalid_argument("unknown config key '" + key + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [name, f] : fields()) out.push_back(name);
    return out;
  }();
  return names;
}

std::string RunConfig::get(const std::string& key) const { return lookup(key).get(*this); }

void RunConfig::set(const std::string& key, const std::string& value) { lookup(key).set(*this, key, value); }

std::string RunConfig::serialize() const {
  std::string out;
  for (const auto& [name, f] : fields()) out += name + "=" + f.get(*this) + "\n";
  return out;
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(number) + ": expected key=value");
    }
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config " + path.string());
  out << serialize();
}

Real parse_real(const std::string& s) { return parse_number<Real>("value", s); }

std::uint64_t fnv1a(const std::string& bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t RunConfig::structural_hash(std::size_t vocab_size) const {
  std::string text = "vocab_size=" + std::to_string(vocab_size) + "\n";
  for (const auto& [name, f] : fields())
    if (f.structural) text += name + "=" + f.get(*this) + "\n";
  return fnv1a(text);
}

}  // namespace roundtrip
