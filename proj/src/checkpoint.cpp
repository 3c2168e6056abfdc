#include "roundtrip/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace roundtrip::ckpt {

namespace {

constexpr char kMagic[8] = {'R', 'T', 'R', 'I', 'P', 'C', 'K', 'P'};
constexpr std::uint64_t kMaxBlob = std::uint64_t(1) << 34;

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void str(const std::string& s) {
    u64(s.size());
    bytes_.append(s);
  }
  void tensor(const Tensor& t, std::uint32_t element_bytes) {
    u32(static_cast<std::uint32_t>(t.shape().size()));
    for (auto d : t.shape()) u64(d);
    for (Real v : t.values()) {
      if (element_bytes == 8) {
        u64(std::bit_cast<std::uint64_t>(static_cast<double>(v)));
      } else {
        u32(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      }
    }
  }
  const std::string& bytes() const { return bytes_; }

 private:
  std::string bytes_;
};

class Reader {
 public:
  Reader(std::string bytes, std::string origin) : bytes_(std::move(bytes)), origin_(std::move(origin)) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(u8()) << (8 * i);
    return v;
  }
  std::string str() {
    const auto n = u64();
    if (n > kMaxBlob) fail("implausible blob length");
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  Tensor tensor(std::uint32_t element_bytes) {
    const auto ndim = u32();
    if (ndim == 0 || ndim > 8) fail("bad tensor rank");
    Shape shape(ndim);
    std::uint64_t count = 1;
    for (auto& d : shape) {
      d = u64();
      if (d == 0 || d > kMaxBlob) fail("bad tensor dimension");
      count *= d;
      if (count > kMaxBlob) fail("tensor too large");
    }
    need(count * element_bytes);
    Tensor t(shape);
    for (auto& v : t.values()) {
      v = element_bytes == 8 ? static_cast<Real>(std::bit_cast<double>(u64()))
                             : static_cast<Real>(std::bit_cast<float>(u32()));
    }
    return t;
  }
  bool done() const { return pos_ == bytes_.size(); }
  [[noreturn]] void fail(const std::string& what) const {
    throw std::runtime_error("corrupt checkpoint " + origin_ + ": " + what);
  }

 private:
  void need(std::uint64_t n) const {
    if (bytes_.size() - pos_ < n) fail("truncated");
  }
  std::string bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

std::string encode_metadata(const std::map<std::string, std::string>& meta) {
  std::string out;
  for (const auto& [k, v] : meta) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw std::invalid_argument("checkpoint metadata may not contain newlines or '=' in keys");
    }
    out += k + "=" + v + "\n";
  }
  return out;
}

std::map<std::string, std::string> decode_metadata(const std::string& text) {
  std::map<std::string, std::string> meta;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return meta;
}

std::string encode_merges(const data::SubwordModel& bpe) {
  std::string out;
  for (const auto& [a, b] : bpe.merges()) out += a + " " + b + "\n";
  return out;
}

data::SubwordModel decode_merges(const std::string& text) {
  std::vector<data::SubwordModel::Merge> merges;
  std::istringstream in(text);
  std::string a, b;
  while (in >> a >> b) merges.emplace_back(a, b);
  return data::SubwordModel(std::move(merges));
}

}  // namespace

void Checkpoint::save(const std::filesystem::path& path) const {
  if (element_bytes != 4 && element_bytes != 8) throw std::invalid_argument("checkpoint element width must be 4 or 8");
  Writer w;
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u32(kVersion);
  w.u32(element_bytes);
  w.u64(structural_hash);
  w.str(config.serialize());
  w.str(encode_metadata(metadata));
  w.str(vocab.serialize());
  w.str(encode_merges(bpe));
  w.u64(parameters.size());
  for (const auto& p : parameters) {
    w.str(p.name);
    w.tensor(p.value, element_bytes);
  }
  w.u64(moments.size());
  for (const auto& m : moments) {
    w.str(m.name);
    w.tensor(m.m, element_bytes);
    w.tensor(m.v, element_bytes);
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write to a sibling file first so a crash never leaves a torn checkpoint.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + tmp.string());
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw std::runtime_error("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint not found: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  Reader r(buf.str(), path.string());
  for (char c : kMagic)
    if (r.u8() != static_cast<std::uint8_t>(c)) r.fail("bad magic");
  const auto version = r.u32();
  if (version != kVersion) r.fail("unsupported version " + std::to_string(version));
  Checkpoint ck;
  ck.element_bytes = r.u32();
  if (ck.element_bytes != 4 && ck.element_bytes != 8) r.fail("bad element width");
  ck.structural_hash = r.u64();
  ck.config = RunConfig::parse(r.str());
  ck.metadata = decode_metadata(r.str());
  ck.vocab = data::Vocab::deserialize(r.str());
  ck.bpe = decode_merges(r.str());
  const auto n_params = r.u64();
  for (std::uint64_t i = 0; i < n_params; ++i) {
    NamedTensor t;
    t.name = r.str();
    t.value = r.tensor(ck.element_bytes);
    ck.parameters.push_back(std::move(t));
  }
  const auto n_moments = r.u64();
  for (std::uint64_t i = 0; i < n_moments; ++i) {
    MomentEntry m;
    m.name = r.str();
    m.m = r.tensor(ck.element_bytes);
    m.v = r.tensor(ck.element_bytes);
    ck.moments.push_back(std::move(m));
  }
  if (!r.done()) r.fail("trailing bytes");
  return ck;
}

const std::string& Checkpoint::meta(const std::string& key) const {
  auto it = metadata.find(key);
  if (it == metadata.end()) throw std::runtime_error("checkpoint metadata lacks '" + key + "'");
  return it->second;
}

void restore_parameters(ad::ParameterStore& store, const Checkpoint& ckpt, bool allow_missing) {
  std::set<std::string> seen;
  for (const auto& t : ckpt.parameters) {
    if (!store.contains(t.name)) throw StructureMismatch("checkpoint parameter '" + t.name + "' unknown to the model");
    auto& p = store.get(t.name);
    if (p.value.shape() != t.value.shape()) {
      throw StructureMismatch("parameter '" + t.name + "' has shape " + shape_str(t.value.shape()) +
                              " in the checkpoint but " + shape_str(p.value.shape()) + " in the model");
    }
    p.value = t.value;
    seen.insert(t.name);
  }
  if (!allow_missing) {
    for (const auto& p : store)
      if (!seen.count(p->name)) throw StructureMismatch("checkpoint lacks parameter '" + p->name + "'");
  }
}

std::vector<NamedTensor> snapshot_parameters(const ad::ParameterStore& store) {
  std::vector<NamedTensor> out;
  for (const auto& p : store) out.push_back({p->name, p->value});
  return out;
}

void verify_structure(const RunConfig& cfg, const Checkpoint& ckpt) {
  const auto expected = cfg.structural_hash(ckpt.vocab.size());
  if (expected != ckpt.structural_hash) {
    throw StructureMismatch("checkpoint structure (dims/vocab) differs from the configuration: checkpoint has " +
                            ckpt.config.get("embed_dim") + "/" + ckpt.config.get("hidden_dim") + "/" +
                            ckpt.config.get("attention_dim") + ", config has " + cfg.get("embed_dim") + "/" +
                            cfg.get("hidden_dim") + "/" + cfg.get("attention_dim"));
  }
}

}  // namespace roundtrip::ckpt
