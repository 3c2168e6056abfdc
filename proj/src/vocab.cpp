#include "roundtrip/vocab.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace roundtrip::data {

namespace {

constexpr const char* kHeader = "#roundtrip-vocab";
const char* const kSpecials[] = {"<pad>", "<s>", "</s>", "<unk>"};

}  // namespace

Vocab::Vocab(std::vector<std::string> languages) : languages_(std::move(languages)) {
  for (const char* s : kSpecials) add(s);
  for (const auto& lang : languages_) {
    if (lang.empty() || lang.find_first_of(" \t<>") != std::string::npos) {
      throw std::invalid_argument("invalid language code '" + lang + "'");
    }
    if (find(tag_token(lang))) throw std::invalid_argument("duplicate language '" + lang + "'");
    add(tag_token(lang));
  }
}

bool Vocab::looks_like_tag(const std::string& token) {
  return token.size() > 2 && token.front() == '<' && token.back() == '>' && token != "<pad>" && token != "<s>" &&
         token != "</s>" && token != "<unk>";
}

int Vocab::add(const std::string& token) {
  if (token.empty() || token.find_first_of(" \t\n") != std::string::npos) {
    throw std::invalid_argument("vocabulary tokens must be non-empty and contain no whitespace");
  }
  if (auto it = ids_.find(token); it != ids_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  ids_.emplace(token, id);
  return id;
}

std::optional<int> Vocab::find(const std::string& token) const {
  if (auto it = ids_.find(token); it != ids_.end()) return it->second;
  return std::nullopt;
}

int Vocab::id(const std::string& token) const { return find(token).value_or(kUnk); }

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

int Vocab::tag_id(const std::string& language) const {
  auto id = find(tag_token(language));
  if (!id) throw std::invalid_argument("language '" + language + "' has no tag in this vocabulary");
  return *id;
}

bool Vocab::is_tag(int id) const { return id >= 4 && id < 4 + static_cast<int>(languages_.size()); }

std::optional<std::string> Vocab::tag_language(int id) const {
  if (!is_tag(id)) return std::nullopt;
  return languages_[static_cast<std::size_t>(id - 4)];
}

std::string Vocab::other_language(const std::string& language) const {
  if (languages_.size() != 2) throw std::logic_error("tag flipping needs exactly two languages");
  if (language == languages_[0]) return languages_[1];
  if (language == languages_[1]) return languages_[0];
  throw std::invalid_argument("unknown language '" + language + "'");
}

int Vocab::flip_tag(int tag) const {
  auto lang = tag_language(tag);
  if (!lang) throw std::invalid_argument("id " + std::to_string(tag) + " is not a language tag");
  return tag_id(other_language(*lang));
}

std::vector<int> Vocab::encode(std::span<const std::string> tokens, bool allow_unk) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) {
    auto id = find(t);
    if (!id && !allow_unk) throw std::out_of_range("token '" + t + "' not in vocabulary");
    out.push_back(id.value_or(kUnk));
  }
  return out;
}

std::vector<std::string> Vocab::decode(std::span<const int> ids, bool strip_special) const {
  std::vector<std::string> out;
  for (int id : ids) {
    if (strip_special && (id == kPad || id == kBos || id == kEos || is_tag(id))) continue;
    out.push_back(token(id));
  }
  return out;
}

std::string Vocab::serialize() const {
  std::ostringstream out;
  out << kHeader << ' ' << kFormatVersion << '\n';
  out << "#languages";
  for (const auto& l : languages_) out << ' ' << l;
  out << '\n';
  for (std::size_t i = 0; i < tokens_.size(); ++i) out << tokens_[i] << ' ' << i << '\n';
  return out.str();
}

Vocab Vocab::deserialize(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("vocab: empty file");
  {
    std::istringstream head(line);
    std::string magic;
    int version = 0;
    head >> magic >> version;
    if (magic != kHeader) throw std::runtime_error("vocab: missing header");
    if (version != kFormatVersion) throw std::runtime_error("vocab: unsupported version " + std::to_string(version));
  }
  if (!std::getline(in, line) || line.rfind("#languages", 0) != 0) {
    throw std::runtime_error("vocab: missing language line");
  }
  std::vector<std::string> languages;
  {
    std::istringstream langs(line.substr(10));
    std::string l;
    while (langs >> l) languages.push_back(l);
  }
  Vocab vocab(languages);
  std::size_t expected = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string token;
    std::size_t id = 0;
    if (!(row >> token >> id)) throw std::runtime_error("vocab: malformed line '" + line + "'");
    if (id != expected) throw std::runtime_error("vocab: ids must be dense and ordered");
    if (id < vocab.size()) {
      if (vocab.token(static_cast<int>(id)) != token) throw std::runtime_error("vocab: reserved id mismatch");
    } else if (static_cast<std::size_t>(vocab.add(token)) != id) {
      throw std::runtime_error("vocab: duplicate token '" + token + "'");
    }
    ++expected;
  }
  return vocab;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << serialize();
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return deserialize(buffer.str());
}

}  // namespace roundtrip::data
