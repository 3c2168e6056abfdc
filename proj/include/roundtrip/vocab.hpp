#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace roundtrip::data {

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;

/// Token <-> id bijection. Ids 0-3 are PAD/BOS/EOS/UNK, followed by one tag
/// token `<lang>` per language, followed by ordinary tokens in insertion order.
class Vocab {
 public:
  static constexpr int kFormatVersion = 1;

  Vocab() = default;
  explicit Vocab(std::vector<std::string> languages);

  static std::string tag_token(const std::string& language) { return "<" + language + ">"; }
  static bool looks_like_tag(const std::string& token);

  int add(const std::string& token);
  std::optional<int> find(const std::string& token) const;
  /// Id of `token`, or UNK.
  int id(const std::string& token) const;
  const std::string& token(int id) const;
  std::size_t size() const { return tokens_.size(); }

  const std::vector<std::string>& languages() const { return languages_; }
  int tag_id(const std::string& language) const;
  bool is_tag(int id) const;
  std::optional<std::string> tag_language(int id) const;
  /// The other language of a two-language vocabulary.
  std::string other_language(const std::string& language) const;
  int flip_tag(int tag) const;

  /// Maps tokens to ids; throws on out-of-vocabulary tokens unless allow_unk.
  std::vector<int> encode(std::span<const std::string> tokens, bool allow_unk = true) const;
  /// Maps ids back to tokens, optionally dropping PAD/BOS/EOS and tags.
  std::vector<std::string> decode(std::span<const int> ids, bool strip_special = false) const;

  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);
  std::string serialize() const;
  static Vocab deserialize(const std::string& text);

  friend bool operator==(const Vocab& a, const Vocab& b) {
    return a.tokens_ == b.tokens_ && a.languages_ == b.languages_;
  }

 private:
  std::vector<std::string> languages_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

}  // namespace roundtrip::data
