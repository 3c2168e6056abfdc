#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace roundtrip::data {

/// Greedy byte-pair merges learned jointly over both languages. Segmented
/// words mark every non-final piece with a trailing "@@".
class SubwordModel {
 public:
  using Merge = std::pair<std::string, std::string>;

  SubwordModel() = default;
  explicit SubwordModel(std::vector<Merge> merges) : merges_(std::move(merges)) {}

  /// Learns up to `merges` merges from whitespace-tokenised sentences. Stops
  /// early when no adjacent pair is left. Ties go to the lexicographically
  /// smallest pair.
  static SubwordModel learn(const std::vector<std::vector<std::string>>& sentences, std::size_t merges);

  /// An empty merge table leaves words untouched.
  std::vector<std::string> segment(const std::vector<std::string>& words) const;
  static std::vector<std::string> desegment(const std::vector<std::string>& pieces);

  const std::vector<Merge>& merges() const { return merges_; }
  bool empty() const { return merges_.empty(); }

  void save(const std::filesystem::path& path) const;
  static SubwordModel load(const std::filesystem::path& path);

 private:
  std::vector<std::string> segment_word(const std::string& word) const;

  std::vector<Merge> merges_;
};

/// Splits a UTF-8 string into code points (invalid bytes stand alone).
std::vector<std::string> utf8_symbols(const std::string& word);

}  // namespace roundtrip::data
