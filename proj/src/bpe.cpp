#include "roundtrip/bpe.hpp"

#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

namespace roundtrip::data {

namespace {

constexpr const char* kContinuation = "@@";

void merge_in_place(std::vector<std::string>& symbols, const SubwordModel::Merge& merge) {
  std::vector<std::string> out;
  out.reserve(symbols.size());
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i + 1 < symbols.size() && symbols[i] == merge.first && symbols[i + 1] == merge.second) {
      out.push_back(symbols[i] + symbols[i + 1]);
      ++i;
    } else {
      out.push_back(symbols[i]);
    }
  }
  symbols = std::move(out);
}

}  // namespace

std::vector<std::string> utf8_symbols(const std::string& word) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < word.size();) {
    const auto lead = static_cast<unsigned char>(word[i]);
    std::size_t len = 1;
    if (lead >= 0xF0) len = 4;
    else if (lead >= 0xE0) len = 3;
    else if (lead >= 0xC0) len = 2;
    if (i + len > word.size()) len = 1;
    out.push_back(word.substr(i, len));
    i += len;
  }
  return out;
}

SubwordModel SubwordModel::learn(const std::vector<std::vector<std::string>>& sentences, std::size_t merges) {
  std::map<std::string, std::size_t> word_counts;
  for (const auto& s : sentences)
    for (const auto& w : s) ++word_counts[w];
  if (word_counts.empty()) throw std::invalid_argument("learn_subword_model: empty corpus");

  std::vector<std::pair<std::vector<std::string>, std::size_t>> words;
  for (const auto& [w, n] : word_counts) words.emplace_back(utf8_symbols(w), n);

  std::vector<Merge> table;
  while (table.size() < merges) {
    std::map<Merge, std::size_t> pairs;
    for (const auto& [symbols, n] : words)
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) pairs[{symbols[i], symbols[i + 1]}] += n;
    if (pairs.empty()) break;
    auto best = pairs.begin();
    for (auto it = pairs.begin(); it != pairs.end(); ++it) {
      if (it->second > best->second) best = it;
    }
    table.push_back(best->first);
    for (auto& [symbols, n] : words) merge_in_place(symbols, best->first);
  }
  return SubwordModel(std::move(table));
}

std::vector<std::string> SubwordModel::segment_word(const std::string& word) const {
  auto symbols = utf8_symbols(word);
  std::map<Merge, std::size_t> rank;
  for (std::size_t i = 0; i < merges_.size(); ++i) rank.emplace(merges_[i], i);
  while (symbols.size() > 1) {
    std::size_t best_rank = std::numeric_limits<std::size_t>::max();
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = rank.find({symbols[i], symbols[i + 1]});
      if (it != rank.end() && it->second < best_rank) best_rank = it->second;
    }
    if (best_rank == std::numeric_limits<std::size_t>::max()) break;
    merge_in_place(symbols, merges_[best_rank]);
  }
  return symbols;
}

std::vector<std::string> SubwordModel::segment(const std::vector<std::string>& words) const {
  if (merges_.empty()) return words;
  std::vector<std::string> out;
  for (const auto& w : words) {
    auto pieces = segment_word(w);
    for (std::size_t i = 0; i + 1 < pieces.size(); ++i) out.push_back(pieces[i] + kContinuation);
    out.push_back(pieces.back());
  }
  return out;
}

std::vector<std::string> SubwordModel::desegment(const std::vector<std::string>& pieces) {
  std::vector<std::string> out;
  std::string pending;
  bool open = false;
  for (const auto& p : pieces) {
    const bool continues = p.size() >= 2 && p.compare(p.size() - 2, 2, kContinuation) == 0;
    pending += continues ? p.substr(0, p.size() - 2) : p;
    open = continues;
    if (!continues) {
      out.push_back(std::move(pending));
      pending.clear();
    }
  }
  if (open) out.push_back(std::move(pending));
  return out;
}

void SubwordModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "#roundtrip-bpe 1\n";
  for (const auto& [a, b] : merges_) out << a << ' ' << b << '\n';
}

SubwordModel SubwordModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "#roundtrip-bpe 1") throw std::runtime_error("bpe: bad header");
  std::vector<Merge> merges;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    Merge m;
    if (!(row >> m.first >> m.second)) throw std::runtime_error("bpe: malformed merge '" + line + "'");
    merges.push_back(std::move(m));
  }
  return SubwordModel(std::move(merges));
}

}  // namespace roundtrip::data
