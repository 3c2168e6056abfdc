#include "roundtrip/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace roundtrip::data {

TaggedSentence TaggedSentence::tagged(const std::string& language, std::vector<std::string> words) {
  TaggedSentence s;
  s.tokens.reserve(words.size() + 1);
  s.tokens.push_back(Vocab::tag_token(language));
  for (auto& w : words) s.tokens.push_back(std::move(w));
  return s;
}

const std::string& TaggedSentence::tag() const {
  if (!has_tag()) throw std::invalid_argument("sentence has no language tag");
  return tokens.front();
}

std::vector<std::string> TaggedSentence::words() const {
  if (tokens.empty()) return {};
  return {tokens.begin() + 1, tokens.end()};
}

std::vector<std::string> tokenize(const std::string& line, bool lowercase) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) {
    if (lowercase) {
      std::transform(tok.begin(), tok.end(), tok.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    }
    out.push_back(std::move(tok));
  }
  return out;
}

std::vector<ParallelPair> read_parallel(const std::filesystem::path& source_path,
                                        const std::filesystem::path& target_path, const std::string& source_lang,
                                        const std::string& target_lang, bool lowercase) {
  std::ifstream src(source_path);
  if (!src) throw std::runtime_error("cannot read " + source_path.string());
  std::ifstream tgt(target_path);
  if (!tgt) throw std::runtime_error("cannot read " + target_path.string());
  std::vector<ParallelPair> pairs;
  std::string a, b;
  std::size_t line = 0;
  while (true) {
    const bool has_a = static_cast<bool>(std::getline(src, a));
    const bool has_b = static_cast<bool>(std::getline(tgt, b));
    if (!has_a && !has_b) break;
    ++line;
    if (has_a != has_b) {
      throw std::runtime_error("parallel files differ in length at line " + std::to_string(line));
    }
    auto wa = tokenize(a, lowercase);
    auto wb = tokenize(b, lowercase);
    if (wa.empty() || wb.empty()) continue;
    pairs.push_back({TaggedSentence::tagged(source_lang, std::move(wa)),
                     TaggedSentence::tagged(target_lang, std::move(wb))});
  }
  return pairs;
}

std::vector<ParallelPair> filter_by_length(const std::vector<ParallelPair>& pairs, std::size_t max_len) {
  if (max_len == 0) throw std::invalid_argument("filter_by_length: max_len must be at least 1");
  std::vector<ParallelPair> out;
  for (const auto& p : pairs) {
    if (p.source.word_count() <= max_len && p.target.word_count() <= max_len) out.push_back(p);
  }
  return out;
}

std::vector<ParallelPair> build_bidirectional_corpus(const std::vector<ParallelPair>& pairs) {
  for (const auto& p : pairs) {
    if (!p.source.has_tag() || !p.target.has_tag()) {
      throw std::invalid_argument("build_bidirectional_corpus: every sentence must start with a language tag");
    }
    if (p.source.tag() == p.target.tag()) {
      throw std::invalid_argument("build_bidirectional_corpus: source and target tags must differ");
    }
    if (p.source.word_count() == 0 || p.target.word_count() == 0) {
      throw std::invalid_argument("build_bidirectional_corpus: empty sentence");
    }
  }
  std::vector<ParallelPair> out;
  out.reserve(pairs.size() * 2);
  out.insert(out.end(), pairs.begin(), pairs.end());
  for (const auto& p : pairs) out.push_back({p.target, p.source});
  return out;
}

Vocab build_vocab(const std::vector<ParallelPair>& pairs, const std::vector<std::string>& languages) {
  Vocab vocab(languages);
  // Sorted insertion so the id assignment does not depend on corpus order.
  std::set<std::string> tokens;
  for (const auto& p : pairs) {
    for (const auto* side : {&p.source, &p.target}) {
      for (std::size_t i = side->has_tag() ? 1 : 0; i < side->tokens.size(); ++i) tokens.insert(side->tokens[i]);
    }
  }
  for (const auto& t : tokens) vocab.add(t);
  return vocab;
}

std::vector<int> encode_sentence(const Vocab& vocab, const TaggedSentence& sentence, bool allow_unk) {
  if (!sentence.has_tag()) throw std::invalid_argument("encode_sentence: missing language tag");
  auto ids = vocab.encode(sentence.tokens, allow_unk);
  if (!vocab.is_tag(ids.front())) throw std::invalid_argument("encode_sentence: unknown language tag " + sentence.tag());
  ids.push_back(kEos);
  return ids;
}

std::vector<Instance> encode_corpus(const Vocab& vocab, const std::vector<ParallelPair>& pairs, bool allow_unk) {
  std::vector<Instance> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    out.push_back({encode_sentence(vocab, p.source, allow_unk), encode_sentence(vocab, p.target, allow_unk)});
  }
  return out;
}

PaddedIds PaddedIds::from(const std::vector<std::vector<int>>& sequences) {
  PaddedIds out;
  out.rows = sequences.size();
  for (const auto& s : sequences) out.length = std::max(out.length, s.size());
  out.ids.assign(out.rows * out.length, kPad);
  out.mask.assign(out.rows * out.length, 0);
  for (std::size_t i = 0; i < out.rows; ++i) {
    for (std::size_t t = 0; t < sequences[i].size(); ++t) {
      out.ids[i * out.length + t] = sequences[i][t];
      out.mask[i * out.length + t] = 1;
    }
  }
  return out;
}

std::size_t PaddedIds::row_length(std::size_t row) const {
  std::size_t n = 0;
  for (std::size_t t = 0; t < length; ++t) n += mask[row * length + t] != 0;
  return n;
}

std::vector<int> PaddedIds::column(std::size_t t) const {
  std::vector<int> col(rows);
  for (std::size_t i = 0; i < rows; ++i) col[i] = ids[i * length + t];
  return col;
}

Tensor PaddedIds::mask_column(std::size_t t) const {
  Tensor col({rows, 1});
  for (std::size_t i = 0; i < rows; ++i) col[i] = mask[i * length + t];
  return col;
}

std::vector<int> PaddedIds::sequence(std::size_t row) const {
  std::vector<int> out;
  for (std::size_t t = 0; t < length; ++t)
    if (mask[row * length + t] != 0) out.push_back(ids[row * length + t]);
  return out;
}

Real PaddedIds::token_count() const {
  Real n = 0;
  for (Real m : mask) n += m;
  return n;
}

Batch make_batch(const std::vector<Instance>& corpus, const std::vector<std::size_t>& indices) {
  std::vector<std::vector<int>> src, tgt;
  for (auto i : indices) {
    src.push_back(corpus.at(i).source);
    tgt.push_back(corpus.at(i).target);
  }
  Batch b;
  b.source = PaddedIds::from(src);
  b.target = PaddedIds::from(tgt);
  b.size = indices.size();
  b.indices = indices;
  return b;
}

namespace {

std::vector<Batch> chunk(const std::vector<Instance>& corpus, const std::vector<std::size_t>& order,
                         std::size_t batch_size) {
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const auto end = std::min(order.size(), start + batch_size);
    out.push_back(make_batch(corpus, {order.begin() + static_cast<std::ptrdiff_t>(start),
                                      order.begin() + static_cast<std::ptrdiff_t>(end)}));
  }
  return out;
}

}  // namespace

std::vector<Batch> make_batches(const std::vector<Instance>& corpus, std::size_t batch_size, std::uint64_t seed) {
  if (corpus.empty()) throw std::invalid_argument("make_batches: empty corpus");
  if (batch_size == 0) throw std::invalid_argument("make_batches: batch size must be positive");
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  // Fisher-Yates with explicit draws so the order is identical across standard libraries.
  for (std::size_t i = order.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return chunk(corpus, order, batch_size);
}

std::vector<Batch> make_sequential_batches(const std::vector<Instance>& corpus, std::size_t batch_size) {
  if (corpus.empty()) throw std::invalid_argument("make_sequential_batches: empty corpus");
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  return chunk(corpus, order, batch_size);
}

}  // namespace roundtrip::data
