#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "roundtrip/tensor.hpp"
#include "roundtrip/vocab.hpp"

namespace roundtrip::data {

/// Tokens of one sentence; tokens[0] is the `<lang>` tag.
struct TaggedSentence {
  std::vector<std::string> tokens;

  static TaggedSentence tagged(const std::string& language, std::vector<std::string> words);
  bool has_tag() const { return !tokens.empty() && Vocab::looks_like_tag(tokens.front()); }
  const std::string& tag() const;
  std::size_t word_count() const { return tokens.empty() ? 0 : tokens.size() - 1; }
  std::vector<std::string> words() const;

  friend bool operator==(const TaggedSentence&, const TaggedSentence&) = default;
};

struct ParallelPair {
  TaggedSentence source;
  TaggedSentence target;

  friend bool operator==(const ParallelPair&, const ParallelPair&) = default;
};

/// Lowercases (ASCII) and splits on whitespace.
std::vector<std::string> tokenize(const std::string& line, bool lowercase = true);

/// Reads two aligned one-sentence-per-line files. Lines where either side is
/// empty are skipped.
std::vector<ParallelPair> read_parallel(const std::filesystem::path& source_path,
                                        const std::filesystem::path& target_path, const std::string& source_lang,
                                        const std::string& target_lang, bool lowercase = true);

/// Keeps pairs whose both sides have at most max_len tokens, tag excluded.
std::vector<ParallelPair> filter_by_length(const std::vector<ParallelPair>& pairs, std::size_t max_len);

/// Appends the source/target swap of every pair after the originals.
std::vector<ParallelPair> build_bidirectional_corpus(const std::vector<ParallelPair>& pairs);

/// Collects every token of both sides into a vocabulary over `languages`.
Vocab build_vocab(const std::vector<ParallelPair>& pairs, const std::vector<std::string>& languages);

/// Encoded instance: both sides are `tag w1 .. wn </s>`.
struct Instance {
  std::vector<int> source;
  std::vector<int> target;
};

std::vector<int> encode_sentence(const Vocab& vocab, const TaggedSentence& sentence, bool allow_unk = true);
std::vector<Instance> encode_corpus(const Vocab& vocab, const std::vector<ParallelPair>& pairs, bool allow_unk = true);

/// Row-major [rows x length] id matrix padded with PAD, with a 0/1 mask.
struct PaddedIds {
  std::size_t rows = 0;
  std::size_t length = 0;
  std::vector<int> ids;
  std::vector<Real> mask;

  static PaddedIds from(const std::vector<std::vector<int>>& sequences);
  int at(std::size_t row, std::size_t t) const { return ids[row * length + t]; }
  std::size_t row_length(std::size_t row) const;
  std::vector<int> column(std::size_t t) const;
  /// Mask entries of step t as a [rows x 1] tensor.
  Tensor mask_column(std::size_t t) const;
  std::vector<int> sequence(std::size_t row) const;
  Real token_count() const;
};

struct Batch {
  PaddedIds source;
  PaddedIds target;
  std::size_t size = 0;
  std::vector<std::size_t> indices;  // positions in the corpus
};

Batch make_batch(const std::vector<Instance>& corpus, const std::vector<std::size_t>& indices);

/// Seeded shuffle, then consecutive groups of batch_size sentences; every
/// instance appears exactly once.
std::vector<Batch> make_batches(const std::vector<Instance>& corpus, std::size_t batch_size, std::uint64_t seed);
/// Fixed order, no shuffle (evaluation).
std::vector<Batch> make_sequential_batches(const std::vector<Instance>& corpus, std::size_t batch_size);

}  // namespace roundtrip::data
