#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace roundtrip::synth {

enum class Task { reversal, cipher, copy };

/// Throws std::invalid_argument on anything but reversal|cipher|copy.
Task parse_task(const std::string& name);
std::string to_string(Task task);

struct Config {
  Task task = Task::reversal;
  std::size_t size = 2000;     // training pairs
  std::size_t dev_size = 0;    // 0: size / 10, at least 1
  std::size_t test_size = 0;   // 0: size / 10, at least 1
  std::size_t vocab = 32;      // word types
  std::size_t min_len = 3;
  std::size_t max_len = 10;
  std::uint64_t seed = 1;
};

using Sentence = std::vector<std::string>;

struct Pair {
  Sentence source;
  Sentence target;
};

struct Corpus {
  std::vector<Pair> train, dev, test;
};

/// The i-th word type, "t<i>".
std::string word(std::size_t i);
/// Involutive substitution: word 2k <-> word 2k+1 (an odd last word maps to itself).
std::string cipher_word(const std::string& w, std::size_t vocab);
Sentence apply_task(Task task, const Sentence& source, std::size_t vocab);

/// Distinct random source sentences split into disjoint train/dev/test sets.
Corpus synthesize(const Config& config);

/// Writes `<dir>/<split>.<lang>` files, one space-joined sentence per line.
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir, const std::string& src_lang,
                  const std::string& tgt_lang);

}  // namespace roundtrip::synth
