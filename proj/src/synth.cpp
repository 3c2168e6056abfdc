#include "roundtrip/synth.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <stdexcept>

namespace roundtrip::synth {

Task parse_task(const std::string& name) {
  if (name == "reversal") return Task::reversal;
  if (name == "cipher") return Task::cipher;
  if (name == "copy") return Task::copy;
  throw std::invalid_argument("unknown task '" + name + "' (reversal|cipher|copy)");
}

std::string to_string(Task task) {
  switch (task) {
    case Task::reversal: return "reversal";
    case Task::cipher: return "cipher";
    case Task::copy: return "copy";
  }
  return "?";
}

std::string word(std::size_t i) { return "t" + std::to_string(i); }

std::string cipher_word(const std::string& w, std::size_t vocab) {
  if (w.size() < 2 || w[0] != 't') throw std::invalid_argument("not a synthetic word: " + w);
  const std::size_t i = std::stoul(w.substr(1));
  if (i >= vocab) throw std::invalid_argument("word outside vocabulary: " + w);
  const std::size_t j = i ^ 1U;
  return word(j < vocab ? j : i);
}

Sentence apply_task(Task task, const Sentence& source, std::size_t vocab) {
  switch (task) {
    case Task::reversal: return Sentence(source.rbegin(), source.rend());
    case Task::copy: return source;
    case Task::cipher: {
      Sentence out;
      out.reserve(source.size());
      for (const auto& w : source) out.push_back(cipher_word(w, vocab));
      return out;
    }
  }
  return source;
}

Corpus synthesize(const Config& c) {
  if (c.size == 0) throw std::invalid_argument("synthetic corpus size must be at least 1");
  if (c.vocab == 0) throw std::invalid_argument("synthetic vocabulary must be non-empty");
  if (c.min_len == 0 || c.min_len > c.max_len) throw std::invalid_argument("need 1 <= min_len <= max_len");
  const std::size_t dev = c.dev_size ? c.dev_size : std::max<std::size_t>(1, c.size / 10);
  const std::size_t test = c.test_size ? c.test_size : std::max<std::size_t>(1, c.size / 10);
  const std::size_t total = c.size + dev + test;

  std::mt19937_64 rng(c.seed);
  std::uniform_int_distribution<std::size_t> len(c.min_len, c.max_len), tok(0, c.vocab - 1);
  std::set<Sentence> seen;
  std::vector<Sentence> sources;
  sources.reserve(total);
  // Plenty of attempts for any non-degenerate setting; tiny spaces fail loudly.
  for (std::size_t attempts = 0; sources.size() < total; ++attempts) {
    if (attempts > 100 * total + 1000) throw std::invalid_argument("cannot draw enough distinct sentences");
    Sentence s(len(rng));
    for (auto& w : s) w = word(tok(rng));
    if (seen.insert(s).second) sources.push_back(std::move(s));
  }
  Corpus corpus;
  auto fill = [&](std::vector<Pair>& out, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) out.push_back({sources[i], apply_task(c.task, sources[i], c.vocab)});
  };
  fill(corpus.train, 0, c.size);
  fill(corpus.dev, c.size, c.size + dev);
  fill(corpus.test, c.size + dev, total);
  return corpus;
}

namespace {

void write_lines(const std::filesystem::path& path, const std::vector<Pair>& pairs, bool source) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& p : pairs) {
    const auto& s = source ? p.source : p.target;
    for (std::size_t i = 0; i < s.size(); ++i) out << (i ? " " : "") << s[i];
    out << '\n';
  }
}

}  // namespace

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir, const std::string& src_lang,
                  const std::string& tgt_lang) {
  std::filesystem::create_directories(dir);
  const std::pair<const char*, const std::vector<Pair>*> splits[] = {
      {"train", &corpus.train}, {"dev", &corpus.dev}, {"test", &corpus.test}};
  for (const auto& [name, pairs] : splits) {
    write_lines(dir / (std::string(name) + "." + src_lang), *pairs, true);
    write_lines(dir / (std::string(name) + "." + tgt_lang), *pairs, false);
  }
}

}  // namespace roundtrip::synth
