#include "roundtrip/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "roundtrip/bpe.hpp"
#include "roundtrip/sampling.hpp"

namespace roundtrip::eval {

using ad::Var;

namespace {

model::Graph eval_graph(ad::Tape& tape) { return model::Graph{tape, false, 0, nullptr}; }

Real row_log_prob(const Tensor& log_probs, std::size_t row, int id) {
  return log_probs[row * log_probs.cols() + static_cast<std::size_t>(id)];
}

Tensor log_softmax_value(const Tensor& logits) {
  ad::Tape scratch(ad::GradMode::disabled);
  return ad::log_softmax_rows(scratch.constant(logits)).value();
}

Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& rows) {
  const std::size_t c = t.cols();
  Tensor out({rows.size(), c});
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(t.data() + rows[i] * c, c, out.data() + i * c);
  return out;
}

}  // namespace

std::vector<std::vector<int>> greedy_decode(const model::Seq2Seq& model, const data::Vocab& vocab,
                                            const data::PaddedIds& source, const DecodeConfig& config) {
  ad::Tape tape(ad::GradMode::disabled);
  auto g = eval_graph(tape);
  const auto tags = sampling::flipped_tags(vocab, source);
  const std::size_t rows = source.rows;
  auto enc = model.encode(g, source);
  auto state = model.init_state(g, enc);

  std::vector<std::size_t> caps(rows);
  for (std::size_t i = 0; i < rows; ++i) caps[i] = std::max<std::size_t>(2, config.max_len(source.row_length(i)));
  const std::size_t max_cap = *std::max_element(caps.begin(), caps.end());

  std::vector<std::vector<int>> out(rows);
  std::vector<char> active(rows, 1);
  // Step 0 consumes BOS; its prediction is replaced by the target tag.
  state = model.decode_step(g, model::PrevToken::hard(std::vector<int>(rows, data::kBos)), state, enc).state;
  for (std::size_t i = 0; i < rows; ++i) out[i].push_back(tags[i]);
  std::vector<int> prev = tags;
  for (std::size_t t = 1; t < max_cap; ++t) {
    if (std::none_of(active.begin(), active.end(), [](char a) { return a != 0; })) break;
    auto step = model.decode_step(g, model::PrevToken::hard(prev), state, enc);
    auto ids = sampling::argmax_rows(step.logits.value());
    for (std::size_t i = 0; i < rows; ++i) {
      if (!active[i]) continue;
      out[i].push_back(ids[i]);
      if (ids[i] == data::kEos || out[i].size() >= caps[i]) active[i] = 0;
    }
    prev = ids;
    state = step.state;
  }
  return out;
}

Hypothesis beam_decode(const model::Seq2Seq& model, const data::Vocab& vocab, const std::vector<int>& source,
                       const DecodeConfig& config) {
  const std::size_t width = config.beam_width;
  if (width == 0) throw std::invalid_argument("beam width must be at least 1");
  if (source.empty()) throw std::invalid_argument("beam_decode: empty source");
  const int tag = vocab.flip_tag(source.front());
  const std::size_t cap = std::max<std::size_t>(2, config.max_len(source.size()));

  ad::Tape tape(ad::GradMode::disabled);
  auto g = eval_graph(tape);
  auto batch = data::PaddedIds::from(std::vector<std::vector<int>>(width, source));
  auto enc = model.encode(g, batch);
  auto state = model.init_state(g, enc);
  state = model.decode_step(g, model::PrevToken::hard(std::vector<int>(width, data::kBos)), state, enc).state;

  struct Live {
    std::vector<int> tokens;
    Real log_prob;
  };
  std::vector<Live> live{{{tag}, 0}};
  std::vector<Hypothesis> finished;
  std::vector<int> prev(width, tag);

  for (std::size_t t = 1; t < cap && !live.empty(); ++t) {
    auto step = model.decode_step(g, model::PrevToken::hard(prev), state, enc);
    const Tensor log_probs = log_softmax_value(step.logits.value());
    const std::size_t vocab_size = log_probs.cols();

    // (score, row, token); ties resolve to the lower row, then lower token.
    std::vector<std::tuple<Real, std::size_t, int>> candidates;
    candidates.reserve(live.size() * vocab_size);
    for (std::size_t r = 0; r < live.size(); ++r) {
      for (std::size_t k = 0; k < vocab_size; ++k) {
        candidates.emplace_back(live[r].log_prob + row_log_prob(log_probs, r, static_cast<int>(k)), r,
                                static_cast<int>(k));
      }
    }
    // The first step expands the single tag hypothesis to `width`; afterwards
    // the beam shrinks as hypotheses finish.
    const std::size_t take = std::min(t == 1 ? width : live.size(), candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take), candidates.end(),
                      [](const auto& a, const auto& b) {
                        if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
                        if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
                        return std::get<2>(a) < std::get<2>(b);
                      });

    std::vector<Live> next;
    std::vector<std::size_t> parents;
    for (std::size_t c = 0; c < take; ++c) {
      const auto& [score, r, k] = candidates[c];
      auto tokens = live[r].tokens;
      tokens.push_back(k);
      const Real length = static_cast<Real>(tokens.size() - 1);
      if (k == data::kEos) {
        finished.push_back({std::move(tokens), score, score / length, true});
      } else if (tokens.size() >= cap) {
        finished.push_back({std::move(tokens), score, score / length, false});
      } else {
        next.push_back({std::move(tokens), score});
        parents.push_back(r);
      }
    }
    live = std::move(next);
    if (live.empty()) break;

    // Re-pack surviving hypotheses into the first rows; spare rows repeat row 0.
    std::vector<std::size_t> rows(width, parents.front());
    std::copy(parents.begin(), parents.end(), rows.begin());
    model::DecoderState packed = step.state;
    packed.hidden = tape.constant(gather_rows(step.state.hidden.value(), rows));
    packed.cell = tape.constant(gather_rows(step.state.cell.value(), rows));
    packed.context = tape.constant(gather_rows(step.state.context.value(), rows));
    state = packed;
    for (std::size_t r = 0; r < width; ++r) prev[r] = live[std::min(r, live.size() - 1)].tokens.back();
  }
  for (auto& l : live) {
    const Real length = static_cast<Real>(l.tokens.size() - 1);
    finished.push_back({l.tokens, l.log_prob, l.log_prob / length, false});
  }
  if (finished.empty()) throw std::logic_error("beam_decode produced no hypothesis");
  auto best = std::max_element(finished.begin(), finished.end(), [](const Hypothesis& a, const Hypothesis& b) {
    if (a.finished != b.finished) return !a.finished;
    return a.score < b.score;
  });
  return *best;
}

Real normalized_log_prob(const model::Seq2Seq& model, const std::vector<int>& source, const std::vector<int>& tokens) {
  if (tokens.size() < 2) throw std::invalid_argument("normalized_log_prob: need at least one generated token");
  ad::Tape tape(ad::GradMode::disabled);
  auto g = eval_graph(tape);
  auto src = data::PaddedIds::from({source});
  auto enc = model.encode(g, src);
  auto state = model.init_state(g, enc);
  state = model.decode_step(g, model::PrevToken::hard({data::kBos}), state, enc).state;
  Real total = 0;
  for (std::size_t t = 1; t < tokens.size(); ++t) {
    auto step = model.decode_step(g, model::PrevToken::hard({tokens[t - 1]}), state, enc);
    total += row_log_prob(log_softmax_value(step.logits.value()), 0, tokens[t]);
    state = step.state;
  }
  return total / static_cast<Real>(tokens.size() - 1);
}

std::vector<std::vector<int>> translate(const model::Seq2Seq& model, const data::Vocab& vocab,
                                        const std::vector<std::vector<int>>& sources, const DecodeConfig& config,
                                        std::size_t batch_size) {
  std::vector<std::vector<int>> out;
  out.reserve(sources.size());
  if (config.mode == DecodeConfig::Mode::beam && config.beam_width > 1) {
    for (const auto& s : sources) out.push_back(beam_decode(model, vocab, s, config).tokens);
    return out;
  }
  for (std::size_t start = 0; start < sources.size(); start += batch_size) {
    const auto end = std::min(sources.size(), start + batch_size);
    std::vector<std::vector<int>> chunk(sources.begin() + static_cast<std::ptrdiff_t>(start),
                                        sources.begin() + static_cast<std::ptrdiff_t>(end));
    for (auto& h : greedy_decode(model, vocab, data::PaddedIds::from(chunk), config)) out.push_back(std::move(h));
  }
  return out;
}

BleuStats& BleuStats::operator+=(const BleuStats& other) {
  for (std::size_t n = 0; n < 4; ++n) {
    matches[n] += other.matches[n];
    totals[n] += other.totals[n];
  }
  hyp_length += other.hyp_length;
  ref_length += other.ref_length;
  return *this;
}

Real BleuStats::score() const {
  if (hyp_length == 0) return 0;
  Real log_precision = 0;
  for (std::size_t n = 0; n < 4; ++n) {
    if (matches[n] == 0 || totals[n] == 0) return 0;
    log_precision += std::log(static_cast<Real>(matches[n]) / static_cast<Real>(totals[n]));
  }
  log_precision /= 4;
  const Real c = static_cast<Real>(hyp_length), r = static_cast<Real>(ref_length);
  const Real brevity = c < r ? std::exp(1 - r / c) : Real(1);
  return 100 * brevity * std::exp(log_precision);
}

std::vector<std::string> bleu_tokenize(const std::string& line, bool lowercase) {
  std::string spaced;
  spaced.reserve(line.size() * 2);
  for (char ch : line) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x80 && std::ispunct(c)) {
      spaced += ' ';
      spaced += ch;
      spaced += ' ';
    } else {
      spaced += lowercase && c < 0x80 ? static_cast<char>(std::tolower(c)) : ch;
    }
  }
  std::istringstream in(spaced);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

BleuStats sentence_stats(const std::vector<std::string>& hypothesis, const std::vector<std::string>& reference) {
  BleuStats stats;
  stats.hyp_length = hypothesis.size();
  stats.ref_length = reference.size();
  for (std::size_t n = 1; n <= 4; ++n) {
    std::map<std::vector<std::string>, std::size_t> ref_counts;
    for (std::size_t i = 0; i + n <= reference.size(); ++i) {
      ++ref_counts[{reference.begin() + static_cast<std::ptrdiff_t>(i),
                    reference.begin() + static_cast<std::ptrdiff_t>(i + n)}];
    }
    std::map<std::vector<std::string>, std::size_t> hyp_counts;
    for (std::size_t i = 0; i + n <= hypothesis.size(); ++i) {
      ++hyp_counts[{hypothesis.begin() + static_cast<std::ptrdiff_t>(i),
                    hypothesis.begin() + static_cast<std::ptrdiff_t>(i + n)}];
    }
    std::size_t matched = 0, total = 0;
    for (const auto& [gram, count] : hyp_counts) {
      total += count;
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) matched += std::min(count, it->second);
    }
    stats.matches[n - 1] = matched;
    stats.totals[n - 1] = total;
  }
  return stats;
}

Real corpus_bleu(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references,
                 bool lowercase) {
  if (hypotheses.size() != references.size()) {
    throw std::invalid_argument("corpus_bleu: " + std::to_string(hypotheses.size()) + " hypotheses vs " +
                                std::to_string(references.size()) + " references");
  }
  if (references.empty()) throw std::invalid_argument("corpus_bleu: empty corpus");
  BleuStats total;
  for (std::size_t i = 0; i < references.size(); ++i) {
    total += sentence_stats(bleu_tokenize(hypotheses[i], lowercase), bleu_tokenize(references[i], lowercase));
  }
  return total.score();
}

Real perplexity(const model::Seq2Seq& model, const std::vector<data::Instance>& corpus, std::size_t batch_size) {
  Real nll = 0, tokens = 0;
  for (const auto& batch : data::make_sequential_batches(corpus, batch_size)) {
    ad::Tape tape(ad::GradMode::disabled);
    auto g = eval_graph(tape);
    auto tf = model.teacher_forced_nll(g, batch.source, batch.target);
    nll += tf.nll_sum.value()[0];
    tokens += tf.tokens;
  }
  return std::exp(nll / tokens);
}

std::pair<Real, Real> mean_std(const std::vector<Real>& values) {
  if (values.empty()) throw std::invalid_argument("mean_std: no values");
  const Real n = static_cast<Real>(values.size());
  const Real mean = std::accumulate(values.begin(), values.end(), Real(0)) / n;
  if (values.size() < 2) return {mean, 0};
  Real ss = 0;
  for (Real v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1))};
}

std::vector<DeltaRow> delta_bleu_report(const std::map<std::string, std::vector<RunScore>>& baseline,
                                        const std::map<std::string, std::vector<RunScore>>& treatment) {
  std::vector<DeltaRow> rows;
  for (const auto& [direction, base_runs] : baseline) {
    auto it = treatment.find(direction);
    if (it == treatment.end()) throw std::invalid_argument("delta report: no treatment runs for " + direction);
    const auto& treat_runs = it->second;
    if (base_runs.size() < 2) throw std::invalid_argument("delta report: need at least two seeds for " + direction);
    std::map<std::uint64_t, Real> treat_by_seed;
    for (const auto& r : treat_runs) treat_by_seed[r.seed] = r.bleu;
    if (treat_by_seed.size() != base_runs.size() || treat_runs.size() != base_runs.size()) {
      throw std::invalid_argument("delta report: seed sets differ for " + direction);
    }
    std::vector<Real> b, t, d;
    for (const auto& r : base_runs) {
      auto match = treat_by_seed.find(r.seed);
      if (match == treat_by_seed.end()) throw std::invalid_argument("delta report: seed sets differ for " + direction);
      b.push_back(r.bleu);
      t.push_back(match->second);
      d.push_back(match->second - r.bleu);
    }
    DeltaRow row;
    row.direction = direction;
    std::tie(row.baseline_mean, row.baseline_std) = mean_std(b);
    std::tie(row.treatment_mean, row.treatment_std) = mean_std(t);
    std::tie(row.delta_mean, row.delta_std) = mean_std(d);
    rows.push_back(row);
  }
  if (treatment.size() != baseline.size()) throw std::invalid_argument("delta report: direction sets differ");
  return rows;
}

std::string format_delta_table(const std::vector<DeltaRow>& rows) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2);
  out << std::left << std::setw(12) << "direction" << std::setw(18) << "baseline" << std::setw(18) << "treatment"
      << "delta\n";
  auto cell = [](Real mean, Real sd) {
    std::ostringstream c;
    c << std::fixed << std::setprecision(2) << mean << " ± " << sd;
    return c.str();
  };
  for (const auto& r : rows) {
    // "±" is two bytes in UTF-8; pad by display width.
    auto pad = [](const std::string& s, std::size_t width) { return s + std::string(width - (s.size() - 1), ' '); };
    out << std::left << std::setw(12) << r.direction << pad(cell(r.baseline_mean, r.baseline_std), 18)
        << pad(cell(r.treatment_mean, r.treatment_std), 18) << cell(r.delta_mean, r.delta_std) << '\n';
  }
  return out.str();
}

std::string delta_table_csv(const std::vector<DeltaRow>& rows) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << "direction,baseline_mean,baseline_std,treatment_mean,treatment_std,delta_mean,delta_std\n";
  for (const auto& r : rows) {
    out << r.direction << ',' << r.baseline_mean << ',' << r.baseline_std << ',' << r.treatment_mean << ','
        << r.treatment_std << ',' << r.delta_mean << ',' << r.delta_std << '\n';
  }
  return out.str();
}

std::string detokenize(const data::Vocab& vocab, const std::vector<int>& ids) {
  auto words = data::SubwordModel::desegment(vocab.decode(ids, true));
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

}  // namespace roundtrip::eval
