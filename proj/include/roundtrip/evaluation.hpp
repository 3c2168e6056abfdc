#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "roundtrip/corpus.hpp"
#include "roundtrip/model.hpp"

namespace roundtrip::eval {

struct DecodeConfig {
  enum class Mode { greedy, beam };
  Mode mode = Mode::beam;
  std::size_t beam_width = 5;
  std::size_t cap_factor = 2;
  std::size_t cap_offset = 5;

  std::size_t max_len(std::size_t source_length) const { return cap_factor * source_length + cap_offset; }
};

/// Batched arg-max decoding. Each output starts with the target tag (the flip
/// of the source tag) and ends at the first EOS or the length cap.
std::vector<std::vector<int>> greedy_decode(const model::Seq2Seq& model, const data::Vocab& vocab,
                                            const data::PaddedIds& source, const DecodeConfig& config = {});

struct Hypothesis {
  std::vector<int> tokens;  // tag first
  Real log_prob = 0;        // sum over generated tokens (tag excluded)
  Real score = 0;           // log_prob / generated token count
  bool finished = false;
};

/// Beam search for one source sentence; returns the completed hypothesis with
/// the best length-normalised log-probability.
Hypothesis beam_decode(const model::Seq2Seq& model, const data::Vocab& vocab, const std::vector<int>& source,
                       const DecodeConfig& config);

/// Length-normalised model log-probability of `tokens` (tag first) given
/// `source`, scored the same way beam_decode scores hypotheses.
Real normalized_log_prob(const model::Seq2Seq& model, const std::vector<int>& source, const std::vector<int>& tokens);

/// Decodes a list of encoded sources with `config`, batching greedy decoding.
std::vector<std::vector<int>> translate(const model::Seq2Seq& model, const data::Vocab& vocab,
                                        const std::vector<std::vector<int>>& sources, const DecodeConfig& config,
                                        std::size_t batch_size = 48);

/// Clipped n-gram statistics for n = 1..4; additive over sentences.
struct BleuStats {
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;

  BleuStats& operator+=(const BleuStats& other);
  Real score() const;  // BLEU in [0, 100]
};

/// Lowercases (optionally) and splits ASCII punctuation off words.
std::vector<std::string> bleu_tokenize(const std::string& line, bool lowercase);
BleuStats sentence_stats(const std::vector<std::string>& hypothesis, const std::vector<std::string>& reference);
Real corpus_bleu(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references,
                 bool lowercase = true);

/// exp(mean per-token NLL) under teacher forcing, dropout off.
Real perplexity(const model::Seq2Seq& model, const std::vector<data::Instance>& corpus, std::size_t batch_size = 48);

/// Per-seed BLEU of one condition in one translation direction.
struct RunScore {
  std::uint64_t seed = 0;
  Real bleu = 0;
};

struct DeltaRow {
  std::string direction;
  Real baseline_mean = 0, baseline_std = 0;
  Real treatment_mean = 0, treatment_std = 0;
  Real delta_mean = 0, delta_std = 0;  // over paired per-seed deltas
};

/// Sample mean and (n - 1) standard deviation.
std::pair<Real, Real> mean_std(const std::vector<Real>& values);

std::vector<DeltaRow> delta_bleu_report(const std::map<std::string, std::vector<RunScore>>& baseline,
                                        const std::map<std::string, std::vector<RunScore>>& treatment);
std::string format_delta_table(const std::vector<DeltaRow>& rows);
std::string delta_table_csv(const std::vector<DeltaRow>& rows);

/// Joins decoded ids into text, dropping tag, EOS and subword markers.
std::string detokenize(const data::Vocab& vocab, const std::vector<int>& ids);

}  // namespace roundtrip::eval
