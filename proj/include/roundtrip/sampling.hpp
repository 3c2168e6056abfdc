#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "roundtrip/model.hpp"
#include "roundtrip/vocab.hpp"

namespace roundtrip::sampling {

inline constexpr Real kUniformClamp = Real(1e-12);

/// G = -beta * log(-log u), with u clamped to (1e-12, 1 - 1e-12).
Real gumbel_from_uniform(Real u, Real beta);

/// I.i.d. scaled Gumbel(0, beta) noise. beta == 0 yields zeros and leaves
/// the generator untouched.
Tensor sample_gumbel(const Shape& shape, Real beta, std::mt19937_64& rng);

/// Owns the noise scale and its random stream.
class GumbelNoiseSource {
 public:
  GumbelNoiseSource(Real beta, std::uint64_t seed);
  Real beta() const { return beta_; }
  Tensor sample(const Shape& shape) { return sample_gumbel(shape, beta_, rng_); }

 private:
  Real beta_;
  std::mt19937_64 rng_;
};

/// Row-wise argmax; ties go to the lowest index.
std::vector<int> argmax_rows(const Tensor& values);
Tensor onehot_rows(const std::vector<int>& ids, std::size_t width);

/// One-hot rows at argmax(logits + noise).
Tensor gumbel_max_step(const Tensor& logits, const Tensor& noise);

struct StgsConfig {
  Real tau = 2;
  std::size_t cap_factor = 2;
  std::size_t cap_offset = 5;

  /// Longest sampled sequence (tag and EOS included) for a source of n tokens.
  std::size_t max_len_cap(std::size_t source_length) const { return cap_factor * source_length + cap_offset; }
};

/// A straight-through token: the forward value is the hard one-hot, the
/// gradient is that of soft = softmax((logits + noise) / tau).
struct StgsToken {
  std::vector<int> ids;
  Tensor hard;
  ad::Var soft;
  ad::Var value;
};

/// `reference` replaces soft.value() in value = hard + (soft - reference);
/// pass a frozen reference to differentiate the soft path numerically.
StgsToken stgs_combine(ad::Var logits, const Tensor& noise, Real tau, const Tensor* reference = nullptr,
                       const std::vector<int>* forced_ids = nullptr);

/// Everything needed to re-run a sampling pass with the same discrete
/// choices: per step (after the forced tag) the chosen ids, the noise and the
/// soft distributions the straight-through values were centred on.
struct SamplingReplay {
  std::vector<std::vector<int>> ids;
  std::vector<Tensor> noise;
  std::vector<Tensor> soft_reference;
};

struct SampledSequence {
  /// Per position [B x V] token values: position 0 is the forced target tag,
  /// later positions are straight-through samples.
  std::vector<ad::Var> values;
  std::vector<ad::Var> soft;
  Tensor mask;  // [B x L]; 1 up to and including the first EOS or the cap
  std::vector<std::vector<int>> tokens;
  std::vector<char> truncated;
  SamplingReplay replay;

  std::size_t rows() const { return tokens.size(); }
  std::size_t length() const { return values.size(); }
  data::PaddedIds padded() const { return data::PaddedIds::from(tokens); }
};

struct SamplingOptions {
  /// Replays recorded choices instead of drawing new ones.
  const SamplingReplay* replay = nullptr;
  /// Ablation: feed ground-truth previous tokens instead of own predictions.
  const data::PaddedIds* teacher_targets = nullptr;
};

/// Self-feeding decode. Step 0 consumes BOS and emits the target tag; each
/// later step consumes the straight-through value of the previous one.
SampledSequence sample_translation(const model::Graph& g, const model::Seq2Seq& model,
                                   const model::EncoderOutput& enc, const std::vector<int>& target_tags,
                                   const std::vector<std::size_t>& source_lengths, GumbelNoiseSource& noise,
                                   const StgsConfig& config, const SamplingOptions& options = {});

/// Encodes `source`, flips each row's tag and samples.
SampledSequence sample_translation(const model::Graph& g, const model::Seq2Seq& model, const data::Vocab& vocab,
                                   const data::PaddedIds& source, GumbelNoiseSource& noise,
                                   const StgsConfig& config, const SamplingOptions& options = {});

/// Target tag per row: the flip of the source row's leading tag.
std::vector<int> flipped_tags(const data::Vocab& vocab, const data::PaddedIds& source);

}  // namespace roundtrip::sampling
