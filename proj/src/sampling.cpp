#include "roundtrip/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace roundtrip::sampling {

using ad::Var;

Real gumbel_from_uniform(Real u, Real beta) {
  const Real clamped = std::clamp(u, kUniformClamp, Real(1) - kUniformClamp);
  return -beta * std::log(-std::log(clamped));
}

Tensor sample_gumbel(const Shape& shape, Real beta, std::mt19937_64& rng) {
  if (!(beta >= 0)) throw std::invalid_argument("sample_gumbel: beta must be non-negative");
  Tensor out(shape);
  if (beta == 0) return out;
  std::uniform_real_distribution<Real> uniform(0, 1);
  for (auto& v : out.values()) v = gumbel_from_uniform(uniform(rng), beta);
  return out;
}

GumbelNoiseSource::GumbelNoiseSource(Real beta, std::uint64_t seed) : beta_(beta), rng_(seed) {
  if (!(beta >= 0)) throw std::invalid_argument("Gumbel noise scale must be non-negative");
}

std::vector<int> argmax_rows(const Tensor& values) {
  const std::size_t r = values.rows(), c = values.cols();
  std::vector<int> out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const Real* row = values.data() + i * c;
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (row[j] > row[best]) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

Tensor onehot_rows(const std::vector<int>& ids, std::size_t width) {
  Tensor out({ids.size(), width});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= width) throw std::out_of_range("onehot: id out of range");
    out[i * width + static_cast<std::size_t>(ids[i])] = 1;
  }
  return out;
}

Tensor gumbel_max_step(const Tensor& logits, const Tensor& noise) {
  if (!logits.same_shape(noise)) throw ShapeError("gumbel_max_step: logits and noise shapes differ");
  if (!logits.all_finite()) throw InvalidValueError("gumbel_max_step: non-finite logits");
  Tensor perturbed = logits;
  for (std::size_t i = 0; i < perturbed.size(); ++i) perturbed[i] += noise[i];
  return onehot_rows(argmax_rows(perturbed), logits.cols());
}

StgsToken stgs_combine(Var logits, const Tensor& noise, Real tau, const Tensor* reference,
                       const std::vector<int>* forced_ids) {
  if (!(tau > 0)) throw std::invalid_argument("stgs: temperature must be positive");
  if (!logits.value().same_shape(noise)) throw ShapeError("stgs: logits and noise shapes differ");
  StgsToken tok;
  if (forced_ids != nullptr) {
    tok.ids = *forced_ids;
    tok.hard = onehot_rows(tok.ids, logits.cols());
  } else {
    tok.hard = gumbel_max_step(logits.value(), noise);
    tok.ids = argmax_rows(tok.hard);
  }
  auto& tape = logits.tape();
  Var perturbed = ad::add(logits, tape.constant(noise));
  tok.soft = ad::softmax_rows(ad::scale(perturbed, 1 / tau));
  tok.value = reference ? ad::straight_through(tok.hard, tok.soft, *reference) : ad::straight_through(tok.hard, tok.soft);
  return tok;
}

SampledSequence sample_translation(const model::Graph& g, const model::Seq2Seq& model,
                                   const model::EncoderOutput& enc, const std::vector<int>& target_tags,
                                   const std::vector<std::size_t>& source_lengths, GumbelNoiseSource& noise,
                                   const StgsConfig& config, const SamplingOptions& options) {
  const std::size_t rows = enc.rows();
  const std::size_t vocab = model.config().vocab_size;
  if (target_tags.size() != rows || source_lengths.size() != rows) {
    throw std::invalid_argument("sample_translation: one tag and source length per row");
  }
  if (!(config.tau > 0)) throw std::invalid_argument("sample_translation: tau must be positive");
  const auto* teacher = options.teacher_targets;
  if (teacher && teacher->rows != rows) throw std::invalid_argument("sample_translation: teacher rows differ");

  std::vector<std::size_t> caps(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    caps[i] = teacher ? teacher->row_length(i) : std::max<std::size_t>(2, config.max_len_cap(source_lengths[i]));
  }
  const std::size_t max_cap = *std::max_element(caps.begin(), caps.end());

  SampledSequence out;
  out.tokens.assign(rows, {});
  out.truncated.assign(rows, 0);
  std::vector<char> active(rows, 1);

  auto state = model.init_state(g, enc);
  auto first = model.decode_step(g, model::PrevToken::hard(std::vector<int>(rows, data::kBos)), state, enc);
  state = first.state;
  Var tag_value = g.tape.constant(onehot_rows(target_tags, vocab));
  out.values.push_back(tag_value);
  out.soft.push_back(tag_value);
  for (std::size_t i = 0; i < rows; ++i) {
    out.tokens[i].push_back(target_tags[i]);
    if (caps[i] <= 1) {
      active[i] = 0;
      out.truncated[i] = 1;
    }
  }

  model::PrevToken prev = model::PrevToken::hard(target_tags);
  for (std::size_t t = 1; t < max_cap; ++t) {
    if (std::none_of(active.begin(), active.end(), [](char a) { return a != 0; })) break;
    auto step = model.decode_step(g, prev, state, enc);
    const std::size_t k = t - 1;
    const SamplingReplay* replay = options.replay;
    if (replay && k >= replay->ids.size()) throw std::invalid_argument("sample_translation: replay too short");
    Tensor step_noise = replay ? replay->noise[k] : noise.sample({rows, vocab});
    auto tok = stgs_combine(step.logits, step_noise, config.tau, replay ? &replay->soft_reference[k] : nullptr,
                            replay ? &replay->ids[k] : nullptr);

    out.replay.ids.push_back(tok.ids);
    out.replay.noise.push_back(std::move(step_noise));
    out.replay.soft_reference.push_back(tok.soft.value());
    out.values.push_back(tok.value);
    out.soft.push_back(tok.soft);

    for (std::size_t i = 0; i < rows; ++i) {
      if (!active[i]) continue;
      out.tokens[i].push_back(tok.ids[i]);
      if (!teacher && tok.ids[i] == data::kEos) {
        active[i] = 0;
      } else if (out.tokens[i].size() >= caps[i]) {
        active[i] = 0;
        out.truncated[i] = teacher ? 0 : 1;
      }
    }
    prev = teacher ? model::PrevToken::hard(teacher->column(t)) : model::PrevToken::soft(tok.value);
    state = step.state;
  }

  const std::size_t length = out.values.size();
  out.mask = Tensor({rows, length});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t t = 0; t < out.tokens[i].size(); ++t) out.mask[i * length + t] = 1;
  return out;
}

std::vector<int> flipped_tags(const data::Vocab& vocab, const data::PaddedIds& source) {
  std::vector<int> tags(source.rows);
  for (std::size_t i = 0; i < source.rows; ++i) {
    const int tag = source.at(i, 0);
    if (!vocab.is_tag(tag)) throw std::invalid_argument("source sentence does not start with a language tag");
    tags[i] = vocab.flip_tag(tag);
  }
  return tags;
}

SampledSequence sample_translation(const model::Graph& g, const model::Seq2Seq& model, const data::Vocab& vocab,
                                   const data::PaddedIds& source, GumbelNoiseSource& noise,
                                   const StgsConfig& config, const SamplingOptions& options) {
  auto tags = flipped_tags(vocab, source);
  std::vector<std::size_t> lengths(source.rows);
  for (std::size_t i = 0; i < source.rows; ++i) lengths[i] = source.row_length(i);
  auto enc = model.encode(g, source);
  return sample_translation(g, model, enc, tags, lengths, noise, config, options);
}

}  // namespace roundtrip::sampling
