#include "roundtrip/model.hpp"

#include <cmath>
#include <stdexcept>

namespace roundtrip::model {

using ad::Var;

Var Graph::maybe_dropout(Var x) const {
  if (!train || dropout <= 0) return x;
  if (rng == nullptr) throw std::logic_error("training graph needs a dropout rng");
  return ad::dropout(x, dropout, *rng);
}

Tensor xavier(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  const Real bound = std::sqrt(Real(6) / static_cast<Real>(rows + cols));
  std::uniform_real_distribution<Real> dist(-bound, bound);
  Tensor t({rows, cols});
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

LstmCell::LstmCell(ad::ParameterStore& store, const std::string& prefix, std::size_t input_dim,
                   std::size_t hidden_dim, bool layer_norm, Real epsilon, std::mt19937_64& rng)
    : hidden_dim_(hidden_dim), layer_norm_(layer_norm), epsilon_(epsilon) {
  const std::size_t gates = 4 * hidden_dim;
  wx_ = &store.add(prefix + ".wx", xavier(input_dim, gates, rng));
  wh_ = &store.add(prefix + ".wh", xavier(hidden_dim, gates, rng));
  // Gate order: input, forget, candidate, output. Forget bias starts at 1.
  Tensor bias({1, gates});
  for (std::size_t j = hidden_dim; j < 2 * hidden_dim; ++j) bias[j] = 1;
  bias_ = &store.add(prefix + ".b", std::move(bias));
  if (layer_norm_) {
    ln_gain_ = &store.add(prefix + ".ln_gain", Tensor({1, gates}, Real(1)));
    ln_bias_ = &store.add(prefix + ".ln_bias", Tensor({1, gates}));
  }
}

LstmCell::State LstmCell::zero_state(const Graph& g, std::size_t rows) const {
  return {g.tape.constant(Tensor({rows, hidden_dim_})), g.tape.constant(Tensor({rows, hidden_dim_}))};
}

LstmCell::State LstmCell::step(const Graph& g, Var input, const State& prev) const {
  Var pre = ad::add(ad::matmul(input, g.param(*wx_)), ad::matmul(prev.hidden, g.param(*wh_)));
  if (layer_norm_) pre = ad::layer_norm(pre, g.param(*ln_gain_), g.param(*ln_bias_), epsilon_);
  pre = ad::add_row(pre, g.param(*bias_));
  const auto h = hidden_dim_;
  Var in_gate = ad::sigmoid(ad::slice_cols(pre, 0, h));
  Var forget_gate = ad::sigmoid(ad::slice_cols(pre, h, h));
  Var candidate = ad::tanh(ad::slice_cols(pre, 2 * h, h));
  Var out_gate = ad::sigmoid(ad::slice_cols(pre, 3 * h, h));
  Var cell = ad::add(ad::mul(forget_gate, prev.cell), ad::mul(in_gate, candidate));
  Var hidden = ad::mul(out_gate, ad::tanh(cell));
  return {hidden, cell};
}

AttentionDecoder::AttentionDecoder(ad::ParameterStore& store, const std::string& prefix, const ModelConfig& config,
                                   std::size_t memory_dim, std::size_t init_dim, ad::Parameter& embedding,
                                   std::mt19937_64& rng)
    : config_(config),
      embedding_(&embedding),
      cell_(store, prefix + ".lstm", config.embed_dim, config.hidden_dim, config.layer_norm,
            config.layer_norm_epsilon, rng) {
  const auto h = config.hidden_dim, a = config.attention_dim, e = config.embed_dim;
  init_w_ = &store.add(prefix + ".init.w", xavier(init_dim, h, rng));
  init_b_ = &store.add(prefix + ".init.b", Tensor({1, h}));
  att_query_ = &store.add(prefix + ".att.wq", xavier(h, a, rng));
  att_key_ = &store.add(prefix + ".att.wk", xavier(memory_dim, a, rng));
  att_bias_ = &store.add(prefix + ".att.b", Tensor({1, a}));
  att_v_ = &store.add(prefix + ".att.v", xavier(a, 1, rng));
  out_w_ = &store.add(prefix + ".out.w", xavier(h + memory_dim, e, rng));
  out_b_ = &store.add(prefix + ".out.b", Tensor({1, e}));
  vocab_bias_ = &store.add(prefix + ".vocab_bias", Tensor({1, config.vocab_size}));
}

std::shared_ptr<const AttentionMemory> AttentionDecoder::prepare(const Graph& g, std::vector<Var> values,
                                                                 Tensor mask) const {
  if (values.empty() || mask.cols() != values.size()) {
    throw ShapeError("attention memory: one mask column per memory entry");
  }
  auto memory = std::make_shared<AttentionMemory>();
  Var wk = g.param(*att_key_);
  Var bk = g.param(*att_bias_);
  for (const auto& v : values) memory->keys.push_back(ad::add_row(ad::matmul(v, wk), bk));
  memory->values = std::move(values);
  memory->mask = std::move(mask);
  return memory;
}

DecoderState AttentionDecoder::init_state(const Graph& g, Var init_source,
                                          std::shared_ptr<const AttentionMemory> memory) const {
  if (!memory) throw std::invalid_argument("decoder init needs an attention memory");
  const std::size_t rows = memory->mask.rows();
  DecoderState state;
  state.hidden = ad::tanh(ad::add_row(ad::matmul(init_source, g.param(*init_w_)), g.param(*init_b_)));
  state.cell = g.tape.constant(Tensor({rows, config_.hidden_dim}));
  state.context = g.tape.constant(Tensor({rows, memory->values.front().cols()}));
  state.step = 0;
  state.memory = std::move(memory);
  return state;
}

Var AttentionDecoder::embed(const Graph& g, const PrevToken& token) const {
  Var table = g.param(*embedding_);
  if (token.is_soft()) {
    if (token.distribution.cols() != embedding_->value.rows()) {
      throw ShapeError("soft token input must be a distribution over the vocabulary");
    }
    return ad::matmul(token.distribution, table);
  }
  return ad::lookup(table, token.ids);
}

StepOutput AttentionDecoder::step(const Graph& g, Var input_embedding, const DecoderState& state) const {
  if (!state.initialized()) throw std::logic_error("decode_step: decoder state is not initialised");
  const auto& memory = *state.memory;
  Var x = g.maybe_dropout(input_embedding);
  auto next = cell_.step(g, x, {state.hidden, state.cell});
  Var query = ad::matmul(next.hidden, g.param(*att_query_));
  Var scores = ad::mlp_attention_scores(query, memory.keys, g.param(*att_v_));
  Var attention = ad::masked_softmax_rows(scores, memory.mask);
  Var context = ad::weighted_sum(attention, memory.values);
  Var hidden_out = g.maybe_dropout(next.hidden);
  Var joint = ad::concat_cols(std::vector<Var>{hidden_out, context});
  Var output = ad::tanh(ad::add_row(ad::matmul(joint, g.param(*out_w_)), g.param(*out_b_)));
  Var logits = ad::add_row(ad::matmul_nt(output, g.param(*embedding_)), g.param(*vocab_bias_));

  StepOutput out;
  out.logits = logits;
  out.hidden = next.hidden;
  out.state.hidden = next.hidden;
  out.state.cell = next.cell;
  out.state.context = context;
  out.state.attention = attention;
  out.state.step = state.step + 1;
  out.state.memory = state.memory;
  return out;
}

TeacherForced teacher_forced_decode(const Graph& g, const AttentionDecoder& decoder, DecoderState state,
                                    const data::PaddedIds& target) {
  if (target.length == 0 || target.token_count() == 0) throw std::invalid_argument("teacher forcing: empty target");
  TeacherForced out;
  out.tokens = target.token_count();
  std::vector<int> prev(target.rows, data::kBos);
  Var total;
  for (std::size_t t = 0; t < target.length; ++t) {
    auto step = decoder.step(g, decoder.embed(g, PrevToken::hard(prev)), state);
    const auto gold = target.column(t);
    std::vector<Real> weights(target.rows);
    for (std::size_t i = 0; i < target.rows; ++i) weights[i] = target.mask[i * target.length + t];
    Var nll = ad::cross_entropy(step.logits, gold, weights);
    total = total.valid() ? ad::add(total, nll) : nll;
    out.hidden_states.push_back(step.hidden);
    out.logits.push_back(step.logits);
    state = step.state;
    prev = gold;
  }
  out.nll_sum = total;
  return out;
}

Seq2Seq::Seq2Seq(const ModelConfig& config, ad::ParameterStore& store, std::uint64_t init_seed,
                 const std::string& prefix)
    : config_(config), store_(&store) {
  if (config.vocab_size == 0) throw std::invalid_argument("model needs a non-empty vocabulary");
  std::mt19937_64 rng(init_seed);
  const auto e = config.embed_dim, h = config.hidden_dim;
  embedding_ = &store.add(prefix + "embed", xavier(config.vocab_size, e, rng));
  encoder_forward_ = std::make_unique<LstmCell>(store, prefix + "enc.fwd", e, h, config.layer_norm,
                                                config.layer_norm_epsilon, rng);
  encoder_backward_ = std::make_unique<LstmCell>(store, prefix + "enc.bwd", e, h, config.layer_norm,
                                                 config.layer_norm_epsilon, rng);
  decoder_ = std::make_unique<AttentionDecoder>(store, prefix + "dec", config, 2 * h, 2 * h, *embedding_, rng);
}

void Seq2Seq::check_ids(const data::PaddedIds& ids, const char* what) const {
  for (int id : ids.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
      throw std::out_of_range(std::string(what) + ": token id " + std::to_string(id) + " outside vocabulary of " +
                              std::to_string(config_.vocab_size));
    }
  }
}

Var Seq2Seq::embed_ids(const Graph& g, std::span<const int> ids) const { return ad::lookup(g.param(*embedding_), ids); }

Var Seq2Seq::embed_soft(const Graph& g, Var distribution) const {
  return decoder_->embed(g, PrevToken::soft(distribution));
}

EncoderOutput Seq2Seq::encode(const Graph& g, const data::PaddedIds& source) const {
  if (source.rows == 0 || source.length == 0) throw std::invalid_argument("encode: empty source batch");
  check_ids(source, "encode");
  for (std::size_t i = 0; i < source.rows; ++i) {
    if (source.mask[i * source.length] == 0) throw std::invalid_argument("encode: empty source sentence");
  }
  std::vector<Var> inputs;
  for (std::size_t t = 0; t < source.length; ++t) inputs.push_back(embed_ids(g, source.column(t)));
  return encode_embedded(g, std::move(inputs), Tensor({source.rows, source.length}, source.mask));
}

EncoderOutput Seq2Seq::encode_embedded(const Graph& g, std::vector<Var> inputs, const Tensor& mask) const {
  const std::size_t s = inputs.size();
  if (s == 0 || mask.cols() != s) throw ShapeError("encode: one mask column per input step");
  const std::size_t rows = mask.rows();
  std::vector<Tensor> keep(s, Tensor({rows, 1}));
  for (std::size_t t = 0; t < s; ++t)
    for (std::size_t i = 0; i < rows; ++i) keep[t][i] = mask[i * s + t];
  for (auto& x : inputs) x = g.maybe_dropout(x);

  EncoderOutput out;
  out.mask = mask;
  out.forward_states.resize(s);
  out.backward_states.resize(s);
  auto state = encoder_forward_->zero_state(g, rows);
  for (std::size_t t = 0; t < s; ++t) {
    auto next = encoder_forward_->step(g, inputs[t], state);
    state = {ad::select_rows(keep[t], next.hidden, state.hidden), ad::select_rows(keep[t], next.cell, state.cell)};
    out.forward_states[t] = state.hidden;
  }
  Var last_forward = state.hidden;
  state = encoder_backward_->zero_state(g, rows);
  for (std::size_t t = s; t-- > 0;) {
    auto next = encoder_backward_->step(g, inputs[t], state);
    state = {ad::select_rows(keep[t], next.hidden, state.hidden), ad::select_rows(keep[t], next.cell, state.cell)};
    out.backward_states[t] = state.hidden;
  }
  for (std::size_t t = 0; t < s; ++t) {
    Var joint = ad::concat_cols(std::vector<Var>{out.forward_states[t], out.backward_states[t]});
    out.annotations.push_back(g.maybe_dropout(joint));
  }
  out.final_summary = ad::concat_cols(std::vector<Var>{last_forward, out.backward_states.front()});
  return out;
}

DecoderState Seq2Seq::init_state(const Graph& g, const EncoderOutput& enc) const {
  return decoder_->init_state(g, enc.final_summary, decoder_->prepare(g, enc.annotations, enc.mask));
}

StepOutput Seq2Seq::decode_step(const Graph& g, const PrevToken& prev, const DecoderState& state,
                                const EncoderOutput&) const {
  if (!prev.is_soft()) {
    for (int id : prev.ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
        throw std::out_of_range("decode_step: token id outside vocabulary");
      }
    }
  }
  return decoder_->step(g, decoder_->embed(g, prev), state);
}

TeacherForced Seq2Seq::teacher_forced(const Graph& g, const EncoderOutput& enc, const data::PaddedIds& target) const {
  check_ids(target, "teacher_forced");
  return teacher_forced_decode(g, *decoder_, init_state(g, enc), target);
}

TeacherForced Seq2Seq::teacher_forced_nll(const Graph& g, const data::PaddedIds& source,
                                          const data::PaddedIds& target) const {
  return teacher_forced(g, encode(g, source), target);
}

}  // namespace roundtrip::model
