#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "roundtrip/corpus.hpp"
#include "roundtrip/ops.hpp"
#include "roundtrip/tape.hpp"

namespace roundtrip::model {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 64;
  std::size_t hidden_dim = 64;
  std::size_t attention_dim = 64;
  Real dropout = Real(0.2);
  bool layer_norm = true;
  Real layer_norm_epsilon = Real(1e-6);
};

/// Per-forward context: tape, train/eval mode and the dropout stream.
struct Graph {
  ad::Tape& tape;
  bool train = false;
  Real dropout = 0;
  std::mt19937_64* rng = nullptr;

  ad::Var maybe_dropout(ad::Var x) const;
  ad::Var param(ad::Parameter& p) const { return tape.param(p); }
};

/// Samples a Xavier-uniform [rows x cols] matrix.
Tensor xavier(std::size_t rows, std::size_t cols, std::mt19937_64& rng);

/// Single LSTM layer, optionally layer-normalised over the gate pre-activations.
class LstmCell {
 public:
  struct State {
    ad::Var hidden;
    ad::Var cell;
  };

  LstmCell(ad::ParameterStore& store, const std::string& prefix, std::size_t input_dim, std::size_t hidden_dim,
           bool layer_norm, Real epsilon, std::mt19937_64& rng);

  State zero_state(const Graph& g, std::size_t rows) const;
  State step(const Graph& g, ad::Var input, const State& prev) const;
  std::size_t hidden_dim() const { return hidden_dim_; }

 private:
  std::size_t hidden_dim_;
  bool layer_norm_;
  Real epsilon_;
  ad::Parameter* wx_;
  ad::Parameter* wh_;
  ad::Parameter* bias_;
  ad::Parameter* ln_gain_ = nullptr;
  ad::Parameter* ln_bias_ = nullptr;
};

/// Per-position annotations of the bi-directional encoder, each [B x 2h].
struct EncoderOutput {
  std::vector<ad::Var> annotations;
  std::vector<ad::Var> forward_states;
  std::vector<ad::Var> backward_states;
  Tensor mask;           // [B x S]
  ad::Var final_summary;  // [B x 2h]: last forward state, first backward state
  std::size_t rows() const { return mask.rows(); }
  std::size_t length() const { return annotations.size(); }
};

/// Attention memory with its key projections precomputed once per sequence.
struct AttentionMemory {
  std::vector<ad::Var> values;
  std::vector<ad::Var> keys;
  Tensor mask;  // [B x S]
};

struct DecoderState {
  ad::Var hidden;
  ad::Var cell;
  ad::Var context;
  ad::Var attention;  // [B x S], rows sum to 1 over unmasked positions
  int step = -1;
  std::shared_ptr<const AttentionMemory> memory;

  bool initialized() const { return step >= 0 && memory != nullptr; }
};

struct StepOutput {
  ad::Var logits;  // [B x V]
  ad::Var hidden;  // decoder hidden state after dropout-free update
  DecoderState state;
};

/// Previous-token input of a decode step: hard ids or a distribution over the
/// vocabulary whose expected embedding is fed in.
struct PrevToken {
  std::vector<int> ids;
  ad::Var distribution;

  static PrevToken hard(std::vector<int> ids) { return {std::move(ids), {}}; }
  static PrevToken soft(ad::Var distribution) { return {{}, distribution}; }
  bool is_soft() const { return distribution.valid(); }
};

/// LSTM decoder with MLP attention over a memory, emitting logits through the
/// transposed `embedding` (weight tying).
class AttentionDecoder {
 public:
  AttentionDecoder(ad::ParameterStore& store, const std::string& prefix, const ModelConfig& config,
                   std::size_t memory_dim, std::size_t init_dim, ad::Parameter& embedding, std::mt19937_64& rng);

  std::shared_ptr<const AttentionMemory> prepare(const Graph& g, std::vector<ad::Var> values, Tensor mask) const;
  DecoderState init_state(const Graph& g, ad::Var init_source, std::shared_ptr<const AttentionMemory> memory) const;
  StepOutput step(const Graph& g, ad::Var input_embedding, const DecoderState& state) const;

  ad::Var embed(const Graph& g, const PrevToken& token) const;
  ad::Parameter& embedding() const { return *embedding_; }

 private:
  ModelConfig config_;
  ad::Parameter* embedding_;
  LstmCell cell_;
  ad::Parameter* init_w_;
  ad::Parameter* init_b_;
  ad::Parameter* att_query_;
  ad::Parameter* att_key_;
  ad::Parameter* att_bias_;
  ad::Parameter* att_v_;
  ad::Parameter* out_w_;
  ad::Parameter* out_b_;
  ad::Parameter* vocab_bias_;
};

/// Teacher-forced pass over a target batch.
struct TeacherForced {
  ad::Var nll_sum;                     // sum of -log P over unmasked target tokens
  Real tokens = 0;                     // unmasked target token count
  std::vector<ad::Var> hidden_states;  // decoder hidden state per target step
  std::vector<ad::Var> logits;
};

/// Bi-directional attentional encoder-decoder over one shared vocabulary. The
/// same parameters translate in both directions and reconstruct.
class Seq2Seq {
 public:
  Seq2Seq(const ModelConfig& config, ad::ParameterStore& store, std::uint64_t init_seed,
          const std::string& prefix = "");

  const ModelConfig& config() const { return config_; }
  ad::ParameterStore& store() const { return *store_; }
  /// Embedding matrix E; the output projection is E^T over the same storage.
  ad::Parameter& embedding() const { return *embedding_; }
  ad::Parameter& output_projection() const { return *embedding_; }

  ad::Var embed_ids(const Graph& g, std::span<const int> ids) const;
  /// Distribution-weighted average of embedding rows ([B x V] * E).
  ad::Var embed_soft(const Graph& g, ad::Var distribution) const;

  EncoderOutput encode(const Graph& g, const data::PaddedIds& source) const;
  /// Encodes per-step input embeddings ([B x d] each) under mask [B x S].
  EncoderOutput encode_embedded(const Graph& g, std::vector<ad::Var> inputs, const Tensor& mask) const;

  DecoderState init_state(const Graph& g, const EncoderOutput& enc) const;
  StepOutput decode_step(const Graph& g, const PrevToken& prev, const DecoderState& state,
                         const EncoderOutput& enc) const;

  TeacherForced teacher_forced(const Graph& g, const EncoderOutput& enc, const data::PaddedIds& target) const;
  /// -sum_t log P(e_t | e_<t, f) over a batch.
  TeacherForced teacher_forced_nll(const Graph& g, const data::PaddedIds& source, const data::PaddedIds& target) const;

 private:
  void check_ids(const data::PaddedIds& ids, const char* what) const;

  ModelConfig config_;
  ad::ParameterStore* store_;
  ad::Parameter* embedding_;
  std::unique_ptr<LstmCell> encoder_forward_;
  std::unique_ptr<LstmCell> encoder_backward_;
  std::unique_ptr<AttentionDecoder> decoder_;
};

/// Teacher-forced NLL of `target` given an already prepared decoder.
TeacherForced teacher_forced_decode(const Graph& g, const AttentionDecoder& decoder, DecoderState state,
                                    const data::PaddedIds& target);

}  // namespace roundtrip::model
