#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "roundtrip/bpe.hpp"
#include "roundtrip/config.hpp"
#include "roundtrip/corpus.hpp"
#include "roundtrip/model.hpp"
#include "roundtrip/sampling.hpp"

namespace roundtrip::train {

/// Scalar values of one update's objective. `combined` is computed as
/// l_t + l_r in Real arithmetic, so it equals that sum exactly.
struct LossBreakdown {
  Real l_t = 0;
  Real l_r = 0;
  Real combined = 0;
};

/// Tape handles of an objective: total = l_t + l_r.
struct Objective {
  ad::Var total;
  ad::Var l_t;
  ad::Var l_r;
  LossBreakdown values() const;
};

Objective combine(ad::Var l_t, ad::Var l_r);
/// l_r = w_enc * l_enc + w_dec * l_dec, total = l_t + l_r.
Objective hidden_objective(ad::Var l_t, ad::Var l_enc, ad::Var l_dec, Real w_enc, Real w_dec);

model::ModelConfig model_config(const RunConfig& cfg, std::size_t vocab_size);

/// Applies `reduction` to a summed NLL over `tokens` target tokens.
ad::Var reduce(ad::Var nll_sum, Real tokens, Reduction reduction);

struct TranslationPass {
  ad::Var loss;
  model::EncoderOutput enc;
  model::TeacherForced tf;
};

/// Teacher-forced translation loss of a batch.
TranslationPass translation_loss(const model::Graph& g, const model::Seq2Seq& model, const data::Batch& batch,
                                 Reduction reduction);

struct ReconstructionOptions {
  sampling::StgsConfig stgs;
  Reduction reduction = Reduction::mean;
  /// Graph for the sampling decoder; defaults to the loss graph.
  const model::Graph* sampling_graph = nullptr;
  /// Feed reference targets instead of the model's own samples (ablation).
  bool teacher_forced = false;
  const sampling::SamplingReplay* replay = nullptr;
};

struct ReconstructionPass {
  ad::Var loss;
  sampling::SampledSequence sample;
};

/// Samples a translation of each source with the straight-through estimator,
/// encodes the sample with the same model and scores the original source.
/// Only valid once the model is pretrained: throws std::logic_error when
/// `phase` is pretrain.
ReconstructionPass reconstruction_loss(const model::Graph& g, Phase phase, const model::Seq2Seq& model,
                                       const data::Vocab& vocab, const data::Batch& batch,
                                       const model::EncoderOutput& enc, sampling::GumbelNoiseSource& noise,
                                       const ReconstructionOptions& options = {});

/// exp(per-token NLL of each source given its beta = 0 sample), dropout off.
Real reconstruction_perplexity(const model::Seq2Seq& model, const data::Vocab& vocab,
                               const std::vector<data::Instance>& corpus, const sampling::StgsConfig& stgs,
                               std::size_t batch_size = 48);

/// Two auxiliary attentional decoders that rebuild the source from the
/// encoder annotations and from the decoder hidden states. They own their
/// parameters (prefix "hidden."), including separate tied embeddings.
class HiddenReconstructor {
 public:
  HiddenReconstructor(ad::ParameterStore& store, const model::ModelConfig& config, std::uint64_t seed);

  struct Losses {
    ad::Var enc;
    ad::Var dec;
  };
  Losses loss(const model::Graph& g, const data::Batch& batch, const model::EncoderOutput& enc,
              const model::TeacherForced& tf, Reduction reduction) const;

  static constexpr const char* kPrefix = "hidden.";

 private:
  model::ModelConfig config_;
  std::unique_ptr<model::AttentionDecoder> from_encoder_;
  std::unique_ptr<model::AttentionDecoder> from_decoder_;
};

struct AdamConfig {
  Real lr = Real(1e-3);
  Real beta1 = Real(0.9);
  Real beta2 = Real(0.999);
  Real epsilon = Real(1e-8);
};

/// Adam with bias correction. Moments are keyed by parameter name.
class Adam {
 public:
  struct Moments {
    Tensor m;
    Tensor v;
  };

  explicit Adam(AdamConfig config = {}) : config_(config) {}
  void step(ad::ParameterStore& store);
  void reset();

  Real lr() const { return config_.lr; }
  void set_lr(Real lr);
  std::uint64_t steps() const { return steps_; }
  void set_steps(std::uint64_t steps) { steps_ = steps; }
  const AdamConfig& config() const { return config_; }
  std::map<std::string, Moments>& moments() { return moments_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }

 private:
  AdamConfig config_;
  std::uint64_t steps_ = 0;
  std::map<std::string, Moments> moments_;
};

/// Plateau schedule on dev perplexity: the rate decays after `patience_decay`
/// consecutive non-improving checkpoints (the decay counter then restarts)
/// and stops after `patience_stop` consecutive non-improving checkpoints.
class LrScheduler {
 public:
  struct Decision {
    bool improved = false;
    bool decayed = false;
    bool stop = false;
  };

  LrScheduler(Real initial_lr, Real decay, std::size_t patience_decay, std::size_t patience_stop);
  Decision observe(Real dev_perplexity);

  Real lr() const { return lr_; }
  Real best() const { return best_; }
  std::size_t stale() const { return stale_; }
  std::size_t since_decay() const { return since_decay_; }
  bool stopped() const { return stopped_; }

  std::string serialize() const;
  void restore(const std::string& text);

 private:
  Real lr_;
  Real decay_;
  std::size_t patience_decay_;
  std::size_t patience_stop_;
  Real best_;
  std::size_t stale_ = 0;
  std::size_t since_decay_ = 0;
  bool stopped_ = false;
};

/// Training and development data encoded with one vocabulary.
struct Dataset {
  data::Vocab vocab;
  data::SubwordModel bpe;
  std::vector<data::Instance> train;
  std::vector<data::Instance> dev;
  std::size_t train_pairs = 0;  // before swap-append
};

/// Reads `<data_dir>/<split>.<lang>` for both languages.
std::vector<data::ParallelPair> read_split(const RunConfig& cfg, const std::string& split);
/// Applies subword segmentation to both sides of every pair.
std::vector<data::ParallelPair> segment_pairs(const data::SubwordModel& bpe, std::vector<data::ParallelPair> pairs);
/// Builds the bidirectional train and dev sets. A given vocabulary and
/// subword model are reused (fine-tuning, resuming); otherwise both are
/// learned from the training split.
Dataset load_dataset(const RunConfig& cfg, const data::Vocab* vocab = nullptr,
                     const data::SubwordModel* bpe = nullptr);
Dataset make_dataset(const RunConfig& cfg, const std::vector<data::ParallelPair>& train_pairs,
                     const std::vector<data::ParallelPair>& dev_pairs, const data::Vocab* vocab = nullptr,
                     const data::SubwordModel* bpe = nullptr);

/// The translation model of a checkpoint; auxiliary reconstructors are dropped.
struct LoadedModel {
  RunConfig config;
  data::Vocab vocab;
  data::SubwordModel bpe;
  std::unique_ptr<ad::ParameterStore> store;
  std::unique_ptr<model::Seq2Seq> model;
};
LoadedModel load_model(const std::filesystem::path& checkpoint);

/// Encodes one input line as `tag pieces.. </s>`. The tag comes from the line
/// itself or from `src_lang`; throws std::invalid_argument when both are
/// missing, disagree, or name a language outside the vocabulary.
std::vector<int> encode_source(const LoadedModel& model, const std::string& line, const std::string& src_lang = "");

struct CheckpointRecord {
  Phase phase = Phase::pretrain;
  std::size_t update = 0;
  std::size_t checkpoint = 0;
  Real lr = 0;
  Real train_ppl = 0;
  Real dev_ppl = 0;
  Real l_t = 0;
  Real l_r = 0;
  std::uint64_t seed = 0;
  bool improved = false;
  bool decayed = false;
  bool stop = false;
};

std::string metrics_header();
std::string metrics_row(const CheckpointRecord& r);

/// splitmix64 of (seed, a, b, c): independent streams per update and purpose.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

class Trainer {
 public:
  using CheckpointHook = std::function<void(const CheckpointRecord&, Trainer&)>;

  /// Fresh pretraining run; parameters initialised from cfg.seed.
  Trainer(RunConfig cfg, Dataset data);
  /// Fine-tuning from a pretrained checkpoint: parameters are loaded, the
  /// optimiser and schedule restart at cfg.finetune_lr. Throws if the
  /// checkpoint is missing or its structure differs from cfg.
  static Trainer finetune(RunConfig cfg, const std::filesystem::path& init_checkpoint, Dataset data);
  /// Continues a run from one of its own checkpoints with identical state.
  static Trainer resume(const std::filesystem::path& checkpoint, Dataset data);

  Trainer(Trainer&&) noexcept;
  Trainer& operator=(Trainer&&) noexcept;
  ~Trainer();

  /// Objective of the next update without applying it.
  Objective objective(ad::Tape& tape, const data::Batch& batch, std::uint64_t update) const;
  /// One optimiser update on the next batch.
  LossBreakdown step();
  /// Dev evaluation and schedule update; appends to metrics and saves
  /// checkpoints when out_dir is set.
  CheckpointRecord checkpoint();
  /// Steps until early stopping or max_updates, checkpointing every
  /// checkpoint_interval updates.
  std::vector<CheckpointRecord> run(const CheckpointHook& hook = {});

  void save(const std::filesystem::path& path) const;

  const RunConfig& config() const { return cfg_; }
  RunConfig& config() { return cfg_; }
  Phase phase() const { return phase_; }
  const Dataset& data() const { return data_; }
  model::Seq2Seq& model() { return *model_; }
  const model::Seq2Seq& model() const { return *model_; }
  ad::ParameterStore& store() { return *store_; }
  const Adam& optimizer() const { return adam_; }
  const LrScheduler& scheduler() const { return scheduler_; }
  bool has_hidden_reconstructor() const { return hidden_ != nullptr; }
  std::size_t updates() const { return update_; }
  bool stopped() const { return scheduler_.stopped(); }
  const std::vector<CheckpointRecord>& history() const { return history_; }

 private:
  Trainer(RunConfig cfg, Dataset data, Phase phase);
  const data::Batch& next_batch();
  void attach_hidden_reconstructor();

  RunConfig cfg_;
  Dataset data_;
  Phase phase_;
  std::unique_ptr<ad::ParameterStore> store_;
  std::unique_ptr<model::Seq2Seq> model_;
  std::unique_ptr<HiddenReconstructor> hidden_;
  Adam adam_;
  LrScheduler scheduler_;

  std::size_t update_ = 0;
  std::size_t checkpoints_ = 0;
  std::size_t epoch_ = 0;
  std::size_t batch_index_ = 0;
  std::vector<data::Batch> epoch_batches_;

  Real sum_combined_ = 0, sum_l_t_ = 0, sum_l_r_ = 0;
  std::size_t accumulated_ = 0;
  std::vector<CheckpointRecord> history_;
};

}  // namespace roundtrip::train
