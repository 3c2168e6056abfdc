#include "roundtrip/training.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "roundtrip/checkpoint.hpp"
#include "roundtrip/evaluation.hpp"
#include "roundtrip/ops.hpp"

namespace roundtrip::train {

using ad::Var;

LossBreakdown Objective::values() const {
  return {l_t.value()[0], l_r.value()[0], total.value()[0]};
}

Objective combine(Var l_t, Var l_r) { return {ad::add(l_t, l_r), l_t, l_r}; }

Objective hidden_objective(Var l_t, Var l_enc, Var l_dec, Real w_enc, Real w_dec) {
  Var l_r = ad::add(ad::scale(l_enc, w_enc), ad::scale(l_dec, w_dec));
  return combine(l_t, l_r);
}

model::ModelConfig model_config(const RunConfig& cfg, std::size_t vocab_size) {
  model::ModelConfig m;
  m.vocab_size = vocab_size;
  m.embed_dim = cfg.embed_dim;
  m.hidden_dim = cfg.hidden_dim;
  m.attention_dim = cfg.attention_dim;
  m.dropout = cfg.dropout;
  m.layer_norm = cfg.layer_norm;
  return m;
}

Var reduce(Var nll_sum, Real tokens, Reduction reduction) {
  if (!(tokens > 0)) throw std::invalid_argument("loss over zero tokens");
  return reduction == Reduction::mean ? ad::scale(nll_sum, 1 / tokens) : nll_sum;
}

TranslationPass translation_loss(const model::Graph& g, const model::Seq2Seq& model, const data::Batch& batch,
                                 Reduction reduction) {
  if (batch.size == 0 || batch.source.rows == 0) throw std::invalid_argument("translation_loss: empty batch");
  TranslationPass out;
  out.enc = model.encode(g, batch.source);
  out.tf = model.teacher_forced(g, out.enc, batch.target);
  out.loss = reduce(out.tf.nll_sum, out.tf.tokens, reduction);
  return out;
}

ReconstructionPass reconstruction_loss(const model::Graph& g, Phase phase, const model::Seq2Seq& model,
                                       const data::Vocab& vocab, const data::Batch& batch,
                                       const model::EncoderOutput& enc, sampling::GumbelNoiseSource& noise,
                                       const ReconstructionOptions& options) {
  if (phase == Phase::pretrain) {
    throw std::logic_error("reconstruction loss needs a pretrained model; it is unavailable in the pretrain phase");
  }
  const auto tags = sampling::flipped_tags(vocab, batch.source);
  std::vector<std::size_t> lengths(batch.source.rows);
  for (std::size_t i = 0; i < lengths.size(); ++i) lengths[i] = batch.source.row_length(i);

  sampling::SamplingOptions so;
  so.replay = options.replay;
  if (options.teacher_forced) so.teacher_targets = &batch.target;
  const model::Graph& sg = options.sampling_graph ? *options.sampling_graph : g;

  ReconstructionPass out;
  out.sample = sampling::sample_translation(sg, model, enc, tags, lengths, noise, options.stgs, so);
  std::vector<Var> inputs;
  inputs.reserve(out.sample.length());
  for (const auto& v : out.sample.values) inputs.push_back(model.embed_soft(g, v));
  auto back = model.encode_embedded(g, std::move(inputs), out.sample.mask);
  auto tf = model.teacher_forced(g, back, batch.source);
  out.loss = reduce(tf.nll_sum, tf.tokens, options.reduction);
  return out;
}

Real reconstruction_perplexity(const model::Seq2Seq& model, const data::Vocab& vocab,
                               const std::vector<data::Instance>& corpus, const sampling::StgsConfig& stgs,
                               std::size_t batch_size) {
  Real nll = 0, tokens = 0;
  ReconstructionOptions opts;
  opts.stgs = stgs;
  opts.reduction = Reduction::sum;
  for (const auto& batch : data::make_sequential_batches(corpus, batch_size)) {
    ad::Tape tape(ad::GradMode::disabled);
    model::Graph g{tape, false, 0, nullptr};
    sampling::GumbelNoiseSource noise(0, 0);
    auto enc = model.encode(g, batch.source);
    auto rp = reconstruction_loss(g, Phase::finetune, model, vocab, batch, enc, noise, opts);
    nll += rp.loss.value()[0];
    tokens += batch.source.token_count();
  }
  return std::exp(nll / tokens);
}

HiddenReconstructor::HiddenReconstructor(ad::ParameterStore& store, const model::ModelConfig& config,
                                         std::uint64_t seed)
    : config_(config) {
  std::mt19937_64 rng(seed);
  const auto v = config.vocab_size, e = config.embed_dim, h = config.hidden_dim;
  auto& enc_embed = store.add(std::string(kPrefix) + "enc.embed", model::xavier(v, e, rng));
  from_encoder_ = std::make_unique<model::AttentionDecoder>(store, std::string(kPrefix) + "enc", config, 2 * h, 2 * h,
                                                            enc_embed, rng);
  auto& dec_embed = store.add(std::string(kPrefix) + "dec.embed", model::xavier(v, e, rng));
  from_decoder_ =
      std::make_unique<model::AttentionDecoder>(store, std::string(kPrefix) + "dec", config, h, h, dec_embed, rng);
}

HiddenReconstructor::Losses HiddenReconstructor::loss(const model::Graph& g, const data::Batch& batch,
                                                      const model::EncoderOutput& enc, const model::TeacherForced& tf,
                                                      Reduction reduction) const {
  const auto h = config_.hidden_dim;
  if (enc.annotations.empty() || enc.annotations.front().cols() != 2 * h) {
    throw ShapeError("hidden reconstructor expects encoder annotations of width " + std::to_string(2 * h));
  }
  if (tf.hidden_states.empty() || tf.hidden_states.front().cols() != h ||
      tf.hidden_states.size() != batch.target.length) {
    throw ShapeError("hidden reconstructor expects one decoder state of width " + std::to_string(h) +
                     " per target position");
  }
  Losses out;
  auto enc_memory = from_encoder_->prepare(g, enc.annotations, enc.mask);
  auto enc_pass =
      model::teacher_forced_decode(g, *from_encoder_, from_encoder_->init_state(g, enc.final_summary, enc_memory),
                                   batch.source);
  out.enc = reduce(enc_pass.nll_sum, enc_pass.tokens, reduction);

  const auto rows = batch.target.rows, len = batch.target.length;
  Tensor mask({rows, len}, batch.target.mask);
  Tensor mean_weights = mask;
  for (std::size_t i = 0; i < rows; ++i) {
    const Real n = static_cast<Real>(batch.target.row_length(i));
    for (std::size_t t = 0; t < len; ++t) mean_weights[i * len + t] /= n;
  }
  auto dec_memory = from_decoder_->prepare(g, tf.hidden_states, mask);
  Var summary = ad::weighted_sum(g.tape.constant(mean_weights), tf.hidden_states);
  auto dec_pass = model::teacher_forced_decode(g, *from_decoder_, from_decoder_->init_state(g, summary, dec_memory),
                                               batch.source);
  out.dec = reduce(dec_pass.nll_sum, dec_pass.tokens, reduction);
  return out;
}

void Adam::set_lr(Real lr) {
  if (!(lr > 0)) throw std::invalid_argument("learning rate must be positive");
  config_.lr = lr;
}

void Adam::reset() {
  steps_ = 0;
  moments_.clear();
}

void Adam::step(ad::ParameterStore& store) {
  ++steps_;
  const Real b1 = config_.beta1, b2 = config_.beta2;
  const Real correction1 = 1 - std::pow(b1, static_cast<Real>(steps_));
  const Real correction2 = 1 - std::pow(b2, static_cast<Real>(steps_));
  for (auto& p : store) {
    auto& mo = moments_[p->name];
    if (mo.m.shape() != p->value.shape()) {
      mo.m = Tensor(p->value.shape());
      mo.v = Tensor(p->value.shape());
    }
    auto value = p->value.values();
    const auto grad = p->grad.values();
    auto m = mo.m.values();
    auto v = mo.v.values();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const Real gi = grad[i];
      m[i] = b1 * m[i] + (1 - b1) * gi;
      v[i] = b2 * v[i] + (1 - b2) * gi * gi;
      const Real m_hat = m[i] / correction1;
      const Real v_hat = v[i] / correction2;
      value[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }
}

LrScheduler::LrScheduler(Real initial_lr, Real decay, std::size_t patience_decay, std::size_t patience_stop)
    : lr_(initial_lr),
      decay_(decay),
      patience_decay_(patience_decay),
      patience_stop_(patience_stop),
      best_(std::numeric_limits<Real>::infinity()) {
  if (!(initial_lr > 0)) throw std::invalid_argument("initial learning rate must be positive");
  if (!(decay > 0 && decay <= 1)) throw std::invalid_argument("lr decay must lie in (0, 1]");
  if (patience_decay == 0 || patience_stop == 0) throw std::invalid_argument("patience must be at least 1");
}

LrScheduler::Decision LrScheduler::observe(Real dev_perplexity) {
  Decision d;
  if (stopped_) {
    d.stop = true;
    return d;
  }
  if (dev_perplexity < best_) {
    best_ = dev_perplexity;
    stale_ = 0;
    since_decay_ = 0;
    d.improved = true;
    return d;
  }
  ++stale_;
  ++since_decay_;
  if (stale_ >= patience_stop_) {
    stopped_ = true;
    d.stop = true;
  } else if (since_decay_ >= patience_decay_) {
    lr_ *= decay_;
    since_decay_ = 0;
    d.decayed = true;
  }
  return d;
}

std::string LrScheduler::serialize() const {
  return format_real(lr_) + " " + format_real(best_) + " " + std::to_string(stale_) + " " +
         std::to_string(since_decay_) + " " + (stopped_ ? "1" : "0");
}

void LrScheduler::restore(const std::string& text) {
  std::istringstream in(text);
  std::string lr, best;
  int stopped = 0;
  if (!(in >> lr >> best >> stale_ >> since_decay_ >> stopped)) {
    throw std::runtime_error("malformed scheduler state '" + text + "'");
  }
  lr_ = parse_real(lr);
  best_ = parse_real(best);
  stopped_ = stopped != 0;
}

std::vector<data::ParallelPair> read_split(const RunConfig& cfg, const std::string& split) {
  const std::filesystem::path dir(cfg.data_dir);
  return data::read_parallel(dir / (split + "." + cfg.src_lang), dir / (split + "." + cfg.tgt_lang), cfg.src_lang,
                             cfg.tgt_lang, cfg.lowercase);
}

std::vector<data::ParallelPair> segment_pairs(const data::SubwordModel& bpe, std::vector<data::ParallelPair> pairs) {
  if (bpe.empty()) return pairs;
  for (auto& p : pairs) {
    for (auto* s : {&p.source, &p.target}) {
      std::vector<std::string> tokens{s->tokens.front()};
      for (auto& piece : bpe.segment(s->words())) tokens.push_back(std::move(piece));
      s->tokens = std::move(tokens);
    }
  }
  return pairs;
}

Dataset make_dataset(const RunConfig& cfg, const std::vector<data::ParallelPair>& train_pairs,
                     const std::vector<data::ParallelPair>& dev_pairs, const data::Vocab* vocab,
                     const data::SubwordModel* bpe) {
  Dataset ds;
  if (bpe) {
    ds.bpe = *bpe;
  } else if (cfg.bpe_merges > 0) {
    std::vector<std::vector<std::string>> sentences;
    for (const auto& p : train_pairs) {
      sentences.push_back(p.source.words());
      sentences.push_back(p.target.words());
    }
    ds.bpe = data::SubwordModel::learn(sentences, cfg.bpe_merges);
  }
  auto train = data::filter_by_length(segment_pairs(ds.bpe, train_pairs), cfg.max_len);
  if (train.empty()) throw std::invalid_argument("no training pairs left after length filtering");
  ds.train_pairs = train.size();
  auto bi_train = data::build_bidirectional_corpus(train);
  auto bi_dev = data::build_bidirectional_corpus(segment_pairs(ds.bpe, dev_pairs));
  ds.vocab = vocab ? *vocab : data::build_vocab(bi_train, {cfg.src_lang, cfg.tgt_lang});
  ds.train = data::encode_corpus(ds.vocab, bi_train);
  ds.dev = data::encode_corpus(ds.vocab, bi_dev);
  return ds;
}

Dataset load_dataset(const RunConfig& cfg, const data::Vocab* vocab, const data::SubwordModel* bpe) {
  return make_dataset(cfg, read_split(cfg, "train"), read_split(cfg, "dev"), vocab, bpe);
}

LoadedModel load_model(const std::filesystem::path& checkpoint) {
  auto ck = ckpt::Checkpoint::load(checkpoint);
  ckpt::verify_structure(ck.config, ck);
  std::erase_if(ck.parameters, [](const ckpt::NamedTensor& t) {
    return t.name.rfind(HiddenReconstructor::kPrefix, 0) == 0;
  });
  LoadedModel out;
  out.config = ck.config;
  out.vocab = ck.vocab;
  out.bpe = ck.bpe;
  out.store = std::make_unique<ad::ParameterStore>();
  out.model = std::make_unique<model::Seq2Seq>(model_config(ck.config, ck.vocab.size()), *out.store, 0);
  ckpt::restore_parameters(*out.store, ck);
  return out;
}

std::vector<int> encode_source(const LoadedModel& m, const std::string& line, const std::string& src_lang) {
  auto tokens = data::tokenize(line, m.config.lowercase);
  std::string tag;
  if (!tokens.empty() && data::Vocab::looks_like_tag(tokens.front())) {
    tag = tokens.front();
    tokens.erase(tokens.begin());
  }
  if (!src_lang.empty()) {
    const auto wanted = data::Vocab::tag_token(src_lang);
    if (!tag.empty() && tag != wanted) {
      throw std::invalid_argument("input is tagged " + tag + " but the source language is " + src_lang);
    }
    tag = wanted;
  }
  if (tag.empty()) throw std::invalid_argument("input has no language tag and no source language was given");
  const auto id = m.vocab.find(tag);
  if (!id || !m.vocab.is_tag(*id)) {
    throw std::invalid_argument("language tag " + tag + " is not in the model vocabulary");
  }
  std::vector<int> ids{*id};
  for (int w : m.vocab.encode(m.bpe.empty() ? tokens : m.bpe.segment(tokens))) ids.push_back(w);
  ids.push_back(data::kEos);
  return ids;
}

std::string metrics_header() { return "phase,update,checkpoint,lr,train_ppl,dev_ppl,l_t,l_r,seed"; }

std::string metrics_row(const CheckpointRecord& r) {
  std::ostringstream out;
  out << to_string(r.phase) << ',' << r.update << ',' << r.checkpoint << ',' << format_real(r.lr) << ','
      << format_real(r.train_ppl) << ',' << format_real(r.dev_ppl) << ',' << format_real(r.l_t) << ','
      << format_real(r.l_r) << ',' << r.seed;
  return out.str();
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  auto mix = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  return mix(mix(mix(mix(seed) ^ a) ^ b) ^ c);
}

namespace {

enum Stream : std::uint64_t { kInit = 1, kBatches = 2, kDropout = 3, kNoise = 4, kHidden = 5 };

std::uint64_t phase_code(Phase p) { return p == Phase::pretrain ? 0 : 1; }

}  // namespace

Trainer::Trainer(RunConfig cfg, Dataset data) : Trainer(std::move(cfg), std::move(data), Phase::pretrain) {}

Trainer::Trainer(RunConfig cfg, Dataset data, Phase phase)
    : cfg_(std::move(cfg)),
      data_(std::move(data)),
      phase_(phase),
      store_(std::make_unique<ad::ParameterStore>()),
      adam_(AdamConfig{phase == Phase::pretrain ? cfg_.pretrain_lr : cfg_.finetune_lr, cfg_.adam_beta1,
                       cfg_.adam_beta2, cfg_.adam_epsilon}),
      scheduler_(phase == Phase::pretrain ? cfg_.pretrain_lr : cfg_.finetune_lr, cfg_.lr_decay, cfg_.patience_decay,
                 cfg_.patience_stop) {
  if (data_.train.empty()) throw std::invalid_argument("training set is empty");
  if (cfg_.batch_size == 0) throw std::invalid_argument("batch_size must be at least 1");
  if (cfg_.checkpoint_interval == 0) throw std::invalid_argument("checkpoint_interval must be at least 1");
  model_ = std::make_unique<model::Seq2Seq>(model_config(cfg_, data_.vocab.size()), *store_,
                                            derive_seed(cfg_.seed, kInit));
}

Trainer::Trainer(Trainer&&) noexcept = default;
Trainer& Trainer::operator=(Trainer&&) noexcept = default;
Trainer::~Trainer() = default;

void Trainer::attach_hidden_reconstructor() {
  hidden_ = std::make_unique<HiddenReconstructor>(*store_, model_config(cfg_, data_.vocab.size()),
                                                  derive_seed(cfg_.seed, kHidden));
}

Trainer Trainer::finetune(RunConfig cfg, const std::filesystem::path& init_checkpoint, Dataset data) {
  if (!std::filesystem::exists(init_checkpoint)) {
    throw std::runtime_error("fine-tuning needs a pretrained checkpoint; not found: " + init_checkpoint.string());
  }
  auto ck = ckpt::Checkpoint::load(init_checkpoint);
  ckpt::verify_structure(cfg, ck);
  if (!(ck.vocab == data.vocab)) throw ckpt::StructureMismatch("dataset vocabulary differs from the checkpoint's");
  // Auxiliary reconstructors of an earlier run are not carried over.
  std::erase_if(ck.parameters, [](const ckpt::NamedTensor& t) {
    return t.name.rfind(HiddenReconstructor::kPrefix, 0) == 0;
  });
  Trainer t(std::move(cfg), std::move(data), Phase::finetune);
  ckpt::restore_parameters(*t.store_, ck);
  if (t.cfg_.recon_mode == ReconMode::hidden) t.attach_hidden_reconstructor();
  return t;
}

Trainer Trainer::resume(const std::filesystem::path& checkpoint, Dataset data) {
  auto ck = ckpt::Checkpoint::load(checkpoint);
  ckpt::verify_structure(ck.config, ck);
  if (!(ck.vocab == data.vocab)) throw ckpt::StructureMismatch("dataset vocabulary differs from the checkpoint's");
  Trainer t(ck.config, std::move(data), parse_phase(ck.meta("phase")));
  if (ck.meta("hidden") == "1") t.attach_hidden_reconstructor();
  ckpt::restore_parameters(*t.store_, ck);

  auto num = [&](const char* k) { return static_cast<std::size_t>(std::stoull(ck.meta(k))); };
  t.update_ = num("update");
  t.checkpoints_ = num("checkpoints");
  t.epoch_ = num("epoch");
  t.batch_index_ = num("batch_index");
  t.accumulated_ = num("accumulated");
  t.sum_combined_ = parse_real(ck.meta("sum_combined"));
  t.sum_l_t_ = parse_real(ck.meta("sum_l_t"));
  t.sum_l_r_ = parse_real(ck.meta("sum_l_r"));
  t.scheduler_.restore(ck.meta("scheduler"));
  t.adam_.set_lr(parse_real(ck.meta("adam_lr")));
  t.adam_.set_steps(std::stoull(ck.meta("adam_steps")));
  for (auto& m : ck.moments) t.adam_.moments()[m.name] = {std::move(m.m), std::move(m.v)};
  return t;
}

const data::Batch& Trainer::next_batch() {
  if (!epoch_batches_.empty() && batch_index_ >= epoch_batches_.size()) {
    ++epoch_;
    batch_index_ = 0;
    epoch_batches_.clear();
  }
  if (epoch_batches_.empty()) {
    epoch_batches_ =
        data::make_batches(data_.train, cfg_.batch_size, derive_seed(cfg_.seed, kBatches, phase_code(phase_), epoch_));
    if (batch_index_ >= epoch_batches_.size()) {
      ++epoch_;
      batch_index_ = 0;
      epoch_batches_ = data::make_batches(data_.train, cfg_.batch_size,
                                          derive_seed(cfg_.seed, kBatches, phase_code(phase_), epoch_));
    }
  }
  return epoch_batches_[batch_index_++];
}

Objective Trainer::objective(ad::Tape& tape, const data::Batch& batch, std::uint64_t update) const {
  const auto pc = phase_code(phase_);
  std::mt19937_64 dropout_rng(derive_seed(cfg_.seed, kDropout, pc, update));
  model::Graph g{tape, true, cfg_.dropout, &dropout_rng};
  auto tp = translation_loss(g, *model_, batch, cfg_.reduction);
  if (phase_ == Phase::pretrain || cfg_.recon_mode == ReconMode::none) {
    return combine(tp.loss, tape.constant(Tensor::scalar(0)));
  }
  if (cfg_.recon_mode == ReconMode::hidden) {
    if (!hidden_) throw std::logic_error("hidden reconstruction requested without auxiliary reconstructors");
    auto l = hidden_->loss(g, batch, tp.enc, tp.tf, cfg_.reduction);
    return hidden_objective(tp.loss, l.enc, l.dec, cfg_.hidden_enc_weight, cfg_.hidden_dec_weight);
  }
  model::Graph no_dropout{tape, false, 0, nullptr};
  ReconstructionOptions opts;
  opts.stgs = sampling::StgsConfig{cfg_.tau, cfg_.cap_factor, cfg_.cap_offset};
  opts.reduction = cfg_.reduction;
  opts.sampling_graph = cfg_.sampling_dropout ? &g : &no_dropout;
  opts.teacher_forced = cfg_.teacher_forced_sampling;
  sampling::GumbelNoiseSource noise(cfg_.beta, derive_seed(cfg_.seed, kNoise, pc, update));
  auto rp = reconstruction_loss(g, phase_, *model_, data_.vocab, batch, tp.enc, noise, opts);
  return combine(tp.loss, rp.loss);
}

LossBreakdown Trainer::step() {
  const auto& batch = next_batch();
  ad::Tape tape;
  auto obj = objective(tape, batch, update_);
  store_->zero_grad();
  tape.backward(obj.total);
  if (cfg_.clip_norm > 0) {
    const Real norm = store_->grad_norm();
    if (norm > cfg_.clip_norm) store_->scale_grad(cfg_.clip_norm / norm);
  }
  adam_.step(*store_);
  ++update_;
  const auto v = obj.values();
  sum_combined_ += v.combined;
  sum_l_t_ += v.l_t;
  sum_l_r_ += v.l_r;
  ++accumulated_;
  return v;
}

CheckpointRecord Trainer::checkpoint() {
  if (data_.dev.empty()) throw std::invalid_argument("checkpoint evaluation needs a development set");
  ++checkpoints_;
  CheckpointRecord r;
  r.phase = phase_;
  r.update = update_;
  r.checkpoint = checkpoints_;
  r.seed = cfg_.seed;
  const Real n = static_cast<Real>(accumulated_);
  r.train_ppl = accumulated_ ? std::exp(sum_combined_ / n) : std::numeric_limits<Real>::quiet_NaN();
  r.l_t = accumulated_ ? sum_l_t_ / n : 0;
  r.l_r = accumulated_ ? sum_l_r_ / n : 0;
  r.dev_ppl = eval::perplexity(*model_, data_.dev, cfg_.batch_size);
  const auto decision = scheduler_.observe(r.dev_ppl);
  r.improved = decision.improved;
  r.decayed = decision.decayed;
  r.stop = decision.stop;
  adam_.set_lr(scheduler_.lr());
  r.lr = scheduler_.lr();
  sum_combined_ = sum_l_t_ = sum_l_r_ = 0;
  accumulated_ = 0;
  history_.push_back(r);

  if (!cfg_.out_dir.empty()) {
    const std::filesystem::path dir(cfg_.out_dir);
    std::filesystem::create_directories(dir);
    const auto metrics = dir / "metrics.csv";
    const bool fresh = !std::filesystem::exists(metrics) || std::filesystem::file_size(metrics) == 0;
    std::ofstream out(metrics, std::ios::app);
    if (!out) throw std::runtime_error("cannot append to " + metrics.string());
    if (fresh) out << metrics_header() << '\n';
    out << metrics_row(r) << '\n';
    save(dir / "last.ckpt");
    if (r.improved) save(dir / "best.ckpt");
  }
  return r;
}

std::vector<CheckpointRecord> Trainer::run(const CheckpointHook& hook) {
  std::vector<CheckpointRecord> out;
  auto emit = [&] {
    out.push_back(checkpoint());
    if (hook) hook(out.back(), *this);
  };
  while (!stopped() && (cfg_.max_updates == 0 || update_ < cfg_.max_updates)) {
    step();
    if (update_ % cfg_.checkpoint_interval == 0) emit();
  }
  if (!stopped() && accumulated_ > 0) emit();
  return out;
}

void Trainer::save(const std::filesystem::path& path) const {
  ckpt::Checkpoint ck;
  ck.structural_hash = cfg_.structural_hash(data_.vocab.size());
  ck.config = cfg_;
  ck.vocab = data_.vocab;
  ck.bpe = data_.bpe;
  ck.metadata = {
      {"phase", to_string(phase_)},
      {"update", std::to_string(update_)},
      {"checkpoints", std::to_string(checkpoints_)},
      {"epoch", std::to_string(epoch_)},
      {"batch_index", std::to_string(batch_index_)},
      {"accumulated", std::to_string(accumulated_)},
      {"sum_combined", format_real(sum_combined_)},
      {"sum_l_t", format_real(sum_l_t_)},
      {"sum_l_r", format_real(sum_l_r_)},
      {"scheduler", scheduler_.serialize()},
      {"adam_lr", format_real(adam_.lr())},
      {"adam_steps", std::to_string(adam_.steps())},
      {"hidden", hidden_ ? "1" : "0"},
  };
  ck.parameters = ckpt::snapshot_parameters(*store_);
  for (const auto& [name, m] : adam_.moments()) ck.moments.push_back({name, m.m, m.v});
  ck.save(path);
}

}  // namespace roundtrip::train
