#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "roundtrip/checkpoint.hpp"
#include "roundtrip/evaluation.hpp"
#include "roundtrip/gradsuite.hpp"
#include "roundtrip/ops.hpp"
#include "roundtrip/synth.hpp"
#include "roundtrip/training.hpp"

namespace fs = std::filesystem;
using namespace roundtrip;

namespace {

constexpr int kSuccess = 0;
constexpr int kUsageError = 1;
constexpr int kVerificationFailure = 2;

struct VerificationFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::string> read_lines(const std::string& path) {
  std::vector<std::string> lines;
  std::string line;
  if (path == "-") {
    while (std::getline(std::cin, line)) lines.push_back(line);
    return lines;
  }
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& sets) {
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
}

/// Options shared by train and finetune.
struct RunOptions {
  std::string config_path;
  std::vector<std::string> sets;
  std::string data_dir, out_dir;
  std::int64_t seed = -1;
  std::int64_t max_updates = -1;

  void add_to(CLI::App& app) {
    app.add_option("--config", config_path, "key=value configuration file")->check(CLI::ExistingFile);
    app.add_option("--set", sets, "override one configuration key (key=value), repeatable");
    app.add_option("--data-dir", data_dir, "directory with train/dev files");
    app.add_option("--out-dir", out_dir, "directory for checkpoints and metrics.csv");
    app.add_option("--seed", seed, "random seed");
    app.add_option("--max-updates", max_updates, "update budget (0: until early stopping)");
  }

  void apply(RunConfig& cfg) const {
    apply_overrides(cfg, sets);
    if (!data_dir.empty()) cfg.data_dir = data_dir;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
    if (max_updates >= 0) cfg.max_updates = static_cast<std::size_t>(max_updates);
  }
};

void print_record(const train::CheckpointRecord& r) {
  std::cout << to_string(r.phase) << " update " << r.update << " checkpoint " << r.checkpoint << " lr "
            << format_real(r.lr) << " train_ppl " << r.train_ppl << " dev_ppl " << r.dev_ppl << " l_t " << r.l_t
            << " l_r " << r.l_r << (r.improved ? " *" : "") << (r.decayed ? " (decay)" : "")
            << (r.stop ? " (stop)" : "") << std::endl;
}

int finish_run(train::Trainer& trainer) {
  fs::create_directories(trainer.config().out_dir);
  trainer.config().save(fs::path(trainer.config().out_dir) / "config.txt");
  trainer.run([](const train::CheckpointRecord& r, train::Trainer&) { print_record(r); });
  std::cout << "finished after " << trainer.updates() << " updates"
            << (trainer.stopped() ? " (early stop)" : "") << "; best dev perplexity "
            << trainer.scheduler().best() << std::endl;
  return kSuccess;
}

int cmd_synth(const std::string& task, const synth::Config& base, const std::string& out, const std::string& src,
              const std::string& tgt) {
  auto cfg = base;
  cfg.task = synth::parse_task(task);
  const auto corpus = synth::synthesize(cfg);
  synth::write_corpus(corpus, out, src, tgt);
  std::cout << "wrote " << corpus.train.size() << "/" << corpus.dev.size() << "/" << corpus.test.size()
            << " train/dev/test pairs (" << task << ") to " << out << std::endl;
  return kSuccess;
}

int cmd_train(const RunOptions& opts, const std::string& resume) {
  if (!resume.empty()) {
    const auto ck = ckpt::Checkpoint::load(resume);
    auto data = train::load_dataset(ck.config, &ck.vocab, &ck.bpe);
    auto trainer = train::Trainer::resume(resume, std::move(data));
    if (!opts.out_dir.empty()) trainer.config().out_dir = opts.out_dir;
    if (opts.max_updates >= 0) trainer.config().max_updates = static_cast<std::size_t>(opts.max_updates);
    return finish_run(trainer);
  }
  RunConfig cfg = opts.config_path.empty() ? RunConfig{} : RunConfig::load(opts.config_path);
  opts.apply(cfg);
  if (cfg.out_dir.empty()) throw std::invalid_argument("out_dir must be set");
  train::Trainer trainer(cfg, train::load_dataset(cfg));
  return finish_run(trainer);
}

int cmd_finetune(RunOptions opts, const std::string& init, const std::string& mode, const std::string& beta,
                 const std::string& tau) {
  if (!fs::exists(init)) throw std::runtime_error("init checkpoint not found: " + init);
  const auto ck = ckpt::Checkpoint::load(init);
  RunConfig cfg = opts.config_path.empty() ? ck.config : RunConfig::load(opts.config_path);
  const auto pretrain_dir = cfg.out_dir;
  cfg.recon_mode = parse_recon_mode(mode);
  if (!beta.empty()) cfg.set("beta", beta);
  if (!tau.empty()) cfg.set("tau", tau);
  if (cfg.recon_mode == ReconMode::hidden) cfg.hidden_enc_weight = cfg.hidden_dec_weight = Real(0.5);
  cfg.out_dir.clear();
  opts.apply(cfg);
  if (cfg.out_dir.empty()) cfg.out_dir = pretrain_dir + "_" + to_string(cfg.recon_mode);
  if (fs::exists(cfg.out_dir) && fs::equivalent(cfg.out_dir, fs::path(init).parent_path())) {
    throw std::invalid_argument("fine-tuning out_dir must differ from the pretraining run directory");
  }
  auto data = train::load_dataset(cfg, &ck.vocab, &ck.bpe);
  auto trainer = train::Trainer::finetune(cfg, init, std::move(data));
  return finish_run(trainer);
}

int cmd_translate(const std::string& checkpoint, const std::string& input, const std::string& output,
                  const std::string& src_lang, std::int64_t beam, bool greedy) {
  const auto m = train::load_model(checkpoint);
  const auto lines = read_lines(input);
  eval::DecodeConfig dc;
  dc.cap_factor = m.config.cap_factor;
  dc.cap_offset = m.config.cap_offset;
  dc.beam_width = beam > 0 ? static_cast<std::size_t>(beam) : m.config.beam_width;
  dc.mode = greedy ? eval::DecodeConfig::Mode::greedy : eval::DecodeConfig::Mode::beam;

  std::vector<std::vector<int>> sources;
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (data::tokenize(lines[i]).empty()) {
      std::cerr << "warning: line " << i + 1 << " is empty; writing an empty translation" << std::endl;
      continue;
    }
    try {
      sources.push_back(train::encode_source(m, lines[i], src_lang));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("line " + std::to_string(i + 1) + ": " + e.what());
    }
    rows.push_back(i);
  }
  const auto decoded = eval::translate(*m.model, m.vocab, sources, dc);
  std::vector<std::string> out(lines.size());
  for (std::size_t k = 0; k < decoded.size(); ++k) out[rows[k]] = eval::detokenize(m.vocab, decoded[k]);

  std::ofstream file;
  if (output != "-") {
    file.open(output);
    if (!file) throw std::runtime_error("cannot write " + output);
  }
  std::ostream& os = output == "-" ? std::cout : file;
  for (const auto& line : out) os << line << '\n';
  return kSuccess;
}

std::pair<std::string, std::string> split_direction(const std::string& direction) {
  const auto dash = direction.find('-');
  if (dash == std::string::npos || dash == 0 || dash + 1 == direction.size()) {
    throw std::invalid_argument("direction must look like src-tgt, got '" + direction + "'");
  }
  return {direction.substr(0, dash), direction.substr(dash + 1)};
}

std::map<std::string, std::vector<eval::RunScore>> read_scores(const std::vector<std::string>& dirs) {
  std::map<std::string, std::vector<eval::RunScore>> out;
  for (const auto& dir : dirs) {
    const auto path = fs::path(dir) / "scores.csv";
    const auto lines = read_lines(path.string());
    for (std::size_t i = 1; i < lines.size(); ++i) {
      if (lines[i].empty()) continue;
      std::stringstream row(lines[i]);
      std::string direction, seed, bleu;
      if (!std::getline(row, direction, ',') || !std::getline(row, seed, ',') || !std::getline(row, bleu, ',')) {
        throw std::runtime_error("malformed row " + std::to_string(i + 1) + " in " + path.string());
      }
      out[direction].push_back({std::stoull(seed), parse_real(bleu)});
    }
  }
  return out;
}

struct ScoreOptions {
  std::string hyp, ref, csv, direction = "en-sw", checkpoint, source, report_csv;
  std::uint64_t seed = 0;
  bool case_sensitive = false;
  std::vector<std::string> baseline, treatment;
};

int cmd_score(const ScoreOptions& o) {
  if (!o.baseline.empty() || !o.treatment.empty()) {
    if (o.baseline.empty() || o.treatment.empty()) {
      throw std::invalid_argument("a delta report needs both --baseline and --treatment run directories");
    }
    const auto rows = eval::delta_bleu_report(read_scores(o.baseline), read_scores(o.treatment));
    std::cout << eval::format_delta_table(rows);
    if (!o.report_csv.empty()) {
      std::ofstream out(o.report_csv);
      if (!out) throw std::runtime_error("cannot write " + o.report_csv);
      out << eval::delta_table_csv(rows);
    }
    return kSuccess;
  }
  if (o.hyp.empty() || o.ref.empty()) throw std::invalid_argument("score needs --hyp and --ref (or a delta report)");
  const auto hyps = read_lines(o.hyp);
  const auto refs = read_lines(o.ref);
  if (refs.empty()) throw std::invalid_argument("reference file " + o.ref + " is empty");
  if (hyps.size() != refs.size()) {
    throw std::invalid_argument("hypothesis and reference files differ in length: " + std::to_string(hyps.size()) +
                                " vs " + std::to_string(refs.size()));
  }
  const Real bleu = eval::corpus_bleu(hyps, refs, !o.case_sensitive);
  std::cout << "BLEU " << std::fixed << std::setprecision(2) << bleu << std::endl;

  if (!o.checkpoint.empty()) {
    if (o.source.empty()) throw std::invalid_argument("perplexity needs --source alongside --checkpoint");
    const auto m = train::load_model(o.checkpoint);
    const auto [src, tgt] = split_direction(o.direction);
    auto pairs = data::read_parallel(o.source, o.ref, src, tgt, m.config.lowercase);
    pairs = train::segment_pairs(m.bpe, std::move(pairs));
    const auto corpus = data::encode_corpus(m.vocab, pairs);
    std::cout << "perplexity " << eval::perplexity(*m.model, corpus) << std::endl;
  }
  if (!o.csv.empty()) {
    split_direction(o.direction);
    if (fs::path(o.csv).has_parent_path()) fs::create_directories(fs::path(o.csv).parent_path());
    const bool fresh = !fs::exists(o.csv) || fs::file_size(o.csv) == 0;
    std::ofstream out(o.csv, std::ios::app);
    if (!out) throw std::runtime_error("cannot append to " + o.csv);
    if (fresh) out << "direction,seed,bleu\n";
    out << o.direction << ',' << o.seed << ',' << format_real(bleu) << '\n';
  }
  return kSuccess;
}

int cmd_gradcheck(const verify::SuiteConfig& cfg, double corrupt) {
  if (corrupt != 1) ad::set_mul_gradient_corruption(static_cast<Real>(corrupt));
  const auto report = verify::run_suite(cfg);
  ad::set_mul_gradient_corruption(1);
  std::cout << report.format();
  if (!report.passed()) throw VerificationFailure("gradient check failed");
  return kSuccess;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Round-trip reconstruction training for bi-directional translation models"};
  app.require_subcommand(1);
  int code = kSuccess;

  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic parallel corpus");
  std::string task = "reversal", synth_out = "data", synth_src = "en", synth_tgt = "sw";
  synth::Config sc;
  synth_cmd->add_option("--task", task, "reversal | cipher | copy")->required();
  synth_cmd->add_option("--size", sc.size, "training pairs")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--dev-size", sc.dev_size, "development pairs (default size/10)");
  synth_cmd->add_option("--test-size", sc.test_size, "test pairs (default size/10)");
  synth_cmd->add_option("--vocab", sc.vocab, "word types")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--min-len", sc.min_len, "shortest sentence");
  synth_cmd->add_option("--max-len", sc.max_len, "longest sentence");
  synth_cmd->add_option("--seed", sc.seed, "random seed");
  synth_cmd->add_option("--out", synth_out, "output directory");
  synth_cmd->add_option("--src-lang", synth_src, "source language code");
  synth_cmd->add_option("--tgt-lang", synth_tgt, "target language code");

  auto* train_cmd = app.add_subcommand("train", "pretrain a baseline model");
  RunOptions train_opts;
  train_opts.add_to(*train_cmd);
  std::string resume;
  train_cmd->add_option("--resume", resume, "continue from a checkpoint of the same run")->check(CLI::ExistingFile);

  auto* ft_cmd = app.add_subcommand("finetune", "fine-tune a pretrained model with a reconstruction loss");
  RunOptions ft_opts;
  ft_opts.add_to(*ft_cmd);
  std::string init, mode = "sampled", beta, tau;
  ft_cmd->add_option("--init-checkpoint", init, "pretrained checkpoint")->required();
  ft_cmd->add_option("--recon-mode", mode, "sampled | hidden | none")
      ->check(CLI::IsMember({"sampled", "hidden", "none"}));
  ft_cmd->add_option("--beta", beta, "Gumbel noise scale");
  ft_cmd->add_option("--tau", tau, "softmax temperature of the straight-through surrogate");

  auto* tr_cmd = app.add_subcommand("translate", "decode sentences with a checkpoint");
  std::string tr_ckpt, tr_in = "-", tr_out = "-", tr_lang;
  std::int64_t beam = 0;
  bool greedy = false;
  tr_cmd->add_option("--checkpoint", tr_ckpt, "model checkpoint")->required()->check(CLI::ExistingFile);
  tr_cmd->add_option("--input", tr_in, "one sentence per line, '-' for stdin");
  tr_cmd->add_option("--output", tr_out, "hypotheses, '-' for stdout");
  tr_cmd->add_option("--src-lang", tr_lang, "source language of untagged lines");
  tr_cmd->add_option("--beam", beam, "beam width (default: the checkpoint's beam_width)")->check(CLI::PositiveNumber);
  tr_cmd->add_flag("--greedy", greedy, "greedy decoding instead of beam search");

  auto* sc_cmd = app.add_subcommand("score", "corpus BLEU, perplexity and delta-BLEU reports");
  ScoreOptions so;
  sc_cmd->add_option("--hyp", so.hyp, "hypothesis file");
  sc_cmd->add_option("--ref", so.ref, "reference file");
  sc_cmd->add_option("--csv", so.csv, "append direction,seed,bleu to this CSV");
  sc_cmd->add_option("--direction", so.direction, "translation direction, e.g. en-sw");
  sc_cmd->add_option("--seed", so.seed, "seed recorded in the CSV row");
  sc_cmd->add_flag("--case-sensitive", so.case_sensitive, "compare without lowercasing");
  sc_cmd->add_option("--checkpoint", so.checkpoint, "also report reference perplexity under this model");
  sc_cmd->add_option("--source", so.source, "source file aligned with --ref (for perplexity)");
  sc_cmd->add_option("--baseline", so.baseline, "baseline run directories (each with scores.csv)");
  sc_cmd->add_option("--treatment", so.treatment, "treatment run directories (each with scores.csv)");
  sc_cmd->add_option("--report-csv", so.report_csv, "write the delta report as CSV");

  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference verification of every gradient");
  verify::SuiteConfig gc;
  double corrupt = 1;
  gc_cmd->add_option("--vocab", gc.vocab_size, "vocabulary size (7..10)");
  gc_cmd->add_option("--dim", gc.dim, "model dimension (1..8)");
  gc_cmd->add_option("--seed", gc.seed, "random seed");
  gc_cmd->add_option("--trials", gc.primitive_trials, "random trials per primitive");
  gc_cmd->add_option("--corrupt-mul-gradient", corrupt, "test hook: scale the backward of mul");

  try {
    app.parse(argc, argv);
    if (*synth_cmd) code = cmd_synth(task, sc, synth_out, synth_src, synth_tgt);
    if (*train_cmd) code = cmd_train(train_opts, resume);
    if (*ft_cmd) code = cmd_finetune(ft_opts, init, mode, beta, tau);
    if (*tr_cmd) code = cmd_translate(tr_ckpt, tr_in, tr_out, tr_lang, beam, greedy);
    if (*sc_cmd) code = cmd_score(so);
    if (*gc_cmd) code = cmd_gradcheck(gc, corrupt);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kSuccess : kUsageError;
  } catch (const VerificationFailure& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kVerificationFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kUsageError;
  }
  return code;
}
