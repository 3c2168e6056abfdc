#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>

#include "roundtrip/checkpoint.hpp"
#include "roundtrip/corpus.hpp"
#include "roundtrip/evaluation.hpp"
#include "roundtrip/gradsuite.hpp"
#include "roundtrip/ops.hpp"
#include "roundtrip/sampling.hpp"
#include "roundtrip/synth.hpp"
#include "roundtrip/training.hpp"

namespace py = pybind11;
using namespace roundtrip;

namespace {

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) out += (i ? " " : "") + words[i];
  return out;
}

void set_from_python(RunConfig& cfg, const std::string& key, const py::handle& value) {
  if (py::isinstance<py::bool_>(value)) {
    cfg.set(key, value.cast<bool>() ? "true" : "false");
  } else if (py::isinstance<py::float_>(value)) {
    cfg.set(key, format_real(value.cast<Real>()));
  } else {
    cfg.set(key, py::str(value).cast<std::string>());
  }
}

py::dict record_dict(const train::CheckpointRecord& r) {
  py::dict d;
  d["phase"] = to_string(r.phase);
  d["update"] = r.update;
  d["checkpoint"] = r.checkpoint;
  d["lr"] = r.lr;
  d["train_ppl"] = r.train_ppl;
  d["dev_ppl"] = r.dev_ppl;
  d["l_t"] = r.l_t;
  d["l_r"] = r.l_r;
  d["seed"] = r.seed;
  d["improved"] = r.improved;
  return d;
}

py::list run_trainer(train::Trainer& trainer) {
  const auto& out_dir = trainer.config().out_dir;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    trainer.config().save(std::filesystem::path(out_dir) / "config.txt");
  }
  std::vector<train::CheckpointRecord> records;
  {
    py::gil_scoped_release release;
    records = trainer.run();
  }
  py::list out;
  for (const auto& r : records) out.append(record_dict(r));
  return out;
}

class Translator {
 public:
  explicit Translator(const std::string& checkpoint) : model_(train::load_model(checkpoint)) {}

  std::vector<std::string> translate(const std::vector<std::string>& lines, const std::string& src_lang,
                                     std::size_t beam_width, bool greedy) const {
    eval::DecodeConfig dc;
    dc.cap_factor = model_.config.cap_factor;
    dc.cap_offset = model_.config.cap_offset;
    dc.beam_width = beam_width ? beam_width : model_.config.beam_width;
    dc.mode = greedy ? eval::DecodeConfig::Mode::greedy : eval::DecodeConfig::Mode::beam;
    std::vector<std::vector<int>> sources;
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (data::tokenize(lines[i]).empty()) continue;
      sources.push_back(train::encode_source(model_, lines[i], src_lang));
      rows.push_back(i);
    }
    std::vector<std::string> out(lines.size());
    py::gil_scoped_release release;
    const auto decoded = eval::translate(*model_.model, model_.vocab, sources, dc);
    for (std::size_t k = 0; k < decoded.size(); ++k) out[rows[k]] = eval::detokenize(model_.vocab, decoded[k]);
    return out;
  }

  std::size_t vocab_size() const { return model_.vocab.size(); }
  const RunConfig& config() const { return model_.config; }

 private:
  train::LoadedModel model_;
};

}  // namespace

PYBIND11_MODULE(_roundtrip, m) {
  m.doc() = "Differentiable round-trip reconstruction for bi-directional sequence-to-sequence models";

  py::class_<RunConfig>(m, "Config")
      .def(py::init([](const py::kwargs& kwargs) {
        RunConfig cfg;
        for (const auto& [k, v] : kwargs) set_from_python(cfg, py::str(k), v);
        return cfg;
      }))
      .def_static("parse", &RunConfig::parse, py::arg("text"))
      .def_static("load", [](const std::string& path) { return RunConfig::load(path); }, py::arg("path"))
      .def_static("keys", &RunConfig::keys)
      .def("get", &RunConfig::get, py::arg("key"))
      .def("set", [](RunConfig& c, const std::string& k, const py::handle& v) { set_from_python(c, k, v); },
           py::arg("key"), py::arg("value"))
      .def("serialize", &RunConfig::serialize)
      .def("save", [](const RunConfig& c, const std::string& path) { c.save(path); }, py::arg("path"))
      .def("structural_hash", &RunConfig::structural_hash, py::arg("vocab_size"))
      .def("__eq__", [](const RunConfig& a, const RunConfig& b) { return a == b; })
      .def("__getitem__", &RunConfig::get)
      .def("__setitem__", [](RunConfig& c, const std::string& k, const py::handle& v) { set_from_python(c, k, v); })
      .def("__repr__", [](const RunConfig& c) { return "Config(seed=" + c.get("seed") + ", out_dir=" + c.out_dir + ")"; });

  m.def(
      "pretrain",
      [](const RunConfig& cfg) {
        train::Trainer t(cfg, train::load_dataset(cfg));
        return run_trainer(t);
      },
      py::arg("config"), "Pretrains from <data_dir>/{train,dev}.<lang>; returns one dict per checkpoint.");

  m.def(
      "finetune",
      [](const RunConfig& cfg, const std::string& init_checkpoint) {
        const auto ck = ckpt::Checkpoint::load(init_checkpoint);
        auto t = train::Trainer::finetune(cfg, init_checkpoint, train::load_dataset(cfg, &ck.vocab, &ck.bpe));
        return run_trainer(t);
      },
      py::arg("config"), py::arg("init_checkpoint"), "Fine-tunes a pretrained checkpoint with cfg.recon_mode.");

  py::class_<Translator>(m, "Translator")
      .def(py::init<const std::string&>(), py::arg("checkpoint"))
      .def("translate", &Translator::translate, py::arg("lines"), py::arg("src_lang") = "", py::arg("beam_width") = 0,
           py::arg("greedy") = false)
      .def_property_readonly("vocab_size", &Translator::vocab_size)
      .def_property_readonly("config", &Translator::config);

  m.def("corpus_bleu", &eval::corpus_bleu, py::arg("hypotheses"), py::arg("references"), py::arg("lowercase") = true);

  m.def(
      "delta_bleu_report",
      [](const std::map<std::string, std::vector<std::pair<std::uint64_t, Real>>>& baseline,
         const std::map<std::string, std::vector<std::pair<std::uint64_t, Real>>>& treatment) {
        auto convert = [](const auto& in) {
          std::map<std::string, std::vector<eval::RunScore>> out;
          for (const auto& [dir, scores] : in)
            for (const auto& [seed, bleu] : scores) out[dir].push_back({seed, bleu});
          return out;
        };
        const auto rows = eval::delta_bleu_report(convert(baseline), convert(treatment));
        py::list out;
        for (const auto& r : rows) {
          py::dict d;
          d["direction"] = r.direction;
          d["baseline_mean"] = r.baseline_mean;
          d["baseline_std"] = r.baseline_std;
          d["treatment_mean"] = r.treatment_mean;
          d["treatment_std"] = r.treatment_std;
          d["delta_mean"] = r.delta_mean;
          d["delta_std"] = r.delta_std;
          out.append(d);
        }
        return py::make_tuple(out, eval::format_delta_table(rows));
      },
      py::arg("baseline"), py::arg("treatment"),
      "Maps direction -> [(seed, bleu)] per condition; returns (rows, formatted table).");

  m.def(
      "gradcheck",
      [](std::size_t vocab_size, std::size_t dim, std::uint64_t seed, std::size_t trials, Real corrupt_mul) {
        verify::SuiteConfig c;
        c.vocab_size = vocab_size;
        c.dim = dim;
        c.seed = seed;
        c.primitive_trials = trials;
        ad::set_mul_gradient_corruption(corrupt_mul);
        verify::SuiteReport report;
        try {
          report = verify::run_suite(c);
        } catch (...) {
          ad::set_mul_gradient_corruption(1);
          throw;
        }
        ad::set_mul_gradient_corruption(1);
        py::list components;
        for (const auto& comp : report.components) {
          py::dict d;
          d["name"] = comp.name;
          d["max_rel_error"] = comp.max_rel_error;
          d["checked"] = comp.checked;
          d["passed"] = comp.passed;
          components.append(d);
        }
        py::dict out;
        out["passed"] = report.passed();
        out["components"] = components;
        out["report"] = report.format();
        return out;
      },
      py::arg("vocab_size") = 9, py::arg("dim") = 4, py::arg("seed") = 1, py::arg("trials") = 10,
      py::arg("corrupt_mul") = 1.0);

  m.def(
      "gumbel_max_frequencies",
      [](const std::vector<Real>& logits, Real beta, std::size_t draws, std::uint64_t seed) {
        const Tensor l = Tensor::row(logits);
        sampling::GumbelNoiseSource noise(beta, seed);
        std::vector<Real> freq(logits.size());
        for (std::size_t i = 0; i < draws; ++i) {
          const auto id = sampling::argmax_rows(sampling::gumbel_max_step(l, noise.sample(l.shape())))[0];
          freq[static_cast<std::size_t>(id)] += 1;
        }
        for (auto& f : freq) f /= static_cast<Real>(draws);
        return freq;
      },
      py::arg("logits"), py::arg("beta") = 1.0, py::arg("draws") = 100000, py::arg("seed") = 1);

  m.def(
      "bidirectional_corpus",
      [](const std::vector<std::pair<std::string, std::string>>& pairs, const std::string& src_lang,
         const std::string& tgt_lang) {
        std::vector<data::ParallelPair> in;
        for (const auto& [s, t] : pairs) {
          in.push_back({data::TaggedSentence::tagged(src_lang, data::tokenize(s, false)),
                        data::TaggedSentence::tagged(tgt_lang, data::tokenize(t, false))});
        }
        std::vector<std::pair<std::string, std::string>> out;
        for (const auto& p : data::build_bidirectional_corpus(in)) out.emplace_back(join(p.source.tokens), join(p.target.tokens));
        return out;
      },
      py::arg("pairs"), py::arg("src_lang") = "en", py::arg("tgt_lang") = "sw",
      "Tags each side and appends the swapped pairs.");

  m.def(
      "synthesize",
      [](const std::string& task, std::size_t size, std::size_t vocab, std::size_t min_len, std::size_t max_len,
         std::uint64_t seed) {
        synth::Config c;
        c.task = synth::parse_task(task);
        c.size = size;
        c.vocab = vocab;
        c.min_len = min_len;
        c.max_len = max_len;
        c.seed = seed;
        const auto corpus = synth::synthesize(c);
        auto convert = [](const std::vector<synth::Pair>& ps) {
          std::vector<std::pair<std::string, std::string>> out;
          for (const auto& p : ps) out.emplace_back(join(p.source), join(p.target));
          return out;
        };
        py::dict d;
        d["train"] = convert(corpus.train);
        d["dev"] = convert(corpus.dev);
        d["test"] = convert(corpus.test);
        return d;
      },
      py::arg("task"), py::arg("size") = 2000, py::arg("vocab") = 32, py::arg("min_len") = 3, py::arg("max_len") = 10,
      py::arg("seed") = 1);

  py::register_exception<ckpt::StructureMismatch>(m, "StructureMismatch", PyExc_ValueError);
}
