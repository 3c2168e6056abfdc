#include "roundtrip/gradsuite.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "roundtrip/corpus.hpp"
#include "roundtrip/model.hpp"
#include "roundtrip/ops.hpp"
#include "roundtrip/sampling.hpp"
#include "roundtrip/training.hpp"

namespace roundtrip::verify {

using namespace ad;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, Real lo = -1, Real hi = 1) {
  std::uniform_real_distribution<Real> dist(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

// Projects x through `op` and then onto fixed random weights, so every output
// coordinate contributes to the gradient.
ScalarFn projected(std::function<Var(Var)> op, std::uint64_t seed) {
  return [op, seed](Var x) {
    Var y = op(x);
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    return dot(y, x.tape().constant(random_tensor(y.shape(), rng)));
  };
}

}  // namespace

std::vector<PrimitiveCheck> primitive_checks() {
  std::vector<PrimitiveCheck> out;
  auto with_const = [](Shape shape, std::mt19937_64& rng) { return random_tensor(std::move(shape), rng); };

  out.push_back({"matmul_left", {3, 4}, [=](std::mt19937_64& rng) {
    auto b = with_const({4, 5}, rng);
    return projected([b](Var x) { return matmul(x, x.tape().constant(b)); }, rng());
  }});
  out.push_back({"matmul_right", {4, 5}, [=](std::mt19937_64& rng) {
    auto a = with_const({3, 4}, rng);
    return projected([a](Var x) { return matmul(x.tape().constant(a), x); }, rng());
  }});
  out.push_back({"matmul_nt_left", {3, 4}, [=](std::mt19937_64& rng) {
    auto b = with_const({6, 4}, rng);
    return projected([b](Var x) { return matmul_nt(x, x.tape().constant(b)); }, rng());
  }});
  out.push_back({"matmul_nt_right", {6, 4}, [=](std::mt19937_64& rng) {
    auto a = with_const({3, 4}, rng);
    return projected([a](Var x) { return matmul_nt(x.tape().constant(a), x); }, rng());
  }});
  out.push_back({"add", {2, 3}, [=](std::mt19937_64& rng) {
    auto b = with_const({2, 3}, rng);
    return projected([b](Var x) { return add(x, x.tape().constant(b)); }, rng());
  }});
  out.push_back({"sub", {2, 3}, [=](std::mt19937_64& rng) {
    auto b = with_const({2, 3}, rng);
    return projected([b](Var x) { return sub(x.tape().constant(b), x); }, rng());
  }});
  out.push_back({"mul", {2, 3}, [=](std::mt19937_64& rng) {
    auto b = with_const({2, 3}, rng);
    return projected([b](Var x) { return mul(x, x.tape().constant(b)); }, rng());
  }});
  out.push_back({"mul_self", {2, 3}, [=](std::mt19937_64& rng) {
    return projected([](Var x) { return mul(x, x); }, rng());
  }});
  out.push_back({"scale", {2, 3}, [=](std::mt19937_64& rng) {
    return projected([](Var x) { return scale(x, Real(-1.7)); }, rng());
  }});
  out.push_back({"add_row_matrix", {3, 4}, [=](std::mt19937_64& rng) {
    auto r = with_const({1, 4}, rng);
    return projected([r](Var x) { return add_row(x, x.tape().constant(r)); }, rng());
  }});
  out.push_back({"add_row_row", {1, 4}, [=](std::mt19937_64& rng) {
    auto a = with_const({3, 4}, rng);
    return projected([a](Var x) { return add_row(x.tape().constant(a), x); }, rng());
  }});
  out.push_back({"mul_col_matrix", {3, 4}, [=](std::mt19937_64& rng) {
    auto c = with_const({3, 1}, rng);
    return projected([c](Var x) { return mul_col(x, x.tape().constant(c)); }, rng());
  }});
  out.push_back({"mul_col_column", {3, 1}, [=](std::mt19937_64& rng) {
    auto a = with_const({3, 4}, rng);
    return projected([a](Var x) { return mul_col(x.tape().constant(a), x); }, rng());
  }});
  out.push_back({"tanh", {2, 5}, [=](std::mt19937_64& rng) { return projected([](Var x) { return tanh(x); }, rng()); },
                 -2, 2});
  out.push_back({"sigmoid", {2, 5}, [=](std::mt19937_64& rng) { return projected([](Var x) { return sigmoid(x); }, rng()); },
                 -3, 3});
  out.push_back({"exp", {2, 5}, [=](std::mt19937_64& rng) { return projected([](Var x) { return exp(x); }, rng()); }});
  out.push_back({"log", {2, 5}, [=](std::mt19937_64& rng) { return projected([](Var x) { return log(x); }, rng()); },
                 Real(0.5), 2});
  out.push_back({"select_rows", {3, 2}, [=](std::mt19937_64& rng) {
    auto other = with_const({3, 2}, rng);
    Tensor keep({3, 1});
    keep[0] = 1;
    keep[2] = 1;
    return projected([other, keep](Var x) { return select_rows(keep, x, x.tape().constant(other)); }, rng());
  }});
  out.push_back({"concat_cols", {2, 3}, [=](std::mt19937_64& rng) {
    auto other = with_const({2, 2}, rng);
    return projected([other](Var x) {
      std::vector<Var> parts{x, x.tape().constant(other), x};
      return concat_cols(parts);
    }, rng());
  }});
  out.push_back({"slice_cols", {2, 6}, [=](std::mt19937_64& rng) {
    return projected([](Var x) { return slice_cols(x, 2, 3); }, rng());
  }});
  out.push_back({"lookup", {5, 3}, [=](std::mt19937_64& rng) {
    return projected([](Var x) {
      std::vector<int> ids{4, 0, 4, 2};
      return lookup(x, ids);
    }, rng());
  }});
  out.push_back({"sum", {3, 3}, [=](std::mt19937_64&) { return ScalarFn([](Var x) { return sum(mul(x, x)); }); }});
  out.push_back({"dot", {3, 3}, [=](std::mt19937_64& rng) {
    auto b = with_const({3, 3}, rng);
    return ScalarFn([b](Var x) { return dot(x, x.tape().constant(b)); });
  }});
  out.push_back({"softmax_rows", {3, 5}, [=](std::mt19937_64& rng) {
    return projected([](Var x) { return softmax_rows(x); }, rng());
  }, -3, 3});
  out.push_back({"log_softmax_rows", {3, 5}, [=](std::mt19937_64& rng) {
    return projected([](Var x) { return log_softmax_rows(x); }, rng());
  }, -3, 3});
  out.push_back({"masked_softmax_rows", {2, 4}, [=](std::mt19937_64& rng) {
    Tensor mask({2, 4}, std::vector<Real>{1, 1, 0, 1, 1, 0, 0, 0});
    return projected([mask](Var x) { return masked_softmax_rows(x, mask); }, rng());
  }, -3, 3});
  out.push_back({"layer_norm_input", {3, 8}, [=](std::mt19937_64& rng) {
    auto gain = with_const({1, 8}, rng);
    auto bias = with_const({1, 8}, rng);
    return projected([gain, bias](Var x) {
      auto& t = x.tape();
      return layer_norm(x, t.constant(gain), t.constant(bias), Real(1e-6));
    }, rng());
  }});
  out.push_back({"layer_norm_gain", {1, 8}, [=](std::mt19937_64& rng) {
    auto in = with_const({3, 8}, rng);
    auto bias = with_const({1, 8}, rng);
    return projected([in, bias](Var x) {
      auto& t = x.tape();
      return layer_norm(t.constant(in), x, t.constant(bias), Real(1e-6));
    }, rng());
  }});
  out.push_back({"layer_norm_bias", {1, 8}, [=](std::mt19937_64& rng) {
    auto in = with_const({3, 8}, rng);
    auto gain = with_const({1, 8}, rng);
    return projected([in, gain](Var x) {
      auto& t = x.tape();
      return layer_norm(t.constant(in), t.constant(gain), x, Real(1e-6));
    }, rng());
  }});
  out.push_back({"cross_entropy", {4, 6}, [=](std::mt19937_64&) {
    return ScalarFn([](Var x) {
      std::vector<int> targets{1, 5, 0, 3};
      std::vector<Real> weights{1, Real(0.5), 0, 2};
      return cross_entropy(x, targets, weights);
    });
  }, -3, 3});
  out.push_back({"mlp_attention_query", {2, 3}, [=](std::mt19937_64& rng) {
    auto k0 = with_const({2, 3}, rng), k1 = with_const({2, 3}, rng), v = with_const({3, 1}, rng);
    return projected([k0, k1, v](Var x) {
      auto& t = x.tape();
      std::vector<Var> keys{t.constant(k0), t.constant(k1)};
      return mlp_attention_scores(x, keys, t.constant(v));
    }, rng());
  }});
  out.push_back({"mlp_attention_key", {2, 3}, [=](std::mt19937_64& rng) {
    auto q = with_const({2, 3}, rng), k1 = with_const({2, 3}, rng), v = with_const({3, 1}, rng);
    return projected([q, k1, v](Var x) {
      auto& t = x.tape();
      std::vector<Var> keys{x, t.constant(k1), x};
      return mlp_attention_scores(t.constant(q), keys, t.constant(v));
    }, rng());
  }});
  out.push_back({"mlp_attention_v", {3, 1}, [=](std::mt19937_64& rng) {
    auto q = with_const({2, 3}, rng), k0 = with_const({2, 3}, rng);
    return projected([q, k0](Var x) {
      auto& t = x.tape();
      std::vector<Var> keys{t.constant(k0)};
      return mlp_attention_scores(t.constant(q), keys, x);
    }, rng());
  }});
  out.push_back({"weighted_sum_weights", {2, 3}, [=](std::mt19937_64& rng) {
    auto m0 = with_const({2, 4}, rng), m1 = with_const({2, 4}, rng), m2 = with_const({2, 4}, rng);
    return projected([m0, m1, m2](Var x) {
      auto& t = x.tape();
      std::vector<Var> mem{t.constant(m0), t.constant(m1), t.constant(m2)};
      return weighted_sum(x, mem);
    }, rng());
  }});
  out.push_back({"weighted_sum_memory", {2, 4}, [=](std::mt19937_64& rng) {
    auto w = with_const({2, 2}, rng), m1 = with_const({2, 4}, rng);
    return projected([w, m1](Var x) {
      auto& t = x.tape();
      std::vector<Var> mem{x, t.constant(m1)};
      return weighted_sum(t.constant(w), mem);
    }, rng());
  }});
  out.push_back({"straight_through_soft", {2, 4}, [=](std::mt19937_64& rng) {
    Tensor hard({2, 4});
    hard[1] = 1;
    hard[6] = 1;
    return projected([hard](Var x) {
      // Reference frozen at a fixed point so the forward value moves with x.
      Tensor ref({2, 4}, Real(0.25));
      return straight_through(hard, softmax_rows(x), ref);
    }, rng());
  }});
  out.push_back({"dropout_fixed_mask", {3, 4}, [=](std::mt19937_64& rng) {
    const auto seed = rng();
    return projected([seed](Var x) {
      std::mt19937_64 local(seed);
      return dropout(x, Real(0.3), local);
    }, rng());
  }});
  return out;
}

namespace {

ComponentResult finish(std::string name, const GradCheckReport& r, Real tolerance) {
  ComponentResult c;
  c.name = std::move(name);
  c.max_rel_error = r.max_rel_error;
  c.checked = r.checked;
  c.worst = r.worst_name;
  c.passed = r.checked > 0 && std::isfinite(r.max_rel_error) && r.max_rel_error < tolerance;
  return c;
}

void merge(GradCheckReport& into, const GradCheckReport& r) {
  if (r.max_rel_error > into.max_rel_error || into.checked == 0) {
    into.max_rel_error = r.max_rel_error;
    into.worst_name = r.worst_name;
  }
  into.checked += r.checked;
}

struct Fixture {
  data::Vocab vocab{{"en", "sw"}};
  ad::ParameterStore store;
  std::unique_ptr<model::Seq2Seq> model;
  data::Batch batch;
};

model::ModelConfig tiny_model(const SuiteConfig& c) {
  model::ModelConfig m;
  m.vocab_size = c.vocab_size;
  m.embed_dim = m.hidden_dim = m.attention_dim = c.dim;
  m.dropout = 0;
  return m;
}

// Two sentence pairs whose targets are the reversed sources with flipped tags.
void build_fixture(Fixture& f, const SuiteConfig& c, std::mt19937_64& rng) {
  for (std::size_t i = f.vocab.size(); i < c.vocab_size; ++i) f.vocab.add("w" + std::to_string(i));
  f.model = std::make_unique<model::Seq2Seq>(tiny_model(c), f.store, rng());
  const int first = f.vocab.tag_id(f.vocab.languages().back()) + 1;
  std::uniform_int_distribution<int> word(first, static_cast<int>(c.vocab_size) - 1);
  std::vector<data::Instance> corpus;
  for (std::size_t n : {std::size_t(3), std::size_t(2)}) {
    const int tag = f.vocab.tag_id(f.vocab.languages()[corpus.size() % 2]);
    std::vector<int> words(n);
    for (auto& w : words) w = word(rng);
    data::Instance in;
    in.source.push_back(tag);
    in.source.insert(in.source.end(), words.begin(), words.end());
    in.source.push_back(data::kEos);
    in.target.push_back(f.vocab.flip_tag(tag));
    in.target.insert(in.target.end(), words.rbegin(), words.rend());
    in.target.push_back(data::kEos);
    corpus.push_back(std::move(in));
  }
  f.batch = data::make_batch(corpus, {0, 1});
}

model::Graph eval_graph(Tape& tape) { return model::Graph{tape, false, 0, nullptr}; }

GradCheckReport check_decode_step(Fixture& f, const SuiteConfig& c, std::mt19937_64& rng) {
  const std::vector<int> prev{static_cast<int>(c.vocab_size) - 1, f.batch.target.at(1, 1)};
  const Tensor weights = random_tensor({2, c.vocab_size}, rng);
  return grad_check_params(
      [&](Tape& tape) {
        auto g = eval_graph(tape);
        auto enc = f.model->encode(g, f.batch.source);
        auto s0 = f.model->decode_step(g, model::PrevToken::hard({data::kBos, data::kBos}), f.model->init_state(g, enc), enc);
        auto s1 = f.model->decode_step(g, model::PrevToken::hard(prev), s0.state, enc);
        return dot(log_softmax_rows(s1.logits), tape.constant(weights));
      },
      f.store, c.step);
}

// The straight-through gradient must equal the gradient of the soft path,
// and with a frozen reference the whole value is checked directly.
GradCheckReport check_stgs(const SuiteConfig& c, std::mt19937_64& rng) {
  GradCheckReport out;
  const Real tau = 2;
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor point = random_tensor({2, c.vocab_size}, rng, -2, 2);
    const Tensor proj = random_tensor({2, c.vocab_size}, rng);
    const Tensor noise = sampling::sample_gumbel({2, c.vocab_size}, 1, rng);

    Tape tape;
    auto logits = tape.variable(point);
    auto tok = sampling::stgs_combine(logits, noise, tau);
    tape.backward(dot(tok.value, tape.constant(proj)));
    const Tensor analytic = logits.grad();

    auto soft_value = [&](const Tensor& l) {
      Tape t(GradMode::disabled);
      return dot(softmax_rows(scale(add(t.constant(l), t.constant(noise)), 1 / tau)), t.constant(proj)).value()[0];
    };
    GradCheckReport soft;
    for (std::size_t k = 0; k < point.size(); ++k) {
      Tensor up = point, down = point;
      up[k] += c.step;
      down[k] -= c.step;
      const Real numeric = (soft_value(up) - soft_value(down)) / (2 * c.step);
      const Real err = std::abs(analytic[k] - numeric) / std::max<Real>(1, std::abs(analytic[k]));
      if (err > soft.max_rel_error || soft.checked == 0) {
        soft.max_rel_error = err;
        soft.worst_name = "soft[" + std::to_string(k) + "]";
      }
      ++soft.checked;
    }
    merge(out, soft);

    const auto ids = tok.ids;
    const Tensor reference = tok.soft.value();
    auto frozen = grad_check_report(
        [&](Var l) { return dot(sampling::stgs_combine(l, noise, tau, &reference, &ids).value, l.tape().constant(proj)); },
        point, c.step);
    frozen.worst_name = "frozen[" + std::to_string(frozen.worst_index) + "]";
    merge(out, frozen);
  }
  return out;
}

// Samples once to fix the discrete choices, then differentiates
// L_T + L_R with those choices replayed against a frozen soft reference.
GradCheckReport check_end_to_end(Fixture& f, const SuiteConfig& c, std::mt19937_64& rng, bool hidden) {
  // Adds the reconstructor parameters to the fixture store for good.
  std::unique_ptr<train::HiddenReconstructor> rec;
  if (hidden) rec = std::make_unique<train::HiddenReconstructor>(f.store, tiny_model(c), rng());
  sampling::GumbelNoiseSource noise(1, rng());
  train::ReconstructionOptions options;
  sampling::SamplingReplay replay;
  {
    Tape tape(GradMode::disabled);
    auto g = eval_graph(tape);
    auto tp = train::translation_loss(g, *f.model, f.batch, Reduction::mean);
    replay = train::reconstruction_loss(g, Phase::finetune, *f.model, f.vocab, f.batch, tp.enc, noise, options)
                 .sample.replay;
  }
  options.replay = &replay;
  auto report = grad_check_params(
      [&](Tape& tape) {
        auto g = eval_graph(tape);
        auto tp = train::translation_loss(g, *f.model, f.batch, Reduction::mean);
        if (rec) {
          auto l = rec->loss(g, f.batch, tp.enc, tp.tf, Reduction::mean);
          return train::hidden_objective(tp.loss, l.enc, l.dec, Real(0.5), Real(0.5)).total;
        }
        auto rp = train::reconstruction_loss(g, Phase::finetune, *f.model, f.vocab, f.batch, tp.enc, noise, options);
        return train::combine(tp.loss, rp.loss).total;
      },
      f.store, c.step);
  return report;
}

}  // namespace

bool SuiteReport::passed() const {
  if (components.empty()) return false;
  return std::all_of(components.begin(), components.end(), [](const ComponentResult& c) { return c.passed; });
}

std::string SuiteReport::format() const {
  std::size_t width = 9;
  for (const auto& c : components) width = std::max(width, c.name.size());
  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(width)) << "component" << "  max_rel_err  checked  result\n";
  for (const auto& c : components) {
    out << std::left << std::setw(static_cast<int>(width)) << c.name << "  " << std::scientific << std::setprecision(3)
        << std::setw(11) << c.max_rel_error << "  " << std::setw(7) << c.checked << "  " << (c.passed ? "pass" : "FAIL");
    if (!c.passed && !c.worst.empty()) out << " (worst " << c.worst << ")";
    out << "\n";
  }
  out << (passed() ? "gradcheck: all components pass\n" : "gradcheck: FAILED\n");
  return out.str();
}

SuiteReport run_suite(const SuiteConfig& config) {
  if (config.vocab_size < 7 || config.vocab_size > 10) {
    throw std::invalid_argument("gradcheck: vocab size must be in [7, 10]");
  }
  if (config.dim < 1 || config.dim > 8) throw std::invalid_argument("gradcheck: dimension must be in [1, 8]");
  if (config.primitive_trials == 0) throw std::invalid_argument("gradcheck: need at least one primitive trial");

  SuiteReport report;
  std::mt19937_64 rng(config.seed);
  for (const auto& prim : primitive_checks()) {
    GradCheckReport worst;
    for (std::size_t t = 0; t < config.primitive_trials; ++t) {
      auto f = prim.make(rng);
      auto point = random_tensor(prim.input, rng, prim.lo, prim.hi);
      auto r = grad_check_report(f, point, config.step);
      r.worst_name = "trial " + std::to_string(t) + " [" + std::to_string(r.worst_index) + "]";
      merge(worst, r);
    }
    report.components.push_back(finish("primitive/" + prim.name, worst, config.tolerance));
  }

  Fixture f;
  build_fixture(f, config, rng);
  report.components.push_back(finish("decode_step", check_decode_step(f, config, rng), config.tolerance));
  report.components.push_back(finish("stgs_soft_path", check_stgs(config, rng), config.tolerance));
  report.components.push_back(
      finish("objective/translation+sampled_reconstruction", check_end_to_end(f, config, rng, false), config.tolerance));
  report.components.push_back(
      finish("objective/translation+hidden_reconstruction", check_end_to_end(f, config, rng, true), config.tolerance));
  return report;
}

}  // namespace roundtrip::verify
