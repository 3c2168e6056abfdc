#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "roundtrip/gradcheck.hpp"
#include "roundtrip/ops.hpp"
#include "roundtrip/sampling.hpp"
#include "test_util.hpp"

using namespace roundtrip;
using namespace roundtrip::sampling;
using roundtrip::testing::random_sentence;
using roundtrip::testing::random_tensor;
using roundtrip::testing::toy_vocab;

namespace {

model::ModelConfig tiny_config(std::size_t vocab) {
  model::ModelConfig c;
  c.vocab_size = vocab;
  c.embed_dim = c.hidden_dim = c.attention_dim = 8;
  c.dropout = 0;
  return c;
}

Tensor softmax_value(const Tensor& logits) {
  ad::Tape t(ad::GradMode::disabled);
  return ad::softmax_rows(t.constant(logits)).value();
}

}  // namespace

TEST_CASE("gumbel noise") {
  CHECK(std::abs(gumbel_from_uniform(std::exp(Real(-1)), 3)) < 1e-15);
  CHECK(std::isfinite(gumbel_from_uniform(0, 1)));
  CHECK(std::isfinite(gumbel_from_uniform(1, 1)));

  std::mt19937_64 rng(5), untouched(5);
  auto zero = sample_gumbel({3, 4}, 0, rng);
  for (Real v : zero.values()) CHECK(v == 0);
  CHECK(rng() == untouched());
  CHECK_THROWS(sample_gumbel({2}, -1, rng));

  std::mt19937_64 mc(123);
  auto draws = sample_gumbel({1000000}, 1, mc);
  Real mean = 0;
  for (Real v : draws.values()) mean += v;
  mean /= Real(draws.size());
  CHECK(std::abs(mean - 0.5772156649) < 0.01);
}

TEST_CASE("gumbel-max step") {
  CHECK(gumbel_max_step(Tensor::row({2, 1}), Tensor({1, 2})).values()[0] == 1);
  auto pick = gumbel_max_step(Tensor::row({0, 0}), Tensor::row({0.1, 0.9}));
  CHECK(pick.values()[1] == 1);
  CHECK(gumbel_max_step(Tensor::row({1, 1, 1}), Tensor({1, 3})).values()[0] == 1);
  CHECK_THROWS_AS(gumbel_max_step(Tensor::row({NAN, 0}), Tensor({1, 2})), InvalidValueError);
  CHECK_THROWS_AS(gumbel_max_step(Tensor::row({0, 0}), Tensor({1, 3})), ShapeError);
}

TEST_CASE("gumbel-max frequencies match softmax (vocab 4, 1e5 draws)") {
  const Tensor logits = Tensor::row({1.0, -0.5, 0.3, 2.0});
  const auto probs = softmax_value(logits);
  GumbelNoiseSource noise(1, 2024);
  std::vector<Real> counts(4, 0);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    auto hot = gumbel_max_step(logits, noise.sample({1, 4}));
    counts[static_cast<std::size_t>(argmax_rows(hot)[0])] += 1;
  }
  for (std::size_t k = 0; k < 4; ++k) CHECK(std::abs(counts[k] / draws - probs[k]) < 0.01);
}

TEST_CASE("stgs forward is hard, backward is soft") {
  ad::Tape tape;
  auto logits = tape.variable(Tensor::row({1, 1}));
  auto tok = stgs_combine(logits, Tensor({1, 2}), 2);
  CHECK(tok.value.value().values()[0] == 1);
  CHECK(tok.value.value().values()[1] == 0);
  CHECK(tok.soft.value().values()[0] == doctest::Approx(0.5));
  CHECK(tok.soft.value().values()[1] == doctest::Approx(0.5));
  CHECK_THROWS(stgs_combine(logits, Tensor({1, 2}), 0));
  CHECK_THROWS(stgs_combine(logits, Tensor({1, 2}), -1));

  ad::Tape sharp;
  auto separated = sharp.variable(Tensor::row({3, 0, -2, 1}));
  auto limit = stgs_combine(separated, Tensor({1, 4}), 1e-3);
  for (std::size_t k = 0; k < 4; ++k) CHECK(std::abs(limit.soft.value()[k] - limit.hard[k]) < 1e-6);
}

TEST_CASE("property: stgs value is exactly one-hot, surrogate is a distribution") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    ad::Tape tape;
    auto logits = tape.variable(random_tensor({3, 6}, rng, -4, 4));
    std::mt19937_64 nrng(static_cast<std::uint64_t>(trial));
    auto tok = stgs_combine(logits, sample_gumbel({3, 6}, 1, nrng), 2);
    for (std::size_t r = 0; r < 3; ++r) {
      Real hot = 0, mass = 0;
      for (std::size_t k = 0; k < 6; ++k) {
        const Real v = tok.value.value().at(r, k);
        CHECK((v == 0 || v == 1));
        hot += v;
        CHECK(tok.soft.value().at(r, k) >= 0);
        mass += tok.soft.value().at(r, k);
      }
      CHECK(hot == 1);
      CHECK(std::abs(mass - 1) < 1e-9);
    }
  }
}

TEST_CASE("stgs gradient equals the soft-path gradient (finite differences)") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor point = random_tensor({1, 5}, rng, -2, 2);
    const Tensor v = random_tensor({1, 5}, rng);
    std::mt19937_64 nrng(static_cast<std::uint64_t>(100 + trial));
    const Tensor noise = sample_gumbel({1, 5}, 1, nrng);
    const Real tau = 2;

    ad::Tape tape;
    auto logits = tape.variable(point);
    auto tok = stgs_combine(logits, noise, tau);
    tape.backward(ad::dot(tok.value, tape.constant(v)));
    const Tensor analytic = logits.grad();

    auto soft_fn = [&](const Tensor& l) {
      ad::Tape t(ad::GradMode::disabled);
      return ad::dot(ad::softmax_rows(ad::scale(ad::add(t.constant(l), t.constant(noise)), 1 / tau)), t.constant(v))
          .value()[0];
    };
    const Real h = 1e-5;
    for (std::size_t k = 0; k < 5; ++k) {
      Tensor up = point, down = point;
      up[k] += h;
      down[k] -= h;
      const Real numeric = (soft_fn(up) - soft_fn(down)) / (2 * h);
      CHECK(std::abs(analytic[k] - numeric) / std::max<Real>(1, std::abs(analytic[k])) < 1e-5);
    }

    // With a frozen reference the straight-through value is smooth and can
    // be checked directly.
    const auto ids = tok.ids;
    const Tensor reference = tok.soft.value();
    const Real err = ad::grad_check(
        [&](ad::Var l) {
          auto frozen = stgs_combine(l, noise, tau, &reference, &ids);
          return ad::dot(frozen.value, l.tape().constant(v));
        },
        point);
    CHECK(err < 1e-5);
  }
}

TEST_CASE("sample_translation: determinism, tag, EOS and truncation") {
  auto vocab = toy_vocab(8);
  ad::ParameterStore store;
  model::Seq2Seq m(tiny_config(vocab.size()), store, 21);
  std::mt19937_64 rng(4);
  std::vector<std::vector<int>> srcs;
  for (int i = 0; i < 6; ++i) srcs.push_back(random_sentence(vocab, rng, 5));
  auto src = data::PaddedIds::from(srcs);

  auto run = [&](std::uint64_t seed) {
    ad::Tape tape(ad::GradMode::disabled);
    model::Graph g{tape, false, 0, nullptr};
    GumbelNoiseSource noise(0.5, seed);
    return sample_translation(g, m, vocab, src, noise, StgsConfig{}).tokens;
  };
  auto a = run(1);
  CHECK(a == run(1));
  for (std::size_t i = 0; i < srcs.size(); ++i) {
    CHECK(a[i].front() == vocab.flip_tag(srcs[i].front()));
    CHECK(a[i].size() <= StgsConfig{}.max_len_cap(srcs[i].size()));
    auto eos = std::find(a[i].begin(), a[i].end(), data::kEos);
    if (eos != a[i].end()) CHECK(eos + 1 == a[i].end());
  }

  // Forbid EOS: every row runs to the cap and is flagged.
  store.get("dec.vocab_bias").value[data::kEos] = -1000;
  ad::Tape tape;
  model::Graph g{tape, false, 0, nullptr};
  GumbelNoiseSource noise(1, 3);
  StgsConfig cfg;
  auto capped = sample_translation(g, m, vocab, src, noise, cfg);
  for (std::size_t i = 0; i < srcs.size(); ++i) {
    CHECK(capped.truncated[i]);
    CHECK(capped.tokens[i].size() == cfg.max_len_cap(srcs[i].size()));
    Real mask_len = 0;
    for (std::size_t t = 0; t < capped.length(); ++t) mask_len += capped.mask.at(i, t);
    CHECK(mask_len == capped.tokens[i].size());
  }
}

TEST_CASE("sampled values carry gradient back to the model") {
  auto vocab = toy_vocab(6);
  ad::ParameterStore store;
  model::Seq2Seq m(tiny_config(vocab.size()), store, 2);
  auto src = data::PaddedIds::from({{vocab.tag_id("en"), 5, 6, data::kEos}});
  ad::Tape tape;
  model::Graph g{tape, true, 0, nullptr};
  GumbelNoiseSource noise(1, 8);
  auto s = sample_translation(g, m, vocab, src, noise, StgsConfig{});
  REQUIRE(s.length() >= 2);
  Tensor w({1, vocab.size()});
  for (std::size_t k = 0; k < vocab.size(); ++k) w[k] = Real(k);
  tape.backward(ad::dot(s.values[1], tape.constant(w)));
  CHECK(store.grad_norm() > 0);
  CHECK(store.get("dec.vocab_bias").grad.all_finite());
}

TEST_CASE("replay reproduces the recorded sample") {
  auto vocab = toy_vocab(6);
  ad::ParameterStore store;
  model::Seq2Seq m(tiny_config(vocab.size()), store, 2);
  auto src = data::PaddedIds::from({{vocab.tag_id("en"), 5, 6, data::kEos}, {vocab.tag_id("sw"), 7, data::kEos}});
  ad::Tape tape;
  model::Graph g{tape, false, 0, nullptr};
  GumbelNoiseSource noise(1, 8);
  auto first = sample_translation(g, m, vocab, src, noise, StgsConfig{});
  GumbelNoiseSource unused(1, 999);
  SamplingOptions opts;
  opts.replay = &first.replay;
  auto again = sample_translation(g, m, vocab, src, unused, StgsConfig{}, opts);
  CHECK(again.tokens == first.tokens);
  for (std::size_t t = 0; t < first.length(); ++t) CHECK(again.values[t].value() == first.values[t].value());
}

TEST_CASE("teacher-fed sampling follows the given targets' length") {
  auto vocab = toy_vocab(6);
  ad::ParameterStore store;
  model::Seq2Seq m(tiny_config(vocab.size()), store, 2);
  auto src = data::PaddedIds::from({{vocab.tag_id("en"), 5, 6, data::kEos}});
  auto tgt = data::PaddedIds::from({{vocab.tag_id("sw"), 7, 8, 9, data::kEos}});
  ad::Tape tape;
  model::Graph g{tape, false, 0, nullptr};
  GumbelNoiseSource noise(1, 8);
  SamplingOptions opts;
  opts.teacher_targets = &tgt;
  auto s = sample_translation(g, m, vocab, src, noise, StgsConfig{}, opts);
  CHECK(s.tokens[0].size() == 5);
  CHECK(!s.truncated[0]);
}
