#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "roundtrip/gradcheck.hpp"

namespace roundtrip::verify {

/// One autodiff primitive wrapped as a scalar function of a random input.
struct PrimitiveCheck {
  std::string name;
  Shape input;
  std::function<ad::ScalarFn(std::mt19937_64&)> make;
  Real lo = -1;
  Real hi = 1;
};

/// Every differentiable primitive, each reduced to a scalar through a fixed
/// random projection.
std::vector<PrimitiveCheck> primitive_checks();

struct SuiteConfig {
  std::size_t vocab_size = 9;  // 4 specials + 2 tags + ordinary words
  std::size_t dim = 4;         // embedding, hidden and attention size
  std::uint64_t seed = 1;
  std::size_t primitive_trials = 10;
  Real step = Real(1e-5);
  Real tolerance = Real(1e-5);
};

struct ComponentResult {
  std::string name;
  Real max_rel_error = 0;
  std::size_t checked = 0;
  std::string worst;
  bool passed = false;
};

struct SuiteReport {
  std::vector<ComponentResult> components;
  bool passed() const;
  std::string format() const;
};

/// Finite-difference checks of the primitives, one decoder step, the
/// straight-through soft path and the end-to-end translation plus
/// reconstruction objective. Throws std::invalid_argument unless
/// 7 <= vocab_size <= 10 and 1 <= dim <= 8.
SuiteReport run_suite(const SuiteConfig& config);

}  // namespace roundtrip::verify
