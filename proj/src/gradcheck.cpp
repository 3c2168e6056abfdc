#include "roundtrip/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace roundtrip::ad {

namespace {

Real evaluate(const ScalarFn& f, const Tensor& point) {
  Tape tape(GradMode::disabled);
  auto y = f(tape.constant(point));
  if (y.value().size() != 1) throw ShapeError("grad_check: function must be scalar-valued");
  return y.value()[0];
}

Real relative_error(Real analytic, Real numeric) {
  return std::abs(analytic - numeric) / std::max<Real>(1, std::abs(analytic));
}

}  // namespace

GradCheckReport grad_check_report(const ScalarFn& f, const Tensor& point, Real h) {
  if (!(h > 0)) throw std::invalid_argument("grad_check: step must be positive");
  Tape tape;
  auto x = tape.variable(point);
  auto y = f(x);
  if (y.value().size() != 1) throw ShapeError("grad_check: function must be scalar-valued");
  tape.backward(y);
  Tensor analytic = x.grad().empty() ? Tensor(point.shape()) : x.grad();

  GradCheckReport report;
  Tensor probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const Real original = probe[i];
    probe[i] = original + h;
    const Real up = evaluate(f, probe);
    probe[i] = original - h;
    const Real down = evaluate(f, probe);
    probe[i] = original;
    const Real err = relative_error(analytic[i], (up - down) / (2 * h));
    if (err > report.max_rel_error || report.checked == 0) {
      report.max_rel_error = err;
      report.worst_index = i;
    }
    ++report.checked;
  }
  return report;
}

Real grad_check(const ScalarFn& f, const Tensor& point, Real h) { return grad_check_report(f, point, h).max_rel_error; }

GradCheckReport grad_check_params(const LossFn& loss, ParameterStore& store, Real h, std::size_t stride) {
  if (!(h > 0)) throw std::invalid_argument("grad_check: step must be positive");
  if (stride == 0) stride = 1;
  store.zero_grad();
  {
    Tape tape;
    auto y = loss(tape);
    tape.backward(y);
  }
  auto value_at = [&]() {
    Tape tape(GradMode::disabled);
    return loss(tape).value()[0];
  };

  GradCheckReport report;
  std::size_t flat = 0;
  for (auto& p : store) {
    for (std::size_t i = 0; i < p->value.size(); i += stride) {
      const Real original = p->value[i];
      p->value[i] = original + h;
      const Real up = value_at();
      p->value[i] = original - h;
      const Real down = value_at();
      p->value[i] = original;
      const Real err = relative_error(p->grad[i], (up - down) / (2 * h));
      if (err > report.max_rel_error || report.checked == 0) {
        report.max_rel_error = err;
        report.worst_index = flat + i;
        report.worst_name = p->name + "[" + std::to_string(i) + "]";
      }
      ++report.checked;
    }
    flat += p->value.size();
  }
  return report;
}

}  // namespace roundtrip::ad
