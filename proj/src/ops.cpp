#include "roundtrip/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace roundtrip::ad {

namespace {

thread_local Real mul_gradient_corruption = 1;

void require_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) throw InvalidValueError(std::string(op) + ": non-finite value");
}

Var emit(Tape& tape, Tensor out, std::vector<std::uint32_t> inputs, Tape::BackwardFn fn, const char* op) {
  require_finite(out, op);
  return tape.record(std::move(out), std::move(inputs), std::move(fn));
}

Tape& common_tape(Var a, Var b, const char* op) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument(std::string(op) + ": operands on different tapes");
  return a.tape();
}

void require_same_shape(Var a, Var b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

Shape matrix_shape(std::size_t rows, std::size_t cols) { return {rows, cols}; }

// Calls body(grad_out) only when the input wants a gradient.
template <class F>
void accumulate(Tape& tape, std::uint32_t input, F&& body) {
  if (tape.requires_grad(input)) body(tape.grad_buffer(input));
}

}  // namespace

void set_mul_gradient_corruption(Real factor) { mul_gradient_corruption = factor; }

// Row-major kernels in axpy form so the inner loops vectorise. Each output
// row depends only on the matching input row, independent of batch size.
void gemm_nn(const Real* __restrict a, const Real* __restrict b, Real* __restrict out, std::size_t m, std::size_t k,
             std::size_t n) {
  // Four output rows share each pass over b; per-row summation order is
  // unchanged by the blocking.
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    Real* __restrict o0 = out + i * n;
    Real* __restrict o1 = o0 + n;
    Real* __restrict o2 = o1 + n;
    Real* __restrict o3 = o2 + n;
    const Real* a0 = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const Real x0 = a0[p], x1 = a0[k + p], x2 = a0[2 * k + p], x3 = a0[3 * k + p];
      const Real* __restrict brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        const Real bj = brow[j];
        o0[j] += x0 * bj;
        o1[j] += x1 * bj;
        o2[j] += x2 * bj;
        o3[j] += x3 * bj;
      }
    }
  }
  for (; i < m; ++i) {
    Real* __restrict orow = out + i * n;
    const Real* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const Real aip = arow[p];
      const Real* __restrict brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
}

// out[k x n] += a^T[k x m] * g[m x n]
void gemm_tn(const Real* __restrict a, const Real* __restrict g, Real* __restrict out, std::size_t m, std::size_t k,
             std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const Real* __restrict g0 = g + i * n;
    const Real* __restrict g1 = g0 + n;
    const Real* __restrict g2 = g1 + n;
    const Real* __restrict g3 = g2 + n;
    const Real* a0 = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const Real x0 = a0[p], x1 = a0[k + p], x2 = a0[2 * k + p], x3 = a0[3 * k + p];
      Real* __restrict orow = out + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += x0 * g0[j] + x1 * g1[j] + x2 * g2[j] + x3 * g3[j];
    }
  }
  for (; i < m; ++i) {
    const Real* __restrict grow = g + i * n;
    const Real* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const Real aip = arow[p];
      Real* __restrict orow = out + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * grow[j];
    }
  }
}

std::vector<Real> transpose(const Real* b, std::size_t rows, std::size_t cols) {
  std::vector<Real> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = b[r * cols + c];
  return t;
}

Var matmul(Var a, Var b) {
  auto& tape = common_tape(a, b, "matmul");
  const auto& av = a.value();
  const auto& bv = b.value();
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  if (bv.rows() != k) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(av.shape()) + " * " + shape_str(bv.shape()));
  }
  Tensor out(matrix_shape(m, n));
  gemm_nn(av.data(), bv.data(), out.data(), m, k, n);
  auto ia = a.id(), ib = b.id();
  return emit(tape, std::move(out), {ia, ib}, [ia, ib, m, k, n](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const auto& av = t.value(ia);
    const auto& bv = t.value(ib);
    accumulate(t, ia, [&](Tensor& ga) {
      const auto bt = transpose(bv.data(), k, n);
      gemm_nn(g.data(), bt.data(), ga.data(), m, n, k);
    });
    accumulate(t, ib, [&](Tensor& gb) { gemm_tn(av.data(), g.data(), gb.data(), m, k, n); });
  }, "matmul");
}

Var matmul_nt(Var a, Var b) {
  auto& tape = common_tape(a, b, "matmul_nt");
  const auto& av = a.value();
  const auto& bv = b.value();
  const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
  if (bv.cols() != k) {
    throw ShapeError("matmul_nt: inner dimensions differ " + shape_str(av.shape()) + " * " +
                     shape_str(bv.shape()) + "^T");
  }
  Tensor out(matrix_shape(m, n));
  const auto bt = transpose(bv.data(), n, k);
  gemm_nn(av.data(), bt.data(), out.data(), m, k, n);
  auto ia = a.id(), ib = b.id();
  return emit(tape, std::move(out), {ia, ib}, [ia, ib, m, k, n](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const auto& av = t.value(ia);
    const auto& bv = t.value(ib);
    accumulate(t, ia, [&](Tensor& ga) { gemm_nn(g.data(), bv.data(), ga.data(), m, n, k); });
    accumulate(t, ib, [&](Tensor& gb) { gemm_tn(g.data(), av.data(), gb.data(), m, n, k); });
  }, "matmul_nt");
}

Var add(Var a, Var b) {
  auto& tape = common_tape(a, b, "add");
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  auto ia = a.id(), ib = b.id();
  return emit(tape, std::move(out), {ia, ib}, [ia, ib](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    accumulate(t, ia, [&](Tensor& ga) { for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i]; });
    accumulate(t, ib, [&](Tensor& gb) { for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i]; });
  }, "add");
}

Var sub(Var a, Var b) {
  auto& tape = common_tape(a, b, "sub");
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  auto ia = a.id(), ib = b.id();
  return emit(tape, std::move(out), {ia, ib}, [ia, ib](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    accumulate(t, ia, [&](Tensor& ga) { for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i]; });
    accumulate(t, ib, [&](Tensor& gb) { for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i]; });
  }, "sub");
}

Var mul(Var a, Var b) {
  auto& tape = common_tape(a, b, "mul");
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  auto ia = a.id(), ib = b.id();
  return emit(tape, std::move(out), {ia, ib}, [ia, ib](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const auto& av = t.value(ia);
    const auto& bv = t.value(ib);
    const Real c = mul_gradient_corruption;
    accumulate(t, ia, [&](Tensor& ga) { for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i] * bv[i]; });
    accumulate(t, ib, [&](Tensor& gb) { for (std::size_t i = 0; i < g.size(); ++i) gb[i] += c * g[i] * av[i]; });
  }, "mul");
}

Var scale(Var a, Real factor) {
  Tensor out = a.value();
  for (auto& v : out.values()) v *= factor;
  auto ia = a.id();
  return emit(a.tape(), std::move(out), {ia}, [ia, factor](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    accumulate(t, ia, [&](Tensor& ga) { for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i]; });
  }, "scale");
}

Var add_row(Var a, Var row) {
  auto& tape = common_tape(a, row, "add_row");
  const std::size_t r = a.rows(), c = a.cols();
  if (row.value().size() != c) {
    throw ShapeError("add_row: row " + shape_str(row.shape()) + " does not broadcast over " + shape_str(a.shape()));
  }
  Tensor out = a.value();
  const auto& rv = row.value();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += rv[j];
  auto ia = a.id(), ir = row.id();
  return emit(tape, std::move(out), {ia, ir}, [ia, ir, r, c](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    accumulate(t, ia, [&](Tensor& ga) { for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i]; });
    accumulate(t, ir, [&](Tensor& gr) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gr[j] += g[i * c + j];
    });
  }, "add_row");
}

Var mul_col(Var a, Var column) {
  auto& tape = common_tape(a, column, "mul_col");
  const std::size_t r = a.rows(), c = a.cols();
  if (column.value().size() != r) {
    throw ShapeError("mul_col: column " + shape_str(column.shape()) + " does not match rows of " +
                     shape_str(a.shape()));
  }
  Tensor out = a.value();
  const auto& cv = column.value();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] *= cv[i];
  auto ia = a.id(), ic = column.id();
  return emit(tape, std::move(out), {ia, ic}, [ia, ic, r, c](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const auto& av = t.value(ia);
    const auto& cv = t.value(ic);
    accumulate(t, ia, [&](Tensor& ga) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[i * c + j] * cv[i];
    });
    accumulate(t, ic, [&](Tensor& gc) {
      for (std::size_t i = 0; i < r; ++i) {
        Real s = 0;
        for (std::size_t j = 0; j < c; ++j) s += g[i * c + j] * av[i * c + j];
        gc[i] += s;
      }
    });
  }, "mul_col");
}

Var tanh(Var a) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = std::tanh(v);
  auto ia = a.id();
  return emit(a.tape(), std::move(out), {ia}, [ia](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    accumulate(t, ia, [&](Tensor& ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1 - y[i] * y[i]);
    });
  }, "tanh");
}

Var sigmoid(Var a) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = v >= 0 ? 1 / (1 + std::exp(-v)) : std::exp(v) / (1 + std::exp(v));
  auto ia = a.id();
  return emit(a.tape(), std::move(out), {ia}, [ia](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    accumulate(t, ia, [&](Tensor& ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1 - y[i]);
    });
  }, "sigmoid");
}

Var exp(Var a) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = std::exp(v);
  auto ia = a.id();
  return emit(a.tape(), std::move(out), {ia}, [ia](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    accumulate(t, ia, [&](Tensor& ga) { for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i]; });
  }, "exp");
}

Var log(Var a) {
  Tensor out = a.value();
  for (auto& v : out.values()) {
    if (!(v > 0)) throw InvalidValueError("log: argument must be positive");
    v = std::log(v);
  }
  auto ia = a.id();
  return emit(a.tape(), std::move(out), {ia}, [ia](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const auto& x = t.value(ia);
    accumulate(t, ia, [&](Tensor& ga) { for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i]; });
  }, "log");
}

Var select_rows(const Tensor& keep, Var a, Var b) {
  auto& tape = common_tape(a, b, "select_rows");
  require_same_shape(a, b, "select_rows");
  const std::size_t r = a.rows(), c = a.cols();
  if (keep.size() != r) throw ShapeError("select_rows: mask length must equal row count");
  std::vector<char> take_a(r);
  for (std::size_t i = 0; i < r; ++i) take_a[i] = keep[i] != 0;
  Tensor out = b.value();
  const auto& av = a.value();
  for (std::size_t i = 0; i < r; ++i) {
    if (take_a[i]) std::copy_n(av.data() + i * c, c, out.data() + i * c);
  }
  auto ia = a.id(), ib = b.id();
  return emit(tape, std::move(out), {ia, ib}, [ia, ib, r, c, take_a = std::move(take_a)](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    accumulate(t, ia, [&](Tensor& ga) {
      for (std::size_t i = 0; i < r; ++i)
        if (take_a[i])
          for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[i * c + j];
    });
    accumulate(t, ib, [&](Tensor& gb) {
      for (std::size_t i = 0; i < r; ++i)
        if (!take_a[i])
          for (std::size_t j = 0; j < c; ++j) gb[i * c + j] += g[i * c + j];
    });
  }, "select_rows");
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  auto& tape = parts.front().tape();
  const std::size_t r = parts.front().rows();
  std::size_t total = 0;
  std::vector<std::uint32_t> ids;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    if (&p.tape() != &tape) throw std::invalid_argument("concat_cols: operands on different tapes");
    if (p.rows() != r) throw ShapeError("concat_cols: row counts differ");
    ids.push_back(p.id());
    widths.push_back(p.cols());
    total += p.cols();
  }
  Tensor out(matrix_shape(r, total));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    for (std::size_t i = 0; i < r; ++i) std::copy_n(v.data() + i * widths[k], widths[k], out.data() + i * total + offset);
    offset += widths[k];
  }
  auto inputs = ids;
  return emit(tape, std::move(out), std::move(inputs), [ids, widths, r, total](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const std::size_t w = widths[k];
      accumulate(t, ids[k], [&](Tensor& gk) {
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < w; ++j) gk[i * w + j] += g[i * total + offset + j];
      });
      offset += w;
    }
  }, "concat_cols");
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  const std::size_t r = a.rows(), c = a.cols();
  if (count == 0 || begin + count > c) throw ShapeError("slice_cols: range outside " + shape_str(a.shape()));
  Tensor out(matrix_shape(r, count));
  const auto& av = a.value();
  for (std::size_t i = 0; i < r; ++i) std::copy_n(av.data() + i * c + begin, count, out.data() + i * count);
  auto ia = a.id();
  return emit(a.tape(), std::move(out), {ia}, [ia, r, c, begin, count](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    accumulate(t, ia, [&](Tensor& ga) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < count; ++j) ga[i * c + begin + j] += g[i * count + j];
    });
  }, "slice_cols");
}

Var lookup(Var table, std::span<const int> ids) {
  if (ids.empty()) throw ShapeError("lookup: no ids");
  const std::size_t v = table.rows(), d = table.cols();
  Tensor out(matrix_shape(ids.size(), d));
  const auto& tv = table.value();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
      throw std::out_of_range("lookup: id " + std::to_string(ids[i]) + " outside table of " + std::to_string(v) +
                              " rows");
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  auto it = table.id();
  std::vector<int> idv(ids.begin(), ids.end());
  return emit(table.tape(), std::move(out), {it}, [it, d, idv = std::move(idv)](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    accumulate(t, it, [&](Tensor& gt) {
      for (std::size_t i = 0; i < idv.size(); ++i) {
        Real* dst = gt.data() + static_cast<std::size_t>(idv[i]) * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += g[i * d + j];
      }
    });
  }, "lookup");
}

Var sum(Var a) {
  Real s = 0;
  for (Real v : a.value().values()) s += v;
  auto ia = a.id();
  return emit(a.tape(), Tensor::scalar(s), {ia}, [ia](Tape& t, std::uint32_t self) {
    const Real g = t.grad(self)[0];
    accumulate(t, ia, [&](Tensor& ga) { for (auto& x : ga.values()) x += g; });
  }, "sum");
}

Var dot(Var a, Var b) {
  auto& tape = common_tape(a, b, "dot");
  if (a.value().size() != b.value().size()) throw ShapeError("dot: sizes differ");
  const auto& av = a.value();
  const auto& bv = b.value();
  Real s = 0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  auto ia = a.id(), ib = b.id();
  return emit(tape, Tensor::scalar(s), {ia, ib}, [ia, ib](Tape& t, std::uint32_t self) {
    const Real g = t.grad(self)[0];
    const auto& av = t.value(ia);
    const auto& bv = t.value(ib);
    accumulate(t, ia, [&](Tensor& ga) { for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * bv[i]; });
    accumulate(t, ib, [&](Tensor& gb) { for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g * av[i]; });
  }, "dot");
}

namespace {

void softmax_backward(Tape& t, std::uint32_t self, std::uint32_t input, std::size_t r, std::size_t c) {
  const auto& g = t.grad(self);
  const auto& y = t.value(self);
  accumulate(t, input, [&](Tensor& gx) {
    for (std::size_t i = 0; i < r; ++i) {
      Real s = 0;
      for (std::size_t j = 0; j < c; ++j) s += g[i * c + j] * y[i * c + j];
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += y[i * c + j] * (g[i * c + j] - s);
    }
  });
}

}  // namespace

Var softmax_rows(Var logits) {
  const auto& x = logits.value();
  require_finite(x, "softmax");
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < r; ++i) {
    const Real* row = x.data() + i * c;
    Real* o = out.data() + i * c;
    const Real mx = *std::max_element(row, row + c);
    Real z = 0;
    for (std::size_t j = 0; j < c; ++j) z += (o[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) o[j] /= z;
  }
  auto ix = logits.id();
  return emit(logits.tape(), std::move(out), {ix}, [ix, r, c](Tape& t, std::uint32_t self) {
    softmax_backward(t, self, ix, r, c);
  }, "softmax");
}

Var masked_softmax_rows(Var logits, const Tensor& mask) {
  const auto& x = logits.value();
  const std::size_t r = x.rows(), c = x.cols();
  if (mask.size() != x.size()) throw ShapeError("masked_softmax: mask shape mismatch");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < r; ++i) {
    const Real* row = x.data() + i * c;
    const Real* m = mask.data() + i * c;
    Real* o = out.data() + i * c;
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t j = 0; j < c; ++j) {
      if (m[j] == 0) continue;
      if (!std::isfinite(row[j])) throw InvalidValueError("masked_softmax: non-finite value");
      mx = std::max(mx, row[j]);
    }
    if (!std::isfinite(mx)) throw InvalidValueError("masked_softmax: row has no unmasked entry");
    Real z = 0;
    for (std::size_t j = 0; j < c; ++j)
      if (m[j] != 0) z += (o[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j)
      if (m[j] != 0) o[j] /= z;
  }
  auto ix = logits.id();
  return emit(logits.tape(), std::move(out), {ix}, [ix, r, c](Tape& t, std::uint32_t self) {
    softmax_backward(t, self, ix, r, c);
  }, "masked_softmax");
}

Var log_softmax_rows(Var logits) {
  const auto& x = logits.value();
  require_finite(x, "log_softmax");
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < r; ++i) {
    const Real* row = x.data() + i * c;
    Real* o = out.data() + i * c;
    const Real mx = *std::max_element(row, row + c);
    Real z = 0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const Real lse = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) o[j] = row[j] - lse;
  }
  auto ix = logits.id();
  return emit(logits.tape(), std::move(out), {ix}, [ix, r, c](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    accumulate(t, ix, [&](Tensor& gx) {
      for (std::size_t i = 0; i < r; ++i) {
        Real s = 0;
        for (std::size_t j = 0; j < c; ++j) s += g[i * c + j];
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[i * c + j] - std::exp(y[i * c + j]) * s;
      }
    });
  }, "log_softmax");
}

Var layer_norm(Var x, Var gain, Var bias, Real epsilon) {
  const auto& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (gain.value().size() != c || bias.value().size() != c) {
    throw ShapeError("layer_norm: gain/bias must have " + std::to_string(c) + " entries");
  }
  if (epsilon < 0) throw std::invalid_argument("layer_norm: epsilon must be non-negative");
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  Tensor out(xv.shape());
  std::vector<Real> normed(xv.size());
  std::vector<Real> inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    const Real* row = xv.data() + i * c;
    Real mean = 0;
    for (std::size_t j = 0; j < c; ++j) mean += row[j];
    mean /= static_cast<Real>(c);
    Real var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<Real>(c);
    const Real denom = var + epsilon;
    // Zero variance with zero epsilon: the centred row is exactly zero.
    inv_std[i] = denom > 0 ? 1 / std::sqrt(denom) : 0;
    for (std::size_t j = 0; j < c; ++j) {
      normed[i * c + j] = (row[j] - mean) * inv_std[i];
      out[i * c + j] = gv[j] * normed[i * c + j] + bv[j];
    }
  }
  auto ix = x.id(), ig = gain.id(), ib = bias.id();
  return emit(x.tape(), std::move(out), {ix, ig, ib},
              [ix, ig, ib, r, c, normed = std::move(normed), inv_std = std::move(inv_std)](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const auto& gv = t.value(ig);
    accumulate(t, ix, [&](Tensor& gx) {
      for (std::size_t i = 0; i < r; ++i) {
        Real mean_d = 0, mean_dn = 0;
        for (std::size_t j = 0; j < c; ++j) {
          const Real d = g[i * c + j] * gv[j];
          mean_d += d;
          mean_dn += d * normed[i * c + j];
        }
        mean_d /= static_cast<Real>(c);
        mean_dn /= static_cast<Real>(c);
        for (std::size_t j = 0; j < c; ++j) {
          const Real d = g[i * c + j] * gv[j];
          gx[i * c + j] += inv_std[i] * (d - mean_d - normed[i * c + j] * mean_dn);
        }
      }
    });
    accumulate(t, ig, [&](Tensor& gg) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gg[j] += g[i * c + j] * normed[i * c + j];
    });
    accumulate(t, ib, [&](Tensor& gb) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
    });
  }, "layer_norm");
}

Var cross_entropy(Var logits, std::span<const int> targets, std::span<const Real> weights) {
  const auto& x = logits.value();
  const std::size_t r = x.rows(), c = x.cols();
  if (targets.size() != r || weights.size() != r) throw ShapeError("cross_entropy: one target and weight per row");
  std::vector<Real> probs(x.size(), 0);
  Real loss = 0;
  for (std::size_t i = 0; i < r; ++i) {
    if (weights[i] == 0) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= c) {
      throw std::out_of_range("cross_entropy: target id " + std::to_string(targets[i]) + " out of range");
    }
    const Real* row = x.data() + i * c;
    for (std::size_t j = 0; j < c; ++j) {
      if (!std::isfinite(row[j])) throw InvalidValueError("cross_entropy: non-finite logit");
    }
    const Real mx = *std::max_element(row, row + c);
    Real z = 0;
    for (std::size_t j = 0; j < c; ++j) z += (probs[i * c + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= z;
    const Real lse = mx + std::log(z);
    loss += weights[i] * (lse - row[targets[i]]);
  }
  auto ix = logits.id();
  std::vector<int> tv(targets.begin(), targets.end());
  std::vector<Real> wv(weights.begin(), weights.end());
  return emit(logits.tape(), Tensor::scalar(loss), {ix},
              [ix, r, c, probs = std::move(probs), tv = std::move(tv), wv = std::move(wv)](Tape& t, std::uint32_t self) {
    const Real g = t.grad(self)[0];
    accumulate(t, ix, [&](Tensor& gx) {
      for (std::size_t i = 0; i < r; ++i) {
        if (wv[i] == 0) continue;
        const Real s = g * wv[i];
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += s * probs[i * c + j];
        gx[i * c + static_cast<std::size_t>(tv[i])] -= s;
      }
    });
  }, "cross_entropy");
}

Var mlp_attention_scores(Var query, std::span<const Var> keys, Var v) {
  if (keys.empty()) throw ShapeError("mlp_attention_scores: no keys");
  const std::size_t b = query.rows(), a = query.cols(), s = keys.size();
  if (v.value().size() != a) throw ShapeError("mlp_attention_scores: v must have one entry per attention unit");
  std::vector<std::uint32_t> inputs{query.id(), v.id()};
  for (const auto& k : keys) {
    if (k.shape() != query.shape()) throw ShapeError("mlp_attention_scores: key shape must match query");
    inputs.push_back(k.id());
  }
  const auto& qv = query.value();
  const auto& vv = v.value();
  std::vector<Real> act(s * b * a);
  Tensor out(matrix_shape(b, s));
  for (std::size_t k = 0; k < s; ++k) {
    const auto& kv = keys[k].value();
    for (std::size_t i = 0; i < b; ++i) {
      Real score = 0;
      Real* h = act.data() + (k * b + i) * a;
      for (std::size_t j = 0; j < a; ++j) {
        h[j] = std::tanh(qv[i * a + j] + kv[i * a + j]);
        score += h[j] * vv[j];
      }
      out[i * s + k] = score;
    }
  }
  return emit(query.tape(), std::move(out), inputs, [inputs, b, a, s, act = std::move(act)](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const auto& vv = t.value(inputs[1]);
    const bool want_q = t.requires_grad(inputs[0]);
    const bool want_v = t.requires_grad(inputs[1]);
    Tensor* gq = want_q ? &t.grad_buffer(inputs[0]) : nullptr;
    Tensor* gvp = want_v ? &t.grad_buffer(inputs[1]) : nullptr;
    for (std::size_t k = 0; k < s; ++k) {
      const auto key_id = inputs[2 + k];
      Tensor* gk = t.requires_grad(key_id) ? &t.grad_buffer(key_id) : nullptr;
      for (std::size_t i = 0; i < b; ++i) {
        const Real gs = g[i * s + k];
        const Real* h = act.data() + (k * b + i) * a;
        for (std::size_t j = 0; j < a; ++j) {
          const Real pre = gs * vv[j] * (1 - h[j] * h[j]);
          if (gq) (*gq)[i * a + j] += pre;
          if (gk) (*gk)[i * a + j] += pre;
          if (gvp) (*gvp)[j] += gs * h[j];
        }
      }
    }
  }, "mlp_attention_scores");
}

Var weighted_sum(Var weights, std::span<const Var> memory) {
  const std::size_t b = weights.rows(), s = weights.cols();
  if (memory.size() != s) throw ShapeError("weighted_sum: one memory entry per weight column");
  const std::size_t d = memory.front().cols();
  std::vector<std::uint32_t> inputs{weights.id()};
  for (const auto& m : memory) {
    if (m.rows() != b || m.cols() != d) throw ShapeError("weighted_sum: memory shapes differ");
    inputs.push_back(m.id());
  }
  const auto& wv = weights.value();
  Tensor out(matrix_shape(b, d));
  for (std::size_t k = 0; k < s; ++k) {
    const auto& mv = memory[k].value();
    for (std::size_t i = 0; i < b; ++i) {
      const Real w = wv[i * s + k];
      for (std::size_t j = 0; j < d; ++j) out[i * d + j] += w * mv[i * d + j];
    }
  }
  return emit(weights.tape(), std::move(out), inputs, [inputs, b, s, d](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const auto& wv = t.value(inputs[0]);
    Tensor* gw = t.requires_grad(inputs[0]) ? &t.grad_buffer(inputs[0]) : nullptr;
    for (std::size_t k = 0; k < s; ++k) {
      const auto mid = inputs[1 + k];
      const auto& mv = t.value(mid);
      Tensor* gm = t.requires_grad(mid) ? &t.grad_buffer(mid) : nullptr;
      for (std::size_t i = 0; i < b; ++i) {
        const Real w = wv[i * s + k];
        Real acc = 0;
        for (std::size_t j = 0; j < d; ++j) {
          acc += g[i * d + j] * mv[i * d + j];
          if (gm) (*gm)[i * d + j] += w * g[i * d + j];
        }
        if (gw) (*gw)[i * s + k] += acc;
      }
    }
  }, "weighted_sum");
}

Var dropout(Var x, Real p, std::mt19937_64& rng) {
  if (p < 0 || p >= 1) throw std::invalid_argument("dropout: probability must be in [0, 1)");
  if (p == 0) return x;
  std::bernoulli_distribution keep(1 - p);
  const Real kept = 1 / (1 - p);
  Tensor mask(x.shape());
  for (auto& m : mask.values()) m = keep(rng) ? kept : Real(0);
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  auto ix = x.id();
  return emit(x.tape(), std::move(out), {ix}, [ix, mask = std::move(mask)](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    accumulate(t, ix, [&](Tensor& gx) { for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i]; });
  }, "dropout");
}

Var straight_through(const Tensor& hard, Var soft, const Tensor& reference) {
  if (hard.shape() != soft.shape() || reference.shape() != soft.shape()) {
    throw ShapeError("straight_through: hard/soft/reference shapes differ");
  }
  Tensor out = hard;
  const auto& sv = soft.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += sv[i] - reference[i];
  auto is = soft.id();
  return emit(soft.tape(), std::move(out), {is}, [is](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    accumulate(t, is, [&](Tensor& gs) { for (std::size_t i = 0; i < g.size(); ++i) gs[i] += g[i]; });
  }, "straight_through");
}

Var straight_through(const Tensor& hard, Var soft) { return straight_through(hard, soft, soft.value()); }

Var stop_gradient(Var a) { return a.tape().constant(a.value()); }

}  // namespace roundtrip::ad
