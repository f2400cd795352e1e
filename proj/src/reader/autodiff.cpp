#include "conflictqa/reader/autodiff.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>

namespace conflictqa::reader {

Parameter::Parameter(std::string n, Matrix v, bool d)
    : name(std::move(n)),
      value(std::move(v)),
      grad(value.rows, value.cols),
      adam_m(value.rows, value.cols),
      adam_v(value.rows, value.cols),
      decay(d) {}

void Parameter::zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }

Var Tape::push(Matrix value, std::function<void(Tape&, std::size_t)> backward) {
  nodes_.push_back(Node{std::move(value), Matrix(), std::move(backward)});
  return Var{nodes_.size() - 1};
}

Matrix& Tape::grad_ref(Var v) {
  auto& n = nodes_[v.id];
  if (n.grad.size() != n.value.size()) n.grad = Matrix(n.value.rows, n.value.cols);
  return n.grad;
}

Var Tape::constant(Matrix value) { return push(std::move(value), nullptr); }

Var Tape::param(Parameter& p) {
  return push(p.value, [&p](Tape& t, std::size_t self) {
    const auto& g = t.nodes_[self].grad;
    for (std::size_t i = 0; i < g.size(); ++i) p.grad.data[i] += g.data[i];
  });
}

Var Tape::embed(Parameter& table, const std::vector<int>& ids) {
  const std::size_t e = table.value.cols;
  Matrix out(ids.size(), e);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const auto id = static_cast<std::size_t>(ids[r]);
    if (id >= table.value.rows) throw std::out_of_range("embedding id out of range");
    for (std::size_t c = 0; c < e; ++c) out(r, c) = table.value(id, c);
  }
  return push(std::move(out), [&table, ids](Tape& t, std::size_t self) {
    const auto& g = t.nodes_[self].grad;
    const std::size_t e = table.value.cols;
    for (std::size_t r = 0; r < ids.size(); ++r)
      for (std::size_t c = 0; c < e; ++c) table.grad(static_cast<std::size_t>(ids[r]), c) += g(r, c);
  });
}

void Tape::backward(Var out, double scale) {
  auto& root = nodes_[out.id];
  if (root.value.size() != 1) throw std::logic_error("backward needs a scalar output");
  grad_ref(out).data[0] += scale;
  for (std::size_t i = out.id + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (n.backward && n.grad.size() == n.value.size()) n.backward(*this, i);
  }
}

namespace {

const Matrix& gself(Tape& t, std::size_t self) { return t.grad(Var{self}); }

}  // namespace

Var add(Tape& t, Var a, Var b) {
  const auto& x = t.value(a);
  const auto& y = t.value(b);
  if (x.rows != y.rows || x.cols != y.cols) throw std::invalid_argument("add: shape mismatch");
  Matrix out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += y.data[i];
  return t.push(std::move(out), [a, b](Tape& t, std::size_t self) {
    const auto& g = gself(t, self);
    auto& ga = t.grad_ref(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
    auto& gb = t.grad_ref(b);
    for (std::size_t i = 0; i < g.size(); ++i) gb.data[i] += g.data[i];
  });
}

Var add_row(Tape& t, Var a, Var row) {
  const auto& x = t.value(a);
  const auto& r = t.value(row);
  if (r.rows != 1 || r.cols != x.cols) throw std::invalid_argument("add_row: shape mismatch");
  Matrix out = x;
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < x.cols; ++j) out(i, j) += r(0, j);
  return t.push(std::move(out), [a, row](Tape& t, std::size_t self) {
    const auto& g = gself(t, self);
    auto& ga = t.grad_ref(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
    auto& gr = t.grad_ref(row);
    for (std::size_t i = 0; i < g.rows; ++i)
      for (std::size_t j = 0; j < g.cols; ++j) gr(0, j) += g(i, j);
  });
}

namespace {

Matrix transpose(const Matrix& x) {
  Matrix out(x.cols, x.rows);
  for (std::size_t r = 0; r < x.rows; ++r)
    for (std::size_t c = 0; c < x.cols; ++c) out(c, r) = x(r, c);
  return out;
}

// out += a * b, written as row axpys so the inner loop vectorizes.
void gemm_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  const std::size_t n = b.cols;
  for (std::size_t i = 0; i < a.rows; ++i) {
    double* o = &out.data[i * n];
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double v = a.data[i * a.cols + k];
      if (v == 0.0) continue;
      const double* br = &b.data[k * n];
      for (std::size_t j = 0; j < n; ++j) o[j] += v * br[j];
    }
  }
}

}  // namespace

Var matmul(Tape& t, Var a, Var b) {
  const auto& x = t.value(a);
  const auto& y = t.value(b);
  if (x.cols != y.rows) throw std::invalid_argument("matmul: shape mismatch");
  Matrix out(x.rows, y.cols);
  gemm_acc(x, y, out);
  return t.push(std::move(out), [a, b](Tape& t, std::size_t self) {
    const auto& g = gself(t, self);
    gemm_acc(g, transpose(t.value(b)), t.grad_ref(a));
    gemm_acc(transpose(t.value(a)), g, t.grad_ref(b));
  });
}

Var matmul_bt(Tape& t, Var a, Var b) {
  const auto& x = t.value(a);
  const auto& y = t.value(b);
  if (x.cols != y.cols) throw std::invalid_argument("matmul_bt: shape mismatch");
  Matrix out(x.rows, y.rows);
  gemm_acc(x, transpose(y), out);
  return t.push(std::move(out), [a, b](Tape& t, std::size_t self) {
    const auto& g = gself(t, self);
    gemm_acc(g, t.value(b), t.grad_ref(a));
    gemm_acc(transpose(g), t.value(a), t.grad_ref(b));
  });
}

Var scale(Tape& t, Var a, double s) {
  Matrix out = t.value(a);
  for (auto& v : out.data) v *= s;
  return t.push(std::move(out), [a, s](Tape& t, std::size_t self) {
    const auto& g = gself(t, self);
    auto& ga = t.grad_ref(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += s * g.data[i];
  });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var gelu(Tape& t, Var a) {
  const auto& x = t.value(a);
  Matrix out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x.data[i];
    out.data[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  }
  return t.push(std::move(out), [a](Tape& t, std::size_t self) {
    const auto& g = gself(t, self);
    const auto& x = t.value(a);
    auto& ga = t.grad_ref(a);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double v = x.data[i];
      const double th = std::tanh(kGeluC * (v + kGeluA * v * v * v));
      const double d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      ga.data[i] += g.data[i] * d;
    }
  });
}

Var layer_norm(Tape& t, Var a, Var gain, Var bias, double eps) {
  const auto& x = t.value(a);
  const auto& gn = t.value(gain);
  const auto& bs = t.value(bias);
  const std::size_t n = x.cols;
  Matrix out(x.rows, n), xhat(x.rows, n);
  std::vector<double> inv_std(x.rows);
  for (std::size_t r = 0; r < x.rows; ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < n; ++c) mean += x(r, c);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (x(r, c) - mean) * (x(r, c) - mean);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      xhat(r, c) = (x(r, c) - mean) * inv_std[r];
      out(r, c) = xhat(r, c) * gn(0, c) + bs(0, c);
    }
  }
  return t.push(std::move(out), [a, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                                    Tape& t, std::size_t self) {
    const auto& g = gself(t, self);
    const auto& gn = t.value(gain);
    const std::size_t n = g.cols;
    auto& gg = t.grad_ref(gain);
    auto& gb = t.grad_ref(bias);
    auto& ga = t.grad_ref(a);
    std::vector<double> dxhat(n);
    for (std::size_t r = 0; r < g.rows; ++r) {
      double sum_d = 0.0, sum_dx = 0.0;
      for (std::size_t c = 0; c < n; ++c) {
        gg(0, c) += g(r, c) * xhat(r, c);
        gb(0, c) += g(r, c);
        dxhat[c] = g(r, c) * gn(0, c);
        sum_d += dxhat[c];
        sum_dx += dxhat[c] * xhat(r, c);
      }
      const double inv_n = 1.0 / static_cast<double>(n);
      for (std::size_t c = 0; c < n; ++c)
        ga(r, c) += inv_std[r] * (dxhat[c] - inv_n * sum_d - xhat(r, c) * inv_n * sum_dx);
    }
  });
}

Var softmax_rows(Tape& t, Var a, const std::vector<char>& allowed) {
  const auto& x = t.value(a);
  if (allowed.size() != x.size()) throw std::invalid_argument("softmax_rows: mask size mismatch");
  Matrix out(x.rows, x.cols);
  for (std::size_t r = 0; r < x.rows; ++r) {
    double mx = -INFINITY;
    bool any = false;
    for (std::size_t c = 0; c < x.cols; ++c) {
      if (!allowed[r * x.cols + c]) continue;
      any = true;
      // NaN inputs propagate to the output instead of being skipped by std::max.
      mx = std::isnan(x(r, c)) ? x(r, c) : std::max(mx, x(r, c));
    }
    if (!any) throw std::invalid_argument("softmax_rows: fully masked row");
    double z = 0.0;
    for (std::size_t c = 0; c < x.cols; ++c) {
      const double e = allowed[r * x.cols + c] ? std::exp(x(r, c) - mx) : 0.0;
      out(r, c) = e;
      z += e;
    }
    for (std::size_t c = 0; c < x.cols; ++c) out(r, c) /= z;
  }
  return t.push(std::move(out), [a](Tape& t, std::size_t self) {
    const auto& g = gself(t, self);
    const auto& y = t.value(Var{self});
    auto& ga = t.grad_ref(a);
    for (std::size_t r = 0; r < y.rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols; ++c) dot += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols; ++c) ga(r, c) += y(r, c) * (g(r, c) - dot);
    }
  });
}

Var concat_rows(Tape& t, const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  const std::size_t cols = t.value(parts.front()).cols;
  std::size_t rows = 0;
  for (auto p : parts) {
    if (t.value(p).cols != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += t.value(p).rows;
  }
  Matrix out(rows, cols);
  std::size_t offset = 0;
  for (auto p : parts) {
    const auto& v = t.value(p);
    std::copy(v.data.begin(), v.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(offset * cols));
    offset += v.rows;
  }
  return t.push(std::move(out), [parts](Tape& t, std::size_t self) {
    const auto& g = gself(t, self);
    std::size_t offset = 0;
    for (auto p : parts) {
      auto& gp = t.grad_ref(p);
      for (std::size_t i = 0; i < gp.size(); ++i) gp.data[i] += g.data[offset * g.cols + i];
      offset += gp.rows;
    }
  });
}

Var slice_cols(Tape& t, Var a, std::size_t begin, std::size_t count) {
  const auto& x = t.value(a);
  if (begin + count > x.cols) throw std::invalid_argument("slice_cols: out of range");
  Matrix out(x.rows, count);
  for (std::size_t r = 0; r < x.rows; ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = x(r, begin + c);
  return t.push(std::move(out), [a, begin](Tape& t, std::size_t self) {
    const auto& g = gself(t, self);
    auto& ga = t.grad_ref(a);
    for (std::size_t r = 0; r < g.rows; ++r)
      for (std::size_t c = 0; c < g.cols; ++c) ga(r, begin + c) += g(r, c);
  });
}

Var concat_cols(Tape& t, const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  const std::size_t rows = t.value(parts.front()).rows;
  std::size_t cols = 0;
  for (auto p : parts) {
    if (t.value(p).rows != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += t.value(p).cols;
  }
  Matrix out(rows, cols);
  std::size_t offset = 0;
  for (auto p : parts) {
    const auto& v = t.value(p);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < v.cols; ++c) out(r, offset + c) = v(r, c);
    offset += v.cols;
  }
  return t.push(std::move(out), [parts](Tape& t, std::size_t self) {
    const auto& g = gself(t, self);
    std::size_t offset = 0;
    for (auto p : parts) {
      auto& gp = t.grad_ref(p);
      for (std::size_t r = 0; r < gp.rows; ++r)
        for (std::size_t c = 0; c < gp.cols; ++c) gp(r, c) += g(r, offset + c);
      offset += gp.cols;
    }
  });
}

Var mean_rows(Tape& t, Var a) {
  const auto& x = t.value(a);
  Matrix out(1, x.cols);
  for (std::size_t r = 0; r < x.rows; ++r)
    for (std::size_t c = 0; c < x.cols; ++c) out(0, c) += x(r, c);
  for (auto& v : out.data) v /= static_cast<double>(x.rows);
  return t.push(std::move(out), [a](Tape& t, std::size_t self) {
    const auto& g = gself(t, self);
    auto& ga = t.grad_ref(a);
    const double inv = 1.0 / static_cast<double>(ga.rows);
    for (std::size_t r = 0; r < ga.rows; ++r)
      for (std::size_t c = 0; c < ga.cols; ++c) ga(r, c) += g(0, c) * inv;
  });
}

Var sigmoid(Tape& t, Var a) {
  Matrix out = t.value(a);
  for (auto& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
  return t.push(std::move(out), [a](Tape& t, std::size_t self) {
    const auto& g = gself(t, self);
    const auto& y = t.value(Var{self});
    auto& ga = t.grad_ref(a);
    for (std::size_t i = 0; i < y.size(); ++i) ga.data[i] += g.data[i] * y.data[i] * (1.0 - y.data[i]);
  });
}

}  // namespace conflictqa::reader
