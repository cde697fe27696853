#include "iclmol/num/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <algorithm>
#include <limits>

namespace iclmol::num {
namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <class T>
CMapMat<T> as_mat(const Tensor<T>& t) {
  return CMapMat<T>(t.ptr(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
template <class T>
MapMat<T> as_mat(Tensor<T>& t) {
  return MapMat<T>(t.ptr(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

template <class T>
[[noreturn]] void dim_fail(const Tape<T>& tape, std::string_view op, const std::string& what) {
  throw DimensionError(std::string(op) + " (record #" + std::to_string(tape.size()) + "): " + what);
}

template <class T>
void require_rank(const Tape<T>& tape, std::string_view op, const Tensor<T>& t, std::size_t r) {
  if (t.rank() != r) {
    dim_fail(tape, op, "expected rank " + std::to_string(r) + ", got " + shape_str(t.shape()));
  }
}

template <class T>
void require_same(const Tape<T>& tape, std::string_view op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    dim_fail(tape, op, shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <class T>
Tape<T>& tape_of(Var<T> a, Var<T> b, std::string_view op) {
  if (a.tape != b.tape) throw DimensionError(std::string(op) + ": operands live on different tapes");
  return *a.tape;
}

/// Elementwise unary op with derivative expressed through input x and output y.
template <class T, class F, class D>
Var<T> unary(Var<T> a, std::string_view op, F f, D df) {
  Tape<T>& tape = *a.tape;
  const Tensor<T>& x = tape.value(a);
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return tape.record(op, std::move(y), {a}, [a, df](Tape<T>& t, std::uint32_t self) {
    if (!t.needs_grad(a)) return;
    const Tensor<T>& x = t.value(a);
    const Tensor<T>& y = t.value(self);
    const Tensor<T>& g = t.grad_buffer(self);
    Tensor<T>& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
  });
}

}  // namespace

template <std::floating_point T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& tape = tape_of(a, b, "matmul");
  const Tensor<T>& x = tape.value(a);
  const Tensor<T>& w = tape.value(b);
  require_rank(tape, "matmul", x, 2);
  require_rank(tape, "matmul", w, 2);
  if (x.cols() != w.rows()) dim_fail(tape, "matmul", shape_str(x.shape()) + " x " + shape_str(w.shape()));
  Tensor<T> y(Shape{x.rows(), w.cols()});
  as_mat(y).noalias() = as_mat(x) * as_mat(w);
  return tape.record("matmul", std::move(y), {a, b}, [a, b](Tape<T>& t, std::uint32_t self) {
    const Tensor<T>& g = t.grad_buffer(self);
    if (t.needs_grad(a)) as_mat(t.grad_buffer(a.id)).noalias() += as_mat(g) * as_mat(t.value(b)).transpose();
    if (t.needs_grad(b)) as_mat(t.grad_buffer(b.id)).noalias() += as_mat(t.value(a)).transpose() * as_mat(g);
  });
}

template <std::floating_point T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  Tape<T>& tape = tape_of(a, b, "matmul_nt");
  const Tensor<T>& x = tape.value(a);
  const Tensor<T>& w = tape.value(b);
  require_rank(tape, "matmul_nt", x, 2);
  require_rank(tape, "matmul_nt", w, 2);
  if (x.cols() != w.cols()) dim_fail(tape, "matmul_nt", shape_str(x.shape()) + " x " + shape_str(w.shape()) + "^T");
  Tensor<T> y(Shape{x.rows(), w.rows()});
  as_mat(y).noalias() = as_mat(x) * as_mat(w).transpose();
  return tape.record("matmul_nt", std::move(y), {a, b}, [a, b](Tape<T>& t, std::uint32_t self) {
    const Tensor<T>& g = t.grad_buffer(self);
    if (t.needs_grad(a)) as_mat(t.grad_buffer(a.id)).noalias() += as_mat(g) * as_mat(t.value(b));
    if (t.needs_grad(b)) as_mat(t.grad_buffer(b.id)).noalias() += as_mat(g).transpose() * as_mat(t.value(a));
  });
}

template <std::floating_point T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>& tape = tape_of(a, b, "add");
  const Tensor<T>& x = tape.value(a);
  const Tensor<T>& y = tape.value(b);
  require_same(tape, "add", x, y);
  Tensor<T> z(x.shape());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] + y[i];
  return tape.record("add", std::move(z), {a, b}, [a, b](Tape<T>& t, std::uint32_t self) {
    const Tensor<T>& g = t.grad_buffer(self);
    for (Var<T> v : {a, b}) {
      if (!t.needs_grad(v)) continue;
      Tensor<T>& gv = t.grad_buffer(v.id);
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
    }
  });
}

template <std::floating_point T>
Var<T> sub(Var<T> a, Var<T> b) {
  Tape<T>& tape = tape_of(a, b, "sub");
  const Tensor<T>& x = tape.value(a);
  const Tensor<T>& y = tape.value(b);
  require_same(tape, "sub", x, y);
  Tensor<T> z(x.shape());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] - y[i];
  return tape.record("sub", std::move(z), {a, b}, [a, b](Tape<T>& t, std::uint32_t self) {
    const Tensor<T>& g = t.grad_buffer(self);
    if (t.needs_grad(a)) {
      Tensor<T>& ga = t.grad_buffer(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.needs_grad(b)) {
      Tensor<T>& gb = t.grad_buffer(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <std::floating_point T>
Var<T> mul(Var<T> a, Var<T> b) {
  Tape<T>& tape = tape_of(a, b, "mul");
  const Tensor<T>& x = tape.value(a);
  const Tensor<T>& y = tape.value(b);
  require_same(tape, "mul", x, y);
  Tensor<T> z(x.shape());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] * y[i];
  return tape.record("mul", std::move(z), {a, b}, [a, b](Tape<T>& t, std::uint32_t self) {
    const Tensor<T>& g = t.grad_buffer(self);
    const Tensor<T>& x = t.value(a);
    const Tensor<T>& y = t.value(b);
    if (t.needs_grad(a)) {
      Tensor<T>& ga = t.grad_buffer(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    }
    if (t.needs_grad(b)) {
      Tensor<T>& gb = t.grad_buffer(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
    }
  });
}

template <std::floating_point T>
Var<T> scale(Var<T> a, T c) {
  return unary(a, "scale", [c](T x) { return c * x; }, [c](T, T) { return c; });
}

template <std::floating_point T>
Var<T> add_bias(Var<T> a, Var<T> bias) {
  Tape<T>& tape = tape_of(a, bias, "add_bias");
  const Tensor<T>& x = tape.value(a);
  const Tensor<T>& b = tape.value(bias);
  require_rank(tape, "add_bias", b, 1);
  if (x.rank() < 1 || x.rank() > 2 || x.cols() != b.size()) {
    dim_fail(tape, "add_bias", shape_str(x.shape()) + " + " + shape_str(b.shape()));
  }
  Tensor<T> y = x;
  const std::size_t n = b.size();
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < n; ++c) y[r * n + c] += b[c];
  return tape.record("add_bias", std::move(y), {a, bias}, [a, bias](Tape<T>& t, std::uint32_t self) {
    const Tensor<T>& g = t.grad_buffer(self);
    if (t.needs_grad(a)) {
      Tensor<T>& ga = t.grad_buffer(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.needs_grad(bias)) {
      Tensor<T>& gb = t.grad_buffer(bias.id);
      const std::size_t n = gb.size();
      for (std::size_t r = 0; r < g.size() / n; ++r)
        for (std::size_t c = 0; c < n; ++c) gb[c] += g[r * n + c];
    }
  });
}

template <std::floating_point T>
Var<T> exp(Var<T> a) {
  return unary(a, "exp", [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <std::floating_point T>
Var<T> tanh(Var<T> a) {
  return unary(a, "tanh", [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <std::floating_point T>
Var<T> silu(Var<T> a) {
  return unary(
      a, "silu", [](T x) { return x / (T(1) + std::exp(-x)); },
      [](T x, T) {
        const T s = T(1) / (T(1) + std::exp(-x));
        return s * (T(1) + x * (T(1) - s));
      });
}

template <std::floating_point T>
Var<T> gelu(Var<T> a) {
  constexpr T k = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T c = T(0.044715);
  return unary(
      a, "gelu",
      [](T x) { return T(0.5) * x * (T(1) + std::tanh(k * (x + c * x * x * x))); },
      [](T x, T) {
        const T u = k * (x + c * x * x * x);
        const T th = std::tanh(u);
        const T du = k * (T(1) + T(3) * c * x * x);
        return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du;
      });
}

template <std::floating_point T>
Var<T> square(Var<T> a) {
  return unary(a, "square", [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <std::floating_point T>
Var<T> abs(Var<T> a) {
  return unary(
      a, "abs", [](T x) { return std::abs(x); },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <std::floating_point T>
Var<T> softmax_rows(Var<T> a) {
  Tape<T>& tape = *a.tape;
  const Tensor<T>& x = tape.value(a);
  if (x.rank() < 1 || x.rank() > 2) dim_fail(tape, "softmax_rows", "rank " + std::to_string(x.rank()));
  Tensor<T> y(x.shape());
  const std::size_t n = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const T* in = x.ptr() + r * n;
    T* out = y.ptr() + r * n;
    T mx = *std::max_element(in, in + n);
    T s = 0;
    for (std::size_t c = 0; c < n; ++c) s += (out[c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < n; ++c) out[c] /= s;
  }
  return tape.record("softmax_rows", std::move(y), {a}, [a](Tape<T>& t, std::uint32_t self) {
    if (!t.needs_grad(a)) return;
    const Tensor<T>& y = t.value(self);
    const Tensor<T>& g = t.grad_buffer(self);
    Tensor<T>& ga = t.grad_buffer(a.id);
    const std::size_t n = y.cols();
    for (std::size_t r = 0; r < y.rows(); ++r) {
      T dot = 0;
      for (std::size_t c = 0; c < n; ++c) dot += g[r * n + c] * y[r * n + c];
      for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += y[r * n + c] * (g[r * n + c] - dot);
    }
  });
}

template <std::floating_point T>
Var<T> layer_norm_rows(Var<T> x, Var<T> gain, Var<T> bias, T eps) {
  Tape<T>& tape = *x.tape;
  const Tensor<T>& in = tape.value(x);
  const Tensor<T>& g = tape.value(gain);
  const Tensor<T>& b = tape.value(bias);
  require_rank(tape, "layer_norm_rows", in, 2);
  if (g.size() != in.cols() || b.size() != in.cols()) {
    dim_fail(tape, "layer_norm_rows",
             shape_str(in.shape()) + " with gain " + shape_str(g.shape()) + " bias " + shape_str(b.shape()));
  }
  const std::size_t m = in.rows(), n = in.cols();
  Tensor<T> xhat(in.shape());
  std::vector<T> inv_std(m);
  Tensor<T> y(in.shape());
  for (std::size_t r = 0; r < m; ++r) {
    const T* row = in.ptr() + r * n;
    T mu = 0;
    for (std::size_t c = 0; c < n; ++c) mu += row[c];
    mu /= T(n);
    T var = 0;
    for (std::size_t c = 0; c < n; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= T(n);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t c = 0; c < n; ++c) {
      const T h = (row[c] - mu) * is;
      xhat[r * n + c] = h;
      y[r * n + c] = h * g[c] + b[c];
    }
  }
  return tape.record(
      "layer_norm_rows", std::move(y), {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& t, std::uint32_t self) {
        const Tensor<T>& go = t.grad_buffer(self);
        const Tensor<T>& g = t.value(gain);
        const std::size_t n = g.size();
        const std::size_t m = go.size() / n;
        if (t.needs_grad(gain)) {
          Tensor<T>& gg = t.grad_buffer(gain.id);
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) gg[c] += go[r * n + c] * xhat[r * n + c];
        }
        if (t.needs_grad(bias)) {
          Tensor<T>& gb = t.grad_buffer(bias.id);
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) gb[c] += go[r * n + c];
        }
        if (t.needs_grad(x)) {
          Tensor<T>& gx = t.grad_buffer(x.id);
          for (std::size_t r = 0; r < m; ++r) {
            T mean_d = 0, mean_dx = 0;
            for (std::size_t c = 0; c < n; ++c) {
              const T d = go[r * n + c] * g[c];
              mean_d += d;
              mean_dx += d * xhat[r * n + c];
            }
            mean_d /= T(n);
            mean_dx /= T(n);
            for (std::size_t c = 0; c < n; ++c) {
              const T d = go[r * n + c] * g[c];
              gx[r * n + c] += inv_std[r] * (d - mean_d - xhat[r * n + c] * mean_dx);
            }
          }
        }
      });
}

template <std::floating_point T>
Var<T> sum(Var<T> a) {
  Tape<T>& tape = *a.tape;
  const Tensor<T>& x = tape.value(a);
  T s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
  return tape.record("sum", Tensor<T>::scalar(s), {a}, [a](Tape<T>& t, std::uint32_t self) {
    if (!t.needs_grad(a)) return;
    const T g = t.grad_buffer(self)[0];
    Tensor<T>& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

template <std::floating_point T>
Var<T> mean(Var<T> a) {
  const std::size_t n = a.value().size();
  if (n == 0) dim_fail(*a.tape, "mean", "empty tensor");
  return scale(sum(a), T(1) / T(n));
}

template <std::floating_point T>
Var<T> sum_rows(Var<T> a) {
  Tape<T>& tape = *a.tape;
  const Tensor<T>& x = tape.value(a);
  require_rank(tape, "sum_rows", x, 2);
  const std::size_t n = x.cols();
  Tensor<T> y(Shape{n});
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < n; ++c) y[c] += x[r * n + c];
  return tape.record("sum_rows", std::move(y), {a}, [a](Tape<T>& t, std::uint32_t self) {
    if (!t.needs_grad(a)) return;
    const Tensor<T>& g = t.grad_buffer(self);
    Tensor<T>& ga = t.grad_buffer(a.id);
    const std::size_t n = g.size();
    for (std::size_t r = 0; r < ga.size() / n; ++r)
      for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += g[c];
  });
}

template <std::floating_point T>
Var<T> gather_rows(Var<T> a, const Index& rows) {
  Tape<T>& tape = *a.tape;
  const Tensor<T>& x = tape.value(a);
  require_rank(tape, "gather_rows", x, 2);
  const std::size_t n = x.cols();
  Tensor<T> y(Shape{rows.size(), n});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= x.rows()) {
      dim_fail(tape, "gather_rows", "row " + std::to_string(rows[r]) + " out of " + shape_str(x.shape()));
    }
    std::copy_n(x.ptr() + rows[r] * n, n, y.ptr() + r * n);
  }
  return tape.record("gather_rows", std::move(y), {a}, [a, rows](Tape<T>& t, std::uint32_t self) {
    if (!t.needs_grad(a)) return;
    const Tensor<T>& g = t.grad_buffer(self);
    Tensor<T>& ga = t.grad_buffer(a.id);
    const std::size_t n = ga.cols();
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t c = 0; c < n; ++c) ga[rows[r] * n + c] += g[r * n + c];
  });
}

template <std::floating_point T>
Var<T> scatter_add_rows(Var<T> a, const Index& idx, std::size_t n_out) {
  Tape<T>& tape = *a.tape;
  const Tensor<T>& x = tape.value(a);
  require_rank(tape, "scatter_add_rows", x, 2);
  if (idx.size() != x.rows()) {
    dim_fail(tape, "scatter_add_rows",
             std::to_string(idx.size()) + " indices for " + shape_str(x.shape()));
  }
  const std::size_t n = x.cols();
  Tensor<T> y(Shape{n_out, n});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= n_out) dim_fail(tape, "scatter_add_rows", "target row " + std::to_string(idx[r]) + " >= " + std::to_string(n_out));
    for (std::size_t c = 0; c < n; ++c) y[idx[r] * n + c] += x[r * n + c];
  }
  return tape.record("scatter_add_rows", std::move(y), {a}, [a, idx](Tape<T>& t, std::uint32_t self) {
    if (!t.needs_grad(a)) return;
    const Tensor<T>& g = t.grad_buffer(self);
    Tensor<T>& ga = t.grad_buffer(a.id);
    const std::size_t n = ga.cols();
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += g[idx[r] * n + c];
  });
}

template <std::floating_point T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  Tape<T>& tape = *parts.front().tape;
  const std::size_t m = tape.value(parts.front()).rows();
  std::size_t total = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    const Tensor<T>& v = tape.value(p);
    require_rank(tape, "concat_cols", v, 2);
    if (v.rows() != m) dim_fail(tape, "concat_cols", "row count " + std::to_string(v.rows()) + " vs " + std::to_string(m));
    offsets.push_back(total);
    total += v.cols();
  }
  Tensor<T> y(Shape{m, total});
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor<T>& v = tape.value(parts[p]);
    for (std::size_t r = 0; r < m; ++r) std::copy_n(v.ptr() + r * v.cols(), v.cols(), y.ptr() + r * total + offsets[p]);
  }
  return tape.record("concat_cols", std::move(y), parts, [parts, offsets, total](Tape<T>& t, std::uint32_t self) {
    const Tensor<T>& g = t.grad_buffer(self);
    const std::size_t m = g.rows();
    for (std::size_t p = 0; p < parts.size(); ++p) {
      if (!t.needs_grad(parts[p])) continue;
      Tensor<T>& gp = t.grad_buffer(parts[p].id);
      const std::size_t w = gp.cols();
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < w; ++c) gp[r * w + c] += g[r * total + offsets[p] + c];
    }
  });
}

template <std::floating_point T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  Tape<T>& tape = *parts.front().tape;
  const std::size_t n = tape.value(parts.front()).cols();
  std::size_t total = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    const Tensor<T>& v = tape.value(p);
    require_rank(tape, "concat_rows", v, 2);
    if (v.cols() != n) dim_fail(tape, "concat_rows", "column count " + std::to_string(v.cols()) + " vs " + std::to_string(n));
    offsets.push_back(total);
    total += v.rows();
  }
  Tensor<T> y(Shape{total, n});
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor<T>& v = tape.value(parts[p]);
    std::copy_n(v.ptr(), v.size(), y.ptr() + offsets[p] * n);
  }
  return tape.record("concat_rows", std::move(y), parts, [parts, offsets](Tape<T>& t, std::uint32_t self) {
    const Tensor<T>& g = t.grad_buffer(self);
    const std::size_t n = g.cols();
    for (std::size_t p = 0; p < parts.size(); ++p) {
      if (!t.needs_grad(parts[p])) continue;
      Tensor<T>& gp = t.grad_buffer(parts[p].id);
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offsets[p] * n + i];
    }
  });
}

template <std::floating_point T>
Var<T> slice_cols(Var<T> a, std::size_t begin, std::size_t end) {
  Tape<T>& tape = *a.tape;
  const Tensor<T>& x = tape.value(a);
  require_rank(tape, "slice_cols", x, 2);
  if (begin > end || end > x.cols()) {
    dim_fail(tape, "slice_cols", "[" + std::to_string(begin) + "," + std::to_string(end) + ") of " + shape_str(x.shape()));
  }
  const std::size_t m = x.rows(), n = x.cols(), w = end - begin;
  Tensor<T> y(Shape{m, w});
  for (std::size_t r = 0; r < m; ++r) std::copy_n(x.ptr() + r * n + begin, w, y.ptr() + r * w);
  return tape.record("slice_cols", std::move(y), {a}, [a, begin, w](Tape<T>& t, std::uint32_t self) {
    if (!t.needs_grad(a)) return;
    const Tensor<T>& g = t.grad_buffer(self);
    Tensor<T>& ga = t.grad_buffer(a.id);
    const std::size_t n = ga.cols();
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < w; ++c) ga[r * n + begin + c] += g[r * w + c];
  });
}

template <std::floating_point T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tape<T>& tape = *a.tape;
  const Tensor<T>& x = tape.value(a);
  if (shape_size(shape) != x.size()) dim_fail(tape, "reshape", shape_str(x.shape()) + " -> " + shape_str(shape));
  return tape.record("reshape", x.reshaped(std::move(shape)), {a}, [a](Tape<T>& t, std::uint32_t self) {
    if (!t.needs_grad(a)) return;
    const Tensor<T>& g = t.grad_buffer(self);
    Tensor<T>& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

template <std::floating_point T>
Var<T> transpose(Var<T> a) {
  Tape<T>& tape = *a.tape;
  const Tensor<T>& x = tape.value(a);
  require_rank(tape, "transpose", x, 2);
  Tensor<T> y(Shape{x.cols(), x.rows()});
  as_mat(y) = as_mat(x).transpose();
  return tape.record("transpose", std::move(y), {a}, [a](Tape<T>& t, std::uint32_t self) {
    if (!t.needs_grad(a)) return;
    as_mat(t.grad_buffer(a.id)) += as_mat(t.grad_buffer(self)).transpose();
  });
}

template <std::floating_point T>
Var<T> causal_attention(Var<T> q, Var<T> k, Var<T> v, std::size_t n_seq, std::size_t seq_len,
                        std::size_t n_heads) {
  Tape<T>& tape = *q.tape;
  const Tensor<T>& Q = tape.value(q);
  const Tensor<T>& K = tape.value(k);
  const Tensor<T>& V = tape.value(v);
  require_rank(tape, "causal_attention", Q, 2);
  require_same(tape, "causal_attention", Q, K);
  require_same(tape, "causal_attention", Q, V);
  const std::size_t dm = Q.cols();
  if (Q.rows() != n_seq * seq_len || n_heads == 0 || dm % n_heads != 0) {
    dim_fail(tape, "causal_attention",
             shape_str(Q.shape()) + " for " + std::to_string(n_seq) + "x" + std::to_string(seq_len) +
                 " tokens, " + std::to_string(n_heads) + " heads");
  }
  const std::size_t dh = dm / n_heads;
  const T inv_scale = T(1) / std::sqrt(T(dh));
  // probs[s][h] is a lower-triangular seq_len x seq_len block, stored densely.
  const std::size_t block = seq_len * seq_len;
  std::vector<T> probs(n_seq * n_heads * block, T(0));
  Tensor<T> out(Q.shape());
  for (std::size_t s = 0; s < n_seq; ++s) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      T* P = probs.data() + (s * n_heads + h) * block;
      const std::size_t col = h * dh;
      for (std::size_t i = 0; i < seq_len; ++i) {
        const T* qi = Q.ptr() + (s * seq_len + i) * dm + col;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j <= i; ++j) {
          const T* kj = K.ptr() + (s * seq_len + j) * dm + col;
          T d = 0;
          for (std::size_t c = 0; c < dh; ++c) d += qi[c] * kj[c];
          d *= inv_scale;
          P[i * seq_len + j] = d;
          mx = std::max(mx, d);
        }
        T z = 0;
        for (std::size_t j = 0; j <= i; ++j) z += (P[i * seq_len + j] = std::exp(P[i * seq_len + j] - mx));
        for (std::size_t j = 0; j <= i; ++j) P[i * seq_len + j] /= z;
        T* oi = out.ptr() + (s * seq_len + i) * dm + col;
        for (std::size_t j = 0; j <= i; ++j) {
          const T p = P[i * seq_len + j];
          const T* vj = V.ptr() + (s * seq_len + j) * dm + col;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += p * vj[c];
        }
      }
    }
  }
  return tape.record(
      "causal_attention", std::move(out), {q, k, v},
      [q, k, v, n_seq, seq_len, n_heads, dh, inv_scale, probs = std::move(probs)](Tape<T>& t, std::uint32_t self) {
        const Tensor<T>& G = t.grad_buffer(self);
        const Tensor<T>& Q = t.value(q);
        const Tensor<T>& K = t.value(k);
        const Tensor<T>& V = t.value(v);
        const std::size_t dm = Q.cols();
        const std::size_t block = seq_len * seq_len;
        Tensor<T>* gq = t.needs_grad(q) ? &t.grad_buffer(q.id) : nullptr;
        Tensor<T>* gk = t.needs_grad(k) ? &t.grad_buffer(k.id) : nullptr;
        Tensor<T>* gv = t.needs_grad(v) ? &t.grad_buffer(v.id) : nullptr;
        std::vector<T> dp(seq_len);
        for (std::size_t s = 0; s < n_seq; ++s) {
          for (std::size_t h = 0; h < n_heads; ++h) {
            const T* P = probs.data() + (s * n_heads + h) * block;
            const std::size_t col = h * dh;
            for (std::size_t i = 0; i < seq_len; ++i) {
              const T* gi = G.ptr() + (s * seq_len + i) * dm + col;
              T dot = 0;
              for (std::size_t j = 0; j <= i; ++j) {
                const T* vj = V.ptr() + (s * seq_len + j) * dm + col;
                T d = 0;
                for (std::size_t c = 0; c < dh; ++c) d += gi[c] * vj[c];
                dp[j] = d;
                dot += d * P[i * seq_len + j];
                if (gv) {
                  T* gvj = gv->ptr() + (s * seq_len + j) * dm + col;
                  const T p = P[i * seq_len + j];
                  for (std::size_t c = 0; c < dh; ++c) gvj[c] += p * gi[c];
                }
              }
              const T* qi = Q.ptr() + (s * seq_len + i) * dm + col;
              for (std::size_t j = 0; j <= i; ++j) {
                const T ds = P[i * seq_len + j] * (dp[j] - dot) * inv_scale;
                if (ds == T(0)) continue;
                const T* kj = K.ptr() + (s * seq_len + j) * dm + col;
                if (gq) {
                  T* gqi = gq->ptr() + (s * seq_len + i) * dm + col;
                  for (std::size_t c = 0; c < dh; ++c) gqi[c] += ds * kj[c];
                }
                if (gk) {
                  T* gkj = gk->ptr() + (s * seq_len + j) * dm + col;
                  for (std::size_t c = 0; c < dh; ++c) gkj[c] += ds * qi[c];
                }
              }
            }
          }
        }
      });
}

#define ICLMOL_INSTANTIATE_OPS(T)                                                              \
  template Var<T> matmul(Var<T>, Var<T>);                                                      \
  template Var<T> matmul_nt(Var<T>, Var<T>);                                                   \
  template Var<T> add(Var<T>, Var<T>);                                                         \
  template Var<T> sub(Var<T>, Var<T>);                                                         \
  template Var<T> mul(Var<T>, Var<T>);                                                         \
  template Var<T> scale(Var<T>, T);                                                            \
  template Var<T> add_bias(Var<T>, Var<T>);                                                    \
  template Var<T> exp(Var<T>);                                                                 \
  template Var<T> tanh(Var<T>);                                                                \
  template Var<T> silu(Var<T>);                                                                \
  template Var<T> gelu(Var<T>);                                                                \
  template Var<T> square(Var<T>);                                                              \
  template Var<T> abs(Var<T>);                                                                 \
  template Var<T> softmax_rows(Var<T>);                                                        \
  template Var<T> layer_norm_rows(Var<T>, Var<T>, Var<T>, T);                                  \
  template Var<T> sum(Var<T>);                                                                 \
  template Var<T> mean(Var<T>);                                                                \
  template Var<T> sum_rows(Var<T>);                                                            \
  template Var<T> gather_rows(Var<T>, const Index&);                                           \
  template Var<T> scatter_add_rows(Var<T>, const Index&, std::size_t);                         \
  template Var<T> concat_cols(const std::vector<Var<T>>&);                                     \
  template Var<T> concat_rows(const std::vector<Var<T>>&);                                     \
  template Var<T> slice_cols(Var<T>, std::size_t, std::size_t);                                \
  template Var<T> reshape(Var<T>, Shape);                                                      \
  template Var<T> transpose(Var<T>);                                                           \
  template Var<T> causal_attention(Var<T>, Var<T>, Var<T>, std::size_t, std::size_t, std::size_t);

ICLMOL_INSTANTIATE_OPS(float)
ICLMOL_INSTANTIATE_OPS(double)

}  // namespace iclmol::num
