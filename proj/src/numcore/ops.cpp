#include "adyolo/numcore/ops.hpp"

#include <algorithm>
#include <cmath>

#include "adyolo/numcore/kernels.hpp"

namespace adyolo::ops {

namespace {

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw std::logic_error("op on an unbound Var");
  return *a.tape();
}

void same_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw std::logic_error("operands live on different tapes");
}

void same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

template <typename Fwd, typename Deriv>
Var unary(const char* name, const Var& a, Fwd fwd, Deriv deriv) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
  Tensor y_copy = y;
  return tape_of(a).record(
      std::move(y), {a},
      [&x, y = std::move(y_copy), deriv](const Tensor& g, std::span<Tensor* const> slots) {
        Tensor& ga = *slots[0];
        for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g[i] * deriv(x[i], y[i]);
      },
      name);
}

int last_extent(const Var& a, const char* op) {
  if (a.value().rank() == 0) throw ShapeError(std::string(op) + ": needs rank >= 1");
  return a.shape().back();
}

}  // namespace

Var add(const Var& a, const Var& b) {
  same_tape(a, b);
  same_shape("add", a, b);
  const Tensor& x = a.value();
  const Tensor& z = b.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] + z[i];
  return tape_of(a).record(
      std::move(y), {a, b},
      [](const Tensor& g, std::span<Tensor* const> s) {
        for (Tensor* t : s)
          if (t)
            for (std::size_t i = 0; i < g.size(); ++i) (*t)[i] += g[i];
      },
      "add");
}

Var sub(const Var& a, const Var& b) {
  same_tape(a, b);
  same_shape("sub", a, b);
  const Tensor& x = a.value();
  const Tensor& z = b.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] - z[i];
  return tape_of(a).record(
      std::move(y), {a, b},
      [](const Tensor& g, std::span<Tensor* const> s) {
        if (s[0])
          for (std::size_t i = 0; i < g.size(); ++i) (*s[0])[i] += g[i];
        if (s[1])
          for (std::size_t i = 0; i < g.size(); ++i) (*s[1])[i] -= g[i];
      },
      "sub");
}

Var mul(const Var& a, const Var& b) {
  same_tape(a, b);
  same_shape("mul", a, b);
  const Tensor& x = a.value();
  const Tensor& z = b.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * z[i];
  return tape_of(a).record(
      std::move(y), {a, b},
      [&x, &z](const Tensor& g, std::span<Tensor* const> s) {
        if (s[0])
          for (std::size_t i = 0; i < g.size(); ++i) (*s[0])[i] += g[i] * z[i];
        if (s[1])
          for (std::size_t i = 0; i < g.size(); ++i) (*s[1])[i] += g[i] * x[i];
      },
      "mul");
}

Var scale(const Var& a, Real factor) {
  return unary("scale", a, [factor](Real v) { return v * factor; }, [factor](Real, Real) { return factor; });
}

Var add_scalar(const Var& a, Real offset) {
  return unary("add_scalar", a, [offset](Real v) { return v + offset; }, [](Real, Real) { return Real{1}; });
}

Var square(const Var& a) {
  return unary("square", a, [](Real v) { return v * v; }, [](Real v, Real) { return 2 * v; });
}

Var sqrt(const Var& a) {
  return unary(
      "sqrt", a,
      [](Real v) {
        if (v < 0) throw NumericalError("sqrt of negative value");
        return std::sqrt(v);
      },
      [](Real, Real y) { return y > 0 ? Real{0.5} / y : Real{0}; });
}

Var exp(const Var& a) {
  return unary("exp", a, [](Real v) { return std::exp(v); }, [](Real, Real y) { return y; });
}

Var log(const Var& a) {
  return unary("log", a, [](Real v) { return std::log(v); }, [](Real v, Real) { return 1 / v; });
}

Var sigmoid(const Var& a) {
  return unary(
      "sigmoid", a, [](Real v) { return 1 / (1 + std::exp(-v)); }, [](Real, Real y) { return y * (1 - y); });
}

Var leaky_relu(const Var& a, Real slope) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0 ? x[i] : slope * x[i];
  return tape_of(a).record(
      std::move(y), {a},
      [&x, slope](const Tensor& g, std::span<Tensor* const> s) {
        Tensor& ga = *s[0];
        for (std::size_t i = 0; i < x.size(); ++i) ga[i] += x[i] > 0 ? g[i] : slope * g[i];
      },
      "leaky_relu");
}

Var sum(const Var& a) {
  const Tensor& x = a.value();
  Real total = 0;
  for (Real v : x.values()) total += v;
  return tape_of(a).record(
      Tensor::scalar(total), {a},
      [](const Tensor& g, std::span<Tensor* const> s) {
        const Real gv = g[0];
        for (Real& v : s[0]->values()) v += gv;
      },
      "sum");
}

Var mean(const Var& a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), Real{1} / static_cast<Real>(n));
}

Var max_all(const Var& a) {
  const Tensor& x = a.value();
  if (x.size() == 0) throw ShapeError("max_all of empty tensor");
  std::size_t best = 0;
  for (std::size_t i = 1; i < x.size(); ++i)
    if (x[i] > x[best]) best = i;
  return tape_of(a).record(
      Tensor::scalar(x[best]), {a},
      [best](const Tensor& g, std::span<Tensor* const> s) { (*s[0])[best] += g[0]; }, "max_all");
}

Var min_last(const Var& a) {
  const int k = last_extent(a, "min_last");
  if (k == 0) throw ShapeError("min_last over empty axis");
  const Tensor& x = a.value();
  const std::size_t rows = x.size() / static_cast<std::size_t>(k);
  Shape out_shape = x.shape();
  out_shape.back() = 1;
  Tensor y(out_shape);
  std::vector<std::size_t> arg(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* row = x.data() + r * static_cast<std::size_t>(k);
    std::size_t best = 0;
    for (int j = 1; j < k; ++j)
      if (row[j] < row[best]) best = static_cast<std::size_t>(j);
    arg[r] = r * static_cast<std::size_t>(k) + best;
    y[r] = row[best];
  }
  return tape_of(a).record(
      std::move(y), {a},
      [arg = std::move(arg)](const Tensor& g, std::span<Tensor* const> s) {
        for (std::size_t r = 0; r < arg.size(); ++r) (*s[0])[arg[r]] += g[r];
      },
      "min_last");
}

Var softmax(const Var& a) {
  const int k = last_extent(a, "softmax");
  const Tensor& x = a.value();
  const std::size_t rows = k ? x.size() / static_cast<std::size_t>(k) : 0;
  Tensor y(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* in = x.data() + r * k;
    Real* out = y.data() + r * k;
    const Real m = *std::max_element(in, in + k);
    Real z = 0;
    for (int j = 0; j < k; ++j) z += (out[j] = std::exp(in[j] - m));
    for (int j = 0; j < k; ++j) out[j] /= z;
  }
  Tensor y_copy = y;
  return tape_of(a).record(
      std::move(y), {a},
      [y = std::move(y_copy), k, rows](const Tensor& g, std::span<Tensor* const> s) {
        for (std::size_t r = 0; r < rows; ++r) {
          const Real* p = y.data() + r * k;
          const Real* gr = g.data() + r * k;
          Real dot = 0;
          for (int j = 0; j < k; ++j) dot += gr[j] * p[j];
          Real* ga = s[0]->data() + r * k;
          for (int j = 0; j < k; ++j) ga[j] += p[j] * (gr[j] - dot);
        }
      },
      "softmax");
}

Var log_softmax(const Var& a) {
  const int k = last_extent(a, "log_softmax");
  const Tensor& x = a.value();
  const std::size_t rows = k ? x.size() / static_cast<std::size_t>(k) : 0;
  Tensor y(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* in = x.data() + r * k;
    Real* out = y.data() + r * k;
    const Real m = *std::max_element(in, in + k);
    Real z = 0;
    for (int j = 0; j < k; ++j) z += std::exp(in[j] - m);
    const Real lse = m + std::log(z);
    for (int j = 0; j < k; ++j) out[j] = in[j] - lse;
  }
  Tensor y_copy = y;
  return tape_of(a).record(
      std::move(y), {a},
      [y = std::move(y_copy), k, rows](const Tensor& g, std::span<Tensor* const> s) {
        for (std::size_t r = 0; r < rows; ++r) {
          const Real* ly = y.data() + r * k;
          const Real* gr = g.data() + r * k;
          Real gsum = 0;
          for (int j = 0; j < k; ++j) gsum += gr[j];
          Real* ga = s[0]->data() + r * k;
          for (int j = 0; j < k; ++j) ga[j] += gr[j] - std::exp(ly[j]) * gsum;
        }
      },
      "log_softmax");
}

Var reshape(const Var& a, Shape shape) {
  Tensor y = a.value().reshaped(std::move(shape));
  return tape_of(a).record(
      std::move(y), {a},
      [](const Tensor& g, std::span<Tensor* const> s) {
        for (std::size_t i = 0; i < g.size(); ++i) (*s[0])[i] += g[i];
      },
      "reshape");
}

Var slice_last(const Var& a, int begin, int end) {
  const int k = last_extent(a, "slice_last");
  if (begin < 0 || end > k || begin >= end) {
    throw ShapeError("slice_last: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for shape " + shape_string(a.shape()));
  }
  const Tensor& x = a.value();
  const std::size_t rows = x.size() / static_cast<std::size_t>(k);
  const int width = end - begin;
  Shape out_shape = x.shape();
  out_shape.back() = width;
  Tensor y(out_shape);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.data() + r * k + begin, width, y.data() + r * width);
  return tape_of(a).record(
      std::move(y), {a},
      [rows, k, begin, width](const Tensor& g, std::span<Tensor* const> s) {
        for (std::size_t r = 0; r < rows; ++r)
          for (int j = 0; j < width; ++j) (*s[0])[r * k + begin + j] += g[r * width + j];
      },
      "slice_last");
}

Var diff(const Var& a, int axis) {
  const Tensor& x = a.value();
  if (axis < 0) axis += x.rank();
  if (axis < 0 || axis >= x.rank()) throw ShapeError("diff: axis out of range for " + shape_string(x.shape()));
  const Shape& sh = x.shape();
  std::size_t inner = 1;
  for (int d = axis + 1; d < x.rank(); ++d) inner *= static_cast<std::size_t>(sh[d]);
  const std::size_t n = static_cast<std::size_t>(sh[axis]);
  const std::size_t outer = n ? x.size() / (n * inner) : 0;
  Tensor y(sh);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i + 1 < n; ++i)
      for (std::size_t j = 0; j < inner; ++j) {
        const std::size_t at = (o * n + i) * inner + j;
        y[at] = x[at + inner] - x[at];
      }
  return tape_of(a).record(
      std::move(y), {a},
      [outer, n, inner](const Tensor& g, std::span<Tensor* const> s) {
        Tensor& ga = *s[0];
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i + 1 < n; ++i)
            for (std::size_t j = 0; j < inner; ++j) {
              const std::size_t at = (o * n + i) * inner + j;
              ga[at + inner] += g[at];
              ga[at] -= g[at];
            }
      },
      "diff");
}

Var sq_dist_rows(const Var& x, const Tensor& centers) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || centers.rank() != 2 || xv.dim(1) != centers.dim(1)) {
    throw ShapeError("sq_dist_rows: expected [N,C] and [K,C], got " + shape_string(xv.shape()) + " and " +
                     shape_string(centers.shape()));
  }
  const int n = xv.dim(0), c = xv.dim(1), k = centers.dim(0);
  Tensor y(Shape{n, k});
  for (int r = 0; r < n; ++r)
    for (int q = 0; q < k; ++q) {
      Real d2 = 0;
      for (int j = 0; j < c; ++j) {
        const Real d = xv[static_cast<std::size_t>(r) * c + j] - centers[static_cast<std::size_t>(q) * c + j];
        d2 += d * d;
      }
      y[static_cast<std::size_t>(r) * k + q] = d2;
    }
  return tape_of(x).record(
      std::move(y), {x},
      [&xv, centers, n, c, k](const Tensor& g, std::span<Tensor* const> s) {
        Tensor& gx = *s[0];
        for (int r = 0; r < n; ++r)
          for (int q = 0; q < k; ++q) {
            const Real gq = g[static_cast<std::size_t>(r) * k + q];
            if (gq == 0) continue;
            for (int j = 0; j < c; ++j) {
              const std::size_t xi = static_cast<std::size_t>(r) * c + j;
              gx[xi] += 2 * gq * (xv[xi] - centers[static_cast<std::size_t>(q) * c + j]);
            }
          }
      },
      "sq_dist_rows");
}

Var conv2d(const Var& input, const Var& kernel, int stride, int pad) {
  same_tape(input, kernel);
  const Tensor& in = input.value();
  const Tensor& w = kernel.value();
  const kernels::ConvGeometry g = kernels::conv_geometry(in.shape(), w.shape(), stride, pad);
  Tensor out(Shape{g.out_h, g.out_w, g.out_c});
  kernels::conv2d_forward(g, in.data(), w.data(), out.data());
  return tape_of(input).record(
      std::move(out), {input, kernel},
      [&in, &w, g](const Tensor& grad_out, std::span<Tensor* const> s) {
        if (s[0]) kernels::conv2d_backward_input(g, grad_out.data(), w.data(), s[0]->data());
        if (s[1]) kernels::conv2d_backward_kernel(g, in.data(), grad_out.data(), s[1]->data());
      },
      "conv2d");
}

Var add_bias(const Var& a, const Var& bias) {
  same_tape(a, bias);
  const int c = last_extent(a, "add_bias");
  const Tensor& x = a.value();
  const Tensor& b = bias.value();
  if (b.rank() != 1 || b.dim(0) != c) {
    throw ShapeError("add_bias: bias " + shape_string(b.shape()) + " does not match " + shape_string(x.shape()));
  }
  const std::size_t rows = x.size() / static_cast<std::size_t>(c);
  Tensor y(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (int j = 0; j < c; ++j) y[r * c + j] = x[r * c + j] + b[static_cast<std::size_t>(j)];
  return tape_of(a).record(
      std::move(y), {a, bias},
      [rows, c](const Tensor& g, std::span<Tensor* const> s) {
        if (s[0])
          for (std::size_t i = 0; i < g.size(); ++i) (*s[0])[i] += g[i];
        if (s[1])
          for (std::size_t r = 0; r < rows; ++r)
            for (int j = 0; j < c; ++j) (*s[1])[static_cast<std::size_t>(j)] += g[r * c + j];
      },
      "add_bias");
}

}  // namespace adyolo::ops
