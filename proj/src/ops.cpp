#include "drformer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <numbers>
#include <string>

#include "drformer/errors.hpp"

namespace drformer {
namespace {

using ImplPtr = Tape::ImplPtr;

Tape* recording_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = active_tape();
  if (!tape) return nullptr;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return tape;
  }
  return nullptr;
}

Tape* recording_tape(std::span<const Tensor> inputs) {
  Tape* tape = active_tape();
  if (!tape) return nullptr;
  for (const Tensor& t : inputs) {
    if (t.requires_grad()) return tape;
  }
  return nullptr;
}

// Gradient buffer of an input, or nullptr when it takes no gradient.
double* grad_of(const ImplPtr& p) {
  if (!p->requires_grad) return nullptr;
  p->ensure_grad();
  return p->grad.data();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_matrix(const Tensor& a, const char* op) {
  if (a.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
}

struct AxisLayout {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisLayout axis_layout(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                         shape_str(shape));
  }
  AxisLayout l;
  for (std::size_t i = 0; i < axis; ++i) l.outer *= shape[i];
  l.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
  return l;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  Tensor result({m, n}, std::move(out));
  if (Tape* tape = recording_tape({&a, &b})) {
    tape->record("matmul", {a.impl(), b.impl()}, result.impl(),
                 [ai = a.impl(), bi = b.impl(), m, k, n](std::span<const double> g) {
                   if (double* ga = grad_of(ai)) {
                     const double* pb = bi->data.data();
                     for (std::size_t i = 0; i < m; ++i) {
                       for (std::size_t p = 0; p < k; ++p) {
                         double s = 0.0;
                         for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * pb[p * n + j];
                         ga[i * k + p] += s;
                       }
                     }
                   }
                   if (double* gb = grad_of(bi)) {
                     const double* pa = ai->data.data();
                     for (std::size_t i = 0; i < m; ++i) {
                       for (std::size_t p = 0; p < k; ++p) {
                         const double av = pa[i * k + p];
                         double* gbrow = gb + p * n;
                         for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * g[i * n + j];
                       }
                     }
                   }
                 });
  }
  return result;
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  Tensor result({c, r}, std::move(out));
  if (Tape* tape = recording_tape({&a})) {
    tape->record("transpose", {a.impl()}, result.impl(), [ai = a.impl(), r, c](std::span<const double> g) {
      if (double* ga = grad_of(ai))
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
    });
  }
  return result;
}

namespace {

template <class F, class DA, class DB>
Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* op, F f, DA da, DB db) {
  require_same_shape(a, b, op);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
  Tensor result(a.shape(), std::move(out));
  if (Tape* tape = recording_tape({&a, &b})) {
    tape->record(op, {a.impl(), b.impl()}, result.impl(),
                 [ai = a.impl(), bi = b.impl(), da, db](std::span<const double> g) {
                   if (double* ga = grad_of(ai))
                     for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * da(ai->data[i], bi->data[i]);
                   if (double* gb = grad_of(bi))
                     for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * db(ai->data[i], bi->data[i]);
                 });
  }
  return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  Tensor result(x.shape(), std::move(out));
  if (Tape* tape = recording_tape({&x})) {
    tape->record("scale", {x.impl()}, result.impl(), [xi = x.impl(), factor](std::span<const double> g) {
      if (double* gx = grad_of(xi))
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
    });
  }
  return result;
}

Tensor add_scalar(const Tensor& x, double value) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v += value;
  Tensor result(x.shape(), std::move(out));
  if (Tape* tape = recording_tape({&x})) {
    tape->record("add_scalar", {x.impl()}, result.impl(), [xi = x.impl()](std::span<const double> g) {
      if (double* gx = grad_of(xi))
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return result;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1 || x.shape().back() != bias.size()) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match last axis of " +
                         shape_str(x.shape()));
  }
  const std::size_t d = bias.size();
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias[i % d];
  Tensor result(x.shape(), std::move(out));
  if (Tape* tape = recording_tape({&x, &bias})) {
    tape->record("add_bias", {x.impl(), bias.impl()}, result.impl(),
                 [xi = x.impl(), bi = bias.impl(), d](std::span<const double> g) {
                   if (double* gx = grad_of(xi))
                     for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                   if (double* gb = grad_of(bi))
                     for (std::size_t i = 0; i < g.size(); ++i) gb[i % d] += g[i];
                 });
  }
  return result;
}

Tensor add_n(std::span<const Tensor> xs) {
  if (xs.empty()) throw ContractError("add_n: empty input list");
  for (const auto& x : xs) require_same_shape(xs[0], x, "add_n");
  std::vector<double> out(xs[0].size(), 0.0);
  for (const auto& x : xs)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += x[i];
  Tensor result(xs[0].shape(), std::move(out));
  if (Tape* tape = recording_tape(xs)) {
    std::vector<ImplPtr> inputs;
    for (const auto& x : xs) inputs.push_back(x.impl());
    tape->record("add_n", inputs, result.impl(), [inputs](std::span<const double> g) {
      for (const auto& in : inputs)
        if (double* gx = grad_of(in))
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return result;
}

Tensor map(const Tensor& x, std::function<double(double)> f, std::function<double(double)> df,
           std::string_view name) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  Tensor result(x.shape(), std::move(out));
  if (Tape* tape = recording_tape({&x})) {
    tape->record(name, {x.impl()}, result.impl(), [xi = x.impl(), df = std::move(df)](std::span<const double> g) {
      if (double* gx = grad_of(xi))
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xi->data[i]);
    });
  }
  return result;
}

Tensor relu(const Tensor& x) {
  return map(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; }, "relu");
}

Tensor gelu(const Tensor& x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double a = 0.044715;
  return map(
      x,
      [](double v) { return 0.5 * v * (1.0 + std::tanh(c * (v + a * v * v * v))); },
      [](double v) {
        const double t = std::tanh(c * (v + a * v * v * v));
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * c * (1.0 + 3.0 * a * v * v);
      },
      "gelu");
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto l = axis_layout(x.shape(), axis, "softmax");
  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.n * l.inner + in;
      double mx = x[base];
      for (std::size_t j = 1; j < l.n; ++j) mx = std::max(mx, x[base + j * l.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < l.n; ++j) {
        const double e = std::exp(x[base + j * l.inner] - mx);
        out[base + j * l.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < l.n; ++j) out[base + j * l.inner] /= total;
    }
  }
  Tensor result(x.shape(), std::move(out));
  if (Tape* tape = recording_tape({&x})) {
    tape->record("softmax", {x.impl()}, result.impl(),
                 [xi = x.impl(), yi = result.impl().get(), l](std::span<const double> g) {
                   double* gx = grad_of(xi);
                   if (!gx) return;
                   const auto& y = yi->data;
                   for (std::size_t o = 0; o < l.outer; ++o) {
                     for (std::size_t in = 0; in < l.inner; ++in) {
                       const std::size_t base = o * l.n * l.inner + in;
                       double s = 0.0;
                       for (std::size_t j = 0; j < l.n; ++j) s += g[base + j * l.inner] * y[base + j * l.inner];
                       for (std::size_t j = 0; j < l.n; ++j) {
                         const std::size_t idx = base + j * l.inner;
                         gx[idx] += y[idx] * (g[idx] - s);
                       }
                     }
                   }
                 });
  }
  return result;
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  const auto l = axis_layout(x.shape(), axis, "log_softmax");
  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.n * l.inner + in;
      double mx = x[base];
      for (std::size_t j = 1; j < l.n; ++j) mx = std::max(mx, x[base + j * l.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < l.n; ++j) total += std::exp(x[base + j * l.inner] - mx);
      const double lse = mx + std::log(total);
      for (std::size_t j = 0; j < l.n; ++j) out[base + j * l.inner] = x[base + j * l.inner] - lse;
    }
  }
  Tensor result(x.shape(), std::move(out));
  if (Tape* tape = recording_tape({&x})) {
    tape->record("log_softmax", {x.impl()}, result.impl(),
                 [xi = x.impl(), yi = result.impl().get(), l](std::span<const double> g) {
                   double* gx = grad_of(xi);
                   if (!gx) return;
                   const auto& y = yi->data;
                   for (std::size_t o = 0; o < l.outer; ++o) {
                     for (std::size_t in = 0; in < l.inner; ++in) {
                       const std::size_t base = o * l.n * l.inner + in;
                       double s = 0.0;
                       for (std::size_t j = 0; j < l.n; ++j) s += g[base + j * l.inner];
                       for (std::size_t j = 0; j < l.n; ++j) {
                         const std::size_t idx = base + j * l.inner;
                         gx[idx] += g[idx] - std::exp(y[idx]) * s;
                       }
                     }
                   }
                 });
  }
  return result;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t d = x.shape().back();
  if (d < 2) throw DimensionError("layer_norm: last axis must have at least 2 entries, got " + shape_str(x.shape()));
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
  if (gain.rank() != 1 || gain.size() != d || bias.rank() != 1 || bias.size() != d) {
    throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " + shape_str(bias.shape()) +
                         " do not match input " + shape_str(x.shape()));
  }
  const std::size_t slices = x.size() / d;
  std::vector<double> xhat(x.size()), inv_std(slices), out(x.size());
  for (std::size_t s = 0; s < slices; ++s) {
    const double* xs = x.data().data() + s * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xs[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xs[j] - mu) * (xs[j] - mu);
    var /= static_cast<double>(d);
    inv_std[s] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[s * d + j] = (xs[j] - mu) * inv_std[s];
      out[s * d + j] = gain[j] * xhat[s * d + j] + bias[j];
    }
  }
  Tensor result(x.shape(), std::move(out));
  if (Tape* tape = recording_tape({&x, &gain, &bias})) {
    tape->record("layer_norm", {x.impl(), gain.impl(), bias.impl()}, result.impl(),
                 [xi = x.impl(), gi = gain.impl(), bi = bias.impl(), xhat = std::move(xhat),
                  inv_std = std::move(inv_std), d, slices](std::span<const double> g) {
                   double* gx = grad_of(xi);
                   double* gg = grad_of(gi);
                   double* gb = grad_of(bi);
                   std::vector<double> gxhat(d);
                   for (std::size_t s = 0; s < slices; ++s) {
                     const double* gs = g.data() + s * d;
                     const double* hs = xhat.data() + s * d;
                     if (gg)
                       for (std::size_t j = 0; j < d; ++j) gg[j] += gs[j] * hs[j];
                     if (gb)
                       for (std::size_t j = 0; j < d; ++j) gb[j] += gs[j];
                     if (!gx) continue;
                     double mean_g = 0.0, mean_gh = 0.0;
                     for (std::size_t j = 0; j < d; ++j) {
                       gxhat[j] = gs[j] * gi->data[j];
                       mean_g += gxhat[j];
                       mean_gh += gxhat[j] * hs[j];
                     }
                     mean_g /= static_cast<double>(d);
                     mean_gh /= static_cast<double>(d);
                     for (std::size_t j = 0; j < d; ++j)
                       gx[s * d + j] += inv_std[s] * (gxhat[j] - mean_g - hs[j] * mean_gh);
                   }
                 });
  }
  return result;
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor result = Tensor::scalar(s);
  if (Tape* tape = recording_tape({&x})) {
    tape->record("sum", {x.impl()}, result.impl(), [xi = x.impl()](std::span<const double> g) {
      if (double* gx = grad_of(xi))
        for (std::size_t i = 0; i < xi->data.size(); ++i) gx[i] += g[0];
    });
  }
  return result;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor mean(const Tensor& x, std::size_t axis) {
  const auto l = axis_layout(x.shape(), axis, "mean");
  Shape out_shape;
  for (std::size_t i = 0; i < x.rank(); ++i)
    if (i != axis) out_shape.push_back(x.extent(i));
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<double> out(l.outer * l.inner, 0.0);
  const double inv = 1.0 / static_cast<double>(l.n);
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t j = 0; j < l.n; ++j)
      for (std::size_t in = 0; in < l.inner; ++in) out[o * l.inner + in] += x[(o * l.n + j) * l.inner + in];
  for (auto& v : out) v *= inv;
  Tensor result(std::move(out_shape), std::move(out));
  if (Tape* tape = recording_tape({&x})) {
    tape->record("mean_axis", {x.impl()}, result.impl(), [xi = x.impl(), l, inv](std::span<const double> g) {
      if (double* gx = grad_of(xi))
        for (std::size_t o = 0; o < l.outer; ++o)
          for (std::size_t j = 0; j < l.n; ++j)
            for (std::size_t in = 0; in < l.inner; ++in) gx[(o * l.n + j) * l.inner + in] += inv * g[o * l.inner + in];
    });
  }
  return result;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor result(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
  if (Tape* tape = recording_tape({&x})) {
    tape->record("reshape", {x.impl()}, result.impl(), [xi = x.impl()](std::span<const double> g) {
      if (double* gx = grad_of(xi))
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return result;
}

Tensor concat(std::span<const Tensor> xs, std::size_t axis) {
  if (xs.empty()) throw ContractError("concat: empty input list");
  const Shape& ref = xs[0].shape();
  if (axis >= ref.size()) throw DimensionError("concat: axis out of range for " + shape_str(ref));
  std::size_t total = 0;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    bool ok = s.size() == ref.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == ref[i];
    if (!ok) {
      throw DimensionError("concat: side extents differ between " + shape_str(ref) + " and " + shape_str(s) +
                           " (axis " + std::to_string(axis) + ")");
    }
    total += s[axis];
  }
  Shape out_shape = ref;
  out_shape[axis] = total;
  const auto lo = axis_layout(out_shape, axis, "concat");
  std::vector<double> out(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& x : xs) {
    offsets.push_back(off);
    const std::size_t chunk = x.extent(axis) * lo.inner;
    for (std::size_t o = 0; o < lo.outer; ++o)
      std::copy_n(x.data().data() + o * chunk, chunk, out.data() + o * lo.n * lo.inner + off * lo.inner);
    off += x.extent(axis);
  }
  Tensor result(std::move(out_shape), std::move(out));
  if (Tape* tape = recording_tape(xs)) {
    std::vector<ImplPtr> inputs;
    std::vector<std::size_t> lengths;
    for (const auto& x : xs) {
      inputs.push_back(x.impl());
      lengths.push_back(x.extent(axis));
    }
    tape->record("concat", inputs, result.impl(),
                 [inputs, lengths, offsets, lo](std::span<const double> g) {
                   for (std::size_t t = 0; t < inputs.size(); ++t) {
                     double* gx = grad_of(inputs[t]);
                     if (!gx) continue;
                     const std::size_t chunk = lengths[t] * lo.inner;
                     for (std::size_t o = 0; o < lo.outer; ++o) {
                       const double* src = g.data() + o * lo.n * lo.inner + offsets[t] * lo.inner;
                       for (std::size_t i = 0; i < chunk; ++i) gx[o * chunk + i] += src[i];
                     }
                   }
                 });
  }
  return result;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  const auto l = axis_layout(x.shape(), axis, "slice");
  if (length == 0 || start + length > l.n) {
    throw DimensionError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") exceeds axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  const std::size_t chunk = length * l.inner;
  std::vector<double> out(l.outer * chunk);
  for (std::size_t o = 0; o < l.outer; ++o)
    std::copy_n(x.data().data() + (o * l.n + start) * l.inner, chunk, out.data() + o * chunk);
  Tensor result(std::move(out_shape), std::move(out));
  if (Tape* tape = recording_tape({&x})) {
    tape->record("slice", {x.impl()}, result.impl(), [xi = x.impl(), l, start, chunk](std::span<const double> g) {
      if (double* gx = grad_of(xi))
        for (std::size_t o = 0; o < l.outer; ++o)
          for (std::size_t i = 0; i < chunk; ++i) gx[(o * l.n + start) * l.inner + i] += g[o * chunk + i];
    });
  }
  return result;
}

std::vector<Tensor> split(const Tensor& x, std::size_t axis, std::span<const std::size_t> lengths) {
  std::size_t total = 0;
  for (auto n : lengths) total += n;
  if (axis >= x.rank() || total != x.extent(axis)) {
    throw DimensionError("split: lengths do not sum to axis extent of " + shape_str(x.shape()));
  }
  std::vector<Tensor> parts;
  std::size_t start = 0;
  for (auto n : lengths) {
    parts.push_back(slice(x, axis, start, n));
    start += n;
  }
  return parts;
}

Tensor row(const Tensor& x, std::size_t i) {
  require_matrix(x, "row");
  if (i >= x.rows()) throw DimensionError("row: index " + std::to_string(i) + " out of range for " + shape_str(x.shape()));
  const std::size_t d = x.cols();
  Tensor result({d}, std::vector<double>(x.data().begin() + i * d, x.data().begin() + (i + 1) * d));
  if (Tape* tape = recording_tape({&x})) {
    tape->record("row", {x.impl()}, result.impl(), [xi = x.impl(), i, d](std::span<const double> g) {
      if (double* gx = grad_of(xi))
        for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += g[j];
    });
  }
  return result;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices) {
  require_matrix(x, "gather_rows");
  if (indices.empty()) throw ContractError("gather_rows: empty index list");
  const std::size_t d = x.cols();
  std::vector<double> out(indices.size() * d);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= x.rows()) {
      throw LookupError("gather_rows: index " + std::to_string(indices[r]) + " out of range for " +
                        shape_str(x.shape()));
    }
    std::copy_n(x.data().data() + indices[r] * d, d, out.data() + r * d);
  }
  Tensor result({indices.size(), d}, std::move(out));
  if (Tape* tape = recording_tape({&x})) {
    tape->record("gather_rows", {x.impl()}, result.impl(),
                 [xi = x.impl(), idx = std::vector<std::size_t>(indices.begin(), indices.end()), d](
                     std::span<const double> g) {
                   if (double* gx = grad_of(xi))
                     for (std::size_t r = 0; r < idx.size(); ++r)
                       for (std::size_t j = 0; j < d; ++j) gx[idx[r] * d + j] += g[r * d + j];
                 });
  }
  return result;
}

Tensor dot(const Tensor& u, const Tensor& v) {
  require_same_shape(u, v, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
  Tensor result = Tensor::scalar(s);
  if (Tape* tape = recording_tape({&u, &v})) {
    tape->record("dot", {u.impl(), v.impl()}, result.impl(),
                 [ui = u.impl(), vi = v.impl()](std::span<const double> g) {
                   if (double* gu = grad_of(ui))
                     for (std::size_t i = 0; i < ui->data.size(); ++i) gu[i] += g[0] * vi->data[i];
                   if (double* gv = grad_of(vi))
                     for (std::size_t i = 0; i < vi->data.size(); ++i) gv[i] += g[0] * ui->data[i];
                 });
  }
  return result;
}

Tensor row_norms(const Tensor& x) {
  require_matrix(x, "row_norms");
  const std::size_t r = x.rows(), d = x.cols();
  std::vector<double> out(r);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += x[i * d + j] * x[i * d + j];
    out[i] = std::sqrt(s);
  }
  Tensor result({r}, std::move(out));
  if (Tape* tape = recording_tape({&x})) {
    tape->record("row_norms", {x.impl()}, result.impl(),
                 [xi = x.impl(), ni = result.impl().get(), r, d](std::span<const double> g) {
                   double* gx = grad_of(xi);
                   if (!gx) return;
                   for (std::size_t i = 0; i < r; ++i) {
                     const double n = ni->data[i];
                     if (n == 0.0) continue;  // subgradient 0 at the origin
                     for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += g[i] * xi->data[i * d + j] / n;
                   }
                 });
  }
  return result;
}

Tensor cosine_similarity(const Tensor& u, const Tensor& v) {
  if (u.rank() != 1 || v.rank() != 1 || u.size() != v.size()) {
    throw DimensionError("cosine_similarity: expected equal-length vectors, got " + shape_str(u.shape()) + " and " +
                         shape_str(v.shape()));
  }
  double uv = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uv += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (uu == 0.0 || vv == 0.0) {
    throw DegenerateInputError("cosine_similarity: zero-norm argument (collapsed token?)");
  }
  const double nu = std::sqrt(uu), nv = std::sqrt(vv);
  const double c = uv / (nu * nv);
  Tensor result = Tensor::scalar(c);
  if (Tape* tape = recording_tape({&u, &v})) {
    tape->record("cosine_similarity", {u.impl(), v.impl()}, result.impl(),
                 [ui = u.impl(), vi = v.impl(), nu, nv, c](std::span<const double> g) {
                   const auto& ud = ui->data;
                   const auto& vd = vi->data;
                   if (double* gu = grad_of(ui))
                     for (std::size_t i = 0; i < ud.size(); ++i)
                       gu[i] += g[0] * (vd[i] / (nu * nv) - c * ud[i] / (nu * nu));
                   if (double* gv = grad_of(vi))
                     for (std::size_t i = 0; i < vd.size(); ++i)
                       gv[i] += g[0] * (ud[i] / (nu * nv) - c * vd[i] / (nv * nv));
                 });
  }
  return result;
}

}  // namespace drformer
