#include "demo/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace demo {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
constexpr double kLayerNormEps = 1e-5;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeMismatch(std::string(op) + " expects equal shapes, got " +
                        shape_str(a.shape()) + " and " + shape_str(b.shape()));
}

bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

double Tensor::scalar() const {
  if (size() != 1)
    throw ShapeMismatch("scalar() on tensor of shape " + shape_str(shape()));
  return data_->value[0];
}

Tensor Tape::make(Shape shape, std::vector<double> value, bool requires_grad,
                  const char* op_name) {
  for (int d : shape)
    if (d <= 0)
      throw ShapeMismatch(std::string(op_name) + " produced shape " +
                          shape_str(shape));
  if (shape_size(shape) != value.size())
    throw ShapeMismatch(std::string(op_name) + ": shape " + shape_str(shape) +
                        " does not match " + std::to_string(value.size()) +
                        " values");
  if (!all_finite(value)) throw NonFiniteValue(op_name);
  auto data = std::make_shared<TensorData>();
  data->shape = std::move(shape);
  data->value = std::move(value);
  data->requires_grad = requires_grad;
  return Tensor(this, std::move(data));
}

Tensor Tape::tensor(Shape shape, std::vector<double> value,
                    bool requires_grad) {
  return make(std::move(shape), std::move(value), requires_grad, "tensor");
}

Tensor Tape::constant(Shape shape, std::vector<double> value) {
  return make(std::move(shape), std::move(value), false, "constant");
}

Tensor Tape::zeros(Shape shape, bool requires_grad) {
  std::vector<double> v(shape_size(shape), 0.0);
  return make(std::move(shape), std::move(v), requires_grad, "zeros");
}

Tensor Tape::full(Shape shape, double fill) {
  std::vector<double> v(shape_size(shape), fill);
  return make(std::move(shape), std::move(v), false, "full");
}

Tensor Tape::scalar_tensor(double v) { return constant({1, 1}, {v}); }

Tensor Tape::lease(Param& p) {
  for (const auto& [param, data] : leases_)
    if (param == &p) return Tensor(this, data);
  Tensor t = make(p.shape, p.value, true, "lease");
  leases_.emplace_back(&p, t.data_);
  return t;
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw ShapeMismatch("backward() needs a scalar loss, got " +
                        shape_str(loss.shape()));
  if (loss.tape() != this)
    throw NumericError("backward() loss belongs to a different tape");
  mut(loss).ensure_grad();
  mut(loss).grad[0] += 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  for (auto& [param, data] : leases_) {
    if (!data->grad.empty()) param->accumulate_grad(data->grad);
  }
}

// ---------------------------------------------------------------------------
// ops. Backward closures capture Tensor handles, which share ownership of
// the node storage.

#define DEMO_BINARY_PROLOGUE2(name, lhs, rhs)           \
  Tape* tape = (lhs).tape();                              \
  if (!tape || tape != (rhs).tape())                      \
    throw NumericError(name ": operands on different tapes");
#define DEMO_BINARY_PROLOGUE(name) DEMO_BINARY_PROLOGUE2(name, a, b)

Tensor add(const Tensor& a, const Tensor& b) {
  DEMO_BINARY_PROLOGUE("add")
  check_same_shape(a, b, "add");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.val(i) + b.val(i);
  const bool rg = a.requires_grad() || b.requires_grad();
  Tensor out = tape->make(a.shape(), std::move(v), rg, "add");
  if (rg)
    tape->record([a, b, out]() {
      if (mut(out).grad.empty()) return;
      const auto& g = mut(out).grad;
      if (a.requires_grad()) {
        mut(a).ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) mut(a).grad[i] += g[i];
      }
      if (b.requires_grad()) {
        mut(b).ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) mut(b).grad[i] += g[i];
      }
    });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  DEMO_BINARY_PROLOGUE("sub")
  check_same_shape(a, b, "sub");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.val(i) - b.val(i);
  const bool rg = a.requires_grad() || b.requires_grad();
  Tensor out = tape->make(a.shape(), std::move(v), rg, "sub");
  if (rg)
    tape->record([a, b, out]() {
      if (mut(out).grad.empty()) return;
      const auto& g = mut(out).grad;
      if (a.requires_grad()) {
        mut(a).ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) mut(a).grad[i] += g[i];
      }
      if (b.requires_grad()) {
        mut(b).ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) mut(b).grad[i] -= g[i];
      }
    });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  DEMO_BINARY_PROLOGUE("mul")
  check_same_shape(a, b, "mul");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.val(i) * b.val(i);
  const bool rg = a.requires_grad() || b.requires_grad();
  Tensor out = tape->make(a.shape(), std::move(v), rg, "mul");
  if (rg)
    tape->record([a, b, out]() {
      if (mut(out).grad.empty()) return;
      const auto& g = mut(out).grad;
      if (a.requires_grad()) {
        mut(a).ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
          mut(a).grad[i] += g[i] * b.val(i);
      }
      if (b.requires_grad()) {
        mut(b).ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
          mut(b).grad[i] += g[i] * a.val(i);
      }
    });
  return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
  DEMO_BINARY_PROLOGUE("div")
  check_same_shape(a, b, "div");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.val(i) / b.val(i);
  const bool rg = a.requires_grad() || b.requires_grad();
  Tensor out = tape->make(a.shape(), std::move(v), rg, "div");
  if (rg)
    tape->record([a, b, out]() {
      if (mut(out).grad.empty()) return;
      const auto& g = mut(out).grad;
      if (a.requires_grad()) {
        mut(a).ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
          mut(a).grad[i] += g[i] / b.val(i);
      }
      if (b.requires_grad()) {
        mut(b).ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
          mut(b).grad[i] -= g[i] * a.val(i) / (b.val(i) * b.val(i));
      }
    });
  return out;
}

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& a, const char* name, Fwd fwd, Bwd dfdx) {
  Tape* tape = a.tape();
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = fwd(a.val(i));
  Tensor out = tape->make(a.shape(), std::move(v), a.requires_grad(), name);
  if (a.requires_grad())
    tape->record([a, out, dfdx]() {
      if (mut(out).grad.empty()) return;
      const auto& g = mut(out).grad;
      mut(a).ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i)
        mut(a).grad[i] += g[i] * dfdx(a.val(i), out.val(i));
    });
  return out;
}

}  // namespace

Tensor neg(const Tensor& a) {
  return unary_op(
      a, "neg", [](double x) { return -x; },
      [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& a, double s) {
  return unary_op(
      a, "scale", [s](double x) { return s * x; },
      [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary_op(
      a, "add_scalar", [s](double x) { return x + s; },
      [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a, "sigmoid", [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh_t(const Tensor& a) {
  return unary_op(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor gelu(const Tensor& a) {
  return unary_op(
      a, "gelu",
      [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x, double) {
        const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        return cdf + x * pdf;
      });
}

Tensor softplus(const Tensor& a) {
  return unary_op(
      a, "softplus",
      [](double x) {
        // log1p(exp(x)) with overflow guard
        return x > 30.0 ? x : std::log1p(std::exp(x));
      },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Tensor sin_t(const Tensor& a) {
  return unary_op(
      a, "sin", [](double x) { return std::sin(x); },
      [](double x, double) { return std::cos(x); });
}

Tensor cos_t(const Tensor& a) {
  return unary_op(
      a, "cos", [](double x) { return std::cos(x); },
      [](double x, double) { return -std::sin(x); });
}

Tensor exp_t(const Tensor& a) {
  return unary_op(
      a, "exp", [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor log_t(const Tensor& a) {
  return unary_op(
      a, "log", [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Tensor square(const Tensor& a) {
  return unary_op(
      a, "square", [](double x) { return x * x; },
      [](double x, double) { return 2.0 * x; });
}

Tensor sqrt_t(const Tensor& a) {
  return unary_op(
      a, "sqrt", [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  return unary_op(
      a, "clamp",
      [lo, hi](double x) { return std::min(hi, std::max(lo, x)); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Tensor clamp_min_abs(const Tensor& a, double floor) {
  return unary_op(
      a, "clamp_min_abs",
      [floor](double x) {
        if (x >= floor || x <= -floor) return x;
        return x < 0.0 ? -floor : floor;
      },
      [floor](double x, double) {
        return (x >= floor || x <= -floor) ? 1.0 : 0.0;
      });
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  DEMO_BINARY_PROLOGUE2("add_rowvec", a, v)
  Tensor b = v;
  if (b.rows() != 1 || b.cols() != a.cols())
    throw ShapeMismatch("add_rowvec: " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  const int m = a.rows(), n = a.cols();
  std::vector<double> out(a.size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(i) * n + j] = a.val(i, j) + b.val(0, j);
  const bool rg = a.requires_grad() || b.requires_grad();
  Tensor c = tape->make(a.shape(), std::move(out), rg, "add_rowvec");
  if (rg)
    tape->record([a, b, c, m, n]() {
      if (mut(c).grad.empty()) return;
      const auto& g = mut(c).grad;
      if (a.requires_grad()) {
        mut(a).ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) mut(a).grad[i] += g[i];
      }
      if (b.requires_grad()) {
        mut(b).ensure_grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j)
            mut(b).grad[j] += g[static_cast<std::size_t>(i) * n + j];
      }
    });
  return c;
}

Tensor mul_rowvec(const Tensor& a, const Tensor& v) {
  DEMO_BINARY_PROLOGUE2("mul_rowvec", a, v)
  Tensor b = v;
  if (b.rows() != 1 || b.cols() != a.cols())
    throw ShapeMismatch("mul_rowvec: " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  const int m = a.rows(), n = a.cols();
  std::vector<double> out(a.size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(i) * n + j] = a.val(i, j) * b.val(0, j);
  const bool rg = a.requires_grad() || b.requires_grad();
  Tensor c = tape->make(a.shape(), std::move(out), rg, "mul_rowvec");
  if (rg)
    tape->record([a, b, c, m, n]() {
      if (mut(c).grad.empty()) return;
      const auto& g = mut(c).grad;
      if (a.requires_grad()) {
        mut(a).ensure_grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j)
            mut(a).grad[static_cast<std::size_t>(i) * n + j] +=
                g[static_cast<std::size_t>(i) * n + j] * b.val(0, j);
      }
      if (b.requires_grad()) {
        mut(b).ensure_grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j)
            mut(b).grad[j] +=
                g[static_cast<std::size_t>(i) * n + j] * a.val(i, j);
      }
    });
  return c;
}

Tensor mul_colvec(const Tensor& a, const Tensor& v) {
  DEMO_BINARY_PROLOGUE2("mul_colvec", a, v)
  Tensor b = v;
  if (b.cols() != 1 || b.rows() != a.rows())
    throw ShapeMismatch("mul_colvec: " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  const int m = a.rows(), n = a.cols();
  std::vector<double> out(a.size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(i) * n + j] = a.val(i, j) * b.val(i, 0);
  const bool rg = a.requires_grad() || b.requires_grad();
  Tensor c = tape->make(a.shape(), std::move(out), rg, "mul_colvec");
  if (rg)
    tape->record([a, b, c, m, n]() {
      if (mut(c).grad.empty()) return;
      const auto& g = mut(c).grad;
      if (a.requires_grad()) {
        mut(a).ensure_grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j)
            mut(a).grad[static_cast<std::size_t>(i) * n + j] +=
                g[static_cast<std::size_t>(i) * n + j] * b.val(i, 0);
      }
      if (b.requires_grad()) {
        mut(b).ensure_grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j)
            mut(b).grad[i] +=
                g[static_cast<std::size_t>(i) * n + j] * a.val(i, j);
      }
    });
  return c;
}

Tensor mul_scalar_t(const Tensor& a, const Tensor& s) {
  DEMO_BINARY_PROLOGUE2("mul_scalar_t", a, s)
  Tensor b = s;
  if (b.size() != 1) throw ShapeMismatch("mul_scalar_t: s must be scalar");
  const double sv = b.val(0);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.val(i) * sv;
  const bool rg = a.requires_grad() || b.requires_grad();
  Tensor c = tape->make(a.shape(), std::move(out), rg, "mul_scalar_t");
  if (rg)
    tape->record([a, b, c]() {
      if (mut(c).grad.empty()) return;
      const auto& g = mut(c).grad;
      if (a.requires_grad()) {
        mut(a).ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
          mut(a).grad[i] += g[i] * b.val(0);
      }
      if (b.requires_grad()) {
        mut(b).ensure_grad();
        double acc = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * a.val(i);
        mut(b).grad[0] += acc;
      }
    });
  return c;
}

Tensor add_scalar_t(const Tensor& a, const Tensor& s) {
  DEMO_BINARY_PROLOGUE2("add_scalar_t", a, s)
  Tensor b = s;
  if (b.size() != 1) throw ShapeMismatch("add_scalar_t: s must be scalar");
  const double sv = b.val(0);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.val(i) + sv;
  const bool rg = a.requires_grad() || b.requires_grad();
  Tensor c = tape->make(a.shape(), std::move(out), rg, "add_scalar_t");
  if (rg)
    tape->record([a, b, c]() {
      if (mut(c).grad.empty()) return;
      const auto& g = mut(c).grad;
      if (a.requires_grad()) {
        mut(a).ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) mut(a).grad[i] += g[i];
      }
      if (b.requires_grad()) {
        mut(b).ensure_grad();
        double acc = 0.0;
        for (double gi : g) acc += gi;
        mut(b).grad[0] += acc;
      }
    });
  return c;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  DEMO_BINARY_PROLOGUE("matmul")
  const int m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
  if (k != k2)
    throw ShapeMismatch("matmul " + shape_str(a.shape()) + " x " +
                        shape_str(b.shape()));
  std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
  const auto av = a.values();
  const auto bv = b.values();
  for (int i = 0; i < m; ++i) {
    double* orow = out.data() + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double aip = av[static_cast<std::size_t>(i) * k + p];
      const double* brow = bv.data() + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  const bool rg = a.requires_grad() || b.requires_grad();
  Tensor c = tape->make({m, n}, std::move(out), rg, "matmul");
  if (rg)
    tape->record([a, b, c, m, k, n]() {
      if (mut(c).grad.empty()) return;
      const auto& g = mut(c).grad;
      if (a.requires_grad()) {
        mut(a).ensure_grad();
        auto& ga = mut(a).grad;
        const auto bv = b.values();
        // dA = g * B^T
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            double acc = 0.0;
            const double* grow = g.data() + static_cast<std::size_t>(i) * n;
            const double* brow = bv.data() + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
            ga[static_cast<std::size_t>(i) * k + p] += acc;
          }
      }
      if (b.requires_grad()) {
        mut(b).ensure_grad();
        auto& gb = mut(b).grad;
        const auto av = a.values();
        // dB = A^T * g
        for (int i = 0; i < m; ++i) {
          const double* grow = g.data() + static_cast<std::size_t>(i) * n;
          for (int p = 0; p < k; ++p) {
            const double aip = av[static_cast<std::size_t>(i) * k + p];
            double* brow = gb.data() + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) brow[j] += aip * grow[j];
          }
        }
      }
    });
  return c;
}

Tensor transpose(const Tensor& a) {
  Tape* tape = a.tape();
  const int m = a.rows(), n = a.cols();
  std::vector<double> out(a.size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(j) * m + i] = a.val(i, j);
  Tensor c = tape->make({n, m}, std::move(out), a.requires_grad(), "transpose");
  if (a.requires_grad())
    tape->record([a, c, m, n]() {
      if (mut(c).grad.empty()) return;
      const auto& g = mut(c).grad;
      mut(a).ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          mut(a).grad[static_cast<std::size_t>(i) * n + j] +=
              g[static_cast<std::size_t>(j) * m + i];
    });
  return c;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw EmptySequence();
  Tape* tape = parts[0].tape();
  const int n = parts[0].cols();
  int m = 0;
  bool rg = false;
  for (const Tensor& p : parts) {
    if (p.cols() != n)
      throw ShapeMismatch("concat_rows column mismatch: " +
                          shape_str(p.shape()));
    m += p.rows();
    rg = rg || p.requires_grad();
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(m) * n);
  for (const Tensor& p : parts)
    out.insert(out.end(), p.values().begin(), p.values().end());
  Tensor c = tape->make({m, n}, std::move(out), rg, "concat_rows");
  if (rg) {
    std::vector<Tensor> held(parts.begin(), parts.end());
    tape->record([held, c]() {
      if (mut(c).grad.empty()) return;
      const auto& g = mut(c).grad;
      std::size_t off = 0;
      for (const Tensor& p : held) {
        if (p.requires_grad()) {
          mut(p).ensure_grad();
          for (std::size_t i = 0; i < p.size(); ++i)
            mut(p).grad[i] += g[off + i];
        }
        off += p.size();
      }
    });
  }
  return c;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw EmptySequence();
  Tape* tape = parts[0].tape();
  const int m = parts[0].rows();
  int n = 0;
  bool rg = false;
  for (const Tensor& p : parts) {
    if (p.rows() != m)
      throw ShapeMismatch("concat_cols row mismatch: " + shape_str(p.shape()));
    n += p.cols();
    rg = rg || p.requires_grad();
  }
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  int coff = 0;
  for (const Tensor& p : parts) {
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < p.cols(); ++j)
        out[static_cast<std::size_t>(i) * n + coff + j] = p.val(i, j);
    coff += p.cols();
  }
  Tensor c = tape->make({m, n}, std::move(out), rg, "concat_cols");
  if (rg) {
    std::vector<Tensor> held(parts.begin(), parts.end());
    tape->record([held, c, m, n]() {
      if (mut(c).grad.empty()) return;
      const auto& g = mut(c).grad;
      int coff = 0;
      for (const Tensor& p : held) {
        if (p.requires_grad()) {
          mut(p).ensure_grad();
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < p.cols(); ++j)
              mut(p).grad[static_cast<std::size_t>(i) * p.cols() + j] +=
                  g[static_cast<std::size_t>(i) * n + coff + j];
        }
        coff += p.cols();
      }
    });
  }
  return c;
}

Tensor slice_rows(const Tensor& a, int start, int len) {
  Tape* tape = a.tape();
  const int m = a.rows(), n = a.cols();
  if (start < 0 || len <= 0 || start + len > m)
    throw ShapeMismatch("slice_rows [" + std::to_string(start) + "," +
                        std::to_string(start + len) + ") of " +
                        shape_str(a.shape()));
  std::vector<double> out(static_cast<std::size_t>(len) * n);
  for (int i = 0; i < len; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(i) * n + j] = a.val(start + i, j);
  Tensor c = tape->make({len, n}, std::move(out), a.requires_grad(),
                        "slice_rows");
  if (a.requires_grad())
    tape->record([a, c, start, n]() {
      if (mut(c).grad.empty()) return;
      const auto& g = mut(c).grad;
      mut(a).ensure_grad();
      for (int i = 0; i < c.rows(); ++i)
        for (int j = 0; j < n; ++j)
          mut(a).grad[static_cast<std::size_t>(start + i) * n + j] +=
              g[static_cast<std::size_t>(i) * n + j];
    });
  return c;
}

Tensor slice_cols(const Tensor& a, int start, int len) {
  Tape* tape = a.tape();
  const int m = a.rows(), n = a.cols();
  if (start < 0 || len <= 0 || start + len > n)
    throw ShapeMismatch("slice_cols [" + std::to_string(start) + "," +
                        std::to_string(start + len) + ") of " +
                        shape_str(a.shape()));
  std::vector<double> out(static_cast<std::size_t>(m) * len);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < len; ++j)
      out[static_cast<std::size_t>(i) * len + j] = a.val(i, start + j);
  Tensor c = tape->make({m, len}, std::move(out), a.requires_grad(),
                        "slice_cols");
  if (a.requires_grad())
    tape->record([a, c, start, m, n, len]() {
      if (mut(c).grad.empty()) return;
      const auto& g = mut(c).grad;
      mut(a).ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < len; ++j)
          mut(a).grad[static_cast<std::size_t>(i) * n + start + j] +=
              g[static_cast<std::size_t>(i) * len + j];
    });
  return c;
}

Tensor reshape(const Tensor& a, Shape shape) {
  Tape* tape = a.tape();
  if (shape_size(shape) != a.size())
    throw ShapeMismatch("reshape " + shape_str(a.shape()) + " -> " +
                        shape_str(shape));
  std::vector<double> out(a.values().begin(), a.values().end());
  Tensor c = tape->make(std::move(shape), std::move(out), a.requires_grad(),
                        "reshape");
  if (a.requires_grad())
    tape->record([a, c]() {
      if (mut(c).grad.empty()) return;
      const auto& g = mut(c).grad;
      mut(a).ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) mut(a).grad[i] += g[i];
    });
  return c;
}

Tensor reduce_sum(const Tensor& a) {
  Tape* tape = a.tape();
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a.val(i);
  Tensor c = tape->make({1, 1}, {acc}, a.requires_grad(), "reduce_sum");
  if (a.requires_grad())
    tape->record([a, c]() {
      if (mut(c).grad.empty()) return;
      const double g = mut(c).grad[0];
      mut(a).ensure_grad();
      for (std::size_t i = 0; i < a.size(); ++i) mut(a).grad[i] += g;
    });
  return c;
}

Tensor reduce_mean(const Tensor& a) {
  Tape* tape = a.tape();
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a.val(i);
  const double inv = 1.0 / static_cast<double>(a.size());
  Tensor c = tape->make({1, 1}, {acc * inv}, a.requires_grad(), "reduce_mean");
  if (a.requires_grad())
    tape->record([a, c, inv]() {
      if (mut(c).grad.empty()) return;
      const double g = mut(c).grad[0] * inv;
      mut(a).ensure_grad();
      for (std::size_t i = 0; i < a.size(); ++i) mut(a).grad[i] += g;
    });
  return c;
}

Tensor mean_rows(const Tensor& a) {
  Tape* tape = a.tape();
  const int m = a.rows(), n = a.cols();
  std::vector<double> out(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[j] += a.val(i, j);
  const double inv = 1.0 / m;
  for (double& x : out) x *= inv;
  Tensor c = tape->make({1, n}, std::move(out), a.requires_grad(), "mean_rows");
  if (a.requires_grad())
    tape->record([a, c, m, n, inv]() {
      if (mut(c).grad.empty()) return;
      const auto& g = mut(c).grad;
      mut(a).ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          mut(a).grad[static_cast<std::size_t>(i) * n + j] += g[j] * inv;
    });
  return c;
}

Tensor sum_cols(const Tensor& a) {
  Tape* tape = a.tape();
  const int m = a.rows(), n = a.cols();
  std::vector<double> out(static_cast<std::size_t>(m), 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[i] += a.val(i, j);
  Tensor c = tape->make({m, 1}, std::move(out), a.requires_grad(), "sum_cols");
  if (a.requires_grad())
    tape->record([a, c, m, n]() {
      if (mut(c).grad.empty()) return;
      const auto& g = mut(c).grad;
      mut(a).ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          mut(a).grad[static_cast<std::size_t>(i) * n + j] += g[i];
    });
  return c;
}

Tensor softmax(const Tensor& a) {
  Tape* tape = a.tape();
  const int m = a.rows(), n = a.cols();
  std::vector<double> out(a.size());
  for (int i = 0; i < m; ++i) {
    double mx = a.val(i, 0);
    for (int j = 1; j < n; ++j) mx = std::max(mx, a.val(i, j));
    double denom = 0.0;
    for (int j = 0; j < n; ++j) {
      const double e = std::exp(a.val(i, j) - mx);
      out[static_cast<std::size_t>(i) * n + j] = e;
      denom += e;
    }
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(i) * n + j] /= denom;
  }
  Tensor c = tape->make(a.shape(), std::move(out), a.requires_grad(),
                        "softmax");
  if (a.requires_grad())
    tape->record([a, c, m, n]() {
      if (mut(c).grad.empty()) return;
      const auto& g = mut(c).grad;
      mut(a).ensure_grad();
      for (int i = 0; i < m; ++i) {
        double dot = 0.0;
        for (int j = 0; j < n; ++j)
          dot += g[static_cast<std::size_t>(i) * n + j] * c.val(i, j);
        for (int j = 0; j < n; ++j)
          mut(a).grad[static_cast<std::size_t>(i) * n + j] +=
              c.val(i, j) * (g[static_cast<std::size_t>(i) * n + j] - dot);
      }
    });
  return c;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  Tape* tape = x.tape();
  const int m = x.rows(), n = x.cols();
  if (n < 2) throw ShapeMismatch("layer_norm needs a feature axis >= 2");
  if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 ||
      bias.cols() != n)
    throw ShapeMismatch("layer_norm affine params must be [1," +
                        std::to_string(n) + "]");
  std::vector<double> out(x.size());
  std::vector<double> mean(m), inv_std(m);
  for (int i = 0; i < m; ++i) {
    double mu = 0.0;
    for (int j = 0; j < n; ++j) mu += x.val(i, j);
    mu /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) {
      const double d = x.val(i, j) - mu;
      var += d * d;
    }
    var /= n;
    mean[i] = mu;
    inv_std[i] = 1.0 / std::sqrt(var + kLayerNormEps);
    for (int j = 0; j < n; ++j) {
      const double xhat = (x.val(i, j) - mu) * inv_std[i];
      out[static_cast<std::size_t>(i) * n + j] =
          gain.val(0, j) * xhat + bias.val(0, j);
    }
  }
  const bool rg =
      x.requires_grad() || gain.requires_grad() || bias.requires_grad();
  Tensor c = tape->make(x.shape(), std::move(out), rg, "layer_norm");
  if (rg)
    tape->record([x, gain, bias, c, m, n, mean, inv_std]() {
      if (mut(c).grad.empty()) return;
      const auto& g = mut(c).grad;
      for (int i = 0; i < m; ++i) {
        const double istd = inv_std[i];
        // Recompute xhat row on the fly.
        for (int j = 0; j < n; ++j) {
          const double xhat = (x.val(i, j) - mean[i]) * istd;
          const double gj = g[static_cast<std::size_t>(i) * n + j];
          if (gain.requires_grad()) {
            mut(gain).ensure_grad();
            mut(gain).grad[j] += gj * xhat;
          }
          if (bias.requires_grad()) {
            mut(bias).ensure_grad();
            mut(bias).grad[j] += gj;
          }
        }
        if (x.requires_grad()) {
          mut(x).ensure_grad();
          double sum_gy = 0.0, sum_gy_xhat = 0.0;
          for (int j = 0; j < n; ++j) {
            const double gy = g[static_cast<std::size_t>(i) * n + j] *
                              gain.val(0, j);
            const double xhat = (x.val(i, j) - mean[i]) * istd;
            sum_gy += gy;
            sum_gy_xhat += gy * xhat;
          }
          for (int j = 0; j < n; ++j) {
            const double gy = g[static_cast<std::size_t>(i) * n + j] *
                              gain.val(0, j);
            const double xhat = (x.val(i, j) - mean[i]) * istd;
            mut(x).grad[static_cast<std::size_t>(i) * n + j] +=
                istd * (gy - sum_gy / n - xhat * sum_gy_xhat / n);
          }
        }
      }
    });
  return c;
}

Tensor glu(const Tensor& x, const Tensor& wa, const Tensor& b,
           const Tensor& wb, const Tensor& b_hat) {
  return mul(add_rowvec(matmul(x, wa), b),
             sigmoid(add_rowvec(matmul(x, wb), b_hat)));
}

}  // namespace demo
