#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "demo/errors.hpp"
#include "demo/params.hpp"

namespace demo {

using Shape = std::vector<int>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense 64-bit float storage plus (lazily allocated) gradient buffer.
struct TensorData {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until the backward pass touches it
  bool requires_grad = false;

  int rows() const { return shape.empty() ? 0 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

class Tape;

/// Value-semantic handle to a node on a tape. Copies share storage.
class Tensor {
 public:
  Tensor() = default;

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return data_->shape; }
  int rows() const { return data_->rows(); }
  int cols() const { return data_->cols(); }
  std::size_t size() const { return data_->value.size(); }
  bool requires_grad() const { return data_->requires_grad; }

  double val(std::size_t i) const { return data_->value[i]; }
  double val(int r, int c) const {
    return data_->value[static_cast<std::size_t>(r) * cols() + c];
  }
  double scalar() const;

  std::span<const double> values() const { return data_->value; }
  std::span<const double> grad() const { return data_->grad; }
  double grad_at(std::size_t i) const {
    return data_->grad.empty() ? 0.0 : data_->grad[i];
  }

  Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  Tensor(Tape* tape, std::shared_ptr<TensorData> data)
      : tape_(tape), data_(std::move(data)) {}

  Tape* tape_ = nullptr;
  std::shared_ptr<TensorData> data_;

  friend TensorData& mut(const Tensor& t);
};

inline TensorData& mut(const Tensor& t) { return *t.data_; }

/// Append-only record of differentiable operations. Insertion order is the
/// topological order; backward() replays it once in reverse. One tape is one
/// single-threaded unit of work.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor tensor(Shape shape, std::vector<double> value,
                bool requires_grad = false);
  Tensor constant(Shape shape, std::vector<double> value);
  Tensor zeros(Shape shape, bool requires_grad = false);
  Tensor full(Shape shape, double fill);
  Tensor scalar_tensor(double v);

  /// Lease a stored parameter onto this tape. The leaf copies the parameter
  /// value; after backward(), the accumulated leaf gradient is added onto
  /// Param::grad. Repeated leases of one parameter share a single leaf.
  Tensor lease(Param& p);

  /// Reverse sweep from a scalar loss, then fold leaf gradients back into
  /// their parameters.
  void backward(const Tensor& loss);

  std::size_t node_count() const { return steps_.size(); }

  // Used by the op implementations.
  Tensor make(Shape shape, std::vector<double> value, bool requires_grad,
              const char* op_name);
  void record(std::function<void()> backprop) {
    steps_.push_back(std::move(backprop));
  }

 private:
  std::vector<std::function<void()>> steps_;
  std::vector<std::pair<Param*, std::shared_ptr<TensorData>>> leases_;
};

// ---- elementwise / structural ops ----

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
/// c[i,j] = a[i,j] + v[0,j]
Tensor add_rowvec(const Tensor& a, const Tensor& v);
/// c[i,j] = a[i,j] * v[0,j]
Tensor mul_rowvec(const Tensor& a, const Tensor& v);
/// c[i,j] = a[i,j] * v[i,0]
Tensor mul_colvec(const Tensor& a, const Tensor& v);
/// c = a * s with scalar tensor s (gradient flows to both)
Tensor mul_scalar_t(const Tensor& a, const Tensor& s);
Tensor add_scalar_t(const Tensor& a, const Tensor& s);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, int start, int len);
Tensor slice_cols(const Tensor& a, int start, int len);
Tensor reshape(const Tensor& a, Shape shape);

Tensor reduce_sum(const Tensor& a);
Tensor reduce_mean(const Tensor& a);
/// Mean over axis 0: [m,n] -> [1,n]
Tensor mean_rows(const Tensor& a);
/// Sum over axis 1: [m,n] -> [m,1]
Tensor sum_cols(const Tensor& a);

// ---- nonlinearities ----

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh_t(const Tensor& a);
/// Exact-erf GELU: x * Phi(x).
Tensor gelu(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor sin_t(const Tensor& a);
Tensor cos_t(const Tensor& a);
Tensor exp_t(const Tensor& a);
Tensor log_t(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sqrt_t(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);
/// Sign-preserving |a| >= floor (zero maps to +floor).
Tensor clamp_min_abs(const Tensor& a, double floor);

/// Row softmax (axis=1) with max-subtraction stabilization.
Tensor softmax(const Tensor& a);
/// Normalization over the feature (last) axis, eps = 1e-5, then affine.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);

/// (x Wa + b) elementwise-gated by sigmoid(x Wb + b_hat).
Tensor glu(const Tensor& x, const Tensor& wa, const Tensor& b,
           const Tensor& wb, const Tensor& b_hat);

}  // namespace demo
