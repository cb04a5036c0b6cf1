#pragma once

// Dense 2-D tensors with reverse-mode differentiation over a closed op set.
//
// Every backward rule is itself written in terms of the differentiable ops,
// so gradients computed with `create_graph = true` can be differentiated a
// second time (the grad-of-VJP pattern used by the Jacobian penalty).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace eqgnn::ad {

/// Row-major dense matrix of doubles. Scalars are 1x1.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(1, 1, v); }
  static Tensor column(std::span<const double> v);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool same_shape(const Tensor& o) const noexcept {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& vec() const noexcept { return data_; }

  /// Value of a 1x1 tensor.
  double item() const;
  double squared_norm() const;
  double norm() const;

  bool operator==(const Tensor& o) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

std::string shape_str(const Tensor& t);

class Var;

struct Node;
using BackwardFn = std::function<std::vector<Var>(const Var& self, const Var& grad,
                                                  const std::vector<bool>& need)>;

struct Node {
  Tensor value;
  std::vector<Var> inputs;
  BackwardFn backward;
  bool requires_grad = false;
  const char* op = "leaf";
};

/// Handle to a node of the computation trace. Cheap to copy.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  const Tensor& value() const { return node_->value; }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool valid() const { return static_cast<bool>(node_); }
  const char* op() const { return node_->op; }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Leaf that gradients can be taken with respect to.
Var parameter(Tensor value);
/// Leaf that never receives gradients.
Var constant(Tensor value);
/// Constant copy of `x`'s value (stop-gradient).
Var detach(const Var& x);

bool grad_enabled();

/// While alive, ops on this thread compute values only and record nothing.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// ---- primitive ops -------------------------------------------------------

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
/// scale * a + shift, elementwise.
Var affine(const Var& a, double scale, double shift);
Var square(const Var& a);
/// Elementwise a^p for a > 0 (any a when p is a non-negative integer).
Var pow(const Var& a, double p);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
/// Subgradient convention relu'(0) = 0.
Var relu(const Var& a);

/// Broadcast a 1x1, 1xC or Rx1 tensor to rows x cols.
Var broadcast_to(const Var& a, std::size_t rows, std::size_t cols);
/// Sum over broadcast axes down to rows x cols (each 1 or unchanged).
Var sum_to(const Var& a, std::size_t rows, std::size_t cols);

Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(const Var& a, std::size_t offset, std::size_t width);
Var pad_cols(const Var& a, std::size_t offset, std::size_t total);

/// out[k] = a[index[k]]
Var gather_rows(const Var& a, std::shared_ptr<const std::vector<std::size_t>> index);
/// out[index[k]] += a[k], out has `segments` rows.
Var segment_sum(const Var& a, std::shared_ptr<const std::vector<std::size_t>> index,
                std::size_t segments);

// ---- composites ------------------------------------------------------------

Var reduce_sum(const Var& a);
Var reduce_mean(const Var& a);
/// Row-wise (x - mean) / sqrt(var + eps), population variance over columns.
Var layer_norm_core(const Var& x, double eps = 1e-5);
Var euclidean_norm(const Var& a);
/// a + row-broadcast bias (bias is 1 x cols).
Var add_bias(const Var& a, const Var& bias);
Var neg(const Var& a);

// ---- differentiation -----------------------------------------------------

/// Reverse sweep from `outputs` seeded with `seeds` (same shapes). Returns
/// d(sum_k <seed_k, output_k>)/d(wrt_i) for every entry of `wrt`; entries the
/// outputs do not depend on come back as zeros. With `create_graph` the
/// returned gradients are themselves traced and differentiable.
std::vector<Var> grad(const std::vector<Var>& outputs, const std::vector<Var>& seeds,
                      const std::vector<Var>& wrt, bool create_graph = false);

/// Vector-Jacobian product vᵀ J_f at the traced point for a single output.
Var vjp(const Var& output, const Var& wrt, const Var& v, bool create_graph = false);

}  // namespace eqgnn::ad
