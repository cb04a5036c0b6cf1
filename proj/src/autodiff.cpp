#include "eqgnn/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <unordered_map>
#include <utility>

#include "eqgnn/errors.hpp"

namespace eqgnn::ad {

// ---- Tensor ----------------------------------------------------------------

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeMismatch("tensor data length " + std::to_string(data_.size()) +
                        " does not match shape " + std::to_string(rows) + "x" +
                        std::to_string(cols));
  }
}

Tensor Tensor::column(std::span<const double> v) {
  return Tensor(v.size(), 1, std::vector<double>(v.begin(), v.end()));
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeMismatch("item() on " + shape_str(*this) + " tensor");
  return data_[0];
}

double Tensor::squared_norm() const {
  double s = 0.0;
  for (double v : data_) s += v * v;
  return s;
}

double Tensor::norm() const { return std::sqrt(squared_norm()); }

std::string shape_str(const Tensor& t) {
  std::ostringstream os;
  os << t.rows() << "x" << t.cols();
  return os.str();
}

// ---- trace bookkeeping ---------------------------------------------------

namespace {

thread_local bool g_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

void check_finite(const Tensor& t, const char* op) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) {
      throw NonFiniteValue(std::string("non-finite value produced by ") + op);
    }
  }
}

Var make(Tensor value, std::vector<Var> inputs, BackwardFn fn, const char* op) {
  check_finite(value, op);
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  if (g_grad_enabled) {
    bool any = std::any_of(inputs.begin(), inputs.end(),
                           [](const Var& v) { return v.requires_grad(); });
    if (any) {
      n->inputs = std::move(inputs);
      n->backward = std::move(fn);
      n->requires_grad = true;
    }
  }
  return Var(std::move(n));
}

void require_same(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value())) {
    throw ShapeMismatch(std::string(op) + ": " + shape_str(a.value()) + " vs " +
                        shape_str(b.value()));
  }
}

Tensor zeros_like(const Tensor& t) { return Tensor(t.rows(), t.cols(), 0.0); }

}  // namespace

Var parameter(Tensor value) {
  check_finite(value, "parameter");
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->op = "parameter";
  return Var(std::move(n));
}

Var constant(Tensor value) {
  check_finite(value, "constant");
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = "constant";
  return Var(std::move(n));
}

Var detach(const Var& x) { return constant(x.value()); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---- primitives ------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols() != B.rows()) {
    throw ShapeMismatch("matmul: " + shape_str(A) + " x " + shape_str(B));
  }
  Tensor out(A.rows(), B.cols());
  MutMap(out.data().data(), out.rows(), out.cols()).noalias() =
      ConstMap(A.data().data(), A.rows(), A.cols()) *
      ConstMap(B.data().data(), B.rows(), B.cols());
  return make(std::move(out), {a, b},
              [](const Var& self, const Var& g, const std::vector<bool>& need) {
                const auto& in = self.node()->inputs;
                std::vector<Var> r(2);
                if (need[0]) r[0] = matmul(g, transpose(in[1]));
                if (need[1]) r[1] = matmul(transpose(in[0]), g);
                return r;
              },
              "matmul");
}

Var transpose(const Var& a) {
  const Tensor& A = a.value();
  Tensor out(A.cols(), A.rows());
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j) out(j, i) = A(i, j);
  return make(std::move(out), {a},
              [](const Var&, const Var& g, const std::vector<bool>&) {
                return std::vector<Var>{transpose(g)};
              },
              "transpose");
}

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  Tensor out = a.value();
  const auto bd = b.value().data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] += bd[i];
  return make(std::move(out), {a, b},
              [](const Var&, const Var& g, const std::vector<bool>&) {
                return std::vector<Var>{g, g};
              },
              "add");
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  Tensor out = a.value();
  const auto bd = b.value().data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] -= bd[i];
  return make(std::move(out), {a, b},
              [](const Var&, const Var& g, const std::vector<bool>& need) {
                std::vector<Var> r(2);
                r[0] = g;
                if (need[1]) r[1] = neg(g);
                return r;
              },
              "sub");
}

Var mul(const Var& a, const Var& b) {
  require_same(a, b, "mul");
  Tensor out = a.value();
  const auto bd = b.value().data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] *= bd[i];
  return make(std::move(out), {a, b},
              [](const Var& self, const Var& g, const std::vector<bool>& need) {
                const auto& in = self.node()->inputs;
                std::vector<Var> r(2);
                if (need[0]) r[0] = mul(g, in[1]);
                if (need[1]) r[1] = mul(g, in[0]);
                return r;
              },
              "mul");
}

Var affine(const Var& a, double scale, double shift) {
  Tensor out = a.value();
  for (double& v : out.data()) v = scale * v + shift;
  return make(std::move(out), {a},
              [scale](const Var&, const Var& g, const std::vector<bool>&) {
                return std::vector<Var>{affine(g, scale, 0.0)};
              },
              "affine");
}

Var neg(const Var& a) { return affine(a, -1.0, 0.0); }

Var square(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = v * v;
  return make(std::move(out), {a},
              [](const Var& self, const Var& g, const std::vector<bool>&) {
                return std::vector<Var>{mul(g, affine(self.node()->inputs[0], 2.0, 0.0))};
              },
              "square");
}

Var pow(const Var& a, double p) {
  Tensor out = a.value();
  for (double& v : out.data()) v = std::pow(v, p);
  return make(std::move(out), {a},
              [p](const Var& self, const Var& g, const std::vector<bool>&) {
                const Var& x = self.node()->inputs[0];
                return std::vector<Var>{mul(g, affine(pow(x, p - 1.0), p, 0.0))};
              },
              "pow");
}

Var sigmoid(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = 1.0 / (1.0 + std::exp(-v));
  return make(std::move(out), {a},
              [](const Var& self, const Var& g, const std::vector<bool>&) {
                // s' = s (1 - s), with s the traced output itself.
                return std::vector<Var>{mul(g, mul(self, affine(self, -1.0, 1.0)))};
              },
              "sigmoid");
}

Var tanh(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = std::tanh(v);
  return make(std::move(out), {a},
              [](const Var& self, const Var& g, const std::vector<bool>&) {
                return std::vector<Var>{mul(g, affine(square(self), -1.0, 1.0))};
              },
              "tanh");
}

Var relu(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return make(std::move(out), {a},
              [](const Var& self, const Var& g, const std::vector<bool>&) {
                Tensor mask = self.node()->inputs[0].value();
                for (double& v : mask.data()) v = v > 0.0 ? 1.0 : 0.0;
                return std::vector<Var>{mul(g, constant(std::move(mask)))};
              },
              "relu");
}

Var broadcast_to(const Var& a, std::size_t rows, std::size_t cols) {
  const Tensor& A = a.value();
  if ((A.rows() != 1 && A.rows() != rows) || (A.cols() != 1 && A.cols() != cols)) {
    throw ShapeMismatch("broadcast_to: " + shape_str(A) + " -> " + std::to_string(rows) +
                        "x" + std::to_string(cols));
  }
  if (A.rows() == rows && A.cols() == cols) return a;
  Tensor out(rows, cols);
  const bool rb = A.rows() == 1, cb = A.cols() == 1;
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out(i, j) = A(rb ? 0 : i, cb ? 0 : j);
  const std::size_t r0 = A.rows(), c0 = A.cols();
  return make(std::move(out), {a},
              [r0, c0](const Var&, const Var& g, const std::vector<bool>&) {
                return std::vector<Var>{sum_to(g, r0, c0)};
              },
              "broadcast_to");
}

Var sum_to(const Var& a, std::size_t rows, std::size_t cols) {
  const Tensor& A = a.value();
  if ((rows != 1 && rows != A.rows()) || (cols != 1 && cols != A.cols())) {
    throw ShapeMismatch("sum_to: " + shape_str(A) + " -> " + std::to_string(rows) + "x" +
                        std::to_string(cols));
  }
  if (A.rows() == rows && A.cols() == cols) return a;
  Tensor out(rows, cols);
  const bool rs = rows == 1, cs = cols == 1;
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j) out(rs ? 0 : i, cs ? 0 : j) += A(i, j);
  const std::size_t r0 = A.rows(), c0 = A.cols();
  return make(std::move(out), {a},
              [r0, c0](const Var&, const Var& g, const std::vector<bool>&) {
                return std::vector<Var>{broadcast_to(g, r0, c0)};
              },
              "sum_to");
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_cols: no inputs");
  const std::size_t rows = parts.front().rows();
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ShapeMismatch("concat_cols: row count mismatch");
    widths.push_back(p.cols());
    total += p.cols();
  }
  Tensor out(rows, total);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& P = p.value();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < P.cols(); ++j) out(i, off + j) = P(i, j);
    off += P.cols();
  }
  return make(std::move(out), parts,
              [widths](const Var&, const Var& g, const std::vector<bool>& need) {
                std::vector<Var> r(widths.size());
                std::size_t o = 0;
                for (std::size_t k = 0; k < widths.size(); ++k) {
                  if (need[k]) r[k] = slice_cols(g, o, widths[k]);
                  o += widths[k];
                }
                return r;
              },
              "concat_cols");
}

Var slice_cols(const Var& a, std::size_t offset, std::size_t width) {
  const Tensor& A = a.value();
  if (offset + width > A.cols()) throw ShapeMismatch("slice_cols out of range");
  Tensor out(A.rows(), width);
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < width; ++j) out(i, j) = A(i, offset + j);
  const std::size_t total = A.cols();
  return make(std::move(out), {a},
              [offset, total](const Var&, const Var& g, const std::vector<bool>&) {
                return std::vector<Var>{pad_cols(g, offset, total)};
              },
              "slice_cols");
}

Var pad_cols(const Var& a, std::size_t offset, std::size_t total) {
  const Tensor& A = a.value();
  if (offset + A.cols() > total) throw ShapeMismatch("pad_cols out of range");
  Tensor out(A.rows(), total);
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j) out(i, offset + j) = A(i, j);
  const std::size_t width = A.cols();
  return make(std::move(out), {a},
              [offset, width](const Var&, const Var& g, const std::vector<bool>&) {
                return std::vector<Var>{slice_cols(g, offset, width)};
              },
              "pad_cols");
}

Var gather_rows(const Var& a, std::shared_ptr<const std::vector<std::size_t>> index) {
  const Tensor& A = a.value();
  const auto& idx = *index;
  Tensor out(idx.size(), A.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] >= A.rows()) throw ShapeMismatch("gather_rows: index out of range");
    for (std::size_t j = 0; j < A.cols(); ++j) out(k, j) = A(idx[k], j);
  }
  const std::size_t n = A.rows();
  return make(std::move(out), {a},
              [index, n](const Var&, const Var& g, const std::vector<bool>&) {
                return std::vector<Var>{segment_sum(g, index, n)};
              },
              "gather_rows");
}

Var segment_sum(const Var& a, std::shared_ptr<const std::vector<std::size_t>> index,
                std::size_t segments) {
  const Tensor& A = a.value();
  const auto& idx = *index;
  if (idx.size() != A.rows()) throw ShapeMismatch("segment_sum: index length mismatch");
  Tensor out(segments, A.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] >= segments) throw ShapeMismatch("segment_sum: segment out of range");
    for (std::size_t j = 0; j < A.cols(); ++j) out(idx[k], j) += A(k, j);
  }
  return make(std::move(out), {a},
              [index](const Var&, const Var& g, const std::vector<bool>&) {
                return std::vector<Var>{gather_rows(g, index)};
              },
              "segment_sum");
}

// ---- composites ------------------------------------------------------------

Var reduce_sum(const Var& a) { return sum_to(sum_to(a, 1, a.cols()), 1, 1); }

Var reduce_mean(const Var& a) {
  return affine(reduce_sum(a), 1.0 / static_cast<double>(a.value().size()), 0.0);
}

Var layer_norm_core(const Var& x, double eps) {
  const std::size_t n = x.rows(), k = x.cols();
  const double inv_k = 1.0 / static_cast<double>(k);
  Var mean = affine(sum_to(x, n, 1), inv_k, 0.0);
  Var centered = sub(x, broadcast_to(mean, n, k));
  Var var_eps = affine(sum_to(square(centered), n, 1), inv_k, eps);
  Var inv_std = pow(var_eps, -0.5);
  return mul(centered, broadcast_to(inv_std, n, k));
}

Var euclidean_norm(const Var& a) { return pow(reduce_sum(square(a)), 0.5); }

Var add_bias(const Var& a, const Var& bias) {
  return add(a, broadcast_to(bias, a.rows(), a.cols()));
}

// ---- reverse sweep ----------------------------------------------------------

std::vector<Var> grad(const std::vector<Var>& outputs, const std::vector<Var>& seeds,
                      const std::vector<Var>& wrt, bool create_graph) {
  if (outputs.size() != seeds.size()) throw ShapeMismatch("grad: outputs/seeds mismatch");
  for (std::size_t k = 0; k < outputs.size(); ++k) {
    if (!outputs[k].value().same_shape(seeds[k].value())) {
      throw ShapeMismatch("grad: seed shape " + shape_str(seeds[k].value()) +
                          " vs output " + shape_str(outputs[k].value()));
    }
  }

  std::unordered_map<const Node*, std::size_t> wrt_slot;
  for (std::size_t k = 0; k < wrt.size(); ++k) wrt_slot.emplace(wrt[k].node(), k);

  // Iterative post-order DFS; `depends` marks nodes with a path to some wrt node.
  std::unordered_map<const Node*, bool> depends;
  std::vector<Var> order;
  struct Frame {
    Var var;
    std::size_t next;
  };
  std::vector<Frame> stack;
  for (const Var& out : outputs) {
    if (depends.count(out.node())) continue;
    stack.push_back({out, 0});
    depends.emplace(out.node(), false);
    while (!stack.empty()) {
      Frame& f = stack.back();
      Node* n = f.var.node();
      if (n->requires_grad && f.next < n->inputs.size()) {
        const Var& in = n->inputs[f.next++];
        if (!depends.count(in.node())) {
          depends.emplace(in.node(), false);
          stack.push_back({in, 0});
        }
        continue;
      }
      bool dep = wrt_slot.count(n) > 0;
      if (n->requires_grad) {
        for (const Var& in : n->inputs) dep = dep || depends[in.node()];
      }
      depends[n] = dep;
      order.push_back(f.var);
      stack.pop_back();
    }
  }

  std::optional<NoGradGuard> guard;
  if (!create_graph) guard.emplace();

  std::unordered_map<const Node*, Var> grads;
  auto accumulate = [&grads](const Node* n, const Var& g) {
    auto it = grads.find(n);
    if (it == grads.end()) {
      grads.emplace(n, g);
    } else {
      it->second = add(it->second, g);
    }
  };
  for (std::size_t k = 0; k < outputs.size(); ++k) {
    if (depends[outputs[k].node()]) accumulate(outputs[k].node(), seeds[k]);
  }

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Var& v = *it;
    Node* n = v.node();
    if (!n->requires_grad || n->inputs.empty() || !depends[n]) continue;
    auto git = grads.find(n);
    if (git == grads.end()) continue;
    std::vector<bool> need(n->inputs.size());
    for (std::size_t k = 0; k < need.size(); ++k) need[k] = depends[n->inputs[k].node()];
    Var g = git->second;
    if (!wrt_slot.count(n)) grads.erase(git);
    std::vector<Var> in_grads = n->backward(v, g, need);
    for (std::size_t k = 0; k < need.size(); ++k) {
      if (need[k] && in_grads[k].valid()) accumulate(n->inputs[k].node(), in_grads[k]);
    }
  }

  std::vector<Var> result;
  result.reserve(wrt.size());
  for (const Var& w : wrt) {
    auto git = grads.find(w.node());
    result.push_back(git != grads.end() ? git->second : constant(zeros_like(w.value())));
  }
  return result;
}

Var vjp(const Var& output, const Var& wrt, const Var& v, bool create_graph) {
  return grad({output}, {v}, {wrt}, create_graph).front();
}

}  // namespace eqgnn::ad
