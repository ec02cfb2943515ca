#include "faithbench/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace faithbench {

namespace {

using Values = std::vector<double>;
using Buffer = std::shared_ptr<const Values>;
using Owned = std::shared_ptr<Values>;

std::size_t shape_product(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

[[noreturn]] void shape_error(const std::string& op, const std::string& detail) {
  throw std::invalid_argument(op + ": " + detail);
}

Tape* common_tape(std::initializer_list<const Tensor*> ts, const char* op) {
  Tape* tape = nullptr;
  for (const Tensor* t : ts) {
    if (!t->on_tape()) continue;
    if (tape == nullptr) {
      tape = t->tape();
    } else if (tape != t->tape()) {
      shape_error(op, "inputs recorded on different tapes");
    }
  }
  return tape;
}

Owned make_values(std::size_t n, double fill = 0.0) {
  return std::make_shared<Values>(n, fill);
}

void accumulate(Tape& tape, int node, const Values& v) {
  Values* g = tape.grad_buffer(node);
  if (!g) return;
  for (std::size_t i = 0; i < v.size(); ++i) (*g)[i] += v[i];
}

}  // namespace

std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor(std::vector<int> shape, std::vector<double> values)
    : shape_(std::move(shape)),
      values_(std::make_shared<std::vector<double>>(std::move(values))) {
  if (shape_product(shape_) != values_->size()) {
    throw std::invalid_argument("tensor: shape " + faithbench::shape_string(shape_) +
                                " does not match " + std::to_string(values_->size()) + " values");
  }
}

Tensor Tensor::zeros(std::vector<int> shape) {
  std::size_t n = shape_product(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(std::vector<int> shape, double value) {
  std::size_t n = shape_product(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::from_vector(std::vector<double> values) {
  int n = static_cast<int>(values.size());
  return Tensor({n}, std::move(values));
}

Tensor Tensor::from_matrix(int rows, int cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

double Tensor::at(int row, int col) const {
  if (rank() != 2) throw std::invalid_argument("at(row,col) on tensor of shape " + shape_string());
  return (*values_)[static_cast<std::size_t>(row) * static_cast<std::size_t>(shape_[1]) +
                    static_cast<std::size_t>(col)];
}

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("item() on non-scalar tensor " + shape_string());
  return (*values_)[0];
}

std::string Tensor::shape_string() const { return faithbench::shape_string(shape_); }

// ---- Tape -----------------------------------------------------------------

Tensor Tape::watch(const Tensor& t) {
  if (!t.defined()) throw std::invalid_argument("watch: undefined tensor");
  if (t.on_tape()) {
    if (t.tape() == this) return t;
    throw std::invalid_argument("watch: tensor already belongs to another tape");
  }
  Tensor out = t;  // shares the buffer
  Node node;
  node.kind = "leaf";
  node.size = t.size();
  node.backward = nullptr;
  nodes_.push_back(std::move(node));
  out.tape_ = this;
  out.node_ = static_cast<int>(nodes_.size()) - 1;
  return out;
}

Tensor Tape::record(const char* kind, const std::vector<int>& input_nodes,
                    std::vector<int> shape, std::shared_ptr<std::vector<double>> values,
                    BackwardFn backward) {
  if (shape_product(shape) != values->size()) {
    throw std::invalid_argument(std::string(kind) + ": recorded shape " + shape_string(shape) +
                                " does not match " + std::to_string(values->size()) + " values");
  }
  Node node;
  node.kind = kind;
  node.inputs = input_nodes;
  node.size = values->size();
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  Tensor out(std::move(shape), std::move(values));
  out.tape_ = this;
  out.node_ = static_cast<int>(nodes_.size()) - 1;
  return out;
}

void Tape::backward(const Tensor& root) {
  if (!root.on_tape() || root.tape() != this) {
    throw std::invalid_argument("backward: root is not recorded on this tape");
  }
  if (root.size() != 1) {
    throw std::invalid_argument("backward: root must be scalar, got shape " + root.shape_string());
  }
  const std::size_t n = nodes_.size();
  reachable_.assign(n, 0);
  std::vector<int> stack{root.node()};
  reachable_[static_cast<std::size_t>(root.node())] = 1;
  while (!stack.empty()) {
    int id = stack.back();
    stack.pop_back();
    for (int in : nodes_[static_cast<std::size_t>(id)].inputs) {
      if (in >= 0 && !reachable_[static_cast<std::size_t>(in)]) {
        reachable_[static_cast<std::size_t>(in)] = 1;
        stack.push_back(in);
      }
    }
  }
  grads_.assign(n, {});
  for (std::size_t i = 0; i < n; ++i) {
    if (reachable_[i]) grads_[i].assign(nodes_[i].size, 0.0);
  }
  grads_[static_cast<std::size_t>(root.node())][0] = 1.0;
  for (int id = root.node(); id >= 0; --id) {
    const std::size_t i = static_cast<std::size_t>(id);
    if (!reachable_[i] || !nodes_[i].backward) continue;
    nodes_[i].backward(*this, grads_[i]);
  }
}

bool Tape::has_gradient(int node) const {
  return node >= 0 && static_cast<std::size_t>(node) < grads_.size() &&
         reachable_.size() == grads_.size() && reachable_[static_cast<std::size_t>(node)];
}

bool Tape::has_gradient(const Tensor& t) const {
  return t.on_tape() && t.tape() == this && has_gradient(t.node());
}

const std::vector<double>& Tape::gradient(int node) const {
  if (!has_gradient(node)) {
    throw std::invalid_argument("gradient: node " + std::to_string(node) +
                                " has no gradient (not reachable from the last backward root)");
  }
  return grads_[static_cast<std::size_t>(node)];
}

const std::vector<double>& Tape::gradient(const Tensor& t) const {
  if (!t.on_tape() || t.tape() != this) {
    throw std::invalid_argument("gradient: tensor is not recorded on this tape");
  }
  return gradient(t.node());
}

std::vector<double>* Tape::grad_buffer(int node) {
  if (node < 0) return nullptr;
  const std::size_t i = static_cast<std::size_t>(node);
  if (i >= grads_.size() || !reachable_[i]) return nullptr;
  return &grads_[i];
}

// ---- elementwise binary ops -------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    shape_error("add", "shape mismatch " + a.shape_string() + " vs " + b.shape_string());
  Owned out = make_values(a.size());
  for (std::size_t i = 0; i < out->size(); ++i) (*out)[i] = a[i] + b[i];
  Tape* tape = common_tape({&a, &b}, "add");
  if (!tape) return Tensor(a.shape(), std::move(*out));
  int an = a.node(), bn = b.node();
  return tape->record("add", {an, bn}, a.shape(), std::move(out),
                      [an, bn](Tape& t, const Values& gout) {
                        accumulate(t, an, gout);
                        accumulate(t, bn, gout);
                      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    shape_error("sub", "shape mismatch " + a.shape_string() + " vs " + b.shape_string());
  Owned out = make_values(a.size());
  for (std::size_t i = 0; i < out->size(); ++i) (*out)[i] = a[i] - b[i];
  Tape* tape = common_tape({&a, &b}, "sub");
  if (!tape) return Tensor(a.shape(), std::move(*out));
  int an = a.node(), bn = b.node();
  return tape->record("sub", {an, bn}, a.shape(), std::move(out),
                      [an, bn](Tape& t, const Values& gout) {
                        accumulate(t, an, gout);
                        if (Values* gb = t.grad_buffer(bn))
                          for (std::size_t i = 0; i < gout.size(); ++i) (*gb)[i] -= gout[i];
                      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    shape_error("mul", "shape mismatch " + a.shape_string() + " vs " + b.shape_string());
  Owned out = make_values(a.size());
  for (std::size_t i = 0; i < out->size(); ++i) (*out)[i] = a[i] * b[i];
  Tape* tape = common_tape({&a, &b}, "mul");
  if (!tape) return Tensor(a.shape(), std::move(*out));
  int an = a.node(), bn = b.node();
  Buffer av = a.buffer(), bv = b.buffer();
  return tape->record("mul", {an, bn}, a.shape(), std::move(out),
                      [an, bn, av, bv](Tape& t, const Values& gout) {
                        if (Values* ga = t.grad_buffer(an))
                          for (std::size_t i = 0; i < gout.size(); ++i)
                            (*ga)[i] += gout[i] * (*bv)[i];
                        if (Values* gb = t.grad_buffer(bn))
                          for (std::size_t i = 0; i < gout.size(); ++i)
                            (*gb)[i] += gout[i] * (*av)[i];
                      });
}

Tensor scalar_mul(const Tensor& a, double c) {
  if (!a.defined()) shape_error("scalar_mul", "undefined input");
  Owned out = make_values(a.size());
  for (std::size_t i = 0; i < out->size(); ++i) (*out)[i] = a[i] * c;
  Tape* tape = common_tape({&a}, "scalar_mul");
  if (!tape) return Tensor(a.shape(), std::move(*out));
  int an = a.node();
  return tape->record("scalar_mul", {an}, a.shape(), std::move(out),
                      [an, c](Tape& t, const Values& gout) {
                        if (Values* ga = t.grad_buffer(an))
                          for (std::size_t i = 0; i < gout.size(); ++i) (*ga)[i] += gout[i] * c;
                      });
}

Tensor scale(const Tensor& a, const Tensor& s) {
  if (s.size() != 1)
    shape_error("scale", "scale factor must have shape (1), got " + s.shape_string());
  const double c = s[0];
  Owned out = make_values(a.size());
  for (std::size_t i = 0; i < out->size(); ++i) (*out)[i] = a[i] * c;
  Tape* tape = common_tape({&a, &s}, "scale");
  if (!tape) return Tensor(a.shape(), std::move(*out));
  int an = a.node(), sn = s.node();
  Buffer av = a.buffer();
  return tape->record("scale", {an, sn}, a.shape(), std::move(out),
                      [an, sn, av, c](Tape& t, const Values& gout) {
                        if (Values* ga = t.grad_buffer(an))
                          for (std::size_t i = 0; i < gout.size(); ++i) (*ga)[i] += gout[i] * c;
                        if (Values* gs = t.grad_buffer(sn)) {
                          double acc = 0.0;
                          for (std::size_t i = 0; i < gout.size(); ++i) acc += gout[i] * (*av)[i];
                          (*gs)[0] += acc;
                        }
                      });
}

// ---- matmul / transpose -----------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2) shape_error("matmul", "lhs must be rank 2, got " + a.shape_string());
  const int m = a.dim(0), k = a.dim(1);
  const bool vec = (b.rank() == 1);
  if (!vec && b.rank() != 2)
    shape_error("matmul", "rhs must be rank 1 or 2, got " + b.shape_string());
  const int bk = b.dim(0);
  const int n = vec ? 1 : b.dim(1);
  if (bk != k)
    shape_error("matmul", "incompatible shapes " + a.shape_string() + " and " + b.shape_string());
  Owned out = make_values(static_cast<std::size_t>(m) * static_cast<std::size_t>(n));
  {
    const Values& av = a.values();
    const Values& bv = b.values();
    for (int i = 0; i < m; ++i) {
      const std::size_t ao = static_cast<std::size_t>(i) * k;
      const std::size_t oo = static_cast<std::size_t>(i) * n;
      for (int p = 0; p < k; ++p) {
        const double x = av[ao + p];
        if (x == 0.0) continue;
        const std::size_t bo = static_cast<std::size_t>(p) * n;
        for (int j = 0; j < n; ++j) (*out)[oo + j] += x * bv[bo + j];
      }
    }
  }
  std::vector<int> oshape = vec ? std::vector<int>{m} : std::vector<int>{m, n};
  Tape* tape = common_tape({&a, &b}, "matmul");
  if (!tape) return Tensor(std::move(oshape), std::move(*out));
  int an = a.node(), bn = b.node();
  Buffer av = a.buffer(), bv = b.buffer();
  return tape->record("matmul", {an, bn}, std::move(oshape), std::move(out),
                      [an, bn, av, bv, m, k, n](Tape& t, const Values& gout) {
                        if (Values* ga = t.grad_buffer(an)) {
                          // dA = G x B^T
                          for (int i = 0; i < m; ++i)
                            for (int p = 0; p < k; ++p) {
                              double acc = 0.0;
                              for (int j = 0; j < n; ++j)
                                acc += gout[static_cast<std::size_t>(i) * n + j] *
                                       (*bv)[static_cast<std::size_t>(p) * n + j];
                              (*ga)[static_cast<std::size_t>(i) * k + p] += acc;
                            }
                        }
                        if (Values* gb = t.grad_buffer(bn)) {
                          // dB = A^T x G
                          for (int i = 0; i < m; ++i) {
                            const std::size_t ao = static_cast<std::size_t>(i) * k;
                            const std::size_t go = static_cast<std::size_t>(i) * n;
                            for (int p = 0; p < k; ++p) {
                              const double x = (*av)[ao + p];
                              if (x == 0.0) continue;
                              for (int j = 0; j < n; ++j)
                                (*gb)[static_cast<std::size_t>(p) * n + j] += x * gout[go + j];
                            }
                          }
                        }
                      });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) shape_error("transpose", "needs rank 2, got " + a.shape_string());
  const int m = a.dim(0), n = a.dim(1);
  Owned out = make_values(a.size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      (*out)[static_cast<std::size_t>(j) * m + i] = a[static_cast<std::size_t>(i) * n + j];
  Tape* tape = common_tape({&a}, "transpose");
  if (!tape) return Tensor({n, m}, std::move(*out));
  int an = a.node();
  return tape->record("transpose", {an}, {n, m}, std::move(out),
                      [an, m, n](Tape& t, const Values& gout) {
                        if (Values* ga = t.grad_buffer(an)) {
                          for (int i = 0; i < m; ++i)
                            for (int j = 0; j < n; ++j)
                              (*ga)[static_cast<std::size_t>(i) * n + j] +=
                                  gout[static_cast<std::size_t>(j) * m + i];
                        }
                      });
}

// ---- elementwise unary ops ----------------------------------------------------

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(const char* kind, const Tensor& a, Fwd f, Bwd df) {
  if (!a.defined()) shape_error(kind, "undefined input");
  Owned out = make_values(a.size());
  for (std::size_t i = 0; i < out->size(); ++i) (*out)[i] = f(a[i]);
  Tape* tape = common_tape({&a}, kind);
  if (!tape) return Tensor(a.shape(), std::move(*out));
  int an = a.node();
  Buffer xs = a.buffer();
  Buffer ys = out;
  return tape->record(kind, {an}, a.shape(), std::move(out),
                      [an, xs, ys, df](Tape& t, const Values& gout) {
                        if (Values* ga = t.grad_buffer(an))
                          for (std::size_t i = 0; i < gout.size(); ++i)
                            (*ga)[i] += df((*xs)[i], (*ys)[i], gout[i]);
                      });
}

}  // namespace

Tensor tanh(const Tensor& a) {
  return unary_op(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y, double g) { return g * (1.0 - y * y); });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      "sigmoid", a,
      [](double x) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      },
      [](double, double y, double g) { return g * y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double, double g) { return x > 0.0 ? g : 0.0; });
}

Tensor exp(const Tensor& a) {
  return unary_op(
      "exp", a, [](double x) { return std::exp(x); },
      [](double, double y, double g) { return g * y; });
}

Tensor log(const Tensor& a) {
  return unary_op(
      "log", a, [](double x) { return std::log(x); },
      [](double x, double, double g) { return g / x; });
}

Tensor reciprocal(const Tensor& a) {
  return unary_op(
      "reciprocal", a, [](double x) { return 1.0 / x; },
      [](double, double y, double g) { return -g * y * y; });
}

// ---- softmax -------------------------------------------------------------------

Tensor softmax(const Tensor& a, int axis) {
  int rows, cols;
  if (a.rank() == 1) {
    if (!(axis == -1 || axis == 0))
      shape_error("softmax", "axis " + std::to_string(axis) + " invalid for " + a.shape_string());
    rows = 1;
    cols = a.dim(0);
  } else if (a.rank() == 2) {
    if (!(axis == -1 || axis == 1))
      shape_error("softmax", "only row softmax supported on rank 2, got axis " + std::to_string(axis));
    rows = a.dim(0);
    cols = a.dim(1);
  } else {
    shape_error("softmax", "needs rank 1 or 2, got " + a.shape_string());
  }
  if (cols == 0) shape_error("softmax", "empty axis in " + a.shape_string());
  Owned out = make_values(a.size());
  {
    const Values& in = a.values();
    for (int r = 0; r < rows; ++r) {
      const std::size_t off = static_cast<std::size_t>(r) * cols;
      double mx = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < cols; ++c) mx = std::max(mx, in[off + c]);
      double s = 0.0;
      for (int c = 0; c < cols; ++c) {
        (*out)[off + c] = std::exp(in[off + c] - mx);
        s += (*out)[off + c];
      }
      for (int c = 0; c < cols; ++c) (*out)[off + c] /= s;
    }
  }
  Tape* tape = common_tape({&a}, "softmax");
  if (!tape) return Tensor(a.shape(), std::move(*out));
  int an = a.node();
  Buffer pv = out;
  // exact Jacobian-vector product: ds_i = p_i * (g_i - sum_j g_j p_j)
  return tape->record("softmax", {an}, a.shape(), std::move(out),
                      [an, pv, rows, cols](Tape& t, const Values& gout) {
                        if (Values* ga = t.grad_buffer(an)) {
                          for (int r = 0; r < rows; ++r) {
                            const std::size_t off = static_cast<std::size_t>(r) * cols;
                            double dot = 0.0;
                            for (int c = 0; c < cols; ++c) dot += gout[off + c] * (*pv)[off + c];
                            for (int c = 0; c < cols; ++c)
                              (*ga)[off + c] += (*pv)[off + c] * (gout[off + c] - dot);
                          }
                        }
                      });
}

// ---- reductions -----------------------------------------------------------------

namespace {

void check_axis(const Tensor& a, int axis, const char* op) {
  if (a.rank() != 2) shape_error(op, "axis reduction needs rank 2, got " + a.shape_string());
  if (axis != 0 && axis != 1) shape_error(op, "axis must be 0 or 1");
}

}  // namespace

Tensor sum(const Tensor& a, int axis) {
  check_axis(a, axis, "sum");
  const int m = a.dim(0), n = a.dim(1);
  const int out_len = axis == 0 ? n : m;
  Owned out = make_values(static_cast<std::size_t>(out_len));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      (*out)[static_cast<std::size_t>(axis == 0 ? j : i)] += a[static_cast<std::size_t>(i) * n + j];
  Tape* tape = common_tape({&a}, "sum");
  if (!tape) return Tensor({out_len}, std::move(*out));
  int an = a.node();
  return tape->record("sum", {an}, {out_len}, std::move(out),
                      [an, m, n, axis](Tape& t, const Values& gout) {
                        if (Values* ga = t.grad_buffer(an)) {
                          for (int i = 0; i < m; ++i)
                            for (int j = 0; j < n; ++j)
                              (*ga)[static_cast<std::size_t>(i) * n + j] +=
                                  gout[static_cast<std::size_t>(axis == 0 ? j : i)];
                        }
                      });
}

Tensor sum_all(const Tensor& a) {
  if (!a.defined()) shape_error("sum_all", "undefined input");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
  Tape* tape = common_tape({&a}, "sum_all");
  if (!tape) return Tensor::scalar(s);
  int an = a.node();
  return tape->record("sum_all", {an}, {1}, std::make_shared<Values>(1, s),
                      [an](Tape& t, const Values& gout) {
                        if (Values* ga = t.grad_buffer(an))
                          for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += gout[0];
                      });
}

Tensor mean(const Tensor& a, int axis) {
  check_axis(a, axis, "mean");
  const int m = a.dim(0), n = a.dim(1);
  const int out_len = axis == 0 ? n : m;
  const double denom = axis == 0 ? m : n;
  if (denom == 0.0) shape_error("mean", "empty axis in " + a.shape_string());
  Owned out = make_values(static_cast<std::size_t>(out_len));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      (*out)[static_cast<std::size_t>(axis == 0 ? j : i)] += a[static_cast<std::size_t>(i) * n + j];
  for (double& v : *out) v /= denom;
  Tape* tape = common_tape({&a}, "mean");
  if (!tape) return Tensor({out_len}, std::move(*out));
  int an = a.node();
  return tape->record("mean", {an}, {out_len}, std::move(out),
                      [an, m, n, axis, denom](Tape& t, const Values& gout) {
                        if (Values* ga = t.grad_buffer(an)) {
                          for (int i = 0; i < m; ++i)
                            for (int j = 0; j < n; ++j)
                              (*ga)[static_cast<std::size_t>(i) * n + j] +=
                                  gout[static_cast<std::size_t>(axis == 0 ? j : i)] / denom;
                        }
                      });
}

Tensor max(const Tensor& a, int axis) {
  check_axis(a, axis, "max");
  const int m = a.dim(0), n = a.dim(1);
  const int out_len = axis == 0 ? n : m;
  const int span = axis == 0 ? m : n;
  if (span == 0) shape_error("max", "empty axis in " + a.shape_string());
  Owned out = make_values(static_cast<std::size_t>(out_len));
  std::vector<int> argmax(static_cast<std::size_t>(out_len));
  for (int o = 0; o < out_len; ++o) {
    double best = -std::numeric_limits<double>::infinity();
    int besti = 0;
    for (int s = 0; s < span; ++s) {
      const double v = axis == 0 ? a[static_cast<std::size_t>(s) * n + o]
                                 : a[static_cast<std::size_t>(o) * n + s];
      if (v > best) {  // strict: first maximal index wins on ties
        best = v;
        besti = s;
      }
    }
    (*out)[static_cast<std::size_t>(o)] = best;
    argmax[static_cast<std::size_t>(o)] = besti;
  }
  Tape* tape = common_tape({&a}, "max");
  if (!tape) return Tensor({out_len}, std::move(*out));
  int an = a.node();
  return tape->record("max", {an}, {out_len}, std::move(out),
                      [an, n, axis, argmax = std::move(argmax), out_len](Tape& t,
                                                                         const Values& gout) {
                        if (Values* ga = t.grad_buffer(an)) {
                          for (int o = 0; o < out_len; ++o) {
                            const int s = argmax[static_cast<std::size_t>(o)];
                            const std::size_t idx =
                                axis == 0 ? static_cast<std::size_t>(s) * n + o
                                          : static_cast<std::size_t>(o) * n + s;
                            (*ga)[idx] += gout[static_cast<std::size_t>(o)];
                          }
                        }
                      });
}

Tensor max_over_time(const Tensor& a) { return max(a, 0); }

// ---- shape ops --------------------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) shape_error("concat", "no inputs");
  const int rank = parts[0].rank();
  if (rank != 1 && rank != 2) shape_error("concat", "needs rank 1 or 2 inputs");
  if (rank == 1 && axis != 0) shape_error("concat", "axis must be 0 for rank-1 inputs");
  if (rank == 2 && axis != 0 && axis != 1) shape_error("concat", "axis must be 0 or 1");
  for (const Tensor& p : parts) {
    if (p.rank() != rank)
      shape_error("concat", "mixed ranks: " + parts[0].shape_string() + " vs " + p.shape_string());
    for (int d = 0; d < rank; ++d)
      if (d != axis && p.dim(d) != parts[0].dim(d))
        shape_error("concat",
                    "shape mismatch " + parts[0].shape_string() + " vs " + p.shape_string());
  }
  std::vector<int> oshape = parts[0].shape();
  int total = 0;
  for (const Tensor& p : parts) total += p.dim(axis);
  oshape[static_cast<std::size_t>(axis)] = total;
  const int ocols = rank == 2 ? oshape[1] : 1;

  Owned out = make_values(shape_product(oshape));
  std::vector<int> offsets;
  {
    int off = 0;
    for (const Tensor& p : parts) {
      offsets.push_back(off);
      if (rank == 1) {
        std::copy(p.values().begin(), p.values().end(), out->begin() + off);
      } else if (axis == 0) {
        std::copy(p.values().begin(), p.values().end(),
                  out->begin() + static_cast<std::ptrdiff_t>(off) * ocols);
      } else {
        const int prow = p.dim(0), pcol = p.dim(1);
        for (int i = 0; i < prow; ++i)
          for (int j = 0; j < pcol; ++j)
            (*out)[static_cast<std::size_t>(i) * ocols + off + j] =
                p[static_cast<std::size_t>(i) * pcol + j];
      }
      off += p.dim(axis);
    }
  }

  Tape* tape = nullptr;
  for (const Tensor& p : parts) {
    if (!p.on_tape()) continue;
    if (tape && tape != p.tape()) shape_error("concat", "inputs recorded on different tapes");
    tape = p.tape();
  }
  if (!tape) return Tensor(std::move(oshape), std::move(*out));

  std::vector<int> in_nodes;
  std::vector<std::vector<int>> in_shapes;
  for (const Tensor& p : parts) {
    in_nodes.push_back(p.node());
    in_shapes.push_back(p.shape());
  }
  return tape->record(
      "concat", in_nodes, std::move(oshape), std::move(out),
      [in_nodes, in_shapes = std::move(in_shapes), offsets = std::move(offsets), axis, rank,
       ocols](Tape& t, const Values& gout) {
        for (std::size_t pi = 0; pi < in_nodes.size(); ++pi) {
          Values* g = t.grad_buffer(in_nodes[pi]);
          if (!g) continue;
          const int off = offsets[pi];
          if (rank == 1) {
            const int len = in_shapes[pi][0];
            for (int i = 0; i < len; ++i)
              (*g)[static_cast<std::size_t>(i)] += gout[static_cast<std::size_t>(off + i)];
          } else if (axis == 0) {
            const int prow = in_shapes[pi][0], pcol = in_shapes[pi][1];
            for (int i = 0; i < prow * pcol; ++i)
              (*g)[static_cast<std::size_t>(i)] +=
                  gout[static_cast<std::size_t>(off) * pcol + static_cast<std::size_t>(i)];
          } else {
            const int prow = in_shapes[pi][0], pcol = in_shapes[pi][1];
            for (int i = 0; i < prow; ++i)
              for (int j = 0; j < pcol; ++j)
                (*g)[static_cast<std::size_t>(i) * pcol + j] +=
                    gout[static_cast<std::size_t>(i) * ocols + off + j];
          }
        }
      });
}

Tensor slice(const Tensor& a, int axis, int start, int len) {
  if (a.rank() == 1) {
    if (axis != 0) shape_error("slice", "axis must be 0 for rank-1 input " + a.shape_string());
    if (start < 0 || len <= 0 || start + len > a.dim(0))
      shape_error("slice", "range [" + std::to_string(start) + "," + std::to_string(start + len) +
                               ") out of bounds for " + a.shape_string());
    Owned out = make_values(static_cast<std::size_t>(len));
    std::copy(a.values().begin() + start, a.values().begin() + start + len, out->begin());
    Tape* tape = common_tape({&a}, "slice");
    if (!tape) return Tensor({len}, std::move(*out));
    int an = a.node();
    return tape->record("slice", {an}, {len}, std::move(out),
                        [an, start, len](Tape& t, const Values& gout) {
                          if (Values* g = t.grad_buffer(an))
                            for (int i = 0; i < len; ++i)
                              (*g)[static_cast<std::size_t>(start + i)] +=
                                  gout[static_cast<std::size_t>(i)];
                        });
  }
  if (a.rank() != 2) shape_error("slice", "needs rank 1 or 2, got " + a.shape_string());
  if (axis != 0 && axis != 1) shape_error("slice", "axis must be 0 or 1");
  const int m = a.dim(0), n = a.dim(1);
  const int extent = axis == 0 ? m : n;
  if (start < 0 || len <= 0 || start + len > extent)
    shape_error("slice", "range [" + std::to_string(start) + "," + std::to_string(start + len) +
                             ") out of bounds for " + a.shape_string());
  std::vector<int> oshape = axis == 0 ? std::vector<int>{len, n} : std::vector<int>{m, len};
  Owned out = make_values(shape_product(oshape));
  if (axis == 0) {
    std::copy(a.values().begin() + static_cast<std::ptrdiff_t>(start) * n,
              a.values().begin() + static_cast<std::ptrdiff_t>(start + len) * n, out->begin());
  } else {
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < len; ++j)
        (*out)[static_cast<std::size_t>(i) * len + j] =
            a[static_cast<std::size_t>(i) * n + start + j];
  }
  Tape* tape = common_tape({&a}, "slice");
  if (!tape) return Tensor(std::move(oshape), std::move(*out));
  int an = a.node();
  return tape->record("slice", {an}, std::move(oshape), std::move(out),
                      [an, axis, start, len, m, n](Tape& t, const Values& gout) {
                        if (Values* g = t.grad_buffer(an)) {
                          if (axis == 0) {
                            for (int i = 0; i < len * n; ++i)
                              (*g)[static_cast<std::size_t>(start) * n +
                                   static_cast<std::size_t>(i)] += gout[static_cast<std::size_t>(i)];
                          } else {
                            for (int i = 0; i < m; ++i)
                              for (int j = 0; j < len; ++j)
                                (*g)[static_cast<std::size_t>(i) * n + start + j] +=
                                    gout[static_cast<std::size_t>(i) * len + j];
                          }
                        }
                      });
}

Tensor gather_rows(const Tensor& a, std::vector<int> rows) {
  if (a.rank() != 2) shape_error("gather_rows", "needs rank 2, got " + a.shape_string());
  const int m = a.dim(0), n = a.dim(1);
  if (rows.empty()) shape_error("gather_rows", "empty index list");
  for (int r : rows)
    if (r < 0 || r >= m)
      shape_error("gather_rows",
                  "row " + std::to_string(r) + " out of bounds for " + a.shape_string());
  const int k = static_cast<int>(rows.size());
  Owned out = make_values(static_cast<std::size_t>(k) * n);
  for (int i = 0; i < k; ++i)
    std::copy(
        a.values().begin() + static_cast<std::ptrdiff_t>(rows[static_cast<std::size_t>(i)]) * n,
        a.values().begin() + static_cast<std::ptrdiff_t>(rows[static_cast<std::size_t>(i)] + 1) * n,
        out->begin() + static_cast<std::ptrdiff_t>(i) * n);
  Tape* tape = common_tape({&a}, "gather_rows");
  if (!tape) return Tensor({k, n}, std::move(*out));
  int an = a.node();
  return tape->record("gather_rows", {an}, {k, n}, std::move(out),
                      [an, rows = std::move(rows), n](Tape& t, const Values& gout) {
                        if (Values* g = t.grad_buffer(an)) {
                          for (std::size_t i = 0; i < rows.size(); ++i)
                            for (int j = 0; j < n; ++j)
                              (*g)[static_cast<std::size_t>(rows[i]) * n + j] +=
                                  gout[i * static_cast<std::size_t>(n) + j];
                        }
                      });
}

Tensor pick(const Tensor& a, int flat_index) {
  if (!a.defined()) shape_error("pick", "undefined input");
  if (flat_index < 0 || static_cast<std::size_t>(flat_index) >= a.size())
    shape_error("pick",
                "index " + std::to_string(flat_index) + " out of bounds for " + a.shape_string());
  Tape* tape = common_tape({&a}, "pick");
  if (!tape) return Tensor::scalar(a[static_cast<std::size_t>(flat_index)]);
  int an = a.node();
  return tape->record("pick", {an}, {1},
                      std::make_shared<Values>(1, a[static_cast<std::size_t>(flat_index)]),
                      [an, flat_index](Tape& t, const Values& gout) {
                        if (Values* g = t.grad_buffer(an))
                          (*g)[static_cast<std::size_t>(flat_index)] += gout[0];
                      });
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
  if (shape_product(shape) != a.size())
    shape_error("reshape", "cannot reshape " + a.shape_string() + " to " + shape_string(shape));
  Tape* tape = common_tape({&a}, "reshape");
  if (!tape) {
    Tensor out(std::move(shape), a.values());
    return out;
  }
  int an = a.node();
  return tape->record("reshape", {an}, std::move(shape), std::make_shared<Values>(a.values()),
                      [an](Tape& t, const Values& gout) { accumulate(t, an, gout); });
}

Tensor repeat_rows(const Tensor& v, int n) {
  if (v.rank() != 1) shape_error("repeat_rows", "needs rank 1, got " + v.shape_string());
  if (n <= 0) shape_error("repeat_rows", "row count must be positive");
  const int d = v.dim(0);
  Owned out = make_values(static_cast<std::size_t>(n) * d);
  for (int i = 0; i < n; ++i)
    std::copy(v.values().begin(), v.values().end(),
              out->begin() + static_cast<std::ptrdiff_t>(i) * d);
  Tape* tape = common_tape({&v}, "repeat_rows");
  if (!tape) return Tensor({n, d}, std::move(*out));
  int vn = v.node();
  return tape->record("repeat_rows", {vn}, {n, d}, std::move(out),
                      [vn, n, d](Tape& t, const Values& gout) {
                        if (Values* g = t.grad_buffer(vn)) {
                          for (int i = 0; i < n; ++i)
                            for (int j = 0; j < d; ++j)
                              (*g)[static_cast<std::size_t>(j)] +=
                                  gout[static_cast<std::size_t>(i) * d + j];
                        }
                      });
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  if (table.rank() != 2)
    shape_error("embedding_lookup", "table must be rank 2, got " + table.shape_string());
  if (ids.empty()) shape_error("embedding_lookup", "empty id list");
  const int v = table.dim(0), d = table.dim(1);
  for (int id : ids)
    if (id < 0 || id >= v)
      shape_error("embedding_lookup",
                  "id " + std::to_string(id) + " out of range for table " + table.shape_string());
  const int n = static_cast<int>(ids.size());
  Owned out = make_values(static_cast<std::size_t>(n) * d);
  for (int i = 0; i < n; ++i)
    std::copy(
        table.values().begin() + static_cast<std::ptrdiff_t>(ids[static_cast<std::size_t>(i)]) * d,
        table.values().begin() +
            static_cast<std::ptrdiff_t>(ids[static_cast<std::size_t>(i)] + 1) * d,
        out->begin() + static_cast<std::ptrdiff_t>(i) * d);
  Tape* tape = common_tape({&table}, "embedding_lookup");
  if (!tape) return Tensor({n, d}, std::move(*out));
  int tn = table.node();
  std::vector<int> ids_copy = ids;
  return tape->record("embedding_lookup", {tn}, {n, d}, std::move(out),
                      [tn, ids_copy = std::move(ids_copy), d](Tape& t, const Values& gout) {
                        if (Values* g = t.grad_buffer(tn)) {
                          for (std::size_t i = 0; i < ids_copy.size(); ++i)
                            for (int j = 0; j < d; ++j)
                              (*g)[static_cast<std::size_t>(ids_copy[i]) * d + j] +=
                                  gout[i * static_cast<std::size_t>(d) + j];
                        }
                      });
}

Tensor conv1d_valid(const Tensor& x, const Tensor& kernels, const Tensor& bias, int width) {
  if (x.rank() != 2) shape_error("conv1d", "input must be rank 2, got " + x.shape_string());
  if (kernels.rank() != 2)
    shape_error("conv1d", "kernels must be rank 2, got " + kernels.shape_string());
  const int t_len = x.dim(0), cin = x.dim(1);
  const int cout = kernels.dim(0);
  if (width <= 0) shape_error("conv1d", "kernel width must be positive");
  if (kernels.dim(1) != width * cin)
    shape_error("conv1d", "kernels " + kernels.shape_string() + " incompatible with width " +
                              std::to_string(width) + " x input " + x.shape_string());
  if (t_len < width)
    shape_error("conv1d", "sequence length " + std::to_string(t_len) +
                              " shorter than kernel width " + std::to_string(width));
  const bool has_bias = bias.defined() && bias.size() > 0;
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != cout))
    shape_error("conv1d", "bias " + bias.shape_string() + " incompatible with " +
                              std::to_string(cout) + " output channels");
  const int t_out = t_len - width + 1;
  const int patch = width * cin;
  Owned out = make_values(static_cast<std::size_t>(t_out) * cout);
  for (int p = 0; p < t_out; ++p) {
    const std::size_t xo = static_cast<std::size_t>(p) * cin;
    for (int c = 0; c < cout; ++c) {
      double acc = has_bias ? bias[static_cast<std::size_t>(c)] : 0.0;
      const std::size_t ko = static_cast<std::size_t>(c) * patch;
      for (int q = 0; q < patch; ++q) acc += kernels[ko + q] * x[xo + q];
      (*out)[static_cast<std::size_t>(p) * cout + c] = acc;
    }
  }
  Tape* tape = common_tape({&x, &kernels, &bias}, "conv1d");
  if (!tape) return Tensor({t_out, cout}, std::move(*out));
  int xn = x.node(), kn = kernels.node(), bn = has_bias ? bias.node() : -1;
  Buffer xv = x.buffer(), kv = kernels.buffer();
  return tape->record(
      "conv1d", {xn, kn, bn}, {t_out, cout}, std::move(out),
      [xn, kn, bn, xv, kv, t_out, cout, cin, patch](Tape& t, const Values& gout) {
        Values* gx = t.grad_buffer(xn);
        Values* gk = t.grad_buffer(kn);
        Values* gb = t.grad_buffer(bn);
        for (int p = 0; p < t_out; ++p) {
          const std::size_t xo = static_cast<std::size_t>(p) * cin;
          for (int c = 0; c < cout; ++c) {
            const double go = gout[static_cast<std::size_t>(p) * cout + c];
            if (go == 0.0) continue;
            const std::size_t ko = static_cast<std::size_t>(c) * patch;
            if (gx)
              for (int q = 0; q < patch; ++q) (*gx)[xo + q] += go * (*kv)[ko + q];
            if (gk)
              for (int q = 0; q < patch; ++q) (*gk)[ko + q] += go * (*xv)[xo + q];
            if (gb) (*gb)[static_cast<std::size_t>(c)] += go;
          }
        }
      });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() != 2) shape_error("layer_norm", "input must be rank 2, got " + x.shape_string());
  const int m = x.dim(0), n = x.dim(1);
  if (gain.rank() != 1 || gain.dim(0) != n || bias.rank() != 1 || bias.dim(0) != n)
    shape_error("layer_norm", "gain " + gain.shape_string() + " / bias " + bias.shape_string() +
                                  " incompatible with input " + x.shape_string());
  Owned out = make_values(x.size());
  auto xhat = std::make_shared<Values>(x.size());
  auto inv_sigma = std::make_shared<Values>(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * n;
    double mu = 0.0;
    for (int j = 0; j < n; ++j) mu += x[off + j];
    mu /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) {
      const double d = x[off + j] - mu;
      var += d * d;
    }
    var /= n;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_sigma)[static_cast<std::size_t>(i)] = is;
    for (int j = 0; j < n; ++j) {
      (*xhat)[off + j] = (x[off + j] - mu) * is;
      (*out)[off + j] =
          (*xhat)[off + j] * gain[static_cast<std::size_t>(j)] + bias[static_cast<std::size_t>(j)];
    }
  }
  Tape* tape = common_tape({&x, &gain, &bias}, "layer_norm");
  if (!tape) return Tensor({m, n}, std::move(*out));
  int xn = x.node(), gn = gain.node(), bn = bias.node();
  Buffer gv = gain.buffer();
  return tape->record(
      "layer_norm", {xn, gn, bn}, {m, n}, std::move(out),
      [xn, gn, bn, gv, xhat, inv_sigma, m, n](Tape& t, const Values& gout) {
        Values* gx = t.grad_buffer(xn);
        Values* gg = t.grad_buffer(gn);
        Values* gb = t.grad_buffer(bn);
        for (int i = 0; i < m; ++i) {
          const std::size_t off = static_cast<std::size_t>(i) * n;
          if (gg || gb) {
            for (int j = 0; j < n; ++j) {
              if (gg) (*gg)[static_cast<std::size_t>(j)] += gout[off + j] * (*xhat)[off + j];
              if (gb) (*gb)[static_cast<std::size_t>(j)] += gout[off + j];
            }
          }
          if (gx) {
            // dxhat = gout * gain; dx = is * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
            double m1 = 0.0, m2 = 0.0;
            for (int j = 0; j < n; ++j) {
              const double dxh = gout[off + j] * (*gv)[static_cast<std::size_t>(j)];
              m1 += dxh;
              m2 += dxh * (*xhat)[off + j];
            }
            m1 /= n;
            m2 /= n;
            const double is = (*inv_sigma)[static_cast<std::size_t>(i)];
            for (int j = 0; j < n; ++j) {
              const double dxh = gout[off + j] * (*gv)[static_cast<std::size_t>(j)];
              (*gx)[off + j] += is * (dxh - m1 - (*xhat)[off + j] * m2);
            }
          }
        }
      });
}

}  // namespace faithbench
