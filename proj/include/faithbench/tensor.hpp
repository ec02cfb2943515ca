#ifndef FAITHBENCH_TENSOR_HPP
#define FAITHBENCH_TENSOR_HPP

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace faithbench {

class Tape;

/// Dense 64-bit tensor in row-major order. Copies are shallow: they share
/// the value buffer and are treated as immutable once created. A tensor is
/// either a plain constant (node() < 0) or attached to exactly one Tape.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<int> shape, std::vector<double> values);

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double value);
  static Tensor scalar(double value);
  static Tensor from_vector(std::vector<double> values);
  static Tensor from_matrix(int rows, int cols, std::vector<double> values);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return values_ ? values_->size() : 0; }
  bool defined() const { return static_cast<bool>(values_); }

  const std::vector<double>& values() const { return *values_; }
  std::shared_ptr<const std::vector<double>> buffer() const { return values_; }
  /// In-place access for parameter updates. Mutating a tensor that has been
  /// recorded on a tape invalidates that tape; only the trainer uses this,
  /// on tensors that are not currently watched.
  std::vector<double>& values_mut() { return *values_; }

  double operator[](std::size_t flat) const { return (*values_)[flat]; }
  double at(int row, int col) const;
  double item() const;

  Tape* tape() const { return tape_; }
  int node() const { return node_; }
  bool on_tape() const { return tape_ != nullptr && node_ >= 0; }

  std::string shape_string() const;

 private:
  friend class Tape;
  Tensor(std::vector<int> shape, std::shared_ptr<std::vector<double>> values)
      : shape_(std::move(shape)), values_(std::move(values)) {}
  std::vector<int> shape_;
  std::shared_ptr<std::vector<double>> values_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

std::string shape_string(const std::vector<int>& shape);

/// Reverse-mode gradient tape. Nodes are appended in execution order, so
/// node ids are already a topological order of the recorded graph.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const std::vector<double>& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a constant tensor as a differentiable leaf. Shares the
  /// value buffer; no copy.
  Tensor watch(const Tensor& t);

  /// Records an op result. Used by the op implementations; the backward
  /// closure may capture the same value buffer.
  Tensor record(const char* kind, const std::vector<int>& input_nodes,
                std::vector<int> shape, std::shared_ptr<std::vector<double>> values,
                BackwardFn backward);

  /// Accumulates d(root)/d(node) for every node reachable from root.
  /// root must be scalar. May be called repeatedly; each call recomputes
  /// the gradient map from scratch.
  void backward(const Tensor& root);

  bool has_gradient(int node) const;
  bool has_gradient(const Tensor& t) const;
  const std::vector<double>& gradient(int node) const;
  const std::vector<double>& gradient(const Tensor& t) const;

  /// Gradient buffer of `node` if it participates in the current backward
  /// pass, else nullptr. Called from backward closures.
  std::vector<double>* grad_buffer(int node);

  int num_nodes() const { return static_cast<int>(nodes_.size()); }
  const char* kind(int node) const { return nodes_[static_cast<std::size_t>(node)].kind; }

 private:
  struct Node {
    const char* kind;
    std::vector<int> inputs;
    std::size_t size;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  std::vector<char> reachable_;
};

// ---- recorded operations ------------------------------------------------
// Each op validates shapes (throwing std::invalid_argument naming the
// offending shapes), computes the forward value, and records a node when
// any input lives on a tape. Ops on pure constants stay off-tape.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);           // elementwise
Tensor scalar_mul(const Tensor& a, double c);
Tensor scale(const Tensor& a, const Tensor& s);         // s has shape {1}
Tensor matmul(const Tensor& a, const Tensor& b);        // (m,k)x(k,n) or (m,k)x(k)
Tensor transpose(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor reciprocal(const Tensor& a);
Tensor softmax(const Tensor& a, int axis = -1);
Tensor sum(const Tensor& a, int axis);
Tensor sum_all(const Tensor& a);                        // -> shape {1}
Tensor mean(const Tensor& a, int axis);
Tensor max(const Tensor& a, int axis);                  // ties -> first maximal index
Tensor max_over_time(const Tensor& a);                  // (t,c) -> (c)
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, int start, int len);
Tensor gather_rows(const Tensor& a, std::vector<int> rows);
Tensor pick(const Tensor& a, int flat_index);           // -> shape {1}
Tensor reshape(const Tensor& a, std::vector<int> shape);
Tensor repeat_rows(const Tensor& v, int n);             // (d) -> (n,d)
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);
Tensor conv1d_valid(const Tensor& x, const Tensor& kernels, const Tensor& bias,
                    int width);                         // x:(t,cin) kernels:(cout,width*cin)
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps);                          // per row

}  // namespace faithbench

#endif
