#pragma once

// Dense double-precision tensors with define-by-run reverse-mode autodiff.
//
// A Tensor is a cheap handle onto a graph node. Every op below returns a new
// node that records its parents and a gradient rule; `backward` walks the
// nodes reachable from a scalar root in reverse topological order. Leaves
// created with `Tensor::parameter` accumulate gradients across backward calls
// until `zero_grad` is called. Storage is row-major; rank-2 tensors map onto
// Eigen row-major matrices, rank-0 and rank-1 tensors map onto a single row.
//
// Broadcasting is limited to: a scalar against anything, and a rank-1 `{n}`
// (or `{1, n}`) operand against a rank-2 `{m, n}` operand, repeated over the
// leading batch extent.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace amcl {

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  Eigen::VectorXd value;
  Eigen::VectorXd grad;  // empty until materialized
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return parents.empty(); }
  void accumulate(const Eigen::Ref<const Eigen::VectorXd>& g);
};

}  // namespace detail

class Tensor {
 public:
  /// Scalar constant 0.
  Tensor();

  static Tensor scalar(double value);
  static Tensor constant(Shape shape, Eigen::VectorXd values);
  static Tensor constant(const RowMatrixXd& m);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor filled(Shape shape, double value);

  /// Trainable leaf: gradients accumulate into it.
  static Tensor parameter(Shape shape, Eigen::VectorXd values);
  static Tensor parameter(const RowMatrixXd& m);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return static_cast<std::size_t>(node_->value.size()); }
  /// Leading extent for rank 2, otherwise 1.
  std::size_t rows() const;
  /// Trailing extent for rank >= 1, otherwise 1.
  std::size_t cols() const;

  const Eigen::VectorXd& values() const { return node_->value; }
  Eigen::Map<const RowMatrixXd> matrix() const;
  double item() const;
  double operator[](std::size_t i) const { return node_->value[static_cast<Eigen::Index>(i)]; }
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf(); }
  bool has_grad() const { return node_->grad.size() != 0; }
  /// Gradient; zeros when not yet materialized.
  Eigen::VectorXd grad() const;
  void zero_grad() const;

  /// Mutable access to a leaf's values, for optimizers and finite-difference
  /// probes. Never call while a graph built from this leaf is still in use.
  Eigen::VectorXd& leaf_values();

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// -- elementwise binary (with restricted broadcasting) --
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// Throws DomainError when any divisor entry is zero.
Tensor div(const Tensor& a, const Tensor& b);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator/(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a);
Tensor operator+(const Tensor& a, double b);
Tensor operator+(double a, const Tensor& b);
Tensor operator-(const Tensor& a, double b);
Tensor operator-(double a, const Tensor& b);
Tensor operator*(const Tensor& a, double b);
Tensor operator*(double a, const Tensor& b);
Tensor operator/(const Tensor& a, double b);
Tensor operator/(double a, const Tensor& b);

// -- elementwise unary --
Tensor exp(const Tensor& a);
/// Throws DomainError on non-positive entries.
Tensor log(const Tensor& a);
/// Throws DomainError on non-positive entries.
Tensor sqrt(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor square(const Tensor& a);
/// a^p; throws DomainError on non-positive entries.
Tensor pow(const Tensor& a, double p);
/// 1 / (1 + exp(-a)), evaluated without overflow.
Tensor logistic(const Tensor& a);
/// Elementwise clamp to [lo, hi]; zero gradient where clamped.
Tensor clamp(const Tensor& a, double lo, double hi);

// -- linear algebra --
/// {m, k} x {k, n} -> {m, n}.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// Rank-1 inner product -> scalar.
Tensor dot(const Tensor& a, const Tensor& b);
/// Row-by-row inner product of two {m, n} tensors -> {m}.
Tensor rowwise_dot(const Tensor& a, const Tensor& b);
/// Unit Euclidean norm for a rank-1 tensor, or for every row of a rank-2
/// tensor. Throws DomainError on a zero vector.
Tensor l2_normalize(const Tensor& a);

// -- reductions --
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// {m, n} -> {m}.
Tensor row_sum(const Tensor& a);
/// {m, n} -> {m}.
Tensor row_mean(const Tensor& a);
/// Sum over the leading batch extent: {m, n} -> {n}.
Tensor batch_sum(const Tensor& a);
Tensor batch_mean(const Tensor& a);
/// Numerically stable log(sum(exp(.))) of each row: {m, n} -> {m}.
Tensor logsumexp_rows(const Tensor& a);

// -- structural --
Tensor reshape(const Tensor& a, Shape shape);
/// out[k] = a.values()[indices[k]], laid out with `shape`.
Tensor gather(const Tensor& a, std::vector<std::size_t> indices, Shape shape);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);
/// Diagonal of a square {n, n} tensor -> {n}.
Tensor diagonal(const Tensor& a);

/// Forward value identical to `a`; contributes no gradient to a's ancestors.
Tensor stop_gradient(const Tensor& a);

/// Populate gradients of every node reachable from the scalar `root`.
/// Intermediate gradients are reset first; leaf gradients accumulate.
void backward(const Tensor& root);

/// Topologically ordered view of the graph feeding `root` (for inspection).
struct GraphTrace {
  std::vector<std::string> ops;
  std::vector<std::vector<std::size_t>> parents;
};
GraphTrace trace(const Tensor& root);

void zero_grad(std::span<const Tensor> params);

}  // namespace amcl
