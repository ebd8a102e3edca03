#include "amcl/tensor.hpp"

#include "amcl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace amcl {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;
using Eigen::ArrayXd;
using Eigen::Index;
using Eigen::VectorXd;

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (const auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

void Node::accumulate(const Eigen::Ref<const VectorXd>& g) {
  if (!requires_grad) return;
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

namespace {

NodePtr new_node(Shape shape, VectorXd value, bool requires_grad) {
  if (numel(shape) != static_cast<std::size_t>(value.size())) {
    throw ContractViolation("tensor: shape " + to_string(shape) + " does not match " +
                            std::to_string(value.size()) + " values");
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

Tensor make(const char* op, Shape shape, VectorXd value, std::vector<NodePtr> parents,
            std::function<void(Node&)> rule) {
  auto n = new_node(std::move(shape), std::move(value), false);
  n->op = op;
  const bool any = std::any_of(parents.begin(), parents.end(),
                               [](const NodePtr& p) { return p->requires_grad; });
  if (any) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward = std::move(rule);
  }
  return Tensor(std::move(n));
}

Eigen::Map<const RowMatrixXd> as_matrix(const VectorXd& v, Index rows, Index cols) {
  return Eigen::Map<const RowMatrixXd>(v.data(), rows, cols);
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw ContractViolation(std::string(op) + ": shape mismatch " + to_string(a) + " vs " +
                          to_string(b));
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw ContractViolation(std::string(op) + ": expected rank " + std::to_string(rank) +
                            ", got shape " + to_string(t.shape()));
  }
}

// -- broadcasting --

enum class Operand { full, scalar, row };

struct Broadcast {
  Operand a = Operand::full;
  Operand b = Operand::full;
  Shape out;
  Index rows = 1;
  Index cols = 1;
};

bool row_shaped(const Shape& s) { return s.size() == 1 || (s.size() == 2 && s[0] == 1); }

Broadcast resolve(const char* op, const Shape& a, const Shape& b) {
  Broadcast bc;
  if (a == b) {
    bc.out = a;
  } else if (numel(b) == 1 && (numel(a) != 1 || a.size() >= b.size())) {
    bc.b = Operand::scalar;
    bc.out = a;
  } else if (numel(a) == 1) {
    bc.a = Operand::scalar;
    bc.out = b;
  } else if (a.size() == 2 && row_shaped(b) && b.back() == a[1]) {
    bc.b = Operand::row;
    bc.out = a;
  } else if (b.size() == 2 && row_shaped(a) && a.back() == b[1]) {
    bc.a = Operand::row;
    bc.out = b;
  } else {
    shape_error(op, a, b);
  }
  if (bc.out.size() == 2) {
    bc.rows = static_cast<Index>(bc.out[0]);
    bc.cols = static_cast<Index>(bc.out[1]);
  } else {
    bc.cols = static_cast<Index>(numel(bc.out));
  }
  return bc;
}

ArrayXd expand(const VectorXd& v, Operand kind, const Broadcast& bc) {
  switch (kind) {
    case Operand::full:
      return v.array();
    case Operand::scalar:
      return ArrayXd::Constant(bc.rows * bc.cols, v[0]);
    case Operand::row: {
      ArrayXd out(bc.rows * bc.cols);
      Eigen::Map<RowMatrixXd>(out.data(), bc.rows, bc.cols) = v.transpose().replicate(bc.rows, 1);
      return out;
    }
  }
  return {};
}

VectorXd reduce(const ArrayXd& g, Operand kind, const Broadcast& bc) {
  switch (kind) {
    case Operand::full:
      return g.matrix();
    case Operand::scalar:
      return VectorXd::Constant(1, g.sum());
    case Operand::row:
      return as_matrix(g.matrix(), bc.rows, bc.cols).colwise().sum().transpose();
  }
  return {};
}

// fwd(ea, eb) -> out; partials(ea, eb, out, gout) -> {ga, gb} over the full extent.
template <class Fwd, class Partials>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, Partials partials) {
  const Broadcast bc = resolve(op, a.shape(), b.shape());
  const ArrayXd ea = expand(a.values(), bc.a, bc);
  const ArrayXd eb = expand(b.values(), bc.b, bc);
  VectorXd out = fwd(ea, eb).matrix();
  return make(op, bc.out, std::move(out), {a.node(), b.node()},
              [bc, partials](Node& self) {
                Node& pa = *self.parents[0];
                Node& pb = *self.parents[1];
                const ArrayXd xa = expand(pa.value, bc.a, bc);
                const ArrayXd xb = expand(pb.value, bc.b, bc);
                const auto [ga, gb] = partials(xa, xb, self.value.array(), self.grad.array());
                if (pa.requires_grad) pa.accumulate(reduce(ga, bc.a, bc));
                if (pb.requires_grad) pb.accumulate(reduce(gb, bc.b, bc));
              });
}

// fwd(x) -> y; deriv(x, y) -> dy/dx elementwise.
template <class Fwd, class Deriv>
Tensor unary(const char* op, const Tensor& a, Fwd fwd, Deriv deriv) {
  VectorXd out = fwd(a.values().array()).matrix();
  return make(op, a.shape(), std::move(out), {a.node()}, [deriv](Node& self) {
    Node& p = *self.parents[0];
    const ArrayXd g = self.grad.array() * deriv(p.value.array(), self.value.array());
    p.accumulate(g.matrix());
  });
}

void require_positive(const char* op, const Tensor& a) {
  for (Index i = 0; i < a.values().size(); ++i) {
    if (!(a.values()[i] > 0.0)) {
      std::ostringstream os;
      os << op << ": argument must be strictly positive, got " << a.values()[i] << " at index "
         << i;
      throw DomainError(os.str());
    }
  }
}

}  // namespace

// -- Tensor --

Tensor::Tensor() : node_(new_node({}, VectorXd::Zero(1), false)) {}

Tensor Tensor::scalar(double value) { return Tensor(new_node({}, VectorXd::Constant(1, value), false)); }

Tensor Tensor::constant(Shape shape, VectorXd values) {
  return Tensor(new_node(std::move(shape), std::move(values), false));
}

Tensor Tensor::constant(const RowMatrixXd& m) {
  VectorXd v = Eigen::Map<const VectorXd>(m.data(), m.size());
  return constant({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                  std::move(v));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  VectorXd v(static_cast<Index>(values.size()));
  Index i = 0;
  for (const double x : values) v[i++] = x;
  return constant({values.size()}, std::move(v));
}

Tensor Tensor::filled(Shape shape, double value) {
  const auto n = static_cast<Index>(numel(shape));
  return constant(std::move(shape), VectorXd::Constant(n, value));
}

Tensor Tensor::parameter(Shape shape, VectorXd values) {
  return Tensor(new_node(std::move(shape), std::move(values), true));
}

Tensor Tensor::parameter(const RowMatrixXd& m) {
  VectorXd v = Eigen::Map<const VectorXd>(m.data(), m.size());
  return parameter({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                   std::move(v));
}

std::size_t Tensor::rows() const {
  const std::size_t c = cols();
  return c == 0 ? 0 : size() / c;
}

std::size_t Tensor::cols() const { return shape().empty() ? 1 : shape().back(); }

Eigen::Map<const RowMatrixXd> Tensor::matrix() const {
  return as_matrix(node_->value, static_cast<Index>(rows()), static_cast<Index>(cols()));
}

double Tensor::item() const {
  if (size() != 1) throw ContractViolation("item: tensor of shape " + to_string(shape()) + " is not a scalar");
  return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return node_->value[static_cast<Index>(r * cols() + c)];
}

VectorXd Tensor::grad() const {
  if (node_->grad.size() == 0) return VectorXd::Zero(node_->value.size());
  return node_->grad;
}

void Tensor::zero_grad() const { node_->grad.resize(0); }

VectorXd& Tensor::leaf_values() {
  if (!node_->is_leaf()) throw ContractViolation("leaf_values: tensor is produced by op '" + std::string(node_->op) + "'");
  return node_->value;
}

// -- binary --

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](const ArrayXd& x, const ArrayXd& y) { return ArrayXd(x + y); },
      [](const ArrayXd&, const ArrayXd&, const ArrayXd&, const ArrayXd& g) {
        return std::pair<ArrayXd, ArrayXd>{g, g};
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](const ArrayXd& x, const ArrayXd& y) { return ArrayXd(x - y); },
      [](const ArrayXd&, const ArrayXd&, const ArrayXd&, const ArrayXd& g) {
        return std::pair<ArrayXd, ArrayXd>{g, -g};
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](const ArrayXd& x, const ArrayXd& y) { return ArrayXd(x * y); },
      [](const ArrayXd& x, const ArrayXd& y, const ArrayXd&, const ArrayXd& g) {
        return std::pair<ArrayXd, ArrayXd>{g * y, g * x};
      });
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (Index i = 0; i < b.values().size(); ++i) {
    if (b.values()[i] == 0.0) {
      throw DomainError("div: zero divisor at index " + std::to_string(i));
    }
  }
  return binary(
      "div", a, b, [](const ArrayXd& x, const ArrayXd& y) { return ArrayXd(x / y); },
      [](const ArrayXd&, const ArrayXd& y, const ArrayXd& out, const ArrayXd& g) {
        return std::pair<ArrayXd, ArrayXd>{g / y, -g * out / y};
      });
}

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
Tensor operator-(const Tensor& a) { return mul(a, Tensor::scalar(-1.0)); }
Tensor operator+(const Tensor& a, double b) { return add(a, Tensor::scalar(b)); }
Tensor operator+(double a, const Tensor& b) { return add(Tensor::scalar(a), b); }
Tensor operator-(const Tensor& a, double b) { return sub(a, Tensor::scalar(b)); }
Tensor operator-(double a, const Tensor& b) { return sub(Tensor::scalar(a), b); }
Tensor operator*(const Tensor& a, double b) { return mul(a, Tensor::scalar(b)); }
Tensor operator*(double a, const Tensor& b) { return mul(Tensor::scalar(a), b); }
Tensor operator/(const Tensor& a, double b) { return div(a, Tensor::scalar(b)); }
Tensor operator/(double a, const Tensor& b) { return div(Tensor::scalar(a), b); }

// -- unary --

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](const ArrayXd& x) { return ArrayXd(x.exp()); },
      [](const ArrayXd&, const ArrayXd& y) { return y; });
}

Tensor log(const Tensor& a) {
  require_positive("log", a);
  return unary(
      "log", a, [](const ArrayXd& x) { return ArrayXd(x.log()); },
      [](const ArrayXd& x, const ArrayXd&) { return ArrayXd(x.inverse()); });
}

Tensor sqrt(const Tensor& a) {
  require_positive("sqrt", a);
  return unary(
      "sqrt", a, [](const ArrayXd& x) { return ArrayXd(x.sqrt()); },
      [](const ArrayXd&, const ArrayXd& y) { return ArrayXd(0.5 / y); });
}

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](const ArrayXd& x) { return ArrayXd(x.max(0.0)); },
      [](const ArrayXd& x, const ArrayXd&) { return ArrayXd((x > 0.0).cast<double>()); });
}

Tensor square(const Tensor& a) {
  return unary(
      "square", a, [](const ArrayXd& x) { return ArrayXd(x.square()); },
      [](const ArrayXd& x, const ArrayXd&) { return ArrayXd(2.0 * x); });
}

Tensor pow(const Tensor& a, double p) {
  require_positive("pow", a);
  return unary(
      "pow", a, [p](const ArrayXd& x) { return ArrayXd(x.pow(p)); },
      [p](const ArrayXd& x, const ArrayXd&) { return ArrayXd(p * x.pow(p - 1.0)); });
}

Tensor logistic(const Tensor& a) {
  return unary(
      "logistic", a,
      [](const ArrayXd& x) {
        return ArrayXd(x.unaryExpr([](double v) {
          if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
          const double e = std::exp(v);
          return e / (1.0 + e);
        }));
      },
      [](const ArrayXd&, const ArrayXd& y) { return ArrayXd(y * (1.0 - y)); });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  return unary(
      "clamp", a, [lo, hi](const ArrayXd& x) { return ArrayXd(x.max(lo).min(hi)); },
      [lo, hi](const ArrayXd& x, const ArrayXd&) {
        return ArrayXd(((x >= lo) && (x <= hi)).cast<double>());
      });
}

// -- linear algebra --

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  if (a.shape()[1] != b.shape()[0]) shape_error("matmul", a.shape(), b.shape());
  const Index m = static_cast<Index>(a.shape()[0]);
  const Index n = static_cast<Index>(b.shape()[1]);
  RowMatrixXd out = a.matrix() * b.matrix();
  return make("matmul", {a.shape()[0], b.shape()[1]}, Eigen::Map<VectorXd>(out.data(), out.size()),
              {a.node(), b.node()}, [m, n](Node& self) {
                Node& pa = *self.parents[0];
                Node& pb = *self.parents[1];
                const Index k = static_cast<Index>(pa.shape[1]);
                const auto g = as_matrix(self.grad, m, n);
                if (pa.requires_grad) {
                  RowMatrixXd ga = g * as_matrix(pb.value, k, n).transpose();
                  pa.accumulate(Eigen::Map<const VectorXd>(ga.data(), ga.size()));
                }
                if (pb.requires_grad) {
                  RowMatrixXd gb = as_matrix(pa.value, m, k).transpose() * g;
                  pb.accumulate(Eigen::Map<const VectorXd>(gb.data(), gb.size()));
                }
              });
}

Tensor transpose(const Tensor& a) {
  require_rank("transpose", a, 2);
  const Index m = static_cast<Index>(a.shape()[0]);
  const Index n = static_cast<Index>(a.shape()[1]);
  RowMatrixXd out = a.matrix().transpose();
  return make("transpose", {a.shape()[1], a.shape()[0]},
              Eigen::Map<VectorXd>(out.data(), out.size()), {a.node()}, [m, n](Node& self) {
                RowMatrixXd g = as_matrix(self.grad, n, m).transpose();
                self.parents[0]->accumulate(Eigen::Map<const VectorXd>(g.data(), g.size()));
              });
}

Tensor dot(const Tensor& a, const Tensor& b) {
  require_rank("dot", a, 1);
  if (a.shape() != b.shape()) shape_error("dot", a.shape(), b.shape());
  return make("dot", {}, VectorXd::Constant(1, a.values().dot(b.values())), {a.node(), b.node()},
              [](Node& self) {
                const double g = self.grad[0];
                Node& pa = *self.parents[0];
                Node& pb = *self.parents[1];
                if (pa.requires_grad) pa.accumulate(g * pb.value);
                if (pb.requires_grad) pb.accumulate(g * pa.value);
              });
}

Tensor rowwise_dot(const Tensor& a, const Tensor& b) {
  require_rank("rowwise_dot", a, 2);
  if (a.shape() != b.shape()) shape_error("rowwise_dot", a.shape(), b.shape());
  const Index m = static_cast<Index>(a.shape()[0]);
  const Index n = static_cast<Index>(a.shape()[1]);
  VectorXd out = a.matrix().cwiseProduct(b.matrix()).rowwise().sum();
  return make("rowwise_dot", {a.shape()[0]}, std::move(out), {a.node(), b.node()},
              [m, n](Node& self) {
                Node& pa = *self.parents[0];
                Node& pb = *self.parents[1];
                if (pa.requires_grad) {
                  RowMatrixXd ga = as_matrix(pb.value, m, n).array().colwise() * self.grad.array();
                  pa.accumulate(Eigen::Map<const VectorXd>(ga.data(), ga.size()));
                }
                if (pb.requires_grad) {
                  RowMatrixXd gb = as_matrix(pa.value, m, n).array().colwise() * self.grad.array();
                  pb.accumulate(Eigen::Map<const VectorXd>(gb.data(), gb.size()));
                }
              });
}

Tensor l2_normalize(const Tensor& a) {
  if (a.rank() != 1 && a.rank() != 2) {
    throw ContractViolation("l2_normalize: expected rank 1 or 2, got shape " + to_string(a.shape()));
  }
  const Index m = static_cast<Index>(a.rows());
  const Index n = static_cast<Index>(a.cols());
  const auto x = a.matrix();
  const VectorXd norms = x.rowwise().norm();
  for (Index i = 0; i < m; ++i) {
    if (!(norms[i] > 0.0)) {
      throw DomainError("l2_normalize: zero vector at row " + std::to_string(i));
    }
  }
  RowMatrixXd y = x.array().colwise() / norms.array();
  return make("l2_normalize", a.shape(), Eigen::Map<VectorXd>(y.data(), y.size()), {a.node()},
              [m, n, norms](Node& self) {
                const auto yv = as_matrix(self.value, m, n);
                const auto g = as_matrix(self.grad, m, n);
                const VectorXd proj = yv.cwiseProduct(g).rowwise().sum();
                RowMatrixXd gx = (g - (yv.array().colwise() * proj.array()).matrix());
                gx.array().colwise() /= norms.array();
                self.parents[0]->accumulate(Eigen::Map<const VectorXd>(gx.data(), gx.size()));
              });
}

// -- reductions --

Tensor sum(const Tensor& a) {
  return make("sum", {}, VectorXd::Constant(1, a.values().sum()), {a.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    p.accumulate(VectorXd::Constant(p.value.size(), self.grad[0]));
  });
}

Tensor mean(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.size());
  return make("mean", {}, VectorXd::Constant(1, a.values().sum() * inv), {a.node()},
              [inv](Node& self) {
                Node& p = *self.parents[0];
                p.accumulate(VectorXd::Constant(p.value.size(), self.grad[0] * inv));
              });
}

Tensor row_sum(const Tensor& a) {
  require_rank("row_sum", a, 2);
  const Index m = static_cast<Index>(a.shape()[0]);
  const Index n = static_cast<Index>(a.shape()[1]);
  VectorXd out = a.matrix().rowwise().sum();
  return make("row_sum", {a.shape()[0]}, std::move(out), {a.node()}, [m, n](Node& self) {
    RowMatrixXd g = self.grad.replicate(1, n);
    self.parents[0]->accumulate(Eigen::Map<const VectorXd>(g.data(), m * n));
  });
}

Tensor row_mean(const Tensor& a) {
  require_rank("row_mean", a, 2);
  return row_sum(a) / static_cast<double>(a.shape()[1]);
}

Tensor batch_sum(const Tensor& a) {
  require_rank("batch_sum", a, 2);
  const Index m = static_cast<Index>(a.shape()[0]);
  const Index n = static_cast<Index>(a.shape()[1]);
  VectorXd out = a.matrix().colwise().sum().transpose();
  return make("batch_sum", {a.shape()[1]}, std::move(out), {a.node()}, [m, n](Node& self) {
    RowMatrixXd g = self.grad.transpose().replicate(m, 1);
    self.parents[0]->accumulate(Eigen::Map<const VectorXd>(g.data(), m * n));
  });
}

Tensor batch_mean(const Tensor& a) {
  require_rank("batch_mean", a, 2);
  return batch_sum(a) / static_cast<double>(a.shape()[0]);
}

Tensor logsumexp_rows(const Tensor& a) {
  require_rank("logsumexp_rows", a, 2);
  const Index m = static_cast<Index>(a.shape()[0]);
  const Index n = static_cast<Index>(a.shape()[1]);
  const auto x = a.matrix();
  const VectorXd mx = x.rowwise().maxCoeff();
  RowMatrixXd soft = (x.colwise() - mx).array().exp();
  const VectorXd z = soft.rowwise().sum();
  soft.array().colwise() /= z.array();
  VectorXd out = mx.array() + z.array().log();
  return make("logsumexp_rows", {a.shape()[0]}, std::move(out), {a.node()},
              [m, n, soft](Node& self) {
                RowMatrixXd g = soft.array().colwise() * self.grad.array();
                self.parents[0]->accumulate(Eigen::Map<const VectorXd>(g.data(), m * n));
              });
}

// -- structural --

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) shape_error("reshape", a.shape(), shape);
  return make("reshape", std::move(shape), a.values(), {a.node()},
              [](Node& self) { self.parents[0]->accumulate(self.grad); });
}

Tensor gather(const Tensor& a, std::vector<std::size_t> indices, Shape shape) {
  if (numel(shape) != indices.size()) {
    throw ContractViolation("gather: shape " + to_string(shape) + " does not match " +
                            std::to_string(indices.size()) + " indices");
  }
  VectorXd out(static_cast<Index>(indices.size()));
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= a.size()) {
      throw ContractViolation("gather: index " + std::to_string(indices[k]) +
                              " out of range for shape " + to_string(a.shape()));
    }
    out[static_cast<Index>(k)] = a.values()[static_cast<Index>(indices[k])];
  }
  return make("gather", std::move(shape), std::move(out), {a.node()},
              [idx = std::move(indices)](Node& self) {
                Node& p = *self.parents[0];
                VectorXd g = VectorXd::Zero(p.value.size());
                for (std::size_t k = 0; k < idx.size(); ++k) {
                  g[static_cast<Index>(idx[k])] += self.grad[static_cast<Index>(k)];
                }
                p.accumulate(g);
              });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_rank("concat_cols", a, 2);
  require_rank("concat_cols", b, 2);
  if (a.shape()[0] != b.shape()[0]) shape_error("concat_cols", a.shape(), b.shape());
  const Index m = static_cast<Index>(a.shape()[0]);
  const Index p = static_cast<Index>(a.shape()[1]);
  const Index q = static_cast<Index>(b.shape()[1]);
  RowMatrixXd out(m, p + q);
  out << a.matrix(), b.matrix();
  return make("concat_cols", {a.shape()[0], a.shape()[1] + b.shape()[1]},
              Eigen::Map<VectorXd>(out.data(), out.size()), {a.node(), b.node()},
              [m, p, q](Node& self) {
                const auto g = as_matrix(self.grad, m, p + q);
                Node& pa = *self.parents[0];
                Node& pb = *self.parents[1];
                if (pa.requires_grad) {
                  RowMatrixXd ga = g.leftCols(p);
                  pa.accumulate(Eigen::Map<const VectorXd>(ga.data(), ga.size()));
                }
                if (pb.requires_grad) {
                  RowMatrixXd gb = g.rightCols(q);
                  pb.accumulate(Eigen::Map<const VectorXd>(gb.data(), gb.size()));
                }
              });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  require_rank("concat_rows", a, 2);
  require_rank("concat_rows", b, 2);
  if (a.shape()[1] != b.shape()[1]) shape_error("concat_rows", a.shape(), b.shape());
  VectorXd out(static_cast<Index>(a.size() + b.size()));
  out << a.values(), b.values();
  const Index split = static_cast<Index>(a.size());
  const Index rest = static_cast<Index>(b.size());
  return make("concat_rows", {a.shape()[0] + b.shape()[0], a.shape()[1]}, std::move(out),
              {a.node(), b.node()}, [split, rest](Node& self) {
                self.parents[0]->accumulate(self.grad.head(split));
                self.parents[1]->accumulate(self.grad.tail(rest));
              });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
  require_rank("slice_rows", a, 2);
  if (begin + count > a.shape()[0]) {
    throw ContractViolation("slice_rows: rows [" + std::to_string(begin) + ", " +
                            std::to_string(begin + count) + ") out of range for shape " +
                            to_string(a.shape()));
  }
  const std::size_t n = a.shape()[1];
  std::vector<std::size_t> idx(count * n);
  for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = begin * n + k;
  return gather(a, std::move(idx), {count, n});
}

Tensor diagonal(const Tensor& a) {
  require_rank("diagonal", a, 2);
  if (a.shape()[0] != a.shape()[1]) shape_error("diagonal", a.shape(), {a.shape()[0], a.shape()[0]});
  const std::size_t n = a.shape()[0];
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i * n + i;
  return gather(a, std::move(idx), {n});
}

Tensor stop_gradient(const Tensor& a) {
  auto n = new_node(a.shape(), a.values(), false);
  n->op = "stop_gradient";
  return Tensor(std::move(n));
}

// -- backward --

namespace {

std::vector<Node*> topo_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  // Iterative post-order DFS: (node, next parent index).
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

void backward(const Tensor& root) {
  if (root.size() != 1) {
    throw ContractViolation("backward: root must be a scalar, got shape " + to_string(root.shape()));
  }
  Node* r = root.node().get();
  if (!r->requires_grad) return;
  const std::vector<Node*> order = topo_order(r);
  for (Node* n : order) {
    if (!n->is_leaf()) n->grad = VectorXd::Zero(n->value.size());
  }
  r->accumulate(VectorXd::Ones(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->is_leaf() && n->backward) n->backward(*n);
  }
}

GraphTrace trace(const Tensor& root) {
  GraphTrace out;
  Node* r = root.node().get();
  std::vector<Node*> order;
  if (r->requires_grad) {
    order = topo_order(r);
  } else {
    order = {r};
  }
  std::unordered_map<Node*, std::size_t> position;
  for (std::size_t i = 0; i < order.size(); ++i) position[order[i]] = i;
  for (Node* n : order) {
    out.ops.emplace_back(n->op);
    std::vector<std::size_t> ps;
    for (const auto& p : n->parents) {
      if (auto it = position.find(p.get()); it != position.end()) ps.push_back(it->second);
    }
    out.parents.push_back(std::move(ps));
  }
  return out;
}

void zero_grad(std::span<const Tensor> params) {
  for (const auto& p : params) p.zero_grad();
}

}  // namespace amcl
