#include "srkd/autodiff.hpp"

#include "srkd/numerics.hpp"

#include <algorithm>
#include <cmath>

namespace srkd::ad {

const Matrix& Var::value() const {
  if (tape == nullptr) throw Error(ErrorKind::Tape, "value of an unrecorded Var");
  return tape->value(*this);
}

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw Error(ErrorKind::Shape, "Var::scalar on a non-scalar value");
  return v(0, 0);
}

int Tape::check(const Var& v) const {
  if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
    throw Error(ErrorKind::Tape, "Var was not recorded on this tape");
  return v.id;
}

Var Tape::constant(Matrix value) {
  nodes_.push_back({std::move(value), Matrix(), false, false, nullptr});
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::variable(Matrix value) {
  nodes_.push_back({std::move(value), Matrix(), true, false, nullptr});
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::parameter(const std::string& name, Matrix value) {
  for (const auto& [existing, id] : params_)
    if (existing == name) throw Error(ErrorKind::Tape, "parameter '" + name + "' registered twice");
  Var v = variable(std::move(value));
  params_.emplace_back(name, v.id);
  return v;
}

Var Tape::record(Matrix value, const std::vector<Var>& parents, BackwardFn backward) {
  bool needs = false;
  for (const auto& p : parents) needs = needs || nodes_[static_cast<std::size_t>(check(p))].requires_grad;
  nodes_.push_back({std::move(value), Matrix(), needs, false, needs ? std::move(backward) : nullptr});
  return {this, static_cast<int>(nodes_.size() - 1)};
}

const Matrix& Tape::value(const Var& v) const { return nodes_[static_cast<std::size_t>(check(v))].value; }

bool Tape::requires_grad(const Var& v) const { return nodes_[static_cast<std::size_t>(check(v))].requires_grad; }

Matrix& Tape::grad_buffer(int id) {
  Node& node = nodes_[static_cast<std::size_t>(id)];
  if (!node.has_grad) {
    node.grad = Matrix::Zero(node.value.rows(), node.value.cols());
    node.has_grad = true;
  }
  return node.grad;
}

void Tape::accumulate(int id, const Matrix& contribution) {
  if (!nodes_[static_cast<std::size_t>(id)].requires_grad) return;
  Matrix& g = grad_buffer(id);
  if (g.rows() != contribution.rows() || g.cols() != contribution.cols())
    throw Error(ErrorKind::Tape, "gradient shape mismatch at node " + std::to_string(id));
  g += contribution;
}

const Matrix& Tape::upstream(int self) const { return nodes_[static_cast<std::size_t>(self)].grad; }

void Tape::backward(const Var& loss) {
  const int root = check(loss);
  if (nodes_[static_cast<std::size_t>(root)].value.size() != 1)
    throw Error(ErrorKind::Tape, "backward requires a scalar loss");
  for (auto& node : nodes_) {
    node.has_grad = false;
    node.grad.resize(0, 0);
  }
  grad_buffer(root)(0, 0) = 1.0;
  for (int id = root; id >= 0; --id) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.has_grad || !node.backward) continue;
    node.backward(*this, id);
  }
}

Matrix Tape::grad(const Var& v) const {
  const Node& node = nodes_[static_cast<std::size_t>(check(v))];
  if (node.has_grad) return node.grad;
  return Matrix::Zero(node.value.rows(), node.value.cols());
}

std::vector<std::pair<std::string, Matrix>> Tape::parameter_gradients() const {
  std::vector<std::pair<std::string, Matrix>> out;
  out.reserve(params_.size());
  for (const auto& [name, id] : params_) out.emplace_back(name, grad(Var{const_cast<Tape*>(this), id}));
  return out;
}

namespace {

Tape& same_tape(const Var& a, const Var& b) {
  if (a.tape == nullptr || a.tape != b.tape) throw Error(ErrorKind::Tape, "operands recorded on different tapes");
  return *a.tape;
}

Tape& tape_of(const Var& a) {
  if (a.tape == nullptr) throw Error(ErrorKind::Tape, "operand is not recorded on a tape");
  return *a.tape;
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw Error(ErrorKind::Shape, std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                                      std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                      std::to_string(b.cols()));
}

Matrix scalar_matrix(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return m;
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) throw Error(ErrorKind::Shape, "matmul: inner dimensions differ");
  const int ia = a.id, ib = b.id;
  return t.record(av * bv, {a, b}, [ia, ib](Tape& tape, int self) {
    const Matrix& g = tape.upstream(self);
    if (tape.requires_grad_of(ia)) tape.accumulate(ia, g * tape.value_of(ib).transpose());
    if (tape.requires_grad_of(ib)) tape.accumulate(ib, tape.value_of(ia).transpose() * g);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.cols()) throw Error(ErrorKind::Shape, "matmul_nt: column counts differ");
  const int ia = a.id, ib = b.id;
  return t.record(av * bv.transpose(), {a, b}, [ia, ib](Tape& tape, int self) {
    const Matrix& g = tape.upstream(self);
    if (tape.requires_grad_of(ia)) tape.accumulate(ia, g * tape.value_of(ib));
    if (tape.requires_grad_of(ib)) tape.accumulate(ib, g.transpose() * tape.value_of(ia));
  });
}

Var add(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  const int ia = a.id, ib = b.id;
  return t.record(a.value() + b.value(), {a, b}, [ia, ib](Tape& tape, int self) {
    tape.accumulate(ia, tape.upstream(self));
    tape.accumulate(ib, tape.upstream(self));
  });
}

Var sub(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  const int ia = a.id, ib = b.id;
  return t.record(a.value() - b.value(), {a, b}, [ia, ib](Tape& tape, int self) {
    tape.accumulate(ia, tape.upstream(self));
    if (tape.requires_grad_of(ib)) tape.accumulate(ib, -tape.upstream(self));
  });
}

Var mul(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  const int ia = a.id, ib = b.id;
  return t.record(a.value().cwiseProduct(b.value()), {a, b}, [ia, ib](Tape& tape, int self) {
    const Matrix& g = tape.upstream(self);
    if (tape.requires_grad_of(ia)) tape.accumulate(ia, g.cwiseProduct(tape.value_of(ib)));
    if (tape.requires_grad_of(ib)) tape.accumulate(ib, g.cwiseProduct(tape.value_of(ia)));
  });
}

Var scale(const Var& a, double s) {
  Tape& t = tape_of(a);
  const int ia = a.id;
  return t.record(a.value() * s, {a}, [ia, s](Tape& tape, int self) { tape.accumulate(ia, tape.upstream(self) * s); });
}

Var add_row(const Var& a, const Var& row) {
  Tape& t = same_tape(a, row);
  const Matrix& av = a.value();
  const Matrix& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) throw Error(ErrorKind::Shape, "add_row: expected a 1 x cols row");
  const int ia = a.id, ir = row.id;
  Matrix out = av.rowwise() + rv.row(0);
  return t.record(std::move(out), {a, row}, [ia, ir](Tape& tape, int self) {
    const Matrix& g = tape.upstream(self);
    tape.accumulate(ia, g);
    if (tape.requires_grad_of(ir)) tape.accumulate(ir, g.colwise().sum());
  });
}

Var concat_cols(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.rows() != bv.rows()) throw Error(ErrorKind::Shape, "concat_cols: row counts differ");
  Matrix out(av.rows(), av.cols() + bv.cols());
  out << av, bv;
  const int ia = a.id, ib = b.id;
  const Eigen::Index ca = av.cols(), cb = bv.cols();
  return t.record(std::move(out), {a, b}, [ia, ib, ca, cb](Tape& tape, int self) {
    const Matrix& g = tape.upstream(self);
    if (tape.requires_grad_of(ia)) tape.accumulate(ia, g.leftCols(ca));
    if (tape.requires_grad_of(ib)) tape.accumulate(ib, g.rightCols(cb));
  });
}

Var tanh(const Var& a) {
  Tape& t = tape_of(a);
  const int ia = a.id;
  Matrix out = a.value().array().tanh().matrix();
  return t.record(std::move(out), {a}, [ia](Tape& tape, int self) {
    const Matrix& y = tape.value_of(self);
    tape.accumulate(ia, tape.upstream(self).cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

Var square(const Var& a) {
  Tape& t = tape_of(a);
  const int ia = a.id;
  return t.record(a.value().array().square().matrix(), {a}, [ia](Tape& tape, int self) {
    tape.accumulate(ia, 2.0 * tape.upstream(self).cwiseProduct(tape.value_of(ia)));
  });
}

Var log(const Var& a) {
  Tape& t = tape_of(a);
  if ((a.value().array() <= 0.0).any()) throw Error(ErrorKind::Numeric, "log of a non-positive value");
  const int ia = a.id;
  return t.record(a.value().array().log().matrix(), {a}, [ia](Tape& tape, int self) {
    tape.accumulate(ia, tape.upstream(self).cwiseQuotient(tape.value_of(ia)));
  });
}

Var sum(const Var& a) {
  Tape& t = tape_of(a);
  const int ia = a.id;
  return t.record(scalar_matrix(a.value().sum()), {a}, [ia](Tape& tape, int self) {
    const Matrix& x = tape.value_of(ia);
    tape.accumulate(ia, Matrix::Constant(x.rows(), x.cols(), tape.upstream(self)(0, 0)));
  });
}

Var mean(const Var& a) {
  const auto n = a.value().size();
  if (n == 0) throw Error(ErrorKind::Shape, "mean of an empty matrix");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var weighted_sum(const Var& a, const Matrix& weights) {
  Tape& t = tape_of(a);
  require_same_shape(a.value(), weights, "weighted_sum");
  const int ia = a.id;
  return t.record(scalar_matrix(a.value().cwiseProduct(weights).sum()), {a}, [ia, weights](Tape& tape, int self) {
    tape.accumulate(ia, weights * tape.upstream(self)(0, 0));
  });
}

Var softmax_rows(const Var& a, double temperature) {
  Tape& t = tape_of(a);
  const int ia = a.id;
  return t.record(srkd::softmax_rows(a.value(), temperature), {a}, [ia, temperature](Tape& tape, int self) {
    const Matrix& y = tape.value_of(self);
    const Matrix& g = tape.upstream(self);
    const Vector inner = g.cwiseProduct(y).rowwise().sum();
    Matrix da = y.cwiseProduct(g - inner.replicate(1, g.cols())) / temperature;
    tape.accumulate(ia, da);
  });
}

Var log_softmax_rows(const Var& a, double temperature) {
  Tape& t = tape_of(a);
  const int ia = a.id;
  return t.record(srkd::log_softmax_rows(a.value(), temperature), {a}, [ia, temperature](Tape& tape, int self) {
    const Matrix& y = tape.value_of(self);
    const Matrix& g = tape.upstream(self);
    const Vector gsum = g.rowwise().sum();
    Matrix p = y.array().exp().matrix();
    Matrix da = (g - p.cwiseProduct(gsum.replicate(1, g.cols()))) / temperature;
    tape.accumulate(ia, da);
  });
}

Var l2_normalize_rows(const Var& a) {
  Tape& t = tape_of(a);
  const int ia = a.id;
  const Vector norms = a.value().rowwise().norm();
  return t.record(srkd::l2_normalize_rows(a.value()), {a}, [ia, norms](Tape& tape, int self) {
    const Matrix& y = tape.value_of(self);
    const Matrix& g = tape.upstream(self);
    Matrix da(g.rows(), g.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      if (norms[r] > kNormFloor)
        da.row(r) = (g.row(r) - y.row(r) * y.row(r).dot(g.row(r))) / norms[r];
      else
        da.row(r) = g.row(r) / kNormFloor;
    }
    tape.accumulate(ia, da);
  });
}

Var gather_rows(const Var& a, const std::vector<int>& indices) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(indices.size()), av.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= av.rows()) throw Error(ErrorKind::Shape, "gather_rows: index out of range");
    if (indices[i] >= 0) out.row(static_cast<Eigen::Index>(i)) = av.row(indices[i]);
  }
  const int ia = a.id;
  return t.record(std::move(out), {a}, [ia, indices](Tape& tape, int self) {
    if (!tape.requires_grad_of(ia)) return;
    const Matrix& g = tape.upstream(self);
    Matrix& da = tape.grad_buffer(ia);
    for (std::size_t i = 0; i < indices.size(); ++i)
      if (indices[i] >= 0) da.row(indices[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

Var group_mean(const Var& a, const std::vector<std::vector<int>>& groups) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(groups.size()), av.cols());
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (groups[i].empty()) continue;
    auto row = out.row(static_cast<Eigen::Index>(i));
    for (int m : groups[i]) {
      if (m < 0 || m >= av.rows()) throw Error(ErrorKind::Shape, "group_mean: member index out of range");
      row += av.row(m);
    }
    row /= static_cast<double>(groups[i].size());
  }
  const int ia = a.id;
  return t.record(std::move(out), {a}, [ia, groups](Tape& tape, int self) {
    if (!tape.requires_grad_of(ia)) return;
    const Matrix& g = tape.upstream(self);
    Matrix& da = tape.grad_buffer(ia);
    for (std::size_t i = 0; i < groups.size(); ++i) {
      if (groups[i].empty()) continue;
      const RowVector share = g.row(static_cast<Eigen::Index>(i)) / static_cast<double>(groups[i].size());
      for (int m : groups[i]) da.row(m) += share;
    }
  });
}

Var mask_rows(const Var& a, const Mask& mask) {
  Tape& t = tape_of(a);
  if (static_cast<Eigen::Index>(mask.size()) != a.rows()) throw Error(ErrorKind::Shape, "mask_rows: mask length != rows");
  Matrix out = a.value();
  for (std::size_t r = 0; r < mask.size(); ++r)
    if (!mask[r]) out.row(static_cast<Eigen::Index>(r)).setZero();
  const int ia = a.id;
  return t.record(std::move(out), {a}, [ia, mask](Tape& tape, int self) {
    Matrix g = tape.upstream(self);
    for (std::size_t r = 0; r < mask.size(); ++r)
      if (!mask[r]) g.row(static_cast<Eigen::Index>(r)).setZero();
    tape.accumulate(ia, g);
  });
}

Var pairwise_sqdist(const Var& a) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  const Eigen::Index n = x.rows();
  Matrix out(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) out(i, j) = out(j, i) = (x.row(i) - x.row(j)).squaredNorm();
  }
  const int ia = a.id;
  return t.record(std::move(out), {a}, [ia](Tape& tape, int self) {
    const Matrix& g = tape.upstream(self);
    const Matrix& xv = tape.value_of(ia);
    const Matrix s = g + g.transpose();
    const Vector degree = s.rowwise().sum();
    Matrix da = 2.0 * (degree.asDiagonal() * xv - s * xv);
    tape.accumulate(ia, da);
  });
}

}  // namespace srkd::ad
