#pragma once

#include "srkd/types.hpp"

#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace srkd::ad {

class Tape;

// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;
};

// Reverse-mode tape over dense matrices. Nodes are appended in evaluation
// order, so a single reverse sweep visits every node after its consumers.
class Tape {
 public:
  // Propagates the node's accumulated gradient into its parents.
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var variable(Matrix value);
  // Named leaf whose gradient is reported by parameter_gradients().
  Var parameter(const std::string& name, Matrix value);

  // Records an op result. The backward function is dropped when no parent
  // requires a gradient.
  Var record(Matrix value, const std::vector<Var>& parents, BackwardFn backward);

  const Matrix& value(const Var& v) const;
  bool requires_grad(const Var& v) const;

  void backward(const Var& loss);

  // Gradient of the last backward() with respect to v; zeros when v did not
  // influence the loss.
  Matrix grad(const Var& v) const;
  std::vector<std::pair<std::string, Matrix>> parameter_gradients() const;

  // For BackwardFn implementations.
  const Matrix& upstream(int self) const;
  const Matrix& value_of(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad_of(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  // grad[id] += contribution; allocated lazily.
  void accumulate(int id, const Matrix& contribution);
  Matrix& grad_buffer(int id);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
  };

  int check(const Var& v) const;

  std::vector<Node> nodes_;
  std::vector<std::pair<std::string, int>> params_;
};

// Elementwise and linear-algebra ops. All inputs must live on the same tape.
Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);  // a * b^T
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // elementwise
Var scale(const Var& a, double s);
Var add_row(const Var& a, const Var& row);  // broadcast a 1 x n row over every row of a
Var concat_cols(const Var& a, const Var& b);
Var tanh(const Var& a);
Var square(const Var& a);
Var log(const Var& a);

Var sum(const Var& a);
Var mean(const Var& a);
// sum(a .* weights) for a constant weight matrix of the same shape.
Var weighted_sum(const Var& a, const Matrix& weights);

Var softmax_rows(const Var& a, double temperature = 1.0);
Var log_softmax_rows(const Var& a, double temperature = 1.0);
Var l2_normalize_rows(const Var& a);

// out.row(i) = a.row(indices[i]), or zero when indices[i] < 0.
Var gather_rows(const Var& a, const std::vector<int>& indices);
// out.row(i) = mean of a over groups[i]; empty groups give zero rows.
Var group_mean(const Var& a, const std::vector<std::vector<int>>& groups);
// Rows with mask == false set to zero.
Var mask_rows(const Var& a, const Mask& mask);

// out(i,j) = ||a.row(i) - a.row(j)||^2.
Var pairwise_sqdist(const Var& a);

}  // namespace srkd::ad
