#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "artikit/error.hpp"

namespace artikit::ad {

using Mat = Eigen::MatrixXd;

// Handle into a Tape; cheap to copy, meaningless across tapes.
struct Var {
  int idx = -1;
  bool valid() const { return idx >= 0; }
};

// Reverse-mode tape over dense double matrices. Values are computed eagerly
// on op creation; backward() runs the recorded adjoint functions in reverse
// order. Built for clarity and bit-reproducibility (single-threaded, fixed
// evaluation order) rather than speed; the models on top of it are tiny.
class Tape {
 public:
  Var input(Mat value, bool requires_grad = true);
  Var constant(Mat value) { return input(std::move(value), false); }

  const Mat& value(Var v) const { return nodes_[check(v)].value; }
  const Mat& grad(Var v) const { return nodes_[check(v)].grad; }

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var scale(Var a, double s);
  Var add_rowvec(Var a, Var row);  // row (1xD) broadcast over a (NxD)
  Var hadamard(Var a, Var b);
  Var mul_col(Var a, Var col);     // col (Nx1) scales each row of a (NxD)
  Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);
  Var col_slice(Var a, int first_col, int cols);
  Var hconcat(const std::vector<Var>& parts);
  // Row softmax that treats -inf logits as masked-out; a fully masked row
  // yields zeros. Finite rows sum to 1 exactly as computed.
  Var softmax_rows(Var logits);
  // y_ij = x_ij / rms_i * gain_j with rms_i = sqrt(mean_j x_ij^2 + eps).
  Var rmsnorm_rows(Var x, Var gain, double eps = 1e-8);
  Var silu(Var x);
  Var mean_all(Var x);  // 1x1
  Var sum_all(Var x);   // 1x1

  // Seeds grad(root) = 1 and accumulates adjoints into every node reachable
  // backward from it. root must be 1x1. Grads reset on each call.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    std::function<void(Tape&, int)> backprop;  // pulls grad into parents
  };

  std::size_t check(Var v) const {
    if (!v.valid() || static_cast<std::size_t>(v.idx) >= nodes_.size())
      throw ParameterError("autodiff handle does not belong to this tape");
    return static_cast<std::size_t>(v.idx);
  }

  Node& node(int idx) { return nodes_[static_cast<std::size_t>(idx)]; }
  Var push(Mat value, bool requires_grad, std::function<void(Tape&, int)> fn);
  void accumulate(int idx, const Mat& g);

  std::vector<Node> nodes_;
};

}  // namespace artikit::ad
