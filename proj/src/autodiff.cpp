#include "artikit/autodiff.hpp"

#include <cmath>
#include <limits>

namespace artikit::ad {

namespace {

void require_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
}

}  // namespace

Var Tape::push(Mat value, bool requires_grad,
               std::function<void(Tape&, int)> fn) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backprop = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::input(Mat value, bool requires_grad) {
  return push(std::move(value), requires_grad, nullptr);
}

void Tape::accumulate(int idx, const Mat& g) {
  Node& n = node(idx);
  if (n.grad.size() == 0)
    n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  n.grad += g;
}

void Tape::backward(Var root) {
  std::size_t r = check(root);
  const Mat& rv = nodes_[r].value;
  if (rv.rows() != 1 || rv.cols() != 1)
    throw ShapeError("backward root must be a 1x1 scalar");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  nodes_[r].grad = Mat::Ones(1, 1);
  for (int i = static_cast<int>(r); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.backprop && n.grad.size() != 0) n.backprop(*this, i);
  }
  // Leaves that were never reached still expose a well-defined zero grad.
  for (auto& n : nodes_)
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
}

Var Tape::add(Var a, Var b) {
  require_same_shape(value(a), value(b), "add");
  Mat out = value(a) + value(b);
  int ia = a.idx, ib = b.idx;
  return push(std::move(out), true, [ia, ib](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

Var Tape::sub(Var a, Var b) {
  require_same_shape(value(a), value(b), "sub");
  Mat out = value(a) - value(b);
  int ia = a.idx, ib = b.idx;
  return push(std::move(out), true, [ia, ib](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
}

Var Tape::scale(Var a, double s) {
  Mat out = s * value(a);
  int ia = a.idx;
  return push(std::move(out), true, [ia, s](Tape& t, int self) {
    t.accumulate(ia, s * t.node(self).grad);
  });
}

Var Tape::add_rowvec(Var a, Var row) {
  const Mat& av = value(a);
  const Mat& rv = value(row);
  if (rv.rows() != 1 || rv.cols() != av.cols())
    throw ShapeError("add_rowvec: row must be 1x" + std::to_string(av.cols()));
  Mat out = av.rowwise() + rv.row(0);
  int ia = a.idx, ir = row.idx;
  return push(std::move(out), true, [ia, ir](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    t.accumulate(ia, g);
    t.accumulate(ir, g.colwise().sum());
  });
}

Var Tape::hadamard(Var a, Var b) {
  require_same_shape(value(a), value(b), "hadamard");
  Mat out = value(a).cwiseProduct(value(b));
  int ia = a.idx, ib = b.idx;
  return push(std::move(out), true, [ia, ib](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    t.accumulate(ia, g.cwiseProduct(t.node(ib).value));
    t.accumulate(ib, g.cwiseProduct(t.node(ia).value));
  });
}

Var Tape::mul_col(Var a, Var col) {
  const Mat& av = value(a);
  const Mat& cv = value(col);
  if (cv.cols() != 1 || cv.rows() != av.rows())
    throw ShapeError("mul_col: column must be " + std::to_string(av.rows()) + "x1");
  Mat out = av.array().colwise() * cv.col(0).array();
  int ia = a.idx, ic = col.idx;
  return push(std::move(out), true, [ia, ic](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    const Mat& av2 = t.node(ia).value;
    const Mat& cv2 = t.node(ic).value;
    t.accumulate(ia, (g.array().colwise() * cv2.col(0).array()).matrix());
    t.accumulate(ic, g.cwiseProduct(av2).rowwise().sum());
  });
}

Var Tape::matmul(Var a, Var b, bool trans_a, bool trans_b) {
  const Mat& av = value(a);
  const Mat& bv = value(b);
  const auto arows = trans_a ? av.cols() : av.rows();
  const auto acols = trans_a ? av.rows() : av.cols();
  const auto brows = trans_b ? bv.cols() : bv.rows();
  const auto bcols = trans_b ? bv.rows() : bv.cols();
  if (acols != brows)
    throw ShapeError("matmul: inner dimensions " + std::to_string(acols) +
                     " and " + std::to_string(brows) + " differ");
  Mat out(arows, bcols);
  if (!trans_a && !trans_b) out = av * bv;
  else if (trans_a && !trans_b) out = av.transpose() * bv;
  else if (!trans_a && trans_b) out = av * bv.transpose();
  else out = av.transpose() * bv.transpose();

  int ia = a.idx, ib = b.idx;
  return push(std::move(out), true, [ia, ib, trans_a, trans_b](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    const Mat& av2 = t.node(ia).value;
    const Mat& bv2 = t.node(ib).value;
    // d(A'B')/dA' = g B'^T, chained through the optional transposes.
    if (!trans_a) {
      t.accumulate(ia, trans_b ? Mat(g * bv2) : Mat(g * bv2.transpose()));
    } else {
      t.accumulate(ia, trans_b ? Mat(bv2.transpose() * g.transpose())
                               : Mat(bv2 * g.transpose()));
    }
    if (!trans_b) {
      t.accumulate(ib, trans_a ? Mat(av2 * g) : Mat(av2.transpose() * g));
    } else {
      t.accumulate(ib, trans_a ? Mat(g.transpose() * av2.transpose())
                               : Mat(g.transpose() * av2));
    }
  });
}

Var Tape::col_slice(Var a, int first_col, int cols) {
  const Mat& av = value(a);
  if (first_col < 0 || cols < 0 || first_col + cols > av.cols())
    throw ShapeError("col_slice: [" + std::to_string(first_col) + ", " +
                     std::to_string(first_col + cols) + ") outside " +
                     std::to_string(av.cols()) + " columns");
  Mat out = av.middleCols(first_col, cols);
  int ia = a.idx;
  auto rows = av.rows();
  auto total = av.cols();
  return push(std::move(out), true,
              [ia, first_col, cols, rows, total](Tape& t, int self) {
                Mat g = Mat::Zero(rows, total);
                g.middleCols(first_col, cols) = t.node(self).grad;
                t.accumulate(ia, g);
              });
}

Var Tape::hconcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ParameterError("hconcat of nothing");
  auto rows = value(parts[0]).rows();
  Eigen::Index total = 0;
  for (Var p : parts) {
    if (value(p).rows() != rows) throw ShapeError("hconcat: row count mismatch");
    total += value(p).cols();
  }
  Mat out(rows, total);
  std::vector<int> offsets;
  std::vector<int> indices;
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleCols(at, value(p).cols()) = value(p);
    offsets.push_back(static_cast<int>(at));
    indices.push_back(p.idx);
    at += value(p).cols();
  }
  return push(std::move(out), true, [offsets, indices](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    for (std::size_t k = 0; k < indices.size(); ++k) {
      const Mat& pv = t.node(indices[k]).value;
      t.accumulate(indices[k], g.middleCols(offsets[k], pv.cols()));
    }
  });
}

Var Tape::softmax_rows(Var logits) {
  const Mat& x = value(logits);
  Mat y(x.rows(), x.cols());
  const double neg_inf = -std::numeric_limits<double>::infinity();
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double m = neg_inf;
    for (Eigen::Index c = 0; c < x.cols(); ++c) m = std::max(m, x(r, c));
    if (m == neg_inf) {
      y.row(r).setZero();  // fully masked row
      continue;
    }
    double z = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      double e = std::exp(x(r, c) - m);  // exp(-inf) = 0 kills masked entries
      y(r, c) = e;
      z += e;
    }
    y.row(r) /= z;
  }
  int ix = logits.idx;
  return push(std::move(y), true, [ix](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    const Mat& yv = t.node(self).value;
    Mat gx(g.rows(), g.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      double dot = g.row(r).dot(yv.row(r));
      gx.row(r) = (g.row(r).array() - dot) * yv.row(r).array();
    }
    t.accumulate(ix, gx);
  });
}

Var Tape::rmsnorm_rows(Var x, Var gain, double eps) {
  const Mat& xv = value(x);
  const Mat& gv = value(gain);
  if (gv.rows() != 1 || gv.cols() != xv.cols())
    throw ShapeError("rmsnorm_rows: gain must be 1x" + std::to_string(xv.cols()));
  Eigen::VectorXd rms(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r)
    rms(r) = std::sqrt(xv.row(r).squaredNorm() / static_cast<double>(xv.cols()) + eps);
  Mat normalized = xv.array().colwise() / rms.array();
  Mat out = normalized.array().rowwise() * gv.row(0).array();
  int ixv = x.idx, igv = gain.idx;
  return push(std::move(out), true, [ixv, igv, rms](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    const Mat& xv2 = t.node(ixv).value;
    const Mat& gv2 = t.node(igv).value;
    const double d = static_cast<double>(xv2.cols());
    Mat gx(xv2.rows(), xv2.cols());
    Eigen::RowVectorXd ggain = Eigen::RowVectorXd::Zero(xv2.cols());
    for (Eigen::Index r = 0; r < xv2.rows(); ++r) {
      double inv = 1.0 / rms(r);
      // y = (x / rms) * gain; d rms/d x_j = x_j / (d * rms)
      Eigen::RowVectorXd gg = g.row(r).cwiseProduct(gv2.row(0));
      double mix = gg.dot(xv2.row(r)) * inv * inv * inv / d;
      gx.row(r) = gg * inv - xv2.row(r) * mix;
      ggain += g.row(r).cwiseProduct(xv2.row(r)) * inv;
    }
    t.accumulate(ixv, gx);
    t.accumulate(igv, ggain);
  });
}

Var Tape::silu(Var x) {
  const Mat& xv = value(x);
  Mat sig = (1.0 + (-xv.array()).exp()).inverse();
  Mat out = xv.cwiseProduct(sig);
  int ix = x.idx;
  return push(std::move(out), true, [ix, sig](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    const Mat& xv2 = t.node(ix).value;
    Mat d = sig.array() * (1.0 + xv2.array() * (1.0 - sig.array()));
    t.accumulate(ix, g.cwiseProduct(d));
  });
}

Var Tape::mean_all(Var x) {
  const Mat& xv = value(x);
  if (xv.size() == 0) throw ShapeError("mean_all of an empty matrix");
  Mat out(1, 1);
  out(0, 0) = xv.sum() / static_cast<double>(xv.size());
  int ix = x.idx;
  return push(std::move(out), true, [ix](Tape& t, int self) {
    const Mat& xv2 = t.node(ix).value;
    double g = t.node(self).grad(0, 0) / static_cast<double>(xv2.size());
    t.accumulate(ix, Mat::Constant(xv2.rows(), xv2.cols(), g));
  });
}

Var Tape::sum_all(Var x) {
  const Mat& xv = value(x);
  Mat out(1, 1);
  out(0, 0) = xv.sum();
  int ix = x.idx;
  return push(std::move(out), true, [ix](Tape& t, int self) {
    const Mat& xv2 = t.node(ix).value;
    double g = t.node(self).grad(0, 0);
    t.accumulate(ix, Mat::Constant(xv2.rows(), xv2.cols(), g));
  });
}

}  // namespace artikit::ad
