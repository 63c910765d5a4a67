#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <limits>
#include <vector>

#include "artikit/error.hpp"

namespace artikit {

// Squared euclidean distance, written out so every caller (kd-tree, brute
// force scan, test oracles) evaluates the identical float expression and
// the accelerated path can match the naive one bit for bit.
inline double point_dist2(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  double dx = a.x() - b.x();
  double dy = a.y() - b.y();
  double dz = a.z() - b.z();
  return dx * dx + dy * dy + dz * dz;
}

// Static 3-d kd-tree for nearest neighbor queries. Median split on the
// widest axis, small leaves scanned linearly.
class KdTree3 {
 public:
  explicit KdTree3(std::vector<Eigen::Vector3d> points)
      : points_(std::move(points)) {
    if (points_.empty()) throw ParameterError("kd-tree over an empty point set");
    order_.resize(points_.size());
    for (std::size_t i = 0; i < points_.size(); ++i) order_[i] = static_cast<int>(i);
    nodes_.reserve(2 * points_.size() / kLeafSize + 2);
    build(0, static_cast<int>(points_.size()));
  }

  // Squared distance from q to its nearest stored point.
  double nearest_dist2(const Eigen::Vector3d& q) const {
    double best = std::numeric_limits<double>::infinity();
    search(0, q, best);
    return best;
  }

 private:
  static constexpr int kLeafSize = 12;

  struct Node {
    int begin = 0, end = 0;       // leaf payload range in order_
    int axis = -1;                // -1 marks a leaf
    double split = 0.0;
    int left = -1, right = -1;
  };

  int build(int begin, int end) {
    int self = static_cast<int>(nodes_.size());
    nodes_.push_back({});
    Node node;
    node.begin = begin;
    node.end = end;
    if (end - begin <= kLeafSize) {
      nodes_[static_cast<std::size_t>(self)] = node;
      return self;
    }
    Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
    Eigen::Vector3d hi = -lo;
    for (int i = begin; i < end; ++i) {
      const auto& p = points_[static_cast<std::size_t>(order_[static_cast<std::size_t>(i)])];
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    int axis;
    (hi - lo).maxCoeff(&axis);
    int mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid,
                     order_.begin() + end, [&](int a, int b) {
                       return points_[static_cast<std::size_t>(a)][axis] <
                              points_[static_cast<std::size_t>(b)][axis];
                     });
    node.axis = axis;
    node.split = points_[static_cast<std::size_t>(order_[static_cast<std::size_t>(mid)])][axis];
    node.left = build(begin, mid);
    node.right = build(mid, end);
    nodes_[static_cast<std::size_t>(self)] = node;
    return self;
  }

  void search(int idx, const Eigen::Vector3d& q, double& best) const {
    const Node& node = nodes_[static_cast<std::size_t>(idx)];
    if (node.axis < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        double d2 = point_dist2(q, points_[static_cast<std::size_t>(order_[static_cast<std::size_t>(i)])]);
        if (d2 < best) best = d2;
      }
      return;
    }
    double delta = q[node.axis] - node.split;
    int near = delta < 0.0 ? node.left : node.right;
    int far = delta < 0.0 ? node.right : node.left;
    search(near, q, best);
    if (delta * delta < best) search(far, q, best);
  }

  std::vector<Eigen::Vector3d> points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

}  // namespace artikit
