#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "artikit/core.hpp"

namespace artikit {

// Dense boolean matrix used for adjacency and attention masks.
using BoolMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

struct GraphNode {
  int id = 0;
  std::string label;
  JointType joint_type = JointType::Fixed;
};

// Part-level structure: semantics, joint types, and parent-child topology.
// Node ids must be unique; matrices and embeddings index by node list
// position, edges reference ids.
struct ConnectivityGraph {
  std::vector<GraphNode> nodes;
  std::vector<std::pair<int, int>> edges;  // (parent id, child id)
  int root_id = 0;

  int size() const { return static_cast<int>(nodes.size()); }
};

// Tree health check mirroring validate_object's report style. Codes:
// node-id-dup, root-missing, edge-endpoint, edge-dup, self-edge,
// multi-parent, root-parent, edge-count, disconnected.
ValidationReport validate_graph(const ConnectivityGraph& g);

// Symmetric adjacency over node list positions, false diagonal.
// Invalid graphs are a structural error.
BoolMatrix to_adjacency_matrix(const ConnectivityGraph& g);

// Boolean reachability within `hops` edges; self_loops adds the diagonal.
// hops >= N-1 on a tree yields an all-true mask.
BoolMatrix adjacency_to_attention_mask(const BoolMatrix& adj, bool self_loops,
                                       int hops);

inline constexpr int kJointTypeCount = 5;
inline constexpr int kSemanticEmbedDim = 16;
inline constexpr int kRoutingDim = kJointTypeCount + kSemanticEmbedDim;

// Per-node routing vector: joint-type one-hot (5) followed by a seeded
// hash-derived dense embedding of the semantic label (16, values in [-1,1)).
// Rows follow node list order.
Eigen::MatrixXd encode_routing_embeddings(const ConnectivityGraph& g,
                                          std::uint64_t seed);

// Graph induced by an object's parts: one node per part (list ordered by
// part id), one edge per parent link.
ConnectivityGraph graph_from_object(const ArticulatedObject& obj);

// Canonical JSON payload of the structure-response schema.
std::string serialize_structure_graph(const ConnectivityGraph& g);

// Strict parse of the structure-response schema:
//   {"root": int,
//    "nodes": [{"id": int, "label": str,
//               "joint_type": "fixed|revolute|continuous|prismatic|screw"}],
//    "edges": [[parent, child], ...]}
// Unknown keys, unknown joint types, or tree violations are parse errors;
// malformed JSON reports the byte offset.
ConnectivityGraph parse_structure_response(const std::string& payload);

}  // namespace artikit
