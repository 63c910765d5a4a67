#include "artikit/graph.hpp"

#include <algorithm>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "artikit/rng.hpp"

namespace artikit {

using nlohmann::json;

ValidationReport validate_graph(const ConnectivityGraph& g) {
  ValidationReport report;
  auto add = [&](const std::string& code, const std::string& msg) {
    report.violations.push_back({code, msg, -1});
  };

  std::map<int, int> pos;  // id -> node list position
  for (int i = 0; i < g.size(); ++i) {
    int id = g.nodes[static_cast<std::size_t>(i)].id;
    if (!pos.emplace(id, i).second)
      add("node-id-dup", "node id " + std::to_string(id) + " appears twice");
  }
  if (!pos.count(g.root_id))
    add("root-missing", "root id " + std::to_string(g.root_id) + " is not a node");
  if (!report.ok()) return report;  // id table unusable, stop here

  std::set<std::pair<int, int>> seen;
  std::map<int, int> parent_count;
  for (const auto& [p, c] : g.edges) {
    if (!pos.count(p) || !pos.count(c)) {
      add("edge-endpoint", "edge (" + std::to_string(p) + ", " + std::to_string(c) +
                               ") references a missing node");
      continue;
    }
    if (p == c) {
      add("self-edge", "edge (" + std::to_string(p) + ", " + std::to_string(c) +
                           ") is a self loop");
      continue;
    }
    if (!seen.emplace(std::min(p, c), std::max(p, c)).second) {
      add("edge-dup", "edge between " + std::to_string(p) + " and " +
                          std::to_string(c) + " duplicated");
      continue;
    }
    if (++parent_count[c] > 1)
      add("multi-parent", "node " + std::to_string(c) + " has multiple parents");
    if (c == g.root_id)
      add("root-parent", "root node " + std::to_string(c) + " has a parent edge");
  }
  if (!report.ok()) return report;

  if (static_cast<int>(g.edges.size()) != g.size() - 1)
    add("edge-count", "tree over " + std::to_string(g.size()) + " nodes needs " +
                          std::to_string(g.size() - 1) + " edges, found " +
                          std::to_string(g.edges.size()));

  // reachability from the root along child edges
  std::map<int, std::vector<int>> children;
  for (const auto& [p, c] : g.edges) children[p].push_back(c);
  std::set<int> reached;
  std::vector<int> stack{g.root_id};
  while (!stack.empty()) {
    int cur = stack.back();
    stack.pop_back();
    if (!reached.insert(cur).second) continue;
    for (int c : children[cur]) stack.push_back(c);
  }
  for (const auto& n : g.nodes) {
    if (!reached.count(n.id))
      add("disconnected", "node " + std::to_string(n.id) +
                              " (and possibly others) is not reachable from the root");
  }
  return report;
}

BoolMatrix to_adjacency_matrix(const ConnectivityGraph& g) {
  ValidationReport report = validate_graph(g);
  if (!report.ok())
    throw StructuralError("invalid connectivity graph:\n" + report.summary());

  std::map<int, int> pos;
  for (int i = 0; i < g.size(); ++i) pos[g.nodes[static_cast<std::size_t>(i)].id] = i;

  BoolMatrix adj = BoolMatrix::Zero(g.size(), g.size());
  for (const auto& [p, c] : g.edges) {
    adj(pos[p], pos[c]) = 1;
    adj(pos[c], pos[p]) = 1;
  }
  return adj;
}

BoolMatrix adjacency_to_attention_mask(const BoolMatrix& adj, bool self_loops,
                                       int hops) {
  if (adj.rows() != adj.cols())
    throw ShapeError("adjacency matrix must be square, got " +
                     std::to_string(adj.rows()) + "x" + std::to_string(adj.cols()));
  if (hops < 0) throw ParameterError("hops must be nonnegative");

  const int n = static_cast<int>(adj.rows());
  // reach = I (paths of length 0); grow by one adjacency step per hop
  BoolMatrix reach = BoolMatrix::Identity(n, n);
  for (int step = 0; step < hops; ++step) {
    BoolMatrix next = reach;
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < n; ++k)
        if (reach(i, k))
          for (int j = 0; j < n; ++j)
            if (adj(k, j)) next(i, j) = 1;
    if ((next.array() == reach.array()).all()) break;  // saturated
    reach = next;
  }
  if (!self_loops)
    for (int i = 0; i < n; ++i) reach(i, i) = 0;
  return reach;
}

Eigen::MatrixXd encode_routing_embeddings(const ConnectivityGraph& g,
                                          std::uint64_t seed) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(g.size(), kRoutingDim);
  for (int i = 0; i < g.size(); ++i) {
    const GraphNode& node = g.nodes[static_cast<std::size_t>(i)];
    out(i, static_cast<int>(node.joint_type)) = 1.0;

    // FNV-1a over the label, then one mixed lane per slot.
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : node.label) {
      h ^= ch;
      h *= 1099511628211ULL;
    }
    for (int j = 0; j < kSemanticEmbedDim; ++j) {
      std::uint64_t lane = mix_seed(h ^ seed, static_cast<std::uint64_t>(j));
      double unit = static_cast<double>(lane >> 11) * 0x1.0p-53;  // [0, 1)
      out(i, kJointTypeCount + j) = 2.0 * unit - 1.0;
    }
  }
  return out;
}

ConnectivityGraph graph_from_object(const ArticulatedObject& obj) {
  ConnectivityGraph g;
  g.root_id = obj.root_id;
  std::vector<const PartNode*> by_id(static_cast<std::size_t>(obj.size()), nullptr);
  for (const auto& p : obj.parts) {
    if (p.part_id < 0 || p.part_id >= obj.size())
      throw StructuralError("part id " + std::to_string(p.part_id) +
                            " outside dense range");
    by_id[static_cast<std::size_t>(p.part_id)] = &p;
  }
  for (int id = 0; id < obj.size(); ++id) {
    const PartNode* p = by_id[static_cast<std::size_t>(id)];
    if (!p) throw StructuralError("missing part id " + std::to_string(id));
    g.nodes.push_back({p->part_id, p->semantic_label, p->joint.type});
    if (p->parent_id != kRootParent) g.edges.emplace_back(p->parent_id, p->part_id);
  }
  return g;
}

std::string serialize_structure_graph(const ConnectivityGraph& g) {
  json doc;
  doc["root"] = g.root_id;
  doc["nodes"] = json::array();
  for (const auto& n : g.nodes) {
    doc["nodes"].push_back({{"id", n.id},
                            {"label", n.label},
                            {"joint_type", joint_type_name(n.joint_type)}});
  }
  doc["edges"] = json::array();
  for (const auto& [p, c] : g.edges) doc["edges"].push_back({p, c});
  return doc.dump(2);
}

namespace {

[[noreturn]] void schema_fail(const std::string& path, const std::string& what) {
  throw ParseError("structure response schema violation at " + path + ": " + what);
}

void require_keys(const json& obj, const std::string& path,
                  const std::set<std::string>& allowed) {
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (!allowed.count(key)) schema_fail(path + "." + key, "unknown key");
  }
}

int require_int(const json& v, const std::string& path) {
  if (!v.is_number_integer()) schema_fail(path, "expected an integer");
  return v.get<int>();
}

}  // namespace

ConnectivityGraph parse_structure_response(const std::string& payload) {
  json doc;
  try {
    doc = json::parse(payload);
  } catch (const json::parse_error& e) {
    throw ParseError("malformed structure response at byte " +
                     std::to_string(e.byte) + ": " + e.what());
  }

  if (!doc.is_object()) schema_fail("$", "payload must be a JSON object");
  require_keys(doc, "$", {"root", "nodes", "edges"});
  for (const char* key : {"root", "nodes", "edges"})
    if (!doc.contains(key)) schema_fail(std::string("$.") + key, "missing");

  ConnectivityGraph g;
  g.root_id = require_int(doc["root"], "$.root");

  if (!doc["nodes"].is_array()) schema_fail("$.nodes", "expected an array");
  int ni = 0;
  for (const auto& n : doc["nodes"]) {
    std::string path = "$.nodes[" + std::to_string(ni++) + "]";
    if (!n.is_object()) schema_fail(path, "expected an object");
    require_keys(n, path, {"id", "label", "joint_type"});
    for (const char* key : {"id", "label", "joint_type"})
      if (!n.contains(key)) schema_fail(path + "." + key, "missing");
    GraphNode node;
    node.id = require_int(n["id"], path + ".id");
    if (!n["label"].is_string()) schema_fail(path + ".label", "expected a string");
    node.label = n["label"].get<std::string>();
    if (!n["joint_type"].is_string())
      schema_fail(path + ".joint_type", "expected a string");
    try {
      node.joint_type = joint_type_from_name(n["joint_type"].get<std::string>());
    } catch (const ParseError&) {
      schema_fail(path + ".joint_type",
                  "unknown joint type '" + n["joint_type"].get<std::string>() + "'");
    }
    g.nodes.push_back(std::move(node));
  }

  if (!doc["edges"].is_array()) schema_fail("$.edges", "expected an array");
  int ei = 0;
  for (const auto& e : doc["edges"]) {
    std::string path = "$.edges[" + std::to_string(ei++) + "]";
    if (!e.is_array() || e.size() != 2) schema_fail(path, "expected a [parent, child] pair");
    g.edges.emplace_back(require_int(e[0], path + "[0]"),
                         require_int(e[1], path + "[1]"));
  }

  ValidationReport report = validate_graph(g);
  if (!report.ok())
    throw ParseError("structure response is not a valid tree:\n" + report.summary());
  return g;
}

}  // namespace artikit
