#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "artikit/graph.hpp"
#include "support/fixtures.hpp"

using namespace artikit;

namespace {

ConnectivityGraph chain(int n) {
  ConnectivityGraph g;
  g.root_id = 0;
  for (int i = 0; i < n; ++i) {
    g.nodes.push_back({i, "part" + std::to_string(i),
                       i == 0 ? JointType::Fixed : JointType::Revolute});
    if (i > 0) g.edges.emplace_back(i - 1, i);
  }
  return g;
}

}  // namespace

TEST_CASE("graph validation") {
  CHECK(validate_graph(chain(4)).ok());

  SUBCASE("duplicate node id") {
    ConnectivityGraph g = chain(3);
    g.nodes[2].id = 1;
    CHECK(validate_graph(g).has("node-id-dup"));
  }
  SUBCASE("edge endpoint unknown") {
    ConnectivityGraph g = chain(3);
    g.edges.emplace_back(0, 9);
    CHECK(validate_graph(g).has("edge-endpoint"));
  }
  SUBCASE("two parents") {
    ConnectivityGraph g = chain(3);
    g.edges.emplace_back(0, 2);
    ValidationReport r = validate_graph(g);
    CHECK_FALSE(r.ok());
    CHECK((r.has("multi-parent") || r.has("edge-count")));
  }
  SUBCASE("self edge") {
    ConnectivityGraph g = chain(3);
    g.edges[0] = {1, 1};
    CHECK(validate_graph(g).has("self-edge"));
  }
  SUBCASE("disconnected island") {
    ConnectivityGraph g = chain(4);
    g.edges.erase(g.edges.begin() + 2);  // node 3 unreachable
    ValidationReport r = validate_graph(g);
    CHECK_FALSE(r.ok());
  }
  SUBCASE("missing root") {
    ConnectivityGraph g = chain(3);
    g.root_id = 7;
    CHECK(validate_graph(g).has("root-missing"));
  }
}

TEST_CASE("adjacency matrix is symmetric with an empty diagonal") {
  ConnectivityGraph g = chain(4);
  BoolMatrix adj = to_adjacency_matrix(g);
  REQUIRE(adj.rows() == 4);
  for (int i = 0; i < 4; ++i) {
    CHECK(adj(i, i) == 0);
    for (int j = 0; j < 4; ++j) CHECK(adj(i, j) == adj(j, i));
  }
  CHECK(adj(0, 1) == 1);
  CHECK(adj(0, 2) == 0);

  ConnectivityGraph bad = chain(3);
  bad.nodes[1].id = 0;
  CHECK_THROWS_AS(to_adjacency_matrix(bad), StructuralError);
}

TEST_CASE("attention masks widen with hop count") {
  BoolMatrix adj = to_adjacency_matrix(chain(5));

  BoolMatrix one = adjacency_to_attention_mask(adj, true, 1);
  CHECK(one(0, 0) == 1);  // self loop requested
  CHECK(one(0, 1) == 1);
  CHECK(one(0, 2) == 0);  // two hops away

  BoolMatrix two = adjacency_to_attention_mask(adj, true, 2);
  CHECK(two(0, 2) == 1);
  CHECK(two(0, 3) == 0);

  BoolMatrix full = adjacency_to_attention_mask(adj, true, 4);
  CHECK(full.minCoeff() == 1);  // n-1 hops reach everything on a chain

  BoolMatrix no_self = adjacency_to_attention_mask(adj, false, 1);
  CHECK(no_self(2, 2) == 0);
}

TEST_CASE("routing embeddings are typed, bounded and reproducible") {
  ConnectivityGraph g = chain(3);
  g.nodes[1].joint_type = JointType::Prismatic;
  g.nodes[2].label = g.nodes[1].label;  // same label, different position
  g.nodes[2].joint_type = JointType::Prismatic;

  Eigen::MatrixXd rows = encode_routing_embeddings(g, 7);
  REQUIRE(rows.rows() == 3);
  REQUIRE(rows.cols() == kRoutingDim);
  // one-hot prefix
  for (int i = 0; i < 3; ++i) {
    CHECK(rows.row(i).head(kJointTypeCount).sum() == 1.0);
    CHECK(rows.row(i).head(kJointTypeCount).maxCoeff() == 1.0);
  }
  // label embedding in [-1, 1) and equal for equal labels
  CHECK(rows.row(1).tail(kSemanticEmbedDim).minCoeff() >= -1.0);
  CHECK(rows.row(1).tail(kSemanticEmbedDim).maxCoeff() < 1.0);
  CHECK(rows.row(1).tail(kSemanticEmbedDim) ==
        rows.row(2).tail(kSemanticEmbedDim));

  CHECK(encode_routing_embeddings(g, 7) == rows);
  CHECK(encode_routing_embeddings(g, 8) != rows);
}

TEST_CASE("object graphs mirror the part tree") {
  ArticulatedObject obj = testing::two_part_door();
  ConnectivityGraph g = graph_from_object(obj);
  REQUIRE(g.size() == 2);
  CHECK(g.root_id == 0);
  CHECK(g.nodes[1].label == "door");
  CHECK(g.nodes[1].joint_type == JointType::Revolute);
  REQUIRE(g.edges.size() == 1);
  CHECK(g.edges[0] == std::pair<int, int>(0, 1));
  CHECK(validate_graph(g).ok());
}

TEST_CASE("structure payload round trip") {
  ConnectivityGraph g = chain(3);
  g.nodes[1].joint_type = JointType::Prismatic;
  std::string payload = serialize_structure_graph(g);
  ConnectivityGraph back = parse_structure_response(payload);
  REQUIRE(back.size() == 3);
  CHECK(back.root_id == 0);
  CHECK(back.nodes[1].joint_type == JointType::Prismatic);
  CHECK(back.edges == g.edges);
  // canonical form is stable
  CHECK(serialize_structure_graph(back) == payload);
}

TEST_CASE("structure payload parsing is strict") {
  const char* good = R"({"root": 0,
    "nodes": [{"id": 0, "label": "base", "joint_type": "fixed"},
              {"id": 1, "label": "door", "joint_type": "revolute"}],
    "edges": [[0, 1]]})";
  ConnectivityGraph g = parse_structure_response(good);
  CHECK(g.size() == 2);

  SUBCASE("unknown top-level key") {
    CHECK_THROWS_AS(parse_structure_response(
                        R"({"root": 0, "nodes": [], "edges": [], "extra": 1})"),
                    ParseError);
  }
  SUBCASE("unknown joint type") {
    CHECK_THROWS_AS(parse_structure_response(
                        R"({"root": 0, "nodes": [{"id": 0, "label": "x",
                            "joint_type": "ball"}], "edges": []})"),
                    ParseError);
  }
  SUBCASE("edges must form a tree") {
    CHECK_THROWS_AS(parse_structure_response(
                        R"({"root": 0,
                            "nodes": [{"id": 0, "label": "a", "joint_type": "fixed"},
                                      {"id": 1, "label": "b", "joint_type": "fixed"}],
                            "edges": [[0, 1], [1, 0]]})"),
                    ParseError);
  }
  SUBCASE("malformed text names the byte offset") {
    try {
      parse_structure_response("{\"root\": 0, ");
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("byte") != std::string::npos);
    }
  }
}
