#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "artikit/io.hpp"
#include "artikit/synthetic.hpp"
#include "support/fixtures.hpp"

using namespace artikit;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

void write_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << text;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json load_json(const fs::path& path) { return json::parse(read_file(path)); }

void dump_json(const json& j, const fs::path& path) {
  std::ofstream out(path);
  out << j.dump(2) << "\n";
}

// Object with every joint kind, latents and states exercised.
ArticulatedObject full_object() {
  ArticulatedObject obj = testing::random_tree(5, 77);
  obj.norm_scale = 0.37;
  obj.norm_offset = {0.001, -0.25, 1.0 / 3.0};
  obj.parts[2].shape_latent = Eigen::Vector4d(0.1, -0.2, 0.3, -0.4);
  obj.parts[3].state = 0.625;
  return obj;
}

void check_same_object(const ArticulatedObject& a, const ArticulatedObject& b,
                       double tol) {
  REQUIRE(a.size() == b.size());
  CHECK(a.category == b.category);
  CHECK(a.root_id == b.root_id);
  if (tol == 0.0) {
    CHECK(a.norm_scale == b.norm_scale);
    CHECK((a.norm_offset - b.norm_offset).cwiseAbs().maxCoeff() == 0.0);
  } else {
    CHECK(std::abs(a.norm_scale - b.norm_scale) <= tol);
    CHECK((a.norm_offset - b.norm_offset).cwiseAbs().maxCoeff() <= tol);
  }
  for (std::size_t i = 0; i < a.parts.size(); ++i) {
    const PartNode& pa = a.parts[i];
    const PartNode& pb = b.parts[i];
    CHECK(pa.part_id == pb.part_id);
    CHECK(pa.parent_id == pb.parent_id);
    CHECK(pa.semantic_label == pb.semantic_label);
    CHECK(pa.joint.type == pb.joint.type);
    CHECK(pa.shape_latent.has_value() == pb.shape_latent.has_value());
    Eigen::VectorXd va = attributes_to_vector(pa);
    Eigen::VectorXd vb = attributes_to_vector(pb);
    REQUIRE(va.size() == vb.size());
    if (tol == 0.0) {
      CHECK((va - vb).cwiseAbs().maxCoeff() == 0.0);
      CHECK(pa.joint.screw_pitch == pb.joint.screw_pitch);
    } else {
      CHECK((va - vb).cwiseAbs().maxCoeff() <= tol);
      CHECK(std::abs(pa.joint.screw_pitch - pb.joint.screw_pitch) <= tol);
    }
  }
}

}  // namespace

TEST_CASE("object files round trip bitwise") {
  auto dir = testing::scratch_dir("objfmt");
  std::string path = (dir / "obj.akj").string();
  ArticulatedObject obj = full_object();
  save_object(obj, path);
  ArticulatedObject back = load_object(path);
  check_same_object(obj, back, 0.0);
  CHECK(back.parts[2].shape_latent.has_value());
  CHECK((*back.parts[2].shape_latent - *obj.parts[2].shape_latent)
            .cwiseAbs()
            .maxCoeff() == 0.0);
  CHECK(validate_object(back).ok());

  // denormals and awkward doubles survive
  obj.parts[1].obb.center.x() = 5e-324;
  obj.parts[1].state = 0.1 + 0.2;
  save_object(obj, path);
  back = load_object(path);
  CHECK(back.parts[1].obb.center.x() == 5e-324);
  CHECK(back.parts[1].state == 0.1 + 0.2);

  ArticulatedObject broken = obj;
  broken.parts[1].parent_id = 1;
  CHECK_THROWS_AS(save_object(broken, path), ParameterError);
  CHECK_THROWS_AS(load_object((dir / "absent.akj").string()), IoError);
}

TEST_CASE("object files are strictly validated field by field") {
  auto dir = testing::scratch_dir("objstrict");
  std::string path = (dir / "obj.akj").string();
  save_object(testing::two_part_door(), path);
  json good = load_json(path);

  auto expect_parse_error = [&](json doc, const std::string& needle) {
    std::string tampered = (dir / "tampered.akj").string();
    dump_json(doc, tampered);
    try {
      load_object(tampered);
      FAIL_CHECK("expected a parse error mentioning " << needle);
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };

  json doc = good;
  doc["surprise"] = 1;
  expect_parse_error(doc, "surprise");

  doc = good;
  doc["parts"][0].erase("state");
  expect_parse_error(doc, "parts[0]");

  doc = good;
  doc["parts"][1]["joint"]["flavor"] = "mint";
  expect_parse_error(doc, "parts[1].joint");

  doc = good;
  doc["parts"][1]["joint"]["type"] = "ball";
  expect_parse_error(doc, "ball");

  doc = good;
  doc["parts"][1]["state"] = 1.5;
  expect_parse_error(doc, "state");

  doc = good;
  doc["parts"][0]["obb"]["center"] = {1.0, 2.0};
  expect_parse_error(doc, "center");

  doc = good;
  doc["root"] = "zero";
  expect_parse_error(doc, "root");

  // structural damage surfaces through validation, still a parse error
  doc = good;
  doc["parts"][1]["parent"] = 7;
  expect_parse_error(doc, "invalid object");

  doc = good;
  doc["format_version"] = "2";
  std::string versioned = (dir / "versioned.akj").string();
  dump_json(doc, versioned);
  CHECK_THROWS_AS(load_object(versioned), FormatError);

  write_file(dir / "garbage.akj", "not json at all {");
  CHECK_THROWS_AS(load_object((dir / "garbage.akj").string()), ParseError);
}

TEST_CASE("object bundles carry their meshes") {
  auto dir = testing::scratch_dir("bundle");
  std::string path = (dir / "door.akj").string();
  ArticulatedObject obj = testing::two_part_door();
  obj.parts[1].mesh_ref = "door_mesh.obj";
  MeshStore meshes;
  meshes["door_mesh.obj"] = testing::unit_cube_mesh({0.45, 0.2, 0.0});

  save_object_bundle(obj, meshes, path);
  ObjectBundle bundle = load_object_bundle(path);
  check_same_object(obj, bundle.object, 0.0);
  REQUIRE(bundle.meshes.count("door_mesh.obj") == 1);
  const TriMesh& mesh = bundle.meshes.at("door_mesh.obj");
  REQUIRE(mesh.vertices.size() == 8);
  CHECK(mesh.faces.size() == 12);
  for (std::size_t i = 0; i < 8; ++i)
    CHECK((mesh.vertices[i] - meshes.at("door_mesh.obj").vertices[i])
              .cwiseAbs()
              .maxCoeff() == 0.0);

  MeshStore empty;
  CHECK_THROWS_AS(save_object_bundle(obj, empty, path), LookupError);
}

TEST_CASE("wavefront subset parsing") {
  auto dir = testing::scratch_dir("obj");

  SUBCASE("cube round trip is exact") {
    std::string path = (dir / "cube.obj").string();
    TriMesh cube = testing::unit_cube_mesh({0.1, -0.2, 0.3});
    save_obj(cube, path);
    TriMesh back = load_obj(path);
    REQUIRE(back.vertices.size() == 8);
    REQUIRE(back.faces.size() == 12);
    for (std::size_t i = 0; i < 8; ++i)
      CHECK((back.vertices[i] - cube.vertices[i]).cwiseAbs().maxCoeff() == 0.0);
    for (std::size_t i = 0; i < 12; ++i) CHECK(back.faces[i] == cube.faces[i]);
  }
  SUBCASE("all face token forms and fan triangulation") {
    write_file(dir / "forms.obj",
               "# comment\n"
               "v 0 0 0\n"
               "v 1 0 0\n"
               "v 1 1 0\n"
               "v 0 1 0\n"
               "vt 0 0\n"
               "vn 0 0 1\n"
               "usemtl ignored\n"
               "f 1 2 3\n"
               "f 1/1 2/1 3/1\n"
               "f 1//1 2//1 3//1\n"
               "f 1/1/1 2/1/1 3/1/1\n"
               "f 1 2 3 4\n"
               "f -4 -3 -2\n");
    TriMesh mesh = load_obj((dir / "forms.obj").string());
    CHECK(mesh.vertices.size() == 4);
    // four single triangles, one quad fan (2), one negative-index triangle
    REQUIRE(mesh.faces.size() == 7);
    std::array<int, 3> tri = {0, 1, 2};
    for (std::size_t k = 0; k < 4; ++k) CHECK(mesh.faces[k] == tri);
    CHECK(mesh.faces[4] == tri);
    CHECK(mesh.faces[5] == std::array<int, 3>{0, 2, 3});
    CHECK(mesh.faces[6] == tri);
  }
  SUBCASE("malformed records carry their line number") {
    auto expect_error = [&](const std::string& body, const std::string& needle) {
      write_file(dir / "bad.obj", body);
      try {
        load_obj((dir / "bad.obj").string());
        FAIL_CHECK("expected a parse error for: " << body);
      } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find(needle) != std::string::npos);
      }
    };
    expect_error("v 0 0\n", "line 1");
    expect_error("v 0 0 zero\n", "bad number");
    expect_error("v 0 0 0\nf 1 2 3\n", "line 2");  // index out of range
    expect_error("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n", "index 0");
    expect_error("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2\n", "at least 3");
    expect_error("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3x\n", "face token");
    CHECK_THROWS_AS(load_obj((dir / "missing.obj").string()), IoError);
  }
}

TEST_CASE("feature files round trip through 32-bit floats") {
  auto dir = testing::scratch_dir("feat");
  std::string path = (dir / "tokens.akf").string();

  Eigen::MatrixXd f(3, 5);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 5; ++j) f(i, j) = 0.1 * (i + 1) - 0.07 * j;
  save_features(f, path);
  Eigen::MatrixXd back = load_features(path);
  REQUIRE(back.rows() == 3);
  REQUIRE(back.cols() == 5);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 5; ++j)
      CHECK(back(i, j) == static_cast<double>(static_cast<float>(f(i, j))));

  SUBCASE("header magic") {
    std::string text = read_file(path);
    CHECK(text.rfind("AKFT", 0) == 0);
    write_file(dir / "bad.akf", "BLOB" + text.substr(4));
    CHECK_THROWS_AS(load_features((dir / "bad.akf").string()), FormatError);
  }
  SUBCASE("truncation and trailing bytes") {
    std::string text = read_file(path);
    write_file(dir / "short.akf", text.substr(0, text.size() / 2));
    CHECK_THROWS_AS(load_features((dir / "short.akf").string()), FormatError);
    write_file(dir / "fat.akf", text + "x");
    CHECK_THROWS_AS(load_features((dir / "fat.akf").string()), FormatError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_features((dir / "absent.akf").string()), IoError);
  }
}

TEST_CASE("mobility-style robot descriptions ingest with normalization") {
  auto dir = testing::scratch_dir("urdf-cabinet");
  fs::create_directories(dir / "meshes");
  // the base box has distinct extents so its refit is well posed; the door,
  // a 0.2 cube hung at x = 1, pushes the rest-pose bounds to 2.1 wide
  save_obj(obb_to_mesh(OrientedBox::make({0, 0, 0}, {1, 0.8, 0.6}, {0, 0, 0})),
           (dir / "meshes" / "base.obj").string());
  save_obj(obb_to_mesh(OrientedBox::make({0, 0, 0}, {0.1, 0.1, 0.1}, {0, 0, 0})),
           (dir / "meshes" / "door.obj").string());
  write_file(dir / "mobility.urdf", R"(<?xml version="1.0"?>
<robot name="cabinet">
  <link name="base">
    <visual><geometry><mesh filename="meshes/base.obj"/></geometry></visual>
  </link>
  <link name="door">
    <visual><geometry><mesh filename="meshes/door.obj"/></geometry></visual>
  </link>
  <joint name="hinge" type="revolute">
    <origin xyz="1 0 0"/>
    <parent link="base"/>
    <child link="door"/>
    <axis xyz="0 0 1"/>
    <limit lower="0" upper="1.5708"/>
  </joint>
</robot>
)");

  ObjectBundle bundle = parse_mobility_urdf(dir.string());
  const ArticulatedObject& obj = bundle.object;
  CHECK(validate_object(obj).ok());
  CHECK(obj.category == "cabinet");
  REQUIRE(obj.size() == 2);
  CHECK(obj.root_id == 0);
  CHECK(obj.parts[0].semantic_label == "base");
  CHECK(obj.parts[0].joint.type == JointType::Fixed);
  CHECK(obj.parts[1].semantic_label == "door");
  CHECK(obj.parts[1].parent_id == 0);
  CHECK(obj.parts[1].joint.type == JointType::Revolute);

  // rest bounds 2.1 x 2 x 2 centered at (0.05, 0, 0)
  const double scale = 1.0 / 2.1;
  CHECK(obj.norm_scale == doctest::Approx(scale).epsilon(1e-12));
  CHECK(obj.norm_offset.x() == doctest::Approx(-0.05).epsilon(1e-12));
  // rotation limits stay verbatim under normalization
  CHECK(obj.parts[1].joint.rot_min() == 0.0);
  CHECK(obj.parts[1].joint.rot_max() == doctest::Approx(1.5708).epsilon(1e-15));
  // the hinge anchor moves into the normalized frame
  CHECK(obj.parts[1].joint.origin.x() ==
        doctest::Approx((1.0 - 0.05) * scale).epsilon(1e-12));
  CHECK(obj.parts[1].joint.direction.z() == doctest::Approx(1.0).epsilon(1e-15));

  // meshes land inside the origin-centered unit cube
  REQUIRE(obj.parts[0].mesh_ref.has_value());
  const TriMesh& base_mesh = bundle.meshes.at(*obj.parts[0].mesh_ref);
  Aabb bounds = base_mesh.bounds();
  CHECK(bounds.max.cwiseAbs().maxCoeff() <= 0.5 + 1e-9);
  CHECK(bounds.min.cwiseAbs().maxCoeff() <= 0.5 + 1e-9);
  // the base box is fitted tightly: half extents 1 scaled down
  CHECK(obj.parts[0].obb.half_extents.maxCoeff() ==
        doctest::Approx(scale).epsilon(1e-6));
}

TEST_CASE("robot description joint mapping and selection rules") {
  SUBCASE("prismatic, screw marker and translation-range scaling") {
    auto dir = testing::scratch_dir("urdf-gadget");
    write_file(dir / "gadget.urdf", R"(<robot name="gadget">
  <link name="base"/>
  <link name="slider"/>
  <link name="cap"/>
  <joint name="slide" type="prismatic">
    <origin xyz="0 1 0"/>
    <parent link="base"/>
    <child link="slider"/>
    <axis xyz="0 1 0"/>
    <limit lower="-0.2" upper="0.3"/>
  </joint>
  <joint name="twist" type="prismatic" artikit_screw_pitch="0.05">
    <origin xyz="0 0 1"/>
    <parent link="base"/>
    <child link="cap"/>
    <axis xyz="0 0 1"/>
    <limit lower="0" upper="0.1"/>
  </joint>
</robot>
)");
    ObjectBundle bundle = parse_mobility_urdf(dir.string());
    const ArticulatedObject& obj = bundle.object;
    REQUIRE(obj.size() == 3);
    // meshless links anchor the bounds at the joint origins: extent 1 in y
    // and z, so the normalization scale stays 1
    CHECK(obj.norm_scale == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(obj.parts[1].joint.type == JointType::Prismatic);
    CHECK(obj.parts[1].joint.trans_min() == doctest::Approx(-0.2).epsilon(1e-12));
    CHECK(obj.parts[1].joint.trans_max() == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(obj.parts[2].joint.type == JointType::Screw);
    CHECK(obj.parts[2].joint.screw_pitch == doctest::Approx(0.05).epsilon(1e-12));
  }
  SUBCASE("continuous joints default to a full turn") {
    auto dir = testing::scratch_dir("urdf-wheel");
    write_file(dir / "wheel.urdf", R"(<robot name="wheel">
  <link name="frame"/>
  <link name="disc"/>
  <link name="cap"/>
  <joint name="spin" type="continuous">
    <origin xyz="1 0 0"/>
    <parent link="frame"/>
    <child link="disc"/>
    <axis xyz="1 0 0"/>
  </joint>
  <joint name="bounded" type="continuous">
    <origin xyz="0 1 0"/>
    <parent link="frame"/>
    <child link="cap"/>
    <axis xyz="0 1 0"/>
    <limit lower="-1" upper="2"/>
  </joint>
</robot>
)");
    ObjectBundle bundle = parse_mobility_urdf(dir.string());
    CHECK(bundle.object.parts[1].joint.type == JointType::Continuous);
    CHECK(bundle.object.parts[1].joint.rot_min() ==
          doctest::Approx(-kPi).epsilon(1e-15));
    CHECK(bundle.object.parts[1].joint.rot_max() ==
          doctest::Approx(kPi).epsilon(1e-15));
    // an explicit limit on a continuous joint is kept verbatim
    CHECK(bundle.object.parts[2].joint.rot_min() ==
          doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(bundle.object.parts[2].joint.rot_max() ==
          doctest::Approx(2.0).epsilon(1e-15));
  }
  SUBCASE("the preferred document name wins") {
    auto dir = testing::scratch_dir("urdf-pick");
    write_file(dir / "aaa.urdf", "<robot name=\"wrong\"><link name=\"a\"/></robot>");
    write_file(dir / "mobility.urdf",
               "<robot name=\"right\"><link name=\"a\"/></robot>");
    CHECK(parse_mobility_urdf(dir.string()).object.category == "right");
    fs::remove(dir / "mobility.urdf");
    CHECK(parse_mobility_urdf(dir.string()).object.category == "wrong");
    fs::remove(dir / "aaa.urdf");
    CHECK_THROWS_AS(parse_mobility_urdf(dir.string()), IoError);
    CHECK_THROWS_AS(parse_mobility_urdf((dir / "nodir").string()), IoError);
  }
}

TEST_CASE("robot description error reporting") {
  auto dir = testing::scratch_dir("urdf-errors");
  auto expect_throw = [&](const std::string& name, const std::string& body,
                          const std::string& needle, bool structural) {
    fs::path path = dir / name;
    write_file(path, body);
    try {
      parse_mobility_urdf(path.string());
      FAIL_CHECK("expected failure for " << name);
    } catch (const StructuralError& e) {
      CHECK(structural);
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    } catch (const ParseError& e) {
      CHECK(!structural);
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };

  expect_throw("nolimit.urdf", R"(<robot name="r">
  <link name="a"/><link name="b"/>
  <joint name="j" type="revolute">
    <parent link="a"/><child link="b"/><axis xyz="0 0 1"/>
  </joint>
</robot>)",
               "requires a limit", false);

  expect_throw("badtype.urdf", R"(<robot name="r">
  <link name="a"/><link name="b"/>
  <joint name="j" type="floating">
    <parent link="a"/><child link="b"/>
  </joint>
</robot>)",
               "unsupported joint type", false);

  expect_throw("pitchmisuse.urdf", R"(<robot name="r">
  <link name="a"/><link name="b"/>
  <joint name="j" type="revolute" artikit_screw_pitch="0.1">
    <parent link="a"/><child link="b"/>
    <limit lower="0" upper="1"/>
  </joint>
</robot>)",
               "artikit_screw_pitch", false);

  expect_throw("cycle.urdf", R"(<robot name="r">
  <link name="a"/><link name="b"/>
  <joint name="j1" type="fixed"><parent link="a"/><child link="b"/></joint>
  <joint name="j2" type="fixed"><parent link="b"/><child link="a"/></joint>
</robot>)",
               "kinematic loop", true);

  expect_throw("tworoots.urdf", R"(<robot name="r">
  <link name="a"/><link name="b"/><link name="c"/>
  <joint name="j" type="fixed"><parent link="a"/><child link="b"/></joint>
</robot>)",
               "multiple root links", true);

  expect_throw("twoparents.urdf", R"(<robot name="r">
  <link name="a"/><link name="b"/><link name="c"/>
  <joint name="j1" type="fixed"><parent link="a"/><child link="c"/></joint>
  <joint name="j2" type="fixed"><parent link="b"/><child link="c"/></joint>
</robot>)",
               "more than one parent", true);

  expect_throw("duplink.urdf", R"(<robot name="r">
  <link name="a"/><link name="a"/>
</robot>)",
               "duplicate link name", false);

  expect_throw("unknownchild.urdf", R"(<robot name="r">
  <link name="a"/>
  <joint name="j" type="fixed"><parent link="a"/><child link="ghost"/></joint>
</robot>)",
               "unknown child link", false);

  expect_throw("norobot.urdf", "<machine/>", "no <robot> element", false);

  expect_throw("badstate.urdf", R"(<robot name="r">
  <link name="a" artikit_state="1.5"/>
</robot>)",
               "outside [0, 1]", false);
}

TEST_CASE("export followed by ingest is the identity") {
  auto dir = testing::scratch_dir("urdf-roundtrip");

  SUBCASE("hand-built door object") {
    ArticulatedObject obj = testing::two_part_door();
    obj.parts[1].state = 0.25;
    std::string path = (dir / "door" / "object.urdf").string();
    fs::create_directories(dir / "door");
    export_urdf(obj, {}, path);
    ObjectBundle back = parse_mobility_urdf(path);
    check_same_object(obj, back.object, 1e-9);
  }
  SUBCASE("every synthetic object survives, meshes included") {
    auto dataset = make_synthetic_dataset(8, 0);
    for (std::size_t k = 0; k < dataset.size(); ++k) {
      fs::path sub = dir / ("case" + std::to_string(k));
      fs::create_directories(sub);
      export_urdf(dataset[k], {}, (sub / "object.urdf").string());
      ObjectBundle back = parse_mobility_urdf(sub.string());
      check_same_object(dataset[k], back.object, 1e-9);
      for (const PartNode& part : back.object.parts) {
        REQUIRE(part.mesh_ref.has_value());
        CHECK(back.meshes.count(*part.mesh_ref) == 1);
      }
    }
  }
  SUBCASE("the exported document states the contract pieces") {
    ArticulatedObject obj = make_synthetic_dataset(8, 0)[2];
    bool has_screw = false, has_continuous = false;
    for (auto& part : obj.parts) {
      has_screw |= part.joint.type == JointType::Screw;
      has_continuous |= part.joint.type == JointType::Continuous;
    }
    // dataset object 2 carries both kinds; guard the fixture assumption
    REQUIRE(has_screw);
    REQUIRE(has_continuous);
    std::string path = (dir / "doc" / "object.urdf").string();
    fs::create_directories(dir / "doc");
    export_urdf(obj, {}, path);
    std::string text = read_file(path);
    CHECK(text.find("artikit_screw_pitch") != std::string::npos);
    CHECK(text.find("type=\"screw\"") == std::string::npos);
    CHECK(text.find("artikit_canonical") != std::string::npos);
    CHECK(text.find("artikit_obb") != std::string::npos);
    std::size_t joints = 0;
    for (std::size_t at = text.find("<joint"); at != std::string::npos;
         at = text.find("<joint", at + 1))
      ++joints;
    CHECK(joints == obj.size() - 1);  // the root link has no parent joint
    if (has_continuous)
      CHECK(text.find("type=\"continuous\"") != std::string::npos);
  }
  SUBCASE("exporting an invalid object is rejected") {
    ArticulatedObject broken = testing::two_part_door();
    broken.parts[1].parent_id = 1;
    CHECK_THROWS_AS(
        export_urdf(broken, {}, (dir / "broken.urdf").string()),
        ParameterError);
  }
}
