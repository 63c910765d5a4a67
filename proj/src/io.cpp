#include "artikit/io.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <vector>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <nlohmann/json.hpp>

#include "artikit/error.hpp"
#include "artikit/geometry.hpp"

namespace artikit {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;
namespace pt = boost::property_tree;

static_assert(std::endian::native == std::endian::little,
              "feature files assume a little-endian host");

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_vec(const double* v, int n) {
  std::string out;
  for (int i = 0; i < n; ++i) {
    if (i) out += ' ';
    out += fmt_g(v[i]);
  }
  return out;
}

double parse_double_token(const std::string& tok, const std::string& context) {
  const char* s = tok.c_str();
  char* end = nullptr;
  double v = std::strtod(s, &end);
  if (end == s || *end != '\0' || !std::isfinite(v))
    throw ParseError(context + ": bad number '" + tok + "'");
  return v;
}

std::vector<double> parse_doubles(const std::string& text, int expected,
                                  const std::string& context) {
  std::vector<double> out;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) out.push_back(parse_double_token(tok, context));
  if (expected >= 0 && static_cast<int>(out.size()) != expected)
    throw ParseError(context + ": expected " + std::to_string(expected) +
                     " numbers, got " + std::to_string(out.size()));
  return out;
}

// ---- canonical object format ------------------------------------------------

[[noreturn]] void schema_fail(const std::string& path, const std::string& what) {
  throw ParseError(path + ": " + what);
}

void require_object_keys(const json& node, const std::string& path,
                         const std::set<std::string>& allowed) {
  if (!node.is_object()) schema_fail(path, "expected an object");
  for (const auto& item : node.items())
    if (!allowed.count(item.key())) schema_fail(path + "." + item.key(), "unknown key");
  for (const auto& key : allowed)
    if (!node.contains(key)) schema_fail(path + "." + key, "missing");
}

double as_number(const json& node, const std::string& path) {
  if (!node.is_number()) schema_fail(path, "expected a number");
  return node.get<double>();
}

int as_int(const json& node, const std::string& path) {
  if (!node.is_number_integer()) schema_fail(path, "expected an integer");
  return node.get<int>();
}

std::string as_string(const json& node, const std::string& path) {
  if (!node.is_string()) schema_fail(path, "expected a string");
  return node.get<std::string>();
}

Eigen::VectorXd as_vector(const json& node, int expected,
                          const std::string& path) {
  if (!node.is_array()) schema_fail(path, "expected an array");
  if (expected >= 0 && static_cast<int>(node.size()) != expected)
    schema_fail(path, "expected " + std::to_string(expected) + " numbers");
  Eigen::VectorXd v(node.size());
  for (std::size_t i = 0; i < node.size(); ++i)
    v[static_cast<Eigen::Index>(i)] =
        as_number(node[i], path + "[" + std::to_string(i) + "]");
  return v;
}

json vector_to_json(const Eigen::VectorXd& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

}  // namespace

void save_object(const ArticulatedObject& obj, const std::string& path) {
  ValidationReport report = validate_object(obj);
  if (!report.ok())
    throw ParameterError("cannot save invalid object: " + report.summary());

  json doc;
  doc["format_version"] = "1";
  doc["category"] = obj.category;
  doc["root"] = obj.root_id;
  doc["normalization"] = {
      {"scale", obj.norm_scale},
      {"offset", vector_to_json(obj.norm_offset)},
  };
  json parts = json::array();
  for (const PartNode& part : obj.parts) {
    json j;
    j["id"] = part.part_id;
    j["parent"] = part.parent_id;
    j["label"] = part.semantic_label;
    j["joint"] = {
        {"type", joint_type_name(part.joint.type)},
        {"origin", vector_to_json(part.joint.origin)},
        {"direction", vector_to_json(part.joint.direction)},
        {"range", vector_to_json(part.joint.range)},
        {"pitch", part.joint.screw_pitch},
    };
    j["obb"] = {
        {"center", vector_to_json(part.obb.center)},
        {"half_extents", vector_to_json(part.obb.half_extents)},
        {"rotation", vector_to_json(part.obb.rotation)},
    };
    j["state"] = part.state;
    j["latent"] = part.shape_latent ? vector_to_json(*part.shape_latent)
                                    : json(nullptr);
    j["mesh"] = part.mesh_ref ? json(*part.mesh_ref) : json(nullptr);
    parts.push_back(std::move(j));
  }
  doc["parts"] = std::move(parts);

  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << doc.dump(2) << "\n";
  if (!out) throw IoError("failed writing '" + path + "'");
}

ArticulatedObject load_object(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }

  require_object_keys(doc, "$",
                      {"format_version", "category", "root", "normalization",
                       "parts"});
  std::string version = as_string(doc["format_version"], "$.format_version");
  if (version != "1")
    throw FormatError(path + ": unsupported format_version '" + version +
                      "', expected \"1\"");

  ArticulatedObject obj;
  obj.category = as_string(doc["category"], "$.category");
  obj.root_id = as_int(doc["root"], "$.root");
  const json& norm = doc["normalization"];
  require_object_keys(norm, "$.normalization", {"scale", "offset"});
  obj.norm_scale = as_number(norm["scale"], "$.normalization.scale");
  obj.norm_offset = as_vector(norm["offset"], 3, "$.normalization.offset");

  const json& parts = doc["parts"];
  if (!parts.is_array()) schema_fail("$.parts", "expected an array");
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::string p = "parts[" + std::to_string(k) + "]";
    const json& pj = parts[k];
    require_object_keys(pj, p,
                        {"id", "parent", "label", "joint", "obb", "state",
                         "latent", "mesh"});
    PartNode part;
    part.part_id = as_int(pj["id"], p + ".id");
    part.parent_id = as_int(pj["parent"], p + ".parent");
    part.semantic_label = as_string(pj["label"], p + ".label");

    const json& jj = pj["joint"];
    require_object_keys(jj, p + ".joint",
                        {"type", "origin", "direction", "range", "pitch"});
    std::string type_name = as_string(jj["type"], p + ".joint.type");
    try {
      part.joint.type = joint_type_from_name(type_name);
    } catch (const ParseError&) {
      schema_fail(p + ".joint.type", "unknown joint type '" + type_name + "'");
    }
    // Assigned verbatim rather than through the canonicalizing constructors
    // so a save/load round trip is bitwise; validate_object below still
    // rejects anything out of contract.
    part.joint.origin = as_vector(jj["origin"], 3, p + ".joint.origin");
    part.joint.direction = as_vector(jj["direction"], 3, p + ".joint.direction");
    part.joint.range = as_vector(jj["range"], 4, p + ".joint.range");
    part.joint.screw_pitch = as_number(jj["pitch"], p + ".joint.pitch");

    const json& oj = pj["obb"];
    require_object_keys(oj, p + ".obb", {"center", "half_extents", "rotation"});
    part.obb.center = as_vector(oj["center"], 3, p + ".obb.center");
    part.obb.half_extents =
        as_vector(oj["half_extents"], 3, p + ".obb.half_extents");
    part.obb.rotation = as_vector(oj["rotation"], 3, p + ".obb.rotation");

    part.state = as_number(pj["state"], p + ".state");
    if (!(part.state >= 0.0 && part.state <= 1.0))
      schema_fail(p + ".state",
                  fmt_g(part.state) + " outside [0, 1]");

    if (!pj["latent"].is_null())
      part.shape_latent = as_vector(pj["latent"], -1, p + ".latent");
    if (!pj["mesh"].is_null())
      part.mesh_ref = as_string(pj["mesh"], p + ".mesh");
    obj.parts.push_back(std::move(part));
  }

  ValidationReport report = validate_object(obj);
  if (!report.ok())
    throw ParseError(path + ": invalid object: " + report.summary());
  return obj;
}

ObjectBundle load_object_bundle(const std::string& path) {
  ObjectBundle bundle;
  bundle.object = load_object(path);
  fs::path base = fs::path(path).parent_path();
  for (const PartNode& part : bundle.object.parts) {
    if (!part.mesh_ref || bundle.meshes.count(*part.mesh_ref)) continue;
    bundle.meshes[*part.mesh_ref] = load_obj((base / *part.mesh_ref).string());
  }
  return bundle;
}

void save_object_bundle(const ArticulatedObject& obj, const MeshStore& meshes,
                        const std::string& path) {
  for (const PartNode& part : obj.parts) {
    if (part.mesh_ref && !meshes.count(*part.mesh_ref))
      throw LookupError("mesh '" + *part.mesh_ref + "' not in store");
  }
  fs::path base = fs::path(path).parent_path();
  save_object(obj, path);
  std::set<std::string> written;
  for (const PartNode& part : obj.parts) {
    if (!part.mesh_ref || !written.insert(*part.mesh_ref).second) continue;
    fs::path target = base / *part.mesh_ref;
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    save_obj(meshes.at(*part.mesh_ref), target.string());
  }
}

// ---- wavefront meshes ---------------------------------------------------------

namespace {

int parse_face_index(const std::string& tok, int line_no,
                     const std::string& path) {
  const std::string context = path + ": line " + std::to_string(line_no);
  std::vector<std::string> fields;
  std::string cur;
  for (char c : tok) {
    if (c == '/') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(cur);
  if (fields.size() > 3)
    throw ParseError(context + ": bad face token '" + tok + "'");
  long vertex = 0;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (fields[i].empty()) {
      // only the texture slot of v//vn may be empty
      if (i == 1 && fields.size() == 3) continue;
      throw ParseError(context + ": bad face token '" + tok + "'");
    }
    const char* s = fields[i].c_str();
    char* end = nullptr;
    long v = std::strtol(s, &end, 10);
    if (end == s || *end != '\0')
      throw ParseError(context + ": bad face token '" + tok + "'");
    if (i == 0) vertex = v;
  }
  if (vertex == 0)
    throw ParseError(context + ": vertex index 0 is not allowed");
  return static_cast<int>(vertex);
}

}  // namespace

TriMesh load_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");

  TriMesh mesh;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string kind;
    if (!(ls >> kind) || kind[0] == '#') continue;
    const std::string context = path + ": line " + std::to_string(line_no);
    if (kind == "v") {
      std::vector<std::string> toks;
      std::string tok;
      while (ls >> tok) toks.push_back(tok);
      if (toks.size() != 3)
        throw ParseError(context + ": expected 3 vertex coordinates, got " +
                         std::to_string(toks.size()));
      Eigen::Vector3d v;
      for (int i = 0; i < 3; ++i)
        v[i] = parse_double_token(toks[static_cast<std::size_t>(i)], context);
      mesh.vertices.push_back(v);
    } else if (kind == "f") {
      std::vector<int> ids;
      std::string tok;
      const int n = static_cast<int>(mesh.vertices.size());
      while (ls >> tok) {
        int raw = parse_face_index(tok, line_no, path);
        int idx = raw > 0 ? raw - 1 : n + raw;
        if (idx < 0 || idx >= n)
          throw ParseError(context + ": vertex index " + std::to_string(raw) +
                           " out of range (have " + std::to_string(n) +
                           " vertices)");
        ids.push_back(idx);
      }
      if (ids.size() < 3)
        throw ParseError(context + ": face needs at least 3 vertices");
      for (std::size_t i = 1; i + 1 < ids.size(); ++i)
        mesh.faces.push_back({ids[0], ids[i], ids[i + 1]});
    }
    // vn, vt, o, g, s, mtllib, usemtl and friends are skipped
  }
  return mesh;
}

void save_obj(const TriMesh& mesh, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  char buf[160];
  for (const auto& v : mesh.vertices) {
    std::snprintf(buf, sizeof(buf), "v %.17g %.17g %.17g\n", v.x(), v.y(),
                  v.z());
    out << buf;
  }
  for (const auto& f : mesh.faces) {
    std::snprintf(buf, sizeof(buf), "f %d %d %d\n", f[0] + 1, f[1] + 1,
                  f[2] + 1);
    out << buf;
  }
  if (!out) throw IoError("failed writing '" + path + "'");
}

// ---- condition feature files ---------------------------------------------------

Eigen::MatrixXd load_features(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  char magic[4];
  if (!in.read(magic, 4) || std::string(magic, 4) != "AKFT")
    throw FormatError(path + ": bad feature file magic");
  std::uint32_t count = 0, dim = 0;
  if (!in.read(reinterpret_cast<char*>(&count), 4) ||
      !in.read(reinterpret_cast<char*>(&dim), 4))
    throw FormatError(path + ": feature file truncated");
  std::vector<float> data(static_cast<std::size_t>(count) * dim);
  if (!data.empty() &&
      !in.read(reinterpret_cast<char*>(data.data()),
               static_cast<std::streamsize>(data.size() * sizeof(float))))
    throw FormatError(path + ": feature file truncated");
  in.peek();
  if (!in.eof()) throw FormatError(path + ": trailing bytes");
  Eigen::MatrixXd m(count, dim);
  for (std::uint32_t i = 0; i < count; ++i)
    for (std::uint32_t j = 0; j < dim; ++j)
      m(i, j) = static_cast<double>(data[static_cast<std::size_t>(i) * dim + j]);
  return m;
}

void save_features(const Eigen::MatrixXd& features, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write("AKFT", 4);
  std::uint32_t count = static_cast<std::uint32_t>(features.rows());
  std::uint32_t dim = static_cast<std::uint32_t>(features.cols());
  out.write(reinterpret_cast<const char*>(&count), 4);
  out.write(reinterpret_cast<const char*>(&dim), 4);
  std::vector<float> data;
  data.reserve(static_cast<std::size_t>(count) * dim);
  for (std::uint32_t i = 0; i < count; ++i)
    for (std::uint32_t j = 0; j < dim; ++j)
      data.push_back(static_cast<float>(features(i, j)));
  if (!data.empty())
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!out) throw IoError("failed writing '" + path + "'");
}

// ---- PartNet-Mobility style URDF ----------------------------------------------

namespace {

struct UrdfVisual {
  RigidTransform origin;
  Eigen::Vector3d scale = Eigen::Vector3d::Ones();
  std::string mesh_file;
};

struct UrdfLink {
  std::string name;
  std::vector<UrdfVisual> visuals;
  std::optional<Eigen::VectorXd> obb_attr;     // 9 numbers
  std::optional<double> state_attr;
  std::optional<Eigen::VectorXd> latent_attr;
  std::optional<std::string> label_attr;
  std::optional<Eigen::Vector3d> joint_origin_attr;
  std::optional<Eigen::Vector3d> joint_direction_attr;
};

struct UrdfJoint {
  std::string name;
  std::string type;
  std::string parent;
  std::string child;
  RigidTransform origin;
  Eigen::Vector3d axis = Eigen::Vector3d::UnitX();
  bool has_limit = false;
  double lower = 0.0;
  double upper = 0.0;
  std::optional<double> screw_pitch;
};

Eigen::Matrix3d rpy_to_matrix(const Eigen::Vector3d& rpy) {
  return (Eigen::AngleAxisd(rpy.z(), Eigen::Vector3d::UnitZ()) *
          Eigen::AngleAxisd(rpy.y(), Eigen::Vector3d::UnitY()) *
          Eigen::AngleAxisd(rpy.x(), Eigen::Vector3d::UnitX()))
      .toRotationMatrix();
}

Eigen::Vector3d attr_vec3(const pt::ptree& node, const std::string& attr,
                          const Eigen::Vector3d& fallback,
                          const std::string& context) {
  auto text = node.get_optional<std::string>("<xmlattr>." + attr);
  if (!text) return fallback;
  std::vector<double> v = parse_doubles(*text, 3, context + " " + attr);
  return {v[0], v[1], v[2]};
}

RigidTransform parse_origin(const pt::ptree& node, const std::string& context) {
  RigidTransform t;
  if (auto origin = node.get_child_optional("origin")) {
    t.translation = attr_vec3(*origin, "xyz", Eigen::Vector3d::Zero(), context);
    t.rotation = rpy_to_matrix(
        attr_vec3(*origin, "rpy", Eigen::Vector3d::Zero(), context));
  }
  return t;
}

UrdfLink parse_link(const pt::ptree& node, const std::string& file) {
  UrdfLink link;
  auto name = node.get_optional<std::string>("<xmlattr>.name");
  if (!name) throw ParseError(file + ": link without a name attribute");
  link.name = *name;
  const std::string context = "link '" + link.name + "'";

  for (const auto& [key, child] : node) {
    if (key != "visual") continue;
    UrdfVisual visual;
    visual.origin = parse_origin(child, context);
    auto geometry = child.get_child_optional("geometry");
    if (!geometry)
      throw ParseError(context + ": visual without a geometry element");
    auto mesh = geometry->get_child_optional("mesh");
    if (!mesh) {
      for (const auto& [gkey, gval] : *geometry) {
        (void)gval;
        if (gkey != "<xmlattr>" && gkey != "<xmlcomment>")
          throw ParseError(context + ": unsupported geometry '" + gkey +
                           "', only mesh is handled");
      }
      throw ParseError(context + ": geometry without a mesh element");
    }
    auto filename = mesh->get_optional<std::string>("<xmlattr>.filename");
    if (!filename)
      throw ParseError(context + ": mesh without a filename attribute");
    visual.mesh_file = *filename;
    visual.scale =
        attr_vec3(*mesh, "scale", Eigen::Vector3d::Ones(), context);
    link.visuals.push_back(std::move(visual));
  }

  if (auto text = node.get_optional<std::string>("<xmlattr>.artikit_obb")) {
    std::vector<double> v = parse_doubles(*text, 9, context + " artikit_obb");
    link.obb_attr = Eigen::Map<Eigen::VectorXd>(v.data(), 9);
  }
  if (auto text = node.get_optional<std::string>("<xmlattr>.artikit_state"))
    link.state_attr = parse_double_token(*text, context + " artikit_state");
  if (auto text = node.get_optional<std::string>("<xmlattr>.artikit_latent")) {
    std::vector<double> v = parse_doubles(*text, -1, context + " artikit_latent");
    link.latent_attr = Eigen::Map<Eigen::VectorXd>(
        v.data(), static_cast<Eigen::Index>(v.size()));
  }
  if (auto text = node.get_optional<std::string>("<xmlattr>.artikit_label"))
    link.label_attr = *text;
  if (auto text =
          node.get_optional<std::string>("<xmlattr>.artikit_joint_origin")) {
    std::vector<double> v =
        parse_doubles(*text, 3, context + " artikit_joint_origin");
    link.joint_origin_attr = Eigen::Vector3d(v[0], v[1], v[2]);
  }
  if (auto text =
          node.get_optional<std::string>("<xmlattr>.artikit_joint_direction")) {
    std::vector<double> v =
        parse_doubles(*text, 3, context + " artikit_joint_direction");
    link.joint_direction_attr = Eigen::Vector3d(v[0], v[1], v[2]);
  }
  return link;
}

UrdfJoint parse_joint(const pt::ptree& node, const std::string& file) {
  UrdfJoint joint;
  auto name = node.get_optional<std::string>("<xmlattr>.name");
  if (!name) throw ParseError(file + ": joint without a name attribute");
  joint.name = *name;
  const std::string context = "joint '" + joint.name + "'";

  auto type = node.get_optional<std::string>("<xmlattr>.type");
  if (!type) throw ParseError(context + ": missing type attribute");
  joint.type = *type;

  auto parent = node.get_child_optional("parent");
  auto child = node.get_child_optional("child");
  if (!parent || !parent->get_optional<std::string>("<xmlattr>.link"))
    throw ParseError(context + ": missing parent link");
  if (!child || !child->get_optional<std::string>("<xmlattr>.link"))
    throw ParseError(context + ": missing child link");
  joint.parent = parent->get<std::string>("<xmlattr>.link");
  joint.child = child->get<std::string>("<xmlattr>.link");

  joint.origin = parse_origin(node, context);
  if (auto axis = node.get_child_optional("axis"))
    joint.axis = attr_vec3(*axis, "xyz", Eigen::Vector3d::UnitX(), context);

  if (auto limit = node.get_child_optional("limit")) {
    auto lower = limit->get_optional<std::string>("<xmlattr>.lower");
    auto upper = limit->get_optional<std::string>("<xmlattr>.upper");
    if (!lower || !upper)
      throw ParseError(context + ": limit element needs lower and upper");
    joint.lower = parse_double_token(*lower, context + " limit lower");
    joint.upper = parse_double_token(*upper, context + " limit upper");
    joint.has_limit = true;
  }
  if (auto text =
          node.get_optional<std::string>("<xmlattr>.artikit_screw_pitch"))
    joint.screw_pitch =
        parse_double_token(*text, context + " artikit_screw_pitch");
  return joint;
}

fs::path find_urdf(const std::string& directory) {
  fs::path dir(directory);
  if (fs::is_regular_file(dir)) return dir;
  if (!fs::is_directory(dir))
    throw IoError("no such directory: '" + directory + "'");
  fs::path preferred = dir / "mobility.urdf";
  if (fs::is_regular_file(preferred)) return preferred;
  std::vector<fs::path> candidates;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".urdf")
      candidates.push_back(entry.path());
  }
  std::sort(candidates.begin(), candidates.end());
  if (candidates.empty())
    throw IoError("no .urdf file in '" + directory + "'");
  return candidates.front();
}

TriMesh load_visual_mesh(const UrdfVisual& visual, const fs::path& base,
                         const std::string& link_name) {
  std::string file = visual.mesh_file;
  const std::string scheme = "package://";
  if (file.rfind(scheme, 0) == 0) file = file.substr(scheme.size());
  fs::path resolved = fs::path(file).is_absolute() ? fs::path(file) : base / file;
  if (!fs::is_regular_file(resolved))
    throw IoError("cannot resolve mesh '" + visual.mesh_file + "' for link '" +
                  link_name + "'");
  TriMesh mesh = load_obj(resolved.string());
  for (auto& v : mesh.vertices)
    v = visual.origin.apply(visual.scale.cwiseProduct(v));
  return mesh;
}

JointSpec joint_spec_from_urdf(const UrdfJoint& j, const UrdfLink& child_link,
                               const Eigen::Vector3d& anchor,
                               const Eigen::Vector3d& world_axis) {
  JointType type;
  double pitch = 0.02;
  if (j.type == "fixed") {
    type = JointType::Fixed;
  } else if (j.type == "revolute") {
    if (!j.has_limit)
      throw ParseError("joint '" + j.name +
                       "': revolute joint requires a limit element");
    type = JointType::Revolute;
  } else if (j.type == "continuous") {
    type = JointType::Continuous;
  } else if (j.type == "prismatic") {
    if (!j.has_limit)
      throw ParseError("joint '" + j.name +
                       "': prismatic joint requires a limit element");
    type = j.screw_pitch ? JointType::Screw : JointType::Prismatic;
    if (j.screw_pitch) pitch = *j.screw_pitch;
  } else {
    throw ParseError("unsupported joint type '" + j.type + "' in joint '" +
                     j.name + "'");
  }
  if (j.screw_pitch && j.type != "prismatic")
    throw ParseError("joint '" + j.name +
                     "': artikit_screw_pitch only applies to prismatic joints");

  Eigen::Vector4d range = Eigen::Vector4d::Zero();
  if (type == JointType::Revolute) {
    range[0] = j.lower;
    range[1] = j.upper;
  } else if (type == JointType::Continuous) {
    if (j.has_limit) {
      range[0] = j.lower;
      range[1] = j.upper;
    } else {
      range[0] = -kPi;
      range[1] = kPi;
    }
  } else if (type == JointType::Prismatic || type == JointType::Screw) {
    range[2] = j.lower;
    range[3] = j.upper;
  }

  Eigen::Vector3d origin =
      child_link.joint_origin_attr ? *child_link.joint_origin_attr : anchor;
  Eigen::Vector3d direction = child_link.joint_direction_attr
                                  ? *child_link.joint_direction_attr
                                  : world_axis;
  try {
    return JointSpec::make(type, origin, direction, range, pitch);
  } catch (const ParameterError& e) {
    throw ParseError("joint '" + j.name + "': " + e.what());
  }
}

[[noreturn]] void report_cycle(const std::vector<UrdfLink>& links,
                               const std::vector<int>& parent_of,
                               int start) {
  std::vector<int> chain;
  std::vector<char> on_chain(links.size(), 0);
  int cur = start;
  while (cur >= 0 && !on_chain[static_cast<std::size_t>(cur)]) {
    on_chain[static_cast<std::size_t>(cur)] = 1;
    chain.push_back(cur);
    cur = parent_of[static_cast<std::size_t>(cur)];
  }
  std::string msg = "kinematic loop: ";
  if (cur >= 0) {
    auto it = std::find(chain.begin(), chain.end(), cur);
    for (; it != chain.end(); ++it)
      msg += links[static_cast<std::size_t>(*it)].name + " -> ";
    msg += links[static_cast<std::size_t>(cur)].name;
  } else {
    msg += "unreachable links";
  }
  throw StructuralError(msg);
}

}  // namespace

ObjectBundle parse_mobility_urdf(const std::string& directory) {
  fs::path file = find_urdf(directory);
  fs::path base = file.parent_path();

  pt::ptree doc;
  try {
    pt::read_xml(file.string(), doc);
  } catch (const pt::xml_parser_error& e) {
    throw ParseError(file.string() + ": " + e.what());
  }
  auto robot = doc.get_child_optional("robot");
  if (!robot) throw ParseError(file.string() + ": no <robot> element");

  std::vector<UrdfLink> links;
  std::vector<UrdfJoint> joints;
  for (const auto& [key, node] : *robot) {
    if (key == "link") links.push_back(parse_link(node, file.string()));
    else if (key == "joint") joints.push_back(parse_joint(node, file.string()));
  }
  if (links.empty()) throw ParseError(file.string() + ": no links");

  std::map<std::string, int> link_index;
  for (std::size_t i = 0; i < links.size(); ++i) {
    if (!link_index.emplace(links[i].name, static_cast<int>(i)).second)
      throw ParseError(file.string() + ": duplicate link name '" +
                       links[i].name + "'");
  }

  const int n = static_cast<int>(links.size());
  std::vector<int> parent_of(links.size(), -1);
  std::vector<const UrdfJoint*> joint_of(links.size(), nullptr);
  std::vector<std::vector<int>> children(links.size());
  for (const UrdfJoint& j : joints) {
    auto pit = link_index.find(j.parent);
    auto cit = link_index.find(j.child);
    if (pit == link_index.end())
      throw ParseError("joint '" + j.name + "': unknown parent link '" +
                       j.parent + "'");
    if (cit == link_index.end())
      throw ParseError("joint '" + j.name + "': unknown child link '" +
                       j.child + "'");
    if (joint_of[static_cast<std::size_t>(cit->second)])
      throw StructuralError("link '" + j.child +
                            "' has more than one parent joint");
    if (pit->second == cit->second)
      throw StructuralError("kinematic loop: " + j.child + " -> " + j.child);
    parent_of[static_cast<std::size_t>(cit->second)] = pit->second;
    joint_of[static_cast<std::size_t>(cit->second)] = &j;
    children[static_cast<std::size_t>(pit->second)].push_back(cit->second);
  }

  std::vector<int> roots;
  for (int i = 0; i < n; ++i)
    if (parent_of[static_cast<std::size_t>(i)] < 0) roots.push_back(i);
  if (roots.empty()) report_cycle(links, parent_of, 0);
  if (roots.size() > 1) {
    std::string msg = "multiple root links:";
    for (int r : roots) msg += " " + links[static_cast<std::size_t>(r)].name;
    throw StructuralError(msg);
  }
  const int root = roots[0];

  // zero-configuration frames
  std::vector<RigidTransform> frame(links.size());
  std::vector<char> reached(links.size(), 0);
  std::deque<int> queue{root};
  reached[static_cast<std::size_t>(root)] = 1;
  int reach_count = 0;
  while (!queue.empty()) {
    int cur = queue.front();
    queue.pop_front();
    ++reach_count;
    for (int c : children[static_cast<std::size_t>(cur)]) {
      if (reached[static_cast<std::size_t>(c)]) continue;
      reached[static_cast<std::size_t>(c)] = 1;
      frame[static_cast<std::size_t>(c)] =
          frame[static_cast<std::size_t>(cur)] *
          joint_of[static_cast<std::size_t>(c)]->origin;
      queue.push_back(c);
    }
  }
  if (reach_count < n) {
    for (int i = 0; i < n; ++i)
      if (!reached[static_cast<std::size_t>(i)]) report_cycle(links, parent_of, i);
  }

  // meshes merged per link, placed in the zero-configuration object frame
  std::vector<TriMesh> link_mesh(links.size());
  for (int i = 0; i < n; ++i) {
    TriMesh& merged = link_mesh[static_cast<std::size_t>(i)];
    for (const UrdfVisual& visual : links[static_cast<std::size_t>(i)].visuals) {
      TriMesh part_mesh =
          load_visual_mesh(visual, base, links[static_cast<std::size_t>(i)].name);
      const int offset = static_cast<int>(merged.vertices.size());
      for (const auto& v : part_mesh.vertices)
        merged.vertices.push_back(frame[static_cast<std::size_t>(i)].apply(v));
      for (const auto& f : part_mesh.faces)
        merged.faces.push_back({f[0] + offset, f[1] + offset, f[2] + offset});
    }
  }

  ObjectBundle bundle;
  ArticulatedObject& obj = bundle.object;
  obj.category = robot->get<std::string>("<xmlattr>.artikit_category",
                                         robot->get<std::string>(
                                             "<xmlattr>.name", "object"));
  obj.root_id = root;

  for (int i = 0; i < n; ++i) {
    const UrdfLink& link = links[static_cast<std::size_t>(i)];
    PartNode part;
    part.part_id = i;
    part.parent_id = parent_of[static_cast<std::size_t>(i)];
    part.semantic_label = link.label_attr ? *link.label_attr : link.name;
    if (i == root) {
      Eigen::Vector3d origin = link.joint_origin_attr
                                   ? *link.joint_origin_attr
                                   : frame[static_cast<std::size_t>(i)].translation;
      Eigen::Vector3d direction = link.joint_direction_attr
                                      ? *link.joint_direction_attr
                                      : Eigen::Vector3d::UnitZ();
      part.joint = JointSpec::make(JointType::Fixed, origin, direction,
                                   Eigen::Vector4d::Zero());
    } else {
      const UrdfJoint& j = *joint_of[static_cast<std::size_t>(i)];
      part.joint = joint_spec_from_urdf(
          j, link, frame[static_cast<std::size_t>(i)].translation,
          frame[static_cast<std::size_t>(i)].rotation * j.axis);
    }
    if (link.state_attr) {
      if (!(*link.state_attr >= 0.0 && *link.state_attr <= 1.0))
        throw ParseError("link '" + link.name + "': artikit_state " +
                         fmt_g(*link.state_attr) + " outside [0, 1]");
      part.state = *link.state_attr;
    }
    if (link.latent_attr) part.shape_latent = *link.latent_attr;
    if (!link_mesh[static_cast<std::size_t>(i)].vertices.empty())
      part.mesh_ref = "meshes/part" + std::to_string(i) + ".obj";
    obj.parts.push_back(std::move(part));
  }

  const bool canonical =
      robot->get<std::string>("<xmlattr>.artikit_canonical", "") == "1";
  if (canonical) {
    obj.norm_scale = robot->get<double>("<xmlattr>.artikit_norm_scale", 1.0);
    if (auto text =
            robot->get_optional<std::string>("<xmlattr>.artikit_norm_offset")) {
      std::vector<double> v = parse_doubles(*text, 3, "artikit_norm_offset");
      obj.norm_offset = {v[0], v[1], v[2]};
    }
  } else {
    // place meshes (or frame origins) at the rest pose and normalize the
    // union bounds into the origin-centered unit cube
    StateVector rest(obj.parts.size(), 0.0);
    std::vector<RigidTransform> world = forward_kinematics(obj, rest);
    Aabb bounds;
    for (int i = 0; i < n; ++i) {
      const TriMesh& mesh = link_mesh[static_cast<std::size_t>(i)];
      const RigidTransform& t = world[static_cast<std::size_t>(i)];
      if (mesh.vertices.empty()) {
        bounds.expand(t.apply(frame[static_cast<std::size_t>(i)].translation));
      } else {
        for (const auto& v : mesh.vertices) bounds.expand(t.apply(v));
      }
    }
    double scale = 1.0;
    Eigen::Vector3d offset = Eigen::Vector3d::Zero();
    if (!bounds.empty()) {
      double extent = bounds.extent().maxCoeff();
      if (extent > 0.0) scale = 1.0 / extent;
      offset = -bounds.center();
    }
    obj.norm_scale = scale;
    obj.norm_offset = offset;
    for (int i = 0; i < n; ++i) {
      PartNode& part = obj.parts[static_cast<std::size_t>(i)];
      part.joint.origin = scale * (part.joint.origin + offset);
      part.joint.range[2] *= scale;
      part.joint.range[3] *= scale;
      if (part.joint.type == JointType::Screw) part.joint.screw_pitch *= scale;
      for (auto& v : link_mesh[static_cast<std::size_t>(i)].vertices)
        v = scale * (v + offset);
      frame[static_cast<std::size_t>(i)].translation =
          scale * (frame[static_cast<std::size_t>(i)].translation + offset);
    }
  }

  for (int i = 0; i < n; ++i) {
    PartNode& part = obj.parts[static_cast<std::size_t>(i)];
    const UrdfLink& link = links[static_cast<std::size_t>(i)];
    const TriMesh& mesh = link_mesh[static_cast<std::size_t>(i)];
    if (link.obb_attr) {
      const Eigen::VectorXd& o = *link.obb_attr;
      part.obb.center = o.segment<3>(0);
      part.obb.half_extents = o.segment<3>(3);
      part.obb.rotation = o.segment<3>(6);
    } else if (!mesh.vertices.empty()) {
      PointCloud cloud;
      cloud.points = mesh.vertices;
      part.obb = fit_obb(cloud);
    } else {
      part.obb = OrientedBox::make(
          frame[static_cast<std::size_t>(i)].translation,
          Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero());
    }
    if (part.mesh_ref)
      bundle.meshes[*part.mesh_ref] = std::move(link_mesh[static_cast<std::size_t>(i)]);
  }

  ValidationReport report = validate_object(obj);
  if (!report.ok())
    throw StructuralError(file.string() + ": ingested object is invalid: " +
                          report.summary());
  return bundle;
}

namespace {

std::string sanitize_name(const std::string& label, int id) {
  std::string out;
  for (char c : label) {
    bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
              (c >= '0' && c <= '9') || c == '_';
    out += ok ? c : '_';
  }
  if (out.empty()) out = "part";
  return out + "_" + std::to_string(id);
}

}  // namespace

void export_urdf(const ArticulatedObject& obj, const MeshStore& meshes,
                 const std::string& path) {
  ValidationReport report = validate_object(obj);
  if (!report.ok())
    throw ParameterError("cannot export invalid object: " + report.summary());
  for (const PartNode& part : obj.parts) {
    if (part.mesh_ref && !meshes.count(*part.mesh_ref))
      throw LookupError("mesh '" + *part.mesh_ref + "' not in store");
  }

  fs::path urdf_path(path);
  fs::path base = urdf_path.parent_path();
  if (!base.empty()) fs::create_directories(base);

  // Link frames sit at the joint anchors (root at the object origin), so a
  // zero-configuration chain of pure translations reproduces every anchor
  // and meshes can be written in object-frame coordinates.
  std::vector<Eigen::Vector3d> placement(obj.parts.size());
  std::vector<const PartNode*> by_id(obj.parts.size(), nullptr);
  for (const PartNode& part : obj.parts)
    by_id[static_cast<std::size_t>(part.part_id)] = &part;
  for (std::size_t i = 0; i < by_id.size(); ++i)
    placement[i] = by_id[i]->part_id == obj.root_id
                       ? Eigen::Vector3d::Zero()
                       : by_id[i]->joint.origin;

  pt::ptree robot;
  robot.put("<xmlattr>.name", sanitize_name(obj.category, 0));
  robot.put("<xmlattr>.artikit_canonical", "1");
  robot.put("<xmlattr>.artikit_category", obj.category);
  robot.put("<xmlattr>.artikit_norm_scale", fmt_g(obj.norm_scale));
  robot.put("<xmlattr>.artikit_norm_offset",
            fmt_vec(obj.norm_offset.data(), 3));

  std::vector<std::string> link_names(obj.parts.size());
  for (std::size_t i = 0; i < by_id.size(); ++i)
    link_names[i] = sanitize_name(by_id[i]->semantic_label,
                                  static_cast<int>(i));

  std::map<std::string, std::string> mesh_files;  // store key -> relative path
  for (std::size_t i = 0; i < by_id.size(); ++i) {
    const PartNode& part = *by_id[i];
    pt::ptree link;
    link.put("<xmlattr>.name", link_names[i]);
    link.put("<xmlattr>.artikit_label", part.semantic_label);
    Eigen::VectorXd obb(9);
    obb << part.obb.center, part.obb.half_extents, part.obb.rotation;
    link.put("<xmlattr>.artikit_obb", fmt_vec(obb.data(), 9));
    link.put("<xmlattr>.artikit_state", fmt_g(part.state));
    if (part.shape_latent && part.shape_latent->size() > 0)
      link.put("<xmlattr>.artikit_latent",
               fmt_vec(part.shape_latent->data(),
                       static_cast<int>(part.shape_latent->size())));
    link.put("<xmlattr>.artikit_joint_origin",
             fmt_vec(part.joint.origin.data(), 3));
    link.put("<xmlattr>.artikit_joint_direction",
             fmt_vec(part.joint.direction.data(), 3));

    if (part.mesh_ref) {
      std::string rel = "meshes/part" + std::to_string(i) + ".obj";
      mesh_files[*part.mesh_ref] = rel;
      pt::ptree visual;
      Eigen::Vector3d vo = -placement[i];
      visual.put("origin.<xmlattr>.xyz", fmt_vec(vo.data(), 3));
      visual.put("origin.<xmlattr>.rpy", "0 0 0");
      visual.put("geometry.mesh.<xmlattr>.filename", rel);
      link.add_child("visual", visual);
    }
    robot.add_child("link", link);
  }

  for (std::size_t i = 0; i < by_id.size(); ++i) {
    const PartNode& part = *by_id[i];
    if (part.part_id == obj.root_id) continue;
    const JointSpec& j = part.joint;
    pt::ptree jt;
    jt.put("<xmlattr>.name", "joint_" + std::to_string(i));
    const char* type = nullptr;
    switch (j.type) {
      case JointType::Fixed: type = "fixed"; break;
      case JointType::Revolute: type = "revolute"; break;
      case JointType::Continuous: type = "continuous"; break;
      case JointType::Prismatic:
      case JointType::Screw: type = "prismatic"; break;
    }
    jt.put("<xmlattr>.type", type);
    if (j.type == JointType::Screw)
      jt.put("<xmlattr>.artikit_screw_pitch", fmt_g(j.screw_pitch));
    Eigen::Vector3d rel =
        placement[i] - placement[static_cast<std::size_t>(part.parent_id)];
    jt.put("origin.<xmlattr>.xyz", fmt_vec(rel.data(), 3));
    jt.put("origin.<xmlattr>.rpy", "0 0 0");
    jt.put("parent.<xmlattr>.link",
           link_names[static_cast<std::size_t>(part.parent_id)]);
    jt.put("child.<xmlattr>.link", link_names[i]);
    jt.put("axis.<xmlattr>.xyz", fmt_vec(j.direction.data(), 3));
    if (j.type != JointType::Fixed) {
      double lower = joint_is_rotational(j.type) ? j.rot_min() : j.trans_min();
      double upper = joint_is_rotational(j.type) ? j.rot_max() : j.trans_max();
      jt.put("limit.<xmlattr>.lower", fmt_g(lower));
      jt.put("limit.<xmlattr>.upper", fmt_g(upper));
      jt.put("limit.<xmlattr>.effort", "1");
      jt.put("limit.<xmlattr>.velocity", "1");
    }
    robot.add_child("joint", jt);
  }

  pt::ptree doc;
  doc.add_child("robot", robot);
  try {
    pt::write_xml(path, doc, std::locale(),
                  pt::xml_writer_settings<std::string>(' ', 2));
  } catch (const pt::xml_parser_error& e) {
    throw IoError(std::string("failed writing '") + path + "': " + e.what());
  }

  if (!mesh_files.empty()) fs::create_directories(base / "meshes");
  for (const auto& [key, rel] : mesh_files)
    save_obj(meshes.at(key), (base / rel).string());
}

}  // namespace artikit
