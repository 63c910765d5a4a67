#pragma once

#include <Eigen/Dense>
#include <string>

#include "artikit/core.hpp"
#include "artikit/mesh.hpp"

namespace artikit {

struct ObjectBundle {
  ArticulatedObject object;
  MeshStore meshes;
};

// ---- canonical object format ------------------------------------------------

// Structured-text object file, format_version "1". Numeric payload survives
// a save/load round trip bitwise; unknown or missing fields are parse errors
// naming the offending path (e.g. "parts[2].state"); a version mismatch is a
// format error. The loaded object always passes validate_object.
void save_object(const ArticulatedObject& obj, const std::string& path);
ArticulatedObject load_object(const std::string& path);

// Same format plus the referenced meshes, resolved relative to the file.
ObjectBundle load_object_bundle(const std::string& path);
void save_object_bundle(const ArticulatedObject& obj, const MeshStore& meshes,
                        const std::string& path);

// ---- wavefront meshes ---------------------------------------------------------

// ASCII OBJ subset: v records and f records in the v, v/vt, v//vn and
// v/vt/vn forms; polygons fan-triangulate; negative indices count from the
// end. Anything else on an f/v record is a parse error with its line number;
// other record types are skipped.
TriMesh load_obj(const std::string& path);

// Writes v/f records with 17-significant-digit coordinates, so coordinates
// round trip exactly.
void save_obj(const TriMesh& mesh, const std::string& path);

// ---- PartNet-Mobility style URDF ----------------------------------------------

// Ingests the URDF subset documented in docs/urdf-subset.md from a directory
// (mobility.urdf preferred, else the lexicographically first *.urdf). Links
// become parts (ids in document order), joints map onto the range packing,
// axes land in the object frame, and the whole object is normalized so its
// rest-pose bounds fit the origin-centered unit cube. Files exported by
// export_urdf carry vendor attributes that skip re-fitting and
// re-normalization, making export followed by ingest the identity within
// 1e-9.
ObjectBundle parse_mobility_urdf(const std::string& directory);

// Writes object.urdf-style output: one link per part (the root is the link
// without a parent joint), joints with verbatim limits, meshes under a
// sibling meshes/ directory, and vendor attributes (obb, state, latent,
// label, joint frame, screw pitch, normalization) so the document re-ingests
// to the same object.
void export_urdf(const ArticulatedObject& obj, const MeshStore& meshes,
                 const std::string& path);

// ---- condition feature files ---------------------------------------------------

// Binary token matrix: magic "AKFT", u32 count, u32 dim, count*dim 32-bit
// little-endian floats row-major. Loading widens to double; saving narrows.
Eigen::MatrixXd load_features(const std::string& path);
void save_features(const Eigen::MatrixXd& features, const std::string& path);

}  // namespace artikit
