#pragma once

#include "geocorr/core.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace geocorr {

/// Indexed triangle mesh with optional per-vertex descriptors.
struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;
  Eigen::MatrixXd descriptors;  // V x D, D == 0 when absent
  int dropped_degenerate = 0;   // faces removed during finalize()

  int vertex_count() const { return static_cast<int>(vertices.size()); }
  int face_count() const { return static_cast<int>(faces.size()); }
  bool has_descriptors() const { return descriptors.cols() > 0; }

  Vec3 aabb_min() const {
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    for (const Vec3& v : vertices) lo = lo.cwiseMin(v);
    return lo;
  }
  Vec3 aabb_max() const {
    Vec3 hi = Vec3::Constant(-std::numeric_limits<double>::infinity());
    for (const Vec3& v : vertices) hi = hi.cwiseMax(v);
    return hi;
  }
  Vec3 aabb_center() const { return 0.5 * (aabb_min() + aabb_max()); }
};

/// Length of the axis-aligned bounding-box diagonal. Errors on an empty mesh
/// or when all vertices coincide (zero diagonal).
inline double bounding_diag(const TriangleMesh& mesh) {
  require(!mesh.vertices.empty(), "bounding_diag: empty mesh");
  const double d = (mesh.aabb_max() - mesh.aabb_min()).norm();
  require(d > 0.0, "bounding_diag: degenerate bounding box (all vertices coincide)");
  return d;
}

inline double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
  return 0.5 * (b - a).cross(c - a).norm();
}

/// Validate a mesh in place: check finiteness and index ranges, drop
/// degenerate (zero-area or repeated-index) faces, and record how many were
/// dropped. Throws on hard contract violations.
inline void finalize_mesh(TriangleMesh& mesh) {
  require(!mesh.vertices.empty(), "mesh: no vertices");
  const int nv = mesh.vertex_count();
  for (const Vec3& v : mesh.vertices)
    require(v.allFinite(), "mesh: non-finite vertex coordinate");
  if (mesh.descriptors.size() > 0)
    require(mesh.descriptors.rows() == nv,
            "mesh: descriptor count does not match vertex count");

  // Relative area threshold so validation is scale-invariant.
  double diag = 0.0;
  {
    Vec3 lo = mesh.aabb_min(), hi = mesh.aabb_max();
    diag = (hi - lo).norm();
  }
  const double area_eps = 1e-14 * diag * diag;

  std::vector<std::array<int, 3>> kept;
  kept.reserve(mesh.faces.size());
  int dropped = 0;
  for (const auto& f : mesh.faces) {
    for (int k = 0; k < 3; ++k)
      require(f[k] >= 0 && f[k] < nv, "mesh: face index out of range");
    if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) {
      ++dropped;
      continue;
    }
    if (triangle_area(mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]) <=
        area_eps) {
      ++dropped;
      continue;
    }
    kept.push_back(f);
  }
  mesh.faces = std::move(kept);
  mesh.dropped_degenerate = dropped;
}

// ---------------------------------------------------------------------------
// OBJ
// ---------------------------------------------------------------------------

inline TriangleMesh load_obj(std::istream& in, const std::string& origin) {
  TriangleMesh mesh;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "v") {
      double x, y, z;
      if (!(ss >> x >> y >> z))
        throw Error(origin + ":" + std::to_string(line_no) + ": malformed vertex line");
      mesh.vertices.emplace_back(x, y, z);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ss >> tok) {
        // accept "i", "i/j", "i/j/k", "i//k"
        const auto slash = tok.find('/');
        const std::string head = slash == std::string::npos ? tok : tok.substr(0, slash);
        int v = 0;
        try {
          v = std::stoi(head);
        } catch (...) {
          throw Error(origin + ":" + std::to_string(line_no) + ": malformed face index '" +
                      tok + "'");
        }
        if (v < 0)
          v = static_cast<int>(mesh.vertices.size()) + v;  // negative = relative
        else
          v -= 1;  // OBJ is 1-based
        idx.push_back(v);
      }
      if (idx.size() < 3)
        throw Error(origin + ":" + std::to_string(line_no) + ": face with fewer than 3 vertices");
      // Fan-triangulate polygons.
      for (size_t k = 1; k + 1 < idx.size(); ++k)
        mesh.faces.push_back({idx[0], idx[static_cast<int>(k)], idx[k + 1]});
    }
    // other tags (vn, vt, o, g, s, usemtl, mtllib) are ignored
  }
  finalize_mesh(mesh);
  return mesh;
}

// ---------------------------------------------------------------------------
// Binary little-endian PLY (vertex x/y/z + face vertex lists)
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
T read_le(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error("ply: unexpected end of file");
  return v;
}

template <typename T>
void write_le(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

inline double read_scalar(std::istream& in, const std::string& type) {
  if (type == "float" || type == "float32") return read_le<float>(in);
  if (type == "double" || type == "float64") return read_le<double>(in);
  if (type == "char" || type == "int8") return read_le<std::int8_t>(in);
  if (type == "uchar" || type == "uint8") return read_le<std::uint8_t>(in);
  if (type == "short" || type == "int16") return read_le<std::int16_t>(in);
  if (type == "ushort" || type == "uint16") return read_le<std::uint16_t>(in);
  if (type == "int" || type == "int32") return read_le<std::int32_t>(in);
  if (type == "uint" || type == "uint32") return read_le<std::uint32_t>(in);
  throw Error("ply: unsupported property type '" + type + "'");
}

}  // namespace detail

inline TriangleMesh load_ply(std::istream& in, const std::string& origin) {
  std::string line;
  if (!std::getline(in, line) || line.substr(0, 3) != "ply")
    throw Error(origin + ": not a PLY file");
  bool binary_le = false;
  struct Prop {
    std::string type;       // scalar type or list count type
    std::string elem_type;  // list element type (lists only)
    std::string name;
    bool is_list = false;
  };
  struct Element {
    std::string name;
    long count = 0;
    std::vector<Prop> props;
  };
  std::vector<Element> elements;
  while (std::getline(in, line)) {
    // strip trailing CR for files written on other platforms
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "comment" || tag == "obj_info") continue;
    if (tag == "format") {
      std::string fmt;
      ss >> fmt;
      if (fmt == "binary_little_endian")
        binary_le = true;
      else
        throw Error(origin + ": unsupported PLY format '" + fmt + "'");
    } else if (tag == "element") {
      Element e;
      ss >> e.name >> e.count;
      elements.push_back(e);
    } else if (tag == "property") {
      require(!elements.empty(), origin + ": property before element");
      Prop p;
      std::string t;
      ss >> t;
      if (t == "list") {
        p.is_list = true;
        ss >> p.type >> p.elem_type >> p.name;
      } else {
        p.type = t;
        ss >> p.name;
      }
      elements.back().props.push_back(p);
    } else if (tag == "end_header") {
      break;
    } else if (!tag.empty()) {
      throw Error(origin + ": unrecognized header line '" + line + "'");
    }
  }
  require(binary_le, origin + ": missing binary_little_endian format line");

  TriangleMesh mesh;
  for (const Element& e : elements) {
    if (e.name == "vertex") {
      int ix = -1, iy = -1, iz = -1;
      for (size_t k = 0; k < e.props.size(); ++k) {
        if (e.props[k].name == "x") ix = static_cast<int>(k);
        if (e.props[k].name == "y") iy = static_cast<int>(k);
        if (e.props[k].name == "z") iz = static_cast<int>(k);
      }
      require(ix >= 0 && iy >= 0 && iz >= 0, origin + ": vertex element lacks x/y/z");
      mesh.vertices.reserve(static_cast<size_t>(e.count));
      for (long i = 0; i < e.count; ++i) {
        Vec3 v = Vec3::Zero();
        for (size_t k = 0; k < e.props.size(); ++k) {
          require(!e.props[k].is_list, origin + ": list property on vertex unsupported");
          const double val = detail::read_scalar(in, e.props[k].type);
          if (static_cast<int>(k) == ix) v.x() = val;
          if (static_cast<int>(k) == iy) v.y() = val;
          if (static_cast<int>(k) == iz) v.z() = val;
        }
        mesh.vertices.push_back(v);
      }
    } else if (e.name == "face") {
      for (long i = 0; i < e.count; ++i) {
        for (const Prop& p : e.props) {
          if (p.is_list) {
            const long n = static_cast<long>(detail::read_scalar(in, p.type));
            std::vector<int> idx(static_cast<size_t>(n));
            for (long k = 0; k < n; ++k)
              idx[static_cast<size_t>(k)] =
                  static_cast<int>(detail::read_scalar(in, p.elem_type));
            if (p.name == "vertex_indices" || p.name == "vertex_index") {
              require(n >= 3, origin + ": face with fewer than 3 vertices");
              for (long k = 1; k + 1 < n; ++k)
                mesh.faces.push_back({idx[0], idx[static_cast<size_t>(k)],
                                      idx[static_cast<size_t>(k + 1)]});
            }
          } else {
            detail::read_scalar(in, p.type);  // skip unknown scalar
          }
        }
      }
    } else {
      // skip unknown element payload
      for (long i = 0; i < e.count; ++i) {
        for (const Prop& p : e.props) {
          if (p.is_list) {
            const long n = static_cast<long>(detail::read_scalar(in, p.type));
            for (long k = 0; k < n; ++k) detail::read_scalar(in, p.elem_type);
          } else {
            detail::read_scalar(in, p.type);
          }
        }
      }
    }
  }
  finalize_mesh(mesh);
  return mesh;
}

inline void save_ply(const TriangleMesh& mesh, std::ostream& out) {
  out << "ply\nformat binary_little_endian 1.0\n";
  out << "element vertex " << mesh.vertices.size() << "\n";
  // double-precision coordinates so a save/load round trip is exact
  out << "property double x\nproperty double y\nproperty double z\n";
  out << "element face " << mesh.faces.size() << "\n";
  out << "property list uchar int vertex_indices\n";
  out << "end_header\n";
  for (const Vec3& v : mesh.vertices) {
    detail::write_le(out, v.x());
    detail::write_le(out, v.y());
    detail::write_le(out, v.z());
  }
  for (const auto& f : mesh.faces) {
    detail::write_le<std::uint8_t>(out, 3);
    detail::write_le<std::int32_t>(out, f[0]);
    detail::write_le<std::int32_t>(out, f[1]);
    detail::write_le<std::int32_t>(out, f[2]);
  }
}

// ---------------------------------------------------------------------------
// Descriptor sidecar: "GCDF" magic, u32 version, u32 vertex count, u32 dim,
// then vertex-major float32 little-endian payload.
// ---------------------------------------------------------------------------

inline void save_descriptors(const Eigen::MatrixXd& desc, std::ostream& out) {
  out.write("GCDF", 4);
  detail::write_le<std::uint32_t>(out, 1u);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(desc.rows()));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(desc.cols()));
  for (Eigen::Index v = 0; v < desc.rows(); ++v)
    for (Eigen::Index d = 0; d < desc.cols(); ++d)
      detail::write_le<float>(out, static_cast<float>(desc(v, d)));
}

inline Eigen::MatrixXd load_descriptors(std::istream& in, const std::string& origin) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "GCDF", 4) != 0)
    throw Error(origin + ": not a descriptor file (bad magic)");
  const auto version = detail::read_le<std::uint32_t>(in);
  require(version == 1u, origin + ": unsupported descriptor file version");
  const auto nv = detail::read_le<std::uint32_t>(in);
  const auto dim = detail::read_le<std::uint32_t>(in);
  Eigen::MatrixXd desc(nv, dim);
  for (std::uint32_t v = 0; v < nv; ++v)
    for (std::uint32_t d = 0; d < dim; ++d) desc(v, d) = detail::read_le<float>(in);
  return desc;
}

// ---------------------------------------------------------------------------
// Path-based convenience loaders
// ---------------------------------------------------------------------------

inline TriangleMesh load_mesh(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("load_mesh: cannot open '" + path + "'");
  const auto dot = path.rfind('.');
  const std::string ext = dot == std::string::npos ? "" : path.substr(dot);
  if (ext == ".obj") return load_obj(in, path);
  if (ext == ".ply") return load_ply(in, path);
  throw Error("load_mesh: unsupported extension on '" + path + "'");
}

inline void save_mesh_ply(const TriangleMesh& mesh, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("save_mesh_ply: cannot open '" + path + "' for writing");
  save_ply(mesh, out);
}

inline Eigen::MatrixXd load_descriptors_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("load_descriptors: cannot open '" + path + "'");
  return load_descriptors(in, path);
}

inline void save_descriptors_file(const Eigen::MatrixXd& desc, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("save_descriptors: cannot open '" + path + "' for writing");
  save_descriptors(desc, out);
}

/// Attach a descriptor matrix to a mesh, enforcing the one-row-per-vertex
/// contract.
inline void attach_descriptors(TriangleMesh& mesh, Eigen::MatrixXd desc) {
  require(desc.rows() == mesh.vertex_count(),
          "attach_descriptors: row count does not match vertex count");
  mesh.descriptors = std::move(desc);
}

}  // namespace geocorr
