#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "eqgnn/errors.hpp"
#include "eqgnn/json_io.hpp"
#include "eqgnn/mesh.hpp"

namespace eqgnn {

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string(), 0);
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    const auto upto = std::min<std::size_t>(e.byte, text.size());
    const auto line = 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + upto, '\n'));
    throw ParseError(path.string() + ": " + e.what(), line);
  }
}

void write_json_file(const nlohmann::json& j, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write " + tmp.string());
    out << j.dump(1) << '\n';
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

nlohmann::json mesh_to_json(const TriMesh& mesh) {
  nlohmann::json j;
  auto& nodes = j["nodes"] = nlohmann::json::array();
  for (const auto& p : mesh.nodes) nodes.push_back({p.x, p.y});
  auto& tris = j["triangles"] = nlohmann::json::array();
  for (const auto& t : mesh.triangles) tris.push_back({t[0], t[1], t[2]});
  auto& types = j["node_type"] = nlohmann::json::array();
  for (NodeType t : mesh.node_type) types.push_back(static_cast<int>(t));
  auto& normals = j["normals"] = nlohmann::json::array();
  for (const auto& n : mesh.normals) normals.push_back({n.x, n.y});
  return j;
}

TriMesh mesh_from_json(const nlohmann::json& j) {
  TriMesh mesh;
  try {
    for (const auto& p : j.at("nodes")) mesh.nodes.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    for (const auto& t : j.at("triangles")) {
      mesh.triangles.push_back({t.at(0).get<std::size_t>(), t.at(1).get<std::size_t>(),
                                t.at(2).get<std::size_t>()});
    }
    for (const auto& t : j.at("node_type")) {
      const int v = t.get<int>();
      if (v < 0 || v > 2) throw ParseError("node_type out of range", 0);
      mesh.node_type.push_back(static_cast<NodeType>(v));
    }
    for (const auto& n : j.at("normals")) mesh.normals.push_back({n.at(0).get<double>(), n.at(1).get<double>()});
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("mesh json: ") + e.what(), 0);
  }
  const std::size_t n = mesh.nodes.size();
  if (mesh.node_type.size() != n || mesh.normals.size() != n) {
    throw ParseError("mesh json: per-node arrays differ in length", 0);
  }
  for (const auto& t : mesh.triangles) {
    for (std::size_t v : t) {
      if (v >= n) throw ParseError("mesh json: triangle index out of range", 0);
    }
  }
  return mesh;
}

void write_mesh_json(const TriMesh& mesh, const std::filesystem::path& path) {
  write_json_file(mesh_to_json(mesh), path);
}

TriMesh read_mesh_json(const std::filesystem::path& path) {
  return mesh_from_json(read_json_file(path));
}

namespace {

struct LineReader {
  std::istream& in;
  std::size_t line = 0;

  bool next(std::string& out) {
    while (std::getline(in, out)) {
      ++line;
      if (!out.empty() && out.back() == '\r') out.pop_back();
      if (out.find_first_not_of(" \t") != std::string::npos) return true;
    }
    return false;
  }
  std::string expect(const char* what) {
    std::string s;
    if (!next(s)) throw ParseError(std::string("unexpected end of file, expected ") + what, line + 1);
    return s;
  }
};

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t");
  const auto b = s.find_last_not_of(" \t");
  return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}

}  // namespace

TriMesh read_msh(const std::filesystem::path& path) {
  std::ifstream file(path);
  if (!file) throw ParseError("cannot open " + path.string(), 0);
  LineReader rd{file};

  std::map<long, Point2> raw_nodes;
  std::vector<std::array<long, 3>> raw_tris;
  std::map<long, int> tag_of;  // node id -> physical tag of a boundary line
  bool saw_format = false, saw_nodes = false, saw_elements = false;

  std::string s;
  while (rd.next(s)) {
    const std::string head = trim(s);
    if (head == "$MeshFormat") {
      std::istringstream fmt(rd.expect("format line"));
      double version = 0;
      int file_type = -1;
      if (!(fmt >> version >> file_type)) throw ParseError("bad $MeshFormat line", rd.line);
      if (version < 2.0 || version >= 3.0) throw ParseError("only MSH 2.x supported", rd.line);
      if (file_type != 0) throw ParseError("only ASCII MSH supported", rd.line);
      if (trim(rd.expect("$EndMeshFormat")) != "$EndMeshFormat") {
        throw ParseError("expected $EndMeshFormat", rd.line);
      }
      saw_format = true;
    } else if (head == "$Nodes") {
      long count = 0;
      if (!(std::istringstream(rd.expect("node count")) >> count) || count < 0) {
        throw ParseError("bad node count", rd.line);
      }
      for (long k = 0; k < count; ++k) {
        std::istringstream ls(rd.expect("node line"));
        long id = 0;
        double x = 0, y = 0, z = 0;
        if (!(ls >> id >> x >> y >> z)) throw ParseError("bad node line", rd.line);
        raw_nodes[id] = {x, y};
      }
      if (trim(rd.expect("$EndNodes")) != "$EndNodes") throw ParseError("expected $EndNodes", rd.line);
      saw_nodes = true;
    } else if (head == "$Elements") {
      long count = 0;
      if (!(std::istringstream(rd.expect("element count")) >> count) || count < 0) {
        throw ParseError("bad element count", rd.line);
      }
      for (long k = 0; k < count; ++k) {
        std::istringstream ls(rd.expect("element line"));
        long id = 0;
        int type = 0, ntags = 0;
        if (!(ls >> id >> type >> ntags) || ntags < 0) throw ParseError("bad element header", rd.line);
        std::vector<long> tags(static_cast<std::size_t>(ntags));
        for (auto& t : tags) {
          if (!(ls >> t)) throw ParseError("bad element tags", rd.line);
        }
        const int nverts = type == 1 ? 2 : type == 2 ? 3 : type == 15 ? 1 : -1;
        if (nverts < 0) throw ParseError("unsupported element type " + std::to_string(type), rd.line);
        std::vector<long> v(static_cast<std::size_t>(nverts));
        for (auto& x : v) {
          if (!(ls >> x)) throw ParseError("bad element node list", rd.line);
        }
        for (long x : v) {
          if (!raw_nodes.count(x)) throw ParseError("element references unknown node", rd.line);
        }
        if (type == 2) {
          raw_tris.push_back({v[0], v[1], v[2]});
        } else if (type == 1 && !tags.empty()) {
          const int phys = static_cast<int>(tags[0]);
          for (long x : v) {
            // Dirichlet wins where a Dirichlet and a Neumann segment meet.
            if (phys == 1 || !tag_of.count(x)) tag_of[x] = phys;
          }
        }
      }
      if (trim(rd.expect("$EndElements")) != "$EndElements") {
        throw ParseError("expected $EndElements", rd.line);
      }
      saw_elements = true;
    } else if (!head.empty() && head[0] == '$') {
      // Skip unknown sections.
      const std::string end = "$End" + head.substr(1);
      std::string body;
      while (trim(rd.expect(end.c_str())) != end) {
      }
    } else {
      throw ParseError("unexpected content outside a section", rd.line);
    }
  }
  if (!saw_format) throw ParseError("missing $MeshFormat", rd.line + 1);
  if (!saw_nodes || !saw_elements) throw ParseError("missing $Nodes or $Elements", rd.line + 1);
  if (raw_tris.empty()) throw ParseError("no triangle elements", rd.line + 1);

  TriMesh mesh;
  std::map<long, std::size_t> index;
  for (const auto& t : raw_tris) {
    for (long v : t) {
      if (!index.count(v)) index[v] = 0;
    }
  }
  for (auto& [id, idx] : index) {
    idx = mesh.nodes.size();
    mesh.nodes.push_back(raw_nodes.at(id));
  }
  for (const auto& t : raw_tris) {
    std::array<std::size_t, 3> tri{index[t[0]], index[t[1]], index[t[2]]};
    const double a = triangle_area(mesh.nodes[tri[0]], mesh.nodes[tri[1]], mesh.nodes[tri[2]]);
    if (a == 0.0) throw SingularElementError("degenerate triangle in msh file");
    if (a < 0) std::swap(tri[1], tri[2]);
    mesh.triangles.push_back(tri);
  }

  bool tagged = false;
  for (const auto& [id, phys] : tag_of) tagged = tagged || ((phys == 1 || phys == 2) && index.count(id));
  if (!tagged) return compute_normals(assign_node_types(std::move(mesh), 0));

  mesh.node_type.assign(mesh.nodes.size(), NodeType::Interior);
  for (const auto& loop : boundary_loops(mesh)) {
    for (std::size_t v : loop) mesh.node_type[v] = NodeType::Neumann;
  }
  bool any_dirichlet = false;
  for (const auto& [id, phys] : tag_of) {
    auto it = index.find(id);
    if (it == index.end() || phys != 1) continue;
    mesh.node_type[it->second] = NodeType::Dirichlet;
    any_dirichlet = true;
  }
  if (!any_dirichlet) throw NoDirichletError("msh file tags no Dirichlet node");
  return compute_normals(std::move(mesh));
}

TriMesh read_mesh(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".msh" ? read_msh(path) : read_mesh_json(path);
}

}  // namespace eqgnn
