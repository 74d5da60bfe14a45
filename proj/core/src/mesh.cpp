#include "sdm/mesh.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "sdm/random.hpp"

namespace sdm {

void validate_mesh(const TriMesh& mesh) {
  const int n = mesh.vertex_count();
  for (size_t t = 0; t < mesh.triangles.size(); ++t) {
    const Tri& tri = mesh.triangles[t];
    for (int c = 0; c < 3; ++c) {
      if (tri[c] < 0 || tri[c] >= n)
        throw std::invalid_argument("triangle " + std::to_string(t) +
                                    " references vertex " +
                                    std::to_string(tri[c]) + " outside [0, " +
                                    std::to_string(n) + ")");
    }
    if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2])
      throw std::invalid_argument("triangle " + std::to_string(t) +
                                  " repeats a vertex");
  }
}

Aabb compute_aabb(const TriMesh& mesh) { return compute_aabb(mesh.positions); }

Aabb compute_aabb(const std::vector<Vec3>& points) {
  Aabb box;
  for (const Vec3& p : points) box.expand(p);
  return box;
}

BoxTemplate make_box_template(int m) {
  if (m < 1) throw std::invalid_argument("grid resolution must be >= 1");

  BoxTemplate tmpl;
  tmpl.grid_resolution = m;

  // Shared vertices are merged through their integer lattice coordinates on
  // the (m+1)^3 cube surface grid.
  std::map<std::array<int, 3>, int> lattice_to_vertex;
  auto vertex_at = [&](int face, int axis, int side, int u, int v) {
    const int b = (axis + 1) % 3;
    const int c = (axis + 2) % 3;
    std::array<int, 3> key;
    key[axis] = side > 0 ? m : 0;
    key[b] = u;
    key[c] = v;
    auto [it, inserted] = lattice_to_vertex.try_emplace(
        key, static_cast<int>(tmpl.mesh.positions.size()));
    if (inserted) {
      Vec3 p;
      p[axis] = side > 0 ? 0.5 : -0.5;
      p[b] = static_cast<double>(u) / m - 0.5;
      p[c] = static_cast<double>(v) / m - 0.5;
      tmpl.mesh.positions.push_back(p);
      tmpl.vertex_coords.push_back({face, u, v});
    }
    return it->second;
  };

  for (int face = 0; face < 6; ++face) {
    const int axis = face / 2;
    const int side = face % 2 == 0 ? +1 : -1;
    std::vector<int>& grid = tmpl.face_vertices[face];
    grid.resize((m + 1) * (m + 1));
    for (int v = 0; v <= m; ++v)
      for (int u = 0; u <= m; ++u)
        grid[v * (m + 1) + u] = vertex_at(face, axis, side, u, v);

    for (int v = 0; v < m; ++v) {
      for (int u = 0; u < m; ++u) {
        const int v00 = grid[v * (m + 1) + u];
        const int v10 = grid[v * (m + 1) + u + 1];
        const int v01 = grid[(v + 1) * (m + 1) + u];
        const int v11 = grid[(v + 1) * (m + 1) + u + 1];
        // With (u,v) mapped to the cyclic axes (axis+1, axis+2), this winding
        // faces +axis; mirror it on the -axis side to keep normals outward.
        if (side > 0) {
          tmpl.mesh.triangles.push_back({v00, v10, v11});
          tmpl.mesh.triangles.push_back({v00, v11, v01});
        } else {
          tmpl.mesh.triangles.push_back({v00, v11, v10});
          tmpl.mesh.triangles.push_back({v00, v01, v11});
        }
      }
    }
  }

  tmpl.mesh.label = "box";
  return tmpl;
}

int euler_characteristic(const TriMesh& mesh) {
  std::vector<std::pair<int, int>> edges;
  edges.reserve(mesh.triangles.size() * 3);
  for (const Tri& t : mesh.triangles)
    for (int c = 0; c < 3; ++c) {
      const int a = t[c], b = t[(c + 1) % 3];
      edges.emplace_back(std::min(a, b), std::max(a, b));
    }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return mesh.vertex_count() - static_cast<int>(edges.size()) +
         mesh.triangle_count();
}

std::vector<std::vector<int>> vertex_adjacency(const TriMesh& mesh) {
  std::vector<std::vector<int>> ring(mesh.vertex_count());
  for (const Tri& t : mesh.triangles)
    for (int c = 0; c < 3; ++c) {
      ring[t[c]].push_back(t[(c + 1) % 3]);
      ring[t[c]].push_back(t[(c + 2) % 3]);
    }
  for (auto& r : ring) {
    std::sort(r.begin(), r.end());
    r.erase(std::unique(r.begin(), r.end()), r.end());
  }
  return ring;
}

std::vector<Vec3> sample_surface(const TriMesh& mesh, int count,
                                 std::uint64_t seed) {
  if (count <= 0) throw std::invalid_argument("sample count must be positive");
  if (mesh.triangles.empty())
    throw std::invalid_argument("cannot sample an empty mesh");

  std::vector<double> cumulative(mesh.triangles.size());
  double total = 0.0;
  for (size_t t = 0; t < mesh.triangles.size(); ++t) {
    const Tri& tri = mesh.triangles[t];
    const Vec3& a = mesh.positions[tri[0]];
    const Vec3& b = mesh.positions[tri[1]];
    const Vec3& c = mesh.positions[tri[2]];
    total += 0.5 * (b - a).cross(c - a).norm();
    cumulative[t] = total;
  }
  if (total <= 0.0)
    throw std::invalid_argument("mesh has zero total surface area");

  RandomStream rng(seed);
  std::vector<Vec3> points;
  points.reserve(count);
  for (int i = 0; i < count; ++i) {
    const double pick = rng.uniform() * total;
    const size_t t = std::lower_bound(cumulative.begin(), cumulative.end(),
                                      pick) -
                     cumulative.begin();
    const Tri& tri = mesh.triangles[std::min(t, cumulative.size() - 1)];
    // Uniform barycentric sample via the square-root trick.
    const double r1 = std::sqrt(rng.uniform());
    const double r2 = rng.uniform();
    const double w0 = 1.0 - r1;
    const double w1 = r1 * (1.0 - r2);
    const double w2 = r1 * r2;
    points.push_back(w0 * mesh.positions[tri[0]] + w1 * mesh.positions[tri[1]] +
                     w2 * mesh.positions[tri[2]]);
  }
  return points;
}

double chamfer_distance(const std::vector<Vec3>& a,
                        const std::vector<Vec3>& b) {
  if (a.empty() || b.empty())
    throw std::invalid_argument("chamfer distance needs non-empty point sets");

  auto one_sided = [](const std::vector<Vec3>& from,
                      const std::vector<Vec3>& to) {
    double sum = 0.0;
    for (const Vec3& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const Vec3& q : to) best = std::min(best, (p - q).squaredNorm());
      sum += best;
    }
    return sum / static_cast<double>(from.size());
  };
  return one_sided(a, b) + one_sided(b, a);
}

// --- point/triangle distance -------------------------------------------------

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b,
                               const Vec3& c) {
  // Region classification after Ericson, "Real-Time Collision Detection".
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;

  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + (d1 / (d1 - d3)) * ab;

  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + (d2 / (d2 - d6)) * ac;

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && d4 - d3 >= 0.0 && d5 - d6 >= 0.0)
    return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);

  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

// --- BVH ---------------------------------------------------------------------

ClosestPointQuery::ClosestPointQuery(const TriMesh& mesh)
    : positions_(mesh.positions), triangles_(mesh.triangles) {
  if (triangles_.empty())
    throw std::invalid_argument("closest-point query needs a non-empty mesh");
  validate_mesh(mesh);

  std::vector<Vec3> centroids(triangles_.size());
  for (size_t t = 0; t < triangles_.size(); ++t)
    centroids[t] = (positions_[triangles_[t][0]] + positions_[triangles_[t][1]] +
                    positions_[triangles_[t][2]]) /
                   3.0;

  std::vector<int> order(triangles_.size());
  std::iota(order.begin(), order.end(), 0);
  nodes_.emplace_back();
  build(0, 0, static_cast<int>(order.size()), order, centroids);

  std::vector<Tri> reordered(triangles_.size());
  for (size_t i = 0; i < order.size(); ++i) reordered[i] = triangles_[order[i]];
  triangles_ = std::move(reordered);
}

void ClosestPointQuery::build(int node, int begin, int end,
                              std::vector<int>& order,
                              const std::vector<Vec3>& centroids) {
  Aabb box;
  for (int i = begin; i < end; ++i)
    for (int c = 0; c < 3; ++c) box.expand(positions_[triangles_[order[i]][c]]);
  nodes_[node].box = box;

  constexpr int kLeafSize = 8;
  if (end - begin <= kLeafSize) {
    nodes_[node].left = begin;
    nodes_[node].count = end - begin;
    return;
  }

  Aabb cbox;
  for (int i = begin; i < end; ++i) cbox.expand(centroids[order[i]]);
  int axis = 0;
  cbox.extent().maxCoeff(&axis);
  const int mid = (begin + end) / 2;
  std::nth_element(order.begin() + begin, order.begin() + mid,
                   order.begin() + end, [&](int lhs, int rhs) {
                     return centroids[lhs][axis] < centroids[rhs][axis];
                   });

  const int left = static_cast<int>(nodes_.size());
  nodes_.emplace_back();
  nodes_.emplace_back();
  nodes_[node].left = left;
  nodes_[node].right = left + 1;
  build(left, begin, mid, order, centroids);
  build(left + 1, mid, end, order, centroids);
}

namespace {
double aabb_squared_distance(const Aabb& box, const Vec3& p) {
  double d = 0.0;
  for (int k = 0; k < 3; ++k) {
    const double lo = box.lo[k] - p[k];
    const double hi = p[k] - box.hi[k];
    const double gap = std::max({lo, hi, 0.0});
    d += gap * gap;
  }
  return d;
}
}  // namespace

void ClosestPointQuery::search(int node, const Vec3& p, Hit& best) const {
  const Node& n = nodes_[node];
  if (n.count > 0) {
    for (int i = n.left; i < n.left + n.count; ++i) {
      const Tri& t = triangles_[i];
      const Vec3 q = closest_point_on_triangle(p, positions_[t[0]],
                                               positions_[t[1]],
                                               positions_[t[2]]);
      const double d = (q - p).squaredNorm();
      if (d < best.sq_dist) {
        best.sq_dist = d;
        best.point = q;
      }
    }
    return;
  }
  // Visit the nearer child first so the far child can often be culled.
  const double dl = aabb_squared_distance(nodes_[n.left].box, p);
  const double dr = aabb_squared_distance(nodes_[n.right].box, p);
  const int first = dl <= dr ? n.left : n.right;
  const int second = dl <= dr ? n.right : n.left;
  const double dfirst = std::min(dl, dr);
  const double dsecond = std::max(dl, dr);
  if (dfirst < best.sq_dist) search(first, p, best);
  if (dsecond < best.sq_dist) search(second, p, best);
}

Vec3 ClosestPointQuery::closest_point(const Vec3& p) const {
  Hit best{std::numeric_limits<double>::infinity(), Vec3::Zero()};
  search(0, p, best);
  return best.point;
}

double ClosestPointQuery::squared_distance(const Vec3& p) const {
  Hit best{std::numeric_limits<double>::infinity(), Vec3::Zero()};
  search(0, p, best);
  return best.sq_dist;
}

double surface_chamfer(const TriMesh& a, const TriMesh& b, int samples,
                       std::uint64_t seed) {
  const ClosestPointQuery qa(a);
  const ClosestPointQuery qb(b);
  const std::vector<Vec3> pa = sample_surface(a, samples, derive_seed(seed, 0));
  const std::vector<Vec3> pb = sample_surface(b, samples, derive_seed(seed, 1));
  double ab = 0.0, ba = 0.0;
  for (const Vec3& p : pa) ab += qb.squared_distance(p);
  for (const Vec3& p : pb) ba += qa.squared_distance(p);
  return ab / pa.size() + ba / pb.size();
}

TriMesh reflect_mesh(const TriMesh& mesh, const Vec3& plane_normal,
                     double plane_offset) {
  const double len = plane_normal.norm();
  if (len <= 0.0)
    throw std::invalid_argument("reflection plane normal must be non-zero");
  const Vec3 n = plane_normal / len;
  const double d = plane_offset / len;

  TriMesh out = mesh;
  for (Vec3& p : out.positions) p -= 2.0 * (n.dot(p) + d) * n;
  for (Tri& t : out.triangles) std::swap(t[1], t[2]);
  return out;
}

// --- OBJ I/O -----------------------------------------------------------------

namespace {

[[noreturn]] void obj_error(const std::string& path, int line,
                            const std::string& what) {
  throw std::runtime_error(path + ":" + std::to_string(line) + ": " + what);
}

// Resolves an OBJ index (1-based, negative counts from the end) to 0-based.
int resolve_index(const std::string& path, int line, long long idx,
                  size_t count) {
  long long resolved = idx > 0 ? idx - 1 : static_cast<long long>(count) + idx;
  if (idx == 0 || resolved < 0 || resolved >= static_cast<long long>(count))
    obj_error(path, line,
              "vertex index " + std::to_string(idx) + " out of range (have " +
                  std::to_string(count) + " vertices)");
  return static_cast<int>(resolved);
}

}  // namespace

TriMesh load_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);

  TriMesh mesh;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::string keyword;
    if (!(ss >> keyword) || keyword[0] == '#') continue;

    if (keyword == "v") {
      Vec3 p;
      if (!(ss >> p.x() >> p.y() >> p.z()))
        obj_error(path, line_no, "malformed vertex: '" + line + "'");
      mesh.positions.push_back(p);
    } else if (keyword == "f") {
      std::vector<int> corners;
      std::string token;
      while (ss >> token) {
        // Face corners may be i, i/t, i//n or i/t/n; only the position index
        // matters here.
        const std::string head = token.substr(0, token.find('/'));
        long long idx = 0;
        const auto res =
            std::from_chars(head.data(), head.data() + head.size(), idx);
        if (res.ec != std::errc() || res.ptr != head.data() + head.size())
          obj_error(path, line_no, "malformed face corner '" + token + "'");
        corners.push_back(
            resolve_index(path, line_no, idx, mesh.positions.size()));
      }
      if (corners.size() < 3)
        obj_error(path, line_no, "face needs at least 3 corners");
      for (size_t c = 1; c + 1 < corners.size(); ++c)
        mesh.triangles.push_back({corners[0], corners[c], corners[c + 1]});
    } else if (keyword == "o" || keyword == "g") {
      std::string name;
      if (ss >> name) mesh.label = name;
    }
    // vt, vn, s, usemtl, mtllib and anything unknown pass through silently.
  }

  validate_mesh(mesh);
  return mesh;
}

void save_obj(const TriMesh& mesh, const std::string& path) {
  validate_mesh(mesh);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);

  if (!mesh.label.empty()) out << "o " << mesh.label << "\n";
  char buf[128];
  for (const Vec3& p : mesh.positions) {
    // %.17g guarantees doubles survive a round trip through text.
    std::snprintf(buf, sizeof(buf), "v %.17g %.17g %.17g\n", p.x(), p.y(),
                  p.z());
    out << buf;
  }
  for (const Tri& t : mesh.triangles)
    out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << "\n";
  if (!out) throw std::runtime_error("failed writing " + path);
}

}  // namespace sdm
