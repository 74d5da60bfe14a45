#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace sdm {

using Vec3 = Eigen::Vector3d;
using Tri = std::array<int, 3>;

// Indexed triangle mesh.  Triangles are CCW when seen from outside.
struct TriMesh {
  std::vector<Vec3> positions;
  std::vector<Tri> triangles;
  std::string label;  // optional object name, carried through OBJ I/O

  int vertex_count() const { return static_cast<int>(positions.size()); }
  int triangle_count() const { return static_cast<int>(triangles.size()); }
};

// Throws std::invalid_argument if any triangle references a missing vertex or
// repeats a corner.
void validate_mesh(const TriMesh& mesh);

struct Aabb {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = Vec3::Constant(-std::numeric_limits<double>::infinity());

  Vec3 center() const { return 0.5 * (lo + hi); }
  Vec3 extent() const { return hi - lo; }
  double diagonal() const { return (hi - lo).norm(); }
  bool empty() const { return (hi.array() < lo.array()).any(); }
  void expand(const Vec3& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  void expand(const Aabb& b) {
    lo = lo.cwiseMin(b.lo);
    hi = hi.cwiseMax(b.hi);
  }
};

Aabb compute_aabb(const TriMesh& mesh);
Aabb compute_aabb(const std::vector<Vec3>& points);

// Locates a template vertex on the unit cube surface: face index in [0,6)
// ordered (+x,-x,+y,-y,+z,-z), integer grid coordinates (u,v) in [0,m].
struct FaceCoord {
  int face = -1;
  int u = 0;
  int v = 0;
};

// Subdivided unit cube centered at the origin (side length 1).  Each of the
// six faces carries an (m+1) x (m+1) vertex grid; shared edge/corner vertices
// are merged, giving 6m^2+2 vertices and 12m^2 triangles.
struct BoxTemplate {
  TriMesh mesh;
  int grid_resolution = 0;                // m
  std::vector<FaceCoord> vertex_coords;   // one entry per mesh vertex
  // face_vertices[f][v * (m+1) + u] -> mesh vertex index
  std::array<std::vector<int>, 6> face_vertices;
};

// Builds the canonical box template.  m must be >= 1.
BoxTemplate make_box_template(int m);

// V - E + F of the triangle mesh (E counts undirected edges).
int euler_characteristic(const TriMesh& mesh);

// Undirected one-ring adjacency derived from triangles; each list is sorted
// and duplicate-free.
std::vector<std::vector<int>> vertex_adjacency(const TriMesh& mesh);

// Draws `count` points from the surface, triangles weighted by area, with
// uniform barycentric placement inside each triangle.  Deterministic in seed.
std::vector<Vec3> sample_surface(const TriMesh& mesh, int count,
                                 std::uint64_t seed);

// Symmetric Chamfer distance between point sets: mean squared nearest
// neighbour distance from a to b plus the same from b to a.  Both sets must
// be non-empty.
double chamfer_distance(const std::vector<Vec3>& a, const std::vector<Vec3>& b);

// BVH over mesh triangles answering closest-point-on-surface queries.
class ClosestPointQuery {
 public:
  explicit ClosestPointQuery(const TriMesh& mesh);

  // Closest point on the mesh surface to p.
  Vec3 closest_point(const Vec3& p) const;
  double squared_distance(const Vec3& p) const;

 private:
  struct Node {
    Aabb box;
    int left = -1;    // internal: child index; leaf: first triangle
    int right = -1;   // internal: child index; leaf: -1
    int count = 0;    // leaf: number of triangles, 0 for internal nodes
  };
  struct Hit {
    double sq_dist;
    Vec3 point;
  };

  void build(int node, int begin, int end, std::vector<int>& order,
             const std::vector<Vec3>& centroids);
  void search(int node, const Vec3& p, Hit& best) const;

  std::vector<Vec3> positions_;
  std::vector<Tri> triangles_;  // reordered by the build
  std::vector<Node> nodes_;
};

// Chamfer distance measured against the actual surfaces: mean squared
// distance from points sampled on a to the surface of b, plus the reverse.
// Exactly zero when both meshes trace the same surface.
double surface_chamfer(const TriMesh& a, const TriMesh& b, int samples,
                       std::uint64_t seed);

// Mirror across the plane n.x + d = 0 (n need not be unit; it is normalised
// internally).  Triangle winding is flipped so normals keep pointing outward.
TriMesh reflect_mesh(const TriMesh& mesh, const Vec3& plane_normal,
                     double plane_offset);

// Closest point on triangle (a,b,c) to p.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b,
                               const Vec3& c);

// Wavefront OBJ I/O.  Loading accepts v/vt/vn/f plus passthrough keywords,
// fans polygons (1,2,3)(1,3,4)..., resolves negative indices, and throws
// std::runtime_error naming the line on malformed input.  Saving writes
// positions with enough digits to round-trip exactly.
TriMesh load_obj(const std::string& path);
void save_obj(const TriMesh& mesh, const std::string& path);

}  // namespace sdm
