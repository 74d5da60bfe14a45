#include "sdm/structure.hpp"

#include <algorithm>
#include <deque>
#include <map>
#include <set>
#include <stdexcept>

#include "sdm/random.hpp"

namespace sdm {

namespace {

struct Contact {
  int a = -1;
  int b = -1;
  int axis = -1;  // axis along which the boxes meet
};

// The contact axis is the one with the largest (least negative) gap between
// the two intervals, i.e. where the boxes merely touch rather than overlap.
int contact_axis(const Aabb& a, const Aabb& b) {
  int axis = 0;
  double best_gap = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < 3; ++k) {
    const double gap =
        std::max(a.lo[k], b.lo[k]) - std::min(a.hi[k], b.hi[k]);
    if (gap > best_gap) {
      best_gap = gap;
      axis = k;
    }
  }
  return axis;
}

bool boxes_within(const Aabb& a, const Aabb& b, double tol) {
  for (int k = 0; k < 3; ++k)
    if (a.lo[k] - tol > b.hi[k] || b.lo[k] - tol > a.hi[k]) return false;
  return true;
}

}  // namespace

std::vector<SupportEdge> detect_supports(const std::vector<TriMesh>& parts,
                                         const StructureConfig& config) {
  const int n = static_cast<int>(parts.size());
  std::vector<Aabb> boxes(n);
  Aabb shape_box;
  for (int i = 0; i < n; ++i) {
    boxes[i] = compute_aabb(parts[i]);
    if (!boxes[i].empty()) shape_box.expand(boxes[i]);
  }
  if (shape_box.empty()) return {};
  const double tol = config.contact_tolerance_factor * shape_box.diagonal();

  std::vector<Contact> contacts;
  for (int i = 0; i < n; ++i) {
    if (boxes[i].empty()) continue;
    for (int j = i + 1; j < n; ++j) {
      if (boxes[j].empty()) continue;
      if (boxes_within(boxes[i], boxes[j], tol))
        contacts.push_back({i, j, contact_axis(boxes[i], boxes[j])});
    }
  }

  std::vector<std::vector<int>> neighbours(n);
  for (size_t c = 0; c < contacts.size(); ++c) {
    neighbours[contacts[c].a].push_back(static_cast<int>(c));
    neighbours[contacts[c].b].push_back(static_cast<int>(c));
  }

  std::vector<SupportEdge> edges;
  std::vector<bool> settled(n, false);
  std::deque<int> queue;

  // Parts resting on the floor are the roots of the support hierarchy.
  for (int i = 0; i < n; ++i) {
    if (boxes[i].empty()) continue;
    if (boxes[i].lo.y() <= config.ground_level + tol) {
      edges.push_back({kGround, i, SupportDirection::kBelow});
      settled[i] = true;
      queue.push_back(i);
    }
  }

  auto walk = [&]() {
    while (!queue.empty()) {
      const int u = queue.front();
      queue.pop_front();
      for (int ci : neighbours[u]) {
        const Contact& contact = contacts[ci];
        const int v = contact.a == u ? contact.b : contact.a;
        if (settled[v]) continue;
        SupportEdge edge;
        edge.supporter = u;
        edge.supported = v;
        if (contact.axis == 1) {
          const bool supporter_below =
              boxes[u].center().y() <= boxes[v].center().y();
          edge.direction = supporter_below ? SupportDirection::kBelow
                                           : SupportDirection::kAbove;
        } else {
          edge.direction = SupportDirection::kSide;
        }
        edges.push_back(edge);
        settled[v] = true;
        queue.push_back(v);
      }
    }
  };
  walk();

  // Clusters that never touch the ground (pathological but possible) are
  // rooted at their largest part so every contact still becomes an edge.
  while (true) {
    int root = -1;
    double best_volume = -1.0;
    for (int i = 0; i < n; ++i) {
      if (settled[i] || boxes[i].empty()) continue;
      const Vec3 e = boxes[i].extent();
      const double volume = e.x() * e.y() * e.z();
      if (volume > best_volume) {
        best_volume = volume;
        root = i;
      }
    }
    if (root < 0) break;
    settled[root] = true;
    queue.push_back(root);
    walk();
  }

  return edges;
}

std::vector<std::vector<int>> detect_equal_length_groups(
    int part_count, const std::vector<SupportEdge>& supports) {
  // Key each part by its supporter/supported sets over vertical edges.
  std::vector<std::set<int>> above(part_count), below(part_count);
  for (const SupportEdge& e : supports) {
    if (e.direction == SupportDirection::kSide) continue;
    if (e.supported >= 0 && e.supported < part_count)
      below[e.supported].insert(e.supporter);
    if (e.supporter >= 0 && e.supporter < part_count)
      above[e.supporter].insert(e.supported);
  }

  std::map<std::pair<std::set<int>, std::set<int>>, std::vector<int>> buckets;
  for (int i = 0; i < part_count; ++i) {
    if (above[i].empty() || below[i].empty()) continue;
    buckets[{above[i], below[i]}].push_back(i);
  }

  std::vector<std::vector<int>> groups;
  for (auto& [key, members] : buckets)
    if (members.size() >= 2) groups.push_back(members);
  std::sort(groups.begin(), groups.end());
  return groups;
}

Eigen::Vector4d normalize_plane(const Eigen::Vector4d& plane) {
  const double len = plane.head<3>().norm();
  if (len <= 0.0)
    throw std::invalid_argument("plane normal must be non-zero");
  Eigen::Vector4d out = plane / len;
  for (int k = 0; k < 3; ++k) {
    if (std::abs(out[k]) > 1e-12) {
      if (out[k] < 0.0) out = -out;
      break;
    }
  }
  return out;
}

std::vector<SymmetryPair> detect_symmetry(const std::vector<TriMesh>& parts,
                                          const StructureConfig& config) {
  const int n = static_cast<int>(parts.size());
  std::vector<Aabb> boxes(n);
  Aabb shape_box;
  std::vector<bool> usable(n, false);
  for (int i = 0; i < n; ++i) {
    boxes[i] = compute_aabb(parts[i]);
    usable[i] = !parts[i].triangles.empty();
    if (usable[i]) shape_box.expand(boxes[i]);
  }
  if (shape_box.empty()) return {};

  // Candidate mirror planes: axis-aligned through the shape centre, then the
  // perpendicular bisector of every centroid pair.
  std::vector<Eigen::Vector4d> planes;
  const Vec3 c = shape_box.center();
  planes.push_back({1, 0, 0, -c.x()});
  planes.push_back({0, 1, 0, -c.y()});
  planes.push_back({0, 0, 1, -c.z()});
  for (int i = 0; i < n; ++i) {
    if (!usable[i]) continue;
    for (int j = i + 1; j < n; ++j) {
      if (!usable[j]) continue;
      const Vec3 diff = boxes[j].center() - boxes[i].center();
      if (diff.norm() <= 1e-9 * shape_box.diagonal()) continue;
      const Vec3 normal = diff.normalized();
      const Vec3 mid = 0.5 * (boxes[i].center() + boxes[j].center());
      planes.push_back({normal.x(), normal.y(), normal.z(), -normal.dot(mid)});
    }
  }

  struct Candidate {
    double score;
    int i, j;
    Eigen::Vector4d plane;
  };
  std::vector<Candidate> candidates;
  for (const Eigen::Vector4d& plane : planes) {
    for (int i = 0; i < n; ++i) {
      if (!usable[i]) continue;
      const TriMesh mirrored =
          reflect_mesh(parts[i], plane.head<3>(), plane[3]);
      for (int j = i + 1; j < n; ++j) {
        if (!usable[j]) continue;
        const double score =
            surface_chamfer(mirrored, parts[j], config.symmetry_samples,
                            derive_seed(config.seed, i * n + j));
        if (score < config.symmetry_tolerance * boxes[j].diagonal())
          candidates.push_back({score, i, j, normalize_plane(plane)});
      }
    }
  }

  std::sort(candidates.begin(), candidates.end(), [](const auto& a,
                                                     const auto& b) {
    return std::tie(a.score, a.i, a.j) < std::tie(b.score, b.i, b.j);
  });

  std::vector<bool> taken(n, false);
  std::vector<SymmetryPair> pairs;
  for (const Candidate& cand : candidates) {
    if (taken[cand.i] || taken[cand.j]) continue;
    taken[cand.i] = taken[cand.j] = true;
    pairs.push_back({cand.i, cand.j, cand.plane.head<3>(), cand.plane[3]});
  }
  std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
    return std::tie(a.first, a.second) < std::tie(b.first, b.second);
  });
  return pairs;
}

StructureGraph build_structure(const std::vector<TriMesh>& parts,
                               const StructureConfig& config) {
  StructureGraph graph;
  graph.supports = detect_supports(parts, config);
  graph.symmetries = detect_symmetry(parts, config);
  graph.equal_length_groups = detect_equal_length_groups(
      static_cast<int>(parts.size()), graph.supports);
  return graph;
}

int part_vector_length(int label_count) {
  if (label_count < 1)
    throw std::invalid_argument("a category needs at least one part label");
  return 2 * label_count + 9 + kGeometryLatentSize;
}

Eigen::VectorXd encode_part_vector(const PartRecord& record, int label_count) {
  if (static_cast<int>(record.supports.size()) != label_count ||
      static_cast<int>(record.supported_by.size()) != label_count)
    throw std::invalid_argument("support masks must match the label count");
  if (record.geometry.size() != kGeometryLatentSize)
    throw std::invalid_argument("geometry latent must have " +
                                std::to_string(kGeometryLatentSize) +
                                " entries");

  Eigen::VectorXd v(part_vector_length(label_count));
  int at = 0;
  v[at++] = record.exists ? 1.0 : 0.0;
  for (int i = 0; i < label_count; ++i) v[at++] = record.supports[i] ? 1 : 0;
  for (int i = 0; i < label_count; ++i)
    v[at++] = record.supported_by[i] ? 1 : 0;
  v.segment<3>(at) = record.center;
  at += 3;
  v[at++] = record.has_symmetry ? 1.0 : 0.0;
  if (record.has_symmetry) {
    v.segment<4>(at) = normalize_plane(record.symmetry_plane);
  } else {
    v.segment<4>(at).setZero();
  }
  at += 4;
  v.segment(at, kGeometryLatentSize) = record.geometry;
  return v;
}

PartRecord decode_part_vector(const Eigen::VectorXd& vector, int label_count) {
  if (vector.size() != part_vector_length(label_count))
    throw std::invalid_argument(
        "part vector has " + std::to_string(vector.size()) +
        " entries, expected " + std::to_string(part_vector_length(label_count)));

  PartRecord record;
  int at = 0;
  record.exists = vector[at++] > 0.5;
  record.supports.resize(label_count);
  record.supported_by.resize(label_count);
  for (int i = 0; i < label_count; ++i) record.supports[i] = vector[at++] > 0.5;
  for (int i = 0; i < label_count; ++i)
    record.supported_by[i] = vector[at++] > 0.5;
  record.center = vector.segment<3>(at);
  at += 3;
  record.has_symmetry = vector[at++] > 0.5;
  const Eigen::Vector4d plane = vector.segment<4>(at);
  at += 4;
  if (record.has_symmetry && plane.head<3>().norm() > 1e-9) {
    record.symmetry_plane = normalize_plane(plane);
  } else {
    record.has_symmetry = false;
    record.symmetry_plane.setZero();
  }
  record.geometry = vector.segment(at, kGeometryLatentSize);
  return record;
}

}  // namespace sdm
