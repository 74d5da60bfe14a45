#include "sdm/deform.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace sdm {

namespace {
constexpr double kPi = 3.14159265358979323846;

Eigen::Matrix3d cross_matrix(const Vec3& a) {
  Eigen::Matrix3d k;
  k << 0, -a.z(), a.y(), a.z(), 0, -a.x(), -a.y(), a.x(), 0;
  return k;
}
}  // namespace

Vec3 rotation_log(const Eigen::Matrix3d& rotation) {
  const double cos_angle =
      std::clamp(0.5 * (rotation.trace() - 1.0), -1.0, 1.0);
  const double angle = std::acos(cos_angle);
  // w = 2 sin(angle) * axis
  const Vec3 w(rotation(2, 1) - rotation(1, 2),
               rotation(0, 2) - rotation(2, 0),
               rotation(1, 0) - rotation(0, 1));

  if (angle < 1e-7) return 0.5 * w;  // sin x ~ x
  if (angle > kPi - 1e-5) {
    // Near pi the skew part vanishes; recover the axis from the symmetric
    // part instead: R ~ 2 a a^T - I, so a^2_k = (R_kk + 1) / 2.
    const Eigen::Matrix3d b = 0.5 * (rotation + Eigen::Matrix3d::Identity());
    int k = 0;
    b.diagonal().maxCoeff(&k);
    Vec3 axis = b.col(k) / std::sqrt(std::max(b(k, k), 1e-300));
    axis.normalize();
    if (axis.dot(w) < 0.0) axis = -axis;
    return angle * axis;
  }
  return (angle / (2.0 * std::sin(angle))) * w;
}

Eigen::Matrix3d rotation_exp(const Vec3& axis_angle) {
  const double angle = axis_angle.norm();
  if (angle < 1e-12) {
    const Eigen::Matrix3d k = cross_matrix(axis_angle);
    return Eigen::Matrix3d::Identity() + k + 0.5 * k * k;
  }
  const Eigen::Matrix3d k = cross_matrix(axis_angle / angle);
  return Eigen::Matrix3d::Identity() + std::sin(angle) * k +
         (1.0 - std::cos(angle)) * k * k;
}

Eigen::Matrix<double, 6, 1> pack_symmetric(const Eigen::Matrix3d& s) {
  Eigen::Matrix<double, 6, 1> packed;
  packed << s(0, 0), s(0, 1), s(0, 2), s(1, 1), s(1, 2), s(2, 2);
  return packed;
}

Eigen::Matrix3d unpack_symmetric(const Eigen::Matrix<double, 6, 1>& packed) {
  Eigen::Matrix3d s;
  s << packed[0], packed[1], packed[2], packed[1], packed[3], packed[4],
      packed[2], packed[4], packed[5];
  return s;
}

namespace {

void check_same_connectivity(const BoxTemplate& tmpl, const TriMesh& deformed) {
  if (deformed.vertex_count() != tmpl.mesh.vertex_count())
    throw std::invalid_argument(
        "deformed mesh has " + std::to_string(deformed.vertex_count()) +
        " vertices, template has " +
        std::to_string(tmpl.mesh.vertex_count()));
  if (deformed.triangles != tmpl.mesh.triangles)
    throw std::invalid_argument(
        "deformed mesh connectivity differs from the template");
}

// Area-weighted vertex normal scaled to sqrt of its one-ring area, so it
// transforms consistently with edge vectors under rigid motion and uniform
// scaling.
Vec3 scaled_vertex_normal(const std::vector<Vec3>& positions,
                          const std::vector<int>& incident_triangles,
                          const std::vector<Tri>& triangles) {
  Vec3 area_normal = Vec3::Zero();
  for (int t : incident_triangles) {
    const Vec3& a = positions[triangles[t][0]];
    const Vec3& b = positions[triangles[t][1]];
    const Vec3& c = positions[triangles[t][2]];
    area_normal += 0.5 * (b - a).cross(c - a);
  }
  const double len = area_normal.norm();
  if (len <= 0.0) return Vec3::Zero();
  return area_normal / std::sqrt(len);
}

}  // namespace

DeformationFeatures encode_deformation(const BoxTemplate& tmpl,
                                       const TriMesh& deformed) {
  check_same_connectivity(tmpl, deformed);
  const auto ring = vertex_adjacency(tmpl.mesh);
  const int n = tmpl.mesh.vertex_count();

  std::vector<std::vector<int>> incident(n);
  for (size_t t = 0; t < tmpl.mesh.triangles.size(); ++t)
    for (int c = 0; c < 3; ++c)
      incident[tmpl.mesh.triangles[t][c]].push_back(static_cast<int>(t));

  DeformationFeatures features;
  features.values.resize(n, 9);

  for (int v = 0; v < n; ++v) {
    if (ring[v].size() < 3)
      throw std::invalid_argument("vertex " + std::to_string(v) +
                                  " has fewer than 3 one-ring neighbours");

    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();   // sum e e^T
    Eigen::Matrix3d cross = Eigen::Matrix3d::Zero(); // sum d e^T
    for (int u : ring[v]) {
      const Vec3 e = tmpl.mesh.positions[u] - tmpl.mesh.positions[v];
      const Vec3 d = deformed.positions[u] - deformed.positions[v];
      cov += e * e.transpose();
      cross += d * e.transpose();
    }

    bool flag = false;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
    if (eig.eigenvalues()[0] <= 1e-10 * eig.eigenvalues()[2]) {
      // Flat one-ring: the template edges span only a plane, so add the
      // scaled-normal correspondence to pin the out-of-plane column of T.
      const Vec3 tn =
          scaled_vertex_normal(tmpl.mesh.positions, incident[v],
                               tmpl.mesh.triangles);
      const Vec3 dn =
          scaled_vertex_normal(deformed.positions, incident[v],
                               deformed.triangles);
      cov += tn * tn.transpose();
      cross += dn * tn.transpose();
      eig.compute(cov);
      if (eig.eigenvalues()[0] <= 1e-12 * std::max(eig.eigenvalues()[2], 1.0)) {
        cov += 1e-8 * Eigen::Matrix3d::Identity();
        flag = true;
      }
    }

    const Eigen::Matrix3d gradient = cross * cov.inverse();

    Eigen::JacobiSVD<Eigen::Matrix3d> svd(
        gradient, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d u = svd.matrixU();
    Eigen::Matrix3d vt = svd.matrixV().transpose();
    Vec3 sigma = svd.singularValues();
    if ((u * vt).determinant() < 0.0) {
      // Orientation-reversing gradient: fold the reflection into the weakest
      // stretch direction and flag the vertex.
      u.col(2) = -u.col(2);
      sigma[2] = -sigma[2];
      flag = true;
    }
    const Eigen::Matrix3d rotation = u * vt;
    const Eigen::Matrix3d stretch =
        vt.transpose() * sigma.asDiagonal() * vt;

    const Vec3 r = rotation_log(rotation);
    if (r.norm() > kPi - 1e-5) flag = true;

    features.values.row(v).head<3>() = r.transpose();
    features.values.row(v).tail<6>() =
        pack_symmetric(0.5 * (stretch + stretch.transpose())).transpose();
    if (flag) features.flagged.push_back(v);
  }

  return features;
}

TriMesh decode_deformation(const BoxTemplate& tmpl,
                           const Eigen::MatrixXd& features, int anchor) {
  const int n = tmpl.mesh.vertex_count();
  if (features.rows() != n || features.cols() != 9)
    throw std::invalid_argument(
        "feature matrix must be " + std::to_string(n) + " x 9, got " +
        std::to_string(features.rows()) + " x " +
        std::to_string(features.cols()));
  if (anchor < 0 || anchor >= n)
    throw std::invalid_argument("anchor vertex out of range");

  // The global solve assumes one connected component; verify via union-find.
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };
  for (const Tri& t : tmpl.mesh.triangles) {
    parent[find(t[0])] = find(t[1]);
    parent[find(t[1])] = find(t[2]);
  }
  int components = 0;
  for (int v = 0; v < n; ++v)
    if (find(v) == v) ++components;
  if (components != 1)
    throw std::invalid_argument("template mesh splits into " +
                                std::to_string(components) +
                                " connected components; decoding needs one");

  std::vector<Eigen::Matrix3d> gradients(n);
  for (int v = 0; v < n; ++v) {
    const Eigen::Matrix3d rotation =
        rotation_exp(features.row(v).head<3>().transpose());
    const Eigen::Matrix3d stretch =
        unpack_symmetric(features.row(v).tail<6>().transpose());
    gradients[v] = rotation * stretch;
  }

  // Collect undirected edges once.
  std::vector<std::pair<int, int>> edges;
  for (const Tri& t : tmpl.mesh.triangles)
    for (int c = 0; c < 3; ++c) {
      const int a = t[c], b = t[(c + 1) % 3];
      edges.emplace_back(std::min(a, b), std::max(a, b));
    }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

  // Normal equations of min sum_e || (x_b - x_a) - g_e ||^2 with the anchor
  // eliminated: the graph Laplacian restricted to the free vertices.
  auto reduced_index = [&](int v) { return v < anchor ? v : v - 1; };
  std::vector<Eigen::Triplet<double>> trips;
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n - 1, 3);
  const Vec3 anchor_pos = tmpl.mesh.positions[anchor];

  for (const auto& [a, b] : edges) {
    const Vec3 edge = tmpl.mesh.positions[b] - tmpl.mesh.positions[a];
    const Vec3 target = 0.5 * (gradients[a] + gradients[b]) * edge;
    const bool a_free = a != anchor;
    const bool b_free = b != anchor;
    if (a_free) {
      trips.emplace_back(reduced_index(a), reduced_index(a), 1.0);
      rhs.row(reduced_index(a)) -= target.transpose();
    }
    if (b_free) {
      trips.emplace_back(reduced_index(b), reduced_index(b), 1.0);
      rhs.row(reduced_index(b)) += target.transpose();
    }
    if (a_free && b_free) {
      trips.emplace_back(reduced_index(a), reduced_index(b), -1.0);
      trips.emplace_back(reduced_index(b), reduced_index(a), -1.0);
    } else if (a_free) {
      rhs.row(reduced_index(a)) += anchor_pos.transpose();
    } else if (b_free) {
      rhs.row(reduced_index(b)) += anchor_pos.transpose();
    }
  }

  Eigen::SparseMatrix<double> system(n - 1, n - 1);
  system.setFromTriplets(trips.begin(), trips.end());
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> solver;
  solver.compute(system);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("decode system factorisation failed");
  const Eigen::MatrixXd solution = solver.solve(rhs);

  TriMesh out = tmpl.mesh;
  for (int v = 0; v < n; ++v)
    out.positions[v] = v == anchor
                           ? anchor_pos
                           : Vec3(solution.row(reduced_index(v)).transpose());
  return out;
}

}  // namespace sdm
