#include "sdm/registration.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>
#include <stdexcept>

#include "sdm/random.hpp"

namespace sdm {

TriMesh init_box(const BoxTemplate& tmpl, const Aabb& target_box) {
  if (target_box.empty())
    throw std::invalid_argument("cannot initialise a box from an empty AABB");

  Vec3 extent = target_box.extent();
  const double max_extent = extent.maxCoeff();
  if (max_extent <= 0.0)
    throw std::invalid_argument(
        "target bounding box is degenerate in every axis");
  // Collapsed axes get a small positive thickness relative to the part size.
  const double floor = 1e-4 * max_extent;
  for (int k = 0; k < 3; ++k) extent[k] = std::max(extent[k], floor);

  const Vec3 center = target_box.center();
  TriMesh box = tmpl.mesh;
  for (Vec3& p : box.positions)
    p = center + p.cwiseProduct(extent);  // template coords live in [-0.5,0.5]
  return box;
}

namespace {

// Uniform Laplacian L = I - A with A the row-stochastic one-ring average.
Eigen::SparseMatrix<double> uniform_laplacian(const TriMesh& mesh) {
  const auto ring = vertex_adjacency(mesh);
  const int n = mesh.vertex_count();
  std::vector<Eigen::Triplet<double>> trips;
  for (int v = 0; v < n; ++v) {
    trips.emplace_back(v, v, 1.0);
    if (ring[v].empty()) continue;
    const double w = -1.0 / static_cast<double>(ring[v].size());
    for (int u : ring[v]) trips.emplace_back(v, u, w);
  }
  Eigen::SparseMatrix<double> L(n, n);
  L.setFromTriplets(trips.begin(), trips.end());
  return L;
}

// Moves displacements from a coarse template grid to a finer one by bilinear
// interpolation on each cube face; positions follow as rest + displacement.
std::vector<Vec3> prolong_displacements(const BoxTemplate& coarse,
                                        const std::vector<Vec3>& coarse_disp,
                                        const BoxTemplate& fine) {
  const int mc = coarse.grid_resolution;
  const int mf = fine.grid_resolution;
  std::vector<Vec3> fine_disp(fine.mesh.positions.size());
  for (size_t v = 0; v < fine.mesh.positions.size(); ++v) {
    const FaceCoord fc = fine.vertex_coords[v];
    const double u = static_cast<double>(fc.u) * mc / mf;
    const double w = static_cast<double>(fc.v) * mc / mf;
    const int u0 = std::min(static_cast<int>(u), mc - 1);
    const int w0 = std::min(static_cast<int>(w), mc - 1);
    const double fu = u - u0;
    const double fw = w - w0;
    const std::vector<int>& grid = coarse.face_vertices[fc.face];
    const Vec3& d00 = coarse_disp[grid[w0 * (mc + 1) + u0]];
    const Vec3& d10 = coarse_disp[grid[w0 * (mc + 1) + u0 + 1]];
    const Vec3& d01 = coarse_disp[grid[(w0 + 1) * (mc + 1) + u0]];
    const Vec3& d11 = coarse_disp[grid[(w0 + 1) * (mc + 1) + u0 + 1]];
    fine_disp[v] = (1 - fu) * (1 - fw) * d00 + fu * (1 - fw) * d10 +
                   (1 - fu) * fw * d01 + fu * fw * d11;
  }
  return fine_disp;
}

TriMesh mesh_with_positions(const TriMesh& proto,
                            const std::vector<Vec3>& positions) {
  TriMesh out = proto;
  out.positions = positions;
  return out;
}

}  // namespace

FitResult fit_box_to_part(const BoxTemplate& tmpl, const TriMesh& target,
                          const RegistrationConfig& config) {
  if (config.levels.empty())
    throw std::invalid_argument("registration needs at least one level");
  if (config.levels.size() != config.weights.size())
    throw std::invalid_argument("levels and weights must pair up");
  for (size_t i = 0; i < config.levels.size(); ++i) {
    if (config.levels[i] < 1)
      throw std::invalid_argument("grid resolutions must be >= 1");
    if (i > 0 && config.levels[i] <= config.levels[i - 1])
      throw std::invalid_argument("levels must be strictly increasing");
    if (config.weights[i] <= 0.0)
      throw std::invalid_argument("Laplacian weights must be positive");
  }
  if (tmpl.grid_resolution != config.levels.back())
    throw std::invalid_argument(
        "template resolution " + std::to_string(tmpl.grid_resolution) +
        " does not match the finest level " +
        std::to_string(config.levels.back()));
  if (target.triangles.empty())
    throw std::invalid_argument("registration target has no triangles");

  const Aabb target_box = compute_aabb(target);
  const ClosestPointQuery target_query(target);

  FitResult result;
  std::vector<Vec3> displacement;  // carried between levels
  BoxTemplate prev_level_tmpl;

  for (size_t li = 0; li < config.levels.size(); ++li) {
    const BoxTemplate level_tmpl = config.levels[li] == tmpl.grid_resolution
                                       ? tmpl
                                       : make_box_template(config.levels[li]);
    const int n = level_tmpl.mesh.vertex_count();
    const TriMesh rest = init_box(level_tmpl, target_box);

    std::vector<Vec3> x(rest.positions);
    if (li > 0) {
      displacement =
          prolong_displacements(prev_level_tmpl, displacement, level_tmpl);
      for (int v = 0; v < n; ++v) x[v] = rest.positions[v] + displacement[v];
    }

    const double w = config.weights[li];
    const Eigen::SparseMatrix<double> L = uniform_laplacian(level_tmpl.mesh);
    const Eigen::SparseMatrix<double> LtL =
        Eigen::SparseMatrix<double>(L.transpose()) * L;
    Eigen::SparseMatrix<double> system(n, n);
    system.setIdentity();
    system += w * LtL;
    Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> solver;
    solver.compute(system);
    if (solver.info() != Eigen::Success)
      throw std::runtime_error("registration system factorisation failed");

    // The regularisation anchors displacements to the level rest pose.
    Eigen::MatrixXd x0(n, 3);
    for (int v = 0; v < n; ++v) x0.row(v) = rest.positions[v].transpose();
    const Eigen::MatrixXd anchor_term = w * (LtL * x0);

    const std::uint64_t level_seed = derive_seed(config.seed, li);
    auto residual_of = [&](const std::vector<Vec3>& pos) {
      return surface_chamfer(mesh_with_positions(level_tmpl.mesh, pos), target,
                             config.sample_count, level_seed);
    };

    FitLevel level;
    level.resolution = config.levels[li];
    std::vector<Vec3> best_x = x;
    double best_residual = residual_of(x);

    Eigen::MatrixXd rhs(n, 3);
    for (int iter = 0; iter < config.max_iterations; ++iter) {
      for (int v = 0; v < n; ++v)
        rhs.row(v) = target_query.closest_point(x[v]).transpose();
      rhs += anchor_term;
      const Eigen::MatrixXd solution = solver.solve(rhs);

      double mean_disp = 0.0;
      for (int v = 0; v < n; ++v) {
        const Vec3 xv = solution.row(v).transpose();
        mean_disp += (xv - x[v]).norm();
        x[v] = xv;
      }
      mean_disp /= n;
      ++level.iterations;

      const double res = residual_of(x);
      if (res < best_residual) {
        best_residual = res;
        best_x = x;
      }
      if (mean_disp < config.tolerance) {
        level.converged = true;
        break;
      }
    }

    level.residual = best_residual;
    result.levels.push_back(level);

    displacement.resize(n);
    for (int v = 0; v < n; ++v)
      displacement[v] = best_x[v] - rest.positions[v];
    prev_level_tmpl = level_tmpl;

    if (li + 1 == config.levels.size()) {
      result.mesh = mesh_with_positions(level_tmpl.mesh, best_x);
      result.residual = best_residual;
    }
  }

  result.converged = true;
  for (const FitLevel& level : result.levels)
    result.converged = result.converged && level.converged;
  return result;
}

}  // namespace sdm
