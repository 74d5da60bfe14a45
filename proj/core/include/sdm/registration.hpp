#pragma once

#include <cstdint>
#include <vector>

#include "sdm/mesh.hpp"

namespace sdm {

// Coarse-to-fine settings for fitting the box template to a part surface.
// levels must be strictly increasing grid resolutions; weights pair up with
// levels and control how strongly the Laplacian term resists displacement.
struct RegistrationConfig {
  std::vector<int> levels = {10, 20, 40};
  std::vector<double> weights = {10.0, 3.0, 1.0};
  int max_iterations = 50;     // per level
  double tolerance = 1e-6;     // mean vertex displacement per iteration
  int sample_count = 2048;     // residual measurement samples per side
  std::uint64_t seed = 0;
};

struct FitLevel {
  int resolution = 0;
  double residual = 0.0;  // best surface Chamfer reached at this level
  int iterations = 0;
  bool converged = false;
};

struct FitResult {
  TriMesh mesh;            // deformed template at the finest level
  double residual = 0.0;   // surface Chamfer of mesh against the target
  bool converged = false;  // every level met the tolerance within its cap
  std::vector<FitLevel> levels;
};

// Scales the template into the target bounding box.  Axes whose extent falls
// below 1e-4 of the largest extent are inflated to that floor so the box
// never collapses; an all-degenerate target is rejected.
TriMesh init_box(const BoxTemplate& tmpl, const Aabb& target_box);

// Deforms the box template onto the target surface, alternating closest-point
// correspondences with a Laplacian-regularised linear solve
//   (I + w L^T L) x = c + w L^T L x0
// at each resolution level, prolonging displacements bilinearly between
// levels.  tmpl must match the finest configured level.  The best iterate by
// residual is kept, so the result never regresses past initialisation.
FitResult fit_box_to_part(const BoxTemplate& tmpl, const TriMesh& target,
                          const RegistrationConfig& config);

}  // namespace sdm
