#pragma once

#include <Eigen/Core>
#include <vector>

#include "sdm/mesh.hpp"

namespace sdm {

// Per-vertex deformation features, one row per template vertex:
//   [ r_x r_y r_z | S_xx S_xy S_xz S_yy S_yz S_zz ]
// where r is the axis-angle log of the rotation factor (angle in [0, pi)) and
// S is the symmetric stretch factor of the polar decomposition T = R * S.
struct DeformationFeatures {
  Eigen::MatrixXd values;    // V x 9
  std::vector<int> flagged;  // vertices with degenerate or ambiguous gradients
};

// Axis-angle log of a rotation matrix; |result| in [0, pi].
Vec3 rotation_log(const Eigen::Matrix3d& rotation);

// Rodrigues exponential of an axis-angle vector.
Eigen::Matrix3d rotation_exp(const Vec3& axis_angle);

// Packs/unpacks the upper triangle of a symmetric 3x3 matrix in the order
// (xx, xy, xz, yy, yz, zz).
Eigen::Matrix<double, 6, 1> pack_symmetric(const Eigen::Matrix3d& s);
Eigen::Matrix3d unpack_symmetric(const Eigen::Matrix<double, 6, 1>& packed);

// Estimates the per-vertex deformation gradient T mapping template one-ring
// edges onto deformed ones in least squares, then stores its polar factors.
// Flat one-rings (every face-interior template vertex) leave the normal
// direction of T unconstrained; those systems are completed with a
// area-scaled-normal correspondence, which keeps rigid motions and uniform or
// axis-aligned scaling exact.  Vertices whose systems stay near-singular, or
// whose rotation angle reaches pi, are regularised and flagged.
//
// The deformed mesh must share the template's connectivity.
DeformationFeatures encode_deformation(const BoxTemplate& tmpl,
                                       const TriMesh& deformed);

// Reconstructs vertex positions from features by solving the global linear
// least-squares system whose per-edge target is the endpoint-averaged gradient
// applied to the template edge; the anchor vertex is pinned to its template
// position to fix translation.  Throws if the template mesh is disconnected.
TriMesh decode_deformation(const BoxTemplate& tmpl,
                           const Eigen::MatrixXd& features, int anchor = 0);

}  // namespace sdm
