#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sdm/mesh.hpp"

namespace sdm {

// Direction of a support contact: Below means the supporter sits underneath
// (a table leg), Above means the supported part hangs from the supporter,
// Side is a lateral attachment (a wing on a fuselage).
enum class SupportDirection { kBelow, kAbove, kSide };

std::string support_direction_name(SupportDirection d);
SupportDirection support_direction_from_name(const std::string& name);

// Virtual ground node; in JSON it serializes as label index n.
inline constexpr int kGround = -1;

struct SupportEdge {
  int supporter = kGround;  // part index, or kGround
  int supported = -1;
  SupportDirection direction = SupportDirection::kBelow;
};

struct SymmetryPair {
  int first = -1;
  int second = -1;
  Vec3 normal = Vec3::Zero();  // unit, sign-canonical
  double offset = 0.0;         // plane is normal . x + offset = 0
};

struct StructureGraph {
  std::vector<SupportEdge> supports;
  std::vector<SymmetryPair> symmetries;
  std::vector<std::vector<int>> equal_length_groups;  // indices, sorted
};

struct StructureConfig {
  double contact_tolerance_factor = 0.02;  // times the shape AABB diagonal
  double ground_level = 0.0;               // world height of the floor plane
  double symmetry_tolerance = 0.05;        // times the candidate partner's diagonal
  int symmetry_samples = 512;              // surface samples per Chamfer check
  std::uint64_t seed = 0;
};

// Detects support contacts between part bounding boxes (pairs within
// contact_tol of touching) and orients them by walking outward from the
// grounded parts; parts whose bottom face is within contact_tol of
// ground_level additionally get a ground edge.  Contact on a vertical face
// pair gives below/above depending on which box sits higher; other contacts
// are side.  Clusters that never reach the ground are rooted at their
// largest-volume part.
std::vector<SupportEdge> detect_supports(const std::vector<Aabb>& boxes,
                                         double contact_tol,
                                         double ground_level = 0.0);

// Groups parts that share an identical supporter set and an identical
// supported set over vertical (below/above) edges; the ground acts as a
// virtual part, and parts with no vertical edge never group.  Only groups of
// two or more are reported, each sorted by part index; the shared axis is
// the upright one (t = 1).
std::vector<std::vector<int>> detect_equal_length_groups(
    int part_count, const std::vector<SupportEdge>& supports);

// Finds mirrored part pairs.  Candidate planes are the three axis-aligned
// planes through the shape's bounding-box centre plus the perpendicular
// bisector of every part-centroid pair; a pair is accepted when reflecting
// one part lands on the other within tolerance.  Each part joins at most one
// pair; better matches win.
std::vector<SymmetryPair> detect_symmetry(const std::vector<TriMesh>& parts,
                                          const StructureConfig& config);

StructureGraph build_structure(const std::vector<TriMesh>& parts,
                               const StructureConfig& config);

// Scales the plane (a,b,c,d) so the normal is unit length and the first
// non-zero normal component is positive.  Throws on a zero normal.
Eigen::Vector4d normalize_plane(const Eigen::Vector4d& plane);

inline constexpr int kGeometryLatentSize = 64;

// One part slot of a shape: existence bit, support masks over the category's
// labels, box centre, symmetry plane and the geometry latent code.
struct PartRecord {
  int label_id = -1;
  bool exists = false;
  std::vector<bool> supports;      // one flag per part label
  std::vector<bool> supported_by;  // one flag per part label
  Vec3 center = Vec3::Zero();
  bool has_symmetry = false;
  Eigen::Vector4d symmetry_plane = Eigen::Vector4d::Zero();
  Eigen::VectorXd geometry = Eigen::VectorXd::Zero(kGeometryLatentSize);
};

// A full shape: one PartRecord per category label, in fixed label order.
struct ShapeRecord {
  std::string category;
  int label_count = 0;                  // n
  std::vector<PartRecord> parts;        // exactly n slots
  std::map<int, int> symmetry_partner;  // category-level label -> label map
};

// Length of one packed part vector for a category with n part labels:
// 1 (exists) + n + n (masks) + 3 (centre) + 1 + 4 (symmetry) + 64 (geometry).
int part_vector_length(int label_count);

// Packs a part record into the flat layout above.  Mask sizes must equal the
// label count.
Eigen::VectorXd encode_part_vector(const PartRecord& record, int label_count);

// Inverse of encode_part_vector: bits are thresholded at 0.5 and the symmetry
// plane is re-normalised (zeroed when the decoded part has no symmetry or the
// normal collapsed).
PartRecord decode_part_vector(const Eigen::VectorXd& vector, int label_count);

// Concatenates every part slot into the whole-shape vector of length
// n * (2n + 73); absent parts must already be zero-filled by their records.
Eigen::VectorXd assemble_shape_vector(const ShapeRecord& shape);

// Splits and thresholds a whole-shape vector back into a ShapeRecord.  The
// symmetry-partner map is category metadata and is left empty.
ShapeRecord parse_shape_vector(const Eigen::VectorXd& vector, int label_count,
                               const std::string& category);

// Category-level table mapping (supporter label, supported label) to the
// support direction observed in the training set; the ground uses label
// index n.  Conflicting observations resolve by majority, ties by first
// direction seen.
class SupportLookup {
 public:
  void observe(int supporter_label, int supported_label,
               SupportDirection direction);
  bool contains(int supporter_label, int supported_label) const;
  // Throws std::out_of_range naming the pair on a miss.
  SupportDirection direction(int supporter_label, int supported_label) const;
  // All known (supporter, supported) pairs, sorted.
  std::vector<std::pair<int, int>> pairs() const;

 private:
  struct Tally {
    std::array<int, 3> counts = {0, 0, 0};
    SupportDirection first = SupportDirection::kBelow;
  };
  std::map<std::pair<int, int>, Tally> table_;
};

}  // namespace sdm
