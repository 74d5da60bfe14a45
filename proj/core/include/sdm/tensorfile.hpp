#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace sdm {

// One named tensor in the weight container; data is stored row-major.
struct NamedTensor {
  std::vector<std::uint64_t> dims;
  std::vector<double> data;

  std::uint64_t element_count() const {
    std::uint64_t n = 1;
    for (std::uint64_t d : dims) n *= d;
    return n;
  }
};

// std::map keeps the on-disk tensor order sorted by name, so files written
// from the same weights are byte-identical.
using TensorMap = std::map<std::string, NamedTensor>;

NamedTensor tensor_from_matrix(const Eigen::MatrixXd& m);
NamedTensor tensor_from_vector(const Eigen::VectorXd& v);
Eigen::MatrixXd matrix_from_tensor(const NamedTensor& t);  // rank 2 only
Eigen::VectorXd vector_from_tensor(const NamedTensor& t);  // rank 1 only

// Binary container layout (all integers little-endian):
//   magic "SDMW" | u32 version=1 | u32 tensor count |
//   per tensor: u32 name length | name bytes | u32 rank | u64 dims[rank] |
//               f64 data[product(dims)]
void save_tensors(const std::string& path, const TensorMap& tensors);

// Throws std::runtime_error naming the problem on bad magic, unsupported
// version or truncated data.
TensorMap load_tensors(const std::string& path);

// Human-readable JSON dump of the container for inspection.
std::string tensors_to_json(const TensorMap& tensors);

}  // namespace sdm
