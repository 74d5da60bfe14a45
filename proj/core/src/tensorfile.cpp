#include "sdm/tensorfile.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace sdm {

namespace {

constexpr char kMagic[4] = {'S', 'D', 'M', 'W'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  put_u64(out, bits);
}

class Reader {
 public:
  Reader(std::string bytes, std::string path)
      : bytes_(std::move(bytes)), path_(std::move(path)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(
               static_cast<unsigned char>(bytes_[at_ + i]))
           << (8 * i);
    at_ += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(
               static_cast<unsigned char>(bytes_[at_ + i]))
           << (8 * i);
    at_ += 8;
    return v;
  }

  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }

  std::string str(std::uint32_t len) {
    need(len);
    std::string s = bytes_.substr(at_, len);
    at_ += len;
    return s;
  }

  void need(std::uint64_t n) const {
    if (at_ + n > bytes_.size())
      throw std::runtime_error(path_ + ": truncated tensor file (need " +
                               std::to_string(n) + " bytes at offset " +
                               std::to_string(at_) + ", have " +
                               std::to_string(bytes_.size() - at_) + ")");
  }

 private:
  std::string bytes_;
  std::string path_;
  std::size_t at_ = 0;
};

}  // namespace

NamedTensor tensor_from_matrix(const Eigen::MatrixXd& m) {
  NamedTensor t;
  t.dims = {static_cast<std::uint64_t>(m.rows()),
            static_cast<std::uint64_t>(m.cols())};
  t.data.resize(m.size());
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      t.data[r * m.cols() + c] = m(r, c);
  return t;
}

NamedTensor tensor_from_vector(const Eigen::VectorXd& v) {
  NamedTensor t;
  t.dims = {static_cast<std::uint64_t>(v.size())};
  t.data.assign(v.data(), v.data() + v.size());
  return t;
}

Eigen::MatrixXd matrix_from_tensor(const NamedTensor& t) {
  if (t.dims.size() != 2)
    throw std::runtime_error("tensor has rank " +
                             std::to_string(t.dims.size()) + ", expected 2");
  Eigen::MatrixXd m(t.dims[0], t.dims[1]);
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      m(r, c) = t.data[r * m.cols() + c];
  return m;
}

Eigen::VectorXd vector_from_tensor(const NamedTensor& t) {
  if (t.dims.size() != 1)
    throw std::runtime_error("tensor has rank " +
                             std::to_string(t.dims.size()) + ", expected 1");
  return Eigen::Map<const Eigen::VectorXd>(t.data.data(), t.data.size());
}

void save_tensors(const std::string& path, const TensorMap& tensors) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, tensor] : tensors) {
    if (tensor.data.size() != tensor.element_count())
      throw std::runtime_error("tensor '" + name + "' holds " +
                               std::to_string(tensor.data.size()) +
                               " values but its dims imply " +
                               std::to_string(tensor.element_count()));
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    put_u32(out, static_cast<std::uint32_t>(tensor.dims.size()));
    for (std::uint64_t d : tensor.dims) put_u64(out, d);
    for (double v : tensor.data) put_f64(out, v);
  }

  std::ofstream file(path, std::ios::binary);
  if (!file) throw std::runtime_error("cannot write " + path);
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw std::runtime_error("failed writing " + path);
}

TensorMap load_tensors(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw std::runtime_error("cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(file)),
                    std::istreambuf_iterator<char>());
  Reader reader(std::move(bytes), path);

  const std::string magic = reader.str(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0)
    throw std::runtime_error(path + ": bad magic, not a tensor file");
  const std::uint32_t version = reader.u32();
  if (version != kVersion)
    throw std::runtime_error(path + ": unsupported version " +
                             std::to_string(version));

  TensorMap tensors;
  const std::uint32_t count = reader.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = reader.u32();
    const std::string name = reader.str(name_len);
    NamedTensor tensor;
    const std::uint32_t rank = reader.u32();
    tensor.dims.resize(rank);
    for (std::uint32_t d = 0; d < rank; ++d) tensor.dims[d] = reader.u64();
    const std::uint64_t n = tensor.element_count();
    reader.need(n * 8);
    tensor.data.resize(n);
    for (std::uint64_t e = 0; e < n; ++e) tensor.data[e] = reader.f64();
    if (!tensors.emplace(name, std::move(tensor)).second)
      throw std::runtime_error(path + ": duplicate tensor '" + name + "'");
  }
  return tensors;
}

std::string tensors_to_json(const TensorMap& tensors) {
  nlohmann::json doc;
  doc["format"] = "SDMW";
  doc["version"] = kVersion;
  nlohmann::json table = nlohmann::json::object();
  for (const auto& [name, tensor] : tensors) {
    table[name] = {{"dims", tensor.dims}, {"data", tensor.data}};
  }
  doc["tensors"] = table;
  return doc.dump(2);
}

}  // namespace sdm
