#include "sdm/vae.hpp"

#include <cmath>
#include <stdexcept>

#include "sdm/random.hpp"

namespace sdm {

double adam_learning_rate(const AdamConfig& config, int t) {
  if (t < 1) throw std::invalid_argument("Adam step index starts at 1");
  const int drops = t / config.decay_every;
  return config.learning_rate * std::pow(config.decay, drops);
}

void adam_step(std::vector<Parameter>& parameters, const AdamConfig& config,
               int t) {
  const double lr = adam_learning_rate(config, t);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  for (Parameter& p : parameters) {
    if (!p.grad.allFinite())
      throw std::runtime_error("gradient for tensor '" + p.name +
                               "' is not finite at step " + std::to_string(t));
    p.adam_m = config.beta1 * p.adam_m + (1.0 - config.beta1) * p.grad;
    p.adam_v = config.beta2 * p.adam_v.array().matrix() +
               (1.0 - config.beta2) * p.grad.array().square().matrix();
    const Eigen::ArrayXXd m_hat = p.adam_m.array() / bc1;
    const Eigen::ArrayXXd v_hat = p.adam_v.array() / bc2;
    p.value.array() -= lr * m_hat / (v_hat.sqrt() + config.epsilon);
  }
}

namespace {

Parameter make_parameter(const std::string& name, int rows, int cols,
                         bool is_weight, RandomStream& rng) {
  Parameter p;
  p.name = name;
  p.value.setZero(rows, cols);
  if (is_weight) {
    // Uniform Glorot range keeps activations in scale at initialisation.
    const double bound = std::sqrt(6.0 / (rows + cols));
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) p.value(r, c) = rng.uniform(-bound, bound);
  }
  p.grad.setZero(rows, cols);
  p.adam_m.setZero(rows, cols);
  p.adam_v.setZero(rows, cols);
  p.is_weight_matrix = is_weight;
  return p;
}

double leaky(double x, double slope) { return x > 0.0 ? x : slope * x; }
double leaky_grad(double x, double slope) { return x > 0.0 ? 1.0 : slope; }

// KL divergence of N(mean, exp(logvar)) from N(0, 1), summed over entries.
double kl_sum(const Eigen::MatrixXd& mean, const Eigen::MatrixXd& logvar) {
  return 0.5 * (logvar.array().exp() + mean.array().square() - 1.0 -
                logvar.array())
                   .sum();
}

}  // namespace

// ---------------------------------------------------------------------------
// PartVae
// ---------------------------------------------------------------------------

namespace {

// Row v of the result is the mean of X over v's one-ring.
Eigen::MatrixXd ring_mean(const std::vector<std::vector<int>>& ring,
                          const Eigen::MatrixXd& x) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(x.rows(), x.cols());
  for (size_t v = 0; v < ring.size(); ++v) {
    for (int u : ring[v]) out.row(v) += x.row(u);
    if (!ring[v].empty()) out.row(v) /= static_cast<double>(ring[v].size());
  }
  return out;
}

// Adjoint of ring_mean: scatters row v of d back to v's neighbours.
Eigen::MatrixXd ring_mean_adjoint(const std::vector<std::vector<int>>& ring,
                                  const Eigen::MatrixXd& d) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(d.rows(), d.cols());
  for (size_t v = 0; v < ring.size(); ++v) {
    if (ring[v].empty()) continue;
    const double w = 1.0 / static_cast<double>(ring[v].size());
    for (int u : ring[v]) out.row(u) += w * d.row(v);
  }
  return out;
}

}  // namespace

PartVae::PartVae(const BoxTemplate& tmpl, int hidden_channels, int latent_size,
                 std::uint64_t seed) {
  shape_.grid_resolution = tmpl.grid_resolution;
  shape_.vertex_count = tmpl.mesh.vertex_count();
  shape_.hidden_channels = hidden_channels;
  shape_.latent_size = latent_size;
  ring_ = vertex_adjacency(tmpl.mesh);
  build_parameters(seed);
}

void PartVae::build_parameters(std::uint64_t seed) {
  RandomStream rng(derive_seed(seed, 0));
  const int c_in = shape_.in_channels;
  const int c_hidden = shape_.hidden_channels;
  const int latent = shape_.latent_size;
  const int flat = shape_.vertex_count * c_in;

  auto weight = [&](const std::string& name, int rows, int cols) {
    params_.push_back(make_parameter(name, rows, cols, true, rng));
  };
  auto bias = [&](const std::string& name, int rows) {
    params_.push_back(make_parameter(name, rows, 1, false, rng));
  };

  weight("enc.conv1.point", c_hidden, c_in);
  weight("enc.conv1.neigh", c_hidden, c_in);
  bias("enc.conv1.bias", c_hidden);
  weight("enc.conv2.point", c_in, c_hidden);
  weight("enc.conv2.neigh", c_in, c_hidden);
  bias("enc.conv2.bias", c_in);
  weight("enc.mean.weight", latent, flat);
  bias("enc.mean.bias", latent);
  weight("enc.logvar.weight", latent, flat);
  bias("enc.logvar.bias", latent);
  weight("dec.dense.weight", flat, latent);
  bias("dec.dense.bias", flat);
  weight("dec.conv1.point", c_hidden, c_in);
  weight("dec.conv1.neigh", c_hidden, c_in);
  bias("dec.conv1.bias", c_hidden);
  weight("dec.conv2.point", c_in, c_hidden);
  weight("dec.conv2.neigh", c_in, c_hidden);
  bias("dec.conv2.bias", c_in);
}

Parameter* PartVae::find(const std::string& name) {
  for (Parameter& p : params_)
    if (p.name == name) return &p;
  throw std::logic_error("unknown parameter " + name);
}

namespace {

// Everything the backward pass needs from one sample's forward pass.
struct PartVaeTrace {
  Eigen::MatrixXd x0, n0;    // input and its ring mean
  Eigen::MatrixXd y1, n1;    // first conv output (post tanh) and ring mean
  Eigen::VectorXd flat;      // flattened second conv output
  Eigen::VectorXd mean, logvar, noise, z;
  Eigen::MatrixXd h, nh;     // decoder dense output (as V x 9) and ring mean
  Eigen::MatrixXd y3, n3;    // decoder conv output (post tanh) and ring mean
  Eigen::MatrixXd xhat;
};

}  // namespace

void PartVae::encode(const Eigen::MatrixXd& features, Eigen::VectorXd* mean,
                     Eigen::VectorXd* logvar) const {
  if (features.rows() != shape_.vertex_count ||
      features.cols() != shape_.in_channels)
    throw std::invalid_argument(
        "feature matrix must be " + std::to_string(shape_.vertex_count) +
        " x " + std::to_string(shape_.in_channels));

  auto value = [&](const std::string& name) -> const Eigen::MatrixXd& {
    for (const Parameter& p : params_)
      if (p.name == name) return p.value;
    throw std::logic_error("unknown parameter " + name);
  };

  const Eigen::MatrixXd n0 = ring_mean(ring_, features);
  Eigen::MatrixXd z1 = features * value("enc.conv1.point").transpose() +
                       n0 * value("enc.conv1.neigh").transpose();
  z1.rowwise() += value("enc.conv1.bias").col(0).transpose();
  const Eigen::MatrixXd y1 = z1.array().tanh();

  const Eigen::MatrixXd n1 = ring_mean(ring_, y1);
  Eigen::MatrixXd z2 = y1 * value("enc.conv2.point").transpose() +
                       n1 * value("enc.conv2.neigh").transpose();
  z2.rowwise() += value("enc.conv2.bias").col(0).transpose();

  Eigen::VectorXd flat(shape_.vertex_count * shape_.in_channels);
  for (int v = 0; v < shape_.vertex_count; ++v)
    flat.segment(v * shape_.in_channels, shape_.in_channels) =
        z2.row(v).transpose();

  if (mean)
    *mean = value("enc.mean.weight") * flat + value("enc.mean.bias").col(0);
  if (logvar)
    *logvar =
        value("enc.logvar.weight") * flat + value("enc.logvar.bias").col(0);
}

Eigen::VectorXd PartVae::encode_mean(const Eigen::MatrixXd& features) const {
  Eigen::VectorXd mean;
  encode(features, &mean, nullptr);
  return mean;
}

Eigen::MatrixXd PartVae::decode(const Eigen::VectorXd& latent) const {
  if (latent.size() != shape_.latent_size)
    throw std::invalid_argument("latent must have " +
                                std::to_string(shape_.latent_size) +
                                " entries");
  auto value = [&](const std::string& name) -> const Eigen::MatrixXd& {
    for (const Parameter& p : params_)
      if (p.name == name) return p.value;
    throw std::logic_error("unknown parameter " + name);
  };

  const Eigen::VectorXd flat =
      value("dec.dense.weight") * latent + value("dec.dense.bias").col(0);
  Eigen::MatrixXd h(shape_.vertex_count, shape_.in_channels);
  for (int v = 0; v < shape_.vertex_count; ++v)
    h.row(v) = flat.segment(v * shape_.in_channels, shape_.in_channels)
                   .transpose();

  const Eigen::MatrixXd nh = ring_mean(ring_, h);
  Eigen::MatrixXd z3 = h * value("dec.conv1.point").transpose() +
                       nh * value("dec.conv1.neigh").transpose();
  z3.rowwise() += value("dec.conv1.bias").col(0).transpose();
  const Eigen::MatrixXd y3 = z3.array().tanh();

  const Eigen::MatrixXd n3 = ring_mean(ring_, y3);
  Eigen::MatrixXd xhat = y3 * value("dec.conv2.point").transpose() +
                         n3 * value("dec.conv2.neigh").transpose();
  xhat.rowwise() += value("dec.conv2.bias").col(0).transpose();
  return xhat;
}

LossBreakdown PartVae::compute_loss_and_gradients(
    const std::vector<Eigen::MatrixXd>& batch, const Eigen::MatrixXd& noise,
    const VaeLossConfig& loss) {
  const int b = static_cast<int>(batch.size());
  if (b == 0) throw std::invalid_argument("batch must not be empty");
  if (noise.rows() != shape_.latent_size || noise.cols() != b)
    throw std::invalid_argument("noise must be latent_size x batch");

  Parameter& enc_c1p = *find("enc.conv1.point");
  Parameter& enc_c1n = *find("enc.conv1.neigh");
  Parameter& enc_c1b = *find("enc.conv1.bias");
  Parameter& enc_c2p = *find("enc.conv2.point");
  Parameter& enc_c2n = *find("enc.conv2.neigh");
  Parameter& enc_c2b = *find("enc.conv2.bias");
  Parameter& enc_mw = *find("enc.mean.weight");
  Parameter& enc_mb = *find("enc.mean.bias");
  Parameter& enc_lw = *find("enc.logvar.weight");
  Parameter& enc_lb = *find("enc.logvar.bias");
  Parameter& dec_dw = *find("dec.dense.weight");
  Parameter& dec_db = *find("dec.dense.bias");
  Parameter& dec_c1p = *find("dec.conv1.point");
  Parameter& dec_c1n = *find("dec.conv1.neigh");
  Parameter& dec_c1b = *find("dec.conv1.bias");
  Parameter& dec_c2p = *find("dec.conv2.point");
  Parameter& dec_c2n = *find("dec.conv2.neigh");
  Parameter& dec_c2b = *find("dec.conv2.bias");

  LossBreakdown result;
  for (Parameter& p : params_) {
    p.grad.setZero();
    if (p.is_weight_matrix) {
      result.reg += p.value.squaredNorm();
      p.grad += 2.0 * loss.reg_weight * p.value;
    }
  }
  result.reg *= loss.reg_weight;

  const int v_count = shape_.vertex_count;
  const int c_in = shape_.in_channels;
  const double inv_b = 1.0 / b;

  for (int s = 0; s < b; ++s) {
    const Eigen::MatrixXd& x0 = batch[s];
    if (x0.rows() != v_count || x0.cols() != c_in)
      throw std::invalid_argument("batch sample " + std::to_string(s) +
                                  " has the wrong shape");

    // Forward.
    PartVaeTrace t;
    t.x0 = x0;
    t.n0 = ring_mean(ring_, x0);
    Eigen::MatrixXd z1 = x0 * enc_c1p.value.transpose() +
                         t.n0 * enc_c1n.value.transpose();
    z1.rowwise() += enc_c1b.value.col(0).transpose();
    t.y1 = z1.array().tanh();
    t.n1 = ring_mean(ring_, t.y1);
    Eigen::MatrixXd z2 = t.y1 * enc_c2p.value.transpose() +
                         t.n1 * enc_c2n.value.transpose();
    z2.rowwise() += enc_c2b.value.col(0).transpose();
    t.flat.resize(v_count * c_in);
    for (int v = 0; v < v_count; ++v)
      t.flat.segment(v * c_in, c_in) = z2.row(v).transpose();

    t.mean = enc_mw.value * t.flat + enc_mb.value.col(0);
    t.logvar = enc_lw.value * t.flat + enc_lb.value.col(0);
    t.noise = noise.col(s);
    t.z = t.mean +
          (0.5 * t.logvar.array()).exp().matrix().cwiseProduct(t.noise);

    const Eigen::VectorXd dec_flat = dec_dw.value * t.z + dec_db.value.col(0);
    t.h.resize(v_count, c_in);
    for (int v = 0; v < v_count; ++v)
      t.h.row(v) = dec_flat.segment(v * c_in, c_in).transpose();
    t.nh = ring_mean(ring_, t.h);
    Eigen::MatrixXd z3 = t.h * dec_c1p.value.transpose() +
                         t.nh * dec_c1n.value.transpose();
    z3.rowwise() += dec_c1b.value.col(0).transpose();
    t.y3 = z3.array().tanh();
    t.n3 = ring_mean(ring_, t.y3);
    t.xhat = t.y3 * dec_c2p.value.transpose() +
             t.n3 * dec_c2n.value.transpose();
    t.xhat.rowwise() += dec_c2b.value.col(0).transpose();

    result.recon += (x0 - t.xhat).squaredNorm() * inv_b;
    result.kl += kl_sum(t.mean, t.logvar) * inv_b;

    // Backward.
    const Eigen::MatrixXd d_xhat =
        2.0 * loss.lambda_recon * inv_b * (t.xhat - x0);
    dec_c2p.grad += d_xhat.transpose() * t.y3;
    dec_c2n.grad += d_xhat.transpose() * t.n3;
    dec_c2b.grad.col(0) += d_xhat.colwise().sum().transpose();
    Eigen::MatrixXd d_y3 = d_xhat * dec_c2p.value +
                           ring_mean_adjoint(ring_, d_xhat) * dec_c2n.value;
    const Eigen::MatrixXd d_z3 =
        d_y3.cwiseProduct((1.0 - t.y3.array().square()).matrix());
    dec_c1p.grad += d_z3.transpose() * t.h;
    dec_c1n.grad += d_z3.transpose() * t.nh;
    dec_c1b.grad.col(0) += d_z3.colwise().sum().transpose();
    const Eigen::MatrixXd d_h = d_z3 * dec_c1p.value +
                                ring_mean_adjoint(ring_, d_z3) * dec_c1n.value;

    Eigen::VectorXd d_dec_flat(v_count * c_in);
    for (int v = 0; v < v_count; ++v)
      d_dec_flat.segment(v * c_in, c_in) = d_h.row(v).transpose();
    dec_dw.grad += d_dec_flat * t.z.transpose();
    dec_db.grad.col(0) += d_dec_flat;
    const Eigen::VectorXd d_z = dec_dw.value.transpose() * d_dec_flat;

    const Eigen::VectorXd sigma = (0.5 * t.logvar.array()).exp();
    Eigen::VectorXd d_mean = d_z;
    Eigen::VectorXd d_logvar =
        0.5 * d_z.cwiseProduct(t.noise).cwiseProduct(sigma);
    d_mean += loss.lambda_kl * inv_b * t.mean;
    d_logvar.array() +=
        loss.lambda_kl * inv_b * 0.5 * (t.logvar.array().exp() - 1.0);

    enc_mw.grad += d_mean * t.flat.transpose();
    enc_mb.grad.col(0) += d_mean;
    enc_lw.grad += d_logvar * t.flat.transpose();
    enc_lb.grad.col(0) += d_logvar;
    const Eigen::VectorXd d_flat = enc_mw.value.transpose() * d_mean +
                                   enc_lw.value.transpose() * d_logvar;

    Eigen::MatrixXd d_z2(v_count, c_in);
    for (int v = 0; v < v_count; ++v)
      d_z2.row(v) = d_flat.segment(v * c_in, c_in).transpose();
    enc_c2p.grad += d_z2.transpose() * t.y1;
    enc_c2n.grad += d_z2.transpose() * t.n1;
    enc_c2b.grad.col(0) += d_z2.colwise().sum().transpose();
    const Eigen::MatrixXd d_y1 = d_z2 * enc_c2p.value +
                                 ring_mean_adjoint(ring_, d_z2) * enc_c2n.value;
    const Eigen::MatrixXd d_z1 =
        d_y1.cwiseProduct((1.0 - t.y1.array().square()).matrix());
    enc_c1p.grad += d_z1.transpose() * t.x0;
    enc_c1n.grad += d_z1.transpose() * t.n0;
    enc_c1b.grad.col(0) += d_z1.colwise().sum().transpose();
  }

  result.total = loss.lambda_recon * result.recon +
                 loss.lambda_kl * result.kl + result.reg;
  return result;
}

LossBreakdown PartVae::evaluate(const std::vector<Eigen::MatrixXd>& dataset,
                                const VaeLossConfig& loss) {
  if (dataset.empty())
    throw std::invalid_argument("evaluation set must not be empty");

  LossBreakdown result;
  for (const Parameter& p : params_)
    if (p.is_weight_matrix) result.reg += p.value.squaredNorm();
  result.reg *= loss.reg_weight;

  const double inv_n = 1.0 / dataset.size();
  for (const Eigen::MatrixXd& x : dataset) {
    Eigen::VectorXd mean, logvar;
    encode(x, &mean, &logvar);
    const Eigen::MatrixXd xhat = decode(mean);  // noise-free latent
    result.recon += (x - xhat).squaredNorm() * inv_n;
    result.kl += kl_sum(mean, logvar) * inv_n;
  }
  result.total =
      loss.lambda_recon * result.recon + loss.lambda_kl * result.kl +
      result.reg;
  return result;
}

std::vector<LossRecord> PartVae::train(
    const std::vector<Eigen::MatrixXd>& dataset, const TrainConfig& config) {
  if (dataset.empty())
    throw std::invalid_argument("training set must not be empty");
  if (config.batch_size < 1 || config.iterations < 1)
    throw std::invalid_argument("batch size and iterations must be positive");

  RandomStream rng(derive_seed(config.seed, 1));
  std::vector<LossRecord> records;
  for (int t = 1; t <= config.iterations; ++t) {
    std::vector<Eigen::MatrixXd> batch;
    batch.reserve(config.batch_size);
    for (int s = 0; s < config.batch_size; ++s)
      batch.push_back(dataset[rng.uniform_index(dataset.size())]);
    Eigen::MatrixXd noise(shape_.latent_size, config.batch_size);
    for (int c = 0; c < noise.cols(); ++c)
      for (int r = 0; r < noise.rows(); ++r) noise(r, c) = rng.normal();

    const LossBreakdown loss =
        compute_loss_and_gradients(batch, noise, config.loss);
    adam_step(params_, config.adam, t);
    if (t == 1 || t == config.iterations || t % config.record_every == 0)
      records.push_back({t, loss});
  }
  return records;
}

TensorMap PartVae::to_tensors() const {
  TensorMap tensors;
  for (const Parameter& p : params_)
    tensors[p.name] = p.is_weight_matrix
                          ? tensor_from_matrix(p.value)
                          : tensor_from_vector(p.value.col(0));
  Eigen::VectorXd meta(5);
  meta << shape_.grid_resolution, shape_.vertex_count, shape_.in_channels,
      shape_.hidden_channels, shape_.latent_size;
  tensors["meta.part_vae"] = tensor_from_vector(meta);
  return tensors;
}

PartVae PartVae::from_tensors(const TensorMap& tensors) {
  const auto meta_it = tensors.find("meta.part_vae");
  if (meta_it == tensors.end())
    throw std::runtime_error("tensor file has no meta.part_vae entry");
  const Eigen::VectorXd meta = vector_from_tensor(meta_it->second);
  if (meta.size() != 5)
    throw std::runtime_error("meta.part_vae must have 5 entries");

  const int grid = static_cast<int>(meta[0]);
  const BoxTemplate tmpl = make_box_template(grid);
  PartVae vae(tmpl, static_cast<int>(meta[3]), static_cast<int>(meta[4]),
              /*seed=*/0);
  if (vae.shape_.vertex_count != static_cast<int>(meta[1]) ||
      vae.shape_.in_channels != static_cast<int>(meta[2]))
    throw std::runtime_error("meta.part_vae is inconsistent with grid " +
                             std::to_string(grid));

  for (Parameter& p : vae.params_) {
    const auto it = tensors.find(p.name);
    if (it == tensors.end())
      throw std::runtime_error("tensor file is missing '" + p.name + "'");
    const Eigen::MatrixXd value = p.is_weight_matrix
                                      ? matrix_from_tensor(it->second)
                                      : vector_from_tensor(it->second);
    if (value.rows() != p.value.rows() || value.cols() != p.value.cols())
      throw std::runtime_error("tensor '" + p.name + "' has shape " +
                               std::to_string(value.rows()) + " x " +
                               std::to_string(value.cols()) + ", expected " +
                               std::to_string(p.value.rows()) + " x " +
                               std::to_string(p.value.cols()));
    p.value = value;
  }
  return vae;
}

// ---------------------------------------------------------------------------
// SpVae
// ---------------------------------------------------------------------------

SpVae::SpVae(const Shape& shape, std::uint64_t seed) : shape_(shape) {
  if (shape_.input_size < 1)
    throw std::invalid_argument("input size must be positive");
  if (shape_.hidden.empty())
    throw std::invalid_argument("need at least one hidden layer");
  build_parameters(seed);
}

void SpVae::build_parameters(std::uint64_t seed) {
  RandomStream rng(derive_seed(seed, 0));
  auto weight = [&](const std::string& name, int rows, int cols) {
    params_.push_back(make_parameter(name, rows, cols, true, rng));
  };
  auto bias = [&](const std::string& name, int rows) {
    params_.push_back(make_parameter(name, rows, 1, false, rng));
  };

  int in = shape_.input_size;
  for (size_t l = 0; l < shape_.hidden.size(); ++l) {
    weight("enc." + std::to_string(l) + ".weight", shape_.hidden[l], in);
    bias("enc." + std::to_string(l) + ".bias", shape_.hidden[l]);
    in = shape_.hidden[l];
  }
  weight("enc.mean.weight", shape_.latent_size, in);
  bias("enc.mean.bias", shape_.latent_size);
  weight("enc.logvar.weight", shape_.latent_size, in);
  bias("enc.logvar.bias", shape_.latent_size);

  in = shape_.latent_size;
  for (size_t l = 0; l < shape_.hidden.size(); ++l) {
    const int out = shape_.hidden[shape_.hidden.size() - 1 - l];
    weight("dec." + std::to_string(l) + ".weight", out, in);
    bias("dec." + std::to_string(l) + ".bias", out);
    in = out;
  }
  weight("dec.out.weight", shape_.input_size, in);
  bias("dec.out.bias", shape_.input_size);
}

Parameter* SpVae::find(const std::string& name) {
  for (Parameter& p : params_)
    if (p.name == name) return &p;
  throw std::logic_error("unknown parameter " + name);
}

void SpVae::encode(const Eigen::VectorXd& input, Eigen::VectorXd* mean,
                   Eigen::VectorXd* logvar) const {
  if (input.size() != shape_.input_size)
    throw std::invalid_argument("input must have " +
                                std::to_string(shape_.input_size) +
                                " entries");
  auto value = [&](const std::string& name) -> const Eigen::MatrixXd& {
    for (const Parameter& p : params_)
      if (p.name == name) return p.value;
    throw std::logic_error("unknown parameter " + name);
  };

  Eigen::VectorXd h = input;
  for (size_t l = 0; l < shape_.hidden.size(); ++l) {
    h = value("enc." + std::to_string(l) + ".weight") * h +
        value("enc." + std::to_string(l) + ".bias").col(0);
    for (Eigen::Index i = 0; i < h.size(); ++i)
      h[i] = leaky(h[i], shape_.leaky_slope);
  }
  if (mean) *mean = value("enc.mean.weight") * h + value("enc.mean.bias").col(0);
  if (logvar)
    *logvar = value("enc.logvar.weight") * h + value("enc.logvar.bias").col(0);
}

Eigen::VectorXd SpVae::decode(const Eigen::VectorXd& latent) const {
  if (latent.size() != shape_.latent_size)
    throw std::invalid_argument("latent must have " +
                                std::to_string(shape_.latent_size) +
                                " entries");
  auto value = [&](const std::string& name) -> const Eigen::MatrixXd& {
    for (const Parameter& p : params_)
      if (p.name == name) return p.value;
    throw std::logic_error("unknown parameter " + name);
  };

  Eigen::VectorXd h = latent;
  for (size_t l = 0; l < shape_.hidden.size(); ++l) {
    h = value("dec." + std::to_string(l) + ".weight") * h +
        value("dec." + std::to_string(l) + ".bias").col(0);
    for (Eigen::Index i = 0; i < h.size(); ++i)
      h[i] = leaky(h[i], shape_.leaky_slope);
  }
  return value("dec.out.weight") * h + value("dec.out.bias").col(0);
}

LossBreakdown SpVae::compute_loss_and_gradients(const Eigen::MatrixXd& batch,
                                                const Eigen::MatrixXd& noise,
                                                const VaeLossConfig& loss) {
  const int b = static_cast<int>(batch.cols());
  if (b == 0) throw std::invalid_argument("batch must not be empty");
  if (batch.rows() != shape_.input_size)
    throw std::invalid_argument("batch rows must equal the input size");
  if (noise.rows() != shape_.latent_size || noise.cols() != b)
    throw std::invalid_argument("noise must be latent_size x batch");

  LossBreakdown result;
  for (Parameter& p : params_) {
    p.grad.setZero();
    if (p.is_weight_matrix) {
      result.reg += p.value.squaredNorm();
      p.grad += 2.0 * loss.reg_weight * p.value;
    }
  }
  result.reg *= loss.reg_weight;

  const size_t depth = shape_.hidden.size();
  const double inv_b = 1.0 / b;
  const double slope = shape_.leaky_slope;

  auto apply_leaky = [&](Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i)
      m.data()[i] = leaky(m.data()[i], slope);
  };

  // Forward, keeping pre-activations for the backward pass.
  std::vector<Eigen::MatrixXd> enc_pre(depth), enc_post(depth);
  Eigen::MatrixXd h = batch;
  for (size_t l = 0; l < depth; ++l) {
    Parameter& w = *find("enc." + std::to_string(l) + ".weight");
    Parameter& bb = *find("enc." + std::to_string(l) + ".bias");
    enc_pre[l] = w.value * h;
    enc_pre[l].colwise() += bb.value.col(0);
    enc_post[l] = enc_pre[l];
    apply_leaky(enc_post[l]);
    h = enc_post[l];
  }
  Parameter& enc_mw = *find("enc.mean.weight");
  Parameter& enc_mb = *find("enc.mean.bias");
  Parameter& enc_lw = *find("enc.logvar.weight");
  Parameter& enc_lb = *find("enc.logvar.bias");
  Eigen::MatrixXd mean = enc_mw.value * h;
  mean.colwise() += enc_mb.value.col(0);
  Eigen::MatrixXd logvar = enc_lw.value * h;
  logvar.colwise() += enc_lb.value.col(0);
  const Eigen::MatrixXd sigma = (0.5 * logvar.array()).exp();
  const Eigen::MatrixXd z = mean + sigma.cwiseProduct(noise);

  std::vector<Eigen::MatrixXd> dec_pre(depth), dec_post(depth);
  Eigen::MatrixXd d = z;
  for (size_t l = 0; l < depth; ++l) {
    Parameter& w = *find("dec." + std::to_string(l) + ".weight");
    Parameter& bb = *find("dec." + std::to_string(l) + ".bias");
    dec_pre[l] = w.value * d;
    dec_pre[l].colwise() += bb.value.col(0);
    dec_post[l] = dec_pre[l];
    apply_leaky(dec_post[l]);
    d = dec_post[l];
  }
  Parameter& dec_ow = *find("dec.out.weight");
  Parameter& dec_ob = *find("dec.out.bias");
  Eigen::MatrixXd xhat = dec_ow.value * d;
  xhat.colwise() += dec_ob.value.col(0);

  result.recon = (batch - xhat).squaredNorm() * inv_b;
  result.kl = kl_sum(mean, logvar) * inv_b;

  // Backward.
  Eigen::MatrixXd d_xhat = 2.0 * loss.lambda_recon * inv_b * (xhat - batch);
  dec_ow.grad += d_xhat * d.transpose();
  dec_ob.grad.col(0) += d_xhat.rowwise().sum();
  Eigen::MatrixXd d_h = dec_ow.value.transpose() * d_xhat;
  for (size_t l = depth; l-- > 0;) {
    Eigen::MatrixXd d_pre = d_h;
    for (Eigen::Index i = 0; i < d_pre.size(); ++i)
      d_pre.data()[i] *= leaky_grad(dec_pre[l].data()[i], slope);
    Parameter& w = *find("dec." + std::to_string(l) + ".weight");
    Parameter& bb = *find("dec." + std::to_string(l) + ".bias");
    const Eigen::MatrixXd& in = l == 0 ? z : dec_post[l - 1];
    w.grad += d_pre * in.transpose();
    bb.grad.col(0) += d_pre.rowwise().sum();
    d_h = w.value.transpose() * d_pre;
  }
  const Eigen::MatrixXd d_z = d_h;

  Eigen::MatrixXd d_mean = d_z + loss.lambda_kl * inv_b * mean;
  Eigen::MatrixXd d_logvar =
      0.5 * d_z.cwiseProduct(noise).cwiseProduct(sigma) +
      (loss.lambda_kl * inv_b * 0.5) *
          (logvar.array().exp() - 1.0).matrix();

  const Eigen::MatrixXd& enc_top = depth == 0 ? batch : enc_post[depth - 1];
  enc_mw.grad += d_mean * enc_top.transpose();
  enc_mb.grad.col(0) += d_mean.rowwise().sum();
  enc_lw.grad += d_logvar * enc_top.transpose();
  enc_lb.grad.col(0) += d_logvar.rowwise().sum();
  d_h = enc_mw.value.transpose() * d_mean + enc_lw.value.transpose() * d_logvar;
  for (size_t l = depth; l-- > 0;) {
    Eigen::MatrixXd d_pre = d_h;
    for (Eigen::Index i = 0; i < d_pre.size(); ++i)
      d_pre.data()[i] *= leaky_grad(enc_pre[l].data()[i], slope);
    Parameter& w = *find("enc." + std::to_string(l) + ".weight");
    Parameter& bb = *find("enc." + std::to_string(l) + ".bias");
    const Eigen::MatrixXd& in = l == 0 ? batch : enc_post[l - 1];
    w.grad += d_pre * in.transpose();
    bb.grad.col(0) += d_pre.rowwise().sum();
    d_h = w.value.transpose() * d_pre;
  }

  result.total = loss.lambda_recon * result.recon +
                 loss.lambda_kl * result.kl + result.reg;
  return result;
}

LossBreakdown SpVae::evaluate(const Eigen::MatrixXd& dataset,
                              const VaeLossConfig& loss) {
  if (dataset.cols() == 0)
    throw std::invalid_argument("evaluation set must not be empty");
  if (dataset.rows() != shape_.input_size)
    throw std::invalid_argument("dataset rows must equal the input size");

  LossBreakdown result;
  for (const Parameter& p : params_)
    if (p.is_weight_matrix) result.reg += p.value.squaredNorm();
  result.reg *= loss.reg_weight;

  const double inv_n = 1.0 / dataset.cols();
  for (Eigen::Index s = 0; s < dataset.cols(); ++s) {
    Eigen::VectorXd mean, logvar;
    encode(dataset.col(s), &mean, &logvar);
    const Eigen::VectorXd xhat = decode(mean);
    result.recon += (dataset.col(s) - xhat).squaredNorm() * inv_n;
    result.kl += kl_sum(mean, logvar) * inv_n;
  }
  result.total = loss.lambda_recon * result.recon +
                 loss.lambda_kl * result.kl + result.reg;
  return result;
}

std::vector<LossRecord> SpVae::train(const Eigen::MatrixXd& dataset,
                                     const TrainConfig& config) {
  if (dataset.cols() == 0)
    throw std::invalid_argument("training set must not be empty");
  if (dataset.rows() != shape_.input_size)
    throw std::invalid_argument("dataset rows must equal the input size");
  if (config.batch_size < 1 || config.iterations < 1)
    throw std::invalid_argument("batch size and iterations must be positive");

  RandomStream rng(derive_seed(config.seed, 1));
  std::vector<LossRecord> records;
  for (int t = 1; t <= config.iterations; ++t) {
    Eigen::MatrixXd batch(shape_.input_size, config.batch_size);
    for (int s = 0; s < config.batch_size; ++s)
      batch.col(s) = dataset.col(
          static_cast<Eigen::Index>(rng.uniform_index(dataset.cols())));
    Eigen::MatrixXd noise(shape_.latent_size, config.batch_size);
    for (int c = 0; c < noise.cols(); ++c)
      for (int r = 0; r < noise.rows(); ++r) noise(r, c) = rng.normal();

    const LossBreakdown loss =
        compute_loss_and_gradients(batch, noise, config.loss);
    adam_step(params_, config.adam, t);
    if (t == 1 || t == config.iterations || t % config.record_every == 0)
      records.push_back({t, loss});
  }
  return records;
}

TensorMap SpVae::to_tensors() const {
  TensorMap tensors;
  for (const Parameter& p : params_)
    tensors[p.name] = p.is_weight_matrix
                          ? tensor_from_matrix(p.value)
                          : tensor_from_vector(p.value.col(0));
  Eigen::VectorXd meta(3 + shape_.hidden.size());
  meta[0] = shape_.input_size;
  meta[1] = shape_.latent_size;
  meta[2] = shape_.leaky_slope;
  for (size_t l = 0; l < shape_.hidden.size(); ++l)
    meta[3 + l] = shape_.hidden[l];
  tensors["meta.sp_vae"] = tensor_from_vector(meta);
  return tensors;
}

SpVae SpVae::from_tensors(const TensorMap& tensors) {
  const auto meta_it = tensors.find("meta.sp_vae");
  if (meta_it == tensors.end())
    throw std::runtime_error("tensor file has no meta.sp_vae entry");
  const Eigen::VectorXd meta = vector_from_tensor(meta_it->second);
  if (meta.size() < 4)
    throw std::runtime_error("meta.sp_vae must list input, latent, slope and "
                             "at least one hidden width");

  Shape shape;
  shape.input_size = static_cast<int>(meta[0]);
  shape.latent_size = static_cast<int>(meta[1]);
  shape.leaky_slope = meta[2];
  shape.hidden.clear();
  for (Eigen::Index i = 3; i < meta.size(); ++i)
    shape.hidden.push_back(static_cast<int>(meta[i]));

  SpVae vae(shape, /*seed=*/0);
  for (Parameter& p : vae.params_) {
    const auto it = tensors.find(p.name);
    if (it == tensors.end())
      throw std::runtime_error("tensor file is missing '" + p.name + "'");
    const Eigen::MatrixXd value = p.is_weight_matrix
                                      ? matrix_from_tensor(it->second)
                                      : vector_from_tensor(it->second);
    if (value.rows() != p.value.rows() || value.cols() != p.value.cols())
      throw std::runtime_error("tensor '" + p.name + "' has shape " +
                               std::to_string(value.rows()) + " x " +
                               std::to_string(value.cols()) + ", expected " +
                               std::to_string(p.value.rows()) + " x " +
                               std::to_string(p.value.cols()));
    p.value = value;
  }
  return vae;
}

}  // namespace sdm
