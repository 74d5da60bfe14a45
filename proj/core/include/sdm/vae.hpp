#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "sdm/mesh.hpp"
#include "sdm/tensorfile.hpp"

namespace sdm {

// One learnable tensor with its gradient and Adam state.  Vectors (biases)
// are stored as n x 1 matrices.
struct Parameter {
  std::string name;
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;
  Eigen::MatrixXd adam_m;
  Eigen::MatrixXd adam_v;
  bool is_weight_matrix = true;  // only weight matrices are L2-regularised
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double decay = 0.8;      // multiplied in every decay_every steps
  int decay_every = 1000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Stepped learning rate: learning_rate * decay^floor(t / decay_every) with
// t counting from 1.
double adam_learning_rate(const AdamConfig& config, int t);

// One bias-corrected Adam update over all parameters.  Throws
// std::runtime_error naming the offending tensor if any gradient entry is
// not finite.
void adam_step(std::vector<Parameter>& parameters, const AdamConfig& config,
               int t);

struct VaeLossConfig {
  double lambda_recon = 1.0;
  double lambda_kl = 0.5;
  double reg_weight = 1e-5;
};

// total = lambda_recon * recon + lambda_kl * kl + reg.
struct LossBreakdown {
  double total = 0.0;
  double recon = 0.0;  // batch mean of the squared reconstruction error
  double kl = 0.0;     // batch mean of 0.5 * sum(exp(lv) + m^2 - 1 - lv)
  double reg = 0.0;    // reg_weight * sum of squared weight-matrix entries
};

struct LossRecord {
  int iteration = 0;
  LossBreakdown loss;
};

struct TrainConfig {
  int iterations = 2000;
  int batch_size = 32;
  AdamConfig adam;
  VaeLossConfig loss;
  std::uint64_t seed = 0;
  int record_every = 100;
};

// Geometry autoencoder over per-vertex deformation features.  The encoder is
// two graph convolutions (per vertex: a point weight on its own feature plus
// a neighbour weight on the one-ring mean) followed by dense mean/log-variance
// heads; the decoder mirrors it with untied weights.
class PartVae {
 public:
  struct Shape {
    int grid_resolution = 0;  // box template resolution the net was built for
    int vertex_count = 0;
    int in_channels = 9;
    int hidden_channels = 32;
    int latent_size = 64;
  };

  PartVae(const BoxTemplate& tmpl, int hidden_channels, int latent_size,
          std::uint64_t seed);

  const Shape& shape() const { return shape_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }

  // Deterministic encoder moments for one feature matrix (V x 9).
  void encode(const Eigen::MatrixXd& features, Eigen::VectorXd* mean,
              Eigen::VectorXd* logvar) const;
  Eigen::VectorXd encode_mean(const Eigen::MatrixXd& features) const;
  Eigen::MatrixXd decode(const Eigen::VectorXd& latent) const;

  // Forward and backward over a batch with injected reparameterisation noise
  // (latent_size x batch); gradients are written into parameters().  Exposed
  // so tests can check gradients against finite differences.
  LossBreakdown compute_loss_and_gradients(
      const std::vector<Eigen::MatrixXd>& batch, const Eigen::MatrixXd& noise,
      const VaeLossConfig& loss);

  // Loss over a dataset with noise-free latents (z = mean).
  LossBreakdown evaluate(const std::vector<Eigen::MatrixXd>& dataset,
                         const VaeLossConfig& loss);

  std::vector<LossRecord> train(const std::vector<Eigen::MatrixXd>& dataset,
                                const TrainConfig& config);

  TensorMap to_tensors() const;
  static PartVae from_tensors(const TensorMap& tensors);

 private:
  PartVae() = default;
  void build_parameters(std::uint64_t seed);
  Parameter* find(const std::string& name);

  Shape shape_;
  std::vector<std::vector<int>> ring_;
  std::vector<Parameter> params_;
};

// Structure autoencoder over the concatenated part vectors of a shape.
// Fully connected with leaky-ReLU hidden layers, mirrored untied decoder.
class SpVae {
 public:
  struct Shape {
    int input_size = 0;
    std::vector<int> hidden = {1024, 512, 256};
    int latent_size = 128;
    double leaky_slope = 0.02;
  };

  SpVae(const Shape& shape, std::uint64_t seed);

  const Shape& shape() const { return shape_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }

  void encode(const Eigen::VectorXd& input, Eigen::VectorXd* mean,
              Eigen::VectorXd* logvar) const;
  Eigen::VectorXd decode(const Eigen::VectorXd& latent) const;

  // Batch columns are samples; noise is latent_size x batch.
  LossBreakdown compute_loss_and_gradients(const Eigen::MatrixXd& batch,
                                           const Eigen::MatrixXd& noise,
                                           const VaeLossConfig& loss);
  LossBreakdown evaluate(const Eigen::MatrixXd& dataset,
                         const VaeLossConfig& loss);
  std::vector<LossRecord> train(const Eigen::MatrixXd& dataset,
                                const TrainConfig& config);

  TensorMap to_tensors() const;
  static SpVae from_tensors(const TensorMap& tensors);

 private:
  SpVae() = default;
  void build_parameters(std::uint64_t seed);
  Parameter* find(const std::string& name);

  Shape shape_;
  std::vector<Parameter> params_;
};

}  // namespace sdm
