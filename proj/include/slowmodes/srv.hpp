#pragma once

#include "slowmodes/common.hpp"
#include "slowmodes/estimation.hpp"

#include <span>
#include <string>
#include <vector>

namespace slowmodes {

enum class Activation { Tanh, Linear };

/// Fully connected network: affine + activation on every hidden layer, affine
/// output. layers = {input, hidden..., output}. Production networks have at
/// least one hidden layer; {input, output} is a single affine map.
struct MlpSpec {
  std::vector<int> layers;
  Activation hidden_activation = Activation::Tanh;

  int input_dim() const { return layers.front(); }
  int output_dim() const { return layers.back(); }
  int depth() const { return static_cast<int>(layers.size()) - 1; }
  Index parameter_count() const;
  void validate() const;
};

/// Per-layer weights (out x in) and biases. Flat order: layer by layer, the
/// weight matrix row-major followed by the bias vector.
struct NetworkParams {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;

  static NetworkParams zeros(const MlpSpec& spec);
  /// Uniform fan-in scaled initialization, U(-sqrt(3/fan_in), sqrt(3/fan_in)).
  static NetworkParams random(const MlpSpec& spec, std::uint64_t seed);

  Vector flatten() const;
  static NetworkParams unflatten(const MlpSpec& spec, const Vector& theta);
};

Matrix mlp_forward(const NetworkParams& params, const MlpSpec& spec, const Matrix& X);

/// Choice of g in L = sum_i g(lambda_i). Vamp2 is g = -lambda^2; TimescaleSum
/// is g = 1/ln(lambda), which maximizes the sum of implied timescales.
enum class LossKind { Vamp2, TimescaleSum };

double loss_term(LossKind kind, double eigenvalue);
double loss_term_derivative(LossKind kind, double eigenvalue);

struct LossReport {
  double loss = 0.0;
  Vector eigenvalues;  // top n_modes, non-ascending
  bool negative_eigenvalue = false;
  bool above_one = false;  // some eigenvalue > 1 + 1e-6
  bool degenerate = false; // eigenvalue gap below 1e-6 among the scored modes
};

/// Loss value together with its gradients with respect to C and Q.
struct VacGradient {
  LossReport report;
  Matrix dC;
  Matrix dQ;
};

/// Loss of the VAC problem (C, Q) and its exact gradient, propagated through
/// the eigendecomposition of L^-1 C L^-T, the triangular inverse and the
/// Cholesky factorization of the regularized Q.
VacGradient vac_loss_gradient(const Matrix& C, const Matrix& Q, int n_modes, double epsilon,
                              LossKind kind = LossKind::Vamp2);

LossReport vamp2_loss(const NetworkParams& params, const MlpSpec& spec, const Matrix& heads,
                      const Matrix& tails, int n_modes,
                      double epsilon = kDefaultRegularization,
                      LossKind kind = LossKind::Vamp2);

struct LossGradient {
  LossReport report;
  Vector gradient;  // flat, NetworkParams::flatten order
};

LossGradient loss_gradient(const NetworkParams& params, const MlpSpec& spec, const Matrix& heads,
                           const Matrix& tails, int n_modes,
                           double epsilon = kDefaultRegularization,
                           LossKind kind = LossKind::Vamp2);

struct TrainConfig {
  int lag = 100;
  int n_modes = 0;  // 0: use the network output dimension
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  Index batch_size = 10000;
  int max_epochs = 200;
  int patience = 20;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::Vamp2;
  double epsilon = kDefaultRegularization;

  void validate(const MlpSpec& spec) const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;       // mean over minibatches
  double validation_loss = 0.0;  // full validation set
  double best_validation_loss = 0.0;
  int skipped_steps = 0;         // minibatches whose Cholesky factorization failed
};

/// Raised when a minibatch produces a non-finite loss.
class TrainingAborted : public NumericalError {
 public:
  TrainingAborted(int epoch, Index batch, const std::string& what)
      : NumericalError(what + " (epoch " + std::to_string(epoch) + ", batch " +
                       std::to_string(batch) + ")"),
        epoch_(epoch),
        batch_(batch) {}

  int epoch() const { return epoch_; }
  Index batch() const { return batch_; }

 private:
  int epoch_;
  Index batch_;
};

/// Trained network plus the linear map onto orthonormal eigenfunction estimates:
/// psi(x) = mixing * (f(x) - output_mean).
struct SrvModel {
  MlpSpec spec;
  NetworkParams params;
  Vector output_mean;
  Matrix mixing;  // n_modes x output_dim, row i is s_i
  Vector eigenvalues;
  int lag = 1;
  TrainConfig config;
  std::vector<EpochRecord> trace;
};

SrvModel train_srv(std::span<const Trajectory> trajectories, const MlpSpec& spec,
                   const TrainConfig& config);

/// Fills output_mean, mixing and eigenvalues with a VAC solve over all pairs.
void finalize_srv(SrvModel& model, const LaggedDataset& data);

Matrix srv_transform(const SrvModel& model, const Matrix& X);

/// d psi / d x at a single point (n_modes x input_dim).
Matrix srv_gradient_wrt_input(const SrvModel& model,
                              const Eigen::Ref<const Eigen::RowVectorXd>& x);

}  // namespace slowmodes
