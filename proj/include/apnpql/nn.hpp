#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace apnpql {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

/// Raised when an input does not match the shape a function expects.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace apnpql

namespace apnpql::nn {

/// Activations recorded by a forward pass, consumed by Mlp::backward.
/// activations[0] is the input batch, activations[l] the output of layer l.
struct ForwardCache {
  std::vector<Matrix> activations;

  const Matrix& output() const { return activations.back(); }
};

struct Gradients {
  Vector params;  // same layout as Mlp::params()
  Matrix inputs;  // batch x input_dim
};

/// Fully connected network with rectifier hidden layers and a linear output.
///
/// Parameters live in one flat vector so optimizers, target tracking and
/// checkpoints can treat every network the same way. Layer l occupies
/// [W_l (in x out, column-major), b_l (out)] starting at offset(l).
/// Batches are row-major in the sense that each row of an input matrix is one
/// sample.
class Mlp {
 public:
  Mlp() = default;

  /// Zero-initialized network.
  explicit Mlp(std::vector<int> layer_sizes);

  /// Uniform fan-in initialization: W ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), b = 0.
  Mlp(std::vector<int> layer_sizes, Rng& rng);

  const std::vector<int>& layer_sizes() const { return sizes_; }
  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  int num_layers() const { return static_cast<int>(sizes_.size()) - 1; }
  Eigen::Index num_params() const { return params_.size(); }

  Vector& params() { return params_; }
  const Vector& params() const { return params_; }

  Eigen::Map<Matrix> weight(int layer);
  Eigen::Map<const Matrix> weight(int layer) const;
  Eigen::Map<Vector> bias(int layer);
  Eigen::Map<const Vector> bias(int layer) const;

  Matrix forward(const Matrix& inputs) const;
  ForwardCache forward_cached(const Matrix& inputs) const;

  /// Runs layers first_layer..end on hidden, the input to layer first_layer.
  Matrix forward_from(int first_layer, Matrix hidden) const;

  /// Gradients of sum(upstream .* output) with respect to parameters and inputs.
  Gradients backward(const ForwardCache& cache, const Matrix& upstream) const;

  bool all_finite() const { return params_.allFinite(); }

 private:
  void check_input(const Matrix& inputs) const;

  std::vector<int> sizes_;
  std::vector<Eigen::Index> offsets_;
  Vector params_;
};

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  AdamConfig config;
  Vector first_moment;
  Vector second_moment;
  std::int64_t step = 0;
  std::int64_t skipped = 0;

  static OptimizerState for_params(const Vector& params, AdamConfig config);
};

/// One bias-corrected adaptive-moment update. Returns false and leaves both
/// params and state untouched (except the skip counter) when grads contain a
/// non-finite entry or the update would produce one.
bool adam_step(Vector& params, const Vector& grads, OptimizerState& state);

/// target <- (1 - rate) * target + rate * online. rate must lie in (0, 1].
void polyak_update(Vector& target, const Vector& online, double rate);

void save_mlp(std::ostream& out, const Mlp& mlp);
Mlp load_mlp(std::istream& in);
void save_optimizer(std::ostream& out, const OptimizerState& state);
OptimizerState load_optimizer(std::istream& in);

}  // namespace apnpql::nn
