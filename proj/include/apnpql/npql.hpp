#pragma once

#include <optional>
#include <vector>

#include "apnpql/dist.hpp"
#include "apnpql/nn.hpp"
#include "apnpql/replay.hpp"

namespace apnpql::npql {

inline constexpr double kAlphaFloor = 1e-3;

struct AgentConfig {
  double gamma = 0.99;
  double epsilon = 1.0;                // KL limit
  std::optional<double> epsilon_nu;    // entropy floor; unset = half the initial surrogate
  double lambda_ap = 1.0;
  int n_policy = 100;
  int n_target = 120;
  int n_step = 5;
  double lr_e = 3e-4;
  double lr_alpha = 1e-4;
  double lr_m = 3e-4;
  double lr_nu = 1e-4;
  double polyak = 0.05;
  int batch_size = 32;
  double expert_fraction = 0.25;
  double entropy_sign = 1.0;  // +1 rewards prior entropy in the M-step, -1 penalizes it
  double alpha_init = 0.1;
  double log_std_init = -1.2039728043259361;  // log 0.3
  double nu_init = 0.0;
  int feature_dim = 64;
  std::vector<int> trunk_hidden{64};
  std::vector<int> head_hidden{64, 64};

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

/// Feature trunk and output heads. Features are relu(trunk(obs)).
///
/// head_bp emits [mixture logits (K) | raw log-stds (K*d) | gripper logits (K)],
/// head_ap emits [AP means (K*d) | AP gripper logits (K)], head_z consumes
/// [phi | velocity | gripper] and emits one logit per return atom.
struct NpqlNetworks {
  nn::Mlp trunk;
  nn::Mlp head_bp;
  nn::Mlp head_ap;
  nn::Mlp head_z;
  nn::Mlp head_alpha;
  nn::Mlp target_trunk;
  nn::Mlp target_head_z;
  int num_aps = 0;
  int action_dim = 0;

  static NpqlNetworks create(int obs_dim, int num_aps, int action_dim, const AgentConfig& cfg, Rng& rng);

  int feature_dim() const { return trunk.output_dim(); }
  int obs_dim() const { return trunk.input_dim(); }
};

/// Rows of phi are relu(trunk(obs)).
Matrix features(const nn::Mlp& trunk, const Matrix& obs);

double alpha_from_raw(double raw);
Vector alphas(const nn::Mlp& head_alpha, const Matrix& phi);

/// Assembles the prior from one row of head outputs. log-stds are clamped to
/// [log sigma_min, log sigma_max] and means to the action box.
dist::ApGmmPrior prior_from_heads(const Eigen::Ref<const Eigen::RowVectorXd>& bp_out,
                                  const Eigen::Ref<const Eigen::RowVectorXd>& ap_out, int num_aps, int action_dim);

/// Throws std::domain_error if any head output is non-finite.
dist::ApGmmPrior build_prior(const NpqlNetworks& nets, const Vector& obs);
std::vector<dist::ApGmmPrior> build_priors(const NpqlNetworks& nets, const Matrix& phi);

/// Return-distribution probabilities for candidates[i] evaluated at state
/// owner[i] (a row of phi). The first layer is factored over states.
Matrix z_probs(const nn::Mlp& head_z, const Matrix& phi, const std::vector<int>& owner,
               const std::vector<dist::HybridAction>& candidates);

struct PolicyBatch {
  std::vector<dist::HybridAction> candidates;
  Vector prior_log_probs;
  Vector q_values;
  double alpha = 1.0;
  Vector weights;
};

Vector boltzmann_weights(const Vector& q_values, double alpha);
dist::HybridAction sample_action(const PolicyBatch& pb, Rng& rng);
double expected_under_q(const Vector& values, const PolicyBatch& pb);

/// Draws n candidates per prior, evaluates Q with head_z on phi and weights
/// them at the given per-state temperatures. probs, if given, receives the
/// return distributions of all candidates stacked state by state.
std::vector<PolicyBatch> make_policy_batches(const nn::Mlp& head_z, const Matrix& phi,
                                             const std::vector<dist::ApGmmPrior>& priors, const Vector& alpha,
                                             int n, Rng& rng, Matrix* probs = nullptr);

struct AlphaDual {
  double loss = 0.0;
  double grad = 0.0;  // d loss / d alpha
};

/// alpha * eps + alpha * log mean_i exp(q_i / alpha).
AlphaDual alpha_dual_loss(const Vector& q_values, double eps, double alpha);

struct AlphaHeadLoss {
  double loss = 0.0;
  double alpha_mean = 0.0;
  Vector grad;  // head_alpha parameters
};

/// Mean dual loss over states; phi is treated as a constant input.
AlphaHeadLoss alpha_head_loss(const nn::Mlp& head_alpha, const Matrix& phi, const std::vector<Vector>& q_values,
                              double eps);

/// Flattened view of a batch of n-step segments.
struct EBatch {
  Matrix obs;
  Matrix bootstrap_obs;
  Matrix velocities;
  Vector grippers;
  Vector rewards;
  Vector discounts;
  Matrix ap_means;    // B x (K*d), row-major over (k, j)
  Matrix ap_gripper;  // B x K
};

EBatch make_e_batch(const std::vector<replay::NStepTransition>& batch);

/// Online head_z input rows [phi | velocity | gripper].
Matrix z_inputs(const Matrix& phi, const Matrix& velocities, const Vector& grippers);

/// Pre-averaged projected targets for the given next-state candidates:
/// sum_i w_i project(r, discount, Z'(s', a'_i)).
Vector averaged_target(double reward, double discount, const Matrix& next_probs, const Vector& weights,
                       const dist::ValueSupport& support);

/// Targets with a' drawn from the prior at s' (target trunk, current prior
/// heads) and weighted by the Boltzmann weights at the target-state alpha.
Matrix npql_targets(const EBatch& batch, const NpqlNetworks& nets, const AgentConfig& cfg, Rng& rng);

struct ELoss {
  double total = 0.0;
  double loss_q = 0.0;
  double loss_ap = 0.0;
  Vector grad_trunk;
  Vector grad_ap;
  Vector grad_z;
};

/// lambda_ap * L^ap + L^Q for fixed targets. With lambda_ap == 0 the AP head
/// is untouched and grad_ap is zero.
ELoss e_step_loss_given_targets(const EBatch& batch, const Matrix& targets, const NpqlNetworks& nets,
                                double lambda_ap);

ELoss e_step_loss(const std::vector<replay::NStepTransition>& batch, const NpqlNetworks& nets,
                  const AgentConfig& cfg, Rng& rng);

/// Per-sample form of the distributional loss: sum_i w_i CE(project(Z'_i), p).
double per_sample_cross_entropy(double reward, double discount, const Matrix& next_probs, const Vector& weights,
                                const Vector& online_logits, const dist::ValueSupport& support);
/// Pre-averaged form: CE(sum_i w_i project(Z'_i), p).
double averaged_cross_entropy(double reward, double discount, const Matrix& next_probs, const Vector& weights,
                              const Vector& online_logits, const dist::ValueSupport& support);

struct MSamples {
  Matrix phi;
  std::vector<PolicyBatch> batches;
};

/// Candidates from the current prior at each state with their Boltzmann
/// weights under the online critic and alpha head.
MSamples draw_m_samples(const Matrix& obs, const NpqlNetworks& nets, const AgentConfig& cfg, Rng& rng);

struct MLoss {
  double total = 0.0;
  double cross_entropy = 0.0;  // -sum_i w_i log b(a_i), batch mean
  double entropy = 0.0;        // surrogate, batch mean
  Vector grad_bp;
};

/// L^M = -sum_i w_i log b(a_i) - entropy_sign * nu * H(b), averaged over
/// states, differentiated with respect to head_bp only.
MLoss m_step_loss_given_samples(const MSamples& samples, const nn::Mlp& head_bp, const nn::Mlp& head_ap,
                                int num_aps, int action_dim, double nu, double entropy_sign);

MLoss m_step_loss(const Matrix& obs, const NpqlNetworks& nets, const AgentConfig& cfg, double nu, Rng& rng);

/// nu <- max(0, nu - lr_nu * (entropy - eps_nu)).
double nu_dual_update(double entropy_estimate, double eps_nu, double lr_nu, double nu);

/// Mean entropy surrogate of the priors at the given states.
double mean_prior_entropy(const NpqlNetworks& nets, const Matrix& phi);

}  // namespace apnpql::npql
