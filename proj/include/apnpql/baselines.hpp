#pragma once

#include <string>
#include <vector>

#include "apnpql/agent.hpp"

namespace apnpql::baselines {

enum class Kind { kApMpo, kApSac, kSac };

Kind parse_kind(const std::string& name);
std::string kind_name(Kind kind);

/// Per-state policy parameters, one row per state.
struct GaussianParams {
  Matrix raw_mean;   // before tanh
  Matrix mean;       // tanh(raw_mean)
  Matrix log_std;    // clamped
  Matrix raw_log_std;
  Vector grip_logit;
};

/// Diagonal Gaussian over velocities with a Bernoulli gripper, computed from
/// (detached) trunk features. Network output: [raw mean | raw log-std | gripper logit].
class GaussianPolicy {
 public:
  GaussianPolicy() = default;
  GaussianPolicy(int feature_dim, int action_dim, const std::vector<int>& hidden, double log_std_init, Rng& rng);

  nn::Mlp& net() { return net_; }
  const nn::Mlp& net() const { return net_; }
  int action_dim() const { return action_dim_; }

  GaussianParams evaluate(const Matrix& phi) const;
  static GaussianParams params_from_output(const Matrix& out, int action_dim);

  static double log_prob(const GaussianParams& p, Eigen::Index row, const dist::HybridAction& action);
  static dist::HybridAction sample(const GaussianParams& p, Eigen::Index row, Rng& rng);

 private:
  nn::Mlp net_;
  int action_dim_ = 0;
};

struct PolicyLoss {
  double loss = 0.0;
  Vector grad;  // policy network parameters
};

/// -sum_i w_i log pi(a_i | s), averaged over states (forward-KL projection).
PolicyLoss mpo_projection_loss(const std::vector<npql::PolicyBatch>& batches, const Matrix& phi,
                               const GaussianPolicy& policy);

/// log density of the uniform distribution over the velocity box and both
/// gripper states.
double uniform_log_density(int action_dim);

/// Reparameterized reverse-KL projection with velocity v = mean + std * noise
/// and the gripper bit enumerated exactly:
///   sum_g pi(g) [ -Q(s, v, g) + alpha (log pi(v, g) - log b(v, g)) ],
/// averaged over states. priors == nullptr selects the uniform b.
PolicyLoss sac_projection_loss(const Matrix& phi, const GaussianPolicy& policy, const nn::Mlp& head_z,
                               const std::vector<dist::ApGmmPrior>* priors, const Vector& alpha,
                               const Matrix& noise);

/// Targets with a' ~ pi at s' (target trunk features), uniform weights.
Matrix policy_eval_target(const npql::EBatch& batch, const GaussianPolicy& policy, const npql::NpqlNetworks& nets,
                          const npql::AgentConfig& cfg, Rng& rng);

/// Shares the distributional critic, alpha head and (for AP variants) the
/// prior machinery of the non-parametric agent, but acts with a parametric
/// policy fitted by projection.
class BaselineAgent : public npql::NpqlAgent {
 public:
  BaselineAgent(Kind kind, int obs_dim, int num_aps, int action_dim, npql::AgentConfig cfg, Rng& rng);

  std::string algorithm() const override { return kind_name(kind_); }
  Kind kind() const { return kind_; }
  const GaussianPolicy& policy() const { return policy_; }

  std::vector<dist::HybridAction> act(const Matrix& obs, Rng& rng) const override;
  npql::StepMetrics gradient_step(const std::vector<replay::NStepTransition>& batch, Rng& rng) override;

 protected:
  void save_extra(std::ostream& out) const override;
  void load_extra(std::istream& in) override;

 private:
  bool uses_prior() const { return kind_ != Kind::kSac; }

  Kind kind_;
  GaussianPolicy policy_;
  nn::OptimizerState opt_policy_;
};

}  // namespace apnpql::baselines
