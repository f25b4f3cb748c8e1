#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "apnpql/npql.hpp"

namespace apnpql::npql {

struct StepMetrics {
  double loss_q = 0.0;
  double loss_ap = 0.0;
  double loss_m = 0.0;
  double alpha_mean = 0.0;
  double nu = 0.0;
  double prior_entropy = 0.0;
  int skipped = 0;  // optimizer updates rejected for non-finite values
};

/// Common interface of every learner driven by the trainer.
class Agent {
 public:
  virtual ~Agent() = default;

  virtual std::string algorithm() const = 0;
  virtual const AgentConfig& config() const = 0;

  /// One action per observation row.
  virtual std::vector<dist::HybridAction> act(const Matrix& obs, Rng& rng) const = 0;
  virtual StepMetrics gradient_step(const std::vector<replay::NStepTransition>& batch, Rng& rng) = 0;

  virtual void save(std::ostream& out) const = 0;
  /// Restores state saved by an agent of the same algorithm and shape.
  virtual void load(std::istream& in) = 0;
};

/// Non-parametric learner: acts by Boltzmann resampling of prior candidates.
class NpqlAgent : public Agent {
 public:
  NpqlAgent(int obs_dim, int num_aps, int action_dim, AgentConfig cfg, Rng& rng);

  std::string algorithm() const override { return "ap-npql"; }
  const AgentConfig& config() const override { return cfg_; }

  std::vector<dist::HybridAction> act(const Matrix& obs, Rng& rng) const override;
  StepMetrics gradient_step(const std::vector<replay::NStepTransition>& batch, Rng& rng) override;

  void save(std::ostream& out) const override;
  void load(std::istream& in) override;

  const NpqlNetworks& networks() const { return nets_; }
  NpqlNetworks& networks() { return nets_; }
  double nu() const { return nu_; }
  std::optional<double> epsilon_nu() const { return eps_nu_; }

 protected:
  /// Applies an E-step gradient; returns the number of skipped updates.
  int apply_e_step(const ELoss& loss, bool train_ap);
  /// Dual step on the alpha head with the given per-state Q samples.
  AlphaHeadLoss update_alpha(const Matrix& phi, const std::vector<Vector>& q_values, int& skipped);
  /// Prior M-step followed by the nu update.
  MLoss update_prior(const MSamples& samples, int& skipped);
  void update_targets();

  virtual void save_extra(std::ostream&) const {}
  virtual void load_extra(std::istream&) {}

  AgentConfig cfg_;
  NpqlNetworks nets_;
  nn::OptimizerState opt_trunk_;
  nn::OptimizerState opt_ap_;
  nn::OptimizerState opt_z_;
  nn::OptimizerState opt_alpha_;
  nn::OptimizerState opt_bp_;
  double nu_ = 0.0;
  std::optional<double> eps_nu_;
};

}  // namespace apnpql::npql
