#pragma once

#include <stdexcept>
#include <vector>

#include "apnpql/nn.hpp"

namespace apnpql::dist {

inline constexpr double kSigmaMin = 0.02;
inline constexpr double kSigmaMax = 0.5;
inline constexpr int kNumAtoms = 51;
inline constexpr double kValueMin = 0.0;
inline constexpr double kValueMax = 1.05;

inline constexpr int kGripperOpen = 0;
inline constexpr int kGripperClose = 1;

/// Velocity command in [-1, 1]^d plus a binary gripper command.
struct HybridAction {
  Vector velocity;
  int gripper = kGripperOpen;
};

/// Clips every velocity component into [-1, 1].
HybridAction clip_action(HybridAction action);

class RejectedPrior : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Gaussian mixture over velocities with a Bernoulli gripper bit per
/// component. Means come from the action-primitive head and are never
/// trained through the prior; the rest is adaptable.
struct ApGmmPrior {
  Matrix means;           // K x d
  Matrix log_stds;        // K x d
  Vector mixture_logits;  // K
  Vector gripper_logits;  // K, logit of P(close)

  int num_components() const { return static_cast<int>(means.rows()); }
  int action_dim() const { return static_cast<int>(means.cols()); }
  Vector weights() const;
  Vector close_probs() const;

  /// Throws RejectedPrior on inconsistent shapes or non-finite parameters.
  void validate() const;
};

/// Derivatives with respect to the adaptable prior parameters.
struct PriorGradient {
  Matrix log_stds;
  Vector mixture_logits;
  Vector gripper_logits;

  static PriorGradient zeros_like(const ApGmmPrior& prior);
};

struct PriorSamples {
  std::vector<HybridAction> actions;  // velocities already clipped
  Vector log_probs;                   // evaluated before clipping
  std::vector<int> components;
};

PriorSamples gmm_sample(const ApGmmPrior& prior, int n, Rng& rng);

double gmm_log_prob(const ApGmmPrior& prior, const HybridAction& action);

/// As gmm_log_prob, additionally accumulating scale * d(log prob)/d(params)
/// into grad.
double gmm_log_prob(const ApGmmPrior& prior, const HybridAction& action, PriorGradient& grad,
                    double scale);

/// As gmm_log_prob, also returning d(log prob)/d(velocity) in dvelocity.
double gmm_log_prob_velocity_grad(const ApGmmPrior& prior, const HybridAction& action, Vector& dvelocity);

struct EntropySurrogate {
  double value = 0.0;
  PriorGradient grad;
};

/// H(weights) + sum_k w_k [H(N(mu_k, sigma_k^2)) + H(Bern(p_k))]. Exact when
/// components do not overlap, an upper bound on the mixture entropy otherwise.
EntropySurrogate gmm_entropy_surrogate(const ApGmmPrior& prior);

/// Evenly spaced return atoms.
class ValueSupport {
 public:
  ValueSupport(double v_min = kValueMin, double v_max = kValueMax, int num_atoms = kNumAtoms);

  double v_min() const { return v_min_; }
  double v_max() const { return v_max_; }
  int size() const { return static_cast<int>(atoms_.size()); }
  double spacing() const { return spacing_; }
  const Vector& atoms() const { return atoms_; }

 private:
  double v_min_;
  double v_max_;
  double spacing_;
  Vector atoms_;
};

struct ValueDistribution {
  ValueSupport support;
  Vector probs;

  static ValueDistribution point_mass(const ValueSupport& support, int atom);
};

/// Projects reward + discount * Z back onto the support: every shifted atom is
/// clamped to [v_min, v_max] and its mass split linearly between the two
/// neighbouring atoms.
ValueDistribution project_target(double reward, double discount, const ValueDistribution& target);

/// Raw-buffer form used on hot paths; out must hold support.size() doubles and
/// is overwritten.
void project_into(double reward, double discount, const ValueSupport& support, const double* probs,
                  double* out);

double dist_mean(const ValueDistribution& z);

}  // namespace apnpql::dist
