#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "apnpql/nn.hpp"

namespace apnpql::oracle {

inline constexpr double kAlphaFloor = 1e-3;
inline constexpr double kAlphaMax = 1e3;

/// Finite MDP with a per-state prior over actions and a KL budget.
struct TabularRmdp {
  Matrix reward;       // S x A
  Matrix transitions;  // (S*A) x S, row s*A + a
  Matrix prior;        // S x A, strictly positive rows
  double gamma = 0.9;
  double epsilon = 0.5;

  int num_states() const { return static_cast<int>(reward.rows()); }
  int num_actions() const { return static_cast<int>(reward.cols()); }
  auto next_state_row(int s, int a) const { return transitions.row(static_cast<Eigen::Index>(s) * num_actions() + a); }

  /// Throws std::invalid_argument on shape or invariant violations.
  void validate() const;
};

/// g(alpha) = alpha * eps + alpha * log sum_a b(a) exp(q(a) / alpha).
double dual_objective(const Vector& q, const Vector& b, double eps, double alpha);

/// Golden-section minimizer of the dual over [kAlphaFloor, kAlphaMax] in
/// log-alpha. Constant rows return kAlphaFloor.
double solve_alpha(const Vector& q, const Vector& b, double eps);

/// pi(a) proportional to b(a) exp(q(a) / alpha).
Vector closed_form_policy(const Vector& q, const Vector& b, double alpha);

struct KlResult {
  double value = 0.0;
  bool support_violation = false;  // value is +inf when set
};

KlResult kl_divergence(const Vector& p, const Vector& q);

/// Exact solution of max_pi E_pi[q] subject to KL(pi || b) <= eps.
struct RowSolution {
  double alpha = kAlphaFloor;
  Vector policy;
  double value = 0.0;        // E_pi[q]
  double dual_value = 0.0;   // inf over alpha of g; equals value at the optimum
  bool greedy = false;       // the prior restricted to the argmax set is feasible
};

RowSolution solve_row(const Vector& q, const Vector& b, double eps);

Matrix regularized_bellman_apply(const TabularRmdp& mdp, const Matrix& q);

struct ValueIterationResult {
  Matrix q;
  Matrix policy;  // S x A
  Vector alpha;
  int iterations = 0;
  double last_change = 0.0;
};

ValueIterationResult value_iteration(const TabularRmdp& mdp, double tol, int max_iterations = 1000000);

/// Standard Bellman optimality iteration (no prior, no KL budget).
Matrix classical_value_iteration(const TabularRmdp& mdp, double tol, int max_iterations = 1000000);

/// V^pi from (I - gamma P_pi) V = r_pi.
Vector evaluate_policy(const TabularRmdp& mdp, const Matrix& policy);

class ContractionViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Largest ||TQ1 - TQ2|| / ||Q1 - Q2|| over random pairs. Throws
/// ContractionViolation when a pair exceeds gamma (plus 1e-9 slack).
double check_contraction(const TabularRmdp& mdp, int trials, Rng& rng);

struct EmResult {
  std::vector<double> objective;  // J after each E-step
  std::vector<Matrix> priors;     // prior used by each E-step
  Matrix final_q;
  Matrix final_policy;
};

/// Alternates exact E-steps (value iteration under the current prior) with
/// M-steps that copy the improved policy into the prior, mixed with
/// `mixing` of the uniform distribution to keep it strictly positive.
/// J is the mean over states of the exact value of the E-step policy.
EmResult em_joint_solve(const TabularRmdp& mdp, int iterations, double tol = 1e-12, double mixing = 1e-12);

struct RandomRmdpOptions {
  int min_states = 3;
  int max_states = 8;
  int min_actions = 2;
  int max_actions = 6;
  double min_gamma = 0.5;
  double max_gamma = 0.95;
  double min_epsilon = 0.05;
  double max_epsilon = 1.0;
};

TabularRmdp random_rmdp(Rng& rng, const RandomRmdpOptions& options = {});

std::string rmdp_to_json(const TabularRmdp& mdp);
TabularRmdp rmdp_from_json(const std::string& text);
void save_rmdp(const std::string& path, const TabularRmdp& mdp);
TabularRmdp load_rmdp(const std::string& path);

}  // namespace apnpql::oracle
