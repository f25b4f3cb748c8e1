#include "apnpql/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace apnpql::oracle {

namespace {

/// log sum_a b(a) exp((q(a) - q_max) / alpha), shifted for stability.
double shifted_log_partition(const Vector& q, const Vector& b, double q_max, double alpha) {
  Vector x = b.array().log() + (q.array() - q_max) / alpha;
  double m = x.maxCoeff();
  return m + std::log((x.array() - m).exp().sum());
}

/// KL(pi_alpha || b) and Var_pi(q) for the closed-form policy.
std::pair<double, double> kl_and_variance(const Vector& q, const Vector& b, double alpha) {
  const double q_max = q.maxCoeff();
  Vector x = b.array().log() + (q.array() - q_max) / alpha;
  double m = x.maxCoeff();
  Vector log_pi = x.array() - (m + std::log((x.array() - m).exp().sum()));
  Vector pi = log_pi.array().exp();
  double kl = 0.0;
  for (Eigen::Index a = 0; a < q.size(); ++a) {
    if (pi[a] > 0.0) kl += pi[a] * (log_pi[a] - std::log(b[a]));
  }
  double mean = pi.dot(q);
  double var = pi.dot((q.array() - mean).square().matrix());
  return {std::max(kl, 0.0), var};
}

void check_row(const Vector& q, const Vector& b) {
  if (q.size() == 0 || q.size() != b.size()) throw ShapeError("q and prior rows must have the same non-zero length");
  if (b.minCoeff() <= 0.0) throw std::invalid_argument("prior row must be strictly positive");
}

Vector dirichlet_ones(int n, Rng& rng) {
  std::exponential_distribution<double> e(1.0);
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = e(rng);
  return v / v.sum();
}

using Json = nlohmann::json;

}  // namespace

void TabularRmdp::validate() const {
  const auto s = reward.rows();
  const auto a = reward.cols();
  if (s == 0 || a == 0) throw std::invalid_argument("mdp needs at least one state and one action");
  if (transitions.rows() != s * a || transitions.cols() != s) throw std::invalid_argument("transitions must be (S*A) x S");
  if (prior.rows() != s || prior.cols() != a) throw std::invalid_argument("prior must be S x A");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
  if (!reward.allFinite()) throw std::invalid_argument("rewards must be finite");
  if (transitions.minCoeff() < 0.0) throw std::invalid_argument("transition probabilities must be non-negative");
  for (Eigen::Index r = 0; r < transitions.rows(); ++r) {
    if (std::abs(transitions.row(r).sum() - 1.0) > 1e-12) throw std::invalid_argument("transition rows must sum to 1");
  }
  if (!(prior.minCoeff() > 0.0)) throw std::invalid_argument("prior rows must be strictly positive");
  for (Eigen::Index r = 0; r < s; ++r) {
    if (std::abs(prior.row(r).sum() - 1.0) > 1e-12) throw std::invalid_argument("prior rows must sum to 1");
  }
}

double dual_objective(const Vector& q, const Vector& b, double eps, double alpha) {
  check_row(q, b);
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
  const double q_max = q.maxCoeff();
  return alpha * eps + q_max + alpha * shifted_log_partition(q, b, q_max, alpha);
}

double solve_alpha(const Vector& q, const Vector& b, double eps) {
  check_row(q, b);
  if (q.maxCoeff() == q.minCoeff()) return kAlphaFloor;
  const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
  auto g = [&](double log_alpha) { return dual_objective(q, b, eps, std::exp(log_alpha)); };
  double lo = std::log(kAlphaFloor);
  double hi = std::log(kAlphaMax);
  double x1 = hi - ratio * (hi - lo);
  double x2 = lo + ratio * (hi - lo);
  double f1 = g(x1);
  double f2 = g(x2);
  while (hi - lo > 1e-10) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - ratio * (hi - lo);
      f1 = g(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + ratio * (hi - lo);
      f2 = g(x2);
    }
  }
  double best = 0.5 * (lo + hi);
  double f_best = g(best);
  if (g(std::log(kAlphaFloor)) <= f_best) return kAlphaFloor;
  if (g(std::log(kAlphaMax)) < f_best) return kAlphaMax;
  return std::exp(best);
}

Vector closed_form_policy(const Vector& q, const Vector& b, double alpha) {
  check_row(q, b);
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
  Vector x = b.array().log() + (q.array() - q.maxCoeff()) / alpha;
  Vector pi = (x.array() - x.maxCoeff()).exp();
  return pi / pi.sum();
}

KlResult kl_divergence(const Vector& p, const Vector& q) {
  if (p.size() != q.size()) throw ShapeError("kl_divergence needs equal lengths");
  KlResult r;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (q[i] <= 0.0) {
      r.value = std::numeric_limits<double>::infinity();
      r.support_violation = true;
      return r;
    }
    r.value += p[i] * std::log(p[i] / q[i]);
  }
  return r;
}

RowSolution solve_row(const Vector& q, const Vector& b, double eps) {
  check_row(q, b);
  RowSolution out;
  const double q_max = q.maxCoeff();
  double argmax_mass = 0.0;
  for (Eigen::Index a = 0; a < q.size(); ++a) {
    if (q[a] == q_max) argmax_mass += b[a];
  }
  if (-std::log(argmax_mass) <= eps) {
    out.greedy = true;
    out.alpha = kAlphaFloor;
    out.policy = Vector::Zero(q.size());
    for (Eigen::Index a = 0; a < q.size(); ++a) {
      if (q[a] == q_max) out.policy[a] = b[a] / argmax_mass;
    }
    out.value = q_max;
    out.dual_value = q_max;
    return out;
  }

  // The optimum satisfies KL(pi_alpha || b) = eps; h = eps - KL is increasing
  // in alpha with h' = Var_pi(q) / alpha^3. Start from the golden-section
  // solution, widen the bracket if the optimum lies outside it, then polish
  // with safeguarded Newton steps.
  auto h = [&](double alpha) { return eps - kl_and_variance(q, b, alpha).first; };
  double alpha = solve_alpha(q, b, eps);
  double lo = alpha;
  double hi = alpha;
  while (h(lo) > 0.0 && lo > 1e-300) lo *= 0.5;
  while (h(hi) < 0.0 && hi < 1e300) hi *= 2.0;
  if (lo == hi) {
    out.alpha = alpha;
  } else {
    alpha = std::clamp(alpha, lo, hi);
    for (int it = 0; it < 200 && hi / lo - 1.0 > 1e-15; ++it) {
      auto [kl, var] = kl_and_variance(q, b, alpha);
      double f = eps - kl;
      if (f == 0.0) {
        lo = hi = alpha;
        break;
      }
      (f < 0.0 ? lo : hi) = alpha;
      double slope = var / (alpha * alpha * alpha);
      double next = slope > 0.0 ? alpha - f / slope : 0.0;
      alpha = (next > lo && next < hi) ? next : std::sqrt(lo * hi);
    }
    out.alpha = alpha;
  }
  out.policy = closed_form_policy(q, b, out.alpha);
  out.value = out.policy.dot(q);
  out.dual_value = dual_objective(q, b, eps, out.alpha);
  return out;
}

Matrix regularized_bellman_apply(const TabularRmdp& mdp, const Matrix& q) {
  const int s_count = mdp.num_states();
  const int a_count = mdp.num_actions();
  if (q.rows() != s_count || q.cols() != a_count) throw ShapeError("Q must be S x A");
  Vector v(s_count);
  for (int s = 0; s < s_count; ++s) v[s] = solve_row(q.row(s).transpose(), mdp.prior.row(s).transpose(), mdp.epsilon).value;
  Vector backed = mdp.transitions * v;
  Matrix out(s_count, a_count);
  for (int s = 0; s < s_count; ++s) {
    for (int a = 0; a < a_count; ++a) out(s, a) = mdp.reward(s, a) + mdp.gamma * backed[s * a_count + a];
  }
  return out;
}

ValueIterationResult value_iteration(const TabularRmdp& mdp, double tol, int max_iterations) {
  if (!(tol > 0.0)) throw std::invalid_argument("value_iteration needs tol > 0");
  mdp.validate();
  ValueIterationResult r;
  r.q = Matrix::Zero(mdp.num_states(), mdp.num_actions());
  while (true) {
    Matrix next = regularized_bellman_apply(mdp, r.q);
    r.last_change = (next - r.q).cwiseAbs().maxCoeff();
    r.q = std::move(next);
    ++r.iterations;
    if (r.last_change < tol) break;
    if (r.iterations >= max_iterations) throw std::runtime_error("value_iteration did not converge");
  }
  r.policy.resize(mdp.num_states(), mdp.num_actions());
  r.alpha.resize(mdp.num_states());
  for (int s = 0; s < mdp.num_states(); ++s) {
    auto row = solve_row(r.q.row(s).transpose(), mdp.prior.row(s).transpose(), mdp.epsilon);
    r.policy.row(s) = row.policy.transpose();
    r.alpha[s] = row.alpha;
  }
  return r;
}

Matrix classical_value_iteration(const TabularRmdp& mdp, double tol, int max_iterations) {
  if (!(tol > 0.0)) throw std::invalid_argument("classical_value_iteration needs tol > 0");
  mdp.validate();
  const int a_count = mdp.num_actions();
  Matrix q = Matrix::Zero(mdp.num_states(), a_count);
  for (int it = 0; it < max_iterations; ++it) {
    Vector backed = mdp.transitions * q.rowwise().maxCoeff();
    Matrix next(q.rows(), a_count);
    for (int s = 0; s < mdp.num_states(); ++s) {
      for (int a = 0; a < a_count; ++a) next(s, a) = mdp.reward(s, a) + mdp.gamma * backed[s * a_count + a];
    }
    double change = (next - q).cwiseAbs().maxCoeff();
    q = std::move(next);
    if (change < tol) return q;
  }
  throw std::runtime_error("classical_value_iteration did not converge");
}

Vector evaluate_policy(const TabularRmdp& mdp, const Matrix& policy) {
  const int s_count = mdp.num_states();
  const int a_count = mdp.num_actions();
  if (policy.rows() != s_count || policy.cols() != a_count) throw ShapeError("policy must be S x A");
  Matrix p_pi = Matrix::Zero(s_count, s_count);
  Vector r_pi = Vector::Zero(s_count);
  for (int s = 0; s < s_count; ++s) {
    for (int a = 0; a < a_count; ++a) {
      p_pi.row(s) += policy(s, a) * mdp.next_state_row(s, a);
      r_pi[s] += policy(s, a) * mdp.reward(s, a);
    }
  }
  Matrix system = Matrix::Identity(s_count, s_count) - mdp.gamma * p_pi;
  return system.partialPivLu().solve(r_pi);
}

double check_contraction(const TabularRmdp& mdp, int trials, Rng& rng) {
  if (trials < 1) throw std::invalid_argument("check_contraction needs trials >= 1");
  mdp.validate();
  const double scale = 1.0 / (1.0 - mdp.gamma);
  std::uniform_real_distribution<double> u(-scale, scale);
  std::uniform_real_distribution<double> log_size(-8.0, 0.0);
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    Matrix q1(mdp.num_states(), mdp.num_actions());
    Matrix q2(q1.rows(), q1.cols());
    for (Eigen::Index i = 0; i < q1.size(); ++i) q1.data()[i] = u(rng);
    // alternate far-apart pairs with nearby ones at random scales
    double step = t % 2 == 0 ? 1.0 : std::pow(10.0, log_size(rng));
    for (Eigen::Index i = 0; i < q2.size(); ++i) q2.data()[i] = q1.data()[i] + step * u(rng);
    double in = (q1 - q2).cwiseAbs().maxCoeff();
    double out = (regularized_bellman_apply(mdp, q1) - regularized_bellman_apply(mdp, q2)).cwiseAbs().maxCoeff();
    if (out > mdp.gamma * in + 1e-9) {
      std::ostringstream msg;
      msg.precision(17);
      msg << "contraction violated: ||TQ1-TQ2|| = " << out << " > gamma * ||Q1-Q2|| = " << mdp.gamma * in
          << "\nQ1 =\n" << q1 << "\nQ2 =\n" << q2;
      throw ContractionViolation(msg.str());
    }
    if (in > 0.0) worst = std::max(worst, out / in);
  }
  return worst;
}

EmResult em_joint_solve(const TabularRmdp& mdp, int iterations, double tol, double mixing) {
  if (iterations < 1) throw std::invalid_argument("em_joint_solve needs iterations >= 1");
  if (!(mixing > 0.0 && mixing < 1.0)) throw std::invalid_argument("mixing must lie in (0, 1)");
  TabularRmdp current = mdp;
  EmResult out;
  const double uniform = 1.0 / mdp.num_actions();
  for (int k = 0; k < iterations; ++k) {
    out.priors.push_back(current.prior);
    auto vi = value_iteration(current, tol);
    out.objective.push_back(evaluate_policy(current, vi.policy).mean());
    out.final_q = vi.q;
    out.final_policy = vi.policy;
    current.prior = ((1.0 - mixing) * vi.policy).array() + mixing * uniform;
    current.prior.array().colwise() /= current.prior.rowwise().sum().array();
  }
  return out;
}

TabularRmdp random_rmdp(Rng& rng, const RandomRmdpOptions& o) {
  std::uniform_int_distribution<int> states(o.min_states, o.max_states);
  std::uniform_int_distribution<int> actions(o.min_actions, o.max_actions);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> gamma(o.min_gamma, o.max_gamma);
  std::uniform_real_distribution<double> eps(o.min_epsilon, o.max_epsilon);
  TabularRmdp m;
  const int s = states(rng);
  const int a = actions(rng);
  m.reward.resize(s, a);
  for (Eigen::Index i = 0; i < m.reward.size(); ++i) m.reward.data()[i] = unit(rng);
  m.transitions.resize(static_cast<Eigen::Index>(s) * a, s);
  for (Eigen::Index r = 0; r < m.transitions.rows(); ++r) m.transitions.row(r) = dirichlet_ones(s, rng).transpose();
  m.prior.resize(s, a);
  for (int r = 0; r < s; ++r) m.prior.row(r) = dirichlet_ones(a, rng).transpose();
  m.gamma = gamma(rng);
  m.epsilon = eps(rng);
  return m;
}

std::string rmdp_to_json(const TabularRmdp& mdp) {
  Json j;
  j["gamma"] = mdp.gamma;
  j["epsilon"] = mdp.epsilon;
  auto rows = [](const Matrix& m) {
    Json out = Json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      Json row = Json::array();
      for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
      out.push_back(row);
    }
    return out;
  };
  j["reward"] = rows(mdp.reward);
  j["prior"] = rows(mdp.prior);
  Json p = Json::array();
  for (int s = 0; s < mdp.num_states(); ++s) {
    Json per_action = Json::array();
    for (int a = 0; a < mdp.num_actions(); ++a) {
      Json row = Json::array();
      for (int t = 0; t < mdp.num_states(); ++t) row.push_back(mdp.next_state_row(s, a)[t]);
      per_action.push_back(row);
    }
    p.push_back(per_action);
  }
  j["transitions"] = p;
  return j.dump(2);
}

TabularRmdp rmdp_from_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw std::invalid_argument(std::string("mdp json: ") + e.what());
  }
  auto matrix = [](const Json& rows, const char* name) {
    if (!rows.is_array() || rows.empty() || !rows[0].is_array()) {
      throw std::invalid_argument(std::string("mdp json: '") + name + "' must be a non-empty matrix");
    }
    Matrix m(rows.size(), rows[0].size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != rows[0].size()) throw std::invalid_argument(std::string("mdp json: ragged '") + name + "'");
      for (std::size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c].get<double>();
    }
    return m;
  };
  try {
    TabularRmdp m;
    m.gamma = j.at("gamma").get<double>();
    m.epsilon = j.at("epsilon").get<double>();
    m.reward = matrix(j.at("reward"), "reward");
    m.prior = matrix(j.at("prior"), "prior");
    const auto& p = j.at("transitions");
    const int s_count = m.num_states();
    const int a_count = m.num_actions();
    if (!p.is_array() || static_cast<int>(p.size()) != s_count) {
      throw std::invalid_argument("mdp json: 'transitions' must be S x A x S");
    }
    m.transitions.resize(static_cast<Eigen::Index>(s_count) * a_count, s_count);
    for (int s = 0; s < s_count; ++s) {
      Matrix block = matrix(p[s], "transitions");
      if (block.rows() != a_count || block.cols() != s_count) {
        throw std::invalid_argument("mdp json: 'transitions' must be S x A x S");
      }
      m.transitions.middleRows(static_cast<Eigen::Index>(s) * a_count, a_count) = block;
    }
    m.validate();
    return m;
  } catch (const Json::exception& e) {
    throw std::invalid_argument(std::string("mdp json: ") + e.what());
  }
}

void save_rmdp(const std::string& path, const TabularRmdp& mdp) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << rmdp_to_json(mdp) << '\n';
}

TabularRmdp load_rmdp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return rmdp_from_json(buf.str());
}

}  // namespace apnpql::oracle
