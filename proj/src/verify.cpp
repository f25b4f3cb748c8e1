#include "apnpql/verify.hpp"

#include <chrono>
#include <cmath>
#include <functional>

#include "apnpql/agent.hpp"
#include "apnpql/env.hpp"
#include "apnpql/oracle.hpp"
#include "apnpql/run.hpp"

namespace apnpql::verify {

using Json = nlohmann::json;

namespace {

constexpr int kMaxRecordedFailures = 20;

Json to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Json to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(to_json(Vector(m.row(r).transpose())));
  return rows;
}

class Recorder {
 public:
  explicit Recorder(std::string suite) : start_(std::chrono::steady_clock::now()) { report_.suite = std::move(suite); }

  void fail(std::string check, std::string detail, Json instance = nullptr) {
    report_.passed = false;
    ++report_.failure_count;
    if (static_cast<int>(report_.failures.size()) < kMaxRecordedFailures) {
      report_.failures.push_back({std::move(check), std::move(detail), std::move(instance)});
    }
  }

  /// Records a failure unless value <= limit.
  void at_most(const std::string& check, double value, double limit, const std::function<Json()>& instance) {
    if (!(value <= limit)) fail(check, std::to_string(value) + " > " + std::to_string(limit), instance());
  }

  void count() { ++report_.cases; }
  Json& stats() { return report_.stats; }

  SuiteReport finish() {
    report_.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    report_.stats["failures"] = report_.failure_count;
    return std::move(report_);
  }

 private:
  SuiteReport report_;
  std::chrono::steady_clock::time_point start_;
};

double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Largest relative error between analytic and central-difference gradients.
double gradient_error(Vector& params, const Vector& analytic, const std::function<double()>& loss, double h = 1e-5) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    double saved = params[i];
    params[i] = saved + h;
    double up = loss();
    params[i] = saved - h;
    double down = loss();
    params[i] = saved;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * h)));
  }
  return worst;
}

/// Smallest |pre-activation| of the rectified layers; finite differences
/// are only meaningful away from the kinks.
double relu_margin(const nn::Mlp& mlp, const Matrix& inputs, bool include_output = false) {
  double best = std::numeric_limits<double>::infinity();
  Matrix h = inputs;
  for (int l = 0; l < mlp.num_layers(); ++l) {
    Matrix z = h * mlp.weight(l);
    z.rowwise() += mlp.bias(l).transpose();
    bool rectified = l + 1 < mlp.num_layers();
    if (rectified || include_output) best = std::min(best, z.cwiseAbs().minCoeff());
    h = rectified ? Matrix(z.cwiseMax(0.0)) : z;
  }
  return best;
}

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

npql::AgentConfig small_agent() {
  npql::AgentConfig c;
  c.feature_dim = 8;
  c.trunk_hidden = {8};
  c.head_hidden = {8};
  c.n_policy = 6;
  c.n_target = 5;
  return c;
}

replay::NStepTransition random_segment(Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  const int k = env::kNumAps;
  const int d = env::kActionDim;
  replay::NStepTransition t;
  t.obs = gaussian(env::kObservationDim, 1, rng).col(0);
  t.bootstrap_obs = gaussian(env::kObservationDim, 1, rng).col(0);
  t.action.velocity = Vector(d);
  for (int j = 0; j < d; ++j) t.action.velocity[j] = u(rng);
  t.action.gripper = coin(rng) ? 1 : 0;
  t.reward = coin(rng) ? 1.0 : 0.0;
  t.done = coin(rng) && t.reward > 0;
  t.discount = t.done ? 0.0 : std::pow(0.99, 3);
  t.ap_velocities = Matrix(k, d);
  for (Eigen::Index i = 0; i < t.ap_velocities.size(); ++i) t.ap_velocities.data()[i] = u(rng);
  t.ap_gripper = Vector(k);
  for (int c = 0; c < k; ++c) t.ap_gripper[c] = coin(rng) ? 1.0 : 0.0;
  return t;
}

Vector random_simplex(int n, Rng& rng) {
  std::exponential_distribution<double> e(1.0);
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = e(rng);
  return v / v.sum();
}

}  // namespace

const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"contraction", "feasibility", "em",   "identity",
                                              "gradient",    "projection",  "alpha"};
  return names;
}

SuiteReport contraction_suite(std::uint64_t seed, int instances, int pairs) {
  Recorder rec("contraction");
  Rng rng(seed);
  double worst_ratio = 0.0;
  double worst_excess = -1.0;
  for (int i = 0; i < instances; ++i) {
    auto mdp = oracle::random_rmdp(rng);
    try {
      double ratio = oracle::check_contraction(mdp, pairs, rng);
      worst_ratio = std::max(worst_ratio, ratio);
      worst_excess = std::max(worst_excess, ratio - mdp.gamma);
    } catch (const oracle::ContractionViolation& e) {
      rec.fail("contraction", e.what(), Json::parse(oracle::rmdp_to_json(mdp)));
    }
    rec.count();
  }
  rec.stats()["pairs"] = static_cast<std::int64_t>(instances) * pairs;
  rec.stats()["operator_applications"] = 2 * static_cast<std::int64_t>(instances) * pairs;
  rec.stats()["max_ratio"] = worst_ratio;
  rec.stats()["max_ratio_minus_gamma"] = worst_excess;
  return rec.finish();
}

SuiteReport feasibility_suite(std::uint64_t seed, int instances) {
  Recorder rec("feasibility");
  Rng rng(seed);
  double max_residual = 0.0;
  double max_kl_excess = -std::numeric_limits<double>::infinity();
  double max_slack_gap = 0.0;
  double max_duality_gap = 0.0;
  for (int i = 0; i < instances; ++i) {
    auto mdp = oracle::random_rmdp(rng);
    auto dump = [&] { return Json::parse(oracle::rmdp_to_json(mdp)); };
    auto vi = oracle::value_iteration(mdp, 1e-10);
    double residual = (oracle::regularized_bellman_apply(mdp, vi.q) - vi.q).cwiseAbs().maxCoeff();
    max_residual = std::max(max_residual, residual);
    rec.at_most("residual", residual, 1e-9, dump);
    for (int s = 0; s < mdp.num_states(); ++s) {
      Vector pi = vi.policy.row(s).transpose();
      Vector b = mdp.prior.row(s).transpose();
      Vector q = vi.q.row(s).transpose();
      double kl = oracle::kl_divergence(pi, b).value;
      max_kl_excess = std::max(max_kl_excess, kl - mdp.epsilon);
      rec.at_most("kl_feasible", kl, mdp.epsilon + 1e-6, dump);
      if (vi.alpha[s] > oracle::kAlphaFloor + 1e-6) {
        double gap = std::abs(kl - mdp.epsilon);
        max_slack_gap = std::max(max_slack_gap, gap);
        rec.at_most("complementary_slackness", gap, 1e-4, dump);
      }
      auto row = oracle::solve_row(q, b, mdp.epsilon);
      double duality = std::abs(row.dual_value - pi.dot(q));
      max_duality_gap = std::max(max_duality_gap, duality);
      rec.at_most("dual_primal_gap", duality, 1e-7, dump);
    }
    rec.count();
  }
  rec.stats()["max_residual"] = max_residual;
  rec.stats()["max_kl_minus_epsilon"] = max_kl_excess;
  rec.stats()["max_active_constraint_gap"] = max_slack_gap;
  rec.stats()["max_dual_primal_gap"] = max_duality_gap;
  return rec.finish();
}

SuiteReport em_suite(std::uint64_t seed, int instances, int iterations) {
  Recorder rec("em");
  Rng rng(seed);
  double worst_drop = 0.0;
  double worst_classical = 0.0;
  for (int i = 0; i < instances; ++i) {
    auto mdp = oracle::random_rmdp(rng);
    auto dump = [&] { return Json::parse(oracle::rmdp_to_json(mdp)); };
    auto em = oracle::em_joint_solve(mdp, iterations);
    for (std::size_t k = 1; k < em.objective.size(); ++k) {
      double drop = em.objective[k - 1] - em.objective[k];
      worst_drop = std::max(worst_drop, drop);
      rec.at_most("monotone", drop, 1e-10, dump);
    }

    auto slack = mdp;
    slack.epsilon = 1e6;
    auto loose = oracle::em_joint_solve(slack, 2);
    double dist = (loose.final_q - oracle::classical_value_iteration(slack, 1e-12)).cwiseAbs().maxCoeff();
    worst_classical = std::max(worst_classical, dist);
    rec.at_most("slack_limit_matches_classical", dist, 1e-6, dump);
    rec.count();
  }
  rec.stats()["iterations"] = iterations;
  rec.stats()["max_objective_drop"] = worst_drop;
  rec.stats()["max_distance_to_classical"] = worst_classical;
  return rec.finish();
}

SuiteReport identity_suite(std::uint64_t seed, int batches) {
  Recorder rec("identity");
  Rng rng(seed);
  dist::ValueSupport support;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> count(2, 64);
  std::uniform_real_distribution<double> temp(0.05, 2.0);
  double worst = 0.0;
  for (int b = 0; b < batches; ++b) {
    int n = count(rng);
    Matrix probs = gaussian(n, support.size(), rng).array().exp();
    probs.array().colwise() /= probs.rowwise().sum().array();
    Vector w = npql::boltzmann_weights(gaussian(n, 1, rng).col(0), temp(rng));
    Vector online = gaussian(support.size(), 1, rng).col(0);
    double r = u(rng);
    double g = u(rng);
    double left = npql::per_sample_cross_entropy(r, g, probs, w, online, support);
    double right = npql::averaged_cross_entropy(r, g, probs, w, online, support);
    double rel = relative_error(left, right, 1e-300);
    worst = std::max(worst, rel);
    rec.at_most("per_sample_equals_averaged", rel, 1e-10, [&] {
      return Json{{"reward", r}, {"discount", g}, {"weights", to_json(w)}, {"online_logits", to_json(online)},
                  {"next_probs", to_json(probs)}};
    });
    rec.count();
  }
  rec.stats()["max_relative_difference"] = worst;
  return rec.finish();
}

SuiteReport gradient_suite(std::uint64_t seed, int instances) {
  Recorder rec("gradient");
  Rng rng(seed);
  const auto cfg = small_agent();
  const int obs_dim = env::kObservationDim;
  const int k = env::kNumAps;
  const int d = env::kActionDim;
  Json worst = Json::object();
  auto note = [&](const std::string& name, double err, const std::function<Json()>& dump) {
    worst[name] = std::max(worst.value(name, 0.0), err);
    rec.at_most(name, err, 1e-4, dump);
  };

  // L^Q and L^ap through the E-step loss with fixed targets.
  for (int done = 0; done < instances;) {
    auto nets = npql::NpqlNetworks::create(obs_dim, k, d, cfg, rng);
    std::vector<replay::NStepTransition> batch;
    for (int i = 0; i < 4; ++i) batch.push_back(random_segment(rng));
    auto e = npql::make_e_batch(batch);
    Matrix targets = npql::npql_targets(e, nets, cfg, rng);
    Matrix phi = npql::features(nets.trunk, e.obs);
    double margin = std::min({relu_margin(nets.trunk, e.obs, true),
                              relu_margin(nets.head_z, npql::z_inputs(phi, e.velocities, e.grippers)),
                              relu_margin(nets.head_ap, phi)});
    if (margin < 1e-3) continue;
    auto dump = [&] { return Json{{"targets", to_json(targets)}, {"obs", to_json(e.obs)}}; };
    auto q_only = npql::e_step_loss_given_targets(e, targets, nets, 0.0);
    auto lq = [&] { return npql::e_step_loss_given_targets(e, targets, nets, 0.0).total; };
    note("loss_q/trunk", gradient_error(nets.trunk.params(), q_only.grad_trunk, lq), dump);
    note("loss_q/head_z", gradient_error(nets.head_z.params(), q_only.grad_z, lq), dump);
    auto both = npql::e_step_loss_given_targets(e, targets, nets, 1.0);
    auto lap = [&] { return npql::e_step_loss_given_targets(e, targets, nets, 1.0).total; };
    note("loss_ap/head_ap", gradient_error(nets.head_ap.params(), both.grad_ap, lap), dump);
    note("loss_ap+q/trunk", gradient_error(nets.trunk.params(), both.grad_trunk, lap), dump);
    ++done;
    rec.count();
  }

  // L^M with respect to the prior head.
  for (int done = 0; done < instances;) {
    auto nets = npql::NpqlNetworks::create(obs_dim, k, d, cfg, rng);
    nets.head_bp.params() += gaussian(nets.head_bp.num_params(), 1, rng, 0.05).col(0);
    Matrix obs = gaussian(3, obs_dim, rng);
    auto samples = npql::draw_m_samples(obs, nets, cfg, rng);
    if (relu_margin(nets.head_bp, samples.phi) < 1e-3) continue;
    const double nu = 0.3;
    auto loss = npql::m_step_loss_given_samples(samples, nets.head_bp, nets.head_ap, k, d, nu, 1.0);
    auto f = [&] { return npql::m_step_loss_given_samples(samples, nets.head_bp, nets.head_ap, k, d, nu, 1.0).total; };
    note("loss_m/head_bp", gradient_error(nets.head_bp.params(), loss.grad_bp, f), [&] { return Json{{"obs", to_json(obs)}}; });
    ++done;
    rec.count();
  }

  // Dual loss: scalar derivative and the alpha head.
  std::uniform_real_distribution<double> alpha_range(0.05, 2.0);
  for (int done = 0; done < instances;) {
    Vector q = gaussian(6, 1, rng).col(0);
    double a = alpha_range(rng);
    double h = 1e-6;
    double fd = (npql::alpha_dual_loss(q, 0.5, a + h).loss - npql::alpha_dual_loss(q, 0.5, a - h).loss) / (2 * h);
    note("alpha_dual/alpha", relative_error(npql::alpha_dual_loss(q, 0.5, a).grad, fd),
         [&] { return Json{{"q", to_json(q)}, {"alpha", a}}; });

    auto nets = npql::NpqlNetworks::create(obs_dim, k, d, cfg, rng);
    Matrix phi = npql::features(nets.trunk, gaussian(4, obs_dim, rng));
    if (relu_margin(nets.head_alpha, phi) < 1e-3) continue;
    std::vector<Vector> qs;
    for (int s = 0; s < 4; ++s) qs.push_back(gaussian(6, 1, rng, 0.2).col(0));
    auto loss = npql::alpha_head_loss(nets.head_alpha, phi, qs, 0.8);
    auto f = [&] { return npql::alpha_head_loss(nets.head_alpha, phi, qs, 0.8).loss; };
    note("alpha_dual/head_alpha", gradient_error(nets.head_alpha.params(), loss.grad, f),
         [&] { return Json{{"phi", to_json(phi)}}; });
    ++done;
    rec.count();
  }
  rec.stats()["max_relative_error"] = worst;
  return rec.finish();
}

SuiteReport projection_suite(std::uint64_t seed, int projections) {
  Recorder rec("projection");
  Rng rng(seed);
  dist::ValueSupport support;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst_mass = 0.0;
  double worst_mean = 0.0;
  int unclamped = 0;
  for (int i = 0; i < projections; ++i) {
    dist::ValueDistribution z{support, random_simplex(support.size(), rng)};
    double discount = u(rng);
    // every other case keeps all shifted atoms inside the support
    double reward = i % 2 == 0 ? u(rng) * support.v_max() * (1.0 - discount) : 2.0 * u(rng) - 0.5;
    auto p = dist::project_target(reward, discount, z);
    auto dump = [&] { return Json{{"reward", reward}, {"discount", discount}, {"probs", to_json(z.probs)}}; };
    double mass = std::abs(p.probs.sum() - 1.0);
    worst_mass = std::max(worst_mass, mass);
    rec.at_most("mass", mass, 1e-9, dump);
    rec.at_most("non_negative", -p.probs.minCoeff(), 0.0, dump);
    bool clamped = reward + discount * support.v_min() < support.v_min() ||
                   reward + discount * support.v_max() > support.v_max();
    if (!clamped) {
      ++unclamped;
      double err = std::abs(dist::dist_mean(p) - (reward + discount * dist::dist_mean(z)));
      worst_mean = std::max(worst_mean, err);
      rec.at_most("mean_within_one_atom", err, support.spacing(), dump);
    }
    rec.count();
  }
  rec.stats()["max_mass_error"] = worst_mass;
  rec.stats()["max_mean_error"] = worst_mean;
  rec.stats()["unclamped_cases"] = unclamped;
  return rec.finish();
}

SuiteReport alpha_suite(std::uint64_t seed, int grid_instances) {
  Recorder rec("alpha");
  Rng rng(seed);

  // Golden-section against a dense grid of the dual.
  const int points = 1000000;
  double worst_grid = 0.0;
  std::uniform_real_distribution<double> qu(-2.0, 2.0);
  std::uniform_real_distribution<double> eu(0.05, 1.0);
  for (int i = 0; i < grid_instances; ++i) {
    Vector q(4);
    for (int a = 0; a < 4; ++a) q[a] = qu(rng);
    Vector b = random_simplex(4, rng);
    double eps = eu(rng);
    double g = oracle::dual_objective(q, b, eps, oracle::solve_alpha(q, b, eps));
    const double lo = std::log(oracle::kAlphaFloor);
    const double hi = std::log(oracle::kAlphaMax);
    double grid_min = std::numeric_limits<double>::infinity();
    for (int p = 0; p < points; ++p) {
      grid_min = std::min(grid_min, oracle::dual_objective(q, b, eps, std::exp(lo + (hi - lo) * p / (points - 1.0))));
    }
    double gap = std::abs(g - grid_min);
    worst_grid = std::max(worst_grid, gap);
    rec.at_most("golden_section_vs_grid", gap, 1e-8,
                [&] { return Json{{"q", to_json(q)}, {"b", to_json(b)}, {"epsilon", eps}}; });
    rec.count();
  }

  // Trained alpha head against per-state golden-section solutions on frozen
  // Q batches. Candidates come from the prior, so b is uniform over them.
  auto cfg = small_agent();
  cfg.head_hidden = {32, 32};
  double worst_head = 0.0;
  auto check_head = [&](const std::vector<Vector>& qs, double eps, const std::string& check) {
    const auto states = static_cast<int>(qs.size());
    auto nets = npql::NpqlNetworks::create(env::kObservationDim, env::kNumAps, env::kActionDim, cfg, rng);
    Matrix phi = npql::features(nets.trunk, gaussian(states, env::kObservationDim, rng));
    auto opt = nn::OptimizerState::for_params(nets.head_alpha.params(), {1e-3});
    for (int step = 0; step < 20000; ++step) {
      nn::adam_step(nets.head_alpha.params(), npql::alpha_head_loss(nets.head_alpha, phi, qs, eps).grad, opt);
    }
    Vector trained = npql::alphas(nets.head_alpha, phi);
    Vector targets(states);
    for (int s = 0; s < states; ++s) {
      const auto n = qs[s].size();
      targets[s] = oracle::solve_alpha(qs[s], Vector::Constant(n, 1.0 / static_cast<double>(n)), eps);
      double rel = std::abs(trained[s] - targets[s]) / targets[s];
      worst_head = std::max(worst_head, rel);
      rec.at_most(check, rel, 0.05, [&] {
        return Json{{"q", to_json(qs[s])}, {"epsilon", eps}, {"trained", trained[s]}, {"golden_section", targets[s]}};
      });
    }
    rec.count();
    rec.stats()[check] = {{"golden_section", to_json(targets)}, {"trained", to_json(trained)}};
  };

  std::vector<Vector> batches;
  std::uniform_real_distribution<double> scale(0.05, 0.5);
  for (int s = 0; s < 8; ++s) batches.push_back(gaussian(100, 1, rng, scale(rng)).col(0));
  check_head(batches, 0.5, "trained_head_random_batches");
  Vector pair(2);
  pair << 0.0, 1.0;
  check_head({pair}, 0.1, "trained_head_two_actions");

  rec.stats()["grid_points"] = points;
  rec.stats()["max_grid_gap"] = worst_grid;
  rec.stats()["max_trained_relative_error"] = worst_head;
  return rec.finish();
}

SuiteReport run_suite(const std::string& name, std::uint64_t seed) {
  if (name == "contraction") return contraction_suite(seed);
  if (name == "feasibility") return feasibility_suite(seed);
  if (name == "em") return em_suite(seed);
  if (name == "identity") return identity_suite(seed);
  if (name == "gradient") return gradient_suite(seed);
  if (name == "projection") return projection_suite(seed);
  if (name == "alpha") return alpha_suite(seed);
  throw cli::UsageError("unknown verify suite '" + name + "'");
}

std::vector<SuiteReport> run_suites(const std::string& selector, std::uint64_t seed) {
  if (selector != "all") return {run_suite(selector, seed)};
  std::vector<SuiteReport> out;
  for (const auto& name : suite_names()) out.push_back(run_suite(name, seed));
  return out;
}

Json report_to_json(const std::vector<SuiteReport>& reports, std::uint64_t seed) {
  Json suites = Json::array();
  bool passed = true;
  for (const auto& r : reports) {
    Json failures = Json::array();
    for (const auto& f : r.failures) failures.push_back({{"check", f.check}, {"detail", f.detail}, {"instance", f.instance}});
    suites.push_back({{"suite", r.suite},
                      {"passed", r.passed},
                      {"cases", r.cases},
                      {"seconds", r.seconds},
                      {"stats", r.stats},
                      {"failures", failures}});
    passed = passed && r.passed;
  }
  return Json{{"seed", seed}, {"passed", passed}, {"suites", suites}};
}

}  // namespace apnpql::verify
