#include "apnpql/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "apnpql/serialize.hpp"

namespace apnpql::baselines {

namespace {

const double kLogSigmaMin = std::log(dist::kSigmaMin);
const double kLogSigmaMax = std::log(dist::kSigmaMax);
constexpr double kLogSqrt2Pi = 0.91893853320467274178;

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

std::vector<dist::HybridAction> uniform_candidates(int n, int d, Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  std::vector<dist::HybridAction> out(n);
  for (auto& a : out) {
    a.velocity.resize(d);
    for (int j = 0; j < d; ++j) a.velocity[j] = u(rng);
    a.gripper = coin(rng) ? dist::kGripperClose : dist::kGripperOpen;
  }
  return out;
}

}  // namespace

Kind parse_kind(const std::string& name) {
  if (name == "ap-mpo") return Kind::kApMpo;
  if (name == "ap-sac") return Kind::kApSac;
  if (name == "sac") return Kind::kSac;
  throw std::invalid_argument("unknown baseline '" + name + "'");
}

std::string kind_name(Kind kind) {
  switch (kind) {
    case Kind::kApMpo:
      return "ap-mpo";
    case Kind::kApSac:
      return "ap-sac";
    case Kind::kSac:
      return "sac";
  }
  return "unknown";
}

GaussianPolicy::GaussianPolicy(int feature_dim, int action_dim, const std::vector<int>& hidden,
                               double log_std_init, Rng& rng)
    : action_dim_(action_dim) {
  std::vector<int> sizes{feature_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(2 * action_dim + 1);
  net_ = nn::Mlp(sizes, rng);
  int last = net_.num_layers() - 1;
  net_.weight(last) *= 0.1;
  net_.bias(last).segment(action_dim, action_dim).setConstant(log_std_init);
}

GaussianParams GaussianPolicy::params_from_output(const Matrix& out, int d) {
  if (out.cols() != 2 * d + 1) throw ShapeError("policy output width mismatch");
  GaussianParams p;
  p.raw_mean = out.leftCols(d);
  p.mean = p.raw_mean.array().tanh();
  p.raw_log_std = out.middleCols(d, d);
  p.log_std = p.raw_log_std.cwiseMax(kLogSigmaMin).cwiseMin(kLogSigmaMax);
  p.grip_logit = out.col(2 * d);
  return p;
}

GaussianParams GaussianPolicy::evaluate(const Matrix& phi) const {
  return params_from_output(net_.forward(phi), action_dim_);
}

double GaussianPolicy::log_prob(const GaussianParams& p, Eigen::Index row, const dist::HybridAction& action) {
  const auto d = p.mean.cols();
  if (action.velocity.size() != d) throw ShapeError("action dimension mismatch");
  double lp = action.gripper == dist::kGripperClose ? log_sigmoid(p.grip_logit[row]) : log_sigmoid(-p.grip_logit[row]);
  for (Eigen::Index j = 0; j < d; ++j) {
    double ls = p.log_std(row, j);
    double z = (action.velocity[j] - p.mean(row, j)) * std::exp(-ls);
    lp += -0.5 * z * z - ls - kLogSqrt2Pi;
  }
  return lp;
}

dist::HybridAction GaussianPolicy::sample(const GaussianParams& p, Eigen::Index row, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  dist::HybridAction a;
  a.velocity.resize(p.mean.cols());
  for (Eigen::Index j = 0; j < p.mean.cols(); ++j) {
    a.velocity[j] = p.mean(row, j) + std::exp(p.log_std(row, j)) * normal(rng);
  }
  a.gripper = uniform(rng) < sigmoid(p.grip_logit[row]) ? dist::kGripperClose : dist::kGripperOpen;
  return dist::clip_action(std::move(a));
}

PolicyLoss mpo_projection_loss(const std::vector<npql::PolicyBatch>& batches, const Matrix& phi,
                               const GaussianPolicy& policy) {
  const auto b = phi.rows();
  if (b == 0 || static_cast<Eigen::Index>(batches.size()) != b) throw ShapeError("MPO batch mismatch");
  const int d = policy.action_dim();
  const double inv_b = 1.0 / static_cast<double>(b);
  auto cache = policy.net().forward_cached(phi);
  auto p = GaussianPolicy::params_from_output(cache.output(), d);
  Matrix upstream = Matrix::Zero(b, 2 * d + 1);
  PolicyLoss out;
  for (Eigen::Index s = 0; s < b; ++s) {
    const auto& pb = batches[s];
    double prob_close = sigmoid(p.grip_logit[s]);
    for (std::size_t i = 0; i < pb.candidates.size(); ++i) {
      double w = pb.weights[static_cast<Eigen::Index>(i)];
      if (w == 0.0) continue;
      const auto& a = pb.candidates[i];
      out.loss -= w * GaussianPolicy::log_prob(p, s, a) * inv_b;
      for (int j = 0; j < d; ++j) {
        double sigma = std::exp(p.log_std(s, j));
        double z = (a.velocity[j] - p.mean(s, j)) / sigma;
        double mu = p.mean(s, j);
        upstream(s, j) -= w * (z / sigma) * (1.0 - mu * mu) * inv_b;
        double raw = p.raw_log_std(s, j);
        if (raw >= kLogSigmaMin && raw <= kLogSigmaMax) upstream(s, d + j) -= w * (z * z - 1.0) * inv_b;
      }
      double g = a.gripper == dist::kGripperClose ? 1.0 : 0.0;
      upstream(s, 2 * d) -= w * (g - prob_close) * inv_b;
    }
  }
  out.grad = policy.net().backward(cache, upstream).params;
  return out;
}

double uniform_log_density(int action_dim) { return -(action_dim + 1) * std::numbers::ln2; }

PolicyLoss sac_projection_loss(const Matrix& phi, const GaussianPolicy& policy, const nn::Mlp& head_z,
                               const std::vector<dist::ApGmmPrior>* priors, const Vector& alpha,
                               const Matrix& noise) {
  const auto b = phi.rows();
  const int d = policy.action_dim();
  const auto f = phi.cols();
  if (b == 0 || alpha.size() != b || noise.rows() != b || noise.cols() != d) throw ShapeError("SAC batch mismatch");
  if (priors && static_cast<Eigen::Index>(priors->size()) != b) throw ShapeError("SAC prior count mismatch");
  const double inv_b = 1.0 / static_cast<double>(b);
  dist::ValueSupport support;

  auto cache = policy.net().forward_cached(phi);
  auto p = GaussianPolicy::params_from_output(cache.output(), d);
  Matrix sigma = p.log_std.array().exp();
  Matrix v = p.mean + sigma.cwiseProduct(noise);
  Matrix vc = v.cwiseMax(-1.0).cwiseMin(1.0);

  // Rows [0, b) evaluate gripper open, rows [b, 2b) gripper closed.
  Matrix zin(2 * b, f + d + 1);
  zin << phi, vc, Vector::Zero(b), phi, vc, Vector::Ones(b);
  auto zc = head_z.forward_cached(zin);
  const Matrix& logits = zc.output();
  Vector m = logits.rowwise().maxCoeff();
  Matrix probs = (logits.colwise() - m).array().exp().matrix();
  probs.array().colwise() /= probs.rowwise().sum().array();
  Vector q = probs * support.atoms();
  Matrix dq_dlogits = probs.array() * (support.atoms().transpose().replicate(2 * b, 1).colwise() - q).array();
  Matrix dq_dinput = head_z.backward(zc, dq_dlogits).inputs;

  Matrix upstream = Matrix::Zero(b, 2 * d + 1);
  PolicyLoss out;
  for (Eigen::Index s = 0; s < b; ++s) {
    double log_n = 0.0;
    for (int j = 0; j < d; ++j) log_n += -0.5 * noise(s, j) * noise(s, j) - p.log_std(s, j) - kLogSqrt2Pi;
    double pc = sigmoid(p.grip_logit[s]);
    double pg[2] = {1.0 - pc, pc};
    double log_pg[2] = {log_sigmoid(-p.grip_logit[s]), log_sigmoid(p.grip_logit[s])};
    double cost[2];
    Vector dv = Vector::Zero(d);
    for (int g = 0; g < 2; ++g) {
      Eigen::Index r = s + g * b;
      double log_b = uniform_log_density(d);
      Vector dlog_b = Vector::Zero(d);
      if (priors) {
        dist::HybridAction a{vc.row(s).transpose(), g};
        log_b = dist::gmm_log_prob_velocity_grad((*priors)[s], a, dlog_b);
      }
      cost[g] = -q[r] + alpha[s] * (log_n + log_pg[g] - log_b);
      dv += pg[g] * (-dq_dinput.row(r).segment(f, d).transpose() - alpha[s] * dlog_b);
    }
    out.loss += (pg[0] * cost[0] + pg[1] * cost[1]) * inv_b;
    for (int j = 0; j < d; ++j) {
      double dvj = std::abs(v(s, j)) <= 1.0 ? dv[j] : 0.0;
      double mu = p.mean(s, j);
      upstream(s, j) = dvj * (1.0 - mu * mu) * inv_b;
      double raw = p.raw_log_std(s, j);
      if (raw >= kLogSigmaMin && raw <= kLogSigmaMax) {
        upstream(s, d + j) = (dvj * sigma(s, j) * noise(s, j) - alpha[s]) * inv_b;
      }
    }
    upstream(s, 2 * d) = pc * (1.0 - pc) * (cost[1] - cost[0]) * inv_b;
  }
  out.grad = policy.net().backward(cache, upstream).params;
  return out;
}

Matrix policy_eval_target(const npql::EBatch& batch, const GaussianPolicy& policy, const npql::NpqlNetworks& nets,
                          const npql::AgentConfig& cfg, Rng& rng) {
  dist::ValueSupport support;
  const auto b = batch.obs.rows();
  Matrix targets(b, support.size());
  std::vector<Eigen::Index> live;
  for (Eigen::Index i = 0; i < b; ++i) {
    if (batch.discounts[i] > 0.0) {
      live.push_back(i);
    } else {
      Vector point = Vector::Zero(support.size());
      point[0] = 1.0;
      Vector row(support.size());
      dist::project_into(batch.rewards[i], 0.0, support, point.data(), row.data());
      targets.row(i) = row.transpose();
    }
  }
  if (live.empty()) return targets;

  const auto n_live = static_cast<Eigen::Index>(live.size());
  Matrix next_obs(n_live, batch.obs.cols());
  for (Eigen::Index r = 0; r < n_live; ++r) next_obs.row(r) = batch.bootstrap_obs.row(live[r]);
  Matrix phi = npql::features(nets.target_trunk, next_obs);
  auto params = policy.evaluate(phi);
  const int n = cfg.n_target;
  std::vector<dist::HybridAction> all;
  std::vector<int> owner;
  all.reserve(static_cast<std::size_t>(n_live) * n);
  owner.reserve(all.capacity());
  for (Eigen::Index r = 0; r < n_live; ++r) {
    for (int i = 0; i < n; ++i) {
      all.push_back(GaussianPolicy::sample(params, r, rng));
      owner.push_back(static_cast<int>(r));
    }
  }
  Matrix probs = npql::z_probs(nets.target_head_z, phi, owner, all);
  Vector uniform = Vector::Constant(n, 1.0 / n);
  for (Eigen::Index r = 0; r < n_live; ++r) {
    Eigen::Index i = live[r];
    targets.row(i) =
        npql::averaged_target(batch.rewards[i], batch.discounts[i], probs.middleRows(r * n, n), uniform, support)
            .transpose();
  }
  return targets;
}

BaselineAgent::BaselineAgent(Kind kind, int obs_dim, int num_aps, int action_dim, npql::AgentConfig cfg, Rng& rng)
    : npql::NpqlAgent(obs_dim, num_aps, action_dim, std::move(cfg), rng),
      kind_(kind),
      policy_(cfg_.feature_dim, action_dim, cfg_.head_hidden, cfg_.log_std_init, rng) {
  nn::AdamConfig c;
  c.learning_rate = cfg_.lr_m;
  opt_policy_ = nn::OptimizerState::for_params(policy_.net().params(), c);
}

std::vector<dist::HybridAction> BaselineAgent::act(const Matrix& obs, Rng& rng) const {
  Matrix phi = npql::features(nets_.trunk, obs);
  auto params = policy_.evaluate(phi);
  std::vector<dist::HybridAction> out;
  out.reserve(obs.rows());
  for (Eigen::Index s = 0; s < obs.rows(); ++s) out.push_back(GaussianPolicy::sample(params, s, rng));
  return out;
}

npql::StepMetrics BaselineAgent::gradient_step(const std::vector<replay::NStepTransition>& batch, Rng& rng) {
  npql::StepMetrics m;
  const int d = nets_.action_dim;
  npql::EBatch e = npql::make_e_batch(batch);
  Matrix targets = policy_eval_target(e, policy_, nets_, cfg_, rng);
  double lambda = uses_prior() ? cfg_.lambda_ap : 0.0;
  auto el = npql::e_step_loss_given_targets(e, targets, nets_, lambda);
  m.skipped += apply_e_step(el, lambda > 0.0);
  m.loss_q = el.loss_q;
  m.loss_ap = el.loss_ap;

  PolicyLoss pl;
  if (uses_prior()) {
    auto samples = npql::draw_m_samples(e.obs, nets_, cfg_, rng);
    std::vector<Vector> qs;
    Vector alpha(samples.batches.size());
    for (std::size_t s = 0; s < samples.batches.size(); ++s) {
      qs.push_back(samples.batches[s].q_values);
      alpha[static_cast<Eigen::Index>(s)] = samples.batches[s].alpha;
    }
    m.alpha_mean = update_alpha(samples.phi, qs, m.skipped).alpha_mean;

    npql::MLoss ml;
    if (kind_ == Kind::kApMpo) {
      pl = mpo_projection_loss(samples.batches, samples.phi, policy_);
      ml = update_prior(samples, m.skipped);
    } else {
      auto priors = npql::build_priors(nets_, samples.phi);
      std::normal_distribution<double> normal(0.0, 1.0);
      Matrix noise(samples.phi.rows(), d);
      for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = normal(rng);
      pl = sac_projection_loss(samples.phi, policy_, nets_.head_z, &priors, alpha, noise);

      // The prior tracks the parametric policy: uniform weights over its samples.
      npql::MSamples from_pi;
      from_pi.phi = samples.phi;
      auto params = policy_.evaluate(samples.phi);
      for (Eigen::Index s = 0; s < samples.phi.rows(); ++s) {
        npql::PolicyBatch pb;
        for (int i = 0; i < cfg_.n_policy; ++i) pb.candidates.push_back(GaussianPolicy::sample(params, s, rng));
        pb.weights = Vector::Constant(cfg_.n_policy, 1.0 / cfg_.n_policy);
        from_pi.batches.push_back(std::move(pb));
      }
      ml = update_prior(from_pi, m.skipped);
    }
    m.prior_entropy = ml.entropy;
  } else {
    Matrix phi = npql::features(nets_.trunk, e.obs);
    Vector alpha = npql::alphas(nets_.head_alpha, phi);
    std::vector<dist::HybridAction> all;
    std::vector<int> owner;
    for (Eigen::Index s = 0; s < phi.rows(); ++s) {
      for (auto& a : uniform_candidates(cfg_.n_policy, d, rng)) {
        all.push_back(std::move(a));
        owner.push_back(static_cast<int>(s));
      }
    }
    dist::ValueSupport support;
    Vector q = npql::z_probs(nets_.head_z, phi, owner, all) * support.atoms();
    std::vector<Vector> qs;
    for (Eigen::Index s = 0; s < phi.rows(); ++s) qs.push_back(q.segment(s * cfg_.n_policy, cfg_.n_policy));
    m.alpha_mean = update_alpha(phi, qs, m.skipped).alpha_mean;

    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix noise(phi.rows(), d);
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = normal(rng);
    pl = sac_projection_loss(phi, policy_, nets_.head_z, nullptr, alpha, noise);
    m.prior_entropy = -uniform_log_density(d);
  }

  m.loss_m = pl.loss;
  if (!std::isfinite(pl.loss) || !nn::adam_step(policy_.net().params(), pl.grad, opt_policy_)) ++m.skipped;
  m.nu = nu_;
  update_targets();
  return m;
}

void BaselineAgent::save_extra(std::ostream& out) const {
  nn::save_mlp(out, policy_.net());
  nn::save_optimizer(out, opt_policy_);
}

void BaselineAgent::load_extra(std::istream& in) {
  nn::Mlp loaded = nn::load_mlp(in);
  if (loaded.layer_sizes() != policy_.net().layer_sizes()) {
    throw io::FormatError("checkpoint policy network has a different architecture");
  }
  policy_.net() = std::move(loaded);
  auto opt = nn::load_optimizer(in);
  if (opt.first_moment.size() != policy_.net().num_params()) throw io::FormatError("policy optimizer size mismatch");
  opt_policy_ = std::move(opt);
}

}  // namespace apnpql::baselines
