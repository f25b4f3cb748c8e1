#include "apnpql/npql.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace apnpql::npql {

namespace {

const double kLogSigmaMin = std::log(dist::kSigmaMin);
const double kLogSigmaMax = std::log(dist::kSigmaMax);

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double inverse_softplus(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

double log_sum_exp(const Vector& x) {
  double m = x.maxCoeff();
  return m + std::log((x.array() - m).exp().sum());
}

Matrix row_softmax(const Matrix& logits) {
  Vector m = logits.rowwise().maxCoeff();
  Matrix e = (logits.colwise() - m).array().exp().matrix();
  Vector s = e.rowwise().sum();
  return e.array().colwise() / s.array();
}

Matrix row_log_softmax(const Matrix& logits) {
  Vector m = logits.rowwise().maxCoeff();
  Matrix shifted = logits.colwise() - m;
  Vector lse = shifted.array().exp().rowwise().sum().log().matrix();
  return shifted.colwise() - lse;
}

std::vector<int> with_ends(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> sizes{in};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out);
  return sizes;
}

void scale_last_layer(nn::Mlp& mlp, double scale) { mlp.weight(mlp.num_layers() - 1) *= scale; }

void require_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument(std::string("agent.") + name + " must be positive");
}

}  // namespace

void AgentConfig::validate() const {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("agent.gamma must lie in [0, 1)");
  require_positive(epsilon, "epsilon");
  require_positive(lr_e, "lr_e");
  require_positive(lr_alpha, "lr_alpha");
  require_positive(lr_m, "lr_m");
  require_positive(lr_nu, "lr_nu");
  require_positive(alpha_init, "alpha_init");
  if (!(polyak > 0.0 && polyak <= 1.0)) throw std::invalid_argument("agent.polyak must lie in (0, 1]");
  if (!(lambda_ap >= 0.0)) throw std::invalid_argument("agent.lambda_ap must be non-negative");
  if (n_policy < 1) throw std::invalid_argument("agent.n_policy must be >= 1");
  if (n_target < 1) throw std::invalid_argument("agent.n_target must be >= 1");
  if (n_step < 1) throw std::invalid_argument("agent.n_step must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("agent.batch_size must be >= 1");
  if (!(expert_fraction >= 0.0 && expert_fraction <= 1.0)) {
    throw std::invalid_argument("agent.expert_fraction must lie in [0, 1]");
  }
  if (!std::isfinite(entropy_sign)) throw std::invalid_argument("agent.entropy_sign must be finite");
  if (epsilon_nu && !std::isfinite(*epsilon_nu)) throw std::invalid_argument("agent.epsilon_nu must be finite");
  if (!(nu_init >= 0.0)) throw std::invalid_argument("agent.nu_init must be non-negative");
  if (feature_dim < 1) throw std::invalid_argument("agent.feature_dim must be >= 1");
  for (int h : trunk_hidden) {
    if (h < 1) throw std::invalid_argument("agent.trunk_hidden entries must be >= 1");
  }
  for (int h : head_hidden) {
    if (h < 1) throw std::invalid_argument("agent.head_hidden entries must be >= 1");
  }
}

NpqlNetworks NpqlNetworks::create(int obs_dim, int num_aps, int action_dim, const AgentConfig& cfg, Rng& rng) {
  cfg.validate();
  if (obs_dim < 1 || num_aps < 1 || action_dim < 1) throw std::invalid_argument("network dimensions must be positive");
  const int f = cfg.feature_dim;
  const int k = num_aps;
  const int d = action_dim;
  NpqlNetworks n;
  n.num_aps = k;
  n.action_dim = d;
  n.trunk = nn::Mlp(with_ends(obs_dim, cfg.trunk_hidden, f), rng);
  n.head_bp = nn::Mlp(with_ends(f, cfg.head_hidden, k + k * d + k), rng);
  n.head_ap = nn::Mlp(with_ends(f, cfg.head_hidden, k * d + k), rng);
  n.head_z = nn::Mlp(with_ends(f + d + 1, cfg.head_hidden, dist::kNumAtoms), rng);
  n.head_alpha = nn::Mlp(with_ends(f, cfg.head_hidden, 1), rng);

  // Start from a near-uniform mixture with moderate spread and the requested
  // temperature rather than whatever the random last layer produces.
  scale_last_layer(n.head_bp, 0.1);
  n.head_bp.bias(n.head_bp.num_layers() - 1).segment(k, k * d).setConstant(cfg.log_std_init);
  scale_last_layer(n.head_alpha, 0.1);
  n.head_alpha.bias(n.head_alpha.num_layers() - 1)[0] = inverse_softplus(std::max(cfg.alpha_init - kAlphaFloor, 1e-6));

  n.target_trunk = n.trunk;
  n.target_head_z = n.head_z;
  return n;
}

Matrix features(const nn::Mlp& trunk, const Matrix& obs) { return trunk.forward(obs).cwiseMax(0.0); }

double alpha_from_raw(double raw) { return softplus(raw) + kAlphaFloor; }

Vector alphas(const nn::Mlp& head_alpha, const Matrix& phi) {
  Matrix raw = head_alpha.forward(phi);
  return raw.col(0).unaryExpr([](double x) { return alpha_from_raw(x); });
}

dist::ApGmmPrior prior_from_heads(const Eigen::Ref<const Eigen::RowVectorXd>& bp_out,
                                  const Eigen::Ref<const Eigen::RowVectorXd>& ap_out, int num_aps, int action_dim) {
  const int k = num_aps;
  const int d = action_dim;
  if (bp_out.size() != 2 * k + k * d || ap_out.size() < k * d) throw ShapeError("head outputs do not match K and d");
  dist::ApGmmPrior p;
  p.means.resize(k, d);
  p.log_stds.resize(k, d);
  for (int c = 0; c < k; ++c) {
    for (int j = 0; j < d; ++j) {
      p.means(c, j) = std::clamp(ap_out[c * d + j], -1.0, 1.0);
      p.log_stds(c, j) = std::clamp(bp_out[k + c * d + j], kLogSigmaMin, kLogSigmaMax);
    }
  }
  p.mixture_logits = bp_out.head(k).transpose();
  p.gripper_logits = bp_out.tail(k).transpose();
  return p;
}

dist::ApGmmPrior build_prior(const NpqlNetworks& nets, const Vector& obs) {
  if (obs.size() != nets.obs_dim()) {
    throw ShapeError("observation has " + std::to_string(obs.size()) + " entries, expected " +
                     std::to_string(nets.obs_dim()));
  }
  Matrix phi = features(nets.trunk, obs.transpose());
  Matrix bp = nets.head_bp.forward(phi);
  Matrix ap = nets.head_ap.forward(phi);
  if (!bp.allFinite() || !ap.allFinite()) {
    throw std::domain_error("non-finite prior head output (bp finite: " + std::to_string(bp.allFinite()) +
                            ", ap finite: " + std::to_string(ap.allFinite()) + ")");
  }
  return prior_from_heads(bp.row(0), ap.row(0), nets.num_aps, nets.action_dim);
}

std::vector<dist::ApGmmPrior> build_priors(const NpqlNetworks& nets, const Matrix& phi) {
  Matrix bp = nets.head_bp.forward(phi);
  Matrix ap = nets.head_ap.forward(phi);
  if (!bp.allFinite() || !ap.allFinite()) throw std::domain_error("non-finite prior head output");
  std::vector<dist::ApGmmPrior> out;
  out.reserve(phi.rows());
  for (Eigen::Index s = 0; s < phi.rows(); ++s) {
    out.push_back(prior_from_heads(bp.row(s), ap.row(s), nets.num_aps, nets.action_dim));
  }
  return out;
}

Matrix z_probs(const nn::Mlp& head_z, const Matrix& phi, const std::vector<int>& owner,
               const std::vector<dist::HybridAction>& candidates) {
  const auto f = phi.cols();
  const auto n = static_cast<Eigen::Index>(candidates.size());
  if (owner.size() != candidates.size()) throw ShapeError("owner and candidate counts differ");
  if (n == 0) return Matrix(0, head_z.output_dim());
  const Eigen::Index d = candidates.front().velocity.size();
  if (head_z.input_dim() != f + d + 1) throw ShapeError("head_z input does not match [phi | action]");

  auto w = head_z.weight(0);
  Matrix state_part = phi * w.topRows(f);
  Matrix action(n, d + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    action.row(i).head(d) = candidates[i].velocity.transpose();
    action(i, d) = static_cast<double>(candidates[i].gripper);
  }
  Matrix pre = action * w.bottomRows(d + 1);
  auto b = head_z.bias(0);
  for (Eigen::Index i = 0; i < n; ++i) pre.row(i) += state_part.row(owner[i]) + b.transpose();
  Matrix logits;
  if (head_z.num_layers() == 1) {
    logits = std::move(pre);
  } else {
    logits = head_z.forward_from(1, pre.cwiseMax(0.0));
  }
  return row_softmax(logits);
}

Vector boltzmann_weights(const Vector& q_values, double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("boltzmann_weights needs alpha > 0");
  if (q_values.size() == 0) throw std::invalid_argument("boltzmann_weights needs at least one value");
  Vector x = q_values / alpha;
  Vector w = (x.array() - x.maxCoeff()).exp();
  return w / w.sum();
}

dist::HybridAction sample_action(const PolicyBatch& pb, Rng& rng) {
  if (pb.candidates.empty() || pb.weights.size() != static_cast<Eigen::Index>(pb.candidates.size())) {
    throw std::invalid_argument("sample_action needs weights aligned with candidates");
  }
  std::discrete_distribution<std::size_t> pick(pb.weights.data(), pb.weights.data() + pb.weights.size());
  return pb.candidates[pick(rng)];
}

double expected_under_q(const Vector& values, const PolicyBatch& pb) {
  if (values.size() != pb.weights.size()) throw ShapeError("values are not aligned with the policy batch");
  return values.dot(pb.weights);
}

std::vector<PolicyBatch> make_policy_batches(const nn::Mlp& head_z, const Matrix& phi,
                                             const std::vector<dist::ApGmmPrior>& priors, const Vector& alpha,
                                             int n, Rng& rng, Matrix* probs_out) {
  const auto states = static_cast<int>(priors.size());
  if (phi.rows() != states || alpha.size() != states) throw ShapeError("priors, features and alphas disagree");
  std::vector<PolicyBatch> out(states);
  std::vector<dist::HybridAction> all;
  std::vector<int> owner;
  all.reserve(static_cast<std::size_t>(states) * n);
  owner.reserve(all.capacity());
  for (int s = 0; s < states; ++s) {
    auto samples = dist::gmm_sample(priors[s], n, rng);
    out[s].prior_log_probs = std::move(samples.log_probs);
    for (auto& a : samples.actions) {
      all.push_back(a);
      owner.push_back(s);
    }
    out[s].candidates = std::move(samples.actions);
  }
  Matrix probs = z_probs(head_z, phi, owner, all);
  dist::ValueSupport support;
  Vector q = probs * support.atoms();
  for (int s = 0; s < states; ++s) {
    out[s].q_values = q.segment(static_cast<Eigen::Index>(s) * n, n);
    out[s].alpha = alpha[s];
    out[s].weights = boltzmann_weights(out[s].q_values, alpha[s]);
  }
  if (probs_out) *probs_out = std::move(probs);
  return out;
}

AlphaDual alpha_dual_loss(const Vector& q_values, double eps, double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha_dual_loss needs alpha > 0");
  if (q_values.size() == 0) throw std::invalid_argument("alpha_dual_loss needs samples");
  const double n = static_cast<double>(q_values.size());
  Vector x = q_values / alpha;
  double lme = log_sum_exp(x) - std::log(n);
  Vector w = (x.array() - x.maxCoeff()).exp();
  w /= w.sum();
  AlphaDual out;
  out.loss = alpha * eps + alpha * lme;
  out.grad = eps + lme - w.dot(q_values) / alpha;
  return out;
}

AlphaHeadLoss alpha_head_loss(const nn::Mlp& head_alpha, const Matrix& phi, const std::vector<Vector>& q_values,
                              double eps) {
  const auto b = phi.rows();
  if (b == 0 || static_cast<Eigen::Index>(q_values.size()) != b) throw ShapeError("alpha loss batch mismatch");
  auto cache = head_alpha.forward_cached(phi);
  Matrix upstream(b, 1);
  AlphaHeadLoss out;
  for (Eigen::Index s = 0; s < b; ++s) {
    double raw = cache.output()(s, 0);
    double a = alpha_from_raw(raw);
    auto dual = alpha_dual_loss(q_values[s], eps, a);
    out.loss += dual.loss / static_cast<double>(b);
    out.alpha_mean += a / static_cast<double>(b);
    upstream(s, 0) = dual.grad * sigmoid(raw) / static_cast<double>(b);
  }
  out.grad = head_alpha.backward(cache, upstream).params;
  return out;
}

EBatch make_e_batch(const std::vector<replay::NStepTransition>& batch) {
  if (batch.empty()) throw std::invalid_argument("empty training batch");
  const auto b = static_cast<Eigen::Index>(batch.size());
  const auto& first = batch.front();
  const auto obs_dim = first.obs.size();
  const auto d = first.action.velocity.size();
  const auto k = first.ap_velocities.rows();
  EBatch e;
  e.obs.resize(b, obs_dim);
  e.bootstrap_obs.resize(b, obs_dim);
  e.velocities.resize(b, d);
  e.grippers.resize(b);
  e.rewards.resize(b);
  e.discounts.resize(b);
  e.ap_means.resize(b, k * first.ap_velocities.cols());
  e.ap_gripper.resize(b, k);
  for (Eigen::Index i = 0; i < b; ++i) {
    const auto& t = batch[i];
    if (t.obs.size() != obs_dim || t.bootstrap_obs.size() != obs_dim || t.action.velocity.size() != d ||
        t.ap_velocities.rows() != k || t.ap_gripper.size() != k) {
      throw ShapeError("inconsistent transition shapes in batch");
    }
    e.obs.row(i) = t.obs.transpose();
    e.bootstrap_obs.row(i) = t.bootstrap_obs.transpose();
    e.velocities.row(i) = t.action.velocity.transpose();
    e.grippers[i] = t.action.gripper;
    e.rewards[i] = t.reward;
    e.discounts[i] = t.discount;
    for (Eigen::Index c = 0; c < k; ++c) {
      e.ap_means.row(i).segment(c * d, d) = t.ap_velocities.row(c);
    }
    e.ap_gripper.row(i) = t.ap_gripper.transpose();
  }
  return e;
}

Matrix z_inputs(const Matrix& phi, const Matrix& velocities, const Vector& grippers) {
  Matrix x(phi.rows(), phi.cols() + velocities.cols() + 1);
  x << phi, velocities, grippers;
  return x;
}

Vector averaged_target(double reward, double discount, const Matrix& next_probs, const Vector& weights,
                       const dist::ValueSupport& support) {
  Vector mixed = next_probs.transpose() * weights;
  Vector out(support.size());
  dist::project_into(reward, discount, support, mixed.data(), out.data());
  return out;
}

Matrix npql_targets(const EBatch& batch, const NpqlNetworks& nets, const AgentConfig& cfg, Rng& rng) {
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

  Matrix next_obs(static_cast<Eigen::Index>(live.size()), batch.obs.cols());
  for (std::size_t r = 0; r < live.size(); ++r) next_obs.row(static_cast<Eigen::Index>(r)) = batch.bootstrap_obs.row(live[r]);
  Matrix phi = features(nets.target_trunk, next_obs);
  auto priors = build_priors(nets, phi);
  Vector alpha = alphas(nets.head_alpha, phi);
  Matrix probs;
  auto pbs = make_policy_batches(nets.target_head_z, phi, priors, alpha, cfg.n_target, rng, &probs);
  const Eigen::Index n = cfg.n_target;
  for (std::size_t r = 0; r < live.size(); ++r) {
    Eigen::Index i = live[r];
    Matrix block = probs.middleRows(static_cast<Eigen::Index>(r) * n, n);
    targets.row(i) = averaged_target(batch.rewards[i], batch.discounts[i], block, pbs[r].weights, support).transpose();
  }
  return targets;
}

ELoss e_step_loss_given_targets(const EBatch& batch, const Matrix& targets, const NpqlNetworks& nets,
                                double lambda_ap) {
  const auto b = batch.obs.rows();
  if (b == 0) throw std::invalid_argument("empty training batch");
  if (targets.rows() != b || targets.cols() != nets.head_z.output_dim()) throw ShapeError("target shape mismatch");
  const double inv_b = 1.0 / static_cast<double>(b);
  const auto f = nets.feature_dim();

  auto trunk_cache = nets.trunk.forward_cached(batch.obs);
  Matrix phi = trunk_cache.output().cwiseMax(0.0);

  ELoss out;
  auto z_cache = nets.head_z.forward_cached(z_inputs(phi, batch.velocities, batch.grippers));
  Matrix log_p = row_log_softmax(z_cache.output());
  out.loss_q = -(targets.array() * log_p.array()).sum() * inv_b;
  Vector target_mass = targets.rowwise().sum();
  Matrix dlogits = (log_p.array().exp().colwise() * target_mass.array() - targets.array()).matrix() * inv_b;
  auto gz = nets.head_z.backward(z_cache, dlogits);
  out.grad_z = std::move(gz.params);
  Matrix dphi = gz.inputs.leftCols(f);

  out.grad_ap = Vector::Zero(nets.head_ap.num_params());
  if (lambda_ap > 0.0) {
    const int k = nets.num_aps;
    const int kd = k * nets.action_dim;
    if (batch.ap_means.cols() != kd || batch.ap_gripper.cols() != k) throw ShapeError("AP label shape mismatch");
    auto ap_cache = nets.head_ap.forward_cached(phi);
    const Matrix& ap = ap_cache.output();
    Matrix diff = ap.leftCols(kd) - batch.ap_means;
    double mse = diff.squaredNorm() / static_cast<double>(b * kd);
    double bce = 0.0;
    Matrix upstream(b, kd + k);
    upstream.leftCols(kd) = lambda_ap * 2.0 * diff / static_cast<double>(b * kd);
    for (Eigen::Index i = 0; i < b; ++i) {
      for (int c = 0; c < k; ++c) {
        double l = ap(i, kd + c);
        double y = batch.ap_gripper(i, c);
        bce += y * softplus(-l) + (1.0 - y) * softplus(l);
        upstream(i, kd + c) = lambda_ap * (sigmoid(l) - y) / static_cast<double>(b * k);
      }
    }
    out.loss_ap = mse + bce / static_cast<double>(b * k);
    auto ga = nets.head_ap.backward(ap_cache, upstream);
    out.grad_ap = std::move(ga.params);
    dphi += ga.inputs;
  }

  Matrix dpre = dphi.cwiseProduct((trunk_cache.output().array() > 0.0).cast<double>().matrix());
  out.grad_trunk = nets.trunk.backward(trunk_cache, dpre).params;
  out.total = out.loss_q + lambda_ap * out.loss_ap;
  return out;
}

ELoss e_step_loss(const std::vector<replay::NStepTransition>& batch, const NpqlNetworks& nets,
                  const AgentConfig& cfg, Rng& rng) {
  EBatch e = make_e_batch(batch);
  Matrix targets = npql_targets(e, nets, cfg, rng);
  return e_step_loss_given_targets(e, targets, nets, cfg.lambda_ap);
}

double per_sample_cross_entropy(double reward, double discount, const Matrix& next_probs, const Vector& weights,
                                const Vector& online_logits, const dist::ValueSupport& support) {
  Vector log_p = row_log_softmax(online_logits.transpose()).transpose();
  Vector projected(support.size());
  double total = 0.0;
  for (Eigen::Index i = 0; i < next_probs.rows(); ++i) {
    Vector row = next_probs.row(i).transpose();
    dist::project_into(reward, discount, support, row.data(), projected.data());
    total += weights[i] * -projected.dot(log_p);
  }
  return total;
}

double averaged_cross_entropy(double reward, double discount, const Matrix& next_probs, const Vector& weights,
                              const Vector& online_logits, const dist::ValueSupport& support) {
  Vector log_p = row_log_softmax(online_logits.transpose()).transpose();
  return -averaged_target(reward, discount, next_probs, weights, support).dot(log_p);
}

MSamples draw_m_samples(const Matrix& obs, const NpqlNetworks& nets, const AgentConfig& cfg, Rng& rng) {
  MSamples s;
  s.phi = features(nets.trunk, obs);
  auto priors = build_priors(nets, s.phi);
  Vector alpha = alphas(nets.head_alpha, s.phi);
  s.batches = make_policy_batches(nets.head_z, s.phi, priors, alpha, cfg.n_policy, rng);
  return s;
}

MLoss m_step_loss_given_samples(const MSamples& samples, const nn::Mlp& head_bp, const nn::Mlp& head_ap,
                                int num_aps, int action_dim, double nu, double entropy_sign) {
  const auto b = samples.phi.rows();
  if (b == 0 || static_cast<Eigen::Index>(samples.batches.size()) != b) throw ShapeError("M-step batch mismatch");
  const int k = num_aps;
  const int d = action_dim;
  const double inv_b = 1.0 / static_cast<double>(b);
  auto cache = head_bp.forward_cached(samples.phi);
  const Matrix& bp = cache.output();
  Matrix ap = head_ap.forward(samples.phi);

  MLoss out;
  Matrix upstream = Matrix::Zero(b, bp.cols());
  for (Eigen::Index s = 0; s < b; ++s) {
    auto prior = prior_from_heads(bp.row(s), ap.row(s), k, d);
    auto grad = dist::PriorGradient::zeros_like(prior);
    const auto& pb = samples.batches[s];
    double ce = 0.0;
    for (std::size_t i = 0; i < pb.candidates.size(); ++i) {
      double w = pb.weights[static_cast<Eigen::Index>(i)];
      if (w == 0.0) continue;
      ce -= w * dist::gmm_log_prob(prior, pb.candidates[i], grad, -w);
    }
    auto h = dist::gmm_entropy_surrogate(prior);
    double coef = -entropy_sign * nu;
    out.cross_entropy += ce * inv_b;
    out.entropy += h.value * inv_b;
    out.total += (ce + coef * h.value) * inv_b;

    for (int c = 0; c < k; ++c) {
      upstream(s, c) = (grad.mixture_logits[c] + coef * h.grad.mixture_logits[c]) * inv_b;
      upstream(s, k + k * d + c) = (grad.gripper_logits[c] + coef * h.grad.gripper_logits[c]) * inv_b;
      for (int j = 0; j < d; ++j) {
        double raw = bp(s, k + c * d + j);
        bool inside = raw >= kLogSigmaMin && raw <= kLogSigmaMax;
        upstream(s, k + c * d + j) = inside ? (grad.log_stds(c, j) + coef * h.grad.log_stds(c, j)) * inv_b : 0.0;
      }
    }
  }
  out.grad_bp = head_bp.backward(cache, upstream).params;
  return out;
}

MLoss m_step_loss(const Matrix& obs, const NpqlNetworks& nets, const AgentConfig& cfg, double nu, Rng& rng) {
  auto samples = draw_m_samples(obs, nets, cfg, rng);
  return m_step_loss_given_samples(samples, nets.head_bp, nets.head_ap, nets.num_aps, nets.action_dim, nu,
                                   cfg.entropy_sign);
}

double nu_dual_update(double entropy_estimate, double eps_nu, double lr_nu, double nu) {
  return std::max(0.0, nu - lr_nu * (entropy_estimate - eps_nu));
}

double mean_prior_entropy(const NpqlNetworks& nets, const Matrix& phi) {
  auto priors = build_priors(nets, phi);
  double total = 0.0;
  for (const auto& p : priors) total += dist::gmm_entropy_surrogate(p).value;
  return priors.empty() ? 0.0 : total / static_cast<double>(priors.size());
}

}  // namespace apnpql::npql
