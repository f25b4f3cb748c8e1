#include "apnpql/dist.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace apnpql::dist {

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // 0.5 * log(2 pi)

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

/// log P(gripper | logit)
double log_bernoulli(int gripper, double logit) {
  return gripper == kGripperClose ? -softplus(-logit) : -softplus(logit);
}

double bernoulli_entropy(double logit) {
  double p = sigmoid(logit);
  // -p log p - (1-p) log(1-p), written in terms of softplus for stability
  return p * softplus(-logit) + (1.0 - p) * softplus(logit);
}

Vector softmax(const Vector& logits) {
  Vector w = (logits.array() - logits.maxCoeff()).exp();
  return w / w.sum();
}

void check_action(const ApGmmPrior& prior, const HybridAction& action) {
  if (action.velocity.size() != prior.action_dim()) {
    throw ShapeError("action has " + std::to_string(action.velocity.size()) + " velocity dims, prior has " +
                     std::to_string(prior.action_dim()));
  }
}

}  // namespace

HybridAction clip_action(HybridAction action) {
  action.velocity = action.velocity.cwiseMax(-1.0).cwiseMin(1.0);
  action.gripper = action.gripper == kGripperClose ? kGripperClose : kGripperOpen;
  return action;
}

Vector ApGmmPrior::weights() const { return softmax(mixture_logits); }

Vector ApGmmPrior::close_probs() const { return gripper_logits.unaryExpr([](double l) { return sigmoid(l); }); }

void ApGmmPrior::validate() const {
  auto k = means.rows();
  if (k == 0 || means.cols() == 0) throw RejectedPrior("prior has no components");
  if (log_stds.rows() != k || log_stds.cols() != means.cols() || mixture_logits.size() != k ||
      gripper_logits.size() != k) {
    throw RejectedPrior("prior parameter shapes are inconsistent");
  }
  if (!means.allFinite() || !log_stds.allFinite() || !mixture_logits.allFinite() ||
      !gripper_logits.allFinite()) {
    throw RejectedPrior("prior has non-finite parameters");
  }
}

PriorGradient PriorGradient::zeros_like(const ApGmmPrior& prior) {
  return {Matrix::Zero(prior.log_stds.rows(), prior.log_stds.cols()),
          Vector::Zero(prior.mixture_logits.size()), Vector::Zero(prior.gripper_logits.size())};
}

PriorSamples gmm_sample(const ApGmmPrior& prior, int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("gmm_sample needs n >= 1");
  prior.validate();
  const int k_count = prior.num_components();
  const int d = prior.action_dim();
  Vector w = prior.weights();
  Vector p_close = prior.close_probs();
  Matrix stds = prior.log_stds.array().exp();

  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  PriorSamples out;
  out.actions.reserve(n);
  out.components.reserve(n);
  out.log_probs.resize(n);
  for (int i = 0; i < n; ++i) {
    double u = uniform(rng);
    int k = 0;
    double acc = w[0];
    while (u >= acc && k + 1 < k_count) acc += w[++k];

    HybridAction a;
    a.velocity.resize(d);
    for (int j = 0; j < d; ++j) a.velocity[j] = prior.means(k, j) + stds(k, j) * normal(rng);
    a.gripper = uniform(rng) < p_close[k] ? kGripperClose : kGripperOpen;

    out.log_probs[i] = gmm_log_prob(prior, a);
    out.components.push_back(k);
    out.actions.push_back(clip_action(std::move(a)));
  }
  return out;
}

double gmm_log_prob(const ApGmmPrior& prior, const HybridAction& action) {
  check_action(prior, action);
  const int k_count = prior.num_components();
  Vector log_w = prior.mixture_logits.array() - prior.mixture_logits.maxCoeff();
  log_w.array() -= std::log(log_w.array().exp().sum());
  Vector terms(k_count);
  for (int k = 0; k < k_count; ++k) {
    double t = log_w[k] + log_bernoulli(action.gripper, prior.gripper_logits[k]);
    for (int j = 0; j < prior.action_dim(); ++j) {
      double ls = prior.log_stds(k, j);
      double z = (action.velocity[j] - prior.means(k, j)) * std::exp(-ls);
      t += -0.5 * z * z - ls - kLogSqrt2Pi;
    }
    terms[k] = t;
  }
  double m = terms.maxCoeff();
  return m + std::log((terms.array() - m).exp().sum());
}

double gmm_log_prob(const ApGmmPrior& prior, const HybridAction& action, PriorGradient& grad, double scale) {
  check_action(prior, action);
  const int k_count = prior.num_components();
  const int d = prior.action_dim();
  Vector w = prior.weights();
  Vector log_w = w.array().log();
  Vector terms(k_count);
  Matrix z2(k_count, d);
  for (int k = 0; k < k_count; ++k) {
    double t = log_w[k] + log_bernoulli(action.gripper, prior.gripper_logits[k]);
    for (int j = 0; j < d; ++j) {
      double ls = prior.log_stds(k, j);
      double z = (action.velocity[j] - prior.means(k, j)) * std::exp(-ls);
      z2(k, j) = z * z;
      t += -0.5 * z * z - ls - kLogSqrt2Pi;
    }
    terms[k] = t;
  }
  double m = terms.maxCoeff();
  Vector resp = (terms.array() - m).exp();
  double total = resp.sum();
  resp /= total;
  double g = action.gripper == kGripperClose ? 1.0 : 0.0;
  for (int k = 0; k < k_count; ++k) {
    for (int j = 0; j < d; ++j) grad.log_stds(k, j) += scale * resp[k] * (z2(k, j) - 1.0);
    grad.mixture_logits[k] += scale * (resp[k] - w[k]);
    grad.gripper_logits[k] += scale * resp[k] * (g - sigmoid(prior.gripper_logits[k]));
  }
  return m + std::log(total);
}

double gmm_log_prob_velocity_grad(const ApGmmPrior& prior, const HybridAction& action, Vector& dvelocity) {
  check_action(prior, action);
  const int k_count = prior.num_components();
  const int d = prior.action_dim();
  Vector log_w = prior.mixture_logits.array() - prior.mixture_logits.maxCoeff();
  log_w.array() -= std::log(log_w.array().exp().sum());
  Vector terms(k_count);
  Matrix slope(k_count, d);  // d/dv of each component's log density
  for (int k = 0; k < k_count; ++k) {
    double t = log_w[k] + log_bernoulli(action.gripper, prior.gripper_logits[k]);
    for (int j = 0; j < d; ++j) {
      double ls = prior.log_stds(k, j);
      double inv = std::exp(-ls);
      double z = (action.velocity[j] - prior.means(k, j)) * inv;
      slope(k, j) = -z * inv;
      t += -0.5 * z * z - ls - kLogSqrt2Pi;
    }
    terms[k] = t;
  }
  double m = terms.maxCoeff();
  Vector resp = (terms.array() - m).exp();
  double total = resp.sum();
  resp /= total;
  dvelocity = slope.transpose() * resp;
  return m + std::log(total);
}

EntropySurrogate gmm_entropy_surrogate(const ApGmmPrior& prior) {
  prior.validate();
  const int k_count = prior.num_components();
  const int d = prior.action_dim();
  const double gauss_const = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);
  Vector w = prior.weights();
  EntropySurrogate out;
  out.grad = PriorGradient::zeros_like(prior);

  Vector comp(k_count);  // per-component entropy c_k
  for (int k = 0; k < k_count; ++k) {
    comp[k] = d * gauss_const + prior.log_stds.row(k).sum() + bernoulli_entropy(prior.gripper_logits[k]);
  }
  Vector f = comp.array() - w.array().log();
  out.value = w.dot(f);

  double mean_f = out.value;
  for (int k = 0; k < k_count; ++k) {
    out.grad.log_stds.row(k).setConstant(w[k]);
    out.grad.mixture_logits[k] = w[k] * (f[k] - mean_f);
    double l = prior.gripper_logits[k];
    double p = sigmoid(l);
    out.grad.gripper_logits[k] = w[k] * (-l * p * (1.0 - p));
  }
  return out;
}

ValueSupport::ValueSupport(double v_min, double v_max, int num_atoms) : v_min_(v_min), v_max_(v_max) {
  if (num_atoms < 2 || !(v_max > v_min)) throw std::invalid_argument("invalid value support");
  spacing_ = (v_max - v_min) / (num_atoms - 1);
  atoms_.resize(num_atoms);
  for (int j = 0; j < num_atoms; ++j) atoms_[j] = v_min + spacing_ * j;
  atoms_[num_atoms - 1] = v_max;
}

ValueDistribution ValueDistribution::point_mass(const ValueSupport& support, int atom) {
  ValueDistribution z{support, Vector::Zero(support.size())};
  z.probs[atom] = 1.0;
  return z;
}

void project_into(double reward, double discount, const ValueSupport& support, const double* probs,
                  double* out) {
  const int n = support.size();
  const double v_min = support.v_min();
  const double v_max = support.v_max();
  const double dz = support.spacing();
  std::fill(out, out + n, 0.0);
  for (int j = 0; j < n; ++j) {
    if (probs[j] == 0.0) continue;
    double tz = std::clamp(reward + discount * support.atoms()[j], v_min, v_max);
    double b = (tz - v_min) / dz;
    double lower = std::floor(b);
    int l = std::clamp(static_cast<int>(lower), 0, n - 1);
    double frac = b - lower;
    if (frac <= 0.0 || l == n - 1) {
      out[l] += probs[j];
    } else {
      out[l] += probs[j] * (1.0 - frac);
      out[l + 1] += probs[j] * frac;
    }
  }
}

ValueDistribution project_target(double reward, double discount, const ValueDistribution& target) {
  if (!(discount >= 0.0 && discount <= 1.0)) throw std::invalid_argument("discount must lie in [0, 1]");
  if (target.probs.size() != target.support.size()) throw ShapeError("distribution/support size mismatch");
  ValueDistribution out{target.support, Vector(target.support.size())};
  project_into(reward, discount, target.support, target.probs.data(), out.probs.data());
  return out;
}

double dist_mean(const ValueDistribution& z) { return z.probs.dot(z.support.atoms()); }

}  // namespace apnpql::dist
