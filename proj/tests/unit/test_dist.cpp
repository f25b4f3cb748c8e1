#include <doctest.h>

#include <cmath>
#include <numbers>

#include "apnpql/dist.hpp"
#include "support.hpp"

using namespace apnpql;
using namespace apnpql::dist;

namespace {

ApGmmPrior make_prior(int k, int d) {
  ApGmmPrior p;
  p.means = Matrix::Zero(k, d);
  p.log_stds = Matrix::Zero(k, d);
  p.mixture_logits = Vector::Zero(k);
  p.gripper_logits = Vector::Zero(k);
  return p;
}

ApGmmPrior random_prior(int k, int d, Rng& rng) {
  ApGmmPrior p;
  p.means = testing::random_matrix(k, d, rng, 0.5);
  p.log_stds = testing::random_matrix(k, d, rng, 0.3).array() - 1.0;
  p.mixture_logits = testing::random_matrix(k, 1, rng).col(0);
  p.gripper_logits = testing::random_matrix(k, 1, rng).col(0);
  return p;
}

HybridAction random_action(int d, Rng& rng) {
  HybridAction a;
  a.velocity = testing::random_matrix(d, 1, rng, 0.6).col(0);
  a.gripper = static_cast<int>(rng() % 2);
  return a;
}

double normal_quantile(double u) {
  // bisection on the standard normal cdf; accurate far beyond test needs
  double lo = -12.0;
  double hi = 12.0;
  for (int i = 0; i < 64; ++i) {
    double mid = 0.5 * (lo + hi);
    double c = 0.5 * std::erfc(-mid / std::numbers::sqrt2);
    (c < u ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Independent scalar projection of a point mass at value v.
std::vector<double> scalar_projection(double reward, double discount, double v, const ValueSupport& s) {
  std::vector<double> out(s.size(), 0.0);
  double tz = std::min(std::max(reward + discount * v, s.v_min()), s.v_max());
  double pos = (tz - s.v_min()) / s.spacing();
  int lo = static_cast<int>(pos);
  if (lo >= s.size() - 1) {
    out[s.size() - 1] = 1.0;
    return out;
  }
  double hi_w = pos - lo;
  out[lo] += 1.0 - hi_w;
  out[lo + 1] += hi_w;
  return out;
}

}  // namespace

TEST_CASE("collapsed prior samples the single mean with gripper close") {
  auto p = make_prior(1, 2);
  p.means << 0.3, -0.4;
  p.log_stds.setConstant(std::log(kSigmaMin) - 8.0);
  p.gripper_logits[0] = 60.0;
  Rng rng(1);
  auto s = gmm_sample(p, 200, rng);
  for (const auto& a : s.actions) {
    CHECK(a.gripper == kGripperClose);
    CHECK(std::abs(a.velocity[0] - 0.3) < 1e-3);
    CHECK(std::abs(a.velocity[1] + 0.4) < 1e-3);
  }
}

TEST_CASE("component frequencies of an equal-weight mixture") {
  auto p = make_prior(2, 1);
  p.means << -0.5, 0.5;
  Rng rng(2);
  const int n = 100000;
  auto s = gmm_sample(p, n, rng);
  int first = 0;
  for (int c : s.components) first += c == 0;
  CHECK(std::abs(first - 0.5 * n) <= 3.0 * std::sqrt(n * 0.25));
}

TEST_CASE("samples are clipped into the box and carry pre-clip densities") {
  auto p = make_prior(1, 2);
  p.means.setConstant(1.0);
  p.log_stds.setConstant(std::log(0.3));
  Rng rng(3);
  auto s = gmm_sample(p, 5000, rng);
  int clipped = 0;
  for (const auto& a : s.actions) {
    CHECK(a.velocity.maxCoeff() <= 1.0);
    CHECK(a.velocity.minCoeff() >= -1.0);
    clipped += a.velocity.maxCoeff() == 1.0;
  }
  CHECK(clipped > 0);
  for (int i = 0; i < 20; ++i) CHECK(std::isfinite(s.log_probs[i]));

  auto bad = p;
  bad.log_stds(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(gmm_sample(bad, 3, rng), RejectedPrior);
  CHECK_THROWS_AS(gmm_sample(p, 0, rng), std::invalid_argument);
}

TEST_CASE("log density of the standard normal at its mean") {
  auto p = make_prior(1, 1);
  p.gripper_logits[0] = 800.0;  // P(close) = 1 to double precision
  HybridAction a{Vector::Zero(1), kGripperClose};
  CHECK(gmm_log_prob(p, a) == doctest::Approx(std::log(1.0 / std::sqrt(2.0 * std::numbers::pi))).epsilon(1e-14));
}

TEST_CASE("identical components collapse to one") {
  Rng rng(4);
  auto single = random_prior(1, 2, rng);
  auto twin = make_prior(2, 2);
  for (int k = 0; k < 2; ++k) {
    twin.means.row(k) = single.means.row(0);
    twin.log_stds.row(k) = single.log_stds.row(0);
    twin.gripper_logits[k] = single.gripper_logits[0];
  }
  twin.mixture_logits << std::log(0.3), std::log(0.7);
  for (int t = 0; t < 20; ++t) {
    auto a = random_action(2, rng);
    CHECK(gmm_log_prob(twin, a) == doctest::Approx(gmm_log_prob(single, a)).epsilon(1e-12));
  }
}

TEST_CASE("log density matches a naive mixture sum") {
  Rng rng(5);
  for (int t = 0; t < 200; ++t) {
    int k = 1 + static_cast<int>(rng() % 4);
    auto p = random_prior(k, 2, rng);
    auto a = random_action(2, rng);
    Vector w = p.mixture_logits.array().exp();
    w /= w.sum();
    double total = 0.0;
    for (int c = 0; c < k; ++c) {
      double dens = w[c];
      for (int j = 0; j < 2; ++j) {
        double sd = std::exp(p.log_stds(c, j));
        double z = (a.velocity[j] - p.means(c, j)) / sd;
        dens *= std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * std::numbers::pi));
      }
      double pc = 1.0 / (1.0 + std::exp(-p.gripper_logits[c]));
      dens *= a.gripper == kGripperClose ? pc : 1.0 - pc;
      total += dens;
    }
    CHECK(gmm_log_prob(p, a) == doctest::Approx(std::log(total)).epsilon(1e-11));
  }
}

TEST_CASE("log density is invariant under component permutation") {
  Rng rng(6);
  auto p = random_prior(3, 2, rng);
  auto q = p;
  std::vector<int> perm{2, 0, 1};
  for (int k = 0; k < 3; ++k) {
    q.means.row(k) = p.means.row(perm[k]);
    q.log_stds.row(k) = p.log_stds.row(perm[k]);
    q.mixture_logits[k] = p.mixture_logits[perm[k]];
    q.gripper_logits[k] = p.gripper_logits[perm[k]];
  }
  for (int t = 0; t < 50; ++t) {
    auto a = random_action(2, rng);
    CHECK(gmm_log_prob(p, a) == doctest::Approx(gmm_log_prob(q, a)).epsilon(1e-13));
  }
  CHECK_THROWS_AS(gmm_log_prob(p, HybridAction{Vector::Zero(3), 0}), ShapeError);
}

TEST_CASE("log density gradients match central differences") {
  Rng rng(7);
  for (int t = 0; t < 50; ++t) {
    auto p = random_prior(3, 2, rng);
    auto a = random_action(2, rng);
    auto g = PriorGradient::zeros_like(p);
    gmm_log_prob(p, a, g, 1.0);
    auto fd = [&](double& x) {
      double saved = x;
      x = saved + 1e-5;
      double up = gmm_log_prob(p, a);
      x = saved - 1e-5;
      double down = gmm_log_prob(p, a);
      x = saved;
      return (up - down) / 2e-5;
    };
    for (int k = 0; k < 3; ++k) {
      CHECK(testing::relative_error(g.mixture_logits[k], fd(p.mixture_logits[k])) < 1e-4);
      CHECK(testing::relative_error(g.gripper_logits[k], fd(p.gripper_logits[k])) < 1e-4);
      for (int j = 0; j < 2; ++j) CHECK(testing::relative_error(g.log_stds(k, j), fd(p.log_stds(k, j))) < 1e-4);
    }
    Vector dv;
    double lp = gmm_log_prob_velocity_grad(p, a, dv);
    CHECK(lp == doctest::Approx(gmm_log_prob(p, a)).epsilon(1e-13));
    for (int j = 0; j < 2; ++j) CHECK(testing::relative_error(dv[j], fd(a.velocity[j])) < 1e-4);
  }
}

TEST_CASE("entropy surrogate closed forms") {
  auto p = make_prior(1, 1);
  p.gripper_logits[0] = 0.4;
  double pc = 1.0 / (1.0 + std::exp(-0.4));
  double bern = -pc * std::log(pc) - (1 - pc) * std::log(1 - pc);
  CHECK(gmm_entropy_surrogate(p).value ==
        doctest::Approx(0.5 * std::log(2 * std::numbers::pi * std::numbers::e) + bern).epsilon(1e-13));

  Rng rng(8);
  auto q = random_prior(3, 2, rng);
  auto doubled = q;
  doubled.log_stds.array() += std::log(2.0);
  CHECK(gmm_entropy_surrogate(doubled).value - gmm_entropy_surrogate(q).value ==
        doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("entropy surrogate gradient matches central differences") {
  Rng rng(9);
  for (int t = 0; t < 50; ++t) {
    auto p = random_prior(3, 2, rng);
    auto e = gmm_entropy_surrogate(p);
    auto fd = [&](double& x) {
      double saved = x;
      x = saved + 1e-5;
      double up = gmm_entropy_surrogate(p).value;
      x = saved - 1e-5;
      double down = gmm_entropy_surrogate(p).value;
      x = saved;
      return (up - down) / 2e-5;
    };
    for (int k = 0; k < 3; ++k) {
      CHECK(testing::relative_error(e.grad.mixture_logits[k], fd(p.mixture_logits[k])) < 1e-4);
      CHECK(testing::relative_error(e.grad.gripper_logits[k], fd(p.gripper_logits[k])) < 1e-4);
      for (int j = 0; j < 2; ++j) CHECK(testing::relative_error(e.grad.log_stds(k, j), fd(p.log_stds(k, j))) < 1e-4);
    }
  }
}

TEST_CASE("entropy surrogate matches Monte-Carlo entropy for separated components") {
  auto p = make_prior(2, 1);
  p.means << -0.5, 0.5;
  p.log_stds.setConstant(std::log(0.05));
  p.mixture_logits << 0.0, std::log(3.0);
  p.gripper_logits << -0.7, 1.2;
  Rng rng(10);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  // stratified draws per component, gripper bit summed exactly
  const int per_component = 500000;
  Vector w = p.weights();
  Vector pc = p.close_probs();
  double entropy = 0.0;
  for (int k = 0; k < 2; ++k) {
    double acc = 0.0;
    for (int i = 0; i < per_component; ++i) {
      double z = normal_quantile((i + u(rng)) / per_component);
      HybridAction a{Vector::Constant(1, p.means(k, 0) + 0.05 * z), kGripperOpen};
      double open = gmm_log_prob(p, a);
      a.gripper = kGripperClose;
      double close = gmm_log_prob(p, a);
      acc += -(pc[k] * close + (1.0 - pc[k]) * open);
    }
    entropy += w[k] * acc / per_component;
  }
  CHECK(std::abs(gmm_entropy_surrogate(p).value - entropy) < 1e-3);
}

TEST_CASE("mean log density of samples approaches the negative entropy") {
  auto p = make_prior(2, 1);
  p.means << -0.6, 0.6;
  p.log_stds.setConstant(std::log(0.04));
  Rng rng(11);
  auto s = gmm_sample(p, 200000, rng);
  double sd = std::sqrt((s.log_probs.array() - s.log_probs.mean()).square().mean() / 200000.0);
  CHECK(std::abs(-s.log_probs.mean() - gmm_entropy_surrogate(p).value) < 4.0 * sd + 1e-6);
}

TEST_CASE("value support layout") {
  ValueSupport s;
  CHECK(s.size() == 51);
  CHECK(s.v_min() == 0.0);
  CHECK(s.v_max() == 1.05);
  CHECK(s.atoms()[50] == 1.05);
  CHECK(s.spacing() == doctest::Approx(1.05 / 50).epsilon(1e-15));
  CHECK_THROWS(ValueSupport(1.0, 0.0, 51));
}

TEST_CASE("projection identity and shift") {
  ValueSupport s;
  Rng rng(12);
  Vector probs = testing::random_matrix(51, 1, rng).array().exp();
  probs /= probs.sum();
  ValueDistribution z{s, probs};
  CHECK((project_target(0.0, 1.0, z).probs - probs).cwiseAbs().maxCoeff() < 1e-15);

  auto shifted = project_target(s.spacing(), 1.0, z);
  CHECK(shifted.probs[0] == doctest::Approx(0.0));
  for (int j = 1; j < 50; ++j) CHECK(shifted.probs[j] == doctest::Approx(probs[j - 1]).epsilon(1e-9));
  CHECK(shifted.probs[50] == doctest::Approx(probs[49] + probs[50]).epsilon(1e-9));
}

TEST_CASE("projection of a point mass matches the scalar reference") {
  ValueSupport s;
  for (int atom = 0; atom < 51; ++atom) {
    auto out = project_target(0.3, 0.99, ValueDistribution::point_mass(s, atom));
    auto ref = scalar_projection(0.3, 0.99, s.atoms()[atom], s);
    for (int j = 0; j < 51; ++j) CHECK(out.probs[j] == doctest::Approx(ref[j]).epsilon(1e-12));
  }
  CHECK_THROWS(project_target(0.0, 1.5, ValueDistribution::point_mass(s, 0)));
}

TEST_CASE("projection conserves mass and the mean") {
  ValueSupport s;
  Rng rng(13);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 10000; ++t) {
    Vector probs = testing::random_matrix(51, 1, rng, 2.0).array().exp();
    probs /= probs.sum();
    double r = 2.0 * u(rng) - 0.5;
    double g = u(rng);
    auto out = project_target(r, g, ValueDistribution{s, probs});
    CHECK(std::abs(out.probs.sum() - 1.0) < 1e-9);
    CHECK(out.probs.minCoeff() >= 0.0);
    bool clamped = r < s.v_min() || r + g * s.v_max() > s.v_max();
    if (!clamped) CHECK(std::abs(dist_mean(out) - (r + g * dist_mean(ValueDistribution{s, probs}))) < 1e-9);
  }
}

TEST_CASE("distribution mean") {
  ValueSupport s;
  CHECK(dist_mean(ValueDistribution::point_mass(s, 17)) == s.atoms()[17]);
  CHECK(dist_mean(ValueDistribution{s, Vector::Constant(51, 1.0 / 51)}) == doctest::Approx(0.525).epsilon(1e-14));
  Rng rng(14);
  Vector probs = testing::random_matrix(51, 1, rng).array().exp();
  probs /= probs.sum();
  double direct = 0.0;
  for (int j = 0; j < 51; ++j) direct += probs[j] * s.atoms()[j];
  CHECK(dist_mean(ValueDistribution{s, probs}) == doctest::Approx(direct).epsilon(1e-14));
}

TEST_CASE("clip_action") {
  HybridAction a{Vector::Constant(2, 3.0), 7};
  auto c = clip_action(a);
  CHECK(c.velocity == Vector::Ones(2));
  CHECK(c.gripper == kGripperOpen);
}
