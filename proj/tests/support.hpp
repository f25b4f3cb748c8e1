#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "apnpql/nn.hpp"

namespace testing {

using apnpql::Matrix;
using apnpql::Vector;

/// |a - f| / max(|a|, |f|, floor)
inline double relative_error(double a, double f, double floor = 1e-6) {
  return std::abs(a - f) / std::max({std::abs(a), std::abs(f), floor});
}

struct GradCheck {
  double max_rel = 0.0;
  Eigen::Index worst = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Central differences of loss at params against analytic, entry by entry.
inline GradCheck check_gradient(Vector& params, const Vector& analytic, const std::function<double()>& loss,
                                double h = 1e-5) {
  GradCheck r;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    double saved = params[i];
    params[i] = saved + h;
    double up = loss();
    params[i] = saved - h;
    double down = loss();
    params[i] = saved;
    double numeric = (up - down) / (2.0 * h);
    double rel = relative_error(analytic[i], numeric);
    if (rel > r.max_rel) {
      r.max_rel = rel;
      r.worst = i;
      r.worst_analytic = analytic[i];
      r.worst_numeric = numeric;
    }
  }
  return r;
}

/// Smallest |pre-activation| over the rectified layers of mlp on inputs,
/// recomputed from the raw weights. include_output also counts the output
/// layer (for networks whose output is rectified by the caller).
inline double min_abs_preactivation(const apnpql::nn::Mlp& mlp, const Matrix& inputs, bool include_output = false) {
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

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, apnpql::Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

}  // namespace testing
