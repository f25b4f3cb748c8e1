#include "apnpql/nn.hpp"

#include <cmath>
#include <string>

#include "apnpql/serialize.hpp"

namespace apnpql::nn {

namespace {

void check_sizes(const std::vector<int>& sizes) {
  if (sizes.size() < 2) throw std::invalid_argument("Mlp needs at least input and output sizes");
  for (int s : sizes) {
    if (s <= 0) throw std::invalid_argument("Mlp layer sizes must be positive");
  }
}

constexpr std::uint32_t kMlpVersion = 1;
constexpr std::uint32_t kAdamVersion = 1;

}  // namespace

Mlp::Mlp(std::vector<int> layer_sizes) : sizes_(std::move(layer_sizes)) {
  check_sizes(sizes_);
  Eigen::Index total = 0;
  for (int l = 0; l + 1 < static_cast<int>(sizes_.size()); ++l) {
    offsets_.push_back(total);
    total += static_cast<Eigen::Index>(sizes_[l]) * sizes_[l + 1] + sizes_[l + 1];
  }
  params_ = Vector::Zero(total);
}

Mlp::Mlp(std::vector<int> layer_sizes, Rng& rng) : Mlp(std::move(layer_sizes)) {
  for (int l = 0; l < num_layers(); ++l) {
    double limit = 1.0 / std::sqrt(static_cast<double>(sizes_[l]));
    std::uniform_real_distribution<double> u(-limit, limit);
    auto w = weight(l);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
  }
}

Eigen::Map<Matrix> Mlp::weight(int layer) {
  return {params_.data() + offsets_[layer], sizes_[layer], sizes_[layer + 1]};
}

Eigen::Map<const Matrix> Mlp::weight(int layer) const {
  return {params_.data() + offsets_[layer], sizes_[layer], sizes_[layer + 1]};
}

Eigen::Map<Vector> Mlp::bias(int layer) {
  return {params_.data() + offsets_[layer] + static_cast<Eigen::Index>(sizes_[layer]) * sizes_[layer + 1],
          sizes_[layer + 1]};
}

Eigen::Map<const Vector> Mlp::bias(int layer) const {
  return {params_.data() + offsets_[layer] + static_cast<Eigen::Index>(sizes_[layer]) * sizes_[layer + 1],
          sizes_[layer + 1]};
}

void Mlp::check_input(const Matrix& inputs) const {
  if (sizes_.empty()) throw ShapeError("Mlp is empty");
  if (inputs.cols() != input_dim()) {
    throw ShapeError("Mlp input has " + std::to_string(inputs.cols()) + " columns, expected " +
                     std::to_string(input_dim()));
  }
}

Matrix Mlp::forward(const Matrix& inputs) const {
  check_input(inputs);
  Matrix h = inputs;
  for (int l = 0; l < num_layers(); ++l) {
    Matrix z = h * weight(l);
    z.rowwise() += bias(l).transpose();
    if (l + 1 < num_layers()) z = z.cwiseMax(0.0);
    h = std::move(z);
  }
  return h;
}

Matrix Mlp::forward_from(int first_layer, Matrix hidden) const {
  if (first_layer < 0 || first_layer > num_layers()) throw std::out_of_range("forward_from layer out of range");
  if (first_layer < num_layers() && hidden.cols() != sizes_[first_layer]) {
    throw ShapeError("forward_from input width does not match layer");
  }
  for (int l = first_layer; l < num_layers(); ++l) {
    Matrix z = hidden * weight(l);
    z.rowwise() += bias(l).transpose();
    if (l + 1 < num_layers()) z = z.cwiseMax(0.0);
    hidden = std::move(z);
  }
  return hidden;
}

ForwardCache Mlp::forward_cached(const Matrix& inputs) const {
  check_input(inputs);
  ForwardCache cache;
  cache.activations.reserve(sizes_.size());
  cache.activations.push_back(inputs);
  for (int l = 0; l < num_layers(); ++l) {
    Matrix z = cache.activations.back() * weight(l);
    z.rowwise() += bias(l).transpose();
    if (l + 1 < num_layers()) z = z.cwiseMax(0.0);
    cache.activations.push_back(std::move(z));
  }
  return cache;
}

Gradients Mlp::backward(const ForwardCache& cache, const Matrix& upstream) const {
  if (static_cast<int>(cache.activations.size()) != num_layers() + 1) {
    throw ShapeError("forward cache does not belong to this network");
  }
  const Matrix& out = cache.output();
  if (upstream.rows() != out.rows() || upstream.cols() != out.cols()) {
    throw ShapeError("upstream gradient shape does not match network output");
  }
  Gradients g;
  g.params = Vector::Zero(params_.size());
  Matrix delta = upstream;
  for (int l = num_layers() - 1; l >= 0; --l) {
    if (l + 1 < num_layers()) {
      delta = delta.cwiseProduct((cache.activations[l + 1].array() > 0.0).cast<double>().matrix());
    }
    const Matrix& h = cache.activations[l];
    Eigen::Map<Matrix> dw(g.params.data() + offsets_[l], sizes_[l], sizes_[l + 1]);
    Eigen::Map<Vector> db(g.params.data() + offsets_[l] + static_cast<Eigen::Index>(sizes_[l]) * sizes_[l + 1],
                          sizes_[l + 1]);
    dw.noalias() = h.transpose() * delta;
    db = delta.colwise().sum().transpose();
    delta = delta * weight(l).transpose();
  }
  g.inputs = std::move(delta);
  return g;
}

OptimizerState OptimizerState::for_params(const Vector& params, AdamConfig config) {
  OptimizerState s;
  s.config = config;
  s.first_moment = Vector::Zero(params.size());
  s.second_moment = Vector::Zero(params.size());
  return s;
}

bool adam_step(Vector& params, const Vector& grads, OptimizerState& state) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw ShapeError("adam_step: parameter, gradient and moment sizes differ");
  }
  if (!grads.allFinite()) {
    ++state.skipped;
    return false;
  }
  const auto& c = state.config;
  Vector m = c.beta1 * state.first_moment + (1.0 - c.beta1) * grads;
  Vector v = c.beta2 * state.second_moment + (1.0 - c.beta2) * grads.cwiseAbs2();
  auto t = static_cast<double>(state.step + 1);
  double m_scale = 1.0 / (1.0 - std::pow(c.beta1, t));
  double v_scale = 1.0 / (1.0 - std::pow(c.beta2, t));
  Vector updated = params.array() - c.learning_rate * (m.array() * m_scale) /
                                        ((v.array() * v_scale).sqrt() + c.epsilon);
  if (!updated.allFinite()) {
    ++state.skipped;
    return false;
  }
  params = std::move(updated);
  state.first_moment = std::move(m);
  state.second_moment = std::move(v);
  ++state.step;
  return true;
}

void polyak_update(Vector& target, const Vector& online, double rate) {
  if (!(rate > 0.0 && rate <= 1.0)) {
    throw std::invalid_argument("polyak rate must lie in (0, 1], got " + std::to_string(rate));
  }
  if (target.size() != online.size()) throw ShapeError("polyak_update: size mismatch");
  if (rate == 1.0) {
    target = online;
    return;
  }
  target = (1.0 - rate) * target + rate * online;
}

void save_mlp(std::ostream& out, const Mlp& mlp) {
  io::write_header(out, "MLP0", kMlpVersion);
  io::write_u32(out, static_cast<std::uint32_t>(mlp.layer_sizes().size()));
  for (int s : mlp.layer_sizes()) io::write_u32(out, static_cast<std::uint32_t>(s));
  io::write_vector(out, mlp.params());
}

Mlp load_mlp(std::istream& in) {
  auto version = io::read_header(in, "MLP0");
  if (version != kMlpVersion) throw io::FormatError("unsupported network version");
  auto n = io::read_u32(in);
  if (n < 2 || n > 64) throw io::FormatError("bad layer count");
  std::vector<int> sizes;
  for (std::uint32_t i = 0; i < n; ++i) {
    auto s = io::read_u32(in);
    if (s == 0 || s > (1u << 20)) throw io::FormatError("bad layer size");
    sizes.push_back(static_cast<int>(s));
  }
  Mlp mlp(sizes);
  Vector p = io::read_vector(in);
  if (p.size() != mlp.num_params()) throw io::FormatError("parameter count mismatch");
  mlp.params() = std::move(p);
  return mlp;
}

void save_optimizer(std::ostream& out, const OptimizerState& state) {
  io::write_header(out, "ADAM", kAdamVersion);
  io::write_f64(out, state.config.learning_rate);
  io::write_f64(out, state.config.beta1);
  io::write_f64(out, state.config.beta2);
  io::write_f64(out, state.config.epsilon);
  io::write_i64(out, state.step);
  io::write_i64(out, state.skipped);
  io::write_vector(out, state.first_moment);
  io::write_vector(out, state.second_moment);
}

OptimizerState load_optimizer(std::istream& in) {
  if (io::read_header(in, "ADAM") != kAdamVersion) throw io::FormatError("unsupported optimizer version");
  OptimizerState s;
  s.config.learning_rate = io::read_f64(in);
  s.config.beta1 = io::read_f64(in);
  s.config.beta2 = io::read_f64(in);
  s.config.epsilon = io::read_f64(in);
  s.step = io::read_i64(in);
  s.skipped = io::read_i64(in);
  s.first_moment = io::read_vector(in);
  s.second_moment = io::read_vector(in);
  if (s.first_moment.size() != s.second_moment.size()) throw io::FormatError("moment size mismatch");
  return s;
}

}  // namespace apnpql::nn
