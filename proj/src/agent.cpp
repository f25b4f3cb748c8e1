#include "apnpql/agent.hpp"

#include <istream>
#include <ostream>

#include "apnpql/serialize.hpp"

namespace apnpql::npql {

namespace {

constexpr std::uint32_t kAgentVersion = 1;

nn::AdamConfig adam(double lr) {
  nn::AdamConfig c;
  c.learning_rate = lr;
  return c;
}

void load_same_shape(std::istream& in, nn::Mlp& mlp, const char* name) {
  nn::Mlp loaded = nn::load_mlp(in);
  if (loaded.layer_sizes() != mlp.layer_sizes()) {
    throw io::FormatError(std::string("checkpoint network '") + name + "' has a different architecture");
  }
  mlp = std::move(loaded);
}

void load_same_size(std::istream& in, nn::OptimizerState& opt) {
  auto loaded = nn::load_optimizer(in);
  if (loaded.first_moment.size() != opt.first_moment.size()) {
    throw io::FormatError("checkpoint optimizer state does not match its network");
  }
  opt = std::move(loaded);
}

}  // namespace

NpqlAgent::NpqlAgent(int obs_dim, int num_aps, int action_dim, AgentConfig cfg, Rng& rng)
    : cfg_(std::move(cfg)),
      nets_(NpqlNetworks::create(obs_dim, num_aps, action_dim, cfg_, rng)),
      opt_trunk_(nn::OptimizerState::for_params(nets_.trunk.params(), adam(cfg_.lr_e))),
      opt_ap_(nn::OptimizerState::for_params(nets_.head_ap.params(), adam(cfg_.lr_e))),
      opt_z_(nn::OptimizerState::for_params(nets_.head_z.params(), adam(cfg_.lr_e))),
      opt_alpha_(nn::OptimizerState::for_params(nets_.head_alpha.params(), adam(cfg_.lr_alpha))),
      opt_bp_(nn::OptimizerState::for_params(nets_.head_bp.params(), adam(cfg_.lr_m))),
      nu_(cfg_.nu_init),
      eps_nu_(cfg_.epsilon_nu) {}

std::vector<dist::HybridAction> NpqlAgent::act(const Matrix& obs, Rng& rng) const {
  Matrix phi = features(nets_.trunk, obs);
  auto priors = build_priors(nets_, phi);
  Vector alpha = alphas(nets_.head_alpha, phi);
  auto pbs = make_policy_batches(nets_.head_z, phi, priors, alpha, cfg_.n_policy, rng);
  std::vector<dist::HybridAction> out;
  out.reserve(pbs.size());
  for (const auto& pb : pbs) out.push_back(sample_action(pb, rng));
  return out;
}

int NpqlAgent::apply_e_step(const ELoss& loss, bool train_ap) {
  if (!std::isfinite(loss.total)) return 3;
  int skipped = 0;
  skipped += !nn::adam_step(nets_.trunk.params(), loss.grad_trunk, opt_trunk_);
  skipped += !nn::adam_step(nets_.head_z.params(), loss.grad_z, opt_z_);
  if (train_ap) skipped += !nn::adam_step(nets_.head_ap.params(), loss.grad_ap, opt_ap_);
  return skipped;
}

AlphaHeadLoss NpqlAgent::update_alpha(const Matrix& phi, const std::vector<Vector>& q_values, int& skipped) {
  auto loss = alpha_head_loss(nets_.head_alpha, phi, q_values, cfg_.epsilon);
  if (!std::isfinite(loss.loss) || !nn::adam_step(nets_.head_alpha.params(), loss.grad, opt_alpha_)) ++skipped;
  return loss;
}

MLoss NpqlAgent::update_prior(const MSamples& samples, int& skipped) {
  auto loss = m_step_loss_given_samples(samples, nets_.head_bp, nets_.head_ap, nets_.num_aps, nets_.action_dim, nu_,
                                        cfg_.entropy_sign);
  if (!eps_nu_) eps_nu_ = 0.5 * loss.entropy;
  if (!std::isfinite(loss.total) || !nn::adam_step(nets_.head_bp.params(), loss.grad_bp, opt_bp_)) ++skipped;
  if (std::isfinite(loss.entropy)) nu_ = nu_dual_update(loss.entropy, *eps_nu_, cfg_.lr_nu, nu_);
  return loss;
}

void NpqlAgent::update_targets() {
  nn::polyak_update(nets_.target_trunk.params(), nets_.trunk.params(), cfg_.polyak);
  nn::polyak_update(nets_.target_head_z.params(), nets_.head_z.params(), cfg_.polyak);
}

StepMetrics NpqlAgent::gradient_step(const std::vector<replay::NStepTransition>& batch, Rng& rng) {
  StepMetrics m;
  EBatch e = make_e_batch(batch);
  Matrix targets = npql_targets(e, nets_, cfg_, rng);
  ELoss el = e_step_loss_given_targets(e, targets, nets_, cfg_.lambda_ap);
  m.skipped += apply_e_step(el, cfg_.lambda_ap > 0.0);
  m.loss_q = el.loss_q;
  m.loss_ap = el.loss_ap;

  MSamples samples = draw_m_samples(e.obs, nets_, cfg_, rng);
  std::vector<Vector> qs;
  qs.reserve(samples.batches.size());
  for (const auto& pb : samples.batches) qs.push_back(pb.q_values);
  m.alpha_mean = update_alpha(samples.phi, qs, m.skipped).alpha_mean;

  MLoss ml = update_prior(samples, m.skipped);
  m.loss_m = ml.total;
  m.prior_entropy = ml.entropy;
  m.nu = nu_;
  update_targets();
  return m;
}

void NpqlAgent::save(std::ostream& out) const {
  io::write_header(out, "AGNT", kAgentVersion);
  io::write_string(out, algorithm());
  for (const auto* mlp : {&nets_.trunk, &nets_.head_bp, &nets_.head_ap, &nets_.head_z, &nets_.head_alpha,
                          &nets_.target_trunk, &nets_.target_head_z}) {
    nn::save_mlp(out, *mlp);
  }
  for (const auto* opt : {&opt_trunk_, &opt_ap_, &opt_z_, &opt_alpha_, &opt_bp_}) nn::save_optimizer(out, *opt);
  io::write_f64(out, nu_);
  io::write_u32(out, eps_nu_ ? 1u : 0u);
  io::write_f64(out, eps_nu_.value_or(0.0));
  save_extra(out);
}

void NpqlAgent::load(std::istream& in) {
  auto version = io::read_header(in, "AGNT");
  if (version != kAgentVersion) throw io::FormatError("unsupported agent checkpoint version");
  auto algo = io::read_string(in);
  if (algo != algorithm()) throw io::FormatError("checkpoint holds a '" + algo + "' agent, expected " + algorithm());
  load_same_shape(in, nets_.trunk, "trunk");
  load_same_shape(in, nets_.head_bp, "head_bp");
  load_same_shape(in, nets_.head_ap, "head_ap");
  load_same_shape(in, nets_.head_z, "head_z");
  load_same_shape(in, nets_.head_alpha, "head_alpha");
  load_same_shape(in, nets_.target_trunk, "target_trunk");
  load_same_shape(in, nets_.target_head_z, "target_head_z");
  for (auto* opt : {&opt_trunk_, &opt_ap_, &opt_z_, &opt_alpha_, &opt_bp_}) load_same_size(in, *opt);
  nu_ = io::read_f64(in);
  bool has_eps = io::read_u32(in) != 0;
  double eps = io::read_f64(in);
  eps_nu_ = has_eps ? std::optional<double>(eps) : std::nullopt;
  load_extra(in);
}

}  // namespace apnpql::npql
