#include "apnpql/trainer.hpp"

#include <stdexcept>

namespace apnpql::npql {

RolloutState start_rollouts(const env::EnvConfig& cfg, int num_envs, Rng& rng) {
  if (num_envs < 1) throw std::invalid_argument("need at least one rollout environment");
  RolloutState r;
  for (int i = 0; i < num_envs; ++i) {
    r.states.push_back(env::reset_state(cfg, rng));
    r.episode_ids.push_back(r.next_episode++);
  }
  return r;
}

replay::Transition make_transition(const env::ManipState& before, const dist::HybridAction& action,
                                   const env::StepResult& result, const env::EnvConfig& cfg,
                                   std::int64_t episode_id) {
  auto aps = env::compute_aps(before, cfg);
  replay::Transition t;
  t.obs = env::observe(before);
  t.action = dist::clip_action(action);
  t.reward = result.reward;
  t.next_obs = result.observation;
  t.done = result.done;
  t.last = result.done || result.truncated;
  t.ap_velocities = std::move(aps.velocities);
  t.ap_gripper = std::move(aps.gripper);
  t.episode_id = episode_id;
  t.step_id = before.step;
  return t;
}

std::vector<replay::Transition> generate_expert_episodes(const env::EnvConfig& cfg, int episodes, Rng& rng,
                                                         std::int64_t first_episode_id) {
  std::vector<replay::Transition> out;
  for (int e = 0; e < episodes; ++e) {
    env::ManipState s = env::reset_state(cfg, rng);
    while (true) {
      env::ManipState before = s;
      auto a = env::scripted_expert(s, cfg, rng);
      auto r = env::step(s, a, cfg);
      out.push_back(make_transition(before, a, r, cfg, first_episode_id + e));
      if (r.done || r.truncated) break;
    }
  }
  return out;
}

IterationMetrics train_iteration(Agent& agent, RolloutState& rollout, replay::DualBuffer& buffers,
                                 const env::EnvConfig& env_cfg, const TrainSchedule& schedule, Rng& rng) {
  if (rollout.states.empty()) throw std::invalid_argument("rollout state has no environments");
  const auto& cfg = agent.config();
  IterationMetrics out;
  const auto n_envs = static_cast<Eigen::Index>(rollout.states.size());

  for (int t = 0; t < schedule.rollout_steps; ++t) {
    Matrix obs(n_envs, env::kObservationDim);
    for (Eigen::Index i = 0; i < n_envs; ++i) obs.row(i) = env::observe(rollout.states[i]).transpose();
    auto actions = agent.act(obs, rng);
    std::vector<replay::Transition> fresh;
    fresh.reserve(n_envs);
    for (Eigen::Index i = 0; i < n_envs; ++i) {
      env::ManipState before = rollout.states[i];
      auto r = env::step(rollout.states[i], actions[i], env_cfg);
      fresh.push_back(make_transition(before, actions[i], r, env_cfg, rollout.episode_ids[i]));
      if (r.done || r.truncated) {
        rollout.states[i] = env::reset_state(env_cfg, rng);
        rollout.episode_ids[i] = rollout.next_episode++;
      }
    }
    buffers.online().push(fresh);
    rollout.env_steps += n_envs;
    out.env_steps += n_envs;
  }

  for (int g = 0; g < schedule.grad_steps; ++g) {
    auto batch = buffers.sample_mixed(cfg.batch_size, cfg.n_step, cfg.gamma, rng);
    if (!batch) break;
    auto m = agent.gradient_step(*batch, rng);
    out.mean.loss_q += m.loss_q;
    out.mean.loss_ap += m.loss_ap;
    out.mean.loss_m += m.loss_m;
    out.mean.alpha_mean += m.alpha_mean;
    out.mean.nu = m.nu;
    out.mean.prior_entropy += m.prior_entropy;
    out.mean.skipped += m.skipped;
    ++out.grad_steps;
  }
  if (out.grad_steps > 0) {
    double inv = 1.0 / out.grad_steps;
    out.mean.loss_q *= inv;
    out.mean.loss_ap *= inv;
    out.mean.loss_m *= inv;
    out.mean.alpha_mean *= inv;
    out.mean.prior_entropy *= inv;
  }
  rollout.grad_steps += out.grad_steps;
  rollout.skipped_updates += out.mean.skipped;
  return out;
}

env::BatchPolicy agent_policy(const Agent& agent) {
  return [&agent](const std::vector<env::ManipState>&, const Matrix& obs, Rng& rng) { return agent.act(obs, rng); };
}

}  // namespace apnpql::npql
