#pragma once

#include <cstdint>
#include <vector>

#include "apnpql/agent.hpp"
#include "apnpql/env.hpp"
#include "apnpql/replay.hpp"

namespace apnpql::npql {

struct TrainSchedule {
  int num_envs = 10;        // environments stepped in lock-step
  int rollout_steps = 10;   // lock-step steps per iteration
  int grad_steps = 10;      // gradient steps per iteration
};

/// Live episodes of the rollout environments.
struct RolloutState {
  std::vector<env::ManipState> states;
  std::vector<std::int64_t> episode_ids;
  std::int64_t next_episode = 0;
  std::int64_t env_steps = 0;
  std::int64_t grad_steps = 0;
  std::int64_t skipped_updates = 0;
};

RolloutState start_rollouts(const env::EnvConfig& cfg, int num_envs, Rng& rng);

/// Builds the stored transition for one step taken from `before`.
replay::Transition make_transition(const env::ManipState& before, const dist::HybridAction& action,
                                   const env::StepResult& result, const env::EnvConfig& cfg,
                                   std::int64_t episode_id);

/// Scripted-expert episodes with episode ids first_episode_id, first_episode_id + 1, ...
std::vector<replay::Transition> generate_expert_episodes(const env::EnvConfig& cfg, int episodes, Rng& rng,
                                                         std::int64_t first_episode_id);

struct IterationMetrics {
  StepMetrics mean;         // averaged over the gradient steps taken
  int grad_steps = 0;
  std::int64_t env_steps = 0;
};

/// One pass of the training loop: a batched rollout into the online buffer,
/// then up to schedule.grad_steps gradient steps on mixed batches. Gradient
/// steps are skipped while the buffers cannot yet form a batch.
IterationMetrics train_iteration(Agent& agent, RolloutState& rollout, replay::DualBuffer& buffers,
                                 const env::EnvConfig& env_cfg, const TrainSchedule& schedule, Rng& rng);

/// Adapts an agent to the environment's batch-policy interface.
env::BatchPolicy agent_policy(const Agent& agent);

}  // namespace apnpql::npql
