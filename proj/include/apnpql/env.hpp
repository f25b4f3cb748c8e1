#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "apnpql/dist.hpp"
#include "apnpql/nn.hpp"

namespace apnpql::env {

enum class Task { kPush, kPickPlace };

Task parse_task(const std::string& name);
std::string task_name(Task task);

inline constexpr int kActionDim = 2;
inline constexpr int kNumAps = 3;
inline constexpr int kHistory = 3;
inline constexpr int kRobotDims = 3;  // x, y, gripper
inline constexpr int kObservationDim = kHistory * kRobotDims + 4;

enum ApIndex : int { kTowardObject = 0, kTowardGoal = 1, kTowardNeutral = 2 };

struct SpawnBox {
  Eigen::Vector2d lo;
  Eigen::Vector2d hi;
};

struct EnvConfig {
  Task task = Task::kPush;
  double dt = 0.15;
  int horizon = 93;
  double workspace_half_extent = 1.5;
  Eigen::Vector2d neutral = Eigen::Vector2d::Zero();
  SpawnBox object_spawn{{0.4, -0.6}, {1.0, 0.6}};
  SpawnBox goal_spawn{{-1.0, -0.6}, {-0.4, 0.6}};
  double success_radius = 0.1;
  double contact_radius = 0.1;
  double grasp_radius = 0.1;
  double max_speed = 1.0;
  double max_accel = 1.2;
  double ap_gain = 2.0;
  double expert_noise = 0.05;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

struct ManipState {
  Eigen::Vector2d robot_pos = Eigen::Vector2d::Zero();
  Eigen::Vector2d robot_vel = Eigen::Vector2d::Zero();
  int gripper = dist::kGripperOpen;
  bool held = false;     // pick-place: object attached to the gripper
  bool contact = false;  // push: object co-moves with the robot
  Eigen::Vector2d object_pos = Eigen::Vector2d::Zero();
  Eigen::Vector2d goal_pos = Eigen::Vector2d::Zero();
  int step = 0;
  /// Most recent first: (x, y, gripper) for the last kHistory steps.
  std::array<Eigen::Vector3d, kHistory> history{};
};

struct StepResult {
  Vector observation;
  double reward = 0.0;
  bool done = false;       // success, terminal
  bool truncated = false;  // horizon reached without success
};

/// K primitives as velocity rows plus one gripper command each.
struct ActionPrimitives {
  Matrix velocities;  // kNumAps x kActionDim
  Vector gripper;     // kNumAps, 0 = open, 1 = close
};

Vector observe(const ManipState& state);
ManipState reset_state(const EnvConfig& cfg, Rng& rng);
StepResult step(ManipState& state, const dist::HybridAction& action, const EnvConfig& cfg);
bool is_success(const ManipState& state, const EnvConfig& cfg);

/// Rescales v so that its largest component magnitude is at most 1, keeping
/// its direction.
Eigen::Vector2d clip_to_box(const Eigen::Vector2d& v);

ActionPrimitives compute_aps(const ManipState& state, const EnvConfig& cfg);
dist::HybridAction scripted_expert(const ManipState& state, const EnvConfig& cfg, Rng& rng);

/// A single simulated episode owner.
class Environment {
 public:
  explicit Environment(EnvConfig cfg);

  Vector reset(Rng& rng);
  StepResult step(const dist::HybridAction& action);

  const ManipState& state() const { return state_; }
  const EnvConfig& config() const { return cfg_; }

 private:
  EnvConfig cfg_;
  ManipState state_;
};

struct TraceStep {
  ManipState state;
  dist::HybridAction action;
  double reward = 0.0;
};

struct EpisodeTrace {
  std::vector<TraceStep> steps;
  bool success = false;
};

/// Maps a batch of active episodes to one action each. states[i] belongs to
/// row i of observations.
using BatchPolicy = std::function<std::vector<dist::HybridAction>(
    const std::vector<ManipState>& states, const Matrix& observations, Rng& rng)>;

/// Runs all episodes in lock-step and returns the fraction that reached the
/// reward. Throws std::invalid_argument for episodes < 1.
double evaluate_success(const BatchPolicy& policy, const EnvConfig& cfg, int episodes, Rng& rng,
                        std::vector<EpisodeTrace>* traces = nullptr);

BatchPolicy expert_policy(const EnvConfig& cfg);
BatchPolicy uniform_random_policy();

}  // namespace apnpql::env
