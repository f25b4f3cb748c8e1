#include "apnpql/env.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace apnpql::env {

namespace {

double segment_distance(const Eigen::Vector2d& p, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  Eigen::Vector2d ab = b - a;
  double len2 = ab.squaredNorm();
  double t = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (a + t * ab - p).norm();
}

Eigen::Vector2d uniform_in(const SpawnBox& box, Rng& rng) {
  Eigen::Vector2d p;
  for (int i = 0; i < 2; ++i) {
    if (box.hi[i] > box.lo[i]) {
      std::uniform_real_distribution<double> u(box.lo[i], box.hi[i]);
      p[i] = u(rng);
    } else {
      p[i] = box.lo[i];
    }
  }
  return p;
}

Eigen::Vector2d clamp_workspace(const Eigen::Vector2d& p, double half) {
  return p.cwiseMax(-half).cwiseMin(half);
}

void push_history(ManipState& s) {
  for (int i = kHistory - 1; i > 0; --i) s.history[i] = s.history[i - 1];
  s.history[0] = Eigen::Vector3d(s.robot_pos.x(), s.robot_pos.y(), s.gripper);
}

}  // namespace

Task parse_task(const std::string& name) {
  if (name == "push") return Task::kPush;
  if (name == "pickplace") return Task::kPickPlace;
  throw std::invalid_argument("unknown task '" + name + "' (expected push or pickplace)");
}

std::string task_name(Task task) { return task == Task::kPush ? "push" : "pickplace"; }

void EnvConfig::validate() const {
  if (!(dt > 0.0)) throw std::invalid_argument("env.dt must be positive");
  if (horizon < 1) throw std::invalid_argument("env.horizon must be >= 1");
  if (horizon * dt > 14.0 + 1e-9) throw std::invalid_argument("env.horizon * env.dt must not exceed 14 s");
  if (!(max_speed > 0.0) || !(max_accel > 0.0)) throw std::invalid_argument("env.max_speed/max_accel must be positive");
  if (!(success_radius > 0.0)) throw std::invalid_argument("env.success_radius must be positive");
  for (int i = 0; i < 2; ++i) {
    if (object_spawn.hi[i] < object_spawn.lo[i]) throw std::invalid_argument("env.object_spawn is inverted");
    if (goal_spawn.hi[i] < goal_spawn.lo[i]) throw std::invalid_argument("env.goal_spawn is inverted");
  }
}

Vector observe(const ManipState& s) {
  Vector obs(kObservationDim);
  for (int i = 0; i < kHistory; ++i) obs.segment<3>(3 * i) = s.history[i];
  obs.segment<2>(3 * kHistory) = s.object_pos;
  obs.segment<2>(3 * kHistory + 2) = s.goal_pos;
  return obs;
}

ManipState reset_state(const EnvConfig& cfg, Rng& rng) {
  ManipState s;
  s.robot_pos = cfg.neutral;
  s.object_pos = uniform_in(cfg.object_spawn, rng);
  s.goal_pos = uniform_in(cfg.goal_spawn, rng);
  for (auto& h : s.history) h = Eigen::Vector3d(s.robot_pos.x(), s.robot_pos.y(), s.gripper);
  return s;
}

bool is_success(const ManipState& s, const EnvConfig& cfg) {
  bool on_goal = (s.object_pos - s.goal_pos).norm() <= cfg.success_radius;
  return cfg.task == Task::kPush ? on_goal : (on_goal && !s.held);
}

StepResult step(ManipState& s, const dist::HybridAction& raw_action, const EnvConfig& cfg) {
  if (raw_action.velocity.size() != kActionDim) throw ShapeError("env action must be 2-D");
  dist::HybridAction action = dist::clip_action(raw_action);
  Eigen::Vector2d command = action.velocity.head<2>() * cfg.max_speed;

  double dv_max = cfg.max_accel * cfg.dt;
  Eigen::Vector2d dv = (command - s.robot_vel).cwiseMax(-dv_max).cwiseMin(dv_max);
  s.robot_vel = (s.robot_vel + dv).cwiseMax(-cfg.max_speed).cwiseMin(cfg.max_speed);
  Eigen::Vector2d old_pos = s.robot_pos;
  s.robot_pos = clamp_workspace(s.robot_pos + s.robot_vel * cfg.dt, cfg.workspace_half_extent);

  int previous_gripper = s.gripper;
  s.gripper = action.gripper;

  if (cfg.task == Task::kPush) {
    if (s.contact) {
      s.object_pos = clamp_workspace(s.object_pos + (s.robot_pos - old_pos), cfg.workspace_half_extent);
    } else if (segment_distance(s.object_pos, old_pos, s.robot_pos) <= cfg.contact_radius) {
      s.contact = true;
    }
  } else {
    if (s.gripper == dist::kGripperOpen) {
      s.held = false;
    } else if (!s.held && previous_gripper == dist::kGripperOpen &&
               (s.robot_pos - s.object_pos).norm() <= cfg.grasp_radius) {
      s.held = true;
    }
    if (s.held) s.object_pos = s.robot_pos;
  }

  ++s.step;
  push_history(s);

  StepResult r;
  r.observation = observe(s);
  if (is_success(s, cfg)) {
    r.reward = 1.0;
    r.done = true;
  } else if (s.step >= cfg.horizon) {
    r.truncated = true;
  }
  return r;
}

Eigen::Vector2d clip_to_box(const Eigen::Vector2d& v) {
  double m = v.cwiseAbs().maxCoeff();
  return m > 1.0 ? Eigen::Vector2d(v / m) : v;
}

ActionPrimitives compute_aps(const ManipState& s, const EnvConfig& cfg) {
  ActionPrimitives ap;
  ap.velocities.resize(kNumAps, kActionDim);
  ap.gripper.resize(kNumAps);
  const double carry = s.held ? dist::kGripperClose : dist::kGripperOpen;

  // Toward-goal targets the robot position that puts the object on the goal;
  // for a held object this is the goal itself.
  Eigen::Vector2d targets[kNumAps] = {s.object_pos, s.goal_pos + (s.robot_pos - s.object_pos), cfg.neutral};
  double grips[kNumAps] = {carry, carry, dist::kGripperOpen};
  for (int k = 0; k < kNumAps; ++k) {
    ap.velocities.row(k) = clip_to_box(cfg.ap_gain * (targets[k] - s.robot_pos)).transpose();
    ap.gripper[k] = grips[k];
  }
  return ap;
}

dist::HybridAction scripted_expert(const ManipState& s, const EnvConfig& cfg, Rng& rng) {
  ActionPrimitives ap = compute_aps(s, cfg);
  dist::HybridAction a;
  a.velocity = Vector(kActionDim);
  int primitive = kTowardObject;
  a.gripper = dist::kGripperOpen;

  if (cfg.task == Task::kPush) {
    primitive = s.contact ? kTowardGoal : kTowardObject;
  } else if (s.held) {
    primitive = kTowardGoal;
    bool over_goal = (s.object_pos - s.goal_pos).norm() <= 0.5 * cfg.success_radius;
    a.gripper = over_goal ? dist::kGripperOpen : dist::kGripperClose;
  } else {
    bool in_reach = (s.robot_pos - s.object_pos).norm() <= 0.8 * cfg.grasp_radius;
    a.gripper = (in_reach && s.gripper == dist::kGripperOpen) ? dist::kGripperClose : dist::kGripperOpen;
  }

  std::normal_distribution<double> noise(0.0, cfg.expert_noise);
  for (int j = 0; j < kActionDim; ++j) a.velocity[j] = ap.velocities(primitive, j) + noise(rng);
  return dist::clip_action(std::move(a));
}

Environment::Environment(EnvConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

Vector Environment::reset(Rng& rng) {
  state_ = reset_state(cfg_, rng);
  return observe(state_);
}

StepResult Environment::step(const dist::HybridAction& action) { return env::step(state_, action, cfg_); }

double evaluate_success(const BatchPolicy& policy, const EnvConfig& cfg, int episodes, Rng& rng,
                        std::vector<EpisodeTrace>* traces) {
  if (episodes < 1) throw std::invalid_argument("evaluate_success needs episodes >= 1");
  cfg.validate();
  std::vector<ManipState> states;
  states.reserve(episodes);
  for (int e = 0; e < episodes; ++e) states.push_back(reset_state(cfg, rng));
  std::vector<char> active(episodes, 1);
  std::vector<char> success(episodes, 0);
  if (traces) traces->assign(episodes, EpisodeTrace{});

  for (int t = 0; t < cfg.horizon; ++t) {
    std::vector<int> idx;
    for (int e = 0; e < episodes; ++e) {
      if (active[e]) idx.push_back(e);
    }
    if (idx.empty()) break;
    std::vector<ManipState> batch;
    Matrix obs(static_cast<Eigen::Index>(idx.size()), kObservationDim);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      batch.push_back(states[idx[i]]);
      obs.row(static_cast<Eigen::Index>(i)) = observe(states[idx[i]]).transpose();
    }
    auto actions = policy(batch, obs, rng);
    if (actions.size() != idx.size()) throw std::runtime_error("policy returned wrong number of actions");
    for (std::size_t i = 0; i < idx.size(); ++i) {
      int e = idx[i];
      ManipState before = states[e];
      StepResult r = step(states[e], actions[i], cfg);
      if (traces) (*traces)[e].steps.push_back({before, dist::clip_action(actions[i]), r.reward});
      if (r.done) success[e] = 1;
      if (r.done || r.truncated) active[e] = 0;
    }
  }
  int wins = 0;
  for (int e = 0; e < episodes; ++e) {
    wins += success[e];
    if (traces) (*traces)[e].success = success[e] != 0;
  }
  return static_cast<double>(wins) / episodes;
}

BatchPolicy expert_policy(const EnvConfig& cfg) {
  return [cfg](const std::vector<ManipState>& states, const Matrix&, Rng& rng) {
    std::vector<dist::HybridAction> out;
    out.reserve(states.size());
    for (const auto& s : states) out.push_back(scripted_expert(s, cfg, rng));
    return out;
  };
}

BatchPolicy uniform_random_policy() {
  return [](const std::vector<ManipState>& states, const Matrix&, Rng& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::bernoulli_distribution coin(0.5);
    std::vector<dist::HybridAction> out;
    out.reserve(states.size());
    for (std::size_t i = 0; i < states.size(); ++i) {
      dist::HybridAction a;
      a.velocity = Vector(kActionDim);
      for (int j = 0; j < kActionDim; ++j) a.velocity[j] = u(rng);
      a.gripper = coin(rng) ? dist::kGripperClose : dist::kGripperOpen;
      out.push_back(std::move(a));
    }
    return out;
  };
}

}  // namespace apnpql::env
