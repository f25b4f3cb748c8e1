#include <doctest.h>

#include <cmath>

#include "apnpql/env.hpp"
#include "support.hpp"

using namespace apnpql;
using namespace apnpql::env;

namespace {

dist::HybridAction command(double x, double y, int gripper = dist::kGripperOpen) {
  dist::HybridAction a;
  a.velocity = Vector(2);
  a.velocity << x, y;
  a.gripper = gripper;
  return a;
}

EnvConfig config_for(Task task) {
  EnvConfig c;
  c.task = task;
  return c;
}

}  // namespace

TEST_CASE("config validation") {
  EnvConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.horizon * c.dt <= 14.0 + 1e-9);
  c.horizon = 94;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = EnvConfig{};
  c.dt = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK(parse_task("pickplace") == Task::kPickPlace);
  CHECK(task_name(Task::kPush) == "push");
  CHECK_THROWS_AS(parse_task("stack"), std::invalid_argument);
}

TEST_CASE("zero-width spawn ranges give a fixed layout") {
  EnvConfig c;
  c.object_spawn = {{0.7, 0.2}, {0.7, 0.2}};
  c.goal_spawn = {{-0.5, -0.1}, {-0.5, -0.1}};
  Rng rng(1);
  Vector first = observe(reset_state(c, rng));
  for (int i = 0; i < 10; ++i) CHECK(observe(reset_state(c, rng)) == first);
  CHECK(first.size() == kObservationDim);
  CHECK(kObservationDim == 3 * kRobotDims + 4);
  CHECK(first.segment<2>(9) == Eigen::Vector2d(0.7, 0.2));
  CHECK(first.segment<2>(11) == Eigen::Vector2d(-0.5, -0.1));
}

TEST_CASE("object spawn positions pass a chi-square uniformity test") {
  EnvConfig c;
  Rng rng(2);
  const int bins = 10;
  const int n = 10000;
  std::vector<int> counts(bins * bins, 0);
  for (int i = 0; i < n; ++i) {
    auto s = reset_state(c, rng);
    CHECK(observe(s).size() == kObservationDim);
    Eigen::Vector2d u = (s.object_pos - c.object_spawn.lo).cwiseQuotient(c.object_spawn.hi - c.object_spawn.lo);
    int bx = std::min(bins - 1, static_cast<int>(u.x() * bins));
    int by = std::min(bins - 1, static_cast<int>(u.y() * bins));
    ++counts[by * bins + bx];
  }
  double expected = static_cast<double>(n) / (bins * bins);
  double chi2 = 0.0;
  for (int k : counts) chi2 += (k - expected) * (k - expected) / expected;
  CHECK(chi2 < 134.642);  // 99 degrees of freedom, 1% level
}

TEST_CASE("zero action from rest changes only the step counter") {
  EnvConfig c;
  Rng rng(3);
  auto s = reset_state(c, rng);
  auto before = s;
  auto r = step(s, command(0, 0), c);
  CHECK(s.robot_pos == before.robot_pos);
  CHECK(s.robot_vel == before.robot_vel);
  CHECK(s.object_pos == before.object_pos);
  CHECK(s.step == before.step + 1);
  CHECK(r.reward == 0.0);
  CHECK_FALSE(r.done);
}

TEST_CASE("acceleration limit from rest") {
  EnvConfig c;
  Rng rng(4);
  auto s = reset_state(c, rng);
  step(s, command(1, 0), c);
  CHECK(s.robot_vel.x() == doctest::Approx(0.18).epsilon(1e-12));
  CHECK(s.robot_pos.x() == doctest::Approx(0.18 * 0.15).epsilon(1e-12));
  step(s, command(5, -7), c);  // out-of-box commands are clipped
  CHECK(std::abs(s.robot_vel.x()) <= 1.0);
  CHECK(s.robot_vel.y() == doctest::Approx(-0.18).epsilon(1e-12));
  CHECK_THROWS_AS(step(s, dist::HybridAction{Vector::Zero(3), 0}, c), ShapeError);
}

TEST_CASE("speed and slew limits hold along random trajectories") {
  Rng rng(5);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (Task task : {Task::kPush, Task::kPickPlace}) {
    auto c = config_for(task);
    auto s = reset_state(c, rng);
    int rewards = 0;
    for (int t = 0; t < c.horizon; ++t) {
      Eigen::Vector2d v0 = s.robot_vel;
      auto r = step(s, command(u(rng), u(rng), static_cast<int>(rng() % 2)), c);
      CHECK(s.robot_vel.cwiseAbs().maxCoeff() <= 1.0 + 1e-12);
      CHECK((s.robot_vel - v0).cwiseAbs().maxCoeff() <= c.max_accel * c.dt + 1e-12);
      CHECK(s.robot_pos.cwiseAbs().maxCoeff() <= c.workspace_half_extent);
      CHECK((r.reward == 0.0 || r.reward == 1.0));
      rewards += r.reward > 0;
      if (s.held) {
        CHECK(s.gripper == dist::kGripperClose);
        CHECK(s.object_pos == s.robot_pos);
      }
      if (r.done || r.truncated) break;
    }
    CHECK(rewards <= 1);
  }
}

TEST_CASE("identical seeds and actions give identical trajectories") {
  auto run = [] {
    EnvConfig c;
    Rng rng(6);
    auto s = reset_state(c, rng);
    std::vector<Vector> obs;
    for (int t = 0; t < 40; ++t) {
      auto a = scripted_expert(s, c, rng);
      obs.push_back(step(s, a, c).observation);
    }
    return obs;
  };
  CHECK(run() == run());
}

TEST_CASE("observation stacks the last three robot poses") {
  EnvConfig c;
  Rng rng(7);
  auto s = reset_state(c, rng);
  std::vector<Eigen::Vector2d> poses{s.robot_pos};
  for (int t = 0; t < 4; ++t) {
    step(s, command(1, 0.5), c);
    poses.push_back(s.robot_pos);
  }
  Vector o = observe(s);
  for (int i = 0; i < kHistory; ++i) {
    CHECK(o[3 * i] == poses[poses.size() - 1 - i].x());
    CHECK(o[3 * i + 1] == poses[poses.size() - 1 - i].y());
  }
}

TEST_CASE("push: contact drags the object onto the goal") {
  EnvConfig c;
  c.object_spawn = {{0.5, 0.0}, {0.5, 0.0}};
  c.goal_spawn = {{-0.5, 0.0}, {-0.5, 0.0}};
  Rng rng(8);
  auto s = reset_state(c, rng);
  int t = 0;
  while (!s.contact && t < 40) {
    step(s, command(1, 0), c);
    ++t;
  }
  CHECK(s.contact);
  Eigen::Vector2d offset = s.object_pos - s.robot_pos;
  step(s, command(-1, 0), c);
  CHECK((s.object_pos - s.robot_pos - offset).norm() < 1e-12);
}

TEST_CASE("pickplace: grasp needs an open-to-close transition within reach") {
  EnvConfig c = config_for(Task::kPickPlace);
  c.object_spawn = {{0.05, 0.0}, {0.05, 0.0}};
  Rng rng(9);
  auto s = reset_state(c, rng);
  step(s, command(0, 0, dist::kGripperClose), c);
  CHECK(s.held);
  CHECK(s.object_pos == s.robot_pos);
  step(s, command(0, 0, dist::kGripperOpen), c);
  CHECK_FALSE(s.held);

  c.object_spawn = {{0.8, 0.0}, {0.8, 0.0}};
  auto far = reset_state(c, rng);
  step(far, command(0, 0, dist::kGripperClose), c);
  CHECK_FALSE(far.held);
}

TEST_CASE("primitives") {
  EnvConfig c;
  Rng rng(10);
  auto s = reset_state(c, rng);
  s.robot_pos = s.object_pos;
  auto ap = compute_aps(s, c);
  CHECK(ap.velocities.row(kTowardObject).norm() == 0.0);

  s.robot_pos = Eigen::Vector2d(-1.0, 0.0);
  s.object_pos = Eigen::Vector2d(4.0, 0.0);
  ap = compute_aps(s, c);
  CHECK(ap.velocities(kTowardObject, 0) == 1.0);
  CHECK(ap.velocities(kTowardObject, 1) == 0.0);
  CHECK(ap.gripper[kTowardNeutral] == dist::kGripperOpen);

  s.held = true;
  s.gripper = dist::kGripperClose;
  ap = compute_aps(s, c);
  CHECK(ap.gripper[kTowardGoal] == dist::kGripperClose);
  CHECK(ap.gripper[kTowardObject] == dist::kGripperClose);

  CHECK(clip_to_box(Eigen::Vector2d(3.0, -1.5)) == Eigen::Vector2d(1.0, -0.5));
  CHECK(clip_to_box(Eigen::Vector2d(0.2, -0.5)) == Eigen::Vector2d(0.2, -0.5));
}

TEST_CASE("toward-goal primitive follows the goal bearing along expert episodes") {
  Rng rng(11);
  for (Task task : {Task::kPush, Task::kPickPlace}) {
    auto c = config_for(task);
    for (int e = 0; e < 20; ++e) {
      auto s = reset_state(c, rng);
      for (int t = 0; t < c.horizon; ++t) {
        auto ap = compute_aps(s, c);
        CHECK(ap.velocities.cwiseAbs().maxCoeff() <= 1.0);
        Eigen::Vector2d bearing = s.goal_pos - s.object_pos;
        Eigen::Vector2d v = ap.velocities.row(kTowardGoal).transpose();
        if (bearing.norm() > 1e-6) {
          double cross = bearing.normalized().x() * v.normalized().y() - bearing.normalized().y() * v.normalized().x();
          CHECK(std::abs(cross) < 1e-9);
          CHECK(bearing.dot(v) > 0.0);
        }
        auto r = step(s, scripted_expert(s, c, rng), c);
        if (r.done || r.truncated) break;
      }
    }
  }
}

TEST_CASE("scripted expert branches") {
  EnvConfig c = config_for(Task::kPickPlace);
  c.expert_noise = 0.0;
  Rng rng(12);
  auto s = reset_state(c, rng);
  s.held = true;
  s.gripper = dist::kGripperClose;
  s.robot_pos = s.goal_pos;
  s.object_pos = s.goal_pos;
  CHECK(scripted_expert(s, c, rng).gripper == dist::kGripperOpen);

  auto far = reset_state(c, rng);
  auto a = scripted_expert(far, c, rng);
  auto ap = compute_aps(far, c);
  CHECK((a.velocity - ap.velocities.row(kTowardObject).transpose()).norm() < 1e-12);
  CHECK(a.gripper == dist::kGripperOpen);
}

TEST_CASE("expert succeeds on both tasks") {
  for (Task task : {Task::kPush, Task::kPickPlace}) {
    auto c = config_for(task);
    Rng rng(13);
    double rate = evaluate_success(expert_policy(c), c, 200, rng);
    CHECK(rate >= 0.95);
  }
}

TEST_CASE("uniform random policy rarely places the object") {
  auto c = config_for(Task::kPickPlace);
  Rng rng(14);
  CHECK(evaluate_success(uniform_random_policy(), c, 200, rng) <= 0.05);
  CHECK_THROWS_AS(evaluate_success(uniform_random_policy(), c, 0, rng), std::invalid_argument);
}

TEST_CASE("evaluation traces record every step") {
  auto c = config_for(Task::kPush);
  Rng rng(15);
  std::vector<EpisodeTrace> traces;
  double rate = evaluate_success(expert_policy(c), c, 5, rng, &traces);
  CHECK(traces.size() == 5);
  int successes = 0;
  for (const auto& tr : traces) {
    successes += tr.success;
    CHECK_FALSE(tr.steps.empty());
    CHECK(static_cast<int>(tr.steps.size()) <= c.horizon);
    CHECK(tr.steps.front().state.step == 0);
    if (tr.success) CHECK(tr.steps.back().reward == 1.0);
  }
  CHECK(rate == doctest::Approx(successes / 5.0));
}
