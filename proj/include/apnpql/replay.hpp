#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "apnpql/dist.hpp"
#include "apnpql/nn.hpp"

namespace apnpql::replay {

/// One environment interaction with the action-primitive labels computed from
/// the privileged simulator state at collection time.
struct Transition {
  Vector obs;
  dist::HybridAction action;
  double reward = 0.0;
  Vector next_obs;
  bool done = false;  // terminal (success)
  bool last = false;  // final transition of its episode (terminal or horizon)
  Matrix ap_velocities;  // K x d
  Vector ap_gripper;     // K
  std::int64_t episode_id = 0;
  std::int32_t step_id = 0;
};

struct NStepTransition {
  Vector obs;
  dist::HybridAction action;
  double reward = 0.0;    // sum_{k<n} gamma^k r_k
  double discount = 0.0;  // gamma^n, or 0 when the segment ends in a terminal
  Vector bootstrap_obs;
  bool done = false;
  int n = 1;
  Matrix ap_velocities;
  Vector ap_gripper;
  std::int64_t episode_id = 0;
  std::int32_t step_id = 0;
};

bool operator==(const Transition& a, const Transition& b);

/// Ring buffer of transitions. Appends and reads are guarded by a
/// reader/writer lock, so samplers always see whole transitions.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  ReplayBuffer(const ReplayBuffer&) = delete;
  ReplayBuffer& operator=(const ReplayBuffer&) = delete;

  void push(std::span<const Transition> transitions);
  void push(const Transition& transition) { push(std::span<const Transition>(&transition, 1)); }
  void clear();

  std::size_t size() const;
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return size() == 0; }

  /// index 0 is the oldest stored transition.
  Transition get(std::size_t index) const;

  /// Follows the episode forward from index for up to n steps. Throws
  /// std::out_of_range for an invalid index.
  NStepTransition nstep_assemble(std::size_t index, int n, double gamma) const;

  /// count uniform draws (with replacement) of assembled segments.
  std::vector<NStepTransition> sample(int count, int n, double gamma, Rng& rng) const;

  std::vector<Transition> snapshot() const;

 private:
  std::size_t slot(std::size_t index) const { return (start_ + index) % capacity_; }
  NStepTransition assemble_locked(std::size_t index, int n, double gamma) const;

  std::size_t capacity_;
  std::vector<Transition> slots_;
  std::size_t start_ = 0;
  std::size_t count_ = 0;
  std::unordered_map<std::uint64_t, std::size_t> by_id_;  // (episode, step) -> slot
  mutable std::shared_mutex mutex_;
};

/// Online ring buffer plus a fixed expert buffer sampled at a fixed ratio.
class DualBuffer {
 public:
  DualBuffer(std::size_t online_capacity, std::size_t expert_capacity, double expert_fraction);

  ReplayBuffer& online() { return online_; }
  ReplayBuffer& expert() { return expert_; }
  const ReplayBuffer& online() const { return online_; }
  const ReplayBuffer& expert() const { return expert_; }
  double expert_fraction() const { return expert_fraction_; }

  /// Number of expert rows in a batch of the given size.
  int expert_quota(int batch_size) const;

  /// Expert rows first, then online rows. Returns nullopt while a required
  /// source is still empty.
  std::optional<std::vector<NStepTransition>> sample_mixed(int batch_size, int n, double gamma, Rng& rng) const;

 private:
  ReplayBuffer online_;
  ReplayBuffer expert_;
  double expert_fraction_;
};

/// JSON-lines persistence, one transition per line. Doubles round-trip exactly.
void write_jsonl(std::ostream& out, std::span<const Transition> transitions);
std::vector<Transition> read_jsonl(std::istream& in);
void save_jsonl(const std::string& path, std::span<const Transition> transitions);
std::vector<Transition> load_jsonl(const std::string& path);

}  // namespace apnpql::replay
