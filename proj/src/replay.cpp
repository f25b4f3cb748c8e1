#include "apnpql/replay.hpp"

#include <cmath>
#include <fstream>
#include <mutex>
#include <stdexcept>

#include <json.hpp>

namespace apnpql::replay {

namespace {

std::uint64_t key_of(std::int64_t episode, std::int32_t step) {
  return (static_cast<std::uint64_t>(episode) << 20) ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(step));
}

bool same_action(const dist::HybridAction& a, const dist::HybridAction& b) {
  return a.gripper == b.gripper && a.velocity.size() == b.velocity.size() && a.velocity == b.velocity;
}

template <typename M>
bool same_shape_equal(const M& a, const M& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
}

nlohmann::json to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector vector_from(const nlohmann::json& j) {
  auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

}  // namespace

bool operator==(const Transition& a, const Transition& b) {
  return same_shape_equal(a.obs, b.obs) && same_action(a.action, b.action) && a.reward == b.reward &&
         same_shape_equal(a.next_obs, b.next_obs) && a.done == b.done && a.last == b.last &&
         same_shape_equal(a.ap_velocities, b.ap_velocities) && same_shape_equal(a.ap_gripper, b.ap_gripper) &&
         a.episode_id == b.episode_id && a.step_id == b.step_id;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("replay capacity must be positive");
}

void ReplayBuffer::push(std::span<const Transition> transitions) {
  if (transitions.empty()) return;
  std::unique_lock lock(mutex_);
  if (slots_.size() < capacity_) slots_.reserve(std::min(capacity_, slots_.size() + transitions.size()));
  for (const auto& t : transitions) {
    std::size_t s;
    if (count_ < capacity_) {
      s = slot(count_);
      if (s == slots_.size()) {
        slots_.push_back(t);
      } else {
        slots_[s] = t;
      }
      ++count_;
    } else {
      s = start_;
      by_id_.erase(key_of(slots_[s].episode_id, slots_[s].step_id));
      slots_[s] = t;
      start_ = (start_ + 1) % capacity_;
    }
    by_id_[key_of(t.episode_id, t.step_id)] = s;
  }
}

void ReplayBuffer::clear() {
  std::unique_lock lock(mutex_);
  slots_.clear();
  by_id_.clear();
  start_ = 0;
  count_ = 0;
}

std::size_t ReplayBuffer::size() const {
  std::shared_lock lock(mutex_);
  return count_;
}

Transition ReplayBuffer::get(std::size_t index) const {
  std::shared_lock lock(mutex_);
  if (index >= count_) throw std::out_of_range("replay index out of range");
  return slots_[slot(index)];
}

std::vector<Transition> ReplayBuffer::snapshot() const {
  std::shared_lock lock(mutex_);
  std::vector<Transition> out;
  out.reserve(count_);
  for (std::size_t i = 0; i < count_; ++i) out.push_back(slots_[slot(i)]);
  return out;
}

NStepTransition ReplayBuffer::assemble_locked(std::size_t index, int n, double gamma) const {
  if (index >= count_) throw std::out_of_range("replay index out of range");
  if (n < 1) throw std::invalid_argument("n-step length must be >= 1");
  const Transition* cur = &slots_[slot(index)];
  NStepTransition out;
  out.obs = cur->obs;
  out.action = cur->action;
  out.ap_velocities = cur->ap_velocities;
  out.ap_gripper = cur->ap_gripper;
  out.episode_id = cur->episode_id;
  out.step_id = cur->step_id;

  double ret = cur->reward;
  double scale = 1.0;
  int steps = 1;
  while (steps < n && !cur->done && !cur->last) {
    auto it = by_id_.find(key_of(cur->episode_id, cur->step_id + 1));
    if (it == by_id_.end()) break;
    const Transition* next = &slots_[it->second];
    if (next->episode_id != cur->episode_id || next->step_id != cur->step_id + 1) break;
    scale *= gamma;
    ret += scale * next->reward;
    cur = next;
    ++steps;
  }
  out.reward = ret;
  out.n = steps;
  out.done = cur->done;
  out.discount = cur->done ? 0.0 : scale * gamma;
  out.bootstrap_obs = cur->next_obs;
  return out;
}

NStepTransition ReplayBuffer::nstep_assemble(std::size_t index, int n, double gamma) const {
  std::shared_lock lock(mutex_);
  return assemble_locked(index, n, gamma);
}

std::vector<NStepTransition> ReplayBuffer::sample(int count, int n, double gamma, Rng& rng) const {
  std::shared_lock lock(mutex_);
  std::vector<NStepTransition> out;
  if (count <= 0) return out;
  if (count_ == 0) throw std::logic_error("sampling from an empty replay buffer");
  std::uniform_int_distribution<std::size_t> pick(0, count_ - 1);
  out.reserve(count);
  for (int i = 0; i < count; ++i) out.push_back(assemble_locked(pick(rng), n, gamma));
  return out;
}

DualBuffer::DualBuffer(std::size_t online_capacity, std::size_t expert_capacity, double expert_fraction)
    : online_(online_capacity), expert_(expert_capacity), expert_fraction_(expert_fraction) {
  if (!(expert_fraction >= 0.0 && expert_fraction <= 1.0)) {
    throw std::invalid_argument("expert fraction must lie in [0, 1]");
  }
}

int DualBuffer::expert_quota(int batch_size) const {
  if (expert_.empty()) return 0;
  return static_cast<int>(std::floor(expert_fraction_ * batch_size + 1e-12));
}

std::optional<std::vector<NStepTransition>> DualBuffer::sample_mixed(int batch_size, int n, double gamma,
                                                                     Rng& rng) const {
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  int n_expert = expert_quota(batch_size);
  int n_online = batch_size - n_expert;
  if (n_online > 0 && online_.empty()) return std::nullopt;
  auto batch = expert_.sample(n_expert, n, gamma, rng);
  auto online = online_.sample(n_online, n, gamma, rng);
  batch.insert(batch.end(), std::make_move_iterator(online.begin()), std::make_move_iterator(online.end()));
  return batch;
}

void write_jsonl(std::ostream& out, std::span<const Transition> transitions) {
  for (const auto& t : transitions) {
    nlohmann::json j;
    j["obs"] = to_json(t.obs);
    j["velocity"] = to_json(t.action.velocity);
    j["gripper"] = t.action.gripper;
    j["reward"] = t.reward;
    j["next_obs"] = to_json(t.next_obs);
    j["done"] = t.done;
    j["last"] = t.last;
    auto rows = nlohmann::json::array();
    for (Eigen::Index k = 0; k < t.ap_velocities.rows(); ++k) rows.push_back(to_json(t.ap_velocities.row(k).transpose()));
    j["ap_velocities"] = rows;
    j["ap_gripper"] = to_json(t.ap_gripper);
    j["episode"] = t.episode_id;
    j["step"] = t.step_id;
    out << j.dump() << '\n';
  }
}

std::vector<Transition> read_jsonl(std::istream& in) {
  std::vector<Transition> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    Transition t;
    t.obs = vector_from(j.at("obs"));
    t.action.velocity = vector_from(j.at("velocity"));
    t.action.gripper = j.at("gripper").get<int>();
    t.reward = j.at("reward").get<double>();
    t.next_obs = vector_from(j.at("next_obs"));
    t.done = j.at("done").get<bool>();
    t.last = j.at("last").get<bool>();
    const auto& rows = j.at("ap_velocities");
    if (!rows.empty()) {
      auto d = rows[0].size();
      t.ap_velocities.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
      for (std::size_t k = 0; k < rows.size(); ++k) {
        t.ap_velocities.row(static_cast<Eigen::Index>(k)) = vector_from(rows[k]).transpose();
      }
    }
    t.ap_gripper = vector_from(j.at("ap_gripper"));
    t.episode_id = j.at("episode").get<std::int64_t>();
    t.step_id = j.at("step").get<std::int32_t>();
    out.push_back(std::move(t));
  }
  return out;
}

void save_jsonl(const std::string& path, std::span<const Transition> transitions) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_jsonl(out, transitions);
}

std::vector<Transition> load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_jsonl(in);
}

}  // namespace apnpql::replay
