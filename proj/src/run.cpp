#include "apnpql/run.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "apnpql/baselines.hpp"
#include "apnpql/serialize.hpp"

namespace apnpql::cli {

namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

Json vec2(const Eigen::Vector2d& v) { return Json::array({v.x(), v.y()}); }

Json box(const env::SpawnBox& b) { return Json{{"lo", vec2(b.lo)}, {"hi", vec2(b.hi)}}; }

/// Copies given into defaults, rejecting keys the defaults do not have.
void merge_into(Json& defaults, const Json& given, const std::string& path) {
  if (!given.is_object()) throw UsageError("config" + (path.empty() ? "" : " field '" + path + "'") + " must be an object");
  for (auto it = given.begin(); it != given.end(); ++it) {
    std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!defaults.contains(it.key())) throw UsageError("unknown config field '" + key + "'");
    Json& slot = defaults[it.key()];
    if (slot.is_object()) {
      merge_into(slot, it.value(), key);
    } else {
      slot = it.value();
    }
  }
}

class Reader {
 public:
  explicit Reader(const Json& root) : root_(root) {}

  const Json& at(const std::string& path) const {
    const Json* node = &root_;
    std::stringstream ss(path);
    std::string part;
    while (std::getline(ss, part, '.')) {
      if (!node->is_object() || !node->contains(part)) throw UsageError("missing config field '" + path + "'");
      node = &(*node)[part];
    }
    return *node;
  }

  double real(const std::string& path) const {
    const Json& v = at(path);
    if (!v.is_number()) throw UsageError("config field '" + path + "' must be a number");
    return v.get<double>();
  }

  std::int64_t integer(const std::string& path) const {
    const Json& v = at(path);
    if (!v.is_number_integer()) throw UsageError("config field '" + path + "' must be an integer");
    return v.get<std::int64_t>();
  }

  std::string text(const std::string& path) const {
    const Json& v = at(path);
    if (!v.is_string()) throw UsageError("config field '" + path + "' must be a string");
    return v.get<std::string>();
  }

  bool flag(const std::string& path) const {
    const Json& v = at(path);
    if (!v.is_boolean()) throw UsageError("config field '" + path + "' must be true or false");
    return v.get<bool>();
  }

  Eigen::Vector2d pair(const std::string& path) const {
    const Json& v = at(path);
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
      throw UsageError("config field '" + path + "' must be a pair of numbers");
    }
    return {v[0].get<double>(), v[1].get<double>()};
  }

  std::vector<int> widths(const std::string& path) const {
    const Json& v = at(path);
    if (!v.is_array()) throw UsageError("config field '" + path + "' must be a list of integers");
    std::vector<int> out;
    for (const auto& x : v) {
      if (!x.is_number_integer()) throw UsageError("config field '" + path + "' must be a list of integers");
      out.push_back(x.get<int>());
    }
    return out;
  }

 private:
  const Json& root_;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file_atomic(const fs::path& path, const std::string& data) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << data;
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Rng eval_rng(std::uint64_t seed, std::int64_t env_steps) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(env_steps), static_cast<std::uint32_t>(env_steps >> 32), 0x5eedu};
  return Rng(seq);
}

/// Configuration fields that must agree between a run and its resume state.
Json resume_identity(const RunConfig& cfg) {
  Json j = config_to_json(cfg);
  j.erase("budget");
  j.erase("output_dir");
  return j;
}

// ---- binary state for resume.bin ----

constexpr char kCheckpointTag[4] = {'A', 'P', 'C', 'K'};
constexpr char kResumeTag[4] = {'A', 'P', 'R', 'S'};
constexpr std::uint32_t kFormatVersion = 1;

void write_v2(std::ostream& out, const Eigen::Vector2d& v) {
  io::write_f64(out, v.x());
  io::write_f64(out, v.y());
}

Eigen::Vector2d read_v2(std::istream& in) {
  double x = io::read_f64(in);
  return {x, io::read_f64(in)};
}

void write_state(std::ostream& out, const env::ManipState& s) {
  write_v2(out, s.robot_pos);
  write_v2(out, s.robot_vel);
  io::write_i64(out, s.gripper);
  io::write_u32(out, s.held);
  io::write_u32(out, s.contact);
  write_v2(out, s.object_pos);
  write_v2(out, s.goal_pos);
  io::write_i64(out, s.step);
  for (const auto& h : s.history) {
    for (int i = 0; i < 3; ++i) io::write_f64(out, h[i]);
  }
}

env::ManipState read_state(std::istream& in) {
  env::ManipState s;
  s.robot_pos = read_v2(in);
  s.robot_vel = read_v2(in);
  s.gripper = static_cast<int>(io::read_i64(in));
  s.held = io::read_u32(in) != 0;
  s.contact = io::read_u32(in) != 0;
  s.object_pos = read_v2(in);
  s.goal_pos = read_v2(in);
  s.step = static_cast<int>(io::read_i64(in));
  for (auto& h : s.history) {
    for (int i = 0; i < 3; ++i) h[i] = io::read_f64(in);
  }
  return s;
}

void write_transitions(std::ostream& out, const std::vector<replay::Transition>& ts) {
  io::write_i64(out, static_cast<std::int64_t>(ts.size()));
  for (const auto& t : ts) {
    io::write_vector(out, t.obs);
    io::write_vector(out, t.action.velocity);
    io::write_i64(out, t.action.gripper);
    io::write_f64(out, t.reward);
    io::write_vector(out, t.next_obs);
    io::write_u32(out, t.done);
    io::write_u32(out, t.last);
    io::write_matrix(out, t.ap_velocities);
    io::write_vector(out, t.ap_gripper);
    io::write_i64(out, t.episode_id);
    io::write_i64(out, t.step_id);
  }
}

std::vector<replay::Transition> read_transitions(std::istream& in) {
  std::int64_t n = io::read_i64(in);
  if (n < 0) throw io::FormatError("negative transition count");
  std::vector<replay::Transition> out(static_cast<std::size_t>(n));
  for (auto& t : out) {
    t.obs = io::read_vector(in);
    t.action.velocity = io::read_vector(in);
    t.action.gripper = static_cast<int>(io::read_i64(in));
    t.reward = io::read_f64(in);
    t.next_obs = io::read_vector(in);
    t.done = io::read_u32(in) != 0;
    t.last = io::read_u32(in) != 0;
    t.ap_velocities = io::read_matrix(in);
    t.ap_gripper = io::read_vector(in);
    t.episode_id = io::read_i64(in);
    t.step_id = static_cast<std::int32_t>(io::read_i64(in));
  }
  return out;
}

void write_row(std::ostream& out, const MetricsRow& r) {
  io::write_i64(out, r.env_steps);
  io::write_i64(out, r.grad_steps);
  for (double v : {r.success_rate, r.loss_q, r.loss_ap, r.loss_m, r.alpha_mean, r.nu, r.prior_entropy, r.wall_time}) {
    io::write_f64(out, v);
  }
}

MetricsRow read_row(std::istream& in) {
  MetricsRow r;
  r.env_steps = io::read_i64(in);
  r.grad_steps = io::read_i64(in);
  for (double* v : {&r.success_rate, &r.loss_q, &r.loss_ap, &r.loss_m, &r.alpha_mean, &r.nu, &r.prior_entropy,
                    &r.wall_time}) {
    *v = io::read_f64(in);
  }
  return r;
}

struct TrainingState {
  Rng rng;
  std::unique_ptr<npql::Agent> agent;
  std::unique_ptr<replay::DualBuffer> buffers;
  npql::RolloutState rollout;
  std::vector<MetricsRow> rows;
  std::int64_t next_eval = 0;
};

void save_resume(const fs::path& path, const RunConfig& cfg, const TrainingState& st) {
  std::ostringstream out(std::ios::binary);
  io::write_header(out, kResumeTag, kFormatVersion);
  io::write_string(out, resume_identity(cfg).dump());
  std::ostringstream rng_text;
  rng_text << st.rng;
  io::write_string(out, rng_text.str());
  const auto& ro = st.rollout;
  io::write_i64(out, ro.env_steps);
  io::write_i64(out, ro.grad_steps);
  io::write_i64(out, ro.skipped_updates);
  io::write_i64(out, ro.next_episode);
  io::write_i64(out, static_cast<std::int64_t>(ro.states.size()));
  for (std::size_t i = 0; i < ro.states.size(); ++i) {
    write_state(out, ro.states[i]);
    io::write_i64(out, ro.episode_ids[i]);
  }
  io::write_i64(out, st.next_eval);
  io::write_i64(out, static_cast<std::int64_t>(st.rows.size()));
  for (const auto& r : st.rows) write_row(out, r);
  write_transitions(out, st.buffers->online().snapshot());
  write_transitions(out, st.buffers->expert().snapshot());
  st.agent->save(out);
  write_file_atomic(path, out.str());
}

void load_resume(const fs::path& path, const RunConfig& cfg, TrainingState& st) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  io::read_header(in, kResumeTag);
  if (io::read_string(in) != resume_identity(cfg).dump()) {
    throw UsageError("resume state in " + path.string() + " was written with a different config");
  }
  std::istringstream rng_text(io::read_string(in));
  rng_text >> st.rng;
  auto& ro = st.rollout;
  ro.env_steps = io::read_i64(in);
  ro.grad_steps = io::read_i64(in);
  ro.skipped_updates = io::read_i64(in);
  ro.next_episode = io::read_i64(in);
  std::int64_t n = io::read_i64(in);
  if (n != cfg.schedule.num_envs) throw io::FormatError("rollout count does not match the config");
  ro.states.clear();
  ro.episode_ids.clear();
  for (std::int64_t i = 0; i < n; ++i) {
    ro.states.push_back(read_state(in));
    ro.episode_ids.push_back(io::read_i64(in));
  }
  st.next_eval = io::read_i64(in);
  std::int64_t rows = io::read_i64(in);
  st.rows.clear();
  for (std::int64_t i = 0; i < rows; ++i) st.rows.push_back(read_row(in));
  st.buffers->online().clear();
  st.buffers->online().push(read_transitions(in));
  st.buffers->expert().clear();
  st.buffers->expert().push(read_transitions(in));
  st.agent->load(in);
}

struct WindowMetrics {
  double loss_q = 0.0;
  double loss_ap = 0.0;
  double loss_m = 0.0;
  double alpha = 0.0;
  double entropy = 0.0;
  double nu = 0.0;
  std::int64_t steps = 0;

  void add(const npql::IterationMetrics& m) {
    if (m.grad_steps == 0) return;
    loss_q += m.mean.loss_q * m.grad_steps;
    loss_ap += m.mean.loss_ap * m.grad_steps;
    loss_m += m.mean.loss_m * m.grad_steps;
    alpha += m.mean.alpha_mean * m.grad_steps;
    entropy += m.mean.prior_entropy * m.grad_steps;
    nu = m.mean.nu;
    steps += m.grad_steps;
  }

  void fill(MetricsRow& r) const {
    if (steps == 0) return;
    double inv = 1.0 / static_cast<double>(steps);
    r.loss_q = loss_q * inv;
    r.loss_ap = loss_ap * inv;
    r.loss_m = loss_m * inv;
    r.alpha_mean = alpha * inv;
    r.prior_entropy = entropy * inv;
    r.nu = nu;
  }
};

std::string metrics_text(const std::vector<MetricsRow>& rows) {
  std::ostringstream out;
  write_metrics(out, rows);
  return out.str();
}

}  // namespace

void RunConfig::validate() const {
  bool known = false;
  for (const auto& a : kAlgorithms) known = known || a == algorithm;
  if (!known) throw UsageError("config field 'algorithm': unknown algorithm '" + algorithm + "'");
  if (budget < 0) throw UsageError("config field 'budget' must be >= 0");
  if (eval_every < 1) throw UsageError("config field 'eval_every' must be >= 1");
  if (eval_episodes < 1) throw UsageError("config field 'eval_episodes' must be >= 1");
  if (expert_episodes < 0) throw UsageError("config field 'expert_episodes' must be >= 0");
  if (replay_capacity < 1) throw UsageError("config field 'replay_capacity' must be >= 1");
  if (output_dir.empty()) throw UsageError("config field 'output_dir' must not be empty");
  if (schedule.num_envs < 1) throw UsageError("config field 'schedule.num_envs' must be >= 1");
  if (schedule.rollout_steps < 1) throw UsageError("config field 'schedule.rollout_steps' must be >= 1");
  if (schedule.grad_steps < 0) throw UsageError("config field 'schedule.grad_steps' must be >= 0");
  try {
    agent.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("config section 'agent': ") + e.what());
  }
  try {
    env.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("config section 'env': ") + e.what());
  }
}

Json config_to_json(const RunConfig& c) {
  const auto& a = c.agent;
  const auto& e = c.env;
  Json agent{{"gamma", a.gamma},
             {"epsilon", a.epsilon},
             {"epsilon_nu", a.epsilon_nu ? Json(*a.epsilon_nu) : Json(nullptr)},
             {"lambda_ap", a.lambda_ap},
             {"n_policy", a.n_policy},
             {"n_target", a.n_target},
             {"n_step", a.n_step},
             {"lr_e", a.lr_e},
             {"lr_alpha", a.lr_alpha},
             {"lr_m", a.lr_m},
             {"lr_nu", a.lr_nu},
             {"polyak", a.polyak},
             {"batch_size", a.batch_size},
             {"expert_fraction", a.expert_fraction},
             {"entropy_sign", a.entropy_sign},
             {"alpha_init", a.alpha_init},
             {"log_std_init", a.log_std_init},
             {"nu_init", a.nu_init},
             {"feature_dim", a.feature_dim},
             {"trunk_hidden", a.trunk_hidden},
             {"head_hidden", a.head_hidden}};
  Json env{{"task", env::task_name(e.task)},
           {"dt", e.dt},
           {"horizon", e.horizon},
           {"workspace_half_extent", e.workspace_half_extent},
           {"neutral", vec2(e.neutral)},
           {"object_spawn", box(e.object_spawn)},
           {"goal_spawn", box(e.goal_spawn)},
           {"success_radius", e.success_radius},
           {"contact_radius", e.contact_radius},
           {"grasp_radius", e.grasp_radius},
           {"max_speed", e.max_speed},
           {"max_accel", e.max_accel},
           {"ap_gain", e.ap_gain},
           {"expert_noise", e.expert_noise}};
  return Json{{"algorithm", c.algorithm},
              {"seed", c.seed},
              {"budget", c.budget},
              {"eval_every", c.eval_every},
              {"eval_episodes", c.eval_episodes},
              {"expert_episodes", c.expert_episodes},
              {"replay_capacity", c.replay_capacity},
              {"output_dir", c.output_dir},
              {"resume_state", c.resume_state},
              {"schedule",
               {{"num_envs", c.schedule.num_envs},
                {"rollout_steps", c.schedule.rollout_steps},
                {"grad_steps", c.schedule.grad_steps}}},
              {"agent", agent},
              {"env", env}};
}

RunConfig config_from_json(const Json& given) {
  Json merged = config_to_json(RunConfig{});
  merge_into(merged, given, "");
  Reader r(merged);
  RunConfig c;
  c.algorithm = r.text("algorithm");
  std::int64_t seed = r.integer("seed");
  if (seed < 0) throw UsageError("config field 'seed' must be >= 0");
  c.seed = static_cast<std::uint64_t>(seed);
  c.budget = r.integer("budget");
  c.eval_every = r.integer("eval_every");
  c.eval_episodes = static_cast<int>(r.integer("eval_episodes"));
  c.expert_episodes = static_cast<int>(r.integer("expert_episodes"));
  c.replay_capacity = r.integer("replay_capacity");
  c.output_dir = r.text("output_dir");
  c.resume_state = r.flag("resume_state");
  c.schedule.num_envs = static_cast<int>(r.integer("schedule.num_envs"));
  c.schedule.rollout_steps = static_cast<int>(r.integer("schedule.rollout_steps"));
  c.schedule.grad_steps = static_cast<int>(r.integer("schedule.grad_steps"));

  auto& a = c.agent;
  a.gamma = r.real("agent.gamma");
  a.epsilon = r.real("agent.epsilon");
  if (r.at("agent.epsilon_nu").is_null()) {
    a.epsilon_nu.reset();
  } else {
    a.epsilon_nu = r.real("agent.epsilon_nu");
  }
  a.lambda_ap = r.real("agent.lambda_ap");
  a.n_policy = static_cast<int>(r.integer("agent.n_policy"));
  a.n_target = static_cast<int>(r.integer("agent.n_target"));
  a.n_step = static_cast<int>(r.integer("agent.n_step"));
  a.lr_e = r.real("agent.lr_e");
  a.lr_alpha = r.real("agent.lr_alpha");
  a.lr_m = r.real("agent.lr_m");
  a.lr_nu = r.real("agent.lr_nu");
  a.polyak = r.real("agent.polyak");
  a.batch_size = static_cast<int>(r.integer("agent.batch_size"));
  a.expert_fraction = r.real("agent.expert_fraction");
  a.entropy_sign = r.real("agent.entropy_sign");
  a.alpha_init = r.real("agent.alpha_init");
  a.log_std_init = r.real("agent.log_std_init");
  a.nu_init = r.real("agent.nu_init");
  a.feature_dim = static_cast<int>(r.integer("agent.feature_dim"));
  a.trunk_hidden = r.widths("agent.trunk_hidden");
  a.head_hidden = r.widths("agent.head_hidden");

  auto& e = c.env;
  try {
    e.task = env::parse_task(r.text("env.task"));
  } catch (const UsageError&) {
    throw;
  } catch (const std::invalid_argument& ex) {
    throw UsageError(std::string("config field 'env.task': ") + ex.what());
  }
  e.dt = r.real("env.dt");
  e.horizon = static_cast<int>(r.integer("env.horizon"));
  e.workspace_half_extent = r.real("env.workspace_half_extent");
  e.neutral = r.pair("env.neutral");
  e.object_spawn = {r.pair("env.object_spawn.lo"), r.pair("env.object_spawn.hi")};
  e.goal_spawn = {r.pair("env.goal_spawn.lo"), r.pair("env.goal_spawn.hi")};
  e.success_radius = r.real("env.success_radius");
  e.contact_radius = r.real("env.contact_radius");
  e.grasp_radius = r.real("env.grasp_radius");
  e.max_speed = r.real("env.max_speed");
  e.max_accel = r.real("env.max_accel");
  e.ap_gain = r.real("env.ap_gain");
  e.expert_noise = r.real("env.expert_noise");
  return c;
}

void apply_override(Json& j, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("override '" + assignment + "' must look like key=value");
  std::string path = assignment.substr(0, eq);
  std::string text = assignment.substr(eq + 1);
  Json* node = &j;
  std::stringstream ss(path);
  std::string part;
  while (std::getline(ss, part, '.')) {
    if (!node->is_object() || !node->contains(part)) throw UsageError("unknown config field '" + path + "'");
    node = &(*node)[part];
  }
  Json value = Json::parse(text, nullptr, false);
  *node = value.is_discarded() ? Json(text) : value;
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  Json j = config_to_json(RunConfig{});
  if (!path.empty()) {
    Json file = Json::parse(read_file(path), nullptr, false);
    if (file.is_discarded()) throw UsageError("config file " + path + " is not valid JSON");
    merge_into(j, file, "");
  }
  for (const auto& o : overrides) apply_override(j, o);
  RunConfig c = config_from_json(j);
  c.validate();
  return c;
}

const char* const kMetricsHeader =
    "env_steps,grad_steps,success_rate,loss_q,loss_ap,loss_m,alpha_mean,nu,prior_entropy,wall_time";

std::string format_metrics_row(const MetricsRow& r) {
  std::string out = std::to_string(r.env_steps) + "," + std::to_string(r.grad_steps);
  for (double v : {r.success_rate, r.loss_q, r.loss_ap, r.loss_m, r.alpha_mean, r.nu, r.prior_entropy, r.wall_time}) {
    out += "," + format_double(v);
  }
  return out;
}

void write_metrics(std::ostream& out, const std::vector<MetricsRow>& rows) {
  out << kMetricsHeader << '\n';
  for (const auto& r : rows) out << format_metrics_row(r) << '\n';
}

std::vector<MetricsRow> read_metrics(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) throw std::runtime_error("metrics: unexpected header");
  std::vector<MetricsRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 10) throw std::runtime_error("metrics line " + std::to_string(line_no) + ": expected 10 columns");
    try {
      MetricsRow r;
      std::size_t used = 0;
      r.env_steps = std::stoll(cells[0], &used);
      r.grad_steps = std::stoll(cells[1], &used);
      double* fields[] = {&r.success_rate, &r.loss_q, &r.loss_ap, &r.loss_m, &r.alpha_mean, &r.nu, &r.prior_entropy,
                          &r.wall_time};
      for (int i = 0; i < 8; ++i) {
        // strtod rather than stod: subnormal values must parse, not throw
        const char* begin = cells[2 + i].c_str();
        char* end = nullptr;
        *fields[i] = std::strtod(begin, &end);
        if (end == begin || *end != '\0') throw std::invalid_argument("malformed number");
      }
      rows.push_back(r);
    } catch (const std::logic_error&) {
      throw std::runtime_error("metrics line " + std::to_string(line_no) + ": malformed number");
    }
  }
  return rows;
}

std::vector<MetricsRow> load_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  return read_metrics(in);
}

std::unique_ptr<npql::Agent> make_agent(const RunConfig& cfg, Rng& rng) {
  if (cfg.algorithm == "ap-npql") {
    return std::make_unique<npql::NpqlAgent>(env::kObservationDim, env::kNumAps, env::kActionDim, cfg.agent, rng);
  }
  return std::make_unique<baselines::BaselineAgent>(baselines::parse_kind(cfg.algorithm), env::kObservationDim,
                                                    env::kNumAps, env::kActionDim, cfg.agent, rng);
}

std::string checkpoint_name(std::int64_t env_steps) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt_%010lld.bin", static_cast<long long>(env_steps));
  return buf;
}

void save_checkpoint(const std::string& path, const RunConfig& cfg, std::int64_t env_steps, const npql::Agent& agent) {
  std::ostringstream out(std::ios::binary);
  io::write_header(out, kCheckpointTag, kFormatVersion);
  io::write_string(out, config_to_json(cfg).dump());
  io::write_i64(out, env_steps);
  io::write_string(out, agent.algorithm());
  agent.save(out);
  write_file_atomic(path, out.str());
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path);
  try {
    io::read_header(in, kCheckpointTag);
    Checkpoint ck;
    Json j = Json::parse(io::read_string(in), nullptr, false);
    if (j.is_discarded()) throw io::FormatError("embedded config is not JSON");
    ck.config = config_from_json(j);
    ck.env_steps = io::read_i64(in);
    std::string algorithm = io::read_string(in);
    if (algorithm != ck.config.algorithm) throw io::FormatError("algorithm tag does not match the embedded config");
    Rng rng(0);
    ck.agent = make_agent(ck.config, rng);
    ck.agent->load(in);
    return ck;
  } catch (const UsageError& e) {
    throw io::FormatError("corrupt checkpoint " + path + ": " + e.what());
  } catch (const io::FormatError& e) {
    throw io::FormatError("corrupt checkpoint " + path + ": " + e.what());
  }
}

TrainResult train(const RunConfig& cfg, bool resume, std::ostream* log) {
  cfg.validate();
  const fs::path dir(cfg.output_dir);
  const fs::path ckpt_dir = dir / "checkpoints";
  const fs::path resume_path = dir / "resume.bin";
  const fs::path metrics_path = dir / "metrics.csv";
  const fs::path timing_path = dir / "timing.csv";
  fs::create_directories(ckpt_dir);
  write_file_atomic(dir / "config.json", config_to_json(cfg).dump(2) + "\n");

  TrainingState st{Rng(cfg.seed), nullptr, nullptr, {}, {}, cfg.eval_every};
  st.agent = make_agent(cfg, st.rng);
  const auto capacity = static_cast<std::size_t>(cfg.replay_capacity);
  st.buffers = std::make_unique<replay::DualBuffer>(capacity, capacity, cfg.agent.expert_fraction);
  st.buffers->expert().push(
      npql::generate_expert_episodes(cfg.env, cfg.expert_episodes, st.rng, std::int64_t{1} << 40));
  st.rollout = npql::start_rollouts(cfg.env, cfg.schedule.num_envs, st.rng);

  std::ofstream timing;
  if (resume) {
    if (!fs::exists(resume_path)) throw UsageError("nothing to resume: " + resume_path.string() + " is missing");
    load_resume(resume_path, cfg, st);
    timing.open(timing_path, std::ios::app);
  } else {
    save_checkpoint((ckpt_dir / checkpoint_name(0)).string(), cfg, 0, *st.agent);
    timing.open(timing_path, std::ios::trunc);
    timing << "env_steps,seconds\n";
  }
  write_file_atomic(metrics_path, metrics_text(st.rows));

  const auto start = std::chrono::steady_clock::now();
  WindowMetrics window;
  while (st.rollout.env_steps < cfg.budget) {
    window.add(npql::train_iteration(*st.agent, st.rollout, *st.buffers, cfg.env, cfg.schedule, st.rng));
    const std::int64_t steps = st.rollout.env_steps;
    if (steps < st.next_eval && steps < cfg.budget) continue;
    while (st.next_eval <= steps) st.next_eval += cfg.eval_every;

    MetricsRow row;
    row.env_steps = steps;
    row.grad_steps = st.rollout.grad_steps;
    Rng er = eval_rng(cfg.seed, steps);
    row.success_rate = env::evaluate_success(npql::agent_policy(*st.agent), cfg.env, cfg.eval_episodes, er);
    window.fill(row);
    window = WindowMetrics{};
    st.rows.push_back(row);

    double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_file_atomic(metrics_path, metrics_text(st.rows));
    timing << steps << ',' << format_double(seconds) << '\n' << std::flush;
    save_checkpoint((ckpt_dir / checkpoint_name(steps)).string(), cfg, steps, *st.agent);
    if (cfg.resume_state) save_resume(resume_path, cfg, st);
    if (log) {
      *log << cfg.algorithm << " seed " << cfg.seed << " steps " << steps << " success " << row.success_rate
           << " loss_q " << row.loss_q << " alpha " << row.alpha_mean << " (" << static_cast<long>(seconds) << " s)"
           << std::endl;
    }
  }
  return {st.rows, dir.string()};
}

void write_traces(std::ostream& out, const std::vector<env::EpisodeTrace>& traces) {
  for (std::size_t e = 0; e < traces.size(); ++e) {
    Json steps = Json::array();
    for (const auto& s : traces[e].steps) {
      steps.push_back({{"t", s.state.step},
                       {"robot", vec2(s.state.robot_pos)},
                       {"object", vec2(s.state.object_pos)},
                       {"goal", vec2(s.state.goal_pos)},
                       {"gripper", s.state.gripper},
                       {"held", s.state.held},
                       {"contact", s.state.contact},
                       {"velocity", std::vector<double>(s.action.velocity.data(),
                                                        s.action.velocity.data() + s.action.velocity.size())},
                       {"command_gripper", s.action.gripper},
                       {"reward", s.reward}});
    }
    out << Json{{"episode", e}, {"success", traces[e].success}, {"steps", steps}}.dump() << '\n';
  }
}

namespace {

double run_eval(const env::BatchPolicy& policy, const env::EnvConfig& env_cfg, const EvalOptions& opts) {
  if (opts.episodes < 1) throw UsageError("episodes must be >= 1");
  Rng rng(opts.seed);
  std::vector<env::EpisodeTrace> traces;
  double rate = env::evaluate_success(policy, env_cfg, opts.episodes, rng, opts.traces_path.empty() ? nullptr : &traces);
  if (!opts.traces_path.empty()) {
    std::ofstream out(opts.traces_path);
    if (!out) throw std::runtime_error("cannot write " + opts.traces_path);
    write_traces(out, traces);
  }
  return rate;
}

}  // namespace

double evaluate_checkpoint(const std::string& checkpoint_path, const EvalOptions& opts) {
  if (opts.episodes < 1) throw UsageError("episodes must be >= 1");
  auto ck = load_checkpoint(checkpoint_path);
  return run_eval(npql::agent_policy(*ck.agent), ck.config.env, opts);
}

double evaluate_expert(const env::EnvConfig& env_cfg, const EvalOptions& opts) {
  return run_eval(env::expert_policy(env_cfg), env_cfg, opts);
}

}  // namespace apnpql::cli
