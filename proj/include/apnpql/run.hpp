#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "apnpql/agent.hpp"
#include "apnpql/env.hpp"
#include "apnpql/trainer.hpp"

namespace apnpql::cli {

/// Bad configuration or command-line input. The message names the field.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline const std::vector<std::string> kAlgorithms{"ap-npql", "ap-mpo", "ap-sac", "sac"};

struct RunConfig {
  std::string algorithm = "ap-npql";
  std::uint64_t seed = 0;
  std::int64_t budget = 150000;       // env steps
  std::int64_t eval_every = 10000;    // env steps between evaluations
  int eval_episodes = 50;
  int expert_episodes = 200;
  std::int64_t replay_capacity = 200000;
  std::string output_dir = "runs/default";
  bool resume_state = true;           // keep resume.bin (buffers included) at every eval
  npql::TrainSchedule schedule{10, 10, 20};
  npql::AgentConfig agent;
  env::EnvConfig env;

  /// Throws UsageError naming the offending field.
  void validate() const;
};

nlohmann::json config_to_json(const RunConfig& cfg);
/// Unknown keys and type mismatches are usage errors.
RunConfig config_from_json(const nlohmann::json& j);

/// Applies "dotted.path=value" to j. The value is parsed as JSON when it
/// parses, otherwise taken as a string. The path must already exist.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Defaults, then the optional file, then the overrides in order.
RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides);

struct MetricsRow {
  std::int64_t env_steps = 0;
  std::int64_t grad_steps = 0;
  double success_rate = 0.0;
  double loss_q = 0.0;
  double loss_ap = 0.0;
  double loss_m = 0.0;
  double alpha_mean = 0.0;
  double nu = 0.0;
  double prior_entropy = 0.0;
  double wall_time = 0.0;

  bool operator==(const MetricsRow&) const = default;
};

extern const char* const kMetricsHeader;

std::string format_metrics_row(const MetricsRow& row);
void write_metrics(std::ostream& out, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics(std::istream& in);
std::vector<MetricsRow> load_metrics(const std::string& path);

std::unique_ptr<npql::Agent> make_agent(const RunConfig& cfg, Rng& rng);

struct Checkpoint {
  RunConfig config;
  std::int64_t env_steps = 0;
  std::unique_ptr<npql::Agent> agent;
};

void save_checkpoint(const std::string& path, const RunConfig& cfg, std::int64_t env_steps, const npql::Agent& agent);
Checkpoint load_checkpoint(const std::string& path);
std::string checkpoint_name(std::int64_t env_steps);

struct TrainResult {
  std::vector<MetricsRow> rows;
  std::string run_dir;
};

/// Trains cfg.algorithm to the budget in cfg.output_dir, writing config.json,
/// metrics.csv, timing.csv, checkpoints/ and resume.bin. With resume set, the
/// run continues from resume.bin and the finished CSV matches an
/// uninterrupted run byte for byte. wall_time in metrics.csv is always 0;
/// elapsed seconds go to timing.csv.
TrainResult train(const RunConfig& cfg, bool resume = false, std::ostream* log = nullptr);

struct EvalOptions {
  int episodes = 50;
  std::uint64_t seed = 0;
  std::string traces_path;  // JSON lines, one episode per line; empty = none
};

double evaluate_checkpoint(const std::string& checkpoint_path, const EvalOptions& opts);
double evaluate_expert(const env::EnvConfig& env_cfg, const EvalOptions& opts);

void write_traces(std::ostream& out, const std::vector<env::EpisodeTrace>& traces);

}  // namespace apnpql::cli
