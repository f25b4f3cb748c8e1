#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "apnpql/curves.hpp"
#include "apnpql/run.hpp"
#include "apnpql/serialize.hpp"
#include "apnpql/verify.hpp"

using namespace apnpql;
using namespace apnpql::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("apnpql_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

/// Small enough to train a few hundred env steps in well under a second.
RunConfig tiny(const fs::path& dir, const std::string& algorithm = "ap-npql") {
  RunConfig c;
  c.algorithm = algorithm;
  c.seed = 5;
  c.budget = 200;
  c.eval_every = 100;
  c.eval_episodes = 4;
  c.expert_episodes = 3;
  c.replay_capacity = 1000;
  c.output_dir = dir.string();
  c.schedule = {2, 10, 2};
  c.agent.feature_dim = 8;
  c.agent.trunk_hidden = {8};
  c.agent.head_hidden = {8};
  c.agent.n_policy = 6;
  c.agent.n_target = 5;
  c.agent.batch_size = 8;
  return c;
}

int run_cli(const std::string& args) {
  std::string cmd = std::string(APNPQL_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config defaults, JSON round trip and field-named errors") {
  RunConfig d;
  CHECK_NOTHROW(d.validate());
  auto j = config_to_json(d);
  CHECK(config_to_json(config_from_json(j)) == j);

  CHECK_THROWS_WITH_AS(config_from_json(nlohmann::json{{"agent", {{"gama", 0.9}}}}),
                       doctest::Contains("agent.gama"), UsageError);
  CHECK_THROWS_WITH_AS(config_from_json(nlohmann::json{{"schedule", {{"grad_steps", 1.5}}}}),
                       doctest::Contains("schedule.grad_steps"), UsageError);
  CHECK_THROWS_WITH_AS(config_from_json(nlohmann::json{{"env", {{"task", "stack"}}}}), doctest::Contains("env.task"),
                       UsageError);
  RunConfig bad;
  bad.algorithm = "dqn";
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("algorithm"), UsageError);
  bad = RunConfig{};
  bad.agent.n_step = 0;
  CHECK_THROWS_AS(bad.validate(), UsageError);
}

TEST_CASE("dotted overrides") {
  auto c = load_config("", {"agent.lr_e=0.001", "env.task=pickplace", "agent.epsilon_nu=0.25",
                            "agent.head_hidden=[16,16]", "seed=9"});
  CHECK(c.agent.lr_e == 0.001);
  CHECK(c.env.task == env::Task::kPickPlace);
  CHECK(c.agent.epsilon_nu == 0.25);
  CHECK(c.agent.head_hidden == std::vector<int>{16, 16});
  CHECK(c.seed == 9);
  CHECK_THROWS_WITH_AS(load_config("", {"agent.nope=1"}), doctest::Contains("agent.nope"), UsageError);
  CHECK_THROWS_AS(load_config("", {"budget"}), UsageError);
  CHECK_THROWS_AS(load_config("", {"budget=-5"}), UsageError);

  auto dir = scratch("config_file");
  fs::create_directories(dir);
  std::ofstream(dir / "c.json") << R"({"algorithm": "sac", "agent": {"gamma": 0.95}})";
  auto f = load_config((dir / "c.json").string(), {"agent.gamma=0.9"});
  CHECK(f.algorithm == "sac");
  CHECK(f.agent.gamma == 0.9);
  std::ofstream(dir / "broken.json") << "{";
  CHECK_THROWS_AS(load_config((dir / "broken.json").string(), {}), UsageError);
  fs::remove_all(dir);
}

TEST_CASE("metrics CSV round trip") {
  std::vector<MetricsRow> rows(3);
  rows[0] = {100, 20, 0.25, 1.0 / 3.0, 1e-300, -0.1, 0.1 + 0.2, 0.0, 2.0794415416798357, 0.0};
  rows[1] = {200, 40, 1.0, 3.14159, 0.0, -1e10, 5e-324, 7.0, -0.0, 0.0};
  rows[2].env_steps = 300;
  std::stringstream s;
  write_metrics(s, rows);
  CHECK(s.str().rfind(std::string(kMetricsHeader) + "\n", 0) == 0);
  CHECK(std::string(kMetricsHeader) ==
        "env_steps,grad_steps,success_rate,loss_q,loss_ap,loss_m,alpha_mean,nu,prior_entropy,wall_time");
  auto back = read_metrics(s);
  REQUIRE(back.size() == 3);
  for (int i = 0; i < 3; ++i) CHECK(back[i] == rows[i]);
  std::stringstream bad(std::string(kMetricsHeader) + "\n1,2,3\n");
  CHECK_THROWS(read_metrics(bad));
  std::stringstream wrong("a,b\n");
  CHECK_THROWS(read_metrics(wrong));
}

TEST_CASE("zero budget writes the header and an initial checkpoint") {
  auto dir = scratch("zero");
  auto cfg = tiny(dir);
  cfg.budget = 0;
  auto r = train(cfg);
  CHECK(r.rows.empty());
  CHECK(slurp(dir / "metrics.csv") == std::string(kMetricsHeader) + "\n");
  CHECK(fs::exists(dir / "checkpoints" / checkpoint_name(0)));
  CHECK(nlohmann::json::parse(slurp(dir / "config.json")) == config_to_json(cfg));
  fs::remove_all(dir);
}

TEST_CASE("training is deterministic, resumable and replayable from the echo") {
  auto a = scratch("det_a");
  auto b = scratch("det_b");
  auto r1 = train(tiny(a));
  train(tiny(b));
  REQUIRE(r1.rows.size() == 2);
  CHECK(r1.rows[0].env_steps == 100);
  CHECK(r1.rows[1].env_steps == 200);
  CHECK(r1.rows[1].grad_steps > 0);
  CHECK(r1.rows[1].wall_time == 0.0);
  CHECK(slurp(a / "metrics.csv") == slurp(b / "metrics.csv"));
  CHECK(load_metrics((a / "metrics.csv").string()) == r1.rows);
  CHECK(fs::exists(a / "checkpoints" / checkpoint_name(200)));
  CHECK(fs::exists(a / "timing.csv"));

  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("resume continues bit-identically") {
  auto full = scratch("resume_full");
  auto part = scratch("resume_part");
  train(tiny(full));
  auto half = tiny(part);
  half.budget = 100;
  train(half);
  train(tiny(part), true);
  CHECK(slurp(full / "metrics.csv") == slurp(part / "metrics.csv"));
  auto other = tiny(part);
  other.agent.lr_e = 1e-3;
  CHECK_THROWS_AS(train(other, true), UsageError);
  auto fresh = scratch("resume_none");
  CHECK_THROWS_AS(train(tiny(fresh), true), UsageError);

  // config echo plus seed reproduces the CSV
  auto replay_dir = scratch("resume_echo");
  auto echoed = load_config((full / "config.json").string(), {"output_dir=" + replay_dir.string()});
  train(echoed);
  CHECK(slurp(full / "metrics.csv") == slurp(replay_dir / "metrics.csv"));
  for (const auto& d : {full, part, fresh, replay_dir}) fs::remove_all(d);
}

TEST_CASE("checkpoints and evaluation") {
  auto dir = scratch("eval");
  auto cfg = tiny(dir, "ap-sac");
  cfg.env.task = env::Task::kPickPlace;
  cfg.budget = 0;
  train(cfg);
  auto path = (dir / "checkpoints" / checkpoint_name(0)).string();
  auto ck = load_checkpoint(path);
  CHECK(ck.agent->algorithm() == "ap-sac");
  CHECK(ck.env_steps == 0);
  CHECK(config_to_json(ck.config) == config_to_json(cfg));

  EvalOptions opts;
  opts.episodes = 100;
  opts.seed = 3;
  CHECK(evaluate_checkpoint(path, opts) <= 0.05);
  CHECK(evaluate_expert(cfg.env, opts) >= 0.95);

  opts.episodes = 3;
  opts.traces_path = (dir / "traces.jsonl").string();
  evaluate_expert(cfg.env, opts);
  std::ifstream traces(opts.traces_path);
  std::string line;
  int lines = 0;
  while (std::getline(traces, line)) {
    auto j = nlohmann::json::parse(line);
    CHECK(j["episode"] == lines);
    CHECK(j["steps"].size() > 0);
    ++lines;
  }
  CHECK(lines == 3);

  opts.episodes = 0;
  CHECK_THROWS_AS(evaluate_checkpoint(path, opts), UsageError);
  CHECK_THROWS_AS(evaluate_expert(cfg.env, opts), UsageError);

  std::string bytes = slurp(path);
  std::ofstream(dir / "corrupt.bin", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  CHECK_THROWS(load_checkpoint((dir / "corrupt.bin").string()));
  std::ofstream(dir / "garbage.bin", std::ios::binary) << "not a checkpoint";
  CHECK_THROWS_AS(load_checkpoint((dir / "garbage.bin").string()), io::FormatError);
  fs::remove_all(dir);
}

TEST_CASE("curve export: envelope, single run and warnings") {
  auto root = scratch("curves");
  std::vector<std::string> dirs;
  std::vector<std::vector<double>> rates{{0.1, 0.5, 0.9}, {0.3, 0.4, 1.0}, {0.2, 0.6, 0.8}};
  for (int seed = 0; seed < 3; ++seed) {
    auto d = root / ("npql_" + std::to_string(seed));
    fs::create_directories(d);
    RunConfig c;
    c.seed = seed;
    c.output_dir = d.string();
    std::ofstream(d / "config.json") << config_to_json(c).dump(2);
    std::vector<MetricsRow> rows;
    for (int k = 0; k < 3; ++k) {
      MetricsRow r;
      r.env_steps = 10000 * (k + 1);
      r.success_rate = rates[seed][k];
      rows.push_back(r);
    }
    std::ofstream out(d / "metrics.csv");
    write_metrics(out, rows);
    dirs.push_back(d.string());
  }
  auto sac = root / "sac_0";
  fs::create_directories(sac);
  RunConfig sc;
  sc.algorithm = "sac";
  std::ofstream(sac / "config.json") << config_to_json(sc).dump();
  {
    std::ofstream out(sac / "metrics.csv");
    write_metrics(out, {MetricsRow{10000, 0, 0.05}, MetricsRow{20000, 0, 0.1}});
  }
  dirs.push_back(sac.string());
  dirs.push_back((root / "missing").string());

  auto out = root / "out";
  auto r = curves::export_curves(dirs, out.string());
  CHECK(r.runs == 4);
  CHECK(r.warnings.size() == 1);
  REQUIRE(r.curves.size() == 2);
  CHECK(r.curves[0].algorithm == "ap-npql");
  CHECK(r.curves[1].algorithm == "sac");
  const auto& npql = r.curves[0];
  REQUIRE(npql.points.size() == 3);
  for (int k = 0; k < 3; ++k) {
    double lo = std::min({rates[0][k], rates[1][k], rates[2][k]});
    double hi = std::max({rates[0][k], rates[1][k], rates[2][k]});
    CHECK(npql.points[k].min == lo);
    CHECK(npql.points[k].max == hi);
    CHECK(npql.points[k].mean == doctest::Approx((rates[0][k] + rates[1][k] + rates[2][k]) / 3.0));
    CHECK(npql.points[k].runs == 3);
  }

  std::string svg = slurp(out / "curves.svg");
  CHECK(svg == curves::render_svg(r.curves));
  CHECK(svg.find("class=\"band\" data-algorithm=\"ap-npql\"") != std::string::npos);
  CHECK(svg.find("class=\"band\" data-algorithm=\"sac\"") == std::string::npos);
  auto count = [](const std::string& s, const std::string& needle) {
    int n = 0;
    for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
    return n;
  };
  CHECK(count(svg, "<polyline") == 2);
  CHECK(count(slurp(out / "merged.csv"), "\n") == 1 + 9 + 2);

  auto single = curves::aggregate({curves::RunCurve{"x", "ap-mpo", 0, {MetricsRow{100, 0, 0.5}}}});
  std::string one = curves::render_svg(single);
  CHECK(count(one, "<polyline") == 1);
  CHECK(count(one, "<polygon") == 0);

  CHECK_THROWS_AS(curves::export_curves({}, out.string()), UsageError);
  fs::remove_all(root);
}

TEST_CASE("verify suites") {
  CHECK_THROWS_AS(verify::run_suite("bogus", 0), UsageError);
  auto names = verify::suite_names();
  CHECK(names.size() == 7);
  auto id = verify::identity_suite(1, 50);
  CHECK(id.passed);
  CHECK(id.cases == 50);
  auto c = verify::contraction_suite(1, 3, 10);
  CHECK(c.passed);
  CHECK(c.stats["max_ratio"].get<double>() <= 0.95);
  auto j = verify::report_to_json({id, c}, 1);
  CHECK(j["passed"] == true);
  CHECK(j["suites"].size() == 2);
}

TEST_CASE("command-line exit codes") {
  auto dir = scratch("exit");
  fs::create_directories(dir);
  std::string report = (dir / "r.json").string();
  CHECK(run_cli("verify --suite identity --report " + report) == 0);
  CHECK(nlohmann::json::parse(slurp(report))["passed"] == true);
  CHECK(run_cli("verify --suite nonsense --report " + report) == 1);
  CHECK(run_cli("eval --expert --episodes 0") == 1);
  CHECK(run_cli("eval --expert --episodes 5 --set env.task=pickplace") == 0);
  CHECK(run_cli("eval --checkpoint " + (dir / "none.bin").string() + " --episodes 5") == 3);
  CHECK(run_cli("train --set agent.gama=1") == 1);
  CHECK(run_cli("export-curves") == 1);
  CHECK(run_cli("frobnicate") == 1);
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("train --quiet --set budget=0 --set output_dir=" + (dir / "run").string()) == 0);
  CHECK(fs::exists(dir / "run" / "metrics.csv"));
  fs::remove_all(dir);
}
