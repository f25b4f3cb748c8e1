// Command-line front end: train, eval, verify, export-curves, show-config.
// Exit codes: 0 ok, 1 usage error, 2 verification failure, 3 runtime error.

#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "apnpql/curves.hpp"
#include "apnpql/run.hpp"
#include "apnpql/verify.hpp"

using namespace apnpql;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kVerifyFailed = 2;
constexpr int kRuntime = 3;

struct ConfigArgs {
  std::string file;
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", file, "JSON config file (defaults when omitted)");
    cmd->add_option("-s,--set", overrides, "dotted.path=value override, repeatable");
  }

  cli::RunConfig load() const { return cli::load_config(file, overrides); }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AP-NPQL training and verification harness"};
  app.require_subcommand(1);

  ConfigArgs train_cfg;
  bool resume = false;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "train an agent to the configured env-step budget");
  train_cfg.attach(train);
  train->add_flag("--resume", resume, "continue from <output_dir>/resume.bin");
  train->add_flag("-q,--quiet", quiet, "no progress lines");

  ConfigArgs eval_cfg;
  std::string checkpoint;
  bool expert = false;
  cli::EvalOptions eval_opts;
  auto* eval = app.add_subcommand("eval", "success rate of a checkpoint or of the scripted expert");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file");
  eval->add_flag("--expert", expert, "evaluate the scripted expert on the configured task");
  eval_cfg.attach(eval);
  eval->add_option("-n,--episodes", eval_opts.episodes, "episodes")->required();
  eval->add_option("--seed", eval_opts.seed, "evaluation seed");
  eval->add_option("--traces", eval_opts.traces_path, "per-episode JSON-lines trace output");

  std::string suite = "all";
  std::uint64_t verify_seed = 0;
  std::string report_path = "verify_report.json";
  auto* verify = app.add_subcommand("verify", "run exact and property verification suites");
  verify->add_option("--suite", suite, "all, contraction, feasibility, em, identity, gradient, projection, alpha");
  verify->add_option("--seed", verify_seed, "seed for random instances");
  verify->add_option("--report", report_path, "machine-readable report file");

  std::vector<std::string> run_dirs;
  std::string curves_out = "curves";
  auto* curves = app.add_subcommand("export-curves", "merge run metrics into CSV and an SVG plot");
  curves->add_option("runs", run_dirs, "run directories");
  curves->add_option("-o,--out", curves_out, "output directory");

  ConfigArgs show_cfg;
  auto* show = app.add_subcommand("show-config", "print the effective configuration");
  show_cfg.attach(show);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train) {
      auto cfg = train_cfg.load();
      auto result = cli::train(cfg, resume, quiet ? nullptr : &std::cerr);
      std::printf("%s\n", result.run_dir.c_str());
      if (!result.rows.empty()) std::printf("final success_rate %.4f\n", result.rows.back().success_rate);
      return kOk;
    }
    if (*eval) {
      if (expert == !checkpoint.empty()) throw cli::UsageError("eval needs exactly one of --checkpoint or --expert");
      if (eval_opts.episodes < 1) throw cli::UsageError("--episodes must be >= 1");
      double rate = expert ? cli::evaluate_expert(eval_cfg.load().env, eval_opts)
                           : cli::evaluate_checkpoint(checkpoint, eval_opts);
      std::printf("success_rate %.4f\n", rate);
      return kOk;
    }
    if (*verify) {
      auto reports = verify::run_suites(suite, verify_seed);
      auto json = verify::report_to_json(reports, verify_seed);
      std::ofstream out(report_path);
      if (!out) throw std::runtime_error("cannot write " + report_path);
      out << json.dump(2) << '\n';
      for (const auto& r : reports) {
        std::printf("%-12s %s  cases=%d failures=%d  %.1fs\n", r.suite.c_str(), r.passed ? "PASS" : "FAIL", r.cases,
                    r.failure_count, r.seconds);
        for (const auto& f : r.failures) std::printf("  %s: %s\n", f.check.c_str(), f.detail.c_str());
      }
      return json["passed"].get<bool>() ? kOk : kVerifyFailed;
    }
    if (*curves) {
      auto result = curves::export_curves(run_dirs, curves_out);
      for (const auto& w : result.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
      std::printf("%d runs, %zu algorithms -> %s\n", result.runs, result.curves.size(), curves_out.c_str());
      return kOk;
    }
    if (*show) {
      std::printf("%s\n", cli::config_to_json(show_cfg.load()).dump(2).c_str());
      return kOk;
    }
  } catch (const cli::UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntime;
  }
  return kUsage;
}
