#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace apnpql::verify {

struct Failure {
  std::string check;
  std::string detail;
  nlohmann::json instance;  // enough to reproduce the failing case
};

struct SuiteReport {
  std::string suite;
  bool passed = true;
  int cases = 0;
  double seconds = 0.0;
  nlohmann::json stats = nlohmann::json::object();
  std::vector<Failure> failures;
  int failure_count = 0;  // failures beyond the recorded ones are only counted
};

/// contraction, feasibility, em, identity, gradient, projection, alpha.
const std::vector<std::string>& suite_names();

/// Throws cli::UsageError for an unknown name.
SuiteReport run_suite(const std::string& name, std::uint64_t seed);

/// "all" or a single suite name.
std::vector<SuiteReport> run_suites(const std::string& selector, std::uint64_t seed);

nlohmann::json report_to_json(const std::vector<SuiteReport>& reports, std::uint64_t seed);

// Individual suites.
SuiteReport contraction_suite(std::uint64_t seed, int instances = 100, int pairs = 100);
SuiteReport feasibility_suite(std::uint64_t seed, int instances = 50);
SuiteReport em_suite(std::uint64_t seed, int instances = 50, int iterations = 20);
SuiteReport identity_suite(std::uint64_t seed, int batches = 1000);
SuiteReport gradient_suite(std::uint64_t seed, int instances = 50);
SuiteReport projection_suite(std::uint64_t seed, int projections = 10000);
SuiteReport alpha_suite(std::uint64_t seed, int grid_instances = 10);

}  // namespace apnpql::verify
