#pragma once

// Central finite-difference verification of every differentiable op, each
// loss and the full training objective.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace primseg {

struct GradcheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  bool passed = true;
  bool skipped = false;
  std::string note;
};

struct GradcheckReport {
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
  std::vector<GradcheckEntry> entries;

  bool all_passed() const;
  /// Names of the failing entries.
  std::vector<std::string> failures() const;
  nlohmann::json to_json() const;
};

struct GradcheckOptions {
  double tolerance = 1e-4;
  double step = 1e-6;
  /// At most this many coordinates of each input are perturbed.
  std::size_t max_entries_per_input = 24;
  /// Test hook: the analytic gradient of this case is corrupted so the failure path can be exercised.
  std::string break_op;
  /// Restrict the run to these cases (empty = all).
  std::vector<std::string> only;
};

/// Registered case names in report order.
std::vector<std::string> gradcheck_case_names();

/// Relative error is normwise per input: max|a - f| / max(|f|_inf, |a|_inf, 1e-8).
GradcheckReport gradcheck_suite(std::uint64_t seed, const GradcheckOptions& opts = {});

}  // namespace primseg
