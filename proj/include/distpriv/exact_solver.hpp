#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>

#include "distpriv/fleet.hpp"
#include "distpriv/placement.hpp"

namespace distpriv {

struct ExactLimits {
  std::size_t max_devices = 4;
  std::size_t max_layers = 6;
  std::size_t max_segments = 8;
  std::size_t max_requests = 3;
  std::uint64_t node_budget = 50'000'000;
  double time_budget_s = 60.0;
};

/// Thrown before any search when an instance exceeds ExactLimits.
class LimitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ExactStatus { Optimal, Infeasible, BudgetExceeded };
std::string_view to_string(ExactStatus s);

struct ExactResult {
  ExactStatus status = ExactStatus::Infeasible;
  std::optional<PlacementPlan> plan;  // optimum, or best found before the budget ran out
  std::optional<Constraint> cause;    // set when infeasibility follows from a counting argument
  std::string detail;
  std::uint64_t nodes = 0;
  double seconds = 0;
};

/// Throws LimitError naming the first limit the instance exceeds.
void check_limits(std::span<const Request> requests, const Fleet& fleet, const ExactLimits& limits);

/// Counting arguments that rule out every assignment, such as a capped layer with more maps
/// than its helpers may hold together. Needs no search and applies at any instance size.
std::optional<std::pair<Constraint, std::string>> obvious_infeasibility(std::span<const Request> requests,
                                                                        const Fleet& fleet);

/// Minimum total latency over all assignments that satisfy every constraint, found by
/// depth-first branch and bound. Among equal optima the first in device-rank order wins,
/// ranking devices by speed (fastest first) and then by index.
ExactResult solve_exact(std::span<const Request> requests, const Fleet& fleet, const ExactLimits& limits = {});

}  // namespace distpriv
