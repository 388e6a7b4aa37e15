#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "distpriv/fleet.hpp"
#include "distpriv/greedy_scheduler.hpp"
#include "distpriv/placement.hpp"

namespace distpriv {

struct Scenario {
  std::string name = "scenario";
  std::optional<std::string> fleet_file;  // helpers (and optionally sources) from a fleet CSV
  std::size_t helper_count = 0;           // otherwise a preset fleet of this size
  FleetMix helper_mix{{DeviceClass::RPi3, 1.0 / 3}, {DeviceClass::LgNexus, 1.0 / 3}, {DeviceClass::Stm32H7, 1.0 / 3}};
  std::vector<std::string> source_cnns;   // one RPi3 source per entry: a preset name or CNN CSV path
  std::size_t request_count = 320;
  double arrival_rate = 3.0;              // requests per second
  double tolerance = 1.0;
  double epsilon = 0.01;
  std::uint64_t seed = 1;
  double period_s = 1.0;
  std::size_t max_retries = 3;
  unsigned word_bits = kDefaultWordBits;
  double speed_scale = 1e6;
  GreedyConfig greedy;
  bool keep_plans = false;                // retain served placements for inspection

  /// Throws std::invalid_argument on out-of-range fields.
  void check() const;
};

struct Arrival {
  std::size_t id = 0;
  std::size_t source = 0;  // index into the scenario's source devices
  double time = 0;
};

/// Poisson arrivals from the scenario seed, each from a uniformly drawn source.
std::vector<Arrival> generate_requests(const Scenario& scenario, std::size_t source_count);

struct PeriodRow {
  std::size_t period = 0;
  double start = 0;
  std::size_t arrivals = 0;
  std::size_t scheduled = 0;  // new arrivals plus retries
  std::size_t served = 0;
  std::size_t rejected = 0;   // rejected attempts, retried or dropped
  std::size_t dropped = 0;    // rejected for the last time
  double latency = 0;
  Bits shared_bits = 0;
};

struct CnnRow {
  std::string cnn;
  std::size_t requests = 0;
  std::size_t served = 0;
  std::size_t dropped = 0;
  double latency = 0;
  Bits shared_bits = 0;
};

struct SimReport {
  std::string scenario;
  std::size_t requests = 0;
  std::size_t served = 0;
  std::size_t dropped = 0;
  std::size_t attempts = 0;
  double total_latency = 0;  // sum of per-request latencies of served requests
  Bits total_shared_bits = 0;
  double total_wait = 0;     // arrival to scheduling boundary, served requests
  double rejected_pct = 0;   // fraction of requests never served, in [0,1]
  std::map<std::string, std::size_t> rejection_causes;  // constraint tag -> rejected attempts
  std::vector<PeriodRow> periods;
  std::vector<CnnRow> per_cnn;
  std::vector<ServedSet> plans;  // per period, when keep_plans is set
};

SimReport run_scenario(const Scenario& scenario);

/// Builds the fleet a scenario runs on: its helpers followed by one source per CNN entry.
Fleet scenario_fleet(const Scenario& scenario);

enum class SweepAxis { FleetSize, FleetMix, Tolerance, Cnn };
std::string_view to_string(SweepAxis axis);
SweepAxis parse_sweep_axis(std::string_view text);

struct SweepRow {
  std::string value;
  SimReport report;
};

/// Scenario for one sweep value: a helper count, a "small/powerful" percentage split such
/// as "70/30" (STM32H7/RPi3), a tolerance, or a CNN name every source switches to.
Scenario sweep_point(const Scenario& base, SweepAxis axis, const std::string& value);

/// Runs every point with the base seed. Points run concurrently when `parallel` is set.
std::vector<SweepRow> sweep(const Scenario& base, SweepAxis axis, const std::vector<std::string>& values,
                            bool parallel = true);

/// One row per period plus a totals row.
void write_report_csv(std::ostream& out, const SimReport& report);
void write_summary_json(std::ostream& out, const SimReport& report);
void write_sweep_csv(std::ostream& out, SweepAxis axis, const std::vector<SweepRow>& rows);

struct ScenarioFile {
  Scenario scenario;
  std::optional<SweepAxis> axis;
  std::vector<std::string> values;
};

/// JSON scenario files, schema `distpriv-scenario/1`. Relative paths resolve against `base_dir`.
ScenarioFile read_scenario_json(std::istream& in, const std::string& base_dir = ".");
ScenarioFile load_scenario_file(const std::string& path);

}  // namespace distpriv
