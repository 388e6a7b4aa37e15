#include "distpriv/sim_harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <ostream>
#include <random>
#include <stdexcept>

#include <json.hpp>

#include "distpriv/instance.hpp"
#include "distpriv/text_io.hpp"

namespace distpriv {

using nlohmann::json;

void Scenario::check() const {
  if (!(arrival_rate > 0.0)) throw std::invalid_argument("arrival rate must be > 0");
  if (!(period_s > 0.0)) throw std::invalid_argument("period length must be > 0");
  if (!(tolerance > 0.0 && tolerance <= 1.0)) throw std::invalid_argument("tolerance must lie in (0, 1]");
  if (!(epsilon >= 0.0)) throw std::invalid_argument("epsilon must be >= 0");
  if (!(speed_scale > 0.0)) throw std::invalid_argument("speed scale must be > 0");
  if (word_bits == 0) throw std::invalid_argument("word length must be >= 1 bit");
  greedy.check();
}

std::vector<Arrival> generate_requests(const Scenario& scenario, std::size_t source_count) {
  if (!(scenario.arrival_rate > 0.0)) throw std::invalid_argument("arrival rate must be > 0");
  std::vector<Arrival> out;
  if (scenario.request_count == 0) return out;
  if (source_count == 0) throw std::invalid_argument("requests need at least one source");
  std::mt19937_64 rng(scenario.seed);
  double t = 0.0;
  out.reserve(scenario.request_count);
  for (std::size_t i = 0; i < scenario.request_count; ++i) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    t += -std::log1p(-u) / scenario.arrival_rate;
    out.push_back({i, static_cast<std::size_t>(rng() % source_count), t});
  }
  return out;
}

namespace {

bool is_preset(const std::string& name) {
  const auto names = preset_names();
  return std::find(names.begin(), names.end(), name) != names.end();
}

std::shared_ptr<const CnnProfile> load_model(const std::string& name, unsigned word_bits) {
  auto spec = is_preset(name) ? load_preset(name) : load_cnn_file(name);
  return std::make_shared<const CnnProfile>(make_profile(std::move(spec), word_bits));
}

FleetParams fleet_params(const Scenario& s) {
  FleetParams p;
  p.period_s = s.period_s;
  p.speed_scale = s.speed_scale;
  return p;
}

}  // namespace

Fleet scenario_fleet(const Scenario& scenario) {
  const auto params = fleet_params(scenario);
  Fleet fleet = scenario.fleet_file ? load_fleet_file(*scenario.fleet_file, params)
                                    : load_fleet_preset(scenario.helper_mix, scenario.helper_count, params);
  for (std::size_t s = 0; s < scenario.source_cnns.size(); ++s) {
    char id[32];
    std::snprintf(id, sizeof id, "s%02zu", s);
    auto dev = make_device(id, DeviceClass::RPi3, DeviceKind::Source, params);
    dev.cnn = scenario.source_cnns[s];
    fleet.add(std::move(dev));
  }
  return fleet;
}

SimReport run_scenario(const Scenario& scenario) {
  scenario.check();
  const Fleet fleet = scenario_fleet(scenario);
  const auto sources = fleet.sources();
  if (sources.empty() && scenario.request_count > 0) throw std::invalid_argument("scenario has no source devices");

  struct Workload {
    std::shared_ptr<const CnnProfile> model;
    std::shared_ptr<const PrivacyPolicy> policy;
  };
  std::map<std::string, Workload> workloads;
  for (auto s : sources) {
    const auto& cnn = fleet[s].cnn;
    if (workloads.count(cnn)) continue;
    auto model = load_model(cnn, scenario.word_bits);
    auto policy = policy_for(*model, scenario.tolerance, scenario.epsilon);
    workloads[cnn] = {std::move(model), std::move(policy)};
  }

  SimReport report;
  report.scenario = scenario.name;
  const auto arrivals = generate_requests(scenario, sources.size());
  report.requests = arrivals.size();

  std::map<std::string, CnnRow> per_cnn;
  struct Pending {
    Request req;
    std::size_t attempts = 0;
  };
  std::vector<Pending> retry;
  std::size_t next = 0;
  std::size_t period = 0;
  const double T = scenario.period_s;

  while (next < arrivals.size() || !retry.empty()) {
    if (retry.empty()) period = std::max(period, static_cast<std::size_t>(std::floor(arrivals[next].time / T)));
    const double end = static_cast<double>(period + 1) * T;

    std::vector<Pending> batch = std::move(retry);
    retry.clear();
    PeriodRow row;
    row.period = period;
    row.start = static_cast<double>(period) * T;
    for (; next < arrivals.size() && arrivals[next].time < end; ++next) {
      const auto& a = arrivals[next];
      const auto src = sources[a.source];
      const auto& w = workloads.at(fleet[src].cnn);
      Request req;
      req.id = a.id;
      req.source = src;
      req.model = w.model;
      req.policy = w.policy;
      req.arrival = a.time;
      batch.push_back({std::move(req), 0});
      ++row.arrivals;
      ++per_cnn[fleet[src].cnn].requests;
    }
    row.scheduled = batch.size();

    std::vector<Request> reqs;
    reqs.reserve(batch.size());
    for (const auto& p : batch) reqs.push_back(p.req);
    ResourceLedger ledger(fleet);
    const auto result = run_batch(reqs, fleet, ledger, scenario.greedy);

    for (std::size_t k = 0; k < batch.size(); ++k) {
      const auto& out = result.outcomes[k];
      auto& cnn = per_cnn[fleet[reqs[k].source].cnn];
      if (!out.rejected) {
        ++row.served;
        row.latency += out.latency;
        row.shared_bits += out.shared_bits;
        report.total_wait += end - reqs[k].arrival;
        ++cnn.served;
        cnn.latency += out.latency;
        cnn.shared_bits += out.shared_bits;
        continue;
      }
      ++row.rejected;
      ++report.rejection_causes[std::string(tag(out.rejection->constraint))];
      auto pending = std::move(batch[k]);
      if (++pending.attempts > scenario.max_retries) {
        ++row.dropped;
        ++cnn.dropped;
      } else {
        retry.push_back(std::move(pending));
      }
    }
    report.attempts += batch.size();
    if (scenario.keep_plans) report.plans.push_back(served(reqs, result));
    report.periods.push_back(row);
    ++period;
  }

  for (const auto& row : report.periods) {
    report.served += row.served;
    report.dropped += row.dropped;
    report.total_latency += row.latency;
    report.total_shared_bits += row.shared_bits;
  }
  for (auto& [name, row] : per_cnn) {
    row.cnn = name;
    report.per_cnn.push_back(row);
  }
  report.rejected_pct =
      report.requests == 0 ? 0.0 : static_cast<double>(report.dropped) / static_cast<double>(report.requests);
  return report;
}

std::string_view to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::FleetSize: return "fleet-size";
    case SweepAxis::FleetMix: return "fleet-mix";
    case SweepAxis::Tolerance: return "tolerance";
    case SweepAxis::Cnn: return "cnn";
  }
  return "?";
}

SweepAxis parse_sweep_axis(std::string_view text) {
  for (auto a : {SweepAxis::FleetSize, SweepAxis::FleetMix, SweepAxis::Tolerance, SweepAxis::Cnn}) {
    if (to_string(a) == text) return a;
  }
  throw std::invalid_argument("unknown sweep axis '" + std::string(text) +
                              "' (fleet-size, fleet-mix, tolerance, cnn)");
}

Scenario sweep_point(const Scenario& base, SweepAxis axis, const std::string& value) {
  Scenario s = base;
  s.name = base.name + "@" + value;
  switch (axis) {
    case SweepAxis::FleetSize:
      if (base.fleet_file) throw std::invalid_argument("fleet-size sweeps need a preset fleet, not a fleet file");
      s.helper_count = static_cast<std::size_t>(text::to_u64(value, "fleet size"));
      break;
    case SweepAxis::FleetMix: {
      if (base.fleet_file) throw std::invalid_argument("fleet-mix sweeps need a preset fleet, not a fleet file");
      const auto slash = value.find('/');
      if (slash == std::string::npos) throw std::invalid_argument("fleet mix must look like 70/30");
      const double small = text::to_double(value.substr(0, slash), "small share");
      const double powerful = text::to_double(value.substr(slash + 1), "powerful share");
      if (std::abs(small + powerful - 100.0) > 1e-9) throw std::invalid_argument("fleet mix shares must sum to 100");
      s.helper_mix = {{DeviceClass::Stm32H7, small / 100.0}, {DeviceClass::RPi3, powerful / 100.0}};
      break;
    }
    case SweepAxis::Tolerance:
      s.tolerance = text::to_double(value, "tolerance");
      break;
    case SweepAxis::Cnn:
      std::fill(s.source_cnns.begin(), s.source_cnns.end(), value);
      break;
  }
  return s;
}

std::vector<SweepRow> sweep(const Scenario& base, SweepAxis axis, const std::vector<std::string>& values,
                            bool parallel) {
  std::vector<std::future<SimReport>> jobs;
  for (const auto& v : values) {
    auto point = sweep_point(base, axis, v);
    jobs.push_back(std::async(parallel ? std::launch::async : std::launch::deferred,
                              [point = std::move(point)] { return run_scenario(point); }));
  }
  std::vector<SweepRow> rows;
  for (std::size_t k = 0; k < values.size(); ++k) rows.push_back({values[k], jobs[k].get()});
  return rows;
}

void write_report_csv(std::ostream& out, const SimReport& r) {
  using text::fixed;
  out << "period,start_s,arrivals,scheduled,served,rejected,dropped,latency_s,shared_bits\n";
  std::size_t arrivals = 0, scheduled = 0, rejected = 0;
  for (const auto& p : r.periods) {
    out << p.period << ',' << fixed(p.start, 3) << ',' << p.arrivals << ',' << p.scheduled << ',' << p.served
        << ',' << p.rejected << ',' << p.dropped << ',' << fixed(p.latency) << ',' << p.shared_bits << "\n";
    arrivals += p.arrivals;
    scheduled += p.scheduled;
    rejected += p.rejected;
  }
  out << "total,," << arrivals << ',' << scheduled << ',' << r.served << ',' << rejected << ',' << r.dropped << ','
      << fixed(r.total_latency) << ',' << r.total_shared_bits << "\n";
}

void write_summary_json(std::ostream& out, const SimReport& r) {
  json per_cnn = json::array();
  for (const auto& c : r.per_cnn) {
    per_cnn.push_back({{"cnn", c.cnn},
                       {"requests", c.requests},
                       {"served", c.served},
                       {"dropped", c.dropped},
                       {"latency_s", text::fixed(c.latency)},
                       {"shared_bits", c.shared_bits}});
  }
  json doc = {{"schema", "distpriv-report/1"},
              {"scenario", r.scenario},
              {"requests", r.requests},
              {"served", r.served},
              {"dropped", r.dropped},
              {"attempts", r.attempts},
              {"rejected_pct", text::fixed(r.rejected_pct)},
              {"total_latency_s", text::fixed(r.total_latency)},
              {"total_shared_bits", r.total_shared_bits},
              {"total_wait_s", text::fixed(r.total_wait)},
              {"periods", r.periods.size()},
              {"rejection_causes", r.rejection_causes},
              {"per_cnn", per_cnn}};
  out << doc.dump(2) << "\n";
}

void write_sweep_csv(std::ostream& out, SweepAxis axis, const std::vector<SweepRow>& rows) {
  using text::fixed;
  out << "axis,value,requests,served,dropped,rejected_pct,total_latency_s,total_shared_bits,total_wait_s,attempts\n";
  for (const auto& row : rows) {
    const auto& r = row.report;
    out << to_string(axis) << ',' << row.value << ',' << r.requests << ',' << r.served << ',' << r.dropped << ','
        << fixed(r.rejected_pct) << ',' << fixed(r.total_latency) << ',' << r.total_shared_bits << ','
        << fixed(r.total_wait) << ',' << r.attempts << "\n";
  }
}

namespace {

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

std::string resolve(const std::string& path, const std::string& base_dir) {
  const std::filesystem::path p(path);
  return p.is_absolute() ? path : (std::filesystem::path(base_dir) / p).lexically_normal().string();
}

std::string value_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number()) {
    auto s = text::fixed(v.get<double>(), 6);
    while (s.size() > 1 && s.back() == '0') s.pop_back();
    if (s.back() == '.') s.pop_back();
    return s;
  }
  throw std::runtime_error("sweep values must be strings or numbers");
}

}  // namespace

ScenarioFile read_scenario_json(std::istream& in, const std::string& base_dir) {
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(std::string("scenario file is not valid JSON: ") + e.what());
  }
  try {
    if (get_or<std::string>(doc, "schema", "") != "distpriv-scenario/1") {
      throw std::runtime_error("scenario file must declare schema distpriv-scenario/1");
    }
    ScenarioFile file;
    auto& s = file.scenario;
    s.name = get_or<std::string>(doc, "name", s.name);
    if (doc.contains("fleet")) {
      const auto& f = doc.at("fleet");
      if (f.contains("file")) s.fleet_file = resolve(f.at("file").get<std::string>(), base_dir);
      s.helper_count = get_or<std::size_t>(f, "helpers", s.helper_count);
      if (f.contains("mix")) {
        s.helper_mix.clear();
        for (const auto& [cls, frac] : f.at("mix").items()) s.helper_mix[parse_device_class(cls)] = frac.get<double>();
      }
    }
    for (const auto& c : get_or<std::vector<std::string>>(doc, "sources", {})) {
      s.source_cnns.push_back(is_preset(c) ? c : resolve(c, base_dir));
    }
    s.request_count = get_or<std::size_t>(doc, "requests", s.request_count);
    s.arrival_rate = get_or<double>(doc, "arrival_rate", s.arrival_rate);
    s.tolerance = get_or<double>(doc, "tolerance", s.tolerance);
    s.epsilon = get_or<double>(doc, "epsilon", s.epsilon);
    s.seed = get_or<std::uint64_t>(doc, "seed", s.seed);
    s.period_s = get_or<double>(doc, "period_s", s.period_s);
    s.max_retries = get_or<std::size_t>(doc, "max_retries", s.max_retries);
    s.word_bits = get_or<unsigned>(doc, "word_bits", s.word_bits);
    s.speed_scale = get_or<double>(doc, "speed_scale", s.speed_scale);
    s.greedy.alpha = get_or<double>(doc, "alpha", s.greedy.alpha);
    s.greedy.beta = get_or<double>(doc, "beta", s.greedy.beta);
    if (doc.contains("sweep")) {
      const auto& sw = doc.at("sweep");
      file.axis = parse_sweep_axis(sw.at("axis").get<std::string>());
      for (const auto& v : sw.at("values")) file.values.push_back(value_text(v));
      if (file.values.empty()) throw std::runtime_error("sweep needs at least one value");
    }
    s.check();
    return file;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed scenario file: ") + e.what());
  }
}

ScenarioFile load_scenario_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario file '" + path + "'");
  return read_scenario_json(in, std::filesystem::path(path).parent_path().string());
}

}  // namespace distpriv
