// Prints one PASS/FAIL line per acceptance criterion and exits nonzero if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "distpriv/cli.hpp"
#include "distpriv/exact_solver.hpp"
#include "distpriv/greedy_scheduler.hpp"
#include "distpriv/instance.hpp"
#include "distpriv/sim_harness.hpp"
#include "oracles.hpp"
#include "reference_nets.hpp"

using namespace distpriv;

namespace {

const std::string kData = std::string(DISTPRIV_SOURCE_DIR) + "/data";

// Relative slack when comparing greedy and exact objectives.
constexpr double kGapTol = 1e-9;

struct Outcome {
  bool pass = true;
  std::string detail;
};

using Check = std::function<Outcome()>;

std::string num(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

Outcome privacy_caps() {
  Outcome o;
  const auto curves = embedded_ssim_table().curves_for("CIFAR");
  const std::vector<std::pair<std::string, std::uint32_t>> expected{{"ReLU11", 8}, {"ReLU22", 16}, {"ReLU32", 32}};
  for (const auto& [label, want] : expected) {
    std::uint32_t got = 0;
    for (const auto& c : curves) {
      if (c.layer_label == label) got = max_filters(c, 0.4, 0.01).filters;
    }
    o.pass = o.pass && got == want;
    o.detail += label + "=" + std::to_string(got) + " (want " + std::to_string(want) + ") ";
  }
  return o;
}

Outcome split_points() {
  Outcome o;
  const std::vector<std::tuple<std::string, std::string, std::size_t>> expected{
      {"MNIST", "LeNet", 2}, {"CIFAR", "CifarCnn", 8}, {"CAR", "VGG16", 8}, {"CELEBA", "VGG19", 4}};
  for (const auto& [dataset, cnn, want] : expected) {
    const auto spec = load_preset(cnn);
    const auto policy = PrivacyPolicy::derive(embedded_ssim_table().curves_for(dataset), spec.depth(), 0.8, 0.01);
    const auto capped = policy.split_point() - 1;
    o.pass = o.pass && capped == want;
    o.detail += dataset + "=" + std::to_string(capped) + " (want " + std::to_string(want) + ") ";
  }
  return o;
}

Outcome oracle_equivalence() {
  constexpr std::size_t kInstances = 250;
  Outcome o;
  std::size_t plans = 0, invalid = 0, both = 0, negative = 0, exact_missed = 0, budget = 0;
  double worst_gap = 0;
  for (std::uint64_t seed = 1; seed <= kInstances; ++seed) {
    const auto inst = random_instance(seed, RandomInstanceParams{4, 6, 8, 2});
    const auto batch = run_batch(inst.requests, inst.fleet, GreedyConfig{});
    const auto sv = served(inst.requests, batch);
    if (!sv.requests.empty()) {
      ++plans;
      if (!oracle::violations(sv.requests, sv.assignment, inst.fleet).empty()) ++invalid;
    }
    const auto exact = solve_exact(inst.requests, inst.fleet);
    if (exact.status == ExactStatus::BudgetExceeded) {
      ++budget;
      continue;
    }
    if (batch.rejected != 0) continue;
    if (exact.status != ExactStatus::Optimal) {
      ++exact_missed;
      continue;
    }
    ++both;
    const double best = exact.plan->objective;
    const double gap = (batch.total_latency - best) / std::max(best, 1e-300);
    worst_gap = both == 1 ? gap : std::min(worst_gap, gap);
    if (batch.total_latency < best - kGapTol * std::max(1.0, best)) ++negative;
  }
  o.pass = invalid == 0 && negative == 0 && exact_missed == 0 && budget == 0 && both > 0;
  o.detail = std::to_string(kInstances) + " instances, " + std::to_string(plans) + " greedy plans, " +
             std::to_string(invalid) + " invalid, " + std::to_string(both) + " feasible for both, " +
             std::to_string(negative) + " negative gaps (min relative gap " + num(worst_gap, 9) + "), " +
             std::to_string(exact_missed) + " greedy-only plans, " + std::to_string(budget) + " budget stops";
  return o;
}

Fleet lg_fleet(std::size_t helpers) {
  Fleet f = load_fleet_preset({{DeviceClass::LgNexus, 1.0}}, helpers);
  auto cam = make_device("cam", DeviceClass::RPi3, DeviceKind::Source);
  cam.cnn = "CifarCnn";
  f.add(cam);
  return f;
}

Outcome pigeonhole() {
  Outcome o;
  auto model = std::make_shared<const CnnProfile>(make_profile(load_preset("CifarCnn")));
  const auto policy = policy_for(*model, 0.4, 0.01);
  std::size_t need = 0;
  for (std::size_t l = 2; l < policy->split_point(); ++l) {
    const auto cap = policy->cap_for_layer(l);
    if (!cap) continue;
    const std::size_t maps = model->at(l).segments;
    need = std::max<std::size_t>(need, (maps + *cap - 1) / *cap);
  }
  o.detail = "ceil(P/Nf) gives " + std::to_string(need) + " helpers; ";
  o.pass = need == 8;
  for (std::size_t h = 1; h <= need; ++h) {
    const auto fleet = lg_fleet(h);
    Request req;
    req.source = fleet.sources().at(0);
    req.model = model;
    req.policy = policy;
    const std::vector<Request> reqs{req};
    const auto greedy = run_batch(reqs, fleet, GreedyConfig{});
    if (h < need) {
      const auto& out = greedy.outcomes[0];
      const bool greedy_ok = out.rejected && out.rejection->constraint == Constraint::Privacy;
      const auto exact = solve_exact(reqs, fleet);
      const bool exact_ok = exact.status == ExactStatus::Infeasible && exact.cause == Constraint::Privacy;
      if (!greedy_ok || !exact_ok) o.detail += "wrong verdict with " + std::to_string(h) + " helpers; ";
      o.pass = o.pass && greedy_ok && exact_ok;
    } else {
      const auto sv = served(reqs, greedy);
      const bool ok = greedy.rejected == 0 && oracle::violations(sv.requests, sv.assignment, fleet).empty();
      if (!ok) o.detail += "greedy failed with " + std::to_string(h) + " helpers; ";
      o.pass = o.pass && ok;
    }
  }
  o.detail += "1.." + std::to_string(need - 1) + " helpers rejected by greedy and proved infeasible, " +
              std::to_string(need) + " served";
  return o;
}

std::vector<SweepRow> run_sweep_file(const std::string& name) {
  const auto file = load_scenario_file(kData + "/scenarios/" + name);
  return sweep(file.scenario, *file.axis, file.values);
}

Outcome trends() {
  Outcome o;
  std::string d;

  const auto tol = run_sweep_file("tolerance_sweep.json");
  bool a = tol.size() == 3;
  for (std::size_t k = 0; k < tol.size(); ++k) {
    a = a && tol[k].report.dropped == 0;
    if (k) a = a && tol[k].report.total_shared_bits >= tol[k - 1].report.total_shared_bits;
  }
  d += std::string("5a ") + (a ? "ok" : "FAIL") + " shared bits";
  for (const auto& r : tol) d += " " + r.value + ":" + std::to_string(r.report.total_shared_bits);
  d += "; ";

  const auto size = run_sweep_file("fleet_size_sweep.json");
  bool b = size.size() == 3;
  for (std::size_t k = 1; k < size.size(); ++k) b = b && size[k].report.rejected_pct <= size[k - 1].report.rejected_pct;
  d += std::string("5b ") + (b ? "ok" : "FAIL") + " rejected";
  for (const auto& r : size) d += " " + r.value + ":" + num(r.report.rejected_pct, 4);
  d += "; ";

  const auto mix = run_sweep_file("fleet_mix_sweep.json");
  bool c = mix.size() == 3 && mix[0].value == "70/30" && mix[1].value == "50/50" &&
           mix[0].report.rejected_pct > mix[1].report.rejected_pct;
  d += std::string("5c ") + (c ? "ok" : "FAIL") + " rejected";
  for (const auto& r : mix) d += " " + r.value + ":" + num(r.report.rejected_pct, 4);
  d += "; ";

  const auto cnn = run_sweep_file("cnn_sweep.json");
  const SimReport* lenet = nullptr;
  const SimReport* vgg = nullptr;
  for (const auto& r : cnn) {
    if (r.value == "LeNet") lenet = &r.report;
    if (r.value == "VGG16") vgg = &r.report;
  }
  const bool e = cnn.size() == 3 && lenet && vgg && lenet->total_latency < vgg->total_latency &&
                 lenet->total_shared_bits < vgg->total_shared_bits;
  d += std::string("5d ") + (e ? "ok" : "FAIL") + " latency/bits";
  for (const auto& r : cnn) {
    d += " " + r.value + ":" + num(r.report.total_latency, 3) + "s/" + std::to_string(r.report.total_shared_bits);
  }

  o.pass = a && b && c && e;
  o.detail = d;
  return o;
}

Outcome model_costs() {
  Outcome o;
  std::size_t layers = 0, mismatches = 0;
  constexpr unsigned kWordBits = 32;
  for (const auto& net : oracle::reference_nets()) {
    const auto spec = load_preset(net.name);
    const auto prof = make_profile(spec, kWordBits);
    const auto ref = oracle::count_by_loops(net);
    if (ref.size() != spec.depth()) {
      ++mismatches;
      continue;
    }
    for (std::size_t l = 1; l <= spec.depth(); ++l) {
      const auto& r = ref[l - 1];
      ++layers;
      const bool same = spec.maps_into(l) == r.segments && segment_compute(spec, l) == r.per_segment_mults &&
                        layer_compute(spec, l) == r.per_segment_mults * r.segments &&
                        prof.at(l).segment_compute == r.per_segment_mults &&
                        prof.at(l).segment_memory == r.weights * kWordBits;
      mismatches += !same;
    }
  }
  o.pass = mismatches == 0 && layers > 0;
  o.detail = std::to_string(layers) + " layers over 4 presets, " + std::to_string(mismatches) + " mismatches";
  return o;
}

Outcome determinism() {
  Outcome o;
  std::size_t files = 0;
  for (const auto& entry : std::filesystem::directory_iterator(kData + "/scenarios")) {
    if (entry.path().extension() != ".json") continue;
    const auto path = entry.path().string();
    std::string first;
    for (int run = 0; run < 2; ++run) {
      std::ostringstream out, err;
      const char* argv[] = {"distpriv", "simulate", path.c_str()};
      const int code = run_cli(3, argv, out, err);
      if (code != kExitOk) {
        o.pass = false;
        o.detail += entry.path().filename().string() + " exited " + std::to_string(code) + "; ";
      }
      if (run == 0) first = out.str();
      else if (out.str() != first) {
        o.pass = false;
        o.detail += entry.path().filename().string() + " differs; ";
      }
    }
    ++files;
  }
  o.pass = o.pass && files > 0;
  o.detail += std::to_string(files) + " scenario files run twice, CSV reports compared byte for byte";
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double limit_s;
    Check run;
  };
  const std::vector<Criterion> criteria{
      {1, "privacy caps, CIFAR at 0.4", 1, privacy_caps},
      {2, "split points at 0.8", 1, split_points},
      {3, "greedy vs exact on random desk-scale instances", 300, oracle_equivalence},
      {4, "pigeonhole infeasibility, CIFAR at 0.4", 10, pigeonhole},
      {5, "trends over sweeps", 600, trends},
      {6, "model cost formulas vs loop counting", 1, model_costs},
      {7, "byte-identical reports for the same seed", 600, determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.limit_s;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::cout << (pass ? "PASS" : "FAIL") << " criterion " << c.id << ": " << c.name << " | " << o.detail << " | "
              << num(secs, 3) << " s (limit " << num(c.limit_s, 0) << " s" << (in_time ? "" : ", exceeded") << ")\n";
  }
  return failed == 0 ? 0 : 1;
}
