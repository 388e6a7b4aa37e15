#include "distpriv/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "distpriv/exact_solver.hpp"
#include "distpriv/greedy_scheduler.hpp"
#include "distpriv/instance.hpp"
#include "distpriv/sim_harness.hpp"
#include "distpriv/text_io.hpp"

namespace distpriv {

namespace {

namespace fs = std::filesystem;
using text::fixed;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string locate(const std::string& path) {
  if (fs::exists(path)) return path;
  if (const char* dir = std::getenv("DISTPRIV_DATA_DIR"); dir && fs::path(path).is_relative()) {
    const auto alt = fs::path(dir) / path;
    if (fs::exists(alt)) return alt.string();
  }
  throw UsageError("cannot find '" + path + "'");
}

bool is_preset(const std::string& name) {
  const auto names = preset_names();
  return std::find(names.begin(), names.end(), name) != names.end();
}

std::string preset_for_dataset(const std::string& dataset) {
  if (dataset == "MNIST") return "LeNet";
  if (dataset == "CIFAR") return "CifarCnn";
  if (dataset == "CAR") return "VGG16";
  if (dataset == "CELEBA") return "VGG19";
  return {};
}

template <typename Write>
void write_file(const std::string& path, Write&& write) {
  std::ofstream f(path);
  if (!f) throw UsageError("cannot write '" + path + "'");
  write(f);
}

struct Common {
  double tolerance = 0.8;
  double epsilon = kDefaultEpsilon;
  double alpha = GreedyConfig{}.alpha;
  double beta = GreedyConfig{}.beta;
  std::string out;

  GreedyConfig greedy(const CLI::App& app) const {
    GreedyConfig g;
    const bool a = app.count("--alpha") > 0, b = app.count("--beta") > 0;
    g.alpha = a ? alpha : (b ? 1.0 - beta : g.alpha);
    g.beta = b ? beta : (a ? 1.0 - alpha : g.beta);
    g.check();
    return g;
  }
};

void add_weights(CLI::App* app, Common& c) {
  app->add_option("--alpha", c.alpha, "Weight of normalized latency in the greedy score")->check(CLI::Range(0.0, 1.0));
  app->add_option("--beta", c.beta, "Weight of normalized inverse bandwidth")->check(CLI::Range(0.0, 1.0));
}

struct SolveArgs {
  std::string model;
  std::string fleet;
  std::size_t helpers = 0;
  std::string source;
  bool exact = false;
  unsigned word_bits = kDefaultWordBits;
  double period = 1.0;
  std::string trace;
};

int cmd_solve(const SolveArgs& a, const Common& c, const CLI::App& app, std::ostream& out, std::ostream& err) {
  FleetParams params;
  params.period_s = a.period;
  Fleet fleet;
  if (!a.fleet.empty()) {
    fleet = load_fleet_file(locate(a.fleet), params);
  } else if (a.helpers > 0) {
    fleet = load_fleet_preset(Scenario{}.helper_mix, a.helpers, params);
  } else {
    throw UsageError("solve needs --fleet FILE or --helpers N");
  }
  auto model = std::make_shared<const CnnProfile>(
      make_profile(is_preset(a.model) ? load_preset(a.model) : load_cnn_file(locate(a.model)), a.word_bits));

  Request req;
  req.id = 0;
  req.model = model;
  req.policy = policy_for(*model, c.tolerance, c.epsilon);
  if (!a.source.empty()) {
    req.source = fleet.index_of(a.source);
    if (!fleet[req.source].is_source()) throw UsageError("'" + a.source + "' is not a source device");
  } else if (const auto sources = fleet.sources(); !sources.empty()) {
    req.source = sources.front();
  } else {
    auto dev = make_device("s00", DeviceClass::RPi3, DeviceKind::Source, params);
    dev.cnn = model->spec.name;
    req.source = fleet.add(std::move(dev));
  }
  const std::vector<Request> reqs{req};

  Assignment assignment;
  if (a.exact) {
    const auto res = solve_exact(reqs, fleet);
    if (res.status == ExactStatus::BudgetExceeded) {
      err << "error: exact search budget exceeded (" << res.detail << ")\n";
      return kExitLimit;
    }
    if (res.status == ExactStatus::Infeasible) {
      err << "infeasible";
      if (res.cause) err << ": constraint " << tag(*res.cause);
      err << ": " << res.detail << "\n";
      return kExitInfeasible;
    }
    assignment = res.plan->assignment;
  } else {
    std::vector<TraceEntry> trace;
    ResourceLedger ledger(fleet);
    const auto outcome = place_request(req, fleet, ledger, c.greedy(app), a.trace.empty() ? nullptr : &trace);
    if (!a.trace.empty()) {
      write_file(a.trace, [&](std::ostream& f) {
        f << "request,layer,segment,device,latency_s,score,pinned,skipped\n";
        for (const auto& t : trace) {
          f << t.request_id << ',' << t.layer << ',' << t.segment << ',' << fleet[t.device].id << ','
            << fixed(t.latency, 9) << ',' << fixed(t.score, 6) << ',' << (t.pinned ? 1 : 0) << ',';
          for (std::size_t k = 0; k < t.skipped.size(); ++k) {
            f << (k ? ";" : "") << fleet[t.skipped[k].device].id << ':' << tag(t.skipped[k].reason);
          }
          f << "\n";
        }
      });
    }
    if (outcome.rejected) {
      const auto& r = *outcome.rejection;
      err << "rejected: constraint " << tag(r.constraint) << " at layer " << r.layer << " ("
          << model->spec.layer(r.layer).label << ") segment " << r.segment << ": " << r.detail << "\n";
      return kExitInfeasible;
    }
    assignment.push_back(outcome.placement);
  }

  const auto plan = evaluate(assignment, reqs, fleet);
  out << "solver," << (a.exact ? "exact" : "greedy") << "\n"
      << "cnn," << model->spec.name << "\n"
      << "tolerance," << fixed(c.tolerance, 3) << "\n"
      << "split_point," << req.policy->split_point() << "\n"
      << "objective_s," << fixed(plan.objective, 9) << "\n"
      << "shared_bits," << plan.shared_bits << "\n"
      << "layer,label,latency_s,devices\n";
  for (std::size_t l = 1; l <= req.depth(); ++l) {
    auto slots = plan.assignment[0].layers[l];
    std::sort(slots.begin(), slots.end());
    slots.erase(std::unique(slots.begin(), slots.end()), slots.end());
    out << l << ',' << model->spec.layer(l).label << ',' << fixed(plan.layer_latency[0][l], 9) << ','
        << slots.size() << "\n";
  }
  if (!c.out.empty()) write_file(c.out, [&](std::ostream& f) { write_plan_csv(f, plan.assignment, reqs, fleet); });
  return kExitOk;
}

struct SimulateArgs {
  std::string scenario;
  std::optional<std::uint64_t> seed;
  std::optional<double> period;
  std::optional<std::size_t> max_retries;
  std::optional<double> tolerance;
  std::optional<double> epsilon;
  std::string summary;
  bool serial = false;
};

std::string summary_path(const std::string& csv) {
  fs::path p(csv);
  p.replace_extension(".summary.json");
  return p.string();
}

int cmd_simulate(const SimulateArgs& a, const Common& c, const CLI::App& app, std::ostream& out) {
  auto file = load_scenario_file(locate(a.scenario));
  auto& s = file.scenario;
  if (a.seed) s.seed = *a.seed;
  if (a.period) s.period_s = *a.period;
  if (a.max_retries) s.max_retries = *a.max_retries;
  if (a.tolerance) s.tolerance = *a.tolerance;
  if (a.epsilon) s.epsilon = *a.epsilon;
  if (app.count("--alpha") || app.count("--beta")) s.greedy = c.greedy(app);
  s.check();

  const std::string summary = !a.summary.empty() ? a.summary : (c.out.empty() ? "" : summary_path(c.out));
  std::ostringstream csv;
  if (file.axis) {
    const auto rows = sweep(s, *file.axis, file.values, !a.serial);
    write_sweep_csv(csv, *file.axis, rows);
    if (!summary.empty()) {
      write_file(summary, [&](std::ostream& f) {
        f << "[\n";
        for (std::size_t k = 0; k < rows.size(); ++k) {
          std::ostringstream one;
          write_summary_json(one, rows[k].report);
          auto text = one.str();
          while (!text.empty() && text.back() == '\n') text.pop_back();
          f << text << (k + 1 < rows.size() ? ",\n" : "\n");
        }
        f << "]\n";
      });
    }
  } else {
    const auto report = run_scenario(s);
    write_report_csv(csv, report);
    if (!summary.empty()) write_file(summary, [&](std::ostream& f) { write_summary_json(f, report); });
  }
  if (c.out.empty()) out << csv.str();
  else write_file(c.out, [&](std::ostream& f) { f << csv.str(); });
  return kExitOk;
}

struct PrivacyArgs {
  std::string dataset;
  std::string table;
  std::string cnn;
};

int cmd_privacy(const PrivacyArgs& a, const Common& c, std::ostream& out) {
  const SsimTable loaded = a.table.empty() ? SsimTable{} : load_ssim_file(locate(a.table));
  const SsimTable& table = a.table.empty() ? embedded_ssim_table() : loaded;
  const auto curves = table.curves_for(a.dataset);
  const std::string cnn = a.cnn.empty() ? preset_for_dataset(a.dataset) : a.cnn;
  if (cnn.empty()) throw UsageError("no default CNN for dataset '" + a.dataset + "'; pass --cnn");
  const auto spec = is_preset(cnn) ? load_preset(cnn) : load_cnn_file(locate(cnn));
  const auto policy = PrivacyPolicy::derive(curves, spec.depth(), c.tolerance, c.epsilon);

  out << "dataset," << a.dataset << "\n"
      << "cnn," << spec.name << "\n"
      << "tolerance," << fixed(c.tolerance, 3) << "\n"
      << "epsilon," << fixed(c.epsilon, 3) << "\n"
      << "curve,layer,full_layer_ssim,max_filters,within_tolerance\n";
  for (const auto& curve : curves) {
    const auto cap = max_filters(curve, c.tolerance, c.epsilon);
    out << curve.layer_label << ',' << curve.layer_index << ',' << fixed(curve.full_layer_ssim(), 2) << ','
        << cap.filters << ',' << (cap.within_tolerance ? "yes" : "no") << "\n";
  }
  out << "layer,label,cap,governing_curve\n";
  for (std::size_t l = 1; l <= spec.depth(); ++l) {
    const auto& cap = policy.layer_cap(l);
    out << l << ',' << spec.layer(l).label << ',';
    if (cap && l < policy.split_point()) out << cap->filters << ',' << cap->governing_label << "\n";
    else out << "unbounded,\n";
  }
  out << "split_point," << policy.split_point() << "\n"
      << "capped_layers," << policy.split_point() - 1 << "\n";
  return kExitOk;
}

struct CompareArgs {
  std::string instance;
  std::size_t random = 0;
  std::uint64_t seed = 1;
  std::uint64_t node_budget = ExactLimits{}.node_budget;
  double time_budget = ExactLimits{}.time_budget_s;
};

struct CompareRow {
  std::string name;
  bool greedy_ok = false;
  bool greedy_valid = false;
  double greedy_obj = 0;
  ExactStatus exact = ExactStatus::Infeasible;
  double exact_obj = 0;
  double greedy_ms = 0;
  double exact_ms = 0;
};

CompareRow compare_one(const std::string& name, const Instance& inst, const GreedyConfig& g,
                       const ExactLimits& limits) {
  CompareRow row;
  row.name = name;
  auto t0 = std::chrono::steady_clock::now();
  const auto batch = run_batch(inst.requests, inst.fleet, g);
  auto t1 = std::chrono::steady_clock::now();
  const auto exact = solve_exact(inst.requests, inst.fleet, limits);
  auto t2 = std::chrono::steady_clock::now();
  row.greedy_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  row.exact_ms = std::chrono::duration<double, std::milli>(t2 - t1).count();
  row.greedy_ok = batch.rejected == 0;
  if (row.greedy_ok) {
    const auto sv = served(inst.requests, batch);
    row.greedy_valid = validate(sv.assignment, inst.fleet, sv.requests).valid();
    row.greedy_obj = batch.total_latency;
  }
  row.exact = exact.status;
  if (exact.plan) row.exact_obj = exact.plan->objective;
  return row;
}

int cmd_compare(const CompareArgs& a, const Common& c, const CLI::App& app, std::ostream& out) {
  ExactLimits limits;
  limits.node_budget = a.node_budget;
  limits.time_budget_s = a.time_budget;
  const auto g = c.greedy(app);
  std::vector<CompareRow> rows;
  if (!a.instance.empty()) {
    rows.push_back(compare_one(a.instance, load_instance_file(locate(a.instance)), g, limits));
  } else if (a.random > 0) {
    RandomInstanceParams params;
    for (std::size_t k = 0; k < a.random; ++k) {
      rows.push_back(compare_one("random:" + std::to_string(a.seed + k), random_instance(a.seed + k, params), g,
                                 limits));
    }
  } else {
    throw UsageError("compare needs an instance file or --random N");
  }

  std::ostringstream csv;
  csv << "instance,greedy,greedy_valid,greedy_objective_s,exact,exact_objective_s,gap_s,gap_rel\n";
  std::size_t both = 0, infeasible = 0, greedy_only_rejected = 0, budget = 0, invalid = 0;
  double gap_min = 0, gap_max = 0, gap_sum = 0;
  for (const auto& r : rows) {
    csv << r.name << ',' << (r.greedy_ok ? "served" : "rejected") << ',' << (r.greedy_ok ? (r.greedy_valid ? "yes" : "no") : "-")
        << ',' << (r.greedy_ok ? fixed(r.greedy_obj, 9) : "-") << ',' << to_string(r.exact) << ','
        << (r.exact == ExactStatus::Optimal ? fixed(r.exact_obj, 9) : "-") << ',';
    if (r.greedy_ok && r.exact == ExactStatus::Optimal) {
      const double gap = r.greedy_obj - r.exact_obj;
      const double rel = r.exact_obj > 0 ? gap / r.exact_obj : 0.0;
      csv << fixed(gap, 9) << ',' << fixed(rel, 6) << "\n";
      gap_min = both ? std::min(gap_min, rel) : rel;
      gap_max = both ? std::max(gap_max, rel) : rel;
      gap_sum += rel;
      ++both;
    } else {
      csv << "-,-\n";
    }
    if (r.exact == ExactStatus::Infeasible && !r.greedy_ok) ++infeasible;
    if (r.exact == ExactStatus::Optimal && !r.greedy_ok) ++greedy_only_rejected;
    if (r.exact == ExactStatus::BudgetExceeded) ++budget;
    if (r.greedy_ok && !r.greedy_valid) ++invalid;
  }
  if (c.out.empty()) out << csv.str();
  else write_file(c.out, [&](std::ostream& f) { f << csv.str(); });

  double greedy_ms = 0, exact_ms = 0;
  for (const auto& r : rows) {
    greedy_ms += r.greedy_ms;
    exact_ms += r.exact_ms;
  }
  out << "# instances " << rows.size() << ", both feasible " << both << ", both infeasible " << infeasible
      << ", greedy rejected but feasible " << greedy_only_rejected << ", exact budget exceeded " << budget
      << ", invalid greedy plans " << invalid << "\n";
  if (both) {
    out << "# relative gap min " << fixed(gap_min, 6) << " mean " << fixed(gap_sum / both, 6) << " max "
        << fixed(gap_max, 6) << "\n";
  }
  out << "# runtime greedy " << fixed(greedy_ms, 1) << " ms, exact " << fixed(exact_ms, 1) << " ms\n";
  if (budget) return kExitLimit;
  if (rows.size() == 1 && !rows[0].greedy_ok && rows[0].exact == ExactStatus::Infeasible) return kExitInfeasible;
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Privacy-aware placement of distributed CNN inference"};
  app.name("distpriv");
  app.require_subcommand(1);

  Common common;

  SolveArgs solve_args;
  auto* solve = app.add_subcommand("solve", "Place one request with the greedy or exact solver");
  solve->add_option("--model", solve_args.model, "CNN preset name or CNN CSV file")->required();
  solve->add_option("--fleet", solve_args.fleet, "Fleet CSV file");
  solve->add_option("--helpers", solve_args.helpers, "Preset fleet with this many helpers, uniform class mix");
  solve->add_option("--source", solve_args.source, "Source device id (default: first source in the fleet)");
  solve->add_option("--tolerance", common.tolerance, "Tolerated SSIM")->check(CLI::Range(0.0, 1.0));
  solve->add_option("--epsilon", common.epsilon, "SSIM comparison slack")->check(CLI::NonNegativeNumber);
  solve->add_option("--word-bits", solve_args.word_bits, "Memory word length in bits")->check(CLI::PositiveNumber);
  solve->add_option("--period", solve_args.period, "Period length in seconds")->check(CLI::PositiveNumber);
  solve->add_flag("--exact", solve_args.exact, "Use the exact branch-and-bound solver");
  solve->add_option("--out", common.out, "Write the plan CSV here");
  solve->add_option("--trace", solve_args.trace, "Write the greedy decision trace CSV here");
  add_weights(solve, common);

  SimulateArgs sim_args;
  auto* simulate = app.add_subcommand("simulate", "Run a scenario or sweep file");
  simulate->add_option("scenario", sim_args.scenario, "Scenario JSON file")->required();
  simulate->add_option("--seed", sim_args.seed, "Override the scenario seed");
  simulate->add_option("--period", sim_args.period, "Override the period length (s)")->check(CLI::PositiveNumber);
  simulate->add_option("--max-retries", sim_args.max_retries, "Override the retry cap");
  simulate->add_option("--tolerance", sim_args.tolerance, "Override the tolerated SSIM")->check(CLI::Range(0.0, 1.0));
  simulate->add_option("--epsilon", sim_args.epsilon, "Override the SSIM slack")->check(CLI::NonNegativeNumber);
  simulate->add_option("--out", common.out, "Write the CSV report here (default: stdout)");
  simulate->add_option("--summary", sim_args.summary, "Write the JSON summary here");
  simulate->add_flag("--serial", sim_args.serial, "Run sweep points one after another");
  add_weights(simulate, common);

  PrivacyArgs priv_args;
  auto* privacy = app.add_subcommand("privacy", "Show per-layer caps and the split point");
  privacy->add_option("dataset", priv_args.dataset, "Dataset name, e.g. CIFAR")->required();
  privacy->add_option("--tolerance", common.tolerance, "Tolerated SSIM")->check(CLI::Range(0.0, 1.0));
  privacy->add_option("--epsilon", common.epsilon, "SSIM comparison slack")->check(CLI::NonNegativeNumber);
  privacy->add_option("--ssim-table", priv_args.table, "SSIM CSV to use instead of the embedded table");
  privacy->add_option("--cnn", priv_args.cnn, "CNN preset or file (default: the dataset's preset)");

  CompareArgs cmp_args;
  auto* compare = app.add_subcommand("compare", "Greedy against exact on desk-scale instances");
  compare->add_option("instance", cmp_args.instance, "Instance JSON file");
  compare->add_option("--random", cmp_args.random, "Compare on N random instances instead");
  compare->add_option("--seed", cmp_args.seed, "First random instance seed");
  compare->add_option("--node-budget", cmp_args.node_budget, "Exact search node budget");
  compare->add_option("--time-budget", cmp_args.time_budget, "Exact search time budget per instance (s)");
  compare->add_option("--out", common.out, "Write the comparison CSV here (default: stdout)");
  add_weights(compare, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (solve->parsed()) return cmd_solve(solve_args, common, *solve, out, err);
    if (simulate->parsed()) return cmd_simulate(sim_args, common, *simulate, out);
    if (privacy->parsed()) return cmd_privacy(priv_args, common, out);
    if (compare->parsed()) return cmd_compare(cmp_args, common, *compare, out);
  } catch (const LimitError& e) {
    err << "error: " << e.what() << "\n";
    return kExitLimit;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace distpriv
