#include "distpriv/exact_solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace distpriv {

std::string_view to_string(ExactStatus s) {
  switch (s) {
    case ExactStatus::Optimal: return "optimal";
    case ExactStatus::Infeasible: return "infeasible";
    case ExactStatus::BudgetExceeded: return "budget-exceeded";
  }
  return "?";
}

void check_limits(std::span<const Request> requests, const Fleet& fleet, const ExactLimits& limits) {
  if (fleet.size() > limits.max_devices) {
    throw LimitError("exact solver: " + std::to_string(fleet.size()) + " devices exceed the limit of " +
                     std::to_string(limits.max_devices));
  }
  if (requests.size() > limits.max_requests) {
    throw LimitError("exact solver: " + std::to_string(requests.size()) + " requests exceed the limit of " +
                     std::to_string(limits.max_requests));
  }
  for (const auto& req : requests) {
    if (req.depth() > limits.max_layers) {
      throw LimitError("exact solver: " + req.model->spec.name + " has " + std::to_string(req.depth()) +
                       " layers, limit " + std::to_string(limits.max_layers));
    }
    for (std::size_t l = 1; l <= req.depth(); ++l) {
      if (req.model->at(l).segments > limits.max_segments) {
        throw LimitError("exact solver: layer " + std::to_string(l) + " of " + req.model->spec.name + " has " +
                         std::to_string(req.model->at(l).segments) + " segments, limit " +
                         std::to_string(limits.max_segments));
      }
    }
  }
}

std::optional<std::pair<Constraint, std::string>> obvious_infeasibility(std::span<const Request> requests,
                                                                        const Fleet& fleet) {
  const auto& helpers = fleet.helpers();
  std::vector<Bits> pinned_mem(fleet.size(), 0);
  std::vector<Mults> pinned_comp(fleet.size(), 0);
  for (const auto& req : requests) {
    const auto& m = *req.model;
    for (std::size_t l = 1; l <= req.depth(); ++l) {
      const auto& lp = m.at(l);
      const auto where = "layer " + std::to_string(l) + " (" + m.spec.layer(l).label + ") of request " +
                         std::to_string(req.id);
      if (req.pinned_to_source(l)) {
        pinned_mem[static_cast<std::size_t>(req.source)] += lp.segment_memory * lp.segments;
        pinned_comp[static_cast<std::size_t>(req.source)] += lp.segment_compute * lp.segments;
        continue;
      }
      if (helpers.empty()) return std::pair{Constraint::Coverage, where + " needs a helper and the fleet has none"};
      const bool block = req.is_first_fc(l);
      const Bits mem = lp.segment_memory * (block ? lp.segments : 1);
      const Mults comp = lp.segment_compute * (block ? lp.segments : 1);
      if (std::none_of(helpers.begin(), helpers.end(), [&](DeviceIndex j) { return fleet[j].mem_cap >= mem; })) {
        return std::pair{Constraint::Memory, where + ": no helper has memory for one segment"};
      }
      if (std::none_of(helpers.begin(), helpers.end(), [&](DeviceIndex j) { return fleet[j].comp_cap >= comp; })) {
        return std::pair{Constraint::Compute, where + ": no helper has compute for one segment"};
      }
      if (const auto cap = req.cap(l)) {
        const std::uint64_t reach = block ? (lp.segments <= *cap ? lp.segments : 0)
                                          : std::uint64_t{*cap} * helpers.size();
        if (reach < lp.segments) {
          const auto needed = (lp.segments + *cap - 1) / *cap;
          return std::pair{Constraint::Privacy, where + " has " + std::to_string(lp.segments) +
                                                    " maps with at most " + std::to_string(*cap) +
                                                    " per helper: needs " + std::to_string(needed) +
                                                    " helpers, fleet has " + std::to_string(helpers.size())};
        }
      }
    }
  }
  for (std::size_t d = 0; d < fleet.size(); ++d) {
    const auto& dev = fleet[static_cast<DeviceIndex>(d)];
    if (pinned_mem[d] > dev.mem_cap) {
      return std::pair{Constraint::Memory, "source " + dev.id + " lacks memory for its pinned layers"};
    }
    if (pinned_comp[d] > dev.comp_cap) {
      return std::pair{Constraint::Compute, "source " + dev.id + " lacks compute for its pinned layers"};
    }
  }
  return std::nullopt;
}

namespace {

struct Decision {
  std::size_t r = 0;
  std::size_t l = 0;
  std::size_t p = 0;
  bool pinned = false;
  bool block = false;  // whole first FC layer on one device
  bool last_in_layer = false;
};

// Smallest achievable max_j n_j * a_j with sum n_j = segments and n_j <= cap.
double water_fill(std::vector<double> per_segment, std::uint32_t segments, std::optional<std::uint32_t> cap) {
  if (segments == 0) return 0.0;
  std::vector<std::uint32_t> n(per_segment.size(), 0);
  double worst = 0.0;
  for (std::uint32_t s = 0; s < segments; ++s) {
    std::size_t best = per_segment.size();
    double best_t = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < per_segment.size(); ++k) {
      if (cap && n[k] >= *cap) continue;
      const double t = (n[k] + 1) * per_segment[k];
      if (t < best_t) {
        best_t = t;
        best = k;
      }
    }
    if (best == per_segment.size()) return std::numeric_limits<double>::infinity();
    ++n[best];
    worst = std::max(worst, best_t);
  }
  return worst;
}

class Search {
 public:
  Search(std::span<const Request> requests, const Fleet& fleet, const ExactLimits& limits)
      : reqs_(requests), fleet_(fleet), limits_(limits), ledger_(fleet) {
    rank_.assign(fleet.size(), 0);
    std::vector<DeviceIndex> order(fleet.size());
    std::iota(order.begin(), order.end(), DeviceIndex{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](DeviceIndex a, DeviceIndex b) { return fleet[a].speed > fleet[b].speed; });
    for (std::size_t k = 0; k < order.size(); ++k) {
      rank_[static_cast<std::size_t>(order[k])] = k;
      if (!fleet[order[k]].is_source()) ranked_helpers_.push_back(order[k]);
    }
    for (const auto& req : reqs_) assignment_.emplace_back(req);
    build_decisions();
    build_bounds();
  }

  ExactResult run() {
    start_ = std::chrono::steady_clock::now();
    dfs(0, 0.0);
    ExactResult res;
    res.nodes = nodes_;
    res.seconds = elapsed();
    if (best_) res.plan = evaluate(*best_, reqs_, fleet_);
    if (aborted_) {
      res.status = ExactStatus::BudgetExceeded;
      res.detail = "search stopped after " + std::to_string(nodes_) + " nodes";
    } else if (best_) {
      res.status = ExactStatus::Optimal;
    } else {
      res.status = ExactStatus::Infeasible;
      res.detail = "no assignment satisfies every constraint";
    }
    return res;
  }

 private:
  void build_decisions() {
    for (std::size_t r = 0; r < reqs_.size(); ++r) {
      const auto& req = reqs_[r];
      chain_start_.emplace_back(req.depth() + 1, 0);
      for (std::size_t l = 1; l <= req.depth(); ++l) {
        const auto& m = *req.model;
        const bool same_threads = l > 1 && m.elementwise_output(l - 1) && m.at(l).segments == m.at(l - 1).segments;
        chain_start_[r][l] = same_threads ? chain_start_[r][l - 1] : l;
        const bool pinned = req.pinned_to_source(l);
        const auto segs = m.at(l).segments;
        if (!pinned && req.is_first_fc(l)) {
          decisions_.push_back({r, l, 0, false, true, true});
          continue;
        }
        for (std::size_t p = 0; p < segs; ++p) decisions_.push_back({r, l, p, pinned, false, p + 1 == segs});
      }
    }
  }

  // Placement-independent lower bound on each layer's latency, and suffix sums over later layers.
  void build_bounds() {
    static_lb_.resize(reqs_.size());
    for (std::size_t r = 0; r < reqs_.size(); ++r) {
      const auto& req = reqs_[r];
      const auto& m = *req.model;
      static_lb_[r].assign(req.depth() + 1, 0.0);
      for (std::size_t l = 1; l <= req.depth(); ++l) {
        const auto& lp = m.at(l);
        const double c = static_cast<double>(lp.segment_compute);
        const double unit = static_cast<double>(m.at(l - 1).map_elements * m.word_bits);
        const bool prev_on_source = l == 1 || req.pinned_to_source(l - 1);
        double lb = 0.0;
        if (req.pinned_to_source(l)) {
          lb = lp.segments * c / fleet_[req.source].speed;
          if (!prev_on_source && !ranked_helpers_.empty()) {
            // Some helper forwards at least ceil(P / H) maps, or every map for conv producers.
            double fastest = 0.0;
            for (auto j : ranked_helpers_) fastest = std::max(fastest, fleet_[j].rate);
            const auto h = ranked_helpers_.size();
            const double maps = m.elementwise_output(l - 1) ? std::ceil(static_cast<double>(lp.segments) / h)
                                                             : static_cast<double>(lp.segments);
            lb += unit * maps / fastest;
          }
        } else {
          const double link = prev_on_source ? unit / fleet_[req.source].rate : 0.0;
          std::vector<double> per_segment;
          for (auto j : ranked_helpers_) per_segment.push_back(link + c / fleet_[j].speed);
          if (req.is_first_fc(l)) {
            lb = std::numeric_limits<double>::infinity();
            for (double a : per_segment) lb = std::min(lb, lp.segments * a);
          } else {
            lb = water_fill(per_segment, lp.segments, req.cap(l));
          }
        }
        static_lb_[r][l] = lb;
      }
    }
    // after_[r][l]: sum of static bounds of every layer scheduled after (r, l).
    after_.resize(reqs_.size());
    double acc = 0.0;
    for (std::size_t r = reqs_.size(); r-- > 0;) {
      after_[r].assign(reqs_[r].depth() + 1, 0.0);
      for (std::size_t l = reqs_[r].depth(); l >= 1; --l) {
        after_[r][l] = acc;
        acc += static_lb_[r][l];
      }
    }
  }

  double elapsed() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

  double slack() const { return 1e-9 * std::max(1.0, best_objective_); }

  bool out_of_budget() {
    if (++nodes_ > limits_.node_budget) aborted_ = true;
    if ((nodes_ & 4095u) == 0 && elapsed() > limits_.time_budget_s) aborted_ = true;
    return aborted_;
  }

  // Smallest helper rank allowed for decision d: threads whose devices agree on every
  // earlier layer of the chain are interchangeable, so they are kept in rank order.
  std::size_t min_rank(const Decision& d) const {
    if (d.p == 0 || d.pinned || d.block) return 0;
    const auto& pl = assignment_[d.r];
    for (std::size_t k = chain_start_[d.r][d.l]; k < d.l; ++k) {
      if (pl.layers[k][d.p - 1] != pl.layers[k][d.p]) return 0;
    }
    return rank_[static_cast<std::size_t>(pl.layers[d.l][d.p - 1])];
  }

  void dfs(std::size_t k, double committed) {
    if (out_of_budget()) return;
    if (k == decisions_.size()) {
      if (!best_ || committed < best_objective_ - slack()) {
        best_objective_ = committed;
        best_ = assignment_;
      }
      return;
    }
    const auto& d = decisions_[k];
    const auto& req = reqs_[d.r];
    const auto& lp = req.model->at(d.l);
    auto& pl = assignment_[d.r];
    const LayerInputs inputs(req, pl, d.l);
    const auto cap = req.cap(d.l);
    const std::size_t floor_rank = min_rank(d);
    const std::size_t span = d.block ? lp.segments : 1;

    std::vector<DeviceIndex> candidates;
    if (d.pinned) candidates.push_back(req.source);
    else candidates = ranked_helpers_;

    SenderVolumes vols;
    for (auto j : candidates) {
      if (!d.pinned && rank_[static_cast<std::size_t>(j)] < floor_rank) continue;
      if (cap && !d.pinned && pl.count_on(d.l, j) + span > *cap) continue;
      vols.clear();
      if (d.block) {
        for (std::size_t p = 0; p < span; ++p) inputs.append(p, j, vols);
      } else {
        inputs.append(d.p, j, vols);
      }
      const ResourceLedger saved = ledger_;
      if (ledger_.reserve(j, lp.segment_memory * span, lp.segment_compute * span, vols)) continue;
      for (std::size_t p = d.p; p < d.p + span; ++p) pl.layers[d.l][p] = j;

      const double partial = layer_latency(req, pl, d.l, fleet_);
      const double bound = committed + std::max(partial, static_lb_[d.r][d.l]) + after_[d.r][d.l];
      if (!best_ || bound < best_objective_ - slack()) dfs(k + 1, d.last_in_layer ? committed + partial : committed);

      for (std::size_t p = d.p; p < d.p + span; ++p) pl.layers[d.l][p] = kUnassigned;
      ledger_ = saved;
      if (aborted_) return;
    }
  }

  std::span<const Request> reqs_;
  const Fleet& fleet_;
  const ExactLimits& limits_;
  ResourceLedger ledger_;
  Assignment assignment_;
  std::vector<std::size_t> rank_;
  std::vector<DeviceIndex> ranked_helpers_;
  std::vector<Decision> decisions_;
  std::vector<std::vector<std::size_t>> chain_start_;
  std::vector<std::vector<double>> static_lb_;
  std::vector<std::vector<double>> after_;
  std::optional<Assignment> best_;
  double best_objective_ = std::numeric_limits<double>::infinity();
  std::uint64_t nodes_ = 0;
  bool aborted_ = false;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace

ExactResult solve_exact(std::span<const Request> requests, const Fleet& fleet, const ExactLimits& limits) {
  for (const auto& req : requests) {
    if (req.source < 0 || static_cast<std::size_t>(req.source) >= fleet.size() || !fleet[req.source].is_source()) {
      throw std::invalid_argument("request " + std::to_string(req.id) + " does not come from a source device");
    }
  }
  if (auto why = obvious_infeasibility(requests, fleet)) {
    ExactResult res;
    res.status = ExactStatus::Infeasible;
    res.cause = why->first;
    res.detail = why->second;
    return res;
  }
  check_limits(requests, fleet, limits);
  return Search(requests, fleet, limits).run();
}

}  // namespace distpriv
