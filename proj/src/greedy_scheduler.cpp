#include "distpriv/greedy_scheduler.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace distpriv {

void GreedyConfig::check() const {
  if (!(alpha >= 0.0 && alpha <= 1.0 && beta >= 0.0 && beta <= 1.0) || std::abs(alpha + beta - 1.0) > 1e-9) {
    throw std::invalid_argument("alpha and beta must lie in [0,1] and sum to 1");
  }
}

namespace {

Constraint constraint_for(const Insufficient& bad) {
  switch (bad.resource) {
    case Resource::Memory: return Constraint::Memory;
    case Resource::Compute: return Constraint::Compute;
    case Resource::Bandwidth: return Constraint::Bandwidth;
  }
  return Constraint::Memory;
}

std::vector<std::size_t> tie_priority(std::size_t devices, const GreedyConfig& config) {
  std::vector<std::size_t> rank(devices);
  std::iota(rank.begin(), rank.end(), std::size_t{0});
  if (config.tie_break == TieBreak::Seeded) {
    std::mt19937_64 rng(config.seed);
    for (std::size_t i = devices; i > 1; --i) std::swap(rank[i - 1], rank[rng() % i]);
  }
  return rank;
}

// Slowest and second-slowest links among a set of senders sending `bits` each, so the
// worst remote transfer for any receiver is available in O(1).
struct WorstLinks {
  std::array<std::pair<DeviceIndex, double>, 2> top{{{kUnassigned, 0.0}, {kUnassigned, 0.0}}};

  void add(DeviceIndex i, double seconds) {
    if (seconds > top[0].second || top[0].first == kUnassigned) {
      top[1] = top[0];
      top[0] = {i, seconds};
    } else if (seconds > top[1].second || top[1].first == kUnassigned) {
      top[1] = {i, seconds};
    }
  }
  double excluding(DeviceIndex j) const { return top[0].first == j ? top[1].second : top[0].second; }
};

// Fills t(j) and nrm(j) for every helper. `transfer(j)` gives the worst incoming transfer time.
template <typename Transfer>
std::vector<Candidate> rank_helpers(const Fleet& fleet, const ResourceLedger& ledger, const GreedyConfig& config,
                                    double multiplications, Transfer&& transfer) {
  const auto& helpers = fleet.helpers();
  std::vector<Candidate> out;
  out.reserve(helpers.size());
  double t_min = INFINITY, t_max = -INFINITY, b_min = INFINITY, b_max = -INFINITY;
  std::vector<double> inv_bw;
  inv_bw.reserve(helpers.size());
  for (auto j : helpers) {
    const double t = transfer(j) + multiplications / fleet[j].speed;
    const double ib = 1.0 / static_cast<double>(std::max<Bits>(ledger.remaining(j).bw, 1));
    out.push_back({j, t, 0.0});
    inv_bw.push_back(ib);
    t_min = std::min(t_min, t);
    t_max = std::max(t_max, t);
    b_min = std::min(b_min, ib);
    b_max = std::max(b_max, ib);
  }
  // Min-max over the candidate set; a degenerate range maps every candidate to 0.
  auto norm = [](double v, double lo, double hi) { return hi > lo ? (v - lo) / (hi - lo) : 0.0; };
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k].score = config.alpha * norm(out[k].latency, t_min, t_max) + config.beta * norm(inv_bw[k], b_min, b_max);
  }
  return out;
}

std::vector<Candidate> segment_candidates(const Request& request, const LayerInputs& inputs, std::size_t l,
                                          std::size_t p, const Fleet& fleet, const ResourceLedger& ledger,
                                          const GreedyConfig& config) {
  const double unit = static_cast<double>(inputs.unit_bits());
  const double c = static_cast<double>(request.model->at(l).segment_compute);
  if (inputs.broadcast()) {
    WorstLinks worst;
    for (auto i : inputs.broadcast_senders()) worst.add(i, unit / fleet[i].rate);
    return rank_helpers(fleet, ledger, config, c, [&](DeviceIndex j) { return worst.excluding(j); });
  }
  const auto s = inputs.sender_of(p);
  const double from_s = s == kUnassigned ? 0.0 : unit / fleet[s].rate;
  return rank_helpers(fleet, ledger, config, c, [&](DeviceIndex j) { return s == j ? 0.0 : from_s; });
}

struct Ordering {
  const std::vector<std::size_t>* priority;
  // Heap comparator: true when a ranks after b.
  bool operator()(const Candidate& a, const Candidate& b) const {
    if (a.score != b.score) return a.score > b.score;
    return (*priority)[static_cast<std::size_t>(a.device)] > (*priority)[static_cast<std::size_t>(b.device)];
  }
};

Constraint dominant_reason(const std::vector<Skip>& skipped) {
  // Ties resolve towards the privacy cap, then bandwidth, compute, memory.
  constexpr std::array order{Constraint::Privacy, Constraint::Bandwidth, Constraint::Compute, Constraint::Memory};
  Constraint best = Constraint::Coverage;
  std::size_t best_n = 0;
  for (auto c : order) {
    const auto n = static_cast<std::size_t>(
        std::count_if(skipped.begin(), skipped.end(), [c](const Skip& s) { return s.reason == c; }));
    if (n > best_n) {
      best = c;
      best_n = n;
    }
  }
  return best;
}

class RequestPlacer {
 public:
  RequestPlacer(const Request& request, const Fleet& fleet, ResourceLedger& ledger, const GreedyConfig& config,
                std::vector<TraceEntry>* trace)
      : req_(request),
        fleet_(fleet),
        ledger_(ledger),
        config_(config),
        trace_(trace),
        priority_(tie_priority(fleet.size(), config)),
        on_layer_(fleet.size(), 0) {}

  PlacementOutcome run() {
    const ResourceLedger snapshot = ledger_;
    out_.request_id = req_.id;
    out_.placement = RequestPlacement(req_);
    for (std::size_t l = 1; l <= req_.depth() && !out_.rejected; ++l) {
      std::fill(on_layer_.begin(), on_layer_.end(), 0u);
      const LayerInputs inputs(req_, out_.placement, l);
      if (req_.is_first_fc(l) && !req_.pinned_to_source(l)) {
        place_block(inputs, l);
        continue;
      }
      for (std::size_t p = 0; p < req_.model->at(l).segments && !out_.rejected; ++p) {
        if (req_.pinned_to_source(l)) place_pinned(inputs, l, p);
        else place_free(inputs, l, p);
      }
    }
    if (out_.rejected) {
      ledger_ = snapshot;
      out_.shared_bits = 0;
      return std::move(out_);
    }
    out_.layer_latency.assign(req_.depth() + 1, 0.0);
    for (std::size_t l = 1; l <= req_.depth(); ++l) {
      out_.layer_latency[l] = layer_latency(req_, out_.placement, l, fleet_);
      out_.latency += out_.layer_latency[l];
    }
    return std::move(out_);
  }

 private:
  void reject(std::size_t l, std::size_t p, Constraint c, std::string detail) {
    out_.rejected = true;
    out_.rejection = Rejection{l, p + 1, c, std::move(detail)};
  }

  void commit(std::size_t l, std::size_t p, DeviceIndex d, const SenderVolumes& vols) {
    out_.placement.layers[l][p] = d;
    ++on_layer_[static_cast<std::size_t>(d)];
    for (const auto& v : vols) out_.shared_bits += v.second;
  }

  void record(std::size_t l, std::size_t p, DeviceIndex d, double t, double score, bool pinned,
              std::vector<Skip> skipped) {
    if (trace_) trace_->push_back({req_.id, l, p + 1, d, t, score, pinned, std::move(skipped)});
  }

  void place_pinned(const LayerInputs& inputs, std::size_t l, std::size_t p) {
    const auto& lp = req_.model->at(l);
    vols_.clear();
    inputs.append(p, req_.source, vols_);
    if (auto bad = ledger_.reserve(req_.source, lp.segment_memory, lp.segment_compute, vols_)) {
      reject(l, p, constraint_for(*bad),
             "source " + fleet_[req_.source].id + " lacks " + std::string(to_string(bad->resource)) +
                 " for a pinned layer (device " + fleet_[bad->device].id + ")");
      return;
    }
    commit(l, p, req_.source, vols_);
    record(l, p, req_.source, 0.0, 0.0, true, {});
  }

  void place_free(const LayerInputs& inputs, std::size_t l, std::size_t p) {
    const auto& lp = req_.model->at(l);
    if (fleet_.helpers().empty()) {
      reject(l, p, Constraint::Coverage, "no helper devices");
      return;
    }
    auto heap = segment_candidates(req_, inputs, l, p, fleet_, ledger_, config_);
    const Ordering order{&priority_};
    std::make_heap(heap.begin(), heap.end(), order);
    const auto cap = req_.cap(l);
    std::vector<Skip> skipped;
    while (!heap.empty()) {
      std::pop_heap(heap.begin(), heap.end(), order);
      const Candidate cand = heap.back();
      heap.pop_back();
      const auto j = cand.device;
      if (cap && on_layer_[static_cast<std::size_t>(j)] >= *cap) {
        skipped.push_back({j, Constraint::Privacy});
        continue;
      }
      vols_.clear();
      inputs.append(p, j, vols_);
      if (auto bad = ledger_.reserve(j, lp.segment_memory, lp.segment_compute, vols_)) {
        skipped.push_back({j, constraint_for(*bad)});
        continue;
      }
      commit(l, p, j, vols_);
      record(l, p, j, cand.latency, cand.score, false, std::move(skipped));
      return;
    }
    const auto reason = dominant_reason(skipped);
    reject(l, p, reason, "no helper satisfies constraint " + std::string(tag(reason)));
  }

  // The first FC layer takes its whole input on one device, so it is placed as a unit.
  void place_block(const LayerInputs& inputs, std::size_t l) {
    const auto& lp = req_.model->at(l);
    const std::size_t segments = lp.segments;
    if (fleet_.helpers().empty()) {
      reject(l, 0, Constraint::Coverage, "no helper devices");
      return;
    }
    const double unit = static_cast<double>(inputs.unit_bits());
    std::vector<std::pair<DeviceIndex, std::uint32_t>> per_sender;  // maps forwarded per sender
    if (inputs.broadcast()) {
      for (auto i : inputs.broadcast_senders()) per_sender.emplace_back(i, static_cast<std::uint32_t>(segments));
    } else {
      for (std::size_t p = 0; p < segments; ++p) {
        const auto i = inputs.sender_of(p);
        if (i == kUnassigned) continue;
        auto it = std::find_if(per_sender.begin(), per_sender.end(), [i](const auto& s) { return s.first == i; });
        if (it == per_sender.end()) per_sender.emplace_back(i, 1u);
        else ++it->second;
      }
    }
    WorstLinks worst;
    for (const auto& [i, n] : per_sender) worst.add(i, unit * n / fleet_[i].rate);
    auto heap = rank_helpers(fleet_, ledger_, config_, static_cast<double>(lp.segment_compute) * segments,
                             [&](DeviceIndex j) { return worst.excluding(j); });
    const Ordering order{&priority_};
    std::make_heap(heap.begin(), heap.end(), order);
    const auto cap = req_.cap(l);
    std::vector<Skip> skipped;
    while (!heap.empty()) {
      std::pop_heap(heap.begin(), heap.end(), order);
      const Candidate cand = heap.back();
      heap.pop_back();
      const auto j = cand.device;
      if (cap && segments > *cap) {
        skipped.push_back({j, Constraint::Privacy});
        continue;
      }
      vols_.clear();
      for (std::size_t p = 0; p < segments; ++p) inputs.append(p, j, vols_);
      if (auto bad = ledger_.reserve(j, lp.segment_memory * segments, lp.segment_compute * segments, vols_)) {
        skipped.push_back({j, constraint_for(*bad)});
        continue;
      }
      for (std::size_t p = 0; p < segments; ++p) out_.placement.layers[l][p] = j;
      on_layer_[static_cast<std::size_t>(j)] += static_cast<std::uint32_t>(segments);
      for (const auto& v : vols_) out_.shared_bits += v.second;
      for (std::size_t p = 0; p < segments; ++p) {
        record(l, p, j, cand.latency, cand.score, false, p == 0 ? std::move(skipped) : std::vector<Skip>{});
      }
      return;
    }
    const auto reason = dominant_reason(skipped);
    reject(l, 0, reason, "no helper can take the whole first FC layer (" + std::string(tag(reason)) + ")");
  }

  const Request& req_;
  const Fleet& fleet_;
  ResourceLedger& ledger_;
  const GreedyConfig& config_;
  std::vector<TraceEntry>* trace_;
  std::vector<std::size_t> priority_;
  std::vector<std::uint32_t> on_layer_;
  SenderVolumes vols_;
  PlacementOutcome out_;
};

}  // namespace

std::vector<Candidate> score_candidates(const Request& request, const RequestPlacement& placement, std::size_t l,
                                        std::size_t p, const Fleet& fleet, const ResourceLedger& ledger,
                                        const GreedyConfig& config) {
  if (fleet.helpers().empty()) throw std::invalid_argument("score_candidates: fleet has no helpers");
  if (l <= 1 || l > request.depth()) throw std::invalid_argument("score_candidates: layer outside 2..L");
  const LayerInputs inputs(request, placement, l);
  auto cands = segment_candidates(request, inputs, l, p, fleet, ledger, config);
  const auto priority = tie_priority(fleet.size(), config);
  std::sort(cands.begin(), cands.end(), [&](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score < b.score;
    return priority[static_cast<std::size_t>(a.device)] < priority[static_cast<std::size_t>(b.device)];
  });
  return cands;
}

PlacementOutcome place_request(const Request& request, const Fleet& fleet, ResourceLedger& ledger,
                               const GreedyConfig& config, std::vector<TraceEntry>* trace) {
  config.check();
  if (request.source < 0 || static_cast<std::size_t>(request.source) >= fleet.size() ||
      !fleet[request.source].is_source()) {
    throw std::invalid_argument("request " + std::to_string(request.id) + " does not come from a source device");
  }
  return RequestPlacer(request, fleet, ledger, config, trace).run();
}

BatchResult run_batch(std::span<const Request> requests, const Fleet& fleet, ResourceLedger& ledger,
                      const GreedyConfig& config, std::vector<TraceEntry>* trace) {
  BatchResult batch;
  batch.outcomes.reserve(requests.size());
  for (const auto& req : requests) {
    auto outcome = place_request(req, fleet, ledger, config, trace);
    if (outcome.rejected) {
      ++batch.rejected;
    } else {
      batch.total_latency += outcome.latency;
      batch.shared_bits += outcome.shared_bits;
    }
    batch.outcomes.push_back(std::move(outcome));
  }
  return batch;
}

BatchResult run_batch(std::span<const Request> requests, const Fleet& fleet, const GreedyConfig& config) {
  ResourceLedger ledger(fleet);
  return run_batch(requests, fleet, ledger, config);
}

ServedSet served(std::span<const Request> requests, const BatchResult& batch) {
  ServedSet out;
  for (std::size_t k = 0; k < requests.size() && k < batch.outcomes.size(); ++k) {
    if (batch.outcomes[k].rejected) continue;
    out.requests.push_back(requests[k]);
    out.assignment.push_back(batch.outcomes[k].placement);
  }
  return out;
}

}  // namespace distpriv
