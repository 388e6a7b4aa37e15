#include "distpriv/placement.hpp"

#include <algorithm>
#include <istream>
#include <map>
#include <ostream>
#include <stdexcept>

#include "distpriv/text_io.hpp"

namespace distpriv {

namespace {

std::vector<DeviceIndex> distinct_assigned(const std::vector<DeviceIndex>& slots) {
  std::vector<DeviceIndex> out;
  for (auto d : slots) {
    if (d != kUnassigned) out.push_back(d);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace

bool Request::pinned_to_source(std::size_t l) const {
  if (l == 1 || l == depth()) return true;
  return is_first_fc(l) && l < policy->split_point();
}

RequestPlacement::RequestPlacement(const Request& request) {
  const auto& m = *request.model;
  layers.resize(m.depth() + 1);
  layers[0].assign(m.at(0).segments, request.source);
  for (std::size_t l = 1; l <= m.depth(); ++l) layers[l].assign(m.at(l).segments, kUnassigned);
}

std::uint32_t RequestPlacement::count_on(std::size_t l, DeviceIndex d) const {
  return static_cast<std::uint32_t>(std::count(layers[l].begin(), layers[l].end(), d));
}

LayerInputs::LayerInputs(const Request& request, const RequestPlacement& placement, std::size_t l) {
  const auto& m = *request.model;
  const std::size_t prev = l - 1;
  broadcast_ = !m.elementwise_output(prev);
  unit_bits_ = m.at(prev).map_elements * m.word_bits;
  producer_ = &placement.layers[prev];
  if (broadcast_) senders_ = distinct_assigned(*producer_);
}

DeviceIndex LayerInputs::sender_of(std::size_t p) const {
  return p < producer_->size() ? (*producer_)[p] : kUnassigned;
}

void LayerInputs::append(std::size_t p, DeviceIndex receiver, SenderVolumes& out) const {
  if (broadcast_) {
    for (auto i : senders_) {
      if (i != receiver) out.emplace_back(i, unit_bits_);
    }
    return;
  }
  const auto i = sender_of(p);
  if (i != kUnassigned && i != receiver) out.emplace_back(i, unit_bits_);
}

Bits output_volume(const Request& request, const RequestPlacement& placement, std::size_t l, DeviceIndex i,
                   DeviceIndex j) {
  if (i == j) return 0;
  const auto& m = *request.model;
  const auto& produced = placement.layers.at(l);
  const auto& received = placement.layers.at(l + 1);
  const Bits unit = m.at(l).map_elements * m.word_bits;
  if (!m.elementwise_output(l)) {
    const bool i_holds_any = std::find(produced.begin(), produced.end(), i) != produced.end();
    if (!i_holds_any) return 0;
    return unit * static_cast<Bits>(std::count(received.begin(), received.end(), j));
  }
  Bits shared = 0;
  const std::size_t n = std::min(produced.size(), received.size());
  for (std::size_t p = 0; p < n; ++p) {
    if (produced[p] == i && received[p] == j) ++shared;
  }
  return unit * shared;
}

double compute_latency(const Request& request, const RequestPlacement& placement, std::size_t l, DeviceIndex j,
                       const Fleet& fleet) {
  const auto n = placement.count_on(l, j);
  if (n == 0) return 0.0;
  return static_cast<double>(n) * static_cast<double>(request.model->at(l).segment_compute) / fleet[j].speed;
}

double layer_latency(const Request& request, const RequestPlacement& placement, std::size_t l,
                     const Fleet& fleet) {
  const auto& m = *request.model;
  const auto& received = placement.layers[l];
  const LayerInputs inputs(request, placement, l);

  std::vector<std::uint32_t> count(fleet.size(), 0);
  std::vector<DeviceIndex> receivers;
  for (auto j : received) {
    if (j == kUnassigned) continue;
    if (count[static_cast<std::size_t>(j)]++ == 0) receivers.push_back(j);
  }

  // Worst incoming transmission per receiver: max_i O^{l-1}_{i,j} / rho_i.
  std::vector<double> incoming(fleet.size(), 0.0);
  const double unit = static_cast<double>(inputs.unit_bits());
  if (inputs.broadcast()) {
    for (auto j : receivers) {
      double worst = 0.0;
      for (auto i : inputs.broadcast_senders()) {
        if (i != j) worst = std::max(worst, unit * count[static_cast<std::size_t>(j)] / fleet[i].rate);
      }
      incoming[static_cast<std::size_t>(j)] = worst;
    }
  } else {
    std::map<std::pair<DeviceIndex, DeviceIndex>, std::uint32_t> pairs;
    for (std::size_t p = 0; p < received.size(); ++p) {
      const auto i = inputs.sender_of(p);
      const auto j = received[p];
      if (i != kUnassigned && j != kUnassigned && i != j) ++pairs[{i, j}];
    }
    for (const auto& [ij, n] : pairs) {
      auto& slot = incoming[static_cast<std::size_t>(ij.second)];
      slot = std::max(slot, unit * n / fleet[ij.first].rate);
    }
  }

  const double c = static_cast<double>(m.at(l).segment_compute);
  double worst = 0.0;
  for (auto j : receivers) {
    const auto idx = static_cast<std::size_t>(j);
    worst = std::max(worst, incoming[idx] + count[idx] * c / fleet[j].speed);
  }
  return worst;
}

double request_latency(const Request& request, const RequestPlacement& placement, const Fleet& fleet) {
  double total = 0.0;
  for (std::size_t l = 1; l <= request.depth(); ++l) total += layer_latency(request, placement, l, fleet);
  return total;
}

double total_latency(const Assignment& assignment, std::span<const Request> requests, const Fleet& fleet) {
  if (assignment.size() != requests.size()) throw std::invalid_argument("assignment and requests differ in size");
  double total = 0.0;
  for (std::size_t r = 0; r < requests.size(); ++r) total += request_latency(requests[r], assignment[r], fleet);
  return total;
}

namespace {

// Calls fn(i, j, O^l_{i,j}) for every ordered pair of involved devices with non-zero volume.
template <typename Fn>
void for_each_volume(const Request& request, const RequestPlacement& placement, std::size_t l, Fn&& fn) {
  const auto producers = distinct_assigned(placement.layers[l]);
  const auto receivers = distinct_assigned(placement.layers[l + 1]);
  for (auto i : producers) {
    for (auto j : receivers) {
      if (const auto bits = output_volume(request, placement, l, i, j)) fn(i, j, bits);
    }
  }
}

}  // namespace

Bits request_shared_bits(const Request& request, const RequestPlacement& placement) {
  Bits total = 0;
  for (std::size_t l = 0; l < request.depth(); ++l) {
    for_each_volume(request, placement, l, [&](DeviceIndex, DeviceIndex, Bits bits) { total += bits; });
  }
  return total;
}

PlacementPlan evaluate(Assignment assignment, std::span<const Request> requests, const Fleet& fleet) {
  if (assignment.size() != requests.size()) throw std::invalid_argument("assignment and requests differ in size");
  PlacementPlan plan;
  plan.layer_latency.resize(requests.size());
  for (std::size_t r = 0; r < requests.size(); ++r) {
    const auto& req = requests[r];
    auto& lat = plan.layer_latency[r];
    lat.assign(req.depth() + 1, 0.0);
    for (std::size_t l = 1; l <= req.depth(); ++l) {
      lat[l] = layer_latency(req, assignment[r], l, fleet);
      plan.objective += lat[l];
    }
    for (std::size_t l = 0; l < req.depth(); ++l) {
      for_each_volume(req, assignment[r], l, [&](DeviceIndex i, DeviceIndex j, Bits bits) {
        plan.volumes.push_back({r, l, i, j, bits});
        plan.shared_bits += bits;
      });
    }
  }
  plan.assignment = std::move(assignment);
  return plan;
}

std::string_view tag(Constraint c) {
  switch (c) {
    case Constraint::Memory: return "7b";
    case Constraint::Compute: return "7c";
    case Constraint::Bandwidth: return "7d";
    case Constraint::Coverage: return "7e'";
    case Constraint::Privacy: return "7e";
    case Constraint::FirstFc: return "7f";
    case Constraint::SourcePinning: return "7g";
  }
  return "?";
}

bool ValidationReport::has(Constraint c) const {
  return std::any_of(violations.begin(), violations.end(), [c](const auto& v) { return v.constraint == c; });
}

namespace {

bool well_formed(const Request& req, const RequestPlacement& pl, std::size_t r, const Fleet& fleet,
                 std::vector<Violation>& out) {
  const auto& m = *req.model;
  const auto before = out.size();
  if (pl.layers.size() != m.depth() + 1) {
    out.push_back({Constraint::Coverage, r, 0, kUnassigned, "placement has wrong number of layers"});
    return false;
  }
  for (std::size_t l = 1; l <= m.depth(); ++l) {
    if (pl.layers[l].size() != m.at(l).segments) {
      out.push_back({Constraint::Coverage, r, l, kUnassigned,
                     "layer has " + std::to_string(pl.layers[l].size()) + " assigned slots for " +
                         std::to_string(m.at(l).segments) + " segments"});
      continue;
    }
    for (std::size_t p = 0; p < pl.layers[l].size(); ++p) {
      const auto d = pl.layers[l][p];
      if (d < 0 || static_cast<std::size_t>(d) >= fleet.size()) {
        out.push_back({Constraint::Coverage, r, l, d, "segment " + std::to_string(p + 1) + " is not assigned"});
      }
    }
  }
  return out.size() == before;
}

}  // namespace

ValidationReport validate(const Assignment& assignment, const Fleet& fleet, std::span<const Request> requests) {
  ValidationReport report;
  auto& out = report.violations;
  if (assignment.size() != requests.size()) {
    out.push_back({Constraint::Coverage, std::nullopt, 0, kUnassigned, "assignment and requests differ in size"});
    return report;
  }

  std::vector<Bits> mem(fleet.size(), 0);
  std::vector<Bits> comp(fleet.size(), 0);
  std::vector<Bits> bw(fleet.size(), 0);

  for (std::size_t r = 0; r < requests.size(); ++r) {
    const auto& req = requests[r];
    const auto& pl = assignment[r];
    if (!well_formed(req, pl, r, fleet, out)) continue;
    const auto& m = *req.model;

    for (std::size_t l = 1; l <= m.depth(); ++l) {
      const auto& slots = pl.layers[l];
      const bool pinned = req.pinned_to_source(l);
      for (auto d : slots) {
        mem[static_cast<std::size_t>(d)] += m.at(l).segment_memory;
        comp[static_cast<std::size_t>(d)] += m.at(l).segment_compute;
      }
      for (auto d : distinct_assigned(slots)) {
        if (pinned && d != req.source) {
          out.push_back({Constraint::SourcePinning, r, l, d, "layer must run on the source"});
        } else if (!pinned && fleet[d].is_source()) {
          out.push_back({Constraint::SourcePinning, r, l, d, "source devices may not compute intermediate layers"});
        }
        if (const auto cap = req.cap(l); cap && !fleet[d].is_source()) {
          const auto n = pl.count_on(l, d);
          if (n > *cap) {
            out.push_back({Constraint::Privacy, r, l, d,
                           std::to_string(n) + " maps exceed the cap of " + std::to_string(*cap)});
          }
        }
      }
      if (req.is_first_fc(l) && distinct_assigned(slots).size() > 1) {
        out.push_back({Constraint::FirstFc, r, l, kUnassigned, "first FC layer input split across devices"});
      }
    }
    for (std::size_t l = 0; l < m.depth(); ++l) {
      for_each_volume(req, pl, l, [&](DeviceIndex i, DeviceIndex, Bits bits) { bw[static_cast<std::size_t>(i)] += bits; });
    }
  }

  for (std::size_t d = 0; d < fleet.size(); ++d) {
    const auto& dev = fleet[static_cast<DeviceIndex>(d)];
    const auto idx = static_cast<DeviceIndex>(d);
    if (mem[d] > dev.mem_cap) {
      out.push_back({Constraint::Memory, std::nullopt, 0, idx,
                     std::to_string(mem[d]) + " bits exceed " + std::to_string(dev.mem_cap)});
    }
    if (comp[d] > dev.comp_cap) {
      out.push_back({Constraint::Compute, std::nullopt, 0, idx,
                     std::to_string(comp[d]) + " multiplications exceed " + std::to_string(dev.comp_cap)});
    }
    if (bw[d] > dev.bw_cap) {
      out.push_back({Constraint::Bandwidth, std::nullopt, 0, idx,
                     std::to_string(bw[d]) + " outbound bits exceed " + std::to_string(dev.bw_cap)});
    }
  }
  return report;
}

void write_plan_csv(std::ostream& out, const Assignment& assignment, std::span<const Request> requests,
                    const Fleet& fleet) {
  out << "# distpriv-plan v1\nrequest,layer,segment,device\n";
  for (std::size_t r = 0; r < assignment.size(); ++r) {
    const auto& pl = assignment[r];
    for (std::size_t l = 1; l < pl.layers.size(); ++l) {
      for (std::size_t p = 0; p < pl.layers[l].size(); ++p) {
        const auto d = pl.layers[l][p];
        out << requests[r].id << ',' << l << ',' << p + 1 << ',' << (d == kUnassigned ? "-" : fleet[d].id) << "\n";
      }
    }
  }
}

Assignment read_plan_csv(std::istream& in, std::span<const Request> requests, const Fleet& fleet) {
  Assignment assignment;
  for (const auto& req : requests) assignment.emplace_back(req);
  for (const auto& row : text::read_rows(in, "distpriv-plan v1")) {
    if (!row.empty() && row[0] == "request") continue;
    if (row.size() != 4) throw std::runtime_error("plan rows need 4 columns: request,layer,segment,device");
    const auto id = text::to_u64(row[0], "request");
    const auto l = text::to_u64(row[1], "layer");
    const auto p = text::to_u64(row[2], "segment");
    auto it = std::find_if(requests.begin(), requests.end(), [&](const auto& q) { return q.id == id; });
    if (it == requests.end()) throw std::runtime_error("plan refers to unknown request " + row[0]);
    auto& pl = assignment[static_cast<std::size_t>(it - requests.begin())];
    if (l == 0 || l >= pl.layers.size() || p == 0 || p > pl.layers[l].size()) {
      throw std::runtime_error("plan record outside the CNN: layer " + row[1] + " segment " + row[2]);
    }
    pl.layers[l][p - 1] = row[3] == "-" ? kUnassigned : fleet.index_of(row[3]);
  }
  return assignment;
}

}  // namespace distpriv
