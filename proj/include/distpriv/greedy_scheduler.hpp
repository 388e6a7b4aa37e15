#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "distpriv/fleet.hpp"
#include "distpriv/placement.hpp"

namespace distpriv {

enum class TieBreak {
  LowestId,  // equal scores go to the lowest device index
  Seeded,    // equal scores follow a seed-derived device permutation
};

struct GreedyConfig {
  double alpha = 0.7;  // weight of normalized latency
  double beta = 0.3;   // weight of normalized inverse remaining bandwidth
  TieBreak tie_break = TieBreak::LowestId;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument unless alpha, beta lie in [0,1] and sum to 1.
  void check() const;
};

struct Candidate {
  DeviceIndex device = kUnassigned;
  double latency = 0;  // t(j): slowest incoming transfer plus compute of the segment
  double score = 0;    // nrm(j)
};

/// Helpers ranked by nrm for segment p of layer l, best first. Requires the
/// producing layer l-1 to be fully placed in `placement`.
std::vector<Candidate> score_candidates(const Request& request, const RequestPlacement& placement, std::size_t l,
                                        std::size_t p, const Fleet& fleet, const ResourceLedger& ledger,
                                        const GreedyConfig& config);

struct Skip {
  DeviceIndex device;
  Constraint reason;
};

struct TraceEntry {
  std::size_t request_id = 0;
  std::size_t layer = 0;
  std::size_t segment = 0;  // 1-based
  DeviceIndex device = kUnassigned;
  double latency = 0;
  double score = 0;
  bool pinned = false;
  std::vector<Skip> skipped;
};

struct Rejection {
  std::size_t layer = 0;
  std::size_t segment = 0;  // 1-based
  Constraint constraint = Constraint::Memory;
  std::string detail;
};

struct PlacementOutcome {
  std::size_t request_id = 0;
  bool rejected = false;
  RequestPlacement placement;
  std::vector<double> layer_latency;  // index 1..L
  double latency = 0;
  Bits shared_bits = 0;
  std::optional<Rejection> rejection;
};

/// Places every segment of one request, deducting resources from `ledger` as it goes.
/// A rejected request leaves the ledger exactly as it found it.
PlacementOutcome place_request(const Request& request, const Fleet& fleet, ResourceLedger& ledger,
                               const GreedyConfig& config, std::vector<TraceEntry>* trace = nullptr);

struct BatchResult {
  std::vector<PlacementOutcome> outcomes;
  std::size_t rejected = 0;
  double total_latency = 0;
  Bits shared_bits = 0;
};

BatchResult run_batch(std::span<const Request> requests, const Fleet& fleet, ResourceLedger& ledger,
                      const GreedyConfig& config, std::vector<TraceEntry>* trace = nullptr);
BatchResult run_batch(std::span<const Request> requests, const Fleet& fleet, const GreedyConfig& config);

/// Served requests of a batch with their placements, ready for validate().
struct ServedSet {
  std::vector<Request> requests;
  Assignment assignment;
};
ServedSet served(std::span<const Request> requests, const BatchResult& batch);

}  // namespace distpriv
