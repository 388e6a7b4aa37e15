#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "distpriv/fleet.hpp"
#include "distpriv/model_catalog.hpp"
#include "distpriv/privacy_policy.hpp"

namespace distpriv {

/// One classification request issued by a source device.
struct Request {
  std::size_t id = 0;
  DeviceIndex source = kUnassigned;
  std::shared_ptr<const CnnProfile> model;
  std::shared_ptr<const PrivacyPolicy> policy;
  double arrival = 0;

  std::size_t depth() const { return model->depth(); }
  /// Layers computed on the source: the first, the last, and the first FC layer
  /// when it precedes the split point.
  bool pinned_to_source(std::size_t l) const;
  std::optional<std::uint32_t> cap(std::size_t l) const { return policy->cap_for_layer(l); }
  bool is_first_fc(std::size_t l) const { return model->first_fc && *model->first_fc == l; }
};

/// Device computing each segment of one request: layers[l][p] for l = 0..L.
/// Layer 0 is the input image, held by the source.
struct RequestPlacement {
  std::vector<std::vector<DeviceIndex>> layers;

  RequestPlacement() = default;
  explicit RequestPlacement(const Request& request);

  DeviceIndex at(std::size_t l, std::size_t p) const { return layers[l][p]; }
  std::uint32_t count_on(std::size_t l, DeviceIndex d) const;
  bool operator==(const RequestPlacement&) const = default;
};

/// The assignment variable for a batch, aligned index-by-index with its requests.
using Assignment = std::vector<RequestPlacement>;

using SenderVolumes = std::vector<std::pair<DeviceIndex, Bits>>;

/// Producers of the inputs of layer l, giving the per-segment volume O^{l-1,p}.
class LayerInputs {
 public:
  LayerInputs(const Request& request, const RequestPlacement& placement, std::size_t l);

  /// Conv producers send one map of partial sums per receiving segment from every device
  /// that computed part of the layer; other producers forward map p to segment p only.
  bool broadcast() const { return broadcast_; }
  Bits unit_bits() const { return unit_bits_; }
  const std::vector<DeviceIndex>& broadcast_senders() const { return senders_; }
  DeviceIndex sender_of(std::size_t p) const;

  /// Appends (sender, bits) for every remote sender feeding segment p on `receiver`.
  void append(std::size_t p, DeviceIndex receiver, SenderVolumes& out) const;

 private:
  bool broadcast_ = false;
  Bits unit_bits_ = 0;
  std::vector<DeviceIndex> senders_;
  const std::vector<DeviceIndex>* producer_ = nullptr;
};

/// Data sent from i to j after layer l (l = 0..L-1), counting segments of layer l+1.
Bits output_volume(const Request& request, const RequestPlacement& placement, std::size_t l, DeviceIndex i,
                   DeviceIndex j);

/// Time for device j to compute its segments of layer l.
double compute_latency(const Request& request, const RequestPlacement& placement, std::size_t l, DeviceIndex j,
                       const Fleet& fleet);

/// Worst transmit-plus-compute time over all device pairs for layer l.
/// Unassigned segments are ignored, so partial layers give a lower bound.
double layer_latency(const Request& request, const RequestPlacement& placement, std::size_t l,
                     const Fleet& fleet);

double request_latency(const Request& request, const RequestPlacement& placement, const Fleet& fleet);
double total_latency(const Assignment& assignment, std::span<const Request> requests, const Fleet& fleet);

/// Sum of O^l_{i,j} over all layers and ordered device pairs of one request.
Bits request_shared_bits(const Request& request, const RequestPlacement& placement);

struct PairVolume {
  std::size_t request = 0;  // index into the batch
  std::size_t layer = 0;    // producing layer l of O^l
  DeviceIndex from = kUnassigned;
  DeviceIndex to = kUnassigned;
  Bits bits = 0;
};

struct PlacementPlan {
  Assignment assignment;
  std::vector<std::vector<double>> layer_latency;  // [request][l], l = 1..L (index 0 unused)
  std::vector<PairVolume> volumes;
  double objective = 0;
  Bits shared_bits = 0;
};

PlacementPlan evaluate(Assignment assignment, std::span<const Request> requests, const Fleet& fleet);

enum class Constraint { Memory, Compute, Bandwidth, Coverage, Privacy, FirstFc, SourcePinning };

/// Short tag naming the constraint, e.g. "7b" for memory.
std::string_view tag(Constraint c);

struct Violation {
  Constraint constraint;
  std::optional<std::size_t> request;  // batch index; none for per-device budgets
  std::size_t layer = 0;
  DeviceIndex device = kUnassigned;
  std::string detail;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool valid() const { return violations.empty(); }
  bool has(Constraint c) const;
};

ValidationReport validate(const Assignment& assignment, const Fleet& fleet, std::span<const Request> requests);

/// Flat `request,layer,segment,device` records with 1-based layer and segment numbers.
void write_plan_csv(std::ostream& out, const Assignment& assignment, std::span<const Request> requests,
                    const Fleet& fleet);
Assignment read_plan_csv(std::istream& in, std::span<const Request> requests, const Fleet& fleet);

}  // namespace distpriv
