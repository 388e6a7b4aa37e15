#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "distpriv/model_catalog.hpp"

namespace distpriv {

using DeviceIndex = std::int32_t;
inline constexpr DeviceIndex kUnassigned = -1;

enum class DeviceKind { Source, Helper };
enum class DeviceClass { RPi3, LgNexus, Stm32H7, Custom };

std::string_view to_string(DeviceKind kind);
std::string_view to_string(DeviceClass cls);
DeviceClass parse_device_class(std::string_view text);

/// Published figures of a device family. `rated_speed` is in units of
/// FleetParams::speed_scale multiplications per second.
struct ClassProfile {
  DeviceClass cls;
  std::string_view name;
  double rated_speed;
  std::uint64_t ram_bytes;
  double rate_bps;
};

const ClassProfile& class_profile(DeviceClass cls);

/// Calibration knobs that turn device-class figures into per-period budgets.
struct FleetParams {
  double period_s = 1.0;
  double speed_scale = 1e6;
};

struct DeviceSpec {
  std::string id;
  DeviceKind kind = DeviceKind::Helper;
  DeviceClass cls = DeviceClass::Custom;
  Bits mem_cap = 0;    // per period
  Mults comp_cap = 0;  // per period
  Bits bw_cap = 0;     // outbound, per period
  double rate = 0;     // bits per second
  double speed = 0;    // multiplications per second
  std::string cnn;     // sources only

  bool is_source() const { return kind == DeviceKind::Source; }
};

DeviceSpec make_device(std::string id, DeviceClass cls, DeviceKind kind, const FleetParams& params = {});

class Fleet {
 public:
  Fleet() = default;
  explicit Fleet(std::vector<DeviceSpec> devices);

  DeviceIndex add(DeviceSpec device);
  const DeviceSpec& operator[](DeviceIndex i) const { return devices_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return devices_.size(); }
  const std::vector<DeviceSpec>& devices() const { return devices_; }
  std::optional<DeviceIndex> find(std::string_view id) const;
  DeviceIndex index_of(std::string_view id) const;
  const std::vector<DeviceIndex>& helpers() const { return helpers_; }
  std::vector<DeviceIndex> sources() const;

 private:
  std::vector<DeviceSpec> devices_;
  std::vector<DeviceIndex> helpers_;
};

/// Fraction of the fleet per device class.
using FleetMix = std::map<DeviceClass, double>;

/// Helper fleet of `count` devices with ids h000, h001, ... Classes are dealt with
/// a smooth weighted round robin, so a fleet of n devices is a prefix of one of n + 1.
Fleet load_fleet_preset(const FleetMix& mix, std::size_t count, const FleetParams& params = {});

/// Reads the `distpriv-fleet v1` CSV format.
Fleet read_fleet_csv(std::istream& in, const FleetParams& params = {});
Fleet load_fleet_file(const std::string& path, const FleetParams& params = {});
void write_fleet_csv(std::ostream& out, const Fleet& fleet);

enum class Resource { Memory, Compute, Bandwidth };
std::string_view to_string(Resource r);

struct Insufficient {
  Resource resource;
  DeviceIndex device;
};

struct Remaining {
  Bits mem = 0;
  Mults comp = 0;
  Bits bw = 0;
  bool operator==(const Remaining&) const = default;
};

/// Remaining per-period budget of every device.
class ResourceLedger {
 public:
  ResourceLedger() = default;
  explicit ResourceLedger(const Fleet& fleet);

  const Remaining& remaining(DeviceIndex i) const { return remaining_.at(static_cast<std::size_t>(i)); }
  const Remaining& capacity(DeviceIndex i) const { return capacity_.at(static_cast<std::size_t>(i)); }
  Remaining used(DeviceIndex i) const;
  std::size_t size() const { return remaining_.size(); }

  /// Deducts memory and compute from `device` and bandwidth from each sender, or
  /// changes nothing and reports the first shortfall.
  std::optional<Insufficient> reserve(DeviceIndex device, Bits mem, Mults comp,
                                      std::span<const std::pair<DeviceIndex, Bits>> senders);

  bool operator==(const ResourceLedger&) const = default;

 private:
  std::vector<Remaining> capacity_;
  std::vector<Remaining> remaining_;
};

}  // namespace distpriv
