#include "distpriv/fleet.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <stdexcept>

#include "distpriv/text_io.hpp"

namespace distpriv {

namespace {

constexpr std::uint64_t kMiB = 1024ull * 1024ull;
constexpr std::uint64_t kGiB = 1024ull * kMiB;

const ClassProfile kProfiles[] = {
    {DeviceClass::RPi3, "RPi3", 560, 1 * kGiB, 72.2e6},
    {DeviceClass::LgNexus, "LgNexus", 800, 2 * kGiB, 72.2e6},
    {DeviceClass::Stm32H7, "STM32H7", 40, 1 * kMiB, 7.2e6},
};

Remaining capacity_of(const DeviceSpec& d) { return {d.mem_cap, d.comp_cap, d.bw_cap}; }

}  // namespace

std::string_view to_string(DeviceKind kind) { return kind == DeviceKind::Source ? "source" : "helper"; }

std::string_view to_string(DeviceClass cls) {
  if (cls == DeviceClass::Custom) return "custom";
  return class_profile(cls).name;
}

DeviceClass parse_device_class(std::string_view text) {
  for (const auto& p : kProfiles) {
    if (p.name == text) return p.cls;
  }
  if (text == "custom" || text.empty()) return DeviceClass::Custom;
  throw std::invalid_argument("unknown device class '" + std::string(text) + "' (RPi3, LgNexus, STM32H7, custom)");
}

std::string_view to_string(Resource r) {
  switch (r) {
    case Resource::Memory: return "memory";
    case Resource::Compute: return "compute";
    case Resource::Bandwidth: return "bandwidth";
  }
  return "?";
}

const ClassProfile& class_profile(DeviceClass cls) {
  for (const auto& p : kProfiles) {
    if (p.cls == cls) return p;
  }
  throw std::invalid_argument("custom devices have no class profile");
}

DeviceSpec make_device(std::string id, DeviceClass cls, DeviceKind kind, const FleetParams& params) {
  const auto& prof = class_profile(cls);
  DeviceSpec d;
  d.id = std::move(id);
  d.kind = kind;
  d.cls = cls;
  d.speed = prof.rated_speed * params.speed_scale;
  d.rate = prof.rate_bps;
  d.mem_cap = prof.ram_bytes * 8;
  d.comp_cap = static_cast<Mults>(std::floor(d.speed * params.period_s));
  d.bw_cap = static_cast<Bits>(std::floor(d.rate * params.period_s));
  return d;
}

Fleet::Fleet(std::vector<DeviceSpec> devices) {
  for (auto& d : devices) add(std::move(d));
}

DeviceIndex Fleet::add(DeviceSpec device) {
  if (find(device.id)) throw std::invalid_argument("duplicate device id '" + device.id + "'");
  if (device.mem_cap == 0 || device.comp_cap == 0 || device.bw_cap == 0 || !(device.rate > 0) ||
      !(device.speed > 0)) {
    throw std::invalid_argument("device '" + device.id + "' needs strictly positive capacities");
  }
  if (device.is_source() && device.cnn.empty()) {
    throw std::invalid_argument("source '" + device.id + "' must be bound to a CNN");
  }
  const auto idx = static_cast<DeviceIndex>(devices_.size());
  if (!device.is_source()) helpers_.push_back(idx);
  devices_.push_back(std::move(device));
  return idx;
}

std::optional<DeviceIndex> Fleet::find(std::string_view id) const {
  for (std::size_t i = 0; i < devices_.size(); ++i) {
    if (devices_[i].id == id) return static_cast<DeviceIndex>(i);
  }
  return std::nullopt;
}

DeviceIndex Fleet::index_of(std::string_view id) const {
  if (auto i = find(id)) return *i;
  throw std::invalid_argument("unknown device '" + std::string(id) + "'");
}

std::vector<DeviceIndex> Fleet::sources() const {
  std::vector<DeviceIndex> out;
  for (std::size_t i = 0; i < devices_.size(); ++i) {
    if (devices_[i].is_source()) out.push_back(static_cast<DeviceIndex>(i));
  }
  return out;
}

Fleet load_fleet_preset(const FleetMix& mix, std::size_t count, const FleetParams& params) {
  double total = 0;
  for (const auto& [cls, frac] : mix) {
    if (cls == DeviceClass::Custom) throw std::invalid_argument("fleet mix cannot use custom devices");
    if (!(frac >= 0.0)) throw std::invalid_argument("fleet mix fractions must be non-negative");
    total += frac;
  }
  if (mix.empty() || std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("fleet mix fractions must sum to 1");

  Fleet fleet;
  std::map<DeviceClass, double> credit;
  for (std::size_t i = 0; i < count; ++i) {
    DeviceClass pick = mix.begin()->first;
    double best = -1e300;
    for (const auto& [cls, frac] : mix) {
      credit[cls] += frac;
      if (credit[cls] > best + 1e-12) {
        best = credit[cls];
        pick = cls;
      }
    }
    credit[pick] -= 1.0;
    char id[32];
    std::snprintf(id, sizeof id, "h%03zu", i);
    fleet.add(make_device(id, pick, DeviceKind::Helper, params));
  }
  return fleet;
}

Fleet read_fleet_csv(std::istream& in, const FleetParams& params) {
  const auto rows = text::read_rows(in, "distpriv-fleet v1");
  Fleet fleet;
  for (const auto& r : rows) {
    if (!r.empty() && r[0] == "id") continue;
    if (r.size() != 9) {
      throw std::runtime_error("fleet rows need 9 columns: id,kind,class,mem_bits,comp_per_period,bw_per_period,rate_bps,speed_mps,cnn");
    }
    DeviceKind kind;
    if (r[1] == "source") kind = DeviceKind::Source;
    else if (r[1] == "helper") kind = DeviceKind::Helper;
    else throw std::runtime_error("device kind must be 'source' or 'helper', got '" + r[1] + "'");
    const auto cls = parse_device_class(r[2]);
    DeviceSpec d;
    if (cls != DeviceClass::Custom) {
      d = make_device(r[0], cls, kind, params);
    } else {
      d.id = r[0];
      d.kind = kind;
    }
    if (!r[3].empty()) d.mem_cap = text::to_u64(r[3], "mem_bits");
    if (!r[4].empty()) d.comp_cap = text::to_u64(r[4], "comp_per_period");
    if (!r[5].empty()) d.bw_cap = text::to_u64(r[5], "bw_per_period");
    if (!r[6].empty()) d.rate = text::to_double(r[6], "rate_bps");
    if (!r[7].empty()) d.speed = text::to_double(r[7], "speed_mps");
    d.cnn = r[8];
    fleet.add(std::move(d));
  }
  return fleet;
}

Fleet load_fleet_file(const std::string& path, const FleetParams& params) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open fleet file '" + path + "'");
  return read_fleet_csv(in, params);
}

void write_fleet_csv(std::ostream& out, const Fleet& fleet) {
  out << "# distpriv-fleet v1\n"
      << "id,kind,class,mem_bits,comp_per_period,bw_per_period,rate_bps,speed_mps,cnn\n";
  for (const auto& d : fleet.devices()) {
    out << d.id << ',' << to_string(d.kind) << ',' << to_string(d.cls) << ',' << d.mem_cap << ',' << d.comp_cap
        << ',' << d.bw_cap << ',' << text::fixed(d.rate, 1) << ',' << text::fixed(d.speed, 1) << ',' << d.cnn
        << "\n";
  }
}

ResourceLedger::ResourceLedger(const Fleet& fleet) {
  for (const auto& d : fleet.devices()) capacity_.push_back(capacity_of(d));
  remaining_ = capacity_;
}

Remaining ResourceLedger::used(DeviceIndex i) const {
  const auto& c = capacity(i);
  const auto& r = remaining(i);
  return {c.mem - r.mem, c.comp - r.comp, c.bw - r.bw};
}

std::optional<Insufficient> ResourceLedger::reserve(DeviceIndex device, Bits mem, Mults comp,
                                                    std::span<const std::pair<DeviceIndex, Bits>> senders) {
  const auto& here = remaining(device);
  if (mem > here.mem) return Insufficient{Resource::Memory, device};
  if (comp > here.comp) return Insufficient{Resource::Compute, device};

  // Aggregate per sender first: a sender may appear more than once.
  std::vector<std::pair<DeviceIndex, Bits>> totals;
  for (const auto& [sender, bits] : senders) {
    auto it = std::find_if(totals.begin(), totals.end(), [&](const auto& t) { return t.first == sender; });
    if (it == totals.end()) totals.emplace_back(sender, bits);
    else it->second += bits;
  }
  for (const auto& [sender, bits] : totals) {
    if (bits > remaining(sender).bw) return Insufficient{Resource::Bandwidth, sender};
  }

  auto& r = remaining_.at(static_cast<std::size_t>(device));
  r.mem -= mem;
  r.comp -= comp;
  for (const auto& [sender, bits] : totals) remaining_.at(static_cast<std::size_t>(sender)).bw -= bits;
  return std::nullopt;
}

}  // namespace distpriv
