#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "distpriv/fleet.hpp"
#include "distpriv/instance.hpp"
#include "distpriv/model_catalog.hpp"
#include "distpriv/placement.hpp"
#include "distpriv/privacy_policy.hpp"

namespace fixture {

using namespace distpriv;

inline constexpr Bits kAmple = 1ull << 60;

inline DeviceSpec device(std::string id, double speed, double rate, DeviceKind kind = DeviceKind::Helper,
                         Bits mem = kAmple, Mults comp = kAmple, Bits bw = kAmple) {
  DeviceSpec d;
  d.id = std::move(id);
  d.kind = kind;
  d.speed = speed;
  d.rate = rate;
  d.mem_cap = mem;
  d.comp_cap = comp;
  d.bw_cap = bw;
  if (kind == DeviceKind::Source) d.cnn = "test";
  return d;
}

inline DeviceSpec source(std::string id, double speed, double rate) {
  return device(std::move(id), speed, rate, DeviceKind::Source);
}

inline LayerSpec conv(unsigned s, unsigned maps, unsigned o, std::uint64_t w = 1) {
  return LayerSpec{"conv", LayerKind::Conv, s, maps, o, 0, w};
}
inline LayerSpec relu(unsigned maps, unsigned o) { return LayerSpec{"relu", LayerKind::Activation, 0, maps, o, 0, 0}; }
inline LayerSpec pool(unsigned maps, unsigned o) { return LayerSpec{"pool", LayerKind::MaxPool, 0, maps, o, 0, 0}; }
inline LayerSpec fc(unsigned n, std::uint64_t w = 1) {
  return LayerSpec{"fc", LayerKind::FullyConnected, 0, 1, 1, n, w};
}

inline CnnSpec cnn(unsigned channels, unsigned spatial, std::vector<LayerSpec> layers, std::string dataset = "TEST") {
  CnnSpec s;
  s.name = "tiny";
  s.dataset = std::move(dataset);
  s.input_channels = channels;
  s.input_spatial = spatial;
  s.layers = std::move(layers);
  return s;
}

inline Request request(const CnnSpec& spec, DeviceIndex src, std::shared_ptr<const PrivacyPolicy> policy = nullptr,
                       unsigned word_bits = 1, std::size_t id = 1) {
  Request r;
  r.id = id;
  r.source = src;
  r.model = std::make_shared<const CnnProfile>(make_profile(spec, word_bits));
  r.policy = policy ? std::move(policy)
                    : std::make_shared<const PrivacyPolicy>(PrivacyPolicy::unconstrained(spec.depth()));
  return r;
}

inline std::shared_ptr<const PrivacyPolicy> caps(std::map<std::size_t, std::uint32_t> c, std::size_t sp,
                                                 std::size_t depth) {
  return std::make_shared<const PrivacyPolicy>(PrivacyPolicy::from_caps(std::move(c), sp, depth));
}

/// Every segment of every request on a uniformly drawn device.
inline Assignment random_assignment(std::span<const Request> reqs, const Fleet& fleet, std::mt19937_64& rng) {
  Assignment as;
  std::uniform_int_distribution<DeviceIndex> pick(0, static_cast<DeviceIndex>(fleet.size()) - 1);
  for (const auto& r : reqs) {
    as.emplace_back(r);
    for (std::size_t l = 1; l <= r.depth(); ++l) {
      for (auto& d : as.back().layers[l]) d = pick(rng);
    }
  }
  return as;
}

/// Pinned layers on the source, everything else drawn from the helpers.
inline Assignment random_plausible(std::span<const Request> reqs, const Fleet& fleet, std::mt19937_64& rng) {
  Assignment as;
  const auto& helpers = fleet.helpers();
  std::uniform_int_distribution<std::size_t> pick(0, helpers.size() - 1);
  for (const auto& r : reqs) {
    as.emplace_back(r);
    for (std::size_t l = 1; l <= r.depth(); ++l) {
      const bool block = r.is_first_fc(l);
      const DeviceIndex shared = helpers[pick(rng)];
      for (auto& d : as.back().layers[l]) {
        if (r.pinned_to_source(l)) d = r.source;
        else d = block ? shared : helpers[pick(rng)];
      }
    }
  }
  return as;
}

}  // namespace fixture
