#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "distpriv/fleet.hpp"
#include "distpriv/placement.hpp"
#include "distpriv/privacy_policy.hpp"

namespace distpriv {

/// A fleet together with one batch of requests against it.
struct Instance {
  Fleet fleet;
  std::vector<Request> requests;
};

/// Policy for a CNN's dataset at a tolerance, from the given SSIM table.
std::shared_ptr<const PrivacyPolicy> policy_for(const CnnProfile& model, double tolerance,
                                                double epsilon = kDefaultEpsilon,
                                                const SsimTable& table = embedded_ssim_table());

struct RandomInstanceParams {
  std::size_t max_devices = 4;   // sources plus helpers
  std::size_t max_layers = 6;
  std::size_t max_segments = 8;  // per layer
  std::size_t max_requests = 2;
};

/// Small synthetic instance with random CNNs, capacities and caps. Same seed, same instance.
Instance random_instance(std::uint64_t seed, const RandomInstanceParams& params = {});

/// JSON instance files, schema `distpriv-instance/1`.
Instance read_instance_json(std::istream& in, const SsimTable& table = embedded_ssim_table());
Instance load_instance_file(const std::string& path, const SsimTable& table = embedded_ssim_table());
void write_instance_json(std::ostream& out, const Instance& instance);

}  // namespace distpriv
