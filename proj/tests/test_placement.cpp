#include <gtest/gtest.h>

#include <random>
#include <set>
#include <sstream>
#include <string>

#include "distpriv/greedy_scheduler.hpp"
#include "distpriv/instance.hpp"
#include "distpriv/placement.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace distpriv;
using namespace fixture;

namespace {

std::set<std::string> tags_of(const ValidationReport& rep) {
  std::set<std::string> out;
  for (const auto& v : rep.violations) out.insert(std::string(tag(v.constraint)));
  return out;
}

Fleet scaled(const Fleet& f, double speed_k, double rate_k) {
  std::vector<DeviceSpec> devs = f.devices();
  for (auto& d : devs) {
    d.speed *= speed_k;
    d.rate *= rate_k;
  }
  return Fleet(devs);
}

// Three devices, four layers, word length 1; every term below is worked out by hand.
struct Golden {
  Fleet fleet{{source("src", 100, 10), device("a", 50, 20), device("b", 200, 5)}};
  CnnSpec spec = cnn(2, 2, {conv(1, 2, 2), relu(2, 2), conv(1, 1, 2), fc(3)});
  Request req = request(spec, 0);
  RequestPlacement pl{req};
  Golden() {
    pl.layers[1] = {0, 0};
    pl.layers[2] = {1, 2};
    pl.layers[3] = {2, 2};
    pl.layers[4] = {0};
  }
};

}  // namespace

TEST(Placement, VolumeIsZeroOnSameDevice) {
  Golden g;
  for (std::size_t l = 0; l < 4; ++l) {
    for (DeviceIndex d = 0; d < 3; ++d) EXPECT_EQ(output_volume(g.req, g.pl, l, d, d), 0u);
  }
}

TEST(Placement, ConvVolumeExample) {
  // Conv layer with o=4; sender holds one of its maps, receiver computes 3 of 5 next segments.
  Fleet f{{source("s", 1, 1), device("i", 1, 1), device("j", 1, 1)}};
  const auto spec = cnn(1, 4, {conv(1, 5, 4), conv(1, 2, 4), conv(1, 2, 4), fc(2)});
  const auto req = request(spec, 0, nullptr, 4);
  RequestPlacement pl(req);
  pl.layers[1] = {0};
  pl.layers[2] = {1, 2, 1, 2, 1};
  pl.layers[3] = {1, 1};
  pl.layers[4] = {0, 0};
  EXPECT_EQ(output_volume(req, pl, 1, 0, 1), 192u);
  EXPECT_EQ(output_volume(req, pl, 1, 0, 2), 128u);
  EXPECT_EQ(output_volume(req, pl, 1, 1, 2), 0u);  // device 1 holds no map of layer 1
}

TEST(Placement, ElementwiseVolumeExample) {
  // Activation layer with o=4: i holds maps {2,5}, j computes maps {5,7} of the next layer.
  Fleet f{{source("s", 1, 1), device("i", 1, 1), device("j", 1, 1), device("k", 1, 1)}};
  const auto spec = cnn(1, 4, {conv(1, 8, 4), relu(8, 4), conv(1, 1, 4), fc(2)});
  const auto req = request(spec, 0, nullptr, 4);
  RequestPlacement pl(req);
  pl.layers[1] = {0};
  pl.layers[2] = {3, 1, 3, 3, 1, 3, 3, 3};
  pl.layers[3] = {3, 3, 3, 3, 2, 3, 2, 3};
  pl.layers[4] = {0};
  EXPECT_EQ(output_volume(req, pl, 2, 1, 2), 64u);
  EXPECT_EQ(output_volume(req, pl, 2, 3, 2), 64u);
  EXPECT_EQ(output_volume(req, pl, 2, 1, 3), 64u);
}

TEST(Placement, ComputeLatencyExamples) {
  Fleet f{{source("s", 1, 1), device("slow", 40, 1), device("fast", 800, 1)}};
  const auto spec = cnn(1, 4, {conv(1, 2, 4), conv(3, 2, 4), fc(2)});
  const auto req = request(spec, 0);
  ASSERT_EQ(req.model->at(2).segment_compute, 288u);
  RequestPlacement pl(req);
  pl.layers[1] = {0};
  pl.layers[2] = {1, 2};
  EXPECT_DOUBLE_EQ(compute_latency(req, pl, 2, 1, f), 7.2);
  EXPECT_DOUBLE_EQ(compute_latency(req, pl, 2, 0, f), 0.0);
  pl.layers[2] = {2, 2};
  EXPECT_DOUBLE_EQ(compute_latency(req, pl, 2, 2, f), 0.72);
}

TEST(Placement, ColocatedLayerIsPureCompute) {
  Fleet f{{source("s", 100, 1), device("h", 10, 1)}};
  const auto spec = cnn(1, 2, {conv(1, 2, 2), conv(1, 2, 2), fc(2)});
  const auto req = request(spec, 0);
  RequestPlacement pl(req);
  pl.layers[1] = {0};
  pl.layers[2] = {0, 0};
  pl.layers[3] = {0, 0};
  // Layer 2 costs 1*2*4 = 8 per segment, two segments at 100/s.
  EXPECT_DOUBLE_EQ(layer_latency(req, pl, 2, f), 0.16);
  for (std::size_t l = 0; l < 3; ++l) {
    for (DeviceIndex i = 0; i < 2; ++i) {
      for (DeviceIndex j = 0; j < 2; ++j) EXPECT_EQ(output_volume(req, pl, l, i, j), 0u);
    }
  }
  // Whole request on the source: sum of layer costs over its speed.
  const double expected = (8.0 + 16.0 + 2 * 4 * 2) / 100.0;
  const std::vector<Request> reqs{req};
  EXPECT_DOUBLE_EQ(total_latency({pl}, reqs, f), expected);
}

TEST(Placement, LayerLatencyTakesTheSlowestReceiver) {
  // Transfers are negligible at this rate; compute takes 1.0 s on one helper and 1.5 s on the other.
  Fleet f{{source("s", 1, 1e18), device("a", 288, 1e18), device("b", 192, 1e18)}};
  const auto spec = cnn(1, 4, {conv(1, 2, 4), conv(3, 2, 4), fc(2)});
  const auto req = request(spec, 0);
  RequestPlacement pl(req);
  pl.layers[1] = {0};
  pl.layers[2] = {1, 2};
  EXPECT_NEAR(layer_latency(req, pl, 2, f), 1.5, 1e-12);
}

TEST(Placement, GoldenThreeDeviceEvaluation) {
  Golden g;
  // Layer 1: both segments on the source, 2 * 8 / 100.
  EXPECT_DOUBLE_EQ(layer_latency(g.req, g.pl, 1, g.fleet), 0.16);
  // Layer 2: the source broadcasts a 4-bit map to each helper at 10 b/s; relu costs nothing.
  EXPECT_DOUBLE_EQ(layer_latency(g.req, g.pl, 2, g.fleet), 0.4);
  // Layer 3: map 1 moves from a to b at 20 b/s (0.2) plus b's compute 2 * 4 / 200 (0.04).
  EXPECT_DOUBLE_EQ(layer_latency(g.req, g.pl, 3, g.fleet), 0.24);
  // Layer 4: b sends 4 bits to the source at 5 b/s (0.8) plus 12 / 100 on the source.
  EXPECT_DOUBLE_EQ(layer_latency(g.req, g.pl, 4, g.fleet), 0.92);

  const std::vector<Request> reqs{g.req};
  const auto plan = evaluate({g.pl}, reqs, g.fleet);
  EXPECT_NEAR(plan.objective, 1.72, 1e-12);
  EXPECT_EQ(plan.shared_bits, 16u);
  EXPECT_EQ(request_shared_bits(g.req, g.pl), 16u);
  EXPECT_EQ(plan.volumes.size(), 4u);
  EXPECT_NEAR(oracle::objective(reqs, plan.assignment, g.fleet), 1.72, 1e-12);
  EXPECT_TRUE(validate(plan.assignment, g.fleet, reqs).valid());
}

TEST(Placement, MultiRequestObjectiveIsTheSumOfGoldens) {
  Golden g;
  auto second = g.req;
  second.id = 2;
  RequestPlacement local(second);
  local.layers[1] = {0, 0};
  local.layers[2] = {2, 2};
  local.layers[3] = {2, 2};
  local.layers[4] = {0};
  // Second request: 0.16, then two 4-bit maps at 10 b/s to b (0.8), then 0.04, then 0.92.
  const std::vector<Request> reqs{g.req, second};
  const std::vector<Request> only_second{second};
  EXPECT_NEAR(request_latency(second, local, g.fleet), 0.16 + 0.8 + 0.04 + 0.92, 1e-12);
  EXPECT_NEAR(total_latency({g.pl, local}, reqs, g.fleet), 1.72 + 1.92, 1e-12);
  EXPECT_NEAR(total_latency({g.pl, local}, reqs, g.fleet),
              total_latency({g.pl}, std::span(reqs).first(1), g.fleet) +
                  total_latency({local}, only_second, g.fleet),
              1e-12);
  EXPECT_DOUBLE_EQ(total_latency({}, std::span<const Request>{}, g.fleet), 0.0);
}

TEST(Placement, ScalingSpeedsAndRates) {
  for (std::uint64_t seed = 1; seed <= 60; ++seed) {
    const auto inst = random_instance(seed);
    std::mt19937_64 rng(seed);
    const auto as = random_plausible(inst.requests, inst.fleet, rng);
    for (double k : {2.0, 0.25, 3.0}) {
      const auto faster = scaled(inst.fleet, k, 1.0);
      const auto wider = scaled(inst.fleet, 1.0, k);
      const auto both = scaled(inst.fleet, k, k);
      for (std::size_t r = 0; r < inst.requests.size(); ++r) {
        const auto& req = inst.requests[r];
        for (std::size_t l = 1; l <= req.depth(); ++l) {
          for (DeviceIndex j = 0; j < static_cast<DeviceIndex>(inst.fleet.size()); ++j) {
            const double base = compute_latency(req, as[r], l, j, inst.fleet);
            EXPECT_NEAR(compute_latency(req, as[r], l, j, faster), base / k, 1e-12 * (1 + base));
            EXPECT_DOUBLE_EQ(compute_latency(req, as[r], l, j, wider), base);
          }
          const double lat = layer_latency(req, as[r], l, inst.fleet);
          EXPECT_NEAR(layer_latency(req, as[r], l, both), lat / k, 1e-9 * (1 + lat));
          // Only the transmission part shrinks, so the result lies between lat / k and lat.
          const double lo = std::min(lat, lat / k), hi = std::max(lat, lat / k);
          const double w = layer_latency(req, as[r], l, wider);
          EXPECT_GE(w, lo - 1e-9 * (1 + lat));
          EXPECT_LE(w, hi + 1e-9 * (1 + lat));
        }
      }
    }
  }
}

TEST(Placement, TransmissionScalesInverselyWithRate) {
  // Zero-cost layer: the latency is pure transmission.
  Golden g;
  const auto wider = scaled(g.fleet, 1.0, 4.0);
  EXPECT_DOUBLE_EQ(layer_latency(g.req, g.pl, 2, wider), 0.1);
  EXPECT_NEAR(layer_latency(g.req, g.pl, 3, wider), 0.09, 1e-12);
}

TEST(Placement, ObjectiveMatchesLiteralOracle) {
  for (std::uint64_t seed = 1; seed <= 300; ++seed) {
    const auto inst = random_instance(seed);
    std::mt19937_64 rng(seed * 7);
    const auto as = seed % 2 ? random_assignment(inst.requests, inst.fleet, rng)
                             : random_plausible(inst.requests, inst.fleet, rng);
    const auto plan = evaluate(as, inst.requests, inst.fleet);
    const double ref = oracle::objective(inst.requests, as, inst.fleet);
    EXPECT_NEAR(plan.objective, ref, 1e-9 * (1 + ref)) << "seed " << seed;
    Bits bits = 0;
    for (std::size_t r = 0; r < inst.requests.size(); ++r) {
      const auto a = oracle::to_binary(inst.requests[r], as[r], inst.fleet.size());
      for (std::size_t l = 0; l < inst.requests[r].depth(); ++l) {
        for (std::size_t i = 0; i < inst.fleet.size(); ++i) {
          for (std::size_t j = 0; j < inst.fleet.size(); ++j) bits += oracle::volume(inst.requests[r], a, l, i, j);
        }
      }
    }
    EXPECT_EQ(plan.shared_bits, bits) << "seed " << seed;
  }
}

TEST(Placement, ValidatorMatchesLiteralRecheck) {
  std::size_t valid = 0, checked = 0;
  for (std::uint64_t seed = 1; seed <= 400; ++seed) {
    const auto inst = random_instance(seed);
    std::mt19937_64 rng(seed * 31);
    std::vector<Assignment> plans;
    plans.push_back(random_assignment(inst.requests, inst.fleet, rng));
    plans.push_back(random_plausible(inst.requests, inst.fleet, rng));
    const auto batch = run_batch(inst.requests, inst.fleet, GreedyConfig{});
    const auto srv = served(inst.requests, batch);
    if (srv.requests.size() == inst.requests.size()) {
      plans.push_back(srv.assignment);
      // One reassigned segment next to a valid plan.
      auto nudged = srv.assignment;
      auto& layer = nudged[rng() % nudged.size()].layers;
      const auto l = 1 + rng() % (layer.size() - 1);
      layer[l][rng() % layer[l].size()] = static_cast<DeviceIndex>(rng() % inst.fleet.size());
      plans.push_back(nudged);
      auto holes = srv.assignment;
      holes[0].layers[1][0] = kUnassigned;
      plans.push_back(holes);
    }
    for (const auto& as : plans) {
      const auto got = tags_of(validate(as, inst.fleet, inst.requests));
      const auto want = oracle::violations(inst.requests, as, inst.fleet);
      EXPECT_EQ(got, want) << "seed " << seed;
      valid += want.empty();
      ++checked;
    }
  }
  EXPECT_GT(valid, 50u);
  EXPECT_GT(checked - valid, 50u);
}

TEST(Validate, AllOnSourceTinyCnnIsValid) {
  Fleet f{{source("s", 10, 10), device("h", 10, 10)}};
  const auto spec = cnn(2, 3, {conv(3, 4, 3, 40), fc(5, 45)});
  const std::vector<Request> reqs{request(spec, 0, nullptr, 4)};
  RequestPlacement pl(reqs[0]);
  pl.layers[1] = {0, 0};
  pl.layers[2] = {0, 0, 0, 0};
  EXPECT_TRUE(validate({pl}, f, reqs).valid());
}

TEST(Validate, CapAndPinningViolations) {
  const auto cifar = load_preset("CifarCnn");
  Fleet fleet = load_fleet_preset({{DeviceClass::LgNexus, 1.0}}, 8);
  auto cam = make_device("cam", DeviceClass::RPi3, DeviceKind::Source);
  cam.cnn = cifar.name;
  const auto src = fleet.add(cam);
  Request req;
  req.source = src;
  req.model = std::make_shared<const CnnProfile>(make_profile(cifar));
  req.policy = policy_for(*req.model, 0.4);
  const std::vector<Request> reqs{req};
  const auto batch = run_batch(reqs, fleet, GreedyConfig{});
  ASSERT_FALSE(batch.outcomes[0].rejected);
  Assignment as{batch.outcomes[0].placement};
  ASSERT_TRUE(validate(as, fleet, reqs).valid());

  // Layer 3 takes the 64 maps of relu1_1 under a cap of 8; give one helper 16 of them.
  auto over = as;
  for (std::size_t p = 0; p < 16; ++p) over[0].layers[3][p] = 0;
  auto rep = validate(over, fleet, reqs);
  EXPECT_TRUE(rep.has(Constraint::Privacy));
  EXPECT_TRUE(oracle::violations(reqs, over, fleet).count("7e"));

  auto helper_first = as;
  helper_first[0].layers[1][0] = 0;
  rep = validate(helper_first, fleet, reqs);
  EXPECT_TRUE(rep.has(Constraint::SourcePinning));
  EXPECT_EQ(tags_of(rep), (std::set<std::string>{"7g"}));

  auto source_middle = as;
  source_middle[0].layers[4][0] = src;
  EXPECT_TRUE(validate(source_middle, fleet, reqs).has(Constraint::SourcePinning));

  auto split_fc = as;
  split_fc[0].layers[11][0] = 0;
  split_fc[0].layers[11][1] = 1;
  rep = validate(split_fc, fleet, reqs);
  EXPECT_TRUE(rep.has(Constraint::FirstFc));
}

TEST(Validate, BudgetViolations) {
  Fleet f{{source("s", 10, 10), device("h", 10, 10, DeviceKind::Helper, 3, 100, 4)}};
  const auto spec = cnn(1, 2, {conv(1, 2, 2, 1), relu(2, 2), fc(1, 1)});
  const std::vector<Request> reqs{request(spec, 0)};
  RequestPlacement pl(reqs[0]);
  pl.layers[1] = {0};
  pl.layers[2] = {1, 1};
  pl.layers[3] = {0, 0};
  // relu has W=0, so memory holds; h forwards two 4-element maps (8 bits > 4).
  auto rep = validate({pl}, f, reqs);
  EXPECT_EQ(tags_of(rep), (std::set<std::string>{"7d"}));
  EXPECT_EQ(tags_of(validate({}, f, reqs)), (std::set<std::string>{"7e'"}));
}

TEST(Placement, PlanCsvRoundTrip) {
  Golden g;
  const std::vector<Request> reqs{g.req};
  std::stringstream buf;
  write_plan_csv(buf, {g.pl}, reqs, g.fleet);
  EXPECT_NE(buf.str().find("1,2,2,b"), std::string::npos);
  const auto back = read_plan_csv(buf, reqs, g.fleet);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0], g.pl);
  std::istringstream bad("# distpriv-plan v1\n1,9,1,a\n");
  EXPECT_THROW(read_plan_csv(bad, reqs, g.fleet), std::runtime_error);
}
