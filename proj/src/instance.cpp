#include "distpriv/instance.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <stdexcept>

#include <json.hpp>

namespace distpriv {

using nlohmann::json;

std::shared_ptr<const PrivacyPolicy> policy_for(const CnnProfile& model, double tolerance, double epsilon,
                                                const SsimTable& table) {
  if (tolerance >= 1.0 && !table.has(model.spec.dataset)) {
    return std::make_shared<const PrivacyPolicy>(PrivacyPolicy::unconstrained(model.depth()));
  }
  const auto curves = table.curves_for(model.spec.dataset);
  return std::make_shared<const PrivacyPolicy>(PrivacyPolicy::derive(curves, model.depth(), tolerance, epsilon));
}

namespace {

class Draw {
 public:
  explicit Draw(std::uint64_t seed) : rng_(seed) {}
  std::uint64_t integer(std::uint64_t lo, std::uint64_t hi) { return lo + rng_() % (hi - lo + 1); }
  double unit() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
  double real(double lo, double hi) { return lo + (hi - lo) * unit(); }
  bool chance(double p) { return unit() < p; }

 private:
  std::mt19937_64 rng_;
};

CnnSpec random_cnn(Draw& draw, const RandomInstanceParams& params, std::size_t index) {
  CnnSpec cnn;
  cnn.name = "rand" + std::to_string(index);
  cnn.dataset = "synthetic";
  const auto max_maps = static_cast<std::uint32_t>(std::max<std::size_t>(1, params.max_segments));
  cnn.input_channels = static_cast<std::uint32_t>(draw.integer(1, std::min<std::uint64_t>(3, max_maps)));
  std::uint32_t spatial = static_cast<std::uint32_t>(draw.integer(2, 6));
  cnn.input_spatial = spatial;
  const auto depth = draw.integer(3, std::max<std::uint64_t>(3, params.max_layers));
  const auto fcs = draw.integer(1, std::min<std::uint64_t>(2, depth - 1));
  std::uint32_t maps = cnn.input_channels;
  for (std::size_t l = 1; l <= depth - fcs; ++l) {
    LayerSpec ly;
    const auto pick = draw.unit();
    if (l == 1 || pick < 0.5) {
      ly.kind = LayerKind::Conv;
      ly.filter_size = draw.chance(0.5) ? 1 : 3;
      ly.out_maps = static_cast<std::uint32_t>(draw.integer(1, max_maps));
      ly.weights_per_segment = std::uint64_t{ly.filter_size} * ly.filter_size * ly.out_maps + ly.out_maps;
    } else if (pick < 0.75 || spatial < 2) {
      ly.kind = LayerKind::Activation;
      ly.out_maps = maps;
    } else {
      ly.kind = LayerKind::MaxPool;
      ly.out_maps = maps;
      spatial /= 2;
    }
    ly.out_spatial = spatial;
    ly.label = std::string(to_string(ly.kind)) + std::to_string(l);
    maps = ly.out_maps;
    cnn.layers.push_back(std::move(ly));
  }
  std::uint64_t inputs = std::uint64_t{spatial} * spatial;
  for (std::size_t l = depth - fcs + 1; l <= depth; ++l) {
    LayerSpec ly;
    ly.kind = LayerKind::FullyConnected;
    ly.label = "fc" + std::to_string(l);
    ly.out_maps = 1;
    ly.out_spatial = 1;
    ly.neurons = static_cast<std::uint32_t>(draw.integer(2, 10));
    ly.weights_per_segment = inputs * ly.neurons + ly.neurons;
    inputs = ly.neurons;
    cnn.layers.push_back(std::move(ly));
  }
  check_cnn(cnn);
  return cnn;
}

std::shared_ptr<const PrivacyPolicy> random_policy(Draw& draw, const CnnProfile& model, std::size_t helpers) {
  const auto depth = model.depth();
  const auto sp = static_cast<std::size_t>(draw.integer(1, depth + 1));
  std::map<std::size_t, std::uint32_t> caps;
  for (std::size_t l = 1; l < sp; ++l) {
    const auto segs = model.at(l).segments;
    const auto spread = static_cast<std::uint32_t>((segs + helpers - 1) / helpers);
    // Mostly caps a fleet can honor, sometimes tighter ones that force infeasibility.
    const auto lo = draw.chance(0.85) ? spread : 1u;
    caps[l] = static_cast<std::uint32_t>(draw.integer(lo, std::max(lo, segs)));
  }
  return std::make_shared<const PrivacyPolicy>(PrivacyPolicy::from_caps(caps, sp, depth));
}

}  // namespace

Instance random_instance(std::uint64_t seed, const RandomInstanceParams& params) {
  if (params.max_devices < 2 || params.max_requests < 1 || params.max_layers < 3 || params.max_segments < 1) {
    throw std::invalid_argument("random instances need >= 2 devices, >= 3 layers, >= 1 segment and request");
  }
  Draw draw(seed);
  const auto devices = draw.integer(2, params.max_devices);
  const auto n_requests = draw.integer(1, params.max_requests);
  const auto n_sources = std::min<std::uint64_t>(n_requests, devices >= 3 && draw.chance(0.5) ? 2 : 1);
  const auto helpers = devices - n_sources;

  std::vector<std::shared_ptr<const CnnProfile>> models;
  for (std::size_t s = 0; s < n_sources; ++s) {
    models.push_back(std::make_shared<const CnnProfile>(make_profile(random_cnn(draw, params, s))));
  }

  // Capacities are drawn relative to the work so that some instances bind and some do not.
  Bits mem_need = 0;
  Mults comp_need = 0;
  Bits traffic = 0;
  for (std::size_t r = 0; r < n_requests; ++r) {
    const auto& m = *models[r % n_sources];
    for (std::size_t l = 1; l <= m.depth(); ++l) {
      mem_need += m.at(l).segment_memory * m.at(l).segments;
      comp_need += m.at(l).segment_compute * m.at(l).segments;
      traffic += m.at(l - 1).map_elements * m.word_bits * m.at(l).segments;
    }
  }
  const auto share = [&](std::uint64_t need, double lo, double hi) {
    return std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(draw.real(lo, hi) * need)));
  };

  Instance inst;
  for (std::size_t d = 0; d < devices; ++d) {
    DeviceSpec dev;
    const bool source = d < n_sources;
    dev.id = (source ? "src" : "hlp") + std::to_string(source ? d : d - n_sources);
    dev.kind = source ? DeviceKind::Source : DeviceKind::Helper;
    dev.speed = static_cast<double>(draw.integer(std::uint64_t{1000}, std::uint64_t{8000}));
    dev.rate = static_cast<double>(draw.integer(std::uint64_t{200}, std::uint64_t{2000}));
    dev.mem_cap = share(mem_need, 0.4, 1.5);
    dev.comp_cap = share(comp_need, 0.4, 1.5);
    dev.bw_cap = share(traffic, 0.4, 1.5);
    if (source) dev.cnn = models[d]->spec.name;
    inst.fleet.add(std::move(dev));
  }
  for (std::size_t r = 0; r < n_requests; ++r) {
    Request req;
    req.id = r;
    req.source = static_cast<DeviceIndex>(r % n_sources);
    req.model = models[r % n_sources];
    req.policy = random_policy(draw, *req.model, std::max<std::uint64_t>(1, helpers));
    inst.requests.push_back(std::move(req));
  }
  return inst;
}

namespace {

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

CnnSpec cnn_from_json(const std::string& key, const json& j) {
  if (j.contains("preset")) return load_preset(j.at("preset").get<std::string>());
  CnnSpec cnn;
  cnn.name = get_or<std::string>(j, "name", key);
  cnn.dataset = j.at("dataset").get<std::string>();
  cnn.input_channels = j.at("input_channels").get<std::uint32_t>();
  cnn.input_spatial = j.at("input_spatial").get<std::uint32_t>();
  for (const auto& lj : j.at("layers")) {
    LayerSpec ly;
    ly.label = lj.at("label").get<std::string>();
    ly.kind = parse_layer_kind(lj.at("kind").get<std::string>());
    ly.filter_size = get_or<std::uint32_t>(lj, "filter", 0);
    const std::uint32_t fc_default = ly.kind == LayerKind::FullyConnected ? 1 : 0;
    ly.out_maps = get_or<std::uint32_t>(lj, "maps", fc_default);
    ly.out_spatial = get_or<std::uint32_t>(lj, "spatial", fc_default);
    ly.neurons = get_or<std::uint32_t>(lj, "neurons", 0);
    ly.weights_per_segment = get_or<std::uint64_t>(lj, "weights", 0);
    cnn.layers.push_back(std::move(ly));
  }
  check_cnn(cnn);
  return cnn;
}

json cnn_to_json(const CnnSpec& cnn) {
  json layers = json::array();
  for (const auto& ly : cnn.layers) {
    layers.push_back({{"label", ly.label},
                      {"kind", std::string(to_string(ly.kind))},
                      {"filter", ly.filter_size},
                      {"maps", ly.out_maps},
                      {"spatial", ly.out_spatial},
                      {"neurons", ly.neurons},
                      {"weights", ly.weights_per_segment}});
  }
  return {{"name", cnn.name},
          {"dataset", cnn.dataset},
          {"input_channels", cnn.input_channels},
          {"input_spatial", cnn.input_spatial},
          {"layers", layers}};
}

std::shared_ptr<const PrivacyPolicy> policy_from_json(const json& j, const CnnProfile& model,
                                                      const SsimTable& table) {
  if (j.contains("caps")) {
    std::map<std::size_t, std::uint32_t> caps;
    for (const auto& [k, v] : j.at("caps").items()) caps[std::stoul(k)] = v.get<std::uint32_t>();
    return std::make_shared<const PrivacyPolicy>(
        PrivacyPolicy::from_caps(caps, j.at("split_point").get<std::size_t>(), model.depth()));
  }
  const double tol = get_or<double>(j, "tolerance", 1.0);
  const double eps = get_or<double>(j, "epsilon", kDefaultEpsilon);
  return policy_for(model, tol, eps, table);
}

json policy_to_json(const PrivacyPolicy& policy) {
  json caps = json::object();
  for (std::size_t l = 1; l <= policy.depth(); ++l) {
    if (auto c = policy.cap_for_layer(l)) caps[std::to_string(l)] = *c;
  }
  return {{"caps", caps}, {"split_point", policy.split_point()}};
}

}  // namespace

Instance read_instance_json(std::istream& in, const SsimTable& table) {
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(std::string("instance file is not valid JSON: ") + e.what());
  }
  try {
    if (get_or<std::string>(doc, "schema", "") != "distpriv-instance/1") {
      throw std::runtime_error("instance file must declare schema distpriv-instance/1");
    }
    const auto word_bits = get_or<unsigned>(doc, "word_bits", kDefaultWordBits);
    FleetParams params;
    params.period_s = get_or<double>(doc, "period_s", params.period_s);
    params.speed_scale = get_or<double>(doc, "speed_scale", params.speed_scale);

    std::map<std::string, std::shared_ptr<const CnnProfile>> models;
    for (const auto& [key, mj] : doc.at("models").items()) {
      models[key] = std::make_shared<const CnnProfile>(make_profile(cnn_from_json(key, mj), word_bits));
    }
    Instance inst;
    for (const auto& dj : doc.at("devices")) {
      const auto kind_text = dj.at("kind").get<std::string>();
      if (kind_text != "source" && kind_text != "helper") {
        throw std::runtime_error("device kind must be 'source' or 'helper', got '" + kind_text + "'");
      }
      const auto kind = kind_text == "source" ? DeviceKind::Source : DeviceKind::Helper;
      const auto cls = parse_device_class(get_or<std::string>(dj, "class", "custom"));
      const auto id = dj.at("id").get<std::string>();
      DeviceSpec d;
      if (cls != DeviceClass::Custom) d = make_device(id, cls, kind, params);
      d.id = id;
      d.kind = kind;
      d.mem_cap = get_or<Bits>(dj, "mem_bits", d.mem_cap);
      d.comp_cap = get_or<Mults>(dj, "comp_per_period", d.comp_cap);
      d.bw_cap = get_or<Bits>(dj, "bw_per_period", d.bw_cap);
      d.rate = get_or<double>(dj, "rate_bps", d.rate);
      d.speed = get_or<double>(dj, "speed_mps", d.speed);
      d.cnn = get_or<std::string>(dj, "cnn", "");
      if (d.is_source() && !models.count(d.cnn)) {
        throw std::runtime_error("source '" + d.id + "' binds unknown model '" + d.cnn + "'");
      }
      inst.fleet.add(std::move(d));
    }
    std::size_t next_id = 0;
    for (const auto& rj : doc.at("requests")) {
      Request req;
      req.id = get_or<std::size_t>(rj, "id", next_id);
      next_id = req.id + 1;
      req.source = inst.fleet.index_of(rj.at("source").get<std::string>());
      if (!inst.fleet[req.source].is_source()) {
        throw std::runtime_error("request " + std::to_string(req.id) + " names helper '" +
                                 inst.fleet[req.source].id + "' as its source");
      }
      req.model = models.at(inst.fleet[req.source].cnn);
      req.policy = policy_from_json(rj.contains("policy") ? rj.at("policy") : json::object(), *req.model, table);
      req.arrival = get_or<double>(rj, "arrival", 0.0);
      inst.requests.push_back(std::move(req));
    }
    return inst;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed instance file: ") + e.what());
  }
}

Instance load_instance_file(const std::string& path, const SsimTable& table) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open instance file '" + path + "'");
  return read_instance_json(in, table);
}

void write_instance_json(std::ostream& out, const Instance& instance) {
  json doc;
  doc["schema"] = "distpriv-instance/1";
  unsigned word_bits = kDefaultWordBits;
  json models = json::object();
  for (const auto& req : instance.requests) {
    word_bits = req.model->word_bits;
    models[instance.fleet[req.source].cnn] = cnn_to_json(req.model->spec);
  }
  doc["word_bits"] = word_bits;
  doc["models"] = models;
  json devices = json::array();
  for (const auto& d : instance.fleet.devices()) {
    json dj = {{"id", d.id},
               {"kind", std::string(to_string(d.kind))},
               {"mem_bits", d.mem_cap},
               {"comp_per_period", d.comp_cap},
               {"bw_per_period", d.bw_cap},
               {"rate_bps", d.rate},
               {"speed_mps", d.speed}};
    if (d.is_source()) dj["cnn"] = d.cnn;
    devices.push_back(std::move(dj));
  }
  doc["devices"] = devices;
  json requests = json::array();
  for (const auto& req : instance.requests) {
    requests.push_back({{"id", req.id},
                        {"source", instance.fleet[req.source].id},
                        {"arrival", req.arrival},
                        {"policy", policy_to_json(*req.policy)}});
  }
  doc["requests"] = requests;
  out << doc.dump(2) << "\n";
}

}  // namespace distpriv
