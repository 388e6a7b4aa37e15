#include "distpriv/privacy_policy.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "distpriv/text_io.hpp"

namespace distpriv {

namespace {

// Absorbs binary rounding in tolerance + epsilon (0.4 + 0.01 vs a table value of 0.41).
constexpr double kCompareSlack = 1e-9;

bool within(double ssim, double tolerance, double epsilon) {
  return ssim <= tolerance + epsilon + kCompareSlack;
}

// Curve governing layer l: nearest measured layer at or before l, else the first one.
const SsimCurve* governing_curve(std::span<const SsimCurve> curves, std::size_t l) {
  const SsimCurve* best = nullptr;
  for (const auto& c : curves) {
    if (c.layer_index <= l && (!best || c.layer_index >= best->layer_index)) best = &c;
  }
  if (!best && !curves.empty()) {
    best = &*std::min_element(curves.begin(), curves.end(),
                              [](const auto& a, const auto& b) { return a.layer_index < b.layer_index; });
  }
  return best;
}

}  // namespace

double SsimCurve::full_layer_ssim() const {
  if (entries.empty()) throw std::invalid_argument("empty SSIM curve " + dataset + "/" + layer_label);
  return entries.rbegin()->second;
}

FilterCap max_filters(const SsimCurve& curve, double tolerance, double epsilon) {
  if (curve.entries.empty()) throw std::invalid_argument("empty SSIM curve " + curve.dataset + "/" + curve.layer_label);
  for (auto it = curve.entries.rbegin(); it != curve.entries.rend(); ++it) {
    if (within(it->second, tolerance, epsilon)) return {it->first, true};
  }
  return {curve.entries.begin()->first, false};
}

std::size_t split_point(std::span<const SsimCurve> curves, double tolerance, double epsilon, std::size_t depth) {
  if (curves.empty()) return 1;
  for (std::size_t l = 1; l <= depth; ++l) {
    if (within(governing_curve(curves, l)->full_layer_ssim(), tolerance, epsilon)) return l;
  }
  return depth + 1;
}

SsimTable::SsimTable(std::vector<SsimCurve> curves) : curves_(std::move(curves)) {
  std::stable_sort(curves_.begin(), curves_.end(), [](const auto& a, const auto& b) {
    return a.dataset != b.dataset ? a.dataset < b.dataset : a.layer_index < b.layer_index;
  });
}

std::vector<SsimCurve> SsimTable::curves_for(const std::string& dataset) const {
  std::vector<SsimCurve> out;
  for (const auto& c : curves_) {
    if (c.dataset == dataset) out.push_back(c);
  }
  if (out.empty()) {
    std::ostringstream msg;
    msg << "unknown dataset '" << dataset << "'; available:";
    for (const auto& d : datasets()) msg << ' ' << d;
    throw std::invalid_argument(msg.str());
  }
  return out;
}

std::vector<std::string> SsimTable::datasets() const {
  std::set<std::string> names;
  for (const auto& c : curves_) names.insert(c.dataset);
  return {names.begin(), names.end()};
}

bool SsimTable::has(const std::string& dataset) const {
  return std::any_of(curves_.begin(), curves_.end(), [&](const auto& c) { return c.dataset == dataset; });
}

SsimTable read_ssim_csv(std::istream& in) {
  const auto rows = text::read_rows(in, "distpriv-ssim v1");
  std::vector<SsimCurve> curves;
  for (const auto& r : rows) {
    if (!r.empty() && r[0] == "dataset") continue;
    if (r.size() != 5) throw std::runtime_error("ssim rows need 5 columns: dataset,layer_label,layer_index,filters,ssim");
    const auto index = text::to_u64(r[2], "layer_index");
    const auto filters = static_cast<std::uint32_t>(text::to_u64(r[3], "filters"));
    auto it = std::find_if(curves.begin(), curves.end(),
                           [&](const auto& c) { return c.dataset == r[0] && c.layer_label == r[1]; });
    if (it == curves.end()) {
      curves.push_back(SsimCurve{r[0], r[1], index, {}});
      it = std::prev(curves.end());
    } else if (it->layer_index != index) {
      throw std::runtime_error("curve " + r[0] + "/" + r[1] + " has inconsistent layer indices");
    }
    if (r[4].empty()) continue;  // shaded cell: layer narrower than this count
    const double ssim = text::to_double(r[4], "ssim");
    if (ssim < 0.0 || ssim > 1.0) throw std::runtime_error("SSIM outside [0,1] for " + r[0] + "/" + r[1]);
    it->entries[filters] = ssim;
  }
  std::erase_if(curves, [](const auto& c) { return c.entries.empty(); });
  return SsimTable(std::move(curves));
}

SsimTable load_ssim_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open SSIM table '" + path + "'");
  return read_ssim_csv(in);
}

extern const char* const kEmbeddedSsimCsv;

const SsimTable& embedded_ssim_table() {
  static const SsimTable table = [] {
    std::istringstream in(kEmbeddedSsimCsv);
    return read_ssim_csv(in);
  }();
  return table;
}

PrivacyPolicy PrivacyPolicy::derive(std::span<const SsimCurve> curves, std::size_t depth, double tolerance,
                                    double epsilon) {
  if (!(tolerance > 0.0 && tolerance <= 1.0)) throw std::invalid_argument("tolerance must lie in (0, 1]");
  PrivacyPolicy p;
  p.dataset_ = curves.empty() ? std::string{} : curves.front().dataset;
  p.tolerance_ = tolerance;
  p.epsilon_ = epsilon;
  p.split_point_ = distpriv::split_point(curves, tolerance, epsilon, depth);
  p.caps_.assign(depth + 1, std::nullopt);
  for (std::size_t l = 1; l < p.split_point_ && l <= depth; ++l) {
    const auto* curve = governing_curve(curves, l);
    const auto cap = max_filters(*curve, tolerance, epsilon);
    p.caps_[l] = LayerCap{cap.filters, cap.within_tolerance, curve->layer_label};
  }
  return p;
}

PrivacyPolicy PrivacyPolicy::from_caps(std::map<std::size_t, std::uint32_t> caps, std::size_t split_point,
                                       std::size_t depth) {
  PrivacyPolicy p;
  p.dataset_ = "custom";
  p.split_point_ = split_point;
  p.caps_.assign(depth + 1, std::nullopt);
  for (const auto& [l, cap] : caps) {
    if (l == 0 || l > depth) throw std::invalid_argument("cap for layer outside the CNN");
    if (cap == 0) throw std::invalid_argument("a cap must allow at least one map");
    if (l < split_point) p.caps_[l] = LayerCap{cap, true, "custom"};
  }
  return p;
}

PrivacyPolicy PrivacyPolicy::unconstrained(std::size_t depth) { return from_caps({}, 1, depth); }

std::optional<std::uint32_t> PrivacyPolicy::cap_for_layer(std::size_t l) const {
  if (l >= split_point_ || l >= caps_.size() || !caps_[l]) return std::nullopt;
  return caps_[l]->filters;
}

}  // namespace distpriv
