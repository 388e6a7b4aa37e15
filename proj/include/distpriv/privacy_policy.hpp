#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace distpriv {

inline constexpr double kDefaultEpsilon = 0.01;

/// Recovered SSIM of an inversion attack as a function of how many feature maps
/// of one layer a single device holds.
struct SsimCurve {
  std::string dataset;
  std::string layer_label;
  std::size_t layer_index = 0;
  std::map<std::uint32_t, double> entries;  // filters per device -> SSIM

  /// SSIM when one device holds every measured map of the layer.
  double full_layer_ssim() const;
};

struct FilterCap {
  std::uint32_t filters = 0;
  bool within_tolerance = true;  // false: even the finest measured split leaks more than tolerated
};

/// Largest measured count whose SSIM <= tolerance + epsilon, or the smallest
/// measured count (flagged) when none qualifies.
FilterCap max_filters(const SsimCurve& curve, double tolerance, double epsilon = kDefaultEpsilon);

/// First layer whose governing curve is within tolerance even with all maps on one
/// device. Returns depth + 1 when no layer qualifies.
std::size_t split_point(std::span<const SsimCurve> curves, double tolerance, double epsilon,
                        std::size_t depth);

class SsimTable {
 public:
  SsimTable() = default;
  explicit SsimTable(std::vector<SsimCurve> curves);

  /// Curves of one dataset ordered by layer index; throws listing known datasets when absent.
  std::vector<SsimCurve> curves_for(const std::string& dataset) const;
  std::vector<std::string> datasets() const;
  bool has(const std::string& dataset) const;
  const std::vector<SsimCurve>& curves() const { return curves_; }

 private:
  std::vector<SsimCurve> curves_;
};

/// Reads `dataset,layer_label,layer_index,filters,ssim` rows; blank SSIM cells are skipped.
SsimTable read_ssim_csv(std::istream& in);
SsimTable load_ssim_file(const std::string& path);
const SsimTable& embedded_ssim_table();

struct LayerCap {
  std::uint32_t filters = 0;
  bool within_tolerance = true;
  std::string governing_label;
};

class PrivacyPolicy {
 public:
  /// Derives caps for a CNN with `depth` layers from its dataset's curves.
  static PrivacyPolicy derive(std::span<const SsimCurve> curves, std::size_t depth, double tolerance,
                              double epsilon = kDefaultEpsilon);
  /// Hand-written caps, used by small test instances.
  static PrivacyPolicy from_caps(std::map<std::size_t, std::uint32_t> caps, std::size_t split_point,
                                 std::size_t depth);
  static PrivacyPolicy unconstrained(std::size_t depth);

  std::optional<std::uint32_t> cap_for_layer(std::size_t l) const;
  const std::optional<LayerCap>& layer_cap(std::size_t l) const { return caps_.at(l); }
  std::size_t split_point() const { return split_point_; }
  std::size_t depth() const { return caps_.size() - 1; }
  double tolerance() const { return tolerance_; }
  double epsilon() const { return epsilon_; }
  const std::string& dataset() const { return dataset_; }

 private:
  std::string dataset_;
  double tolerance_ = 1.0;
  double epsilon_ = kDefaultEpsilon;
  std::size_t split_point_ = 1;
  std::vector<std::optional<LayerCap>> caps_;  // index 1..depth
};

}  // namespace distpriv
