#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace distpriv {

using Bits = std::uint64_t;
using Mults = std::uint64_t;

/// Memory word length used by default for weights and exchanged feature data.
inline constexpr unsigned kDefaultWordBits = 4;

enum class LayerKind { Conv, Activation, MaxPool, FullyConnected };

std::string_view to_string(LayerKind kind);
LayerKind parse_layer_kind(std::string_view text);

/// One layer of a CNN. Layers are numbered from 1; layer 0 is the input image.
struct LayerSpec {
  std::string label;
  LayerKind kind = LayerKind::Conv;
  std::uint32_t filter_size = 0;  // S, conv only
  std::uint32_t out_maps = 0;     // P, 1 for fully connected layers
  std::uint32_t out_spatial = 0;  // o, side of each output map
  std::uint32_t neurons = 0;      // n*, fully connected only
  std::uint64_t weights_per_segment = 0;  // W

  bool is_fc() const { return kind == LayerKind::FullyConnected; }
};

struct CnnSpec {
  std::string name;
  std::string dataset;
  std::uint32_t input_channels = 0;
  std::uint32_t input_spatial = 0;
  std::vector<LayerSpec> layers;  // layers[0] is layer 1

  std::size_t depth() const { return layers.size(); }
  const LayerSpec& layer(std::size_t l) const { return layers.at(l - 1); }

  /// Feature maps feeding layer l (P_{l-1}); layer 1 sees the input channels.
  std::uint32_t maps_into(std::size_t l) const;

  /// Elements in one output map of layer l: o_l^2, or n*_l for FC; layer 0 is the image.
  std::uint64_t elements_per_map(std::size_t l) const;

  /// Flattened output size of layer l (n*_l for FC, P_l * o_l^2 otherwise).
  std::uint64_t flattened_size(std::size_t l) const;

  /// First fully connected layer whose predecessor is not fully connected.
  std::optional<std::size_t> first_fc() const;
};

/// Checks the structural invariants and throws std::invalid_argument when one fails.
void check_cnn(const CnnSpec& cnn);

/// Multiplications for one input-map segment of a conv layer: S^2 * P * o^2.
Mults conv_segment_cost(const LayerSpec& conv);

/// Multiplications of a fully connected layer: n*_{k-1} * n*_k.
Mults fc_cost(const LayerSpec& fc, std::uint64_t inputs);
Mults fc_cost(const LayerSpec& fc, const LayerSpec& previous);

Bits segment_memory(const LayerSpec& layer, unsigned word_bits = kDefaultWordBits);

/// Placement-unit compute for layer l: multiplications of one of its P_{l-1} segments.
/// Segments of a layer that follows a non-FC layer split the FC work by input map.
Mults segment_compute(const CnnSpec& cnn, std::size_t l);

/// Total multiplications of layer l across all its segments.
Mults layer_compute(const CnnSpec& cnn, std::size_t l);

std::vector<std::string> preset_names();
CnnSpec load_preset(std::string_view name);

/// Reads the `distpriv-cnn v1` CSV format.
CnnSpec read_cnn_csv(std::istream& in);
CnnSpec load_cnn_file(const std::string& path);
void write_cnn_csv(std::ostream& out, const CnnSpec& cnn);

/// Per-layer cost table of a CNN at a given word length, shared by schedulers.
struct LayerProfile {
  LayerKind kind = LayerKind::Conv;
  std::uint32_t segments = 0;       // P_{l-1}
  Mults segment_compute = 0;        // c^{l,p}
  Bits segment_memory = 0;          // m^{l,p}
  std::uint64_t map_elements = 0;   // o_l^2 (n*_l for FC); data unit sent per output map
};

struct CnnProfile {
  CnnSpec spec;
  unsigned word_bits = kDefaultWordBits;
  std::vector<LayerProfile> layers;  // index 0 is the input image, 1..L the layers
  std::optional<std::size_t> first_fc;

  std::size_t depth() const { return spec.depth(); }
  const LayerProfile& at(std::size_t l) const { return layers[l]; }
  /// True when producer layer l forwards per-map data (anything but conv).
  bool elementwise_output(std::size_t l) const {
    return l == 0 || layers[l].kind != LayerKind::Conv;
  }
};

CnnProfile make_profile(CnnSpec spec, unsigned word_bits = kDefaultWordBits);

}  // namespace distpriv
