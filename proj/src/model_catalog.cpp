#include "distpriv/model_catalog.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "distpriv/text_io.hpp"

namespace distpriv {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv: return "conv";
    case LayerKind::Activation: return "activation";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::FullyConnected: return "fc";
  }
  return "?";
}

LayerKind parse_layer_kind(std::string_view text) {
  if (text == "conv") return LayerKind::Conv;
  if (text == "activation" || text == "relu") return LayerKind::Activation;
  if (text == "maxpool" || text == "pool") return LayerKind::MaxPool;
  if (text == "fc") return LayerKind::FullyConnected;
  throw std::invalid_argument("unknown layer kind '" + std::string(text) + "'");
}

std::uint32_t CnnSpec::maps_into(std::size_t l) const {
  return l <= 1 ? input_channels : layer(l - 1).out_maps;
}

std::uint64_t CnnSpec::elements_per_map(std::size_t l) const {
  if (l == 0) return std::uint64_t{input_spatial} * input_spatial;
  const auto& ly = layer(l);
  if (ly.is_fc()) return ly.neurons;
  return std::uint64_t{ly.out_spatial} * ly.out_spatial;
}

std::uint64_t CnnSpec::flattened_size(std::size_t l) const {
  if (l == 0) return std::uint64_t{input_channels} * input_spatial * input_spatial;
  const auto& ly = layer(l);
  if (ly.is_fc()) return ly.neurons;
  return std::uint64_t{ly.out_maps} * ly.out_spatial * ly.out_spatial;
}

std::optional<std::size_t> CnnSpec::first_fc() const {
  for (std::size_t l = 1; l <= depth(); ++l) {
    if (layer(l).is_fc() && (l == 1 || !layer(l - 1).is_fc())) return l;
  }
  return std::nullopt;
}

void check_cnn(const CnnSpec& cnn) {
  auto fail = [&](std::size_t l, const std::string& why) {
    throw std::invalid_argument(cnn.name + " layer " + std::to_string(l) + ": " + why);
  };
  if (cnn.layers.empty()) throw std::invalid_argument(cnn.name + ": no layers");
  if (cnn.input_channels == 0 || cnn.input_spatial == 0) {
    throw std::invalid_argument(cnn.name + ": input channels and spatial size must be >= 1");
  }
  bool seen_fc = false;
  for (std::size_t l = 1; l <= cnn.depth(); ++l) {
    const auto& ly = cnn.layer(l);
    switch (ly.kind) {
      case LayerKind::Conv:
        if (ly.filter_size == 0 || ly.out_spatial == 0 || ly.out_maps == 0) {
          fail(l, "conv needs filter size, maps and spatial size >= 1");
        }
        break;
      case LayerKind::Activation:
      case LayerKind::MaxPool:
        if (ly.out_maps != cnn.maps_into(l)) fail(l, "element-wise layer must keep the map count");
        if (ly.out_spatial == 0) fail(l, "spatial size must be >= 1");
        break;
      case LayerKind::FullyConnected:
        if (ly.out_maps != 1) fail(l, "fully connected layer must produce exactly 1 map");
        if (ly.neurons == 0) fail(l, "fully connected layer needs >= 1 neuron");
        break;
    }
    if (seen_fc && !ly.is_fc()) fail(l, "only fully connected layers may follow a fully connected layer");
    seen_fc = seen_fc || ly.is_fc();
  }
  if (!cnn.layers.back().is_fc()) throw std::invalid_argument(cnn.name + ": last layer must be fully connected");
}

Mults conv_segment_cost(const LayerSpec& conv) {
  if (conv.kind != LayerKind::Conv) throw std::invalid_argument("conv_segment_cost: layer is not conv");
  const Mults s = conv.filter_size;
  const Mults o = conv.out_spatial;
  return s * s * conv.out_maps * o * o;
}

Mults fc_cost(const LayerSpec& fc, std::uint64_t inputs) {
  if (!fc.is_fc()) throw std::invalid_argument("fc_cost: layer is not fully connected");
  return inputs * fc.neurons;
}

Mults fc_cost(const LayerSpec& fc, const LayerSpec& previous) {
  const std::uint64_t inputs = previous.is_fc()
                                   ? previous.neurons
                                   : std::uint64_t{previous.out_maps} * previous.out_spatial * previous.out_spatial;
  return fc_cost(fc, inputs);
}

Bits segment_memory(const LayerSpec& layer, unsigned word_bits) {
  return layer.weights_per_segment * word_bits;
}

Mults segment_compute(const CnnSpec& cnn, std::size_t l) {
  const auto& ly = cnn.layer(l);
  switch (ly.kind) {
    case LayerKind::Conv: return conv_segment_cost(ly);
    case LayerKind::Activation:
    case LayerKind::MaxPool: return 0;
    case LayerKind::FullyConnected:
      if (l > 1 && cnn.layer(l - 1).is_fc()) return fc_cost(ly, cnn.layer(l - 1));
      return fc_cost(ly, cnn.elements_per_map(l - 1));
  }
  return 0;
}

Mults layer_compute(const CnnSpec& cnn, std::size_t l) {
  return segment_compute(cnn, l) * cnn.maps_into(l);
}

namespace {

// Builds canonical architectures layer by layer, tracking map count and spatial size.
// W per segment = filter slices touching one input map plus the layer's bias vector.
class PresetBuilder {
 public:
  PresetBuilder(std::string name, std::string dataset, std::uint32_t channels, std::uint32_t spatial)
      : maps_(channels), spatial_(spatial) {
    cnn_.name = std::move(name);
    cnn_.dataset = std::move(dataset);
    cnn_.input_channels = channels;
    cnn_.input_spatial = spatial;
  }

  PresetBuilder& conv(std::string label, std::uint32_t filter, std::uint32_t maps, std::uint32_t stride = 1) {
    spatial_ /= stride;
    LayerSpec ly{std::move(label), LayerKind::Conv, filter, maps, spatial_, 0, 0};
    ly.weights_per_segment = std::uint64_t{filter} * filter * maps + maps;
    maps_ = maps;
    return push(std::move(ly));
  }
  PresetBuilder& relu(std::string label) {
    return push(LayerSpec{std::move(label), LayerKind::Activation, 0, maps_, spatial_, 0, 0});
  }
  PresetBuilder& pool(std::string label) {
    spatial_ /= 2;
    return push(LayerSpec{std::move(label), LayerKind::MaxPool, 0, maps_, spatial_, 0, 0});
  }
  PresetBuilder& fc(std::string label, std::uint32_t neurons) {
    LayerSpec ly{std::move(label), LayerKind::FullyConnected, 0, 1, 1, neurons, 0};
    const std::uint64_t per_segment_inputs =
        prev_fc_neurons_ ? prev_fc_neurons_ : std::uint64_t{spatial_} * spatial_;
    ly.weights_per_segment = per_segment_inputs * neurons + neurons;
    prev_fc_neurons_ = neurons;
    maps_ = 1;
    return push(std::move(ly));
  }
  CnnSpec build() {
    check_cnn(cnn_);
    return std::move(cnn_);
  }

 private:
  PresetBuilder& push(LayerSpec ly) {
    cnn_.layers.push_back(std::move(ly));
    return *this;
  }

  CnnSpec cnn_;
  std::uint32_t maps_;
  std::uint32_t spatial_;
  std::uint64_t prev_fc_neurons_ = 0;
};

CnnSpec lenet() {
  return PresetBuilder("LeNet", "MNIST", 1, 28)
      .conv("conv1", 5, 8)
      .pool("pool1")
      .conv("conv2", 5, 8)
      .pool("pool2")
      .fc("fc1", 120)
      .fc("fc2", 84)
      .fc("fc3", 10)
      .build();
}

CnnSpec cifar_cnn() {
  return PresetBuilder("CifarCnn", "CIFAR", 3, 32)
      .conv("conv1_1", 3, 64)
      .relu("relu1_1")
      .conv("conv1_2", 3, 64, 2)
      .conv("conv2_1", 3, 64)
      .conv("conv2_2", 3, 128)
      .relu("relu2_2")
      .conv("conv3_1", 3, 128, 2)
      .conv("conv3_2", 3, 128)
      .relu("relu3_2")
      .pool("pool3")
      .fc("fc1", 256)
      .fc("fc2", 10)
      .build();
}

// VGG blocks with the activation fused into each conv layer.
CnnSpec vgg(std::string name, std::string dataset, const std::vector<int>& convs_per_block,
            std::uint32_t classes) {
  PresetBuilder b(std::move(name), std::move(dataset), 3, 128);
  const std::uint32_t widths[] = {64, 128, 256, 512, 512};
  for (std::size_t block = 0; block < convs_per_block.size(); ++block) {
    for (int c = 1; c <= convs_per_block[block]; ++c) {
      b.conv("conv" + std::to_string(block + 1) + "_" + std::to_string(c), 3, widths[block]);
    }
    b.pool("pool" + std::to_string(block + 1));
  }
  return b.fc("fc1", 4096).fc("fc2", 4096).fc("fc3", classes).build();
}

}  // namespace

std::vector<std::string> preset_names() { return {"LeNet", "CifarCnn", "VGG16", "VGG19"}; }

CnnSpec load_preset(std::string_view name) {
  if (name == "LeNet") return lenet();
  if (name == "CifarCnn") return cifar_cnn();
  if (name == "VGG16") return vgg("VGG16", "CAR", {2, 2, 3, 3, 3}, 196);
  if (name == "VGG19") return vgg("VGG19", "CELEBA", {2, 2, 4, 4, 4}, 40);
  throw std::invalid_argument("unknown CNN preset '" + std::string(name) + "'");
}

CnnSpec read_cnn_csv(std::istream& in) {
  const auto rows = text::read_rows(in, "distpriv-cnn v1");
  CnnSpec cnn;
  std::size_t i = 0;
  for (; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (!r.empty() && r[0] == "label") break;
    if (r.size() != 2) throw std::runtime_error("cnn metadata rows are 'key,value'");
    if (r[0] == "name") cnn.name = r[1];
    else if (r[0] == "dataset") cnn.dataset = r[1];
    else if (r[0] == "input_channels") cnn.input_channels = static_cast<std::uint32_t>(text::to_u64(r[1], r[0]));
    else if (r[0] == "input_spatial") cnn.input_spatial = static_cast<std::uint32_t>(text::to_u64(r[1], r[0]));
    else throw std::runtime_error("unknown cnn metadata key '" + r[0] + "'");
  }
  if (i == rows.size()) throw std::runtime_error("cnn file has no layer table");
  for (++i; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != 7) throw std::runtime_error("layer rows need 7 columns: label,kind,filter,maps,spatial,neurons,weights");
    LayerSpec ly;
    ly.label = r[0];
    ly.kind = parse_layer_kind(r[1]);
    ly.filter_size = static_cast<std::uint32_t>(text::to_u64(r[2], "filter"));
    ly.out_maps = static_cast<std::uint32_t>(text::to_u64(r[3], "maps"));
    ly.out_spatial = static_cast<std::uint32_t>(text::to_u64(r[4], "spatial"));
    ly.neurons = static_cast<std::uint32_t>(text::to_u64(r[5], "neurons"));
    ly.weights_per_segment = text::to_u64(r[6], "weights");
    cnn.layers.push_back(std::move(ly));
  }
  check_cnn(cnn);
  return cnn;
}

CnnSpec load_cnn_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open cnn file '" + path + "'");
  return read_cnn_csv(in);
}

void write_cnn_csv(std::ostream& out, const CnnSpec& cnn) {
  out << "# distpriv-cnn v1\n"
      << "name," << cnn.name << "\n"
      << "dataset," << cnn.dataset << "\n"
      << "input_channels," << cnn.input_channels << "\n"
      << "input_spatial," << cnn.input_spatial << "\n"
      << "label,kind,filter,maps,spatial,neurons,weights\n";
  for (const auto& ly : cnn.layers) {
    out << ly.label << ',' << to_string(ly.kind) << ',' << ly.filter_size << ',' << ly.out_maps << ','
        << ly.out_spatial << ',' << ly.neurons << ',' << ly.weights_per_segment << "\n";
  }
}

CnnProfile make_profile(CnnSpec spec, unsigned word_bits) {
  check_cnn(spec);
  if (word_bits == 0) throw std::invalid_argument("word length must be >= 1 bit");
  CnnProfile prof;
  prof.word_bits = word_bits;
  prof.layers.resize(spec.depth() + 1);
  prof.layers[0] = LayerProfile{LayerKind::Activation, spec.input_channels, 0, 0, spec.elements_per_map(0)};
  for (std::size_t l = 1; l <= spec.depth(); ++l) {
    const auto& ly = spec.layer(l);
    prof.layers[l] = LayerProfile{ly.kind, spec.maps_into(l), segment_compute(spec, l),
                                  segment_memory(ly, word_bits), spec.elements_per_map(l)};
  }
  prof.first_fc = spec.first_fc();
  prof.spec = std::move(spec);
  return prof;
}

}  // namespace distpriv
