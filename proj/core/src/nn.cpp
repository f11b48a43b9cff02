#include "dtp/nn.hpp"

#include <algorithm>
#include <cmath>

#include "dtp/ops.hpp"

namespace dtp {

namespace {

ConvSpec conv(std::string name, std::size_t in, std::size_t out, bool relu = true) {
  ConvSpec s;
  s.name = std::move(name);
  s.in_ch = in;
  s.out_ch = out;
  s.followed_by_relu = relu;
  return s;
}

template <typename T>
void check_params(const ConvSpec& spec, const ConvParams<T>& p) {
  Shape w{spec.out_ch, spec.in_ch, spec.kernel, spec.kernel};
  Shape b{spec.out_ch};
  if (p.weight.shape() != w) {
    throw FormatError(FormatErrorKind::kShapeMismatch,
                      spec.weight_name() + ": expected " + shape_str(w) + ", got " +
                          shape_str(p.weight.shape()));
  }
  if (p.bias.shape() != b) {
    throw FormatError(FormatErrorKind::kShapeMismatch,
                      spec.bias_name() + ": expected " + shape_str(b) + ", got " +
                          shape_str(p.bias.shape()));
  }
}

template <typename T>
std::vector<ConvParams<T>> load_layers(const std::vector<ConvSpec>& specs,
                                       const WeightStore& store) {
  std::vector<ConvParams<T>> layers;
  for (const auto& spec : specs) {
    ConvParams<T> p{store.get<T>(spec.weight_name()), store.get<T>(spec.bias_name())};
    check_params(spec, p);
    layers.push_back(std::move(p));
  }
  return layers;
}

template <typename T>
WeightStore store_layers(const std::vector<ConvSpec>& specs,
                         const std::vector<ConvParams<T>>& layers) {
  WeightStore store;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    store.add(specs[i].weight_name(), layers[i].weight);
    store.add(specs[i].bias_name(), layers[i].bias);
  }
  return store;
}

template <typename T>
std::vector<Tensor<T>> flatten_params(const std::vector<ConvParams<T>>& layers) {
  std::vector<Tensor<T>> out;
  for (const auto& l : layers) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

template <typename T>
Tensor<T> apply_conv(Graph<T>& g, const ConvSpec& spec, const ConvParams<T>& p,
                     const Tensor<T>& x) {
  auto y = conv2d(g, x, p.weight, p.bias, spec.stride, spec.pad);
  return spec.followed_by_relu ? relu(g, y) : y;
}

}  // namespace

const std::vector<ConvSpec>& encoder_specs() {
  static const std::vector<ConvSpec> specs = {
      conv("conv1_1", 3, 64),    conv("conv1_2", 64, 64),   conv("conv2_1", 64, 128),
      conv("conv2_2", 128, 128), conv("conv3_1", 128, 256), conv("conv3_2", 256, 256),
      conv("conv3_3", 256, 256), conv("conv3_4", 256, 256), conv("conv4_1", 256, 512),
      conv("conv4_2", 512, 512), conv("conv4_3", 512, 512), conv("conv4_4", 512, 512),
      conv("conv5_1", 512, 512), conv("conv5_2", 512, 512),
  };
  return specs;
}

const std::vector<LayerStep>& encoder_plan() {
  using K = StepKind;
  static const std::vector<LayerStep> plan = {
      {K::kConv, 0},  {K::kConv, 1},  {K::kMaxPool}, {K::kConv, 2},  {K::kConv, 3},
      {K::kMaxPool},  {K::kConv, 4},  {K::kConv, 5}, {K::kConv, 6},  {K::kConv, 7},
      {K::kMaxPool},  {K::kConv, 8},  {K::kConv, 9}, {K::kConv, 10}, {K::kConv, 11},
      {K::kMaxPool},  {K::kConv, 12}, {K::kConv, 13},
  };
  return plan;
}

const std::vector<std::string>& encoder_tap_names() {
  static const std::vector<std::string> taps = [] {
    std::vector<std::string> t;
    for (const auto& s : encoder_specs()) t.push_back("relu" + s.name.substr(4));
    return t;
  }();
  return taps;
}

const std::vector<ConvSpec>& decoder_specs() {
  static const std::vector<ConvSpec> specs = {
      conv("dec4_3", 256, 256), conv("dec4_2", 256, 256), conv("dec4_1", 256, 128),
      conv("dec3_4", 128, 128), conv("dec3_3", 128, 128), conv("dec3_2", 128, 128),
      conv("dec3_1", 128, 64),  conv("dec2_3", 64, 64),   conv("dec2_2", 64, 64),
      conv("dec2_1", 64, 32),   conv("dec1_3", 32, 32),   conv("dec1_2", 32, 32),
      conv("dec1_1", 32, 3, /*relu=*/false),
  };
  return specs;
}

const std::vector<LayerStep>& decoder_plan() {
  using K = StepKind;
  static const std::vector<LayerStep> plan = {
      {K::kConv, 0},  {K::kConv, 1},  {K::kConv, 2},  {K::kUpsample}, {K::kConv, 3},
      {K::kConv, 4},  {K::kConv, 5},  {K::kConv, 6},  {K::kUpsample}, {K::kConv, 7},
      {K::kConv, 8},  {K::kConv, 9},  {K::kConv, 10}, {K::kConv, 11},  {K::kConv, 12},
  };
  return plan;
}

template <typename T>
ConvParams<T> kaiming_uniform(const ConvSpec& spec, Rng& rng) {
  const std::size_t fan_in = spec.in_ch * spec.kernel * spec.kernel;
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor<T> w({spec.out_ch, spec.in_ch, spec.kernel, spec.kernel});
  for (auto& v : w.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return {w, Tensor<T>({spec.out_ch})};
}

// --- Encoder --------------------------------------------------------------------

template <typename T>
Encoder<T> Encoder<T>::random(std::uint64_t seed) {
  Rng rng(seed, 0);
  Encoder e;
  for (const auto& spec : encoder_specs()) e.layers_.push_back(kaiming_uniform<T>(spec, rng));
  return e;
}

template <typename T>
Encoder<T> Encoder<T>::from_store(const WeightStore& store) {
  Encoder e;
  e.layers_ = load_layers<T>(encoder_specs(), store);
  return e;
}

template <typename T>
std::map<std::string, Tensor<T>> Encoder<T>::encode(Graph<T>& graph, const Tensor<T>& image,
                                                    const std::set<std::string>& taps) const {
  if (image.rank() != 4 || image.dim(0) != 1 || image.dim(1) != 3) {
    throw ContractError("encode: expected a 1x3xHxW image, got " + shape_str(image.shape()));
  }
  if (image.dim(2) % 16 != 0 || image.dim(3) % 16 != 0) {
    throw ContractError("encode: extents must be divisible by 16, got " +
                        shape_str(image.shape()));
  }
  const auto& names = encoder_tap_names();
  std::size_t deepest = 0;
  for (const auto& t : taps) {
    auto it = std::find(names.begin(), names.end(), t);
    if (it == names.end()) throw ContractError("encode: unknown tap \"" + t + "\"");
    deepest = std::max(deepest, static_cast<std::size_t>(it - names.begin()));
  }
  std::map<std::string, Tensor<T>> out;
  if (taps.empty()) return out;
  const auto& specs = encoder_specs();
  Tensor<T> x = image;
  for (const auto& step : encoder_plan()) {
    if (step.kind == StepKind::kMaxPool) {
      x = maxpool2d_2x2(graph, x);
      continue;
    }
    x = apply_conv(graph, specs[step.conv], layers_[step.conv], x);
    if (taps.count(names[step.conv]) != 0) out.emplace(names[step.conv], x);
    if (step.conv == deepest) break;
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> Encoder<T>::parameters() const {
  return flatten_params(layers_);
}

template <typename T>
WeightStore Encoder<T>::to_store() const {
  return store_layers(encoder_specs(), layers_);
}

template <typename T>
void Encoder<T>::set_requires_grad(bool on) {
  for (auto& p : parameters()) p.set_requires_grad(on);
}

// --- Decoder -------------------------------------------------------------------------

template <typename T>
Decoder<T> Decoder<T>::random(std::uint64_t seed) {
  Rng rng(seed, 1);
  Decoder d;
  const auto& specs = decoder_specs();
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (i + 1 == specs.size()) {
      d.layers_.push_back({Tensor<T>({specs[i].out_ch, specs[i].in_ch, 3, 3}),
                           Tensor<T>({specs[i].out_ch})});
    } else {
      d.layers_.push_back(kaiming_uniform<T>(specs[i], rng));
    }
  }
  return d;
}

template <typename T>
Decoder<T> Decoder<T>::zeros() {
  Decoder d;
  for (const auto& s : decoder_specs()) {
    d.layers_.push_back({Tensor<T>({s.out_ch, s.in_ch, s.kernel, s.kernel}), Tensor<T>({s.out_ch})});
  }
  return d;
}

template <typename T>
Decoder<T> Decoder<T>::from_store(const WeightStore& store) {
  Decoder d;
  d.layers_ = load_layers<T>(decoder_specs(), store);
  return d;
}

template <typename T>
Tensor<T> Decoder<T>::decode(Graph<T>& graph, const Tensor<T>& feature) const {
  const std::size_t in_ch = decoder_specs().front().in_ch;
  if (feature.rank() != 4 || feature.dim(0) != 1 || feature.dim(1) != in_ch) {
    throw ContractError("decode: expected 1x" + std::to_string(in_ch) + "xhxw feature, got " +
                        shape_str(feature.shape()));
  }
  const auto& specs = decoder_specs();
  Tensor<T> x = feature;
  for (const auto& step : decoder_plan()) {
    if (step.kind == StepKind::kUpsample) {
      x = upsample_bilinear_2x(graph, x);
    } else {
      x = apply_conv(graph, specs[step.conv], layers_[step.conv], x);
    }
  }
  return x;
}

template <typename T>
std::vector<Tensor<T>> Decoder<T>::parameters() const {
  return flatten_params(layers_);
}

template <typename T>
WeightStore Decoder<T>::to_store() const {
  return store_layers(decoder_specs(), layers_);
}

template <typename T>
void Decoder<T>::set_requires_grad(bool on) {
  for (auto& p : parameters()) p.set_requires_grad(on);
}

template ConvParams<float> kaiming_uniform<float>(const ConvSpec&, Rng&);
template ConvParams<double> kaiming_uniform<double>(const ConvSpec&, Rng&);
template class Encoder<float>;
template class Encoder<double>;
template class Decoder<float>;
template class Decoder<double>;

}  // namespace dtp
