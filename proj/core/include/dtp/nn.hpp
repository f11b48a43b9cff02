#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dtp/graph.hpp"
#include "dtp/random.hpp"
#include "dtp/tensor.hpp"
#include "dtp/weight_store.hpp"

namespace dtp {

/// One 3x3 / stride 1 / pad 1 convolution of the encoder or decoder.
struct ConvSpec {
  std::string name;
  std::size_t in_ch = 0;
  std::size_t out_ch = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 1;
  bool followed_by_relu = true;

  std::string weight_name() const { return name + ".weight"; }
  std::string bias_name() const { return name + ".bias"; }
};

enum class StepKind { kConv, kMaxPool, kUpsample };

/// Layer plan entry; `conv` indexes the spec list when kind == kConv.
struct LayerStep {
  StepKind kind;
  std::size_t conv = 0;
};

/// VGG-19 trunk conv1_1 ... conv5_2, max-pooled after conv1_2, conv2_2,
/// conv3_4 and conv4_4.
const std::vector<ConvSpec>& encoder_specs();
const std::vector<LayerStep>& encoder_plan();
/// "relu1_1" ... "relu5_2": post-ReLU output of the matching conv.
const std::vector<std::string>& encoder_tap_names();

/// Decoder dec4_3 ... dec1_1: 256-channel input, two bilinear x2
/// upsamples, linear 3-channel output.
const std::vector<ConvSpec>& decoder_specs();
const std::vector<LayerStep>& decoder_plan();

template <typename T>
struct ConvParams {
  Tensor<T> weight;
  Tensor<T> bias;
};

/// Uniform(-b, b) weights with b = sqrt(6 / fan_in), zero bias.
template <typename T>
ConvParams<T> kaiming_uniform(const ConvSpec& spec, Rng& rng);

template <typename T>
class Encoder {
 public:
  static Encoder random(std::uint64_t seed);
  /// Throws FormatError naming the tensor on a missing name or bad shape.
  static Encoder from_store(const WeightStore& store);

  /// Runs the trunk only as deep as the deepest requested tap.
  /// image: 1 x 3 x H x W with H, W divisible by 16.
  std::map<std::string, Tensor<T>> encode(Graph<T>& graph, const Tensor<T>& image,
                                          const std::set<std::string>& taps) const;

  std::vector<Tensor<T>> parameters() const;
  WeightStore to_store() const;
  const std::vector<ConvParams<T>>& layers() const noexcept { return layers_; }
  void set_requires_grad(bool on);

 private:
  std::vector<ConvParams<T>> layers_;
};

template <typename T>
class Decoder {
 public:
  /// Hidden convs drawn from the seeded stream; the output conv starts at zero
  /// so the untrained decoder contributes nothing to the blend.
  static Decoder random(std::uint64_t seed);
  static Decoder zeros();
  static Decoder from_store(const WeightStore& store);

  /// feature: 1 x 256 x h x w -> image residual 1 x 3 x 4h x 4w.
  Tensor<T> decode(Graph<T>& graph, const Tensor<T>& feature) const;

  std::vector<Tensor<T>> parameters() const;
  WeightStore to_store() const;
  const std::vector<ConvParams<T>>& layers() const noexcept { return layers_; }
  void set_requires_grad(bool on);

 private:
  std::vector<ConvParams<T>> layers_;
};

extern template class Encoder<float>;
extern template class Encoder<double>;
extern template class Decoder<float>;
extern template class Decoder<double>;

}  // namespace dtp
