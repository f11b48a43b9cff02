#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "dtp/tensor.hpp"

namespace dtp {

/// H x W x 3 RGB image, values in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, float fill = 0.0f)
      : height(h), width(w), pixels(h * w * 3, fill) {}

  float& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
  float at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * 3 + c];
  }
  bool operator==(const Image&) const = default;
};

/// 8-bit RGB or RGBA PNG; alpha is dropped, byte b maps to b / 255.
Image load_png(const std::filesystem::path& path);
/// Quantizes with round(x * 255), clamped to [0, 255].
void save_png(const Image& img, const std::filesystem::path& path);

/// Half-pixel-centre bilinear resize, edge clamped.
Image resize_bilinear(const Image& img, std::size_t out_h, std::size_t out_w);

/// Mean SSIM over channels: 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, L = 1, valid windows only.
double ssim(const Image& a, const Image& b);

/// 1 x 3 x H x W tensor.
template <typename T>
Tensor<T> image_to_tensor(const Image& img);
/// Clamps to [0, 1].
template <typename T>
Image tensor_to_image(const Tensor<T>& t);

}  // namespace dtp
