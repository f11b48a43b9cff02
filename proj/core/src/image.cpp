#include "dtp/image.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <memory>

#include "dtp/detail/kernels.hpp"

namespace dtp {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

constexpr std::size_t kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, kWindow> gaussian_window() {
  std::array<double, kWindow> w{};
  double s = 0;
  for (std::size_t i = 0; i < kWindow; ++i) {
    double d = static_cast<double>(i) - static_cast<double>(kWindow / 2);
    w[i] = std::exp(-d * d / (2 * kSigma * kSigma));
    s += w[i];
  }
  for (auto& v : w) v /= s;
  return w;
}

// Valid-region separable filter of one channel plane.
std::vector<double> filter_valid(const std::vector<double>& plane, std::size_t h, std::size_t w,
                                 const std::array<double, kWindow>& k) {
  const std::size_t oh = h - kWindow + 1, ow = w - kWindow + 1;
  std::vector<double> rows(h * ow);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0;
      for (std::size_t i = 0; i < kWindow; ++i) s += k[i] * plane[y * w + x + i];
      rows[y * ow + x] = s;
    }
  }
  std::vector<double> out(oh * ow);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0;
      for (std::size_t i = 0; i < kWindow; ++i) s += k[i] * rows[(y + i) * ow + x];
      out[y * ow + x] = s;
    }
  }
  return out;
}

}  // namespace

Image load_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path.string());
  std::array<unsigned char, 8> sig{};
  if (std::fread(sig.data(), 1, sig.size(), fp.get()) != sig.size() ||
      png_sig_cmp(sig.data(), 0, sig.size()) != 0) {
    throw IoError(path.string() + " is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) throw IoError("libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng initialisation failed");
  }
  Image img;
  std::vector<png_bytep> row_ptrs;
  std::vector<unsigned char> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("corrupt PNG " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, static_cast<int>(sig.size()));
  png_read_info(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (depth != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("unsupported bit depth " + std::to_string(depth) + " in " + path.string() +
                  " (8-bit only)");
  }
  if (color != PNG_COLOR_TYPE_RGB && color != PNG_COLOR_TYPE_RGBA) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("unsupported color type in " + path.string() + " (RGB or RGBA only)");
  }
  const std::size_t w = png_get_image_width(png, info);
  const std::size_t h = png_get_image_height(png, info);
  const std::size_t channels = color == PNG_COLOR_TYPE_RGBA ? 4 : 3;
  buffer.resize(h * w * channels);
  row_ptrs.resize(h);
  for (std::size_t y = 0; y < h; ++y) row_ptrs[y] = buffer.data() + y * w * channels;
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  img = Image(h, w);
  for (std::size_t i = 0; i < h * w; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      img.pixels[i * 3 + c] = static_cast<float>(buffer[i * channels + c]) / 255.0f;
    }
  }
  return img;
}

void save_png(const Image& img, const std::filesystem::path& path) {
  if (img.height == 0 || img.width == 0) throw ContractError("save_png: empty image");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) throw IoError("libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng initialisation failed");
  }
  std::vector<unsigned char> bytes(img.pixels.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    float v = std::round(img.pixels[i] * 255.0f);
    bytes[i] = static_cast<unsigned char>(std::clamp(v, 0.0f, 255.0f));
  }
  std::vector<png_bytep> rows(img.height);
  for (std::size_t y = 0; y < img.height; ++y) rows[y] = bytes.data() + y * img.width * 3;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image resize_bilinear(const Image& img, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0) throw ContractError("resize_bilinear: zero output extent");
  if (img.height == 0 || img.width == 0) throw ContractError("resize_bilinear: empty image");
  Image out(out_h, out_w);
  std::vector<float> plane(img.height * img.width), dst(out_h * out_w);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = img.pixels[i * 3 + c];
    detail::resize_plane(plane.data(), img.height, img.width, dst.data(), out_h, out_w);
    for (std::size_t i = 0; i < dst.size(); ++i) out.pixels[i * 3 + c] = dst[i];
  }
  return out;
}

double ssim(const Image& a, const Image& b) {
  if (a.height != b.height || a.width != b.width) {
    throw ContractError("ssim: size mismatch " + std::to_string(a.height) + "x" +
                        std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                        std::to_string(b.width));
  }
  if (a.height < kWindow || a.width < kWindow) {
    throw ContractError("ssim: images must be at least 11x11");
  }
  const auto k = gaussian_window();
  const std::size_t h = a.height, w = a.width, n = h * w;
  double total = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = a.pixels[i * 3 + c];
      y[i] = b.pixels[i * 3 + c];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    auto mx = filter_valid(x, h, w, k), my = filter_valid(y, h, w, k);
    auto sxx = filter_valid(xx, h, w, k), syy = filter_valid(yy, h, w, k);
    auto sxy = filter_valid(xy, h, w, k);
    double acc = 0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      double vx = sxx[i] - mx[i] * mx[i];
      double vy = syy[i] - my[i] * my[i];
      double cov = sxy[i] - mx[i] * my[i];
      acc += ((2 * mx[i] * my[i] + kC1) * (2 * cov + kC2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + kC1) * (vx + vy + kC2));
    }
    total += acc / static_cast<double>(mx.size());
  }
  return total / 3.0;
}

template <typename T>
Tensor<T> image_to_tensor(const Image& img) {
  Tensor<T> t({1, 3, img.height, img.width});
  const std::size_t n = img.height * img.width;
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < n; ++i) t[c * n + i] = static_cast<T>(img.pixels[i * 3 + c]);
  }
  return t;
}

template <typename T>
Image tensor_to_image(const Tensor<T>& t) {
  if (t.rank() != 4 || t.dim(0) != 1 || t.dim(1) != 3) {
    throw ContractError("tensor_to_image: expected 1x3xHxW, got " + shape_str(t.shape()));
  }
  Image img(t.dim(2), t.dim(3));
  const std::size_t n = img.height * img.width;
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      img.pixels[i * 3 + c] = std::clamp(static_cast<float>(t[c * n + i]), 0.0f, 1.0f);
    }
  }
  return img;
}

template Tensor<float> image_to_tensor<float>(const Image&);
template Tensor<double> image_to_tensor<double>(const Image&);
template Image tensor_to_image<float>(const Tensor<float>&);
template Image tensor_to_image<double>(const Tensor<double>&);

}  // namespace dtp
