#include "suites.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>

#include "dtp/correspondence.hpp"
#include "dtp/error.hpp"
#include "dtp/losses.hpp"
#include "dtp/ops.hpp"
#include "dtp/weight_store.hpp"
#include "oracles.hpp"

namespace dtp::testing {

Bytes& Bytes::raw(const std::string& s) {
  data_ += s;
  return *this;
}
Bytes& Bytes::u8(unsigned v) {
  data_.push_back(static_cast<char>(v & 0xFF));
  return *this;
}
Bytes& Bytes::u16(unsigned v) { return u8(v).u8(v >> 8); }
Bytes& Bytes::u32(std::uint32_t v) { return u16(v & 0xFFFF).u16(v >> 16); }
Bytes& Bytes::f32(float v) { return u32(std::bit_cast<std::uint32_t>(v)); }
Bytes& Bytes::tensor(const std::string& name, const std::vector<std::uint32_t>& dims,
                     const std::vector<float>& values) {
  u16(static_cast<unsigned>(name.size())).raw(name).u8(0).u8(static_cast<unsigned>(dims.size()));
  for (auto d : dims) u32(d);
  for (float v : values) f32(v);
  return *this;
}

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

CheckResult conv_oracle() {
  double worst = 0;
  struct Geo {
    Shape x, w;
    std::size_t stride, pad;
  };
  const std::vector<Geo> geos = {{{2, 3, 8, 8}, {4, 3, 3, 3}, 1, 1},
                                 {{1, 4, 7, 6}, {3, 4, 3, 3}, 2, 1},
                                 {{2, 4, 5, 5}, {6, 4, 1, 1}, 1, 0},
                                 {{1, 2, 6, 6}, {2, 2, 3, 3}, 1, 0}};
  std::uint64_t seed = 100;
  for (const auto& geo : geos) {
    auto x = random_tensor<double>(geo.x, seed++);
    auto w = random_tensor<double>(geo.w, seed++);
    auto b = random_tensor<double>({geo.w[0]}, seed++);
    Graph<double> g;
    auto y = conv2d(g, x, w, b, geo.stride, geo.pad);
    auto ref = conv2d_direct(x, w, b, geo.stride, geo.pad);
    if (ref.size() != y.numel()) return {"conv2d vs direct loops", false, "size mismatch"};
    for (std::size_t i = 0; i < ref.size(); ++i) {
      worst = std::max(worst, std::abs(y[i] - ref[i]) / std::max(1.0, std::abs(ref[i])));
    }
  }
  return {"conv2d vs direct loops", worst <= 1e-6, "max err " + fmt(worst) + " (tol 1e-6)"};
}

CheckResult warp_oracle() {
  std::size_t mismatches = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    auto fc = random_tensor<double>({1, 8, 6, 5}, 200 + seed);
    auto fs = random_tensor<double>({1, 8, 5, 4}, 300 + seed);
    Graph<double> g;
    auto ffs = flatten(g, fs);
    auto corr = correlation(g, flatten(g, fc), ffs, 1e-6);
    auto r = warp_feature(g, corr, ffs);
    auto ref = hard_warp(fc, fs);
    const std::size_t c = r.channels();
    for (std::size_t u = 0; u < ref.size(); ++u) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        ++total;
        if (r.rows[u * c + ch] != ref[u][ch]) ++mismatches;
      }
    }
  }
  return {"warp at tau=1e-6 vs hard-NN gather", mismatches == 0,
          std::to_string(mismatches) + "/" + std::to_string(total) + " entries differ (exact)"};
}

CheckResult style_oracle() {
  double worst = 0;
  {
    auto o = random_tensor<double>({1, 1, 4, 4}, 400);
    auto s = random_tensor<double>({1, 1, 4, 4}, 401);
    LayerSet ls;
    ls.style_layers = {"relu3_4"};
    Graph<double> g;
    double v = style_loss(g, TapMap<double>{{"relu3_4", o}}, TapMap<double>{{"relu3_4", s}}, ls).item();
    double ref = style_loss_oracle({o}, {s}, 3);
    worst = std::max(worst, std::abs(v - ref) / std::max(1.0, std::abs(ref)));
  }
  {
    std::vector<Tensor<double>> o = {random_tensor<double>({1, 4, 7, 6}, 402),
                                     random_tensor<double>({1, 5, 5, 5}, 403),
                                     random_tensor<double>({1, 3, 4, 4}, 404)};
    std::vector<Tensor<double>> s = {random_tensor<double>({1, 4, 6, 8}, 405),
                                     random_tensor<double>({1, 5, 6, 4}, 406),
                                     random_tensor<double>({1, 3, 3, 5}, 407)};
    LayerSet ls;
    Graph<double> g;
    TapMap<double> om, sm;
    for (std::size_t i = 0; i < 3; ++i) {
      om[ls.style_layers[i]] = o[i];
      sm[ls.style_layers[i]] = s[i];
    }
    double v = style_loss(g, om, sm, ls).item();
    double ref = style_loss_oracle(o, s, 3);
    worst = std::max(worst, std::abs(v - ref) / std::max(1.0, std::abs(ref)));
  }
  return {"style loss vs exhaustive patch-NN", worst <= 1e-5, "rel err " + fmt(worst) + " (tol 1e-5)"};
}

CheckResult content_oracle() {
  double worst = 0;
  LayerSet ls;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    std::vector<Tensor<double>> c, o;
    TapMap<double> cm, om;
    const std::vector<Shape> shapes = {{1, 6, 8, 8}, {1, 8, 4, 4}, {1, 5, 3, 2}};
    for (std::size_t i = 0; i < 3; ++i) {
      c.push_back(random_tensor<double>(shapes[i], 500 + 10 * seed + i));
      // output near the content so the positive term matters
      auto noise = random_tensor<double>(shapes[i], 600 + 10 * seed + i, -0.3, 0.3);
      Tensor<double> oo(shapes[i]);
      for (std::size_t j = 0; j < oo.numel(); ++j) oo[j] = c[i][j] + noise[j];
      o.push_back(oo);
      cm[ls.content_layers[i]] = c[i];
      om[ls.content_layers[i]] = o[i];
    }
    Graph<double> g;
    double v = content_loss(g, cm, om, ls, 0.07).item();
    double ref = content_loss_oracle(c, o, 0.07);
    worst = std::max(worst, std::abs(v - ref) / std::max(1.0, std::abs(ref)));
  }
  return {"content loss vs double-loop infoNCE", worst <= 1e-5,
          "rel err " + fmt(worst) + " (tol 1e-5)"};
}

Image random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  auto t = random_tensor<double>({h * w * 3}, seed, 0.0, 1.0);
  Image img(h, w);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<float>(t[i]);
  return img;
}

CheckResult ssim_oracle_case() {
  double worst = 0;
  // correlated pair: b is a smoothed, shifted copy of a plus noise
  Image a = random_image(24, 31, 700);
  Image b = a;
  Image n = random_image(24, 31, 701);
  for (std::size_t i = 0; i < b.pixels.size(); ++i) {
    b.pixels[i] = 0.7f * a.pixels[i] + 0.3f * n.pixels[i];
  }
  const std::vector<std::pair<Image, Image>> pairs = {
      {a, b}, {a, a}, {random_image(11, 11, 702), random_image(11, 11, 703)},
      {random_image(40, 17, 704), random_image(40, 17, 705)}};
  for (const auto& [x, y] : pairs) {
    worst = std::max(worst, std::abs(ssim(x, y) - ssim_oracle(x, y)));
  }
  return {"SSIM vs sliding-window", worst <= 1e-6, "abs err " + fmt(worst) + " (tol 1e-6)"};
}

// --- format -----------------------------------------------------------------------

template <typename Fn>
CheckResult expect_format_error(const std::string& name, FormatErrorKind kind,
                                const std::string& needle, Fn&& fn) {
  try {
    fn();
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    const bool ok = e.kind() == kind && msg.find(needle) != std::string::npos;
    return {name, ok, "\"" + msg + "\""};
  } catch (const std::exception& e) {
    return {name, false, std::string("wrong exception: ") + e.what()};
  }
  return {name, false, "no error raised"};
}

WeightStore read_bytes(const std::string& bytes) {
  std::istringstream in(bytes, std::ios::binary);
  return read_weights(in);
}

Bytes valid_two_tensor_file() {
  Bytes b;
  b.raw("DTPW").u32(1).u32(2);
  b.tensor("conv1_1.weight", {2, 1, 1, 1}, {0.5f, -1.25f});
  b.tensor("conv1_1.bias", {2}, {3.0f, 4.0f});
  return b;
}

CheckResult round_trip() {
  WeightStore store;
  store.add("a.scalar", Tensor<float>::scalar(-0.0f));
  store.add("b.vec", random_tensor<float>({17}, 800, -1e3, 1e3));
  store.add("c.map", random_tensor<float>({2, 3, 4, 5}, 801));
  store.add("d.f64", random_tensor<double>({3, 7}, 802));
  Tensor<float> special({4}, {std::numeric_limits<float>::denorm_min(), 1e-38f, -3.4e38f, 1.0f});
  store.add("e.special", special);
  std::ostringstream out(std::ios::binary);
  write_weights(store, out);
  const std::string bytes = out.str();
  WeightStore back = read_bytes(bytes);
  bool ok = back.size() == store.size();
  for (std::size_t i = 0; ok && i < store.size(); ++i) {
    const auto& [n1, t1] = store.entries()[i];
    const auto& [n2, t2] = back.entries()[i];
    ok = n1 == n2 && t1.shape == t2.shape && t1.dtype == t2.dtype &&
         t1.f32.size() == t2.f32.size() && t1.f64.size() == t2.f64.size() &&
         std::memcmp(t1.f32.data(), t2.f32.data(), t1.f32.size() * 4) == 0 &&
         std::memcmp(t1.f64.data(), t2.f64.data(), t1.f64.size() * 8) == 0;
  }
  std::ostringstream again(std::ios::binary);
  write_weights(back, again);
  ok = ok && again.str() == bytes;
  // the crafted file decodes to the values it was built from
  WeightStore crafted = read_bytes(valid_two_tensor_file().str());
  ok = ok && crafted.at("conv1_1.weight").f32 == std::vector<float>{0.5f, -1.25f} &&
       crafted.at("conv1_1.bias").f32 == std::vector<float>{3.0f, 4.0f};
  return {".dtpw round trip bit-exact", ok, std::to_string(store.size()) + " tensors"};
}

std::vector<CheckCase> build_oracles() {
  return {{"conv2d vs direct loops", conv_oracle},
          {"warp at tau=1e-6 vs hard-NN gather", warp_oracle},
          {"style loss vs exhaustive patch-NN", style_oracle},
          {"content loss vs double-loop infoNCE", content_oracle},
          {"SSIM vs sliding-window", ssim_oracle_case}};
}

std::vector<CheckCase> build_format() {
  std::vector<CheckCase> c;
  c.push_back({".dtpw round trip bit-exact", round_trip});
  c.push_back({"bad magic", [] {
                 Bytes b;
                 b.raw("XXXX").u32(1).u32(0);
                 return expect_format_error("bad magic", FormatErrorKind::kBadMagic, "bad magic",
                                            [&] { read_bytes(b.str()); });
               }});
  c.push_back({"unsupported version", [] {
                 Bytes b;
                 b.raw("DTPW").u32(2).u32(0);
                 return expect_format_error("unsupported version",
                                            FormatErrorKind::kUnsupportedVersion, "version",
                                            [&] { read_bytes(b.str()); });
               }});
  c.push_back({"truncated payload", [] {
                 std::string s = valid_two_tensor_file().str();
                 s.resize(s.size() - 3);  // cut into the bias payload
                 return expect_format_error("truncated payload", FormatErrorKind::kTruncated,
                                            "truncated payload at tensor conv1_1.bias",
                                            [&] { read_bytes(s); });
               }});
  c.push_back({"truncated header", [] {
                 std::string s = valid_two_tensor_file().str().substr(0, 10);
                 return expect_format_error("truncated header", FormatErrorKind::kTruncated,
                                            "truncated", [&] { read_bytes(s); });
               }});
  c.push_back({"trailing bytes", [] {
                 Bytes b = valid_two_tensor_file();
                 b.u8(0);
                 return expect_format_error("trailing bytes", FormatErrorKind::kTruncated,
                                            "payload length mismatch", [&] { read_bytes(b.str()); });
               }});
  c.push_back({"duplicate name", [] {
                 Bytes b;
                 b.raw("DTPW").u32(1).u32(2);
                 b.tensor("x", {1}, {1.0f});
                 b.tensor("x", {1}, {2.0f});
                 return expect_format_error("duplicate name", FormatErrorKind::kDuplicateName,
                                            "duplicate tensor name \"x\"",
                                            [&] { read_bytes(b.str()); });
               }});
  c.push_back({"unsupported dtype", [] {
                 Bytes b;
                 b.raw("DTPW").u32(1).u32(1).u16(1).raw("x").u8(7).u8(1).u32(1).f32(1.0f);
                 return expect_format_error("unsupported dtype", FormatErrorKind::kUnsupportedDtype,
                                            "dtype 7", [&] { read_bytes(b.str()); });
               }});
  return c;
}

}  // namespace

const std::vector<CheckCase>& oracle_cases() {
  static const std::vector<CheckCase> cases = build_oracles();
  return cases;
}

const std::vector<CheckCase>& format_cases() {
  static const std::vector<CheckCase> cases = build_format();
  return cases;
}

}  // namespace dtp::testing
