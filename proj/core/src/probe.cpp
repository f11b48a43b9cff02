#include "dtp/probe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include "json.hpp"

#include "dtp/error.hpp"
#include "dtp/pipeline.hpp"

namespace dtp {

ExportManifest ExportManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    ExportManifest m;
    m.source = j.value("source", "");
    if (j.contains("tensor_map")) {
      for (const auto& [k, v] : j.at("tensor_map").items()) m.tensor_map[k] = v.get<std::string>();
    }
    const auto& p = j.at("probe");
    std::filesystem::path img = p.at("image").get<std::string>();
    m.probe_image = img.is_absolute() ? img : path.parent_path() / img;
    m.tap = p.value("tap", "relu3_4");
    m.expected.mean = p.at("mean").get<double>();
    m.expected.std = p.at("std").get<double>();
    m.expected.checksum = p.at("checksum").get<double>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest " + path.string() + ": " + e.what());
  }
}

ProbeStats probe_stats(const Encoder<float>& encoder, const Image& probe, const std::string& tap) {
  Graph<float> g;
  auto taps = encoder.encode(g, normalize_for_encoder<float>(probe), {tap});
  auto x = taps.at(tap).data();
  ProbeStats s;
  double sum = 0, check = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sum += x[i];
    check += static_cast<double>(x[i]) * static_cast<double>(1 + i % 7);
  }
  const double n = static_cast<double>(x.size());
  s.mean = sum / n;
  double var = 0;
  for (float v : x) var += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(var / n);
  s.checksum = check;
  return s;
}

ProbeCheck check_probe(const WeightStore& store, const ExportManifest& manifest, double rel_tol) {
  auto encoder = Encoder<float>::from_store(store);
  ProbeCheck c;
  c.expected = manifest.expected;
  c.actual = probe_stats(encoder, load_png(manifest.probe_image), manifest.tap);
  auto rel = [](double a, double e) {
    return std::abs(a - e) / std::max(std::abs(e), 1e-12);
  };
  c.worst_rel = std::max({rel(c.actual.mean, c.expected.mean), rel(c.actual.std, c.expected.std),
                          rel(c.actual.checksum, c.expected.checksum)});
  c.ok = c.worst_rel <= rel_tol;
  return c;
}

}  // namespace dtp
