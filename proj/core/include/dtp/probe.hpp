#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "dtp/image.hpp"
#include "dtp/nn.hpp"
#include "dtp/weight_store.hpp"

namespace dtp {

/// Summary of one encoder tap on a probe image. checksum is the weighted sum
/// sum_i x_i * (1 + i mod 7) over the C x H x W map in row-major order, so a
/// permuted or transposed tensor does not pass by accident.
struct ProbeStats {
  double mean = 0;
  double std = 0;  // population
  double checksum = 0;
};

/// JSON written beside an exported .dtpw:
///   {"source": ..., "tensor_map": {native: "conv1_1.weight", ...},
///    "probe": {"image": "probe.png", "tap": "relu3_4",
///              "mean": ..., "std": ..., "checksum": ...}}
/// A relative probe image path is resolved against the manifest's directory.
struct ExportManifest {
  std::string source;
  std::map<std::string, std::string> tensor_map;
  std::filesystem::path probe_image;
  std::string tap = "relu3_4";
  ProbeStats expected;

  static ExportManifest load(const std::filesystem::path& path);
};

ProbeStats probe_stats(const Encoder<float>& encoder, const Image& probe,
                       const std::string& tap = "relu3_4");

struct ProbeCheck {
  ProbeStats actual;
  ProbeStats expected;
  double worst_rel = 0;
  bool ok = false;
};

/// Runs the probe through an encoder built from `store` and compares every
/// statistic against the manifest.
ProbeCheck check_probe(const WeightStore& store, const ExportManifest& manifest,
                       double rel_tol = 1e-4);

}  // namespace dtp
