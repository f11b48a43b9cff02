#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dtp/correspondence.hpp"
#include "dtp/image.hpp"
#include "dtp/losses.hpp"
#include "dtp/nn.hpp"
#include "dtp/random.hpp"

namespace dtp {

/// Single-flag switches that remove one component of the method.
struct Ablations {
  bool no_warped_feature = false;  // decoder sees scaled Gaussian noise instead of r
  bool no_warped_image = false;    // lambda_w forced to 1
  bool no_fma = false;             // correlation uses fresh content features only
  bool no_cycle = false;           // lambda_cyc forced to 0
  bool no_generator = false;       // lambda_w forced to 0, decoder unused

  /// Comma list; accepts short (no-wf, no-wi, no-fma, no-cyc, no-gen) and long
  /// (no-warped-feature, ..., no-generator) names, '-' or '_'. Throws
  /// ContractError on an unknown name.
  static Ablations parse(std::string_view list);
  /// Canonical comma list of active flags, "none" when empty.
  std::string to_string() const;
  bool any() const;
};

struct DtpConfig {
  std::size_t size = 256;
  std::size_t iters = 1000;
  double lr = 1e-4;
  double tau = 0.07;
  double lambda_w = 1.0 / 9.0;
  double momentum_m = 0.4;
  double lambda_c = 1.0 / 5.0;
  double lambda_cyc = 1.0;
  std::uint64_t seed = 1006;
  std::size_t snapshot_every = 0;  // 0 disables snapshots
  Ablations ablations;
  std::string weights_source = "random";  // "random" or a .dtpw path
  LayerSet layers;
  std::string correlation_tap = "relu3_4";

  void validate() const;
  LossWeights loss_weights() const;
  /// "# key=value" lines echoed at the top of report.csv.
  std::string header_echo() const;
};

// --- preprocessing -----------------------------------------------------------------

inline constexpr std::array<double, 3> kEncoderMean{0.485, 0.456, 0.406};
inline constexpr std::array<double, 3> kEncoderStd{0.229, 0.224, 0.225};

/// Per-channel (x - mean) / std on a 1 x 3 x H x W tensor (differentiable).
template <typename T>
Tensor<T> normalize_for_encoder(Graph<T>& g, const Tensor<T>& image01);
template <typename T>
Tensor<T> denormalize_from_encoder(Graph<T>& g, const Tensor<T>& normalized);
/// Image entry point; throws ContractError for values outside [0, 1].
template <typename T>
Tensor<T> normalize_for_encoder(const Image& img);

// --- per-iteration building blocks ----------------------------------------------------

/// m * fresh + (1 - m) * prev, prev detached; fresh unchanged when prev is absent.
template <typename T>
Tensor<T> fma_update(Graph<T>& g, const Tensor<T>& fresh, const std::optional<Tensor<T>>& prev,
                     double momentum);

/// lambda_w * decoded + (1 - lambda_w) * warped.
template <typename T>
Tensor<T> blend_output(Graph<T>& g, const Tensor<T>& decoded, const Tensor<T>& warped,
                       double lambda_w);

template <typename T>
struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
};

/// Bias-corrected Adam over `params` (same order every call). Throws
/// ContractError if a parameter has no gradient buffer.
template <typename T>
void adam_step(AdamState<T>& state, std::vector<Tensor<T>>& params);

// --- session -----------------------------------------------------------------------------

struct IterationReport {
  std::size_t iteration = 0;  // 1-based
  double l_cont = 0;
  double l_style = 0;
  double l_cyc = 0;
  double l_total = 0;
  std::optional<std::filesystem::path> snapshot;
};

struct DtpState {
  Encoder<float> encoder;
  Decoder<float> decoder;
  AdamState<float> adam;
  std::optional<Tensor<float>> fma_feature;  // previous output feature at the correlation tap
  std::size_t iteration = 0;
  Rng rng{0, 2};
  std::optional<Tensor<float>> noise;  // unit Gaussian for the no-warped-feature ablation
};

/// One test-time training session over a fixed content/style pair.
class DtpSession {
 public:
  /// Images are resized to cfg.size. Encoder weights come from
  /// cfg.weights_source unless `encoder_weights` is given.
  DtpSession(const Image& content, const Image& style, DtpConfig cfg,
             const WeightStore* encoder_weights = nullptr);

  /// Runs one optimization iteration; `output` (if given) receives the
  /// stylized image produced during the iteration, before the update.
  IterationReport step(Image* output = nullptr);

  /// Forward pass with the current parameters and FMA state, no update.
  Image render() const;

  const DtpState& state() const noexcept { return state_; }
  const DtpConfig& config() const noexcept { return cfg_; }
  std::vector<Tensor<float>> parameters() const;

 private:
  struct Forward;
  Forward forward(Graph<float>& g) const;

  DtpConfig cfg_;
  Tensor<float> content_;      // normalized, 1x3xSxS
  Tensor<float> style_;        // normalized
  Tensor<float> style_low_;    // [0,1] style at correlation-tap resolution
  DtpState state_;
};

struct RunCallbacks {
  /// Called after every iteration with its report and output image. May fill
  /// in report.snapshot.
  std::function<void(IterationReport&, const Image&)> on_iteration;
};

struct DtpResult {
  Image output;
  std::vector<IterationReport> reports;
};

/// Full loop. Non-finite losses raise NumericError carrying the iteration.
DtpResult run_dtp(const Image& content, const Image& style, const DtpConfig& cfg,
                  const RunCallbacks& callbacks = {});

/// report.csv: config echo, then "iteration,l_cont,l_style,l_cyc,l_total" rows.
void write_report_csv(std::ostream& out, const DtpConfig& cfg,
                      const std::vector<IterationReport>& reports);
void write_report_csv(const std::filesystem::path& path, const DtpConfig& cfg,
                      const std::vector<IterationReport>& reports);

}  // namespace dtp
