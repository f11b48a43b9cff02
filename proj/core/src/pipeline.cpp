#include "dtp/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "dtp/error.hpp"
#include "dtp/ops.hpp"

namespace dtp {

// --- ablations / config ----------------------------------------------------------

namespace {

std::string canonical_flag(std::string_view raw) {
  std::string s(raw);
  for (char& c : s) {
    if (c == '_') c = '-';
  }
  return s;
}

}  // namespace

Ablations Ablations::parse(std::string_view list) {
  Ablations a;
  std::size_t pos = 0;
  while (pos <= list.size()) {
    auto comma = list.find(',', pos);
    if (comma == std::string_view::npos) comma = list.size();
    std::string name = canonical_flag(list.substr(pos, comma - pos));
    pos = comma + 1;
    if (name.empty() || name == "none") continue;
    if (name == "no-wf" || name == "no-warped-feature") {
      a.no_warped_feature = true;
    } else if (name == "no-wi" || name == "no-warped-image") {
      a.no_warped_image = true;
    } else if (name == "no-fma") {
      a.no_fma = true;
    } else if (name == "no-cyc" || name == "no-cycle") {
      a.no_cycle = true;
    } else if (name == "no-gen" || name == "no-generator") {
      a.no_generator = true;
    } else {
      throw ContractError("unknown ablation \"" + name + "\"");
    }
  }
  return a;
}

std::string Ablations::to_string() const {
  std::string out;
  auto put = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += ',';
    out += name;
  };
  put(no_warped_feature, "no-wf");
  put(no_warped_image, "no-wi");
  put(no_fma, "no-fma");
  put(no_cycle, "no-cyc");
  put(no_generator, "no-gen");
  return out.empty() ? "none" : out;
}

bool Ablations::any() const {
  return no_warped_feature || no_warped_image || no_fma || no_cycle || no_generator;
}

void DtpConfig::validate() const {
  if (size == 0 || size % 16 != 0) {
    throw ContractError("size must be a positive multiple of 16, got " + std::to_string(size));
  }
  if (size < 32) throw ContractError("size must be at least 32");
  if (!(lr > 0) || !std::isfinite(lr)) throw ContractError("lr must be positive");
  if (!(tau > 0) || !std::isfinite(tau)) throw ContractError("tau must be positive");
  if (!(lambda_w >= 0 && lambda_w <= 1)) throw ContractError("lambda_w must be in [0, 1]");
  if (!(momentum_m >= 0 && momentum_m <= 1)) throw ContractError("momentum must be in [0, 1]");
  if (ablations.no_warped_image && ablations.no_generator) {
    throw ContractError("no-wi and no-gen together leave no output");
  }
  loss_weights().validate();
  layers.validate();
  bool known = false;
  for (const auto& t : encoder_tap_names()) known = known || t == correlation_tap;
  if (!known) throw ContractError("unknown correlation tap " + correlation_tap);
}

LossWeights DtpConfig::loss_weights() const {
  LossWeights w;
  w.lambda_c = lambda_c;
  w.lambda_cyc = ablations.no_cycle ? 0.0 : lambda_cyc;
  w.tau = tau;
  return w;
}

std::string DtpConfig::header_echo() const {
  std::ostringstream os;
  os << "# size=" << size << '\n'
     << "# iters=" << iters << '\n'
     << "# lr=" << lr << '\n'
     << "# tau=" << tau << '\n'
     << "# lambda_w=" << lambda_w << '\n'
     << "# momentum=" << momentum_m << '\n'
     << "# lambda_c=" << lambda_c << '\n'
     << "# lambda_cyc=" << lambda_cyc << '\n'
     << "# seed=" << seed << '\n'
     << "# snapshot_every=" << snapshot_every << '\n'
     << "# weights=" << weights_source << '\n'
     << "# ablate=" << ablations.to_string() << '\n';
  return os.str();
}

// --- preprocessing ------------------------------------------------------------------

template <typename T>
Tensor<T> normalize_for_encoder(Graph<T>& g, const Tensor<T>& image01) {
  std::vector<T> mul(3), add(3);
  for (int c = 0; c < 3; ++c) {
    mul[c] = static_cast<T>(1.0 / kEncoderStd[c]);
    add[c] = static_cast<T>(-kEncoderMean[c] / kEncoderStd[c]);
  }
  return channel_affine(g, image01, mul, add);
}

template <typename T>
Tensor<T> denormalize_from_encoder(Graph<T>& g, const Tensor<T>& normalized) {
  std::vector<T> mul(3), add(3);
  for (int c = 0; c < 3; ++c) {
    mul[c] = static_cast<T>(kEncoderStd[c]);
    add[c] = static_cast<T>(kEncoderMean[c]);
  }
  return channel_affine(g, normalized, mul, add);
}

template <typename T>
Tensor<T> normalize_for_encoder(const Image& img) {
  for (float v : img.pixels) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw ContractError("image values must lie in [0, 1] before normalization");
    }
  }
  Graph<T> g;
  return normalize_for_encoder(g, image_to_tensor<T>(img));
}

// --- building blocks -------------------------------------------------------------------

template <typename T>
Tensor<T> fma_update(Graph<T>& g, const Tensor<T>& fresh, const std::optional<Tensor<T>>& prev,
                     double momentum) {
  if (!prev) return fresh;
  if (prev->shape() != fresh.shape()) {
    throw ContractError("fma_update: shape " + shape_str(prev->shape()) + " vs " +
                        shape_str(fresh.shape()));
  }
  Tensor<T> held = prev->requires_grad() ? prev->detach() : *prev;
  return axpby(g, static_cast<T>(momentum), fresh, static_cast<T>(1.0 - momentum), held);
}

template <typename T>
Tensor<T> blend_output(Graph<T>& g, const Tensor<T>& decoded, const Tensor<T>& warped,
                       double lambda_w) {
  return axpby(g, static_cast<T>(lambda_w), decoded, static_cast<T>(1.0 - lambda_w), warped);
}

template <typename T>
void adam_step(AdamState<T>& s, std::vector<Tensor<T>>& params) {
  if (s.m.empty()) {
    for (const auto& p : params) {
      s.m.emplace_back(p.numel(), T(0));
      s.v.emplace_back(p.numel(), T(0));
    }
  }
  if (s.m.size() != params.size()) {
    throw ContractError("adam_step: parameter list changed between steps");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) {
      throw ContractError("adam_step: parameter #" + std::to_string(i) + " " +
                          shape_str(params[i].shape()) + " has no gradient");
    }
  }
  ++s.step;
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  const T b1 = static_cast<T>(s.beta1), b2 = static_cast<T>(s.beta2);
  const T step_size = static_cast<T>(s.lr / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(s.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].data();
    auto gr = params[i].grad();
    auto& m = s.m[i];
    auto& v = s.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (T(1) - b1) * gr[j];
      v[j] = b2 * v[j] + (T(1) - b2) * gr[j] * gr[j];
      w[j] -= step_size * m[j] / (std::sqrt(v[j]) * inv_sqrt_bc2 + eps);
    }
  }
}

// --- session ---------------------------------------------------------------------------

struct DtpSession::Forward {
  TapMap<float> content_taps;
  TapMap<float> style_taps;
  TapMap<float> output_taps;
  Tensor<float> output;  // clamped, [0, 1]
  Tensor<float> l_cont;
  Tensor<float> l_style;
  Tensor<float> l_cyc;
  Tensor<float> l_total;
};

DtpSession::DtpSession(const Image& content, const Image& style, DtpConfig cfg,
                       const WeightStore* encoder_weights)
    : cfg_(std::move(cfg)) {
  cfg_.validate();
  const std::size_t s = cfg_.size;
  Image c = (content.height == s && content.width == s) ? content : resize_bilinear(content, s, s);
  Image st = (style.height == s && style.width == s) ? style : resize_bilinear(style, s, s);
  content_ = normalize_for_encoder<float>(c);
  style_ = normalize_for_encoder<float>(st);

  if (encoder_weights) {
    state_.encoder = Encoder<float>::from_store(*encoder_weights);
  } else if (cfg_.weights_source == "random") {
    state_.encoder = Encoder<float>::random(cfg_.seed);
  } else {
    state_.encoder = Encoder<float>::from_store(load_weights(cfg_.weights_source));
  }
  state_.decoder = Decoder<float>::random(cfg_.seed);
  state_.encoder.set_requires_grad(true);
  state_.decoder.set_requires_grad(true);
  state_.adam.lr = cfg_.lr;
  state_.rng = Rng(cfg_.seed, 2);

  // style pixels at the correlation grid, for the warped-image branch
  Graph<float> g;
  auto probe = state_.encoder.encode(g, content_, {cfg_.correlation_tap});
  const auto& tap = probe.at(cfg_.correlation_tap);
  Image low = resize_bilinear(st, tap.dim(2), tap.dim(3));
  style_low_ = image_to_tensor<float>(low);

  if (cfg_.ablations.no_warped_feature) {
    Shape shape = tap.shape();
    std::vector<float> noise(shape_numel(shape));
    for (auto& v : noise) v = static_cast<float>(state_.rng.normal());
    state_.noise = Tensor<float>(shape, std::move(noise));
  }
}

std::vector<Tensor<float>> DtpSession::parameters() const {
  auto p = state_.encoder.parameters();
  auto d = state_.decoder.parameters();
  p.insert(p.end(), d.begin(), d.end());
  return p;
}

namespace {

// Rescales unit noise so every channel matches the spread of `like`.
Tensor<float> matched_noise(const Tensor<float>& unit, const Tensor<float>& like) {
  const std::size_t c = like.dim(1), hw = like.dim(2) * like.dim(3);
  Tensor<float> out(unit.shape());
  auto src = like.data();
  auto u = unit.data();
  auto dst = out.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean = 0;
    for (std::size_t i = 0; i < hw; ++i) mean += src[ch * hw + i];
    mean /= static_cast<double>(hw);
    double var = 0;
    for (std::size_t i = 0; i < hw; ++i) {
      double d = src[ch * hw + i] - mean;
      var += d * d;
    }
    const double sd = std::sqrt(var / static_cast<double>(hw));
    for (std::size_t i = 0; i < hw; ++i) {
      dst[ch * hw + i] = static_cast<float>(u[ch * hw + i] * sd);
    }
  }
  return out;
}

}  // namespace

DtpSession::Forward DtpSession::forward(Graph<float>& g) const {
  const auto& a = cfg_.ablations;
  std::set<std::string> taps(cfg_.layers.content_layers.begin(), cfg_.layers.content_layers.end());
  taps.insert(cfg_.layers.style_layers.begin(), cfg_.layers.style_layers.end());
  taps.insert(cfg_.correlation_tap);

  Forward f;
  f.content_taps = state_.encoder.encode(g, content_, taps);
  f.style_taps = state_.encoder.encode(g, style_, taps);

  const Tensor<float>& fresh = f.content_taps.at(cfg_.correlation_tap);
  Tensor<float> fc_map = a.no_fma ? fresh : fma_update(g, fresh, state_.fma_feature, cfg_.momentum_m);
  auto fc = flatten(g, fc_map);
  auto fs = flatten(g, f.style_taps.at(cfg_.correlation_tap));
  auto corr = correlation(g, fc, fs, static_cast<float>(cfg_.tau));
  Tensor<float> w = warp_weights(g, corr);

  Tensor<float> warped = apply_warp_image(g, w, style_low_, fc.height, fc.width);
  warped = resize_bilinear(g, warped, cfg_.size, cfg_.size);

  Tensor<float> raw;
  if (a.no_generator) {
    raw = warped;
  } else {
    Tensor<float> r = unflatten(g, apply_warp(g, w, fs, fc.height, fc.width));
    if (a.no_warped_feature) r = matched_noise(*state_.noise, r);
    Tensor<float> decoded = state_.decoder.decode(g, r);
    const double lw = a.no_warped_image ? 1.0 : cfg_.lambda_w;
    raw = blend_output(g, decoded, warped, lw);
  }
  f.output = clamp(g, raw, 0.0f, 1.0f);
  f.output_taps = state_.encoder.encode(g, normalize_for_encoder(g, f.output), taps);

  const auto weights = cfg_.loss_weights();
  f.l_cont = content_loss(g, f.content_taps, f.output_taps, cfg_.layers,
                          static_cast<float>(cfg_.tau));
  f.l_style = style_loss(g, f.output_taps, f.style_taps, cfg_.layers);
  auto cyc = cycle_reconstruct(g, corr, fs, fc);
  f.l_cyc = cycle_loss(g, fc.rows, fs.rows, cyc.r_c.rows, cyc.r_s.rows);
  f.l_total = total_loss(g, f.l_cont, f.l_style, f.l_cyc, weights);
  return f;
}

IterationReport DtpSession::step(Image* output) {
  IterationReport rep;
  rep.iteration = state_.iteration + 1;
  auto params = parameters();
  for (auto& p : params) p.zero_grad();

  Graph<float> g;
  Forward f;
  try {
    f = forward(g);
  } catch (const NumericError& e) {
    throw NumericError(e.what(), static_cast<long>(state_.iteration));
  }
  rep.l_cont = f.l_cont.item();
  rep.l_style = f.l_style.item();
  rep.l_cyc = f.l_cyc.item();
  rep.l_total = f.l_total.item();
  if (!std::isfinite(rep.l_total)) {
    throw NumericError("non-finite total loss", static_cast<long>(state_.iteration));
  }
  if (output) *output = tensor_to_image(f.output);

  try {
    g.backward(f.l_total);
  } catch (const NumericError& e) {
    throw NumericError(e.what(), static_cast<long>(state_.iteration));
  }
  adam_step(state_.adam, params);

  state_.fma_feature = f.output_taps.at(cfg_.correlation_tap).detach();
  ++state_.iteration;
  return rep;
}

Image DtpSession::render() const {
  Graph<float> g;
  auto f = forward(g);
  return tensor_to_image(f.output);
}

DtpResult run_dtp(const Image& content, const Image& style, const DtpConfig& cfg,
                  const RunCallbacks& callbacks) {
  DtpSession session(content, style, cfg);
  DtpResult result;
  result.reports.reserve(cfg.iters);
  Image frame;
  for (std::size_t i = 0; i < cfg.iters; ++i) {
    IterationReport rep = session.step(callbacks.on_iteration ? &frame : nullptr);
    if (callbacks.on_iteration) callbacks.on_iteration(rep, frame);
    result.reports.push_back(std::move(rep));
  }
  result.output = session.render();
  return result;
}

void write_report_csv(std::ostream& out, const DtpConfig& cfg,
                      const std::vector<IterationReport>& reports) {
  out << cfg.header_echo();
  out << "iteration,l_cont,l_style,l_cyc,l_total\n";
  out << std::setprecision(9);
  for (const auto& r : reports) {
    out << r.iteration << ',' << r.l_cont << ',' << r.l_style << ',' << r.l_cyc << ','
        << r.l_total << '\n';
  }
}

void write_report_csv(const std::filesystem::path& path, const DtpConfig& cfg,
                      const std::vector<IterationReport>& reports) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_report_csv(out, cfg, reports);
  if (!out) throw IoError("failed writing " + path.string());
}

#define DTP_INSTANTIATE(T)                                                                      \
  template Tensor<T> normalize_for_encoder<T>(Graph<T>&, const Tensor<T>&);                     \
  template Tensor<T> denormalize_from_encoder<T>(Graph<T>&, const Tensor<T>&);                  \
  template Tensor<T> normalize_for_encoder<T>(const Image&);                                    \
  template Tensor<T> fma_update<T>(Graph<T>&, const Tensor<T>&, const std::optional<Tensor<T>>&, \
                                   double);                                                     \
  template Tensor<T> blend_output<T>(Graph<T>&, const Tensor<T>&, const Tensor<T>&, double);    \
  template void adam_step<T>(AdamState<T>&, std::vector<Tensor<T>>&);

DTP_INSTANTIATE(float)
DTP_INSTANTIATE(double)

#undef DTP_INSTANTIATE

}  // namespace dtp
