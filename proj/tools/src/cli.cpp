#include "dtp_cli/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <ostream>

#include "dtp/error.hpp"
#include "dtp/image.hpp"
#include "dtp/pipeline.hpp"
#include "dtp/weight_store.hpp"

namespace dtp::cli {

namespace fs = std::filesystem;

namespace {

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

struct RunFlags {
  std::string content, style, out;
  std::string weights = "random";
  std::string ablate;
  std::optional<double> lambda_w;
  bool metrics = false;
  DtpConfig cfg;
};

struct SsimFlags {
  std::string a, b;
  std::size_t size = 0;
};

int cmd_run(RunFlags& f, std::ostream& out) {
  DtpConfig& cfg = f.cfg;
  cfg.weights_source = f.weights;
  cfg.ablations = Ablations::parse(f.ablate);
  // 0.111111 on the command line means the exact 1/9 default
  if (f.lambda_w && std::abs(*f.lambda_w - 1.0 / 9.0) >= 1e-6) cfg.lambda_w = *f.lambda_w;
  cfg.validate();

  Image content = load_png(f.content);
  Image style = load_png(f.style);
  fs::path dir(f.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());

  RunCallbacks cb;
  if (cfg.snapshot_every > 0) {
    cb.on_iteration = [&](IterationReport& rep, const Image& frame) {
      if (rep.iteration % cfg.snapshot_every != 0) return;
      fs::path p = dir / ("iter_" + std::to_string(rep.iteration) + ".png");
      save_png(frame, p);
      rep.snapshot = p;
    };
  }
  DtpResult result = run_dtp(content, style, cfg, cb);
  save_png(result.output, dir / "final.png");
  write_report_csv(dir / "report.csv", cfg, result.reports);
  if (f.metrics) {
    Image ref = resize_bilinear(content, cfg.size, cfg.size);
    out << "SSIM: " << fixed4(ssim(result.output, ref)) << '\n';
  }
  return kExitOk;
}

int cmd_ssim(const SsimFlags& f, std::ostream& out, std::ostream& err) {
  Image a = load_png(f.a);
  Image b = load_png(f.b);
  if (f.size > 0) {
    a = resize_bilinear(a, f.size, f.size);
    b = resize_bilinear(b, f.size, f.size);
  } else if (a.height != b.height || a.width != b.width) {
    err << "error: image sizes differ (" << a.height << "x" << a.width << " vs " << b.height
        << "x" << b.width << "); pass --size\n";
    return kExitUsage;
  }
  out << "SSIM: " << fixed4(ssim(a, b)) << '\n';
  return kExitOk;
}

int cmd_inspect(const std::string& path, std::ostream& out) {
  WeightStore store = load_weights(path);
  for (const auto& [name, t] : store.entries()) {
    out << name << ' ' << shape_str(t.shape) << ' ' << dtype_name(t.dtype) << '\n';
  }
  char crc[16];
  std::snprintf(crc, sizeof crc, "%08x", file_crc32(path));
  out << "crc32 " << crc << " tensors " << store.size() << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Test-time trained photorealistic style transfer", "dtp"};
  app.require_subcommand(1);

  RunFlags rf;
  auto* run = app.add_subcommand("run", "optimize a content/style pair");
  run->add_option("--content", rf.content, "content PNG")->required();
  run->add_option("--style", rf.style, "style PNG")->required();
  run->add_option("--out", rf.out, "output directory")->required();
  run->add_option("--weights", rf.weights, "encoder .dtpw or 'random'")->capture_default_str();
  run->add_option("--size", rf.cfg.size, "working resolution")->capture_default_str();
  run->add_option("--iters", rf.cfg.iters, "optimization steps")->capture_default_str();
  run->add_option("--lr", rf.cfg.lr, "Adam learning rate")->capture_default_str();
  run->add_option("--tau", rf.cfg.tau, "softmax temperature")->capture_default_str();
  run->add_option("--lambda-w", rf.lambda_w, "decoder weight in the blend (default 0.111111)");
  run->add_option("--lambda-c", rf.cfg.lambda_c, "style weight")->capture_default_str();
  run->add_option("--lambda-cyc", rf.cfg.lambda_cyc, "cycle weight")->capture_default_str();
  run->add_option("--momentum", rf.cfg.momentum_m, "feature moving average m")->capture_default_str();
  run->add_option("--seed", rf.cfg.seed, "initialization seed")->capture_default_str();
  run->add_option("--snapshot-every", rf.cfg.snapshot_every, "write iter_N.png every N steps");
  run->add_option("--ablate", rf.ablate, "comma list: no-wf,no-wi,no-fma,no-cyc,no-gen");
  run->add_flag("--metrics", rf.metrics, "print SSIM(output, content)");

  SsimFlags sf;
  auto* ss = app.add_subcommand("ssim", "structural similarity of two PNGs");
  ss->add_option("a", sf.a)->required();
  ss->add_option("b", sf.b)->required();
  ss->add_option("--size", sf.size, "resize both to size x size first");

  std::string weights_path;
  auto* iw = app.add_subcommand("inspect-weights", "list tensors in a .dtpw file");
  iw->add_option("path", weights_path)->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (*run) return cmd_run(rf, out);
    if (*ss) return cmd_ssim(sf, out, err);
    return cmd_inspect(weights_path, out);
  } catch (const ContractError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << " at iteration " << e.iteration() << '\n';
    return kExitNumeric;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  }
}

}  // namespace dtp::cli
