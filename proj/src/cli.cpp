#include "unfmri/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>

#include "unfmri/checkpoint.hpp"
#include "unfmri/data.hpp"
#include "unfmri/log.hpp"
#include "unfmri/verify.hpp"

namespace unfmri::cli {

namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ContainerError(ContainerErrorCode::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ContainerError(ContainerErrorCode::Io, "cannot write " + path.string());
  f << text;
  if (!f) throw ContainerError(ContainerErrorCode::Io, "write failed for " + path.string());
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw ContainerError(ContainerErrorCode::Io, "cannot create directory " + dir.string());
  }
}

std::string show(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string format_losses(const std::vector<double>& losses) {
  std::string s = "# step loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) s += std::to_string(i + 1) + ' ' + show(losses[i]) + '\n';
  return s;
}

/// Maps exceptions thrown while running a subcommand to exit codes.
int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NonFiniteLossError& e) {
    err << "error: " << e.what() << '\n';
    return kNonFinite;
  } catch (const MismatchError& e) {
    err << "error: " << e.what() << '\n';
    return kMismatch;
  } catch (const ContainerError& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kInternal;
  }
}

std::vector<std::string> split_commas(const std::vector<std::string>& items) {
  std::vector<std::string> out;
  for (const std::string& item : items) {
    std::stringstream ss(item);
    std::string part;
    while (std::getline(ss, part, ',')) {
      if (!part.empty()) out.push_back(part);
    }
  }
  return out;
}

// ---- maskgen -----------------------------------------------------------------------------------

struct MaskgenArgs {
  std::string kind;
  int accel = 4;
  int size = 64;
  int height = 0;
  int width = 0;
  std::uint64_t seed = 0;
  int acs = -1;
  std::string out = "mask.umr";
};

int cmd_maskgen(const MaskgenArgs& a, std::ostream& out) {
  const int h = a.height > 0 ? a.height : a.size;
  const int w = a.width > 0 ? a.width : a.size;
  const MaskKind kind = parse_mask_kind(a.kind);
  const UndersamplingMask mask = make_mask(kind, h, w, a.accel, a.seed, a.acs < 0 ? default_acs_lines(kind, w) : a.acs);
  save_mask(a.out, mask);
  out << "mask " << mask.id() << " sampled " << mask.sampled() << " of " << mask.pattern.size() << " fraction "
      << std::fixed << std::setprecision(4) << mask.fraction() << '\n';
  return kOk;
}

// ---- phantom -------------------------------------------------------------------------------------

int cmd_phantom(const std::string& kind, int size, std::uint64_t seed, const std::string& path, std::ostream& out) {
  const ComplexImage image = make_phantom(parse_phantom_kind(kind), size, size, seed);
  save_image(path, image);
  out << "phantom " << kind << " seed " << seed << ' ' << size << 'x' << size << " -> " << path << '\n';
  return kOk;
}

// ---- train ---------------------------------------------------------------------------------------

struct LoadedConfig {
  RunConfig config;
  fs::path base_dir;
};

LoadedConfig load_config(const std::string& path, const std::string& out_override) {
  LoadedConfig lc{read_run_config(path), fs::path(path).parent_path()};
  if (!out_override.empty()) lc.config.out_dir = out_override;
  return lc;
}

/// Digest of everything that influences results; the output location is left out.
std::string config_hash(RunConfig cfg) {
  cfg.out_dir.clear();
  return fnv1a_hex(format_run_config(cfg));
}

/// Writes a manifest listing each artifact with its digest.
void write_run_manifest(const fs::path& dir, const std::string& command, const std::string& config_hash,
                        const std::vector<std::string>& artifacts) {
  std::ostringstream os;
  os << "# run manifest\ncommand " << command << "\nconfig_hash " << config_hash << '\n';
  for (const std::string& name : artifacts) os << "artifact " << name << ' ' << fnv1a_hex(read_text(dir / name)) << '\n';
  write_text(dir / "manifest.txt", os.str());
}

int cmd_train(const std::string& config_path, const std::string& out_override, std::ostream& out) {
  const LoadedConfig lc = load_config(config_path, out_override);
  const RunConfig& cfg = lc.config;
  const fs::path dir = cfg.out_dir;
  make_dir(dir);

  const std::string resolved = format_run_config(cfg);
  const std::string hash = config_hash(cfg);
  write_text(dir / "resolved.ini", resolved);

  const RunData data = load_run_data(cfg.data, lc.base_dir);
  const UndersamplingMask mask = cfg.mask.build(cfg.model.height, cfg.model.width);
  save_mask(dir / "mask.umr", mask);

  UnfoldModel model(cfg.model, cfg.train.seed);
  const std::map<std::string, std::string> provenance{{"config_hash", hash}, {"mask", mask.id()}};
  std::vector<std::string> artifacts{"resolved.ini", "mask.umr", "mask.umr.meta"};

  auto on_epoch = [&](const EpochRecord& rec, const UnfoldModel& m) {
    if (rec.epoch % cfg.train.checkpoint_every != 0) return;
    auto extra = provenance;
    extra["epoch"] = std::to_string(rec.epoch);
    const std::string name = "epoch_" + std::to_string(rec.epoch) + ".ckpt";
    save_checkpoint(dir / name, make_checkpoint(m, snapshot(m), extra));
    artifacts.push_back(name);
  };
  const TrainResult result = train(model, data.train, data.val, cfg.mask, cfg.train, on_epoch);

  write_text(dir / "trace.txt", format_trace(result.trace));
  write_text(dir / "step_losses.txt", format_losses(result.step_losses));
  auto final_extra = provenance;
  final_extra["epoch"] = std::to_string(result.trace.empty() ? 0 : result.trace.back().epoch);
  save_checkpoint(dir / "final.ckpt", make_checkpoint(model, snapshot(model), final_extra));
  auto best_extra = provenance;
  best_extra["epoch"] = std::to_string(result.best_epoch);
  save_checkpoint(dir / "best.ckpt", make_checkpoint(model, result.best, best_extra));

  restore(model, result.best);
  ReconstructionReport report = evaluate(model, evaluation_split(data), mask);
  report.convergence_trace = result.trace;
  report.config_hash = hash;
  write_text(dir / "report.txt", format_report(report));

  artifacts.insert(artifacts.end(), {"trace.txt", "step_losses.txt", "final.ckpt", "best.ckpt", "report.txt"});
  write_run_manifest(dir, "train", hash, artifacts);

  out << "trained " << to_string(cfg.model.variant) << " steps " << result.step_losses.size() << " best epoch "
      << result.best_epoch << " psnr " << std::fixed << std::setprecision(3) << report.mean_psnr() << " (zero-filled "
      << report.mean_zero_filled_psnr() << ") -> " << dir.string() << '\n';
  return kOk;
}

// ---- reconstruct -----------------------------------------------------------------------------

struct ReconstructArgs {
  std::string checkpoint;
  std::string mask;
  std::string measurement;
  std::string image;
  std::string truth;
  std::string variant;
  std::string out = "recon";
};

int cmd_reconstruct(const ReconstructArgs& a, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  if (!a.variant.empty() && parse_variant(a.variant) != ckpt.config.variant) {
    throw MismatchError("checkpoint holds variant " + to_string(ckpt.config.variant) + ", requested " + a.variant);
  }
  const UndersamplingMask mask = load_mask(a.mask);
  if (mask.height != ckpt.config.height || mask.width != ckpt.config.width) {
    throw MismatchError("mask is " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                        " but the checkpoint expects " + std::to_string(ckpt.config.height) + "x" +
                        std::to_string(ckpt.config.width));
  }
  const ForwardOperator op(mask);
  const fs::path dir = a.out;
  make_dir(dir);

  KSpaceMeasurement y;
  if (!a.image.empty()) {
    const ComplexImage image = load_image(a.image);
    if (image.height() != mask.height || image.width() != mask.width) throw MismatchError("image and mask sizes differ");
    y = op.forward(image);
    save_measurement(dir / "measurement.umr", y);
  } else {
    y = load_measurement(a.measurement, op);
  }

  const UnfoldModel model = instantiate(ckpt);
  const ComplexImage recon = reconstruct(y, op, model);
  const ComplexImage zero_filled = op.adjoint(y);
  save_image(dir / "recon.umr", recon);
  save_magnitude(dir / "magnitude.umr", recon.magnitude(), recon.height(), recon.width());
  save_image(dir / "zero_filled.umr", zero_filled);

  std::ostringstream rep;
  rep << std::setprecision(17);
  rep << "# reconstruction report\n"
      << "variant " << to_string(ckpt.config.variant) << '\n'
      << "mask " << mask.id() << '\n'
      << "parameters " << model.parameter_count() << '\n';
  if (!a.truth.empty()) {
    const ComplexImage truth = load_image(a.truth);
    if (truth.height() != recon.height() || truth.width() != recon.width()) {
      throw MismatchError("truth and reconstruction sizes differ");
    }
    const std::vector<double> rm = recon.magnitude();
    const std::vector<double> tm = truth.magnitude();
    std::vector<double> error(rm.size());
    for (std::size_t i = 0; i < rm.size(); ++i) error[i] = std::abs(rm[i] - tm[i]);
    save_magnitude(dir / "error_map.umr", error, recon.height(), recon.width());
    const double p = psnr(recon, truth);
    rep << "psnr " << p << "\nssim " << ssim(recon, truth) << "\nzero_filled_psnr " << psnr(zero_filled, truth)
        << "\nzero_filled_ssim " << ssim(zero_filled, truth) << '\n';
    out << "psnr " << std::fixed << std::setprecision(3) << p << '\n';
  } else {
    rep << "psnr absent\nssim absent\nzero_filled_psnr absent\nzero_filled_ssim absent\n";
    out << "no truth supplied; metrics absent\n";
  }
  write_text(dir / "report.txt", rep.str());
  out << "reconstruction written to " << dir.string() << '\n';
  return kOk;
}

// ---- ablate --------------------------------------------------------------------------------------

int cmd_ablate(const std::string& config_path, const std::string& out_override, std::ostream& out) {
  const LoadedConfig lc = load_config(config_path, out_override);
  const RunConfig& cfg = lc.config;
  const fs::path dir = cfg.out_dir;
  make_dir(dir);
  const std::string resolved = format_run_config(cfg);
  write_text(dir / "resolved.ini", resolved);
  const RunData data = load_run_data(cfg.data, lc.base_dir);

  std::vector<std::string> artifacts{"resolved.ini"};
  const std::vector<AblationRow> rows = run_ablation(cfg, data, [&](const AblationRow& row) {
    const std::string name = to_string(row.variant);
    out << name << (row.ok ? " done" : " failed: " + row.error) << '\n';
    if (!row.ok) return;
    write_text(dir / ("trace_" + name + ".txt"), format_trace(row.trace));
    write_text(dir / ("samples_" + name + ".txt"), format_report(row.report));
    artifacts.push_back("trace_" + name + ".txt");
    artifacts.push_back("samples_" + name + ".txt");
  });
  const std::string table = format_ablation_table(rows);
  write_text(dir / "ablation.txt", table);
  artifacts.push_back("ablation.txt");
  write_run_manifest(dir, "ablate", config_hash(cfg), artifacts);
  out << table;
  const bool any_failed = std::any_of(rows.begin(), rows.end(), [](const AblationRow& r) { return !r.ok; });
  return any_failed ? kNonFinite : kOk;
}

// ---- check ---------------------------------------------------------------------------------------

int cmd_check(const std::vector<std::string>& only, const std::string& fault, std::uint64_t seed, std::ostream& out,
              std::ostream& err) {
  VerifyOptions opts;
  opts.seed = seed;
  if (fault == "eta-sign") {
    opts.fault = Fault::EtaSign;
    // the injected fault trips the eta range warning on every instance
    if (log::level() < log::Level::Error) log::set_level(log::Level::Error);
  } else if (fault != "none") {
    throw std::invalid_argument("unknown fault '" + fault + "' (expected none or eta-sign)");
  }
  const std::vector<std::string> groups = split_commas(only);
  for (const std::string& g : groups) {
    const auto& known = check_groups();
    if (std::find(known.begin(), known.end(), g) == known.end()) {
      throw std::invalid_argument("unknown check group '" + g + "'");
    }
  }
  std::vector<std::string> failed;
  for (const CheckResult& r : run_checks(groups, opts)) {
    out << (r.passed ? "PASS " : "FAIL ") << r.name << "  " << r.detail << "  (" << std::fixed << std::setprecision(2)
        << r.seconds << " s)\n";
    if (!r.passed) failed.push_back(r.name);
  }
  if (failed.empty()) return kOk;
  err << "failed checks:";
  for (const std::string& f : failed) err << ' ' << f;
  err << '\n';
  return kChecksFailed;
}

// ---- plot ----------------------------------------------------------------------------------------

int cmd_plot(const std::vector<std::string>& traces, const std::vector<std::string>& reports, const std::string& out_dir,
             std::ostream& out) {
  if (traces.empty() && reports.empty()) throw std::invalid_argument("plot: give at least one --trace or --report");
  const fs::path dir = out_dir;
  make_dir(dir);
  auto label_of = [](const std::string& path) { return fs::path(path).stem().string(); };

  if (!traces.empty()) {
    std::vector<Series> psnr_series;
    std::vector<Series> loss_series;
    for (const std::string& path : traces) {
      const std::vector<EpochRecord> trace = parse_trace(read_text(path));
      if (trace.empty()) throw std::invalid_argument("trace " + path + " has no records");
      Series p{label_of(path), {}, {}};
      Series l{label_of(path), {}, {}};
      for (const EpochRecord& r : trace) {
        p.x.push_back(r.epoch);
        p.y.push_back(r.val_psnr);
        l.x.push_back(r.epoch);
        l.y.push_back(r.train_loss);
      }
      psnr_series.push_back(std::move(p));
      loss_series.push_back(std::move(l));
    }
    write_text(dir / "convergence.svg", line_plot_svg(psnr_series, "validation PSNR", "epoch", "PSNR (dB)"));
    write_text(dir / "loss.svg", line_plot_svg(loss_series, "training loss", "epoch", "loss"));
    out << "wrote convergence.svg and loss.svg\n";
  }

  if (!reports.empty()) {
    std::vector<std::pair<std::string, BoxSummary>> psnr_boxes;
    std::vector<std::pair<std::string, BoxSummary>> ssim_boxes;
    std::ostringstream summary;
    summary << std::setprecision(17) << "# label metric count min q1 median q3 max mean\n";
    for (const std::string& path : reports) {
      const std::vector<SampleMetrics> samples = parse_report(read_text(path));
      if (samples.empty()) throw std::invalid_argument("report " + path + " has no sample lines");
      std::vector<double> p;
      std::vector<double> s;
      for (const SampleMetrics& m : samples) {
        p.push_back(m.psnr);
        s.push_back(m.ssim);
      }
      for (const auto& [metric, values, boxes] :
           {std::tuple{"psnr", &p, &psnr_boxes}, std::tuple{"ssim", &s, &ssim_boxes}}) {
        const BoxSummary b = box_summary(*values);
        boxes->emplace_back(label_of(path), b);
        summary << label_of(path) << ' ' << metric << ' ' << b.count << ' ' << b.min << ' ' << b.q1 << ' ' << b.median
                << ' ' << b.q3 << ' ' << b.max << ' ' << b.mean << '\n';
      }
    }
    write_text(dir / "box_psnr.svg", box_plot_svg(psnr_boxes, "per-sample PSNR (dB)"));
    write_text(dir / "box_ssim.svg", box_plot_svg(ssim_boxes, "per-sample SSIM"));
    write_text(dir / "box_summary.txt", summary.str());
    out << "wrote box_psnr.svg, box_ssim.svg and box_summary.txt\n";
  }
  return kOk;
}

// ---- svg helpers ---------------------------------------------------------------------------------

constexpr int kWidth = 640;
constexpr int kHeight = 400;
constexpr int kLeft = 70;
constexpr int kRight = 20;
constexpr int kTop = 40;
constexpr int kBottom = 50;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Axis {
  double lo;
  double hi;
};

Axis padded(double lo, double hi) {
  if (!(hi > lo)) {
    const double d = std::abs(lo) > 0 ? 0.05 * std::abs(lo) : 1.0;
    return {lo - d, hi + d};
  }
  const double d = 0.05 * (hi - lo);
  return {lo - d, hi + d};
}

std::string frame(const std::string& title, const std::string& x_label, const std::string& y_label, Axis y) {
  std::ostringstream os;
  os << std::setprecision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << escape(title)
     << "</text>\n"
     << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << kWidth - kLeft - kRight << "\" height=\""
     << kHeight - kTop - kBottom << "\" fill=\"none\" stroke=\"black\"/>\n"
     << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 12 << "\" text-anchor=\"middle\" font-size=\"12\">"
     << escape(x_label) << "</text>\n"
     << "<text x=\"16\" y=\"" << kHeight / 2 << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
     << kHeight / 2 << ")\">" << escape(y_label) << "</text>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = y.lo + (y.hi - y.lo) * i / 4.0;
    const double py = kHeight - kBottom - (kHeight - kTop - kBottom) * i / 4.0;
    os << "<text x=\"" << kLeft - 6 << "\" y=\"" << py + 4 << "\" text-anchor=\"end\" font-size=\"10\">" << v
       << "</text>\n";
  }
  return os.str();
}

}  // namespace

// ---- shared helpers ------------------------------------------------------------------------------

void save_measurement(const fs::path& path, const KSpaceMeasurement& y) {
  write_container(path, make_complex_container({static_cast<std::uint32_t>(y.height), static_cast<std::uint32_t>(y.width)},
                                               y.values, DType::C128));
}

KSpaceMeasurement load_measurement(const fs::path& path, const ForwardOperator& op) {
  const TensorContainer c = read_container(path);
  if (!is_complex(c.dtype) || c.shape.size() != 2) {
    throw ContainerError(ContainerErrorCode::ShapeMismatch, "measurement must be a complex (H, W) container");
  }
  if (static_cast<int>(c.shape[0]) != op.height() || static_cast<int>(c.shape[1]) != op.width()) {
    throw MismatchError("measurement and mask sizes differ");
  }
  try {
    return make_measurement(op, container_complex(c));
  } catch (const std::invalid_argument& e) {
    throw MismatchError(std::string("measurement does not fit the mask: ") + e.what());
  }
}

const std::vector<Sample>& evaluation_split(const RunData& data) {
  if (!data.test.empty()) return data.test;
  if (!data.val.empty()) return data.val;
  return data.train;
}

std::vector<AblationRow> run_ablation(const RunConfig& config, const RunData& data, const AblationProgress& progress) {
  std::vector<AblationRow> rows;
  const UndersamplingMask mask = config.mask.build(config.model.height, config.model.width);
  for (Variant v : config.ablate_variants) {
    AblationRow row;
    row.variant = v;
    try {
      UnfoldConfig mc = config.model;
      mc.variant = v;
      UnfoldModel model(mc, config.train.seed);
      row.parameter_count = model.parameter_count();
      const TrainResult result = train(model, data.train, data.val, config.mask, config.train);
      restore(model, result.best);
      row.trace = result.trace;
      row.report = evaluate(model, evaluation_split(data), mask);
      row.report.convergence_trace = result.trace;
      row.ok = true;
    } catch (const std::exception& e) {
      row.error = e.what();
      log::error("variant " + to_string(v) + " failed: " + row.error);
    }
    if (progress) progress(row);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(11) << "variant" << std::right << std::setw(10) << "psnr" << std::setw(9) << "ssim"
     << std::setw(10) << "zf_psnr" << std::setw(12) << "params" << "  status\n";
  for (const AblationRow& r : rows) {
    os << std::left << std::setw(11) << to_string(r.variant) << std::right << std::fixed;
    if (r.ok) {
      os << std::setw(10) << std::setprecision(3) << r.report.mean_psnr() << std::setw(9) << std::setprecision(4)
         << r.report.mean_ssim() << std::setw(10) << std::setprecision(3) << r.report.mean_zero_filled_psnr()
         << std::setw(12) << r.parameter_count << "  ok\n";
    } else {
      os << std::setw(10) << "-" << std::setw(9) << "-" << std::setw(10) << "-" << std::setw(12) << r.parameter_count
         << "  failed: " << r.error << '\n';
    }
  }
  return os.str();
}

std::vector<SampleMetrics> parse_report(const std::string& text) {
  std::vector<SampleMetrics> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("sample ", 0) != 0) continue;
    std::istringstream ls(line.substr(7));
    SampleMetrics m;
    if (!(ls >> m.id >> m.psnr >> m.ssim >> m.zero_filled_psnr >> m.zero_filled_ssim)) {
      throw std::invalid_argument("malformed report line: " + line);
    }
    out.push_back(m);
  }
  return out;
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw std::invalid_argument("percentile of an empty set");
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("percentile level must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double h = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

BoxSummary box_summary(const std::vector<double>& values) {
  BoxSummary b;
  b.count = values.size();
  b.min = percentile(values, 0.0);
  b.q1 = percentile(values, 0.25);
  b.median = percentile(values, 0.5);
  b.q3 = percentile(values, 0.75);
  b.max = percentile(values, 1.0);
  b.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  return b;
}

std::string line_plot_svg(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                          const std::string& y_label) {
  double xlo = INFINITY, xhi = -INFINITY, ylo = INFINITY, yhi = -INFINITY;
  for (const Series& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      xlo = std::min(xlo, s.x[i]);
      xhi = std::max(xhi, s.x[i]);
      ylo = std::min(ylo, s.y[i]);
      yhi = std::max(yhi, s.y[i]);
    }
  }
  if (!std::isfinite(xlo)) xlo = xhi = ylo = yhi = 0.0;
  const Axis xa = xhi > xlo ? Axis{xlo, xhi} : padded(xlo, xhi);
  const Axis ya = padded(ylo, yhi);
  auto px = [&](double x) { return kLeft + (x - xa.lo) / (xa.hi - xa.lo) * (kWidth - kLeft - kRight); };
  auto py = [&](double y) { return kHeight - kBottom - (y - ya.lo) / (ya.hi - ya.lo) * (kHeight - kTop - kBottom); };

  std::ostringstream os;
  os << frame(title, x_label, y_label, ya) << std::setprecision(6);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = kPalette[k % std::size(kPalette)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < series[k].x.size(); ++i) {
      if (std::isfinite(series[k].y[i])) os << px(series[k].x[i]) << ',' << py(series[k].y[i]) << ' ';
    }
    os << "\"/>\n";
    os << "<text x=\"" << kWidth - kRight - 8 << "\" y=\"" << kTop + 16 + 14 * k
       << "\" text-anchor=\"end\" font-size=\"11\" fill=\"" << color << "\">" << escape(series[k].label)
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string box_plot_svg(const std::vector<std::pair<std::string, BoxSummary>>& boxes, const std::string& title) {
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& [label, b] : boxes) {
    lo = std::min(lo, b.min);
    hi = std::max(hi, b.max);
  }
  if (!std::isfinite(lo)) lo = hi = 0.0;
  const Axis ya = padded(lo, hi);
  auto py = [&](double y) { return kHeight - kBottom - (y - ya.lo) / (ya.hi - ya.lo) * (kHeight - kTop - kBottom); };
  const double slot = static_cast<double>(kWidth - kLeft - kRight) / std::max<std::size_t>(1, boxes.size());

  std::ostringstream os;
  os << frame(title, "", "", ya) << std::setprecision(6);
  for (std::size_t k = 0; k < boxes.size(); ++k) {
    const BoxSummary& b = boxes[k].second;
    const char* color = kPalette[k % std::size(kPalette)];
    const double cx = kLeft + slot * (k + 0.5);
    const double half = std::min(40.0, slot * 0.3);
    os << "<line x1=\"" << cx << "\" y1=\"" << py(b.min) << "\" x2=\"" << cx << "\" y2=\"" << py(b.max)
       << "\" stroke=\"black\"/>\n"
       << "<rect x=\"" << cx - half << "\" y=\"" << py(b.q3) << "\" width=\"" << 2 * half << "\" height=\""
       << py(b.q1) - py(b.q3) << "\" fill=\"" << color << "\" fill-opacity=\"0.5\" stroke=\"black\"/>\n"
       << "<line x1=\"" << cx - half << "\" y1=\"" << py(b.median) << "\" x2=\"" << cx + half << "\" y2=\""
       << py(b.median) << "\" stroke=\"black\" stroke-width=\"2\"/>\n"
       << "<text x=\"" << cx << "\" y=\"" << kHeight - kBottom + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
       << escape(boxes[k].first) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

// ---- entry point ---------------------------------------------------------------------------------

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Deep-unfolding reconstruction for undersampled MRI"};
  app.name("unfmri");
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Only print warnings and errors");

  MaskgenArgs mg;
  auto* maskgen = app.add_subcommand("maskgen", "Generate a k-space undersampling mask");
  maskgen->add_option("--kind", mg.kind, "cartesian_random | equispaced_fraction | radial")->required();
  maskgen->add_option("--accel", mg.accel, "Acceleration factor R")->capture_default_str();
  maskgen->add_option("--size", mg.size, "Square image side")->capture_default_str();
  maskgen->add_option("--height", mg.height, "Image height (overrides --size)");
  maskgen->add_option("--width", mg.width, "Image width (overrides --size)");
  maskgen->add_option("--seed", mg.seed, "Random seed")->capture_default_str();
  maskgen->add_option("--acs", mg.acs, "Autocalibration lines (-1 = kind default)")->capture_default_str();
  maskgen->add_option("--out", mg.out, "Output mask file")->capture_default_str();

  std::string ph_kind = "random_ellipses";
  std::string ph_out = "phantom.umr";
  int ph_size = 64;
  std::uint64_t ph_seed = 0;
  auto* phantom = app.add_subcommand("phantom", "Write a synthetic complex-valued phantom image");
  phantom->add_option("--kind", ph_kind, "shepp_logan | random_ellipses")->capture_default_str();
  phantom->add_option("--size", ph_size, "Square image side")->capture_default_str();
  phantom->add_option("--seed", ph_seed, "Random seed")->capture_default_str();
  phantom->add_option("--out", ph_out, "Output image file")->capture_default_str();

  std::string train_config, train_out;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a run configuration");
  train_cmd->add_option("--config", train_config, "Run configuration file")->required();
  train_cmd->add_option("--out", train_out, "Output directory (overrides out.dir)");

  ReconstructArgs rc;
  auto* recon = app.add_subcommand("reconstruct", "Reconstruct from a measurement or a fully sampled image");
  recon->add_option("--checkpoint", rc.checkpoint, "Trained checkpoint")->required();
  recon->add_option("--mask", rc.mask, "Undersampling mask file")->required();
  auto* meas_opt = recon->add_option("--measurement", rc.measurement, "k-space measurement file");
  auto* image_opt = recon->add_option("--image", rc.image, "Complex image to undersample");
  meas_opt->excludes(image_opt);
  recon->add_option("--truth", rc.truth, "Reference image for metrics");
  recon->add_option("--variant", rc.variant, "Expected model variant");
  recon->add_option("--out", rc.out, "Output directory")->capture_default_str();

  std::string ablate_config, ablate_out;
  auto* ablate = app.add_subcommand("ablate", "Train and compare several variants");
  ablate->add_option("--config", ablate_config, "Run configuration file")->required();
  ablate->add_option("--out", ablate_out, "Output directory (overrides out.dir)");

  std::vector<std::string> only;
  std::string fault = "none";
  std::uint64_t check_seed = 0;
  auto* check = app.add_subcommand("check", "Run the numerical verification battery");
  check->add_option("--only", only, "Groups to run: smw, adjoint, gradients, reduction, convergence");
  check->add_option("--inject-fault", fault, "none | eta-sign")->capture_default_str();
  check->add_option("--seed", check_seed, "Seed for random instances")->capture_default_str();

  std::vector<std::string> traces, reports;
  std::string plot_out = "plots";
  auto* plot = app.add_subcommand("plot", "Render traces and per-sample reports as SVG");
  plot->add_option("--trace", traces, "Epoch trace file (repeatable)");
  plot->add_option("--report", reports, "Per-sample report file (repeatable)");
  plot->add_option("--out", plot_out, "Output directory")->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }
  log::set_level(quiet ? log::Level::Warning : log::Level::Info);

  return guarded(err, [&]() -> int {
    if (maskgen->parsed()) return cmd_maskgen(mg, out);
    if (phantom->parsed()) return cmd_phantom(ph_kind, ph_size, ph_seed, ph_out, out);
    if (train_cmd->parsed()) return cmd_train(train_config, train_out, out);
    if (recon->parsed()) {
      if (rc.measurement.empty() && rc.image.empty()) {
        throw std::invalid_argument("reconstruct needs --measurement or --image");
      }
      return cmd_reconstruct(rc, out);
    }
    if (ablate->parsed()) return cmd_ablate(ablate_config, ablate_out, out);
    if (check->parsed()) return cmd_check(only, fault, check_seed, out, err);
    return cmd_plot(traces, reports, plot_out, out);
  });
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace unfmri::cli
