// Acceptance battery: one PASS/FAIL line per criterion. `acceptance --only 1,2,9` runs a subset.

#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "support.hpp"
#include "unfmri/cli.hpp"
#include "unfmri/config.hpp"
#include "unfmri/log.hpp"
#include "unfmri/msst.hpp"
#include "unfmri/pgsa.hpp"
#include "unfmri/train_eval.hpp"
#include "unfmri/unfold.hpp"
#include "unfmri/verify.hpp"

using namespace unfmri;
using namespace testing;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

const fs::path kQuickstart = fs::path(UNFMRI_SOURCE_DIR) / "configs" / "quickstart.ini";

// 1. data consistency against the dense regularized least-squares solve
Verdict smw_oracle() {
  const auto t0 = Clock::now();
  Gen g(101);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int h = uniform_int(g, 8, 16), w = uniform_int(g, 8, 16);
    const UndersamplingMask m = random_mask(g, h, w, uniform(g, 0.05, 0.95));
    const ForwardOperator op(m);
    const ComplexImage z = random_image(g, h, w);
    const KSpaceMeasurement y = op.forward(random_image(g, h, w));
    const double eta = uniform(g, 0.02, 0.98);
    const double mu = (1.0 - eta) / eta;
    const ComplexImage x = data_consistency(op, z, y, eta);
    worst = std::max(worst, rel_diff(x.values(), dense_consistency(m, z.values(), y.values, mu)));
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-8 && secs < 30.0, "max rel error " + fmt(worst) + " over 100 instances in " + fmt(secs, 3) + " s"};
}

// 2. adjointness of the undersampled operator and unitarity of the transform
Verdict adjointness() {
  Gen g(202);
  double worst_adj = 0.0, worst_norm = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int h = uniform_int(g, 8, 24), w = uniform_int(g, 8, 24);
    const ForwardOperator op(random_mask(g, h, w, uniform(g, 0.05, 1.0)));
    const ComplexImage x = random_image(g, h, w);
    const KSpaceMeasurement y = op.forward(random_image(g, h, w));
    const KSpaceMeasurement fx = op.forward(x);
    const ComplexImage aty = op.adjoint(y);
    Complex lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      lhs += fx.values[i] * std::conj(y.values[i]);
      rhs += x[i] * std::conj(aty[i]);
    }
    worst_adj = std::max(worst_adj, std::abs(lhs - rhs) / std::max(std::abs(lhs), 1e-12));
    const std::vector<Complex> f = fft2(x.values(), h, w, false);
    double nf = 0.0;
    for (const Complex& c : f) nf += std::norm(c);
    worst_norm = std::max(worst_norm, std::abs(std::sqrt(nf) - x.norm()) / x.norm());
  }
  return {worst_adj <= 1e-6 && worst_norm <= 1e-6,
          "1000 trials: adjoint rel " + fmt(worst_adj) + ", norm rel " + fmt(worst_norm)};
}

// 3. zero momentum reduces the accelerated variant to the plain one
Verdict reduction() {
  Gen g(303);
  int equal = 0;
  const MaskKind kinds[] = {MaskKind::CartesianRandom, MaskKind::EquispacedFraction, MaskKind::Radial};
  const DenoiserKind denoisers[] = {DenoiserKind::ConvUnet, DenoiserKind::Msst, DenoiserKind::Identity};
  for (int trial = 0; trial < 20; ++trial) {
    UnfoldConfig c;
    c.num_stages = uniform_int(g, 1, 4);
    c.num_splits = 2;
    c.channels = 4 * uniform_int(g, 1, 2);
    c.height = c.width = uniform_int(g, 0, 1) ? 16 : 32;
    c.window = 2;
    c.heads = 2;
    c.pgsa_groups = 2;
    c.denoiser = denoisers[uniform_int(g, 0, 2)];
    const std::uint64_t seed = g();
    c.variant = Variant::Hqs;
    const UnfoldModel hqs(c, seed);
    c.variant = Variant::Ahqs;
    UnfoldModel ahqs(c, seed);
    for (auto& st : ahqs.stages()) st.beta->mutable_value()[0] = 0.0;
    // radial 4x needs room for its spokes beyond the calibration lines
    const MaskKind kind = c.height == 16 ? MaskKind::CartesianRandom : kinds[uniform_int(g, 0, 2)];
    const ForwardOperator op(make_mask(kind, c.height, c.width, 4, g(), 2));
    const KSpaceMeasurement y = op.forward(random_image(g, c.height, c.width));
    if (run_model(y, op, hqs).value().values() == run_model(y, op, ahqs).value().values()) ++equal;
  }
  return {equal == 20, std::to_string(equal) + "/20 configurations bit-identical"};
}

// 4. momentum speeds up the convex splitting iteration
//
// The oracle runs the same iteration independently in the frequency domain, where data
// consistency and the quadratic prox are both diagonal, and solves the fixed point per
// frequency in closed form.
struct SpectralInstance {
  std::vector<Complex> c, y;
  std::vector<char> m;
  double eta, tg;
};

std::vector<Complex> spectral_fixed_point(const SpectralInstance& s) {
  std::vector<Complex> x(s.c.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = s.m[i] ? ((1.0 - s.eta) * s.tg * s.c[i] + s.eta * (1.0 + s.tg) * s.y[i]) / (s.tg + s.eta) : s.c[i];
  }
  return x;
}

int spectral_iterations(const SpectralInstance& s, const std::vector<Complex>& x_star, bool accelerated, double tol,
                        int max_iter) {
  const std::size_t n = s.c.size();
  std::vector<Complex> z(n), z_prev, z_hat, x(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = s.m[i] ? s.y[i] : 0.0;
  z_prev = z_hat = z;
  double ref = 0.0;
  for (const Complex& v : x_star) ref += std::norm(v);
  ref = std::sqrt(ref);
  for (int k = 1; k <= max_iter; ++k) {
    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = s.m[i] ? z_hat[i] + s.eta * (s.y[i] - z_hat[i]) : z_hat[i];
      err += std::norm(x[i] - x_star[i]);
    }
    if (std::sqrt(err) / ref <= tol) return k;
    z_prev = z;
    const double beta = accelerated ? (k - 1.0) / (k + 2.0) : 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      z[i] = (x[i] + s.tg * s.c[i]) / (1.0 + s.tg);
      z_hat[i] = z[i] + beta * (z[i] - z_prev[i]);
    }
  }
  return max_iter + 1;
}

Verdict acceleration() {
  Gen g(404);
  int not_worse = 0, faster = 0, oracle_agree = 0;
  double worst_fixed = 0.0, ratio_sum = 0.0;
  for (int i = 0; i < 50; ++i) {
    const ConvexInstance inst = random_convex_instance(32, g());
    const int n = 32;
    SpectralInstance s;
    s.c = direct_dft(inst.c.values(), n, n, false);
    s.y = inst.y.values;
    s.m.resize(s.c.size());
    for (int u = 0; u < n; ++u) {
      for (int v = 0; v < n; ++v) s.m[u * n + v] = sampled_unshifted(inst.mask, u, v);
    }
    s.eta = inst.eta;
    s.tg = inst.tau_gamma;
    const std::vector<Complex> x_hat = spectral_fixed_point(s);
    const ComplexImage x_star = convex_fixed_point(inst);
    worst_fixed = std::max(worst_fixed, rel_diff(direct_dft(x_star.values(), n, n, false), x_hat));

    const int plain = splitting_iterations(inst, x_star, false, 1e-6, 5000);
    const int accel = splitting_iterations(inst, x_star, true, 1e-6, 5000);
    const int plain_ref = spectral_iterations(s, x_hat, false, 1e-6, 5000);
    const int accel_ref = spectral_iterations(s, x_hat, true, 1e-6, 5000);
    // threshold crossings may shift by one iteration under rounding
    if (std::abs(plain - plain_ref) <= 1 && std::abs(accel - accel_ref) <= 1) ++oracle_agree;
    if (accel <= plain) ++not_worse;
    if (accel < 0.8 * plain) ++faster;
    ratio_sum += static_cast<double>(accel) / plain;
  }
  const bool ok = worst_fixed <= 1e-8 && oracle_agree == 50 && not_worse == 50 && faster >= 40;
  return {ok, "accelerated <= plain on " + std::to_string(not_worse) + "/50, < 0.8x on " + std::to_string(faster) +
                  "/50, mean ratio " + fmt(ratio_sum / 50) + ", oracle counts agree on " +
                  std::to_string(oracle_agree) + "/50, fixed point rel " + fmt(worst_fixed)};
}

// 5. finite-difference gradient checks
Verdict gradients() {
  bool ok = true;
  std::string detail;
  for (const std::string module : {"pgsa", "msst", "stage"}) {
    const GradCheckReport r = gradient_check(module);
    ok = ok && r.passed(1e-4) && r.entries.size() >= 20;
    detail += (detail.empty() ? "" : ", ") + module + " " + fmt(r.max_rel_error, 3);
  }
  return {ok, "max rel error " + detail};
}

// 6. shapes and attention ranges
Verdict invariants() {
  Gen g(606);
  int failures = 0;
  std::vector<std::string> notes;
  auto expect = [&](bool cond, const std::string& what) {
    if (!cond) {
      ++failures;
      if (notes.size() < 3) notes.push_back(what);
    }
  };
  double row_err = 0.0, w_min = 1.0, w_max = 0.0;
  auto track = [&](const Tensor& w) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      w_min = std::min(w_min, w[i]);
      w_max = std::max(w_max, w[i]);
    }
  };
  for (int trial = 0; trial < 10; ++trial) {
    Rng rng(g());
    const int s = 2;
    const int c = 4 * uniform_int(g, 1, 2);
    const int h = 8 * uniform_int(g, 1, 3), w = 8 * uniform_int(g, 1, 3);
    const std::vector<int> shape{c, h, w};
    const Var x(random_tensor(g, shape, 2.0));

    const Pgsa p({c, s, 2, 2}, rng);
    expect(p(x).shape() == shape, "pgsa shape");
    const Tensor pw = p.attention(p.pyramid_features(x)).value();
    track(pw);
    SqueezeExcitation se(c, 2, rng);
    expect(se(x).shape() == shape, "se shape");
    expect(cse_forward(x, se).shape() == shape, "cse shape");
    track(se.weights(x).value());

    const HalfShuffleBlock hb(c, 2, 4, 2, rng);
    expect(hb(x).shape() == shape, "hsab shape");
    const Msst ms({c, s, 4, 2, h, w, 2, 2}, rng);
    expect(ms(x).shape() == shape, "msst shape");
    const ConvUnet un(c, rng);
    if (h % 4 == 0 && w % 4 == 0) expect(un(x).shape() == shape, "unet shape");

    const Tensor q = random_tensor(g, {c, 8, 8}, 4.0), k = random_tensor(g, {c, 8, 8}, 4.0);
    for (int tile = 0; tile < 4; ++tile) {
      for (int head = 0; head < 2; ++head) {
        const std::vector<double> a = window_attention_weights(q, k, 2, 4, tile, head);
        for (int r = 0; r < 16; ++r) {
          double sum = 0.0;
          for (int col = 0; col < 16; ++col) sum += a[r * 16 + col];
          row_err = std::max(row_err, std::abs(sum - 1.0));
        }
      }
    }
  }
  // stages and full models keep the feature and image shapes
  for (Variant v : {Variant::Hqs, Variant::Ahqs, Variant::Gahqs, Variant::Baseline1, Variant::Baseline2,
                    Variant::Baseline3}) {
    UnfoldConfig c;
    c.variant = v;
    c.num_stages = 2;
    c.num_splits = 2;
    c.channels = 4;
    c.height = c.width = 16;
    c.window = 2;
    c.heads = 2;
    c.pgsa_groups = 2;
    const UnfoldModel model(c, 7);
    const ForwardOperator op(make_mask(MaskKind::CartesianRandom, 16, 16, 4, 0, 2));
    const KSpaceMeasurement y = op.forward(random_image(g, 16, 16));
    const StageState s0 = lift(op.adjoint(y), c.channels);
    const StageState s1 = run_stage(v, s0, model.stages()[0], y, op);
    const std::vector<int> fshape{4, 16, 16};
    expect(s1.x.shape() == fshape && s1.z.shape() == fshape && s1.z_hat.shape() == fshape, to_string(v) + " stage");
    expect(run_model(y, op, model).shape() == std::vector<int>{2, 16, 16}, to_string(v) + " model");
  }
  expect(w_min > 0.0 && w_max < 1.0, "attention weights outside (0, 1)");
  expect(row_err <= 1e-6, "attention rows");
  std::string detail = "channel weights in [" + fmt(w_min) + ", " + fmt(w_max) + "], max row-sum error " +
                       fmt(row_err) + ", " + std::to_string(failures) + " violations";
  for (const auto& n : notes) detail += "; " + n;
  return {failures == 0, detail};
}

double report_header_value(const std::string& text, const std::string& key) {
  std::istringstream in(text);
  std::string token;
  while (in >> token) {
    if (token == key && in >> token) return std::stod(token);
  }
  return NAN;
}

// 7. desk-scale reconstruction through the CLI
Verdict desk_reconstruction() {
  const fs::path dir = scratch_dir("acceptance_desk");
  fs::remove_all(dir);
  std::ostringstream out, err;
  const auto t0 = Clock::now();
  const int code = cli::run({"-q", "train", "--config", kQuickstart.string(), "--out", (dir / "run").string()}, out, err);
  const double secs = seconds_since(t0);
  if (code != cli::kOk) return {false, "train exited " + std::to_string(code) + ": " + err.str()};
  const std::string report = slurp(dir / "run" / "report.txt");
  const double mean = report_header_value(report, "mean_psnr");
  const double zf = report_header_value(report, "zero_filled_psnr");
  return {mean >= zf + 3.0 && secs <= 900.0, "mean PSNR " + fmt(mean, 5) + " dB vs zero-filled " + fmt(zf, 5) +
                                                  " dB (gain " + fmt(mean - zf, 3) + "), " + fmt(secs, 4) + " s"};
}

// 8. ablation ordering over three seeds
Verdict ablation_ordering() {
  RunConfig cfg = read_run_config(kQuickstart);
  cfg.ablate_variants = {Variant::Gahqs, Variant::Baseline1, Variant::Baseline2, Variant::Baseline3};
  const RunData data = load_run_data(cfg.data, kQuickstart.parent_path());
  std::map<Variant, double> sum;
  std::string per_seed;
  for (std::uint64_t seed : {0, 1, 2}) {
    cfg.train.seed = seed;
    for (const cli::AblationRow& row : cli::run_ablation(cfg, data)) {
      if (!row.ok) return {false, to_string(row.variant) + " failed at seed " + std::to_string(seed) + ": " + row.error};
      sum[row.variant] += row.report.mean_psnr();
      per_seed += " " + to_string(row.variant) + "@" + std::to_string(seed) + "=" + fmt(row.report.mean_psnr(), 5);
    }
  }
  const double ga = sum[Variant::Gahqs] / 3;
  bool ok = true;
  std::string detail = "mean PSNR gahqs " + fmt(ga, 5);
  for (Variant b : {Variant::Baseline1, Variant::Baseline2, Variant::Baseline3}) {
    const double m = sum[b] / 3;
    ok = ok && ga >= m;
    detail += ", " + to_string(b) + " " + fmt(m, 5);
  }
  return {ok, detail + " |" + per_seed};
}

// 9. metrics against the scalar references
Verdict metrics() {
  Gen g(909);
  double worst_psnr = 0.0, worst_ssim = 0.0;
  bool edges = true;
  for (int trial = 0; trial < 50; ++trial) {
    const int h = uniform_int(g, 11, 48), w = uniform_int(g, 11, 48);
    const std::vector<double> truth = random_real(g, h * w, 0.0, 1.0);
    std::vector<double> recon = truth;
    const double noise = uniform(g, 0.001, 0.5);
    for (double& v : recon) v = std::max(0.0, v + uniform(g, -noise, noise));
    worst_psnr = std::max(worst_psnr, std::abs(psnr(recon, truth) - reference_psnr(recon, truth)));
    worst_ssim = std::max(worst_ssim, std::abs(ssim(recon, truth, h, w) - reference_ssim(recon, truth, h, w)));
    edges = edges && psnr(truth, truth) == kPsnrCap && ssim(truth, truth, h, w) == 1.0;
  }
  return {worst_psnr <= 1e-6 && worst_ssim <= 1e-6 && edges,
          "max abs error psnr " + fmt(worst_psnr) + ", ssim " + fmt(worst_ssim) + ", identical pairs give " +
              fmt(kPsnrCap) + " and 1.0: " + (edges ? "yes" : "no")};
}

// 10. two seeded training runs produce identical files
Verdict determinism() {
  const fs::path dir = scratch_dir("acceptance_determinism");
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "cfg.ini") << "[model]\nvariant = gahqs\nk = 2\nC = 8\nS = 2\nwindow = 4\nheads = 2\n"
                                    "[mask]\nkind = radial\nR = 4\n"
                                    "[train]\nepochs = 3\nbatch_size = 2\nlearning_rate = 2e-3\nseed = 5\n"
                                    "[data]\nsize = 32\ntrain_count = 4\nval_count = 2\n";
  for (const char* run : {"a", "b"}) {
    std::ostringstream out, err;
    const int code = cli::run({"-q", "train", "--config", (dir / "cfg.ini").string(), "--out", (dir / run).string()}, out, err);
    if (code != cli::kOk) return {false, std::string("run ") + run + " exited " + std::to_string(code)};
  }
  int compared = 0;
  std::vector<std::string> differing;
  for (const auto& entry : fs::directory_iterator(dir / "a")) {
    const std::string name = entry.path().filename().string();
    if (entry.path().extension() != ".ckpt" && name != "trace.txt" && name != "step_losses.txt") continue;
    ++compared;
    if (slurp(entry.path()) != slurp(dir / "b" / name)) differing.push_back(name);
  }
  std::string detail = std::to_string(compared) + " checkpoint/trace files compared, " +
                       std::to_string(differing.size()) + " differ";
  for (const auto& d : differing) detail += " " + d;
  return {compared >= 5 && differing.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  log::set_level(log::Level::Error);
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--only" && i + 1 < argc) {
      std::istringstream list(argv[++i]);
      std::string item;
      while (std::getline(list, item, ',')) only.insert(std::stoi(item));
    }
  }
  const std::vector<std::pair<int, Verdict (*)()>> criteria{
      {1, smw_oracle},   {2, adjointness},          {3, reduction},         {4, acceleration}, {5, gradients},
      {6, invariants},   {7, desk_reconstruction},  {8, ablation_ordering}, {9, metrics},      {10, determinism}};
  int failed = 0;
  for (const auto& [id, fn] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    std::cout << (v.pass ? "PASS " : "FAIL ") << id << ' ' << v.detail << " [" << fmt(seconds_since(t0), 3) << " s]"
              << std::endl;
    if (!v.pass) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
