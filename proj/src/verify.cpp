#include "unfmri/verify.hpp"

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "unfmri/nn.hpp"
#include "unfmri/train_eval.hpp"
#include "unfmri/unfold.hpp"

namespace unfmri {

namespace {

using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;

double unit(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * unit(rng); }

ComplexImage random_image(int h, int w, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<Complex> v(static_cast<std::size_t>(h) * w);
  for (Complex& c : v) c = Complex(n(rng), n(rng));
  return ComplexImage(h, w, std::move(v));
}

CVector to_vector(const std::vector<Complex>& v) {
  CVector out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[i];
  return out;
}

// Rows of the orthonormal 2-D DFT matrix for the sampled (unshifted) frequencies.
CMatrix sampled_dft_rows(const ForwardOperator& op) {
  const int h = op.height();
  const int w = op.width();
  const std::size_t n = static_cast<std::size_t>(h) * w;
  std::vector<std::size_t> freqs;
  for (std::size_t f = 0; f < n; ++f) {
    if (op.sampled(f)) freqs.push_back(f);
  }
  CMatrix rows(static_cast<Eigen::Index>(freqs.size()), static_cast<Eigen::Index>(n));
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (std::size_t r = 0; r < freqs.size(); ++r) {
    const int u = static_cast<int>(freqs[r] / w);
    const int v = static_cast<int>(freqs[r] % w);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double phase = -2.0 * std::numbers::pi *
                             (static_cast<double>((u * y) % h) / h + static_cast<double>((v * x) % w) / w);
        rows(static_cast<Eigen::Index>(r), y * w + x) = std::polar(scale, phase);
      }
    }
  }
  return rows;
}

CVector sampled_values(const ForwardOperator& op, const KSpaceMeasurement& y) {
  std::vector<Complex> v;
  for (std::size_t f = 0; f < y.values.size(); ++f) {
    if (op.sampled(f)) v.push_back(y.values[f]);
  }
  return to_vector(v);
}

double relative(const CVector& a, const CVector& b) {
  const double d = b.norm();
  return (a - b).norm() / (d > 0.0 ? d : 1.0);
}

template <class F>
CheckResult timed(const std::string& name, F&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r = body();
  r.name = name;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace

const std::vector<std::string>& check_groups() {
  static const std::vector<std::string> groups{"smw", "adjoint", "gradients", "reduction", "convergence"};
  return groups;
}

UndersamplingMask random_pattern_mask(int height, int width, double density, std::uint64_t seed) {
  Rng rng(seed);
  UndersamplingMask m;
  m.height = height;
  m.width = width;
  m.kind = MaskKind::CartesianRandom;
  m.seed = seed;
  m.pattern.resize(static_cast<std::size_t>(height) * width);
  for (auto& p : m.pattern) p = unit(rng) < density ? 1 : 0;
  m.pattern[static_cast<std::size_t>(height / 2) * width + width / 2] = 1;
  m.acceleration = std::max(1, static_cast<int>(std::lround(1.0 / density)));
  return m;
}

CheckResult check_smw(int instances, const VerifyOptions& options) {
  return timed("smw_vs_dense", [&] {
    Rng rng = derive_rng(options.seed, 0x51);
    double worst = 0.0;
    for (int i = 0; i < instances; ++i) {
      const int h = 8 + static_cast<int>(rng() % 9);
      const int w = 8 + static_cast<int>(rng() % 9);
      const ForwardOperator op(random_pattern_mask(h, w, uniform(rng, 0.15, 0.6), rng()));
      const ComplexImage truth = random_image(h, w, rng);
      const ComplexImage z_hat = random_image(h, w, rng);
      const KSpaceMeasurement y = op.forward(truth);
      const double eta = uniform(rng, 0.05, 0.95);
      const double mu = (1.0 - eta) / eta;
      const double applied = options.fault == Fault::EtaSign ? -eta : eta;
      const ComplexImage fast = data_consistency(op, z_hat, y, applied);

      const CMatrix rows = sampled_dft_rows(op);
      const Eigen::Index n = rows.cols();
      const CMatrix a = rows.adjoint() * rows + mu * CMatrix::Identity(n, n);
      const CVector rhs = rows.adjoint() * sampled_values(op, y) + mu * to_vector(z_hat.values());
      const CVector dense = a.llt().solve(rhs);
      worst = std::max(worst, relative(to_vector(fast.values()), dense));
    }
    std::ostringstream os;
    os << instances << " instances, max relative error " << worst;
    return CheckResult{"", worst <= 1e-8, os.str(), 0.0};
  });
}

CheckResult check_adjoint(int trials, const VerifyOptions& options) {
  return timed("adjoint_unitarity", [&] {
    Rng rng = derive_rng(options.seed, 0xad);
    double worst_adj = 0.0;
    double worst_norm = 0.0;
    for (int t = 0; t < trials; ++t) {
      const int h = 8 + static_cast<int>(rng() % 25);
      const int w = 8 + static_cast<int>(rng() % 25);
      const ForwardOperator op(random_pattern_mask(h, w, uniform(rng, 0.1, 0.9), rng()));
      const ComplexImage x = random_image(h, w, rng);
      const ComplexImage full = random_image(h, w, rng);
      std::vector<Complex> yv = full.values();
      op.apply_mask(yv);
      const KSpaceMeasurement y = make_measurement(op, yv);
      const KSpaceMeasurement fx = op.forward(x);
      const ComplexImage fty = op.adjoint(y);
      Complex lhs = 0.0;
      Complex rhs = 0.0;
      for (std::size_t i = 0; i < yv.size(); ++i) {
        lhs += fx.values[i] * std::conj(y.values[i]);
        rhs += x[i] * std::conj(fty[i]);
      }
      worst_adj = std::max(worst_adj, std::abs(lhs - rhs) / std::max(std::abs(lhs), 1e-300));
      const std::vector<Complex> spectrum = fft2(x.values(), h, w, false);
      double s2 = 0.0;
      for (const Complex& v : spectrum) s2 += std::norm(v);
      worst_norm = std::max(worst_norm, std::abs(std::sqrt(s2) - x.norm()) / x.norm());
    }
    std::ostringstream os;
    os << trials << " trials, adjoint error " << worst_adj << ", norm error " << worst_norm;
    return CheckResult{"", worst_adj <= 1e-6 && worst_norm <= 1e-6, os.str(), 0.0};
  });
}

std::vector<CheckResult> check_gradients_battery(const VerifyOptions& options) {
  std::vector<CheckResult> out;
  for (const std::string module : {"pgsa", "msst", "stage", "full_model"}) {
    out.push_back(timed("gradient_" + module, [&] {
      GradCheckConfig cfg;
      cfg.seed = options.seed;
      const GradCheckReport rep = gradient_check(module, cfg);
      std::ostringstream os;
      os << rep.entries.size() << " entries, max relative error " << rep.max_rel_error;
      return CheckResult{"", rep.passed(1e-4), os.str(), 0.0};
    }));
  }
  out.push_back(timed("gradient_zero_corner", [&] {
    GradCheckConfig cfg;
    cfg.seed = options.seed;
    cfg.zero_corner = true;
    bool finite = true;
    for (const std::string module : {"pgsa", "msst", "stage"}) finite = finite && gradient_check(module, cfg).all_finite;
    return CheckResult{"", finite, finite ? "all gradients finite" : "non-finite gradient", 0.0};
  }));
  return out;
}

CheckResult check_reduction(int configurations, const VerifyOptions& options) {
  return timed("ahqs_beta0_equals_hqs", [&] {
    Rng rng = derive_rng(options.seed, 0x4e);
    int mismatches = 0;
    for (int i = 0; i < configurations; ++i) {
      UnfoldConfig cfg;
      cfg.num_stages = 1 + static_cast<int>(rng() % 3);
      cfg.num_splits = 2;
      cfg.channels = 4 * (1 + static_cast<int>(rng() % 2));
      cfg.height = 16;
      cfg.width = 16;
      cfg.window = 4;
      cfg.heads = 2;
      cfg.pgsa_groups = 2;
      cfg.reduction = 2;
      const DenoiserKind kinds[] = {DenoiserKind::Identity, DenoiserKind::Msst, DenoiserKind::ConvUnet};
      cfg.denoiser = kinds[rng() % 3];
      const std::uint64_t seed = rng();
      cfg.variant = Variant::Hqs;
      const UnfoldModel hqs(cfg, seed);
      cfg.variant = Variant::Ahqs;
      UnfoldModel ahqs(cfg, seed);
      for (StageParams& p : ahqs.stages()) p.beta->mutable_value().fill(0.0);
      for (std::size_t k = 0; k < hqs.stages().size(); ++k) {
        ahqs.stages()[k].eta_raw.mutable_value()[0] = uniform(rng, -1.0, 1.0);
        Var eta = hqs.stages()[k].eta_raw;
        eta.mutable_value() = ahqs.stages()[k].eta_raw.value();
      }
      const ForwardOperator op(random_pattern_mask(16, 16, 0.3, rng()));
      const KSpaceMeasurement y = op.forward(random_image(16, 16, rng));
      NoGradGuard guard;
      const Tensor a = run_model(y, op, hqs).value();
      const Tensor b = run_model(y, op, ahqs).value();
      if (a.values() != b.values()) ++mismatches;
    }
    std::ostringstream os;
    os << configurations << " configurations, " << mismatches << " not bit-equal";
    return CheckResult{"", mismatches == 0, os.str(), 0.0};
  });
}

ConvexInstance random_convex_instance(int size, std::uint64_t seed) {
  Rng rng(seed);
  ConvexInstance inst{random_pattern_mask(size, size, uniform(rng, 0.2, 0.5), rng()), random_image(size, size, rng),
                      {}, uniform(rng, 0.3, 0.7), uniform(rng, 0.01, 0.05)};
  const ForwardOperator op(inst.mask);
  inst.y = op.forward(random_image(size, size, rng));
  return inst;
}

ComplexImage convex_fixed_point(const ConvexInstance& inst) {
  const ForwardOperator op(inst.mask);
  const CMatrix rows = sampled_dft_rows(op);
  const Eigen::Index n = rows.cols();
  const double a = 1.0 / (1.0 + inst.tau_gamma);
  const double b = inst.tau_gamma / (1.0 + inst.tau_gamma);
  const CMatrix p = rows.adjoint() * rows;
  const CMatrix id = CMatrix::Identity(n, n);
  const CMatrix lhs = id - a * (id - inst.eta * p);
  const CVector c = to_vector(inst.c.values());
  const CVector rhs = b * (c - inst.eta * (p * c)) + inst.eta * (rows.adjoint() * sampled_values(op, inst.y));
  const CVector x = lhs.llt().solve(rhs);
  std::vector<Complex> v(x.data(), x.data() + x.size());
  return ComplexImage(inst.mask.height, inst.mask.width, std::move(v));
}

int splitting_iterations(const ConvexInstance& inst, const ComplexImage& x_star, bool accelerated, double tol,
                         int max_iter) {
  const ForwardOperator op(inst.mask);
  const double a = 1.0 / (1.0 + inst.tau_gamma);
  const double b = inst.tau_gamma / (1.0 + inst.tau_gamma);
  ComplexImage z = op.adjoint(inst.y);
  ComplexImage z_prev = z;
  ComplexImage z_hat = z;
  const double ref = x_star.norm();
  for (int k = 1; k <= max_iter; ++k) {
    const ComplexImage x = data_consistency(op, z_hat, inst.y, inst.eta);
    double err = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) err += std::norm(x[i] - x_star[i]);
    if (std::sqrt(err) / ref <= tol) return k;
    z_prev = z;
    for (std::size_t i = 0; i < x.size(); ++i) z[i] = a * x[i] + b * inst.c[i];
    const double beta = accelerated ? static_cast<double>(k - 1) / static_cast<double>(k + 2) : 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) z_hat[i] = z[i] + beta * (z[i] - z_prev[i]);
  }
  return max_iter + 1;
}

CheckResult check_convergence(int instances, const VerifyOptions& options) {
  return timed("accelerated_convergence", [&] {
    Rng rng = derive_rng(options.seed, 0xc0);
    int not_worse = 0;
    int faster = 0;
    double ratio_sum = 0.0;
    for (int i = 0; i < instances; ++i) {
      const ConvexInstance inst = random_convex_instance(32, rng());
      const ComplexImage x_star = convex_fixed_point(inst);
      const int plain = splitting_iterations(inst, x_star, false, 1e-6, 5000);
      const int accel = splitting_iterations(inst, x_star, true, 1e-6, 5000);
      if (accel <= plain) ++not_worse;
      if (accel < 0.8 * plain) ++faster;
      ratio_sum += static_cast<double>(accel) / plain;
    }
    std::ostringstream os;
    os << instances << " instances: accelerated <= plain on " << not_worse << ", < 0.8x on " << faster
       << ", mean ratio " << ratio_sum / instances;
    const bool ok = not_worse == instances && faster * 5 >= instances * 4;
    return CheckResult{"", ok, os.str(), 0.0};
  });
}

std::vector<CheckResult> run_checks(const std::vector<std::string>& groups, const VerifyOptions& options) {
  const std::vector<std::string>& wanted = groups.empty() ? check_groups() : groups;
  for (const std::string& g : wanted) {
    if (std::find(check_groups().begin(), check_groups().end(), g) == check_groups().end()) {
      throw std::invalid_argument("unknown check group '" + g + "'");
    }
  }
  std::vector<CheckResult> out;
  auto want = [&](const char* g) { return std::find(wanted.begin(), wanted.end(), g) != wanted.end(); };
  if (want("smw")) out.push_back(check_smw(100, options));
  if (want("adjoint")) out.push_back(check_adjoint(1000, options));
  if (want("gradients")) {
    for (CheckResult& r : check_gradients_battery(options)) out.push_back(std::move(r));
  }
  if (want("reduction")) out.push_back(check_reduction(20, options));
  if (want("convergence")) out.push_back(check_convergence(50, options));
  return out;
}

}  // namespace unfmri
