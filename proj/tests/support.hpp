#pragma once

// Generators and reference implementations shared by the test programs. The references are
// written from the defining formulas, deliberately without reusing library code paths.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "unfmri/autograd.hpp"
#include "unfmri/kspace.hpp"
#include "unfmri/tensor.hpp"

namespace testing {

using unfmri::Complex;
using unfmri::ComplexImage;
using Gen = std::mt19937_64;

inline double uniform(Gen& g, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(g); }
inline int uniform_int(Gen& g, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(g); }

inline ComplexImage random_image(Gen& g, int h, int w, double scale = 1.0) {
  ComplexImage img(h, w);
  for (auto& v : img.values()) v = {scale * uniform(g, -1, 1), scale * uniform(g, -1, 1)};
  return img;
}

inline unfmri::Tensor random_tensor(Gen& g, std::vector<int> shape, double scale = 1.0) {
  unfmri::Tensor t(std::move(shape));
  for (double& v : t.values()) v = scale * uniform(g, -1, 1);
  return t;
}

inline std::vector<double> random_real(Gen& g, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (double& x : v) x = uniform(g, lo, hi);
  return v;
}

/// Centered mask of the given density with DC kept.
inline unfmri::UndersamplingMask random_mask(Gen& g, int h, int w, double density) {
  unfmri::UndersamplingMask m;
  m.height = h;
  m.width = w;
  m.acceleration = 1;
  m.pattern.assign(static_cast<std::size_t>(h) * w, 0);
  for (auto& p : m.pattern) p = uniform(g, 0, 1) < density ? 1 : 0;
  m.pattern[static_cast<std::size_t>(h / 2) * w + w / 2] = 1;
  return m;
}

inline std::vector<Complex> to_vector(const ComplexImage& img) { return img.values(); }

inline double rel_diff(const std::vector<Complex>& a, const std::vector<Complex>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += std::norm(a[i] - b[i]);
    den += std::norm(b[i]);
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

// ---- Fourier references ---------------------------------------------------------------------------

/// Orthonormal 2-D DFT by direct summation.
inline std::vector<Complex> direct_dft(const std::vector<Complex>& x, int h, int w, bool inverse) {
  const double sign = inverse ? 1.0 : -1.0;
  const double norm = 1.0 / std::sqrt(static_cast<double>(h) * w);
  std::vector<Complex> out(x.size());
  for (int u = 0; u < h; ++u) {
    for (int v = 0; v < w; ++v) {
      Complex acc = 0.0;
      for (int y = 0; y < h; ++y) {
        for (int c = 0; c < w; ++c) {
          const double phase = sign * 2.0 * std::numbers::pi * (static_cast<double>(u) * y / h + static_cast<double>(v) * c / w);
          acc += x[static_cast<std::size_t>(y) * w + c] * std::polar(1.0, phase);
        }
      }
      out[static_cast<std::size_t>(u) * w + v] = acc * norm;
    }
  }
  return out;
}

/// Dense orthonormal DFT matrix acting on row-major vectors.
inline Eigen::MatrixXcd dft_matrix(int h, int w) {
  const int n = h * w;
  Eigen::MatrixXcd f(n, n);
  const double norm = 1.0 / std::sqrt(static_cast<double>(n));
  for (int u = 0; u < h; ++u) {
    for (int v = 0; v < w; ++v) {
      for (int y = 0; y < h; ++y) {
        for (int c = 0; c < w; ++c) {
          const double phase = -2.0 * std::numbers::pi * (static_cast<double>(u) * y / h + static_cast<double>(v) * c / w);
          f(u * w + v, y * w + c) = std::polar(norm, phase);
        }
      }
    }
  }
  return f;
}

/// Sampling flag of unshifted frequency (u, v) for a centered pattern.
inline bool sampled_unshifted(const unfmri::UndersamplingMask& m, int u, int v) {
  const int y = (u + m.height / 2) % m.height;
  const int x = (v + m.width / 2) % m.width;
  return m.pattern[static_cast<std::size_t>(y) * m.width + x] != 0;
}

/// Solves (F^H M F + mu I) x = F^H M y + mu z densely.
inline std::vector<Complex> dense_consistency(const unfmri::UndersamplingMask& m, const std::vector<Complex>& z,
                                              const std::vector<Complex>& y_unshifted, double mu) {
  const int h = m.height, w = m.width, n = h * w;
  const Eigen::MatrixXcd f = dft_matrix(h, w);
  Eigen::VectorXd diag(n);
  for (int u = 0; u < h; ++u) {
    for (int v = 0; v < w; ++v) diag(u * w + v) = sampled_unshifted(m, u, v) ? 1.0 : 0.0;
  }
  const Eigen::MatrixXcd a = f.adjoint() * diag.asDiagonal() * f + mu * Eigen::MatrixXcd::Identity(n, n);
  Eigen::VectorXcd yv(n), zv(n);
  for (int i = 0; i < n; ++i) {
    yv(i) = y_unshifted[i];
    zv(i) = z[i];
  }
  const Eigen::VectorXcd rhs = f.adjoint() * (diag.asDiagonal() * yv) + mu * zv;
  const Eigen::VectorXcd x = a.ldlt().solve(rhs);
  return {x.data(), x.data() + n};
}

// ---- metric references ----------------------------------------------------------------------------

inline double reference_psnr(const std::vector<double>& recon, const std::vector<double>& truth) {
  double peak = 0.0;
  for (double t : truth) peak = std::max(peak, t);
  if (peak == 0.0) peak = 1.0;
  long double sq = 0.0L;
  for (std::size_t i = 0; i < recon.size(); ++i) {
    const long double d = static_cast<long double>(recon[i]) - truth[i];
    sq += d * d;
  }
  const double mse = static_cast<double>(sq / recon.size());
  if (mse == 0.0) return 100.0;
  return std::min(100.0, 20.0 * std::log10(peak) - 10.0 * std::log10(mse));
}

/// Two-pass windowed statistics with a 2-D normalized gaussian.
inline double reference_ssim(const std::vector<double>& a, const std::vector<double>& b, int h, int w) {
  double peak = 0.0;
  for (double t : b) peak = std::max(peak, t);
  if (peak == 0.0) peak = 1.0;
  const double c1 = std::pow(0.01 * peak, 2);
  const double c2 = std::pow(0.03 * peak, 2);
  double kernel[11][11];
  double total = 0.0;
  for (int i = 0; i < 11; ++i) {
    for (int j = 0; j < 11; ++j) {
      kernel[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2.0 * 1.5 * 1.5));
      total += kernel[i][j];
    }
  }
  double sum = 0.0;
  int windows = 0;
  for (int y = 0; y + 11 <= h; ++y) {
    for (int x = 0; x + 11 <= w; ++x) {
      double ma = 0.0, mb = 0.0;
      for (int i = 0; i < 11; ++i) {
        for (int j = 0; j < 11; ++j) {
          const double k = kernel[i][j] / total;
          ma += k * a[(y + i) * w + x + j];
          mb += k * b[(y + i) * w + x + j];
        }
      }
      double va = 0.0, vb = 0.0, cov = 0.0;
      for (int i = 0; i < 11; ++i) {
        for (int j = 0; j < 11; ++j) {
          const double k = kernel[i][j] / total;
          const double da = a[(y + i) * w + x + j] - ma;
          const double db = b[(y + i) * w + x + j] - mb;
          va += k * da * da;
          vb += k * db * db;
          cov += k * da * db;
        }
      }
      sum += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++windows;
    }
  }
  return sum / windows;
}

// ---- counting references --------------------------------------------------------------------------

/// Percentile by the textbook (n - 1) p interpolation rule.
inline double reference_percentile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double rank = p * (v.size() - 1);
  const std::size_t below = static_cast<std::size_t>(rank);
  if (below + 1 >= v.size()) return v.back();
  const double frac = rank - below;
  return v[below] * (1.0 - frac) + v[below + 1] * frac;
}

/// Largest-remainder apportionment characterized as the nearest (L2) non-negative integer split
/// summing to n, found by exhaustive search; ties prefer more items in earlier splits.
inline std::array<std::size_t, 3> reference_apportion(std::size_t n, std::array<double, 3> ratios) {
  const double total = ratios[0] + ratios[1] + ratios[2];
  const double q[3] = {n * ratios[0] / total, n * ratios[1] / total, n * ratios[2] / total};
  std::array<std::size_t, 3> best{};
  double best_d = INFINITY;
  for (std::size_t a = n + 1; a-- > 0;) {
    for (std::size_t b = n - a + 1; b-- > 0;) {
      const std::size_t c = n - a - b;
      const double d = (a - q[0]) * (a - q[0]) + (b - q[1]) * (b - q[1]) + (c - q[2]) * (c - q[2]);
      if (d < best_d - 1e-9) {
        best_d = d;
        best = {a, b, c};
      }
    }
  }
  return best;
}

// ---- autograd references -------------------------------------------------------------------------

inline double tensor_dot(const unfmri::Tensor& out, const unfmri::Tensor& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * r[i];
  return s;
}

/// Worst relative error between reverse-mode and central-difference gradients of <r, f()> over
/// every entry of every leaf.
inline double gradient_error(std::vector<unfmri::Var> leaves, const std::function<unfmri::Var()>& f, Gen& g) {
  unfmri::Var out = f();
  const unfmri::Tensor r = random_tensor(g, out.shape());
  for (unfmri::Var& l : leaves) l.zero_grad();
  unfmri::backward(out, r);
  double worst = 0.0;
  const double h = 1e-5;
  for (unfmri::Var& l : leaves) {
    const unfmri::Tensor analytic = l.grad();
    for (std::size_t i = 0; i < l.value().size(); ++i) {
      const double keep = l.value()[i];
      l.mutable_value()[i] = keep + h;
      const double up = tensor_dot(f().value(), r);
      l.mutable_value()[i] = keep - h;
      const double down = tensor_dot(f().value(), r);
      l.mutable_value()[i] = keep;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-4}));
    }
  }
  return worst;
}

/// Cross-correlation with zero padding by direct loops.
inline unfmri::Tensor naive_conv(const unfmri::Tensor& x, const unfmri::Tensor& w, const unfmri::Tensor& b, int stride,
                                 int pad, int groups) {
  const int h = x.height(), wd = x.width();
  const int cout = w.dim(0), cig = w.dim(1), k = w.dim(2);
  const int ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
  unfmri::Tensor out({cout, ho, wo});
  for (int co = 0; co < cout; ++co) {
    const int grp = co / (cout / groups);
    for (int y = 0; y < ho; ++y) {
      for (int xo = 0; xo < wo; ++xo) {
        double s = b.empty() ? 0.0 : b[co];
        for (int ci = 0; ci < cig; ++ci) {
          for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
              const int iy = y * stride + ky - pad, ix = xo * stride + kx - pad;
              if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
              s += w[((co * cig + ci) * k + ky) * k + kx] * x.at(grp * cig + ci, iy, ix);
            }
          }
        }
        out.at(co, y, xo) = s;
      }
    }
  }
  return out;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("unfmri_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
