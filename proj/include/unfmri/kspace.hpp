#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

namespace unfmri {

using Complex = std::complex<double>;

/// H x W complex image, row-major. Both sides at least 8 pixels, all entries finite.
class ComplexImage {
 public:
  ComplexImage(int height, int width);
  ComplexImage(int height, int width, std::vector<Complex> values);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return values_.size(); }
  Complex& at(int y, int x) { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  Complex at(int y, int x) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  Complex& operator[](std::size_t i) { return values_[i]; }
  Complex operator[](std::size_t i) const { return values_[i]; }
  const std::vector<Complex>& values() const { return values_; }
  std::vector<Complex>& values() { return values_; }

  double norm() const;
  std::vector<double> magnitude() const;

 private:
  int height_;
  int width_;
  std::vector<Complex> values_;
};

enum class MaskKind { CartesianRandom, EquispacedFraction, Radial };

std::string to_string(MaskKind kind);
/// Accepts cartesian_random, equispaced_fraction, radial.
MaskKind parse_mask_kind(const std::string& name);

/// Binary k-space selection in centered layout: DC sits at (H/2, W/2).
struct UndersamplingMask {
  int height = 0;
  int width = 0;
  MaskKind kind = MaskKind::CartesianRandom;
  int acceleration = 1;
  std::uint64_t seed = 0;
  int acs_lines = 0;
  std::vector<std::uint8_t> pattern;

  std::size_t sampled() const;
  double fraction() const;
  std::string id() const;
  bool at(int y, int x) const { return pattern[static_cast<std::size_t>(y) * width + x] != 0; }
};

/// Default autocalibration size: 4% of the phase-encode lines for cartesian kinds, none for radial.
int default_acs_lines(MaskKind kind, int width);

UndersamplingMask make_mask(MaskKind kind, int height, int width, int acceleration, std::uint64_t seed,
                            int acs_lines);
/// Every frequency sampled; used for exact-recovery configurations.
UndersamplingMask full_mask(int height, int width);

/// Radial line count chosen for the given geometry and acceleration.
int radial_line_count(int height, int width, int acceleration, int acs_lines);

struct KSpaceMeasurement {
  int height = 0;
  int width = 0;
  std::vector<Complex> values;  // unshifted frequency layout, zero off the sampled support
  std::string mask_id;
};

/// Orthonormal 2-D DFT of row-major data; `inverse` selects the backward transform.
std::vector<Complex> fft2(const std::vector<Complex>& data, int height, int width, bool inverse);

/// F_u = M F with orthonormal scaling; zero-filled convention (unsampled entries kept as zeros).
class ForwardOperator {
 public:
  explicit ForwardOperator(UndersamplingMask mask);

  const UndersamplingMask& mask() const { return mask_; }
  int height() const { return mask_.height; }
  int width() const { return mask_.width; }
  /// Sampling flag per unshifted frequency index.
  bool sampled(std::size_t freq) const { return sampled_[freq] != 0; }

  KSpaceMeasurement forward(const ComplexImage& x) const;
  ComplexImage adjoint(const KSpaceMeasurement& y) const;
  /// F^H M F applied to raw row-major data.
  std::vector<Complex> normal(const std::vector<Complex>& x) const;
  /// Zeroes the unsampled entries of a raw spectrum.
  void apply_mask(std::vector<Complex>& spectrum) const;

 private:
  UndersamplingMask mask_;
  std::vector<std::uint8_t> sampled_;
};

KSpaceMeasurement forward(const ForwardOperator& op, const ComplexImage& x);
/// Zero-filled reconstruction F^H (M y).
ComplexImage adjoint(const ForwardOperator& op, const KSpaceMeasurement& y);

/// Closed-form minimizer of 1/2||y - F_u x||^2 + mu/2 ||x - z_hat||^2 with eta = 1/(mu+1):
/// per sampled frequency Z + eta (Y - Z), unsampled frequencies untouched.
ComplexImage data_consistency(const ForwardOperator& op, const ComplexImage& z_hat,
                              const KSpaceMeasurement& y, double eta);

/// Builds a measurement from raw spectrum values; rejects energy off the sampled support.
KSpaceMeasurement make_measurement(const ForwardOperator& op, std::vector<Complex> values);

}  // namespace unfmri
