#include "unfmri/kspace.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include "unfmri/log.hpp"

namespace unfmri {

ComplexImage::ComplexImage(int height, int width)
    : ComplexImage(height, width,
                   std::vector<Complex>(static_cast<std::size_t>(std::max(height, 0)) * std::max(width, 0))) {}

ComplexImage::ComplexImage(int height, int width, std::vector<Complex> values)
    : height_(height), width_(width), values_(std::move(values)) {
  if (height < 8 || width < 8) {
    throw std::invalid_argument("ComplexImage: dimensions must be at least 8x8");
  }
  if (values_.size() != static_cast<std::size_t>(height) * width) {
    throw std::invalid_argument("ComplexImage: value count does not match dimensions");
  }
  for (const Complex& v : values_) {
    if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) {
      throw std::invalid_argument("ComplexImage: non-finite value");
    }
  }
}

double ComplexImage::norm() const {
  double acc = 0.0;
  for (const Complex& v : values_) acc += std::norm(v);
  return std::sqrt(acc);
}

std::vector<double> ComplexImage::magnitude() const {
  std::vector<double> out(values_.size());
  for (std::size_t i = 0; i < values_.size(); ++i) out[i] = std::abs(values_[i]);
  return out;
}

std::string to_string(MaskKind kind) {
  switch (kind) {
    case MaskKind::CartesianRandom: return "cartesian_random";
    case MaskKind::EquispacedFraction: return "equispaced_fraction";
    case MaskKind::Radial: return "radial";
  }
  return "unknown";
}

MaskKind parse_mask_kind(const std::string& name) {
  if (name == "cartesian_random") return MaskKind::CartesianRandom;
  if (name == "equispaced_fraction") return MaskKind::EquispacedFraction;
  if (name == "radial") return MaskKind::Radial;
  throw std::invalid_argument("unsupported mask kind '" + name + "'");
}

std::size_t UndersamplingMask::sampled() const {
  return static_cast<std::size_t>(std::count(pattern.begin(), pattern.end(), std::uint8_t{1}));
}

double UndersamplingMask::fraction() const {
  return static_cast<double>(sampled()) / static_cast<double>(pattern.size());
}

std::string UndersamplingMask::id() const {
  std::ostringstream os;
  os << to_string(kind) << "-R" << acceleration << "-s" << seed << "-acs" << acs_lines << '-' << height
     << 'x' << width;
  return os.str();
}

int default_acs_lines(MaskKind kind, int width) {
  if (kind == MaskKind::Radial) return 0;
  return static_cast<int>(std::lround(0.04 * width));
}

namespace {

void set_columns(UndersamplingMask& m, const std::vector<std::uint8_t>& columns) {
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) m.pattern[static_cast<std::size_t>(y) * m.width + x] = columns[x];
  }
}

std::vector<std::uint8_t> acs_columns(int width, int acs) {
  std::vector<std::uint8_t> cols(static_cast<std::size_t>(width), 0);
  const int start = width / 2 - acs / 2;
  for (int i = 0; i < acs; ++i) cols[start + i] = 1;
  return cols;
}

void equispaced(UndersamplingMask& m) {
  const int w = m.width;
  const int acs = m.acs_lines;
  std::vector<std::uint8_t> cols = acs_columns(w, acs);
  // Grid lines fill whatever the ACS block leaves of the W/R budget; a grid line landing on an
  // already kept column moves to the next free one.
  const long lines = std::lround(static_cast<double>(w) / m.acceleration) - acs;
  if (lines > 0) {
    const double spacing = static_cast<double>(w) / static_cast<double>(lines);
    const auto offset = static_cast<double>(m.seed % static_cast<std::uint64_t>(std::max(1.0, std::floor(spacing))));
    for (long k = 0; k < lines; ++k) {
      auto pos = static_cast<int>(std::floor(offset + static_cast<double>(k) * spacing));
      while (cols[pos]) pos = (pos + 1) % w;
      cols[pos] = 1;
    }
  }
  set_columns(m, cols);
}

void cartesian_random(UndersamplingMask& m) {
  const int w = m.width;
  const int budget = static_cast<int>(std::lround(static_cast<double>(w) / m.acceleration));
  std::vector<std::uint8_t> cols = acs_columns(w, m.acs_lines);
  int chosen = m.acs_lines;
  const double sigma = w / 6.0;
  const double center = w / 2;
  std::vector<double> weight(static_cast<std::size_t>(w));
  for (int x = 0; x < w; ++x) {
    const double d = x - center;
    weight[x] = cols[x] ? 0.0 : std::exp(-d * d / (2.0 * sigma * sigma));
  }
  std::mt19937_64 rng(m.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  while (chosen < budget) {
    double total = 0.0;
    for (double v : weight) total += v;
    if (total <= 0.0) break;
    const double target = unit(rng) * total;
    double acc = 0.0;
    int pick = -1;
    for (int x = 0; x < w; ++x) {
      if (weight[x] <= 0.0) continue;
      acc += weight[x];
      pick = x;
      if (acc > target) break;
    }
    cols[pick] = 1;
    weight[pick] = 0.0;
    ++chosen;
  }
  set_columns(m, cols);
}

void rasterize_radial(int height, int width, int lines, int acs, std::vector<std::uint8_t>& pattern) {
  pattern.assign(static_cast<std::size_t>(height) * width, 0);
  const int cy = height / 2;
  const int cx = width / 2;
  for (int j = 0; j < lines; ++j) {
    const double theta = std::numbers::pi * j / lines;
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    if (std::fabs(c) >= std::fabs(s)) {
      const double slope = s / c;
      for (int x = 0; x < width; ++x) {
        const int y = cy + static_cast<int>(std::round((x - cx) * slope));
        if (y >= 0 && y < height) pattern[static_cast<std::size_t>(y) * width + x] = 1;
      }
    } else {
      const double slope = c / s;
      for (int y = 0; y < height; ++y) {
        const int x = cx + static_cast<int>(std::round((y - cy) * slope));
        if (x >= 0 && x < width) pattern[static_cast<std::size_t>(y) * width + x] = 1;
      }
    }
  }
  const int start_y = cy - acs / 2;
  const int start_x = cx - acs / 2;
  for (int y = 0; y < acs; ++y) {
    for (int x = 0; x < acs; ++x) pattern[static_cast<std::size_t>(start_y + y) * width + start_x + x] = 1;
  }
}

double pattern_fraction(const std::vector<std::uint8_t>& p) {
  return static_cast<double>(std::count(p.begin(), p.end(), std::uint8_t{1})) / static_cast<double>(p.size());
}

}  // namespace

int radial_line_count(int height, int width, int acceleration, int acs_lines) {
  const double target = 1.0 / acceleration;
  std::vector<std::uint8_t> pattern;
  const int max_lines = 4 * std::max(height, width);
  for (int lines = 1; lines <= max_lines; ++lines) {
    rasterize_radial(height, width, lines, acs_lines, pattern);
    if (pattern_fraction(pattern) >= target) return lines;
  }
  throw std::invalid_argument("make_mask: radial target fraction unreachable");
}

UndersamplingMask make_mask(MaskKind kind, int height, int width, int acceleration, std::uint64_t seed,
                            int acs_lines) {
  if (acceleration != 2 && acceleration != 4 && acceleration != 8 && acceleration != 16) {
    throw std::invalid_argument("make_mask: acceleration must be one of 2, 4, 8, 16");
  }
  if (height < 8 || width < 8) throw std::invalid_argument("make_mask: dimensions must be at least 8");
  if (acs_lines < 0 || 4 * acs_lines >= std::min(height, width)) {
    throw std::invalid_argument("make_mask: acs_lines must be below min(H, W)/4");
  }
  UndersamplingMask m;
  m.height = height;
  m.width = width;
  m.kind = kind;
  m.acceleration = acceleration;
  m.seed = seed;
  m.acs_lines = acs_lines;
  m.pattern.assign(static_cast<std::size_t>(height) * width, 0);
  switch (kind) {
    case MaskKind::EquispacedFraction: equispaced(m); break;
    case MaskKind::CartesianRandom: cartesian_random(m); break;
    case MaskKind::Radial:
      rasterize_radial(height, width, radial_line_count(height, width, acceleration, acs_lines), acs_lines,
                       m.pattern);
      break;
  }
  const double f = m.fraction();
  if (f < 0.9 / acceleration || f > 1.1 / acceleration) {
    std::ostringstream os;
    os << "make_mask: sampled fraction " << f << " outside [" << 0.9 / acceleration << ", "
       << 1.1 / acceleration << "] for " << m.id() << " (acceleration incompatible with ACS budget)";
    throw std::invalid_argument(os.str());
  }
  return m;
}

UndersamplingMask full_mask(int height, int width) {
  UndersamplingMask m;
  m.height = height;
  m.width = width;
  m.kind = MaskKind::CartesianRandom;
  m.acceleration = 1;
  m.pattern.assign(static_cast<std::size_t>(height) * width, 1);
  return m;
}

namespace {

struct PlanCache {
  std::mutex mutex;
  std::map<std::tuple<int, int, int>, fftw_plan> plans;

  fftw_plan get(int height, int width, int sign) {
    std::lock_guard<std::mutex> lock(mutex);
    auto key = std::make_tuple(height, width, sign);
    auto it = plans.find(key);
    if (it != plans.end()) return it->second;
    const std::size_t n = static_cast<std::size_t>(height) * width;
    auto* in = fftw_alloc_complex(n);
    auto* out = fftw_alloc_complex(n);
    fftw_plan plan = fftw_plan_dft_2d(height, width, in, out, sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
    fftw_free(in);
    fftw_free(out);
    if (!plan) throw std::runtime_error("fft2: plan creation failed");
    plans.emplace(key, plan);
    return plan;
  }
};

PlanCache& plan_cache() {
  static PlanCache cache;
  return cache;
}

}  // namespace

std::vector<Complex> fft2(const std::vector<Complex>& data, int height, int width, bool inverse) {
  const std::size_t n = static_cast<std::size_t>(height) * width;
  if (data.size() != n) throw std::invalid_argument("fft2: size mismatch");
  fftw_plan plan = plan_cache().get(height, width, inverse ? FFTW_BACKWARD : FFTW_FORWARD);
  std::vector<Complex> in = data;
  std::vector<Complex> out(n);
  fftw_execute_dft(plan, reinterpret_cast<fftw_complex*>(in.data()), reinterpret_cast<fftw_complex*>(out.data()));
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (Complex& v : out) v *= scale;
  return out;
}

ForwardOperator::ForwardOperator(UndersamplingMask mask) : mask_(std::move(mask)) {
  const int h = mask_.height;
  const int w = mask_.width;
  if (mask_.pattern.size() != static_cast<std::size_t>(h) * w) {
    throw std::invalid_argument("ForwardOperator: mask pattern size mismatch");
  }
  sampled_.resize(mask_.pattern.size());
  for (int u = 0; u < h; ++u) {
    for (int v = 0; v < w; ++v) {
      sampled_[static_cast<std::size_t>(u) * w + v] = mask_.at((u + h / 2) % h, (v + w / 2) % w) ? 1 : 0;
    }
  }
}

void ForwardOperator::apply_mask(std::vector<Complex>& spectrum) const {
  for (std::size_t i = 0; i < spectrum.size(); ++i) {
    if (!sampled_[i]) spectrum[i] = Complex(0.0, 0.0);
  }
}

KSpaceMeasurement ForwardOperator::forward(const ComplexImage& x) const {
  if (x.height() != height() || x.width() != width()) {
    throw std::invalid_argument("forward: image dimensions do not match the mask");
  }
  KSpaceMeasurement y{height(), width(), fft2(x.values(), height(), width(), false), mask_.id()};
  apply_mask(y.values);
  return y;
}

ComplexImage ForwardOperator::adjoint(const KSpaceMeasurement& y) const {
  if (y.height != height() || y.width != width() || y.values.size() != sampled_.size()) {
    throw std::invalid_argument("adjoint: measurement dimensions do not match the mask");
  }
  std::vector<Complex> spectrum = y.values;
  apply_mask(spectrum);
  return ComplexImage(height(), width(), fft2(spectrum, height(), width(), true));
}

std::vector<Complex> ForwardOperator::normal(const std::vector<Complex>& x) const {
  std::vector<Complex> spectrum = fft2(x, height(), width(), false);
  apply_mask(spectrum);
  return fft2(spectrum, height(), width(), true);
}

KSpaceMeasurement forward(const ForwardOperator& op, const ComplexImage& x) { return op.forward(x); }

ComplexImage adjoint(const ForwardOperator& op, const KSpaceMeasurement& y) { return op.adjoint(y); }

ComplexImage data_consistency(const ForwardOperator& op, const ComplexImage& z_hat, const KSpaceMeasurement& y,
                              double eta) {
  if (!std::isfinite(eta)) throw std::invalid_argument("data_consistency: eta must be finite");
  if (eta < 0.0 || eta > 1.0) {
    std::ostringstream os;
    os << "data_consistency: eta = " << eta << " outside [0, 1]";
    log::warning(os.str());
  }
  if (z_hat.height() != op.height() || z_hat.width() != op.width() || y.height != op.height() ||
      y.width != op.width()) {
    throw std::invalid_argument("data_consistency: shape mismatch");
  }
  std::vector<Complex> spectrum = fft2(z_hat.values(), op.height(), op.width(), false);
  for (std::size_t f = 0; f < spectrum.size(); ++f) {
    if (op.sampled(f)) spectrum[f] += eta * (y.values[f] - spectrum[f]);
  }
  return ComplexImage(op.height(), op.width(), fft2(spectrum, op.height(), op.width(), true));
}

KSpaceMeasurement make_measurement(const ForwardOperator& op, std::vector<Complex> values) {
  if (values.size() != static_cast<std::size_t>(op.height()) * op.width()) {
    throw std::invalid_argument("make_measurement: size mismatch");
  }
  for (std::size_t f = 0; f < values.size(); ++f) {
    if (!op.sampled(f) && values[f] != Complex(0.0, 0.0)) {
      throw std::invalid_argument("make_measurement: nonzero value at an unsampled frequency");
    }
  }
  return {op.height(), op.width(), std::move(values), op.mask().id()};
}

}  // namespace unfmri
