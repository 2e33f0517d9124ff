#include "unfmri/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <sstream>

#include "unfmri/log.hpp"

namespace unfmri {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

namespace {

// Portable uniform [0, 1) from a 64-bit engine.
double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * unit(rng); }

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::F32: return 4;
    case DType::F64: return 8;
    case DType::C64: return 8;
    case DType::C128: return 16;
  }
  return 0;
}

bool is_complex(DType t) { return t == DType::C64 || t == DType::C128; }

std::string to_string(DType t) {
  switch (t) {
    case DType::F32: return "f32";
    case DType::F64: return "f64";
    case DType::C64: return "c64";
    case DType::C128: return "c128";
  }
  return "unknown";
}

std::string to_string(ContainerErrorCode code) {
  switch (code) {
    case ContainerErrorCode::BadMagic: return "BAD_MAGIC";
    case ContainerErrorCode::BadDtype: return "BAD_DTYPE";
    case ContainerErrorCode::ShapeMismatch: return "SHAPE_MISMATCH";
    case ContainerErrorCode::Truncated: return "TRUNCATED";
    case ContainerErrorCode::TrailingBytes: return "TRAILING_BYTES";
    case ContainerErrorCode::Io: return "IO";
  }
  return "UNKNOWN";
}

ContainerError::ContainerError(ContainerErrorCode code, const std::string& what)
    : std::runtime_error(to_string(code) + ": " + what), code_(code) {}

std::size_t TensorContainer::numel() const {
  std::size_t n = 1;
  for (std::uint32_t d : shape) n *= d;
  return n;
}

std::vector<std::uint8_t> encode_container(const TensorContainer& c) {
  if (c.shape.size() > 255) throw ContainerError(ContainerErrorCode::ShapeMismatch, "rank above 255");
  if (c.payload.size() != c.numel() * dtype_size(c.dtype)) {
    throw ContainerError(ContainerErrorCode::ShapeMismatch, "payload size does not match shape");
  }
  std::vector<std::uint8_t> out(kContainerMagic, kContainerMagic + 8);
  out.push_back(static_cast<std::uint8_t>(c.dtype));
  out.push_back(static_cast<std::uint8_t>(c.shape.size()));
  for (std::uint32_t d : c.shape) {
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>((d >> (8 * b)) & 0xffu));
  }
  out.insert(out.end(), c.payload.begin(), c.payload.end());
  return out;
}

TensorContainer decode_container(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kContainerMagic, 8) != 0) {
    throw ContainerError(ContainerErrorCode::BadMagic, "missing UNFMRI01 tag");
  }
  if (bytes.size() < 10) throw ContainerError(ContainerErrorCode::Truncated, "header cut short");
  if (bytes[8] > 3) throw ContainerError(ContainerErrorCode::BadDtype, "dtype code " + std::to_string(bytes[8]));
  TensorContainer c;
  c.dtype = static_cast<DType>(bytes[8]);
  const std::size_t rank = bytes[9];
  std::size_t pos = 10;
  if (bytes.size() < pos + 4 * rank) throw ContainerError(ContainerErrorCode::Truncated, "shape cut short");
  for (std::size_t i = 0; i < rank; ++i) {
    std::uint32_t d = 0;
    for (int b = 0; b < 4; ++b) d |= static_cast<std::uint32_t>(bytes[pos + b]) << (8 * b);
    c.shape.push_back(d);
    pos += 4;
  }
  const std::size_t need = c.numel() * dtype_size(c.dtype);
  const std::size_t have = bytes.size() - pos;
  if (have < need) {
    throw ContainerError(ContainerErrorCode::Truncated,
                         "payload has " + std::to_string(have) + " bytes, shape needs " + std::to_string(need));
  }
  if (have > need) {
    throw ContainerError(ContainerErrorCode::TrailingBytes, std::to_string(have - need) + " bytes past payload");
  }
  c.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return c;
}

void write_container(const std::filesystem::path& path, const TensorContainer& c) {
  const std::vector<std::uint8_t> bytes = encode_container(c);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ContainerError(ContainerErrorCode::Io, "cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw ContainerError(ContainerErrorCode::Io, "write failed for " + path.string());
}

TensorContainer read_container(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ContainerError(ContainerErrorCode::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_container(bytes);
}

TensorContainer make_real_container(std::vector<std::uint32_t> shape, std::span<const double> values, DType dtype) {
  TensorContainer c;
  c.dtype = dtype;
  c.shape = std::move(shape);
  if (values.size() != c.numel()) throw ContainerError(ContainerErrorCode::ShapeMismatch, "value count");
  if (dtype == DType::F64) {
    c.payload.resize(values.size() * 8);
    std::memcpy(c.payload.data(), values.data(), c.payload.size());
  } else if (dtype == DType::F32) {
    c.payload.resize(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const float v = static_cast<float>(values[i]);
      std::memcpy(c.payload.data() + 4 * i, &v, 4);
    }
  } else {
    throw ContainerError(ContainerErrorCode::BadDtype, "real values need f32 or f64");
  }
  return c;
}

TensorContainer make_complex_container(std::vector<std::uint32_t> shape, std::span<const Complex> values,
                                       DType dtype) {
  TensorContainer c;
  c.dtype = dtype;
  c.shape = std::move(shape);
  if (values.size() != c.numel()) throw ContainerError(ContainerErrorCode::ShapeMismatch, "value count");
  if (dtype == DType::C128) {
    c.payload.resize(values.size() * 16);
    std::memcpy(c.payload.data(), values.data(), c.payload.size());
  } else if (dtype == DType::C64) {
    c.payload.resize(values.size() * 8);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const float parts[2] = {static_cast<float>(values[i].real()), static_cast<float>(values[i].imag())};
      std::memcpy(c.payload.data() + 8 * i, parts, 8);
    }
  } else {
    throw ContainerError(ContainerErrorCode::BadDtype, "complex values need c64 or c128");
  }
  return c;
}

namespace {

std::vector<double> scalars(const std::uint8_t* p, std::size_t count, bool single) {
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (single) {
      float v;
      std::memcpy(&v, p + 4 * i, 4);
      out[i] = v;
    } else {
      std::memcpy(&out[i], p + 8 * i, 8);
    }
  }
  return out;
}

}  // namespace

std::vector<double> container_reals(const TensorContainer& c) {
  if (is_complex(c.dtype)) throw ContainerError(ContainerErrorCode::BadDtype, "expected a real dtype");
  return scalars(c.payload.data(), c.numel(), c.dtype == DType::F32);
}

std::vector<Complex> container_complex(const TensorContainer& c) {
  std::vector<double> flat;
  if (is_complex(c.dtype)) {
    flat = scalars(c.payload.data(), 2 * c.numel(), c.dtype == DType::C64);
  } else {
    if (c.shape.empty() || c.shape.back() != 2) {
      throw ContainerError(ContainerErrorCode::ShapeMismatch, "real payload needs a trailing axis of 2");
    }
    flat = container_reals(c);
  }
  std::vector<Complex> out(flat.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = Complex(flat[2 * i], flat[2 * i + 1]);
  return out;
}

void save_image(const std::filesystem::path& path, const ComplexImage& image, DType dtype) {
  const auto h = static_cast<std::uint32_t>(image.height());
  const auto w = static_cast<std::uint32_t>(image.width());
  if (is_complex(dtype)) {
    write_container(path, make_complex_container({h, w}, image.values(), dtype));
    return;
  }
  std::vector<double> flat(2 * image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    flat[2 * i] = image[i].real();
    flat[2 * i + 1] = image[i].imag();
  }
  write_container(path, make_real_container({h, w, 2}, flat, dtype));
}

ComplexImage load_image(const std::filesystem::path& path) {
  const TensorContainer c = read_container(path);
  if (is_complex(c.dtype) && c.shape.size() == 2) {
    return ComplexImage(static_cast<int>(c.shape[0]), static_cast<int>(c.shape[1]), container_complex(c));
  }
  if (!is_complex(c.dtype) && c.shape.size() == 3 && c.shape[2] == 2) {
    return ComplexImage(static_cast<int>(c.shape[0]), static_cast<int>(c.shape[1]), container_complex(c));
  }
  if (!is_complex(c.dtype) && c.shape.size() == 2) {
    const std::vector<double> re = container_reals(c);
    std::vector<Complex> values(re.begin(), re.end());
    return ComplexImage(static_cast<int>(c.shape[0]), static_cast<int>(c.shape[1]), std::move(values));
  }
  throw ContainerError(ContainerErrorCode::ShapeMismatch,
                       "image needs rank-2 complex or rank-3 real (H, W, 2); got " + to_string(c.dtype) + " rank " +
                           std::to_string(c.shape.size()));
}

void save_magnitude(const std::filesystem::path& path, const std::vector<double>& magnitude, int height, int width) {
  write_container(path, make_real_container({static_cast<std::uint32_t>(height), static_cast<std::uint32_t>(width)},
                                            magnitude, DType::F64));
}

std::filesystem::path mask_sidecar_path(const std::filesystem::path& path) {
  std::filesystem::path p = path;
  p += ".meta";
  return p;
}

void save_mask(const std::filesystem::path& path, const UndersamplingMask& mask) {
  const std::vector<double> values(mask.pattern.begin(), mask.pattern.end());
  write_container(path, make_real_container({static_cast<std::uint32_t>(mask.height),
                                             static_cast<std::uint32_t>(mask.width)},
                                            values, DType::F32));
  std::ofstream meta(mask_sidecar_path(path), std::ios::trunc);
  if (!meta) throw ContainerError(ContainerErrorCode::Io, "cannot write mask sidecar for " + path.string());
  meta << "kind=" << to_string(mask.kind) << '\n'
       << "acceleration=" << mask.acceleration << '\n'
       << "seed=" << mask.seed << '\n'
       << "acs_lines=" << mask.acs_lines << '\n'
       << "height=" << mask.height << '\n'
       << "width=" << mask.width << '\n'
       << "sampled=" << mask.sampled() << '\n'
       << "fraction=" << mask.fraction() << '\n'
       << "layout=centered\n";
  if (!meta) throw ContainerError(ContainerErrorCode::Io, "mask sidecar write failed");
}

UndersamplingMask load_mask(const std::filesystem::path& path) {
  const TensorContainer c = read_container(path);
  if (c.shape.size() != 2 || is_complex(c.dtype)) {
    throw ContainerError(ContainerErrorCode::ShapeMismatch, "mask needs a rank-2 real container");
  }
  UndersamplingMask m;
  m.height = static_cast<int>(c.shape[0]);
  m.width = static_cast<int>(c.shape[1]);
  for (double v : container_reals(c)) {
    if (v != 0.0 && v != 1.0) throw ContainerError(ContainerErrorCode::ShapeMismatch, "mask entries must be 0 or 1");
    m.pattern.push_back(v != 0.0 ? 1 : 0);
  }
  std::ifstream meta(mask_sidecar_path(path));
  std::string line;
  while (meta && std::getline(meta, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "kind") m.kind = parse_mask_kind(value);
    if (key == "acceleration") m.acceleration = std::stoi(value);
    if (key == "seed") m.seed = std::stoull(value);
    if (key == "acs_lines") m.acs_lines = std::stoi(value);
  }
  return m;
}

// ---- phantoms ---------------------------------------------------------------------------

std::string to_string(PhantomKind k) { return k == PhantomKind::SheppLogan ? "shepp_logan" : "random_ellipses"; }

PhantomKind parse_phantom_kind(const std::string& name) {
  if (name == "shepp_logan") return PhantomKind::SheppLogan;
  if (name == "random_ellipses") return PhantomKind::RandomEllipses;
  throw std::invalid_argument("unknown phantom kind '" + name + "'");
}

bool Ellipse::contains(double y, double x) const {
  const double dy = y - cy;
  const double dx = x - cx;
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const double u = (dx * c + dy * s) / rx;
  const double v = (-dx * s + dy * c) / ry;
  return u * u + v * v <= 1.0;
}

namespace {

void check_phantom_dims(int height, int width) {
  if (height < 16 || width < 16) {
    throw std::invalid_argument("phantom dimensions must be at least 16x16, got " + std::to_string(height) + "x" +
                                std::to_string(width));
  }
}

}  // namespace

std::vector<double> shepp_logan_magnitude(int height, int width) {
  check_phantom_dims(height, width);
  // (value, semi-axis x, semi-axis y, centre x, centre y, angle in degrees) on [-1, 1]^2, y up.
  static constexpr double kEllipses[10][6] = {
      {1.0, 0.69, 0.92, 0.0, 0.0, 0.0},         {-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0},
      {-0.2, 0.11, 0.31, 0.22, 0.0, -18.0},     {-0.2, 0.16, 0.41, -0.22, 0.0, 18.0},
      {0.1, 0.21, 0.25, 0.0, 0.35, 0.0},        {0.1, 0.046, 0.046, 0.0, 0.1, 0.0},
      {0.1, 0.046, 0.046, 0.0, -0.1, 0.0},      {0.1, 0.046, 0.023, -0.08, -0.605, 0.0},
      {0.1, 0.023, 0.023, 0.0, -0.606, 0.0},    {0.1, 0.023, 0.046, 0.06, -0.605, 0.0},
  };
  std::vector<double> img(static_cast<std::size_t>(height) * width, 0.0);
  for (int y = 0; y < height; ++y) {
    const double py = 1.0 - 2.0 * (y + 0.5) / height;
    for (int x = 0; x < width; ++x) {
      const double px = 2.0 * (x + 0.5) / width - 1.0;
      double v = 0.0;
      for (const auto& e : kEllipses) {
        const double phi = e[5] * std::numbers::pi / 180.0;
        const double dx = px - e[3];
        const double dy = py - e[4];
        const double u = (dx * std::cos(phi) + dy * std::sin(phi)) / e[1];
        const double w = (-dx * std::sin(phi) + dy * std::cos(phi)) / e[2];
        if (u * u + w * w <= 1.0) v += e[0];
      }
      img[static_cast<std::size_t>(y) * width + x] = std::clamp(v, 0.0, 1.0);
    }
  }
  return img;
}

std::vector<Ellipse> random_ellipse_set(int height, int width, std::uint64_t seed) {
  check_phantom_dims(height, width);
  std::mt19937_64 rng(seed);
  std::vector<Ellipse> out;
  Ellipse head;
  head.cy = height / 2.0 + uniform(rng, -0.03, 0.03) * height;
  head.cx = width / 2.0 + uniform(rng, -0.03, 0.03) * width;
  head.ry = uniform(rng, 0.36, 0.45) * height;
  head.rx = uniform(rng, 0.30, 0.42) * width;
  head.angle = uniform(rng, -0.3, 0.3);
  head.intensity = uniform(rng, 0.3, 0.6);
  out.push_back(head);
  const int inner = 3 + static_cast<int>(rng() % 5);
  const double small = std::min(height, width);
  for (int i = 0; i < inner; ++i) {
    Ellipse e;
    const double r = std::sqrt(unit(rng)) * 0.6;
    const double t = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    e.cy = head.cy + r * head.ry * std::sin(t);
    e.cx = head.cx + r * head.rx * std::cos(t);
    e.ry = uniform(rng, 0.05, 0.2) * small;
    e.rx = uniform(rng, 0.05, 0.2) * small;
    e.angle = uniform(rng, 0.0, std::numbers::pi);
    e.intensity = uniform(rng, 0.1, 1.0);
    out.push_back(e);
  }
  return out;
}

std::vector<double> paint_ellipses(const std::vector<Ellipse>& ellipses, int height, int width) {
  std::vector<double> img(static_cast<std::size_t>(height) * width, 0.0);
  for (const Ellipse& e : ellipses) {
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        if (e.contains(y, x)) img[static_cast<std::size_t>(y) * width + x] = e.intensity;
      }
    }
  }
  return img;
}

std::vector<double> smooth_phase(int height, int width, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  const double fy1 = uniform(rng, 0.3, 1.2), fx1 = uniform(rng, 0.3, 1.2), p1 = uniform(rng, 0.0, 6.283);
  const double fy2 = uniform(rng, 0.3, 1.2), fx2 = uniform(rng, 0.3, 1.2), p2 = uniform(rng, 0.0, 6.283);
  const double amp = std::numbers::pi / 4.0;
  std::vector<double> phase(static_cast<std::size_t>(height) * width);
  for (int y = 0; y < height; ++y) {
    const double v = static_cast<double>(y) / height;
    for (int x = 0; x < width; ++x) {
      const double u = static_cast<double>(x) / width;
      const double s = 0.5 * std::sin(2.0 * std::numbers::pi * (fy1 * v + fx1 * u) + p1) +
                       0.5 * std::cos(2.0 * std::numbers::pi * (fy2 * v - fx2 * u) + p2);
      phase[static_cast<std::size_t>(y) * width + x] = amp * s;
    }
  }
  return phase;
}

ComplexImage make_phantom(PhantomKind kind, int height, int width, std::uint64_t seed) {
  check_phantom_dims(height, width);
  std::vector<double> mag = kind == PhantomKind::SheppLogan
                                ? shepp_logan_magnitude(height, width)
                                : paint_ellipses(random_ellipse_set(height, width, seed), height, width);
  const double peak = *std::max_element(mag.begin(), mag.end());
  if (peak > 0.0 && peak != 1.0) {
    for (double& m : mag) m /= peak;
  }
  const std::vector<double> phase = smooth_phase(height, width, seed);
  std::vector<Complex> values(mag.size());
  for (std::size_t i = 0; i < mag.size(); ++i) values[i] = std::polar(mag[i], phase[i]);
  return ComplexImage(height, width, std::move(values));
}

double normalize_max_magnitude(ComplexImage& image) {
  double peak = 0.0;
  for (const Complex& v : image.values()) peak = std::max(peak, std::abs(v));
  if (peak == 0.0) return 1.0;
  const double s = 1.0 / peak;
  for (Complex& v : image.values()) v *= s;
  return s;
}

// ---- manifest -----------------------------------------------------------------------------

DatasetManifest parse_manifest(const std::string& text) {
  DatasetManifest m;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string head;
    ls >> head;
    bool ok = true;
    if (head == "split") {
      ok = static_cast<bool>(ls >> m.split[0] >> m.split[1] >> m.split[2]);
    } else if (head == "seed") {
      ok = static_cast<bool>(ls >> m.seed);
    } else if (head == "entry") {
      ManifestEntry e;
      ok = static_cast<bool>(ls >> e.sample_id >> e.path >> e.height >> e.width >> e.modality);
      if (ok) m.entries.push_back(std::move(e));
    } else {
      ok = false;
    }
    std::string extra;
    if (!ok || (ls >> extra)) {
      throw std::invalid_argument("manifest line " + std::to_string(lineno) + " is malformed: " + line);
    }
  }
  return m;
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ContainerError(ContainerErrorCode::Io, "cannot open manifest " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_manifest(ss.str());
}

std::string format_manifest(const DatasetManifest& manifest) {
  std::ostringstream os;
  os << "split " << manifest.split[0] << ' ' << manifest.split[1] << ' ' << manifest.split[2] << '\n';
  os << "seed " << manifest.seed << '\n';
  for (const ManifestEntry& e : manifest.entries) {
    os << "entry " << e.sample_id << ' ' << e.path << ' ' << e.height << ' ' << e.width << ' ' << e.modality << '\n';
  }
  return os.str();
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw ContainerError(ContainerErrorCode::Io, "cannot write manifest " + path.string());
  f << format_manifest(manifest);
}

std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& ratios) {
  double total = 0.0;
  for (double r : ratios) {
    if (!(r > 0.0) || !std::isfinite(r)) throw std::invalid_argument("split ratios must be positive and finite");
    total += r;
  }
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double quota = static_cast<double>(n) * ratios[i] / total;
    sizes[i] = static_cast<std::size_t>(std::floor(quota));
    rem[i] = quota - static_cast<double>(sizes[i]);
    assigned += sizes[i];
  }
  // Remainders within rounding noise of each other count as ties; ties favour the earlier split.
  constexpr double kTie = 1e-9;
  std::array<bool, 3> bumped{};
  while (assigned < n) {
    int best = -1;
    for (int i = 0; i < 3; ++i) {
      if (bumped[i]) continue;
      if (best < 0 || rem[i] > rem[best] + kTie) best = i;
    }
    bumped[best] = true;
    ++sizes[best];
    ++assigned;
  }
  return sizes;
}

DatasetSplit split_dataset(const DatasetManifest& manifest, const std::array<double, 3>& ratios,
                           std::uint64_t seed) {
  const std::size_t n = manifest.entries.size();
  if (n == 0) throw std::invalid_argument("split_dataset: manifest has no entries");
  const std::array<std::size_t, 3> sizes = split_sizes(n, ratios);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng() % (i + 1)]);
  DatasetSplit out;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < sizes[0]; ++i) out.train.push_back(manifest.entries[order[pos++]]);
  for (std::size_t i = 0; i < sizes[1]; ++i) out.val.push_back(manifest.entries[order[pos++]]);
  for (std::size_t i = 0; i < sizes[2]; ++i) out.test.push_back(manifest.entries[order[pos++]]);
  if (sizes[0] == 0 || sizes[1] == 0 || sizes[2] == 0) {
    log::warning("split_dataset: " + std::to_string(n) + " entries leave an empty split (" +
                 std::to_string(sizes[0]) + "/" + std::to_string(sizes[1]) + "/" + std::to_string(sizes[2]) + ")");
  }
  return out;
}

std::vector<Sample> load_samples(const std::vector<ManifestEntry>& entries, const std::filesystem::path& base_dir) {
  std::vector<Sample> out;
  for (const ManifestEntry& e : entries) {
    const std::filesystem::path p = std::filesystem::path(e.path).is_absolute() ? std::filesystem::path(e.path) : base_dir / e.path;
    ComplexImage img = load_image(p);
    if (img.height() != e.height || img.width() != e.width) {
      throw ContainerError(ContainerErrorCode::ShapeMismatch,
                           "sample " + e.sample_id + " is " + std::to_string(img.height()) + "x" +
                               std::to_string(img.width()) + ", manifest says " + std::to_string(e.height) + "x" +
                               std::to_string(e.width));
    }
    normalize_max_magnitude(img);
    out.push_back({e.sample_id, std::move(img)});
  }
  return out;
}

std::vector<Sample> make_phantom_set(PhantomKind kind, int count, int height, int width, std::uint64_t seed) {
  std::vector<Sample> out;
  for (int i = 0; i < count; ++i) {
    const std::uint64_t s = seed + static_cast<std::uint64_t>(i);
    out.push_back({to_string(kind) + "_" + std::to_string(s), make_phantom(kind, height, width, s)});
  }
  return out;
}

}  // namespace unfmri
