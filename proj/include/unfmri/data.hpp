#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "unfmri/kspace.hpp"

namespace unfmri {

// ---- tensor container ------------------------------------------------------------------

inline constexpr char kContainerMagic[8] = {'U', 'N', 'F', 'M', 'R', 'I', '0', '1'};

enum class DType : std::uint8_t { F32 = 0, F64 = 1, C64 = 2, C128 = 3 };

std::size_t dtype_size(DType t);
bool is_complex(DType t);
std::string to_string(DType t);

enum class ContainerErrorCode { BadMagic, BadDtype, ShapeMismatch, Truncated, TrailingBytes, Io };

std::string to_string(ContainerErrorCode code);

class ContainerError : public std::runtime_error {
 public:
  ContainerError(ContainerErrorCode code, const std::string& what);
  ContainerErrorCode code() const { return code_; }

 private:
  ContainerErrorCode code_;
};

/// In-memory form of the binary container. Payload bytes are little-endian, row-major.
struct TensorContainer {
  DType dtype = DType::F64;
  std::vector<std::uint32_t> shape;
  std::vector<std::uint8_t> payload;

  std::size_t numel() const;
};

std::vector<std::uint8_t> encode_container(const TensorContainer& c);
TensorContainer decode_container(std::span<const std::uint8_t> bytes);
void write_container(const std::filesystem::path& path, const TensorContainer& c);
TensorContainer read_container(const std::filesystem::path& path);

TensorContainer make_real_container(std::vector<std::uint32_t> shape, std::span<const double> values,
                                    DType dtype = DType::F64);
TensorContainer make_complex_container(std::vector<std::uint32_t> shape, std::span<const Complex> values,
                                       DType dtype = DType::C128);
/// Real values widened to double; throws BadDtype for complex payloads.
std::vector<double> container_reals(const TensorContainer& c);
/// Complex values from c64/c128 payloads or from real payloads whose trailing dimension is 2.
std::vector<Complex> container_complex(const TensorContainer& c);

/// Stored as rank-2 complex (C64/C128) or rank-3 real with a trailing (re, im) axis (F32/F64).
void save_image(const std::filesystem::path& path, const ComplexImage& image, DType dtype = DType::C128);
/// Accepts the layouts written by save_image plus rank-2 real (imaginary part zero).
ComplexImage load_image(const std::filesystem::path& path);
/// Rank-2 real magnitude image.
void save_magnitude(const std::filesystem::path& path, const std::vector<double>& magnitude, int height, int width);

/// Mask pattern as a rank-2 f32 container in centered layout, plus a `.meta` key=value sidecar.
void save_mask(const std::filesystem::path& path, const UndersamplingMask& mask);
UndersamplingMask load_mask(const std::filesystem::path& path);
std::filesystem::path mask_sidecar_path(const std::filesystem::path& path);

// ---- phantoms -------------------------------------------------------------------------

enum class PhantomKind { SheppLogan, RandomEllipses };

std::string to_string(PhantomKind k);
PhantomKind parse_phantom_kind(const std::string& name);

/// Ellipse in pixel coordinates: a pixel (y, x) is inside when its rotated, axis-scaled offset
/// from (cy, cx) has squared length <= 1.
struct Ellipse {
  double cy = 0.0;
  double cx = 0.0;
  double ry = 1.0;
  double rx = 1.0;
  double angle = 0.0;  // radians, counter-clockwise from the x axis
  double intensity = 0.0;

  bool contains(double y, double x) const;
};

/// The ellipses painted (in order, later ones overwrite) by the random_ellipses phantom.
std::vector<Ellipse> random_ellipse_set(int height, int width, std::uint64_t seed);
/// Modified Shepp-Logan magnitude (additive ellipses) clamped to [0, 1].
std::vector<double> shepp_logan_magnitude(int height, int width);
std::vector<double> paint_ellipses(const std::vector<Ellipse>& ellipses, int height, int width);
/// Smooth phase field with |phase| <= pi/4.
std::vector<double> smooth_phase(int height, int width, std::uint64_t seed);

ComplexImage make_phantom(PhantomKind kind, int height, int width, std::uint64_t seed);

/// Scales the image so its largest magnitude is 1; returns the applied factor (1 for all-zero input).
double normalize_max_magnitude(ComplexImage& image);

// ---- manifest and splitting --------------------------------------------------------------

struct ManifestEntry {
  std::string sample_id;
  std::string path;  // relative paths resolve against the manifest's directory
  int height = 0;
  int width = 0;
  std::string modality;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::array<double, 3> split{7.0, 1.0, 2.0};
  std::uint64_t seed = 0;
};

/// Text format: `split a b c`, `seed n`, then one `entry id path height width modality` per line.
/// Blank lines and `#` comments are ignored.
DatasetManifest parse_manifest(const std::string& text);
DatasetManifest read_manifest(const std::filesystem::path& path);
std::string format_manifest(const DatasetManifest& manifest);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

/// Largest-remainder apportionment of n items to the given ratios; ties go to the earlier split.
std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& ratios);

struct DatasetSplit {
  std::vector<ManifestEntry> train;
  std::vector<ManifestEntry> val;
  std::vector<ManifestEntry> test;
};

DatasetSplit split_dataset(const DatasetManifest& manifest, const std::array<double, 3>& ratios,
                           std::uint64_t seed);

struct Sample {
  std::string id;
  ComplexImage image;
};

/// Loads every entry (paths relative to base_dir) and normalizes each to max magnitude 1.
std::vector<Sample> load_samples(const std::vector<ManifestEntry>& entries, const std::filesystem::path& base_dir);
/// count phantoms with seeds seed, seed+1, ...
std::vector<Sample> make_phantom_set(PhantomKind kind, int count, int height, int width, std::uint64_t seed);

}  // namespace unfmri
