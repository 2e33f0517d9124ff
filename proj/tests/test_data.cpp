#include <doctest.h>

#include <cstring>
#include <fstream>
#include <set>

#include "support.hpp"
#include "unfmri/data.hpp"

using namespace unfmri;
using namespace testing;

namespace {

ContainerErrorCode decode_error(std::span<const std::uint8_t> bytes) {
  try {
    decode_container(bytes);
  } catch (const ContainerError& e) {
    return e.code();
  }
  FAIL("decode unexpectedly succeeded");
  return ContainerErrorCode::Io;
}

// Inside test as a quadratic form (p - c)^T Q (p - c) <= 1 with Q = R diag(rx^-2, ry^-2) R^T.
bool inside_quadratic(const Ellipse& e, double y, double x, double* level = nullptr) {
  Eigen::Matrix2d r;
  r << std::cos(e.angle), -std::sin(e.angle), std::sin(e.angle), std::cos(e.angle);
  const Eigen::Matrix2d q = r * Eigen::Vector2d(1.0 / (e.rx * e.rx), 1.0 / (e.ry * e.ry)).asDiagonal() * r.transpose();
  const Eigen::Vector2d d(x - e.cx, y - e.cy);
  const double v = d.dot(q * d);
  if (level) *level = v;
  return v <= 1.0;
}

DatasetManifest manifest_of(std::size_t n) {
  DatasetManifest m;
  for (std::size_t i = 0; i < n; ++i) m.entries.push_back({"s" + std::to_string(i), "s" + std::to_string(i) + ".umr", 16, 16, "mag"});
  return m;
}

}  // namespace

TEST_CASE("container byte layout") {
  const std::vector<double> v{1.0, -2.5};
  const std::vector<std::uint8_t> bytes = encode_container(make_real_container({2}, v));
  REQUIRE(bytes.size() == 8 + 1 + 1 + 4 + 16);
  CHECK(std::memcmp(bytes.data(), "UNFMRI01", 8) == 0);
  CHECK(bytes[8] == 1);
  CHECK(bytes[9] == 1);
  CHECK(bytes[10] == 2);
  CHECK(bytes[11] == 0);
  double first = 0.0;
  std::memcpy(&first, bytes.data() + 14, 8);
  CHECK(first == 1.0);
}

TEST_CASE("property: containers round trip for every dtype") {
  Gen g(1);
  for (int trial = 0; trial < 40; ++trial) {
    const int rank = uniform_int(g, 0, 4);
    std::vector<std::uint32_t> shape;
    std::size_t n = 1;
    for (int i = 0; i < rank; ++i) {
      shape.push_back(static_cast<std::uint32_t>(uniform_int(g, 1, 5)));
      n *= shape.back();
    }
    const auto dtype = static_cast<DType>(trial % 4);
    TensorContainer c;
    if (is_complex(dtype)) {
      std::vector<Complex> values(n);
      for (auto& x : values) x = {uniform(g, -1e3, 1e3), uniform(g, -1e3, 1e3)};
      c = make_complex_container(shape, values, dtype);
      const std::vector<Complex> back = container_complex(decode_container(encode_container(c)));
      for (std::size_t i = 0; i < n; ++i) {
        if (dtype == DType::C128) {
          CHECK(back[i] == values[i]);
        } else {
          CHECK(back[i].real() == static_cast<double>(static_cast<float>(values[i].real())));
          CHECK(back[i].imag() == static_cast<double>(static_cast<float>(values[i].imag())));
        }
      }
      CHECK_THROWS_AS(container_reals(c), ContainerError);
    } else {
      const std::vector<double> values = random_real(g, n, -1e3, 1e3);
      c = make_real_container(shape, values, dtype);
      const std::vector<double> back = container_reals(decode_container(encode_container(c)));
      for (std::size_t i = 0; i < n; ++i) {
        CHECK(back[i] == (dtype == DType::F64 ? values[i] : static_cast<double>(static_cast<float>(values[i]))));
      }
    }
    const TensorContainer d = decode_container(encode_container(c));
    CHECK(d.shape == c.shape);
    CHECK(d.dtype == c.dtype);
    CHECK(d.payload == c.payload);
  }
}

TEST_CASE("malformed containers report distinct error codes") {
  const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  const std::vector<std::uint8_t> good = encode_container(make_real_container({2, 2}, v));
  std::vector<std::uint8_t> bad = good;
  bad[0] = 'X';
  CHECK(decode_error(bad) == ContainerErrorCode::BadMagic);
  CHECK(decode_error(std::span(good).first(5)) == ContainerErrorCode::BadMagic);
  bad = good;
  bad[8] = 9;
  CHECK(decode_error(bad) == ContainerErrorCode::BadDtype);
  CHECK(decode_error(std::span(good).first(good.size() - 1)) == ContainerErrorCode::Truncated);
  CHECK(decode_error(std::span(good).first(12)) == ContainerErrorCode::Truncated);
  bad = good;
  bad.push_back(0);
  CHECK(decode_error(bad) == ContainerErrorCode::TrailingBytes);
  CHECK_THROWS_AS(make_real_container({3}, v), ContainerError);
  try {
    read_container("/nonexistent/dir/x.umr");
  } catch (const ContainerError& e) {
    CHECK(e.code() == ContainerErrorCode::Io);
  }
}

TEST_CASE("real pair layout decodes to the same image as complex payloads") {
  Gen g(2);
  const ComplexImage img = random_image(g, 8, 12);
  const auto dir = scratch_dir("data_pairs");
  save_image(dir / "c64.umr", img, DType::C64);
  save_image(dir / "f32.umr", img, DType::F32);
  save_image(dir / "c128.umr", img, DType::C128);
  save_image(dir / "f64.umr", img, DType::F64);
  CHECK(load_image(dir / "c64.umr").values() == load_image(dir / "f32.umr").values());
  CHECK(load_image(dir / "c128.umr").values() == img.values());
  CHECK(load_image(dir / "f64.umr").values() == img.values());
  CHECK(read_container(dir / "f32.umr").shape == std::vector<std::uint32_t>{8, 12, 2});
  // rank-2 real loads with zero imaginary part
  std::vector<double> mag(96);
  for (std::size_t i = 0; i < mag.size(); ++i) mag[i] = std::abs(img[i]);
  save_magnitude(dir / "mag.umr", mag, 8, 12);
  const ComplexImage m = load_image(dir / "mag.umr");
  for (std::size_t i = 0; i < mag.size(); ++i) CHECK(m[i] == Complex(mag[i], 0.0));
}

TEST_CASE("mask files round trip with their sidecar") {
  const auto dir = scratch_dir("data_mask");
  const UndersamplingMask m = make_mask(MaskKind::CartesianRandom, 32, 32, 4, 5, 4);
  save_mask(dir / "m.umr", m);
  CHECK(std::filesystem::exists(mask_sidecar_path(dir / "m.umr")));
  const UndersamplingMask back = load_mask(dir / "m.umr");
  CHECK(back.pattern == m.pattern);
  CHECK(back.kind == m.kind);
  CHECK(back.seed == m.seed);
  CHECK(back.acceleration == m.acceleration);
}

TEST_CASE("shepp-logan phantom") {
  const ComplexImage p = make_phantom(PhantomKind::SheppLogan, 64, 64, 0);
  double peak = 0.0;
  for (const Complex& v : p.values()) peak = std::max(peak, std::abs(v));
  CHECK(peak == doctest::Approx(1.0).epsilon(1e-12));
  for (auto [y, x] : {std::pair{0, 0}, std::pair{0, 63}, std::pair{63, 0}, std::pair{63, 63}, std::pair{32, 1}}) {
    CHECK(std::abs(p.at(y, x)) == 0.0);
  }
  CHECK(std::abs(p.at(32, 32)) > 0.0);
  const std::vector<double> mag = shepp_logan_magnitude(64, 64);
  for (double v : mag) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("random ellipse phantom matches a painter's-algorithm oracle") {
  for (std::uint64_t seed : {3ULL, 4ULL, 17ULL}) {
    const int n = 32;
    const std::vector<Ellipse> set = random_ellipse_set(n, n, seed);
    CHECK(set.size() >= 4);
    CHECK(set.size() <= 8);
    std::vector<double> expect(n * n, 0.0);
    int boundary = 0;
    for (const Ellipse& e : set) {
      for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
          double level = 0.0;
          if (inside_quadratic(e, y, x, &level)) expect[y * n + x] = e.intensity;
          if (std::abs(level - 1.0) < 1e-9) ++boundary;
          if (std::abs(level - 1.0) >= 1e-9) REQUIRE(e.contains(y, x) == (level <= 1.0));
        }
      }
    }
    const double peak = *std::max_element(expect.begin(), expect.end());
    const ComplexImage p = make_phantom(PhantomKind::RandomEllipses, n, n, seed);
    const std::vector<double> phase = smooth_phase(n, n, seed);
    if (boundary == 0) {
      for (int i = 0; i < n * n; ++i) {
        CHECK(std::abs(p[i]) == doctest::Approx(expect[i] / peak).epsilon(1e-12));
        CHECK(std::abs(phase[i]) <= std::numbers::pi / 4 + 1e-12);
        if (expect[i] > 0) CHECK(std::arg(p[i]) == doctest::Approx(phase[i]).epsilon(1e-9));
      }
    }
    CHECK(make_phantom(PhantomKind::RandomEllipses, n, n, seed).values() == p.values());
  }
  CHECK(make_phantom(PhantomKind::RandomEllipses, 32, 32, 3).values() !=
        make_phantom(PhantomKind::RandomEllipses, 32, 32, 4).values());
}

TEST_CASE("split sizes on the documented cases") {
  const std::array<double, 3> r{7, 1, 2};
  CHECK(split_sizes(10, r) == std::array<std::size_t, 3>{7, 1, 2});
  CHECK(split_sizes(1, r) == std::array<std::size_t, 3>{1, 0, 0});
  CHECK(split_sizes(578, r) == std::array<std::size_t, 3>{405, 58, 115});
  CHECK_THROWS_AS(split_sizes(10, {1, 0, 1}), std::invalid_argument);
}

TEST_CASE("property: split sizes are the nearest integer apportionment") {
  Gen g(3);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = static_cast<std::size_t>(uniform_int(g, 1, 60));
    const std::array<double, 3> ratios = trial % 3 == 0
                                             ? std::array<double, 3>{static_cast<double>(uniform_int(g, 1, 9)),
                                                                     static_cast<double>(uniform_int(g, 1, 9)),
                                                                     static_cast<double>(uniform_int(g, 1, 9))}
                                             : std::array<double, 3>{uniform(g, 0.1, 5), uniform(g, 0.1, 5), uniform(g, 0.1, 5)};
    const auto got = split_sizes(n, ratios);
    CHECK(got[0] + got[1] + got[2] == n);
    CHECK(got == reference_apportion(n, ratios));
  }
}

TEST_CASE("dataset splits are disjoint, complete and seed-deterministic") {
  const DatasetManifest m = manifest_of(37);
  const DatasetSplit a = split_dataset(m, {7, 1, 2}, 9);
  const DatasetSplit b = split_dataset(m, {7, 1, 2}, 9);
  const DatasetSplit c = split_dataset(m, {7, 1, 2}, 10);
  std::set<std::string> ids;
  for (const auto* part : {&a.train, &a.val, &a.test}) {
    for (const ManifestEntry& e : *part) CHECK(ids.insert(e.sample_id).second);
  }
  CHECK(ids.size() == 37);
  auto names = [](const std::vector<ManifestEntry>& v) {
    std::vector<std::string> out;
    for (const auto& e : v) out.push_back(e.sample_id);
    return out;
  };
  CHECK(names(a.train) == names(b.train));
  CHECK(names(a.test) == names(b.test));
  CHECK(names(a.train) != names(c.train));
  CHECK_THROWS_AS(split_dataset(manifest_of(0), {7, 1, 2}, 0), std::invalid_argument);
}

TEST_CASE("manifest text round trip and sample loading") {
  DatasetManifest m = manifest_of(3);
  m.split = {6, 2, 2};
  m.seed = 42;
  const DatasetManifest back = parse_manifest(format_manifest(m));
  CHECK(back.split == m.split);
  CHECK(back.seed == 42);
  REQUIRE(back.entries.size() == 3);
  CHECK(back.entries[2].path == "s2.umr");
  CHECK(back.entries[1].modality == "mag");
  CHECK(parse_manifest("# comment\n\nsplit 1 1 1\nseed 3\nentry a a.umr 16 16 mag\n").entries.size() == 1);
  CHECK_THROWS(parse_manifest("entry a a.umr sixteen 16 mag\n"));

  const auto dir = scratch_dir("data_manifest");
  Gen g(4);
  for (int i = 0; i < 3; ++i) save_image(dir / ("s" + std::to_string(i) + ".umr"), random_image(g, 16, 16, 5.0));
  write_manifest(dir / "manifest.txt", m);
  const DatasetManifest read = read_manifest(dir / "manifest.txt");
  const std::vector<Sample> samples = load_samples(read.entries, dir);
  REQUIRE(samples.size() == 3);
  for (const Sample& s : samples) {
    double peak = 0.0;
    for (const Complex& v : s.image.values()) peak = std::max(peak, std::abs(v));
    CHECK(peak == doctest::Approx(1.0).epsilon(1e-12));
  }
  DatasetManifest wrong = m;
  wrong.entries[0].height = 8;
  CHECK_THROWS_AS(load_samples(wrong.entries, dir), ContainerError);
}

TEST_CASE("phantom sets use consecutive seeds") {
  const std::vector<Sample> s = make_phantom_set(PhantomKind::RandomEllipses, 3, 32, 32, 100);
  REQUIRE(s.size() == 3);
  CHECK(s[1].image.values() == make_phantom(PhantomKind::RandomEllipses, 32, 32, 101).values());
  CHECK(s[0].id != s[2].id);
}
