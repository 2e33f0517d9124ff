#include <doctest.h>

#include <numeric>
#include <set>

#include "support.hpp"
#include "unfmri/msst.hpp"
#include "unfmri/pgsa.hpp"

using namespace unfmri;
using namespace testing;

namespace {

double sigmoid_ref(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Bottleneck logits on a pooled vector, written as explicit matrix products.
std::vector<double> bottleneck_ref(const Bottleneck& b, const std::vector<double>& pooled) {
  const Tensor& w1 = b.reduce.weight.value();
  const Tensor& w2 = b.expand.weight.value();
  const int hidden = w1.dim(0), c = w1.dim(1);
  std::vector<double> h(hidden), out(c);
  for (int j = 0; j < hidden; ++j) {
    double s = b.reduce.bias.value()[j];
    for (int i = 0; i < c; ++i) s += w1[j * c + i] * pooled[i];
    h[j] = std::max(0.0, s);
  }
  for (int i = 0; i < c; ++i) {
    double s = b.expand.bias.value()[i];
    for (int j = 0; j < hidden; ++j) s += w2[i * hidden + j] * h[j];
    out[i] = s;
  }
  return out;
}

void zero(const ParameterList& params, const std::string& needle) {
  for (const auto& [name, p] : params) {
    if (name.find(needle) != std::string::npos) {
      Var handle = p;
      handle.mutable_value().fill(0.0);
    }
  }
}

ParameterList params_of(const auto& module) {
  ParameterList out;
  module.collect(out, "m");
  return out;
}

}  // namespace

TEST_CASE("pyramid attention shapes, kernels and groups") {
  Rng rng(1);
  const Pgsa p({32, 4, 4, 4}, rng);
  CHECK(p.branch_width() == 8);
  CHECK(p.effective_groups() == 4);
  for (int i = 0; i < 4; ++i) {
    CHECK(p.branch_kernel(i) == 2 * i + 3);
    CHECK(p.branches()[i].weight.value().shape() == std::vector<int>{8, 8, 2 * i + 3, 2 * i + 3});
  }
  Gen g(1);
  const Var x(random_tensor(g, {32, 12, 10}));
  CHECK(p(x).shape() == std::vector<int>{32, 12, 10});
  CHECK_THROWS_AS(Pgsa({30, 4, 4, 4}, rng), std::invalid_argument);
  CHECK_THROWS_AS(p(Var(random_tensor(g, {16, 8, 8}))), std::invalid_argument);
  // the configured count is reduced until it divides both C and C/S
  CHECK(Pgsa({24, 4, 4, 4}, rng).effective_groups() == 2);
}

TEST_CASE("property: pyramid attention weights equal the pooled-bottleneck formula") {
  Gen g(2);
  for (int trial = 0; trial < 8; ++trial) {
    const int s = std::array{2, 4}[uniform_int(g, 0, 1)];
    const int c = s * 2 * uniform_int(g, 1, 3);
    Rng rng(trial);
    Pgsa p({c, s, 2, 2}, rng);
    for (int i = 0; i < s; ++i) {
      p.gates(Pool::Avg)[i].mutable_value()[0] = uniform(g, -2, 2);
      p.gates(Pool::Max)[i].mutable_value()[0] = uniform(g, -2, 2);
      p.gse(Pool::Avg)[i].expand.bias.mutable_value()[0] = uniform(g, -1, 1);
    }
    const int h = uniform_int(g, 5, 9), w = uniform_int(g, 5, 9);
    const Var x(random_tensor(g, {c, h, w}));
    const Tensor pyramid = p.pyramid_features(x).value();
    const Tensor weights = p.attention(Var(pyramid)).value();
    const int width = c / s;
    for (int i = 0; i < s; ++i) {
      // branch i sees the whole input through its own kernel
      const ConvLayer& conv = p.branches()[i];
      const Tensor f = naive_conv(x.value(), conv.weight.value(), conv.bias.value(), 1, conv.spec.padding, conv.spec.groups);
      std::vector<double> avg(width, 0.0), mx(width, -INFINITY);
      for (int ch = 0; ch < width; ++ch) {
        for (int y = 0; y < h; ++y) {
          for (int xx = 0; xx < w; ++xx) {
            const double v = f.at(ch, y, xx);
            REQUIRE(pyramid.at(i * width + ch, y, xx) == doctest::Approx(v).epsilon(1e-12));
            avg[ch] += v / (h * w);
            mx[ch] = std::max(mx[ch], v);
          }
        }
      }
      const std::vector<double> la = bottleneck_ref(p.gse(Pool::Avg)[i], avg);
      const std::vector<double> lm = bottleneck_ref(p.gse(Pool::Max)[i], mx);
      const double ga = p.gates(Pool::Avg)[i].value()[0], gm = p.gates(Pool::Max)[i].value()[0];
      for (int ch = 0; ch < width; ++ch) {
        const double expect = sigmoid_ref(ga * la[ch] + gm * lm[ch]);
        CHECK(weights[i * width + ch] == doctest::Approx(expect).epsilon(1e-12));
        CHECK(weights[i * width + ch] > 0.0);
        CHECK(weights[i * width + ch] < 1.0);
      }
    }
    const Tensor out = p(x).value();
    for (int ch = 0; ch < c; ++ch) CHECK(out.at(ch, 1, 2) == doctest::Approx(weights[ch] * pyramid.at(ch, 1, 2)).epsilon(1e-12));
  }
}

TEST_CASE("zero logits give weights of one half") {
  Rng rng(3);
  Pgsa p({16, 4, 4, 4}, rng);
  SUBCASE("zeroed expansion layers") { zero(params_of(p), ".expand"); }
  SUBCASE("zeroed gates") {
    for (int i = 0; i < 4; ++i) {
      p.gates(Pool::Avg)[i].mutable_value().fill(0.0);
      p.gates(Pool::Max)[i].mutable_value().fill(0.0);
    }
  }
  Gen g(3);
  const Var x(random_tensor(g, {16, 8, 8}));
  const Tensor w = p.attention(p.pyramid_features(x)).value();
  for (std::size_t i = 0; i < w.size(); ++i) CHECK(w[i] == 0.5);
}

TEST_CASE("squeeze-excitation weights are the sigmoid of the bottleneck on the mean") {
  Rng rng(4);
  SqueezeExcitation se(8, 4, rng);
  Gen g(4);
  const Var x(random_tensor(g, {8, 6, 7}));
  std::vector<double> avg(8, 0.0);
  for (int c = 0; c < 8; ++c) {
    for (int i = 0; i < 42; ++i) avg[c] += x.value()[c * 42 + i] / 42.0;
  }
  const std::vector<double> logits = bottleneck_ref(se.bottleneck(), avg);
  const Tensor w = se.weights(x).value();
  for (int c = 0; c < 8; ++c) CHECK(w[c] == doctest::Approx(sigmoid_ref(logits[c])).epsilon(1e-12));
}

TEST_CASE("pyramid attention gradients") {
  Rng rng(5);
  const Pgsa p({8, 2, 2, 2}, rng);
  Gen g(5);
  Var x(random_tensor(g, {8, 5, 5}), true);
  std::vector<Var> leaves{x};
  for (const auto& [name, v] : params_of(p)) leaves.push_back(v);
  CHECK(gradient_error(leaves, [&] { return p(x); }, g) < 1e-4);
}

TEST_CASE("split depth-wise cascade follows its recurrence") {
  Rng rng(6);
  Msst m({8, 4, 2, 2, 8, 8, 4, 2}, rng);
  Gen g(6);
  const Var x(random_tensor(g, {8, 8, 8}));
  const Tensor out = m.sdc_forward(x).value();
  // block 0 passes through; block i convolves its own slice plus the previous block output
  std::vector<Tensor> blocks;
  for (int i = 0; i < 4; ++i) {
    Tensor slice({2, 8, 8});
    for (std::size_t j = 0; j < slice.size(); ++j) slice[j] = x.value()[i * 128 + j];
    if (i == 0) {
      blocks.push_back(slice);
      continue;
    }
    if (i >= 2) {
      for (std::size_t j = 0; j < slice.size(); ++j) slice[j] += blocks.back()[j];
    }
    const ConvLayer& conv = m.sdc()[i - 1];
    CHECK(conv.spec.groups == 2);
    blocks.push_back(naive_conv(slice, conv.weight.value(), conv.bias.value(), 1, 1, 2));
  }
  for (int i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 128; ++j) CHECK(out[i * 128 + j] == doctest::Approx(blocks[i][j]).epsilon(1e-12));
  }
  CHECK(params_of(m).size() > 0);
  CHECK(m.sdc().size() == 3);
}

TEST_CASE("shuffle permutation is invertible and dilates windows") {
  for (int n : {8, 16}) {
    for (int window : {1, 2, 4, 8}) {
      if (n % window) continue;
      const std::vector<int> perm = shuffle_permutation(n, n, window);
      const std::vector<int> inv = inverse_permutation(perm);
      std::set<int> seen(perm.begin(), perm.end());
      CHECK(seen.size() == perm.size());
      for (std::size_t p = 0; p < perm.size(); ++p) CHECK(inv[perm[p]] == static_cast<int>(p));
      // the first window of the shuffled map gathers pixels spaced n / window apart
      const int stride = n / window;
      for (int y = 0; y < window; ++y) {
        for (int x = 0; x < window; ++x) CHECK(perm[y * n + x] == (y * stride) * n + x * stride);
      }
    }
  }
  CHECK_THROWS(shuffle_permutation(12, 12, 8));
  CHECK_THROWS(inverse_permutation({0, 0, 1}));
}

TEST_CASE("half-shuffle block reduces to the identity with zero output layers") {
  Rng rng(7);
  HalfShuffleBlock b(8, 4, 4, 2, rng);
  CHECK(b.heads_per_half() == 4);
  ParameterList p;
  b.collect(p, "b");
  zero(p, ".proj");
  zero(p, ".ffn_out");
  Gen g(7);
  const Var x(random_tensor(g, {8, 8, 8}));
  CHECK(b(x).value().values() == x.value().values());
  // head count is reduced to divide the half width
  CHECK(HalfShuffleBlock(12, 4, 4, 2, rng).heads_per_half() == 2);
}

TEST_CASE("half-shuffle attention uses local windows on the first half and shuffled on the second") {
  Rng rng(8);
  HalfShuffleBlock b(4, 1, 2, 2, rng);
  // identity qkv so the first half is attention on raw channels; projection is the identity
  Tensor& qkv = b.qkv().weight.mutable_value();
  qkv.fill(0.0);
  for (int part = 0; part < 3; ++part) {
    for (int c = 0; c < 4; ++c) qkv[((part * 4 + c) * 4 + c)] = 1.0;
  }
  Tensor& proj = b.projection().weight.mutable_value();
  proj.fill(0.0);
  for (int c = 0; c < 4; ++c) proj[c * 4 + c] = 1.0;
  Gen g(8);
  const Var x(random_tensor(g, {4, 4, 4}));
  const Tensor out = b.attention(x).value();
  auto half = [&](int from) {
    Tensor t({2, 4, 4});
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = x.value()[from * 16 + j];
    return Var(t);
  };
  const Tensor local = window_attention(half(0), half(0), half(0), 1, 2).value();
  const std::vector<int> perm = shuffle_permutation(4, 4, 2);
  const Var s = permute_pixels(half(2), perm);
  const Tensor shuffled = permute_pixels(window_attention(s, s, s, 1, 2), inverse_permutation(perm)).value();
  for (std::size_t j = 0; j < 32; ++j) {
    CHECK(out[j] == doctest::Approx(local[j]).epsilon(1e-12));
    CHECK(out[32 + j] == doctest::Approx(shuffled[j]).epsilon(1e-12));
  }
}

TEST_CASE("msst pads internally and returns the input size") {
  Rng rng(9);
  for (auto [h, w] : {std::pair{16, 16}, std::pair{12, 20}}) {
    Msst m({4, 2, 2, 2, h, w, 4, 2}, rng);
    CHECK(m.config().padded_height() % 8 == 0);
    CHECK(m.config().padded_width() % 8 == 0);
    Gen g(9);
    const Var x(random_tensor(g, {4, h, w}));
    const Tensor out = m(x).value();
    CHECK(out.shape() == std::vector<int>{4, h, w});
    CHECK(out.all_finite());
    ParameterList p;
    m.collect(p, "m");
    zero(p, ".final");
    CHECK(m(x).value().values() == x.value().values());
  }
  Msst m({4, 2, 2, 2, 16, 16, 4, 2}, rng);
  Gen g(10);
  CHECK_THROWS_AS(m(Var(random_tensor(g, {4, 8, 8}))), std::invalid_argument);
}

TEST_CASE("msst and conv U-net gradients") {
  Rng rng(11);
  Msst m({4, 2, 2, 2, 8, 8, 4, 2}, rng);
  Gen g(11);
  Var x(random_tensor(g, {4, 8, 8}), true);
  ParameterList p;
  m.collect(p, "m");
  std::vector<Var> leaves{x};
  for (const auto& [name, v] : p) {
    if (name.find("enc0.qkv") != std::string::npos || name.find("sdc") != std::string::npos ||
        name.find("cse0") != std::string::npos) {
      leaves.push_back(v);
    }
  }
  CHECK(leaves.size() > 3);
  CHECK(gradient_error(leaves, [&] { return m(x); }, g) < 1e-4);

  const ConvUnet u(4, rng);
  CHECK(u(x).shape() == std::vector<int>{4, 8, 8});
  CHECK(gradient_error({x}, [&] { return u(x); }, g) < 1e-4);
}
