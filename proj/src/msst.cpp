#include "unfmri/msst.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace unfmri {

namespace {

int round_up(int v, int multiple) { return ((v + multiple - 1) / multiple) * multiple; }

void check_finite(const Var& v, const char* where) {
  if (!v.value().all_finite()) {
    throw std::runtime_error(std::string("MSST: non-finite values at ") + where);
  }
}

std::vector<int> shuffle_axis(int n, int window) {
  const int tiles = n / window;
  std::vector<int> src(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) src[i] = (i % window) * tiles + i / window;
  return src;
}

}  // namespace

int MsstConfig::padded_height() const { return round_up(height, 4 * window); }
int MsstConfig::padded_width() const { return round_up(width, 4 * window); }

std::vector<int> shuffle_permutation(int height, int width, int window) {
  if (window <= 0 || height % window != 0 || width % window != 0) {
    throw std::invalid_argument("shuffle_permutation: size not divisible by window");
  }
  const std::vector<int> rows = shuffle_axis(height, window);
  const std::vector<int> cols = shuffle_axis(width, window);
  std::vector<int> perm(static_cast<std::size_t>(height) * width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) perm[static_cast<std::size_t>(y) * width + x] = rows[y] * width + cols[x];
  }
  return perm;
}

std::vector<int> inverse_permutation(const std::vector<int>& permutation) {
  std::vector<int> inv(permutation.size(), -1);
  for (std::size_t p = 0; p < permutation.size(); ++p) {
    const int s = permutation[p];
    if (s < 0 || static_cast<std::size_t>(s) >= permutation.size() || inv[s] != -1) {
      throw std::invalid_argument("inverse_permutation: not a permutation");
    }
    inv[s] = static_cast<int>(p);
  }
  return inv;
}

HalfShuffleBlock::HalfShuffleBlock(int channels, int heads, int window, int ffn_expansion, Rng& rng)
    : channels_(channels), window_(window) {
  if (channels % 2 != 0) throw std::invalid_argument("HalfShuffleBlock: channel count must be even");
  heads_ = std::gcd(std::max(1, heads), channels / 2);
  norm1_ = LayerNormLayer::create(channels);
  norm2_ = LayerNormLayer::create(channels);
  qkv_ = ConvLayer::create(channels, 3 * channels, 1, {}, rng);
  proj_ = ConvLayer::create(channels, channels, 1, {}, rng);
  ffn_in_ = ConvLayer::create(channels, ffn_expansion * channels, 1, {}, rng);
  ffn_out_ = ConvLayer::create(ffn_expansion * channels, channels, 1, {}, rng);
}

Var HalfShuffleBlock::attention(const Var& normalized) const {
  const int c = channels_;
  const int half = c / 2;
  const Var qkv = qkv_(normalized);
  auto part = [&](int which, int offset) { return slice_channels(qkv, which * c + offset, half); };

  const Var local = window_attention(part(0, 0), part(1, 0), part(2, 0), heads_, window_);

  const Tensor& shape_ref = normalized.value();
  const std::vector<int> perm = shuffle_permutation(shape_ref.height(), shape_ref.width(), window_);
  const std::vector<int> inv = inverse_permutation(perm);
  const Var qs = permute_pixels(part(0, half), perm);
  const Var ks = permute_pixels(part(1, half), perm);
  const Var vs = permute_pixels(part(2, half), perm);
  const Var shuffled = permute_pixels(window_attention(qs, ks, vs, heads_, window_), inv);

  const Var halves[] = {local, shuffled};
  return proj_(concat_channels(halves));
}

Var HalfShuffleBlock::forward(const Var& x) const {
  const Var y = add(x, attention(norm1_(x)));
  return add(y, ffn_out_(gelu(ffn_in_(norm2_(y)))));
}

void HalfShuffleBlock::collect(ParameterList& out, const std::string& prefix) const {
  norm1_.collect(out, prefix + ".norm1");
  qkv_.collect(out, prefix + ".qkv");
  proj_.collect(out, prefix + ".proj");
  norm2_.collect(out, prefix + ".norm2");
  ffn_in_.collect(out, prefix + ".ffn_in");
  ffn_out_.collect(out, prefix + ".ffn_out");
}

Var cse_forward(const Var& x, const SqueezeExcitation& params) { return params.forward(x); }

Msst::Msst(const MsstConfig& config, Rng& rng) : config_(config) {
  const int c = config.channels;
  const int s = config.num_splits;
  if (s <= 0 || c % s != 0) throw std::invalid_argument("Msst: channels not divisible by split count");
  const int split = c / s;
  for (int i = 1; i < s; ++i) sdc_.push_back(ConvLayer::create(split, split, 3, {1, 1, split}, rng));
  pos_ = make_parameter(Tensor({c, config.padded_height(), config.padded_width()}, 0.0));
  norm_ = LayerNormLayer::create(c);
  const int w = config.window;
  const int hd = config.heads;
  const int fx = config.ffn_expansion;
  enc0_ = HalfShuffleBlock(c, hd, w, fx, rng);
  down0_ = ConvLayer::create(c, 2 * c, 4, {2, 1, 1}, rng);
  enc1_ = HalfShuffleBlock(2 * c, hd, w, fx, rng);
  down1_ = ConvLayer::create(2 * c, 4 * c, 4, {2, 1, 1}, rng);
  bottleneck_ = HalfShuffleBlock(4 * c, hd, w, fx, rng);
  up1_ = UpsampleLayer::create(4 * c, 2 * c, rng);
  fuse1_ = ConvLayer::create(4 * c, 2 * c, 1, {}, rng);
  dec1_ = HalfShuffleBlock(2 * c, hd, w, fx, rng);
  cse1_ = SqueezeExcitation(2 * c, config.reduction, rng);
  up0_ = UpsampleLayer::create(2 * c, c, rng);
  fuse0_ = ConvLayer::create(2 * c, c, 1, {}, rng);
  dec0_ = HalfShuffleBlock(c, hd, w, fx, rng);
  cse0_ = SqueezeExcitation(c, config.reduction, rng);
  final_ = ConvLayer::create(c, c, 1, {}, rng, 0.1);
}

Var Msst::sdc_forward(const Var& x) const {
  const int s = config_.num_splits;
  if (x.value().rank() != 3 || x.value().channels() % s != 0) {
    throw std::invalid_argument("sdc_forward: channels not divisible by split count");
  }
  const int split = x.value().channels() / s;
  std::vector<Var> blocks;
  blocks.push_back(slice_channels(x, 0, split));
  for (int i = 1; i < s; ++i) {
    Var subset = slice_channels(x, i * split, split);
    if (i >= 2) subset = add(subset, blocks.back());
    blocks.push_back(sdc_[i - 1](subset));
  }
  return concat_channels(blocks);
}

Var Msst::forward(const Var& x) const {
  const Tensor& xv = x.value();
  if (xv.rank() != 3 || xv.channels() != config_.channels || xv.height() != config_.height ||
      xv.width() != config_.width) {
    throw std::invalid_argument("Msst: input " + shape_string(xv.shape()) + " does not match configuration");
  }
  const Var padded =
      reflect_pad(x, config_.padded_height() - config_.height, config_.padded_width() - config_.width);
  Var b = norm_(add(sdc_forward(padded), pos_));
  check_finite(b, "embedding");
  const Var e0 = enc0_(b);
  const Var e1 = enc1_(down0_(e0));
  check_finite(e1, "encoder");
  const Var mid = bottleneck_(down1_(e1));
  check_finite(mid, "bottleneck");
  const Var skip1[] = {up1_(mid), e1};
  const Var d1 = cse_forward(dec1_(fuse1_(concat_channels(skip1))), cse1_);
  const Var skip0[] = {up0_(d1), e0};
  const Var d0 = cse_forward(dec0_(fuse0_(concat_channels(skip0))), cse0_);
  check_finite(d0, "decoder");
  return add(crop(final_(d0), config_.height, config_.width), x);
}

void Msst::collect(ParameterList& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < sdc_.size(); ++i) sdc_[i].collect(out, prefix + ".sdc" + std::to_string(i + 2));
  out.emplace_back(prefix + ".pos", pos_);
  norm_.collect(out, prefix + ".norm");
  enc0_.collect(out, prefix + ".enc0");
  down0_.collect(out, prefix + ".down0");
  enc1_.collect(out, prefix + ".enc1");
  down1_.collect(out, prefix + ".down1");
  bottleneck_.collect(out, prefix + ".bottleneck");
  up1_.collect(out, prefix + ".up1");
  fuse1_.collect(out, prefix + ".fuse1");
  dec1_.collect(out, prefix + ".dec1");
  cse1_.collect(out, prefix + ".cse1");
  up0_.collect(out, prefix + ".up0");
  fuse0_.collect(out, prefix + ".fuse0");
  dec0_.collect(out, prefix + ".dec0");
  cse0_.collect(out, prefix + ".cse0");
  final_.collect(out, prefix + ".final");
}

ConvUnet::ConvUnet(int channels, Rng& rng) {
  const int c = channels;
  enc0_ = ConvLayer::create(c, c, 3, {1, 1, 1}, rng);
  down0_ = ConvLayer::create(c, 2 * c, 4, {2, 1, 1}, rng);
  enc1_ = ConvLayer::create(2 * c, 2 * c, 3, {1, 1, 1}, rng);
  down1_ = ConvLayer::create(2 * c, 4 * c, 4, {2, 1, 1}, rng);
  mid_ = ConvLayer::create(4 * c, 4 * c, 3, {1, 1, 1}, rng);
  up1_ = UpsampleLayer::create(4 * c, 2 * c, rng);
  dec1_ = ConvLayer::create(4 * c, 2 * c, 3, {1, 1, 1}, rng);
  up0_ = UpsampleLayer::create(2 * c, c, rng);
  dec0_ = ConvLayer::create(2 * c, c, 3, {1, 1, 1}, rng);
  final_ = ConvLayer::create(c, c, 1, {}, rng, 0.1);
}

Var ConvUnet::forward(const Var& x) const {
  const Tensor& xv = x.value();
  if (xv.rank() != 3) throw std::invalid_argument("ConvUnet: expected (C, H, W)");
  const int h = xv.height();
  const int w = xv.width();
  const Var padded = reflect_pad(x, round_up(h, 4) - h, round_up(w, 4) - w);
  const Var e0 = relu(enc0_(padded));
  const Var e1 = relu(enc1_(down0_(e0)));
  const Var mid = relu(mid_(down1_(e1)));
  const Var skip1[] = {up1_(mid), e1};
  const Var d1 = relu(dec1_(concat_channels(skip1)));
  const Var skip0[] = {up0_(d1), e0};
  const Var d0 = relu(dec0_(concat_channels(skip0)));
  return add(crop(final_(d0), h, w), x);
}

void ConvUnet::collect(ParameterList& out, const std::string& prefix) const {
  enc0_.collect(out, prefix + ".enc0");
  down0_.collect(out, prefix + ".down0");
  enc1_.collect(out, prefix + ".enc1");
  down1_.collect(out, prefix + ".down1");
  mid_.collect(out, prefix + ".mid");
  up1_.collect(out, prefix + ".up1");
  dec1_.collect(out, prefix + ".dec1");
  up0_.collect(out, prefix + ".up0");
  dec0_.collect(out, prefix + ".dec0");
  final_.collect(out, prefix + ".final");
}

}  // namespace unfmri
