#pragma once

#include <string>
#include <vector>

#include "unfmri/nn.hpp"
#include "unfmri/pgsa.hpp"

namespace unfmri {

struct MsstConfig {
  int channels = 32;
  int num_splits = 4;
  int window = 8;
  int heads = 4;
  int height = 64;   // input image size; internal maps are reflect-padded to multiples of 4 * window
  int width = 64;
  int reduction = 4;
  int ffn_expansion = 2;

  int padded_height() const;
  int padded_width() const;
};

/// Pixel permutation gathering every (H/window)-th row and column into one window.
/// Entry p holds the source pixel of shuffled position p.
std::vector<int> shuffle_permutation(int height, int width, int window);
std::vector<int> inverse_permutation(const std::vector<int>& permutation);

/// Half-shuffle attention block: pre-norm windowed attention where the first channel half
/// attends within local windows and the second half within shuffled (dilated) windows,
/// followed by a pre-norm feed-forward block. Both sub-blocks are residual.
class HalfShuffleBlock {
 public:
  HalfShuffleBlock() = default;
  HalfShuffleBlock(int channels, int heads, int window, int ffn_expansion, Rng& rng);

  Var forward(const Var& x) const;
  Var operator()(const Var& x) const { return forward(x); }
  /// Attention branch only (no residual): projection of the concatenated half outputs.
  Var attention(const Var& normalized) const;
  int heads_per_half() const { return heads_; }
  int window() const { return window_; }

  void collect(ParameterList& out, const std::string& prefix) const;

  ConvLayer& qkv() { return qkv_; }
  ConvLayer& projection() { return proj_; }
  ConvLayer& ffn_out() { return ffn_out_; }

 private:
  int channels_ = 0;
  int heads_ = 1;
  int window_ = 8;
  LayerNormLayer norm1_;
  LayerNormLayer norm2_;
  ConvLayer qkv_;
  ConvLayer proj_;
  ConvLayer ffn_in_;
  ConvLayer ffn_out_;
};

/// Channel squeeze-excitation recalibration used in the decoder.
Var cse_forward(const Var& x, const SqueezeExcitation& params);

/// Multi-scale split transformer denoiser: split depth-wise convolution cascade, learned
/// positional encoding, channel layer norm, and a three-level U of half-shuffle blocks with
/// a global residual from the input.
class Msst {
 public:
  Msst() = default;
  Msst(const MsstConfig& config, Rng& rng);

  const MsstConfig& config() const { return config_; }
  Var sdc_forward(const Var& x) const;
  Var forward(const Var& x) const;
  Var operator()(const Var& x) const { return forward(x); }

  void collect(ParameterList& out, const std::string& prefix) const;

  std::vector<ConvLayer>& sdc() { return sdc_; }
  ConvLayer& final_layer() { return final_; }
  HalfShuffleBlock& encoder(int level) { return level == 0 ? enc0_ : enc1_; }

 private:
  MsstConfig config_;
  std::vector<ConvLayer> sdc_;
  Var pos_;
  LayerNormLayer norm_;
  HalfShuffleBlock enc0_, enc1_, bottleneck_, dec1_, dec0_;
  ConvLayer down0_, down1_, fuse1_, fuse0_, final_;
  UpsampleLayer up1_, up0_;
  SqueezeExcitation cse1_, cse0_;
};

/// Convolutional U-shaped denoiser with the same resolution schedule and global residual
/// as Msst but no attention.
class ConvUnet {
 public:
  ConvUnet() = default;
  ConvUnet(int channels, Rng& rng);

  Var forward(const Var& x) const;
  Var operator()(const Var& x) const { return forward(x); }
  void collect(ParameterList& out, const std::string& prefix) const;

 private:
  ConvLayer enc0_, down0_, enc1_, down1_, mid_, dec1_, dec0_, final_;
  UpsampleLayer up1_, up0_;
};

}  // namespace unfmri
