#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "unfmri/autograd.hpp"

namespace unfmri {

using Rng = std::mt19937_64;

/// Named learnable leaves in registration order.
using ParameterList = std::vector<std::pair<std::string, Var>>;

std::size_t count_parameters(const ParameterList& params);
Var make_parameter(Tensor value);
/// Uniform samples in [-bound, bound].
Tensor uniform_tensor(std::vector<int> shape, double bound, Rng& rng);
/// Derives an independent generator for a named sub-stream of `seed`.
Rng derive_rng(std::uint64_t seed, std::uint64_t stream);

/// Convolution layer. Weights use fan-in scaled uniform init, biases start at zero;
/// `init_scale` shrinks the weight bound (small-output layers).
struct ConvLayer {
  Var weight;
  Var bias;
  Conv2dSpec spec;

  static ConvLayer create(int in_channels, int out_channels, int kernel, Conv2dSpec spec, Rng& rng,
                          double init_scale = 1.0);
  Var operator()(const Var& x) const { return conv2d(x, weight, bias, spec); }
  void collect(ParameterList& out, const std::string& prefix) const;
  int in_channels() const { return weight.value().dim(1) * spec.groups; }
  int out_channels() const { return weight.value().dim(0); }
};

struct UpsampleLayer {
  Var weight;
  Var bias;

  static UpsampleLayer create(int in_channels, int out_channels, Rng& rng);
  Var operator()(const Var& x) const { return conv_transpose2x2(x, weight, bias); }
  void collect(ParameterList& out, const std::string& prefix) const;
};

struct LayerNormLayer {
  Var gamma;
  Var beta;

  static LayerNormLayer create(int channels);
  Var operator()(const Var& x) const { return layer_norm_channels(x, gamma, beta); }
  void collect(ParameterList& out, const std::string& prefix) const;
};

/// Squeeze-excitation bottleneck on a pooled (C) vector: reduce, ReLU, expand.
/// Returns pre-sigmoid logits of length C.
struct Bottleneck {
  ConvLayer reduce;
  ConvLayer expand;

  static Bottleneck create(int channels, int reduction, Rng& rng);
  Var operator()(const Var& pooled) const;
  void collect(ParameterList& out, const std::string& prefix) const;
};

/// Zeroes the value of every parameter in the list.
void zero_values(const ParameterList& params);

}  // namespace unfmri
