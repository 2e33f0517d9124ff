#include "unfmri/nn.hpp"

#include <algorithm>
#include <cmath>

namespace unfmri {

std::size_t count_parameters(const ParameterList& params) {
  std::size_t n = 0;
  for (const auto& [name, p] : params) n += p.value().size();
  return n;
}

Var make_parameter(Tensor value) { return Var(std::move(value), true); }

Tensor uniform_tensor(std::vector<int> shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

Rng derive_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    0x9e3779b9u};
  return Rng(seq);
}

ConvLayer ConvLayer::create(int in_channels, int out_channels, int kernel, Conv2dSpec spec, Rng& rng,
                            double init_scale) {
  const int in_g = in_channels / spec.groups;
  const double fan_in = static_cast<double>(in_g) * kernel * kernel;
  ConvLayer layer;
  layer.spec = spec;
  layer.weight = make_parameter(
      uniform_tensor({out_channels, in_g, kernel, kernel}, init_scale / std::sqrt(fan_in), rng));
  layer.bias = make_parameter(Tensor({out_channels}, 0.0));
  return layer;
}

void ConvLayer::collect(ParameterList& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

UpsampleLayer UpsampleLayer::create(int in_channels, int out_channels, Rng& rng) {
  UpsampleLayer layer;
  layer.weight = make_parameter(
      uniform_tensor({in_channels, out_channels, 2, 2}, 1.0 / std::sqrt(in_channels * 1.0), rng));
  layer.bias = make_parameter(Tensor({out_channels}, 0.0));
  return layer;
}

void UpsampleLayer::collect(ParameterList& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

LayerNormLayer LayerNormLayer::create(int channels) {
  return {make_parameter(Tensor({channels}, 1.0)), make_parameter(Tensor({channels}, 0.0))};
}

void LayerNormLayer::collect(ParameterList& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".gamma", gamma);
  out.emplace_back(prefix + ".beta", beta);
}

Bottleneck Bottleneck::create(int channels, int reduction, Rng& rng) {
  const int hidden = std::max(1, channels / reduction);
  return {ConvLayer::create(channels, hidden, 1, {}, rng), ConvLayer::create(hidden, channels, 1, {}, rng)};
}

Var Bottleneck::operator()(const Var& pooled) const {
  return as_vector(expand(relu(reduce(as_feature(pooled)))));
}

void Bottleneck::collect(ParameterList& out, const std::string& prefix) const {
  reduce.collect(out, prefix + ".reduce");
  expand.collect(out, prefix + ".expand");
}

void zero_values(const ParameterList& params) {
  for (const auto& [name, p] : params) {
    Var handle = p;
    handle.mutable_value().fill(0.0);
  }
}

}  // namespace unfmri
