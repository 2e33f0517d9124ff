#pragma once

#include <vector>

#include "unfmri/nn.hpp"

namespace unfmri {

struct PgsaConfig {
  int channels = 32;
  int num_splits = 4;
  int groups = 4;      // grouped-convolution groups per pyramid branch
  int reduction = 4;   // squeeze-excitation bottleneck ratio
};

enum class Pool { Avg, Max };

/// Pyramid gated-squeeze attention.
///
/// Branch i convolves the full input with a (2i+1) x (2i+1) grouped kernel into C/S
/// channels. Each branch feature is squeezed by average and by max pooling, passed
/// through its own bottleneck and scaled by a learnable gate; the concatenated avg and
/// max fragments are summed and squashed by one sigmoid into per-channel weights.
class Pgsa {
 public:
  Pgsa() = default;
  Pgsa(const PgsaConfig& config, Rng& rng);

  const PgsaConfig& config() const { return config_; }
  int branch_width() const { return config_.channels / config_.num_splits; }
  int branch_kernel(int i) const { return 2 * (i + 1) + 1; }
  /// Group count actually used (the configured count reduced to divide C and C/S).
  int effective_groups() const;

  Var pyramid_features(const Var& x) const;
  Var branch_feature(const Var& x, int branch) const;
  /// Pre-sigmoid logit fragment for one branch, length C/S.
  Var gse_weight(const Var& branch_feature, int branch, Pool pool) const;
  /// Sigmoid attention weights W over the whole pyramid feature map, length C.
  Var attention(const Var& pyramid) const;
  Var forward(const Var& x) const;
  Var operator()(const Var& x) const { return forward(x); }

  void collect(ParameterList& out, const std::string& prefix) const;

  std::vector<ConvLayer>& branches() { return branches_; }
  const std::vector<ConvLayer>& branches() const { return branches_; }
  std::vector<Bottleneck>& gse(Pool pool) { return pool == Pool::Avg ? gse_avg_ : gse_max_; }
  std::vector<Var>& gates(Pool pool) { return pool == Pool::Avg ? gate_avg_ : gate_max_; }

 private:
  PgsaConfig config_;
  std::vector<ConvLayer> branches_;
  std::vector<Bottleneck> gse_avg_;
  std::vector<Bottleneck> gse_max_;
  std::vector<Var> gate_avg_;
  std::vector<Var> gate_max_;
};

/// Plain channel squeeze-excitation: avg pool, bottleneck, sigmoid, rescale.
class SqueezeExcitation {
 public:
  SqueezeExcitation() = default;
  SqueezeExcitation(int channels, int reduction, Rng& rng);

  Var weights(const Var& x) const;
  Var forward(const Var& x) const { return channel_scale(x, weights(x)); }
  Var operator()(const Var& x) const { return forward(x); }
  void collect(ParameterList& out, const std::string& prefix) const;
  Bottleneck& bottleneck() { return bottleneck_; }

 private:
  Bottleneck bottleneck_;
};

}  // namespace unfmri
