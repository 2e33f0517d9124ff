#include "unfmri/pgsa.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace unfmri {

Pgsa::Pgsa(const PgsaConfig& config, Rng& rng) : config_(config) {
  if (config.num_splits <= 0 || config.channels <= 0 || config.channels % config.num_splits != 0) {
    throw std::invalid_argument("Pgsa: channel count " + std::to_string(config.channels) +
                                " not divisible by split count " + std::to_string(config.num_splits));
  }
  const int width = branch_width();
  const int groups = effective_groups();
  for (int i = 0; i < config.num_splits; ++i) {
    const int k = branch_kernel(i);
    branches_.push_back(ConvLayer::create(config.channels, width, k, {1, k / 2, groups}, rng));
  }
  for (int i = 0; i < config.num_splits; ++i) {
    gse_avg_.push_back(Bottleneck::create(width, config.reduction, rng));
    gse_max_.push_back(Bottleneck::create(width, config.reduction, rng));
    gate_avg_.push_back(make_parameter(Tensor::scalar(1.0)));
    gate_max_.push_back(make_parameter(Tensor::scalar(1.0)));
  }
}

int Pgsa::effective_groups() const {
  return std::gcd(std::max(1, config_.groups), std::gcd(config_.channels, branch_width()));
}

Var Pgsa::branch_feature(const Var& x, int branch) const { return branches_.at(branch)(x); }

Var Pgsa::pyramid_features(const Var& x) const {
  if (x.value().rank() != 3 || x.value().channels() != config_.channels) {
    throw std::invalid_argument("Pgsa: expected " + std::to_string(config_.channels) + " input channels, got " +
                                shape_string(x.shape()));
  }
  std::vector<Var> parts;
  parts.reserve(branches_.size());
  for (std::size_t i = 0; i < branches_.size(); ++i) parts.push_back(branch_feature(x, static_cast<int>(i)));
  return concat_channels(parts);
}

Var Pgsa::gse_weight(const Var& feature, int branch, Pool pool) const {
  const Var pooled = pool == Pool::Avg ? global_avg_pool(feature) : global_max_pool(feature);
  const Bottleneck& b = pool == Pool::Avg ? gse_avg_.at(branch) : gse_max_.at(branch);
  const Var& gate = pool == Pool::Avg ? gate_avg_.at(branch) : gate_max_.at(branch);
  return scale_by(b(pooled), gate);
}

Var Pgsa::attention(const Var& pyramid) const {
  const int width = branch_width();
  std::vector<Var> avg;
  std::vector<Var> max;
  for (int i = 0; i < config_.num_splits; ++i) {
    const Var f = slice_channels(pyramid, i * width, width);
    avg.push_back(as_feature(gse_weight(f, i, Pool::Avg)));
    max.push_back(as_feature(gse_weight(f, i, Pool::Max)));
  }
  const Var logits = add(as_vector(concat_channels(avg)), as_vector(concat_channels(max)));
  return sigmoid(logits);
}

Var Pgsa::forward(const Var& x) const {
  const Var pyramid = pyramid_features(x);
  const Var w = attention(pyramid);
  if (!w.value().all_finite()) {
    for (int i = 0; i < config_.num_splits; ++i) {
      for (int c = 0; c < branch_width(); ++c) {
        if (!std::isfinite(w.value()[i * branch_width() + c])) {
          throw std::runtime_error("Pgsa: non-finite attention weight in branch " + std::to_string(i));
        }
      }
    }
  }
  return channel_scale(pyramid, w);
}

void Pgsa::collect(ParameterList& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < branches_.size(); ++i) {
    const std::string p = prefix + ".branch" + std::to_string(i);
    branches_[i].collect(out, p + ".conv");
    gse_avg_[i].collect(out, p + ".gse_avg");
    gse_max_[i].collect(out, p + ".gse_max");
    out.emplace_back(p + ".gate_avg", gate_avg_[i]);
    out.emplace_back(p + ".gate_max", gate_max_[i]);
  }
}

SqueezeExcitation::SqueezeExcitation(int channels, int reduction, Rng& rng)
    : bottleneck_(Bottleneck::create(channels, reduction, rng)) {}

Var SqueezeExcitation::weights(const Var& x) const { return sigmoid(bottleneck_(global_avg_pool(x))); }

void SqueezeExcitation::collect(ParameterList& out, const std::string& prefix) const {
  bottleneck_.collect(out, prefix);
}

}  // namespace unfmri
