#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "unfmri/tensor.hpp"

namespace unfmri {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer();
};

/// Handle to a node of a reverse-mode computation graph. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  bool requires_grad() const { return node_->requires_grad; }
  const std::vector<int>& shape() const { return node_->value.shape(); }
  void zero_grad();

  const std::shared_ptr<Node>& node() const { return node_; }

  static Var make(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

 private:
  std::shared_ptr<Node> node_;
};

/// Runs reverse accumulation from a scalar root (seed gradient 1).
void backward(const Var& root);
/// Runs reverse accumulation with an explicit seed gradient.
void backward(const Var& root, const Tensor& seed);

/// Switches graph recording off for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

Var constant(Tensor value);

// Elementwise arithmetic. Operands share a shape.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
/// Multiplies every entry of `a` by the single-entry tensor `s`.
Var scale_by(const Var& a, const Var& s);
Var sum_all(std::span<const Var> terms);

Var sigmoid(const Var& a);
Var relu(const Var& a);
Var gelu(const Var& a);
Var abs(const Var& a);
Var square(const Var& a);

// Reductions to a single entry.
Var sum(const Var& a);
Var mean(const Var& a);
/// Sum of a ⊙ w for a constant weight tensor.
Var dot_constant(const Var& a, const Tensor& w);

// Channel layout (rank 3).
Var concat_channels(std::span<const Var> parts);
Var slice_channels(const Var& a, int begin, int count);
/// x[c, :, :] * s[c] for s of shape (C).
Var channel_scale(const Var& x, const Var& s);
/// Per-channel spatial mean, shape (C).
Var global_avg_pool(const Var& x);
/// Per-channel spatial maximum, shape (C).
Var global_max_pool(const Var& x);
/// Reshapes a (C) vector to (C, 1, 1) and back.
Var as_feature(const Var& v);
Var as_vector(const Var& x);

/// Normalizes each pixel across channels; gamma, beta have shape (C).
Var layer_norm_channels(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

struct Conv2dSpec {
  int stride = 1;
  int padding = 0;
  int groups = 1;
};
/// Zero-padded cross-correlation. weight: (Cout, Cin/groups, K, K); bias (Cout) or undefined.
Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dSpec spec);
/// Transposed convolution with kernel 2 and stride 2. weight: (Cin, Cout, 2, 2).
Var conv_transpose2x2(const Var& x, const Var& weight, const Var& bias);

Var reflect_pad(const Var& x, int bottom, int right);
Var crop(const Var& x, int height, int width);
/// out[c, p] = x[c, source[p]] for a pixel permutation `source`.
Var permute_pixels(const Var& x, std::span<const int> source);

/// Multi-head self-attention within non-overlapping window x window tiles.
/// q, k, v: (Cq, H, W); Cq is split evenly across heads.
Var window_attention(const Var& q, const Var& k, const Var& v, int heads, int window);
/// Softmax attention weights for one tile and head, (n x n) row-major, n = window^2.
std::vector<double> window_attention_weights(const Tensor& q, const Tensor& k, int heads, int window,
                                             int tile, int head);

/// Magnitude of a (2, H, W) real/imaginary pair tensor, shape (1, H, W).
Var pair_magnitude(const Var& x);
/// Mean of the m channel pairs of a (2m, H, W) tensor, shape (2, H, W).
Var pair_mean(const Var& x);

/// A self-adjoint real-linear map applied to the value and, in reverse, to the gradient.
using LinearMap = std::function<Tensor(const Tensor&)>;
Var self_adjoint_linear(const Var& x, const LinearMap& map);

}  // namespace unfmri
