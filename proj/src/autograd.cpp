#include "unfmri/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace unfmri {

namespace {

thread_local bool g_grad_enabled = true;

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                                " vs " + shape_string(b.shape()));
  }
}

void require_rank3(const Var& a, const char* op) {
  if (a.value().rank() != 3) {
    throw std::invalid_argument(std::string(op) + ": expected (C, H, W), got " +
                                shape_string(a.shape()));
  }
}

// Gradient buffer of input i, or nullptr when that input does not need one.
Tensor* input_grad(Node& self, std::size_t i) {
  Node& in = *self.inputs[i];
  return in.requires_grad ? &in.grad_buffer() : nullptr;
}

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

void Var::zero_grad() {
  if (node_) node_->grad = Tensor();
}

Var Var::make(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
  Var out(std::move(value), false);
  if (!g_grad_enabled) return out;
  bool needs = false;
  for (const Var& in : inputs) needs = needs || in.requires_grad();
  if (!needs) return out;
  out.node_->requires_grad = true;
  out.node_->inputs.reserve(inputs.size());
  for (Var& in : inputs) out.node_->inputs.push_back(in.node_);
  out.node_->backward = std::move(backward);
  return out;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& root) { backward(root, Tensor(root.shape(), 1.0)); }

void backward(const Var& root, const Tensor& seed) {
  if (!root.defined() || !root.requires_grad()) return;
  if (seed.shape() != root.shape()) throw std::invalid_argument("backward: seed shape mismatch");

  // Iterative post-order DFS yields a topological order (inputs before users).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (n->backward) n->grad = Tensor();
  }
  root.node()->grad_buffer().add_inplace(seed);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

Var constant(Tensor value) { return Var(std::move(value), false); }

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  out.add_inplace(b.value());
  return Var::make(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t i = 0; i < 2; ++i) {
      if (Tensor* g = input_grad(self, i)) g->add_inplace(self.grad);
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out[i] -= b.value()[i];
  return Var::make(std::move(out), {a, b}, [](Node& self) {
    if (Tensor* g = input_grad(self, 0)) g->add_inplace(self.grad);
    if (Tensor* g = input_grad(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return Var::make(std::move(out), {a, b}, [](Node& self) {
    const Tensor& av = self.inputs[0]->value;
    const Tensor& bv = self.inputs[1]->value;
    if (Tensor* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bv[i];
    }
    if (Tensor* g = input_grad(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * av[i];
    }
  });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= s;
  return Var::make(std::move(out), {a}, [s](Node& self) {
    if (Tensor* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += s * self.grad[i];
    }
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v += s;
  return Var::make(std::move(out), {a}, [](Node& self) {
    if (Tensor* g = input_grad(self, 0)) g->add_inplace(self.grad);
  });
}

Var scale_by(const Var& a, const Var& s) {
  if (s.value().size() != 1) throw std::invalid_argument("scale_by: factor must hold one entry");
  const double f = s.value()[0];
  Tensor out = a.value();
  for (double& v : out.values()) v *= f;
  return Var::make(std::move(out), {a, s}, [](Node& self) {
    const Tensor& av = self.inputs[0]->value;
    const double f = self.inputs[1]->value[0];
    if (Tensor* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += f * self.grad[i];
    }
    if (Tensor* g = input_grad(self, 1)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < av.size(); ++i) acc += self.grad[i] * av[i];
      (*g)[0] += acc;
    }
  });
}

Var sum_all(std::span<const Var> terms) {
  if (terms.empty()) throw std::invalid_argument("sum_all: no terms");
  Tensor out = terms[0].value();
  for (std::size_t t = 1; t < terms.size(); ++t) {
    require_same_shape(terms[0], terms[t], "sum_all");
    out.add_inplace(terms[t].value());
  }
  std::vector<Var> inputs(terms.begin(), terms.end());
  return Var::make(std::move(out), std::move(inputs), [](Node& self) {
    for (std::size_t i = 0; i < self.inputs.size(); ++i) {
      if (Tensor* g = input_grad(self, i)) g->add_inplace(self.grad);
    }
  });
}

Var sigmoid(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
  return Var::make(std::move(out), {a}, [](Node& self) {
    if (Tensor* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) {
        const double s = self.value[i];
        (*g)[i] += self.grad[i] * s * (1.0 - s);
      }
    }
  });
}

Var relu(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return Var::make(std::move(out), {a}, [](Node& self) {
    const Tensor& av = self.inputs[0]->value;
    if (Tensor* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) {
        if (av[i] > 0.0) (*g)[i] += self.grad[i];
      }
    }
  });
}

Var gelu(const Var& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  Tensor out = a.value();
  for (double& v : out.values()) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  return Var::make(std::move(out), {a}, [](Node& self) {
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    const Tensor& av = self.inputs[0]->value;
    if (Tensor* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) {
        const double x = av[i];
        const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        (*g)[i] += self.grad[i] * (cdf + x * pdf);
      }
    }
  });
}

Var abs(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.values()) v = std::fabs(v);
  return Var::make(std::move(out), {a}, [](Node& self) {
    const Tensor& av = self.inputs[0]->value;
    if (Tensor* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) {
        const double s = av[i] > 0.0 ? 1.0 : (av[i] < 0.0 ? -1.0 : 0.0);
        (*g)[i] += self.grad[i] * s;
      }
    }
  });
}

Var square(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.values()) v = v * v;
  return Var::make(std::move(out), {a}, [](Node& self) {
    const Tensor& av = self.inputs[0]->value;
    if (Tensor* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += 2.0 * av[i] * self.grad[i];
    }
  });
}

Var sum(const Var& a) {
  double acc = 0.0;
  for (double v : a.value().values()) acc += v;
  return Var::make(Tensor::scalar(acc), {a}, [](Node& self) {
    if (Tensor* g = input_grad(self, 0)) {
      const double s = self.grad[0];
      for (double& v : g->values()) v += s;
    }
  });
}

Var mean(const Var& a) {
  const auto n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var dot_constant(const Var& a, const Tensor& w) {
  if (a.value().size() != w.size()) throw std::invalid_argument("dot_constant: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) acc += a.value()[i] * w[i];
  return Var::make(Tensor::scalar(acc), {a}, [w](Node& self) {
    if (Tensor* g = input_grad(self, 0)) {
      const double s = self.grad[0];
      for (std::size_t i = 0; i < w.size(); ++i) (*g)[i] += s * w[i];
    }
  });
}

Var concat_channels(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no parts");
  int total = 0;
  for (const Var& p : parts) {
    require_rank3(p, "concat_channels");
    if (p.value().height() != parts[0].value().height() ||
        p.value().width() != parts[0].value().width()) {
      throw std::invalid_argument("concat_channels: spatial size mismatch");
    }
    total += p.value().channels();
  }
  Tensor out({total, parts[0].value().height(), parts[0].value().width()});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    std::copy(p.value().values().begin(), p.value().values().end(), out.values().begin() + offset);
    offset += p.value().size();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return Var::make(std::move(out), std::move(inputs), [](Node& self) {
    std::size_t offset = 0;
    for (std::size_t i = 0; i < self.inputs.size(); ++i) {
      const std::size_t n = self.inputs[i]->value.size();
      if (Tensor* g = input_grad(self, i)) {
        for (std::size_t j = 0; j < n; ++j) (*g)[j] += self.grad[offset + j];
      }
      offset += n;
    }
  });
}

Var slice_channels(const Var& a, int begin, int count) {
  require_rank3(a, "slice_channels");
  const Tensor& av = a.value();
  if (begin < 0 || count <= 0 || begin + count > av.channels()) {
    throw std::invalid_argument("slice_channels: range out of bounds");
  }
  Tensor out({count, av.height(), av.width()});
  const std::size_t offset = begin * av.plane();
  std::copy(av.values().begin() + offset, av.values().begin() + offset + out.size(),
            out.values().begin());
  return Var::make(std::move(out), {a}, [offset](Node& self) {
    if (Tensor* g = input_grad(self, 0)) {
      for (std::size_t j = 0; j < self.grad.size(); ++j) (*g)[offset + j] += self.grad[j];
    }
  });
}

Var channel_scale(const Var& x, const Var& s) {
  require_rank3(x, "channel_scale");
  const Tensor& xv = x.value();
  if (s.value().size() != static_cast<std::size_t>(xv.channels())) {
    throw std::invalid_argument("channel_scale: weight length must equal channel count");
  }
  Tensor out = xv;
  const std::size_t plane = xv.plane();
  for (int c = 0; c < xv.channels(); ++c) {
    const double f = s.value()[c];
    double* p = out.channel(c);
    for (std::size_t i = 0; i < plane; ++i) p[i] *= f;
  }
  return Var::make(std::move(out), {x, s}, [](Node& self) {
    const Tensor& xv = self.inputs[0]->value;
    const Tensor& sv = self.inputs[1]->value;
    const std::size_t plane = xv.plane();
    Tensor* gx = input_grad(self, 0);
    Tensor* gs = input_grad(self, 1);
    for (int c = 0; c < xv.channels(); ++c) {
      const double* go = self.grad.channel(c);
      if (gx) {
        double* d = gx->channel(c);
        for (std::size_t i = 0; i < plane; ++i) d[i] += go[i] * sv[c];
      }
      if (gs) {
        const double* xc = xv.channel(c);
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += go[i] * xc[i];
        (*gs)[c] += acc;
      }
    }
  });
}

Var global_avg_pool(const Var& x) {
  require_rank3(x, "global_avg_pool");
  const Tensor& xv = x.value();
  const std::size_t plane = xv.plane();
  Tensor out({xv.channels()});
  for (int c = 0; c < xv.channels(); ++c) {
    const double* p = xv.channel(c);
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += p[i];
    out[c] = acc / static_cast<double>(plane);
  }
  return Var::make(std::move(out), {x}, [](Node& self) {
    if (Tensor* g = input_grad(self, 0)) {
      const std::size_t plane = g->plane();
      for (int c = 0; c < g->channels(); ++c) {
        const double share = self.grad[c] / static_cast<double>(plane);
        double* d = g->channel(c);
        for (std::size_t i = 0; i < plane; ++i) d[i] += share;
      }
    }
  });
}

Var global_max_pool(const Var& x) {
  require_rank3(x, "global_max_pool");
  const Tensor& xv = x.value();
  const std::size_t plane = xv.plane();
  Tensor out({xv.channels()});
  std::vector<std::size_t> argmax(static_cast<std::size_t>(xv.channels()), 0);
  for (int c = 0; c < xv.channels(); ++c) {
    const double* p = xv.channel(c);
    std::size_t best = 0;
    for (std::size_t i = 1; i < plane; ++i) {
      if (p[i] > p[best]) best = i;
    }
    argmax[c] = best;
    out[c] = p[best];
  }
  return Var::make(std::move(out), {x}, [argmax = std::move(argmax)](Node& self) {
    if (Tensor* g = input_grad(self, 0)) {
      for (int c = 0; c < g->channels(); ++c) g->channel(c)[argmax[c]] += self.grad[c];
    }
  });
}

Var as_feature(const Var& v) {
  Tensor out({static_cast<int>(v.value().size()), 1, 1}, v.value().values());
  return Var::make(std::move(out), {v}, [](Node& self) {
    if (Tensor* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

Var as_vector(const Var& x) {
  Tensor out({static_cast<int>(x.value().size())}, x.value().values());
  return Var::make(std::move(out), {x}, [](Node& self) {
    if (Tensor* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

Var layer_norm_channels(const Var& x, const Var& gamma, const Var& beta, double eps) {
  require_rank3(x, "layer_norm_channels");
  const Tensor& xv = x.value();
  const int channels = xv.channels();
  const std::size_t plane = xv.plane();
  if (gamma.value().size() != static_cast<std::size_t>(channels) ||
      beta.value().size() != static_cast<std::size_t>(channels)) {
    throw std::invalid_argument("layer_norm_channels: affine parameters must match channel count");
  }
  Tensor normalized(xv.shape());
  std::vector<double> inv_std(plane);
  Tensor out(xv.shape());
  const double inv_c = 1.0 / channels;
  for (std::size_t p = 0; p < plane; ++p) {
    double m = 0.0;
    for (int c = 0; c < channels; ++c) m += xv.channel(c)[p];
    m *= inv_c;
    double var = 0.0;
    for (int c = 0; c < channels; ++c) {
      const double d = xv.channel(c)[p] - m;
      var += d * d;
    }
    var *= inv_c;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[p] = is;
    for (int c = 0; c < channels; ++c) {
      const double n = (xv.channel(c)[p] - m) * is;
      normalized.channel(c)[p] = n;
      out.channel(c)[p] = n * gamma.value()[c] + beta.value()[c];
    }
  }
  return Var::make(
      std::move(out), {x, gamma, beta},
      [normalized = std::move(normalized), inv_std = std::move(inv_std)](Node& self) {
        const Tensor& gv = self.inputs[1]->value;
        const int channels = normalized.channels();
        const std::size_t plane = normalized.plane();
        Tensor* gx = input_grad(self, 0);
        Tensor* gg = input_grad(self, 1);
        Tensor* gb = input_grad(self, 2);
        const double inv_c = 1.0 / channels;
        std::vector<double> dn(static_cast<std::size_t>(channels));
        for (std::size_t p = 0; p < plane; ++p) {
          double mean_dn = 0.0;
          double mean_dn_n = 0.0;
          for (int c = 0; c < channels; ++c) {
            const double go = self.grad.channel(c)[p];
            const double n = normalized.channel(c)[p];
            if (gg) (*gg)[c] += go * n;
            if (gb) (*gb)[c] += go;
            dn[c] = go * gv[c];
            mean_dn += dn[c];
            mean_dn_n += dn[c] * n;
          }
          if (!gx) continue;
          mean_dn *= inv_c;
          mean_dn_n *= inv_c;
          for (int c = 0; c < channels; ++c) {
            const double n = normalized.channel(c)[p];
            gx->channel(c)[p] += inv_std[p] * (dn[c] - mean_dn - n * mean_dn_n);
          }
        }
      });
}

Var reflect_pad(const Var& x, int bottom, int right) {
  require_rank3(x, "reflect_pad");
  const Tensor& xv = x.value();
  const int h = xv.height();
  const int w = xv.width();
  if (bottom < 0 || right < 0 || h < 2 || w < 2) {
    throw std::invalid_argument("reflect_pad: negative padding or image thinner than 2 pixels");
  }
  // Mirror about the edge pixels, folding again for pads longer than the image.
  auto mirror = [](int i, int n) {
    const int period = 2 * n - 2;
    i %= period;
    return i < n ? i : period - i;
  };
  if (bottom == 0 && right == 0) return x;
  const int ho = h + bottom;
  const int wo = w + right;
  std::vector<int> src(static_cast<std::size_t>(ho) * wo);
  for (int y = 0; y < ho; ++y) {
    const int sy = mirror(y, h);
    for (int xx = 0; xx < wo; ++xx) {
      const int sx = mirror(xx, w);
      src[static_cast<std::size_t>(y) * wo + xx] = sy * w + sx;
    }
  }
  Tensor out({xv.channels(), ho, wo});
  for (int c = 0; c < xv.channels(); ++c) {
    const double* in = xv.channel(c);
    double* o = out.channel(c);
    for (std::size_t p = 0; p < src.size(); ++p) o[p] = in[src[p]];
  }
  return Var::make(std::move(out), {x}, [src = std::move(src)](Node& self) {
    if (Tensor* g = input_grad(self, 0)) {
      for (int c = 0; c < g->channels(); ++c) {
        const double* go = self.grad.channel(c);
        double* d = g->channel(c);
        for (std::size_t p = 0; p < src.size(); ++p) d[src[p]] += go[p];
      }
    }
  });
}

Var crop(const Var& x, int height, int width) {
  require_rank3(x, "crop");
  const Tensor& xv = x.value();
  if (height > xv.height() || width > xv.width()) {
    throw std::invalid_argument("crop: target larger than input");
  }
  if (height == xv.height() && width == xv.width()) return x;
  Tensor out({xv.channels(), height, width});
  for (int c = 0; c < xv.channels(); ++c) {
    for (int y = 0; y < height; ++y) {
      std::copy_n(xv.channel(c) + static_cast<std::size_t>(y) * xv.width(), width,
                  out.channel(c) + static_cast<std::size_t>(y) * width);
    }
  }
  return Var::make(std::move(out), {x}, [](Node& self) {
    if (Tensor* g = input_grad(self, 0)) {
      const int h = self.value.height();
      const int w = self.value.width();
      for (int c = 0; c < g->channels(); ++c) {
        for (int y = 0; y < h; ++y) {
          const double* go = self.grad.channel(c) + static_cast<std::size_t>(y) * w;
          double* d = g->channel(c) + static_cast<std::size_t>(y) * g->width();
          for (int xx = 0; xx < w; ++xx) d[xx] += go[xx];
        }
      }
    }
  });
}

Var permute_pixels(const Var& x, std::span<const int> source) {
  require_rank3(x, "permute_pixels");
  const Tensor& xv = x.value();
  if (source.size() != xv.plane()) throw std::invalid_argument("permute_pixels: size mismatch");
  std::vector<int> src(source.begin(), source.end());
  Tensor out(xv.shape());
  for (int c = 0; c < xv.channels(); ++c) {
    const double* in = xv.channel(c);
    double* o = out.channel(c);
    for (std::size_t p = 0; p < src.size(); ++p) o[p] = in[src[p]];
  }
  return Var::make(std::move(out), {x}, [src = std::move(src)](Node& self) {
    if (Tensor* g = input_grad(self, 0)) {
      for (int c = 0; c < g->channels(); ++c) {
        const double* go = self.grad.channel(c);
        double* d = g->channel(c);
        for (std::size_t p = 0; p < src.size(); ++p) d[src[p]] += go[p];
      }
    }
  });
}

Var pair_magnitude(const Var& x) {
  require_rank3(x, "pair_magnitude");
  const Tensor& xv = x.value();
  if (xv.channels() != 2) throw std::invalid_argument("pair_magnitude: expected 2 channels");
  const std::size_t plane = xv.plane();
  Tensor out({1, xv.height(), xv.width()});
  for (std::size_t p = 0; p < plane; ++p) {
    out[p] = std::hypot(xv.channel(0)[p], xv.channel(1)[p]);
  }
  return Var::make(std::move(out), {x}, [](Node& self) {
    const Tensor& xv = self.inputs[0]->value;
    if (Tensor* g = input_grad(self, 0)) {
      const std::size_t plane = xv.plane();
      for (std::size_t p = 0; p < plane; ++p) {
        const double m = self.value[p];
        if (m == 0.0) continue;
        g->channel(0)[p] += self.grad[p] * xv.channel(0)[p] / m;
        g->channel(1)[p] += self.grad[p] * xv.channel(1)[p] / m;
      }
    }
  });
}

Var pair_mean(const Var& x) {
  require_rank3(x, "pair_mean");
  const Tensor& xv = x.value();
  if (xv.channels() % 2 != 0) throw std::invalid_argument("pair_mean: odd channel count");
  const int pairs = xv.channels() / 2;
  const std::size_t plane = xv.plane();
  Tensor out({2, xv.height(), xv.width()});
  for (int j = 0; j < pairs; ++j) {
    for (int part = 0; part < 2; ++part) {
      const double* in = xv.channel(2 * j + part);
      double* o = out.channel(part);
      for (std::size_t p = 0; p < plane; ++p) o[p] += in[p];
    }
  }
  const double inv = 1.0 / pairs;
  for (double& v : out.values()) v *= inv;
  return Var::make(std::move(out), {x}, [pairs](Node& self) {
    if (Tensor* g = input_grad(self, 0)) {
      const double inv = 1.0 / pairs;
      const std::size_t plane = g->plane();
      for (int c = 0; c < g->channels(); ++c) {
        const double* go = self.grad.channel(c % 2);
        double* d = g->channel(c);
        for (std::size_t p = 0; p < plane; ++p) d[p] += go[p] * inv;
      }
    }
  });
}

Var self_adjoint_linear(const Var& x, const LinearMap& map) {
  Tensor out = map(x.value());
  if (out.shape() != x.shape()) throw std::invalid_argument("self_adjoint_linear: map changed shape");
  return Var::make(std::move(out), {x}, [map](Node& self) {
    if (Tensor* g = input_grad(self, 0)) g->add_inplace(map(self.grad));
  });
}

}  // namespace unfmri
