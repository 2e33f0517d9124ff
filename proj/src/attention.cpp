#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <stdexcept>

#include "unfmri/autograd.hpp"

namespace unfmri {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct WindowLayout {
  int channels = 0, height = 0, width = 0, heads = 0, window = 0;
  int head_dim() const { return channels / heads; }
  int tiles_x() const { return width / window; }
  int tiles() const { return (height / window) * tiles_x(); }
  int tokens() const { return window * window; }

  std::size_t pixel(int tile, int token) const {
    const int ty = tile / tiles_x();
    const int tx = tile % tiles_x();
    const int y = ty * window + token / window;
    const int x = tx * window + token % window;
    return static_cast<std::size_t>(y) * width + x;
  }

  // (tokens, head_dim) block of one head inside one tile.
  void gather(const Tensor& t, int tile, int head, RowMatrix& m) const {
    m.resize(tokens(), head_dim());
    const std::size_t plane = t.plane();
    for (int n = 0; n < tokens(); ++n) {
      const std::size_t p = pixel(tile, n);
      for (int d = 0; d < head_dim(); ++d) m(n, d) = t[(head * head_dim() + d) * plane + p];
    }
  }

  void scatter_add(const RowMatrix& m, int tile, int head, Tensor& t) const {
    const std::size_t plane = t.plane();
    for (int n = 0; n < tokens(); ++n) {
      const std::size_t p = pixel(tile, n);
      for (int d = 0; d < head_dim(); ++d) t[(head * head_dim() + d) * plane + p] += m(n, d);
    }
  }
};

WindowLayout make_layout(const Tensor& q, int heads, int window) {
  if (q.rank() != 3) throw std::invalid_argument("window_attention: expected (C, H, W)");
  WindowLayout l{q.channels(), q.height(), q.width(), heads, window};
  if (heads <= 0 || l.channels % heads != 0) {
    throw std::invalid_argument("window_attention: channels not divisible by heads");
  }
  if (window <= 0 || l.height % window != 0 || l.width % window != 0) {
    throw std::invalid_argument("window_attention: spatial size not divisible by window");
  }
  return l;
}

void softmax_rows(RowMatrix& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const double mx = s.row(r).maxCoeff();
    double total = 0.0;
    for (Eigen::Index c = 0; c < s.cols(); ++c) {
      const double e = std::exp(s(r, c) - mx);
      s(r, c) = e;
      total += e;
    }
    s.row(r) /= total;
  }
}

}  // namespace

Var window_attention(const Var& q, const Var& k, const Var& v, int heads, int window) {
  if (q.shape() != k.shape() || q.shape() != v.shape()) {
    throw std::invalid_argument("window_attention: q, k, v shapes differ");
  }
  const WindowLayout layout = make_layout(q.value(), heads, window);
  const double scale = 1.0 / std::sqrt(static_cast<double>(layout.head_dim()));
  const bool keep = grad_enabled() && (q.requires_grad() || k.requires_grad() || v.requires_grad());
  auto probs = std::make_shared<std::vector<RowMatrix>>();
  if (keep) probs->resize(static_cast<std::size_t>(layout.tiles()) * heads);

  Tensor out(q.shape());
  RowMatrix qm, km, vm, s, o;
  for (int tile = 0; tile < layout.tiles(); ++tile) {
    for (int h = 0; h < heads; ++h) {
      layout.gather(q.value(), tile, h, qm);
      layout.gather(k.value(), tile, h, km);
      layout.gather(v.value(), tile, h, vm);
      s.noalias() = (qm * km.transpose()) * scale;
      softmax_rows(s);
      o.noalias() = s * vm;
      layout.scatter_add(o, tile, h, out);
      if (keep) (*probs)[static_cast<std::size_t>(tile) * heads + h] = std::move(s);
    }
  }

  return Var::make(std::move(out), {q, k, v}, [layout, scale, probs](Node& self) {
    Node& qn = *self.inputs[0];
    Node& kn = *self.inputs[1];
    Node& vn = *self.inputs[2];
    RowMatrix qm, km, vm, go, dp, ds, tmp;
    for (int tile = 0; tile < layout.tiles(); ++tile) {
      for (int h = 0; h < layout.heads; ++h) {
        const RowMatrix& p = (*probs)[static_cast<std::size_t>(tile) * layout.heads + h];
        layout.gather(self.grad, tile, h, go);
        if (vn.requires_grad) {
          tmp.noalias() = p.transpose() * go;
          layout.scatter_add(tmp, tile, h, vn.grad_buffer());
        }
        if (!qn.requires_grad && !kn.requires_grad) continue;
        layout.gather(vn.value, tile, h, vm);
        dp.noalias() = go * vm.transpose();
        ds = p.cwiseProduct(dp);
        const Eigen::VectorXd row_sums = ds.rowwise().sum();
        ds.noalias() -= (p.array().colwise() * row_sums.array()).matrix();
        ds *= scale;
        if (qn.requires_grad) {
          layout.gather(kn.value, tile, h, km);
          tmp.noalias() = ds * km;
          layout.scatter_add(tmp, tile, h, qn.grad_buffer());
        }
        if (kn.requires_grad) {
          layout.gather(qn.value, tile, h, qm);
          tmp.noalias() = ds.transpose() * qm;
          layout.scatter_add(tmp, tile, h, kn.grad_buffer());
        }
      }
    }
  });
}

std::vector<double> window_attention_weights(const Tensor& q, const Tensor& k, int heads, int window,
                                             int tile, int head) {
  const WindowLayout layout = make_layout(q, heads, window);
  if (tile < 0 || tile >= layout.tiles() || head < 0 || head >= heads) {
    throw std::out_of_range("window_attention_weights: tile or head out of range");
  }
  RowMatrix qm, km;
  layout.gather(q, tile, head, qm);
  layout.gather(k, tile, head, km);
  RowMatrix s = (qm * km.transpose()) / std::sqrt(static_cast<double>(layout.head_dim()));
  softmax_rows(s);
  return {s.data(), s.data() + s.size()};
}

}  // namespace unfmri
