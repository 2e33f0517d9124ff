#include <Eigen/Dense>

#include <algorithm>
#include <stdexcept>

#include "unfmri/autograd.hpp"

namespace unfmri {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatrix = Eigen::Map<RowMatrix>;
using ConstMapMatrix = Eigen::Map<const RowMatrix>;

// Fixed-lane reductions. Eigen's vectorized dot/sum peel according to the runtime pointer
// alignment, which makes the rounding (and so training) depend on heap layout.
double lane_dot(const double* a, const double* b, int n) {
  double acc[8] = {};
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    for (int j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
  }
  double s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

double lane_sum(const double* a, std::size_t n) {
  double acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (int j = 0; j < 8; ++j) acc[j] += a[i + j];
  }
  double s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
  for (; i < n; ++i) s += a[i];
  return s;
}

struct ConvGeometry {
  int cin = 0, cout = 0, h = 0, w = 0, k = 0, ho = 0, wo = 0;
  int stride = 1, pad = 0, groups = 1;
  int cin_g() const { return cin / groups; }
  int cout_g() const { return cout / groups; }
  std::size_t in_plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t out_plane() const { return static_cast<std::size_t>(ho) * wo; }
};

// Zero-padded copy of every input channel so stride-1 taps need no bounds checks.
std::vector<double> pad_input(const ConvGeometry& g, const double* in) {
  const int ph = g.h + 2 * g.pad;
  const int pw = g.w + 2 * g.pad;
  std::vector<double> buf(static_cast<std::size_t>(g.cin) * ph * pw, 0.0);
  for (int c = 0; c < g.cin; ++c) {
    for (int y = 0; y < g.h; ++y) {
      std::copy_n(in + c * g.in_plane() + static_cast<std::size_t>(y) * g.w, g.w,
                  buf.data() + (static_cast<std::size_t>(c) * ph + y + g.pad) * pw + g.pad);
    }
  }
  return buf;
}

constexpr int kBlock = 4;

// Stride-1 convolution over the padded input; each loaded input row feeds up to
// kBlock output channels of the same group.
void direct_forward(const ConvGeometry& g, const double* in, const double* wt, double* out) {
  const std::vector<double> padded = pad_input(g, in);
  const int ph = g.h + 2 * g.pad;
  const int pw = g.w + 2 * g.pad;
  const int kk = g.k * g.k;
  const int wo = g.wo;
  std::vector<double> acc(static_cast<std::size_t>(kBlock) * wo);
  for (int grp = 0; grp < g.groups; ++grp) {
    for (int cb = 0; cb < g.cout_g(); cb += kBlock) {
      const int nb = std::min(kBlock, g.cout_g() - cb);
      const int co0 = grp * g.cout_g() + cb;
      for (int y = 0; y < g.ho; ++y) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (int cil = 0; cil < g.cin_g(); ++cil) {
          const double* src = padded.data() + static_cast<std::size_t>(grp * g.cin_g() + cil) * ph * pw;
          for (int ky = 0; ky < g.k; ++ky) {
            const double* row = src + static_cast<std::size_t>(y + ky) * pw;
            for (int kx = 0; kx < g.k; ++kx) {
              const double* s = row + kx;
              double wv[kBlock] = {0.0, 0.0, 0.0, 0.0};
              for (int b = 0; b < nb; ++b) {
                wv[b] = wt[(static_cast<std::size_t>(co0 + b) * g.cin_g() + cil) * kk + ky * g.k + kx];
              }
              double* a0 = acc.data();
              double* a1 = a0 + wo;
              double* a2 = a1 + wo;
              double* a3 = a2 + wo;
              for (int x = 0; x < wo; ++x) {
                const double v = s[x];
                a0[x] += wv[0] * v;
                a1[x] += wv[1] * v;
                a2[x] += wv[2] * v;
                a3[x] += wv[3] * v;
              }
            }
          }
        }
        for (int b = 0; b < nb; ++b) {
          double* o = out + (co0 + b) * g.out_plane() + static_cast<std::size_t>(y) * wo;
          const double* a = acc.data() + static_cast<std::size_t>(b) * wo;
          for (int x = 0; x < wo; ++x) o[x] += a[x];
        }
      }
    }
  }
}

void direct_backward(const ConvGeometry& g, const double* in, const double* wt, const double* gout,
                     double* gin, double* gw) {
  const int ph = g.h + 2 * g.pad;
  const int pw = g.w + 2 * g.pad;
  const int kk = g.k * g.k;
  const int wo = g.wo;
  if (gw) {
    const std::vector<double> padded = pad_input(g, in);
    for (int co = 0; co < g.cout; ++co) {
      const int grp = co / g.cout_g();
      const double* go = gout + co * g.out_plane();
      for (int cil = 0; cil < g.cin_g(); ++cil) {
        const double* src = padded.data() + static_cast<std::size_t>(grp * g.cin_g() + cil) * ph * pw;
        double* dw = gw + (static_cast<std::size_t>(co) * g.cin_g() + cil) * kk;
        for (int ky = 0; ky < g.k; ++ky) {
          for (int kx = 0; kx < g.k; ++kx) {
            double acc = 0.0;
            for (int y = 0; y < g.ho; ++y) {
              acc += lane_dot(go + static_cast<std::size_t>(y) * wo, src + static_cast<std::size_t>(y + ky) * pw + kx, wo);
            }
            dw[ky * g.k + kx] += acc;
          }
        }
      }
    }
  }
  if (gin) {
    // Scatter into a padded gradient buffer, blocking input channels per output-gradient row.
    std::vector<double> gpad(static_cast<std::size_t>(g.cin) * ph * pw, 0.0);
    for (int grp = 0; grp < g.groups; ++grp) {
      for (int cb = 0; cb < g.cin_g(); cb += kBlock) {
        const int nb = std::min(kBlock, g.cin_g() - cb);
        const int ci0 = grp * g.cin_g() + cb;
        double* rows[kBlock];
        for (int col = 0; col < g.cout_g(); ++col) {
          const int co = grp * g.cout_g() + col;
          const double* go = gout + co * g.out_plane();
          for (int ky = 0; ky < g.k; ++ky) {
            for (int kx = 0; kx < g.k; ++kx) {
              double wv[kBlock] = {0.0, 0.0, 0.0, 0.0};
              for (int b = 0; b < nb; ++b) {
                wv[b] = wt[(static_cast<std::size_t>(co) * g.cin_g() + cb + b) * kk + ky * g.k + kx];
              }
              for (int y = 0; y < g.ho; ++y) {
                for (int b = 0; b < kBlock; ++b) {
                  const int c = ci0 + std::min(b, nb - 1);
                  rows[b] = gpad.data() + (static_cast<std::size_t>(c) * ph + y + ky) * pw + kx;
                }
                const double* s = go + static_cast<std::size_t>(y) * wo;
                if (nb == kBlock) {
                  for (int x = 0; x < wo; ++x) {
                    const double v = s[x];
                    rows[0][x] += wv[0] * v;
                    rows[1][x] += wv[1] * v;
                    rows[2][x] += wv[2] * v;
                    rows[3][x] += wv[3] * v;
                  }
                } else {
                  for (int b = 0; b < nb; ++b) {
                    for (int x = 0; x < wo; ++x) rows[b][x] += wv[b] * s[x];
                  }
                }
              }
            }
          }
        }
      }
    }
    for (int c = 0; c < g.cin; ++c) {
      for (int y = 0; y < g.h; ++y) {
        const double* s = gpad.data() + (static_cast<std::size_t>(c) * ph + y + g.pad) * pw + g.pad;
        double* d = gin + c * g.in_plane() + static_cast<std::size_t>(y) * g.w;
        for (int x = 0; x < g.w; ++x) d[x] += s[x];
      }
    }
  }
}

// Column buffer (Cin_g*K*K, Ho*Wo) for one group.
void im2col(const ConvGeometry& g, const double* in, int grp, RowMatrix& col) {
  col.setZero(static_cast<Eigen::Index>(g.cin_g()) * g.k * g.k,
              static_cast<Eigen::Index>(g.out_plane()));
  for (int cil = 0; cil < g.cin_g(); ++cil) {
    const double* src = in + (grp * g.cin_g() + cil) * g.in_plane();
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        double* row = col.data() + ((static_cast<std::size_t>(cil) * g.k + ky) * g.k + kx) * g.out_plane();
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix < 0 || ix >= g.w) continue;
            row[static_cast<std::size_t>(oy) * g.wo + ox] = src[static_cast<std::size_t>(iy) * g.w + ix];
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, const RowMatrix& col, int grp, double* gin) {
  for (int cil = 0; cil < g.cin_g(); ++cil) {
    double* dst = gin + (grp * g.cin_g() + cil) * g.in_plane();
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const double* row =
            col.data() + ((static_cast<std::size_t>(cil) * g.k + ky) * g.k + kx) * g.out_plane();
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix < 0 || ix >= g.w) continue;
            dst[static_cast<std::size_t>(iy) * g.w + ix] += row[static_cast<std::size_t>(oy) * g.wo + ox];
          }
        }
      }
    }
  }
}

bool is_pointwise(const ConvGeometry& g) { return g.k == 1 && g.stride == 1 && g.pad == 0; }

bool use_direct(const ConvGeometry& g) { return g.stride == 1; }

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dSpec spec) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  if (xv.rank() != 3 || wv.rank() != 4) throw std::invalid_argument("conv2d: expected rank-3 input, rank-4 weight");
  ConvGeometry g;
  g.cin = xv.channels();
  g.h = xv.height();
  g.w = xv.width();
  g.cout = wv.dim(0);
  g.k = wv.dim(2);
  g.stride = spec.stride;
  g.pad = spec.padding;
  g.groups = spec.groups;
  if (g.groups <= 0 || g.cin % g.groups != 0 || g.cout % g.groups != 0) {
    throw std::invalid_argument("conv2d: channel counts not divisible by groups");
  }
  if (wv.dim(1) != g.cin_g() || wv.dim(3) != g.k) {
    throw std::invalid_argument("conv2d: weight shape " + shape_string(wv.shape()) +
                                " incompatible with input " + shape_string(xv.shape()));
  }
  g.ho = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.k) / g.stride + 1;
  if (g.ho <= 0 || g.wo <= 0) throw std::invalid_argument("conv2d: empty output");
  const bool has_bias = bias.defined();
  if (has_bias && bias.value().size() != static_cast<std::size_t>(g.cout)) {
    throw std::invalid_argument("conv2d: bias length mismatch");
  }

  Tensor out({g.cout, g.ho, g.wo});
  if (has_bias) {
    for (int co = 0; co < g.cout; ++co) std::fill_n(out.channel(co), g.out_plane(), bias.value()[co]);
  }
  const std::size_t wg = static_cast<std::size_t>(g.cout_g()) * g.cin_g() * g.k * g.k;
  if (is_pointwise(g)) {
    for (int grp = 0; grp < g.groups; ++grp) {
      ConstMapMatrix w(wv.data() + grp * wg, g.cout_g(), g.cin_g());
      ConstMapMatrix in(xv.data() + grp * g.cin_g() * g.in_plane(), g.cin_g(), g.in_plane());
      MapMatrix o(out.data() + grp * g.cout_g() * g.out_plane(), g.cout_g(), g.out_plane());
      o.noalias() += w * in;
    }
  } else if (use_direct(g)) {
    direct_forward(g, xv.data(), wv.data(), out.data());
  } else {
    RowMatrix col;
    for (int grp = 0; grp < g.groups; ++grp) {
      im2col(g, xv.data(), grp, col);
      ConstMapMatrix w(wv.data() + grp * wg, g.cout_g(), col.rows());
      MapMatrix o(out.data() + grp * g.cout_g() * g.out_plane(), g.cout_g(), g.out_plane());
      o.noalias() += w * col;
    }
  }

  std::vector<Var> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return Var::make(std::move(out), std::move(inputs), [g, wg](Node& self) {
    Node& xn = *self.inputs[0];
    Node& wn = *self.inputs[1];
    double* gin = xn.requires_grad ? xn.grad_buffer().data() : nullptr;
    double* gw = wn.requires_grad ? wn.grad_buffer().data() : nullptr;
    if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
      Tensor& gb = self.inputs[2]->grad_buffer();
      for (int co = 0; co < g.cout; ++co) {
        gb[co] += lane_sum(self.grad.channel(co), g.out_plane());
      }
    }
    if (!gin && !gw) return;
    const double* xin = xn.value.data();
    const double* wt = wn.value.data();
    if (is_pointwise(g)) {
      for (int grp = 0; grp < g.groups; ++grp) {
        ConstMapMatrix go(self.grad.data() + grp * g.cout_g() * g.out_plane(), g.cout_g(), g.out_plane());
        if (gw) {
          ConstMapMatrix in(xin + grp * g.cin_g() * g.in_plane(), g.cin_g(), g.in_plane());
          MapMatrix dw(gw + grp * wg, g.cout_g(), g.cin_g());
          dw.noalias() += go * in.transpose();
        }
        if (gin) {
          ConstMapMatrix w(wt + grp * wg, g.cout_g(), g.cin_g());
          MapMatrix di(gin + grp * g.cin_g() * g.in_plane(), g.cin_g(), g.in_plane());
          di.noalias() += w.transpose() * go;
        }
      }
    } else if (use_direct(g)) {
      direct_backward(g, xin, wt, self.grad.data(), gin, gw);
    } else {
      RowMatrix col;
      for (int grp = 0; grp < g.groups; ++grp) {
        ConstMapMatrix go(self.grad.data() + grp * g.cout_g() * g.out_plane(), g.cout_g(), g.out_plane());
        const Eigen::Index rows = static_cast<Eigen::Index>(g.cin_g()) * g.k * g.k;
        if (gw) {
          im2col(g, xin, grp, col);
          MapMatrix dw(gw + grp * wg, g.cout_g(), rows);
          dw.noalias() += go * col.transpose();
        }
        if (gin) {
          ConstMapMatrix w(wt + grp * wg, g.cout_g(), rows);
          RowMatrix dcol = w.transpose() * go;
          col2im(g, dcol, grp, gin);
        }
      }
    }
  });
}

Var conv_transpose2x2(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  if (xv.rank() != 3 || wv.rank() != 4 || wv.dim(0) != xv.channels() || wv.dim(2) != 2 ||
      wv.dim(3) != 2) {
    throw std::invalid_argument("conv_transpose2x2: weight must be (Cin, Cout, 2, 2)");
  }
  const int cin = xv.channels();
  const int cout = wv.dim(1);
  const int h = xv.height();
  const int w = xv.width();
  const std::size_t plane = xv.plane();
  // cols(Cout*4, H*W) = W^T (Cout*4, Cin) * X (Cin, H*W)
  ConstMapMatrix wm(wv.data(), cin, cout * 4);
  ConstMapMatrix xm(xv.data(), cin, plane);
  RowMatrix cols = wm.transpose() * xm;
  Tensor out({cout, 2 * h, 2 * w});
  for (int co = 0; co < cout; ++co) {
    const double b = bias.defined() ? bias.value()[co] : 0.0;
    for (int t = 0; t < 4; ++t) {
      const int dy = t / 2;
      const int dx = t % 2;
      const double* src = cols.data() + static_cast<std::size_t>(co * 4 + t) * plane;
      for (int y = 0; y < h; ++y) {
        double* d = out.channel(co) + static_cast<std::size_t>(2 * y + dy) * (2 * w) + dx;
        for (int xx = 0; xx < w; ++xx) d[2 * xx] = src[static_cast<std::size_t>(y) * w + xx] + b;
      }
    }
  }
  std::vector<Var> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Var::make(std::move(out), std::move(inputs), [cin, cout, h, w](Node& self) {
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    RowMatrix gcols(cout * 4, static_cast<Eigen::Index>(plane));
    for (int co = 0; co < cout; ++co) {
      for (int t = 0; t < 4; ++t) {
        const int dy = t / 2;
        const int dx = t % 2;
        double* dst = gcols.data() + static_cast<std::size_t>(co * 4 + t) * plane;
        for (int y = 0; y < h; ++y) {
          const double* s = self.grad.channel(co) + static_cast<std::size_t>(2 * y + dy) * (2 * w) + dx;
          for (int xx = 0; xx < w; ++xx) dst[static_cast<std::size_t>(y) * w + xx] = s[2 * xx];
        }
      }
    }
    Node& xn = *self.inputs[0];
    Node& wn = *self.inputs[1];
    if (xn.requires_grad) {
      ConstMapMatrix wm(wn.value.data(), cin, cout * 4);
      MapMatrix dx(xn.grad_buffer().data(), cin, plane);
      dx.noalias() += wm * gcols;
    }
    if (wn.requires_grad) {
      ConstMapMatrix xm(xn.value.data(), cin, plane);
      MapMatrix dw(wn.grad_buffer().data(), cin, cout * 4);
      dw.noalias() += xm * gcols.transpose();
    }
    if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
      Tensor& gb = self.inputs[2]->grad_buffer();
      for (int co = 0; co < cout; ++co) gb[co] += gcols.middleRows(co * 4, 4).sum();
    }
  });
}

}  // namespace unfmri
