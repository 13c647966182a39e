#include "dudo/tensor/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "dudo/tensor/tape.hpp"

namespace dudo::ops {

namespace {

constexpr const char* kAxisNames[5] = {"batch", "channel", "depth", "height", "width"};

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank())
    throw DimensionError(op, "rank", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  for (std::size_t i = 0; i < a.rank(); ++i)
    if (a.dim(i) != b.dim(i))
      throw DimensionError(op, "axis " + std::to_string(i),
                           shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void require_rank(const char* op, const Tensor& x, std::size_t rank) {
  if (x.rank() != rank)
    throw DimensionError(op, "rank",
                         "expected rank " + std::to_string(rank) + ", got " + shape_str(x.shape()));
}

// Elementwise unary op with derivative expressed through input and output.
template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  const bool track = should_record({&x});
  Tensor out = make_result(x.shape(), track);
  auto xs = x.data();
  auto os = out.data();
  for (std::size_t i = 0; i < xs.size(); ++i) os[i] = fwd(xs[i]);
  if (track) {
    auto xn = x.node();
    auto on = out.node();
    Tape::active()->record([xn, on, deriv] {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < xn->data.size(); ++i)
        xn->grad[i] += on->grad[i] * deriv(xn->data[i], on->data[i]);
    });
  }
  return out;
}

double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

struct ConvGeom {
  std::size_t batch, c_in, c_out;
  std::array<std::size_t, 3> in, out;
  std::size_t k, stride, pad;
};

// Range of output indices o with 0 <= o*stride - pad + kk < n.
inline std::pair<long, long> valid_range(std::size_t n_in, std::size_t n_out, std::size_t kk,
                                         std::size_t stride, std::size_t pad) {
  const long s = static_cast<long>(stride);
  const long off = static_cast<long>(pad) - static_cast<long>(kk);
  long lo = off > 0 ? (off + s - 1) / s : 0;
  const long top = static_cast<long>(n_in) - 1 + off;
  long hi = top < 0 ? -1 : top / s;
  hi = std::min(hi, static_cast<long>(n_out) - 1);
  return {lo, hi};
}

// Visits every (input voxel, output voxel) pair coupled by one kernel tap.
// The innermost callback receives contiguous width rows.
template <typename RowFn>
void for_each_tap(const ConvGeom& g, RowFn&& row_fn) {
  const auto [D, H, W] = g.in;
  const auto [Do, Ho, Wo] = g.out;
  const std::size_t k = g.k;
  for (std::size_t kd = 0; kd < k; ++kd) {
    const auto [d_lo, d_hi] = valid_range(D, Do, kd, g.stride, g.pad);
    for (std::size_t kh = 0; kh < k; ++kh) {
      const auto [h_lo, h_hi] = valid_range(H, Ho, kh, g.stride, g.pad);
      for (std::size_t kw = 0; kw < k; ++kw) {
        const auto [w_lo, w_hi] = valid_range(W, Wo, kw, g.stride, g.pad);
        if (w_lo > w_hi) continue;
        const std::size_t tap = (kd * k + kh) * k + kw;
        for (long od = d_lo; od <= d_hi; ++od) {
          const std::size_t id = od * g.stride - g.pad + kd;
          for (long oh = h_lo; oh <= h_hi; ++oh) {
            const std::size_t ih = oh * g.stride - g.pad + kh;
            const std::size_t in_row = (id * H + ih) * W;
            const std::size_t out_row = (od * Ho + oh) * Wo;
            row_fn(tap, in_row, out_row, static_cast<std::size_t>(w_lo),
                   static_cast<std::size_t>(w_hi), kw);
          }
        }
      }
    }
  }
}

// out += conv(x, w)
void conv_forward_acc(const ConvGeom& g, const double* x, const double* w, double* out) {
  const std::size_t in_vol = g.in[0] * g.in[1] * g.in[2];
  const std::size_t out_vol = g.out[0] * g.out[1] * g.out[2];
  const std::size_t k3 = g.k * g.k * g.k;
  const std::size_t s = g.stride;
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t co = 0; co < g.c_out; ++co) {
      double* o = out + (b * g.c_out + co) * out_vol;
      for (std::size_t ci = 0; ci < g.c_in; ++ci) {
        const double* xi = x + (b * g.c_in + ci) * in_vol;
        const double* wk = w + (co * g.c_in + ci) * k3;
        for_each_tap(g, [&](std::size_t tap, std::size_t in_row, std::size_t out_row,
                            std::size_t lo, std::size_t hi, std::size_t kw) {
          const double wv = wk[tap];
          if (wv == 0.0) return;
          const double* xr = xi + in_row + lo * s + kw - g.pad;
          double* orow = o + out_row + lo;
          const std::size_t n = hi - lo + 1;
          if (s == 1) {
            for (std::size_t j = 0; j < n; ++j) orow[j] += wv * xr[j];
          } else {
            for (std::size_t j = 0; j < n; ++j) orow[j] += wv * xr[j * s];
          }
        });
      }
    }
}

// gx += conv^T(gout, w)
void conv_backward_input_acc(const ConvGeom& g, const double* gout, const double* w, double* gx) {
  const std::size_t in_vol = g.in[0] * g.in[1] * g.in[2];
  const std::size_t out_vol = g.out[0] * g.out[1] * g.out[2];
  const std::size_t k3 = g.k * g.k * g.k;
  const std::size_t s = g.stride;
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t ci = 0; ci < g.c_in; ++ci) {
      double* gxi = gx + (b * g.c_in + ci) * in_vol;
      for (std::size_t co = 0; co < g.c_out; ++co) {
        const double* go = gout + (b * g.c_out + co) * out_vol;
        const double* wk = w + (co * g.c_in + ci) * k3;
        for_each_tap(g, [&](std::size_t tap, std::size_t in_row, std::size_t out_row,
                            std::size_t lo, std::size_t hi, std::size_t kw) {
          const double wv = wk[tap];
          if (wv == 0.0) return;
          double* xr = gxi + in_row + lo * s + kw - g.pad;
          const double* orow = go + out_row + lo;
          const std::size_t n = hi - lo + 1;
          if (s == 1) {
            for (std::size_t j = 0; j < n; ++j) xr[j] += wv * orow[j];
          } else {
            for (std::size_t j = 0; j < n; ++j) xr[j * s] += wv * orow[j];
          }
        });
      }
    }
}

// gw += sum over positions of gout * x
void conv_backward_weight_acc(const ConvGeom& g, const double* x, const double* gout, double* gw) {
  const std::size_t in_vol = g.in[0] * g.in[1] * g.in[2];
  const std::size_t out_vol = g.out[0] * g.out[1] * g.out[2];
  const std::size_t k3 = g.k * g.k * g.k;
  const std::size_t s = g.stride;
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t co = 0; co < g.c_out; ++co) {
      const double* go = gout + (b * g.c_out + co) * out_vol;
      for (std::size_t ci = 0; ci < g.c_in; ++ci) {
        const double* xi = x + (b * g.c_in + ci) * in_vol;
        double* gk = gw + (co * g.c_in + ci) * k3;
        for_each_tap(g, [&](std::size_t tap, std::size_t in_row, std::size_t out_row,
                            std::size_t lo, std::size_t hi, std::size_t kw) {
          const double* xr = xi + in_row + lo * s + kw - g.pad;
          const double* orow = go + out_row + lo;
          const std::size_t n = hi - lo + 1;
          double acc = 0.0;
          if (s == 1) {
            for (std::size_t j = 0; j < n; ++j) acc += orow[j] * xr[j];
          } else {
            for (std::size_t j = 0; j < n; ++j) acc += orow[j] * xr[j * s];
          }
          gk[tap] += acc;
        });
      }
    }
}

// Stride-1 "same" convolutions run each tap as one long loop over the
// flattened zero-padded volume. Positions in the halo collect garbage that is
// never read back; gradients enter the padded layout with a zero halo.
struct PaddedGrid {
  std::size_t p, D, H, W, Hp, Wp, vol, first, count;

  PaddedGrid(const std::array<std::size_t, 3>& in, std::size_t pad)
      : p(pad), D(in[0]), H(in[1]), W(in[2]), Hp(in[1] + 2 * pad), Wp(in[2] + 2 * pad) {
    vol = (D + 2 * p) * Hp * Wp;
    first = (p * Hp + p) * Wp + p;
    count = ((D - 1 + p) * Hp + (H - 1 + p)) * Wp + (W - 1 + p) + 1 - first;
  }
  long offset(std::size_t kd, std::size_t kh, std::size_t kw) const {
    const long pl = static_cast<long>(p);
    return ((static_cast<long>(kd) - pl) * static_cast<long>(Hp) + static_cast<long>(kh) - pl) *
               static_cast<long>(Wp) +
           static_cast<long>(kw) - pl;
  }
  void scatter(const double* src, double* dst) const {
    std::fill_n(dst, vol, 0.0);
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t h = 0; h < H; ++h)
        std::copy_n(src + (d * H + h) * W, W, dst + ((d + p) * Hp + h + p) * Wp + p);
  }
  void gather_add(const double* src, double* dst) const {
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t h = 0; h < H; ++h) {
        const double* s = src + ((d + p) * Hp + h + p) * Wp + p;
        double* o = dst + (d * H + h) * W;
        for (std::size_t w = 0; w < W; ++w) o[w] += s[w];
      }
  }
};

bool is_same_conv(const ConvGeom& g) { return g.stride == 1 && g.pad == g.k / 2; }

// out[i] += sum over kw of w[kw] * x[i + kw] for one (kd, kh) kernel row.
inline void row_taps(double* out, const double* x, const double* w, std::size_t k,
                     std::size_t n) {
  if (k == 3) {
    const double w0 = w[0], w1 = w[1], w2 = w[2];
    for (std::size_t i = 0; i < n; ++i) out[i] += w0 * x[i] + w1 * x[i + 1] + w2 * x[i + 2];
  } else {
    for (std::size_t kw = 0; kw < k; ++kw) {
      const double wv = w[kw];
      for (std::size_t i = 0; i < n; ++i) out[i] += wv * x[i + kw];
    }
  }
}

void same_conv_forward_acc(const ConvGeom& g, const double* x, const double* w, double* out) {
  const PaddedGrid pg(g.in, g.pad);
  const std::size_t in_vol = g.in[0] * g.in[1] * g.in[2];
  const std::size_t k = g.k, k3 = k * k * k;
  std::vector<double> xp(g.c_in * pg.vol), op(pg.vol);
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t ci = 0; ci < g.c_in; ++ci)
      pg.scatter(x + (b * g.c_in + ci) * in_vol, xp.data() + ci * pg.vol);
    for (std::size_t co = 0; co < g.c_out; ++co) {
      std::fill(op.begin(), op.end(), 0.0);
      double* o = op.data() + pg.first;
      for (std::size_t ci = 0; ci < g.c_in; ++ci) {
        const double* xc = xp.data() + ci * pg.vol + pg.first;
        const double* wk = w + (co * g.c_in + ci) * k3;
        for (std::size_t kd = 0; kd < k; ++kd)
          for (std::size_t kh = 0; kh < k; ++kh)
            row_taps(o, xc + pg.offset(kd, kh, 0), wk + (kd * k + kh) * k, k, pg.count);
      }
      pg.gather_add(op.data(), out + (b * g.c_out + co) * in_vol);
    }
  }
}

void same_conv_backward_input_acc(const ConvGeom& g, const double* gout, const double* w,
                                  double* gx) {
  const PaddedGrid pg(g.in, g.pad);
  const std::size_t vol = g.in[0] * g.in[1] * g.in[2];
  const std::size_t k = g.k, k3 = k * k * k;
  std::vector<double> gp(g.c_out * pg.vol), acc(pg.vol), wf(k);
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t co = 0; co < g.c_out; ++co)
      pg.scatter(gout + (b * g.c_out + co) * vol, gp.data() + co * pg.vol);
    for (std::size_t ci = 0; ci < g.c_in; ++ci) {
      std::fill(acc.begin(), acc.end(), 0.0);
      double* a = acc.data() + pg.first;
      for (std::size_t co = 0; co < g.c_out; ++co) {
        const double* gc = gp.data() + co * pg.vol + pg.first;
        const double* wk = w + (co * g.c_in + ci) * k3;
        // The adjoint reads the gradient at the mirrored tap.
        for (std::size_t kd = 0; kd < k; ++kd)
          for (std::size_t kh = 0; kh < k; ++kh) {
            for (std::size_t kw = 0; kw < k; ++kw) wf[kw] = wk[(kd * k + kh) * k + (k - 1 - kw)];
            row_taps(a, gc + pg.offset(k - 1 - kd, k - 1 - kh, 0), wf.data(), k, pg.count);
          }
      }
      pg.gather_add(acc.data(), gx + (b * g.c_in + ci) * vol);
    }
  }
}

// out[kw] += sum_i g[i] * x[i + kw]. Four-wide vector partial sums let the
// loop vectorize while the summation order stays fixed.
using Lanes4 = double __attribute__((vector_size(32)));

inline Lanes4 load4(const double* p) {
  Lanes4 v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

inline double hsum(Lanes4 v) { return (v[0] + v[1]) + (v[2] + v[3]); }

inline void row_dots(const double* g, const double* x, std::size_t k, std::size_t n,
                     double* out) {
  const std::size_t n4 = n / 4 * 4;
  std::size_t kw = 0;
  for (; kw + 3 <= k; kw += 3) {
    Lanes4 s0 = {}, s1 = {}, s2 = {};
    const double* xs = x + kw;
    for (std::size_t i = 0; i < n4; i += 4) {
      const Lanes4 gv = load4(g + i);
      s0 += gv * load4(xs + i);
      s1 += gv * load4(xs + i + 1);
      s2 += gv * load4(xs + i + 2);
    }
    double a0 = hsum(s0), a1 = hsum(s1), a2 = hsum(s2);
    for (std::size_t i = n4; i < n; ++i) {
      a0 += g[i] * xs[i];
      a1 += g[i] * xs[i + 1];
      a2 += g[i] * xs[i + 2];
    }
    out[kw] += a0;
    out[kw + 1] += a1;
    out[kw + 2] += a2;
  }
  for (; kw < k; ++kw) {
    Lanes4 s0 = {};
    const double* xs = x + kw;
    for (std::size_t i = 0; i < n4; i += 4) s0 += load4(g + i) * load4(xs + i);
    double a0 = hsum(s0);
    for (std::size_t i = n4; i < n; ++i) a0 += g[i] * xs[i];
    out[kw] += a0;
  }
}

void same_conv_backward_weight_acc(const ConvGeom& g, const double* x, const double* gout,
                                   double* gw) {
  const PaddedGrid pg(g.in, g.pad);
  const std::size_t vol = g.in[0] * g.in[1] * g.in[2];
  const std::size_t k = g.k, k3 = k * k * k;
  std::vector<double> xp(g.c_in * pg.vol), gp(pg.vol);
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t ci = 0; ci < g.c_in; ++ci)
      pg.scatter(x + (b * g.c_in + ci) * vol, xp.data() + ci * pg.vol);
    for (std::size_t co = 0; co < g.c_out; ++co) {
      pg.scatter(gout + (b * g.c_out + co) * vol, gp.data());
      const double* gc = gp.data() + pg.first;
      for (std::size_t ci = 0; ci < g.c_in; ++ci) {
        const double* xc = xp.data() + ci * pg.vol + pg.first;
        double* gk = gw + (co * g.c_in + ci) * k3;
        for (std::size_t kd = 0; kd < k; ++kd)
          for (std::size_t kh = 0; kh < k; ++kh)
            row_dots(gc, xc + pg.offset(kd, kh, 0), k, pg.count, gk + (kd * k + kh) * k);
      }
    }
  }
}

void check_kernel(const char* op, const Tensor& kernel, const Tensor& bias,
                  std::size_t bias_channels) {
  require_rank(op, kernel, 5);
  const std::size_t k = kernel.dim(2);
  if (kernel.dim(3) != k || kernel.dim(4) != k)
    throw DimensionError(op, "kernel", "kernel must be cubic, got " + shape_str(kernel.shape()));
  if (k % 2 == 0) throw ContractError(std::string(op) + ": kernel size must be odd");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != bias_channels))
    throw DimensionError(op, "channel",
                         "bias " + shape_str(bias.shape()) + " does not match " +
                             std::to_string(bias_channels) + " channels");
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  const bool track = should_record({&a, &b});
  Tensor out = make_result(a.shape(), track);
  auto o = out.data();
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] + bv[i];
  if (track) {
    auto an = a.node(), bn = b.node(), on = out.node();
    Tape::active()->record([an, bn, on] {
      for (auto* n : {an.get(), bn.get()}) {
        if (!n->requires_grad) continue;
        n->ensure_grad();
        for (std::size_t i = 0; i < n->grad.size(); ++i) n->grad[i] += on->grad[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  const bool track = should_record({&a, &b});
  Tensor out = make_result(a.shape(), track);
  auto o = out.data();
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] - bv[i];
  if (track) {
    auto an = a.node(), bn = b.node(), on = out.node();
    Tape::active()->record([an, bn, on] {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < bn->grad.size(); ++i) bn->grad[i] -= on->grad[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  const bool track = should_record({&a, &b});
  Tensor out = make_result(a.shape(), track);
  auto o = out.data();
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * bv[i];
  if (track) {
    auto an = a.node(), bn = b.node(), on = out.node();
    Tape::active()->record([an, bn, on] {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[i] * bn->data[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < bn->grad.size(); ++i) bn->grad[i] += on->grad[i] * an->data[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double s) {
  return unary(a, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0 ? v : 0.0; },
      [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& x) {
  return unary(
      x, [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
      [](double v, double) { return stable_sigmoid(v); });
}

Tensor sum(const Tensor& x) {
  const bool track = should_record({&x});
  Tensor out = make_result(Shape{1}, track);
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  out[0] = acc;
  if (track) {
    auto xn = x.node(), on = out.node();
    Tape::active()->record([xn, on] {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      for (auto& g : xn->grad) g += on->grad[0];
    });
  }
  return out;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape", "numel",
                         shape_str(x.shape()) + " cannot be viewed as " + shape_str(shape));
  const bool track = should_record({&x});
  Tensor out = make_result(std::move(shape), track);
  std::copy(x.data().begin(), x.data().end(), out.data().begin());
  if (track) {
    auto xn = x.node(), on = out.node();
    Tape::active()->record([xn, on] {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += on->grad[i];
    });
  }
  return out;
}

Tensor channel_scale(const Tensor& x, const Tensor& w) {
  if (x.rank() < 2) throw DimensionError("channel_scale", "rank", shape_str(x.shape()));
  require_rank("channel_scale", w, 2);
  if (w.dim(0) != x.dim(0)) throw DimensionError("channel_scale", "batch", shape_str(w.shape()));
  if (w.dim(1) != x.dim(1)) throw DimensionError("channel_scale", "channel", shape_str(w.shape()));
  const std::size_t bc = x.dim(0) * x.dim(1);
  const std::size_t spatial = x.numel() / bc;
  const bool track = should_record({&x, &w});
  Tensor out = make_result(x.shape(), track);
  for (std::size_t i = 0; i < bc; ++i)
    for (std::size_t s = 0; s < spatial; ++s) out[i * spatial + s] = x[i * spatial + s] * w[i];
  if (track) {
    auto xn = x.node(), wn = w.node(), on = out.node();
    Tape::active()->record([xn, wn, on, bc, spatial] {
      if (xn->requires_grad) xn->ensure_grad();
      if (wn->requires_grad) wn->ensure_grad();
      for (std::size_t i = 0; i < bc; ++i) {
        double acc = 0.0;
        for (std::size_t s = 0; s < spatial; ++s) {
          const std::size_t j = i * spatial + s;
          if (xn->requires_grad) xn->grad[j] += on->grad[j] * wn->data[i];
          acc += on->grad[j] * xn->data[j];
        }
        if (wn->requires_grad) wn->grad[i] += acc;
      }
    });
  }
  return out;
}

Tensor spatial_gate(const Tensor& x, const Tensor& g) {
  require_rank("spatial_gate", x, 5);
  require_rank("spatial_gate", g, 5);
  if (g.dim(1) != 1) throw DimensionError("spatial_gate", "channel", "gate must have one channel");
  for (std::size_t ax : {0u, 2u, 3u, 4u})
    if (g.dim(ax) != x.dim(ax))
      throw DimensionError("spatial_gate", kAxisNames[ax],
                           shape_str(x.shape()) + " vs gate " + shape_str(g.shape()));
  const std::size_t B = x.dim(0), C = x.dim(1);
  const std::size_t S = x.numel() / (B * C);
  const bool track = should_record({&x, &g});
  Tensor out = make_result(x.shape(), track);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t s = 0; s < S; ++s)
        out[(b * C + c) * S + s] = x[(b * C + c) * S + s] * g[b * S + s];
  if (track) {
    auto xn = x.node(), gn = g.node(), on = out.node();
    Tape::active()->record([xn, gn, on, B, C, S] {
      if (xn->requires_grad) xn->ensure_grad();
      if (gn->requires_grad) gn->ensure_grad();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t s = 0; s < S; ++s) {
            const std::size_t j = (b * C + c) * S + s;
            if (xn->requires_grad) xn->grad[j] += on->grad[j] * gn->data[b * S + s];
            if (gn->requires_grad) gn->grad[b * S + s] += on->grad[j] * xn->data[j];
          }
    });
  }
  return out;
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_channels: no inputs");
  const Tensor& first = parts.front();
  if (first.rank() < 2) throw DimensionError("concat_channels", "rank", shape_str(first.shape()));
  std::size_t channels = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.rank())
      throw DimensionError("concat_channels", "rank", shape_str(p.shape()));
    for (std::size_t ax = 0; ax < p.rank(); ++ax) {
      if (ax == 1) continue;
      if (p.dim(ax) != first.dim(ax))
        throw DimensionError("concat_channels", ax < 5 ? kAxisNames[ax] : "axis",
                             shape_str(first.shape()) + " vs " + shape_str(p.shape()));
    }
    channels += p.dim(1);
  }
  Shape shape = first.shape();
  shape[1] = channels;
  const std::size_t B = shape[0];
  const std::size_t S = shape_numel(shape) / (B * channels);
  bool track = false;
  if (Tape::active())
    for (const auto& p : parts) track = track || p.requires_grad();
  Tensor out = make_result(shape, track);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t c = p.dim(1);
    for (std::size_t b = 0; b < B; ++b)
      std::copy_n(p.data().begin() + b * c * S, c * S,
                  out.data().begin() + (b * channels + offset) * S);
    offset += c;
  }
  if (track) {
    std::vector<std::shared_ptr<TensorNode>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    auto on = out.node();
    Tape::active()->record([nodes, on, B, S, channels] {
      std::size_t off = 0;
      for (const auto& n : nodes) {
        const std::size_t c = n->shape[1];
        if (n->requires_grad) {
          n->ensure_grad();
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t j = 0; j < c * S; ++j)
              n->grad[b * c * S + j] += on->grad[(b * channels + off) * S + j];
        }
        off += c;
      }
    });
  }
  return out;
}

Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t count) {
  if (x.rank() < 2 || begin + count > x.dim(1) || count == 0)
    throw DimensionError("slice_channels", "channel",
                         "range [" + std::to_string(begin) + "," + std::to_string(begin + count) +
                             ") outside " + shape_str(x.shape()));
  Shape shape = x.shape();
  const std::size_t C = shape[1], B = shape[0];
  const std::size_t S = x.numel() / (B * C);
  shape[1] = count;
  const bool track = should_record({&x});
  Tensor out = make_result(shape, track);
  for (std::size_t b = 0; b < B; ++b)
    std::copy_n(x.data().begin() + (b * C + begin) * S, count * S,
                out.data().begin() + b * count * S);
  if (track) {
    auto xn = x.node(), on = out.node();
    Tape::active()->record([xn, on, B, C, S, begin, count] {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t j = 0; j < count * S; ++j)
          xn->grad[(b * C + begin) * S + j] += on->grad[b * count * S + j];
    });
  }
  return out;
}

Tensor conv3d(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  require_rank("conv3d", x, 5);
  check_kernel("conv3d", kernel, bias, kernel.dim(0));
  if (stride < 1) throw ContractError("conv3d: stride must be >= 1");
  if (kernel.dim(1) != x.dim(1))
    throw DimensionError("conv3d", "channel",
                         "input has " + std::to_string(x.dim(1)) + " channels, kernel expects " +
                             std::to_string(kernel.dim(1)));
  ConvGeom g{x.dim(0), x.dim(1), kernel.dim(0), {x.dim(2), x.dim(3), x.dim(4)}, {}, kernel.dim(2),
             stride, padding};
  for (int a = 0; a < 3; ++a) {
    const std::size_t span = g.in[a] + 2 * padding;
    if (span < g.k)
      throw DimensionError("conv3d", kAxisNames[a + 2],
                           "extent " + std::to_string(g.in[a]) + " too small for kernel");
    g.out[a] = (span - g.k) / stride + 1;
  }
  const bool track = should_record({&x, &kernel, &bias});
  Tensor out = make_result({g.batch, g.c_out, g.out[0], g.out[1], g.out[2]}, track);
  const std::size_t out_vol = g.out[0] * g.out[1] * g.out[2];
  if (bias.defined())
    for (std::size_t b = 0; b < g.batch; ++b)
      for (std::size_t co = 0; co < g.c_out; ++co)
        std::fill_n(out.data().begin() + (b * g.c_out + co) * out_vol, out_vol, bias[co]);
  const bool same = is_same_conv(g);
  (same ? same_conv_forward_acc : conv_forward_acc)(g, x.data().data(), kernel.data().data(),
                                                    out.data().data());
  if (track) {
    auto xn = x.node(), kn = kernel.node(), on = out.node();
    auto bn = bias.defined() ? bias.node() : nullptr;
    Tape::active()->record([g, same, xn, kn, bn, on, out_vol] {
      if (xn->requires_grad) {
        xn->ensure_grad();
        (same ? same_conv_backward_input_acc : conv_backward_input_acc)(
            g, on->grad.data(), kn->data.data(), xn->grad.data());
      }
      if (kn->requires_grad) {
        kn->ensure_grad();
        (same ? same_conv_backward_weight_acc : conv_backward_weight_acc)(
            g, xn->data.data(), on->grad.data(), kn->grad.data());
      }
      if (bn && bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t b = 0; b < g.batch; ++b)
          for (std::size_t co = 0; co < g.c_out; ++co) {
            double acc = 0.0;
            const double* go = on->grad.data() + (b * g.c_out + co) * out_vol;
            for (std::size_t i = 0; i < out_vol; ++i) acc += go[i];
            bn->grad[co] += acc;
          }
      }
    });
  }
  return out;
}

Tensor conv3d_transpose(const Tensor& x, const Tensor& kernel, const Tensor& bias,
                        std::size_t stride, std::size_t padding,
                        std::array<std::size_t, 3> out_extents) {
  require_rank("conv3d_transpose", x, 5);
  check_kernel("conv3d_transpose", kernel, bias, kernel.dim(1));
  if (stride < 1) throw ContractError("conv3d_transpose: stride must be >= 1");
  if (kernel.dim(0) != x.dim(1))
    throw DimensionError("conv3d_transpose", "channel",
                         "input has " + std::to_string(x.dim(1)) + " channels, kernel expects " +
                             std::to_string(kernel.dim(0)));
  // Geometry of the forward conv whose adjoint this is.
  ConvGeom g{x.dim(0), kernel.dim(1), kernel.dim(0), out_extents, {}, kernel.dim(2), stride,
             padding};
  for (int a = 0; a < 3; ++a) {
    const std::size_t span = out_extents[a] + 2 * padding;
    const std::size_t fwd = span < g.k ? 0 : (span - g.k) / stride + 1;
    if (fwd != x.dim(a + 2))
      throw DimensionError("conv3d_transpose", kAxisNames[a + 2],
                           "target extent " + std::to_string(out_extents[a]) +
                               " is incompatible with input extent " + std::to_string(x.dim(a + 2)));
    g.out[a] = x.dim(a + 2);
  }
  const bool track = should_record({&x, &kernel, &bias});
  Tensor out = make_result({g.batch, g.c_in, out_extents[0], out_extents[1], out_extents[2]}, track);
  const std::size_t vol = out_extents[0] * out_extents[1] * out_extents[2];
  if (bias.defined())
    for (std::size_t b = 0; b < g.batch; ++b)
      for (std::size_t c = 0; c < g.c_in; ++c)
        std::fill_n(out.data().begin() + (b * g.c_in + c) * vol, vol, bias[c]);
  conv_backward_input_acc(g, x.data().data(), kernel.data().data(), out.data().data());
  if (track) {
    auto xn = x.node(), kn = kernel.node(), on = out.node();
    auto bn = bias.defined() ? bias.node() : nullptr;
    Tape::active()->record([g, xn, kn, bn, on, vol] {
      if (xn->requires_grad) {
        xn->ensure_grad();
        conv_forward_acc(g, on->grad.data(), kn->data.data(), xn->grad.data());
      }
      if (kn->requires_grad) {
        kn->ensure_grad();
        conv_backward_weight_acc(g, on->grad.data(), xn->data.data(), kn->grad.data());
      }
      if (bn && bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t b = 0; b < g.batch; ++b)
          for (std::size_t c = 0; c < g.c_in; ++c) {
            double acc = 0.0;
            const double* go = on->grad.data() + (b * g.c_in + c) * vol;
            for (std::size_t i = 0; i < vol; ++i) acc += go[i];
            bn->grad[c] += acc;
          }
      }
    });
  }
  return out;
}

Tensor upconv3d(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  require_rank("upconv3d", x, 5);
  if (kernel.rank() == 5 && kernel.dim(2) != 3)
    throw ContractError("upconv3d expects a 3x3x3 kernel");
  return conv3d_transpose(x, kernel, bias, 2, 1, {2 * x.dim(2), 2 * x.dim(3), 2 * x.dim(4)});
}

Tensor avg_pool3d(const Tensor& x, std::size_t window) {
  require_rank("avg_pool3d", x, 5);
  if (window < 1) throw ContractError("avg_pool3d: window must be >= 1");
  for (std::size_t ax = 2; ax < 5; ++ax)
    if (x.dim(ax) % window != 0)
      throw DimensionError("avg_pool3d", kAxisNames[ax],
                           "extent " + std::to_string(x.dim(ax)) + " not divisible by window " +
                               std::to_string(window));
  const std::size_t BC = x.dim(0) * x.dim(1);
  const std::size_t D = x.dim(2), H = x.dim(3), W = x.dim(4);
  const std::size_t Do = D / window, Ho = H / window, Wo = W / window;
  const double inv = 1.0 / static_cast<double>(window * window * window);
  const bool track = should_record({&x});
  Tensor out = make_result({x.dim(0), x.dim(1), Do, Ho, Wo}, track);
  auto index_in = [=](std::size_t c, std::size_t d, std::size_t h, std::size_t w) {
    return ((c * D + d) * H + h) * W + w;
  };
  for (std::size_t c = 0; c < BC; ++c)
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w)
          out[((c * Do + d / window) * Ho + h / window) * Wo + w / window] +=
              x[index_in(c, d, h, w)] * inv;
  if (track) {
    auto xn = x.node(), on = out.node();
    Tape::active()->record([=] {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      for (std::size_t c = 0; c < BC; ++c)
        for (std::size_t d = 0; d < D; ++d)
          for (std::size_t h = 0; h < H; ++h)
            for (std::size_t w = 0; w < W; ++w)
              xn->grad[index_in(c, d, h, w)] +=
                  on->grad[((c * Do + d / window) * Ho + h / window) * Wo + w / window] * inv;
    });
  }
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank("global_avg_pool", x, 5);
  const std::size_t B = x.dim(0), C = x.dim(1);
  const std::size_t S = x.numel() / (B * C);
  const bool track = should_record({&x});
  Tensor out = make_result({B, C}, track);
  for (std::size_t i = 0; i < B * C; ++i) {
    double acc = 0.0;
    for (std::size_t s = 0; s < S; ++s) acc += x[i * S + s];
    out[i] = acc / static_cast<double>(S);
  }
  if (track) {
    auto xn = x.node(), on = out.node();
    Tape::active()->record([xn, on, B, C, S] {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < B * C; ++i) {
        const double g = on->grad[i] / static_cast<double>(S);
        for (std::size_t s = 0; s < S; ++s) xn->grad[i * S + s] += g;
      }
    });
  }
  return out;
}

Tensor upsample_nearest(const Tensor& x, std::size_t factor) {
  require_rank("upsample_nearest", x, 5);
  if (factor < 1) throw ContractError("upsample_nearest: factor must be >= 1");
  const std::size_t BC = x.dim(0) * x.dim(1);
  const std::size_t D = x.dim(2), H = x.dim(3), W = x.dim(4);
  const std::size_t Do = D * factor, Ho = H * factor, Wo = W * factor;
  const bool track = should_record({&x});
  Tensor out = make_result({x.dim(0), x.dim(1), Do, Ho, Wo}, track);
  auto src = [=](std::size_t c, std::size_t d, std::size_t h, std::size_t w) {
    return ((c * D + d / factor) * H + h / factor) * W + w / factor;
  };
  for (std::size_t c = 0; c < BC; ++c)
    for (std::size_t d = 0; d < Do; ++d)
      for (std::size_t h = 0; h < Ho; ++h)
        for (std::size_t w = 0; w < Wo; ++w)
          out[((c * Do + d) * Ho + h) * Wo + w] = x[src(c, d, h, w)];
  if (track) {
    auto xn = x.node(), on = out.node();
    Tape::active()->record([=] {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      for (std::size_t c = 0; c < BC; ++c)
        for (std::size_t d = 0; d < Do; ++d)
          for (std::size_t h = 0; h < Ho; ++h)
            for (std::size_t w = 0; w < Wo; ++w)
              xn->grad[src(c, d, h, w)] += on->grad[((c * Do + d) * Ho + h) * Wo + w];
    });
  }
  return out;
}

namespace {

// Copies the overlapping low corner between two grids, in either direction.
void copy_corner(const Shape& small, const Shape& large, const double* from, double* to,
                 bool small_to_large, bool accumulate) {
  const std::size_t BC = small[0] * small[1];
  const std::size_t D = small[2], H = small[3], W = small[4];
  const std::size_t LH = large[3], LW = large[4], LD = large[2];
  for (std::size_t c = 0; c < BC; ++c)
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) {
          const std::size_t si = ((c * D + d) * H + h) * W + w;
          const std::size_t li = ((c * LD + d) * LH + h) * LW + w;
          const std::size_t src = small_to_large ? si : li;
          const std::size_t dst = small_to_large ? li : si;
          if (accumulate)
            to[dst] += from[src];
          else
            to[dst] = from[src];
        }
}

}  // namespace

Tensor pad_spatial(const Tensor& x, std::array<std::size_t, 3> extents) {
  require_rank("pad_spatial", x, 5);
  for (int a = 0; a < 3; ++a)
    if (extents[a] < x.dim(a + 2))
      throw DimensionError("pad_spatial", kAxisNames[a + 2], "target smaller than input");
  Shape shape{x.dim(0), x.dim(1), extents[0], extents[1], extents[2]};
  const bool track = should_record({&x});
  Tensor out = make_result(shape, track);
  copy_corner(x.shape(), shape, x.data().data(), out.data().data(), true, false);
  if (track) {
    auto xn = x.node(), on = out.node();
    Tape::active()->record([xn, on] {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      copy_corner(xn->shape, on->shape, on->grad.data(), xn->grad.data(), false, true);
    });
  }
  return out;
}

Tensor crop_spatial(const Tensor& x, std::array<std::size_t, 3> extents) {
  require_rank("crop_spatial", x, 5);
  for (int a = 0; a < 3; ++a)
    if (extents[a] > x.dim(a + 2) || extents[a] == 0)
      throw DimensionError("crop_spatial", kAxisNames[a + 2], "target larger than input");
  Shape shape{x.dim(0), x.dim(1), extents[0], extents[1], extents[2]};
  const bool track = should_record({&x});
  Tensor out = make_result(shape, track);
  copy_corner(shape, x.shape(), x.data().data(), out.data().data(), false, false);
  if (track) {
    auto xn = x.node(), on = out.node();
    Tape::active()->record([xn, on] {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      copy_corner(on->shape, xn->shape, on->grad.data(), xn->grad.data(), true, true);
    });
  }
  return out;
}

Tensor fully_connected(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank("fully_connected", x, 2);
  require_rank("fully_connected", weight, 2);
  const std::size_t B = x.dim(0), Fin = x.dim(1), Fout = weight.dim(0);
  if (weight.dim(1) != Fin)
    throw DimensionError("fully_connected", "features",
                         "input width " + std::to_string(Fin) + " vs weight " +
                             shape_str(weight.shape()));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != Fout))
    throw DimensionError("fully_connected", "features", "bias " + shape_str(bias.shape()));
  const bool track = should_record({&x, &weight, &bias});
  Tensor out = make_result({B, Fout}, track);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < Fout; ++o) {
      double acc = bias.defined() ? bias[o] : 0.0;
      for (std::size_t i = 0; i < Fin; ++i) acc += weight[o * Fin + i] * x[b * Fin + i];
      out[b * Fout + o] = acc;
    }
  if (track) {
    auto xn = x.node(), wn = weight.node(), on = out.node();
    auto bn = bias.defined() ? bias.node() : nullptr;
    Tape::active()->record([=] {
      if (xn->requires_grad) xn->ensure_grad();
      if (wn->requires_grad) wn->ensure_grad();
      if (bn && bn->requires_grad) bn->ensure_grad();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < Fout; ++o) {
          const double g = on->grad[b * Fout + o];
          if (bn && bn->requires_grad) bn->grad[o] += g;
          for (std::size_t i = 0; i < Fin; ++i) {
            if (xn->requires_grad) xn->grad[b * Fin + i] += g * wn->data[o * Fin + i];
            if (wn->requires_grad) wn->grad[o * Fin + i] += g * xn->data[b * Fin + i];
          }
        }
    });
  }
  return out;
}

Tensor batch_norm3d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    BatchNormState& state, NormMode mode) {
  require_rank("batch_norm3d", x, 5);
  const std::size_t B = x.dim(0), C = x.dim(1);
  const std::size_t S = x.numel() / (B * C);
  if (gamma.numel() != C || beta.numel() != C)
    throw DimensionError("batch_norm3d", "channel", "affine parameters must have C entries");
  if (state.running_mean.size() != C)
    throw DimensionError("batch_norm3d", "channel", "running statistics sized for other channels");
  const bool track = should_record({&x, &gamma, &beta});
  Tensor out = make_result(x.shape(), track);
  std::vector<double> mean(C), inv_std(C);
  const double n = static_cast<double>(B * S);

  if (mode == NormMode::kEval) {
    if (!state.initialized)
      throw ContractError("batch_norm3d: eval mode requires running statistics from training");
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = state.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + state.eps);
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      double acc = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t s = 0; s < S; ++s) acc += x[(b * C + c) * S + s];
      mean[c] = acc / n;
      double var = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t s = 0; s < S; ++s) {
          const double d = x[(b * C + c) * S + s] - mean[c];
          var += d * d;
        }
      var /= n;
      inv_std[c] = 1.0 / std::sqrt(var + state.eps);
      const double unbiased = n > 1 ? var * n / (n - 1) : var;
      if (!state.initialized) {
        state.running_mean[c] = (1 - state.momentum) * 0.0 + state.momentum * mean[c];
        state.running_var[c] = (1 - state.momentum) * 1.0 + state.momentum * unbiased;
      } else {
        state.running_mean[c] = (1 - state.momentum) * state.running_mean[c] + state.momentum * mean[c];
        state.running_var[c] = (1 - state.momentum) * state.running_var[c] + state.momentum * unbiased;
      }
    }
    state.initialized = true;
  }

  std::vector<double> xhat(x.numel());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t s = 0; s < S; ++s) {
        const std::size_t j = (b * C + c) * S + s;
        xhat[j] = (x[j] - mean[c]) * inv_std[c];
        out[j] = gamma[c] * xhat[j] + beta[c];
      }

  if (track) {
    auto xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
    const bool batch_stats = mode == NormMode::kTrain;
    Tape::active()->record([=, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
      if (gn->requires_grad) gn->ensure_grad();
      if (bn->requires_grad) bn->ensure_grad();
      if (xn->requires_grad) xn->ensure_grad();
      for (std::size_t c = 0; c < C; ++c) {
        double g_sum = 0.0, gx_sum = 0.0;
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t s = 0; s < S; ++s) {
            const std::size_t j = (b * C + c) * S + s;
            g_sum += on->grad[j];
            gx_sum += on->grad[j] * xhat[j];
          }
        if (gn->requires_grad) gn->grad[c] += gx_sum;
        if (bn->requires_grad) bn->grad[c] += g_sum;
        if (!xn->requires_grad) continue;
        const double k = gn->data[c] * inv_std[c];
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t s = 0; s < S; ++s) {
            const std::size_t j = (b * C + c) * S + s;
            if (batch_stats)
              xn->grad[j] += k * (on->grad[j] - g_sum / n - xhat[j] * gx_sum / n);
            else
              xn->grad[j] += k * on->grad[j];
          }
      }
    });
  }
  return out;
}

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
  require_same_shape("l1_loss", pred, target);
  const bool track = should_record({&pred, &target});
  Tensor out = make_result(Shape{1}, track);
  const double n = static_cast<double>(pred.numel());
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) acc += std::abs(pred[i] - target[i]);
  out[0] = acc / n;
  if (track) {
    auto pn = pred.node(), tn = target.node(), on = out.node();
    Tape::active()->record([pn, tn, on, n] {
      const double g = on->grad[0] / n;
      if (pn->requires_grad) pn->ensure_grad();
      if (tn->requires_grad) tn->ensure_grad();
      for (std::size_t i = 0; i < pn->data.size(); ++i) {
        const double d = pn->data[i] - tn->data[i];
        const double sgn = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
        if (pn->requires_grad) pn->grad[i] += g * sgn;
        if (tn->requires_grad) tn->grad[i] -= g * sgn;
      }
    });
  }
  return out;
}

Tensor linear_map(const Tensor& x, const LinearFn& apply, const LinearFn& adjoint,
                  const Shape& item_shape) {
  if (x.rank() < 1) throw DimensionError("linear_map", "rank", shape_str(x.shape()));
  const std::size_t B = x.dim(0);
  const std::size_t in_item = x.numel() / B;
  const std::size_t out_item = shape_numel(item_shape);
  Shape shape{B};
  shape.insert(shape.end(), item_shape.begin(), item_shape.end());
  const bool track = should_record({&x});
  Tensor out = make_result(shape, track);
  for (std::size_t b = 0; b < B; ++b)
    apply(x.data().subspan(b * in_item, in_item), out.data().subspan(b * out_item, out_item));
  if (track) {
    auto xn = x.node(), on = out.node();
    Tape::active()->record([xn, on, adjoint, B, in_item, out_item] {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      std::vector<double> tmp(in_item);
      for (std::size_t b = 0; b < B; ++b) {
        std::fill(tmp.begin(), tmp.end(), 0.0);
        adjoint(std::span<const double>(on->grad).subspan(b * out_item, out_item), tmp);
        for (std::size_t i = 0; i < in_item; ++i) xn->grad[b * in_item + i] += tmp[i];
      }
    });
  }
  return out;
}

}  // namespace dudo::ops
