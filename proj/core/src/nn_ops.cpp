#include "adreg/nn_ops.hpp"

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace adreg {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

struct ConvGeom {
  std::int64_t n, cin, cout, k, stride, pad;
  std::array<std::int64_t, 3> in;   // d,h,w
  std::array<std::int64_t, 3> out;  // d,h,w
  std::int64_t in_spatial() const { return in[0] * in[1] * in[2]; }
  std::int64_t out_spatial() const { return out[0] * out[1] * out[2]; }
  std::int64_t ck() const { return cin * k * k * k; }
};

ConvGeom make_geom(const std::vector<std::int64_t>& xsh, std::int64_t cout, std::int64_t k,
                   std::int64_t stride) {
  if (xsh.size() != 5) throw std::invalid_argument("conv3d: input must be [N,C,D,H,W]");
  ConvGeom g;
  g.n = xsh[0];
  g.cin = xsh[1];
  g.cout = cout;
  g.k = k;
  g.stride = stride;
  g.pad = k / 2;
  g.in = {xsh[2], xsh[3], xsh[4]};
  for (int a = 0; a < 3; ++a) {
    const std::int64_t o = (g.in[std::size_t(a)] + 2 * g.pad - k) / stride + 1;
    if (o < 1) throw std::invalid_argument("conv3d: output would be empty");
    g.out[std::size_t(a)] = o;
  }
  return g;
}

// Gathers the receptive fields of one sample into col [CK x OV], column-major
// (each output voxel is one column).
void im2col(const double* x, const ConvGeom& g, double* col) {
  const std::int64_t od = g.out[0], oh = g.out[1], ow = g.out[2];
  const std::int64_t id = g.in[0], ih = g.in[1], iw = g.in[2];
  const std::int64_t ov = g.out_spatial();
  std::int64_t row = 0;
  for (std::int64_t c = 0; c < g.cin; ++c) {
    const double* xc = x + c * g.in_spatial();
    for (std::int64_t kz = 0; kz < g.k; ++kz)
      for (std::int64_t ky = 0; ky < g.k; ++ky)
        for (std::int64_t kx = 0; kx < g.k; ++kx, ++row) {
          double* dst = col + row;  // stride OVer columns is CK
          for (std::int64_t oz = 0; oz < od; ++oz) {
            const std::int64_t z = oz * g.stride - g.pad + kz;
            const bool zok = z >= 0 && z < id;
            for (std::int64_t oy = 0; oy < oh; ++oy) {
              const std::int64_t y = oy * g.stride - g.pad + ky;
              const bool yok = y >= 0 && y < ih;
              const std::int64_t base = (z * ih + y) * iw;
              for (std::int64_t ox = 0; ox < ow; ++ox) {
                const std::int64_t xx = ox * g.stride - g.pad + kx;
                const std::int64_t cidx = (oz * oh + oy) * ow + ox;
                dst[cidx * g.ck()] =
                    (zok && yok && xx >= 0 && xx < iw) ? xc[base + xx] : 0.0;
              }
            }
          }
          (void)ov;
        }
  }
}

// Scatter-adds col [CK x OV] back into one sample's input gradient.
void col2im_add(const double* col, const ConvGeom& g, double* gx) {
  const std::int64_t od = g.out[0], oh = g.out[1], ow = g.out[2];
  const std::int64_t id = g.in[0], ih = g.in[1], iw = g.in[2];
  std::int64_t row = 0;
  for (std::int64_t c = 0; c < g.cin; ++c) {
    double* xc = gx + c * g.in_spatial();
    for (std::int64_t kz = 0; kz < g.k; ++kz)
      for (std::int64_t ky = 0; ky < g.k; ++ky)
        for (std::int64_t kx = 0; kx < g.k; ++kx, ++row) {
          const double* src = col + row;
          for (std::int64_t oz = 0; oz < od; ++oz) {
            const std::int64_t z = oz * g.stride - g.pad + kz;
            if (z < 0 || z >= id) continue;
            for (std::int64_t oy = 0; oy < oh; ++oy) {
              const std::int64_t y = oy * g.stride - g.pad + ky;
              if (y < 0 || y >= ih) continue;
              const std::int64_t base = (z * ih + y) * iw;
              for (std::int64_t ox = 0; ox < ow; ++ox) {
                const std::int64_t xx = ox * g.stride - g.pad + kx;
                if (xx < 0 || xx >= iw) continue;
                const std::int64_t cidx = (oz * oh + oy) * ow + ox;
                xc[base + xx] += src[cidx * g.ck()];
              }
            }
          }
        }
  }
}

thread_local std::vector<double> tl_col;

double* col_scratch(std::int64_t n) {
  if (std::int64_t(tl_col.size()) < n) tl_col.resize(std::size_t(n));
  return tl_col.data();
}

// y[s] += W * col(x[s]) + b for every sample (callers pass zeroed buffers
// for a pure forward; backward paths rely on accumulation).
void conv_fwd(const double* x, const double* w, const double* b, const ConvGeom& g, double* y) {
  const std::int64_t ck = g.ck(), ov = g.out_spatial();
#pragma omp parallel for schedule(static)
  for (std::int64_t s = 0; s < g.n; ++s) {
    double* col = col_scratch(ck * ov);
    im2col(x + s * g.cin * g.in_spatial(), g, col);
    CMapRM wm(w, g.cout, ck);
    Eigen::Map<const Eigen::MatrixXd> cm(col, ck, ov);
    MapRM ym(y + s * g.cout * ov, g.cout, ov);
    ym.noalias() += wm * cm;
    if (b)
      for (std::int64_t c = 0; c < g.cout; ++c) ym.row(c).array() += b[c];
  }
}

// gx[s] += col2im(W^T * gy[s])
void conv_bwd_data(const double* gy, const double* w, const ConvGeom& g, double* gx) {
  const std::int64_t ck = g.ck(), ov = g.out_spatial();
#pragma omp parallel for schedule(static)
  for (std::int64_t s = 0; s < g.n; ++s) {
    double* col = col_scratch(ck * ov);
    CMapRM wm(w, g.cout, ck);
    CMapRM gym(gy + s * g.cout * ov, g.cout, ov);
    Eigen::Map<Eigen::MatrixXd> cm(col, ck, ov);
    cm.noalias() = wm.transpose() * gym;
    col2im_add(col, g, gx + s * g.cin * g.in_spatial());
  }
}

// gw += sum_s gy[s] * col(x[s])^T ; gb += sum gy. Per-sample partials are
// reduced in fixed order for determinism.
void conv_bwd_weight(const double* x, const double* gy, const ConvGeom& g, double* gw,
                     double* gb) {
  const std::int64_t ck = g.ck(), ov = g.out_spatial();
  if (gw) {
    std::vector<std::vector<double>> partials(std::size_t(g.n));
#pragma omp parallel for schedule(static)
    for (std::int64_t s = 0; s < g.n; ++s) {
      double* col = col_scratch(ck * ov);
      im2col(x + s * g.cin * g.in_spatial(), g, col);
      partials[std::size_t(s)].assign(std::size_t(g.cout * ck), 0.0);
      CMapRM gym(gy + s * g.cout * ov, g.cout, ov);
      Eigen::Map<const Eigen::MatrixXd> cm(col, ck, ov);
      MapRM pw(partials[std::size_t(s)].data(), g.cout, ck);
      pw.noalias() = gym * cm.transpose();
    }
    for (std::int64_t s = 0; s < g.n; ++s)
      for (std::int64_t i = 0; i < g.cout * ck; ++i)
        gw[i] += partials[std::size_t(s)][std::size_t(i)];
  }
  if (gb) {
    for (std::int64_t s = 0; s < g.n; ++s)
      for (std::int64_t c = 0; c < g.cout; ++c) {
        const double* p = gy + (s * g.cout + c) * ov;
        double acc = 0;
        for (std::int64_t i = 0; i < ov; ++i) acc += p[i];
        gb[c] += acc;
      }
  }
}

}  // namespace

Var conv3d(Var x, Var w, Var b, int stride) {
  const auto& wsh = w.val().shape;
  if (wsh.size() != 5 || wsh[2] != wsh[3] || wsh[2] != wsh[4])
    throw std::invalid_argument("conv3d: weight must be [Cout,Cin,k,k,k]");
  ConvGeom g = make_geom(x.val().shape, wsh[0], wsh[2], stride);
  if (wsh[1] != g.cin) throw std::invalid_argument("conv3d: Cin mismatch");

  Tensor out({g.n, g.cout, g.out[0], g.out[1], g.out[2]});
  conv_fwd(x.val().v.data(), w.val().v.data(), b.valid() ? b.val().v.data() : nullptr, g,
           out.v.data());

  const int ix = x.id, iw = w.id, ib = b.valid() ? b.id : -1;
  return x.g->op(std::move(out), ib >= 0 ? std::vector<int>{ix, iw, ib} : std::vector<int>{ix, iw},
                 [ix, iw, ib, g](Graph& gr, int id) {
                   const Tensor& go = gr.node(id).grad;
                   if (gr.node(ix).requires_grad)
                     conv_bwd_data(go.v.data(), gr.value(iw).v.data(), g,
                                   gr.grad_buf(ix).v.data());
                   if (gr.node(iw).requires_grad)
                     conv_bwd_weight(gr.value(ix).v.data(), go.v.data(), g,
                                     gr.grad_buf(iw).v.data(),
                                     ib >= 0 && gr.node(ib).requires_grad
                                         ? gr.grad_buf(ib).v.data()
                                         : nullptr);
                   else if (ib >= 0 && gr.node(ib).requires_grad)
                     conv_bwd_weight(gr.value(ix).v.data(), go.v.data(), g, nullptr,
                                     gr.grad_buf(ib).v.data());
                 });
}

Var deconv3d_x2(Var x, Var w, Var b) {
  const auto& xsh = x.val().shape;
  const auto& wsh = w.val().shape;
  if (wsh.size() != 5 || wsh[2] != 3 || wsh[3] != 3 || wsh[4] != 3)
    throw std::invalid_argument("deconv3d_x2: weight must be [Cin,Cout,3,3,3]");
  if (xsh.size() != 5 || wsh[0] != xsh[1]) throw std::invalid_argument("deconv3d_x2: Cin mismatch");

  // Adjoint of conv(k=3, s=2, p=1) from the doubled domain down to x's size.
  std::vector<std::int64_t> big{xsh[0], wsh[1], 2 * xsh[2], 2 * xsh[3], 2 * xsh[4]};
  ConvGeom g = make_geom(big, /*cout=*/xsh[1], 3, 2);
  for (int a = 0; a < 3; ++a)
    if (g.out[std::size_t(a)] != xsh[std::size_t(a) + 2])
      throw std::logic_error("deconv3d_x2: geometry mismatch");

  // The deconv weight layout [Cin,Cout,3,3,3] reads directly as the conv
  // weight [Cout'=Cin, Cin'=Cout, 3,3,3] of the underlying stride-2 conv.
  const std::int64_t cout = wsh[1];

  Tensor out(big);
  conv_bwd_data(x.val().v.data(), w.val().v.data(), g, out.v.data());
  if (b.valid()) {
    const std::int64_t sp = g.in_spatial();
    for (std::int64_t s = 0; s < g.n; ++s)
      for (std::int64_t c = 0; c < cout; ++c) {
        double* p = out.v.data() + (s * cout + c) * sp;
        const double bias = b.val().v[std::size_t(c)];
        for (std::int64_t i = 0; i < sp; ++i) p[i] += bias;
      }
  }

  const int ix = x.id, iw = w.id, ib = b.valid() ? b.id : -1;
  return x.g->op(std::move(out), ib >= 0 ? std::vector<int>{ix, iw, ib} : std::vector<int>{ix, iw},
                 [ix, iw, ib, g, cout](Graph& gr, int id) {
                   const Tensor& go = gr.node(id).grad;  // big domain
                   if (gr.node(ix).requires_grad) {
                     // d/dx of C^T(x) adjoint = C(gout)
                     conv_fwd(go.v.data(), gr.value(iw).v.data(), nullptr, g,
                              gr.grad_buf(ix).v.data());
                   }
                   if (gr.node(iw).requires_grad) {
                     // <gout, C_w^T x> = <C_w gout, x>: weight grad with
                     // (input=gout_big, gy=x_small)
                     conv_bwd_weight(go.v.data(), gr.value(ix).v.data(), g,
                                     gr.grad_buf(iw).v.data(), nullptr);
                   }
                   if (ib >= 0 && gr.node(ib).requires_grad) {
                     const std::int64_t sp = g.in_spatial();
                     double* gb = gr.grad_buf(ib).v.data();
                     for (std::int64_t s = 0; s < g.n; ++s)
                       for (std::int64_t c = 0; c < cout; ++c) {
                         const double* p = go.v.data() + (s * cout + c) * sp;
                         double acc = 0;
                         for (std::int64_t i = 0; i < sp; ++i) acc += p[i];
                         gb[c] += acc;
                       }
                   }
                 });
}

Var linear(Var x, Var w, Var b) {
  const auto& xsh = x.val().shape;
  const auto& wsh = w.val().shape;
  if (xsh.size() != 2 || wsh.size() != 2 || wsh[1] != xsh[1])
    throw std::invalid_argument("linear: shape mismatch");
  const std::int64_t n = xsh[0], f = xsh[1], o = wsh[0];
  Tensor out({n, o});
  CMapRM xm(x.val().v.data(), n, f);
  CMapRM wm(w.val().v.data(), o, f);
  MapRM ym(out.v.data(), n, o);
  ym.noalias() = xm * wm.transpose();
  if (b.valid())
    for (std::int64_t s = 0; s < n; ++s)
      for (std::int64_t c = 0; c < o; ++c) out.v[std::size_t(s * o + c)] += b.val().v[std::size_t(c)];

  const int ix = x.id, iw = w.id, ib = b.valid() ? b.id : -1;
  return x.g->op(std::move(out), ib >= 0 ? std::vector<int>{ix, iw, ib} : std::vector<int>{ix, iw},
                 [ix, iw, ib, n, f, o](Graph& gr, int id) {
                   const Tensor& go = gr.node(id).grad;
                   CMapRM gom(go.v.data(), n, o);
                   if (gr.node(ix).requires_grad) {
                     CMapRM wm(gr.value(iw).v.data(), o, f);
                     MapRM gxm(gr.grad_buf(ix).v.data(), n, f);
                     gxm.noalias() += gom * wm;
                   }
                   if (gr.node(iw).requires_grad) {
                     CMapRM xm(gr.value(ix).v.data(), n, f);
                     MapRM gwm(gr.grad_buf(iw).v.data(), o, f);
                     gwm.noalias() += gom.transpose() * xm;
                   }
                   if (ib >= 0 && gr.node(ib).requires_grad) {
                     double* gb = gr.grad_buf(ib).v.data();
                     for (std::int64_t s = 0; s < n; ++s)
                       for (std::int64_t c = 0; c < o; ++c) gb[c] += go.v[std::size_t(s * o + c)];
                   }
                 });
}

namespace {

struct ResizeTap {
  std::int64_t i0, i1;
  double w0, w1;
};

std::vector<ResizeTap> resize_taps(std::int64_t in, std::int64_t out) {
  std::vector<ResizeTap> taps(static_cast<std::size_t>(out), ResizeTap{});
  const double r = double(in) / double(out);
  for (std::int64_t o = 0; o < out; ++o) {
    double src = (double(o) + 0.5) * r - 0.5;
    if (src < 0) src = 0;
    if (src > double(in - 1)) src = double(in - 1);
    const std::int64_t i0 = std::int64_t(std::floor(src));
    const std::int64_t i1 = std::min(i0 + 1, in - 1);
    const double a = src - double(i0);
    taps[std::size_t(o)] = {i0, i1, 1.0 - a, a};
  }
  return taps;
}

}  // namespace

Var resize_trilinear(Var x, std::array<std::int64_t, 3> out_dhw) {
  const auto& sh = x.val().shape;
  if (sh.size() != 5) throw std::invalid_argument("resize_trilinear: need [N,C,D,H,W]");
  const std::int64_t n = sh[0], c = sh[1];
  const std::int64_t id = sh[2], ih = sh[3], iw = sh[4];
  const std::int64_t od = out_dhw[0], oh = out_dhw[1], ow = out_dhw[2];
  if (od == id && oh == ih && ow == iw) {
    // identity resize: pass-through copy
    Tensor out = x.val();
    const int ix = x.id;
    return x.g->op(std::move(out), {ix}, [ix](Graph& g, int idn) {
      if (!g.node(ix).requires_grad) return;
      const Tensor& go = g.node(idn).grad;
      Tensor& dst = g.grad_buf(ix);
      for (std::size_t i = 0; i < go.v.size(); ++i) dst.v[i] += go.v[i];
    });
  }

  const auto tz = resize_taps(id, od), ty = resize_taps(ih, oh), tx = resize_taps(iw, ow);
  Tensor out({n, c, od, oh, ow});
  const std::int64_t isp = id * ih * iw, osp = od * oh * ow;
  for (std::int64_t s = 0; s < n * c; ++s) {
    const double* src = x.val().v.data() + s * isp;
    double* dst = out.v.data() + s * osp;
    for (std::int64_t z = 0; z < od; ++z)
      for (std::int64_t y = 0; y < oh; ++y)
        for (std::int64_t xx = 0; xx < ow; ++xx) {
          const auto &az = tz[std::size_t(z)], &ay = ty[std::size_t(y)], &ax = tx[std::size_t(xx)];
          double acc = 0;
          acc += az.w0 * (ay.w0 * (ax.w0 * src[(az.i0 * ih + ay.i0) * iw + ax.i0] +
                                   ax.w1 * src[(az.i0 * ih + ay.i0) * iw + ax.i1]) +
                          ay.w1 * (ax.w0 * src[(az.i0 * ih + ay.i1) * iw + ax.i0] +
                                   ax.w1 * src[(az.i0 * ih + ay.i1) * iw + ax.i1]));
          acc += az.w1 * (ay.w0 * (ax.w0 * src[(az.i1 * ih + ay.i0) * iw + ax.i0] +
                                   ax.w1 * src[(az.i1 * ih + ay.i0) * iw + ax.i1]) +
                          ay.w1 * (ax.w0 * src[(az.i1 * ih + ay.i1) * iw + ax.i0] +
                                   ax.w1 * src[(az.i1 * ih + ay.i1) * iw + ax.i1]));
          dst[(z * oh + y) * ow + xx] = acc;
        }
  }

  const int ix = x.id;
  return x.g->op(std::move(out), {ix}, [ix, n, c, id, ih, iw, od, oh, ow, tz, ty, tx](Graph& g,
                                                                                      int idn) {
    if (!g.node(ix).requires_grad) return;
    const Tensor& go = g.node(idn).grad;
    Tensor& dst = g.grad_buf(ix);
    const std::int64_t isp = id * ih * iw, osp = od * oh * ow;
    for (std::int64_t s = 0; s < n * c; ++s) {
      double* gx = dst.v.data() + s * isp;
      const double* gy = go.v.data() + s * osp;
      for (std::int64_t z = 0; z < od; ++z)
        for (std::int64_t y = 0; y < oh; ++y)
          for (std::int64_t xx = 0; xx < ow; ++xx) {
            const auto &az = tz[std::size_t(z)], &ay = ty[std::size_t(y)], &ax = tx[std::size_t(xx)];
            const double gv = gy[(z * oh + y) * ow + xx];
            gx[(az.i0 * ih + ay.i0) * iw + ax.i0] += az.w0 * ay.w0 * ax.w0 * gv;
            gx[(az.i0 * ih + ay.i0) * iw + ax.i1] += az.w0 * ay.w0 * ax.w1 * gv;
            gx[(az.i0 * ih + ay.i1) * iw + ax.i0] += az.w0 * ay.w1 * ax.w0 * gv;
            gx[(az.i0 * ih + ay.i1) * iw + ax.i1] += az.w0 * ay.w1 * ax.w1 * gv;
            gx[(az.i1 * ih + ay.i0) * iw + ax.i0] += az.w1 * ay.w0 * ax.w0 * gv;
            gx[(az.i1 * ih + ay.i0) * iw + ax.i1] += az.w1 * ay.w0 * ax.w1 * gv;
            gx[(az.i1 * ih + ay.i1) * iw + ax.i0] += az.w1 * ay.w1 * ax.w0 * gv;
            gx[(az.i1 * ih + ay.i1) * iw + ax.i1] += az.w1 * ay.w1 * ax.w1 * gv;
          }
    }
  });
}

Var channel_group_sum(Var x, int factor) {
  const auto& sh = x.val().shape;
  if (sh.size() != 5 || sh[1] % factor != 0)
    throw std::invalid_argument("channel_group_sum: channels not divisible by factor");
  const std::int64_t n = sh[0], cin = sh[1], cout = cin / factor;
  const std::int64_t sp = sh[2] * sh[3] * sh[4];
  Tensor out({n, cout, sh[2], sh[3], sh[4]});
  for (std::int64_t s = 0; s < n; ++s)
    for (std::int64_t f = 0; f < factor; ++f)
      for (std::int64_t c = 0; c < cout; ++c) {
        const double* src = x.val().v.data() + ((s * cin) + f * cout + c) * sp;
        double* dst = out.v.data() + (s * cout + c) * sp;
        for (std::int64_t i = 0; i < sp; ++i) dst[i] += src[i];
      }
  const int ix = x.id;
  return x.g->op(std::move(out), {ix}, [ix, n, cin, cout, sp, factor](Graph& g, int id) {
    if (!g.node(ix).requires_grad) return;
    const Tensor& go = g.node(id).grad;
    Tensor& dst = g.grad_buf(ix);
    for (std::int64_t s = 0; s < n; ++s)
      for (std::int64_t f = 0; f < factor; ++f)
        for (std::int64_t c = 0; c < cout; ++c) {
          double* gx = dst.v.data() + ((s * cin) + f * cout + c) * sp;
          const double* gy = go.v.data() + (s * cout + c) * sp;
          for (std::int64_t i = 0; i < sp; ++i) gx[i] += gy[i];
        }
  });
}

Var global_avg_pool(Var x) {
  const auto& sh = x.val().shape;
  if (sh.size() != 5) throw std::invalid_argument("global_avg_pool: need [N,C,D,H,W]");
  const std::int64_t n = sh[0], c = sh[1];
  const std::int64_t sp = sh[2] * sh[3] * sh[4];
  const double inv = 1.0 / double(sp);
  Tensor out({n, c});
  for (std::int64_t s = 0; s < n * c; ++s) {
    const double* p = x.val().v.data() + s * sp;
    double acc = 0;
    for (std::int64_t i = 0; i < sp; ++i) acc += p[i];
    out.v[std::size_t(s)] = acc * inv;
  }
  const int ix = x.id;
  return x.g->op(std::move(out), {ix}, [ix, n, c, sp, inv](Graph& g, int id) {
    if (!g.node(ix).requires_grad) return;
    const Tensor& go = g.node(id).grad;
    Tensor& dst = g.grad_buf(ix);
    for (std::int64_t s = 0; s < n * c; ++s) {
      double* p = dst.v.data() + s * sp;
      const double gv = go.v[std::size_t(s)] * inv;
      for (std::int64_t i = 0; i < sp; ++i) p[i] += gv;
    }
  });
}

BnResult batchnorm_train(Var x, Var gamma, Var beta, double eps) {
  // copy: adding nodes reallocates the graph and would dangle a reference
  const std::vector<std::int64_t> sh = x.val().shape;
  Var mu = mean_channels(x);
  Var xc = sub(x, bcast_channels(mu, sh));
  Var var = mean_channels(square(xc));
  Var sd = sqrt_op(add_scalar(var, eps));
  Var y = divide(xc, bcast_channels(sd, sh));
  y = add(mul(y, bcast_channels(gamma, sh)), bcast_channels(beta, sh));
  return {y, mu.val(), var.val()};
}

Var batchnorm_eval(Var x, Var gamma, Var beta, const Tensor& running_mean,
                   const Tensor& running_var, double eps) {
  const std::vector<std::int64_t> sh = x.val().shape;
  Graph& g = *x.g;
  Tensor scale_t = running_var, shift_t = running_mean;
  for (std::size_t i = 0; i < scale_t.v.size(); ++i)
    scale_t.v[i] = 1.0 / std::sqrt(running_var.v[i] + eps);
  Var inv_sd = g.constant(scale_t);
  Var mu = g.constant(shift_t);
  Var y = mul(sub(x, bcast_channels(mu, sh)), bcast_channels(inv_sd, sh));
  return add(mul(y, bcast_channels(gamma, sh)), bcast_channels(beta, sh));
}

DualVar conv3d_dual(DualVar x, Var w, Var b, int stride) {
  Var none;
  return {conv3d(x.p, w, b, stride), conv3d(x.t, w, none, stride)};
}

DualVar linear_dual(DualVar x, Var w, Var b) {
  Var none;
  return {linear(x.p, w, b), linear(x.t, w, none)};
}

DualVar lrelu_dual(DualVar x, double slope) {
  // The activation mask is piecewise constant in the primal; treating it as
  // a constant gives the a.e. derivative used everywhere else.
  Tensor mask = x.p.val();
  for (double& m : mask.v) m = m > 0 ? 1.0 : slope;
  Var mk = x.p.g->constant(std::move(mask));
  return {lrelu(x.p, slope), mul(x.t, mk)};
}

DualVar flatten2_dual(DualVar x) { return {flatten2(x.p), flatten2(x.t)}; }

DualVar batchnorm_train_dual(DualVar x, Var gamma, Var beta, double eps) {
  const std::vector<std::int64_t> sh = x.p.val().shape;
  Var mu = mean_channels(x.p);
  Var xc = sub(x.p, bcast_channels(mu, sh));
  Var var = mean_channels(square(xc));
  Var sd = sqrt_op(add_scalar(var, eps));
  Var sd_b = bcast_channels(sd, sh);
  Var y0 = divide(xc, sd_b);
  Var y = add(mul(y0, bcast_channels(gamma, sh)), bcast_channels(beta, sh));

  // Tangents: t_mu = mean(t); t_xc = t - bcast(t_mu);
  // t_var = 2*mean(xc*t_xc); t_sd = t_var/(2 sd);
  // t_y0 = t_xc/sd - xc * t_sd / sd^2; t_y = gamma * t_y0.
  Var t_mu = mean_channels(x.t);
  Var t_xc = sub(x.t, bcast_channels(t_mu, sh));
  Var t_var = scale(mean_channels(mul(xc, t_xc)), 2.0);
  Var t_sd = divide(t_var, scale(sd, 2.0));
  Var t_y0 = sub(divide(t_xc, sd_b), divide(mul(xc, bcast_channels(t_sd, sh)),
                                            square(sd_b)));
  Var t_y = mul(t_y0, bcast_channels(gamma, sh));
  return {y, t_y};
}

}  // namespace adreg
