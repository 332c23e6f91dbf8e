#include "adreg/field_graph.hpp"

#include <cmath>
#include <stdexcept>

#include "adreg/volume_ops.hpp"

namespace adreg {

Var warp_op(Var img, Var field, const Grid3& grid) {
  const auto& ish = img.val().shape;
  const auto& fsh = field.val().shape;
  if (ish.size() != 5 || fsh.size() != 5 || fsh[1] != 3)
    throw std::invalid_argument("warp_op: expect img [N,C,D,H,W], field [N,3,D,H,W]");
  if (ish[0] != fsh[0] || ish[2] != fsh[2] || ish[3] != fsh[3] || ish[4] != fsh[4])
    throw std::invalid_argument("warp_op: grid mismatch between image and field");
  const std::int64_t n = ish[0], c = ish[1];
  const std::int64_t sp = ish[2] * ish[3] * ish[4];
  if (sp != grid.voxels()) throw std::invalid_argument("warp_op: tensor/grid mismatch");

  Tensor out(ish);
  const double* uv = field.val().v.data();
  const double* iv = img.val().v.data();
  for (std::int64_t s = 0; s < n; ++s) {
    const double* u = uv + s * 3 * sp;
    for (std::int64_t z = 0; z < grid.shape[2]; ++z)
      for (std::int64_t y = 0; y < grid.shape[1]; ++y)
        for (std::int64_t x = 0; x < grid.shape[0]; ++x) {
          const std::int64_t i = grid.index(x, y, z);
          const double fx = double(x) + u[i] / grid.spacing[0];
          const double fy = double(y) + u[sp + i] / grid.spacing[1];
          const double fz = double(z) + u[2 * sp + i] / grid.spacing[2];
          const std::int64_t x0 = std::int64_t(std::floor(fx));
          const std::int64_t y0 = std::int64_t(std::floor(fy));
          const std::int64_t z0 = std::int64_t(std::floor(fz));
          const double ax = fx - double(x0), ay = fy - double(y0), az = fz - double(z0);
          for (std::int64_t ch = 0; ch < c; ++ch) {
            const double* src = iv + (s * c + ch) * sp;
            double acc = 0;
            for (int dz = 0; dz < 2; ++dz) {
              const std::int64_t zz = z0 + dz;
              if (zz < 0 || zz >= grid.shape[2]) continue;
              const double wz = dz ? az : 1.0 - az;
              for (int dy = 0; dy < 2; ++dy) {
                const std::int64_t yy = y0 + dy;
                if (yy < 0 || yy >= grid.shape[1]) continue;
                const double wy = dy ? ay : 1.0 - ay;
                for (int dx = 0; dx < 2; ++dx) {
                  const std::int64_t xx = x0 + dx;
                  if (xx < 0 || xx >= grid.shape[0]) continue;
                  const double wx = dx ? ax : 1.0 - ax;
                  acc += wx * wy * wz * src[grid.index(xx, yy, zz)];
                }
              }
            }
            out.v[std::size_t(((s * c + ch) * sp) + i)] = acc;
          }
        }
  }

  const int ii = img.id, fi = field.id;
  const Grid3 g = grid;
  return img.g->op(std::move(out), {ii, fi}, [ii, fi, g, n, c, sp](Graph& gr, int id) {
    const Tensor& go = gr.node(id).grad;
    const bool need_img = gr.node(ii).requires_grad;
    const bool need_field = gr.node(fi).requires_grad;
    const double* uv = gr.value(fi).v.data();
    const double* iv = gr.value(ii).v.data();
    double* gimg = need_img ? gr.grad_buf(ii).v.data() : nullptr;
    double* gfield = need_field ? gr.grad_buf(fi).v.data() : nullptr;

    for (std::int64_t s = 0; s < n; ++s) {
      const double* u = uv + s * 3 * sp;
      for (std::int64_t z = 0; z < g.shape[2]; ++z)
        for (std::int64_t y = 0; y < g.shape[1]; ++y)
          for (std::int64_t x = 0; x < g.shape[0]; ++x) {
            const std::int64_t i = g.index(x, y, z);
            const double fx = double(x) + u[i] / g.spacing[0];
            const double fy = double(y) + u[sp + i] / g.spacing[1];
            const double fz = double(z) + u[2 * sp + i] / g.spacing[2];
            const std::int64_t x0 = std::int64_t(std::floor(fx));
            const std::int64_t y0 = std::int64_t(std::floor(fy));
            const std::int64_t z0 = std::int64_t(std::floor(fz));
            const double ax = fx - double(x0), ay = fy - double(y0), az = fz - double(z0);
            double du0 = 0, du1 = 0, du2 = 0;
            for (std::int64_t ch = 0; ch < c; ++ch) {
              const double gv = go.v[std::size_t((s * c + ch) * sp + i)];
              if (gv == 0.0) continue;
              const double* src = iv + (s * c + ch) * sp;
              double* gsrc = need_img ? gimg + (s * c + ch) * sp : nullptr;
              for (int dz = 0; dz < 2; ++dz) {
                const std::int64_t zz = z0 + dz;
                if (zz < 0 || zz >= g.shape[2]) continue;
                const double wz = dz ? az : 1.0 - az;
                const double dz8 = dz ? 1.0 : -1.0;
                for (int dy = 0; dy < 2; ++dy) {
                  const std::int64_t yy = y0 + dy;
                  if (yy < 0 || yy >= g.shape[1]) continue;
                  const double wy = dy ? ay : 1.0 - ay;
                  const double dy8 = dy ? 1.0 : -1.0;
                  for (int dx = 0; dx < 2; ++dx) {
                    const std::int64_t xx = x0 + dx;
                    if (xx < 0 || xx >= g.shape[0]) continue;
                    const double wx = dx ? ax : 1.0 - ax;
                    const double dx8 = dx ? 1.0 : -1.0;
                    const std::int64_t si = g.index(xx, yy, zz);
                    if (gsrc) gsrc[si] += gv * wx * wy * wz;
                    if (need_field) {
                      const double sv = src[si];
                      du0 += gv * sv * dx8 * wy * wz;
                      du1 += gv * sv * wx * dy8 * wz;
                      du2 += gv * sv * wx * wy * dz8;
                    }
                  }
                }
              }
            }
            if (need_field) {
              gfield[s * 3 * sp + i] += du0 / g.spacing[0];
              gfield[s * 3 * sp + sp + i] += du1 / g.spacing[1];
              gfield[s * 3 * sp + 2 * sp + i] += du2 / g.spacing[2];
            }
          }
    }
  });
}

Var compose_op(Var local, Var affine, const Grid3& grid) {
  const auto& lsh = local.val().shape;
  const auto& ash = affine.val().shape;
  if (lsh.size() != 5 || lsh[1] != 3) throw std::invalid_argument("compose_op: local must be [N,3,D,H,W]");
  if (ash.size() != 2 || ash[1] != 12 || ash[0] != lsh[0])
    throw std::invalid_argument("compose_op: affine must be [N,12]");
  const std::int64_t n = lsh[0];
  const std::int64_t sp = lsh[2] * lsh[3] * lsh[4];
  if (sp != grid.voxels()) throw std::invalid_argument("compose_op: tensor/grid mismatch");

  Tensor out(lsh);
  for (std::int64_t s = 0; s < n; ++s) {
    const double* p = affine.val().v.data() + s * 12;
    const double* lv = local.val().v.data() + s * 3 * sp;
    for (std::int64_t z = 0; z < grid.shape[2]; ++z)
      for (std::int64_t y = 0; y < grid.shape[1]; ++y)
        for (std::int64_t x = 0; x < grid.shape[0]; ++x) {
          const std::int64_t i = grid.index(x, y, z);
          const auto w = grid.world(x, y, z);
          const double a0 = p[0] * w[0] + p[1] * w[1] + p[2] * w[2] + p[3];
          const double a1 = p[4] * w[0] + p[5] * w[1] + p[6] * w[2] + p[7];
          const double a2 = p[8] * w[0] + p[9] * w[1] + p[10] * w[2] + p[11];
          const double fx = (a0 - grid.origin[0]) / grid.spacing[0];
          const double fy = (a1 - grid.origin[1]) / grid.spacing[1];
          const double fz = (a2 - grid.origin[2]) / grid.spacing[2];
          double ul[3] = {0, 0, 0};
          const std::int64_t x0 = std::int64_t(std::floor(fx));
          const std::int64_t y0 = std::int64_t(std::floor(fy));
          const std::int64_t z0 = std::int64_t(std::floor(fz));
          const double ax = fx - double(x0), ay = fy - double(y0), az = fz - double(z0);
          for (int dz = 0; dz < 2; ++dz) {
            const std::int64_t zz = z0 + dz;
            if (zz < 0 || zz >= grid.shape[2]) continue;
            const double wz = dz ? az : 1.0 - az;
            for (int dy = 0; dy < 2; ++dy) {
              const std::int64_t yy = y0 + dy;
              if (yy < 0 || yy >= grid.shape[1]) continue;
              const double wy = dy ? ay : 1.0 - ay;
              for (int dx = 0; dx < 2; ++dx) {
                const std::int64_t xx = x0 + dx;
                if (xx < 0 || xx >= grid.shape[0]) continue;
                const double wgt = (dx ? ax : 1.0 - ax) * wy * wz;
                const std::int64_t si = grid.index(xx, yy, zz);
                ul[0] += wgt * lv[si];
                ul[1] += wgt * lv[sp + si];
                ul[2] += wgt * lv[2 * sp + si];
              }
            }
          }
          out.v[std::size_t(s * 3 * sp + i)] = a0 + ul[0] - w[0];
          out.v[std::size_t(s * 3 * sp + sp + i)] = a1 + ul[1] - w[1];
          out.v[std::size_t(s * 3 * sp + 2 * sp + i)] = a2 + ul[2] - w[2];
        }
  }

  const int il = local.id, ia = affine.id;
  const Grid3 g = grid;
  return local.g->op(std::move(out), {il, ia}, [il, ia, g, n, sp](Graph& gr, int id) {
    const Tensor& go = gr.node(id).grad;
    const bool need_local = gr.node(il).requires_grad;
    const bool need_aff = gr.node(ia).requires_grad;
    double* gl = need_local ? gr.grad_buf(il).v.data() : nullptr;
    double* ga = need_aff ? gr.grad_buf(ia).v.data() : nullptr;

    for (std::int64_t s = 0; s < n; ++s) {
      const double* p = gr.value(ia).v.data() + s * 12;
      const double* lv = gr.value(il).v.data() + s * 3 * sp;
      for (std::int64_t z = 0; z < g.shape[2]; ++z)
        for (std::int64_t y = 0; y < g.shape[1]; ++y)
          for (std::int64_t x = 0; x < g.shape[0]; ++x) {
            const std::int64_t i = g.index(x, y, z);
            const auto w = g.world(x, y, z);
            const double gv[3] = {go.v[std::size_t(s * 3 * sp + i)],
                                  go.v[std::size_t(s * 3 * sp + sp + i)],
                                  go.v[std::size_t(s * 3 * sp + 2 * sp + i)]};
            if (gv[0] == 0 && gv[1] == 0 && gv[2] == 0) continue;
            const double a0 = p[0] * w[0] + p[1] * w[1] + p[2] * w[2] + p[3];
            const double a1 = p[4] * w[0] + p[5] * w[1] + p[6] * w[2] + p[7];
            const double a2 = p[8] * w[0] + p[9] * w[1] + p[10] * w[2] + p[11];
            const double fx = (a0 - g.origin[0]) / g.spacing[0];
            const double fy = (a1 - g.origin[1]) / g.spacing[1];
            const double fz = (a2 - g.origin[2]) / g.spacing[2];
            const std::int64_t x0 = std::int64_t(std::floor(fx));
            const std::int64_t y0 = std::int64_t(std::floor(fy));
            const std::int64_t z0 = std::int64_t(std::floor(fz));
            const double ax = fx - double(x0), ay = fy - double(y0), az = fz - double(z0);
            // D[c][m] = d u_local_c / d world_m at A(x)
            double dgrad[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
            for (int dz = 0; dz < 2; ++dz) {
              const std::int64_t zz = z0 + dz;
              if (zz < 0 || zz >= g.shape[2]) continue;
              const double wz = dz ? az : 1.0 - az;
              const double dzs = dz ? 1.0 : -1.0;
              for (int dy = 0; dy < 2; ++dy) {
                const std::int64_t yy = y0 + dy;
                if (yy < 0 || yy >= g.shape[1]) continue;
                const double wy = dy ? ay : 1.0 - ay;
                const double dys = dy ? 1.0 : -1.0;
                for (int dx = 0; dx < 2; ++dx) {
                  const std::int64_t xx = x0 + dx;
                  if (xx < 0 || xx >= g.shape[0]) continue;
                  const double wx = dx ? ax : 1.0 - ax;
                  const double dxs = dx ? 1.0 : -1.0;
                  const double wgt = wx * wy * wz;
                  const std::int64_t si = g.index(xx, yy, zz);
                  if (need_local) {
                    gl[s * 3 * sp + si] += gv[0] * wgt;
                    gl[s * 3 * sp + sp + si] += gv[1] * wgt;
                    gl[s * 3 * sp + 2 * sp + si] += gv[2] * wgt;
                  }
                  if (need_aff) {
                    const double wv[3] = {lv[si], lv[sp + si], lv[2 * sp + si]};
                    const double dwx = dxs * wy * wz / g.spacing[0];
                    const double dwy = wx * dys * wz / g.spacing[1];
                    const double dwz = wx * wy * dzs / g.spacing[2];
                    for (int cc = 0; cc < 3; ++cc) {
                      dgrad[cc][0] += wv[cc] * dwx;
                      dgrad[cc][1] += wv[cc] * dwy;
                      dgrad[cc][2] += wv[cc] * dwz;
                    }
                  }
                }
              }
            }
            if (need_aff) {
              // d out_c / d a_m = delta_cm + dgrad[c][m]; a_m depends on row m only.
              for (int m = 0; m < 3; ++m) {
                double gm = 0;
                for (int cc = 0; cc < 3; ++cc)
                  gm += gv[cc] * ((cc == m ? 1.0 : 0.0) + dgrad[cc][m]);
                ga[s * 12 + 4 * m + 0] += gm * w[0];
                ga[s * 12 + 4 * m + 1] += gm * w[1];
                ga[s * 12 + 4 * m + 2] += gm * w[2];
                ga[s * 12 + 4 * m + 3] += gm;
              }
            }
          }
    }
  });
}

Var gauss3_op(Var x, double sigma_mm, const Grid3& grid) {
  if (sigma_mm < 0) throw std::invalid_argument("gauss3_op: negative sigma");
  const auto& sh = x.val().shape;
  if (sh.size() != 5) throw std::invalid_argument("gauss3_op: need [N,C,D,H,W]");
  if (sigma_mm == 0.0) {
    Tensor out = x.val();
    const int ix = x.id;
    return x.g->op(std::move(out), {ix}, [ix](Graph& g, int id) {
      if (!g.node(ix).requires_grad) return;
      const Tensor& go = g.node(id).grad;
      Tensor& dst = g.grad_buf(ix);
      for (std::size_t i = 0; i < go.v.size(); ++i) dst.v[i] += go.v[i];
    });
  }
  const std::int64_t nc = sh[0] * sh[1];
  const std::int64_t sp = sh[2] * sh[3] * sh[4];
  if (sp != grid.voxels()) throw std::invalid_argument("gauss3_op: tensor/grid mismatch");
  const auto kx = gaussian_kernel1d(sigma_mm, grid.spacing[0]);
  const auto ky = gaussian_kernel1d(sigma_mm, grid.spacing[1]);
  const auto kz = gaussian_kernel1d(sigma_mm, grid.spacing[2]);

  Tensor out = x.val();
  for (std::int64_t s = 0; s < nc; ++s) {
    std::vector<double> slab(out.v.begin() + s * sp, out.v.begin() + (s + 1) * sp);
    separable_filter3(grid, slab, kx, ky, kz);
    std::copy(slab.begin(), slab.end(), out.v.begin() + s * sp);
  }

  const int ix = x.id;
  const Grid3 g = grid;
  return x.g->op(std::move(out), {ix}, [ix, g, nc, sp, kx, ky, kz](Graph& gr, int id) {
    if (!gr.node(ix).requires_grad) return;
    const Tensor& go = gr.node(id).grad;
    Tensor& dst = gr.grad_buf(ix);
    // Symmetric kernel with zero padding is self-adjoint.
    for (std::int64_t s = 0; s < nc; ++s) {
      std::vector<double> slab(go.v.begin() + s * sp, go.v.begin() + (s + 1) * sp);
      separable_filter3(g, slab, kx, ky, kz);
      for (std::int64_t i = 0; i < sp; ++i) dst.v[std::size_t(s * sp + i)] += slab[std::size_t(i)];
    }
  });
}

namespace {

// In-place axis sweep helpers shared by fd1/fd2 forward and adjoint.
template <class F>
void for_each_line(const std::vector<std::int64_t>& sh, int axis, F&& fn) {
  const std::int64_t d = sh[2], h = sh[3], w = sh[4];
  const std::int64_t nc = sh[0] * sh[1];
  const std::int64_t sp = d * h * w;
  const std::int64_t n_axis = axis == 0 ? w : (axis == 1 ? h : d);
  const std::int64_t stride = axis == 0 ? 1 : (axis == 1 ? w : w * h);
  for (std::int64_t s = 0; s < nc; ++s) {
    const std::int64_t base0 = s * sp;
    if (axis == 0) {
      for (std::int64_t z = 0; z < d; ++z)
        for (std::int64_t y = 0; y < h; ++y) fn(base0 + (z * h + y) * w, stride, n_axis);
    } else if (axis == 1) {
      for (std::int64_t z = 0; z < d; ++z)
        for (std::int64_t x = 0; x < w; ++x) fn(base0 + z * h * w + x, stride, n_axis);
    } else {
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) fn(base0 + y * w + x, stride, n_axis);
    }
  }
}

}  // namespace

Var fd1_op(Var x, int axis, double spacing_mm) {
  const auto& sh = x.val().shape;
  if (sh.size() != 5) throw std::invalid_argument("fd1_op: need [N,C,D,H,W]");
  const double inv_h = 1.0 / spacing_mm, inv_2h = 0.5 / spacing_mm;
  Tensor out(sh);
  const double* src = x.val().v.data();
  for_each_line(sh, axis, [&](std::int64_t base, std::int64_t stride, std::int64_t nn) {
    double* o = out.v.data();
    o[base] = (src[base + stride] - src[base]) * inv_h;
    for (std::int64_t i = 1; i + 1 < nn; ++i)
      o[base + i * stride] = (src[base + (i + 1) * stride] - src[base + (i - 1) * stride]) * inv_2h;
    o[base + (nn - 1) * stride] =
        (src[base + (nn - 1) * stride] - src[base + (nn - 2) * stride]) * inv_h;
  });
  const int ix = x.id;
  const std::vector<std::int64_t> shc = sh;
  return x.g->op(std::move(out), {ix}, [ix, axis, inv_h, inv_2h, shc](Graph& g, int id) {
    if (!g.node(ix).requires_grad) return;
    const Tensor& go = g.node(id).grad;
    Tensor& dst = g.grad_buf(ix);
    const double* gy = go.v.data();
    for_each_line(shc, axis, [&](std::int64_t base, std::int64_t stride, std::int64_t nn) {
      double* gx = dst.v.data();
      gx[base + stride] += gy[base] * inv_h;
      gx[base] -= gy[base] * inv_h;
      for (std::int64_t i = 1; i + 1 < nn; ++i) {
        gx[base + (i + 1) * stride] += gy[base + i * stride] * inv_2h;
        gx[base + (i - 1) * stride] -= gy[base + i * stride] * inv_2h;
      }
      gx[base + (nn - 1) * stride] += gy[base + (nn - 1) * stride] * inv_h;
      gx[base + (nn - 2) * stride] -= gy[base + (nn - 1) * stride] * inv_h;
    });
  });
}

Var fd2_op(Var x, int axis, double spacing_mm) {
  const auto& sh = x.val().shape;
  if (sh.size() != 5) throw std::invalid_argument("fd2_op: need [N,C,D,H,W]");
  const double inv_h2 = 1.0 / (spacing_mm * spacing_mm);
  Tensor out(sh);
  const double* src = x.val().v.data();
  for_each_line(sh, axis, [&](std::int64_t base, std::int64_t stride, std::int64_t nn) {
    double* o = out.v.data();
    auto second = [&](std::int64_t i0) {
      return (src[base + i0 * stride] - 2.0 * src[base + (i0 + 1) * stride] +
              src[base + (i0 + 2) * stride]) * inv_h2;
    };
    o[base] = second(0);
    for (std::int64_t i = 1; i + 1 < nn; ++i) o[base + i * stride] = second(i - 1);
    o[base + (nn - 1) * stride] = second(nn - 3);
  });
  const int ix = x.id;
  const std::vector<std::int64_t> shc = sh;
  return x.g->op(std::move(out), {ix}, [ix, axis, inv_h2, shc](Graph& g, int id) {
    if (!g.node(ix).requires_grad) return;
    const Tensor& go = g.node(id).grad;
    Tensor& dst = g.grad_buf(ix);
    const double* gy = go.v.data();
    for_each_line(shc, axis, [&](std::int64_t base, std::int64_t stride, std::int64_t nn) {
      double* gx = dst.v.data();
      auto scatter = [&](std::int64_t out_i, std::int64_t i0) {
        const double gv = gy[base + out_i * stride] * inv_h2;
        gx[base + i0 * stride] += gv;
        gx[base + (i0 + 1) * stride] -= 2.0 * gv;
        gx[base + (i0 + 2) * stride] += gv;
      };
      scatter(0, 0);
      for (std::int64_t i = 1; i + 1 < nn; ++i) scatter(i, i - 1);
      scatter(nn - 1, nn - 3);
    });
  });
}

Tensor field_to_tensor(const DisplacementField& d) {
  Tensor t({1, 3, d.grid.shape[2], d.grid.shape[1], d.grid.shape[0]});
  t.v = d.u;
  return t;
}

DisplacementField tensor_to_field(const Tensor& t, const Grid3& g, std::int64_t sample) {
  const std::int64_t sp = g.voxels();
  DisplacementField d(g);
  std::copy_n(t.v.begin() + sample * 3 * sp, std::size_t(3 * sp), d.u.begin());
  return d;
}

Tensor scalar_to_tensor(const std::vector<double>& values, const Grid3& g) {
  Tensor t({1, 1, g.shape[2], g.shape[1], g.shape[0]});
  t.v = values;
  return t;
}

}  // namespace adreg
