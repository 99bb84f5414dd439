#include <algorithm>
#include <cmath>

#include "tensor.hpp"

namespace symdepth {

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  auto fail = [&]() {
    throw ShapeError("matmul: incompatible shapes " + shape_str(sa) + " x " +
                     shape_str(sb));
  };
  if (sa.size() < 2 || sb.size() < 2 || sa.size() != sb.size()) fail();
  const std::size_t rank = sa.size();
  int64_t batch = 1;
  for (std::size_t d = 0; d + 2 < rank; ++d) {
    if (sa[d] != sb[d]) fail();
    batch *= sa[d];
  }
  const int64_t m = sa[rank - 2], k = sa[rank - 1];
  const int64_t k2 = sb[rank - 2], n = sb[rank - 1];
  if (k != k2) fail();

  Shape out_shape(sa.begin(), sa.end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<double> out(static_cast<std::size_t>(batch * m * n), 0.0);
  const auto& da = a.data();
  const auto& db = b.data();
  for (int64_t bi = 0; bi < batch; ++bi) {
    const double* pa = da.data() + bi * m * k;
    const double* pb = db.data() + bi * k * n;
    double* pc = out.data() + bi * m * n;
    for (int64_t i = 0; i < m; ++i)
      for (int64_t kk = 0; kk < k; ++kk) {
        const double av = pa[i * k + kk];
        if (av == 0.0) continue;
        const double* pbrow = pb + kk * n;
        double* pcrow = pc + i * n;
        for (int64_t j = 0; j < n; ++j) pcrow[j] += av * pbrow[j];
      }
  }
  Tensor result(out_shape, std::move(out));
  check_finite("matmul", result);
  auto ia = a.impl();
  auto ib = b.impl();
  auto io = result.impl();
  record_op("matmul", {a, b}, result, [ia, ib, io, batch, m, k, n]() {
    const auto& g = io->grad;
    if (ia->requires_grad) {
      auto& ga = detail::ensure_grad(*ia);
      // dA = dC . B^T
      for (int64_t bi = 0; bi < batch; ++bi) {
        const double* pg = g.data() + bi * m * n;
        const double* pb = ib->data.data() + bi * k * n;
        double* pa = ga.data() + bi * m * k;
        for (int64_t i = 0; i < m; ++i)
          for (int64_t kk = 0; kk < k; ++kk) {
            double acc = 0.0;
            for (int64_t j = 0; j < n; ++j) acc += pg[i * n + j] * pb[kk * n + j];
            pa[i * k + kk] += acc;
          }
      }
    }
    if (ib->requires_grad) {
      auto& gb = detail::ensure_grad(*ib);
      // dB = A^T . dC
      for (int64_t bi = 0; bi < batch; ++bi) {
        const double* pg = g.data() + bi * m * n;
        const double* pa = ia->data.data() + bi * m * k;
        double* pb = gb.data() + bi * k * n;
        for (int64_t i = 0; i < m; ++i)
          for (int64_t kk = 0; kk < k; ++kk) {
            const double av = pa[i * k + kk];
            if (av == 0.0) continue;
            const double* pgrow = pg + i * n;
            double* pbrow = pb + kk * n;
            for (int64_t j = 0; j < n; ++j) pbrow[j] += av * pgrow[j];
          }
      }
    }
  });
  return result;
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

Tensor softmax(const Tensor& x, int64_t axis) {
  const int64_t rank = x.rank();
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank)
    throw ValueError("softmax: axis out of range for " + shape_str(x.shape()));
  int64_t outer = 1, inner = 1;
  const int64_t ax = x.dim(axis);
  for (int64_t d = 0; d < axis; ++d) outer *= x.dim(d);
  for (int64_t d = axis + 1; d < rank; ++d) inner *= x.dim(d);

  const auto& dx = x.data();
  std::vector<double> out(dx.size());
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      const int64_t base = o * ax * inner + i;
      double mx = dx[static_cast<std::size_t>(base)];
      for (int64_t a = 1; a < ax; ++a)
        mx = std::max(mx, dx[static_cast<std::size_t>(base + a * inner)]);
      double denom = 0.0;
      for (int64_t a = 0; a < ax; ++a) {
        const double e = std::exp(dx[static_cast<std::size_t>(base + a * inner)] - mx);
        out[static_cast<std::size_t>(base + a * inner)] = e;
        denom += e;
      }
      for (int64_t a = 0; a < ax; ++a)
        out[static_cast<std::size_t>(base + a * inner)] /= denom;
    }
  Tensor result(x.shape(), std::move(out));
  check_finite("softmax", result);
  auto ix = x.impl();
  auto io = result.impl();
  record_op("softmax", {x}, result, [ix, io, outer, inner, ax]() {
    if (!ix->requires_grad) return;
    auto& gx = detail::ensure_grad(*ix);
    const auto& y = io->data;
    const auto& gy = io->grad;
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t i = 0; i < inner; ++i) {
        const int64_t base = o * ax * inner + i;
        double dot = 0.0;
        for (int64_t a = 0; a < ax; ++a) {
          const std::size_t p = static_cast<std::size_t>(base + a * inner);
          dot += gy[p] * y[p];
        }
        for (int64_t a = 0; a < ax; ++a) {
          const std::size_t p = static_cast<std::size_t>(base + a * inner);
          gx[p] += y[p] * (gy[p] - dot);
        }
      }
  });
  return result;
}

// ---------------------------------------------------------------------------
// layer norm (over the last axis)
// ---------------------------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (eps <= 0.0) throw ValueError("layer_norm: eps must be positive");
  const int64_t c = x.dim(-1);
  if (gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != c || beta.dim(0) != c)
    throw ShapeError("layer_norm: gamma/beta must have shape [" + std::to_string(c) +
                     "], got " + shape_str(gamma.shape()) + " and " +
                     shape_str(beta.shape()));
  const int64_t rows = x.size() / c;
  const auto& dx = x.data();
  const auto& dg = gamma.data();
  const auto& db = beta.data();
  std::vector<double> out(dx.size());
  auto xhat = std::make_shared<std::vector<double>>(dx.size());
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const double* px = dx.data() + r * c;
    double mu = 0.0;
    for (int64_t i = 0; i < c; ++i) mu += px[i];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (int64_t i = 0; i < c; ++i) var += (px[i] - mu) * (px[i] - mu);
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(r)] = inv;
    for (int64_t i = 0; i < c; ++i) {
      const double xh = (px[i] - mu) * inv;
      (*xhat)[static_cast<std::size_t>(r * c + i)] = xh;
      out[static_cast<std::size_t>(r * c + i)] = dg[static_cast<std::size_t>(i)] * xh +
                                                 db[static_cast<std::size_t>(i)];
    }
  }
  Tensor result(x.shape(), std::move(out));
  check_finite("layer_norm", result);
  auto ix = x.impl();
  auto ig = gamma.impl();
  auto ib = beta.impl();
  auto io = result.impl();
  record_op("layer_norm", {x, gamma, beta}, result, [ix, ig, ib, io, xhat, inv_std, rows, c]() {
    const auto& gy = io->grad;
    if (ig->requires_grad) {
      auto& gg = detail::ensure_grad(*ig);
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t i = 0; i < c; ++i)
          gg[static_cast<std::size_t>(i)] +=
              gy[static_cast<std::size_t>(r * c + i)] * (*xhat)[static_cast<std::size_t>(r * c + i)];
    }
    if (ib->requires_grad) {
      auto& gb = detail::ensure_grad(*ib);
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t i = 0; i < c; ++i)
          gb[static_cast<std::size_t>(i)] += gy[static_cast<std::size_t>(r * c + i)];
    }
    if (ix->requires_grad) {
      auto& gx = detail::ensure_grad(*ix);
      const auto& dgamma = ig->data;
      for (int64_t r = 0; r < rows; ++r) {
        const double inv = (*inv_std)[static_cast<std::size_t>(r)];
        double sum_dxh = 0.0, sum_dxh_xh = 0.0;
        for (int64_t i = 0; i < c; ++i) {
          const std::size_t p = static_cast<std::size_t>(r * c + i);
          const double dxh = gy[p] * dgamma[static_cast<std::size_t>(i)];
          sum_dxh += dxh;
          sum_dxh_xh += dxh * (*xhat)[p];
        }
        const double cn = static_cast<double>(c);
        for (int64_t i = 0; i < c; ++i) {
          const std::size_t p = static_cast<std::size_t>(r * c + i);
          const double dxh = gy[p] * dgamma[static_cast<std::size_t>(i)];
          gx[p] += inv * (dxh - sum_dxh / cn - (*xhat)[p] * sum_dxh_xh / cn);
        }
      }
    }
  });
  return result;
}

// ---------------------------------------------------------------------------
// conv2d (NHWC, cross-correlation)
// ---------------------------------------------------------------------------

namespace {

struct ConvGeometry {
  int64_t b, h, w, cin, kh, kw, cg, cout;  // cg = Cin/groups
  int64_t out_h, out_w, pad_top, pad_left;
  int64_t groups, cout_g;  // cout per group
};

ConvGeometry conv_geometry(const Tensor& x, const Tensor& kernel, int64_t stride,
                           Padding padding, int64_t groups) {
  if (x.rank() != 4) throw ShapeError("conv2d: input must be [B,H,W,C], got " + shape_str(x.shape()));
  if (kernel.rank() != 4)
    throw ShapeError("conv2d: kernel must be [kh,kw,Cin/groups,Cout], got " +
                     shape_str(kernel.shape()));
  if (stride < 1) throw ValueError("conv2d: stride must be >= 1");
  if (groups < 1) throw ValueError("conv2d: groups must be >= 1");
  ConvGeometry g;
  g.b = x.dim(0); g.h = x.dim(1); g.w = x.dim(2); g.cin = x.dim(3);
  g.kh = kernel.dim(0); g.kw = kernel.dim(1); g.cg = kernel.dim(2); g.cout = kernel.dim(3);
  g.groups = groups;
  if (g.cin % groups != 0)
    throw ValueError("conv2d: input channels " + std::to_string(g.cin) +
                     " not divisible by groups " + std::to_string(groups));
  if (g.cout % groups != 0)
    throw ValueError("conv2d: output channels " + std::to_string(g.cout) +
                     " not divisible by groups " + std::to_string(groups));
  if (g.cg != g.cin / groups)
    throw ShapeError("conv2d: kernel channel dim " + std::to_string(g.cg) +
                     " != Cin/groups = " + std::to_string(g.cin / groups));
  g.cout_g = g.cout / groups;
  if (padding == Padding::Same) {
    if (g.kh % 2 == 0 || g.kw % 2 == 0)
      throw ValueError("conv2d: 'same' padding requires odd kernel dims");
    g.out_h = (g.h + stride - 1) / stride;
    g.out_w = (g.w + stride - 1) / stride;
    const int64_t pad_h = std::max<int64_t>((g.out_h - 1) * stride + g.kh - g.h, 0);
    const int64_t pad_w = std::max<int64_t>((g.out_w - 1) * stride + g.kw - g.w, 0);
    g.pad_top = pad_h / 2;
    g.pad_left = pad_w / 2;
  } else {
    if (g.h < g.kh || g.w < g.kw)
      throw ShapeError("conv2d: 'valid' padding needs input >= kernel, got " +
                       shape_str(x.shape()) + " vs " + shape_str(kernel.shape()));
    g.out_h = (g.h - g.kh) / stride + 1;
    g.out_w = (g.w - g.kw) / stride + 1;
    g.pad_top = 0;
    g.pad_left = 0;
  }
  return g;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel, int64_t stride, Padding padding,
              int64_t groups) {
  const ConvGeometry g = conv_geometry(x, kernel, stride, padding, groups);
  std::vector<double> out(static_cast<std::size_t>(g.b * g.out_h * g.out_w * g.cout), 0.0);
  const auto& dx = x.data();
  const auto& dk = kernel.data();
  for (int64_t b = 0; b < g.b; ++b)
    for (int64_t oy = 0; oy < g.out_h; ++oy)
      for (int64_t ox = 0; ox < g.out_w; ++ox)
        for (int64_t co = 0; co < g.cout; ++co) {
          const int64_t grp = co / g.cout_g;
          double acc = 0.0;
          for (int64_t ky = 0; ky < g.kh; ++ky) {
            const int64_t iy = oy * stride - g.pad_top + ky;
            if (iy < 0 || iy >= g.h) continue;
            for (int64_t kx = 0; kx < g.kw; ++kx) {
              const int64_t ix = ox * stride - g.pad_left + kx;
              if (ix < 0 || ix >= g.w) continue;
              const double* px = dx.data() + ((b * g.h + iy) * g.w + ix) * g.cin + grp * g.cg;
              const double* pk = dk.data() + ((ky * g.kw + kx) * g.cg) * g.cout + co;
              for (int64_t ci = 0; ci < g.cg; ++ci) acc += px[ci] * pk[ci * g.cout];
            }
          }
          out[static_cast<std::size_t>(((b * g.out_h + oy) * g.out_w + ox) * g.cout + co)] = acc;
        }
  Shape out_shape{g.b, g.out_h, g.out_w, g.cout};
  Tensor result(out_shape, std::move(out));
  check_finite("conv2d", result);
  auto ix = x.impl();
  auto ik = kernel.impl();
  auto io = result.impl();
  record_op("conv2d", {x, kernel}, result, [ix, ik, io, g, stride]() {
    const auto& gy = io->grad;
    const bool want_x = ix->requires_grad;
    const bool want_k = ik->requires_grad;
    auto* gx = want_x ? &detail::ensure_grad(*ix) : nullptr;
    auto* gk = want_k ? &detail::ensure_grad(*ik) : nullptr;
    for (int64_t b = 0; b < g.b; ++b)
      for (int64_t oy = 0; oy < g.out_h; ++oy)
        for (int64_t ox = 0; ox < g.out_w; ++ox)
          for (int64_t co = 0; co < g.cout; ++co) {
            const double go =
                gy[static_cast<std::size_t>(((b * g.out_h + oy) * g.out_w + ox) * g.cout + co)];
            if (go == 0.0) continue;
            const int64_t grp = co / g.cout_g;
            for (int64_t ky = 0; ky < g.kh; ++ky) {
              const int64_t iy = oy * stride - g.pad_top + ky;
              if (iy < 0 || iy >= g.h) continue;
              for (int64_t kx = 0; kx < g.kw; ++kx) {
                const int64_t ix_ = ox * stride - g.pad_left + kx;
                if (ix_ < 0 || ix_ >= g.w) continue;
                const int64_t xbase = ((b * g.h + iy) * g.w + ix_) * g.cin + grp * g.cg;
                const int64_t kbase = ((ky * g.kw + kx) * g.cg) * g.cout + co;
                for (int64_t ci = 0; ci < g.cg; ++ci) {
                  if (gx) (*gx)[static_cast<std::size_t>(xbase + ci)] +=
                      go * ik->data[static_cast<std::size_t>(kbase + ci * g.cout)];
                  if (gk) (*gk)[static_cast<std::size_t>(kbase + ci * g.cout)] +=
                      go * ix->data[static_cast<std::size_t>(xbase + ci)];
                }
              }
            }
          }
  });
  return result;
}

// ---------------------------------------------------------------------------
// bilinear upsampling (align_corners=false)
// ---------------------------------------------------------------------------

namespace {

struct LerpCoeff {
  int64_t lo, hi;
  double w_hi;  // weight of hi; lo gets 1 - w_hi
};

std::vector<LerpCoeff> lerp_table(int64_t in, int64_t scale) {
  std::vector<LerpCoeff> t(static_cast<std::size_t>(in * scale));
  for (int64_t o = 0; o < in * scale; ++o) {
    double src = (static_cast<double>(o) + 0.5) / static_cast<double>(scale) - 0.5;
    if (src < 0.0) src = 0.0;
    int64_t lo = static_cast<int64_t>(src);
    if (lo > in - 1) lo = in - 1;
    const int64_t hi = std::min<int64_t>(lo + 1, in - 1);
    t[static_cast<std::size_t>(o)] = {lo, hi, src - static_cast<double>(lo)};
  }
  return t;
}

}  // namespace

Tensor upsample_bilinear(const Tensor& x, int64_t scale) {
  if (scale != 2 && scale != 4)
    throw ValueError("upsample_bilinear: unsupported scale " + std::to_string(scale));
  if (x.rank() != 4)
    throw ShapeError("upsample_bilinear: input must be [B,H,W,C], got " + shape_str(x.shape()));
  const int64_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const int64_t oh = h * scale, ow = w * scale;
  const auto ty = lerp_table(h, scale);
  const auto tx = lerp_table(w, scale);
  const auto& dx = x.data();
  std::vector<double> out(static_cast<std::size_t>(b * oh * ow * c));
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t oy = 0; oy < oh; ++oy) {
      const auto& cy = ty[static_cast<std::size_t>(oy)];
      for (int64_t ox = 0; ox < ow; ++ox) {
        const auto& cx = tx[static_cast<std::size_t>(ox)];
        const double w00 = (1.0 - cy.w_hi) * (1.0 - cx.w_hi);
        const double w01 = (1.0 - cy.w_hi) * cx.w_hi;
        const double w10 = cy.w_hi * (1.0 - cx.w_hi);
        const double w11 = cy.w_hi * cx.w_hi;
        const double* p00 = dx.data() + ((bi * h + cy.lo) * w + cx.lo) * c;
        const double* p01 = dx.data() + ((bi * h + cy.lo) * w + cx.hi) * c;
        const double* p10 = dx.data() + ((bi * h + cy.hi) * w + cx.lo) * c;
        const double* p11 = dx.data() + ((bi * h + cy.hi) * w + cx.hi) * c;
        double* po = out.data() + ((bi * oh + oy) * ow + ox) * c;
        for (int64_t ci = 0; ci < c; ++ci)
          po[ci] = w00 * p00[ci] + w01 * p01[ci] + w10 * p10[ci] + w11 * p11[ci];
      }
    }
  Tensor result(Shape{b, oh, ow, c}, std::move(out));
  check_finite("upsample_bilinear", result);
  auto ix = x.impl();
  auto io = result.impl();
  record_op("upsample_bilinear", {x}, result, [ix, io, ty, tx, b, h, w, c, oh, ow]() {
    if (!ix->requires_grad) return;
    auto& gx = detail::ensure_grad(*ix);
    const auto& gy = io->grad;
    for (int64_t bi = 0; bi < b; ++bi)
      for (int64_t oy = 0; oy < oh; ++oy) {
        const auto& cy = ty[static_cast<std::size_t>(oy)];
        for (int64_t ox = 0; ox < ow; ++ox) {
          const auto& cx = tx[static_cast<std::size_t>(ox)];
          const double w00 = (1.0 - cy.w_hi) * (1.0 - cx.w_hi);
          const double w01 = (1.0 - cy.w_hi) * cx.w_hi;
          const double w10 = cy.w_hi * (1.0 - cx.w_hi);
          const double w11 = cy.w_hi * cx.w_hi;
          const double* pg = gy.data() + ((bi * oh + oy) * ow + ox) * c;
          double* p00 = gx.data() + ((bi * h + cy.lo) * w + cx.lo) * c;
          double* p01 = gx.data() + ((bi * h + cy.lo) * w + cx.hi) * c;
          double* p10 = gx.data() + ((bi * h + cy.hi) * w + cx.lo) * c;
          double* p11 = gx.data() + ((bi * h + cy.hi) * w + cx.hi) * c;
          for (int64_t ci = 0; ci < c; ++ci) {
            p00[ci] += w00 * pg[ci];
            p01[ci] += w01 * pg[ci];
            p10[ci] += w10 * pg[ci];
            p11[ci] += w11 * pg[ci];
          }
        }
      }
  });
  return result;
}

}  // namespace symdepth
