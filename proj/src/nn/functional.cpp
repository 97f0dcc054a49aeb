#include "yynet/nn/functional.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "yynet/errors.hpp"
#include "yynet/linalg.hpp"
#include "yynet/simd/kernels.hpp"

namespace yynet::nn {

using linalg::Trans;

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                            std::size_t padding) {
  if (stride == 0) throw ShapeError("conv stride must be positive");
  if (in + 2 * padding < kernel) {
    throw ShapeError("conv kernel " + std::to_string(kernel) + " larger than padded input " +
                     std::to_string(in + 2 * padding));
  }
  return (in + 2 * padding - kernel) / stride + 1;
}

namespace {

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, kh, kw, ho, wo, stride, pad, groups;
  std::size_t cin_g() const { return cin / groups; }
  std::size_t cout_g() const { return cout / groups; }
  std::size_t patch() const { return cin_g() * kh * kw; }
  std::size_t out_plane() const { return ho * wo; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
  bool depthwise() const { return groups == cin && groups == cout && groups > 1; }
};

template <class Real>
ConvGeometry conv_geometry(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias,
                           const ConvOptions& opt) {
  if (x.shape().rank() != 4) throw ShapeError("conv2d: input must be NCHW, got " + x.shape().to_string());
  if (weight.shape().rank() != 4) throw ShapeError("conv2d: weight must be rank 4");
  ConvGeometry g{};
  g.n = x.dim(0);
  g.cin = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.cout = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.stride = opt.stride;
  g.pad = opt.padding;
  g.groups = opt.groups;
  if (g.groups == 0 || g.cin % g.groups != 0 || g.cout % g.groups != 0) {
    throw ShapeError("conv2d: channels " + std::to_string(g.cin) + "->" + std::to_string(g.cout) +
                     " not divisible by groups " + std::to_string(g.groups));
  }
  if (weight.dim(1) * g.groups != g.cin) {
    throw ShapeError("conv2d: input has " + std::to_string(g.cin) + " channels, weight expects " +
                     std::to_string(weight.dim(1) * g.groups));
  }
  if (bias.defined() && (bias.shape().rank() != 1 || bias.dim(0) != g.cout)) {
    throw ShapeError("conv2d: bias shape " + bias.shape().to_string());
  }
  g.ho = conv_out_extent(g.h, g.kh, g.stride, g.pad);
  g.wo = conv_out_extent(g.w, g.kw, g.stride, g.pad);
  return g;
}

// cols[(c*kh + ky)*kw + kx][ho*wo_ + wo] = x[c][ho*s - p + ky][wo*s - p + kx]
template <class Real>
void im2col(const ConvGeometry& g, const Real* x, Real* cols) {
  const std::size_t plane = g.out_plane();
  for (std::size_t c = 0; c < g.cin_g(); ++c) {
    const Real* xc = x + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        Real* row = cols + ((c * g.kh + ky) * g.kw + kx) * plane;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          Real* dst = row + oy * g.wo;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(dst, dst + g.wo, Real(0));
            continue;
          }
          const Real* src = xc + static_cast<std::size_t>(iy) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? Real(0) : src[ix];
          }
        }
      }
    }
  }
}

template <class Real>
void col2im_add(const ConvGeometry& g, const Real* cols, Real* x) {
  const std::size_t plane = g.out_plane();
  for (std::size_t c = 0; c < g.cin_g(); ++c) {
    Real* xc = x + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const Real* row = cols + ((c * g.kh + ky) * g.kw + kx) * plane;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          Real* dst = xc + static_cast<std::size_t>(iy) * g.w;
          const Real* src = row + oy * g.wo;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// Range of output columns whose input column ox*s - p + kx lies in [0, w).
struct ColRange {
  std::size_t lo, hi;  // [lo, hi)
};

ColRange valid_cols(const ConvGeometry& g, std::size_t kx) {
  const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(g.stride);
  const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(g.pad);
  // smallest ox with ox*s + off >= 0
  std::ptrdiff_t lo = off >= 0 ? 0 : (-off + s - 1) / s;
  // largest ox with ox*s + off <= w-1
  const std::ptrdiff_t top = static_cast<std::ptrdiff_t>(g.w) - 1 - off;
  std::ptrdiff_t hi = top < 0 ? 0 : top / s + 1;
  hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(g.wo));
  lo = std::min(lo, hi);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

template <class Real>
void depthwise_forward(const ConvGeometry& g, const Real* x, const Real* w, Real* out) {
  const auto& k = simd::kernels<Real>();
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t c = 0; c < g.cin; ++c) {
      const Real* xc = x + (n * g.cin + c) * g.h * g.w;
      Real* oc = out + (n * g.cout + c) * g.out_plane();
      const Real* wc = w + c * g.kh * g.kw;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const Real wv = wc[ky * g.kw + kx];
          const ColRange cr = valid_cols(g, kx);
          if (cr.lo >= cr.hi) continue;
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
            const Real* src = xc + static_cast<std::size_t>(iy) * g.w;
            Real* dst = oc + oy * g.wo;
            const std::size_t ix0 = cr.lo * g.stride + kx - g.pad;
            if (g.stride == 1) {
              k.axpy(cr.hi - cr.lo, wv, src + ix0, dst + cr.lo);
            } else {
              for (std::size_t ox = cr.lo, ix = ix0; ox < cr.hi; ++ox, ix += g.stride) dst[ox] += wv * src[ix];
            }
          }
        }
      }
    }
  }
}

template <class Real>
void depthwise_backward(const ConvGeometry& g, const Real* x, const Real* w, const Real* gout,
                        Real* gx, Real* gw) {
  const auto& k = simd::kernels<Real>();
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t c = 0; c < g.cin; ++c) {
      const Real* xc = x + (n * g.cin + c) * g.h * g.w;
      const Real* goc = gout + (n * g.cout + c) * g.out_plane();
      Real* gxc = gx ? gx + (n * g.cin + c) * g.h * g.w : nullptr;
      const Real* wc = w + c * g.kh * g.kw;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const Real wv = wc[ky * g.kw + kx];
          const ColRange cr = valid_cols(g, kx);
          if (cr.lo >= cr.hi) continue;
          Real wacc = 0;
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
            const std::size_t row = static_cast<std::size_t>(iy) * g.w;
            const Real* grow = goc + oy * g.wo;
            const std::size_t ix0 = cr.lo * g.stride + kx - g.pad;
            if (g.stride == 1) {
              if (gw) wacc += k.dot(cr.hi - cr.lo, grow + cr.lo, xc + row + ix0);
              if (gxc) k.axpy(cr.hi - cr.lo, wv, grow + cr.lo, gxc + row + ix0);
            } else {
              for (std::size_t ox = cr.lo, ix = ix0; ox < cr.hi; ++ox, ix += g.stride) {
                if (gw) wacc += grow[ox] * xc[row + ix];
                if (gxc) gxc[row + ix] += wv * grow[ox];
              }
            }
          }
          if (gw) gw[c * g.kh * g.kw + ky * g.kw + kx] += wacc;
        }
      }
    }
  }
}

}  // namespace

template <class Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias,
                    const ConvOptions& opt) {
  const ConvGeometry g = conv_geometry(x, weight, bias, opt);
  // The depthwise path accumulates into its output; gemm overwrites.
  Tensor<Real> out = g.depthwise() ? Tensor<Real>(Shape{g.n, g.cout, g.ho, g.wo})
                                   : Tensor<Real>::uninitialized(Shape{g.n, g.cout, g.ho, g.wo});
  Real* po = out.mutable_data().data();
  const Real* px = x.data().data();
  const Real* pw = weight.data().data();
  const std::size_t plane = g.out_plane();

  if (g.depthwise()) {
    depthwise_forward(g, px, pw, po);
  } else {
    std::vector<Real> cols(g.pointwise() ? 0 : g.patch() * plane);
    for (std::size_t n = 0; n < g.n; ++n) {
      for (std::size_t grp = 0; grp < g.groups; ++grp) {
        const Real* xin = px + (n * g.cin + grp * g.cin_g()) * g.h * g.w;
        const Real* b = xin;
        if (!g.pointwise()) {
          im2col(g, xin, cols.data());
          b = cols.data();
        }
        simd::kernels<Real>().gemm(g.cout_g(), plane, g.patch(), pw + grp * g.cout_g() * g.patch(),
                                   g.patch(), b, plane, po + (n * g.cout + grp * g.cout_g()) * plane,
                                   plane, false);
      }
    }
  }
  if (bias.defined()) {
    const Real* pb = bias.data().data();
    for (std::size_t n = 0; n < g.n; ++n)
      for (std::size_t c = 0; c < g.cout; ++c) {
        Real* oc = po + (n * g.cout + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) oc[i] += pb[c];
      }
  }

  if (auto* tape = detail::recording_tape({&x, &weight, &bias})) {
    tape->record(out, [g, xi = x.impl(), wi = weight.impl(),
                       bi = bias.defined() ? bias.impl() : nullptr](std::span<const Real> gout) {
      const std::size_t plane = g.out_plane();
      const Real* go = gout.data();
      Real* gx = xi->requires_grad ? detail::grad_slot(xi).data() : nullptr;
      Real* gw = wi->requires_grad ? detail::grad_slot(wi).data() : nullptr;
      if (bi && bi->requires_grad) {
        Real* gb = detail::grad_slot(bi).data();
        const auto& k = simd::kernels<Real>();
        for (std::size_t n = 0; n < g.n; ++n)
          for (std::size_t c = 0; c < g.cout; ++c) gb[c] += k.sum(plane, go + (n * g.cout + c) * plane);
      }
      if (!gx && !gw) return;
      if (g.depthwise()) {
        depthwise_backward(g, xi->data.data(), wi->data.data(), go, gx, gw);
        return;
      }
      std::vector<Real> cols(g.pointwise() ? 0 : g.patch() * plane);
      std::vector<Real> dcols(gx && !g.pointwise() ? g.patch() * plane : 0);
      for (std::size_t n = 0; n < g.n; ++n) {
        for (std::size_t grp = 0; grp < g.groups; ++grp) {
          const Real* xin = xi->data.data() + (n * g.cin + grp * g.cin_g()) * g.h * g.w;
          const Real* gon = go + (n * g.cout + grp * g.cout_g()) * plane;
          const Real* wg = wi->data.data() + grp * g.cout_g() * g.patch();
          if (gw) {
            const Real* b = xin;
            if (!g.pointwise()) {
              im2col(g, xin, cols.data());
              b = cols.data();
            }
            linalg::gemm(Trans::kNo, Trans::kYes, g.cout_g(), g.patch(), plane, gon, b,
                         gw + grp * g.cout_g() * g.patch(), true);
          }
          if (gx) {
            Real* gxn = gx + (n * g.cin + grp * g.cin_g()) * g.h * g.w;
            if (g.pointwise()) {
              linalg::gemm(Trans::kYes, Trans::kNo, g.patch(), plane, g.cout_g(), wg, gon, gxn, true);
            } else {
              linalg::gemm(Trans::kYes, Trans::kNo, g.patch(), plane, g.cout_g(), wg, gon,
                           dcols.data(), false);
              col2im_add(g, dcols.data(), gxn);
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> batch_norm2d(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta,
                          Tensor<Real>& running_mean, Tensor<Real>& running_var,
                          const BatchNormOptions& opt) {
  if (x.shape().rank() != 4) throw ShapeError("batch_norm2d: input must be NCHW");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  for (const Tensor<Real>* t : {&gamma, &beta, static_cast<const Tensor<Real>*>(&running_mean),
                                static_cast<const Tensor<Real>*>(&running_var)}) {
    if (t->numel() != c) {
      throw ShapeError("batch_norm2d: expected " + std::to_string(c) + " channels, parameter has " +
                       std::to_string(t->numel()));
    }
  }
  const std::size_t count = n * plane;
  std::vector<Real> mean(c), invstd(c);
  const Real* px = x.data().data();
  const auto& k = simd::kernels<Real>();

  if (opt.training) {
    auto rm = running_mean.mutable_data();
    auto rv = running_var.mutable_data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      Real s = 0;
      for (std::size_t b = 0; b < n; ++b) s += k.sum(plane, px + (b * c + ch) * plane);
      const Real mu = s / static_cast<Real>(count);
      Real ss = 0;
      for (std::size_t b = 0; b < n; ++b) {
        const Real* p = px + (b * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const Real d = p[i] - mu;
          ss += d * d;
        }
      }
      const Real var = ss / static_cast<Real>(count);
      mean[ch] = mu;
      invstd[ch] = Real(1) / std::sqrt(var + static_cast<Real>(opt.eps));
      const Real unbiased = count > 1 ? ss / static_cast<Real>(count - 1) : var;
      const Real m = static_cast<Real>(opt.momentum);
      rm[ch] = (Real(1) - m) * rm[ch] + m * mu;
      rv[ch] = (Real(1) - m) * rv[ch] + m * unbiased;
    }
  } else {
    const auto rm = running_mean.data();
    const auto rv = running_var.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = rm[ch];
      invstd[ch] = Real(1) / std::sqrt(rv[ch] + static_cast<Real>(opt.eps));
    }
  }

  auto out = Tensor<Real>::uninitialized(x.shape());
  Real* po = out.mutable_data().data();
  const auto pg = gamma.data();
  const auto pb = beta.data();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const Real a = pg[ch] * invstd[ch];
      k.affine(plane, a, pb[ch] - a * mean[ch], px + (b * c + ch) * plane, po + (b * c + ch) * plane);
    }
  }

  if (auto* tape = detail::recording_tape({&x, &gamma, &beta})) {
    tape->record(out, [xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), mean = std::move(mean),
                       invstd = std::move(invstd), training = opt.training, n, c,
                       plane](std::span<const Real> gout) {
      const auto& k = simd::kernels<Real>();
      const Real* px = xi->data.data();
      const Real* go = gout.data();
      const std::size_t count = n * plane;
      std::vector<Real> xhat(plane);
      for (std::size_t ch = 0; ch < c; ++ch) {
        // sum(g) and sum(g * xhat) over the channel
        Real sum_g = 0, sum_gx = 0;
        for (std::size_t b = 0; b < n; ++b) {
          const Real* p = px + (b * c + ch) * plane;
          const Real* gp = go + (b * c + ch) * plane;
          k.affine(plane, invstd[ch], -mean[ch] * invstd[ch], p, xhat.data());
          sum_g += k.sum(plane, gp);
          sum_gx += k.dot(plane, gp, xhat.data());
        }
        if (gi->requires_grad) detail::grad_slot(gi)[ch] += sum_gx;
        if (bi->requires_grad) detail::grad_slot(bi)[ch] += sum_g;
        if (!xi->requires_grad) continue;
        Real* gx = detail::grad_slot(xi).data();
        const Real scale = gi->data[ch] * invstd[ch];
        if (training) {
          const Real mg = sum_g / static_cast<Real>(count);
          const Real mgx = sum_gx / static_cast<Real>(count);
          for (std::size_t b = 0; b < n; ++b) {
            const Real* p = px + (b * c + ch) * plane;
            const Real* gp = go + (b * c + ch) * plane;
            Real* dst = gx + (b * c + ch) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              const Real xh = (p[i] - mean[ch]) * invstd[ch];
              dst[i] += scale * (gp[i] - mg - xh * mgx);
            }
          }
        } else {
          for (std::size_t b = 0; b < n; ++b) {
            k.axpy(plane, scale, go + (b * c + ch) * plane, gx + (b * c + ch) * plane);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> linear(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias) {
  if (x.shape().rank() != 2 || weight.shape().rank() != 2 || x.dim(1) != weight.dim(1)) {
    throw ShapeError("linear: input " + x.shape().to_string() + " vs weight " +
                     weight.shape().to_string());
  }
  const std::size_t n = x.dim(0), in = x.dim(1), outf = weight.dim(0);
  if (bias.defined() && bias.numel() != outf) throw ShapeError("linear: bias size mismatch");
  auto out = Tensor<Real>::uninitialized(Shape{n, outf});
  Real* po = out.mutable_data().data();
  linalg::gemm(Trans::kNo, Trans::kYes, n, outf, in, x.data().data(), weight.data().data(), po, false);
  if (bias.defined()) {
    const Real* pb = bias.data().data();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < outf; ++j) po[i * outf + j] += pb[j];
  }
  if (auto* tape = detail::recording_tape({&x, &weight, &bias})) {
    tape->record(out, [xi = x.impl(), wi = weight.impl(), bi = bias.defined() ? bias.impl() : nullptr,
                       n, in, outf](std::span<const Real> g) {
      if (xi->requires_grad) {
        linalg::gemm(Trans::kNo, Trans::kNo, n, in, outf, g.data(), wi->data.data(),
                     detail::grad_slot(xi).data(), true);
      }
      if (wi->requires_grad) {
        linalg::gemm(Trans::kYes, Trans::kNo, outf, in, n, g.data(), xi->data.data(),
                     detail::grad_slot(wi).data(), true);
      }
      if (bi && bi->requires_grad) {
        auto gb = detail::grad_slot(bi);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < outf; ++j) gb[j] += g[i * outf + j];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Activations

template <class Real>
Tensor<Real> gelu(const Tensor<Real>& x) {
  auto out = Tensor<Real>::uninitialized(x.shape());
  simd::kernels<Real>().gelu(x.numel(), x.data().data(), out.mutable_data().data());
  if (auto* tape = detail::recording_tape({&x})) {
    tape->record(out, [xi = x.impl()](std::span<const Real> g) {
      simd::kernels<Real>().gelu_backward(g.size(), xi->data.data(), g.data(),
                                          detail::grad_slot(xi).data());
    });
  }
  return out;
}

template <class Real>
Tensor<Real> relu(const Tensor<Real>& x) {
  auto out = Tensor<Real>::uninitialized(x.shape());
  auto po = out.mutable_data();
  const auto px = x.data();
  for (std::size_t i = 0; i < px.size(); ++i) po[i] = px[i] > Real(0) ? px[i] : Real(0);
  if (auto* tape = detail::recording_tape({&x})) {
    tape->record(out, [xi = x.impl()](std::span<const Real> g) {
      auto gx = detail::grad_slot(xi);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (xi->data[i] > Real(0)) gx[i] += g[i];
    });
  }
  return out;
}

template <class Real>
Tensor<Real> sigmoid(const Tensor<Real>& x) {
  auto out = Tensor<Real>::uninitialized(x.shape());
  auto po = out.mutable_data();
  const auto px = x.data();
  for (std::size_t i = 0; i < px.size(); ++i) po[i] = Real(1) / (Real(1) + std::exp(-px[i]));
  if (auto* tape = detail::recording_tape({&x})) {
    tape->record(out, [xi = x.impl(), oi = out.impl()](std::span<const Real> g) {
      auto gx = detail::grad_slot(xi);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const Real s = oi->data[i];
        gx[i] += g[i] * s * (Real(1) - s);
      }
    });
  }
  return out;
}

template <class Real>
Tensor<Real> hard_sigmoid(const Tensor<Real>& x) {
  auto out = Tensor<Real>::uninitialized(x.shape());
  auto po = out.mutable_data();
  const auto px = x.data();
  for (std::size_t i = 0; i < px.size(); ++i) po[i] = std::clamp(px[i] + Real(3), Real(0), Real(6)) / Real(6);
  if (auto* tape = detail::recording_tape({&x})) {
    tape->record(out, [xi = x.impl()](std::span<const Real> g) {
      auto gx = detail::grad_slot(xi);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const Real v = xi->data[i];
        if (v > Real(-3) && v < Real(3)) gx[i] += g[i] / Real(6);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pooling and channel ops

template <class Real>
Tensor<Real> global_avg_pool(const Tensor<Real>& x) {
  if (x.shape().rank() != 4) throw ShapeError("global_avg_pool: input must be NCHW");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<Real> out(Shape{n, c});
  auto po = out.mutable_data();
  const auto& k = simd::kernels<Real>();
  const Real inv = Real(1) / static_cast<Real>(plane);
  for (std::size_t i = 0; i < n * c; ++i) po[i] = k.sum(plane, x.data().data() + i * plane) * inv;
  if (auto* tape = detail::recording_tape({&x})) {
    tape->record(out, [xi = x.impl(), n, c, plane, inv](std::span<const Real> g) {
      auto gx = detail::grad_slot(xi);
      for (std::size_t i = 0; i < n * c; ++i) {
        const Real v = g[i] * inv;
        Real* dst = gx.data() + i * plane;
        for (std::size_t j = 0; j < plane; ++j) dst[j] += v;
      }
    });
  }
  return out;
}

template <class Real>
Tensor<Real> channel_scale(const Tensor<Real>& x, const Tensor<Real>& s) {
  if (x.shape().rank() != 4 || s.shape().rank() != 2 || s.dim(0) != x.dim(0) || s.dim(1) != x.dim(1)) {
    throw ShapeError("channel_scale: " + x.shape().to_string() + " by " + s.shape().to_string());
  }
  const std::size_t nc = x.dim(0) * x.dim(1), plane = x.dim(2) * x.dim(3);
  auto out = Tensor<Real>::uninitialized(x.shape());
  const auto& k = simd::kernels<Real>();
  for (std::size_t i = 0; i < nc; ++i) {
    k.affine(plane, s.data()[i], Real(0), x.data().data() + i * plane, out.mutable_data().data() + i * plane);
  }
  if (auto* tape = detail::recording_tape({&x, &s})) {
    tape->record(out, [xi = x.impl(), si = s.impl(), nc, plane](std::span<const Real> g) {
      const auto& k = simd::kernels<Real>();
      Real* gx = xi->requires_grad ? detail::grad_slot(xi).data() : nullptr;
      Real* gs = si->requires_grad ? detail::grad_slot(si).data() : nullptr;
      for (std::size_t i = 0; i < nc; ++i) {
        const Real* gp = g.data() + i * plane;
        if (gx) k.axpy(plane, si->data[i], gp, gx + i * plane);
        if (gs) gs[i] += k.dot(plane, gp, xi->data.data() + i * plane);
      }
    });
  }
  return out;
}

template <class Real>
Tensor<Real> dropout(const Tensor<Real>& x, double p, bool training, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout rate must lie in [0, 1)");
  if (!training || p == 0.0) return x;
  const Real keep_scale = static_cast<Real>(1.0 / (1.0 - p));
  std::vector<Real> mask(x.numel());
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (auto& m : mask) m = uni(rng) < p ? Real(0) : keep_scale;
  auto out = Tensor<Real>::uninitialized(x.shape());
  simd::kernels<Real>().mul(x.numel(), x.data().data(), mask.data(), out.mutable_data().data());
  if (auto* tape = detail::recording_tape({&x})) {
    tape->record(out, [xi = x.impl(), mask = std::move(mask)](std::span<const Real> g) {
      simd::kernels<Real>().mul_acc(g.size(), g.data(), mask.data(), detail::grad_slot(xi).data());
    });
  }
  return out;
}

template <class Real>
Tensor<Real> softmax_cross_entropy(const Tensor<Real>& logits, std::span<const std::int32_t> labels) {
  if (logits.shape().rank() != 2) throw ShapeError("softmax_cross_entropy: logits must be (N,K)");
  const std::size_t n = logits.dim(0), kcls = logits.dim(1);
  if (labels.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  }
  for (auto l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= kcls) {
      throw DataError("label " + std::to_string(l) + " outside [0," + std::to_string(kcls) + ")");
    }
  }
  std::vector<Real> probs(n * kcls);
  const auto pl = logits.data();
  Real total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Real* row = pl.data() + i * kcls;
    const Real mx = *std::max_element(row, row + kcls);
    Real z = 0;
    for (std::size_t j = 0; j < kcls; ++j) {
      probs[i * kcls + j] = std::exp(row[j] - mx);
      z += probs[i * kcls + j];
    }
    for (std::size_t j = 0; j < kcls; ++j) probs[i * kcls + j] /= z;
    total += std::log(z) + mx - row[labels[i]];
  }
  Tensor<Real> out = Tensor<Real>::scalar(total / static_cast<Real>(n));
  if (auto* tape = detail::recording_tape({&logits})) {
    std::vector<std::int32_t> lab(labels.begin(), labels.end());
    tape->record(out, [li = logits.impl(), probs = std::move(probs), lab = std::move(lab), n,
                       kcls](std::span<const Real> g) {
      auto gl = detail::grad_slot(li);
      const Real s = g[0] / static_cast<Real>(n);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < kcls; ++j) {
          const Real onehot = static_cast<std::size_t>(lab[i]) == j ? Real(1) : Real(0);
          gl[i * kcls + j] += s * (probs[i * kcls + j] - onehot);
        }
      }
    });
  }
  return out;
}

template <class Real>
Tensor<Real> subsample2d(const Tensor<Real>& x, std::size_t stride) {
  if (x.shape().rank() != 4) throw ShapeError("subsample2d: input must be NCHW");
  if (stride == 0) throw ShapeError("subsample2d: stride must be positive");
  const std::size_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = (h + stride - 1) / stride, wo = (w + stride - 1) / stride;
  auto out = Tensor<Real>::uninitialized(Shape{x.dim(0), x.dim(1), ho, wo});
  auto po = out.mutable_data();
  const auto px = x.data();
  for (std::size_t i = 0; i < nc; ++i)
    for (std::size_t y = 0; y < ho; ++y)
      for (std::size_t z = 0; z < wo; ++z) po[(i * ho + y) * wo + z] = px[(i * h + y * stride) * w + z * stride];
  if (auto* tape = detail::recording_tape({&x})) {
    tape->record(out, [xi = x.impl(), nc, h, w, ho, wo, stride](std::span<const Real> g) {
      auto gx = detail::grad_slot(xi);
      for (std::size_t i = 0; i < nc; ++i)
        for (std::size_t y = 0; y < ho; ++y)
          for (std::size_t z = 0; z < wo; ++z) gx[(i * h + y * stride) * w + z * stride] += g[(i * ho + y) * wo + z];
    });
  }
  return out;
}

template <class Real>
Tensor<Real> select_channel(const Tensor<Real>& x, std::size_t c) {
  if (x.shape().rank() != 4 || c >= x.dim(1)) throw ShapeError("select_channel: channel out of range");
  const std::size_t n = x.dim(0), ch = x.dim(1), plane = x.dim(2) * x.dim(3);
  auto out = Tensor<Real>::uninitialized(Shape{n, 1, x.dim(2), x.dim(3)});
  for (std::size_t b = 0; b < n; ++b) {
    std::copy_n(x.data().data() + (b * ch + c) * plane, plane, out.mutable_data().data() + b * plane);
  }
  if (auto* tape = detail::recording_tape({&x})) {
    tape->record(out, [xi = x.impl(), n, ch, c, plane](std::span<const Real> g) {
      auto gx = detail::grad_slot(xi);
      for (std::size_t b = 0; b < n; ++b) {
        simd::kernels<Real>().axpy(plane, Real(1), g.data() + b * plane, gx.data() + (b * ch + c) * plane);
      }
    });
  }
  return out;
}

template <class Real>
Tensor<Real> channel_mean(const Tensor<Real>& x) {
  if (x.shape().rank() != 4) throw ShapeError("channel_mean: input must be NCHW");
  const std::size_t n = x.dim(0), ch = x.dim(1), plane = x.dim(2) * x.dim(3);
  const Real inv = Real(1) / static_cast<Real>(ch);
  auto out = Tensor<Real>::uninitialized(Shape{n, 1, x.dim(2), x.dim(3)});
  auto po = out.mutable_data();
  const auto px = x.data();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < plane; ++i) {
      Real s = 0;
      for (std::size_t c = 0; c < ch; ++c) s += px[(b * ch + c) * plane + i];
      po[b * plane + i] = s * inv;
    }
  }
  if (auto* tape = detail::recording_tape({&x})) {
    tape->record(out, [xi = x.impl(), n, ch, plane, inv](std::span<const Real> g) {
      auto gx = detail::grad_slot(xi);
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t c = 0; c < ch; ++c)
          simd::kernels<Real>().axpy(plane, inv, g.data() + b * plane, gx.data() + (b * ch + c) * plane);
    });
  }
  return out;
}

#define YYNET_INSTANTIATE(Real)                                                                    \
  template Tensor<Real> conv2d<Real>(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&, \
                                     const ConvOptions&);                                          \
  template Tensor<Real> batch_norm2d<Real>(const Tensor<Real>&, const Tensor<Real>&,               \
                                           const Tensor<Real>&, Tensor<Real>&, Tensor<Real>&,      \
                                           const BatchNormOptions&);                               \
  template Tensor<Real> linear<Real>(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&); \
  template Tensor<Real> gelu<Real>(const Tensor<Real>&);                                           \
  template Tensor<Real> relu<Real>(const Tensor<Real>&);                                           \
  template Tensor<Real> sigmoid<Real>(const Tensor<Real>&);                                        \
  template Tensor<Real> hard_sigmoid<Real>(const Tensor<Real>&);                                   \
  template Tensor<Real> global_avg_pool<Real>(const Tensor<Real>&);                                \
  template Tensor<Real> channel_scale<Real>(const Tensor<Real>&, const Tensor<Real>&);             \
  template Tensor<Real> dropout<Real>(const Tensor<Real>&, double, bool, Rng&);                    \
  template Tensor<Real> softmax_cross_entropy<Real>(const Tensor<Real>&,                           \
                                                    std::span<const std::int32_t>);                \
  template Tensor<Real> subsample2d<Real>(const Tensor<Real>&, std::size_t);                      \
  template Tensor<Real> select_channel<Real>(const Tensor<Real>&, std::size_t);                    \
  template Tensor<Real> channel_mean<Real>(const Tensor<Real>&);

YYNET_INSTANTIATE(float)
YYNET_INSTANTIATE(double)
#undef YYNET_INSTANTIATE

}  // namespace yynet::nn
