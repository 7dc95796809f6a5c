#pragma once

#include <memory>

#include "gridclip/ops_basic.hpp"

namespace gridclip::ad {

namespace detail {

template <typename S>
void im2col(const Tensor<S>& x, int kh, int kw, int stride, int pad, Tensor<S>& col, int oh, int ow) {
  const int ic = x.dim(0), h = x.dim(1), w = x.dim(2);
  for (int c = 0; c < ic; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        const int row = (c * kh + ky) * kw + kx;
        S* dst = &col.data[static_cast<std::size_t>(row) * oh * ow];
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - pad;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride + kx - pad;
            dst[oy * ow + ox] =
                (iy >= 0 && iy < h && ix >= 0 && ix < w) ? x.at3(c, iy, ix) : S(0);
          }
        }
      }
}

template <typename S>
void col2im_add(const Tensor<S>& col, int kh, int kw, int stride, int pad, Tensor<S>& x, int oh, int ow) {
  const int ic = x.dim(0), h = x.dim(1), w = x.dim(2);
  for (int c = 0; c < ic; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        const int row = (c * kh + ky) * kw + kx;
        const S* src = &col.data[static_cast<std::size_t>(row) * oh * ow];
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < w) x.at3(c, iy, ix) += src[oy * ow + ox];
          }
        }
      }
}

}  // namespace detail

/// 2-D convolution, x [IC,H,W], w [OC,IC,kh,kw], optional bias [OC].
/// Implemented as im2col + GEMM; the column matrix is kept for backward.
template <typename S>
VarId conv2d(Tape<S>& t, VarId x, VarId w, VarId b, int stride, int pad) {
  const Tensor<S>& xv = t.val(x);
  const Tensor<S>& wv = t.val(w);
  const int ic = xv.dim(0), h = xv.dim(1), width = xv.dim(2);
  const int oc = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  if (wv.dim(1) != ic) throw std::invalid_argument("conv2d: channel mismatch");
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (width + 2 * pad - kw) / stride + 1;
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: empty output");

  auto col = std::make_shared<Tensor<S>>(std::vector<int>{ic * kh * kw, oh * ow});
  detail::im2col(xv, kh, kw, stride, pad, *col, oh, ow);

  Tensor<S> out({oc, oh, ow});
  as_matrix(out, oc, oh * ow).noalias() =
      as_matrix(wv, oc, ic * kh * kw) * as_matrix(*col, ic * kh * kw, oh * ow);
  if (b != kNoVar) {
    const Tensor<S>& bvec = t.val(b);
    for (int c = 0; c < oc; ++c) {
      const S bc = bvec[static_cast<std::size_t>(c)];
      S* dst = &out.data[static_cast<std::size_t>(c) * oh * ow];
      for (int i = 0; i < oh * ow; ++i) dst[i] += bc;
    }
  }
  return detail::emit_with_back(t, std::move(out), any_requires(t, {x, w, b}), [&](VarId y) {
    return [x, w, b, y, col, ic, oc, kh, kw, oh, ow, stride, pad](Tape<S>& tp) {
      const Tensor<S>& gy = tp.grad(y);
      auto gym = as_matrix(gy, oc, oh * ow);
      if (tp.requires_grad(w))
        as_matrix(tp.grad(w), oc, ic * kh * kw).noalias() +=
            gym * as_matrix(*col, ic * kh * kw, oh * ow).transpose();
      if (b != kNoVar && tp.requires_grad(b)) {
        Tensor<S>& gb = tp.grad(b);
        for (int c = 0; c < oc; ++c) {
          S acc = 0;
          const S* src = &gy.data[static_cast<std::size_t>(c) * oh * ow];
          for (int i = 0; i < oh * ow; ++i) acc += src[i];
          gb[static_cast<std::size_t>(c)] += acc;
        }
      }
      if (tp.requires_grad(x)) {
        Tensor<S> dcol({ic * kh * kw, oh * ow});
        as_matrix(dcol, ic * kh * kw, oh * ow).noalias() =
            as_matrix(tp.val(w), oc, ic * kh * kw).transpose() * gym;
        detail::col2im_add(dcol, kh, kw, stride, pad, tp.grad(x), oh, ow);
      }
    };
  });
}

/// Group normalization over x [C,H,W] with per-channel affine parameters.
template <typename S>
VarId group_norm(Tape<S>& t, VarId x, VarId gamma, VarId beta, int groups, S eps = S(1e-5)) {
  const Tensor<S>& xv = t.val(x);
  const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  if (c % groups != 0) throw std::invalid_argument("group_norm: groups must divide channels");
  const int cg = c / groups;
  const std::size_t gn = static_cast<std::size_t>(cg) * h * w;

  auto mean_g = std::make_shared<std::vector<S>>(groups);
  auto inv_std = std::make_shared<std::vector<S>>(groups);
  Tensor<S> out(xv.shape);
  const Tensor<S>& gv = t.val(gamma);
  const Tensor<S>& bv = t.val(beta);
  for (int g = 0; g < groups; ++g) {
    const std::size_t base = static_cast<std::size_t>(g) * gn;
    S mu = 0;
    for (std::size_t i = 0; i < gn; ++i) mu += xv[base + i];
    mu /= static_cast<S>(gn);
    S var = 0;
    for (std::size_t i = 0; i < gn; ++i) {
      const S d = xv[base + i] - mu;
      var += d * d;
    }
    var /= static_cast<S>(gn);
    const S is = S(1) / std::sqrt(var + eps);
    (*mean_g)[static_cast<std::size_t>(g)] = mu;
    (*inv_std)[static_cast<std::size_t>(g)] = is;
    for (int cc = 0; cc < cg; ++cc) {
      const int ch = g * cg + cc;
      const S gam = gv[static_cast<std::size_t>(ch)], bet = bv[static_cast<std::size_t>(ch)];
      const std::size_t cb = static_cast<std::size_t>(ch) * h * w;
      for (int i = 0; i < h * w; ++i) out[cb + i] = gam * (xv[cb + i] - mu) * is + bet;
    }
  }
  return detail::emit_with_back(t, std::move(out), any_requires(t, {x, gamma, beta}), [&](VarId y) {
    return [x, gamma, beta, y, groups, cg, h, w, gn, mean_g, inv_std](Tape<S>& tp) {
      const Tensor<S>& gy = tp.grad(y);
      const Tensor<S>& xv2 = tp.val(x);
      const Tensor<S>& gv2 = tp.val(gamma);
      for (int g = 0; g < groups; ++g) {
        const S mu = (*mean_g)[static_cast<std::size_t>(g)];
        const S is = (*inv_std)[static_cast<std::size_t>(g)];
        // Accumulate the two reductions of the GN backward formula.
        S sum_dxhat = 0, sum_dxhat_xhat = 0;
        for (int cc = 0; cc < cg; ++cc) {
          const int ch = g * cg + cc;
          const S gam = gv2[static_cast<std::size_t>(ch)];
          const std::size_t cb = static_cast<std::size_t>(ch) * h * w;
          for (int i = 0; i < h * w; ++i) {
            const S dxh = gy[cb + i] * gam;
            const S xh = (xv2[cb + i] - mu) * is;
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xh;
          }
        }
        const S n = static_cast<S>(gn);
        for (int cc = 0; cc < cg; ++cc) {
          const int ch = g * cg + cc;
          const S gam = gv2[static_cast<std::size_t>(ch)];
          const std::size_t cb = static_cast<std::size_t>(ch) * h * w;
          if (tp.requires_grad(gamma) || tp.requires_grad(beta)) {
            S dgam = 0, dbet = 0;
            for (int i = 0; i < h * w; ++i) {
              const S xh = (xv2[cb + i] - mu) * is;
              dgam += gy[cb + i] * xh;
              dbet += gy[cb + i];
            }
            if (tp.requires_grad(gamma)) tp.grad(gamma)[static_cast<std::size_t>(ch)] += dgam;
            if (tp.requires_grad(beta)) tp.grad(beta)[static_cast<std::size_t>(ch)] += dbet;
          }
          if (tp.requires_grad(x)) {
            Tensor<S>& gx = tp.grad(x);
            for (int i = 0; i < h * w; ++i) {
              const S dxh = gy[cb + i] * gam;
              const S xh = (xv2[cb + i] - mu) * is;
              gx[cb + i] += is * (dxh - sum_dxhat / n - xh * sum_dxhat_xhat / n);
            }
          }
        }
      }
    };
  });
}

/// Per-channel spatial mean, x [C,H,W] -> [C].
template <typename S>
VarId global_avg_pool(Tape<S>& t, VarId x) {
  const Tensor<S>& xv = t.val(x);
  const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  const S inv = S(1) / static_cast<S>(h * w);
  Tensor<S> out({c});
  for (int ch = 0; ch < c; ++ch) {
    S acc = 0;
    const S* src = &xv.data[static_cast<std::size_t>(ch) * h * w];
    for (int i = 0; i < h * w; ++i) acc += src[i];
    out[static_cast<std::size_t>(ch)] = acc * inv;
  }
  return detail::emit_with_back(t, std::move(out), t.requires_grad(x), [&](VarId y) {
    return [x, y, c, h, w, inv](Tape<S>& tp) {
      const Tensor<S>& gy = tp.grad(y);
      Tensor<S>& gx = tp.grad(x);
      for (int ch = 0; ch < c; ++ch) {
        const S g = gy[static_cast<std::size_t>(ch)] * inv;
        S* dst = &gx.data[static_cast<std::size_t>(ch) * h * w];
        for (int i = 0; i < h * w; ++i) dst[i] += g;
      }
    };
  });
}

/// Nearest-neighbour 2x upsampling, [C,H,W] -> [C,2H,2W].
template <typename S>
VarId upsample_nearest2x(Tape<S>& t, VarId x) {
  const Tensor<S>& xv = t.val(x);
  const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  Tensor<S> out({c, 2 * h, 2 * w});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < 2 * h; ++y)
      for (int xx = 0; xx < 2 * w; ++xx) out.at3(ch, y, xx) = xv.at3(ch, y / 2, xx / 2);
  return detail::emit_with_back(t, std::move(out), t.requires_grad(x), [&](VarId y) {
    return [x, y, c, h, w](Tape<S>& tp) {
      const Tensor<S>& gy = tp.grad(y);
      Tensor<S>& gx = tp.grad(x);
      for (int ch = 0; ch < c; ++ch)
        for (int yy = 0; yy < 2 * h; ++yy)
          for (int xx = 0; xx < 2 * w; ++xx) gx.at3(ch, yy / 2, xx / 2) += gy.at3(ch, yy, xx);
    };
  });
}

/// Channel concatenation of two maps with equal spatial size.
template <typename S>
VarId concat_channels(Tape<S>& t, VarId a, VarId b) {
  const Tensor<S>& av = t.val(a);
  const Tensor<S>& bv = t.val(b);
  const int ca = av.dim(0), cb = bv.dim(0), h = av.dim(1), w = av.dim(2);
  if (bv.dim(1) != h || bv.dim(2) != w) throw std::invalid_argument("concat_channels: spatial mismatch");
  Tensor<S> out({ca + cb, h, w});
  std::copy(av.data.begin(), av.data.end(), out.data.begin());
  std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + av.data.size());
  return detail::emit_with_back(t, std::move(out), any_requires(t, {a, b}), [&](VarId y) {
    return [a, b, y](Tape<S>& tp) {
      const Tensor<S>& gy = tp.grad(y);
      const std::size_t na = tp.val(a).numel();
      if (tp.requires_grad(a)) {
        Tensor<S>& ga = tp.grad(a);
        for (std::size_t i = 0; i < na; ++i) ga[i] += gy[i];
      }
      if (tp.requires_grad(b)) {
        Tensor<S>& gb = tp.grad(b);
        for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] += gy[na + i];
      }
    };
  });
}

/// [C,H,W] -> [H*W, C]; token r corresponds to cell (r / W, r % W).
template <typename S>
VarId map_to_tokens(Tape<S>& t, VarId x) {
  const Tensor<S>& xv = t.val(x);
  const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  Tensor<S> out({h * w, c});
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < h * w; ++i) out.at2(i, ch) = xv.data[static_cast<std::size_t>(ch) * h * w + i];
  return detail::emit_with_back(t, std::move(out), t.requires_grad(x), [&](VarId y) {
    return [x, y, c, h, w](Tape<S>& tp) {
      const Tensor<S>& gy = tp.grad(y);
      Tensor<S>& gx = tp.grad(x);
      for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < h * w; ++i) gx.data[static_cast<std::size_t>(ch) * h * w + i] += gy.at2(i, ch);
    };
  });
}

/// [T, C] -> [C, H, W] with T = H*W (inverse of map_to_tokens).
template <typename S>
VarId tokens_to_map(Tape<S>& t, VarId x, int h, int w) {
  const Tensor<S>& xv = t.val(x);
  const int c = xv.dim(1);
  if (xv.dim(0) != h * w) throw std::invalid_argument("tokens_to_map: token count mismatch");
  Tensor<S> out({c, h, w});
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < h * w; ++i) out.data[static_cast<std::size_t>(ch) * h * w + i] = xv.at2(i, ch);
  return detail::emit_with_back(t, std::move(out), t.requires_grad(x), [&](VarId y) {
    return [x, y, c, h, w](Tape<S>& tp) {
      const Tensor<S>& gy = tp.grad(y);
      Tensor<S>& gx = tp.grad(x);
      for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < h * w; ++i) gx.at2(i, ch) += gy.data[static_cast<std::size_t>(ch) * h * w + i];
    };
  });
}

/// Gathers the listed cells (linear spatial indices) from x [C,H,W] -> [C,P].
template <typename S>
VarId gather_cells(Tape<S>& t, VarId x, std::vector<int> cells) {
  const Tensor<S>& xv = t.val(x);
  const int c = xv.dim(0);
  const int hw = xv.dim(1) * xv.dim(2);
  const int p = static_cast<int>(cells.size());
  Tensor<S> out({c, p});
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < p; ++i)
      out.at2(ch, i) = xv.data[static_cast<std::size_t>(ch) * hw + cells[static_cast<std::size_t>(i)]];
  auto cp = std::make_shared<std::vector<int>>(std::move(cells));
  return detail::emit_with_back(t, std::move(out), t.requires_grad(x), [&](VarId y) {
    return [x, y, c, hw, cp](Tape<S>& tp) {
      const Tensor<S>& gy = tp.grad(y);
      Tensor<S>& gx = tp.grad(x);
      const int p2 = static_cast<int>(cp->size());
      for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < p2; ++i)
          gx.data[static_cast<std::size_t>(ch) * hw + (*cp)[static_cast<std::size_t>(i)]] += gy.at2(ch, i);
    };
  });
}

}  // namespace gridclip::ad
