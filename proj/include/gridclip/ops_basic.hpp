#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <memory>

#include "gridclip/tape.hpp"

namespace gridclip::ad {

template <typename S>
using EigenMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<EigenMat<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const EigenMat<S>>;

template <typename S>
ConstMatMap<S> as_matrix(const Tensor<S>& t, int rows, int cols) {
  return ConstMatMap<S>(t.data.data(), rows, cols);
}
template <typename S>
MatMap<S> as_matrix(Tensor<S>& t, int rows, int cols) {
  return MatMap<S>(t.data.data(), rows, cols);
}

namespace detail {

/// Emits a node whose backward closure may capture the node's own id: the id
/// of the next node is tape.size() before emission.
template <typename S, typename MakeBack>
VarId emit_with_back(Tape<S>& t, Tensor<S> value, bool rg, MakeBack make_back) {
  const VarId y = static_cast<VarId>(t.size());
  std::function<void(Tape<S>&)> back;
  if (rg) back = make_back(y);
  VarId got = t.emit(std::move(value), rg, std::move(back));
  (void)got;
  return y;
}

template <typename S, typename Fwd, typename Dfdx>
VarId unary_ew(Tape<S>& t, VarId x, Fwd fwd, Dfdx dfdx_from_xy) {
  const Tensor<S>& xv = t.val(x);
  Tensor<S> out(xv.shape);
  for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = fwd(xv[i]);
  return emit_with_back(t, std::move(out), t.requires_grad(x), [&](VarId y) {
    return [x, y, dfdx_from_xy](Tape<S>& tp) {
      const Tensor<S>& gy = tp.grad(y);
      const Tensor<S>& xv2 = tp.val(x);
      const Tensor<S>& yv2 = tp.val(y);
      Tensor<S>& gx = tp.grad(x);
      for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += gy[i] * dfdx_from_xy(xv2[i], yv2[i]);
    };
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <typename S>
VarId add(Tape<S>& t, VarId a, VarId b) {
  const Tensor<S>& av = t.val(a);
  const Tensor<S>& bv = t.val(b);
  if (!av.same_shape(bv)) throw std::invalid_argument("add: shape mismatch");
  Tensor<S> out(av.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] + bv[i];
  return detail::emit_with_back(t, std::move(out), any_requires(t, {a, b}), [&](VarId y) {
    return [a, b, y](Tape<S>& tp) {
      const Tensor<S>& gy = tp.grad(y);
      if (tp.requires_grad(a)) {
        Tensor<S>& ga = tp.grad(a);
        for (std::size_t i = 0; i < gy.numel(); ++i) ga[i] += gy[i];
      }
      if (tp.requires_grad(b)) {
        Tensor<S>& gb = tp.grad(b);
        for (std::size_t i = 0; i < gy.numel(); ++i) gb[i] += gy[i];
      }
    };
  });
}

template <typename S>
VarId sub(Tape<S>& t, VarId a, VarId b) {
  const Tensor<S>& av = t.val(a);
  const Tensor<S>& bv = t.val(b);
  if (!av.same_shape(bv)) throw std::invalid_argument("sub: shape mismatch");
  Tensor<S> out(av.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] - bv[i];
  return detail::emit_with_back(t, std::move(out), any_requires(t, {a, b}), [&](VarId y) {
    return [a, b, y](Tape<S>& tp) {
      const Tensor<S>& gy = tp.grad(y);
      if (tp.requires_grad(a)) {
        Tensor<S>& ga = tp.grad(a);
        for (std::size_t i = 0; i < gy.numel(); ++i) ga[i] += gy[i];
      }
      if (tp.requires_grad(b)) {
        Tensor<S>& gb = tp.grad(b);
        for (std::size_t i = 0; i < gy.numel(); ++i) gb[i] -= gy[i];
      }
    };
  });
}

template <typename S>
VarId mul(Tape<S>& t, VarId a, VarId b) {
  const Tensor<S>& av = t.val(a);
  const Tensor<S>& bv = t.val(b);
  if (!av.same_shape(bv)) throw std::invalid_argument("mul: shape mismatch");
  Tensor<S> out(av.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
  return detail::emit_with_back(t, std::move(out), any_requires(t, {a, b}), [&](VarId y) {
    return [a, b, y](Tape<S>& tp) {
      const Tensor<S>& gy = tp.grad(y);
      const Tensor<S>& av2 = tp.val(a);
      const Tensor<S>& bv2 = tp.val(b);
      if (tp.requires_grad(a)) {
        Tensor<S>& ga = tp.grad(a);
        for (std::size_t i = 0; i < gy.numel(); ++i) ga[i] += gy[i] * bv2[i];
      }
      if (tp.requires_grad(b)) {
        Tensor<S>& gb = tp.grad(b);
        for (std::size_t i = 0; i < gy.numel(); ++i) gb[i] += gy[i] * av2[i];
      }
    };
  });
}

template <typename S>
VarId div(Tape<S>& t, VarId a, VarId b) {
  const Tensor<S>& av = t.val(a);
  const Tensor<S>& bv = t.val(b);
  if (!av.same_shape(bv)) throw std::invalid_argument("div: shape mismatch");
  Tensor<S> out(av.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] / bv[i];
  return detail::emit_with_back(t, std::move(out), any_requires(t, {a, b}), [&](VarId y) {
    return [a, b, y](Tape<S>& tp) {
      const Tensor<S>& gy = tp.grad(y);
      const Tensor<S>& av2 = tp.val(a);
      const Tensor<S>& bv2 = tp.val(b);
      if (tp.requires_grad(a)) {
        Tensor<S>& ga = tp.grad(a);
        for (std::size_t i = 0; i < gy.numel(); ++i) ga[i] += gy[i] / bv2[i];
      }
      if (tp.requires_grad(b)) {
        Tensor<S>& gb = tp.grad(b);
        for (std::size_t i = 0; i < gy.numel(); ++i) gb[i] -= gy[i] * av2[i] / (bv2[i] * bv2[i]);
      }
    };
  });
}

/// y = scale * x + shift, elementwise with scalar constants.
template <typename S>
VarId affine(Tape<S>& t, VarId x, S scale, S shift) {
  return detail::unary_ew(
      t, x, [scale, shift](S v) { return scale * v + shift; },
      [scale](S, S) { return scale; });
}

template <typename S>
VarId relu(Tape<S>& t, VarId x) {
  return detail::unary_ew(
      t, x, [](S v) { return v > S(0) ? v : S(0); },
      [](S xv, S) { return xv > S(0) ? S(1) : S(0); });
}

template <typename S>
VarId sigmoid(Tape<S>& t, VarId x) {
  return detail::unary_ew(
      t, x,
      [](S v) {
        if (v >= S(0)) return S(1) / (S(1) + std::exp(-v));
        const S e = std::exp(v);
        return e / (S(1) + e);
      },
      [](S, S yv) { return yv * (S(1) - yv); });
}

template <typename S>
VarId exp_op(Tape<S>& t, VarId x) {
  return detail::unary_ew(
      t, x, [](S v) { return std::exp(v); }, [](S, S yv) { return yv; });
}

/// log(max(x, floor)); gradient is 1/x where x > floor, else 0.
template <typename S>
VarId log_clamped(Tape<S>& t, VarId x, S floor_v) {
  return detail::unary_ew(
      t, x, [floor_v](S v) { return std::log(v > floor_v ? v : floor_v); },
      [floor_v](S xv, S) { return xv > floor_v ? S(1) / xv : S(0); });
}

template <typename S>
VarId sqrt_op(Tape<S>& t, VarId x) {
  return detail::unary_ew(
      t, x, [](S v) { return std::sqrt(v); },
      [](S, S yv) { return yv > S(0) ? S(0.5) / yv : S(0); });
}

template <typename S>
VarId abs_op(Tape<S>& t, VarId x) {
  return detail::unary_ew(
      t, x, [](S v) { return std::abs(v); },
      [](S xv, S) { return xv > S(0) ? S(1) : (xv < S(0) ? S(-1) : S(0)); });
}

/// x^p for x >= 0 (p real). d/dx = p x^(p-1); defined as 0 at x = 0 for p > 1.
template <typename S>
VarId pow_const(Tape<S>& t, VarId x, S p) {
  return detail::unary_ew(
      t, x, [p](S v) { return std::pow(v, p); },
      [p](S xv, S) {
        if (xv <= S(0)) return p > S(1) ? S(0) : S(0);
        return p * std::pow(xv, p - S(1));
      });
}

template <typename S>
VarId clamp_min(Tape<S>& t, VarId x, S lo) {
  return detail::unary_ew(
      t, x, [lo](S v) { return v > lo ? v : lo; },
      [lo](S xv, S) { return xv > lo ? S(1) : S(0); });
}

/// Elementwise minimum; on ties the gradient routes to a.
template <typename S>
VarId min_ew(Tape<S>& t, VarId a, VarId b) {
  const Tensor<S>& av = t.val(a);
  const Tensor<S>& bv = t.val(b);
  if (!av.same_shape(bv)) throw std::invalid_argument("min_ew: shape mismatch");
  Tensor<S> out(av.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] <= bv[i] ? av[i] : bv[i];
  return detail::emit_with_back(t, std::move(out), any_requires(t, {a, b}), [&](VarId y) {
    return [a, b, y](Tape<S>& tp) {
      const Tensor<S>& gy = tp.grad(y);
      const Tensor<S>& av2 = tp.val(a);
      const Tensor<S>& bv2 = tp.val(b);
      for (std::size_t i = 0; i < gy.numel(); ++i) {
        if (av2[i] <= bv2[i]) {
          if (tp.requires_grad(a)) tp.grad(a)[i] += gy[i];
        } else if (tp.requires_grad(b)) {
          tp.grad(b)[i] += gy[i];
        }
      }
    };
  });
}

/// Elementwise maximum; on ties the gradient routes to a.
template <typename S>
VarId max_ew(Tape<S>& t, VarId a, VarId b) {
  const Tensor<S>& av = t.val(a);
  const Tensor<S>& bv = t.val(b);
  if (!av.same_shape(bv)) throw std::invalid_argument("max_ew: shape mismatch");
  Tensor<S> out(av.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] >= bv[i] ? av[i] : bv[i];
  return detail::emit_with_back(t, std::move(out), any_requires(t, {a, b}), [&](VarId y) {
    return [a, b, y](Tape<S>& tp) {
      const Tensor<S>& gy = tp.grad(y);
      const Tensor<S>& av2 = tp.val(a);
      const Tensor<S>& bv2 = tp.val(b);
      for (std::size_t i = 0; i < gy.numel(); ++i) {
        if (av2[i] >= bv2[i]) {
          if (tp.requires_grad(a)) tp.grad(a)[i] += gy[i];
        } else if (tp.requires_grad(b)) {
          tp.grad(b)[i] += gy[i];
        }
      }
    };
  });
}

/// Elementwise multiply by a constant tensor (no gradient into the constant).
template <typename S>
VarId mul_const(Tape<S>& t, VarId x, Tensor<S> c) {
  const Tensor<S>& xv = t.val(x);
  if (!xv.same_shape(c)) throw std::invalid_argument("mul_const: shape mismatch");
  Tensor<S> out(xv.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = xv[i] * c[i];
  auto cp = std::make_shared<Tensor<S>>(std::move(c));
  return detail::emit_with_back(t, std::move(out), t.requires_grad(x), [&](VarId y) {
    return [x, y, cp](Tape<S>& tp) {
      const Tensor<S>& gy = tp.grad(y);
      Tensor<S>& gx = tp.grad(x);
      for (std::size_t i = 0; i < gy.numel(); ++i) gx[i] += gy[i] * (*cp)[i];
    };
  });
}

/// y = x * s where s is a 1-element variable (learnable scalar).
template <typename S>
VarId scale_by_scalar_var(Tape<S>& t, VarId x, VarId s) {
  const Tensor<S>& xv = t.val(x);
  const S sv = t.val(s)[0];
  Tensor<S> out(xv.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = xv[i] * sv;
  return detail::emit_with_back(t, std::move(out), any_requires(t, {x, s}), [&](VarId y) {
    return [x, s, y](Tape<S>& tp) {
      const Tensor<S>& gy = tp.grad(y);
      const Tensor<S>& xv2 = tp.val(x);
      const S sv2 = tp.val(s)[0];
      if (tp.requires_grad(x)) {
        Tensor<S>& gx = tp.grad(x);
        for (std::size_t i = 0; i < gy.numel(); ++i) gx[i] += gy[i] * sv2;
      }
      if (tp.requires_grad(s)) {
        S acc = 0;
        for (std::size_t i = 0; i < gy.numel(); ++i) acc += gy[i] * xv2[i];
        tp.grad(s)[0] += acc;
      }
    };
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename S>
VarId sum(Tape<S>& t, VarId x) {
  const Tensor<S>& xv = t.val(x);
  S acc = 0;
  for (S v : xv.data) acc += v;
  Tensor<S> out({1});
  out[0] = acc;
  return detail::emit_with_back(t, std::move(out), t.requires_grad(x), [&](VarId y) {
    return [x, y](Tape<S>& tp) {
      const S g = tp.grad(y)[0];
      Tensor<S>& gx = tp.grad(x);
      for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g;
    };
  });
}

template <typename S>
VarId mean(Tape<S>& t, VarId x) {
  const std::size_t n = t.val(x).numel();
  return affine(t, sum(t, x), S(1) / static_cast<S>(n), S(0));
}

/// Row sums of an [m, n] matrix -> [m, 1].
template <typename S>
VarId sum_rows(Tape<S>& t, VarId x) {
  const Tensor<S>& xv = t.val(x);
  const int m = xv.dim(0), n = xv.dim(1);
  Tensor<S> out({m, 1});
  for (int r = 0; r < m; ++r) {
    S acc = 0;
    for (int c = 0; c < n; ++c) acc += xv.at2(r, c);
    out[static_cast<std::size_t>(r)] = acc;
  }
  return detail::emit_with_back(t, std::move(out), t.requires_grad(x), [&](VarId y) {
    return [x, y, m, n](Tape<S>& tp) {
      const Tensor<S>& gy = tp.grad(y);
      Tensor<S>& gx = tp.grad(x);
      for (int r = 0; r < m; ++r)
        for (int c = 0; c < n; ++c) gx.at2(r, c) += gy[static_cast<std::size_t>(r)];
    };
  });
}

/// Divides (or multiplies) every row of x [m, n] by s [m, 1].
template <typename S>
VarId scale_rows(Tape<S>& t, VarId x, VarId s, bool divide) {
  const Tensor<S>& xv = t.val(x);
  const Tensor<S>& sv = t.val(s);
  const int m = xv.dim(0), n = xv.dim(1);
  if (sv.dim(0) != m) throw std::invalid_argument("scale_rows: row mismatch");
  Tensor<S> out(xv.shape);
  for (int r = 0; r < m; ++r) {
    const S f = divide ? S(1) / sv[static_cast<std::size_t>(r)] : sv[static_cast<std::size_t>(r)];
    for (int c = 0; c < n; ++c) out.at2(r, c) = xv.at2(r, c) * f;
  }
  return detail::emit_with_back(t, std::move(out), any_requires(t, {x, s}), [&](VarId y) {
    return [x, s, y, m, n, divide](Tape<S>& tp) {
      const Tensor<S>& gy = tp.grad(y);
      const Tensor<S>& xv2 = tp.val(x);
      const Tensor<S>& sv2 = tp.val(s);
      for (int r = 0; r < m; ++r) {
        const S sr = sv2[static_cast<std::size_t>(r)];
        const S f = divide ? S(1) / sr : sr;
        if (tp.requires_grad(x)) {
          Tensor<S>& gx = tp.grad(x);
          for (int c = 0; c < n; ++c) gx.at2(r, c) += gy.at2(r, c) * f;
        }
        if (tp.requires_grad(s)) {
          S acc = 0;
          for (int c = 0; c < n; ++c) acc += gy.at2(r, c) * xv2.at2(r, c);
          tp.grad(s)[static_cast<std::size_t>(r)] += divide ? -acc / (sr * sr) : acc;
        }
      }
    };
  });
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

template <typename S>
VarId matmul(Tape<S>& t, VarId a, VarId b) {
  const Tensor<S>& av = t.val(a);
  const Tensor<S>& bv = t.val(b);
  const int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  if (bv.dim(0) != k) throw std::invalid_argument("matmul: inner dimension mismatch");
  Tensor<S> out({m, n});
  as_matrix(out, m, n).noalias() = as_matrix(av, m, k) * as_matrix(bv, k, n);
  return detail::emit_with_back(t, std::move(out), any_requires(t, {a, b}), [&](VarId y) {
    return [a, b, y, m, k, n](Tape<S>& tp) {
      const Tensor<S>& gy = tp.grad(y);
      auto gym = as_matrix(gy, m, n);
      if (tp.requires_grad(a))
        as_matrix(tp.grad(a), m, k).noalias() += gym * as_matrix(tp.val(b), k, n).transpose();
      if (tp.requires_grad(b))
        as_matrix(tp.grad(b), k, n).noalias() += as_matrix(tp.val(a), m, k).transpose() * gym;
    };
  });
}

/// x [n, din] * W^T [din, dout] + b -> [n, dout]. W is [dout, din].
template <typename S>
VarId linear(Tape<S>& t, VarId x, VarId w, VarId b) {
  const Tensor<S>& xv = t.val(x);
  const Tensor<S>& wv = t.val(w);
  const int n = xv.dim(0), din = xv.dim(1), dout = wv.dim(0);
  if (wv.dim(1) != din) throw std::invalid_argument("linear: weight shape mismatch");
  Tensor<S> out({n, dout});
  auto om = as_matrix(out, n, dout);
  om.noalias() = as_matrix(xv, n, din) * as_matrix(wv, dout, din).transpose();
  if (b != kNoVar) {
    const Tensor<S>& bvec = t.val(b);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < dout; ++c) out.at2(r, c) += bvec[static_cast<std::size_t>(c)];
  }
  return detail::emit_with_back(t, std::move(out), any_requires(t, {x, w, b}), [&](VarId y) {
    return [x, w, b, y, n, din, dout](Tape<S>& tp) {
      const Tensor<S>& gy = tp.grad(y);
      auto gym = as_matrix(gy, n, dout);
      if (tp.requires_grad(x))
        as_matrix(tp.grad(x), n, din).noalias() += gym * as_matrix(tp.val(w), dout, din);
      if (tp.requires_grad(w))
        as_matrix(tp.grad(w), dout, din).noalias() += gym.transpose() * as_matrix(tp.val(x), n, din);
      if (b != kNoVar && tp.requires_grad(b)) {
        Tensor<S>& gb = tp.grad(b);
        for (int r = 0; r < n; ++r)
          for (int c = 0; c < dout; ++c) gb[static_cast<std::size_t>(c)] += gy.at2(r, c);
      }
    };
  });
}

/// x [m, e] * B^T where B is a constant [k, e] matrix -> [m, k].
template <typename S>
VarId matmul_const_bt(Tape<S>& t, VarId x, Tensor<S> bmat) {
  const Tensor<S>& xv = t.val(x);
  const int m = xv.dim(0), e = xv.dim(1), k = bmat.dim(0);
  if (bmat.dim(1) != e) throw std::invalid_argument("matmul_const_bt: shape mismatch");
  Tensor<S> out({m, k});
  as_matrix(out, m, k).noalias() = as_matrix(xv, m, e) * as_matrix(bmat, k, e).transpose();
  auto bp = std::make_shared<Tensor<S>>(std::move(bmat));
  return detail::emit_with_back(t, std::move(out), t.requires_grad(x), [&](VarId y) {
    return [x, y, m, e, k, bp](Tape<S>& tp) {
      as_matrix(tp.grad(x), m, e).noalias() +=
          as_matrix(tp.grad(y), m, k) * as_matrix(*bp, k, e);
    };
  });
}

template <typename S>
VarId softmax_rows(Tape<S>& t, VarId x) {
  const Tensor<S>& xv = t.val(x);
  const int m = xv.dim(0), n = xv.dim(1);
  Tensor<S> out(xv.shape);
  for (int r = 0; r < m; ++r) {
    S mx = xv.at2(r, 0);
    for (int c = 1; c < n; ++c) mx = std::max(mx, xv.at2(r, c));
    S z = 0;
    for (int c = 0; c < n; ++c) {
      const S e = std::exp(xv.at2(r, c) - mx);
      out.at2(r, c) = e;
      z += e;
    }
    for (int c = 0; c < n; ++c) out.at2(r, c) /= z;
  }
  return detail::emit_with_back(t, std::move(out), t.requires_grad(x), [&](VarId y) {
    return [x, y, m, n](Tape<S>& tp) {
      const Tensor<S>& gy = tp.grad(y);
      const Tensor<S>& yv = tp.val(y);
      Tensor<S>& gx = tp.grad(x);
      for (int r = 0; r < m; ++r) {
        S dot = 0;
        for (int c = 0; c < n; ++c) dot += gy.at2(r, c) * yv.at2(r, c);
        for (int c = 0; c < n; ++c) gx.at2(r, c) += yv.at2(r, c) * (gy.at2(r, c) - dot);
      }
    };
  });
}

template <typename S>
VarId transpose(Tape<S>& t, VarId x) {
  const Tensor<S>& xv = t.val(x);
  const int m = xv.dim(0), n = xv.dim(1);
  Tensor<S> out({n, m});
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < n; ++c) out.at2(c, r) = xv.at2(r, c);
  return detail::emit_with_back(t, std::move(out), t.requires_grad(x), [&](VarId y) {
    return [x, y, m, n](Tape<S>& tp) {
      const Tensor<S>& gy = tp.grad(y);
      Tensor<S>& gx = tp.grad(x);
      for (int r = 0; r < m; ++r)
        for (int c = 0; c < n; ++c) gx.at2(r, c) += gy.at2(c, r);
    };
  });
}

template <typename S>
VarId slice_rows(Tape<S>& t, VarId x, int r0, int r1) {
  const Tensor<S>& xv = t.val(x);
  const int n = xv.dim(1);
  Tensor<S> out({r1 - r0, n});
  for (int r = r0; r < r1; ++r)
    for (int c = 0; c < n; ++c) out.at2(r - r0, c) = xv.at2(r, c);
  return detail::emit_with_back(t, std::move(out), t.requires_grad(x), [&](VarId y) {
    return [x, y, r0, r1, n](Tape<S>& tp) {
      const Tensor<S>& gy = tp.grad(y);
      Tensor<S>& gx = tp.grad(x);
      for (int r = r0; r < r1; ++r)
        for (int c = 0; c < n; ++c) gx.at2(r, c) += gy.at2(r - r0, c);
    };
  });
}

template <typename S>
VarId slice_cols(Tape<S>& t, VarId x, int c0, int c1) {
  const Tensor<S>& xv = t.val(x);
  const int m = xv.dim(0);
  Tensor<S> out({m, c1 - c0});
  for (int r = 0; r < m; ++r)
    for (int c = c0; c < c1; ++c) out.at2(r, c - c0) = xv.at2(r, c);
  return detail::emit_with_back(t, std::move(out), t.requires_grad(x), [&](VarId y) {
    return [x, y, c0, c1, m](Tape<S>& tp) {
      const Tensor<S>& gy = tp.grad(y);
      Tensor<S>& gx = tp.grad(x);
      for (int r = 0; r < m; ++r)
        for (int c = c0; c < c1; ++c) gx.at2(r, c) += gy.at2(r, c - c0);
    };
  });
}

template <typename S>
VarId concat_cols(Tape<S>& t, const std::vector<VarId>& xs) {
  const int m = t.val(xs.front()).dim(0);
  int ntot = 0;
  for (VarId x : xs) {
    if (t.val(x).dim(0) != m) throw std::invalid_argument("concat_cols: row mismatch");
    ntot += t.val(x).dim(1);
  }
  Tensor<S> out({m, ntot});
  int off = 0;
  for (VarId x : xs) {
    const Tensor<S>& xv = t.val(x);
    const int n = xv.dim(1);
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < n; ++c) out.at2(r, off + c) = xv.at2(r, c);
    off += n;
  }
  bool rg = false;
  for (VarId x : xs) rg = rg || t.requires_grad(x);
  auto xs_copy = xs;
  return detail::emit_with_back(t, std::move(out), rg, [&](VarId y) {
    return [xs_copy, y, m](Tape<S>& tp) {
      const Tensor<S>& gy = tp.grad(y);
      int off2 = 0;
      for (VarId x : xs_copy) {
        const int n = tp.val(x).dim(1);
        if (tp.requires_grad(x)) {
          Tensor<S>& gx = tp.grad(x);
          for (int r = 0; r < m; ++r)
            for (int c = 0; c < n; ++c) gx.at2(r, c) += gy.at2(r, off2 + c);
        }
        off2 += n;
      }
    };
  });
}

template <typename S>
VarId concat_rows(Tape<S>& t, const std::vector<VarId>& xs) {
  const int n = t.val(xs.front()).dim(1);
  int mtot = 0;
  for (VarId x : xs) {
    if (t.val(x).dim(1) != n) throw std::invalid_argument("concat_rows: column mismatch");
    mtot += t.val(x).dim(0);
  }
  Tensor<S> out({mtot, n});
  std::size_t off = 0;
  for (VarId x : xs) {
    const Tensor<S>& xv = t.val(x);
    std::copy(xv.data.begin(), xv.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(off));
    off += xv.numel();
  }
  bool rg = false;
  for (VarId x : xs) rg = rg || t.requires_grad(x);
  auto xs_copy = xs;
  return detail::emit_with_back(t, std::move(out), rg, [&](VarId y) {
    return [xs_copy, y](Tape<S>& tp) {
      const Tensor<S>& gy = tp.grad(y);
      std::size_t off2 = 0;
      for (VarId x : xs_copy) {
        const std::size_t nx = tp.val(x).numel();
        if (tp.requires_grad(x)) {
          Tensor<S>& gx = tp.grad(x);
          for (std::size_t i = 0; i < nx; ++i) gx[i] += gy[off2 + i];
        }
        off2 += nx;
      }
    };
  });
}

/// Concatenates 1-element variables into a vector [k].
template <typename S>
VarId stack_scalars(Tape<S>& t, const std::vector<VarId>& xs) {
  Tensor<S> out({static_cast<int>(xs.size())});
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = t.val(xs[i])[0];
  bool rg = false;
  for (VarId x : xs) rg = rg || t.requires_grad(x);
  auto xs_copy = xs;
  return detail::emit_with_back(t, std::move(out), rg, [&](VarId y) {
    return [xs_copy, y](Tape<S>& tp) {
      const Tensor<S>& gy = tp.grad(y);
      for (std::size_t i = 0; i < xs_copy.size(); ++i)
        if (tp.requires_grad(xs_copy[i])) tp.grad(xs_copy[i])[0] += gy[i];
    };
  });
}

template <typename S>
VarId reshape(Tape<S>& t, VarId x, std::vector<int> shape) {
  const Tensor<S>& xv = t.val(x);
  if (Tensor<S>::numel_of(shape) != xv.numel()) throw std::invalid_argument("reshape: numel mismatch");
  Tensor<S> out(std::move(shape), xv.data);
  return detail::emit_with_back(t, std::move(out), t.requires_grad(x), [&](VarId y) {
    return [x, y](Tape<S>& tp) {
      const Tensor<S>& gy = tp.grad(y);
      Tensor<S>& gx = tp.grad(x);
      for (std::size_t i = 0; i < gy.numel(); ++i) gx[i] += gy[i];
    };
  });
}

}  // namespace gridclip::ad
