#include "pirt/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "pirt/error.hpp"

namespace pirt {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

// Products run on Eigen-owned copies: Eigen picks its vectorized path from the
// runtime alignment of the operands, which would make the rounding depend on
// where the heap placed them.
template <class A, class B>
void product_into(double* out, const A& a, const B& b) {
  RowMat la = a, lb = b;
  RowMat r(la.rows(), lb.cols());
  r.noalias() = la * lb;
  std::copy(r.data(), r.data() + r.size(), out);
}

/// View of a tensor around one axis as (outer, n, inner).
struct AxisView {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  }
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

Tensor make_result(Shape shape, std::vector<double> data, bool grad) {
  return Tensor(std::move(shape), std::move(data), grad);
}

void check_finite(std::span<const double> values, const char* op) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite input");
  }
}

// --- broadcasting ---------------------------------------------------------

struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a, stride_b;  // per output axis, 0 where broadcast
  bool same = false;
};

Broadcast broadcast(const Shape& a, const Shape& b) {
  Broadcast bc;
  if (a == b) {
    bc.out = a;
    bc.same = true;
    return bc;
  }
  std::size_t r = std::max(a.size(), b.size());
  bc.out.assign(r, 1);
  bc.stride_a.assign(r, 0);
  bc.stride_b.assign(r, 0);
  auto extent = [r](const Shape& s, std::size_t i) -> std::size_t {
    std::size_t off = r - s.size();
    return i < off ? 1 : s[i - off];
  };
  for (std::size_t i = 0; i < r; ++i) {
    std::size_t ea = extent(a, i), eb = extent(b, i);
    if (ea != eb && ea != 1 && eb != 1) {
      throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    bc.out[i] = std::max(ea, eb);
  }
  std::size_t sa = 1, sb = 1;
  for (std::size_t i = r; i-- > 0;) {
    std::size_t ea = extent(a, i), eb = extent(b, i);
    bc.stride_a[i] = ea == 1 ? 0 : sa;
    bc.stride_b[i] = eb == 1 ? 0 : sb;
    sa *= ea;
    sb *= eb;
  }
  return bc;
}

/// Calls fn(out_index, a_index, b_index) for every output element.
template <typename Fn>
void for_each_broadcast(const Broadcast& bc, Fn&& fn) {
  std::size_t total = shape_numel(bc.out);
  if (bc.same) {
    for (std::size_t i = 0; i < total; ++i) fn(i, i, i);
    return;
  }
  std::size_t r = bc.out.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  std::size_t last = bc.out[r - 1], sa_last = bc.stride_a[r - 1], sb_last = bc.stride_b[r - 1];
  for (std::size_t o = 0; o < total; o += last) {
    for (std::size_t j = 0; j < last; ++j) fn(o + j, ia + j * sa_last, ib + j * sb_last);
    // advance the odometer over axes [0, r-1)
    for (std::size_t ax = r - 1; ax-- > 0;) {
      ++idx[ax];
      ia += bc.stride_a[ax];
      ib += bc.stride_b[ax];
      if (idx[ax] < bc.out[ax]) break;
      ia -= bc.stride_a[ax] * idx[ax];
      ib -= bc.stride_b[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
}

/// Generic broadcasting binary op. da/db give d(out)/d(a), d(out)/d(b).
template <typename F, typename DA, typename DB>
Tensor binary_op(const Tensor& a, const Tensor& b, F f, DA da, DB db, bool b_gets_grad = true) {
  Broadcast bc = broadcast(a.shape(), b.shape());
  std::vector<double> out(shape_numel(bc.out));
  auto av = a.data();
  auto bv = b.data();
  for_each_broadcast(bc, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = f(av[i], bv[j]); });
  bool grad_b = b_gets_grad && b.requires_grad();
  bool grad = Tape::active() && (a.requires_grad() || grad_b);
  Tensor result = make_result(bc.out, std::move(out), grad);
  if (grad) {
    Tape::active()->record({a, b}, result, [a, b, result, bc, da, db, grad_b]() mutable {
      auto g = result.grad();
      auto av = a.data();
      auto bv = b.data();
      std::vector<double> ga(a.requires_grad() ? a.numel() : 0);
      std::vector<double> gb(grad_b ? b.numel() : 0);
      for_each_broadcast(bc, [&](std::size_t o, std::size_t i, std::size_t j) {
        if (!ga.empty()) ga[i] += g[o] * da(av[i], bv[j]);
        if (!gb.empty()) gb[j] += g[o] * db(av[i], bv[j]);
      });
      if (!ga.empty()) a.accumulate_grad(ga);
      if (!gb.empty()) b.accumulate_grad(gb);
    });
  }
  return result;
}

/// Unary op; dfn(x, y) gives dy/dx.
template <typename F, typename DF>
Tensor unary_op(const Tensor& x, F f, DF df) {
  std::vector<double> out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  bool grad = needs_grad({&x});
  Tensor result = make_result(x.shape(), std::move(out), grad);
  if (grad) {
    Tape::active()->record({x}, result, [x, result, df]() mutable {
      auto g = result.grad();
      auto xv = x.data();
      auto yv = result.data();
      std::vector<double> gx(x.numel());
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = g[i] * df(xv[i], yv[i]);
      x.accumulate_grad(gx);
    });
  }
  return result;
}

}  // namespace

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
}

// --- elementwise -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor masked_mul(const Tensor& x, const Tensor& mask) {
  return binary_op(
      x, mask, [](double v, double m) { return v * m; }, [](double, double m) { return m; },
      [](double, double) { return 0.0; }, false);
}

Tensor add_scalar(const Tensor& x, double c) {
  return unary_op(x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& x, double c) {
  return unary_op(x, [c](double v) { return v * c; }, [c](double, double) { return c; });
}

Tensor neg(const Tensor& x) { return mul_scalar(x, -1.0); }

Tensor relu(const Tensor& x) {
  return unary_op(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& x) {
  return unary_op(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0.0)) throw NumericError("log of non-positive value");
  }
  return unary_op(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor& x) {
  for (double v : x.data()) {
    if (v < 0.0) throw NumericError("sqrt of negative value");
  }
  return unary_op(
      x, [](double v) { return std::sqrt(v); }, [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Tensor clamp_min(const Tensor& x, double lo) {
  return unary_op(
      x, [lo](double v) { return v < lo ? lo : v; }, [lo](double v, double) { return v < lo ? 0.0 : 1.0; });
}

// --- matrix products ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  product_into(out.data(), MapC(a.data().data(), m, k), MapC(b.data().data(), k, n));
  bool grad = needs_grad({&a, &b});
  Tensor result = make_result({m, n}, std::move(out), grad);
  if (grad) {
    Tape::active()->record({a, b}, result, [a, b, result, m, k, n]() mutable {
      MapC g(result.grad().data(), m, n);
      if (a.requires_grad()) {
        std::vector<double> ga(m * k);
        product_into(ga.data(), g, MapC(b.data().data(), k, n).transpose());
        a.accumulate_grad(ga);
      }
      if (b.requires_grad()) {
        std::vector<double> gb(k * n);
        product_into(gb.data(), MapC(a.data().data(), m, k).transpose(), g);
        b.accumulate_grad(gb);
      }
    });
  }
  return result;
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  std::size_t G = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<double> out(G * m * n);
  const double* ap = a.data().data();
  const double* bp = b.data().data();
  for (std::size_t g = 0; g < G; ++g) {
    product_into(out.data() + g * m * n, MapC(ap + g * m * k, m, k), MapC(bp + g * k * n, k, n));
  }
  bool grad = needs_grad({&a, &b});
  Tensor result = make_result({G, m, n}, std::move(out), grad);
  if (grad) {
    Tape::active()->record({a, b}, result, [a, b, result, G, m, k, n]() mutable {
      const double* gp = result.grad().data();
      const double* ap = a.data().data();
      const double* bp = b.data().data();
      if (a.requires_grad()) {
        std::vector<double> ga(G * m * k);
        for (std::size_t g = 0; g < G; ++g) {
          product_into(ga.data() + g * m * k, MapC(gp + g * m * n, m, n), MapC(bp + g * k * n, k, n).transpose());
        }
        a.accumulate_grad(ga);
      }
      if (b.requires_grad()) {
        std::vector<double> gb(G * k * n);
        for (std::size_t g = 0; g < G; ++g) {
          product_into(gb.data() + g * k * n, MapC(ap + g * m * k, m, k).transpose(), MapC(gp + g * m * n, m, n));
        }
        b.accumulate_grad(gb);
      }
    });
  }
  return result;
}

// --- convolution ---------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride) {
  if (x.rank() != 4 || weight.rank() != 4) {
    throw DimensionError("conv2d expects NHWC input and [k,k,Cin,Cout] weight, got " + shape_str(x.shape()) +
                         " and " + shape_str(weight.shape()));
  }
  std::size_t k = weight.dim(0);
  if (weight.dim(1) != k || (k != 1 && k != 3)) {
    throw DimensionError("conv2d supports 1x1 and 3x3 kernels, got " + shape_str(weight.shape()));
  }
  std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), Cin = x.dim(3), Cout = weight.dim(3);
  if (weight.dim(2) != Cin) {
    throw DimensionError("conv2d channel mismatch: input " + shape_str(x.shape()) + ", weight " +
                         shape_str(weight.shape()));
  }
  if (bias.numel() != Cout) throw DimensionError("conv2d bias must have " + std::to_string(Cout) + " entries");
  if (stride == 0) throw DimensionError("conv2d stride must be positive");
  std::size_t pad = (k - 1) / 2;
  std::size_t Ho = (H + 2 * pad - k) / stride + 1;
  std::size_t Wo = (W + 2 * pad - k) / stride + 1;
  std::size_t rows = B * Ho * Wo, cols_n = k * k * Cin;

  bool direct = (k == 1 && stride == 1);
  std::vector<double> cols;
  if (!direct) {
    cols.assign(rows * cols_n, 0.0);
    const double* xp = x.data().data();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t oy = 0; oy < Ho; ++oy)
        for (std::size_t ox = 0; ox < Wo; ++ox) {
          double* row = cols.data() + ((b * Ho + oy) * Wo + ox) * cols_n;
          for (std::size_t ky = 0; ky < k; ++ky) {
            long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
            if (iy < 0 || iy >= static_cast<long>(H)) continue;
            for (std::size_t kx = 0; kx < k; ++kx) {
              long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
              if (ix < 0 || ix >= static_cast<long>(W)) continue;
              const double* src = xp + ((b * H + iy) * W + ix) * Cin;
              std::copy(src, src + Cin, row + (ky * k + kx) * Cin);
            }
          }
        }
  }
  const double* cp = direct ? x.data().data() : cols.data();
  std::vector<double> out(rows * Cout);
  product_into(out.data(), MapC(cp, rows, cols_n), MapC(weight.data().data(), cols_n, Cout));
  Map(out.data(), rows, Cout).rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), Cout);

  bool grad = needs_grad({&x, &weight, &bias});
  Tensor result = make_result({B, Ho, Wo, Cout}, std::move(out), grad);
  if (grad) {
    Tape::active()->record({x, weight, bias}, result,
                           [x, weight, bias, result, cols = std::move(cols), direct, B, H, W, Cin, Cout, Ho, Wo, k,
                            pad, stride, rows, cols_n]() mutable {
                             MapC g(result.grad().data(), rows, Cout);
                             const double* cp = direct ? x.data().data() : cols.data();
                             if (weight.requires_grad()) {
                               std::vector<double> gw(cols_n * Cout);
                               product_into(gw.data(), MapC(cp, rows, cols_n).transpose(), g);
                               weight.accumulate_grad(gw);
                             }
                             if (bias.requires_grad()) {
                               std::vector<double> gb(Cout);
                               const double* gp = result.grad().data();
                               for (std::size_t r = 0; r < rows; ++r)
                                 for (std::size_t c = 0; c < Cout; ++c) gb[c] += gp[r * Cout + c];
                               bias.accumulate_grad(gb);
                             }
                             if (x.requires_grad()) {
                               std::vector<double> gcols(rows * cols_n);
                               product_into(gcols.data(), g, MapC(weight.data().data(), cols_n, Cout).transpose());
                               if (direct) {
                                 x.accumulate_grad(gcols);
                                 return;
                               }
                               std::vector<double> gx(B * H * W * Cin, 0.0);
                               for (std::size_t b = 0; b < B; ++b)
                                 for (std::size_t oy = 0; oy < Ho; ++oy)
                                   for (std::size_t ox = 0; ox < Wo; ++ox) {
                                     const double* row = gcols.data() + ((b * Ho + oy) * Wo + ox) * cols_n;
                                     for (std::size_t ky = 0; ky < k; ++ky) {
                                       long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                                       if (iy < 0 || iy >= static_cast<long>(H)) continue;
                                       for (std::size_t kx = 0; kx < k; ++kx) {
                                         long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                                         if (ix < 0 || ix >= static_cast<long>(W)) continue;
                                         double* dst = gx.data() + ((b * H + iy) * W + ix) * Cin;
                                         const double* src = row + (ky * k + kx) * Cin;
                                         for (std::size_t c = 0; c < Cin; ++c) dst[c] += src[c];
                                       }
                                     }
                                   }
                               x.accumulate_grad(gx);
                             }
                           });
  }
  return result;
}

// --- pooling -----------------------------------------------------------------

namespace {

struct PoolGeometry {
  std::size_t B, H, W, C, Ho, Wo;
};

PoolGeometry pool_geometry(const Tensor& x, const PoolWindow& w, const char* op) {
  if (x.rank() != 4) throw DimensionError(std::string(op) + " expects NHWC input, got " + shape_str(x.shape()));
  if (w.kernel_h == 0 || w.kernel_w == 0 || w.stride_h == 0 || w.stride_w == 0) {
    throw DimensionError(std::string(op) + ": kernel and stride must be positive");
  }
  if (w.pad_h >= w.kernel_h || w.pad_w >= w.kernel_w) {
    throw DimensionError(std::string(op) + ": padding must be smaller than the kernel");
  }
  PoolGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), 0, 0};
  if (g.H + 2 * w.pad_h < w.kernel_h || g.W + 2 * w.pad_w < w.kernel_w) {
    throw DimensionError(std::string(op) + ": window larger than input " + shape_str(x.shape()));
  }
  g.Ho = (g.H + 2 * w.pad_h - w.kernel_h) / w.stride_h + 1;
  g.Wo = (g.W + 2 * w.pad_w - w.kernel_w) / w.stride_w + 1;
  return g;
}

}  // namespace

Tensor max_pool2d(const Tensor& x, const PoolWindow& w) {
  auto geo = pool_geometry(x, w, "max_pool2d");
  auto [B, H, W, C, Ho, Wo] = geo;
  std::vector<double> out(B * Ho * Wo * C);
  std::vector<std::size_t> arg(out.size());
  const double* xp = x.data().data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        std::size_t o = ((b * Ho + oy) * Wo + ox) * C;
        for (std::size_t c = 0; c < C; ++c) {
          out[o + c] = -std::numeric_limits<double>::infinity();
          arg[o + c] = 0;
        }
        for (std::size_t ky = 0; ky < w.kernel_h; ++ky) {
          long iy = static_cast<long>(oy * w.stride_h + ky) - static_cast<long>(w.pad_h);
          if (iy < 0 || iy >= static_cast<long>(H)) continue;
          for (std::size_t kx = 0; kx < w.kernel_w; ++kx) {
            long ix = static_cast<long>(ox * w.stride_w + kx) - static_cast<long>(w.pad_w);
            if (ix < 0 || ix >= static_cast<long>(W)) continue;
            std::size_t base = ((b * H + iy) * W + ix) * C;
            for (std::size_t c = 0; c < C; ++c) {
              if (xp[base + c] > out[o + c]) {
                out[o + c] = xp[base + c];
                arg[o + c] = base + c;
              }
            }
          }
        }
      }
  bool grad = needs_grad({&x});
  Tensor result = make_result({B, Ho, Wo, C}, std::move(out), grad);
  if (grad) {
    Tape::active()->record({x}, result, [x, result, arg = std::move(arg)]() mutable {
      auto g = result.grad();
      std::vector<double> gx(x.numel(), 0.0);
      for (std::size_t i = 0; i < g.size(); ++i) gx[arg[i]] += g[i];
      x.accumulate_grad(gx);
    });
  }
  return result;
}

Tensor avg_pool2d(const Tensor& x, const PoolWindow& w) {
  auto geo = pool_geometry(x, w, "avg_pool2d");
  auto [B, H, W, C, Ho, Wo] = geo;
  std::vector<double> out(B * Ho * Wo * C, 0.0);
  std::vector<double> counts(Ho * Wo, 0.0);
  const double* xp = x.data().data();
  auto window_range = [&](std::size_t o, std::size_t stride, std::size_t pad, std::size_t kernel,
                          std::size_t limit) {
    long lo = static_cast<long>(o * stride) - static_cast<long>(pad);
    long hi = lo + static_cast<long>(kernel);
    return std::pair<std::size_t, std::size_t>(static_cast<std::size_t>(std::max(lo, 0L)),
                                               static_cast<std::size_t>(std::min(hi, static_cast<long>(limit))));
  };
  for (std::size_t oy = 0; oy < Ho; ++oy)
    for (std::size_t ox = 0; ox < Wo; ++ox) {
      auto [y0, y1] = window_range(oy, w.stride_h, w.pad_h, w.kernel_h, H);
      auto [x0, x1] = window_range(ox, w.stride_w, w.pad_w, w.kernel_w, W);
      counts[oy * Wo + ox] = static_cast<double>((y1 - y0) * (x1 - x0));
      for (std::size_t b = 0; b < B; ++b) {
        double* dst = out.data() + ((b * Ho + oy) * Wo + ox) * C;
        for (std::size_t iy = y0; iy < y1; ++iy)
          for (std::size_t ix = x0; ix < x1; ++ix) {
            const double* src = xp + ((b * H + iy) * W + ix) * C;
            for (std::size_t c = 0; c < C; ++c) dst[c] += src[c];
          }
        for (std::size_t c = 0; c < C; ++c) dst[c] /= counts[oy * Wo + ox];
      }
    }
  bool grad = needs_grad({&x});
  Tensor result = make_result({B, Ho, Wo, C}, std::move(out), grad);
  if (grad) {
    Tape::active()->record({x}, result, [x, result, w, geo, counts, window_range]() mutable {
      auto [B, H, W, C, Ho, Wo] = geo;
      auto g = result.grad();
      std::vector<double> gx(x.numel(), 0.0);
      for (std::size_t oy = 0; oy < Ho; ++oy)
        for (std::size_t ox = 0; ox < Wo; ++ox) {
          auto [y0, y1] = window_range(oy, w.stride_h, w.pad_h, w.kernel_h, H);
          auto [x0, x1] = window_range(ox, w.stride_w, w.pad_w, w.kernel_w, W);
          double inv = 1.0 / counts[oy * Wo + ox];
          for (std::size_t b = 0; b < B; ++b) {
            const double* src = g.data() + ((b * Ho + oy) * Wo + ox) * C;
            for (std::size_t iy = y0; iy < y1; ++iy)
              for (std::size_t ix = x0; ix < x1; ++ix) {
                double* dst = gx.data() + ((b * H + iy) * W + ix) * C;
                for (std::size_t c = 0; c < C; ++c) dst[c] += src[c] * inv;
              }
          }
        }
      x.accumulate_grad(gx);
    });
  }
  return result;
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 4) throw DimensionError("global_avg_pool expects NHWC input, got " + shape_str(x.shape()));
  std::size_t B = x.dim(0), C = x.dim(3);
  return reshape(mean(reshape(x, {B, x.dim(1) * x.dim(2), C}), 1), {B, C});
}

// --- normalization -------------------------------------------------------------

RunningStats RunningStats::init(std::size_t channels) {
  return RunningStats{Tensor::zeros({channels}), Tensor::full({channels}, 1.0)};
}

namespace {

/// Shared normalize/affine kernel over `groups` independent (rows x channels)
/// blocks. Statistics are per (group, channel) over the rows of the group.
/// When `fixed_mean`/`fixed_var` are given, they replace the batch statistics.
Tensor normalize_blocks(const Tensor& x, const Tensor& gamma, const Tensor& beta, std::size_t groups,
                        std::size_t rows, std::size_t C, double eps, const std::vector<double>* fixed_mean,
                        const std::vector<double>* fixed_var, std::vector<double>* batch_mean,
                        std::vector<double>* batch_var) {
  if (gamma.numel() != C || beta.numel() != C) {
    throw DimensionError("normalization parameters must have " + std::to_string(C) + " entries");
  }
  const double* xp = x.data().data();
  std::vector<double> meanv(groups * C, 0.0), varv(groups * C, 0.0);
  if (fixed_mean) {
    for (std::size_t g = 0; g < groups; ++g)
      for (std::size_t c = 0; c < C; ++c) {
        meanv[g * C + c] = (*fixed_mean)[c];
        varv[g * C + c] = (*fixed_var)[c];
      }
  } else {
    for (std::size_t g = 0; g < groups; ++g) {
      for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xp + (g * rows + r) * C;
        for (std::size_t c = 0; c < C; ++c) meanv[g * C + c] += row[c];
      }
      for (std::size_t c = 0; c < C; ++c) meanv[g * C + c] /= static_cast<double>(rows);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xp + (g * rows + r) * C;
        for (std::size_t c = 0; c < C; ++c) {
          double d = row[c] - meanv[g * C + c];
          varv[g * C + c] += d * d;
        }
      }
      for (std::size_t c = 0; c < C; ++c) varv[g * C + c] /= static_cast<double>(rows);
    }
    if (batch_mean) *batch_mean = meanv;
    if (batch_var) *batch_var = varv;
  }
  std::vector<double> invstd(groups * C);
  for (std::size_t i = 0; i < invstd.size(); ++i) invstd[i] = 1.0 / std::sqrt(varv[i] + eps);
  std::vector<double> xhat(x.numel()), out(x.numel());
  const double* gp = gamma.data().data();
  const double* bp = beta.data().data();
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t r = 0; r < rows; ++r) {
      std::size_t base = (g * rows + r) * C;
      for (std::size_t c = 0; c < C; ++c) {
        double h = (xp[base + c] - meanv[g * C + c]) * invstd[g * C + c];
        xhat[base + c] = h;
        out[base + c] = gp[c] * h + bp[c];
      }
    }
  bool grad = needs_grad({&x, &gamma, &beta});
  Tensor result = make_result(x.shape(), std::move(out), grad);
  if (grad) {
    bool batch_stats = fixed_mean == nullptr;
    Tape::active()->record({x, gamma, beta}, result,
                           [x, gamma, beta, result, xhat = std::move(xhat), invstd = std::move(invstd), groups, rows,
                            C, batch_stats]() mutable {
                             auto g = result.grad();
                             const double* gp = gamma.data().data();
                             std::vector<double> ggamma(C, 0.0), gbeta(C, 0.0);
                             for (std::size_t i = 0; i < g.size(); ++i) {
                               ggamma[i % C] += g[i] * xhat[i];
                               gbeta[i % C] += g[i];
                             }
                             if (gamma.requires_grad()) gamma.accumulate_grad(ggamma);
                             if (beta.requires_grad()) beta.accumulate_grad(gbeta);
                             if (!x.requires_grad()) return;
                             std::vector<double> gx(x.numel());
                             if (!batch_stats) {
                               for (std::size_t gi = 0; gi < groups; ++gi)
                                 for (std::size_t r = 0; r < rows; ++r) {
                                   std::size_t base = (gi * rows + r) * C;
                                   for (std::size_t c = 0; c < C; ++c)
                                     gx[base + c] = g[base + c] * gp[c] * invstd[gi * C + c];
                                 }
                               x.accumulate_grad(gx);
                               return;
                             }
                             double n = static_cast<double>(rows);
                             std::vector<double> s1(C), s2(C);
                             for (std::size_t gi = 0; gi < groups; ++gi) {
                               std::fill(s1.begin(), s1.end(), 0.0);
                               std::fill(s2.begin(), s2.end(), 0.0);
                               for (std::size_t r = 0; r < rows; ++r) {
                                 std::size_t base = (gi * rows + r) * C;
                                 for (std::size_t c = 0; c < C; ++c) {
                                   double dh = g[base + c] * gp[c];
                                   s1[c] += dh;
                                   s2[c] += dh * xhat[base + c];
                                 }
                               }
                               for (std::size_t r = 0; r < rows; ++r) {
                                 std::size_t base = (gi * rows + r) * C;
                                 for (std::size_t c = 0; c < C; ++c) {
                                   double dh = g[base + c] * gp[c];
                                   gx[base + c] =
                                       invstd[gi * C + c] / n * (n * dh - s1[c] - xhat[base + c] * s2[c]);
                                 }
                               }
                             }
                             x.accumulate_grad(gx);
                           });
  }
  return result;
}

void update_running(RunningStats& stats, const std::vector<double>& batch_mean, const std::vector<double>& batch_var,
                    std::size_t groups, std::size_t C, double unbias) {
  auto rm = stats.mean.mutable_data();
  auto rv = stats.var.mutable_data();
  for (std::size_t c = 0; c < C; ++c) {
    double m = 0.0, v = 0.0;
    for (std::size_t g = 0; g < groups; ++g) {
      m += batch_mean[g * C + c];
      v += batch_var[g * C + c];
    }
    m /= static_cast<double>(groups);
    v = v / static_cast<double>(groups) * unbias;
    rm[c] = (1.0 - stats.momentum) * rm[c] + stats.momentum * m;
    rv[c] = (1.0 - stats.momentum) * rv[c] + stats.momentum * v;
  }
}

std::vector<double> to_vector(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, RunningStats& stats, Mode mode) {
  if (x.rank() < 2) throw DimensionError("batch_norm expects rank >= 2, got " + shape_str(x.shape()));
  std::size_t C = x.shape().back();
  std::size_t rows = x.numel() / C;
  if (stats.mean.numel() != C) throw DimensionError("batch_norm running stats have wrong channel count");
  if (mode == Mode::Eval) {
    auto m = to_vector(stats.mean), v = to_vector(stats.var);
    return normalize_blocks(x, gamma, beta, 1, rows, C, stats.eps, &m, &v, nullptr, nullptr);
  }
  std::vector<double> bm, bv;
  Tensor out = normalize_blocks(x, gamma, beta, 1, rows, C, stats.eps, nullptr, nullptr, &bm, &bv);
  double unbias = rows > 1 ? static_cast<double>(rows) / static_cast<double>(rows - 1) : 1.0;
  update_running(stats, bm, bv, 1, C, unbias);
  return out;
}

Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, RunningStats& stats, Mode mode) {
  if (x.rank() < 3) throw DimensionError("instance_norm expects [B,...,C], got " + shape_str(x.shape()));
  std::size_t B = x.dim(0), C = x.shape().back();
  std::size_t rows = x.numel() / (B * C);
  if (stats.mean.numel() != C) throw DimensionError("instance_norm running stats have wrong channel count");
  if (mode == Mode::Eval) {
    auto m = to_vector(stats.mean), v = to_vector(stats.var);
    return normalize_blocks(x, gamma, beta, B, rows, C, stats.eps, &m, &v, nullptr, nullptr);
  }
  std::vector<double> bm, bv;
  Tensor out = normalize_blocks(x, gamma, beta, B, rows, C, stats.eps, nullptr, nullptr, &bm, &bv);
  double unbias = rows > 1 ? static_cast<double>(rows) / static_cast<double>(rows - 1) : 1.0;
  update_running(stats, bm, bv, B, C, unbias);
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  std::size_t C = x.shape().back();
  std::size_t rows = x.numel() / C;
  if (gamma.numel() != C || beta.numel() != C) {
    throw DimensionError("layer_norm parameters must have " + std::to_string(C) + " entries");
  }
  const double* xp = x.data().data();
  std::vector<double> xhat(x.numel()), invstd(rows), out(x.numel());
  const double* gp = gamma.data().data();
  const double* bp = beta.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xp + r * C;
    double m = 0.0;
    for (std::size_t c = 0; c < C; ++c) m += row[c];
    m /= static_cast<double>(C);
    double v = 0.0;
    for (std::size_t c = 0; c < C; ++c) v += (row[c] - m) * (row[c] - m);
    v /= static_cast<double>(C);
    invstd[r] = 1.0 / std::sqrt(v + eps);
    for (std::size_t c = 0; c < C; ++c) {
      xhat[r * C + c] = (row[c] - m) * invstd[r];
      out[r * C + c] = gp[c] * xhat[r * C + c] + bp[c];
    }
  }
  bool grad = needs_grad({&x, &gamma, &beta});
  Tensor result = make_result(x.shape(), std::move(out), grad);
  if (grad) {
    Tape::active()->record({x, gamma, beta}, result,
                           [x, gamma, beta, result, xhat = std::move(xhat), invstd = std::move(invstd), rows,
                            C]() mutable {
                             auto g = result.grad();
                             const double* gp = gamma.data().data();
                             if (gamma.requires_grad() || beta.requires_grad()) {
                               std::vector<double> gg(C, 0.0), gb(C, 0.0);
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                 gg[i % C] += g[i] * xhat[i];
                                 gb[i % C] += g[i];
                               }
                               if (gamma.requires_grad()) gamma.accumulate_grad(gg);
                               if (beta.requires_grad()) beta.accumulate_grad(gb);
                             }
                             if (!x.requires_grad()) return;
                             std::vector<double> gx(x.numel());
                             double n = static_cast<double>(C);
                             for (std::size_t r = 0; r < rows; ++r) {
                               double s1 = 0.0, s2 = 0.0;
                               for (std::size_t c = 0; c < C; ++c) {
                                 double dh = g[r * C + c] * gp[c];
                                 s1 += dh;
                                 s2 += dh * xhat[r * C + c];
                               }
                               for (std::size_t c = 0; c < C; ++c) {
                                 double dh = g[r * C + c] * gp[c];
                                 gx[r * C + c] = invstd[r] / n * (n * dh - s1 - xhat[r * C + c] * s2);
                               }
                             }
                             x.accumulate_grad(gx);
                           });
  }
  return result;
}

Tensor dropout(const Tensor& x, double p, const ForwardContext& ctx) {
  if (p < 0.0 || p >= 1.0) throw ParameterError("dropout rate must lie in [0, 1)");
  if (!ctx.training() || p == 0.0) return x;
  if (!ctx.rng) throw ContractError("train-mode dropout needs a random generator");
  std::vector<double> mask(x.numel());
  double keep = 1.0 / (1.0 - p);
  for (auto& m : mask) m = uniform01(*ctx.rng) >= p ? keep : 0.0;
  return masked_mul(x, Tensor(x.shape(), std::move(mask)));
}

// --- shape ops -------------------------------------------------------------------

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const Shape& ref = parts[0].shape();
  if (axis >= ref.size()) throw DimensionError("concat axis out of range for " + shape_str(ref));
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != ref.size()) throw DimensionError("concat rank mismatch");
    for (std::size_t i = 0; i < ref.size(); ++i) {
      if (i != axis && p.shape()[i] != ref[i]) {
        throw DimensionError("concat shape mismatch: " + shape_str(ref) + " vs " + shape_str(p.shape()));
      }
    }
    out_shape[axis] += p.shape()[axis];
  }
  AxisView v = axis_view(out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::size_t n = p.shape()[axis];
    auto src = p.data();
    for (std::size_t o = 0; o < v.outer; ++o) {
      std::copy(src.begin() + static_cast<std::ptrdiff_t>(o * n * v.inner),
                src.begin() + static_cast<std::ptrdiff_t>((o + 1) * n * v.inner),
                out.begin() + static_cast<std::ptrdiff_t>((o * v.n + offset) * v.inner));
    }
    offset += n;
  }
  bool grad = Tape::active() &&
              std::any_of(parts.begin(), parts.end(), [](const Tensor& t) { return t.requires_grad(); });
  Tensor result = make_result(out_shape, std::move(out), grad);
  if (grad) {
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    Tape::active()->record(inputs, result, [inputs, result, v]() mutable {
      auto g = result.grad();
      std::size_t offset = 0;
      for (auto& p : inputs) {
        std::size_t extent = p.numel() / (v.outer * v.inner);
        if (p.requires_grad()) {
          std::vector<double> gp(p.numel());
          for (std::size_t o = 0; o < v.outer; ++o) {
            std::copy(g.begin() + static_cast<std::ptrdiff_t>((o * v.n + offset) * v.inner),
                      g.begin() + static_cast<std::ptrdiff_t>((o * v.n + offset + extent) * v.inner),
                      gp.begin() + static_cast<std::ptrdiff_t>(o * extent * v.inner));
          }
          p.accumulate_grad(gp);
        }
        offset += extent;
      }
    });
  }
  return result;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  AxisView v = axis_view(x.shape(), axis);
  if (begin >= end || end > v.n) {
    throw DimensionError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for " +
                         shape_str(x.shape()));
  }
  std::size_t n = end - begin;
  Shape out_shape = x.shape();
  out_shape[axis] = n;
  std::vector<double> out(v.outer * n * v.inner);
  auto src = x.data();
  for (std::size_t o = 0; o < v.outer; ++o) {
    std::copy(src.begin() + static_cast<std::ptrdiff_t>((o * v.n + begin) * v.inner),
              src.begin() + static_cast<std::ptrdiff_t>((o * v.n + end) * v.inner),
              out.begin() + static_cast<std::ptrdiff_t>(o * n * v.inner));
  }
  bool grad = needs_grad({&x});
  Tensor result = make_result(out_shape, std::move(out), grad);
  if (grad) {
    Tape::active()->record({x}, result, [x, result, v, begin, n]() mutable {
      auto g = result.grad();
      std::vector<double> gx(x.numel(), 0.0);
      for (std::size_t o = 0; o < v.outer; ++o) {
        std::copy(g.begin() + static_cast<std::ptrdiff_t>(o * n * v.inner),
                  g.begin() + static_cast<std::ptrdiff_t>((o + 1) * n * v.inner),
                  gx.begin() + static_cast<std::ptrdiff_t>((o * v.n + begin) * v.inner));
      }
      x.accumulate_grad(gx);
    });
  }
  return result;
}

std::vector<Tensor> chunk(const Tensor& x, std::size_t pieces, std::size_t axis) {
  AxisView v = axis_view(x.shape(), axis);
  if (pieces == 0 || v.n % pieces != 0) {
    throw DimensionError("chunk: extent " + std::to_string(v.n) + " not divisible into " + std::to_string(pieces));
  }
  std::size_t step = v.n / pieces;
  std::vector<Tensor> out;
  out.reserve(pieces);
  for (std::size_t i = 0; i < pieces; ++i) out.push_back(slice(x, axis, i * step, (i + 1) * step));
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  bool grad = needs_grad({&x});
  Tensor result = make_result(std::move(shape), {x.data().begin(), x.data().end()}, grad);
  if (grad) {
    Tape::active()->record({x}, result, [x, result]() mutable { x.accumulate_grad(result.grad()); });
  }
  return result;
}

Tensor transpose(const Tensor& x, std::size_t axis_a, std::size_t axis_b) {
  const Shape& in = x.shape();
  if (axis_a >= in.size() || axis_b >= in.size()) {
    throw DimensionError("transpose axes out of range for " + shape_str(in));
  }
  Shape out_shape = in;
  std::swap(out_shape[axis_a], out_shape[axis_b]);
  std::size_t r = in.size();
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r - 1; i-- > 0;) in_stride[i] = in_stride[i + 1] * in[i + 1];
  // stride into the input for each output axis
  std::vector<std::size_t> src_stride = in_stride;
  std::swap(src_stride[axis_a], src_stride[axis_b]);
  std::vector<std::size_t> perm_index(x.numel());
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < perm_index.size(); ++o) {
    perm_index[o] = src;
    for (std::size_t ax = r; ax-- > 0;) {
      ++idx[ax];
      src += src_stride[ax];
      if (idx[ax] < out_shape[ax]) break;
      src -= src_stride[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  std::vector<double> out(x.numel());
  auto xv = x.data();
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = xv[perm_index[o]];
  bool grad = needs_grad({&x});
  Tensor result = make_result(out_shape, std::move(out), grad);
  if (grad) {
    Tape::active()->record({x}, result, [x, result, perm_index = std::move(perm_index)]() mutable {
      auto g = result.grad();
      std::vector<double> gx(x.numel());
      for (std::size_t o = 0; o < g.size(); ++o) gx[perm_index[o]] = g[o];
      x.accumulate_grad(gx);
    });
  }
  return result;
}

// --- reductions --------------------------------------------------------------------

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  bool grad = needs_grad({&x});
  Tensor result = make_result({1}, {s}, grad);
  if (grad) {
    Tape::active()->record({x}, result, [x, result]() mutable {
      std::vector<double> gx(x.numel(), result.grad()[0]);
      x.accumulate_grad(gx);
    });
  }
  return result;
}

Tensor mean(const Tensor& x) { return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel())); }

namespace {
Shape reduced_shape(const Shape& in, std::size_t axis, bool keepdim) {
  Shape out = in;
  if (keepdim) {
    out[axis] = 1;
  } else {
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
    if (out.empty()) out.push_back(1);
  }
  return out;
}
}  // namespace

Tensor sum(const Tensor& x, std::size_t axis, bool keepdim) {
  AxisView v = axis_view(x.shape(), axis);
  std::vector<double> out(v.outer * v.inner, 0.0);
  auto xv = x.data();
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t j = 0; j < v.n; ++j)
      for (std::size_t i = 0; i < v.inner; ++i) out[o * v.inner + i] += xv[(o * v.n + j) * v.inner + i];
  bool grad = needs_grad({&x});
  Tensor result = make_result(reduced_shape(x.shape(), axis, keepdim), std::move(out), grad);
  if (grad) {
    Tape::active()->record({x}, result, [x, result, v]() mutable {
      auto g = result.grad();
      std::vector<double> gx(x.numel());
      for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t j = 0; j < v.n; ++j)
          for (std::size_t i = 0; i < v.inner; ++i) gx[(o * v.n + j) * v.inner + i] = g[o * v.inner + i];
      x.accumulate_grad(gx);
    });
  }
  return result;
}

Tensor mean(const Tensor& x, std::size_t axis, bool keepdim) {
  AxisView v = axis_view(x.shape(), axis);
  return mul_scalar(sum(x, axis, keepdim), 1.0 / static_cast<double>(v.n));
}

MaxResult max(const Tensor& x, std::size_t axis, bool keepdim) {
  AxisView v = axis_view(x.shape(), axis);
  std::vector<double> out(v.outer * v.inner);
  std::vector<std::size_t> arg(out.size(), 0);
  auto xv = x.data();
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t i = 0; i < v.inner; ++i) {
      double best = xv[o * v.n * v.inner + i];
      std::size_t bi = 0;
      for (std::size_t j = 1; j < v.n; ++j) {
        double val = xv[(o * v.n + j) * v.inner + i];
        if (val > best) {
          best = val;
          bi = j;
        }
      }
      out[o * v.inner + i] = best;
      arg[o * v.inner + i] = bi;
    }
  bool grad = needs_grad({&x});
  Tensor result = make_result(reduced_shape(x.shape(), axis, keepdim), std::move(out), grad);
  if (grad) {
    Tape::active()->record({x}, result, [x, result, v, arg]() mutable {
      auto g = result.grad();
      std::vector<double> gx(x.numel(), 0.0);
      for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t i = 0; i < v.inner; ++i)
          gx[(o * v.n + arg[o * v.inner + i]) * v.inner + i] += g[o * v.inner + i];
      x.accumulate_grad(gx);
    });
  }
  return MaxResult{result, std::move(arg)};
}

Tensor gather(const Tensor& x, std::span<const std::size_t> index, Shape shape) {
  if (shape_numel(shape) != index.size()) throw DimensionError("gather: index count does not match shape");
  std::vector<double> out(index.size());
  auto xv = x.data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= x.numel()) throw DimensionError("gather: index out of range");
    out[i] = xv[index[i]];
  }
  bool grad = needs_grad({&x});
  Tensor result = make_result(std::move(shape), std::move(out), grad);
  if (grad) {
    std::vector<std::size_t> idx(index.begin(), index.end());
    Tape::active()->record({x}, result, [x, result, idx = std::move(idx)]() mutable {
      auto g = result.grad();
      std::vector<double> gx(x.numel(), 0.0);
      for (std::size_t i = 0; i < idx.size(); ++i) gx[idx[i]] += g[i];
      x.accumulate_grad(gx);
    });
  }
  return result;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  check_finite(x.data(), "softmax");
  AxisView v = axis_view(x.shape(), axis);
  std::vector<double> out(x.numel());
  auto xv = x.data();
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t i = 0; i < v.inner; ++i) {
      auto at = [&](std::size_t j) { return (o * v.n + j) * v.inner + i; };
      double m = xv[at(0)];
      for (std::size_t j = 1; j < v.n; ++j) m = std::max(m, xv[at(j)]);
      double s = 0.0;
      for (std::size_t j = 0; j < v.n; ++j) {
        out[at(j)] = std::exp(xv[at(j)] - m);
        s += out[at(j)];
      }
      for (std::size_t j = 0; j < v.n; ++j) out[at(j)] /= s;
    }
  bool grad = needs_grad({&x});
  Tensor result = make_result(x.shape(), std::move(out), grad);
  if (grad) {
    Tape::active()->record({x}, result, [x, result, v]() mutable {
      auto g = result.grad();
      auto y = result.data();
      std::vector<double> gx(x.numel());
      for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t i = 0; i < v.inner; ++i) {
          auto at = [&](std::size_t j) { return (o * v.n + j) * v.inner + i; };
          double dot = 0.0;
          for (std::size_t j = 0; j < v.n; ++j) dot += g[at(j)] * y[at(j)];
          for (std::size_t j = 0; j < v.n; ++j) gx[at(j)] = y[at(j)] * (g[at(j)] - dot);
        }
      x.accumulate_grad(gx);
    });
  }
  return result;
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  check_finite(x.data(), "log_softmax");
  AxisView v = axis_view(x.shape(), axis);
  std::vector<double> out(x.numel());
  auto xv = x.data();
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t i = 0; i < v.inner; ++i) {
      auto at = [&](std::size_t j) { return (o * v.n + j) * v.inner + i; };
      double m = xv[at(0)];
      for (std::size_t j = 1; j < v.n; ++j) m = std::max(m, xv[at(j)]);
      double s = 0.0;
      for (std::size_t j = 0; j < v.n; ++j) s += std::exp(xv[at(j)] - m);
      double lse = m + std::log(s);
      for (std::size_t j = 0; j < v.n; ++j) out[at(j)] = xv[at(j)] - lse;
    }
  bool grad = needs_grad({&x});
  Tensor result = make_result(x.shape(), std::move(out), grad);
  if (grad) {
    Tape::active()->record({x}, result, [x, result, v]() mutable {
      auto g = result.grad();
      auto y = result.data();
      std::vector<double> gx(x.numel());
      for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t i = 0; i < v.inner; ++i) {
          auto at = [&](std::size_t j) { return (o * v.n + j) * v.inner + i; };
          double gs = 0.0;
          for (std::size_t j = 0; j < v.n; ++j) gs += g[at(j)];
          for (std::size_t j = 0; j < v.n; ++j) gx[at(j)] = g[at(j)] - std::exp(y[at(j)]) * gs;
        }
      x.accumulate_grad(gx);
    });
  }
  return result;
}

std::vector<std::string> primitive_set() {
  return {"add",        "sub",         "mul",           "div",        "masked_mul",  "add_scalar",
          "mul_scalar", "neg",         "relu",          "sigmoid",    "exp",         "log",
          "sqrt",       "clamp_min",   "matmul",        "bmm",        "conv2d_1x1",  "conv2d_3x3",
          "max_pool2d", "avg_pool2d",  "global_avg_pool", "batch_norm", "instance_norm", "layer_norm",
          "dropout",    "concat",      "chunk",         "slice",      "reshape",     "transpose",
          "sum",        "mean",        "max",           "gather",     "softmax",     "log_softmax"};
}

}  // namespace pirt
