#include "qtn/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

namespace qtn {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

// Upper bound on im2col buffer entries per tile.
constexpr std::size_t kMaxColumnEntries = std::size_t{1} << 22;

struct ConvGeometry {
  std::size_t n, ci, co, k, pad, h, w;
  std::size_t patch() const { return ci * k * k; }
  std::size_t tile_rows() const {
    const std::size_t per_row = patch() * w;
    return std::clamp<std::size_t>(kMaxColumnEntries / std::max<std::size_t>(per_row, 1), 1, h);
  }
};

template <typename T>
ConvGeometry check_conv(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias) {
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  if (ws.h != ws.w || ws.h % 2 == 0) {
    throw ShapeError("conv2d: kernel must be square with odd size, got " + to_string(ws));
  }
  if (ws.c != xs.c) {
    throw ShapeError("conv2d: weight " + to_string(ws) + " expects " + std::to_string(ws.c) +
                     " input channels, input " + to_string(xs) + " has " + std::to_string(xs.c));
  }
  if (bias != nullptr && (bias->size() != ws.n)) {
    throw ShapeError("conv2d: bias " + to_string(bias->shape()) + " does not match " +
                     std::to_string(ws.n) + " output channels");
  }
  return {xs.n, xs.c, ws.n, ws.h, (ws.h - 1) / 2, xs.h, xs.w};
}

// col(K, rows * w) for output rows [y0, y0 + rows) of one sample.
template <typename T>
void im2col(const T* x, const ConvGeometry& g, std::size_t y0, std::size_t rows, T* col) {
  const std::size_t cols = rows * g.w;
  const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(g.h);
  const std::ptrdiff_t w = static_cast<std::ptrdiff_t>(g.w);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t c = 0; c < g.ci; ++c) {
    const T* xp = x + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        T* row = col + ((c * g.k + ky) * g.k + kx) * cols;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        const std::ptrdiff_t x_lo = std::max<std::ptrdiff_t>(0, -dx);
        const std::ptrdiff_t x_hi = std::min<std::ptrdiff_t>(w, w - dx);
        for (std::size_t r = 0; r < rows; ++r) {
          T* dst = row + r * g.w;
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y0 + r + ky) - pad;
          if (iy < 0 || iy >= h || x_lo >= x_hi) {
            std::fill(dst, dst + g.w, T(0));
            continue;
          }
          std::fill(dst, dst + x_lo, T(0));
          std::copy(xp + iy * w + x_lo + dx, xp + iy * w + x_hi + dx, dst + x_lo);
          std::fill(dst + x_hi, dst + w, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, std::size_t y0, std::size_t rows, T* dx_plane) {
  const std::size_t cols = rows * g.w;
  const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(g.h);
  const std::ptrdiff_t w = static_cast<std::ptrdiff_t>(g.w);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t c = 0; c < g.ci; ++c) {
    T* xp = dx_plane + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const T* row = col + ((c * g.k + ky) * g.k + kx) * cols;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        const std::ptrdiff_t x_lo = std::max<std::ptrdiff_t>(0, -dx);
        const std::ptrdiff_t x_hi = std::min<std::ptrdiff_t>(w, w - dx);
        for (std::size_t r = 0; r < rows; ++r) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y0 + r + ky) - pad;
          if (iy < 0 || iy >= h) continue;
          const T* src = row + r * g.w;
          T* dst = xp + iy * w + dx;
          for (std::ptrdiff_t x = x_lo; x < x_hi; ++x) dst[x] += src[x];
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias) {
  const ConvGeometry g = check_conv(input, weight, bias);
  const std::size_t hw = g.h * g.w;
  Tensor<T> out(g.n, g.co, g.h, g.w);
  Eigen::Map<const RowMat<T>> wm(weight.data(), g.co, g.patch());

  if (g.k == 1) {
    for (std::size_t s = 0; s < g.n; ++s) {
      Eigen::Map<const RowMat<T>> xm(input.plane(s, 0), g.ci, hw);
      Eigen::Map<RowMat<T>> ym(out.plane(s, 0), g.co, hw);
      ym.noalias() = wm * xm;
    }
  } else {
    const std::size_t tile = g.tile_rows();
    std::vector<T> col(g.patch() * tile * g.w);
    for (std::size_t s = 0; s < g.n; ++s) {
      for (std::size_t y0 = 0; y0 < g.h; y0 += tile) {
        const std::size_t rows = std::min(tile, g.h - y0);
        const std::size_t p = rows * g.w;
        im2col(input.plane(s, 0), g, y0, rows, col.data());
        Eigen::Map<const RowMat<T>> cm(col.data(), g.patch(), p);
        StridedMap<T> ym(out.plane(s, 0) + y0 * g.w, g.co, p, Eigen::OuterStride<>(hw));
        ym.noalias() = wm * cm;
      }
    }
  }

  if (bias != nullptr) {
    for (std::size_t s = 0; s < g.n; ++s) {
      for (std::size_t o = 0; o < g.co; ++o) {
        T* yp = out.plane(s, o);
        const T b = (*bias)[o];
        for (std::size_t i = 0; i < hw; ++i) yp[i] += b;
      }
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weight, bool has_bias,
                             const Tensor<T>& grad_out, bool need_input_grad) {
  const ConvGeometry g = check_conv<T>(input, weight, nullptr);
  if (grad_out.shape() != Shape{g.n, g.co, g.h, g.w}) {
    throw ShapeError("conv2d_backward: gradient " + to_string(grad_out.shape()) +
                     " does not match output shape " + to_string(Shape{g.n, g.co, g.h, g.w}));
  }
  const std::size_t hw = g.h * g.w;
  ConvGrads<T> grads;
  grads.weight = Tensor<T>(weight.shape());
  if (need_input_grad) grads.input = Tensor<T>(input.shape());

  Eigen::Map<const RowMat<T>> wm(weight.data(), g.co, g.patch());
  Eigen::Map<RowMat<T>> dwm(grads.weight.data(), g.co, g.patch());

  if (g.k == 1) {
    for (std::size_t s = 0; s < g.n; ++s) {
      Eigen::Map<const RowMat<T>> xm(input.plane(s, 0), g.ci, hw);
      Eigen::Map<const RowMat<T>> dym(grad_out.plane(s, 0), g.co, hw);
      dwm.noalias() += dym * xm.transpose();
      if (need_input_grad) {
        Eigen::Map<RowMat<T>> dxm(grads.input.plane(s, 0), g.ci, hw);
        dxm.noalias() = wm.transpose() * dym;
      }
    }
  } else {
    const std::size_t tile = g.tile_rows();
    std::vector<T> col(g.patch() * tile * g.w);
    std::vector<T> dcol(need_input_grad ? col.size() : 0);
    for (std::size_t s = 0; s < g.n; ++s) {
      for (std::size_t y0 = 0; y0 < g.h; y0 += tile) {
        const std::size_t rows = std::min(tile, g.h - y0);
        const std::size_t p = rows * g.w;
        im2col(input.plane(s, 0), g, y0, rows, col.data());
        Eigen::Map<const RowMat<T>> cm(col.data(), g.patch(), p);
        ConstStridedMap<T> dym(grad_out.plane(s, 0) + y0 * g.w, g.co, p, Eigen::OuterStride<>(hw));
        dwm.noalias() += dym * cm.transpose();
        if (need_input_grad) {
          Eigen::Map<RowMat<T>> dcm(dcol.data(), g.patch(), p);
          dcm.noalias() = wm.transpose() * dym;
          col2im_add(dcol.data(), g, y0, rows, grads.input.plane(s, 0));
        }
      }
    }
  }

  if (has_bias) {
    grads.bias = Tensor<T>::vector(g.co);
    for (std::size_t s = 0; s < g.n; ++s) {
      for (std::size_t o = 0; o < g.co; ++o) {
        const T* dyp = grad_out.plane(s, o);
        T acc = T(0);
        for (std::size_t i = 0; i < hw; ++i) acc += dyp[i];
        grads.bias[o] += acc;
      }
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta, Mode mode,
                     Tensor<T>& running_mean, Tensor<T>& running_var, const BatchNormOptions& opts,
                     BatchNormCache<T>* cache) {
  const Shape& s = input.shape();
  if (gamma.size() != s.c || beta.size() != s.c) {
    throw ShapeError("batch_norm: gamma/beta lengths " + std::to_string(gamma.size()) + "/" +
                     std::to_string(beta.size()) + " do not match " + std::to_string(s.c) + " channels");
  }
  const bool have_running = !running_mean.empty() && !running_var.empty();
  if (have_running && (running_mean.size() != s.c || running_var.size() != s.c)) {
    throw ShapeError("batch_norm: running statistics do not match " + std::to_string(s.c) + " channels");
  }
  if (mode == Mode::kInfer && !have_running) {
    throw ConfigError("batch_norm: infer mode requires populated running statistics");
  }

  const std::size_t hw = s.plane();
  const std::size_t count = s.n * hw;
  Tensor<T> out(s);
  Tensor<T> xhat(s);
  std::vector<double> inv_std(s.c);
  if (mode == Mode::kTrain && !have_running) {
    running_mean = Tensor<T>::vector(s.c);
    running_var = Tensor<T>::vector(s.c, T(1));
  }

  for (std::size_t c = 0; c < s.c; ++c) {
    double mean = 0.0;
    double var = 0.0;
    if (mode == Mode::kTrain) {
      for (std::size_t b = 0; b < s.n; ++b) {
        const T* xp = input.plane(b, c);
        for (std::size_t i = 0; i < hw; ++i) mean += xp[i];
      }
      mean /= static_cast<double>(count);
      for (std::size_t b = 0; b < s.n; ++b) {
        const T* xp = input.plane(b, c);
        for (std::size_t i = 0; i < hw; ++i) {
          const double d = xp[i] - mean;
          var += d * d;
        }
      }
      var /= static_cast<double>(count);
      const double unbiased = count > 1 ? var * count / static_cast<double>(count - 1) : var;
      if (have_running) {
        running_mean[c] = static_cast<T>((1.0 - opts.momentum) * running_mean[c] + opts.momentum * mean);
        running_var[c] = static_cast<T>((1.0 - opts.momentum) * running_var[c] + opts.momentum * unbiased);
      } else {
        running_mean[c] = static_cast<T>(mean);
        running_var[c] = static_cast<T>(unbiased);
      }
    } else {
      mean = running_mean[c];
      var = running_var[c];
    }
    const double istd = 1.0 / std::sqrt(var + opts.eps);
    inv_std[c] = istd;
    const double g = gamma[c];
    const double bt = beta[c];
    for (std::size_t b = 0; b < s.n; ++b) {
      const T* xp = input.plane(b, c);
      T* hp = xhat.plane(b, c);
      T* yp = out.plane(b, c);
      for (std::size_t i = 0; i < hw; ++i) {
        const double xh = (xp[i] - mean) * istd;
        hp[i] = static_cast<T>(xh);
        yp[i] = static_cast<T>(g * xh + bt);
      }
    }
  }

  if (cache != nullptr) {
    cache->mode = mode;
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

template <typename T>
BatchNormGrads<T> batch_norm_backward(const BatchNormCache<T>& cache, const Tensor<T>& gamma,
                                      const Tensor<T>& grad_out) {
  const Shape& s = cache.xhat.shape();
  if (grad_out.shape() != s) {
    throw ShapeError("batch_norm_backward: gradient " + to_string(grad_out.shape()) +
                     " does not match cached " + to_string(s));
  }
  const std::size_t hw = s.plane();
  const double count = static_cast<double>(s.n * hw);
  BatchNormGrads<T> grads{Tensor<T>(s), Tensor<T>::vector(s.c), Tensor<T>::vector(s.c)};

  for (std::size_t c = 0; c < s.c; ++c) {
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (std::size_t b = 0; b < s.n; ++b) {
      const T* dyp = grad_out.plane(b, c);
      const T* hp = cache.xhat.plane(b, c);
      for (std::size_t i = 0; i < hw; ++i) {
        sum_dy += dyp[i];
        sum_dy_xhat += static_cast<double>(dyp[i]) * hp[i];
      }
    }
    grads.beta[c] = static_cast<T>(sum_dy);
    grads.gamma[c] = static_cast<T>(sum_dy_xhat);
    const double scale = gamma[c] * cache.inv_std[c];
    for (std::size_t b = 0; b < s.n; ++b) {
      const T* dyp = grad_out.plane(b, c);
      const T* hp = cache.xhat.plane(b, c);
      T* dxp = grads.input.plane(b, c);
      if (cache.mode == Mode::kTrain) {
        const double mean_dy = sum_dy / count;
        const double mean_dy_xhat = sum_dy_xhat / count;
        for (std::size_t i = 0; i < hw; ++i) {
          dxp[i] = static_cast<T>(scale * (dyp[i] - mean_dy - hp[i] * mean_dy_xhat));
        }
      } else {
        for (std::size_t i = 0; i < hw; ++i) dxp[i] = static_cast<T>(scale * dyp[i]);
      }
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  const T* x = input.data();
  T* y = out.data();
  for (std::size_t i = 0; i < input.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& output, const Tensor<T>& grad_out) {
  if (output.shape() != grad_out.shape()) {
    throw ShapeError("relu_backward: gradient " + to_string(grad_out.shape()) + " does not match " +
                     to_string(output.shape()));
  }
  Tensor<T> dx(output.shape());
  const T* y = output.data();
  const T* dy = grad_out.data();
  T* d = dx.data();
  for (std::size_t i = 0; i < output.size(); ++i) d[i] = y[i] > T(0) ? dy[i] : T(0);
  return dx;
}

// ---------------------------------------------------------------------------

bool PoolIndices::within_windows() const {
  if (index.size() != pooled.numel()) return false;
  const std::size_t planes = pooled.n * pooled.c;
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < pooled.h; ++y) {
      for (std::size_t x = 0; x < pooled.w; ++x) {
        const std::uint32_t idx = index[(p * pooled.h + y) * pooled.w + x];
        const std::size_t iy = idx / source.w;
        const std::size_t ix = idx % source.w;
        if (iy / 2 != y || ix / 2 != x) return false;
      }
    }
  }
  return true;
}

template <typename T>
std::pair<Tensor<T>, PoolIndices> max_pool_2x2(const Tensor<T>& input) {
  const Shape& s = input.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw ShapeError("max_pool_2x2: spatial size " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                     " is not even");
  }
  const Shape ps{s.n, s.c, s.h / 2, s.w / 2};
  Tensor<T> out(ps);
  PoolIndices idx{ps, s, std::vector<std::uint32_t>(ps.numel())};
  const std::size_t planes = s.n * s.c;
  for (std::size_t p = 0; p < planes; ++p) {
    const T* xp = input.data() + p * s.plane();
    T* yp = out.data() + p * ps.plane();
    std::uint32_t* ip = idx.index.data() + p * ps.plane();
    for (std::size_t y = 0; y < ps.h; ++y) {
      for (std::size_t x = 0; x < ps.w; ++x) {
        // Scan order is increasing flat index; strict > keeps the first max.
        const std::size_t base = 2 * y * s.w + 2 * x;
        const std::size_t cand[4] = {base, base + 1, base + s.w, base + s.w + 1};
        std::size_t best = cand[0];
        for (int k = 1; k < 4; ++k) {
          if (xp[cand[k]] > xp[best]) best = cand[k];
        }
        yp[y * ps.w + x] = xp[best];
        ip[y * ps.w + x] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return {std::move(out), std::move(idx)};
}

template <typename T>
Tensor<T> max_pool_2x2_backward(const Tensor<T>& grad_out, const PoolIndices& indices) {
  if (grad_out.shape() != indices.pooled) {
    throw ShapeError("max_pool_2x2_backward: gradient " + to_string(grad_out.shape()) +
                     " does not match pooled shape " + to_string(indices.pooled));
  }
  Tensor<T> dx(indices.source);
  const std::size_t planes = indices.pooled.n * indices.pooled.c;
  const std::size_t pp = indices.pooled.plane();
  const std::size_t sp = indices.source.plane();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t i = 0; i < pp; ++i) {
      dx[p * sp + indices.index[p * pp + i]] += grad_out[p * pp + i];
    }
  }
  return dx;
}

template <typename T>
Tensor<T> max_unpool_2x2(const Tensor<T>& input, const PoolIndices& indices) {
  if (input.shape() != indices.pooled) {
    throw ShapeError("max_unpool_2x2: input " + to_string(input.shape()) + " does not match indices " +
                     to_string(indices.pooled));
  }
  Tensor<T> out(indices.source);
  const std::size_t planes = indices.pooled.n * indices.pooled.c;
  const std::size_t pp = indices.pooled.plane();
  const std::size_t sp = indices.source.plane();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t i = 0; i < pp; ++i) {
      out[p * sp + indices.index[p * pp + i]] = input[p * pp + i];
    }
  }
  return out;
}

template <typename T>
Tensor<T> max_unpool_2x2_backward(const Tensor<T>& grad_out, const PoolIndices& indices) {
  if (grad_out.shape() != indices.source) {
    throw ShapeError("max_unpool_2x2_backward: gradient " + to_string(grad_out.shape()) +
                     " does not match unpooled shape " + to_string(indices.source));
  }
  Tensor<T> dx(indices.pooled);
  const std::size_t planes = indices.pooled.n * indices.pooled.c;
  const std::size_t pp = indices.pooled.plane();
  const std::size_t sp = indices.source.plane();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t i = 0; i < pp; ++i) {
      dx[p * pp + i] = grad_out[p * sp + indices.index[p * pp + i]];
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
    throw ShapeError("concat_channels: " + to_string(sa) + " and " + to_string(sb) +
                     " disagree on batch or spatial size");
  }
  Tensor<T> out(sa.n, sa.c + sb.c, sa.h, sa.w);
  const std::size_t la = sa.c * sa.plane();
  const std::size_t lb = sb.c * sb.plane();
  for (std::size_t s = 0; s < sa.n; ++s) {
    T* dst = out.plane(s, 0);
    std::copy_n(a.plane(s, 0), la, dst);
    std::copy_n(b.plane(s, 0), lb, dst + la);
  }
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& t, std::size_t ca) {
  const Shape& s = t.shape();
  if (ca > s.c) {
    throw ShapeError("split_channels: cannot take " + std::to_string(ca) + " channels from " + to_string(s));
  }
  Tensor<T> a(s.n, ca, s.h, s.w);
  Tensor<T> b(s.n, s.c - ca, s.h, s.w);
  const std::size_t la = ca * s.plane();
  const std::size_t lb = (s.c - ca) * s.plane();
  for (std::size_t i = 0; i < s.n; ++i) {
    const T* src = t.plane(i, 0);
    if (la > 0) std::copy_n(src, la, a.plane(i, 0));
    if (lb > 0) std::copy_n(src + la, lb, b.plane(i, 0));
  }
  return {std::move(a), std::move(b)};
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& logits) {
  const Shape& s = logits.shape();
  Tensor<T> out(s);
  const std::size_t hw = s.plane();
  for (std::size_t b = 0; b < s.n; ++b) {
    const T* zp = logits.plane(b, 0);
    T* pp = out.plane(b, 0);
    for (std::size_t i = 0; i < hw; ++i) {
      T zmax = -std::numeric_limits<T>::infinity();
      for (std::size_t c = 0; c < s.c; ++c) zmax = std::max(zmax, zp[c * hw + i]);
      T sum = T(0);
      for (std::size_t c = 0; c < s.c; ++c) {
        const T e = std::exp(zp[c * hw + i] - zmax);
        pp[c * hw + i] = e;
        sum += e;
      }
      const T inv = T(1) / sum;
      for (std::size_t c = 0; c < s.c; ++c) pp[c * hw + i] *= inv;
    }
  }
  return out;
}

template <typename T>
Tensor<T> softmax_channels_backward(const Tensor<T>& probs, const Tensor<T>& grad_probs) {
  const Shape& s = probs.shape();
  if (grad_probs.shape() != s) {
    throw ShapeError("softmax_channels_backward: gradient " + to_string(grad_probs.shape()) +
                     " does not match " + to_string(s));
  }
  Tensor<T> dz(s);
  const std::size_t hw = s.plane();
  for (std::size_t b = 0; b < s.n; ++b) {
    const T* pp = probs.plane(b, 0);
    const T* gp = grad_probs.plane(b, 0);
    T* dp = dz.plane(b, 0);
    for (std::size_t i = 0; i < hw; ++i) {
      T dot = T(0);
      for (std::size_t c = 0; c < s.c; ++c) dot += gp[c * hw + i] * pp[c * hw + i];
      for (std::size_t c = 0; c < s.c; ++c) dp[c * hw + i] = pp[c * hw + i] * (gp[c * hw + i] - dot);
    }
  }
  return dz;
}

// ---------------------------------------------------------------------------

#define QTN_INSTANTIATE_OPS(T)                                                                          \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*);                      \
  template ConvGrads<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&, bool, const Tensor<T>&,     \
                                        bool);                                                          \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Mode, Tensor<T>&, \
                                Tensor<T>&, const BatchNormOptions&, BatchNormCache<T>*);               \
  template BatchNormGrads<T> batch_norm_backward(const BatchNormCache<T>&, const Tensor<T>&,            \
                                                 const Tensor<T>&);                                     \
  template Tensor<T> relu(const Tensor<T>&);                                                            \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                                 \
  template std::pair<Tensor<T>, PoolIndices> max_pool_2x2(const Tensor<T>&);                            \
  template Tensor<T> max_pool_2x2_backward(const Tensor<T>&, const PoolIndices&);                       \
  template Tensor<T> max_unpool_2x2(const Tensor<T>&, const PoolIndices&);                              \
  template Tensor<T> max_unpool_2x2_backward(const Tensor<T>&, const PoolIndices&);                     \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                               \
  template std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>&, std::size_t);               \
  template Tensor<T> softmax_channels(const Tensor<T>&);                                                \
  template Tensor<T> softmax_channels_backward(const Tensor<T>&, const Tensor<T>&);

QTN_INSTANTIATE_OPS(float)
QTN_INSTANTIATE_OPS(double)

#undef QTN_INSTANTIATE_OPS

}  // namespace qtn
