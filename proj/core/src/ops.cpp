#include "ccr/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>

#include "aligned.hpp"

namespace ccr::ops {
namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const MatRM>;
using MutMap = Eigen::Map<MatRM>;

[[noreturn]] void fail(const std::string& op, const std::string& what) {
  throw std::invalid_argument(op + ": " + what);
}

void require_same_shape(const std::string& op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    fail(op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_rank(const std::string& op, const Tensor& x, std::size_t rank) {
  if (x.rank() != rank) {
    fail(op, "expected rank " + std::to_string(rank) + " input, got " + shape_str(x.shape()));
  }
}

struct Nchw {
  std::size_t n, c, h, w;
  std::size_t hw() const { return h * w; }
};

Nchw nchw(const std::string& op, const Tensor& x) {
  require_rank(op, x, 4);
  return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
}

void accumulate(const Tensor& t, std::span<const double> delta) {
  auto g = t.mutable_grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

template <typename Fn>
Tensor unary_map(const Tensor& x, Fn f) {
  Tensor out(x.shape());
  auto o = out.mutable_data();
  auto in = x.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = f(in[i]);
  return out;
}

// Per-axis sample positions for half-pixel bilinear 2x upsampling.
struct Tap {
  std::size_t i0, i1;
  double w0, w1;
};

std::vector<Tap> upsample_taps(std::size_t n) {
  std::vector<Tap> taps(2 * n);
  for (std::size_t o = 0; o < 2 * n; ++o) {
    double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    if (src < 0.0) src = 0.0;
    auto i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > n - 1) i0 = n - 1;
    std::size_t i1 = std::min(i0 + 1, n - 1);
    double lambda = src - static_cast<double>(i0);
    taps[o] = {i0, i1, 1.0 - lambda, lambda};
  }
  return taps;
}

}  // namespace

Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Tensor out(a.shape());
  auto o = out.mutable_data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  if (g.needs_record({&a, &b})) {
    g.record("add", {a, b}, out, [a, b, out]() mutable {
      if (a.requires_grad()) accumulate(a, out.grad());
      if (b.requires_grad()) accumulate(b, out.grad());
    });
  }
  return out;
}

Tensor sub(Graph& g, const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  Tensor out(a.shape());
  auto o = out.mutable_data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  if (g.needs_record({&a, &b})) {
    g.record("sub", {a, b}, out, [a, b, out]() mutable {
      if (a.requires_grad()) accumulate(a, out.grad());
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        auto go = out.grad();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= go[i];
      }
    });
  }
  return out;
}

Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Tensor out(a.shape());
  auto o = out.mutable_data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  if (g.needs_record({&a, &b})) {
    g.record("mul", {a, b}, out, [a, b, out]() mutable {
      auto go = out.grad();
      auto x = a.data(), y = b.data();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * y[i];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * x[i];
      }
    });
  }
  return out;
}

Tensor scale(Graph& g, const Tensor& x, double factor) {
  Tensor out = unary_map(x, [factor](double v) { return v * factor; });
  if (g.needs_record({&x})) {
    g.record("scale", {x}, out, [x, out, factor]() mutable {
      auto gx = x.mutable_grad();
      auto go = out.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * factor;
    });
  }
  return out;
}

Tensor add_scalar(Graph& g, const Tensor& x, double value) {
  Tensor out = unary_map(x, [value](double v) { return v + value; });
  if (g.needs_record({&x})) {
    g.record("add_scalar", {x}, out, [x, out]() mutable { accumulate(x, out.grad()); });
  }
  return out;
}

Tensor relu(Graph& g, const Tensor& x) { return hinge(g, x, 0.0); }

Tensor hinge(Graph& g, const Tensor& x, double margin) {
  Tensor out = unary_map(x, [margin](double v) { return std::max(v + margin, 0.0); });
  if (g.needs_record({&x})) {
    g.record(margin == 0.0 ? "relu" : "hinge", {x}, out, [x, out]() mutable {
      auto gx = x.mutable_grad();
      auto go = out.grad();
      auto o = out.data();
      for (std::size_t i = 0; i < gx.size(); ++i) {
        if (o[i] > 0.0) gx[i] += go[i];
      }
    });
  }
  return out;
}

Tensor safe_sqrt(Graph& g, const Tensor& x, double eps) {
  Tensor out = unary_map(x, [eps](double v) { return std::sqrt(std::max(v, eps)); });
  if (g.needs_record({&x})) {
    g.record("safe_sqrt", {x}, out, [x, out, eps]() mutable {
      auto gx = x.mutable_grad();
      auto go = out.grad();
      auto in = x.data();
      auto o = out.data();
      for (std::size_t i = 0; i < gx.size(); ++i) {
        if (in[i] > eps) gx[i] += go[i] * 0.5 / o[i];
      }
    });
  }
  return out;
}

Tensor matmul(Graph& g, const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    fail("matmul", "inner extents differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor out({m, n});
  MutMap(out.mutable_data().data(), m, n).noalias() =
      ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  if (g.needs_record({&a, &b})) {
    g.record("matmul", {a, b}, out, [a, b, out, m, k, n]() mutable {
      ConstMap go(out.grad().data(), m, n);
      if (a.requires_grad()) {
        MutMap(a.mutable_grad().data(), m, k).noalias() +=
            go * ConstMap(b.data().data(), k, n).transpose();
      }
      if (b.requires_grad()) {
        MutMap(b.mutable_grad().data(), k, n).noalias() +=
            ConstMap(a.data().data(), m, k).transpose() * go;
      }
    });
  }
  return out;
}

namespace {

void im2col(const double* img, std::size_t c, std::size_t h, std::size_t w, std::size_t k,
            double* col) {
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const auto H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* row = col + ((ci * k + ky) * k + kx) * h * w;
        const auto dy = static_cast<std::ptrdiff_t>(ky) - pad;
        const auto dx = static_cast<std::ptrdiff_t>(kx) - pad;
        for (std::ptrdiff_t y = 0; y < H; ++y) {
          const std::ptrdiff_t sy = y + dy;
          double* dst = row + y * W;
          if (sy < 0 || sy >= H) {
            std::fill(dst, dst + W, 0.0);
            continue;
          }
          const double* src = img + (ci * h + static_cast<std::size_t>(sy)) * w;
          for (std::ptrdiff_t x = 0; x < W; ++x) {
            const std::ptrdiff_t sx = x + dx;
            dst[x] = (sx < 0 || sx >= W) ? 0.0 : src[sx];
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, std::size_t c, std::size_t h, std::size_t w, std::size_t k,
                double* img) {
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const auto H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* row = col + ((ci * k + ky) * k + kx) * h * w;
        const auto dy = static_cast<std::ptrdiff_t>(ky) - pad;
        const auto dx = static_cast<std::ptrdiff_t>(kx) - pad;
        for (std::ptrdiff_t y = 0; y < H; ++y) {
          const std::ptrdiff_t sy = y + dy;
          if (sy < 0 || sy >= H) continue;
          const double* src = row + y * W;
          double* dst = img + (ci * h + static_cast<std::size_t>(sy)) * w;
          for (std::ptrdiff_t x = 0; x < W; ++x) {
            const std::ptrdiff_t sx = x + dx;
            if (sx >= 0 && sx < W) dst[sx] += src[x];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(Graph& g, const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const Nchw s = nchw("conv2d", x);
  require_rank("conv2d", weight, 4);
  const std::size_t cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != s.c || weight.dim(3) != k || k % 2 == 0) {
    fail("conv2d", "weight " + shape_str(weight.shape()) + " incompatible with input " +
                       shape_str(x.shape()));
  }
  if (bias.shape() != Shape{cout}) {
    fail("conv2d", "bias " + shape_str(bias.shape()) + " does not match weight " +
                       shape_str(weight.shape()));
  }
  const std::size_t hw = s.hw(), kk = s.c * k * k;
  Tensor out({s.n, cout, s.h, s.w});
  auto o = out.mutable_data();
  const bool rec = g.needs_record({&x, &weight, &bias});

  // Columns are kept for the weight gradient; 1x1 kernels read the input
  // directly.
  auto cols = std::make_shared<AlignedBuffer>();
  AlignedBuffer scratch;
  if (k > 1) {
    if (rec) {
      cols->resize(s.n * kk * hw);
    } else {
      scratch.resize(kk * hw);
    }
  }
  ConstMap wmat(weight.data().data(), cout, kk);
  auto bdata = bias.data();
  for (std::size_t n = 0; n < s.n; ++n) {
    const double* in = x.data().data() + n * s.c * hw;
    const double* col = in;
    if (k > 1) {
      double* buf = rec ? cols->data() + n * kk * hw : scratch.data();
      im2col(in, s.c, s.h, s.w, k, buf);
      col = buf;
    }
    MutMap y(o.data() + n * cout * hw, cout, hw);
    y.noalias() = wmat * ConstMap(col, kk, hw);
    for (std::size_t co = 0; co < cout; ++co) y.row(co).array() += bdata[co];
  }

  if (rec) {
    g.record("conv2d", {x, weight, bias}, out, [x, weight, bias, out, cols, s, cout, k, kk, hw]() mutable {
      auto go = out.grad();
      ConstMap wmat(weight.data().data(), cout, kk);
      AlignedBuffer dcol;
      if (x.requires_grad() && k > 1) dcol.resize(kk * hw);
      for (std::size_t n = 0; n < s.n; ++n) {
        ConstMap dy(go.data() + n * cout * hw, cout, hw);
        const double* col = k > 1 ? cols->data() + n * kk * hw : x.data().data() + n * s.c * hw;
        if (weight.requires_grad()) {
          MutMap(weight.mutable_grad().data(), cout, kk).noalias() +=
              dy * ConstMap(col, kk, hw).transpose();
        }
        if (bias.requires_grad()) {
          auto gb = bias.mutable_grad();
          for (std::size_t co = 0; co < cout; ++co) gb[co] += dy.row(co).sum();
        }
        if (x.requires_grad()) {
          double* gx = x.mutable_grad().data() + n * s.c * hw;
          if (k > 1) {
            MutMap(dcol.data(), kk, hw).noalias() = wmat.transpose() * dy;
            col2im_add(dcol.data(), s.c, s.h, s.w, k, gx);
          } else {
            MutMap(gx, s.c, hw).noalias() += wmat.transpose() * dy;
          }
        }
      }
    });
  }
  return out;
}

Tensor batch_norm(Graph& g, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormBuffers& buffers, const BatchNormOptions& opts) {
  const Nchw s = nchw("batch_norm", x);
  const Shape cshape{s.c};
  if (gamma.shape() != cshape || beta.shape() != cshape ||
      buffers.running_mean.shape() != cshape || buffers.running_var.shape() != cshape) {
    fail("batch_norm", "parameter shapes must be [" + std::to_string(s.c) + "] for input " +
                           shape_str(x.shape()));
  }
  const std::size_t hw = s.hw();
  const double count = static_cast<double>(s.n * hw);
  auto in = x.data();
  std::vector<double> mu(s.c), inv_std(s.c);

  if (opts.training) {
    if (s.n * hw < 2) fail("batch_norm", "training mode needs more than one value per channel");
    auto rm = buffers.running_mean.mutable_data();
    auto rv = buffers.running_var.mutable_data();
    for (std::size_t c = 0; c < s.c; ++c) {
      double acc = 0.0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const double* p = in.data() + (n * s.c + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) acc += p[i];
      }
      const double m = acc / count;
      double var = 0.0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const double* p = in.data() + (n * s.c + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) var += (p[i] - m) * (p[i] - m);
      }
      var /= count;
      mu[c] = m;
      inv_std[c] = 1.0 / std::sqrt(var + opts.eps);
      rm[c] = opts.momentum * rm[c] + (1.0 - opts.momentum) * m;
      rv[c] = opts.momentum * rv[c] + (1.0 - opts.momentum) * var * count / (count - 1.0);
    }
  } else {
    auto rm = buffers.running_mean.data();
    auto rv = buffers.running_var.data();
    for (std::size_t c = 0; c < s.c; ++c) {
      mu[c] = rm[c];
      inv_std[c] = 1.0 / std::sqrt(rv[c] + opts.eps);
    }
  }

  Tensor out(x.shape());
  auto o = out.mutable_data();
  auto gm = gamma.data(), bt = beta.data();
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* p = in.data() + (n * s.c + c) * hw;
      double* q = o.data() + (n * s.c + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) q[i] = gm[c] * (p[i] - mu[c]) * inv_std[c] + bt[c];
    }
  }

  if (g.needs_record({&x, &gamma, &beta})) {
    const bool training = opts.training;
    g.record("batch_norm", {x, gamma, beta}, out,
             [x, gamma, beta, out, mu, inv_std, s, hw, count, training]() mutable {
               auto go = out.grad();
               auto in = x.data();
               auto gm = gamma.data();
               for (std::size_t c = 0; c < s.c; ++c) {
                 double sum_dy = 0.0, sum_dy_xhat = 0.0;
                 for (std::size_t n = 0; n < s.n; ++n) {
                   const std::size_t base = (n * s.c + c) * hw;
                   for (std::size_t i = 0; i < hw; ++i) {
                     const double xhat = (in[base + i] - mu[c]) * inv_std[c];
                     sum_dy += go[base + i];
                     sum_dy_xhat += go[base + i] * xhat;
                   }
                 }
                 if (gamma.requires_grad()) gamma.mutable_grad()[c] += sum_dy_xhat;
                 if (beta.requires_grad()) beta.mutable_grad()[c] += sum_dy;
                 if (!x.requires_grad()) continue;
                 auto gx = x.mutable_grad();
                 const double scale = gm[c] * inv_std[c];
                 for (std::size_t n = 0; n < s.n; ++n) {
                   const std::size_t base = (n * s.c + c) * hw;
                   for (std::size_t i = 0; i < hw; ++i) {
                     if (training) {
                       const double xhat = (in[base + i] - mu[c]) * inv_std[c];
                       gx[base + i] +=
                           scale * (go[base + i] - sum_dy / count - xhat * sum_dy_xhat / count);
                     } else {
                       gx[base + i] += scale * go[base + i];
                     }
                   }
                 }
               }
             });
  }
  return out;
}

Tensor l2_normalize_pixels(Graph& g, const Tensor& x, double eps) {
  const Nchw s = nchw("l2_normalize_pixels", x);
  const std::size_t hw = s.hw();
  Tensor out(x.shape());
  auto o = out.mutable_data();
  auto in = x.data();
  std::vector<double> norms(s.n * hw);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t i = 0; i < hw; ++i) {
      double sq = 0.0;
      for (std::size_t c = 0; c < s.c; ++c) {
        const double v = in[(n * s.c + c) * hw + i];
        sq += v * v;
      }
      const double norm = std::max(std::sqrt(sq), eps);
      norms[n * hw + i] = norm;
      for (std::size_t c = 0; c < s.c; ++c) {
        o[(n * s.c + c) * hw + i] = in[(n * s.c + c) * hw + i] / norm;
      }
    }
  }
  if (g.needs_record({&x})) {
    g.record("l2_normalize_pixels", {x}, out, [x, out, norms, s, hw, eps]() mutable {
      auto go = out.grad();
      auto o = out.data();
      auto gx = x.mutable_grad();
      for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t i = 0; i < hw; ++i) {
          const double norm = norms[n * hw + i];
          double dot = 0.0;
          if (norm > eps) {
            for (std::size_t c = 0; c < s.c; ++c) {
              const std::size_t j = (n * s.c + c) * hw + i;
              dot += o[j] * go[j];
            }
          }
          for (std::size_t c = 0; c < s.c; ++c) {
            const std::size_t j = (n * s.c + c) * hw + i;
            gx[j] += (go[j] - o[j] * dot) / norm;
          }
        }
      }
    });
  }
  return out;
}

Tensor gather_pixels(Graph& g, const Tensor& x, std::size_t image,
                     std::span<const std::size_t> flat_index) {
  const Nchw s = nchw("gather_pixels", x);
  if (image >= s.n) {
    fail("gather_pixels", "image " + std::to_string(image) + " out of range for " +
                              shape_str(x.shape()));
  }
  const std::size_t hw = s.hw();
  std::vector<std::size_t> idx(flat_index.begin(), flat_index.end());
  for (auto i : idx) {
    if (i >= hw) {
      fail("gather_pixels", "pixel index " + std::to_string(i) + " out of range for " +
                                shape_str(x.shape()));
    }
  }
  const std::size_t m = idx.size();
  Tensor out({m, s.c});
  auto o = out.mutable_data();
  const double* base = x.data().data() + image * s.c * hw;
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < s.c; ++c) o[r * s.c + c] = base[c * hw + idx[r]];
  }
  if (g.needs_record({&x})) {
    g.record("gather_pixels", {x}, out, [x, out, idx = std::move(idx), image, s, hw]() mutable {
      auto go = out.grad();
      double* gx = x.mutable_grad().data() + image * s.c * hw;
      for (std::size_t r = 0; r < idx.size(); ++r) {
        for (std::size_t c = 0; c < s.c; ++c) gx[c * hw + idx[r]] += go[r * s.c + c];
      }
    });
  }
  return out;
}

Tensor sum(Graph& g, const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor out = Tensor::scalar(acc);
  if (g.needs_record({&x})) {
    g.record("sum", {x}, out, [x, out]() mutable {
      const double d = out.grad()[0];
      for (double& v : x.mutable_grad()) v += d;
    });
  }
  return out;
}

Tensor mean(Graph& g, const Tensor& x) {
  if (x.numel() == 0) fail("mean", "empty input " + shape_str(x.shape()));
  const double n = static_cast<double>(x.numel());
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor out = Tensor::scalar(acc / n);
  if (g.needs_record({&x})) {
    g.record("mean", {x}, out, [x, out, n]() mutable {
      const double d = out.grad()[0] / n;
      for (double& v : x.mutable_grad()) v += d;
    });
  }
  return out;
}

Tensor max(Graph& g, const Tensor& x) {
  if (x.numel() == 0) fail("max", "empty input " + shape_str(x.shape()));
  auto in = x.data();
  const auto arg = static_cast<std::size_t>(std::max_element(in.begin(), in.end()) - in.begin());
  Tensor out = Tensor::scalar(in[arg]);
  if (g.needs_record({&x})) {
    g.record("max", {x}, out, [x, out, arg]() mutable { x.mutable_grad()[arg] += out.grad()[0]; });
  }
  return out;
}

Tensor squared_l2_rows(Graph& g, const Tensor& a, const Tensor& b) {
  require_rank("squared_l2_rows", a, 2);
  require_same_shape("squared_l2_rows", a, b);
  const std::size_t m = a.dim(0), c = a.dim(1);
  Tensor out({m});
  auto o = out.mutable_data();
  auto x = a.data(), y = b.data();
  for (std::size_t r = 0; r < m; ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = x[r * c + j] - y[r * c + j];
      acc += d * d;
    }
    o[r] = acc;
  }
  if (g.needs_record({&a, &b})) {
    g.record("squared_l2_rows", {a, b}, out, [a, b, out, m, c]() mutable {
      auto go = out.grad();
      auto x = a.data(), y = b.data();
      std::span<double> ga, gb;
      if (a.requires_grad()) ga = a.mutable_grad();
      if (b.requires_grad()) gb = b.mutable_grad();
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t j = 0; j < c; ++j) {
          const double d = 2.0 * go[r] * (x[r * c + j] - y[r * c + j]);
          if (!ga.empty()) ga[r * c + j] += d;
          if (!gb.empty()) gb[r * c + j] -= d;
        }
      }
    });
  }
  return out;
}

Tensor softmax_cross_entropy(Graph& g, const Tensor& logits, std::span<const std::int32_t> labels) {
  const Nchw s = nchw("softmax_cross_entropy", logits);
  const std::size_t hw = s.hw();
  if (labels.size() != s.n * hw) {
    fail("softmax_cross_entropy", std::to_string(labels.size()) + " labels for logits " +
                                      shape_str(logits.shape()));
  }
  auto z = logits.data();
  std::vector<double> prob(z.size(), 0.0);
  std::size_t valid = 0;
  double total = 0.0;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t i = 0; i < hw; ++i) {
      const std::int32_t y = labels[n * hw + i];
      if (y == kIgnoreLabel) continue;
      if (y < 0 || static_cast<std::size_t>(y) >= s.c) {
        fail("softmax_cross_entropy", "label " + std::to_string(y) + " outside [0, " +
                                          std::to_string(s.c) + ")");
      }
      double zmax = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < s.c; ++c) zmax = std::max(zmax, z[(n * s.c + c) * hw + i]);
      double denom = 0.0;
      for (std::size_t c = 0; c < s.c; ++c) {
        const double e = std::exp(z[(n * s.c + c) * hw + i] - zmax);
        prob[(n * s.c + c) * hw + i] = e;
        denom += e;
      }
      for (std::size_t c = 0; c < s.c; ++c) prob[(n * s.c + c) * hw + i] /= denom;
      total += std::log(denom) + zmax - z[(n * s.c + static_cast<std::size_t>(y)) * hw + i];
      ++valid;
    }
  }
  if (valid == 0) return Tensor::scalar(0.0);
  const double nv = static_cast<double>(valid);
  Tensor out = Tensor::scalar(total / nv);
  if (g.needs_record({&logits})) {
    std::vector<std::int32_t> lab(labels.begin(), labels.end());
    g.record("softmax_cross_entropy", {logits}, out,
             [logits, out, prob = std::move(prob), lab = std::move(lab), s, hw, nv]() mutable {
               const double d = out.grad()[0] / nv;
               auto gz = logits.mutable_grad();
               for (std::size_t n = 0; n < s.n; ++n) {
                 for (std::size_t i = 0; i < hw; ++i) {
                   const std::int32_t y = lab[n * hw + i];
                   if (y == kIgnoreLabel) continue;
                   for (std::size_t c = 0; c < s.c; ++c) {
                     const std::size_t j = (n * s.c + c) * hw + i;
                     const double onehot = static_cast<std::int32_t>(c) == y ? 1.0 : 0.0;
                     gz[j] += d * (prob[j] - onehot);
                   }
                 }
               }
             });
  }
  return out;
}

Tensor l1_loss(Graph& g, const Tensor& pred, const Tensor& target,
               std::span<const std::uint8_t> mask) {
  const Nchw s = nchw("l1_loss", pred);
  require_same_shape("l1_loss", pred, target);
  const std::size_t hw = s.hw();
  if (mask.size() != s.n * hw) {
    fail("l1_loss", "mask of " + std::to_string(mask.size()) + " for " + shape_str(pred.shape()));
  }
  auto p = pred.data(), t = target.data();
  std::size_t valid = 0;
  double total = 0.0;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t i = 0; i < hw; ++i) {
      if (!mask[n * hw + i]) continue;
      ++valid;
      for (std::size_t c = 0; c < s.c; ++c) {
        const std::size_t j = (n * s.c + c) * hw + i;
        total += std::abs(p[j] - t[j]);
      }
    }
  }
  if (valid == 0) return Tensor::scalar(0.0);
  const double nv = static_cast<double>(valid);
  Tensor out = Tensor::scalar(total / nv);
  if (g.needs_record({&pred})) {
    std::vector<std::uint8_t> m(mask.begin(), mask.end());
    g.record("l1_loss", {pred}, out, [pred, target, out, m = std::move(m), s, hw, nv]() mutable {
      const double d = out.grad()[0] / nv;
      auto gp = pred.mutable_grad();
      auto p = pred.data(), t = target.data();
      for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t i = 0; i < hw; ++i) {
          if (!m[n * hw + i]) continue;
          for (std::size_t c = 0; c < s.c; ++c) {
            const std::size_t j = (n * s.c + c) * hw + i;
            const double diff = p[j] - t[j];
            gp[j] += diff > 0.0 ? d : (diff < 0.0 ? -d : 0.0);
          }
        }
      }
    });
  }
  return out;
}

Tensor cosine_loss(Graph& g, const Tensor& pred, const Tensor& target,
                   std::span<const std::uint8_t> mask) {
  const Nchw s = nchw("cosine_loss", pred);
  require_same_shape("cosine_loss", pred, target);
  const std::size_t hw = s.hw();
  if (mask.size() != s.n * hw) {
    fail("cosine_loss", "mask of " + std::to_string(mask.size()) + " for " +
                            shape_str(pred.shape()));
  }
  static constexpr double kEps = 1e-12;
  auto p = pred.data(), t = target.data();
  std::size_t valid = 0;
  double total = 0.0;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t i = 0; i < hw; ++i) {
      if (!mask[n * hw + i]) continue;
      ++valid;
      double pp = 0.0, tt = 0.0, pt = 0.0;
      for (std::size_t c = 0; c < s.c; ++c) {
        const std::size_t j = (n * s.c + c) * hw + i;
        pp += p[j] * p[j];
        tt += t[j] * t[j];
        pt += p[j] * t[j];
      }
      total += 1.0 - pt / (std::max(std::sqrt(pp), kEps) * std::max(std::sqrt(tt), kEps));
    }
  }
  if (valid == 0) return Tensor::scalar(0.0);
  const double nv = static_cast<double>(valid);
  Tensor out = Tensor::scalar(total / nv);
  if (g.needs_record({&pred})) {
    std::vector<std::uint8_t> m(mask.begin(), mask.end());
    g.record("cosine_loss", {pred}, out, [pred, target, out, m = std::move(m), s, hw, nv]() mutable {
      const double d = out.grad()[0] / nv;
      auto gp = pred.mutable_grad();
      auto p = pred.data(), t = target.data();
      for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t i = 0; i < hw; ++i) {
          if (!m[n * hw + i]) continue;
          double pp = 0.0, tt = 0.0, pt = 0.0;
          for (std::size_t c = 0; c < s.c; ++c) {
            const std::size_t j = (n * s.c + c) * hw + i;
            pp += p[j] * p[j];
            tt += t[j] * t[j];
            pt += p[j] * t[j];
          }
          const double np = std::sqrt(pp), nt = std::max(std::sqrt(tt), kEps);
          if (np <= kEps) {
            // Below the guard the denominator is constant.
            for (std::size_t c = 0; c < s.c; ++c) {
              const std::size_t j = (n * s.c + c) * hw + i;
              gp[j] -= d * t[j] / (kEps * nt);
            }
            continue;
          }
          const double cos = pt / (np * nt);
          for (std::size_t c = 0; c < s.c; ++c) {
            const std::size_t j = (n * s.c + c) * hw + i;
            gp[j] -= d * (t[j] / (np * nt) - cos * p[j] / pp);
          }
        }
      }
    });
  }
  return out;
}

Tensor downsample2x_nearest(Graph& g, const Tensor& x) {
  const Nchw s = nchw("downsample2x_nearest", x);
  if (s.h % 2 || s.w % 2) fail("downsample2x_nearest", "odd extent in " + shape_str(x.shape()));
  const std::size_t oh = s.h / 2, ow = s.w / 2;
  Tensor out({s.n, s.c, oh, ow});
  auto o = out.mutable_data();
  auto in = x.data();
  for (std::size_t p = 0; p < s.n * s.c; ++p) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        o[(p * oh + y) * ow + xx] = in[(p * s.h + 2 * y) * s.w + 2 * xx];
      }
    }
  }
  if (g.needs_record({&x})) {
    g.record("downsample2x_nearest", {x}, out, [x, out, s, oh, ow]() mutable {
      auto go = out.grad();
      auto gx = x.mutable_grad();
      for (std::size_t p = 0; p < s.n * s.c; ++p) {
        for (std::size_t y = 0; y < oh; ++y) {
          for (std::size_t xx = 0; xx < ow; ++xx) {
            gx[(p * s.h + 2 * y) * s.w + 2 * xx] += go[(p * oh + y) * ow + xx];
          }
        }
      }
    });
  }
  return out;
}

Tensor downsample2x_bilinear(Graph& g, const Tensor& x) {
  const Nchw s = nchw("downsample2x_bilinear", x);
  if (s.h % 2 || s.w % 2) fail("downsample2x_bilinear", "odd extent in " + shape_str(x.shape()));
  const std::size_t oh = s.h / 2, ow = s.w / 2;
  Tensor out({s.n, s.c, oh, ow});
  auto o = out.mutable_data();
  auto in = x.data();
  for (std::size_t p = 0; p < s.n * s.c; ++p) {
    for (std::size_t y = 0; y < oh; ++y) {
      const double* r0 = in.data() + (p * s.h + 2 * y) * s.w;
      const double* r1 = r0 + s.w;
      for (std::size_t xx = 0; xx < ow; ++xx) {
        o[(p * oh + y) * ow + xx] =
            0.25 * (r0[2 * xx] + r0[2 * xx + 1] + r1[2 * xx] + r1[2 * xx + 1]);
      }
    }
  }
  if (g.needs_record({&x})) {
    g.record("downsample2x_bilinear", {x}, out, [x, out, s, oh, ow]() mutable {
      auto go = out.grad();
      auto gx = x.mutable_grad();
      for (std::size_t p = 0; p < s.n * s.c; ++p) {
        for (std::size_t y = 0; y < oh; ++y) {
          double* r0 = gx.data() + (p * s.h + 2 * y) * s.w;
          double* r1 = r0 + s.w;
          for (std::size_t xx = 0; xx < ow; ++xx) {
            const double d = 0.25 * go[(p * oh + y) * ow + xx];
            r0[2 * xx] += d;
            r0[2 * xx + 1] += d;
            r1[2 * xx] += d;
            r1[2 * xx + 1] += d;
          }
        }
      }
    });
  }
  return out;
}

Tensor upsample2x_nearest(Graph& g, const Tensor& x) {
  const Nchw s = nchw("upsample2x_nearest", x);
  const std::size_t oh = s.h * 2, ow = s.w * 2;
  Tensor out({s.n, s.c, oh, ow});
  auto o = out.mutable_data();
  auto in = x.data();
  for (std::size_t p = 0; p < s.n * s.c; ++p) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        o[(p * oh + y) * ow + xx] = in[(p * s.h + y / 2) * s.w + xx / 2];
      }
    }
  }
  if (g.needs_record({&x})) {
    g.record("upsample2x_nearest", {x}, out, [x, out, s, oh, ow]() mutable {
      auto go = out.grad();
      auto gx = x.mutable_grad();
      for (std::size_t p = 0; p < s.n * s.c; ++p) {
        for (std::size_t y = 0; y < oh; ++y) {
          for (std::size_t xx = 0; xx < ow; ++xx) {
            gx[(p * s.h + y / 2) * s.w + xx / 2] += go[(p * oh + y) * ow + xx];
          }
        }
      }
    });
  }
  return out;
}

Tensor upsample2x_bilinear(Graph& g, const Tensor& x) {
  const Nchw s = nchw("upsample2x_bilinear", x);
  const std::size_t oh = s.h * 2, ow = s.w * 2;
  auto ty = upsample_taps(s.h);
  auto tx = upsample_taps(s.w);
  Tensor out({s.n, s.c, oh, ow});
  auto o = out.mutable_data();
  auto in = x.data();
  for (std::size_t p = 0; p < s.n * s.c; ++p) {
    const double* src = in.data() + p * s.h * s.w;
    for (std::size_t y = 0; y < oh; ++y) {
      const Tap& a = ty[y];
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const Tap& b = tx[xx];
        o[(p * oh + y) * ow + xx] =
            a.w0 * (b.w0 * src[a.i0 * s.w + b.i0] + b.w1 * src[a.i0 * s.w + b.i1]) +
            a.w1 * (b.w0 * src[a.i1 * s.w + b.i0] + b.w1 * src[a.i1 * s.w + b.i1]);
      }
    }
  }
  if (g.needs_record({&x})) {
    g.record("upsample2x_bilinear", {x}, out, [x, out, s, oh, ow, ty, tx]() mutable {
      auto go = out.grad();
      auto gx = x.mutable_grad();
      for (std::size_t p = 0; p < s.n * s.c; ++p) {
        double* dst = gx.data() + p * s.h * s.w;
        for (std::size_t y = 0; y < oh; ++y) {
          const Tap& a = ty[y];
          for (std::size_t xx = 0; xx < ow; ++xx) {
            const Tap& b = tx[xx];
            const double d = go[(p * oh + y) * ow + xx];
            dst[a.i0 * s.w + b.i0] += d * a.w0 * b.w0;
            dst[a.i0 * s.w + b.i1] += d * a.w0 * b.w1;
            dst[a.i1 * s.w + b.i0] += d * a.w1 * b.w0;
            dst[a.i1 * s.w + b.i1] += d * a.w1 * b.w1;
          }
        }
      }
    });
  }
  return out;
}

}  // namespace ccr::ops
