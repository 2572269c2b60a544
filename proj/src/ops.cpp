#include "fefa/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace fefa::nn {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                                " vs " + shape_string(b.shape()));
}

struct ConvGeom {
  std::size_t n, c, h, w, o, kh, kw, stride, pad, ho, wo;
  std::size_t patch() const { return c * kh * kw; }
  std::size_t out_pixels() const { return ho * wo; }
};

void im2col(const double* x, const ConvGeom& g, double* cols) {
  const std::size_t p = g.out_pixels();
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* row = cols + ((c * g.kh + i) * g.kw + j) * p;
        const double* plane = x + c * g.h * g.w;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
          double* dst = row + oy * g.wo;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? 0.0 : src[ix];
          }
        }
      }
}

void col2im_add(const double* cols, const ConvGeom& g, double* dx) {
  const std::size_t p = g.out_pixels();
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* row = cols + ((c * g.kh + i) * g.kw + j) * p;
        double* plane = dx + c * g.h * g.w;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          double* dst = plane + static_cast<std::size_t>(iy) * g.w;
          const double* src = row + oy * g.wo;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ix] += src[ox];
          }
        }
      }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] + b[i];
  return make_result(a.shape(), std::move(v), {a, b}, [](Node& out) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto g = out.input_grad(k);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * b[i];
  return make_result(a.shape(), std::move(v), {a, b}, [](Node& out) {
    const auto& av = out.inputs[0]->value;
    const auto& bv = out.inputs[1]->value;
    if (auto g = out.input_grad(0); !g.empty())
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * bv[i];
    if (auto g = out.input_grad(1); !g.empty())
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * av[i];
  });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * c;
  return make_result(a.shape(), std::move(v), {a}, [c](Node& out) {
    auto g = out.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * c;
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) s += x;
  return make_result({1}, {s}, {a}, [](Node& out) {
    auto g = out.input_grad(0);
    for (double& x : g) x += out.grad[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size())
    throw std::invalid_argument("reshape: cannot view " + shape_string(a.shape()) + " as " +
                                shape_string(shape));
  std::vector<double> v(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(v), {a}, [](Node& out) {
    auto g = out.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] > 0.0 ? x[i] : 0.0;
  return make_result(x.shape(), std::move(v), {x}, [](Node& out) {
    const auto& xv = out.inputs[0]->value;
    auto g = out.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > 0.0) g[i] += out.grad[i];
  });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double z = x[i];
    v[i] = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  }
  return make_result(x.shape(), std::move(v), {x}, [](Node& out) {
    auto g = out.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * out.value[i] * (1.0 - out.value[i]);
  });
}

Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias, Conv2dOptions opts) {
  const bool batched = input.rank() == 4;
  if (input.rank() != 3 && input.rank() != 4)
    throw std::invalid_argument("conv2d: input must be [C,H,W] or [N,C,H,W], got " +
                                shape_string(input.shape()));
  if (kernels.rank() != 4)
    throw std::invalid_argument("conv2d: kernels must be [C_out,C_in,kH,kW], got " +
                                shape_string(kernels.shape()));
  if (opts.stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  const std::size_t off = batched ? 1 : 0;
  ConvGeom g{};
  g.n = batched ? input.dim(0) : 1;
  g.c = input.dim(off);
  g.h = input.dim(off + 1);
  g.w = input.dim(off + 2);
  g.o = kernels.dim(0);
  g.kh = kernels.dim(2);
  g.kw = kernels.dim(3);
  g.stride = opts.stride;
  g.pad = opts.padding;
  if (kernels.dim(1) != g.c)
    throw std::invalid_argument("conv2d: input " + shape_string(input.shape()) +
                                " incompatible with kernels " + shape_string(kernels.shape()));
  if (g.h + 2 * g.pad < g.kh || g.w + 2 * g.pad < g.kw)
    throw std::invalid_argument("conv2d: padded input " + shape_string(input.shape()) +
                                " smaller than kernels " + shape_string(kernels.shape()));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.o))
    throw std::invalid_argument("conv2d: bias " + shape_string(bias.shape()) +
                                " does not match kernels " + shape_string(kernels.shape()));
  g.ho = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.kw) / g.stride + 1;

  const std::size_t P = g.out_pixels();
  const std::size_t K = g.patch();
  std::vector<double> out(g.n * g.o * P);
  std::vector<double> cols(K * P);
  ConstMap wm(kernels.data().data(), static_cast<Eigen::Index>(g.o), static_cast<Eigen::Index>(K));
  for (std::size_t n = 0; n < g.n; ++n) {
    im2col(input.data().data() + n * g.c * g.h * g.w, g, cols.data());
    ConstMap cm(cols.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
    MutMap ym(out.data() + n * g.o * P, static_cast<Eigen::Index>(g.o), static_cast<Eigen::Index>(P));
    ym.noalias() = wm * cm;
    if (bias.defined())
      for (std::size_t o = 0; o < g.o; ++o) ym.row(static_cast<Eigen::Index>(o)).array() += bias[o];
  }

  Shape shape = batched ? Shape{g.n, g.o, g.ho, g.wo} : Shape{g.o, g.ho, g.wo};
  return make_result(std::move(shape), std::move(out), {input, kernels, bias}, [g](Node& node) {
    const std::size_t P = g.out_pixels();
    const std::size_t K = g.patch();
    const auto ei = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
    auto dx = node.input_grad(0);
    auto dw = node.input_grad(1);
    auto db = node.inputs[2] ? node.input_grad(2) : std::span<double>{};
    const auto& x = node.inputs[0]->value;
    ConstMap wm(node.inputs[1]->value.data(), ei(g.o), ei(K));
    std::vector<double> cols(K * P);
    std::vector<double> dcols(dx.empty() ? 0 : K * P);
    for (std::size_t n = 0; n < g.n; ++n) {
      ConstMap dy(node.grad.data() + n * g.o * P, ei(g.o), ei(P));
      if (!dw.empty()) {
        im2col(x.data() + n * g.c * g.h * g.w, g, cols.data());
        ConstMap cm(cols.data(), ei(K), ei(P));
        MutMap dwm(dw.data(), ei(g.o), ei(K));
        dwm.noalias() += dy * cm.transpose();
      }
      if (!dx.empty()) {
        MutMap dcm(dcols.data(), ei(K), ei(P));
        dcm.noalias() = wm.transpose() * dy;
        col2im_add(dcols.data(), g, dx.data() + n * g.c * g.h * g.w);
      }
      if (!db.empty())
        for (std::size_t o = 0; o < g.o; ++o) db[o] += dy.row(ei(o)).sum();
    }
  });
}

Tensor max_pool2d(const Tensor& input, std::size_t kernel, std::size_t stride) {
  if (input.rank() != 4) throw std::invalid_argument("max_pool2d: expected [N,C,H,W], got " + shape_string(input.shape()));
  if (kernel == 0 || stride == 0) throw std::invalid_argument("max_pool2d: kernel and stride must be positive");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h < kernel || w < kernel)
    throw std::invalid_argument("max_pool2d: input " + shape_string(input.shape()) + " smaller than kernel");
  const std::size_t ho = (h - kernel) / stride + 1, wo = (w - kernel) / stride + 1;
  std::vector<double> out(n * c * ho * wo);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  const auto x = input.data();
  std::size_t k = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox, ++k) {
        std::size_t best = base + oy * stride * w + ox * stride;
        for (std::size_t i = 0; i < kernel; ++i)
          for (std::size_t j = 0; j < kernel; ++j) {
            const std::size_t idx = base + (oy * stride + i) * w + ox * stride + j;
            if (x[idx] > x[best]) best = idx;
          }
        out[k] = x[best];
        (*argmax)[k] = best;
      }
  }
  return make_result({n, c, ho, wo}, std::move(out), {input}, [argmax](Node& node) {
    auto g = node.input_grad(0);
    for (std::size_t i = 0; i < node.grad.size(); ++i) g[(*argmax)[i]] += node.grad[i];
  });
}

Tensor global_avg_pool(const Tensor& input) {
  if (input.rank() != 4) throw std::invalid_argument("global_avg_pool: expected [N,C,H,W], got " + shape_string(input.shape()));
  const std::size_t nc = input.dim(0) * input.dim(1), hw = input.dim(2) * input.dim(3);
  std::vector<double> out(nc, 0.0);
  const auto x = input.data();
  for (std::size_t p = 0; p < nc; ++p) {
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += x[p * hw + i];
    out[p] = s / static_cast<double>(hw);
  }
  return make_result({input.dim(0), input.dim(1)}, std::move(out), {input}, [nc, hw](Node& node) {
    auto g = node.input_grad(0);
    for (std::size_t p = 0; p < nc; ++p) {
      const double d = node.grad[p] / static_cast<double>(hw);
      for (std::size_t i = 0; i < hw; ++i) g[p * hw + i] += d;
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(0))
    throw std::invalid_argument("linear: input " + shape_string(x.shape()) + " incompatible with weight " +
                                shape_string(weight.shape()));
  const std::size_t n = x.dim(0), in = weight.dim(0), outd = weight.dim(1);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != outd))
    throw std::invalid_argument("linear: bias " + shape_string(bias.shape()) + " does not match weight " +
                                shape_string(weight.shape()));
  const auto ei = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
  std::vector<double> out(n * outd);
  MutMap y(out.data(), ei(n), ei(outd));
  y.noalias() = ConstMap(x.data().data(), ei(n), ei(in)) * ConstMap(weight.data().data(), ei(in), ei(outd));
  if (bias.defined())
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < outd; ++c) out[r * outd + c] += bias[c];
  return make_result({n, outd}, std::move(out), {x, weight, bias}, [n, in, outd, ei](Node& node) {
    ConstMap dy(node.grad.data(), ei(n), ei(outd));
    if (auto dx = node.input_grad(0); !dx.empty())
      MutMap(dx.data(), ei(n), ei(in)).noalias() += dy * ConstMap(node.inputs[1]->value.data(), ei(in), ei(outd)).transpose();
    if (auto dw = node.input_grad(1); !dw.empty())
      MutMap(dw.data(), ei(in), ei(outd)).noalias() += ConstMap(node.inputs[0]->value.data(), ei(n), ei(in)).transpose() * dy;
    if (node.inputs[2])
      if (auto db = node.input_grad(2); !db.empty())
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < outd; ++c) db[c] += node.grad[r * outd + c];
  });
}

Tensor batch_norm2d(const Tensor& input, BatchNormState& bn, bool training, double momentum, double eps) {
  if (input.rank() != 4) throw std::invalid_argument("batch_norm2d: expected [N,C,H,W], got " + shape_string(input.shape()));
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  if (bn.gamma.size() != c || bn.beta.size() != c || bn.running_mean.size() != c || bn.running_var.size() != c)
    throw std::invalid_argument("batch_norm2d: parameters of size " + std::to_string(bn.gamma.size()) +
                                " do not match input " + shape_string(input.shape()));
  const auto x = input.data();
  const double count = static_cast<double>(n * hw);
  auto xhat = std::make_shared<std::vector<double>>(input.size());
  auto inv_std = std::make_shared<std::vector<double>>(c);
  std::vector<double> out(input.size());

  for (std::size_t ch = 0; ch < c; ++ch) {
    double mu, var;
    if (training) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < hw; ++i) s += x[(b * c + ch) * hw + i];
      mu = s / count;
      double ss = 0.0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < hw; ++i) {
          const double d = x[(b * c + ch) * hw + i] - mu;
          ss += d * d;
        }
      var = ss / count;
      auto rm = bn.running_mean.mutable_data();
      auto rv = bn.running_var.mutable_data();
      rm[ch] = momentum * rm[ch] + (1.0 - momentum) * mu;
      rv[ch] = momentum * rv[ch] + (1.0 - momentum) * var;
    } else {
      mu = bn.running_mean[ch];
      var = bn.running_var[ch];
    }
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[ch] = is;
    const double gm = bn.gamma[ch], bt = bn.beta[ch];
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < hw; ++i) {
        const std::size_t idx = (b * c + ch) * hw + i;
        const double xh = (x[idx] - mu) * is;
        (*xhat)[idx] = xh;
        out[idx] = gm * xh + bt;
      }
  }

  return make_result(input.shape(), std::move(out), {input, bn.gamma, bn.beta},
                     [n, c, hw, training, xhat, inv_std](Node& node) {
    auto dx = node.input_grad(0);
    auto dgamma = node.input_grad(1);
    auto dbeta = node.input_grad(2);
    const auto& gamma = node.inputs[1]->value;
    const double count = static_cast<double>(n * hw);
    for (std::size_t ch = 0; ch < c; ++ch) {
      double sum_dy = 0.0, sum_dy_xh = 0.0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < hw; ++i) {
          const std::size_t idx = (b * c + ch) * hw + i;
          sum_dy += node.grad[idx];
          sum_dy_xh += node.grad[idx] * (*xhat)[idx];
        }
      if (!dgamma.empty()) dgamma[ch] += sum_dy_xh;
      if (!dbeta.empty()) dbeta[ch] += sum_dy;
      if (dx.empty()) continue;
      const double k = gamma[ch] * (*inv_std)[ch];
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < hw; ++i) {
          const std::size_t idx = (b * c + ch) * hw + i;
          dx[idx] += training ? k * (node.grad[idx] - sum_dy / count - (*xhat)[idx] * sum_dy_xh / count)
                              : k * node.grad[idx];
        }
    }
  });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw std::invalid_argument("softmax_cross_entropy: logits must be [N,K], got " + shape_string(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n)
    throw std::invalid_argument("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(n) + " rows");
  auto probs = std::make_shared<std::vector<double>>(n * k);
  std::vector<int> lab(labels.begin(), labels.end());
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (lab[r] < 0 || static_cast<std::size_t>(lab[r]) >= k)
      throw std::out_of_range("softmax_cross_entropy: class index " + std::to_string(lab[r]) +
                              " out of range for " + std::to_string(k) + " classes");
    const double* z = logits.data().data() + r * k;
    const double zmax = *std::max_element(z, z + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(z[j] - zmax);
    for (std::size_t j = 0; j < k; ++j) (*probs)[r * k + j] = std::exp(z[j] - zmax) / s;
    loss += std::log(s) - (z[lab[r]] - zmax);
  }
  loss /= static_cast<double>(n);
  return make_result({1}, {loss}, {logits}, [n, k, probs, lab](Node& node) {
    auto g = node.input_grad(0);
    const double d = node.grad[0] / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < k; ++j)
        g[r * k + j] += d * ((*probs)[r * k + j] - (static_cast<int>(j) == lab[r] ? 1.0 : 0.0));
  });
}

Tensor softmax_cross_entropy(const Tensor& logits, int label) {
  const Tensor row = logits.rank() == 1 ? reshape(logits, {1, logits.dim(0)}) : logits;
  const int labels[1] = {label};
  return softmax_cross_entropy(row, labels);
}

Tensor channel_scale(const Tensor& x, const Tensor& s) {
  if (x.rank() != 4 || s.rank() != 2 || s.dim(0) != x.dim(0) || s.dim(1) != x.dim(1))
    throw std::invalid_argument("channel_scale: input " + shape_string(x.shape()) + " incompatible with scales " +
                                shape_string(s.shape()));
  const std::size_t nc = s.size(), hw = x.dim(2) * x.dim(3);
  std::vector<double> out(x.size());
  for (std::size_t p = 0; p < nc; ++p)
    for (std::size_t i = 0; i < hw; ++i) out[p * hw + i] = s[p] * x[p * hw + i];
  return make_result(x.shape(), std::move(out), {x, s}, [nc, hw](Node& node) {
    const auto& xv = node.inputs[0]->value;
    const auto& sv = node.inputs[1]->value;
    auto dx = node.input_grad(0);
    auto ds = node.input_grad(1);
    for (std::size_t p = 0; p < nc; ++p) {
      double acc = 0.0;
      for (std::size_t i = 0; i < hw; ++i) {
        const std::size_t idx = p * hw + i;
        if (!dx.empty()) dx[idx] += node.grad[idx] * sv[p];
        acc += node.grad[idx] * xv[idx];
      }
      if (!ds.empty()) ds[p] += acc;
    }
  });
}

Tensor mean_over_time(const Tensor& x) {
  if (x.rank() != 4) throw std::invalid_argument("mean_over_time: expected [N,C,F,T], got " + shape_string(x.shape()));
  const std::size_t n = x.dim(0), cf = x.dim(1) * x.dim(2), t = x.dim(3);
  if (t == 0) throw std::invalid_argument("mean_over_time: empty time axis");
  std::vector<double> out(n * cf);
  for (std::size_t r = 0; r < n * cf; ++r) {
    double s = 0.0;
    for (std::size_t i = 0; i < t; ++i) s += x[r * t + i];
    out[r] = s / static_cast<double>(t);
  }
  return make_result({n, cf}, std::move(out), {x}, [n, cf, t](Node& node) {
    auto g = node.input_grad(0);
    for (std::size_t r = 0; r < n * cf; ++r) {
      const double d = node.grad[r] / static_cast<double>(t);
      for (std::size_t i = 0; i < t; ++i) g[r * t + i] += d;
    }
  });
}

}  // namespace fefa::nn
