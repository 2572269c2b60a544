#include "fefa/attention.hpp"
#include "fefa/ops.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fefa::attention {

using nn::Node;
using nn::Tensor;

std::vector<double> pool_time(const Matrix& x) {
  if (x.rows == 0 || x.cols == 0) throw std::invalid_argument("pool_time: empty matrix");
  std::vector<double> out(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) {
    double s = 0.0;
    for (std::size_t t = 0; t < x.cols; ++t) s += x(i, t);
    out[i] = s / static_cast<double>(x.cols);
  }
  return out;
}

std::vector<double> bin_logits(std::span<const double> pooled, std::span<const double> weight,
                               std::span<const double> bias, bool input_dependent) {
  if (pooled.size() != weight.size() || (!bias.empty() && bias.size() != weight.size()))
    throw std::invalid_argument("bin_logits: length mismatch (pooled " + std::to_string(pooled.size()) +
                                ", weight " + std::to_string(weight.size()) + ", bias " +
                                std::to_string(bias.size()) + ")");
  std::vector<double> out(weight.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = (input_dependent ? weight[i] * pooled[i] : weight[i]) + (bias.empty() ? 0.0 : bias[i]);
  return out;
}

std::vector<double> softmax_bins(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax_bins: empty input");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] = std::exp(logits[i] - mx));
  for (double& v : p) v /= s;
  return p;
}

namespace {

struct MapDims {
  std::size_t n, c, f, t;
};

MapDims map_dims(const Tensor& x, const char* op) {
  if (x.rank() != 4)
    throw std::invalid_argument(std::string(op) + ": expected [N,C,F,T], got " + nn::shape_string(x.shape()));
  MapDims d{x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
  if (d.c == 0 || d.f == 0 || d.t == 0) throw std::invalid_argument(std::string(op) + ": empty map");
  return d;
}

}  // namespace

Tensor pool_channels_time(const Tensor& x) {
  const MapDims d = map_dims(x, "pool_channels_time");
  std::vector<double> out(d.n * d.f);
  const auto v = x.data();
  const double count = static_cast<double>(d.c * d.t);
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t i = 0; i < d.f; ++i) {
      double s = 0.0;
      for (std::size_t c = 0; c < d.c; ++c) {
        const double* row = v.data() + ((n * d.c + c) * d.f + i) * d.t;
        for (std::size_t t = 0; t < d.t; ++t) s += row[t];
      }
      out[n * d.f + i] = s / count;
    }
  return nn::make_result({d.n, d.f}, std::move(out), {x}, [d, count](Node& node) {
    auto g = node.input_grad(0);
    for (std::size_t n = 0; n < d.n; ++n)
      for (std::size_t c = 0; c < d.c; ++c)
        for (std::size_t i = 0; i < d.f; ++i) {
          const double gi = node.grad[n * d.f + i] / count;
          double* row = g.data() + ((n * d.c + c) * d.f + i) * d.t;
          for (std::size_t t = 0; t < d.t; ++t) row[t] += gi;
        }
  });
}

Tensor bin_logits(const Tensor& pooled, const Tensor& weight, const Tensor& bias, bool input_dependent) {
  if (pooled.rank() != 2 || weight.rank() != 1 || pooled.dim(1) != weight.dim(0) ||
      (bias.defined() && bias.shape() != weight.shape()))
    throw std::invalid_argument("bin_logits: pooled " + nn::shape_string(pooled.shape()) + " incompatible with weight " +
                                nn::shape_string(weight.shape()) +
                                (bias.defined() ? " and bias " + nn::shape_string(bias.shape()) : std::string()));
  const std::size_t n = pooled.dim(0), f = weight.dim(0);
  std::vector<double> out(n * f);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t i = 0; i < f; ++i)
      out[r * f + i] = (input_dependent ? weight[i] * pooled[r * f + i] : weight[i]) + (bias.defined() ? bias[i] : 0.0);

  // The input-independent form has no path back to the pooled values.
  const Tensor source = input_dependent ? pooled : Tensor{};
  return nn::make_result({n, f}, std::move(out), {weight, bias, source}, [n, f, input_dependent](Node& node) {
    const auto& w = node.inputs[0]->value;
    auto dw = node.input_grad(0);
    auto db = node.inputs[1] ? node.input_grad(1) : std::span<double>{};
    auto dp = input_dependent ? node.input_grad(2) : std::span<double>{};
    const double* pooled_v = input_dependent ? node.inputs[2]->value.data() : nullptr;
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t i = 0; i < f; ++i) {
        const double g = node.grad[r * f + i];
        if (!dw.empty()) dw[i] += input_dependent ? g * pooled_v[r * f + i] : g;
        if (!db.empty()) db[i] += g;
        if (!dp.empty()) dp[r * f + i] += g * w[i];
      }
  });
}

Tensor softmax_bins(const Tensor& logits) {
  if (logits.rank() != 2) throw std::invalid_argument("softmax_bins: expected [N,F], got " + nn::shape_string(logits.shape()));
  const std::size_t n = logits.dim(0), f = logits.dim(1);
  std::vector<double> out(n * f);
  for (std::size_t r = 0; r < n; ++r) {
    const auto p = softmax_bins(logits.data().subspan(r * f, f));
    std::copy(p.begin(), p.end(), out.begin() + static_cast<std::ptrdiff_t>(r * f));
  }
  return nn::make_result({n, f}, std::move(out), {logits}, [n, f](Node& node) {
    auto g = node.input_grad(0);
    for (std::size_t r = 0; r < n; ++r) {
      const double* p = node.value.data() + r * f;
      const double* gy = node.grad.data() + r * f;
      double dot = 0.0;
      for (std::size_t i = 0; i < f; ++i) dot += gy[i] * p[i];
      for (std::size_t i = 0; i < f; ++i) g[r * f + i] += p[i] * (gy[i] - dot);
    }
  });
}

Tensor apply_bin_attention(const Tensor& x, const Tensor& logits) {
  const MapDims d = map_dims(x, "apply_bin_attention");
  if (logits.rank() != 2 || logits.dim(0) != d.n || logits.dim(1) != d.f)
    throw std::invalid_argument("apply_bin_attention: logits " + nn::shape_string(logits.shape()) +
                                " do not match map " + nn::shape_string(x.shape()));
  // e and S are kept separately so that uniform logits give x / F exactly.
  auto expv = std::make_shared<std::vector<double>>(d.n * d.f);
  auto sums = std::make_shared<std::vector<double>>(d.n);
  for (std::size_t n = 0; n < d.n; ++n) {
    const double* z = logits.data().data() + n * d.f;
    const double mx = *std::max_element(z, z + d.f);
    double s = 0.0;
    for (std::size_t i = 0; i < d.f; ++i) s += ((*expv)[n * d.f + i] = std::exp(z[i] - mx));
    (*sums)[n] = s;
  }
  std::vector<double> out(x.size());
  const auto xv = x.data();
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t c = 0; c < d.c; ++c)
      for (std::size_t i = 0; i < d.f; ++i) {
        const double e = (*expv)[n * d.f + i], s = (*sums)[n];
        const std::size_t base = ((n * d.c + c) * d.f + i) * d.t;
        for (std::size_t t = 0; t < d.t; ++t) out[base + t] = xv[base + t] * e / s;
      }

  return nn::make_result(x.shape(), std::move(out), {x, logits}, [d, expv, sums](Node& node) {
    const auto& xv = node.inputs[0]->value;
    auto dx = node.input_grad(0);
    auto dz = node.input_grad(1);
    std::vector<double> a(d.f);
    for (std::size_t n = 0; n < d.n; ++n) {
      std::fill(a.begin(), a.end(), 0.0);
      const double s = (*sums)[n];
      for (std::size_t c = 0; c < d.c; ++c)
        for (std::size_t i = 0; i < d.f; ++i) {
          const double p = (*expv)[n * d.f + i] / s;
          const std::size_t base = ((n * d.c + c) * d.f + i) * d.t;
          double acc = 0.0;
          for (std::size_t t = 0; t < d.t; ++t) {
            const double g = node.grad[base + t];
            acc += g * xv[base + t];
            if (!dx.empty()) dx[base + t] += g * p;
          }
          a[i] += acc;
        }
      if (dz.empty()) continue;
      double mean_a = 0.0;
      for (std::size_t i = 0; i < d.f; ++i) mean_a += (*expv)[n * d.f + i] / s * a[i];
      for (std::size_t i = 0; i < d.f; ++i) dz[n * d.f + i] += (*expv)[n * d.f + i] / s * (a[i] - mean_a);
    }
  });
}

FefaLayer::FefaLayer(nn::ParameterSet& params, const std::string& prefix, std::size_t bins, FefaOptions opts)
    : bins_(bins), opts_(opts) {
  if (bins == 0) throw std::invalid_argument("FEFA layer needs at least one bin");
  weight_ = params.add(prefix + ".weight", {bins});
  if (opts_.bias) bias_ = params.add(prefix + ".bias", {bins});
}

FefaLayer::FefaLayer(std::size_t bins, FefaOptions opts) : FefaLayer(own_params_, "fefa", bins, opts) {}

Tensor FefaLayer::forward(const Tensor& x, Matrix* p_out) const {
  const bool plain = x.rank() == 2;
  const Tensor in = plain ? nn::reshape(x, {1, 1, x.dim(0), x.dim(1)}) : x;
  if (in.rank() != 4 || in.dim(2) != bins_)
    throw std::invalid_argument("FEFA layer with " + std::to_string(bins_) + " bins applied to map " +
                                nn::shape_string(x.shape()));
  const Tensor logits = bin_logits(pool_channels_time(in), weight_, bias_, opts_.input_dependent);
  if (p_out) {
    const std::size_t n = logits.dim(0);
    *p_out = Matrix(n, bins_);
    for (std::size_t r = 0; r < n; ++r) {
      const auto p = softmax_bins(logits.data().subspan(r * bins_, bins_));
      std::copy(p.begin(), p.end(), p_out->data.begin() + static_cast<std::ptrdiff_t>(r * bins_));
    }
  }
  const Tensor out = apply_bin_attention(in, logits);
  return plain ? nn::reshape(out, x.shape()) : out;
}

Tensor FefaLayer::forward(const Tensor& x) { return forward(x, &last_p_); }

std::span<const double> FefaLayer::last_p(std::size_t n) const {
  if (n >= last_p_.rows) throw std::out_of_range("no recorded attention for example " + std::to_string(n));
  return std::span<const double>(last_p_.data).subspan(n * bins_, bins_);
}

AttentionMap FefaLayer::attention_map(const Matrix& x) const {
  if (x.rows != bins_)
    throw std::invalid_argument("attention_map: matrix has " + std::to_string(x.rows) + " bins, layer has " +
                                std::to_string(bins_));
  const auto pooled = pool_time(x);
  const auto b = bias_.defined() ? bias_.data() : std::span<const double>{};
  AttentionMap map;
  map.p = softmax_bins(bin_logits(pooled, weight_.data(), b, opts_.input_dependent));
  map.m.resize(bins_);
  for (std::size_t i = 0; i < bins_; ++i) map.m[i] = map.p[i] * pooled[i];
  return map;
}

Matrix fefa_forward(const Matrix& x, FefaLayer& layer) {
  const Tensor out = layer.forward(Tensor::from({x.rows, x.cols}, x.data));
  Matrix m(x.rows, x.cols);
  std::copy(out.data().begin(), out.data().end(), m.data.begin());
  return m;
}

Tensor fefa_forward_hidden(const Tensor& h, FefaLayer& layer) {
  if (h.rank() != 3)
    throw std::invalid_argument("fefa_forward_hidden: expected [C,F,T], got " + nn::shape_string(h.shape()));
  const Tensor out = layer.forward(nn::reshape(h, {1, h.dim(0), h.dim(1), h.dim(2)}));
  return nn::reshape(out, h.shape());
}

void write_attention_csv(const std::filesystem::path& path, const AttentionMap& map, int sample_rate,
                         std::size_t nfft) {
  if (map.p.size() != map.m.size()) throw std::invalid_argument("attention map p/m length mismatch");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "bin_index,center_frequency_hz,p,m\n";
  for (std::size_t i = 0; i < map.p.size(); ++i) {
    const double hz = static_cast<double>(i) * sample_rate / static_cast<double>(nfft);
    out << i << ',' << format_double(hz, 9) << ',' << format_double(map.p[i], 17) << ','
        << format_double(map.m[i], 17) << '\n';
  }
}

AttentionMap read_attention_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "bin_index,center_frequency_hz,p,m")
    throw std::runtime_error("unexpected attention CSV header in " + path.string());
  AttentionMap map;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 4) throw std::runtime_error("malformed attention CSV row: " + line);
    map.p.push_back(std::stod(cells[2]));
    map.m.push_back(std::stod(cells[3]));
  }
  return map;
}

}  // namespace fefa::attention
