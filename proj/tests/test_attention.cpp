#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "fefa/attention.hpp"
#include "fefa/ops.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace fefa;
using namespace fefa::attention;
using nn::Tensor;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Matrix m(r, c);
  for (double& v : m.data) v = g(rng);
  return m;
}

void randomize(FefaLayer& layer, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  for (double& v : layer.weight().mutable_data()) v = g(rng);
  if (layer.bias().defined())
    for (double& v : layer.bias().mutable_data()) v = g(rng);
}

}  // namespace

TEST_CASE("pool_time") {
  Matrix x(2, 2);
  x.data = {1, 3, 2, 2};
  CHECK(pool_time(x) == std::vector<double>{2, 2});
  Matrix col(3, 1);
  col.data = {4, 5, 6};
  CHECK(pool_time(col) == col.data);
  CHECK_THROWS(pool_time(Matrix(0, 0)));

  std::mt19937_64 rng(1);
  const auto big = random_matrix(257, 98, rng);
  const auto p = pool_time(big);
  for (std::size_t i = 0; i < 257; i += 8) {
    long double s = 0;
    for (std::size_t t = 0; t < 98; ++t) s += big(i, t);
    CHECK(std::abs(p[i] - static_cast<double>(s / 98)) < 1e-12);
  }
}

TEST_CASE("bin_logits") {
  CHECK(bin_logits(std::vector<double>{1, 2}, std::vector<double>{3, 0.5}, {}, true) == std::vector<double>{3, 1});
  CHECK(bin_logits(std::vector<double>{1, 2}, std::vector<double>{3, 0.5}, std::vector<double>{1, 1}, false) ==
        std::vector<double>{4, 1.5});
  CHECK_THROWS(bin_logits(std::vector<double>{1, 2, 3}, std::vector<double>{3, 0.5}, {}, true));

  // Explicit one-hot selection matrix: logit_i = sum_j I[i][j] * W_j * xbar_j.
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  const std::size_t F = 33;
  std::vector<double> x(F), w(F), b(F);
  for (std::size_t i = 0; i < F; ++i) x[i] = g(rng), w[i] = g(rng), b[i] = g(rng);
  const auto z = bin_logits(x, w, b, true);
  for (std::size_t i = 0; i < F; ++i) {
    double acc = b[i];
    for (std::size_t j = 0; j < F; ++j) acc += (i == j ? 1.0 : 0.0) * w[j] * x[j];
    CHECK(std::abs(z[i] - acc) < 1e-12);
  }
}

TEST_CASE("softmax_bins") {
  const auto u = softmax_bins(std::vector<double>(257, 3.25));
  for (double p : u) CHECK(p == doctest::Approx(1.0 / 257).epsilon(1e-14));
  const auto two = softmax_bins(std::vector<double>{0.0, std::log(2.0)});
  CHECK(two[0] == doctest::Approx(1.0 / 3));
  CHECK(two[1] == doctest::Approx(2.0 / 3));
  const std::vector<double> huge{1e6, 1e6 - 1, 1e6 - 30, 0};
  const auto p = softmax_bins(huge);
  long double s = 1 + std::exp(-1.0L) + std::exp(-30.0L) + std::exp(-1e6L);
  CHECK(p[0] == doctest::Approx(static_cast<double>(1 / s)).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(static_cast<double>(std::exp(-1.0L) / s)).epsilon(1e-15));
  CHECK(p[3] >= 0.0);
}

TEST_CASE("uniform layer divides by F exactly") {
  std::mt19937_64 rng(3);
  FefaLayer layer(257);
  CHECK(layer.parameter_count() == 514);
  CHECK(FefaLayer(257, {.bias = false}).parameter_count() == 257);
  const auto x = random_matrix(257, 40, rng);
  const auto y = fefa_forward(x, layer);
  for (std::size_t i = 0; i < x.data.size(); ++i) CHECK(y.data[i] == x.data[i] / 257.0);
  for (double p : layer.last_p()) CHECK(p == 1.0 / 257.0);
}

TEST_CASE("forward matches oracle and records p") {
  std::mt19937_64 rng(4);
  FefaLayer layer(17);
  randomize(layer, rng);
  const auto x = random_matrix(17, 9, rng);
  const auto y = fefa_forward(x, layer);
  const auto xbar = pool_time(x);
  std::vector<double> z(17);
  for (std::size_t i = 0; i < 17; ++i) z[i] = layer.weight()[i] * xbar[i] + layer.bias()[i];
  const auto p = oracle::softmax(z);
  double total = 0;
  for (std::size_t i = 0; i < 17; ++i) {
    CHECK(layer.last_p()[i] == doctest::Approx(p[i]).epsilon(1e-13));
    total += layer.last_p()[i];
    for (std::size_t t = 0; t < 9; ++t) CHECK(y(i, t) == doctest::Approx(p[i] * x(i, t)).epsilon(1e-13));
  }
  CHECK(std::abs(total - 1.0) < 1e-12);
  const auto map = layer.attention_map(x);
  for (std::size_t i = 0; i < 17; ++i) {
    CHECK(map.p[i] == layer.last_p()[i]);
    CHECK(map.m[i] == doctest::Approx(p[i] * xbar[i]));
  }
  CHECK_THROWS(fefa_forward(random_matrix(16, 9, rng), layer));
}

TEST_CASE("input independent variant ignores the input") {
  std::mt19937_64 rng(5);
  FefaLayer layer(12, {.bias = true, .input_dependent = false});
  randomize(layer, rng);
  fefa_forward(random_matrix(12, 5, rng), layer);
  const std::vector<double> first(layer.last_p().begin(), layer.last_p().end());
  fefa_forward(random_matrix(12, 5, rng), layer);
  CHECK(std::equal(first.begin(), first.end(), layer.last_p().begin()));
}

TEST_CASE("permutation equivariance") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t F = 10, T = 7;
    FefaLayer a(F), b(F);
    randomize(a, rng);
    std::vector<std::size_t> perm(F);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto x = random_matrix(F, T, rng);
    Matrix xp(F, T);
    for (std::size_t i = 0; i < F; ++i) {
      b.weight().mutable_data()[i] = a.weight()[perm[i]];
      b.bias().mutable_data()[i] = a.bias()[perm[i]];
      for (std::size_t t = 0; t < T; ++t) xp(i, t) = x(perm[i], t);
    }
    const auto y = fefa_forward(x, a);
    const auto yp = fefa_forward(xp, b);
    for (std::size_t i = 0; i < F; ++i)
      for (std::size_t t = 0; t < T; ++t) CHECK(yp(i, t) == doctest::Approx(y(perm[i], t)).epsilon(1e-14));
  }
}

TEST_CASE("monotone response") {
  std::vector<double> z{0.3, -1.0, 2.0, 0.0};
  const auto p0 = softmax_bins(z);
  z[1] += 0.5;
  const auto p1 = softmax_bins(z);
  CHECK(p1[1] > p0[1]);
  for (std::size_t j : {0u, 2u, 3u}) CHECK(p1[j] < p0[j]);
}

TEST_CASE("hidden maps pool over channels and time") {
  std::mt19937_64 rng(7);
  FefaLayer layer(16);
  randomize(layer, rng);
  const Tensor h = oracle::random_tensor({4, 16, 20}, rng);
  const Tensor y = fefa_forward_hidden(h, layer);
  std::vector<double> z(16);
  for (std::size_t f = 0; f < 16; ++f) {
    double s = 0;
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t t = 0; t < 20; ++t) s += h[(c * 16 + f) * 20 + t];
    z[f] = layer.weight()[f] * s / 80 + layer.bias()[f];
  }
  const auto p = oracle::softmax(z);
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t f = 0; f < 16; ++f)
      for (std::size_t t = 0; t < 20; ++t) {
        const std::size_t k = (c * 16 + f) * 20 + t;
        CHECK(std::abs(y[k] - p[f] * h[k]) < 1e-12);
      }
  CHECK_THROWS(fefa_forward_hidden(oracle::random_tensor({4, 15, 20}, rng), layer));

  const Tensor one = oracle::random_tensor({1, 16, 9}, rng);
  const Tensor hy = fefa_forward_hidden(one, layer);
  Matrix m(16, 9);
  m.data.assign(one.data().begin(), one.data().end());
  const auto my = fefa_forward(m, layer);
  CHECK(std::equal(my.data.begin(), my.data.end(), hy.data().begin()));
}

TEST_CASE("gradients through W, b and X") {
  std::mt19937_64 rng(8);
  for (bool dep : {true, false}) {
    FefaLayer layer(9, {.bias = true, .input_dependent = dep});
    randomize(layer, rng);
    Tensor x = oracle::random_tensor({2, 3, 9, 5}, rng, true);
    const Tensor probe = oracle::random_tensor({2, 3, 9, 5}, rng);
    const auto r = gradcheck::check([&] { return nn::sum(nn::mul(layer.forward(x), probe)); },
                                    {{"x", x}, {"W", layer.weight()}, {"b", layer.bias()}});
    CHECK(r.rel_error < gradcheck::kTolerance);
  }
}

TEST_CASE("attention csv round trip") {
  std::mt19937_64 rng(9);
  FefaLayer layer(257);
  randomize(layer, rng, 0.3);
  const auto map = layer.attention_map(random_matrix(257, 30, rng));
  const auto path = std::filesystem::temp_directory_path() / "fefa_test_attention.csv";
  write_attention_csv(path, map, 16000, 512);
  const auto back = read_attention_csv(path);
  CHECK(back.p == map.p);
  CHECK(back.m == map.m);
  std::ifstream in(path);
  std::string header, row1;
  std::getline(in, header);
  std::getline(in, row1);
  std::getline(in, row1);
  CHECK(header == "bin_index,center_frequency_hz,p,m");
  CHECK(row1.rfind("1,31.25,", 0) == 0);
  std::filesystem::remove(path);
}
