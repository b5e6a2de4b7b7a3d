#include <doctest.h>

#include <cmath>
#include <limits>

#include "mobkit/errors.hpp"
#include "mobkit/lora.hpp"

using namespace mobkit;

namespace {

// Triple-loop dense oracle: (W0 + (alpha / r) W1 W2) X.
Eigen::MatrixXd dense_oracle(const LoraAdapter& a, const Eigen::MatrixXd& x) {
  const auto d = a.d(), k = a.k(), n = x.cols();
  Eigen::MatrixXd w = a.w0;
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) {
      long double acc = 0.0L;
      for (Eigen::Index q = 0; q < a.rank; ++q) acc += static_cast<long double>(a.w1(i, q)) * a.w2(q, j);
      w(i, j) += static_cast<double>(static_cast<long double>(a.alpha) / a.rank * acc);
    }
  }
  Eigen::MatrixXd h(d, n);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index c = 0; c < n; ++c) {
      long double acc = 0.0L;
      for (Eigen::Index j = 0; j < k; ++j) acc += static_cast<long double>(w(i, j)) * x(j, c);
      h(i, c) = static_cast<double>(acc);
    }
  }
  return h;
}

double max_rel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const double scale = std::max(1.0, b.cwiseAbs().maxCoeff());
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

}  // namespace

TEST_CASE("forward matches the dense oracle") {
  Rng rng(11);
  const auto a = LoraAdapter::random(8, 8, 2, 16.0, rng);
  const auto x = random_matrix(8, 3, rng);
  CHECK(max_rel(lora_forward(a, x), dense_oracle(a, x)) < 1e-12);
  for (int trial = 0; trial < 50; ++trial) {
    const int d = 2 + static_cast<int>(rng.below(31));
    const int k = 2 + static_cast<int>(rng.below(31));
    const int r = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::min(d, k) - 1)));
    const auto ad = LoraAdapter::random(d, k, r, 1.0 + static_cast<double>(rng.below(64)), rng);
    const auto xs = random_matrix(k, 1 + static_cast<Eigen::Index>(rng.below(4)), rng);
    CHECK(max_rel(lora_forward(ad, xs), dense_oracle(ad, xs)) < 1e-12);
  }
}

TEST_CASE("zero adapter and identity embedding") {
  Rng rng(3);
  auto a = LoraAdapter::random(6, 6, 2, 8.0, rng);
  const auto x = random_matrix(6, 4, rng);
  const Eigen::MatrixXd w0_before = a.w0;
  a.w1.setZero();
  const Eigen::MatrixXd base = a.w0 * x;
  CHECK(lora_forward(a, x) == base);
  CHECK(a.w0 == w0_before);

  // alpha = r and W1 W2 acting as identity on the first r coordinates.
  LoraAdapter e;
  e.w0 = random_matrix(4, 4, rng);
  e.rank = 4 - 1;
  e.alpha = 3.0;
  e.w1 = Eigen::MatrixXd::Zero(4, 3);
  e.w2 = Eigen::MatrixXd::Zero(3, 4);
  for (int i = 0; i < 3; ++i) e.w1(i, i) = e.w2(i, i) = 1.0;
  Eigen::MatrixXd xi = random_matrix(4, 2, rng);
  xi.row(3).setZero();
  CHECK(lora_forward(e, xi) == Eigen::MatrixXd(e.w0 * xi + xi));
}

TEST_CASE("linearity and scaling") {
  Rng rng(5);
  auto a = LoraAdapter::random(10, 7, 3, 12.0, rng);
  const auto x = random_matrix(7, 5, rng);
  const auto y = random_matrix(7, 5, rng);
  const Eigen::MatrixXd sum = lora_forward(a, x + y);
  const Eigen::MatrixXd parts = lora_forward(a, x) + lora_forward(a, y);
  CHECK((sum - parts).cwiseAbs().maxCoeff() < 1e-10);

  const Eigen::MatrixXd delta = lora_delta(a, x);
  a.alpha *= 2.0;
  CHECK(lora_delta(a, x) == Eigen::MatrixXd(2.0 * delta));
}

TEST_CASE("shape checks") {
  Rng rng(1);
  auto a = LoraAdapter::random(4, 5, 2, 1.0, rng);
  CHECK_THROWS_AS(lora_forward(a, random_matrix(4, 1, rng)), ShapeError);
  a.rank = 4;
  CHECK_THROWS_AS(a.validate(), ShapeError);
  CHECK_THROWS(LoraAdapter::random(4, 4, 4, 1.0, rng));
  CHECK_THROWS(LoraAdapter::random(4, 4, 0, 1.0, rng));
}

TEST_CASE("parameter counts") {
  const auto small = trainable_param_count(8, 8, 2);
  CHECK(small.lora == 32);
  CHECK(small.full == 64);
  CHECK(small.ratio == 2.0);
  const auto big = trainable_param_count(4096, 4096, 64);
  CHECK(big.lora == 524288);
  CHECK(big.full == 16777216);
  CHECK(big.ratio == 32.0);
  CHECK_THROWS_AS(trainable_param_count(8, 8, 8), ValidationError);
  CHECK_THROWS_AS(trainable_param_count(8, 8, 0), ValidationError);
}

TEST_CASE("token nll closed forms") {
  NllSample onehot{{{0, 1, 0}, {1, 0, 0}}, {1, 0}};
  CHECK(token_nll(std::vector{onehot}).loss == 0.0);

  NllSample uniform{std::vector<std::vector<double>>(3, std::vector<double>(4, 0.25)), {0, 1, 3}};
  CHECK(std::abs(token_nll(std::vector{uniform}).loss - 3.0 * std::log(4.0)) < 1e-15);
  CHECK(std::abs(3.0 * std::log(4.0) - 4.1589) < 1e-4);

  // Mean over samples: (0 + 3 ln 4) / 2.
  CHECK(std::abs(token_nll(std::vector{onehot, uniform}).loss - 1.5 * std::log(4.0)) < 1e-15);

  NllSample zero{{{1, 0}}, {1}};
  const auto inf = token_nll(std::vector{zero});
  CHECK(inf.infinite);
  CHECK(std::isinf(inf.loss));

  NllSample unnormalised{{{0.5, 0.6}}, {0}};
  CHECK_THROWS_AS(token_nll(std::vector{unnormalised}), ValidationError);
  NllSample outside{{{0.5, 0.5}}, {2}};
  CHECK_THROWS_AS(token_nll(std::vector{outside}), ValidationError);
  NllSample ragged{{{0.5, 0.5}}, {0, 1}};
  CHECK_THROWS_AS(token_nll(std::vector{ragged}), ValidationError);
}

TEST_CASE("softmax gradient matches central differences") {
  Rng rng(8);
  const Eigen::MatrixXd logits = 3.0 * random_matrix(4, 6, rng);
  const std::vector<std::size_t> targets = {0, 5, 2, 2};
  const auto grad = softmax_nll_gradient(logits, targets);
  const double h = 1e-5;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      Eigen::MatrixXd up = logits, down = logits;
      up(i, j) += h;
      down(i, j) -= h;
      const double fd = (softmax_nll(up, targets) - softmax_nll(down, targets)) / (2 * h);
      CHECK(std::abs(fd - grad(i, j)) <= 1e-6 * std::max(1.0, std::abs(grad(i, j))));
    }
  }
  const auto p = softmax_rows(logits);
  for (Eigen::Index i = 0; i < p.rows(); ++i) CHECK(std::abs(p.row(i).sum() - 1.0) < 1e-15);
}

TEST_CASE("preset table") {
  const auto& presets = load_presets();
  REQUIRE(presets.size() == 8);
  const std::vector<std::tuple<std::string, double, int>> expected = {
      {"LoRA", 64, 64}, {"OLoRA", 16, 64}, {"EVA", 1, 16},    {"PiSSA", 64, 64},
      {"LoftQ", 16, 64}, {"LoRA+", 8, 32}, {"rsLoRA", 8, 32}, {"QLoRA", 8, 32}};
  for (std::size_t i = 0; i < expected.size(); ++i) {
    CHECK(presets[i].method == std::get<0>(expected[i]));
    CHECK(presets[i].scaling_factor == std::get<1>(expected[i]));
    CHECK(presets[i].rank == std::get<2>(expected[i]));
  }
  CHECK(find_preset("olora").rank == 64);
  CHECK(find_preset("EVA").scaling_factor == 1.0);
  CHECK_THROWS_AS(find_preset("DoRA"), ConfigError);
  CHECK_THROWS_AS(presets_from_json(json{{"version", 2}, {"presets", json::array()}}), ConfigError);
}

TEST_CASE("self test passes") {
  for (const auto& check : run_lora_self_test()) {
    INFO(check.name, ": ", check.detail);
    CHECK(check.passed);
  }
}
