#include "doctest.h"

#include <cmath>
#include <limits>

#include "crl/logic.hpp"
#include "crl/random.hpp"
#include "oracles.hpp"

using namespace crl;

namespace {

Vec vec(std::initializer_list<double> values) {
  Vec v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double x : values) v(i++) = x;
  return v;
}

BitVector bitvec(std::initializer_list<int> values) {
  BitVector v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (int x : values) v(i++) = static_cast<std::uint8_t>(x);
  return v;
}

LogicLayerParams<double> random_layer(Rng& rng, int n, int mc, int md, double lo, double hi) {
  LogicLayerParams<double> p;
  p.conj = RowMatrix<double>::NullaryExpr(mc, n, [&] { return uniform(rng, lo, hi); });
  p.disj = RowMatrix<double>::NullaryExpr(md, n, [&] { return uniform(rng, lo, hi); });
  return p;
}

}  // namespace

TEST_CASE("factor functions") {
  CHECK(f_c(0.5, 1.0) == 0.5);
  CHECK(f_c(0.3, 0.0) == 1.0);
  CHECK(f_c(1.0, 0.7) == 1.0);
  CHECK(f_d(0.5, 1.0) == 0.5);
  CHECK(f_d(0.9, 0.0) == 1.0);
  CHECK(f_d(0.0, 1.0) == 1.0);
}

TEST_CASE("projection of a log-sum") {
  CHECK(project_logsum(0.0) == 1.0);
  CHECK(project_logsum(std::log(0.5)) == doctest::Approx(0.590616).epsilon(1e-6));
  CHECK(project_logsum(std::log(0.5)) == doctest::Approx(oracle::projection(0.5)).epsilon(1e-15));
  CHECK(project_logsum(-std::numeric_limits<double>::infinity()) == 0.0);
  CHECK_THROWS_AS(project_logsum(1e-3), std::domain_error);

  double previous = 0.0;
  for (double s = -50.0; s <= 0.0; s += 0.25) {
    const double y = project_logsum(s);
    CHECK(y >= previous);
    CHECK(y <= 1.0);
    previous = y;
  }
}

TEST_CASE("single-row continuous nodes") {
  CHECK(conj_continuous(vec({0.5}), vec({1.0})) == doctest::Approx(0.590616).epsilon(1e-6));
  CHECK(conj_continuous(vec({0.3, 0.9}), vec({0.0, 0.0})) == 1.0);
  CHECK(disj_continuous(vec({0.5}), vec({1.0})) == doctest::Approx(0.409384).epsilon(1e-6));
  CHECK(disj_continuous(vec({0.3, 0.9}), vec({0.0, 0.0})) == 0.0);
  CHECK_THROWS_AS(conj_continuous(vec({0.5, 0.5}), vec({1.0})), Error);
  CHECK_THROWS_AS(disj_continuous(vec({0.5}), vec({1.0, 0.0})), Error);
}

TEST_CASE("single-row nodes agree with the plain-product formulas") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(uniform_index(rng, 12));
    std::vector<double> x(static_cast<std::size_t>(n)), w(static_cast<std::size_t>(n));
    Vec xv(n), wv(n);
    for (int i = 0; i < n; ++i) {
      xv(i) = x[static_cast<std::size_t>(i)] = uniform01(rng);
      wv(i) = w[static_cast<std::size_t>(i)] = uniform01(rng);
    }
    CHECK(conj_continuous(xv, wv) == doctest::Approx(oracle::conj_soft(x, w)).epsilon(1e-12));
    CHECK(disj_continuous(xv, wv) == doctest::Approx(oracle::disj_soft(x, w)).epsilon(1e-12));
  }
}

TEST_CASE("discrete layer") {
  BinaryLayerParams p;
  p.conj = BitMatrix(1, 3);
  p.conj << 1, 0, 1;
  p.disj = BitMatrix(1, 3);
  p.disj << 0, 1, 0;
  const BitVector out = layer_forward_discrete(bitvec({1, 0, 1}), p);
  CHECK(out(0) == 1);
  CHECK(out(1) == 0);

  BinaryLayerParams empty;
  empty.conj = BitMatrix::Zero(1, 2);
  empty.disj = BitMatrix::Zero(1, 2);
  const BitVector e = layer_forward_discrete(bitvec({1, 1}), empty);
  CHECK(e(0) == 1);
  CHECK(e(1) == 0);

  CHECK_THROWS_AS(layer_forward_discrete(bitvec({1, 2, 0}), p), std::invalid_argument);
  CHECK_THROWS_AS(layer_forward_discrete(bitvec({1, 0}), p), Error);
}

TEST_CASE("continuous layer examples") {
  LogicLayerParams<double> p;
  p.conj = RowMatrix<double>::Constant(1, 1, 1.0);
  p.disj = RowMatrix<double>::Constant(1, 1, 1.0);
  const auto cache = layer_forward_continuous(vec({0.5}), p);
  CHECK(cache.output(0) == doctest::Approx(0.590616).epsilon(1e-6));
  CHECK(cache.output(1) == doctest::Approx(0.409384).epsilon(1e-6));

  const auto zeros = LogicLayerParams<double>::zeros(3, 2, 4);
  const auto z = layer_forward_continuous(vec({0.1, 0.7, 0.3, 0.9}), zeros);
  for (int i = 0; i < 3; ++i) CHECK(z.output(i) == 1.0);
  for (int i = 3; i < 5; ++i) CHECK(z.output(i) == 0.0);

  CHECK_THROWS_AS(layer_forward_continuous(vec({0.1, 0.2}), zeros), Error);
}

TEST_CASE("zero factor kills the node") {
  LogicLayerParams<double> p;
  p.conj = RowMatrix<double>::Constant(1, 2, 1.0);
  p.disj = RowMatrix<double>::Constant(1, 2, 1.0);
  const auto cache = layer_forward_continuous(vec({0.0, 1.0}), p);
  CHECK(cache.output(0) == 0.0);
  CHECK(cache.output(1) == 1.0);
  CHECK(cache.conj_dead(0));
  CHECK(cache.disj_dead(0));
  const auto g = layer_backward_continuous(p, cache, vec({1.0, 1.0}));
  CHECK(g.d_conj.isZero(0.0));
  CHECK(g.d_disj.isZero(0.0));
  CHECK(g.d_input.isZero(0.0));
}

TEST_CASE("continuous layer equals discrete layer on binary points, exhaustive up to 4x4") {
  double worst = 0.0;
  for (int n = 1; n <= 4; ++n) {
    for (std::uint32_t x = 0; x < (1u << n); ++x) {
      const auto xb = oracle::bits(x, n);
      for (std::uint32_t w = 0; w < (1u << n); ++w) {
        const auto wb = oracle::bits(w, n);
        LogicLayerParams<double> p;
        p.conj.resize(1, n);
        p.disj.resize(1, n);
        Vec in(n);
        for (int i = 0; i < n; ++i) {
          p.conj(0, i) = p.disj(0, i) = wb[static_cast<std::size_t>(i)];
          in(i) = xb[static_cast<std::size_t>(i)];
        }
        const auto out = layer_forward_continuous(in, p).output;
        worst = std::max(worst, std::abs(out(0) - oracle::conj_bit(xb, wb)));
        worst = std::max(worst, std::abs(out(1) - oracle::disj_bit(xb, wb)));
      }
    }
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("output range and monotonicity") {
  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 1 + static_cast<int>(uniform_index(rng, 6));
    Vec x = Vec::NullaryExpr(n, [&] { return uniform01(rng); });
    Vec w = Vec::NullaryExpr(n, [&] { return uniform01(rng); });
    const double c = conj_continuous(x, w);
    const double d = disj_continuous(x, w);
    CHECK(c >= 0.0);
    CHECK(c <= 1.0);
    CHECK(d >= 0.0);
    CHECK(d <= 1.0);

    const auto j = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::uint64_t>(n)));
    Vec x2 = x;
    x2(j) = std::min(1.0, x(j) + 0.1);
    CHECK(conj_continuous(x2, w) >= c);
    CHECK(disj_continuous(x2, w) >= d);
    Vec w2 = w;
    w2(j) = std::min(1.0, w(j) + 0.1);
    CHECK(conj_continuous(x, w2) <= c);
    CHECK(disj_continuous(x, w2) >= d);
  }
}

TEST_CASE("layer backward matches central differences at interior points") {
  Rng rng(21);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(uniform_index(rng, 6));
    const int mc = 1 + static_cast<int>(uniform_index(rng, 3));
    const int md = 1 + static_cast<int>(uniform_index(rng, 3));
    const auto params = random_layer(rng, n, mc, md, 0.05, 0.95);
    const Vec x = Vec::NullaryExpr(n, [&] { return uniform(rng, 0.05, 0.95); });
    const Vec up = Vec::NullaryExpr(mc + md, [&] { return uniform(rng, -1.0, 1.0); });
    const auto g = layer_backward_continuous(params, layer_forward_continuous(x, params), up);

    // Flatten [conj weights, disj weights, input] and differentiate the oracle.
    std::vector<double> flat;
    for (Eigen::Index i = 0; i < params.conj.size(); ++i) flat.push_back(params.conj.data()[i]);
    for (Eigen::Index i = 0; i < params.disj.size(); ++i) flat.push_back(params.disj.data()[i]);
    for (Eigen::Index i = 0; i < n; ++i) flat.push_back(x(i));
    const auto objective = [&](const std::vector<double>& v) {
      double total = 0.0;
      std::vector<double> in(v.end() - n, v.end());
      for (int r = 0; r < mc; ++r) {
        std::vector<double> w(v.begin() + r * n, v.begin() + (r + 1) * n);
        total += up(r) * oracle::conj_soft(in, w);
      }
      for (int r = 0; r < md; ++r) {
        const auto base = v.begin() + (mc + r) * n;
        std::vector<double> w(base, base + n);
        total += up(mc + r) * oracle::disj_soft(in, w);
      }
      return total;
    };
    std::vector<double> analytic, numeric;
    for (Eigen::Index i = 0; i < g.d_conj.size(); ++i) analytic.push_back(g.d_conj.data()[i]);
    for (Eigen::Index i = 0; i < g.d_disj.size(); ++i) analytic.push_back(g.d_disj.data()[i]);
    for (Eigen::Index i = 0; i < n; ++i) analytic.push_back(g.d_input(i));
    for (std::size_t i = 0; i < flat.size(); ++i) numeric.push_back(oracle::central_difference(objective, flat, i));
    worst = std::max(worst, oracle::rel_err(analytic, numeric));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("backward edge cases") {
  Rng rng(3);
  auto params = random_layer(rng, 3, 2, 2, 0.1, 0.9);
  params.conj.row(0).setZero();
  params.disj.row(1).setZero();
  const Vec x = vec({0.2, 0.5, 0.8});
  const auto cache = layer_forward_continuous(x, params);

  Vec up = Vec::Zero(4);
  up(0) = 1.0;
  up(3) = 1.0;
  const auto g = layer_backward_continuous(params, cache, up);
  CHECK(g.d_input.isZero(0.0));

  const auto none = layer_backward_continuous(params, cache, Vec(Vec::Zero(4)));
  CHECK(none.d_conj.isZero(0.0));
  CHECK(none.d_disj.isZero(0.0));
  CHECK(none.d_input.isZero(0.0));

  auto changed = params;
  changed.conj(1, 1) += 0.01;
  CHECK_THROWS_AS(layer_backward_continuous(changed, cache, up), std::logic_error);
  CHECK_THROWS_AS(layer_backward_continuous(params, cache, Vec(Vec::Zero(3))), Error);
}

TEST_CASE("weight binarization") {
  LogicLayerParams<double> p;
  p.conj = RowMatrix<double>(1, 3);
  p.conj << 0.7, 0.5, 0.49;
  p.disj = RowMatrix<double>(1, 3);
  p.disj << 0.0, 1.0, 0.5000001;
  const auto b = binarize_weights(p, 0.5);
  CHECK(b.conj(0, 0) == 1);
  CHECK(b.conj(0, 1) == 1);
  CHECK(b.conj(0, 2) == 0);
  CHECK(b.disj(0, 0) == 0);
  CHECK(b.disj(0, 1) == 1);
  CHECK(b.disj(0, 2) == 1);
  CHECK_THROWS_AS(binarize_weights(p, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(binarize_weights(p, 1.0), std::invalid_argument);
}

TEST_CASE("float instantiation") {
  Eigen::VectorXf x(2);
  x << 0.5f, 1.0f;
  Eigen::VectorXf w(2);
  w << 1.0f, 1.0f;
  CHECK(conj_continuous(x, w) == doctest::Approx(0.590616).epsilon(1e-5));
  LogicLayerParams<float> p;
  p.conj = RowMatrix<float>::Ones(1, 2);
  p.disj = RowMatrix<float>::Ones(1, 2);
  const auto cache = layer_forward_continuous<float>(x, p);
  CHECK(cache.output(1) == 1.0f);
}
