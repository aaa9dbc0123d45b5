#include "doctest.h"

#include <cmath>

#include "crl/model.hpp"
#include "crl/training.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace crl;

namespace {

// Continuous logits computed with the plain-product oracle, layer by layer.
std::vector<double> oracle_logits(const CrlModel& m, const std::vector<double>& concepts) {
  std::vector<double> n = concepts;
  for (const auto& layer : m.logic) {
    std::vector<double> next;
    const auto row = [](const RowMatrix<double>& w, Eigen::Index i) {
      return std::vector<double>(w.row(i).data(), w.row(i).data() + w.cols());
    };
    for (Eigen::Index i = 0; i < layer.conj.rows(); ++i) next.push_back(oracle::conj_soft(n, row(layer.conj, i)));
    for (Eigen::Index i = 0; i < layer.disj.rows(); ++i) next.push_back(oracle::disj_soft(n, row(layer.disj, i)));
    n = std::move(next);
  }
  std::vector<double> logits;
  for (Eigen::Index c = 0; c < m.head.rows(); ++c) {
    double z = m.bias(c);
    for (std::size_t j = 0; j < n.size(); ++j) z += m.head(c, static_cast<Eigen::Index>(j)) * n[j];
    logits.push_back(z);
  }
  return logits;
}

double oracle_task_loss(const std::vector<double>& logits, int label) {
  double top = logits[0];
  for (double z : logits) top = std::max(top, z);
  double s = 0.0;
  for (double z : logits) s += std::exp(z - top);
  return std::log(s) + top - logits[static_cast<std::size_t>(label)];
}

}  // namespace

TEST_CASE("concept predictor") {
  const auto pass = ConceptPredictor::passthrough(2);
  Vec x(2);
  x << 0.2, 0.9;
  CHECK(predict_concepts(pass, x) == x);
  CHECK_THROWS_AS(predict_concepts(pass, Vec::Constant(3, 0.5)), Error);

  auto mlp = ConceptPredictor::mlp(3, 4, 2);
  mlp.w1.setZero();
  mlp.b1.setZero();
  mlp.w2.setZero();
  mlp.b2.setZero();
  CHECK(predict_concepts(mlp, Vec::Constant(3, 7.0)) == Vec::Constant(2, 0.5));

  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    mlp.w1 = Mat::NullaryExpr(4, 3, [&] { return uniform(rng, -3, 3); });
    mlp.b1 = Vec::NullaryExpr(4, [&] { return uniform(rng, -1, 1); });
    mlp.w2 = Mat::NullaryExpr(2, 4, [&] { return uniform(rng, -3, 3); });
    mlp.b2 = Vec::NullaryExpr(2, [&] { return uniform(rng, -1, 1); });
    const Vec c = predict_concepts(mlp, Vec::NullaryExpr(3, [&] { return uniform(rng, -2, 2); }));
    CHECK((c.array() > 0.0).all());
    CHECK((c.array() < 1.0).all());
  }
}

TEST_CASE("concept binarization") {
  Vec c(2);
  c << 0.7, 0.3;
  const auto b = binarize_concepts(c, 0.5);
  CHECK(b(0) == 1);
  CHECK(b(1) == 0);
  CHECK(binarize_concepts(Vec::Constant(1, 0.5))(0) == 1);
  CHECK(binarize_concepts(Vec::Zero(4)).isZero());
}

TEST_CASE("layer split") {
  const auto shapes = split_layer_sizes({256, 5, 1});
  CHECK(shapes[0] == LayerShape{128, 128});
  CHECK(shapes[1] == LayerShape{3, 2});
  CHECK(shapes[2] == LayerShape{1, 0});
}

TEST_CASE("hand-wired one-rule model") {
  const auto m = fixture::one_rule();
  for (std::uint32_t v = 0; v < 4; ++v) {
    const auto out = forward_discrete(m, fixture::bits_vec(v, 2));
    if (v == 3) {
      CHECK(out.rules(0) == 1);
      CHECK(out.logits == m.head.col(0) + m.bias);
    } else {
      CHECK(out.rules(0) == 0);
      CHECK(out.logits == m.bias);
    }
  }

  auto zero = m;
  zero.head.setZero();
  zero.bias.setZero();
  for (std::uint32_t v = 0; v < 4; ++v) CHECK(forward_discrete(zero, fixture::bits_vec(v, 2)).logits.isZero(0.0));
}

TEST_CASE("continuous and discrete logits agree for binary weights") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto m = fixture::random_binary(seed, 5, 3, {6, 4});
    for (std::uint32_t v = 0; v < 32; ++v) {
      const auto trace = forward_continuous(m, fixture::bits_vec(v, 5));
      CHECK((trace.logits_continuous - trace.logits_discrete).cwiseAbs().maxCoeff() < 1e-12);
      CHECK(trace.rules_continuous == trace.rules_discrete.cast<double>());
    }
  }
}

TEST_CASE("continuous trace invariants") {
  const auto m = fixture::random_continuous(4, 4, 2, {6, 5});
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec x = Vec::NullaryExpr(4, [&] { return uniform01(rng); });
    const auto trace = forward_continuous(m, x);
    CHECK(((trace.rules_discrete.array() == 0) || (trace.rules_discrete.array() == 1)).all());
    CHECK((trace.logits_continuous - (m.head * trace.rules_continuous + m.bias)).isZero(0.0));
    CHECK(trace.logits_discrete == apply_head_binary(m.head, m.bias, trace.rules_discrete));

    std::vector<double> concepts(trace.binary_concepts.data(), trace.binary_concepts.data() + 4);
    const auto expected = oracle_logits(m, concepts);
    for (int c = 0; c < 2; ++c) CHECK(trace.logits_continuous(c) == doctest::Approx(expected[c]).epsilon(1e-12));
  }

  auto zeros = m;
  for (auto& layer : zeros.logic) {
    layer.conj.setZero();
    layer.disj.setZero();
  }
  const auto a = forward_continuous(zeros, Vec::Zero(4));
  const auto b = forward_continuous(zeros, Vec::Ones(4));
  CHECK(a.logits_continuous == b.logits_continuous);
  CHECK(a.rules_continuous.head(3).isOnes(0.0));
  CHECK(a.rules_continuous.tail(2).isZero(0.0));
}

TEST_CASE("head additivity") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto m = fixture::random_binary(100 + seed, 6, 4, {8, 7});
    for (std::uint32_t v = 0; v < 64; ++v) {
      const auto out = forward_discrete(m, fixture::bits_vec(v, 6));
      Vec sum = m.bias;
      for (Eigen::Index i = 0; i < out.rules.size(); ++i)
        if (out.rules(i)) sum += m.head.col(i);
      CHECK(out.logits == sum);
    }
  }
}

TEST_CASE("cross-entropy logit gradient") {
  Vec logits(2);
  logits << 2.0, 0.0;
  const Vec g = cross_entropy_logit_gradient(logits, 0);
  const double e2 = std::exp(2.0);
  CHECK(g(0) == doctest::Approx(e2 / (e2 + 1.0) - 1.0).epsilon(1e-14));
  CHECK(g(1) == doctest::Approx(1.0 / (e2 + 1.0)).epsilon(1e-14));
  CHECK(g(0) == doctest::Approx(-0.1192).epsilon(1e-3));

  Vec sure(2);
  sure << 800.0, -800.0;
  CHECK(cross_entropy_logit_gradient(sure, 0).cwiseAbs().maxCoeff() < 1e-300);
  CHECK_THROWS_AS(cross_entropy_logit_gradient(logits, 2), Error);
}

TEST_CASE("straight-through estimator is the identity") {
  Vec g(2);
  g << 0.3, -0.1;
  CHECK(ste_backward(g) == g);
  CHECK(ste_backward(Vec::Zero(3)) == Vec::Zero(3));
}

TEST_CASE("confident correct prediction gives vanishing gradients") {
  auto m = fixture::one_rule();
  m.head(0, 0) = -500.0;
  m.head(1, 0) = 500.0;
  const auto trace = forward_continuous(m, fixture::bits_vec(3, 2));
  const auto g = backward_grafted(m, trace, 1);
  CHECK(g.head.cwiseAbs().maxCoeff() < 1e-200);
  CHECK(g.bias.cwiseAbs().maxCoeff() < 1e-200);
  CHECK(g.logic[0].d_conj.cwiseAbs().maxCoeff() < 1e-200);
}

TEST_CASE("grafted gradient uses discrete logits") {
  const auto m = fixture::random_continuous(8, 3, 2, {4, 4}, 0.2, 0.8);
  const auto trace = forward_continuous(m, fixture::bits_vec(5, 3));
  CHECK_FALSE(trace.logits_discrete.isApprox(trace.logits_continuous));
  const auto g = backward_grafted(m, trace, 1);
  const Vec expected = cross_entropy_logit_gradient(trace.logits_discrete, 1);
  CHECK(g.bias == expected);
  CHECK(g.head.isApprox(expected * trace.rules_continuous.transpose(), 1e-14));
}

TEST_CASE("continuous surrogate gradient matches finite differences") {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto m = fixture::random_continuous(200 + seed, 4, 3, {5, 4});
    const std::uint32_t v = static_cast<std::uint32_t>(seed % 16);
    const int label = static_cast<int>(seed % 3);
    const auto trace = forward_continuous(m, fixture::bits_vec(v, 4));
    const auto g = backward_grafted(m, trace, label, LogitSource::continuous);
    std::vector<double> concepts;
    for (int i = 0; i < 4; ++i) concepts.push_back(static_cast<double>((v >> i) & 1u));

    std::vector<double> analytic, numeric;
    for (std::size_t l = 0; l < m.logic.size(); ++l) {
      for (int which = 0; which < 2; ++which) {
        const auto& w = which == 0 ? m.logic[l].conj : m.logic[l].disj;
        const auto& dw = which == 0 ? g.logic[l].d_conj : g.logic[l].d_disj;
        for (Eigen::Index i = 0; i < w.size(); ++i) {
          const auto f = [&](const std::vector<double>& value) {
            auto p = m;
            auto& target = which == 0 ? p.logic[l].conj : p.logic[l].disj;
            target.data()[i] = value[0];
            return oracle_task_loss(oracle_logits(p, concepts), label);
          };
          analytic.push_back(dw.data()[i]);
          numeric.push_back(oracle::central_difference(f, {w.data()[i]}, 0));
        }
      }
    }
    worst = std::max(worst, oracle::rel_err(analytic, numeric));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("task gradient reaches an MLP predictor") {
  auto m = fixture::random_continuous(31, 3, 2, {4, 4}, 0.2, 0.8);
  m.predictor = ConceptPredictor::mlp(5, 6, 3);
  Rng rng(31);
  m.predictor.w1 = Mat::NullaryExpr(6, 5, [&] { return uniform(rng, -1, 1); });
  m.predictor.b1 = Vec::Zero(6);
  m.predictor.w2 = Mat::NullaryExpr(3, 6, [&] { return uniform(rng, -1, 1); });
  m.predictor.b2 = Vec::Zero(3);
  m.validate();
  const auto trace = forward_continuous(m, Vec::NullaryExpr(5, [&] { return uniform(rng, -1, 1); }));
  const auto g = backward_grafted(m, trace, 0);
  CHECK(g.d_concepts.norm() > 0.0);
  CHECK(g.predictor.w1.norm() > 0.0);
  CHECK(g.predictor.w2.norm() > 0.0);
}

TEST_CASE("default shapes close and round-trip") {
  TrainConfig cfg;
  const auto m = make_model(8, 2, split_layer_sizes(cfg.layer_sizes), ConceptPredictor::passthrough(8), cfg.init, 1);
  CHECK(m.num_rules() == 256);
  CHECK(m.logic[0].conj.rows() == 128);
  CHECK(m.logic[1].input_size() == 256);
  CHECK(m.logic[0].in_unit_box());
  const auto trace = forward_continuous(m, fixture::bits_vec(0x5a, 8));
  const auto g = backward_grafted(m, trace, 1);
  CHECK(g.all_finite());
  CHECK(g.head.rows() == 2);
  CHECK(g.head.cols() == 256);
}

TEST_CASE("shape validation") {
  auto m = fixture::two_term_dnf();
  m.head = Mat::Zero(2, 3);
  CHECK_THROWS_AS(m.validate(), Error);
  m = fixture::two_term_dnf();
  m.logic[1].conj = RowMatrix<double>::Zero(1, 4);
  CHECK_THROWS_AS(m.validate(), Error);
  CHECK_THROWS_AS(make_model(0, 2, {{1, 1}}, ConceptPredictor::passthrough(0), {}, 0), Error);
}

TEST_CASE("initialisation is seeded") {
  const InitOptions init;
  const auto a = make_model(8, 2, split_layer_sizes({16, 16}), ConceptPredictor::passthrough(8), init, 7);
  const auto b = make_model(8, 2, split_layer_sizes({16, 16}), ConceptPredictor::passthrough(8), init, 7);
  const auto c = make_model(8, 2, split_layer_sizes({16, 16}), ConceptPredictor::passthrough(8), init, 8);
  CHECK(a.logic[0].conj == b.logic[0].conj);
  CHECK(a.head == b.head);
  CHECK(a.logic[0].conj != c.logic[0].conj);
  for (const auto& layer : a.logic) {
    CHECK((((layer.conj.array() == 0.0) || (layer.conj.array() >= init.logic_low && layer.conj.array() <= init.logic_high))).all());
  }
}

TEST_CASE("fingerprint tracks the discrete model only") {
  const auto m = fixture::random_continuous(5, 4, 2, {4, 4}, 0.1, 0.9);
  auto same = m;
  // Move a weight without crossing the threshold.
  double& w = same.logic[0].conj(0, 0);
  w = w >= 0.5 ? std::min(1.0, w + 0.01) : std::max(0.0, w - 0.01);
  CHECK(fingerprint(same) == fingerprint(m));

  auto flipped = m;
  flipped.logic[0].conj(0, 0) = m.logic[0].conj(0, 0) >= 0.5 ? 0.0 : 1.0;
  CHECK(fingerprint(flipped) != fingerprint(m));

  auto head = m;
  head.head(1, 2) += 1e-9;
  CHECK(fingerprint(head) != fingerprint(m));
}
