#include "doctest.h"

#include <cmath>
#include <limits>

#include "crl/checkpoint.hpp"
#include "crl/training.hpp"
#include "fixtures.hpp"

using namespace crl;

namespace {

std::vector<const Record*> pointers(const ConceptDataset& ds) {
  std::vector<const Record*> out;
  for (const auto& r : ds.records) out.push_back(&r);
  return out;
}

int binarized_on(const CrlModel& m) {
  int on = 0;
  for (const auto& layer : binarize_stack(m).layers) {
    on += layer.conj.cast<int>().sum() + layer.disj.cast<int>().sum();
  }
  return on;
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.layer_sizes = {8, 8};
  cfg.lr = 1e-2;
  cfg.batch_size = 16;
  cfg.epochs = 100;
  cfg.validation_fraction = 0.0;
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST_CASE("task loss") {
  Vec z(2);
  z << 2.0, 0.0;
  CHECK(task_loss(z, 0) == doctest::Approx(std::log1p(std::exp(-2.0))).epsilon(1e-14));
  CHECK(task_loss(z, 0) == doctest::Approx(0.126928).epsilon(1e-5));
  CHECK(task_loss(Vec::Constant(5, 1.3), 2) == doctest::Approx(std::log(5.0)).epsilon(1e-14));
  Vec sure(2);
  sure << 1000.0, 0.0;
  CHECK(task_loss(sure, 0) < 1e-300);
  CHECK(std::isfinite(task_loss(sure, 1)));
}

TEST_CASE("concept loss") {
  BitVector one(1);
  one << 1;
  CHECK(concept_loss(Vec::Constant(1, 0.8), one) == doctest::Approx(-std::log(0.8)).epsilon(1e-14));
  CHECK(concept_loss(Vec::Constant(1, 0.8), one) == doctest::Approx(0.223144).epsilon(1e-5));
  BitVector mixed(3);
  mixed << 1, 0, 1;
  CHECK(concept_loss(Vec::Constant(3, 0.5), mixed) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(concept_loss(mixed.cast<double>(), mixed) < 1e-6);
  CHECK(std::isfinite(concept_loss(Vec::Zero(1), one)));

  // Gradient against a central difference of the loss itself.
  Vec p(3);
  p << 0.3, 0.6, 0.9;
  const Vec g = concept_loss_gradient(p, mixed);
  for (int i = 0; i < 3; ++i) {
    Vec up = p, down = p;
    up(i) += 1e-6;
    down(i) -= 1e-6;
    const double fd = (concept_loss(up, mixed) - concept_loss(down, mixed)) / 2e-6;
    CHECK(g(i) == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("regulariser") {
  std::vector<LogicLayerParams<double>> logic(1);
  logic[0].conj = RowMatrix<double>::Constant(2, 1, 0.1);
  logic[0].disj = RowMatrix<double>::Constant(2, 1, 0.1);
  CHECK(reg_term(logic, 5e-6) == doctest::Approx(2e-7).epsilon(1e-12));
  auto zero = logic;
  zero[0].conj.setZero();
  zero[0].disj.setZero();
  CHECK(reg_term(zero, 5e-6) == 0.0);

  auto m = fixture::random_continuous(2, 3, 2, {4});
  auto grads = ModelGradients::zeros_like(m);
  add_reg_gradient(m.logic, 0.25, grads);
  CHECK(grads.logic[0].d_conj.isApprox(0.5 * m.logic[0].conj, 1e-15));
  CHECK(grads.logic[0].d_disj.isApprox(0.5 * m.logic[0].disj, 1e-15));
  CHECK(grads.head.isZero(0.0));
}

TEST_CASE("batch objective") {
  const auto m = fixture::random_continuous(12, 2, 2, {4, 4}, 0.2, 0.8);
  const auto stack = binarize_stack(m);
  const auto ds = fixture::and_dataset(2, 1);
  const auto batch = pointers(ds);

  ModelGradients grads;
  const auto plain = total_loss(m, stack, batch, 0.0, 0.0, grads);
  double expected = 0.0;
  for (const auto* r : batch) expected += task_loss(forward_discrete(m, stack, *r->concept_probs).logits, r->label);
  CHECK(plain.total == doctest::Approx(expected / 4.0).epsilon(1e-14));
  CHECK(plain.concept_term == 0.0);
  CHECK(plain.reg == 0.0);

  const std::vector<const Record*> repeated(5, batch[3]);
  const std::vector<const Record*> single(1, batch[3]);
  ModelGradients g5, g1;
  const auto l5 = total_loss(m, stack, repeated, 1.0, 5e-6, g5);
  const auto l1 = total_loss(m, stack, single, 1.0, 5e-6, g1);
  CHECK(l5.total == doctest::Approx(l1.total).epsilon(1e-14));
  CHECK(g5.head.isApprox(g1.head, 1e-12));
  CHECK(g5.logic[1].d_disj.isApprox(g1.logic[1].d_disj, 1e-12));

  ModelGradients g;
  const auto full = total_loss(m, stack, batch, 1.0, 1e-3, g);
  CHECK(full.reg == doctest::Approx(reg_term(m.logic, 1e-3)).epsilon(1e-14));
  CHECK(full.total == doctest::Approx(full.task + full.concept_term + full.reg).epsilon(1e-14));
}

TEST_CASE("AdamW single step") {
  double value = 1.0;
  const double grad = 0.5;
  std::vector<ParamBlock> blocks{{&value, &grad, 1, true, false, "p"}};
  OptimizerState state;
  AdamWOptions opt;
  opt.weight_decay = 0.01;
  adamw_step(blocks, state, 0.1, opt);
  // decay: 1 - 0.1*0.01 = 0.999; m_hat = 0.5, v_hat = 0.25.
  CHECK(value == doctest::Approx(0.999 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-15));
  CHECK(state.step == 1);

  // Second step with a different gradient, moments carried.
  const double grad2 = -0.25;
  blocks[0].grad = &grad2;
  const double before = value;
  adamw_step(blocks, state, 0.1, opt);
  const double m = 0.9 * 0.05 + 0.1 * grad2;
  const double v = 0.999 * 0.00025 + 0.001 * grad2 * grad2;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  CHECK(value == doctest::Approx(before * (1 - 0.001) - 0.1 * mh / (std::sqrt(vh) + 1e-8)).epsilon(1e-14));
}

TEST_CASE("AdamW edge cases") {
  double a = 0.3, b = 1.0;
  const double zero = 0.0, push_up = -2.0, nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<ParamBlock> blocks{{&a, &zero, 1, true, false, "a"}, {&b, &push_up, 1, false, true, "b"}};
  OptimizerState state;
  AdamWOptions opt;
  opt.weight_decay = 0.0;
  adamw_step(blocks, state, 0.01, opt);
  CHECK(a == 0.3);
  CHECK(b == 1.0);

  blocks[0].grad = &nan;
  CHECK_THROWS_AS(adamw_step(blocks, state, 0.01, opt), Error);
  CHECK(a == 0.3);
  CHECK(state.step == 1);
}

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(0, 1000, 5e-5) == 5e-5);
  CHECK(cosine_lr(1000, 1000, 5e-5) == doctest::Approx(0.0).epsilon(1e-20));
  CHECK(std::abs(cosine_lr(1000, 1000, 5e-5)) < 1e-20);
  CHECK(cosine_lr(500, 1000, 5e-5) == doctest::Approx(2.5e-5).epsilon(1e-14));
  double last = 1.0;
  for (int s = 0; s <= 100; ++s) {
    const double lr = cosine_lr(s, 100, 1.0);
    CHECK(lr <= last);
    last = lr;
  }
}

TEST_CASE("optimizer step respects groups, decay scope and the unit box") {
  auto m = fixture::random_continuous(6, 3, 2, {4, 4});
  m.logic[0].conj(0, 0) = 1.0;
  auto grads = ModelGradients::zeros_like(m);
  grads.logic[0].d_conj(0, 0) = -1.0;

  auto decayed = m;
  OptimizerState s1;
  optimizer_step(decayed, grads, s1, 0.1, 0.5);
  CHECK(decayed.logic[0].conj(0, 0) == 1.0);
  // Zero gradient elsewhere: logic weights stay, head shrinks by (1 - lr*wd).
  CHECK(decayed.logic[1].disj == m.logic[1].disj);
  CHECK(decayed.head.isApprox(m.head * 0.95, 1e-15));

  auto frozen = m;
  OptimizerState s2;
  grads.head.setConstant(1.0);
  optimizer_step(frozen, grads, s2, 0.1, 0.5, {true, true, false});
  CHECK(frozen.head == m.head);
  CHECK(frozen.bias == m.bias);

  auto wild = m;
  grads.logic[1].d_conj.setConstant(100.0);
  OptimizerState s3;
  for (int i = 0; i < 20; ++i) optimizer_step(wild, grads, s3, 0.5, 0.0);
  for (const auto& layer : wild.logic) CHECK(layer.in_unit_box());
}

TEST_CASE("loss decreases on the one-rule problem") {
  const auto ds = fixture::and_dataset(2, 4);
  auto m = make_model(2, 2, split_layer_sizes({4, 4}), ConceptPredictor::passthrough(2), {}, 5);
  const auto batch = pointers(ds);
  OptimizerState state;
  ModelGradients grads;
  const double first = total_loss(m, binarize_stack(m), batch, 1.0, 5e-6, grads).total;
  double last = first;
  for (int step = 0; step < 50; ++step) {
    last = total_loss(m, binarize_stack(m), batch, 1.0, 5e-6, grads).total;
    optimizer_step(m, grads, state, 1e-2, 0.01);
  }
  last = total_loss(m, binarize_stack(m), batch, 1.0, 5e-6, grads).total;
  CHECK(last < first);
}

TEST_CASE("head-only training decreases the surrogate loss monotonically") {
  const auto ds = fixture::and_dataset(3, 1);
  auto m = fixture::random_continuous(44, 3, 2, {4, 4});
  const auto batch = pointers(ds);
  OptimizerState state;
  ModelGradients grads;
  double previous = std::numeric_limits<double>::infinity();
  for (int step = 0; step < 10; ++step) {
    const double loss = total_loss(m, binarize_stack(m), batch, 0.0, 0.0, grads, LogitSource::continuous).total;
    CHECK(loss <= previous);
    previous = loss;
    optimizer_step(m, grads, state, 1e-3, 0.0, {false, false, true});
  }
}

TEST_CASE("one-rule dataset trains to full accuracy") {
  const auto ds = fixture::and_dataset(2, 16);
  const auto cfg = small_config();
  const auto result = train(cfg, ds);
  CHECK(result.history.size() == 100u);
  CHECK(diagnosis_accuracy(result.final_model, ds) >= 0.99);
  for (const auto& layer : result.final_model.logic) CHECK(layer.in_unit_box());
}

TEST_CASE("training is reproducible") {
  const auto ds = fixture::and_dataset(3, 4);
  auto cfg = small_config();
  cfg.epochs = 5;
  cfg.validation_fraction = 0.2;
  const auto a = train(cfg, ds);
  const auto b = train(cfg, ds);
  CHECK(checkpoint_to_json({a.final_model, cfg, cfg.epochs}).dump() ==
        checkpoint_to_json({b.final_model, cfg, cfg.epochs}).dump());
  CHECK(a.best_epoch == b.best_epoch);
  cfg.seed += 1;
  const auto c = train(cfg, ds);
  CHECK(checkpoint_to_json({a.final_model, cfg, cfg.epochs}).dump() !=
        checkpoint_to_json({c.final_model, cfg, cfg.epochs}).dump());
}

TEST_CASE("larger lambda gives sparser rules") {
  DnfSpec spec;
  spec.terms = {{0, 1}, {2, 3}, {4}};
  spec.samples = 400;
  spec.seed = 2;
  const auto ds = gen_dnf(spec);
  auto cfg = small_config();
  cfg.layer_sizes = {32, 32};
  cfg.epochs = 20;
  cfg.lr = 5e-3;
  cfg.lambda = 5e-6;
  const int base = binarized_on(train(cfg, ds).final_model);
  cfg.lambda = 5e-4;
  const int strong = binarized_on(train(cfg, ds).final_model);
  CHECK(strong < base);
}

TEST_CASE("non-finite loss aborts with the last good model") {
  const auto ds = fixture::and_dataset(2, 2);
  auto cfg = small_config();
  cfg.epochs = 2;
  auto m = make_model(2, 2, split_layer_sizes({4}), ConceptPredictor::passthrough(2), {}, 1);
  m.head(0, 0) = std::numeric_limits<double>::infinity();
  try {
    train_model(m, cfg, ds, nullptr);
    FAIL("expected TrainingAborted");
  } catch (const TrainingAborted& e) {
    CHECK(e.category() == ErrorCategory::numeric);
    CHECK(e.last_good().logic[0].conj == m.logic[0].conj);
  }
}

TEST_CASE("train config JSON") {
  TrainConfig cfg;
  cfg.seed = 99;
  cfg.layer_sizes = {10, 6, 4};
  cfg.init.candidates_per_node = 0.0;
  const auto back = train_config_from_json(to_json(cfg));
  CHECK(to_json(back) == to_json(cfg));
  CHECK(back.layer_sizes == cfg.layer_sizes);

  auto j = to_json(cfg);
  j["epoch"] = 3;
  CHECK_THROWS_AS(train_config_from_json(j), Error);
  CHECK(train_config_from_json(nlohmann::json::object()).epochs == 300);
  CHECK_THROWS_AS(train_config_from_json({{"epochs", -1}}), Error);
  CHECK_THROWS_AS(train_config_from_json({{"lr", "fast"}}), Error);
  CHECK_THROWS_AS(train_config_from_json({{"layer_sizes", nlohmann::json::array()}}), Error);
}

TEST_CASE("empty training set is rejected") {
  ConceptDataset empty;
  empty.meta.num_concepts = 2;
  empty.meta.num_classes = 2;
  CHECK_THROWS_AS(train(small_config(), empty), Error);
}
