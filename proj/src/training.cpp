#include "crl/training.hpp"

#include <algorithm>
#include <cmath>

#include "crl/json_util.hpp"
#include "crl/parallel.hpp"
#include "crl/random.hpp"

namespace crl {

namespace {

// Samples per reduction chunk. Chunk sums are combined in chunk order, so the
// batch gradient is the same for any thread count.
constexpr std::size_t kChunk = 8;

void zero(ModelGradients& g) {
  g.predictor.w1.setZero();
  g.predictor.b1.setZero();
  g.predictor.w2.setZero();
  g.predictor.b2.setZero();
  for (auto& layer : g.logic) {
    layer.d_conj.setZero();
    layer.d_disj.setZero();
    layer.d_input.setZero();
  }
  g.head.setZero();
  g.bias.setZero();
  g.d_concepts.setZero();
}

bool same_shape(const ModelGradients& g, const CrlModel& model) {
  if (g.logic.size() != model.logic.size() || g.head.rows() != model.head.rows() ||
      g.head.cols() != model.head.cols() || g.predictor.w1.size() != model.predictor.w1.size() ||
      g.predictor.w2.size() != model.predictor.w2.size()) {
    return false;
  }
  for (std::size_t l = 0; l < g.logic.size(); ++l) {
    if (g.logic[l].d_conj.rows() != model.logic[l].conj.rows() ||
        g.logic[l].d_conj.cols() != model.logic[l].conj.cols() ||
        g.logic[l].d_disj.rows() != model.logic[l].disj.rows()) {
      return false;
    }
  }
  return true;
}

int argmax(const Vec& v) {
  Eigen::Index best = 0;
  v.maxCoeff(&best);
  return static_cast<int>(best);
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCategory::config, "train config: " + what); };
  if (epochs <= 0) fail("epochs must be positive");
  if (batch_size <= 0) fail("batch_size must be positive");
  if (!(lr > 0.0)) fail("lr must be positive");
  if (weight_decay < 0.0) fail("weight_decay must be non-negative");
  if (lambda < 0.0) fail("lambda must be non-negative");
  if (concept_loss_weight < 0.0) fail("concept_loss_weight must be non-negative");
  if (!(concept_threshold > 0.0 && concept_threshold < 1.0)) fail("concept_threshold must lie in (0,1)");
  if (!(weight_threshold > 0.0 && weight_threshold < 1.0)) fail("weight_threshold must lie in (0,1)");
  if (layer_sizes.empty()) fail("layer_sizes must be nonempty");
  for (int m : layer_sizes) {
    if (m <= 0) fail("layer sizes must be positive");
  }
  if (validation_fraction < 0.0 || validation_fraction >= 1.0) fail("validation_fraction must lie in [0,1)");
  if (predictor == PredictorKind::mlp && hidden_dim <= 0) fail("hidden_dim must be positive");
  if (!(init.logic_low >= 0.0 && init.logic_low <= init.logic_high && init.logic_high <= 1.0)) {
    fail("init logic range must satisfy 0 <= low <= high <= 1");
  }
  if (init.head_scale < 0.0) fail("init head_scale must be non-negative");
  if (!(init.candidates_per_node >= 0.0)) fail("init candidates_per_node must be non-negative");
}

nlohmann::json to_json(const TrainConfig& c) {
  return nlohmann::json{
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"lr", c.lr},
      {"weight_decay", c.weight_decay},
      {"lambda", c.lambda},
      {"concept_loss_weight", c.concept_loss_weight},
      {"seed", c.seed},
      {"concept_threshold", c.concept_threshold},
      {"weight_threshold", c.weight_threshold},
      {"layer_sizes", c.layer_sizes},
      {"validation_fraction", c.validation_fraction},
      {"predictor", to_string(c.predictor)},
      {"hidden_dim", c.hidden_dim},
      {"init",
       {{"logic_low", c.init.logic_low},
        {"logic_high", c.init.logic_high},
        {"candidates_per_node", c.init.candidates_per_node},
        {"head_scale", c.init.head_scale}}},
  };
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  const std::string ctx = "train config";
  reject_unknown_keys(j,
                      {"epochs", "batch_size", "lr", "weight_decay", "lambda", "concept_loss_weight", "seed",
                       "concept_threshold", "weight_threshold", "layer_sizes", "validation_fraction",
                       "predictor", "hidden_dim", "init"},
                      ctx);
  TrainConfig c;
  read_optional(j, "epochs", c.epochs, ctx);
  read_optional(j, "batch_size", c.batch_size, ctx);
  read_optional(j, "lr", c.lr, ctx);
  read_optional(j, "weight_decay", c.weight_decay, ctx);
  read_optional(j, "lambda", c.lambda, ctx);
  read_optional(j, "concept_loss_weight", c.concept_loss_weight, ctx);
  read_optional(j, "seed", c.seed, ctx);
  read_optional(j, "concept_threshold", c.concept_threshold, ctx);
  read_optional(j, "weight_threshold", c.weight_threshold, ctx);
  read_optional(j, "layer_sizes", c.layer_sizes, ctx);
  read_optional(j, "validation_fraction", c.validation_fraction, ctx);
  if (j.contains("predictor")) {
    c.predictor = predictor_kind_from_string(read_required<std::string>(j, "predictor", ctx));
  }
  read_optional(j, "hidden_dim", c.hidden_dim, ctx);
  if (j.contains("init")) {
    const auto& init = j.at("init");
    const std::string ictx = ctx + ".init";
    reject_unknown_keys(init, {"logic_low", "logic_high", "candidates_per_node", "head_scale"}, ictx);
    read_optional(init, "logic_low", c.init.logic_low, ictx);
    read_optional(init, "logic_high", c.init.logic_high, ictx);
    read_optional(init, "candidates_per_node", c.init.candidates_per_node, ictx);
    read_optional(init, "head_scale", c.init.head_scale, ictx);
  }
  c.validate();
  return c;
}

double task_loss(const Vec& logits, int label) {
  if (label < 0 || label >= logits.size()) {
    throw dimension_error("task_loss: label " + std::to_string(label) + " out of range");
  }
  const double top = logits.maxCoeff();
  const double lse = top + std::log((logits.array() - top).exp().sum());
  return lse - logits(label);
}

double concept_loss(const Vec& probs, const BitVector& labels) {
  if (probs.size() != labels.size() || probs.size() == 0) {
    throw dimension_error("concept_loss: probability and label lengths differ");
  }
  double sum = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs(i), kConceptProbEpsilon, 1.0 - kConceptProbEpsilon);
    sum -= labels(i) ? std::log(p) : std::log1p(-p);
  }
  return sum / static_cast<double>(probs.size());
}

Vec concept_loss_gradient(const Vec& probs, const BitVector& labels) {
  if (probs.size() != labels.size() || probs.size() == 0) {
    throw dimension_error("concept_loss_gradient: probability and label lengths differ");
  }
  const double k = static_cast<double>(probs.size());
  Vec g(probs.size());
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    const double p = probs(i);
    if (p < kConceptProbEpsilon || p > 1.0 - kConceptProbEpsilon) {
      g(i) = 0.0;  // flat region of the clamp
    } else {
      g(i) = (labels(i) ? -1.0 / p : 1.0 / (1.0 - p)) / k;
    }
  }
  return g;
}

double reg_term(const std::vector<LogicLayerParams<double>>& logic, double lambda) {
  double sum = 0.0;
  for (const auto& layer : logic) sum += layer.conj.squaredNorm() + layer.disj.squaredNorm();
  return lambda * sum;
}

void add_reg_gradient(const std::vector<LogicLayerParams<double>>& logic, double lambda,
                      ModelGradients& grads) {
  if (lambda == 0.0) return;
  for (std::size_t l = 0; l < logic.size(); ++l) {
    grads.logic[l].d_conj += 2.0 * lambda * logic[l].conj;
    grads.logic[l].d_disj += 2.0 * lambda * logic[l].disj;
  }
}

LossBreakdown total_loss(const CrlModel& model, const BinaryStack& stack,
                         const std::vector<const Record*>& batch, double concept_loss_weight,
                         double lambda, ModelGradients& grads, LogitSource source) {
  if (batch.empty()) throw std::invalid_argument("total_loss: empty batch");
  if (!same_shape(grads, model)) grads = ModelGradients::zeros_like(model);

  const std::size_t chunks = (batch.size() + kChunk - 1) / kChunk;
  std::vector<ModelGradients> partial(chunks);
  std::vector<LossBreakdown> partial_loss(chunks);
  const double scale = 1.0 / static_cast<double>(batch.size());

  parallel_for(chunks, [&](std::size_t c) {
    auto& g = partial[c];
    g = ModelGradients::zeros_like(model);
    auto& loss = partial_loss[c];
    const std::size_t end = std::min(batch.size(), (c + 1) * kChunk);
    for (std::size_t s = c * kChunk; s < end; ++s) {
      const Record& rec = *batch[s];
      const ForwardTrace trace = forward_continuous(model, stack, model_input(model, rec));
      const Vec& logits = source == LogitSource::discrete ? trace.logits_discrete : trace.logits_continuous;
      loss.task += task_loss(logits, rec.label);
      if (argmax(trace.logits_discrete) == rec.label) ++loss.correct;

      Vec d_logits = cross_entropy_logit_gradient(logits, rec.label) * scale;
      Vec d_concepts;
      if (concept_loss_weight != 0.0) {
        loss.concept_term += concept_loss_weight * concept_loss(trace.concepts, rec.concept_labels);
        d_concepts = concept_loss_gradient(trace.concepts, rec.concept_labels) * (concept_loss_weight * scale);
      }
      backpropagate(model, trace, d_logits, d_concepts, g);
    }
  });

  zero(grads);
  LossBreakdown out;
  for (std::size_t c = 0; c < chunks; ++c) {
    grads += partial[c];
    out.task += partial_loss[c].task;
    out.concept_term += partial_loss[c].concept_term;
    out.correct += partial_loss[c].correct;
  }
  out.task *= scale;
  out.concept_term *= scale;
  out.reg = reg_term(model.logic, lambda);
  add_reg_gradient(model.logic, lambda, grads);
  out.total = out.task + out.concept_term + out.reg;
  return out;
}

void optimizer_step(CrlModel& model, const ModelGradients& grads, OptimizerState& state, double lr,
                    double weight_decay, TrainableGroups groups) {
  if (!same_shape(grads, model)) throw dimension_error("optimizer_step: gradients do not match model");

  // Every block is always listed so the optimizer state keeps a fixed layout;
  // frozen groups get a zero learning rate through a separate call below.
  std::vector<ParamBlock> active;
  auto add = [&](double* value, const double* grad, Eigen::Index size, bool decay, bool clamp,
                 const std::string& name) { active.push_back({value, grad, size, decay, clamp, name}); };

  auto& p = model.predictor;
  if (p.kind == PredictorKind::mlp) {
    add(p.w1.data(), grads.predictor.w1.data(), p.w1.size(), true, false, "predictor.w1");
    add(p.b1.data(), grads.predictor.b1.data(), p.b1.size(), true, false, "predictor.b1");
    add(p.w2.data(), grads.predictor.w2.data(), p.w2.size(), true, false, "predictor.w2");
    add(p.b2.data(), grads.predictor.b2.data(), p.b2.size(), true, false, "predictor.b2");
  }
  for (std::size_t l = 0; l < model.logic.size(); ++l) {
    auto& layer = model.logic[l];
    add(layer.conj.data(), grads.logic[l].d_conj.data(), layer.conj.size(), false, true,
        "logic" + std::to_string(l) + ".conj");
    add(layer.disj.data(), grads.logic[l].d_disj.data(), layer.disj.size(), false, true,
        "logic" + std::to_string(l) + ".disj");
  }
  add(model.head.data(), grads.head.data(), model.head.size(), true, false, "head.weight");
  add(model.bias.data(), grads.bias.data(), model.bias.size(), true, false, "head.bias");

  if (groups.predictor && groups.logic && groups.head) {
    adamw_step(active, state, lr, {0.9, 0.999, 1e-8, weight_decay});
    return;
  }
  // Frozen blocks: snapshot, step, restore. Moments of frozen blocks still
  // advance, matching an optimizer that sees zero learning rate for them.
  std::vector<Eigen::ArrayXd> saved;
  std::vector<bool> frozen;
  for (const auto& b : active) {
    const bool is_logic = b.name.rfind("logic", 0) == 0;
    const bool is_head = b.name.rfind("head", 0) == 0;
    const bool keep = is_logic ? !groups.logic : is_head ? !groups.head : !groups.predictor;
    frozen.push_back(keep);
    saved.push_back(Eigen::Map<const Eigen::ArrayXd>(b.value, b.size));
  }
  adamw_step(active, state, lr, {0.9, 0.999, 1e-8, weight_decay});
  for (std::size_t k = 0; k < active.size(); ++k) {
    if (frozen[k]) Eigen::Map<Eigen::ArrayXd>(active[k].value, active[k].size) = saved[k];
  }
}

nlohmann::json to_json(const EpochRecord& r) {
  nlohmann::json j{{"epoch", r.epoch},         {"lr", r.lr},
                   {"task_loss", r.task_loss}, {"concept_loss", r.concept_loss},
                   {"reg", r.reg},             {"total_loss", r.total_loss},
                   {"train_acc", r.train_acc}};
  j["val_acc"] = r.val_acc ? nlohmann::json(*r.val_acc) : nlohmann::json(nullptr);
  return j;
}

double diagnosis_accuracy(const CrlModel& model, const ConceptDataset& dataset) {
  if (dataset.empty()) throw std::invalid_argument("diagnosis_accuracy: empty dataset");
  const BinaryStack stack = binarize_stack(model);
  std::size_t correct = 0;
  for (const auto& rec : dataset.records) {
    if (argmax(forward_discrete(model, stack, model_input(model, rec)).logits) == rec.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

TrainResult train(const TrainConfig& config, const ConceptDataset& train_set,
                  const ConceptDataset* validation, const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.empty()) throw Error(ErrorCategory::data, "train: empty training set");
  train_set.validate();

  const auto& meta = train_set.meta;
  ConceptPredictor predictor = ConceptPredictor::passthrough(meta.num_concepts);
  if (config.predictor == PredictorKind::mlp) {
    if (meta.feature_dim <= 0) {
      throw Error(ErrorCategory::data, "train: MLP predictor needs feature columns in the dataset");
    }
    predictor = ConceptPredictor::mlp(meta.feature_dim, config.hidden_dim, meta.num_concepts);
  }
  CrlModel model = make_model(meta.num_concepts, meta.num_classes, split_layer_sizes(config.layer_sizes),
                              predictor, config.init, config.seed);
  model.concept_threshold = config.concept_threshold;
  model.weight_threshold = config.weight_threshold;
  model.concept_names = meta.concept_names;
  if (static_cast<int>(meta.class_names.size()) == meta.num_classes) model.class_names = meta.class_names;
  return train_model(std::move(model), config, train_set, validation, on_epoch);
}

TrainResult train_model(CrlModel model, const TrainConfig& config, const ConceptDataset& train_set,
                        const ConceptDataset* validation, const EpochCallback& on_epoch) {
  config.validate();
  model.validate();
  if (train_set.empty()) throw Error(ErrorCategory::data, "train: empty training set");

  ConceptDataset fit_set;
  ConceptDataset held_out;
  const ConceptDataset* fit = &train_set;
  const ConceptDataset* val = validation;
  if (!val && config.validation_fraction > 0.0) {
    auto parts = split(train_set, {1.0 - config.validation_fraction, config.validation_fraction},
                       config.seed);
    fit_set = std::move(parts[0]);
    held_out = std::move(parts[1]);
    fit = &fit_set;
    if (!held_out.empty()) val = &held_out;
  }
  if (fit->empty()) throw Error(ErrorCategory::data, "train: no records left after the validation split");

  const std::size_t n = fit->size();
  const std::size_t batch = static_cast<std::size_t>(config.batch_size);
  const std::size_t batches_per_epoch = (n + batch - 1) / batch;
  const std::int64_t total_steps = static_cast<std::int64_t>(batches_per_epoch) * config.epochs;

  Rng rng(config.seed ^ 0x9E3779B97F4A7C15ULL);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  TrainResult result;
  result.best_model = model;
  double best_val = -1.0;
  OptimizerState state;
  ModelGradients grads = ModelGradients::zeros_like(model);
  std::int64_t step = 0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle(order, rng);
    EpochRecord record;
    record.epoch = epoch;
    int correct = 0;
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      std::vector<const Record*> members;
      for (std::size_t i = b * batch; i < std::min(n, (b + 1) * batch); ++i) {
        members.push_back(&fit->records[order[i]]);
      }
      const BinaryStack stack = binarize_stack(model);
      const auto loss = total_loss(model, stack, members, config.concept_loss_weight, config.lambda, grads);
      if (!std::isfinite(loss.total)) {
        throw TrainingAborted("train: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                  std::to_string(step + 1),
                              model);
      }
      const double lr = cosine_lr(step, total_steps, config.lr);
      CrlModel before = model;
      try {
        optimizer_step(model, grads, state, lr, config.weight_decay);
      } catch (const Error& e) {
        if (e.category() != ErrorCategory::numeric) throw;
        throw TrainingAborted(std::string("train: ") + e.what(), std::move(before));
      }
      ++step;
      const double w = static_cast<double>(members.size()) / static_cast<double>(n);
      record.task_loss += w * loss.task;
      record.concept_loss += w * loss.concept_term;
      record.reg += w * loss.reg;
      record.total_loss += w * loss.total;
      record.lr = lr;
      correct += loss.correct;
    }
    record.train_acc = static_cast<double>(correct) / static_cast<double>(n);
    if (val) {
      record.val_acc = diagnosis_accuracy(model, *val);
      if (*record.val_acc >= best_val) {
        best_val = *record.val_acc;
        result.best_model = model;
        result.best_epoch = epoch;
      }
    }
    result.history.push_back(record);
    if (on_epoch) on_epoch(record);
  }
  if (!val) {
    result.best_model = model;
    result.best_epoch = config.epochs;
  }
  result.final_model = std::move(model);
  return result;
}

}  // namespace crl
