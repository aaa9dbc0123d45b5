#include "crl/eval.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "crl/json_util.hpp"
#include "crl/optim.hpp"
#include "crl/parallel.hpp"
#include "crl/random.hpp"

namespace crl {

namespace {

void check_lengths(const std::vector<int>& preds, const std::vector<int>& truths) {
  if (preds.empty()) throw std::invalid_argument("metrics need at least one sample");
  if (preds.size() != truths.size()) throw dimension_error("prediction and truth counts differ");
}

struct Counts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

double f1_of(const Counts& c) { return ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn); }

std::vector<Counts> class_counts(const std::vector<int>& preds, const std::vector<int>& truths, int num_classes) {
  std::vector<Counts> counts(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int p = preds[i];
    const int t = truths[i];
    if (p < 0 || p >= num_classes || t < 0 || t >= num_classes) {
      throw dimension_error("class index outside [0, " + std::to_string(num_classes) + ")");
    }
    if (p == t) {
      ++counts[static_cast<std::size_t>(p)].tp;
    } else {
      ++counts[static_cast<std::size_t>(p)].fp;
      ++counts[static_cast<std::size_t>(t)].fn;
    }
  }
  return counts;
}

int argmax(const Vec& v) {
  Eigen::Index best = 0;
  v.maxCoeff(&best);
  return static_cast<int>(best);
}

std::string name_or(const std::vector<std::string>& names, std::size_t i, const std::string& prefix) {
  return i < names.size() ? names[i] : prefix + std::to_string(i);
}

std::vector<int> labels_of(const ConceptDataset& dataset) {
  std::vector<int> out;
  out.reserve(dataset.size());
  for (const auto& r : dataset.records) out.push_back(r.label);
  return out;
}

Vec soft_input(const Record& record) {
  if (record.concept_probs) return *record.concept_probs;
  return record.concept_labels.cast<double>();
}

std::string points(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

double accuracy(const std::vector<int>& preds, const std::vector<int>& truths) {
  check_lengths(preds, truths);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == truths[i];
  return ratio(hits, preds.size());
}

double macro_f1(const std::vector<int>& preds, const std::vector<int>& truths, int num_classes) {
  check_lengths(preds, truths);
  if (num_classes <= 0) throw std::invalid_argument("macro_f1 needs a positive class count");
  double sum = 0.0;
  for (const auto& c : class_counts(preds, truths, num_classes)) sum += f1_of(c);
  return sum / num_classes;
}

MetricsReport score(const std::vector<BitVector>& predicted_concepts, const std::vector<int>& predicted_labels,
                    const ConceptDataset& dataset) {
  const std::size_t n = dataset.size();
  if (n == 0) throw std::invalid_argument("cannot score an empty dataset");
  if (predicted_concepts.size() != n || predicted_labels.size() != n) {
    throw dimension_error("prediction count does not match dataset size");
  }
  const int k = dataset.meta.num_concepts;
  MetricsReport report;
  report.samples = n;

  for (int c = 0; c < k; ++c) {
    Counts counts;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (predicted_concepts[i].size() != k) throw dimension_error("predicted concept vector has wrong length");
      const bool p = predicted_concepts[i](c) != 0;
      const bool t = dataset.records[i].concept_labels(c) != 0;
      hits += p == t;
      counts.tp += p && t;
      counts.fp += p && !t;
      counts.fn += !p && t;
    }
    ConceptBreakdown b{name_or(dataset.meta.concept_names, static_cast<std::size_t>(c), "c"), ratio(hits, n),
                       f1_of(counts)};
    report.concept_acc += b.acc;
    report.concept_macro_f1 += b.f1;
    report.per_concept.push_back(std::move(b));
  }
  if (k > 0) {
    report.concept_acc /= k;
    report.concept_macro_f1 /= k;
  }

  const auto truths = labels_of(dataset);
  const int classes = dataset.meta.num_classes;
  report.diag_acc = accuracy(predicted_labels, truths);
  const auto counts = class_counts(predicted_labels, truths, classes);
  for (int c = 0; c < classes; ++c) {
    const Counts& cc = counts[static_cast<std::size_t>(c)];
    ClassBreakdown b{name_or(dataset.meta.class_names, static_cast<std::size_t>(c), "class"),
                     ratio(cc.tp, cc.tp + cc.fp), ratio(cc.tp, cc.tp + cc.fn), f1_of(cc), cc.tp + cc.fn};
    report.diag_macro_f1 += b.f1;
    report.per_class.push_back(std::move(b));
  }
  report.diag_macro_f1 /= classes;
  return report;
}

std::vector<int> predict_labels(const CrlModel& model, const ConceptDataset& dataset) {
  const BinaryStack stack = binarize_stack(model);
  std::vector<int> preds(dataset.size());
  parallel_for(dataset.size(), [&](std::size_t i) {
    preds[i] = argmax(forward_discrete(model, stack, model_input(model, dataset.records[i])).logits);
  });
  return preds;
}

MetricsReport evaluate(const CrlModel& model, const ConceptDataset& dataset) {
  if (dataset.meta.num_concepts != model.num_concepts() || dataset.meta.num_classes > model.num_classes()) {
    throw dimension_error("dataset does not match the model's concept or class count");
  }
  const BinaryStack stack = binarize_stack(model);
  std::vector<BitVector> concepts(dataset.size());
  std::vector<int> preds(dataset.size());
  parallel_for(dataset.size(), [&](std::size_t i) {
    const auto out = forward_discrete(model, stack, model_input(model, dataset.records[i]));
    concepts[i] = out.binary_concepts;
    preds[i] = argmax(out.logits);
  });
  ConceptDataset scored_meta = dataset;
  scored_meta.meta.num_classes = model.num_classes();
  if (scored_meta.meta.class_names.size() != static_cast<std::size_t>(model.num_classes())) {
    scored_meta.meta.class_names = model.class_names;
  }
  return score(concepts, preds, scored_meta);
}

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json concepts = nlohmann::json::array();
  for (const auto& c : r.per_concept) concepts.push_back({{"name", c.name}, {"acc", c.acc}, {"f1", c.f1}});
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : r.per_class) {
    classes.push_back({{"name", c.name},
                       {"precision", c.precision},
                       {"recall", c.recall},
                       {"f1", c.f1},
                       {"support", c.support}});
  }
  return {{"schema", "metrics_v1"},
          {"samples", r.samples},
          {"concept_acc", r.concept_acc},
          {"concept_macro_f1", r.concept_macro_f1},
          {"diag_acc", r.diag_acc},
          {"diag_macro_f1", r.diag_macro_f1},
          {"per_concept", concepts},
          {"per_class", classes}};
}

std::string render_metrics(const MetricsReport& r) {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "samples %zu\nconcept ACC %.4f  F1 %.4f\ndiagnosis ACC %.4f  F1 %.4f\n", r.samples,
                r.concept_acc, r.concept_macro_f1, r.diag_acc, r.diag_macro_f1);
  out << buf << "\nconcept        acc      f1\n";
  for (const auto& c : r.per_concept) {
    std::snprintf(buf, sizeof buf, "%-12s %6.4f  %6.4f\n", c.name.c_str(), c.acc, c.f1);
    out << buf;
  }
  out << "\nclass        precision  recall      f1  support\n";
  for (const auto& c : r.per_class) {
    std::snprintf(buf, sizeof buf, "%-12s %9.4f  %6.4f  %6.4f  %7zu\n", c.name.c_str(), c.precision, c.recall, c.f1,
                  c.support);
    out << buf;
  }
  return out.str();
}

std::string to_string(BaselineVariant variant) {
  return variant == BaselineVariant::soft_logistic ? "soft-logistic" : "hard-logistic";
}

Vec BaselineModel::input(const Record& record) const {
  Vec x = soft_input(record);
  if (variant == BaselineVariant::hard_logistic) x = binarize_concepts(x, concept_threshold).cast<double>();
  return x;
}

Vec BaselineModel::logits(const Record& record) const {
  const Vec x = input(record);
  if (x.size() != weights.rows()) throw dimension_error("baseline input width does not match its weights");
  return weights.transpose() * x + bias;
}

int BaselineModel::predict(const Record& record) const { return argmax(logits(record)); }

nlohmann::json to_json(const BaselineOptions& o) {
  return {{"epochs", o.epochs}, {"lr", o.lr}, {"weight_decay", o.weight_decay}, {"seed", o.seed}};
}

BaselineOptions baseline_options_from_json(const nlohmann::json& j) {
  const std::string ctx = "baseline";
  reject_unknown_keys(j, {"epochs", "lr", "weight_decay", "seed"}, ctx);
  BaselineOptions o;
  read_optional(j, "epochs", o.epochs, ctx);
  read_optional(j, "lr", o.lr, ctx);
  read_optional(j, "weight_decay", o.weight_decay, ctx);
  read_optional(j, "seed", o.seed, ctx);
  if (o.epochs <= 0 || !(o.lr > 0.0) || o.weight_decay < 0.0) {
    throw Error(ErrorCategory::config, "baseline: epochs and lr must be positive, weight_decay non-negative");
  }
  return o;
}

BaselineModel train_baseline(BaselineVariant variant, const ConceptDataset& dataset,
                             const BaselineOptions& options) {
  if (dataset.empty()) throw std::invalid_argument("train_baseline: empty dataset");
  const int k = dataset.meta.num_concepts;
  const int classes = dataset.meta.num_classes;
  BaselineModel model;
  model.variant = variant;
  Rng rng(options.seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(k));
  model.weights = Mat::NullaryExpr(k, classes, [&] { return uniform(rng, -scale, scale); });
  model.bias = Vec::Zero(classes);

  std::vector<Vec> inputs;
  inputs.reserve(dataset.size());
  for (const auto& r : dataset.records) inputs.push_back(model.input(r));

  Mat grad_w(k, classes);
  Vec grad_b(classes);
  OptimizerState state;
  const AdamWOptions adam{0.9, 0.999, 1e-8, options.weight_decay};
  const double inv_n = 1.0 / static_cast<double>(dataset.size());
  for (int step = 0; step < options.epochs; ++step) {
    grad_w.setZero();
    grad_b.setZero();
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const Vec logits = model.weights.transpose() * inputs[i] + model.bias;
      const Vec d = cross_entropy_logit_gradient(logits, dataset.records[i].label) * inv_n;
      grad_w.noalias() += inputs[i] * d.transpose();
      grad_b += d;
    }
    std::vector<ParamBlock> blocks{
        {model.weights.data(), grad_w.data(), model.weights.size(), true, false, "baseline.weights"},
        {model.bias.data(), grad_b.data(), model.bias.size(), false, false, "baseline.bias"}};
    adamw_step(blocks, state, options.lr, adam);
  }
  return model;
}

MetricsReport evaluate(const BaselineModel& model, const ConceptDataset& dataset) {
  std::vector<BitVector> concepts;
  std::vector<int> preds;
  for (const auto& r : dataset.records) {
    concepts.push_back(binarize_concepts(soft_input(r), model.concept_threshold));
    preds.push_back(model.predict(r));
  }
  return score(concepts, preds, dataset);
}

LeakageConfig::LeakageConfig() {
  pair.base.num_concepts = 8;
  pair.base.terms = {{0, 1}, {2, 3}, {4}};
  pair.base.samples = 2000;
  crl.epochs = 40;
}

void LeakageConfig::validate() const {
  pair.validate();
  crl.validate();
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw Error(ErrorCategory::config, "leakage: test_fraction must lie in (0,1)");
  }
}

nlohmann::json to_json(const LeakageConfig& c) {
  return {{"pair", to_json(c.pair)},
          {"crl", to_json(c.crl)},
          {"baseline", to_json(c.baseline)},
          {"test_fraction", c.test_fraction},
          {"split_seed", c.split_seed}};
}

LeakageConfig leakage_config_from_json(const nlohmann::json& j) {
  const std::string ctx = "leakage";
  reject_unknown_keys(j, {"pair", "crl", "baseline", "test_fraction", "split_seed"}, ctx);
  LeakageConfig c;
  if (j.contains("pair")) c.pair = leakage_spec_from_json(j.at("pair"));
  if (j.contains("crl")) c.crl = train_config_from_json(j.at("crl"));
  if (j.contains("baseline")) c.baseline = baseline_options_from_json(j.at("baseline"));
  read_optional(j, "test_fraction", c.test_fraction, ctx);
  read_optional(j, "split_seed", c.split_seed, ctx);
  c.validate();
  return c;
}

LeakageReport leakage_benchmark(const LeakageConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  const LeakagePair pair = gen_leakage_pair(config.pair);
  const auto parts = split(pair.in_domain, {1.0 - config.test_fraction, config.test_fraction}, config.split_seed);
  const ConceptDataset& train_set = parts[0];
  const ConceptDataset& test_in = parts[1];

  std::unordered_map<std::string, std::size_t> ood_index;
  for (std::size_t i = 0; i < pair.ood.size(); ++i) ood_index.emplace(pair.ood.records[i].id, i);
  std::vector<std::size_t> paired;
  for (const auto& r : test_in.records) paired.push_back(ood_index.at(r.id));
  const ConceptDataset test_ood = pair.ood.subset(paired);

  LeakageReport report;
  report.train_samples = train_set.size();
  report.test_samples = test_in.size();

  const TrainResult crl = train(config.crl, train_set, nullptr, on_epoch);
  const CrlModel& model = crl.final_model;
  const auto soft = train_baseline(BaselineVariant::soft_logistic, train_set, config.baseline);
  const auto hard = train_baseline(BaselineVariant::hard_logistic, train_set, config.baseline);

  const auto compare = [](std::string name, MetricsReport in, MetricsReport out) {
    DomainComparison c;
    c.model = std::move(name);
    c.in_acc = 100.0 * in.diag_acc;
    c.ood_acc = 100.0 * out.diag_acc;
    c.acc_drop = c.in_acc - c.ood_acc;
    c.in_f1 = 100.0 * in.diag_macro_f1;
    c.ood_f1 = 100.0 * out.diag_macro_f1;
    c.f1_drop = c.in_f1 - c.ood_f1;
    c.in_domain = std::move(in);
    c.ood = std::move(out);
    return c;
  };
  report.models.push_back(compare("CRL", evaluate(model, test_in), evaluate(model, test_ood)));
  report.models.push_back(compare(to_string(soft.variant), evaluate(soft, test_in), evaluate(soft, test_ood)));
  report.models.push_back(compare(to_string(hard.variant), evaluate(hard, test_in), evaluate(hard, test_ood)));

  const BinaryStack stack = binarize_stack(model);
  report.binary_inputs_identical = true;
  report.crl_predictions_identical = true;
  for (std::size_t i = 0; i < test_in.size(); ++i) {
    const auto a = forward_discrete(model, stack, model_input(model, test_in.records[i]));
    const auto b = forward_discrete(model, stack, model_input(model, test_ood.records[i]));
    if (a.binary_concepts != b.binary_concepts) report.binary_inputs_identical = false;
    if (a.logits.size() != b.logits.size() ||
        std::memcmp(a.logits.data(), b.logits.data(), sizeof(double) * static_cast<std::size_t>(a.logits.size())) != 0) {
      report.crl_predictions_identical = false;
    }
  }
  return report;
}

nlohmann::json to_json(const LeakageReport& r) {
  nlohmann::json models = nlohmann::json::array();
  for (const auto& m : r.models) {
    models.push_back({{"model", m.model},
                      {"in_domain", to_json(m.in_domain)},
                      {"ood", to_json(m.ood)},
                      {"in_acc", m.in_acc},
                      {"ood_acc", m.ood_acc},
                      {"acc_drop", m.acc_drop},
                      {"in_f1", m.in_f1},
                      {"ood_f1", m.ood_f1},
                      {"f1_drop", m.f1_drop}});
  }
  return {{"schema", "leakage_v1"},
          {"train_samples", r.train_samples},
          {"test_samples", r.test_samples},
          {"binary_inputs_identical", r.binary_inputs_identical},
          {"crl_predictions_identical", r.crl_predictions_identical},
          {"models", models}};
}

std::string render_leakage_table(const LeakageReport& r) {
  std::ostringstream out;
  char buf[200];
  out << "train " << r.train_samples << ", test " << r.test_samples << " paired records (values in %)\n\n";
  const char* row = "%-14s %8s %8s %8s | %8s %8s %8s | %10s %10s\n";
  std::snprintf(buf, sizeof buf, row, "model", "in ACC", "OOD ACC", "drop", "in F1", "OOD F1", "drop", "OOD c.ACC",
                "OOD c.F1");
  out << buf;
  for (const auto& m : r.models) {
    std::snprintf(buf, sizeof buf, row, m.model.c_str(), points(m.in_acc).c_str(), points(m.ood_acc).c_str(),
                  points(m.acc_drop).c_str(), points(m.in_f1).c_str(), points(m.ood_f1).c_str(),
                  points(m.f1_drop).c_str(), points(100.0 * m.ood.concept_acc).c_str(),
                  points(100.0 * m.ood.concept_macro_f1).c_str());
    out << buf;
  }
  out << "\nbinary concepts identical across domains: " << (r.binary_inputs_identical ? "yes" : "no") << "\n";
  out << "CRL predictions identical across domains: " << (r.crl_predictions_identical ? "yes" : "no") << "\n";
  return out.str();
}

}  // namespace crl
