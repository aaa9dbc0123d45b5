#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "crl/data.hpp"
#include "crl/model.hpp"
#include "crl/training.hpp"

namespace crl {

double accuracy(const std::vector<int>& preds, const std::vector<int>& truths);
/// Mean over classes of per-class F1; a class with no predictions and no
/// support scores 0.
double macro_f1(const std::vector<int>& preds, const std::vector<int>& truths, int num_classes);

struct ConceptBreakdown {
  std::string name;
  double acc = 0.0;
  double f1 = 0.0;  // F1 of the "present" value
};

struct ClassBreakdown {
  std::string name;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct MetricsReport {
  double concept_acc = 0.0;       // mean of per-concept accuracy
  double concept_macro_f1 = 0.0;  // mean of per-concept F1
  double diag_acc = 0.0;
  double diag_macro_f1 = 0.0;     // mean of per-class F1
  std::vector<ConceptBreakdown> per_concept;
  std::vector<ClassBreakdown> per_class;
  std::size_t samples = 0;
};

/// Metrics from predicted binary concepts and predicted labels.
MetricsReport score(const std::vector<BitVector>& predicted_concepts, const std::vector<int>& predicted_labels,
                    const ConceptDataset& dataset);

/// Concept metrics from q(c_hat) against the concept labels, diagnosis
/// metrics from the argmax of the discrete logits.
MetricsReport evaluate(const CrlModel& model, const ConceptDataset& dataset);

/// Discrete-path predictions, in dataset order.
std::vector<int> predict_labels(const CrlModel& model, const ConceptDataset& dataset);

nlohmann::json to_json(const MetricsReport& report);
std::string render_metrics(const MetricsReport& report);

enum class BaselineVariant { soft_logistic, hard_logistic };

std::string to_string(BaselineVariant variant);

/// Multinomial logistic regression on concepts. The soft variant reads
/// concept probabilities, the hard variant their 0/1 binarization.
struct BaselineModel {
  BaselineVariant variant = BaselineVariant::soft_logistic;
  Mat weights;  // concepts x classes
  Vec bias;     // classes
  double concept_threshold = 0.5;

  Vec input(const Record& record) const;
  Vec logits(const Record& record) const;
  int predict(const Record& record) const;
};

struct BaselineOptions {
  int epochs = 300;  // full-batch steps
  double lr = 0.05;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const BaselineOptions& options);
BaselineOptions baseline_options_from_json(const nlohmann::json& j);

/// Cross-entropy fit with the AdamW step used for the CRL itself.
BaselineModel train_baseline(BaselineVariant variant, const ConceptDataset& dataset,
                             const BaselineOptions& options = {});

/// Concepts are the binarized inputs; diagnosis from the logistic argmax.
MetricsReport evaluate(const BaselineModel& model, const ConceptDataset& dataset);

struct LeakageConfig {
  LeakagePairSpec pair;
  TrainConfig crl;
  BaselineOptions baseline;
  double test_fraction = 0.3;
  std::uint64_t split_seed = 0;

  LeakageConfig();
  void validate() const;
};

nlohmann::json to_json(const LeakageConfig& config);
LeakageConfig leakage_config_from_json(const nlohmann::json& j);

struct DomainComparison {
  std::string model;
  MetricsReport in_domain;
  MetricsReport ood;
  // Percentage points; drop = in - ood on the reported numbers.
  double in_acc = 0.0;
  double ood_acc = 0.0;
  double acc_drop = 0.0;
  double in_f1 = 0.0;
  double ood_f1 = 0.0;
  double f1_drop = 0.0;
};

struct LeakageReport {
  std::vector<DomainComparison> models;  // CRL, soft-logistic, hard-logistic
  std::size_t train_samples = 0;
  std::size_t test_samples = 0;
  bool binary_inputs_identical = false;   // q(c) equal on every paired test record
  bool crl_predictions_identical = false;  // discrete logits bitwise equal on every pair
};

/// Trains the CRL and both baselines on the in-domain training split, then
/// scores all three on the paired in-domain and OOD test records.
LeakageReport leakage_benchmark(const LeakageConfig& config, const EpochCallback& on_epoch = {});

nlohmann::json to_json(const LeakageReport& report);
std::string render_leakage_table(const LeakageReport& report);

}  // namespace crl
