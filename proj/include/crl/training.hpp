#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "json.hpp"

#include "crl/data.hpp"
#include "crl/model.hpp"
#include "crl/optim.hpp"

namespace crl {

struct TrainConfig {
  int epochs = 300;
  int batch_size = 64;
  double lr = 5e-5;
  double weight_decay = 0.01;
  double lambda = 5e-6;
  double concept_loss_weight = 1.0;
  std::uint64_t seed = 0;
  double concept_threshold = 0.5;
  double weight_threshold = 0.5;
  std::vector<int> layer_sizes{256, 256};
  double validation_fraction = 0.1;
  PredictorKind predictor = PredictorKind::passthrough;
  int hidden_dim = 64;
  InitOptions init;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);
/// Strict: unknown keys are rejected, missing keys keep their defaults.
TrainConfig train_config_from_json(const nlohmann::json& j);

/// -log softmax(logits)[label].
double task_loss(const Vec& logits, int label);

constexpr double kConceptProbEpsilon = 1e-7;

/// Mean binary cross-entropy over concepts, probabilities clamped to [eps, 1-eps].
double concept_loss(const Vec& probs, const BitVector& labels);
/// Gradient of concept_loss with respect to the (unclamped) probabilities.
Vec concept_loss_gradient(const Vec& probs, const BitVector& labels);

/// lambda * sum of squared logic weights.
double reg_term(const std::vector<LogicLayerParams<double>>& logic, double lambda);
void add_reg_gradient(const std::vector<LogicLayerParams<double>>& logic, double lambda,
                      ModelGradients& grads);

struct LossBreakdown {
  double task = 0.0;
  double concept_term = 0.0;  // already multiplied by the concept loss weight
  double reg = 0.0;
  double total = 0.0;
  int correct = 0;  // discrete-path argmax hits
};

/// Batch objective: mean task loss + alpha * mean concept loss + reg term.
/// Gradients (grafted by default) are written into `grads`, which is
/// resized and zeroed first. Samples are reduced in a fixed order.
LossBreakdown total_loss(const CrlModel& model, const BinaryStack& stack,
                         const std::vector<const Record*>& batch, double concept_loss_weight,
                         double lambda, ModelGradients& grads,
                         LogitSource source = LogitSource::discrete);

struct TrainableGroups {
  bool predictor = true;
  bool logic = true;
  bool head = true;
};

/// AdamW over all model parameters. Weight decay covers the predictor and
/// head only; logic weights are clamped to [0,1] afterwards.
void optimizer_step(CrlModel& model, const ModelGradients& grads, OptimizerState& state, double lr,
                    double weight_decay, TrainableGroups groups = {});

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;  // rate used by the epoch's final step
  double task_loss = 0.0;
  double concept_loss = 0.0;
  double reg = 0.0;
  double total_loss = 0.0;
  double train_acc = 0.0;
  std::optional<double> val_acc;
};

nlohmann::json to_json(const EpochRecord& record);

struct TrainResult {
  CrlModel final_model;
  CrlModel best_model;
  int best_epoch = 0;
  std::vector<EpochRecord> history;
};

/// Thrown when the loss or a gradient stops being finite; carries the model
/// as it was before the failing step.
class TrainingAborted : public Error {
 public:
  TrainingAborted(const std::string& what, CrlModel last_good)
      : Error(ErrorCategory::numeric, what), last_good_(std::move(last_good)) {}
  const CrlModel& last_good() const { return last_good_; }

 private:
  CrlModel last_good_;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Builds a model for `train_set` and runs the epoch loop. Without a
/// validation set, `config.validation_fraction` of the training data is held
/// out (stratified). The best model is chosen by validation accuracy, later
/// epochs winning ties.
TrainResult train(const TrainConfig& config, const ConceptDataset& train_set,
                  const ConceptDataset* validation = nullptr, const EpochCallback& on_epoch = {});

/// Same loop on an existing model.
TrainResult train_model(CrlModel model, const TrainConfig& config, const ConceptDataset& train_set,
                        const ConceptDataset* validation, const EpochCallback& on_epoch = {});

/// Discrete-path accuracy over a dataset.
double diagnosis_accuracy(const CrlModel& model, const ConceptDataset& dataset);

}  // namespace crl
