#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crl/logic.hpp"
#include "crl/types.hpp"

namespace crl {

enum class PredictorKind { passthrough, mlp };

std::string to_string(PredictorKind kind);
PredictorKind predictor_kind_from_string(const std::string& name);

/// g: features -> concept probabilities. The MLP variant is one tanh hidden
/// layer followed by a sigmoid output layer.
struct ConceptPredictor {
  PredictorKind kind = PredictorKind::passthrough;
  int input_dim = 0;
  int hidden_dim = 0;
  int output_dim = 0;
  Mat w1;  // hidden x input
  Vec b1;
  Mat w2;  // output x hidden
  Vec b2;

  static ConceptPredictor passthrough(int concepts);
  static ConceptPredictor mlp(int inputs, int hidden, int concepts);
};

struct PredictorCache {
  Vec input;
  Vec hidden;
  Vec output;
};

struct PredictorGradients {
  Mat w1;
  Vec b1;
  Mat w2;
  Vec b2;
};

struct LayerShape {
  int conj = 0;
  int disj = 0;
  int size() const { return conj + disj; }
  bool operator==(const LayerShape&) const = default;
};

/// Splits each width M into ceil(M/2) conjunction and floor(M/2) disjunction nodes.
std::vector<LayerShape> split_layer_sizes(const std::vector<int>& sizes);

struct CrlModel {
  ConceptPredictor predictor;
  std::vector<LogicLayerParams<double>> logic;
  Mat head;  // classes x rules; column i holds the class weights of rule i
  Vec bias;  // classes
  double concept_threshold = 0.5;
  double weight_threshold = 0.5;
  std::vector<std::string> concept_names;
  std::vector<std::string> class_names;

  int num_concepts() const { return predictor.output_dim; }
  int num_classes() const { return static_cast<int>(head.rows()); }
  int num_rules() const { return static_cast<int>(head.cols()); }
  std::vector<LayerShape> layer_shapes() const;

  /// Throws on any shape inconsistency between predictor, logic stack and head.
  void validate() const;
};

struct InitOptions {
  // Candidate logic weights start uniformly in [low, high]; the rest start at 0.
  // Starting just around the weight threshold lets small updates flip
  // connections; sparse candidates keep deep nodes from saturating.
  double logic_low = 0.48;
  double logic_high = 0.52;
  // Expected candidate connections per node (each input is a candidate with
  // probability min(1, candidates / fan_in)). 0 makes every weight a candidate.
  double candidates_per_node = 2.0;
  // Head weights start uniformly in [-scale, scale] / sqrt(rules).
  double head_scale = 1.0;
};

/// Builds a model with freshly initialised parameters.
CrlModel make_model(int num_concepts, int num_classes, const std::vector<LayerShape>& layers,
                    const ConceptPredictor& predictor_shape, const InitOptions& init,
                    std::uint64_t seed);

struct BinaryStack {
  std::vector<BinaryLayerParams> layers;
};

BinaryStack binarize_stack(const CrlModel& model);

Vec predict_concepts(const ConceptPredictor& predictor, const Vec& x,
                     PredictorCache* cache = nullptr);
inline Vec predict_concepts(const CrlModel& model, const Vec& x) {
  return predict_concepts(model.predictor, x);
}

/// q: entrywise 1 if c >= threshold else 0.
BitVector binarize_concepts(const Vec& concepts, double threshold = 0.5);

/// u + sum of the head columns of fired rules, added in index order.
Vec apply_head_binary(const Mat& head, const Vec& bias, const BitVector& rules);

struct DiscreteOutput {
  Vec concepts;
  BitVector binary_concepts;
  BitVector rules;
  Vec logits;
};

/// Discrete network evaluated from binary concepts (r and f only).
DiscreteOutput forward_discrete_from_concepts(const CrlModel& model, const BinaryStack& stack,
                                              const BitVector& binary_concepts);
DiscreteOutput forward_discrete(const CrlModel& model, const BinaryStack& stack, const Vec& x);
DiscreteOutput forward_discrete(const CrlModel& model, const Vec& x);

struct ForwardTrace {
  PredictorCache predictor;
  Vec concepts;
  BitVector binary_concepts;
  std::vector<LayerCache<double>> layers;
  Vec rules_continuous;
  BitVector rules_discrete;
  Vec logits_discrete;
  Vec logits_continuous;
};

ForwardTrace forward_continuous(const CrlModel& model, const BinaryStack& stack, const Vec& x);
ForwardTrace forward_continuous(const CrlModel& model, const Vec& x);

struct ModelGradients {
  PredictorGradients predictor;
  std::vector<LayerGradients<double>> logic;
  Mat head;
  Vec bias;
  Vec d_concepts;

  static ModelGradients zeros_like(const CrlModel& model);
  ModelGradients& operator+=(const ModelGradients& other);
  ModelGradients& operator*=(double factor);
  bool all_finite() const;
};

/// Which logits the task-loss gradient is taken at.
enum class LogitSource {
  discrete,    // grafting: dL/d(y_hat) from the discrete network
  continuous,  // plain continuous surrogate, used for gradient checks
};

/// softmax(logits) - onehot(label).
Vec cross_entropy_logit_gradient(const Vec& logits, int label);

/// Straight-through estimator for q: identity.
inline Vec ste_backward(const Vec& grad_binary) { return grad_binary; }

/// Pushes a logit gradient through the continuous graph (head, logic stack,
/// STE, predictor) and adds the result into `grads`. `extra_concept_grad`
/// is added to the gradient at the concept probabilities before the
/// predictor backward pass; pass an empty vector for none.
void backpropagate(const CrlModel& model, const ForwardTrace& trace, const Vec& d_logits,
                   const Vec& extra_concept_grad, ModelGradients& grads);

/// Grafted backward for the cross-entropy task loss on one sample.
ModelGradients backward_grafted(const CrlModel& model, const ForwardTrace& trace, int label,
                                LogitSource source = LogitSource::discrete);

void predictor_backward(const ConceptPredictor& predictor, const PredictorCache& cache,
                        const Vec& d_concepts, PredictorGradients& grads);

/// FNV-1a hash over the binarized logic weights, head, bias and thresholds.
/// Rule sets carry it so they can be matched to the model they came from.
std::uint64_t fingerprint(const CrlModel& model);

}  // namespace crl
