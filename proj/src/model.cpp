#include "crl/model.hpp"

#include <cmath>
#include <algorithm>
#include <cstring>

#include "crl/random.hpp"

namespace crl {

std::string to_string(PredictorKind kind) {
  return kind == PredictorKind::mlp ? "mlp" : "passthrough";
}

PredictorKind predictor_kind_from_string(const std::string& name) {
  if (name == "passthrough") return PredictorKind::passthrough;
  if (name == "mlp") return PredictorKind::mlp;
  throw Error(ErrorCategory::config, "unknown predictor kind '" + name + "'");
}

ConceptPredictor ConceptPredictor::passthrough(int concepts) {
  ConceptPredictor p;
  p.kind = PredictorKind::passthrough;
  p.input_dim = concepts;
  p.output_dim = concepts;
  return p;
}

ConceptPredictor ConceptPredictor::mlp(int inputs, int hidden, int concepts) {
  ConceptPredictor p;
  p.kind = PredictorKind::mlp;
  p.input_dim = inputs;
  p.hidden_dim = hidden;
  p.output_dim = concepts;
  p.w1 = Mat::Zero(hidden, inputs);
  p.b1 = Vec::Zero(hidden);
  p.w2 = Mat::Zero(concepts, hidden);
  p.b2 = Vec::Zero(concepts);
  return p;
}

std::vector<LayerShape> split_layer_sizes(const std::vector<int>& sizes) {
  std::vector<LayerShape> shapes;
  shapes.reserve(sizes.size());
  for (int m : sizes) {
    if (m <= 0) throw Error(ErrorCategory::config, "logic layer sizes must be positive");
    shapes.push_back({(m + 1) / 2, m / 2});
  }
  return shapes;
}

std::vector<LayerShape> CrlModel::layer_shapes() const {
  std::vector<LayerShape> shapes;
  for (const auto& layer : logic) {
    shapes.push_back({static_cast<int>(layer.conj_size()), static_cast<int>(layer.disj_size())});
  }
  return shapes;
}

void CrlModel::validate() const {
  const auto& p = predictor;
  if (p.output_dim <= 0) throw dimension_error("model: predictor has no concept outputs");
  if (p.kind == PredictorKind::passthrough && p.input_dim != p.output_dim) {
    throw dimension_error("model: passthrough predictor needs input width == concept count");
  }
  if (p.kind == PredictorKind::mlp &&
      (p.w1.rows() != p.hidden_dim || p.w1.cols() != p.input_dim || p.b1.size() != p.hidden_dim ||
       p.w2.rows() != p.output_dim || p.w2.cols() != p.hidden_dim || p.b2.size() != p.output_dim)) {
    throw dimension_error("model: MLP predictor parameter shapes are inconsistent");
  }
  if (logic.empty()) throw dimension_error("model: logic stack is empty");
  Eigen::Index width = p.output_dim;
  for (std::size_t l = 0; l < logic.size(); ++l) {
    logic[l].validate();
    if (logic[l].input_size() != width) {
      throw dimension_error("model: logic layer " + std::to_string(l) + " expects " +
                            std::to_string(logic[l].input_size()) + " inputs, previous width is " +
                            std::to_string(width));
    }
    width = logic[l].size();
  }
  if (head.cols() != width) {
    throw dimension_error("model: head has " + std::to_string(head.cols()) +
                          " rule columns, final logic layer has " + std::to_string(width) +
                          " nodes");
  }
  if (head.rows() <= 0 || bias.size() != head.rows()) {
    throw dimension_error("model: head bias length does not match class count");
  }
  if (!concept_names.empty() && static_cast<int>(concept_names.size()) != p.output_dim) {
    throw dimension_error("model: concept name count does not match concept count");
  }
  if (!class_names.empty() && static_cast<int>(class_names.size()) != head.rows()) {
    throw dimension_error("model: class name count does not match class count");
  }
}

CrlModel make_model(int num_concepts, int num_classes, const std::vector<LayerShape>& layers,
                    const ConceptPredictor& predictor_shape, const InitOptions& init,
                    std::uint64_t seed) {
  if (num_concepts <= 0 || num_classes <= 0) {
    throw dimension_error("make_model: concept and class counts must be positive");
  }
  Rng rng(seed);
  CrlModel model;
  model.predictor = predictor_shape;
  if (model.predictor.kind == PredictorKind::mlp) {
    auto& p = model.predictor;
    const double a1 = 1.0 / std::sqrt(static_cast<double>(p.input_dim));
    const double a2 = 1.0 / std::sqrt(static_cast<double>(p.hidden_dim));
    p.w1 = Mat::NullaryExpr(p.hidden_dim, p.input_dim, [&] { return uniform(rng, -a1, a1); });
    p.b1 = Vec::Zero(p.hidden_dim);
    p.w2 = Mat::NullaryExpr(p.output_dim, p.hidden_dim, [&] { return uniform(rng, -a2, a2); });
    p.b2 = Vec::Zero(p.output_dim);
  }
  if (model.predictor.output_dim != num_concepts) {
    throw dimension_error("make_model: predictor output width does not match concept count");
  }

  Eigen::Index width = num_concepts;
  for (const auto& shape : layers) {
    auto layer = LogicLayerParams<double>::zeros(shape.conj, shape.disj, width);
    const double density = init.candidates_per_node > 0.0
                               ? std::min(1.0, init.candidates_per_node / static_cast<double>(width))
                               : 1.0;
    auto draw = [&] {
      const bool candidate = uniform01(rng) < density;
      const double w = uniform(rng, init.logic_low, init.logic_high);
      return candidate ? w : 0.0;
    };
    for (Eigen::Index i = 0; i < layer.conj.size(); ++i) layer.conj.data()[i] = draw();
    for (Eigen::Index i = 0; i < layer.disj.size(); ++i) layer.disj.data()[i] = draw();
    model.logic.push_back(std::move(layer));
    width = shape.size();
  }
  const double head_bound = init.head_scale / std::sqrt(static_cast<double>(width));
  model.head = Mat::NullaryExpr(num_classes, width, [&] { return uniform(rng, -head_bound, head_bound); });
  model.bias = Vec::Zero(num_classes);

  for (int k = 0; k < num_concepts; ++k) model.concept_names.push_back("c" + std::to_string(k));
  for (int c = 0; c < num_classes; ++c) model.class_names.push_back("class" + std::to_string(c));
  model.validate();
  return model;
}

BinaryStack binarize_stack(const CrlModel& model) {
  BinaryStack stack;
  stack.layers.reserve(model.logic.size());
  for (const auto& layer : model.logic) {
    stack.layers.push_back(binarize_weights(layer, model.weight_threshold));
  }
  return stack;
}

namespace {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

Vec predict_concepts(const ConceptPredictor& predictor, const Vec& x, PredictorCache* cache) {
  if (x.size() != predictor.input_dim) {
    throw dimension_error("predict_concepts: input length " + std::to_string(x.size()) +
                          " vs predictor width " + std::to_string(predictor.input_dim));
  }
  if (predictor.kind == PredictorKind::passthrough) {
    if ((x.array() < 0.0).any() || (x.array() > 1.0).any() || !x.allFinite()) {
      throw std::invalid_argument("predict_concepts: passthrough input must lie in [0,1]");
    }
    if (cache) *cache = {x, Vec(), x};
    return x;
  }
  Vec hidden = (predictor.w1 * x + predictor.b1).array().tanh().matrix();
  Vec out = (predictor.w2 * hidden + predictor.b2).unaryExpr([](double z) { return sigmoid(z); });
  if (cache) *cache = {x, hidden, out};
  return out;
}

void predictor_backward(const ConceptPredictor& predictor, const PredictorCache& cache,
                        const Vec& d_concepts, PredictorGradients& grads) {
  if (predictor.kind == PredictorKind::passthrough) return;
  const Vec d_z2 = (d_concepts.array() * cache.output.array() * (1.0 - cache.output.array())).matrix();
  grads.w2.noalias() += d_z2 * cache.hidden.transpose();
  grads.b2 += d_z2;
  const Vec d_z1 =
      ((predictor.w2.transpose() * d_z2).array() * (1.0 - cache.hidden.array().square())).matrix();
  grads.w1.noalias() += d_z1 * cache.input.transpose();
  grads.b1 += d_z1;
}

BitVector binarize_concepts(const Vec& concepts, double threshold) {
  return (concepts.array() >= threshold).cast<std::uint8_t>().matrix();
}

Vec apply_head_binary(const Mat& head, const Vec& bias, const BitVector& rules) {
  if (rules.size() != head.cols() || bias.size() != head.rows()) {
    throw dimension_error("apply_head_binary: rule vector does not match head shape");
  }
  Vec logits = bias;
  for (Eigen::Index i = 0; i < rules.size(); ++i) {
    if (rules(i)) logits += head.col(i);
  }
  return logits;
}

DiscreteOutput forward_discrete_from_concepts(const CrlModel& model, const BinaryStack& stack,
                                              const BitVector& binary_concepts) {
  if (stack.layers.size() != model.logic.size()) {
    throw dimension_error("forward_discrete: binarized stack does not match model depth");
  }
  DiscreteOutput out;
  out.binary_concepts = binary_concepts;
  BitVector n = binary_concepts;
  for (const auto& layer : stack.layers) n = layer_forward_discrete(n, layer);
  out.logits = apply_head_binary(model.head, model.bias, n);
  out.rules = std::move(n);
  return out;
}

DiscreteOutput forward_discrete(const CrlModel& model, const BinaryStack& stack, const Vec& x) {
  Vec concepts = predict_concepts(model.predictor, x);
  auto out = forward_discrete_from_concepts(model, stack,
                                            binarize_concepts(concepts, model.concept_threshold));
  out.concepts = std::move(concepts);
  return out;
}

DiscreteOutput forward_discrete(const CrlModel& model, const Vec& x) {
  return forward_discrete(model, binarize_stack(model), x);
}

ForwardTrace forward_continuous(const CrlModel& model, const BinaryStack& stack, const Vec& x) {
  ForwardTrace trace;
  trace.concepts = predict_concepts(model.predictor, x, &trace.predictor);
  trace.binary_concepts = binarize_concepts(trace.concepts, model.concept_threshold);

  Vec n = trace.binary_concepts.cast<double>();
  trace.layers.reserve(model.logic.size());
  for (const auto& layer : model.logic) {
    trace.layers.push_back(layer_forward_continuous(n, layer));
    n = trace.layers.back().output;
  }
  trace.rules_continuous = std::move(n);
  trace.logits_continuous = model.head * trace.rules_continuous + model.bias;

  auto discrete = forward_discrete_from_concepts(model, stack, trace.binary_concepts);
  trace.rules_discrete = std::move(discrete.rules);
  trace.logits_discrete = std::move(discrete.logits);
  return trace;
}

ForwardTrace forward_continuous(const CrlModel& model, const Vec& x) {
  return forward_continuous(model, binarize_stack(model), x);
}

ModelGradients ModelGradients::zeros_like(const CrlModel& model) {
  ModelGradients g;
  const auto& p = model.predictor;
  if (p.kind == PredictorKind::mlp) {
    g.predictor = {Mat::Zero(p.w1.rows(), p.w1.cols()), Vec::Zero(p.b1.size()),
                   Mat::Zero(p.w2.rows(), p.w2.cols()), Vec::Zero(p.b2.size())};
  }
  for (const auto& layer : model.logic) g.logic.push_back(LayerGradients<double>::zeros_like(layer));
  g.head = Mat::Zero(model.head.rows(), model.head.cols());
  g.bias = Vec::Zero(model.bias.size());
  g.d_concepts = Vec::Zero(model.num_concepts());
  return g;
}

ModelGradients& ModelGradients::operator+=(const ModelGradients& other) {
  if (predictor.w1.size()) {
    predictor.w1 += other.predictor.w1;
    predictor.b1 += other.predictor.b1;
    predictor.w2 += other.predictor.w2;
    predictor.b2 += other.predictor.b2;
  }
  for (std::size_t l = 0; l < logic.size(); ++l) {
    logic[l].d_conj += other.logic[l].d_conj;
    logic[l].d_disj += other.logic[l].d_disj;
    logic[l].d_input += other.logic[l].d_input;
  }
  head += other.head;
  bias += other.bias;
  d_concepts += other.d_concepts;
  return *this;
}

ModelGradients& ModelGradients::operator*=(double factor) {
  predictor.w1 *= factor;
  predictor.b1 *= factor;
  predictor.w2 *= factor;
  predictor.b2 *= factor;
  for (auto& layer : logic) {
    layer.d_conj *= factor;
    layer.d_disj *= factor;
    layer.d_input *= factor;
  }
  head *= factor;
  bias *= factor;
  d_concepts *= factor;
  return *this;
}

bool ModelGradients::all_finite() const {
  bool ok = predictor.w1.allFinite() && predictor.b1.allFinite() && predictor.w2.allFinite() &&
            predictor.b2.allFinite() && head.allFinite() && bias.allFinite();
  for (const auto& layer : logic) ok = ok && layer.d_conj.allFinite() && layer.d_disj.allFinite();
  return ok;
}

Vec cross_entropy_logit_gradient(const Vec& logits, int label) {
  if (label < 0 || label >= logits.size()) {
    throw dimension_error("cross-entropy: label " + std::to_string(label) + " out of range");
  }
  const double top = logits.maxCoeff();
  Vec p = (logits.array() - top).exp().matrix();
  p /= p.sum();
  p(label) -= 1.0;
  return p;
}

void backpropagate(const CrlModel& model, const ForwardTrace& trace, const Vec& d_logits,
                   const Vec& extra_concept_grad, ModelGradients& grads) {
  if (trace.layers.size() != model.logic.size() || d_logits.size() != model.num_classes() ||
      trace.rules_continuous.size() != model.num_rules()) {
    throw dimension_error("backpropagate: trace does not match model");
  }
  grads.head.noalias() += d_logits * trace.rules_continuous.transpose();
  grads.bias += d_logits;

  Vec upstream = model.head.transpose() * d_logits;
  for (std::size_t l = model.logic.size(); l-- > 0;) {
    auto& g = grads.logic[l];
    upstream = layer_backward_continuous_accumulate(model.logic[l], trace.layers[l], upstream,
                                                    g.d_conj, g.d_disj);
    g.d_input += upstream;
  }

  Vec d_concepts = ste_backward(upstream);
  if (extra_concept_grad.size()) d_concepts += extra_concept_grad;
  grads.d_concepts += d_concepts;
  predictor_backward(model.predictor, trace.predictor, d_concepts, grads.predictor);
}

ModelGradients backward_grafted(const CrlModel& model, const ForwardTrace& trace, int label,
                                LogitSource source) {
  const Vec& logits =
      source == LogitSource::discrete ? trace.logits_discrete : trace.logits_continuous;
  auto grads = ModelGradients::zeros_like(model);
  backpropagate(model, trace, cross_entropy_logit_gradient(logits, label), Vec(), grads);
  return grads;
}

namespace {

struct Fnv1a {
  std::uint64_t state = 1469598103934665603ULL;
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state ^= p[i];
      state *= 1099511628211ULL;
    }
  }
  void value(double v) { bytes(&v, sizeof v); }
  void value(std::int64_t v) { bytes(&v, sizeof v); }
};

}  // namespace

std::uint64_t fingerprint(const CrlModel& model) {
  Fnv1a h;
  h.value(static_cast<std::int64_t>(model.num_concepts()));
  h.value(model.concept_threshold);
  h.value(model.weight_threshold);
  for (const auto& layer : binarize_stack(model).layers) {
    h.value(static_cast<std::int64_t>(layer.conj.rows()));
    h.value(static_cast<std::int64_t>(layer.disj.rows()));
    h.value(static_cast<std::int64_t>(layer.conj.cols()));
    h.bytes(layer.conj.data(), static_cast<std::size_t>(layer.conj.size()));
    h.bytes(layer.disj.data(), static_cast<std::size_t>(layer.disj.size()));
  }
  for (Eigen::Index j = 0; j < model.head.cols(); ++j) {
    for (Eigen::Index i = 0; i < model.head.rows(); ++i) h.value(model.head(i, j));
  }
  for (Eigen::Index i = 0; i < model.bias.size(); ++i) h.value(model.bias(i));
  return h.state;
}

}  // namespace crl
