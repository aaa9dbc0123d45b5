#include "crl/gradcheck.hpp"

#include <algorithm>
#include <cstdio>
#include <vector>

#include "crl/logic.hpp"
#include "crl/model.hpp"
#include "crl/random.hpp"
#include "crl/training.hpp"

namespace crl {

namespace {

constexpr double kInteriorLow = 0.05;
constexpr double kInteriorHigh = 0.95;

double interior(Rng& rng) { return uniform(rng, kInteriorLow, kInteriorHigh); }

double layer_objective(const LogicLayerParams<double>& params, const Vec& input, const Vec& upstream) {
  return upstream.dot(layer_forward_continuous(input, params).output);
}

double layer_point(Rng& rng, double h) {
  const int n = 1 + static_cast<int>(uniform_index(rng, 8));
  const int mc = 1 + static_cast<int>(uniform_index(rng, 4));
  const int md = 1 + static_cast<int>(uniform_index(rng, 4));
  LogicLayerParams<double> params;
  params.conj = RowMatrix<double>::NullaryExpr(mc, n, [&] { return interior(rng); });
  params.disj = RowMatrix<double>::NullaryExpr(md, n, [&] { return interior(rng); });
  Vec input = Vec::NullaryExpr(n, [&] { return interior(rng); });
  const Vec upstream = Vec::NullaryExpr(mc + md, [&] { return uniform(rng, -1.0, 1.0); });

  const auto cache = layer_forward_continuous(input, params);
  const auto grads = layer_backward_continuous(params, cache, upstream);

  std::vector<double*> slots;
  std::vector<double> analytic;
  for (Eigen::Index i = 0; i < params.conj.size(); ++i) {
    slots.push_back(params.conj.data() + i);
    analytic.push_back(grads.d_conj.data()[i]);
  }
  for (Eigen::Index i = 0; i < params.disj.size(); ++i) {
    slots.push_back(params.disj.data() + i);
    analytic.push_back(grads.d_disj.data()[i]);
  }
  for (Eigen::Index i = 0; i < input.size(); ++i) {
    slots.push_back(input.data() + i);
    analytic.push_back(grads.d_input(i));
  }

  Vec a(static_cast<Eigen::Index>(slots.size()));
  Vec num(a.size());
  for (std::size_t s = 0; s < slots.size(); ++s) {
    double& v = *slots[s];
    const double saved = v;
    v = saved + h;
    const double up = layer_objective(params, input, upstream);
    v = saved - h;
    const double down = layer_objective(params, input, upstream);
    v = saved;
    a(static_cast<Eigen::Index>(s)) = analytic[s];
    num(static_cast<Eigen::Index>(s)) = (up - down) / (2.0 * h);
  }
  return relative_error(a, num);
}

double model_point(Rng& rng, double h) {
  const int k = 2 + static_cast<int>(uniform_index(rng, 4));
  const int classes = 2 + static_cast<int>(uniform_index(rng, 2));
  const std::vector<int> widths{2 + static_cast<int>(uniform_index(rng, 6)), 2 + static_cast<int>(uniform_index(rng, 6))};
  InitOptions init;
  init.logic_low = kInteriorLow;
  init.logic_high = kInteriorHigh;
  init.candidates_per_node = 0.0;
  CrlModel model = make_model(k, classes, split_layer_sizes(widths), ConceptPredictor::passthrough(k), init, rng());
  const BinaryStack stack = binarize_stack(model);

  Record rec;
  rec.concept_probs = Vec::NullaryExpr(k, [&] { return interior(rng); });
  rec.concept_labels = binarize_concepts(*rec.concept_probs);
  rec.label = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(classes)));
  const std::vector<const Record*> batch{&rec};
  const double lambda = 1e-2;

  ModelGradients grads;
  total_loss(model, stack, batch, 0.0, lambda, grads, LogitSource::continuous);

  std::vector<double*> slots;
  std::vector<double> analytic;
  for (std::size_t l = 0; l < model.logic.size(); ++l) {
    auto& layer = model.logic[l];
    for (Eigen::Index i = 0; i < layer.conj.size(); ++i) {
      slots.push_back(layer.conj.data() + i);
      analytic.push_back(grads.logic[l].d_conj.data()[i]);
    }
    for (Eigen::Index i = 0; i < layer.disj.size(); ++i) {
      slots.push_back(layer.disj.data() + i);
      analytic.push_back(grads.logic[l].d_disj.data()[i]);
    }
  }
  for (Eigen::Index i = 0; i < model.head.size(); ++i) {
    slots.push_back(model.head.data() + i);
    analytic.push_back(grads.head.data()[i]);
  }
  for (Eigen::Index i = 0; i < model.bias.size(); ++i) {
    slots.push_back(model.bias.data() + i);
    analytic.push_back(grads.bias(i));
  }

  ModelGradients scratch;
  const auto loss_at = [&] { return total_loss(model, stack, batch, 0.0, lambda, scratch, LogitSource::continuous).total; };
  Vec a(static_cast<Eigen::Index>(slots.size()));
  Vec num(a.size());
  for (std::size_t s = 0; s < slots.size(); ++s) {
    double& v = *slots[s];
    const double saved = v;
    v = saved + h;
    const double up = loss_at();
    v = saved - h;
    const double down = loss_at();
    v = saved;
    a(static_cast<Eigen::Index>(s)) = analytic[s];
    num(static_cast<Eigen::Index>(s)) = (up - down) / (2.0 * h);
  }
  return relative_error(a, num);
}

}  // namespace

double relative_error(const Vec& analytic, const Vec& numeric) {
  if (analytic.size() != numeric.size()) throw dimension_error("relative_error: length mismatch");
  const double scale = std::max(analytic.norm(), numeric.norm());
  if (scale == 0.0) return 0.0;
  return (analytic - numeric).norm() / scale;
}

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
  if (options.layer_points < 0 || options.model_points < 0 || !(options.step > 0.0)) {
    throw Error(ErrorCategory::config, "gradcheck: point counts must be non-negative and the step positive");
  }
  GradcheckReport report;
  report.layer_points = options.layer_points;
  report.model_points = options.model_points;
  report.layer_tolerance = options.layer_tolerance;
  report.model_tolerance = options.model_tolerance;
  Rng rng(options.seed);
  for (int p = 0; p < options.layer_points; ++p) {
    report.layer_max_rel_err = std::max(report.layer_max_rel_err, layer_point(rng, options.step));
  }
  for (int p = 0; p < options.model_points; ++p) {
    report.model_max_rel_err = std::max(report.model_max_rel_err, model_point(rng, options.step));
  }
  return report;
}

std::string render_gradcheck(const GradcheckReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "%s max_rel_err=%.3e\n  layer: %d points, max_rel_err=%.3e (tolerance %.0e)\n"
                "  model: %d points, max_rel_err=%.3e (tolerance %.0e)\n",
                r.passed() ? "PASS" : "FAIL", std::max(r.layer_max_rel_err, r.model_max_rel_err), r.layer_points,
                r.layer_max_rel_err, r.layer_tolerance, r.model_points, r.model_max_rel_err, r.model_tolerance);
  return buf;
}

}  // namespace crl
