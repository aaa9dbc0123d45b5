#pragma once

// Small hand-wired models and datasets shared by the unit tests.

#include <vector>

#include "crl/data.hpp"
#include "crl/model.hpp"
#include "crl/random.hpp"

namespace fixture {

inline crl::RowMatrix<double> rows(int r, int c, std::initializer_list<double> values) {
  crl::RowMatrix<double> m(r, c);
  auto it = values.begin();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = *it++;
  return m;
}

inline crl::CrlModel passthrough(int concepts, std::vector<crl::LogicLayerParams<double>> logic,
                                 crl::Mat head, crl::Vec bias) {
  crl::CrlModel m;
  m.predictor = crl::ConceptPredictor::passthrough(concepts);
  m.logic = std::move(logic);
  m.head = std::move(head);
  m.bias = std::move(bias);
  m.validate();
  return m;
}

/// One conjunction node over concepts {0,1}. Class 1 gains 2 when it fires.
inline crl::CrlModel one_rule() {
  crl::LogicLayerParams<double> layer{rows(1, 2, {1, 1}), crl::RowMatrix<double>(0, 2)};
  crl::Mat head(2, 1);
  head << -1.0, 2.0;
  crl::Vec bias(2);
  bias << 0.25, -0.5;
  return passthrough(2, {layer}, head, bias);
}

/// Two layers over K=3. Layer 1: conj {c0,c1}, conj {c2}, disj {c1}.
/// Layer 2: conj {} (TRUE), disj over the two layer-1 conj nodes, so
/// rule 2 is (c0 AND c1) OR c2. Class 1 wins exactly when rule 2 fires.
inline crl::CrlModel two_term_dnf() {
  crl::LogicLayerParams<double> l1{rows(2, 3, {1, 1, 0, 0, 0, 1}), rows(1, 3, {0, 1, 0})};
  crl::LogicLayerParams<double> l2{rows(1, 3, {0, 0, 0}), rows(1, 3, {1, 1, 0})};
  crl::Mat head(2, 2);
  head << 0.0, -1.0,
          0.0, 1.0;
  crl::Vec bias(2);
  bias << 0.5, -0.5;
  return passthrough(3, {l1, l2}, head, bias);
}

/// Random passthrough model whose logic weights are exactly 0 or 1.
inline crl::CrlModel random_binary(std::uint64_t seed, int concepts, int classes,
                                   const std::vector<int>& widths, double on_rate = 0.3) {
  crl::Rng rng(seed);
  std::vector<crl::LogicLayerParams<double>> logic;
  int width = concepts;
  for (const auto& shape : crl::split_layer_sizes(widths)) {
    crl::LogicLayerParams<double> p;
    p.conj = crl::RowMatrix<double>::NullaryExpr(shape.conj, width, [&] { return crl::bernoulli(rng, on_rate) ? 1.0 : 0.0; });
    p.disj = crl::RowMatrix<double>::NullaryExpr(shape.disj, width, [&] { return crl::bernoulli(rng, on_rate) ? 1.0 : 0.0; });
    logic.push_back(std::move(p));
    width = shape.size();
  }
  crl::Mat head = crl::Mat::NullaryExpr(classes, width, [&] { return crl::uniform(rng, -1.0, 1.0); });
  crl::Vec bias = crl::Vec::NullaryExpr(classes, [&] { return crl::uniform(rng, -0.5, 0.5); });
  return passthrough(concepts, std::move(logic), std::move(head), std::move(bias));
}

/// Passthrough model with logic weights uniform in [lo, hi].
inline crl::CrlModel random_continuous(std::uint64_t seed, int concepts, int classes,
                                       const std::vector<int>& widths, double lo = 0.05, double hi = 0.95) {
  crl::Rng rng(seed);
  std::vector<crl::LogicLayerParams<double>> logic;
  int width = concepts;
  for (const auto& shape : crl::split_layer_sizes(widths)) {
    crl::LogicLayerParams<double> p;
    p.conj = crl::RowMatrix<double>::NullaryExpr(shape.conj, width, [&] { return crl::uniform(rng, lo, hi); });
    p.disj = crl::RowMatrix<double>::NullaryExpr(shape.disj, width, [&] { return crl::uniform(rng, lo, hi); });
    logic.push_back(std::move(p));
    width = shape.size();
  }
  crl::Mat head = crl::Mat::NullaryExpr(classes, width, [&] { return crl::uniform(rng, -1.0, 1.0); });
  crl::Vec bias = crl::Vec::NullaryExpr(classes, [&] { return crl::uniform(rng, -0.5, 0.5); });
  return passthrough(concepts, std::move(logic), std::move(head), std::move(bias));
}

inline crl::Vec bits_vec(std::uint32_t value, int width) {
  crl::Vec v(width);
  for (int i = 0; i < width; ++i) v(i) = static_cast<double>((value >> i) & 1u);
  return v;
}

inline crl::BitVector bits_bits(std::uint32_t value, int width) {
  crl::BitVector v(width);
  for (int i = 0; i < width; ++i) v(i) = static_cast<std::uint8_t>((value >> i) & 1u);
  return v;
}

/// Noiseless y = c0 AND c1 over K concepts; every assignment repeated `copies` times.
inline crl::ConceptDataset and_dataset(int concepts = 2, int copies = 16) {
  crl::ConceptDataset ds;
  ds.meta.num_concepts = concepts;
  ds.meta.num_classes = 2;
  for (int k = 0; k < concepts; ++k) ds.meta.concept_names.push_back("c" + std::to_string(k));
  ds.meta.class_names = {"0", "1"};
  int n = 0;
  for (int c = 0; c < copies; ++c) {
    for (std::uint32_t v = 0; v < (1u << concepts); ++v) {
      crl::Record r;
      r.id = "r" + std::to_string(n++);
      r.concept_labels = bits_bits(v, concepts);
      r.concept_probs = crl::Vec(r.concept_labels.cast<double>() * 0.8 + crl::Vec::Constant(concepts, 0.1));
      r.label = (v & 3u) == 3u ? 1 : 0;
      ds.records.push_back(std::move(r));
    }
  }
  return ds;
}

}  // namespace fixture
