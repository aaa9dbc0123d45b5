#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "crl/model.hpp"
#include "crl/types.hpp"

namespace crl {

struct Record {
  std::string id;
  std::optional<Vec> features;
  std::optional<Vec> concept_probs;
  BitVector concept_labels;
  int label = 0;
};

struct DatasetMeta {
  int num_concepts = 0;
  int num_classes = 0;
  int feature_dim = 0;  // 0 when records carry no features
  std::vector<std::string> concept_names;
  std::vector<std::string> class_names;
};

struct ConceptDataset {
  DatasetMeta meta;
  std::vector<Record> records;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  bool has_probs() const { return !records.empty() && records.front().concept_probs.has_value(); }

  /// Throws crl::Error (data) naming the first offending record.
  void validate() const;

  ConceptDataset subset(const std::vector<std::size_t>& indices) const;
};

/// Input the model's concept predictor consumes for a record: features for an
/// MLP predictor, concept probabilities (or, failing that, labels) for passthrough.
Vec model_input(const CrlModel& model, const Record& record);

/// Reads `id,label,feat_*...,concept_*...[,prob_*...]`. Concept names are the
/// column suffixes after `concept_`. When `num_classes` is given, labels at or
/// above it are rejected; otherwise the class count is max(label) + 1.
ConceptDataset load_csv(const std::string& path, std::optional<int> num_classes = std::nullopt);
ConceptDataset read_csv(std::istream& in, std::optional<int> num_classes = std::nullopt,
                        const std::string& source = "<stream>");

/// Values are written with 17 significant digits, so write/read is value-exact.
void write_csv(const ConceptDataset& dataset, std::ostream& out);
void save_csv(const ConceptDataset& dataset, const std::string& path);

struct DnfSpec {
  int num_concepts = 8;
  std::vector<std::vector<int>> terms;
  int samples = 2000;
  double concept_noise = 0.0;
  double label_noise = 0.0;
  std::uint64_t seed = 0;
  bool complement = false;

  void validate() const;
};

struct LeakagePairSpec {
  DnfSpec base;
  double shift = 0.2;
  // Every soft probability stays this far from 0.5 on its own side.
  double margin = 0.05;

  void validate() const;
};

DnfSpec dnf_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DnfSpec& spec);
LeakagePairSpec leakage_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const LeakagePairSpec& spec);

/// True value of the DNF over binary concepts.
bool dnf_value(const std::vector<std::vector<int>>& terms, const BitVector& concepts);

ConceptDataset gen_dnf(const DnfSpec& spec);

struct LeakagePair {
  ConceptDataset in_domain;
  ConceptDataset ood;
};

/// Both domains share records, concept labels and task labels. Soft
/// probabilities move by +shift*(2y-1) in-domain and by the opposite amount
/// out of domain, clamped to [0.05, 0.95] and kept on their side of 0.5.
LeakagePair gen_leakage_pair(const LeakagePairSpec& spec);

/// Appends a complement column (1 - c) for every concept, named `not_<name>`.
ConceptDataset augment_complements(const ConceptDataset& dataset);

/// Stratified split into parts of the given fractions (must sum to 1).
std::vector<ConceptDataset> split(const ConceptDataset& dataset, const std::vector<double>& fractions,
                                  std::uint64_t seed);

struct Fold {
  ConceptDataset train;
  ConceptDataset test;
};

std::vector<Fold> kfold(const ConceptDataset& dataset, int k, std::uint64_t seed);

}  // namespace crl
