#include "crl/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "crl/json_util.hpp"
#include "crl/random.hpp"

namespace crl {

namespace {

Error data_error(const std::string& what) { return Error(ErrorCategory::data, what); }

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

bool starts_with(const std::string& s, const std::string& prefix) {
  return s.size() >= prefix.size() && s.compare(0, prefix.size(), prefix) == 0;
}

std::optional<double> parse_double(const std::string& text) {
  double value = 0.0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return value;
}

std::optional<long long> parse_int(const std::string& text) {
  long long value = 0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return value;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, ptr);
}

std::string pad_id(std::size_t index, std::size_t total) {
  std::string digits = std::to_string(index);
  const std::size_t width = std::max<std::size_t>(5, std::to_string(total).size());
  return "r" + std::string(width - std::min(width, digits.size()), '0') + digits;
}

}  // namespace

void ConceptDataset::validate() const {
  const auto& m = meta;
  if (m.num_concepts <= 0) throw data_error("dataset: no concepts");
  if (m.num_classes <= 0) throw data_error("dataset: no classes");
  if (static_cast<int>(m.concept_names.size()) != m.num_concepts) {
    throw data_error("dataset: concept name count does not match concept count");
  }
  if (!m.class_names.empty() && static_cast<int>(m.class_names.size()) != m.num_classes) {
    throw data_error("dataset: class name count does not match class count");
  }
  const bool probs = has_probs();
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto& rec = records[r];
    const std::string where = "record " + std::to_string(r + 1) + " (id '" + rec.id + "')";
    if (rec.concept_labels.size() != m.num_concepts) {
      throw data_error(where + ": expected " + std::to_string(m.num_concepts) + " concept labels");
    }
    if ((rec.concept_labels.array() > 1).any()) throw data_error(where + ": concept labels must be 0/1");
    if (rec.label < 0 || rec.label >= m.num_classes) {
      throw data_error(where + ": label " + std::to_string(rec.label) + " outside [0, " +
                       std::to_string(m.num_classes) + ")");
    }
    if (rec.concept_probs.has_value() != probs) {
      throw data_error(where + ": concept probabilities present on some records only");
    }
    if (rec.concept_probs) {
      const auto& p = *rec.concept_probs;
      if (p.size() != m.num_concepts) throw data_error(where + ": concept probability length mismatch");
      if (!p.allFinite() || (p.array() < 0.0).any() || (p.array() > 1.0).any()) {
        throw data_error(where + ": concept probabilities must lie in [0,1]");
      }
    }
    const int d = rec.features ? static_cast<int>(rec.features->size()) : 0;
    if (d != m.feature_dim) {
      throw data_error(where + ": expected " + std::to_string(m.feature_dim) + " features, got " +
                       std::to_string(d));
    }
  }
}

ConceptDataset ConceptDataset::subset(const std::vector<std::size_t>& indices) const {
  ConceptDataset out;
  out.meta = meta;
  out.records.reserve(indices.size());
  for (auto i : indices) out.records.push_back(records.at(i));
  return out;
}

Vec model_input(const CrlModel& model, const Record& record) {
  if (model.predictor.kind == PredictorKind::mlp) {
    if (!record.features) {
      throw data_error("record '" + record.id + "' has no features but the model uses an MLP predictor");
    }
    return *record.features;
  }
  if (record.concept_probs) return *record.concept_probs;
  return record.concept_labels.cast<double>();
}

ConceptDataset read_csv(std::istream& in, std::optional<int> num_classes, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw data_error(source + ": empty file (no header row)");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_fields(line);

  int id_col = -1, label_col = -1;
  std::vector<int> feat_cols, concept_cols, prob_cols;
  std::vector<std::string> concept_names, prob_names;
  for (int c = 0; c < static_cast<int>(header.size()); ++c) {
    const auto& h = header[c];
    if (h == "id") {
      id_col = c;
    } else if (h == "label") {
      label_col = c;
    } else if (starts_with(h, "feat_")) {
      feat_cols.push_back(c);
    } else if (starts_with(h, "concept_")) {
      concept_cols.push_back(c);
      concept_names.push_back(h.substr(8));
    } else if (starts_with(h, "prob_")) {
      prob_cols.push_back(c);
      prob_names.push_back(h.substr(5));
    } else {
      throw data_error(source + ": unrecognised column '" + h + "'");
    }
  }
  if (id_col < 0) throw data_error(source + ": missing column 'id'");
  if (label_col < 0) throw data_error(source + ": missing column 'label'");
  if (concept_cols.empty()) throw data_error(source + ": missing concept_* columns");
  if (!prob_cols.empty() && prob_names != concept_names) {
    throw data_error(source + ": prob_* columns must match concept_* columns one to one");
  }

  ConceptDataset ds;
  ds.meta.num_concepts = static_cast<int>(concept_cols.size());
  ds.meta.feature_dim = static_cast<int>(feat_cols.size());
  ds.meta.concept_names = concept_names;

  int max_label = -1;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++row;
    const std::string where = source + ": row " + std::to_string(row) + " (line " +
                              std::to_string(row + 1) + ")";
    const auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw data_error(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                       std::to_string(fields.size()));
    }
    Record rec;
    rec.id = fields[id_col];
    const auto label = parse_int(fields[label_col]);
    if (!label) throw data_error(where + ": label '" + fields[label_col] + "' is not an integer");
    if (*label < 0 || (num_classes && *label >= *num_classes)) {
      throw data_error(where + ": label " + fields[label_col] + " out of range" +
                       (num_classes ? " [0, " + std::to_string(*num_classes) + ")" : std::string()));
    }
    rec.label = static_cast<int>(*label);
    max_label = std::max(max_label, rec.label);

    rec.concept_labels.resize(ds.meta.num_concepts);
    for (int k = 0; k < ds.meta.num_concepts; ++k) {
      const auto& text = fields[concept_cols[k]];
      if (text != "0" && text != "1") {
        throw data_error(where + ": concept '" + concept_names[k] + "' value '" + text +
                         "' is not binary (0/1)");
      }
      rec.concept_labels(k) = text == "1" ? 1 : 0;
    }
    if (!feat_cols.empty()) {
      Vec f(static_cast<Eigen::Index>(feat_cols.size()));
      for (std::size_t k = 0; k < feat_cols.size(); ++k) {
        const auto v = parse_double(fields[feat_cols[k]]);
        if (!v) throw data_error(where + ": feature '" + header[feat_cols[k]] + "' is not a number");
        f(static_cast<Eigen::Index>(k)) = *v;
      }
      rec.features = std::move(f);
    }
    if (!prob_cols.empty()) {
      Vec p(ds.meta.num_concepts);
      for (int k = 0; k < ds.meta.num_concepts; ++k) {
        const auto v = parse_double(fields[prob_cols[k]]);
        if (!v || *v < 0.0 || *v > 1.0) {
          throw data_error(where + ": probability '" + header[prob_cols[k]] + "' must be a number in [0,1]");
        }
        p(k) = *v;
      }
      rec.concept_probs = std::move(p);
    }
    ds.records.push_back(std::move(rec));
  }
  ds.meta.num_classes = num_classes ? *num_classes : std::max(1, max_label + 1);
  for (int c = 0; c < ds.meta.num_classes; ++c) ds.meta.class_names.push_back("class" + std::to_string(c));
  ds.validate();
  return ds;
}

ConceptDataset load_csv(const std::string& path, std::optional<int> num_classes) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCategory::io, "cannot open '" + path + "'");
  return read_csv(in, num_classes, path);
}

void write_csv(const ConceptDataset& dataset, std::ostream& out) {
  const auto& m = dataset.meta;
  const bool probs = dataset.has_probs();
  out << "id,label";
  for (int k = 0; k < m.feature_dim; ++k) out << ",feat_" << k;
  for (const auto& name : m.concept_names) out << ",concept_" << name;
  if (probs) {
    for (const auto& name : m.concept_names) out << ",prob_" << name;
  }
  out << '\n';
  for (const auto& rec : dataset.records) {
    out << rec.id << ',' << rec.label;
    if (rec.features) {
      for (Eigen::Index k = 0; k < rec.features->size(); ++k) out << ',' << format_double((*rec.features)(k));
    }
    for (Eigen::Index k = 0; k < rec.concept_labels.size(); ++k) out << ',' << int(rec.concept_labels(k));
    if (rec.concept_probs) {
      for (Eigen::Index k = 0; k < rec.concept_probs->size(); ++k) {
        out << ',' << format_double((*rec.concept_probs)(k));
      }
    }
    out << '\n';
  }
}

void save_csv(const ConceptDataset& dataset, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCategory::io, "cannot write '" + path + "'");
  write_csv(dataset, out);
}

void DnfSpec::validate() const {
  if (num_concepts <= 0) throw Error(ErrorCategory::config, "dnf spec: num_concepts must be positive");
  if (terms.empty()) throw Error(ErrorCategory::config, "dnf spec: terms must be nonempty");
  for (const auto& term : terms) {
    if (term.empty()) throw Error(ErrorCategory::config, "dnf spec: every term needs at least one literal");
    for (int idx : term) {
      if (idx < 0 || idx >= num_concepts) {
        throw Error(ErrorCategory::config, "dnf spec: literal index " + std::to_string(idx) + " out of range");
      }
    }
  }
  if (samples <= 0) throw Error(ErrorCategory::config, "dnf spec: samples must be positive");
  if (concept_noise < 0.0 || concept_noise > 1.0 || label_noise < 0.0 || label_noise > 1.0) {
    throw Error(ErrorCategory::config, "dnf spec: noise rates must lie in [0,1]");
  }
}

void LeakagePairSpec::validate() const {
  base.validate();
  if (!(shift > 0.0 && shift < 0.5)) throw Error(ErrorCategory::config, "leakage spec: shift must lie in (0, 0.5)");
  if (!(margin > 0.0 && margin <= 0.45)) throw Error(ErrorCategory::config, "leakage spec: margin must lie in (0, 0.45]");
}

DnfSpec dnf_spec_from_json(const nlohmann::json& j) {
  const std::string ctx = "dnf spec";
  reject_unknown_keys(j, {"kind", "num_concepts", "terms", "samples", "concept_noise", "label_noise",
                          "seed", "complement"},
                      ctx);
  DnfSpec s;
  read_optional(j, "num_concepts", s.num_concepts, ctx);
  s.terms = read_required<std::vector<std::vector<int>>>(j, "terms", ctx);
  read_optional(j, "samples", s.samples, ctx);
  read_optional(j, "concept_noise", s.concept_noise, ctx);
  read_optional(j, "label_noise", s.label_noise, ctx);
  read_optional(j, "seed", s.seed, ctx);
  read_optional(j, "complement", s.complement, ctx);
  s.validate();
  return s;
}

nlohmann::json to_json(const DnfSpec& spec) {
  return {{"kind", "dnf"},
          {"num_concepts", spec.num_concepts},
          {"terms", spec.terms},
          {"samples", spec.samples},
          {"concept_noise", spec.concept_noise},
          {"label_noise", spec.label_noise},
          {"seed", spec.seed},
          {"complement", spec.complement}};
}

LeakagePairSpec leakage_spec_from_json(const nlohmann::json& j) {
  const std::string ctx = "leakage spec";
  reject_unknown_keys(j, {"kind", "base", "shift", "margin"}, ctx);
  LeakagePairSpec s;
  if (!j.contains("base")) throw Error(ErrorCategory::config, ctx + ": missing key 'base'");
  s.base = dnf_spec_from_json(j.at("base"));
  read_optional(j, "shift", s.shift, ctx);
  read_optional(j, "margin", s.margin, ctx);
  s.validate();
  return s;
}

nlohmann::json to_json(const LeakagePairSpec& spec) {
  auto base = to_json(spec.base);
  base.erase("kind");
  return {{"kind", "leakage"}, {"base", base}, {"shift", spec.shift}, {"margin", spec.margin}};
}

bool dnf_value(const std::vector<std::vector<int>>& terms, const BitVector& concepts) {
  for (const auto& term : terms) {
    bool all = true;
    for (int idx : term) all = all && concepts(idx) != 0;
    if (all) return true;
  }
  return false;
}

ConceptDataset gen_dnf(const DnfSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const int k = spec.num_concepts;
  ConceptDataset ds;
  ds.meta.num_concepts = k;
  ds.meta.num_classes = 2;
  ds.meta.class_names = {"negative", "positive"};
  for (int i = 0; i < k; ++i) ds.meta.concept_names.push_back("c" + std::to_string(i));

  const auto n = static_cast<std::size_t>(spec.samples);
  ds.records.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    BitVector truth(k);
    for (int i = 0; i < k; ++i) truth(i) = static_cast<std::uint8_t>(rng() >> 63);
    BitVector observed = truth;
    for (int i = 0; i < k; ++i) {
      if (bernoulli(rng, spec.concept_noise)) observed(i) ^= 1;
    }
    int label = dnf_value(spec.terms, truth) ? 1 : 0;
    if (bernoulli(rng, spec.label_noise)) label = 1 - label;

    Record rec;
    rec.id = pad_id(r, n);
    rec.concept_labels = observed;
    rec.concept_probs = observed.cast<double>().unaryExpr([](double c) { return c > 0.5 ? 0.9 : 0.1; });
    rec.label = label;
    ds.records.push_back(std::move(rec));
  }
  if (spec.complement) ds = augment_complements(ds);
  ds.validate();
  return ds;
}

LeakagePair gen_leakage_pair(const LeakagePairSpec& spec) {
  spec.validate();
  LeakagePair pair;
  pair.in_domain = gen_dnf(spec.base);
  pair.ood = pair.in_domain;
  const double low = 0.5 - spec.margin;
  const double high = 0.5 + spec.margin;
  auto shifted = [&](double p, bool bit, double delta) {
    double v = std::clamp(p + delta, 0.05, 0.95);
    return bit ? std::max(v, high) : std::min(v, low);
  };
  for (std::size_t r = 0; r < pair.in_domain.records.size(); ++r) {
    auto& in = pair.in_domain.records[r];
    auto& out = pair.ood.records[r];
    const double toward = spec.shift * (2.0 * in.label - 1.0);
    for (Eigen::Index k = 0; k < in.concept_labels.size(); ++k) {
      const bool bit = in.concept_labels(k) != 0;
      const double base = (*in.concept_probs)(k);
      (*in.concept_probs)(k) = shifted(base, bit, toward);
      (*out.concept_probs)(k) = shifted(base, bit, -toward);
    }
  }
  return pair;
}

ConceptDataset augment_complements(const ConceptDataset& dataset) {
  ConceptDataset out = dataset;
  const int k = dataset.meta.num_concepts;
  out.meta.num_concepts = 2 * k;
  for (int i = 0; i < k; ++i) out.meta.concept_names.push_back("not_" + dataset.meta.concept_names[i]);
  for (auto& rec : out.records) {
    BitVector labels(2 * k);
    labels << rec.concept_labels, (rec.concept_labels.array() == 0).cast<std::uint8_t>().matrix();
    rec.concept_labels = labels;
    if (rec.concept_probs) {
      Vec p(2 * k);
      p << *rec.concept_probs, (1.0 - rec.concept_probs->array()).matrix();
      rec.concept_probs = p;
    }
  }
  return out;
}

std::vector<ConceptDataset> split(const ConceptDataset& dataset, const std::vector<double>& fractions,
                                  std::uint64_t seed) {
  if (fractions.empty()) throw std::invalid_argument("split: no fractions given");
  double total = 0.0;
  for (double f : fractions) {
    if (f < 0.0) throw std::invalid_argument("split: fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("split: fractions must sum to 1");

  // Interleave classes: within each shuffled class, record r of n gets key
  // (r + 0.5) / n. Any contiguous key range then holds each class in
  // proportion, up to one record.
  Rng rng(seed);
  const int classes = dataset.meta.num_classes;
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(std::max(classes, 1)));
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    by_class.at(static_cast<std::size_t>(dataset.records[i].label)).push_back(i);
  }
  struct Keyed {
    double key;
    int cls;
    std::size_t index;
  };
  std::vector<Keyed> order;
  order.reserve(dataset.size());
  for (int c = 0; c < static_cast<int>(by_class.size()); ++c) {
    auto& members = by_class[c];
    shuffle(members, rng);
    for (std::size_t r = 0; r < members.size(); ++r) {
      order.push_back({(static_cast<double>(r) + 0.5) / static_cast<double>(members.size()), c, members[r]});
    }
  }
  std::sort(order.begin(), order.end(), [](const Keyed& a, const Keyed& b) {
    return a.key != b.key ? a.key < b.key : a.cls < b.cls;
  });

  std::vector<ConceptDataset> parts;
  const double n = static_cast<double>(dataset.size());
  double cumulative = 0.0;
  std::size_t begin = 0;
  for (std::size_t p = 0; p < fractions.size(); ++p) {
    cumulative += fractions[p];
    const std::size_t end = p + 1 == fractions.size()
                                ? dataset.size()
                                : std::min(dataset.size(), static_cast<std::size_t>(std::llround(cumulative * n)));
    std::vector<std::size_t> indices;
    for (std::size_t i = begin; i < std::max(begin, end); ++i) indices.push_back(order[i].index);
    std::sort(indices.begin(), indices.end());
    parts.push_back(dataset.subset(indices));
    begin = std::max(begin, end);
  }
  return parts;
}

std::vector<Fold> kfold(const ConceptDataset& dataset, int k, std::uint64_t seed) {
  if (k < 2 || static_cast<std::size_t>(k) > dataset.size()) {
    throw std::invalid_argument("kfold: need 2 <= k <= dataset size");
  }
  Rng rng(seed);
  std::vector<int> fold_of(dataset.size(), 0);
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(std::max(dataset.meta.num_classes, 1)));
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    by_class.at(static_cast<std::size_t>(dataset.records[i].label)).push_back(i);
  }
  std::size_t offset = 0;
  for (auto& members : by_class) {
    shuffle(members, rng);
    for (std::size_t r = 0; r < members.size(); ++r) {
      fold_of[members[r]] = static_cast<int>((offset + r) % static_cast<std::size_t>(k));
    }
    offset += members.size();
  }
  std::vector<Fold> folds;
  for (int f = 0; f < k; ++f) {
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < dataset.size(); ++i) (fold_of[i] == f ? test : train).push_back(i);
    folds.push_back({dataset.subset(train), dataset.subset(test)});
  }
  return folds;
}

}  // namespace crl
