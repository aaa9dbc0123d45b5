#include "crl/rules.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

#include "crl/json_util.hpp"
#include "crl/random.hpp"

namespace crl {

namespace {

int op_rank(Formula::Op op) {
  switch (op) {
    case Formula::Op::constant_false: return 0;
    case Formula::Op::constant_true: return 1;
    case Formula::Op::literal: return 2;
    case Formula::Op::all_of: return 3;
    case Formula::Op::any_of: return 4;
  }
  return 5;
}

int lowest_literal(const Formula& f) {
  if (f.op == Formula::Op::literal) return f.literal;
  int low = -1;
  for (const auto& c : f.children) {
    const int l = lowest_literal(c);
    if (l >= 0 && (low < 0 || l < low)) low = l;
  }
  return low;
}

// Total order used to canonicalise child lists: by lowest concept index
// first, so terms read in concept order.
int compare(const Formula& a, const Formula& b) {
  const int la = lowest_literal(a), lb = lowest_literal(b);
  if (la != lb) return la < lb ? -1 : 1;
  if (op_rank(a.op) != op_rank(b.op)) return op_rank(a.op) < op_rank(b.op) ? -1 : 1;
  if (a.op == Formula::Op::literal) return a.literal == b.literal ? 0 : (a.literal < b.literal ? -1 : 1);
  if (a.children.size() != b.children.size()) return a.children.size() < b.children.size() ? -1 : 1;
  for (std::size_t i = 0; i < a.children.size(); ++i) {
    const int c = compare(a.children[i], b.children[i]);
    if (c != 0) return c;
  }
  return 0;
}

bool contains_child(const Formula& f, const Formula& child) {
  return std::find(f.children.begin(), f.children.end(), child) != f.children.end();
}

Formula fold(Formula::Op op, std::vector<Formula> children) {
  const bool is_and = op == Formula::Op::all_of;
  const Formula::Op identity = is_and ? Formula::Op::constant_true : Formula::Op::constant_false;
  const Formula::Op absorbing = is_and ? Formula::Op::constant_false : Formula::Op::constant_true;
  const Formula::Op dual = is_and ? Formula::Op::any_of : Formula::Op::all_of;

  std::vector<Formula> flat;
  for (auto& child : children) {
    if (child.op == absorbing) return {absorbing, -1, {}};
    if (child.op == identity) continue;
    if (child.op == op) {
      for (auto& grandchild : child.children) flat.push_back(std::move(grandchild));
    } else {
      flat.push_back(std::move(child));
    }
  }
  std::sort(flat.begin(), flat.end(), [](const Formula& a, const Formula& b) { return compare(a, b) < 0; });
  flat.erase(std::unique(flat.begin(), flat.end()), flat.end());

  // x AND (x OR y) -> x, x OR (x AND y) -> x.
  std::vector<Formula> kept;
  for (const auto& child : flat) {
    bool absorbed = false;
    if (child.op == dual) {
      for (const auto& other : flat) {
        if (&other != &child && contains_child(child, other)) {
          absorbed = true;
          break;
        }
      }
    }
    if (!absorbed) kept.push_back(child);
  }

  if (kept.empty()) return {identity, -1, {}};
  if (kept.size() == 1) return std::move(kept.front());
  return {op, -1, std::move(kept)};
}

std::string concept_name(int index, const std::vector<std::string>& names) {
  if (index >= 0 && static_cast<std::size_t>(index) < names.size()) return names[static_cast<std::size_t>(index)];
  return "c" + std::to_string(index);
}

std::string render(const Formula& f, const std::vector<std::string>& names, bool top) {
  switch (f.op) {
    case Formula::Op::constant_true: return "TRUE";
    case Formula::Op::constant_false: return "FALSE";
    case Formula::Op::literal: return concept_name(f.literal, names);
    case Formula::Op::all_of: {
      std::string out = "(";
      for (std::size_t i = 0; i < f.children.size(); ++i) {
        if (i) out += " AND ";
        out += render(f.children[i], names, false);
      }
      return out + ")";
    }
    case Formula::Op::any_of: {
      // Top level: every disjunct parenthesised, "(c0 AND c1) OR (c2)".
      std::string out = top ? "" : "(";
      for (std::size_t i = 0; i < f.children.size(); ++i) {
        if (i) out += " OR ";
        const auto& child = f.children[i];
        const bool wrap = top && child.op != Formula::Op::all_of;
        out += wrap ? "(" + render(child, names, false) + ")" : render(child, names, false);
      }
      return top ? out : out + ")";
    }
  }
  return "";
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t parse_hex64(const std::string& s) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &used, 16);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw Error(ErrorCategory::config, "bad fingerprint '" + s + "'");
  return v;
}

std::string format_weights(const Vec& w, const std::vector<std::string>& class_names) {
  std::string out = "[";
  char buf[64];
  for (Eigen::Index c = 0; c < w.size(); ++c) {
    if (c) out += ", ";
    const std::string name = static_cast<std::size_t>(c) < class_names.size()
                                 ? class_names[static_cast<std::size_t>(c)]
                                 : "class" + std::to_string(c);
    std::snprintf(buf, sizeof buf, "%s=%.4f", name.c_str(), w(c));
    out += buf;
  }
  return out + "]";
}

nlohmann::json vec_json(const Vec& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Vec vec_from_json(const nlohmann::json& j) {
  const auto values = j.get<std::vector<double>>();
  Vec v(static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) v(static_cast<Eigen::Index>(i)) = values[i];
  return v;
}

int argmax(const Vec& v) {
  Eigen::Index best = 0;
  v.maxCoeff(&best);
  return static_cast<int>(best);
}

}  // namespace

Formula Formula::conjunction(std::vector<Formula> children) { return fold(Op::all_of, std::move(children)); }

Formula Formula::disjunction(std::vector<Formula> children) { return fold(Op::any_of, std::move(children)); }

bool eval_formula(const Formula& f, const BitVector& concepts) {
  switch (f.op) {
    case Formula::Op::constant_true: return true;
    case Formula::Op::constant_false: return false;
    case Formula::Op::literal:
      if (f.literal < 0 || f.literal >= concepts.size()) {
        throw dimension_error("literal c" + std::to_string(f.literal) + " outside " +
                        std::to_string(concepts.size()) + " concepts");
      }
      return concepts(f.literal) != 0;
    case Formula::Op::all_of:
      for (const auto& c : f.children) {
        if (!eval_formula(c, concepts)) return false;
      }
      return true;
    case Formula::Op::any_of:
      for (const auto& c : f.children) {
        if (eval_formula(c, concepts)) return true;
      }
      return false;
  }
  return false;
}

int literal_span(const Formula& f) {
  if (f.op == Formula::Op::literal) return f.literal + 1;
  int span = 0;
  for (const auto& c : f.children) span = std::max(span, literal_span(c));
  return span;
}

std::string to_string(const Formula& f, const std::vector<std::string>& names) {
  return render(f, names, true);
}

nlohmann::json formula_to_json(const Formula& f) {
  switch (f.op) {
    case Formula::Op::constant_true: return {{"op", "true"}};
    case Formula::Op::constant_false: return {{"op", "false"}};
    case Formula::Op::literal: return {{"op", "lit"}, {"concept", f.literal}};
    case Formula::Op::all_of:
    case Formula::Op::any_of: {
      nlohmann::json args = nlohmann::json::array();
      for (const auto& c : f.children) args.push_back(formula_to_json(c));
      return {{"op", f.op == Formula::Op::all_of ? "and" : "or"}, {"args", args}};
    }
  }
  return {};
}

Formula formula_from_json(const nlohmann::json& j) {
  require_object(j, "formula");
  const auto op = read_required<std::string>(j, "op", "formula");
  if (op == "true" || op == "false") {
    reject_unknown_keys(j, {"op"}, "formula");
    return op == "true" ? Formula::truth() : Formula::falsity();
  }
  if (op == "lit") {
    reject_unknown_keys(j, {"op", "concept"}, "formula");
    const int index = read_required<int>(j, "concept", "formula");
    if (index < 0) throw Error(ErrorCategory::config, "formula: negative concept index");
    return Formula::var(index);
  }
  if (op == "and" || op == "or") {
    reject_unknown_keys(j, {"op", "args"}, "formula");
    if (!j.contains("args") || !j.at("args").is_array() || j.at("args").empty()) {
      throw Error(ErrorCategory::config, "formula: '" + op + "' needs a non-empty 'args' array");
    }
    Formula f{op == "and" ? Formula::Op::all_of : Formula::Op::any_of, -1, {}};
    for (const auto& arg : j.at("args")) f.children.push_back(formula_from_json(arg));
    return f;
  }
  throw Error(ErrorCategory::config, "formula: unknown op '" + op + "'");
}

bool formulas_equivalent(const Formula& a, const Formula& b, int num_concepts, std::uint64_t seed) {
  if (num_concepts < 0 || num_concepts > 20) {
    throw std::invalid_argument("formulas_equivalent supports at most 20 concepts");
  }
  if (literal_span(a) > num_concepts || literal_span(b) > num_concepts) {
    throw std::invalid_argument("formula references a concept beyond " + std::to_string(num_concepts));
  }
  BitVector x(num_concepts);
  if (num_concepts <= 16) {
    const std::uint32_t total = 1u << num_concepts;
    for (std::uint32_t bits = 0; bits < total; ++bits) {
      for (int k = 0; k < num_concepts; ++k) x(k) = static_cast<std::uint8_t>((bits >> k) & 1u);
      if (eval_formula(a, x) != eval_formula(b, x)) return false;
    }
    return true;
  }
  Rng rng(seed);
  for (int trial = 0; trial < 1000000; ++trial) {
    const std::uint64_t bits = rng();
    for (int k = 0; k < num_concepts; ++k) x(k) = static_cast<std::uint8_t>((bits >> k) & 1u);
    if (eval_formula(a, x) != eval_formula(b, x)) return false;
  }
  return true;
}

std::vector<const Rule*> RuleSet::active() const {
  std::vector<const Rule*> out;
  for (const auto& r : rules) {
    if (!r.pruned) out.push_back(&r);
  }
  return out;
}

RuleSet extract_rules(const CrlModel& model) {
  model.validate();
  const BinaryStack stack = binarize_stack(model);

  std::vector<Formula> previous;
  for (int k = 0; k < model.num_concepts(); ++k) previous.push_back(Formula::var(k));
  for (const auto& layer : stack.layers) {
    std::vector<Formula> current;
    current.reserve(static_cast<std::size_t>(layer.conj.rows() + layer.disj.rows()));
    const auto expand = [&](const BitMatrix& adjacency, bool conj) {
      for (Eigen::Index node = 0; node < adjacency.rows(); ++node) {
        std::vector<Formula> inputs;
        for (Eigen::Index i = 0; i < adjacency.cols(); ++i) {
          if (adjacency(node, i)) inputs.push_back(previous[static_cast<std::size_t>(i)]);
        }
        current.push_back(conj ? Formula::conjunction(std::move(inputs))
                               : Formula::disjunction(std::move(inputs)));
      }
    };
    expand(layer.conj, true);
    expand(layer.disj, false);
    previous = std::move(current);
  }

  RuleSet out;
  out.bias = model.bias;
  out.concept_names = model.concept_names;
  out.class_names = model.class_names;
  out.model_fingerprint = fingerprint(model);
  for (int i = 0; i < model.num_rules(); ++i) {
    Rule rule;
    rule.node = i;
    rule.formula = std::move(previous[static_cast<std::size_t>(i)]);
    rule.class_weights = model.head.col(i);
    if (rule.formula.is_constant()) {
      rule.pruned = true;
      rule.prune_reason = "constant formula";
    } else if (rule.class_weights.cwiseAbs().maxCoeff() < kPruneWeightTolerance) {
      rule.pruned = true;
      rule.prune_reason = "zero class weights";
    }
    out.rules.push_back(std::move(rule));
  }
  return out;
}

Formula class_rule_union(const RuleSet& rules, int cls) {
  std::vector<Formula> members;
  for (const Rule* r : rules.active()) {
    if (cls < 0 || cls >= r->class_weights.size()) throw dimension_error("class index out of range");
    bool dominant = true;
    for (Eigen::Index c = 0; c < r->class_weights.size(); ++c) {
      if (c != cls && r->class_weights(c) >= r->class_weights(cls)) dominant = false;
    }
    if (dominant) members.push_back(r->formula);
  }
  return Formula::disjunction(std::move(members));
}

Explanation explain(const CrlModel& model, const RuleSet& rules, const Vec& x, const std::string& id) {
  if (rules.model_fingerprint != fingerprint(model)) {
    throw Error(ErrorCategory::fingerprint, "rule set " + hex64(rules.model_fingerprint) +
                                                " was not extracted from this model (" +
                                                hex64(fingerprint(model)) + ")");
  }
  const DiscreteOutput out = forward_discrete(model, x);
  Explanation e;
  e.id = id;
  e.concept_probs = out.concepts;
  e.concepts = out.binary_concepts;
  for (Eigen::Index i = 0; i < out.rules.size(); ++i) {
    if (out.rules(i)) {
      e.fired.push_back(static_cast<int>(i));
      e.contributions.push_back(rules.rules[static_cast<std::size_t>(i)].class_weights);
    }
  }
  e.logits = out.logits;
  e.predicted = argmax(e.logits);
  return e;
}

nlohmann::json to_json(const Explanation& e, const RuleSet& rules) {
  nlohmann::json concepts = nlohmann::json::array();
  for (Eigen::Index k = 0; k < e.concepts.size(); ++k) {
    concepts.push_back({{"name", concept_name(static_cast<int>(k), rules.concept_names)},
                        {"prob", e.concept_probs(k)},
                        {"value", static_cast<int>(e.concepts(k))}});
  }
  nlohmann::json fired = nlohmann::json::array();
  for (std::size_t i = 0; i < e.fired.size(); ++i) {
    const Rule& r = rules.rules[static_cast<std::size_t>(e.fired[i])];
    fired.push_back({{"id", "R" + std::to_string(e.fired[i] + 1)},
                     {"node", e.fired[i]},
                     {"formula", to_string(r.formula, rules.concept_names)},
                     {"contribution", vec_json(e.contributions[i])}});
  }
  const int predicted = e.predicted;
  return {{"id", e.id},
          {"concepts", concepts},
          {"fired_rules", fired},
          {"bias", vec_json(rules.bias)},
          {"logits", vec_json(e.logits)},
          {"predicted", predicted},
          {"predicted_class", static_cast<std::size_t>(predicted) < rules.class_names.size()
                                  ? rules.class_names[static_cast<std::size_t>(predicted)]
                                  : "class" + std::to_string(predicted)}};
}

std::string render_explanation(const Explanation& e, const RuleSet& rules) {
  std::ostringstream out;
  char buf[64];
  out << "input " << (e.id.empty() ? "-" : e.id) << "\n";
  out << "concepts:";
  for (Eigen::Index k = 0; k < e.concepts.size(); ++k) {
    std::snprintf(buf, sizeof buf, "=%d (%.3f)", static_cast<int>(e.concepts(k)), e.concept_probs(k));
    out << (k ? ", " : " ") << concept_name(static_cast<int>(k), rules.concept_names) << buf;
  }
  out << "\nmatched rules: " << e.fired.size() << "\n";
  Vec sum = Vec::Zero(e.logits.size());
  for (std::size_t i = 0; i < e.fired.size(); ++i) {
    const Rule& r = rules.rules[static_cast<std::size_t>(e.fired[i])];
    out << "  R" << e.fired[i] + 1 << ": " << to_string(r.formula, rules.concept_names) << " → "
        << format_weights(e.contributions[i], rules.class_names) << "\n";
    sum += e.contributions[i];
  }
  out << "rule weight sum: " << format_weights(sum, rules.class_names) << "\n";
  out << "bias: " << format_weights(rules.bias, rules.class_names) << "\n";
  out << "logits: " << format_weights(e.logits, rules.class_names) << "\n";
  const std::size_t p = static_cast<std::size_t>(e.predicted);
  out << "predicted: " << (p < rules.class_names.size() ? rules.class_names[p] : "class" + std::to_string(p))
      << "\n";
  return out.str();
}

RuleUsage rule_usage(const RuleSet& rules, const std::vector<BitVector>& concepts) {
  RuleUsage usage;
  usage.fired.assign(rules.rules.size(), 0);
  usage.samples = concepts.size();
  for (const auto& c : concepts) {
    for (std::size_t i = 0; i < rules.rules.size(); ++i) {
      if (eval_formula(rules.rules[i].formula, c)) ++usage.fired[i];
    }
  }
  return usage;
}

nlohmann::json rules_to_json(const RuleSet& rules, const std::optional<RuleUsage>& usage) {
  if (usage && usage->fired.size() != rules.rules.size()) throw dimension_error("rule usage does not match rule set");
  nlohmann::json list = nlohmann::json::array();
  for (std::size_t i = 0; i < rules.rules.size(); ++i) {
    const Rule& r = rules.rules[i];
    nlohmann::json item = {{"id", "R" + std::to_string(r.node + 1)},
                           {"node", r.node},
                           {"formula", formula_to_json(r.formula)},
                           {"text", to_string(r.formula, rules.concept_names)},
                           {"class_weights", vec_json(r.class_weights)},
                           {"pruned", r.pruned}};
    if (r.pruned) item["prune_reason"] = r.prune_reason;
    if (usage) item["fired"] = usage->fired[i];
    list.push_back(std::move(item));
  }
  nlohmann::json j = {{"schema", "rules_v1"},
                      {"model_fingerprint", hex64(rules.model_fingerprint)},
                      {"concept_names", rules.concept_names},
                      {"class_names", rules.class_names},
                      {"bias", vec_json(rules.bias)},
                      {"rules", list}};
  if (usage) j["evaluated_samples"] = usage->samples;
  return j;
}

RuleSet rules_from_json(const nlohmann::json& j) {
  require_object(j, "rules document");
  reject_unknown_keys(j, {"schema", "model_fingerprint", "concept_names", "class_names", "bias", "rules",
                          "evaluated_samples"},
                      "rules document");
  const auto schema = read_required<std::string>(j, "schema", "rules document");
  if (schema != "rules_v1") throw Error(ErrorCategory::config, "unsupported rules schema '" + schema + "'");
  RuleSet out;
  out.model_fingerprint = parse_hex64(read_required<std::string>(j, "model_fingerprint", "rules document"));
  out.concept_names = read_required<std::vector<std::string>>(j, "concept_names", "rules document");
  out.class_names = read_required<std::vector<std::string>>(j, "class_names", "rules document");
  out.bias = vec_from_json(j.at("bias"));
  for (const auto& item : j.at("rules")) {
    require_object(item, "rule");
    reject_unknown_keys(item, {"id", "node", "formula", "text", "class_weights", "pruned", "prune_reason", "fired"},
                        "rule");
    Rule r;
    r.node = read_required<int>(item, "node", "rule");
    r.formula = formula_from_json(item.at("formula"));
    r.class_weights = vec_from_json(item.at("class_weights"));
    r.pruned = read_required<bool>(item, "pruned", "rule");
    read_optional(item, "prune_reason", r.prune_reason, "rule");
    if (r.class_weights.size() != out.bias.size()) throw dimension_error("rule class weights do not match bias");
    out.rules.push_back(std::move(r));
  }
  return out;
}

std::string render_rules_text(const RuleSet& rules, const std::optional<RuleUsage>& usage) {
  if (usage && usage->fired.size() != rules.rules.size()) throw dimension_error("rule usage does not match rule set");
  std::ostringstream active;
  std::ostringstream pruned;
  for (std::size_t i = 0; i < rules.rules.size(); ++i) {
    const Rule& r = rules.rules[i];
    std::ostringstream line;
    line << "R" << r.node + 1 << ": " << to_string(r.formula, rules.concept_names) << " → class weights "
         << format_weights(r.class_weights, rules.class_names);
    if (usage) line << "  fired " << usage->fired[i] << "/" << usage->samples;
    if (r.pruned) {
      pruned << line.str() << "  (" << r.prune_reason << ")\n";
    } else {
      active << line.str() << "\n";
    }
  }
  std::string out = active.str();
  if (!pruned.str().empty()) out += "\npruned rules:\n" + pruned.str();
  return out;
}

}  // namespace crl
