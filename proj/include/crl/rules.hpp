#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "crl/model.hpp"
#include "crl/types.hpp"

namespace crl {

/// Boolean formula over positive concept literals.
struct Formula {
  enum class Op { constant_true, constant_false, literal, all_of, any_of };

  Op op = Op::constant_true;
  int literal = -1;
  std::vector<Formula> children;

  static Formula truth() { return {Op::constant_true, -1, {}}; }
  static Formula falsity() { return {Op::constant_false, -1, {}}; }
  static Formula var(int index) { return {Op::literal, index, {}}; }
  /// Folding constructors: flatten, drop identities, short-circuit on the
  /// absorbing constant, deduplicate, absorb (x OR (x AND y) -> x and dually),
  /// and sort children into a canonical order.
  static Formula conjunction(std::vector<Formula> children);
  static Formula disjunction(std::vector<Formula> children);

  bool is_constant() const { return op == Op::constant_true || op == Op::constant_false; }
  bool operator==(const Formula&) const = default;
};

bool eval_formula(const Formula& f, const BitVector& concepts);

/// Largest literal index + 1 (0 for constants).
int literal_span(const Formula& f);

/// `(c0 AND c1) OR (c2)`-style rendering with the given concept names
/// (falls back to c<i> for missing names).
std::string to_string(const Formula& f, const std::vector<std::string>& names = {});

nlohmann::json formula_to_json(const Formula& f);
Formula formula_from_json(const nlohmann::json& j);

/// Exhaustive over all 2^K assignments for K <= 16; otherwise 10^6 seeded
/// random assignments. K must be at most 20.
bool formulas_equivalent(const Formula& a, const Formula& b, int num_concepts, std::uint64_t seed = 0);

struct Rule {
  int node = 0;  // index in the final logic layer
  Formula formula;
  Vec class_weights;  // column `node` of the head
  bool pruned = false;
  std::string prune_reason;
};

struct RuleSet {
  std::vector<Rule> rules;
  Vec bias;
  std::vector<std::string> concept_names;
  std::vector<std::string> class_names;
  std::uint64_t model_fingerprint = 0;

  std::vector<const Rule*> active() const;
};

constexpr double kPruneWeightTolerance = 1e-8;

/// One rule per final-layer node, expanded down to concept literals through
/// the binarized weights. Constant rules and rules whose head column is
/// all-zero (|w| < 1e-8) are flagged pruned but kept.
RuleSet extract_rules(const CrlModel& model);

/// Disjunction of the non-pruned rules whose weight for `cls` exceeds every
/// other class weight.
Formula class_rule_union(const RuleSet& rules, int cls);

struct Explanation {
  std::string id;
  Vec concept_probs;
  BitVector concepts;
  std::vector<int> fired;          // node ids with r_i = 1, ascending
  std::vector<Vec> contributions;  // head column of each fired rule
  Vec logits;
  int predicted = 0;
};

/// Throws crl::Error (fingerprint) when `rules` was not extracted from `model`.
Explanation explain(const CrlModel& model, const RuleSet& rules, const Vec& x, const std::string& id = "");

nlohmann::json to_json(const Explanation& e, const RuleSet& rules);
std::string render_explanation(const Explanation& e, const RuleSet& rules);

struct RuleUsage {
  std::vector<std::size_t> fired;  // per rule
  std::size_t samples = 0;
};

/// Counts, for each rule, how many of the given concept vectors make it fire.
RuleUsage rule_usage(const RuleSet& rules, const std::vector<BitVector>& concepts);

nlohmann::json rules_to_json(const RuleSet& rules, const std::optional<RuleUsage>& usage = std::nullopt);
RuleSet rules_from_json(const nlohmann::json& j);
std::string render_rules_text(const RuleSet& rules, const std::optional<RuleUsage>& usage = std::nullopt);

}  // namespace crl
