#include "crl/checkpoint.hpp"

#include <cstdio>
#include <fstream>

#include "crl/json_util.hpp"

namespace crl {

namespace {

constexpr const char* kFormat = "crl_checkpoint_v1";

template <typename Derived>
nlohmann::json matrix_json(const Eigen::MatrixBase<Derived>& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::json vector_json(const Vec& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Mat matrix_from_json(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols, const std::string& what) {
  const auto fail = [&](const std::string& why) { return Error(ErrorCategory::config, "checkpoint " + what + ": " + why); };
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows) {
    throw fail("expected " + std::to_string(rows) + " rows");
  }
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw fail("row " + std::to_string(i) + " should have " + std::to_string(cols) + " entries");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      const auto& v = row[static_cast<std::size_t>(c)];
      if (!v.is_number()) throw fail("non-numeric entry");
      m(i, c) = v.get<double>();
    }
  }
  return m;
}

Vec vector_from_json(const nlohmann::json& j, Eigen::Index size, const std::string& what) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != size) {
    throw Error(ErrorCategory::config, "checkpoint " + what + ": expected " + std::to_string(size) + " entries");
  }
  Vec v(size);
  for (Eigen::Index i = 0; i < size; ++i) {
    const auto& x = j[static_cast<std::size_t>(i)];
    if (!x.is_number()) throw Error(ErrorCategory::config, "checkpoint " + what + ": non-numeric entry");
    v(i) = x.get<double>();
  }
  return v;
}

Eigen::Index rows_of(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array()) throw Error(ErrorCategory::config, "checkpoint " + what + ": expected an array");
  return static_cast<Eigen::Index>(j.size());
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

nlohmann::json checkpoint_to_json(const Checkpoint& checkpoint) {
  const CrlModel& m = checkpoint.model;
  m.validate();
  const auto& p = m.predictor;
  nlohmann::json predictor = {{"kind", to_string(p.kind)},
                              {"input_dim", p.input_dim},
                              {"hidden_dim", p.hidden_dim},
                              {"output_dim", p.output_dim}};
  if (p.kind == PredictorKind::mlp) {
    predictor["w1"] = matrix_json(p.w1);
    predictor["b1"] = vector_json(p.b1);
    predictor["w2"] = matrix_json(p.w2);
    predictor["b2"] = vector_json(p.b2);
  }
  nlohmann::json logic = nlohmann::json::array();
  for (const auto& layer : m.logic) {
    logic.push_back({{"conj", matrix_json(layer.conj)}, {"disj", matrix_json(layer.disj)}});
  }
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& s : m.layer_shapes()) shapes.push_back({s.conj, s.disj});

  return {{"format", kFormat},
          {"epoch", checkpoint.epoch},
          {"config", checkpoint.config ? to_json(*checkpoint.config) : nlohmann::json(nullptr)},
          {"num_concepts", m.num_concepts()},
          {"num_classes", m.num_classes()},
          {"layer_shapes", shapes},
          {"concept_threshold", m.concept_threshold},
          {"weight_threshold", m.weight_threshold},
          {"concept_names", m.concept_names},
          {"class_names", m.class_names},
          {"predictor", predictor},
          {"logic", logic},
          {"head", matrix_json(m.head)},
          {"bias", vector_json(m.bias)},
          {"fingerprint", hex64(fingerprint(m))}};
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  const std::string ctx = "checkpoint";
  reject_unknown_keys(j,
                      {"format", "epoch", "config", "num_concepts", "num_classes", "layer_shapes",
                       "concept_threshold", "weight_threshold", "concept_names", "class_names", "predictor",
                       "logic", "head", "bias", "fingerprint"},
                      ctx);
  const auto format = read_required<std::string>(j, "format", ctx);
  if (format != kFormat) throw Error(ErrorCategory::config, "unsupported checkpoint format '" + format + "'");

  Checkpoint out;
  read_optional(j, "epoch", out.epoch, ctx);
  if (j.contains("config") && !j.at("config").is_null()) out.config = train_config_from_json(j.at("config"));

  CrlModel& m = out.model;
  const int concepts = read_required<int>(j, "num_concepts", ctx);
  const int classes = read_required<int>(j, "num_classes", ctx);
  if (concepts <= 0 || classes <= 0) throw Error(ErrorCategory::config, "checkpoint: counts must be positive");
  m.concept_threshold = read_required<double>(j, "concept_threshold", ctx);
  m.weight_threshold = read_required<double>(j, "weight_threshold", ctx);
  read_optional(j, "concept_names", m.concept_names, ctx);
  read_optional(j, "class_names", m.class_names, ctx);

  if (!j.contains("predictor")) throw Error(ErrorCategory::config, "checkpoint: missing key 'predictor'");
  const auto& pj = j.at("predictor");
  const std::string pctx = ctx + ".predictor";
  reject_unknown_keys(pj, {"kind", "input_dim", "hidden_dim", "output_dim", "w1", "b1", "w2", "b2"}, pctx);
  const auto kind = predictor_kind_from_string(read_required<std::string>(pj, "kind", pctx));
  const int input_dim = read_required<int>(pj, "input_dim", pctx);
  const int hidden_dim = read_required<int>(pj, "hidden_dim", pctx);
  const int output_dim = read_required<int>(pj, "output_dim", pctx);
  if (output_dim != concepts) throw Error(ErrorCategory::config, "checkpoint: predictor output width != num_concepts");
  if (kind == PredictorKind::mlp) {
    if (input_dim <= 0 || hidden_dim <= 0) throw Error(ErrorCategory::config, "checkpoint: bad MLP dimensions");
    m.predictor = ConceptPredictor::mlp(input_dim, hidden_dim, output_dim);
    for (const char* key : {"w1", "b1", "w2", "b2"}) {
      if (!pj.contains(key)) throw Error(ErrorCategory::config, pctx + ": missing key '" + key + "'");
    }
    m.predictor.w1 = matrix_from_json(pj.at("w1"), hidden_dim, input_dim, "predictor.w1");
    m.predictor.b1 = vector_from_json(pj.at("b1"), hidden_dim, "predictor.b1");
    m.predictor.w2 = matrix_from_json(pj.at("w2"), output_dim, hidden_dim, "predictor.w2");
    m.predictor.b2 = vector_from_json(pj.at("b2"), output_dim, "predictor.b2");
  } else {
    if (input_dim != output_dim) throw Error(ErrorCategory::config, "checkpoint: passthrough widths differ");
    m.predictor = ConceptPredictor::passthrough(output_dim);
  }

  if (!j.contains("logic") || !j.contains("layer_shapes") || !j.contains("head") || !j.contains("bias")) {
    throw Error(ErrorCategory::config, "checkpoint: logic, layer_shapes, head and bias are required");
  }
  std::vector<LayerShape> shapes;
  try {
    for (const auto& s : j.at("layer_shapes")) shapes.push_back({s.at(0).get<int>(), s.at(1).get<int>()});
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::config, std::string("checkpoint.layer_shapes: ") + e.what());
  }
  const auto& lj = j.at("logic");
  if (rows_of(lj, "logic") != static_cast<Eigen::Index>(shapes.size()) || shapes.empty()) {
    throw Error(ErrorCategory::config, "checkpoint: logic layers do not match layer_shapes");
  }
  Eigen::Index width = concepts;
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const auto& layer = lj[l];
    const std::string lctx = "logic[" + std::to_string(l) + "]";
    reject_unknown_keys(layer, {"conj", "disj"}, ctx + "." + lctx);
    if (!layer.contains("conj") || !layer.contains("disj")) {
      throw Error(ErrorCategory::config, "checkpoint." + lctx + ": conj and disj are required");
    }
    LogicLayerParams<double> params;
    params.conj = matrix_from_json(layer.at("conj"), shapes[l].conj, width, lctx + ".conj");
    params.disj = matrix_from_json(layer.at("disj"), shapes[l].disj, width, lctx + ".disj");
    m.logic.push_back(std::move(params));
    width = shapes[l].size();
  }
  m.head = matrix_from_json(j.at("head"), classes, width, "head");
  m.bias = vector_from_json(j.at("bias"), classes, "bias");
  try {
    m.validate();
  } catch (const Error& e) {
    throw Error(ErrorCategory::config, std::string("checkpoint: ") + e.what());
  }

  if (j.contains("fingerprint")) {
    const auto stored = read_required<std::string>(j, "fingerprint", ctx);
    const auto actual = hex64(fingerprint(m));
    if (stored != actual) {
      throw Error(ErrorCategory::fingerprint,
                  "checkpoint fingerprint " + stored + " does not match its parameters (" + actual + ")");
    }
  }
  return out;
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCategory::io, "cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCategory::config, path + ": " + e.what());
  }
}

void write_json_file(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCategory::io, "cannot write '" + path + "'");
  out << j.dump(2) << "\n";
  if (!out) throw Error(ErrorCategory::io, "write failed for '" + path + "'");
}

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
  write_json_file(checkpoint_to_json(checkpoint), path);
}

Checkpoint load_checkpoint(const std::string& path) { return checkpoint_from_json(read_json_file(path)); }

}  // namespace crl
