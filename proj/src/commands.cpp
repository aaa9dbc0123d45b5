#include "crl/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "crl/checkpoint.hpp"
#include "crl/config.hpp"
#include "crl/data.hpp"
#include "crl/rules.hpp"

namespace crl {

namespace fs = std::filesystem;

namespace {

std::string require(const std::optional<std::string>& value, const char* flag, const char* command) {
  if (!value || value->empty()) {
    throw Error(ErrorCategory::config, std::string(command) + " needs " + flag);
  }
  return *value;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCategory::io, "cannot create directory '" + dir + "': " + ec.message());
}

void write_text(const std::string& text, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCategory::io, "cannot write '" + path + "'");
  f << text;
  if (!f) throw Error(ErrorCategory::io, "write failed for '" + path + "'");
}

std::string file_hash(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCategory::io, "cannot read '" + path + "'");
  std::uint64_t h = 1469598103934665603ULL;
  char buf[1 << 14];
  while (f) {
    f.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < f.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

/// Prints the chosen form and, with --out, stores both forms as <stem>.json/.txt.
void emit(const CommandOptions& options, const nlohmann::json& j, const std::string& text, const std::string& stem,
          std::ostream& out) {
  out << (options.format == OutputFormat::json ? j.dump(2) + "\n" : text);
  if (options.out) {
    ensure_dir(*options.out);
    write_json_file(j, (fs::path(*options.out) / (stem + ".json")).string());
    write_text(text, (fs::path(*options.out) / (stem + ".txt")).string());
  }
}

ConceptDataset load_for_model(const std::string& path, const CrlModel& model) {
  ConceptDataset ds = load_csv(path, model.num_classes());
  if (ds.meta.num_concepts != model.num_concepts()) {
    throw Error(ErrorCategory::data, path + ": " + std::to_string(ds.meta.num_concepts) +
                                         " concept columns, checkpoint expects " +
                                         std::to_string(model.num_concepts()));
  }
  if (model.predictor.kind == PredictorKind::mlp && ds.meta.feature_dim != model.predictor.input_dim) {
    throw Error(ErrorCategory::data, path + ": feature width does not match the checkpoint's predictor");
  }
  return ds;
}

std::string epoch_line(const EpochRecord& r) {
  char buf[200];
  std::snprintf(buf, sizeof buf, "epoch %4d  lr %.3e  loss %.5f (task %.5f, concept %.5f, reg %.3e)  train %.4f",
                r.epoch, r.lr, r.total_loss, r.task_loss, r.concept_loss, r.reg, r.train_acc);
  std::string line = buf;
  if (r.val_acc) {
    std::snprintf(buf, sizeof buf, "  val %.4f", *r.val_acc);
    line += buf;
  }
  return line;
}

}  // namespace

int exit_code(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::config: return exit_usage;
    case ErrorCategory::io: return exit_io;
    case ErrorCategory::data:
    case ErrorCategory::dimension: return exit_data;
    case ErrorCategory::fingerprint: return exit_fingerprint;
    case ErrorCategory::numeric: return exit_numeric;
  }
  return exit_check_failed;
}

OutputFormat output_format_from_string(const std::string& name) {
  if (name == "text") return OutputFormat::text;
  if (name == "json") return OutputFormat::json;
  throw Error(ErrorCategory::config, "unknown format '" + name + "' (expected text or json)");
}

void cmd_synth(const CommandOptions& options, std::ostream& out) {
  const std::string spec_path = require(options.config, "--config <spec.json>", "synth");
  const std::string out_dir = require(options.out, "--out <dir>", "synth");
  const nlohmann::json j = read_json_file(spec_path);
  if (!j.is_object()) throw Error(ErrorCategory::config, spec_path + ": expected a JSON object");
  const std::string kind = j.value("kind", std::string("dnf"));
  const std::string stem = fs::path(spec_path).stem().string();
  ensure_dir(out_dir);

  nlohmann::json provenance;
  std::vector<std::pair<std::string, const ConceptDataset*>> outputs;
  DnfSpec dnf;
  LeakagePairSpec leak;
  ConceptDataset single;
  LeakagePair pair;
  if (kind == "dnf") {
    dnf = dnf_spec_from_json(j);
    if (options.seed) dnf.seed = *options.seed;
    single = gen_dnf(dnf);
    outputs.emplace_back(stem + ".csv", &single);
    provenance["spec"] = to_json(dnf);
    provenance["seed"] = dnf.seed;
  } else if (kind == "leakage") {
    leak = leakage_spec_from_json(j);
    if (options.seed) leak.base.seed = *options.seed;
    pair = gen_leakage_pair(leak);
    outputs.emplace_back(stem + "_id.csv", &pair.in_domain);
    outputs.emplace_back(stem + "_ood.csv", &pair.ood);
    provenance["spec"] = to_json(leak);
    provenance["seed"] = leak.base.seed;
  } else {
    throw Error(ErrorCategory::config, spec_path + ": unknown kind '" + kind + "' (expected dnf or leakage)");
  }

  nlohmann::json files = nlohmann::json::array();
  for (const auto& [name, ds] : outputs) {
    const std::string path = (fs::path(out_dir) / name).string();
    save_csv(*ds, path);
    files.push_back({{"file", name}, {"records", ds->size()}, {"fnv1a64", file_hash(path)}});
    out << "wrote " << path << " (" << ds->size() << " records)\n";
  }
  provenance["files"] = files;
  const std::string sidecar = (fs::path(out_dir) / (stem + ".provenance.json")).string();
  write_json_file(provenance, sidecar);
  out << "wrote " << sidecar << "\n";
}

TrainOutcome cmd_train(const CommandOptions& options, std::ostream& out, std::ostream& log) {
  RunConfig config = load_run_config(require(options.config, "--config <run.json>", "train"));
  if (options.seed) config.train.seed = *options.seed;
  if (options.out) config.out_dir = *options.out;
  if (options.data) config.train_data = *options.data;
  if (config.train_data.empty()) throw Error(ErrorCategory::config, "train: no training data (data.train or --data)");

  const ConceptDataset train_set = load_csv(config.train_data, config.num_classes);
  const int classes = train_set.meta.num_classes;
  std::optional<ConceptDataset> validation;
  if (config.validation_data) validation = load_csv(*config.validation_data, classes);

  ensure_dir(config.out_dir);
  const fs::path dir(config.out_dir);
  write_json_file(to_json(config), (dir / "run_config.json").string());

  const std::string history_path = (dir / "history.jsonl").string();
  std::ofstream history(history_path, std::ios::binary);
  if (!history) throw Error(ErrorCategory::io, "cannot write '" + history_path + "'");

  TrainOutcome outcome;
  const auto on_epoch = [&](const EpochRecord& r) {
    history << to_json(r).dump() << "\n";
    log << epoch_line(r) << "\n";
  };
  try {
    outcome.result = train(config.train, train_set, validation ? &*validation : nullptr, on_epoch);
  } catch (const TrainingAborted& e) {
    const std::string path = (dir / "checkpoint_last_good.json").string();
    save_checkpoint({e.last_good(), config.train, 0}, path);
    log << "saved last finite model to " << path << "\n";
    throw;
  }
  history.close();

  outcome.final_checkpoint = (dir / "checkpoint_final.json").string();
  outcome.best_checkpoint = (dir / "checkpoint_best.json").string();
  save_checkpoint({outcome.result.final_model, config.train, config.train.epochs}, outcome.final_checkpoint);
  save_checkpoint({outcome.result.best_model, config.train, outcome.result.best_epoch}, outcome.best_checkpoint);

  nlohmann::json summary = {{"final_checkpoint", outcome.final_checkpoint},
                            {"best_checkpoint", outcome.best_checkpoint},
                            {"best_epoch", outcome.result.best_epoch},
                            {"history", history_path},
                            {"train_samples", train_set.size()}};
  std::ostringstream text;
  text << "trained " << config.train.epochs << " epochs on " << train_set.size() << " records\n"
       << "final checkpoint: " << outcome.final_checkpoint << "\n"
       << "best checkpoint:  " << outcome.best_checkpoint << " (epoch " << outcome.result.best_epoch << ")\n";
  if (config.test_data) {
    const ConceptDataset test = load_for_model(*config.test_data, outcome.result.final_model);
    outcome.test_metrics = evaluate(outcome.result.final_model, test);
    write_json_file(to_json(*outcome.test_metrics), (dir / "test_metrics.json").string());
    summary["test_metrics"] = to_json(*outcome.test_metrics);
    text << "\ntest set (final model)\n" << render_metrics(*outcome.test_metrics);
  }
  out << (options.format == OutputFormat::json ? summary.dump(2) + "\n" : text.str());
  return outcome;
}

MetricsReport cmd_eval(const CommandOptions& options, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(require(options.checkpoint, "--checkpoint <path>", "eval"));
  const ConceptDataset data = load_for_model(require(options.data, "--data <csv>", "eval"), ckpt.model);
  const MetricsReport report = evaluate(ckpt.model, data);
  emit(options, to_json(report), render_metrics(report), "metrics", out);
  return report;
}

void cmd_rules(const CommandOptions& options, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(require(options.checkpoint, "--checkpoint <path>", "rules"));
  const RuleSet rules = extract_rules(ckpt.model);
  std::optional<RuleUsage> usage;
  if (options.data) {
    const ConceptDataset data = load_for_model(*options.data, ckpt.model);
    std::vector<BitVector> concepts;
    concepts.reserve(data.size());
    for (const auto& r : data.records) {
      concepts.push_back(forward_discrete(ckpt.model, model_input(ckpt.model, r)).binary_concepts);
    }
    usage = rule_usage(rules, concepts);
  }
  emit(options, rules_to_json(rules, usage), render_rules_text(rules, usage), "rules", out);
}

void cmd_explain(const CommandOptions& options, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(require(options.checkpoint, "--checkpoint <path>", "explain"));
  const ConceptDataset data = load_for_model(require(options.data, "--data <csv>", "explain"), ckpt.model);
  const std::string id = require(options.id, "--id <record id>", "explain");
  const RuleSet rules = options.rules ? rules_from_json(read_json_file(*options.rules)) : extract_rules(ckpt.model);
  for (const auto& r : data.records) {
    if (r.id != id) continue;
    const Explanation e = explain(ckpt.model, rules, model_input(ckpt.model, r), r.id);
    emit(options, to_json(e, rules), render_explanation(e, rules), "explanation_" + id, out);
    return;
  }
  throw Error(ErrorCategory::data, "no record with id '" + id + "' in " + *options.data);
}

GradcheckReport cmd_gradcheck(const CommandOptions& options, std::ostream& out) {
  GradcheckOptions go;
  if (options.seed) go.seed = *options.seed;
  const GradcheckReport report = run_gradcheck(go);
  const nlohmann::json j = {{"passed", report.passed()},
                            {"layer_points", report.layer_points},
                            {"layer_max_rel_err", report.layer_max_rel_err},
                            {"layer_tolerance", report.layer_tolerance},
                            {"model_points", report.model_points},
                            {"model_max_rel_err", report.model_max_rel_err},
                            {"model_tolerance", report.model_tolerance}};
  emit(options, j, render_gradcheck(report), "gradcheck", out);
  return report;
}

LeakageReport cmd_leakage(const CommandOptions& options, std::ostream& out, std::ostream& log) {
  LeakageConfig config;
  if (options.config) config = leakage_config_from_json(read_json_file(*options.config));
  if (options.seed) {
    config.pair.base.seed = *options.seed;
    config.crl.seed = *options.seed;
    config.baseline.seed = *options.seed;
    config.split_seed = *options.seed;
  }
  const auto on_epoch = [&](const EpochRecord& r) {
    if (r.epoch % 10 == 0 || r.epoch == config.crl.epochs) log << "CRL " << epoch_line(r) << "\n";
  };
  const LeakageReport report = leakage_benchmark(config, on_epoch);
  emit(options, to_json(report), render_leakage_table(report), "leakage", out);
  return report;
}

int run_command(const std::string& name, const CommandOptions& options, std::ostream& out, std::ostream& err) {
  try {
    if (name == "synth") {
      cmd_synth(options, out);
    } else if (name == "train") {
      cmd_train(options, out, err);
    } else if (name == "eval") {
      cmd_eval(options, out);
    } else if (name == "rules") {
      cmd_rules(options, out);
    } else if (name == "explain") {
      cmd_explain(options, out);
    } else if (name == "gradcheck") {
      if (!cmd_gradcheck(options, out).passed()) return exit_check_failed;
    } else if (name == "leakage") {
      cmd_leakage(options, out, err);
    } else {
      err << "error: unknown command '" << name << "'\n";
      return exit_usage;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e.category());
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return exit_usage;
  }
  return exit_ok;
}

}  // namespace crl
