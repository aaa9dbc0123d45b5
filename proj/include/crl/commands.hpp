#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include "crl/eval.hpp"
#include "crl/gradcheck.hpp"
#include "crl/training.hpp"
#include "crl/types.hpp"

namespace crl {

enum ExitCode : int {
  exit_ok = 0,
  exit_check_failed = 1,
  exit_usage = 2,
  exit_io = 3,
  exit_data = 4,
  exit_fingerprint = 5,
  exit_numeric = 6,
};

int exit_code(ErrorCategory category);

enum class OutputFormat { text, json };

OutputFormat output_format_from_string(const std::string& name);

struct CommandOptions {
  std::optional<std::string> config;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> checkpoint;
  std::optional<std::string> data;
  std::optional<std::string> rules;
  std::optional<std::string> id;
  OutputFormat format = OutputFormat::text;
};

/// Each command prints its report in the requested format to `out`. When an
/// output directory is given, the JSON and text forms are also written there.
/// Failures are thrown as crl::Error.

/// Generates the dataset(s) described by a DNF or leakage spec file into the
/// output directory, with a provenance sidecar holding the spec and file hashes.
void cmd_synth(const CommandOptions& options, std::ostream& out);

struct TrainOutcome {
  TrainResult result;
  std::string final_checkpoint;
  std::string best_checkpoint;
  std::optional<MetricsReport> test_metrics;
};

/// Trains from a run config and writes checkpoint_final.json,
/// checkpoint_best.json, history.jsonl and the effective run_config.json.
/// Progress lines go to `log`.
TrainOutcome cmd_train(const CommandOptions& options, std::ostream& out, std::ostream& log);

MetricsReport cmd_eval(const CommandOptions& options, std::ostream& out);
void cmd_rules(const CommandOptions& options, std::ostream& out);
void cmd_explain(const CommandOptions& options, std::ostream& out);
GradcheckReport cmd_gradcheck(const CommandOptions& options, std::ostream& out);
LeakageReport cmd_leakage(const CommandOptions& options, std::ostream& out, std::ostream& log);

/// Dispatches by subcommand name and maps failures to exit codes, writing the
/// diagnostic to `err`.
int run_command(const std::string& name, const CommandOptions& options, std::ostream& out, std::ostream& err);

}  // namespace crl
