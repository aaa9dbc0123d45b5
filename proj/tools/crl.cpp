// crl: command-line front end for the concept rule learner.

#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "crl/commands.hpp"

namespace {

struct Flags {
  std::string config;
  std::string out;
  std::string checkpoint;
  std::string data;
  std::string rules;
  std::string id;
  std::uint64_t seed = 0;
  std::string format = "text";
};

std::optional<std::string> given(const CLI::App* app, const char* flag, const std::string& value) {
  const CLI::Option* opt = app->get_option_no_throw(flag);
  if (opt == nullptr || opt->count() == 0) return std::nullopt;
  return value;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Concept rule learner: train, inspect and explain rule-based concept classifiers.\n"
               "Set CRL_THREADS to cap worker threads."};
  app.require_subcommand(1);

  Flags flags;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--format", flags.format, "Output format")->check(CLI::IsMember({"text", "json"}));
    sub->add_option("--out", flags.out, "Output directory");
    sub->add_option("--seed", flags.seed, "Seed override");
  };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset from a DNF or leakage spec");
  synth->add_option("--config", flags.config, "Spec JSON")->required();
  add_common(synth);

  auto* train = app.add_subcommand("train", "Train from a run config");
  train->add_option("--config", flags.config, "Run config JSON")->required();
  train->add_option("--data", flags.data, "Training CSV (overrides data.train)");
  add_common(train);

  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a dataset");
  eval->add_option("--checkpoint", flags.checkpoint, "Checkpoint JSON")->required();
  eval->add_option("--data", flags.data, "Dataset CSV")->required();
  add_common(eval);

  auto* rules = app.add_subcommand("rules", "Extract the rule set of a checkpoint");
  rules->add_option("--checkpoint", flags.checkpoint, "Checkpoint JSON")->required();
  rules->add_option("--data", flags.data, "Dataset CSV for fired counts");
  add_common(rules);

  auto* explain = app.add_subcommand("explain", "Explain the decision for one record");
  explain->add_option("--checkpoint", flags.checkpoint, "Checkpoint JSON")->required();
  explain->add_option("--data", flags.data, "Dataset CSV")->required();
  explain->add_option("--id", flags.id, "Record id")->required();
  explain->add_option("--rules", flags.rules, "Rules JSON previously exported for this checkpoint");
  add_common(explain);

  auto* gradcheck = app.add_subcommand("gradcheck", "Check analytic gradients against finite differences");
  add_common(gradcheck);

  auto* leakage = app.add_subcommand("leakage", "In-domain vs OOD comparison on a concept-leakage pair");
  leakage->add_option("--config", flags.config, "Leakage config JSON (defaults when omitted)");
  add_common(leakage);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? crl::exit_ok : crl::exit_usage;
  }

  const CLI::App* sub = app.get_subcommands().front();
  crl::CommandOptions options;
  options.config = given(sub, "--config", flags.config);
  options.out = given(sub, "--out", flags.out);
  options.checkpoint = given(sub, "--checkpoint", flags.checkpoint);
  options.data = given(sub, "--data", flags.data);
  options.rules = given(sub, "--rules", flags.rules);
  options.id = given(sub, "--id", flags.id);
  if (given(sub, "--seed", "")) options.seed = flags.seed;
  options.format = crl::output_format_from_string(flags.format);

  return crl::run_command(sub->get_name(), options, std::cout, std::cerr);
}
