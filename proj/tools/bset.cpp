// bset: command-line front end for the image-set defence experiments.
//
//   bset train     [config] [--section.key value ...]
//   bset attack    [config] [--section.key value ...]
//   bset evaluate  [config] [--section.key value ...]
//   bset report    results.csv [results.csv ...] [--csv out.csv]
//   bset reproduce manifest.txt [--output-dir dir]
//
// Exit status: 0 success, 1 invalid configuration or arguments, 2 runtime failure.

#include <algorithm>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bset/config.hpp"
#include "bset/error.hpp"
#include "bset/experiment.hpp"
#include "bset/report.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kRuntime = 2;

// Pulls "--section.key value" and "--section.key=value" out of argv; the
// rest is left for the regular parser.
bool is_override(const std::string& arg) {
  if (arg.rfind("--", 0) != 0) return false;
  const auto dot = arg.find('.');
  return dot != std::string::npos && dot < arg.find('=');
}

bset::ConfigOverrides split_overrides(int argc, char** argv, std::vector<std::string>& rest) {
  bset::ConfigOverrides out;
  std::vector<std::string> problems;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (!is_override(arg)) {
      rest.push_back(arg);
      continue;
    }
    const std::string body = arg.substr(2);
    if (const auto eq = body.find('='); eq != std::string::npos) {
      out.emplace_back(body.substr(0, eq), body.substr(eq + 1));
    } else if (i + 1 < argc) {
      out.emplace_back(body, argv[++i]);
    } else {
      problems.push_back("option '" + arg + "' needs a value");
    }
  }
  if (!problems.empty()) throw bset::ConfigError(problems);
  return out;
}

bset::ExperimentConfig load_config(const std::string& path, const bset::ConfigOverrides& overrides) {
  if (path.empty()) {
    auto config = bset::parse_config("", overrides);
    bset::check_config(config);
    return config;
  }
  return bset::validate_config(path, overrides);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian image-set defence against adversarial attacks", "bset"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress progress output");

  std::string config_path;
  auto add_run_command = [&](const char* name, const char* help) {
    auto* cmd = app.add_subcommand(name, help);
    cmd->add_option("config", config_path, "Experiment config (key = value with [sections])");
    cmd->footer("Any config key can be overridden with --section.key value, e.g. --attack.epsilon 0.3");
    return cmd;
  };
  auto* train = add_run_command("train", "Train the baseline and, if enabled, the adversarially trained model");
  auto* attack = add_run_command("attack", "Train (or reuse checkpoints) and perturb the test corpus");
  auto* evaluate = add_run_command("evaluate", "Run the full pipeline and write results and manifest");

  auto* report = app.add_subcommand("report", "Render results files as a table");
  std::vector<std::string> results_files;
  std::string csv_out;
  report->add_option("results", results_files, "Results files")->required()->check(CLI::ExistingFile);
  report->add_option("--csv", csv_out, "Also write the merged rows as CSV to this file");

  auto* repro = app.add_subcommand("reproduce", "Re-run a manifest and check the results hash");
  std::string manifest_path, repro_dir;
  repro->add_option("manifest", manifest_path, "manifest.txt of an earlier run")->required()->check(CLI::ExistingFile);
  repro->add_option("--output-dir", repro_dir, "Write into this directory instead of the recorded one");

  bset::ConfigOverrides overrides;
  try {
    std::vector<std::string> rest;
    overrides = split_overrides(argc, argv, rest);
    std::reverse(rest.begin(), rest.end());
    app.parse(rest);
  } catch (const bset::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }

  std::ostream* log = quiet ? nullptr : &std::cerr;
  try {
    if (!overrides.empty() && (report->parsed() || repro->parsed())) {
      throw bset::ConfigError({"config overrides only apply to train, attack and evaluate"});
    }
    if (report->parsed()) {
      std::vector<std::filesystem::path> paths(results_files.begin(), results_files.end());
      const auto r = bset::render_report(paths);
      std::cout << r.text;
      if (!csv_out.empty()) {
        std::ofstream out(csv_out);
        if (!(out << r.csv)) throw bset::Error("cannot write " + csv_out);
      }
      return kOk;
    }
    if (repro->parsed()) {
      std::optional<std::filesystem::path> dir;
      if (!repro_dir.empty()) dir = repro_dir;
      const auto outcome = bset::reproduce(manifest_path, dir, log);
      std::cout << "results " << outcome.outputs.results.string() << "\n"
                << "sha256 " << outcome.outputs.results_sha256 << "\n"
                << "expected " << outcome.expected_sha256 << "\n";
      if (!outcome.matches) {
        std::cerr << "error: reproduced results differ from the manifest\n";
        return kRuntime;
      }
      std::cout << "reproduced: identical\n";
      return kOk;
    }

    CLI::App* cmd = train->parsed() ? train : attack->parsed() ? attack : evaluate;
    const auto config = load_config(config_path, overrides);
    const bset::Stage stage = cmd == train    ? bset::Stage::train
                              : cmd == attack ? bset::Stage::attack
                                              : bset::Stage::evaluate;
    const auto out = bset::run_experiment(config, stage, log);
    if (stage == bset::Stage::evaluate) {
      bset::ResultsFile file = bset::load_results(out.results);
      std::cout << bset::render_report(std::vector<bset::ResultsFile>{file}).text;
      std::cout << "\nresults  " << out.results.string() << "\nmanifest " << out.manifest.string() << "\n";
    } else {
      std::cout << "checkpoints in " << out.output_dir.string() << "\n";
    }
    return kOk;
  } catch (const bset::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
}
