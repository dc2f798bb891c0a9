#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "bset/config.hpp"
#include "bset/defence.hpp"

namespace bset {

inline constexpr int kResultsFormatVersion = 1;

// Version string compiled into manifests (git describe when available).
const char* artifact_version();

// How far run_experiment goes. Later stages reuse the checkpoints and
// perturbation cache of earlier ones when their inputs are unchanged.
enum class Stage { train, attack, evaluate };

struct RunOutputs {
  std::filesystem::path output_dir;
  std::filesystem::path baseline_checkpoint;
  std::optional<std::filesystem::path> defended_checkpoint;
  std::filesystem::path cache_dir;
  std::filesystem::path results;   // empty before the evaluate stage
  std::filesystem::path manifest;
  std::string manifest_hash;
  std::string results_sha256;
  std::vector<ResultRow> rows;
  std::vector<double> single_shot;         // per ratio, undefended model
  std::vector<double> single_shot_defended;
  double clean_accuracy = 0.0;             // deterministic per-image, baseline
  bool reused_checkpoints = false;
};

Corpus build_corpus(const ExperimentConfig& config);
Architecture build_architecture(const ExperimentConfig& config, const Shape& input, std::size_t classes);

// train -> attack -> mix -> MC passes -> vote. Writes under
// resolve_output_dir(config):
//   baseline.bset, defended.bset    checkpoints
//   cache/                          perturbed corpora
//   results.csv                     rows, single-shot accuracy, vote audit
//   manifest.txt                    config echo, version, wall time
// On failure everything written by the run is moved to failed-<timestamp>/
// and the error is rethrown.
// Progress lines go to `log` when given.
RunOutputs run_experiment(const ExperimentConfig& config, Stage stage = Stage::evaluate,
                          std::ostream* log = nullptr);

struct Manifest {
  std::string version;
  double wall_time_seconds = 0.0;
  std::string results_sha256;
  std::string config_text;
};

std::string render_manifest(const Manifest& manifest);
Manifest parse_manifest(const std::string& text);
// SHA-256 over version and config. Wall time, the results hash and the
// output directory are excluded.
std::string manifest_hash(const Manifest& manifest);

struct ReproduceOutcome {
  RunOutputs outputs;
  std::string expected_sha256;
  bool matches = false;
};

// Re-runs the manifest's config (optionally into another directory) and
// compares the new results hash against the recorded one.
ReproduceOutcome reproduce(const std::filesystem::path& manifest_path,
                           const std::optional<std::filesystem::path>& output_dir = std::nullopt,
                           std::ostream* log = nullptr);

}  // namespace bset
