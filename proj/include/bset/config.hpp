#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bset/attacks.hpp"
#include "bset/defence.hpp"
#include "bset/voting.hpp"

namespace bset {

enum class CorpusSource { synthetic, idx, mnist_subset };

const char* corpus_source_name(CorpusSource source);

struct CorpusConfig {
  CorpusSource source = CorpusSource::synthetic;
  // idx and mnist-subset
  std::filesystem::path images;
  std::filesystem::path labels;
  std::size_t set_size = 25;
  std::optional<std::uint64_t> shuffle_seed;
  // synthetic
  std::size_t classes = 10;
  std::size_t sets_per_gallery = 10;
  std::size_t images_per_set = 20;
  std::size_t image_size = 16;
  double noise = 0.1;
  // all sources
  double train_fraction = 0.8;
  std::size_t resize = 0;  // 0 keeps the native size
};

enum class AttackSource { baseline, defended };

struct ExperimentConfig {
  CorpusConfig corpus;
  std::string architecture = "desk-cnn";
  double dropout = 0.5;
  std::size_t hidden = 64;
  TrainConfig train;
  AttackConfig attack;
  AttackSource attack_source = AttackSource::baseline;
  bool adversarial_training = true;
  std::vector<double> ratios{0.0, 0.5, 0.8, 1.0};
  std::size_t passes = 50;
  VotingConfig voting;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "runs/default";
};

// "section.key" -> value, applied after the file.
using ConfigOverrides = std::vector<std::pair<std::string, std::string>>;

// Directory holding the bundled MNIST subset.
std::filesystem::path default_data_dir();

// Parses `key = value` lines grouped under [section] headers. Blank lines
// and lines starting with # or ; are ignored. Every unset key keeps its
// default. Throws ConfigError listing every problem found.
ExperimentConfig parse_config(std::string_view text, const ConfigOverrides& overrides = {});

// parse_config on the file's contents plus the checks that touch the file
// system: referenced files exist and the output directory is writable.
// Relative corpus paths resolve against the config file's directory.
ExperimentConfig validate_config(const std::filesystem::path& path, const ConfigOverrides& overrides = {});

// Same checks for an in-memory config.
void check_config(const ExperimentConfig& config);

// Canonical text form listing every key; parsing it back yields the same config.
std::string render_config(const ExperimentConfig& config);

// output_dir, placed under $BSET_OUTPUT_ROOT when relative and the variable is set.
std::filesystem::path resolve_output_dir(const ExperimentConfig& config);

}  // namespace bset
