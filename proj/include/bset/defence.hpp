#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bset/attacks.hpp"
#include "bset/imageset.hpp"
#include "bset/network.hpp"
#include "bset/optimizer.hpp"
#include "bset/posterior.hpp"
#include "bset/voting.hpp"

namespace bset {

struct TrainConfig {
  std::size_t epochs = 20;                // clean training
  std::size_t adversarial_epochs = 20;    // training on the clean + perturbed union
  double learning_rate = 1e-4;
  std::size_t batch_size = 64;
  double early_stop_accuracy = 0.995;     // stop once an epoch's training accuracy exceeds this
  AdamConfig adam;
};

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct TrainingResult {
  Model model;
  std::vector<EpochLog> log;
};

// Mini-batch Adam on cross-entropy with dropout active. The sample order is
// reshuffled from `rng` every epoch. Throws NumericError naming the epoch if
// the loss stops being finite.
TrainingResult train_classifier(const Architecture& arch, const std::vector<LabeledImage>& pool,
                                std::size_t epochs, const TrainConfig& config, SeededRng& rng);

// Interleaves clean and perturbed samples: c0, p0, c1, p1, ...
std::vector<LabeledImage> interleave_union(const TrainingPool& pool);

struct AdversarialTrainingResult {
  TrainingResult baseline;    // clean-trained, also the attack source
  TrainingResult defended;    // trained on the clean + perturbed union
  std::size_t union_size = 0;
  std::size_t perturbed_flipped = 0;
};

// Trains a clean baseline (or reuses `baseline`), perturbs every training
// image against it, then trains a fresh model on the interleaved union.
AdversarialTrainingResult adversarial_train(const Corpus& corpus, const Architecture& arch,
                                            const AttackConfig& attack, const TrainConfig& config,
                                            SeededRng& rng, const TrainingResult* baseline = nullptr,
                                            const std::optional<std::filesystem::path>& cache_root = std::nullopt);

struct McConfig {
  std::size_t passes = 50;
  std::uint64_t seed = 0;

  void validate() const;
};

// A test set where some positions were swapped for their perturbed twins.
struct MixedTestSet {
  std::vector<Image> images;
  std::vector<bool> perturbed_mask;
  double ratio = 0.0;
  std::size_t gallery_label = 0;
};

// round_half_up(ratio * n).
std::size_t perturbed_count(double ratio, std::size_t n);

// Draws perturbed_count(ratio, n) distinct positions from `rng` and takes
// those from `perturbed`, the rest from `clean`; order is preserved.
MixedTestSet mix_test_set(const ImageSet& clean, const ImageSet& perturbed, double ratio, SeededRng& rng);

// T stochastic passes over the set. Pass t draws its dropout masks from
// derive_seed(mc.seed, {gallery, set, t}); the layers before the first
// dropout are evaluated once and shared by all passes.
McPosterior mc_predict_set(const Model& model, std::span<const Image> images, const McConfig& mc,
                           std::size_t gallery_index, std::size_t set_index);
McPosterior mc_predict_set(const Model& model, const ImageSet& set, const McConfig& mc,
                           std::size_t gallery_index = 0, std::size_t set_index = 0);
McPosterior mc_predict_set(const Model& model, const MixedTestSet& set, const McConfig& mc,
                           std::size_t gallery_index = 0, std::size_t set_index = 0);

struct ResultRow {
  std::string model;
  std::string attack;
  bool adv_train = false;
  double epsilon = 0.0;
  double ratio = 0.0;
  double sv = 0.0;  // percentages
  double mv = 0.0;
  double ewv = 0.0;
};

struct SetAudit {
  double ratio = 0.0;
  std::size_t gallery = 0;
  std::size_t set = 0;
  std::size_t truth = 0;
  VoteOutcome outcome;
};

struct DefenceEvaluation {
  std::vector<ResultRow> rows;             // one per ratio
  std::vector<double> single_shot;         // per ratio, per-image accuracy in percent
  std::vector<SetAudit> audit;             // ratio-major, then gallery, then set
};

struct RowTag {
  std::string model = "desk-cnn";
  std::string attack = "FGSM";
  bool adv_train = false;
  double epsilon = 0.0;
};

// For each ratio: mixes every test set with its perturbed twin, runs
// mc_predict_set and applies all three votes. Accuracy is the share of sets
// whose vote equals their gallery label. Sets are processed in parallel and
// merged by (gallery, set).
DefenceEvaluation evaluate_defence(const Model& model, const std::vector<Gallery>& clean_test,
                                   const std::vector<Gallery>& perturbed_test,
                                   const std::vector<double>& ratios, const McConfig& mc,
                                   const VotingConfig& voting, const RowTag& tag);

// Per-image accuracy (percent) of the MC-mean argmax over every image.
double single_shot_eval(const Model& model, const std::vector<Gallery>& galleries, const McConfig& mc);

// Deterministic-mode per-image accuracy (percent).
double deterministic_accuracy(const Model& model, const std::vector<Gallery>& galleries);

}  // namespace bset
