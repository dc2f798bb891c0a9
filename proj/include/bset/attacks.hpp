#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bset/imageset.hpp"
#include "bset/network.hpp"

namespace bset {

enum class AttackKind { fgsm, pgd, deepfool };

const char* attack_name(AttackKind kind);  // "FGSM", "PGD", "DeepFool"
std::optional<AttackKind> parse_attack(std::string_view name);

struct AttackConfig {
  AttackKind kind = AttackKind::fgsm;
  double epsilon = 0.05;          // L-infinity radius on the [0, 1] pixel scale
  double pgd_step = 0.0;          // 0 selects epsilon / 4
  std::size_t pgd_steps = 10;
  std::size_t deepfool_max_iter = 50;
  double deepfool_overshoot = 0.02;

  // Throws ArgumentError when a field is negative or non-finite.
  void validate() const;
  double pgd_step_size() const { return pgd_step > 0.0 ? pgd_step : epsilon / 4.0; }
};

struct AdversarialRecord {
  Image original;
  Image adversarial;
  std::size_t source_label = 0;
  std::string model_fingerprint;
  AttackConfig config;
  bool flipped = false;           // prediction differs from the clean one
  std::size_t iterations = 0;     // gradient evaluations used
};

// Called after every PGD step with the step number (1-based) and iterate.
using PgdObserver = std::function<void(std::size_t, const Tensor&)>;

// All attacks differentiate the deterministic-mode network. `fingerprint`
// is stored on the record verbatim; pass model_fingerprint(model) or leave
// it empty.
AdversarialRecord fgsm(const Model& model, const Image& image, std::size_t label, double epsilon,
                       std::string fingerprint = {});
AdversarialRecord pgd(const Model& model, const Image& image, std::size_t label,
                      const AttackConfig& config, std::string fingerprint = {},
                      const PgdObserver& observer = {});
AdversarialRecord deepfool(const Model& model, const Image& image, const AttackConfig& config,
                           std::string fingerprint = {});

AdversarialRecord attack_image(const Model& model, const Image& image, std::size_t label,
                               const AttackConfig& config, std::string fingerprint = {});

struct PerturbedGalleries {
  std::vector<Gallery> galleries;           // same structure and order as the input
  std::string model_fingerprint;
  std::size_t flipped = 0;                  // images whose prediction changed
  std::vector<AdversarialRecord> records;   // only filled when requested
};

// Replaces every image by its adversarial counterpart against its true
// gallery label. Images are attacked independently (in parallel when the
// parallel backend is active) and merged back in input order.
PerturbedGalleries perturb_galleries(const Model& model, const std::vector<Gallery>& galleries,
                                     const AttackConfig& config, bool keep_records = false);

// On-disk cache of perturbed galleries: <root>/<key>/manifest.txt plus
// <root>/<key>/images.bset (tensor archive, images in gallery/set/image order).
std::string perturbation_cache_key(const std::string& source_hash, const std::string& model_fingerprint,
                                   const AttackConfig& config);

void store_perturbation(const std::filesystem::path& root, const std::string& source_hash,
                        const AttackConfig& config, const PerturbedGalleries& perturbed);

// Rebuilds cached galleries using `source` for structure; nullopt if absent.
std::optional<PerturbedGalleries> load_perturbation(const std::filesystem::path& root,
                                                    const std::string& source_hash,
                                                    const std::string& model_fingerprint,
                                                    const AttackConfig& config,
                                                    const std::vector<Gallery>& source);

// Cache lookup, generating and storing on a miss.
PerturbedGalleries perturb_galleries_cached(const Model& model, const std::vector<Gallery>& galleries,
                                            const AttackConfig& config,
                                            const std::filesystem::path& cache_root);

}  // namespace bset
