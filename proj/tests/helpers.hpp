#pragma once

#include <filesystem>
#include <string>

#include "bset/defence.hpp"
#include "bset/imageset.hpp"
#include "bset/network.hpp"

namespace testing {

// Logits (w0 . x + b0, w1 . x + b1) over a vector input, then softmax.
inline bset::Model linear_model(std::vector<double> w0, std::vector<double> w1, double b0 = 0.0,
                                double b1 = 0.0) {
  const std::size_t n = w0.size();
  bset::Architecture arch{{n}, {bset::LayerSpec::dense(2), bset::LayerSpec::softmax()}};
  std::vector<double> w = w0;
  w.insert(w.end(), w1.begin(), w1.end());
  bset::ModelParameters params;
  params.add("layer0.weight", bset::Tensor({2, n}, w));
  params.add("layer0.bias", bset::Tensor({2}, {b0, b1}));
  return bset::Model::from_parameters(arch, params);
}

// Fresh empty directory under the system temp directory.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("bset-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Small normalised synthetic corpus and a desk CNN trained on it.
struct TrainedFixture {
  bset::Corpus corpus;
  bset::Model model;
};

inline bset::SyntheticSpec small_synthetic(std::uint64_t seed) {
  bset::SyntheticSpec spec;
  spec.sets_per_gallery = 5;
  spec.images_per_set = 10;
  spec.train_fraction = 0.6;
  spec.seed = seed;
  return spec;
}

inline TrainedFixture trained_synthetic(std::uint64_t seed = 11, std::size_t epochs = 15) {
  TrainedFixture f;
  f.corpus = bset::normalize_corpus(bset::synthesize_corpus(small_synthetic(seed)));
  bset::TrainConfig tc;
  tc.learning_rate = 2e-3;
  tc.batch_size = 32;
  bset::SeededRng rng(seed + 1);
  f.model = bset::train_classifier(bset::desk_cnn({1, 16, 16}, 10),
                                   bset::flatten_training_pool(f.corpus).clean, epochs, tc, rng)
                .model;
  return f;
}

}  // namespace testing
