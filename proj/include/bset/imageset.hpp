#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bset/tensor.hpp"

namespace bset {

// Pixels are (channels, height, width); raw [0, 255] or normalised [0, 1].
struct Image {
  Tensor pixels;
  std::string id;
};

// d >= 1 images of one gallery, all of the same shape.
struct ImageSet {
  std::vector<Image> images;
  std::size_t gallery_label = 0;
};

// All image sets of one class.
struct Gallery {
  std::size_t label = 0;
  std::vector<ImageSet> sets;
};

struct Corpus {
  std::vector<Gallery> train;
  std::vector<Gallery> test;
  std::size_t class_count = 0;
};

struct LabeledImage {
  Image image;
  std::size_t label = 0;
};

// The flattened training sets; `perturbed`, once attacks have run, is
// index-aligned with `clean`.
struct TrainingPool {
  std::vector<LabeledImage> clean;
  std::optional<std::vector<LabeledImage>> perturbed;
};

// Throws ArgumentError on any broken structural invariant.
void validate_image_set(const ImageSet& set);
void validate_corpus(const Corpus& corpus);

std::size_t image_count(const std::vector<Gallery>& galleries);
std::size_t set_count(const std::vector<Gallery>& galleries);
Shape image_shape(const Corpus& corpus);

struct IdxOptions {
  // Shuffle each label's images before grouping into sets. Off by default:
  // sets are consecutive same-label images in file order.
  std::optional<std::uint64_t> shuffle_seed;
};

// Reads an IDX image/label pair, groups images by label into galleries of
// consecutive sets of `set_size` (a trailing partial set is dropped) and
// splits each gallery's sets into train and test by `train_fraction`.
Corpus load_idx_corpus(const std::filesystem::path& images_path,
                       const std::filesystem::path& labels_path, std::size_t set_size,
                       double train_fraction, const IdxOptions& options = {});

// Writes an IDX pair (uint8 pixels, one channel). Used by tests and tools.
void write_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
               std::size_t rows, std::size_t cols, const std::vector<std::uint8_t>& pixels,
               const std::vector<std::uint8_t>& labels);

struct SyntheticSpec {
  std::size_t class_count = 10;
  std::size_t sets_per_gallery = 10;
  std::size_t images_per_set = 20;
  Shape image_shape{1, 16, 16};
  double noise = 0.1;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

// Class k is a Gaussian blob at a class-specific position on a ring, with
// small per-image jitter in position and amplitude plus pixel noise.
Corpus synthesize_corpus(const SyntheticSpec& spec);

// Divides every pixel by the largest pixel value found across the whole set.
ImageSet normalize_set(const ImageSet& set);
Corpus normalize_corpus(const Corpus& corpus);

// Nearest-neighbour resampling of every image to height x width.
Image resize_nearest(const Image& image, std::size_t height, std::size_t width);
Corpus resize_corpus(const Corpus& corpus, std::size_t height, std::size_t width);

// Training sets flattened in (gallery, set, image) order.
TrainingPool flatten_training_pool(const Corpus& corpus);

// SHA-256 over structure and pixel values (image ids excluded).
std::string corpus_hash(const Corpus& corpus);
std::string galleries_hash(const std::vector<Gallery>& galleries);

}  // namespace bset
