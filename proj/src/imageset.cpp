#include "bset/imageset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "bset/error.hpp"
#include "bset/hash.hpp"
#include "bset/rng.hpp"

namespace bset {

void validate_image_set(const ImageSet& set) {
  if (set.images.empty()) throw ArgumentError("image set is empty");
  const Shape& shape = set.images.front().pixels.shape();
  for (const auto& img : set.images) {
    if (img.pixels.shape() != shape) {
      throw ArgumentError("image " + img.id + " has shape " + shape_string(img.pixels.shape()) +
                          ", set uses " + shape_string(shape));
    }
    for (double v : img.pixels.values()) {
      if (!std::isfinite(v) || v < 0.0) throw ArgumentError("image " + img.id + " has an invalid pixel value");
    }
  }
}

namespace {

void validate_side(const std::vector<Gallery>& side, const char* name, std::size_t classes) {
  for (const auto& g : side) {
    if (g.label >= classes) throw ArgumentError(std::string(name) + " gallery label out of range");
    if (g.sets.empty()) {
      throw ArgumentError(std::string(name) + " gallery " + std::to_string(g.label) + " has no image sets");
    }
    for (const auto& s : g.sets) {
      if (s.gallery_label != g.label) {
        throw ArgumentError(std::string(name) + " gallery " + std::to_string(g.label) +
                            " holds a set labelled " + std::to_string(s.gallery_label));
      }
      validate_image_set(s);
    }
  }
}

std::vector<std::size_t> labels_of(const std::vector<Gallery>& side) {
  std::vector<std::size_t> out;
  for (const auto& g : side) out.push_back(g.label);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

void validate_corpus(const Corpus& corpus) {
  if (corpus.class_count < 2) throw ArgumentError("corpus needs at least two classes");
  validate_side(corpus.train, "train", corpus.class_count);
  validate_side(corpus.test, "test", corpus.class_count);
  if (labels_of(corpus.train) != labels_of(corpus.test)) {
    throw ArgumentError("train and test galleries cover different labels");
  }
}

std::size_t image_count(const std::vector<Gallery>& galleries) {
  std::size_t n = 0;
  for (const auto& g : galleries) {
    for (const auto& s : g.sets) n += s.images.size();
  }
  return n;
}

std::size_t set_count(const std::vector<Gallery>& galleries) {
  std::size_t n = 0;
  for (const auto& g : galleries) n += g.sets.size();
  return n;
}

Shape image_shape(const Corpus& corpus) {
  for (const auto* side : {&corpus.train, &corpus.test}) {
    for (const auto& g : *side) {
      for (const auto& s : g.sets) {
        if (!s.images.empty()) return s.images.front().pixels.shape();
      }
    }
  }
  throw ArgumentError("corpus holds no images");
}

namespace {

std::uint32_t read_be32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError(what + " truncated in header");
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  out.write(b, 4);
}

std::vector<std::uint8_t> read_payload(std::istream& in, std::size_t n, const std::string& what) {
  std::vector<std::uint8_t> out(n);
  in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw FormatError(what + " truncated: expected " + std::to_string(n) + " bytes of data, found " +
                      std::to_string(in.gcount()));
  }
  return out;
}

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

void split_into_corpus(std::vector<std::vector<Image>> by_label, std::size_t set_size,
                       double train_fraction, Corpus& corpus) {
  if (set_size == 0) throw ArgumentError("set size must be at least 1");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ArgumentError("train fraction must lie strictly between 0 and 1");
  }
  corpus.class_count = by_label.size();
  for (std::size_t label = 0; label < by_label.size(); ++label) {
    auto& images = by_label[label];
    if (images.empty()) continue;
    if (images.size() < set_size) {
      throw ArgumentError("set size " + std::to_string(set_size) + " exceeds gallery population (label " +
                          std::to_string(label) + " has " + std::to_string(images.size()) + " images)");
    }
    const std::size_t sets = images.size() / set_size;
    if (sets < 2) {
      throw ArgumentError("gallery " + std::to_string(label) + " yields only one set of " +
                          std::to_string(set_size) + "; need one for training and one for testing");
    }
    auto train_sets = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(sets)));
    train_sets = std::clamp<std::size_t>(train_sets, 1, sets - 1);
    Gallery train{label, {}}, test{label, {}};
    for (std::size_t s = 0; s < sets; ++s) {
      ImageSet set{{}, label};
      for (std::size_t i = 0; i < set_size; ++i) set.images.push_back(std::move(images[s * set_size + i]));
      (s < train_sets ? train : test).sets.push_back(std::move(set));
    }
    corpus.train.push_back(std::move(train));
    corpus.test.push_back(std::move(test));
  }
}

}  // namespace

Corpus load_idx_corpus(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                       std::size_t set_size, double train_fraction, const IdxOptions& options) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw FormatError("cannot open images file " + images_path.string());
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw FormatError("cannot open labels file " + labels_path.string());

  const auto img_magic = read_be32(img, "images file");
  if (img_magic != kIdxImagesMagic) {
    throw FormatError("images file has bad magic 0x" + [&] {
      char buf[16];
      std::snprintf(buf, sizeof buf, "%08x", img_magic);
      return std::string(buf);
    }() + " (expected 0x00000803)");
  }
  const auto lab_magic = read_be32(lab, "labels file");
  if (lab_magic != kIdxLabelsMagic) {
    throw FormatError("labels file has bad magic 0x" + [&] {
      char buf[16];
      std::snprintf(buf, sizeof buf, "%08x", lab_magic);
      return std::string(buf);
    }() + " (expected 0x00000801)");
  }
  const std::size_t count = read_be32(img, "images file");
  const std::size_t rows = read_be32(img, "images file");
  const std::size_t cols = read_be32(img, "images file");
  const std::size_t label_count = read_be32(lab, "labels file");
  if (label_count != count) {
    throw FormatError("label count " + std::to_string(label_count) + " does not match image count " +
                      std::to_string(count));
  }
  if (rows == 0 || cols == 0 || count == 0) throw FormatError("images file declares an empty dimension");
  const auto pixels = read_payload(img, count * rows * cols, "images file");
  const auto labels = read_payload(lab, count, "labels file");

  const std::size_t classes = static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end())) + 1;
  std::vector<std::vector<Image>> by_label(classes);
  for (std::size_t i = 0; i < count; ++i) {
    Tensor t({1, rows, cols});
    for (std::size_t p = 0; p < rows * cols; ++p) t[p] = pixels[i * rows * cols + p];
    by_label[labels[i]].push_back({std::move(t), "idx:" + std::to_string(i)});
  }
  if (options.shuffle_seed) {
    for (std::size_t label = 0; label < classes; ++label) {
      SeededRng rng(derive_seed(*options.shuffle_seed, {label}));
      auto& v = by_label[label];
      for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
    }
  }
  Corpus corpus;
  split_into_corpus(std::move(by_label), set_size, train_fraction, corpus);
  validate_corpus(corpus);
  return corpus;
}

void write_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
               std::size_t rows, std::size_t cols, const std::vector<std::uint8_t>& pixels,
               const std::vector<std::uint8_t>& labels) {
  if (pixels.size() != labels.size() * rows * cols) throw ArgumentError("write_idx: pixel count mismatch");
  std::ofstream img(images_path, std::ios::binary | std::ios::trunc);
  write_be32(img, kIdxImagesMagic);
  write_be32(img, static_cast<std::uint32_t>(labels.size()));
  write_be32(img, static_cast<std::uint32_t>(rows));
  write_be32(img, static_cast<std::uint32_t>(cols));
  img.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  std::ofstream lab(labels_path, std::ios::binary | std::ios::trunc);
  write_be32(lab, kIdxLabelsMagic);
  write_be32(lab, static_cast<std::uint32_t>(labels.size()));
  lab.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
  if (!img || !lab) throw Error("failed to write IDX files");
}

Corpus synthesize_corpus(const SyntheticSpec& spec) {
  if (spec.class_count < 2 || spec.sets_per_gallery < 2 || spec.images_per_set < 1) {
    throw ArgumentError("synthetic corpus needs >= 2 classes, >= 2 sets per gallery and >= 1 image per set");
  }
  if (spec.image_shape.size() != 3 || shape_size(spec.image_shape) == 0) {
    throw ShapeError("synthetic image shape must be a non-empty (channels, height, width)");
  }
  if (!(spec.noise >= 0.0) || !std::isfinite(spec.noise)) throw ArgumentError("noise must be >= 0");
  const std::size_t ch = spec.image_shape[0], h = spec.image_shape[1], w = spec.image_shape[2];
  const double side = static_cast<double>(std::min(h, w));
  const double radius = 0.3 * side;
  const double sigma = 0.12 * side;
  const double cy0 = 0.5 * static_cast<double>(h - 1), cx0 = 0.5 * static_cast<double>(w - 1);

  std::vector<std::vector<Image>> by_label(spec.class_count);
  for (std::size_t k = 0; k < spec.class_count; ++k) {
    SeededRng rng(derive_seed(spec.seed, {k}));
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(spec.class_count);
    const std::size_t n = spec.sets_per_gallery * spec.images_per_set;
    for (std::size_t i = 0; i < n; ++i) {
      const double cy = cy0 + radius * std::sin(angle) + (rng.uniform() - 0.5);
      const double cx = cx0 + radius * std::cos(angle) + (rng.uniform() - 0.5);
      const double amplitude = 0.8 + 0.4 * rng.uniform();
      Tensor t(spec.image_shape);
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
          const double blob = amplitude * std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
          for (std::size_t c = 0; c < ch; ++c) {
            const double v = blob + (spec.noise > 0.0 ? spec.noise * rng.normal() : 0.0);
            t[(c * h + y) * w + x] = std::max(0.0, v);
          }
        }
      }
      by_label[k].push_back({std::move(t), "syn:" + std::to_string(k) + ":" + std::to_string(i)});
    }
  }
  Corpus corpus;
  split_into_corpus(std::move(by_label), spec.images_per_set, spec.train_fraction, corpus);
  validate_corpus(corpus);
  return corpus;
}

ImageSet normalize_set(const ImageSet& set) {
  validate_image_set(set);
  double mx = 0.0;
  for (const auto& img : set.images) mx = std::max(mx, img.pixels.max_value());
  if (!(mx > 0.0)) throw ArgumentError("degenerate set: zero maximum");
  ImageSet out = set;
  for (auto& img : out.images) {
    for (auto& v : img.pixels.values()) v /= mx;
  }
  return out;
}

Corpus normalize_corpus(const Corpus& corpus) {
  Corpus out = corpus;
  for (auto* side : {&out.train, &out.test}) {
    for (auto& g : *side) {
      for (auto& s : g.sets) s = normalize_set(s);
    }
  }
  return out;
}

Image resize_nearest(const Image& image, std::size_t height, std::size_t width) {
  const Shape& s = image.pixels.shape();
  if (s.size() != 3) throw ShapeError("resize expects a (channels, height, width) image");
  if (height == 0 || width == 0) throw ShapeError("resize target must be non-empty");
  Tensor out({s[0], height, width});
  for (std::size_t c = 0; c < s[0]; ++c) {
    for (std::size_t y = 0; y < height; ++y) {
      const std::size_t sy = y * s[1] / height;
      for (std::size_t x = 0; x < width; ++x) {
        const std::size_t sx = x * s[2] / width;
        out[(c * height + y) * width + x] = image.pixels[(c * s[1] + sy) * s[2] + sx];
      }
    }
  }
  return {std::move(out), image.id};
}

Corpus resize_corpus(const Corpus& corpus, std::size_t height, std::size_t width) {
  Corpus out = corpus;
  for (auto* side : {&out.train, &out.test}) {
    for (auto& g : *side) {
      for (auto& s : g.sets) {
        for (auto& img : s.images) img = resize_nearest(img, height, width);
      }
    }
  }
  return out;
}

TrainingPool flatten_training_pool(const Corpus& corpus) {
  TrainingPool pool;
  for (const auto& g : corpus.train) {
    for (const auto& s : g.sets) {
      for (const auto& img : s.images) pool.clean.push_back({img, g.label});
    }
  }
  return pool;
}

namespace {

void hash_side(Sha256& h, const std::vector<Gallery>& side) {
  h.update_u64(side.size());
  for (const auto& g : side) {
    h.update_u64(g.label).update_u64(g.sets.size());
    for (const auto& s : g.sets) {
      h.update_u64(s.gallery_label).update_u64(s.images.size());
      for (const auto& img : s.images) {
        h.update_u64(img.pixels.rank());
        for (auto d : img.pixels.shape()) h.update_u64(d);
        for (double v : img.pixels.values()) h.update_f64(v);
      }
    }
  }
}

}  // namespace

std::string galleries_hash(const std::vector<Gallery>& galleries) {
  Sha256 h;
  hash_side(h, galleries);
  return h.hex();
}

std::string corpus_hash(const Corpus& corpus) {
  Sha256 h;
  h.update_u64(corpus.class_count);
  hash_side(h, corpus.train);
  hash_side(h, corpus.test);
  return h.hex();
}

}  // namespace bset
