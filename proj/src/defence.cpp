#include "bset/defence.hpp"

#include <cmath>

#include "bset/error.hpp"
#include "bset/parallel.hpp"

namespace bset {

namespace {

Tensor stack_images(std::span<const Image> images) {
  const Shape& shape = images.front().pixels.shape();
  Shape batch{images.size()};
  batch.insert(batch.end(), shape.begin(), shape.end());
  Tensor out(batch);
  const std::size_t per = shape_size(shape);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].pixels.shape() != shape) throw ShapeError("images in a batch must share one shape");
    std::copy(images[i].pixels.values().begin(), images[i].pixels.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return out;
}

constexpr std::uint64_t kMixStream = 0x6d69782d72617469ULL;

}  // namespace

TrainingResult train_classifier(const Architecture& arch, const std::vector<LabeledImage>& pool,
                                std::size_t epochs, const TrainConfig& config, SeededRng& rng) {
  if (pool.empty()) throw ArgumentError("training pool is empty");
  if (config.batch_size == 0) throw ArgumentError("batch size must be positive");
  TrainingResult result{Model::initialize(arch, rng), {}};
  AdamState state;
  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  const Shape& sample = arch.input;
  const std::size_t per = shape_size(sample);
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t b = std::min(config.batch_size, order.size() - start);
      Shape shape{b};
      shape.insert(shape.end(), sample.begin(), sample.end());
      Tensor batch(shape);
      std::vector<std::size_t> labels(b);
      for (std::size_t j = 0; j < b; ++j) {
        const auto& item = pool[order[start + j]];
        if (item.image.pixels.size() != per) throw ShapeError("training image " + item.image.id + " does not match the input shape");
        std::copy(item.image.pixels.values().begin(), item.image.pixels.values().end(),
                  batch.values().begin() + static_cast<std::ptrdiff_t>(j * per));
        labels[j] = item.label;
      }
      BatchGradients g = parameter_gradients(result.model, batch, labels, rng, Mode::train);
      if (!std::isfinite(g.loss)) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch + 1) + " (non-finite loss)");
      }
      loss_sum += g.loss * static_cast<double>(b);
      correct += g.correct;
      adam_step(result.model.params, g.grads, state, config.learning_rate, config.adam);
    }
    const double n = static_cast<double>(pool.size());
    result.log.push_back({epoch + 1, loss_sum / n, static_cast<double>(correct) / n});
    if (result.log.back().accuracy > config.early_stop_accuracy) break;
  }
  return result;
}

std::vector<LabeledImage> interleave_union(const TrainingPool& pool) {
  if (!pool.perturbed) throw ArgumentError("training pool has no perturbed counterpart");
  const auto& adv = *pool.perturbed;
  if (adv.size() != pool.clean.size()) throw ArgumentError("perturbed pool is not aligned with the clean pool");
  std::vector<LabeledImage> out;
  out.reserve(2 * adv.size());
  for (std::size_t i = 0; i < adv.size(); ++i) {
    if (adv[i].label != pool.clean[i].label) throw ArgumentError("perturbed pool labels are not aligned");
    out.push_back(pool.clean[i]);
    out.push_back(adv[i]);
  }
  return out;
}

AdversarialTrainingResult adversarial_train(const Corpus& corpus, const Architecture& arch,
                                            const AttackConfig& attack, const TrainConfig& config,
                                            SeededRng& rng, const TrainingResult* baseline,
                                            const std::optional<std::filesystem::path>& cache_root) {
  validate_corpus(corpus);
  TrainingPool pool = flatten_training_pool(corpus);
  AdversarialTrainingResult out;
  out.baseline = baseline ? *baseline : train_classifier(arch, pool.clean, config.epochs, config, rng);

  const PerturbedGalleries perturbed =
      cache_root ? perturb_galleries_cached(out.baseline.model, corpus.train, attack, *cache_root)
                 : perturb_galleries(out.baseline.model, corpus.train, attack);
  out.perturbed_flipped = perturbed.flipped;
  Corpus adv_corpus = corpus;
  adv_corpus.train = perturbed.galleries;
  pool.perturbed = flatten_training_pool(adv_corpus).clean;

  const auto train_union = interleave_union(pool);
  out.union_size = train_union.size();
  out.defended = train_classifier(arch, train_union, config.adversarial_epochs, config, rng);
  return out;
}

void McConfig::validate() const {
  if (passes == 0) throw ArgumentError("number of stochastic passes T must be at least 1");
}

std::size_t perturbed_count(double ratio, std::size_t n) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ArgumentError("attack ratio must lie in [0, 1]");
  // The small guard keeps products such as 0.35 * 10 on the half-up side.
  const auto k = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 0.5 + 1e-9));
  return std::min(k, n);
}

MixedTestSet mix_test_set(const ImageSet& clean, const ImageSet& perturbed, double ratio, SeededRng& rng) {
  if (clean.images.size() != perturbed.images.size() || clean.gallery_label != perturbed.gallery_label) {
    throw ArgumentError("clean and perturbed sets are not aligned");
  }
  for (std::size_t i = 0; i < clean.images.size(); ++i) {
    if (clean.images[i].pixels.shape() != perturbed.images[i].pixels.shape()) {
      throw ArgumentError("clean and perturbed image " + std::to_string(i) + " differ in shape");
    }
  }
  const std::size_t n = clean.images.size();
  const std::size_t k = perturbed_count(ratio, n);
  // Partial Fisher-Yates: the first k entries of `order` are the chosen positions.
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = 0; i < k; ++i) std::swap(order[i], order[i + rng.below(n - i)]);

  MixedTestSet out;
  out.ratio = ratio;
  out.gallery_label = clean.gallery_label;
  out.perturbed_mask.assign(n, false);
  for (std::size_t i = 0; i < k; ++i) out.perturbed_mask[order[i]] = true;
  for (std::size_t i = 0; i < n; ++i) out.images.push_back(out.perturbed_mask[i] ? perturbed.images[i] : clean.images[i]);
  return out;
}

McPosterior mc_predict_set(const Model& model, std::span<const Image> images, const McConfig& mc,
                           std::size_t gallery_index, std::size_t set_index) {
  mc.validate();
  if (images.empty()) throw ArgumentError("cannot predict an empty image set");
  const std::size_t d = images.size();
  const std::size_t classes = model.classes();
  const std::size_t split = model.first_stochastic_layer();
  const std::size_t layers = model.arch.layers.size();

  SeededRng unused(0);
  const Tensor prefix = forward_layers(model, stack_images(images), 0, split, Mode::deterministic, unused);
  std::vector<double> per_pass(mc.passes * d * classes);
  for (std::size_t t = 0; t < mc.passes; ++t) {
    SeededRng rng(derive_seed(mc.seed, {gallery_index, set_index, t}));
    const Tensor probs = forward_layers(model, prefix, split, layers, Mode::mc_stochastic, rng);
    std::copy(probs.values().begin(), probs.values().end(), per_pass.begin() + static_cast<std::ptrdiff_t>(t * d * classes));
  }
  return McPosterior(mc.passes, d, classes, std::move(per_pass));
}

McPosterior mc_predict_set(const Model& model, const ImageSet& set, const McConfig& mc,
                           std::size_t gallery_index, std::size_t set_index) {
  return mc_predict_set(model, std::span<const Image>(set.images), mc, gallery_index, set_index);
}

McPosterior mc_predict_set(const Model& model, const MixedTestSet& set, const McConfig& mc,
                           std::size_t gallery_index, std::size_t set_index) {
  return mc_predict_set(model, std::span<const Image>(set.images), mc, gallery_index, set_index);
}

namespace {

struct SetRef {
  std::size_t gallery, set;
};

std::vector<SetRef> enumerate_sets(const std::vector<Gallery>& galleries) {
  std::vector<SetRef> out;
  for (std::size_t g = 0; g < galleries.size(); ++g) {
    for (std::size_t s = 0; s < galleries[g].sets.size(); ++s) out.push_back({g, s});
  }
  return out;
}

std::size_t single_shot_hits(const McPosterior& p, std::size_t truth) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < p.images(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < p.classes(); ++c) {
      if (p.mean(i, c) > p.mean(i, best)) best = c;
    }
    hits += best == truth;
  }
  return hits;
}

}  // namespace

DefenceEvaluation evaluate_defence(const Model& model, const std::vector<Gallery>& clean_test,
                                   const std::vector<Gallery>& perturbed_test,
                                   const std::vector<double>& ratios, const McConfig& mc,
                                   const VotingConfig& voting, const RowTag& tag) {
  mc.validate();
  voting.validate();
  const auto sets = enumerate_sets(clean_test);
  if (sets.empty()) throw ArgumentError("no test image sets to evaluate");
  if (perturbed_test.size() != clean_test.size()) throw ArgumentError("perturbed test galleries are not aligned");
  for (std::size_t g = 0; g < clean_test.size(); ++g) {
    if (perturbed_test[g].sets.size() != clean_test[g].sets.size() || perturbed_test[g].label != clean_test[g].label) {
      throw ArgumentError("perturbed test gallery " + std::to_string(g) + " is not aligned");
    }
  }
  for (double r : ratios) perturbed_count(r, 1);

  struct PerSet {
    std::vector<VoteOutcome> outcomes;
    std::vector<std::size_t> image_hits;
    std::size_t images = 0;
  };
  std::vector<PerSet> results(sets.size());
  parallel_for(sets.size(), [&](std::size_t k) {
    const auto [g, s] = sets[k];
    const ImageSet& clean = clean_test[g].sets[s];
    const ImageSet& adv = perturbed_test[g].sets[s];
    PerSet& out = results[k];
    out.images = clean.images.size();
    for (std::size_t r = 0; r < ratios.size(); ++r) {
      SeededRng mix_rng(derive_seed(mc.seed, {kMixStream, r, g, s}));
      const MixedTestSet mixed = mix_test_set(clean, adv, ratios[r], mix_rng);
      const McPosterior posterior = mc_predict_set(model, mixed, mc, g, s);
      out.outcomes.push_back(vote(posterior, voting));
      out.image_hits.push_back(single_shot_hits(posterior, clean.gallery_label));
    }
  }, kernels::default_backend());

  DefenceEvaluation eval;
  for (std::size_t r = 0; r < ratios.size(); ++r) {
    std::size_t sv = 0, mv = 0, ewv = 0, hits = 0, images = 0;
    for (std::size_t k = 0; k < sets.size(); ++k) {
      const auto [g, s] = sets[k];
      const std::size_t truth = clean_test[g].label;
      const VoteOutcome& o = results[k].outcomes[r];
      sv += o.sv == truth;
      mv += o.mv == truth;
      ewv += o.ewv == truth;
      hits += results[k].image_hits[r];
      images += results[k].images;
      eval.audit.push_back({ratios[r], g, s, truth, o});
    }
    const double n = static_cast<double>(sets.size());
    ResultRow row{tag.model, tag.attack, tag.adv_train, tag.epsilon, ratios[r],
                  100.0 * static_cast<double>(sv) / n, 100.0 * static_cast<double>(mv) / n,
                  100.0 * static_cast<double>(ewv) / n};
    eval.rows.push_back(row);
    eval.single_shot.push_back(100.0 * static_cast<double>(hits) / static_cast<double>(images));
  }
  return eval;
}

double single_shot_eval(const Model& model, const std::vector<Gallery>& galleries, const McConfig& mc) {
  const auto sets = enumerate_sets(galleries);
  if (sets.empty()) throw ArgumentError("no image sets to evaluate");
  std::vector<std::size_t> hits(sets.size()), counts(sets.size());
  parallel_for(sets.size(), [&](std::size_t k) {
    const auto [g, s] = sets[k];
    const McPosterior p = mc_predict_set(model, galleries[g].sets[s], mc, g, s);
    hits[k] = single_shot_hits(p, galleries[g].label);
    counts[k] = p.images();
  });
  std::size_t h = 0, n = 0;
  for (std::size_t k = 0; k < sets.size(); ++k) {
    h += hits[k];
    n += counts[k];
  }
  return 100.0 * static_cast<double>(h) / static_cast<double>(n);
}

double deterministic_accuracy(const Model& model, const std::vector<Gallery>& galleries) {
  const auto sets = enumerate_sets(galleries);
  if (sets.empty()) throw ArgumentError("no image sets to evaluate");
  std::vector<std::size_t> hits(sets.size()), counts(sets.size());
  parallel_for(sets.size(), [&](std::size_t k) {
    const auto [g, s] = sets[k];
    const auto& set = galleries[g].sets[s];
    SeededRng unused(0);
    const Tensor p = forward(model, stack_images(set.images), Mode::deterministic, unused);
    const std::size_t c = p.shape()[1];
    for (std::size_t i = 0; i < set.images.size(); ++i) {
      hits[k] += argmax(p.values().subspan(i * c, c)) == galleries[g].label;
    }
    counts[k] = set.images.size();
  });
  std::size_t h = 0, n = 0;
  for (std::size_t k = 0; k < sets.size(); ++k) {
    h += hits[k];
    n += counts[k];
  }
  return 100.0 * static_cast<double>(h) / static_cast<double>(n);
}

}  // namespace bset
