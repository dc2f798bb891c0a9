#include <cmath>

#include "bset/defence.hpp"
#include "bset/error.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace bset;

namespace {

const testing::TrainedFixture& fixture() {
  static const testing::TrainedFixture f = testing::trained_synthetic();
  return f;
}

ImageSet numbered_set(std::size_t n, double base) {
  ImageSet s{{}, 0};
  for (std::size_t i = 0; i < n; ++i) {
    s.images.push_back({Tensor({1, 2, 2}, base + 0.01 * static_cast<double>(i)), std::to_string(i)});
  }
  return s;
}

}  // namespace

TEST_CASE("perturbed count rounds half up") {
  CHECK(perturbed_count(0.5, 10) == 5);
  CHECK(perturbed_count(0.8, 10) == 8);
  CHECK(perturbed_count(1.0, 10) == 10);
  CHECK(perturbed_count(0.0, 10) == 0);
  CHECK(perturbed_count(0.5, 1) == 1);
  CHECK(perturbed_count(0.5, 3) == 2);
  CHECK(perturbed_count(0.25, 2) == 1);
  CHECK(perturbed_count(0.8, 25) == 20);
  CHECK(perturbed_count(0.1, 5) == 1);
}

TEST_CASE("mixing: mask cardinality and positional substitution") {
  SeededRng rng(1);
  for (std::size_t n = 1; n <= 30; ++n) {
    const ImageSet clean = numbered_set(n, 0.1);
    const ImageSet pert = numbered_set(n, 0.6);
    for (int k = 0; k <= 20; ++k) {
      const double r = k / 20.0;
      const MixedTestSet m = mix_test_set(clean, pert, r, rng);
      REQUIRE(m.images.size() == n);
      std::size_t count = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const bool p = m.perturbed_mask[i];
        count += p;
        CHECK(m.images[i].pixels == (p ? pert : clean).images[i].pixels);
      }
      CHECK(count == static_cast<std::size_t>(std::floor(r * static_cast<double>(n) + 0.5)));
      CHECK(m.ratio == r);
    }
  }
}

TEST_CASE("mixing: ratio 0 and ratio 1 are identities") {
  SeededRng rng(2);
  const ImageSet clean = numbered_set(7, 0.1), pert = numbered_set(7, 0.5);
  const auto none = mix_test_set(clean, pert, 0.0, rng);
  const auto all = mix_test_set(clean, pert, 1.0, rng);
  for (std::size_t i = 0; i < 7; ++i) {
    CHECK(none.images[i].pixels == clean.images[i].pixels);
    CHECK_FALSE(none.perturbed_mask[i]);
    CHECK(all.images[i].pixels == pert.images[i].pixels);
    CHECK(all.perturbed_mask[i]);
  }
}

TEST_CASE("mixing rejects misaligned sets") {
  SeededRng rng(3);
  CHECK_THROWS_AS(mix_test_set(numbered_set(4, 0.1), numbered_set(5, 0.1), 0.5, rng), ArgumentError);
  CHECK_THROWS_AS(mix_test_set(numbered_set(4, 0.1), numbered_set(4, 0.1), 1.5, rng), ArgumentError);
  CHECK_THROWS_AS(mix_test_set(numbered_set(4, 0.1), numbered_set(4, 0.1), -0.1, rng), ArgumentError);
}

TEST_CASE("MC prediction: no dropout gives identical passes") {
  SeededRng init(4);
  const Model m = Model::initialize(desk_cnn({1, 16, 16}, 10, 0.0), init);
  const auto& set = fixture().corpus.test[0].sets[0];
  const McPosterior p = mc_predict_set(m, set, McConfig{6, 9});
  for (std::size_t t = 1; t < p.passes(); ++t) {
    for (std::size_t i = 0; i < p.images(); ++i) {
      for (std::size_t c = 0; c < p.classes(); ++c) CHECK(p.at(t, i, c) == p.at(0, i, c));
    }
  }
  for (std::size_t i = 0; i < p.images(); ++i) {
    for (std::size_t c = 0; c < p.classes(); ++c) CHECK(p.mean(i, c) == doctest::Approx(p.at(0, i, c)).epsilon(1e-15));
  }
}

TEST_CASE("MC prediction: single pass, determinism and mean consistency") {
  const auto& f = fixture();
  const auto& set = f.corpus.test[2].sets[1];
  const McPosterior one = mc_predict_set(f.model, set, McConfig{1, 5});
  for (std::size_t i = 0; i < one.images(); ++i) {
    for (std::size_t c = 0; c < one.classes(); ++c) CHECK(one.mean(i, c) == one.at(0, i, c));
  }

  const McPosterior a = mc_predict_set(f.model, set, McConfig{20, 5}, 2, 1);
  const McPosterior b = mc_predict_set(f.model, set, McConfig{20, 5}, 2, 1);
  CHECK(a == b);
  const McPosterior other = mc_predict_set(f.model, set, McConfig{20, 5}, 2, 0);
  CHECK_FALSE(a == other);
  CHECK_NOTHROW(a.validate());

  for (std::size_t i = 0; i < a.images(); ++i) {
    for (std::size_t c = 0; c < a.classes(); ++c) {
      double s = 0.0;
      for (std::size_t t = 0; t < a.passes(); ++t) s += a.at(t, i, c);
      CHECK(std::abs(s / 20.0 - a.mean(i, c)) <= 1e-12);
    }
  }
  // Passes differ when dropout is active.
  bool differs = false;
  for (std::size_t c = 0; c < a.classes(); ++c) differs |= a.at(0, 0, c) != a.at(1, 0, c);
  CHECK(differs);
}

TEST_CASE("MC prediction rejects zero passes") {
  const auto& f = fixture();
  CHECK_THROWS_AS(mc_predict_set(f.model, f.corpus.test[0].sets[0], McConfig{0, 1}), ArgumentError);
}

TEST_CASE("adversarial training: union accounting and zero budget") {
  const Corpus corpus = normalize_corpus(synthesize_corpus(testing::small_synthetic(21)));
  TrainingPool pool = flatten_training_pool(corpus);
  AttackConfig zero;
  zero.epsilon = 0.0;
  TrainConfig tc;
  tc.epochs = 10;
  tc.adversarial_epochs = 10;
  tc.learning_rate = 2e-3;
  tc.batch_size = 32;
  SeededRng rng(22);
  const auto arch = desk_cnn({1, 16, 16}, 10);
  const auto result = adversarial_train(corpus, arch, zero, tc, rng);
  CHECK(result.union_size == 2 * pool.clean.size());
  CHECK(result.perturbed_flipped == 0);
  const double plain = deterministic_accuracy(result.baseline.model, corpus.test);
  const double doubled = deterministic_accuracy(result.defended.model, corpus.test);
  CHECK(std::abs(plain - doubled) <= 2.0);

  pool.perturbed = pool.clean;
  const auto merged = interleave_union(pool);
  REQUIRE(merged.size() == 2 * pool.clean.size());
  CHECK(merged[0].image.id == pool.clean[0].image.id);
  CHECK(merged[1].label == pool.clean[0].label);
}

TEST_CASE("adversarial training closes the FGSM gap on synthetic data") {
  const Corpus corpus = normalize_corpus(synthesize_corpus(testing::small_synthetic(31)));
  AttackConfig attack;
  attack.epsilon = 0.3;
  TrainConfig tc;
  tc.epochs = 15;
  tc.adversarial_epochs = 15;
  tc.learning_rate = 2e-3;
  tc.batch_size = 32;
  SeededRng rng(32);
  const auto result = adversarial_train(corpus, desk_cnn({1, 16, 16}, 10), attack, tc, rng);
  const auto perturbed = perturb_galleries(result.baseline.model, corpus.test, attack).galleries;
  const double base = deterministic_accuracy(result.baseline.model, perturbed);
  const double adv = deterministic_accuracy(result.defended.model, perturbed);
  MESSAGE("baseline " << base << "%, adversarially trained " << adv << "%");
  CHECK(adv - base >= 30.0);
}

TEST_CASE("evaluation on clean sets is perfect for a well-trained model") {
  const auto& f = fixture();
  const auto ev = evaluate_defence(f.model, f.corpus.test, f.corpus.test, {0.0}, McConfig{20, 3}, {}, {});
  REQUIRE(ev.rows.size() == 1);
  CHECK(ev.rows[0].sv == 100.0);
  CHECK(ev.rows[0].mv == 100.0);
  CHECK(ev.rows[0].ewv == 100.0);
  CHECK(ev.audit.size() == set_count(f.corpus.test));
  CHECK(single_shot_eval(f.model, f.corpus.test, McConfig{20, 3}) >= 99.0);
}

TEST_CASE("undefended accuracy falls as more images are attacked") {
  const auto& f = fixture();
  AttackConfig attack;
  attack.epsilon = 0.3;
  const auto perturbed = perturb_galleries(f.model, f.corpus.test, attack).galleries;
  RowTag tag;
  tag.epsilon = 0.3;
  const auto ev = evaluate_defence(f.model, f.corpus.test, perturbed, {0.0, 0.5, 1.0}, McConfig{20, 3}, {}, tag);
  REQUIRE(ev.rows.size() == 3);
  CHECK(ev.rows[2].sv <= ev.rows[1].sv);
  CHECK(ev.rows[2].mv <= ev.rows[1].mv);
  CHECK(ev.rows[2].ewv <= ev.rows[1].ewv);
  CHECK(ev.rows[1].ratio == 0.5);
  CHECK(ev.rows[1].epsilon == 0.3);
  CHECK(ev.rows[1].attack == "FGSM");
  REQUIRE(ev.single_shot.size() == 3);
  CHECK(ev.single_shot[2] <= ev.single_shot[0]);
}

TEST_CASE("evaluation is reproducible") {
  const auto& f = fixture();
  AttackConfig attack;
  attack.epsilon = 0.1;
  const auto perturbed = perturb_galleries(f.model, f.corpus.test, attack).galleries;
  const auto a = evaluate_defence(f.model, f.corpus.test, perturbed, {0.5, 0.8}, McConfig{10, 7}, {}, {});
  const auto b = evaluate_defence(f.model, f.corpus.test, perturbed, {0.5, 0.8}, McConfig{10, 7}, {}, {});
  REQUIRE(a.audit.size() == b.audit.size());
  for (std::size_t i = 0; i < a.audit.size(); ++i) {
    CHECK(a.audit[i].outcome.sv_scores == b.audit[i].outcome.sv_scores);
    CHECK(a.audit[i].outcome.ewv_scores == b.audit[i].outcome.ewv_scores);
  }
  CHECK(a.single_shot == b.single_shot);
}

TEST_CASE("single-shot accuracy equals set accuracy for singleton sets") {
  SyntheticSpec spec = testing::small_synthetic(41);
  spec.images_per_set = 1;
  spec.sets_per_gallery = 12;
  spec.noise = 0.35;
  const Corpus c = normalize_corpus(synthesize_corpus(spec));
  const auto& f = fixture();
  const McConfig mc{15, 8};
  const auto ev = evaluate_defence(f.model, c.test, c.test, {0.0}, mc, {}, {});
  const double single = single_shot_eval(f.model, c.test, mc);
  CHECK(ev.rows[0].mv == doctest::Approx(single).epsilon(1e-12));
  CHECK(ev.rows[0].ewv == doctest::Approx(single).epsilon(1e-12));
  CHECK(ev.single_shot[0] == doctest::Approx(single).epsilon(1e-12));
}
