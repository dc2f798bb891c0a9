#include <cmath>

#include "bset/attacks.hpp"
#include "bset/checkpoint.hpp"
#include "bset/error.hpp"
#include "doctest.h"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace bset;

namespace {

Image vec_image(std::vector<double> v) {
  const std::size_t n = v.size();
  return {Tensor({n}, std::move(v)), "v"};
}

// First sample of a batch, pixels clamped into the box.
Image first_sample(const Tensor& batch) {
  const Shape shape(batch.shape().begin() + 1, batch.shape().end());
  const std::size_t n = batch.size() / batch.shape()[0];
  std::vector<double> v(batch.values().begin(), batch.values().begin() + static_cast<std::ptrdiff_t>(n));
  for (auto& x : v) x = std::clamp(x, 0.0, 1.0);
  return {Tensor(shape, std::move(v)), "x"};
}

double linf(const Tensor& a, const Tensor& b) { return max_abs_diff(a, b); }

double l2(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

const testing::TrainedFixture& fixture() {
  static const testing::TrainedFixture f = testing::trained_synthetic();
  return f;
}

}  // namespace

TEST_CASE("FGSM with zero budget copies the image") {
  const Model m = testing::linear_model({1.0, -2.0}, {0.5, 0.0});
  const Image img = vec_image({0.3, 0.8});
  const auto r = fgsm(m, img, 0, 0.0);
  CHECK(r.adversarial.pixels == img.pixels);
  CHECK(r.adversarial.id == img.id);
  CHECK_FALSE(r.flipped);
}

TEST_CASE("FGSM on a one-input logistic model") {
  // Logits (x, 0) with true class 0: dL/dx = p0 - 1 = -0.3775 at x = 0.5.
  const Model m = testing::linear_model({1.0}, {0.0});
  const auto r = fgsm(m, vec_image({0.5}), 0, 0.1);
  CHECK(r.adversarial.pixels[0] == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(r.iterations == 1);
}

TEST_CASE("FGSM clips to the pixel box") {
  // True class 1 makes dL/dx = p0 > 0 for logits (x, 0).
  const Model m = testing::linear_model({1.0}, {0.0});
  const auto r = fgsm(m, vec_image({0.95}), 1, 0.3);
  CHECK(r.adversarial.pixels[0] == 1.0);
}

TEST_CASE("FGSM moves every unclipped coordinate by exactly epsilon") {
  SeededRng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const oracle::RandomNetwork net = oracle::random_network(rng, trial % 5, 1);
    const Image img = first_sample(net.batch);
    const double eps = 0.01 + 0.2 * rng.uniform();
    const std::size_t label = net.labels[0];
    SeededRng unused(0);
    const Tensor g = loss_and_input_gradient(net.model, img.pixels, label, unused).input_gradient;
    const auto r = fgsm(net.model, img, label, eps);
    CHECK(linf(r.adversarial.pixels, img.pixels) <= eps + 1e-12);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = img.pixels[i];
      const double target = x + eps * (g[i] > 0 ? 1.0 : g[i] < 0 ? -1.0 : 0.0);
      if (target >= 0.0 && target <= 1.0) CHECK(r.adversarial.pixels[i] == target);
      CHECK(r.adversarial.pixels[i] >= 0.0);
      CHECK(r.adversarial.pixels[i] <= 1.0);
    }
  }
}

TEST_CASE("PGD with zero steps returns the original") {
  const Model m = testing::linear_model({1.0, 2.0}, {-1.0, 0.5});
  AttackConfig c;
  c.kind = AttackKind::pgd;
  c.epsilon = 0.3;
  c.pgd_steps = 0;
  const Image img = vec_image({0.2, 0.6});
  CHECK(pgd(m, img, 0, c).adversarial.pixels == img.pixels);
}

TEST_CASE("one PGD step of size epsilon equals FGSM") {
  SeededRng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const oracle::RandomNetwork net = oracle::random_network(rng, trial % 5, 1);
    const Image img = first_sample(net.batch);
    AttackConfig c;
    c.kind = AttackKind::pgd;
    c.epsilon = 0.05 + 0.3 * rng.uniform();
    c.pgd_step = c.epsilon;
    c.pgd_steps = 1;
    CHECK(pgd(net.model, img, net.labels[0], c).adversarial.pixels ==
          fgsm(net.model, img, net.labels[0], c.epsilon).adversarial.pixels);
  }
}

TEST_CASE("every PGD iterate stays inside the projected ball") {
  const auto& f = fixture();
  AttackConfig c;
  c.kind = AttackKind::pgd;
  c.epsilon = 0.1;
  c.pgd_step = 0.04;
  c.pgd_steps = 12;
  const Image& img = f.corpus.test[3].sets[0].images[0];
  std::size_t seen = 0;
  const auto r = pgd(f.model, img, 3, c, {}, [&](std::size_t step, const Tensor& x) {
    CHECK(step == ++seen);
    CHECK(linf(x, img.pixels) <= c.epsilon + 1e-12);
    CHECK(x.min_value() >= 0.0);
    CHECK(x.max_value() <= 1.0);
  });
  CHECK(seen == 12);
  CHECK(r.iterations == 12);
  CHECK(c.pgd_step_size() == 0.04);
  AttackConfig d;
  d.epsilon = 0.2;
  CHECK(d.pgd_step_size() == 0.05);
}

TEST_CASE("DeepFool with no iterations leaves the image alone") {
  const Model m = testing::linear_model({1.0, 0.0}, {0.0, 1.0});
  AttackConfig c;
  c.kind = AttackKind::deepfool;
  c.deepfool_max_iter = 0;
  const Image img = vec_image({0.6, 0.4});
  const auto r = deepfool(m, img, c);
  CHECK(r.adversarial.pixels == img.pixels);
  CHECK_FALSE(r.flipped);
  CHECK(r.iterations == 0);
}

TEST_CASE("DeepFool on affine models matches the hyperplane projection") {
  SeededRng rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 2 + rng.below(12);
    std::vector<double> w0(n), w1(n), x(n);
    for (std::size_t i = 0; i < n; ++i) {
      w0[i] = rng.normal();
      w1[i] = rng.normal();
      x[i] = 0.35 + 0.3 * rng.uniform();
    }
    // Offset so the boundary sits a short distance from x, on class 0's side.
    double fx = 0.0, norm2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double w = w1[i] - w0[i];
      fx += w * x[i];
      norm2 += w * w;
    }
    const double dist = 0.02 + 0.1 * rng.uniform();
    const double b1 = -fx - dist * std::sqrt(norm2);
    const Model m = testing::linear_model(w0, w1, 0.0, b1);
    AttackConfig c;
    c.kind = AttackKind::deepfool;
    const auto r = deepfool(m, vec_image(x), c);
    const double f = fx + b1;
    std::vector<double> expected(n), got(n);
    for (std::size_t i = 0; i < n; ++i) {
      expected[i] = -f / norm2 * (w1[i] - w0[i]) * (1.0 + c.deepfool_overshoot);
      got[i] = r.adversarial.pixels[i] - x[i];
    }
    CHECK(oracle::relative_error(got, expected) <= 1e-6);
    CHECK(r.flipped);
    CHECK(r.source_label == 0);
  }
}

TEST_CASE("DeepFool needs smaller perturbations than FGSM at 0.3") {
  const auto& f = fixture();
  double df_sum = 0.0, fg_sum = 0.0;
  std::size_t df_n = 0, fg_n = 0;
  AttackConfig c;
  c.kind = AttackKind::deepfool;
  for (const auto& g : f.corpus.test) {
    for (const auto& s : g.sets) {
      for (const auto& img : s.images) {
        const auto d = deepfool(f.model, img, c);
        if (d.flipped) df_sum += l2(d.adversarial.pixels, img.pixels), ++df_n;
        const auto q = fgsm(f.model, img, g.label, 0.3);
        if (q.flipped) fg_sum += l2(q.adversarial.pixels, img.pixels), ++fg_n;
      }
    }
  }
  REQUIRE(df_n >= 100);
  REQUIRE(fg_n >= 1);
  CHECK(df_sum / df_n < fg_sum / fg_n);
}

TEST_CASE("attacks are deterministic") {
  const auto& f = fixture();
  const Image& img = f.corpus.test[1].sets[1].images[2];
  for (AttackKind kind : {AttackKind::fgsm, AttackKind::pgd, AttackKind::deepfool}) {
    AttackConfig c;
    c.kind = kind;
    c.epsilon = 0.2;
    const auto a = attack_image(f.model, img, 1, c);
    const auto b = attack_image(f.model, img, 1, c);
    CHECK(a.adversarial.pixels == b.adversarial.pixels);
    CHECK(a.config.kind == kind);
  }
}

TEST_CASE("attack configuration validation") {
  AttackConfig c;
  c.epsilon = -0.1;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c.epsilon = std::nan("");
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c.epsilon = 0.1;
  c.deepfool_overshoot = -1.0;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  CHECK(parse_attack("pgd") == AttackKind::pgd);
  CHECK(parse_attack("DeepFool") == AttackKind::deepfool);
  CHECK_FALSE(parse_attack("onepixel").has_value());
}

TEST_CASE("perturbing galleries keeps their structure") {
  const auto& f = fixture();
  AttackConfig zero;
  zero.epsilon = 0.0;
  const auto same = perturb_galleries(f.model, f.corpus.test, zero);
  REQUIRE(same.galleries.size() == f.corpus.test.size());
  for (std::size_t k = 0; k < same.galleries.size(); ++k) {
    for (std::size_t s = 0; s < same.galleries[k].sets.size(); ++s) {
      const auto& a = same.galleries[k].sets[s];
      const auto& b = f.corpus.test[k].sets[s];
      for (std::size_t i = 0; i < a.images.size(); ++i) CHECK(a.images[i].pixels == b.images[i].pixels);
    }
  }
  CHECK(same.flipped == 0);

  AttackConfig c;
  c.epsilon = 0.3;
  const std::string fp = model_fingerprint(f.model);
  const auto p = perturb_galleries(f.model, f.corpus.test, c, true);
  CHECK(p.model_fingerprint == fp);
  CHECK(image_count(p.galleries) == image_count(f.corpus.test));
  std::size_t k = 0;
  for (std::size_t g = 0; g < p.galleries.size(); ++g) {
    CHECK(p.galleries[g].label == f.corpus.test[g].label);
    for (std::size_t s = 0; s < p.galleries[g].sets.size(); ++s) {
      const auto& set = p.galleries[g].sets[s];
      CHECK(set.gallery_label == f.corpus.test[g].label);
      for (std::size_t i = 0; i < set.images.size(); ++i, ++k) {
        const auto& rec = p.records[k];
        CHECK(rec.model_fingerprint == fp);
        CHECK(rec.source_label == f.corpus.test[g].label);
        CHECK(rec.original.id == f.corpus.test[g].sets[s].images[i].id);
        CHECK(rec.adversarial.pixels == set.images[i].pixels);
        CHECK(set.images[i].id == rec.original.id);
      }
    }
  }
  CHECK(k == p.records.size());
}

TEST_CASE("perturbation cache round trip") {
  const auto& f = fixture();
  const auto root = testing::scratch_dir("perturb-cache");
  AttackConfig c;
  c.epsilon = 0.3;
  const std::string src = galleries_hash(f.corpus.test);
  const std::string fp = model_fingerprint(f.model);
  CHECK_FALSE(load_perturbation(root, src, fp, c, f.corpus.test).has_value());
  const auto fresh = perturb_galleries_cached(f.model, f.corpus.test, c, root);
  const auto loaded = load_perturbation(root, src, fp, c, f.corpus.test);
  REQUIRE(loaded.has_value());
  CHECK(galleries_hash(loaded->galleries) == galleries_hash(fresh.galleries));
  CHECK(loaded->flipped == fresh.flipped);
  CHECK(loaded->model_fingerprint == fp);

  AttackConfig other = c;
  other.epsilon = 0.1;
  CHECK(perturbation_cache_key(src, fp, c) != perturbation_cache_key(src, fp, other));
  CHECK_FALSE(load_perturbation(root, src, fp, other, f.corpus.test).has_value());
  CHECK_FALSE(load_perturbation(root, src, "other-model", c, f.corpus.test).has_value());
}

TEST_CASE("FGSM accuracy does not rise with epsilon") {
  const auto& f = fixture();
  double previous = 101.0;
  for (double eps : {0.0, 0.05, 0.1, 0.3}) {
    AttackConfig c;
    c.epsilon = eps;
    const double acc = deterministic_accuracy(f.model, perturb_galleries(f.model, f.corpus.test, c).galleries);
    CHECK(acc <= previous + 2.0);
    previous = acc;
  }
}
