#include "bset/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <fstream>
#include <sstream>

#include "bset/checkpoint.hpp"
#include "bset/error.hpp"
#include "bset/hash.hpp"
#include "bset/parallel.hpp"

namespace bset {

const char* attack_name(AttackKind kind) {
  switch (kind) {
    case AttackKind::fgsm: return "FGSM";
    case AttackKind::pgd: return "PGD";
    case AttackKind::deepfool: return "DeepFool";
  }
  return "?";
}

std::optional<AttackKind> parse_attack(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "fgsm") return AttackKind::fgsm;
  if (lower == "pgd") return AttackKind::pgd;
  if (lower == "deepfool") return AttackKind::deepfool;
  return std::nullopt;
}

void AttackConfig::validate() const {
  auto bad = [](double v) { return !std::isfinite(v) || v < 0.0; };
  if (bad(epsilon)) throw ArgumentError("attack epsilon must be finite and >= 0");
  if (bad(pgd_step)) throw ArgumentError("PGD step size must be finite and >= 0");
  if (bad(deepfool_overshoot)) throw ArgumentError("DeepFool overshoot must be finite and >= 0");
}

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

std::size_t predict(const Model& model, const Tensor& x) {
  SeededRng unused(0);
  const Tensor p = forward(model, x, Mode::deterministic, unused);
  return argmax(p.values());
}

AdversarialRecord make_record(const Image& image, std::size_t label, const AttackConfig& config,
                              std::string fingerprint) {
  AdversarialRecord r;
  r.original = image;
  r.adversarial = image;
  r.source_label = label;
  r.model_fingerprint = std::move(fingerprint);
  r.config = config;
  return r;
}

Tensor input_gradient(const Model& model, const Tensor& x, std::size_t label) {
  SeededRng unused(0);
  return loss_and_input_gradient(model, x, label, unused, Mode::deterministic).input_gradient;
}

}  // namespace

AdversarialRecord fgsm(const Model& model, const Image& image, std::size_t label, double epsilon,
                       std::string fingerprint) {
  AttackConfig config;
  config.kind = AttackKind::fgsm;
  config.epsilon = epsilon;
  config.validate();
  AdversarialRecord r = make_record(image, label, config, std::move(fingerprint));
  const std::size_t clean_prediction = predict(model, image.pixels);
  if (epsilon > 0.0) {
    const Tensor g = input_gradient(model, image.pixels, label);
    r.iterations = 1;
    auto adv = r.adversarial.pixels.values();
    for (std::size_t i = 0; i < adv.size(); ++i) {
      adv[i] = std::clamp(adv[i] + epsilon * sign(g[i]), 0.0, 1.0);
    }
  }
  r.flipped = predict(model, r.adversarial.pixels) != clean_prediction;
  return r;
}

AdversarialRecord pgd(const Model& model, const Image& image, std::size_t label, const AttackConfig& config,
                      std::string fingerprint, const PgdObserver& observer) {
  config.validate();
  AdversarialRecord r = make_record(image, label, config, std::move(fingerprint));
  r.config.kind = AttackKind::pgd;
  const std::size_t clean_prediction = predict(model, image.pixels);
  const double eps = config.epsilon;
  const double step = config.pgd_step_size();
  const auto x0 = image.pixels.values();
  Tensor& x = r.adversarial.pixels;
  for (std::size_t t = 0; t < config.pgd_steps; ++t) {
    const Tensor g = input_gradient(model, x, label);
    for (std::size_t i = 0; i < x.size(); ++i) {
      // Projection onto the intersection of the epsilon box and [0, 1].
      const double lo = std::max(0.0, x0[i] - eps);
      const double hi = std::min(1.0, x0[i] + eps);
      x[i] = std::clamp(x[i] + step * sign(g[i]), lo, hi);
    }
    r.iterations = t + 1;
    if (observer) observer(t + 1, x);
  }
  r.flipped = predict(model, x) != clean_prediction;
  return r;
}

AdversarialRecord deepfool(const Model& model, const Image& image, const AttackConfig& config,
                           std::string fingerprint) {
  config.validate();
  if (model.classes() < 2) throw ArgumentError("DeepFool needs at least two classes");
  const auto x0 = image.pixels.values();
  const std::size_t n = x0.size();
  SeededRng unused(0);
  const std::size_t k0 = predict(model, image.pixels);
  AdversarialRecord r = make_record(image, k0, config, std::move(fingerprint));
  r.config.kind = AttackKind::deepfool;

  std::vector<double> r_total(n, 0.0);
  Tensor x = image.pixels;
  const double scale = 1.0 + config.deepfool_overshoot;
  for (std::size_t it = 0; it < config.deepfool_max_iter; ++it) {
    const LogitJacobian jac = logit_input_jacobian(model, x);
    if (argmax(jac.logits) != k0) break;
    // Nearest linearised boundary among all other classes.
    double best = std::numeric_limits<double>::infinity();
    std::vector<double> best_w;
    double best_f = 0.0;
    for (std::size_t k = 0; k < jac.logits.size(); ++k) {
      if (k == k0) continue;
      std::vector<double> w(n);
      double norm2 = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        w[i] = jac.gradients[k][i] - jac.gradients[k0][i];
        norm2 += w[i] * w[i];
      }
      if (!(norm2 > 0.0)) continue;
      const double f = jac.logits[k] - jac.logits[k0];
      const double dist = std::abs(f) / std::sqrt(norm2);
      if (dist < best) {
        best = dist;
        best_w = std::move(w);
        best_f = f;
      }
    }
    if (best_w.empty()) break;
    double norm2 = 0.0;
    for (double v : best_w) norm2 += v * v;
    const double coeff = std::abs(best_f) / norm2;
    for (std::size_t i = 0; i < n; ++i) {
      r_total[i] += coeff * best_w[i];
      x[i] = std::clamp(x0[i] + scale * r_total[i], 0.0, 1.0);
    }
    if (!x.all_finite()) throw NumericError("DeepFool produced a non-finite iterate");
    r.iterations = it + 1;
  }
  if (r.iterations > 0) r.adversarial.pixels = x;
  r.flipped = predict(model, r.adversarial.pixels) != k0;
  return r;
}

AdversarialRecord attack_image(const Model& model, const Image& image, std::size_t label,
                               const AttackConfig& config, std::string fingerprint) {
  switch (config.kind) {
    case AttackKind::fgsm: return fgsm(model, image, label, config.epsilon, std::move(fingerprint));
    case AttackKind::pgd: return pgd(model, image, label, config, std::move(fingerprint));
    case AttackKind::deepfool: {
      AdversarialRecord r = deepfool(model, image, config, std::move(fingerprint));
      r.source_label = label;
      return r;
    }
  }
  throw ArgumentError("unknown attack kind");
}

PerturbedGalleries perturb_galleries(const Model& model, const std::vector<Gallery>& galleries,
                                     const AttackConfig& config, bool keep_records) {
  config.validate();
  struct Slot {
    std::size_t gallery, set, image;
  };
  std::vector<Slot> slots;
  for (std::size_t g = 0; g < galleries.size(); ++g) {
    for (std::size_t s = 0; s < galleries[g].sets.size(); ++s) {
      for (std::size_t i = 0; i < galleries[g].sets[s].images.size(); ++i) slots.push_back({g, s, i});
    }
  }
  PerturbedGalleries out;
  out.model_fingerprint = model_fingerprint(model);
  out.galleries = galleries;
  std::vector<AdversarialRecord> records(slots.size());
  parallel_for(slots.size(), [&](std::size_t k) {
    const Slot& sl = slots[k];
    const auto& g = galleries[sl.gallery];
    records[k] = attack_image(model, g.sets[sl.set].images[sl.image], g.label, config, out.model_fingerprint);
  });
  for (std::size_t k = 0; k < slots.size(); ++k) {
    const Slot& sl = slots[k];
    out.galleries[sl.gallery].sets[sl.set].images[sl.image] = records[k].adversarial;
    if (records[k].flipped) ++out.flipped;
  }
  if (keep_records) out.records = std::move(records);
  return out;
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string perturbation_cache_key(const std::string& source_hash, const std::string& model_fingerprint,
                                   const AttackConfig& config) {
  std::ostringstream os;
  os << source_hash << '|' << model_fingerprint << '|' << attack_name(config.kind) << '|'
     << fmt_double(config.epsilon);
  if (config.kind == AttackKind::pgd) os << '|' << fmt_double(config.pgd_step_size()) << '|' << config.pgd_steps;
  if (config.kind == AttackKind::deepfool) {
    os << '|' << config.deepfool_max_iter << '|' << fmt_double(config.deepfool_overshoot);
  }
  return sha256_hex(os.str()).substr(0, 32);
}

void store_perturbation(const std::filesystem::path& root, const std::string& source_hash,
                        const AttackConfig& config, const PerturbedGalleries& perturbed) {
  const std::string key = perturbation_cache_key(source_hash, perturbed.model_fingerprint, config);
  const auto dir = root / key;
  std::filesystem::create_directories(dir);
  std::vector<NamedTensor> tensors;
  for (std::size_t g = 0; g < perturbed.galleries.size(); ++g) {
    const auto& gal = perturbed.galleries[g];
    for (std::size_t s = 0; s < gal.sets.size(); ++s) {
      for (std::size_t i = 0; i < gal.sets[s].images.size(); ++i) {
        tensors.push_back({"g" + std::to_string(gal.label) + "/s" + std::to_string(s) + "/i" + std::to_string(i),
                           gal.sets[s].images[i].pixels});
      }
    }
  }
  save_tensors(tensors, dir / "images.bset");
  std::ofstream m(dir / "manifest.txt", std::ios::trunc);
  m << "format = 1\n"
    << "source_hash = " << source_hash << '\n'
    << "model_fingerprint = " << perturbed.model_fingerprint << '\n'
    << "attack = " << attack_name(config.kind) << '\n'
    << "epsilon = " << fmt_double(config.epsilon) << '\n'
    << "pgd_step = " << fmt_double(config.pgd_step_size()) << '\n'
    << "pgd_steps = " << config.pgd_steps << '\n'
    << "deepfool_max_iter = " << config.deepfool_max_iter << '\n'
    << "deepfool_overshoot = " << fmt_double(config.deepfool_overshoot) << '\n'
    << "images = " << tensors.size() << '\n'
    << "flipped = " << perturbed.flipped << '\n'
    << "tensors = images.bset\n"
    << "tensors_sha256 = " << sha256_file((dir / "images.bset").string()) << '\n';
  if (!m) throw Error("failed to write perturbation manifest in " + dir.string());
}

std::optional<PerturbedGalleries> load_perturbation(const std::filesystem::path& root,
                                                    const std::string& source_hash,
                                                    const std::string& model_fingerprint,
                                                    const AttackConfig& config,
                                                    const std::vector<Gallery>& source) {
  const auto dir = root / perturbation_cache_key(source_hash, model_fingerprint, config);
  if (!std::filesystem::exists(dir / "manifest.txt") || !std::filesystem::exists(dir / "images.bset")) {
    return std::nullopt;
  }
  std::ifstream m(dir / "manifest.txt");
  std::string line;
  std::size_t flipped = 0;
  std::string tensors_sha;
  while (std::getline(m, line)) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq), value = line.substr(eq + 3);
    if (key == "source_hash" && value != source_hash) throw FormatError("perturbation cache key collision in " + dir.string());
    if (key == "model_fingerprint" && value != model_fingerprint) throw FormatError("perturbation cache key collision in " + dir.string());
    if (key == "flipped") flipped = std::stoull(value);
    if (key == "tensors_sha256") tensors_sha = value;
  }
  if (tensors_sha != sha256_file((dir / "images.bset").string())) {
    throw FormatError("perturbation cache " + dir.string() + " is corrupted (tensor hash mismatch)");
  }
  auto tensors = load_tensors(dir / "images.bset");
  PerturbedGalleries out;
  out.galleries = source;
  out.model_fingerprint = model_fingerprint;
  out.flipped = flipped;
  std::size_t k = 0;
  for (auto& g : out.galleries) {
    for (auto& s : g.sets) {
      for (auto& img : s.images) {
        if (k >= tensors.size() || tensors[k].tensor.shape() != img.pixels.shape()) {
          throw FormatError("perturbation cache " + dir.string() + " does not match the source galleries");
        }
        img.pixels = std::move(tensors[k++].tensor);
      }
    }
  }
  if (k != tensors.size()) throw FormatError("perturbation cache " + dir.string() + " has extra images");
  return out;
}

PerturbedGalleries perturb_galleries_cached(const Model& model, const std::vector<Gallery>& galleries,
                                            const AttackConfig& config,
                                            const std::filesystem::path& cache_root) {
  const std::string source = galleries_hash(galleries);
  const std::string fp = model_fingerprint(model);
  if (auto hit = load_perturbation(cache_root, source, fp, config, galleries)) return std::move(*hit);
  PerturbedGalleries out = perturb_galleries(model, galleries, config);
  store_perturbation(cache_root, source, config, out);
  return out;
}

}  // namespace bset
