#include "bset/experiment.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <ostream>
#include <sstream>

#include "bset/checkpoint.hpp"
#include "bset/error.hpp"
#include "bset/hash.hpp"
#include "bset/report.hpp"

#ifndef BSET_VERSION
#define BSET_VERSION "0.1.0"
#endif

namespace bset {
namespace {

namespace fs = std::filesystem;

constexpr std::uint64_t kCorpusStream = 1;
constexpr std::uint64_t kBaselineStream = 2;
constexpr std::uint64_t kDefendedStream = 3;
constexpr std::uint64_t kMcStream = 4;

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!(out << text)) throw Error("cannot write " + path.string());
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

void quarantine(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) return;
  fs::path target = dir / ("failed-" + timestamp());
  for (int n = 1; fs::exists(target, ec); ++n) target = dir / ("failed-" + timestamp() + "-" + std::to_string(n));
  fs::create_directories(target, ec);
  if (ec) return;
  for (const auto& entry : fs::directory_iterator(dir, ec)) {
    const auto name = entry.path().filename().string();
    if (name.rfind("failed-", 0) == 0) continue;
    fs::rename(entry.path(), target / name, ec);
  }
}

// Everything that determines the trained checkpoints.
std::string training_key(const ExperimentConfig& c, const std::string& corpus_digest, const Architecture& arch) {
  Sha256 h;
  h.update(corpus_digest);
  Checkpoint shape_only{arch, {}};
  h.update(std::span<const std::uint8_t>(encode_checkpoint(shape_only)));
  h.update_u64(c.seed);
  h.update_u64(c.train.epochs);
  h.update_u64(c.train.batch_size);
  h.update_f64(c.train.learning_rate);
  h.update_f64(c.train.early_stop_accuracy);
  h.update_f64(c.train.adam.beta1);
  h.update_f64(c.train.adam.beta2);
  h.update_f64(c.train.adam.epsilon);
  h.update_u64(c.adversarial_training ? 1 : 0);
  if (c.adversarial_training) {
    h.update_u64(c.train.adversarial_epochs);
    h.update_u64(static_cast<std::uint64_t>(c.attack.kind));
    h.update_f64(c.attack.epsilon);
    h.update_f64(c.attack.pgd_step_size());
    h.update_u64(c.attack.pgd_steps);
    h.update_u64(c.attack.deepfool_max_iter);
    h.update_f64(c.attack.deepfool_overshoot);
  }
  return h.hex();
}

std::string strip_output_dir(const std::string& config_text) {
  std::istringstream in(config_text);
  std::string line, out;
  while (std::getline(in, line)) {
    if (line.rfind("output_dir", 0) == 0) continue;
    out += line + "\n";
  }
  return out;
}

struct Progress {
  std::ostream* out;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  double elapsed() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  void operator()(const std::string& msg) const {
    if (!out) return;
    char buf[32];
    std::snprintf(buf, sizeof buf, "[%8.1fs] ", elapsed());
    *out << buf << msg << std::endl;
  }
};

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

RunOutputs run_stages(const ExperimentConfig& config, Stage stage, const fs::path& dir, const Progress& log) {
  RunOutputs out;
  out.output_dir = dir;
  out.baseline_checkpoint = dir / "baseline.bset";
  out.cache_dir = dir / "cache";

  const Corpus corpus = build_corpus(config);
  const Shape input = image_shape(corpus);
  const Architecture arch = build_architecture(config, input, corpus.class_count);
  log("corpus: " + std::to_string(set_count(corpus.train)) + " train sets, " +
      std::to_string(set_count(corpus.test)) + " test sets, " + std::to_string(corpus.class_count) + " classes");

  const std::string key = training_key(config, corpus_hash(corpus), arch);
  const fs::path key_file = dir / "train.key";
  const fs::path defended_path = dir / "defended.bset";
  std::optional<Model> baseline, defended;
  if (fs::exists(key_file) && read_text(key_file) == key + "\n" && fs::exists(out.baseline_checkpoint) &&
      (!config.adversarial_training || fs::exists(defended_path))) {
    baseline = load_model(out.baseline_checkpoint);
    if (config.adversarial_training) defended = load_model(defended_path);
    out.reused_checkpoints = true;
    log("reusing checkpoints in " + dir.string());
  } else {
    const TrainingPool pool = flatten_training_pool(corpus);
    SeededRng base_rng(derive_seed(config.seed, {kBaselineStream}));
    TrainingResult base = train_classifier(arch, pool.clean, config.train.epochs, config.train, base_rng);
    log("baseline trained: " + std::to_string(base.log.size()) + " epochs, final training accuracy " +
        pct(100.0 * base.log.back().accuracy));
    save_model(base.model, out.baseline_checkpoint);
    if (config.adversarial_training) {
      SeededRng adv_rng(derive_seed(config.seed, {kDefendedStream}));
      auto adv = adversarial_train(corpus, arch, config.attack, config.train, adv_rng, &base, out.cache_dir);
      log("adversarially trained on " + std::to_string(adv.union_size) + " images (" +
          std::to_string(adv.perturbed_flipped) + " perturbed training images flipped)");
      save_model(adv.defended.model, defended_path);
      defended = std::move(adv.defended.model);
    }
    baseline = std::move(base.model);
    write_text(key_file, key + "\n");
  }
  if (defended) out.defended_checkpoint = defended_path;
  out.clean_accuracy = deterministic_accuracy(*baseline, corpus.test);
  log("baseline clean test accuracy " + pct(out.clean_accuracy));
  if (stage == Stage::train) return out;

  const Model& source = config.attack_source == AttackSource::defended ? *defended : *baseline;
  const PerturbedGalleries perturbed = perturb_galleries_cached(source, corpus.test, config.attack, out.cache_dir);
  log(std::string(attack_name(config.attack.kind)) + " test perturbation: " + std::to_string(perturbed.flipped) +
      " of " + std::to_string(image_count(corpus.test)) + " predictions flipped");
  if (stage == Stage::attack) return out;

  McConfig mc;
  mc.passes = config.passes;
  mc.seed = derive_seed(config.seed, {kMcStream});
  RowTag tag;
  tag.model = config.architecture;
  tag.attack = attack_name(config.attack.kind);
  tag.epsilon = config.attack.epsilon;

  ResultsFile results;
  results.format_version = kResultsFormatVersion;
  auto add = [&](const Model& model, bool adv_train) {
    tag.adv_train = adv_train;
    DefenceEvaluation ev = evaluate_defence(model, corpus.test, perturbed.galleries, config.ratios, mc,
                                            config.voting, tag);
    for (std::size_t i = 0; i < ev.rows.size(); ++i) {
      const auto& r = ev.rows[i];
      log("adv_train=" + std::string(adv_train ? "yes" : "no") + " R=" + pct(r.ratio) + "  SV " + pct(r.sv) +
          "  MV " + pct(r.mv) + "  EWV " + pct(r.ewv) + "  single-shot " + pct(ev.single_shot[i]));
      results.rows.push_back(r);
      results.single_shot.push_back({adv_train, r.ratio, ev.single_shot[i]});
    }
    for (auto& a : ev.audit) results.audit.push_back({adv_train, std::move(a)});
    return ev.single_shot;
  };
  out.single_shot = add(*baseline, false);
  if (defended) out.single_shot_defended = add(*defended, true);
  out.rows = results.rows;

  Manifest manifest;
  manifest.version = artifact_version();
  manifest.config_text = render_config(config);
  out.manifest_hash = manifest_hash(manifest);
  results.manifest_hash = out.manifest_hash;
  const std::string results_text = render_results(results);
  out.results = dir / "results.csv";
  write_text(out.results, results_text);
  out.results_sha256 = sha256_hex(results_text);

  manifest.results_sha256 = out.results_sha256;
  manifest.wall_time_seconds = log.elapsed();
  out.manifest = dir / "manifest.txt";
  write_text(out.manifest, render_manifest(manifest));
  log("results written to " + out.results.string());
  return out;
}

}  // namespace

const char* artifact_version() { return BSET_VERSION; }

Corpus build_corpus(const ExperimentConfig& config) {
  const auto& c = config.corpus;
  Corpus corpus;
  if (c.source == CorpusSource::synthetic) {
    SyntheticSpec spec;
    spec.class_count = c.classes;
    spec.sets_per_gallery = c.sets_per_gallery;
    spec.images_per_set = c.images_per_set;
    spec.image_shape = {1, c.image_size, c.image_size};
    spec.noise = c.noise;
    spec.train_fraction = c.train_fraction;
    spec.seed = derive_seed(config.seed, {kCorpusStream});
    corpus = synthesize_corpus(spec);
  } else {
    IdxOptions options;
    options.shuffle_seed = c.shuffle_seed;
    fs::path images = c.images, labels = c.labels;
    if (c.source == CorpusSource::mnist_subset) {
      if (images.empty()) images = default_data_dir() / "mnist5k" / "images-idx3-ubyte";
      if (labels.empty()) labels = default_data_dir() / "mnist5k" / "labels-idx1-ubyte";
    }
    corpus = load_idx_corpus(images, labels, c.set_size, c.train_fraction, options);
  }
  corpus = normalize_corpus(corpus);
  if (c.resize > 0) corpus = resize_corpus(corpus, c.resize, c.resize);
  return corpus;
}

Architecture build_architecture(const ExperimentConfig& config, const Shape& input, std::size_t classes) {
  if (config.architecture == "desk-cnn") {
    return desk_cnn(input, classes, config.dropout, static_cast<std::uint32_t>(config.hidden));
  }
  if (config.architecture == "mlp") {
    Architecture arch;
    arch.input = input;
    arch.layers = {LayerSpec::flatten(),
                   LayerSpec::dense(static_cast<std::uint32_t>(config.hidden)),
                   LayerSpec::relu(),
                   LayerSpec::dropout(config.dropout),
                   LayerSpec::dense(static_cast<std::uint32_t>(classes)),
                   LayerSpec::softmax()};
    validate_architecture(arch);
    return arch;
  }
  throw ArgumentError("unknown architecture '" + config.architecture + "'");
}

RunOutputs run_experiment(const ExperimentConfig& config, Stage stage, std::ostream* log) {
  check_config(config);
  const fs::path dir = resolve_output_dir(config);
  fs::create_directories(dir);
  Progress progress{log};
  try {
    return run_stages(config, stage, dir, progress);
  } catch (...) {
    quarantine(dir);
    throw;
  }
}

std::string render_manifest(const Manifest& m) {
  char wall[64];
  std::snprintf(wall, sizeof wall, "%.3f", m.wall_time_seconds);
  std::string out = "# run manifest\n";
  out += "version = " + m.version + "\n";
  out += "wall_time_seconds = " + std::string(wall) + "\n";
  out += "results_sha256 = " + m.results_sha256 + "\n";
  out += "# config\n";
  out += m.config_text;
  return out;
}

Manifest parse_manifest(const std::string& text) {
  Manifest m;
  const auto marker = text.find("# config\n");
  if (marker == std::string::npos) throw FormatError("manifest has no '# config' section");
  m.config_text = text.substr(marker + 9);
  std::istringstream head(text.substr(0, marker));
  std::string line;
  bool have_version = false;
  while (std::getline(head, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw FormatError("malformed manifest line '" + line + "'");
    const auto key = line.substr(0, eq), value = line.substr(eq + 3);
    if (key == "version") {
      m.version = value;
      have_version = true;
    } else if (key == "wall_time_seconds") {
      m.wall_time_seconds = std::strtod(value.c_str(), nullptr);
    } else if (key == "results_sha256") {
      m.results_sha256 = value;
    } else {
      throw FormatError("unknown manifest key '" + key + "'");
    }
  }
  if (!have_version) throw FormatError("manifest has no version");
  return m;
}

std::string manifest_hash(const Manifest& m) {
  return sha256_hex("version = " + m.version + "\n" + strip_output_dir(m.config_text));
}

ReproduceOutcome reproduce(const fs::path& manifest_path, const std::optional<fs::path>& output_dir,
                           std::ostream* log) {
  const Manifest m = parse_manifest(read_text(manifest_path));
  ExperimentConfig config = parse_config(m.config_text);
  if (output_dir) config.output_dir = *output_dir;
  ReproduceOutcome outcome;
  outcome.expected_sha256 = m.results_sha256;
  outcome.outputs = run_experiment(config, Stage::evaluate, log);
  outcome.matches = outcome.outputs.results_sha256 == m.results_sha256;
  return outcome;
}

}  // namespace bset
