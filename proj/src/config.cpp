#include "bset/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "bset/error.hpp"

#ifndef BSET_DATA_DIR
#define BSET_DATA_DIR "data"
#endif

namespace bset {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string fmt_double(double v) {
  // Shortest form that survives a round trip.
  char buf[64];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

std::optional<double> to_double(const std::string& s) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::optional<std::uint64_t> to_u64(const std::string& s) {
  std::uint64_t v = 0;
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end || s.empty()) return std::nullopt;
  return v;
}

std::optional<bool> to_bool(const std::string& s) {
  const auto l = lower(s);
  if (l == "true" || l == "yes" || l == "on" || l == "1") return true;
  if (l == "false" || l == "no" || l == "off" || l == "0") return false;
  return std::nullopt;
}

// Setters return an error message, empty on success.
struct Field {
  const char* section;
  const char* key;
  std::function<std::string(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

Field make_size(const char* section, const char* key, std::function<std::size_t&(ExperimentConfig&)> ref) {
  return {section, key,
          [ref](ExperimentConfig& c, const std::string& v) -> std::string {
            auto n = to_u64(v);
            if (!n) return "expected a non-negative integer, got '" + v + "'";
            ref(c) = static_cast<std::size_t>(*n);
            return {};
          },
          [ref](const ExperimentConfig& c) { return std::to_string(ref(const_cast<ExperimentConfig&>(c))); }};
}

Field make_double(const char* section, const char* key, std::function<double&(ExperimentConfig&)> ref) {
  return {section, key,
          [ref](ExperimentConfig& c, const std::string& v) -> std::string {
            auto d = to_double(v);
            if (!d) return "expected a finite number, got '" + v + "'";
            ref(c) = *d;
            return {};
          },
          [ref](const ExperimentConfig& c) { return fmt_double(ref(const_cast<ExperimentConfig&>(c))); }};
}

Field make_path(const char* section, const char* key,
                std::function<std::filesystem::path&(ExperimentConfig&)> ref) {
  return {section, key,
          [ref](ExperimentConfig& c, const std::string& v) -> std::string {
            ref(c) = v;
            return {};
          },
          [ref](const ExperimentConfig& c) { return ref(const_cast<ExperimentConfig&>(c)).string(); }};
}

const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  static const std::vector<Field> table = {
      {"corpus", "source",
       [](C& c, const std::string& v) -> std::string {
         const auto l = lower(v);
         if (l == "synthetic") c.corpus.source = CorpusSource::synthetic;
         else if (l == "idx") c.corpus.source = CorpusSource::idx;
         else if (l == "mnist-subset") c.corpus.source = CorpusSource::mnist_subset;
         else return "expected synthetic, idx or mnist-subset, got '" + v + "'";
         return {};
       },
       [](const C& c) -> std::string { return corpus_source_name(c.corpus.source); }},
      make_path("corpus", "images", [](C& c) -> std::filesystem::path& { return c.corpus.images; }),
      make_path("corpus", "labels", [](C& c) -> std::filesystem::path& { return c.corpus.labels; }),
      make_size("corpus", "set_size", [](C& c) -> std::size_t& { return c.corpus.set_size; }),
      {"corpus", "shuffle_seed",
       [](C& c, const std::string& v) -> std::string {
         if (lower(v) == "none") {
           c.corpus.shuffle_seed.reset();
           return {};
         }
         auto n = to_u64(v);
         if (!n) return "expected an integer or none, got '" + v + "'";
         c.corpus.shuffle_seed = *n;
         return {};
       },
       [](const C& c) -> std::string {
         return c.corpus.shuffle_seed ? std::to_string(*c.corpus.shuffle_seed) : "none";
       }},
      make_size("corpus", "classes", [](C& c) -> std::size_t& { return c.corpus.classes; }),
      make_size("corpus", "sets_per_gallery", [](C& c) -> std::size_t& { return c.corpus.sets_per_gallery; }),
      make_size("corpus", "images_per_set", [](C& c) -> std::size_t& { return c.corpus.images_per_set; }),
      make_size("corpus", "image_size", [](C& c) -> std::size_t& { return c.corpus.image_size; }),
      make_double("corpus", "noise", [](C& c) -> double& { return c.corpus.noise; }),
      make_double("corpus", "train_fraction", [](C& c) -> double& { return c.corpus.train_fraction; }),
      make_size("corpus", "resize", [](C& c) -> std::size_t& { return c.corpus.resize; }),

      {"model", "architecture",
       [](C& c, const std::string& v) -> std::string {
         c.architecture = lower(v);
         return {};
       },
       [](const C& c) { return c.architecture; }},
      make_double("model", "dropout", [](C& c) -> double& { return c.dropout; }),
      make_size("model", "hidden", [](C& c) -> std::size_t& { return c.hidden; }),

      make_size("train", "epochs", [](C& c) -> std::size_t& { return c.train.epochs; }),
      make_size("train", "adv_epochs", [](C& c) -> std::size_t& { return c.train.adversarial_epochs; }),
      make_double("train", "lr", [](C& c) -> double& { return c.train.learning_rate; }),
      make_size("train", "batch", [](C& c) -> std::size_t& { return c.train.batch_size; }),
      make_double("train", "early_stop", [](C& c) -> double& { return c.train.early_stop_accuracy; }),

      {"attack", "kind",
       [](C& c, const std::string& v) -> std::string {
         auto k = parse_attack(v);
         if (!k) return "expected fgsm, pgd or deepfool, got '" + v + "'";
         c.attack.kind = *k;
         return {};
       },
       [](const C& c) { return lower(attack_name(c.attack.kind)); }},
      make_double("attack", "epsilon", [](C& c) -> double& { return c.attack.epsilon; }),
      make_double("attack", "pgd_step", [](C& c) -> double& { return c.attack.pgd_step; }),
      make_size("attack", "pgd_steps", [](C& c) -> std::size_t& { return c.attack.pgd_steps; }),
      make_size("attack", "deepfool_max_iter", [](C& c) -> std::size_t& { return c.attack.deepfool_max_iter; }),
      make_double("attack", "deepfool_overshoot", [](C& c) -> double& { return c.attack.deepfool_overshoot; }),
      {"attack", "source",
       [](C& c, const std::string& v) -> std::string {
         const auto l = lower(v);
         if (l == "baseline") c.attack_source = AttackSource::baseline;
         else if (l == "defended") c.attack_source = AttackSource::defended;
         else return "expected baseline or defended, got '" + v + "'";
         return {};
       },
       [](const C& c) -> std::string {
         return c.attack_source == AttackSource::baseline ? "baseline" : "defended";
       }},

      {"defence", "adversarial_training",
       [](C& c, const std::string& v) -> std::string {
         auto b = to_bool(v);
         if (!b) return "expected true or false, got '" + v + "'";
         c.adversarial_training = *b;
         return {};
       },
       [](const C& c) -> std::string { return c.adversarial_training ? "true" : "false"; }},
      {"defence", "ratios",
       [](C& c, const std::string& v) -> std::string {
         std::vector<double> out;
         std::stringstream ss(v);
         std::string item;
         while (std::getline(ss, item, ',')) {
           auto d = to_double(trim(item));
           if (!d) return "expected a comma-separated list of numbers, got '" + v + "'";
           out.push_back(*d);
         }
         c.ratios = std::move(out);
         return {};
       },
       [](const C& c) {
         std::string s;
         for (std::size_t i = 0; i < c.ratios.size(); ++i) s += (i ? ", " : "") + fmt_double(c.ratios[i]);
         return s;
       }},
      make_size("defence", "passes", [](C& c) -> std::size_t& { return c.passes; }),

      make_double("voting", "beta", [](C& c) -> double& { return c.voting.beta; }),
      {"voting", "tie_break",
       [](C& c, const std::string& v) -> std::string {
         auto t = parse_tie_break(lower(v));
         if (!t) return "expected highest-mean-posterior or lowest-class-index, got '" + v + "'";
         c.voting.tie_break = *t;
         return {};
       },
       [](const C& c) -> std::string { return tie_break_name(c.voting.tie_break); }},

      {"run", "seed",
       [](C& c, const std::string& v) -> std::string {
         auto n = to_u64(v);
         if (!n) return "expected a non-negative integer, got '" + v + "'";
         c.seed = *n;
         return {};
       },
       [](const C& c) { return std::to_string(c.seed); }},
      make_path("run", "output_dir", [](C& c) -> std::filesystem::path& { return c.output_dir; }),
  };
  return table;
}

const Field* find_field(const std::string& section, const std::string& key) {
  for (const auto& f : fields()) {
    if (section == f.section && key == f.key) return &f;
  }
  return nullptr;
}

void apply(ExperimentConfig& config, const std::string& section, const std::string& key,
           const std::string& value, const std::string& where, std::vector<std::string>& problems) {
  const Field* f = find_field(section, key);
  if (!f) {
    problems.push_back(where + "unknown key " + section + "." + key);
    return;
  }
  if (auto err = f->set(config, value); !err.empty()) {
    problems.push_back(where + section + "." + key + ": " + err);
  }
}

void apply_text(ExperimentConfig& config, std::string_view text, std::vector<std::string>& problems) {
  std::string section;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') {
        problems.push_back(where + "malformed section header '" + line + "'");
        continue;
      }
      section = lower(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      problems.push_back(where + "expected key = value, got '" + line + "'");
      continue;
    }
    if (section.empty()) {
      problems.push_back(where + "key outside of any [section]");
      continue;
    }
    apply(config, section, lower(trim(line.substr(0, eq))), trim(line.substr(eq + 1)), where, problems);
  }
}

void apply_overrides(ExperimentConfig& config, const ConfigOverrides& overrides,
                     std::vector<std::string>& problems) {
  for (const auto& [name, value] : overrides) {
    const auto dot = name.find('.');
    if (dot == std::string::npos) {
      problems.push_back("override '" + name + "' is not of the form section.key");
      continue;
    }
    apply(config, lower(name.substr(0, dot)), lower(name.substr(dot + 1)), value, "override: ", problems);
  }
}

void check_ranges(ExperimentConfig& c, std::vector<std::string>& problems) {
  auto need = [&](bool ok, const std::string& msg) {
    if (!ok) problems.push_back(msg);
  };
  const auto& k = c.corpus;
  if (k.source == CorpusSource::synthetic) {
    need(k.classes >= 2, "corpus.classes: must be at least 2");
    need(k.sets_per_gallery >= 2, "corpus.sets_per_gallery: must be at least 2 (train and test)");
    need(k.images_per_set >= 1, "corpus.images_per_set: must be at least 1");
    need(k.image_size >= 4, "corpus.image_size: must be at least 4");
    need(k.noise >= 0.0, "corpus.noise: must be non-negative");
  } else {
    need(k.set_size >= 1, "corpus.set_size: must be at least 1");
    if (k.source == CorpusSource::idx) {
      need(!k.images.empty(), "corpus.images: required for source idx");
      need(!k.labels.empty(), "corpus.labels: required for source idx");
    }
  }
  need(k.train_fraction > 0.0 && k.train_fraction < 1.0, "corpus.train_fraction: must lie in (0, 1)");
  need(k.resize == 0 || k.resize >= 4, "corpus.resize: must be 0 (off) or at least 4");

  need(c.architecture == "desk-cnn" || c.architecture == "mlp",
       "model.architecture: expected desk-cnn or mlp, got '" + c.architecture + "'");
  need(c.dropout >= 0.0 && c.dropout < 1.0, "model.dropout: must lie in [0, 1)");
  need(c.hidden >= 1, "model.hidden: must be at least 1");

  need(c.train.epochs >= 1, "train.epochs: must be at least 1");
  need(!c.adversarial_training || c.train.adversarial_epochs >= 1, "train.adv_epochs: must be at least 1");
  need(c.train.learning_rate > 0.0, "train.lr: must be positive");
  need(c.train.batch_size >= 1, "train.batch: must be at least 1");
  need(c.train.early_stop_accuracy > 0.0 && c.train.early_stop_accuracy <= 1.0,
       "train.early_stop: must lie in (0, 1]");

  need(c.attack.epsilon >= 0.0 && c.attack.epsilon <= 1.0, "attack.epsilon: must lie in [0, 1]");
  need(c.attack.pgd_step >= 0.0, "attack.pgd_step: must be non-negative (0 selects epsilon / 4)");
  need(c.attack.pgd_steps >= 1, "attack.pgd_steps: must be at least 1");
  need(c.attack.deepfool_max_iter >= 1, "attack.deepfool_max_iter: must be at least 1");
  need(c.attack.deepfool_overshoot >= 0.0, "attack.deepfool_overshoot: must be non-negative");
  need(c.adversarial_training || c.attack_source == AttackSource::baseline,
       "attack.source: defended requires defence.adversarial_training = true");

  need(!c.ratios.empty(), "defence.ratios: at least one ratio is required");
  for (double r : c.ratios) {
    need(r >= 0.0 && r <= 1.0, "defence.ratios: " + fmt_double(r) + " is outside the bound [0, 1]");
  }
  need(c.passes >= 1, "defence.passes: must be at least 1");

  need(std::abs(c.voting.beta) <= kMaxAbsBeta, "voting.beta: |beta| must not exceed " + fmt_double(kMaxAbsBeta));

  need(!c.output_dir.empty(), "run.output_dir: must not be empty");

  if (c.corpus.source == CorpusSource::mnist_subset) {
    if (c.corpus.images.empty()) c.corpus.images = default_data_dir() / "mnist5k" / "images-idx3-ubyte";
    if (c.corpus.labels.empty()) c.corpus.labels = default_data_dir() / "mnist5k" / "labels-idx1-ubyte";
  }
}

void check_files(const ExperimentConfig& c, std::vector<std::string>& problems) {
  if (c.corpus.source != CorpusSource::synthetic) {
    if (!c.corpus.images.empty() && !std::filesystem::is_regular_file(c.corpus.images)) {
      problems.push_back("corpus.images: file not found: " + c.corpus.images.string());
    }
    if (!c.corpus.labels.empty() && !std::filesystem::is_regular_file(c.corpus.labels)) {
      problems.push_back("corpus.labels: file not found: " + c.corpus.labels.string());
    }
  }
  if (c.output_dir.empty()) return;
  const auto dir = resolve_output_dir(c);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    problems.push_back("run.output_dir: cannot create directory " + dir.string());
    return;
  }
  const auto probe = dir / ".write-probe";
  {
    std::ofstream out(probe);
    if (!(out << "ok")) problems.push_back("run.output_dir: directory is not writable: " + dir.string());
  }
  std::filesystem::remove(probe, ec);
}

}  // namespace

const char* corpus_source_name(CorpusSource source) {
  switch (source) {
    case CorpusSource::synthetic: return "synthetic";
    case CorpusSource::idx: return "idx";
    case CorpusSource::mnist_subset: return "mnist-subset";
  }
  return "?";
}

std::filesystem::path default_data_dir() {
  if (const char* env = std::getenv("BSET_DATA_DIR"); env && *env) return env;
  return BSET_DATA_DIR;
}

ExperimentConfig parse_config(std::string_view text, const ConfigOverrides& overrides) {
  ExperimentConfig config;
  std::vector<std::string> problems;
  apply_text(config, text, problems);
  apply_overrides(config, overrides, problems);
  check_ranges(config, problems);
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return config;
}

ExperimentConfig validate_config(const std::filesystem::path& path, const ConfigOverrides& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"cannot read config file " + path.string()});
  std::stringstream buf;
  buf << in.rdbuf();

  ExperimentConfig config;
  std::vector<std::string> problems;
  apply_text(config, buf.str(), problems);
  const auto base = path.parent_path();
  for (auto* p : {&config.corpus.images, &config.corpus.labels}) {
    if (!p->empty() && p->is_relative()) *p = base / *p;
  }
  apply_overrides(config, overrides, problems);
  check_ranges(config, problems);
  check_files(config, problems);
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return config;
}

void check_config(const ExperimentConfig& config) {
  ExperimentConfig copy = config;
  std::vector<std::string> problems;
  check_ranges(copy, problems);
  check_files(copy, problems);
  if (!problems.empty()) throw ConfigError(std::move(problems));
}

std::string render_config(const ExperimentConfig& config) {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    if (section != f.section) {
      if (!section.empty()) out += '\n';
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += std::string(f.key) + " = " + f.get(config) + "\n";
  }
  return out;
}

std::filesystem::path resolve_output_dir(const ExperimentConfig& config) {
  if (config.output_dir.is_relative()) {
    if (const char* root = std::getenv("BSET_OUTPUT_ROOT"); root && *root) {
      return std::filesystem::path(root) / config.output_dir;
    }
  }
  return config.output_dir;
}

}  // namespace bset
