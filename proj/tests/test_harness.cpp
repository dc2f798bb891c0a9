#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "bset/checkpoint.hpp"
#include "bset/config.hpp"
#include "bset/error.hpp"
#include "bset/experiment.hpp"
#include "bset/hash.hpp"
#include "bset/report.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace bset;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

std::vector<std::string> problems_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    return e.problems();
  }
  return {};
}

bool mentions(const std::vector<std::string>& problems, const std::string& needle) {
  for (const auto& p : problems) {
    if (p.find(needle) != std::string::npos) return true;
  }
  return false;
}

// Three classes, a handful of sets, a few epochs: seconds per run.
ExperimentConfig tiny_config(const fs::path& out) {
  ExperimentConfig c;
  c.corpus.classes = 3;
  c.corpus.sets_per_gallery = 4;
  c.corpus.images_per_set = 5;
  c.corpus.train_fraction = 0.5;
  c.train.epochs = 3;
  c.train.adversarial_epochs = 3;
  c.train.learning_rate = 2e-3;
  c.train.batch_size = 16;
  c.attack.epsilon = 0.2;
  c.passes = 5;
  c.seed = 9;
  c.output_dir = out;
  return c;
}

ResultsFile sample_results(const std::string& hash) {
  ResultsFile r;
  r.manifest_hash = hash;
  ResultRow row;
  row.model = "desk-cnn";
  row.attack = "FGSM";
  row.epsilon = 0.3;
  row.ratio = 0.5;
  row.sv = 96.1875;
  row.mv = 95.0;
  row.ewv = 100.0;
  r.rows.push_back(row);
  r.single_shot.push_back({false, 0.5, 74.78});
  return r;
}

}  // namespace

TEST_CASE("empty config yields the defaults") {
  const ExperimentConfig c = parse_config("");
  CHECK(c.corpus.source == CorpusSource::synthetic);
  CHECK(c.attack.kind == AttackKind::fgsm);
  CHECK(c.attack.epsilon == 0.05);
  CHECK(c.passes == 50);
  CHECK(c.ratios == std::vector<double>{0.0, 0.5, 0.8, 1.0});
  CHECK(c.voting.beta == -1.0);
  CHECK(c.voting.tie_break == TieBreak::highest_mean_posterior);
  CHECK(c.attack_source == AttackSource::baseline);
  CHECK(c.adversarial_training);
  CHECK(c.train.epochs == 20);
  CHECK(c.train.adversarial_epochs == 20);
  CHECK(c.attack.pgd_steps == 10);
  CHECK(c.attack.deepfool_max_iter == 50);
  CHECK(c.attack.deepfool_overshoot == 0.02);
}

TEST_CASE("config values are read per section") {
  const ExperimentConfig c = parse_config(
      "# comment\n"
      "[attack]\nkind = pgd\nepsilon = 0.3\npgd_steps = 4\n"
      "[defence]\nratios = 0, 1\npasses = 7\n"
      "[voting]\nbeta = -2\ntie_break = lowest-class-index\n"
      "[run]\nseed = 42\n",
      {{"attack.epsilon", "0.1"}});
  CHECK(c.attack.kind == AttackKind::pgd);
  CHECK(c.attack.epsilon == 0.1);
  CHECK(c.attack.pgd_steps == 4);
  CHECK(c.ratios == std::vector<double>{0.0, 1.0});
  CHECK(c.passes == 7);
  CHECK(c.voting.beta == -2.0);
  CHECK(c.voting.tie_break == TieBreak::lowest_class_index);
  CHECK(c.seed == 42);
}

TEST_CASE("out-of-range ratio names the key and the bound") {
  const auto p = problems_of([] { parse_config("[defence]\nratios = 0, 1.5\n"); });
  REQUIRE(p.size() == 1);
  CHECK(p[0].find("defence.ratios") != std::string::npos);
  CHECK(p[0].find("[0, 1]") != std::string::npos);
}

TEST_CASE("every config problem is reported at once") {
  const auto p = problems_of([] {
    parse_config("[attack]\nepsilon = -1\nflavour = x\n[defence]\npasses = 0\n[voting]\nbeta = abc\n",
                 {{"run.colour", "red"}});
  });
  CHECK(p.size() >= 5);
  CHECK(mentions(p, "attack.epsilon"));
  CHECK(mentions(p, "unknown key attack.flavour"));
  CHECK(mentions(p, "defence.passes"));
  CHECK(mentions(p, "voting.beta"));
  CHECK(mentions(p, "run.colour"));
}

TEST_CASE("missing corpus files are reported") {
  const auto dir = testing::scratch_dir("cfg-missing");
  write_file(dir / "exp.ini", "[corpus]\nsource = idx\nimages = nope.idx\nlabels = nope2.idx\n[run]\noutput_dir = " +
                                  (dir / "out").string() + "\n");
  const auto p = problems_of([&] { validate_config(dir / "exp.ini"); });
  CHECK(mentions(p, "corpus.images"));
  CHECK(mentions(p, "corpus.labels"));
}

TEST_CASE("rendered config parses back to itself") {
  ExperimentConfig c = tiny_config("somewhere");
  c.attack.kind = AttackKind::deepfool;
  c.ratios = {0.0, 0.25, 1.0};
  c.corpus.shuffle_seed = 5;
  c.voting.beta = -0.1;
  const std::string text = render_config(c);
  const ExperimentConfig back = parse_config(text);
  CHECK(render_config(back) == text);
  CHECK(back.ratios == c.ratios);
  CHECK(back.voting.beta == -0.1);
  CHECK(back.corpus.shuffle_seed == std::optional<std::uint64_t>(5));
}

TEST_CASE("results file round trip") {
  ResultsFile r = sample_results("abc");
  SetAudit a;
  a.ratio = 0.5;
  a.gallery = 1;
  a.set = 2;
  a.truth = 1;
  a.outcome.mv = 1;
  a.outcome.mv_scores = {1, 4};
  a.outcome.sv_scores = {0.25, 0.75};
  a.outcome.ewv_scores = {5.5, 6.25};
  r.audit.push_back({true, a});
  const ResultsFile back = parse_results(render_results(r));
  CHECK(render_results(back) == render_results(r));
  REQUIRE(back.rows.size() == 1);
  CHECK(back.rows[0].sv == doctest::Approx(96.19).epsilon(1e-12));
  CHECK(back.audit[0].set.outcome.ewv_scores == std::vector<double>{5.5, 6.25});
  CHECK_THROWS_AS(parse_results("nonsense"), FormatError);
}

TEST_CASE("report: one row in, one row out") {
  const Report rep = render_report(std::vector<ResultsFile>{sample_results("h1")});
  CHECK(rep.files_used == 1);
  std::istringstream csv(rep.csv);
  std::string header, row, extra;
  std::getline(csv, header);
  std::getline(csv, row);
  CHECK(header == "model,attack,adv_train,epsilon,ratio,sv,mv,ewv");
  CHECK(row == "desk-cnn,FGSM,no,0.3,0.50,96.19,95.00,100.00");
  CHECK(rep.text.find("96.19") != std::string::npos);
  CHECK(rep.text.find("74.78") != std::string::npos);
}

TEST_CASE("report: duplicate runs merge and versions must agree") {
  const Report rep = render_report(std::vector<ResultsFile>{sample_results("h1"), sample_results("h1")});
  CHECK(rep.files_used == 1);
  std::size_t lines = 0;
  std::istringstream csv(rep.csv);
  for (std::string l; std::getline(csv, l);) lines += l.rfind("desk-cnn,", 0) == 0;
  CHECK(lines == 1);
  CHECK(render_report(std::vector<ResultsFile>{sample_results("h1"), sample_results("h2")}).files_used == 2);
  ResultsFile newer = sample_results("h3");
  newer.format_version = 2;
  CHECK_THROWS_AS(render_report(std::vector<ResultsFile>{sample_results("h1"), newer}), FormatError);
  CHECK_THROWS_AS(render_report(std::vector<ResultsFile>{}), ArgumentError);
}

TEST_CASE("manifest hash ignores output location and timing") {
  Manifest a{"1.0", 12.5, "aaa", "[run]\nseed = 1\noutput_dir = x\n"};
  Manifest b{"1.0", 99.0, "bbb", "[run]\nseed = 1\noutput_dir = y\n"};
  CHECK(manifest_hash(a) == manifest_hash(b));
  b.config_text = "[run]\nseed = 2\noutput_dir = y\n";
  CHECK(manifest_hash(a) != manifest_hash(b));
  const Manifest back = parse_manifest(render_manifest(a));
  CHECK(back.version == "1.0");
  CHECK(back.results_sha256 == "aaa");
  CHECK(back.config_text == a.config_text);
}

TEST_CASE("experiment runs are reproducible and reusable") {
  const auto root = testing::scratch_dir("run-repro");
  const ExperimentConfig c = tiny_config(root / "a");
  const RunOutputs first = run_experiment(c);
  CHECK(fs::exists(first.results));
  CHECK(fs::exists(first.manifest));
  CHECK(fs::exists(first.baseline_checkpoint));
  REQUIRE(first.defended_checkpoint.has_value());
  CHECK(fs::exists(*first.defended_checkpoint));
  CHECK(first.rows.size() == 2 * c.ratios.size());
  CHECK(first.results_sha256 == sha256_hex(read_file(first.results)));

  ExperimentConfig other_dir = c;
  other_dir.output_dir = root / "b";
  const RunOutputs second = run_experiment(other_dir);
  CHECK(second.results_sha256 == first.results_sha256);
  CHECK(second.manifest_hash == first.manifest_hash);
  CHECK_FALSE(second.reused_checkpoints);

  const RunOutputs again = run_experiment(c);
  CHECK(again.reused_checkpoints);
  CHECK(again.results_sha256 == first.results_sha256);

  const ReproduceOutcome rep = reproduce(first.manifest, root / "c");
  CHECK(rep.matches);
  CHECK(rep.expected_sha256 == first.results_sha256);

  ExperimentConfig reseeded = c;
  reseeded.seed = 10;
  reseeded.output_dir = root / "d";
  CHECK(run_experiment(reseeded).results_sha256 != first.results_sha256);
}

TEST_CASE("staged runs stop early") {
  const auto root = testing::scratch_dir("run-stages");
  const RunOutputs t = run_experiment(tiny_config(root), Stage::train);
  CHECK(fs::exists(t.baseline_checkpoint));
  CHECK(t.results.empty());
  CHECK_FALSE(fs::exists(root / "results.csv"));
  const RunOutputs e = run_experiment(tiny_config(root), Stage::evaluate);
  CHECK(e.reused_checkpoints);
  CHECK(fs::exists(e.results));
}

TEST_CASE("a failing run is quarantined") {
  const auto root = testing::scratch_dir("run-fail");
  const auto inputs = testing::scratch_dir("run-fail-inputs");
  write_file(inputs / "images.idx", "not an idx file");
  write_file(inputs / "labels.idx", "not an idx file");
  ExperimentConfig c = tiny_config(root);
  c.corpus.source = CorpusSource::idx;
  c.corpus.images = inputs / "images.idx";
  c.corpus.labels = inputs / "labels.idx";
  write_file(root / "stale.txt", "left by an earlier run");
  CHECK_THROWS_AS(run_experiment(c), FormatError);
  std::size_t quarantined = 0;
  for (const auto& e : fs::directory_iterator(root)) {
    CHECK(e.path().filename().string().rfind("failed-", 0) == 0);
    ++quarantined;
  }
  CHECK(quarantined == 1);
}

TEST_CASE("ratio 0 reproduces the clean set accuracy") {
  const auto root = testing::scratch_dir("run-clean");
  ExperimentConfig c = tiny_config(root);
  c.ratios = {0.0};
  c.adversarial_training = false;
  c.corpus.classes = 4;
  const RunOutputs out = run_experiment(c);
  REQUIRE(out.rows.size() == 1);
  const Corpus corpus = build_corpus(c);
  const Model model = load_model(out.baseline_checkpoint);
  McConfig mc;
  mc.passes = c.passes;
  mc.seed = derive_seed(c.seed, {4});
  const auto clean = evaluate_defence(model, corpus.test, corpus.test, {0.0}, mc, c.voting, {});
  CHECK(out.rows[0].sv == clean.rows[0].sv);
  CHECK(out.rows[0].mv == clean.rows[0].mv);
  CHECK(out.rows[0].ewv == clean.rows[0].ewv);
}

TEST_CASE("adversarially trained synthetic run survives FGSM at 0.3") {
  const auto root = testing::scratch_dir("run-synthetic");
  ExperimentConfig c;
  c.attack.epsilon = 0.3;
  c.passes = 20;
  c.seed = 1;
  c.output_dir = root;
  const RunOutputs out = run_experiment(c);
  const ResultRow& last = out.rows.back();
  CHECK(last.adv_train);
  CHECK(last.ratio == 1.0);
  MESSAGE("final row SV " << last.sv << " MV " << last.mv << " EWV " << last.ewv);
  CHECK(last.sv >= 95.0);
  CHECK(last.mv >= 95.0);
  CHECK(last.ewv >= 95.0);
}

#ifdef BSET_CLI_PATH
TEST_CASE("command-line exit codes") {
  const auto dir = testing::scratch_dir("cli");
  auto run = [&](const std::string& args) {
    const std::string cmd = std::string(BSET_CLI_PATH) + " -q " + args + " >" + (dir / "log").string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  };
  write_file(dir / "bad.ini", "[defence]\nratios = 2\n");
  CHECK(run("evaluate " + (dir / "bad.ini").string()) == 1);
  CHECK(read_file(dir / "log").find("defence.ratios") != std::string::npos);
  CHECK(run("evaluate --no-such-flag") == 1);
  write_file(dir / "broken.csv", "garbage\n");
  CHECK(run("report " + (dir / "broken.csv").string()) == 2);
  CHECK(run("train --run.output_dir " + (dir / "out").string() +
            " --corpus.classes 2 --corpus.sets_per_gallery 2 --corpus.images_per_set 2 --train.epochs 1") == 0);
  CHECK(fs::exists(dir / "out" / "baseline.bset"));
}
#endif
