#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include <json.hpp>

#include "ordl/csv.hpp"
#include "ordl/harness.hpp"
#include "support.hpp"

using namespace ordl;
namespace fs = std::filesystem;

namespace {

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = testing::slurp(e.path());
  }
  return out;
}

fs::path run_dir_of(const std::vector<RunResult>& results, const std::string& cell) {
  for (const auto& r : results) {
    if (r.cell.name() == cell) return r.run_dir;
  }
  FAIL("no run for " << cell);
  return {};
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start < text.size()) {
    const auto nl = text.find('\n', start);
    out.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  return out;
}

}  // namespace

TEST_CASE("config defaults, overrides and relative paths") {
  const auto dir = testing::scratch_dir("harness-config");
  const auto f = testing::make_toy_fixture(dir);
  auto c = ExperimentConfig::load(f.config);
  CHECK(c.corpus_path == fs::absolute(f.transcripts).lexically_normal());
  CHECK(c.output_dir == fs::absolute(dir / "out").lexically_normal());
  CHECK(c.seeds == std::vector<std::uint64_t>{1, 2});
  CHECK(c.srn.hidden_size == 16);
  CHECK(c.srn.epochs_per_partition == 20);
  CHECK(c.measure == SimilarityMeasure::cosine);
  CHECK(c.threshold_step == 0.001);
  CHECK_NOTHROW(c.validate());

  c = ExperimentConfig::load(f.config, {"srn.hidden_size=32", "design.seeds=[4,5,6]", "evaluation.similarity=correlation",
                                        "output.dir=elsewhere"});
  CHECK(c.srn.hidden_size == 32);
  CHECK(c.seeds.size() == 3);
  CHECK(c.measure == SimilarityMeasure::correlation);
  CHECK(c.output_dir.filename() == "elsewhere");

  CHECK_THROWS_AS(ExperimentConfig::load(f.config, {"srn.hiden_size=3"}), ValidationError);
  CHECK_THROWS_AS(ExperimentConfig::load(f.config, {"nonsense"}), ValidationError);
  CHECK_THROWS_AS(ExperimentConfig::load(f.config, {"srn.window=\"seven\""}), ValidationError);
  CHECK_THROWS_AS(ExperimentConfig::from_json_text("{\"schema_version\": 2}"), ValidationError);
  CHECK_THROWS_AS(ExperimentConfig::from_json_text("[1]"), ValidationError);

  auto bad = ExperimentConfig::load(f.config, {"design.seeds=[1,1]"});
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = ExperimentConfig::load(f.config, {"corpus.path=missing.jsonl"});
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = ExperimentConfig::load(f.config, {"evaluation.threshold_step=0.3"});
  CHECK_THROWS_AS(bad.validate(), ValidationError);

  // Canonical text is a fixed point.
  const auto text = c.to_json_text();
  CHECK(ExperimentConfig::from_json_text(text).to_json_text() == text);
}

TEST_CASE("cells and derived seeds") {
  ExperimentConfig c;
  c.seeds = {1, 2, 3, 4, 5};
  CHECK(enumerate_cells(c).size() == 10);
  c.punctuation = {PunctuationMode::retained, PunctuationMode::removed};
  const auto cells = enumerate_cells(c);
  CHECK(cells.size() == 20);
  CHECK(cells[0].name() == "chronological-retained-seed1");

  const CellDescriptor chrono{OrderingMode::Kind::chronological, PunctuationMode::retained, 3};
  const CellDescriptor shuf{OrderingMode::Kind::shuffled, PunctuationMode::retained, 3};
  const CellDescriptor other{OrderingMode::Kind::shuffled, PunctuationMode::retained, 4};
  const auto a = derive_cell_seeds(7, chrono), b = derive_cell_seeds(7, shuf), d = derive_cell_seeds(7, other);
  CHECK(a.weights == b.weights);
  CHECK(a.evaluation == b.evaluation);
  CHECK(a.corpus != b.corpus);
  CHECK(b.corpus != d.corpus);
  CHECK(b.weights != d.weights);
  CHECK(derive_cell_seeds(8, shuf).corpus != b.corpus);
  CHECK(derive_cell_seeds(7, shuf).corpus == b.corpus);
}

TEST_CASE("toy experiment: outputs, schemas, determinism and resume") {
  const auto dir = testing::scratch_dir("harness-toy");
  const auto f = testing::make_toy_fixture(dir);
  const auto config = ExperimentConfig::load(f.config, {"output.dir=a"});

  testing::WarningCapture quiet;
  const auto results = run_experiment(config);
  REQUIRE(results.size() == 4);
  for (const auto& r : results) {
    CHECK(r.status == RunResult::Status::completed);
    REQUIRE(r.checkpoints.size() == 6);
    CHECK(r.checkpoints.back().partitions_trained == 8);
    CHECK(r.checkpoints.back().tokens_trained == 4000);
    for (const auto& m : r.checkpoints) CHECK(m.semantic.size() == 3);
    CHECK(r.checkpoints.back().cross_entropy < r.checkpoints.front().cross_entropy);
    for (int k = 0; k < 6; ++k) {
      CHECK(fs::exists(r.run_dir / ("checkpoint_" + std::to_string(k) + ".srnw")));
      CHECK(fs::exists(r.run_dir / ("metrics_" + std::to_string(k) + ".json")));
      for (const char* cond : {"ordered", "shuffled", "none"}) {
        CHECK(fs::exists(r.run_dir / ("semantic_" + std::to_string(k) + "_" + cond + ".csv")));
      }
    }
    const auto meta = nlohmann::json::parse(testing::slurp(r.run_dir / "run.json"));
    CHECK(meta.at("derived_seeds").at("weights").get<std::uint64_t>() == r.seeds.weights);
    CHECK(meta.at("identity").at("formats").at("checkpoint") == 1);
  }
  // Checkpoint 0 shares weights across orderings, so the stream-free
  // condition must agree byte for byte.
  for (const char* seed : {"seed1", "seed2"}) {
    const auto c = run_dir_of(results, std::string("chronological-retained-") + seed);
    const auto s = run_dir_of(results, std::string("shuffled-retained-") + seed);
    CHECK(testing::slurp(c / "checkpoint_0.srnw") == testing::slurp(s / "checkpoint_0.srnw"));
    CHECK(testing::slurp(c / "semantic_0_none.csv") == testing::slurp(s / "semantic_0_none.csv"));
    CHECK(testing::slurp(c / "semantic_5_none.csv") != testing::slurp(s / "semantic_5_none.csv"));
  }

  const auto table = emit_report(results, config.output_dir);
  CHECK(table.rows.size() == 4u * 6u * (1u + 3u));
  const auto out = config.output_dir;
  for (const char* name : {"config.json", "manifest.json", "report_long.csv", "trajectory_cross_entropy.csv",
                           "trajectory_balanced_accuracy.csv", "cross_entropy.svg", "balanced_accuracy_retained.svg"}) {
    CHECK_MESSAGE(fs::exists(out / name), name);
  }
  const auto long_lines = lines(testing::slurp(out / "report_long.csv"));
  CHECK(long_lines.front() == kLongCsvHeader);
  CHECK(long_lines.size() == 1 + 96);
  const auto ce_lines = lines(testing::slurp(out / "trajectory_cross_entropy.csv"));
  CHECK(ce_lines.front() == kCrossEntropyCsvHeader);
  CHECK(ce_lines.size() == 1 + 2 * 6);
  const auto ba_lines = lines(testing::slurp(out / "trajectory_balanced_accuracy.csv"));
  CHECK(ba_lines.front() == kBalancedAccuracyCsvHeader);
  CHECK(ba_lines.size() == 1 + 2 * 3 * 6);
  CHECK(lines(testing::slurp(results[0].run_dir / "semantic_3_ordered.csv")).front() ==
        "kind,probe,category,balanced_accuracy,threshold,status");

  // Wide means/SDs recomputed from the long table.
  const auto back = read_long_csv(out / "report_long.csv");
  CHECK(back.rows.size() == table.rows.size());
  for (std::size_t i = 1; i < ce_lines.size(); ++i) {
    const auto f = csv::split_line(ce_lines[i]);
    std::vector<double> xs;
    for (const auto& r : back.rows) {
      if (r.metric == "cross_entropy" && r.ordering == f[0] && std::to_string(r.checkpoint) == f[2]) {
        xs.push_back(r.value);
      }
    }
    REQUIRE(xs.size() == 2);
    const double mean = (xs[0] + xs[1]) / 2;
    const double sd = std::sqrt(((xs[0] - mean) * (xs[0] - mean) + (xs[1] - mean) * (xs[1] - mean)) / 1.0);
    CHECK(std::stod(f[5]) == doctest::Approx(mean).epsilon(1e-12));
    CHECK(std::stod(f[6]) == doctest::Approx(sd).epsilon(1e-9));
  }

  SUBCASE("identical config reproduces every artifact byte for byte") {
    const auto again = ExperimentConfig::load(f.config, {"output.dir=b"});
    const auto r2 = run_experiment(again);
    emit_report(r2, again.output_dir);
    auto ta = tree_bytes(out / "runs"), tb = tree_bytes(again.output_dir / "runs");
    CHECK(ta.size() == 4 * (6 * 5 + 1));
    CHECK(ta == tb);
    for (const char* name : {"report_long.csv", "trajectory_cross_entropy.csv", "trajectory_balanced_accuracy.csv",
                             "cross_entropy.svg", "balanced_accuracy_retained.svg", "manifest.json"}) {
      CHECK_MESSAGE(testing::slurp(out / name) == testing::slurp(again.output_dir / name), name);
    }
  }

  SUBCASE("interrupting and resuming matches the uninterrupted run") {
    const auto cfg = ExperimentConfig::load(f.config, {"output.dir=c"});
    RunControl stop;
    stop.stop_after_checkpoint = 2;
    const auto partial = run_experiment(cfg, stop);
    for (const auto& r : partial) {
      CHECK(r.status == RunResult::Status::interrupted);
      CHECK(r.checkpoints.size() == 3);
      CHECK_FALSE(fs::exists(r.run_dir / "checkpoint_3.srnw"));
    }
    // A crash between writing a checkpoint and its metrics leaves an
    // orphan that must be recomputed, not trusted.
    fs::copy_file(partial[0].run_dir / "checkpoint_2.srnw", partial[0].run_dir / "checkpoint_3.srnw");
    const auto resumed = run_experiment(cfg);
    for (const auto& r : resumed) {
      CHECK(r.status == RunResult::Status::completed);
      CHECK(r.checkpoints.size() == 6);
    }
    emit_report(resumed, cfg.output_dir);
    CHECK(tree_bytes(out / "runs") == tree_bytes(cfg.output_dir / "runs"));
    CHECK(testing::slurp(out / "report_long.csv") == testing::slurp(cfg.output_dir / "report_long.csv"));
    CHECK(testing::slurp(out / "cross_entropy.svg") == testing::slurp(cfg.output_dir / "cross_entropy.svg"));

    // Fully completed runs are reused without retraining.
    const auto before = fs::last_write_time(resumed[0].run_dir / "checkpoint_5.srnw");
    const auto again = run_experiment(cfg);
    CHECK(fs::last_write_time(again[0].run_dir / "checkpoint_5.srnw") == before);
    CHECK(again[0].checkpoints.size() == 6);
  }

  SUBCASE("a failing run does not stop its siblings") {
    const auto cfg = ExperimentConfig::load(f.config, {"output.dir=d"});
    RunControl stop;
    stop.stop_after_checkpoint = 0;
    const auto partial = run_experiment(cfg, stop);
    testing::spit(partial[1].run_dir / "checkpoint_0.srnw", "garbage");
    const auto r = run_experiment(cfg);
    CHECK(r[1].status == RunResult::Status::failed);
    CHECK_FALSE(r[1].error.empty());
    CHECK(fs::exists(r[1].run_dir / "error.txt"));
    for (std::size_t i : {0u, 2u, 3u}) CHECK(r[i].status == RunResult::Status::completed);
    const auto t = make_report_table(r);
    CHECK(t.rows.size() == 3u * 6u * 4u);
  }
}

TEST_CASE("changing a training field changes the run directory") {
  const auto dir = testing::scratch_dir("harness-hash");
  const auto f = testing::make_toy_fixture(dir);
  auto c = ExperimentConfig::load(f.config, {"design.seeds=[1]", "design.orderings=[\"chronological\"]",
                                             "srn.epochs_per_partition=1"});
  const auto a = run_experiment(c);
  c.srn.learning_rate = 0.2;
  const auto b = run_experiment(c);
  CHECK(a[0].run_dir != b[0].run_dir);
  CHECK(a[0].run_dir.parent_path() == b[0].run_dir.parent_path());
}

TEST_CASE("analytics and punctuation variants run through the harness") {
  const auto dir = testing::scratch_dir("harness-variants");
  const auto f = testing::make_toy_fixture(dir);
  testing::WarningCapture w;
  const auto c = ExperimentConfig::load(
      f.config, {"design.seeds=[3]", "design.punctuation=[\"retained\",\"removed\"]", "srn.epochs_per_partition=2",
                 "analytics.enabled=true", "analytics.ngram_bin_size=500", "analytics.rolling_window=100",
                 "analytics.rolling_step=50", "evaluation.dump_similarity=true",
                 "evaluation.cross_entropy_stream=seen"});
  const auto r = run_experiment(c);
  REQUIRE(r.size() == 4);
  for (const auto& x : r) CHECK(x.status == RunResult::Status::completed);
  CHECK(fs::exists(c.output_dir / "analytics" / "chronological-removed" / "novel_ngrams.csv"));
  CHECK(fs::exists(c.output_dir / "analytics" / "shuffled-retained" / "partition_entropy.csv"));
  CHECK(fs::exists(r[0].run_dir / "similarity_0_ordered.f64"));
  CHECK(SimilarityMatrix::load(r[0].run_dir / "similarity_4_none.f64").size == 24);
  // Removed punctuation drops tokens that no longer fill a partition.
  CHECK(w.contains("dropping"));
  emit_report(r, c.output_dir);
  CHECK(fs::exists(c.output_dir / "balanced_accuracy_removed.svg"));
  CHECK(fs::exists(c.output_dir / "balanced_accuracy_retained.svg"));
}

TEST_CASE("report aggregation") {
  ReportTable single;
  single.rows.push_back({"chronological", "retained", 1, 0, 0, "cross_entropy", "", 4.5});
  single.rows.push_back({"chronological", "retained", 1, 0, 0, "balanced_accuracy", "ordered", 0.75});
  const auto ce = lines(cross_entropy_wide_csv(single));
  REQUIRE(ce.size() == 2);
  CHECK(ce[1] == "chronological,retained,0,0,1,4.5,");
  const auto ba = lines(balanced_accuracy_wide_csv(single));
  CHECK(ba[1] == "chronological,retained,ordered,0,0,1,0.75,");

  ReportTable nan_table;
  nan_table.rows.push_back({"shuffled", "retained", 1, 0, 0, "balanced_accuracy", "none", std::nan("")});
  nan_table.rows.push_back({"shuffled", "retained", 2, 0, 0, "balanced_accuracy", "none", 0.6});
  const auto n = lines(balanced_accuracy_wide_csv(nan_table));
  CHECK(n[1] == "shuffled,retained,none,0,0,1,0.6,");
  CHECK(lines(long_csv(nan_table))[1] == "shuffled,retained,1,0,0,balanced_accuracy,none,");

  const auto dir = testing::scratch_dir("harness-report");
  testing::spit(dir / "bad.csv", "a,b\n");
  CHECK_THROWS_AS(read_long_csv(dir / "bad.csv"), ValidationError);
  testing::spit(dir / "r.csv", long_csv(single));
  CHECK(read_long_csv(dir / "r.csv").rows == single.rows);
  CHECK_THROWS_AS(emit_report(ReportTable{}, dir), ValidationError);
}

TEST_CASE("trajectory plots") {
  ReportTable t;
  for (std::uint32_t k = 0; k < 6; ++k) {
    for (std::uint64_t seed : {1u, 2u}) {
      t.rows.push_back({"chronological", "retained", seed, k, k, "cross_entropy", "", 4.0 - 0.1 * k + 0.01 * seed});
      t.rows.push_back({"shuffled", "retained", seed, k, k, "cross_entropy", "", 4.1 - 0.1 * k + 0.02 * seed});
    }
  }
  const auto svg = plot_trajectories(t, "cross_entropy");
  CHECK(svg == plot_trajectories(t, "cross_entropy"));
  CHECK(svg.rfind("<svg", 0) == 0);
  std::size_t polylines = 0, bars = 0;
  for (std::size_t p = svg.find("<polyline"); p != std::string::npos; p = svg.find("<polyline", p + 1)) ++polylines;
  for (std::size_t p = svg.find("class=\"errorbar\""); p != std::string::npos; p = svg.find("class=\"errorbar\"", p + 1)) {
    ++bars;
  }
  CHECK(polylines == 2);
  CHECK(bars >= 12);
  CHECK(svg.find("data-label=\"chronological\"") != std::string::npos);

  try {
    plot_trajectories(t, "perplexity");
    FAIL("expected an error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("cross_entropy") != std::string::npos);
    CHECK(std::string(e.what()).find("balanced_accuracy") != std::string::npos);
  }

  t.rows.push_back({"shuffled", "retained", 1, 0, 0, "balanced_accuracy", "none", std::nan("")});
  t.rows.push_back({"shuffled", "retained", 1, 0, 0, "balanced_accuracy", "ordered", 0.7});
  testing::WarningCapture w;
  const auto ba = plot_trajectories(t, "balanced_accuracy", PunctuationMode::retained);
  CHECK(w.contains("shuffled/none"));
  CHECK(ba.find("shuffled/none") == std::string::npos);
  CHECK(ba.find("shuffled/ordered") != std::string::npos);
}
