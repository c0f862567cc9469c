#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ordl/analytics.hpp"
#include "ordl/binio.hpp"
#include "ordl/corpus.hpp"
#include "ordl/csv.hpp"
#include "ordl/harness.hpp"
#include "ordl/semeval.hpp"
#include "ordl/srn.hpp"

namespace fs = std::filesystem;
using namespace ordl;

namespace {

struct PrepareArgs {
  std::string input, output;
  std::string punctuation = "retained";
  std::string ordering = "chronological";
  std::uint64_t shuffle_seed = 0;
  std::size_t partitions = 256;
  std::size_t max_types = 4096;
  bool strict_remainder = false;
};

struct AnalyzeArgs {
  std::string corpus, output, lexicon;
  AnalyticsOptions options;
};

struct TrainArgs {
  std::string corpus, output;
  SrnConfig srn;
  std::string precision = "f64";
  unsigned threads = 1;
  bool resume = false;
};

struct ExperimentArgs {
  std::string config;
  std::vector<std::string> overrides;
  int stop_after = -1;
  bool quiet = false;
};

struct EvalArgs {
  std::string checkpoint, corpus, probes, output;
  std::vector<std::string> conditions{"ordered", "shuffled", "none"};
  std::uint64_t seed = 0;
  std::string similarity = "cosine";
  double threshold_step = 0.001;
  std::size_t max_occurrences = 0;
  unsigned threads = 1;
  bool dump_similarity = false;
};

struct ReportArgs {
  std::string input, output;
};

PreparedCorpus load_or_prepare(const std::string& path) {
  if (fs::path(path).extension() == ".jsonl") {
    throw ValidationError(path + " is a transcript file; run `ordl prepare` first");
  }
  return PreparedCorpus::load(path);
}

void cmd_prepare(const PrepareArgs& a) {
  PrepareOptions o;
  o.punctuation = parse_punctuation_mode(a.punctuation);
  o.ordering = parse_ordering_kind(a.ordering) == OrderingMode::Kind::chronological
                   ? OrderingMode::chronological()
                   : OrderingMode::shuffled(a.shuffle_seed);
  o.n_partitions = a.partitions;
  o.max_types = a.max_types;
  o.remainder = a.strict_remainder ? RemainderPolicy::error : RemainderPolicy::drop;
  const auto corpus = prepare_corpus(read_transcripts_jsonl(fs::path(a.input)), o);
  corpus.save(a.output);
  std::printf("%zu tokens in %zu partitions of %llu; vocabulary %zu (OOV rate %s); %llu tokens dropped\n",
              corpus.ids.size(), corpus.n_partitions(), static_cast<unsigned long long>(corpus.partition_length()),
              corpus.vocab.size(), csv::number(corpus.vocab.oov_fraction()).c_str(),
              static_cast<unsigned long long>(corpus.dropped_tokens));
}

void cmd_analyze(const AnalyzeArgs& a) {
  const auto corpus = load_or_prepare(a.corpus);
  Lexicon lexicon;
  if (!a.lexicon.empty()) lexicon = read_lexicon_csv(a.lexicon);
  run_analytics(corpus, a.options, a.lexicon.empty() ? nullptr : &lexicon, a.output);
}

template <typename Real>
void train_with(const TrainArgs& a, const PreparedCorpus& corpus) {
  const fs::path out(a.output);
  fs::create_directories(out);
  SrnConfig config = a.srn;
  config.vocab_size = static_cast<std::uint32_t>(corpus.vocab.size());
  const auto stream = corpus.training_stream();

  std::string table = "checkpoint,partitions_trained,tokens_trained,cross_entropy\n";
  const fs::path table_path = out / "cross_entropy.csv";
  auto hook = [&](const Checkpoint<Real>& c) {
    c.save(out / ("checkpoint_" + std::to_string(c.ordinal) + ".srnw"));
    const double ce = cross_entropy(c.weights, stream, c.config.window, a.threads);
    table += std::to_string(c.ordinal) + "," + std::to_string(c.partitions_trained) + "," +
             std::to_string(c.tokens_trained) + "," + csv::number(ce) + "\n";
    binio::write_file_atomic(table_path, table);
    std::printf("checkpoint %u: partitions %u, cross-entropy %s\n", c.ordinal, c.partitions_trained,
                csv::number(ce).c_str());
    std::fflush(stdout);
  };

  if (a.resume) {
    int last = -1;
    for (int k = 0; k < 6 && fs::exists(out / ("checkpoint_" + std::to_string(k) + ".srnw")); ++k) last = k;
    if (last >= 0) {
      auto any = load_checkpoint(out / ("checkpoint_" + std::to_string(last) + ".srnw"));
      auto* start = std::get_if<Checkpoint<Real>>(&any);
      if (!start) throw ValidationError("stored checkpoint has a different precision");
      if (start->config != config) throw ValidationError("stored checkpoint has a different configuration");
      // Rebuild the cross-entropy table for the checkpoints already on disk.
      for (int k = 0; k <= last; ++k) {
        auto prev = load_checkpoint(out / ("checkpoint_" + std::to_string(k) + ".srnw"));
        hook(std::get<Checkpoint<Real>>(prev));
      }
      train_schedule<Real>(corpus, std::move(*start), hook);
      return;
    }
  }
  train_schedule<Real>(corpus, config, hook);
}

void cmd_train(const TrainArgs& a) {
  const auto corpus = load_or_prepare(a.corpus);
  if (parse_precision(a.precision) == Precision::f64) {
    train_with<double>(a, corpus);
  } else {
    train_with<float>(a, corpus);
  }
}

int cmd_experiment(const ExperimentArgs& a) {
  const auto config = ExperimentConfig::load(a.config, a.overrides);
  RunControl control;
  control.verbose = !a.quiet;
  if (a.stop_after >= 0) control.stop_after_checkpoint = static_cast<std::uint32_t>(a.stop_after);
  const auto results = run_experiment(config, control);
  int failed = 0, interrupted = 0;
  for (const auto& r : results) {
    if (r.status == RunResult::Status::failed) ++failed;
    if (r.status == RunResult::Status::interrupted) ++interrupted;
  }
  const auto table = make_report_table(results);
  if (!table.rows.empty()) emit_report(table, config.output_dir);
  std::printf("%zu runs: %zu completed, %d interrupted, %d failed; results in %s\n", results.size(),
              results.size() - static_cast<std::size_t>(failed + interrupted), interrupted, failed,
              config.output_dir.string().c_str());
  return failed > 0 ? 2 : 0;
}

template <typename Real>
void eval_with(const EvalArgs& a, const Checkpoint<Real>& ckpt, const PreparedCorpus& corpus,
               const ProbeInventory& probes) {
  std::vector<RepCondition> conditions;
  for (const auto& c : a.conditions) conditions.push_back({parse_rep_condition(c), a.seed});
  SemanticEvalOptions opts;
  opts.representation.max_occurrences = a.max_occurrences;
  opts.representation.subsample_seed = a.seed;
  opts.representation.threads = a.threads;
  opts.measure = parse_similarity_measure(a.similarity);
  opts.grid = threshold_grid(a.threshold_step);
  if (ckpt.weights.vocab != corpus.vocab.size()) {
    throw ValidationError("checkpoint vocabulary (" + std::to_string(ckpt.weights.vocab) +
                          ") does not match the corpus (" + std::to_string(corpus.vocab.size()) + ")");
  }
  const auto stream = corpus.training_stream();
  const auto reports =
      evaluate_semantics(ckpt.weights, stream, probes, corpus.vocab, conditions, ckpt.config.window, opts);
  const fs::path out(a.output);
  fs::create_directories(out);
  for (const auto& r : reports) {
    const std::string name(to_string(r.condition.kind));
    std::ostringstream csv_out;
    write_report_csv(csv_out, r.report, probes);
    binio::write_file_atomic(out / ("semantic_" + name + ".csv"), csv_out.str());
    if (a.dump_similarity) r.similarity.save(out / ("similarity_" + name + ".f64"));
    std::printf("%-8s mean BA %s at threshold %s%s\n", name.c_str(), csv::number(r.report.mean_ba).c_str(),
                csv::number(r.report.best_threshold).c_str(), r.report.degenerate ? " (degenerate)" : "");
  }
}

void cmd_eval(const EvalArgs& a) {
  const auto corpus = load_or_prepare(a.corpus);
  const auto probes = ProbeInventory::read_csv(a.probes);
  probes.validate(corpus.vocab);
  auto any = load_checkpoint(a.checkpoint);
  std::visit([&](const auto& ckpt) { eval_with(a, ckpt, corpus, probes); }, any);
}

void cmd_report(const ReportArgs& a) {
  fs::path input(a.input);
  if (fs::is_directory(input)) input /= "report_long.csv";
  const auto table = read_long_csv(input);
  emit_report(table, a.output.empty() ? input.parent_path() : fs::path(a.output));
}

void add_srn_flags(CLI::App* cmd, SrnConfig& s) {
  cmd->add_option("--hidden", s.hidden_size, "Hidden units")->capture_default_str();
  cmd->add_option("--window", s.window, "BPTT window length")->capture_default_str();
  cmd->add_option("--epochs", s.epochs_per_partition, "Passes over each partition")->capture_default_str();
  cmd->add_option("--learning-rate", s.learning_rate, "SGD step size")->capture_default_str();
  cmd->add_option("--init-scale", s.init_scale, "Uniform init half-width")->capture_default_str();
  cmd->add_option("--seed", s.seed, "Weight initialization seed")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Corpus-order experiments with simple recurrent networks"};
  app.require_subcommand(1);

  PrepareArgs prep;
  auto* p = app.add_subcommand("prepare", "Tokenize JSON-Lines transcripts into a partitioned corpus file");
  p->add_option("--input", prep.input, "Transcript JSON-Lines file")->required();
  p->add_option("--output", prep.output, "Output .ordl file")->required();
  p->add_option("--punctuation", prep.punctuation, "retained|removed")->capture_default_str();
  p->add_option("--ordering", prep.ordering, "chronological|shuffled")->capture_default_str();
  p->add_option("--shuffle-seed", prep.shuffle_seed, "Partition shuffle seed")->capture_default_str();
  p->add_option("--partitions", prep.partitions, "Number of partitions")->capture_default_str();
  p->add_option("--max-types", prep.max_types, "Vocabulary size including OOV")->capture_default_str();
  p->add_flag("--strict-remainder", prep.strict_remainder, "Fail instead of dropping leftover tokens");

  AnalyzeArgs an;
  auto* a = app.add_subcommand("analyze", "Corpus complexity measures as CSV and SVG");
  a->add_option("--corpus", an.corpus, "Prepared .ordl corpus")->required();
  a->add_option("--output", an.output, "Output directory")->required();
  a->add_option("--lexicon", an.lexicon, "word,category CSV for half-split curves");
  a->add_option("--max-ngram", an.options.max_ngram)->capture_default_str();
  a->add_option("--ngram-bin", an.options.ngram_bin_size)->capture_default_str();
  a->add_option("--rolling-window", an.options.rolling_window)->capture_default_str();
  a->add_option("--rolling-step", an.options.rolling_step)->capture_default_str();
  a->add_option("--location-bins", an.options.location_bins)->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train one network over a prepared corpus");
  t->add_option("--corpus", tr.corpus, "Prepared .ordl corpus")->required();
  t->add_option("--output", tr.output, "Output directory")->required();
  add_srn_flags(t, tr.srn);
  t->add_option("--precision", tr.precision, "f64|f32")->capture_default_str();
  t->add_option("--threads", tr.threads, "Threads for cross-entropy evaluation")->capture_default_str();
  t->add_flag("--resume", tr.resume, "Continue from the last checkpoint in the output directory");

  ExperimentArgs ex;
  auto* e = app.add_subcommand("experiment", "Run the full design described by a config file");
  e->add_option("--config", ex.config, "Experiment config (JSON)")->required();
  e->add_option("--set", ex.overrides, "Override a config field: section.key=value")->take_all();
  e->add_option("--stop-after", ex.stop_after, "Stop each run after this checkpoint");
  e->add_flag("--quiet", ex.quiet, "No progress output");

  EvalArgs ev;
  auto* s = app.add_subcommand("eval-semantic", "Score probe representations of one checkpoint");
  s->add_option("--checkpoint", ev.checkpoint, "Checkpoint .srnw")->required();
  s->add_option("--corpus", ev.corpus, "Prepared .ordl corpus")->required();
  s->add_option("--probes", ev.probes, "word,category CSV")->required();
  s->add_option("--output", ev.output, "Output directory")->required();
  s->add_option("--conditions", ev.conditions, "ordered shuffled none")->capture_default_str();
  s->add_option("--seed", ev.seed, "Context shuffle seed")->capture_default_str();
  s->add_option("--similarity", ev.similarity, "cosine|correlation")->capture_default_str();
  s->add_option("--threshold-step", ev.threshold_step)->capture_default_str();
  s->add_option("--max-occurrences", ev.max_occurrences, "0 uses every occurrence")->capture_default_str();
  s->add_option("--threads", ev.threads)->capture_default_str();
  s->add_flag("--dump-similarity", ev.dump_similarity, "Also write the similarity matrices");

  ReportArgs rp;
  auto* r = app.add_subcommand("report", "Aggregate report_long.csv into trajectory tables and plots");
  r->add_option("--input", rp.input, "report_long.csv or an experiment output directory")->required();
  r->add_option("--output", rp.output, "Output directory (defaults to the input's directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*p) cmd_prepare(prep);
    if (*a) cmd_analyze(an);
    if (*t) cmd_train(tr);
    if (*e) return cmd_experiment(ex);
    if (*s) cmd_eval(ev);
    if (*r) cmd_report(rp);
  } catch (const ValidationError& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 1;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 2;
  }
  return 0;
}
