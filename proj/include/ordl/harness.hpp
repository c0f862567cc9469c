#pragma once

// Experiment orchestration: corpus order x punctuation x replicate seed
// cells, six evaluation checkpoints per run, resumable run directories and
// long/wide CSV + SVG reporting.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ordl/analytics.hpp"
#include "ordl/corpus.hpp"
#include "ordl/semeval.hpp"
#include "ordl/srn.hpp"

namespace ordl {

enum class EvalStream : std::uint8_t { full, seen };

struct ExperimentConfig {
  static constexpr int kSchemaVersion = 1;

  std::filesystem::path corpus_path;  // JSON-Lines transcripts
  std::vector<OrderingMode::Kind> orderings{OrderingMode::Kind::chronological, OrderingMode::Kind::shuffled};
  std::vector<PunctuationMode> punctuation{PunctuationMode::retained};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::uint64_t master_seed = 0;

  std::size_t n_partitions = 256;
  std::size_t max_types = 4096;
  RemainderPolicy remainder = RemainderPolicy::drop;

  SrnConfig srn;  // vocab_size and seed are filled per run
  Precision precision = Precision::f64;

  std::filesystem::path probes_path;
  std::vector<RepCondition::Kind> conditions{RepCondition::Kind::ordered_context,
                                             RepCondition::Kind::shuffled_context, RepCondition::Kind::no_context};
  SimilarityMeasure measure = SimilarityMeasure::cosine;
  double threshold_step = 0.001;
  std::size_t max_occurrences = 0;
  EvalStream eval_stream = EvalStream::full;
  bool dump_similarity = false;

  bool analytics = false;
  AnalyticsOptions analytics_options;
  std::filesystem::path lexicon_path;

  std::filesystem::path output_dir;
  unsigned workers = 1;
  unsigned threads_per_run = 1;

  /// Parses the JSON document; relative paths resolve against `base_dir`.
  static ExperimentConfig from_json_text(const std::string& text, const std::filesystem::path& base_dir = {});

  /// Reads a config file and applies `key.path=value` overrides (values are
  /// parsed as JSON when possible, otherwise taken as strings).
  static ExperimentConfig load(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

  /// Canonical JSON with absolute paths.
  std::string to_json_text() const;

  /// Seeds distinct and nonempty, modes nonempty, referenced files present.
  void validate() const;
};

struct CellDescriptor {
  OrderingMode::Kind ordering = OrderingMode::Kind::chronological;
  PunctuationMode punctuation = PunctuationMode::retained;
  std::uint64_t seed = 0;

  std::string name() const;  // e.g. "chronological-retained-seed3"
  bool operator==(const CellDescriptor&) const = default;
};

/// Independent sub-seeds for one cell. The weight and evaluation seeds do
/// not depend on the ordering, so chronological and shuffled runs of one
/// replicate start from identical weights.
struct CellSeeds {
  std::uint64_t corpus = 0;
  std::uint64_t weights = 0;
  std::uint64_t evaluation = 0;
};

CellSeeds derive_cell_seeds(std::uint64_t master_seed, const CellDescriptor& cell);
std::vector<CellDescriptor> enumerate_cells(const ExperimentConfig& config);

struct ConditionMetrics {
  RepCondition::Kind condition = RepCondition::Kind::ordered_context;
  double mean_ba = 0.0;  // NaN when degenerate
  double best_threshold = 0.0;
  bool degenerate = false;
  std::size_t excluded = 0;
};

struct CheckpointMetrics {
  std::uint32_t ordinal = 0;
  std::uint32_t partitions_trained = 0;
  std::uint64_t tokens_trained = 0;
  double cross_entropy = 0.0;
  std::vector<ConditionMetrics> semantic;
};

struct RunResult {
  CellDescriptor cell;
  CellSeeds seeds;
  std::filesystem::path run_dir;
  enum class Status : std::uint8_t { completed, interrupted, failed } status = Status::completed;
  std::string error;
  std::vector<CheckpointMetrics> checkpoints;
};

struct RunControl {
  /// Stop every run right after this checkpoint is persisted (simulates an
  /// interruption; a later call resumes from there).
  std::optional<std::uint32_t> stop_after_checkpoint;
  bool verbose = false;
};

/// Runs every cell. Completed checkpoints already on disk are reused, so an
/// interrupted experiment resumes where it stopped. A failing run is
/// recorded and does not stop its siblings.
std::vector<RunResult> run_experiment(const ExperimentConfig& config, const RunControl& control = {});

struct ReportRow {
  std::string ordering;
  std::string punctuation;
  std::uint64_t seed = 0;
  std::uint32_t checkpoint = 0;
  std::uint32_t partitions_trained = 0;
  std::string metric;     // cross_entropy | balanced_accuracy
  std::string condition;  // empty for cross_entropy
  double value = 0.0;     // NaN when not scored
  bool operator==(const ReportRow&) const = default;
};

struct ReportTable {
  std::vector<ReportRow> rows;
};

inline constexpr const char* kLongCsvHeader =
    "ordering,punctuation,seed,checkpoint,partitions_trained,metric,condition,value";
inline constexpr const char* kCrossEntropyCsvHeader = "ordering,punctuation,checkpoint,partitions_trained,n,mean,sd";
inline constexpr const char* kBalancedAccuracyCsvHeader =
    "ordering,punctuation,condition,checkpoint,partitions_trained,n,mean,sd";

/// Completed and interrupted runs contribute the checkpoints they reached.
ReportTable make_report_table(const std::vector<RunResult>& results);

std::string long_csv(const ReportTable& table);
ReportTable read_long_csv(const std::filesystem::path& path);

/// Mean and sample SD across seeds for each (ordering, punctuation,
/// [condition], checkpoint) group.
std::string cross_entropy_wide_csv(const ReportTable& table);
std::string balanced_accuracy_wide_csv(const ReportTable& table);

/// Writes report_long.csv, the two trajectory CSVs and the SVG plots into
/// `dir`. Returns the table.
ReportTable emit_report(const std::vector<RunResult>& results, const std::filesystem::path& dir);
void emit_report(const ReportTable& table, const std::filesystem::path& dir);

inline constexpr const char* kPlotMetrics[] = {"cross_entropy", "balanced_accuracy"};

/// Line chart of mean +/- SD per checkpoint, one series per ordering x
/// condition (x punctuation unless filtered). Throws ValidationError for an
/// unknown metric.
std::string plot_trajectories(const ReportTable& table, const std::string& metric,
                              std::optional<PunctuationMode> punctuation = std::nullopt);

}  // namespace ordl
