#pragma once

// Probe-word representations, similarity matrices and the balanced-accuracy
// threshold sweep used to score semantic category knowledge.

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ordl/common.hpp"
#include "ordl/corpus.hpp"
#include "ordl/srn.hpp"

namespace ordl {

struct ProbeInventory {
  std::vector<std::string> words;
  std::vector<std::size_t> labels;           // index into category_names, parallel to words
  std::vector<std::string> category_names;   // in order of first appearance

  /// Reads `word,category` rows; a leading `word,category` header is skipped.
  static ProbeInventory read_csv(const std::filesystem::path& path);
  static ProbeInventory from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs);

  std::size_t size() const { return words.size(); }
  const std::string& category_of(std::size_t probe) const { return category_names[labels[probe]]; }

  /// Every probe in-vocabulary, unique, and every category with >= 2 probes.
  void validate(const Vocabulary& vocab) const;
  std::vector<TokenId> ids(const Vocabulary& vocab) const;
};

struct RepCondition {
  enum class Kind : std::uint8_t { ordered_context, shuffled_context, no_context };
  Kind kind = Kind::ordered_context;
  std::uint64_t seed = 0;  // permutation seed for shuffled_context

  static RepCondition ordered() { return {Kind::ordered_context, 0}; }
  static RepCondition shuffled(std::uint64_t seed) { return {Kind::shuffled_context, seed}; }
  static RepCondition none() { return {Kind::no_context, 0}; }
  bool operator==(const RepCondition&) const = default;
};

std::string_view to_string(RepCondition::Kind kind);
RepCondition::Kind parse_rep_condition(std::string_view text);

struct RepresentationOptions {
  /// 0 averages every occurrence; otherwise a seeded subsample of this size.
  std::size_t max_occurrences = 0;
  std::uint64_t subsample_seed = 0;
  unsigned threads = 1;
};

/// Positions t >= window-1 where `probe` occurs in `stream`.
std::vector<std::size_t> probe_occurrences(std::span<const TokenId> stream, TokenId probe, std::size_t window);

/// Hidden-state representation of one probe. Context conditions average the
/// state after the probe over every window that ends on it; the shuffled
/// condition permutes the context tokens of each window (probe stays last).
/// The no-context condition feeds the probe alone from the reset state.
template <typename Real>
std::vector<double> probe_representation(const SrnWeights<Real>& w, TokenId probe, const RepCondition& condition,
                                         std::span<const TokenId> stream, std::size_t window,
                                         const RepresentationOptions& options = {});

enum class SimilarityMeasure : std::uint8_t { cosine, correlation };
std::string_view to_string(SimilarityMeasure m);
SimilarityMeasure parse_similarity_measure(std::string_view text);

struct SimilarityMatrix {
  std::size_t size = 0;
  std::vector<double> values;  // size x size, row-major
  double operator()(std::size_t i, std::size_t j) const { return values[i * size + j]; }

  /// u64 rows, u64 cols, then rows*cols little-endian f64, row-major.
  void save(const std::filesystem::path& path) const;
  static SimilarityMatrix load(const std::filesystem::path& path);
};

/// Pairwise cosine (or Pearson correlation) with a unit diagonal. Throws
/// ValidationError on a zero (or, for correlation, constant) vector.
SimilarityMatrix similarity_matrix(std::span<const std::vector<double>> reps,
                                   SimilarityMeasure measure = SimilarityMeasure::cosine);

/// Inclusive 0..1 grid with the given step (1001 points at 0.001).
std::vector<double> threshold_grid(double step = 0.001);

struct BalancedAccuracyReport {
  std::vector<double> per_probe_ba;          // at best_threshold; NaN for excluded probes
  double best_threshold = 0.0;
  double mean_ba = 0.0;
  std::vector<std::size_t> excluded_probes;  // no positives or no negatives
  std::vector<double> mean_ba_by_threshold;  // parallel to the grid
  bool degenerate = false;                   // every representation identical; not scored
};

/// For each threshold r and probe i, over j != i: same-category pairs with
/// S_ij > r are hits, different-category pairs with S_ij <= r are correct
/// rejections. BA_i(r) = (hits/positives + rejections/negatives) / 2. The
/// reported threshold maximizes the mean over probes (smallest r on ties).
BalancedAccuracyReport balanced_accuracy(const SimilarityMatrix& s, std::span<const std::size_t> labels,
                                         std::span<const double> grid, unsigned threads = 1);

struct SemanticEvalOptions {
  RepresentationOptions representation;
  SimilarityMeasure measure = SimilarityMeasure::cosine;
  std::vector<double> grid = threshold_grid();
};

struct ConditionReport {
  RepCondition condition;
  BalancedAccuracyReport report;
  SimilarityMatrix similarity;
};

/// probe_representation -> similarity_matrix -> balanced_accuracy for each
/// condition. Errors name the probe and condition involved.
template <typename Real>
std::vector<ConditionReport> evaluate_semantics(const SrnWeights<Real>& w, std::span<const TokenId> stream,
                                                const ProbeInventory& inventory, const Vocabulary& vocab,
                                                std::span<const RepCondition> conditions, std::size_t window,
                                                const SemanticEvalOptions& options = {});

/// Per-probe rows then one summary row:
///   kind,probe,category,balanced_accuracy,threshold,status
void write_report_csv(std::ostream& out, const BalancedAccuracyReport& report, const ProbeInventory& inventory);

}  // namespace ordl
