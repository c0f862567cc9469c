#pragma once

// Corpus complexity measures: n-gram novelty, entropy, utterance-length
// statistics and word-location profiles.

#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ordl/common.hpp"
#include "ordl/corpus.hpp"

namespace ordl {

struct NoveltyCurve {
  int n = 1;
  std::size_t bin_size = 1;
  /// Cumulative count of first-seen n-grams after each bin of n-gram
  /// positions; the last bin may be partial.
  std::vector<std::uint64_t> cumulative_novel;
};

NoveltyCurve novel_ngram_curve(std::span<const TokenId> ids, int n, std::size_t bin_size);

/// Shannon entropy in bits of the unigram distribution of `ids`.
double partition_entropy(std::span<const TokenId> ids);

/// Entropy of each partition in training order.
std::vector<double> partition_entropies(const PreparedCorpus& corpus);

struct RollingStats {
  std::size_t window_utterances = 0;
  std::size_t step = 0;
  std::vector<double> means;
  std::vector<double> stds;  // population
};

RollingStats rolling_utterance_stats(std::span<const std::size_t> lengths, std::size_t window, std::size_t step);

struct LocationProfile {
  std::string word;
  std::uint64_t frequency = 0;
  double mean_location = 0.0;  // mean of position / T, positions 0-based
};

/// One profile per in-vocabulary word that occurs in `ids`.
std::map<std::string, LocationProfile> location_profiles(std::span<const TokenId> ids, const Vocabulary& vocab);

using Lexicon = std::map<std::string, std::string>;  // word -> category

/// Reads `word,category` rows; a leading header row is skipped.
Lexicon read_lexicon_csv(const std::filesystem::path& path);

struct HalfSplitCurves {
  std::string category;
  std::vector<std::string> first_half_words;
  std::vector<std::string> second_half_words;
  std::vector<std::uint64_t> first_half_counts;
  std::vector<std::uint64_t> second_half_counts;
};

/// Per category: words sorted by mean location, split at the median (odd
/// counts put the extra word in the first half), token counts per corpus bin.
std::vector<HalfSplitCurves> half_split_curves(const std::map<std::string, LocationProfile>& profiles,
                                               const Lexicon& lexicon, std::span<const TokenId> ids,
                                               const Vocabulary& vocab, std::size_t n_bins);

struct AnalyticsOptions {
  int max_ngram = 6;
  std::size_t ngram_bin_size = 10000;
  std::size_t rolling_window = 1000;
  std::size_t rolling_step = 100;
  std::size_t location_bins = 20;
};

// CSV writers, one file per measure.
void write_novelty_csv(std::ostream& out, std::span<const NoveltyCurve> curves);
void write_entropy_csv(std::ostream& out, std::span<const double> bits);
void write_rolling_csv(std::ostream& out, const RollingStats& stats);
void write_location_csv(std::ostream& out, const std::map<std::string, LocationProfile>& profiles);
void write_half_split_csv(std::ostream& out, std::span<const HalfSplitCurves> curves);

/// Computes every measure for one corpus variant and writes the CSV files
/// (plus SVG line charts) into `dir`.
void run_analytics(const PreparedCorpus& corpus, const AnalyticsOptions& options, const Lexicon* lexicon,
                   const std::filesystem::path& dir);

}  // namespace ordl
