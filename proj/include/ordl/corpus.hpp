#pragma once

// Transcript ingestion, tokenization, vocabulary and partitioning.

#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ordl/common.hpp"

namespace ordl {

struct Transcript {
  std::string id;
  std::optional<std::int64_t> age_days;  // nullopt when the source had no age
  std::vector<std::string> utterances;
};

enum class PunctuationMode : std::uint8_t { retained = 0, removed = 1 };

struct OrderingMode {
  enum class Kind : std::uint8_t { chronological = 0, shuffled = 1 };
  Kind kind = Kind::chronological;
  std::uint64_t seed = 0;  // meaningful for shuffled only

  static OrderingMode chronological() { return {}; }
  static OrderingMode shuffled(std::uint64_t seed) { return {Kind::shuffled, seed}; }
  bool operator==(const OrderingMode&) const = default;
};

std::string_view to_string(PunctuationMode mode);
std::string_view to_string(OrderingMode::Kind kind);
PunctuationMode parse_punctuation_mode(std::string_view text);
OrderingMode::Kind parse_ordering_kind(std::string_view text);

/// Half-open [begin, end) range of token positions.
struct Span {
  std::uint64_t begin = 0;
  std::uint64_t end = 0;
  std::uint64_t size() const { return end - begin; }
  bool operator==(const Span&) const = default;
};

struct TokenStream {
  std::vector<std::string> tokens;
  std::vector<Span> utterance_spans;          // tiles `tokens`
  std::vector<std::int64_t> utterance_ages;   // parallel to utterance_spans
};

/// Tokens that mark an utterance boundary when punctuation is retained.
inline constexpr std::string_view kBoundaryTokens[] = {".", "?", "!"};
bool is_boundary_token(std::string_view token);

/// Lowercases, splits on whitespace and non-word punctuation, splits the
/// clitics 's n't 're 'll 've 'm 'd off their host, and emits sentence-final
/// punctuation as standalone tokens (Retained) or drops it (Removed).
std::vector<std::string> tokenize_utterance(std::string_view text, PunctuationMode mode);

/// Sorts by age ascending, ties by transcript id. Throws ValidationError if
/// any transcript lacks an age.
std::vector<Transcript> order_transcripts(std::vector<Transcript> transcripts);

/// Concatenates transcripts in the given order. Utterances that tokenize to
/// nothing are dropped.
TokenStream tokenize_transcripts(std::span<const Transcript> transcripts, PunctuationMode mode);

/// Reads JSON-Lines records {"transcript_id", "age_days", "utterance"}.
/// Transcripts appear in order of first mention; utterances in file order.
std::vector<Transcript> read_transcripts_jsonl(std::istream& in);
std::vector<Transcript> read_transcripts_jsonl(const std::filesystem::path& path);

class Vocabulary {
 public:
  static constexpr std::string_view kOovSymbol = "<oov>";

  Vocabulary() = default;

  /// Keeps the max_types-1 most frequent types (ties lexicographic) and
  /// appends one out-of-vocabulary id.
  static Vocabulary build(std::span<const std::string> tokens, std::size_t max_types);

  /// Rebuilds from an id-ordered word list whose last entry is the OOV symbol.
  static Vocabulary from_words(std::vector<std::string> id_to_word);

  TokenId id(std::string_view word) const;
  bool contains(std::string_view word) const;
  const std::string& word(TokenId id) const { return id_to_word_.at(id); }
  std::size_t size() const { return id_to_word_.size(); }
  TokenId oov_id() const { return static_cast<TokenId>(id_to_word_.size() - 1); }
  const std::vector<std::string>& words() const { return id_to_word_; }

  /// Fraction of tokens in the build stream that mapped to OOV.
  double oov_fraction() const { return oov_fraction_; }

 private:
  struct StringHash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const { return std::hash<std::string_view>{}(s); }
  };
  std::vector<std::string> id_to_word_;
  std::unordered_map<std::string, TokenId, StringHash, std::equal_to<>> word_to_id_;
  double oov_fraction_ = 0.0;
};

struct EncodedStream {
  std::vector<TokenId> ids;
  std::vector<Span> utterance_spans;
};

EncodedStream encode(const TokenStream& stream, const Vocabulary& vocab);
std::vector<std::string> decode(std::span<const TokenId> ids, const Vocabulary& vocab);

enum class RemainderPolicy : std::uint8_t { drop, error };

struct PreparedCorpus {
  static constexpr std::uint16_t kFormatVersion = 1;

  std::vector<TokenId> ids;            // source order, truncated to whole partitions
  std::vector<Span> utterance_spans;   // over `ids`, clipped at the truncation point
  std::vector<Span> partitions;        // contiguous, equal length, over `ids`
  std::vector<std::uint32_t> partition_order;
  OrderingMode ordering;
  PunctuationMode punctuation = PunctuationMode::retained;
  std::uint64_t dropped_tokens = 0;
  Vocabulary vocab;

  std::size_t n_partitions() const { return partitions.size(); }
  std::uint64_t partition_length() const { return partitions.empty() ? 0 : partitions.front().size(); }

  /// Partitions concatenated in partition_order: what the network sees.
  std::vector<TokenId> training_stream() const;

  /// Ids of the partition trained at the given step of the schedule.
  std::span<const TokenId> partition_at(std::size_t step) const;

  /// Utterance lengths in training order. Utterances that straddle a
  /// partition boundary contribute one piece per partition.
  std::vector<std::size_t> training_utterance_lengths() const;

  void save(const std::filesystem::path& path) const;
  static PreparedCorpus load(const std::filesystem::path& path);
  std::string serialize() const;
  static PreparedCorpus deserialize(std::string bytes, std::string what = "corpus");
};

/// Splits into n equal partitions of floor(T/n) tokens. The tail remainder
/// is dropped with a warning (or rejected under RemainderPolicy::error).
PreparedCorpus partition_stream(EncodedStream stream, std::size_t n_partitions, OrderingMode mode,
                                RemainderPolicy policy = RemainderPolicy::drop);

struct PrepareOptions {
  PunctuationMode punctuation = PunctuationMode::retained;
  OrderingMode ordering;
  std::size_t n_partitions = 256;
  std::size_t max_types = 4096;
  RemainderPolicy remainder = RemainderPolicy::drop;
};

/// Full pipeline: age ordering, tokenization, vocabulary, encoding, partitioning.
PreparedCorpus prepare_corpus(std::vector<Transcript> transcripts, const PrepareOptions& options);

}  // namespace ordl
