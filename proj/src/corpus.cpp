#include "ordl/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <numeric>
#include <utility>

#include <json.hpp>

#include "ordl/binio.hpp"

namespace ordl {

std::string_view to_string(PunctuationMode mode) {
  return mode == PunctuationMode::retained ? "retained" : "removed";
}

std::string_view to_string(OrderingMode::Kind kind) {
  return kind == OrderingMode::Kind::chronological ? "chronological" : "shuffled";
}

PunctuationMode parse_punctuation_mode(std::string_view text) {
  if (text == "retained") return PunctuationMode::retained;
  if (text == "removed") return PunctuationMode::removed;
  throw ValidationError("unknown punctuation mode \"" + std::string(text) + "\" (expected retained|removed)");
}

OrderingMode::Kind parse_ordering_kind(std::string_view text) {
  if (text == "chronological") return OrderingMode::Kind::chronological;
  if (text == "shuffled") return OrderingMode::Kind::shuffled;
  throw ValidationError("unknown ordering \"" + std::string(text) + "\" (expected chronological|shuffled)");
}

bool is_boundary_token(std::string_view token) {
  return std::find(std::begin(kBoundaryTokens), std::end(kBoundaryTokens), token) != std::end(kBoundaryTokens);
}

// ---------------------------------------------------------------------------
// Tokenization

namespace {

constexpr std::string_view kClitics[] = {"n't", "'s", "'re", "'ll", "'ve", "'m", "'d"};

bool is_word_byte(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '\'' || c >= 0x80;
}

bool is_boundary_char(char c) { return c == '.' || c == '?' || c == '!'; }

// Peels clitics off the right edge: "shouldn't've" -> should n't 've.
void emit_word(std::string word, std::vector<std::string>& out) {
  std::vector<std::string> suffixes;
  bool split = true;
  while (split) {
    split = false;
    for (auto clitic : kClitics) {
      if (word.size() > clitic.size() && word.ends_with(clitic)) {
        const auto stem_len = word.size() - clitic.size();
        // Keep forms like "''s" or "'s" attached when nothing word-like precedes.
        if (word[stem_len - 1] == '\'') continue;
        suffixes.emplace_back(clitic);
        word.resize(stem_len);
        split = true;
        break;
      }
    }
  }
  out.push_back(std::move(word));
  for (auto it = suffixes.rbegin(); it != suffixes.rend(); ++it) out.push_back(std::move(*it));
}

std::string normalize(std::string_view text) {
  std::string s;
  s.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    // U+2019 RIGHT SINGLE QUOTATION MARK is a typographic apostrophe.
    if (c == 0xE2 && i + 2 < text.size() && static_cast<unsigned char>(text[i + 1]) == 0x80 &&
        static_cast<unsigned char>(text[i + 2]) == 0x99) {
      s.push_back('\'');
      i += 2;
      continue;
    }
    s.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
  }
  return s;
}

}  // namespace

std::vector<std::string> tokenize_utterance(std::string_view text, PunctuationMode mode) {
  const std::string s = normalize(text);
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) emit_word(std::exchange(word, {}), out);
  };
  char last_boundary = 0;
  for (char ch : s) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_word_byte(c)) {
      word.push_back(ch);
      last_boundary = 0;
      continue;
    }
    flush();
    if (is_boundary_char(ch)) {
      // A run of the same mark ("...", "??") is one boundary.
      if (mode == PunctuationMode::retained && ch != last_boundary) out.emplace_back(1, ch);
      last_boundary = ch;
    } else if (!std::isspace(c)) {
      last_boundary = 0;
    }
  }
  flush();
  return out;
}

std::vector<Transcript> order_transcripts(std::vector<Transcript> transcripts) {
  for (const auto& t : transcripts) {
    if (!t.age_days) throw ValidationError("transcript \"" + t.id + "\" has no age information");
    if (*t.age_days < 0) throw ValidationError("transcript \"" + t.id + "\" has a negative age");
  }
  std::stable_sort(transcripts.begin(), transcripts.end(), [](const Transcript& a, const Transcript& b) {
    if (*a.age_days != *b.age_days) return *a.age_days < *b.age_days;
    return a.id < b.id;
  });
  return transcripts;
}

TokenStream tokenize_transcripts(std::span<const Transcript> transcripts, PunctuationMode mode) {
  TokenStream stream;
  for (const auto& t : transcripts) {
    for (const auto& u : t.utterances) {
      auto toks = tokenize_utterance(u, mode);
      if (toks.empty()) continue;
      const std::uint64_t begin = stream.tokens.size();
      for (auto& tok : toks) stream.tokens.push_back(std::move(tok));
      stream.utterance_spans.push_back({begin, stream.tokens.size()});
      stream.utterance_ages.push_back(t.age_days.value_or(-1));
    }
  }
  return stream;
}

std::vector<Transcript> read_transcripts_jsonl(std::istream& in) {
  std::vector<Transcript> transcripts;
  std::unordered_map<std::string, std::size_t> index;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = "line " + std::to_string(line_no);
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError(where + ": " + e.what());
    }
    if (!rec.is_object()) throw ValidationError(where + ": expected a JSON object");
    if (!rec.contains("transcript_id") || !rec["transcript_id"].is_string()) {
      throw ValidationError(where + ": missing string field \"transcript_id\"");
    }
    if (!rec.contains("utterance") || !rec["utterance"].is_string()) {
      throw ValidationError(where + ": missing string field \"utterance\"");
    }
    std::optional<std::int64_t> age;
    if (rec.contains("age_days") && !rec["age_days"].is_null()) {
      if (!rec["age_days"].is_number_integer()) throw ValidationError(where + ": \"age_days\" must be an integer");
      age = rec["age_days"].get<std::int64_t>();
    }
    auto id = rec["transcript_id"].get<std::string>();
    auto [it, inserted] = index.try_emplace(id, transcripts.size());
    if (inserted) {
      transcripts.push_back({id, age, {}});
    } else if (transcripts[it->second].age_days != age) {
      throw ValidationError(where + ": transcript \"" + id + "\" has inconsistent age_days");
    }
    transcripts[it->second].utterances.push_back(rec["utterance"].get<std::string>());
  }
  return transcripts;
}

std::vector<Transcript> read_transcripts_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  return read_transcripts_jsonl(in);
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary Vocabulary::build(std::span<const std::string> tokens, std::size_t max_types) {
  if (max_types < 2) throw ValidationError("vocabulary needs max_types >= 2");
  std::unordered_map<std::string_view, std::uint64_t> counts;
  for (const auto& t : tokens) ++counts[t];
  std::vector<std::pair<std::string_view, std::uint64_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  const auto keep = std::min(ranked.size(), max_types - 1);
  std::vector<std::string> words;
  words.reserve(keep + 1);
  std::uint64_t covered = 0;
  for (std::size_t i = 0; i < keep; ++i) {
    words.emplace_back(ranked[i].first);
    covered += ranked[i].second;
  }
  words.emplace_back(kOovSymbol);
  auto v = from_words(std::move(words));
  v.oov_fraction_ = tokens.empty() ? 0.0 : static_cast<double>(tokens.size() - covered) / tokens.size();
  return v;
}

Vocabulary Vocabulary::from_words(std::vector<std::string> id_to_word) {
  if (id_to_word.empty() || id_to_word.back() != kOovSymbol) {
    throw ValidationError("vocabulary word list must end with the OOV symbol");
  }
  Vocabulary v;
  v.id_to_word_ = std::move(id_to_word);
  for (TokenId i = 0; i + 1 < v.id_to_word_.size(); ++i) {
    if (!v.word_to_id_.emplace(v.id_to_word_[i], i).second) {
      throw ValidationError("duplicate vocabulary entry \"" + v.id_to_word_[i] + "\"");
    }
  }
  return v;
}

TokenId Vocabulary::id(std::string_view word) const {
  auto it = word_to_id_.find(word);
  return it == word_to_id_.end() ? oov_id() : it->second;
}

bool Vocabulary::contains(std::string_view word) const { return word_to_id_.find(word) != word_to_id_.end(); }

EncodedStream encode(const TokenStream& stream, const Vocabulary& vocab) {
  EncodedStream out;
  out.ids.reserve(stream.tokens.size());
  for (const auto& t : stream.tokens) out.ids.push_back(vocab.id(t));
  out.utterance_spans = stream.utterance_spans;
  return out;
}

std::vector<std::string> decode(std::span<const TokenId> ids, const Vocabulary& vocab) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(vocab.word(id));
  return out;
}

// ---------------------------------------------------------------------------
// Partitioning

PreparedCorpus partition_stream(EncodedStream stream, std::size_t n_partitions, OrderingMode mode,
                                RemainderPolicy policy) {
  if (n_partitions == 0) throw ValidationError("n_partitions must be positive");
  const std::uint64_t total = stream.ids.size();
  if (total < n_partitions) {
    throw ValidationError("stream of " + std::to_string(total) + " tokens is shorter than " +
                          std::to_string(n_partitions) + " partitions");
  }
  const std::uint64_t len = total / n_partitions;
  const std::uint64_t kept = len * n_partitions;
  PreparedCorpus c;
  c.dropped_tokens = total - kept;
  if (c.dropped_tokens > 0) {
    if (policy == RemainderPolicy::error) {
      throw ValidationError(std::to_string(total) + " tokens do not divide into " + std::to_string(n_partitions) +
                            " equal partitions");
    }
    warn("dropping " + std::to_string(c.dropped_tokens) + " tail tokens so " + std::to_string(n_partitions) +
         " partitions hold " + std::to_string(len) + " tokens each");
  }
  stream.ids.resize(kept);
  c.ids = std::move(stream.ids);
  for (const auto& s : stream.utterance_spans) {
    if (s.begin >= kept) break;
    c.utterance_spans.push_back({s.begin, std::min(s.end, kept)});
  }
  for (std::uint64_t p = 0; p < n_partitions; ++p) c.partitions.push_back({p * len, (p + 1) * len});
  c.partition_order.resize(n_partitions);
  std::iota(c.partition_order.begin(), c.partition_order.end(), 0u);
  if (mode.kind == OrderingMode::Kind::shuffled) {
    Rng rng(mode.seed);
    rng.shuffle(std::span(c.partition_order));
  }
  c.ordering = mode;
  return c;
}

std::vector<TokenId> PreparedCorpus::training_stream() const {
  std::vector<TokenId> out;
  out.reserve(ids.size());
  for (auto p : partition_order) {
    const auto& s = partitions[p];
    out.insert(out.end(), ids.begin() + static_cast<std::ptrdiff_t>(s.begin),
               ids.begin() + static_cast<std::ptrdiff_t>(s.end));
  }
  return out;
}

std::span<const TokenId> PreparedCorpus::partition_at(std::size_t step) const {
  const auto& s = partitions.at(partition_order.at(step));
  return std::span(ids).subspan(s.begin, s.size());
}

std::vector<std::size_t> PreparedCorpus::training_utterance_lengths() const {
  std::vector<std::size_t> out;
  out.reserve(utterance_spans.size() + partitions.size());
  for (auto p : partition_order) {
    const auto& part = partitions[p];
    // First utterance whose end lies inside this partition.
    auto it = std::upper_bound(utterance_spans.begin(), utterance_spans.end(), part.begin,
                               [](std::uint64_t pos, const Span& s) { return pos < s.end; });
    for (; it != utterance_spans.end() && it->begin < part.end; ++it) {
      const auto b = std::max(it->begin, part.begin);
      const auto e = std::min(it->end, part.end);
      if (e > b) out.push_back(static_cast<std::size_t>(e - b));
    }
  }
  return out;
}

// Layout (all integers little-endian):
//   "ORDL" u16 version u8 ordering u8 punctuation u64 shuffle_seed
//   u32 n_partitions u64 partition_length u64 dropped_tokens
//   u32 vocab_size, then vocab_size x (u32 byte length, bytes)
//   u64 n_tokens, u32 ids[n_tokens]
//   u64 n_spans, (u64 begin, u64 end)[n_spans]
//   (u64 begin, u64 end)[n_partitions]
//   u32 partition_order[n_partitions]
std::string PreparedCorpus::serialize() const {
  binio::Writer w;
  w.bytes("ORDL");
  w.put(kFormatVersion);
  w.put(static_cast<std::uint8_t>(ordering.kind));
  w.put(static_cast<std::uint8_t>(punctuation));
  w.put(ordering.seed);
  w.put(static_cast<std::uint32_t>(partitions.size()));
  w.put(partition_length());
  w.put(dropped_tokens);
  w.put(static_cast<std::uint32_t>(vocab.size()));
  for (const auto& word : vocab.words()) w.put_string(word);
  w.put(static_cast<std::uint64_t>(ids.size()));
  w.put_array(std::span(ids));
  w.put(static_cast<std::uint64_t>(utterance_spans.size()));
  for (const auto& s : utterance_spans) {
    w.put(s.begin);
    w.put(s.end);
  }
  for (const auto& s : partitions) {
    w.put(s.begin);
    w.put(s.end);
  }
  w.put_array(std::span(partition_order));
  return w.buffer();
}

PreparedCorpus PreparedCorpus::deserialize(std::string bytes, std::string what) {
  binio::Reader r(std::move(bytes), std::move(what));
  r.expect_magic("ORDL");
  if (auto v = r.get<std::uint16_t>(); v != kFormatVersion) r.fail("unsupported version " + std::to_string(v));
  PreparedCorpus c;
  const auto kind = r.get<std::uint8_t>();
  const auto punct = r.get<std::uint8_t>();
  if (kind > 1 || punct > 1) r.fail("bad mode byte");
  c.ordering.kind = static_cast<OrderingMode::Kind>(kind);
  c.punctuation = static_cast<PunctuationMode>(punct);
  c.ordering.seed = r.get<std::uint64_t>();
  const auto n_parts = r.get<std::uint32_t>();
  const auto part_len = r.get<std::uint64_t>();
  c.dropped_tokens = r.get<std::uint64_t>();
  const auto vsize = r.get<std::uint32_t>();
  std::vector<std::string> words;
  words.reserve(vsize);
  for (std::uint32_t i = 0; i < vsize; ++i) words.push_back(r.get_string());
  c.vocab = Vocabulary::from_words(std::move(words));
  const auto n_tokens = r.get<std::uint64_t>();
  c.ids = r.get_array<TokenId>(n_tokens);
  const auto n_spans = r.get<std::uint64_t>();
  if (n_spans > n_tokens) r.fail("more spans than tokens");
  c.utterance_spans.resize(n_spans);
  for (auto& s : c.utterance_spans) {
    s.begin = r.get<std::uint64_t>();
    s.end = r.get<std::uint64_t>();
  }
  c.partitions.resize(n_parts);
  for (auto& s : c.partitions) {
    s.begin = r.get<std::uint64_t>();
    s.end = r.get<std::uint64_t>();
    if (s.size() != part_len || s.end > n_tokens) r.fail("inconsistent partition table");
  }
  c.partition_order = r.get_array<std::uint32_t>(n_parts);
  if (!r.at_end()) r.fail("trailing bytes");
  for (auto id : c.ids) {
    if (id >= c.vocab.size()) r.fail("token id out of vocabulary range");
  }
  auto sorted = c.partition_order;
  std::sort(sorted.begin(), sorted.end());
  for (std::uint32_t i = 0; i < sorted.size(); ++i) {
    if (sorted[i] != i) r.fail("partition order is not a permutation");
  }
  return c;
}

void PreparedCorpus::save(const std::filesystem::path& path) const { binio::write_file_atomic(path, serialize()); }

PreparedCorpus PreparedCorpus::load(const std::filesystem::path& path) {
  return deserialize(binio::read_file(path), path.string());
}

PreparedCorpus prepare_corpus(std::vector<Transcript> transcripts, const PrepareOptions& options) {
  const auto ordered = order_transcripts(std::move(transcripts));
  const auto stream = tokenize_transcripts(ordered, options.punctuation);
  auto vocab = Vocabulary::build(stream.tokens, options.max_types);
  auto corpus = partition_stream(encode(stream, vocab), options.n_partitions, options.ordering, options.remainder);
  corpus.punctuation = options.punctuation;
  corpus.vocab = std::move(vocab);
  return corpus;
}

}  // namespace ordl
