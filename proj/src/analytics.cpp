#include "ordl/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "ordl/binio.hpp"
#include "ordl/csv.hpp"
#include "ordl/svg.hpp"

namespace ordl {

namespace {

// The set stores n-gram start positions; hashing and equality look through
// to the ids, so memory is one word per distinct n-gram.
struct NgramHash {
  const TokenId* data;
  int n;
  std::size_t operator()(std::size_t pos) const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (int k = 0; k < n; ++k) {
      h ^= data[pos + static_cast<std::size_t>(k)];
      h *= 0x100000001b3ULL;
    }
    return static_cast<std::size_t>(splitmix64(h));
  }
};

struct NgramEq {
  const TokenId* data;
  int n;
  bool operator()(std::size_t a, std::size_t b) const {
    return std::equal(data + a, data + a + n, data + b);
  }
};

}  // namespace

NoveltyCurve novel_ngram_curve(std::span<const TokenId> ids, int n, std::size_t bin_size) {
  if (n < 1) throw ValidationError("n-gram order must be >= 1");
  if (bin_size < 1) throw ValidationError("bin size must be >= 1");
  if (static_cast<std::size_t>(n) > ids.size()) {
    throw ValidationError("n-gram order " + std::to_string(n) + " exceeds stream length " +
                          std::to_string(ids.size()));
  }
  const std::size_t positions = ids.size() - static_cast<std::size_t>(n) + 1;
  std::unordered_set<std::size_t, NgramHash, NgramEq> seen(16, NgramHash{ids.data(), n}, NgramEq{ids.data(), n});
  NoveltyCurve curve{n, bin_size, {}};
  curve.cumulative_novel.reserve((positions + bin_size - 1) / bin_size);
  std::uint64_t novel = 0;
  for (std::size_t i = 0; i < positions; ++i) {
    if (seen.insert(i).second) ++novel;
    if ((i + 1) % bin_size == 0 || i + 1 == positions) curve.cumulative_novel.push_back(novel);
  }
  return curve;
}

double partition_entropy(std::span<const TokenId> ids) {
  if (ids.empty()) throw ValidationError("entropy of an empty partition is undefined");
  std::unordered_map<TokenId, std::uint64_t> counts;
  for (auto id : ids) ++counts[id];
  // Sum in id order so the result does not depend on hash-table layout.
  std::vector<std::pair<TokenId, std::uint64_t>> sorted(counts.begin(), counts.end());
  std::sort(sorted.begin(), sorted.end());
  const double total = static_cast<double>(ids.size());
  double h = 0.0;
  for (const auto& [id, c] : sorted) {
    const double p = static_cast<double>(c) / total;
    h -= p * std::log2(p);
  }
  return h;
}

std::vector<double> partition_entropies(const PreparedCorpus& corpus) {
  std::vector<double> out;
  out.reserve(corpus.n_partitions());
  for (std::size_t k = 0; k < corpus.n_partitions(); ++k) out.push_back(partition_entropy(corpus.partition_at(k)));
  return out;
}

RollingStats rolling_utterance_stats(std::span<const std::size_t> lengths, std::size_t window, std::size_t step) {
  if (window < 2) throw ValidationError("rolling window must hold >= 2 utterances");
  if (step < 1) throw ValidationError("rolling step must be >= 1");
  if (lengths.size() < window) {
    throw ValidationError("only " + std::to_string(lengths.size()) + " utterances for a window of " +
                          std::to_string(window));
  }
  RollingStats out{window, step, {}, {}};
  // Integer prefix sums keep every window exact regardless of position.
  using Wide = unsigned __int128;
  std::vector<Wide> sum(lengths.size() + 1, 0), sum_sq(lengths.size() + 1, 0);
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    sum[i + 1] = sum[i] + lengths[i];
    sum_sq[i + 1] = sum_sq[i] + static_cast<Wide>(lengths[i]) * lengths[i];
  }
  const auto w = static_cast<Wide>(window);
  for (std::size_t start = 0; start + window <= lengths.size(); start += step) {
    const Wide s = sum[start + window] - sum[start];
    const Wide q = sum_sq[start + window] - sum_sq[start];
    out.means.push_back(static_cast<double>(s) / static_cast<double>(window));
    out.stds.push_back(std::sqrt(static_cast<double>(w * q - s * s) / static_cast<double>(w * w)));
  }
  return out;
}

std::map<std::string, LocationProfile> location_profiles(std::span<const TokenId> ids, const Vocabulary& vocab) {
  if (ids.empty()) throw ValidationError("location profiles need a nonempty stream");
  std::vector<std::uint64_t> freq(vocab.size(), 0), pos_sum(vocab.size(), 0);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    ++freq.at(ids[i]);
    pos_sum[ids[i]] += i;
  }
  const double total = static_cast<double>(ids.size());
  std::map<std::string, LocationProfile> out;
  for (TokenId id = 0; id < vocab.oov_id(); ++id) {
    if (freq[id] == 0) continue;
    const double mean = static_cast<double>(pos_sum[id]) / static_cast<double>(freq[id]) / total;
    out.emplace(vocab.word(id), LocationProfile{vocab.word(id), freq[id], mean});
  }
  return out;
}

Lexicon read_lexicon_csv(const std::filesystem::path& path) {
  Lexicon lex;
  csv::for_each_row(path, [&](const std::vector<std::string>& f, std::size_t line) {
    if (f.size() < 2) throw ValidationError(path.string() + ":" + std::to_string(line) + ": expected word,category");
    if (line == 1 && f[0] == "word" && f[1] == "category") return;
    lex[f[0]] = f[1];
  });
  if (lex.empty()) throw ValidationError(path.string() + ": lexicon is empty");
  return lex;
}

std::vector<HalfSplitCurves> half_split_curves(const std::map<std::string, LocationProfile>& profiles,
                                               const Lexicon& lexicon, std::span<const TokenId> ids,
                                               const Vocabulary& vocab, std::size_t n_bins) {
  if (lexicon.empty()) throw ValidationError("lexicon is empty");
  if (n_bins < 2) throw ValidationError("half-split curves need >= 2 bins");
  if (ids.empty()) throw ValidationError("half-split curves need a nonempty stream");

  std::map<std::string, std::vector<const LocationProfile*>> by_category;
  for (const auto& [word, category] : lexicon) {
    by_category[category];
    if (auto it = profiles.find(word); it != profiles.end()) by_category[category].push_back(&it->second);
  }

  std::vector<HalfSplitCurves> out;
  // word id -> (curve index, half)
  std::unordered_map<TokenId, std::pair<std::size_t, int>> membership;
  for (auto& [category, words] : by_category) {
    if (words.size() < 2) {
      warn("category \"" + category + "\" has " + std::to_string(words.size()) +
           " attested words; skipping half-split curves");
      continue;
    }
    std::sort(words.begin(), words.end(), [](const LocationProfile* a, const LocationProfile* b) {
      if (a->mean_location != b->mean_location) return a->mean_location < b->mean_location;
      return a->word < b->word;
    });
    HalfSplitCurves c;
    c.category = category;
    c.first_half_counts.assign(n_bins, 0);
    c.second_half_counts.assign(n_bins, 0);
    const std::size_t first = (words.size() + 1) / 2;
    for (std::size_t i = 0; i < words.size(); ++i) {
      (i < first ? c.first_half_words : c.second_half_words).push_back(words[i]->word);
      membership[vocab.id(words[i]->word)] = {out.size(), i < first ? 0 : 1};
    }
    out.push_back(std::move(c));
  }

  const std::uint64_t total = ids.size();
  for (std::uint64_t i = 0; i < total; ++i) {
    auto it = membership.find(ids[i]);
    if (it == membership.end()) continue;
    const auto bin = static_cast<std::size_t>(i * n_bins / total);
    auto& c = out[it->second.first];
    ++(it->second.second == 0 ? c.first_half_counts : c.second_half_counts)[bin];
  }
  return out;
}

void write_novelty_csv(std::ostream& out, std::span<const NoveltyCurve> curves) {
  out << "n,bin,end_position,cumulative_novel\n";
  for (const auto& c : curves) {
    for (std::size_t b = 0; b < c.cumulative_novel.size(); ++b) {
      out << c.n << ',' << b << ',' << (b + 1) * c.bin_size << ',' << c.cumulative_novel[b] << '\n';
    }
  }
}

void write_entropy_csv(std::ostream& out, std::span<const double> bits) {
  out << "partition,entropy_bits\n";
  for (std::size_t i = 0; i < bits.size(); ++i) out << i << ',' << csv::number(bits[i]) << '\n';
}

void write_rolling_csv(std::ostream& out, const RollingStats& stats) {
  out << "window,start_utterance,mean_length,std_length\n";
  for (std::size_t i = 0; i < stats.means.size(); ++i) {
    out << i << ',' << i * stats.step << ',' << csv::number(stats.means[i]) << ',' << csv::number(stats.stds[i])
        << '\n';
  }
}

void write_location_csv(std::ostream& out, const std::map<std::string, LocationProfile>& profiles) {
  out << "word,frequency,mean_location\n";
  for (const auto& [word, p] : profiles) {
    out << csv::escape(word) << ',' << p.frequency << ',' << csv::number(p.mean_location) << '\n';
  }
}

void write_half_split_csv(std::ostream& out, std::span<const HalfSplitCurves> curves) {
  out << "category,half,bin,token_count\n";
  for (const auto& c : curves) {
    for (std::size_t b = 0; b < c.first_half_counts.size(); ++b) {
      out << csv::escape(c.category) << ",first," << b << ',' << c.first_half_counts[b] << '\n';
    }
    for (std::size_t b = 0; b < c.second_half_counts.size(); ++b) {
      out << csv::escape(c.category) << ",second," << b << ',' << c.second_half_counts[b] << '\n';
    }
  }
}

namespace {

template <typename Fn>
void write_text(const std::filesystem::path& path, Fn&& fn) {
  std::ostringstream ss;
  fn(ss);
  binio::write_file_atomic(path, ss.str());
}

}  // namespace

void run_analytics(const PreparedCorpus& corpus, const AnalyticsOptions& options, const Lexicon* lexicon,
                   const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto stream = corpus.training_stream();

  std::vector<NoveltyCurve> curves;
  for (int n = 1; n <= options.max_ngram && static_cast<std::size_t>(n) <= stream.size(); ++n) {
    curves.push_back(novel_ngram_curve(stream, n, options.ngram_bin_size));
  }
  write_text(dir / "novel_ngrams.csv", [&](std::ostream& o) { write_novelty_csv(o, curves); });

  const auto entropies = partition_entropies(corpus);
  write_text(dir / "partition_entropy.csv", [&](std::ostream& o) { write_entropy_csv(o, entropies); });

  const auto lengths = corpus.training_utterance_lengths();
  if (lengths.size() >= options.rolling_window) {
    const auto rolling = rolling_utterance_stats(lengths, options.rolling_window, options.rolling_step);
    write_text(dir / "utterance_length.csv", [&](std::ostream& o) { write_rolling_csv(o, rolling); });
  } else {
    warn("corpus has " + std::to_string(lengths.size()) + " utterances, fewer than the rolling window of " +
         std::to_string(options.rolling_window) + "; skipping utterance_length.csv");
  }

  const auto profiles = location_profiles(stream, corpus.vocab);
  write_text(dir / "location_profiles.csv", [&](std::ostream& o) { write_location_csv(o, profiles); });

  if (lexicon) {
    const auto halves = half_split_curves(profiles, *lexicon, stream, corpus.vocab, options.location_bins);
    write_text(dir / "half_split.csv", [&](std::ostream& o) { write_half_split_csv(o, halves); });
  }

  svg::Chart novelty{"Novel n-grams", "corpus position (tokens)", "cumulative novel n-grams", {}};
  for (const auto& c : curves) {
    svg::Series s{std::to_string(c.n) + "-grams", {}, {}, {}};
    for (std::size_t b = 0; b < c.cumulative_novel.size(); ++b) {
      s.x.push_back(static_cast<double>((b + 1) * c.bin_size));
      s.y.push_back(static_cast<double>(c.cumulative_novel[b]));
    }
    novelty.series.push_back(std::move(s));
  }
  binio::write_file_atomic(dir / "novel_ngrams.svg", svg::render(novelty));

  svg::Chart entropy{"Partition entropy", "partition", "entropy (bits)", {}};
  svg::Series es{"entropy", {}, {}, {}};
  for (std::size_t i = 0; i < entropies.size(); ++i) {
    es.x.push_back(static_cast<double>(i));
    es.y.push_back(entropies[i]);
  }
  entropy.series.push_back(std::move(es));
  binio::write_file_atomic(dir / "partition_entropy.svg", svg::render(entropy));
}

}  // namespace ordl
