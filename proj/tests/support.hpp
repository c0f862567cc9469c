#pragma once

// Shared test helpers: scratch directories, the synthetic toy corpus and
// independent brute-force oracles.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ordl/common.hpp"
#include "ordl/harness.hpp"
#include "ordl/semeval.hpp"
#include "ordl/srn.hpp"

namespace testing {

namespace fs = std::filesystem;

inline fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("ordl-test-" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

/// Collects warnings for the lifetime of the object.
struct WarningCapture {
  std::vector<std::string> messages;
  WarningCapture() {
    ordl::set_warning_sink([this](std::string_view m) { messages.emplace_back(m); });
  }
  ~WarningCapture() { ordl::set_warning_sink(nullptr); }
  bool contains(const std::string& needle) const {
    return std::any_of(messages.begin(), messages.end(),
                       [&](const std::string& m) { return m.find(needle) != std::string::npos; });
  }
};

// ---------------------------------------------------------------------------
// Toy corpus: 4 categories of 6 nouns with category-specific frames, a pool
// of shared function words and a tail of rare words that fall out of a
// 64-type vocabulary. The retained-punctuation token count is exactly
// `total_tokens`.

inline const std::vector<std::pair<std::string, std::vector<std::string>>>& toy_categories() {
  static const std::vector<std::pair<std::string, std::vector<std::string>>> cats{
      {"animal", {"dog", "cat", "cow", "pig", "duck", "horse"}},
      {"food", {"apple", "cookie", "banana", "cheese", "bread", "juice"}},
      {"vehicle", {"car", "truck", "bus", "train", "boat", "bike"}},
      {"clothing", {"shoe", "hat", "sock", "coat", "shirt", "dress"}},
  };
  return cats;
}

inline std::vector<std::string> toy_utterance(ordl::Rng& rng) {
  static const std::vector<std::vector<std::vector<std::string>>> frames{
      {{"pet", "the", "*", "."}, {"the", "*", "sleeps", "."}, {"does", "the", "*", "bark", "?"}},
      {{"eat", "your", "*", "."}, {"yummy", "*", "!"}, {"do", "you", "want", "*", "?"}},
      {{"drive", "the", "*", "."}, {"the", "*", "goes", "fast", "!"}, {"where", "is", "the", "*", "going", "?"}},
      {{"wear", "your", "*", "."}, {"put", "on", "the", "*", "."}, {"is", "that", "your", "*", "?"}},
  };
  static const std::vector<std::vector<std::string>> shared{
      {"look", "at", "that", "."}, {"that", "'s", "nice", "."}, {"good", "job", "!"}, {"what", "'s", "that", "?"},
      {"daddy", "ca", "n't", "see", "."}, {"yes", "."}};
  static const std::vector<std::string> rare{"wug",   "blick", "dax",  "fep",  "toma", "zorp", "kiki", "bouba",
                                             "glorp", "snerk", "plim", "vask", "quib", "rull", "yeel", "mib"};
  const auto& cats = toy_categories();
  if (rng.below(4) == 0) {
    auto u = shared[rng.below(shared.size())];
    if (rng.below(3) == 0) u.insert(u.begin(), rare[rng.below(rare.size())]);
    return u;
  }
  const auto c = rng.below(cats.size());
  auto u = frames[c][rng.below(frames[c].size())];
  const auto& noun = cats[c].second[rng.below(cats[c].second.size())];
  std::replace(u.begin(), u.end(), std::string("*"), noun);
  return u;
}

struct ToyFixture {
  fs::path dir;
  fs::path transcripts;
  fs::path probes;
  fs::path config;
};

/// Writes transcripts.jsonl, probes.csv and config.json into `dir`.
inline ToyFixture make_toy_fixture(const fs::path& dir, std::size_t total_tokens = 4000, std::uint64_t seed = 7) {
  fs::create_directories(dir);
  ordl::Rng rng(seed);
  std::vector<std::vector<std::string>> utterances;
  std::size_t count = 0;
  while (count < total_tokens) {
    auto u = toy_utterance(rng);
    const std::size_t left = total_tokens - count;
    if (u.size() > left) {
      u.assign({"ok"});
      while (u.size() < left) u.insert(u.begin(), "so");
    }
    count += u.size();
    utterances.push_back(std::move(u));
  }

  ToyFixture f{dir, dir / "transcripts.jsonl", dir / "probes.csv", dir / "config.json"};
  std::ofstream jl(f.transcripts);
  const std::size_t per_transcript = 25;
  for (std::size_t i = 0; i < utterances.size(); ++i) {
    std::string text;
    for (const auto& tok : utterances[i]) {
      // Clitics and boundary marks attach to the previous word as in a transcript.
      const bool attach = !text.empty() && (tok == "." || tok == "?" || tok == "!" || tok[0] == '\'' || tok == "n't");
      if (!text.empty() && !attach) text += ' ';
      text += tok;
    }
    const std::size_t t = i / per_transcript;
    // Transcript ids run opposite to age so ordering cannot rely on file order.
    jl << "{\"transcript_id\":\"t" << (1000 - t) << "\",\"age_days\":" << (400 + 10 * t)
       << ",\"utterance\":\"" << text << "\"}\n";
  }

  std::ofstream pc(f.probes);
  pc << "word,category\n";
  for (const auto& [cat, nouns] : toy_categories()) {
    for (const auto& n : nouns) pc << n << ',' << cat << '\n';
  }

  spit(f.config, R"({
  "schema_version": 1,
  "corpus": {"path": "transcripts.jsonl", "n_partitions": 8, "max_types": 64},
  "design": {"orderings": ["chronological", "shuffled"], "punctuation": ["retained"], "seeds": [1, 2], "master_seed": 11},
  "srn": {"hidden_size": 16, "window": 7, "epochs_per_partition": 20, "learning_rate": 0.1, "init_scale": 0.04},
  "evaluation": {"probes": "probes.csv", "conditions": ["ordered", "shuffled", "none"]},
  "output": {"dir": "out"}
}
)");
  return f;
}

// ---------------------------------------------------------------------------
// Oracles

/// Cumulative first-seen n-gram counts by direct set insertion of n-gram
/// vectors.
inline std::vector<std::uint64_t> brute_novel_ngrams(const std::vector<ordl::TokenId>& ids, int n,
                                                     std::size_t bin) {
  std::set<std::vector<ordl::TokenId>> seen;
  std::vector<std::uint64_t> out;
  const std::size_t positions = ids.size() - static_cast<std::size_t>(n) + 1;
  for (std::size_t i = 0; i < positions; ++i) {
    seen.insert(std::vector<ordl::TokenId>(ids.begin() + static_cast<std::ptrdiff_t>(i),
                                           ids.begin() + static_cast<std::ptrdiff_t>(i) + n));
    if ((i + 1) % bin == 0 || i + 1 == positions) out.push_back(seen.size());
  }
  return out;
}

/// Entropy in bits from a frequency map, summed in key order.
inline double brute_entropy(const std::vector<ordl::TokenId>& ids) {
  std::map<ordl::TokenId, double> freq;
  for (auto t : ids) freq[t] += 1.0;
  double h = 0.0;
  for (const auto& [_, c] : freq) {
    const double p = c / static_cast<double>(ids.size());
    h -= p * std::log2(p);
  }
  return h;
}

struct BruteBa {
  std::vector<double> mean_by_threshold;
  std::set<double> best_thresholds;
  double best_mean = 0.0;
};

/// Direct double loop over probe pairs at every threshold.
inline BruteBa brute_balanced_accuracy(const ordl::SimilarityMatrix& s, const std::vector<std::size_t>& labels,
                                       const std::vector<double>& grid) {
  const std::size_t P = s.size;
  BruteBa out;
  for (double r : grid) {
    double sum = 0.0;
    std::size_t included = 0;
    for (std::size_t i = 0; i < P; ++i) {
      std::size_t pos = 0, neg = 0, hits = 0, cr = 0;
      for (std::size_t j = 0; j < P; ++j) {
        if (j == i) continue;
        if (labels[j] == labels[i]) {
          ++pos;
          if (s(i, j) > r) ++hits;
        } else {
          ++neg;
          if (s(i, j) <= r) ++cr;
        }
      }
      if (pos == 0 || neg == 0) continue;
      ++included;
      sum += 0.5 * (static_cast<double>(hits) / static_cast<double>(pos) +
                    static_cast<double>(cr) / static_cast<double>(neg));
    }
    out.mean_by_threshold.push_back(sum / static_cast<double>(included));
  }
  out.best_mean = *std::max_element(out.mean_by_threshold.begin(), out.mean_by_threshold.end());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    if (out.mean_by_threshold[g] == out.best_mean) out.best_thresholds.insert(grid[g]);
  }
  return out;
}

/// Random symmetric matrix on the 0.001 lattice of [-1, 1] (so values hit
/// grid thresholds exactly) with random labels over 2..4 categories.
inline std::pair<ordl::SimilarityMatrix, std::vector<std::size_t>> random_similarity_case(ordl::Rng& rng) {
  const std::size_t P = 2 + rng.below(19);
  const std::size_t C = 2 + rng.below(3);
  ordl::SimilarityMatrix s{P, std::vector<double>(P * P, 1.0)};
  const bool coarse = rng.below(2) == 0;  // coarse lattice forces many ties
  for (std::size_t i = 0; i < P; ++i) {
    for (std::size_t j = i + 1; j < P; ++j) {
      const double v = coarse ? static_cast<double>(rng.below(11)) / 10.0
                              : static_cast<double>(static_cast<std::int64_t>(rng.below(2001)) - 1000) / 1000.0;
      s.values[i * P + j] = s.values[j * P + i] = v;
    }
  }
  std::vector<std::size_t> labels(P);
  for (auto& l : labels) l = rng.below(C);
  return {s, labels};
}

// ---------------------------------------------------------------------------
// Gradient check

/// |analytic - numeric| / max(|analytic|, |numeric|, floor).
inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::size_t parameters_checked = 0;
};

/// Central differences over every weight of a vocab x hidden network with
/// random weights (uniform +/-0.5) and random windows, one trial per seed.
inline GradientCheckResult gradient_check(std::size_t trials, std::uint32_t vocab = 10, std::uint32_t hidden = 5,
                                          std::uint32_t window = 7, double eps = 1e-4, double floor = 1e-6) {
  GradientCheckResult result;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    ordl::SrnConfig c;
    c.vocab_size = vocab;
    c.hidden_size = hidden;
    c.window = window;
    c.init_scale = 0.5;
    c.seed = 1000 + trial;
    auto w = ordl::init_weights<double>(c);
    ordl::Rng rng(77 + trial);
    for (auto& b : w.hidden_bias) b = rng.uniform(-0.5, 0.5);
    for (auto& b : w.output_bias) b = rng.uniform(-0.5, 0.5);
    std::vector<ordl::TokenId> inputs(window);
    for (auto& t : inputs) t = static_cast<ordl::TokenId>(rng.below(vocab));
    const auto target = static_cast<ordl::TokenId>(rng.below(vocab));

    ordl::SrnWorkspace<double> ws(vocab, hidden, window);
    ordl::WindowGradients<double> g;
    ordl::window_gradients(w, std::span<const ordl::TokenId>(inputs), target, ws, g);

    auto numeric = [&](double& param) {
      const double saved = param;
      param = saved + eps;
      const double up = ordl::window_loss(w, std::span<const ordl::TokenId>(inputs), target, ws);
      param = saved - eps;
      const double down = ordl::window_loss(w, std::span<const ordl::TokenId>(inputs), target, ws);
      param = saved;
      return (up - down) / (2 * eps);
    };
    auto check = [&](double analytic, double& param) {
      result.max_relative_error = std::max(result.max_relative_error, relative_error(analytic, numeric(param), floor));
      ++result.parameters_checked;
    };
    for (std::size_t v = 0; v < vocab; ++v) {
      for (std::size_t h = 0; h < hidden; ++h) {
        check(g.d_input_hidden(static_cast<ordl::TokenId>(v), h), w.input_hidden[v * hidden + h]);
        check(g.d_hidden_output(h, v), w.hidden_output[h * vocab + v]);
      }
      check(g.d_output_bias(v), w.output_bias[v]);
    }
    for (std::size_t j = 0; j < hidden; ++j) {
      for (std::size_t i = 0; i < hidden; ++i) check(g.d_hidden_hidden(j, i), w.hidden_hidden[j * hidden + i]);
      check(g.hidden_bias[j], w.hidden_bias[j]);
    }
  }
  return result;
}

/// Deterministic "a b c a b c ..." ids over a 4-id vocabulary (id 3 is OOV).
inline std::vector<ordl::TokenId> cyclic_stream(std::size_t n) {
  std::vector<ordl::TokenId> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<ordl::TokenId>(i % 3);
  return ids;
}

}  // namespace testing
