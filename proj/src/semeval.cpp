#include "ordl/semeval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <unordered_map>

#include "ordl/binio.hpp"
#include "ordl/csv.hpp"

namespace ordl {

// ---------------------------------------------------------------------------
// Probe inventory

ProbeInventory ProbeInventory::from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs) {
  ProbeInventory inv;
  std::map<std::string, std::size_t> index;
  for (const auto& [word, category] : pairs) {
    auto [it, inserted] = index.try_emplace(category, inv.category_names.size());
    if (inserted) inv.category_names.push_back(category);
    inv.words.push_back(word);
    inv.labels.push_back(it->second);
  }
  return inv;
}

ProbeInventory ProbeInventory::read_csv(const std::filesystem::path& path) {
  std::vector<std::pair<std::string, std::string>> pairs;
  csv::for_each_row(path, [&](const std::vector<std::string>& f, std::size_t line) {
    if (f.size() != 2) {
      throw ValidationError(path.string() + ":" + std::to_string(line) + ": expected word,category");
    }
    if (line == 1 && f[0] == "word" && f[1] == "category") return;
    pairs.emplace_back(f[0], f[1]);
  });
  return from_pairs(pairs);
}

void ProbeInventory::validate(const Vocabulary& vocab) const {
  if (words.empty()) throw ValidationError("probe inventory is empty");
  std::map<std::string, std::size_t> seen;
  std::vector<std::size_t> per_category(category_names.size(), 0);
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (!seen.emplace(words[i], i).second) throw ValidationError("probe \"" + words[i] + "\" is listed twice");
    if (!vocab.contains(words[i])) throw ValidationError("probe \"" + words[i] + "\" is not in the vocabulary");
    ++per_category[labels[i]];
  }
  for (std::size_t c = 0; c < category_names.size(); ++c) {
    if (per_category[c] < 2) {
      throw ValidationError("category \"" + category_names[c] + "\" has fewer than 2 probes");
    }
  }
}

std::vector<TokenId> ProbeInventory::ids(const Vocabulary& vocab) const {
  std::vector<TokenId> out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(vocab.id(w));
  return out;
}

std::string_view to_string(RepCondition::Kind kind) {
  switch (kind) {
    case RepCondition::Kind::ordered_context: return "ordered";
    case RepCondition::Kind::shuffled_context: return "shuffled";
    case RepCondition::Kind::no_context: return "none";
  }
  return "?";
}

RepCondition::Kind parse_rep_condition(std::string_view text) {
  if (text == "ordered") return RepCondition::Kind::ordered_context;
  if (text == "shuffled") return RepCondition::Kind::shuffled_context;
  if (text == "none") return RepCondition::Kind::no_context;
  throw ValidationError("unknown representation condition \"" + std::string(text) +
                        "\" (expected ordered|shuffled|none)");
}

std::string_view to_string(SimilarityMeasure m) { return m == SimilarityMeasure::cosine ? "cosine" : "correlation"; }

SimilarityMeasure parse_similarity_measure(std::string_view text) {
  if (text == "cosine") return SimilarityMeasure::cosine;
  if (text == "correlation") return SimilarityMeasure::correlation;
  throw ValidationError("unknown similarity measure \"" + std::string(text) + "\" (expected cosine|correlation)");
}

// ---------------------------------------------------------------------------
// Representations

std::vector<std::size_t> probe_occurrences(std::span<const TokenId> stream, TokenId probe, std::size_t window) {
  std::vector<std::size_t> out;
  for (std::size_t t = window == 0 ? 0 : window - 1; t < stream.size(); ++t) {
    if (stream[t] == probe) out.push_back(t);
  }
  return out;
}

namespace {

std::uint64_t probe_seed(std::uint64_t seed, TokenId probe) { return splitmix64(seed ^ splitmix64(probe)); }

void subsample(std::vector<std::size_t>& positions, const RepresentationOptions& options, TokenId probe) {
  if (options.max_occurrences == 0 || positions.size() <= options.max_occurrences) return;
  Rng rng(probe_seed(options.subsample_seed ^ 0x5eed5a3b1e000000ULL, probe));
  for (std::size_t i = 0; i < options.max_occurrences; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(positions.size() - i));
    std::swap(positions[i], positions[j]);
  }
  positions.resize(options.max_occurrences);
  std::sort(positions.begin(), positions.end());
}

template <typename Real>
std::vector<double> representation_at(const SrnWeights<Real>& w, TokenId probe, const RepCondition& condition,
                                      std::span<const TokenId> stream, std::size_t window,
                                      std::vector<std::size_t> positions, const RepresentationOptions& options) {
  const std::size_t H = w.hidden;
  std::vector<Real> state(H);
  std::vector<double> rep(H, 0.0);
  if (condition.kind == RepCondition::Kind::no_context) {
    const TokenId only[] = {probe};
    run_from_reset(w, std::span<const TokenId>(only), std::span(state));
    std::copy(state.begin(), state.end(), rep.begin());
    return rep;
  }
  subsample(positions, options, probe);
  if (positions.empty()) {
    throw ValidationError("probe id " + std::to_string(probe) + " has no occurrence with a full " +
                          std::to_string(window) + "-token window");
  }
  Rng rng(probe_seed(condition.seed, probe));
  std::vector<TokenId> buf(window);
  for (auto t : positions) {
    std::copy(stream.begin() + static_cast<std::ptrdiff_t>(t + 1 - window),
              stream.begin() + static_cast<std::ptrdiff_t>(t + 1), buf.begin());
    if (condition.kind == RepCondition::Kind::shuffled_context) rng.shuffle(std::span(buf).first(window - 1));
    run_from_reset(w, std::span<const TokenId>(buf), std::span(state));
    for (std::size_t i = 0; i < H; ++i) rep[i] += static_cast<double>(state[i]);
  }
  for (auto& x : rep) x /= static_cast<double>(positions.size());
  return rep;
}

}  // namespace

template <typename Real>
std::vector<double> probe_representation(const SrnWeights<Real>& w, TokenId probe, const RepCondition& condition,
                                         std::span<const TokenId> stream, std::size_t window,
                                         const RepresentationOptions& options) {
  if (window < 1) throw ValidationError("window must be >= 1");
  if (probe >= w.vocab) throw ValidationError("probe id " + std::to_string(probe) + " is out of range");
  std::vector<std::size_t> positions;
  if (condition.kind != RepCondition::Kind::no_context) positions = probe_occurrences(stream, probe, window);
  return representation_at(w, probe, condition, stream, window, std::move(positions), options);
}

// ---------------------------------------------------------------------------
// Similarity

SimilarityMatrix similarity_matrix(std::span<const std::vector<double>> reps, SimilarityMeasure measure) {
  const std::size_t P = reps.size();
  std::vector<std::vector<double>> unit(P);
  for (std::size_t i = 0; i < P; ++i) {
    auto v = reps[i];
    if (i > 0 && v.size() != reps[0].size()) throw ValidationError("representations differ in length");
    if (measure == SimilarityMeasure::correlation && !v.empty()) {
      const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      for (auto& x : v) x -= mean;
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (!(norm > 0.0)) {
      throw ValidationError("representation " + std::to_string(i) + " has zero " +
                            (measure == SimilarityMeasure::cosine ? "norm" : "variance") + "; cannot normalize");
    }
    for (auto& x : v) x /= norm;
    unit[i] = std::move(v);
  }
  SimilarityMatrix s{P, std::vector<double>(P * P, 0.0)};
  for (std::size_t i = 0; i < P; ++i) {
    s.values[i * P + i] = 1.0;
    for (std::size_t j = i + 1; j < P; ++j) {
      double d = 0.0;
      for (std::size_t k = 0; k < unit[i].size(); ++k) d += unit[i][k] * unit[j][k];
      d = std::clamp(d, -1.0, 1.0);
      s.values[i * P + j] = d;
      s.values[j * P + i] = d;
    }
  }
  return s;
}

void SimilarityMatrix::save(const std::filesystem::path& path) const {
  binio::Writer w;
  w.put(static_cast<std::uint64_t>(size));
  w.put(static_cast<std::uint64_t>(size));
  w.put_array(std::span<const double>(values));
  w.save(path);
}

SimilarityMatrix SimilarityMatrix::load(const std::filesystem::path& path) {
  auto r = binio::Reader::from_file(path);
  const auto rows = r.get<std::uint64_t>();
  const auto cols = r.get<std::uint64_t>();
  if (rows != cols) r.fail("similarity matrix is not square");
  SimilarityMatrix s{rows, r.get_array<double>(rows * cols)};
  if (!r.at_end()) r.fail("trailing bytes");
  return s;
}

// ---------------------------------------------------------------------------
// Balanced accuracy

std::vector<double> threshold_grid(double step) {
  if (!(step > 0.0) || step > 1.0) throw ValidationError("threshold step must be in (0, 1]");
  const auto n = static_cast<std::size_t>(std::llround(1.0 / step));
  if (std::abs(static_cast<double>(n) * step - 1.0) > 1e-9) {
    throw ValidationError("threshold step must divide 1 evenly");
  }
  std::vector<double> grid(n + 1);
  for (std::size_t k = 0; k <= n; ++k) grid[k] = static_cast<double>(k) / static_cast<double>(n);
  return grid;
}

BalancedAccuracyReport balanced_accuracy(const SimilarityMatrix& s, std::span<const std::size_t> labels,
                                         std::span<const double> grid, unsigned threads) {
  const std::size_t P = s.size;
  if (grid.empty()) throw ValidationError("threshold grid is empty");
  if (labels.size() != P) throw ValidationError("label count does not match the similarity matrix");
  const std::size_t G = grid.size();

  // rows[i * G + g] = BA of probe i at grid[g]; NaN rows mark exclusions.
  std::vector<double> rows(P * G, std::numeric_limits<double>::quiet_NaN());
  parallel_for(P, threads, [&](std::size_t i) {
    std::vector<double> pos, neg;
    for (std::size_t j = 0; j < P; ++j) {
      if (j == i) continue;
      (labels[j] == labels[i] ? pos : neg).push_back(s(i, j));
    }
    if (pos.empty() || neg.empty()) return;
    std::sort(pos.begin(), pos.end());
    std::sort(neg.begin(), neg.end());
    const double n_pos = static_cast<double>(pos.size());
    const double n_neg = static_cast<double>(neg.size());
    for (std::size_t g = 0; g < G; ++g) {
      const auto hits = static_cast<std::size_t>(pos.end() - std::upper_bound(pos.begin(), pos.end(), grid[g]));
      const auto rejections = static_cast<std::size_t>(std::upper_bound(neg.begin(), neg.end(), grid[g]) - neg.begin());
      rows[i * G + g] = 0.5 * (static_cast<double>(hits) / n_pos + static_cast<double>(rejections) / n_neg);
    }
  });

  BalancedAccuracyReport report;
  std::vector<std::size_t> included;
  for (std::size_t i = 0; i < P; ++i) {
    (std::isnan(rows[i * G]) ? report.excluded_probes : included).push_back(i);
  }
  if (included.empty()) throw ValidationError("no probe has both same-category and different-category partners");

  report.mean_ba_by_threshold.assign(G, 0.0);
  for (std::size_t g = 0; g < G; ++g) {
    double sum = 0.0;
    for (auto i : included) sum += rows[i * G + g];
    report.mean_ba_by_threshold[g] = sum / static_cast<double>(included.size());
  }
  std::size_t best = 0;
  for (std::size_t g = 1; g < G; ++g) {
    const double m = report.mean_ba_by_threshold[g];
    const double b = report.mean_ba_by_threshold[best];
    if (m > b || (m == b && grid[g] < grid[best])) best = g;
  }
  report.best_threshold = grid[best];
  report.mean_ba = report.mean_ba_by_threshold[best];
  report.per_probe_ba.resize(P);
  for (std::size_t i = 0; i < P; ++i) report.per_probe_ba[i] = rows[i * G + best];
  return report;
}

// ---------------------------------------------------------------------------
// Composition

template <typename Real>
std::vector<ConditionReport> evaluate_semantics(const SrnWeights<Real>& w, std::span<const TokenId> stream,
                                                const ProbeInventory& inventory, const Vocabulary& vocab,
                                                std::span<const RepCondition> conditions, std::size_t window,
                                                const SemanticEvalOptions& options) {
  inventory.validate(vocab);
  if (vocab.size() != w.vocab) throw ValidationError("network and corpus vocabularies differ in size");
  const auto probe_ids = inventory.ids(vocab);
  const std::size_t P = probe_ids.size();

  // One pass over the stream collects every probe's window-final positions.
  std::vector<std::vector<std::size_t>> occurrences(P);
  {
    std::unordered_map<TokenId, std::size_t> slot;
    for (std::size_t p = 0; p < P; ++p) slot.emplace(probe_ids[p], p);
    for (std::size_t t = window - 1; t < stream.size(); ++t) {
      if (auto it = slot.find(stream[t]); it != slot.end()) occurrences[it->second].push_back(t);
    }
  }

  std::vector<ConditionReport> out;
  for (const auto& condition : conditions) {
    const auto cname = std::string(to_string(condition.kind));
    std::vector<std::vector<double>> reps(P);
    parallel_for(P, options.representation.threads, [&](std::size_t p) {
      if (condition.kind != RepCondition::Kind::no_context && occurrences[p].empty()) {
        throw ValidationError("probe \"" + inventory.words[p] + "\" never ends a full " + std::to_string(window) +
                              "-token window (condition " + cname + ")");
      }
      reps[p] = representation_at(w, probe_ids[p], condition, stream, window, occurrences[p], options.representation);
    });

    ConditionReport cr{condition, {}, {}};
    const bool identical = std::all_of(reps.begin(), reps.end(), [&](const auto& r) { return r == reps.front(); });
    if (identical) {
      warn("all probe representations are identical under condition " + cname + "; report marked degenerate");
      cr.report.degenerate = true;
      cr.report.mean_ba = std::numeric_limits<double>::quiet_NaN();
      cr.report.best_threshold = std::numeric_limits<double>::quiet_NaN();
      cr.report.per_probe_ba.assign(P, std::numeric_limits<double>::quiet_NaN());
      cr.similarity = SimilarityMatrix{P, std::vector<double>(P * P, 1.0)};
    } else {
      try {
        cr.similarity = similarity_matrix(reps, options.measure);
        cr.report = balanced_accuracy(cr.similarity, inventory.labels, options.grid, options.representation.threads);
      } catch (const ValidationError& e) {
        throw ValidationError(std::string(e.what()) + " (condition " + cname + ")");
      }
    }
    out.push_back(std::move(cr));
  }
  return out;
}

void write_report_csv(std::ostream& out, const BalancedAccuracyReport& report, const ProbeInventory& inventory) {
  out << "kind,probe,category,balanced_accuracy,threshold,status\n";
  std::vector<bool> excluded(inventory.size(), false);
  for (auto i : report.excluded_probes) excluded[i] = true;
  const auto threshold = csv::number(report.best_threshold);
  for (std::size_t i = 0; i < inventory.size(); ++i) {
    const char* status = report.degenerate ? "degenerate" : excluded[i] ? "excluded" : "ok";
    out << "probe," << csv::escape(inventory.words[i]) << ',' << csv::escape(inventory.category_of(i)) << ','
        << csv::number(report.per_probe_ba[i]) << ',' << threshold << ',' << status << '\n';
  }
  out << "summary,,," << csv::number(report.mean_ba) << ',' << threshold << ','
      << (report.degenerate ? "degenerate" : "ok") << '\n';
}

#define ORDL_INSTANTIATE(Real)                                                                                  \
  template std::vector<double> probe_representation<Real>(const SrnWeights<Real>&, TokenId, const RepCondition&, \
                                                          std::span<const TokenId>, std::size_t,                 \
                                                          const RepresentationOptions&);                         \
  template std::vector<ConditionReport> evaluate_semantics<Real>(                                                \
      const SrnWeights<Real>&, std::span<const TokenId>, const ProbeInventory&, const Vocabulary&,               \
      std::span<const RepCondition>, std::size_t, const SemanticEvalOptions&);

ORDL_INSTANTIATE(double)
ORDL_INSTANTIATE(float)

#undef ORDL_INSTANTIATE

}  // namespace ordl
