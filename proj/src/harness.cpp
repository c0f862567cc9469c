#include "ordl/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ordl/binio.hpp"
#include "ordl/csv.hpp"
#include "ordl/svg.hpp"

namespace ordl {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

namespace {

const json& section(const json& root, const char* name) {
  static const json empty = json::object();
  if (!root.contains(name)) return empty;
  const auto& s = root.at(name);
  if (!s.is_object()) throw ValidationError(std::string("config section \"") + name + "\" must be an object");
  return s;
}

void reject_unknown(const json& obj, const std::string& where, std::initializer_list<const char*> known) {
  for (const auto& [key, _] : obj.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
      throw ValidationError("unknown config key \"" + where + (where.empty() ? "" : ".") + key + "\"");
    }
  }
}

template <typename T>
T get_or(const json& obj, const char* key, const std::string& where, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError("config key \"" + where + "." + key + "\" has the wrong type");
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  std::filesystem::path path(p);
  if (path.is_relative() && !base.empty()) path = base / path;
  return std::filesystem::absolute(path).lexically_normal();
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(what + ": " + e.what());
  }
}

void apply_override(json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ValidationError("override \"" + assignment + "\" must look like section.key=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ValidationError("override \"" + assignment + "\" has an empty key");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      break;
    }
    if (!node->contains(key)) (*node)[key] = json::object();
    node = &(*node)[key];
    if (!node->is_object()) throw ValidationError("override \"" + assignment + "\" descends into a non-section");
    start = dot + 1;
  }
}

template <typename Enum, typename Parse>
std::vector<Enum> parse_list(const json& obj, const char* key, const std::string& where, std::vector<Enum> fallback,
                             Parse parse) {
  if (!obj.contains(key)) return fallback;
  const auto& arr = obj.at(key);
  if (!arr.is_array()) throw ValidationError("config key \"" + where + "." + key + "\" must be a list");
  std::vector<Enum> out;
  for (const auto& v : arr) {
    if (!v.is_string()) throw ValidationError("config key \"" + where + "." + key + "\" must list strings");
    out.push_back(parse(v.get<std::string>()));
  }
  return out;
}

ExperimentConfig config_from_json(const json& root, const std::filesystem::path& base) {
  if (!root.is_object()) throw ValidationError("config must be a JSON object");
  reject_unknown(root, "", {"schema_version", "corpus", "design", "srn", "evaluation", "analytics", "output"});
  const int version = get_or<int>(root, "schema_version", "", ExperimentConfig::kSchemaVersion);
  if (version != ExperimentConfig::kSchemaVersion) {
    throw ValidationError("unsupported config schema_version " + std::to_string(version));
  }
  ExperimentConfig c;

  const auto& corpus = section(root, "corpus");
  reject_unknown(corpus, "corpus", {"path", "n_partitions", "max_types", "remainder"});
  c.corpus_path = resolve(base, get_or<std::string>(corpus, "path", "corpus", ""));
  c.n_partitions = get_or<std::size_t>(corpus, "n_partitions", "corpus", c.n_partitions);
  c.max_types = get_or<std::size_t>(corpus, "max_types", "corpus", c.max_types);
  const auto remainder = get_or<std::string>(corpus, "remainder", "corpus", "drop");
  if (remainder == "drop") {
    c.remainder = RemainderPolicy::drop;
  } else if (remainder == "error") {
    c.remainder = RemainderPolicy::error;
  } else {
    throw ValidationError("corpus.remainder must be drop|error");
  }

  const auto& design = section(root, "design");
  reject_unknown(design, "design", {"orderings", "punctuation", "seeds", "master_seed"});
  c.orderings = parse_list(design, "orderings", "design", c.orderings, parse_ordering_kind);
  c.punctuation = parse_list(design, "punctuation", "design", c.punctuation, parse_punctuation_mode);
  c.seeds = get_or<std::vector<std::uint64_t>>(design, "seeds", "design", c.seeds);
  c.master_seed = get_or<std::uint64_t>(design, "master_seed", "design", c.master_seed);

  const auto& srn = section(root, "srn");
  reject_unknown(srn, "srn", {"hidden_size", "window", "epochs_per_partition", "learning_rate", "init_scale", "precision"});
  c.srn.hidden_size = get_or<std::uint32_t>(srn, "hidden_size", "srn", c.srn.hidden_size);
  c.srn.window = get_or<std::uint32_t>(srn, "window", "srn", c.srn.window);
  c.srn.epochs_per_partition = get_or<std::uint32_t>(srn, "epochs_per_partition", "srn", c.srn.epochs_per_partition);
  c.srn.learning_rate = get_or<double>(srn, "learning_rate", "srn", c.srn.learning_rate);
  c.srn.init_scale = get_or<double>(srn, "init_scale", "srn", c.srn.init_scale);
  c.precision = parse_precision(get_or<std::string>(srn, "precision", "srn", "f64"));

  const auto& eval = section(root, "evaluation");
  reject_unknown(eval, "evaluation",
                 {"probes", "conditions", "similarity", "threshold_step", "max_occurrences", "cross_entropy_stream",
                  "dump_similarity"});
  c.probes_path = resolve(base, get_or<std::string>(eval, "probes", "evaluation", ""));
  c.conditions = parse_list(eval, "conditions", "evaluation", c.conditions, parse_rep_condition);
  c.measure = parse_similarity_measure(get_or<std::string>(eval, "similarity", "evaluation", "cosine"));
  c.threshold_step = get_or<double>(eval, "threshold_step", "evaluation", c.threshold_step);
  c.max_occurrences = get_or<std::size_t>(eval, "max_occurrences", "evaluation", c.max_occurrences);
  const auto stream = get_or<std::string>(eval, "cross_entropy_stream", "evaluation", "full");
  if (stream == "full") {
    c.eval_stream = EvalStream::full;
  } else if (stream == "seen") {
    c.eval_stream = EvalStream::seen;
  } else {
    throw ValidationError("evaluation.cross_entropy_stream must be full|seen");
  }
  c.dump_similarity = get_or<bool>(eval, "dump_similarity", "evaluation", c.dump_similarity);

  const auto& an = section(root, "analytics");
  reject_unknown(an, "analytics",
                 {"enabled", "lexicon", "max_ngram", "ngram_bin_size", "rolling_window", "rolling_step",
                  "location_bins"});
  c.analytics = get_or<bool>(an, "enabled", "analytics", c.analytics);
  c.lexicon_path = resolve(base, get_or<std::string>(an, "lexicon", "analytics", ""));
  auto& ao = c.analytics_options;
  ao.max_ngram = get_or<int>(an, "max_ngram", "analytics", ao.max_ngram);
  ao.ngram_bin_size = get_or<std::size_t>(an, "ngram_bin_size", "analytics", ao.ngram_bin_size);
  ao.rolling_window = get_or<std::size_t>(an, "rolling_window", "analytics", ao.rolling_window);
  ao.rolling_step = get_or<std::size_t>(an, "rolling_step", "analytics", ao.rolling_step);
  ao.location_bins = get_or<std::size_t>(an, "location_bins", "analytics", ao.location_bins);

  const auto& out = section(root, "output");
  reject_unknown(out, "output", {"dir", "workers", "threads_per_run"});
  c.output_dir = resolve(base, get_or<std::string>(out, "dir", "output", ""));
  c.workers = get_or<unsigned>(out, "workers", "output", c.workers);
  c.threads_per_run = get_or<unsigned>(out, "threads_per_run", "output", c.threads_per_run);
  return c;
}

template <typename Enum>
json names(const std::vector<Enum>& values) {
  json arr = json::array();
  for (auto v : values) arr.push_back(std::string(to_string(v)));
  return arr;
}

json config_to_json(const ExperimentConfig& c) {
  const auto& ao = c.analytics_options;
  return json{
      {"schema_version", ExperimentConfig::kSchemaVersion},
      {"corpus",
       {{"path", c.corpus_path.string()},
        {"n_partitions", c.n_partitions},
        {"max_types", c.max_types},
        {"remainder", c.remainder == RemainderPolicy::drop ? "drop" : "error"}}},
      {"design",
       {{"orderings", names(c.orderings)},
        {"punctuation", names(c.punctuation)},
        {"seeds", c.seeds},
        {"master_seed", c.master_seed}}},
      {"srn",
       {{"hidden_size", c.srn.hidden_size},
        {"window", c.srn.window},
        {"epochs_per_partition", c.srn.epochs_per_partition},
        {"learning_rate", c.srn.learning_rate},
        {"init_scale", c.srn.init_scale},
        {"precision", std::string(to_string(c.precision))}}},
      {"evaluation",
       {{"probes", c.probes_path.string()},
        {"conditions", names(c.conditions)},
        {"similarity", std::string(to_string(c.measure))},
        {"threshold_step", c.threshold_step},
        {"max_occurrences", c.max_occurrences},
        {"cross_entropy_stream", c.eval_stream == EvalStream::full ? "full" : "seen"},
        {"dump_similarity", c.dump_similarity}}},
      {"analytics",
       {{"enabled", c.analytics},
        {"lexicon", c.lexicon_path.string()},
        {"max_ngram", ao.max_ngram},
        {"ngram_bin_size", ao.ngram_bin_size},
        {"rolling_window", ao.rolling_window},
        {"rolling_step", ao.rolling_step},
        {"location_bins", ao.location_bins}}},
      {"output",
       {{"dir", c.output_dir.string()}, {"workers", c.workers}, {"threads_per_run", c.threads_per_run}}},
  };
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text, const std::filesystem::path& base_dir) {
  return config_from_json(parse_json(text, "config"), base_dir);
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  auto root = parse_json(binio::read_file(path), path.string());
  if (!root.is_object()) throw ValidationError(path.string() + ": config must be a JSON object");
  for (const auto& o : overrides) apply_override(root, o);
  return config_from_json(root, path.parent_path());
}

std::string ExperimentConfig::to_json_text() const { return config_to_json(*this).dump(2) + "\n"; }

void ExperimentConfig::validate() const {
  if (corpus_path.empty()) throw ValidationError("corpus.path is required");
  if (!std::filesystem::is_regular_file(corpus_path)) {
    throw ValidationError("corpus.path " + corpus_path.string() + " does not exist");
  }
  if (probes_path.empty()) throw ValidationError("evaluation.probes is required");
  if (!std::filesystem::is_regular_file(probes_path)) {
    throw ValidationError("evaluation.probes " + probes_path.string() + " does not exist");
  }
  if (analytics && !lexicon_path.empty() && !std::filesystem::is_regular_file(lexicon_path)) {
    throw ValidationError("analytics.lexicon " + lexicon_path.string() + " does not exist");
  }
  if (output_dir.empty()) throw ValidationError("output.dir is required");
  if (orderings.empty()) throw ValidationError("design.orderings is empty");
  if (punctuation.empty()) throw ValidationError("design.punctuation is empty");
  if (seeds.empty()) throw ValidationError("design.seeds is empty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ValidationError("design.seeds must be distinct");
  }
  if (std::set(orderings.begin(), orderings.end()).size() != orderings.size()) {
    throw ValidationError("design.orderings lists a mode twice");
  }
  if (std::set(punctuation.begin(), punctuation.end()).size() != punctuation.size()) {
    throw ValidationError("design.punctuation lists a mode twice");
  }
  if (n_partitions < 1) throw ValidationError("corpus.n_partitions must be >= 1");
  if (max_types < 2) throw ValidationError("corpus.max_types must be >= 2");
  auto probe = srn;
  probe.vocab_size = static_cast<std::uint32_t>(std::max<std::size_t>(max_types, 2));
  probe.validate();
  threshold_grid(threshold_step);
  if (workers < 1) throw ValidationError("output.workers must be >= 1");
  if (threads_per_run < 1) throw ValidationError("output.threads_per_run must be >= 1");
}

// ---------------------------------------------------------------------------
// Cells and seeds

std::string CellDescriptor::name() const {
  return std::string(to_string(ordering)) + "-" + std::string(to_string(punctuation)) + "-seed" + std::to_string(seed);
}

CellSeeds derive_cell_seeds(std::uint64_t master_seed, const CellDescriptor& cell) {
  const std::string replicate = std::string(to_string(cell.punctuation)) + "-seed" + std::to_string(cell.seed);
  return {derive_seed(master_seed, cell.name(), "corpus"), derive_seed(master_seed, replicate, "weights"),
          derive_seed(master_seed, replicate, "evaluation")};
}

std::vector<CellDescriptor> enumerate_cells(const ExperimentConfig& config) {
  std::vector<CellDescriptor> cells;
  for (auto p : config.punctuation) {
    for (auto o : config.orderings) {
      for (auto s : config.seeds) cells.push_back({o, p, s});
    }
  }
  return cells;
}

// ---------------------------------------------------------------------------
// Running

namespace {

struct StopRequested {};

struct VariantSource {
  EncodedStream stream;
  Vocabulary vocab;
};

struct Shared {
  const ExperimentConfig& config;
  const RunControl& control;
  std::map<PunctuationMode, VariantSource> sources;
  ProbeInventory probes;
  std::vector<double> grid;
  json identity;  // everything besides the cell that determines a run's output
  std::mutex log_mutex;

  void log(const std::string& line) {
    if (!control.verbose) return;
    std::lock_guard lock(log_mutex);
    std::clog << line << '\n';
  }
};

PreparedCorpus make_corpus(const Shared& shared, const CellDescriptor& cell, const CellSeeds& seeds) {
  const auto& src = shared.sources.at(cell.punctuation);
  const auto mode = cell.ordering == OrderingMode::Kind::chronological ? OrderingMode::chronological()
                                                                       : OrderingMode::shuffled(seeds.corpus);
  auto corpus = partition_stream(src.stream, shared.config.n_partitions, mode, shared.config.remainder);
  corpus.punctuation = cell.punctuation;
  corpus.vocab = src.vocab;
  return corpus;
}

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::uint32_t k) {
  return dir / ("checkpoint_" + std::to_string(k) + ".srnw");
}

std::filesystem::path metrics_path(const std::filesystem::path& dir, std::uint32_t k) {
  return dir / ("metrics_" + std::to_string(k) + ".json");
}

double json_number(const json& v) {
  return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json metrics_to_json(const CheckpointMetrics& m) {
  json sem = json::object();
  for (const auto& c : m.semantic) {
    sem[std::string(to_string(c.condition))] = {{"mean_ba", number_or_null(c.mean_ba)},
                                                {"best_threshold", number_or_null(c.best_threshold)},
                                                {"degenerate", c.degenerate},
                                                {"excluded", c.excluded}};
  }
  return {{"ordinal", m.ordinal},
          {"partitions_trained", m.partitions_trained},
          {"tokens_trained", m.tokens_trained},
          {"cross_entropy", number_or_null(m.cross_entropy)},
          {"semantic", sem}};
}

CheckpointMetrics metrics_from_json(const json& j, const std::vector<RepCondition::Kind>& conditions) {
  CheckpointMetrics m;
  m.ordinal = j.at("ordinal").get<std::uint32_t>();
  m.partitions_trained = j.at("partitions_trained").get<std::uint32_t>();
  m.tokens_trained = j.at("tokens_trained").get<std::uint64_t>();
  m.cross_entropy = json_number(j.at("cross_entropy"));
  for (auto kind : conditions) {
    const auto& c = j.at("semantic").at(std::string(to_string(kind)));
    m.semantic.push_back({kind, json_number(c.at("mean_ba")), json_number(c.at("best_threshold")),
                          c.at("degenerate").get<bool>(), c.at("excluded").get<std::size_t>()});
  }
  return m;
}

template <typename Real>
CheckpointMetrics evaluate_checkpoint(Shared& shared, const Checkpoint<Real>& ckpt, const PreparedCorpus& corpus,
                                      const std::vector<TokenId>& stream, const CellSeeds& seeds,
                                      const std::filesystem::path& dir) {
  const auto& cfg = shared.config;
  CheckpointMetrics m{ckpt.ordinal, ckpt.partitions_trained, ckpt.tokens_trained, 0.0, {}};

  std::span<const TokenId> ce_stream(stream);
  if (cfg.eval_stream == EvalStream::seen) {
    // Before any training the first scheduled partition stands in for "seen".
    const auto parts = std::max<std::size_t>(ckpt.partitions_trained, 1);
    ce_stream = ce_stream.first(parts * corpus.partition_length());
  }
  m.cross_entropy = cross_entropy(ckpt.weights, ce_stream, ckpt.config.window, cfg.threads_per_run);

  std::vector<RepCondition> conditions;
  for (auto kind : cfg.conditions) conditions.push_back({kind, seeds.evaluation});
  SemanticEvalOptions opts;
  opts.representation.max_occurrences = cfg.max_occurrences;
  opts.representation.subsample_seed = seeds.evaluation;
  opts.representation.threads = cfg.threads_per_run;
  opts.measure = cfg.measure;
  opts.grid = shared.grid;
  const auto reports = evaluate_semantics(ckpt.weights, stream, shared.probes, corpus.vocab, conditions,
                                          ckpt.config.window, opts);
  for (const auto& r : reports) {
    const auto cname = std::string(to_string(r.condition.kind));
    m.semantic.push_back({r.condition.kind, r.report.mean_ba, r.report.best_threshold, r.report.degenerate,
                          r.report.excluded_probes.size()});
    std::ostringstream csv_out;
    write_report_csv(csv_out, r.report, shared.probes);
    binio::write_file_atomic(dir / ("semantic_" + std::to_string(ckpt.ordinal) + "_" + cname + ".csv"),
                             csv_out.str());
    if (cfg.dump_similarity) {
      r.similarity.save(dir / ("similarity_" + std::to_string(ckpt.ordinal) + "_" + cname + ".f64"));
    }
  }
  return m;
}

template <typename Real>
void run_cell(Shared& shared, RunResult& result) {
  const auto& cfg = shared.config;
  const auto corpus = make_corpus(shared, result.cell, result.seeds);
  const auto stream = corpus.training_stream();
  const auto& dir = result.run_dir;

  const auto corpus_file = cfg.output_dir / "corpora" /
                           (result.cell.name() + "-" + hex64(result.seeds.corpus).substr(0, 8) + ".ordl");
  if (!std::filesystem::exists(corpus_file)) corpus.save(corpus_file);

  SrnConfig srn = cfg.srn;
  srn.vocab_size = static_cast<std::uint32_t>(corpus.vocab.size());
  srn.seed = result.seeds.weights;

  // Resume from the last checkpoint whose metrics were also persisted.
  std::optional<std::uint32_t> last;
  for (std::uint32_t k = 0; k < 6; ++k) {
    if (std::filesystem::exists(checkpoint_path(dir, k)) && std::filesystem::exists(metrics_path(dir, k))) {
      last = k;
    } else {
      break;
    }
  }
  for (std::uint32_t k = 0; last && k <= *last; ++k) {
    result.checkpoints.push_back(
        metrics_from_json(json::parse(binio::read_file(metrics_path(dir, k))), cfg.conditions));
  }

  auto hook = [&](const Checkpoint<Real>& ckpt) {
    ckpt.save(checkpoint_path(dir, ckpt.ordinal));
    auto m = evaluate_checkpoint(shared, ckpt, corpus, stream, result.seeds, dir);
    binio::write_file_atomic(metrics_path(dir, ckpt.ordinal), metrics_to_json(m).dump(2) + "\n");
    shared.log("[" + result.cell.name() + "] checkpoint " + std::to_string(ckpt.ordinal) +
               " partitions=" + std::to_string(ckpt.partitions_trained) + " cross_entropy=" +
               csv::number(m.cross_entropy));
    result.checkpoints.push_back(std::move(m));
    if (shared.control.stop_after_checkpoint && *shared.control.stop_after_checkpoint == ckpt.ordinal) {
      throw StopRequested{};
    }
  };

  if (last && *last == 5) return;
  if (shared.control.stop_after_checkpoint && last && *last >= *shared.control.stop_after_checkpoint) {
    result.status = RunResult::Status::interrupted;
    return;
  }
  try {
    if (last) {
      auto any = load_checkpoint(checkpoint_path(dir, *last));
      auto* start = std::get_if<Checkpoint<Real>>(&any);
      if (!start) throw ValidationError("checkpoint precision does not match the configured precision");
      if (start->config != srn) throw ValidationError("stored checkpoint was trained with a different configuration");
      train_schedule<Real>(corpus, std::move(*start), hook);
    } else {
      train_schedule<Real>(corpus, srn, hook);
    }
  } catch (const StopRequested&) {
    result.status = RunResult::Status::interrupted;
  }
}

std::uint64_t file_hash(const std::filesystem::path& path) { return fnv1a64(binio::read_file(path)); }

}  // namespace

std::vector<RunResult> run_experiment(const ExperimentConfig& config, const RunControl& control) {
  config.validate();
  const auto& out = config.output_dir;
  std::filesystem::create_directories(out / "runs");
  std::filesystem::create_directories(out / "corpora");
  binio::write_file_atomic(out / "config.json", config.to_json_text());

  Shared shared{config, control, {}, ProbeInventory::read_csv(config.probes_path), threshold_grid(config.threshold_step),
                {}, {}};

  const auto transcripts = order_transcripts(read_transcripts_jsonl(config.corpus_path));
  for (auto p : config.punctuation) {
    auto tokens = tokenize_transcripts(transcripts, p);
    auto vocab = Vocabulary::build(tokens.tokens, config.max_types);
    shared.log("vocabulary (" + std::string(to_string(p)) + "): " + std::to_string(vocab.size()) + " ids, OOV " +
               csv::number(vocab.oov_fraction()));
    shared.probes.validate(vocab);
    shared.sources.emplace(p, VariantSource{encode(tokens, vocab), std::move(vocab)});
  }

  auto cfg_json = json::parse(config.to_json_text());
  shared.identity = {
      {"corpus_fnv", hex64(file_hash(config.corpus_path))},
      {"probes_fnv", hex64(file_hash(config.probes_path))},
      {"corpus", {{"n_partitions", config.n_partitions}, {"max_types", config.max_types},
                  {"remainder", cfg_json["corpus"]["remainder"]}}},
      {"srn", cfg_json["srn"]},
      {"evaluation", {{"conditions", cfg_json["evaluation"]["conditions"]},
                      {"similarity", cfg_json["evaluation"]["similarity"]},
                      {"threshold_step", config.threshold_step},
                      {"max_occurrences", config.max_occurrences},
                      {"cross_entropy_stream", cfg_json["evaluation"]["cross_entropy_stream"]}}},
      {"master_seed", config.master_seed},
      {"formats", {{"corpus", PreparedCorpus::kFormatVersion}, {"checkpoint", Checkpoint<double>::kFormatVersion},
                   {"config", ExperimentConfig::kSchemaVersion}}},
  };
  const auto config_hash = hex64(fnv1a64(shared.identity.dump()));

  if (config.analytics) {
    std::unique_ptr<Lexicon> lexicon;
    if (!config.lexicon_path.empty()) lexicon = std::make_unique<Lexicon>(read_lexicon_csv(config.lexicon_path));
    for (auto p : config.punctuation) {
      for (auto o : config.orderings) {
        const CellDescriptor cell{o, p, config.seeds.front()};
        const auto corpus = make_corpus(shared, cell, derive_cell_seeds(config.master_seed, cell));
        run_analytics(corpus, config.analytics_options, lexicon.get(),
                      out / "analytics" / (std::string(to_string(o)) + "-" + std::string(to_string(p))));
      }
    }
  }

  const auto cells = enumerate_cells(config);
  std::vector<RunResult> results(cells.size());
  json manifest_runs = json::array();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    auto& r = results[i];
    r.cell = cells[i];
    r.seeds = derive_cell_seeds(config.master_seed, r.cell);
    auto id = shared.identity;
    id["cell"] = r.cell.name();
    r.run_dir = out / "runs" / (r.cell.name() + "-" + hex64(fnv1a64(id.dump())).substr(0, 12));
    std::filesystem::create_directories(r.run_dir);
    const json run_meta = {
        {"cell", {{"ordering", to_string(r.cell.ordering)}, {"punctuation", to_string(r.cell.punctuation)},
                  {"seed", r.cell.seed}}},
        {"derived_seeds", {{"corpus", r.seeds.corpus}, {"weights", r.seeds.weights}, {"evaluation", r.seeds.evaluation}}},
        {"config_hash", config_hash},
        {"identity", id},
    };
    binio::write_file_atomic(r.run_dir / "run.json", run_meta.dump(2) + "\n");
    manifest_runs.push_back({{"cell", r.cell.name()}, {"dir", r.run_dir.filename().string()}});
  }
  const json manifest = {{"config_hash", config_hash}, {"identity", shared.identity}, {"runs", manifest_runs}};
  binio::write_file_atomic(out / "manifest.json", manifest.dump(2) + "\n");

  parallel_for(results.size(), config.workers, [&](std::size_t i) {
    auto& r = results[i];
    try {
      if (config.precision == Precision::f64) {
        run_cell<double>(shared, r);
      } else {
        run_cell<float>(shared, r);
      }
      if (r.status == RunResult::Status::completed) std::filesystem::remove(r.run_dir / "error.txt");
    } catch (const std::exception& e) {
      r.status = RunResult::Status::failed;
      r.error = e.what();
      warn("run " + r.cell.name() + " failed: " + r.error);
      binio::write_file_atomic(r.run_dir / "error.txt", r.error + "\n");
    }
  });
  return results;
}

// ---------------------------------------------------------------------------
// Reporting

ReportTable make_report_table(const std::vector<RunResult>& results) {
  ReportTable t;
  for (const auto& r : results) {
    if (r.status == RunResult::Status::failed) continue;
    const std::string ordering(to_string(r.cell.ordering));
    const std::string punct(to_string(r.cell.punctuation));
    for (const auto& m : r.checkpoints) {
      t.rows.push_back({ordering, punct, r.cell.seed, m.ordinal, m.partitions_trained, "cross_entropy", "",
                        m.cross_entropy});
      for (const auto& c : m.semantic) {
        t.rows.push_back({ordering, punct, r.cell.seed, m.ordinal, m.partitions_trained, "balanced_accuracy",
                          std::string(to_string(c.condition)), c.mean_ba});
      }
    }
  }
  return t;
}

std::string long_csv(const ReportTable& table) {
  std::string out = std::string(kLongCsvHeader) + "\n";
  for (const auto& r : table.rows) {
    out += csv::join({r.ordering, r.punctuation, std::to_string(r.seed), std::to_string(r.checkpoint),
                      std::to_string(r.partitions_trained), r.metric, r.condition, csv::number(r.value)});
    out += '\n';
  }
  return out;
}

ReportTable read_long_csv(const std::filesystem::path& path) {
  ReportTable t;
  csv::for_each_row(path, [&](const std::vector<std::string>& f, std::size_t line) {
    if (line == 1) {
      if (csv::join(f) != kLongCsvHeader) throw ValidationError(path.string() + ": unexpected header");
      return;
    }
    if (f.size() != 8) throw ValidationError(path.string() + ":" + std::to_string(line) + ": expected 8 fields");
    try {
      t.rows.push_back({f[0], f[1], std::stoull(f[2]), static_cast<std::uint32_t>(std::stoul(f[3])),
                        static_cast<std::uint32_t>(std::stoul(f[4])), f[5], f[6],
                        f[7].empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(f[7])});
    } catch (const std::logic_error&) {
      throw ValidationError(path.string() + ":" + std::to_string(line) + ": malformed number");
    }
  });
  return t;
}

namespace {

struct GroupStats {
  std::uint32_t partitions_trained = 0;
  std::vector<double> values;
  std::size_t n() const { return values.size(); }
  double mean() const {
    if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
    double s = 0.0;
    for (double v : values) s += v;
    return s / static_cast<double>(values.size());
  }
  double sd() const {
    if (values.size() < 2) return std::numeric_limits<double>::quiet_NaN();
    const double m = mean();
    double ss = 0.0;
    for (double v : values) ss += (v - m) * (v - m);
    return std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
};

// (ordering, punctuation, condition, checkpoint) -> values, in first-seen order.
using GroupKey = std::tuple<std::string, std::string, std::string, std::uint32_t>;

std::vector<std::pair<GroupKey, GroupStats>> group(const ReportTable& table, const std::string& metric) {
  std::vector<std::pair<GroupKey, GroupStats>> groups;
  std::map<GroupKey, std::size_t> index;
  for (const auto& r : table.rows) {
    if (r.metric != metric) continue;
    GroupKey key{r.ordering, r.punctuation, r.condition, r.checkpoint};
    auto [it, inserted] = index.try_emplace(key, groups.size());
    if (inserted) groups.push_back({key, GroupStats{r.partitions_trained, {}}});
    if (std::isfinite(r.value)) groups[it->second].second.values.push_back(r.value);
  }
  std::stable_sort(groups.begin(), groups.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  return groups;
}

}  // namespace

std::string cross_entropy_wide_csv(const ReportTable& table) {
  std::string out = std::string(kCrossEntropyCsvHeader) + "\n";
  for (const auto& [key, g] : group(table, "cross_entropy")) {
    const auto& [ordering, punct, condition, checkpoint] = key;
    out += csv::join({ordering, punct, std::to_string(checkpoint), std::to_string(g.partitions_trained),
                      std::to_string(g.n()), csv::number(g.mean()), csv::number(g.sd())});
    out += '\n';
  }
  return out;
}

std::string balanced_accuracy_wide_csv(const ReportTable& table) {
  std::string out = std::string(kBalancedAccuracyCsvHeader) + "\n";
  for (const auto& [key, g] : group(table, "balanced_accuracy")) {
    const auto& [ordering, punct, condition, checkpoint] = key;
    out += csv::join({ordering, punct, condition, std::to_string(checkpoint), std::to_string(g.partitions_trained),
                      std::to_string(g.n()), csv::number(g.mean()), csv::number(g.sd())});
    out += '\n';
  }
  return out;
}

std::string plot_trajectories(const ReportTable& table, const std::string& metric,
                              std::optional<PunctuationMode> punctuation) {
  if (std::find(std::begin(kPlotMetrics), std::end(kPlotMetrics), metric) == std::end(kPlotMetrics)) {
    std::string known;
    for (const char* m : kPlotMetrics) known += std::string(known.empty() ? "" : ", ") + m;
    throw ValidationError("unknown metric \"" + metric + "\"; available: " + known);
  }
  ReportTable filtered;
  std::set<std::string> puncts;
  for (const auto& r : table.rows) {
    if (punctuation && r.punctuation != to_string(*punctuation)) continue;
    filtered.rows.push_back(r);
    puncts.insert(r.punctuation);
  }
  const bool label_punct = puncts.size() > 1;

  svg::Chart chart;
  chart.title = metric == "cross_entropy" ? "Cross-entropy by checkpoint" : "Balanced accuracy by checkpoint";
  if (punctuation) chart.title += " (punctuation " + std::string(to_string(*punctuation)) + ")";
  chart.x_label = "checkpoint";
  chart.y_label = metric == "cross_entropy" ? "cross-entropy (nats)" : "balanced accuracy";

  std::map<std::tuple<std::string, std::string, std::string>, std::size_t> series_index;
  for (const auto& [key, g] : group(filtered, metric)) {
    const auto& [ordering, punct, condition, checkpoint] = key;
    auto skey = std::make_tuple(ordering, punct, condition);
    auto [it, inserted] = series_index.try_emplace(skey, chart.series.size());
    if (inserted) {
      std::string label = ordering;
      if (label_punct) label += "/" + punct;
      if (!condition.empty()) label += "/" + condition;
      chart.series.push_back({label, {}, {}, {}});
    }
    auto& s = chart.series[it->second];
    s.x.push_back(static_cast<double>(checkpoint));
    s.y.push_back(g.mean());
    s.error.push_back(g.sd());
  }
  std::vector<svg::Series> kept;
  for (auto& s : chart.series) {
    if (std::none_of(s.y.begin(), s.y.end(), [](double v) { return std::isfinite(v); })) {
      warn("series \"" + s.label + "\" has no finite values; omitted from the " + metric + " plot");
      continue;
    }
    kept.push_back(std::move(s));
  }
  if (kept.empty() && !filtered.rows.empty()) warn("no plottable series for metric " + metric);
  chart.series = std::move(kept);
  return svg::render(chart);
}

void emit_report(const ReportTable& table, const std::filesystem::path& dir) {
  if (table.rows.empty()) throw ValidationError("no completed checkpoints to report");
  std::filesystem::create_directories(dir);
  binio::write_file_atomic(dir / "report_long.csv", long_csv(table));
  binio::write_file_atomic(dir / "trajectory_cross_entropy.csv", cross_entropy_wide_csv(table));
  binio::write_file_atomic(dir / "trajectory_balanced_accuracy.csv", balanced_accuracy_wide_csv(table));
  binio::write_file_atomic(dir / "cross_entropy.svg", plot_trajectories(table, "cross_entropy"));
  std::set<std::string> puncts;
  for (const auto& r : table.rows) puncts.insert(r.punctuation);
  for (const auto& p : puncts) {
    binio::write_file_atomic(dir / ("balanced_accuracy_" + p + ".svg"),
                             plot_trajectories(table, "balanced_accuracy", parse_punctuation_mode(p)));
  }
}

ReportTable emit_report(const std::vector<RunResult>& results, const std::filesystem::path& dir) {
  auto table = make_report_table(results);
  emit_report(table, dir);
  return table;
}

}  // namespace ordl
