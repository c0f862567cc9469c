#include "ordl/srn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ordl/binio.hpp"

namespace ordl {

void SrnConfig::validate() const {
  if (vocab_size < 2) throw ValidationError("srn.vocab_size must be >= 2");
  if (hidden_size < 1) throw ValidationError("srn.hidden_size must be >= 1");
  if (window < 1) throw ValidationError("srn.window must be >= 1");
  if (epochs_per_partition < 1) throw ValidationError("srn.epochs_per_partition must be >= 1");
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw ValidationError("srn.learning_rate must be > 0");
  if (!(init_scale >= 0) || !std::isfinite(init_scale)) throw ValidationError("srn.init_scale must be >= 0");
}

std::string_view to_string(Precision p) { return p == Precision::f64 ? "f64" : "f32"; }

Precision parse_precision(std::string_view text) {
  if (text == "f64") return Precision::f64;
  if (text == "f32") return Precision::f32;
  throw ValidationError("unknown precision \"" + std::string(text) + "\" (expected f64|f32)");
}

namespace {

// Four independent accumulators; the fixed association keeps results
// reproducible while letting the compiler pipeline the loop.
template <typename Real>
Real dot(const Real* a, const Real* b, std::size_t n) {
  Real s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

template <typename Real>
void axpy(Real alpha, const Real* x, Real* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename Real>
Real sigmoid(Real a) {
  return Real(1) / (Real(1) + std::exp(-a));
}

template <typename Real>
void check_token(const SrnWeights<Real>& w, TokenId token) {
  if (token >= w.vocab) {
    throw ValidationError("token id " + std::to_string(token) + " out of range for vocabulary of " +
                          std::to_string(w.vocab));
  }
}

// Fills `logits` and returns log of the softmax normalizer (with the max
// folded in), so ln p[k] = logits[k] - log_norm.
template <typename Real>
double output_logits(const SrnWeights<Real>& w, const Real* state, Real* logits) {
  const std::size_t V = w.vocab;
  std::copy(w.output_bias.begin(), w.output_bias.end(), logits);
  for (std::size_t i = 0; i < w.hidden; ++i) axpy(state[i], &w.hidden_output[i * V], logits, V);
  const Real m = *std::max_element(logits, logits + V);
  double sum = 0.0;
  for (std::size_t k = 0; k < V; ++k) sum += std::exp(static_cast<double>(logits[k] - m));
  return static_cast<double>(m) + std::log(sum);
}

template <typename Real>
void advance(const SrnWeights<Real>& w, const Real* state, bool state_is_reset, TokenId token, Real* next) {
  const std::size_t H = w.hidden;
  const Real* in = &w.input_hidden[static_cast<std::size_t>(token) * H];
  for (std::size_t i = 0; i < H; ++i) next[i] = in[i] + w.hidden_bias[i];
  if (!state_is_reset) {
    for (std::size_t j = 0; j < H; ++j) axpy(state[j], &w.hidden_hidden[j * H], next, H);
  }
  for (std::size_t i = 0; i < H; ++i) next[i] = sigmoid(next[i]);
}

// Forward pass storing every hidden state; returns -ln p[target].
template <typename Real>
double forward_window(const SrnWeights<Real>& w, std::span<const TokenId> inputs, TokenId target,
                      SrnWorkspace<Real>& ws) {
  const std::size_t H = w.hidden;
  if (inputs.size() != ws.window) {
    throw ValidationError("window of " + std::to_string(inputs.size()) + " tokens given to a workspace for " +
                          std::to_string(ws.window));
  }
  check_token(w, target);
  std::fill(ws.states.begin(), ws.states.begin() + static_cast<std::ptrdiff_t>(H), Real(0));
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    check_token(w, inputs[t]);
    advance(w, &ws.states[t * H], t == 0, inputs[t], &ws.states[(t + 1) * H]);
  }
  const double log_norm = output_logits(w, &ws.states[inputs.size() * H], ws.logits.data());
  return log_norm - static_cast<double>(ws.logits[target]);
}

}  // namespace

template <typename Real>
SrnWeights<Real>::SrnWeights(std::size_t vocab_size, std::size_t hidden_size)
    : vocab(vocab_size),
      hidden(hidden_size),
      input_hidden(vocab_size * hidden_size, Real(0)),
      hidden_hidden(hidden_size * hidden_size, Real(0)),
      hidden_bias(hidden_size, Real(0)),
      hidden_output(hidden_size * vocab_size, Real(0)),
      output_bias(vocab_size, Real(0)) {}

template <typename Real>
bool SrnWeights<Real>::all_finite() const {
  auto finite = [](const std::vector<Real>& v) {
    return std::all_of(v.begin(), v.end(), [](Real x) { return std::isfinite(x); });
  };
  return finite(input_hidden) && finite(hidden_hidden) && finite(hidden_bias) && finite(hidden_output) &&
         finite(output_bias);
}

template <typename Real>
SrnWeights<Real> init_weights(const SrnConfig& config) {
  config.validate();
  SrnWeights<Real> w(config.vocab_size, config.hidden_size);
  Rng rng(config.seed);
  const double s = config.init_scale;
  for (auto* m : {&w.input_hidden, &w.hidden_hidden, &w.hidden_output}) {
    for (auto& x : *m) x = static_cast<Real>(rng.uniform(-s, s));
  }
  return w;
}

template <typename Real>
SrnWorkspace<Real>::SrnWorkspace(std::size_t vocab, std::size_t hidden, std::size_t window_len)
    : window(window_len),
      states((window_len + 1) * hidden, Real(0)),
      logits(vocab, Real(0)),
      delta(hidden, Real(0)),
      delta_prev(hidden, Real(0)) {}

template <typename Real>
void advance_hidden(const SrnWeights<Real>& w, std::span<const Real> state, TokenId token, std::span<Real> next) {
  check_token(w, token);
  if (state.size() != w.hidden || next.size() != w.hidden) throw ValidationError("hidden state size mismatch");
  advance(w, state.data(), false, token, next.data());
}

template <typename Real>
void output_distribution(const SrnWeights<Real>& w, std::span<const Real> state, std::span<Real> probs) {
  if (state.size() != w.hidden || probs.size() != w.vocab) throw ValidationError("output buffer size mismatch");
  const double log_norm = output_logits(w, state.data(), probs.data());
  for (auto& p : probs) p = static_cast<Real>(std::exp(static_cast<double>(p) - log_norm));
}

template <typename Real>
std::pair<std::vector<Real>, std::vector<Real>> forward_step(const SrnWeights<Real>& w, std::span<const Real> state,
                                                             TokenId token) {
  std::vector<Real> next(w.hidden), probs(w.vocab);
  advance_hidden(w, state, token, std::span(next));
  output_distribution(w, std::span<const Real>(next), std::span(probs));
  return {std::move(next), std::move(probs)};
}

template <typename Real>
void run_from_reset(const SrnWeights<Real>& w, std::span<const TokenId> tokens, std::span<Real> state) {
  const std::size_t H = w.hidden;
  if (state.size() != H) throw ValidationError("hidden state size mismatch");
  std::vector<Real> scratch(H);
  Real* cur = scratch.data();
  Real* next = state.data();
  // Ping-pong so the final state lands in `state`.
  if (tokens.size() % 2 == 0) std::swap(cur, next);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    check_token(w, tokens[t]);
    advance(w, cur, t == 0, tokens[t], next);
    std::swap(cur, next);
  }
  if (tokens.empty()) std::fill(state.begin(), state.end(), Real(0));
}

template <typename Real>
Real WindowGradients<Real>::d_hidden_hidden(std::size_t prev_unit, std::size_t unit) const {
  const std::size_t H = hidden_bias.size();
  Real g = 0;
  for (std::size_t t = 1; t < inputs.size(); ++t) g += states[t * H + prev_unit] * input_rows[t * H + unit];
  return g;
}

template <typename Real>
Real WindowGradients<Real>::d_input_hidden(TokenId token, std::size_t unit) const {
  const std::size_t H = hidden_bias.size();
  Real g = 0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    if (inputs[t] == token) g += input_rows[t * H + unit];
  }
  return g;
}

template <typename Real>
double window_gradients(const SrnWeights<Real>& w, std::span<const TokenId> inputs, TokenId target,
                        SrnWorkspace<Real>& ws, WindowGradients<Real>& g) {
  const std::size_t H = w.hidden;
  const std::size_t V = w.vocab;
  const std::size_t T = inputs.size();
  const double loss = forward_window(w, inputs, target, ws);
  const double log_norm = loss + static_cast<double>(ws.logits[target]);

  g.final_hidden.assign(ws.states.begin() + static_cast<std::ptrdiff_t>(T * H),
                        ws.states.begin() + static_cast<std::ptrdiff_t>((T + 1) * H));
  g.output_delta.resize(V);
  for (std::size_t k = 0; k < V; ++k) {
    g.output_delta[k] = static_cast<Real>(std::exp(static_cast<double>(ws.logits[k]) - log_norm));
  }
  g.output_delta[target] -= Real(1);
  g.states.assign(ws.states.begin(), ws.states.begin() + static_cast<std::ptrdiff_t>(T * H));
  g.hidden_bias.assign(H, Real(0));
  g.inputs.assign(inputs.begin(), inputs.end());
  g.input_rows.assign(T * H, Real(0));

  // dL/dh at the last step.
  for (std::size_t i = 0; i < H; ++i) ws.delta[i] = dot(&w.hidden_output[i * V], g.output_delta.data(), V);

  for (std::size_t t = T; t >= 1; --t) {
    const Real* h = &ws.states[t * H];
    Real* da = &g.input_rows[(t - 1) * H];
    for (std::size_t i = 0; i < H; ++i) da[i] = ws.delta[i] * h[i] * (Real(1) - h[i]);
    for (std::size_t i = 0; i < H; ++i) g.hidden_bias[i] += da[i];
    if (t == 1) break;  // the first step starts from the reset state
    for (std::size_t j = 0; j < H; ++j) ws.delta_prev[j] = dot(&w.hidden_hidden[j * H], da, H);
    std::swap(ws.delta, ws.delta_prev);
  }
  return loss;
}

template <typename Real>
double train_window(SrnWeights<Real>& w, std::span<const TokenId> inputs, TokenId target, double learning_rate,
                    SrnWorkspace<Real>& ws, WindowGradients<Real>& g) {
  const double loss = window_gradients(w, inputs, target, ws, g);
  if (!std::isfinite(loss)) {
    throw RuntimeFailure("non-finite training loss; the learning rate is likely too high for this network");
  }
  const std::size_t H = w.hidden;
  const std::size_t V = w.vocab;
  const Real lr = static_cast<Real>(learning_rate);
  for (std::size_t i = 0; i < H; ++i) axpy(-lr * g.final_hidden[i], g.output_delta.data(), &w.hidden_output[i * V], V);
  axpy(-lr, g.output_delta.data(), w.output_bias.data(), V);
  // Recurrent update sum_t h_{t-1} x da_t, one sweep over the matrix; t = 0
  // is skipped because the reset state is zero.
  for (std::size_t j = 0; j < H; ++j) {
    Real* row = &w.hidden_hidden[j * H];
    for (std::size_t t = 1; t < inputs.size(); ++t) axpy(-lr * g.states[t * H + j], &g.input_rows[t * H], row, H);
  }
  axpy(-lr, g.hidden_bias.data(), w.hidden_bias.data(), H);
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    axpy(-lr, &g.input_rows[t * H], &w.input_hidden[static_cast<std::size_t>(inputs[t]) * H], H);
  }
  return loss;
}

template <typename Real>
double window_loss(const SrnWeights<Real>& w, std::span<const TokenId> inputs, TokenId target,
                   SrnWorkspace<Real>& ws) {
  return forward_window(w, inputs, target, ws);
}

template <typename Real>
std::vector<double> train_partition(SrnWeights<Real>& w, std::span<const TokenId> partition,
                                    const SrnConfig& config) {
  const std::size_t win = config.window;
  if (partition.size() <= win) {
    throw ValidationError("partition of " + std::to_string(partition.size()) + " tokens is too short for window " +
                          std::to_string(win));
  }
  SrnWorkspace<Real> ws(w.vocab, w.hidden, win);
  WindowGradients<Real> g;
  std::vector<double> pass_means;
  const std::size_t examples = partition.size() - win;
  for (std::uint32_t pass = 0; pass < config.epochs_per_partition; ++pass) {
    double total = 0.0;
    for (std::size_t s = 0; s < examples; ++s) {
      total += train_window(w, partition.subspan(s, win), partition[s + win], config.learning_rate, ws, g);
    }
    pass_means.push_back(total / static_cast<double>(examples));
  }
  return pass_means;
}

template <typename Real>
double cross_entropy(const SrnWeights<Real>& w, std::span<const TokenId> ids, std::size_t window, unsigned threads) {
  if (window < 1) throw ValidationError("window must be >= 1");
  if (ids.size() <= window) {
    throw ValidationError("cross-entropy needs more than " + std::to_string(window) + " tokens, got " +
                          std::to_string(ids.size()));
  }
  constexpr std::size_t kBlock = 1024;
  const std::size_t positions = ids.size() - window;
  const std::size_t blocks = (positions + kBlock - 1) / kBlock;
  std::vector<double> partial(blocks, 0.0);
  parallel_for(blocks, threads, [&](std::size_t b) {
    SrnWorkspace<Real> ws(w.vocab, w.hidden, window);
    double sum = 0.0;
    const std::size_t end = std::min(positions, (b + 1) * kBlock);
    for (std::size_t p = b * kBlock; p < end; ++p) sum += forward_window(w, ids.subspan(p, window), ids[p + window], ws);
    partial[b] = sum;
  });
  double total = 0.0;
  for (double s : partial) total += s;
  return total / static_cast<double>(positions);
}

// Layout (little-endian):
//   "SRNW" u16 version u8 scalar_bytes(8|4) u8 reserved(0)
//   u32 vocab_size u32 hidden_size u32 window u32 epochs_per_partition
//   f64 learning_rate f64 init_scale u64 seed
//   u32 ordinal u32 partitions_trained u64 tokens_trained
//   input_hidden[V*H] hidden_hidden[H*H] hidden_bias[H] hidden_output[H*V] output_bias[V]
template <typename Real>
std::string Checkpoint<Real>::serialize() const {
  binio::Writer out;
  out.bytes("SRNW");
  out.put(kFormatVersion);
  out.put(static_cast<std::uint8_t>(sizeof(Real)));
  out.put(std::uint8_t{0});
  out.put(config.vocab_size);
  out.put(config.hidden_size);
  out.put(config.window);
  out.put(config.epochs_per_partition);
  out.put(config.learning_rate);
  out.put(config.init_scale);
  out.put(config.seed);
  out.put(ordinal);
  out.put(partitions_trained);
  out.put(tokens_trained);
  out.put_array(std::span<const Real>(weights.input_hidden));
  out.put_array(std::span<const Real>(weights.hidden_hidden));
  out.put_array(std::span<const Real>(weights.hidden_bias));
  out.put_array(std::span<const Real>(weights.hidden_output));
  out.put_array(std::span<const Real>(weights.output_bias));
  return out.buffer();
}

template <typename Real>
void Checkpoint<Real>::save(const std::filesystem::path& path) const {
  binio::write_file_atomic(path, serialize());
}

namespace {

template <typename Real>
Checkpoint<Real> read_body(binio::Reader& in, const SrnConfig& config) {
  Checkpoint<Real> c;
  c.config = config;
  c.ordinal = in.get<std::uint32_t>();
  c.partitions_trained = in.get<std::uint32_t>();
  c.tokens_trained = in.get<std::uint64_t>();
  const std::size_t V = config.vocab_size, H = config.hidden_size;
  c.weights.vocab = V;
  c.weights.hidden = H;
  c.weights.input_hidden = in.get_array<Real>(V * H);
  c.weights.hidden_hidden = in.get_array<Real>(H * H);
  c.weights.hidden_bias = in.get_array<Real>(H);
  c.weights.hidden_output = in.get_array<Real>(H * V);
  c.weights.output_bias = in.get_array<Real>(V);
  if (!in.at_end()) in.fail("trailing bytes");
  return c;
}

}  // namespace

AnyCheckpoint deserialize_checkpoint(std::string bytes, std::string what) {
  binio::Reader in(std::move(bytes), std::move(what));
  in.expect_magic("SRNW");
  if (auto v = in.get<std::uint16_t>(); v != Checkpoint<double>::kFormatVersion) {
    in.fail("unsupported version " + std::to_string(v));
  }
  const auto width = in.get<std::uint8_t>();
  in.get<std::uint8_t>();
  SrnConfig config;
  config.vocab_size = in.get<std::uint32_t>();
  config.hidden_size = in.get<std::uint32_t>();
  config.window = in.get<std::uint32_t>();
  config.epochs_per_partition = in.get<std::uint32_t>();
  config.learning_rate = in.get<double>();
  config.init_scale = in.get<double>();
  config.seed = in.get<std::uint64_t>();
  config.validate();
  if (width == 8) return read_body<double>(in, config);
  if (width == 4) return read_body<float>(in, config);
  in.fail("unsupported scalar width " + std::to_string(width));
}

AnyCheckpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(binio::read_file(path), path.string());
}

std::vector<std::size_t> checkpoint_schedule(std::size_t n_partitions) {
  std::vector<std::size_t> out{0};
  for (std::size_t k = 1; k <= 4; ++k) out.push_back(k * n_partitions / 5);
  out.push_back(n_partitions);
  return out;
}

template <typename Real>
std::vector<Checkpoint<Real>> train_schedule(const PreparedCorpus& corpus, Checkpoint<Real> state,
                                             const CheckpointHook<Real>& hook) {
  const auto& config = state.config;
  config.validate();
  if (config.vocab_size != corpus.vocab.size()) {
    throw ValidationError("network vocabulary " + std::to_string(config.vocab_size) +
                          " does not match corpus vocabulary " + std::to_string(corpus.vocab.size()));
  }
  if (corpus.partition_length() <= config.window) {
    throw ValidationError("partitions of " + std::to_string(corpus.partition_length()) +
                          " tokens are too short for window " + std::to_string(config.window));
  }
  const auto schedule = checkpoint_schedule(corpus.n_partitions());
  if (state.ordinal >= schedule.size() || state.partitions_trained != schedule[state.ordinal]) {
    throw ValidationError("resume point does not match the checkpoint schedule of this corpus");
  }
  std::vector<Checkpoint<Real>> emitted;
  for (auto k = state.ordinal + 1; k < schedule.size(); ++k) {
    while (state.partitions_trained < schedule[k]) {
      const auto part = corpus.partition_at(state.partitions_trained);
      train_partition(state.weights, part, config);
      if (!state.weights.all_finite()) {
        throw RuntimeFailure("non-finite weights after partition step " + std::to_string(state.partitions_trained) +
                             " (partition " + std::to_string(corpus.partition_order[state.partitions_trained]) +
                             ")");
      }
      ++state.partitions_trained;
      state.tokens_trained += part.size();
    }
    state.ordinal = static_cast<std::uint32_t>(k);
    if (hook) hook(state);
    emitted.push_back(state);
  }
  return emitted;
}

template <typename Real>
std::vector<Checkpoint<Real>> train_schedule(const PreparedCorpus& corpus, const SrnConfig& config,
                                             const CheckpointHook<Real>& hook) {
  Checkpoint<Real> start{config, init_weights<Real>(config), 0, 0, 0};
  if (hook) hook(start);
  auto rest = train_schedule(corpus, start, hook);
  rest.insert(rest.begin(), std::move(start));
  return rest;
}

#define ORDL_INSTANTIATE(Real)                                                                                     \
  template struct SrnWeights<Real>;                                                                                \
  template struct SrnWorkspace<Real>;                                                                              \
  template struct WindowGradients<Real>;                                                                           \
  template struct Checkpoint<Real>;                                                                                \
  template SrnWeights<Real> init_weights<Real>(const SrnConfig&);                                                  \
  template void advance_hidden<Real>(const SrnWeights<Real>&, std::span<const Real>, TokenId, std::span<Real>);    \
  template void output_distribution<Real>(const SrnWeights<Real>&, std::span<const Real>, std::span<Real>);        \
  template std::pair<std::vector<Real>, std::vector<Real>> forward_step<Real>(const SrnWeights<Real>&,             \
                                                                              std::span<const Real>, TokenId);     \
  template void run_from_reset<Real>(const SrnWeights<Real>&, std::span<const TokenId>, std::span<Real>);          \
  template double window_gradients<Real>(const SrnWeights<Real>&, std::span<const TokenId>, TokenId,               \
                                         SrnWorkspace<Real>&, WindowGradients<Real>&);                             \
  template double train_window<Real>(SrnWeights<Real>&, std::span<const TokenId>, TokenId, double,                 \
                                     SrnWorkspace<Real>&, WindowGradients<Real>&);                                 \
  template double window_loss<Real>(const SrnWeights<Real>&, std::span<const TokenId>, TokenId,                    \
                                    SrnWorkspace<Real>&);                                                          \
  template std::vector<double> train_partition<Real>(SrnWeights<Real>&, std::span<const TokenId>,                  \
                                                     const SrnConfig&);                                            \
  template double cross_entropy<Real>(const SrnWeights<Real>&, std::span<const TokenId>, std::size_t, unsigned);   \
  template std::vector<Checkpoint<Real>> train_schedule<Real>(const PreparedCorpus&, Checkpoint<Real>,             \
                                                              const CheckpointHook<Real>&);                        \
  template std::vector<Checkpoint<Real>> train_schedule<Real>(const PreparedCorpus&, const SrnConfig&,             \
                                                              const CheckpointHook<Real>&);

ORDL_INSTANTIATE(double)
ORDL_INSTANTIATE(float)

#undef ORDL_INSTANTIATE

}  // namespace ordl
