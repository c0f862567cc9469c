#pragma once

// Elman simple recurrent network: one-hot input, sigmoid hidden layer with
// recurrence, softmax output. Trained by truncated backpropagation through
// time over fixed-length windows with plain SGD.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ordl/common.hpp"
#include "ordl/corpus.hpp"

namespace ordl {

struct SrnConfig {
  std::uint32_t vocab_size = 4096;
  std::uint32_t hidden_size = 512;
  std::uint32_t window = 7;
  std::uint32_t epochs_per_partition = 20;
  double learning_rate = 0.01;
  double init_scale = 0.04;
  std::uint64_t seed = 0;

  /// Throws ValidationError describing the first bad field.
  void validate() const;
  bool operator==(const SrnConfig&) const = default;
};

enum class Precision : std::uint8_t { f64, f32 };
std::string_view to_string(Precision p);
Precision parse_precision(std::string_view text);

/// Matrices are row-major with rows indexed by the sending layer:
/// input_hidden[token][unit], hidden_hidden[prev_unit][unit],
/// hidden_output[unit][word].
template <typename Real>
struct SrnWeights {
  std::size_t vocab = 0;
  std::size_t hidden = 0;
  std::vector<Real> input_hidden;
  std::vector<Real> hidden_hidden;
  std::vector<Real> hidden_bias;
  std::vector<Real> hidden_output;
  std::vector<Real> output_bias;

  SrnWeights() = default;
  SrnWeights(std::size_t vocab_size, std::size_t hidden_size);

  bool all_finite() const;
  bool operator==(const SrnWeights&) const = default;
};

/// Uniform(-init_scale, init_scale) connection weights from a generator
/// seeded with config.seed; biases zero.
template <typename Real>
SrnWeights<Real> init_weights(const SrnConfig& config);

/// Scratch buffers for a fixed network shape and window; reuse across calls.
template <typename Real>
struct SrnWorkspace {
  SrnWorkspace(std::size_t vocab, std::size_t hidden, std::size_t window);
  std::size_t window;
  std::vector<Real> states;  // (window + 1) x hidden, row 0 is the reset state
  std::vector<Real> logits;  // vocab
  std::vector<Real> delta;   // hidden
  std::vector<Real> delta_prev;
};

/// h' = sigmoid(input_hidden[token] + h . hidden_hidden + hidden_bias).
template <typename Real>
void advance_hidden(const SrnWeights<Real>& w, std::span<const Real> state, TokenId token, std::span<Real> next);

/// Softmax distribution over the vocabulary for a hidden state.
template <typename Real>
void output_distribution(const SrnWeights<Real>& w, std::span<const Real> state, std::span<Real> probs);

/// One step of the network: the next hidden state and the predicted
/// next-word distribution.
template <typename Real>
std::pair<std::vector<Real>, std::vector<Real>> forward_step(const SrnWeights<Real>& w, std::span<const Real> state,
                                                             TokenId token);

/// Hidden state after feeding `tokens` from the zero reset state.
template <typename Real>
void run_from_reset(const SrnWeights<Real>& w, std::span<const TokenId> tokens, std::span<Real> state);

/// Gradient of the final-step loss for one window. The output and recurrent
/// weight gradients are sums of outer products and stay in factored form.
template <typename Real>
struct WindowGradients {
  std::vector<Real> final_hidden;   // hidden
  std::vector<Real> output_delta;   // vocab: p - onehot(target)
  std::vector<Real> states;         // window x hidden: state fed into step t (row 0 is the reset state)
  std::vector<Real> hidden_bias;    // hidden
  std::vector<TokenId> inputs;      // window tokens
  std::vector<Real> input_rows;     // window x hidden: pre-activation gradient at step t

  Real d_hidden_output(std::size_t unit, std::size_t word) const {
    return final_hidden[unit] * output_delta[word];
  }
  Real d_output_bias(std::size_t word) const { return output_delta[word]; }
  /// Recurrent gradient, kept as sum_t states[t] x input_rows[t].
  Real d_hidden_hidden(std::size_t prev_unit, std::size_t unit) const;
  Real d_input_hidden(TokenId token, std::size_t unit) const;
};

/// Forward through the window from the reset state, loss -ln p[target] at
/// the last step, backpropagation through time truncated at the window
/// start. Returns the loss.
template <typename Real>
double window_gradients(const SrnWeights<Real>& w, std::span<const TokenId> inputs, TokenId target,
                        SrnWorkspace<Real>& ws, WindowGradients<Real>& grads);

/// window_gradients followed by one SGD step in place. Returns the
/// pre-update loss; throws RuntimeFailure if it is not finite.
template <typename Real>
double train_window(SrnWeights<Real>& w, std::span<const TokenId> inputs, TokenId target, double learning_rate,
                    SrnWorkspace<Real>& ws, WindowGradients<Real>& grads);

/// Loss of one window without updating anything.
template <typename Real>
double window_loss(const SrnWeights<Real>& w, std::span<const TokenId> inputs, TokenId target,
                   SrnWorkspace<Real>& ws);

/// Trains epochs_per_partition stride-1 passes over one partition. Returns
/// the mean loss of each pass.
template <typename Real>
std::vector<double> train_partition(SrnWeights<Real>& w, std::span<const TokenId> partition, const SrnConfig& config);

/// Mean -ln p over every position t >= window, each predicted from the
/// `window` preceding tokens run from the reset state. Positions are scored
/// in fixed-size blocks whose partial sums combine in block order, so the
/// result is identical for any thread count.
template <typename Real>
double cross_entropy(const SrnWeights<Real>& w, std::span<const TokenId> ids, std::size_t window,
                     unsigned threads = 1);

template <typename Real>
struct Checkpoint {
  static constexpr std::uint16_t kFormatVersion = 1;

  SrnConfig config;
  SrnWeights<Real> weights;
  std::uint32_t ordinal = 0;             // 0..5
  std::uint32_t partitions_trained = 0;  // prefix of the schedule already trained
  std::uint64_t tokens_trained = 0;      // sum of trained partition lengths

  bool operator==(const Checkpoint&) const = default;

  std::string serialize() const;
  void save(const std::filesystem::path& path) const;
};

using AnyCheckpoint = std::variant<Checkpoint<double>, Checkpoint<float>>;
AnyCheckpoint load_checkpoint(const std::filesystem::path& path);
AnyCheckpoint deserialize_checkpoint(std::string bytes, std::string what = "checkpoint");

/// Partition counts after which the six evaluation checkpoints fall:
/// 0, floor(kP/5) for k = 1..4, and P.
std::vector<std::size_t> checkpoint_schedule(std::size_t n_partitions);

template <typename Real>
using CheckpointHook = std::function<void(const Checkpoint<Real>&)>;

/// Incremental curriculum training. Partitions are visited in
/// corpus.partition_order, each for epochs_per_partition passes, never
/// revisited. `start` resumes after an earlier checkpoint (its ordinal and
/// weights); checkpoints with ordinal > start.ordinal are passed to `hook`
/// and returned.
template <typename Real>
std::vector<Checkpoint<Real>> train_schedule(const PreparedCorpus& corpus, Checkpoint<Real> start,
                                             const CheckpointHook<Real>& hook = {});

/// Fresh run: builds checkpoint 0 from init_weights and trains to the end.
template <typename Real>
std::vector<Checkpoint<Real>> train_schedule(const PreparedCorpus& corpus, const SrnConfig& config,
                                             const CheckpointHook<Real>& hook = {});

}  // namespace ordl
