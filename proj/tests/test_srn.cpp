#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "ordl/srn.hpp"
#include "support.hpp"

using namespace ordl;
using Ids = std::vector<TokenId>;

namespace {

SrnConfig small_config(std::uint64_t seed = 1) {
  SrnConfig c;
  c.vocab_size = 12;
  c.hidden_size = 8;
  c.window = 4;
  c.epochs_per_partition = 3;
  c.learning_rate = 0.1;
  c.seed = seed;
  return c;
}

PreparedCorpus small_corpus(std::size_t n_partitions, std::size_t length, OrderingMode mode) {
  EncodedStream e;
  Rng rng(5);
  for (std::size_t i = 0; i < n_partitions * length; ++i) {
    // Mostly cyclic with noise so training has something to learn.
    e.ids.push_back(static_cast<TokenId>(rng.below(5) == 0 ? rng.below(11) : i % 7));
  }
  e.utterance_spans = {{0, e.ids.size()}};
  auto c = partition_stream(e, n_partitions, mode);
  std::vector<std::string> words;
  for (int i = 0; i < 11; ++i) words.push_back("w" + std::to_string(i));
  words.push_back("<oov>");
  c.vocab = Vocabulary::from_words(words);
  return c;
}

}  // namespace

TEST_CASE("config validation") {
  SrnConfig c;
  CHECK_NOTHROW(c.validate());
  c.init_scale = 0;
  CHECK_NOTHROW(c.validate());
  c.learning_rate = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = SrnConfig{};
  c.window = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = SrnConfig{};
  c.vocab_size = 1;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("initialization is seeded, bounded and leaves biases at zero") {
  auto c = small_config(3);
  c.init_scale = 0.2;
  const auto a = init_weights<double>(c);
  CHECK(a == init_weights<double>(c));
  c.seed = 4;
  CHECK_FALSE(a == init_weights<double>(c));
  for (double x : a.input_hidden) CHECK(std::abs(x) <= 0.2);
  CHECK(std::all_of(a.hidden_bias.begin(), a.hidden_bias.end(), [](double x) { return x == 0; }));
  CHECK(std::all_of(a.output_bias.begin(), a.output_bias.end(), [](double x) { return x == 0; }));
}

TEST_CASE("zero weights predict uniformly") {
  auto c = small_config();
  c.init_scale = 0;
  const auto w = init_weights<double>(c);
  const std::vector<double> h(c.hidden_size, 0.0);
  auto [next, probs] = forward_step(w, std::span<const double>(h), 3);
  for (double p : probs) CHECK(p == doctest::Approx(1.0 / 12).epsilon(1e-15));
  for (double x : next) CHECK(x == 0.5);
  SrnWorkspace<double> ws(12, c.hidden_size, 4);
  const Ids win{1, 2, 3, 4};
  CHECK(std::abs(window_loss(w, std::span<const TokenId>(win), 5, ws) - std::log(12.0)) < 1e-12);
}

TEST_CASE("softmax output sums to one with positive entries") {
  auto c = small_config();
  c.init_scale = 2.0;
  const auto w = init_weights<double>(c);
  std::vector<double> h(c.hidden_size, 0.0);
  for (TokenId t = 0; t < 12; ++t) {
    auto [next, probs] = forward_step(w, std::span<const double>(h), t);
    const double sum = std::accumulate(probs.begin(), probs.end(), 0.0);
    CHECK(std::abs(sum - 1.0) < 1e-6);
    CHECK(std::all_of(probs.begin(), probs.end(), [](double p) { return p > 0; }));
    h = next;
  }
  CHECK_THROWS_AS(forward_step(w, std::span<const double>(h), 12), ValidationError);
}

TEST_CASE("analytic gradients match central differences") {
  const auto r = testing::gradient_check(100);
  CHECK(r.parameters_checked == 100u * (10 * 5 * 2 + 10 + 5 * 5 + 5));
  CHECK(r.max_relative_error < 1e-4);
}

TEST_CASE("gradient check also holds for other shapes") {
  CHECK(testing::gradient_check(10, 7, 9, 3).max_relative_error < 1e-4);
  CHECK(testing::gradient_check(10, 4, 3, 1).max_relative_error < 1e-4);
}

TEST_CASE("repeated updates on one pair reduce its loss") {
  auto c = small_config();
  auto w = init_weights<double>(c);
  SrnWorkspace<double> ws(12, c.hidden_size, 4);
  WindowGradients<double> g;
  const Ids win{1, 2, 3, 4};
  double prev = window_loss(w, std::span<const TokenId>(win), 9, ws);
  const double first = prev;
  for (int i = 0; i < 100; ++i) {
    train_window(w, std::span<const TokenId>(win), 9, c.learning_rate, ws, g);
    const double now = window_loss(w, std::span<const TokenId>(win), 9, ws);
    CHECK(now < prev);
    prev = now;
  }
  CHECK(prev < 0.5 * first);
}

TEST_CASE("training diverging to non-finite loss is reported") {
  auto c = small_config();
  c.learning_rate = 1e300;
  c.init_scale = 1.0;
  auto w = init_weights<double>(c);
  Ids part(40);
  for (std::size_t i = 0; i < part.size(); ++i) part[i] = static_cast<TokenId>(i % 12);
  CHECK_THROWS_AS(train_partition(w, part, c), RuntimeFailure);
}

TEST_CASE("later passes over a partition have lower loss") {
  auto c = small_config();
  c.epochs_per_partition = 20;
  auto w = init_weights<double>(c);
  const auto corpus = small_corpus(1, 300, OrderingMode::chronological());
  const auto losses = train_partition(w, corpus.partition_at(0), c);
  REQUIRE(losses.size() == 20);
  CHECK(losses.back() < losses.front());
}

TEST_CASE("cyclic corpus is learned") {
  SrnConfig c;
  c.vocab_size = 4;
  c.hidden_size = 64;
  auto w = init_weights<double>(c);
  const auto ids = testing::cyclic_stream(1000);
  train_partition(w, ids, c);
  CHECK(cross_entropy(w, ids, c.window) < 0.1);
}

TEST_CASE("cross-entropy of a zero model is ln V and independent of thread count") {
  SrnConfig c;
  c.init_scale = 0;
  c.hidden_size = 32;
  const auto w = init_weights<double>(c);
  Rng rng(2);
  Ids ids(3000);
  for (auto& t : ids) t = static_cast<TokenId>(rng.below(4096));
  CHECK(std::abs(cross_entropy(w, ids, 7) - std::log(4096.0)) < 1e-6);

  c.init_scale = 0.3;
  const auto r = init_weights<double>(c);
  const double one = cross_entropy(r, ids, 7, 1);
  CHECK(cross_entropy(r, ids, 7, 3) == one);
  CHECK_THROWS_AS(cross_entropy(r, std::span<const TokenId>(ids).first(7), 7), ValidationError);
}

TEST_CASE("checkpoint schedule") {
  CHECK(checkpoint_schedule(256) == std::vector<std::size_t>{0, 51, 102, 153, 204, 256});
  CHECK(checkpoint_schedule(8) == std::vector<std::size_t>{0, 1, 3, 4, 6, 8});
  CHECK(checkpoint_schedule(5) == std::vector<std::size_t>{0, 1, 2, 3, 4, 5});
}

TEST_CASE("checkpoints round-trip exactly in both precisions") {
  const auto dir = testing::scratch_dir("srn-ckpt");
  auto c = small_config();
  Checkpoint<double> d{c, init_weights<double>(c), 2, 3, 1500};
  d.save(dir / "d.srnw");
  CHECK(std::get<Checkpoint<double>>(load_checkpoint(dir / "d.srnw")) == d);
  Checkpoint<float> f{c, init_weights<float>(c), 1, 1, 500};
  f.save(dir / "f.srnw");
  CHECK(std::get<Checkpoint<float>>(load_checkpoint(dir / "f.srnw")) == f);

  auto bytes = d.serialize();
  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 1)), ValidationError);
  bytes[0] = 'Q';
  CHECK_THROWS_AS(deserialize_checkpoint(bytes), ValidationError);
}

TEST_CASE("schedule runs are deterministic and resume bit-identically") {
  const auto corpus = small_corpus(8, 60, OrderingMode::shuffled(3));
  const auto c = small_config(9);
  const auto full = train_schedule<double>(corpus, c);
  REQUIRE(full.size() == 6);
  CHECK(full == train_schedule<double>(corpus, c));
  for (std::size_t k = 0; k < 6; ++k) CHECK(full[k].ordinal == k);
  CHECK(full[5].partitions_trained == 8);
  CHECK(full[5].tokens_trained == 480);
  CHECK(full[2].partitions_trained == 3);

  for (std::uint32_t k = 0; k < 5; ++k) {
    auto start = std::get<Checkpoint<double>>(deserialize_checkpoint(full[k].serialize()));
    std::vector<std::uint32_t> seen;
    const auto rest = train_schedule<double>(corpus, start, [&](const Checkpoint<double>& x) { seen.push_back(x.ordinal); });
    REQUIRE(rest.size() == 5 - k);
    CHECK(rest.back() == full.back());
    CHECK(rest.back().serialize() == full.back().serialize());
    CHECK(seen.front() == k + 1);
  }

  auto off = full[1];
  off.partitions_trained = 2;
  CHECK_THROWS_AS(train_schedule<double>(corpus, off), ValidationError);
  auto wrong = c;
  wrong.vocab_size = 13;
  CHECK_THROWS_AS(train_schedule<double>(corpus, wrong), ValidationError);
}

TEST_CASE("float precision trains and stays close to double at the start") {
  const auto corpus = small_corpus(4, 60, OrderingMode::chronological());
  const auto c = small_config(2);
  const auto f = train_schedule<float>(corpus, c);
  REQUIRE(f.size() == 6);
  CHECK(f.back().weights.all_finite());
  const auto d = init_weights<double>(c);
  const auto s = init_weights<float>(c);
  const auto ids = corpus.training_stream();
  CHECK(std::abs(cross_entropy(d, ids, 4) - cross_entropy(s, ids, 4)) < 1e-5);
}
