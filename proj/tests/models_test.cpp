#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "kdbench/core/grad_check.hpp"
#include "kdbench/models/model.hpp"
#include "support/model_cases.hpp"

namespace {

using kdb::BiLstmSpec;
using kdb::CnnSpec;
using kdb::Model;
using kdb::Task;
using kdb::TransformerSpec;
using namespace kdb::testing;

TEST(ParameterCount, MinimalTransformerIs262) {
  Model m = kdb::build_model(minimal_transformer(), 1);
  EXPECT_EQ(kdb::count_parameters(m), 262u);
  EXPECT_EQ(transformer_count_oracle(1, 4, 8, 10, 8, 2), 262u);
}

TEST(ParameterCount, MatchesOracles) {
  for (std::size_t l : {1u, 2u, 3u}) {
    TransformerSpec s = small_transformer();
    s.layers = l;
    EXPECT_EQ(kdb::count_parameters(kdb::build_model(s, 0)), transformer_count_oracle(l, 4, 8, 12, 8, 3));
  }
  BiLstmSpec b = small_bilstm();
  b.hidden_dim = 1;
  b.attn_heads = 1;
  EXPECT_EQ(kdb::count_parameters(kdb::build_model(b, 0)), bilstm_count_oracle(4, 1, 1, 12, 3));
  b.lstm_layers = 2;
  EXPECT_EQ(kdb::count_parameters(kdb::build_model(b, 0)), bilstm_count_oracle(4, 1, 2, 12, 3));

  CnnSpec c;
  c.embed_dim = 2;
  c.n_blocks = 1;
  c.kernel_size = 3;
  c.vocab_size = 4;
  c.num_classes = 2;
  // 8 + (6 + 2 + 4 + 2 + 4) + 4 + 2
  EXPECT_EQ(kdb::count_parameters(kdb::build_model(c, 0)), 32u);
  EXPECT_EQ(cnn_count_oracle(2, 1, 3, 4, 2), 32u);
}

TEST(ParameterCount, PresetOrderingAndMagnitudes) {
  const std::size_t vocab = 30522, max_len = 512;
  const auto count = [&](const TransformerSpec& s) { return kdb::count_parameters(kdb::build_model(s, 0)); };
  const std::size_t tiny = count(TransformerSpec::bert_tiny(vocab, max_len, 2, Task::classification));
  const std::size_t mini = count(TransformerSpec::bert_mini(vocab, max_len, 2, Task::classification));
  const std::size_t small = count(TransformerSpec::bert_small(vocab, max_len, 2, Task::classification));
  const std::size_t base = count(TransformerSpec::bert_base(vocab, max_len, 2, Task::classification));
  EXPECT_LT(tiny, mini);
  EXPECT_LT(mini, small);
  EXPECT_LT(small, base);
  const auto near = [](std::size_t got, double millions) {
    return std::fabs(static_cast<double>(got) / 1e6 - millions) <= 0.15 * millions;
  };
  EXPECT_TRUE(near(tiny, 4.4)) << tiny;
  EXPECT_TRUE(near(mini, 11.3)) << mini;
  EXPECT_TRUE(near(small, 29.1)) << small;
  EXPECT_TRUE(near(base, 110.1)) << base;
}

TEST(Build, DeterministicForSeed) {
  for (const auto& spec : small_specs(Task::classification)) {
    Model a = kdb::build_model(spec, 7);
    Model b = kdb::build_model(spec, 7);
    Model c = kdb::build_model(spec, 8);
    ASSERT_EQ(a.params.size(), b.params.size());
    bool differs = false;
    for (std::size_t i = 0; i < a.params.size(); ++i) {
      EXPECT_EQ(a.params[i].value, b.params[i].value) << a.params[i].name;
      differs = differs || !(a.params[i].value == c.params[i].value);
    }
    EXPECT_TRUE(differs);
  }
}

TEST(Build, RejectsInvalidSpecs) {
  TransformerSpec t = small_transformer();
  t.attn_heads = 3;
  EXPECT_THROW(kdb::build_model(t, 0), kdb::ParameterError);
  CnnSpec c = small_cnn();
  c.kernel_size = 4;
  EXPECT_THROW(kdb::build_model(c, 0), kdb::ParameterError);
  BiLstmSpec b = small_bilstm();
  b.vocab_size = 0;
  EXPECT_THROW(kdb::build_model(b, 0), kdb::ParameterError);
}

TEST(Forward, OutputShapes) {
  std::mt19937_64 rng(3);
  for (Task task : {Task::classification, Task::sequence_labeling}) {
    for (const auto& spec : small_specs(task)) {
      Model m = kdb::build_model(spec, 1);
      for (std::size_t len : {1u, 2u, 5u, 8u}) {
        auto ids = random_ids(rng, len, 12);
        kdb::Tensor out = kdb::predict(m, ids);
        EXPECT_EQ(out.rows(), task == Task::classification ? 1u : len);
        EXPECT_EQ(out.cols(), 3u);
      }
    }
  }
}

TEST(Forward, RejectsBadInputs) {
  Model m = kdb::build_model(small_cnn(), 1);
  std::vector<std::size_t> empty;
  EXPECT_THROW(kdb::predict(m, empty), kdb::ContractError);
  std::vector<std::size_t> too_long(9, 5);
  EXPECT_THROW(kdb::predict(m, too_long), kdb::ContractError);
  std::vector<std::size_t> oov{5, 12};
  EXPECT_THROW(kdb::predict(m, oov), kdb::ContractError);
  std::vector<std::size_t> ids{5, 6};
  std::vector<float> short_mask{1.0f};
  EXPECT_THROW(kdb::predict(m, ids, short_mask), kdb::ContractError);
  std::vector<float> all_pad{0.0f, 0.0f};
  EXPECT_THROW(kdb::predict(m, ids, all_pad), kdb::ContractError);
  std::vector<float> non_binary{1.0f, 0.5f};
  EXPECT_THROW(kdb::predict(m, ids, non_binary), kdb::ContractError);
}

TEST(Forward, FiniteLogitsAcrossSeeds) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    for (const auto& spec : small_specs(seed % 2 ? Task::sequence_labeling : Task::classification)) {
      Model m = kdb::build_model(spec, seed);
      auto ids = random_ids(rng, 1 + seed % 8, 12);
      EXPECT_TRUE(kdb::predict(m, ids).all_finite());
    }
  }
}

// Logits at real positions do not depend on what sits in padded positions.
TEST(Forward, PaddingContentIsIgnored) {
  std::mt19937_64 rng(11);
  for (Task task : {Task::classification, Task::sequence_labeling}) {
    for (const auto& spec : small_specs(task)) {
      Model m = kdb::build_model(spec, 2);
      for (int trial = 0; trial < 10; ++trial) {
        auto ids = random_ids(rng, 6, 12);
        std::vector<float> mask{1, 1, 1, 1, 0, 0};
        auto other = ids;
        other[4] = (ids[4] + 1) % 12;
        other[5] = 0;
        kdb::Tensor a = kdb::predict(m, ids, mask);
        kdb::Tensor b = kdb::predict(m, other, mask);
        const std::size_t rows = task == Task::classification ? 1 : 4;
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < a.cols(); ++c) EXPECT_NEAR(a.at(r, c), b.at(r, c), 1e-5f);
        }
      }
    }
  }
}

// Trailing padding leaves classification logits unchanged for the BiLSTM and CNN.
TEST(Forward, TrailingPaddingMatchesUnpadded) {
  std::mt19937_64 rng(5);
  for (const kdb::ModelSpec& spec : {kdb::ModelSpec(small_bilstm()), kdb::ModelSpec(small_cnn())}) {
    Model m = kdb::build_model(spec, 4);
    for (int trial = 0; trial < 10; ++trial) {
      auto ids = random_ids(rng, 4, 12);
      auto padded = ids;
      padded.insert(padded.end(), {0, 0, 0});
      std::vector<float> mask{1, 1, 1, 1, 0, 0, 0};
      kdb::Tensor a = kdb::predict(m, ids);
      kdb::Tensor b = kdb::predict(m, padded, mask);
      EXPECT_LT(kdb::max_abs_diff(a, b), 1e-5f);
    }
  }
}

TEST(Forward, ZeroConvolutionBlockIsIdentity) {
  CnnSpec s = small_cnn(Task::sequence_labeling);
  s.n_blocks = 1;
  Model m = kdb::build_model(s, 3);
  // relu(LN(.)) with zero gamma and beta is zero, so the block reduces to its residual.
  m.params.at("blocks.0.ln.gamma").value.fill(0.0f);
  std::vector<std::size_t> ids{4, 7, 9};
  kdb::Tensor out = kdb::predict(m, ids);
  kdb::Tensor pe = kdb::layers::sinusoidal_positions<float>(3, 4);
  const kdb::Tensor& emb = m.params.at("embedding").value;
  const kdb::Tensor& w = m.params.at("head.w").value;
  const kdb::Tensor& b = m.params.at("head.b").value;
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t c = 0; c < 3; ++c) {
      float expect = b[c];
      for (std::size_t j = 0; j < 4; ++j) expect += (emb.at(ids[t], j) + pe.at(t, j)) * w.at(j, c);
      EXPECT_NEAR(out.at(t, c), expect, 1e-5f);
    }
  }
}

TEST(Forward, PositionalEncodingValues) {
  kdb::Tensor pe = kdb::layers::sinusoidal_positions<float>(3, 4);
  EXPECT_FLOAT_EQ(pe.at(0, 0), 0.0f);
  EXPECT_FLOAT_EQ(pe.at(0, 1), 1.0f);
  EXPECT_FLOAT_EQ(pe.at(1, 0), std::sin(1.0f));
  EXPECT_FLOAT_EQ(pe.at(2, 3), std::cos(2.0f / 100.0f));
}

TEST(Forward, InferenceGraphMatchesRecordingGraph) {
  std::mt19937_64 rng(17);
  for (Task task : {Task::classification, Task::sequence_labeling}) {
    for (std::size_t layers : {1u, 3u}) {
      TransformerSpec s = TransformerSpec::preset(2, layers, 16, 40, 12, 3, task);
      Model m = kdb::build_model(s, layers);
      for (int k = 0; k < 20; ++k) {
        const auto ids = random_ids(rng, 1 + k % 12, 40);
        std::vector<float> mask(ids.size(), 1.0f);
        if (ids.size() > 2 && k % 2) mask.back() = 0.0f;
        kdb::Graph rec(kdb::Graph::Mode::record);
        kdb::Graph inf(kdb::Graph::Mode::inference);
        const kdb::Tensor a = kdb::forward(m, rec, ids, mask).value();
        const kdb::Tensor& b = kdb::forward(m, inf, ids, mask).value();
        ASSERT_EQ(a.shape(), b.shape());
        for (std::size_t j = 0; j < a.size(); ++j) EXPECT_NEAR(a[j], b[j], 1e-5);
      }
    }
  }
}

TEST(Forward, DropoutOnlyInTraining) {
  TransformerSpec s = small_transformer();
  s.dropout = 0.5f;
  Model m = kdb::build_model(s, 1);
  std::vector<std::size_t> ids{4, 5, 6};
  kdb::Tensor a = kdb::predict(m, ids);
  kdb::Tensor b = kdb::predict(m, ids);
  EXPECT_EQ(a, b);
  kdb::Graph g(kdb::Graph::Mode::record, true, 9);
  kdb::Tensor c = kdb::forward(m, g, ids).value();
  EXPECT_GT(kdb::max_abs_diff(a, c), 0.0f);
}

TEST(Backward, EveryParameterReceivesGradient) {
  std::mt19937_64 rng(21);
  for (Task task : {Task::classification, Task::sequence_labeling}) {
    for (const auto& spec : small_specs(task)) {
      Model m = kdb::build_model(spec, 5);
      // Make sure the PAD embedding row is visited so the table cannot be all zero.
      auto ids = random_ids(rng, 5, 12);
      kdb::Graph g;
      kdb::Var logits = kdb::forward(m, g, ids);
      g.backward(kdb::ops::sum(kdb::ops::mul(logits, g.input(
          [&] {
            kdb::Tensor r(logits.shape());
            std::normal_distribution<float> d;
            for (auto& v : r.data()) v = d(rng);
            return r;
          }(),
          false))));
      for (const auto& p : m.params) {
        ASSERT_FALSE(p.grad.data().empty()) << p.name;
        bool nonzero = false;
        for (float v : p.grad.data()) nonzero = nonzero || v != 0.0f;
        EXPECT_TRUE(nonzero) << kdb::family_name(m.family()) << " " << p.name;
      }
    }
  }
}

// Smallest |input| over every ReLU on the graph; finite differences are only
// meaningful when no pre-activation sits close to the kink.
// Gradient check through each full architecture in double precision.
TEST(Backward, GradCheckThroughArchitectures) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (Task task : {Task::classification, Task::sequence_labeling}) {
      for (const auto& spec : small_specs(task)) {
        EXPECT_LT(arch_grad_error(spec, seed), 1e-3) << kdb::family_name(kdb::family_of(spec)) << " seed " << seed;
      }
    }
  }
}

}  // namespace
