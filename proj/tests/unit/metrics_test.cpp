#include <gtest/gtest.h>

#include <random>

#include "support.hpp"
#include "twohop/dataset.hpp"
#include "twohop/metrics.hpp"
#include "twohop/model_zoo.hpp"

using namespace twohop;
using fixtures::perturbed_model;
using fixtures::small_config;

namespace {

ModelConfig tiny(NormKind norm) {
  ModelConfig c;
  c.layers = 2;
  c.hidden = 2;
  c.heads = 1;
  c.ff = 2;
  c.vocab = 4;
  c.max_seq = 4;
  c.norm = norm;
  return c;
}

Vector random_vector(std::size_t n, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> d(0.0, scale);
  Vector v(n);
  for (double& x : v) x = d(rng);
  return v;
}

}  // namespace

TEST(EntRec, LastLayerFinalPositionIsOutputLogProbability) {
  std::mt19937_64 rng(1);
  for (auto norm : {NormKind::layernorm, NormKind::rmsnorm}) {
    const auto w = perturbed_model(small_config(norm), 23);
    for (int trial = 0; trial < 20; ++trial) {
      const auto tokens = fixtures::random_tokens(5, w.config.vocab, rng);
      const auto r = forward(tokens, w);
      const TokenId target = static_cast<TokenId>(trial % w.config.vocab);
      const double e = entrec(r.trace, w, {w.config.layers - 1, tokens.size() - 1, target});
      EXPECT_NEAR(e, std::log(r.final_distribution[target]), 1e-9);
    }
  }
}

TEST(EntRec, ValidLogProbabilities) {
  std::mt19937_64 rng(2);
  const auto w = perturbed_model(small_config(), 5);
  const auto r = forward(fixtures::random_tokens(6, w.config.vocab, rng), w);
  for (std::size_t l = 0; l < w.config.layers; ++l) {
    double total = 0;
    for (TokenId t = 0; t < w.config.vocab; ++t) total += std::exp(entrec(r.trace, w, {l, 3, t}));
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
}

TEST(EntRec, ZeroStateGivesMinusLogV) {
  auto w = perturbed_model(small_config(), 5);
  std::fill(w.final_shift.begin(), w.final_shift.end(), 0.0);
  EXPECT_NEAR(entrec_of_vector(Vector(w.config.hidden, 0.0), 3, w), -std::log(20.0), 1e-12);
}

TEST(EntRec, TwoDimensionalFixture) {
  auto w = ModelWeights::zeros(tiny(NormKind::layernorm));
  w.unembed = DenseMatrix(2, 4);
  w.unembed(0, 0) = 1.0;
  w.unembed(1, 1) = 1.0;
  // Only two live logits; the two zero columns are pushed far down.
  w.unembed(0, 2) = w.unembed(0, 3) = -50.0;
  w.unembed(1, 2) = w.unembed(1, 3) = 50.0;
  const Vector x{1.0, 0.0};
  // normalized x is [1, -1] up to the 1e-5 norm epsilon, so this is log softmax([1, -1])[0]
  const double expected = 1.0 - std::log(std::exp(1.0) + std::exp(-1.0));
  EXPECT_NEAR(expected, -0.12693, 1e-5);
  EXPECT_NEAR(entrec_of_vector(x, 0, w), expected, 1e-4);
}

TEST(EntRec, NormInvariances) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto ln = perturbed_model(small_config(NormKind::layernorm), 40 + trial);
    const auto rms = perturbed_model(small_config(NormKind::rmsnorm), 80 + trial);
    const auto x = random_vector(16, rng, 50.0);
    Vector shifted = x, scaled = x;
    for (double& v : shifted) v += 7.5;
    for (double& v : scaled) v *= 3.0;
    EXPECT_NEAR(entrec_of_vector(x, 4, ln), entrec_of_vector(shifted, 4, ln), 1e-9);
    EXPECT_NEAR(entrec_of_vector(x, 4, rms), entrec_of_vector(scaled, 4, rms), 1e-6);
  }
}

TEST(EntRecGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 40; ++trial) {
    const auto norm = trial % 2 ? NormKind::rmsnorm : NormKind::layernorm;
    const auto w = perturbed_model(small_config(norm), 100 + trial, 0.5);
    const auto x = random_vector(w.config.hidden, rng, 1.0 + trial % 5);
    const TokenId target = static_cast<TokenId>(trial % w.config.vocab);
    const auto g = entrec_gradient(x, target, w);
    const auto fd = fixtures::finite_difference_gradient([&](const Vector& v) { return entrec_of_vector(v, target, w); }, x);
    EXPECT_LE(fixtures::max_relative_error(g, fd), 1e-4) << "trial " << trial;
  }
}

TEST(EntRecGradient, LayerNormRemovesMeanDirection) {
  std::mt19937_64 rng(11);
  const auto w = perturbed_model(small_config(NormKind::layernorm), 12);
  for (int trial = 0; trial < 20; ++trial) {
    const auto g = entrec_gradient(random_vector(16, rng, 2.0), 1, w);
    double s = 0, scale = 0;
    for (double v : g) {
      s += v;
      scale = std::max(scale, std::abs(v));
    }
    EXPECT_LE(std::abs(s), 1e-12 * std::max(1.0, scale) * 16);
  }
}

TEST(EntRecGradient, SaturatedTargetHasVanishingGradient) {
  std::mt19937_64 rng(12);
  for (auto norm : {NormKind::layernorm, NormKind::rmsnorm}) {
    auto w = perturbed_model(small_config(norm), 13);
    const auto x = random_vector(16, rng, 1.0);
    const auto n = final_norm(w, x);
    for (std::size_t i = 0; i < 16; ++i) w.unembed(i, 2) = 100.0 * n[i];
    EXPECT_LE(l2_norm(entrec_gradient(x, 2, w)), 1e-8);
  }
}

TEST(EntRecGradient, RejectsBadInput) {
  const auto w = perturbed_model(small_config(), 13);
  EXPECT_THROW(entrec_gradient(Vector(3, 0.0), 0, w), InvalidInput);
  Vector x(16, 0.0);
  x[2] = NAN;
  EXPECT_THROW(entrec_gradient(x, 0, w), InvalidInput);
  EXPECT_THROW(entrec_gradient(Vector(16, 0.0), 20, w), InvalidInput);
}

TEST(CnstScore, KnownValues) {
  const auto u = ProbabilityDistribution::uniform(4);
  EXPECT_NEAR(cnst_score(u, u), -std::log(4.0), 1e-15);
  const auto onehot = ProbabilityDistribution::from_probs({0, 0, 1, 0});
  EXPECT_EQ(cnst_score(onehot, onehot), 0.0);
  const auto p1h = ProbabilityDistribution::from_probs({0.75, 0.25});
  const auto p2h = ProbabilityDistribution::from_probs({0.5, 0.5});
  const double h1 = -(0.75 * std::log(0.5) + 0.25 * std::log(0.5));
  const double h2 = -(0.5 * std::log(0.75) + 0.5 * std::log(0.25));
  EXPECT_NEAR(cnst_score(p2h, p1h), -0.5 * (h1 + h2), 1e-15);
  EXPECT_NEAR(cnst_score(p2h, p1h), -0.76507, 1e-5);
}

TEST(CnstScore, SymmetricAndSelfIsNegativeEntropy) {
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    Vector a(9), b(9);
    for (double& v : a) v = d(rng) + 1e-6;
    for (double& v : b) v = d(rng) + 1e-6;
    const auto p = softmax(a), q = softmax(b);
    EXPECT_EQ(cnst_score(p, q), cnst_score(q, p));
    EXPECT_NEAR(cnst_score(p, p), -entropy(p), 1e-12);
  }
  EXPECT_THROW(cnst_score(ProbabilityDistribution::uniform(2), ProbabilityDistribution::uniform(3)), InvalidInput);
}

TEST(AnswerLogprob, KnownValues) {
  EXPECT_EQ(answer_logprob(ProbabilityDistribution::from_probs({0, 1, 0}), 1), 0.0);
  EXPECT_NEAR(answer_logprob(ProbabilityDistribution::uniform(7), 3), -std::log(7.0), 1e-15);
  EXPECT_THROW(answer_logprob(ProbabilityDistribution::uniform(7), 7), InvalidInput);
}

TEST(OneHopCorrect, MatchesFirstTokenOfAnyAlias) {
  const auto v = build_vocabulary({"Lula Mae", "Stevie"});
  Vector logits(v.size(), 0.0);
  logits[v.id_of("Lula")] = 5.0;
  const auto p = softmax(logits);
  EXPECT_TRUE(one_hop_correct(p, {"Lula Mae"}, v));
  EXPECT_TRUE(one_hop_correct(p, {"Stevie", "Lula"}, v));
  EXPECT_FALSE(one_hop_correct(p, {"Stevie"}, v));
  std::vector<std::string> unmatched;
  EXPECT_FALSE(one_hop_correct(p, {"Nobody Known"}, v, &unmatched));
  EXPECT_EQ(unmatched, std::vector<std::string>{"Nobody Known"});
  EXPECT_THROW(one_hop_correct(p, {}, v), InvalidInput);
}

TEST(OneHopCorrect, RandomModelIsAlmostNeverRight) {
  WorldKnobs k;
  k.types = 10;
  k.instances_per_type = 100;
  k.name_length_weights = {0.4, 0.4, 0.2};
  k.seed = 21;
  const auto g = generate_world(k);
  const auto vocab = build_vocabulary(world_corpus(g));
  ModelConfig c;
  c.vocab = vocab.size();
  const auto w = random_model(c, 5);
  std::size_t hits = 0;
  for (const auto& inst : g.instances)
    hits += one_hop_correct(forward(encode(inst.one_hop_prompt, vocab).ids, w).final_distribution, inst.answer_aliases, vocab);
  EXPECT_LE(static_cast<double>(hits) / 1000.0, 0.01);
}
