#include <gtest/gtest.h>

#include "support.hpp"
#include "twohop/experiments.hpp"

using namespace twohop;

TEST(RandomModel, DeterministicPerSeed) {
  ModelConfig c;
  c.vocab = 50;
  c.hidden = 16;
  c.heads = 2;
  c.ff = 32;
  const auto a = random_model(c, 7), b = random_model(c, 7), d = random_model(c, 8);
  EXPECT_EQ(serialize_weights(a), serialize_weights(b));
  EXPECT_NE(serialize_weights(a), serialize_weights(d));
}

TEST(RandomModel, InitializationStatistics) {
  ModelConfig c;
  c.vocab = 400;
  const auto w = random_model(c, 1);
  double s = 0, s2 = 0;
  const std::size_t n = w.unembed.rows() * w.unembed.cols();
  for (std::size_t i = 0; i < w.unembed.rows(); ++i)
    for (std::size_t j = 0; j < w.unembed.cols(); ++j) {
      s += w.unembed(i, j);
      s2 += w.unembed(i, j) * w.unembed(i, j);
    }
  const double mean = s / n, sd = std::sqrt(s2 / n - mean * mean);
  EXPECT_NEAR(mean, 0.0, 0.002);
  EXPECT_NEAR(sd, kRandomInitScale, 0.001);
  for (double g : w.final_gain) EXPECT_EQ(g, 1.0);
  for (double b : w.final_shift) EXPECT_EQ(b, 0.0);
  for (const auto& l : w.layers) {
    for (double b : l.b_in) EXPECT_EQ(b, 0.0);
    for (double b : l.b_out) EXPECT_EQ(b, 0.0);
  }
}

TEST(ConstructedModel, ReportMatchesIndependentCheck) {
  const auto& f = fixtures::constructed_fixture();
  const auto& w = f.weights;
  const std::size_t L = w.config.layers;
  EXPECT_EQ(f.report.first_hop_layer, 1u);
  EXPECT_EQ(f.report.instances, f.generated.instances.size());
  std::size_t one_ok = 0, two_ok = 0;
  std::vector<std::size_t> lens(L, 0);
  for (const auto& inst : f.generated.instances) {
    const TokenId e2 = f.vocab.id_of(inst.e2), e3 = f.vocab.id_of(inst.e3);
    const auto one = forward(encode(inst.one_hop_prompt, f.vocab).ids, w).final_distribution;
    const auto two_tokens = encode_with_span(inst.two_hop_prompt, inst.mention, f.vocab);
    const auto two = forward(two_tokens.ids, w);
    one_ok += one.argmax() == e3 && one[e3] >= 0.9;
    two_ok += two.final_distribution.argmax() == e3 && two.final_distribution[e3] >= 0.8;
    for (std::size_t l = 0; l < L; ++l) {
      // Logit lens through the final norm and unembedding, recomputed from the residual state.
      const auto x = two.trace.x(l, *two_tokens.mention_final_index);
      const auto logits = project_logits(w, Vector(x.begin(), x.end()));
      lens[l] += static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) - logits.begin()) == e2;
    }
  }
  const double n = static_cast<double>(f.generated.instances.size());
  EXPECT_EQ(f.report.one_hop_accuracy, one_ok / n);
  EXPECT_EQ(f.report.two_hop_accuracy, two_ok / n);
  EXPECT_EQ(f.report.one_hop_accuracy, 1.0);
  EXPECT_EQ(f.report.two_hop_accuracy, 1.0);
  for (std::size_t l = 0; l < L; ++l) EXPECT_EQ(f.report.lens_top1_rate[l], lens[l] / n);
  for (std::size_t l = f.report.first_hop_layer; l + 1 < L; ++l) EXPECT_EQ(lens[l], f.generated.instances.size());
}

TEST(ConstructedModel, Preconditions) {
  const auto& f = fixtures::constructed_fixture();
  const auto cfg = constructed_config(f.generated.world, f.vocab);
  auto stray = f.generated.instances;
  stray[0].e2 = "Nonexistent";
  EXPECT_THROW(constructed_two_hop_model(f.generated.world, f.vocab, cfg, stray), InvalidInput);

  WorldKnobs k;
  k.name_length_weights = {0.0, 1.0};
  const auto multi = generate_world(k);
  const auto vocab = build_vocabulary(world_corpus(multi));
  EXPECT_THROW(constructed_two_hop_model(multi.world, vocab, constructed_config(multi.world, vocab), multi.instances),
               InvalidInput);

  auto narrow = cfg;
  narrow.hidden = 8;
  narrow.heads = 2;
  EXPECT_THROW(constructed_two_hop_model(f.generated.world, f.vocab, narrow, f.generated.instances), InvalidInput);
  EXPECT_THROW(constructed_config(f.generated.world, f.vocab, 3), InvalidInput);
}

TEST(ConstructedModel, ContractFailureListsInstances) {
  const auto& f = fixtures::constructed_fixture();
  auto wrong = f.generated.instances;
  // Claim an answer the world does not support.
  wrong[5].e3 = wrong[5].e2;
  try {
    constructed_two_hop_model(f.generated.world, f.vocab, constructed_config(f.generated.world, f.vocab), wrong);
    FAIL() << "expected ConstructionError";
  } catch (const ConstructionError& e) {
    ASSERT_EQ(e.failing_instances().size(), 1u);
    EXPECT_EQ(e.failing_instances()[0].rfind("instance 5 (", 0), 0u) << e.failing_instances()[0];
  }
}

TEST(ConstructedModel, PositiveControls) {
  const auto& f = fixtures::constructed_fixture();
  const auto& w = f.weights;
  const auto& inst = f.generated.instances;
  const std::size_t fh = f.report.first_hop_layer, L = w.config.layers;
  const auto rq1 = run_rq1(w, f.vocab, inst, &f.generated.candidates);
  for (std::size_t l = fh; l < L; ++l) EXPECT_GE(rq1.table.at(l).frequency, 0.9) << "layer " << l;
  const auto rq2 = run_rq2(w, f.vocab, inst);
  EXPECT_GE(rq2.table.at(fh).frequency, 0.7);
  const auto rq12 = run_rq12(w, f.vocab, inst, &f.generated.candidates);
  EXPECT_GE(rq12.table.at(fh).ss, 0.6);
  const auto app = run_appositive(w, f.vocab, inst);
  for (std::size_t l = fh; l + 1 < L; ++l) EXPECT_GT(app.table.at(l).frequency, 0.5) << "layer " << l;
  const auto cot = run_cot_comparison(w, f.vocab, inst);
  EXPECT_GT(cot.summaries[1].mean, cot.summaries[0].mean);
}
