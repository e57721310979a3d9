#pragma once

// Control models.
//
// random_model: every matrix entry drawn from N(0, 0.02), biases 0, norm gains 1.
//
// constructed_two_hop_model: a hand-wired transformer that resolves
// "The r2 of the r1 of e1 is" to r2(r1(e1)). Residual layout (one dimension each
// unless noted):
//
//   sink        absorbs -sum of every write, so each residual row has mean 0
//   anchor +/-  a fixed pair (+A, -A) that dominates the row norm; with norm gains
//               set to the nominal RMS, normalized rows are close to the raw rows
//   ANS[e]      current answer entity (read by the unembedding)
//   BRIDGE[e]   entity gathered from entity positions
//   TOKREL[r]   relation word at this position
//   REL_M[r]    most recent relation word
//   REL_P[r]    relation of the outer prompt (most recent capitalized-context relation)
//   flags       ISREL, ART_CAP ("The"), ART_LOW ("the", "a"), CAPCTX, LOWCTX, ENT, Q ("is"),
//               COMMA, POS (= position / max_seq)
//
// Layers, counted back from the top (earlier layers are exact pass-throughs):
//   L-4  attention: most recent article -> CAPCTX / LOWCTX
//   L-3  attention: most recent relation word -> REL_M
//        MLP, one unit per fact (r, s -> o): fires on REL_M[r] + ANS[s] + LOWCTX,
//        rewrites ANS from s to o. This is the first-hop layer.
//   L-2  attention: mean of ANS over entity positions -> BRIDGE;
//        most recent capitalized-context relation -> REL_P
//        MLP, one unit per fact: fires on REL_P[r] + BRIDGE[s] + Q, writes ANS[o]
//   L-1  attention: mean of ANS over entity positions -> BRIDGE again
//        MLP, one unit per entity: fires on BRIDGE[e] + COMMA, writes ANS[e]

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "twohop/dataset.hpp"
#include "twohop/errors.hpp"
#include "twohop/model.hpp"
#include "twohop/model_io.hpp"
#include "twohop/tokenizer.hpp"

namespace twohop {

inline constexpr double kRandomInitScale = 0.02;

inline ModelWeights random_model(const ModelConfig& config, std::uint64_t seed) {
  auto w = ModelWeights::zeros(config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, kRandomInitScale);
  auto fill = [&](DenseMatrix& m) {
    for (double& x : m.data()) x = normal(rng);
  };
  fill(w.tok_emb);
  fill(w.pos_emb);
  for (auto& l : w.layers) {
    fill(l.wq);
    fill(l.wk);
    fill(l.wv);
    fill(l.wo);
    fill(l.w_in);
    fill(l.w_out);
  }
  fill(w.unembed);
  return w;
}

class ConstructionError : public InvariantViolation {
 public:
  ConstructionError(const std::string& what, std::vector<std::string> failing)
      : InvariantViolation(what), failing_(std::move(failing)) {}
  const std::vector<std::string>& failing_instances() const { return failing_; }

 private:
  std::vector<std::string> failing_;
};

struct ConstructionReport {
  double one_hop_accuracy = 0.0;     // top-1 = e3 and P(e3) >= 0.9
  double two_hop_accuracy = 0.0;     // top-1 = e3 and P(e3) >= 0.8
  std::vector<double> lens_top1_rate;  // per layer: e2 top-1 under the logit lens at the mention
  std::size_t first_hop_layer = 0;
  std::size_t instances = 0;
};

struct ConstructionConstants {
  double anchor = 100.0;          // A
  double article_bias = 1000.0;   // B, score for the feature a head selects on
  double recency = 10.0;          // score per position of recency
  double entity_bias = 40.0;      // bridge head preference for entity positions
  double unit_gain = 20.0;        // MLP input scale
  double hop1_threshold = 2.5;    // of 3 features
  double hop1_write = 0.8;        // ANS[o] after the first hop
  double hop2_threshold = 2.2;
  double hop2_write = 1.5;
  double copy_threshold = 2.6;    // BRIDGE + 2 * COMMA
  double copy_write = 1.5;
  double unembed_scale = 10.0;
};

namespace zoo_detail {

struct Layout {
  std::size_t entities = 0, relations = 0;
  std::size_t sink = 0, anchor_pos = 1, anchor_neg = 2;
  std::size_t ans = 0, bridge = 0, tokrel = 0, rel_m = 0, rel_p = 0;
  std::size_t is_rel = 0, art_cap = 0, art_low = 0, cap_ctx = 0, low_ctx = 0, ent = 0, q = 0, comma = 0, pos = 0;
  std::size_t width = 0;

  Layout(std::size_t n_e, std::size_t n_r) : entities(n_e), relations(n_r) {
    std::size_t next = 3;
    auto take = [&](std::size_t n) {
      const std::size_t at = next;
      next += n;
      return at;
    };
    ans = take(n_e);
    bridge = take(n_e);
    tokrel = take(n_r);
    rel_m = take(n_r);
    rel_p = take(n_r);
    is_rel = take(1);
    art_cap = take(1);
    art_low = take(1);
    cap_ctx = take(1);
    low_ctx = take(1);
    ent = take(1);
    q = take(1);
    comma = take(1);
    pos = take(1);
    width = next;
  }
};

inline std::size_t total_facts(const FactWorld& world) {
  std::size_t n = 0;
  for (const auto& f : world.facts) n += f.size();
  return n;
}

// Adds -sum(row) to the sink column of every row of a write matrix.
inline void compensate_rows(DenseMatrix& m, std::size_t sink) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    double total = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j)
      if (j != sink) total += r[j];
    r[sink] = -total;
  }
}

}  // namespace zoo_detail

// Smallest configuration the construction fits in.
inline ModelConfig constructed_config(const FactWorld& world, const Vocabulary& vocab, std::size_t layers = 4,
                                      std::size_t max_seq = 32, NormKind norm = NormKind::layernorm) {
  require(layers >= 4, "constructed_config: the construction needs at least 4 layers");
  const zoo_detail::Layout layout(world.entities.size(), world.relations.size());
  ModelConfig c;
  c.layers = layers;
  c.heads = 2;
  c.hidden = layout.width + (layout.width % 2);
  c.ff = std::max({zoo_detail::total_facts(world), world.entities.size(), std::size_t{1}});
  c.vocab = vocab.size();
  c.max_seq = max_seq;
  c.norm = norm;
  return c;
}

inline ConstructionReport certify_construction(const ModelWeights& w, const Vocabulary& vocab,
                                               const std::vector<TwoHopInstance>& instances,
                                               std::size_t first_hop_layer, std::vector<std::string>* failing = nullptr) {
  ConstructionReport report;
  report.first_hop_layer = first_hop_layer;
  report.instances = instances.size();
  report.lens_top1_rate.assign(w.config.layers, 0.0);
  if (instances.empty()) return report;
  std::size_t one_ok = 0, two_ok = 0;
  std::vector<std::size_t> lens_ok(w.config.layers, 0);
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& inst = instances[i];
    const TokenId e2 = first_token_of(inst.e2, vocab);
    const TokenId e3 = first_token_of(inst.e3, vocab);
    const auto one = forward(encode(inst.one_hop_prompt, vocab).ids, w).final_distribution;
    const auto prompt = encode_with_span(inst.two_hop_prompt, inst.mention, vocab);
    const auto two = forward(prompt.ids, w);
    const bool a = one.argmax() == e3 && one[e3] >= 0.9;
    const bool b = two.final_distribution.argmax() == e3 && two.final_distribution[e3] >= 0.8;
    one_ok += a;
    two_ok += b;
    bool lens_all = true;
    for (std::size_t l = 0; l < w.config.layers; ++l) {
      const auto lp = logit_lens(two.trace, l, *prompt.mention_final_index, w);
      const bool top = static_cast<std::size_t>(std::max_element(lp.begin(), lp.end()) - lp.begin()) == e2;
      lens_ok[l] += top;
      if (l >= first_hop_layer && l + 1 < w.config.layers) lens_all = lens_all && top;
    }
    if (failing && !(a && b && lens_all)) {
      failing->push_back(instance_label(inst, i) + (a ? "" : " [one-hop]") + (b ? "" : " [two-hop]") +
                         (lens_all ? "" : " [logit lens]"));
    }
  }
  const double n = static_cast<double>(instances.size());
  report.one_hop_accuracy = static_cast<double>(one_ok) / n;
  report.two_hop_accuracy = static_cast<double>(two_ok) / n;
  for (std::size_t l = 0; l < w.config.layers; ++l) report.lens_top1_rate[l] = static_cast<double>(lens_ok[l]) / n;
  return report;
}

struct ConstructedModel {
  ModelWeights weights;
  ConstructionReport report;
};

// Builds the positive control for `world` and certifies it on `instances`.
inline ConstructedModel constructed_two_hop_model(const FactWorld& world, const Vocabulary& vocab,
                                                  const ModelConfig& config,
                                                  const std::vector<TwoHopInstance>& instances,
                                                  const ConstructionConstants& k = {}) {
  try {
    world.validate();
  } catch (const InvariantViolation& e) {
    throw InvalidInput(std::string("constructed_two_hop_model: ") + e.what());
  }
  const std::size_t n_e = world.entities.size(), n_r = world.relations.size();
  require(n_e > 0 && n_r > 0, "constructed_two_hop_model: empty world");
  const zoo_detail::Layout lay(n_e, n_r);
  const ModelConfig needed = constructed_config(world, vocab, std::max<std::size_t>(config.layers, 4), config.max_seq, config.norm);
  require(config.layers >= 4, "constructed_two_hop_model: need at least 4 layers");
  require(config.hidden >= lay.width, "constructed_two_hop_model: hidden too small; use constructed_config");
  require(config.heads >= 2 && config.head_dim() >= std::max(n_e, n_r), "constructed_two_hop_model: heads too narrow");
  require(config.ff >= needed.ff, "constructed_two_hop_model: ff too small");
  require(config.vocab == vocab.size(), "constructed_two_hop_model: config vocab differs from vocabulary");

  // Atomic names and relation words.
  auto single_token = [&](const std::string& text, const char* what) {
    const auto pieces = split_pieces(text);
    require(pieces.size() == 1, std::string("constructed_two_hop_model: ") + what + " '" + text +
                                    "' is not a single token (construction needs atomic names)");
    require(vocab.contains(pieces.front().text),
            std::string("constructed_two_hop_model: ") + what + " '" + text + "' is missing from the vocabulary");
    return vocab.id_of(pieces.front().text);
  };
  std::vector<TokenId> entity_token(n_e), relation_token(n_r);
  for (const auto& e : world.entities) entity_token[e.id] = single_token(e.name, "entity");
  for (const auto& r : world.relations) relation_token[r.id] = single_token(r.name, "relation");
  for (const auto& inst : instances) {
    require(world.find_entity(inst.e1) && world.find_entity(inst.e2) && world.find_entity(inst.e3),
            "constructed_two_hop_model: instance entity outside the world: " + inst.e1);
    require(world.find_relation(inst.r1) && world.find_relation(inst.r2),
            "constructed_two_hop_model: instance relation outside the world: " + inst.r1 + "/" + inst.r2);
  }

  auto w = ModelWeights::zeros(config);
  const std::size_t h = config.hidden;
  const double A = k.anchor;
  const double nominal_rms = std::sqrt(2.0 * A * A / static_cast<double>(h));
  const std::size_t L = config.layers;
  const std::size_t dh = config.head_dim();
  const double qscale = std::sqrt(static_cast<double>(dh)) / A;  // query constant 1 after the 1/sqrt(dh) scaling

  // Embeddings.
  auto set_tok = [&](TokenId t, std::size_t dim) {
    if (t != Vocabulary::kUnk) w.tok_emb(t, dim) = 1.0;
  };
  for (std::size_t e = 0; e < n_e; ++e) {
    set_tok(entity_token[e], lay.ans + e);
    set_tok(entity_token[e], lay.ent);
  }
  for (std::size_t r = 0; r < n_r; ++r) {
    set_tok(relation_token[r], lay.tokrel + r);
    set_tok(relation_token[r], lay.is_rel);
  }
  set_tok(vocab.id_of("The"), lay.art_cap);
  set_tok(vocab.id_of("the"), lay.art_low);
  set_tok(vocab.id_of("a"), lay.art_low);
  set_tok(vocab.id_of("is"), lay.q);
  set_tok(vocab.id_of(","), lay.comma);
  for (std::size_t p = 0; p < config.max_seq; ++p) {
    w.pos_emb(p, lay.anchor_pos) = A;
    w.pos_emb(p, lay.anchor_neg) = -A;
    w.pos_emb(p, lay.pos) = static_cast<double>(p) / static_cast<double>(config.max_seq);
  }
  zoo_detail::compensate_rows(w.tok_emb, lay.sink);
  zoo_detail::compensate_rows(w.pos_emb, lay.sink);

  for (auto& l : w.layers) {
    l.ln1_gain.assign(h, nominal_rms);
    l.ln2_gain.assign(h, nominal_rms);
  }
  w.final_gain.assign(h, nominal_rms);

  const double recency = k.recency * static_cast<double>(config.max_seq);  // per unit of POS
  // Head `head` in layer `lw`: score = sum of key features, value copies src[i] into dst[i].
  auto wire_head = [&](LayerWeights& lw, std::size_t head, const std::vector<std::pair<std::size_t, double>>& key,
                       std::size_t src, std::size_t dst, std::size_t count) {
    const std::size_t off = head * dh;
    lw.wq(lay.anchor_pos, off) = qscale;
    for (auto [dim, weight] : key) lw.wk(dim, off) = weight;
    for (std::size_t i = 0; i < count; ++i) {
      lw.wv(src + i, off + i) = 1.0;
      lw.wo(off + i, dst + i) = 1.0;
    }
  };

  const std::size_t l_art = L - 4, l_hop1 = L - 3, l_hop2 = L - 2, l_copy = L - 1;

  // Most recent article: both cases share one key feature, values carry the case.
  {
    auto& lw = w.layers[l_art];
    const std::size_t off = 0;
    lw.wq(lay.anchor_pos, off) = qscale;
    lw.wk(lay.art_cap, off) = k.article_bias;
    lw.wk(lay.art_low, off) = k.article_bias;
    lw.wk(lay.pos, off) = recency;
    lw.wv(lay.art_cap, off + 1) = 1.0;
    lw.wv(lay.art_low, off + 2) = 1.0;
    lw.wo(off + 1, lay.cap_ctx) = 1.0;
    lw.wo(off + 2, lay.low_ctx) = 1.0;
  }

  // First hop.
  {
    auto& lw = w.layers[l_hop1];
    wire_head(lw, 0, {{lay.is_rel, k.article_bias}, {lay.pos, recency}}, lay.tokrel, lay.rel_m, n_r);
    std::size_t unit = 0;
    for (std::size_t r = 0; r < n_r; ++r) {
      for (auto [s, o] : world.facts[r]) {
        lw.w_in(lay.rel_m + r, unit) = k.unit_gain;
        lw.w_in(lay.ans + s, unit) = k.unit_gain;
        lw.w_in(lay.low_ctx, unit) = k.unit_gain;
        lw.b_in[unit] = -k.hop1_threshold * k.unit_gain;
        const double full = (3.0 - k.hop1_threshold) * k.unit_gain;
        lw.w_out(unit, lay.ans + o) += k.hop1_write / full;
        lw.w_out(unit, lay.ans + s) -= 1.0 / full;
        ++unit;
      }
    }
  }

  // Bridge gather, prompt relation, second hop.
  {
    auto& lw = w.layers[l_hop2];
    wire_head(lw, 0, {{lay.ent, k.entity_bias}}, lay.ans, lay.bridge, n_e);
    wire_head(lw, 1, {{lay.is_rel, k.article_bias}, {lay.cap_ctx, k.article_bias}, {lay.pos, recency}}, lay.tokrel,
              lay.rel_p, n_r);
    std::size_t unit = 0;
    for (std::size_t r = 0; r < n_r; ++r) {
      for (auto [s, o] : world.facts[r]) {
        lw.w_in(lay.rel_p + r, unit) = k.unit_gain;
        lw.w_in(lay.bridge + s, unit) = k.unit_gain;
        lw.w_in(lay.q, unit) = k.unit_gain;
        lw.b_in[unit] = -k.hop2_threshold * k.unit_gain;
        lw.w_out(unit, lay.ans + o) = k.hop2_write / ((3.0 - k.hop2_threshold) * k.unit_gain);
        ++unit;
      }
    }
  }

  // Bridge gather again, copy to the answer after a comma.
  {
    auto& lw = w.layers[l_copy];
    wire_head(lw, 0, {{lay.ent, k.entity_bias}}, lay.ans, lay.bridge, n_e);
    for (std::size_t e = 0; e < n_e; ++e) {
      lw.w_in(lay.bridge + e, e) = k.unit_gain;
      lw.w_in(lay.comma, e) = 2.0 * k.unit_gain;
      lw.b_in[e] = -k.copy_threshold * k.unit_gain;
      lw.w_out(e, lay.ans + e) = k.copy_write / k.unit_gain;
    }
  }

  for (auto& lw : w.layers) {
    zoo_detail::compensate_rows(lw.wo, lay.sink);
    zoo_detail::compensate_rows(lw.w_out, lay.sink);
  }
  for (std::size_t e = 0; e < n_e; ++e) w.unembed(lay.ans + e, entity_token[e]) = k.unembed_scale;

  ConstructedModel out;
  out.weights = std::move(w);
  std::vector<std::string> failing;
  out.report = certify_construction(out.weights, vocab, instances, l_hop1, &failing);
  if (!failing.empty()) {
    throw ConstructionError("constructed_two_hop_model: contract not met on " + std::to_string(failing.size()) +
                                " instance(s); first: " + failing.front(),
                            failing);
  }
  return out;
}

}  // namespace twohop
