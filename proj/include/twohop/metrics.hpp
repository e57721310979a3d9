#pragma once

// Entity recall and consistency scores.
//
//   EntRec^l  = log softmax(final_norm(x^l[mention_final]) . W_U)[e2 first token]
//   CnstScore = -0.5 H(p2h, p1h) - 0.5 H(p1h, p2h),  H(Q, P) = -sum P log Q

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "twohop/errors.hpp"
#include "twohop/model.hpp"
#include "twohop/tensor_ops.hpp"
#include "twohop/tokenizer.hpp"

namespace twohop {

struct EntRecQuery {
  std::size_t layer = 0;
  std::size_t mention_final_index = 0;
  TokenId target = 0;
};

struct ScorePair {
  double entrec = 0.0;
  double cnst = 0.0;
};

// log softmax(final_norm(x) . W_U)[target] for a bare residual vector.
inline double entrec_of_vector(std::span<const double> x, TokenId target, const ModelWeights& w) {
  require(target < w.config.vocab, "entrec: target token out of range");
  return log_softmax(project_logits(w, x))[target];
}

inline double entrec(const ForwardTrace& trace, const ModelWeights& w, const EntRecQuery& q) {
  require(q.layer < trace.residual.size(), "entrec: layer out of range");
  require(q.mention_final_index < trace.seq_len(), "entrec: mention index out of range");
  return entrec_of_vector(trace.x(q.layer, q.mention_final_index), q.target, w);
}

// Exact gradient of entrec_of_vector with respect to x.
inline Vector entrec_gradient(std::span<const double> x, TokenId target, const ModelWeights& w) {
  const auto& cfg = w.config;
  require(x.size() == cfg.hidden, "entrec_gradient: hidden size mismatch");
  require(all_finite(x), "entrec_gradient: non-finite input");
  require(target < cfg.vocab, "entrec_gradient: target token out of range");
  const std::size_t h = cfg.hidden;
  const double hd = static_cast<double>(h);

  const auto p = softmax(project_logits(w, x));
  Vector delta(cfg.vocab);
  for (std::size_t j = 0; j < cfg.vocab; ++j) delta[j] = (j == target ? 1.0 : 0.0) - p[j];
  const Vector v = mat_vec(w.unembed, delta);  // dEntRec / d(normed x)

  Vector u(h);
  for (std::size_t i = 0; i < h; ++i) u[i] = w.final_gain[i] * v[i];

  Vector g(h);
  if (cfg.norm == NormKind::layernorm) {
    double mean = 0.0;
    for (double xi : x) mean += xi;
    mean /= hd;
    double var = 0.0;
    for (double xi : x) var += (xi - mean) * (xi - mean);
    var /= hd;
    const double sigma = std::sqrt(var + ModelConfig::kNormEps);
    Vector xhat(h);
    for (std::size_t i = 0; i < h; ++i) xhat[i] = (x[i] - mean) / sigma;
    double u_mean = 0.0, ux_mean = 0.0;
    for (std::size_t i = 0; i < h; ++i) {
      u_mean += u[i];
      ux_mean += u[i] * xhat[i];
    }
    u_mean /= hd;
    ux_mean /= hd;
    for (std::size_t i = 0; i < h; ++i) g[i] = (u[i] - u_mean - xhat[i] * ux_mean) / sigma;
  } else {
    double ms = 0.0;
    for (double xi : x) ms += xi * xi;
    ms /= hd;
    const double r2 = ms + ModelConfig::kNormEps;
    const double r = std::sqrt(r2);
    double ux = 0.0;
    for (std::size_t i = 0; i < h; ++i) ux += u[i] * x[i];
    for (std::size_t i = 0; i < h; ++i) g[i] = (u[i] - x[i] * ux / (hd * r2)) / r;
  }
  return g;
}

inline double cnst_score(const ProbabilityDistribution& p2h, const ProbabilityDistribution& p1h) {
  require(p2h.size() == p1h.size(), "cnst_score: length mismatch");
  return -0.5 * cross_entropy(p2h, p1h) - 0.5 * cross_entropy(p1h, p2h);
}

inline double answer_logprob(const ProbabilityDistribution& p, TokenId answer) {
  require(answer < p.size(), "answer_logprob: token out of range");
  return std::log(std::max(p[answer], kLogFloor));
}

// Greedy argmax equals the first token of some alias. Aliases starting with an
// unknown token never match; their text is appended to `unmatched` when given.
inline bool one_hop_correct(const ProbabilityDistribution& one_hop, const std::vector<std::string>& aliases,
                            const Vocabulary& vocab, std::vector<std::string>* unmatched = nullptr) {
  require(!aliases.empty(), "one_hop_correct: instance has no answer aliases");
  const auto top = one_hop.argmax();
  bool hit = false;
  for (const auto& alias : aliases) {
    const auto pieces = split_pieces(alias);
    const TokenId id = pieces.empty() ? Vocabulary::kUnk : vocab.id_of(pieces.front().text);
    if (id == Vocabulary::kUnk) {
      if (unmatched) unmatched->push_back(alias);
      continue;
    }
    if (id == top) hit = true;
  }
  return hit;
}

}  // namespace twohop
