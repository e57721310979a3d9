#pragma once

// Gradient-direction activation patching: x~(a) = x^l[idx] + a * grad EntRec,
// and the sign of d/da of a target score at a = 0, estimated by central
// differences with step halving until two successive estimates agree in sign.

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "twohop/errors.hpp"
#include "twohop/metrics.hpp"
#include "twohop/model.hpp"
#include "twohop/tensor_ops.hpp"

namespace twohop {

enum class TargetKind { consistency, answer_logprob, appositive_prob };

inline std::string to_string(TargetKind k) {
  switch (k) {
    case TargetKind::consistency: return "consistency";
    case TargetKind::answer_logprob: return "answer_logprob";
    case TargetKind::appositive_prob: return "appositive_prob";
  }
  return "unknown";
}

inline TargetKind parse_target_kind(std::string_view s) {
  if (s == "consistency") return TargetKind::consistency;
  if (s == "answer_logprob") return TargetKind::answer_logprob;
  if (s == "appositive_prob") return TargetKind::appositive_prob;
  throw InvalidInput("unknown target kind '" + std::string(s) + "'");
}

class InterventionTarget {
 public:
  static InterventionTarget consistency(ProbabilityDistribution one_hop) {
    InterventionTarget t(TargetKind::consistency);
    t.reference_ = std::move(one_hop);
    return t;
  }
  static InterventionTarget answer_logprob(TokenId answer) {
    InterventionTarget t(TargetKind::answer_logprob);
    t.token_ = answer;
    return t;
  }
  // Probability of `bridge` as the next token; the tokens being patched end with a comma.
  static InterventionTarget appositive_prob(TokenId bridge) {
    InterventionTarget t(TargetKind::appositive_prob);
    t.token_ = bridge;
    return t;
  }

  TargetKind kind() const { return kind_; }
  const std::optional<ProbabilityDistribution>& reference() const { return reference_; }
  const std::optional<TokenId>& token() const { return token_; }

  double score(const ProbabilityDistribution& p) const {
    switch (kind_) {
      case TargetKind::consistency: return cnst_score(p, *reference_);
      case TargetKind::answer_logprob: return twohop::answer_logprob(p, *token_);
      case TargetKind::appositive_prob:
        require(*token_ < p.size(), "appositive target: token out of range");
        return p[*token_];
    }
    throw InvariantViolation("InterventionTarget: unknown kind");
  }

 private:
  explicit InterventionTarget(TargetKind k) : kind_(k) {}
  TargetKind kind_;
  std::optional<ProbabilityDistribution> reference_;
  std::optional<TokenId> token_;
};

inline void check_intervention_layer(const ModelConfig& cfg, std::size_t layer, const InterventionTarget& target) {
  require(layer < cfg.layers, "intervention: layer out of range");
  if (target.kind() != TargetKind::appositive_prob) {
    require(layer + 1 < cfg.layers,
            "intervention: patching the last layer at the mention cannot change the final distribution; "
            "report that layer with the 0.5 convention instead");
  }
}

// Score of the final distribution after replacing x^layer[idx] with x^layer[idx] + alpha * g.
inline double patched_target_score(const ModelWeights& w, const ForwardTrace& base, std::size_t layer,
                                   std::size_t mention_final_index, const Vector& g, double alpha,
                                   const InterventionTarget& target) {
  check_intervention_layer(w.config, layer, target);
  require(g.size() == w.config.hidden, "intervention: gradient has wrong width");
  const auto x = base.x(layer, mention_final_index);
  PatchSpec patch{layer, mention_final_index, Vector(x.begin(), x.end())};
  for (std::size_t i = 0; i < g.size(); ++i) patch.replacement[i] += alpha * g[i];
  return target.score(forward_patched(base, w, patch));
}

inline double patched_target_score(const ModelWeights& w, const std::vector<TokenId>& tokens, std::size_t layer,
                                   std::size_t mention_final_index, const Vector& g, double alpha,
                                   const InterventionTarget& target) {
  detail::check_tokens(tokens, w.config);
  return patched_target_score(w, forward(tokens, w).trace, layer, mention_final_index, g, alpha, target);
}

struct DerivativeOptions {
  double eps_rel = 1e-3;
  double norm_floor = 1e-12;
  double tie_tolerance = 1e-12;
  int max_halvings = 4;
};

struct DerivativeEstimate {
  double value = 0.0;
  double epsilon = 0.0;
  std::string method = "central_difference";
  bool positive = false;
  bool unstable = false;
  bool zero_gradient = false;
  int halvings = 0;
};

// Central-difference derivative of `score` at 0 starting from step `epsilon`.
inline DerivativeEstimate derivative_at_zero(const std::function<double(double)>& score, double epsilon,
                                             const DerivativeOptions& opt = {}) {
  require(std::isfinite(epsilon) && epsilon > 0.0, "derivative_at_zero: step must be positive and finite");
  auto central = [&](double e) { return (score(e) - score(-e)) / (2.0 * e); };
  auto sign_class = [&](double d) { return d > opt.tie_tolerance; };

  DerivativeEstimate est;
  double eps = epsilon;
  double coarse = central(eps);
  for (int halving = 0;; ++halving) {
    const double fine = central(eps / 2.0);
    est.value = fine;
    est.epsilon = eps / 2.0;
    est.halvings = halving;
    if (sign_class(coarse) == sign_class(fine)) break;
    if (halving == opt.max_halvings) {
      est.unstable = true;
      break;
    }
    eps /= 2.0;
    coarse = fine;
  }
  require(std::isfinite(est.value), "derivative_at_zero: non-finite score difference");
  est.positive = !est.unstable && sign_class(est.value);
  return est;
}

// d/da target(x^layer[idx] + a g) at a = 0 with step eps_rel * |x| / max(|g|, floor).
inline DerivativeEstimate derivative_at_zero(const ModelWeights& w, const ForwardTrace& base, std::size_t layer,
                                             std::size_t mention_final_index, const Vector& g,
                                             const InterventionTarget& target, const DerivativeOptions& opt = {}) {
  check_intervention_layer(w.config, layer, target);
  const double g_norm = l2_norm(g);
  if (g_norm == 0.0) {
    DerivativeEstimate est;
    est.zero_gradient = true;
    return est;
  }
  const double x_norm = l2_norm(base.x(layer, mention_final_index));
  const double eps = opt.eps_rel * std::max(x_norm, opt.norm_floor) / std::max(g_norm, opt.norm_floor);
  return derivative_at_zero(
      [&](double alpha) { return patched_target_score(w, base, layer, mention_final_index, g, alpha, target); }, eps,
      opt);
}

inline DerivativeEstimate derivative_at_zero(const ModelWeights& w, const std::vector<TokenId>& tokens,
                                             std::size_t layer, std::size_t mention_final_index, const Vector& g,
                                             const InterventionTarget& target, const DerivativeOptions& opt = {}) {
  detail::check_tokens(tokens, w.config);
  return derivative_at_zero(w, forward(tokens, w).trace, layer, mention_final_index, g, target, opt);
}

}  // namespace twohop
