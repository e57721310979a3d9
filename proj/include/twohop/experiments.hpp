#pragma once

// Experiment runners. Each runner draws its counterfactuals sequentially from
// the seeded generator, evaluates instances in parallel into per-index slots,
// then aggregates in index order, so output is independent of thread count.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "twohop/dataset.hpp"
#include "twohop/errors.hpp"
#include "twohop/intervention.hpp"
#include "twohop/metrics.hpp"
#include "twohop/model.hpp"
#include "twohop/tokenizer.hpp"

namespace twohop {

// ---------------------------------------------------------------------------
// Tables

struct BinomialSummary {
  double p_value = 1.0;
  double ci_low = 0.0;
  double ci_high = 1.0;
};

inline constexpr double kWilsonZ = 1.959963984540054;

// Exact two-sided binomial test against 0.5 and the Wilson 95% interval.
inline BinomialSummary binomial_confidence(std::size_t k, std::size_t n) {
  require(n >= 1, "binomial_confidence: n must be at least 1");
  require(k <= n, "binomial_confidence: k exceeds n");
  const double nd = static_cast<double>(n);
  auto log_pmf = [&](std::size_t i) {
    const double id = static_cast<double>(i);
    return std::lgamma(nd + 1.0) - std::lgamma(id + 1.0) - std::lgamma(nd - id + 1.0) - nd * std::log(2.0);
  };
  const double observed = log_pmf(k);
  double p = 0.0;
  for (std::size_t i = 0; i <= n; ++i) {
    const double lp = log_pmf(i);
    if (lp <= observed + 1e-7) p += std::exp(lp);
  }
  BinomialSummary s;
  s.p_value = std::min(1.0, p);
  const double phat = static_cast<double>(k) / nd;
  const double z2 = kWilsonZ * kWilsonZ;
  const double denom = 1.0 + z2 / nd;
  const double center = (phat + z2 / (2.0 * nd)) / denom;
  const double half = kWilsonZ * std::sqrt(phat * (1.0 - phat) / nd + z2 / (4.0 * nd * nd)) / denom;
  s.ci_low = k == 0 ? 0.0 : std::max(0.0, center - half);
  s.ci_high = k == n ? 1.0 : std::min(1.0, center + half);
  return s;
}

struct LayerRow {
  std::size_t layer = 0;
  std::size_t n = 0;
  std::size_t k = 0;
  double frequency = 0.0;
  double p_value = 1.0;
  double ci_low = 0.0;
  double ci_high = 1.0;
  bool synthetic = false;
  bool operator==(const LayerRow&) const = default;
};

struct LayerFrequencyTable {
  std::vector<LayerRow> rows;

  const LayerRow& at(std::size_t layer) const {
    for (const auto& r : rows)
      if (r.layer == layer) return r;
    throw InvalidInput("LayerFrequencyTable: no row for layer " + std::to_string(layer));
  }
  bool operator==(const LayerFrequencyTable&) const = default;
};

inline LayerRow make_row(std::size_t layer, std::size_t n, std::size_t k) {
  LayerRow r;
  r.layer = layer;
  r.n = n;
  r.k = k;
  if (n > 0) {
    r.frequency = static_cast<double>(k) / static_cast<double>(n);
    const auto s = binomial_confidence(k, n);
    r.p_value = s.p_value;
    r.ci_low = s.ci_low;
    r.ci_high = s.ci_high;
  }
  return r;
}

// Reporting convention for a layer the intervention cannot reach: frequency 0.5, no trials.
inline LayerRow synthetic_row(std::size_t layer, double frequency = 0.5) {
  LayerRow r;
  r.layer = layer;
  r.frequency = frequency;
  r.synthetic = true;
  return r;
}

struct OutcomeRow {
  std::size_t layer = 0;
  std::size_t n = 0;
  double ss = 0.0, fs = 0.0, sf = 0.0, ff = 0.0;
  bool synthetic = false;
  bool operator==(const OutcomeRow&) const = default;
};

struct OutcomeTable {
  std::vector<OutcomeRow> rows;

  const OutcomeRow& at(std::size_t layer) const {
    for (const auto& r : rows)
      if (r.layer == layer) return r;
    throw InvalidInput("OutcomeTable: no row for layer " + std::to_string(layer));
  }
  bool operator==(const OutcomeTable&) const = default;
};

template <typename Table>
struct TypeEntry {
  std::string type;
  std::size_t instances = 0;
  Table table;
  double max_frequency = 0.0;  // over non-synthetic rows
  bool strong_evidence = false;
  bool operator==(const TypeEntry&) const = default;
};

template <typename Table>
struct TypeBreakdown {
  double threshold = 0.8;
  std::vector<TypeEntry<Table>> types;  // sorted by type name
  bool operator==(const TypeBreakdown&) const = default;
};

struct ExperimentOptions {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  SubstitutionKind substitution = SubstitutionKind::entity;
  TargetKind target = TargetKind::consistency;
  DerivativeOptions derivative{};
  double single_threshold = 0.8;
  double joint_threshold = 0.64;
};

struct FrequencyResult {
  LayerFrequencyTable table;
  TypeBreakdown<LayerFrequencyTable> breakdown;
  std::vector<std::string> log;
};

struct OutcomeResult {
  OutcomeTable table;
  TypeBreakdown<OutcomeTable> breakdown;
  std::vector<std::string> log;
};

// ---------------------------------------------------------------------------
// Parallel helper

// Calls fn(i) for i in [0, n) on up to `threads` workers; rethrows the first failure.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next.store(n);
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// Instance preparation

struct PreparedInstance {
  std::size_t index = 0;
  TokenizedPrompt two_hop;
  std::vector<TokenId> one_hop;
  TokenId bridge = 0;  // first token of e2
  TokenId answer = 0;  // first token of e3
  std::string skip_reason;
  bool ok() const { return skip_reason.empty(); }
};

inline PreparedInstance prepare_instance(const TwoHopInstance& inst, std::size_t index, const Vocabulary& vocab,
                                         const ModelConfig& cfg) {
  PreparedInstance p;
  p.index = index;
  try {
    if (auto problem = instance_problem(inst)) throw InvalidInput(*problem);
    p.two_hop = encode_with_span(inst.two_hop_prompt, inst.mention, vocab);
    p.one_hop = encode(inst.one_hop_prompt, vocab).ids;
    p.bridge = first_token_of(inst.e2, vocab);
    p.answer = first_token_of(inst.e3, vocab);
    require(p.two_hop.ids.size() <= cfg.max_seq && p.one_hop.size() <= cfg.max_seq, "prompt longer than max_seq");
    require(vocab.size() <= cfg.vocab, "vocabulary larger than the model's");
  } catch (const InvalidInput& e) {
    p.skip_reason = e.what();
  }
  return p;
}

namespace detail {

inline std::vector<std::size_t> eligible_layers(const ModelConfig& cfg) {
  std::vector<std::size_t> out;
  for (std::size_t l = 0; l + 1 < cfg.layers; ++l) out.push_back(l);
  return out;
}

// Per-instance success flags (one per layer, or nullopt if the layer was not evaluated).
using LayerOutcomes = std::vector<std::optional<bool>>;

inline LayerFrequencyTable tabulate(const std::vector<const LayerOutcomes*>& outcomes, std::size_t layers,
                                    bool last_layer_synthetic) {
  LayerFrequencyTable t;
  for (std::size_t l = 0; l < layers; ++l) {
    if (last_layer_synthetic && l + 1 == layers) {
      t.rows.push_back(synthetic_row(l));
      continue;
    }
    std::size_t n = 0, k = 0;
    for (const auto* o : outcomes) {
      if (!(*o)[l].has_value()) continue;
      ++n;
      if (*(*o)[l]) ++k;
    }
    t.rows.push_back(make_row(l, n, k));
  }
  return t;
}

inline double max_real_frequency(const LayerFrequencyTable& t) {
  double best = 0.0;
  for (const auto& r : t.rows)
    if (!r.synthetic && r.n > 0) best = std::max(best, r.frequency);
  return best;
}

inline FrequencyResult summarize(const std::vector<TwoHopInstance>& instances, const std::vector<LayerOutcomes>& outcomes,
                                 const std::vector<bool>& evaluated, std::size_t layers, bool last_layer_synthetic,
                                 double threshold) {
  FrequencyResult result;
  std::vector<const LayerOutcomes*> all;
  std::map<std::string, std::vector<const LayerOutcomes*>> by_type;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (!evaluated[i]) continue;
    all.push_back(&outcomes[i]);
    by_type[instances[i].fact_composition_type].push_back(&outcomes[i]);
  }
  result.breakdown.threshold = threshold;
  if (all.empty()) return result;  // nothing evaluated: empty table
  result.table = tabulate(all, layers, last_layer_synthetic);
  for (const auto& [type, list] : by_type) {
    TypeEntry<LayerFrequencyTable> e;
    e.type = type;
    e.instances = list.size();
    e.table = tabulate(list, layers, last_layer_synthetic);
    e.max_frequency = max_real_frequency(e.table);
    e.strong_evidence = e.max_frequency >= threshold;
    result.breakdown.types.push_back(std::move(e));
  }
  return result;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Counterfactual draws (sequential, seeded)

inline std::vector<std::optional<SubstitutionSpec>> draw_counterfactuals(const std::vector<TwoHopInstance>& instances,
                                                                         SubstitutionKind kind,
                                                                         const CandidateTable* candidates, Rng& rng,
                                                                         std::vector<std::string>& log) {
  TypeIndex index(instances);
  std::vector<std::optional<SubstitutionSpec>> out(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    try {
      if (kind == SubstitutionKind::entity) {
        std::vector<const TwoHopInstance*> pool;
        for (std::size_t j : index.pool(instances[i].fact_composition_type))
          if (j != i) pool.push_back(&instances[j]);
        out[i] = sample_entity_substitution(instances[i], pool, rng);
      } else {
        require(candidates != nullptr, "relation substitution needs a candidate table");
        out[i] = sample_relation_substitution(instances[i], *candidates, rng);
      }
    } catch (const InvalidInput& e) {
      log.push_back(instance_label(instances[i], i) + " skipped: " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// RQ1: does the mention-final state recall e2 better than under a counterfactual mention?

namespace detail {

struct Rq1Evaluation {
  std::vector<LayerOutcomes> outcomes;
  std::vector<bool> evaluated;
};

inline Rq1Evaluation evaluate_rq1(const ModelWeights& w, const Vocabulary& vocab,
                                  const std::vector<TwoHopInstance>& instances,
                                  const std::vector<std::optional<SubstitutionSpec>>& counterfactuals,
                                  std::size_t threads, std::vector<std::string>& log) {
  require(counterfactuals.size() == instances.size(), "run_rq1: one counterfactual slot per instance");
  const std::size_t layers = w.config.layers;
  Rq1Evaluation ev;
  ev.outcomes.assign(instances.size(), LayerOutcomes(layers));
  ev.evaluated.assign(instances.size(), false);
  std::vector<std::string> reasons(instances.size());
  parallel_for(instances.size(), threads, [&](std::size_t i) {
    if (!counterfactuals[i]) return;
    const auto prep = prepare_instance(instances[i], i, vocab, w.config);
    if (!prep.ok()) {
      reasons[i] = prep.skip_reason;
      return;
    }
    TokenizedPrompt alt;
    try {
      alt = encode_with_span(counterfactuals[i]->prompt, counterfactuals[i]->mention, vocab);
      require(alt.ids.size() <= w.config.max_seq, "counterfactual prompt longer than max_seq");
    } catch (const InvalidInput& e) {
      reasons[i] = std::string("counterfactual: ") + e.what();
      return;
    }
    const auto base = forward(prep.two_hop.ids, w).trace;
    const auto cf = forward(alt.ids, w).trace;
    for (std::size_t l = 0; l < layers; ++l) {
      const double original = entrec(base, w, {l, *prep.two_hop.mention_final_index, prep.bridge});
      const double substituted = entrec(cf, w, {l, *alt.mention_final_index, prep.bridge});
      ev.outcomes[i][l] = original > substituted;
    }
    ev.evaluated[i] = true;
  });
  for (std::size_t i = 0; i < instances.size(); ++i)
    if (!reasons[i].empty()) log.push_back(instance_label(instances[i], i) + " skipped: " + reasons[i]);
  return ev;
}

}  // namespace detail

// Counterfactuals supplied by the caller; slots left empty are skipped.
inline FrequencyResult run_rq1_with(const ModelWeights& w, const Vocabulary& vocab,
                                    const std::vector<TwoHopInstance>& instances,
                                    const std::vector<std::optional<SubstitutionSpec>>& counterfactuals,
                                    const ExperimentOptions& opt = {}) {
  std::vector<std::string> log;
  const auto ev = detail::evaluate_rq1(w, vocab, instances, counterfactuals, opt.threads, log);
  auto result = detail::summarize(instances, ev.outcomes, ev.evaluated, w.config.layers, false, opt.single_threshold);
  result.log = std::move(log);
  return result;
}

inline FrequencyResult run_rq1(const ModelWeights& w, const Vocabulary& vocab,
                               const std::vector<TwoHopInstance>& instances, const CandidateTable* candidates,
                               const ExperimentOptions& opt = {}) {
  Rng rng(opt.seed);
  std::vector<std::string> log;
  const auto cfs = draw_counterfactuals(instances, opt.substitution, candidates, rng, log);
  auto result = run_rq1_with(w, vocab, instances, cfs, opt);
  log.insert(log.end(), result.log.begin(), result.log.end());
  result.log = std::move(log);
  return result;
}

// ---------------------------------------------------------------------------
// RQ2: does increasing recall of e2 at the mention increase the target score?

namespace detail {

struct Rq2Evaluation {
  std::vector<LayerOutcomes> outcomes;
  std::vector<bool> evaluated;
};

inline Rq2Evaluation evaluate_rq2(const ModelWeights& w, const Vocabulary& vocab,
                                  const std::vector<TwoHopInstance>& instances, const ExperimentOptions& opt,
                                  std::vector<std::string>& log) {
  require(opt.target == TargetKind::consistency || opt.target == TargetKind::answer_logprob,
          "run_rq2: target must be consistency or answer_logprob");
  const std::size_t layers = w.config.layers;
  Rq2Evaluation ev;
  ev.outcomes.assign(instances.size(), LayerOutcomes(layers));
  ev.evaluated.assign(instances.size(), false);
  std::vector<std::string> reasons(instances.size());
  std::vector<std::size_t> unstable(instances.size(), 0);
  parallel_for(instances.size(), opt.threads, [&](std::size_t i) {
    const auto prep = prepare_instance(instances[i], i, vocab, w.config);
    if (!prep.ok()) {
      reasons[i] = prep.skip_reason;
      return;
    }
    const auto base = forward(prep.two_hop.ids, w).trace;
    const auto target = opt.target == TargetKind::consistency
                            ? InterventionTarget::consistency(forward(prep.one_hop, w).final_distribution)
                            : InterventionTarget::answer_logprob(prep.answer);
    const std::size_t idx = *prep.two_hop.mention_final_index;
    for (std::size_t l : eligible_layers(w.config)) {
      const Vector g = entrec_gradient(base.x(l, idx), prep.bridge, w);
      const auto est = derivative_at_zero(w, base, l, idx, g, target, opt.derivative);
      if (est.unstable || est.zero_gradient) ++unstable[i];
      ev.outcomes[i][l] = est.positive;
    }
    ev.evaluated[i] = true;
  });
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (!reasons[i].empty()) log.push_back(instance_label(instances[i], i) + " skipped: " + reasons[i]);
    if (unstable[i] > 0)
      log.push_back(instance_label(instances[i], i) + ": " + std::to_string(unstable[i]) +
                    " unstable or zero-gradient derivative estimate(s) counted as failures");
  }
  return ev;
}

}  // namespace detail

inline FrequencyResult run_rq2(const ModelWeights& w, const Vocabulary& vocab,
                               const std::vector<TwoHopInstance>& instances, const ExperimentOptions& opt = {}) {
  std::vector<std::string> log;
  const auto ev = detail::evaluate_rq2(w, vocab, instances, opt, log);
  auto result = detail::summarize(instances, ev.outcomes, ev.evaluated, w.config.layers, true, opt.single_threshold);
  result.log = std::move(log);
  return result;
}

// ---------------------------------------------------------------------------
// RQ1 and RQ2 jointly: SS, FS, SF, FF per layer (first letter RQ1, second RQ2).

namespace detail {

inline OutcomeTable tabulate_outcomes(const std::vector<std::size_t>& members, const std::vector<LayerOutcomes>& rq1,
                                      const std::vector<LayerOutcomes>& rq2, std::size_t layers) {
  OutcomeTable t;
  for (std::size_t l = 0; l < layers; ++l) {
    OutcomeRow row;
    row.layer = l;
    if (l + 1 == layers) {
      std::size_t n = 0, k = 0;
      for (std::size_t i : members) {
        ++n;
        if (*rq1[i][l]) ++k;
      }
      const double f1 = n ? static_cast<double>(k) / static_cast<double>(n) : 0.0;
      row.ss = row.sf = 0.5 * f1;
      row.fs = row.ff = 0.5 * (1.0 - f1);
      row.synthetic = true;
      t.rows.push_back(row);
      continue;
    }
    std::size_t ss = 0, fs = 0, sf = 0, ff = 0;
    for (std::size_t i : members) {
      const bool a = *rq1[i][l], b = *rq2[i][l];
      (a ? (b ? ss : sf) : (b ? fs : ff))++;
    }
    row.n = members.size();
    if (row.n > 0) {
      const double n = static_cast<double>(row.n);
      row.ss = static_cast<double>(ss) / n;
      row.fs = static_cast<double>(fs) / n;
      row.sf = static_cast<double>(sf) / n;
      row.ff = static_cast<double>(ff) / n;
    }
    t.rows.push_back(row);
  }
  return t;
}

}  // namespace detail

inline OutcomeResult run_rq12(const ModelWeights& w, const Vocabulary& vocab,
                              const std::vector<TwoHopInstance>& instances, const CandidateTable* candidates,
                              const ExperimentOptions& opt = {}) {
  OutcomeResult result;
  Rng rng(opt.seed);
  const auto cfs = draw_counterfactuals(instances, opt.substitution, candidates, rng, result.log);
  const auto ev1 = detail::evaluate_rq1(w, vocab, instances, cfs, opt.threads, result.log);
  const auto ev2 = detail::evaluate_rq2(w, vocab, instances, opt, result.log);
  const std::size_t layers = w.config.layers;

  std::vector<std::size_t> members;
  std::map<std::string, std::vector<std::size_t>> by_type;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (!ev1.evaluated[i] || !ev2.evaluated[i]) continue;
    members.push_back(i);
    by_type[instances[i].fact_composition_type].push_back(i);
  }
  result.breakdown.threshold = opt.joint_threshold;
  if (members.empty()) return result;
  result.table = detail::tabulate_outcomes(members, ev1.outcomes, ev2.outcomes, layers);
  for (const auto& [type, list] : by_type) {
    TypeEntry<OutcomeTable> e;
    e.type = type;
    e.instances = list.size();
    e.table = detail::tabulate_outcomes(list, ev1.outcomes, ev2.outcomes, layers);
    for (const auto& r : e.table.rows)
      if (!r.synthetic && r.n > 0) e.max_frequency = std::max(e.max_frequency, r.ss);
    e.strong_evidence = e.max_frequency >= opt.joint_threshold;
    result.breakdown.types.push_back(std::move(e));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Appositive generation: does increasing recall of e2 raise P(e2 | prefix through mention + ",")?

// Mentions ending in these characters cannot take an appended comma cleanly.
inline bool appositive_excluded(std::string_view mention) {
  if (mention.empty()) return true;
  static constexpr std::string_view kExcluded = "?.!,'\")";
  return kExcluded.find(mention.back()) != std::string_view::npos;
}

inline std::string appositive_prompt(const TwoHopInstance& inst) {
  return inst.two_hop_prompt.substr(0, inst.mention.end) + ",";
}

inline FrequencyResult run_appositive(const ModelWeights& w, const Vocabulary& vocab,
                                      const std::vector<TwoHopInstance>& instances,
                                      const ExperimentOptions& opt = {}) {
  const std::size_t layers = w.config.layers;
  std::vector<detail::LayerOutcomes> outcomes(instances.size(), detail::LayerOutcomes(layers));
  std::vector<bool> evaluated(instances.size(), false);
  std::vector<std::string> reasons(instances.size());
  std::vector<std::size_t> unstable(instances.size(), 0);
  parallel_for(instances.size(), opt.threads, [&](std::size_t i) {
    const auto& inst = instances[i];
    if (auto problem = instance_problem(inst)) {
      reasons[i] = *problem;
      return;
    }
    if (appositive_excluded(inst.mention_text())) {
      reasons[i] = "mention ends with punctuation that blocks an appended comma";
      return;
    }
    TokenizedPrompt tokens;
    TokenId bridge = 0;
    try {
      const std::string text = appositive_prompt(inst);
      tokens = encode_with_span(text, inst.mention, vocab);
      bridge = first_token_of(inst.e2, vocab);
      require(tokens.ids.size() <= w.config.max_seq, "prompt longer than max_seq");
      require(*tokens.mention_final_index + 2 == tokens.ids.size(), "comma did not tokenize as one trailing token");
    } catch (const InvalidInput& e) {
      reasons[i] = e.what();
      return;
    }
    const auto base = forward(tokens.ids, w).trace;
    const auto target = InterventionTarget::appositive_prob(bridge);
    const std::size_t idx = *tokens.mention_final_index;
    for (std::size_t l : detail::eligible_layers(w.config)) {
      const Vector g = entrec_gradient(base.x(l, idx), bridge, w);
      const auto est = derivative_at_zero(w, base, l, idx, g, target, opt.derivative);
      if (est.unstable || est.zero_gradient) ++unstable[i];
      outcomes[i][l] = est.positive;
    }
    evaluated[i] = true;
  });
  auto result = detail::summarize(instances, outcomes, evaluated, layers, true, opt.single_threshold);
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (!reasons[i].empty()) result.log.push_back(instance_label(instances[i], i) + " skipped: " + reasons[i]);
    if (unstable[i] > 0)
      result.log.push_back(instance_label(instances[i], i) + ": " + std::to_string(unstable[i]) +
                           " unstable or zero-gradient derivative estimate(s) counted as failures");
  }
  return result;
}

// ---------------------------------------------------------------------------
// Consistency under chain-of-thought style prompts

struct ScoreSummary {
  std::string label;
  std::size_t n = 0;
  double mean = 0.0, median = 0.0, q1 = 0.0, q3 = 0.0, min = 0.0, max = 0.0;
  bool operator==(const ScoreSummary&) const = default;
};

// Linear interpolation between order statistics.
inline double quantile(std::vector<double> v, double q) {
  require(!v.empty(), "quantile: empty input");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline ScoreSummary summarize_scores(const std::string& label, const std::vector<double>& values) {
  ScoreSummary s;
  s.label = label;
  s.n = values.size();
  if (values.empty()) return s;
  double total = 0.0;
  for (double v : values) total += v;
  s.mean = total / static_cast<double>(values.size());
  s.median = quantile(values, 0.5);
  s.q1 = quantile(values, 0.25);
  s.q3 = quantile(values, 0.75);
  s.min = *std::min_element(values.begin(), values.end());
  s.max = *std::max_element(values.begin(), values.end());
  return s;
}

struct CotComparison {
  std::vector<std::string> labels;
  std::vector<std::vector<double>> scores;  // scores[label][k], k over evaluated instances
  std::vector<std::size_t> instance_indices;
  std::vector<ScoreSummary> summaries;
  std::vector<std::string> log;
};

inline CotComparison run_cot_comparison(const ModelWeights& w, const Vocabulary& vocab,
                                        const std::vector<TwoHopInstance>& instances,
                                        const CotTemplates& templates = {}, const ExperimentOptions& opt = {}) {
  CotComparison out;
  for (const auto& [label, _] : templates.variants) out.labels.push_back(label);
  std::vector<std::vector<double>> per_instance(instances.size());
  std::vector<std::string> reasons(instances.size());
  parallel_for(instances.size(), opt.threads, [&](std::size_t i) {
    try {
      const auto variants = cot_prompt_variants(instances[i], templates);
      const auto one_hop = encode(instances[i].one_hop_prompt, vocab).ids;
      require(one_hop.size() <= w.config.max_seq, "one-hop prompt longer than max_seq");
      const auto p1h = forward(one_hop, w).final_distribution;
      std::vector<double> row;
      for (const auto& v : variants) {
        const auto ids = encode(v.text, vocab).ids;
        require(ids.size() <= w.config.max_seq, "variant '" + v.label + "' longer than max_seq");
        row.push_back(cnst_score(forward(ids, w).final_distribution, p1h));
      }
      per_instance[i] = std::move(row);
    } catch (const InvalidInput& e) {
      reasons[i] = e.what();
    }
  });
  out.scores.assign(out.labels.size(), {});
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (!reasons[i].empty()) {
      out.log.push_back(instance_label(instances[i], i) + " skipped: " + reasons[i]);
      continue;
    }
    out.instance_indices.push_back(i);
    for (std::size_t v = 0; v < out.labels.size(); ++v) out.scores[v].push_back(per_instance[i][v]);
  }
  for (std::size_t v = 0; v < out.labels.size(); ++v) out.summaries.push_back(summarize_scores(out.labels[v], out.scores[v]));
  return out;
}

// ---------------------------------------------------------------------------
// RQ2 split by whether the one-hop prompt is answered correctly, with matched type counts

struct AccuracyVariants {
  std::vector<std::size_t> correct_indices;    // matched subset, ascending
  std::vector<std::size_t> incorrect_indices;  // matched subset, ascending
  FrequencyResult correct;
  FrequencyResult incorrect;
  std::vector<std::string> log;
};

inline std::vector<bool> one_hop_correctness(const ModelWeights& w, const Vocabulary& vocab,
                                             const std::vector<TwoHopInstance>& instances, std::size_t threads,
                                             std::vector<std::string>& log) {
  std::vector<char> correct(instances.size(), 0);
  std::vector<std::string> unmatched(instances.size());
  parallel_for(instances.size(), threads, [&](std::size_t i) {
    const auto ids = encode(instances[i].one_hop_prompt, vocab).ids;
    if (ids.size() > w.config.max_seq) return;
    std::vector<std::string> missing;
    correct[i] = one_hop_correct(forward(ids, w).final_distribution, instances[i].answer_aliases, vocab, &missing);
    for (const auto& m : missing) unmatched[i] += (unmatched[i].empty() ? "" : ", ") + m;
  });
  for (std::size_t i = 0; i < instances.size(); ++i)
    if (!unmatched[i].empty())
      log.push_back(instance_label(instances[i], i) + ": alias with unknown first token treated as non-match: " +
                    unmatched[i]);
  return {correct.begin(), correct.end()};
}

inline AccuracyVariants run_accuracy_variants(const ModelWeights& w, const Vocabulary& vocab,
                                              const std::vector<TwoHopInstance>& instances,
                                              const ExperimentOptions& opt = {}) {
  AccuracyVariants out;
  const auto correct = one_hop_correctness(w, vocab, instances, opt.threads, out.log);
  std::map<std::string, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> by_type;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    auto& [yes, no] = by_type[instances[i].fact_composition_type];
    (correct[i] ? yes : no).push_back(i);
  }
  Rng rng(opt.seed);
  for (auto& [type, sets] : by_type) {
    auto& [yes, no] = sets;
    if (yes.empty() || no.empty()) {
      out.log.push_back("type '" + type + "' dropped: only " + std::string(yes.empty() ? "incorrect" : "correct") +
                        " one-hop answers");
      continue;
    }
    const std::size_t m = std::min(yes.size(), no.size());
    for (auto* set : {&yes, &no}) {
      if (set->size() > m) {
        std::shuffle(set->begin(), set->end(), rng);
        set->resize(m);
        std::sort(set->begin(), set->end());
      }
    }
    out.correct_indices.insert(out.correct_indices.end(), yes.begin(), yes.end());
    out.incorrect_indices.insert(out.incorrect_indices.end(), no.begin(), no.end());
  }
  require(!out.correct_indices.empty() && !out.incorrect_indices.empty(),
          "run_accuracy_variants: need both one-hop-correct and one-hop-incorrect instances of a shared type");
  std::sort(out.correct_indices.begin(), out.correct_indices.end());
  std::sort(out.incorrect_indices.begin(), out.incorrect_indices.end());
  auto subset = [&](const std::vector<std::size_t>& idx) {
    std::vector<TwoHopInstance> s;
    for (std::size_t i : idx) s.push_back(instances[i]);
    return s;
  };
  out.correct = run_rq2(w, vocab, subset(out.correct_indices), opt);
  out.incorrect = run_rq2(w, vocab, subset(out.incorrect_indices), opt);
  return out;
}

}  // namespace twohop
