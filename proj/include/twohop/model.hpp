#pragma once

// Pre-norm decoder-only transformer with learned absolute positions.
//
//   x_emb[p]   = tok_emb[id_p] + pos_emb[p]
//   r          = x + Attn(norm1(x))          (causal, multi-head)
//   x^l        = r + MLP(norm2(r))           (GELU)
//   logits[p]  = final_norm(x^{L-1}[p]) . W_U (no output bias)
//
// x^l is the output of layer l, l = 0..L-1. Every kernel runs in a fixed
// order, so recomputing a position from identical inputs is bit-identical;
// patched passes rely on that to reuse unaffected rows of a base trace.

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "twohop/errors.hpp"
#include "twohop/tensor_ops.hpp"
#include "twohop/tokenizer.hpp"

namespace twohop {

enum class NormKind : int { layernorm = 0, rmsnorm = 1 };
enum class PositionalKind : int { learned_absolute = 0 };

struct ModelConfig {
  static constexpr double kNormEps = 1e-5;

  std::size_t layers = 4;
  std::size_t hidden = 64;
  std::size_t heads = 4;
  std::size_t ff = 256;
  std::size_t vocab = 0;
  std::size_t max_seq = 64;
  NormKind norm = NormKind::layernorm;
  PositionalKind positional = PositionalKind::learned_absolute;

  std::size_t head_dim() const { return hidden / heads; }

  void validate() const {
    require(layers >= 2, "ModelConfig: need at least 2 layers");
    require(hidden > 0 && heads > 0 && hidden % heads == 0, "ModelConfig: hidden must be divisible by heads");
    require(ff > 0, "ModelConfig: ff must be positive");
    require(vocab >= 4, "ModelConfig: vocab must have at least 4 tokens");
    require(max_seq > 0, "ModelConfig: max_seq must be positive");
  }

  bool operator==(const ModelConfig&) const = default;
};

struct LayerWeights {
  Vector ln1_gain, ln1_shift;
  DenseMatrix wq, wk, wv, wo;  // h x h
  Vector bq, bk, bv, bo;
  Vector ln2_gain, ln2_shift;
  DenseMatrix w_in;   // h x ff
  Vector b_in;        // ff
  DenseMatrix w_out;  // ff x h
  Vector b_out;       // h

  bool operator==(const LayerWeights&) const = default;
};

struct ModelWeights {
  ModelConfig config;
  DenseMatrix tok_emb;  // V x h
  DenseMatrix pos_emb;  // max_seq x h
  std::vector<LayerWeights> layers;
  Vector final_gain, final_shift;
  DenseMatrix unembed;  // h x V

  // All-zero weights with unit norm gains, shaped for `config`.
  static ModelWeights zeros(const ModelConfig& config) {
    config.validate();
    const auto h = config.hidden;
    ModelWeights w;
    w.config = config;
    w.tok_emb = DenseMatrix(config.vocab, h);
    w.pos_emb = DenseMatrix(config.max_seq, h);
    w.layers.resize(config.layers);
    for (auto& l : w.layers) {
      l.ln1_gain.assign(h, 1.0);
      l.ln1_shift.assign(h, 0.0);
      l.wq = l.wk = l.wv = l.wo = DenseMatrix(h, h);
      l.bq.assign(h, 0.0);
      l.bk.assign(h, 0.0);
      l.bv.assign(h, 0.0);
      l.bo.assign(h, 0.0);
      l.ln2_gain.assign(h, 1.0);
      l.ln2_shift.assign(h, 0.0);
      l.w_in = DenseMatrix(h, config.ff);
      l.b_in.assign(config.ff, 0.0);
      l.w_out = DenseMatrix(config.ff, h);
      l.b_out.assign(h, 0.0);
    }
    w.final_gain.assign(h, 1.0);
    w.final_shift.assign(h, 0.0);
    w.unembed = DenseMatrix(h, config.vocab);
    return w;
  }

  bool operator==(const ModelWeights&) const = default;
};

// Attention keys and values of one layer (seq x h each).
struct LayerCache {
  DenseMatrix keys, values;
};

struct ForwardTrace {
  std::vector<TokenId> tokens;
  std::vector<DenseMatrix> residual;  // residual[l] is seq x h, the output of layer l
  std::vector<LayerCache> cache;      // cache[l] holds layer l's keys and values
  DenseMatrix logits;                 // seq x V

  std::size_t seq_len() const { return tokens.size(); }
  std::span<const double> x(std::size_t layer, std::size_t position) const {
    require(layer < residual.size(), "ForwardTrace: layer out of range");
    require(position < residual[layer].rows(), "ForwardTrace: position out of range");
    return residual[layer].row(position);
  }
};

struct PatchSpec {
  std::size_t layer = 0;
  std::size_t position = 0;
  Vector replacement;
};

struct ForwardResult {
  ForwardTrace trace;
  ProbabilityDistribution final_distribution;
};

namespace detail {

inline double gelu(double z) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * z * (1.0 + std::tanh(kC * (z + 0.044715 * z * z * z)));
}

inline Vector apply_norm(const ModelConfig& cfg, std::span<const double> x, const Vector& gain, const Vector& shift) {
  return cfg.norm == NormKind::layernorm ? layer_norm(x, gain, shift, ModelConfig::kNormEps)
                                         : rms_norm(x, gain, ModelConfig::kNormEps);
}

inline void check_tokens(const std::vector<TokenId>& tokens, const ModelConfig& cfg) {
  require(!tokens.empty(), "forward: empty token sequence");
  require(tokens.size() <= cfg.max_seq, "forward: sequence longer than max_seq");
  for (TokenId t : tokens) require(t < cfg.vocab, "forward: token id out of range");
}

inline DenseMatrix embed(const std::vector<TokenId>& tokens, const ModelWeights& w) {
  const auto h = w.config.hidden;
  DenseMatrix x(tokens.size(), h);
  for (std::size_t p = 0; p < tokens.size(); ++p) {
    auto dst = x.row(p);
    auto te = w.tok_emb.row(tokens[p]);
    auto pe = w.pos_emb.row(p);
    for (std::size_t i = 0; i < h; ++i) dst[i] = te[i] + pe[i];
  }
  return x;
}

// Computes rows [first, seq) of `out` from `in`; rows below `first` are left untouched.
// With `reuse_prefix`, cache rows below `first` are taken as already computed from `in`.
inline void run_layer(const ModelConfig& cfg, const LayerWeights& lw, const DenseMatrix& in, DenseMatrix& out,
                      std::size_t first, LayerCache& cache, bool reuse_prefix) {
  const std::size_t seq = in.rows();
  const std::size_t h = cfg.hidden;
  const std::size_t dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  if (!reuse_prefix) cache = {DenseMatrix(seq, h), DenseMatrix(seq, h)};
  require(cache.keys.rows() == seq && cache.values.rows() == seq, "run_layer: cache shape mismatch");
  DenseMatrix& keys = cache.keys;
  DenseMatrix& values = cache.values;
  std::vector<Vector> normed(seq);
  for (std::size_t p = reuse_prefix ? first : 0; p < seq; ++p) {
    normed[p] = apply_norm(cfg, in.row(p), lw.ln1_gain, lw.ln1_shift);
    vec_mat_into(normed[p], lw.wk, keys.row(p));
    vec_mat_into(normed[p], lw.wv, values.row(p));
    auto k = keys.row(p);
    auto v = values.row(p);
    for (std::size_t i = 0; i < h; ++i) {
      k[i] += lw.bk[i];
      v[i] += lw.bv[i];
    }
  }

  Vector query(h), mixed(h), attn_out(h), hidden(cfg.ff), mlp_out(h), weights(seq);
  for (std::size_t p = first; p < seq; ++p) {
    vec_mat_into(normed[p], lw.wq, query);
    for (std::size_t i = 0; i < h; ++i) query[i] += lw.bq[i];
    std::fill(mixed.begin(), mixed.end(), 0.0);
    for (std::size_t head = 0; head < cfg.heads; ++head) {
      const std::size_t off = head * dh;
      double peak = -INFINITY;
      for (std::size_t j = 0; j <= p; ++j) {
        auto k = keys.row(j);
        double s = 0.0;
        for (std::size_t i = 0; i < dh; ++i) s += query[off + i] * k[off + i];
        weights[j] = s * scale;
        peak = std::max(peak, weights[j]);
      }
      double total = 0.0;
      for (std::size_t j = 0; j <= p; ++j) {
        weights[j] = std::exp(weights[j] - peak);
        total += weights[j];
      }
      for (std::size_t j = 0; j <= p; ++j) {
        const double a = weights[j] / total;
        auto v = values.row(j);
        for (std::size_t i = 0; i < dh; ++i) mixed[off + i] += a * v[off + i];
      }
    }
    vec_mat_into(mixed, lw.wo, attn_out);
    auto src = in.row(p);
    Vector resid(h);
    for (std::size_t i = 0; i < h; ++i) resid[i] = src[i] + attn_out[i] + lw.bo[i];

    const Vector m = apply_norm(cfg, resid, lw.ln2_gain, lw.ln2_shift);
    vec_mat_into(m, lw.w_in, hidden);
    for (std::size_t i = 0; i < cfg.ff; ++i) hidden[i] = gelu(hidden[i] + lw.b_in[i]);
    vec_mat_into(hidden, lw.w_out, mlp_out);
    auto dst = out.row(p);
    for (std::size_t i = 0; i < h; ++i) dst[i] = resid[i] + mlp_out[i] + lw.b_out[i];
  }
}

}  // namespace detail

inline Vector final_norm(const ModelWeights& w, std::span<const double> x) {
  require(x.size() == w.config.hidden, "final_norm: hidden size mismatch");
  return detail::apply_norm(w.config, x, w.final_gain, w.final_shift);
}

// final_norm(x) . W_U for a single residual vector.
inline Vector project_logits(const ModelWeights& w, std::span<const double> x) {
  return vec_mat(final_norm(w, x), w.unembed);
}

// Completes a trace whose residual holds layers [0, k); computes layers k..L-1 and all logits.
inline ForwardTrace resume_forward(ForwardTrace prefix, const ModelWeights& w) {
  const auto& cfg = w.config;
  detail::check_tokens(prefix.tokens, cfg);
  require(prefix.residual.size() <= cfg.layers, "resume_forward: prefix deeper than model");
  const std::size_t seq = prefix.tokens.size();
  for (const auto& r : prefix.residual)
    require(r.rows() == seq && r.cols() == cfg.hidden, "resume_forward: prefix shape mismatch");
  DenseMatrix current = prefix.residual.empty() ? detail::embed(prefix.tokens, w) : prefix.residual.back();
  prefix.cache.resize(prefix.residual.size());
  for (std::size_t l = prefix.residual.size(); l < cfg.layers; ++l) {
    DenseMatrix next(seq, cfg.hidden);
    prefix.cache.emplace_back();
    detail::run_layer(cfg, w.layers[l], current, next, 0, prefix.cache.back(), false);
    prefix.residual.push_back(next);
    current = std::move(next);
  }
  prefix.logits = DenseMatrix(seq, cfg.vocab);
  for (std::size_t p = 0; p < seq; ++p) {
    const Vector z = project_logits(w, prefix.residual.back().row(p));
    std::copy(z.begin(), z.end(), prefix.logits.row(p).begin());
  }
  return prefix;
}

inline ForwardResult forward(const std::vector<TokenId>& tokens, const ModelWeights& w) {
  ForwardTrace empty;
  empty.tokens = tokens;
  ForwardResult out{resume_forward(std::move(empty), w), {}};
  out.final_distribution = softmax(out.trace.logits.row(tokens.size() - 1));
  return out;
}

inline void check_patch(const PatchSpec& patch, std::size_t seq, const ModelConfig& cfg) {
  require(patch.layer < cfg.layers, "PatchSpec: layer out of range");
  require(patch.position < seq, "PatchSpec: position out of range");
  require(patch.replacement.size() == cfg.hidden, "PatchSpec: replacement has wrong width");
  require(all_finite(patch.replacement), "PatchSpec: non-finite replacement");
}

// Final-position distribution with x^{patch.layer}[patch.position] replaced, reusing `base`
// for every activation the patch cannot reach (layers <= patch.layer, positions < patch.position).
inline ProbabilityDistribution forward_patched(const ForwardTrace& base, const ModelWeights& w, const PatchSpec& patch) {
  const auto& cfg = w.config;
  const std::size_t seq = base.tokens.size();
  check_patch(patch, seq, cfg);
  require(base.residual.size() == cfg.layers, "forward_patched: incomplete base trace");
  const std::size_t last = seq - 1;

  if (patch.layer + 1 == cfg.layers) {
    if (patch.position != last) {
      return softmax(project_logits(w, base.residual.back().row(last)));
    }
    return softmax(project_logits(w, patch.replacement));
  }

  DenseMatrix current = base.residual[patch.layer];
  std::copy(patch.replacement.begin(), patch.replacement.end(), current.row(patch.position).begin());
  for (std::size_t l = patch.layer + 1; l < cfg.layers; ++l) {
    DenseMatrix next = base.residual[l];
    LayerCache cache = l < base.cache.size() ? base.cache[l] : LayerCache{};
    const bool cached = cache.keys.rows() == seq && cache.values.rows() == seq;
    detail::run_layer(cfg, w.layers[l], current, next, patch.position, cache, cached);
    current = std::move(next);
  }
  return softmax(project_logits(w, current.row(last)));
}

inline ProbabilityDistribution forward_patched(const std::vector<TokenId>& tokens, const ModelWeights& w,
                                               const PatchSpec& patch) {
  detail::check_tokens(tokens, w.config);
  check_patch(patch, tokens.size(), w.config);
  return forward_patched(forward(tokens, w).trace, w, patch);
}

// log softmax(final_norm(x^layer[position]) . W_U)
inline Vector logit_lens(const ForwardTrace& trace, std::size_t layer, std::size_t position, const ModelWeights& w) {
  require(layer < trace.residual.size(), "logit_lens: layer out of range");
  require(position < trace.seq_len(), "logit_lens: position out of range");
  return log_softmax(project_logits(w, trace.x(layer, position)));
}

}  // namespace twohop
