#pragma once

// Test fixtures and an independent scalar reference forward pass.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "twohop/dataset.hpp"
#include "twohop/model.hpp"
#include "twohop/model_zoo.hpp"

namespace twohop::fixtures {

inline ModelConfig small_config(NormKind norm = NormKind::layernorm, std::size_t layers = 3) {
  ModelConfig c;
  c.layers = layers;
  c.hidden = 16;
  c.heads = 2;
  c.ff = 24;
  c.vocab = 20;
  c.max_seq = 12;
  c.norm = norm;
  return c;
}

// Random model with non-trivial biases, gains and shifts so every parameter matters.
inline ModelWeights perturbed_model(const ModelConfig& c, std::uint64_t seed, double scale = 0.3) {
  auto w = random_model(c, seed);
  std::mt19937_64 rng(seed ^ 0x5eedULL);
  std::normal_distribution<double> n(0.0, 1.0);
  auto jitter = [&](Vector& v, double base, double s) {
    for (double& x : v) x = base + s * n(rng);
  };
  auto scale_m = [&](DenseMatrix& m) {
    for (double& x : m.data()) x *= scale / 0.02;
  };
  scale_m(w.tok_emb);
  scale_m(w.pos_emb);
  scale_m(w.unembed);
  for (auto& l : w.layers) {
    for (auto* m : {&l.wq, &l.wk, &l.wv, &l.wo, &l.w_in, &l.w_out}) scale_m(*m);
    jitter(l.ln1_gain, 1.0, 0.1);
    jitter(l.ln2_gain, 1.0, 0.1);
    jitter(l.ln1_shift, 0.0, 0.1);
    jitter(l.ln2_shift, 0.0, 0.1);
    for (auto* b : {&l.bq, &l.bk, &l.bv, &l.bo, &l.b_in, &l.b_out}) jitter(*b, 0.0, 0.1);
  }
  jitter(w.final_gain, 1.0, 0.1);
  jitter(w.final_shift, 0.0, 0.1);
  return w;
}

inline std::vector<TokenId> random_tokens(std::size_t n, std::size_t vocab, std::mt19937_64& rng) {
  std::uniform_int_distribution<TokenId> d(0, static_cast<TokenId>(vocab - 1));
  std::vector<TokenId> t(n);
  for (auto& x : t) x = d(rng);
  return t;
}

using Rows = std::vector<std::vector<double>>;

namespace ref {

inline std::vector<double> norm(const ModelConfig& c, const std::vector<double>& x, const Vector& g, const Vector& b) {
  const double n = static_cast<double>(x.size());
  std::vector<double> y(x.size());
  if (c.norm == NormKind::layernorm) {
    double mu = 0;
    for (double v : x) mu += v / n;
    double var = 0;
    for (double v : x) var += (v - mu) * (v - mu) / n;
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = g[i] * (x[i] - mu) / std::sqrt(var + 1e-5) + b[i];
  } else {
    double ms = 0;
    for (double v : x) ms += v * v / n;
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = g[i] * x[i] / std::sqrt(ms + 1e-5);
  }
  return y;
}

inline std::vector<double> affine(const std::vector<double>& x, const DenseMatrix& m, const Vector& b) {
  std::vector<double> y(m.cols());
  for (std::size_t j = 0; j < m.cols(); ++j) {
    double s = b.empty() ? 0.0 : b[j];
    for (std::size_t i = 0; i < m.rows(); ++i) s += x[i] * m(i, j);
    y[j] = s;
  }
  return y;
}

inline double gelu(double z) { return 0.5 * z * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (z + 0.044715 * z * z * z))); }

}  // namespace ref

// residuals[l][p] for l in [0, L); optional patch of residuals[patch_layer][patch_pos].
inline std::vector<Rows> reference_residuals(const std::vector<TokenId>& tokens, const ModelWeights& w,
                                             int patch_layer = -1, std::size_t patch_pos = 0,
                                             const std::vector<double>* patch = nullptr) {
  const auto& c = w.config;
  const std::size_t seq = tokens.size(), h = c.hidden, dh = h / c.heads;
  Rows x(seq, std::vector<double>(h));
  for (std::size_t p = 0; p < seq; ++p)
    for (std::size_t i = 0; i < h; ++i) x[p][i] = w.tok_emb(tokens[p], i) + w.pos_emb(p, i);
  std::vector<Rows> out;
  for (std::size_t l = 0; l < c.layers; ++l) {
    const auto& lw = w.layers[l];
    Rows q(seq), k(seq), v(seq);
    for (std::size_t p = 0; p < seq; ++p) {
      const auto n1 = ref::norm(c, x[p], lw.ln1_gain, lw.ln1_shift);
      q[p] = ref::affine(n1, lw.wq, lw.bq);
      k[p] = ref::affine(n1, lw.wk, lw.bk);
      v[p] = ref::affine(n1, lw.wv, lw.bv);
    }
    Rows y(seq);
    for (std::size_t p = 0; p < seq; ++p) {
      std::vector<double> mix(h, 0.0);
      for (std::size_t hd = 0; hd < c.heads; ++hd) {
        std::vector<double> s(p + 1);
        double mx = -1e300;
        for (std::size_t j = 0; j <= p; ++j) {
          double d = 0;
          for (std::size_t i = hd * dh; i < (hd + 1) * dh; ++i) d += q[p][i] * k[j][i];
          s[j] = d / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, s[j]);
        }
        double z = 0;
        for (auto& e : s) z += (e = std::exp(e - mx));
        for (std::size_t j = 0; j <= p; ++j)
          for (std::size_t i = hd * dh; i < (hd + 1) * dh; ++i) mix[i] += s[j] / z * v[j][i];
      }
      auto a = ref::affine(mix, lw.wo, lw.bo);
      std::vector<double> r(h);
      for (std::size_t i = 0; i < h; ++i) r[i] = x[p][i] + a[i];
      auto hid = ref::affine(ref::norm(c, r, lw.ln2_gain, lw.ln2_shift), lw.w_in, lw.b_in);
      for (double& e : hid) e = ref::gelu(e);
      auto m = ref::affine(hid, lw.w_out, lw.b_out);
      y[p].resize(h);
      for (std::size_t i = 0; i < h; ++i) y[p][i] = r[i] + m[i];
    }
    if (static_cast<int>(l) == patch_layer) y[patch_pos] = *patch;
    out.push_back(y);
    x = y;
  }
  return out;
}

inline std::vector<double> reference_final_probs(const std::vector<double>& x, const ModelWeights& w) {
  const auto z = ref::affine(ref::norm(w.config, x, w.final_gain, w.final_shift), w.unembed, {});
  double mx = -1e300;
  for (double v : z) mx = std::max(mx, v);
  std::vector<double> p(z.size());
  double s = 0;
  for (std::size_t i = 0; i < z.size(); ++i) s += (p[i] = std::exp(z[i] - mx));
  for (double& v : p) v /= s;
  return p;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("twohop_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace twohop::fixtures

namespace twohop::fixtures {

// Central differences of f at x with step 1e-5 * (1 + |x_i|) per coordinate.
template <typename F>
Vector finite_difference_gradient(F&& f, const Vector& x) {
  Vector g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double h = 1e-5 * (1.0 + std::abs(x[i]));
    Vector up = x, down = x;
    up[i] += h;
    down[i] -= h;
    g[i] = (f(up) - f(down)) / (2.0 * h);
  }
  return g;
}

// max_i |a_i - b_i| / max_i |b_i|
inline double max_relative_error(const Vector& a, const Vector& b) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max(scale, std::abs(b[i]));
  }
  return scale == 0.0 ? diff : diff / scale;
}

}  // namespace twohop::fixtures

namespace twohop::fixtures {

struct ConstructedFixture {
  GeneratedWorld generated;
  Vocabulary vocab;
  ModelWeights weights;
  ConstructionReport report;
};

// Default-knob world (4 types x 25, single-token names) with its constructed model; built once.
inline const ConstructedFixture& constructed_fixture() {
  static const ConstructedFixture f = [] {
    ConstructedFixture c;
    WorldKnobs k;
    c.generated = generate_world(k);
    c.vocab = build_vocabulary(world_corpus(c.generated));
    const auto cfg = constructed_config(c.generated.world, c.vocab);
    auto built = constructed_two_hop_model(c.generated.world, c.vocab, cfg, c.generated.instances);
    c.weights = std::move(built.weights);
    c.report = built.report;
    return c;
  }();
  return f;
}

}  // namespace twohop::fixtures

namespace twohop::fixtures {

// Relative path -> contents for every regular file under `root`.
inline std::map<std::string, std::string> read_tree(const std::filesystem::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    out[std::filesystem::relative(e.path(), root).string()] = std::string(std::istreambuf_iterator<char>(in), {});
  }
  return out;
}

}  // namespace twohop::fixtures
