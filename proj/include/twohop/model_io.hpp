#pragma once

// Weight container (all integers little-endian):
//
//   magic        8 bytes  "TWOHOPW1"
//   config       9 x i32  version(=1), layers, hidden, heads, ff, vocab, max_seq, norm_kind, positional_kind
//   count        u32      number of tensors
//   tensor*      u32 name_len, name bytes, u32 rank, rank x u32 dims, prod(dims) x f64 (IEEE-754 LE)
//
// Tensors appear in the order produced by tensor_names(config). Loading checks
// names and shapes against the config and reports the byte offset of the
// first mismatch.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "twohop/errors.hpp"
#include "twohop/model.hpp"

namespace twohop {

inline constexpr std::string_view kWeightMagic = "TWOHOPW1";
inline constexpr std::int32_t kWeightVersion = 1;

namespace io {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  } else {
    return v;
  }
}

class ByteWriter {
 public:
  template <typename T>
  void put(T v) {
    v = to_little(v);
    const auto* p = reinterpret_cast<const unsigned char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void put_bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  const std::vector<unsigned char>& bytes() const { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<unsigned char> data) : data_(std::move(data)) {}

  template <typename T>
  T get(const char* what) {
    if (pos_ + sizeof(T) > data_.size()) throw FormatError(std::string("truncated while reading ") + what, pos_);
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return to_little(v);
  }
  std::string get_bytes(std::size_t n, const char* what) {
    if (pos_ + n > data_.size()) throw FormatError(std::string("truncated while reading ") + what, pos_);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::vector<unsigned char> data_;
  std::size_t pos_ = 0;
};

struct TensorRef {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<double>* data;
};

inline std::vector<TensorRef> tensor_table(ModelWeights& w) {
  const auto& c = w.config;
  const auto h = static_cast<std::uint32_t>(c.hidden);
  const auto ff = static_cast<std::uint32_t>(c.ff);
  const auto v = static_cast<std::uint32_t>(c.vocab);
  const auto s = static_cast<std::uint32_t>(c.max_seq);
  std::vector<TensorRef> t;
  t.push_back({"tok_emb", {v, h}, &w.tok_emb.data()});
  t.push_back({"pos_emb", {s, h}, &w.pos_emb.data()});
  for (std::size_t i = 0; i < w.layers.size(); ++i) {
    auto& l = w.layers[i];
    const std::string p = "layers." + std::to_string(i) + ".";
    t.push_back({p + "ln1.gain", {h}, &l.ln1_gain});
    t.push_back({p + "ln1.shift", {h}, &l.ln1_shift});
    t.push_back({p + "attn.wq", {h, h}, &l.wq.data()});
    t.push_back({p + "attn.bq", {h}, &l.bq});
    t.push_back({p + "attn.wk", {h, h}, &l.wk.data()});
    t.push_back({p + "attn.bk", {h}, &l.bk});
    t.push_back({p + "attn.wv", {h, h}, &l.wv.data()});
    t.push_back({p + "attn.bv", {h}, &l.bv});
    t.push_back({p + "attn.wo", {h, h}, &l.wo.data()});
    t.push_back({p + "attn.bo", {h}, &l.bo});
    t.push_back({p + "ln2.gain", {h}, &l.ln2_gain});
    t.push_back({p + "ln2.shift", {h}, &l.ln2_shift});
    t.push_back({p + "mlp.w_in", {h, ff}, &l.w_in.data()});
    t.push_back({p + "mlp.b_in", {ff}, &l.b_in});
    t.push_back({p + "mlp.w_out", {ff, h}, &l.w_out.data()});
    t.push_back({p + "mlp.b_out", {h}, &l.b_out});
  }
  t.push_back({"final_norm.gain", {h}, &w.final_gain});
  t.push_back({"final_norm.shift", {h}, &w.final_shift});
  t.push_back({"unembed", {h, v}, &w.unembed.data()});
  return t;
}

}  // namespace io

inline std::vector<std::string> tensor_names(const ModelConfig& config) {
  auto w = ModelWeights::zeros(config);
  std::vector<std::string> names;
  for (const auto& t : io::tensor_table(w)) names.push_back(t.name);
  return names;
}

inline std::vector<unsigned char> serialize_weights(const ModelWeights& weights) {
  const auto& c = weights.config;
  io::ByteWriter out;
  out.put_bytes(kWeightMagic);
  for (std::int32_t v : {kWeightVersion, static_cast<std::int32_t>(c.layers), static_cast<std::int32_t>(c.hidden),
                         static_cast<std::int32_t>(c.heads), static_cast<std::int32_t>(c.ff),
                         static_cast<std::int32_t>(c.vocab), static_cast<std::int32_t>(c.max_seq),
                         static_cast<std::int32_t>(c.norm), static_cast<std::int32_t>(c.positional)}) {
    out.put(v);
  }
  auto copy = weights;
  const auto table = io::tensor_table(copy);
  out.put(static_cast<std::uint32_t>(table.size()));
  for (const auto& t : table) {
    out.put(static_cast<std::uint32_t>(t.name.size()));
    out.put_bytes(t.name);
    out.put(static_cast<std::uint32_t>(t.dims.size()));
    std::size_t n = 1;
    for (auto d : t.dims) {
      out.put(d);
      n *= d;
    }
    ensure(t.data->size() == n, "serialize_weights: tensor " + t.name + " has wrong element count");
    for (double x : *t.data) out.put(x);
  }
  return out.bytes();
}

inline ModelWeights deserialize_weights(std::vector<unsigned char> bytes) {
  io::ByteReader in(std::move(bytes));
  if (in.get_bytes(kWeightMagic.size(), "magic") != kWeightMagic) throw FormatError("bad magic", 0);
  const std::size_t version_at = in.offset();
  if (in.get<std::int32_t>("version") != kWeightVersion) throw FormatError("unsupported version", version_at);
  const std::size_t config_at = in.offset();
  std::int32_t fields[8];
  for (auto& f : fields) {
    f = in.get<std::int32_t>("config");
    if (f < 0) throw FormatError("negative config field", in.offset() - 4);
  }
  ModelConfig c;
  c.layers = static_cast<std::size_t>(fields[0]);
  c.hidden = static_cast<std::size_t>(fields[1]);
  c.heads = static_cast<std::size_t>(fields[2]);
  c.ff = static_cast<std::size_t>(fields[3]);
  c.vocab = static_cast<std::size_t>(fields[4]);
  c.max_seq = static_cast<std::size_t>(fields[5]);
  if (fields[6] > 1) throw FormatError("unknown norm kind", config_at + 24);
  if (fields[7] != 0) throw FormatError("unknown positional kind", config_at + 28);
  c.norm = static_cast<NormKind>(fields[6]);
  c.positional = PositionalKind::learned_absolute;
  try {
    c.validate();
  } catch (const InvalidInput& e) {
    throw FormatError(std::string("invalid config: ") + e.what(), config_at);
  }
  {
    // Refuse to allocate for a header that cannot match the payload size.
    const long double h = static_cast<long double>(c.hidden), ff = static_cast<long double>(c.ff);
    const long double floats = (c.vocab + c.max_seq) * h + c.layers * (4 * h * h + 2 * h * ff + 9 * h + ff) +
                               2 * h + h * c.vocab;
    if (floats * 8 > static_cast<long double>(in.remaining())) throw FormatError("payload shorter than config implies", config_at);
  }

  auto w = ModelWeights::zeros(c);
  auto table = io::tensor_table(w);
  const std::size_t count_at = in.offset();
  if (in.get<std::uint32_t>("tensor count") != table.size()) throw FormatError("tensor count mismatch", count_at);
  for (auto& t : table) {
    const std::size_t at = in.offset();
    const auto len = in.get<std::uint32_t>("name length");
    if (in.get_bytes(len, "name") != t.name) throw FormatError("expected tensor " + t.name, at);
    const std::size_t shape_at = in.offset();
    const auto rank = in.get<std::uint32_t>("rank");
    if (rank != t.dims.size()) throw FormatError("rank mismatch for " + t.name, shape_at);
    for (auto d : t.dims)
      if (in.get<std::uint32_t>("dim") != d) throw FormatError("shape mismatch for " + t.name, shape_at);
    for (double& x : *t.data) {
      x = in.get<double>("tensor data");
      if (!std::isfinite(x)) throw FormatError("non-finite value in " + t.name, in.offset() - 8);
    }
  }
  if (!in.at_end()) throw FormatError("trailing bytes", in.offset());
  return w;
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void save_weights(const ModelWeights& weights, const std::filesystem::path& path) {
  const auto bytes = serialize_weights(weights);
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "save_weights: cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline ModelWeights load_weights(const std::filesystem::path& path) {
  return deserialize_weights(read_file_bytes(path));
}

}  // namespace twohop
