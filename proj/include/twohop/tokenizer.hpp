#pragma once

// Word-level tokenizer. Whitespace separates units; every ASCII punctuation
// character becomes its own token. Each token remembers the byte range it
// came from so mention boundaries map to token indices exactly.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "twohop/errors.hpp"

namespace twohop {

using TokenId = std::uint32_t;

struct CharSpan {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  bool empty() const { return begin == end; }
  bool operator==(const CharSpan&) const = default;
};

struct Piece {
  std::string text;
  CharSpan span;
};

inline bool is_split_punct(unsigned char c) { return c < 0x80 && std::ispunct(c) != 0; }

inline std::vector<Piece> split_pieces(std::string_view text) {
  std::vector<Piece> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
    } else if (is_split_punct(c)) {
      out.push_back({std::string(1, text[i]), {i, i + 1}});
      ++i;
    } else {
      std::size_t j = i;
      while (j < text.size()) {
        const auto d = static_cast<unsigned char>(text[j]);
        if (std::isspace(d) || is_split_punct(d)) break;
        ++j;
      }
      out.push_back({std::string(text.substr(i, j - i)), {i, j}});
      i = j;
    }
  }
  return out;
}

class Vocabulary {
 public:
  static constexpr TokenId kBos = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr std::string_view kBosText = "<bos>";
  static constexpr std::string_view kUnkText = "<unk>";

  Vocabulary() : tokens_{std::string(kBosText), std::string(kUnkText)} { reindex(); }

  // Content tokens in id order (ids start at 2).
  static Vocabulary from_tokens(const std::vector<std::string>& content) {
    Vocabulary v;
    for (const auto& t : content) {
      require(!t.empty(), "Vocabulary: empty token");
      require(t != kBosText && t != kUnkText, "Vocabulary: reserved token in content");
      v.tokens_.push_back(t);
    }
    v.reindex();
    require(v.index_.size() == v.tokens_.size(), "Vocabulary: duplicate token");
    require(v.size() >= 4, "Vocabulary: needs at least two content tokens");
    return v;
  }

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const {
    require(id < tokens_.size(), "Vocabulary: id out of range");
    return tokens_[id];
  }
  TokenId id_of(std::string_view text) const {
    auto it = index_.find(std::string(text));
    return it == index_.end() ? kUnk : it->second;
  }
  bool contains(std::string_view text) const { return index_.count(std::string(text)) != 0; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), "Vocabulary: cannot write " + path.string());
    for (std::size_t i = 2; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
  }

  static Vocabulary load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), "Vocabulary: cannot read " + path.string());
    std::vector<std::string> content;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      content.push_back(line);
    }
    return from_tokens(content);
  }

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], static_cast<TokenId>(i));
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

inline Vocabulary build_vocabulary(const std::vector<std::string>& corpus) {
  require(!corpus.empty(), "build_vocabulary: empty corpus");
  std::set<std::string> unique;
  for (const auto& text : corpus)
    for (auto& p : split_pieces(text)) unique.insert(std::move(p.text));
  return Vocabulary::from_tokens({unique.begin(), unique.end()});
}

struct TokenizedPrompt {
  std::vector<TokenId> ids;                     // ids[0] is BOS
  std::vector<CharSpan> spans;                  // spans[0] is the empty BOS span
  std::optional<std::size_t> mention_final_index;
};

inline TokenizedPrompt encode_with_span(std::string_view text, CharSpan mention, const Vocabulary& vocab) {
  require(mention.begin <= mention.end && mention.end <= text.size(), "encode_with_span: mention range outside text");
  TokenizedPrompt out;
  out.ids.push_back(Vocabulary::kBos);
  out.spans.push_back({0, 0});
  for (auto& p : split_pieces(text)) {
    out.ids.push_back(vocab.id_of(p.text));
    out.spans.push_back(p.span);
  }
  if (mention.empty()) return out;
  for (std::size_t i = 1; i < out.spans.size(); ++i) {
    const auto& s = out.spans[i];
    const bool inside = s.begin >= mention.begin && s.end <= mention.end;
    const bool overlaps = s.begin < mention.end && s.end > mention.begin;
    if (overlaps && !inside) {
      throw InvalidInput("encode_with_span: mention range splits token '" +
                         std::string(text.substr(s.begin, s.end - s.begin)) + "'");
    }
    if (inside) out.mention_final_index = i;
  }
  require(out.mention_final_index.has_value(), "encode_with_span: mention range covers no token");
  return out;
}

inline TokenizedPrompt encode(std::string_view text, const Vocabulary& vocab) {
  return encode_with_span(text, {}, vocab);
}

// Space-joined token texts, BOS omitted.
inline std::string decode(const std::vector<TokenId>& ids, const Vocabulary& vocab) {
  std::string out;
  for (TokenId id : ids) {
    if (id == Vocabulary::kBos) continue;
    if (!out.empty()) out += ' ';
    out += vocab.token(id);
  }
  return out;
}

inline std::string strip_whitespace(std::string_view s) {
  std::string out;
  for (char c : s)
    if (!std::isspace(static_cast<unsigned char>(c))) out += c;
  return out;
}

inline std::size_t token_count(std::string_view text) { return split_pieces(text).size(); }

inline TokenId first_token_of(std::string_view entity_name, const Vocabulary& vocab) {
  const auto pieces = split_pieces(entity_name);
  require(!pieces.empty(), "first_token_of: name has no tokens");
  const TokenId id = vocab.id_of(pieces.front().text);
  if (id == Vocabulary::kUnk) throw InvalidInput("first_token_of: '" + std::string(entity_name) + "' starts with an unknown token");
  return id;
}

}  // namespace twohop
