#pragma once

#include <array>
#include <cctype>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "obench/corpus.hpp"
#include "obench/errors.hpp"

namespace obench {

struct TokenSeq {
  std::vector<std::int32_t> ids;
  std::int32_t vocab_size = 0;
  // Whitespace bookkeeping for exact reconstruction: gaps[i] is the whitespace
  // run preceding ids[i], gaps[ids.size()] is trailing whitespace. Filled by
  // Tokenizer::tokenize; synthetic sequences (model output) leave it empty.
  std::vector<std::string> gaps;

  bool has_gaps() const { return gaps.size() == ids.size() + 1; }
  std::size_t size() const { return ids.size(); }
};

// Reversible word-level tokenizer. A token is a maximal alphanumeric run or a
// single punctuation character; whitespace is a delimiter carried out-of-band
// so detokenize(tokenize(s)) == s for any input. Segments never seen at
// training time fall back to reserved per-byte ids above the learned
// vocabulary, keeping tokenize total on arbitrary UTF-8.
//
// Immutable after train()/from_vocab(); safe for concurrent reads.
class Tokenizer {
 public:
  struct Segment {
    std::size_t gap_begin = 0;  // start of the preceding whitespace run
    std::size_t begin = 0;      // first char of the token
    std::size_t end = 0;        // one past the last char
  };

  static bool is_ws_char(unsigned char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
  }
  // Bytes >= 0x80 are treated as word characters so multi-byte UTF-8 words
  // stay in one segment.
  static bool is_word_char(unsigned char c) {
    return std::isalnum(c) != 0 || c >= 0x80;
  }

  static std::vector<Segment> segment(std::string_view text) {
    std::vector<Segment> segs;
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
      std::size_t gap_begin = i;
      while (i < n && is_ws_char(static_cast<unsigned char>(text[i]))) ++i;
      if (i == n) break;  // trailing whitespace carries no token
      std::size_t begin = i;
      if (is_word_char(static_cast<unsigned char>(text[i]))) {
        while (i < n && is_word_char(static_cast<unsigned char>(text[i]))) ++i;
      } else {
        ++i;  // single punctuation char
      }
      segs.push_back({gap_begin, begin, i});
    }
    return segs;
  }

  static std::size_t count_tokens(std::string_view text) { return segment(text).size(); }

  // Learns the vocabulary from text, ids assigned in first-appearance order.
  static Tokenizer train(std::string_view text) {
    Tokenizer tok;
    for (const auto& seg : segment(text)) {
      tok.intern(std::string(text.substr(seg.begin, seg.end - seg.begin)));
    }
    return tok;
  }

  static Tokenizer from_vocab(std::vector<std::string> vocab) {
    Tokenizer tok;
    for (auto& v : vocab) tok.intern(std::move(v));
    return tok;
  }

  std::int32_t learned_size() const { return static_cast<std::int32_t>(vocab_.size()); }
  std::int32_t total_size() const { return learned_size() + 256; }
  std::int32_t byte_id(unsigned char b) const { return learned_size() + b; }
  bool is_byte_id(std::int32_t id) const { return id >= learned_size() && id < total_size(); }

  std::optional<std::int32_t> lookup(std::string_view token) const {
    auto it = index_.find(std::string(token));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::string_view token_text(std::int32_t id) const {
    if (id >= 0 && id < learned_size()) return vocab_[static_cast<std::size_t>(id)];
    if (is_byte_id(id)) {
      return std::string_view(&kByteChars[id - learned_size()], 1);
    }
    return {};
  }

  bool is_punct_token(std::int32_t id) const {
    std::string_view s = token_text(id);
    return s.size() == 1 && !is_word_char(static_cast<unsigned char>(s[0])) &&
           !is_ws_char(static_cast<unsigned char>(s[0]));
  }

  TokenSeq tokenize(std::string_view text) const {
    TokenSeq seq;
    seq.vocab_size = total_size();
    std::size_t last_end = 0;
    for (const auto& seg : segment(text)) {
      std::string gap(text.substr(seg.gap_begin, seg.begin - seg.gap_begin));
      std::string_view piece = text.substr(seg.begin, seg.end - seg.begin);
      auto it = index_.find(std::string(piece));
      if (it != index_.end()) {
        seq.ids.push_back(it->second);
        seq.gaps.push_back(std::move(gap));
      } else {
        // byte fallback: first byte carries the gap, the rest abut
        for (std::size_t k = 0; k < piece.size(); ++k) {
          seq.ids.push_back(byte_id(static_cast<unsigned char>(piece[k])));
          seq.gaps.push_back(k == 0 ? std::move(gap) : std::string());
        }
      }
      last_end = seg.end;
    }
    seq.gaps.push_back(std::string(text.substr(last_end)));
    return seq;
  }

  std::string detokenize(const TokenSeq& seq) const {
    if (seq.has_gaps()) {
      std::string out;
      for (std::size_t i = 0; i < seq.ids.size(); ++i) {
        out += seq.gaps[i];
        out += token_text(seq.ids[i]);
      }
      out += seq.gaps.back();
      return out;
    }
    return join(seq.ids);
  }

  // Canonical spacing for generated ids: words take a single leading space,
  // punctuation and byte-fallback runs attach directly.
  static constexpr std::int32_t kNoPrev = -2;

  void append_joined(std::string& out, std::int32_t id, std::int32_t prev_id) const {
    std::string_view s = token_text(id);
    if (s.empty()) return;
    if (is_byte_id(id)) {
      bool prev_was_byte = prev_id != kNoPrev && is_byte_id(prev_id);
      if (!prev_was_byte && !out.empty() && is_word_char(static_cast<unsigned char>(s[0])) &&
          is_word_char(static_cast<unsigned char>(out.back()))) {
        out += ' ';
      }
      out += s;
      return;
    }
    if (!is_punct_token(id) && !out.empty()) out += ' ';
    out += s;
  }

  std::string join(std::span<const std::int32_t> ids) const {
    std::string out;
    std::int32_t prev = kNoPrev;
    for (std::int32_t id : ids) {
      append_joined(out, id, prev);
      prev = id;
    }
    return out;
  }

  std::vector<std::string> vocab_snapshot() const { return vocab_; }

 private:
  void intern(std::string token) {
    if (index_.contains(token)) return;
    index_.emplace(token, static_cast<std::int32_t>(vocab_.size()));
    vocab_.push_back(std::move(token));
  }

  static inline const std::array<char, 256> kByteChars = [] {
    std::array<char, 256> a{};
    for (int i = 0; i < 256; ++i) a[static_cast<std::size_t>(i)] = static_cast<char>(i);
    return a;
  }();

  std::vector<std::string> vocab_;
  std::unordered_map<std::string, std::int32_t> index_;
};

// Longest prefix of the corpus that tokenizes to exactly n tokens. Strictly
// monotone in n: take_tokens(c, n) is a prefix of take_tokens(c, m) for n < m.
inline std::string take_tokens(const Corpus& corpus, std::size_t n) {
  if (n == 0) return "";
  auto segs = Tokenizer::segment(corpus.text);
  if (segs.size() < n) {
    throw CorpusTooShort("corpus has " + std::to_string(segs.size()) +
                         " tokens, need " + std::to_string(n));
  }
  return std::string(corpus.text.substr(0, segs[n - 1].end));
}

}  // namespace obench
