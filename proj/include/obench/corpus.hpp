#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "obench/errors.hpp"
#include "obench/text.hpp"

namespace obench {

// Haystack text plus where it came from. Immutable once built; safe for
// unrestricted concurrent reads.
struct Corpus {
  std::string text;
  std::vector<std::string> source_paths;
};

namespace detail {

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw MissingFile("cannot open file: " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

}  // namespace detail

// Loads filler text. Each path may be a file or a directory (expanded
// recursively to its regular files). The expanded list is sorted and the
// contents are concatenated with single newline separators.
inline Corpus load_corpus(const std::vector<std::string>& paths) {
  namespace fs = std::filesystem;
  std::vector<std::string> files;
  for (const auto& p : paths) {
    fs::path path(p);
    if (!fs::exists(path)) throw MissingFile("no such corpus path: " + p);
    if (fs::is_directory(path)) {
      for (const auto& entry : fs::recursive_directory_iterator(path)) {
        if (entry.is_regular_file()) files.push_back(entry.path().string());
      }
    } else {
      files.push_back(path.string());
    }
  }
  std::sort(files.begin(), files.end());
  Corpus corpus;
  for (const auto& f : files) {
    std::string content = detail::read_file(f);
    if (!is_valid_utf8(content)) throw InvalidEncoding("not valid UTF-8: " + f);
    if (!corpus.text.empty()) corpus.text += '\n';
    corpus.text += content;
    corpus.source_paths.push_back(f);
  }
  if (corpus.text.empty()) throw CorpusTooShort("corpus is empty");
  return corpus;
}

// Deterministic filler for offline runs and tests: plain sentences drawn from
// a fixed word bank. Emits at least min_tokens word/punctuation tokens and
// contains none of the builtin needle phrases.
inline std::string synthetic_corpus(int min_tokens, std::uint64_t seed = 17) {
  static constexpr std::array<const char*, 60> kWords = {
      "the",     "quiet",   "harbor",  "holds",   "small",   "boats",
      "every",   "morning", "a",       "baker",   "carries", "bread",
      "across",  "narrow",  "streets", "while",   "gulls",   "circle",
      "over",    "water",   "old",     "clocks",  "keep",    "their",
      "own",     "time",    "and",     "nobody",  "minds",   "much",
      "rain",    "falls",   "on",      "tin",     "roofs",   "with",
      "steady",  "patience","lamps",   "glow",    "behind",  "curtained",
      "windows", "as",      "evening", "settles", "into",    "long",
      "shadows", "children","chase",   "paper",   "kites",   "down",
      "worn",    "stone",   "steps",   "near",    "market",  "square"};

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, kWords.size() - 1);
  std::uniform_int_distribution<int> sentence_len(6, 14);
  std::uniform_int_distribution<int> para_len(4, 8);

  std::string out;
  int tokens = 0;
  int sentences_in_para = 0;
  int para_target = para_len(rng);
  while (tokens < min_tokens) {
    int words = sentence_len(rng);
    bool comma = words >= 9;
    int comma_at = comma ? words / 2 : -1;
    for (int w = 0; w < words; ++w) {
      std::string word = kWords[pick(rng)];
      if (w == 0) {
        word[0] = static_cast<char>(word[0] - 'a' + 'A');
        if (!out.empty()) out += ' ';
      } else {
        out += ' ';
      }
      out += word;
      ++tokens;
      if (w == comma_at) {
        out += ',';
        ++tokens;
      }
    }
    out += '.';
    ++tokens;
    if (++sentences_in_para >= para_target) {
      out += "\n\n";
      sentences_in_para = 0;
      para_target = para_len(rng);
    }
  }
  return out;
}

}  // namespace obench
