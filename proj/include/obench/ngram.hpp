#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "obench/corpus.hpp"
#include "obench/errors.hpp"
#include "obench/tokenizer.hpp"

namespace obench {

// Probability vector over the model vocabulary at one decoding step; the
// object every moderation transform consumes and produces.
struct TokenDistribution {
  std::vector<double> probs;

  double sum() const {
    double s = 0.0;
    for (double p : probs) s += p;
    return s;
  }

  void normalize() {
    double s = sum();
    if (s <= 0.0) return;
    for (double& p : probs) p /= s;
  }

  // Lowest index among maxima, which is the greedy tie-break everywhere.
  std::int32_t argmax() const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < probs.size(); ++i) {
      if (probs[i] > probs[best]) best = i;
    }
    return static_cast<std::int32_t>(best);
  }
};

struct ContextCounts {
  std::unordered_map<std::int32_t, std::int64_t> next;
  std::int64_t total = 0;
};

// Add-k smoothed n-gram model over word ids. The event space is the learned
// vocabulary of the tokenizer it was trained with; byte-fallback ids from
// foreign text are treated as never-observed events and are never generated.
//
// Immutable after training; concurrent reads are safe.
struct NGramLM {
  int order = 1;
  std::int32_t vocab_size = 0;
  double smoothing_k = 1.0;
  std::shared_ptr<const Tokenizer> tokenizer;  // null for hand-built models
  std::unordered_map<std::string, ContextCounts> counts;

  // Left-pad marker for conditionals near the sequence start. Internal to
  // context keys; never appears in a TokenSeq or a distribution.
  static constexpr std::int32_t kBeginMarker = -1;

  static std::string pack_context(std::span<const std::int32_t> ctx) {
    std::string key(ctx.size() * sizeof(std::int32_t), '\0');
    if (!ctx.empty()) std::memcpy(key.data(), ctx.data(), key.size());
    return key;
  }

  std::vector<std::int32_t> context_of(std::span<const std::int32_t> prefix) const {
    std::size_t want = static_cast<std::size_t>(order - 1);
    std::vector<std::int32_t> ctx(want, kBeginMarker);
    std::size_t have = std::min(prefix.size(), want);
    for (std::size_t i = 0; i < have; ++i) {
      ctx[want - have + i] = prefix[prefix.size() - have + i];
    }
    return ctx;
  }

  const ContextCounts* find_context(std::span<const std::int32_t> prefix) const {
    auto ctx = context_of(prefix);
    auto it = counts.find(pack_context(ctx));
    return it == counts.end() ? nullptr : &it->second;
  }

  double prob(std::span<const std::int32_t> prefix, std::int32_t token) const {
    const ContextCounts* cc = find_context(prefix);
    std::int64_t total = cc ? cc->total : 0;
    std::int64_t c = 0;
    if (cc && token >= 0 && token < vocab_size) {
      auto it = cc->next.find(token);
      if (it != cc->next.end()) c = it->second;
    }
    double denom = static_cast<double>(total) + smoothing_k * vocab_size;
    if (denom <= 0.0) return 1.0 / vocab_size;  // k == 0 on an unseen context
    if (token < 0 || token >= vocab_size) {
      // out-of-vocabulary event: give it the unseen-event mass so perplexity
      // on foreign text stays finite when smoothing is on
      return smoothing_k / denom;
    }
    return (static_cast<double>(c) + smoothing_k) / denom;
  }

  TokenDistribution next_token_distribution(std::span<const std::int32_t> prefix) const {
    TokenDistribution dist;
    const ContextCounts* cc = find_context(prefix);
    std::int64_t total = cc ? cc->total : 0;
    double denom = static_cast<double>(total) + smoothing_k * vocab_size;
    if (denom <= 0.0) {
      dist.probs.assign(static_cast<std::size_t>(vocab_size), 1.0 / vocab_size);
      return dist;
    }
    dist.probs.assign(static_cast<std::size_t>(vocab_size), smoothing_k / denom);
    if (cc) {
      for (const auto& [tok, c] : cc->next) {
        dist.probs[static_cast<std::size_t>(tok)] =
            (static_cast<double>(c) + smoothing_k) / denom;
      }
    }
    return dist;
  }
};

inline NGramLM train_ngram(std::shared_ptr<const Tokenizer> tok, const Corpus& corpus,
                           int order, double smoothing_k) {
  if (order < 1) throw ConfigError("n-gram order must be >= 1");
  if (smoothing_k <= 0.0) throw ConfigError("smoothing_k must be > 0");
  TokenSeq seq = tok->tokenize(corpus.text);
  if (seq.ids.size() < static_cast<std::size_t>(order)) {
    throw CorpusTooShort("corpus shorter than n-gram order");
  }
  NGramLM lm;
  lm.order = order;
  lm.vocab_size = tok->learned_size();
  lm.smoothing_k = smoothing_k;
  lm.tokenizer = std::move(tok);
  const std::size_t ctx_len = static_cast<std::size_t>(order - 1);
  std::vector<std::int32_t> ctx(ctx_len, NGramLM::kBeginMarker);
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    for (std::size_t j = 0; j < ctx_len; ++j) {
      std::ptrdiff_t src = static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(ctx_len - j);
      ctx[j] = src >= 0 ? seq.ids[static_cast<std::size_t>(src)] : NGramLM::kBeginMarker;
    }
    auto& cc = lm.counts[NGramLM::pack_context(ctx)];
    cc.next[seq.ids[i]] += 1;
    cc.total += 1;
  }
  return lm;
}

// exp of negative mean token log-likelihood, natural base, each token
// conditioned on its preceding context.
inline double perplexity(const NGramLM& lm, std::string_view text) {
  if (!lm.tokenizer) throw Error("perplexity needs a tokenizer-backed model");
  TokenSeq seq = lm.tokenizer->tokenize(text);
  if (seq.ids.empty()) throw EmptyText("perplexity of empty text");
  double acc = 0.0;
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    double p = lm.prob(std::span(seq.ids.data(), i), seq.ids[i]);
    if (p <= 0.0) return std::numeric_limits<double>::infinity();
    acc += std::log(p);
  }
  return std::exp(-acc / static_cast<double>(seq.ids.size()));
}

// Greedy argmax continuation of length n; ties break to the lowest token id,
// so proposals are prefix-stable and fully deterministic.
inline std::vector<std::int32_t> draft_propose(const NGramLM& draft,
                                               std::span<const std::int32_t> prefix, int n) {
  std::vector<std::int32_t> ids(prefix.begin(), prefix.end());
  std::vector<std::int32_t> out;
  out.reserve(static_cast<std::size_t>(std::max(n, 0)));
  for (int i = 0; i < n; ++i) {
    std::int32_t t = draft.next_token_distribution(ids).argmax();
    ids.push_back(t);
    out.push_back(t);
  }
  return out;
}

// temperature == 0 is greedy; otherwise inverse-CDF sampling of p^(1/T) with
// a single uniform draw, deterministic for a fixed rng state.
inline std::int32_t sample_token(const TokenDistribution& dist, double temperature,
                                 std::mt19937_64& rng) {
  if (temperature <= 0.0) return dist.argmax();
  std::vector<double> w(dist.probs.size());
  double total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = dist.probs[i] > 0.0 ? std::pow(dist.probs[i], 1.0 / temperature) : 0.0;
    total += w[i];
  }
  if (total <= 0.0) return dist.argmax();
  double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    acc += w[i];
    if (u < acc) return static_cast<std::int32_t>(i);
  }
  return static_cast<std::int32_t>(w.size() - 1);
}

inline std::vector<std::int32_t> generate_greedy(const NGramLM& lm,
                                                 std::span<const std::int32_t> prefix,
                                                 int max_tokens) {
  return draft_propose(lm, prefix, max_tokens);
}

// --- model persistence: JSON count table with a versioned header ---

inline void save_model(const std::filesystem::path& path, const NGramLM& lm) {
  if (!lm.tokenizer) throw Error("cannot save a model without a tokenizer");
  nlohmann::json j;
  j["format"] = "obench-ngram";
  j["version"] = 1;
  j["order"] = lm.order;
  j["vocab_size"] = lm.vocab_size;
  j["smoothing_k"] = lm.smoothing_k;
  j["vocab"] = lm.tokenizer->vocab_snapshot();
  nlohmann::json contexts = nlohmann::json::array();
  for (const auto& [key, cc] : lm.counts) {
    nlohmann::json entry;
    std::vector<std::int32_t> ctx(key.size() / sizeof(std::int32_t));
    if (!ctx.empty()) std::memcpy(ctx.data(), key.data(), key.size());
    entry["ctx"] = ctx;
    nlohmann::json next = nlohmann::json::object();
    for (const auto& [tok, c] : cc.next) next[std::to_string(tok)] = c;
    entry["next"] = std::move(next);
    contexts.push_back(std::move(entry));
  }
  j["contexts"] = std::move(contexts);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write model file: " + path.string());
  out << j.dump();
}

inline NGramLM load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile("cannot open model file: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed model file: " + std::string(e.what()));
  }
  if (j.value("format", "") != "obench-ngram" || j.value("version", 0) != 1) {
    throw IoError("unsupported model file header: " + path.string());
  }
  NGramLM lm;
  lm.order = j.at("order").get<int>();
  lm.vocab_size = j.at("vocab_size").get<std::int32_t>();
  lm.smoothing_k = j.at("smoothing_k").get<double>();
  lm.tokenizer = std::make_shared<Tokenizer>(
      Tokenizer::from_vocab(j.at("vocab").get<std::vector<std::string>>()));
  for (const auto& entry : j.at("contexts")) {
    auto ctx = entry.at("ctx").get<std::vector<std::int32_t>>();
    ContextCounts cc;
    for (const auto& [tok, c] : entry.at("next").items()) {
      std::int64_t count = c.get<std::int64_t>();
      cc.next[static_cast<std::int32_t>(std::stol(tok))] = count;
      cc.total += count;
    }
    lm.counts[NGramLM::pack_context(ctx)] = std::move(cc);
  }
  return lm;
}

}  // namespace obench
