#pragma once

// Brute-force n-gram oracle, kept independent of the library implementation:
// probabilities come from rescanning the raw training token list on every
// query, and perplexity from token-by-token log accumulation.

#include <cmath>
#include <cstdint>
#include <vector>

namespace oracle {

// p(token | last order-1 ids of prefix) under add-k smoothing, counting by
// scanning the training sequence. Positions before the start match a -1 pad.
inline double ngram_prob(const std::vector<std::int32_t>& training, int order,
                         double k, std::int32_t vocab_size,
                         const std::vector<std::int32_t>& prefix, std::int32_t token) {
  const int ctx_len = order - 1;
  auto ctx_at = [&](const std::vector<std::int32_t>& seq, long pos, int back) {
    long idx = pos - back;
    return idx >= 0 ? seq[static_cast<std::size_t>(idx)] : -1;
  };

  long total = 0;
  long match = 0;
  for (long pos = 0; pos < static_cast<long>(training.size()); ++pos) {
    bool same = true;
    for (int b = 1; b <= ctx_len; ++b) {
      if (ctx_at(training, pos, b) != ctx_at(prefix, static_cast<long>(prefix.size()), b)) {
        same = false;
        break;
      }
    }
    if (!same) continue;
    ++total;
    if (training[static_cast<std::size_t>(pos)] == token) ++match;
  }

  double denom = static_cast<double>(total) + k * vocab_size;
  if (denom <= 0.0) return 1.0 / vocab_size;
  return (static_cast<double>(match) + k) / denom;
}

inline std::vector<double> ngram_distribution(const std::vector<std::int32_t>& training,
                                              int order, double k, std::int32_t vocab_size,
                                              const std::vector<std::int32_t>& prefix) {
  std::vector<double> probs(static_cast<std::size_t>(vocab_size));
  for (std::int32_t t = 0; t < vocab_size; ++t) {
    probs[static_cast<std::size_t>(t)] = ngram_prob(training, order, k, vocab_size, prefix, t);
  }
  return probs;
}

inline double perplexity(const std::vector<std::int32_t>& training, int order, double k,
                         std::int32_t vocab_size, const std::vector<std::int32_t>& eval) {
  double acc = 0.0;
  std::vector<std::int32_t> prefix;
  for (std::int32_t token : eval) {
    acc += std::log(ngram_prob(training, order, k, vocab_size, prefix, token));
    prefix.push_back(token);
  }
  return std::exp(-acc / static_cast<double>(eval.size()));
}

}  // namespace oracle
