#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <random>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "obench/ngram.hpp"
#include "obench/text.hpp"
#include "obench/tokenizer.hpp"

namespace obench {

// Knobs for the three output-side moderation mechanisms: keyword banning,
// redirection, and the speculative thought gate.
struct ModerationPolicy {
  std::vector<std::string> banned_keywords;
  std::string redirect_phrase = "... nevermind, let";
  int thought_horizon = 10;  // n: draft tokens scanned ahead of emission
  double lambda = 0.75;      // inhibition strength in [0,1]
  int max_rounds = 4;        // re-draft limit per emitted token

  // lambda semantics. strength: p' ~ p * (1 - lambda), so lambda=1 is a hard
  // ban and lambda=0 a no-op. factor: p' ~ p * lambda (the inverted reading).
  enum class LambdaMode { strength, factor };
  LambdaMode lambda_mode = LambdaMode::strength;

  // Which thought tokens get inhibited when a violation is found.
  enum class ImplicatedMode { from_first_violation, whole_proposal };
  ImplicatedMode implicated_mode = ImplicatedMode::from_first_violation;

  void validate() const {
    if (lambda < 0.0 || lambda > 1.0) throw ConfigError("lambda must be in [0,1]");
    if (thought_horizon < 1) throw ConfigError("thought horizon n must be >= 1");
    if (max_rounds < 1) throw ConfigError("max_rounds must be >= 1");
    for (const auto& kw : banned_keywords) {
      if (kw.empty()) throw ConfigError("banned keywords must be non-empty");
    }
  }
};

struct ModerationEvent {
  enum class Kind { ban, redirect, inhibit };
  Kind kind = Kind::ban;
  int step = 0;  // output token index where the transform fired
  std::vector<std::int32_t> implicated_tokens;
  std::string keyword;
};

inline const char* event_kind_name(ModerationEvent::Kind k) {
  switch (k) {
    case ModerationEvent::Kind::ban: return "ban";
    case ModerationEvent::Kind::redirect: return "redirect";
    case ModerationEvent::Kind::inhibit: return "inhibit";
  }
  return "?";
}

namespace detail {

inline std::size_t longest_keyword(const ModerationPolicy& policy) {
  std::size_t n = 0;
  for (const auto& kw : policy.banned_keywords) n = std::max(n, kw.size());
  return n;
}

// Tail of the emitted text long enough for any keyword to straddle the
// boundary between old text and a new completion.
inline std::string folded_tail(std::string_view emitted, std::size_t kw_len) {
  std::size_t keep = kw_len > 0 ? kw_len - 1 : 0;
  std::size_t start = emitted.size() > keep ? emitted.size() - keep : 0;
  return fold(emitted.substr(start));
}

// True when appending `appended` to text ending in `tail` creates a keyword
// occurrence that ends inside the appended part.
inline bool completes_keyword(const std::string& tail_folded, std::string_view appended_folded,
                              const std::vector<std::string>& keywords_folded,
                              std::string* which = nullptr,
                              const std::vector<std::string>* originals = nullptr) {
  std::string window = tail_folded;
  window += appended_folded;
  for (std::size_t k = 0; k < keywords_folded.size(); ++k) {
    const auto& kw = keywords_folded[k];
    if (kw.empty()) continue;
    std::size_t pos = 0;
    while ((pos = window.find(kw, pos)) != std::string::npos) {
      if (pos + kw.size() > tail_folded.size()) {
        if (which) *which = originals ? (*originals)[k] : kw;
        return true;
      }
      ++pos;
    }
  }
  return false;
}

inline std::vector<std::string> fold_all(const std::vector<std::string>& v) {
  std::vector<std::string> out;
  out.reserve(v.size());
  for (const auto& s : v) out.push_back(fold(s));
  return out;
}

}  // namespace detail

// Zeroes the probability of every token whose emission would complete a
// banned keyword given the text emitted so far, then renormalizes. If that
// removes all probability mass, falls back to uniform over the non-banned
// vocabulary. prev_id is the previously emitted token (kNoPrev at the start);
// it fixes the spacing the check sees, which must match what generation
// would actually append.
inline TokenDistribution keyword_ban(const TokenDistribution& dist,
                                     std::string_view emitted_suffix,
                                     const Tokenizer& tokenizer,
                                     const ModerationPolicy& policy,
                                     std::int32_t prev_id = Tokenizer::kNoPrev,
                                     std::vector<std::int32_t>* banned_out = nullptr,
                                     std::string* keyword_out = nullptr) {
  if (policy.banned_keywords.empty()) return dist;
  auto keywords_folded = detail::fold_all(policy.banned_keywords);
  std::string tail = detail::folded_tail(emitted_suffix, detail::longest_keyword(policy));

  TokenDistribution out = dist;
  std::vector<bool> banned(out.probs.size(), false);
  std::string scratch;
  for (std::size_t id = 0; id < out.probs.size(); ++id) {
    scratch.clear();
    // Spacing replica of append_joined: empty "emitted" stands in for the
    // real suffix, so seed a word char when the suffix ends in one.
    scratch = emitted_suffix.empty() ? "" : std::string(1, emitted_suffix.back());
    std::size_t base = scratch.size();
    tokenizer.append_joined(scratch, static_cast<std::int32_t>(id), prev_id);
    std::string appended = fold(scratch.substr(base));
    std::string which;
    if (detail::completes_keyword(tail, appended, keywords_folded, &which,
                                  &policy.banned_keywords)) {
      banned[id] = true;
      if (out.probs[id] > 0.0 && banned_out) {
        banned_out->push_back(static_cast<std::int32_t>(id));
      }
      if (out.probs[id] > 0.0 && keyword_out && keyword_out->empty()) *keyword_out = which;
      out.probs[id] = 0.0;
    }
  }

  double remaining = out.sum();
  if (remaining > 0.0) {
    for (double& p : out.probs) p /= remaining;
    return out;
  }
  // Everything carrying mass was banned: uniform over the non-banned vocab.
  std::size_t allowed = 0;
  for (bool b : banned) allowed += b ? 0 : 1;
  if (allowed == 0) {
    out.probs.assign(out.probs.size(), 1.0 / static_cast<double>(out.probs.size()));
    return out;
  }
  for (std::size_t id = 0; id < out.probs.size(); ++id) {
    out.probs[id] = banned[id] ? 0.0 : 1.0 / static_cast<double>(allowed);
  }
  return out;
}

// Scales the probability of each implicated token by (1 - lambda) (strength
// mode) or lambda (factor mode) and renormalizes. Monotone in lambda for a
// fixed implicated set; lambda = 1 in strength mode zeroes them exactly.
inline TokenDistribution inhibit(const TokenDistribution& dist,
                                 std::span<const std::int32_t> implicated, double lambda,
                                 ModerationPolicy::LambdaMode mode =
                                     ModerationPolicy::LambdaMode::strength) {
  double factor = mode == ModerationPolicy::LambdaMode::strength ? 1.0 - lambda : lambda;
  if (factor == 1.0) return dist;  // exact identity, no renormalization drift
  TokenDistribution out = dist;
  for (std::int32_t id : implicated) {
    if (id >= 0 && static_cast<std::size_t>(id) < out.probs.size()) {
      out.probs[static_cast<std::size_t>(id)] *= factor;
    }
  }
  double s = out.sum();
  if (s > 0.0) {
    for (double& p : out.probs) p /= s;
  }
  return out;
}

struct ThoughtScan {
  bool violation = false;
  int first_violating_index = 0;  // thought token index where the keyword lands
  std::string keyword;
};

namespace detail {

// Renders the thought after the emitted tail and maps the first keyword
// occurrence back to the thought token whose text it lands on.
inline ThoughtScan scan_thought(const std::vector<std::int32_t>& thought,
                                std::string_view emitted_tail, std::int32_t prev_id,
                                const Tokenizer& tokenizer, const ModerationPolicy& policy,
                                const std::vector<std::string>& keywords_folded) {
  ThoughtScan scan;
  std::string text(emitted_tail);
  std::size_t tail_len = text.size();
  std::vector<std::size_t> tok_end(thought.size());
  std::int32_t prev = prev_id;
  for (std::size_t i = 0; i < thought.size(); ++i) {
    tokenizer.append_joined(text, thought[i], prev);
    tok_end[i] = text.size();
    prev = thought[i];
  }
  std::string folded_text = fold(text);

  std::size_t best_pos = std::string::npos;
  for (std::size_t k = 0; k < keywords_folded.size(); ++k) {
    std::size_t pos = 0;
    while ((pos = folded_text.find(keywords_folded[k], pos)) != std::string::npos) {
      if (pos + keywords_folded[k].size() > tail_len) {  // must touch the thought
        if (pos < best_pos) {
          best_pos = pos;
          scan.keyword = policy.banned_keywords[k];
        }
        break;
      }
      ++pos;
    }
  }
  if (best_pos == std::string::npos) return scan;

  scan.violation = true;
  scan.first_violating_index = 0;
  for (std::size_t i = 0; i < thought.size(); ++i) {
    if (tok_end[i] > best_pos) {  // first thought token overlapping the match
      scan.first_violating_index = static_cast<int>(i);
      break;
    }
  }
  return scan;
}

}  // namespace detail

struct ThoughtGateResult {
  TokenDistribution dist;
  std::vector<std::vector<std::int32_t>> thoughts;  // one proposal per round
  std::vector<ModerationEvent> events;              // step left at 0 for the caller
  bool clean = true;
  int rounds = 0;
};

// Speculative thought gate. The draft model proposes n tokens ahead; if the
// rendered thought contains a banned keyword, every distinct token id from
// the first violating position onward is inhibited by lambda in the main
// model's distribution. The gate then re-drafts along the moderated greedy
// path, inhibiting only newly implicated ids (each id is scaled at most once
// per step), until the thought is clean, no new ids turn up, or max_rounds
// is hit. A clean first proposal returns the main distribution untouched.
inline ThoughtGateResult thought_gate_step(const NGramLM& main_lm, const NGramLM& draft_lm,
                                           std::span<const std::int32_t> prefix,
                                           std::string_view emitted_tail,
                                           const Tokenizer& tokenizer,
                                           const ModerationPolicy& policy) {
  policy.validate();
  ThoughtGateResult result;
  result.dist = main_lm.next_token_distribution(prefix);
  if (policy.banned_keywords.empty()) return result;

  auto keywords_folded = detail::fold_all(policy.banned_keywords);
  std::string tail = detail::folded_tail(emitted_tail, detail::longest_keyword(policy));
  std::int32_t prev_id = prefix.empty() ? Tokenizer::kNoPrev : prefix.back();

  std::set<std::int32_t> already;
  std::vector<std::int32_t> thought = draft_propose(draft_lm, prefix, policy.thought_horizon);

  while (true) {
    ++result.rounds;
    result.thoughts.push_back(thought);
    ThoughtScan scan =
        detail::scan_thought(thought, tail, prev_id, tokenizer, policy, keywords_folded);
    if (!scan.violation) {
      result.clean = true;
      return result;
    }
    result.clean = false;

    std::size_t from = policy.implicated_mode == ModerationPolicy::ImplicatedMode::whole_proposal
                           ? 0
                           : static_cast<std::size_t>(scan.first_violating_index);
    std::vector<std::int32_t> implicated;
    for (std::size_t i = from; i < thought.size(); ++i) {
      if (std::find(implicated.begin(), implicated.end(), thought[i]) == implicated.end()) {
        implicated.push_back(thought[i]);
      }
    }

    ModerationEvent ev;
    ev.kind = ModerationEvent::Kind::inhibit;
    ev.keyword = scan.keyword;
    ev.implicated_tokens = implicated;
    result.events.push_back(std::move(ev));

    std::vector<std::int32_t> fresh;
    for (std::int32_t id : implicated) {
      if (!already.contains(id)) fresh.push_back(id);
    }
    if (fresh.empty()) return result;  // no progress to make
    result.dist = inhibit(result.dist, fresh, policy.lambda, policy.lambda_mode);
    already.insert(fresh.begin(), fresh.end());

    if (result.rounds >= policy.max_rounds) return result;

    // Re-draft under the moderated greedy path: the gated distribution picks
    // the first token, the draft rolls the rest forward.
    std::int32_t forced = result.dist.argmax();
    std::vector<std::int32_t> extended(prefix.begin(), prefix.end());
    extended.push_back(forced);
    std::vector<std::int32_t> next_thought{forced};
    auto cont = draft_propose(draft_lm, extended, policy.thought_horizon - 1);
    next_thought.insert(next_thought.end(), cont.begin(), cont.end());
    if (next_thought == thought) return result;  // fixed point, nothing new
    thought = std::move(next_thought);
  }
}

enum class SamplerMode { none, ban, redirect, thought_gate };

inline const char* sampler_mode_name(SamplerMode m) {
  switch (m) {
    case SamplerMode::none: return "none";
    case SamplerMode::ban: return "ban";
    case SamplerMode::redirect: return "redirect";
    case SamplerMode::thought_gate: return "thought-gate";
  }
  return "?";
}

struct GenerationOutput {
  std::string text;  // generated continuation only, canonical spacing
  std::vector<std::int32_t> ids;
  std::vector<ModerationEvent> events;
  double tokens_per_second = 0.0;
  bool gate_exhausted = false;  // a thought stayed dirty through max_rounds
};

// Full generation loop with the chosen transform applied at every step.
// Violation checks run against the emitted text including the prompt tail,
// so keywords cannot be completed across the prompt/output boundary either.
inline GenerationOutput run_moderated_generation(const NGramLM& main_lm,
                                                 const NGramLM& draft_lm,
                                                 std::string_view prompt,
                                                 const ModerationPolicy& policy,
                                                 SamplerMode mode, int max_tokens,
                                                 std::uint64_t seed,
                                                 double temperature = 0.0) {
  if (mode != SamplerMode::none) policy.validate();
  const Tokenizer& tokenizer = *main_lm.tokenizer;
  auto started = std::chrono::steady_clock::now();

  TokenSeq prompt_seq = tokenizer.tokenize(prompt);
  std::vector<std::int32_t> prefix = prompt_seq.ids;
  std::string text(prompt);

  GenerationOutput out;
  std::mt19937_64 rng(seed);
  auto keywords_folded = detail::fold_all(policy.banned_keywords);
  int consecutive_redirects = 0;

  while (static_cast<int>(out.ids.size()) < max_tokens) {
    int step = static_cast<int>(out.ids.size());
    std::int32_t prev_id = prefix.empty() ? Tokenizer::kNoPrev : prefix.back();

    std::int32_t chosen = -1;
    switch (mode) {
      case SamplerMode::none: {
        chosen = sample_token(main_lm.next_token_distribution(prefix), temperature, rng);
        break;
      }
      case SamplerMode::ban: {
        std::vector<std::int32_t> banned;
        std::string keyword;
        TokenDistribution dist =
            keyword_ban(main_lm.next_token_distribution(prefix), text, tokenizer, policy,
                        prev_id, &banned, &keyword);
        if (!banned.empty()) {
          out.events.push_back({ModerationEvent::Kind::ban, step, banned, keyword});
        }
        chosen = sample_token(dist, temperature, rng);
        break;
      }
      case SamplerMode::redirect: {
        TokenDistribution dist = main_lm.next_token_distribution(prefix);
        std::int32_t candidate = sample_token(dist, temperature, rng);
        std::string tail = detail::folded_tail(text, detail::longest_keyword(policy));
        std::string scratch = text.empty() ? "" : std::string(1, text.back());
        std::size_t base = scratch.size();
        tokenizer.append_joined(scratch, candidate, prev_id);
        std::string appended = fold(scratch.substr(base));
        std::string keyword;
        if (!policy.banned_keywords.empty() &&
            detail::completes_keyword(tail, appended, keywords_folded, &keyword,
                                      &policy.banned_keywords)) {
          ++consecutive_redirects;
          if (consecutive_redirects > policy.max_rounds) {
            // redirect loop: the model keeps walking back into the keyword,
            // so hard-ban this step instead
            std::vector<std::int32_t> banned;
            TokenDistribution safe = keyword_ban(dist, text, tokenizer, policy, prev_id,
                                                 &banned, &keyword);
            out.events.push_back({ModerationEvent::Kind::ban, step, banned, keyword});
            chosen = sample_token(safe, temperature, rng);
            consecutive_redirects = 0;
            break;
          }
          // discard the keyword-completing token, splice the redirect phrase
          out.events.push_back({ModerationEvent::Kind::redirect, step, {candidate}, keyword});
          TokenSeq phrase = tokenizer.tokenize(policy.redirect_phrase);
          if (!text.empty() && !Tokenizer::is_ws_char(static_cast<unsigned char>(text.back()))) {
            text += ' ';
          }
          text += policy.redirect_phrase;
          for (std::int32_t id : phrase.ids) {
            prefix.push_back(id);
            out.ids.push_back(id);
          }
          continue;
        }
        consecutive_redirects = 0;
        chosen = candidate;
        break;
      }
      case SamplerMode::thought_gate: {
        ThoughtGateResult gate =
            thought_gate_step(main_lm, draft_lm, prefix, text, tokenizer, policy);
        for (auto& ev : gate.events) {
          ev.step = step;
          out.events.push_back(std::move(ev));
        }
        if (!gate.clean) out.gate_exhausted = true;
        chosen = sample_token(gate.dist, temperature, rng);
        break;
      }
    }

    tokenizer.append_joined(text, chosen, prev_id);
    prefix.push_back(chosen);
    out.ids.push_back(chosen);
  }

  out.text = tokenizer.join(out.ids);
  double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
                       .count();
  out.tokens_per_second =
      static_cast<double>(out.ids.size()) / std::max(elapsed, 1e-9);
  return out;
}

}  // namespace obench
