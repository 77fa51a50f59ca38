#pragma once

#include <algorithm>
#include <string>
#include <string_view>
#include <vector>

#include "obench/harness.hpp"
#include "obench/text.hpp"

namespace obench {

enum class CellStatus { ok, error };

struct ScoreCell {
  std::string case_name;
  std::string endpoint;
  double depth = 0.0;
  int length = 0;
  std::string raw_response;
  std::vector<std::string> matched_rewards;
  std::vector<std::string> matched_penalties;
  double score = 0.0;
  CellStatus status = CellStatus::ok;
  std::string error_kind;  // e.g. "Timeout"; empty when status == ok
};

// Substring judging, case-insensitive: reward 1 if any reward substring
// occurs (all of them, if the case demands it), minus penalty_weight per
// distinct penalty substring present, clamped to [0,1].
inline ScoreCell judge(std::string_view response, const TestCase& tc) {
  ScoreCell cell;
  cell.case_name = tc.name;
  cell.raw_response = std::string(response);

  std::string folded = fold(response);
  for (const auto& r : tc.reward_substrings) {
    if (folded.find(fold(r)) != std::string::npos) cell.matched_rewards.push_back(r);
  }
  for (const auto& p : tc.penalty_substrings) {
    if (folded.find(fold(p)) != std::string::npos) cell.matched_penalties.push_back(p);
  }

  bool rewarded = tc.reward_requires_all
                      ? !tc.reward_substrings.empty() &&
                            cell.matched_rewards.size() == tc.reward_substrings.size()
                      : !cell.matched_rewards.empty();
  double raw = (rewarded ? 1.0 : 0.0) -
               tc.penalty_weight * static_cast<double>(cell.matched_penalties.size());
  cell.score = std::clamp(raw, 0.0, 1.0);
  return cell;
}

}  // namespace obench
