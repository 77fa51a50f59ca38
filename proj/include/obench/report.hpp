#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "obench/errors.hpp"
#include "obench/judge.hpp"

namespace obench {

// Depth x length score matrix for one (case, endpoint) pair. Errored cells
// keep their status; they never contribute a numeric score.
struct ScoreGrid {
  std::string case_name;
  std::string endpoint;
  std::string timestamp;  // ISO 8601 UTC
  std::map<std::pair<double, int>, ScoreCell> cells;
};

inline std::string now_iso8601() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline ScoreGrid assemble_grid(const std::vector<ScoreCell>& cells,
                               std::string timestamp = now_iso8601()) {
  if (cells.empty()) throw Error("cannot assemble an empty grid");
  ScoreGrid grid;
  grid.case_name = cells.front().case_name;
  grid.endpoint = cells.front().endpoint;
  grid.timestamp = std::move(timestamp);
  for (const auto& cell : cells) {
    if (cell.case_name != grid.case_name || cell.endpoint != grid.endpoint) {
      throw MixedCases("grid mixes case '" + grid.case_name + "' with '" +
                       cell.case_name + "'");
    }
    grid.cells[{cell.depth, cell.length}] = cell;
  }
  return grid;
}

// Mean over ok cells only; failed cells are missing data, not zeros.
inline double mean_ok_score(const ScoreGrid& grid) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& [key, cell] : grid.cells) {
    if (cell.status == CellStatus::ok) {
      sum += cell.score;
      ++n;
    }
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

namespace detail {

inline std::string fmt_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace detail

// CSV, one row per cell ordered by depth then length. Errored cells carry an
// empty score field and their error kind in the status column.
inline void export_csv(const ScoreGrid& grid, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "depth,length,score,status\n";
  for (const auto& [key, cell] : grid.cells) {
    out << detail::fmt_num(key.first) << ',' << key.second << ',';
    if (cell.status == CellStatus::ok) out << detail::fmt_num(cell.score);
    out << ',' << (cell.status == CellStatus::ok ? "ok" : cell.error_kind) << '\n';
  }
}

inline ScoreGrid import_csv(const std::filesystem::path& path,
                            std::string case_name = "", std::string endpoint = "") {
  std::ifstream in(path);
  if (!in) throw MissingFile("cannot open " + path.string());
  ScoreGrid grid;
  grid.case_name = std::move(case_name);
  grid.endpoint = std::move(endpoint);
  std::string line;
  if (!std::getline(in, line) || line.rfind("depth,length,score,status", 0) != 0) {
    throw IoError("not a score grid CSV: " + path.string());
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string depth_s, length_s, score_s, status_s;
    std::getline(ss, depth_s, ',');
    std::getline(ss, length_s, ',');
    std::getline(ss, score_s, ',');
    std::getline(ss, status_s);
    ScoreCell cell;
    cell.case_name = grid.case_name;
    cell.endpoint = grid.endpoint;
    cell.depth = std::stod(depth_s);
    cell.length = std::stoi(length_s);
    if (status_s == "ok") {
      cell.status = CellStatus::ok;
      cell.score = std::stod(score_s);
    } else {
      cell.status = CellStatus::error;
      cell.error_kind = status_s;
    }
    grid.cells[{cell.depth, cell.length}] = cell;
  }
  return grid;
}

inline void export_json(const ScoreGrid& grid, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = "obench-scoregrid";
  j["version"] = 1;
  j["case"] = grid.case_name;
  j["endpoint"] = grid.endpoint;
  j["timestamp"] = grid.timestamp;
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& [key, cell] : grid.cells) {
    nlohmann::json c;
    c["depth"] = key.first;
    c["length"] = key.second;
    c["status"] = cell.status == CellStatus::ok ? "ok" : cell.error_kind;
    if (cell.status == CellStatus::ok) c["score"] = cell.score;
    c["matched_rewards"] = cell.matched_rewards;
    c["matched_penalties"] = cell.matched_penalties;
    c["response"] = cell.raw_response;
    cells.push_back(std::move(c));
  }
  j["cells"] = std::move(cells);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

inline ScoreGrid import_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed grid JSON: " + std::string(e.what()));
  }
  if (j.value("format", "") != "obench-scoregrid") {
    throw IoError("not a score grid JSON: " + path.string());
  }
  ScoreGrid grid;
  grid.case_name = j.value("case", "");
  grid.endpoint = j.value("endpoint", "");
  grid.timestamp = j.value("timestamp", "");
  for (const auto& c : j.at("cells")) {
    ScoreCell cell;
    cell.case_name = grid.case_name;
    cell.endpoint = grid.endpoint;
    cell.depth = c.at("depth").get<double>();
    cell.length = c.at("length").get<int>();
    std::string status = c.value("status", "ok");
    if (status == "ok") {
      cell.status = CellStatus::ok;
      cell.score = c.value("score", 0.0);
    } else {
      cell.status = CellStatus::error;
      cell.error_kind = status;
    }
    if (c.contains("response")) cell.raw_response = c["response"].get<std::string>();
    grid.cells[{cell.depth, cell.length}] = cell;
  }
  return grid;
}

namespace detail {

// Linear red (0.0) -> green (1.0); errored cells are gray.
inline std::string heat_color(double score) {
  double s = std::clamp(score, 0.0, 1.0);
  int r = static_cast<int>(std::lround(255.0 * (1.0 - s)));
  int g = static_cast<int>(std::lround(255.0 * s));
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x00", r, g);
  return buf;
}

inline std::string xml_escape(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

// 2D heatmap in the usual depth-by-length layout: one colored rect per cell,
// depth strata down the side, context lengths along the bottom.
inline void export_svg(const ScoreGrid& grid, const std::filesystem::path& path) {
  if (grid.cells.empty()) throw Error("cannot render an empty grid");

  std::vector<double> depths;
  std::vector<int> lengths;
  for (const auto& [key, cell] : grid.cells) {
    if (depths.empty() || depths.back() != key.first) depths.push_back(key.first);
    if (std::find(lengths.begin(), lengths.end(), key.second) == lengths.end()) {
      lengths.push_back(key.second);
    }
  }
  std::sort(lengths.begin(), lengths.end());

  const int cell_w = 18, cell_h = 18;
  const int left = 64, top = 34, bottom = 52, right = 12;
  const int width = left + cell_w * static_cast<int>(lengths.size()) + right;
  const int height = top + cell_h * static_cast<int>(depths.size()) + bottom;

  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
  out << "  <text x=\"" << left << "\" y=\"16\" font-size=\"13\">"
      << detail::xml_escape(grid.case_name)
      << (grid.endpoint.empty() ? "" : " / " + detail::xml_escape(grid.endpoint))
      << "</text>\n";

  for (std::size_t di = 0; di < depths.size(); ++di) {
    for (std::size_t li = 0; li < lengths.size(); ++li) {
      auto it = grid.cells.find({depths[di], lengths[li]});
      if (it == grid.cells.end()) continue;
      const ScoreCell& cell = it->second;
      int x = left + static_cast<int>(li) * cell_w;
      int y = top + static_cast<int>(di) * cell_h;
      std::string fill = cell.status == CellStatus::ok ? detail::heat_color(cell.score)
                                                       : std::string("#888888");
      out << "  <rect class=\"cell\" x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell_w
          << "\" height=\"" << cell_h << "\" fill=\"" << fill
          << "\" stroke=\"#ffffff\" stroke-width=\"1\">";
      out << "<title>depth " << detail::fmt_num(depths[di]) << ", length " << lengths[li]
          << ": "
          << (cell.status == CellStatus::ok ? detail::fmt_num(cell.score) : cell.error_kind)
          << "</title></rect>\n";
    }
  }

  for (std::size_t di = 0; di < depths.size(); ++di) {
    int y = top + static_cast<int>(di) * cell_h + cell_h / 2 + 3;
    out << "  <text x=\"" << left - 8 << "\" y=\"" << y << "\" text-anchor=\"end\">"
        << static_cast<int>(std::lround(depths[di] * 100)) << "%</text>\n";
  }
  std::size_t label_every = std::max<std::size_t>(1, lengths.size() / 10);
  for (std::size_t li = 0; li < lengths.size(); ++li) {
    if (li % label_every != 0 && li + 1 != lengths.size()) continue;
    int x = left + static_cast<int>(li) * cell_w + cell_w / 2;
    int y = top + cell_h * static_cast<int>(depths.size()) + 14;
    out << "  <text x=\"" << x << "\" y=\"" << y << "\" text-anchor=\"middle\">"
        << lengths[li] << "</text>\n";
  }
  out << "  <text x=\"" << left + (cell_w * static_cast<int>(lengths.size())) / 2 << "\" y=\""
      << height - 10 << "\" text-anchor=\"middle\">context length (tokens)</text>\n";
  out << "  <text x=\"14\" y=\"" << top + (cell_h * static_cast<int>(depths.size())) / 2
      << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
      << top + (cell_h * static_cast<int>(depths.size())) / 2 << ")\">needle depth</text>\n";
  out << "</svg>\n";
}

}  // namespace obench
