#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "obench/errors.hpp"

namespace obench {

struct PerplexitySample {
  std::string model_tag;
  double alpha = 0.0;
  int context_length = 0;
  double perplexity = 0.0;
};

// Where a perplexity curve explodes for one alpha. x is the ratio of the
// cliff length over the base model context length.
struct CliffPoint {
  double alpha = 0.0;
  int cliff_length = 0;
  double x = 0.0;
};

enum class CliffMethod { threshold, second_diff };

inline const char* cliff_method_name(CliffMethod m) {
  return m == CliffMethod::threshold ? "threshold" : "second_diff";
}

// Finds the perplexity cliff on a curve for a single alpha, samples sorted by
// ascending context length.
//
// threshold (default): smallest length whose perplexity exceeds (1+tau) times
// the plateau minimum, where the plateau is the first half of the curve.
// second_diff: the length maximizing the backward second difference of
// log-perplexity, f(i) - 2 f(i-1) + f(i-2), i.e. where the curve bends up.
//
// Both return the first exploded sample; a curve that never leaves the
// plateau band yields no cliff rather than a fabricated point. Scaling every
// perplexity by a constant moves neither method.
inline std::optional<CliffPoint> detect_cliff(const std::vector<PerplexitySample>& samples,
                                              double tau, int base_context_length,
                                              CliffMethod method = CliffMethod::threshold) {
  if (samples.size() < 4) throw DegenerateDesign("cliff detection needs >= 4 samples");
  if (base_context_length <= 0) throw ConfigError("base context length must be positive");
  for (std::size_t i = 1; i < samples.size(); ++i) {
    if (samples[i].context_length <= samples[i - 1].context_length) {
      throw ConfigError("cliff samples must have strictly ascending lengths");
    }
  }

  std::size_t plateau_n = std::max<std::size_t>(1, samples.size() / 2);
  double plateau_min = samples[0].perplexity;
  for (std::size_t i = 1; i < plateau_n; ++i) {
    plateau_min = std::min(plateau_min, samples[i].perplexity);
  }
  double limit = (1.0 + tau) * plateau_min;

  std::optional<std::size_t> idx;
  if (method == CliffMethod::threshold) {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].perplexity > limit) {
        idx = i;
        break;
      }
    }
  } else {
    bool exploded = false;
    for (const auto& s : samples) exploded = exploded || s.perplexity > limit;
    if (exploded) {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 2; i < samples.size(); ++i) {
        double d2 = std::log(samples[i].perplexity) - 2.0 * std::log(samples[i - 1].perplexity) +
                    std::log(samples[i - 2].perplexity);
        if (d2 > best) {
          best = d2;
          idx = i;
        }
      }
    }
  }
  if (!idx) return std::nullopt;

  CliffPoint point;
  point.alpha = samples[*idx].alpha;
  point.cliff_length = samples[*idx].context_length;
  point.x = static_cast<double>(point.cliff_length) / base_context_length;
  return point;
}

struct Quadratic {
  double a = 0.0, b = 0.0, c = 0.0;
  double eval(double x) const { return (a * x + b) * x + c; }
};

// Quadratic alpha(x) fitted to cliff points by ordinary least squares.
struct AlphaFit {
  Quadratic poly;
  double residual_rms = 0.0;
  std::vector<CliffPoint> source_points;

  double eval(double x) const { return poly.eval(x); }
};

namespace detail {

// 3x3 solve by Gaussian elimination with partial pivoting.
inline std::array<double, 3> solve3(std::array<std::array<double, 4>, 3> m) {
  for (int col = 0; col < 3; ++col) {
    int pivot = col;
    for (int r = col + 1; r < 3; ++r) {
      if (std::fabs(m[r][col]) > std::fabs(m[pivot][col])) pivot = r;
    }
    if (std::fabs(m[pivot][col]) < 1e-12) {
      throw DegenerateDesign("singular normal equations in quadratic fit");
    }
    std::swap(m[col], m[pivot]);
    for (int r = 0; r < 3; ++r) {
      if (r == col) continue;
      double f = m[r][col] / m[col][col];
      for (int k = col; k < 4; ++k) m[r][k] -= f * m[col][k];
    }
  }
  return {m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]};
}

}  // namespace detail

// Least-squares fit of alpha = a x^2 + b x + c over cliff points. Noiseless
// quadratic samples are recovered exactly (to fp). Needs >= 3 distinct x.
inline AlphaFit fit_optimal_alpha(const std::vector<CliffPoint>& points) {
  if (points.size() < 3) throw DegenerateDesign("quadratic fit needs >= 3 points");
  std::vector<double> xs;
  for (const auto& p : points) {
    if (std::find(xs.begin(), xs.end(), p.x) == xs.end()) xs.push_back(p.x);
  }
  if (xs.size() < 3) throw DegenerateDesign("quadratic fit needs >= 3 distinct x values");

  double s0 = static_cast<double>(points.size());
  double s1 = 0, s2 = 0, s3 = 0, s4 = 0;
  double t0 = 0, t1 = 0, t2 = 0;
  for (const auto& p : points) {
    double x = p.x, x2 = x * x;
    s1 += x;
    s2 += x2;
    s3 += x2 * x;
    s4 += x2 * x2;
    t0 += p.alpha;
    t1 += p.alpha * x;
    t2 += p.alpha * x2;
  }
  auto coeff = detail::solve3({{{s4, s3, s2, t2}, {s3, s2, s1, t1}, {s2, s1, s0, t0}}});

  AlphaFit fit;
  fit.poly = {coeff[0], coeff[1], coeff[2]};
  fit.source_points = points;
  double ss = 0.0;
  for (const auto& p : points) {
    double r = p.alpha - fit.eval(p.x);
    ss += r * r;
  }
  fit.residual_rms = std::sqrt(ss / static_cast<double>(points.size()));
  return fit;
}

struct DynamicAlphaParams {
  double beta = 1.0;  // scale multiplier pushing the cliff past the target
};

// alpha = beta * (0.25 x^2 - 0.35 x + 0.40), linear in beta.
inline double dynamic_alpha(double x, const DynamicAlphaParams& params = {}) {
  if (x <= 0.0) throw ConfigError("context ratio x must be positive");
  if (params.beta <= 0.0) throw ConfigError("beta must be positive");
  return params.beta * ((0.25 * x - 0.35) * x + 0.40);
}

// Static alphas reported alongside the dynamic formula for the two scaled
// windows it was exercised at (4k base): the two disagree and both are
// surfaced rather than reconciled.
inline std::optional<double> static_alpha_reference(double x) {
  if (std::fabs(x - 2.0) < 1e-9) return 2.0;
  if (std::fabs(x - 3.0) < 1e-9) return 3.7;
  return std::nullopt;
}

struct FitComparison {
  struct Row {
    double x = 0.0, f1 = 0.0, f2 = 0.0, abs_dev = 0.0, rel_dev = 0.0;
  };
  std::vector<Row> rows;
  double max_abs = 0.0;
  double max_rel = 0.0;
};

// Deviation between two quadratics over an even sampling of [lo, hi].
// Relative deviation is |f1-f2| / max(|f1|,|f2|).
inline FitComparison compare_fits(const Quadratic& f1, const Quadratic& f2, double lo,
                                  double hi, int samples) {
  if (samples < 2 || !(hi > lo)) throw ConfigError("compare_fits needs a non-degenerate range");
  FitComparison cmp;
  for (int i = 0; i < samples; ++i) {
    double x = lo + (hi - lo) * static_cast<double>(i) / (samples - 1);
    FitComparison::Row row;
    row.x = x;
    row.f1 = f1.eval(x);
    row.f2 = f2.eval(x);
    row.abs_dev = std::fabs(row.f1 - row.f2);
    double scale = std::max(std::fabs(row.f1), std::fabs(row.f2));
    row.rel_dev = scale > 0.0 ? row.abs_dev / scale : 0.0;
    cmp.max_abs = std::max(cmp.max_abs, row.abs_dev);
    cmp.max_rel = std::max(cmp.max_rel, row.rel_dev);
    cmp.rows.push_back(row);
  }
  return cmp;
}

// --- CSV and report plumbing ---

// Input rows: model_tag,alpha,context_length,perplexity
inline std::vector<PerplexitySample> read_perplexity_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) ||
      line.rfind("model_tag,alpha,context_length,perplexity", 0) != 0) {
    throw IoError("not a perplexity CSV: " + path.string());
  }
  std::vector<PerplexitySample> samples;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    PerplexitySample s;
    std::string field;
    std::getline(ss, s.model_tag, ',');
    std::getline(ss, field, ',');
    s.alpha = std::stod(field);
    std::getline(ss, field, ',');
    s.context_length = std::stoi(field);
    std::getline(ss, field);
    s.perplexity = std::stod(field);
    samples.push_back(std::move(s));
  }
  return samples;
}

inline void write_perplexity_csv(const std::vector<PerplexitySample>& samples,
                                 const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "model_tag,alpha,context_length,perplexity\n";
  char buf[64];
  for (const auto& s : samples) {
    std::snprintf(buf, sizeof(buf), "%.10g", s.alpha);
    out << s.model_tag << ',' << buf << ',' << s.context_length << ',';
    std::snprintf(buf, sizeof(buf), "%.10g", s.perplexity);
    out << buf << '\n';
  }
}

struct RopeFitReport {
  AlphaFit fit;
  double tau = 0.25;
  int base_context_length = 0;
  CliffMethod method = CliffMethod::threshold;
  std::vector<double> alphas_without_cliff;
};

// Groups samples by alpha, detects one cliff per curve, and fits the
// optimal-alpha quadratic over the detected points.
inline RopeFitReport fit_from_samples(const std::vector<PerplexitySample>& samples,
                                      int base_context_length, double tau = 0.25,
                                      CliffMethod method = CliffMethod::threshold) {
  std::map<double, std::vector<PerplexitySample>> by_alpha;
  for (const auto& s : samples) by_alpha[s.alpha].push_back(s);

  RopeFitReport report;
  report.tau = tau;
  report.base_context_length = base_context_length;
  report.method = method;

  std::vector<CliffPoint> points;
  for (auto& [alpha, curve] : by_alpha) {
    std::sort(curve.begin(), curve.end(), [](const auto& a, const auto& b) {
      return a.context_length < b.context_length;
    });
    auto point = detect_cliff(curve, tau, base_context_length, method);
    if (point) {
      points.push_back(*point);
    } else {
      report.alphas_without_cliff.push_back(alpha);
    }
  }
  report.fit = fit_optimal_alpha(points);
  return report;
}

inline nlohmann::json fit_report_json(const RopeFitReport& report) {
  nlohmann::json j;
  j["format"] = "obench-rope-fit";
  j["version"] = 1;
  j["method"] = cliff_method_name(report.method);
  j["tau"] = report.tau;
  j["base_context_length"] = report.base_context_length;
  j["coefficients"] = {{"a", report.fit.poly.a}, {"b", report.fit.poly.b},
                       {"c", report.fit.poly.c}};
  j["residual_rms"] = report.fit.residual_rms;
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : report.fit.source_points) {
    pts.push_back({{"alpha", p.alpha}, {"cliff_length", p.cliff_length}, {"x", p.x}});
  }
  j["cliff_points"] = std::move(pts);
  j["alphas_without_cliff"] = report.alphas_without_cliff;
  return j;
}

}  // namespace obench
