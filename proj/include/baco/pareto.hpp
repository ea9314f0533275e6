#pragma once

/**
 * Diversity-Quality Trade-off Aggregation
 *
 * Methods under different control parameters trace point clouds in a
 * (quality, diversity) plane. This module normalizes those clouds into a
 * unit square anchored by reference operating points, then aggregates two
 * complementary views:
 *
 *   Coverage   area under a method's own trade-off curve (trapezoid over its
 *              nondominated points, closed horizontally to the square edges)
 *   Dominance  share of the global Pareto frontier a method owns, measured
 *              as interval-of-responsibility along each axis (midpoints
 *              between frontier neighbors), combined by harmonic mean
 *
 * Spaces (one per diversity-metric x quality-metric pairing) are grouped
 * lexical / semantic and averaged per group plus overall. Quality is always
 * oriented higher-better here; callers flip signs upstream (e.g. negated
 * perplexity). Diversity carries an explicit orientation and the normalizer
 * flips lower-better metrics so that 1 always means most diverse.
 *
 * Points normalizing outside the closed unit square are discarded; a region
 * whose anchors collapse (x_max <= x_min or y_max <= y_min) is degenerate
 * and the whole space is skipped upstream with a diagnostic count.
 */

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace baco::pareto {

enum class Orientation { higher_better, lower_better };

inline const char* to_string(Orientation o) {
  return o == Orientation::higher_better ? "higher" : "lower";
}

inline Orientation orientation_from_string(std::string_view s) {
  if (s == "higher" || s == "higher_better") return Orientation::higher_better;
  if (s == "lower" || s == "lower_better") return Orientation::lower_better;
  throw std::invalid_argument("unknown orientation: " + std::string(s));
}

enum class SpaceGroup { lexical, semantic };

inline const char* to_string(SpaceGroup g) {
  return g == SpaceGroup::lexical ? "lexical" : "semantic";
}

// ============================================================================
// Points and regions
// ============================================================================

struct TradeoffPoint {
  std::string method;
  std::string config;  // control-parameter label (temperature or gamma)
  double quality = 0.0;
  double diversity = 0.0;
};

struct FeasibleRegion {
  double x_min = 0.0, x_max = 1.0;  // quality anchors
  double y_min = 0.0, y_max = 1.0;  // diversity anchors
  Orientation diversity_orientation = Orientation::higher_better;

  bool valid() const { return x_min < x_max && y_min < y_max; }

  nlohmann::json to_json() const {
    return {{"x_min", x_min},
            {"x_max", x_max},
            {"y_min", y_min},
            {"y_max", y_max},
            {"diversity_orientation", to_string(diversity_orientation)}};
  }

  static FeasibleRegion from_json(const nlohmann::json& j) {
    FeasibleRegion r;
    r.x_min = j.at("x_min").get<double>();
    r.x_max = j.at("x_max").get<double>();
    r.y_min = j.at("y_min").get<double>();
    r.y_max = j.at("y_max").get<double>();
    r.diversity_orientation =
        orientation_from_string(j.value("diversity_orientation", "higher"));
    return r;
  }
};

struct NormalizedPoint {
  std::string method;
  std::string config;
  double x = 0.0;
  double y = 0.0;
};

/// Map points into the unit square; drop anything landing outside it.
/// The closed square keeps exact anchor hits.
inline std::vector<NormalizedPoint> normalize(const std::vector<TradeoffPoint>& points,
                                              const FeasibleRegion& region) {
  if (!region.valid())
    throw std::invalid_argument("normalize: degenerate feasible region");
  std::vector<NormalizedPoint> out;
  out.reserve(points.size());
  for (const TradeoffPoint& p : points) {
    const double x = (p.quality - region.x_min) / (region.x_max - region.x_min);
    const double y_raw = (p.diversity - region.y_min) / (region.y_max - region.y_min);
    const double y =
        region.diversity_orientation == Orientation::higher_better ? y_raw : 1.0 - y_raw;
    if (x < 0.0 || x > 1.0 || y < 0.0 || y > 1.0) continue;
    out.push_back(NormalizedPoint{p.method, p.config, x, y});
  }
  return out;
}

// ============================================================================
// Coverage
// ============================================================================

namespace detail {

/// a dominates b: at least as good on both axes, strictly better on one.
inline bool dominates(double ax, double ay, double bx, double by) {
  return ax >= bx && ay >= by && (ax > bx || ay > by);
}

}  // namespace detail

/**
 * Area under one method's trade-off curve. The curve is the polyline through
 * the method's nondominated points ordered by x, extended horizontally to
 * x=0 and x=1; dominated or duplicate points never lower it. No surviving
 * points means no curve: coverage 0.
 */
inline double coverage(const std::vector<NormalizedPoint>& method_points) {
  if (method_points.empty()) return 0.0;
  std::vector<std::pair<double, double>> kept;
  for (const NormalizedPoint& p : method_points) {
    bool dominated = false;
    for (const NormalizedPoint& q : method_points) {
      if (detail::dominates(q.x, q.y, p.x, p.y)) {
        dominated = true;
        break;
      }
    }
    if (!dominated) kept.emplace_back(p.x, p.y);
  }
  std::sort(kept.begin(), kept.end());
  kept.erase(std::unique(kept.begin(), kept.end()), kept.end());

  double area = kept.front().second * kept.front().first;  // flat run-in from x=0
  for (std::size_t i = 1; i < kept.size(); ++i)
    area += (kept[i].second + kept[i - 1].second) / 2.0 * (kept[i].first - kept[i - 1].first);
  area += kept.back().second * (1.0 - kept.back().first);  // flat run-out to x=1
  return area;
}

// ============================================================================
// Global frontier and dominance
// ============================================================================

struct FrontierPoint {
  std::string method;
  double x = 0.0;
  double y = 0.0;
};

/**
 * Maximal nondominated subset over all methods' points, sorted by x
 * ascending (hence y strictly descending). Coordinate duplicates collapse to
 * the lexicographically smallest method label.
 */
inline std::vector<FrontierPoint> global_frontier(const std::vector<NormalizedPoint>& points) {
  std::vector<const NormalizedPoint*> sorted;
  sorted.reserve(points.size());
  for (const NormalizedPoint& p : points) sorted.push_back(&p);
  std::sort(sorted.begin(), sorted.end(), [](const NormalizedPoint* a, const NormalizedPoint* b) {
    if (a->x != b->x) return a->x > b->x;
    if (a->y != b->y) return a->y > b->y;
    return a->method < b->method;
  });

  std::vector<FrontierPoint> frontier;
  double best_y = -1.0;
  double last_x = 2.0;
  for (const NormalizedPoint* p : sorted) {
    if (p->y > best_y) {
      frontier.push_back(FrontierPoint{p->method, p->x, p->y});
      best_y = p->y;
      last_x = p->x;
    } else if (p->y == best_y && p->x == last_x) {
      // exact duplicate of the point just kept; sort order already put the
      // smallest method label first
      continue;
    }
  }
  std::reverse(frontier.begin(), frontier.end());
  return frontier;
}

struct Dominance {
  double dom_d = 0.0;  // diversity-axis responsibility share
  double dom_q = 0.0;  // quality-axis responsibility share
  double dom = 0.0;    // harmonic mean

  nlohmann::json to_json() const {
    return {{"dom_d", dom_d}, {"dom_q", dom_q}, {"dom", dom}};
  }
};

namespace detail {

/// Interval-of-responsibility share per method along one axis: each frontier
/// point owns from the midpoint to its left neighbor up to the midpoint to
/// its right one, extremes running to their own coordinate.
inline std::map<std::string, double> axis_shares(std::vector<std::pair<double, std::string>> pts) {
  std::sort(pts.begin(), pts.end());
  std::map<std::string, double> share;
  const double span = pts.back().first - pts.front().first;
  if (span <= 0.0) {
    share[pts.front().second] = 1.0;
    return share;
  }
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double lo = i == 0 ? pts[i].first : (pts[i - 1].first + pts[i].first) / 2.0;
    const double hi =
        i + 1 == pts.size() ? pts[i].first : (pts[i].first + pts[i + 1].first) / 2.0;
    share[pts[i].second] += (hi - lo) / span;
  }
  return share;
}

}  // namespace detail

/// Dominance of one method given the global frontier. A single-point
/// frontier belongs entirely to its owner.
inline Dominance dominance(const std::vector<FrontierPoint>& frontier, std::string_view method) {
  Dominance result;
  if (frontier.empty()) return result;
  if (frontier.size() == 1) {
    if (frontier.front().method == method) result = Dominance{1.0, 1.0, 1.0};
    return result;
  }
  std::vector<std::pair<double, std::string>> xs, ys;
  for (const FrontierPoint& p : frontier) {
    xs.emplace_back(p.x, p.method);
    ys.emplace_back(p.y, p.method);
  }
  const auto x_share = detail::axis_shares(std::move(xs));
  const auto y_share = detail::axis_shares(std::move(ys));
  const auto find = [&](const std::map<std::string, double>& m) {
    const auto it = m.find(std::string(method));
    return it == m.end() ? 0.0 : it->second;
  };
  result.dom_q = find(x_share);
  result.dom_d = find(y_share);
  result.dom = (result.dom_d + result.dom_q) > 0.0
                   ? 2.0 * result.dom_d * result.dom_q / (result.dom_d + result.dom_q)
                   : 0.0;
  return result;
}

// ============================================================================
// Space evaluation
// ============================================================================

struct SpaceResult {
  std::string diversity_metric;
  std::string quality_metric;
  SpaceGroup group = SpaceGroup::lexical;
  std::map<std::string, double> coverage;          // per method
  std::map<std::string, Dominance> dominance;      // per method
  std::vector<FrontierPoint> frontier;
  std::map<std::string, std::vector<NormalizedPoint>> curves;

  nlohmann::json to_json() const {
    nlohmann::json cov, dom, curve_json;
    for (const auto& [m, c] : coverage) cov[m] = c;
    for (const auto& [m, d] : dominance) dom[m] = d.to_json();
    for (const auto& [m, pts] : curves) {
      nlohmann::json arr = nlohmann::json::array();
      for (const NormalizedPoint& p : pts) arr.push_back({{"config", p.config}, {"x", p.x}, {"y", p.y}});
      curve_json[m] = arr;
    }
    nlohmann::json frontier_json = nlohmann::json::array();
    for (const FrontierPoint& p : frontier)
      frontier_json.push_back({{"method", p.method}, {"x", p.x}, {"y", p.y}});
    return {{"diversity_metric", diversity_metric},
            {"quality_metric", quality_metric},
            {"group", to_string(group)},
            {"coverage", cov},
            {"dominance", dom},
            {"frontier", frontier_json},
            {"curves", curve_json}};
  }
};

/**
 * Evaluate one space. Returns nullopt for a degenerate region or a region
 * no point survives; callers count those as skipped. Methods whose points
 * all fall outside keep an entry with coverage 0 and zero dominance.
 */
inline std::optional<SpaceResult> evaluate_space(std::string diversity_metric,
                                                 std::string quality_metric, SpaceGroup group,
                                                 const std::vector<TradeoffPoint>& points,
                                                 const FeasibleRegion& region) {
  if (!region.valid()) return std::nullopt;
  const std::vector<NormalizedPoint> normalized = normalize(points, region);
  if (normalized.empty()) return std::nullopt;

  SpaceResult result;
  result.diversity_metric = std::move(diversity_metric);
  result.quality_metric = std::move(quality_metric);
  result.group = group;

  std::set<std::string> methods;
  for (const TradeoffPoint& p : points) methods.insert(p.method);
  for (const NormalizedPoint& p : normalized) result.curves[p.method].push_back(p);
  for (auto& [m, pts] : result.curves)
    std::sort(pts.begin(), pts.end(), [](const NormalizedPoint& a, const NormalizedPoint& b) {
      return a.x != b.x ? a.x < b.x : a.y < b.y;
    });

  result.frontier = global_frontier(normalized);
  for (const std::string& m : methods) {
    const auto it = result.curves.find(m);
    result.coverage[m] = it == result.curves.end() ? 0.0 : coverage(it->second);
    result.dominance[m] = dominance(result.frontier, m);
  }
  return result;
}

// ============================================================================
// Aggregation
// ============================================================================

struct GroupMeans {
  double coverage = 0.0;
  double dominance = 0.0;
  int spaces = 0;
};

struct Summary {
  // method -> group ("lexical" | "semantic" | "overall") -> means
  std::map<std::string, std::map<std::string, GroupMeans>> rows;
  int skipped_spaces = 0;

  nlohmann::json to_json() const {
    nlohmann::json out;
    for (const auto& [method, groups] : rows)
      for (const auto& [group, means] : groups)
        out["methods"][method][group] = {{"coverage", means.coverage},
                                         {"dominance", means.dominance},
                                         {"spaces", means.spaces}};
    out["skipped_spaces"] = skipped_spaces;
    return out;
  }
};

/// Mean coverage and dominance per method over each group and overall.
/// Methods missing from a space contribute zeros there.
inline Summary aggregate(const std::vector<SpaceResult>& spaces, int skipped_spaces = 0) {
  Summary summary;
  summary.skipped_spaces = skipped_spaces;

  std::set<std::string> methods;
  for (const SpaceResult& s : spaces)
    for (const auto& [m, c] : s.coverage) methods.insert(m);

  for (const std::string& m : methods) {
    std::map<std::string, GroupMeans> acc;
    for (const SpaceResult& s : spaces) {
      const auto cov_it = s.coverage.find(m);
      const double cov = cov_it == s.coverage.end() ? 0.0 : cov_it->second;
      const auto dom_it = s.dominance.find(m);
      const double dom = dom_it == s.dominance.end() ? 0.0 : dom_it->second.dom;
      for (const std::string group : {std::string(to_string(s.group)), std::string("overall")}) {
        GroupMeans& g = acc[group];
        g.coverage += cov;
        g.dominance += dom;
        ++g.spaces;
      }
    }
    for (auto& [group, g] : acc) {
      if (g.spaces > 0) {
        g.coverage /= g.spaces;
        g.dominance /= g.spaces;
      }
    }
    summary.rows[m] = std::move(acc);
  }
  return summary;
}

/// Deterministic CSV: methods sorted, fixed column order, six decimals.
inline std::string summary_csv(const Summary& summary) {
  std::string csv =
      "method,lexical_cov,lexical_dom,semantic_cov,semantic_dom,overall_cov,overall_dom\n";
  const auto cell = [](const std::map<std::string, GroupMeans>& groups, const char* name,
                       bool dominance) {
    const auto it = groups.find(name);
    const double v = it == groups.end() ? 0.0 : (dominance ? it->second.dominance : it->second.coverage);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
  };
  for (const auto& [method, groups] : summary.rows) {
    csv += method;
    for (const char* group : {"lexical", "semantic", "overall"}) {
      csv += ',' + cell(groups, group, false);
      csv += ',' + cell(groups, group, true);
    }
    csv += '\n';
  }
  return csv;
}

// ============================================================================
// JSON ingestion
// ============================================================================

/// {method: [{config, quality, diversity}, ...], ...}
inline std::vector<TradeoffPoint> points_from_json(const nlohmann::json& j) {
  std::vector<TradeoffPoint> out;
  for (const auto& [method, arr] : j.items())
    for (const auto& p : arr) {
      TradeoffPoint tp;
      tp.method = method;
      tp.config = p.value("config", std::string{});
      tp.quality = p.at("quality").get<double>();
      tp.diversity = p.at("diversity").get<double>();
      out.push_back(std::move(tp));
    }
  return out;
}

}  // namespace baco::pareto
