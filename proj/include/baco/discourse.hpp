#pragma once

/**
 * Discourse-Level Diversity
 *
 * Long-form outputs are compared through lightweight structural annotations
 * rather than their raw text: where a story's turning points fall, and how
 * its emotional arousal moves. Annotations arrive in a JSON sidecar; this
 * module never produces them (that takes a judge model and is a pass-through
 * here, see annotation_prompt).
 *
 * TP-Div      turning points mapped to relative positions r_k = index / L;
 *             pair distance is the mean absolute gap over the K=5 positions;
 *             group value is the mean over all n(n-1)/2 pairs
 * Arousal-Div per narrative a degree-3 least-squares polynomial is fitted to
 *             (t, score) samples, evaluated on a 101-point grid over [0,1],
 *             shifted positive (subtract min, add 1e-6) and normalized to a
 *             distribution; group value is the mean of KL(i || j) over i<j,
 *             deliberately unsymmetrized
 *
 * Narratives failing validation (wrong turning-point count or order, fewer
 * than three arousal samples, out-of-range values) are excluded from the
 * respective metric and counted, never silently dropped.
 */

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace baco::discourse {

inline constexpr int kTurningPoints = 5;
inline constexpr int kGridPoints = 101;
inline constexpr int kFitDegree = 3;
inline constexpr int kMinArousalSamples = 3;
inline constexpr double kCurveEps = 1e-6;

struct ArousalSample {
  double t = 0.0;      // relative position in [0, 1]
  double score = 0.0;  // annotated intensity in [1, 10]
};

struct NarrativeAnnotation {
  std::string sample_id;
  int sentence_count = 0;
  std::vector<int> turning_points;
  std::vector<ArousalSample> arousal;

  nlohmann::json to_json() const {
    nlohmann::json arousal_json = nlohmann::json::array();
    for (const ArousalSample& s : arousal) arousal_json.push_back({s.t, s.score});
    return {{"sample_id", sample_id},
            {"sentence_count", sentence_count},
            {"turning_points", turning_points},
            {"arousal", arousal_json}};
  }

  static NarrativeAnnotation from_json(const nlohmann::json& j) {
    NarrativeAnnotation a;
    a.sample_id = j.at("sample_id").get<std::string>();
    a.sentence_count = j.at("sentence_count").get<int>();
    a.turning_points = j.at("turning_points").get<std::vector<int>>();
    for (const auto& pair : j.at("arousal")) {
      if (!pair.is_array() || pair.size() != 2)
        throw std::invalid_argument("annotation arousal entries must be [t, score] pairs");
      a.arousal.push_back(ArousalSample{pair[0].get<double>(), pair[1].get<double>()});
    }
    return a;
  }
};

inline std::vector<NarrativeAnnotation> annotations_from_json(const nlohmann::json& j) {
  std::vector<NarrativeAnnotation> out;
  for (const auto& entry : j) out.push_back(NarrativeAnnotation::from_json(entry));
  return out;
}

// ============================================================================
// Turning-point diversity
// ============================================================================

namespace detail {

inline bool turning_points_valid(const NarrativeAnnotation& a) {
  if (a.sentence_count < 1) return false;
  if (static_cast<int>(a.turning_points.size()) != kTurningPoints) return false;
  int prev = 0;
  for (const int idx : a.turning_points) {
    if (idx <= prev || idx > a.sentence_count) return false;
    prev = idx;
  }
  return true;
}

inline bool arousal_valid(const NarrativeAnnotation& a) {
  if (static_cast<int>(a.arousal.size()) < kMinArousalSamples) return false;
  for (const ArousalSample& s : a.arousal)
    if (s.t < 0.0 || s.t > 1.0 || s.score < 1.0 || s.score > 10.0) return false;
  return true;
}

}  // namespace detail

/// Turning points as fractions of narrative length.
inline std::array<double, kTurningPoints> relative_positions(const NarrativeAnnotation& a) {
  if (static_cast<int>(a.turning_points.size()) != kTurningPoints)
    throw std::invalid_argument("relative_positions: annotation must carry exactly 5 indices");
  std::array<double, kTurningPoints> r{};
  for (int k = 0; k < kTurningPoints; ++k)
    r[k] = static_cast<double>(a.turning_points[k]) / static_cast<double>(a.sentence_count);
  return r;
}

/// Mean absolute gap between two relative-position vectors, in [0, 1].
inline double tp_distance(const std::array<double, kTurningPoints>& a,
                          const std::array<double, kTurningPoints>& b) {
  double sum = 0.0;
  for (int k = 0; k < kTurningPoints; ++k) sum += std::abs(a[k] - b[k]);
  return sum / kTurningPoints;
}

struct TpDivResult {
  std::optional<double> value;
  int excluded = 0;  // narratives failing turning-point validation
};

inline TpDivResult tp_div(const std::vector<NarrativeAnnotation>& annotations) {
  TpDivResult result;
  std::vector<std::array<double, kTurningPoints>> rs;
  for (const NarrativeAnnotation& a : annotations) {
    if (detail::turning_points_valid(a))
      rs.push_back(relative_positions(a));
    else
      ++result.excluded;
  }
  if (rs.size() < 2) return result;
  double sum = 0.0;
  for (std::size_t i = 0; i < rs.size(); ++i)
    for (std::size_t j = i + 1; j < rs.size(); ++j) sum += tp_distance(rs[i], rs[j]);
  result.value = sum / (rs.size() * (rs.size() - 1) / 2.0);
  return result;
}

// ============================================================================
// Arousal diversity
// ============================================================================

/**
 * Least-squares polynomial fit, coefficients low order first. The requested
 * degree drops to what the sample count supports, then further if duplicate
 * positions leave the normal equations singular; degree 0 always solves.
 */
inline std::vector<double> fit_polynomial(const std::vector<ArousalSample>& samples,
                                          int degree = kFitDegree) {
  if (samples.empty()) throw std::invalid_argument("fit_polynomial: no samples");
  degree = std::min<int>(degree, static_cast<int>(samples.size()) - 1);
  for (; degree >= 0; --degree) {
    const int n = degree + 1;
    // normal equations from power moments, in extended precision
    std::vector<long double> moment(2 * degree + 1, 0.0L);
    std::vector<long double> rhs(n, 0.0L);
    for (const ArousalSample& s : samples) {
      long double tp = 1.0L;
      for (int p = 0; p <= 2 * degree; ++p) {
        moment[p] += tp;
        if (p < n) rhs[p] += tp * static_cast<long double>(s.score);
        tp *= static_cast<long double>(s.t);
      }
    }
    std::vector<std::vector<long double>> a(n, std::vector<long double>(n + 1));
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) a[i][j] = moment[i + j];
      a[i][n] = rhs[i];
    }
    bool singular = false;
    for (int col = 0; col < n && !singular; ++col) {
      int pivot = col;
      for (int row = col + 1; row < n; ++row)
        if (std::abs(static_cast<double>(a[row][col])) >
            std::abs(static_cast<double>(a[pivot][col])))
          pivot = row;
      if (std::abs(static_cast<double>(a[pivot][col])) < 1e-12) {
        singular = true;
        break;
      }
      std::swap(a[col], a[pivot]);
      for (int row = 0; row < n; ++row) {
        if (row == col) continue;
        const long double f = a[row][col] / a[col][col];
        for (int j = col; j <= n; ++j) a[row][j] -= f * a[col][j];
      }
    }
    if (singular) continue;
    std::vector<double> coeffs(n);
    for (int i = 0; i < n; ++i) coeffs[i] = static_cast<double>(a[i][n] / a[i][i]);
    return coeffs;
  }
  throw std::logic_error("fit_polynomial: unreachable, degree 0 always solves");
}

inline double eval_polynomial(const std::vector<double>& coeffs, double t) {
  double value = 0.0;
  for (std::size_t i = coeffs.size(); i-- > 0;) value = value * t + coeffs[i];
  return value;
}

/// Fitted trajectory as a positive distribution over the evaluation grid.
/// A constant fit lands on the uniform distribution.
inline std::vector<double> arousal_curve(const NarrativeAnnotation& a) {
  const std::vector<double> coeffs = fit_polynomial(a.arousal);
  std::vector<double> grid(kGridPoints);
  for (int g = 0; g < kGridPoints; ++g)
    grid[g] = eval_polynomial(coeffs, static_cast<double>(g) / (kGridPoints - 1));
  const double lo = *std::min_element(grid.begin(), grid.end());
  double total = 0.0;
  for (double& v : grid) {
    v = v - lo + kCurveEps;
    total += v;
  }
  for (double& v : grid) v /= total;
  return grid;
}

/// KL(p || q) over matching strictly-positive grids.
inline double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw std::invalid_argument("kl_divergence: size mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) sum += p[i] * std::log(p[i] / q[i]);
  return sum;
}

struct ArousalDivResult {
  std::optional<double> value;
  int excluded = 0;  // narratives failing arousal validation
};

inline ArousalDivResult arousal_div(const std::vector<NarrativeAnnotation>& annotations) {
  ArousalDivResult result;
  std::vector<std::vector<double>> curves;
  for (const NarrativeAnnotation& a : annotations) {
    if (detail::arousal_valid(a))
      curves.push_back(arousal_curve(a));
    else
      ++result.excluded;
  }
  if (curves.size() < 2) return result;
  // ordered i<j only; KL is asymmetric and the mean keeps that orientation
  double sum = 0.0;
  for (std::size_t i = 0; i < curves.size(); ++i)
    for (std::size_t j = i + 1; j < curves.size(); ++j) sum += kl_divergence(curves[i], curves[j]);
  result.value = sum / (curves.size() * (curves.size() - 1) / 2.0);
  return result;
}

// ============================================================================
// Report and annotation pass-through
// ============================================================================

struct DiscourseReport {
  std::optional<double> tp_div;
  std::optional<double> arousal_div;
  int tp_excluded = 0;
  int arousal_excluded = 0;

  nlohmann::json to_json() const {
    nlohmann::json metrics, missing = nlohmann::json::array();
    const auto put = [&](const char* name, const std::optional<double>& v) {
      if (v.has_value())
        metrics[name] = *v;
      else
        missing.push_back(name);
    };
    put("tp_div", tp_div);
    put("arousal_div", arousal_div);
    return {{"metrics", metrics},
            {"orientations", {{"tp_div", "higher"}, {"arousal_div", "higher"}}},
            {"missing", missing},
            {"flags", {{"tp_excluded", tp_excluded}, {"arousal_excluded", arousal_excluded}}}};
  }
};

inline DiscourseReport discourse_report(const std::vector<NarrativeAnnotation>& annotations) {
  DiscourseReport report;
  const TpDivResult tp = tp_div(annotations);
  const ArousalDivResult ar = arousal_div(annotations);
  report.tp_div = tp.value;
  report.arousal_div = ar.value;
  report.tp_excluded = tp.excluded;
  report.arousal_excluded = ar.excluded;
  return report;
}

/**
 * Chat-ready request for annotating one narrative. The reply is expected to
 * be a sidecar entry; parsing and any quality control stay with the caller.
 */
inline std::string annotation_prompt(std::string_view sample_id, std::string_view story) {
  std::string p;
  p += "Read the story below and return a single JSON object with exactly these fields:\n";
  p += "  \"sample_id\": \"" + std::string(sample_id) + "\"\n";
  p += "  \"sentence_count\": total number of sentences in the story\n";
  p +=
      "  \"turning_points\": the 1-based sentence indices of the 5 key plot turning points"
      " (inciting incident, rising action, climax, falling action, resolution), strictly"
      " increasing\n";
  p +=
      "  \"arousal\": a list of [position, score] pairs sampling the story's emotional"
      " intensity, where position is a fraction of the story in [0, 1] and score is an"
      " integer from 1 (calm) to 10 (most intense); provide at least 5 pairs\n";
  p += "Return only the JSON object, no prose.\n\nStory:\n";
  p += story;
  return p;
}

}  // namespace baco::discourse
