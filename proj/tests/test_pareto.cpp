#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <baco/pareto.hpp>

#include "oracles.hpp"

namespace {

using namespace baco;
using pareto::FeasibleRegion;
using pareto::FrontierPoint;
using pareto::NormalizedPoint;
using pareto::Orientation;
using pareto::TradeoffPoint;

NormalizedPoint np(std::string method, double x, double y) {
  return NormalizedPoint{std::move(method), "", x, y};
}

FrontierPoint fp(std::string method, double x, double y) {
  return FrontierPoint{std::move(method), x, y};
}

std::vector<NormalizedPoint> random_cloud(std::mt19937& gen, int max_methods = 4) {
  std::uniform_int_distribution<int> n_methods(1, max_methods);
  std::uniform_int_distribution<int> n_points(1, 8);
  std::uniform_real_distribution<double> coord(0.0, 1.0);
  std::uniform_int_distribution<int> grid(0, 4);
  std::bernoulli_distribution quantize(0.4);
  std::vector<NormalizedPoint> cloud;
  const int m = n_methods(gen);
  for (int i = 0; i < m; ++i) {
    const std::string method = "m" + std::to_string(i);
    const int n = n_points(gen);
    for (int k = 0; k < n; ++k) {
      // a coarse grid on some points forces exact coordinate collisions
      const double x = quantize(gen) ? grid(gen) / 4.0 : coord(gen);
      const double y = quantize(gen) ? grid(gen) / 4.0 : coord(gen);
      cloud.push_back(np(method, x, y));
    }
  }
  return cloud;
}

std::vector<oracle::LabeledPoint> to_labeled(const std::vector<NormalizedPoint>& pts) {
  std::vector<oracle::LabeledPoint> out;
  for (const auto& p : pts) out.push_back({p.x, p.y, p.method});
  return out;
}

/// Riemann midpoint integration of the piecewise-linear curve through the
/// given (x, y) knots, closed horizontally to x=0 and x=1.
double riemann_polyline_area(std::vector<std::pair<double, double>> knots, int steps = 200000) {
  std::sort(knots.begin(), knots.end());
  const auto eval = [&](double x) {
    if (x <= knots.front().first) return knots.front().second;
    if (x >= knots.back().first) return knots.back().second;
    for (std::size_t i = 1; i < knots.size(); ++i)
      if (x <= knots[i].first) {
        const auto& [x0, y0] = knots[i - 1];
        const auto& [x1, y1] = knots[i];
        return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
      }
    return knots.back().second;
  };
  double area = 0.0;
  const double h = 1.0 / steps;
  for (int i = 0; i < steps; ++i) area += eval((i + 0.5) * h) * h;
  return area;
}

}  // namespace

TEST_SUITE("pareto") {

TEST_CASE("normalize maps anchors to the unit square corners") {
  FeasibleRegion region{2.0, 10.0, 1.0, 5.0, Orientation::higher_better};
  std::vector<TradeoffPoint> points = {
      {"a", "t1", 2.0, 1.0},   // both anchors at minimum
      {"a", "t2", 10.0, 5.0},  // both at maximum
      {"a", "t3", 6.0, 3.0},   // center
  };
  const auto out = pareto::normalize(points, region);
  REQUIRE(out.size() == 3);
  CHECK(out[0].x == doctest::Approx(0.0));
  CHECK(out[0].y == doctest::Approx(0.0));
  CHECK(out[1].x == doctest::Approx(1.0));
  CHECK(out[1].y == doctest::Approx(1.0));
  CHECK(out[2].x == doctest::Approx(0.5));
  CHECK(out[2].y == doctest::Approx(0.5));
  CHECK(out[0].config == "t1");
}

TEST_CASE("normalize flips lower-better diversity so 1 is most diverse") {
  FeasibleRegion region{0.0, 1.0, 0.0, 0.8, Orientation::lower_better};
  std::vector<TradeoffPoint> points = {
      {"a", "", 0.5, 0.0},  // best possible value of a lower-better metric
      {"a", "", 0.5, 0.8},  // worst in-region value
      {"a", "", 0.5, 0.2},
  };
  const auto out = pareto::normalize(points, region);
  REQUIRE(out.size() == 3);
  CHECK(out[0].y == doctest::Approx(1.0));
  CHECK(out[1].y == doctest::Approx(0.0));
  CHECK(out[2].y == doctest::Approx(0.75));
}

TEST_CASE("normalize discards points outside the closed unit square") {
  FeasibleRegion region{0.0, 1.0, 0.0, 1.0, Orientation::higher_better};
  std::vector<TradeoffPoint> points = {
      {"a", "", -0.01, 0.5},  // quality below region
      {"a", "", 1.01, 0.5},   // quality above region
      {"a", "", 0.5, -0.2},   // diversity below
      {"a", "", 0.5, 1.2},    // diversity above
      {"a", "", 0.0, 1.0},    // exactly on the boundary stays
      {"a", "", 1.0, 0.0},
  };
  const auto out = pareto::normalize(points, region);
  REQUIRE(out.size() == 2);
  CHECK(out[0].x == doctest::Approx(0.0));
  CHECK(out[1].x == doctest::Approx(1.0));
}

TEST_CASE("normalize rejects degenerate regions") {
  CHECK_THROWS_AS(pareto::normalize({}, FeasibleRegion{1.0, 1.0, 0.0, 1.0}),
                  std::invalid_argument);
  CHECK_THROWS_AS(pareto::normalize({}, FeasibleRegion{0.0, 1.0, 2.0, 1.0}),
                  std::invalid_argument);
  CHECK_FALSE(FeasibleRegion{0.0, 1.0, 1.0, 1.0}.valid());
  CHECK(FeasibleRegion{0.0, 1.0, 0.0, 1.0}.valid());
}

TEST_CASE("orientation flip is equivalent to negating the metric") {
  std::mt19937 gen(411);
  std::uniform_real_distribution<double> quality(0.0, 1.0);
  std::uniform_real_distribution<double> diversity(0.2, 0.9);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<TradeoffPoint> lower, negated;
    for (int i = 0; i < 12; ++i) {
      const double q = quality(gen);
      const double d = diversity(gen);
      lower.push_back({"m", "", q, d});
      negated.push_back({"m", "", q, -d});
    }
    FeasibleRegion down{0.0, 1.0, 0.1, 1.0, Orientation::lower_better};
    FeasibleRegion up{0.0, 1.0, -1.0, -0.1, Orientation::higher_better};
    const auto a = pareto::normalize(lower, down);
    const auto b = pareto::normalize(negated, up);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].x == doctest::Approx(b[i].x).epsilon(1e-12));
      CHECK(a[i].y == doctest::Approx(b[i].y).epsilon(1e-12));
    }
  }
}

TEST_CASE("coverage closed forms") {
  // single point extends horizontally across the whole square
  CHECK(pareto::coverage({np("a", 0.5, 1.0)}) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(pareto::coverage({np("a", 0.25, 0.4)}) == doctest::Approx(0.4).epsilon(1e-12));
  // corner-to-corner diagonal
  CHECK(pareto::coverage({np("a", 0.0, 1.0), np("a", 1.0, 0.0)}) ==
        doctest::Approx(0.5).epsilon(1e-12));
  // bulge above the diagonal: 0.45 + 0.2 = 0.65
  CHECK(pareto::coverage({np("a", 0.0, 1.0), np("a", 0.5, 0.8), np("a", 1.0, 0.0)}) ==
        doctest::Approx(0.65).epsilon(1e-9));
  CHECK(pareto::coverage({}) == 0.0);
}

TEST_CASE("coverage ignores dominated and duplicate points") {
  const std::vector<NormalizedPoint> base = {np("a", 0.0, 1.0), np("a", 1.0, 0.0)};
  const double before = pareto::coverage(base);

  auto with_under = base;
  with_under.push_back(np("a", 0.0, 0.5));  // dominated by (0, 1)
  with_under.push_back(np("a", 0.7, 0.0));  // dominated by (1, 0)
  CHECK(pareto::coverage(with_under) == doctest::Approx(before).epsilon(1e-12));

  auto with_dupes = base;
  with_dupes.push_back(np("a", 0.0, 1.0));
  with_dupes.push_back(np("a", 1.0, 0.0));
  CHECK(pareto::coverage(with_dupes) == doctest::Approx(before).epsilon(1e-12));
}

TEST_CASE("coverage never decreases when a dominated point is added") {
  std::mt19937 gen(7152);
  std::uniform_real_distribution<double> coord(0.0, 1.0);
  std::uniform_real_distribution<double> shrink(0.0, 1.0);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<NormalizedPoint> pts;
    const int n = 2 + trial % 5;
    for (int i = 0; i < n; ++i) pts.push_back(np("a", coord(gen), coord(gen)));
    const double before = pareto::coverage(pts);
    // shrink an existing point toward the origin: dominated by its source
    const NormalizedPoint& src = pts[static_cast<std::size_t>(trial) % pts.size()];
    pts.push_back(np("a", src.x * shrink(gen), src.y * shrink(gen)));
    const double after = pareto::coverage(pts);
    CHECK(after >= before - 1e-12);
    CHECK(after == doctest::Approx(before).epsilon(1e-12));
  }
}

TEST_CASE("coverage stays within the unit interval") {
  std::mt19937 gen(93);
  std::uniform_real_distribution<double> coord(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<NormalizedPoint> pts;
    const int n = 1 + trial % 7;
    for (int i = 0; i < n; ++i) pts.push_back(np("a", coord(gen), coord(gen)));
    const double c = pareto::coverage(pts);
    CHECK(c >= 0.0);
    CHECK(c <= 1.0 + 1e-12);
  }
}

TEST_CASE("coverage matches numeric integration on descending staircases") {
  std::mt19937 gen(2218);
  std::uniform_real_distribution<double> step(0.02, 0.3);
  for (int trial = 0; trial < 10; ++trial) {
    // strictly increasing x with strictly decreasing y: nothing is dominated,
    // so the curve runs through every knot
    std::vector<std::pair<double, double>> knots;
    double x = step(gen) * 0.3;
    double y = 1.0 - step(gen) * 0.1;
    while (x < 1.0 && y > 0.0) {
      knots.emplace_back(x, y);
      x += step(gen);
      y -= step(gen);
    }
    if (knots.size() < 2) continue;
    std::vector<NormalizedPoint> pts;
    for (const auto& [kx, ky] : knots) pts.push_back(np("a", kx, ky));
    std::shuffle(pts.begin(), pts.end(), gen);
    CHECK(pareto::coverage(pts) ==
          doctest::Approx(riemann_polyline_area(knots)).epsilon(1e-4));
  }
}

TEST_CASE("global frontier keeps exactly the nondominated points") {
  const std::vector<NormalizedPoint> cloud = {
      np("a", 0.1, 0.9), np("a", 0.5, 0.5), np("b", 0.5, 0.7),
      np("b", 0.9, 0.2), np("c", 0.3, 0.3), np("c", 0.9, 0.1),
  };
  const auto frontier = pareto::global_frontier(cloud);
  REQUIRE(frontier.size() == 3);
  CHECK(frontier[0].method == "a");
  CHECK(frontier[0].x == doctest::Approx(0.1));
  CHECK(frontier[1].method == "b");
  CHECK(frontier[1].y == doctest::Approx(0.7));
  CHECK(frontier[2].method == "b");
  CHECK(frontier[2].x == doctest::Approx(0.9));
}

TEST_CASE("coordinate duplicates on the frontier keep the smallest method label") {
  const std::vector<NormalizedPoint> cloud = {
      np("zeta", 0.2, 0.8), np("beta", 0.2, 0.8), np("eta", 0.2, 0.8),
      np("beta", 0.9, 0.1),
  };
  const auto frontier = pareto::global_frontier(cloud);
  REQUIRE(frontier.size() == 2);
  CHECK(frontier[0].method == "beta");
  CHECK(frontier[1].method == "beta");
}

TEST_CASE("global frontier agrees with the exhaustive oracle") {
  std::mt19937 gen(550);
  for (int trial = 0; trial < 40; ++trial) {
    const auto cloud = random_cloud(gen);
    const auto frontier = pareto::global_frontier(cloud);
    const auto expected = oracle::pareto_frontier(to_labeled(cloud));
    REQUIRE(frontier.size() == expected.size());
    for (std::size_t i = 0; i < frontier.size(); ++i) {
      CHECK(frontier[i].x == expected[i].x);
      CHECK(frontier[i].y == expected[i].y);
      CHECK(frontier[i].method == expected[i].label);
    }
  }
}

TEST_CASE("frontier is idempotent and strictly ordered") {
  std::mt19937 gen(551);
  for (int trial = 0; trial < 20; ++trial) {
    const auto cloud = random_cloud(gen);
    const auto frontier = pareto::global_frontier(cloud);
    REQUIRE(!frontier.empty());
    for (std::size_t i = 1; i < frontier.size(); ++i) {
      CHECK(frontier[i].x > frontier[i - 1].x);
      CHECK(frontier[i].y < frontier[i - 1].y);
    }
    std::vector<NormalizedPoint> again;
    for (const auto& p : frontier) again.push_back(np(p.method, p.x, p.y));
    const auto twice = pareto::global_frontier(again);
    REQUIRE(twice.size() == frontier.size());
    for (std::size_t i = 0; i < twice.size(); ++i) {
      CHECK(twice[i].x == frontier[i].x);
      CHECK(twice[i].y == frontier[i].y);
      CHECK(twice[i].method == frontier[i].method);
    }
  }
}

TEST_CASE("dominance splits a symmetric two-point frontier evenly") {
  const std::vector<FrontierPoint> frontier = {fp("a", 0.0, 1.0), fp("b", 1.0, 0.0)};
  const auto a = pareto::dominance(frontier, "a");
  const auto b = pareto::dominance(frontier, "b");
  CHECK(a.dom_q == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(a.dom_d == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(a.dom == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(b.dom == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(pareto::dominance(frontier, "absent").dom == 0.0);
}

TEST_CASE("dominance combines axis shares by harmonic mean") {
  // method m owns the two middle points; its axis shares work out to
  // dom_q = 0.25 and dom_d = 0.5, so dom = 2*0.25*0.5/0.75 = 1/3
  const std::vector<FrontierPoint> frontier = {
      fp("a", 0.0, 1.0), fp("m", 0.3, 0.7), fp("m", 0.35, 0.5),
      fp("b", 0.45, 0.2), fp("c", 1.0, 0.0),
  };
  const auto m = pareto::dominance(frontier, "m");
  CHECK(m.dom_q == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(m.dom_d == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(m.dom == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("single-point frontier belongs entirely to its owner") {
  const std::vector<FrontierPoint> frontier = {fp("solo", 0.4, 0.6)};
  const auto owner = pareto::dominance(frontier, "solo");
  CHECK(owner.dom_d == 1.0);
  CHECK(owner.dom_q == 1.0);
  CHECK(owner.dom == 1.0);
  const auto other = pareto::dominance(frontier, "other");
  CHECK(other.dom == 0.0);
  CHECK(other.dom_d == 0.0);
}

TEST_CASE("dominance shares partition to one across methods") {
  std::mt19937 gen(9177);
  for (int trial = 0; trial < 30; ++trial) {
    const auto cloud = random_cloud(gen, 5);
    const auto frontier = pareto::global_frontier(cloud);
    std::set<std::string> methods;
    for (const auto& p : cloud) methods.insert(p.method);
    double sum_d = 0.0, sum_q = 0.0;
    for (const auto& m : methods) {
      const auto d = pareto::dominance(frontier, m);
      sum_d += d.dom_d;
      sum_q += d.dom_q;
      CHECK(d.dom >= 0.0);
      CHECK(d.dom <= 1.0 + 1e-12);
    }
    CHECK(sum_d == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(sum_q == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("evaluate_space reports skipped and out-of-region cases") {
  const std::vector<TradeoffPoint> points = {
      {"good", "t1", 0.2, 0.4},
      {"good", "t2", 0.8, 0.9},
      {"stray", "t1", 3.0, 0.5},  // quality far outside the region
  };
  FeasibleRegion region{0.0, 1.0, 0.0, 1.0, Orientation::higher_better};

  SUBCASE("degenerate region yields no result") {
    CHECK_FALSE(pareto::evaluate_space("d", "q", pareto::SpaceGroup::lexical, points,
                                       FeasibleRegion{1.0, 1.0, 0.0, 1.0})
                    .has_value());
  }
  SUBCASE("region no point survives yields no result") {
    const std::vector<TradeoffPoint> far = {{"a", "", -5.0, 0.5}, {"b", "", 7.0, 0.5}};
    CHECK_FALSE(
        pareto::evaluate_space("d", "q", pareto::SpaceGroup::lexical, far, region).has_value());
  }
  SUBCASE("methods entirely outside keep zero rows") {
    const auto result =
        pareto::evaluate_space("d", "q", pareto::SpaceGroup::semantic, points, region);
    REQUIRE(result.has_value());
    CHECK(result->coverage.at("stray") == 0.0);
    CHECK(result->dominance.at("stray").dom == 0.0);
    CHECK(result->coverage.at("good") > 0.0);
    CHECK(result->curves.count("stray") == 0);
    // good's second point dominates its first, so the frontier is one point
    REQUIRE(result->frontier.size() == 1);
    CHECK(result->frontier[0].method == "good");
    CHECK(result->dominance.at("good").dom == 1.0);
    const auto j = result->to_json();
    CHECK(j.at("group") == "semantic");
    CHECK(j.at("frontier").size() == 1);
    CHECK(j.at("curves").at("good").size() == 2);
  }
}

TEST_CASE("aggregate averages per group and overall") {
  pareto::SpaceResult lex1, lex2, sem;
  lex1.group = pareto::SpaceGroup::lexical;
  lex1.coverage = {{"a", 0.8}, {"b", 0.4}};
  lex1.dominance = {{"a", {1.0, 1.0, 1.0}}, {"b", {0.0, 0.0, 0.0}}};
  lex2.group = pareto::SpaceGroup::lexical;
  lex2.coverage = {{"a", 0.6}, {"b", 0.2}};
  lex2.dominance = {{"a", {0.5, 0.5, 0.5}}, {"b", {0.5, 0.5, 0.5}}};
  sem.group = pareto::SpaceGroup::semantic;
  sem.coverage = {{"a", 0.5}, {"b", 1.0}};
  sem.dominance = {{"a", {0.0, 0.0, 0.0}}, {"b", {1.0, 1.0, 1.0}}};

  const auto summary = pareto::aggregate({lex1, lex2, sem}, 2);
  CHECK(summary.skipped_spaces == 2);
  const auto& a = summary.rows.at("a");
  CHECK(a.at("lexical").coverage == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(a.at("lexical").dominance == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(a.at("semantic").coverage == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(a.at("overall").coverage == doctest::Approx((0.8 + 0.6 + 0.5) / 3.0).epsilon(1e-12));
  CHECK(a.at("overall").dominance == doctest::Approx(0.5).epsilon(1e-12));
  const auto& b = summary.rows.at("b");
  CHECK(b.at("lexical").spaces == 2);
  CHECK(b.at("overall").spaces == 3);
  CHECK(b.at("overall").dominance == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("summary CSV is deterministic with fixed columns") {
  pareto::SpaceResult lex, sem;
  lex.group = pareto::SpaceGroup::lexical;
  lex.coverage = {{"b_method", 0.5}, {"a_method", 0.25}};
  lex.dominance = {{"b_method", {0.5, 0.5, 0.5}}, {"a_method", {0.5, 0.5, 0.5}}};
  sem.group = pareto::SpaceGroup::semantic;
  sem.coverage = {{"b_method", 1.0}, {"a_method", 0.0}};
  sem.dominance = {{"b_method", {1.0, 1.0, 1.0}}, {"a_method", {0.0, 0.0, 0.0}}};

  const std::string csv = pareto::summary_csv(pareto::aggregate({lex, sem}));
  const std::string expected =
      "method,lexical_cov,lexical_dom,semantic_cov,semantic_dom,overall_cov,overall_dom\n"
      "a_method,0.250000,0.500000,0.000000,0.000000,0.125000,0.250000\n"
      "b_method,0.500000,0.500000,1.000000,1.000000,0.750000,0.750000\n";
  CHECK(csv == expected);
}

TEST_CASE("tradeoff points parse from per-space JSON") {
  const auto j = nlohmann::json::parse(R"({
    "alpha": [{"config": "T=1.0", "quality": 0.5, "diversity": 0.25}],
    "beta":  [{"config": "g=0.5", "quality": 0.75, "diversity": 0.5},
              {"quality": 0.1, "diversity": 0.9}]
  })");
  auto points = pareto::points_from_json(j);
  REQUIRE(points.size() == 3);
  std::sort(points.begin(), points.end(),
            [](const TradeoffPoint& a, const TradeoffPoint& b) { return a.method < b.method; });
  CHECK(points[0].method == "alpha");
  CHECK(points[0].config == "T=1.0");
  CHECK(points[0].quality == 0.5);
  CHECK(points[1].method == "beta");
  CHECK(points[2].config.empty());
  CHECK(points[2].diversity == 0.9);

  const auto region_j = FeasibleRegion{0.0, 2.0, 0.0, 1.0, Orientation::lower_better}.to_json();
  const auto region = FeasibleRegion::from_json(region_j);
  CHECK(region.x_max == 2.0);
  CHECK(region.diversity_orientation == Orientation::lower_better);
}

}  // TEST_SUITE
