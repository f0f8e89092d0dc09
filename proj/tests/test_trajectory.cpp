#include "capnav/trajectory.hpp"

#include <gtest/gtest.h>

using namespace capnav;

namespace {

std::vector<Vec3> blob(Rng& rng, const Vec3& c, double sigma, int n) {
  std::vector<Vec3> out;
  for (int i = 0; i < n; ++i) out.push_back(c + sigma * Vec3(rng.normal(), rng.normal(), rng.normal()));
  return out;
}

// Exhaustive 2-means: every split of the points into two non-empty groups,
// keeping the one with the smallest within-group squared error.
std::pair<Vec3, Vec3> exhaustive_two_means(const std::vector<Vec3>& pts) {
  const std::size_t n = pts.size();
  double best = std::numeric_limits<double>::infinity();
  std::pair<Vec3, Vec3> out;
  // point 0 always in group A so each split is visited once
  for (std::uint32_t mask = 0; mask < (1u << (n - 1)); ++mask) {
    Vec3 sa = pts[0], sb = Vec3::Zero();
    int na = 1, nb = 0;
    for (std::size_t i = 1; i < n; ++i) {
      if (mask & (1u << (i - 1))) {
        sb += pts[i];
        ++nb;
      } else {
        sa += pts[i];
        ++na;
      }
    }
    if (nb == 0) continue;
    const Vec3 ma = sa / na, mb = sb / nb;
    double sse = (pts[0] - ma).squaredNorm();
    for (std::size_t i = 1; i < n; ++i) sse += (pts[i] - ((mask & (1u << (i - 1))) ? mb : ma)).squaredNorm();
    if (sse < best) {
      best = sse;
      out = {ma, mb};
    }
  }
  return out;
}

std::vector<TimedPosition> line_history(const Vec3& a, const Vec3& b, int n, double sigma, Rng& rng) {
  std::vector<TimedPosition> h;
  for (int i = 0; i < n; ++i) {
    const double f = static_cast<double>(i) / (n - 1);
    h.push_back({0.1 * i, a + f * (b - a) + sigma * Vec3(rng.normal(), rng.normal(), rng.normal())});
  }
  return h;
}

// quarter circle of radius R in the horizontal plane followed by a straight run
Vec3 bend_curve(double u) {
  const double R = 0.08;
  if (u < 0.5) {
    const double a = u / 0.5 * kPi / 2;
    return Vec3(R * std::sin(a), R * (1 - std::cos(a)), 0.1);
  }
  return Vec3(R, R + (u - 0.5) / 0.5 * 0.1, 0.1);
}

}  // namespace

TEST(Gmm, SingleComponentIsSampleMean) {
  Rng rng(1);
  const auto pts = blob(rng, Vec3(0.1, 0.2, 0.3), 0.01, 40);
  Vec3 mean = Vec3::Zero();
  for (const auto& p : pts) mean += p;
  mean /= pts.size();
  const GmmResult r = gmm_em(pts, 1, rng);
  EXPECT_LT((r.components[0].mean - mean).norm(), 1e-15);
  EXPECT_DOUBLE_EQ(r.components[0].weight, 1.0);
}

TEST(Gmm, TwoBlobsMatchExhaustiveTwoMeans) {
  Rng rng(2);
  for (int trial = 0; trial < 3; ++trial) {
    auto pts = blob(rng, Vec3(0.0, 0.0, 0.1), 0.002, 9);
    const auto b = blob(rng, Vec3(0.1, 0.0, 0.1), 0.002, 9);
    pts.insert(pts.end(), b.begin(), b.end());
    const auto [ma, mb] = exhaustive_two_means(pts);
    const GmmResult r = gmm_em(pts, 2, rng);
    const Vec3 g0 = r.components[0].mean, g1 = r.components[1].mean;
    const double d = std::min((g0 - ma).norm() + (g1 - mb).norm(), (g0 - mb).norm() + (g1 - ma).norm());
    EXPECT_LT(d, 1e-3);
    // and both are close to the generating centers
    EXPECT_LT(std::min((g0 - Vec3(0, 0, 0.1)).norm(), (g1 - Vec3(0, 0, 0.1)).norm()), 3e-3);
  }
}

TEST(Gmm, LogLikelihoodMonotoneOnRandomData) {
  Rng rng(3);
  for (int ds = 0; ds < 50; ++ds) {
    std::vector<Vec3> pts;
    const int k = 1 + static_cast<int>(rng.index(6));
    for (int c = 0; c < k + 1; ++c) {
      const auto b = blob(rng, Vec3(rng.uniform(0, 0.3), rng.uniform(0, 0.3), rng.uniform(0, 0.1)), rng.uniform(0.001, 0.02),
                          5 + static_cast<int>(rng.index(30)));
      pts.insert(pts.end(), b.begin(), b.end());
    }
    const GmmResult r = gmm_em(pts, k, rng);
    for (std::size_t i = 1; i < r.log_likelihood.size(); ++i)
      EXPECT_GE(r.log_likelihood[i], r.log_likelihood[i - 1] - 1e-9 * std::abs(r.log_likelihood[i - 1])) << "dataset " << ds;
  }
}

TEST(Gmm, DegenerateInputs) {
  Rng rng(4);
  EXPECT_THROW(gmm_em({Vec3::Zero()}, 2, rng), DegenerateInput);
  EXPECT_THROW(gmm_em({Vec3::Zero(), Vec3::Zero(), Vec3::Zero()}, 2, rng), DegenerateInput);
  EXPECT_THROW(gmm_em({Vec3::Zero()}, 0, rng), DegenerateInput);
}

TEST(Spline, InterpolatesCollinearCentroids) {
  const ArcSpline sp({Vec3(0, 0, 0), Vec3(0.1, 0, 0), Vec3(0.2, 0, 0)});
  for (std::size_t i = 0; i < 3; ++i) EXPECT_LT((sp.point_u(sp.knot_u(i)) - sp.knots()[i]).norm(), 1e-9);
  EXPECT_NEAR(sp.length(), 0.2, 1e-12);
}

TEST(Spline, InterpolatesEveryKnot) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Vec3> knots{Vec3::Zero()};
    for (int i = 0; i < 12; ++i) knots.push_back(knots.back() + Vec3(rng.uniform(0.005, 0.03), rng.uniform(-0.02, 0.02), rng.uniform(-0.005, 0.005)));
    const ArcSpline sp(knots);
    for (std::size_t i = 0; i < knots.size(); ++i) EXPECT_LT((sp.point_u(sp.knot_u(i)) - knots[i]).norm(), 1e-9);
    // natural end conditions
    EXPECT_LT(sp.second_u(0.0).norm(), 1e-9);
    EXPECT_LT(sp.second_u(sp.chord_length()).norm(), 1e-9);
  }
}

TEST(Spline, ArcLengthMatchesDensePolyline) {
  Rng rng(6);
  std::vector<Vec3> knots{Vec3::Zero()};
  for (int i = 0; i < 8; ++i) knots.push_back(knots.back() + Vec3(0.02, rng.uniform(-0.02, 0.02), 0));
  const ArcSpline sp(knots);
  double poly = 0.0;
  const int n = 200000;
  for (int i = 1; i <= n; ++i) poly += (sp.point_u(sp.chord_length() * i / n) - sp.point_u(sp.chord_length() * (i - 1) / n)).norm();
  EXPECT_NEAR(sp.length(), poly, 1e-9);
  // reparameterized points sit at the requested arc length along the curve
  for (double sigma : {0.01, 0.05, 0.1}) EXPECT_NEAR(sp.arclength_u(sp.u_at(sigma)), sigma, 1e-12);
}

TEST(Trajectory, ArcLengthMonotoneAndUnitSpeed) {
  Rng rng(7);
  std::vector<Vec3> knots{Vec3::Zero()};
  for (int i = 0; i < 10; ++i) knots.push_back(knots.back() + Vec3(0.02, rng.uniform(-0.015, 0.015), 0));
  const Trajectory tr(knots);
  double prev = -1.0;
  for (int i = 0; i <= 1000; ++i) {
    const double s = i / 1000.0;
    const double a = tr.arclength(s);
    EXPECT_GT(a, prev);
    prev = a;
  }
  // equal steps in s give equal path increments
  const int n = 400;
  for (int i = 0; i < n; ++i) {
    double seg = 0.0;
    for (int j = 0; j < 50; ++j)
      seg += (tr.point((i + (j + 1) / 50.0) / n) - tr.point((i + j / 50.0) / n)).norm();
    EXPECT_NEAR(seg, tr.length() / n, 1e-6 * tr.length() / n);
  }
}

TEST(Trajectory, StraightLineHistory) {
  Rng rng(8);
  const auto h = line_history(Vec3(0, 0, 0.1), Vec3(0.2, 0, 0.1), 201, 0.0, rng);
  const Trajectory tr = build_trajectory(h, rng);
  EXPECT_NEAR(tr.length(), 0.2, 1e-4);
  EXPECT_LT((tr.point(0.5) - Vec3(0.1, 0, 0.1)).norm(), 1e-4);
}

TEST(Trajectory, NoisyBendStaysInsideTube) {
  Rng rng(9);
  std::vector<TimedPosition> h;
  for (int i = 0; i <= 600; ++i) h.push_back({0.1 * i, bend_curve(i / 600.0) + 0.5e-3 * Vec3(rng.normal(), rng.normal(), rng.normal())});
  const Trajectory tr = build_trajectory(h, rng);
  // dense-sampling distance from the trajectory to the generating curve
  double worst = 0.0;
  for (const auto& p : tr.polyline(400)) {
    double best = std::numeric_limits<double>::infinity();
    for (int j = 0; j <= 4000; ++j) best = std::min(best, (bend_curve(j / 4000.0) - p).norm());
    worst = std::max(worst, best);
  }
  EXPECT_LT(worst, 0.010);
}

TEST(Trajectory, DeterministicPerSeed) {
  Rng noise(10);
  std::vector<TimedPosition> h;
  for (int i = 0; i <= 300; ++i) h.push_back({0.1 * i, bend_curve(i / 300.0) + 1e-3 * Vec3(noise.normal(), noise.normal(), 0)});
  Rng a(77), b(77);
  EXPECT_EQ(build_trajectory(h, a).knots(), build_trajectory(h, b).knots());
}

TEST(Trajectory, ShortHistoryRejected) {
  Rng rng(11);
  EXPECT_THROW(build_trajectory(line_history(Vec3::Zero(), Vec3(0.01, 0, 0), 20, 0.0, rng), rng), DegenerateInput);
}

TEST(Trajectory, JsonRoundTrip) {
  const Trajectory tr({Vec3(0, 0, 0.1), Vec3(0.05, 0.01, 0.1), Vec3(0.1, 0.0, 0.1)});
  const Trajectory back = Trajectory::from_json(tr.to_json());
  EXPECT_EQ(back.knots(), tr.knots());
  EXPECT_EQ(back.length(), tr.length());
}

TEST(NearestParameter, PointOnCurve) {
  const Trajectory tr({Vec3(0, 0, 0.1), Vec3(0.05, 0.02, 0.1), Vec3(0.1, 0.0, 0.1), Vec3(0.15, -0.02, 0.1)});
  EXPECT_NEAR(tr.nearest_parameter(tr.point(0.37)), 0.37, 1e-4);
}

TEST(NearestParameter, TieGoesToSmallerParameter) {
  // two straight arms meeting at a corner; the query sits on the bisector
  const Trajectory tr({Vec3(-0.1, 0.1, 0), Vec3(-0.05, 0.05, 0), Vec3(0, 0, 0), Vec3(0.05, 0.05, 0), Vec3(0.1, 0.1, 0)});
  const double s = tr.nearest_parameter(Vec3(0, 0.2, 0));
  EXPECT_LT(s, 0.5);
}

TEST(NearestParameter, MatchesDenseSearch) {
  Rng rng(12);
  std::vector<Vec3> knots{Vec3::Zero()};
  for (int i = 0; i < 10; ++i) knots.push_back(knots.back() + Vec3(0.02, rng.uniform(-0.02, 0.02), 0));
  const Trajectory tr(knots);
  for (int i = 0; i < 100; ++i) {
    const Vec3 p = tr.point(rng.uniform()) + 0.004 * rng.unit_vector();
    double best_s = 0.0, best = std::numeric_limits<double>::infinity();
    for (int j = 0; j <= 20000; ++j) {
      const double d = (tr.point(j / 20000.0) - p).norm();
      if (d < best) {
        best = d;
        best_s = j / 20000.0;
      }
    }
    const double s = tr.nearest_parameter(p);
    // parameters agree, or the two points are equally close (flat distance profile)
    EXPECT_TRUE(std::abs(s - best_s) < 1e-3 || (tr.point(s) - p).norm() <= best + 1e-9) << i;
  }
}

TEST(Truncate, ReversedSegment) {
  const Trajectory tr({Vec3(0, 0, 0), Vec3(0.1, 0.02, 0), Vec3(0.2, 0, 0)});
  const Segment seg = truncate(tr, 0.8, make_goal(tr, 0.3));
  EXPECT_EQ(seg.direction(), -1.0);
  EXPECT_LT((seg.start() - tr.point(0.8)).norm(), 1e-15);
  EXPECT_LT((seg.end() - tr.point(0.3)).norm(), 1e-15);
  EXPECT_NEAR(seg.length(), 0.5 * tr.length(), 1e-15);
  EXPECT_LT((seg.tangent_at(0.0) + tr.tangent(0.8)).norm(), 1e-12);
}

TEST(Truncate, WholeTrajectoryAndZeroLength) {
  const Trajectory tr({Vec3(0, 0, 0), Vec3(0.1, 0.02, 0), Vec3(0.2, 0, 0)});
  const Segment seg = truncate(tr, 0.0, make_goal(tr, 1.0));
  EXPECT_NEAR(seg.length(), tr.length(), 1e-15);
  EXPECT_LT((seg.point_at(seg.length()) - tr.point(1.0)).norm(), 1e-15);
  EXPECT_THROW(truncate(tr, 0.4, make_goal(tr, 0.4)), ZeroLength);
  EXPECT_THROW(make_goal(tr, 1.2), OutOfRange);
}
