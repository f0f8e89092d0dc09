#include "capnav/following.hpp"

#include <gtest/gtest.h>

using namespace capnav;

namespace {

using Mat2 = Eigen::Matrix2d;
using Vec2 = Eigen::Vector2d;

// exp(M) by scaling and squaring with a Taylor series
Eigen::Matrix3d expm(const Eigen::Matrix3d& M) {
  int s = 0;
  double n = M.lpNorm<Eigen::Infinity>();
  while (n > 0.25) {
    n /= 2;
    ++s;
  }
  const Eigen::Matrix3d X = M / std::pow(2.0, s);
  Eigen::Matrix3d term = Eigen::Matrix3d::Identity(), sum = Eigen::Matrix3d::Identity();
  for (int k = 1; k < 30; ++k) {
    term = term * X / k;
    sum += term;
  }
  for (int i = 0; i < s; ++i) sum = sum * sum;
  return sum;
}

// Discrete 1-D plant m v' = u - b v, from the block exponential of [A B; 0 0].
std::pair<Mat2, Vec2> discretize(double m, double b, double dt) {
  Eigen::Matrix3d M = Eigen::Matrix3d::Zero();
  M(0, 1) = 1.0;
  M(1, 1) = -b / m;
  M(1, 2) = 1.0 / m;
  const Eigen::Matrix3d E = expm(M * dt);
  return {E.topLeftCorner<2, 2>(), E.topRightCorner<2, 1>()};
}

// Finite-horizon tracking LQ by a backward Riccati recursion with an affine term:
// minimize sum_{k=1..N} (x_k - r_k)' Q (x_k - r_k) + sum_{k=0..N-1} R u_k^2.
std::vector<double> lq_tracking(const Mat2& A, const Vec2& B, const Mat2& Q, double R, const Vec2& x0,
                                const std::vector<Vec2>& r) {
  const int N = static_cast<int>(r.size()) - 1;
  std::vector<Mat2> P(N + 1);
  std::vector<Vec2> q(N + 1);
  P[N] = Q;
  q[N] = Q * r[N];
  for (int k = N - 1; k >= 0; --k) {
    const Mat2& S = P[k + 1];
    const Vec2& sv = q[k + 1];
    const double h = R + B.dot(S * B);
    const Vec2 SB = S * B;
    P[k] = A.transpose() * S * A - A.transpose() * SB * SB.transpose() * A / h;
    q[k] = A.transpose() * sv - A.transpose() * SB * B.dot(sv) / h;
    if (k >= 1) {
      P[k] += Q;
      q[k] += Q * r[k];
    }
  }
  std::vector<double> u;
  Vec2 x = x0;
  for (int k = 0; k < N; ++k) {
    const Mat2& S = P[k + 1];
    const double h = R + B.dot(S * B);
    const double uk = -(B.dot(S * A * x) - B.dot(q[k + 1])) / h;
    u.push_back(uk);
    x = A * x + B * uk;
  }
  return u;
}

Trajectory straight(const Vec3& a, const Vec3& b) { return Trajectory({a, 0.5 * (a + b), b}); }

MPCOptions frictionless() {
  MPCOptions o;
  o.plant.friction = 0.0;
  o.scenarios = {1.0};
  o.f_max = 100.0;
  return o;
}

}  // namespace

TEST(Reference, CapsuleAtGoalGivesStationaryWindow) {
  const Trajectory tr = straight(Vec3(0, 0, 0.05), Vec3(0.1, 0, 0.05));
  const Segment seg = truncate(tr, 0.0, make_goal(tr, 1.0));
  const ReferenceWindow w = build_reference(tr.point(1.0), seg, 0.006, 10, 0.1);
  ASSERT_EQ(w.positions.size(), 11u);
  for (int i = 0; i <= 10; ++i) {
    EXPECT_LT((w.positions[i] - tr.point(1.0)).norm(), 1e-12);
    EXPECT_EQ(w.velocities[i], Vec3::Zero());
  }
}

TEST(Reference, SpacingIsSpeedTimesPeriod) {
  const Trajectory tr = straight(Vec3(0, 0, 0.05), Vec3(0.1, 0, 0.05));
  const Segment seg = truncate(tr, 0.8, make_goal(tr, 0.2));
  const ReferenceWindow w = build_reference(tr.point(0.8), seg, 0.002, 10, 0.1);
  for (int i = 0; i < 10; ++i) {
    EXPECT_NEAR((w.positions[i + 1] - w.positions[i]).norm(), 2e-4, 1e-12);
    EXPECT_LT((w.velocities[i] - Vec3(-0.002, 0, 0)).norm(), 1e-12);
  }
  // the window stops at the goal and the last step's speed brings it there exactly
  const ReferenceWindow end = build_reference(tr.point(0.205), seg, 0.006, 10, 0.1);
  EXPECT_LT((end.positions.back() - tr.point(0.2)).norm(), 1e-12);
  EXPECT_NEAR(end.velocities.front().norm(), 0.005, 1e-9);
  EXPECT_EQ(end.velocities.back(), Vec3::Zero());
}

TEST(Mpc, ZeroForceWhenAtRestOnReference) {
  const Vec3 p(0.1, 0.2, 0.05);
  const MPCSolution sol = rmmpc_solve(p, Vec3::Zero(), hold_reference(p, 10, 0.1), MPCOptions{});
  for (const auto& f : sol.forces) EXPECT_EQ(f, Vec3::Zero());
  EXPECT_EQ(sol.worst_cost, 0.0);
}

TEST(Mpc, ZohMatchesMatrixExponential) {
  const PlantModel m;
  const auto [A, B] = discretize(m.mass, m.drag, 0.1);
  const auto c = detail::zoh(m, 0.1);
  EXPECT_NEAR(A(1, 1), c.alpha, 1e-12);
  EXPECT_NEAR(B(1), c.beta, 1e-12);
  EXPECT_NEAR(A(0, 1), c.gamma, 1e-12);
  EXPECT_NEAR(B(0), c.delta, 1e-12);
}

TEST(Mpc, FrictionlessMatchesFiniteHorizonLq) {
  Rng rng(31);
  const MPCOptions o = frictionless();
  const auto [A, B] = discretize(o.plant.mass, o.plant.drag, 0.1);
  const Mat2 Q = Vec2(o.weights.position, o.weights.velocity).asDiagonal();
  for (int N : {2, 10}) {
    for (int trial = 0; trial < 10; ++trial) {
      ReferenceWindow ref;
      ref.horizon = N;
      ref.dt = 0.1;
      std::vector<Vec2> rx;
      const double v = rng.uniform(-0.01, 0.01);
      const double start = rng.uniform(-0.005, 0.005);
      for (int i = 0; i <= N; ++i) {
        ref.positions.push_back(Vec3(start + v * 0.1 * i, 0, 0));
        ref.velocities.push_back(Vec3(v, 0, 0));
        rx.push_back(Vec2(start + v * 0.1 * i, v));
      }
      const double p0 = rng.uniform(-0.003, 0.003), v0 = rng.uniform(-0.005, 0.005);
      const std::vector<double> u = lq_tracking(A, B, Q, o.weights.force, Vec2(p0, v0), rx);
      const MPCSolution sol = rmmpc_solve(Vec3(p0, 0, 0), Vec3(v0, 0, 0), ref, o);
      ASSERT_EQ(static_cast<int>(sol.forces.size()), N);
      for (int k = 0; k < N; ++k) {
        EXPECT_NEAR(sol.forces[k].x(), u[k], 1e-6) << "N " << N << " step " << k;
        EXPECT_NEAR(sol.forces[k].y(), 0.0, 1e-12);
        EXPECT_NEAR(sol.forces[k].z(), 0.0, 1e-12);
      }
    }
  }
}

TEST(Mpc, CostHistoryNonIncreasing) {
  Rng rng(32);
  const Trajectory tr({Vec3(0, 0, 0.05), Vec3(0.05, 0.02, 0.05), Vec3(0.1, 0.0, 0.05), Vec3(0.15, 0.03, 0.05)});
  for (int trial = 0; trial < 200; ++trial) {
    const double s = rng.uniform(0.1, 0.9);
    const Vec3 p = tr.point(s) + 0.002 * rng.unit_vector();
    const Segment seg = truncate(tr, s, make_goal(tr, rng.bernoulli(0.5) ? 0.0 : 1.0));
    const ReferenceWindow ref = build_reference(p, seg, 0.006, 10, 0.1);
    const MPCSolution sol = rmmpc_solve(p, 0.01 * rng.uniform() * rng.unit_vector(), ref, MPCOptions{});
    for (std::size_t i = 1; i < sol.cost_history.size(); ++i) EXPECT_LE(sol.cost_history[i], sol.cost_history[i - 1]);
    EXPECT_EQ(sol.cost_history.back(), sol.worst_cost);
    EXPECT_EQ(*std::max_element(sol.scenario_costs.begin(), sol.scenario_costs.end()), sol.worst_cost);
  }
}

TEST(Mpc, ForceBoundNeverViolated) {
  Rng rng(33);
  MPCOptions o;
  for (int trial = 0; trial < 1000; ++trial) {
    o.f_max = rng.uniform(0.01, 0.2);
    const Vec3 target = rng.uniform(0.0, 0.05) * rng.unit_vector();
    ReferenceWindow ref = hold_reference(target, 10, 0.1);
    std::vector<Vec3> warm;
    if (rng.bernoulli(0.5))
      for (int i = 0; i < 10; ++i) warm.push_back(rng.uniform(0.0, 1.0) * rng.unit_vector());
    const MPCSolution sol = rmmpc_solve(Vec3::Zero(), 0.02 * rng.uniform() * rng.unit_vector(), ref, o, warm);
    for (const auto& f : sol.forces) ASSERT_LE(f.norm(), o.f_max * (1.0 + 1e-12)) << "solve " << trial;
  }
}

TEST(Mpc, RejectsInvalidProblems) {
  MPCOptions o;
  const ReferenceWindow ref = hold_reference(Vec3::Zero(), 5, 0.1);
  o.weights.position = std::numeric_limits<double>::infinity();
  EXPECT_THROW(rmmpc_solve(Vec3::Zero(), Vec3::Zero(), ref, o), NonFiniteCost);
  EXPECT_THROW(rmmpc_solve(Vec3(NAN, 0, 0), Vec3::Zero(), ref, MPCOptions{}), NonFiniteCost);
  o = MPCOptions{};
  o.f_max = 0.0;
  EXPECT_THROW(rmmpc_solve(Vec3::Zero(), Vec3::Zero(), ref, o), DegenerateInput);
}

TEST(BlendHeading, SlewLimit) {
  const Vec3 cur = Vec3::UnitX();
  const double limit = 10.0 * kPi / 180.0;
  const Vec3 small(std::cos(5.0 * kPi / 180), std::sin(5.0 * kPi / 180), 0);
  EXPECT_LT((blend_heading(small, cur, limit) - small).norm(), 1e-12);
  const Vec3 r = blend_heading(Vec3::UnitY(), cur, limit);
  EXPECT_LT((r - Vec3(std::cos(limit), std::sin(limit), 0)).norm(), 1e-12);
}

TEST(BlendHeading, NeverExceedsLimitAndMovesCloser) {
  Rng rng(34);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 cur = rng.unit_vector(), want = rng.unit_vector();
    const double limit = rng.uniform(0.01, 1.0);
    const Vec3 r = blend_heading(want, cur, limit);
    EXPECT_NEAR(r.norm(), 1.0, 1e-12);
    EXPECT_LE(angle_between(r, cur), limit + 1e-9);
    const double before = angle_between(cur, want);
    EXPECT_NEAR(angle_between(r, want), std::max(0.0, before - limit), 1e-7);
  }
}

TEST(ForcePlacement, ZeroRequestHoversAtNeutralDistance) {
  const Vec3 pc(0.2, 0.2, 0.05);
  for (auto kind : {ActuationKind::DMA, ActuationKind::CRMA, ActuationKind::RRMA}) {
    ActuationMode mode;
    mode.kind = kind;
    const ForcePlacement pl = place_for_force(Vec3::Zero(), Vec3::UnitX(), pc, mode, MagnetPair{}, ForceMapOptions{});
    EXPECT_NEAR(pl.distance, 0.10, 1e-6);
    EXPECT_LT((pl.offset_direction - Vec3::UnitZ()).norm(), 1e-4);
  }
}

TEST(ForcePlacement, LargerRequestBringsMagnetCloser) {
  const Vec3 pc(0.2, 0.2, 0.05);
  const ActuationMode mode;
  const ForceMapOptions o;
  const Vec3 neutral = neutral_force(pc, Vec3::UnitX(), mode, MagnetPair{}, o);
  const ForcePlacement pl = place_for_force(neutral, Vec3::UnitX(), pc, mode, MagnetPair{}, o);
  EXPECT_LT(pl.distance, 0.10);
  EXPECT_LT((pl.average_force - 2.0 * neutral).norm(), 1e-4 * neutral.norm());
  EXPECT_THROW(place_for_force(-neutral, Vec3::UnitX(), pc, mode, MagnetPair{}, o), UnreachableForce);
  EXPECT_THROW(place_for_force(100.0 * neutral, Vec3::UnitX(), pc, mode, MagnetPair{}, o), UnreachableForce);
}

TEST(ForcePlacement, AchievedForceMatchesRequest) {
  Rng rng(35);
  const Vec3 pc(0.2, 0.2, 0.05);
  const ActuationMode mode;
  const ForceMapOptions o;
  for (int i = 0; i < 20; ++i) {
    Vec3 f = rng.uniform(0.0, 0.05) * rng.unit_vector();
    f.z() = std::abs(f.z());
    const ForcePlacement pl = place_for_force(f, Vec3::UnitX(), pc, mode, MagnetPair{}, o);
    const Vec3 target = neutral_force(pc, Vec3::UnitX(), mode, MagnetPair{}, o) + f;
    EXPECT_LT(angle_between(pl.average_force, target), 1e-4) << i;
    EXPECT_NEAR(pl.average_force.norm(), target.norm(), 1e-6 * target.norm()) << i;
  }
}

TEST(TFController, GoalAtCurrentPositionArrivesImmediately) {
  const Trajectory tr = straight(Vec3(0.1, 0.2, 0.05), Vec3(0.25, 0.2, 0.05));
  TFConfig cfg;
  cfg.hold_time = 0.0;
  TFController tf(cfg, tr);
  tf.set_goal(make_goal(tr, 0.4), Vec3::UnitX(), 0.0);
  CapsuleState est;
  est.position = tr.point(0.4);
  const TFOutput out = tf.step(est, 0.0);
  EXPECT_TRUE(out.arrived);
  EXPECT_FALSE(out.stalled);
  EXPECT_LT(out.distance_to_goal, 1e-9);
  EXPECT_EQ(out.force, Vec3::Zero());
  EXPECT_NEAR((out.pose.position - est.position).norm(), 0.10, 1e-6);
}

TEST(TFController, RequiresGoalAndTrajectory) {
  EXPECT_THROW(TFController(TFConfig{}, Trajectory{}), MissingData);
  const Trajectory tr = straight(Vec3(0.1, 0.2, 0.05), Vec3(0.25, 0.2, 0.05));
  TFController tf(TFConfig{}, tr);
  EXPECT_THROW(tf.step(CapsuleState{}, 0.0), InvalidCommand);
}

TEST(TFController, StallDetectedWithoutProgress) {
  const Trajectory tr = straight(Vec3(0.1, 0.2, 0.10), Vec3(0.25, 0.2, 0.10));
  TFConfig cfg;
  cfg.stall_timeout = 2.0;
  TFController tf(cfg, tr);
  tf.set_goal(make_goal(tr, 0.0), Vec3::UnitX(), 0.0);
  CapsuleState est;
  est.position = tr.point(0.8);
  bool stalled = false;
  double when = 0.0;
  for (int k = 0; k <= 30 && !stalled; ++k) {
    when = 0.1 * k;
    stalled = tf.step(est, when).stalled;
  }
  EXPECT_TRUE(stalled);
  EXPECT_NEAR(when, 2.1, 1e-9);
}
