#include "capnav/magnetics.hpp"

#include <gtest/gtest.h>

using namespace capnav;

namespace {

Vec3 random_unit_vec(Rng& rng) {
  Vec3 v;
  do v = Vec3(rng.normal(), rng.normal(), rng.normal());
  while (v.norm() < 1e-6);
  return v.normalized();
}

double rel(const Vec3& a, const Vec3& b) { return (a - b).norm() / b.norm(); }

}  // namespace

TEST(DipoleField, OnAxisClosedForm) {
  const Vec3 b = dipole_field({Vec3::Zero(), Vec3::UnitZ()}, Vec3(0, 0, 0.1));
  EXPECT_LT(rel(b, Vec3(0, 0, 2.0e-4)), 1e-12);
}

TEST(DipoleField, EquatorialClosedForm) {
  const Vec3 b = dipole_field({Vec3::Zero(), Vec3::UnitZ()}, Vec3(0.1, 0, 0));
  EXPECT_LT(rel(b, Vec3(0, 0, -1.0e-4)), 1e-12);
}

TEST(DipoleField, ActuatorOnAxisAt15cm) {
  const double m = magnet_moment(MagnetGeometry::sphere(0.05, 1.32));
  const Vec3 b = dipole_field({Vec3::Zero(), m * Vec3::UnitZ()}, Vec3(0, 0, 0.15));
  // 2 * 1e-7 * m / d^3, written out by hand
  EXPECT_NEAR(b.z(), 2e-7 * m / (0.15 * 0.15 * 0.15), 1e-15);
  EXPECT_NEAR(b.z(), 4.07e-3, 0.01e-3);
}

// Uniformly magnetized sphere: the exterior field equals the point dipole's.
// Summing the field of many small volume elements is an independent check.
TEST(DipoleField, MatchesIntegratedUniformSphere) {
  const double R = 0.025, br = 1.32;
  const double M = br / kMu0;  // A/m
  const int n = 24;
  const double h = 2 * R / n;
  const Vec3 at(0.03, -0.02, 0.15);
  Vec3 sum = Vec3::Zero();
  double volume = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        const Vec3 c(-R + (i + 0.5) * h, -R + (j + 0.5) * h, -R + (k + 0.5) * h);
        if (c.norm() > R) continue;
        sum += dipole_field({c, M * h * h * h * Vec3::UnitZ()}, at);
        volume += h * h * h;
      }
  // rescale to the exact volume so only the spatial distribution is tested
  sum *= (4.0 / 3.0 * kPi * R * R * R) / volume;
  const Vec3 point = dipole_field({Vec3::Zero(), magnet_moment(MagnetGeometry::sphere(2 * R, br)) * Vec3::UnitZ()}, at);
  EXPECT_LT(rel(sum, point), 2e-3);
}

TEST(DipoleField, SingularityNearSource) {
  EXPECT_THROW(dipole_field({Vec3::Zero(), Vec3::UnitZ()}, Vec3(1e-7, 0, 0)), SingularityError);
  EXPECT_THROW(dipole_force_torque({Vec3::Zero(), Vec3::UnitZ()}, {Vec3::Zero(), Vec3::UnitX()}), SingularityError);
}

TEST(DipoleField, InverseCubeDecayOnRays) {
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    const Dipole s{Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)), 5.0 * random_unit_vec(rng)};
    const Vec3 dir = random_unit_vec(rng);
    const double d = rng.uniform(0.01, 0.5);
    const Vec3 b1 = dipole_field(s, s.position + d * dir);
    const Vec3 b2 = dipole_field(s, s.position + 2 * d * dir);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(b2[k], b1[k] / 8.0, 1e-12 * b1.norm());
  }
}

TEST(DipoleField, LinearInMoment) {
  Rng rng(12);
  for (int i = 0; i < 50; ++i) {
    const Vec3 m = random_unit_vec(rng);
    const Vec3 at = 0.2 * random_unit_vec(rng);
    const double a = rng.uniform(-10, 10);
    const Vec3 lhs = dipole_field({Vec3::Zero(), a * m}, at);
    const Vec3 rhs = a * dipole_field({Vec3::Zero(), m}, at);
    EXPECT_LT((lhs - rhs).norm(), 1e-13 * rhs.norm());
  }
}

TEST(DipoleField, GradientMatchesFiniteDifference) {
  Rng rng(13);
  for (int i = 0; i < 50; ++i) {
    const Dipole s{Vec3::Zero(), 3.0 * random_unit_vec(rng)};
    const Vec3 at = rng.uniform(0.05, 0.3) * random_unit_vec(rng);
    const Mat3 g = dipole_field_gradient(s, at);
    const double h = 1e-6;
    for (int k = 0; k < 3; ++k) {
      const Vec3 e = h * Vec3::Unit(k);
      const Vec3 fd = (dipole_field(s, at + e) - dipole_field(s, at - e)) / (2 * h);
      EXPECT_LT((g.col(k) - fd).norm(), 1e-5 * g.norm());
    }
  }
}

TEST(DipoleForce, CoaxialPair) {
  const Wrench w = dipole_force_torque({Vec3::Zero(), 68.7 * Vec3::UnitZ()}, {Vec3(0, 0, 0.15), 0.963 * Vec3::UnitZ()});
  const double expected = 6e-7 * 68.7 * 0.963 / std::pow(0.15, 4);
  EXPECT_NEAR(w.force.z(), -expected, 1e-12 * expected);  // attraction pulls the capsule toward the actuator
  EXPECT_NEAR(w.force.z(), -7.84e-2, 0.01e-2);
  EXPECT_LT(w.force.head<2>().norm(), 1e-15);
}

TEST(DipoleForce, ParallelMomentHasNoTorque) {
  const Dipole a{Vec3::Zero(), 10.0 * Vec3(0.3, -0.2, 1.0).normalized()};
  const Vec3 p(0.05, 0.07, 0.12);
  const Vec3 b = dipole_field(a, p);
  const Wrench w = dipole_force_torque(a, {p, 0.963 * b.normalized()});
  EXPECT_LT(w.torque.norm(), 1e-18);
}

TEST(DipoleForce, MatchesEnergyFiniteDifference) {
  Rng rng(21);
  const double h = 1e-6;
  for (int i = 0; i < 100; ++i) {
    const Dipole a{Vec3(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)), 68.7 * random_unit_vec(rng)};
    const Vec3 pc = a.position + rng.uniform(0.06, 0.3) * random_unit_vec(rng);
    const Vec3 mc = 0.963 * random_unit_vec(rng);
    Vec3 fd;
    for (int k = 0; k < 3; ++k) {
      const Vec3 e = h * Vec3::Unit(k);
      fd[k] = -(potential_energy(a, {pc + e, mc}) - potential_energy(a, {pc - e, mc})) / (2 * h);
    }
    const Vec3 f = dipole_force_torque(a, {pc, mc}).force;
    EXPECT_LT((f - fd).norm() / f.norm(), 1e-5) << "configuration " << i;
  }
}

TEST(DipoleForce, AntisymmetricExactly) {
  Rng rng(22);
  for (int i = 0; i < 100; ++i) {
    const Dipole a{0.1 * random_unit_vec(rng), 50.0 * random_unit_vec(rng)};
    const Dipole c{a.position + 0.15 * random_unit_vec(rng), random_unit_vec(rng)};
    const Vec3 f1 = dipole_force_torque(a, c).force;
    const Vec3 f2 = dipole_force_torque(c, a).force;
    EXPECT_EQ(f1, Vec3(-f2));
  }
}

TEST(DipoleForce, FrameCovariance) {
  Rng rng(23);
  for (int i = 0; i < 100; ++i) {
    const Mat3 R = Eigen::Quaterniond(rng.normal(), rng.normal(), rng.normal(), rng.normal()).normalized().toRotationMatrix();
    const Dipole a{0.1 * random_unit_vec(rng), 50.0 * random_unit_vec(rng)};
    const Dipole c{a.position + 0.15 * random_unit_vec(rng), random_unit_vec(rng)};
    const Wrench w = dipole_force_torque(a, c);
    const Wrench wr = dipole_force_torque({R * a.position, R * a.moment}, {R * c.position, R * c.moment});
    EXPECT_LT((wr.force - R * w.force).norm(), 1e-10 * w.force.norm());
    EXPECT_LT((wr.torque - R * w.torque).norm(), 1e-10 * std::max(w.torque.norm(), 1e-30));
  }
}

TEST(MagnetMoment, SphereAndRing) {
  // volume formulas written out independently
  const double sphere_v = 4.0 / 3.0 * kPi * std::pow(0.025, 3);
  EXPECT_NEAR(magnet_moment(MagnetGeometry::sphere(0.05, 1.32)), 1.32 * sphere_v / (4e-7 * kPi), 1e-9);
  // the quoted figure carries three significant digits
  EXPECT_NEAR(magnet_moment(MagnetGeometry::sphere(0.05, 1.32)), 68.7, 1e-3 * 68.7);
  const double ring_v = kPi * (0.0064 * 0.0064 - 0.0045 * 0.0045) * 0.015;
  EXPECT_NEAR(magnet_moment(MagnetGeometry::ring(0.0128, 0.009, 0.015, 1.24)), 1.24 * ring_v / (4e-7 * kPi), 1e-12);
  EXPECT_NEAR(magnet_moment(MagnetGeometry::ring(0.0128, 0.009, 0.015, 1.24)), 0.963, 0.001);
}

TEST(MagnetMoment, ScalesWithVolume) {
  for (const auto& g : {MagnetGeometry::sphere(0.05, 1.32), MagnetGeometry::ring(0.0128, 0.009, 0.015, 1.24)})
    EXPECT_NEAR(magnet_moment(g.scaled(2.0)), 8.0 * magnet_moment(g), 1e-12 * magnet_moment(g));
}

TEST(MagnetMoment, GradeTableAndValidation) {
  const auto table = default_remanence_table();
  EXPECT_EQ(remanence_for_grade("N42", table), 1.32);
  EXPECT_EQ(remanence_for_grade("N38SH", table), 1.24);
  EXPECT_THROW(remanence_for_grade("N99", table), DegenerateInput);
  EXPECT_THROW(magnet_moment(MagnetGeometry::ring(0.009, 0.0128, 0.015, 1.24)), DegenerateInput);
  EXPECT_THROW(magnet_moment(MagnetGeometry::sphere(0.05, 0.0)), DegenerateInput);
}
