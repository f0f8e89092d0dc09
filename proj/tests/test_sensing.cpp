#include "capnav/sensing.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace capnav;

TEST(SensorArray, DefaultLayout) {
  const ArrayConfig a;
  EXPECT_EQ(a.count(), 80);
  EXPECT_EQ(a.position(0), Vec3::Zero());
  EXPECT_LT((a.position(79) - Vec3(0.54, 0.42, 0.0)).norm(), 1e-15);
  EXPECT_LT((a.position(12) - Vec3(0.12, 0.06, 0.0)).norm(), 1e-15);
  EXPECT_EQ(a.sample_rate, 100.0);
}

TEST(SimulateFrame, CapsuleDirectlyAboveSensor) {
  ArrayConfig a;
  Rng rng(1);
  const Vec3 s = a.position(23);
  const SensorFrame f = simulate_frame({Dipole{s + Vec3(0, 0, 0.10), 0.963 * Vec3::UnitZ()}}, a, 0.0, Vec3::Zero(), rng);
  // on-axis: 2 * 1e-7 * m / d^3
  const double expected = 2e-7 * 0.963 / 1e-3;
  EXPECT_NEAR(f.readings[23].z(), expected, 1e-12 * expected);
  EXPECT_NEAR(f.readings[23].z(), 1.93e-4, 0.01e-4);
  EXPECT_LT(f.readings[23].head<2>().norm(), 1e-18);
}

TEST(SimulateFrame, AmbientPassthrough) {
  ArrayConfig a;
  Rng rng(1);
  const SensorFrame f = simulate_frame({}, a, 0.0, Vec3(0, 5e-5, 0), rng);
  for (const auto& r : f.readings) EXPECT_EQ(r, Vec3(0, 5e-5, 0));
  EXPECT_EQ(f.active_count(), 80);
}

TEST(SimulateFrame, DeterministicPerSeed) {
  ArrayConfig a;
  Rng r1(99), r2(99);
  const std::vector<Dipole> src{{Vec3(0.2, 0.2, 0.1), Vec3(0.5, 0, 0)}};
  const SensorFrame f1 = simulate_frame(src, a, 1e-6, Vec3(1e-5, 0, 0), r1, 0.5);
  const SensorFrame f2 = simulate_frame(src, a, 1e-6, Vec3(1e-5, 0, 0), r2, 0.5);
  EXPECT_TRUE(f1 == f2);
  std::ostringstream o1, o2;
  write_frame_records(o1, f1);
  write_frame_records(o2, f2);
  EXPECT_EQ(o1.str(), o2.str());
}

TEST(SimulateFrame, Superposition) {
  ArrayConfig a;
  Rng rng(5);
  const Dipole A{Vec3(0.1, 0.2, 0.12), Vec3(0.9, 0.1, 0.0)};
  const Dipole B{Vec3(0.4, 0.1, 0.25), Vec3(0, 0, 60.0)};
  const Vec3 amb(2e-5, -1e-5, -4e-5);
  const SensorFrame ab = simulate_frame({A, B}, a, 0.0, amb, rng);
  const SensorFrame fa = simulate_frame({A}, a, 0.0, Vec3::Zero(), rng);
  const SensorFrame fb = simulate_frame({B}, a, 0.0, Vec3::Zero(), rng);
  for (int i = 0; i < a.count(); ++i) {
    const Vec3 d = ab.readings[i] - fa.readings[i] - fb.readings[i];
    EXPECT_LT((d - amb).norm(), 1e-15);
  }
}

TEST(SimulateFrame, NoiseStatistics) {
  ArrayConfig a;
  a.rows = 1;
  a.cols = 2;
  Rng rng(7);
  const double sigma = 1e-6;
  const int n = 10000;
  Vec3 sum = Vec3::Zero(), sq = Vec3::Zero();
  for (int k = 0; k < n; ++k) {
    const Vec3 r = simulate_frame({}, a, sigma, Vec3::Zero(), rng).readings[1];
    sum += r;
    sq += r.cwiseProduct(r);
  }
  for (int ax = 0; ax < 3; ++ax) {
    const double mean = sum[ax] / n;
    const double sd = std::sqrt((sq[ax] - n * mean * mean) / (n - 1));
    EXPECT_NEAR(sd, sigma, 0.05 * sigma) << "axis " << ax;
  }
}

TEST(SimulateFrame, RejectsNegativeNoise) {
  Rng rng(1);
  EXPECT_THROW(simulate_frame({}, ArrayConfig{}, -1.0, Vec3::Zero(), rng), DegenerateInput);
}

TEST(Background, ConstantEstimate) {
  ArrayConfig a;
  Rng rng(1);
  const SensorFrame f = simulate_frame({}, a, 0.0, Vec3(0, 5e-5, 0), rng);
  for (const auto& r : subtract_background(f, Vec3(0, 5e-5, 0)).readings) EXPECT_EQ(r, Vec3::Zero());
  EXPECT_TRUE(subtract_background(f, Vec3::Zero()) == f);
  EXPECT_THROW(subtract_background(f, Vec3(NAN, 0, 0)), DegenerateInput);
}

TEST(Background, CalibrationAveragesOutNoise) {
  ArrayConfig a;
  Rng rng(3);
  const double sigma = 0.5e-6;
  const Vec3 amb(2e-5, 0.0, -4.5e-5);
  std::vector<SensorFrame> frames;
  for (int k = 0; k < 1000; ++k) frames.push_back(simulate_frame({}, a, sigma, amb, rng));
  const auto table = calibrate_background(frames);
  // residual of a fresh noiseless frame after subtraction: root mean square over
  // every sensor axis, expected near sigma / sqrt(1000)
  const SensorFrame clean = simulate_frame({}, a, 0.0, amb, rng);
  const SensorFrame res = subtract_background(clean, table);
  double ss = 0.0;
  for (const auto& r : res.readings) ss += r.squaredNorm();
  EXPECT_LT(std::sqrt(ss / (3.0 * a.count())), sigma / 10.0);
  EXPECT_THROW(calibrate_background({}), InsufficientHistory);
}

TEST(Records, RoundTripIsLossless) {
  ArrayConfig a;
  Rng rng(4);
  std::vector<SensorFrame> frames;
  for (int k = 0; k < 3; ++k) {
    SensorFrame f = simulate_frame({Dipole{Vec3(0.2, 0.2, 0.1), Vec3(0.9, 0, 0)}}, a, 0.5e-6, Vec3::Zero(), rng, 0.01 * k);
    if (k == 1) f.active[5] = false;
    frames.push_back(f);
  }
  std::stringstream ss;
  for (const auto& f : frames) write_frame_records(ss, f);
  const auto back = read_frame_records(ss, a);
  ASSERT_EQ(back.size(), frames.size());
  for (std::size_t k = 0; k < frames.size(); ++k) {
    EXPECT_EQ(back[k].active, frames[k].active);
    for (int i = 0; i < a.count(); ++i) {
      if (frames[k].active[i]) {
        EXPECT_EQ(back[k].readings[i], frames[k].readings[i]);
      }
    }
  }
}

TEST(Records, MalformedInputs) {
  ArrayConfig a;
  auto parse = [&](const std::string& s) {
    std::istringstream is(s);
    return read_frame_records(is, a);
  };
  EXPECT_THROW(parse("0,1,2,3\n"), ParseError);
  EXPECT_THROW(parse("0,80,0,0,0\n"), ParseError);
  EXPECT_THROW(parse("0,1.5,0,0,0\n"), ParseError);
  EXPECT_THROW(parse("0,1,x,0,0\n"), ParseError);
  EXPECT_THROW(parse("1,1,0,0,0\n0,2,0,0,0\n"), ParseError);
  try {
    parse("# header\n0,1,0,0,0\n0,1,0,0\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line, 3);
  }
  EXPECT_EQ(parse("# only a comment\n").size(), 0u);
}

TEST(Mask, RestrictsActiveSensors) {
  ArrayConfig a;
  Rng rng(1);
  const SensorFrame f = simulate_frame({}, a, 0.0, Vec3::Zero(), rng);
  std::vector<bool> m(a.count(), false);
  m[3] = m[7] = true;
  EXPECT_EQ(with_mask(f, m).active_count(), 2);
  EXPECT_THROW(with_mask(f, std::vector<bool>(3, true)), DegenerateInput);
}
