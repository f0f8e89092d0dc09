#include "capnav/config.hpp"
#include "capnav/session.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace capnav;

namespace {

StateSample sample(double t, double arc, const Vec3& truth) {
  StateSample s;
  s.t = t;
  s.phase = "withdrawal";
  s.true_arc_length = arc;
  s.true_position = truth;
  s.est_position = truth;
  return s;
}

Event arrival(double t, int goal, const Vec3& truth) {
  Event e;
  e.t = t;
  e.type = "arrival";
  e.goal = goal;
  e.true_position = truth;
  e.est_position = truth;
  return e;
}

// Straight trajectory along x at 0.1 m height, goals at s = 0.5 then 0.2 then 0.5.
NavigationSession hand_session(const Vec3& first_visit, const Vec3& second_visit) {
  NavigationSession s;
  s.environment = "pvc-straight";
  s.seed = 4;
  s.config = config_to_yaml(default_config());
  s.trajectory = Trajectory({Vec3(0, 0, 0.1), Vec3(0.05, 0, 0.1), Vec3(0.1, 0, 0.1)});
  s.goals = {make_goal(s.trajectory, 0.5, "a"), make_goal(s.trajectory, 0.2, "b")};
  // capsule rides 1 mm to the side of the trajectory
  s.states = {sample(0.0, 0.00, Vec3(0.08, 0.001, 0.1)), sample(4.0, 0.03, Vec3(0.05, 0.001, 0.1)),
              sample(6.0, 0.06, Vec3(0.02, 0.001, 0.1)), sample(10.0, 0.09, Vec3(0.05, 0.001, 0.1))};
  s.events = {arrival(2.0, 0, first_visit), arrival(5.0, 1, s.goals[1].position), arrival(9.0, 0, second_visit)};
  Phase ph;
  ph.name = "withdrawal";
  ph.method = "tf";
  ph.actuation = "RRMA";
  ph.start = 0.0;
  ph.end = 10.0;
  ph.goals = {0, 1, 0};
  ph.completed = true;
  ph.success = true;
  s.phases = {ph};
  return s;
}

}  // namespace

TEST(Config, DefaultRoundTrip) {
  const RunConfig c = default_config();
  const std::string text = config_to_yaml(c);
  EXPECT_EQ(config_to_yaml(load_config_text(text)), text);
}

TEST(Config, PartialOverrideKeepsDefaults) {
  const RunConfig c = load_config_text("tf:\n  v_ref: 0.004\nwithdrawal:\n  actuation:\n    kind: CRMA\n");
  EXPECT_EQ(c.tf.v_ref, 0.004);
  EXPECT_EQ(c.withdrawal.mode.kind, ActuationKind::CRMA);
  EXPECT_EQ(c.tf.mode.kind, ActuationKind::CRMA);
  EXPECT_EQ(c.tf.horizon, default_config().tf.horizon);
  EXPECT_EQ(c.sensing.noise_sigma, 0.5e-6);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  try {
    load_config_text("tf:\n  v_ref: 0.004\n  speeed: 1\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line, 3);
  }
  EXPECT_THROW(load_config_text("dynamics:\n  dt: 0.5\n"), ParseError);
  EXPECT_THROW(load_config_text("tf: 3\n"), ParseError);
  EXPECT_THROW(load_config_text("insertion:\n  actuation:\n    kind: SPIN\n"), ParseError);
  EXPECT_THROW(load_config_text("withdrawal:\n  goals: [0.2, 1.4]\n"), ParseError);
}

TEST(Metrics, HandComputedSession) {
  const NavigationSession s = hand_session(Vec3(0.051, 0, 0.1), Vec3(0.05, 0.002, 0.1));
  const Metrics m = compute_metrics(s);
  ASSERT_EQ(m.phases.size(), 1u);
  const PhaseMetrics& p = m.phases[0];
  EXPECT_NEAR(p.path_length, 90.0, 1e-9);
  EXPECT_NEAR(p.elapsed, 10.0, 1e-15);
  EXPECT_NEAR(p.average_speed, 9.0, 1e-9);
  ASSERT_TRUE(p.tracking_error.has_value());
  EXPECT_NEAR(*p.tracking_error, 1.0, 1e-6);
  ASSERT_EQ(p.goals.size(), 3u);
  EXPECT_NEAR(p.goals[0].accuracy, 1.0, 1e-9);
  EXPECT_NEAR(p.goals[1].accuracy, 0.0, 1e-12);
  EXPECT_NEAR(p.goals[2].accuracy, 2.0, 1e-9);
  ASSERT_EQ(p.repeats.size(), 1u);
  EXPECT_EQ(p.repeats[0].s, 0.5);
  EXPECT_NEAR(p.repeats[0].repeatability, std::sqrt(5.0), 1e-9);
}

TEST(Metrics, ExactArrivalsGiveZeroAccuracyAndRepeatability) {
  const Vec3 g(0.05, 0, 0.1);
  const Metrics m = compute_metrics(hand_session(g, g));
  for (const auto& gm : m.phases[0].goals) EXPECT_NEAR(gm.accuracy, 0.0, 1e-12);
  EXPECT_EQ(m.phases[0].repeats[0].repeatability, 0.0);
}

TEST(Metrics, MissingVisitsAndPhases) {
  NavigationSession s = hand_session(Vec3(0.05, 0, 0.1), Vec3(0.05, 0, 0.1));
  s.events.pop_back();
  EXPECT_THROW(compute_metrics(s), MissingData);
  s.phases[0].completed = false;
  EXPECT_THROW(compute_metrics(s), MissingData);
}

TEST(Session, SaveLoadSaveIsByteIdentical) {
  const NavigationSession s = hand_session(Vec3(0.051, 0, 0.1), Vec3(0.05, 0.002, 0.1));
  const auto path = std::filesystem::temp_directory_path() / "capnav_session_roundtrip.json";
  save_session(s, path.string());
  const NavigationSession back = load_session(path.string());
  std::filesystem::remove(path);
  EXPECT_EQ(session_to_string(back), session_to_string(s));
  EXPECT_EQ(back.states, s.states);
  EXPECT_EQ(back.events, s.events);
  EXPECT_EQ(back.phases, s.phases);
  // metrics recomputed from the reloaded logs equal the originals
  EXPECT_EQ(to_json(compute_metrics(back)), to_json(compute_metrics(s)));
}

TEST(Session, TruncatedAndForeignFilesRejected) {
  const std::string text = session_to_string(hand_session(Vec3(0.05, 0, 0.1), Vec3(0.05, 0, 0.1)));
  EXPECT_THROW(session_from_string(text.substr(0, text.size() / 2)), SchemaError);
  EXPECT_THROW(session_from_string("{\"schema\": \"other/2\"}"), SchemaError);
  EXPECT_THROW(session_from_string("{\"schema\": \"capnav-session/1\"}"), SchemaError);
  EXPECT_THROW(load_session("/nonexistent/session.json"), SchemaError);
}

TEST(Session, OutOfOrderStatesRejected) {
  NavigationSession s = hand_session(Vec3(0.05, 0, 0.1), Vec3(0.05, 0, 0.1));
  std::swap(s.states[1], s.states[2]);
  EXPECT_THROW(session_from_string(session_to_string(s)), SchemaError);
}
