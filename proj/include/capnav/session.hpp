#pragma once

#include "capnav/trajectory.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace capnav {

inline constexpr const char* kSessionSchema = "capnav-session/1";

// One logged control tick. Ground truth is kept for metrics and display only.
struct StateSample {
  double t = 0.0;
  std::string phase;
  Vec3 est_position = Vec3::Zero();
  Vec3 est_velocity = Vec3::Zero();
  Vec3 est_heading = Vec3::UnitX();
  bool heading_valid = false;
  Vec3 true_position = Vec3::Zero();
  double true_arc_length = 0.0;
  Vec3 actuator_position = Vec3::Zero();
  Vec3 actuator_axis = Vec3::UnitX();
  Vec3 actuator_moment = Vec3::UnitZ();
  Vec3 force = Vec3::Zero();  // controller's requested force, zero outside TF

  bool operator==(const StateSample&) const = default;
};

struct Event {
  double t = 0.0;
  std::string type;    // phase, ack, reject, arrival, goal-failed, stall, trajectory, abort, end
  std::string detail;
  int goal = -1;       // index into the session goals for arrival and goal-failed
  Vec3 true_position = Vec3::Zero();
  Vec3 est_position = Vec3::Zero();

  bool operator==(const Event&) const = default;
};

// A contiguous stretch under one controller.
struct Phase {
  std::string name;       // insertion or withdrawal
  std::string method;     // ap, tf, backward-ap, tele-operation
  std::string actuation;  // DMA, CRMA, RRMA
  double start = 0.0;
  double end = 0.0;
  std::vector<int> goals;  // indices into the session goals, in visiting order
  bool completed = false;
  bool success = false;

  bool operator==(const Phase&) const = default;
};

struct NavigationSession {
  std::string environment;
  std::uint64_t seed = 0;
  std::string config;  // run configuration as YAML text
  std::vector<StateSample> states;
  std::vector<Event> events;
  std::vector<Phase> phases;
  Trajectory trajectory;
  std::vector<GoalPoint> goals;
};

struct GoalMetrics {
  int goal = -1;
  double s = 0.0;
  bool reached = false;
  double accuracy = 0.0;  // mm
  Vec3 final_position = Vec3::Zero();
};

struct RepeatMetrics {
  double s = 0.0;
  double repeatability = 0.0;  // mm
};

struct PhaseMetrics {
  std::string name;
  std::string method;
  std::string actuation;
  bool success = false;
  double average_speed = 0.0;   // mm/s
  double path_length = 0.0;     // mm along the tube
  double elapsed = 0.0;         // s
  std::optional<double> tracking_error;  // mm, mean distance of the capsule to the trajectory (withdrawal only)
  std::vector<GoalMetrics> goals;
  std::vector<RepeatMetrics> repeats;
};

struct Metrics {
  std::vector<PhaseMetrics> phases;
};

// ---- JSON conversion ----------------------------------------------------------

namespace detail {

inline nlohmann::json vec(const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

inline Vec3 vec(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw SchemaError("expected a list of 3 numbers");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

}  // namespace detail

inline nlohmann::json to_json(const StateSample& s) {
  using detail::vec;
  return {{"t", s.t},
          {"phase", s.phase},
          {"est_position", vec(s.est_position)},
          {"est_velocity", vec(s.est_velocity)},
          {"est_heading", vec(s.est_heading)},
          {"heading_valid", s.heading_valid},
          {"true_position", vec(s.true_position)},
          {"true_arc_length", s.true_arc_length},
          {"actuator_position", vec(s.actuator_position)},
          {"actuator_axis", vec(s.actuator_axis)},
          {"actuator_moment", vec(s.actuator_moment)},
          {"force", vec(s.force)}};
}

inline StateSample state_from_json(const nlohmann::json& j) {
  using detail::vec;
  StateSample s;
  s.t = j.at("t").get<double>();
  s.phase = j.at("phase").get<std::string>();
  s.est_position = vec(j.at("est_position"));
  s.est_velocity = vec(j.at("est_velocity"));
  s.est_heading = vec(j.at("est_heading"));
  s.heading_valid = j.at("heading_valid").get<bool>();
  s.true_position = vec(j.at("true_position"));
  s.true_arc_length = j.at("true_arc_length").get<double>();
  s.actuator_position = vec(j.at("actuator_position"));
  s.actuator_axis = vec(j.at("actuator_axis"));
  s.actuator_moment = vec(j.at("actuator_moment"));
  s.force = vec(j.at("force"));
  return s;
}

inline nlohmann::json to_json(const Event& e) {
  using detail::vec;
  return {{"t", e.t},
          {"type", e.type},
          {"detail", e.detail},
          {"goal", e.goal},
          {"true_position", vec(e.true_position)},
          {"est_position", vec(e.est_position)}};
}

inline Event event_from_json(const nlohmann::json& j) {
  using detail::vec;
  Event e;
  e.t = j.at("t").get<double>();
  e.type = j.at("type").get<std::string>();
  e.detail = j.at("detail").get<std::string>();
  e.goal = j.at("goal").get<int>();
  e.true_position = vec(j.at("true_position"));
  e.est_position = vec(j.at("est_position"));
  return e;
}

inline nlohmann::json to_json(const Phase& p) {
  return {{"name", p.name},   {"method", p.method}, {"actuation", p.actuation}, {"start", p.start},
          {"end", p.end},     {"goals", p.goals},   {"completed", p.completed}, {"success", p.success}};
}

inline Phase phase_from_json(const nlohmann::json& j) {
  Phase p;
  p.name = j.at("name").get<std::string>();
  p.method = j.at("method").get<std::string>();
  p.actuation = j.at("actuation").get<std::string>();
  p.start = j.at("start").get<double>();
  p.end = j.at("end").get<double>();
  p.goals = j.at("goals").get<std::vector<int>>();
  p.completed = j.at("completed").get<bool>();
  p.success = j.at("success").get<bool>();
  return p;
}

inline nlohmann::json to_json(const GoalPoint& g) {
  return {{"s", g.s}, {"position", detail::vec(g.position)}, {"label", g.label}};
}

inline nlohmann::json to_json(const Metrics& m) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& p : m.phases) {
    nlohmann::json goals = nlohmann::json::array();
    for (const auto& g : p.goals)
      goals.push_back({{"goal", g.goal},
                       {"s", g.s},
                       {"reached", g.reached},
                       {"accuracy_mm", g.accuracy},
                       {"final_position", detail::vec(g.final_position)}});
    nlohmann::json repeats = nlohmann::json::array();
    for (const auto& r : p.repeats) repeats.push_back({{"s", r.s}, {"repeatability_mm", r.repeatability}});
    out.push_back({{"name", p.name},
                   {"method", p.method},
                   {"actuation", p.actuation},
                   {"success", p.success},
                   {"average_speed_mm_s", p.average_speed},
                   {"path_length_mm", p.path_length},
                   {"elapsed_s", p.elapsed},
                   {"tracking_error_mm", p.tracking_error ? nlohmann::json(*p.tracking_error) : nlohmann::json(nullptr)},
                   {"goals", goals},
                   {"repeatability", repeats}});
  }
  return out;
}

// ---- metrics ------------------------------------------------------------------

// Metrics of one completed phase from the logs alone. Accuracy and
// repeatability use the ground-truth position recorded with each arrival or
// goal failure; speed is tube arc length travelled over elapsed time.
inline PhaseMetrics phase_metrics(const NavigationSession& s, const Phase& ph) {
  PhaseMetrics m;
  m.name = ph.name;
  m.method = ph.method;
  m.actuation = ph.actuation;
  m.success = ph.success;
  m.elapsed = ph.end - ph.start;

  double path = 0.0, track = 0.0;
  int track_n = 0;
  std::optional<double> last;
  for (const auto& st : s.states) {
    if (st.t < ph.start || st.t > ph.end) continue;
    if (last) path += std::abs(st.true_arc_length - *last);
    last = st.true_arc_length;
    if (ph.name == "withdrawal" && !s.trajectory.empty()) {
      track += (s.trajectory.point(s.trajectory.nearest_parameter(st.true_position)) - st.true_position).norm();
      ++track_n;
    }
  }
  m.path_length = 1e3 * path;
  m.average_speed = m.elapsed > 0.0 ? m.path_length / m.elapsed : 0.0;
  if (track_n > 0) m.tracking_error = 1e3 * track / track_n;

  // goal outcomes in visiting order; each visit consumes the next matching event
  std::size_t cursor = 0;
  std::vector<const Event*> visits;
  for (const auto& e : s.events)
    if ((e.type == "arrival" || e.type == "goal-failed") && e.t >= ph.start && e.t <= ph.end) visits.push_back(&e);
  for (int gi : ph.goals) {
    if (gi < 0 || gi >= static_cast<int>(s.goals.size())) throw MissingData("phase references an unknown goal");
    while (cursor < visits.size() && visits[cursor]->goal != gi) ++cursor;
    if (cursor >= visits.size()) throw MissingData("goal " + std::to_string(gi) + " was never visited");
    const Event& e = *visits[cursor++];
    GoalMetrics g;
    g.goal = gi;
    g.s = s.goals[gi].s;
    g.reached = e.type == "arrival";
    g.final_position = e.true_position;
    g.accuracy = 1e3 * (e.true_position - s.goals[gi].position).norm();
    m.goals.push_back(g);
  }
  // repeatability: first and second visit of the same goal parameter
  std::map<double, const GoalMetrics*> first;
  for (const auto& g : m.goals) {
    auto it = first.find(g.s);
    if (it == first.end()) {
      first.emplace(g.s, &g);
    } else if (it->second) {
      m.repeats.push_back({g.s, 1e3 * (g.final_position - it->second->final_position).norm()});
      it->second = nullptr;
    }
  }
  return m;
}

inline Metrics compute_metrics(const NavigationSession& s) {
  Metrics m;
  for (const auto& ph : s.phases)
    if (ph.completed) m.phases.push_back(phase_metrics(s, ph));
  if (m.phases.empty()) throw MissingData("session has no completed phase");
  return m;
}

// ---- persistence --------------------------------------------------------------

inline nlohmann::json session_to_json(const NavigationSession& s) {
  nlohmann::json j;
  j["schema"] = kSessionSchema;
  j["environment"] = s.environment;
  j["seed"] = s.seed;
  j["config"] = s.config;
  j["states"] = nlohmann::json::array();
  for (const auto& st : s.states) j["states"].push_back(to_json(st));
  j["events"] = nlohmann::json::array();
  for (const auto& e : s.events) j["events"].push_back(to_json(e));
  j["phases"] = nlohmann::json::array();
  for (const auto& p : s.phases) j["phases"].push_back(to_json(p));
  j["trajectory"] = s.trajectory.empty() ? nlohmann::json(nullptr) : s.trajectory.to_json();
  j["goals"] = nlohmann::json::array();
  for (const auto& g : s.goals) j["goals"].push_back(to_json(g));
  bool any_completed = false;
  for (const auto& p : s.phases) any_completed = any_completed || p.completed;
  j["metrics"] = any_completed ? to_json(compute_metrics(s)) : nlohmann::json::array();
  return j;
}

inline std::string session_to_string(const NavigationSession& s) { return session_to_json(s).dump(1) + "\n"; }

inline NavigationSession session_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("schema")) throw SchemaError("not a session file: missing 'schema'");
  const auto schema = j.at("schema").is_string() ? j.at("schema").get<std::string>() : std::string("?");
  if (schema != kSessionSchema)
    throw SchemaError("session schema mismatch: expected '" + std::string(kSessionSchema) + "', found '" + schema + "'");
  try {
    NavigationSession s;
    s.environment = j.at("environment").get<std::string>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.config = j.at("config").get<std::string>();
    for (const auto& e : j.at("states")) s.states.push_back(state_from_json(e));
    for (const auto& e : j.at("events")) s.events.push_back(event_from_json(e));
    for (const auto& e : j.at("phases")) s.phases.push_back(phase_from_json(e));
    if (!j.at("trajectory").is_null()) s.trajectory = Trajectory::from_json(j.at("trajectory"));
    for (const auto& g : j.at("goals")) {
      GoalPoint gp;
      gp.s = g.at("s").get<double>();
      gp.position = detail::vec(g.at("position"));
      gp.label = g.at("label").get<std::string>();
      s.goals.push_back(gp);
    }
    for (std::size_t i = 1; i < s.states.size(); ++i)
      if (s.states[i].t < s.states[i - 1].t) throw SchemaError("state log is not time-ordered");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed session: ") + e.what());
  }
}

inline NavigationSession session_from_string(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(std::string("session file is not valid JSON (truncated?): ") + e.what());
  }
  return session_from_json(j);
}

inline void save_session(const NavigationSession& s, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write '" + path + "'");
  os << session_to_string(s);
}

inline NavigationSession load_session(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw SchemaError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return session_from_string(ss.str());
}

}  // namespace capnav
