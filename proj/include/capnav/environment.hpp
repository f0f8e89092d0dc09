#pragma once

#include "capnav/localization.hpp"
#include "capnav/magnetics.hpp"
#include "capnav/spline.hpp"
#include "capnav/yaml_io.hpp"

#include <cctype>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace capnav {

enum class ActuationKind { DMA, CRMA, RRMA };

inline std::string to_string(ActuationKind k) {
  switch (k) {
    case ActuationKind::DMA: return "DMA";
    case ActuationKind::CRMA: return "CRMA";
    case ActuationKind::RRMA: return "RRMA";
  }
  return "?";
}

inline ActuationKind parse_actuation(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (s == "DMA") return ActuationKind::DMA;
  if (s == "CRMA") return ActuationKind::CRMA;
  if (s == "RRMA") return ActuationKind::RRMA;
  throw InvalidCommand("unknown actuation mode '" + s + "'");
}

struct ActuationMode {
  ActuationKind kind = ActuationKind::RRMA;
  double rotation_speed = 2.0 * kPi;  // rad/s
  double rrma_amplitude = kPi;        // rad

  bool rotating() const { return kind != ActuationKind::DMA; }

  void validate() const {
    if (rotating() && !(rotation_speed > 0.0)) throw DegenerateInput("rotation speed must be positive");
    if (kind == ActuationKind::RRMA && !(rrma_amplitude > 0.0)) throw DegenerateInput("RRMA amplitude must be positive");
  }
};

struct ActuatorPose {
  Vec3 position = Vec3(0.0, 0.0, 0.3);
  Vec3 moment = Vec3::UnitZ();
  Vec3 axis = Vec3::UnitX();
};

// Moment magnitudes of the two magnets, A·m².
struct MagnetPair {
  double actuator = 68.7;
  double capsule = 0.963;
};

struct Friction {
  double mu_static = 0.32;
  double mu_kinetic = 0.3;
  double rotation_relief = 0.25;
};

struct Malrotation {
  double rate = 0.0;  // 1/s under continuous rotation
  double resistance_multiplier = 1.0;
};

class TubeEnvironment {
 public:
  std::string id = "custom";
  double radius = 0.010;
  double capsule_radius = 0.0075;
  double capsule_mass = 0.008;
  double drag = 4.0;  // N·s/m
  Friction friction;
  Malrotation malrotation;

  TubeEnvironment() = default;

  void set_centerline(std::vector<Vec3> points) {
    if (points.size() < 2) throw DegenerateInput("centerline needs at least two points");
    spline_ = std::make_shared<const ArcSpline>(std::move(points));
  }

  const std::vector<Vec3>& centerline() const { return spline().knots(); }
  const ArcSpline& spline() const {
    if (!spline_) throw DegenerateInput("environment has no centerline");
    return *spline_;
  }

  double length() const { return spline().length(); }

  Vec3 point(double s) const { return spline().point_at(check(s)); }
  Vec3 tangent(double s) const { return spline().tangent_at(check(s)); }

  // Horizontal direction across the tube used for the roll-induced offset.
  Vec3 lateral(double s) const {
    const Vec3 t = tangent(s);
    Vec3 l = Vec3::UnitZ().cross(t);
    if (l.norm() < 1e-9) return any_perpendicular(t);
    return l.normalized();
  }

  double nearest_arclength(const Vec3& p) const { return spline().nearest(p, 0.0, length()); }

  double distance_to_centerline(const Vec3& p) const { return (spline().point_at(nearest_arclength(p)) - p).norm(); }

  void validate() const {
    if (!(capsule_radius > 0.0)) throw DegenerateInput("capsule radius must be positive");
    if (!(radius > capsule_radius)) throw DegenerateInput("tube radius must exceed capsule radius");
    if (!(capsule_mass > 0.0)) throw DegenerateInput("capsule mass must be positive");
    if (!(drag >= 0.0)) throw DegenerateInput("drag must be non-negative");
    if (!(friction.mu_kinetic >= 0.0) || !(friction.mu_static >= friction.mu_kinetic))
      throw DegenerateInput("friction needs 0 <= mu_kinetic <= mu_static");
    if (!(friction.rotation_relief > 0.0 && friction.rotation_relief <= 1.0))
      throw DegenerateInput("rotation_relief must lie in (0, 1]");
    if (!(malrotation.rate >= 0.0)) throw DegenerateInput("malrotation rate must be non-negative");
    if (!(malrotation.resistance_multiplier >= 1.0))
      throw DegenerateInput("malrotation resistance multiplier must be >= 1");
    spline();
  }

 private:
  double check(double s) const {
    const double L = length();
    if (!(s >= -1e-12 && s <= L + 1e-12)) throw OutOfRange("arc length outside the tube");
    return std::clamp(s, 0.0, L);
  }

  std::shared_ptr<const ArcSpline> spline_;
};

inline Vec3 tube_tangent(const TubeEnvironment& env, double arc_length) { return env.tangent(arc_length); }

// ---- presets ----------------------------------------------------------------

namespace detail {

struct Turtle {
  Vec3 p;
  double heading;  // rad, in the horizontal plane
  double step = 0.01;
  std::vector<Vec3> pts;

  Turtle(Vec3 start, double heading_deg) : p(start), heading(heading_deg * kPi / 180.0) { pts.push_back(p); }

  void line(double len) {
    const int n = std::max(1, static_cast<int>(std::ceil(len / step)));
    const Vec3 d(std::cos(heading), std::sin(heading), 0.0);
    const Vec3 start = p;
    for (int k = 1; k <= n; ++k) pts.push_back(start + d * (len * k / n));
    p = pts.back();
  }

  // Positive angle turns left.
  void arc(double r, double angle_deg) {
    const double ang = angle_deg * kPi / 180.0;
    const double side = ang > 0 ? 1.0 : -1.0;
    const Vec3 c = p + side * r * Vec3(-std::sin(heading), std::cos(heading), 0.0);
    const double len = r * std::abs(ang);
    const int n = std::max(2, static_cast<int>(std::ceil(len / step)));
    const double h0 = heading;
    for (int k = 1; k <= n; ++k) {
      const double h = h0 + ang * k / n;
      pts.push_back(c + side * r * Vec3(std::sin(h), -std::cos(h), 0.0));
    }
    heading = h0 + ang;
    p = pts.back();
  }
};

inline std::vector<Vec3> scale_to_length(std::vector<Vec3> pts, double target) {
  const double L0 = ArcSpline(pts).length();
  const Vec3 o = pts.front();
  for (auto& q : pts) q = o + (q - o) * (target / L0);
  return pts;
}

}  // namespace detail

inline std::vector<std::string> preset_names() {
  return {"pvc-straight", "colon-ap", "colon", "tube1", "tube2", "tube3", "tube4", "bend45"};
}

inline TubeEnvironment make_preset(const std::string& name) {
  TubeEnvironment env;
  env.id = name;
  const double z = 0.10;
  auto pvc = [&] {
    env.radius = 0.010;
    env.friction = {0.32, 0.3, 0.25};
    env.malrotation = {0.05, 2.0};
    env.drag = 4.0;
  };
  auto colon = [&] {
    env.radius = 0.0125;
    env.friction = {0.85, 0.8, 0.35};
    env.malrotation = {0.012, 4.0};
    env.drag = 2.0;
  };
  auto tube = [&] {
    env.radius = 0.010;
    env.friction = {0.65, 0.6, 0.35};
    env.malrotation = {0.0, 1.0};
    env.drag = 6.0;
  };
  if (name == "pvc-straight") {
    pvc();
    env.set_centerline({Vec3(0.18, 0.21, z), Vec3(0.36, 0.21, z)});
  } else if (name == "colon-ap") {
    colon();
    detail::Turtle t(Vec3(0.19, 0.15, z), 0.0);
    t.line(0.05);
    t.arc(0.15, 20.0);
    t.line(0.053);
    env.set_centerline(detail::scale_to_length(t.pts, 0.155));
  } else if (name == "colon") {
    colon();
    detail::Turtle t(Vec3(0.15, 0.18, z), 0.0);
    t.line(0.05);
    t.arc(0.12, 25.0);
    t.arc(0.12, -25.0);
    t.line(0.045);
    env.set_centerline(detail::scale_to_length(t.pts, 0.200));
  } else if (name == "tube1") {
    tube();
    detail::Turtle t(Vec3(0.12, 0.12, z), 0.0);
    t.line(0.08);
    t.arc(0.08, 60.0);
    t.line(0.06);
    env.set_centerline(detail::scale_to_length(t.pts, 0.224));
  } else if (name == "tube2") {
    tube();
    detail::Turtle t(Vec3(0.08, 0.10, z), 0.0);
    t.line(0.09);
    t.arc(0.07, 90.0);
    t.arc(0.07, -90.0);
    t.line(0.068);
    env.set_centerline(detail::scale_to_length(t.pts, 0.378));
  } else if (name == "tube3") {
    tube();
    detail::Turtle t(Vec3(0.08, 0.08, z), 0.0);
    t.line(0.25);
    t.arc(0.08, 180.0);
    t.line(0.063);
    env.set_centerline(detail::scale_to_length(t.pts, 0.564));
  } else if (name == "tube4") {
    tube();
    detail::Turtle t(Vec3(0.08, 0.06, z), 0.0);
    t.line(0.16);
    t.arc(0.06, 180.0);
    t.line(0.08);
    t.arc(0.06, -180.0);
    t.line(0.061);
    env.set_centerline(detail::scale_to_length(t.pts, 0.678));
  } else if (name == "bend45") {
    env.radius = 0.010;
    env.friction = {0.735, 0.7, 0.35};
    env.drag = 4.0;
    detail::Turtle t(Vec3(0.12, 0.15, z), 0.0);
    t.line(0.10);
    t.arc(0.05, 45.0);
    t.line(0.08);
    env.set_centerline(t.pts);
  } else {
    throw ParseError("unknown environment preset '" + name + "'", 0);
  }
  env.validate();
  return env;
}

// ---- description file -------------------------------------------------------

inline TubeEnvironment environment_from_yaml(const YAML::Node& root) {
  using namespace capnav::yaml;
  if (!root || !root.IsMap()) throw ParseError("environment description must be a mapping", root ? line_of(root) : 0);
  check_keys(root, {"id", "preset", "radius", "capsule_radius", "capsule_mass", "drag", "friction", "malrotation",
                    "centerline"},
             "environment");
  TubeEnvironment env;
  if (root["preset"]) env = make_preset(as<std::string>(root["preset"], "preset"));
  env.id = get_string(root, "id", env.id);
  env.radius = get_double(root, "radius", env.radius);
  env.capsule_radius = get_double(root, "capsule_radius", env.capsule_radius);
  env.capsule_mass = get_double(root, "capsule_mass", env.capsule_mass);
  env.drag = get_double(root, "drag", env.drag);
  if (const auto f = root["friction"]) {
    check_keys(f, {"mu_static", "mu_kinetic", "rotation_relief"}, "friction");
    env.friction.mu_static = get_double(f, "mu_static", env.friction.mu_static);
    env.friction.mu_kinetic = get_double(f, "mu_kinetic", env.friction.mu_kinetic);
    env.friction.rotation_relief = get_double(f, "rotation_relief", env.friction.rotation_relief);
  }
  if (const auto m = root["malrotation"]) {
    check_keys(m, {"rate", "resistance_multiplier"}, "malrotation");
    env.malrotation.rate = get_double(m, "rate", env.malrotation.rate);
    env.malrotation.resistance_multiplier = get_double(m, "resistance_multiplier", env.malrotation.resistance_multiplier);
  }
  if (const auto c = root["centerline"]) {
    if (!c.IsSequence()) throw ParseError("'centerline' must be a list of points", line_of(c));
    std::vector<Vec3> pts;
    for (const auto& p : c) pts.push_back(to_vec3(p, "centerline"));
    try {
      env.set_centerline(std::move(pts));
    } catch (const DegenerateInput& e) {
      throw ParseError(e.what(), line_of(c));
    }
  } else if (!root["preset"]) {
    throw ParseError("environment needs 'centerline' or 'preset'", line_of(root));
  }
  try {
    env.validate();
  } catch (const DegenerateInput& e) {
    throw ParseError(e.what(), line_of(root));
  }
  return env;
}

inline TubeEnvironment load_environment_text(const std::string& text) { return environment_from_yaml(yaml::load_text(text)); }

// Accepts a preset name or a path to a description file.
inline TubeEnvironment load_environment(const std::string& name_or_path) {
  for (const auto& n : preset_names())
    if (n == name_or_path) return make_preset(n);
  return environment_from_yaml(yaml::load_file(name_or_path));
}

inline void emit_environment(YAML::Emitter& out, const TubeEnvironment& env) {
  using capnav::yaml::emit;
  out << YAML::BeginMap;
  out << YAML::Key << "id" << YAML::Value << env.id;
  out << YAML::Key << "radius" << YAML::Value;
  emit(out, env.radius);
  out << YAML::Key << "capsule_radius" << YAML::Value;
  emit(out, env.capsule_radius);
  out << YAML::Key << "capsule_mass" << YAML::Value;
  emit(out, env.capsule_mass);
  out << YAML::Key << "drag" << YAML::Value;
  emit(out, env.drag);
  out << YAML::Key << "friction" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "mu_static" << YAML::Value;
  emit(out, env.friction.mu_static);
  out << YAML::Key << "mu_kinetic" << YAML::Value;
  emit(out, env.friction.mu_kinetic);
  out << YAML::Key << "rotation_relief" << YAML::Value;
  emit(out, env.friction.rotation_relief);
  out << YAML::EndMap;
  out << YAML::Key << "malrotation" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "rate" << YAML::Value;
  emit(out, env.malrotation.rate);
  out << YAML::Key << "resistance_multiplier" << YAML::Value;
  emit(out, env.malrotation.resistance_multiplier);
  out << YAML::EndMap;
  out << YAML::Key << "centerline" << YAML::Value << YAML::BeginSeq;
  for (const auto& p : env.centerline()) emit(out, p);
  out << YAML::EndSeq;
  out << YAML::EndMap;
}

inline std::string environment_to_yaml(const TubeEnvironment& env) {
  YAML::Emitter out;
  emit_environment(out, env);
  return std::string(out.c_str()) + "\n";
}

// ---- dynamics ---------------------------------------------------------------

struct SimState {
  CapsuleState capsule;  // ground truth
  ActuatorPose actuator;
  double arc_length = 0.0;
  double speed = 0.0;  // signed, along the centerline
  double roll_offset = 0.0;  // rad, drives the lateral offset inside the tube
  bool malrotated = false;
  ActuationKind latch_mode = ActuationKind::RRMA;
  double clock = 0.0;
};

struct DynamicsOptions {
  double stick_speed = 1e-4;
  double roll_time_constant = 0.5;
  double spin_threshold = 0.5;  // rad/s of capsule roll that counts as spinning
};

struct Advance1D {
  double speed = 0.0;
  double distance = 0.0;
};

// Exact integration of m dv/dt = F - sign(v) mu_k N - b v over one step with the
// force held constant, plus the stick/slip test.
inline Advance1D advance_1d(double v, double force, double normal, double mu_s, double mu_k, double mass, double drag,
                            double dt, double stick_speed = 1e-4) {
  double dir;
  if (std::abs(v) < stick_speed) {
    if (std::abs(force) <= mu_s * normal) return {0.0, 0.0};
    dir = force > 0 ? 1.0 : -1.0;
    v = 0.0;
  } else {
    dir = v > 0 ? 1.0 : -1.0;
  }
  const double net = force - dir * mu_k * normal;
  Advance1D out;
  if (drag <= 0.0) {
    const double a = net / mass;
    out.speed = v + a * dt;
    out.distance = v * dt + 0.5 * a * dt * dt;
    if (dir * out.speed < 0.0) {
      const double t0 = -v / a;
      out.distance = v * t0 + 0.5 * a * t0 * t0;
      out.speed = 0.0;
    }
    return out;
  }
  const double tau = mass / drag;
  const double vinf = net / drag;
  const double decay = std::exp(-dt / tau);
  out.speed = vinf + (v - vinf) * decay;
  out.distance = vinf * dt + (v - vinf) * tau * (1.0 - decay);
  if (dir * out.speed < 0.0) {
    // friction cannot reverse the motion: stop where the speed crosses zero
    const double ratio = -vinf / (v - vinf);
    const double t0 = -tau * std::log(ratio);
    out.distance = vinf * t0 + (v - vinf) * tau * (1.0 - ratio);
    out.speed = 0.0;
  }
  return out;
}

inline Vec3 capsule_position(const TubeEnvironment& env, double s, double roll) {
  return env.point(s) + (env.radius - env.capsule_radius) * std::sin(roll) * env.lateral(s);
}

inline SimState initial_sim_state(const TubeEnvironment& env, double s0, const ActuatorPose& actuator) {
  SimState st;
  st.arc_length = std::clamp(s0, 0.0, env.length());
  st.actuator = actuator;
  st.capsule.position = capsule_position(env, st.arc_length, 0.0);
  st.capsule.heading = env.tangent(st.arc_length);
  st.capsule.heading_valid = true;
  st.capsule.moment = any_perpendicular(st.capsule.heading);
  st.capsule.velocity = Vec3::Zero();
  return st;
}

// Ground-truth capsule moment: the actuator field projected onto the plane the
// diametrically magnetized ring can rotate in.
inline Vec3 aligned_capsule_moment(const Vec3& field, const Vec3& axis, const Vec3& previous) {
  const Vec3 bp = reject(field, axis);
  if (bp.norm() < 1e-12) return previous;
  return bp.normalized();
}

inline SimState step_dynamics(const SimState& state, const std::optional<ActuatorPose>& actuator,
                              const ActuationMode& mode, double dt, const TubeEnvironment& env, const MagnetPair& mags,
                              Rng& rng, const DynamicsOptions& opts = {}) {
  if (!(dt > 0.0 && dt <= 0.05)) throw OutOfRange("dynamics step must lie in (0, 0.05] s");
  SimState s = state;
  if (mode.kind != s.latch_mode) {
    s.malrotated = false;
    s.latch_mode = mode.kind;
  }
  const Vec3 t = env.tangent(s.arc_length);
  const Vec3 pos = s.capsule.position;
  Vec3 force = Vec3(0.0, 0.0, -env.capsule_mass * kGravity);
  Vec3 moment = reject(s.capsule.moment, t);
  moment = moment.norm() > 1e-12 ? moment.normalized() : any_perpendicular(t);
  if (actuator) {
    s.actuator = *actuator;
    const Dipole a{actuator->position, mags.actuator * actuator->moment};
    moment = aligned_capsule_moment(dipole_field(a, pos), t, moment);
    force += dipole_force_torque(a, Dipole{pos, mags.capsule * moment}).force;
  }
  const Vec3 prev = reject(s.capsule.moment, t);
  const double spin = std::atan2(prev.cross(moment).dot(t), prev.dot(moment)) / dt;

  if (mode.kind == ActuationKind::CRMA && !s.malrotated && env.malrotation.rate > 0.0) {
    if (rng.bernoulli(1.0 - std::exp(-env.malrotation.rate * dt))) s.malrotated = true;
  }
  double scale = mode.rotating() ? env.friction.rotation_relief : 1.0;
  if (s.malrotated) scale *= env.malrotation.resistance_multiplier;
  const double ft = force.dot(t);
  const double normal = reject(force, t).norm();
  const Advance1D adv = advance_1d(s.speed, ft, normal, scale * env.friction.mu_static,
                                   scale * env.friction.mu_kinetic, env.capsule_mass, env.drag, dt, opts.stick_speed);
  double next = s.arc_length + adv.distance;
  s.speed = adv.speed;
  if (next <= 0.0 || next >= env.length()) {
    next = std::clamp(next, 0.0, env.length());
    s.speed = 0.0;
  }
  s.arc_length = next;

  const double target =
      std::abs(spin) > opts.spin_threshold ? (spin > 0 ? 1.0 : -1.0) * std::atan(env.friction.mu_kinetic) : 0.0;
  s.roll_offset += (target - s.roll_offset) * (1.0 - std::exp(-dt / opts.roll_time_constant));

  const Vec3 tn = env.tangent(s.arc_length);
  s.clock += dt;
  s.capsule.position = capsule_position(env, s.arc_length, s.roll_offset);
  const Vec3 mr = reject(moment, tn);
  s.capsule.moment = mr.norm() > 1e-12 ? mr.normalized() : moment;
  s.capsule.heading = tn;
  s.capsule.heading_valid = true;
  s.capsule.velocity = s.speed * tn;
  s.capsule.timestamp = s.clock;
  return s;
}

}  // namespace capnav
