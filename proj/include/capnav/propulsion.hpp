#pragma once

#include "capnav/environment.hpp"

#include <cmath>

namespace capnav {

struct Workspace {
  Vec3 min = Vec3(-0.3, -0.3, 0.12);
  Vec3 max = Vec3(0.9, 0.8, 0.6);

  bool contains(const Vec3& p) const { return (p.array() >= min.array()).all() && (p.array() <= max.array()).all(); }
};

struct APConfig {
  double v_min = 1e-3;
  double hysteresis = 0.2;  // fraction of v_min
  double min_dwell = 0.5;   // s between regime switches
  double sweep_amplitude = 25.0 * kPi / 180.0;
  double sweep_period = 4.0;
  Vec3 hover_offset = Vec3(0.0125, 0.0, 0.10);  // forward, left, up
  ActuationMode mode;
  double heading_rate = 1.5;  // rad/s slew limit of the commanded axis
  double max_velocity_deviation = kPi / 3.0;  // velocity farther than this from forward is treated as noise
  Workspace workspace;
  double actuator_radius = 0.025;
  double depth_margin = 0.02;

  void validate() const {
    if (!(v_min > 0.0)) throw DegenerateInput("v_min must be positive");
    if (!(hysteresis >= 0.0 && hysteresis < 1.0)) throw DegenerateInput("hysteresis must lie in [0, 1)");
    if (!(sweep_period > 0.0)) throw DegenerateInput("sweep period must be positive");
    if (!(hover_offset.z() > actuator_radius + depth_margin))
      throw DegenerateInput("hover offset must clear the actuator radius plus depth margin");
    if (!(heading_rate > 0.0)) throw DegenerateInput("heading rate must be positive");
    mode.validate();
  }
};

struct APStatus {
  double speed = 0.0;
  bool searching = false;
  double progress = 0.0;
};

inline double compute_speed(const CapsuleState& state) { return state.velocity.norm(); }

// Rotates `from` toward `to` by at most max_angle about their common normal.
// `hint` picks the rotation plane when the two are antiparallel.
inline Vec3 rotate_toward(const Vec3& from, const Vec3& to, double max_angle, const Vec3& hint = Vec3::Zero()) {
  const double ang = angle_between(from, to);
  if (ang <= max_angle) return to.normalized();
  Vec3 axis = from.cross(to);
  if (axis.norm() < 1e-12 * std::max(1.0, from.norm() * to.norm())) {
    Vec3 inplane = reject(hint, from);
    if (inplane.norm() > 1e-9) {
      axis = from.cross(inplane);
    } else {
      axis = from.cross(Vec3::UnitZ());
      if (axis.norm() < 1e-9) axis = from.cross(Vec3::UnitX());
    }
  }
  return rotate(from, axis.normalized(), max_angle).normalized();
}

// Vertical-plane direction perpendicular to `forward`, pointing up.
inline Vec3 pitch_normal(const Vec3& forward) {
  const Vec3 n = reject(Vec3::UnitZ(), forward);
  if (n.norm() < 1e-9) return any_perpendicular(forward);
  return n.normalized();
}

inline Vec3 adapt_heading(const APStatus& status, const Vec3& forward, const Vec3& capsule_heading,
                          const APConfig& cfg, double clock) {
  Vec3 base = forward.norm() > 1e-12 ? forward.normalized() : capsule_heading.normalized();
  if (!status.searching) return base;
  const double pitch = -cfg.sweep_amplitude * std::sin(2.0 * kPi * clock / cfg.sweep_period);
  return (std::cos(pitch) * base + std::sin(pitch) * pitch_normal(base)).normalized();
}

// Offset frame: forward = horizontal projection of the axis, left, up.
inline Vec3 offset_in_heading_frame(const Vec3& offset, const Vec3& axis) {
  const Vec3 f = horizontal_direction(axis);
  const Vec3 l = Vec3::UnitZ().cross(f);
  return offset.x() * f + offset.y() * l + offset.z() * Vec3::UnitZ();
}

inline Vec3 desired_actuator_position(const Vec3& p_c, const Vec3& axis, const APConfig& cfg) {
  if (!finite(p_c) || !finite(axis)) throw DegenerateInput("actuator placement needs finite inputs");
  const Vec3 p = p_c + offset_in_heading_frame(cfg.hover_offset, axis);
  if (!cfg.workspace.contains(p)) throw WorkspaceLimit("actuator position outside the reachable box");
  return p;
}

// Rotation-plane basis: e1 is the vertical projected off the axis.
inline std::pair<Vec3, Vec3> rotation_basis(const Vec3& axis) {
  const Vec3 w = axis.normalized();
  Vec3 e1 = reject(Vec3::UnitZ(), w);
  e1 = e1.norm() > 1e-9 ? e1.normalized() : any_perpendicular(w);
  return {e1, w.cross(e1)};
}

inline double rrma_angle(double amplitude, double speed, double clock) {
  const double cycle = 4.0 * amplitude;
  double u = std::fmod(speed * clock, cycle);
  if (u < 0.0) u += cycle;
  if (u < amplitude) return u;
  if (u < 3.0 * amplitude) return 2.0 * amplitude - u;
  return u - cycle;
}

inline double schedule_angle(const ActuationMode& mode, double clock) {
  switch (mode.kind) {
    case ActuationKind::DMA: return 0.0;
    case ActuationKind::CRMA: return mode.rotation_speed * clock;
    case ActuationKind::RRMA: return rrma_angle(mode.rrma_amplitude, mode.rotation_speed, clock);
  }
  return 0.0;
}

inline Vec3 moment_at_angle(const Vec3& axis, double angle) {
  const auto [e1, e2] = rotation_basis(axis);
  return std::cos(angle) * e1 + std::sin(angle) * e2;
}

inline Vec3 schedule_moment(const ActuationMode& mode, const Vec3& axis, double clock) {
  mode.validate();
  return moment_at_angle(axis, schedule_angle(mode, clock));
}

// Automatic propulsion loop: speed monitoring, regime latch, heading slew and
// actuator placement.
class APController {
 public:
  APController(APConfig cfg, const Vec3& initial_forward) : cfg_(std::move(cfg)) {
    cfg_.validate();
    forward_ = unit(initial_forward);
    heading_ = forward_;
  }

  const APConfig& config() const { return cfg_; }
  const APStatus& status() const { return status_; }
  const Vec3& forward() const { return forward_; }
  const Vec3& heading() const { return heading_; }
  bool searching() const { return status_.searching; }

  void set_mode(const ActuationMode& m) {
    m.validate();
    cfg_.mode = m;
  }

  void set_forward(const Vec3& f) { forward_ = unit(f); }

  void reverse() {
    forward_ = -forward_;
    last_position_.reset();
  }

  ActuatorPose step(const CapsuleState& est, double clock) {
    const double speed = compute_speed(est);
    const double lo = cfg_.v_min * (1.0 - cfg_.hysteresis);
    const double hi = cfg_.v_min * (1.0 + cfg_.hysteresis);
    if (!started_) {
      started_ = true;
      last_switch_ = clock;
      last_clock_ = clock;
    }
    const double dt = std::max(0.0, clock - last_clock_);
    // velocity refines the forward direction but never flips it
    const double turn = cfg_.heading_rate * dt;
    if (speed >= cfg_.v_min && angle_between(est.velocity, forward_) < cfg_.max_velocity_deviation) {
      forward_ = rotate_toward(forward_, est.velocity.normalized(), turn);
    } else if (est.heading_valid) {
      const Vec3 h = est.heading.dot(forward_) >= 0.0 ? est.heading : Vec3(-est.heading);
      forward_ = rotate_toward(forward_, h, turn);
    }
    if (!status_.searching && speed < lo && clock - last_switch_ >= cfg_.min_dwell) {
      status_.searching = true;
      last_switch_ = clock;
      search_start_ = clock;
    } else if (status_.searching && speed > hi && clock - last_switch_ >= cfg_.min_dwell) {
      status_.searching = false;
      last_switch_ = clock;
    }
    status_.speed = speed;
    if (last_position_) status_.progress += (est.position - *last_position_).dot(forward_);
    last_position_ = est.position;

    const Vec3 target = adapt_heading(status_, forward_, est.heading, cfg_, clock - search_start_);
    heading_ = rotate_toward(heading_, target, cfg_.heading_rate * dt, est.velocity);
    last_clock_ = clock;

    ActuatorPose pose;
    pose.axis = heading_;
    pose.position = desired_actuator_position(est.position, heading_, cfg_);
    pose.moment = schedule_moment(cfg_.mode, heading_, clock);
    return pose;
  }

 private:
  APConfig cfg_;
  APStatus status_;
  Vec3 forward_;
  Vec3 heading_;
  bool started_ = false;
  double last_switch_ = 0.0;
  double search_start_ = 0.0;
  double last_clock_ = 0.0;
  std::optional<Vec3> last_position_;
};

}  // namespace capnav
