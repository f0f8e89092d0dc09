#pragma once

#include "capnav/core.hpp"

#include <map>
#include <string>

namespace capnav {

inline constexpr double kMu0Over4Pi = 1e-7;
inline constexpr double kMu0 = 4.0 * kPi * 1e-7;
inline constexpr double kMinSeparation = 1e-6;

struct Dipole {
  Vec3 position = Vec3::Zero();
  Vec3 moment = Vec3::UnitZ();
};

struct Wrench {
  Vec3 force = Vec3::Zero();
  Vec3 torque = Vec3::Zero();
};

enum class MagnetKind { sphere, ring };

struct MagnetGeometry {
  MagnetKind kind = MagnetKind::sphere;
  double diameter = 0.0;  // sphere
  double outer = 0.0;     // ring
  double inner = 0.0;
  double length = 0.0;
  double remanence = 0.0;  // Tesla

  static MagnetGeometry sphere(double d, double br) {
    MagnetGeometry g;
    g.kind = MagnetKind::sphere;
    g.diameter = d;
    g.remanence = br;
    return g;
  }

  static MagnetGeometry ring(double od, double id, double len, double br) {
    MagnetGeometry g;
    g.kind = MagnetKind::ring;
    g.outer = od;
    g.inner = id;
    g.length = len;
    g.remanence = br;
    return g;
  }

  void validate() const {
    if (!(remanence > 0.0)) throw DegenerateInput("magnet remanence must be positive");
    if (kind == MagnetKind::sphere) {
      if (!(diameter > 0.0)) throw DegenerateInput("sphere diameter must be positive");
    } else {
      if (!(outer > 0.0) || !(inner > 0.0) || !(length > 0.0))
        throw DegenerateInput("ring dimensions must be positive");
      if (!(inner < outer)) throw DegenerateInput("ring inner diameter must be smaller than outer");
    }
  }

  double volume() const {
    if (kind == MagnetKind::sphere) return kPi * diameter * diameter * diameter / 6.0;
    return 0.25 * kPi * (outer * outer - inner * inner) * length;
  }

  // Outer radius, used for clearance checks.
  double radius() const { return kind == MagnetKind::sphere ? 0.5 * diameter : 0.5 * outer; }

  MagnetGeometry scaled(double k) const {
    MagnetGeometry g = *this;
    g.diameter *= k;
    g.outer *= k;
    g.inner *= k;
    g.length *= k;
    return g;
  }
};

// Mid-range published remanence values; overridable from the run configuration.
inline std::map<std::string, double> default_remanence_table() { return {{"N38SH", 1.24}, {"N42", 1.32}}; }

inline double remanence_for_grade(const std::string& grade, const std::map<std::string, double>& table) {
  auto it = table.find(grade);
  if (it == table.end()) throw DegenerateInput("unknown magnet grade '" + grade + "'");
  return it->second;
}

inline double magnet_moment(const MagnetGeometry& g) {
  g.validate();
  return g.remanence * g.volume() / kMu0;
}

inline Vec3 dipole_field(const Dipole& source, const Vec3& at) {
  const Vec3 r = at - source.position;
  const double d = r.norm();
  if (!(d > kMinSeparation)) throw SingularityError("field evaluated within 1e-6 m of a dipole");
  const Vec3 rh = r / d;
  return kMu0Over4Pi / (d * d * d) * (3.0 * source.moment.dot(rh) * rh - source.moment);
}

// Spatial Jacobian dB/d(at) of the dipole field.
inline Mat3 dipole_field_gradient(const Dipole& source, const Vec3& at) {
  const Vec3 r = at - source.position;
  const double d = r.norm();
  if (!(d > kMinSeparation)) throw SingularityError("field gradient evaluated within 1e-6 m of a dipole");
  const Vec3 rh = r / d;
  const Vec3& m = source.moment;
  const double mr = m.dot(rh);
  const double k = 3.0 * kMu0Over4Pi / (d * d * d * d);
  return k * (m * rh.transpose() + rh * m.transpose() + mr * Mat3::Identity() - 5.0 * mr * rh * rh.transpose());
}

// Force and torque on `capsule` due to `actuator`. Written so that swapping the
// arguments negates the force bit for bit.
inline Wrench dipole_force_torque(const Dipole& actuator, const Dipole& capsule) {
  const Vec3 r = capsule.position - actuator.position;
  const double d = r.norm();
  if (!(d > kMinSeparation)) throw SingularityError("dipoles closer than 1e-6 m");
  const Vec3 rh = r / d;
  const Vec3& ma = actuator.moment;
  const Vec3& mc = capsule.moment;
  const double ar = ma.dot(rh);
  const double cr = mc.dot(rh);
  const double ac = ma.dot(mc);
  const double k = 3.0 * kMu0Over4Pi / (d * d * d * d);
  Wrench w;
  w.force = k * ((ar * mc + cr * ma) + (ac - 5.0 * (ar * cr)) * rh);
  w.torque = mc.cross(dipole_field(actuator, capsule.position));
  return w;
}

inline double potential_energy(const Dipole& actuator, const Dipole& capsule) {
  return -capsule.moment.dot(dipole_field(actuator, capsule.position));
}

}  // namespace capnav
