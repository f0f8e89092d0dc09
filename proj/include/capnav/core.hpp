#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>

namespace capnav {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kGravity = 9.81;

// ---- errors ---------------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SingularityError : Error { using Error::Error; };
struct NoConvergence : Error { using Error::Error; };
struct DegenerateInput : Error { using Error::Error; };
struct InsufficientHistory : Error { using Error::Error; };
struct OutOfRange : Error { using Error::Error; };
struct WorkspaceLimit : Error { using Error::Error; };
struct UnreachableForce : Error { using Error::Error; };
struct OrderingAmbiguity : Error { using Error::Error; };
struct ZeroLength : Error { using Error::Error; };
struct NonFiniteCost : Error { using Error::Error; };
struct MissingData : Error { using Error::Error; };
struct InvalidCommand : Error { using Error::Error; };

struct SchemaError : Error {
  using Error::Error;
};

// Parse/validation failure with a 1-based line number (0 when unknown).
struct ParseError : Error {
  ParseError(const std::string& what, int line)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line(line) {}
  int line;
};

// ---- small vector helpers ---------------------------------------------------

inline bool finite(const Vec3& v) { return v.allFinite(); }

inline Vec3 unit(const Vec3& v) {
  const double n = v.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw DegenerateInput("cannot normalize a zero or non-finite vector");
  return v / n;
}

inline double angle_between(const Vec3& a, const Vec3& b) {
  // atan2 form stays accurate near 0 and pi
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

// Component of v orthogonal to unit axis n.
inline Vec3 reject(const Vec3& v, const Vec3& n) { return v - v.dot(n) * n; }

// Deterministic unit vector perpendicular to n.
inline Vec3 any_perpendicular(const Vec3& n) {
  const Vec3 trial = std::abs(n.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
  return unit(trial.cross(n));
}

inline Vec3 rotate(const Vec3& v, const Vec3& axis, double angle) {
  return Eigen::AngleAxisd(angle, unit(axis)) * v;
}

// Horizontal forward direction of a heading (x when the heading is vertical).
inline Vec3 horizontal_direction(const Vec3& heading) {
  Vec3 h(heading.x(), heading.y(), 0.0);
  if (h.norm() < 1e-9) return Vec3::UnitX();
  return h.normalized();
}

// ---- random numbers ---------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// xoshiro256** with hand-rolled distributions so sequences do not depend on the
// standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 1) : seed_(seed) {
    std::uint64_t x = seed;
    for (auto& w : s_) {
      x = splitmix64(x);
      w = x;
    }
  }

  std::uint64_t seed() const { return seed_; }

  // Independent stream derived from this generator's seed and a tag.
  Rng substream(std::uint64_t tag) const { return Rng(splitmix64(seed_ ^ splitmix64(tag + 0x632be59bd9b4e019ULL))); }

  std::uint64_t next() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * kPi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * kPi * u2);
  }

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

  Vec3 unit_vector() {
    Vec3 v(normal(), normal(), normal());
    while (v.norm() < 1e-12) v = Vec3(normal(), normal(), normal());
    return v.normalized();
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t seed_;
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace capnav
