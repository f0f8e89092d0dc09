#pragma once

#include "capnav/localization.hpp"

#include <chrono>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace capnav {

struct LocalizationBenchOptions {
  int poses = 200;
  double noise_sigma = 0.5e-6;  // T
  double height = 0.10;         // m above the array plane
  int subarray = 4;             // 0 fits on the full array
  double warm_offset = 0.005;   // m, displacement of the warm start
  double warm_angle = 5.0 * kPi / 180.0;
  std::uint64_t seed = 1;
};

struct LocalizationBenchResult {
  std::vector<double> position_errors;  // m, one per converged pose
  std::vector<double> moment_errors;    // rad
  int failures = 0;
  double position_rmse = 0.0;  // m
  double moment_rmse = 0.0;    // rad
  double max_position_error = 0.0;
  double seconds = 0.0;
};

inline Vec3 random_unit(Rng& rng) {
  Vec3 v;
  do {
    v = Vec3(rng.normal(), rng.normal(), rng.normal());
  } while (v.norm() < 1e-9);
  return v.normalized();
}

// Monte-Carlo poses uniform over the array footprint at a fixed height, random
// moment directions, warm start displaced by a fixed distance.
inline LocalizationBenchResult localization_benchmark(const ArrayConfig& array, const LocalizationBenchOptions& o,
                                                      const SolverOptions& solver_in = {}) {
  if (o.poses < 1) throw DegenerateInput("benchmark needs at least one pose");
  SolverOptions solver = solver_in;
  solver.noise_sigma = o.noise_sigma;
  Rng rng(o.seed);
  Rng noise = rng.substream(1);
  const auto t0 = std::chrono::steady_clock::now();
  LocalizationBenchResult r;
  const double w = (array.cols - 1) * array.spacing;
  const double h = (array.rows - 1) * array.spacing;
  for (int k = 0; k < o.poses; ++k) {
    const Vec3 p = array.origin + Vec3(rng.uniform(0.0, w), rng.uniform(0.0, h), o.height);
    const Vec3 m = random_unit(rng);
    const Vec3 dp = o.warm_offset * random_unit(rng);
    const Vec3 axis = reject(random_unit(rng), m);
    const Vec3 m_guess = axis.norm() > 1e-9 ? Vec3(Eigen::AngleAxisd(o.warm_angle, axis.normalized()) * m) : m;
    SensorFrame frame = simulate_frame({Dipole{p, solver.moment_magnitude * m}}, array, o.noise_sigma, Vec3::Zero(), noise,
                                       0.0);
    if (o.subarray > 0) frame = with_mask(frame, select_subarray(p, array, o.subarray));
    CapsuleState guess;
    guess.position = p + dp;
    guess.moment = m_guess;
    try {
      const FitResult fit = solve_5d(frame, guess, std::nullopt, array, solver);
      const double e = (fit.state.position - p).norm();
      r.position_errors.push_back(e);
      r.moment_errors.push_back(angle_between(fit.state.moment, m));
      r.max_position_error = std::max(r.max_position_error, e);
    } catch (const NoConvergence&) {
      ++r.failures;
    }
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  double sp = 0.0, sm = 0.0;
  for (double e : r.position_errors) sp += e * e;
  for (double e : r.moment_errors) sm += e * e;
  if (!r.position_errors.empty()) {
    r.position_rmse = std::sqrt(sp / static_cast<double>(r.position_errors.size()));
    r.moment_rmse = std::sqrt(sm / static_cast<double>(r.moment_errors.size()));
  }
  return r;
}

// ---- recorded frames ----------------------------------------------------------

// Ground-truth pose per frame: t,x,y,z,mx,my,mz (seconds, metres, unit moment).
struct TruthRecord {
  double t = 0.0;
  Vec3 position = Vec3::Zero();
  Vec3 moment = Vec3::UnitX();
};

inline void write_truth_records(std::ostream& os, const std::vector<TruthRecord>& truth) {
  for (const auto& r : truth) {
    os << format_double(r.t);
    for (const Vec3* v : {&r.position, &r.moment})
      for (int k = 0; k < 3; ++k) os << ',' << format_double((*v)[k]);
    os << '\n';
  }
}

inline std::vector<TruthRecord> read_truth_records(std::istream& is) {
  std::vector<TruthRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto v = split_numbers(line, lineno);
    if (v.size() != 7) throw ParseError("expected 7 fields t,x,y,z,mx,my,mz", lineno);
    out.push_back({v[0], Vec3(v[1], v[2], v[3]), Vec3(v[4], v[5], v[6]).normalized()});
  }
  return out;
}

struct RecordingOptions {
  int frames = 200;
  double duration = 20.0;       // s
  double noise_sigma = 0.5e-6;  // T
  double height = 0.10;         // m
  double spin_rate = 2.0 * kPi / 5.0;  // rad/s about the vertical
  std::uint64_t seed = 1;
};

struct Recording {
  std::vector<SensorFrame> frames;
  std::vector<TruthRecord> truth;
};

// A capsule sweeping diagonally across the array interior while its moment
// turns about the vertical, with every sensor recorded.
inline Recording synthetic_recording(const ArrayConfig& array, const RecordingOptions& o, double moment_magnitude) {
  if (o.frames < 1 || !(o.duration > 0.0)) throw DegenerateInput("recording needs frames and a positive duration");
  Rng rng(o.seed);
  Rng noise = rng.substream(1);
  const double w = (array.cols - 1) * array.spacing;
  const double h = (array.rows - 1) * array.spacing;
  const Vec3 a = array.origin + Vec3(0.2 * w, 0.2 * h, o.height);
  const Vec3 b = array.origin + Vec3(0.8 * w, 0.8 * h, o.height);
  Recording rec;
  for (int k = 0; k < o.frames; ++k) {
    const double t = o.frames == 1 ? 0.0 : o.duration * k / (o.frames - 1);
    const Vec3 p = a + (b - a) * (t / o.duration);
    const double phi = o.spin_rate * t;
    const Vec3 m = Vec3(std::cos(phi), std::sin(phi), 0.3).normalized();
    rec.frames.push_back(simulate_frame({Dipole{p, moment_magnitude * m}}, array, o.noise_sigma, Vec3::Zero(), noise, t));
    rec.truth.push_back({t, p, m});
  }
  return rec;
}

struct StepError {
  double t = 0.0;
  bool converged = false;
  double position_error = 0.0;  // m
  double moment_error = 0.0;    // rad
  double residual_rms = 0.0;    // T
  int active_sensors = 0;
};

// Tracks a recorded sequence: multi-start on the first frame (and after any
// failure), then warm-started fits on the sub-array around the last estimate.
inline std::vector<StepError> replay_localization(const std::vector<SensorFrame>& frames, const std::vector<TruthRecord>& truth,
                                                  const ArrayConfig& array, int subarray, const SolverOptions& solver) {
  if (frames.size() != truth.size()) throw DegenerateInput("frame and truth counts differ");
  std::vector<StepError> out;
  std::optional<CapsuleState> last;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    if (std::abs(frames[k].timestamp - truth[k].t) > 1e-9) throw DegenerateInput("frame and truth timestamps differ");
    StepError e;
    e.t = frames[k].timestamp;
    try {
      FitResult fit;
      if (last) {
        const SensorFrame f = subarray > 0 ? with_mask(frames[k], select_subarray(last->position, array, subarray)) : frames[k];
        e.active_sensors = f.active_count();
        fit = solve_5d(f, *last, std::nullopt, array, solver);
      } else {
        e.active_sensors = frames[k].active_count();
        fit = initialize_pose(frames[k], std::nullopt, array, solver);
      }
      e.converged = true;
      e.position_error = (fit.state.position - truth[k].position).norm();
      e.moment_error = angle_between(fit.state.moment, truth[k].moment);
      e.residual_rms = fit.residual_rms;
      last = fit.state;
    } catch (const NoConvergence&) {
      last.reset();
    }
    out.push_back(e);
  }
  return out;
}

}  // namespace capnav
