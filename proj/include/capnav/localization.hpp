#pragma once

#include "capnav/sensing.hpp"

#include <algorithm>
#include <deque>
#include <limits>
#include <optional>
#include <vector>

namespace capnav {

struct CapsuleState {
  Vec3 position = Vec3::Zero();
  Vec3 moment = Vec3::UnitX();
  Vec3 heading = Vec3::UnitX();
  bool heading_valid = false;
  Vec3 velocity = Vec3::Zero();
  double timestamp = 0.0;
};

struct FitResult {
  CapsuleState state;
  double residual_rms = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> cost_history;  // accepted iterates, starting with the initial cost
};

// Thrown by the solvers; carries the best attempt for diagnostics.
struct FitFailure : NoConvergence {
  FitFailure(const std::string& what, FitResult best) : NoConvergence(what), best(std::move(best)) {}
  FitResult best;
};

struct SolverOptions {
  double moment_magnitude = 0.963;  // capsule magnet, A·m²
  double noise_sigma = 0.5e-6;
  double sigma_factor = 3.0;
  double residual_floor = 1e-9;  // keeps the threshold meaningful for noiseless data
  int max_iterations = 200;
  double initial_damping = 1e-3;
  std::vector<double> init_heights{0.05, 0.10, 0.15};
  // plausible capsule volume relative to the array plane
  double min_height = 0.005;
  double max_height = 0.5;
  double footprint_margin = 0.3;

  double threshold() const { return std::max(sigma_factor * noise_sigma, residual_floor); }
};

namespace detail {

struct FitProblem {
  std::vector<Vec3> sensors;
  std::vector<Vec3> target;  // measurement with the known actuator field removed
};

inline FitProblem make_problem(const SensorFrame& frame, const std::optional<Dipole>& actuator,
                               const ArrayConfig& cfg) {
  if (static_cast<int>(frame.readings.size()) != cfg.count()) throw DegenerateInput("frame size does not match array");
  FitProblem pb;
  for (int i = 0; i < cfg.count(); ++i) {
    if (!frame.active[i]) continue;
    const Vec3 s = cfg.position(i);
    Vec3 b = frame.readings[i];
    if (actuator) b -= dipole_field(*actuator, s);
    pb.sensors.push_back(s);
    pb.target.push_back(b);
  }
  return pb;
}

inline double rms_of(const FitProblem& pb) {
  double ss = 0.0;
  for (const auto& b : pb.target) ss += b.squaredNorm();
  return std::sqrt(ss / (3.0 * static_cast<double>(pb.target.size())));
}

inline double cost(const FitProblem& pb, const Vec3& p, const Vec3& m, double mag) {
  const Dipole d{p, mag * m};
  double c = 0.0;
  for (std::size_t i = 0; i < pb.sensors.size(); ++i) {
    const Vec3 r = pb.sensors[i] - p;
    if (!(r.norm() > kMinSeparation)) return std::numeric_limits<double>::infinity();
    c += (dipole_field(d, pb.sensors[i]) - pb.target[i]).squaredNorm();
  }
  return c;
}

inline bool plausible(const Vec3& p, const ArrayConfig& cfg, const SolverOptions& o) {
  const double h = p.z() - cfg.origin.z();
  const double x0 = cfg.origin.x() - o.footprint_margin, x1 = cfg.origin.x() + (cfg.cols - 1) * cfg.spacing + o.footprint_margin;
  const double y0 = cfg.origin.y() - o.footprint_margin, y1 = cfg.origin.y() + (cfg.rows - 1) * cfg.spacing + o.footprint_margin;
  return finite(p) && h >= o.min_height && h <= o.max_height && p.x() >= x0 && p.x() <= x1 && p.y() >= y0 &&
         p.y() <= y1;
}

// Damped Gauss-Newton over position and a tangent-plane update of the unit moment.
inline FitResult levenberg_marquardt(const FitProblem& pb, Vec3 p, Vec3 m, const SolverOptions& o) {
  const double mag = o.moment_magnitude;
  const std::size_t n = pb.sensors.size();
  m = unit(m);
  double c = cost(pb, p, m, mag);
  FitResult res;
  res.cost_history.push_back(c);
  double lambda = o.initial_damping;
  int iter = 0;
  const double negligible = 1e-6 * o.residual_floor;
  Eigen::MatrixXd J(3 * n, 5);
  Eigen::VectorXd r(3 * n);
  while (iter < o.max_iterations && std::isfinite(c)) {
    if (std::sqrt(c / (3.0 * n)) <= negligible) break;
    const Vec3 u = any_perpendicular(m);
    const Vec3 v = m.cross(u);
    const Dipole d{p, mag * m};
    for (std::size_t i = 0; i < n; ++i) {
      const Vec3 rr = pb.sensors[i] - p;
      const double dist = rr.norm();
      const Vec3 rh = rr / dist;
      const Mat3 dBdm = kMu0Over4Pi * mag / (dist * dist * dist) * (3.0 * rh * rh.transpose() - Mat3::Identity());
      const Mat3 dBdp = -dipole_field_gradient(d, pb.sensors[i]);
      J.block<3, 3>(3 * i, 0) = dBdp;
      J.block<3, 1>(3 * i, 3) = dBdm * u;
      J.block<3, 1>(3 * i, 4) = dBdm * v;
      r.segment<3>(3 * i) = dipole_field(d, pb.sensors[i]) - pb.target[i];
    }
    const Eigen::Matrix<double, 5, 5> A = J.transpose() * J;
    const Eigen::Matrix<double, 5, 1> g = J.transpose() * r;
    if (!g.allFinite()) break;
    bool accepted = false;
    bool stop = false;
    while (iter < o.max_iterations) {
      ++iter;
      Eigen::Matrix<double, 5, 5> H = A;
      for (int k = 0; k < 5; ++k) H(k, k) += lambda * std::max(A(k, k), 1e-30);
      const Eigen::Matrix<double, 5, 1> step = H.ldlt().solve(-g);
      const Vec3 p2 = p + step.head<3>();
      const Vec3 m2 = (m + step(3) * u + step(4) * v).normalized();
      const double c2 = step.allFinite() ? cost(pb, p2, m2, mag) : std::numeric_limits<double>::infinity();
      if (c2 < c) {
        const double rel = (c - c2) / c;
        const double moved = step.head<3>().norm();
        p = p2;
        m = m2;
        c = c2;
        res.cost_history.push_back(c);
        lambda = std::max(lambda * 0.3, 1e-12);
        accepted = true;
        if (rel < 1e-13 || moved < 1e-13) stop = true;
        break;
      }
      lambda *= 3.0;
      if (lambda > 1e12) {
        stop = true;
        break;
      }
    }
    if (!accepted || stop) break;
  }
  res.iterations = iter;
  res.state.position = p;
  res.state.moment = m;
  res.residual_rms = std::sqrt(c / (3.0 * n));
  return res;
}

}  // namespace detail

inline FitResult solve_5d(const SensorFrame& frame, const CapsuleState& guess, const std::optional<Dipole>& actuator,
                          const ArrayConfig& cfg, const SolverOptions& opts = {}) {
  if (frame.active_count() < 6) throw DegenerateInput("5-D fit needs at least 6 active sensors");
  const auto pb = detail::make_problem(frame, actuator, cfg);
  const double thr = opts.threshold();
  if (detail::rms_of(pb) <= thr) throw FitFailure("no capsule signal above the noise threshold", FitResult{});
  FitResult res = detail::levenberg_marquardt(pb, guess.position, guess.moment, opts);
  res.state.timestamp = frame.timestamp;
  res.state.heading = guess.heading;
  res.state.heading_valid = false;
  res.converged = std::isfinite(res.residual_rms) && res.residual_rms <= thr &&
                  detail::plausible(res.state.position, cfg, opts);
  if (!res.converged) throw FitFailure("5-D fit did not converge", res);
  return res;
}

inline FitResult initialize_pose(const SensorFrame& frame, const std::optional<Dipole>& actuator,
                                 const ArrayConfig& cfg, const SolverOptions& opts = {}) {
  if (frame.active_count() < 6) throw DegenerateInput("initialization needs at least 6 active sensors");
  const auto pb = detail::make_problem(frame, actuator, cfg);
  const double thr = opts.threshold();
  if (detail::rms_of(pb) <= thr) throw FitFailure("no capsule signal above the noise threshold", FitResult{});
  const double w = (cfg.cols - 1) * cfg.spacing;
  const double h = (cfg.rows - 1) * cfg.spacing;
  const Vec3 moments[4] = {Vec3::UnitX(), -Vec3::UnitX(), Vec3::UnitY(), -Vec3::UnitY()};
  std::optional<FitResult> best;
  for (double z : opts.init_heights) {
    for (double fy : {0.25, 0.75}) {
      for (double fx : {0.25, 0.75}) {
        for (const auto& m0 : moments) {
          const Vec3 p0 = cfg.origin + Vec3(fx * w, fy * h, z);
          FitResult r = detail::levenberg_marquardt(pb, p0, m0, opts);
          if (!detail::plausible(r.state.position, cfg, opts) || !std::isfinite(r.residual_rms)) continue;
          if (!best || r.residual_rms < best->residual_rms) best = std::move(r);
        }
      }
    }
  }
  if (!best) throw FitFailure("no start produced a plausible pose", FitResult{});
  best->state.timestamp = frame.timestamp;
  best->converged = best->residual_rms <= thr;
  if (!best->converged) throw FitFailure("initialization residual above threshold", *best);
  return *best;
}

// First row/column of the size x size block nearest to the capsule's horizontal
// position; ties resolve toward smaller indices.
inline std::vector<bool> select_subarray(const Vec3& previous_position, const ArrayConfig& cfg, int size) {
  cfg.validate();
  if (!finite(previous_position)) throw DegenerateInput("previous position must be finite");
  const int kr = std::clamp(size, 1, cfg.rows);
  const int kc = std::clamp(size, 1, cfg.cols);
  auto first = [&](double coord, int k, int n) {
    const double v = coord / cfg.spacing - 0.5 * (k - 1);
    const double lo = std::ceil(v - 0.5);
    return static_cast<int>(std::clamp(lo, 0.0, static_cast<double>(n - k)));
  };
  const Vec3 rel = previous_position - cfg.origin;
  const int c0 = first(rel.x(), kc, cfg.cols);
  const int r0 = first(rel.y(), kr, cfg.rows);
  std::vector<bool> mask(cfg.count(), false);
  for (int r = r0; r < r0 + kr; ++r)
    for (int c = c0; c < c0 + kc; ++c) mask[r * cfg.cols + c] = true;
  return mask;
}

inline double max_pairwise_angle(const std::vector<Vec3>& v) {
  double best = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = i + 1; j < v.size(); ++j) best = std::max(best, angle_between(v[i], v[j]));
  return best;
}

// Normal of the plane swept by the rotating moment.
inline Vec3 estimate_heading_nvf(const std::vector<Vec3>& moments, const Vec3& prior) {
  if (moments.size() < 3) throw InsufficientHistory("heading fit needs at least 3 moment samples");
  if (max_pairwise_angle(moments) < 10.0 * kPi / 180.0)
    throw DegenerateInput("moment samples span less than 10 degrees");
  Vec3 mean = Vec3::Zero();
  for (const auto& m : moments) mean += m;
  mean /= static_cast<double>(moments.size());
  Mat3 S = Mat3::Zero();
  for (const auto& m : moments) S += (m - mean) * (m - mean).transpose();
  Eigen::SelfAdjointEigenSolver<Mat3> es(S);
  Vec3 n = es.eigenvectors().col(0).normalized();
  if (n.dot(prior) < 0.0) n = -n;
  return n;
}

struct TimedPosition {
  double t = 0.0;
  Vec3 p = Vec3::Zero();
};

struct VelocityEstimate {
  Vec3 velocity = Vec3::Zero();
  double standard_error = 0.0;  // per-axis slope standard error, pooled over axes
};

// Least-squares line over the samples inside the trailing window.
inline VelocityEstimate estimate_velocity(const std::vector<TimedPosition>& history, double window = 0.5) {
  if (history.size() < 2) throw InsufficientHistory("velocity needs at least two samples");
  const double t_end = history.back().t;
  std::size_t first = history.size() - 1;
  while (first > 0 && history[first - 1].t >= t_end - window - 1e-12) --first;
  if (history.size() - first < 2) first = history.size() - 2;
  const std::size_t n = history.size() - first;
  if (history.back().t - history[first].t < 0.05 - 1e-12)
    throw InsufficientHistory("velocity samples span less than 0.05 s");
  double tm = 0.0;
  Vec3 pm = Vec3::Zero();
  for (std::size_t i = first; i < history.size(); ++i) {
    tm += history[i].t;
    pm += history[i].p;
  }
  tm /= static_cast<double>(n);
  pm /= static_cast<double>(n);
  double stt = 0.0;
  Vec3 stp = Vec3::Zero();
  for (std::size_t i = first; i < history.size(); ++i) {
    const double dt = history[i].t - tm;
    stt += dt * dt;
    stp += dt * (history[i].p - pm);
  }
  VelocityEstimate est;
  est.velocity = stp / stt;
  if (n > 2) {
    double ss = 0.0;
    for (std::size_t i = first; i < history.size(); ++i) {
      const Vec3 fit = pm + est.velocity * (history[i].t - tm);
      ss += (history[i].p - fit).squaredNorm();
    }
    est.standard_error = std::sqrt(ss / (3.0 * static_cast<double>(n - 2)) / stt);
  }
  return est;
}

struct TrackerOptions {
  int subarray = 4;
  int nvf_window = 20;
  double nvf_min_step = 5.0 * kPi / 180.0;  // new moment sample must differ this much from the last kept one
  double nvf_min_span = 90.0 * kPi / 180.0;
  int nvf_min_samples = 8;
  double velocity_window = 0.5;
};

// Per-step localization: sub-array fit, heading from the moment history and
// velocity from the position history.
class Tracker {
 public:
  Tracker(ArrayConfig cfg, SolverOptions solver = {}, TrackerOptions opts = {})
      : cfg_(cfg), solver_(std::move(solver)), opts_(opts) {
    cfg_.validate();
  }

  bool initialized() const { return initialized_; }
  const CapsuleState& state() const { return state_; }
  const ArrayConfig& array() const { return cfg_; }
  const SolverOptions& solver() const { return solver_; }
  int reinitializations() const { return reinit_; }
  int last_iterations() const { return last_iterations_; }

  const CapsuleState& initialize(const SensorFrame& frame, const std::optional<Dipole>& actuator) {
    FitResult fit = initialize_pose(frame, actuator, cfg_, solver_);
    reset_history();
    accept(fit);
    initialized_ = true;
    return state_;
  }

  const CapsuleState& track_step(const SensorFrame& frame, const std::optional<Dipole>& actuator) {
    if (!initialized_) return initialize(frame, actuator);
    if (frame.active_count() == 0) throw DegenerateInput("frame has no active sensors");
    const SensorFrame sub = with_mask(frame, select_subarray(state_.position, cfg_, opts_.subarray));
    std::optional<FitResult> fit;
    if (sub.active_count() >= 6) {
      try {
        fit = solve_5d(sub, state_, actuator, cfg_, solver_);
      } catch (const NoConvergence&) {
      }
    }
    if (!fit) {
      fit = initialize_pose(frame, actuator, cfg_, solver_);
      ++reinit_;
    }
    accept(*fit);
    return state_;
  }

 private:
  void reset_history() {
    moments_.clear();
    positions_.clear();
  }

  void accept(const FitResult& fit) {
    last_iterations_ = fit.iterations;
    CapsuleState next = fit.state;
    const double t = next.timestamp;
    if (moments_.empty() || angle_between(moments_.back(), next.moment) >= opts_.nvf_min_step) {
      moments_.push_back(next.moment);
      while (static_cast<int>(moments_.size()) > opts_.nvf_window) moments_.pop_front();
    }
    positions_.push_back({t, next.position});
    while (positions_.size() > 2 && positions_.front().t < t - opts_.velocity_window - 1e-9) positions_.pop_front();
    try {
      std::vector<TimedPosition> hist(positions_.begin(), positions_.end());
      next.velocity = estimate_velocity(hist, opts_.velocity_window).velocity;
    } catch (const InsufficientHistory&) {
      next.velocity = Vec3::Zero();
    }
    Vec3 prior = state_.heading_valid ? state_.heading : Vec3::UnitX();
    if (!state_.heading_valid && next.velocity.norm() > 0.0) prior = next.velocity.normalized();
    next.heading = state_.heading;
    next.heading_valid = state_.heading_valid;
    std::vector<Vec3> ms(moments_.begin(), moments_.end());
    if (static_cast<int>(ms.size()) >= opts_.nvf_min_samples && max_pairwise_angle(ms) >= opts_.nvf_min_span) {
      next.heading = estimate_heading_nvf(ms, prior);
      next.heading_valid = true;
    }
    if (next.heading_valid) {
      const Vec3 h = reject(next.heading, next.moment);
      if (h.norm() > 1e-6) {
        next.heading = h.normalized();
      } else {
        next.heading_valid = false;
      }
    }
    state_ = next;
  }

  ArrayConfig cfg_;
  SolverOptions solver_;
  TrackerOptions opts_;
  CapsuleState state_;
  bool initialized_ = false;
  int reinit_ = 0;
  int last_iterations_ = 0;
  std::deque<Vec3> moments_;
  std::deque<TimedPosition> positions_;
};

}  // namespace capnav
