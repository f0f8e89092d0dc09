#pragma once

#include "capnav/propulsion.hpp"
#include "capnav/trajectory.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

namespace capnav {

// ---- reference generation ------------------------------------------------------

struct ReferenceWindow {
  std::vector<Vec3> positions;   // N + 1 entries
  std::vector<Vec3> velocities;  // N + 1 entries
  int horizon = 0;
  double dt = 0.0;
  double start_distance = 0.0;  // along the segment, of the capsule's closest point
};

inline ReferenceWindow build_reference(const Vec3& p_c, const Segment& segment, double v_ref, int N, double dt) {
  if (!(segment.length() > 0.0)) throw ZeroLength("reference needs a segment of nonzero length");
  if (N < 1 || !(dt > 0.0) || !(v_ref >= 0.0)) throw DegenerateInput("reference needs N >= 1, dt > 0, v_ref >= 0");
  ReferenceWindow w;
  w.horizon = N;
  w.dt = dt;
  const double L = segment.length();
  w.start_distance = segment.nearest_distance(p_c);
  for (int i = 0; i <= N; ++i) {
    const double d = std::min(w.start_distance + i * v_ref * dt, L);
    const double remaining = L - d;
    w.positions.push_back(segment.point_at(d));
    const double speed = std::min(v_ref, remaining / dt);
    w.velocities.push_back(speed > 0.0 ? Vec3(speed * segment.tangent_at(d)) : Vec3::Zero());
  }
  return w;
}

// Window that parks on a single point.
inline ReferenceWindow hold_reference(const Vec3& p, int N, double dt) {
  ReferenceWindow w;
  w.horizon = N;
  w.dt = dt;
  w.positions.assign(N + 1, p);
  w.velocities.assign(N + 1, Vec3::Zero());
  return w;
}

// ---- robust multi-stage MPC ------------------------------------------------------

struct PlantModel {
  double mass = 0.008;                // kg
  double drag = 6.0;                  // N·s/m
  double friction = 0.05;             // N, nominal kinetic friction force
};

struct MPCWeights {
  double position = 1e6;
  double velocity = 1e2;
  double force = 1.0;
};

struct MPCOptions {
  PlantModel plant;
  MPCWeights weights;
  std::vector<double> scenarios{0.5, 1.0, 1.5};  // friction multipliers
  double f_max = 0.15;                           // N
  int max_iterations = 100;
  double tolerance = 1e-8;  // N, on the preconditioned projected step
};

struct MPCSolution {
  std::vector<Vec3> forces;
  double worst_cost = 0.0;
  std::vector<double> scenario_costs;
  int iterations = 0;
  std::vector<double> cost_history;  // worst-case cost after each accepted iterate, first at the start point
};

namespace detail {

// Exact zero-order-hold step coefficients of m dv/dt = a - b v:
// v' = alpha v + beta a, p' = p + gamma v + delta a.
struct ZohCoefficients {
  double alpha, beta, gamma, delta;
};

inline ZohCoefficients zoh(const PlantModel& m, double dt) {
  if (m.drag <= 0.0) return {1.0, dt / m.mass, dt, 0.5 * dt * dt / m.mass};
  const double tau = m.mass / m.drag;
  const double e = std::exp(-dt / tau);
  return {e, (1.0 - e) / m.drag, tau * (1.0 - e), (dt - tau * (1.0 - e)) / m.drag};
}

struct Rollout {
  std::vector<Vec3> p, v;  // N + 1 states
  std::vector<Mat3> D;     // friction Jacobian wrt its argument, per step
  double cost = 0.0;
};

class MpcProblem {
 public:
  MpcProblem(const Vec3& p0, const Vec3& v0, const ReferenceWindow& ref, const MPCOptions& o)
      : p0_(p0), v0_(v0), ref_(ref), o_(o), c_(zoh(o.plant, ref.dt)), n_(ref.horizon) {
    const auto& w = o.weights;
    if (!(w.position > 0.0 && w.velocity > 0.0 && w.force > 0.0) || !std::isfinite(w.position) ||
        !std::isfinite(w.velocity) || !std::isfinite(w.force))
      throw NonFiniteCost("MPC weights must be positive and finite");
    if (!finite(p0) || !finite(v0)) throw NonFiniteCost("MPC state must be finite");
    if (!(o.plant.mass > 0.0) || !(o.plant.drag >= 0.0) || !std::isfinite(o.plant.friction))
      throw NonFiniteCost("MPC plant parameters are invalid");
    if (o.scenarios.empty()) throw DegenerateInput("MPC needs at least one scenario");
    if (static_cast<int>(ref.positions.size()) != n_ + 1 || static_cast<int>(ref.velocities.size()) != n_ + 1)
      throw DegenerateInput("reference window has the wrong length");
    build_hessian();
  }

  int horizon() const { return n_; }

  Rollout rollout(const std::vector<Vec3>& f, double scale) const {
    Rollout r;
    r.p.assign(n_ + 1, Vec3::Zero());
    r.v.assign(n_ + 1, Vec3::Zero());
    r.D.assign(n_, Mat3::Zero());
    r.p[0] = p0_;
    r.v[0] = v0_;
    const double F = scale * o_.plant.friction;
    const auto& w = o_.weights;
    for (int i = 0; i < n_; ++i) {
      Vec3 a = f[i];
      if (F != 0.0) {
        // Karnopp-like friction: cancels small applied forces and saturates at F,
        // smoothed with a 4-norm so it never exceeds the force it opposes.
        // The drag time constant is far below dt, so the applied force sets the
        // direction of motion within a step.
        const double q = f[i].squaredNorm();
        const double s = std::pow(q * q + F * F * F * F, 0.25);
        a -= F * f[i] / s;
        r.D[i] = -F * (Mat3::Identity() / s - q * f[i] * f[i].transpose() / std::pow(s, 5));
      }
      r.p[i + 1] = r.p[i] + c_.gamma * r.v[i] + c_.delta * a;
      r.v[i + 1] = c_.alpha * r.v[i] + c_.beta * a;
      r.cost += w.position * (r.p[i + 1] - ref_.positions[i + 1]).squaredNorm() +
                w.velocity * (r.v[i + 1] - ref_.velocities[i + 1]).squaredNorm() + w.force * f[i].squaredNorm();
    }
    return r;
  }

  // Adjoint gradient of one scenario's cost with respect to the force sequence.
  std::vector<Vec3> gradient(const std::vector<Vec3>& f, const Rollout& r) const {
    const auto& w = o_.weights;
    std::vector<Vec3> g(n_);
    Vec3 lp = Vec3::Zero(), lv = Vec3::Zero();
    for (int i = n_ - 1; i >= 0; --i) {
      lp += 2.0 * w.position * (r.p[i + 1] - ref_.positions[i + 1]);
      lv += 2.0 * w.velocity * (r.v[i + 1] - ref_.velocities[i + 1]);
      const Mat3& D = r.D[i];
      const Vec3 la = c_.delta * lp + c_.beta * lv;  // sensitivity to the net force of step i
      g[i] = 2.0 * w.force * f[i] + la + D * la;
      lv = c_.gamma * lp + c_.alpha * lv;
    }
    return g;
  }

  // Frictionless Hessian solve, axis by axis.
  std::vector<Vec3> precondition(const std::vector<Vec3>& g) const {
    Eigen::MatrixXd G(n_, 3);
    for (int i = 0; i < n_; ++i) G.row(i) = g[i].transpose();
    const Eigen::MatrixXd X = hessian_.solve(G);
    std::vector<Vec3> out(n_);
    for (int i = 0; i < n_; ++i) out[i] = X.row(i).transpose();
    return out;
  }

  double hessian_max_eigenvalue() const { return hessian_max_; }

 private:
  void build_hessian() {
    // per-axis responses of p_i and v_i (i = 1..N) to a unit force at step j
    Eigen::MatrixXd Gp = Eigen::MatrixXd::Zero(n_, n_), Gv = Eigen::MatrixXd::Zero(n_, n_);
    for (int j = 0; j < n_; ++j) {
      double p = 0.0, v = 0.0;
      for (int i = j; i < n_; ++i) {
        const double a = i == j ? 1.0 : 0.0;
        p = p + c_.gamma * v + c_.delta * a;
        v = c_.alpha * v + c_.beta * a;
        Gp(i, j) = p;
        Gv(i, j) = v;
      }
    }
    const auto& w = o_.weights;
    const Eigen::MatrixXd H = 2.0 * (w.position * Gp.transpose() * Gp + w.velocity * Gv.transpose() * Gv +
                                     w.force * Eigen::MatrixXd::Identity(n_, n_));
    hessian_.compute(H);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H, Eigen::EigenvaluesOnly);
    hessian_max_ = es.eigenvalues().maxCoeff();
  }

  Vec3 p0_, v0_;
  const ReferenceWindow& ref_;
  const MPCOptions& o_;
  ZohCoefficients c_;
  int n_;
  Eigen::LLT<Eigen::MatrixXd> hessian_;
  double hessian_max_ = 1.0;
};

inline Vec3 clamp_norm(const Vec3& f, double limit) {
  const double n = f.norm();
  return n > limit ? Vec3(f * (limit / n)) : f;
}

}  // namespace detail

// Min over one shared force sequence of the max scenario cost, by projected
// gradient with a frictionless-Hessian preconditioner and Armijo backtracking.
inline MPCSolution rmmpc_solve(const Vec3& p0, const Vec3& v0, const ReferenceWindow& ref, const MPCOptions& opts,
                               const std::vector<Vec3>& warm_start = {}) {
  if (!(opts.f_max > 0.0)) throw DegenerateInput("force limit must be positive");
  detail::MpcProblem pb(p0, v0, ref, opts);
  const int n = pb.horizon();
  std::vector<Vec3> f(n, Vec3::Zero());
  for (int i = 0; i < n && i < static_cast<int>(warm_start.size()); ++i)
    f[i] = finite(warm_start[i]) ? detail::clamp_norm(warm_start[i], opts.f_max) : Vec3::Zero();

  auto evaluate = [&](const std::vector<Vec3>& x, std::vector<detail::Rollout>& rolls) {
    rolls.clear();
    double worst = -std::numeric_limits<double>::infinity();
    std::size_t active = 0;
    for (std::size_t c = 0; c < opts.scenarios.size(); ++c) {
      rolls.push_back(pb.rollout(x, opts.scenarios[c]));
      if (rolls.back().cost > worst) {
        worst = rolls.back().cost;
        active = c;
      }
    }
    if (!std::isfinite(worst)) throw NonFiniteCost("MPC cost is not finite");
    return std::pair<double, std::size_t>{worst, active};
  };
  auto project = [&](std::vector<Vec3> x) {
    for (auto& v : x) v = detail::clamp_norm(v, opts.f_max);
    return x;
  };
  auto step_to = [&](const std::vector<Vec3>& dir, double t) {
    std::vector<Vec3> x(n);
    for (int i = 0; i < n; ++i) x[i] = f[i] - t * dir[i];
    return project(std::move(x));
  };

  std::vector<detail::Rollout> rolls;
  auto [J, active] = evaluate(f, rolls);
  {
    // The friction dead zone is flat around zero force, so also try the
    // frictionless optimum with nominal friction added along each force.
    const std::vector<Vec3> zero(n, Vec3::Zero());
    std::vector<Vec3> cand = pb.precondition(pb.gradient(zero, pb.rollout(zero, 0.0)));
    for (auto& v : cand) {
      v = -v;
      if (v.norm() > 0.0) v += opts.plant.friction * v.normalized();
    }
    cand = project(std::move(cand));
    std::vector<detail::Rollout> cand_rolls;
    const auto [Jc, ac] = evaluate(cand, cand_rolls);
    if (Jc < J) {
      f = cand;
      J = Jc;
      active = ac;
      rolls = cand_rolls;
    }
  }
  MPCSolution sol;
  sol.cost_history.push_back(J);
  for (int it = 0; it < opts.max_iterations; ++it) {
    const std::vector<Vec3> g = pb.gradient(f, rolls[active]);
    const std::vector<Vec3> d = pb.precondition(g);
    const std::vector<Vec3> probe = step_to(d, 1.0);
    double gap = 0.0;
    for (int i = 0; i < n; ++i) gap += (f[i] - probe[i]).squaredNorm();
    if (std::sqrt(gap) < opts.tolerance) break;

    bool accepted = false;
    std::vector<detail::Rollout> next_rolls;
    const std::vector<Vec3> plain = [&] {
      std::vector<Vec3> x(g);
      for (auto& v : x) v /= pb.hessian_max_eigenvalue();
      return x;
    }();
    for (const auto* dir : {&d, &plain}) {
      double t = 1.0;
      for (int bt = 0; bt < 40 && !accepted; ++bt, t *= 0.5) {
        const std::vector<Vec3> cand = step_to(*dir, t);
        double decrease = 0.0;
        for (int i = 0; i < n; ++i) decrease += g[i].dot(f[i] - cand[i]);
        const auto [Jc, ac] = evaluate(cand, next_rolls);
        if (Jc < J && Jc <= J - 1e-4 * std::max(0.0, decrease)) {
          f = cand;
          J = Jc;
          active = ac;
          rolls = next_rolls;
          accepted = true;
        }
      }
      if (accepted) break;
    }
    if (!accepted) break;
    sol.iterations = it + 1;
    sol.cost_history.push_back(J);
  }
  sol.forces = f;
  sol.worst_cost = J;
  for (const auto& r : rolls) sol.scenario_costs.push_back(r.cost);
  return sol;
}

// ---- heading and actuator placement ---------------------------------------------

inline Vec3 blend_heading(const Vec3& desired, const Vec3& current, double slew_limit, const Vec3& velocity = Vec3::Zero()) {
  return rotate_toward(unit(current), unit(desired), slew_limit, velocity);
}

struct ForceMapOptions {
  double neutral_distance = 0.10;  // m, hover distance at zero requested force
  double min_distance = 0.06;
  double max_distance = 0.30;
  int phases = 36;                 // samples per rotation period
  int bisection_iterations = 40;
  int direction_iterations = 30;
  double direction_tolerance = 1e-5;  // rad between achieved and requested force
};

// Magnetic force on the capsule averaged over one period of the actuation
// schedule, with the capsule moment following the field across its axis.
inline Vec3 phase_averaged_force(const Vec3& p_c, const Vec3& p_a, const Vec3& axis, const ActuationMode& mode,
                                 const MagnetPair& mags, int phases) {
  const int n = mode.rotating() ? std::max(1, phases) : 1;
  const Vec3 w = unit(axis);
  Vec3 sum = Vec3::Zero();
  for (int k = 0; k < n; ++k) {
    double angle = 0.0;
    if (mode.kind == ActuationKind::CRMA) angle = 2.0 * kPi * k / n;
    if (mode.kind == ActuationKind::RRMA) angle = rrma_angle(mode.rrma_amplitude, 1.0, 4.0 * mode.rrma_amplitude * k / n);
    const Dipole a{p_a, mags.actuator * moment_at_angle(w, angle)};
    const Vec3 b = reject(dipole_field(a, p_c), w);
    if (b.norm() < 1e-15) continue;
    sum += dipole_force_torque(a, Dipole{p_c, mags.capsule * b.normalized()}).force;
  }
  return sum / n;
}

// Neutral force: the average force with the actuator straight above at the neutral distance.
inline Vec3 neutral_force(const Vec3& p_c, const Vec3& axis, const ActuationMode& mode, const MagnetPair& mags,
                          const ForceMapOptions& o) {
  return phase_averaged_force(p_c, p_c + o.neutral_distance * Vec3::UnitZ(), axis, mode, mags, o.phases);
}

struct ForcePlacement {
  Vec3 offset_direction;
  double distance = 0.0;
  Vec3 average_force;  // achieved, including the neutral part
};

// Places the actuator so the period-averaged force equals the neutral force
// plus f_d: bisection on distance for the magnitude, fixed-point correction of
// the offset direction.
inline ForcePlacement place_for_force(const Vec3& f_d, const Vec3& axis, const Vec3& p_c, const ActuationMode& mode,
                                      const MagnetPair& mags, const ForceMapOptions& o) {
  if (!finite(f_d) || !finite(axis) || !finite(p_c)) throw DegenerateInput("force placement needs finite inputs");
  const Vec3 target = neutral_force(p_c, axis, mode, mags, o) + f_d;
  const double want = target.norm();
  if (!(want > 0.0)) throw UnreachableForce("requested force cancels the neutral attraction");
  const Vec3 want_dir = target / want;
  auto magnitude = [&](const Vec3& u, double d) {
    return phase_averaged_force(p_c, p_c + d * u, axis, mode, mags, o.phases).norm();
  };
  ForcePlacement out;
  Vec3 u = want_dir;
  Vec3 prev_u = u, prev_dir = Vec3::Zero();
  double gain = 1.0;
  for (int it = 0; it < std::max(1, o.direction_iterations); ++it) {
    if (magnitude(u, o.min_distance) < want) throw UnreachableForce("requested force exceeds the force at minimum approach");
    double lo = o.min_distance, hi = o.max_distance;
    if (magnitude(u, hi) >= want) {
      lo = hi;
    } else {
      for (int b = 0; b < o.bisection_iterations; ++b) {
        const double mid = 0.5 * (lo + hi);
        if (magnitude(u, mid) >= want) {
          lo = mid;
        } else {
          hi = mid;
        }
      }
    }
    out.offset_direction = u;
    out.distance = lo;
    out.average_force = phase_averaged_force(p_c, p_c + lo * u, axis, mode, mags, o.phases);
    const Vec3 got = out.average_force.normalized();
    if (angle_between(got, want_dir) < o.direction_tolerance) break;
    // secant estimate of how far the offset must turn per unit turn of the force
    if (it > 0) {
      const double moved = (got - prev_dir).norm();
      if (moved > 1e-12) gain = std::clamp((u - prev_u).norm() / moved, 1.0, 10.0);
    }
    prev_u = u;
    prev_dir = got;
    u = unit(u + gain * (want_dir - got));
  }
  return out;
}

inline ActuatorPose actuator_from_force(const Vec3& f_d, const Vec3& axis, const Vec3& p_c, const ActuationMode& mode,
                                        double clock, const MagnetPair& mags, const ForceMapOptions& o = {},
                                        const Workspace& ws = {}) {
  const ForcePlacement pl = place_for_force(f_d, axis, p_c, mode, mags, o);
  ActuatorPose pose;
  pose.axis = unit(axis);
  pose.position = p_c + pl.distance * pl.offset_direction;
  if (!ws.contains(pose.position)) throw WorkspaceLimit("actuator position outside the reachable box");
  pose.moment = schedule_moment(mode, pose.axis, clock);
  return pose;
}

// ---- trajectory-following controller ----------------------------------------------

struct TFConfig {
  double v_ref = 0.006;  // m/s
  int horizon = 10;
  double dt = 0.1;  // s, controller period
  MPCOptions mpc;
  ForceMapOptions force_map;
  double goal_tolerance = 0.002;  // m
  double hold_time = 1.0;         // s
  double stall_timeout = 15.0;    // s
  double stall_progress = 0.001;  // m of distance-to-goal improvement that counts as progress
  double heading_rate = 1.5;      // rad/s
  double search_window = 0.03;    // m of arc length around the previous closest point
  ActuationMode mode;
  Workspace workspace;

  void validate() const {
    if (!(v_ref > 0.0) || horizon < 1 || !(dt > 0.0)) throw DegenerateInput("TF needs v_ref > 0, horizon >= 1, dt > 0");
    if (!(goal_tolerance > 0.0) || !(hold_time >= 0.0) || !(stall_timeout > 0.0))
      throw DegenerateInput("TF arrival and stall settings must be positive");
    if (!(heading_rate > 0.0)) throw DegenerateInput("heading rate must be positive");
    mode.validate();
  }
};

struct TFOutput {
  ActuatorPose pose;
  double distance_to_goal = 0.0;
  bool arrived = false;
  bool stalled = false;
  Vec3 force = Vec3::Zero();
  double cost = 0.0;
  int iterations = 0;
  std::vector<Vec3> reference;
};

class TFController {
 public:
  TFController(TFConfig cfg, Trajectory traj, MagnetPair mags = {})
      : cfg_(std::move(cfg)), traj_(std::move(traj)), mags_(mags) {
    cfg_.validate();
    if (traj_.empty()) throw MissingData("trajectory following needs a trajectory");
  }

  const TFConfig& config() const { return cfg_; }
  const GoalPoint& goal() const { return goal_; }

  void set_mode(const ActuationMode& m) {
    m.validate();
    cfg_.mode = m;
  }

  void set_goal(const GoalPoint& goal, const Vec3& current_axis, double clock) {
    goal_ = goal;
    axis_ = unit(current_axis);
    warm_.clear();
    last_s_.reset();
    within_since_.reset();
    best_distance_ = std::numeric_limits<double>::infinity();
    last_progress_ = clock;
    have_goal_ = true;
  }

  TFOutput step(const CapsuleState& est, double clock) {
    if (!have_goal_) throw InvalidCommand("no goal set");
    TFOutput out;
    const Vec3 p = est.position;
    // distance along the trajectory: the lumen is wider than the capsule, so
    // the lateral position is not controllable
    const double s = closest_parameter(p);
    out.distance_to_goal = std::abs(s - goal_.s) * traj_.length();
    if (out.distance_to_goal < best_distance_ - cfg_.stall_progress) {
      best_distance_ = out.distance_to_goal;
      last_progress_ = clock;
    }
    const bool within = out.distance_to_goal < cfg_.goal_tolerance;
    if (within) {
      if (!within_since_) within_since_ = clock;
      out.arrived = clock - *within_since_ >= cfg_.hold_time - 1e-9;
      last_progress_ = clock;
    } else {
      within_since_.reset();
    }
    out.stalled = !within && clock - last_progress_ > cfg_.stall_timeout;

    // inside the tolerance the window parks on the goal so the capsule settles there
    const ReferenceWindow ref = within || std::abs(s - goal_.s) < 1e-6
                                    ? hold_reference(goal_.position, cfg_.horizon, cfg_.dt)
                                    : build_reference(p, truncate(traj_, s, goal_), cfg_.v_ref, cfg_.horizon, cfg_.dt);
    const MPCSolution sol = rmmpc_solve(p, est.velocity, ref, cfg_.mpc, shifted_warm());
    warm_ = sol.forces;
    const Vec3 force = sol.forces.front();
    out.cost = sol.worst_cost;
    out.iterations = sol.iterations;
    const Vec3 v0 = ref.velocities.front();
    if (v0.norm() > 0.0) axis_ = blend_heading(v0, axis_, cfg_.heading_rate * cfg_.dt, est.velocity);
    out.force = force;
    out.reference = ref.positions;
    out.pose = actuator_from_force(force, axis_, p, cfg_.mode, clock, mags_, cfg_.force_map, cfg_.workspace);
    return out;
  }

  const Vec3& axis() const { return axis_; }

 private:
  double closest_parameter(const Vec3& p) {
    double s;
    if (!last_s_) {
      s = traj_.nearest_parameter(p);
    } else {
      const double w = cfg_.search_window / traj_.length();
      s = traj_.nearest_parameter(p, *last_s_ - w, *last_s_ + w);
    }
    last_s_ = s;
    return s;
  }

  std::vector<Vec3> shifted_warm() const {
    if (warm_.empty()) return {};
    std::vector<Vec3> w(warm_.begin() + 1, warm_.end());
    w.push_back(warm_.back());
    return w;
  }

  TFConfig cfg_;
  Trajectory traj_;
  MagnetPair mags_;
  GoalPoint goal_;
  bool have_goal_ = false;
  Vec3 axis_ = Vec3::UnitX();
  std::vector<Vec3> warm_;
  std::optional<double> last_s_;
  std::optional<double> within_since_;
  double best_distance_ = std::numeric_limits<double>::infinity();
  double last_progress_ = 0.0;
};

}  // namespace capnav
