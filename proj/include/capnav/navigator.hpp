#pragma once

#include "capnav/config.hpp"
#include "capnav/session.hpp"

#include <deque>
#include <optional>
#include <string>
#include <vector>

namespace capnav {

enum class WithdrawalMethod { tf, backward_ap, teleop };

inline std::string to_string(WithdrawalMethod m) {
  switch (m) {
    case WithdrawalMethod::tf: return "tf";
    case WithdrawalMethod::backward_ap: return "backward-ap";
    case WithdrawalMethod::teleop: return "tele-operation";
  }
  return "?";
}

inline WithdrawalMethod parse_method(const std::string& s) {
  if (s == "tf") return WithdrawalMethod::tf;
  if (s == "backward-ap" || s == "bap") return WithdrawalMethod::backward_ap;
  if (s == "tele-operation" || s == "teleop" || s == "tele") return WithdrawalMethod::teleop;
  throw InvalidCommand("unknown withdrawal method '" + s + "'");
}

enum class Stage { idle, insertion, ready, withdrawal };

inline std::string to_string(Stage s) {
  switch (s) {
    case Stage::idle: return "idle";
    case Stage::insertion: return "insertion";
    case Stage::ready: return "ready";
    case Stage::withdrawal: return "withdrawal";
  }
  return "?";
}

struct Command {
  std::string type;  // start-insertion, stop-insertion, select-goal, clear-goals, set-mode,
                     // set-method, start-withdrawal, teleop, pause, resume
  std::optional<double> s;
  std::optional<Vec3> vector;  // clicked position for select-goal, motion for teleop
  std::string text;            // mode or method name
  std::string label;
};

struct CommandResult {
  bool accepted = false;
  std::string reason;
};

// Cumulative-length index over the raw insertion estimates; lets backward AP
// tell "ahead" from "behind" without the fitted trajectory.
class HistoryIndex {
 public:
  HistoryIndex() = default;

  HistoryIndex(const std::vector<Vec3>& points, double min_step) {
    for (const auto& p : points) {
      if (!pts_.empty() && (p - pts_.back()).norm() < min_step) continue;
      cum_.push_back(pts_.empty() ? 0.0 : cum_.back() + (p - pts_.back()).norm());
      pts_.push_back(p);
    }
  }

  bool empty() const { return pts_.size() < 2; }

  double coordinate(const Vec3& p) const {
    std::size_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < pts_.size(); ++i) {
      const double d = (pts_[i] - p).squaredNorm();
      if (d < bd) {
        bd = d;
        best = i;
      }
    }
    return cum_[best];
  }

  // Chord direction over [coord - half_window, coord + half_window].
  Vec3 direction_at(double coord, double half_window) const {
    const Vec3 d = point_at(coord + half_window) - point_at(coord - half_window);
    if (d.norm() > 0.0) return unit(d);
    return unit(pts_.back() - pts_.front());
  }

  Vec3 point_at(double coord) const {
    auto it = std::lower_bound(cum_.begin(), cum_.end(), coord);
    return pts_[std::min<std::size_t>(static_cast<std::size_t>(it - cum_.begin()), pts_.size() - 1)];
  }

 private:
  std::vector<Vec3> pts_;
  std::vector<double> cum_;
};

// The closed loop: simulated sensing, localization, control and dynamics at
// the simulation rate, with commands applied between ticks. Controllers only
// see estimates; ground truth reaches the logs and the insertion end test.
class Navigator {
 public:
  static constexpr double kHistoryWindow = 0.005;  // m

  Navigator(TubeEnvironment env, RunConfig cfg, std::uint64_t seed)
      : env_(std::move(env)),
        cfg_(prepared(std::move(cfg))),
        rng_(seed),
        noise_rng_(rng_.substream(1)),
        dyn_rng_(rng_.substream(2)),
        traj_rng_(rng_.substream(3)),
        operator_rng_(rng_.substream(4)),
        tracker_(cfg_.array, cfg_.solver, cfg_.tracker),
        mode_(cfg_.insertion.mode) {
    env_.validate();
    session_.environment = env_.id;
    session_.seed = seed;
    session_.config = config_to_yaml(cfg_);

    // ambient calibration with both magnets away from the array
    std::vector<SensorFrame> frames;
    for (int i = 0; i < cfg_.sensing.calibration_frames; ++i)
      frames.push_back(simulate_frame({}, cfg_.array, cfg_.sensing.noise_sigma, cfg_.sensing.ambient, noise_rng_, 0.0));
    background_ = calibrate_background(frames);

    const double s0 = std::min(cfg_.insertion.start_arc_length, env_.length());
    const Vec3 t0 = env_.tangent(s0);
    actuator_.position = env_.point(s0) + Vec3(0.0, 0.0, cfg_.ap.hover_offset.z());
    actuator_.axis = t0;
    actuator_.moment = moment_at_angle(t0, 0.0);
    truth_ = initial_sim_state(env_, s0, actuator_);
    truth_.latch_mode = mode_.kind;
    ActuationMode hold_mode = mode_;
    hold_mode.kind = ActuationKind::DMA;
    hold_mode_ = hold_mode;
    enter_stage(Stage::idle, "idle");
  }

  // ---- accessors ------------------------------------------------------------

  const NavigationSession& session() const { return session_; }
  NavigationSession& session() { return session_; }
  const RunConfig& config() const { return cfg_; }
  const TubeEnvironment& environment() const { return env_; }
  Stage stage() const { return stage_; }
  double clock() const { return clock_; }
  bool paused() const { return paused_; }
  const CapsuleState& estimate() const { return estimate_; }
  const SimState& truth() const { return truth_; }
  const ActuatorPose& actuator() const { return actuator_; }
  const ActuationMode& mode() const { return mode_; }
  WithdrawalMethod method() const { return method_; }
  const std::vector<int>& plan() const { return plan_; }
  int localization_failures() const { return loc_failures_; }
  void set_scripted_operator(bool on) { scripted_operator_ = on; }

  // ---- commands -------------------------------------------------------------

  CommandResult submit(const Command& c) {
    CommandResult r = apply(c);
    Event e;
    e.t = clock_;
    e.type = r.accepted ? "ack" : "reject";
    e.detail = c.type + (r.accepted ? std::string() : ": " + r.reason);
    e.true_position = truth_.capsule.position;
    e.est_position = estimate_.position;
    session_.events.push_back(e);
    return r;
  }

  // ---- stepping -------------------------------------------------------------

  void tick() {
    if (paused_) return;
    const double dt = cfg_.sim_dt;
    sense_and_localize();
    control();
    truth_ = step_dynamics(truth_, actuator_, active_mode(), dt, env_, cfg_.magnets, dyn_rng_, cfg_.dynamics);
    ++ticks_;
    clock_ = static_cast<double>(ticks_) * dt;
    if (ticks_ % log_every() == 0) log_state();
    after_tick();
  }

  // Runs insertion to completion or abort. Returns true on reaching the end.
  bool run_insertion() {
    if (stage_ == Stage::idle) {
      const auto r = submit({"start-insertion"});
      if (!r.accepted) throw InvalidCommand(r.reason);
    }
    while (stage_ == Stage::insertion) tick();
    return !session_.phases.empty() && session_.phases.back().success;
  }

  // Queues goals, runs one withdrawal and returns its metrics.
  PhaseMetrics run_withdrawal(WithdrawalMethod m, const std::vector<double>& goals) {
    submit_or_throw({"set-method", std::nullopt, std::nullopt, to_string(m)});
    submit_or_throw({"clear-goals"});
    for (double s : goals) submit_or_throw({"select-goal", s});
    submit_or_throw({"start-withdrawal"});
    while (stage_ == Stage::withdrawal) tick();
    return phase_metrics(session_, session_.phases.back());
  }

  Metrics metrics() const { return compute_metrics(session_); }

  // ---- telemetry --------------------------------------------------------------

  nlohmann::json snapshot() const {
    using detail::vec;
    nlohmann::json j;
    j["schema"] = "capnav-telemetry/1";
    j["type"] = "snapshot";
    j["t"] = clock_;
    j["stage"] = to_string(stage_);
    j["paused"] = paused_;
    j["mode"] = to_string(mode_.kind);
    j["method"] = to_string(method_);
    j["capsule"] = {{"estimated",
                     {{"position", vec(estimate_.position)},
                      {"velocity", vec(estimate_.velocity)},
                      {"heading", vec(estimate_.heading)},
                      {"heading_valid", estimate_.heading_valid}}},
                    {"truth", {{"position", vec(truth_.capsule.position)}, {"arc_length", truth_.arc_length}}}};
    j["actuator"] = {{"position", vec(actuator_.position)}, {"axis", vec(actuator_.axis)}, {"moment", vec(actuator_.moment)}};
    nlohmann::json tube = nlohmann::json::array();
    const int n = 100;
    for (int i = 0; i <= n; ++i) tube.push_back(vec(env_.point(env_.length() * i / n)));
    j["tube"] = {{"id", env_.id}, {"radius", env_.radius}, {"centerline", tube}};
    if (session_.trajectory.empty()) {
      j["trajectory"] = nullptr;
    } else {
      nlohmann::json poly = nlohmann::json::array();
      for (const auto& p : session_.trajectory.polyline(200)) poly.push_back(vec(p));
      j["trajectory"] = {{"length", session_.trajectory.length()}, {"polyline", poly}};
    }
    nlohmann::json goals = nlohmann::json::array();
    for (std::size_t i = 0; i < session_.goals.size(); ++i) {
      nlohmann::json g = to_json(session_.goals[i]);
      g["index"] = static_cast<int>(i);
      goals.push_back(g);
    }
    j["goals"] = goals;
    j["plan"] = plan_;
    j["current_goal"] = stage_ == Stage::withdrawal && goal_cursor_ < plan_.size() ? plan_[goal_cursor_] : -1;
    bool any_completed = false;
    for (const auto& p : session_.phases) any_completed = any_completed || p.completed;
    j["metrics"] = any_completed ? to_json(compute_metrics(session_)) : nlohmann::json(nullptr);
    j["localization_failures"] = loc_failures_;
    return j;
  }

 private:
  static RunConfig prepared(RunConfig c) {
    sync_config(c);
    c.validate();
    return c;
  }

  // ---- command handling ---------------------------------------------------------

  void submit_or_throw(const Command& c) {
    const auto r = submit(c);
    if (!r.accepted) throw InvalidCommand(c.type + ": " + r.reason);
  }

  CommandResult apply(const Command& c) {
    try {
      if (c.type == "pause") {
        paused_ = true;
        return {true, {}};
      }
      if (c.type == "resume") {
        paused_ = false;
        return {true, {}};
      }
      if (c.type == "start-insertion") {
        if (stage_ != Stage::idle) return {false, "insertion already run"};
        start_insertion();
        return {true, {}};
      }
      if (c.type == "stop-insertion") {
        if (stage_ != Stage::insertion) return {false, "insertion not running"};
        finish_insertion(false, "operator stop");
        return {true, {}};
      }
      if (c.type == "set-mode") {
        mode_.kind = parse_actuation(c.text);
        if (stage_ == Stage::insertion) ap_->set_mode(mode_);
        if (tf_) tf_->set_mode(mode_);
        if (bap_) bap_->set_mode(mode_);
        return {true, {}};
      }
      if (c.type == "set-method") {
        if (stage_ == Stage::withdrawal) return {false, "withdrawal running"};
        method_ = parse_method(c.text);
        return {true, {}};
      }
      if (c.type == "select-goal") {
        if (session_.trajectory.empty()) return {false, "no trajectory"};
        if (stage_ == Stage::withdrawal) return {false, "withdrawal running"};
        double s;
        if (c.s) {
          s = *c.s;
        } else if (c.vector) {
          s = session_.trajectory.nearest_parameter(*c.vector);
        } else {
          return {false, "goal needs s or a position"};
        }
        if (!(s >= 0.0 && s <= 1.0)) return {false, "goal parameter outside [0, 1]"};
        plan_.push_back(goal_index(s, c.label));
        return {true, {}};
      }
      if (c.type == "clear-goals") {
        if (stage_ == Stage::withdrawal) return {false, "withdrawal running"};
        plan_.clear();
        return {true, {}};
      }
      if (c.type == "start-withdrawal") {
        if (session_.trajectory.empty()) return {false, "no trajectory"};
        if (stage_ != Stage::ready) return {false, "not ready for withdrawal"};
        if (plan_.empty()) return {false, "no goals"};
        start_withdrawal();
        return {true, {}};
      }
      if (c.type == "teleop") {
        if (stage_ != Stage::withdrawal || method_ != WithdrawalMethod::teleop) return {false, "not in tele-operation"};
        if (!c.vector || !finite(*c.vector)) return {false, "teleop needs a motion vector"};
        manual_command_ = *c.vector;
        manual_until_ = clock_ + cfg_.teleop.command_hold;
        return {true, {}};
      }
      return {false, "unknown command '" + c.type + "'"};
    } catch (const Error& e) {
      return {false, e.what()};
    }
  }

  int goal_index(double s, const std::string& label) {
    for (std::size_t i = 0; i < session_.goals.size(); ++i)
      if (session_.goals[i].s == s) return static_cast<int>(i);
    session_.goals.push_back(make_goal(session_.trajectory, s, label.empty() ? "g" + std::to_string(session_.goals.size()) : label));
    return static_cast<int>(session_.goals.size()) - 1;
  }

  // ---- stages -------------------------------------------------------------------

  void enter_stage(Stage s, const std::string& label) {
    stage_ = s;
    phase_label_ = label;
    event("phase", label);
  }

  void event(const std::string& type, const std::string& detail, int goal = -1) {
    Event e;
    e.t = clock_;
    e.type = type;
    e.detail = detail;
    e.goal = goal;
    e.true_position = truth_.capsule.position;
    e.est_position = estimate_.position;
    session_.events.push_back(e);
  }

  void start_insertion() {
    APConfig ap = cfg_.ap;
    ap.mode = mode_;
    // the actuator starts aligned with the tube entrance
    ap_.emplace(ap, actuator_.axis);
    insertion_history_.clear();
    stall_window_.clear();
    Phase p;
    p.name = "insertion";
    p.method = "ap";
    p.actuation = to_string(mode_.kind);
    p.start = clock_;
    session_.phases.push_back(p);
    enter_stage(Stage::insertion, "insertion");
  }

  void finish_insertion(bool success, const std::string& why) {
    Phase& p = session_.phases.back();
    p.end = clock_;
    p.completed = true;
    p.success = success;
    log_state();
    event(success ? "end" : "abort", why);
    // trajectory from the estimated history, partial or complete
    try {
      session_.trajectory = build_trajectory(insertion_history_, traj_rng_, cfg_.trajectory);
      event("trajectory", "length " + format_double(session_.trajectory.length()));
      std::vector<Vec3> pts;
      for (const auto& h : insertion_history_) pts.push_back(h.p);
      history_index_ = HistoryIndex(pts, 0.001);
    } catch (const Error& e) {
      event("trajectory", std::string("failed: ") + e.what());
    }
    ap_.reset();
    park();
    enter_stage(Stage::ready, "ready");
  }

  void start_withdrawal() {
    Phase p;
    p.name = "withdrawal";
    p.method = to_string(method_);
    p.actuation = to_string(mode_.kind);
    p.start = clock_;
    p.goals = plan_;
    session_.phases.push_back(p);
    goal_cursor_ = 0;
    if (method_ == WithdrawalMethod::tf) {
      TFConfig tc = cfg_.tf;
      tc.mode = mode_;
      tf_.emplace(tc, session_.trajectory, cfg_.magnets);
    }
    enter_stage(Stage::withdrawal, "withdrawal:" + to_string(method_));
    begin_goal();
  }

  void begin_goal() {
    goal_start_ = clock_;
    control_tick_ = 0;
    within_since_.reset();
    const GoalPoint& g = session_.goals[plan_[goal_cursor_]];
    if (method_ == WithdrawalMethod::tf) {
      tf_->set_goal(g, actuator_.axis, clock_);
    } else if (method_ == WithdrawalMethod::backward_ap) {
      const double a_c = history_index_.coordinate(estimate_.position);
      const double a_g = history_index_.coordinate(g.position);
      bap_dir_ = a_g >= a_c ? 1.0 : -1.0;
      APConfig ap = cfg_.ap;
      ap.mode = mode_;
      bap_.emplace(ap, bap_dir_ * history_index_.direction_at(a_c, kHistoryWindow));
    } else {
      operator_bias_ = cfg_.teleop.visual_sigma * operator_rng_.normal();
      operator_next_obs_ = clock_;
      operator_command_ = Vec3::Zero();
      operator_apply_at_ = -1.0;
      operator_until_ = -1.0;
      manual_until_ = -1.0;
    }
  }

  void finish_goal(bool reached, const std::string& why) {
    const int gi = plan_[goal_cursor_];
    log_state();
    event(reached ? "arrival" : "goal-failed", why, gi);
    ++goal_cursor_;
    if (goal_cursor_ < plan_.size()) {
      begin_goal();
      return;
    }
    Phase& p = session_.phases.back();
    p.end = clock_;
    p.completed = true;
    bool all = true;
    for (const auto& e : session_.events)
      if (e.t >= p.start && e.type == "goal-failed") all = false;
    p.success = all;
    tf_.reset();
    bap_.reset();
    park();
    plan_.clear();
    enter_stage(Stage::ready, "ready");
  }

  // Actuator straight above the capsule estimate, not rotating.
  void park() {
    parked_ = true;
    actuator_.position = estimate_.position + Vec3(0.0, 0.0, cfg_.ap.hover_offset.z());
    actuator_.moment = moment_at_angle(actuator_.axis, 0.0);
  }

  const ActuationMode& active_mode() const { return parked_ ? hold_mode_ : mode_; }

  // ---- per-tick work ------------------------------------------------------------

  void sense_and_localize() {
    const Dipole act{actuator_.position, cfg_.magnets.actuator * actuator_.moment};
    const Dipole cap{truth_.capsule.position, cfg_.magnets.capsule * truth_.capsule.moment};
    SensorFrame frame =
        simulate_frame({act, cap}, cfg_.array, cfg_.sensing.noise_sigma, cfg_.sensing.ambient, noise_rng_, clock_);
    frame = subtract_background(frame, background_);
    try {
      estimate_ = tracker_.track_step(frame, act);
    } catch (const Error&) {
      ++loc_failures_;
    }
  }

  void control() {
    switch (stage_) {
      case Stage::idle:
      case Stage::ready: return;
      case Stage::insertion: control_insertion(); return;
      case Stage::withdrawal:
        if (method_ == WithdrawalMethod::tf) control_tf();
        if (method_ == WithdrawalMethod::backward_ap) control_bap();
        if (method_ == WithdrawalMethod::teleop) control_teleop();
        return;
    }
  }

  void control_insertion() {
    parked_ = false;
    try {
      actuator_ = ap_->step(estimate_, clock_);
    } catch (const WorkspaceLimit&) {
      actuator_.moment = schedule_moment(mode_, actuator_.axis, clock_);
    }
  }

  void control_tf() {
    parked_ = false;
    const int every = std::max(1, static_cast<int>(std::lround(cfg_.tf.dt / cfg_.sim_dt)));
    if (control_tick_++ % every == 0) {
      try {
        const TFOutput out = tf_->step(estimate_, clock_);
        actuator_ = out.pose;
        last_force_ = out.force;
        tf_arrived_ = out.arrived;
        tf_stalled_ = out.stalled;
      } catch (const UnreachableForce& e) {
        tf_error_ = e.what();
      } catch (const WorkspaceLimit& e) {
        tf_error_ = e.what();
      }
    }
    actuator_.moment = schedule_moment(mode_, actuator_.axis, clock_);
  }

  void control_bap() {
    const GoalPoint& g = session_.goals[plan_[goal_cursor_]];
    if ((estimate_.position - g.position).norm() < cfg_.backward_ap.goal_tolerance) {
      bap_arrived_ = true;
      return;
    }
    parked_ = false;
    const double a = history_index_.coordinate(estimate_.position);
    const double a_g = history_index_.coordinate(g.position);
    if ((a - a_g) * bap_dir_ > cfg_.backward_ap.reverse_margin) {
      bap_dir_ = -bap_dir_;
      bap_->reverse();
    }
    bap_->set_forward(bap_dir_ * history_index_.direction_at(a, kHistoryWindow));
    try {
      actuator_ = bap_->step(estimate_, clock_);
    } catch (const WorkspaceLimit&) {
      actuator_.moment = schedule_moment(mode_, actuator_.axis, clock_);
    }
  }

  // Operator reading of the display: the estimate shifted along the trajectory
  // by a per-approach bias.
  double perceived_parameter() const {
    const Trajectory& tr = session_.trajectory;
    const double s = tr.nearest_parameter(estimate_.position);
    return std::clamp(s + operator_bias_ / tr.length(), 0.0, 1.0);
  }

  void control_teleop() {
    parked_ = false;
    const Trajectory& tr = session_.trajectory;
    const GoalPoint& g = session_.goals[plan_[goal_cursor_]];
    Vec3 command = Vec3::Zero();
    if (scripted_operator_) {
      if (clock_ >= operator_next_obs_ - 1e-9) {
        // look at the display, decide, act after the latency, hold the command
        const double s = perceived_parameter();
        const double gap = (g.s - s) * tr.length();
        operator_command_ = Vec3::Zero();
        if (std::abs(gap) >= cfg_.teleop.goal_tolerance) {
          operator_command_ = (gap > 0 ? 1.0 : -1.0) * tr.tangent(s);
          within_since_.reset();
        } else if (!within_since_) {
          within_since_ = clock_;
        } else if (clock_ - *within_since_ >= cfg_.teleop.hold_time - 1e-9) {
          operator_done_ = true;
        }
        operator_apply_at_ = clock_ + cfg_.teleop.latency;
        operator_until_ = operator_apply_at_ + cfg_.teleop.command_hold;
        operator_next_obs_ = operator_until_;
      }
      if (clock_ >= operator_apply_at_ - 1e-9 && clock_ < operator_until_ - 1e-9) command = operator_command_;
    } else if (clock_ < manual_until_) {
      command = manual_command_;
    }
    if (command.norm() > 0.0) actuator_.axis = rotate_toward(actuator_.axis, unit(command), cfg_.ap.heading_rate * cfg_.sim_dt);
    actuator_.position = estimate_.position + Vec3(0.0, 0.0, cfg_.ap.hover_offset.z()) + cfg_.teleop.gain * command;
    actuator_.moment = schedule_moment(mode_, actuator_.axis, clock_);
  }

  void after_tick() {
    if (stage_ == Stage::insertion) {
      if (ticks_ % log_every() == 0) insertion_history_.push_back({clock_, estimate_.position});
      if (truth_.arc_length >= env_.length() - cfg_.insertion.end_margin) {
        finish_insertion(true, "distal end reached");
        return;
      }
      stall_window_.push_back({clock_, estimate_.position});
      while (stall_window_.size() > 2 && stall_window_[1].t <= clock_ - cfg_.insertion.stall_window) stall_window_.pop_front();
      const double span = clock_ - stall_window_.front().t;
      if (span >= cfg_.insertion.stall_window - 1e-9 &&
          (estimate_.position - stall_window_.front().p).norm() < cfg_.insertion.stall_distance) {
        finish_insertion(false, "stall");
        return;
      }
      if (clock_ - session_.phases.back().start >= cfg_.insertion.timeout) finish_insertion(false, "timeout");
      return;
    }
    if (stage_ != Stage::withdrawal) return;
    const bool timed_out = clock_ - goal_start_ >= cfg_.withdrawal.goal_timeout;
    if (method_ == WithdrawalMethod::tf) {
      if (!tf_error_.empty()) {
        const std::string why = tf_error_;
        tf_error_.clear();
        finish_goal(false, why);
      } else if (tf_arrived_) {
        tf_arrived_ = false;
        tf_stalled_ = false;
        finish_goal(true, "within tolerance");
      } else if (tf_stalled_) {
        tf_stalled_ = false;
        event("stall", "no progress", plan_[goal_cursor_]);
        finish_goal(false, "stall");
      } else if (timed_out) {
        finish_goal(false, "timeout");
      }
      return;
    }
    if (method_ == WithdrawalMethod::backward_ap) {
      if (bap_arrived_) {
        bap_arrived_ = false;
        park();
        finish_goal(true, "within tolerance");
      } else if (timed_out) {
        finish_goal(false, "timeout");
      }
      return;
    }
    // tele-operation: the scripted operator declares arrival after two looks
    // inside the tolerance; manual driving uses the displayed distance
    if (scripted_operator_) {
      if (operator_done_) {
        operator_done_ = false;
        finish_goal(true, "within tolerance");
      } else if (timed_out) {
        finish_goal(false, "timeout");
      }
      return;
    }
    const GoalPoint& g = session_.goals[plan_[goal_cursor_]];
    const double s = session_.trajectory.nearest_parameter(estimate_.position);
    const bool within = std::abs(g.s - s) * session_.trajectory.length() < cfg_.teleop.goal_tolerance;
    if (within) {
      if (!within_since_) within_since_ = clock_;
      if (clock_ - *within_since_ >= cfg_.teleop.hold_time - 1e-9) {
        finish_goal(true, "within tolerance");
        return;
      }
    } else {
      within_since_.reset();
    }
    if (timed_out) finish_goal(false, "timeout");
  }

  int log_every() const { return std::max(1, static_cast<int>(std::lround(cfg_.log_interval / cfg_.sim_dt))); }

  void log_state() {
    StateSample s;
    s.t = clock_;
    s.phase = phase_label_;
    s.est_position = estimate_.position;
    s.est_velocity = estimate_.velocity;
    s.est_heading = estimate_.heading;
    s.heading_valid = estimate_.heading_valid;
    s.true_position = truth_.capsule.position;
    s.true_arc_length = truth_.arc_length;
    s.actuator_position = actuator_.position;
    s.actuator_axis = actuator_.axis;
    s.actuator_moment = actuator_.moment;
    s.force = stage_ == Stage::withdrawal && method_ == WithdrawalMethod::tf ? last_force_ : Vec3::Zero();
    if (!session_.states.empty() && session_.states.back().t == s.t) {
      session_.states.back() = s;
      return;
    }
    session_.states.push_back(s);
  }

  TubeEnvironment env_;
  RunConfig cfg_;
  Rng rng_;
  Rng noise_rng_;
  Rng dyn_rng_;
  Rng traj_rng_;
  Rng operator_rng_;
  Tracker tracker_;
  ActuationMode mode_;
  ActuationMode hold_mode_;
  NavigationSession session_;
  std::vector<Vec3> background_;

  SimState truth_;
  CapsuleState estimate_;
  ActuatorPose actuator_;
  Stage stage_ = Stage::idle;
  std::string phase_label_;
  bool paused_ = false;
  bool parked_ = true;
  long ticks_ = 0;
  double clock_ = 0.0;
  int loc_failures_ = 0;

  std::optional<APController> ap_;
  std::vector<TimedPosition> insertion_history_;
  std::deque<TimedPosition> stall_window_;
  HistoryIndex history_index_;

  WithdrawalMethod method_ = WithdrawalMethod::tf;
  std::vector<int> plan_;
  std::size_t goal_cursor_ = 0;
  double goal_start_ = 0.0;
  int control_tick_ = 0;
  std::optional<double> within_since_;

  std::optional<TFController> tf_;
  bool tf_arrived_ = false;
  bool tf_stalled_ = false;
  std::string tf_error_;
  Vec3 last_force_ = Vec3::Zero();

  std::optional<APController> bap_;
  double bap_dir_ = -1.0;
  bool bap_arrived_ = false;

  bool scripted_operator_ = true;
  double operator_bias_ = 0.0;
  bool operator_done_ = false;
  double operator_next_obs_ = 0.0;
  double operator_apply_at_ = -1.0;
  double operator_until_ = -1.0;
  Vec3 operator_command_ = Vec3::Zero();
  Vec3 manual_command_ = Vec3::Zero();
  double manual_until_ = -1.0;
};

}  // namespace capnav
