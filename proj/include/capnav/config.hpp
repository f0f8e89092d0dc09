#pragma once

#include "capnav/following.hpp"

#include <functional>
#include <set>
#include <string>
#include <vector>

namespace capnav {

struct SensingConfig {
  double noise_sigma = 0.5e-6;                  // T per axis
  Vec3 ambient = Vec3(2.0e-5, 0.0, -4.5e-5);    // T, uniform background field
  int calibration_frames = 50;
};

struct InsertionConfig {
  ActuationMode mode;
  double start_arc_length = 0.01;  // m
  double end_margin = 0.01;        // m short of the distal end that counts as complete
  double stall_window = 10.0;      // s
  double stall_distance = 0.0025;  // m of estimated displacement required per window
  double timeout = 1500.0;         // s
};

struct BackwardAPConfig {
  double goal_tolerance = 0.002;  // m
  double reverse_margin = 0.003;  // m beyond the closest approach that triggers a reversal
};

struct TeleopConfig {
  double latency = 0.5;        // s from observation to command
  double command_hold = 1.0;   // s each command is held
  double gain = 0.0125;        // m of actuator offset per unit command
  double visual_sigma = 0.008; // m, bias of the operator's reading of position along the display
  double goal_tolerance = 0.002;
  double hold_time = 1.0;
};

struct WithdrawalConfig {
  ActuationMode mode;
  double goal_timeout = 600.0;  // s per goal
  std::vector<double> goals{0.6, 0.2, 0.6};
};

struct RunConfig {
  ArrayConfig array;
  SensingConfig sensing;
  MagnetPair magnets;
  SolverOptions solver;
  TrackerOptions tracker;
  DynamicsOptions dynamics;
  double sim_dt = 0.01;       // s
  double log_interval = 0.1;  // s
  APConfig ap;
  InsertionConfig insertion;
  TrajectoryOptions trajectory;
  TFConfig tf;
  BackwardAPConfig backward_ap;
  TeleopConfig teleop;
  WithdrawalConfig withdrawal;

  void validate() const {
    array.validate();
    ap.validate();
    tf.validate();
    insertion.mode.validate();
    withdrawal.mode.validate();
    if (!(sim_dt > 0.0 && sim_dt <= 0.05)) throw DegenerateInput("sim_dt must lie in (0, 0.05] s");
    if (!(log_interval >= sim_dt)) throw DegenerateInput("log_interval must be at least sim_dt");
    if (!(sensing.noise_sigma >= 0.0)) throw DegenerateInput("noise sigma must be non-negative");
    if (sensing.calibration_frames < 1) throw DegenerateInput("calibration needs at least one frame");
    if (!(teleop.latency >= 0.0 && teleop.command_hold > 0.0)) throw DegenerateInput("tele-op timing is invalid");
    for (double g : withdrawal.goals)
      if (!(g >= 0.0 && g <= 1.0)) throw DegenerateInput("goal parameters must lie in [0, 1]");
  }
};

namespace detail {

// One field list serves both directions: a reader fills fields from YAML and
// flags unknown keys, a writer emits every field.
class ConfigReader {
 public:
  explicit ConfigReader(YAML::Node node, std::string where) : node_(std::move(node)), where_(std::move(where)) {}

  template <typename T>
  void field(const char* key, T& value) {
    seen_.insert(key);
    const YAML::Node n = child(key);
    if (!n) return;
    read(n, key, value);
  }

  void mode(const char* key, ActuationKind& value) {
    seen_.insert(key);
    const YAML::Node n = child(key);
    if (!n) return;
    try {
      value = parse_actuation(yaml::as<std::string>(n, key));
    } catch (const InvalidCommand& e) {
      throw ParseError(e.what(), yaml::line_of(n));
    }
  }

  void section(const char* key, const std::function<void(ConfigReader&)>& body) {
    seen_.insert(key);
    const YAML::Node n = child(key);
    if (n && !n.IsMap()) throw ParseError(std::string("'") + key + "' must be a mapping", yaml::line_of(n));
    ConfigReader sub(n, where_ + "." + key);
    body(sub);
    sub.finish();
  }

  // const lookup so a missing key neither inserts nor reads as null
  YAML::Node child(const char* key) const {
    if (!node_ || !node_.IsMap()) return YAML::Node(YAML::NodeType::Undefined);
    const YAML::Node& map = node_;
    return map[key];
  }

  void finish() const {
    if (!node_) return;
    if (!node_.IsMap()) throw ParseError("'" + where_ + "' must be a mapping", yaml::line_of(node_));
    for (const auto& kv : node_) {
      const auto k = kv.first.as<std::string>();
      if (!seen_.count(k)) throw ParseError("unknown key '" + k + "' in " + where_, yaml::line_of(kv.first));
    }
  }

 private:
  static void read(const YAML::Node& n, const char* key, double& v) { v = yaml::as<double>(n, key); }
  static void read(const YAML::Node& n, const char* key, int& v) { v = yaml::as<int>(n, key); }
  static void read(const YAML::Node& n, const char* key, Vec3& v) { v = yaml::to_vec3(n, key); }
  static void read(const YAML::Node& n, const char* key, std::vector<double>& v) {
    if (!n.IsSequence()) throw ParseError(std::string("'") + key + "' must be a list", yaml::line_of(n));
    v.clear();
    for (const auto& e : n) v.push_back(yaml::as<double>(e, key));
  }

  YAML::Node node_;
  std::string where_;
  std::set<std::string> seen_;
};

class ConfigWriter {
 public:
  explicit ConfigWriter(YAML::Emitter& out) : out_(out) {}

  void field(const char* key, const double& v) {
    out_ << YAML::Key << key << YAML::Value;
    yaml::emit(out_, v);
  }
  void field(const char* key, const int& v) { out_ << YAML::Key << key << YAML::Value << v; }
  void field(const char* key, const Vec3& v) {
    out_ << YAML::Key << key << YAML::Value;
    yaml::emit(out_, v);
  }
  void field(const char* key, const std::vector<double>& v) {
    out_ << YAML::Key << key << YAML::Value;
    yaml::emit_list(out_, v);
  }
  void mode(const char* key, const ActuationKind& v) { out_ << YAML::Key << key << YAML::Value << to_string(v); }

  void section(const char* key, const std::function<void(ConfigWriter&)>& body) {
    out_ << YAML::Key << key << YAML::Value << YAML::BeginMap;
    body(*this);
    out_ << YAML::EndMap;
  }

 private:
  YAML::Emitter& out_;
};

template <typename V, typename C>
void visit_mode(V& v, C& m) {
  v.mode("kind", m.kind);
  v.field("rotation_speed", m.rotation_speed);
  v.field("rrma_amplitude", m.rrma_amplitude);
}

template <typename V, typename C>
void visit_config(V& v, C& c) {
  using S = V;
  v.section("array", [&](S& s) {
    s.field("rows", c.array.rows);
    s.field("cols", c.array.cols);
    s.field("spacing", c.array.spacing);
    s.field("origin", c.array.origin);
    s.field("sample_rate", c.array.sample_rate);
  });
  v.section("sensing", [&](S& s) {
    s.field("noise_sigma", c.sensing.noise_sigma);
    s.field("ambient", c.sensing.ambient);
    s.field("calibration_frames", c.sensing.calibration_frames);
  });
  v.section("magnets", [&](S& s) {
    s.field("actuator_moment", c.magnets.actuator);
    s.field("capsule_moment", c.magnets.capsule);
  });
  v.section("solver", [&](S& s) {
    s.field("moment_magnitude", c.solver.moment_magnitude);
    s.field("sigma_factor", c.solver.sigma_factor);
    s.field("residual_floor", c.solver.residual_floor);
    s.field("max_iterations", c.solver.max_iterations);
    s.field("initial_damping", c.solver.initial_damping);
    s.field("init_heights", c.solver.init_heights);
    s.field("min_height", c.solver.min_height);
    s.field("max_height", c.solver.max_height);
    s.field("footprint_margin", c.solver.footprint_margin);
  });
  v.section("tracker", [&](S& s) {
    s.field("subarray", c.tracker.subarray);
    s.field("nvf_window", c.tracker.nvf_window);
    s.field("nvf_min_step", c.tracker.nvf_min_step);
    s.field("nvf_min_span", c.tracker.nvf_min_span);
    s.field("nvf_min_samples", c.tracker.nvf_min_samples);
    s.field("velocity_window", c.tracker.velocity_window);
  });
  v.section("dynamics", [&](S& s) {
    s.field("dt", c.sim_dt);
    s.field("log_interval", c.log_interval);
    s.field("stick_speed", c.dynamics.stick_speed);
    s.field("roll_time_constant", c.dynamics.roll_time_constant);
    s.field("spin_threshold", c.dynamics.spin_threshold);
  });
  v.section("ap", [&](S& s) {
    s.field("v_min", c.ap.v_min);
    s.field("hysteresis", c.ap.hysteresis);
    s.field("min_dwell", c.ap.min_dwell);
    s.field("sweep_amplitude", c.ap.sweep_amplitude);
    s.field("sweep_period", c.ap.sweep_period);
    s.field("hover_offset", c.ap.hover_offset);
    s.field("heading_rate", c.ap.heading_rate);
    s.field("max_velocity_deviation", c.ap.max_velocity_deviation);
    s.field("workspace_min", c.ap.workspace.min);
    s.field("workspace_max", c.ap.workspace.max);
    s.field("actuator_radius", c.ap.actuator_radius);
    s.field("depth_margin", c.ap.depth_margin);
  });
  v.section("insertion", [&](S& s) {
    s.section("actuation", [&](S& m) { visit_mode(m, c.insertion.mode); });
    s.field("start_arc_length", c.insertion.start_arc_length);
    s.field("end_margin", c.insertion.end_margin);
    s.field("stall_window", c.insertion.stall_window);
    s.field("stall_distance", c.insertion.stall_distance);
    s.field("timeout", c.insertion.timeout);
  });
  v.section("trajectory", [&](S& s) {
    s.field("spacing", c.trajectory.spacing);
    s.field("ordering_tolerance", c.trajectory.ordering_tolerance);
    s.field("eigen_floor", c.trajectory.gmm.eigen_floor);
    s.field("em_tolerance", c.trajectory.gmm.tolerance);
    s.field("em_max_iterations", c.trajectory.gmm.max_iterations);
  });
  v.section("tf", [&](S& s) {
    s.field("v_ref", c.tf.v_ref);
    s.field("horizon", c.tf.horizon);
    s.field("dt", c.tf.dt);
    s.field("w_position", c.tf.mpc.weights.position);
    s.field("w_velocity", c.tf.mpc.weights.velocity);
    s.field("w_force", c.tf.mpc.weights.force);
    s.field("scenarios", c.tf.mpc.scenarios);
    s.field("f_max", c.tf.mpc.f_max);
    s.field("model_mass", c.tf.mpc.plant.mass);
    s.field("model_drag", c.tf.mpc.plant.drag);
    s.field("model_friction", c.tf.mpc.plant.friction);
    s.field("max_iterations", c.tf.mpc.max_iterations);
    s.field("tolerance", c.tf.mpc.tolerance);
    s.field("neutral_distance", c.tf.force_map.neutral_distance);
    s.field("min_distance", c.tf.force_map.min_distance);
    s.field("max_distance", c.tf.force_map.max_distance);
    s.field("phases", c.tf.force_map.phases);
    s.field("bisection_iterations", c.tf.force_map.bisection_iterations);
    s.field("direction_iterations", c.tf.force_map.direction_iterations);
    s.field("direction_tolerance", c.tf.force_map.direction_tolerance);
    s.field("goal_tolerance", c.tf.goal_tolerance);
    s.field("hold_time", c.tf.hold_time);
    s.field("stall_timeout", c.tf.stall_timeout);
    s.field("stall_progress", c.tf.stall_progress);
    s.field("heading_rate", c.tf.heading_rate);
    s.field("search_window", c.tf.search_window);
  });
  v.section("backward_ap", [&](S& s) {
    s.field("goal_tolerance", c.backward_ap.goal_tolerance);
    s.field("reverse_margin", c.backward_ap.reverse_margin);
  });
  v.section("teleop", [&](S& s) {
    s.field("latency", c.teleop.latency);
    s.field("command_hold", c.teleop.command_hold);
    s.field("gain", c.teleop.gain);
    s.field("visual_sigma", c.teleop.visual_sigma);
    s.field("goal_tolerance", c.teleop.goal_tolerance);
    s.field("hold_time", c.teleop.hold_time);
  });
  v.section("withdrawal", [&](S& s) {
    s.section("actuation", [&](S& m) { visit_mode(m, c.withdrawal.mode); });
    s.field("goal_timeout", c.withdrawal.goal_timeout);
    s.field("goals", c.withdrawal.goals);
  });
}

}  // namespace detail

// Values the rest of the stack derives from the configuration.
inline void sync_config(RunConfig& c) {
  c.solver.noise_sigma = c.sensing.noise_sigma;
  c.tf.workspace = c.ap.workspace;
  c.tf.mode = c.withdrawal.mode;
  c.ap.mode = c.insertion.mode;
}

inline RunConfig default_config() {
  RunConfig c;
  c.withdrawal.mode.kind = ActuationKind::RRMA;
  c.insertion.mode.kind = ActuationKind::RRMA;
  sync_config(c);
  return c;
}

inline RunConfig config_from_yaml(const YAML::Node& root) {
  RunConfig c = default_config();
  if (!root || root.IsNull()) return c;
  detail::ConfigReader r(root, "config");
  detail::visit_config(r, c);
  r.finish();
  sync_config(c);
  try {
    c.validate();
  } catch (const DegenerateInput& e) {
    throw ParseError(e.what(), 0);
  }
  return c;
}

inline RunConfig load_config_text(const std::string& text) { return config_from_yaml(yaml::load_text(text)); }
inline RunConfig load_config(const std::string& path) { return config_from_yaml(yaml::load_file(path)); }

inline std::string config_to_yaml(const RunConfig& c) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  detail::ConfigWriter w(out);
  detail::visit_config(w, c);
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace capnav
