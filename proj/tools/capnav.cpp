#include "capnav/benchmark.hpp"
#include "capnav/experiments.hpp"
#include "capnav/service.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>

namespace {

using namespace capnav;

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

RunConfig config_or_default(const std::string& path) { return path.empty() ? default_config() : load_config(path); }

std::string fmt(double v, int digits = 3) { return detail::fmt(v, digits); }

// ---- simulate ------------------------------------------------------------------

struct SimulateArgs {
  std::string env;
  std::string mode;
  std::string config;
  std::uint64_t seed = 1;
  std::string method = "tf";
  std::vector<double> goals;
  std::string out = "session.json";
  bool insertion_only = false;
};

int run_simulate(const SimulateArgs& a) {
  RunConfig cfg = config_or_default(a.config);
  if (!a.mode.empty()) {
    cfg.insertion.mode.kind = parse_actuation(a.mode);
    cfg.withdrawal.mode.kind = cfg.insertion.mode.kind;
  }
  const std::vector<double> goals = a.goals.empty() ? cfg.withdrawal.goals : a.goals;
  const WithdrawalMethod method = parse_method(a.method);
  Navigator nav(load_environment(a.env), cfg, a.seed);
  const bool inserted = nav.run_insertion();
  if (!inserted) std::cerr << "insertion did not reach the end\n";
  if (!a.insertion_only) {
    if (nav.session().trajectory.empty())
      std::cerr << "no trajectory; withdrawal skipped\n";
    else
      nav.run_withdrawal(method, goals);
  }
  save_session(nav.session(), a.out);
  std::cout << format_metrics_table(nav.metrics());
  return 0;
}

// ---- bench-localize --------------------------------------------------------------

struct BenchArgs {
  std::string config;
  std::string frames;
  std::string truth;
  std::string record_frames;
  std::string record_truth;
  int subarray = 4;
  int poses = 200;
  int record_count = 200;
  double noise = -1.0;  // uT; negative keeps the configured value
  double height = 0.10;
  std::uint64_t seed = 1;
};

void print_steps(const std::vector<StepError>& steps) {
  std::cout << "t_s\tconverged\tposition_error_mm\tmoment_error_deg\tresidual_uT\tactive_sensors\n";
  std::vector<double> pe;
  int fails = 0;
  for (const auto& e : steps) {
    std::cout << fmt(e.t) << '\t' << (e.converged ? "yes" : "no") << '\t'
              << (e.converged ? fmt(1e3 * e.position_error, 4) : "-") << '\t'
              << (e.converged ? fmt(e.moment_error * 180.0 / kPi, 4) : "-") << '\t'
              << (e.converged ? fmt(1e6 * e.residual_rms, 4) : "-") << '\t' << e.active_sensors << '\n';
    if (e.converged)
      pe.push_back(e.position_error);
    else
      ++fails;
  }
  double ss = 0.0;
  for (double x : pe) ss += x * x;
  std::cout << "# steps " << steps.size() << " failures " << fails << " position_rmse_mm "
            << fmt(pe.empty() ? 0.0 : 1e3 * std::sqrt(ss / pe.size()), 4) << '\n';
}

int run_bench(const BenchArgs& a) {
  RunConfig cfg = config_or_default(a.config);
  SolverOptions solver = cfg.solver;
  solver.noise_sigma = a.noise >= 0.0 ? a.noise * 1e-6 : cfg.sensing.noise_sigma;

  if (!a.record_frames.empty() || !a.record_truth.empty()) {
    if (a.record_frames.empty() || a.record_truth.empty())
      throw CLI::ValidationError("--record-frames and --record-truth go together");
    RecordingOptions ro;
    ro.frames = a.record_count;
    ro.noise_sigma = solver.noise_sigma;
    ro.height = a.height;
    ro.seed = a.seed;
    const Recording rec = synthetic_recording(cfg.array, ro, solver.moment_magnitude);
    std::ofstream f(a.record_frames), t(a.record_truth);
    if (!f || !t) throw MissingData("cannot open recording outputs");
    for (const auto& fr : rec.frames) write_frame_records(f, fr);
    write_truth_records(t, rec.truth);
    std::cerr << "wrote " << rec.frames.size() << " frames\n";
    return 0;
  }

  if (!a.frames.empty() || !a.truth.empty()) {
    if (a.frames.empty() || a.truth.empty()) throw CLI::ValidationError("--frames and --truth go together");
    std::ifstream f(a.frames), t(a.truth);
    if (!f) throw MissingData("cannot open " + a.frames);
    if (!t) throw MissingData("cannot open " + a.truth);
    print_steps(replay_localization(read_frame_records(f, cfg.array), read_truth_records(t), cfg.array, a.subarray, solver));
    return 0;
  }

  LocalizationBenchOptions o;
  o.poses = a.poses;
  o.noise_sigma = solver.noise_sigma;
  o.height = a.height;
  o.subarray = a.subarray;
  o.seed = a.seed;
  const auto r = localization_benchmark(cfg.array, o, solver);
  std::cout << "pose\tposition_error_mm\tmoment_error_deg\n";
  for (std::size_t i = 0; i < r.position_errors.size(); ++i)
    std::cout << i << '\t' << fmt(1e3 * r.position_errors[i], 4) << '\t' << fmt(r.moment_errors[i] * 180.0 / kPi, 4) << '\n';
  std::cout << "# poses " << o.poses << " failures " << r.failures << " position_rmse_mm " << fmt(1e3 * r.position_rmse, 4)
            << " moment_rmse_deg " << fmt(r.moment_rmse * 180.0 / kPi, 4) << " seconds " << fmt(r.seconds) << '\n';
  return 0;
}

// ---- navigate ------------------------------------------------------------------

struct NavigateArgs {
  std::string env;
  std::string config;
  std::uint64_t seed = 1;
  std::string host = "127.0.0.1";
  int port = 8080;
  double speed = 1.0;
  double rate = 20.0;
  double duration = 0.0;
  bool manual = false;
  std::string out;
};

int run_navigate(const NavigateArgs& a) {
  Navigator nav(load_environment(a.env), config_or_default(a.config), a.seed);
  nav.set_scripted_operator(!a.manual);
  RunnerOptions ro;
  ro.speed = a.speed;
  SessionRunner runner(std::move(nav), ro);
  TelemetryServer server(runner, a.rate);
  runner.start();
  const int port = server.start(a.host, a.port);
  std::cerr << "listening on http://" << a.host << ':' << port << " (GET /snapshot, GET /telemetry, POST /command)\n";
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  const auto t0 = std::chrono::steady_clock::now();
  while (!g_interrupted) {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    if (a.duration > 0.0 && std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() >= a.duration) break;
  }
  server.stop();
  runner.stop();
  if (!a.out.empty()) {
    save_session(runner.navigator().session(), a.out);
    std::cerr << "session written to " << a.out << '\n';
  }
  return 0;
}

// ---- replay --------------------------------------------------------------------

int run_replay(const std::string& path, bool events, bool json) {
  const NavigationSession s = load_session(path);
  const Metrics m = compute_metrics(s);
  if (json) {
    std::cout << to_json(m).dump(1) << '\n';
    return 0;
  }
  std::cout << "# environment " << s.environment << " seed " << s.seed << " states " << s.states.size() << " events "
            << s.events.size() << " goals " << s.goals.size() << '\n';
  if (events) {
    std::cout << "t_s\tevent\tgoal\tdetail\n";
    for (const auto& e : s.events) std::cout << fmt(e.t, 2) << '\t' << e.type << '\t' << e.goal << '\t' << e.detail << '\n';
    std::cout << '\n';
  }
  std::cout << format_metrics_table(m);
  return 0;
}

// ---- report --------------------------------------------------------------------

struct ReportArgs {
  std::string table = "all";
  int seeds = 5;
  std::string config;
  std::vector<std::string> envs;
  bool quiet = false;
};

int run_report(const ReportArgs& a) {
  const RunConfig cfg = config_or_default(a.config);
  const auto seeds = seed_range(a.seeds);
  Progress progress;
  if (!a.quiet) progress = [](const std::string& s) { std::cerr << "  " << s << '\n'; };
  auto envs_or = [&](std::vector<std::string> dflt) { return a.envs.empty() ? dflt : a.envs; };
  const bool all = a.table == "all";
  if (all || a.table == "1") {
    std::cout << "# table 1: insertion by actuation mode\n"
              << format_insertion_table(insertion_table(envs_or({"pvc-straight", "colon-ap"}), seeds, cfg, progress));
  }
  if (all || a.table == "2") {
    if (all) std::cout << '\n';
    std::cout << "# table 2: trajectory following by actuation mode\n"
              << format_following_table(following_table(envs_or({"pvc-straight", "colon-ap"}), seeds, cfg, {}, progress));
  }
  if (all || a.table == "3") {
    if (all) std::cout << '\n';
    std::cout << "# table 3: withdrawal method comparison\n"
              << format_comparison_table(
                     comparison_table(envs_or({"tube1", "tube2", "tube3", "tube4", "colon"}), seeds, cfg, progress));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulated magnetic capsule navigation: localization, propulsion, trajectory following"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Run insertion and withdrawal, write a session file, print metrics");
  s->add_option("--env", sim.env, "Environment preset or YAML file")->required();
  s->add_option("--mode", sim.mode, "Actuation mode for both phases: DMA, CRMA, RRMA");
  s->add_option("--config", sim.config, "Run configuration YAML");
  s->add_option("--seed", sim.seed, "Random seed")->capture_default_str();
  s->add_option("--method", sim.method, "Withdrawal method: tf, backward-ap, tele-operation")->capture_default_str();
  s->add_option("--goals", sim.goals, "Goal parameters in visiting order (default from config)");
  s->add_option("--out", sim.out, "Session file")->capture_default_str();
  s->add_flag("--insertion-only", sim.insertion_only, "Stop after insertion");

  BenchArgs bench;
  auto* b = app.add_subcommand("bench-localize", "Localization error over random poses or a recorded frame file");
  b->add_option("--config", bench.config, "Run configuration YAML");
  b->add_option("--frames", bench.frames, "Recorded frames (t,idx,bx,by,bz per line)");
  b->add_option("--truth", bench.truth, "Ground truth (t,x,y,z,mx,my,mz per line)");
  b->add_option("--record-frames", bench.record_frames, "Write a synthetic recording's frames here");
  b->add_option("--record-truth", bench.record_truth, "Write a synthetic recording's truth here");
  b->add_option("--record-count", bench.record_count, "Frames in the synthetic recording")->capture_default_str();
  b->add_option("--subarray", bench.subarray, "Sub-array size, 0 for the full array")->capture_default_str();
  b->add_option("--poses", bench.poses, "Random poses")->capture_default_str();
  b->add_option("--noise", bench.noise, "Noise sigma in uT (default from config)");
  b->add_option("--height", bench.height, "Capsule height above the array in m")->capture_default_str();
  b->add_option("--seed", bench.seed, "Random seed")->capture_default_str();

  NavigateArgs navi;
  auto* n = app.add_subcommand("navigate", "Interactive session behind an HTTP command and telemetry endpoint");
  n->add_option("--env", navi.env, "Environment preset or YAML file")->required();
  n->add_option("--config", navi.config, "Run configuration YAML");
  n->add_option("--seed", navi.seed, "Random seed")->capture_default_str();
  n->add_option("--host", navi.host, "Bind address")->capture_default_str();
  n->add_option("--port", navi.port, "Port, 0 picks a free one")->capture_default_str();
  n->add_option("--speed", navi.speed, "Simulated seconds per wall second, 0 unthrottled")->capture_default_str();
  n->add_option("--rate", navi.rate, "Telemetry rate in Hz")->capture_default_str();
  n->add_option("--duration", navi.duration, "Wall seconds before shutting down, 0 runs until interrupted")
      ->capture_default_str();
  n->add_flag("--manual", navi.manual, "Tele-operation takes motion commands instead of the scripted operator");
  n->add_option("--out", navi.out, "Write the session here on shutdown");

  std::string replay_path;
  bool replay_events = false, replay_json = false;
  auto* r = app.add_subcommand("replay", "Print events and recomputed metrics from a session file");
  r->add_option("session", replay_path, "Session file")->required();
  r->add_flag("--events", replay_events, "List the event log");
  r->add_flag("--json", replay_json, "Print metrics as JSON");

  ReportArgs rep;
  auto* t = app.add_subcommand("report", "Regenerate the insertion, following and withdrawal tables");
  t->add_option("--table", rep.table, "1, 2, 3 or all")->check(CLI::IsMember({"1", "2", "3", "all"}))->capture_default_str();
  t->add_option("--seeds", rep.seeds, "Seeds per cell")->check(CLI::PositiveNumber)->capture_default_str();
  t->add_option("--config", rep.config, "Run configuration YAML");
  t->add_option("--env", rep.envs, "Override the environments of the selected table");
  t->add_flag("--quiet", rep.quiet, "No progress on stderr");

  std::string dump_config, dump_env;
  auto* c = app.add_subcommand("config", "Print the effective run configuration or an environment as YAML");
  c->add_option("--config", dump_config, "Run configuration YAML to load first");
  c->add_option("--env", dump_env, "Print this environment instead");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*s) return run_simulate(sim);
    if (*b) return run_bench(bench);
    if (*n) return run_navigate(navi);
    if (*r) return run_replay(replay_path, replay_events, replay_json);
    if (*t) return run_report(rep);
    if (*c) {
      std::cout << (dump_env.empty() ? config_to_yaml(config_or_default(dump_config))
                                     : environment_to_yaml(load_environment(dump_env)));
      return 0;
    }
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
