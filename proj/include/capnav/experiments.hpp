#pragma once

#include "capnav/navigator.hpp"

#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

namespace capnav {

using Progress = std::function<void(const std::string&)>;

inline double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double stddev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

inline std::vector<std::uint64_t> seed_range(int n) {
  std::vector<std::uint64_t> s;
  for (int i = 1; i <= n; ++i) s.push_back(static_cast<std::uint64_t>(i));
  return s;
}

// ---- insertion by actuation mode ------------------------------------------------

struct InsertionTrial {
  std::string environment;
  ActuationKind mode = ActuationKind::RRMA;
  std::uint64_t seed = 0;
  bool success = false;
  double average_speed = 0.0;  // mm/s
  double elapsed = 0.0;        // s
  std::string end_reason;
};

struct InsertionRow {
  std::string environment;
  ActuationKind mode = ActuationKind::RRMA;
  std::vector<InsertionTrial> trials;

  int successes() const {
    int n = 0;
    for (const auto& t : trials) n += t.success ? 1 : 0;
    return n;
  }
  double mean_speed() const {
    std::vector<double> v;
    for (const auto& t : trials) v.push_back(t.average_speed);
    return mean_of(v);
  }
};

inline InsertionTrial run_insertion_trial(const std::string& env, ActuationKind mode, std::uint64_t seed, RunConfig cfg) {
  cfg.insertion.mode.kind = mode;
  Navigator nav(load_environment(env), cfg, seed);
  InsertionTrial t;
  t.environment = env;
  t.mode = mode;
  t.seed = seed;
  t.success = nav.run_insertion();
  const Phase& ph = nav.session().phases.back();
  const PhaseMetrics m = phase_metrics(nav.session(), ph);
  t.average_speed = m.average_speed;
  t.elapsed = m.elapsed;
  for (const auto& e : nav.session().events)
    if (e.type == "end" || e.type == "abort") t.end_reason = e.detail;
  return t;
}

inline const std::vector<ActuationKind>& all_modes() {
  static const std::vector<ActuationKind> m{ActuationKind::DMA, ActuationKind::CRMA, ActuationKind::RRMA};
  return m;
}

// Insertion success and speed per environment and mode.
inline std::vector<InsertionRow> insertion_table(const std::vector<std::string>& envs, const std::vector<std::uint64_t>& seeds,
                                                 const RunConfig& cfg, const Progress& progress = {}) {
  std::vector<InsertionRow> rows;
  for (const auto& env : envs) {
    for (ActuationKind mode : all_modes()) {
      InsertionRow row{env, mode, {}};
      for (auto seed : seeds) {
        row.trials.push_back(run_insertion_trial(env, mode, seed, cfg));
        if (progress) progress(env + " " + to_string(mode) + " seed " + std::to_string(seed));
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

// ---- trajectory following by actuation mode --------------------------------------

struct FollowingTrial {
  std::string environment;
  ActuationKind mode = ActuationKind::RRMA;
  std::uint64_t seed = 0;
  bool insertion_success = false;
  bool success = false;
  std::optional<double> tracking_error;  // mm
  double average_speed = 0.0;            // mm/s
};

struct FollowingRow {
  std::string environment;
  ActuationKind mode = ActuationKind::RRMA;
  std::vector<FollowingTrial> trials;

  int successes() const {
    int n = 0;
    for (const auto& t : trials) n += t.success ? 1 : 0;
    return n;
  }
  std::vector<double> tracking_errors() const {
    std::vector<double> v;
    for (const auto& t : trials)
      if (t.tracking_error) v.push_back(*t.tracking_error);
    return v;
  }
};

struct FollowingProtocol {
  ActuationKind insertion_mode = ActuationKind::RRMA;
  std::vector<double> goals{0.2};
};

// Insert with one mode, then follow the trajectory back under each mode.
inline std::vector<FollowingRow> following_table(const std::vector<std::string>& envs, const std::vector<std::uint64_t>& seeds,
                                                 RunConfig cfg, const FollowingProtocol& protocol = {},
                                                 const Progress& progress = {}) {
  cfg.insertion.mode.kind = protocol.insertion_mode;
  std::vector<FollowingRow> rows;
  for (const auto& env : envs) {
    std::vector<FollowingRow> per_mode;
    for (ActuationKind mode : all_modes()) per_mode.push_back({env, mode, {}});
    for (auto seed : seeds) {
      Navigator base(load_environment(env), cfg, seed);
      const bool inserted = base.run_insertion();
      for (std::size_t i = 0; i < all_modes().size(); ++i) {
        FollowingTrial t;
        t.environment = env;
        t.mode = all_modes()[i];
        t.seed = seed;
        t.insertion_success = inserted;
        if (!base.session().trajectory.empty()) {
          Navigator nav = base;
          const auto r = nav.submit({"set-mode", std::nullopt, std::nullopt, to_string(t.mode)});
          if (!r.accepted) throw InvalidCommand(r.reason);
          const PhaseMetrics m = nav.run_withdrawal(WithdrawalMethod::tf, protocol.goals);
          t.success = m.success;
          t.tracking_error = m.tracking_error;
          t.average_speed = m.average_speed;
        }
        per_mode[i].trials.push_back(t);
      }
      if (progress) progress(env + " seed " + std::to_string(seed));
    }
    for (auto& r : per_mode) rows.push_back(std::move(r));
  }
  return rows;
}

// ---- withdrawal method comparison ------------------------------------------------

struct MethodTrial {
  WithdrawalMethod method = WithdrawalMethod::tf;
  std::uint64_t seed = 0;
  PhaseMetrics metrics;
};

struct ComparisonRow {
  std::string environment;
  std::vector<double> insertion_speeds;  // mm/s per seed
  std::vector<MethodTrial> trials;

  std::vector<const MethodTrial*> of(WithdrawalMethod m) const {
    std::vector<const MethodTrial*> v;
    for (const auto& t : trials)
      if (t.method == m) v.push_back(&t);
    return v;
  }
  double mean_speed(WithdrawalMethod m) const {
    std::vector<double> v;
    for (const auto* t : of(m)) v.push_back(t->metrics.average_speed);
    return mean_of(v);
  }
  std::vector<double> accuracies(WithdrawalMethod m) const {
    std::vector<double> v;
    for (const auto* t : of(m))
      for (const auto& g : t->metrics.goals) v.push_back(g.accuracy);
    return v;
  }
  std::vector<double> repeatabilities(WithdrawalMethod m) const {
    std::vector<double> v;
    for (const auto* t : of(m))
      for (const auto& r : t->metrics.repeats) v.push_back(r.repeatability);
    return v;
  }
  int successes(WithdrawalMethod m) const {
    int n = 0;
    for (const auto* t : of(m)) n += t->metrics.success ? 1 : 0;
    return n;
  }
};

inline const std::vector<WithdrawalMethod>& all_methods() {
  static const std::vector<WithdrawalMethod> m{WithdrawalMethod::tf, WithdrawalMethod::backward_ap, WithdrawalMethod::teleop};
  return m;
}

// One insertion per seed, then each withdrawal method from the same state.
inline std::vector<ComparisonRow> comparison_table(const std::vector<std::string>& envs, const std::vector<std::uint64_t>& seeds,
                                                   const RunConfig& cfg, const Progress& progress = {}) {
  std::vector<ComparisonRow> rows;
  for (const auto& env : envs) {
    ComparisonRow row;
    row.environment = env;
    for (auto seed : seeds) {
      Navigator base(load_environment(env), cfg, seed);
      base.run_insertion();
      row.insertion_speeds.push_back(phase_metrics(base.session(), base.session().phases.back()).average_speed);
      if (base.session().trajectory.empty()) throw MissingData(env + ": insertion produced no trajectory");
      for (WithdrawalMethod m : all_methods()) {
        Navigator nav = base;
        row.trials.push_back({m, seed, nav.run_withdrawal(m, cfg.withdrawal.goals)});
      }
      if (progress) progress(env + " seed " + std::to_string(seed));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---- delimited text ------------------------------------------------------------

namespace detail {
inline std::string fmt(double v, int digits = 3) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}
}  // namespace detail

inline std::string format_insertion_table(const std::vector<InsertionRow>& rows) {
  using detail::fmt;
  std::ostringstream os;
  os << "environment\tmode\tsuccess\ttrials\tmean_speed_mm_s\tspeed_sd_mm_s\n";
  for (const auto& r : rows) {
    std::vector<double> v;
    for (const auto& t : r.trials) v.push_back(t.average_speed);
    os << r.environment << '\t' << to_string(r.mode) << '\t' << r.successes() << '\t' << r.trials.size() << '\t'
       << fmt(mean_of(v)) << '\t' << fmt(stddev_of(v)) << '\n';
  }
  return os.str();
}

inline std::string format_following_table(const std::vector<FollowingRow>& rows) {
  using detail::fmt;
  std::ostringstream os;
  os << "environment\tmode\tsuccess\ttrials\ttracking_error_mm\ttracking_sd_mm\n";
  for (const auto& r : rows) {
    const auto e = r.tracking_errors();
    os << r.environment << '\t' << to_string(r.mode) << '\t' << r.successes() << '\t' << r.trials.size() << '\t'
       << (e.empty() ? std::string("nan") : fmt(mean_of(e))) << '\t' << (e.empty() ? std::string("nan") : fmt(stddev_of(e)))
       << '\n';
  }
  return os.str();
}

inline std::string format_comparison_table(const std::vector<ComparisonRow>& rows) {
  using detail::fmt;
  std::ostringstream os;
  os << "environment\tmethod\tsuccess\ttrials\tmean_speed_mm_s\taccuracy_mm\taccuracy_sd_mm\trepeatability_mm\t"
        "repeatability_sd_mm\n";
  for (const auto& r : rows) {
    os << r.environment << "\tinsertion\t-\t" << r.insertion_speeds.size() << '\t' << fmt(mean_of(r.insertion_speeds))
       << "\t-\t-\t-\t-\n";
    for (WithdrawalMethod m : all_methods()) {
      const auto acc = r.accuracies(m);
      const auto rep = r.repeatabilities(m);
      os << r.environment << '\t' << to_string(m) << '\t' << r.successes(m) << '\t' << r.of(m).size() << '\t'
         << fmt(r.mean_speed(m)) << '\t' << fmt(mean_of(acc)) << '\t' << fmt(stddev_of(acc)) << '\t' << fmt(mean_of(rep))
         << '\t' << fmt(stddev_of(rep)) << '\n';
    }
  }
  return os.str();
}

// One row per completed phase, then one row per goal visit.
inline std::string format_metrics_table(const Metrics& m) {
  using detail::fmt;
  std::ostringstream os;
  os << "phase\tmethod\tactuation\tsuccess\tmean_speed_mm_s\tpath_mm\telapsed_s\ttracking_error_mm\n";
  for (const auto& p : m.phases)
    os << p.name << '\t' << p.method << '\t' << p.actuation << '\t' << (p.success ? "yes" : "no") << '\t'
       << fmt(p.average_speed) << '\t' << fmt(p.path_length) << '\t' << fmt(p.elapsed) << '\t'
       << (p.tracking_error ? fmt(*p.tracking_error) : std::string("-")) << '\n';
  bool any = false;
  for (const auto& p : m.phases) any = any || !p.goals.empty();
  if (!any) return os.str();
  os << "\nphase\tgoal\ts\treached\taccuracy_mm\trepeatability_mm\n";
  for (const auto& p : m.phases) {
    std::map<double, double> rep;
    for (const auto& r : p.repeats) rep[r.s] = r.repeatability;
    std::map<double, int> seen;
    for (const auto& g : p.goals) {
      const bool second = seen[g.s]++ == 1 && rep.count(g.s);
      os << p.name << '\t' << g.goal << '\t' << fmt(g.s) << '\t' << (g.reached ? "yes" : "no") << '\t' << fmt(g.accuracy)
         << '\t' << (second ? fmt(rep[g.s]) : std::string("-")) << '\n';
    }
  }
  return os.str();
}

}  // namespace capnav
