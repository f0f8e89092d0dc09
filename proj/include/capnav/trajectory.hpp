#pragma once

#include "capnav/localization.hpp"
#include "capnav/spline.hpp"

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace capnav {

// ---- Gaussian mixture EM ----------------------------------------------------

struct GmmOptions {
  double eigen_floor = 1e-6;  // m², lower bound on covariance eigenvalues
  double tolerance = 1e-6;    // stop when the log-likelihood gain drops below this
  int max_iterations = 200;
};

struct GmmComponent {
  double weight = 0.0;
  Vec3 mean = Vec3::Zero();
  Mat3 covariance = Mat3::Identity();
};

struct GmmResult {
  std::vector<GmmComponent> components;
  std::vector<double> log_likelihood;  // one entry per E-step, first at the initial parameters
  int iterations = 0;
};

namespace detail {

inline Mat3 floor_eigenvalues(const Mat3& c, double floor) {
  const Mat3 sym = 0.5 * (c + c.transpose());
  Eigen::SelfAdjointEigenSolver<Mat3> es(sym);
  Vec3 ev = es.eigenvalues();
  if ((ev.array() >= floor).all()) return sym;
  ev = ev.cwiseMax(floor);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

struct GaussianEval {
  Mat3 inverse;
  double log_norm = 0.0;  // log of the density normalizer
};

inline GaussianEval prepare(const Mat3& cov) {
  Eigen::LLT<Mat3> llt(cov);
  if (llt.info() != Eigen::Success) throw DegenerateInput("covariance is not positive definite");
  const Mat3 L = llt.matrixL();
  const double logdet = 2.0 * (std::log(L(0, 0)) + std::log(L(1, 1)) + std::log(L(2, 2)));
  return {llt.solve(Mat3::Identity()), -0.5 * (3.0 * std::log(2.0 * kPi) + logdet)};
}

inline std::size_t distinct_count(std::vector<Vec3> pts, std::size_t enough) {
  std::sort(pts.begin(), pts.end(), [](const Vec3& a, const Vec3& b) {
    return std::lexicographical_compare(a.data(), a.data() + 3, b.data(), b.data() + 3);
  });
  std::size_t n = pts.empty() ? 0 : 1;
  for (std::size_t i = 1; i < pts.size() && n < enough; ++i)
    if (pts[i] != pts[i - 1]) ++n;
  return n;
}

inline std::vector<Vec3> kmeans_pp(const std::vector<Vec3>& pts, std::size_t k, Rng& rng) {
  std::vector<Vec3> means;
  means.push_back(pts[rng.index(pts.size())]);
  std::vector<double> d2(pts.size(), std::numeric_limits<double>::infinity());
  while (means.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      d2[i] = std::min(d2[i], (pts[i] - means.back()).squaredNorm());
      total += d2[i];
    }
    double r = rng.uniform() * total;
    std::size_t pick = pts.size() - 1;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      r -= d2[i];
      if (r < 0.0 && d2[i] > 0.0) {
        pick = i;
        break;
      }
    }
    means.push_back(pts[pick]);
  }
  return means;
}

}  // namespace detail

// Responsibilities (points x components) and total log-likelihood at the given parameters.
inline double gmm_e_step(const std::vector<Vec3>& pts, const std::vector<GmmComponent>& comps,
                         std::vector<std::vector<double>>& resp) {
  const std::size_t k = comps.size();
  std::vector<detail::GaussianEval> ev;
  ev.reserve(k);
  for (const auto& c : comps) ev.push_back(detail::prepare(c.covariance));
  resp.assign(pts.size(), std::vector<double>(k, 0.0));
  double ll = 0.0;
  std::vector<double> lp(k);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) {
      if (comps[j].weight <= 0.0) {
        lp[j] = -std::numeric_limits<double>::infinity();
        continue;
      }
      const Vec3 d = pts[i] - comps[j].mean;
      lp[j] = std::log(comps[j].weight) + ev[j].log_norm - 0.5 * d.dot(ev[j].inverse * d);
      mx = std::max(mx, lp[j]);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(lp[j] - mx);
    const double lse = mx + std::log(sum);
    ll += lse;
    for (std::size_t j = 0; j < k; ++j) resp[i][j] = std::exp(lp[j] - lse);
  }
  return ll;
}

inline GmmResult gmm_em(const std::vector<Vec3>& pts, std::size_t k, Rng& rng, const GmmOptions& opts = {},
                        const std::vector<Vec3>& initial_means = {}) {
  if (k == 0) throw DegenerateInput("need at least one component");
  if (pts.size() < k) throw DegenerateInput("fewer points than components");
  if (detail::distinct_count(pts, k) < k) throw DegenerateInput("fewer distinct points than components");
  for (const auto& p : pts)
    if (!finite(p)) throw DegenerateInput("points must be finite");
  if (!initial_means.empty() && initial_means.size() != k) throw DegenerateInput("initial means must have k entries");

  const double n = static_cast<double>(pts.size());
  const std::vector<Vec3> means = initial_means.empty() ? detail::kmeans_pp(pts, k, rng) : initial_means;
  // shared isotropic start: mean squared distance to the nearest initial mean
  double spread = 0.0;
  for (const auto& p : pts) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& m : means) best = std::min(best, (p - m).squaredNorm());
    spread += best;
  }
  const double var = std::max(spread / (3.0 * n), opts.eigen_floor);

  GmmResult out;
  out.components.resize(k);
  for (std::size_t j = 0; j < k; ++j) {
    out.components[j].weight = 1.0 / static_cast<double>(k);
    out.components[j].mean = means[j];
    out.components[j].covariance = var * Mat3::Identity();
  }

  std::vector<std::vector<double>> resp;
  double ll = gmm_e_step(pts, out.components, resp);
  out.log_likelihood.push_back(ll);
  for (int it = 0; it < opts.max_iterations; ++it) {
    for (std::size_t j = 0; j < k; ++j) {
      double nk = 0.0;
      Vec3 sum = Vec3::Zero();
      for (std::size_t i = 0; i < pts.size(); ++i) {
        nk += resp[i][j];
        sum += resp[i][j] * pts[i];
      }
      GmmComponent& c = out.components[j];
      c.weight = nk / n;
      if (nk <= 1e-12) {
        c.weight = 0.0;
        continue;
      }
      c.mean = sum / nk;
      Mat3 cov = Mat3::Zero();
      for (std::size_t i = 0; i < pts.size(); ++i) {
        const Vec3 d = pts[i] - c.mean;
        cov += resp[i][j] * (d * d.transpose());
      }
      c.covariance = detail::floor_eigenvalues(cov / nk, opts.eigen_floor);
    }
    const double next = gmm_e_step(pts, out.components, resp);
    out.log_likelihood.push_back(next);
    out.iterations = it + 1;
    const double gain = next - ll;
    ll = next;
    if (gain < opts.tolerance) break;
  }
  return out;
}

// Index of the most responsible component per point; ties go to the lower index.
inline std::vector<std::size_t> gmm_assign(const std::vector<Vec3>& pts, const std::vector<GmmComponent>& comps) {
  std::vector<std::vector<double>> resp;
  gmm_e_step(pts, comps, resp);
  std::vector<std::size_t> out(pts.size(), 0);
  for (std::size_t i = 0; i < pts.size(); ++i)
    out[i] = static_cast<std::size_t>(std::max_element(resp[i].begin(), resp[i].end()) - resp[i].begin());
  return out;
}

// ---- trajectory -------------------------------------------------------------

// Smooth curve through ordered knots, parameterized by s in [0, 1] proportional
// to arc length.
class Trajectory {
 public:
  Trajectory() = default;

  explicit Trajectory(std::vector<Vec3> knots) : spline_(std::make_shared<ArcSpline>(std::move(knots))) {}

  bool empty() const { return !spline_; }
  const std::vector<Vec3>& knots() const { return spline().knots(); }
  double length() const { return spline().length(); }

  Vec3 point(double s) const { return spline().point_at(clamp01(s) * length()); }
  Vec3 tangent(double s) const { return spline().tangent_at(clamp01(s) * length()); }
  double arclength(double s) const { return clamp01(s) * length(); }
  double parameter_at(double arclen) const { return std::clamp(arclen / length(), 0.0, 1.0); }

  // Global closest point; ties resolve toward smaller s.
  double nearest_parameter(const Vec3& p) const { return spline().nearest(p, 0.0, length()) / length(); }

  double nearest_parameter(const Vec3& p, double s_lo, double s_hi) const {
    return spline().nearest(p, clamp01(s_lo) * length(), clamp01(s_hi) * length()) / length();
  }

  std::vector<Vec3> polyline(int samples) const {
    std::vector<Vec3> out;
    for (int i = 0; i <= samples; ++i) out.push_back(point(static_cast<double>(i) / samples));
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["knots"] = nlohmann::json::array();
    for (const auto& k : knots()) j["knots"].push_back({k.x(), k.y(), k.z()});
    j["length"] = length();
    return j;
  }

  static Trajectory from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("knots") || !j.contains("length"))
      throw SchemaError("trajectory needs 'knots' and 'length'");
    std::vector<Vec3> knots;
    for (const auto& k : j.at("knots")) {
      if (!k.is_array() || k.size() != 3) throw SchemaError("trajectory knot must be a list of 3 numbers");
      knots.emplace_back(k[0].get<double>(), k[1].get<double>(), k[2].get<double>());
    }
    Trajectory t(std::move(knots));
    const double stored = j.at("length").get<double>();
    if (std::abs(stored - t.length()) > 1e-9 * std::max(1.0, stored))
      throw SchemaError("trajectory length does not match its knots");
    return t;
  }

 private:
  static double clamp01(double s) { return std::clamp(s, 0.0, 1.0); }

  const ArcSpline& spline() const {
    if (!spline_) throw MissingData("trajectory is empty");
    return *spline_;
  }

  std::shared_ptr<const ArcSpline> spline_;
};

struct TrajectoryOptions {
  double spacing = 0.02;          // m of path per mixture component
  double ordering_tolerance = 1e-3;  // s, components closer than this in mean time are ambiguous
  GmmOptions gmm;
};

// Path length of a noisy history: points closer than `min_step` to the last
// kept point are skipped so jitter does not inflate the length.
inline double history_path_length(const std::vector<TimedPosition>& history, double min_step) {
  if (history.empty()) return 0.0;
  double total = 0.0;
  Vec3 last = history.front().p;
  for (const auto& h : history) {
    const double d = (h.p - last).norm();
    if (d >= min_step) {
      total += d;
      last = h.p;
    }
  }
  return total;
}

inline Trajectory build_trajectory(const std::vector<TimedPosition>& history, Rng& rng,
                                   const TrajectoryOptions& opts = {}) {
  if (!(opts.spacing > 0.0)) throw DegenerateInput("spacing must be positive");
  const double path = history_path_length(history, 0.25 * opts.spacing);
  if (!(path > 2.0 * opts.spacing)) throw DegenerateInput("history is too short for a trajectory");
  const std::size_t k = static_cast<std::size_t>(std::ceil(path / opts.spacing));

  std::vector<Vec3> pts;
  pts.reserve(history.size());
  for (const auto& h : history) pts.push_back(h.p);

  // initial means: history split into k equal chunks of cumulative path length
  std::vector<double> cum(pts.size(), 0.0);
  for (std::size_t i = 1; i < pts.size(); ++i) cum[i] = cum[i - 1] + (pts[i] - pts[i - 1]).norm();
  const double total = cum.back();
  std::vector<Vec3> init(k, Vec3::Zero());
  std::vector<int> count(k, 0);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const std::size_t c = std::min(k - 1, static_cast<std::size_t>(cum[i] / total * static_cast<double>(k)));
    init[c] += pts[i];
    ++count[c];
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (count[c] > 0) {
      init[c] /= count[c];
    } else {
      const double target = (static_cast<double>(c) + 0.5) / static_cast<double>(k) * total;
      const auto it = std::lower_bound(cum.begin(), cum.end(), target);
      init[c] = pts[std::min<std::size_t>(static_cast<std::size_t>(it - cum.begin()), pts.size() - 1)];
    }
  }

  const GmmResult gmm = gmm_em(pts, k, rng, opts.gmm, init);
  const auto assign = gmm_assign(pts, gmm.components);
  std::vector<double> tsum(k, 0.0);
  std::vector<int> tn(k, 0);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    tsum[assign[i]] += history[i].t;
    ++tn[assign[i]];
  }
  struct Ordered {
    double t;
    Vec3 mean;
  };
  std::vector<Ordered> order;
  for (std::size_t j = 0; j < k; ++j)
    if (tn[j] > 0) order.push_back({tsum[j] / tn[j], gmm.components[j].mean});
  std::stable_sort(order.begin(), order.end(), [](const Ordered& a, const Ordered& b) { return a.t < b.t; });
  for (std::size_t i = 1; i < order.size(); ++i)
    if (order[i].t - order[i - 1].t < opts.ordering_tolerance)
      throw OrderingAmbiguity("two clusters share the same mean timestamp");
  // the explored region ends at the first and last samples; cluster means too
  // close to either end are dropped in favor of the anchor
  std::vector<Vec3> knots{history.front().p};
  const double min_gap = 0.25 * opts.spacing;
  for (const auto& o : order) {
    if ((o.mean - knots.back()).norm() < min_gap || (o.mean - history.back().p).norm() < min_gap) continue;
    knots.push_back(o.mean);
  }
  if ((history.back().p - knots.back()).norm() > 1e-12) knots.push_back(history.back().p);
  if (knots.size() < 2) throw DegenerateInput("clustering produced fewer than two knots");
  return Trajectory(std::move(knots));
}

// ---- goals and directed segments ----------------------------------------------

struct GoalPoint {
  double s = 0.0;
  Vec3 position = Vec3::Zero();
  std::string label;
};

inline GoalPoint make_goal(const Trajectory& traj, double s, std::string label = {}) {
  if (!(s >= 0.0 && s <= 1.0)) throw OutOfRange("goal parameter must lie in [0, 1]");
  return {s, traj.point(s), std::move(label)};
}

// Directed piece of a trajectory from `from_s` toward `to_s`, indexed by the
// distance travelled from its start.
class Segment {
 public:
  Segment(Trajectory traj, double from_s, double to_s) : traj_(std::move(traj)), from_(from_s), to_(to_s) {}

  double from_s() const { return from_; }
  double to_s() const { return to_; }
  double direction() const { return to_ >= from_ ? 1.0 : -1.0; }
  double length() const { return std::abs(to_ - from_) * traj_.length(); }
  const Trajectory& trajectory() const { return traj_; }

  double parameter_at(double d) const {
    d = std::clamp(d, 0.0, length());
    if (d >= length()) return to_;
    return from_ + direction() * d / traj_.length();
  }

  Vec3 point_at(double d) const { return traj_.point(parameter_at(d)); }
  Vec3 tangent_at(double d) const { return direction() * traj_.tangent(parameter_at(d)); }
  Vec3 start() const { return traj_.point(from_); }
  Vec3 end() const { return traj_.point(to_); }

  // Distance along the segment of the point closest to p.
  double nearest_distance(const Vec3& p) const {
    const double s = traj_.nearest_parameter(p, std::min(from_, to_), std::max(from_, to_));
    return std::clamp(std::abs(s - from_) * traj_.length(), 0.0, length());
  }

 private:
  Trajectory traj_;
  double from_;
  double to_;
};

inline Segment truncate(const Trajectory& traj, double from_s, const GoalPoint& goal) {
  if (!(from_s >= 0.0 && from_s <= 1.0) || !(goal.s >= 0.0 && goal.s <= 1.0))
    throw OutOfRange("segment parameters must lie in [0, 1]");
  if (std::abs(from_s - goal.s) < 1e-6) throw ZeroLength("segment start coincides with the goal");
  return Segment(traj, from_s, goal.s);
}

}  // namespace capnav
