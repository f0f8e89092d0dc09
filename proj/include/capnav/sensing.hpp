#pragma once

#include "capnav/magnetics.hpp"

#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace capnav {

struct ArrayConfig {
  int rows = 8;
  int cols = 10;
  double spacing = 0.06;
  Vec3 origin = Vec3::Zero();
  double sample_rate = 100.0;

  void validate() const {
    if (rows < 1 || cols < 1) throw DegenerateInput("sensor array needs at least one row and column");
    if (!(spacing > 0.0)) throw DegenerateInput("sensor spacing must be positive");
    if (!(sample_rate > 0.0)) throw DegenerateInput("sample rate must be positive");
    if (!finite(origin)) throw DegenerateInput("sensor origin must be finite");
  }

  int count() const { return rows * cols; }

  // Sensor i sits at row i / cols, column i % cols.
  Vec3 position(int i) const {
    const int r = i / cols;
    const int c = i % cols;
    return origin + Vec3(c * spacing, r * spacing, 0.0);
  }

  Vec3 center() const { return origin + Vec3(0.5 * (cols - 1) * spacing, 0.5 * (rows - 1) * spacing, 0.0); }
};

struct SensorFrame {
  double timestamp = 0.0;
  std::vector<Vec3> readings;
  std::vector<bool> active;

  int active_count() const {
    int n = 0;
    for (bool a : active) n += a ? 1 : 0;
    return n;
  }

  bool operator==(const SensorFrame& o) const {
    if (timestamp != o.timestamp || active != o.active || readings.size() != o.readings.size()) return false;
    for (std::size_t i = 0; i < readings.size(); ++i)
      if (readings[i] != o.readings[i]) return false;
    return true;
  }
};

inline Vec3 field_at(const std::vector<Dipole>& sources, const Vec3& at) {
  Vec3 b = Vec3::Zero();
  for (const auto& s : sources) b += dipole_field(s, at);
  return b;
}

// Noise is drawn for every sensor in index order (x, y, z), so a frame depends
// only on the generator state it was handed.
inline SensorFrame simulate_frame(const std::vector<Dipole>& sources, const ArrayConfig& config, double noise_sigma,
                                  const Vec3& ambient, Rng& rng, double timestamp = 0.0) {
  config.validate();
  if (!(noise_sigma >= 0.0)) throw DegenerateInput("noise sigma must be non-negative");
  SensorFrame f;
  f.timestamp = timestamp;
  f.readings.resize(config.count());
  f.active.assign(config.count(), true);
  for (int i = 0; i < config.count(); ++i) {
    Vec3 b = field_at(sources, config.position(i)) + ambient;
    if (noise_sigma > 0.0) {
      const double nx = rng.normal();
      const double ny = rng.normal();
      const double nz = rng.normal();
      b += noise_sigma * Vec3(nx, ny, nz);
    }
    f.readings[i] = b;
  }
  return f;
}

inline SensorFrame subtract_background(const SensorFrame& frame, const Vec3& estimate) {
  if (!finite(estimate)) throw DegenerateInput("background estimate must be finite");
  SensorFrame out = frame;
  for (auto& r : out.readings) r -= estimate;
  return out;
}

inline SensorFrame subtract_background(const SensorFrame& frame, const std::vector<Vec3>& table) {
  if (table.size() != frame.readings.size()) throw DegenerateInput("background table size does not match frame");
  SensorFrame out = frame;
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (!finite(table[i])) throw DegenerateInput("background estimate must be finite");
    out.readings[i] -= table[i];
  }
  return out;
}

// Per-sensor mean of source-free calibration frames.
inline std::vector<Vec3> calibrate_background(const std::vector<SensorFrame>& frames) {
  if (frames.empty()) throw InsufficientHistory("background calibration needs at least one frame");
  std::vector<Vec3> mean(frames.front().readings.size(), Vec3::Zero());
  for (const auto& f : frames) {
    if (f.readings.size() != mean.size()) throw DegenerateInput("calibration frames differ in size");
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += f.readings[i];
  }
  for (auto& m : mean) m /= static_cast<double>(frames.size());
  return mean;
}

inline SensorFrame with_mask(const SensorFrame& frame, const std::vector<bool>& mask) {
  if (mask.size() != frame.active.size()) throw DegenerateInput("mask size does not match frame");
  SensorFrame out = frame;
  for (std::size_t i = 0; i < mask.size(); ++i) out.active[i] = frame.active[i] && mask[i];
  return out;
}

// ---- record format ----------------------------------------------------------
// One line per active sensor: t,idx,bx,by,bz (seconds, index, Tesla).

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline void write_frame_records(std::ostream& os, const SensorFrame& frame) {
  for (std::size_t i = 0; i < frame.readings.size(); ++i) {
    if (!frame.active[i]) continue;
    const Vec3& b = frame.readings[i];
    os << format_double(frame.timestamp) << ',' << i << ',' << format_double(b.x()) << ',' << format_double(b.y())
       << ',' << format_double(b.z()) << '\n';
  }
}

inline std::vector<double> split_numbers(const std::string& line, int lineno) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= line.size()) {
    std::size_t end = line.find(',', start);
    if (end == std::string::npos) end = line.size();
    std::string tok = line.substr(start, end - start);
    while (!tok.empty() && (tok.back() == ' ' || tok.back() == '\r')) tok.pop_back();
    std::size_t lead = tok.find_first_not_of(' ');
    tok = lead == std::string::npos ? "" : tok.substr(lead);
    double v = 0.0;
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (tok.empty() || res.ec != std::errc() || res.ptr != tok.data() + tok.size())
      throw ParseError("malformed number '" + tok + "'", lineno);
    out.push_back(v);
    start = end + 1;
  }
  return out;
}

// Reads records back into frames, grouping consecutive lines by timestamp.
// Sensors without a record are inactive.
inline std::vector<SensorFrame> read_frame_records(std::istream& is, const ArrayConfig& config) {
  std::vector<SensorFrame> frames;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto v = split_numbers(line, lineno);
    if (v.size() != 5) throw ParseError("expected 5 fields t,idx,bx,by,bz", lineno);
    const int idx = static_cast<int>(v[1]);
    if (idx < 0 || idx >= config.count() || static_cast<double>(idx) != v[1])
      throw ParseError("sensor index out of range", lineno);
    if (frames.empty() || frames.back().timestamp != v[0]) {
      if (!frames.empty() && v[0] < frames.back().timestamp) throw ParseError("timestamps must not decrease", lineno);
      SensorFrame f;
      f.timestamp = v[0];
      f.readings.assign(config.count(), Vec3::Zero());
      f.active.assign(config.count(), false);
      frames.push_back(std::move(f));
    }
    frames.back().readings[idx] = Vec3(v[2], v[3], v[4]);
    frames.back().active[idx] = true;
  }
  return frames;
}

}  // namespace capnav
