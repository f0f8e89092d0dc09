#pragma once

#include "capnav/core.hpp"
#include "capnav/sensing.hpp"

#include <yaml-cpp/yaml.h>

#include <string>
#include <vector>

namespace capnav::yaml {

inline int line_of(const YAML::Node& n) { return n.Mark().line >= 0 ? n.Mark().line + 1 : 0; }

template <typename T>
T as(const YAML::Node& n, const std::string& what) {
  try {
    return n.as<T>();
  } catch (const YAML::Exception&) {
    throw ParseError("bad value for '" + what + "'", line_of(n));
  }
}

inline double get_double(const YAML::Node& parent, const std::string& key, double fallback) {
  const YAML::Node n = parent[key];
  if (!n) return fallback;
  return as<double>(n, key);
}

inline int get_int(const YAML::Node& parent, const std::string& key, int fallback) {
  const YAML::Node n = parent[key];
  if (!n) return fallback;
  return as<int>(n, key);
}

inline std::string get_string(const YAML::Node& parent, const std::string& key, const std::string& fallback) {
  const YAML::Node n = parent[key];
  if (!n) return fallback;
  return as<std::string>(n, key);
}

inline Vec3 to_vec3(const YAML::Node& n, const std::string& what) {
  if (!n.IsSequence() || n.size() != 3) throw ParseError("'" + what + "' must be a list of 3 numbers", line_of(n));
  return Vec3(as<double>(n[0], what), as<double>(n[1], what), as<double>(n[2], what));
}

inline Vec3 get_vec3(const YAML::Node& parent, const std::string& key, const Vec3& fallback) {
  const YAML::Node n = parent[key];
  if (!n) return fallback;
  return to_vec3(n, key);
}

inline std::vector<double> get_doubles(const YAML::Node& parent, const std::string& key,
                                       const std::vector<double>& fallback) {
  const YAML::Node n = parent[key];
  if (!n) return fallback;
  if (!n.IsSequence()) throw ParseError("'" + key + "' must be a list", line_of(n));
  std::vector<double> out;
  for (const auto& e : n) out.push_back(as<double>(e, key));
  return out;
}

// Rejects keys outside `allowed` so typos surface with a line number.
inline void check_keys(const YAML::Node& map, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!map) return;
  if (!map.IsMap()) throw ParseError("'" + where + "' must be a mapping", line_of(map));
  for (const auto& kv : map) {
    const auto key = kv.first.as<std::string>();
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ParseError("unknown key '" + key + "' in " + where, line_of(kv.first));
  }
}

inline YAML::Node load_text(const std::string& text) {
  try {
    return YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ParseError(e.msg, e.mark.line + 1);
  }
}

inline YAML::Node load_file(const std::string& path) {
  try {
    return YAML::LoadFile(path);
  } catch (const YAML::BadFile&) {
    throw ParseError("cannot open '" + path + "'", 0);
  } catch (const YAML::ParserException& e) {
    throw ParseError(e.msg, e.mark.line + 1);
  }
}

// Numbers go out as shortest round-trip text so files reload bit-exact.
inline void emit(YAML::Emitter& out, double v) { out << format_double(v); }

inline void emit(YAML::Emitter& out, const Vec3& v) {
  out << YAML::Flow << YAML::BeginSeq;
  emit(out, v.x());
  emit(out, v.y());
  emit(out, v.z());
  out << YAML::EndSeq;
}

inline void emit_list(YAML::Emitter& out, const std::vector<double>& v) {
  out << YAML::Flow << YAML::BeginSeq;
  for (double d : v) emit(out, d);
  out << YAML::EndSeq;
}

}  // namespace capnav::yaml
