#pragma once

#include "capnav/navigator.hpp"

#include <httplib.h>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <future>
#include <memory>
#include <mutex>
#include <thread>

namespace capnav {

inline constexpr const char* kTelemetrySchema = "capnav-telemetry/1";

// ---- command and message encoding ------------------------------------------------

inline Command command_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InvalidCommand("command must be a JSON object");
  if (!j.contains("type") || !j.at("type").is_string()) throw InvalidCommand("command needs a string 'type'");
  Command c;
  c.type = j.at("type").get<std::string>();
  for (const auto& [k, v] : j.items()) {
    if (k == "type") continue;
    if (k == "s") {
      if (!v.is_number()) throw InvalidCommand("'s' must be a number");
      c.s = v.get<double>();
    } else if (k == "vector" || k == "position") {
      if (!v.is_array() || v.size() != 3 || !v[0].is_number() || !v[1].is_number() || !v[2].is_number())
        throw InvalidCommand("'" + k + "' must be a list of three numbers");
      c.vector = Vec3(v[0].get<double>(), v[1].get<double>(), v[2].get<double>());
    } else if (k == "mode" || k == "method" || k == "text") {
      if (!v.is_string()) throw InvalidCommand("'" + k + "' must be a string");
      c.text = v.get<std::string>();
    } else if (k == "label") {
      if (!v.is_string()) throw InvalidCommand("'label' must be a string");
      c.label = v.get<std::string>();
    } else {
      throw InvalidCommand("unknown command field '" + k + "'");
    }
  }
  return c;
}

inline nlohmann::json command_to_json(const Command& c) {
  nlohmann::json j{{"type", c.type}};
  if (c.s) j["s"] = *c.s;
  if (c.vector) j["vector"] = detail::vec(*c.vector);
  if (!c.text.empty()) j["text"] = c.text;
  if (!c.label.empty()) j["label"] = c.label;
  return j;
}

inline nlohmann::json reply_message(double t, const std::string& command, const CommandResult& r) {
  nlohmann::json j{{"schema", kTelemetrySchema}, {"type", r.accepted ? "ack" : "reject"}, {"t", t}, {"command", command}};
  if (!r.accepted) j["reason"] = r.reason;
  return j;
}

inline nlohmann::json event_message(const Event& e) {
  if (e.type == "ack" || e.type == "reject") {
    const auto colon = e.detail.find(": ");
    nlohmann::json j{{"schema", kTelemetrySchema}, {"type", e.type}, {"t", e.t}, {"command", e.detail.substr(0, colon)}};
    if (e.type == "reject") j["reason"] = colon == std::string::npos ? std::string() : e.detail.substr(colon + 2);
    return j;
  }
  nlohmann::json j = to_json(e);
  j["event"] = j["type"];
  j["schema"] = kTelemetrySchema;
  j["type"] = "event";
  return j;
}

inline std::string sse_frame(const nlohmann::json& message) {
  return "event: " + message.at("type").get<std::string>() + "\ndata: " + message.dump() + "\n\n";
}

// ---- session runner ----------------------------------------------------------------

struct RunnerOptions {
  double speed = 1.0;               // simulated seconds per wall second; 0 runs unthrottled
  double snapshot_period = 0.02;    // s of wall time between snapshot refreshes
  std::size_t message_backlog = 4096;
};

// Owns the navigator on one thread. Commands queue up and are applied between
// ticks; observers only see immutable snapshots and the message log.
class SessionRunner {
 public:
  SessionRunner(Navigator nav, RunnerOptions opts = {}) : nav_(std::move(nav)), opts_(opts) {
    snapshot_ = std::make_shared<const nlohmann::json>(wrap(nav_.snapshot()));
    seen_events_ = nav_.session().events.size();
  }

  ~SessionRunner() { stop(); }

  SessionRunner(const SessionRunner&) = delete;
  SessionRunner& operator=(const SessionRunner&) = delete;

  void start() {
    if (thread_.joinable()) return;
    running_ = true;
    thread_ = std::thread([this] { loop(); });
  }

  void stop() {
    running_ = false;
    cv_.notify_all();
    if (thread_.joinable()) thread_.join();
    // anything still queued is refused rather than left hanging
    std::lock_guard lk(mu_);
    for (auto& p : pending_) p.second.set_value({false, "runner stopped"});
    pending_.clear();
  }

  bool running() const { return running_; }

  // Blocks until the loop applies the command at the next tick boundary.
  CommandResult submit(const Command& c) {
    std::future<CommandResult> f;
    {
      std::lock_guard lk(mu_);
      if (!running_) return {false, "runner stopped"};
      std::promise<CommandResult> p;
      f = p.get_future();
      pending_.emplace_back(c, std::move(p));
    }
    return f.get();
  }

  std::shared_ptr<const nlohmann::json> snapshot() const {
    std::lock_guard lk(mu_);
    return snapshot_;
  }

  // Messages with sequence number >= cursor; cursor advances past them.
  std::vector<nlohmann::json> messages_since(std::uint64_t& cursor) const {
    std::lock_guard lk(mu_);
    std::vector<nlohmann::json> out;
    if (cursor < base_seq_) cursor = base_seq_;
    for (std::uint64_t i = cursor; i < base_seq_ + messages_.size(); ++i) out.push_back(messages_[i - base_seq_]);
    cursor = base_seq_ + messages_.size();
    return out;
  }

  std::uint64_t message_head() const {
    std::lock_guard lk(mu_);
    return base_seq_ + messages_.size();
  }

  // The navigator once the loop has stopped.
  const Navigator& navigator() const {
    if (running_) throw InvalidCommand("navigator is owned by the running loop");
    return nav_;
  }

 private:
  static nlohmann::json wrap(nlohmann::json snap) {
    snap["schema"] = kTelemetrySchema;
    snap["type"] = "snapshot";
    return snap;
  }

  void loop() {
    using clock = std::chrono::steady_clock;
    const auto wall0 = clock::now();
    const double sim0 = nav_.clock();
    auto last_snapshot = clock::now();
    double paused_wall = 0.0;
    while (running_) {
      const bool applied = drain_commands();
      if (nav_.paused()) {
        const auto t0 = clock::now();
        std::unique_lock lk(mu_);
        cv_.wait_for(lk, std::chrono::milliseconds(5), [this] { return !running_ || !pending_.empty(); });
        lk.unlock();
        paused_wall += std::chrono::duration<double>(clock::now() - t0).count();
      } else {
        if (opts_.speed > 0.0) {
          const double due = paused_wall + (nav_.clock() - sim0) / opts_.speed;
          const auto deadline = wall0 + std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(due));
          std::unique_lock lk(mu_);
          cv_.wait_until(lk, deadline, [this] { return !running_ || !pending_.empty(); });
          if (!running_) break;
          if (!pending_.empty() && clock::now() < deadline) continue;
        }
        nav_.tick();
      }
      const auto now = clock::now();
      if (applied || std::chrono::duration<double>(now - last_snapshot).count() >= opts_.snapshot_period) {
        publish();
        last_snapshot = now;
      } else {
        collect_events();
      }
    }
    publish();
  }

  bool drain_commands() {
    std::deque<std::pair<Command, std::promise<CommandResult>>> batch;
    {
      std::lock_guard lk(mu_);
      batch.swap(pending_);
    }
    for (auto& [c, p] : batch) p.set_value(nav_.submit(c));
    return !batch.empty();
  }

  void collect_events() {
    const auto& ev = nav_.session().events;
    if (seen_events_ == ev.size()) return;
    std::lock_guard lk(mu_);
    for (; seen_events_ < ev.size(); ++seen_events_) push(event_message(ev[seen_events_]));
  }

  void publish() {
    auto snap = std::make_shared<const nlohmann::json>(wrap(nav_.snapshot()));
    collect_events();
    std::lock_guard lk(mu_);
    snapshot_ = std::move(snap);
  }

  void push(nlohmann::json m) {
    messages_.push_back(std::move(m));
    while (messages_.size() > opts_.message_backlog) {
      messages_.pop_front();
      ++base_seq_;
    }
  }

  Navigator nav_;
  RunnerOptions opts_;
  std::thread thread_;
  std::atomic<bool> running_{false};
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::pair<Command, std::promise<CommandResult>>> pending_;
  std::shared_ptr<const nlohmann::json> snapshot_;
  std::deque<nlohmann::json> messages_;
  std::uint64_t base_seq_ = 0;
  std::size_t seen_events_ = 0;
};

// ---- HTTP endpoint ------------------------------------------------------------------

// GET /snapshot, POST /command, GET /telemetry (server-sent events at a fixed rate).
class TelemetryServer {
 public:
  TelemetryServer(SessionRunner& runner, double rate_hz = 20.0) : runner_(runner), period_(1.0 / rate_hz) {
    if (!(rate_hz > 0.0)) throw DegenerateInput("telemetry rate must be positive");
    server_.Get("/snapshot", [this](const httplib::Request&, httplib::Response& res) {
      res.set_content(runner_.snapshot()->dump(), "application/json");
    });
    server_.Post("/command", [this](const httplib::Request& req, httplib::Response& res) {
      nlohmann::json reply;
      try {
        const Command c = command_from_json(nlohmann::json::parse(req.body));
        reply = reply_message(runner_.snapshot()->value("t", 0.0), c.type, runner_.submit(c));
      } catch (const nlohmann::json::exception& e) {
        reply = reply_message(0.0, "?", {false, std::string("malformed JSON: ") + e.what()});
        res.status = 400;
      } catch (const InvalidCommand& e) {
        reply = reply_message(0.0, "?", {false, e.what()});
        res.status = 400;
      }
      res.set_content(reply.dump(), "application/json");
    });
    server_.Get("/telemetry", [this](const httplib::Request&, httplib::Response& res) {
      struct Stream {
        std::chrono::steady_clock::time_point next;
        std::uint64_t cursor = 0;
      };
      auto st = std::make_shared<Stream>();
      st->next = std::chrono::steady_clock::now();
      st->cursor = runner_.message_head();
      res.set_header("Cache-Control", "no-cache");
      res.set_chunked_content_provider("text/event-stream", [this, st](std::size_t, httplib::DataSink& sink) {
        std::this_thread::sleep_until(st->next);
        st->next += std::chrono::duration_cast<std::chrono::steady_clock::duration>(std::chrono::duration<double>(period_));
        if (!serving_) {
          sink.done();
          return true;
        }
        std::string out;
        for (const auto& m : runner_.messages_since(st->cursor)) out += sse_frame(m);
        out += sse_frame(*runner_.snapshot());
        return sink.write(out.data(), out.size());
      });
    });
  }

  ~TelemetryServer() { stop(); }

  // Binds and serves on a background thread; returns the bound port.
  int start(const std::string& host, int port) {
    serving_ = true;
    const int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw InvalidCommand("cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return bound;
  }

  void stop() {
    serving_ = false;
    if (thread_.joinable()) {
      server_.stop();
      thread_.join();
    }
  }

 private:
  SessionRunner& runner_;
  double period_;
  httplib::Server server_;
  std::thread thread_;
  std::atomic<bool> serving_{false};
};

}  // namespace capnav
