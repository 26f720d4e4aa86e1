#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "walle/config.hpp"
#include "walle/dialogue.hpp"
#include "walle/scene.hpp"

namespace httplib {
class Server;
}

namespace walle {

/// Error surfaced to HTTP clients as {code, message} with the given status.
class ApiError : public std::runtime_error {
 public:
  ApiError(int status, std::string code, const std::string& message)
      : std::runtime_error(message), status_(status), code_(std::move(code)) {}
  int status() const { return status_; }
  const std::string& code() const { return code_; }

 private:
  int status_;
  std::string code_;
};

enum class EventKind { assistant_message, state_change, scene_update, plan_waypoint, outcome };

std::string_view to_string(EventKind k);

struct SessionEvent {
  std::uint64_t seq = 0;
  EventKind kind = EventKind::state_change;
  nlohmann::json payload;

  nlohmann::json to_json() const;
};

struct ServiceConfig {
  Catalog catalog;
  RunConfig run;
  PromptBundle prompts = PromptBundle::defaults();
  std::chrono::seconds idle_timeout{30 * 60};
  std::chrono::milliseconds waypoint_delay{0};
  /// Builds non-mock backends; defaults to RemoteChat from the request's settings.
  std::function<std::shared_ptr<const ChatBackend>(const nlohmann::json&)> remote_factory;
};

/// In-memory session store behind the HTTP API. Requests on one session are serialized;
/// different sessions proceed independently.
class SessionService {
 public:
  using Clock = std::chrono::steady_clock;

  explicit SessionService(ServiceConfig config);
  ~SessionService();

  nlohmann::json create_session(const nlohmann::json& body);
  nlohmann::json get_session(const std::string& id);
  nlohmann::json post_message(const std::string& id, const nlohmann::json& body);
  nlohmann::json post_confirmation(const std::string& id, const nlohmann::json& body);
  nlohmann::json step_execution(const std::string& id);
  nlohmann::json post_feedback(const std::string& id, const nlohmann::json& body);
  nlohmann::json get_scene(const std::string& id);

  /// Events with seq > after; waits up to `wait` for at least one. Throws ApiError 404.
  std::vector<SessionEvent> events_after(const std::string& id, std::uint64_t after,
                                         std::chrono::milliseconds wait = std::chrono::milliseconds{0});

  /// Drops sessions idle for longer than the configured timeout. Returns how many.
  std::size_t evict_idle(Clock::time_point now = Clock::now());
  std::size_t session_count() const;

  /// Wakes all event waiters; subsequent waits return immediately.
  void shutdown();
  bool stopping() const { return stopping_; }

  const ServiceConfig& config() const { return config_; }

 private:
  struct Entry;
  std::shared_ptr<Entry> find(const std::string& id);
  template <typename Fn>
  nlohmann::json with_session(const std::string& id, Fn&& fn);

  ServiceConfig config_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, std::shared_ptr<Entry>> sessions_;
  std::uint64_t next_id_ = 1;
  std::uint64_t id_salt_;
  std::atomic<bool> stopping_{false};
};

/// HTTP JSON facade with a text/event-stream endpoint per session.
class HttpServer {
 public:
  HttpServer(SessionService& service, std::string cors_origin = "*");
  ~HttpServer();

  /// Binds and serves on the calling thread until stop().
  bool listen(const std::string& host, int port);
  /// Binds to an ephemeral port; call serve() afterwards.
  int bind_any_port(const std::string& host);
  bool serve();
  void stop();
  void wait_until_ready() const;

 private:
  void install_routes();

  SessionService& service_;
  std::string cors_origin_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace walle
