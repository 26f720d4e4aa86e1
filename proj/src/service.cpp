#include "walle/service.hpp"

#include <random>
#include <thread>

#include <fmt/format.h>

#include "httplib.h"
#include "walle/errors.hpp"
#include "walle/pipeline.hpp"
#include "walle/rng.hpp"

namespace walle {

using nlohmann::json;

std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::assistant_message:
      return "assistant_message";
    case EventKind::state_change:
      return "state_change";
    case EventKind::scene_update:
      return "scene_update";
    case EventKind::plan_waypoint:
      return "plan_waypoint";
    case EventKind::outcome:
      return "outcome";
  }
  return "unknown";
}

json SessionEvent::to_json() const {
  return {{"seq", seq}, {"kind", std::string(to_string(kind))}, {"payload", payload}};
}

struct SessionService::Entry {
  std::string id;
  std::string backend_kind;
  std::chrono::system_clock::time_point created_at;
  std::uint64_t seed = 0;
  int executions = 0;

  std::mutex op_mutex;  // serializes requests on this session
  std::optional<Session> session;
  std::size_t transitions_seen = 0;
  std::atomic<SessionService::Clock::rep> last_active{0};

  std::mutex event_mutex;
  std::condition_variable event_cv;
  std::vector<SessionEvent> events;

  void touch() { last_active = SessionService::Clock::now().time_since_epoch().count(); }

  void emit(EventKind kind, json payload) {
    {
      std::lock_guard lock(event_mutex);
      events.push_back({events.size() + 1, kind, std::move(payload)});
    }
    event_cv.notify_all();
  }

  void flush_transitions() {
    const auto& ts = session->transitions();
    for (; transitions_seen < ts.size(); ++transitions_seen) {
      const auto& t = ts[transitions_seen];
      emit(EventKind::state_change, {{"from", std::string(to_string(t.from))},
                                     {"to", std::string(to_string(t.to))},
                                     {"trigger", std::string(to_string(t.trigger))}});
    }
  }

  json state() const {
    json out = {{"session_id", id}, {"state", std::string(to_string(session->phase()))}};
    if (session->command()) out["command"] = format_target_command(*session->command());
    if (session->active_user()) out["active_user"] = *session->active_user();
    return out;
  }
};

namespace {

std::string require_string(const json& body, const char* key) {
  if (!body.is_object() || !body.contains(key) || !body[key].is_string() || body[key].get<std::string>().empty()) {
    throw ApiError(400, "bad_request", fmt::format("field '{}' must be a non-empty string", key));
  }
  return body[key].get<std::string>();
}

json scene_payload(const Scene& scene) { return scene_to_json(scene); }

Scene scene_from_spec(const Catalog& catalog, const json& spec, const Table& table) {
  Scene scene;
  scene.table = table;
  if (!spec.contains("objects") || !spec["objects"].is_array()) {
    throw ApiError(400, "bad_request", "scene.objects must be an array");
  }
  int k = 0;
  for (const auto& o : spec["objects"]) {
    const auto name = require_string(o, "name");
    auto it = std::find_if(catalog.entries.begin(), catalog.entries.end(),
                           [&](const ObjectTemplate& t) { return t.name == name; });
    if (it == catalog.entries.end()) throw ApiError(400, "bad_request", "unknown catalog object '" + name + "'");
    ObjectInstance inst;
    inst.id = fmt::format("obj{:02d}", ++k);
    inst.name = it->name;
    inst.category = it->category;
    inst.color = it->color;
    inst.extents = it->extents;
    inst.body_diameter = it->body_diameter;
    inst.semantic = it->semantic;
    inst.pose.frame = Frame::robot_base;
    inst.pose.transform.rotation = yaw_rotation(o.value("yaw", 0.0));
    inst.pose.transform.translation =
        Vec3(o.value("x", 0.0), o.value("y", 0.0), table.surface_z + it->extents.height / 2.0);
    scene.objects.push_back(std::move(inst));
  }
  try {
    validate_scene(scene);
  } catch (const InvariantError& ex) {
    throw ApiError(400, "bad_request", std::string("invalid scene: ") + ex.what());
  }
  return scene;
}

json outcome_payload(const PipelineTrace& trace) {
  json out = {{"outcome", trace.outcome ? json(std::string(to_string(trace.outcome->outcome))) : json(nullptr)},
              {"grounded_id", trace.grounding ? json(trace.grounding->selected_id) : json(nullptr)}};
  if (trace.outcome && trace.outcome->blocking_id) out["blocking_id"] = *trace.outcome->blocking_id;
  if (trace.outcome && trace.outcome->grasped_id) out["grasped_id"] = *trace.outcome->grasped_id;
  if (!trace.error.empty()) out["error"] = trace.error;
  if (trace.plan) out["plan"] = trace.plan->to_json();
  return out;
}

}  // namespace

SessionService::SessionService(ServiceConfig config) : config_(std::move(config)) {
  id_salt_ = std::random_device{}();
  id_salt_ = (id_salt_ << 32) ^ std::random_device{}();
}

SessionService::~SessionService() { shutdown(); }

void SessionService::shutdown() {
  stopping_ = true;
  std::lock_guard lock(mutex_);
  for (auto& [_, e] : sessions_) e->event_cv.notify_all();
}

std::shared_ptr<SessionService::Entry> SessionService::find(const std::string& id) {
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw ApiError(404, "not_found", "unknown session '" + id + "'");
  return it->second;
}

std::size_t SessionService::session_count() const {
  std::lock_guard lock(mutex_);
  return sessions_.size();
}

std::size_t SessionService::evict_idle(Clock::time_point now) {
  std::lock_guard lock(mutex_);
  std::size_t n = 0;
  for (auto it = sessions_.begin(); it != sessions_.end();) {
    const Clock::time_point last{Clock::duration{it->second->last_active.load()}};
    if (now - last > config_.idle_timeout) {
      it->second->event_cv.notify_all();
      it = sessions_.erase(it);
      ++n;
    } else {
      ++it;
    }
  }
  return n;
}

template <typename Fn>
json SessionService::with_session(const std::string& id, Fn&& fn) {
  evict_idle();
  auto entry = find(id);
  std::lock_guard lock(entry->op_mutex);
  entry->touch();
  try {
    json out = fn(*entry);
    entry->flush_transitions();
    return out;
  } catch (const PreconditionError& ex) {
    entry->flush_transitions();
    throw ApiError(409, "illegal_state", ex.what());
  } catch (const BackendError& ex) {
    throw ApiError(502, "backend_error", ex.what());
  }
}

json SessionService::create_session(const json& body) {
  if (!body.is_object()) throw ApiError(400, "bad_request", "expected a JSON object");
  evict_idle();

  std::vector<std::string> users;
  if (body.contains("users")) {
    if (!body["users"].is_array()) throw ApiError(400, "bad_request", "users must be an array");
    for (const auto& u : body["users"]) {
      if (!u.is_string()) throw ApiError(400, "bad_request", "user ids must be strings");
      users.push_back(u.get<std::string>());
    }
  } else {
    users = {"user1"};
  }
  if (users.empty() || users.size() > Session::kMaxUsers) {
    throw ApiError(400, "bad_request", "a session needs 1 to 3 users");
  }

  auto entry = std::make_shared<Entry>();
  {
    std::lock_guard lock(mutex_);
    const std::uint64_t n = next_id_++;
    entry->id = fmt::format("s{}-{:08x}", n, static_cast<std::uint32_t>(mix64(id_salt_ ^ n)));
    entry->seed = body.contains("seed") ? body["seed"].get<std::uint64_t>() : mix64(id_salt_ + n);
  }

  Scene scene;
  try {
    if (body.contains("scene")) {
      scene = scene_from_spec(config_.catalog, body["scene"], SamplingOptions{}.table);
    } else {
      const std::size_t n_objects = body.value("objects", std::size_t{5});
      scene = sample_scene(config_.catalog, n_objects, entry->seed);
    }
  } catch (const PlacementError& ex) {
    throw ApiError(400, "bad_request", ex.what());
  } catch (const PreconditionError& ex) {
    throw ApiError(400, "bad_request", ex.what());
  } catch (const json::exception& ex) {
    throw ApiError(400, "bad_request", ex.what());
  }

  const json backend_cfg = body.value("backend", json{{"kind", "mock"}});
  const std::string kind = backend_cfg.value("kind", "mock");
  std::shared_ptr<const ChatBackend> backend;
  try {
    if (kind == "mock") {
      MockScript script;
      for (const auto& u : users) script.users.push_back({u, {}, std::nullopt});
      if (backend_cfg.contains("failure_injection")) {
        script.failure_injection = MockScript::from_json({{"users", json::array()},
                                                          {"failure_injection", backend_cfg["failure_injection"]}})
                                       .failure_injection;
      }
      backend = std::make_shared<ScriptedMock>(std::move(script));
    } else if (kind == "remote") {
      if (config_.remote_factory) {
        backend = config_.remote_factory(backend_cfg);
      } else {
        RemoteChatConfig rc = config_.run.llm;
        rc.base_url = backend_cfg.value("base_url", rc.base_url);
        rc.model_id = backend_cfg.value("model", rc.model_id);
        rc.temperature = backend_cfg.value("temperature", rc.temperature);
        rc.api_key_env = backend_cfg.value("api_key_env", rc.api_key_env);
        backend = std::make_shared<RemoteChat>(rc);
      }
    } else {
      throw ApiError(400, "bad_request", "backend.kind must be 'mock' or 'remote'");
    }
  } catch (const ParseError& ex) {
    throw ApiError(400, "bad_request", ex.what());
  } catch (const InvariantError& ex) {
    throw ApiError(400, "bad_request", ex.what());
  } catch (const PreconditionError& ex) {
    throw ApiError(400, "bad_request", ex.what());
  }

  entry->backend_kind = kind;
  entry->created_at = std::chrono::system_clock::now();
  try {
    entry->session.emplace(backend, std::move(scene), users, config_.prompts);
    entry->session->brief();
  } catch (const PreconditionError& ex) {
    throw ApiError(400, "bad_request", ex.what());
  }
  entry->touch();
  entry->flush_transitions();
  entry->emit(EventKind::scene_update, scene_payload(entry->session->scene()));

  json handle = entry->state();
  handle["backend"] = kind;
  handle["created_at"] = std::chrono::duration_cast<std::chrono::seconds>(entry->created_at.time_since_epoch()).count();
  handle["users"] = users;
  {
    std::lock_guard lock(mutex_);
    sessions_[entry->id] = entry;
  }
  return handle;
}

json SessionService::get_session(const std::string& id) {
  return with_session(id, [](Entry& e) {
    json out = e.state();
    out["backend"] = e.backend_kind;
    out["users"] = e.session->users();
    out["created_at"] = std::chrono::duration_cast<std::chrono::seconds>(e.created_at.time_since_epoch()).count();
    return out;
  });
}

json SessionService::post_message(const std::string& id, const json& body) {
  const auto user = require_string(body, "user");
  const auto text = require_string(body, "text");
  return with_session(id, [&](Entry& e) {
    auto reply = e.session->post_user_utterance(user, text);
    e.emit(EventKind::assistant_message, {{"user", user}, {"content", reply.content}});
    json out = e.state();
    out["reply"] = reply.content;
    if (const auto& p = e.session->last_parse(); p && p->failure && *p->failure != ParseFailure::no_command) {
      out["parse_failure"] = std::string(to_string(*p->failure));
    }
    return out;
  });
}

json SessionService::post_confirmation(const std::string& id, const json& body) {
  const auto user = require_string(body, "user");
  if (!body.contains("accept") || !body["accept"].is_boolean()) {
    throw ApiError(400, "bad_request", "field 'accept' must be a boolean");
  }
  const bool accept = body["accept"].get<bool>();
  return with_session(id, [&](Entry& e) {
    auto reply = e.session->confirm_target(user, accept);
    e.emit(EventKind::assistant_message, {{"user", user}, {"content", reply.content}});
    json out = e.state();
    out["reply"] = reply.content;
    return out;
  });
}

json SessionService::step_execution(const std::string& id) {
  return with_session(id, [&](Entry& e) {
    const TargetCommand cmd = e.session->begin_execution();
    e.flush_transitions();
    Rng rng(derive_seed(e.seed ^ config_.run.noise.seed, static_cast<std::uint64_t>(++e.executions)));
    const auto trace = run_grasp_pipeline(e.session->scene(), cmd, config_.run, rng);
    if (trace.plan) {
      const auto& wps = trace.plan->waypoints;
      for (std::size_t i = 0; i < wps.size(); ++i) {
        const auto& p = wps[i].gripper_pose.transform.translation;
        e.emit(EventKind::plan_waypoint, {{"index", i},
                                          {"count", wps.size()},
                                          {"phase", std::string(to_string(wps[i].phase))},
                                          {"position", {p.x(), p.y(), p.z()}},
                                          {"aperture", wps[i].aperture}});
        if (config_.waypoint_delay.count() > 0) std::this_thread::sleep_for(config_.waypoint_delay);
      }
    }
    json outcome = outcome_payload(trace);
    e.emit(EventKind::outcome, outcome);
    e.session->finish_execution(trace.report());
    e.flush_transitions();
    e.emit(EventKind::scene_update, scene_payload(e.session->scene()));
    json out = e.state();
    out["execution"] = std::move(outcome);
    return out;
  });
}

json SessionService::post_feedback(const std::string& id, const json& body) {
  const auto text = require_string(body, "outcome");
  const auto outcome = feedback_from_string(text);
  if (!outcome) throw ApiError(400, "bad_request", "outcome must be 'success' or 'failure'");
  return with_session(id, [&](Entry& e) {
    auto reply = e.session->report_feedback(*outcome);
    e.emit(EventKind::assistant_message, {{"content", reply.content}});
    e.flush_transitions();
    e.emit(EventKind::scene_update, scene_payload(e.session->scene()));
    json out = e.state();
    out["reply"] = reply.content;
    return out;
  });
}

json SessionService::get_scene(const std::string& id) {
  return with_session(id, [](Entry& e) {
    json out = scene_payload(e.session->scene());
    out["session_id"] = e.id;
    out["state"] = std::string(to_string(e.session->phase()));
    return out;
  });
}

std::vector<SessionEvent> SessionService::events_after(const std::string& id, std::uint64_t after,
                                                       std::chrono::milliseconds wait) {
  auto entry = find(id);
  std::unique_lock lock(entry->event_mutex);
  auto ready = [&] { return entry->events.size() > after || stopping_; };
  if (wait.count() > 0) entry->event_cv.wait_for(lock, wait, ready);
  std::vector<SessionEvent> out;
  if (entry->events.size() > after) out.assign(entry->events.begin() + static_cast<std::ptrdiff_t>(after), entry->events.end());
  return out;
}

// ---------------------------------------------------------------------------
// HTTP

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& ex) {
    throw ApiError(400, "bad_request", std::string("invalid JSON: ") + ex.what());
  }
}

template <typename Fn>
void guarded(httplib::Response& res, int ok_status, Fn&& fn) {
  try {
    send_json(res, ok_status, fn());
  } catch (const ApiError& ex) {
    send_json(res, ex.status(), {{"code", ex.code()}, {"message", ex.what()}});
  } catch (const std::exception& ex) {
    send_json(res, 500, {{"code", "internal"}, {"message", ex.what()}});
  }
}

}  // namespace

HttpServer::HttpServer(SessionService& service, std::string cors_origin)
    : service_(service), cors_origin_(std::move(cors_origin)), server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

HttpServer::~HttpServer() { stop(); }

void HttpServer::install_routes() {
  auto& srv = *server_;
  srv.set_post_routing_handler([this](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", cors_origin_);
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type, Last-Event-ID");
  });
  srv.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  srv.Get("/health", [](const httplib::Request&, httplib::Response& res) { send_json(res, 200, {{"status", "ok"}}); });

  srv.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, 201, [&] { return service_.create_session(parse_body(req)); });
  });
  srv.Get(R"(/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, 200, [&] { return service_.get_session(req.matches[1]); });
  });
  srv.Get(R"(/sessions/([^/]+)/scene)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, 200, [&] { return service_.get_scene(req.matches[1]); });
  });
  srv.Post(R"(/sessions/([^/]+)/messages)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, 200, [&] { return service_.post_message(req.matches[1], parse_body(req)); });
  });
  srv.Post(R"(/sessions/([^/]+)/confirm)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, 200, [&] { return service_.post_confirmation(req.matches[1], parse_body(req)); });
  });
  srv.Post(R"(/sessions/([^/]+)/execute)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, 200, [&] { return service_.step_execution(req.matches[1]); });
  });
  srv.Post(R"(/sessions/([^/]+)/feedback)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, 200, [&] { return service_.post_feedback(req.matches[1], parse_body(req)); });
  });

  srv.Get(R"(/sessions/([^/]+)/events)", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    std::uint64_t since = 0;
    try {
      if (req.has_param("since")) {
        since = std::stoull(req.get_param_value("since"));
      } else if (req.has_header("Last-Event-ID")) {
        since = std::stoull(req.get_header_value("Last-Event-ID"));
      }
      service_.events_after(id, since);
    } catch (const ApiError& ex) {
      send_json(res, ex.status(), {{"code", ex.code()}, {"message", ex.what()}});
      return;
    } catch (const std::exception&) {
      send_json(res, 400, {{"code", "bad_request"}, {"message", "invalid event cursor"}});
      return;
    }
    auto cursor = std::make_shared<std::uint64_t>(since);
    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider("text/event-stream", [this, id, cursor](std::size_t, httplib::DataSink& sink) {
      if (service_.stopping()) {
        sink.done();
        return true;
      }
      std::vector<SessionEvent> events;
      try {
        events = service_.events_after(id, *cursor, std::chrono::milliseconds(250));
      } catch (const ApiError&) {
        sink.done();
        return true;
      }
      for (const auto& ev : events) {
        const std::string frame =
            fmt::format("id: {}\nevent: {}\ndata: {}\n\n", ev.seq, to_string(ev.kind), ev.to_json().dump());
        if (!sink.write(frame.data(), frame.size())) return false;
        *cursor = ev.seq;
      }
      if (events.empty()) {
        // Comment line keeps proxies from timing out and detects closed clients.
        static constexpr char kPing[] = ": ping\n\n";
        if (!sink.write(kPing, sizeof(kPing) - 1)) return false;
      }
      return true;
    });
  });
}

bool HttpServer::listen(const std::string& host, int port) { return server_->listen(host, port); }

int HttpServer::bind_any_port(const std::string& host) { return server_->bind_to_any_port(host); }

bool HttpServer::serve() { return server_->listen_after_bind(); }

void HttpServer::stop() {
  service_.shutdown();
  if (server_) server_->stop();
}

void HttpServer::wait_until_ready() const { server_->wait_until_ready(); }

}  // namespace walle
