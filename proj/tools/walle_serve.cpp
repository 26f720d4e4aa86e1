// HTTP session service for the waiter UI.
#include <pthread.h>

#include <csignal>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "walle/service.hpp"

int main(int argc, char** argv) {
  CLI::App app{"walle-serve: multi-session grasping assistant over HTTP"};
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string catalog_path = std::string(WALLE_DATA_DIR) + "/catalog.json";
  std::string prompts_dir = std::string(WALLE_DATA_DIR) + "/prompts";
  std::string config_path;
  std::string cors = "*";
  int waypoint_delay_ms = 0;
  int idle_minutes = 30;

  app.add_option("--host", host)->capture_default_str();
  app.add_option("--port", port)->capture_default_str();
  app.add_option("--catalog", catalog_path)->capture_default_str();
  app.add_option("--prompts", prompts_dir, "directory with the prompt templates")->capture_default_str();
  app.add_option("--config", config_path, "run-config JSON");
  app.add_option("--cors-origin", cors)->capture_default_str();
  app.add_option("--waypoint-delay-ms", waypoint_delay_ms, "pause between streamed plan waypoints")->capture_default_str();
  app.add_option("--idle-timeout-min", idle_minutes)->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  // Signals are taken by a dedicated thread so shutdown runs outside a signal handler.
  sigset_t stop_signals;
  sigemptyset(&stop_signals);
  sigaddset(&stop_signals, SIGINT);
  sigaddset(&stop_signals, SIGTERM);
  sigaddset(&stop_signals, SIGUSR1);  // internal wake-up
  pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);

  try {
    walle::ServiceConfig cfg;
    cfg.catalog = walle::load_catalog(catalog_path);
    if (!config_path.empty()) cfg.run = walle::RunConfig::load(config_path);
    if (std::filesystem::exists(prompts_dir)) cfg.prompts = walle::PromptBundle::load(prompts_dir);
    cfg.waypoint_delay = std::chrono::milliseconds(waypoint_delay_ms);
    cfg.idle_timeout = std::chrono::minutes(idle_minutes);

    walle::SessionService service(std::move(cfg));
    walle::HttpServer server(service, cors);
    std::thread waiter([&] {
      int sig = 0;
      sigwait(&stop_signals, &sig);
      if (sig != SIGUSR1) server.stop();
    });
    std::cout << "listening on " << host << ':' << port << std::endl;
    const bool ok = server.listen(host, port);
    pthread_kill(waiter.native_handle(), SIGUSR1);  // no-op if a signal already stopped us
    waiter.join();
    if (!ok) {
      std::cerr << "walle-serve: cannot bind " << host << ':' << port << '\n';
      return 1;
    }
  } catch (const std::exception& ex) {
    std::cerr << "walle-serve: " << ex.what() << '\n';
    return 1;
  }
  return 0;
}
