#include <atomic>
#include <chrono>
#include <csignal>
#include <iostream>
#include <map>
#include <thread>

#include "egl/service/server.hpp"

#include <CLI11.hpp>

using namespace egl;

namespace {

std::atomic<bool> g_reload{false};
httplib::Server* g_server = nullptr;

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig cfg = path.empty() ? RunConfig() : RunConfig::from_file(path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error("--set expects key=value, got '" + kv + "'");
    cfg.set(normalize_name(kv.substr(0, eq)), kv.substr(eq + 1));
  }
  return cfg;
}

int serve(const std::string& state, const std::string& host, int port) {
  service::Api api(state);
  if (!api.state()) std::cerr << "no build in " << state << " yet; serving 503 until reload (SIGHUP)\n";
  httplib::Server srv;
  service::mount(srv, api);
  g_server = &srv;
  std::signal(SIGHUP, [](int) { g_reload = true; });
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  std::atomic<bool> running{true};
  std::thread watcher([&] {
    while (running) {
      if (g_reload.exchange(false)) {
        try {
          api.reload();
          std::cerr << "reloaded state from " << state << "\n";
        } catch (const std::exception& e) {
          std::cerr << "reload failed, keeping previous state: " << e.what() << "\n";
        }
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(200));
    }
  });
  std::cerr << "listening on " << host << ":" << port << "\n";
  const bool ok = srv.listen(host, port);
  running = false;
  watcher.join();
  if (!ok) {
    std::cerr << "error: cannot listen on " << host << ":" << port << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"entity-graph learning engine"};
  app.require_subcommand(1);

  std::string config, out = "out";
  std::vector<std::string> overrides;
  bool no_resume = false;
  // Each stage command runs the pipeline up to and including that stage,
  // reusing cached upstream outputs in --out.
  const std::map<std::string, std::pair<std::string, std::string>> stages = {
      {"gen-data", {"world", "generate the synthetic world and its behavior logs"}},
      {"extract", {"extract", "tag behavior logs into user entity sequences"}},
      {"candgen", {"candgen", "train co-occurrence embeddings and generate candidate edges"}},
      {"split", {"split", "hold out truth edges for evaluation"}},
      {"train-alpc", {"train-alpc", "train the ranking model snapshots"}},
      {"ensemble", {"ensemble", "train the snapshot ensemble and export entity embeddings"}},
      {"filter-edges", {"filter", "keep candidate edges above the adaptive threshold"}},
      {"build-store", {"build-store", "merge filtered edges and feedback into the graph store"}},
      {"build-index", {"build-index", "build the user preference index"}},
      {"eval", {"evaluate", "evaluate and write the build manifest"}},
      {"pipeline", {"", "run every stage and write the build manifest"}},
  };
  std::string chosen;
  for (const auto& [cmd, what] : stages) {
    auto* sub = app.add_subcommand(cmd, what.second);
    sub->add_option("--config,-c", config, "flat key = value config file");
    sub->add_option("--out,-o", out, "working directory")->capture_default_str();
    sub->add_option("--set", overrides, "override a config key (key=value), repeatable");
    sub->add_flag("--no-resume", no_resume, "recompute every stage");
    sub->callback([&chosen, cmd = cmd] { chosen = cmd; });
  }

  std::string state = "out", host = "127.0.0.1";
  int port = 8080;
  auto* srv = app.add_subcommand("serve", "serve the HTTP API over a built state directory");
  srv->add_option("--state", state, "pipeline output directory")->capture_default_str();
  srv->add_option("--port", port, "listen port")->capture_default_str();
  srv->add_option("--host", host, "listen address")->capture_default_str();

  auto* keys = app.add_subcommand("config-keys", "list every config key with its default");

  CLI11_PARSE(app, argc, argv);
  try {
    if (srv->parsed()) return serve(state, host, port);
    if (keys->parsed()) {
      for (const auto& k : config_keys())
        std::cout << k.name << " = " << k.fallback << "\t# " << k.help << "\n";
      return 0;
    }
    const auto cfg = load_config(config, overrides);
    service::PipelineOptions opt{&std::cerr, !no_resume, stages.at(chosen).first};
    const auto manifest = service::run_pipeline(cfg, out, opt);
    if (!opt.stop_after.empty() && opt.stop_after != "evaluate") return 0;
    std::cout << manifest.at("metrics").dump(2) << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
