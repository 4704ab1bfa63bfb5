#include "kflab/detector_mock.hpp"

#include <httplib.h>

#include <chrono>
#include <map>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "kflab/detector_remote.hpp"
#include "kflab/errors.hpp"

namespace kflab::keyframe {

struct MockDetectorService::Impl {
  Options opt;
  httplib::Server server;
  std::thread thread;
  int port = 0;

  std::mutex mu;
  std::map<std::string, std::map<long long, bool>> replays;
  std::string selected;

  explicit Impl(Options o) : opt(std::move(o)) {
    server.Post("/detect", [this](const httplib::Request& req, httplib::Response& res) {
      handle_detect(req, res);
    });
    server.Post("/replay", [this](const httplib::Request& req, httplib::Response& res) {
      handle_replay(req, res);
    });
  }

  void handle_detect(const httplib::Request& req, httplib::Response& res) {
    const auto t0 = std::chrono::steady_clock::now();
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::exception&) {
      res.status = 400;
      res.set_content("{\"error\":\"malformed request body\"}", "application/json");
      return;
    }
    RemoteRequest r;
    try {
      r = RemoteRequest::from_json(body);
    } catch (const nlohmann::json::exception&) {
      res.status = 400;
      res.set_content("{\"error\":\"missing request fields\"}", "application/json");
      return;
    }
    if (r.protocol_version != kDetectorProtocolVersion) {
      res.status = 400;
      res.set_content("{\"error\":\"unknown protocol_version\"}", "application/json");
      return;
    }

    bool verdict = false;
    {
      std::lock_guard<std::mutex> lock(mu);
      auto it = replays.find(selected);
      if (it != replays.end()) {
        auto v = it->second.find(r.query_tick);
        if (v != it->second.end()) verdict = v->second;
      }
    }

    if (opt.artificial_latency_ms > 0)
      std::this_thread::sleep_for(std::chrono::milliseconds(opt.artificial_latency_ms));

    const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                             std::chrono::steady_clock::now() - t0)
                             .count();
    nlohmann::json out;
    if (!opt.force_verdict.empty())
      out = {{"verdict", opt.force_verdict}, {"latency_ms", static_cast<int>(elapsed)}};
    else
      out = {{"verdict", verdict ? "YES" : "NO"}, {"latency_ms", static_cast<int>(elapsed)}};
    res.set_content(out.dump(), "application/json");
  }

  void handle_replay(const httplib::Request& req, httplib::Response& res) {
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body);
      const auto key = body.at("replay_key").get<std::string>();
      std::map<long long, bool> table;
      for (const auto& v : body.at("verdicts"))
        table[v.at(0).get<long long>()] = v.at(1).get<int>() != 0;
      std::lock_guard<std::mutex> lock(mu);
      replays[key] = std::move(table);
      selected = key;
    } catch (const nlohmann::json::exception&) {
      res.status = 400;
      res.set_content("{\"error\":\"malformed replay payload\"}", "application/json");
      return;
    }
    res.set_content("{\"ok\":true}", "application/json");
  }
};

MockDetectorService::MockDetectorService() : MockDetectorService(Options{}) {}

MockDetectorService::MockDetectorService(Options opt)
    : impl_(std::make_unique<Impl>(std::move(opt))) {}

MockDetectorService::~MockDetectorService() { stop(); }

void MockDetectorService::load_replay(const std::string& key,
                                      std::vector<std::pair<long long, bool>> verdicts) {
  std::lock_guard<std::mutex> lock(impl_->mu);
  auto& table = impl_->replays[key];
  table.clear();
  for (const auto& [tick, v] : verdicts) table[tick] = v;
  if (impl_->selected.empty()) impl_->selected = key;
}

void MockDetectorService::select_replay(const std::string& key) {
  std::lock_guard<std::mutex> lock(impl_->mu);
  impl_->selected = key;
}

void MockDetectorService::start(int port) {
  if (port == 0) {
    impl_->port = impl_->server.bind_to_any_port("127.0.0.1");
  } else {
    if (!impl_->server.bind_to_port("127.0.0.1", port))
      throw Error("mock detector: cannot bind port " + std::to_string(port));
    impl_->port = port;
  }
  impl_->thread = std::thread([this]() { impl_->server.listen_after_bind(); });
  while (!impl_->server.is_running())
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
}

void MockDetectorService::stop() {
  if (impl_ && impl_->server.is_running()) {
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
  }
}

int MockDetectorService::port() const { return impl_->port; }

std::string MockDetectorService::endpoint() const {
  return "127.0.0.1:" + std::to_string(impl_->port);
}

}  // namespace kflab::keyframe
