#include "kflab/detector_remote.hpp"

#include <httplib.h>

#include "kflab/errors.hpp"

namespace kflab::keyframe {

nlohmann::json RemoteRequest::to_json() const {
  return {{"protocol_version", protocol_version},
          {"task_id", task_id},
          {"prompt_template_id", prompt_template_id},
          {"query_tick", query_tick},
          {"current_obs", current_obs},
          {"previous_obs", previous_obs}};
}

RemoteRequest RemoteRequest::from_json(const nlohmann::json& j) {
  RemoteRequest r;
  r.protocol_version = j.at("protocol_version").get<int>();
  r.task_id = j.at("task_id").get<std::string>();
  r.prompt_template_id = j.at("prompt_template_id").get<std::string>();
  r.query_tick = j.at("query_tick").get<long long>();
  r.current_obs = j.at("current_obs").get<std::vector<double>>();
  r.previous_obs = j.at("previous_obs").get<std::vector<double>>();
  return r;
}

RemoteDetectorClient::RemoteDetectorClient(const std::string& endpoint) {
  const auto colon = endpoint.rfind(':');
  if (colon == std::string::npos)
    throw ConfigError("remote endpoint must be host:port, got " + endpoint);
  host_ = endpoint.substr(0, colon);
  try {
    port_ = std::stoi(endpoint.substr(colon + 1));
  } catch (const std::exception&) {
    throw ConfigError("remote endpoint has a bad port: " + endpoint);
  }
}

RemoteResponse RemoteDetectorClient::detect(const RemoteRequest& req) {
  httplib::Client cli(host_, port_);
  cli.set_connection_timeout(2, 0);
  cli.set_read_timeout(10, 0);

  auto res = cli.Post("/detect", req.to_json().dump(), "application/json");
  if (!res)
    throw DetectorError("remote detector: transport failure", req.query_tick);
  if (res->status != 200)
    throw DetectorError("remote detector: HTTP " + std::to_string(res->status),
                        req.query_tick);

  nlohmann::json body;
  try {
    body = nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::exception&) {
    throw DetectorError("remote detector: malformed response body", req.query_tick);
  }

  RemoteResponse out;
  try {
    out.verdict = body.at("verdict").get<std::string>();
    out.latency_ms = body.at("latency_ms").get<int>();
  } catch (const nlohmann::json::exception&) {
    throw DetectorError("remote detector: response missing fields", req.query_tick);
  }
  if (out.verdict != "YES" && out.verdict != "NO")
    throw DetectorError("remote detector: protocol violation, verdict '" + out.verdict + "'",
                        req.query_tick);
  return out;
}

}  // namespace kflab::keyframe
