#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace kflab::keyframe {

inline constexpr int kDetectorProtocolVersion = 1;

// Wire request: JSON body POSTed to /detect. Observations travel as raw
// feature arrays.
struct RemoteRequest {
  int protocol_version = kDetectorProtocolVersion;
  std::string task_id;
  std::string prompt_template_id;
  long long query_tick = 0;
  std::vector<double> current_obs;
  std::vector<double> previous_obs;

  nlohmann::json to_json() const;
  static RemoteRequest from_json(const nlohmann::json& j);
};

struct RemoteResponse {
  std::string verdict;  // "YES" | "NO"; anything else is a protocol violation
  int latency_ms = 0;
};

class RemoteDetectorClient {
 public:
  // endpoint: "host:port"
  explicit RemoteDetectorClient(const std::string& endpoint);

  // Throws DetectorError on transport failure, malformed body or a verdict
  // outside {YES, NO}.
  RemoteResponse detect(const RemoteRequest& req);

 private:
  std::string host_;
  int port_ = 0;
};

}  // namespace kflab::keyframe
