#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace kflab::keyframe {

// In-process detector service implementing the /detect wire protocol by
// replay lookup: verdicts are keyed by query tick under a named replay.
// Also serves POST /replay to load and select a replay remotely, and can
// inject artificial latency or a forced (possibly malformed) verdict for
// protocol tests.
class MockDetectorService {
 public:
  struct Options {
    int artificial_latency_ms = 0;
    std::string force_verdict;  // when nonempty, every reply uses this literal
  };

  MockDetectorService();
  explicit MockDetectorService(Options opt);
  ~MockDetectorService();

  void load_replay(const std::string& key, std::vector<std::pair<long long, bool>> verdicts);
  void select_replay(const std::string& key);

  // Binds 127.0.0.1 on an ephemeral port (or the given one) and serves on a
  // background thread.
  void start(int port = 0);
  void stop();
  int port() const;
  std::string endpoint() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace kflab::keyframe
