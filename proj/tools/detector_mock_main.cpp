#include <CLI11.hpp>

#include <chrono>
#include <csignal>
#include <iostream>
#include <thread>

#include "kflab/detector_mock.hpp"

// Standalone mock detector service. Replay tables are loaded over POST
// /replay; /detect answers by query-tick lookup in the selected replay.

namespace {
volatile std::sig_atomic_t g_stop = 0;
void handle_signal(int) { g_stop = 1; }
}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kflab mock keyframe-detector service"};
  int port = 8731;
  int latency_ms = 0;
  std::string force_verdict;
  app.add_option("--port", port, "listen port (0 = ephemeral)");
  app.add_option("--latency-ms", latency_ms, "artificial reply latency");
  app.add_option("--force-verdict", force_verdict,
                 "reply with this literal verdict (protocol tests)");
  CLI11_PARSE(app, argc, argv);

  kflab::keyframe::MockDetectorService::Options opt;
  opt.artificial_latency_ms = latency_ms;
  opt.force_verdict = force_verdict;
  kflab::keyframe::MockDetectorService service(opt);
  try {
    service.start(port);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cout << "mock detector listening on " << service.endpoint() << std::endl;

  std::signal(SIGINT, handle_signal);
  std::signal(SIGTERM, handle_signal);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  service.stop();
  return 0;
}
