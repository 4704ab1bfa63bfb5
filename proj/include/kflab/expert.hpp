#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "kflab/env.hpp"
#include "kflab/trajectory.hpp"

namespace kflab::expert {

enum class Ordering { nearest_first, random_order };

// One teleoperator persona: how fast it paces waypoints, how long it dwells,
// and how sloppily it aims.
struct OperatorStyle {
  std::string id = "default";
  double speed_scale = 1.0;         // fraction of the env arm speed
  int pause_ticks = 4;              // dwell after each completed waypoint
  double waypoint_jitter_std = 0.01;
  Ordering ordering = Ordering::nearest_first;  // lemon pick order (ingredient)

  nlohmann::json to_json() const;
  static OperatorStyle from_json(const nlohmann::json& j);
};

struct StyleWeight {
  OperatorStyle style;
  double weight = 1.0;
};

std::vector<StyleWeight> default_style_mix(env::TaskId t);

// Tick-level scripted controller. Drives one episode; also usable as the
// agent inside evaluation rollouts.
class ExpertController {
 public:
  ExpertController(const env::EnvSpec& spec, const OperatorStyle& style, uint64_t seed);

  env::Action act(const env::Env& e);
  void observe_events(const std::vector<env::EventRecord>& events);

 private:
  enum class Phase { travel, hold, dwell };
  void plan_next(const env::Env& e);

  env::EnvSpec spec_;
  OperatorStyle style_;
  Rng rng_;
  Phase phase_ = Phase::dwell;
  int dwell_left_ = 0;
  bool planned_ = false;
  env::Vec2 marker_;
  env::Vec2 waypoint_;
  bool press_at_waypoint_ = false;   // actuate high on arrival
  bool release_at_waypoint_ = false; // actuate low on arrival (carried drop)
  bool event_seen_ = false;
};

Trajectory demonstrate(const env::EnvSpec& spec, const OperatorStyle& style, uint64_t seed);

struct DemoDataset {
  int format_version = 1;
  env::EnvSpec spec;
  std::string spec_digest;
  uint64_t seed = 0;
  std::vector<StyleWeight> style_mix;
  int discarded = 0;  // regenerated failures during generation
  std::vector<Trajectory> trajs;

  std::string content_digest() const;  // over canonical per-tick records
};

// n demonstrations with styles drawn from the mixture. Failed demos are
// regenerated (retry cap per slot) and counted in `discarded`.
DemoDataset generate_dataset(const env::EnvSpec& spec, int n,
                             const std::vector<StyleWeight>& mix, uint64_t seed);

// Re-run the stored action sequence and compare observation streams bitwise.
bool replays_identically(const env::EnvSpec& spec, const Trajectory& traj);

// Canonical one-line serialization of a tick record (shared by file IO and
// the dataset digest).
std::string trajectory_record_line(const TickRecord& t);

}  // namespace kflab::expert
