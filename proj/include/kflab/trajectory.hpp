#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace kflab::env {

enum class EventKind { button_press, lemon_grasp, lemon_drop, completion_press };

std::string event_kind_name(EventKind k);
EventKind event_kind_from_name(const std::string& s);

struct EventRecord {
  int tick = 0;
  EventKind kind = EventKind::button_press;
  // button_press: the digit; lemon_drop: 1 if the lemon landed in the bowl.
  int value = 0;
};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

// Ground-truth progress. Only the fields of the active task are meaningful.
struct LatentState {
  std::vector<int> digits_entered;          // password tasks
  std::vector<int> target_password;         // variable_password
  int lemons_inserted = 0;                  // ingredient
  bool button_pressed = false;              // ingredient completion
  std::vector<Vec2> lemon_positions;        // ingredient: visible lemons
};

}  // namespace kflab::env

namespace kflab::expert {

struct TickRecord {
  int tick = 0;
  std::vector<double> obs;      // flattened observation as seen (with noise)
  std::vector<double> action;   // {target_x, target_y, actuate}; empty on the terminal record
  env::LatentState latent;
  std::vector<env::EventRecord> events;  // fired on entry to this tick
};

struct Trajectory {
  std::string spec_digest;
  uint64_t seed = 0;
  std::string style_id;
  double score = 0.0;
  std::vector<TickRecord> ticks;

  int length() const { return static_cast<int>(ticks.size()); }
  // number of ticks that carry an action (terminal tick does not)
  int action_ticks() const { return length() > 0 ? length() - 1 : 0; }
};

}  // namespace kflab::expert
