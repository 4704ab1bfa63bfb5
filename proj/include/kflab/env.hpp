#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kflab/rng.hpp"
#include "kflab/trajectory.hpp"

namespace kflab::env {

enum class TaskId { fixed_password, variable_password, ingredient_insertion };
enum class LayoutSeedPolicy { per_episode, fixed };

std::string task_name(TaskId t);
TaskId task_from_name(const std::string& s);

// Workspace is the unit square. Fixtures and dynamics constants shared by
// all three tasks:
inline constexpr double kArmSpeed = 0.05;          // max arm travel per tick
inline constexpr int kPressRefractoryTicks = 25;   // min ticks between presses
inline constexpr double kBowlRadius = 0.10;
inline constexpr Vec2 kBowlCenter{0.15, 0.82};
inline constexpr Vec2 kCompletionButton{0.85, 0.82};
inline constexpr int kMaxObjectSlots = 10;
inline constexpr int kTargetBlockDim = 12;  // 4 digits x 3 symbols

// The fixed-password code. Seven entries over digits 1..7's first four.
inline constexpr std::array<int, 7> kFixedPassword{1, 1, 1, 2, 1, 3, 4};
inline constexpr int kFixedDigits = 7;   // digits 1..7 scattered over 9 cells
inline constexpr int kFixedCells = 9;
inline constexpr int kVariableDigits = 3;
inline constexpr int kVariableCells = 3;
inline constexpr int kVariableLen = 4;

struct EnvSpec {
  TaskId task_id = TaskId::fixed_password;
  int ticks_per_second = 10;
  int max_ticks = 400;
  LayoutSeedPolicy button_layout_seed_policy = LayoutSeedPolicy::per_episode;
  int nuisance_dim = 8;
  double obs_noise_std = 0.01;
  double press_radius = 0.08;
  Vec2 home_pose{0.5, 0.95};

  static EnvSpec defaults(TaskId t);
  void validate() const;  // throws ConfigError naming the offending field

  nlohmann::json to_json() const;
  static EnvSpec from_json(const nlohmann::json& j);
  std::string digest() const;

  int password_length() const;      // 7 or 4 (password tasks)
  int progress_classes() const;     // 7 / 4 / 3
  int obs_dim() const;
  int layout_cells() const;
  int layout_digits() const;
};

struct Observation {
  std::vector<double> layout;           // cells x digits one-hot, row-major
  Vec2 arm_pos;
  double gripper = 0.0;
  std::vector<double> object_slots;     // kMaxObjectSlots x (x, y, present)
  std::vector<double> target_password;  // kTargetBlockDim, zeros unless variable task
  std::vector<double> nuisance;

  std::vector<double> flat() const;
  // digits of the target block; only meaningful for variable_password
  std::vector<int> decode_target() const;
};

struct Action {
  Vec2 target;
  double actuate = 0.0;
};

struct StepResult {
  Observation obs;
  LatentState latent;
  bool done = false;
  std::vector<EventRecord> events;
};

class Env {
 public:
  Env(const EnvSpec& spec, uint64_t seed);

  const EnvSpec& spec() const { return spec_; }
  uint64_t seed() const { return seed_; }
  int tick() const { return tick_; }
  bool done() const { return done_; }
  const Observation& obs() const { return obs_; }
  const LatentState& latent() const { return latent_; }

  StepResult step(const Action& a);  // throws UsageError when done

  // Noise-stripped render of the current state.
  Observation clean_observation() const;

  // Privileged-state injection hook: overrides password progress and leaves
  // everything else untouched. Password tasks only.
  void inject_password_progress(std::vector<int> digits);

  // Expert/introspection helpers.
  Vec2 digit_cell_center(int digit) const;  // password tasks
  int carried_lemon() const { return carrying_; }

 private:
  Observation render(bool with_noise);
  void fire_password_press(std::vector<EventRecord>& events);
  void step_ingredient(const Action& a, std::vector<EventRecord>& events);
  void refresh_latent();

  EnvSpec spec_;
  uint64_t seed_ = 0;
  int tick_ = 0;
  bool done_ = false;

  std::vector<int> cell_digit_;      // per cell, 0 = empty
  std::vector<int> target_password_; // variable task
  std::vector<double> nuisance_;
  Vec2 arm_;
  double gripper_ = 0.0;
  bool teleport_pending_ = false;
  long long last_press_tick_ = -1000000;
  std::vector<int> digits_entered_;

  struct Lemon {
    Vec2 pos;
    bool present = true;
    bool in_bowl = false;
  };
  std::vector<Lemon> lemons_;
  int carrying_ = -1;
  int lemons_inserted_ = 0;
  bool completion_pressed_ = false;

  LatentState latent_;
  Observation obs_;
  Rng noise_rng_;
};

// Positional-match fraction per the task's scoring rule. Throws UsageError
// when the trajectory was produced under a different spec.
double score(const EnvSpec& spec, const expert::Trajectory& traj);

// One-hot progress vector: length 7 / 4 / 3; count clamps at the last class.
std::vector<double> privileged_encoding(const EnvSpec& spec, const LatentState& latent);

int progress_class(const EnvSpec& spec, const LatentState& latent);

// Best expected score achievable by a fixed function of the decision-point
// observation. Brute force over the password distribution; password tasks
// only (UsageError otherwise).
double memoryless_ceiling(const EnvSpec& spec);

// Enumeration core for the ceiling: mean over `passwords` of
// (modal digit count) / password length.
double memoryless_ceiling_for(const std::vector<std::vector<int>>& passwords);

// Count of salient-task events reflected in the latent: presses or insertions.
int salient_progress(TaskId task, const LatentState& latent);

}  // namespace kflab::env
