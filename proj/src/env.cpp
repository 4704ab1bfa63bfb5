#include "kflab/env.hpp"

#include <algorithm>
#include <cmath>

#include "kflab/digest.hpp"
#include "kflab/errors.hpp"

namespace kflab::env {

namespace {

double dist(const Vec2& a, const Vec2& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

Vec2 fixed_cell_center(int i) {
  return {0.2 + 0.3 * (i % 3), 0.2 + 0.3 * (i / 3)};
}

Vec2 variable_cell_center(int i) { return {0.2 + 0.3 * i, 0.5}; }

Vec2 cell_center(TaskId task, int i) {
  return task == TaskId::fixed_password ? fixed_cell_center(i)
                                        : variable_cell_center(i);
}

// Lemons spawn below the fixtures, clear of the bowl and button.
constexpr double kLemonXMin = 0.08, kLemonXMax = 0.92;
constexpr double kLemonYMin = 0.08, kLemonYMax = 0.50;

// Conservative lower bound on the ticks a scripted run needs.
int min_ticks_estimate(const EnvSpec& s) {
  switch (s.task_id) {
    case TaskId::fixed_password:
      return 7 * (kPressRefractoryTicks + 20) + 40;
    case TaskId::variable_password:
      return 4 * (kPressRefractoryTicks + 20) + 40;
    case TaskId::ingredient_insertion:
      return 5 * 40 + 40;
  }
  return 0;
}

}  // namespace

std::string task_name(TaskId t) {
  switch (t) {
    case TaskId::fixed_password: return "fixed_password";
    case TaskId::variable_password: return "variable_password";
    case TaskId::ingredient_insertion: return "ingredient_insertion";
  }
  return "?";
}

TaskId task_from_name(const std::string& s) {
  if (s == "fixed_password") return TaskId::fixed_password;
  if (s == "variable_password") return TaskId::variable_password;
  if (s == "ingredient_insertion") return TaskId::ingredient_insertion;
  throw ConfigError("unknown task_id: " + s);
}

std::string event_kind_name(EventKind k) {
  switch (k) {
    case EventKind::button_press: return "press";
    case EventKind::lemon_grasp: return "grasp";
    case EventKind::lemon_drop: return "drop";
    case EventKind::completion_press: return "done_press";
  }
  return "?";
}

EventKind event_kind_from_name(const std::string& s) {
  if (s == "press") return EventKind::button_press;
  if (s == "grasp") return EventKind::lemon_grasp;
  if (s == "drop") return EventKind::lemon_drop;
  if (s == "done_press") return EventKind::completion_press;
  throw ParseError("unknown event kind: " + s);
}

EnvSpec EnvSpec::defaults(TaskId t) {
  EnvSpec s;
  s.task_id = t;
  switch (t) {
    case TaskId::fixed_password:
      s.max_ticks = 400;
      s.button_layout_seed_policy = LayoutSeedPolicy::per_episode;
      break;
    case TaskId::variable_password:
      s.max_ticks = 280;
      s.button_layout_seed_policy = LayoutSeedPolicy::fixed;
      break;
    case TaskId::ingredient_insertion:
      s.max_ticks = 400;
      s.button_layout_seed_policy = LayoutSeedPolicy::fixed;
      break;
  }
  return s;
}

void EnvSpec::validate() const {
  if (ticks_per_second <= 0) throw ConfigError("EnvSpec.ticks_per_second must be positive");
  if (max_ticks <= 0) throw ConfigError("EnvSpec.max_ticks must be positive");
  if (max_ticks < min_ticks_estimate(*this))
    throw ConfigError("EnvSpec.max_ticks below the scripted-run minimum (" +
                      std::to_string(min_ticks_estimate(*this)) + ")");
  if (nuisance_dim < 0) throw ConfigError("EnvSpec.nuisance_dim must be non-negative");
  if (obs_noise_std < 0) throw ConfigError("EnvSpec.obs_noise_std must be non-negative");
  if (press_radius <= 0 || press_radius > 0.2)
    throw ConfigError("EnvSpec.press_radius must lie in (0, 0.2]");
  if (task_id != TaskId::ingredient_insertion && press_radius >= 0.15)
    throw ConfigError("EnvSpec.press_radius must stay below half the button spacing (0.15)");
  if (home_pose.x < 0 || home_pose.x > 1 || home_pose.y < 0 || home_pose.y > 1)
    throw ConfigError("EnvSpec.home_pose must lie in the unit square");
}

nlohmann::json EnvSpec::to_json() const {
  return nlohmann::json{
      {"task_id", task_name(task_id)},
      {"ticks_per_second", ticks_per_second},
      {"max_ticks", max_ticks},
      {"button_layout_seed_policy",
       button_layout_seed_policy == LayoutSeedPolicy::per_episode ? "per_episode" : "fixed"},
      {"nuisance_dim", nuisance_dim},
      {"obs_noise_std", obs_noise_std},
      {"press_radius", press_radius},
      {"home_pose", {home_pose.x, home_pose.y}},
  };
}

EnvSpec EnvSpec::from_json(const nlohmann::json& j) {
  EnvSpec s = defaults(task_from_name(j.at("task_id").get<std::string>()));
  if (j.contains("ticks_per_second")) s.ticks_per_second = j.at("ticks_per_second").get<int>();
  if (j.contains("max_ticks")) s.max_ticks = j.at("max_ticks").get<int>();
  if (j.contains("button_layout_seed_policy")) {
    const auto p = j.at("button_layout_seed_policy").get<std::string>();
    if (p == "per_episode") s.button_layout_seed_policy = LayoutSeedPolicy::per_episode;
    else if (p == "fixed") s.button_layout_seed_policy = LayoutSeedPolicy::fixed;
    else throw ConfigError("EnvSpec.button_layout_seed_policy: " + p);
  }
  if (j.contains("nuisance_dim")) s.nuisance_dim = j.at("nuisance_dim").get<int>();
  if (j.contains("obs_noise_std")) s.obs_noise_std = j.at("obs_noise_std").get<double>();
  if (j.contains("press_radius")) s.press_radius = j.at("press_radius").get<double>();
  if (j.contains("home_pose")) {
    s.home_pose.x = j.at("home_pose").at(0).get<double>();
    s.home_pose.y = j.at("home_pose").at(1).get<double>();
  }
  s.validate();
  return s;
}

std::string EnvSpec::digest() const { return digest_of(to_json().dump()); }

int EnvSpec::password_length() const {
  switch (task_id) {
    case TaskId::fixed_password: return 7;
    case TaskId::variable_password: return kVariableLen;
    default: throw UsageError("password_length: not a password task");
  }
}

int EnvSpec::progress_classes() const {
  switch (task_id) {
    case TaskId::fixed_password: return 7;
    case TaskId::variable_password: return 4;
    case TaskId::ingredient_insertion: return 3;
  }
  return 0;
}

int EnvSpec::layout_cells() const {
  switch (task_id) {
    case TaskId::fixed_password: return kFixedCells;
    case TaskId::variable_password: return kVariableCells;
    case TaskId::ingredient_insertion: return 0;
  }
  return 0;
}

int EnvSpec::layout_digits() const {
  switch (task_id) {
    case TaskId::fixed_password: return kFixedDigits;
    case TaskId::variable_password: return kVariableDigits;
    case TaskId::ingredient_insertion: return 0;
  }
  return 0;
}

int EnvSpec::obs_dim() const {
  return layout_cells() * layout_digits() + 2 + 1 + kMaxObjectSlots * 3 +
         kTargetBlockDim + nuisance_dim;
}

std::vector<double> Observation::flat() const {
  std::vector<double> v;
  v.reserve(layout.size() + 3 + object_slots.size() + target_password.size() + nuisance.size());
  v.insert(v.end(), layout.begin(), layout.end());
  v.push_back(arm_pos.x);
  v.push_back(arm_pos.y);
  v.push_back(gripper);
  v.insert(v.end(), object_slots.begin(), object_slots.end());
  v.insert(v.end(), target_password.begin(), target_password.end());
  v.insert(v.end(), nuisance.begin(), nuisance.end());
  return v;
}

std::vector<int> Observation::decode_target() const {
  std::vector<int> digits;
  for (int p = 0; p < 4; ++p) {
    int best = 0;
    double bv = -1;
    for (int d = 0; d < 3; ++d) {
      const double v = target_password[p * 3 + d];
      if (v > bv) {
        bv = v;
        best = d;
      }
    }
    digits.push_back(best + 1);
  }
  return digits;
}

Env::Env(const EnvSpec& spec, uint64_t seed)
    : spec_(spec), seed_(seed), noise_rng_(derive_seed(seed, 0x0b5e)) {
  spec_.validate();
  arm_ = spec_.home_pose;

  if (spec_.task_id != TaskId::ingredient_insertion) {
    const uint64_t layout_seed =
        spec_.button_layout_seed_policy == LayoutSeedPolicy::per_episode
            ? derive_seed(seed, 0x1a01)
            : derive_seed(0xf1ced, 0x1a01);
    const int cells = spec_.layout_cells();
    const int digits = spec_.layout_digits();
    std::vector<int> order(cells);
    for (int i = 0; i < cells; ++i) order[i] = i;
    Rng lrng(layout_seed);
    lrng.shuffle(order);
    cell_digit_.assign(cells, 0);
    for (int d = 1; d <= digits; ++d) cell_digit_[order[d - 1]] = d;
  }

  if (spec_.task_id == TaskId::variable_password) {
    Rng prng(derive_seed(seed, 0x9a55));
    for (int i = 0; i < kVariableLen; ++i)
      target_password_.push_back(static_cast<int>(prng.uniform_int(1, kVariableDigits)));
  }

  if (spec_.task_id == TaskId::ingredient_insertion) {
    Rng orng(derive_seed(seed, 0x1e30));
    const int count = static_cast<int>(orng.uniform_int(6, 10));
    const double min_sep = 2.0 * spec_.press_radius;
    int attempts = 0;
    while (static_cast<int>(lemons_.size()) < count) {
      if (++attempts > 10000)
        throw ConfigError("EnvSpec.press_radius: lemon placement retry cap exceeded");
      Vec2 p{orng.uniform(kLemonXMin, kLemonXMax), orng.uniform(kLemonYMin, kLemonYMax)};
      bool ok = true;
      for (const auto& l : lemons_)
        if (dist(p, l.pos) < min_sep) {
          ok = false;
          break;
        }
      if (ok) lemons_.push_back({p, true, false});
    }
  }

  Rng nrng(derive_seed(seed, 0x9015e));
  for (int i = 0; i < spec_.nuisance_dim; ++i) nuisance_.push_back(nrng.uniform());

  refresh_latent();
  obs_ = render(true);
}

void Env::refresh_latent() {
  latent_ = LatentState{};
  latent_.digits_entered = digits_entered_;
  latent_.target_password = target_password_;
  latent_.lemons_inserted = lemons_inserted_;
  latent_.button_pressed = completion_pressed_;
  for (const auto& l : lemons_)
    if (l.present) latent_.lemon_positions.push_back(l.pos);
}

Observation Env::render(bool with_noise) {
  Observation o;
  const int cells = spec_.layout_cells();
  const int digits = spec_.layout_digits();
  o.layout.assign(static_cast<size_t>(cells) * digits, 0.0);
  for (int i = 0; i < cells; ++i)
    if (cell_digit_[i] > 0) o.layout[i * digits + (cell_digit_[i] - 1)] = 1.0;

  o.arm_pos = arm_;
  o.gripper = gripper_;

  o.object_slots.assign(kMaxObjectSlots * 3, 0.0);
  for (size_t i = 0; i < lemons_.size() && i < kMaxObjectSlots; ++i) {
    if (!lemons_[i].present) continue;
    const Vec2 p = (static_cast<int>(i) == carrying_) ? arm_ : lemons_[i].pos;
    o.object_slots[i * 3 + 0] = p.x;
    o.object_slots[i * 3 + 1] = p.y;
    o.object_slots[i * 3 + 2] = 1.0;
  }

  o.target_password.assign(kTargetBlockDim, 0.0);
  for (size_t p = 0; p < target_password_.size(); ++p)
    o.target_password[p * 3 + (target_password_[p] - 1)] = 1.0;

  o.nuisance = nuisance_;

  if (with_noise && spec_.obs_noise_std > 0) {
    const double sd = spec_.obs_noise_std;
    o.arm_pos.x = clamp01(o.arm_pos.x + noise_rng_.normal(0, sd));
    o.arm_pos.y = clamp01(o.arm_pos.y + noise_rng_.normal(0, sd));
    o.gripper = clamp01(o.gripper + noise_rng_.normal(0, sd));
    for (int i = 0; i < kMaxObjectSlots; ++i) {
      o.object_slots[i * 3 + 0] = clamp01(o.object_slots[i * 3 + 0] + noise_rng_.normal(0, sd));
      o.object_slots[i * 3 + 1] = clamp01(o.object_slots[i * 3 + 1] + noise_rng_.normal(0, sd));
    }
    for (auto& v : o.nuisance) v = clamp01(v + noise_rng_.normal(0, sd));
  }
  return o;
}

Observation Env::clean_observation() const {
  return const_cast<Env*>(this)->render(false);
}

void Env::inject_password_progress(std::vector<int> digits) {
  if (spec_.task_id == TaskId::ingredient_insertion)
    throw UsageError("inject_password_progress: password tasks only");
  digits_entered_ = std::move(digits);
  refresh_latent();
}

Vec2 Env::digit_cell_center(int digit) const {
  for (size_t i = 0; i < cell_digit_.size(); ++i)
    if (cell_digit_[i] == digit) return cell_center(spec_.task_id, static_cast<int>(i));
  throw UsageError("digit_cell_center: digit not on the board");
}

void Env::fire_password_press(std::vector<EventRecord>& events) {
  if (gripper_ <= 0.5) return;
  if (tick_ - last_press_tick_ < kPressRefractoryTicks) return;
  for (size_t i = 0; i < cell_digit_.size(); ++i) {
    if (cell_digit_[i] == 0) continue;
    if (dist(arm_, cell_center(spec_.task_id, static_cast<int>(i))) <= spec_.press_radius) {
      events.push_back({tick_, EventKind::button_press, cell_digit_[i]});
      digits_entered_.push_back(cell_digit_[i]);
      last_press_tick_ = tick_;
      teleport_pending_ = true;
      break;
    }
  }
}

void Env::step_ingredient(const Action& a, std::vector<EventRecord>& events) {
  if (carrying_ >= 0) {
    lemons_[carrying_].pos = arm_;
    if (a.actuate <= 0.5) {
      // release
      auto& l = lemons_[carrying_];
      const bool into_bowl = dist(arm_, kBowlCenter) <= kBowlRadius;
      if (into_bowl) {
        l.present = false;
        l.in_bowl = true;
        ++lemons_inserted_;
      } else {
        l.pos = arm_;
      }
      events.push_back({tick_, EventKind::lemon_drop, into_bowl ? 1 : 0});
      carrying_ = -1;
    }
    return;
  }
  if (a.actuate <= 0.5) return;
  // grasp the nearest reachable lemon, else try the completion button
  int best = -1;
  double best_d = spec_.press_radius;
  for (size_t i = 0; i < lemons_.size(); ++i) {
    if (!lemons_[i].present) continue;
    const double d = dist(arm_, lemons_[i].pos);
    if (d <= best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  if (best >= 0) {
    carrying_ = best;
    lemons_[best].pos = arm_;
    events.push_back({tick_, EventKind::lemon_grasp, best});
    return;
  }
  if (dist(arm_, kCompletionButton) <= spec_.press_radius &&
      tick_ - last_press_tick_ >= kPressRefractoryTicks) {
    completion_pressed_ = true;
    last_press_tick_ = tick_;
    events.push_back({tick_, EventKind::completion_press, 0});
  }
}

StepResult Env::step(const Action& a) {
  if (done_) throw UsageError("step: episode is done");
  ++tick_;

  Action act = a;
  act.target.x = clamp01(act.target.x);
  act.target.y = clamp01(act.target.y);
  act.actuate = clamp01(act.actuate);

  if (teleport_pending_) {
    arm_ = spec_.home_pose;
    teleport_pending_ = false;
  } else {
    const double d = dist(arm_, act.target);
    if (d <= kArmSpeed) {
      arm_ = act.target;
    } else {
      arm_.x += (act.target.x - arm_.x) * kArmSpeed / d;
      arm_.y += (act.target.y - arm_.y) * kArmSpeed / d;
    }
  }
  gripper_ = act.actuate;

  std::vector<EventRecord> events;
  if (spec_.task_id == TaskId::ingredient_insertion)
    step_ingredient(act, events);
  else
    fire_password_press(events);

  if (spec_.task_id == TaskId::ingredient_insertion) {
    if (completion_pressed_) done_ = true;
  } else {
    if (static_cast<int>(digits_entered_.size()) >= spec_.password_length()) done_ = true;
  }
  if (tick_ >= spec_.max_ticks) done_ = true;

  refresh_latent();
  obs_ = render(true);
  return {obs_, latent_, done_, events};
}

double score(const EnvSpec& spec, const expert::Trajectory& traj) {
  if (traj.spec_digest != spec.digest())
    throw UsageError("score: trajectory spec digest does not match");

  std::vector<EventRecord> all;
  for (const auto& t : traj.ticks)
    for (const auto& e : t.events) all.push_back(e);

  if (spec.task_id == TaskId::ingredient_insertion) {
    int inserted = 0;
    long long last_insert_tick = -1, press_tick = -1;
    for (const auto& e : all) {
      if (e.kind == EventKind::lemon_drop && e.value == 1) {
        ++inserted;
        last_insert_tick = e.tick;
      }
      if (e.kind == EventKind::completion_press && press_tick < 0) press_tick = e.tick;
    }
    return (inserted == 2 && press_tick > last_insert_tick && last_insert_tick >= 0) ? 1.0 : 0.0;
  }

  std::vector<int> entered;
  for (const auto& e : all)
    if (e.kind == EventKind::button_press) entered.push_back(e.value);

  std::vector<int> target;
  if (spec.task_id == TaskId::fixed_password)
    target.assign(kFixedPassword.begin(), kFixedPassword.end());
  else
    target = traj.ticks.empty() ? std::vector<int>{} : traj.ticks.front().latent.target_password;

  const int n = spec.password_length();
  int match = 0;
  for (int i = 0; i < n; ++i)
    if (i < static_cast<int>(entered.size()) && i < static_cast<int>(target.size()) &&
        entered[i] == target[i])
      ++match;
  return static_cast<double>(match) / n;
}

int salient_progress(TaskId task, const LatentState& latent) {
  return task == TaskId::ingredient_insertion
             ? latent.lemons_inserted
             : static_cast<int>(latent.digits_entered.size());
}

int progress_class(const EnvSpec& spec, const LatentState& latent) {
  return std::min(salient_progress(spec.task_id, latent), spec.progress_classes() - 1);
}

std::vector<double> privileged_encoding(const EnvSpec& spec, const LatentState& latent) {
  std::vector<double> v(spec.progress_classes(), 0.0);
  v[progress_class(spec, latent)] = 1.0;
  return v;
}

double memoryless_ceiling_for(const std::vector<std::vector<int>>& passwords) {
  double total = 0.0;
  for (const auto& pwd : passwords) {
    int best = 0;
    for (int d = 1; d <= 9; ++d) {
      int c = 0;
      for (int x : pwd)
        if (x == d) ++c;
      best = std::max(best, c);
    }
    total += static_cast<double>(best) / pwd.size();
  }
  return total / passwords.size();
}

double memoryless_ceiling(const EnvSpec& spec) {
  if (spec.task_id == TaskId::fixed_password) {
    return memoryless_ceiling_for({{kFixedPassword.begin(), kFixedPassword.end()}});
  }
  if (spec.task_id == TaskId::variable_password) {
    std::vector<std::vector<int>> all;
    for (int a = 1; a <= 3; ++a)
      for (int b = 1; b <= 3; ++b)
        for (int c = 1; c <= 3; ++c)
          for (int d = 1; d <= 3; ++d) all.push_back({a, b, c, d});
    return memoryless_ceiling_for(all);
  }
  throw UsageError("memoryless_ceiling: no closed form for ingredient_insertion");
}

}  // namespace kflab::env
