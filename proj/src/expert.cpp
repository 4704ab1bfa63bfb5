#include "kflab/expert.hpp"

#include <algorithm>
#include <cmath>

#include "kflab/digest.hpp"
#include "kflab/errors.hpp"

namespace kflab::expert {

namespace {

double dist(const env::Vec2& a, const env::Vec2& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

env::Vec2 jittered(env::Vec2 center, double std, double max_off, Rng& rng) {
  if (std <= 0) return center;
  double dx = rng.normal(0, std);
  double dy = rng.normal(0, std);
  const double m = std::hypot(dx, dy);
  if (m > max_off) {
    dx *= max_off / m;
    dy *= max_off / m;
  }
  return {center.x + dx, center.y + dy};
}

std::string ordering_name(Ordering o) {
  return o == Ordering::nearest_first ? "nearest_first" : "random_order";
}

Ordering ordering_from_name(const std::string& s) {
  if (s == "nearest_first") return Ordering::nearest_first;
  if (s == "random_order") return Ordering::random_order;
  throw ConfigError("unknown ordering: " + s);
}

}  // namespace

nlohmann::json OperatorStyle::to_json() const {
  return {{"id", id},
          {"speed_scale", speed_scale},
          {"pause_ticks", pause_ticks},
          {"waypoint_jitter_std", waypoint_jitter_std},
          {"ordering", ordering_name(ordering)}};
}

OperatorStyle OperatorStyle::from_json(const nlohmann::json& j) {
  OperatorStyle s;
  s.id = j.at("id").get<std::string>();
  s.speed_scale = j.at("speed_scale").get<double>();
  s.pause_ticks = j.at("pause_ticks").get<int>();
  s.waypoint_jitter_std = j.at("waypoint_jitter_std").get<double>();
  s.ordering = ordering_from_name(j.at("ordering").get<std::string>());
  return s;
}

std::vector<StyleWeight> default_style_mix(env::TaskId t) {
  if (t == env::TaskId::ingredient_insertion) {
    OperatorStyle tidy{"tidy", 1.0, 6, 0.01, Ordering::nearest_first};
    OperatorStyle roam{"roam", 0.8, 6, 0.01, Ordering::random_order};
    return {{tidy, 0.7}, {roam, 0.3}};
  }
  OperatorStyle brisk{"brisk", 1.0, 3, 0.01, Ordering::nearest_first};
  OperatorStyle steady{"steady", 0.7, 6, 0.015, Ordering::nearest_first};
  return {{brisk, 0.5}, {steady, 0.5}};
}

ExpertController::ExpertController(const env::EnvSpec& spec, const OperatorStyle& style,
                                   uint64_t seed)
    : spec_(spec), style_(style), rng_(derive_seed(seed, 0xe0)) {
  marker_ = spec.home_pose;
  phase_ = Phase::dwell;
  dwell_left_ = 0;
}

void ExpertController::observe_events(const std::vector<env::EventRecord>& events) {
  for (const auto& ev : events) {
    event_seen_ = true;
    if (ev.kind == env::EventKind::button_press) marker_ = spec_.home_pose;
  }
}

void ExpertController::plan_next(const env::Env& e) {
  const auto& lat = e.latent();
  if (spec_.task_id != env::TaskId::ingredient_insertion) {
    const int k = static_cast<int>(lat.digits_entered.size());
    if (k >= spec_.password_length()) {
      waypoint_ = marker_;
      press_at_waypoint_ = false;
      release_at_waypoint_ = false;
      return;
    }
    const int digit = spec_.task_id == env::TaskId::fixed_password
                          ? env::kFixedPassword[k]
                          : e.obs().decode_target()[k];
    waypoint_ = jittered(e.digit_cell_center(digit), style_.waypoint_jitter_std,
                         spec_.press_radius * 0.5, rng_);
    press_at_waypoint_ = true;
    release_at_waypoint_ = false;
    return;
  }

  // ingredient
  if (e.carried_lemon() >= 0) {
    waypoint_ = jittered(env::kBowlCenter, style_.waypoint_jitter_std,
                         env::kBowlRadius * 0.4, rng_);
    press_at_waypoint_ = false;
    release_at_waypoint_ = true;
    return;
  }
  if (lat.lemons_inserted < 2 && !lat.lemon_positions.empty()) {
    size_t pick = 0;
    if (style_.ordering == Ordering::nearest_first) {
      double best = 1e9;
      for (size_t i = 0; i < lat.lemon_positions.size(); ++i) {
        const double d = dist(marker_, lat.lemon_positions[i]);
        if (d < best) {
          best = d;
          pick = i;
        }
      }
    } else {
      pick = static_cast<size_t>(rng_.bounded(lat.lemon_positions.size()));
    }
    waypoint_ = jittered(lat.lemon_positions[pick], style_.waypoint_jitter_std,
                         spec_.press_radius * 0.5, rng_);
    press_at_waypoint_ = true;
    release_at_waypoint_ = false;
    return;
  }
  waypoint_ = jittered(env::kCompletionButton, style_.waypoint_jitter_std,
                       spec_.press_radius * 0.5, rng_);
  press_at_waypoint_ = true;
  release_at_waypoint_ = false;
}

env::Action ExpertController::act(const env::Env& e) {
  const bool carrying = e.carried_lemon() >= 0;

  if (phase_ == Phase::dwell) {
    if (dwell_left_ > 0) {
      --dwell_left_;
      return {marker_, carrying ? 1.0 : 0.0};
    }
    plan_next(e);
    phase_ = Phase::travel;
  }

  if (phase_ == Phase::travel) {
    const double step = style_.speed_scale * env::kArmSpeed;
    const double d = dist(marker_, waypoint_);
    if (d <= step) {
      marker_ = waypoint_;
      phase_ = Phase::hold;
    } else {
      marker_.x += (waypoint_.x - marker_.x) * step / d;
      marker_.y += (waypoint_.y - marker_.y) * step / d;
      return {marker_, carrying ? 1.0 : 0.0};
    }
  }

  // hold: keep the terminal actuation until the event lands
  if (event_seen_) {
    event_seen_ = false;
    phase_ = Phase::dwell;
    dwell_left_ = style_.pause_ticks;
    return {marker_, e.carried_lemon() >= 0 ? 1.0 : 0.0};
  }
  double actuate = 0.0;
  if (press_at_waypoint_) actuate = 1.0;
  if (release_at_waypoint_) actuate = 0.0;
  return {waypoint_, actuate};
}

Trajectory demonstrate(const env::EnvSpec& spec, const OperatorStyle& style, uint64_t seed) {
  env::Env e(spec, seed);
  ExpertController ctl(spec, style, seed);

  Trajectory traj;
  traj.spec_digest = spec.digest();
  traj.seed = seed;
  traj.style_id = style.id;
  traj.ticks.push_back({0, e.obs().flat(), {}, e.latent(), {}});

  while (!e.done()) {
    const env::Action a = ctl.act(e);
    auto res = e.step(a);
    ctl.observe_events(res.events);
    traj.ticks.back().action = {a.target.x, a.target.y, a.actuate};
    traj.ticks.push_back({e.tick(), res.obs.flat(), {}, res.latent, res.events});
  }
  traj.score = env::score(spec, traj);
  return traj;
}

namespace {
// Canonical JSON for one tick record; shared by the writer and the digest.
nlohmann::json tick_to_json(const TickRecord& t) {
  nlohmann::json e = nlohmann::json::array();
  for (const auto& ev : t.events)
    e.push_back({env::event_kind_name(ev.kind), ev.tick, ev.value});
  nlohmann::json lp = nlohmann::json::array();
  for (const auto& p : t.latent.lemon_positions) lp.push_back({p.x, p.y});
  return {{"t", t.tick},
          {"o", t.obs},
          {"a", t.action},
          {"l",
           {{"d", t.latent.digits_entered},
            {"tp", t.latent.target_password},
            {"li", t.latent.lemons_inserted},
            {"bp", t.latent.button_pressed ? 1 : 0},
            {"lp", lp}}},
          {"e", e}};
}
}  // namespace

std::string trajectory_record_line(const TickRecord& t) { return tick_to_json(t).dump(); }

std::string DemoDataset::content_digest() const {
  Fnv64 f;
  for (const auto& traj : trajs) {
    f.update("traj:" + std::to_string(traj.seed) + ":" + traj.style_id + "\n");
    for (const auto& t : traj.ticks) {
      f.update(trajectory_record_line(t));
      f.update("\n");
    }
  }
  return digest_hex(f.value());
}

DemoDataset generate_dataset(const env::EnvSpec& spec, int n,
                             const std::vector<StyleWeight>& mix, uint64_t seed) {
  if (n < 1) throw ConfigError("generate_dataset: n must be >= 1");
  if (mix.empty()) throw ConfigError("generate_dataset: empty style mix");
  double wsum = 0;
  for (const auto& m : mix) wsum += m.weight;
  if (std::abs(wsum - 1.0) > 1e-9)
    throw ConfigError("generate_dataset: style weights must sum to 1");

  DemoDataset ds;
  ds.spec = spec;
  ds.spec_digest = spec.digest();
  ds.seed = seed;
  ds.style_mix = mix;

  constexpr int kRetryCap = 25;
  for (int i = 0; i < n; ++i) {
    Rng pick(derive_seed(seed, 0xd1ce, static_cast<uint64_t>(i)));
    const double u = pick.uniform();
    double acc = 0;
    const OperatorStyle* style = &mix.back().style;
    for (const auto& m : mix) {
      acc += m.weight;
      if (u < acc) {
        style = &m.style;
        break;
      }
    }
    bool stored = false;
    for (int attempt = 0; attempt < kRetryCap; ++attempt) {
      const uint64_t ep_seed =
          derive_seed(seed, 0xde30, static_cast<uint64_t>(i), static_cast<uint64_t>(attempt));
      Trajectory t = demonstrate(spec, *style, ep_seed);
      if (t.score >= 1.0) {
        ds.trajs.push_back(std::move(t));
        stored = true;
        break;
      }
      ++ds.discarded;
    }
    if (!stored)
      throw GenerationError("generate_dataset: retry cap exceeded for style '" + style->id +
                            "' (slot " + std::to_string(i) + ")");
  }
  return ds;
}

bool replays_identically(const env::EnvSpec& spec, const Trajectory& traj) {
  env::Env e(spec, traj.seed);
  if (traj.ticks.empty()) return false;
  if (e.obs().flat() != traj.ticks[0].obs) return false;
  for (size_t i = 0; i + 1 < traj.ticks.size(); ++i) {
    const auto& a = traj.ticks[i].action;
    auto res = e.step({{a[0], a[1]}, a[2]});
    if (res.obs.flat() != traj.ticks[i + 1].obs) return false;
  }
  return e.done();
}

}  // namespace kflab::expert
