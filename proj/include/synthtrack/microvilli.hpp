#pragma once

#include <functional>
#include <optional>
#include <utility>

#include "synthtrack/core.hpp"

namespace synthtrack {

/// Stick-shaped object: a narrow rectangle that drifts, rotates, and grows or
/// shrinks monotonically. length_direction is fixed at birth: the stick only
/// ever lengthens (+1) or shortens (-1) across the whole video.
struct StickState {
  Label id = 0;
  Vec2 center;
  double length = 0.0;
  double width = 1.0;
  double angle_deg = 0.0;
  int length_direction = 1;
};

struct MicrovilliConfig {
  int canvas_w = 550;
  int canvas_h = 550;
  int target_w = 512;
  int target_h = 512;
  int object_count = 100;
  std::optional<std::pair<int, int>> count_range;  // overrides object_count when set
  int frame_count = 50;
  double p_translate = 0.5;
  double translate_step = 1.0;
  double p_rotate = 0.5;
  double rotate_step_deg = 1.0;
  double p_length = 0.5;
  double length_step = 1.0;
  double width_min = 3.0;
  double width_max = 3.0;
  double length_min = 15.0;
  double length_max = 45.0;
  double min_length = 8.0;
  std::uint64_t seed = 0;

  void validate() const {
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(p_translate) || !prob(p_rotate) || !prob(p_length))
      throw std::invalid_argument("microvilli config: probabilities must be in [0,1]");
    if (canvas_w < target_w || canvas_h < target_h)
      throw std::invalid_argument("microvilli config: canvas must be at least target size");
    if (target_w <= 0 || target_h <= 0 || frame_count <= 0)
      throw std::invalid_argument("microvilli config: sizes and frame_count must be positive");
    if (width_min < 1.0 || width_max < width_min)
      throw std::invalid_argument("microvilli config: invalid width range");
    if (length_min < width_max || length_max < length_min)
      throw std::invalid_argument("microvilli config: invalid length range");
    if (min_length < 1.0) throw std::invalid_argument("microvilli config: min_length must be >= 1");
    if (count_range && (count_range->first < 0 || count_range->second < count_range->first))
      throw std::invalid_argument("microvilli config: invalid count range");
    if (!count_range && object_count < 0)
      throw std::invalid_argument("microvilli config: object_count must be >= 0");
    if (translate_step <= 0.0 || rotate_step_deg <= 0.0 || length_step <= 0.0)
      throw std::invalid_argument("microvilli config: step sizes must be positive");
  }
};

struct MicrovilliScene {
  std::vector<StickState> sticks;  // ascending id
  Lineage lineage;
};

/// Places N sticks uniformly at random on the oversized canvas. Ids run 1..N,
/// all lineage records start at frame 0.
inline MicrovilliScene init_scene(const MicrovilliConfig& cfg, Rng& rng) {
  cfg.validate();
  int n = cfg.object_count;
  if (cfg.count_range) n = static_cast<int>(rng.uniform_int(cfg.count_range->first, cfg.count_range->second));

  const double max_area = cfg.length_max * cfg.width_max;
  const double canvas_area = static_cast<double>(cfg.canvas_w) * cfg.canvas_h;
  if (static_cast<double>(n) * max_area > 0.9 * canvas_area)
    throw std::invalid_argument("scene overfull: " + std::to_string(n) + " sticks exceed 90% of canvas area");
  if (static_cast<std::uint32_t>(n) > kMaxLabel)
    throw std::invalid_argument("label id exceeds 65535");

  MicrovilliScene scene;
  scene.sticks.reserve(n);
  for (int i = 0; i < n; ++i) {
    const Label id = static_cast<Label>(i + 1);
    Rng r = rng.split(id);
    StickState s;
    s.id = id;
    s.center = {r.uniform(0.0, static_cast<double>(cfg.canvas_w)), r.uniform(0.0, static_cast<double>(cfg.canvas_h))};
    s.width = r.uniform(cfg.width_min, cfg.width_max);
    s.length = std::max(r.uniform(cfg.length_min, cfg.length_max), std::max(cfg.min_length, s.width));
    s.angle_deg = r.uniform(0.0, 360.0);
    s.length_direction = r.bernoulli(0.5) ? 1 : -1;
    scene.sticks.push_back(s);
    scene.lineage.add({id, 0, 0, 0});
  }
  return scene;
}

/// One dynamics step. Per object, independently: translate one axis step with
/// p_translate, rotate +-rotate_step with p_rotate, and change length by
/// length_step in the object's fixed direction with p_length (clamped below
/// at min_length). Per-object draws come from split streams keyed by id, so
/// the outcome does not depend on iteration order.
inline void step_scene(std::vector<StickState>& sticks, const MicrovilliConfig& cfg, Rng& rng) {
  static constexpr int kDx[4] = {1, -1, 0, 0};
  static constexpr int kDy[4] = {0, 0, 1, -1};
  for (StickState& s : sticks) {
    Rng r = rng.split(s.id);
    if (r.bernoulli(cfg.p_translate)) {
      const int dir = static_cast<int>(r.uniform_int(0, 3));
      s.center.x += cfg.translate_step * kDx[dir];
      s.center.y += cfg.translate_step * kDy[dir];
    }
    if (r.bernoulli(cfg.p_rotate)) {
      const double sign = r.bernoulli(0.5) ? 1.0 : -1.0;
      s.angle_deg += sign * cfg.rotate_step_deg;
    }
    if (r.bernoulli(cfg.p_length)) {
      const double lo = std::max(cfg.min_length, s.width);
      s.length = std::max(lo, s.length + cfg.length_step * s.length_direction);
    }
  }
}

using MicrovilliObserver = std::function<void(int frame, const std::vector<StickState>&)>;

/// Simulates the full annotation video: rasterize every stick per frame on
/// the oversized canvas (later ids overdraw earlier on overlap), center-crop
/// to the target size, and track visibility. A stick that has been visible
/// and then leaves the cropped view entirely is removed from the scene, so a
/// track's visible frames form one contiguous interval; its lineage interval
/// ends at the last visible frame. Sticks that have not yet been visible keep
/// simulating so they can move into view.
inline LabeledVideo simulate_microvilli(const MicrovilliConfig& cfg, const MicrovilliObserver& observer = {}) {
  cfg.validate();
  Rng master(cfg.seed);
  Rng init_rng = master.split(0);
  MicrovilliScene scene = init_scene(cfg, init_rng);

  std::map<Label, int> last_visible;
  std::map<Label, bool> ever_visible;
  for (const auto& s : scene.sticks) ever_visible[s.id] = false;

  LabeledVideo video;
  video.lineage = scene.lineage;
  video.frames.reserve(cfg.frame_count);

  for (int t = 0; t < cfg.frame_count; ++t) {
    if (t > 0) {
      Rng frame_rng = master.split(t);
      step_scene(scene.sticks, cfg, frame_rng);
    }
    LabelFrame canvas(cfg.canvas_w, cfg.canvas_h, 0);
    for (const StickState& s : scene.sticks) paint(canvas, rasterize_stick(s.center, s.length, s.width, s.angle_deg), s.id);
    LabelFrame cropped = crop_center(canvas, cfg.target_w, cfg.target_h);

    std::vector<bool> seen(kMaxLabel + 1, false);
    for (Label v : cropped.data)
      if (v != 0) seen[v] = true;

    std::erase_if(scene.sticks, [&](const StickState& s) {
      if (seen[s.id]) {
        ever_visible[s.id] = true;
        last_visible[s.id] = t;
        return false;
      }
      return ever_visible[s.id];  // left the view for good
    });

    video.frames.push_back(std::move(cropped));
    if (observer) observer(t, scene.sticks);
  }

  for (TrackRecord& rec : video.lineage.records) {
    auto it = last_visible.find(rec.id);
    rec.end = (it != last_visible.end()) ? it->second : rec.birth;
  }
  return video;
}

}  // namespace synthtrack
