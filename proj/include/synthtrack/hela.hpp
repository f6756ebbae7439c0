#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>

#include "synthtrack/core.hpp"

namespace synthtrack {

struct CellState {
  Label id = 0;
  Vec2 center;
  int radius = 0;
  int birth_frame = 0;
  // Daughters below growth_target grow +1 px every growth_interval frames
  // until they reach the mother's pre-division radius.
  int growth_target = 0;
};

struct HelaConfig {
  int canvas_w = 550;
  int canvas_h = 550;
  int target_w = 512;
  int target_h = 512;
  int object_count = 150;
  int frame_count = 50;
  int radius_min = 8;
  int radius_max = 16;
  int max_translation = 2;           // per-axis uniform integer in [-N, N]
  double p_radius = 0.10;            // chance of a +-1 px radius change
  double overlap_factor = 0.7;       // centers must stay >= factor * (r_i + r_j) apart
  int n_appear = 20;
  int n_disappear = 20;
  int n_mitosis = 5;
  double daughter_shrink = 0.7;      // daughter radius = round(shrink * mother radius)
  double daughter_distance = 1.2;    // daughter center offset = distance * daughter radius
  int growth_interval = 2;
  std::uint64_t seed = 0;

  void validate() const {
    if (canvas_w < target_w || canvas_h < target_h)
      throw std::invalid_argument("hela config: canvas must be at least target size");
    if (target_w <= 0 || target_h <= 0 || frame_count <= 0)
      throw std::invalid_argument("hela config: sizes and frame_count must be positive");
    if (radius_min < 1 || radius_max < radius_min)
      throw std::invalid_argument("hela config: invalid radius range");
    if (object_count < 0) throw std::invalid_argument("hela config: object_count must be >= 0");
    if (max_translation < 0) throw std::invalid_argument("hela config: max_translation must be >= 0");
    if (p_radius < 0.0 || p_radius > 1.0)
      throw std::invalid_argument("hela config: p_radius must be in [0,1]");
    if (overlap_factor < 0.0) throw std::invalid_argument("hela config: overlap_factor must be >= 0");
    if (n_appear < 0 || n_disappear < 0 || n_mitosis < 0)
      throw std::invalid_argument("hela config: event counts must be >= 0");
    if (daughter_shrink <= 0.0 || daughter_distance <= 0.0)
      throw std::invalid_argument("hela config: daughter parameters must be positive");
    if (growth_interval < 1) throw std::invalid_argument("hela config: growth_interval must be >= 1");
  }
};

/// Scheduled cell events. Victims of disappearances and mothers of divisions
/// are distinct cells drawn from the initial population; event frames are
/// uniform in [1, frame_count-1].
struct EventSchedule {
  std::vector<std::pair<int, Label>> disappear;  // (frame, victim id)
  std::vector<int> appear;                       // frames
  std::vector<std::pair<int, Label>> mitosis;    // (frame, mother id)
};

inline EventSchedule schedule_events(const HelaConfig& cfg, Rng& rng) {
  cfg.validate();
  EventSchedule sched;
  const int total = cfg.n_appear + cfg.n_disappear + cfg.n_mitosis;
  if (total == 0) return sched;
  if (cfg.frame_count < 3)
    throw std::invalid_argument("schedule infeasible: need at least 3 frames for events");
  if (cfg.n_disappear + cfg.n_mitosis > cfg.object_count)
    throw std::invalid_argument("schedule infeasible: more disappearances and divisions than initial cells");

  // Distinct victims/mothers via a partial Fisher-Yates shuffle of 1..N.
  std::vector<Label> ids(cfg.object_count);
  for (int i = 0; i < cfg.object_count; ++i) ids[i] = static_cast<Label>(i + 1);
  const int k = cfg.n_disappear + cfg.n_mitosis;
  for (int i = 0; i < k; ++i) {
    const auto j = rng.uniform_int(i, static_cast<std::int64_t>(ids.size()) - 1);
    std::swap(ids[i], ids[j]);
  }

  auto event_frame = [&] { return 1 + static_cast<int>(rng.uniform_int(0, cfg.frame_count - 2)); };
  for (int i = 0; i < cfg.n_disappear; ++i) sched.disappear.emplace_back(event_frame(), ids[i]);
  for (int i = 0; i < cfg.n_mitosis; ++i) sched.mitosis.emplace_back(event_frame(), ids[cfg.n_disappear + i]);
  for (int i = 0; i < cfg.n_appear; ++i) sched.appear.push_back(event_frame());
  return sched;
}

struct HelaScene {
  std::vector<CellState> cells;  // ascending id
  Lineage lineage;
  std::uint32_t next_id = 1;

  Label take_id() {
    if (next_id > kMaxLabel) throw std::invalid_argument("label id exceeds 65535");
    return static_cast<Label>(next_id++);
  }
};

/// True when the candidate keeps the required center distance from every
/// other cell: dist >= overlap_factor * (r_cand + r_other).
inline bool placement_ok(const CellState& cand, const std::vector<CellState>& cells, double factor) {
  for (const CellState& c : cells) {
    if (c.id == cand.id) continue;
    const double dx = cand.center.x - c.center.x;
    const double dy = cand.center.y - c.center.y;
    const double min_dist = factor * (cand.radius + c.radius);
    if (dx * dx + dy * dy < min_dist * min_dist) return false;
  }
  return true;
}

inline HelaScene init_hela_scene(const HelaConfig& cfg, Rng& rng) {
  cfg.validate();
  if (static_cast<std::uint32_t>(cfg.object_count) > kMaxLabel)
    throw std::invalid_argument("label id exceeds 65535");
  HelaScene scene;
  for (int i = 0; i < cfg.object_count; ++i) {
    const Label id = static_cast<Label>(i + 1);
    Rng r = rng.split(id);
    CellState c;
    c.id = id;
    c.radius = static_cast<int>(r.uniform_int(cfg.radius_min, cfg.radius_max));
    c.growth_target = c.radius;
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      c.center = {r.uniform(0.0, static_cast<double>(cfg.canvas_w)), r.uniform(0.0, static_cast<double>(cfg.canvas_h))};
      placed = placement_ok(c, scene.cells, cfg.overlap_factor);
    }
    if (!placed)
      throw std::invalid_argument("placement exhausted: could not place initial cell " + std::to_string(id));
    scene.cells.push_back(c);
    scene.lineage.add({id, 0, cfg.frame_count - 1, 0});
    scene.next_id = static_cast<std::uint32_t>(id) + 1;
  }
  return scene;
}

namespace detail {

inline void move_cells(HelaScene& scene, const HelaConfig& cfg, int frame, Rng& rng) {
  for (CellState& cell : scene.cells) {
    Rng r = rng.split(cell.id);
    const bool growing = cell.radius < cell.growth_target;
    const bool growth_due = growing && ((frame - cell.birth_frame) % cfg.growth_interval == 0);
    for (int attempt = 0; attempt < 8; ++attempt) {
      CellState cand = cell;
      cand.center.x += static_cast<double>(static_cast<std::int64_t>(r.uniform_int(0, 2 * cfg.max_translation)) - cfg.max_translation);
      cand.center.y += static_cast<double>(static_cast<std::int64_t>(r.uniform_int(0, 2 * cfg.max_translation)) - cfg.max_translation);
      if (growth_due) {
        cand.radius = cell.radius + 1;
      } else if (!growing && r.bernoulli(cfg.p_radius)) {
        const int delta = r.bernoulli(0.5) ? 1 : -1;
        cand.radius = std::clamp(cell.radius + delta, cfg.radius_min, cfg.radius_max);
      }
      if (placement_ok(cand, scene.cells, cfg.overlap_factor)) {
        cell = cand;
        break;
      }
    }
  }
}

inline void apply_events(HelaScene& scene, const EventSchedule& sched, const HelaConfig& cfg, int frame, Rng& rng) {
  for (const auto& [f, victim] : sched.disappear) {
    if (f != frame) continue;
    std::erase_if(scene.cells, [&](const CellState& c) { return c.id == victim; });
    scene.lineage.find(victim)->end = frame - 1;
  }

  for (std::size_t i = 0; i < sched.appear.size(); ++i) {
    if (sched.appear[i] != frame) continue;
    Rng r = rng.split(0x10000 + i);
    CellState c;
    c.id = scene.take_id();
    c.birth_frame = frame;
    c.radius = static_cast<int>(r.uniform_int(cfg.radius_min, cfg.radius_max));
    c.growth_target = c.radius;
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      c.center = {r.uniform(0.0, static_cast<double>(cfg.canvas_w)), r.uniform(0.0, static_cast<double>(cfg.canvas_h))};
      placed = placement_ok(c, scene.cells, cfg.overlap_factor);
    }
    if (!placed) throw std::invalid_argument("placement exhausted: could not place appearing cell");
    scene.cells.push_back(c);
    scene.lineage.add({c.id, frame, cfg.frame_count - 1, 0});
  }

  for (const auto& [f, mother_id] : sched.mitosis) {
    if (f != frame) continue;
    Rng r = rng.split(0x20000 + mother_id);
    const CellState mother = *std::find_if(scene.cells.begin(), scene.cells.end(),
                                           [&](const CellState& c) { return c.id == mother_id; });
    std::erase_if(scene.cells, [&](const CellState& c) { return c.id == mother_id; });
    scene.lineage.find(mother_id)->end = frame - 1;

    const int d_radius = std::clamp(static_cast<int>(std::lround(cfg.daughter_shrink * mother.radius)),
                                    cfg.radius_min, cfg.radius_max);
    for (int k = 0; k < 2; ++k) {
      CellState d;
      d.id = scene.take_id();
      d.birth_frame = frame;
      d.radius = d_radius;
      d.growth_target = mother.radius;
      bool placed = false;
      for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
        const double angle = r.uniform(0.0, 2.0 * std::numbers::pi);
        const double dist = cfg.daughter_distance * d_radius;
        d.center = {mother.center.x + dist * std::cos(angle), mother.center.y + dist * std::sin(angle)};
        placed = placement_ok(d, scene.cells, cfg.overlap_factor);
      }
      if (!placed) throw std::invalid_argument("placement exhausted: could not place daughter cell");
      scene.cells.push_back(d);
      scene.lineage.add({d.id, frame, cfg.frame_count - 1, mother_id});
    }
  }
}

}  // namespace detail

using HelaObserver = std::function<void(int frame, const std::vector<CellState>&)>;

/// Simulates the ball-shaped cell video. Frame 0 is the initial placement;
/// each later frame applies per-cell motion (translation plus occasional
/// radius change, rejected up to 8 redraws when it would violate the spacing
/// rule) and then the scheduled events in the order disappear, appear,
/// mitosis. Divisions remove the mother and create two smaller daughters
/// nearby that grow back toward her radius. Frames are rasterized on the
/// oversized canvas (later ids overdraw) and center-cropped.
inline LabeledVideo simulate_hela(const HelaConfig& cfg, const HelaObserver& observer = {}) {
  cfg.validate();
  Rng master(cfg.seed);
  Rng sched_rng = master.split(0xE);
  EventSchedule sched = schedule_events(cfg, sched_rng);
  Rng init_rng = master.split(0xA);
  HelaScene scene = init_hela_scene(cfg, init_rng);

  LabeledVideo video;
  video.frames.reserve(cfg.frame_count);
  for (int t = 0; t < cfg.frame_count; ++t) {
    if (t > 0) {
      Rng frame_rng = master.split(0x100 + t);
      detail::move_cells(scene, cfg, t, frame_rng);
      detail::apply_events(scene, sched, cfg, t, frame_rng);
    }
    LabelFrame canvas(cfg.canvas_w, cfg.canvas_h, 0);
    for (const CellState& c : scene.cells) paint(canvas, rasterize_disk(c.center, c.radius), c.id);
    video.frames.push_back(crop_center(canvas, cfg.target_w, cfg.target_h));
    if (observer) observer(t, scene.cells);
  }
  video.lineage = scene.lineage;
  return video;
}

}  // namespace synthtrack
