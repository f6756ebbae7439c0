#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace synthtrack {

/// Filesystem and serialization failures (maps to exit code 3 in the CLI).
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid or contradictory configuration (maps to exit code 2 in the CLI).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Instance identifier. 0 is background. Ids must stay representable in the
/// 16-bit mask file format; allocators throw past 65535.
using Label = std::uint16_t;

inline constexpr std::uint32_t kMaxLabel = 65535;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

struct PixelCoord {
  int x = 0;
  int y = 0;
  friend bool operator==(const PixelCoord&, const PixelCoord&) = default;
  friend auto operator<=>(const PixelCoord&, const PixelCoord&) = default;
};

/// Row-major 2D grid of values. Pixel (x, y) has its center at the integer
/// coordinate (x, y); subpixel positions live between centers.
template <typename T>
struct Grid {
  int width = 0;
  int height = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(int w, int h, T fill = T{}) : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {
    if (w < 0 || h < 0) throw std::invalid_argument("grid dimensions must be non-negative");
  }

  bool in_bounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }

  T& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  const T& at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }

  std::size_t size() const { return data.size(); }

  friend bool operator==(const Grid&, const Grid&) = default;
};

using LabelFrame = Grid<Label>;
using IntensityFrame = Grid<float>;
using BinaryMask = Grid<std::uint8_t>;

/// One track's lifetime: [birth, end] frame interval plus the mitotic parent
/// (0 when the track has none).
struct TrackRecord {
  Label id = 0;
  int birth = 0;
  int end = 0;
  Label parent = 0;
  friend bool operator==(const TrackRecord&, const TrackRecord&) = default;
};

struct Lineage {
  std::vector<TrackRecord> records;  // kept sorted by id

  void add(TrackRecord rec) {
    auto it = std::lower_bound(records.begin(), records.end(), rec.id,
                               [](const TrackRecord& r, Label id) { return r.id < id; });
    if (it != records.end() && it->id == rec.id)
      throw std::invalid_argument("duplicate track id " + std::to_string(rec.id));
    records.insert(it, rec);
  }

  const TrackRecord* find(Label id) const {
    auto it = std::lower_bound(records.begin(), records.end(), id,
                               [](const TrackRecord& r, Label i) { return r.id < i; });
    return (it != records.end() && it->id == id) ? &*it : nullptr;
  }

  TrackRecord* find(Label id) {
    return const_cast<TrackRecord*>(static_cast<const Lineage*>(this)->find(id));
  }

  bool contains(Label id) const { return find(id) != nullptr; }

  /// Throws if a record violates birth <= end, references a missing parent,
  /// or a parent that does not end strictly before the child's birth.
  void validate() const {
    for (const auto& r : records) {
      if (r.id == 0) throw std::invalid_argument("track id 0 is reserved for background");
      if (r.birth > r.end)
        throw std::invalid_argument("track " + std::to_string(r.id) + " has birth > end");
      if (r.parent != 0) {
        const TrackRecord* p = find(r.parent);
        if (!p)
          throw std::invalid_argument("track " + std::to_string(r.id) + " references missing parent " +
                                      std::to_string(r.parent));
        if (p->end >= r.birth)
          throw std::invalid_argument("parent " + std::to_string(r.parent) + " does not end before child " +
                                      std::to_string(r.id));
      }
    }
  }

  friend bool operator==(const Lineage&, const Lineage&) = default;
};

struct LabeledVideo {
  std::vector<LabelFrame> frames;
  Lineage lineage;

  int frame_count() const { return static_cast<int>(frames.size()); }
  int width() const { return frames.empty() ? 0 : frames.front().width; }
  int height() const { return frames.empty() ? 0 : frames.front().height; }

  friend bool operator==(const LabeledVideo&, const LabeledVideo&) = default;
};

// ---------------------------------------------------------------------------
// Deterministic randomness
// ---------------------------------------------------------------------------

/// Counter-based generator. The key identifies a stream, the counter walks
/// along it, and split() derives an independent child stream, so per-object
/// randomness does not depend on iteration order. Same seed, same call
/// sequence, same outputs on any platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(mix(seed ^ 0x9E3779B97F4A7C15ull)), counter_(0) {}

  Rng split(std::uint64_t stream) const {
    Rng child(0);
    child.key_ = mix(key_ ^ mix(stream + 0xD1B54A32D192ED03ull));
    child.counter_ = 0;
    return child;
  }

  std::uint64_t next_u64() { return mix(key_ + 0x9E3779B97F4A7C15ull * ++counter_); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi], inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    if (lo > hi) throw std::invalid_argument("uniform_int: lo > hi");
    const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
    if (range == 0) return static_cast<std::int64_t>(next_u64());  // full 64-bit span
    const auto wide = static_cast<unsigned __int128>(next_u64()) * range;
    return lo + static_cast<std::int64_t>(static_cast<std::uint64_t>(wide >> 64));
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller; one value per call.
  double gaussian() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

 private:
  static std::uint64_t mix(std::uint64_t x) {
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ull;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBull;
    x ^= x >> 31;
    return x;
  }

  std::uint64_t key_;
  std::uint64_t counter_;
};

// ---------------------------------------------------------------------------
// Rasterization
// ---------------------------------------------------------------------------

/// Pixels whose centers lie within `radius` of `center` (inclusive).
inline std::vector<PixelCoord> rasterize_disk(Vec2 center, double radius) {
  if (radius < 0.0) throw std::invalid_argument("rasterize_disk: negative radius");
  std::vector<PixelCoord> out;
  const int x0 = static_cast<int>(std::floor(center.x - radius));
  const int x1 = static_cast<int>(std::ceil(center.x + radius));
  const int y0 = static_cast<int>(std::floor(center.y - radius));
  const int y1 = static_cast<int>(std::ceil(center.y + radius));
  const double r2 = radius * radius;
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dx = x - center.x;
      const double dy = y - center.y;
      if (dx * dx + dy * dy <= r2) out.push_back({x, y});
    }
  }
  return out;
}

/// Pixels whose centers lie inside the rectangle of the given length and
/// width, rotated by angle_deg about `center`. Membership uses half-open
/// extents [-L/2, L/2) x [-W/2, W/2) along the rotated axes so axis-aligned
/// sticks with integer-aligned centers cover exactly length*width pixels.
inline std::vector<PixelCoord> rasterize_stick(Vec2 center, double length, double width, double angle_deg) {
  if (!(length >= width && width >= 1.0))
    throw std::invalid_argument("rasterize_stick: requires length >= width >= 1");
  const double theta = angle_deg * 3.14159265358979323846 / 180.0;
  const double ux = std::cos(theta), uy = std::sin(theta);   // along length
  const double vx = -std::sin(theta), vy = std::cos(theta);  // along width
  const double ext_x = std::abs(ux) * length / 2 + std::abs(vx) * width / 2;
  const double ext_y = std::abs(uy) * length / 2 + std::abs(vy) * width / 2;
  const int x0 = static_cast<int>(std::floor(center.x - ext_x)) - 1;
  const int x1 = static_cast<int>(std::ceil(center.x + ext_x)) + 1;
  const int y0 = static_cast<int>(std::floor(center.y - ext_y)) - 1;
  const int y1 = static_cast<int>(std::ceil(center.y + ext_y)) + 1;
  std::vector<PixelCoord> out;
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dx = x - center.x;
      const double dy = y - center.y;
      const double s = dx * ux + dy * uy;
      const double t = dx * vx + dy * vy;
      if (s >= -length / 2 && s < length / 2 && t >= -width / 2 && t < width / 2) out.push_back({x, y});
    }
  }
  return out;
}

/// Centered window; per-axis offset is floor((src - target) / 2).
template <typename T>
Grid<T> crop_center(const Grid<T>& src, int target_w, int target_h) {
  if (target_w > src.width || target_h > src.height || target_w < 0 || target_h < 0)
    throw std::invalid_argument("crop larger than source");
  const int ox = (src.width - target_w) / 2;
  const int oy = (src.height - target_h) / 2;
  Grid<T> out(target_w, target_h);
  for (int y = 0; y < target_h; ++y)
    for (int x = 0; x < target_w; ++x) out.at(x, y) = src.at(x + ox, y + oy);
  return out;
}

// ---------------------------------------------------------------------------
// Shared helpers for label videos
// ---------------------------------------------------------------------------

inline void paint(LabelFrame& frame, const std::vector<PixelCoord>& pixels, Label id) {
  for (const auto& p : pixels)
    if (frame.in_bounds(p.x, p.y)) frame.at(p.x, p.y) = id;
}

/// Frames in which each id has at least one pixel.
inline std::map<Label, std::vector<int>> visibility_by_id(const std::vector<LabelFrame>& frames) {
  std::map<Label, std::vector<int>> vis;
  for (int t = 0; t < static_cast<int>(frames.size()); ++t) {
    std::vector<bool> seen(kMaxLabel + 1, false);
    for (Label v : frames[t].data) {
      if (v != 0 && !seen[v]) {
        seen[v] = true;
        vis[v].push_back(t);
      }
    }
  }
  return vis;
}

/// Drops lineage records whose id never appears in any frame and clips the
/// remaining intervals to [first, last] visible frame. Children of a dropped
/// parent keep their record with parent reset to 0.
inline void prune_invisible_tracks(LabeledVideo& video) {
  const auto vis = visibility_by_id(video.frames);
  std::vector<TrackRecord> kept;
  for (const auto& rec : video.lineage.records) {
    auto it = vis.find(rec.id);
    if (it == vis.end()) continue;
    TrackRecord r = rec;
    r.birth = it->second.front();
    r.end = it->second.back();
    kept.push_back(r);
  }
  for (auto& r : kept) {
    if (r.parent != 0) {
      const bool parent_kept = std::any_of(kept.begin(), kept.end(),
                                           [&](const TrackRecord& p) { return p.id == r.parent; });
      if (!parent_kept) r.parent = 0;
    }
  }
  video.lineage.records = std::move(kept);
}

}  // namespace synthtrack
