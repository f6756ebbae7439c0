#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <tuple>
#include <utility>

#include "synthtrack/core.hpp"
#include "synthtrack/render.hpp"

namespace synthtrack {

/// Labels maximal connected foreground regions in raster-scan order of their
/// first pixel. connectivity is 8 (default) or 4.
inline LabelFrame connected_components(const BinaryMask& mask, int connectivity = 8) {
  if (connectivity != 4 && connectivity != 8) throw std::invalid_argument("connectivity must be 4 or 8");
  LabelFrame out(mask.width, mask.height, 0);
  std::uint32_t next = 1;
  std::vector<PixelCoord> stack;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.at(x, y) || out.at(x, y) != 0) continue;
      if (next > kMaxLabel) throw std::invalid_argument("more than 65535 connected components");
      const Label id = static_cast<Label>(next++);
      stack.assign(1, {x, y});
      out.at(x, y) = id;
      while (!stack.empty()) {
        const PixelCoord p = stack.back();
        stack.pop_back();
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            if (dx == 0 && dy == 0) continue;
            if (connectivity == 4 && dx != 0 && dy != 0) continue;
            const int nx = p.x + dx, ny = p.y + dy;
            if (!mask.in_bounds(nx, ny) || !mask.at(nx, ny) || out.at(nx, ny) != 0) continue;
            out.at(nx, ny) = id;
            stack.push_back({nx, ny});
          }
        }
      }
    }
  }
  return out;
}

namespace detail {

/// 1D squared-distance transform of a sampled function (Felzenszwalb &
/// Huttenlocher lower envelope of parabolas).
inline void edt_1d(const std::vector<double>& f, std::vector<double>& d, int n) {
  static constexpr double kInf = 1e18;
  std::vector<int> v(n);
  std::vector<double> z(n + 1);
  int k = 0;
  v[0] = 0;
  z[0] = -kInf;
  z[1] = kInf;
  for (int q = 1; q < n; ++q) {
    double s = ((f[q] + static_cast<double>(q) * q) - (f[v[k]] + static_cast<double>(v[k]) * v[k])) /
               (2.0 * q - 2.0 * v[k]);
    while (s <= z[k]) {
      --k;
      s = ((f[q] + static_cast<double>(q) * q) - (f[v[k]] + static_cast<double>(v[k]) * v[k])) /
          (2.0 * q - 2.0 * v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    d[q] = dq * dq + f[v[k]];
  }
}

/// Exact squared Euclidean distance to the nearest set pixel (predicate
/// value), the full-image diagonal squared if the set is empty.
inline Grid<double> edt_squared(const BinaryMask& mask, std::uint8_t set_value) {
  const int w = mask.width, h = mask.height;
  const double cap = static_cast<double>(w) * w + static_cast<double>(h) * h;
  Grid<double> dist(w, h, 0.0);
  std::vector<double> f(std::max(w, h)), d(std::max(w, h));
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) f[y] = (mask.at(x, y) == set_value) ? 0.0 : cap;
    edt_1d(f, d, h);
    for (int y = 0; y < h; ++y) dist.at(x, y) = d[y];
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) f[x] = dist.at(x, y);
    edt_1d(f, d, w);
    for (int x = 0; x < w; ++x) dist.at(x, y) = std::min(d[x], cap);
  }
  return dist;
}

}  // namespace detail

/// Per-pixel signed Euclidean distance to the mask boundary: positive
/// outside, zero on inside-edge pixels, negative in the interior, magnitudes
/// capped at the image diagonal. Computed from two exact distance transforms.
struct SignedDistanceMap {
  Grid<double> values;
};

inline SignedDistanceMap signed_distance(const BinaryMask& mask) {
  const double diag = std::sqrt(static_cast<double>(mask.width) * mask.width +
                                static_cast<double>(mask.height) * mask.height);
  const Grid<double> to_fg = detail::edt_squared(mask, 1);
  const Grid<double> to_bg = detail::edt_squared(mask, 0);
  SignedDistanceMap sd{Grid<double>(mask.width, mask.height, 0.0)};
  for (std::size_t i = 0; i < mask.data.size(); ++i) {
    if (mask.data[i]) {
      sd.values.data[i] = -(std::min(std::sqrt(to_bg.data[i]), diag) - 1.0);
    } else {
      sd.values.data[i] = std::min(std::sqrt(to_fg.data[i]), diag);
    }
  }
  return sd;
}

struct DeformationField {
  Grid<double> dx;
  Grid<double> dy;

  int width() const { return dx.width; }
  int height() const { return dx.height; }
};

struct RegistrationOptions {
  double step = 1.0;
  double fluid_sigma = 1.0;      // smooths each update
  double diffusion_sigma = 1.0;  // smooths the accumulated field
  int levels = 3;                // coarse-to-fine factors x4, x2, x1
  int max_iters = 100;
  double stop_tol = 0.01;        // mean |update| in pixels
  double max_displacement = 20.0;

  void validate() const {
    if (levels < 1 || levels > 6) throw std::invalid_argument("registration: levels must be in [1,6]");
    if (max_iters < 1) throw std::invalid_argument("registration: max_iters must be >= 1");
    if (step <= 0.0 || stop_tol <= 0.0 || max_displacement <= 0.0)
      throw std::invalid_argument("registration: step, stop_tol, max_displacement must be positive");
    if (fluid_sigma < 0.0 || diffusion_sigma < 0.0)
      throw std::invalid_argument("registration: sigmas must be >= 0");
  }
};

struct RegistrationResult {
  DeformationField field;
  bool converged = false;
  double pre_dice = 0.0;
  double post_dice = 0.0;
};

inline double dice(const BinaryMask& a, const BinaryMask& b) {
  if (a.width != b.width || a.height != b.height) throw std::invalid_argument("dice: dimension mismatch");
  std::size_t inter = 0, total = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const bool av = a.data[i] != 0, bv = b.data[i] != 0;
    inter += (av && bv);
    total += av + bv;
  }
  return total == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(total);
}

namespace detail {

inline double bilinear(const Grid<double>& g, double x, double y) {
  const double cx = std::clamp(x, 0.0, static_cast<double>(g.width - 1));
  const double cy = std::clamp(y, 0.0, static_cast<double>(g.height - 1));
  const int x0 = std::min(static_cast<int>(std::floor(cx)), g.width - 1);
  const int y0 = std::min(static_cast<int>(std::floor(cy)), g.height - 1);
  const int x1 = std::min(x0 + 1, g.width - 1);
  const int y1 = std::min(y0 + 1, g.height - 1);
  const double fx = cx - x0, fy = cy - y0;
  return g.at(x0, y0) * (1 - fx) * (1 - fy) + g.at(x1, y0) * fx * (1 - fy) +
         g.at(x0, y1) * (1 - fx) * fy + g.at(x1, y1) * fx * fy;
}

/// Block-mean downsample of a mask-derived scalar grid by an integer factor;
/// distances scale with resolution, so values are divided by the factor.
inline Grid<double> downsample_sdm(const Grid<double>& g, int factor) {
  if (factor == 1) return g;
  const int w = (g.width + factor - 1) / factor;
  const int h = (g.height + factor - 1) / factor;
  Grid<double> out(w, h, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double sum = 0.0;
      int count = 0;
      for (int yy = y * factor; yy < std::min((y + 1) * factor, g.height); ++yy)
        for (int xx = x * factor; xx < std::min((x + 1) * factor, g.width); ++xx) {
          sum += g.at(xx, yy);
          ++count;
        }
      out.at(x, y) = sum / count / factor;
    }
  }
  return out;
}

inline BinaryMask warp_mask_by(const BinaryMask& mask, const DeformationField& u) {
  BinaryMask out(mask.width, mask.height, 0);
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      const int sx = static_cast<int>(std::lround(x + u.dx.at(x, y)));
      const int sy = static_cast<int>(std::lround(y + u.dy.at(x, y)));
      out.at(x, y) = mask.in_bounds(sx, sy) ? mask.at(sx, sy) : 0;
    }
  }
  return out;
}

}  // namespace detail

/// Demons-style registration of `moving` onto `fixed`, run on signed distance
/// maps, coarse-to-fine. Each iteration computes the classic demons update
/// from the residual and the warped-moving gradient, smooths the update
/// (fluid) and the accumulated field (diffusion), and caps displacement. The
/// returned field is the full-resolution iterate with the best Dice between
/// the warped moving mask and the fixed mask — the zero field is always a
/// candidate, so post-Dice never falls below pre-Dice.
inline RegistrationResult register_masks(const BinaryMask& moving, const BinaryMask& fixed,
                                         const RegistrationOptions& opts = {}) {
  if (moving.width != fixed.width || moving.height != fixed.height)
    throw std::invalid_argument("register: dimension mismatch");
  opts.validate();

  const Grid<double> sdm_moving = signed_distance(moving).values;
  const Grid<double> sdm_fixed = signed_distance(fixed).values;

  RegistrationResult result;
  result.pre_dice = dice(moving, fixed);
  result.field = {Grid<double>(moving.width, moving.height, 0.0), Grid<double>(moving.width, moving.height, 0.0)};
  result.post_dice = result.pre_dice;

  DeformationField u;  // at current level resolution
  bool have_u = false;
  for (int level = opts.levels - 1; level >= 0; --level) {
    const int factor = 1 << level;
    const Grid<double> dm = detail::downsample_sdm(sdm_moving, factor);
    const Grid<double> df = detail::downsample_sdm(sdm_fixed, factor);
    const int w = dm.width, h = dm.height;
    const double cap = opts.max_displacement / factor;

    if (!have_u) {
      u = {Grid<double>(w, h, 0.0), Grid<double>(w, h, 0.0)};
      have_u = true;
    } else {
      DeformationField up{Grid<double>(w, h, 0.0), Grid<double>(w, h, 0.0)};
      const double sx = static_cast<double>(u.dx.width) / w;
      const double sy = static_cast<double>(u.dx.height) / h;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          up.dx.at(x, y) = 2.0 * detail::bilinear(u.dx, x * sx, y * sy);
          up.dy.at(x, y) = 2.0 * detail::bilinear(u.dy, x * sx, y * sy);
        }
      u = std::move(up);
    }

    Grid<double> warped(w, h, 0.0);
    DeformationField du{Grid<double>(w, h, 0.0), Grid<double>(w, h, 0.0)};
    bool level_converged = false;
    for (int iter = 0; iter < opts.max_iters && !level_converged; ++iter) {
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) warped.at(x, y) = detail::bilinear(dm, x + u.dx.at(x, y), y + u.dy.at(x, y));

      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const int xr = std::min(x + 1, w - 1), xl = std::max(x - 1, 0);
          const int yd = std::min(y + 1, h - 1), yu = std::max(y - 1, 0);
          const double gx = xr == xl ? 0.0 : (warped.at(xr, y) - warped.at(xl, y)) / (xr - xl);
          const double gy = yd == yu ? 0.0 : (warped.at(x, yd) - warped.at(x, yu)) / (yd - yu);
          const double diff = df.at(x, y) - warped.at(x, y);
          const double denom = gx * gx + gy * gy + diff * diff;
          const double scale = denom < 1e-12 ? 0.0 : opts.step * diff / denom;
          du.dx.at(x, y) = scale * gx;
          du.dy.at(x, y) = scale * gy;
        }
      }
      if (opts.fluid_sigma > 0.0) {
        du.dx = gaussian_blur(du.dx, opts.fluid_sigma);
        du.dy = gaussian_blur(du.dy, opts.fluid_sigma);
      }
      double mean_update = 0.0;
      for (std::size_t i = 0; i < du.dx.data.size(); ++i) {
        u.dx.data[i] += du.dx.data[i];
        u.dy.data[i] += du.dy.data[i];
        mean_update += std::hypot(du.dx.data[i], du.dy.data[i]);
      }
      mean_update /= static_cast<double>(du.dx.data.size());
      if (opts.diffusion_sigma > 0.0) {
        u.dx = gaussian_blur(u.dx, opts.diffusion_sigma);
        u.dy = gaussian_blur(u.dy, opts.diffusion_sigma);
      }
      for (std::size_t i = 0; i < u.dx.data.size(); ++i) {
        const double mag = std::hypot(u.dx.data[i], u.dy.data[i]);
        if (mag > cap) {
          u.dx.data[i] *= cap / mag;
          u.dy.data[i] *= cap / mag;
        }
      }
      if (level == 0) {
        const double d = dice(detail::warp_mask_by(moving, u), fixed);
        if (d > result.post_dice) {
          result.post_dice = d;
          result.field.dx = u.dx;
          result.field.dy = u.dy;
        }
      }
      level_converged = mean_update < opts.stop_tol;
    }
    if (level == 0) result.converged = level_converged;
  }
  return result;
}

/// Backward warp with nearest-neighbor sampling: out(p) = labels(p + u(p)),
/// background when the sample falls outside.
inline LabelFrame warp_labels(const LabelFrame& labels, const DeformationField& field) {
  if (labels.width != field.width() || labels.height != field.height())
    throw std::invalid_argument("warp_labels: dimension mismatch");
  LabelFrame out(labels.width, labels.height, 0);
  for (int y = 0; y < labels.height; ++y) {
    for (int x = 0; x < labels.width; ++x) {
      const int sx = static_cast<int>(std::lround(x + field.dx.at(x, y)));
      const int sy = static_cast<int>(std::lround(y + field.dy.at(x, y)));
      out.at(x, y) = labels.in_bounds(sx, sy) ? labels.at(sx, sy) : 0;
    }
  }
  return out;
}

struct CleanReport {
  std::vector<Label> removed_ids;
  std::vector<int> inpainted_components;  // component ids in raster-scan order
  std::size_t inpainted_pixels = 0;
  double background_mean = 0.0;
};

/// Two-rule cleanup: (a) instances not covered by the mask at `coverage` or
/// better lose all their pixels; (b) mask components left without that much
/// annotation overlap after (a) have their intensity replaced by the mean
/// background intensity (background = mask complement). Rule (b) sees the
/// post-removal labels so that cleaning is idempotent.
inline std::tuple<LabelFrame, IntensityFrame, CleanReport> clean(const LabelFrame& deformed, const BinaryMask& mask,
                                                                 const IntensityFrame& intensity,
                                                                 double coverage = 0.90) {
  if (deformed.width != mask.width || deformed.height != mask.height || intensity.width != mask.width ||
      intensity.height != mask.height)
    throw std::invalid_argument("clean: dimension mismatch");
  if (coverage < 0.0 || coverage > 1.0) throw std::invalid_argument("clean: coverage must be in [0,1]");

  std::map<Label, std::size_t> area, covered;
  for (std::size_t i = 0; i < deformed.data.size(); ++i) {
    const Label v = deformed.data[i];
    if (v == 0) continue;
    ++area[v];
    if (mask.data[i]) ++covered[v];
  }

  CleanReport report;
  std::set<Label> removed;
  for (const auto& [id, a] : area) {
    const std::size_t cov = covered.count(id) ? covered[id] : 0;
    if (static_cast<double>(cov) < coverage * static_cast<double>(a)) removed.insert(id);
  }
  report.removed_ids.assign(removed.begin(), removed.end());

  LabelFrame labels_out = deformed;
  for (Label& v : labels_out.data)
    if (v != 0 && removed.count(v)) v = 0;

  double bg_sum = 0.0;
  std::size_t bg_count = 0;
  for (std::size_t i = 0; i < mask.data.size(); ++i) {
    if (!mask.data[i]) {
      bg_sum += static_cast<double>(intensity.data[i]);
      ++bg_count;
    }
  }
  report.background_mean = bg_count ? bg_sum / static_cast<double>(bg_count) : 0.0;

  const LabelFrame components = connected_components(mask, 8);
  std::map<Label, std::size_t> comp_size, comp_overlap;
  for (std::size_t i = 0; i < components.data.size(); ++i) {
    const Label c = components.data[i];
    if (c == 0) continue;
    ++comp_size[c];
    if (labels_out.data[i] != 0) ++comp_overlap[c];
  }
  std::set<Label> inpaint;
  for (const auto& [c, size] : comp_size) {
    const std::size_t ov = comp_overlap.count(c) ? comp_overlap[c] : 0;
    if (static_cast<double>(ov) < coverage * static_cast<double>(size)) inpaint.insert(c);
  }

  IntensityFrame intensity_out = intensity;
  for (std::size_t i = 0; i < components.data.size(); ++i) {
    const Label c = components.data[i];
    if (c != 0 && inpaint.count(c)) {
      intensity_out.data[i] = static_cast<float>(report.background_mean);
      ++report.inpainted_pixels;
    }
  }
  for (Label c : inpaint) report.inpainted_components.push_back(static_cast<int>(c));
  return {std::move(labels_out), std::move(intensity_out), std::move(report)};
}

struct RefineOptions {
  RegistrationOptions registration;
  bool enable_clean = true;
  double coverage = 0.90;
};

struct RefineResult {
  LabeledVideo video;
  std::vector<IntensityFrame> intensities;
  std::vector<CleanReport> reports;
  std::vector<RegistrationResult> registrations;
};

/// Per-frame register -> warp -> clean over a whole video. The lineage is
/// recomputed from the surviving pixels: intervals clip to the visible range
/// and ids wiped from every frame drop out.
inline RefineResult refine_video(const LabeledVideo& circles, const std::vector<BinaryMask>& masks,
                                 const std::vector<IntensityFrame>& intensities, const RefineOptions& opts = {}) {
  if (circles.frames.size() != masks.size() || masks.size() != intensities.size())
    throw std::invalid_argument("refine_video: length mismatch");
  RefineResult out;
  out.video.lineage = circles.lineage;
  for (std::size_t t = 0; t < masks.size(); ++t) {
    BinaryMask moving(circles.frames[t].width, circles.frames[t].height, 0);
    for (std::size_t i = 0; i < moving.data.size(); ++i) moving.data[i] = circles.frames[t].data[i] != 0;
    RegistrationResult reg = register_masks(moving, masks[t], opts.registration);
    LabelFrame warped = warp_labels(circles.frames[t], reg.field);
    out.registrations.push_back(std::move(reg));
    if (opts.enable_clean) {
      auto [labels, intensity, report] = clean(warped, masks[t], intensities[t], opts.coverage);
      out.video.frames.push_back(std::move(labels));
      out.intensities.push_back(std::move(intensity));
      out.reports.push_back(std::move(report));
    } else {
      out.video.frames.push_back(std::move(warped));
      out.intensities.push_back(intensities[t]);
      out.reports.emplace_back();
    }
  }
  prune_invisible_tracks(out.video);
  return out;
}

}  // namespace synthtrack
