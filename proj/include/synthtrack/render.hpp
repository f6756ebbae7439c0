#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>

#include "synthtrack/core.hpp"

namespace synthtrack {

struct RenderParams {
  double background_level = 0.15;
  double foreground_level = 0.7;
  double per_object_jitter = 0.05;  // std dev of the per-object brightness offset
  double psf_sigma = 1.0;           // Gaussian point-spread blur, pixels
  double noise_sigma = 0.03;        // additive Gaussian noise on intensities
  std::uint64_t seed = 0;

  void validate() const {
    if (background_level < 0.0 || background_level > 1.0 || foreground_level < 0.0 || foreground_level > 1.0)
      throw std::invalid_argument("render params: levels must be in [0,1]");
    if (foreground_level <= background_level)
      throw std::invalid_argument("render params: foreground_level must exceed background_level");
    if (per_object_jitter < 0.0 || psf_sigma < 0.0 || noise_sigma < 0.0)
      throw std::invalid_argument("render params: sigmas must be >= 0");
  }
};

/// Separable Gaussian blur, kernel truncated at 3 sigma, replicate edges.
template <typename T>
Grid<T> gaussian_blur(const Grid<T>& src, double sigma) {
  if (sigma <= 0.0 || src.data.empty()) return src;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(radius + 1);
  double sum = 0.0;
  for (int i = 0; i <= radius; ++i) {
    kernel[i] = std::exp(-0.5 * (static_cast<double>(i) * i) / (sigma * sigma));
    sum += (i == 0) ? kernel[i] : 2.0 * kernel[i];
  }
  for (double& k : kernel) k /= sum;

  const int w = src.width, h = src.height;
  std::vector<double> tmp(src.data.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = kernel[0] * static_cast<double>(src.at(x, y));
      for (int i = 1; i <= radius; ++i) {
        const int xl = std::max(0, x - i), xr = std::min(w - 1, x + i);
        acc += kernel[i] * (static_cast<double>(src.at(xl, y)) + static_cast<double>(src.at(xr, y)));
      }
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  Grid<T> out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = kernel[0] * tmp[static_cast<std::size_t>(y) * w + x];
      for (int i = 1; i <= radius; ++i) {
        const int yu = std::max(0, y - i), yd = std::min(h - 1, y + i);
        acc += kernel[i] * (tmp[static_cast<std::size_t>(yu) * w + x] + tmp[static_cast<std::size_t>(yd) * w + x]);
      }
      out.at(x, y) = static_cast<T>(acc);
    }
  }
  return out;
}

/// Brightness offset applied to an object everywhere it appears. Keyed by the
/// render seed and the id only, so the same object renders with the same tone
/// in every frame.
inline double object_jitter(const RenderParams& params, Label id) {
  Rng r = Rng(params.seed).split(0x11).split(id);
  return params.per_object_jitter * r.gaussian();
}

/// Paints labels at foreground_level (+ per-object jitter) over the
/// background level, blurs with the point-spread sigma, adds pixel noise from
/// `noise_rng` in raster order, and clamps to [0,1].
inline IntensityFrame render_frame(const LabelFrame& labels, const RenderParams& params, Rng& noise_rng) {
  params.validate();
  std::map<Label, double> jitter;
  for (Label v : labels.data)
    if (v != 0 && !jitter.count(v)) jitter[v] = object_jitter(params, v);

  IntensityFrame img(labels.width, labels.height);
  for (std::size_t i = 0; i < labels.data.size(); ++i) {
    const Label v = labels.data[i];
    img.data[i] = static_cast<float>(v == 0 ? params.background_level : params.foreground_level + jitter[v]);
  }
  img = gaussian_blur(img, params.psf_sigma);
  for (float& p : img.data) {
    const double noisy = static_cast<double>(p) + params.noise_sigma * noise_rng.gaussian();
    p = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
  }
  return img;
}

/// Frames are rendered independently: the noise stream for frame t is derived
/// from (seed, t), so rendering a subset of frames gives the same pixels.
inline std::vector<IntensityFrame> render_video(const std::vector<LabelFrame>& frames, const RenderParams& params) {
  params.validate();
  Rng master(params.seed);
  std::vector<IntensityFrame> out;
  out.reserve(frames.size());
  for (std::size_t t = 0; t < frames.size(); ++t) {
    Rng noise_rng = master.split(0x22).split(t);
    out.push_back(render_frame(frames[t], params, noise_rng));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binarization
// ---------------------------------------------------------------------------

/// Otsu threshold over a 256-bin histogram (bin = floor(v * 256), capped).
/// Maximizes between-class variance with exact integer arithmetic; ties break
/// toward the lowest threshold. Returns (k+1)/256 for the winning split after
/// bin k. Throws "degenerate histogram" when all pixels land in one bin.
inline double otsu_threshold(const IntensityFrame& frame) {
  if (frame.data.empty()) throw std::invalid_argument("otsu: empty frame");
  std::array<std::uint64_t, 256> hist{};
  for (float v : frame.data) {
    const int bin = std::clamp(static_cast<int>(std::floor(static_cast<double>(v) * 256.0)), 0, 255);
    ++hist[bin];
  }
  int nonempty = 0;
  for (auto c : hist) nonempty += (c != 0);
  if (nonempty < 2) throw std::invalid_argument("degenerate histogram: image has a single intensity bin");

  // Between-class variance for split k is (S0*w1 - S1*w0)^2 / (w0*w1) where
  // w = pixel counts and S = sum of bin indices; compare as exact fractions.
  using u128 = unsigned __int128;
  std::uint64_t total_w = frame.data.size(), total_s = 0;
  for (int b = 0; b < 256; ++b) total_s += hist[b] * static_cast<std::uint64_t>(b);

  // Exact rational comparison fits in 128 bits up to ~550x550 frames; larger
  // frames fall back to long double (same tie-to-lowest rule).
  const bool exact = total_w <= 302500;
  int best_k = -1;
  u128 best_num = 0;
  std::uint64_t best_den = 1;
  long double best_f = -1.0L;
  std::uint64_t w0 = 0, s0 = 0;
  for (int k = 0; k < 255; ++k) {
    w0 += hist[k];
    s0 += hist[k] * static_cast<std::uint64_t>(k);
    const std::uint64_t w1 = total_w - w0;
    if (w0 == 0 || w1 == 0) continue;
    const std::uint64_t s1 = total_s - s0;
    const u128 a = (s0 * static_cast<u128>(w1) > s1 * static_cast<u128>(w0))
                       ? s0 * static_cast<u128>(w1) - s1 * static_cast<u128>(w0)
                       : s1 * static_cast<u128>(w0) - s0 * static_cast<u128>(w1);
    const std::uint64_t den = w0 * w1;
    if (exact) {
      const u128 num = a * a;
      // num/den > best_num/best_den  <=>  num*best_den > best_num*den
      if (best_k < 0 || num * best_den > best_num * static_cast<u128>(den)) {
        best_k = k;
        best_num = num;
        best_den = den;
      }
    } else {
      const long double af = static_cast<long double>(a);
      const long double f = af * af / static_cast<long double>(den);
      if (best_k < 0 || f > best_f) {
        best_k = k;
        best_f = f;
      }
    }
  }
  return (best_k + 1) / 256.0;
}

struct Binarizer {
  enum class Kind { Fixed, Otsu };
  Kind kind = Kind::Otsu;
  double threshold = 0.5;

  static Binarizer fixed(double t) { return {Kind::Fixed, t}; }
  static Binarizer otsu() { return {Kind::Otsu, 0.0}; }
};

/// Foreground = pixels with intensity >= threshold.
inline BinaryMask binarize(const IntensityFrame& frame, const Binarizer& method) {
  if (frame.data.empty()) throw std::invalid_argument("binarize: empty frame");
  const double t = method.kind == Binarizer::Kind::Fixed ? method.threshold : otsu_threshold(frame);
  BinaryMask mask(frame.width, frame.height);
  for (std::size_t i = 0; i < frame.data.size(); ++i) mask.data[i] = static_cast<double>(frame.data[i]) >= t ? 1 : 0;
  return mask;
}

}  // namespace synthtrack
