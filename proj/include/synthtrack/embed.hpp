#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "synthtrack/core.hpp"
#include "synthtrack/refine.hpp"

namespace synthtrack {

/// Per-pixel d-dimensional feature vectors for every frame, plus an optional
/// foreground mask per frame. Values are row-major with the vector dimension
/// fastest.
struct EmbeddingField {
  int frames = 0;
  int height = 0;
  int width = 0;
  int dim = 0;
  std::vector<float> values;
  std::vector<BinaryMask> foreground;  // empty, or one mask per frame

  bool has_foreground() const { return !foreground.empty(); }

  std::size_t offset(int t, int x, int y) const {
    return ((static_cast<std::size_t>(t) * height + y) * width + x) * dim;
  }
  float* at(int t, int x, int y) { return values.data() + offset(t, x, y); }
  const float* at(int t, int x, int y) const { return values.data() + offset(t, x, y); }

  void validate() const {
    if (frames < 0 || height < 0 || width < 0 || dim < 0)
      throw std::invalid_argument("embedding field: negative dimensions");
    const std::size_t expected =
        static_cast<std::size_t>(frames) * height * width * static_cast<std::size_t>(dim);
    if (values.size() != expected) throw std::invalid_argument("embedding field: value count mismatch");
    for (float v : values)
      if (!std::isfinite(v)) throw std::invalid_argument("embedding field: non-finite value");
    if (!foreground.empty()) {
      if (static_cast<int>(foreground.size()) != frames)
        throw std::invalid_argument("embedding field: foreground frame count mismatch");
      for (const auto& m : foreground)
        if (m.width != width || m.height != height)
          throw std::invalid_argument("embedding field: foreground dimension mismatch");
    }
  }
};

struct ClusterParams {
  double bandwidth = 0.5;             // h, embedding-space distance
  int seed_stride = 4;                // every k-th foreground pixel seeds the search
  int max_iters = 100;
  double shift_tol_factor = 1e-3;     // converged when shift < factor * h
  double merge_radius_factor = 0.5;   // converged seeds within factor * h merge
  int chunk_len = 0;                  // frames clustered together; 0 = whole video
  double association_radius_factor = 1.0;  // cross-chunk mode matching, factor * h
  std::uint64_t seed = 0;

  void validate() const {
    if (bandwidth <= 0.0) throw std::invalid_argument("cluster params: bandwidth must be > 0");
    if (seed_stride < 1) throw std::invalid_argument("cluster params: seed_stride must be >= 1");
    if (max_iters < 1) throw std::invalid_argument("cluster params: max_iters must be >= 1");
    if (shift_tol_factor <= 0.0 || merge_radius_factor < 0.0 || association_radius_factor < 0.0)
      throw std::invalid_argument("cluster params: factors must be positive");
    if (chunk_len < 0) throw std::invalid_argument("cluster params: chunk_len must be >= 0");
  }
};

/// Stand-in for a learned per-pixel embedding network. Every track id gets a
/// random unit d-vector code, rejection-sampled so codes stay at least
/// min_code_separation apart; each foreground pixel carries its track's code
/// plus isotropic Gaussian noise. The noise draw does not depend on
/// noise_sigma, so runs that differ only in sigma see the same perturbation
/// directions scaled differently.
inline EmbeddingField oracle_embeddings(const LabeledVideo& video, int d, double noise_sigma, Rng rng,
                                        double min_code_separation = 0.1) {
  if (d < 2) throw std::invalid_argument("oracle embeddings: d must be >= 2");
  if (noise_sigma < 0.0) throw std::invalid_argument("oracle embeddings: noise_sigma must be >= 0");

  // Greedy rejection sampling can jam: an unlucky early placement may leave
  // the next code no room even though the set as a whole is feasible, so on
  // exhaustion the whole set is redrawn rather than giving up.
  std::map<Label, std::vector<double>> codes;
  Rng code_rng = rng.split(0xC0DE);
  bool all_ok = false;
  for (int round = 0; round < 100 && !all_ok; ++round) {
    codes.clear();
    all_ok = true;
    for (const TrackRecord& rec : video.lineage.records) {
      std::vector<double> code(d);
      bool ok = false;
      for (int attempt = 0; attempt < 10000 && !ok; ++attempt) {
        double norm2 = 0.0;
        for (double& c : code) {
          c = code_rng.gaussian();
          norm2 += c * c;
        }
        if (norm2 < 1e-12) continue;
        const double inv = 1.0 / std::sqrt(norm2);
        for (double& c : code) c *= inv;
        ok = true;
        for (const auto& [other_id, other] : codes) {
          double dist2 = 0.0;
          for (int k = 0; k < d; ++k) dist2 += (code[k] - other[k]) * (code[k] - other[k]);
          if (dist2 < min_code_separation * min_code_separation) {
            ok = false;
            break;
          }
        }
      }
      if (!ok) {
        all_ok = false;
        break;
      }
      codes[rec.id] = std::move(code);
    }
  }
  if (!all_ok) throw std::invalid_argument("oracle embeddings: cannot separate track codes");

  EmbeddingField field;
  field.frames = video.frame_count();
  field.height = video.height();
  field.width = video.width();
  field.dim = d;
  field.values.assign(static_cast<std::size_t>(field.frames) * field.height * field.width * d, 0.0f);
  field.foreground.reserve(field.frames);

  for (int t = 0; t < field.frames; ++t) {
    const LabelFrame& labels = video.frames[t];
    if (labels.width != field.width || labels.height != field.height)
      throw std::invalid_argument("oracle embeddings: frame dimension mismatch");
    Rng noise_rng = rng.split(0x401).split(t);
    BinaryMask fg(field.width, field.height, 0);
    for (int y = 0; y < field.height; ++y) {
      for (int x = 0; x < field.width; ++x) {
        const Label id = labels.at(x, y);
        if (id == 0) continue;
        fg.at(x, y) = 1;
        auto it = codes.find(id);
        if (it == codes.end()) throw std::invalid_argument("oracle embeddings: frame id missing from lineage");
        float* e = field.at(t, x, y);
        for (int k = 0; k < d; ++k) e[k] = static_cast<float>(it->second[k] + noise_sigma * noise_rng.gaussian());
      }
    }
    field.foreground.push_back(std::move(fg));
  }
  return field;
}

struct Mode {
  std::vector<double> position;
  double weight = 0.0;  // points inside the bandwidth window at convergence
};

/// Seeded mean-shift with a flat kernel. Seeds are a strided subsample of the
/// points (random stride offset); all seeds iterate toward their window mean,
/// coinciding seeds deduplicate each sweep, and converged seeds within the
/// merge radius fuse into weight-averaged modes, heaviest first. Modes come
/// back sorted by weight descending.
inline std::vector<Mode> mean_shift_modes(const std::vector<double>& points, std::size_t count, int dim,
                                          const ClusterParams& params, Rng rng) {
  params.validate();
  if (count == 0) throw std::invalid_argument("mean shift: empty input");
  if (points.size() != count * static_cast<std::size_t>(dim))
    throw std::invalid_argument("mean shift: point buffer size mismatch");

  const double h = params.bandwidth;
  const double h2 = h * h;
  const double tol = params.shift_tol_factor * h;
  const std::size_t stride = static_cast<std::size_t>(params.seed_stride);
  std::size_t offset = static_cast<std::size_t>(rng.uniform_int(0, params.seed_stride - 1));
  if (offset >= count) offset = 0;

  struct Seed {
    std::vector<double> pos;
    std::vector<double> prev;  // last position whose window held a point
    bool converged = false;
  };
  std::vector<Seed> seeds;
  for (std::size_t i = offset; i < count; i += stride) {
    std::vector<double> p(points.begin() + i * dim, points.begin() + (i + 1) * dim);
    seeds.push_back({p, p, false});
  }

  std::vector<double> mean(dim);
  for (int iter = 0; iter < params.max_iters; ++iter) {
    bool all_converged = true;
    for (Seed& s : seeds) {
      if (s.converged) continue;
      std::fill(mean.begin(), mean.end(), 0.0);
      std::size_t inside = 0;
      for (std::size_t i = 0; i < count; ++i) {
        const double* p = points.data() + i * dim;
        double d2 = 0.0;
        for (int k = 0; k < dim; ++k) {
          const double diff = p[k] - s.pos[k];
          d2 += diff * diff;
        }
        if (d2 <= h2) {
          for (int k = 0; k < dim; ++k) mean[k] += p[k];
          ++inside;
        }
      }
      if (inside == 0) {
        // The previous move overshot into empty space; retreat and stop.
        s.pos = s.prev;
        s.converged = true;
        continue;
      }
      s.prev = s.pos;
      double shift2 = 0.0;
      for (int k = 0; k < dim; ++k) {
        mean[k] /= static_cast<double>(inside);
        const double diff = mean[k] - s.pos[k];
        shift2 += diff * diff;
        s.pos[k] = mean[k];
      }
      s.converged = shift2 <= tol * tol;
      all_converged = all_converged && s.converged;
    }
    // Seeds that landed on the same position follow identical trajectories;
    // keep one copy each.
    std::vector<Seed> unique;
    for (Seed& s : seeds) {
      bool duplicate = false;
      for (const Seed& u : unique) {
        double d2 = 0.0;
        for (int k = 0; k < dim; ++k) d2 += (s.pos[k] - u.pos[k]) * (s.pos[k] - u.pos[k]);
        if (d2 <= 1e-18 * h2) {
          duplicate = true;
          break;
        }
      }
      if (!duplicate) unique.push_back(std::move(s));
    }
    seeds = std::move(unique);
    if (all_converged) break;
  }

  // Basin weight: how many points sit inside the window at the final position.
  std::vector<Mode> raw;
  for (const Seed& s : seeds) {
    std::size_t inside = 0;
    for (std::size_t i = 0; i < count; ++i) {
      const double* p = points.data() + i * dim;
      double d2 = 0.0;
      for (int k = 0; k < dim; ++k) {
        const double diff = p[k] - s.pos[k];
        d2 += diff * diff;
      }
      inside += d2 <= h2;
    }
    raw.push_back({s.pos, static_cast<double>(inside)});
  }
  std::stable_sort(raw.begin(), raw.end(), [](const Mode& a, const Mode& b) { return a.weight > b.weight; });

  const double merge_r = params.merge_radius_factor * h;
  std::vector<Mode> merged;
  std::vector<bool> used(raw.size(), false);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (used[i]) continue;
    Mode m{std::vector<double>(dim, 0.0), 0.0};
    for (std::size_t j = i; j < raw.size(); ++j) {
      if (used[j]) continue;
      double d2 = 0.0;
      for (int k = 0; k < dim; ++k) d2 += (raw[j].position[k] - raw[i].position[k]) * (raw[j].position[k] - raw[i].position[k]);
      if (d2 <= merge_r * merge_r) {
        used[j] = true;
        for (int k = 0; k < dim; ++k) m.position[k] += raw[j].weight * raw[j].position[k];
        m.weight += raw[j].weight;
      }
    }
    if (m.weight > 0.0)
      for (int k = 0; k < dim; ++k) m.position[k] /= m.weight;
    else
      m.position = raw[i].position;
    merged.push_back(std::move(m));
  }
  std::stable_sort(merged.begin(), merged.end(), [](const Mode& a, const Mode& b) { return a.weight > b.weight; });
  return merged;
}

/// Decodes an embedding field into tracked instances: per chunk of frames,
/// cluster all foreground embeddings into modes, assign every foreground
/// pixel to its nearest mode, and split each (frame, mode) pixel set into
/// 4-connected spatial components — the largest keeps the mode's track id,
/// stray fragments get fresh single-instance ids. Modes of consecutive chunks
/// are greedily matched by ascending embedding distance (within the
/// association radius) so track ids persist across chunk boundaries.
inline LabeledVideo decode(const EmbeddingField& field, const ClusterParams& params) {
  field.validate();
  params.validate();
  if (!field.has_foreground()) throw std::invalid_argument("foreground mask required");

  const int d = field.dim;
  const double assoc_r = params.association_radius_factor * params.bandwidth;
  const int chunk_len = params.chunk_len == 0 ? std::max(field.frames, 1) : params.chunk_len;
  Rng rng(params.seed);

  LabeledVideo out;
  out.frames.assign(field.frames, LabelFrame(field.width, field.height, 0));

  std::uint32_t next_id = 1;
  auto take_id = [&next_id] {
    if (next_id > kMaxLabel) throw std::invalid_argument("label id exceeds 65535");
    return static_cast<Label>(next_id++);
  };

  std::vector<Mode> prev_modes;
  std::vector<Label> prev_ids;

  for (int c0 = 0, chunk = 0; c0 < field.frames; c0 += chunk_len, ++chunk) {
    const int c1 = std::min(c0 + chunk_len, field.frames);

    std::vector<double> points;
    for (int t = c0; t < c1; ++t)
      for (int y = 0; y < field.height; ++y)
        for (int x = 0; x < field.width; ++x) {
          if (!field.foreground[t].at(x, y)) continue;
          const float* e = field.at(t, x, y);
          for (int k = 0; k < d; ++k) points.push_back(static_cast<double>(e[k]));
        }
    const std::size_t n = points.size() / static_cast<std::size_t>(std::max(d, 1));
    if (n == 0) {
      prev_modes.clear();
      prev_ids.clear();
      continue;
    }

    std::vector<Mode> modes = mean_shift_modes(points, n, d, params, rng.split(chunk));
    if (modes.size() > kMaxLabel) throw std::invalid_argument("label id exceeds 65535");

    // Carry ids across the chunk boundary: greedy nearest pairs first.
    std::vector<Label> ids(modes.size(), 0);
    struct Pair {
      double dist;
      std::size_t prev, cur;
    };
    std::vector<Pair> pairs;
    for (std::size_t i = 0; i < prev_modes.size(); ++i)
      for (std::size_t j = 0; j < modes.size(); ++j) {
        double d2 = 0.0;
        for (int k = 0; k < d; ++k)
          d2 += (prev_modes[i].position[k] - modes[j].position[k]) * (prev_modes[i].position[k] - modes[j].position[k]);
        const double dist = std::sqrt(d2);
        if (dist <= assoc_r) pairs.push_back({dist, i, j});
      }
    std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.dist < b.dist; });
    std::vector<bool> prev_used(prev_modes.size(), false), cur_used(modes.size(), false);
    for (const Pair& p : pairs) {
      if (prev_used[p.prev] || cur_used[p.cur]) continue;
      prev_used[p.prev] = true;
      cur_used[p.cur] = true;
      ids[p.cur] = prev_ids[p.prev];
    }
    for (std::size_t j = 0; j < modes.size(); ++j)
      if (ids[j] == 0) ids[j] = take_id();

    // Assign pixels to nearest mode, then enforce spatial coherence per frame.
    for (int t = c0; t < c1; ++t) {
      LabelFrame mode_of(field.width, field.height, 0);  // 1-based mode index
      for (int y = 0; y < field.height; ++y) {
        for (int x = 0; x < field.width; ++x) {
          if (!field.foreground[t].at(x, y)) continue;
          const float* e = field.at(t, x, y);
          std::size_t best = 0;
          double best_d2 = 0.0;
          for (std::size_t j = 0; j < modes.size(); ++j) {
            double d2 = 0.0;
            for (int k = 0; k < d; ++k) {
              const double diff = static_cast<double>(e[k]) - modes[j].position[k];
              d2 += diff * diff;
            }
            if (j == 0 || d2 < best_d2) {
              best = j;
              best_d2 = d2;
            }
          }
          mode_of.at(x, y) = static_cast<Label>(best + 1);
        }
      }

      for (std::size_t j = 0; j < modes.size(); ++j) {
        BinaryMask pixels(field.width, field.height, 0);
        bool any = false;
        for (std::size_t i = 0; i < pixels.data.size(); ++i) {
          pixels.data[i] = mode_of.data[i] == static_cast<Label>(j + 1);
          any = any || pixels.data[i];
        }
        if (!any) continue;
        const LabelFrame comps = connected_components(pixels, 4);
        std::map<Label, std::size_t> sizes;
        for (Label v : comps.data)
          if (v != 0) ++sizes[v];
        Label largest = 0;
        std::size_t largest_size = 0;
        for (const auto& [cid, sz] : sizes)
          if (sz > largest_size) {  // ties: lower component id = earlier raster-scan first pixel
            largest = cid;
            largest_size = sz;
          }
        std::map<Label, Label> comp_to_track;
        comp_to_track[largest] = ids[j];
        for (const auto& [cid, sz] : sizes)
          if (cid != largest) comp_to_track[cid] = take_id();
        for (std::size_t i = 0; i < comps.data.size(); ++i)
          if (comps.data[i] != 0) out.frames[t].data[i] = comp_to_track[comps.data[i]];
      }
    }

    prev_modes = std::move(modes);
    prev_ids = std::move(ids);
  }

  for (const auto& [id, frames_visible] : visibility_by_id(out.frames))
    out.lineage.add({id, frames_visible.front(), frames_visible.back(), 0});
  return out;
}

// ---------------------------------------------------------------------------
// EMB1 file format: "EMB1", five LE u32 (frames, height, width, dim, flags
// with bit0 = foreground present), then per frame h*w*d LE f32 (dim fastest),
// then per frame h*w foreground bytes if flagged.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
  out.push_back(static_cast<char>((v >> 16) & 0xFF));
  out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline void save_embeddings(const EmbeddingField& field, const std::string& path) {
  field.validate();
  std::string header = "EMB1";
  detail::put_u32(header, static_cast<std::uint32_t>(field.frames));
  detail::put_u32(header, static_cast<std::uint32_t>(field.height));
  detail::put_u32(header, static_cast<std::uint32_t>(field.width));
  detail::put_u32(header, static_cast<std::uint32_t>(field.dim));
  detail::put_u32(header, field.has_foreground() ? 1u : 0u);

  std::string body;
  body.reserve(field.values.size() * 4);
  for (float v : field.values) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    detail::put_u32(body, bits);
  }
  if (field.has_foreground()) {
    for (const BinaryMask& m : field.foreground)
      for (std::uint8_t b : m.data) body.push_back(b ? 1 : 0);
  }

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  os.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!os) throw IoError("write failed: " + path);
}

inline EmbeddingField load_embeddings(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  unsigned char header[24];
  is.read(reinterpret_cast<char*>(header), 24);
  if (is.gcount() != 24) throw IoError("truncated header: " + path);
  if (std::memcmp(header, "EMB1", 4) != 0) throw IoError("bad magic: " + path);

  EmbeddingField field;
  const std::uint32_t frames = detail::get_u32(header + 4);
  const std::uint32_t height = detail::get_u32(header + 8);
  const std::uint32_t width = detail::get_u32(header + 12);
  const std::uint32_t dim = detail::get_u32(header + 16);
  const std::uint32_t flags = detail::get_u32(header + 20);
  if (flags > 1) throw IoError("unknown flags: " + path);

  constexpr std::uint64_t kMaxElements = 1ull << 31;
  const std::uint64_t pixels = static_cast<std::uint64_t>(frames) * height * width;
  if (frames > (1u << 24) || height > (1u << 24) || width > (1u << 24) || dim > (1u << 24) ||
      pixels > kMaxElements || pixels * dim > kMaxElements)
    throw IoError("dimension overflow: " + path);

  field.frames = static_cast<int>(frames);
  field.height = static_cast<int>(height);
  field.width = static_cast<int>(width);
  field.dim = static_cast<int>(dim);

  const std::size_t value_count = static_cast<std::size_t>(pixels) * dim;
  std::vector<unsigned char> raw(value_count * 4);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(is.gcount()) != raw.size()) throw IoError("truncated payload: " + path);
  field.values.resize(value_count);
  for (std::size_t i = 0; i < value_count; ++i) {
    const std::uint32_t bits = detail::get_u32(raw.data() + i * 4);
    float v;
    std::memcpy(&v, &bits, 4);
    field.values[i] = v;
  }

  if (flags & 1u) {
    for (std::uint32_t t = 0; t < frames; ++t) {
      BinaryMask m(field.width, field.height, 0);
      std::vector<char> buf(m.data.size());
      is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
      if (static_cast<std::size_t>(is.gcount()) != buf.size()) throw IoError("truncated foreground: " + path);
      for (std::size_t i = 0; i < buf.size(); ++i) m.data[i] = buf[i] ? 1 : 0;
      field.foreground.push_back(std::move(m));
    }
  }
  is.peek();
  if (!is.eof()) throw IoError("trailing bytes beyond declared size (truncated or oversized payload): " + path);
  return field;
}

}  // namespace synthtrack
