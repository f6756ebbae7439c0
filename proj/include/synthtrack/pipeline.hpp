#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "synthtrack/core.hpp"
#include "synthtrack/embed.hpp"
#include "synthtrack/hela.hpp"
#include "synthtrack/metrics.hpp"
#include "synthtrack/microvilli.hpp"
#include "synthtrack/refine.hpp"
#include "synthtrack/render.hpp"
#include "synthtrack/video_io.hpp"

namespace synthtrack {

/// A pipeline stage failed; carries the stage name (maps to exit code 4).
struct StageError : std::runtime_error {
  std::string stage;
  StageError(std::string stage_name, const std::string& cause)
      : std::runtime_error("stage '" + stage_name + "' failed: " + cause), stage(std::move(stage_name)) {}
};

enum class Scenario { Microvilli, Hela };

struct EmbedParams {
  int dim = 8;
  double noise_sigma = 0.0;
  double min_code_separation = 0.1;
};

struct IoParams {
  int intensity_bits = 16;
  std::string intensity_pattern = "t%03d.png";
};

struct PipelineConfig {
  Scenario scenario = Scenario::Hela;
  std::uint64_t seed = 0;
  int video_count = 1;
  bool split_quadrants = false;
  MicrovilliConfig microvilli;
  HelaConfig hela;
  RenderParams render;
  Binarizer binarizer = Binarizer::otsu();
  bool enable_ad = false;
  bool enable_ac = false;
  RefineOptions refine;
  EmbedParams embed;
  ClusterParams cluster;
  AogmWeights weights;
  IoParams io;
};

namespace detail {

using nlohmann::json;

inline void check_keys(const json& j, const std::string& context, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError("config section '" + context + "' must be an object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* k : allowed) ok = ok || item.key() == k;
    if (!ok) throw ConfigError("unknown key '" + item.key() + "' in " + context);
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config key '") + key + "' has the wrong type");
  }
}

inline MicrovilliConfig parse_microvilli(const json& j, MicrovilliConfig base) {
  check_keys(j, "sim (microvilli)",
             {"canvas_w", "canvas_h", "target_w", "target_h", "object_count", "count_range", "frame_count",
              "p_translate", "translate_step", "p_rotate", "rotate_step_deg", "p_length", "length_step",
              "width_min", "width_max", "length_min", "length_max", "min_length"});
  base.canvas_w = get_or(j, "canvas_w", base.canvas_w);
  base.canvas_h = get_or(j, "canvas_h", base.canvas_h);
  base.target_w = get_or(j, "target_w", base.target_w);
  base.target_h = get_or(j, "target_h", base.target_h);
  base.object_count = get_or(j, "object_count", base.object_count);
  if (j.contains("count_range")) {
    const auto range = get_or(j, "count_range", std::vector<int>{});
    if (range.size() != 2) throw ConfigError("count_range must be [min, max]");
    base.count_range = {range[0], range[1]};
  }
  base.frame_count = get_or(j, "frame_count", base.frame_count);
  base.p_translate = get_or(j, "p_translate", base.p_translate);
  base.translate_step = get_or(j, "translate_step", base.translate_step);
  base.p_rotate = get_or(j, "p_rotate", base.p_rotate);
  base.rotate_step_deg = get_or(j, "rotate_step_deg", base.rotate_step_deg);
  base.p_length = get_or(j, "p_length", base.p_length);
  base.length_step = get_or(j, "length_step", base.length_step);
  base.width_min = get_or(j, "width_min", base.width_min);
  base.width_max = get_or(j, "width_max", base.width_max);
  base.length_min = get_or(j, "length_min", base.length_min);
  base.length_max = get_or(j, "length_max", base.length_max);
  base.min_length = get_or(j, "min_length", base.min_length);
  return base;
}

inline HelaConfig parse_hela(const json& j, HelaConfig base) {
  check_keys(j, "sim (hela)",
             {"canvas_w", "canvas_h", "target_w", "target_h", "object_count", "frame_count", "radius_min",
              "radius_max", "max_translation", "p_radius", "overlap_factor", "n_appear", "n_disappear",
              "n_mitosis", "daughter_shrink", "daughter_distance", "growth_interval"});
  base.canvas_w = get_or(j, "canvas_w", base.canvas_w);
  base.canvas_h = get_or(j, "canvas_h", base.canvas_h);
  base.target_w = get_or(j, "target_w", base.target_w);
  base.target_h = get_or(j, "target_h", base.target_h);
  base.object_count = get_or(j, "object_count", base.object_count);
  base.frame_count = get_or(j, "frame_count", base.frame_count);
  base.radius_min = get_or(j, "radius_min", base.radius_min);
  base.radius_max = get_or(j, "radius_max", base.radius_max);
  base.max_translation = get_or(j, "max_translation", base.max_translation);
  base.p_radius = get_or(j, "p_radius", base.p_radius);
  base.overlap_factor = get_or(j, "overlap_factor", base.overlap_factor);
  base.n_appear = get_or(j, "n_appear", base.n_appear);
  base.n_disappear = get_or(j, "n_disappear", base.n_disappear);
  base.n_mitosis = get_or(j, "n_mitosis", base.n_mitosis);
  base.daughter_shrink = get_or(j, "daughter_shrink", base.daughter_shrink);
  base.daughter_distance = get_or(j, "daughter_distance", base.daughter_distance);
  base.growth_interval = get_or(j, "growth_interval", base.growth_interval);
  return base;
}

inline RenderParams parse_render(const json& j, RenderParams base) {
  check_keys(j, "render",
             {"background_level", "foreground_level", "per_object_jitter", "psf_sigma", "noise_sigma"});
  base.background_level = get_or(j, "background_level", base.background_level);
  base.foreground_level = get_or(j, "foreground_level", base.foreground_level);
  base.per_object_jitter = get_or(j, "per_object_jitter", base.per_object_jitter);
  base.psf_sigma = get_or(j, "psf_sigma", base.psf_sigma);
  base.noise_sigma = get_or(j, "noise_sigma", base.noise_sigma);
  return base;
}

inline Binarizer parse_binarizer(const json& j) {
  check_keys(j, "binarize", {"method", "threshold"});
  const std::string method = get_or<std::string>(j, "method", "otsu");
  if (method == "otsu") return Binarizer::otsu();
  if (method == "fixed") return Binarizer::fixed(get_or(j, "threshold", 0.5));
  throw ConfigError("binarize method must be 'otsu' or 'fixed'");
}

inline RegistrationOptions parse_registration(const json& j, RegistrationOptions base) {
  check_keys(j, "refine.registration",
             {"step", "fluid_sigma", "diffusion_sigma", "levels", "max_iters", "stop_tol", "max_displacement"});
  base.step = get_or(j, "step", base.step);
  base.fluid_sigma = get_or(j, "fluid_sigma", base.fluid_sigma);
  base.diffusion_sigma = get_or(j, "diffusion_sigma", base.diffusion_sigma);
  base.levels = get_or(j, "levels", base.levels);
  base.max_iters = get_or(j, "max_iters", base.max_iters);
  base.stop_tol = get_or(j, "stop_tol", base.stop_tol);
  base.max_displacement = get_or(j, "max_displacement", base.max_displacement);
  return base;
}

inline ClusterParams parse_cluster(const json& j, ClusterParams base) {
  check_keys(j, "cluster",
             {"bandwidth", "seed_stride", "max_iters", "shift_tol_factor", "merge_radius_factor", "chunk_len",
              "association_radius_factor"});
  base.bandwidth = get_or(j, "bandwidth", base.bandwidth);
  base.seed_stride = get_or(j, "seed_stride", base.seed_stride);
  base.max_iters = get_or(j, "max_iters", base.max_iters);
  base.shift_tol_factor = get_or(j, "shift_tol_factor", base.shift_tol_factor);
  base.merge_radius_factor = get_or(j, "merge_radius_factor", base.merge_radius_factor);
  base.chunk_len = get_or(j, "chunk_len", base.chunk_len);
  base.association_radius_factor = get_or(j, "association_radius_factor", base.association_radius_factor);
  return base;
}

inline AogmWeights parse_weights(const json& j, AogmWeights base) {
  check_keys(j, "metrics", {"w_ns", "w_fn", "w_fp", "w_ed", "w_ea", "w_ec"});
  base.ns = get_or(j, "w_ns", base.ns);
  base.fn = get_or(j, "w_fn", base.fn);
  base.fp = get_or(j, "w_fp", base.fp);
  base.ed = get_or(j, "w_ed", base.ed);
  base.ea = get_or(j, "w_ea", base.ea);
  base.ec = get_or(j, "w_ec", base.ec);
  return base;
}

}  // namespace detail

inline PipelineConfig parse_pipeline_config(const nlohmann::json& j) {
  detail::check_keys(j, "config",
                     {"scenario", "seed", "video_count", "split_quadrants", "sim", "render", "binarize",
                      "refine", "embed", "cluster", "metrics", "io"});
  if (!j.contains("scenario")) throw ConfigError("config requires 'scenario'");

  PipelineConfig cfg;
  const std::string scenario = detail::get_or<std::string>(j, "scenario", "");
  if (scenario == "microvilli") {
    cfg.scenario = Scenario::Microvilli;
  } else if (scenario == "hela") {
    cfg.scenario = Scenario::Hela;
  } else {
    throw ConfigError("scenario must be 'microvilli' or 'hela'");
  }
  cfg.seed = detail::get_or<std::uint64_t>(j, "seed", 0);
  cfg.video_count = detail::get_or(j, "video_count", 1);
  if (cfg.video_count < 1) throw ConfigError("video_count must be >= 1");
  cfg.split_quadrants = detail::get_or(j, "split_quadrants", false);

  if (j.contains("sim")) {
    if (cfg.scenario == Scenario::Microvilli)
      cfg.microvilli = detail::parse_microvilli(j.at("sim"), cfg.microvilli);
    else
      cfg.hela = detail::parse_hela(j.at("sim"), cfg.hela);
  }
  if (j.contains("render")) cfg.render = detail::parse_render(j.at("render"), cfg.render);
  if (j.contains("binarize")) cfg.binarizer = detail::parse_binarizer(j.at("binarize"));
  if (j.contains("refine")) {
    const auto& r = j.at("refine");
    detail::check_keys(r, "refine", {"enable_ad", "enable_ac", "coverage", "registration"});
    cfg.enable_ad = detail::get_or(r, "enable_ad", cfg.enable_ad);
    cfg.enable_ac = detail::get_or(r, "enable_ac", cfg.enable_ac);
    cfg.refine.coverage = detail::get_or(r, "coverage", cfg.refine.coverage);
    if (r.contains("registration"))
      cfg.refine.registration = detail::parse_registration(r.at("registration"), cfg.refine.registration);
    if (cfg.enable_ac && !cfg.enable_ad) throw ConfigError("enable_ac requires enable_ad");
  }
  if (j.contains("embed")) {
    const auto& e = j.at("embed");
    detail::check_keys(e, "embed", {"dim", "noise_sigma", "min_code_separation"});
    cfg.embed.dim = detail::get_or(e, "dim", cfg.embed.dim);
    cfg.embed.noise_sigma = detail::get_or(e, "noise_sigma", cfg.embed.noise_sigma);
    cfg.embed.min_code_separation = detail::get_or(e, "min_code_separation", cfg.embed.min_code_separation);
  }
  if (j.contains("cluster")) cfg.cluster = detail::parse_cluster(j.at("cluster"), cfg.cluster);
  if (j.contains("metrics")) cfg.weights = detail::parse_weights(j.at("metrics"), cfg.weights);
  if (j.contains("io")) {
    const auto& io = j.at("io");
    detail::check_keys(io, "io", {"intensity_bits", "intensity_pattern"});
    cfg.io.intensity_bits = detail::get_or(io, "intensity_bits", cfg.io.intensity_bits);
    cfg.io.intensity_pattern = detail::get_or(io, "intensity_pattern", cfg.io.intensity_pattern);
    if (cfg.io.intensity_bits != 8 && cfg.io.intensity_bits != 16)
      throw ConfigError("io.intensity_bits must be 8 or 16");
  }
  return cfg;
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
  return parse_pipeline_config(j);
}

/// The effective configuration with every default filled in; hashing this
/// makes the manifest hash independent of which keys the file spelled out.
inline nlohmann::json canonical_config(const PipelineConfig& cfg) {
  nlohmann::json j;
  j["scenario"] = cfg.scenario == Scenario::Microvilli ? "microvilli" : "hela";
  j["seed"] = cfg.seed;
  j["video_count"] = cfg.video_count;
  j["split_quadrants"] = cfg.split_quadrants;
  if (cfg.scenario == Scenario::Microvilli) {
    const MicrovilliConfig& m = cfg.microvilli;
    j["sim"] = {{"canvas_w", m.canvas_w},         {"canvas_h", m.canvas_h},
                {"target_w", m.target_w},         {"target_h", m.target_h},
                {"object_count", m.object_count}, {"frame_count", m.frame_count},
                {"p_translate", m.p_translate},   {"translate_step", m.translate_step},
                {"p_rotate", m.p_rotate},         {"rotate_step_deg", m.rotate_step_deg},
                {"p_length", m.p_length},         {"length_step", m.length_step},
                {"width_min", m.width_min},       {"width_max", m.width_max},
                {"length_min", m.length_min},     {"length_max", m.length_max},
                {"min_length", m.min_length}};
    if (m.count_range) j["sim"]["count_range"] = {m.count_range->first, m.count_range->second};
  } else {
    const HelaConfig& h = cfg.hela;
    j["sim"] = {{"canvas_w", h.canvas_w},
                {"canvas_h", h.canvas_h},
                {"target_w", h.target_w},
                {"target_h", h.target_h},
                {"object_count", h.object_count},
                {"frame_count", h.frame_count},
                {"radius_min", h.radius_min},
                {"radius_max", h.radius_max},
                {"max_translation", h.max_translation},
                {"p_radius", h.p_radius},
                {"overlap_factor", h.overlap_factor},
                {"n_appear", h.n_appear},
                {"n_disappear", h.n_disappear},
                {"n_mitosis", h.n_mitosis},
                {"daughter_shrink", h.daughter_shrink},
                {"daughter_distance", h.daughter_distance},
                {"growth_interval", h.growth_interval}};
  }
  j["render"] = {{"background_level", cfg.render.background_level},
                 {"foreground_level", cfg.render.foreground_level},
                 {"per_object_jitter", cfg.render.per_object_jitter},
                 {"psf_sigma", cfg.render.psf_sigma},
                 {"noise_sigma", cfg.render.noise_sigma}};
  j["binarize"] = {{"method", cfg.binarizer.kind == Binarizer::Kind::Otsu ? "otsu" : "fixed"},
                   {"threshold", cfg.binarizer.threshold}};
  j["refine"] = {{"enable_ad", cfg.enable_ad},
                 {"enable_ac", cfg.enable_ac},
                 {"coverage", cfg.refine.coverage},
                 {"registration",
                  {{"step", cfg.refine.registration.step},
                   {"fluid_sigma", cfg.refine.registration.fluid_sigma},
                   {"diffusion_sigma", cfg.refine.registration.diffusion_sigma},
                   {"levels", cfg.refine.registration.levels},
                   {"max_iters", cfg.refine.registration.max_iters},
                   {"stop_tol", cfg.refine.registration.stop_tol},
                   {"max_displacement", cfg.refine.registration.max_displacement}}}};
  j["embed"] = {{"dim", cfg.embed.dim},
                {"noise_sigma", cfg.embed.noise_sigma},
                {"min_code_separation", cfg.embed.min_code_separation}};
  j["cluster"] = {{"bandwidth", cfg.cluster.bandwidth},
                  {"seed_stride", cfg.cluster.seed_stride},
                  {"max_iters", cfg.cluster.max_iters},
                  {"shift_tol_factor", cfg.cluster.shift_tol_factor},
                  {"merge_radius_factor", cfg.cluster.merge_radius_factor},
                  {"chunk_len", cfg.cluster.chunk_len},
                  {"association_radius_factor", cfg.cluster.association_radius_factor}};
  j["metrics"] = {{"w_ns", cfg.weights.ns}, {"w_fn", cfg.weights.fn}, {"w_fp", cfg.weights.fp},
                  {"w_ed", cfg.weights.ed}, {"w_ea", cfg.weights.ea}, {"w_ec", cfg.weights.ec}};
  j["io"] = {{"intensity_bits", cfg.io.intensity_bits}, {"intensity_pattern", cfg.io.intensity_pattern}};
  return j;
}

inline std::string config_hash(const PipelineConfig& cfg) {
  const std::string dump = canonical_config(cfg).dump();
  std::uint64_t h = 0xCBF29CE484222325ull;  // FNV-1a
  for (unsigned char c : dump) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Splits a video into its four spatial quadrants (left/right × top/bottom).
/// Each quadrant keeps only the tracks visible inside it, with intervals
/// clipped to their visible range.
inline std::array<LabeledVideo, 4> split_quadrants(const LabeledVideo& video) {
  const int w = video.width(), h = video.height();
  const int w2 = w / 2, h2 = h / 2;
  if (w2 == 0 || h2 == 0) throw std::invalid_argument("split_quadrants: video too small to split");
  const std::array<std::array<int, 4>, 4> rects = {{
      {0, 0, w2, h2},
      {w2, 0, w - w2, h2},
      {0, h2, w2, h - h2},
      {w2, h2, w - w2, h - h2},
  }};
  std::array<LabeledVideo, 4> out;
  for (int q = 0; q < 4; ++q) {
    const auto [x0, y0, qw, qh] = std::tuple{rects[q][0], rects[q][1], rects[q][2], rects[q][3]};
    out[q].lineage = video.lineage;
    for (const LabelFrame& frame : video.frames) {
      LabelFrame sub(qw, qh, 0);
      for (int y = 0; y < qh; ++y)
        for (int x = 0; x < qw; ++x) sub.at(x, y) = frame.at(x0 + x, y0 + y);
      out[q].frames.push_back(std::move(sub));
    }
    prune_invisible_tracks(out[q]);
  }
  return out;
}

struct UnitScore {
  int video = 0;
  int quadrant = -1;  // -1 when the video was not split
  ScoreReport report;
};

struct PipelineReport {
  std::string scenario;
  std::string hash;
  std::uint64_t seed = 0;
  std::vector<UnitScore> units;
  double mean_det = 0.0;
  double mean_seg = 0.0;
  double mean_tra = 0.0;
};

namespace detail {

inline nlohmann::json report_to_json(const PipelineReport& r) {
  nlohmann::json units = nlohmann::json::array();
  for (const UnitScore& u : r.units) {
    nlohmann::json counts = {{"NS", u.report.counts.ns}, {"FN", u.report.counts.fn},
                             {"FP", u.report.counts.fp}, {"ED", u.report.counts.ed},
                             {"EA", u.report.counts.ea}, {"EC", u.report.counts.ec}};
    units.push_back({{"video", u.video},
                     {"quadrant", u.quadrant},
                     {"DET", u.report.det},
                     {"SEG", u.report.seg},
                     {"TRA", u.report.tra},
                     {"counts", counts},
                     {"AOGM", u.report.aogm_cost},
                     {"AOGM0", u.report.aogm0_cost}});
  }
  return {{"scenario", r.scenario},
          {"config_hash", r.hash},
          {"seed", r.seed},
          {"units", units},
          {"mean", {{"DET", r.mean_det}, {"SEG", r.mean_seg}, {"TRA", r.mean_tra}}}};
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << text;
  if (!os) throw IoError("write failed: " + path.string());
}

template <typename F>
auto run_stage(const std::string& name, F&& fn) {
  try {
    return fn();
  } catch (const IoError&) {
    throw;
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

/// Moves every existing entry of `dir` under dir/failed/ so an aborted run
/// leaves its partial artifacts inspectable but clearly marked.
inline void quarantine_outputs(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::exists(dir, ec)) return;
  const std::filesystem::path failed = dir / "failed";
  std::filesystem::create_directories(failed, ec);
  for (const auto& entry : std::filesystem::directory_iterator(dir, ec)) {
    if (entry.path().filename() == "failed") continue;
    std::filesystem::rename(entry.path(), failed / entry.path().filename(), ec);
  }
}

}  // namespace detail

/// Runs simulate -> render -> binarize -> (refine) -> oracle embed -> decode
/// -> evaluate for every video (and quadrant, when splitting), writing all
/// artifacts beneath out_dir. Decoded results are scored against the current
/// ground truth: the refined annotations when refinement is enabled,
/// otherwise the simulated ones. Rethrows stage failures after moving partial
/// outputs into out_dir/failed/.
inline PipelineReport run_pipeline(const PipelineConfig& cfg, const std::string& out_dir) {
  namespace fs = std::filesystem;
  try {
    PipelineReport report;
    report.scenario = cfg.scenario == Scenario::Microvilli ? "microvilli" : "hela";
    report.hash = config_hash(cfg);
    report.seed = cfg.seed;

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create directory: " + out_dir);

    Rng master(cfg.seed);
    for (int v = 0; v < cfg.video_count; ++v) {
      char video_name[16];
      std::snprintf(video_name, sizeof video_name, "video%03d", v);
      const fs::path video_dir = fs::path(out_dir) / video_name;

      LabeledVideo simulated = detail::run_stage("sim", [&] {
        const std::uint64_t sim_seed = master.split(0x51).split(v).next_u64();
        if (cfg.scenario == Scenario::Microvilli) {
          MicrovilliConfig mc = cfg.microvilli;
          mc.seed = sim_seed;
          return simulate_microvilli(mc);
        }
        HelaConfig hc = cfg.hela;
        hc.seed = sim_seed;
        return simulate_hela(hc);
      });
      prune_invisible_tracks(simulated);
      detail::run_stage("sim", [&] {
        save_labels(simulated, (video_dir / "gt").string());
        return 0;
      });

      std::vector<std::pair<int, LabeledVideo>> units;  // quadrant index (or -1)
      if (cfg.split_quadrants) {
        auto quads = detail::run_stage("split", [&] { return split_quadrants(simulated); });
        for (int q = 0; q < 4; ++q) units.emplace_back(q, std::move(quads[q]));
      } else {
        units.emplace_back(-1, std::move(simulated));
      }

      for (auto& [quadrant, gt] : units) {
        const fs::path unit_dir = quadrant < 0 ? video_dir : video_dir / ("quad" + std::to_string(quadrant));
        if (quadrant >= 0)
          detail::run_stage("split", [&] {
            save_labels(gt, (unit_dir / "gt").string());
            return 0;
          });

        RenderParams render_params = cfg.render;
        render_params.seed = master.split(0x52).split(v).split(quadrant + 1).next_u64();
        std::vector<IntensityFrame> intensities = detail::run_stage("render", [&] {
          auto frames = render_video(gt.frames, render_params);
          save_intensity(frames, (unit_dir / "frames").string(), cfg.io.intensity_bits,
                         cfg.io.intensity_pattern);
          return frames;
        });

        std::vector<BinaryMask> masks = detail::run_stage("binarize", [&] {
          std::vector<BinaryMask> out;
          out.reserve(intensities.size());
          for (const IntensityFrame& f : intensities) out.push_back(binarize(f, cfg.binarizer));
          std::vector<IntensityFrame> as_frames;
          for (const BinaryMask& m : out) {
            IntensityFrame f(m.width, m.height);
            for (std::size_t i = 0; i < m.data.size(); ++i) f.data[i] = m.data[i] ? 1.0f : 0.0f;
            as_frames.push_back(std::move(f));
          }
          save_intensity(as_frames, (unit_dir / "masks").string(), 8, cfg.io.intensity_pattern);
          return out;
        });

        LabeledVideo current_gt = std::move(gt);
        if (cfg.enable_ad) {
          RefineOptions opts = cfg.refine;
          opts.enable_clean = cfg.enable_ac;
          RefineResult refined = detail::run_stage("refine", [&] {
            return refine_video(current_gt, masks, intensities, opts);
          });
          detail::run_stage("refine", [&] {
            save_labels(refined.video, (unit_dir / "refined").string());
            if (cfg.enable_ac)
              save_intensity(refined.intensities, (unit_dir / "frames_clean").string(), cfg.io.intensity_bits,
                             cfg.io.intensity_pattern);
            return 0;
          });
          current_gt = std::move(refined.video);
        }

        EmbeddingField field = detail::run_stage("embed", [&] {
          Rng embed_rng(master.split(0x53).split(v).split(quadrant + 1).next_u64());
          auto f = oracle_embeddings(current_gt, cfg.embed.dim, cfg.embed.noise_sigma, embed_rng,
                                     cfg.embed.min_code_separation);
          save_embeddings(f, (unit_dir / "embeddings.emb1").string());
          return f;
        });

        LabeledVideo decoded = detail::run_stage("decode", [&] {
          ClusterParams params = cfg.cluster;
          params.seed = master.split(0x54).split(v).split(quadrant + 1).next_u64();
          auto result = decode(field, params);
          save_labels(result, (unit_dir / "result").string());
          return result;
        });

        const ScoreReport scores = detail::run_stage("eval", [&] { return evaluate(current_gt, decoded, cfg.weights); });
        detail::write_text_file(unit_dir / "scores.txt", score_report_text(scores));
        report.units.push_back({v, quadrant, scores});
      }
    }

    for (const UnitScore& u : report.units) {
      report.mean_det += u.report.det;
      report.mean_seg += u.report.seg;
      report.mean_tra += u.report.tra;
    }
    const double n = static_cast<double>(report.units.size());
    report.mean_det /= n;
    report.mean_seg /= n;
    report.mean_tra /= n;

    detail::write_text_file(fs::path(out_dir) / "report.json", detail::report_to_json(report).dump(2) + "\n");
    {
      std::ostringstream os;
      os << std::setprecision(10);
      os << "UNITS=" << report.units.size() << "\n";
      os << "DET=" << report.mean_det << "\n";
      os << "SEG=" << report.mean_seg << "\n";
      os << "TRA=" << report.mean_tra << "\n";
      detail::write_text_file(fs::path(out_dir) / "scores.txt", os.str());
    }
    {
      nlohmann::json manifest = {{"config_hash", report.hash},
                                 {"seed", cfg.seed},
                                 {"scenario", report.scenario},
                                 {"config", canonical_config(cfg)}};
      detail::write_text_file(fs::path(out_dir) / "manifest.json", manifest.dump(2) + "\n");
    }
    return report;
  } catch (...) {
    detail::quarantine_outputs(out_dir);
    throw;
  }
}

}  // namespace synthtrack
