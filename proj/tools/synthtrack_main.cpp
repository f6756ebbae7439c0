#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "synthtrack/pipeline.hpp"

namespace st = synthtrack;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitStage = 4;

const char* kFormatsText = R"(File formats
============

Label video directory
  mask%03d.png   16-bit grayscale PNG per frame, zero-based contiguous
                 indices; pixel value = instance id (0 = background).
  tracks.txt     One record per track, ascending id:
                     L B E P
                 L = id, B = birth frame, E = last frame, P = parent id
                 (0 = none). Example: "8 5 9 3" = track 8 lives frames
                 5..9 and was born from track 3.

Intensity frame directory
  t%03d.png      8- or 16-bit grayscale PNG per frame, zero-based
                 contiguous indices; values are intensities scaled by the
                 type maximum.

Embedding file (EMB1)
  bytes 0..3     magic "EMB1"
  5 x u32 LE     frames, height, width, dim, flags (bit0 = foreground
                 masks present)
  payload        per frame: height*width*dim little-endian f32, row-major
                 with the vector dimension fastest
  foreground     if flagged: per frame height*width bytes (0/1)
  Errors: "bad magic", "truncated ...", "dimension overflow".

Score outputs
  scores.txt     line-oriented key=value: DET, SEG, TRA, NS, FN, FP, ED,
                 EA, EC, AOGM, AOGM0, AOGM_DET, AOGM_DET0
  report.json    per-unit and mean DET/SEG/TRA plus operation counts
  manifest.json  config hash (FNV-1a over the canonical JSON), seed, and
                 the effective configuration

Exit codes
  0 success, 2 config error, 3 I/O error, 4 stage failure
)";

st::PipelineConfig load_config_or_default(const std::string& path) {
  if (path.empty()) return {};
  return st::load_pipeline_config(path);
}

int run(int argc, char** argv) {
  CLI::App app{"Synthetic microscopy video toolkit: simulate labeled videos, render intensity\n"
               "frames, refine annotations by registration, decode pixel embeddings into\n"
               "tracks, and score tracking results."};
  app.require_subcommand(0, 1);

  // sim
  std::string sim_scenario, sim_out, sim_config;
  std::uint64_t sim_seed = 0;
  int sim_frames = 0, sim_objects = 0, sim_width = 0, sim_height = 0;
  bool sim_override = false;
  auto* sim = app.add_subcommand("sim", "simulate a labeled video (masks + lineage)");
  sim->add_option("--scenario", sim_scenario, "microvilli or hela");
  sim->add_option("--out", sim_out, "output label directory")->required();
  sim->add_option("--config", sim_config, "pipeline config JSON");
  auto* sim_seed_opt = sim->add_option("--seed", sim_seed, "simulation seed");
  auto* sim_frames_opt = sim->add_option("--frames", sim_frames, "frame count");
  auto* sim_objects_opt = sim->add_option("--objects", sim_objects, "object count");
  auto* sim_width_opt = sim->add_option("--width", sim_width, "target width");
  auto* sim_height_opt = sim->add_option("--height", sim_height, "target height");
  sim->add_flag("--override", sim_override, "CLI flags override config file values");

  // render
  std::string render_labels, render_out, render_config;
  std::uint64_t render_seed = 0;
  auto* render = app.add_subcommand("render", "render intensity frames from labels");
  render->add_option("--labels", render_labels, "input label directory")->required();
  render->add_option("--out", render_out, "output frame directory")->required();
  render->add_option("--config", render_config, "pipeline config JSON");
  auto* render_seed_opt = render->add_option("--seed", render_seed, "render seed");

  // refine
  std::string refine_labels, refine_frames, refine_out, refine_config;
  double refine_coverage = 0.0;
  bool refine_no_clean = false;
  auto* refine = app.add_subcommand("refine", "register labels onto binarized frames and clean them");
  refine->add_option("--labels", refine_labels, "input label directory")->required();
  refine->add_option("--frames", refine_frames, "intensity frame directory")->required();
  refine->add_option("--out", refine_out, "output label directory")->required();
  refine->add_option("--config", refine_config, "pipeline config JSON");
  auto* refine_cov_opt = refine->add_option("--coverage", refine_coverage, "coverage threshold for cleaning");
  refine->add_flag("--no-clean", refine_no_clean, "registration only, skip the cleaning pass");

  // embed-oracle
  std::string embed_labels, embed_out, embed_config;
  int embed_dim = 0;
  double embed_noise = 0.0, embed_min_sep = 0.0;
  std::uint64_t embed_seed = 0;
  auto* embed = app.add_subcommand("embed-oracle", "generate oracle embeddings from labels");
  embed->add_option("--labels", embed_labels, "input label directory")->required();
  embed->add_option("--out", embed_out, "output EMB1 file")->required();
  embed->add_option("--config", embed_config, "pipeline config JSON");
  auto* embed_dim_opt = embed->add_option("--dim", embed_dim, "embedding dimension");
  auto* embed_noise_opt = embed->add_option("--noise-sigma", embed_noise, "embedding noise sigma");
  auto* embed_sep_opt = embed->add_option("--min-separation", embed_min_sep, "minimum pairwise code distance");
  auto* embed_seed_opt = embed->add_option("--seed", embed_seed, "embedding seed");

  // decode
  std::string decode_emb, decode_out, decode_config;
  double decode_bandwidth = 0.0;
  int decode_chunk = 0, decode_stride = 0;
  std::uint64_t decode_seed = 0;
  auto* decode = app.add_subcommand("decode", "cluster an embedding field into tracked labels");
  decode->add_option("--embeddings", decode_emb, "input EMB1 file")->required();
  decode->add_option("--out", decode_out, "output label directory")->required();
  decode->add_option("--config", decode_config, "pipeline config JSON");
  auto* decode_bw_opt = decode->add_option("--bandwidth", decode_bandwidth, "mean-shift bandwidth");
  auto* decode_chunk_opt =
      decode->add_option("--chunk-len", decode_chunk, "frames per clustering chunk (0 = whole video)");
  auto* decode_stride_opt = decode->add_option("--seed-stride", decode_stride, "seed subsampling stride");
  auto* decode_seed_opt = decode->add_option("--seed", decode_seed, "decode seed");

  // eval
  std::string eval_gt, eval_res, eval_out, eval_config;
  auto* eval_cmd = app.add_subcommand("eval", "score a result video against ground truth");
  eval_cmd->add_option("--gt", eval_gt, "ground-truth label directory")->required();
  eval_cmd->add_option("--res", eval_res, "result label directory")->required();
  eval_cmd->add_option("--out", eval_out, "optional output directory for scores.txt/report.json");
  eval_cmd->add_option("--config", eval_config, "pipeline config JSON (metric weights)");

  // pipeline
  std::string pipe_config, pipe_out;
  std::uint64_t pipe_seed = 0;
  bool pipe_override = false;
  auto* pipeline =
      app.add_subcommand("pipeline", "run the full simulate->render->refine->decode->eval pipeline");
  pipeline->add_option("--config", pipe_config, "pipeline config JSON")->required();
  pipeline->add_option("--out", pipe_out, "output run directory")->required();
  auto* pipe_seed_opt = pipeline->add_option("--seed", pipe_seed, "seed (with --override)");
  pipeline->add_flag("--override", pipe_override, "CLI flags override config file values");

  auto* formats = app.add_subcommand("formats", "print the on-disk format reference");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  if (sim->parsed()) {
    st::PipelineConfig cfg = load_config_or_default(sim_config);
    const bool config_given = !sim_config.empty();
    // CLI flags fill defaults; the config file wins conflicts unless --override.
    auto apply = [&](const CLI::Option* opt, auto& target, const auto& value) {
      if (opt->count() > 0 && (sim_override || !config_given)) target = value;
    };
    if (!sim_scenario.empty() && (sim_override || !config_given)) {
      if (sim_scenario == "microvilli")
        cfg.scenario = st::Scenario::Microvilli;
      else if (sim_scenario == "hela")
        cfg.scenario = st::Scenario::Hela;
      else
        throw st::ConfigError("scenario must be 'microvilli' or 'hela'");
    }
    apply(sim_seed_opt, cfg.seed, sim_seed);
    if (cfg.scenario == st::Scenario::Microvilli) {
      apply(sim_frames_opt, cfg.microvilli.frame_count, sim_frames);
      apply(sim_objects_opt, cfg.microvilli.object_count, sim_objects);
      apply(sim_width_opt, cfg.microvilli.target_w, sim_width);
      apply(sim_height_opt, cfg.microvilli.target_h, sim_height);
    } else {
      apply(sim_frames_opt, cfg.hela.frame_count, sim_frames);
      apply(sim_objects_opt, cfg.hela.object_count, sim_objects);
      apply(sim_width_opt, cfg.hela.target_w, sim_width);
      apply(sim_height_opt, cfg.hela.target_h, sim_height);
    }

    st::LabeledVideo video;
    if (cfg.scenario == st::Scenario::Microvilli) {
      st::MicrovilliConfig mc = cfg.microvilli;
      mc.seed = cfg.seed;
      video = st::simulate_microvilli(mc);
    } else {
      st::HelaConfig hc = cfg.hela;
      hc.seed = cfg.seed;
      video = st::simulate_hela(hc);
    }
    st::prune_invisible_tracks(video);
    st::save_labels(video, sim_out);
    std::cout << "wrote " << video.frame_count() << " frames, " << video.lineage.records.size()
              << " tracks to " << sim_out << "\n";
    return 0;
  }

  if (render->parsed()) {
    st::PipelineConfig cfg = load_config_or_default(render_config);
    if (render_seed_opt->count()) cfg.render.seed = render_seed;
    const st::LabeledVideo video = st::load_labels(render_labels);
    const auto frames = st::render_video(video.frames, cfg.render);
    st::save_intensity(frames, render_out, cfg.io.intensity_bits, cfg.io.intensity_pattern);
    std::cout << "rendered " << frames.size() << " frames to " << render_out << "\n";
    return 0;
  }

  if (refine->parsed()) {
    st::PipelineConfig cfg = load_config_or_default(refine_config);
    if (refine_cov_opt->count()) cfg.refine.coverage = refine_coverage;
    const st::LabeledVideo video = st::load_labels(refine_labels);
    const auto intensities = st::ingest_frames(refine_frames, cfg.io.intensity_pattern);
    std::vector<st::BinaryMask> masks;
    masks.reserve(intensities.size());
    for (const auto& f : intensities) masks.push_back(st::binarize(f, cfg.binarizer));
    st::RefineOptions opts = cfg.refine;
    opts.enable_clean = !refine_no_clean;
    const st::RefineResult result = st::refine_video(video, masks, intensities, opts);
    st::save_labels(result.video, refine_out);
    if (opts.enable_clean)
      st::save_intensity(result.intensities, refine_out + "/frames_clean", cfg.io.intensity_bits,
                         cfg.io.intensity_pattern);
    std::cout << "refined " << result.video.frame_count() << " frames to " << refine_out << "\n";
    return 0;
  }

  if (embed->parsed()) {
    st::PipelineConfig cfg = load_config_or_default(embed_config);
    if (embed_dim_opt->count()) cfg.embed.dim = embed_dim;
    if (embed_noise_opt->count()) cfg.embed.noise_sigma = embed_noise;
    if (embed_sep_opt->count()) cfg.embed.min_code_separation = embed_min_sep;
    std::uint64_t seed = cfg.seed;
    if (embed_seed_opt->count()) seed = embed_seed;
    const st::LabeledVideo video = st::load_labels(embed_labels);
    const st::EmbeddingField field = st::oracle_embeddings(video, cfg.embed.dim, cfg.embed.noise_sigma,
                                                           st::Rng(seed), cfg.embed.min_code_separation);
    st::save_embeddings(field, embed_out);
    std::cout << "wrote " << field.frames << "x" << field.height << "x" << field.width << "x" << field.dim
              << " embedding field to " << embed_out << "\n";
    return 0;
  }

  if (decode->parsed()) {
    st::PipelineConfig cfg = load_config_or_default(decode_config);
    if (decode_bw_opt->count()) cfg.cluster.bandwidth = decode_bandwidth;
    if (decode_chunk_opt->count()) cfg.cluster.chunk_len = decode_chunk;
    if (decode_stride_opt->count()) cfg.cluster.seed_stride = decode_stride;
    if (decode_seed_opt->count()) cfg.cluster.seed = decode_seed;
    const st::EmbeddingField field = st::load_embeddings(decode_emb);
    const st::LabeledVideo video = st::decode(field, cfg.cluster);
    st::save_labels(video, decode_out);
    std::cout << "decoded " << video.lineage.records.size() << " tracks to " << decode_out << "\n";
    return 0;
  }

  if (eval_cmd->parsed()) {
    st::PipelineConfig cfg = load_config_or_default(eval_config);
    const st::LabeledVideo gt = st::load_labels(eval_gt);
    const st::LabeledVideo res = st::load_labels(eval_res);
    const st::ScoreReport report = st::evaluate(gt, res, cfg.weights);
    std::cout << st::score_report_text(report);
    if (!eval_out.empty()) {
      std::error_code ec;
      std::filesystem::create_directories(eval_out, ec);
      if (ec) throw st::IoError("cannot create directory: " + eval_out);
      st::detail::write_text_file(std::filesystem::path(eval_out) / "scores.txt",
                                  st::score_report_text(report));
      nlohmann::json j = {{"DET", report.det},
                          {"SEG", report.seg},
                          {"TRA", report.tra},
                          {"AOGM", report.aogm_cost},
                          {"AOGM0", report.aogm0_cost},
                          {"counts",
                           {{"NS", report.counts.ns},
                            {"FN", report.counts.fn},
                            {"FP", report.counts.fp},
                            {"ED", report.counts.ed},
                            {"EA", report.counts.ea},
                            {"EC", report.counts.ec}}}};
      nlohmann::json per_frame = nlohmann::json::array();
      for (double v : report.seg_per_frame) {
        if (std::isnan(v))
          per_frame.push_back(nullptr);
        else
          per_frame.push_back(v);
      }
      j["SEG_per_frame"] = per_frame;
      st::detail::write_text_file(std::filesystem::path(eval_out) / "report.json", j.dump(2) + "\n");
    }
    return 0;
  }

  if (pipeline->parsed()) {
    st::PipelineConfig cfg = st::load_pipeline_config(pipe_config);
    if (pipe_seed_opt->count() && pipe_override) cfg.seed = pipe_seed;
    const st::PipelineReport report = st::run_pipeline(cfg, pipe_out);
    std::printf("units=%zu mean DET=%.6f SEG=%.6f TRA=%.6f\n", report.units.size(), report.mean_det,
                report.mean_seg, report.mean_tra);
    std::cout << "report: " << pipe_out << "/report.json\n";
    return 0;
  }

  if (formats->parsed()) {
    std::cout << kFormatsText;
    return 0;
  }

  std::cerr << app.help();
  return kExitConfig;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const st::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const st::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const st::StageError& e) {
    std::cerr << e.what() << "\n";
    return kExitStage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStage;
  }
}
