// Simulates a small ball-shaped-cell video, renders intensity frames, and
// scores the ground truth against itself.

#include <iostream>
#include <string>

#include "synthtrack/pipeline.hpp"

using namespace synthtrack;

int main(int argc, char** argv) {
  const std::string out = argc > 1 ? argv[1] : "quickstart_out";

  HelaConfig cfg;
  cfg.canvas_w = cfg.canvas_h = 80;
  cfg.target_w = cfg.target_h = 64;
  cfg.object_count = 10;
  cfg.frame_count = 12;
  cfg.radius_min = 4;
  cfg.radius_max = 7;
  cfg.max_translation = 1;
  cfg.n_appear = 1;
  cfg.n_disappear = 1;
  cfg.n_mitosis = 1;
  cfg.seed = 7;

  LabeledVideo video = simulate_hela(cfg);
  prune_invisible_tracks(video);
  save_labels(video, out + "/gt");

  RenderParams render;
  render.seed = 11;
  save_intensity(render_video(video.frames, render), out + "/frames");

  std::cout << "wrote " << video.frame_count() << " frames and " << video.lineage.records.size()
            << " tracks under " << out << "/\n\n";
  std::cout << "ground truth scored against itself:\n" << score_report_text(evaluate(video, video));
  return 0;
}
