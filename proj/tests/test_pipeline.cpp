#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "support/oracles.hpp"
#include "synthtrack/pipeline.hpp"

using namespace synthtrack;

namespace {

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("synthtrack_pipe_" + tag + "_" + std::to_string(++counter));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string str() const { return path.string(); }
};

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is.good());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

nlohmann::json read_json(const std::filesystem::path& p) {
  return nlohmann::json::parse(file_bytes(p));
}

PipelineConfig tiny_hela_config() {
  return parse_pipeline_config(nlohmann::json{
      {"scenario", "hela"},
      {"seed", 9},
      {"sim",
       {{"canvas_w", 64},
        {"canvas_h", 64},
        {"target_w", 48},
        {"target_h", 48},
        {"object_count", 6},
        {"frame_count", 6},
        {"radius_min", 4},
        {"radius_max", 6},
        {"max_translation", 1},
        {"n_appear", 1},
        {"n_disappear", 1},
        {"n_mitosis", 1}}},
      {"embed", {{"dim", 8}, {"min_code_separation", 1.2}}},
      {"cluster", {{"bandwidth", 0.5}, {"seed_stride", 4}}},
  });
}

int run_cli(const std::string& args) {
  const char* cli = std::getenv("SYNTHTRACK_CLI");
  REQUIRE(cli != nullptr);
  const int status = std::system((std::string(cli) + " " + args).c_str());
  REQUIRE(status != -1);
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("quadrant splitting keeps per-quadrant tracks with clipped spans") {
  std::vector<LabelFrame> frames(2, LabelFrame(8, 8, 0));
  oracles::paint_block(frames[0], 1, 1, 1);  // top-left, frame 0 only
  oracles::paint_block(frames[1], 2, 5, 1);  // top-right, frame 1, child of 1
  oracles::paint_block(frames[0], 3, 3, 3);  // straddles the centre, both frames
  oracles::paint_block(frames[1], 3, 3, 3);
  oracles::paint_block(frames[0], 4, 1, 5);  // bottom-left, frame 0 only
  const LabeledVideo v = oracles::finalize_video(std::move(frames), {{2, 1}});

  const auto quads = split_quadrants(v);
  for (const auto& q : quads) {
    REQUIRE(q.frames.size() == 2);
    REQUIRE(q.width() == 4);
    REQUIRE(q.height() == 4);
    q.lineage.validate();
  }

  auto ids = [](const LabeledVideo& q) {
    std::vector<Label> out;
    for (const auto& rec : q.lineage.records) out.push_back(rec.id);
    return out;
  };
  REQUIRE(ids(quads[0]) == std::vector<Label>{1, 3});
  REQUIRE(ids(quads[1]) == std::vector<Label>{2, 3});
  REQUIRE(ids(quads[2]) == std::vector<Label>{3, 4});
  REQUIRE(ids(quads[3]) == std::vector<Label>{3});

  // id 2's parent is invisible in its quadrant, so it is orphaned there
  REQUIRE(quads[1].lineage.find(2)->parent == 0);
  REQUIRE(quads[1].lineage.find(2)->birth == 1);
  REQUIRE(quads[1].lineage.find(2)->end == 1);
  REQUIRE(quads[2].lineage.find(4)->end == 0);

  const LabeledVideo dot{{LabelFrame(1, 1, 0)}, {}};
  REQUIRE_THROWS_AS(split_quadrants(dot), std::invalid_argument);
}

TEST_CASE("pipeline runs end to end and writes every artifact") {
  const PipelineConfig cfg = tiny_hela_config();
  TempDir out("run");
  const PipelineReport report = run_pipeline(cfg, out.str());

  REQUIRE(report.scenario == "hela");
  REQUIRE(report.units.size() == 1);
  REQUIRE(report.units[0].video == 0);
  REQUIRE(report.units[0].quadrant == -1);
  for (const double s : {report.mean_det, report.mean_seg, report.mean_tra}) {
    REQUIRE(s >= 0.0);
    REQUIRE(s <= 1.0);
  }

  const auto video = out.path / "video000";
  for (const char* p : {"gt/tracks.txt", "gt/mask000.png", "frames/t000.png", "masks/t000.png",
                        "embeddings.emb1", "result/tracks.txt", "scores.txt"})
    REQUIRE(std::filesystem::exists(video / p));

  const nlohmann::json rj = read_json(out.path / "report.json");
  REQUIRE(rj["scenario"] == "hela");
  REQUIRE(rj["config_hash"] == config_hash(cfg));
  REQUIRE(rj["units"].size() == 1);
  REQUIRE(rj["units"][0]["counts"].contains("NS"));
  REQUIRE(rj["units"][0]["DET"].get<double>() >= 0.0);
  REQUIRE(rj["mean"].contains("TRA"));

  const nlohmann::json mj = read_json(out.path / "manifest.json");
  REQUIRE(mj["config_hash"] == config_hash(cfg));
  REQUIRE(config_hash(parse_pipeline_config(mj["config"])) == config_hash(cfg));

  const std::string scores = file_bytes(out.path / "scores.txt");
  REQUIRE(scores.find("UNITS=1\n") != std::string::npos);
  REQUIRE(scores.find("DET=") != std::string::npos);
  REQUIRE(scores.find("TRA=") != std::string::npos);

  // same config, fresh directory: byte-identical summary artifacts
  TempDir rerun("rerun");
  run_pipeline(cfg, rerun.str());
  REQUIRE(file_bytes(rerun.path / "report.json") == file_bytes(out.path / "report.json"));
  REQUIRE(file_bytes(rerun.path / "video000" / "result" / "tracks.txt") ==
          file_bytes(video / "result" / "tracks.txt"));
  REQUIRE(file_bytes(rerun.path / "video000" / "gt" / "mask000.png") ==
          file_bytes(video / "gt" / "mask000.png"));
}

TEST_CASE("pipeline refinement stages write their own artifacts") {
  PipelineConfig cfg = tiny_hela_config();
  cfg.enable_ad = true;
  cfg.enable_ac = true;
  TempDir out("refine");
  const PipelineReport report = run_pipeline(cfg, out.str());
  REQUIRE(report.units.size() == 1);

  const auto video = out.path / "video000";
  REQUIRE(std::filesystem::exists(video / "refined" / "tracks.txt"));
  REQUIRE(std::filesystem::exists(video / "frames_clean" / "t000.png"));
  REQUIRE(config_hash(cfg) != config_hash(tiny_hela_config()));  // hash sees the toggle
}

TEST_CASE("pipeline quarantines partial outputs when a stage fails") {
  PipelineConfig cfg;
  cfg.scenario = Scenario::Microvilli;
  cfg.microvilli.canvas_w = cfg.microvilli.canvas_h = 16;
  cfg.microvilli.target_w = cfg.microvilli.target_h = 16;
  cfg.microvilli.object_count = 100;  // cannot fit: the sim stage throws
  TempDir out("fail");

  try {
    run_pipeline(cfg, out.str());
    FAIL("expected a stage failure");
  } catch (const StageError& e) {
    REQUIRE(e.stage == "sim");
    REQUIRE_THAT(e.what(), Catch::Matchers::ContainsSubstring("scene overfull"));
  }
  REQUIRE(std::filesystem::exists(out.path / "failed"));
  REQUIRE_FALSE(std::filesystem::exists(out.path / "report.json"));
}

TEST_CASE("command line stages chain into a scored run") {
  TempDir dir("cli");
  const auto cfg_path = dir.path / "cfg.json";
  {
    std::ofstream os(cfg_path);
    os << canonical_config(tiny_hela_config()).dump(2) << "\n";
  }
  const std::string q = " > /dev/null 2>&1";
  const std::string gt = (dir.path / "gt").string();
  const std::string frames = (dir.path / "frames").string();
  const std::string emb = (dir.path / "field.emb1").string();
  const std::string res = (dir.path / "res").string();
  const std::string scored = (dir.path / "scored").string();

  REQUIRE(run_cli("sim --config " + cfg_path.string() + " --out " + gt + q) == 0);
  REQUIRE(std::filesystem::exists(dir.path / "gt" / "tracks.txt"));
  REQUIRE(std::filesystem::exists(dir.path / "gt" / "mask000.png"));

  REQUIRE(run_cli("render --labels " + gt + " --out " + frames + " --seed 4" + q) == 0);
  REQUIRE(std::filesystem::exists(dir.path / "frames" / "t000.png"));

  REQUIRE(run_cli("embed-oracle --labels " + gt + " --out " + emb +
                  " --dim 8 --min-separation 1.2 --seed 3" + q) == 0);
  REQUIRE(run_cli("decode --embeddings " + emb + " --out " + res + " --bandwidth 0.5 --seed 1" + q) == 0);
  REQUIRE(std::filesystem::exists(dir.path / "res" / "tracks.txt"));

  REQUIRE(run_cli("eval --gt " + gt + " --res " + res + " --out " + scored + q) == 0);
  REQUIRE(std::filesystem::exists(dir.path / "scored" / "scores.txt"));
  REQUIRE(std::filesystem::exists(dir.path / "scored" / "report.json"));

  // a decoded result scored against itself is a perfect run
  const auto self = (dir.path / "self").string();
  REQUIRE(run_cli("eval --gt " + res + " --res " + res + " --out " + self + q) == 0);
  const std::string scores = file_bytes(dir.path / "self" / "scores.txt");
  REQUIRE(scores.find("DET=1\n") != std::string::npos);
  REQUIRE(scores.find("SEG=1\n") != std::string::npos);
  REQUIRE(scores.find("TRA=1\n") != std::string::npos);
}

TEST_CASE("command line reports documented exit codes") {
  TempDir dir("cli_codes");
  const std::string q = " > /dev/null 2>&1";

  const auto bad_cfg = dir.path / "bad.json";
  {
    std::ofstream os(bad_cfg);
    os << "{\"scenario\": \"yeast\"}\n";
  }
  REQUIRE(run_cli("pipeline --config " + bad_cfg.string() + " --out " + (dir.path / "x").string() + q) == 2);

  REQUIRE(run_cli("render --labels " + (dir.path / "absent").string() + " --out " +
                  (dir.path / "f").string() + q) == 3);

  // an embedding field without a foreground mask cannot be decoded
  LabeledVideo v;
  v.frames.assign(2, LabelFrame(8, 8, 0));
  oracles::paint_block(v.frames[0], 1, 2, 2);
  oracles::paint_block(v.frames[1], 1, 2, 2);
  v = oracles::finalize_video(std::move(v.frames));
  EmbeddingField field = oracle_embeddings(v, 4, 0.0, Rng(1));
  field.foreground.clear();
  const auto bare = dir.path / "bare.emb1";
  save_embeddings(field, bare.string());
  REQUIRE(run_cli("decode --embeddings " + bare.string() + " --out " + (dir.path / "r").string() + q) == 4);

  REQUIRE(run_cli("formats > " + (dir.path / "formats.txt").string() + " 2>&1") == 0);
  const std::string ref = file_bytes(dir.path / "formats.txt");
  REQUIRE(ref.find("EMB1") != std::string::npos);
  REQUIRE(ref.find("tracks.txt") != std::string::npos);
}

TEST_CASE("pipeline runs with quadrant splitting score each quadrant") {
  PipelineConfig cfg = tiny_hela_config();
  cfg.split_quadrants = true;
  cfg.hela.object_count = 14;  // dense enough that no quadrant is empty
  cfg.hela.target_w = cfg.hela.target_h = 56;
  cfg.hela.canvas_w = cfg.hela.canvas_h = 64;
  cfg.seed = 3;
  TempDir out("quads");
  const PipelineReport report = run_pipeline(cfg, out.str());
  REQUIRE(report.units.size() == 4);
  for (int q = 0; q < 4; ++q) {
    REQUIRE(report.units[q].quadrant == q);
    REQUIRE(std::filesystem::exists(out.path / "video000" / ("quad" + std::to_string(q)) / "scores.txt"));
  }
}
