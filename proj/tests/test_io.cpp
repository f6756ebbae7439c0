#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "support/oracles.hpp"
#include "synthtrack/embed.hpp"
#include "synthtrack/pipeline.hpp"
#include "synthtrack/png_io.hpp"
#include "synthtrack/video_io.hpp"

using namespace synthtrack;

namespace {

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("synthtrack_test_" + tag + "_" + std::to_string(++counter));
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

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

LabeledVideo division_video() {
  std::vector<LabelFrame> frames(2, LabelFrame(8, 8, 0));
  oracles::paint_block(frames[0], 1, 3, 3);
  oracles::paint_block(frames[1], 2, 1, 1);
  oracles::paint_block(frames[1], 3, 5, 5);
  return oracles::finalize_video(std::move(frames), {{2, 1}, {3, 1}});
}

}  // namespace

TEST_CASE("gray png roundtrips at both depths") {
  TempDir dir("png");
  Rng rng(6);
  for (const int depth : {8, 16}) {
    GrayImage img;
    img.width = 13;
    img.height = 7;
    img.bit_depth = depth;
    for (int i = 0; i < 13 * 7; ++i)
      img.pixels.push_back(static_cast<std::uint16_t>(rng.uniform_int(0, img.max_value())));

    const auto path = dir.path / ("img" + std::to_string(depth) + ".png");
    write_gray_png(path.string(), img);
    const GrayImage back = read_gray_png(path.string());
    REQUIRE(back.width == img.width);
    REQUIRE(back.height == img.height);
    REQUIRE(back.bit_depth == img.bit_depth);
    REQUIRE(back.pixels == img.pixels);

    const auto again = dir.path / "again.png";
    write_gray_png(again.string(), back);
    REQUIRE(file_bytes(again) == file_bytes(path));
  }
  REQUIRE_THROWS_WITH(read_gray_png((dir.path / "absent.png").string()),
                      Catch::Matchers::ContainsSubstring("cannot open"));
}

TEST_CASE("label videos roundtrip byte-exactly") {
  const LabeledVideo v = division_video();
  TempDir a("labels_a"), b("labels_b");
  save_labels(v, a.str());
  const LabeledVideo back = load_labels(a.str());
  REQUIRE(back.frames == v.frames);
  REQUIRE(back.lineage.records.size() == v.lineage.records.size());
  for (std::size_t i = 0; i < v.lineage.records.size(); ++i) {
    REQUIRE(back.lineage.records[i].id == v.lineage.records[i].id);
    REQUIRE(back.lineage.records[i].birth == v.lineage.records[i].birth);
    REQUIRE(back.lineage.records[i].end == v.lineage.records[i].end);
    REQUIRE(back.lineage.records[i].parent == v.lineage.records[i].parent);
  }

  save_labels(back, b.str());
  for (const char* name : {"mask000.png", "mask001.png", "tracks.txt"})
    REQUIRE(file_bytes(a.path / name) == file_bytes(b.path / name));
}

TEST_CASE("label loading reports each inconsistency class") {
  const LabeledVideo v = division_video();

  SECTION("missing frame in the middle") {
    TempDir dir("labels_gap");
    LabeledVideo three = v;
    three.frames.push_back(three.frames[1]);
    for (auto& rec : three.lineage.records)
      if (rec.end == 1) rec.end = 2;
    save_labels(three, dir.str());
    std::filesystem::remove(dir.path / "mask001.png");
    REQUIRE_THROWS_WITH(load_labels(dir.str()),
                        Catch::Matchers::ContainsSubstring("missing frame index 1"));
  }
  SECTION("malformed lineage lines") {
    TempDir dir("labels_bad");
    save_labels(v, dir.str());
    write_bytes(dir.path / "tracks.txt", "1 0 0\n");
    REQUIRE_THROWS_WITH(load_labels(dir.str()),
                        Catch::Matchers::ContainsSubstring("malformed lineage line 1"));
    write_bytes(dir.path / "tracks.txt", "1 0 0 0 junk\n");
    REQUIRE_THROWS_WITH(load_labels(dir.str()),
                        Catch::Matchers::ContainsSubstring("malformed lineage line 1"));
    write_bytes(dir.path / "tracks.txt", "0 0 0 0\n");
    REQUIRE_THROWS_WITH(load_labels(dir.str()), Catch::Matchers::ContainsSubstring("id out of range"));
    write_bytes(dir.path / "tracks.txt", "1 0 1 0\n1 0 1 0\n");
    REQUIRE_THROWS_WITH(load_labels(dir.str()),
                        Catch::Matchers::ContainsSubstring("malformed lineage line 2"));
  }
  SECTION("lineage breaking the track-graph contract") {
    TempDir dir("labels_tree");
    save_labels(v, dir.str());
    // child born while the parent is still alive
    write_bytes(dir.path / "tracks.txt", "1 0 1 0\n2 1 1 1\n3 1 1 1\n");
    REQUIRE_THROWS_WITH(load_labels(dir.str()), Catch::Matchers::ContainsSubstring("invalid tracks.txt"));
  }
  SECTION("masks and lineage disagree") {
    TempDir dir("labels_vis");
    save_labels(v, dir.str());
    write_bytes(dir.path / "tracks.txt", "1 0 0 0\n2 1 1 1\n");  // id 3 painted but unlisted
    REQUIRE_THROWS_WITH(load_labels(dir.str()),
                        Catch::Matchers::ContainsSubstring("id 3 not in tracks.txt"));

    write_bytes(dir.path / "tracks.txt", "1 0 0 0\n2 1 1 1\n3 1 1 1\n9 1 1 0\n");
    REQUIRE_THROWS_WITH(load_labels(dir.str()),
                        Catch::Matchers::ContainsSubstring("absent from all masks"));

    write_bytes(dir.path / "tracks.txt", "1 0 0 0\n2 1 1 1\n3 0 0 0\n");  // 3 visible outside [0,0]
    REQUIRE_THROWS_WITH(load_labels(dir.str()),
                        Catch::Matchers::ContainsSubstring("visible outside [0,0]"));
  }
}

TEST_CASE("intensity videos normalize by bit depth") {
  TempDir dir("intensity");
  IntensityFrame f(4, 2);
  f.data = {0.0f, 0.25f, 0.5f, 0.75f, 1.0f, 1.0f, 0.1f, 0.9f};
  save_intensity({f}, dir.str(), 16);
  const auto frames = ingest_frames(dir.str());
  REQUIRE(frames.size() == 1);
  REQUIRE(frames[0].data[0] == 0.0f);
  REQUIRE(frames[0].data[4] == 1.0f);  // 65535 reads back as exactly one
  for (std::size_t i = 0; i < f.data.size(); ++i)
    REQUIRE(frames[0].data[i] == Catch::Approx(f.data[i]).margin(1.0 / 65535.0));

  TempDir dir8("intensity8");
  save_intensity({f}, dir8.str(), 8);
  const auto frames8 = ingest_frames(dir8.str());
  for (std::size_t i = 0; i < f.data.size(); ++i)
    REQUIRE(frames8[0].data[i] == Catch::Approx(f.data[i]).margin(1.0 / 255.0));

  REQUIRE_THROWS_AS(save_intensity({f}, dir.str(), 12), ConfigError);
}

TEST_CASE("frame ingestion validates the directory contents") {
  IntensityFrame f(4, 2);
  for (float& v : f.data) v = 0.5f;

  SECTION("gaps are named") {
    TempDir dir("ingest_gap");
    save_intensity({f, f, f, f, f}, dir.str());
    std::filesystem::remove(dir.path / "t003.png");
    REQUIRE_THROWS_WITH(ingest_frames(dir.str()),
                        Catch::Matchers::ContainsSubstring("missing frame index 3"));
  }
  SECTION("empty directories are named") {
    TempDir dir("ingest_empty");
    REQUIRE_THROWS_WITH(ingest_frames(dir.str()),
                        Catch::Matchers::ContainsSubstring("no frames matching pattern"));
  }
  SECTION("dimension drift is rejected") {
    TempDir dir("ingest_dim");
    save_intensity({f}, dir.str());
    IntensityFrame g(3, 3);
    for (float& v : g.data) v = 0.5f;
    save_intensity({g}, dir.str(), 16, "u%03d.png");
    std::filesystem::rename(dir.path / "u000.png", dir.path / "t001.png");
    REQUIRE_THROWS_WITH(ingest_frames(dir.str()),
                        Catch::Matchers::ContainsSubstring("dimension mismatch at frame index 1"));
  }
  SECTION("alternate patterns work") {
    TempDir dir("ingest_pat");
    save_intensity({f, f}, dir.str(), 8, "frame_%05d.png");
    REQUIRE(ingest_frames(dir.str(), "frame_%05d.png").size() == 2);
  }
}

TEST_CASE("frame patterns parse and print consistently") {
  const auto p = detail::parse_frame_pattern("t%03d.png");
  REQUIRE(p.name(7) == "t007.png");
  REQUIRE(p.name(1234) == "t1234.png");
  REQUIRE(p.parse("t007.png") == 7);
  REQUIRE(p.parse("t7.png") == 7);
  REQUIRE(p.parse("x007.png") == -1);
  REQUIRE(p.parse("t00a.png") == -1);

  const auto plain = detail::parse_frame_pattern("m%d.png");
  REQUIRE(plain.name(3) == "m3.png");
  REQUIRE(plain.parse("m3.png") == 3);

  REQUIRE_THROWS_AS(detail::parse_frame_pattern("frames.png"), ConfigError);
  REQUIRE_THROWS_AS(detail::parse_frame_pattern("a%03d_b%d.png"), ConfigError);
  REQUIRE_THROWS_AS(detail::parse_frame_pattern("t%03x.png"), ConfigError);
  REQUIRE_THROWS_AS(detail::parse_frame_pattern("t%0d.png"), ConfigError);
}

TEST_CASE("embedding fields roundtrip byte-exactly") {
  const LabeledVideo v = division_video();
  const EmbeddingField field = oracle_embeddings(v, 4, 0.05, Rng(13));
  TempDir dir("emb");
  const auto path = dir.path / "field.emb1";
  save_embeddings(field, path.string());

  const EmbeddingField back = load_embeddings(path.string());
  REQUIRE(back.frames == field.frames);
  REQUIRE(back.height == field.height);
  REQUIRE(back.width == field.width);
  REQUIRE(back.dim == field.dim);
  REQUIRE(back.values == field.values);
  REQUIRE(back.foreground.size() == field.foreground.size());
  for (std::size_t t = 0; t < field.foreground.size(); ++t)
    REQUIRE(back.foreground[t] == field.foreground[t]);

  const auto again = dir.path / "again.emb1";
  save_embeddings(back, again.string());
  REQUIRE(file_bytes(again) == file_bytes(path));

  EmbeddingField bare = field;
  bare.foreground.clear();
  const auto no_fg = dir.path / "bare.emb1";
  save_embeddings(bare, no_fg.string());
  const EmbeddingField bare_back = load_embeddings(no_fg.string());
  REQUIRE_FALSE(bare_back.has_foreground());
  REQUIRE(bare_back.values == field.values);
}

TEST_CASE("embedding files reject corruption with specific errors") {
  const LabeledVideo v = division_video();
  const EmbeddingField field = oracle_embeddings(v, 3, 0.0, Rng(2));
  TempDir dir("emb_bad");
  const auto good = dir.path / "good.emb1";
  save_embeddings(field, good.string());
  const std::string bytes = file_bytes(good);

  SECTION("wrong magic") {
    std::string bad = bytes;
    bad[3] = '0';
    write_bytes(dir.path / "bad.emb1", bad);
    REQUIRE_THROWS_WITH(load_embeddings((dir.path / "bad.emb1").string()),
                        Catch::Matchers::ContainsSubstring("bad magic"));
  }
  SECTION("short header") {
    write_bytes(dir.path / "bad.emb1", bytes.substr(0, 16));
    REQUIRE_THROWS_WITH(load_embeddings((dir.path / "bad.emb1").string()),
                        Catch::Matchers::ContainsSubstring("truncated header"));
  }
  SECTION("payload shorter than declared") {
    write_bytes(dir.path / "bad.emb1", bytes.substr(0, bytes.size() / 2));
    REQUIRE_THROWS_WITH(load_embeddings((dir.path / "bad.emb1").string()),
                        Catch::Matchers::ContainsSubstring("truncated"));
  }
  SECTION("trailing bytes") {
    write_bytes(dir.path / "bad.emb1", bytes + '\0');
    REQUIRE_THROWS_WITH(load_embeddings((dir.path / "bad.emb1").string()),
                        Catch::Matchers::ContainsSubstring("trailing bytes"));
  }
  SECTION("unknown flags") {
    std::string bad = bytes;
    bad[20] = 2;
    write_bytes(dir.path / "bad.emb1", bad);
    REQUIRE_THROWS_WITH(load_embeddings((dir.path / "bad.emb1").string()),
                        Catch::Matchers::ContainsSubstring("unknown flags"));
  }
  SECTION("absurd dimensions") {
    std::string bad = bytes;
    bad[7] = 0x7F;  // frames high byte
    write_bytes(dir.path / "bad.emb1", bad);
    REQUIRE_THROWS_WITH(load_embeddings((dir.path / "bad.emb1").string()),
                        Catch::Matchers::ContainsSubstring("dimension overflow"));
  }
  SECTION("missing file") {
    REQUIRE_THROWS_WITH(load_embeddings((dir.path / "absent.emb1").string()),
                        Catch::Matchers::ContainsSubstring("cannot open"));
  }
}

TEST_CASE("pipeline configs parse, canonicalize, and hash stably") {
  const nlohmann::json sparse = {
      {"scenario", "hela"},
      {"seed", 7},
      {"sim", {{"object_count", 12}, {"frame_count", 10}}},
  };
  const PipelineConfig cfg = parse_pipeline_config(sparse);
  REQUIRE(cfg.scenario == Scenario::Hela);
  REQUIRE(cfg.hela.object_count == 12);
  REQUIRE(cfg.hela.frame_count == 10);
  REQUIRE(cfg.hela.radius_min == 8);  // untouched default

  // canonical form is a fixed point of parse -> canonicalize
  const nlohmann::json canon = canonical_config(cfg);
  const PipelineConfig cfg2 = parse_pipeline_config(canon);
  REQUIRE(canonical_config(cfg2).dump() == canon.dump());
  REQUIRE(config_hash(cfg) == config_hash(cfg2));

  // spelling defaults out loud changes nothing
  nlohmann::json verbose = sparse;
  verbose["video_count"] = 1;
  REQUIRE(config_hash(parse_pipeline_config(verbose)) == config_hash(cfg));

  nlohmann::json different = sparse;
  different["sim"]["object_count"] = 13;
  REQUIRE(config_hash(parse_pipeline_config(different)) != config_hash(cfg));
}

TEST_CASE("pipeline configs reject malformed input") {
  using nlohmann::json;
  REQUIRE_THROWS_AS(parse_pipeline_config(json{{"seed", 1}}), ConfigError);  // no scenario
  REQUIRE_THROWS_WITH(parse_pipeline_config(json{{"scenario", "yeast"}}),
                      Catch::Matchers::ContainsSubstring("scenario must be"));
  REQUIRE_THROWS_WITH(parse_pipeline_config(json{{"scenario", "hela"}, {"typo", 1}}),
                      Catch::Matchers::ContainsSubstring("unknown key 'typo'"));
  REQUIRE_THROWS_WITH(parse_pipeline_config(json{{"scenario", "hela"}, {"seed", "abc"}}),
                      Catch::Matchers::ContainsSubstring("wrong type"));
  REQUIRE_THROWS_WITH(
      parse_pipeline_config(json{{"scenario", "hela"}, {"refine", {{"enable_ac", true}}}}),
      Catch::Matchers::ContainsSubstring("enable_ac requires enable_ad"));
  REQUIRE_THROWS_WITH(
      parse_pipeline_config(json{{"scenario", "microvilli"}, {"sim", {{"count_range", {1, 2, 3}}}}}),
      Catch::Matchers::ContainsSubstring("count_range"));
  REQUIRE_THROWS_AS(
      parse_pipeline_config(json{{"scenario", "hela"}, {"io", {{"intensity_bits", 12}}}}),
      ConfigError);
  REQUIRE_THROWS_AS(
      parse_pipeline_config(json{{"scenario", "hela"}, {"binarize", {{"method", "magic"}}}}),
      ConfigError);

  TempDir dir("config");
  write_bytes(dir.path / "broken.json", "{ not json");
  REQUIRE_THROWS_AS(load_pipeline_config((dir.path / "broken.json").string()), ConfigError);
  REQUIRE_THROWS_AS(load_pipeline_config((dir.path / "absent.json").string()), IoError);
}
