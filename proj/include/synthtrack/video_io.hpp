#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "synthtrack/core.hpp"
#include "synthtrack/png_io.hpp"

namespace synthtrack {

namespace detail {

/// Splits a printf-like pattern with exactly one integer field ("mask%03d.png",
/// "t%d.png") into prefix, zero-pad width, and suffix.
struct FramePattern {
  std::string prefix;
  std::string suffix;
  int pad = 0;

  std::string name(int index) const {
    std::string digits = std::to_string(index);
    if (static_cast<int>(digits.size()) < pad) digits.insert(0, pad - digits.size(), '0');
    return prefix + digits + suffix;
  }

  /// Extracts the frame index, or -1 when the name does not match.
  int parse(const std::string& name) const {
    if (name.size() < prefix.size() + suffix.size() + 1) return -1;
    if (name.compare(0, prefix.size(), prefix) != 0) return -1;
    if (name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) return -1;
    const std::string digits = name.substr(prefix.size(), name.size() - prefix.size() - suffix.size());
    if (digits.empty()) return -1;
    for (char c : digits)
      if (c < '0' || c > '9') return -1;
    if (digits.size() > 9) return -1;
    return std::stoi(digits);
  }
};

inline FramePattern parse_frame_pattern(const std::string& pattern) {
  const std::size_t pct = pattern.find('%');
  if (pct == std::string::npos || pattern.find('%', pct + 1) != std::string::npos)
    throw ConfigError("frame pattern needs exactly one % field: " + pattern);
  FramePattern p;
  p.prefix = pattern.substr(0, pct);
  std::size_t i = pct + 1;
  if (i < pattern.size() && pattern[i] == '0') {
    ++i;
    std::string width;
    while (i < pattern.size() && pattern[i] >= '0' && pattern[i] <= '9') width.push_back(pattern[i++]);
    if (width.empty()) throw ConfigError("frame pattern has malformed field width: " + pattern);
    p.pad = std::stoi(width);
  }
  if (i >= pattern.size() || pattern[i] != 'd')
    throw ConfigError("frame pattern field must be %d or %0Nd: " + pattern);
  p.suffix = pattern.substr(i + 1);
  return p;
}

/// Indices present in `dir` for the pattern, which must be contiguous from 0.
inline int count_contiguous_frames(const std::filesystem::path& dir, const FramePattern& pattern) {
  std::error_code ec;
  std::vector<int> indices;
  for (const auto& entry : std::filesystem::directory_iterator(dir, ec)) {
    const int idx = pattern.parse(entry.path().filename().string());
    if (idx >= 0) indices.push_back(idx);
  }
  if (ec) throw IoError("cannot list directory: " + dir.string());
  if (indices.empty()) throw IoError("no frames matching pattern in " + dir.string());
  std::sort(indices.begin(), indices.end());
  for (std::size_t i = 0; i < indices.size(); ++i)
    if (indices[i] != static_cast<int>(i))
      throw IoError("missing frame index " + std::to_string(i) + " in " + dir.string());
  return static_cast<int>(indices.size());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Label videos: mask%03d.png (16-bit grayscale, pixel value = instance id)
// plus tracks.txt ("id birth end parent" per line, ascending id).
// ---------------------------------------------------------------------------

inline void save_labels(const LabeledVideo& video, const std::string& dir) {
  video.lineage.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory: " + dir);

  const detail::FramePattern pattern{"mask", ".png", 3};
  for (int t = 0; t < video.frame_count(); ++t) {
    const LabelFrame& frame = video.frames[t];
    GrayImage img;
    img.width = frame.width;
    img.height = frame.height;
    img.bit_depth = 16;
    img.pixels.assign(frame.data.begin(), frame.data.end());
    write_gray_png((std::filesystem::path(dir) / pattern.name(t)).string(), img);
  }

  std::ofstream os(std::filesystem::path(dir) / "tracks.txt", std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + dir + "/tracks.txt");
  for (const TrackRecord& rec : video.lineage.records)
    os << rec.id << " " << rec.birth << " " << rec.end << " " << rec.parent << "\n";
  if (!os) throw IoError("write failed: " + dir + "/tracks.txt");
}

inline LabeledVideo load_labels(const std::string& dir) {
  const std::filesystem::path base(dir);
  std::ifstream is(base / "tracks.txt");
  if (!is) throw IoError("cannot open: " + dir + "/tracks.txt");

  LabeledVideo video;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    long id, birth, end, parent;
    if (!(fields >> id >> birth >> end >> parent) || !(fields >> std::ws).eof())
      throw IoError("malformed lineage line " + std::to_string(line_no) + " in tracks.txt: \"" + line + "\"");
    if (id < 1 || id > static_cast<long>(kMaxLabel) || parent < 0 || parent > static_cast<long>(kMaxLabel))
      throw IoError("malformed lineage line " + std::to_string(line_no) + ": id out of range");
    try {
      video.lineage.add({static_cast<Label>(id), static_cast<int>(birth), static_cast<int>(end),
                         static_cast<Label>(parent)});
    } catch (const std::invalid_argument& e) {
      throw IoError("malformed lineage line " + std::to_string(line_no) + ": " + e.what());
    }
  }

  const detail::FramePattern pattern{"mask", ".png", 3};
  const int frames = detail::count_contiguous_frames(base, pattern);
  for (int t = 0; t < frames; ++t) {
    const GrayImage img = read_gray_png((base / pattern.name(t)).string());
    LabelFrame frame(img.width, img.height, 0);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) frame.data[i] = static_cast<Label>(img.pixels[i]);
    video.frames.push_back(std::move(frame));
  }

  try {
    video.lineage.validate();
  } catch (const std::invalid_argument& e) {
    throw IoError(std::string("invalid tracks.txt: ") + e.what());
  }
  const auto vis = visibility_by_id(video.frames);
  for (const auto& [id, at] : vis) {
    const TrackRecord* rec = video.lineage.find(id);
    if (!rec) throw IoError("frame/lineage inconsistency: id " + std::to_string(id) + " not in tracks.txt");
    if (at.front() < rec->birth || at.back() > rec->end)
      throw IoError("frame/lineage inconsistency: id " + std::to_string(id) + " visible outside [" +
                    std::to_string(rec->birth) + "," + std::to_string(rec->end) + "]");
  }
  for (const TrackRecord& rec : video.lineage.records)
    if (!vis.count(rec.id))
      throw IoError("frame/lineage inconsistency: lineage id " + std::to_string(rec.id) +
                    " absent from all masks");
  return video;
}

// ---------------------------------------------------------------------------
// Intensity videos: t%03d.png, 8- or 16-bit grayscale, normalized to [0,1].
// ---------------------------------------------------------------------------

inline void save_intensity(const std::vector<IntensityFrame>& frames, const std::string& dir, int bit_depth = 16,
                           const std::string& pattern_text = "t%03d.png") {
  if (bit_depth != 8 && bit_depth != 16) throw ConfigError("intensity bit depth must be 8 or 16");
  const detail::FramePattern pattern = detail::parse_frame_pattern(pattern_text);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory: " + dir);

  const double scale = bit_depth == 8 ? 255.0 : 65535.0;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    GrayImage img;
    img.width = frames[t].width;
    img.height = frames[t].height;
    img.bit_depth = bit_depth;
    img.pixels.resize(frames[t].data.size());
    for (std::size_t i = 0; i < frames[t].data.size(); ++i) {
      const double v = std::clamp(static_cast<double>(frames[t].data[i]), 0.0, 1.0);
      img.pixels[i] = static_cast<std::uint16_t>(std::lround(v * scale));
    }
    write_gray_png((std::filesystem::path(dir) / pattern.name(static_cast<int>(t))).string(), img);
  }
}

/// Loads externally produced grayscale frames, normalizing by the type
/// maximum. Frames must be contiguous from index 0 with equal dimensions.
inline std::vector<IntensityFrame> ingest_frames(const std::string& dir,
                                                 const std::string& pattern_text = "t%03d.png") {
  const detail::FramePattern pattern = detail::parse_frame_pattern(pattern_text);
  const int count = detail::count_contiguous_frames(dir, pattern);
  std::vector<IntensityFrame> frames;
  for (int t = 0; t < count; ++t) {
    const GrayImage img = read_gray_png((std::filesystem::path(dir) / pattern.name(t)).string());
    if (t > 0 && (img.width != frames.front().width || img.height != frames.front().height))
      throw IoError("dimension mismatch at frame index " + std::to_string(t) + " in " + dir);
    IntensityFrame f(img.width, img.height);
    const float scale = 1.0f / static_cast<float>(img.max_value());
    for (std::size_t i = 0; i < img.pixels.size(); ++i) f.data[i] = static_cast<float>(img.pixels[i]) * scale;
    frames.push_back(std::move(f));
  }
  return frames;
}

}  // namespace synthtrack
