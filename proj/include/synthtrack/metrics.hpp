#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "synthtrack/core.hpp"

namespace synthtrack {

enum class EdgeKind : std::uint8_t { Track, Parent };

struct GraphNode {
  int frame = 0;
  Label id = 0;
  friend bool operator==(const GraphNode&, const GraphNode&) = default;
  friend auto operator<=>(const GraphNode&, const GraphNode&) = default;
};

struct GraphEdge {
  int from = 0;  // node indices
  int to = 0;
  EdgeKind kind = EdgeKind::Track;
  friend bool operator==(const GraphEdge&, const GraphEdge&) = default;
};

/// Acyclic oriented graph of detections: one node per (frame, visible id),
/// track edges along an id's consecutive visible frames, parent edges from a
/// mitotic mother's last node to each daughter's first node.
struct TrackingGraph {
  std::vector<GraphNode> nodes;
  std::vector<GraphEdge> edges;

  int find_node(int frame, Label id) const {
    const GraphNode key{frame, id};
    auto it = std::lower_bound(nodes.begin(), nodes.end(), key);
    return (it != nodes.end() && *it == key) ? static_cast<int>(it - nodes.begin()) : -1;
  }

  int add_node(int frame, Label id) {
    nodes.push_back({frame, id});  // caller keeps nodes sorted; see build_graph
    return static_cast<int>(nodes.size()) - 1;
  }

  std::size_t node_count() const { return nodes.size(); }
  std::size_t edge_count() const { return edges.size(); }
};

/// Builds the graph from per-frame visibility plus lineage. Throws when a
/// visible id is missing from the lineage or appears outside its interval.
inline TrackingGraph build_graph(const LabeledVideo& video) {
  video.lineage.validate();
  const auto vis = visibility_by_id(video.frames);

  TrackingGraph g;
  for (const auto& [id, frames] : vis) {
    const TrackRecord* rec = video.lineage.find(id);
    if (!rec)
      throw std::invalid_argument("lineage/frame inconsistency: id " + std::to_string(id) +
                                  " has pixels but no lineage record");
    if (frames.front() < rec->birth || frames.back() > rec->end)
      throw std::invalid_argument("lineage/frame inconsistency: id " + std::to_string(id) +
                                  " visible outside its lineage interval");
  }

  // Nodes sorted by (frame, id) so find_node can bisect.
  for (int t = 0; t < video.frame_count(); ++t)
    for (const auto& [id, frames] : vis)
      if (std::binary_search(frames.begin(), frames.end(), t)) g.add_node(t, id);

  for (const auto& [id, frames] : vis)
    for (std::size_t i = 1; i < frames.size(); ++i)
      if (frames[i] == frames[i - 1] + 1)
        g.edges.push_back({g.find_node(frames[i - 1], id), g.find_node(frames[i], id), EdgeKind::Track});

  for (const TrackRecord& rec : video.lineage.records) {
    if (rec.parent == 0) continue;
    auto child = vis.find(rec.id);
    auto parent = vis.find(rec.parent);
    if (child == vis.end() || parent == vis.end()) continue;
    const int from = g.find_node(parent->second.back(), rec.parent);
    const int to = g.find_node(child->second.front(), rec.id);
    if (parent->second.back() < child->second.front()) g.edges.push_back({from, to, EdgeKind::Parent});
  }
  return g;
}

/// Per-frame correspondence between ground-truth and result objects. A GT
/// object is detected by the result object covering a strict majority of its
/// pixels; majorities are exclusive, so each GT object maps to at most one
/// result object, while one result object may absorb several GT objects.
struct FrameMatch {
  std::map<Label, Label> gt_to_res;                 // detected GT objects only
  std::map<Label, int> res_matched;                 // every result id -> matched GT count
  std::map<Label, std::size_t> gt_area, res_area;
  std::map<std::pair<Label, Label>, std::size_t> overlap;
};

inline FrameMatch match_frame(const LabelFrame& gt, const LabelFrame& res) {
  if (gt.width != res.width || gt.height != res.height)
    throw std::invalid_argument("match_frame: dimension mismatch");
  FrameMatch m;
  for (std::size_t i = 0; i < gt.data.size(); ++i) {
    const Label g = gt.data[i], r = res.data[i];
    if (g != 0) ++m.gt_area[g];
    if (r != 0) ++m.res_area[r];
    if (g != 0 && r != 0) ++m.overlap[{g, r}];
  }
  for (const auto& [r, a] : m.res_area) m.res_matched[r] = 0;
  for (const auto& [pair, ov] : m.overlap) {
    const auto& [g, r] = pair;
    if (2 * ov > m.gt_area[g]) {
      m.gt_to_res[g] = r;
      ++m.res_matched[r];
    }
  }
  return m;
}

struct AogmWeights {
  double ns = 5.0;   // node split
  double fn = 10.0;  // false negative
  double fp = 1.0;   // false positive
  double ed = 1.0;   // edge delete
  double ea = 1.5;   // edge add
  double ec = 1.0;   // edge kind change

  void validate() const {
    if (ns < 0 || fn < 0 || fp < 0 || ed < 0 || ea < 0 || ec < 0)
      throw std::invalid_argument("aogm weights must be >= 0");
  }
};

struct AogmCounts {
  std::int64_t ns = 0, fn = 0, fp = 0, ed = 0, ea = 0, ec = 0;

  double cost(const AogmWeights& w) const {
    return w.ns * static_cast<double>(ns) + w.fn * static_cast<double>(fn) + w.fp * static_cast<double>(fp) +
           w.ed * static_cast<double>(ed) + w.ea * static_cast<double>(ea) + w.ec * static_cast<double>(ec);
  }
  double node_cost(const AogmWeights& w) const {
    return w.ns * static_cast<double>(ns) + w.fn * static_cast<double>(fn) + w.fp * static_cast<double>(fp);
  }

  friend bool operator==(const AogmCounts&, const AogmCounts&) = default;
};

/// Node correspondence for graph-level accounting: gt_to_res[i] is the result
/// node matched to GT node i (or -1), res_matched[j] how many GT nodes the
/// result node j absorbs.
struct NodeMatching {
  std::vector<int> gt_to_res;
  std::vector<int> res_matched;
};

/// Edit-operation counts turning the result graph into the GT graph: FN
/// (undetected GT node), FP (unmatched result node), NS (k GT nodes on one
/// result node cost k-1 splits), then edge operations through the node
/// correspondence — EA for a GT edge with no counterpart, EC for a
/// counterpart of the wrong kind, ED for a result edge corresponding to no
/// GT edge.
inline AogmCounts aogm_from_graphs(const TrackingGraph& gt, const TrackingGraph& res, const NodeMatching& m) {
  if (m.gt_to_res.size() != gt.nodes.size() || m.res_matched.size() != res.nodes.size())
    throw std::invalid_argument("aogm: matching size mismatch");
  AogmCounts c;
  for (int r : m.gt_to_res) c.fn += (r < 0);
  for (int k : m.res_matched) {
    c.fp += (k == 0);
    c.ns += std::max(0, k - 1);
  }

  std::map<std::pair<int, int>, EdgeKind> res_edges;
  for (const GraphEdge& e : res.edges) res_edges.emplace(std::pair{e.from, e.to}, e.kind);

  std::map<std::pair<int, int>, bool> covered;  // res edges with a GT counterpart
  for (const GraphEdge& e : gt.edges) {
    const int u = m.gt_to_res[e.from], v = m.gt_to_res[e.to];
    auto it = (u >= 0 && v >= 0) ? res_edges.find({u, v}) : res_edges.end();
    if (it == res_edges.end()) {
      ++c.ea;
    } else {
      covered[{u, v}] = true;
      if (it->second != e.kind) ++c.ec;
    }
  }
  for (const auto& [key, kind] : res_edges)
    if (!covered.count(key)) ++c.ed;
  return c;
}

struct AogmResult {
  AogmCounts counts;
  TrackingGraph gt_graph;
  TrackingGraph res_graph;
  std::vector<FrameMatch> matches;
};

inline AogmResult aogm(const LabeledVideo& gt, const LabeledVideo& res, const AogmWeights& weights = {}) {
  weights.validate();
  if (gt.frame_count() != res.frame_count()) throw std::invalid_argument("aogm: frame count mismatch");
  if (gt.frame_count() > 0 && (gt.width() != res.width() || gt.height() != res.height()))
    throw std::invalid_argument("aogm: dimension mismatch");

  AogmResult out;
  out.gt_graph = build_graph(gt);
  out.res_graph = build_graph(res);
  out.matches.reserve(gt.frames.size());
  for (int t = 0; t < gt.frame_count(); ++t) out.matches.push_back(match_frame(gt.frames[t], res.frames[t]));

  NodeMatching nm;
  nm.gt_to_res.assign(out.gt_graph.nodes.size(), -1);
  nm.res_matched.assign(out.res_graph.nodes.size(), 0);
  for (std::size_t i = 0; i < out.gt_graph.nodes.size(); ++i) {
    const GraphNode& n = out.gt_graph.nodes[i];
    const auto& match = out.matches[n.frame].gt_to_res;
    auto it = match.find(n.id);
    if (it == match.end()) continue;
    const int r = out.res_graph.find_node(n.frame, it->second);
    nm.gt_to_res[i] = r;
  }
  for (int r : nm.gt_to_res)
    if (r >= 0) ++nm.res_matched[r];

  out.counts = aogm_from_graphs(out.gt_graph, out.res_graph, nm);
  return out;
}

inline double tra(const LabeledVideo& gt, const LabeledVideo& res, const AogmWeights& weights = {}) {
  const AogmResult r = aogm(gt, res, weights);
  const double aogm0 = weights.fn * static_cast<double>(r.gt_graph.node_count()) +
                       weights.ea * static_cast<double>(r.gt_graph.edge_count());
  if (r.gt_graph.nodes.empty()) throw std::invalid_argument("undefined for empty ground truth");
  return 1.0 - std::min(r.counts.cost(weights), aogm0) / aogm0;
}

inline double det(const LabeledVideo& gt, const LabeledVideo& res, const AogmWeights& weights = {}) {
  const AogmResult r = aogm(gt, res, weights);
  if (r.gt_graph.nodes.empty()) throw std::invalid_argument("undefined for empty ground truth");
  const double d0 = weights.fn * static_cast<double>(r.gt_graph.node_count());
  return 1.0 - std::min(r.counts.node_cost(weights), d0) / d0;
}

/// Mean Jaccard index over all GT objects in all frames; an undetected GT
/// object contributes 0.
inline double seg(const LabeledVideo& gt, const LabeledVideo& res) {
  if (gt.frame_count() != res.frame_count()) throw std::invalid_argument("seg: frame count mismatch");
  double total = 0.0;
  std::size_t objects = 0;
  for (int t = 0; t < gt.frame_count(); ++t) {
    const FrameMatch m = match_frame(gt.frames[t], res.frames[t]);
    for (const auto& [g, area] : m.gt_area) {
      ++objects;
      auto it = m.gt_to_res.find(g);
      if (it == m.gt_to_res.end()) continue;
      const std::size_t ov = m.overlap.at({g, it->second});
      const std::size_t uni = area + m.res_area.at(it->second) - ov;
      total += static_cast<double>(ov) / static_cast<double>(uni);
    }
  }
  if (objects == 0) throw std::invalid_argument("undefined for empty ground truth");
  return total / static_cast<double>(objects);
}

struct ScoreReport {
  double det = 0.0;
  double seg = 0.0;
  double tra = 0.0;
  AogmCounts counts;
  double aogm_cost = 0.0;
  double aogm0_cost = 0.0;
  double aogm_det_cost = 0.0;
  double aogm_det0_cost = 0.0;
  std::vector<double> seg_per_frame;  // NaN for frames with no GT objects
};

/// One-pass scoring: shares the graph construction and per-frame matching
/// across DET, SEG, and TRA.
inline ScoreReport evaluate(const LabeledVideo& gt, const LabeledVideo& res, const AogmWeights& weights = {}) {
  const AogmResult r = aogm(gt, res, weights);
  if (r.gt_graph.nodes.empty()) throw std::invalid_argument("undefined for empty ground truth");

  ScoreReport report;
  report.counts = r.counts;
  report.aogm_cost = r.counts.cost(weights);
  report.aogm0_cost = weights.fn * static_cast<double>(r.gt_graph.node_count()) +
                      weights.ea * static_cast<double>(r.gt_graph.edge_count());
  report.aogm_det_cost = r.counts.node_cost(weights);
  report.aogm_det0_cost = weights.fn * static_cast<double>(r.gt_graph.node_count());
  report.tra = 1.0 - std::min(report.aogm_cost, report.aogm0_cost) / report.aogm0_cost;
  report.det = 1.0 - std::min(report.aogm_det_cost, report.aogm_det0_cost) / report.aogm_det0_cost;

  double total = 0.0;
  std::size_t objects = 0;
  for (int t = 0; t < gt.frame_count(); ++t) {
    const FrameMatch& m = r.matches[t];
    double frame_total = 0.0;
    std::size_t frame_objects = 0;
    for (const auto& [g, area] : m.gt_area) {
      ++frame_objects;
      auto it = m.gt_to_res.find(g);
      if (it == m.gt_to_res.end()) continue;
      const std::size_t ov = m.overlap.at({g, it->second});
      const std::size_t uni = area + m.res_area.at(it->second) - ov;
      frame_total += static_cast<double>(ov) / static_cast<double>(uni);
    }
    report.seg_per_frame.push_back(frame_objects ? frame_total / static_cast<double>(frame_objects)
                                                 : std::nan(""));
    total += frame_total;
    objects += frame_objects;
  }
  report.seg = total / static_cast<double>(objects);
  return report;
}

/// Line-oriented key=value rendering, the scores.txt format.
inline std::string score_report_text(const ScoreReport& r) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "DET=" << r.det << "\n";
  os << "SEG=" << r.seg << "\n";
  os << "TRA=" << r.tra << "\n";
  os << "NS=" << r.counts.ns << "\n";
  os << "FN=" << r.counts.fn << "\n";
  os << "FP=" << r.counts.fp << "\n";
  os << "ED=" << r.counts.ed << "\n";
  os << "EA=" << r.counts.ea << "\n";
  os << "EC=" << r.counts.ec << "\n";
  os << "AOGM=" << r.aogm_cost << "\n";
  os << "AOGM0=" << r.aogm0_cost << "\n";
  os << "AOGM_DET=" << r.aogm_det_cost << "\n";
  os << "AOGM_DET0=" << r.aogm_det0_cost << "\n";
  return os.str();
}

}  // namespace synthtrack
