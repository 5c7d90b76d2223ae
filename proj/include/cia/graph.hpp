#pragma once

// Directed road-network style graph, Dijkstra shortest paths, random
// (s, t) path sampling and the edge-list CSV format.
//
// Edge-list header: edge_id,src,dst,cost[,feat_0,...,feat_{d-1}][,label]
// An empty (or absent) label marks the edge as unlabeled.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <queue>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cia/core.hpp"
#include "cia/csv.hpp"
#include "cia/random.hpp"

namespace cia {

using NodeId = std::int64_t;
using EdgeId = std::int64_t;

struct Edge {
  EdgeId id = 0;
  NodeId src = 0;
  NodeId dst = 0;
  double cost = 0.0;
  std::vector<double> features;
  std::optional<double> label;

  friend bool operator==(const Edge&, const Edge&) = default;
};

class WeightedGraph {
 public:
  void add_node(NodeId id) {
    if (position_.count(id)) return;
    if (nodes_.empty() || id > nodes_.back()) {
      position_.emplace(id, nodes_.size());
      nodes_.push_back(id);
      out_.resize(nodes_.size());
      return;
    }
    const auto it = std::lower_bound(nodes_.begin(), nodes_.end(), id);
    nodes_.insert(it, id);
    rebuild_positions();
  }

  // Nodes must already exist. Costs must be finite and non-negative; all
  // edges share one feature dimension.
  void add_edge(Edge e) {
    if (!std::isfinite(e.cost) || e.cost < 0.0) throw InputError(fmt::format("edge {} has invalid cost {}", e.id, e.cost));
    if (edge_position_.count(e.id)) throw InputError(fmt::format("duplicate edge_id {}", e.id));
    if (!position_.count(e.src) || !position_.count(e.dst))
      throw InputError(fmt::format("edge {} references unknown node ({} -> {})", e.id, e.src, e.dst));
    if (!edges_.empty() && e.features.size() != edges_.front().features.size())
      throw InputError(fmt::format("edge {} has {} features, expected {}", e.id, e.features.size(), edges_.front().features.size()));
    edge_position_.emplace(e.id, edges_.size());
    out_.resize(nodes_.size());
    out_[position_.at(e.src)].push_back(edges_.size());
    edges_.push_back(std::move(e));
  }

  [[nodiscard]] std::span<const NodeId> nodes() const noexcept { return nodes_; }
  [[nodiscard]] std::span<const Edge> edges() const noexcept { return edges_; }
  [[nodiscard]] std::size_t node_count() const noexcept { return nodes_.size(); }
  [[nodiscard]] std::size_t feature_dim() const noexcept { return edges_.empty() ? 0 : edges_.front().features.size(); }

  [[nodiscard]] bool has_node(NodeId id) const { return position_.count(id) != 0; }
  [[nodiscard]] std::size_t node_position(NodeId id) const {
    auto it = position_.find(id);
    if (it == position_.end()) throw InputError(fmt::format("unknown node {}", id));
    return it->second;
  }
  [[nodiscard]] const Edge& edge(EdgeId id) const {
    auto it = edge_position_.find(id);
    if (it == edge_position_.end()) throw InputError(fmt::format("unknown edge {}", id));
    return edges_[it->second];
  }
  [[nodiscard]] std::size_t edge_position(EdgeId id) const {
    auto it = edge_position_.find(id);
    if (it == edge_position_.end()) throw InputError(fmt::format("unknown edge {}", id));
    return it->second;
  }
  /// Positions (into edges()) of the edges leaving the node at `node_pos`.
  [[nodiscard]] std::span<const std::size_t> out_edges(std::size_t node_pos) const noexcept {
    if (node_pos >= out_.size()) return {};
    return out_[node_pos];
  }

  friend bool operator==(const WeightedGraph& a, const WeightedGraph& b) { return a.nodes_ == b.nodes_ && a.edges_ == b.edges_; }

 private:
  void rebuild_positions() {
    // Node positions follow id order; re-home adjacency lists after an insert.
    std::vector<std::vector<std::size_t>> out(nodes_.size());
    std::unordered_map<NodeId, std::size_t> pos;
    for (std::size_t p = 0; p < nodes_.size(); ++p) pos.emplace(nodes_[p], p);
    for (const auto& [id, old] : position_)
      if (old < out_.size()) out[pos.at(id)] = std::move(out_[old]);
    position_ = std::move(pos);
    out_ = std::move(out);
  }

  std::vector<NodeId> nodes_;
  std::unordered_map<NodeId, std::size_t> position_;
  std::vector<Edge> edges_;
  std::unordered_map<EdgeId, std::size_t> edge_position_;
  std::vector<std::vector<std::size_t>> out_;
};

/// Edges of one shortest path, in travel order.
struct PathGroup {
  NodeId source = 0;
  NodeId target = 0;
  std::vector<EdgeId> edge_ids;
  double cost = 0.0;

  [[nodiscard]] IndexGroup as_group(GroupId id) const {
    IndexGroup g{id, {edge_ids.begin(), edge_ids.end()}};
    std::sort(g.members.begin(), g.members.end());
    g.members.erase(std::unique(g.members.begin(), g.members.end()), g.members.end());
    return g;
  }
};

/// True when the edges chain from `source` to `target`.
inline bool is_valid_path(const WeightedGraph& g, const PathGroup& p) {
  NodeId at = p.source;
  for (auto id : p.edge_ids) {
    const Edge& e = g.edge(id);
    if (e.src != at) return false;
    at = e.dst;
  }
  return at == p.target;
}

using CostFn = std::function<double(const Edge&)>;

/// Evaluates `cost_fn` (or the stored cost) on every edge and checks the
/// Dijkstra precondition.
inline std::vector<double> edge_costs(const WeightedGraph& g, const CostFn& cost_fn = nullptr) {
  std::vector<double> costs;
  costs.reserve(g.edges().size());
  for (const auto& e : g.edges()) {
    const double c = cost_fn ? cost_fn(e) : e.cost;
    if (!std::isfinite(c) || c < 0.0) throw InputError(fmt::format("edge {} has negative or non-finite cost {}", e.id, c));
    costs.push_back(c);
  }
  return costs;
}

/// Single-source shortest path tree over node positions.
struct ShortestPathTree {
  std::size_t source = 0;
  std::vector<double> dist;
  std::vector<std::size_t> pred_edge;  // edge position, npos at the source / unreached
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
};

/// Dijkstra with deterministic ties: equal tentative distances keep the
/// predecessor with the smallest node id (then the smallest edge id).
inline ShortestPathTree shortest_path_tree(const WeightedGraph& g, std::size_t source_pos, std::span<const double> costs) {
  const std::size_t n = g.node_count();
  const auto edges = g.edges();
  ShortestPathTree tree{source_pos, std::vector<double>(n, kInf), std::vector<std::size_t>(n, ShortestPathTree::npos)};
  std::vector<char> done(n, 0);
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  tree.dist[source_pos] = 0.0;
  heap.push({0.0, source_pos});
  while (!heap.empty()) {
    const auto [d, u] = heap.top();
    heap.pop();
    if (done[u] || d > tree.dist[u]) continue;
    done[u] = 1;
    for (auto ep : g.out_edges(u)) {
      const Edge& e = edges[ep];
      const std::size_t v = g.node_position(e.dst);
      if (done[v]) continue;
      const double nd = d + costs[ep];
      bool take = nd < tree.dist[v];
      if (!take && nd == tree.dist[v] && tree.pred_edge[v] != ShortestPathTree::npos) {
        const Edge& cur = edges[tree.pred_edge[v]];
        const auto cur_from = g.node_position(cur.src);
        take = u < cur_from || (u == cur_from && e.id < cur.id);
      }
      if (take) {
        const bool improved = nd < tree.dist[v];
        tree.dist[v] = nd;
        tree.pred_edge[v] = ep;
        if (improved) heap.push({nd, v});
      }
    }
  }
  return tree;
}

inline PathGroup extract_path(const WeightedGraph& g, const ShortestPathTree& tree, std::size_t target_pos) {
  PathGroup p{g.nodes()[tree.source], g.nodes()[target_pos], {}, tree.dist[target_pos]};
  for (std::size_t at = target_pos; at != tree.source;) {
    const Edge& e = g.edges()[tree.pred_edge[at]];
    p.edge_ids.push_back(e.id);
    at = g.node_position(e.src);
  }
  std::reverse(p.edge_ids.begin(), p.edge_ids.end());
  return p;
}

/// Minimum-cost path from source to target, or nullopt when unreachable.
inline std::optional<PathGroup> dijkstra(const WeightedGraph& g, NodeId source, NodeId target, const CostFn& cost_fn = nullptr) {
  const auto costs = edge_costs(g, cost_fn);
  const std::size_t s = g.node_position(source);
  const std::size_t t = g.node_position(target);
  const auto tree = shortest_path_tree(g, s, costs);
  if (!std::isfinite(tree.dist[t])) return std::nullopt;
  return extract_path(g, tree, t);
}

/// Raised when path sampling exhausts its draw budget.
class SamplingError : public InputError {
 public:
  SamplingError(std::size_t achieved, std::size_t wanted, std::size_t draws)
      : InputError(fmt::format("collected only {} of {} paths within {} (s,t) draws", achieved, wanted, draws)),
        achieved_(achieved) {}
  [[nodiscard]] std::size_t achieved() const noexcept { return achieved_; }

 private:
  std::size_t achieved_;
};

/// Samples uniform (s, t) node pairs and keeps shortest paths with at least
/// `min_path_len` edges until `k` are collected. Unreachable pairs are
/// skipped. Gives up after `max_draws` draws (default 100 k).
inline std::vector<PathGroup> sample_path_groups(const WeightedGraph& g, std::size_t k, std::uint64_t seed,
                                                 std::size_t min_path_len, const CostFn& cost_fn = nullptr,
                                                 std::size_t max_draws = 0) {
  if (min_path_len < 1) throw InputError("min_path_len must be at least 1");
  if (g.node_count() < 2) throw InputError("path sampling needs at least two nodes");
  if (max_draws == 0) max_draws = 100 * k;
  const auto costs = edge_costs(g, cost_fn);
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, g.node_count() - 1);
  std::unordered_map<std::size_t, ShortestPathTree> trees;
  std::vector<PathGroup> out;
  out.reserve(k);
  std::size_t draws = 0;
  while (out.size() < k) {
    if (draws == max_draws) throw SamplingError(out.size(), k, draws);
    ++draws;
    const std::size_t s = pick(rng);
    const std::size_t t = pick(rng);
    if (s == t) continue;
    auto it = trees.find(s);
    if (it == trees.end()) it = trees.emplace(s, shortest_path_tree(g, s, costs)).first;
    if (!std::isfinite(it->second.dist[t])) continue;
    PathGroup p = extract_path(g, it->second, t);
    if (p.edge_ids.size() >= min_path_len) out.push_back(std::move(p));
  }
  return out;
}

/// Loads an edge-list CSV. Nodes are the endpoints that appear.
inline WeightedGraph load_edge_list(std::istream& in) {
  const CsvTable table = parse_csv(in);
  const std::vector<std::string> required{"edge_id", "src", "dst", "cost"};
  for (std::size_t c = 0; c < required.size(); ++c)
    if (table.header.size() <= c || table.header[c] != required[c])
      throw ParseError(1, fmt::format("header must start with edge_id,src,dst,cost (column {} is '{}')", c + 1,
                                      c < table.header.size() ? table.header[c] : std::string{}));
  std::size_t feat_cols = 0;
  while (4 + feat_cols < table.header.size() && table.header[4 + feat_cols] == fmt::format("feat_{}", feat_cols)) ++feat_cols;
  const bool has_label = 4 + feat_cols < table.header.size() && table.header[4 + feat_cols] == "label";
  if (4 + feat_cols + (has_label ? 1 : 0) != table.header.size())
    throw ParseError(1, fmt::format("unexpected column '{}'", table.header[4 + feat_cols + (has_label ? 1 : 0)]));

  std::vector<Edge> edges;
  edges.reserve(table.rows.size());
  std::unordered_set<EdgeId> seen;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::size_t line = table.line_of_row[r];
    Edge e;
    const auto id = parse_int(row[0]);
    const auto src = parse_int(row[1]);
    const auto dst = parse_int(row[2]);
    const auto cost = parse_double(row[3]);
    if (!id) throw ParseError(line, fmt::format("invalid edge_id '{}'", row[0]));
    if (!src || *src < 0) throw ParseError(line, fmt::format("invalid src node '{}'", row[1]));
    if (!dst || *dst < 0) throw ParseError(line, fmt::format("invalid dst node '{}'", row[2]));
    if (!cost) throw ParseError(line, fmt::format("invalid cost '{}'", row[3]));
    if (*cost < 0.0) throw ParseError(line, fmt::format("negative cost {}", *cost));
    e.id = *id;
    e.src = *src;
    e.dst = *dst;
    e.cost = *cost;
    for (std::size_t f = 0; f < feat_cols; ++f) {
      const auto v = parse_double(row[4 + f]);
      if (!v) throw ParseError(line, fmt::format("invalid feat_{} '{}'", f, row[4 + f]));
      e.features.push_back(*v);
    }
    if (has_label && !detail::trim(row[4 + feat_cols]).empty()) {
      const auto v = parse_double(row[4 + feat_cols]);
      if (!v) throw ParseError(line, fmt::format("invalid label '{}'", row[4 + feat_cols]));
      e.label = *v;
    }
    if (!seen.insert(e.id).second) throw ParseError(line, fmt::format("duplicate edge_id {}", e.id));
    edges.push_back(std::move(e));
  }

  std::vector<NodeId> nodes;
  for (const auto& e : edges) {
    nodes.push_back(e.src);
    nodes.push_back(e.dst);
  }
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  WeightedGraph g;
  for (auto n : nodes) g.add_node(n);
  for (std::size_t r = 0; r < edges.size(); ++r) {
    try {
      g.add_edge(std::move(edges[r]));
    } catch (const ParseError&) {
      throw;
    } catch (const InputError& err) {
      throw ParseError(table.line_of_row[r], err.what());
    }
  }
  return g;
}

inline WeightedGraph load_edge_list(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(fmt::format("cannot open '{}'", path));
  return load_edge_list(in);
}

/// Writes the edge-list CSV; doubles use the shortest round-trip form.
inline void write_edge_list(const WeightedGraph& g, std::ostream& out) {
  const std::size_t d = g.feature_dim();
  const bool any_label = std::any_of(g.edges().begin(), g.edges().end(), [](const Edge& e) { return e.label.has_value(); });
  out << "edge_id,src,dst,cost";
  for (std::size_t f = 0; f < d; ++f) out << ",feat_" << f;
  if (any_label) out << ",label";
  out << '\n';
  for (const auto& e : g.edges()) {
    out << fmt::format("{},{},{},{}", e.id, e.src, e.dst, e.cost);
    for (double v : e.features) out << fmt::format(",{}", v);
    if (any_label) out << ',' << (e.label ? fmt::format("{}", *e.label) : std::string{});
    out << '\n';
  }
}

inline void write_edge_list(const WeightedGraph& g, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError(fmt::format("cannot write '{}'", path));
  write_edge_list(g, out);
  if (!out) throw InputError(fmt::format("error writing '{}'", path));
}

struct GridOptions {
  std::size_t rows = 10;
  std::size_t cols = 10;
  double noise_sd = 0.3;
};

/// Synthetic road grid: two directed edges per neighbouring cell pair, two
/// uniform features per edge, a free-flow cost in [1, 2) and a labelled
/// travel cost  cost * (1 + feat_0) + 0.5 * feat_1 + N(0, noise_sd^2).
inline WeightedGraph make_grid_graph(const GridOptions& opt, std::uint64_t seed) {
  if (opt.rows < 1 || opt.cols < 1 || opt.rows * opt.cols < 2) throw InputError("grid needs at least two cells");
  Rng rng = make_rng(seed, {tag(Stream::synthetic)});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, opt.noise_sd);
  WeightedGraph g;
  for (std::size_t n = 0; n < opt.rows * opt.cols; ++n) g.add_node(static_cast<NodeId>(n));
  EdgeId next = 0;
  auto link = [&](std::size_t a, std::size_t b) {
    for (auto [s, t] : {std::pair{a, b}, std::pair{b, a}}) {
      Edge e;
      e.id = next++;
      e.src = static_cast<NodeId>(s);
      e.dst = static_cast<NodeId>(t);
      e.cost = 1.0 + unit(rng);
      e.features = {unit(rng), unit(rng)};
      e.label = e.cost * (1.0 + e.features[0]) + 0.5 * e.features[1] + noise(rng);
      g.add_edge(std::move(e));
    }
  };
  for (std::size_t r = 0; r < opt.rows; ++r)
    for (std::size_t c = 0; c < opt.cols; ++c) {
      const std::size_t here = r * opt.cols + c;
      if (c + 1 < opt.cols) link(here, here + 1);
      if (r + 1 < opt.rows) link(here, here + opt.cols);
    }
  return g;
}

}  // namespace cia
