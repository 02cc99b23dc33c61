#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "egl/core/io.hpp"
#include "egl/core/types.hpp"

namespace egl::graphstore {

struct StoredGraph {
  EntityGraph graph;
  std::int64_t built_at = 0;

  bool operator==(const StoredGraph& o) const {
    return built_at == o.built_at && graph.canonical_edges() == o.graph.canonical_edges() &&
           graph.n_entities() == o.graph.n_entities();
  }
};

// Ranked edges plus marketer feedback. Feedback edges get score 1.0 and
// provenance feedback, replacing any ranked edge on the same pair.
inline StoredGraph build_store(const EntityGraph& ranked, const std::vector<std::pair<EntityId, EntityId>>& feedback,
                               std::int64_t built_at = 0) {
  validate(ranked);
  StoredGraph st{ranked, built_at};
  for (auto [u, v] : feedback) st.graph.set_edge(u, v, 1.0, Provenance::feedback);
  return st;
}

struct ExpandedNode {
  EntityId id = 0;
  int hop = 0;
  EntityId parent = -1;

  bool operator==(const ExpandedNode&) const = default;
};

struct ExpansionResult {
  std::vector<ExpandedNode> nodes;
  std::vector<ScoredEdge> edges;
};

inline constexpr std::size_t kUnlimited = std::numeric_limits<std::size_t>::max();

// Neighbours of u by descending score, ascending id.
inline std::vector<ScoredEdge> ranked_neighbors(const EntityGraph& g, EntityId u) {
  auto nb = g.neighbors(u);
  std::sort(nb.begin(), nb.end(), [](const ScoredEdge& a, const ScoredEdge& b) {
    return a.score != b.score ? a.score > b.score : a.dst < b.dst;
  });
  return nb;
}

// Breadth-first expansion from the seed set. Each frontier node admits at
// most max_per_hop not-yet-visited neighbours, best scores first. Nodes are
// listed in discovery order; edges are every stored edge between two
// expanded nodes, (src, dst) ascending with src < dst.
inline ExpansionResult expand(const EntityGraph& g, std::vector<EntityId> seeds, int hops,
                              std::size_t max_per_hop = 20) {
  if (hops < 0) throw Error("hops must be >= 0");
  if (seeds.empty()) throw Error("expand needs at least one seed");
  for (EntityId s : seeds)
    if (s < 0 || static_cast<std::size_t>(s) >= g.n_entities()) throw Error("unknown seed entity " + std::to_string(s));
  std::sort(seeds.begin(), seeds.end());
  seeds.erase(std::unique(seeds.begin(), seeds.end()), seeds.end());

  ExpansionResult r;
  std::vector<char> seen(g.n_entities(), 0);
  std::vector<EntityId> frontier;
  for (EntityId s : seeds) {
    seen[static_cast<std::size_t>(s)] = 1;
    r.nodes.push_back({s, 0, -1});
    frontier.push_back(s);
  }
  for (int h = 1; h <= hops && !frontier.empty(); ++h) {
    std::vector<EntityId> next;
    for (EntityId u : frontier) {
      std::size_t taken = 0;
      const auto& raw = g.neighbors(u);
      // Sorting is only needed when the cap can bite.
      const bool capped = max_per_hop < raw.size();
      const auto nb = capped ? ranked_neighbors(g, u) : raw;
      for (const auto& e : nb) {
        if (taken == max_per_hop) break;
        auto& s = seen[static_cast<std::size_t>(e.dst)];
        if (s) continue;
        s = 1;
        ++taken;
        r.nodes.push_back({e.dst, h, u});
        next.push_back(e.dst);
      }
    }
    frontier = std::move(next);
  }
  for (const auto& n : r.nodes)
    for (const auto& e : g.neighbors(n.id))
      if (e.src < e.dst && seen[static_cast<std::size_t>(e.dst)]) r.edges.push_back(e);
  std::sort(r.edges.begin(), r.edges.end(),
            [](const ScoredEdge& a, const ScoredEdge& b) { return a.src != b.src ? a.src < b.src : a.dst < b.dst; });
  return r;
}

// ---- graph quality ----

struct Judgment {
  EntityId i = 0;
  EntityId j = 0;
  int t = 0;
  double c = 0.0;
};

struct JudgmentTable {
  std::vector<Judgment> rows;

  void validate() const {
    for (const auto& r : rows) {
      if (r.t != 0 && r.t != 1) throw Error("judgment T must be 0 or 1");
      if (r.c != 0.0 && r.c != 0.5 && r.c != 1.0) throw Error("judgment C must be 0, 0.5 or 1");
      if (r.c > 0.0 && r.t != 1) throw Error("judgment with C > 0 must have T = 1");
    }
  }
};

// Sum of C over sum of T.
inline double compute_cors(const JudgmentTable& j) {
  j.validate();
  double c = 0.0, t = 0.0;
  for (const auto& r : j.rows) {
    c += r.c;
    t += r.t;
  }
  if (t == 0.0) throw Error("CorS undefined: no related pairs");
  return c / t;
}

// Directed relation count over lexicon size; each undirected edge counts twice.
inline double compute_aeec(const EntityGraph& g, std::size_t n) {
  if (n == 0) throw Error("AEEC needs a non-empty lexicon");
  return static_cast<double>(2 * g.n_edges()) / static_cast<double>(n);
}

// Planted-label judgments for every stored edge: C = 1 for a truth edge,
// 0.5 for a same-community non-edge, 0 otherwise.
inline JudgmentTable judge_edges(const EntityGraph& g, const EntityGraph& truth, const std::vector<int>& communities) {
  JudgmentTable j;
  for (const auto& e : g.canonical_edges()) {
    double c = 0.0;
    if (truth.has_edge(e.src, e.dst))
      c = 1.0;
    else if (communities.at(static_cast<std::size_t>(e.src)) == communities.at(static_cast<std::size_t>(e.dst)))
      c = 0.5;
    j.rows.push_back({e.src, e.dst, 1, c});
  }
  return j;
}

// ---- store directory: edges.tsv + manifest (JSON) ----

inline void save_store(const StoredGraph& st, const std::filesystem::path& dir, const nlohmann::json& sources = {}) {
  std::filesystem::create_directories(dir);
  write_edges(st.graph, dir / "edges.tsv");
  std::size_t feedback = 0;
  for (const auto& e : st.graph.canonical_edges()) feedback += e.provenance == Provenance::feedback;
  nlohmann::json m = {{"built_at", st.built_at},
                      {"n_entities", st.graph.n_entities()},
                      {"n_edges", st.graph.n_edges()},
                      {"n_feedback_edges", feedback},
                      {"edges_hash", file_hash(dir / "edges.tsv")},
                      {"sources", sources.is_null() ? nlohmann::json::object() : sources}};
  auto out = detail::open_out(dir / "manifest");
  out << m.dump(2) << '\n';
}

inline StoredGraph load_store(const std::filesystem::path& dir) {
  auto in = detail::open_in(dir / "manifest");
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error("corrupt store manifest: " + std::string(e.what()));
  }
  const auto n = m.at("n_entities").get<std::size_t>();
  if (file_hash(dir / "edges.tsv") != m.at("edges_hash").get<std::string>())
    throw Error("store edges.tsv does not match its manifest hash");
  auto ein = detail::open_in(dir / "edges.tsv");
  StoredGraph st{parse_edges(ein, n), m.at("built_at").get<std::int64_t>()};
  if (st.graph.n_edges() != m.at("n_edges").get<std::size_t>()) throw Error("store edge count disagrees with manifest");
  return st;
}

}  // namespace egl::graphstore
