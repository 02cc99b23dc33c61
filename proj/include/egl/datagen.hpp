#pragma once

// Synthetic worlds with planted ground truth, plus brute-force oracles used
// to check the production code paths.

#include <cmath>
#include <deque>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "egl/core/config.hpp"
#include "egl/core/io.hpp"
#include "egl/core/rng.hpp"
#include "egl/core/types.hpp"

namespace egl::datagen {

struct WorldParams {
  std::size_t n_entities = 1000;
  std::size_t n_communities = 10;
  double intra_p = 0.1;
  double inter_p = 0.001;
  std::size_t n_users = 2000;
  std::size_t walk_len = 20;
  std::size_t walks_per_user = 5;
  std::size_t semantic_dim = 32;
  double semantic_noise = 0.35;
  std::int64_t now = 1'700'000'000;
  std::uint64_t seed = 1;

  static WorldParams from_config(const RunConfig& cfg) {
    WorldParams p;
    p.n_entities = cfg.size("n_entities");
    p.n_communities = cfg.size("n_communities");
    p.intra_p = cfg.num("intra_p");
    p.inter_p = cfg.num("inter_p");
    p.n_users = cfg.size("n_users");
    p.walk_len = cfg.size("walk_len");
    p.walks_per_user = cfg.size("walks_per_user");
    p.semantic_dim = cfg.size("semantic_dim");
    p.semantic_noise = cfg.num("semantic_noise");
    p.now = cfg.integer("now");
    p.seed = static_cast<std::uint64_t>(cfg.integer("seed"));
    return p;
  }
};

struct World {
  EntityLexicon lexicon;
  EntityGraph truth_graph;
  std::vector<UserEntitySequence> sequences;
  EmbeddingTable semantic_vectors;
  std::vector<int> communities;
  std::int64_t now = 0;
};

struct DataSplit {
  std::vector<PairExample> train_pos, train_neg, test_pos, test_neg;
  EntityGraph observed_graph;

  std::vector<PairExample> train() const {
    auto out = train_pos;
    out.insert(out.end(), train_neg.begin(), train_neg.end());
    return out;
  }
};

namespace detail {

// Calls f(k) for each k in [0, count) kept independently with probability p,
// using geometric skips so sparse blocks cost O(kept).
template <typename F>
void bernoulli_indices(std::uint64_t count, double p, Rng& rng, F&& f) {
  if (p <= 0.0 || count == 0) return;
  if (p >= 1.0) {
    for (std::uint64_t k = 0; k < count; ++k) f(k);
    return;
  }
  const double lq = std::log1p(-p);
  std::uint64_t k = 0;
  while (true) {
    double u;
    do {
      u = rng.uniform();
    } while (u <= 0.0);
    const double skip = std::floor(std::log(u) / lq);
    if (skip >= static_cast<double>(count - k)) return;
    k += static_cast<std::uint64_t>(skip);
    f(k);
    if (++k >= count) return;
  }
}

inline std::string entity_name(std::size_t id) {
  static const char* syll[] = {"ka", "lo", "mi", "ta", "ne", "ru", "so", "vi", "pe", "da", "zu", "ho"};
  std::string s;
  std::size_t x = id;
  do {
    s += syll[x % 12];
    x /= 12;
  } while (x);
  return s + std::to_string(id);
}

}  // namespace detail

// Planted-partition world. Communities are contiguous, balanced id blocks.
inline World gen_world(const WorldParams& p) {
  if (p.n_communities < 1) throw Error("n_communities must be >= 1");
  if (p.n_entities < p.n_communities) throw Error("fewer entities than communities");
  if (!(p.inter_p >= 0.0 && p.intra_p <= 1.0)) throw Error("edge probabilities must lie in [0,1]");
  if (p.n_communities > 1 && !(p.inter_p < p.intra_p))
    throw Error("unsatisfiable parameters: require inter_p < intra_p");
  if (p.n_communities == 1 && !(p.intra_p > 0.0)) throw Error("unsatisfiable parameters: intra_p must be > 0");

  Rng root(p.seed);
  Rng edge_rng = root.fork();
  Rng walk_rng = root.fork();
  Rng sem_rng = root.fork();

  World w;
  w.now = p.now;
  const std::size_t n = p.n_entities, c = p.n_communities;
  static const char* types[] = {"brand", "person", "team", "topic", "place", "product"};
  for (std::size_t i = 0; i < n; ++i) w.lexicon.add(detail::entity_name(i), types[i % 6]);
  w.communities.resize(n);
  std::vector<std::size_t> start(c + 1);
  for (std::size_t k = 0; k <= c; ++k) start[k] = k * n / c;
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = start[k]; i < start[k + 1]; ++i) w.communities[i] = static_cast<int>(k);

  // Collect adjacency first, then build sorted lists in one pass.
  std::vector<std::vector<EntityId>> adj(n);
  auto link = [&](std::size_t u, std::size_t v) {
    adj[u].push_back(static_cast<EntityId>(v));
    adj[v].push_back(static_cast<EntityId>(u));
  };
  for (std::size_t a = 0; a < c; ++a) {
    const std::uint64_t sa = start[a + 1] - start[a];
    // intra block: pairs i<j enumerated row by row
    std::vector<std::uint64_t> row_off(sa + 1, 0);
    for (std::uint64_t i = 0; i < sa; ++i) row_off[i + 1] = row_off[i] + (sa - 1 - i);
    detail::bernoulli_indices(row_off[sa], p.intra_p, edge_rng, [&](std::uint64_t k) {
      auto it = std::upper_bound(row_off.begin(), row_off.end(), k);
      const std::uint64_t i = static_cast<std::uint64_t>(it - row_off.begin()) - 1;
      const std::uint64_t j = i + 1 + (k - row_off[i]);
      link(start[a] + i, start[a] + j);
    });
    for (std::size_t b = a + 1; b < c; ++b) {
      const std::uint64_t sb = start[b + 1] - start[b];
      detail::bernoulli_indices(sa * sb, p.inter_p, edge_rng,
                                [&](std::uint64_t k) { link(start[a] + k / sb, start[b] + k % sb); });
    }
  }
  w.truth_graph = EntityGraph(n);
  for (std::size_t u = 0; u < n; ++u) {
    std::sort(adj[u].begin(), adj[u].end());
    for (auto v : adj[u])
      if (static_cast<std::size_t>(v) > u) w.truth_graph.set_edge(static_cast<EntityId>(u), v, 1.0, Provenance::ranked);
  }

  // Users: random walks with restart on isolated nodes, timestamps spaced
  // within the last 29 days.
  const std::int64_t span = 29LL * 86400;
  for (std::size_t u = 0; u < p.n_users; ++u) {
    UserEntitySequence seq;
    seq.user_id = static_cast<UserId>(u);
    std::int64_t ts = p.now - span + static_cast<std::int64_t>(walk_rng.below(86400));
    const std::int64_t step = std::max<std::int64_t>(1, (span - 86400) / static_cast<std::int64_t>(p.walk_len * p.walks_per_user + 1));
    for (std::size_t wk = 0; wk < p.walks_per_user; ++wk) {
      auto cur = static_cast<EntityId>(walk_rng.below(n));
      for (std::size_t s = 0; s < p.walk_len; ++s) {
        seq.events.push_back(Event{ts, cur});
        ts += 1 + static_cast<std::int64_t>(walk_rng.below(static_cast<std::uint64_t>(step)));
        const auto& nb = adj[static_cast<std::size_t>(cur)];
        cur = nb.empty() ? static_cast<EntityId>(walk_rng.below(n)) : nb[walk_rng.below(nb.size())];
      }
    }
    w.sequences.push_back(std::move(seq));
  }

  // Semantic vectors: unit community centroid plus isotropic noise.
  const std::size_t d = p.semantic_dim;
  EmbeddingTable centroids(c, d);
  for (auto& v : centroids.data()) v = sem_rng.normal();
  centroids.normalize_rows();
  w.semantic_vectors = EmbeddingTable(n, d);
  const double sd = p.semantic_noise / std::sqrt(static_cast<double>(d));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k)
      w.semantic_vectors(i, k) = centroids(static_cast<std::size_t>(w.communities[i]), k) + sd * sem_rng.normal();
  w.semantic_vectors.normalize_rows();
  return w;
}

inline World gen_world(std::size_t n_entities, std::size_t n_communities, double intra_p, double inter_p,
                       std::size_t n_users, std::size_t walk_len, std::uint64_t seed) {
  WorldParams p;
  p.n_entities = n_entities;
  p.n_communities = n_communities;
  p.intra_p = intra_p;
  p.inter_p = inter_p;
  p.n_users = n_users;
  p.walk_len = walk_len;
  p.seed = seed;
  return gen_world(p);
}

inline void write_world(const World& w, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_lexicon(w.lexicon, dir / "lexicon.tsv");
  write_edges(w.truth_graph, dir / "truth_edges.tsv");
  write_sequences(w.sequences, dir / "sequences.jsonl");
  write_embeddings(w.semantic_vectors, dir / "semantic.txt");
  auto out = egl::detail::open_out(dir / "communities.tsv");
  for (std::size_t i = 0; i < w.communities.size(); ++i) out << i << '\t' << w.communities[i] << '\n';
}

inline std::vector<int> read_communities(const std::filesystem::path& path, std::size_t n) {
  auto in = egl::detail::open_in(path);
  std::vector<int> out(n, -1);
  std::size_t id;
  int c;
  while (in >> id >> c) {
    if (id >= n) throw Error("community file references unknown entity");
    out[id] = c;
  }
  return out;
}

// Behavior logs rendered from a world's sequences: one log per event whose
// text mentions the entity among filler words.
inline std::vector<BehaviorLog> render_logs(const World& w, std::uint64_t seed) {
  static const char* pre[] = {"search", "watch", "buy", "visit", "about"};
  static const char* post[] = {"news", "tickets", "review", "price", "video", "today"};
  Rng rng(seed);
  std::vector<BehaviorLog> logs;
  for (const auto& s : w.sequences)
    for (const auto& e : s.events)
      logs.push_back({s.user_id, e.ts,
                      std::string(pre[rng.below(5)]) + " " + w.lexicon.at(e.entity).name + " " + post[rng.below(6)]});
  return logs;
}

// ---- edge split ----

inline DataSplit split_edges(const EntityGraph& truth, double test_frac, double train_neg_ratio, std::uint64_t seed) {
  if (!(test_frac > 0.0 && test_frac < 1.0)) throw Error("test_frac must lie in (0,1)");
  if (!(train_neg_ratio >= 1.0)) throw Error("train_neg_ratio must be >= 1");
  Rng rng(seed);
  auto edges = truth.canonical_edges();
  rng.shuffle(edges);
  const auto n_test = static_cast<std::size_t>(std::llround(test_frac * static_cast<double>(edges.size())));
  const std::size_t n_train = edges.size() - n_test;
  const auto n_train_neg = static_cast<std::size_t>(std::llround(train_neg_ratio * static_cast<double>(n_train)));
  const std::size_t needed = n_test + n_train_neg;

  const auto n = static_cast<std::uint64_t>(truth.n_entities());
  const std::uint64_t all_pairs = n * (n > 0 ? n - 1 : 0) / 2;
  const std::uint64_t non_edges = all_pairs - edges.size();
  if (needed > non_edges)
    throw Error("graph too dense: need " + std::to_string(needed) + " non-edges, only " + std::to_string(non_edges) +
                " exist");

  auto orient = [&](EntityId a, EntityId b, int label) {
    return rng.below(2) ? PairExample{a, b, label} : PairExample{b, a, label};
  };

  DataSplit split;
  for (std::size_t i = 0; i < edges.size(); ++i) {
    auto p = orient(edges[i].src, edges[i].dst, 1);
    (i < n_test ? split.test_pos : split.train_pos).push_back(p);
  }

  std::vector<std::pair<EntityId, EntityId>> negs;
  if (needed * 2 > non_edges) {
    for (EntityId u = 0; static_cast<std::uint64_t>(u) < n; ++u)
      for (EntityId v = u + 1; static_cast<std::uint64_t>(v) < n; ++v)
        if (!truth.has_edge(u, v)) negs.emplace_back(u, v);
    rng.shuffle(negs);
    negs.resize(needed);
  } else {
    std::set<std::pair<EntityId, EntityId>> seen;
    while (negs.size() < needed) {
      auto u = static_cast<EntityId>(rng.below(n));
      auto v = static_cast<EntityId>(rng.below(n));
      if (u == v) continue;
      if (u > v) std::swap(u, v);
      if (truth.has_edge(u, v) || !seen.emplace(u, v).second) continue;
      negs.emplace_back(u, v);
    }
  }
  for (std::size_t i = 0; i < negs.size(); ++i) {
    auto p = orient(negs[i].first, negs[i].second, 0);
    (i < n_test ? split.test_neg : split.train_neg).push_back(p);
  }

  split.observed_graph = truth;
  for (const auto& p : split.test_pos) split.observed_graph.remove_edge(p.src, p.dst);
  return split;
}

inline void write_pairs(const std::vector<PairExample>& pairs, const std::filesystem::path& path) {
  auto out = egl::detail::open_out(path);
  for (const auto& p : pairs) out << p.src << '\t' << p.dst << '\t' << p.label << '\n';
}

inline std::vector<PairExample> read_pairs(const std::filesystem::path& path, std::size_t n) {
  auto in = egl::detail::open_in(path);
  std::vector<PairExample> out;
  PairExample p;
  while (in >> p.src >> p.dst >> p.label) {
    if (p.src < 0 || p.dst < 0 || static_cast<std::size_t>(p.src) >= n || static_cast<std::size_t>(p.dst) >= n)
      throw Error("pair file references unknown entity");
    out.push_back(p);
  }
  return out;
}

inline void write_split(const DataSplit& s, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_pairs(s.train_pos, dir / "train_pos.tsv");
  write_pairs(s.train_neg, dir / "train_neg.tsv");
  write_pairs(s.test_pos, dir / "test_pos.tsv");
  write_pairs(s.test_neg, dir / "test_neg.tsv");
  write_edges(s.observed_graph, dir / "observed_edges.tsv");
}

inline DataSplit read_split(const std::filesystem::path& dir, const EntityLexicon& lex) {
  DataSplit s;
  s.train_pos = read_pairs(dir / "train_pos.tsv", lex.size());
  s.train_neg = read_pairs(dir / "train_neg.tsv", lex.size());
  s.test_pos = read_pairs(dir / "test_pos.tsv", lex.size());
  s.test_neg = read_pairs(dir / "test_neg.tsv", lex.size());
  s.observed_graph = read_edges(dir / "observed_edges.tsv", lex);
  return s;
}

// ---- oracles ----

// Exact BFS hop distances up to k, no breadth limit.
inline std::map<EntityId, int> oracle_khop(const EntityGraph& g, EntityId seed, int k) {
  if (seed < 0 || static_cast<std::size_t>(seed) >= g.n_entities()) throw Error("unknown seed entity " + std::to_string(seed));
  if (k < 0) throw Error("k must be >= 0");
  std::map<EntityId, int> dist{{seed, 0}};
  std::deque<EntityId> q{seed};
  while (!q.empty()) {
    auto u = q.front();
    q.pop_front();
    const int du = dist[u];
    if (du == k) continue;
    for (const auto& e : g.neighbors(u))
      if (dist.emplace(e.dst, du + 1).second) q.push_back(e.dst);
  }
  return dist;
}

struct RankedUser {
  UserId user_id;
  double score;
  bool operator==(const RankedUser&) const = default;
};

// Exhaustive scan: mean dot product against the query rows, sorted by score
// descending then user id ascending.
inline std::vector<RankedUser> oracle_topk_users(const std::vector<UserId>& user_ids, const EmbeddingTable& user_embeddings,
                                                 const EmbeddingTable& entity_embeddings,
                                                 const std::vector<EntityId>& query, std::size_t k) {
  if (query.empty()) throw Error("empty query");
  if (k < 1) throw Error("K must be >= 1");
  std::vector<RankedUser> all;
  for (std::size_t u = 0; u < user_ids.size(); ++u) {
    double s = 0.0;
    for (auto e : query) {
      double d = 0.0;
      for (std::size_t c = 0; c < user_embeddings.dim(); ++c)
        d += user_embeddings(u, c) * entity_embeddings(static_cast<std::size_t>(e), c);
      s += d;
    }
    all.push_back({user_ids[u], s / static_cast<double>(query.size())});
  }
  std::sort(all.begin(), all.end(), [](const RankedUser& a, const RankedUser& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.user_id < b.user_id;
  });
  if (all.size() > k) all.resize(k);
  return all;
}

}  // namespace egl::datagen
