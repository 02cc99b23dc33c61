#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace egl {

using EntityId = std::int32_t;
using UserId = std::int64_t;

// Every recoverable failure in the library surfaces as this exception type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string normalize_name(std::string_view raw) {
  std::size_t b = 0;
  std::size_t e = raw.size();
  while (b < e && std::isspace(static_cast<unsigned char>(raw[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(raw[e - 1]))) --e;
  std::string out(raw.substr(b, e - b));
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

struct Entity {
  EntityId id = 0;
  std::string name;
  std::string etype;

  bool operator==(const Entity&) const = default;
};

class EntityLexicon {
 public:
  EntityLexicon() = default;

  // Appends an entity; its id is the current size. Throws on duplicate name.
  EntityId add(std::string_view name, std::string_view etype) {
    auto norm = normalize_name(name);
    if (norm.empty()) throw Error("empty entity name");
    if (by_name_.count(norm)) throw Error("duplicate entity name '" + norm + "'");
    auto id = static_cast<EntityId>(entities_.size());
    by_name_.emplace(norm, id);
    entities_.push_back(Entity{id, std::move(norm), std::string(etype)});
    return id;
  }

  std::size_t size() const { return entities_.size(); }
  bool empty() const { return entities_.empty(); }
  bool contains(EntityId id) const { return id >= 0 && static_cast<std::size_t>(id) < entities_.size(); }

  const Entity& at(EntityId id) const {
    if (!contains(id)) throw Error("unknown entity id " + std::to_string(id));
    return entities_[static_cast<std::size_t>(id)];
  }

  std::optional<EntityId> lookup(std::string_view name) const {
    auto it = by_name_.find(normalize_name(name));
    if (it == by_name_.end()) return std::nullopt;
    return it->second;
  }

  const std::vector<Entity>& entities() const { return entities_; }

  bool operator==(const EntityLexicon& o) const { return entities_ == o.entities_; }

 private:
  std::vector<Entity> entities_;
  std::unordered_map<std::string, EntityId> by_name_;
};

struct Event {
  std::int64_t ts = 0;
  EntityId entity = 0;
  bool operator==(const Event&) const = default;
};

struct UserEntitySequence {
  UserId user_id = 0;
  std::vector<Event> events;

  bool operator==(const UserEntitySequence&) const = default;
};

// One raw user behavior (search query, visited page title, ...).
struct BehaviorLog {
  UserId user_id = 0;
  std::int64_t ts = 0;
  std::string text;

  bool operator==(const BehaviorLog&) const = default;
};

// Dense rows indexed by entity id, row-major storage.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::size_t rows, std::size_t dim) : rows_(rows), dim_(dim), data_(rows * dim, 0.0) {}

  std::size_t rows() const { return rows_; }
  std::size_t dim() const { return dim_; }

  double* row(std::size_t r) { return data_.data() + r * dim_; }
  const double* row(std::size_t r) const { return data_.data() + r * dim_; }
  std::vector<double> row_vec(std::size_t r) const { return {row(r), row(r) + dim_}; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * dim_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * dim_ + c]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  void normalize_rows() {
    for (std::size_t r = 0; r < rows_; ++r) {
      double* p = row(r);
      double n = 0.0;
      for (std::size_t c = 0; c < dim_; ++c) n += p[c] * p[c];
      n = std::sqrt(n);
      if (n > 0.0)
        for (std::size_t c = 0; c < dim_; ++c) p[c] /= n;
    }
  }

  void validate() const {
    if (data_.size() != rows_ * dim_) throw Error("embedding table storage size mismatch");
    for (double v : data_)
      if (!std::isfinite(v)) throw Error("embedding table contains non-finite value");
  }

  bool operator==(const EmbeddingTable&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> data_;
};

inline double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

inline double cosine(const double* a, const double* b, std::size_t n) {
  double na = std::sqrt(dot(a, a, n));
  double nb = std::sqrt(dot(b, b, n));
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b, n) / (na * nb);
}

// A directed (source, target) pair with a 0/1 relation label.
struct PairExample {
  EntityId src = 0;
  EntityId dst = 0;
  int label = 0;

  bool operator==(const PairExample&) const = default;
};

enum class Provenance : std::uint8_t { cooccurrence, semantic, ranked, feedback };

inline std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::cooccurrence: return "cooccurrence";
    case Provenance::semantic: return "semantic";
    case Provenance::ranked: return "ranked";
    case Provenance::feedback: return "feedback";
  }
  return "ranked";
}

inline Provenance parse_provenance(std::string_view s) {
  if (s == "cooccurrence") return Provenance::cooccurrence;
  if (s == "semantic") return Provenance::semantic;
  if (s == "ranked") return Provenance::ranked;
  if (s == "feedback") return Provenance::feedback;
  throw Error("unknown provenance '" + std::string(s) + "'");
}

struct ScoredEdge {
  EntityId src = 0;
  EntityId dst = 0;
  double score = 0.0;
  Provenance provenance = Provenance::ranked;

  bool operator==(const ScoredEdge&) const = default;
};

// Undirected scored graph. Each edge is kept in both endpoint lists with
// identical score and provenance; lists are sorted by dst.
class EntityGraph {
 public:
  EntityGraph() = default;
  explicit EntityGraph(std::size_t n) : adj_(n) {}

  std::size_t n_entities() const { return adj_.size(); }

  // Inserts or overwrites the undirected edge {u, v}.
  void set_edge(EntityId u, EntityId v, double score, Provenance p) {
    check_endpoint(u);
    check_endpoint(v);
    if (u == v) throw Error("self loop on entity " + std::to_string(u));
    if (!(score >= 0.0 && score <= 1.0)) throw Error("edge score out of [0,1]");
    upsert(u, v, score, p);
    upsert(v, u, score, p);
  }

  bool remove_edge(EntityId u, EntityId v) {
    check_endpoint(u);
    check_endpoint(v);
    return erase(u, v) && erase(v, u);
  }

  bool has_edge(EntityId u, EntityId v) const { return find(u, v) != nullptr; }

  const ScoredEdge* find(EntityId u, EntityId v) const {
    if (u < 0 || static_cast<std::size_t>(u) >= adj_.size()) return nullptr;
    const auto& list = adj_[static_cast<std::size_t>(u)];
    auto it = std::lower_bound(list.begin(), list.end(), v,
                               [](const ScoredEdge& e, EntityId d) { return e.dst < d; });
    if (it == list.end() || it->dst != v) return nullptr;
    return &*it;
  }

  const std::vector<ScoredEdge>& neighbors(EntityId u) const { return adj_.at(static_cast<std::size_t>(u)); }

  std::size_t degree(EntityId u) const { return neighbors(u).size(); }

  std::size_t n_edges() const {
    std::size_t s = 0;
    for (const auto& l : adj_) s += l.size();
    return s / 2;
  }

  // Each undirected edge once, src < dst, ordered by (src, dst).
  std::vector<ScoredEdge> canonical_edges() const {
    std::vector<ScoredEdge> out;
    for (const auto& list : adj_)
      for (const auto& e : list)
        if (e.src < e.dst) out.push_back(e);
    return out;
  }

  bool operator==(const EntityGraph&) const = default;

 private:
  void check_endpoint(EntityId u) const {
    if (u < 0 || static_cast<std::size_t>(u) >= adj_.size())
      throw Error("edge references unknown entity id " + std::to_string(u));
  }

  void upsert(EntityId u, EntityId v, double score, Provenance p) {
    auto& list = adj_[static_cast<std::size_t>(u)];
    auto it = std::lower_bound(list.begin(), list.end(), v,
                               [](const ScoredEdge& e, EntityId d) { return e.dst < d; });
    if (it != list.end() && it->dst == v) {
      it->score = score;
      it->provenance = p;
    } else {
      list.insert(it, ScoredEdge{u, v, score, p});
    }
  }

  bool erase(EntityId u, EntityId v) {
    auto& list = adj_[static_cast<std::size_t>(u)];
    auto it = std::lower_bound(list.begin(), list.end(), v,
                               [](const ScoredEdge& e, EntityId d) { return e.dst < d; });
    if (it == list.end() || it->dst != v) return false;
    list.erase(it);
    return true;
  }

  std::vector<std::vector<ScoredEdge>> adj_;
};

// Checks symmetric closure, sortedness, uniqueness and score range.
inline void validate(const EntityGraph& g) {
  const auto n = static_cast<EntityId>(g.n_entities());
  for (EntityId u = 0; u < n; ++u) {
    const auto& list = g.neighbors(u);
    for (std::size_t i = 0; i < list.size(); ++i) {
      const auto& e = list[i];
      if (e.src != u) throw Error("adjacency entry with wrong src at " + std::to_string(u));
      if (e.dst < 0 || e.dst >= n) throw Error("edge to unknown entity " + std::to_string(e.dst));
      if (e.dst == u) throw Error("self loop on " + std::to_string(u));
      if (!(e.score >= 0.0 && e.score <= 1.0)) throw Error("score out of range");
      if (i > 0 && list[i - 1].dst >= e.dst) throw Error("adjacency not strictly sorted at " + std::to_string(u));
      const auto* back = g.find(e.dst, u);
      if (!back || back->score != e.score || back->provenance != e.provenance)
        throw Error("asymmetric edge " + std::to_string(u) + "-" + std::to_string(e.dst));
    }
  }
}

}  // namespace egl
