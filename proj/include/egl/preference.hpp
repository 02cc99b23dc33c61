#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "egl/core/types.hpp"
#include "egl/datagen.hpp"

namespace egl::preference {

using datagen::RankedUser;

// r_u: mean of the sequence's entity embeddings.
inline std::vector<double> build_user_embedding(const UserEntitySequence& seq, const EmbeddingTable& he) {
  if (seq.events.empty()) throw Error("user " + std::to_string(seq.user_id) + " has an empty sequence");
  std::vector<double> r(he.dim(), 0.0);
  for (const auto& ev : seq.events) {
    if (ev.entity < 0 || static_cast<std::size_t>(ev.entity) >= he.rows())
      throw Error("sequence references unknown entity " + std::to_string(ev.entity));
    const double* h = he.row(static_cast<std::size_t>(ev.entity));
    for (std::size_t k = 0; k < r.size(); ++k) r[k] += h[k];
  }
  for (auto& x : r) x /= static_cast<double>(seq.events.size());
  return r;
}

inline double preference_score(const std::vector<double>& r, const double* h, std::size_t dim) {
  if (r.size() != dim) throw Error("user and entity embeddings differ in dimension");
  return dot(r.data(), h, dim);
}

struct PreferenceIndex {
  std::vector<UserId> user_ids;
  EmbeddingTable users;
  EmbeddingTable entities;

  bool operator==(const PreferenceIndex& o) const {
    return user_ids == o.user_ids && users.rows() == o.users.rows() && users.dim() == o.users.dim() &&
           users.data() == o.users.data() && entities.rows() == o.entities.rows() &&
           entities.dim() == o.entities.dim() && entities.data() == o.entities.data();
  }
};

// Users with empty sequences are left out and reported through `skipped`.
inline PreferenceIndex build_index(const std::vector<UserEntitySequence>& seqs, const EmbeddingTable& he,
                                   std::vector<std::string>* skipped = nullptr) {
  PreferenceIndex idx;
  idx.entities = he;
  std::vector<std::vector<double>> rows;
  for (const auto& s : seqs) {
    if (s.events.empty()) {
      if (skipped) skipped->push_back("user " + std::to_string(s.user_id) + " skipped: empty sequence");
      continue;
    }
    idx.user_ids.push_back(s.user_id);
    rows.push_back(build_user_embedding(s, he));
  }
  idx.users = EmbeddingTable(rows.size(), he.dim());
  for (std::size_t u = 0; u < rows.size(); ++u) std::copy(rows[u].begin(), rows[u].end(), idx.users.row(u));
  return idx;
}

// Top-K users by mean preference over the query entities; ties by ascending
// user id. Accumulation order matches the exhaustive oracle.
inline std::vector<RankedUser> target_users(const PreferenceIndex& idx, const std::vector<EntityId>& query,
                                            std::size_t k) {
  if (query.empty()) throw Error("query entity set is empty");
  if (k < 1) throw Error("K must be >= 1");
  for (EntityId e : query)
    if (e < 0 || static_cast<std::size_t>(e) >= idx.entities.rows()) throw Error("unknown entity " + std::to_string(e));
  const std::size_t d = idx.users.dim();
  std::vector<RankedUser> all(idx.user_ids.size());
  for (std::size_t u = 0; u < all.size(); ++u) {
    const double* r = idx.users.row(u);
    double s = 0.0;
    for (EntityId e : query) {
      const double* h = idx.entities.row(static_cast<std::size_t>(e));
      double dd = 0.0;
      for (std::size_t c = 0; c < d; ++c) dd += r[c] * h[c];
      s += dd;
    }
    all[u] = {idx.user_ids[u], s / static_cast<double>(query.size())};
  }
  auto better = [](const RankedUser& a, const RankedUser& b) {
    return a.score != b.score ? a.score > b.score : a.user_id < b.user_id;
  };
  const std::size_t take = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(), better);
  all.resize(take);
  return all;
}

// ---- index file ----
// Layout (little-endian): "EGLPIDX\0", u32 version = 1, u64 n_users,
// u64 n_entities, u64 dim, n_users i64 user ids, n_users*dim f64 user rows,
// n_entities*dim f64 entity rows.

inline constexpr char kIndexMagic[8] = {'E', 'G', 'L', 'P', 'I', 'D', 'X', '\0'};
inline constexpr std::uint32_t kIndexVersion = 1;

inline void save_index(const PreferenceIndex& idx, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream o(path, std::ios::binary);
  if (!o) throw Error("cannot write " + path.string());
  auto put = [&](auto v) { o.write(reinterpret_cast<const char*>(&v), sizeof v); };
  o.write(kIndexMagic, 8);
  put(kIndexVersion);
  put(static_cast<std::uint64_t>(idx.user_ids.size()));
  put(static_cast<std::uint64_t>(idx.entities.rows()));
  put(static_cast<std::uint64_t>(idx.entities.dim()));
  for (UserId u : idx.user_ids) put(static_cast<std::int64_t>(u));
  o.write(reinterpret_cast<const char*>(idx.users.data().data()), static_cast<std::streamsize>(idx.users.data().size() * 8));
  o.write(reinterpret_cast<const char*>(idx.entities.data().data()),
          static_cast<std::streamsize>(idx.entities.data().size() * 8));
}

inline PreferenceIndex load_index(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  auto get = [&](auto& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw Error("truncated index file");
  };
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kIndexMagic, 8) != 0) throw Error(path.string() + " is not a preference index");
  std::uint32_t version = 0;
  get(version);
  if (version != kIndexVersion) throw Error("unsupported index version " + std::to_string(version));
  std::uint64_t nu = 0, ne = 0, d = 0;
  get(nu);
  get(ne);
  get(d);
  if (nu > (1ULL << 32) || ne > (1ULL << 32) || d > (1ULL << 20)) throw Error("corrupt index header");
  PreferenceIndex idx;
  idx.user_ids.resize(nu);
  for (auto& u : idx.user_ids) {
    std::int64_t v = 0;
    get(v);
    u = v;
  }
  idx.users = EmbeddingTable(nu, d);
  idx.entities = EmbeddingTable(ne, d);
  for (auto* t : {&idx.users, &idx.entities}) {
    in.read(reinterpret_cast<char*>(t->data().data()), static_cast<std::streamsize>(t->data().size() * 8));
    if (!in) throw Error("truncated index file");
  }
  return idx;
}

}  // namespace egl::preference
