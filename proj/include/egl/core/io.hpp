#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "egl/core/types.hpp"

namespace egl {

namespace detail {

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

template <typename T>
T parse_number(std::string_view s, std::string_view what) {
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw Error("cannot parse " + std::string(what) + " from '" + std::string(s) + "'");
  return v;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return in;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

inline void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace detail

// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Content fingerprint of a file (FNV-1a over its bytes, hex).
inline std::string file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::uint64_t h = 1469598103934665603ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) h = fnv1a(std::string_view(buf, static_cast<std::size_t>(in.gcount())), h);
  return hex64(h);
}

// Rounds a score to the 6-decimal grid used on disk.
inline double quantize_score(double s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", s);
  return std::strtod(buf, nullptr);
}

// ---- lexicon: `id \t name \t etype` ----

inline EntityLexicon parse_lexicon(std::istream& in) {
  EntityLexicon lex;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    detail::strip_cr(line);
    if (line.empty()) continue;
    auto f = detail::split(line, '\t');
    if (f.size() != 3) throw Error("lexicon line " + std::to_string(lineno) + ": expected 3 tab-separated fields");
    auto id = detail::parse_number<EntityId>(f[0], "entity id");
    if (static_cast<std::size_t>(id) != lex.size() || id < 0)
      throw Error("lexicon line " + std::to_string(lineno) + ": non-contiguous id " + std::to_string(id));
    if (lex.lookup(f[1]))
      throw Error("lexicon line " + std::to_string(lineno) + ": duplicate name '" + normalize_name(f[1]) + "'");
    lex.add(f[1], normalize_name(f[2]));
  }
  return lex;
}

inline EntityLexicon load_lexicon(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  return parse_lexicon(in);
}

inline void write_lexicon(const EntityLexicon& lex, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  for (const auto& e : lex.entities()) out << e.id << '\t' << e.name << '\t' << e.etype << '\n';
}

// ---- edges: `src \t dst \t score \t provenance`, src < dst ----

inline void write_edges(const EntityGraph& g, std::ostream& out) {
  char buf[32];
  for (const auto& e : g.canonical_edges()) {
    std::snprintf(buf, sizeof buf, "%.6f", e.score);
    out << e.src << '\t' << e.dst << '\t' << buf << '\t' << to_string(e.provenance) << '\n';
  }
}

inline void write_edges(const EntityGraph& g, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  write_edges(g, out);
}

inline EntityGraph parse_edges(std::istream& in, std::size_t n_entities) {
  EntityGraph g(n_entities);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    detail::strip_cr(line);
    if (line.empty()) continue;
    auto f = detail::split(line, '\t');
    if (f.size() != 4) throw Error("edge line " + std::to_string(lineno) + ": expected 4 tab-separated fields");
    auto src = detail::parse_number<EntityId>(f[0], "src");
    auto dst = detail::parse_number<EntityId>(f[1], "dst");
    auto score = std::strtod(std::string(f[2]).c_str(), nullptr);
    for (auto id : {src, dst})
      if (id < 0 || static_cast<std::size_t>(id) >= n_entities)
        throw Error("edge line " + std::to_string(lineno) + ": unknown entity id " + std::to_string(id));
    g.set_edge(src, dst, score, parse_provenance(f[3]));
  }
  return g;
}

inline EntityGraph read_edges(const std::filesystem::path& path, const EntityLexicon& lex) {
  auto in = detail::open_in(path);
  return parse_edges(in, lex.size());
}

// ---- sequences: JSON Lines {"user_id":int,"events":[[ts,entity_id],...]} ----

inline nlohmann::json to_json(const UserEntitySequence& s) {
  nlohmann::json ev = nlohmann::json::array();
  for (const auto& e : s.events) ev.push_back({e.ts, e.entity});
  return {{"user_id", s.user_id}, {"events", ev}};
}

inline void write_sequences(const std::vector<UserEntitySequence>& seqs, std::ostream& out) {
  for (const auto& s : seqs) out << to_json(s).dump() << '\n';
}

inline void write_sequences(const std::vector<UserEntitySequence>& seqs, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  write_sequences(seqs, out);
}

inline std::vector<UserEntitySequence> parse_sequences(std::istream& in, std::size_t n_entities) {
  std::vector<UserEntitySequence> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    detail::strip_cr(line);
    if (line.empty()) continue;
    UserEntitySequence s;
    try {
      auto j = nlohmann::json::parse(line);
      s.user_id = j.at("user_id").get<UserId>();
      for (const auto& ev : j.at("events")) s.events.push_back(Event{ev.at(0).get<std::int64_t>(), ev.at(1).get<EntityId>()});
    } catch (const nlohmann::json::exception& ex) {
      throw Error("sequence line " + std::to_string(lineno) + ": " + ex.what());
    }
    for (std::size_t i = 0; i < s.events.size(); ++i) {
      auto id = s.events[i].entity;
      if (id < 0 || static_cast<std::size_t>(id) >= n_entities)
        throw Error("sequence line " + std::to_string(lineno) + ": unknown entity id " + std::to_string(id));
      if (i > 0 && s.events[i].ts < s.events[i - 1].ts)
        throw Error("sequence line " + std::to_string(lineno) + ": events not sorted by timestamp");
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<UserEntitySequence> read_sequences(const std::filesystem::path& path, const EntityLexicon& lex) {
  auto in = detail::open_in(path);
  return parse_sequences(in, lex.size());
}

// ---- embeddings: `dim d` header then `entity_id v1 ... vd` ----

inline void write_embeddings(const EmbeddingTable& t, std::ostream& out) {
  out << "dim " << t.dim() << '\n';
  char buf[40];
  for (std::size_t r = 0; r < t.rows(); ++r) {
    out << r;
    for (std::size_t c = 0; c < t.dim(); ++c) {
      std::snprintf(buf, sizeof buf, " %.17g", t(r, c));
      out << buf;
    }
    out << '\n';
  }
}

inline void write_embeddings(const EmbeddingTable& t, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  write_embeddings(t, out);
}

// Rows absent from the file are reported through `present` (when given) and
// left at zero.
inline EmbeddingTable parse_embeddings(std::istream& in, std::size_t n_entities, std::vector<bool>* present = nullptr) {
  std::string line;
  if (!std::getline(in, line)) throw Error("embedding file is empty");
  detail::strip_cr(line);
  std::istringstream head(line);
  std::string tag;
  std::size_t dim = 0;
  if (!(head >> tag >> dim) || tag != "dim" || dim == 0) throw Error("embedding file: bad header '" + line + "'");
  EmbeddingTable t(n_entities, dim);
  std::vector<bool> seen(n_entities, false);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    detail::strip_cr(line);
    if (line.empty()) continue;
    std::istringstream ls(line);
    long long id = -1;
    if (!(ls >> id) || id < 0 || static_cast<std::size_t>(id) >= n_entities)
      throw Error("embedding line " + std::to_string(lineno) + ": unknown entity id");
    for (std::size_t c = 0; c < dim; ++c) {
      std::string tok;
      if (!(ls >> tok)) throw Error("embedding line " + std::to_string(lineno) + ": too few components");
      t(static_cast<std::size_t>(id), c) = std::strtod(tok.c_str(), nullptr);
    }
    std::string extra;
    if (ls >> extra) throw Error("embedding line " + std::to_string(lineno) + ": too many components");
    seen[static_cast<std::size_t>(id)] = true;
  }
  t.validate();
  if (present) *present = std::move(seen);
  return t;
}

inline EmbeddingTable read_embeddings(const std::filesystem::path& path, std::size_t n_entities,
                                      std::vector<bool>* present = nullptr) {
  auto in = detail::open_in(path);
  return parse_embeddings(in, n_entities, present);
}

}  // namespace egl
