#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "egl/core/io.hpp"
#include "egl/graphstore.hpp"
#include "egl/preference.hpp"
#include "egl/service/pipeline.hpp"

// After Eigen: <resolv.h> defines a `_res` macro that breaks Eigen headers.
#include <httplib.h>

namespace egl::service {

// Everything one pipeline run produced, loaded read-only.
struct ServiceState {
  EntityLexicon lexicon;
  graphstore::StoredGraph store;
  preference::PreferenceIndex index;
  json manifest;
};

// Loads out/{world/lexicon.tsv, store, index.bin, manifest.json} and checks
// the store and index against the manifest's artifact hashes.
inline std::shared_ptr<const ServiceState> load_state(const fs::path& dir) {
  auto st = std::make_shared<ServiceState>();
  {
    auto in = detail::open_in(dir / "manifest.json");
    try {
      st->manifest = json::parse(in);
    } catch (const json::exception& e) {
      throw Error("corrupt manifest: " + std::string(e.what()));
    }
  }
  const auto& art = st->manifest.at("artifacts");
  if (art.at("store").get<std::string>() != file_hash(dir / "store" / "edges.tsv"))
    throw Error("store does not belong to this manifest");
  if (art.at("index").get<std::string>() != file_hash(dir / "index.bin"))
    throw Error("index does not belong to this manifest");
  st->lexicon = load_lexicon(dir / "world" / "lexicon.tsv");
  st->store = graphstore::load_store(dir / "store");
  st->index = preference::load_index(dir / "index.bin");
  if (st->store.graph.n_entities() != st->lexicon.size() || st->index.entities.rows() != st->lexicon.size())
    throw Error("store, index and lexicon disagree on entity count");
  return st;
}

struct Response {
  int status = 200;
  std::string body;

  json parsed() const { return body.empty() ? json() : json::parse(body); }
};

inline Response error_response(int status, const std::string& code, const std::string& message) {
  return {status, json{{"code", code}, {"message", message}}.dump()};
}

inline Response ok(const json& j) { return {200, j.dump()}; }

using Params = std::map<std::string, std::string>;

// ---- ranking used by /entities/search ----

inline std::vector<Entity> search_entities(const EntityLexicon& lex, const std::string& q, std::size_t limit) {
  const auto needle = normalize_name(q);
  struct Hit {
    bool prefix;
    std::size_t len;
    EntityId id;
  };
  std::vector<Hit> hits;
  for (const auto& e : lex.entities()) {
    const auto pos = e.name.find(needle);
    if (pos != std::string::npos) hits.push_back({pos == 0, e.name.size(), e.id});
  }
  std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) {
    if (a.prefix != b.prefix) return a.prefix;
    if (a.len != b.len) return a.len < b.len;
    return a.id < b.id;
  });
  if (hits.size() > limit) hits.resize(limit);
  std::vector<Entity> out;
  for (const auto& h : hits) out.push_back(lex.at(h.id));
  return out;
}

inline json entity_json(const Entity& e) { return {{"id", e.id}, {"name", e.name}, {"etype", e.etype}}; }

inline json expansion_json(const graphstore::ExpansionResult& r, const EntityLexicon& lex) {
  json nodes = json::array(), edges = json::array();
  for (const auto& n : r.nodes) {
    const auto& e = lex.at(n.id);
    nodes.push_back({{"id", n.id},
                     {"name", e.name},
                     {"etype", e.etype},
                     {"hop", n.hop},
                     {"parent", n.parent < 0 ? json(nullptr) : json(n.parent)}});
  }
  for (const auto& e : r.edges)
    edges.push_back({{"src", e.src}, {"dst", e.dst}, {"score", e.score}, {"provenance", std::string(to_string(e.provenance))}});
  return {{"nodes", nodes}, {"edges", edges}};
}

inline std::optional<long long> parse_int(const std::string& s) {
  long long v = 0;
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end || s.empty()) return std::nullopt;
  return v;
}

// Request handling independent of the HTTP transport. State is an immutable
// snapshot swapped whole on reload; feedback appends go through one mutex.
class Api {
 public:
  explicit Api(fs::path dir) : dir_(std::move(dir)) {
    for (auto [a, b] : read_feedback(ledger_path())) ledger_.insert(canonical(a, b));
    if (fs::exists(dir_ / "manifest.json")) reload();
  }

  // Loads a fresh state and switches to it; the old one stays live on failure.
  void reload() {
    auto next = load_state(dir_);
    std::lock_guard lk(state_mu_);
    state_ = std::move(next);
  }

  std::shared_ptr<const ServiceState> state() const {
    std::lock_guard lk(state_mu_);
    return state_;
  }

  fs::path ledger_path() const { return dir_ / "feedback.tsv"; }

  std::size_t ledger_size() const {
    std::lock_guard lk(fb_mu_);
    return ledger_.size();
  }

  Response handle(const std::string& method, const std::string& path, const Params& q, const std::string& body) {
    try {
      if (method == "GET" && path == "/v1/entities/search") return search(q);
      if (method == "GET" && path == "/v1/graph/expand") return expand(q);
      if (method == "POST" && path == "/v1/targeting/export") return export_users(body);
      if (method == "POST" && path == "/v1/feedback") return feedback(body);
      if (method == "GET" && path == "/v1/metrics") return metrics(q);
      return error_response(404, "not_found", "no route for " + method + " " + path);
    } catch (const json::exception& e) {
      return error_response(400, "bad_request", e.what());
    } catch (const std::exception& e) {
      return error_response(500, "internal", e.what());
    }
  }

 private:
  static std::pair<EntityId, EntityId> canonical(EntityId a, EntityId b) { return {std::min(a, b), std::max(a, b)}; }

  std::shared_ptr<const ServiceState> need_state() const {
    auto st = state();
    if (!st) throw NotReady();
    return st;
  }

  struct NotReady {};

  template <class F>
  Response with_state(F&& f) const {
    try {
      return f(*need_state());
    } catch (const NotReady&) {
      return error_response(503, "not_built", "no pipeline build loaded yet");
    }
  }

  Response search(const Params& q) const {
    return with_state([&](const ServiceState& st) {
      auto it = q.find("q");
      if (it == q.end() || normalize_name(it->second).empty()) return error_response(400, "bad_request", "q must be non-empty");
      std::size_t limit = 10;
      if (auto l = q.find("limit"); l != q.end()) {
        auto v = parse_int(l->second);
        if (!v || *v < 1) return error_response(400, "bad_request", "limit must be a positive integer");
        limit = static_cast<std::size_t>(*v);
      }
      json out = json::array();
      for (const auto& e : search_entities(st.lexicon, it->second, limit)) out.push_back(entity_json(e));
      return ok(out);
    });
  }

  Response expand(const Params& q) const {
    return with_state([&](const ServiceState& st) {
      auto id_it = q.find("entity_id");
      if (id_it == q.end()) return error_response(400, "bad_request", "entity_id is required");
      auto id = parse_int(id_it->second);
      if (!id) return error_response(400, "bad_request", "entity_id must be an integer");
      long long hops = 2, cap = 20;
      if (auto h = q.find("hops"); h != q.end()) {
        auto v = parse_int(h->second);
        if (!v) return error_response(400, "bad_request", "hops must be an integer");
        hops = *v;
      }
      if (auto c = q.find("max_per_hop"); c != q.end()) {
        auto v = parse_int(c->second);
        if (!v || *v < 0) return error_response(400, "bad_request", "max_per_hop must be a non-negative integer");
        cap = *v;
      }
      if (hops < 0) return error_response(400, "bad_request", "hops must be >= 0");
      if (hops > 1000) return error_response(400, "bad_request", "hops must be <= 1000");
      if (*id < 0 || *id > INT32_MAX || !st.lexicon.contains(static_cast<EntityId>(*id)))
        return error_response(404, "unknown_entity", "unknown entity " + id_it->second);
      auto r = graphstore::expand(st.store.graph, {static_cast<EntityId>(*id)}, static_cast<int>(hops),
                                  static_cast<std::size_t>(cap));
      return ok(expansion_json(r, st.lexicon));
    });
  }

  Response export_users(const std::string& body) const {
    return with_state([&](const ServiceState& st) {
      const auto j = json::parse(body);
      if (!j.is_object() || !j.contains("entity_ids") || !j["entity_ids"].is_array())
        return error_response(400, "bad_request", "entity_ids must be an array");
      std::vector<EntityId> ids;
      for (const auto& v : j["entity_ids"]) {
        if (!v.is_number_integer()) return error_response(400, "bad_request", "entity_ids must be integers");
        const auto id = v.get<long long>();
        if (id < 0 || id > INT32_MAX || !st.lexicon.contains(static_cast<EntityId>(id)))
          return error_response(404, "unknown_entity", "unknown entity " + std::to_string(id));
        ids.push_back(static_cast<EntityId>(id));
      }
      if (ids.empty()) return error_response(400, "bad_request", "entity_ids must be non-empty");
      long long k = 100;
      if (j.contains("k")) {
        if (!j["k"].is_number_integer()) return error_response(400, "bad_request", "k must be an integer");
        k = j["k"].get<long long>();
      }
      if (k < 1) return error_response(400, "bad_request", "k must be >= 1");
      json users = json::array();
      for (const auto& u : preference::target_users(st.index, ids, static_cast<std::size_t>(k)))
        users.push_back({{"user_id", u.user_id}, {"score", u.score}});
      const auto n = users.size();
      return ok({{"users", std::move(users)}, {"count", n}});
    });
  }

  Response feedback(const std::string& body) {
    return with_state([&](const ServiceState& st) {
      const auto j = json::parse(body);
      if (!j.is_object() || !j.contains("src") || !j.contains("dst") || !j["src"].is_number_integer() ||
          !j["dst"].is_number_integer())
        return error_response(400, "bad_request", "src and dst must be integers");
      const auto a = j["src"].get<long long>(), b = j["dst"].get<long long>();
      for (auto id : {a, b})
        if (id < 0 || id > INT32_MAX || !st.lexicon.contains(static_cast<EntityId>(id)))
          return error_response(404, "unknown_entity", "unknown entity " + std::to_string(id));
      if (a == b) return error_response(400, "bad_request", "src and dst must differ");
      const auto key = canonical(static_cast<EntityId>(a), static_cast<EntityId>(b));
      std::lock_guard lk(fb_mu_);
      if (ledger_.insert(key).second) {
        std::ofstream out(ledger_path(), std::ios::app);
        if (!(out << key.first << '\t' << key.second << '\n') || !out.flush())
          throw Error("cannot append to feedback ledger");
      }
      return Response{204, ""};
    });
  }

  Response metrics(const Params& q) const {
    return with_state([&](const ServiceState& st) {
      const auto& m = st.manifest.at("metrics");
      json out = {{"auc", m.at("auc")},
                  {"acc", m.at("acc")},
                  {"cors", m.at("cors")},
                  {"aeec", m.at("aeec")},
                  {"acc_variance", m.at("acc_variance")},
                  {"built_at", st.manifest.at("built_at")}};
      if (auto it = q.find("entity_id"); it != q.end()) {
        auto id = parse_int(it->second);
        if (!id) return error_response(400, "bad_request", "entity_id must be an integer");
        if (*id < 0 || *id > INT32_MAX || !st.lexicon.contains(static_cast<EntityId>(*id)))
          return error_response(404, "unknown_entity", "unknown entity " + it->second);
        const auto e = static_cast<std::size_t>(*id);
        double mean = 0.0;
        const auto& idx = st.index;
        for (std::size_t u = 0; u < idx.user_ids.size(); ++u) mean += dot(idx.users.row(u), idx.entities.row(e), idx.users.dim());
        if (!idx.user_ids.empty()) mean /= static_cast<double>(idx.user_ids.size());
        out["entity"] = {{"id", *id},
                         {"degree", st.store.graph.neighbors(static_cast<EntityId>(*id)).size()},
                         {"mean_preference", mean},
                         {"note", "stand-in: store degree and mean user preference score"}};
      }
      return ok(out);
    });
  }

  fs::path dir_;
  mutable std::mutex state_mu_;
  std::shared_ptr<const ServiceState> state_;
  mutable std::mutex fb_mu_;
  std::set<std::pair<EntityId, EntityId>> ledger_;
};

// ---- HTTP transport ----

inline void add_cors(httplib::Response& res) {
  res.set_header("Access-Control-Allow-Origin", "*");
  res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
  res.set_header("Access-Control-Allow-Headers", "Content-Type");
}

inline void mount(httplib::Server& srv, Api& api) {
  srv.set_tcp_nodelay(true);
  auto route = [&api](const httplib::Request& req, httplib::Response& res) {
    Params q;
    for (const auto& [k, v] : req.params) q.emplace(k, v);
    auto r = api.handle(req.method, req.path, q, req.body);
    res.status = r.status;
    if (r.status != 204) res.set_content(r.body, "application/json");
    add_cors(res);
  };
  srv.Get(R"(/v1/.*)", route);
  srv.Post(R"(/v1/.*)", route);
  srv.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.status = 204;
    add_cors(res);
  });
}

}  // namespace egl::service
