#pragma once

// Stage one: co-occurrence embeddings by skip-gram with negative sampling,
// semantic embeddings from a pluggable provider, and the candidate graph.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "egl/core/config.hpp"
#include "egl/core/io.hpp"
#include "egl/core/rng.hpp"
#include "egl/core/types.hpp"

namespace egl::candgen {

struct SgnsConfig {
  std::size_t dim = 64;
  std::size_t window = 5;
  std::size_t k_neg = 5;
  std::size_t epochs = 5;
  double lr = 0.025;
  double unigram_power = 0.75;

  void validate() const {
    if (dim < 1) throw Error("sgns dim must be >= 1");
    if (window < 1) throw Error("sgns window must be >= 1");
    if (k_neg < 1) throw Error("sgns k_neg must be >= 1");
    if (!(lr > 0.0)) throw Error("sgns lr must be > 0");
  }

  static SgnsConfig from_config(const RunConfig& c) {
    SgnsConfig s;
    s.dim = c.size("dim");
    s.window = c.size("window");
    s.k_neg = c.size("kneg");
    s.epochs = c.size("sgns_epochs");
    s.lr = c.num("sgns_lr");
    s.unigram_power = c.num("unigram_power");
    return s;
  }
};

// -log(sigmoid(x)), stable for large |x|.
inline double neg_log_sigmoid(double x) { return x >= 0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x)); }

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct SgnsGrad {
  std::vector<double> w;
  std::vector<double> c;
  std::vector<std::vector<double>> neg;
};

// l = -log s(w.c) - sum_j log s(-w.c_j); optionally fills the exact gradient.
inline double sgns_pair_loss(const std::vector<double>& w, const std::vector<double>& c,
                             const std::vector<std::vector<double>>& negs, SgnsGrad* grad = nullptr) {
  const std::size_t d = w.size();
  if (c.size() != d) throw Error("sgns_pair_loss: context dimension mismatch");
  for (const auto& n : negs)
    if (n.size() != d) throw Error("sgns_pair_loss: negative dimension mismatch");
  const double pos = dot(w.data(), c.data(), d);
  double loss = neg_log_sigmoid(pos);
  if (grad) {
    grad->w.assign(d, 0.0);
    const double gp = sigmoid(pos) - 1.0;
    grad->c.resize(d);
    for (std::size_t i = 0; i < d; ++i) {
      grad->w[i] += gp * c[i];
      grad->c[i] = gp * w[i];
    }
    grad->neg.assign(negs.size(), std::vector<double>(d));
  }
  for (std::size_t j = 0; j < negs.size(); ++j) {
    const double x = dot(w.data(), negs[j].data(), d);
    loss += neg_log_sigmoid(-x);
    if (grad) {
      const double gn = sigmoid(x);
      for (std::size_t i = 0; i < d; ++i) {
        grad->w[i] += gn * negs[j][i];
        grad->neg[j][i] = gn * w[i];
      }
    }
  }
  return loss;
}

// Draws ids proportional to count^power.
class UnigramSampler {
 public:
  UnigramSampler(const std::vector<std::uint64_t>& counts, double power) {
    cdf_.resize(counts.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      acc += counts[i] ? std::pow(static_cast<double>(counts[i]), power) : 0.0;
      cdf_[i] = acc;
    }
    total_ = acc;
  }
  bool empty() const { return !(total_ > 0.0); }
  EntityId draw(Rng& rng) const {
    const double u = rng.uniform() * total_;
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    if (it == cdf_.end()) --it;
    return static_cast<EntityId>(it - cdf_.begin());
  }

 private:
  std::vector<double> cdf_;
  double total_ = 0.0;
};

// Single-threaded SGD with linearly decaying rate. Input vectors start
// uniform in [-0.5/d, 0.5/d], context vectors at zero. Returns input plus
// context vector per entity; entities that never occur keep their
// initialization.
inline EmbeddingTable train_sgns(const std::vector<UserEntitySequence>& seqs, const EntityLexicon& lex,
                                 const SgnsConfig& cfg, std::uint64_t seed, std::vector<double>* epoch_loss = nullptr) {
  cfg.validate();
  if (seqs.empty()) throw Error("train_sgns: no sequences");
  const std::size_t n = lex.size(), d = cfg.dim;
  Rng rng(seed);
  EmbeddingTable w(n, d), c(n, d);
  for (auto& v : w.data()) v = (rng.uniform() - 0.5) / static_cast<double>(d);

  std::vector<std::uint64_t> counts(n, 0);
  std::uint64_t total_pairs = 0;
  for (const auto& s : seqs) {
    for (const auto& e : s.events) {
      if (!lex.contains(e.entity)) throw Error("train_sgns: unknown entity id " + std::to_string(e.entity));
      ++counts[static_cast<std::size_t>(e.entity)];
    }
    const std::size_t L = s.events.size();
    for (std::size_t i = 0; i < L; ++i)
      total_pairs += std::min(L - 1, i + cfg.window) - (i >= cfg.window ? i - cfg.window : 0);
  }
  const UnigramSampler sampler(counts, cfg.unigram_power);
  if (total_pairs == 0 || cfg.epochs == 0) return w;

  const double steps = static_cast<double>(total_pairs * cfg.epochs);
  std::uint64_t step = 0;
  std::vector<double> gw(d);
  for (std::size_t ep = 0; ep < cfg.epochs; ++ep) {
    double ep_loss = 0.0;
    for (const auto& s : seqs) {
      const std::size_t L = s.events.size();
      for (std::size_t i = 0; i < L; ++i) {
        const auto wi = static_cast<std::size_t>(s.events[i].entity);
        const std::size_t lo = i >= cfg.window ? i - cfg.window : 0, hi = std::min(L - 1, i + cfg.window);
        for (std::size_t j = lo; j <= hi; ++j) {
          if (j == i) continue;
          const double lr = std::max(cfg.lr * 1e-4, cfg.lr * (1.0 - static_cast<double>(step++) / steps));
          double* wv = w.row(wi);
          std::fill(gw.begin(), gw.end(), 0.0);
          auto update = [&](std::size_t ctx, double label) {
            double* cv = c.row(ctx);
            const double x = dot(wv, cv, d);
            ep_loss += label > 0 ? neg_log_sigmoid(x) : neg_log_sigmoid(-x);
            const double g = (sigmoid(x) - label) * lr;
            for (std::size_t k = 0; k < d; ++k) {
              gw[k] += g * cv[k];
              cv[k] -= g * wv[k];
            }
          };
          const auto ci = static_cast<std::size_t>(s.events[j].entity);
          update(ci, 1.0);
          for (std::size_t k = 0; k < cfg.k_neg; ++k) {
            const auto neg = static_cast<std::size_t>(sampler.draw(rng));
            if (neg == ci) continue;
            update(neg, 0.0);
          }
          for (std::size_t k = 0; k < d; ++k) wv[k] -= gw[k];
        }
      }
    }
    if (epoch_loss) epoch_loss->push_back(ep_loss / static_cast<double>(total_pairs));
  }
  for (std::size_t i = 0; i < w.data().size(); ++i) w.data()[i] += c.data()[i];
  w.validate();
  return w;
}

enum class SemanticMode { file, hash };

struct SemanticProvider {
  SemanticMode mode = SemanticMode::hash;
  std::filesystem::path file;
  std::size_t buckets = 256;
  std::size_t ngram = 3;

  static SemanticProvider from_config(const RunConfig& c) {
    SemanticProvider p;
    const auto m = c.str("semantic_mode");
    if (m == "file") {
      p.mode = SemanticMode::file;
    } else if (m == "hash") {
      p.mode = SemanticMode::hash;
    } else {
      throw Error("semantic_mode must be file or hash, got '" + m + "'");
    }
    p.file = c.str("semantic_file");
    p.buckets = c.size("semantic_buckets");
    p.ngram = c.size("semantic_ngram");
    return p;
  }
};

// Character n-grams of "#name#"; names shorter than n yield the whole padded string.
inline std::vector<std::string> char_ngrams(std::string_view name, std::size_t n) {
  const std::string padded = "#" + std::string(name) + "#";
  std::vector<std::string> out;
  if (padded.size() <= n) {
    out.push_back(padded);
    return out;
  }
  for (std::size_t i = 0; i + n <= padded.size(); ++i) out.push_back(padded.substr(i, n));
  return out;
}

inline std::vector<double> hash_embed(std::string_view name, std::size_t buckets, std::size_t n) {
  std::vector<double> v(buckets, 0.0);
  for (const auto& g : char_ngrams(name, n)) v[fnv1a(g) % buckets] += 1.0;
  double norm = std::sqrt(dot(v.data(), v.data(), buckets));
  for (auto& x : v) x /= norm;
  return v;
}

inline EmbeddingTable semantic_embed(const EntityLexicon& lex, const SemanticProvider& p) {
  if (p.mode == SemanticMode::hash) {
    if (p.buckets < 1 || p.ngram < 1) throw Error("hash provider needs buckets >= 1 and ngram >= 1");
    EmbeddingTable t(lex.size(), p.buckets);
    for (const auto& e : lex.entities()) {
      auto v = hash_embed(e.name, p.buckets, p.ngram);
      std::copy(v.begin(), v.end(), t.row(static_cast<std::size_t>(e.id)));
    }
    return t;
  }
  if (p.file.empty()) throw Error("file semantic provider needs a file");
  std::vector<bool> present;
  auto t = read_embeddings(p.file, lex.size(), &present);
  std::string missing;
  std::size_t n_missing = 0;
  for (std::size_t i = 0; i < present.size(); ++i)
    if (!present[i]) {
      if (n_missing++ < 20) missing += (missing.empty() ? "" : ", ") + lex.at(static_cast<EntityId>(i)).name;
    }
  if (n_missing)
    throw Error("semantic file lacks " + std::to_string(n_missing) + " entities: " + missing + (n_missing > 20 ? ", ..." : ""));
  t.normalize_rows();
  return t;
}

enum class CandidateMode { union_, intersection };

inline CandidateMode parse_candidate_mode(const std::string& s) {
  if (s == "union") return CandidateMode::union_;
  if (s == "intersection") return CandidateMode::intersection;
  throw Error("candidate_mode must be union or intersection, got '" + s + "'");
}

struct Neighbor {
  EntityId id;
  double sim;
};

// Exact per-row top-k by cosine (descending, ties by ascending id), keeping
// only sim >= min_sim.
inline std::vector<std::vector<Neighbor>> topk_cosine(const EmbeddingTable& t, std::size_t k, double min_sim) {
  const std::size_t n = t.rows(), d = t.dim();
  std::vector<double> norm(n);
  for (std::size_t i = 0; i < n; ++i) norm[i] = std::sqrt(dot(t.row(i), t.row(i), d));
  std::vector<std::vector<Neighbor>> out(n);
  std::vector<Neighbor> buf;
  auto better = [](const Neighbor& a, const Neighbor& b) { return a.sim != b.sim ? a.sim > b.sim : a.id < b.id; };
  for (std::size_t u = 0; u < n; ++u) {
    buf.clear();
    for (std::size_t v = 0; v < n; ++v) {
      if (v == u) continue;
      const double s = (norm[u] == 0.0 || norm[v] == 0.0) ? 0.0 : dot(t.row(u), t.row(v), d) / (norm[u] * norm[v]);
      if (s >= min_sim) buf.push_back({static_cast<EntityId>(v), s});
    }
    const std::size_t keep = std::min(k, buf.size());
    std::partial_sort(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(keep), buf.end(), better);
    out[u].assign(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(keep));
  }
  return out;
}

// Union (or intersection) of the two per-source neighbor lists, symmetrized.
// Edge score is the larger cosine among contributing sources, floored at 0;
// provenance names that source (co-occurrence on ties).
inline EntityGraph generate_candidates(const EmbeddingTable* e_co, const EmbeddingTable* e_se, std::size_t top_k,
                                       double min_sim, CandidateMode mode = CandidateMode::union_) {
  if (!e_co && !e_se) throw Error("generate_candidates: no embedding source");
  if (e_co && e_se && e_co->rows() != e_se->rows()) throw Error("generate_candidates: tables cover different lexicons");
  const std::size_t n = e_co ? e_co->rows() : e_se->rows();
  std::vector<std::vector<Neighbor>> co, se;
  if (e_co) co = topk_cosine(*e_co, top_k, min_sim);
  if (e_se) se = topk_cosine(*e_se, top_k, min_sim);

  // best[(u,v)] over both directions, per source; index 0 co, 1 se.
  std::map<std::pair<EntityId, EntityId>, std::array<double, 2>> best;
  const double none = -kInf;
  auto add = [&](const std::vector<std::vector<Neighbor>>& lists, int src) {
    for (std::size_t u = 0; u < lists.size(); ++u)
      for (const auto& nb : lists[u]) {
        const auto a = static_cast<EntityId>(u);
        auto [it, fresh] = best.try_emplace({std::min(a, nb.id), std::max(a, nb.id)}, std::array<double, 2>{none, none});
        it->second[static_cast<std::size_t>(src)] = std::max(it->second[static_cast<std::size_t>(src)], nb.sim);
      }
  };
  add(co, 0);
  add(se, 1);

  EntityGraph g(n);
  for (const auto& [key, s] : best) {
    const bool has_co = s[0] != none, has_se = s[1] != none;
    if (mode == CandidateMode::intersection && e_co && e_se && !(has_co && has_se)) continue;
    const bool use_co = has_co && (!has_se || s[0] >= s[1]);
    const double score = std::clamp(use_co ? s[0] : s[1], 0.0, 1.0);
    g.set_edge(key.first, key.second, score, use_co ? Provenance::cooccurrence : Provenance::semantic);
  }
  return g;
}

inline EntityGraph generate_candidates(const EmbeddingTable& e_co, const EmbeddingTable& e_se, std::size_t top_k,
                                       double min_sim, CandidateMode mode = CandidateMode::union_) {
  return generate_candidates(&e_co, &e_se, top_k, min_sim, mode);
}

struct EdgeOverlap {
  std::size_t predicted = 0;
  std::size_t truth = 0;
  std::size_t hits = 0;
  double precision() const { return predicted ? static_cast<double>(hits) / static_cast<double>(predicted) : 0.0; }
  double recall() const { return truth ? static_cast<double>(hits) / static_cast<double>(truth) : 0.0; }
};

inline EdgeOverlap edge_overlap(const EntityGraph& predicted, const EntityGraph& truth) {
  EdgeOverlap o;
  o.truth = truth.n_edges();
  for (const auto& e : predicted.canonical_edges()) {
    ++o.predicted;
    o.hits += truth.has_edge(e.src, e.dst);
  }
  return o;
}

}  // namespace egl::candgen
