#pragma once

// Stage two: the ALPC ranking model. A GeniePath-style encoder over the
// observed graph, a pair scorer, a per-source threshold head, and the
// prediction / threshold / contrastive objectives.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "egl/core/config.hpp"
#include "egl/core/metrics.hpp"
#include "egl/core/rng.hpp"
#include "egl/core/types.hpp"
#include "egl/datagen.hpp"
#include "egl/numkern/adam.hpp"
#include "egl/numkern/attention.hpp"
#include "egl/numkern/tape.hpp"

namespace egl::alpc {

using nk::Index;
using nk::Mat;
using nk::Parameter;
using nk::Tape;
using nk::Var;

enum class EncoderKind : std::uint32_t { geniepath = 0, mean = 1 };

inline EncoderKind parse_encoder(const std::string& s) {
  if (s == "geniepath") return EncoderKind::geniepath;
  if (s == "mean") return EncoderKind::mean;
  throw Error("encoder must be geniepath or mean, got '" + s + "'");
}

struct AlpcHyper {
  double alpha = 1.0;
  double beta = 1.0;
  double tau = 0.2;
  double anchor_sim = 0.8;
  std::size_t layers = 2;
  std::size_t hidden = 32;
  std::size_t batch = 512;
  std::size_t anchor_batch = 64;
  double lr = 0.005;
  std::size_t epochs = 50;
  std::size_t patience = 5;
  std::size_t neighbor_cap = 16;
  double hard_neg_ratio = 0.0;
  EncoderKind encoder = EncoderKind::geniepath;

  void validate() const {
    if (!(tau > 0.0)) throw Error("tau must be > 0");
    if (alpha < 0.0 || beta < 0.0) throw Error("alpha and beta must be >= 0");
    if (hidden < 1 || layers < 1 || batch < 1) throw Error("hidden, layers and batch must be >= 1");
    if (anchor_batch < 2) throw Error("anchor_batch must be >= 2");
    if (!(lr > 0.0)) throw Error("lr must be > 0");
    if (hard_neg_ratio < 0.0) throw Error("hard_neg_ratio must be >= 0");
  }

  static AlpcHyper from_config(const RunConfig& c) {
    AlpcHyper h;
    h.alpha = c.num("alpha");
    h.beta = c.num("beta");
    h.tau = c.num("tau");
    h.anchor_sim = c.num("anchor_sim");
    h.layers = c.size("layers");
    h.hidden = c.size("hidden");
    h.batch = c.size("batch");
    h.anchor_batch = c.size("anchor_batch");
    h.lr = c.num("lr");
    h.epochs = c.size("epochs");
    h.patience = c.size("patience");
    h.neighbor_cap = c.size("neighbor_cap");
    h.hard_neg_ratio = c.num("hard_neg_ratio");
    h.encoder = parse_encoder(c.str("encoder"));
    return h;
  }
};

// Message-passing rows grouped by receiving node: rows offsets[i]..offsets[i+1]
// belong to node i and read from nbr[row].
struct GraphIndex {
  std::size_t n = 0;
  std::vector<int> offsets;
  std::vector<int> dst;
  std::vector<int> nbr;
};

// Keeps at most `cap` neighbors per node by descending score, ties by
// ascending id; rows are the node itself (when with_self) followed by the
// kept neighbors in ascending id.
inline GraphIndex build_graph_index(const EntityGraph& g, std::size_t cap, bool with_self) {
  GraphIndex gi;
  gi.n = g.n_entities();
  gi.offsets.push_back(0);
  std::vector<ScoredEdge> nb;
  for (std::size_t i = 0; i < gi.n; ++i) {
    const auto u = static_cast<EntityId>(i);
    nb = g.neighbors(u);
    if (nb.size() > cap) {
      std::partial_sort(nb.begin(), nb.begin() + static_cast<std::ptrdiff_t>(cap), nb.end(),
                        [](const ScoredEdge& a, const ScoredEdge& b) {
                          return a.score != b.score ? a.score > b.score : a.dst < b.dst;
                        });
      nb.resize(cap);
      std::sort(nb.begin(), nb.end(), [](const ScoredEdge& a, const ScoredEdge& b) { return a.dst < b.dst; });
    }
    if (with_self) {
      gi.dst.push_back(u);
      gi.nbr.push_back(u);
    }
    for (const auto& e : nb) {
      gi.dst.push_back(u);
      gi.nbr.push_back(e.dst);
    }
    gi.offsets.push_back(static_cast<int>(gi.nbr.size()));
  }
  return gi;
}

// Node features [e_se, e_co], one row per entity.
inline Mat make_features(const EmbeddingTable& se, const EmbeddingTable& co) {
  if (se.rows() != co.rows()) throw Error("semantic and co-occurrence tables cover different lexicons");
  const auto n = static_cast<Index>(se.rows()), ds = static_cast<Index>(se.dim()), dc = static_cast<Index>(co.dim());
  Mat x(n, ds + dc);
  for (Index i = 0; i < n; ++i) {
    for (Index k = 0; k < ds; ++k) x(i, k) = se(static_cast<std::size_t>(i), static_cast<std::size_t>(k));
    for (Index k = 0; k < dc; ++k) x(i, ds + k) = co(static_cast<std::size_t>(i), static_cast<std::size_t>(k));
  }
  return x;
}

struct AlpcContext {
  Mat x;
  GraphIndex graph;
};

inline AlpcContext make_context(const AlpcHyper& h, const EntityGraph& observed, const EmbeddingTable& se,
                                const EmbeddingTable& co) {
  if (observed.n_entities() != se.rows()) throw Error("graph and features cover different lexicons");
  return {make_features(se, co), build_graph_index(observed, h.neighbor_cap, h.encoder == EncoderKind::geniepath)};
}

class AlpcModel {
 public:
  AlpcHyper hyper;
  std::size_t in_dim = 0;
  std::vector<Parameter> params;

  AlpcModel() = default;

  // Glorot weights, zero biases; the output layers of the scorer and of the
  // threshold head start at zero so s = 0 and eps = 0 initially.
  AlpcModel(std::size_t in, const AlpcHyper& h, std::uint64_t seed) : hyper(h), in_dim(in) {
    h.validate();
    Rng rng(seed);
    const auto H = static_cast<Index>(h.hidden), D = static_cast<Index>(in);
    auto add = [&](const std::string& name, Mat v) { params.emplace_back(name, std::move(v)); };
    add("enc.in.w", nk::glorot(D, H, rng));
    add("enc.in.b", Mat::Zero(1, H));
    for (std::size_t l = 0; l < h.layers; ++l) {
      const std::string p = "enc.l" + std::to_string(l) + ".";
      if (h.encoder == EncoderKind::geniepath) {
        add(p + "ws", nk::glorot(H, H, rng));
        add(p + "wd", nk::glorot(H, H, rng));
        add(p + "v", nk::glorot(H, 1, rng));
        add(p + "w", nk::glorot(H, H, rng));
        add(p + "gates.w", nk::glorot(H, 4 * H, rng));
        add(p + "gates.b", Mat::Zero(1, 4 * H));
      } else {
        add(p + "w", nk::glorot(2 * H, H, rng));
        add(p + "b", Mat::Zero(1, H));
      }
    }
    add("g.w1", nk::glorot(2 * H, H, rng));
    add("g.b1", Mat::Zero(1, H));
    add("g.w2", Mat::Zero(H, 1));
    add("g.b2", Mat::Zero(1, 1));
    add("th.w1", nk::glorot(H, H, rng));
    add("th.b1", Mat::Zero(1, H));
    add("th.w2", Mat::Zero(H, 1));
    add("th.b2", Mat::Zero(1, 1));
    reindex();
  }

  void reindex() {
    by_name_.clear();
    for (std::size_t i = 0; i < params.size(); ++i) by_name_[params[i].name] = i;
  }

  std::size_t index(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw Error("model has no parameter '" + name + "'");
    return it->second;
  }

  Parameter& param(const std::string& name) { return params[index(name)]; }

  std::vector<Parameter*> param_ptrs() {
    std::vector<Parameter*> out;
    for (auto& p : params) out.push_back(&p);
    return out;
  }

  bool operator==(const AlpcModel& o) const {
    if (in_dim != o.in_dim || params.size() != o.params.size()) return false;
    for (std::size_t i = 0; i < params.size(); ++i)
      if (params[i].name != o.params[i].name || params[i].value != o.params[i].value) return false;
    return true;
  }

 private:
  std::map<std::string, std::size_t> by_name_;
};

// Parameter values as tape nodes, in model order. `track` attaches them as
// trainable parameters; otherwise they enter as constants.
inline std::vector<Var> bind(Tape& t, AlpcModel& m, bool track) {
  std::vector<Var> out;
  for (auto& p : m.params) out.push_back(track ? t.param(p) : t.constant(p.value));
  return out;
}

struct Bound {
  const AlpcModel& m;
  const std::vector<Var>& v;
  Var operator[](const std::string& name) const { return v[m.index(name)]; }
};

// z for every entity (N x hidden).
inline Var encode_all(Tape& t, const AlpcModel& m, const std::vector<Var>& pv, const AlpcContext& ctx) {
  const Bound P{m, pv};
  const auto H = static_cast<Index>(m.hyper.hidden);
  const auto& gi = ctx.graph;
  if (static_cast<std::size_t>(ctx.x.cols()) != m.in_dim) throw Error("feature width does not match model");
  Var h = nk::affine(t.constant(ctx.x), P["enc.in.w"], P["enc.in.b"]);
  const auto N = h.rows();
  if (m.hyper.encoder == EncoderKind::geniepath) {
    Var c = t.constant(Mat::Zero(N, H));
    for (std::size_t l = 0; l < m.hyper.layers; ++l) {
      const std::string p = "enc.l" + std::to_string(l) + ".";
      // breadth: attention over {i} and its neighbours
      Var a = nk::gather_rows(nk::matmul(h, P[p + "ws"]), gi.dst);
      Var b = nk::gather_rows(nk::matmul(h, P[p + "wd"]), gi.nbr);
      Var att = nk::segment_softmax(nk::matmul(nk::tanh(nk::add(a, b)), P[p + "v"]), gi.offsets);
      Var msg = nk::gather_rows(nk::matmul(h, P[p + "w"]), gi.nbr);
      Var tmp = nk::tanh(nk::segment_sum(nk::mul_rows(msg, att), gi.offsets));
      // depth: LSTM-style gated memory
      Var gates = nk::affine(tmp, P[p + "gates.w"], P[p + "gates.b"]);
      Var ig = nk::sigmoid(nk::slice_cols(gates, 0, H));
      Var fg = nk::sigmoid(nk::slice_cols(gates, H, H));
      Var og = nk::sigmoid(nk::slice_cols(gates, 2 * H, H));
      Var cand = nk::tanh(nk::slice_cols(gates, 3 * H, H));
      c = nk::add(nk::mul(fg, c), nk::mul(ig, cand));
      h = nk::mul(og, nk::tanh(c));
    }
    return h;
  }
  Mat inv_deg(N, 1);
  for (Index i = 0; i < N; ++i) {
    const int d = gi.offsets[static_cast<std::size_t>(i) + 1] - gi.offsets[static_cast<std::size_t>(i)];
    inv_deg(i, 0) = d ? 1.0 / d : 0.0;
  }
  Var w_deg = t.constant(inv_deg);
  for (std::size_t l = 0; l < m.hyper.layers; ++l) {
    const std::string p = "enc.l" + std::to_string(l) + ".";
    Var agg = nk::mul_rows(nk::segment_sum(nk::gather_rows(h, gi.nbr), gi.offsets), w_deg);
    h = nk::tanh(nk::affine(nk::concat_cols(h, agg), P[p + "w"], P[p + "b"]));
  }
  return h;
}

// s = g([z_u || z_v]), one row per pair.
inline Var score(const AlpcModel& m, const std::vector<Var>& pv, Var zu, Var zv) {
  const Bound P{m, pv};
  Var hid = nk::relu(nk::affine(nk::concat_cols(zu, zv), P["g.w1"], P["g.b1"]));
  return nk::affine(hid, P["g.w2"], P["g.b2"]);
}

// eps_u = MLP(z_u).
inline Var threshold(const AlpcModel& m, const std::vector<Var>& pv, Var zu) {
  const Bound P{m, pv};
  return nk::affine(nk::relu(nk::affine(zu, P["th.w1"], P["th.b1"])), P["th.w2"], P["th.b2"]);
}

inline std::vector<double> labels_of(const std::vector<PairExample>& pairs) {
  std::vector<double> y;
  for (const auto& p : pairs) y.push_back(static_cast<double>(p.label));
  return y;
}

inline Var loss_pred(Var s, const std::vector<double>& y) { return nk::bce_with_logits(s, y); }

inline Var loss_threshold(Var s, Var eps, const std::vector<double>& y) { return nk::bce_with_logits(nk::sub(s, eps), y); }

// InfoNCE with in-batch negatives: row r of ze is paired with row r of zp.
inline Var loss_contrastive(Var ze, Var zp, double tau) {
  if (ze.rows() < 2) throw Error("contrastive batch needs at least 2 anchor pairs");
  if (ze.rows() != zp.rows() || ze.cols() != zp.cols()) throw Error("contrastive batch shape mismatch");
  if (!(tau > 0.0)) throw Error("tau must be > 0");
  Var ls = nk::log_softmax_rows(nk::scale(nk::matmul(ze, nk::transpose(zp)), 1.0 / tau));
  std::vector<int> diag(static_cast<std::size_t>(ze.rows()));
  for (std::size_t i = 0; i < diag.size(); ++i) diag[i] = static_cast<int>(i);
  return nk::scale(nk::mean(nk::pick(ls, diag)), -1.0);
}

inline Var total_loss(Var l_pred, Var l_th, Var l_cl, double alpha, double beta) {
  return nk::add(l_pred, nk::add(nk::scale(l_th, alpha), nk::scale(l_cl, beta)));
}

using AnchorPair = std::pair<EntityId, EntityId>;

// Pairs (e, e+) with e < e+ and semantic cosine >= threshold. When
// `candidates` is given only its edges are considered.
inline std::vector<AnchorPair> build_anchors(const EmbeddingTable& se, double thr, const EntityGraph* candidates = nullptr) {
  std::vector<AnchorPair> out;
  const std::size_t d = se.dim();
  auto consider = [&](EntityId a, EntityId b) {
    if (cosine(se.row(static_cast<std::size_t>(a)), se.row(static_cast<std::size_t>(b)), d) >= thr) out.emplace_back(a, b);
  };
  if (candidates) {
    for (const auto& e : candidates->canonical_edges()) consider(e.src, e.dst);
  } else {
    for (std::size_t a = 0; a < se.rows(); ++a)
      for (std::size_t b = a + 1; b < se.rows(); ++b) consider(static_cast<EntityId>(a), static_cast<EntityId>(b));
  }
  return out;
}

struct PairIndex {
  std::vector<int> u, v;
  std::vector<double> y;
};

inline PairIndex index_pairs(const std::vector<PairExample>& pairs, std::size_t begin, std::size_t end) {
  PairIndex b;
  for (std::size_t i = begin; i < end; ++i) {
    b.u.push_back(pairs[i].src);
    b.v.push_back(pairs[i].dst);
    b.y.push_back(static_cast<double>(pairs[i].label));
  }
  return b;
}

struct BatchLosses {
  Var pred, th, cl, total;
};

// Full objective on one pair batch and one anchor batch (anchors may be empty,
// in which case the contrastive term is zero). The contrastive term sees
// unit-normalised encodings.
inline BatchLosses batch_losses(Tape& t, const AlpcModel& m, const std::vector<Var>& pv, Var z, const PairIndex& b,
                                const std::vector<AnchorPair>& anchors) {
  Var zu = nk::gather_rows(z, b.u), zv = nk::gather_rows(z, b.v);
  Var s = score(m, pv, zu, zv);
  Var eps = threshold(m, pv, zu);
  BatchLosses l;
  l.pred = loss_pred(s, b.y);
  l.th = loss_threshold(s, eps, b.y);
  if (anchors.size() >= 2) {
    std::vector<int> e, p;
    for (const auto& a : anchors) {
      e.push_back(a.first);
      p.push_back(a.second);
    }
    l.cl = loss_contrastive(nk::l2_normalize_rows(nk::gather_rows(z, e)), nk::l2_normalize_rows(nk::gather_rows(z, p)),
                            m.hyper.tau);
  } else {
    l.cl = t.constant(Mat::Zero(1, 1));
  }
  l.total = total_loss(l.pred, l.th, l.cl, m.hyper.alpha, m.hyper.beta);
  return l;
}

// Candidate edges missing from the observed graph, labelled 0, randomly
// oriented; round(ratio * n_pos) of them.
inline std::vector<PairExample> hard_negatives(const EntityGraph& candidates, const EntityGraph& observed, double ratio,
                                               std::size_t n_pos, Rng& rng) {
  std::vector<PairExample> pool;
  for (const auto& e : candidates.canonical_edges())
    if (!observed.has_edge(e.src, e.dst)) pool.push_back({e.src, e.dst, 0});
  rng.shuffle(pool);
  const auto want = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n_pos)));
  if (pool.size() > want) pool.resize(want);
  for (auto& p : pool)
    if (rng.below(2)) std::swap(p.src, p.dst);
  return pool;
}

struct TrainReport {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::size_t best_epoch = 0;
  std::size_t anchors = 0;
  std::size_t hard_negatives = 0;
  std::vector<std::string> warnings;
};

// Mini-batch Adam on the total loss. 10% of training pairs are held out for
// early stopping (patience from hyper); the best-validation parameters are
// returned. Message passing sees only the observed graph, minus the positive
// pairs being scored in the current batch.
inline AlpcModel train_alpc(const datagen::DataSplit& split, const EntityGraph& candidates, const EmbeddingTable& se,
                            const EmbeddingTable& co, const AlpcHyper& hyper, std::uint64_t seed,
                            TrainReport* report = nullptr) {
  hyper.validate();
  TrainReport local;
  TrainReport& rep = report ? *report : local;
  const AlpcContext ctx = make_context(hyper, split.observed_graph, se, co);
  Rng root(seed);
  AlpcModel model(static_cast<std::size_t>(ctx.x.cols()), hyper, root.next_u64());
  Rng rng = root.fork();

  auto pairs = split.train();
  if (pairs.empty()) throw Error("train_alpc: no training pairs");
  auto hard = hard_negatives(candidates, split.observed_graph, hyper.hard_neg_ratio, split.train_pos.size(), rng);
  rep.hard_negatives = hard.size();
  pairs.insert(pairs.end(), hard.begin(), hard.end());
  rng.shuffle(pairs);
  const auto n_val = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(pairs.size())));
  std::vector<PairExample> val(pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<PairExample> train(pairs.begin() + static_cast<std::ptrdiff_t>(n_val), pairs.end());
  if (train.empty()) throw Error("train_alpc: validation split left no training pairs");
  const bool self_rows = hyper.encoder == EncoderKind::geniepath;
  auto without_positives = [&](const std::vector<PairExample>& v, std::size_t b, std::size_t e) {
    EntityGraph g = split.observed_graph;
    for (std::size_t i = b; i < e; ++i)
      if (v[i].label) g.remove_edge(v[i].src, v[i].dst);
    return build_graph_index(g, hyper.neighbor_cap, self_rows);
  };
  const AlpcContext val_ctx{ctx.x, without_positives(val, 0, val.size())};
  AlpcContext batch_ctx{ctx.x, {}};

  auto anchors = build_anchors(se, hyper.anchor_sim, &candidates);
  rep.anchors = anchors.size();
  if (anchors.size() < 2 && hyper.beta > 0.0) rep.warnings.push_back("fewer than 2 anchor pairs; contrastive loss disabled");

  auto params = model.param_ptrs();
  nk::AdamState adam;
  nk::AdamConfig acfg;
  acfg.lr = hyper.lr;

  auto val_loss = [&]() {
    if (val.empty()) return 0.0;
    Tape t;
    auto pv = bind(t, model, false);
    Var z = encode_all(t, model, pv, val_ctx);
    auto b = index_pairs(val, 0, val.size());
    Var zu = nk::gather_rows(z, b.u), zv = nk::gather_rows(z, b.v);
    Var s = score(model, pv, zu, zv);
    return loss_pred(s, b.y).scalar() + hyper.alpha * loss_threshold(s, threshold(model, pv, zu), b.y).scalar();
  };

  AlpcModel best = model;
  double best_val = val_loss();
  std::size_t since_best = 0, anchor_pos = 0;
  rng.shuffle(anchors);
  for (std::size_t ep = 0; ep < hyper.epochs; ++ep) {
    rng.shuffle(train);
    double ep_loss = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < train.size(); start += hyper.batch) {
      const std::size_t end = std::min(train.size(), start + hyper.batch);
      std::vector<AnchorPair> ab;
      if (anchors.size() >= 2 && hyper.beta > 0.0) {
        const std::size_t take = std::min(hyper.anchor_batch, anchors.size());
        for (std::size_t k = 0; k < take; ++k) {
          if (anchor_pos == anchors.size()) {
            anchor_pos = 0;
            rng.shuffle(anchors);
          }
          ab.push_back(anchors[anchor_pos++]);
        }
      }
      Tape t;
      auto pv = bind(t, model, true);
      batch_ctx.graph = without_positives(train, start, end);
      Var z = encode_all(t, model, pv, batch_ctx);
      auto l = batch_losses(t, model, pv, z, index_pairs(train, start, end), ab);
      const double lv = l.total.scalar();
      if (!std::isfinite(lv))
        throw Error("train_alpc diverged at epoch " + std::to_string(ep) + " batch " + std::to_string(n_batches) +
                    ": pred=" + std::to_string(l.pred.scalar()) + " th=" + std::to_string(l.th.scalar()) +
                    " cl=" + std::to_string(l.cl.scalar()));
      nk::zero_grads(params);
      t.backward(l.total);
      nk::adam_update(params, adam, acfg);
      ep_loss += lv;
      ++n_batches;
    }
    rep.train_loss.push_back(ep_loss / static_cast<double>(n_batches));
    const double v = val_loss();
    if (!std::isfinite(v)) throw Error("train_alpc diverged: validation loss non-finite at epoch " + std::to_string(ep));
    rep.val_loss.push_back(v);
    if (v < best_val) {
      best_val = v;
      best = model;
      rep.best_epoch = ep + 1;
      since_best = 0;
    } else if (++since_best >= hyper.patience && hyper.patience > 0) {
      break;
    }
  }
  best.reindex();
  return best;
}

// z for all entities as a plain matrix.
inline Mat embed(AlpcModel& m, const AlpcContext& ctx) {
  Tape t;
  auto pv = bind(t, m, false);
  return encode_all(t, m, pv, ctx).value();
}

struct PairScores {
  std::vector<double> s;
  std::vector<double> eps;
};

inline PairScores score_pairs(AlpcModel& m, const Mat& z, const std::vector<PairExample>& pairs) {
  PairScores out;
  if (pairs.empty()) return out;
  Tape t;
  auto pv = bind(t, m, false);
  Var zc = t.constant(z);
  auto b = index_pairs(pairs, 0, pairs.size());
  Var zu = nk::gather_rows(zc, b.u), zv = nk::gather_rows(zc, b.v);
  const Mat s = score(m, pv, zu, zv).value(), e = threshold(m, pv, zu).value();
  for (Index i = 0; i < s.rows(); ++i) {
    out.s.push_back(s(i, 0));
    out.eps.push_back(e(i, 0));
  }
  return out;
}

struct EvalResult {
  double auc = 0.0;
  double acc = 0.0;
  double acc_fixed = 0.0;
};

// AUC over sigma(s); acc uses s >= eps_u, acc_fixed uses sigma(s) >= 0.5.
inline EvalResult evaluate(AlpcModel& m, const AlpcContext& ctx, const std::vector<PairExample>& test_pos,
                           const std::vector<PairExample>& test_neg) {
  if (test_pos.empty() || test_neg.empty()) throw Error("evaluate needs non-empty test sets");
  const Mat z = embed(m, ctx);
  auto all = test_pos;
  all.insert(all.end(), test_neg.begin(), test_neg.end());
  const auto sc = score_pairs(m, z, all);
  std::vector<double> pos, neg;
  std::vector<int> adaptive, fixed, labels;
  for (std::size_t i = 0; i < all.size(); ++i) {
    const double y = nk::stable_sigmoid(sc.s[i]);
    (all[i].label ? pos : neg).push_back(y);
    adaptive.push_back(sc.s[i] >= sc.eps[i]);
    fixed.push_back(y >= 0.5);
    labels.push_back(all[i].label);
  }
  return {egl::auc(pos, neg), accuracy(adaptive, labels), accuracy(fixed, labels)};
}

// Scores both directions of every candidate edge; an edge survives when
// s_uv >= eps_u or s_vu >= eps_v and keeps max(sigma(s_uv - eps_u), sigma(s_vu - eps_v)).
inline EntityGraph filter_edges(AlpcModel& m, const AlpcContext& ctx, const EntityGraph& candidates) {
  const auto edges = candidates.canonical_edges();
  EntityGraph out(candidates.n_entities());
  if (edges.empty()) return out;
  const Mat z = embed(m, ctx);
  std::vector<PairExample> dirs;
  for (const auto& e : edges) {
    dirs.push_back({e.src, e.dst, 0});
    dirs.push_back({e.dst, e.src, 0});
  }
  const auto sc = score_pairs(m, z, dirs);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const double d1 = sc.s[2 * i] - sc.eps[2 * i], d2 = sc.s[2 * i + 1] - sc.eps[2 * i + 1];
    if (sc.s[2 * i] >= sc.eps[2 * i] || sc.s[2 * i + 1] >= sc.eps[2 * i + 1])
      out.set_edge(edges[i].src, edges[i].dst, nk::stable_sigmoid(std::max(d1, d2)), Provenance::ranked);
  }
  return out;
}

// ---- model file ----
// Layout (little-endian): "EGLALPC\0", u32 version = 1, u32 encoder,
// u64 in_dim, f64 alpha beta tau anchor_sim lr, u64 layers hidden batch
// anchor_batch epochs patience neighbor_cap, f64 hard_neg_ratio,
// u64 n_params, then per
// parameter: u32 name length, name bytes, u64 rows, u64 cols, rows*cols f64
// in row-major order.

inline constexpr char kModelMagic[8] = {'E', 'G', 'L', 'A', 'L', 'P', 'C', '\0'};
inline constexpr std::uint32_t kModelVersion = 1;

namespace detail {
template <typename T>
void put(std::ostream& o, T v) {
  o.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get(std::istream& i) {
  T v{};
  i.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!i) throw Error("truncated model file");
  return v;
}
}  // namespace detail

inline void write_params(std::ostream& o, const std::vector<Parameter>& params) {
  detail::put<std::uint64_t>(o, params.size());
  for (const auto& p : params) {
    detail::put<std::uint32_t>(o, static_cast<std::uint32_t>(p.name.size()));
    o.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::put<std::uint64_t>(o, static_cast<std::uint64_t>(p.value.rows()));
    detail::put<std::uint64_t>(o, static_cast<std::uint64_t>(p.value.cols()));
    o.write(reinterpret_cast<const char*>(p.value.data()), static_cast<std::streamsize>(p.value.size() * 8));
  }
}

inline std::vector<Parameter> read_params(std::istream& in) {
  const auto n = detail::get<std::uint64_t>(in);
  if (n > 100000) throw Error("corrupt parameter count");
  std::vector<Parameter> out;
  for (std::uint64_t k = 0; k < n; ++k) {
    const auto len = detail::get<std::uint32_t>(in);
    if (len > 4096) throw Error("corrupt parameter name");
    std::string name(len, '\0');
    in.read(name.data(), len);
    const auto r = detail::get<std::uint64_t>(in), c = detail::get<std::uint64_t>(in);
    if (r * c > (1ULL << 32)) throw Error("corrupt parameter shape");
    Mat v(static_cast<Index>(r), static_cast<Index>(c));
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(r * c * 8));
    if (!in) throw Error("truncated model file");
    out.emplace_back(name, std::move(v));
  }
  return out;
}

inline void save_model(const AlpcModel& m, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream o(path, std::ios::binary);
  if (!o) throw Error("cannot write " + path.string());
  o.write(kModelMagic, 8);
  detail::put(o, kModelVersion);
  detail::put(o, static_cast<std::uint32_t>(m.hyper.encoder));
  detail::put<std::uint64_t>(o, m.in_dim);
  for (double v : {m.hyper.alpha, m.hyper.beta, m.hyper.tau, m.hyper.anchor_sim, m.hyper.lr}) detail::put(o, v);
  for (std::size_t v : {m.hyper.layers, m.hyper.hidden, m.hyper.batch, m.hyper.anchor_batch, m.hyper.epochs,
                        m.hyper.patience, m.hyper.neighbor_cap})
    detail::put<std::uint64_t>(o, v);
  detail::put(o, m.hyper.hard_neg_ratio);
  write_params(o, m.params);
}

inline AlpcModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kModelMagic, 8) != 0) throw Error(path.string() + " is not an ALPC model file");
  const auto version = detail::get<std::uint32_t>(in);
  if (version != kModelVersion) throw Error("unsupported ALPC model version " + std::to_string(version));
  AlpcModel m;
  const auto enc = detail::get<std::uint32_t>(in);
  if (enc > 1) throw Error("unknown encoder kind in model file");
  m.hyper.encoder = static_cast<EncoderKind>(enc);
  m.in_dim = detail::get<std::uint64_t>(in);
  m.hyper.alpha = detail::get<double>(in);
  m.hyper.beta = detail::get<double>(in);
  m.hyper.tau = detail::get<double>(in);
  m.hyper.anchor_sim = detail::get<double>(in);
  m.hyper.lr = detail::get<double>(in);
  for (std::size_t* f : {&m.hyper.layers, &m.hyper.hidden, &m.hyper.batch, &m.hyper.anchor_batch, &m.hyper.epochs,
                         &m.hyper.patience, &m.hyper.neighbor_cap})
    *f = detail::get<std::uint64_t>(in);
  m.hyper.hard_neg_ratio = detail::get<double>(in);
  m.params = read_params(in);
  m.reindex();
  AlpcModel shape(m.in_dim, m.hyper, 0);
  if (shape.params.size() != m.params.size()) throw Error("model file parameter list does not match its header");
  for (std::size_t i = 0; i < m.params.size(); ++i)
    if (shape.params[i].name != m.params[i].name || shape.params[i].value.rows() != m.params[i].value.rows() ||
        shape.params[i].value.cols() != m.params[i].value.cols())
      throw Error("model file parameter '" + m.params[i].name + "' has unexpected name or shape");
  return m;
}

}  // namespace egl::alpc
