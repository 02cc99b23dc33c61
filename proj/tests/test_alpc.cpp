#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "egl/alpc.hpp"
#include "egl/candgen.hpp"
#include "gradcheck.hpp"

using namespace egl;
using namespace egl::alpc;

namespace {

AlpcHyper small_hyper() {
  AlpcHyper h;
  h.hidden = 4;
  h.layers = 2;
  h.batch = 16;
  h.anchor_batch = 4;
  h.neighbor_cap = 3;
  return h;
}

EmbeddingTable random_table(std::size_t n, std::size_t d, Rng& rng) {
  EmbeddingTable t(n, d);
  for (auto& v : t.data()) v = rng.normal();
  return t;
}

EntityGraph star(std::size_t leaves) {
  EntityGraph g(leaves + 1);
  for (std::size_t i = 1; i <= leaves; ++i) g.set_edge(0, static_cast<EntityId>(i), 0.5, Provenance::ranked);
  return g;
}

Mat sigm(const Mat& m) { return m.unaryExpr([](double x) { return nk::stable_sigmoid(x); }); }

// Per-node GeniePath forward written independently of the tape.
Mat naive_geniepath(AlpcModel& m, const Mat& x, const EntityGraph& g) {
  const auto H = static_cast<Index>(m.hyper.hidden);
  const Index n = x.rows();
  Mat h = x * m.param("enc.in.w").value;
  for (Index i = 0; i < n; ++i) h.row(i) += m.param("enc.in.b").value.row(0);
  Mat c = Mat::Zero(n, H);
  for (std::size_t l = 0; l < m.hyper.layers; ++l) {
    const std::string p = "enc.l" + std::to_string(l) + ".";
    const Mat& ws = m.param(p + "ws").value;
    const Mat& wd = m.param(p + "wd").value;
    const Mat& v = m.param(p + "v").value;
    const Mat& w = m.param(p + "w").value;
    const Mat& gw = m.param(p + "gates.w").value;
    const Mat& gb = m.param(p + "gates.b").value;
    Mat nh(n, H), nc(n, H);
    for (Index i = 0; i < n; ++i) {
      std::vector<std::pair<double, EntityId>> nb;
      for (const auto& e : g.neighbors(static_cast<EntityId>(i))) nb.push_back({e.score, e.dst});
      std::sort(nb.begin(), nb.end(), [](auto& a, auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
      if (nb.size() > m.hyper.neighbor_cap) nb.resize(m.hyper.neighbor_cap);
      std::vector<Index> rows{i};
      for (auto& [s, j] : nb) rows.push_back(j);
      std::vector<double> e;
      for (Index j : rows) {
        Mat pre = h.row(i) * ws + h.row(j) * wd;
        e.push_back((pre.array().tanh().matrix() * v)(0, 0));
      }
      double mx = *std::max_element(e.begin(), e.end()), z = 0;
      for (double& a : e) z += (a = std::exp(a - mx));
      Mat agg = Mat::Zero(1, H);
      for (std::size_t k = 0; k < rows.size(); ++k) agg += (e[k] / z) * (h.row(rows[k]) * w);
      Mat tmp = agg.array().tanh();
      Mat gates = tmp * gw + gb;
      Mat ig = sigm(gates.leftCols(H)), fg = sigm(gates.middleCols(H, H)), og = sigm(gates.middleCols(2 * H, H));
      Mat cand = gates.rightCols(H).array().tanh();
      nc.row(i) = fg.cwiseProduct(c.row(i)) + ig.cwiseProduct(cand);
      nh.row(i) = og.cwiseProduct(Mat(nc.row(i).array().tanh()));
    }
    h = nh;
    c = nc;
  }
  return h;
}

struct Tiny {
  EntityGraph g;
  EmbeddingTable se, co;
  std::vector<PairExample> pairs;
  std::vector<AnchorPair> anchors;
};

Tiny tiny_world(std::uint64_t seed) {
  Rng rng(seed);
  Tiny t{EntityGraph(12), random_table(12, 3, rng), random_table(12, 3, rng), {}, {}};
  for (int i = 0; i < 12; ++i) t.g.set_edge(i, (i + 1) % 12, 1.0, Provenance::ranked);
  t.g.set_edge(0, 6, 1.0, Provenance::ranked);
  t.pairs = {{0, 1, 1}, {2, 9, 0}, {4, 5, 1}, {7, 3, 0}, {8, 9, 1}, {11, 5, 0}};
  t.anchors = {{0, 1}, {2, 3}, {4, 8}};
  return t;
}

// Randomises every parameter so zero-initialised heads do not hide gradients.
void scramble(AlpcModel& m, std::uint64_t seed, double scale = 0.5) {
  Rng rng(seed);
  for (auto& p : m.params)
    for (Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = scale * rng.normal();
}

std::vector<Mat> values_of(const AlpcModel& m) {
  std::vector<Mat> out;
  for (const auto& p : m.params) out.push_back(p.value);
  return out;
}

}  // namespace

TEST(GraphIndex, CapsByScoreThenId) {
  EntityGraph g(5);
  g.set_edge(0, 1, 0.2, Provenance::ranked);
  g.set_edge(0, 2, 0.9, Provenance::ranked);
  g.set_edge(0, 3, 0.5, Provenance::ranked);
  g.set_edge(0, 4, 0.5, Provenance::ranked);
  auto gi = build_graph_index(g, 2, true);
  // node 0: self, then kept {2, 3} in id order
  EXPECT_EQ(std::vector<int>(gi.nbr.begin(), gi.nbr.begin() + gi.offsets[1]), (std::vector<int>{0, 2, 3}));
  auto no_self = build_graph_index(g, 10, false);
  EXPECT_EQ(no_self.offsets[1], 4);
}

TEST(Encoder, MatchesNaiveReferenceOnStar) {
  auto g = star(4);
  Rng rng(3);
  auto se = random_table(5, 3, rng), co = random_table(5, 2, rng);
  AlpcHyper h = small_hyper();
  auto ctx = make_context(h, g, se, co);
  AlpcModel m(5, h, 9);
  scramble(m, 10);
  const Mat got = embed(m, ctx);
  const Mat want = naive_geniepath(m, ctx.x, g);
  EXPECT_LT((got - want).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Encoder, IsolatedNodeDependsOnOwnFeaturesOnly) {
  EntityGraph g(4);
  g.set_edge(1, 2, 1.0, Provenance::ranked);
  Rng rng(5);
  auto se = random_table(4, 3, rng), co = random_table(4, 3, rng);
  AlpcHyper h = small_hyper();
  AlpcModel m(6, h, 2);
  const Mat a = embed(m, make_context(h, g, se, co));
  for (std::size_t k = 0; k < 3; ++k) se(1, k) += 1.0;
  const Mat b = embed(m, make_context(h, g, se, co));
  EXPECT_EQ(a.row(0), b.row(0));
  EXPECT_NE(a.row(2), b.row(2));
}

TEST(Encoder, IsomorphicNodesEncodeIdentically) {
  auto g = star(3);
  Rng rng(1);
  auto se = random_table(4, 2, rng), co = random_table(4, 2, rng);
  for (std::size_t k = 0; k < 2; ++k) {
    se(2, k) = se(1, k);
    co(2, k) = co(1, k);
  }
  for (auto kind : {EncoderKind::geniepath, EncoderKind::mean}) {
    AlpcHyper h = small_hyper();
    h.encoder = kind;
    AlpcModel m(4, h, 4);
    const Mat z = embed(m, make_context(h, g, se, co));
    EXPECT_EQ(z.row(1), z.row(2));
  }
}

TEST(Encoder, InsertionOrderIrrelevant) {
  EntityGraph a(6), b(6);
  std::vector<std::pair<int, int>> edges{{0, 1}, {0, 2}, {2, 3}, {3, 4}, {4, 5}, {1, 5}};
  for (auto [u, v] : edges) a.set_edge(u, v, 1.0, Provenance::ranked);
  for (auto it = edges.rbegin(); it != edges.rend(); ++it) b.set_edge(it->second, it->first, 1.0, Provenance::ranked);
  Rng rng(2);
  auto se = random_table(6, 2, rng), co = random_table(6, 2, rng);
  AlpcHyper h = small_hyper();
  AlpcModel m(4, h, 1);
  EXPECT_EQ(embed(m, make_context(h, a, se, co)), embed(m, make_context(h, b, se, co)));
}

TEST(Encoder, UnknownWidthRejected) {
  auto t = tiny_world(1);
  AlpcHyper h = small_hyper();
  AlpcModel m(7, h, 1);
  EXPECT_THROW(embed(m, make_context(h, t.g, t.se, t.co)), Error);
}

TEST(Scorer, ZeroWeightsGiveHalf) {
  auto t = tiny_world(2);
  AlpcHyper h = small_hyper();
  AlpcModel m(6, h, 3);
  const Mat z = embed(m, make_context(h, t.g, t.se, t.co));
  auto sc = score_pairs(m, z, t.pairs);
  for (std::size_t i = 0; i < t.pairs.size(); ++i) {
    EXPECT_EQ(sc.s[i], 0.0);
    EXPECT_EQ(sc.eps[i], 0.0);
  }
}

TEST(Scorer, LinearInLastLayer) {
  auto t = tiny_world(3);
  AlpcHyper h = small_hyper();
  AlpcModel m(6, h, 3);
  scramble(m, 4);
  const Mat z = embed(m, make_context(h, t.g, t.se, t.co));
  auto a = score_pairs(m, z, t.pairs);
  m.param("g.w2").value *= 2.0;
  m.param("g.b2").value *= 2.0;
  auto b = score_pairs(m, z, t.pairs);
  for (std::size_t i = 0; i < a.s.size(); ++i) {
    EXPECT_EQ(b.s[i], 2.0 * a.s[i]);
    const double y = nk::stable_sigmoid(a.s[i]);
    EXPECT_GT(y, 0.0);
    EXPECT_LT(y, 1.0);
  }
}

TEST(Losses, PredAtHalfIsLogTwo) {
  Tape t;
  Var s = t.constant(Mat::Zero(5, 1));
  EXPECT_NEAR(loss_pred(s, {1, 0, 1, 1, 0}).scalar(), std::log(2.0), 1e-12);
}

TEST(Losses, PredPerfectFitIsTiny) {
  Tape t;
  Mat s(4, 1);
  s << 60, -60, 60, -60;
  EXPECT_LE(loss_pred(t.constant(s), {1, 0, 1, 0}).scalar(), 1e-11);
}

TEST(Losses, PredHandComputed) {
  Tape t;
  Mat s(4, 1);
  s << 0.5, -1.0, 2.0, 0.0;
  const double p0 = 1 / (1 + std::exp(-0.5)), p1 = 1 / (1 + std::exp(1.0)), p2 = 1 / (1 + std::exp(-2.0));
  const double want = -(std::log(p0) + std::log(1 - p1) + std::log(1 - p2) + std::log(0.5)) / 4;
  EXPECT_NEAR(loss_pred(t.constant(s), {1, 0, 0, 1}).scalar(), want, 1e-12);
}

TEST(Losses, ThresholdReductionAndMargin) {
  Tape t;
  Rng rng(4);
  Mat s = egl::testing::random_mat(6, 1, rng);
  std::vector<double> y{1, 0, 1, 0, 0, 1};
  EXPECT_EQ(loss_threshold(t.constant(s), t.constant(Mat::Zero(6, 1)), y).scalar(), loss_pred(t.constant(s), y).scalar());
  Mat two = Mat::Constant(1, 1, 2.0);
  EXPECT_NEAR(loss_threshold(t.constant(two), t.constant(two), {1}).scalar(), std::log(2.0), 1e-15);
  EXPECT_NEAR(loss_threshold(t.constant(two), t.constant(two), {0}).scalar(), std::log(2.0), 1e-15);
  for (double a = -3; a <= 3; a += 0.25)
    for (double b = -3; b <= 3; b += 0.25) EXPECT_EQ(nk::stable_sigmoid(a - b) >= 0.5, a >= b);
}

TEST(Losses, ContrastiveUniformLogitsIsLogB) {
  for (Index b : {2, 8, 64}) {
    Tape t;
    Mat z = Mat::Constant(b, 3, 0.3);
    EXPECT_NEAR(loss_contrastive(t.constant(z), t.constant(z), 0.2).scalar(), std::log(static_cast<double>(b)), 1e-12);
  }
}

TEST(Losses, ContrastivePositiveDominates) {
  Tape t;
  Mat e(2, 2), p(2, 2);
  e << 1, 0, 0, 1;
  p << 50, 0, 0, 50;
  EXPECT_LT(loss_contrastive(t.constant(e), t.constant(p), 0.2).scalar(), 1e-12);
}

TEST(Losses, ContrastiveMatchesDirectSummation) {
  Rng rng(8);
  Tape t;
  Mat e = egl::testing::random_mat(3, 4, rng), p = egl::testing::random_mat(3, 4, rng);
  double want = 0;
  for (Index i = 0; i < 3; ++i) {
    double denom = 0;
    for (Index j = 0; j < 3; ++j) denom += std::exp(e.row(i).dot(p.row(j)) / 0.2);
    want -= std::log(std::exp(e.row(i).dot(p.row(i)) / 0.2) / denom);
  }
  want /= 3;
  EXPECT_NEAR(loss_contrastive(t.constant(e), t.constant(p), 0.2).scalar(), want, 1e-12);
  EXPECT_THROW(loss_contrastive(t.constant(e.topRows(1)), t.constant(p.topRows(1)), 0.2), Error);
}

TEST(Losses, TotalIsWeightedSum) {
  Tape t;
  Var a = t.constant(Mat::Constant(1, 1, 0.7)), b = t.constant(Mat::Constant(1, 1, 0.3)), c = t.constant(Mat::Constant(1, 1, 1.9));
  EXPECT_EQ(total_loss(a, b, c, 0, 0).scalar(), 0.7);
  EXPECT_NEAR(total_loss(a, b, c, 1, 1).scalar(), 0.7 + 0.3 + 1.9, 1e-15);
  const double l0 = total_loss(a, b, c, 0, 1).scalar(), l1 = total_loss(a, b, c, 1, 1).scalar(), l3 = total_loss(a, b, c, 3, 1).scalar();
  EXPECT_NEAR(l3 - l1, 2 * (l1 - l0), 1e-12);
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  auto w = tiny_world(5);
  for (auto kind : {EncoderKind::geniepath, EncoderKind::mean}) {
    AlpcHyper h = small_hyper();
    h.encoder = kind;
    auto ctx = make_context(h, w.g, w.se, w.co);
    AlpcModel m(6, h, 6);
    scramble(m, 7);
    const auto b = index_pairs(w.pairs, 0, w.pairs.size());
    using Pick = std::function<Var(const BatchLosses&)>;
    for (const Pick& pick : std::vector<Pick>{[](const BatchLosses& l) { return l.pred; },
                                              [](const BatchLosses& l) { return l.th; },
                                              [](const BatchLosses& l) { return l.cl; },
                                              [](const BatchLosses& l) { return l.total; }}) {
      auto res = egl::testing::gradcheck(
          [&](Tape& t, const std::vector<Var>& pv) {
            Var z = encode_all(t, m, pv, ctx);
            return pick(batch_losses(t, m, pv, z, b, w.anchors));
          },
          values_of(m), 1e-5, 20, 3);
      EXPECT_LT(res.max_rel_error, 1e-4);
    }
  }
}

TEST(Anchors, ThresholdOneWithoutDuplicatesIsEmpty) {
  Rng rng(1);
  auto se = random_table(30, 4, rng);
  EXPECT_TRUE(build_anchors(se, 1.0).empty());
}

TEST(Anchors, IdenticalVectorsGiveOnePair) {
  Rng rng(2);
  auto se = random_table(10, 4, rng);
  for (std::size_t k = 0; k < 4; ++k) se(7, k) = se(3, k);
  auto a = build_anchors(se, 1.0 - 1e-12);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0], (AnchorPair{3, 7}));
}

TEST(Anchors, PlantedWorldMostlyIntraCommunity) {
  auto w = datagen::gen_world(400, 4, 0.1, 0.005, 1, 2, 3);
  auto a = build_anchors(w.semantic_vectors, 0.8);
  ASSERT_FALSE(a.empty());
  std::size_t intra = 0;
  for (auto [e, p] : a) {
    EXPECT_LT(e, p);
    intra += w.communities[static_cast<std::size_t>(e)] == w.communities[static_cast<std::size_t>(p)];
  }
  EXPECT_GE(static_cast<double>(intra) / static_cast<double>(a.size()), 0.95);
}

TEST(Decision, InvariantToSharedBiasShift) {
  auto w = tiny_world(6);
  AlpcHyper h = small_hyper();
  auto ctx = make_context(h, w.g, w.se, w.co);
  AlpcModel m(6, h, 6);
  scramble(m, 8);
  std::vector<PairExample> all;
  for (int u = 0; u < 12; ++u)
    for (int v = 0; v < 12; ++v)
      if (u != v) all.push_back({u, v, 0});
  const Mat z = embed(m, ctx);
  auto a = score_pairs(m, z, all);
  m.param("g.b2").value(0, 0) += 0.75;
  m.param("th.b2").value(0, 0) += 0.75;
  auto b = score_pairs(m, z, all);
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(a.s[i] >= a.eps[i], b.s[i] >= b.eps[i]);
}

TEST(Filter, HugeThresholdEmptiesGraph) {
  auto w = tiny_world(7);
  AlpcHyper h = small_hyper();
  auto ctx = make_context(h, w.g, w.se, w.co);
  AlpcModel m(6, h, 1);
  scramble(m, 2);
  m.param("th.b2").value(0, 0) = 1e9;
  EXPECT_EQ(filter_edges(m, ctx, w.g).n_edges(), 0u);
}

TEST(Filter, ZeroThresholdEqualsFixedHalf) {
  auto w = tiny_world(8);
  AlpcHyper h = small_hyper();
  auto ctx = make_context(h, w.g, w.se, w.co);
  AlpcModel m(6, h, 1);
  scramble(m, 3, 1.0);
  m.param("th.w2").value.setZero();
  m.param("th.b2").value.setZero();
  EntityGraph cand(12);
  for (int u = 0; u < 12; ++u)
    for (int v = u + 1; v < 12; ++v) cand.set_edge(u, v, 0.5, Provenance::semantic);
  const Mat z = embed(m, ctx);
  {
    std::vector<double> best;
    for (const auto& e : cand.canonical_edges()) {
      auto sc = score_pairs(m, z, {{e.src, e.dst, 0}, {e.dst, e.src, 0}});
      best.push_back(std::max(sc.s[0], sc.s[1]));
    }
    // cut between two distinct scores so both outcomes occur
    std::sort(best.begin(), best.end());
    best.erase(std::unique(best.begin(), best.end()), best.end());
    ASSERT_GE(best.size(), 2u);
    const std::size_t k = best.size() / 2;
    m.param("g.b2").value(0, 0) -= 0.5 * (best[k - 1] + best[k]);
  }
  auto got = filter_edges(m, ctx, cand);
  std::size_t kept = 0;
  for (const auto& e : cand.canonical_edges()) {
    auto sc = score_pairs(m, z, {{e.src, e.dst, 0}, {e.dst, e.src, 0}});
    const bool keep = nk::stable_sigmoid(sc.s[0]) >= 0.5 || nk::stable_sigmoid(sc.s[1]) >= 0.5;
    EXPECT_EQ(got.has_edge(e.src, e.dst), keep);
    kept += keep;
    if (keep) {
      EXPECT_EQ(got.find(e.src, e.dst)->provenance, Provenance::ranked);
      EXPECT_EQ(got.find(e.src, e.dst)->score, nk::stable_sigmoid(std::max(sc.s[0], sc.s[1])));
    }
  }
  EXPECT_GT(kept, 0u);
  EXPECT_LT(kept, cand.n_edges());
}

TEST(Metrics, AucExamples) {
  EXPECT_EQ(auc({0.9, 0.8}, {0.1, 0.2}), 1.0);
  EXPECT_EQ(auc({0.5, 0.5, 0.5}, {0.5, 0.5}), 0.5);
  EXPECT_THROW(auc({}, {0.1}), Error);
}

TEST(Metrics, AucMatchesPairCountOracle) {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> pos, neg;
    for (int i = 0; i < 20; ++i) (rng.below(2) ? pos : neg).push_back(static_cast<double>(rng.below(6)) / 5.0);
    if (pos.empty() || neg.empty()) continue;
    double wins = 0;
    for (double p : pos)
      for (double n : neg) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
    EXPECT_EQ(auc(pos, neg), wins / static_cast<double>(pos.size() * neg.size()));
  }
}

TEST(Training, ZeroEpochsReturnsInitialization) {
  auto w = datagen::gen_world(60, 2, 0.3, 0.02, 30, 10, 1);
  auto split = datagen::split_edges(w.truth_graph, 0.1, 1, 2);
  Rng rng(3);
  auto co = random_table(60, 4, rng);
  AlpcHyper h = small_hyper();
  h.epochs = 0;
  auto m = train_alpc(split, w.truth_graph, w.semantic_vectors, co, h, 5);
  Rng root(5);
  AlpcModel init(w.semantic_vectors.dim() + 4, h, root.next_u64());
  EXPECT_EQ(m, init);
}

TEST(Training, InitialLossComposition) {
  auto w = tiny_world(9);
  AlpcHyper h = small_hyper();
  auto ctx = make_context(h, w.g, w.se, w.co);
  AlpcModel m(6, h, 2);
  Tape t;
  auto pv = bind(t, m, false);
  Var z = encode_all(t, m, pv, ctx);
  auto l = batch_losses(t, m, pv, z, index_pairs(w.pairs, 0, w.pairs.size()), w.anchors);
  EXPECT_NEAR(l.pred.scalar(), std::log(2.0), 1e-12);
  EXPECT_NEAR(l.th.scalar(), std::log(2.0), 1e-12);
  EXPECT_NEAR(l.total.scalar(), 2 * std::log(2.0) + l.cl.scalar(), 1e-12);
  // Normalised encodings bound the logits by 1/tau around the uniform value.
  EXPECT_LT(std::abs(l.cl.scalar() - std::log(3.0)), 2.0 / h.tau);
}

TEST(Training, LearnsSmallPlantedWorldDeterministically) {
  auto w = datagen::gen_world(150, 3, 0.15, 0.005, 300, 20, 4);
  auto split = datagen::split_edges(w.truth_graph, 0.1, 3, 5);
  candgen::SgnsConfig sc;
  sc.dim = 16;
  auto eco = candgen::train_sgns(w.sequences, w.lexicon, sc, 6);
  auto cand = candgen::generate_candidates(eco, w.semantic_vectors, 20, 0.5);
  AlpcHyper h;
  h.hidden = 16;
  h.epochs = 15;
  h.batch = 128;
  TrainReport rep;
  auto m = train_alpc(split, cand, w.semantic_vectors, eco, h, 7, &rep);
  EXPECT_FALSE(rep.train_loss.empty());
  EXPECT_EQ(rep.train_loss.size(), rep.val_loss.size());
  EXPECT_LT(rep.val_loss.back(), rep.val_loss.front());
  auto ctx = make_context(h, split.observed_graph, w.semantic_vectors, eco);
  auto r = evaluate(m, ctx, split.test_pos, split.test_neg);
  EXPECT_GT(r.auc, 0.8);
  auto again = train_alpc(split, cand, w.semantic_vectors, eco, h, 7);
  EXPECT_EQ(m, again);
}

TEST(Training, NonFiniteInputAborts) {
  auto w = datagen::gen_world(40, 2, 0.3, 0.02, 10, 5, 1);
  auto split = datagen::split_edges(w.truth_graph, 0.2, 1, 2);
  auto se = w.semantic_vectors;
  se(3, 0) = std::nan("");
  AlpcHyper h = small_hyper();
  h.epochs = 2;
  EXPECT_THROW(train_alpc(split, w.truth_graph, se, w.semantic_vectors, h, 1), Error);
}

TEST(ModelFile, RoundTripAndRejections) {
  AlpcHyper h = small_hyper();
  h.encoder = EncoderKind::mean;
  h.alpha = 0.25;
  AlpcModel m(6, h, 4);
  scramble(m, 5);
  auto dir = std::filesystem::temp_directory_path() / "egl_test_model";
  save_model(m, dir / "m.bin");
  auto back = load_model(dir / "m.bin");
  EXPECT_EQ(back, m);
  EXPECT_EQ(back.hyper.alpha, 0.25);
  EXPECT_EQ(back.hyper.encoder, EncoderKind::mean);

  std::ofstream(dir / "bad.bin", std::ios::binary) << "NOTAMODEL";
  EXPECT_THROW(load_model(dir / "bad.bin"), Error);
  {
    std::fstream f(dir / "m.bin", std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(8);
    const std::uint32_t v = 99;
    f.write(reinterpret_cast<const char*>(&v), 4);
  }
  EXPECT_THROW(load_model(dir / "m.bin"), Error);
}
