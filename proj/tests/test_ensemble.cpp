#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "egl/ensemble.hpp"
#include "gradcheck.hpp"

using namespace egl;
using namespace egl::ensemble;

namespace {

SnapshotStack random_stack(std::size_t s, Index n, Index d, Rng& rng) {
  SnapshotStack st;
  for (std::size_t i = 0; i < s; ++i) st.z.push_back(egl::testing::random_mat(n, d, rng));
  return st;
}

void scramble(EnsembleModel& m, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& p : m.params)
    for (Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = 0.5 * rng.normal();
}

std::vector<Mat> values_of(const EnsembleModel& m) {
  std::vector<Mat> out;
  for (const auto& p : m.params) out.push_back(p.value);
  return out;
}

// Token-by-token attention, pooling and head, written without the tape.
double naive_logit(EnsembleModel& m, const SnapshotStack& st, PairExample p) {
  const auto S = static_cast<Index>(m.snapshots), D = static_cast<Index>(m.dim);
  const auto H = static_cast<Index>(m.hyper.heads), dh = D / H;
  Mat x(2 * S, D);
  for (Index s = 0; s < S; ++s) {
    x.row(s) = st.z[static_cast<std::size_t>(s)].row(p.src) + m.param("tag").value.row(0);
    x.row(S + s) = st.z[static_cast<std::size_t>(s)].row(p.dst) + m.param("tag").value.row(1);
  }
  const Mat q = x * m.param("mha.wq").value, k = x * m.param("mha.wk").value, v = x * m.param("mha.wv").value;
  Mat cat = Mat::Zero(2 * S, D);
  for (Index h = 0; h < H; ++h)
    for (Index i = 0; i < 2 * S; ++i) {
      std::vector<double> w(static_cast<std::size_t>(2 * S));
      double mx = -1e300;
      for (Index j = 0; j < 2 * S; ++j) {
        double dot = 0;
        for (Index c = 0; c < dh; ++c) dot += q(i, h * dh + c) * k(j, h * dh + c);
        w[static_cast<std::size_t>(j)] = dot / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, w[static_cast<std::size_t>(j)]);
      }
      double z = 0;
      for (double& a : w) z += (a = std::exp(a - mx));
      for (Index j = 0; j < 2 * S; ++j)
        for (Index c = 0; c < dh; ++c) cat(i, h * dh + c) += w[static_cast<std::size_t>(j)] / z * v(j, h * dh + c);
    }
  Mat att = cat * m.param("mha.wo").value;
  for (Index i = 0; i < 2 * S; ++i) att.row(i) += m.param("mha.bo").value.row(0);
  Mat pooled = att.colwise().mean();
  Mat hid = (pooled * m.param("head.w1").value + m.param("head.b1").value).cwiseMax(0.0);
  return (hid * m.param("head.w2").value)(0, 0) + m.param("head.b2").value(0, 0);
}

datagen::DataSplit tiny_split(Index n, Rng& rng) {
  datagen::DataSplit s;
  for (int i = 0; i < 200; ++i) {
    const auto u = static_cast<EntityId>(rng.below(static_cast<std::uint64_t>(n)));
    auto v = static_cast<EntityId>(rng.below(static_cast<std::uint64_t>(n)));
    if (u == v) v = (v + 1) % static_cast<EntityId>(n);
    (i % 2 ? s.train_pos : s.train_neg).push_back({u, v, i % 2});
  }
  s.observed_graph = EntityGraph(static_cast<std::size_t>(n));
  return s;
}

}  // namespace

TEST(Stack, RejectsSingleSnapshot) {
  Rng rng(1);
  EXPECT_THROW(random_stack(1, 5, 4, rng).validate(), Error);
  auto st = random_stack(2, 5, 4, rng);
  st.z[1] = Mat::Zero(6, 4);
  EXPECT_THROW(st.validate(), Error);
}

TEST(Stack, SlotsEqualDirectEncoding) {
  auto w = datagen::gen_world(100, 4, 0.2, 0.01, 5, 5, 2);
  Rng rng(3);
  EmbeddingTable co(100, 4);
  for (auto& v : co.data()) v = rng.normal();
  alpc::AlpcHyper h;
  h.hidden = 8;
  auto ctx = alpc::make_context(h, w.truth_graph, w.semantic_vectors, co);
  std::vector<alpc::AlpcModel> models;
  for (std::uint64_t s = 0; s < 3; ++s) models.emplace_back(static_cast<std::size_t>(ctx.x.cols()), h, 10 + s);
  auto st = stack_snapshots(models, ctx);
  ASSERT_EQ(st.snapshots(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    const Mat direct = alpc::embed(models[i], ctx);
    for (Index e = 0; e < 100; e += 10) EXPECT_EQ(st.z[i].row(e), direct.row(e));
  }
  std::vector<alpc::AlpcModel> twins{models[0], models[0]};
  auto same = stack_snapshots(twins, ctx);
  EXPECT_EQ(same.z[0], same.z[1]);
  std::vector<alpc::AlpcModel> one{models[0]};
  EXPECT_THROW(stack_snapshots(one, ctx), Error);
}

TEST(Forward, ZeroHeadGivesHalf) {
  Rng rng(2);
  auto st = random_stack(3, 10, 4, rng);
  EnsembleModel m(3, 4, EnsembleHyper{}, 5);
  for (double y : predict(m, st, {{0, 1, 0}, {4, 9, 1}})) EXPECT_EQ(y, 0.5);
}

TEST(Forward, MatchesNaiveReference) {
  Rng rng(4);
  auto st = random_stack(3, 12, 6, rng);
  for (std::size_t heads : {1, 2, 3}) {
    EnsembleHyper h;
    h.heads = heads;
    h.hidden = 5;
    EnsembleModel m(3, 6, h, 7);
    scramble(m, 8 + heads);
    std::vector<PairExample> pairs{{0, 1, 0}, {5, 2, 0}, {11, 3, 0}, {3, 11, 0}};
    auto y = predict(m, st, pairs);
    for (std::size_t i = 0; i < pairs.size(); ++i)
      EXPECT_NEAR(y[i], nk::stable_sigmoid(naive_logit(m, st, pairs[i])), 1e-10);
  }
}

TEST(Forward, TagsBreakEndpointSymmetry) {
  Rng rng(5);
  auto st = random_stack(2, 4, 4, rng);
  EnsembleModel m(2, 4, EnsembleHyper{}, 1);
  scramble(m, 2);
  auto y = predict(m, st, {{0, 1, 0}, {1, 0, 0}});
  EXPECT_NE(y[0], y[1]);
  m.param("tag").value.row(1) = m.param("tag").value.row(0);
  y = predict(m, st, {{0, 1, 0}, {1, 0, 0}});
  EXPECT_NEAR(y[0], y[1], 1e-14);
}

TEST(Forward, RejectsIndivisibleHeads) {
  EnsembleHyper h;
  h.heads = 3;
  EXPECT_THROW(EnsembleModel(2, 4, h, 1), Error);
}

TEST(Head, GradientsMatchFiniteDifferences) {
  Rng rng(6);
  auto st = random_stack(2, 8, 4, rng);
  EnsembleHyper h;
  h.hidden = 3;
  EnsembleModel m(2, 4, h, 3);
  scramble(m, 4);
  std::vector<PairExample> pairs{{0, 1, 1}, {2, 3, 0}, {7, 4, 1}, {5, 6, 0}};
  const Mat tokens = pair_tokens(st, pairs);
  auto res = egl::testing::gradcheck(
      [&](Tape& t, const std::vector<Var>& pv) {
        return nk::bce_with_logits(forward(m, pv, t.constant(tokens)), alpc::labels_of(pairs));
      },
      values_of(m), 1e-5, 20, 9);
  EXPECT_LT(res.max_rel_error, 1e-4);
}

TEST(Export, UnitNormConcatenation) {
  Rng rng(7);
  auto st = random_stack(3, 20, 5, rng);
  auto he = export_embeddings(st);
  ASSERT_EQ(he.dim(), 15u);
  for (std::size_t e = 0; e < 20; ++e) {
    double n = 0;
    for (std::size_t k = 0; k < 15; ++k) n += he(e, k) * he(e, k);
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-9);
    // direction preserved: ratio of first coordinates of slot 0 and slot 2
    EXPECT_NEAR(he(e, 0) * st.z[2](static_cast<Index>(e), 0), he(e, 10) * st.z[0](static_cast<Index>(e), 0), 1e-12);
  }
}

TEST(Training, ZeroEpochsKeepsInitAndExport) {
  Rng rng(8);
  auto st = random_stack(2, 30, 4, rng);
  auto split = tiny_split(30, rng);
  EnsembleHyper h;
  h.epochs = 0;
  auto m = train_ensemble(st, split, h, 11);
  Rng root(11);
  EXPECT_EQ(m, EnsembleModel(2, 4, h, root.next_u64()));
  EXPECT_EQ(export_embeddings(st).rows(), 30u);
}

TEST(Training, LearnsSeparableSignalDeterministically) {
  // label = 1 when both endpoints share the sign of their first coordinate
  Rng rng(9);
  const Index n = 60;
  auto st = random_stack(2, n, 4, rng);
  st.z[1] = st.z[0] + 0.1 * egl::testing::random_mat(n, 4, rng);
  datagen::DataSplit split;
  split.observed_graph = EntityGraph(n);
  for (int i = 0; i < 800; ++i) {
    const auto u = static_cast<EntityId>(rng.below(n)), v = static_cast<EntityId>(rng.below(n));
    const int y = (st.z[0](u, 0) > 0) == (st.z[0](v, 0) > 0);
    (y ? split.train_pos : split.train_neg).push_back({u, v, y});
  }
  EnsembleHyper h;
  h.hidden = 16;
  h.epochs = 60;
  h.batch = 64;
  h.patience = 60;
  EnsembleReport rep;
  auto m = train_ensemble(st, split, h, 3, &rep);
  EXPECT_LT(rep.val_loss.back(), 0.5 * rep.val_loss.front());
  auto r = evaluate(m, st, split.train_pos, split.train_neg);
  EXPECT_GT(r.auc, 0.9);
  EXPECT_EQ(m, train_ensemble(st, split, h, 3));
}

TEST(Training, NonFiniteSnapshotsRejected) {
  Rng rng(10);
  auto st = random_stack(2, 30, 4, rng);
  st.z[0](3, 1) = std::nan("");
  auto split = tiny_split(30, rng);
  EXPECT_THROW(train_ensemble(st, split, EnsembleHyper{}, 1), Error);
}

TEST(Bootstrap, ResamplesWithinEachLabel) {
  Rng rng(11);
  auto split = tiny_split(30, rng);
  Rng b(4);
  auto boot = bootstrap_split(split, b);
  EXPECT_EQ(boot.train_pos.size(), split.train_pos.size());
  EXPECT_EQ(boot.train_neg.size(), split.train_neg.size());
  for (const auto& p : boot.train_pos) EXPECT_NE(std::find(split.train_pos.begin(), split.train_pos.end(), p), split.train_pos.end());
  EXPECT_NE(boot.train_pos, split.train_pos);
}

TEST(Stability, NoiseFreeDrawsHaveZeroVariance) {
  auto w = datagen::gen_world(60, 2, 0.3, 0.02, 5, 5, 2);
  auto split = datagen::split_edges(w.truth_graph, 0.2, 1, 3);
  alpc::AlpcHyper h;
  h.hidden = 4;
  auto ctx = alpc::make_context(h, split.observed_graph, w.semantic_vectors, w.semantic_vectors);
  std::vector<alpc::AlpcModel> models;
  for (std::uint64_t s = 0; s < 2; ++s) models.emplace_back(static_cast<std::size_t>(ctx.x.cols()), h, s);
  auto st = stack_snapshots(models, ctx);
  EnsembleHyper eh;
  eh.hidden = 4;
  EnsembleModel ens(2, 4, eh, 1);
  auto rep = perturbation_stability(ens, models, st, split.test_pos, split.test_neg, 0.0, 3, 5);
  EXPECT_EQ(rep.ensemble_variance, 0.0);
  EXPECT_EQ(rep.mean_single_variance, 0.0);
  EXPECT_EQ(rep.single_acc.size(), 2u);
  EXPECT_EQ(rep.ensemble_acc.size(), 3u);
}

TEST(EnsembleFile, RoundTripAndRejections) {
  EnsembleHyper h;
  h.heads = 1;
  h.hidden = 7;
  EnsembleModel m(3, 5, h, 2);
  scramble(m, 3);
  auto dir = std::filesystem::temp_directory_path() / "egl_test_ensemble";
  save_ensemble(m, dir / "e.bin");
  auto back = load_ensemble(dir / "e.bin");
  EXPECT_EQ(back, m);
  EXPECT_EQ(back.hyper.hidden, 7u);
  std::ofstream(dir / "bad.bin", std::ios::binary) << "EGLALPC";
  EXPECT_THROW(load_ensemble(dir / "bad.bin"), Error);
}
