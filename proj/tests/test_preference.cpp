#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "egl/preference.hpp"

using namespace egl;
using namespace egl::preference;

namespace {

EmbeddingTable random_table(std::size_t n, std::size_t d, Rng& rng) {
  EmbeddingTable t(n, d);
  for (auto& v : t.data()) v = rng.normal();
  return t;
}

UserEntitySequence seq_of(UserId u, std::vector<EntityId> ents) {
  UserEntitySequence s{u, {}};
  std::int64_t ts = 0;
  for (auto e : ents) s.events.push_back({ts++, e});
  return s;
}

std::vector<UserEntitySequence> random_sequences(std::size_t users, std::size_t n_ent, Rng& rng) {
  std::vector<UserEntitySequence> out;
  for (std::size_t u = 0; u < users; ++u) {
    std::vector<EntityId> ents;
    const auto len = 1 + rng.below(12);
    for (std::uint64_t i = 0; i < len; ++i) ents.push_back(static_cast<EntityId>(rng.below(n_ent)));
    out.push_back(seq_of(static_cast<UserId>(1000 + 7 * u), ents));
  }
  return out;
}

}  // namespace

TEST(UserEmbedding, SingleEntityIsIdentity) {
  Rng rng(1);
  auto he = random_table(5, 4, rng);
  auto r = build_user_embedding(seq_of(1, {3}), he);
  EXPECT_EQ(r, he.row_vec(3));
}

TEST(UserEmbedding, OppositeVectorsCancel) {
  EmbeddingTable he(2, 3);
  for (std::size_t k = 0; k < 3; ++k) {
    he(0, k) = 0.25 * static_cast<double>(k + 1);
    he(1, k) = -he(0, k);
  }
  for (double x : build_user_embedding(seq_of(1, {0, 1}), he)) EXPECT_EQ(x, 0.0);
}

TEST(UserEmbedding, MatchesNaiveMean) {
  Rng rng(2);
  auto he = random_table(20, 6, rng);
  std::vector<EntityId> ents{1, 4, 4, 7, 0, 19, 3, 3, 12, 8};
  auto r = build_user_embedding(seq_of(9, ents), he);
  for (std::size_t k = 0; k < 6; ++k) {
    double s = 0;
    for (auto e : ents) s += he(static_cast<std::size_t>(e), k);
    EXPECT_NEAR(r[k], s / 10.0, 1e-12);
  }
  EXPECT_THROW(build_user_embedding(seq_of(2, {}), he), Error);
  EXPECT_THROW(build_user_embedding(seq_of(2, {20}), he), Error);
}

TEST(Score, DotProductCases) {
  EmbeddingTable he(2, 2);
  he(0, 0) = 1;
  he(1, 1) = 1;
  EXPECT_EQ(preference_score({1.0, 0.0}, he.row(1), 2), 0.0);
  EXPECT_EQ(preference_score({1.0, 0.0}, he.row(0), 2), 1.0);
  Rng rng(3);
  auto t = random_table(1, 9, rng);
  std::vector<double> r(9);
  double want = 0;
  for (std::size_t k = 0; k < 9; ++k) {
    r[k] = rng.normal();
    want += r[k] * t(0, k);
  }
  EXPECT_NEAR(preference_score(r, t.row(0), 9), want, 1e-12);
  EXPECT_THROW(preference_score({1.0}, t.row(0), 9), Error);
}

TEST(Index, SkipsEmptySequences) {
  Rng rng(4);
  auto he = random_table(5, 3, rng);
  std::vector<std::string> skipped;
  auto idx = build_index({seq_of(1, {0}), seq_of(2, {}), seq_of(3, {1, 2})}, he, &skipped);
  EXPECT_EQ(idx.user_ids, (std::vector<UserId>{1, 3}));
  EXPECT_EQ(skipped.size(), 1u);
}

TEST(Targeting, HandCases) {
  EmbeddingTable he(1, 1);
  he(0, 0) = 1.0;
  PreferenceIndex idx{{7, 8}, EmbeddingTable(2, 1), he};
  idx.users(0, 0) = 0.1;
  idx.users(1, 0) = 0.9;
  auto top = target_users(idx, {0}, 1);
  ASSERT_EQ(top.size(), 1u);
  EXPECT_EQ(top[0].user_id, 8);
  EXPECT_EQ(target_users(idx, {0}, 10).size(), 2u);

  PreferenceIndex flat{{5, 3, 9, 1}, EmbeddingTable(4, 1), he};
  auto ties = target_users(flat, {0}, 3);
  EXPECT_EQ(ties[0].user_id, 1);
  EXPECT_EQ(ties[1].user_id, 3);
  EXPECT_EQ(ties[2].user_id, 5);
}

TEST(Targeting, Rejections) {
  Rng rng(5);
  auto he = random_table(4, 2, rng);
  auto idx = build_index({seq_of(1, {0})}, he);
  EXPECT_THROW(target_users(idx, {}, 3), Error);
  EXPECT_THROW(target_users(idx, {0}, 0), Error);
  try {
    target_users(idx, {0, 17}, 3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("17"), std::string::npos);
  }
}

TEST(Targeting, EqualsFullScanOracle) {
  Rng rng(6);
  auto he = random_table(200, 16, rng);
  he.normalize_rows();
  auto idx = build_index(random_sequences(500, 200, rng), he);
  for (int t = 0; t < 20; ++t) {
    std::vector<EntityId> q;
    for (int i = 0; i < 3; ++i) q.push_back(static_cast<EntityId>(rng.below(200)));
    EXPECT_EQ(target_users(idx, q, 25), datagen::oracle_topk_users(idx.user_ids, idx.users, idx.entities, q, 25));
  }
}

TEST(Targeting, QueryMeanIsMeanOfSingleScores) {
  Rng rng(7);
  auto he = random_table(30, 5, rng);
  auto idx = build_index(random_sequences(40, 30, rng), he);
  std::vector<EntityId> q{2, 11, 29, 4};
  auto all = target_users(idx, q, 40);
  for (const auto& ru : all) {
    const auto u = static_cast<std::size_t>(std::find(idx.user_ids.begin(), idx.user_ids.end(), ru.user_id) - idx.user_ids.begin());
    double s = 0;
    for (auto e : q) s += preference_score(idx.users.row_vec(u), idx.entities.row(static_cast<std::size_t>(e)), 5);
    EXPECT_NEAR(ru.score, s / 4.0, 1e-12);
  }
  // |Q| = 1 equals sorting by preference score
  auto single = target_users(idx, {6}, 40);
  for (std::size_t i = 1; i < single.size(); ++i) EXPECT_GE(single[i - 1].score, single[i].score);
}

TEST(Targeting, OrderInvariantToPositiveScaling) {
  Rng rng(8);
  auto he = random_table(50, 4, rng);
  auto idx = build_index(random_sequences(100, 50, rng), he);
  auto scaled = idx;
  for (auto& v : scaled.users.data()) v *= 4.0;
  for (auto& v : scaled.entities.data()) v *= 4.0;
  auto a = target_users(idx, {1, 2}, 30), b = target_users(scaled, {1, 2}, 30);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].user_id, b[i].user_id);
}

TEST(IndexFile, RoundTripAndRejections) {
  Rng rng(9);
  auto he = random_table(30, 6, rng);
  auto idx = build_index(random_sequences(25, 30, rng), he);
  auto dir = std::filesystem::temp_directory_path() / "egl_test_index";
  save_index(idx, dir / "index.bin");
  EXPECT_EQ(load_index(dir / "index.bin"), idx);
  std::filesystem::resize_file(dir / "index.bin", 100);
  EXPECT_THROW(load_index(dir / "index.bin"), Error);
  std::ofstream(dir / "bad.bin") << "hello";
  EXPECT_THROW(load_index(dir / "bad.bin"), Error);
}
