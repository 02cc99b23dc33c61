#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "egl/core/config.hpp"
#include "egl/core/io.hpp"
#include "egl/core/rng.hpp"
#include "egl/core/types.hpp"

using namespace egl;

namespace {

EntityLexicon lex_from(const std::string& text) {
  std::istringstream in(text);
  return parse_lexicon(in);
}

}  // namespace

TEST(Lexicon, ParsesTwoEntities) {
  auto lex = lex_from("0\tnba\tsports\n1\tlakers\tsports\n");
  ASSERT_EQ(lex.size(), 2u);
  EXPECT_EQ(lex.at(1).name, "lakers");
  EXPECT_EQ(*lex.lookup("nba"), 0);
}

TEST(Lexicon, NormalizesNames) {
  auto lex = lex_from("0\t  NBA \tSports\n");
  EXPECT_EQ(lex.at(0).name, "nba");
  EXPECT_EQ(*lex.lookup(" Nba"), 0);
}

TEST(Lexicon, DuplicateNameReportsLine) {
  try {
    lex_from("0\tnba\tsports\n1\tNBA\tsports\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(Lexicon, NonContiguousIdsRejected) { EXPECT_THROW(lex_from("0\ta\tt\n2\tb\tt\n"), Error); }

TEST(Lexicon, EmptyFileIsEmptyLexicon) { EXPECT_EQ(lex_from("").size(), 0u); }

TEST(Lexicon, LookupInvariantHolds) {
  auto lex = lex_from("0\ta\tt\n1\tb\tt\n2\tnew york\tcity\n");
  for (const auto& e : lex.entities()) EXPECT_EQ(*lex.lookup(e.name), e.id);
}

TEST(Edges, SingleEdgeFormat) {
  EntityGraph g(2);
  g.set_edge(0, 1, 0.9, Provenance::ranked);
  std::ostringstream out;
  write_edges(g, out);
  EXPECT_EQ(out.str(), "0\t1\t0.900000\tranked\n");
  std::istringstream in(out.str());
  EXPECT_EQ(parse_edges(in, 2), g);
}

TEST(Edges, EmptyGraphRoundTrip) {
  EntityGraph g(3);
  std::ostringstream out;
  write_edges(g, out);
  EXPECT_TRUE(out.str().empty());
  std::istringstream in(out.str());
  EXPECT_EQ(parse_edges(in, 3), g);
}

TEST(Edges, UnknownIdRejected) {
  std::istringstream in("0\t99\t0.5\tranked\n");
  EXPECT_THROW(parse_edges(in, 2), Error);
}

TEST(Edges, RandomGraphRoundTripProperty) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    const std::size_t n = 30;
    EntityGraph g(n);
    for (int k = 0; k < 80; ++k) {
      auto u = static_cast<EntityId>(rng.below(n));
      auto v = static_cast<EntityId>(rng.below(n));
      if (u == v) continue;
      g.set_edge(u, v, quantize_score(rng.uniform()), static_cast<Provenance>(rng.below(4)));
    }
    validate(g);
    std::ostringstream out;
    write_edges(g, out);
    std::istringstream in(out.str());
    auto back = parse_edges(in, n);
    EXPECT_EQ(back, g);
    std::ostringstream again;
    write_edges(back, again);
    EXPECT_EQ(again.str(), out.str());
  }
}

TEST(Graph, RejectsSelfLoopAndBadScore) {
  EntityGraph g(3);
  EXPECT_THROW(g.set_edge(1, 1, 0.5, Provenance::ranked), Error);
  EXPECT_THROW(g.set_edge(0, 1, 1.5, Provenance::ranked), Error);
  EXPECT_THROW(g.set_edge(0, 7, 0.5, Provenance::ranked), Error);
}

TEST(Graph, SymmetricClosure) {
  EntityGraph g(4);
  g.set_edge(2, 0, 0.3, Provenance::semantic);
  g.set_edge(0, 3, 0.4, Provenance::semantic);
  EXPECT_TRUE(g.has_edge(0, 2));
  EXPECT_EQ(g.find(0, 2)->score, g.find(2, 0)->score);
  EXPECT_EQ(g.n_edges(), 2u);
  validate(g);
  g.remove_edge(0, 2);
  EXPECT_FALSE(g.has_edge(2, 0));
  validate(g);
}

TEST(Sequences, JsonLinesRoundTrip) {
  std::vector<UserEntitySequence> seqs = {{7, {{100, 1}, {100, 0}, {200, 2}}}, {9, {}}};
  std::ostringstream out;
  write_sequences(seqs, out);
  EXPECT_EQ(out.str().substr(0, out.str().find('\n')), R"({"events":[[100,1],[100,0],[200,2]],"user_id":7})");
  std::istringstream in(out.str());
  EXPECT_EQ(parse_sequences(in, 3), seqs);
}

TEST(Sequences, UnsortedOrUnknownRejected) {
  std::istringstream a(R"({"user_id":1,"events":[[5,0],[4,1]]})");
  EXPECT_THROW(parse_sequences(a, 3), Error);
  std::istringstream b(R"({"user_id":1,"events":[[5,9]]})");
  EXPECT_THROW(parse_sequences(b, 3), Error);
}

TEST(Embeddings, RoundTripExact) {
  Rng rng(3);
  EmbeddingTable t(5, 4);
  for (auto& v : t.data()) v = rng.normal();
  std::stringstream io;
  write_embeddings(t, io);
  std::vector<bool> present;
  auto back = parse_embeddings(io, 5, &present);
  EXPECT_EQ(back, t);
  for (bool p : present) EXPECT_TRUE(p);
}

TEST(Embeddings, ReportsMissingRows) {
  std::istringstream in("dim 2\n0 1 0\n");
  std::vector<bool> present;
  auto t = parse_embeddings(in, 2, &present);
  EXPECT_TRUE(present[0]);
  EXPECT_FALSE(present[1]);
  std::istringstream bad("dim 2\n0 1\n");
  EXPECT_THROW(parse_embeddings(bad, 2), Error);
}

TEST(Rng, SameSeedSameStream) {
  Rng a = seeded_rng(7), b = seeded_rng(7);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, DifferentSeedsDiffer) {
  Rng a = seeded_rng(7), b = seeded_rng(8);
  int same = 0;
  for (int i = 0; i < 100; ++i) same += a.next_u64() == b.next_u64();
  EXPECT_LT(same, 5);
}

TEST(Rng, UniformMeanLawOfLargeNumbers) {
  // Standard error of the mean is 0.289/1000 ≈ 3e-4, so [0.49, 0.51] is ~35 sigma.
  Rng r(11);
  double s = 0.0;
  for (int i = 0; i < 1'000'000; ++i) {
    double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    s += u;
  }
  const double m = s / 1e6;
  EXPECT_GT(m, 0.49);
  EXPECT_LT(m, 0.51);
}

TEST(Rng, BelowIsInRange) {
  Rng r(5);
  for (int i = 0; i < 1000; ++i) EXPECT_LT(r.below(7), 7u);
}

TEST(Config, DefaultsAndOverrides) {
  std::istringstream in("# comment\nalpha = 0.5\n tau=0.1 \n\nsemantic_mode = file\n");
  auto cfg = RunConfig::from_stream(in);
  EXPECT_DOUBLE_EQ(cfg.num("alpha"), 0.5);
  EXPECT_DOUBLE_EQ(cfg.num("tau"), 0.1);
  EXPECT_DOUBLE_EQ(cfg.num("beta"), 1.0);
  EXPECT_EQ(cfg.str("semantic_mode"), "file");
}

TEST(Config, RejectsUnknownAndOutOfRange) {
  RunConfig cfg;
  EXPECT_THROW(cfg.set("no_such_key", "1"), Error);
  EXPECT_THROW(cfg.set("tau", "0"), Error);
  EXPECT_THROW(cfg.set("alpha", "-1"), Error);
  EXPECT_THROW(cfg.set("layers", "abc"), Error);
  std::istringstream in("alpha 1\n");
  EXPECT_THROW(RunConfig::from_stream(in), Error);
}
