#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "picoframe/hnsw.hpp"

using namespace picoframe;

namespace {

HnswIndex build(const std::vector<NamedEmbedding>& vecs, HnswParams params = {}) {
  HnswIndex idx(params);
  for (const auto& v : vecs) idx.add(v.id, v.vector.view());
  return idx;
}

std::vector<std::string> ids_of(const HnswIndex& idx, const std::vector<HnswIndex::Hit>& hits) {
  std::vector<std::string> out;
  for (const auto& h : hits) out.push_back(idx.id(h.node));
  return out;
}

double recall_at(const HnswIndex& idx, const std::vector<NamedEmbedding>& data,
                 const std::vector<NamedEmbedding>& queries, std::size_t k, std::size_t ef) {
  std::size_t found = 0, total = 0;
  for (const auto& q : queries) {
    auto truth = pftest::brute_force_knn(data, q.vector.values, k);
    auto got = ids_of(idx, idx.search(q.vector.view(), k, std::nullopt, ef));
    std::set<std::string> g(got.begin(), got.end());
    for (const auto& t : truth) found += g.count(t);
    total += truth.size();
  }
  return static_cast<double>(found) / static_cast<double>(total);
}

std::vector<float> vec(std::initializer_list<float> v) { return v; }

}  // namespace

TEST(Cosine, Examples) {
  EXPECT_DOUBLE_EQ(cosine_similarity(vec({1, 0}), vec({1, 0})), 1.0);
  EXPECT_DOUBLE_EQ(cosine_similarity(vec({1, 0}), vec({0, 1})), 0.0);
  // dot = 2 + 2 + 4 = 8, |a| = |b| = 3
  EXPECT_NEAR(cosine_similarity(vec({1, 2, 2}), vec({2, 1, 2})), 8.0 / 9.0, 1e-12);
  EXPECT_NEAR(cosine_similarity(vec({1, 2, 2}), vec({2, 1, 2})), 0.8889, 5e-5);
}

TEST(Cosine, Errors) {
  EXPECT_THROW(cosine_similarity(vec({1, 0}), vec({1, 0, 0})), DataError);
  EXPECT_THROW(cosine_similarity(vec({0, 0}), vec({1, 0})), DataError);
}

TEST(HnswIndex, EmptyAndSingle) {
  HnswIndex empty;
  EXPECT_TRUE(empty.search(vec({1, 2}), 5).empty());

  HnswIndex one;
  one.add("only", vec({0.3f, -1.0f}));
  for (auto q : {vec({1, 0}), vec({-5, 2}), vec({0, 1})}) {
    auto hits = one.search(q, 3);
    ASSERT_EQ(hits.size(), 1u);
    EXPECT_EQ(one.id(hits[0].node), "only");
  }
  EXPECT_TRUE(one.search(vec({1, 0}), 0).empty());
}

TEST(HnswIndex, ColinearEntriesRankFirst) {
  HnswIndex idx;
  idx.add("e1", vec({1, 0, 0}));
  idx.add("e2", vec({0, 1, 0}));
  idx.add("e3", vec({0.9f, 0, 0}));
  auto hits = idx.search(vec({1, 0, 0}), 2);
  EXPECT_EQ(ids_of(idx, hits), (std::vector<std::string>{"e1", "e3"}));
  EXPECT_DOUBLE_EQ(hits[1].similarity, 1.0);
}

TEST(HnswIndex, Errors) {
  HnswIndex idx;
  idx.add("a", vec({1, 0}));
  EXPECT_THROW(idx.add("a", vec({0, 1})), DataError);
  EXPECT_THROW(idx.add("b", vec({0, 1, 0})), DataError);
  EXPECT_THROW(idx.add("c", vec({0, 0})), DataError);
  EXPECT_THROW(idx.add("d", vec({NAN, 1})), DataError);
  EXPECT_THROW(idx.add("e", vec({})), DataError);
  EXPECT_THROW(idx.search(vec({1, 0, 0}), 1), DataError);
  EXPECT_EQ(idx.size(), 1u);
  EXPECT_THROW(HnswIndex(HnswParams{.m = 1}), UsageError);
  EXPECT_THROW((HnswIndex(HnswParams{.m = 16, .ef_construction = 4})), UsageError);
}

TEST(HnswIndex, ExactWhenEfCoversIndex) {
  for (std::size_t n : {2u, 5u, 17u, 40u, 64u}) {
    auto data = pftest::random_embeddings(n, 8, 100 + n);
    auto queries = pftest::random_embeddings(20, 8, 900 + n, "q");
    auto idx = build(data, {.m = 4, .ef_construction = 16});
    for (const auto& q : queries) {
      const std::size_t k = std::min<std::size_t>(10, n);
      auto truth = pftest::brute_force_knn(data, q.vector.values, k);
      EXPECT_EQ(ids_of(idx, idx.search(q.vector.view(), k, std::nullopt, n)), truth) << "n=" << n;
    }
  }
}

TEST(HnswIndex, GraphSearchRecallOnSmallIndex) {
  auto data = pftest::random_embeddings(64, 8, 7);
  auto queries = pftest::random_embeddings(50, 8, 8, "q");
  auto idx = build(data, {.m = 4, .ef_construction = 32});
  // ef below n takes the graph path.
  EXPECT_GE(recall_at(idx, data, queries, 5, 32), 0.95);
}

TEST(HnswIndex, RecallAt10OnRandomVectors) {
  auto data = pftest::random_embeddings(1000, 32, 11);
  auto queries = pftest::random_embeddings(100, 32, 12, "q");
  auto idx = build(data);
  EXPECT_GE(recall_at(idx, data, queries, 10, 64), 0.95);
}

TEST(HnswIndex, RecallGrowsWithEf) {
  auto data = pftest::random_embeddings(800, 24, 21);
  auto queries = pftest::random_embeddings(100, 24, 22, "q");
  auto idx = build(data, {.m = 6, .ef_construction = 40});
  double prev = 0.0;
  for (std::size_t ef : {10u, 20u, 40u, 80u, 160u, 800u}) {
    const double r = recall_at(idx, data, queries, 10, ef);
    EXPECT_GE(r, prev - 0.01) << "ef=" << ef;
    prev = r;
  }
  EXPECT_DOUBLE_EQ(prev, 1.0);
}

TEST(HnswIndex, QueryScaleInvariance) {
  auto data = pftest::random_embeddings(300, 16, 31);
  auto idx = build(data);
  for (const auto& q : pftest::random_embeddings(20, 16, 32, "q")) {
    auto scaled = q.vector.values;
    for (auto& x : scaled) x *= 8.0f;
    EXPECT_EQ(ids_of(idx, idx.search(q.vector.view(), 10)), ids_of(idx, idx.search(scaled, 10)));
  }
}

TEST(HnswIndex, DeterministicPerSeed) {
  auto data = pftest::random_embeddings(400, 16, 41);
  auto a = build(data, {.seed = 5});
  auto b = build(data, {.seed = 5});
  ASSERT_EQ(a.max_level(), b.max_level());
  for (std::size_t n = 0; n < a.size(); ++n) {
    ASSERT_EQ(a.level(n), b.level(n));
    for (int l = 0; l <= a.level(n); ++l) ASSERT_EQ(a.neighbors(n, l), b.neighbors(n, l));
  }
  auto c = build(data, {.seed = 6});
  bool differs = false;
  for (std::size_t n = 0; n < a.size(); ++n) differs = differs || a.level(n) != c.level(n);
  EXPECT_TRUE(differs);
}

TEST(HnswIndex, DegreeBoundsAndLinkValidity) {
  auto data = pftest::random_embeddings(600, 12, 51);
  auto idx = build(data, {.m = 5, .ef_construction = 30});
  for (std::size_t n = 0; n < idx.size(); ++n) {
    for (int l = 0; l <= idx.level(n); ++l) {
      const auto& nb = idx.neighbors(n, l);
      EXPECT_LE(nb.size(), idx.max_degree(l));
      std::set<std::uint32_t> uniq(nb.begin(), nb.end());
      EXPECT_EQ(uniq.size(), nb.size());
      for (auto m : nb) {
        EXPECT_NE(m, n);
        EXPECT_GE(idx.level(m), l);
      }
    }
    if (idx.size() > 1) {
      EXPECT_FALSE(idx.neighbors(n, 0).empty());
    }
  }
}

TEST(HnswIndex, LevelDistributionFollowsMultiplier) {
  auto data = pftest::random_embeddings(2000, 4, 61);
  auto idx = build(data, {.m = 16, .ef_construction = 16});
  std::size_t upper = 0;
  for (std::size_t n = 0; n < idx.size(); ++n) upper += idx.level(n) >= 1;
  // P(level >= 1) = exp(-1 / mL) = 1/m = 0.0625 -> 125 expected, sd about 11.
  EXPECT_GT(upper, 80u);
  EXPECT_LT(upper, 170u);
}

TEST(HnswIndex, ExcludeSkipsId) {
  auto data = pftest::random_embeddings(200, 8, 71);
  auto idx = build(data);
  for (std::size_t i = 0; i < 20; ++i) {
    const auto& self = data[i];
    auto hits = idx.search(self.vector.view(), 5, self.id);
    ASSERT_EQ(hits.size(), 5u);
    EXPECT_EQ(ids_of(idx, hits), pftest::brute_force_knn(data, self.vector.values, 5, self.id));
  }
}

TEST(HnswIndex, SaveLoadRoundTrip) {
  auto data = pftest::random_embeddings(300, 16, 81);
  auto idx = build(data, {.m = 8, .ef_construction = 50, .ef_search = 20, .seed = 9});
  std::stringstream buf;
  idx.save(buf);
  auto loaded = HnswIndex::load(buf);
  ASSERT_EQ(loaded.size(), idx.size());
  EXPECT_EQ(loaded.params().m, 8u);
  EXPECT_EQ(loaded.params().ef_search, 20u);
  EXPECT_EQ(loaded.max_level(), idx.max_level());
  for (std::size_t n = 0; n < idx.size(); ++n) {
    EXPECT_EQ(loaded.id(n), idx.id(n));
    for (int l = 0; l <= idx.level(n); ++l) EXPECT_EQ(loaded.neighbors(n, l), idx.neighbors(n, l));
  }
  for (const auto& q : pftest::random_embeddings(20, 16, 82, "q")) {
    auto a = idx.search(q.vector.view(), 7);
    auto b = loaded.search(q.vector.view(), 7);
    EXPECT_EQ(ids_of(idx, a), ids_of(loaded, b));
  }
  // A loaded index accepts further inserts.
  loaded.add("late", data[0].vector.view());
  EXPECT_EQ(loaded.size(), idx.size() + 1);
}

TEST(HnswIndex, LoadRejectsGarbage) {
  std::stringstream bad("NOTANINDEX and more bytes");
  EXPECT_THROW(HnswIndex::load(bad), DataError);
  auto idx = build(pftest::random_embeddings(10, 4, 1));
  std::stringstream buf;
  idx.save(buf);
  auto bytes = buf.str();
  std::stringstream truncated(bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(HnswIndex::load(truncated), DataError);
}
