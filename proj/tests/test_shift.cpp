#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "deconf/corpus.hpp"
#include "deconf/errors.hpp"
#include "support/fixtures.hpp"
#include "support/properties.hpp"

using namespace deconf;
using namespace deconf::testing;

TEST(Conditionals, SolvesTheLinearSystem) {
  const Conditionals none = conditionals_from_alpha(1, 0.5, 0.5);
  EXPECT_DOUBLE_EQ(none.p1, 0.5);
  EXPECT_DOUBLE_EQ(none.p0, 0.5);
  const Conditionals three = conditionals_from_alpha(3, 0.5, 0.5);
  EXPECT_NEAR(three.p1, 0.75, 1e-15);
  EXPECT_NEAR(three.p0, 0.25, 1e-15);
  const Conditionals fifth = conditionals_from_alpha(0.2, 0.5, 0.5);
  EXPECT_NEAR(fifth.p1, 1.0 / 6.0, 1e-15);
  EXPECT_NEAR(fifth.p0, 5.0 / 6.0, 1e-15);
}

TEST(Conditionals, AlphaRoundTrips) {
  for (double a : {0.2, 1.0 / 3.0, 0.5, 1.0, 2.0, 3.0, 5.0}) {
    for (double pyc : {0.3, 0.5, 0.7}) {
      const Conditionals c = conditionals_from_alpha(a, 0.4, pyc);
      EXPECT_NEAR(c.p1 / c.p0, a, 1e-12);
      EXPECT_NEAR(pyc * c.p1 + (1 - pyc) * c.p0, 0.4, 1e-12);
    }
  }
}

TEST(Conditionals, InfeasibleIsDomainError) {
  EXPECT_THROW(conditionals_from_alpha(5, 0.9, 0.5), DomainError);
  EXPECT_THROW(conditionals_from_alpha(0, 0.5, 0.5), DomainError);
  EXPECT_THROW(conditionals_from_alpha(-1, 0.5, 0.5), DomainError);
  EXPECT_THROW(conditionals_from_alpha(2, 0.5, 1.5), DomainError);
}

TEST(Conditionals, SwappingGroupsInvertsAlpha) {
  for (double a : {0.2, 3.0, 5.0}) {
    const auto j = joint_from_alpha(a, 0.5, 0.5);
    const auto inv = joint_from_alpha(1 / a, 0.5, 0.5);
    for (int yp = 0; yp < 2; ++yp) {
      for (int yc = 0; yc < 2; ++yc) EXPECT_NEAR(j[cell_index(yp, yc)], inv[cell_index(yp, 1 - yc)], 1e-12);
    }
  }
}

TEST(LargestRemainder, MatchesWorkedCounts) {
  EXPECT_EQ(largest_remainder_counts(joint_from_alpha(3, 0.5, 0.5), 480),
            (std::array<std::size_t, 4>{180, 60, 60, 180}));
  const auto balanced = largest_remainder_counts(joint_from_alpha(1, 0.5, 0.5), 150);
  EXPECT_EQ(balanced, (std::array<std::size_t, 4>{38, 38, 37, 37}));
  EXPECT_EQ(largest_remainder_counts({0.25, 0.25, 0.25, 0.25}, 0), (std::array<std::size_t, 4>{0, 0, 0, 0}));
}

TEST(SampleSplit, ExactCountsOverTheAlphaGrid) {
  const Dataset pool = generate_pool(tiny_corpus());
  for (double a : {0.2, 1.0 / 3.0, 1.0, 3.0, 5.0}) {
    for (std::size_t n : {150u, 480u}) EXPECT_EQ(check_sampler(a, n, pool, 7), "") << a << " " << n;
  }
}

TEST(SampleSplit, IsDeterministicPerSeed) {
  const Dataset pool = generate_pool(tiny_corpus());
  ShiftConfig cfg;
  const Split a = sample_split(pool, 100, 3, cfg, 11), b = sample_split(pool, 100, 3, cfg, 11);
  const Split c = sample_split(pool, 100, 3, cfg, 12);
  EXPECT_EQ(a.examples, b.examples);
  EXPECT_EQ(a.draws, b.draws);
  EXPECT_NE(a.draws, c.draws);
}

TEST(SampleSplit, EmptyCellIsDataError) {
  Dataset pool = generate_pool(tiny_corpus());
  std::erase_if(pool, [](const Example& e) { return e.y_p == 1 && e.y_c == 0; });
  EXPECT_THROW(sample_split(pool, 40, 1, ShiftConfig{}, 0), DataError);
}

TEST(Benchmark, ReciprocalTestAndDisjointPartitions) {
  const Dataset pool = generate_pool(tiny_corpus());
  ShiftConfig cfg = ShiftConfig::reciprocal(5, 3);
  EXPECT_DOUBLE_EQ(cfg.alpha_test, 0.2);
  cfg.n_train = 120;
  cfg.n_valid = 60;
  cfg.n_test = 120;
  const Benchmark b = make_benchmark(pool, cfg);
  EXPECT_EQ(cell_counts(b.train.examples), largest_remainder_counts(joint_from_alpha(5, 0.5, 0.5), 120));
  EXPECT_EQ(cell_counts(b.valid.examples), largest_remainder_counts(joint_from_alpha(5, 0.5, 0.5), 60));
  EXPECT_EQ(cell_counts(b.test.examples), largest_remainder_counts(joint_from_alpha(0.2, 0.5, 0.5), 120));
  const auto balanced = cell_counts(b.balanced.examples);
  EXPECT_EQ(*std::max_element(balanced.begin(), balanced.end()) - *std::min_element(balanced.begin(), balanced.end()),
            0u);

  std::set<std::string> fit, held_out;
  for (const auto& e : b.train.examples) fit.insert(e.source_id);
  for (const auto& e : b.valid.examples) fit.insert(e.source_id);
  for (const auto& e : b.test.examples) held_out.insert(e.source_id);
  for (const auto& e : b.balanced.examples) held_out.insert(e.source_id);
  for (const auto& id : held_out) EXPECT_FALSE(fit.contains(id)) << id;
}

TEST(Benchmark, HealthyOnlyKeepsNegatives) {
  const Dataset pool = generate_pool(tiny_corpus());
  const Dataset h = healthy_only(pool);
  EXPECT_EQ(h.size(), pool.size() / 2);
  for (const auto& e : h) EXPECT_EQ(e.y_p, 0);
}

TEST(Jsonl, ExamplesRoundTrip) {
  const Dataset pool = generate_pool(tiny_corpus());
  std::stringstream buf;
  write_examples_jsonl(buf, pool);
  EXPECT_EQ(read_examples_jsonl(buf), pool);
  std::stringstream bad("{\"token_ids\": [1, 2], \"y_p\": 3, \"y_c\": 0, \"source_id\": \"x\"}\n");
  EXPECT_THROW(read_examples_jsonl(bad), Error);
  std::stringstream garbage("not json\n");
  EXPECT_THROW(read_examples_jsonl(garbage), DataError);
}

TEST(Manifest, OneLinePerDraw) {
  const Dataset pool = generate_pool(tiny_corpus());
  const Split s = sample_split(pool, 10, 3, ShiftConfig{}, 1, "train");
  std::istringstream lines(manifest_text(s));
  std::string line;
  std::size_t i = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("source_id"), s.examples[i].source_id);
    EXPECT_EQ(j.at("split"), "train");
    EXPECT_EQ(j.at("draw").get<std::size_t>(), s.draws[i]);
    ++i;
  }
  EXPECT_EQ(i, 10u);
}
