#include <atomic>
#include <sstream>

#include <gtest/gtest.h>

#include "deconf/errors.hpp"
#include "deconf/harness.hpp"
#include "support/fixtures.hpp"

using namespace deconf;
using namespace deconf::testing;

TEST(Plan, JsonRoundTrip) {
  ExperimentPlan p = tiny_plan();
  p.alpha_test = 2.0;
  p.mask_types = {MaskType::kDifference};
  p.normalization = Normalization::kPerBatchFrobenius;
  const ExperimentPlan q = ExperimentPlan::from_json(p.to_json());
  EXPECT_EQ(q.to_json(), p.to_json());
  EXPECT_EQ(ExperimentPlan::from_json(nlohmann::json::object()).df_k_grid.size(), 61u);
}

TEST(Plan, Validation) {
  ExperimentPlan p = tiny_plan();
  EXPECT_NO_THROW(p.validate());
  p.alphas = {-1};
  EXPECT_THROW(p.validate(), ValidationError);
  p = tiny_plan();
  p.df_k_grid = {101};
  EXPECT_THROW(p.validate(), ValidationError);
  p = tiny_plan();
  p.corpus.vocab_size = 100;
  EXPECT_THROW(p.validate(), ValidationError);
  EXPECT_THROW(ExperimentPlan::from_json({{"alphas", "three"}}), ValidationError);
  EXPECT_THROW(ExperimentPlan::from_json({{"mask_types", {"M_X"}}}), ValidationError);
}

TEST(MaskTypes, NamesAndAliases) {
  for (MaskType t : {MaskType::kIntersection, MaskType::kDifference, MaskType::kUnion}) {
    EXPECT_EQ(parse_mask_type(mask_type_name(t)), t);
  }
  EXPECT_EQ(parse_mask_type("union"), MaskType::kUnion);
}

TEST(Prefixes, GrowFromTheTop) {
  const auto p = ecf_prefixes(4);
  ASSERT_EQ(p.size(), 6u);
  EXPECT_EQ(p[0], (TrainableSet{kClsLayer}));
  EXPECT_EQ(p[1], (TrainableSet{kClsLayer, 4}));
  EXPECT_EQ(p[5], (TrainableSet{kClsLayer, 1, 2, 3, 4, kEmbLayer}));
  EXPECT_EQ(prefix_label(p[0], 4), "cls");
  EXPECT_EQ(prefix_label(p[1], 4), "cls+L4-L4");
  EXPECT_EQ(prefix_label(p[4], 4), "cls+L1-L4");
  EXPECT_EQ(prefix_label(p[5], 4), "cls+L1-L4+emb");
}

TEST(Pareto, DominanceIsPerSeed) {
  auto row = [](std::uint64_t seed, double fpr, double auprc) {
    TradeoffRow r;
    r.prov.seed = seed;
    r.delta_fpr = fpr;
    r.auprc = auprc;
    return r;
  };
  std::vector<TradeoffRow> rows = {row(0, 0.1, 0.9), row(0, 0.2, 0.8), row(0, 0.05, 0.7),
                                   row(0, 0.1, 0.9), row(1, 0.3, 0.5)};
  flag_pareto(rows);
  EXPECT_TRUE(rows[0].pareto);
  EXPECT_FALSE(rows[1].pareto);
  EXPECT_TRUE(rows[2].pareto);
  EXPECT_TRUE(rows[3].pareto);  // equal points do not dominate each other
  EXPECT_TRUE(rows[4].pareto);
}

TEST(Jobs, DoneRunsInIndexOrder) {
  for (int jobs : {1, 4}) {
    std::vector<std::size_t> order;
    std::atomic<int> calls{0};
    for_each_job(
        37, jobs, [&](std::size_t) { ++calls; }, [&](std::size_t i) { order.push_back(i); });
    EXPECT_EQ(calls, 37);
    ASSERT_EQ(order.size(), 37u);
    for (std::size_t i = 0; i < order.size(); ++i) EXPECT_EQ(order[i], i);
  }
  EXPECT_THROW(for_each_job(
                   8, 3, [](std::size_t i) { if (i == 5) throw DataError("boom"); }, [](std::size_t) {}),
               DataError);
}

class HarnessRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    plan_ = new ExperimentPlan(tiny_plan());
    pool_ = new Dataset(load_pool(*plan_));
    ctx_ = new RunContext(prepare_run(*plan_, *pool_, 3.0, 0));
  }
  static void TearDownTestSuite() {
    delete ctx_;
    delete pool_;
    delete plan_;
  }
  static ExperimentPlan* plan_;
  static Dataset* pool_;
  static RunContext* ctx_;
};

ExperimentPlan* HarnessRun::plan_ = nullptr;
Dataset* HarnessRun::pool_ = nullptr;
RunContext* HarnessRun::ctx_ = nullptr;

TEST_F(HarnessRun, ContextCarriesProvenance) {
  EXPECT_DOUBLE_EQ(ctx_->alpha_test, 1.0 / 3.0);
  EXPECT_EQ(ctx_->manifest_hash.size(), 64u);
  EXPECT_EQ(ctx_->checkpoint_hash, checkpoint_hash(ctx_->phase1.best));
  EXPECT_FALSE(ctx_->delta_p.empty());
}

TEST_F(HarnessRun, EcfRowsCoverEveryPrefixAndPercentage) {
  const auto rows = ecf_rows(*plan_, *ctx_);
  ASSERT_EQ(rows.size(), 1 + ecf_prefixes(plan_->model.n_layers).size() * plan_->ecf_mask_pcts.size());
  EXPECT_EQ(rows[0].method, "intact");
  EXPECT_EQ(rows[0].mask_size, 0u);
  EXPECT_EQ(rows[1].method, "CF");
  EXPECT_EQ(rows[1].prefix, "cls");
  EXPECT_EQ(rows.back().method, "ECF");
  EXPECT_EQ(rows.back().prefix, "cls+L1-L2+emb");
  for (const auto& r : rows) {
    EXPECT_GE(r.metrics.auprc, 0.0);
    EXPECT_LE(r.metrics.auprc, 1.0);
    EXPECT_DOUBLE_EQ(r.metrics.delta_fpr, std::abs(r.metrics.fpr_f - r.metrics.fpr_m));
  }
}

TEST_F(HarnessRun, DfRowsAreRegeneratedByteIdentically) {
  const ImportanceMap dc = confounder_deltas(*plan_, *ctx_);
  const auto rows = df_rows(*plan_, *ctx_, dc);
  ASSERT_EQ(rows.size(), plan_->df_k_grid.size() * plan_->mask_types.size());
  // k = 0 leaves the model intact
  EXPECT_EQ(rows[0].mask_size, 0u);
  EXPECT_EQ(rows[0].metrics.auprc, evaluate_model(ctx_->phase1.best, ctx_->bench, plan_->threshold).auprc);
  const RunContext again = prepare_run(*plan_, *pool_, 3.0, 0);
  const auto rerun = df_rows(*plan_, again, confounder_deltas(*plan_, again));
  ASSERT_EQ(rerun.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(rows[i].to_csv(), rerun[i].to_csv());
}

TEST_F(HarnessRun, EntanglementCoversBlockMatrices) {
  const auto rows = entanglement_rows(*plan_, *ctx_, confounder_deltas(*plan_, *ctx_));
  EXPECT_EQ(rows.size(), 6u * plan_->model.n_layers);
  for (const auto& r : rows) {
    EXPECT_GE(r.jaccard, 0.0);
    EXPECT_LE(r.jaccard, 1.0);
  }
}

TEST(Sweep, CsvIsIndependentOfJobCount) {
  ExperimentPlan p = tiny_plan();
  p.df_k_grid = {0, 20};
  std::ostringstream one, two;
  p.jobs = 1;
  run_dual_filter(p, &one);
  p.jobs = 2;
  run_dual_filter(p, &two);
  EXPECT_EQ(one.str(), two.str());
  const std::string header = one.str().substr(0, one.str().find('\n'));
  EXPECT_EQ(header, DfRow::csv_header());
  EXPECT_NE(header.find("manifest_hash"), std::string::npos);
  EXPECT_NE(header.find("checkpoint_hash"), std::string::npos);
  EXPECT_NE(header.find("mask_hash"), std::string::npos);
}
