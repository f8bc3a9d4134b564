#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "deconf/delta.hpp"
#include "support/gradcheck.hpp"

using namespace deconf;
using namespace deconf::testing;

namespace {

/// Entry-by-entry accumulation with plain loops.
class ShadowRecord {
 public:
  explicit ShadowRecord(Normalization n) : n_(n) {}

  void add(MatrixId id, const Tensor& before, const Tensor& after) {
    const Index size = before.size();
    std::vector<double> d(static_cast<std::size_t>(size));
    double total = 0, squares = 0;
    for (Index i = 0; i < size; ++i) {
      d[i] = std::abs(after.data()[i] - before.data()[i]);
      total += d[i];
      squares += d[i] * d[i];
    }
    double divisor = 1;
    if (n_ == Normalization::kPerBatchMeanAbs) divisor = std::max(total / size, 1e-12);
    if (n_ == Normalization::kPerBatchFrobenius) divisor = std::max(std::sqrt(squares), 1e-12);
    auto& acc = sums_[id];
    acc.resize(static_cast<std::size_t>(size), 0.0);
    for (Index i = 0; i < size; ++i) acc[i] += d[i] / divisor;
  }

  double value(MatrixId id, Index i, int batches) const { return sums_.at(id)[i] / batches; }

 private:
  Normalization n_;
  std::map<MatrixId, std::vector<double>> sums_;
};

}  // namespace

class DeltaAgainstShadow : public ::testing::TestWithParam<Normalization> {};

TEST_P(DeltaAgainstShadow, MatchesEntrywiseAccumulation) {
  const Normalization norm = GetParam();
  std::mt19937_64 rng(21);
  const std::vector<MatrixId> ids = {MatrixId::emb(), MatrixId::block(1, MatrixKind::kKey), MatrixId::cls()};
  std::map<MatrixId, Tensor> weights;
  for (const auto& id : ids) weights[id] = random_tensor(rng, 3 + id.layer % 3, 4);
  DeltaRecord record(norm);
  ShadowRecord shadow(norm);
  const int batches = 7;
  for (int b = 0; b < batches; ++b) {
    for (const auto& id : ids) {
      const Tensor before = weights[id];
      weights[id] += random_tensor(rng, before.rows(), before.cols(), 0.01 * (b + 1));
      record.accumulate(id, before, weights[id]);
      shadow.add(id, before, weights[id]);
    }
    record.end_batch();
  }
  const ImportanceMap pi = record.finalize();
  for (const auto& id : ids) {
    for (Index i = 0; i < pi.at(id).size(); ++i) {
      EXPECT_NEAR(pi.at(id).data()[i], shadow.value(id, i, batches), 1e-12);
    }
  }
}

INSTANTIATE_TEST_SUITE_P(AllNormalizations, DeltaAgainstShadow,
                         ::testing::Values(Normalization::kPerBatchMeanAbs, Normalization::kPerBatchFrobenius,
                                           Normalization::kNone));

TEST(DeltaRecord, NormalizedScoresIgnoreUpdateScale) {
  std::mt19937_64 rng(2);
  const Tensor before = random_tensor(rng, 4, 4);
  const Tensor step = random_tensor(rng, 4, 4);
  DeltaRecord small, large;
  small.accumulate(MatrixId::cls(), before, before + 1e-3 * step);
  large.accumulate(MatrixId::cls(), before, before + 10.0 * step);
  small.end_batch();
  large.end_batch();
  EXPECT_TRUE(small.finalize().at(MatrixId::cls()).isApprox(large.finalize().at(MatrixId::cls()), 1e-12));
}

TEST(DeltaRecord, ZeroUpdateStaysFinite) {
  DeltaRecord r;
  const Tensor w = Tensor::Ones(2, 2);
  r.accumulate(MatrixId::cls(), w, w);
  r.end_batch();
  const ImportanceMap pi = r.finalize();
  EXPECT_TRUE(pi.at(MatrixId::cls()).isZero());
}

TEST(DeltaRecord, FinalizeRequiresBatchesAndFreezesRecord) {
  DeltaRecord r;
  EXPECT_THROW(r.finalize(), EmptyRecordError);
  r.accumulate(MatrixId::cls(), Tensor::Zero(1, 2), Tensor::Ones(1, 2));
  r.end_batch();
  r.finalize();
  EXPECT_TRUE(r.finalized());
  EXPECT_THROW(r.accumulate(MatrixId::cls(), Tensor::Zero(1, 2), Tensor::Ones(1, 2)), ValidationError);
  EXPECT_THROW(r.end_batch(), ValidationError);
}

TEST(DeltaRecord, RejectsShapeChanges) {
  DeltaRecord r;
  EXPECT_THROW(r.accumulate(MatrixId::cls(), Tensor::Zero(1, 2), Tensor::Zero(2, 1)), ValidationError);
  r.accumulate(MatrixId::cls(), Tensor::Zero(1, 2), Tensor::Zero(1, 2));
  EXPECT_THROW(r.accumulate(MatrixId::cls(), Tensor::Zero(2, 2), Tensor::Zero(2, 2)), ValidationError);
}

TEST(Normalization, ParsesNamesAndAliases) {
  for (Normalization n : {Normalization::kPerBatchMeanAbs, Normalization::kPerBatchFrobenius, Normalization::kNone}) {
    EXPECT_EQ(parse_normalization(normalization_name(n)), n);
  }
  EXPECT_EQ(parse_normalization("mean-abs"), Normalization::kPerBatchMeanAbs);
  EXPECT_THROW(parse_normalization("l1"), ValidationError);
}

TEST(Importance, SidecarRoundTrip) {
  std::mt19937_64 rng(4);
  ImportanceMap pi{{MatrixId::emb(), random_tensor(rng, 5, 3)},
                   {MatrixId::block(2, MatrixKind::kFfn2), random_tensor(rng, 6, 3)}};
  const auto path = std::filesystem::temp_directory_path() / "deconf_test_importance.imp";
  save_importance(path, pi, {{"target", "primary"}});
  EXPECT_EQ(load_importance(path), pi);
  std::filesystem::remove(path);
}
