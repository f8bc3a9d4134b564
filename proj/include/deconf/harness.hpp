#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "deconf/corpus.hpp"
#include "deconf/metrics.hpp"
#include "deconf/training.hpp"

namespace deconf {

enum class MaskType { kIntersection, kDifference, kUnion };
std::string mask_type_name(MaskType t);
MaskType parse_mask_type(const std::string& text);

struct ExperimentPlan {
  CorpusSpec corpus;
  /// JSON-lines pool; overrides `corpus` when set.
  std::optional<std::filesystem::path> pool_path;
  std::vector<double> alphas{0.2, 1.0 / 3.0, 1.0, 3.0, 5.0};
  /// alpha_test = 1 / alpha_train unless set.
  std::optional<double> alpha_test;
  std::vector<double> ecf_mask_pcts{5, 15, 25, 35};
  std::vector<double> df_k_grid;  // default 0..60 step 1
  std::vector<MaskType> mask_types{MaskType::kIntersection, MaskType::kDifference, MaskType::kUnion};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  ModelConfig model;
  TrainConfig train;
  ShiftConfig shift;  // marginals and split sizes; alphas and seed come from the grid
  Normalization normalization = Normalization::kPerBatchMeanAbs;
  double threshold = 0.5;
  double jaccard_percentile = 85.0;
  double tradeoff_alpha = 3.0;
  int jobs = 1;
  std::filesystem::path output_dir = "results";
  /// Also write Phase-1 checkpoints, importance maps and masks.
  bool save_artifacts = false;

  ExperimentPlan();
  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentPlan from_json(const nlohmann::json& j);
};

Dataset load_pool(const ExperimentPlan& plan);

/// Everything derived from one (alpha_train, seed) cell of a plan.
struct RunContext {
  double alpha_train = 1;
  double alpha_test = 1;
  std::uint64_t seed = 0;
  Benchmark bench;
  EncoderModel init;
  TrainResult phase1;
  ImportanceMap delta_p;
  std::string manifest_hash;
  std::string checkpoint_hash;
};

/// Samples the benchmark and fine-tunes the primary model, tracking its
/// weight updates.
RunContext prepare_run(const ExperimentPlan& plan, const Dataset& pool, double alpha_train,
                       std::uint64_t seed);

/// AUPRC on the full test split, FPR gap on its healthy part, SP gap on the
/// balanced split.
MetricsReport evaluate_model(const EncoderModel& model, const Benchmark& bench, double threshold);

/// Trainable-set prefixes probed by the ECF sweep: {cls}, {cls, L_n}, ...,
/// {cls, L_n..L_1}, {cls, L_n..L_1, emb}.
std::vector<TrainableSet> ecf_prefixes(int n_layers);
std::string prefix_label(const TrainableSet& prefix, int n_layers);

struct Provenance {
  std::uint64_t seed = 0;
  double alpha_train = 1;
  double alpha_test = 1;
  std::string manifest_hash;
  std::string checkpoint_hash;
  std::string mask_hash;
};

struct EcfRow {
  Provenance prov;
  std::string method;  // intact, CF or ECF
  std::string prefix;
  double mask_pct = 0;
  std::size_t mask_size = 0;
  double ablation_ratio = 0;
  MetricsReport metrics;

  static std::string csv_header();
  std::string to_csv() const;
};

struct DfRow {
  Provenance prov;
  double k = 0;
  MaskType mask_type = MaskType::kIntersection;
  std::size_t mask_size = 0;
  double ablation_ratio = 0;
  MetricsReport metrics;

  static std::string csv_header();
  std::string to_csv() const;
};

struct TradeoffRow {
  Provenance prov;
  std::string method;  // intact, CF, ECF, DF-M_I, DF-M_D, DF-M_union
  std::string param;
  double delta_fpr = 0;
  double auprc = 0;
  bool pareto = false;

  static std::string csv_header();
  std::string to_csv() const;
};

struct EntanglementRow {
  Provenance prov;
  int layer = 1;
  MatrixKind kind = MatrixKind::kQuery;
  double jaccard = 0;
  bool degenerate = false;

  static std::string csv_header();
  std::string to_csv() const;
};

/// Rows of one (alpha, seed) cell. These are pure functions of the plan and
/// the context, so any row can be regenerated from its provenance fields.
std::vector<EcfRow> ecf_rows(const ExperimentPlan& plan, const RunContext& ctx);
ImportanceMap confounder_deltas(const ExperimentPlan& plan, const RunContext& ctx);
std::vector<DfRow> df_rows(const ExperimentPlan& plan, const RunContext& ctx,
                           const ImportanceMap& delta_c);
std::vector<EntanglementRow> entanglement_rows(const ExperimentPlan& plan, const RunContext& ctx,
                                               const ImportanceMap& delta_c);

/// Marks every point not dominated in (higher AUPRC, lower delta FPR) by
/// another point of the same seed.
void flag_pareto(std::vector<TradeoffRow>& rows);

/// Full sweeps. Rows are appended to `csv` (header first) in plan order as
/// soon as each cell completes.
std::vector<EcfRow> run_ecf_probe(const ExperimentPlan& plan, std::ostream* csv = nullptr);
std::vector<DfRow> run_dual_filter(const ExperimentPlan& plan, std::ostream* csv = nullptr);
std::vector<TradeoffRow> run_tradeoff(const ExperimentPlan& plan, std::ostream* csv = nullptr);
std::vector<EntanglementRow> run_entanglement(const ExperimentPlan& plan, std::ostream* csv = nullptr);

/// Runs fn(i) for i in [0, n) on up to `jobs` threads; `done(i)` is called
/// in index order from a single thread-safe appender.
void for_each_job(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn,
                  const std::function<void(std::size_t)>& done);

/// Writes plan.json plus the provenance fields of every cell to `path`.
void write_provenance(const std::filesystem::path& path, const ExperimentPlan& plan,
                      const std::string& experiment, const std::string& csv_sha256);

}  // namespace deconf
