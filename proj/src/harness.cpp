#include "deconf/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "deconf/array_io.hpp"

namespace deconf {

NLOHMANN_JSON_SERIALIZE_ENUM(Target, {{Target::kPrimary, "primary"}, {Target::kConfounder, "confounder"}})
NLOHMANN_JSON_SERIALIZE_ENUM(StopMetric, {{StopMetric::kAuprc, "auprc"}, {StopMetric::kAccuracy, "accuracy"}})

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CorpusSpec, vocab_size, markers_per_set, min_len, max_len,
                                                marker_rate_primary, marker_rate_confounder,
                                                pool_size_per_cell, seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, n_layers, n_heads, d_model, d_ff, vocab_size,
                                                max_seq_len, n_classes, dropout, init_std)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, epochs, patience, learning_rate, warmup_steps,
                                                batch_size, weight_decay, grad_clip, seed, target, metric)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ShiftConfig, alpha_train, alpha_test, p_yc, p_yp, n_train,
                                                n_valid, n_test, seed, sample_with_replacement,
                                                test_pool_fraction)

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string prov_csv(const Provenance& p) {
  return std::to_string(p.seed) + ',' + num(p.alpha_train) + ',' + num(p.alpha_test) + ',' +
         p.manifest_hash + ',' + p.checkpoint_hash + ',' + p.mask_hash;
}

constexpr const char* kProvHeader = "seed,alpha_train,alpha_test,manifest_hash,checkpoint_hash,mask_hash";

std::string metrics_csv(const MetricsReport& m) {
  return num(m.auprc) + ',' + num(m.fpr_f) + ',' + num(m.fpr_m) + ',' + num(m.delta_fpr) + ',' +
         num(m.delta_sp);
}

constexpr const char* kMetricsHeader = "auprc,fpr_f,fpr_m,delta_fpr,delta_sp";

Provenance base_provenance(const RunContext& ctx) {
  return {ctx.seed, ctx.alpha_train, ctx.alpha_test, ctx.manifest_hash, ctx.checkpoint_hash, ""};
}

TrainConfig phase_config(const ExperimentPlan& plan, std::uint64_t seed) {
  TrainConfig tc = plan.train;
  tc.seed = seed;
  return tc;
}

std::vector<ScoredExample> score(const EncoderModel& model, const Split& split) {
  std::vector<std::vector<int>> seqs;
  seqs.reserve(split.examples.size());
  for (const auto& e : split.examples) seqs.push_back(e.token_ids);
  const std::vector<double> probs = model.predict_proba(seqs);
  std::vector<ScoredExample> out;
  out.reserve(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    out.push_back({probs[i], split.examples[i].y_p, split.examples[i].y_c});
  }
  return out;
}

std::size_t tracked_universe(const EncoderModel& model) {
  std::size_t n = 0;
  for (const MatrixId& id : model.tracked_ids()) n += static_cast<std::size_t>(model.matrix(id).size());
  return n;
}

/// Re-expresses a mask over the model's full tracked universe.
WeightMask widen(const WeightMask& mask, std::size_t universe) {
  return WeightMask(std::vector<Coordinate>(mask.begin(), mask.end()), universe);
}

std::filesystem::path artifact_dir(const ExperimentPlan& plan, const RunContext& ctx) {
  return plan.output_dir / "artifacts" / ("alpha" + num(ctx.alpha_train) + "_seed" + std::to_string(ctx.seed));
}

void save_mask(const ExperimentPlan& plan, const RunContext& ctx, const std::string& name, const WeightMask& mask,
               nlohmann::json source) {
  const auto dir = artifact_dir(plan, ctx) / "masks";
  std::filesystem::create_directories(dir);
  source["seed"] = ctx.seed;
  source["alpha_train"] = ctx.alpha_train;
  source["checkpoint_hash"] = ctx.checkpoint_hash;
  write_mask(dir / name, mask, source);
}

struct Cell {
  double alpha;
  std::uint64_t seed;
};

std::vector<Cell> cells_of(const ExperimentPlan& plan, const std::vector<double>& alphas) {
  std::vector<Cell> out;
  for (double a : alphas) {
    for (std::uint64_t s : plan.seeds) out.push_back({a, s});
  }
  return out;
}

template <typename Row, typename Fn>
std::vector<Row> sweep(const ExperimentPlan& plan, const std::vector<double>& alphas, std::ostream* csv,
                       Fn rows_for_cell) {
  plan.validate();
  const Dataset pool = load_pool(plan);
  const std::vector<Cell> cells = cells_of(plan, alphas);
  std::vector<std::vector<Row>> per_cell(cells.size());
  if (csv) *csv << Row::csv_header() << '\n' << std::flush;
  for_each_job(
      cells.size(), plan.jobs,
      [&](std::size_t i) {
        const RunContext ctx = prepare_run(plan, pool, cells[i].alpha, cells[i].seed);
        per_cell[i] = rows_for_cell(ctx);
      },
      [&](std::size_t i) {
        if (!csv) return;
        for (const Row& r : per_cell[i]) *csv << r.to_csv() << '\n';
        csv->flush();
      });
  std::vector<Row> out;
  for (auto& rows : per_cell) out.insert(out.end(), rows.begin(), rows.end());
  return out;
}

}  // namespace

std::string mask_type_name(MaskType t) {
  switch (t) {
    case MaskType::kIntersection: return "M_I";
    case MaskType::kDifference: return "M_D";
    case MaskType::kUnion: return "M_union";
  }
  return "?";
}

MaskType parse_mask_type(const std::string& text) {
  if (text == "M_I" || text == "intersection") return MaskType::kIntersection;
  if (text == "M_D" || text == "difference") return MaskType::kDifference;
  if (text == "M_union" || text == "union") return MaskType::kUnion;
  throw ValidationError("unknown mask type '" + text + "'");
}

ExperimentPlan::ExperimentPlan() {
  for (int k = 0; k <= 60; ++k) df_k_grid.push_back(k);
}

void ExperimentPlan::validate() const {
  if (!pool_path) corpus.validate();
  model.validate();
  train.validate();
  if (corpus.vocab_size > model.vocab_size && !pool_path) {
    throw ValidationError("plan: corpus vocabulary exceeds the model vocabulary");
  }
  if (corpus.max_len > model.max_seq_len && !pool_path) {
    throw ValidationError("plan: corpus sequences exceed max_seq_len");
  }
  if (alphas.empty() || seeds.empty()) throw ValidationError("plan: alphas and seeds must be non-empty");
  for (double a : alphas) {
    if (!(a > 0)) throw ValidationError("plan: alpha must be positive");
  }
  if (alpha_test && !(*alpha_test > 0)) throw ValidationError("plan: alpha_test must be positive");
  for (double p : ecf_mask_pcts) {
    if (!(p >= 0 && p <= 100)) throw ValidationError("plan: mask_pct must lie in [0, 100]");
  }
  for (double k : df_k_grid) {
    if (!(k >= 0 && k <= 100)) throw ValidationError("plan: k must lie in [0, 100]");
  }
  if (!(jaccard_percentile >= 0 && jaccard_percentile <= 100)) {
    throw ValidationError("plan: jaccard percentile must lie in [0, 100]");
  }
  if (!(tradeoff_alpha > 0)) throw ValidationError("plan: tradeoff alpha must be positive");
  if (jobs < 1) throw ValidationError("plan: jobs must be at least 1");
  ShiftConfig s = shift;
  s.alpha_train = alphas.front();
  s.alpha_test = alpha_test.value_or(1.0 / alphas.front());
  s.validate();
}

nlohmann::json ExperimentPlan::to_json() const {
  nlohmann::json j;
  j["corpus"] = corpus;
  j["pool_path"] = pool_path ? nlohmann::json(pool_path->string()) : nlohmann::json();
  j["alphas"] = alphas;
  j["alpha_test"] = alpha_test ? nlohmann::json(*alpha_test) : nlohmann::json();
  j["ecf_mask_pcts"] = ecf_mask_pcts;
  j["df_k_grid"] = df_k_grid;
  j["mask_types"] = nlohmann::json::array();
  for (MaskType t : mask_types) j["mask_types"].push_back(mask_type_name(t));
  j["seeds"] = seeds;
  j["model"] = model;
  j["train"] = train;
  j["shift"] = shift;
  j["normalization"] = normalization_name(normalization);
  j["threshold"] = threshold;
  j["jaccard_percentile"] = jaccard_percentile;
  j["tradeoff_alpha"] = tradeoff_alpha;
  j["jobs"] = jobs;
  j["output_dir"] = output_dir.string();
  j["save_artifacts"] = save_artifacts;
  return j;
}

ExperimentPlan ExperimentPlan::from_json(const nlohmann::json& j) {
  ExperimentPlan p;
  try {
    if (j.contains("corpus")) p.corpus = j["corpus"].get<CorpusSpec>();
    if (j.contains("pool_path") && !j["pool_path"].is_null()) p.pool_path = j["pool_path"].get<std::string>();
    if (j.contains("alphas")) p.alphas = j["alphas"].get<std::vector<double>>();
    if (j.contains("alpha_test") && !j["alpha_test"].is_null()) p.alpha_test = j["alpha_test"].get<double>();
    if (j.contains("ecf_mask_pcts")) p.ecf_mask_pcts = j["ecf_mask_pcts"].get<std::vector<double>>();
    if (j.contains("df_k_grid")) p.df_k_grid = j["df_k_grid"].get<std::vector<double>>();
    if (j.contains("mask_types")) {
      p.mask_types.clear();
      for (const auto& t : j["mask_types"]) p.mask_types.push_back(parse_mask_type(t.get<std::string>()));
    }
    if (j.contains("seeds")) p.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (j.contains("model")) p.model = j["model"].get<ModelConfig>();
    if (j.contains("train")) p.train = j["train"].get<TrainConfig>();
    if (j.contains("shift")) p.shift = j["shift"].get<ShiftConfig>();
    if (j.contains("normalization")) p.normalization = parse_normalization(j["normalization"].get<std::string>());
    p.threshold = j.value("threshold", p.threshold);
    p.jaccard_percentile = j.value("jaccard_percentile", p.jaccard_percentile);
    p.tradeoff_alpha = j.value("tradeoff_alpha", p.tradeoff_alpha);
    p.jobs = j.value("jobs", p.jobs);
    if (j.contains("output_dir")) p.output_dir = j["output_dir"].get<std::string>();
    p.save_artifacts = j.value("save_artifacts", p.save_artifacts);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("plan: ") + e.what());
  }
  return p;
}

Dataset load_pool(const ExperimentPlan& plan) {
  return plan.pool_path ? read_examples_jsonl(*plan.pool_path) : generate_pool(plan.corpus);
}

RunContext prepare_run(const ExperimentPlan& plan, const Dataset& pool, double alpha_train,
                       std::uint64_t seed) {
  ShiftConfig shift = plan.shift;
  shift.alpha_train = alpha_train;
  shift.alpha_test = plan.alpha_test.value_or(1.0 / alpha_train);
  shift.seed = seed;

  RunContext ctx{.alpha_train = alpha_train,
                 .alpha_test = shift.alpha_test,
                 .seed = seed,
                 .bench = make_benchmark(pool, shift),
                 .init = EncoderModel(plan.model, seed),
                 .phase1 = {.best = EncoderModel(plan.model, seed), .history = {}},
                 .delta_p = {},
                 .manifest_hash = {},
                 .checkpoint_hash = {}};
  DeltaRecord tracker(plan.normalization);
  ctx.phase1 = train(ctx.init, ctx.bench.train.examples, ctx.bench.valid.examples,
                     phase_config(plan, seed), &tracker);
  ctx.delta_p = tracker.finalize();
  ctx.manifest_hash = sha256_hex(manifest_text(ctx.bench.train) + manifest_text(ctx.bench.valid) +
                                 manifest_text(ctx.bench.test) + manifest_text(ctx.bench.balanced));
  ctx.checkpoint_hash = checkpoint_hash(ctx.phase1.best);
  if (plan.save_artifacts) {
    const auto dir = artifact_dir(plan, ctx);
    std::filesystem::create_directories(dir);
    save_checkpoint(ctx.phase1.best, dir / "phase1.ckpt");
    save_importance(dir / "delta_p.imp", ctx.delta_p, {{"target", "primary"}});
    std::ofstream hist(dir / "phase1_history.csv");
    write_history_csv(hist, ctx.phase1.history);
  }
  return ctx;
}

MetricsReport evaluate_model(const EncoderModel& model, const Benchmark& bench, double threshold) {
  const auto test = score(model, bench.test);
  const auto balanced = score(model, bench.balanced);
  return evaluate_report(test, balanced, threshold);
}

std::vector<TrainableSet> ecf_prefixes(int n_layers) {
  std::vector<TrainableSet> out;
  TrainableSet current{kClsLayer};
  out.push_back(current);
  for (int l = n_layers; l >= 1; --l) {
    current.insert(l);
    out.push_back(current);
  }
  current.insert(kEmbLayer);
  out.push_back(current);
  return out;
}

std::string prefix_label(const TrainableSet& prefix, int n_layers) {
  // prefixes are contiguous from the top, so name them by depth
  const int blocks = static_cast<int>(std::count_if(prefix.begin(), prefix.end(),
                                                    [](int d) { return d != kClsLayer && d != kEmbLayer; }));
  std::string label = "cls";
  if (blocks > 0) label += "+L" + std::to_string(n_layers - blocks + 1) + "-L" + std::to_string(n_layers);
  if (prefix.contains(kEmbLayer)) label += "+emb";
  return label;
}

std::string EcfRow::csv_header() {
  return std::string(kProvHeader) + ",method,prefix,mask_pct,mask_size,ablation_ratio," + kMetricsHeader;
}

std::string EcfRow::to_csv() const {
  return prov_csv(prov) + ',' + method + ',' + prefix + ',' + num(mask_pct) + ',' + std::to_string(mask_size) +
         ',' + num(ablation_ratio) + ',' + metrics_csv(metrics);
}

std::string DfRow::csv_header() {
  return std::string(kProvHeader) + ",k,mask_type,mask_size,ablation_ratio," + kMetricsHeader;
}

std::string DfRow::to_csv() const {
  return prov_csv(prov) + ',' + num(k) + ',' + mask_type_name(mask_type) + ',' + std::to_string(mask_size) +
         ',' + num(ablation_ratio) + ',' + metrics_csv(metrics);
}

std::string TradeoffRow::csv_header() {
  return std::string(kProvHeader) + ",method,param,delta_fpr,auprc,pareto";
}

std::string TradeoffRow::to_csv() const {
  return prov_csv(prov) + ',' + method + ',' + param + ',' + num(delta_fpr) + ',' + num(auprc) + ',' +
         (pareto ? "1" : "0");
}

std::string EntanglementRow::csv_header() {
  return std::string(kProvHeader) + ",layer,kind,jaccard,degenerate";
}

std::string EntanglementRow::to_csv() const {
  return prov_csv(prov) + ',' + std::to_string(layer) + ',' + kind_name(kind) + ',' + num(jaccard) + ',' +
         (degenerate ? "1" : "0");
}

std::vector<EcfRow> ecf_rows(const ExperimentPlan& plan, const RunContext& ctx) {
  const EncoderModel& model = ctx.phase1.best;
  const std::size_t universe = tracked_universe(model);
  const Dataset healthy = healthy_only(ctx.bench.train.examples);
  std::vector<EcfRow> rows;
  rows.push_back({.prov = base_provenance(ctx),
                  .method = "intact",
                  .prefix = "none",
                  .metrics = evaluate_model(model, ctx.bench, plan.threshold)});
  for (const TrainableSet& prefix : ecf_prefixes(plan.model.n_layers)) {
    DeltaRecord record = train_confounder_phase(model, healthy, phase_config(plan, ctx.seed), prefix,
                                                plan.normalization);
    const ImportanceMap pi = record.finalize();
    std::vector<MatrixId> matrices;
    for (const auto& [id, t] : pi) matrices.push_back(id);
    const std::string label = prefix_label(prefix, plan.model.n_layers);
    for (double pct : plan.ecf_mask_pcts) {
      const WeightMask mask = widen(threshold_mask_per_matrix(pi, matrices, pct), universe);
      EcfRow row{.prov = base_provenance(ctx),
                 .method = prefix.size() == 1 ? "CF" : "ECF",
                 .prefix = label,
                 .mask_pct = pct,
                 .mask_size = mask.size(),
                 .ablation_ratio = mask.ablation_ratio(),
                 .metrics = evaluate_model(apply_mask(model, mask), ctx.bench, plan.threshold)};
      row.prov.mask_hash = mask_hash(mask);
      if (plan.save_artifacts) {
        save_mask(plan, ctx, "ecf_" + label + "_pct" + num(pct) + ".msk", mask,
                  {{"method", row.method}, {"prefix", label}, {"mask_pct", pct}});
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

ImportanceMap confounder_deltas(const ExperimentPlan& plan, const RunContext& ctx) {
  DeltaRecord record = train_confounder_phase(ctx.init, healthy_only(ctx.bench.train.examples),
                                              phase_config(plan, ctx.seed),
                                              all_designators(plan.model.n_layers), plan.normalization);
  ImportanceMap pi = record.finalize();
  if (plan.save_artifacts) {
    const auto dir = artifact_dir(plan, ctx);
    std::filesystem::create_directories(dir);
    save_importance(dir / "delta_c.imp", pi, {{"target", "confounder"}});
  }
  return pi;
}

std::vector<DfRow> df_rows(const ExperimentPlan& plan, const RunContext& ctx, const ImportanceMap& delta_c) {
  const RankedImportance rank_p(without_classifier(ctx.delta_p));
  const RankedImportance rank_c(without_classifier(delta_c));
  std::vector<DfRow> rows;
  for (double k : plan.df_k_grid) {
    const DualMasks masks = dual_filter_masks(rank_p, rank_c, k);
    for (MaskType type : plan.mask_types) {
      const WeightMask& mask = type == MaskType::kIntersection ? masks.intersection
                               : type == MaskType::kDifference ? masks.difference
                                                               : masks.combined;
      DfRow row{.prov = base_provenance(ctx),
                .k = k,
                .mask_type = type,
                .mask_size = mask.size(),
                .ablation_ratio = mask.ablation_ratio(),
                .metrics = evaluate_model(apply_mask(ctx.phase1.best, mask), ctx.bench, plan.threshold)};
      row.prov.mask_hash = mask_hash(mask);
      if (plan.save_artifacts) {
        save_mask(plan, ctx, "df_" + mask_type_name(type) + "_k" + num(k) + ".msk", mask,
                  {{"method", "DF"}, {"mask_type", mask_type_name(type)}, {"k", k}});
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::vector<EntanglementRow> entanglement_rows(const ExperimentPlan& plan, const RunContext& ctx,
                                               const ImportanceMap& delta_c) {
  std::vector<EntanglementRow> rows;
  for (const JaccardEntry& e : jaccard_entanglement(ctx.delta_p, delta_c, plan.jaccard_percentile)) {
    if (e.matrix.layer == kEmbLayer || e.matrix.layer == kClsLayer) continue;
    rows.push_back({.prov = base_provenance(ctx),
                    .layer = e.matrix.layer,
                    .kind = e.matrix.kind,
                    .jaccard = e.index,
                    .degenerate = e.degenerate});
  }
  return rows;
}

void flag_pareto(std::vector<TradeoffRow>& rows) {
  for (auto& a : rows) {
    a.pareto = std::none_of(rows.begin(), rows.end(), [&](const TradeoffRow& b) {
      return b.prov.seed == a.prov.seed && b.auprc >= a.auprc && b.delta_fpr <= a.delta_fpr &&
             (b.auprc > a.auprc || b.delta_fpr < a.delta_fpr);
    });
  }
}

std::vector<EcfRow> run_ecf_probe(const ExperimentPlan& plan, std::ostream* csv) {
  return sweep<EcfRow>(plan, plan.alphas, csv, [&](const RunContext& ctx) { return ecf_rows(plan, ctx); });
}

std::vector<DfRow> run_dual_filter(const ExperimentPlan& plan, std::ostream* csv) {
  return sweep<DfRow>(plan, plan.alphas, csv,
                      [&](const RunContext& ctx) { return df_rows(plan, ctx, confounder_deltas(plan, ctx)); });
}

std::vector<TradeoffRow> run_tradeoff(const ExperimentPlan& plan, std::ostream* csv) {
  auto rows = sweep<TradeoffRow>(plan, {plan.tradeoff_alpha}, nullptr, [&](const RunContext& ctx) {
    std::vector<TradeoffRow> out;
    for (const EcfRow& r : ecf_rows(plan, ctx)) {
      std::string param = r.method == "intact" ? "" : "pct=" + num(r.mask_pct);
      if (r.method == "ECF") param = "prefix=" + r.prefix + ";" + param;
      out.push_back({r.prov, r.method, param, r.metrics.delta_fpr, r.metrics.auprc, false});
    }
    for (const DfRow& r : df_rows(plan, ctx, confounder_deltas(plan, ctx))) {
      out.push_back({r.prov, "DF-" + mask_type_name(r.mask_type), "k=" + num(r.k), r.metrics.delta_fpr,
                     r.metrics.auprc, false});
    }
    return out;
  });
  // dominance needs every point of a seed, so the table is written at the end
  flag_pareto(rows);
  if (csv) {
    *csv << TradeoffRow::csv_header() << '\n';
    for (const auto& r : rows) *csv << r.to_csv() << '\n';
    csv->flush();
  }
  return rows;
}

std::vector<EntanglementRow> run_entanglement(const ExperimentPlan& plan, std::ostream* csv) {
  return sweep<EntanglementRow>(plan, plan.alphas, csv, [&](const RunContext& ctx) {
    return entanglement_rows(plan, ctx, confounder_deltas(plan, ctx));
  });
}

void for_each_job(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn,
                  const std::function<void(std::size_t)>& done) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      fn(i);
      done(i);
    }
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::vector<char> finished(n, 0);
  std::size_t flushed = 0;
  std::exception_ptr error;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      {
        std::lock_guard lock(mu);
        if (error) return;
      }
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error) error = std::current_exception();
        return;
      }
      std::lock_guard lock(mu);
      finished[i] = 1;
      while (!error && flushed < n && finished[flushed]) done(flushed++);
    }
  };
  std::vector<std::thread> pool;
  const auto count = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
  for (std::size_t t = 0; t < count; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

void write_provenance(const std::filesystem::path& path, const ExperimentPlan& plan,
                      const std::string& experiment, const std::string& csv_sha256) {
  nlohmann::json j;
  j["experiment"] = experiment;
  j["plan"] = plan.to_json();
  j["csv_sha256"] = csv_sha256;
  if (plan.pool_path) j["pool_sha256"] = file_sha256(*plan.pool_path);
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
}

}  // namespace deconf
