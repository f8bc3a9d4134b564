// Command-line front end for the deconfounding experiments.

#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "deconf/array_io.hpp"
#include "deconf/harness.hpp"

using namespace deconf;
namespace fs = std::filesystem;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfigError = 2, kDataError = 3, kDiverged = 4 };

/// Flags that override fields of an ExperimentPlan. Each flag is parsed into
/// a scratch plan and copied onto the real one only when given, so a plan
/// file can be loaded first and then patched from the command line.
class PlanFlags {
 public:
  explicit PlanFlags(CLI::App* app) : app_(app) {
    app->add_option("--plan", plan_path_, "JSON experiment plan")->check(CLI::ExistingFile);
  }

  template <typename T>
  PlanFlags& add(const std::string& name, std::function<T&(ExperimentPlan&)> field, const std::string& help) {
    CLI::Option* opt = app_->add_option(name, field(scratch_), help);
    setters_.push_back([opt, field, this](ExperimentPlan& p) {
      if (opt->count() > 0) field(p) = field(scratch_);
    });
    return *this;
  }

  PlanFlags& add_flag(const std::string& name, std::function<bool&(ExperimentPlan&)> field,
                      const std::string& help) {
    CLI::Option* opt = app_->add_flag(name, field(scratch_), help);
    setters_.push_back([opt, field, this](ExperimentPlan& p) {
      if (opt->count() > 0) field(p) = field(scratch_);
    });
    return *this;
  }

  ExperimentPlan resolve() const {
    ExperimentPlan plan;
    if (!plan_path_.empty()) {
      std::ifstream in(plan_path_);
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(in);
      } catch (const nlohmann::json::exception& e) {
        throw ValidationError("plan file " + plan_path_ + ": " + e.what());
      }
      plan = ExperimentPlan::from_json(j);
    }
    for (const auto& set : setters_) set(plan);
    if (!mask_types_.empty()) {
      plan.mask_types.clear();
      for (const auto& t : mask_types_) plan.mask_types.push_back(parse_mask_type(t));
    }
    if (!normalization_.empty()) plan.normalization = parse_normalization(normalization_);
    if (!pool_.empty()) plan.pool_path = pool_;
    if (tie_vocab_) plan.model.vocab_size = std::max(plan.model.vocab_size, plan.corpus.vocab_size);
    return plan;
  }

  void add_common() {
    add<double>("--rate-primary", [](ExperimentPlan& p) -> double& { return p.corpus.marker_rate_primary; },
                "primary marker rate");
    add<double>("--rate-confounder",
                [](ExperimentPlan& p) -> double& { return p.corpus.marker_rate_confounder; },
                "confounder marker rate");
    add<int>("--vocab-size", [](ExperimentPlan& p) -> int& { return p.corpus.vocab_size; }, "corpus vocabulary");
    add<std::size_t>("--pool-size", [](ExperimentPlan& p) -> std::size_t& { return p.corpus.pool_size_per_cell; },
                     "examples per (y_p, y_c) cell");
    add<std::uint64_t>("--corpus-seed", [](ExperimentPlan& p) -> std::uint64_t& { return p.corpus.seed; },
                       "corpus generator seed");
    app_->add_option("--pool", pool_, "JSON-lines example pool (instead of generating one)");
    add<int>("--epochs", [](ExperimentPlan& p) -> int& { return p.train.epochs; }, "max epochs");
    add<int>("--patience", [](ExperimentPlan& p) -> int& { return p.train.patience; }, "early-stop patience");
    add<double>("--lr", [](ExperimentPlan& p) -> double& { return p.train.learning_rate; }, "peak learning rate");
    add<int>("--batch-size", [](ExperimentPlan& p) -> int& { return p.train.batch_size; }, "batch size");
    add<int>("--n-layers", [](ExperimentPlan& p) -> int& { return p.model.n_layers; }, "encoder blocks");
    add<int>("--d-model", [](ExperimentPlan& p) -> int& { return p.model.d_model; }, "model width");
    add<int>("--d-ff", [](ExperimentPlan& p) -> int& { return p.model.d_ff; }, "feed-forward width");
    add<int>("--n-heads", [](ExperimentPlan& p) -> int& { return p.model.n_heads; }, "attention heads");
    add<std::size_t>("--n-train", [](ExperimentPlan& p) -> std::size_t& { return p.shift.n_train; }, "train size");
    add<std::size_t>("--n-valid", [](ExperimentPlan& p) -> std::size_t& { return p.shift.n_valid; }, "valid size");
    add<std::size_t>("--n-test", [](ExperimentPlan& p) -> std::size_t& { return p.shift.n_test; }, "test size");
    add<double>("--threshold", [](ExperimentPlan& p) -> double& { return p.threshold; }, "decision threshold");
    app_->add_option("--normalization", normalization_, "mean-abs, frobenius or none");
    tie_vocab_ = true;
  }

  void add_sweep() {
    add<std::vector<double>>("--alphas", [](ExperimentPlan& p) -> std::vector<double>& { return p.alphas; },
                             "alpha_train grid");
    add<std::vector<std::uint64_t>>("--seeds",
                                    [](ExperimentPlan& p) -> std::vector<std::uint64_t>& { return p.seeds; },
                                    "seeds");
    app_->add_option("--alpha-test", alpha_test_, "fixed alpha_test (default 1/alpha_train)");
    add<int>("--jobs", [](ExperimentPlan& p) -> int& { return p.jobs; }, "parallel (alpha, seed) cells");
    add<fs::path>("--out-dir", [](ExperimentPlan& p) -> fs::path& { return p.output_dir; }, "output directory");
    add_flag("--save-artifacts", [](ExperimentPlan& p) -> bool& { return p.save_artifacts; },
             "also write checkpoints, update maps and masks");
  }

  void add_mask_types() {
    app_->add_option("--mask-types", mask_types_, "subset of M_I, M_D, M_union");
  }

  std::optional<double> alpha_test() const { return alpha_test_; }

 private:
  CLI::App* app_;
  std::string plan_path_;
  std::string pool_;
  std::string normalization_;
  std::vector<std::string> mask_types_;
  std::optional<double> alpha_test_;
  bool tie_vocab_ = false;
  ExperimentPlan scratch_;
  std::vector<std::function<void(ExperimentPlan&)>> setters_;
};

/// Runs one sweep, writing <name>.csv and <name>.provenance.json.
template <typename Fn>
int run_sweep(const ExperimentPlan& plan, const std::string& name, Fn run) {
  plan.validate();
  fs::create_directories(plan.output_dir);
  const fs::path csv_path = plan.output_dir / (name + ".csv");
  std::size_t rows = 0;
  {
    std::ofstream csv(csv_path, std::ios::binary);
    if (!csv) throw DataError("cannot open " + csv_path.string() + " for writing");
    rows = run(plan, &csv).size();
  }
  write_provenance(plan.output_dir / (name + ".provenance.json"), plan, name, file_sha256(csv_path));
  std::cout << "wrote " << rows << " rows to " << csv_path.string() << '\n';
  return kOk;
}

Dataset pool_for(const ExperimentPlan& plan) {
  plan.validate();
  return load_pool(plan);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weight-masking deconfounding experiments on a miniature transformer"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand all help");

  // corpus generate
  auto* corpus = app.add_subcommand("corpus", "Synthetic corpus tools")->require_subcommand(1);
  auto* corpus_gen = corpus->add_subcommand("generate", "Write a synthetic example pool");
  PlanFlags corpus_flags(corpus_gen);
  corpus_flags.add_common();
  fs::path corpus_out, vocab_out;
  corpus_gen->add_option("--out", corpus_out, "pool JSON-lines path")->required();
  corpus_gen->add_option("--vocab-out", vocab_out, "vocabulary TSV path");

  // bench make
  auto* bench = app.add_subcommand("bench", "Confounding-shift benchmarks")->require_subcommand(1);
  auto* bench_make = bench->add_subcommand("make", "Sample train/valid/test/balanced splits");
  PlanFlags bench_flags(bench_make);
  bench_flags.add_common();
  double bench_alpha = 1;
  std::optional<double> bench_alpha_test;
  std::uint64_t bench_seed = 0;
  fs::path bench_dir;
  bench_make->add_option("--alpha-train", bench_alpha, "alpha for train/valid")->required();
  bench_make->add_option("--alpha-test", bench_alpha_test, "alpha for test (default 1/alpha_train)");
  bench_make->add_option("--seed", bench_seed, "sampling seed");
  bench_make->add_option("--out-dir", bench_dir, "output directory")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "Fine-tune one model");
  PlanFlags train_flags(train_cmd);
  train_flags.add_common();
  double train_alpha = 1;
  std::optional<double> train_alpha_test;
  std::uint64_t train_seed = 0;
  std::string train_target = "primary";
  fs::path ckpt_out, history_out, importance_out;
  train_cmd->add_option("--alpha-train", train_alpha, "alpha for train/valid");
  train_cmd->add_option("--alpha-test", train_alpha_test, "alpha for test (default 1/alpha_train)");
  train_cmd->add_option("--seed", train_seed, "initialization, sampling and shuffling seed");
  train_cmd->add_option("--target", train_target, "primary or confounder")
      ->check(CLI::IsMember({"primary", "confounder"}));
  train_cmd->add_option("--out", ckpt_out, "checkpoint path")->required();
  train_cmd->add_option("--history", history_out, "per-epoch CSV");
  train_cmd->add_option("--importance", importance_out, "write the tracked weight-update map");

  // ecf probe
  auto* ecf = app.add_subcommand("ecf", "Extended confounding filter")->require_subcommand(1);
  auto* ecf_probe = ecf->add_subcommand("probe", "Layer-prefix sweep over mask percentages");
  PlanFlags ecf_flags(ecf_probe);
  ecf_flags.add_common();
  ecf_flags.add_sweep();
  ecf_flags.add<std::vector<double>>(
      "--mask-pcts", [](ExperimentPlan& p) -> std::vector<double>& { return p.ecf_mask_pcts; },
      "per-matrix mask percentages");

  // df sweep
  auto* df = app.add_subcommand("df", "Dual filter")->require_subcommand(1);
  auto* df_sweep = df->add_subcommand("sweep", "k sweep for each mask type");
  PlanFlags df_flags(df_sweep);
  df_flags.add_common();
  df_flags.add_sweep();
  df_flags.add_mask_types();
  df_flags.add<std::vector<double>>("--k-grid", [](ExperimentPlan& p) -> std::vector<double>& { return p.df_k_grid; },
                                    "top-k percentages");

  // tradeoff
  auto* tradeoff = app.add_subcommand("tradeoff", "AUPRC vs delta-FPR points for every method");
  PlanFlags tradeoff_flags(tradeoff);
  tradeoff_flags.add_common();
  tradeoff_flags.add_sweep();
  tradeoff_flags.add_mask_types();
  tradeoff_flags.add<double>("--tradeoff-alpha", [](ExperimentPlan& p) -> double& { return p.tradeoff_alpha; },
                             "alpha_train for the comparison");
  tradeoff_flags.add<std::vector<double>>(
      "--mask-pcts", [](ExperimentPlan& p) -> std::vector<double>& { return p.ecf_mask_pcts; },
      "ECF mask percentages");
  tradeoff_flags.add<std::vector<double>>(
      "--k-grid", [](ExperimentPlan& p) -> std::vector<double>& { return p.df_k_grid; }, "DF top-k percentages");

  // entangle
  auto* entangle = app.add_subcommand("entangle", "Per-matrix Jaccard overlap of update maps");
  PlanFlags entangle_flags(entangle);
  entangle_flags.add_common();
  entangle_flags.add_sweep();
  entangle_flags.add<double>("--percentile",
                             [](ExperimentPlan& p) -> double& { return p.jaccard_percentile; },
                             "binarization percentile");

  // report
  auto* report = app.add_subcommand("report", "Evaluate a checkpoint on its benchmark");
  PlanFlags report_flags(report);
  report_flags.add_common();
  fs::path report_ckpt, report_json;
  double report_alpha = 1;
  std::optional<double> report_alpha_test;
  std::uint64_t report_seed = 0;
  report->add_option("--checkpoint", report_ckpt, "checkpoint path")->required();
  report->add_option("--alpha-train", report_alpha, "alpha the benchmark was sampled with");
  report->add_option("--alpha-test", report_alpha_test, "alpha for test (default 1/alpha_train)");
  report->add_option("--seed", report_seed, "benchmark seed");
  report->add_option("--json", report_json, "also write the report as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  try {
    if (corpus_gen->parsed()) {
      const ExperimentPlan plan = corpus_flags.resolve();
      plan.corpus.validate();
      const Dataset pool = generate_pool(plan.corpus);
      write_examples_jsonl(corpus_out, pool);
      if (!vocab_out.empty()) write_vocabulary(vocab_out, plan.corpus);
      std::cout << "wrote " << pool.size() << " examples to " << corpus_out.string() << '\n';
      return kOk;
    }

    if (bench_make->parsed()) {
      const ExperimentPlan plan = bench_flags.resolve();
      const Dataset pool = pool_for(plan);
      ShiftConfig shift = plan.shift;
      shift.alpha_train = bench_alpha;
      shift.alpha_test = bench_alpha_test.value_or(1.0 / bench_alpha);
      shift.seed = bench_seed;
      const Benchmark b = make_benchmark(pool, shift);
      fs::create_directories(bench_dir);
      for (const Split* s : {&b.train, &b.valid, &b.test, &b.balanced}) {
        write_examples_jsonl(bench_dir / (s->name + ".jsonl"), s->examples);
        std::ofstream m(bench_dir / (s->name + ".manifest.jsonl"), std::ios::binary);
        write_manifest(m, *s);
      }
      std::cout << "wrote train/valid/test/balanced splits to " << bench_dir.string() << '\n';
      return kOk;
    }

    if (train_cmd->parsed()) {
      const ExperimentPlan plan = train_flags.resolve();
      const Dataset pool = pool_for(plan);
      ShiftConfig shift = plan.shift;
      shift.alpha_train = train_alpha;
      shift.alpha_test = train_alpha_test.value_or(1.0 / train_alpha);
      shift.seed = train_seed;
      const Benchmark b = make_benchmark(pool, shift);
      TrainConfig tc = plan.train;
      tc.seed = train_seed;
      DeltaRecord tracker(plan.normalization);
      const EncoderModel init(plan.model, train_seed);
      TrainResult r = [&] {
        if (train_target == "confounder") {
          TrainResult out{.best = init, .history = {}};
          tracker = train_confounder_phase(init, healthy_only(b.train.examples), tc,
                                           all_designators(plan.model.n_layers), plan.normalization, &out);
          return out;
        }
        return train(init, b.train.examples, b.valid.examples, tc, &tracker);
      }();
      save_checkpoint(r.best, ckpt_out);
      if (!history_out.empty()) {
        std::ofstream h(history_out);
        write_history_csv(h, r.history);
      }
      if (!importance_out.empty()) {
        save_importance(importance_out, tracker.finalize(),
                        {{"target", train_target}, {"seed", train_seed}, {"alpha_train", train_alpha}});
      }
      std::cout << "best epoch " << r.best_epoch << " of " << r.epochs_run << ", validation "
                << r.best_metric << "\n"
                << evaluate_model(r.best, b, plan.threshold).to_text();
      return kOk;
    }

    if (ecf_probe->parsed()) {
      ExperimentPlan plan = ecf_flags.resolve();
      if (ecf_flags.alpha_test()) plan.alpha_test = ecf_flags.alpha_test();
      return run_sweep(plan, "ecf_probe", [](const ExperimentPlan& p, std::ostream* out) {
        return run_ecf_probe(p, out);
      });
    }

    if (df_sweep->parsed()) {
      ExperimentPlan plan = df_flags.resolve();
      if (df_flags.alpha_test()) plan.alpha_test = df_flags.alpha_test();
      return run_sweep(plan, "df_sweep", [](const ExperimentPlan& p, std::ostream* out) {
        return run_dual_filter(p, out);
      });
    }

    if (tradeoff->parsed()) {
      ExperimentPlan plan = tradeoff_flags.resolve();
      if (tradeoff_flags.alpha_test()) plan.alpha_test = tradeoff_flags.alpha_test();
      return run_sweep(plan, "tradeoff", [](const ExperimentPlan& p, std::ostream* out) {
        return run_tradeoff(p, out);
      });
    }

    if (entangle->parsed()) {
      ExperimentPlan plan = entangle_flags.resolve();
      if (entangle_flags.alpha_test()) plan.alpha_test = entangle_flags.alpha_test();
      return run_sweep(plan, "entanglement", [](const ExperimentPlan& p, std::ostream* out) {
        return run_entanglement(p, out);
      });
    }

    if (report->parsed()) {
      const ExperimentPlan plan = report_flags.resolve();
      const Dataset pool = pool_for(plan);
      ShiftConfig shift = plan.shift;
      shift.alpha_train = report_alpha;
      shift.alpha_test = report_alpha_test.value_or(1.0 / report_alpha);
      shift.seed = report_seed;
      const Benchmark b = make_benchmark(pool, shift);
      const EncoderModel model = load_checkpoint(report_ckpt);
      const MetricsReport m = evaluate_model(model, b, plan.threshold);
      std::cout << m.to_text();
      if (!report_json.empty()) {
        nlohmann::json j = m.to_json();
        j["checkpoint_sha256"] = file_sha256(report_ckpt);
        j["alpha_train"] = report_alpha;
        j["alpha_test"] = shift.alpha_test;
        j["seed"] = report_seed;
        std::ofstream out(report_json);
        out << j.dump(2) << '\n';
      }
      return kOk;
    }
  } catch (const TrainingDivergedError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDiverged;
  } catch (const ValidationError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}
