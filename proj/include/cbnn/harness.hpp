#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cbnn/chevron.hpp"
#include "cbnn/config.hpp"
#include "cbnn/data.hpp"
#include "cbnn/sem.hpp"

namespace cbnn {

// ---- hyperparameter search ----------------------------------------------------------

struct SearchSpace {
  // One candidate list per hidden position (chevron 1, chevron 2).
  std::vector<std::vector<std::size_t>> widths;
  double lr_min = 0.01;
  double lr_max = 0.1;
  std::size_t budget = 25;
  std::uint64_t seed = 0;

  // {in−4, in−2, in, in+2, in+4}, floored at 1, duplicates removed.
  static std::vector<std::size_t> candidates_around(std::size_t in);
  // Candidates centred on each chevron's concat width for `spec`'s ablation.
  static SearchSpace for_network(const GraphSpec& spec);
  void validate() const;
};

struct Trial {
  std::size_t hidden1 = 0;
  std::size_t hidden2 = 0;
  double lr1 = 0.0;
  double lr2 = 0.0;
  double val_loss = 0.0;  // +inf for degraded trials
};

struct LayerFlag {
  std::string layer;
  std::size_t input_width = 0;
  std::size_t chosen_width = 0;
  std::string annotation;  // empty when width == input
};

struct TuneResult {
  GraphSpec chosen;
  std::vector<Trial> trials;
  std::size_t best = 0;
  std::vector<LayerFlag> flags;
};

// Draws the budget's trials up front (fixed order for a given seed).
std::vector<Trial> propose_trials(const SearchSpace& space);
// Index of the lowest finite val_loss; earliest wins ties.
std::size_t select_best(const std::vector<Trial>& trials);
std::vector<LayerFlag> interpretation_flags(const GraphSpec& chosen);

using TrialEvaluator = std::function<double(const GraphSpec&)>;
TuneResult tune(const SearchSpace& space, const GraphSpec& tmpl, const PathModel& model,
                const TrialEvaluator& evaluate);
// Scores each trial by its final validation ELBO on one seeded 90/10 split.
TuneResult tune(const SearchSpace& space, const GraphSpec& tmpl, const PathModel& model,
                const NetworkData& data, const TrainOptions& options);

std::string format_tune_report(const TuneResult& result);

// ---- experiment grid ----------------------------------------------------------------

enum class Protocol { repeated_holdout, repeated_kfold };

struct ExperimentGrid {
  // "flipout" (flipout+adam), "vadam" (dense+vadam), "both" (flipout+vadam).
  std::vector<std::string> configurations{"flipout", "vadam", "both"};
  // "none", "BD", "SM", "AS".
  std::vector<std::string> ablations{"none", "BD", "SM", "AS"};
  Protocol protocol = Protocol::repeated_holdout;
  std::size_t repetitions = 10;
  std::size_t folds = 10;
  double holdout_fraction = 0.1;
  std::size_t epochs = 50;
  std::size_t batch_size = 4;
  std::uint64_t split_seed = 1;
  std::uint64_t train_seed = 1;
  std::size_t threads = 1;
  GraphSpec base;

  void validate() const;
  std::size_t cell_count() const { return configurations.size() * ablations.size(); }
  static ExperimentGrid from_config(const Config& cfg);
  Config to_config() const;
};

// Applies the configuration's layer/optimizer kinds and the ablation.
GraphSpec cell_spec(const GraphSpec& base, const std::string& configuration,
                    const std::string& ablation);
std::string configuration_label(const std::string& configuration);
std::string ablation_label(const std::string& ablation);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

// Ordered by (repetition, fold). Independent of configuration and ablation.
std::vector<Split> make_splits(std::size_t n, const ExperimentGrid& grid);
std::uint64_t split_hash(const std::vector<Split>& splits);

struct GridResult {
  std::vector<RunRecord> records;  // ordered by (configuration, ablation, rep, fold)
  std::uint64_t fold_hash = 0;
  std::vector<std::string> log;
};

// Runs fit_paths/dag_validate first, then every cell on identical splits.
GridResult run_grid(const ExperimentGrid& grid, const DataMatrix& data, const MeasurementSpec& spec);
// Same, on pre-built network data; `model` supplies node widths.
GridResult run_grid(const ExperimentGrid& grid, const NetworkData& data, const PathModel& model);

// ---- convergence and reports --------------------------------------------------------

struct CellSummary {
  std::string configuration;
  std::string ablation;
  std::size_t runs = 0;
  std::size_t degraded = 0;
  double median_min_val_loss = 0.0;
  double median_first_epoch_loss = 0.0;
  // (full − ablated) / full · 100 on the first-epoch loss; same configuration only.
  std::optional<double> first_epoch_drop_percent;
  // 1-based epoch where the median curve first sits within 5% of its final value.
  std::optional<std::size_t> convergence_epoch;
  std::vector<double> median_train_curve;
  std::vector<double> median_val_curve;
};

struct ConvergenceReport {
  std::vector<CellSummary> cells;
  const CellSummary* find(const std::string& configuration, const std::string& ablation) const;
};

double median(std::vector<double> values);
double drop_percent(double full, double ablated);
std::optional<std::size_t> convergence_epoch(const std::vector<double>& curve, double band = 0.05);
ConvergenceReport summarize(const std::vector<RunRecord>& records);

// Long format: one row per (run, epoch).
std::string records_csv(const std::vector<RunRecord>& records);
std::vector<RunRecord> parse_records_csv(const std::string& text);
// One row per run with its failure message, if any.
std::string runs_csv(const std::vector<RunRecord>& records);

std::string summary_csv(const ConvergenceReport& report);
std::string summary_text(const ConvergenceReport& report);
std::string curve_csv(const CellSummary& cell);
std::string curves_svg(const ConvergenceReport& report, const std::string& configuration);

struct ReportOptions {
  bool svg = false;
};

// Writes summary.csv, summary.txt, curves/<config>_<ablation>.csv and
// optional SVGs. Returns the paths written, in order.
std::vector<std::filesystem::path> report(const std::vector<RunRecord>& records,
                                          const std::filesystem::path& out_dir,
                                          const ReportOptions& options = {});

}  // namespace cbnn
