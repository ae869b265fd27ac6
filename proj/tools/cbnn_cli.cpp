// cbnn: data generation, path analysis, tuning and the ablation grid.
//
// Exit codes: 0 success, 1 validation failure, 2 numeric failure.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>

#include "cbnn/chevron.hpp"
#include "cbnn/config.hpp"
#include "cbnn/data.hpp"
#include "cbnn/errors.hpp"
#include "cbnn/harness.hpp"
#include "cbnn/linalg.hpp"
#include "cbnn/sem.hpp"
#include "cbnn/synth.hpp"

namespace fs = std::filesystem;
using namespace cbnn;

namespace {

struct DataAndSpec {
  DataMatrix data;
  MeasurementSpec spec;
};

DataAndSpec load_data(const std::string& csv, const std::string& dag) {
  DataAndSpec out;
  out.data = read_csv(csv).data;
  out.spec = load_measurement_spec(dag, out.data);
  apply_measurement_spec(out.spec, out.data);
  return out;
}

void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    write_text_file(path, text);
    std::cerr << "wrote " << path << "\n";
  }
}

int gen_data(const std::string& config_path, const std::string& out,
             std::optional<std::uint64_t> seed, std::optional<std::size_t> n) {
  GenConfig cfg = config_path.empty() ? GenConfig{} : GenConfig::from_config(Config::load(config_path));
  if (seed) cfg.seed = *seed;
  if (n) cfg.n = *n;
  cfg.validate();
  emit(out, simulate_csv(cfg));
  return 0;
}

int fit_sem(const std::string& csv, const std::string& dag, const std::string& out) {
  auto in = load_data(csv, dag);
  const DagReport report = dag_validate(in.spec.model);
  const PathModel model = fit_paths(in.data, in.spec);
  const FactorReport factors = factor_eigenvalues(in.data, in.spec.factor_groups);
  emit(out, format_sem_report(report, model, factors, implied_covariance(model)));
  return 0;
}

int tune_cmd(const std::string& csv, const std::string& dag, const std::string& tmpl_path,
             const std::string& out, std::size_t budget, std::uint64_t seed, std::size_t epochs,
             std::size_t batch) {
  auto in = load_data(csv, dag);
  dag_validate(in.spec.model);
  const PathModel model = fit_paths(in.data, in.spec);
  Config tmpl_cfg = tmpl_path.empty() ? Config{} : Config::load(tmpl_path);
  const GraphSpec tmpl = GraphSpec::from_config(tmpl_cfg, "network");
  SearchSpace space = SearchSpace::for_network(tmpl);
  space.budget = budget;
  space.seed = seed;
  const TuneResult result =
      tune(space, tmpl, model, network_data(in.data, in.spec), TrainOptions{epochs, batch, seed});
  std::cerr << format_tune_report(result);
  Config chosen;
  result.chosen.write_config(chosen, "network");
  emit(out, chosen.serialize());
  return 0;
}

int run_cmd(const std::string& grid_path, const std::string& csv, const std::string& dag,
            const std::string& out_dir, std::optional<std::size_t> threads, bool svg) {
  ExperimentGrid grid = ExperimentGrid::from_config(Config::load(grid_path));
  if (threads) grid.threads = *threads;
  auto in = load_data(csv, dag);
  const GridResult result = run_grid(grid, in.data, in.spec);
  for (const auto& line : result.log) std::cerr << line << "\n";
  const fs::path dir(out_dir);
  write_text_file(dir / "records.csv", records_csv(result.records));
  write_text_file(dir / "runs.csv", runs_csv(result.records));
  report(result.records, dir, ReportOptions{svg});
  std::cout << summary_text(summarize(result.records));
  return 0;
}

int report_cmd(const std::string& records_path, const std::string& out_dir, bool svg) {
  const auto records = parse_records_csv(read_text_file(records_path));
  for (const auto& p : report(records, out_dir, ReportOptions{svg})) std::cerr << "wrote " << p.string() << "\n";
  std::cout << summary_text(summarize(records));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Causal Bayesian network experiments on survey-style data"};
  app.require_subcommand(1);

  std::string gen_config, gen_out = "-";
  std::optional<std::uint64_t> gen_seed;
  std::optional<std::size_t> gen_n;
  auto* gen = app.add_subcommand("gen-data", "simulate a dataset from a generator config");
  gen->add_option("-c,--config", gen_config, "generator config ([generator] section)");
  gen->add_option("-o,--out", gen_out, "output CSV (default stdout)");
  gen->add_option("--seed", gen_seed, "override the generator seed");
  gen->add_option("-n,--rows", gen_n, "override the sample count");

  std::string data_path, dag_path, sem_out = "-";
  auto* sem = app.add_subcommand("fit-sem", "fit the path model and report coefficients");
  sem->add_option("-d,--data", data_path, "input CSV")->required();
  sem->add_option("-g,--dag", dag_path, "DAG/measurement spec")->required();
  sem->add_option("-o,--out", sem_out, "report file (default stdout)");

  std::string tune_template, tune_out = "-";
  std::size_t tune_budget = 25, tune_epochs = 50, tune_batch = 4;
  std::uint64_t tune_seed = 1;
  auto* tn = app.add_subcommand("tune", "random search over layer widths and learning rates");
  tn->add_option("-d,--data", data_path, "input CSV")->required();
  tn->add_option("-g,--dag", dag_path, "DAG/measurement spec")->required();
  tn->add_option("-t,--template", tune_template, "network template ([network] section)");
  tn->add_option("-o,--out", tune_out, "chosen network config (default stdout)");
  tn->add_option("--budget", tune_budget, "number of trials");
  tn->add_option("--seed", tune_seed, "search seed");
  tn->add_option("--epochs", tune_epochs, "epochs per trial");
  tn->add_option("--batch", tune_batch, "batch size");

  std::string grid_path, out_dir = "results";
  std::optional<std::size_t> threads;
  bool svg = false;
  auto* run = app.add_subcommand("run", "run the ablation grid and write reports");
  run->add_option("-G,--grid", grid_path, "grid config")->required();
  run->add_option("-d,--data", data_path, "input CSV")->required();
  run->add_option("-g,--dag", dag_path, "DAG/measurement spec")->required();
  run->add_option("-o,--out", out_dir, "output directory");
  run->add_option("-j,--threads", threads, "worker threads (overrides the grid file)");
  run->add_flag("--svg", svg, "also write SVG loss curves");

  std::string records_path;
  auto* rep = app.add_subcommand("report", "rebuild tables and curves from records.csv");
  rep->add_option("-r,--records", records_path, "records.csv from a previous run")->required();
  rep->add_option("-o,--out", out_dir, "output directory");
  rep->add_flag("--svg", svg, "also write SVG loss curves");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) return gen_data(gen_config, gen_out, gen_seed, gen_n);
    if (*sem) return fit_sem(data_path, dag_path, sem_out);
    if (*tn) {
      return tune_cmd(data_path, dag_path, tune_template, tune_out, tune_budget, tune_seed,
                      tune_epochs, tune_batch);
    }
    if (*run) return run_cmd(grid_path, data_path, dag_path, out_dir, threads, svg);
    if (*rep) return report_cmd(records_path, out_dir, svg);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
