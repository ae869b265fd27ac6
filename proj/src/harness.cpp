#include "cbnn/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "cbnn/errors.hpp"

namespace cbnn {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct ConcatWidths {
  std::size_t first = 0;   // 0 when chevron 1 is ablated away
  std::size_t second = 0;
};

ConcatWidths concat_widths(const GraphSpec& spec) {
  const std::size_t inputs = (spec.ablation == "SM" ? 0 : spec.sm_width) +
                             (spec.ablation == "BD" ? 0 : spec.bd_width);
  if (spec.ablation == "AS") return {0, inputs};
  return {inputs, inputs + 1};
}

std::vector<std::size_t> permutation(std::size_t n, Rng rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
  return order;
}

std::uint64_t fnv(std::uint64_t h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xff;
    h *= 0x100000001b3ULL;
  }
  return h;
}

const std::vector<std::string> kConfigurations{"flipout", "vadam", "both"};
const std::vector<std::string> kAblations{"none", "BD", "SM", "AS"};

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
  return out;
}

std::string fixed(double v, int digits = 4) {
  if (!std::isfinite(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

}  // namespace

// ---- search ------------------------------------------------------------------------

std::vector<std::size_t> SearchSpace::candidates_around(std::size_t in) {
  std::vector<std::size_t> out;
  for (int delta : {-4, -2, 0, 2, 4}) {
    const long long w = static_cast<long long>(in) + delta;
    const std::size_t v = w < 1 ? 1 : static_cast<std::size_t>(w);
    if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
  }
  return out;
}

SearchSpace SearchSpace::for_network(const GraphSpec& spec) {
  const ConcatWidths c = concat_widths(spec);
  SearchSpace s;
  s.widths.push_back(c.first == 0 ? std::vector<std::size_t>{0} : candidates_around(c.first));
  s.widths.push_back(candidates_around(c.second));
  return s;
}

void SearchSpace::validate() const {
  if (budget == 0) throw ValidationError("tune: budget must be >= 1");
  if (!(lr_min > 0.0) || !(lr_min <= lr_max)) {
    throw ValidationError("tune: learning-rate range must satisfy 0 < min <= max");
  }
  if (widths.size() != 2) throw ValidationError("tune: expected width candidates for 2 positions");
  for (const auto& w : widths)
    if (w.empty()) throw ValidationError("tune: empty width candidate list");
}

std::vector<Trial> propose_trials(const SearchSpace& space) {
  space.validate();
  Rng rng(space.seed);
  const double lo = std::log(space.lr_min);
  const double hi = std::log(space.lr_max);
  auto draw_lr = [&] {
    return std::clamp(std::exp(lo + rng.uniform() * (hi - lo)), space.lr_min, space.lr_max);
  };
  std::vector<Trial> trials(space.budget);
  for (Trial& t : trials) {
    t.hidden1 = space.widths[0][rng.uniform_index(space.widths[0].size())];
    t.hidden2 = space.widths[1][rng.uniform_index(space.widths[1].size())];
    t.lr1 = draw_lr();
    t.lr2 = draw_lr();
  }
  return trials;
}

std::size_t select_best(const std::vector<Trial>& trials) {
  if (trials.empty()) throw ValidationError("tune: no trials");
  std::size_t best = trials.size();
  for (std::size_t i = 0; i < trials.size(); ++i) {
    if (!std::isfinite(trials[i].val_loss)) continue;
    if (best == trials.size() || trials[i].val_loss < trials[best].val_loss) best = i;
  }
  if (best == trials.size()) throw NumericError("tune: every trial diverged");
  return best;
}

std::vector<LayerFlag> interpretation_flags(const GraphSpec& chosen) {
  const ConcatWidths c = concat_widths(chosen);
  std::vector<LayerFlag> flags;
  auto add = [&](const std::string& layer, std::size_t in, std::size_t width) {
    LayerFlag f{layer, in, width == 0 ? in : width, ""};
    if (f.chosen_width < in) f.annotation = "lower aleatoric uncertainty";
    if (f.chosen_width > in) f.annotation = "possible missing latent variables";
    flags.push_back(f);
  };
  if (c.first) add("chevron1.hidden", c.first, chosen.hidden1);
  add("chevron2.hidden", c.second, chosen.hidden2);
  return flags;
}

TuneResult tune(const SearchSpace& space, const GraphSpec& tmpl, const PathModel& model,
                const TrialEvaluator& evaluate) {
  (void)model;
  TuneResult result;
  result.trials = propose_trials(space);
  for (Trial& t : result.trials) {
    GraphSpec spec = tmpl;
    spec.hidden1 = t.hidden1;
    spec.hidden2 = t.hidden2;
    spec.lr1 = t.lr1;
    spec.lr2 = t.lr2;
    try {
      t.val_loss = evaluate(spec);
    } catch (const NumericError&) {
      t.val_loss = kInf;
    }
    if (!std::isfinite(t.val_loss)) t.val_loss = kInf;
  }
  result.best = select_best(result.trials);
  const Trial& b = result.trials[result.best];
  result.chosen = tmpl;
  result.chosen.hidden1 = b.hidden1;
  result.chosen.hidden2 = b.hidden2;
  result.chosen.lr1 = b.lr1;
  result.chosen.lr2 = b.lr2;
  result.flags = interpretation_flags(result.chosen);
  return result;
}

TuneResult tune(const SearchSpace& space, const GraphSpec& tmpl, const PathModel& model,
                const NetworkData& data, const TrainOptions& options) {
  if (data.rows() < 2) throw ValidationError("tune: need at least 2 rows");
  const auto order = permutation(data.rows(), Rng(space.seed).split(7));
  const std::size_t n_val = std::max<std::size_t>(1, data.rows() / 10);
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<long>(n_val));
  std::vector<std::size_t> tr(order.begin() + static_cast<long>(n_val), order.end());
  std::sort(val.begin(), val.end());
  std::sort(tr.begin(), tr.end());
  const NetworkData train = data.subset(tr);
  const NetworkData validation = data.subset(val);
  return tune(space, tmpl, model, [&](const GraphSpec& spec) {
    const RunRecord r = train_network(spec, model, train, validation, options);
    return r.degraded || r.val_loss.empty() ? kInf : r.val_loss.back();
  });
}

std::string format_tune_report(const TuneResult& result) {
  std::ostringstream os;
  os << "trial  hidden1  hidden2  lr1       lr2       val_loss\n";
  for (std::size_t i = 0; i < result.trials.size(); ++i) {
    const Trial& t = result.trials[i];
    char line[160];
    std::snprintf(line, sizeof(line), "%5zu  %7zu  %7zu  %.6f  %.6f  %s%s\n", i + 1, t.hidden1,
                  t.hidden2, t.lr1, t.lr2, fixed(t.val_loss).c_str(),
                  i == result.best ? "  <- chosen" : "");
    os << line;
  }
  os << "\n";
  for (const LayerFlag& f : result.flags) {
    os << f.layer << ": input " << f.input_width << ", width " << f.chosen_width;
    if (!f.annotation.empty()) os << " (" << f.annotation << ")";
    os << "\n";
  }
  return os.str();
}

// ---- grid --------------------------------------------------------------------------

void ExperimentGrid::validate() const {
  if (configurations.empty() || ablations.empty()) throw ValidationError("grid: no cells");
  for (const auto& c : configurations) {
    if (std::find(kConfigurations.begin(), kConfigurations.end(), c) == kConfigurations.end()) {
      throw ValidationError("grid: unknown configuration '" + c + "'");
    }
  }
  for (const auto& a : ablations) {
    if (std::find(kAblations.begin(), kAblations.end(), a) == kAblations.end()) {
      throw ValidationError("grid: unknown ablation '" + a + "'");
    }
  }
  if (repetitions == 0 || folds == 0) throw ValidationError("grid: repetitions and folds must be >= 1");
  if (epochs == 0 || batch_size == 0) throw ValidationError("grid: epochs and batch_size must be >= 1");
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    throw ValidationError("grid: holdout_fraction must lie in (0, 1)");
  }
  if (protocol == Protocol::repeated_kfold && folds < 2) {
    throw ValidationError("grid: repeated_kfold needs folds >= 2");
  }
  base.validate();
}

ExperimentGrid ExperimentGrid::from_config(const Config& cfg) {
  ExperimentGrid g;
  if (cfg.has("grid", "configurations")) g.configurations = cfg.get_list("grid", "configurations");
  if (cfg.has("grid", "ablations")) g.ablations = cfg.get_list("grid", "ablations");
  const std::string protocol = cfg.get_or("grid", "protocol", "repeated_holdout");
  if (protocol == "repeated_holdout") {
    g.protocol = Protocol::repeated_holdout;
  } else if (protocol == "repeated_kfold") {
    g.protocol = Protocol::repeated_kfold;
  } else {
    throw ValidationError("grid: protocol must be repeated_holdout or repeated_kfold");
  }
  g.repetitions = cfg.get_size("grid", "repetitions", g.repetitions);
  g.folds = cfg.get_size("grid", "folds", g.folds);
  g.holdout_fraction = cfg.get_double("grid", "holdout_fraction", g.holdout_fraction);
  g.epochs = cfg.get_size("grid", "epochs", g.epochs);
  g.batch_size = cfg.get_size("grid", "batch_size", g.batch_size);
  g.split_seed = cfg.get_u64("grid", "split_seed", g.split_seed);
  g.train_seed = cfg.get_u64("grid", "train_seed", g.train_seed);
  g.threads = cfg.get_size("grid", "threads", g.threads);
  if (cfg.has_section("network")) g.base = GraphSpec::from_config(cfg, "network");
  g.validate();
  return g;
}

Config ExperimentGrid::to_config() const {
  Config c;
  c.set("grid", "configurations", join(configurations, ", "));
  c.set("grid", "ablations", join(ablations, ", "));
  c.set("grid", "protocol",
        protocol == Protocol::repeated_holdout ? "repeated_holdout" : "repeated_kfold");
  c.set("grid", "repetitions", std::to_string(repetitions));
  c.set("grid", "folds", std::to_string(folds));
  c.set("grid", "holdout_fraction", format_double(holdout_fraction));
  c.set("grid", "epochs", std::to_string(epochs));
  c.set("grid", "batch_size", std::to_string(batch_size));
  c.set("grid", "split_seed", std::to_string(split_seed));
  c.set("grid", "train_seed", std::to_string(train_seed));
  c.set("grid", "threads", std::to_string(threads));
  base.write_config(c, "network");
  return c;
}

GraphSpec cell_spec(const GraphSpec& base, const std::string& configuration,
                    const std::string& ablation) {
  GraphSpec s = base;
  if (configuration == "flipout") {
    s.layer_kind = LayerKind::flipout;
    s.optimizer = OptimizerKind::adam;
  } else if (configuration == "vadam") {
    s.layer_kind = LayerKind::dense;
    s.optimizer = OptimizerKind::vadam;
  } else if (configuration == "both") {
    s.layer_kind = LayerKind::flipout;
    s.optimizer = OptimizerKind::vadam;
  } else {
    throw ValidationError("unknown configuration '" + configuration + "'");
  }
  s.ablation = ablation == "none" ? "" : ablation;
  s.validate();
  return s;
}

std::string configuration_label(const std::string& configuration) {
  if (configuration == "flipout") return "Flipout";
  if (configuration == "vadam") return "Vadam";
  if (configuration == "both") return "Both";
  return configuration;
}

std::string ablation_label(const std::string& ablation) {
  if (ablation == "none") return "Full";
  return "No " + ablation;
}

std::vector<Split> make_splits(std::size_t n, const ExperimentGrid& grid) {
  if (n < 2) throw ValidationError("make_splits: need at least 2 rows");
  if (grid.protocol == Protocol::repeated_kfold && grid.folds > n) {
    throw ValidationError("make_splits: more folds than rows");
  }
  const Rng root(grid.split_seed);
  std::vector<Split> splits;
  auto finish = [&splits](std::vector<std::size_t> tr, std::vector<std::size_t> va) {
    std::sort(tr.begin(), tr.end());
    std::sort(va.begin(), va.end());
    splits.push_back({std::move(tr), std::move(va)});
  };
  for (std::size_t r = 0; r < grid.repetitions; ++r) {
    if (grid.protocol == Protocol::repeated_kfold) {
      const auto order = permutation(n, root.split(r));
      for (std::size_t f = 0; f < grid.folds; ++f) {
        const std::size_t lo = f * n / grid.folds;
        const std::size_t hi = (f + 1) * n / grid.folds;
        std::vector<std::size_t> tr, va;
        for (std::size_t i = 0; i < n; ++i) (i >= lo && i < hi ? va : tr).push_back(order[i]);
        finish(std::move(tr), std::move(va));
      }
    } else {
      const std::size_t n_val = std::clamp<std::size_t>(
          static_cast<std::size_t>(std::llround(grid.holdout_fraction * static_cast<double>(n))),
          1, n - 1);
      for (std::size_t f = 0; f < grid.folds; ++f) {
        const auto order = permutation(n, root.split(1000003 * (r + 1) + f));
        finish(std::vector<std::size_t>(order.begin() + static_cast<long>(n_val), order.end()),
               std::vector<std::size_t>(order.begin(), order.begin() + static_cast<long>(n_val)));
      }
    }
  }
  return splits;
}

std::uint64_t split_hash(const std::vector<Split>& splits) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Split& s : splits) {
    h = fnv(h, s.train.size());
    for (std::size_t i : s.validation) h = fnv(h, i);
  }
  return h;
}

GridResult run_grid(const ExperimentGrid& grid, const NetworkData& data, const PathModel& model) {
  grid.validate();
  const auto splits = make_splits(data.rows(), grid);
  GridResult result;
  result.fold_hash = split_hash(splits);
  result.log.push_back("fold membership hash " + hex64(result.fold_hash) + " (" +
                       std::to_string(splits.size()) + " splits)");

  struct Job {
    std::string configuration;
    std::string ablation;
    std::size_t rep;
    std::size_t fold;
  };
  std::vector<Job> jobs;
  for (const auto& c : grid.configurations)
    for (const auto& a : grid.ablations)
      for (std::size_t r = 0; r < grid.repetitions; ++r)
        for (std::size_t f = 0; f < grid.folds; ++f) jobs.push_back({c, a, r, f});

  // Fold-level data is shared by every cell.
  std::vector<NetworkData> train_sets, val_sets;
  for (const Split& s : splits) {
    train_sets.push_back(data.subset(s.train));
    val_sets.push_back(data.subset(s.validation));
  }

  result.records.resize(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      const Job& job = jobs[j];
      try {
        const std::size_t k = job.rep * grid.folds + job.fold;
        const Rng seeds = Rng(grid.train_seed).split(k);
        GraphSpec spec = cell_spec(grid.base, job.configuration, job.ablation);
        spec.init_seed = seeds.split(1).next_u64();
        TrainOptions opts{grid.epochs, grid.batch_size, seeds.split(2).next_u64()};
        RunRecord rec = train_network(spec, model, train_sets[k], val_sets[k], opts);
        rec.configuration = job.configuration;
        rec.ablation = job.ablation;
        rec.repetition = job.rep;
        rec.fold = job.fold;
        result.records[j] = std::move(rec);
      } catch (...) {
        errors[j] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(grid.threads, jobs.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (const RunRecord& r : result.records) {
    if (r.degraded) {
      result.log.push_back("degraded run " + r.configuration + "/" + r.ablation + " rep " +
                           std::to_string(r.repetition) + " fold " + std::to_string(r.fold) +
                           ": " + r.failure);
    }
  }
  return result;
}

GridResult run_grid(const ExperimentGrid& grid, const DataMatrix& data, const MeasurementSpec& spec) {
  const DagReport dag = dag_validate(spec.model);
  const PathModel fitted = fit_paths(data, spec);
  std::vector<std::string> log;
  log.push_back("dag ok: " + join(dag.topological_order, " -> ") + ", " +
                std::to_string(dag.colliders.size()) + " colliders");
  for (std::size_t e = 0; e < fitted.edges.size(); ++e) {
    log.push_back("path " + fitted.edges[e].src + " -> " +
                  fitted.edges[e].dst + " = " + fixed(fitted.coefficients[e], 3) +
                  significance_stars(fitted.p_values[e]));
  }
  log.push_back("weakest path source: " + weakest_path(fitted));
  GridResult result = run_grid(grid, network_data(data, spec), fitted);
  log.insert(log.end(), result.log.begin(), result.log.end());
  result.log = std::move(log);
  return result;
}

// ---- convergence -------------------------------------------------------------------

double median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const std::size_t m = values.size() / 2;
  return values.size() % 2 ? values[m] : 0.5 * (values[m - 1] + values[m]);
}

double drop_percent(double full, double ablated) { return (full - ablated) / full * 100.0; }

std::optional<std::size_t> convergence_epoch(const std::vector<double>& curve, double band) {
  if (curve.empty()) return std::nullopt;
  const double final_value = curve.back();
  for (std::size_t e = 0; e < curve.size(); ++e) {
    if (std::abs(curve[e] - final_value) <= band * std::abs(final_value)) return e + 1;
  }
  return curve.size();
}

const CellSummary* ConvergenceReport::find(const std::string& configuration,
                                           const std::string& ablation) const {
  for (const auto& c : cells)
    if (c.configuration == configuration && c.ablation == ablation) return &c;
  return nullptr;
}

ConvergenceReport summarize(const std::vector<RunRecord>& records) {
  if (records.empty()) throw ValidationError("no run records");
  ConvergenceReport report;
  std::vector<std::vector<const RunRecord*>> groups;
  for (const RunRecord& r : records) {
    std::size_t g = 0;
    while (g < report.cells.size() && !(report.cells[g].configuration == r.configuration &&
                                        report.cells[g].ablation == r.ablation)) {
      ++g;
    }
    if (g == report.cells.size()) {
      CellSummary c;
      c.configuration = r.configuration;
      c.ablation = r.ablation;
      report.cells.push_back(c);
      groups.emplace_back();
    }
    groups[g].push_back(&r);
  }
  for (std::size_t g = 0; g < groups.size(); ++g) {
    CellSummary& cell = report.cells[g];
    std::vector<double> mins, firsts;
    std::size_t epochs = 0;
    for (const RunRecord* r : groups[g]) {
      ++cell.runs;
      if (r->degraded) ++cell.degraded;
      if (r->val_loss.empty()) continue;
      mins.push_back(r->best_val_loss());
      firsts.push_back(r->val_loss.front());
      epochs = std::max(epochs, r->val_loss.size());
    }
    cell.median_min_val_loss = median(mins);
    cell.median_first_epoch_loss = median(firsts);
    for (std::size_t e = 0; e < epochs; ++e) {
      std::vector<double> tr, va;
      for (const RunRecord* r : groups[g]) {
        if (e < r->val_loss.size()) {
          va.push_back(r->val_loss[e]);
          tr.push_back(r->train_loss[e]);
        }
      }
      cell.median_train_curve.push_back(median(tr));
      cell.median_val_curve.push_back(median(va));
    }
    cell.convergence_epoch = convergence_epoch(cell.median_val_curve);
  }
  for (CellSummary& cell : report.cells) {
    if (cell.ablation == "none") continue;
    const CellSummary* full = report.find(cell.configuration, "none");
    if (full && std::isfinite(full->median_first_epoch_loss) &&
        std::isfinite(cell.median_first_epoch_loss) && full->median_first_epoch_loss != 0.0) {
      cell.first_epoch_drop_percent =
          drop_percent(full->median_first_epoch_loss, cell.median_first_epoch_loss);
    }
  }
  return report;
}

// ---- serialization -----------------------------------------------------------------

std::string records_csv(const std::vector<RunRecord>& records) {
  std::string out = "configuration,ablation,repetition,fold,fingerprint,degraded,epoch,train_loss,val_loss\n";
  for (const RunRecord& r : records) {
    const std::string prefix = r.configuration + "," + r.ablation + "," +
                               std::to_string(r.repetition) + "," + std::to_string(r.fold) + "," +
                               hex64(r.fingerprint) + "," + (r.degraded ? "1" : "0") + ",";
    if (r.val_loss.empty()) out += prefix + "0,nan,nan\n";
    for (std::size_t e = 0; e < r.val_loss.size(); ++e) {
      out += prefix + std::to_string(e + 1) + "," + format_double(r.train_loss[e]) + "," +
             format_double(r.val_loss[e]) + "\n";
    }
  }
  return out;
}

std::vector<RunRecord> parse_records_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || trim(line).rfind("configuration,", 0) != 0) {
    throw ValidationError("records: missing header");
  }
  std::vector<RunRecord> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_list(line, ',');
    if (f.size() != 9) {
      throw ValidationError("records line " + std::to_string(line_no) + ": expected 9 fields");
    }
    try {
      const std::size_t rep = std::stoul(f[2]);
      const std::size_t fold = std::stoul(f[3]);
      const std::size_t epoch = std::stoul(f[6]);
      if (out.empty() || out.back().configuration != f[0] || out.back().ablation != f[1] ||
          out.back().repetition != rep || out.back().fold != fold) {
        RunRecord r;
        r.configuration = f[0];
        r.ablation = f[1];
        r.repetition = rep;
        r.fold = fold;
        r.fingerprint = std::stoull(f[4], nullptr, 16);
        r.degraded = f[5] == "1";
        out.push_back(std::move(r));
      }
      if (epoch == 0) continue;
      if (epoch != out.back().val_loss.size() + 1) {
        throw ValidationError("records line " + std::to_string(line_no) + ": epochs out of order");
      }
      out.back().train_loss.push_back(std::stod(f[7]));
      out.back().val_loss.push_back(std::stod(f[8]));
    } catch (const std::logic_error&) {
      throw ValidationError("records line " + std::to_string(line_no) + ": malformed number");
    }
  }
  if (out.empty()) throw ValidationError("records: no rows");
  return out;
}

std::string runs_csv(const std::vector<RunRecord>& records) {
  std::string out = "configuration,ablation,repetition,fold,fingerprint,epochs,best_val_loss,degraded,failure\n";
  for (const RunRecord& r : records) {
    std::string failure = r.failure;
    std::replace(failure.begin(), failure.end(), ',', ';');
    out += r.configuration + "," + r.ablation + "," + std::to_string(r.repetition) + "," +
           std::to_string(r.fold) + "," + hex64(r.fingerprint) + "," +
           std::to_string(r.val_loss.size()) + "," + format_double(r.best_val_loss()) + "," +
           (r.degraded ? "1" : "0") + "," + failure + "\n";
  }
  return out;
}

namespace {

std::vector<std::string> ordered(const ConvergenceReport& report, bool configurations) {
  std::vector<std::string> seen;
  for (const auto& c : report.cells) {
    const std::string& v = configurations ? c.configuration : c.ablation;
    if (std::find(seen.begin(), seen.end(), v) == seen.end()) seen.push_back(v);
  }
  const auto& canon = configurations ? kConfigurations : kAblations;
  std::stable_sort(seen.begin(), seen.end(), [&](const std::string& a, const std::string& b) {
    auto rank = [&](const std::string& s) {
      return std::find(canon.begin(), canon.end(), s) - canon.begin();
    };
    return rank(a) < rank(b);
  });
  return seen;
}

}  // namespace

std::string summary_csv(const ConvergenceReport& report) {
  const auto configs = ordered(report, true);
  const auto ablations = ordered(report, false);
  std::string out = "configuration";
  for (const auto& a : ablations) out += "," + ablation_label(a);
  out += "\n";
  for (const auto& c : configs) {
    out += configuration_label(c);
    for (const auto& a : ablations) {
      const CellSummary* cell = report.find(c, a);
      out += "," + (cell ? format_double(cell->median_min_val_loss) : std::string());
    }
    out += "\n";
  }
  return out;
}

std::string summary_text(const ConvergenceReport& report) {
  const auto configs = ordered(report, true);
  const auto ablations = ordered(report, false);
  std::ostringstream os;
  os << "Median minimum validation loss\n\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%-10s", "");
  os << buf;
  for (const auto& a : ablations) {
    std::snprintf(buf, sizeof(buf), "%10s", ablation_label(a).c_str());
    os << buf;
  }
  os << "\n";
  for (const auto& c : configs) {
    std::snprintf(buf, sizeof(buf), "%-10s", configuration_label(c).c_str());
    os << buf;
    for (const auto& a : ablations) {
      const CellSummary* cell = report.find(c, a);
      std::snprintf(buf, sizeof(buf), "%10s", cell ? fixed(cell->median_min_val_loss).c_str() : "-");
      os << buf;
    }
    os << "\n";
  }
  os << "\nConvergence (median curves)\n\n";
  os << "configuration  ablation  runs  degraded  first_epoch  drop_%   converged_by\n";
  for (const auto& c : configs) {
    for (const auto& a : ablations) {
      const CellSummary* cell = report.find(c, a);
      if (!cell) continue;
      char line[200];
      std::snprintf(line, sizeof(line), "%-13s  %-8s  %4zu  %8zu  %11s  %7s  %s\n",
                    configuration_label(c).c_str(), ablation_label(a).c_str(), cell->runs,
                    cell->degraded, fixed(cell->median_first_epoch_loss).c_str(),
                    cell->first_epoch_drop_percent ? fixed(*cell->first_epoch_drop_percent, 1).c_str()
                                                   : "-",
                    cell->convergence_epoch
                        ? ("epoch " + std::to_string(*cell->convergence_epoch)).c_str()
                        : "-");
      os << line;
    }
  }
  return os.str();
}

std::string curve_csv(const CellSummary& cell) {
  std::string out = "epoch,train_loss,val_loss\n";
  for (std::size_t e = 0; e < cell.median_val_curve.size(); ++e) {
    out += std::to_string(e + 1) + "," + format_double(cell.median_train_curve[e]) + "," +
           format_double(cell.median_val_curve[e]) + "\n";
  }
  return out;
}

std::string curves_svg(const ConvergenceReport& report, const std::string& configuration) {
  const double w = 640, h = 400, left = 60, right = 130, top = 30, bottom = 40;
  std::vector<const CellSummary*> cells;
  double lo = kInf, hi = -kInf;
  std::size_t epochs = 1;
  for (const auto& c : report.cells) {
    if (c.configuration != configuration) continue;
    cells.push_back(&c);
    for (double v : c.median_val_curve) {
      if (!std::isfinite(v)) continue;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    epochs = std::max(epochs, c.median_val_curve.size());
  }
  if (!(lo < hi)) {
    lo = std::isfinite(lo) ? lo - 1 : 0;
    hi = lo + 2;
  }
  auto x = [&](std::size_t e) {
    return left + (w - left - right) * (epochs > 1 ? double(e) / double(epochs - 1) : 0.0);
  };
  auto y = [&](double v) { return top + (h - top - bottom) * (hi - v) / (hi - lo); };
  const char* colours[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << left << "\" y=\"18\" font-size=\"14\">" << configuration_label(configuration)
     << ": median validation loss</text>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << h - bottom << "\" x2=\"" << w - right << "\" y2=\""
     << h - bottom << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << h - bottom
     << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << left - 5 << "\" y=\"" << top + 4 << "\" font-size=\"10\" text-anchor=\"end\">"
     << fixed(hi, 2) << "</text>\n";
  os << "<text x=\"" << left - 5 << "\" y=\"" << h - bottom << "\" font-size=\"10\" text-anchor=\"end\">"
     << fixed(lo, 2) << "</text>\n";
  os << "<text x=\"" << w - right << "\" y=\"" << h - bottom + 15
     << "\" font-size=\"10\" text-anchor=\"end\">epoch " << epochs << "</text>\n";
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const char* colour = colours[i % 4];
    os << "<polyline fill=\"none\" stroke=\"" << colour << "\" points=\"";
    for (std::size_t e = 0; e < cells[i]->median_val_curve.size(); ++e) {
      const double v = cells[i]->median_val_curve[e];
      if (!std::isfinite(v)) continue;
      os << fixed(x(e), 1) << "," << fixed(y(v), 1) << " ";
    }
    os << "\"/>\n";
    os << "<text x=\"" << w - right + 10 << "\" y=\"" << top + 15 * (i + 1) << "\" font-size=\"12\" fill=\""
       << colour << "\">" << ablation_label(cells[i]->ablation) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::vector<std::filesystem::path> report(const std::vector<RunRecord>& records,
                                          const std::filesystem::path& out_dir,
                                          const ReportOptions& options) {
  const ConvergenceReport summary = summarize(records);
  std::vector<std::filesystem::path> written;
  auto emit = [&](const std::filesystem::path& p, const std::string& text) {
    write_text_file(p, text);
    written.push_back(p);
  };
  emit(out_dir / "summary.csv", summary_csv(summary));
  emit(out_dir / "summary.txt", summary_text(summary));
  for (const auto& cell : summary.cells) {
    emit(out_dir / "curves" / (cell.configuration + "_" + cell.ablation + ".csv"), curve_csv(cell));
  }
  if (options.svg) {
    for (const auto& c : ordered(summary, true)) {
      emit(out_dir / "curves" / (c + ".svg"), curves_svg(summary, c));
    }
  }
  return written;
}

}  // namespace cbnn
