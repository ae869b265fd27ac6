#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <set>

#include "cbnn/data.hpp"
#include "cbnn/errors.hpp"
#include "cbnn/harness.hpp"
#include "fixtures.hpp"

using namespace cbnn;
using cbnn::testing::small_problem;

namespace {

RunRecord record(std::string cfg, std::string abl, std::vector<double> val) {
  RunRecord r;
  r.configuration = std::move(cfg);
  r.ablation = std::move(abl);
  r.train_loss = val;
  r.val_loss = std::move(val);
  return r;
}

ExperimentGrid tiny_grid() {
  ExperimentGrid g;
  g.configurations = {"flipout"};
  g.ablations = {"none"};
  g.repetitions = 1;
  g.folds = 1;
  g.epochs = 2;
  g.batch_size = 8;
  return g;
}

}  // namespace

// ---- search -------------------------------------------------------------------------

TEST(Search, CandidatesFlooredAtOne) {
  EXPECT_EQ(SearchSpace::candidates_around(1), (std::vector<std::size_t>{1, 3, 5}));
  EXPECT_EQ(SearchSpace::candidates_around(48), (std::vector<std::size_t>{44, 46, 48, 50, 52}));
}

TEST(Search, AsAblationPinsFirstPosition) {
  GraphSpec spec;
  spec.ablation = "AS";
  const SearchSpace s = SearchSpace::for_network(spec);
  EXPECT_EQ(s.widths[0], (std::vector<std::size_t>{0}));
  EXPECT_EQ(s.widths[1], SearchSpace::candidates_around(48));
}

TEST(Search, TrialsRespectRanges) {
  SearchSpace s = SearchSpace::for_network(GraphSpec{});
  s.budget = 200;
  s.seed = 3;
  const auto trials = propose_trials(s);
  ASSERT_EQ(trials.size(), 200u);
  for (const Trial& t : trials) {
    EXPECT_GE(t.lr1, 0.01);
    EXPECT_LE(t.lr1, 0.1);
    EXPECT_GE(t.lr2, 0.01);
    EXPECT_LE(t.lr2, 0.1);
    EXPECT_NE(std::find(s.widths[0].begin(), s.widths[0].end(), t.hidden1), s.widths[0].end());
    EXPECT_NE(std::find(s.widths[1].begin(), s.widths[1].end(), t.hidden2), s.widths[1].end());
  }
  const auto again = propose_trials(s);
  EXPECT_EQ(again.front().lr1, trials.front().lr1);
}

TEST(Search, BudgetOneReturnsThatTrial) {
  const auto prob = small_problem(20);
  SearchSpace s = SearchSpace::for_network(GraphSpec{});
  s.budget = 1;
  const auto proposed = propose_trials(s);
  const TuneResult r = tune(s, GraphSpec{}, prob.model, [](const GraphSpec&) { return 1.0; });
  ASSERT_EQ(r.trials.size(), 1u);
  EXPECT_EQ(r.best, 0u);
  EXPECT_EQ(r.chosen.hidden1, proposed[0].hidden1);
  EXPECT_EQ(r.chosen.lr2, proposed[0].lr2);
}

TEST(Search, LowestLossWins) {
  const auto prob = small_problem(20);
  SearchSpace s = SearchSpace::for_network(GraphSpec{});
  s.budget = 2;
  int call = 0;
  const TuneResult r = tune(s, GraphSpec{}, prob.model, [&](const GraphSpec&) {
    return call++ == 0 ? 5.0 : 3.0;
  });
  EXPECT_EQ(r.best, 1u);
  EXPECT_EQ(r.chosen.hidden2, r.trials[1].hidden2);
}

TEST(Search, SelectBestSkipsDivergedTrials) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<Trial> t(3);
  t[0].val_loss = inf;
  t[1].val_loss = 2.0;
  t[2].val_loss = 2.0;
  EXPECT_EQ(select_best(t), 1u);
  for (auto& x : t) x.val_loss = inf;
  EXPECT_THROW(select_best(t), NumericError);
}

TEST(Search, InterpretationFlags) {
  GraphSpec spec;
  spec.hidden1 = 44;
  spec.hidden2 = 49;
  const auto flags = interpretation_flags(spec);
  ASSERT_EQ(flags.size(), 2u);
  EXPECT_EQ(flags[0].annotation, "lower aleatoric uncertainty");
  EXPECT_EQ(flags[1].annotation, "");
  spec.hidden1 = 52;
  EXPECT_EQ(interpretation_flags(spec)[0].annotation, "possible missing latent variables");
}

// ---- grid ---------------------------------------------------------------------------

TEST(Grid, DefaultHasTwelveCells) {
  EXPECT_EQ(ExperimentGrid{}.cell_count(), 12u);
}

TEST(Grid, CellSpecsMapConfigurations) {
  const GraphSpec base;
  EXPECT_EQ(cell_spec(base, "flipout", "none").optimizer, OptimizerKind::adam);
  EXPECT_EQ(cell_spec(base, "vadam", "none").layer_kind, LayerKind::dense);
  const GraphSpec both = cell_spec(base, "both", "SM");
  EXPECT_EQ(both.layer_kind, LayerKind::flipout);
  EXPECT_EQ(both.optimizer, OptimizerKind::vadam);
  EXPECT_EQ(both.ablation, "SM");
  EXPECT_EQ(cell_spec(base, "flipout", "none").ablation, "");
  EXPECT_THROW(cell_spec(base, "dropout", "none"), ValidationError);
}

TEST(Grid, ConfigRoundTrip) {
  ExperimentGrid g;
  g.protocol = Protocol::repeated_kfold;
  g.repetitions = 2;
  g.base.hidden2 = 11;
  const ExperimentGrid back = ExperimentGrid::from_config(Config::parse(g.to_config().serialize()));
  EXPECT_EQ(back.to_config().serialize(), g.to_config().serialize());
}

TEST(Grid, RejectsBadGrids) {
  ExperimentGrid g;
  g.folds = 0;
  EXPECT_THROW(g.validate(), ValidationError);
  g = ExperimentGrid{};
  g.holdout_fraction = 1.0;
  EXPECT_THROW(g.validate(), ValidationError);
  g = ExperimentGrid{};
  g.ablations = {"none", "FP"};
  EXPECT_THROW(g.validate(), ValidationError);
}

TEST(Splits, HoldoutIsDeterministicAndDisjoint) {
  ExperimentGrid g;
  g.repetitions = 2;
  g.folds = 3;
  const auto a = make_splits(100, g);
  const auto b = make_splits(100, g);
  ASSERT_EQ(a.size(), 6u);
  EXPECT_EQ(split_hash(a), split_hash(b));
  for (const Split& s : a) {
    EXPECT_EQ(s.validation.size(), 10u);
    EXPECT_EQ(s.train.size(), 90u);
    std::set<std::size_t> all(s.train.begin(), s.train.end());
    all.insert(s.validation.begin(), s.validation.end());
    EXPECT_EQ(all.size(), 100u);
  }
  EXPECT_NE(a[0].validation, a[1].validation);
  g.split_seed = 2;
  EXPECT_NE(split_hash(make_splits(100, g)), split_hash(a));
}

TEST(Splits, KFoldPartitionsEachRepetition) {
  ExperimentGrid g;
  g.protocol = Protocol::repeated_kfold;
  g.repetitions = 2;
  g.folds = 4;
  const auto splits = make_splits(22, g);
  ASSERT_EQ(splits.size(), 8u);
  for (std::size_t r = 0; r < 2; ++r) {
    std::multiset<std::size_t> seen;
    for (std::size_t f = 0; f < 4; ++f) {
      const Split& s = splits[r * 4 + f];
      seen.insert(s.validation.begin(), s.validation.end());
      EXPECT_EQ(s.train.size() + s.validation.size(), 22u);
    }
    EXPECT_EQ(seen.size(), 22u);
    EXPECT_EQ(std::set<std::size_t>(seen.begin(), seen.end()).size(), 22u);
  }
}

TEST(Grid, OneCellOneRunGivesOneRecord) {
  const auto prob = small_problem(40);
  const GridResult r = run_grid(tiny_grid(), prob.data, prob.model);
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_EQ(r.records[0].val_loss.size(), 2u);
  const auto rep = summarize(r.records);
  ASSERT_EQ(rep.cells.size(), 1u);
  EXPECT_EQ(summary_csv(rep).find("nan"), std::string::npos);
}

TEST(Grid, CellsShareSplitsAndThreadsDoNotChangeResults) {
  const auto prob = small_problem(40);
  ExperimentGrid g = tiny_grid();
  g.ablations = {"none", "BD"};
  g.folds = 2;
  const GridResult one = run_grid(g, prob.data, prob.model);
  g.threads = 3;
  const GridResult three = run_grid(g, prob.data, prob.model);
  EXPECT_EQ(one.fold_hash, split_hash(make_splits(40, g)));
  EXPECT_EQ(records_csv(one.records), records_csv(three.records));
  ASSERT_EQ(one.records.size(), 4u);
  EXPECT_EQ(one.records[0].ablation, "none");
  EXPECT_EQ(one.records[2].ablation, "BD");
}

// ---- summaries ----------------------------------------------------------------------

TEST(Summary, MedianAndDropPercent) {
  EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
  EXPECT_DOUBLE_EQ(drop_percent(8.0, 3.0), 62.5);
  EXPECT_DOUBLE_EQ(drop_percent(8.0, 10.0), -25.0);
}

TEST(Summary, ConvergenceEpoch) {
  EXPECT_EQ(convergence_epoch({10.0, 5.0, 2.04, 2.0}), 3u);
  EXPECT_EQ(convergence_epoch({2.0}), 1u);
  EXPECT_FALSE(convergence_epoch({}).has_value());
}

TEST(Summary, DropIsRelativeToSameConfiguration) {
  std::vector<RunRecord> rs{record("flipout", "none", {8.0, 6.0}), record("flipout", "BD", {3.0, 2.0}),
                            record("vadam", "none", {4.0, 1.0}), record("vadam", "BD", {5.0, 1.0})};
  const auto rep = summarize(rs);
  ASSERT_EQ(rep.cells.size(), 4u);
  EXPECT_DOUBLE_EQ(*rep.find("flipout", "BD")->first_epoch_drop_percent, 62.5);
  EXPECT_DOUBLE_EQ(*rep.find("vadam", "BD")->first_epoch_drop_percent, -25.0);
  EXPECT_FALSE(rep.find("flipout", "none")->first_epoch_drop_percent.has_value());
  EXPECT_EQ(rep.find("flipout", "BD")->median_min_val_loss, 2.0);
}

TEST(Summary, SingleRecordGivesOneByOneTable) {
  const auto rep = summarize({record("flipout", "none", {3.0, 2.5})});
  const std::string csv = summary_csv(rep);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
}

TEST(Records, CsvRoundTrip) {
  std::vector<RunRecord> rs{record("flipout", "none", {1.25, 0.1 + 0.2}),
                            record("both", "AS", {7.0})};
  rs[1].degraded = true;
  rs[1].repetition = 3;
  rs[1].fold = 4;
  rs[1].fingerprint = 0x1234;
  const std::string text = records_csv(rs);
  const auto back = parse_records_csv(text);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].val_loss, rs[0].val_loss);
  EXPECT_TRUE(back[1].degraded);
  EXPECT_EQ(back[1].fold, 4u);
  EXPECT_EQ(records_csv(back), text);
}

TEST(Records, ReportIsByteIdentical) {
  std::vector<RunRecord> rs{record("flipout", "none", {8.0, 6.0, 5.9}),
                            record("flipout", "BD", {3.0, 2.0, 2.0})};
  const auto base = std::filesystem::temp_directory_path() / "cbnn_report_test";
  std::filesystem::remove_all(base);
  const auto a = report(rs, base / "a", {true});
  const auto b = report(rs, base / "b", {true});
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    EXPECT_EQ(read_text_file(a[i]), read_text_file(b[i])) << a[i];
  EXPECT_THROW(report({}, base / "c"), ValidationError);
  std::filesystem::remove_all(base);
}

// ---- file formats -------------------------------------------------------------------

TEST(Formats, CsvCommentsAndValues) {
  const auto doc = parse_csv("# seed = 1\n# n = 2\na,b\n1,2.5\n-3,4e-3\n");
  ASSERT_EQ(doc.comments.size(), 2u);
  EXPECT_EQ(doc.data.names, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(doc.data.values(1, 1), 4e-3);
  EXPECT_THROW(parse_csv("a,b\n1\n"), ValidationError);
  EXPECT_THROW(parse_csv("a\nfoo\n"), ValidationError);
}

TEST(Formats, IniSectionsAndLists) {
  const Config c = Config::parse("; note\n[x]\nk = 1, 2 ,3\nflag = true\n");
  EXPECT_EQ(c.get_list("x", "k"), (std::vector<std::string>{"1", "2", "3"}));
  EXPECT_TRUE(c.get_bool("x", "flag", false));
  EXPECT_EQ(c.get_size("x", "missing", 7), 7u);
  EXPECT_THROW(c.get("y", "k"), ValidationError);
}

TEST(Formats, DoublesRoundTripExactly) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 12345.678}) EXPECT_EQ(std::stod(format_double(v)), v);
  EXPECT_EQ(format_double(0.5), "0.5");
}
