#include "cbnn/synth.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "cbnn/errors.hpp"
#include "cbnn/rng.hpp"

namespace cbnn {

namespace {

constexpr std::size_t kBdColumns = 39;
constexpr std::size_t kBdVariables = 12;

enum Stream : std::uint64_t { kBd = 1, kSm, kAsNoise, kFpNoise, kAsItems, kFpItems, kMissing };

double ordinal(double score, double scale, double noise, Rng& rng) {
  const double raw = kOrdinalMidpoint + scale * (score + noise * rng.normal());
  return std::clamp(std::round(raw), kOrdinalMin, kOrdinalMax);
}

std::string two_digits(std::size_t v) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "%02zu", v);
  return buf;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + std::to_string(v[i]);
  return out;
}

}  // namespace

void GenConfig::validate() const {
  if (n < 10) throw ValidationError("generator: n must be at least 10");
  if (bd_categories.size() != kBdVariables) {
    throw ValidationError("generator: BD needs 12 categorical variables");
  }
  if (std::accumulate(bd_categories.begin(), bd_categories.end(), std::size_t{0}) != kBdColumns) {
    throw ValidationError("generator: BD category counts must sum to 39");
  }
  for (std::size_t c : bd_categories) {
    if (c < 2) throw ValidationError("generator: every BD variable needs >= 2 categories");
  }
  if (!(e1 > 0.0) || !(e2 > 0.0)) throw ValidationError("generator: noise scales must be positive");
  if (sm_items < 1 || as_items < 1 || fp_items < 1) {
    throw ValidationError("generator: item counts must be positive");
  }
  if (!(item_scale > 0.0) || item_noise < 0.0) {
    throw ValidationError("generator: item_scale must be positive and item_noise non-negative");
  }
  if (!(sm_loading > 0.0 && sm_loading <= 1.0)) {
    throw ValidationError("generator: sm_loading must lie in (0, 1]");
  }
  if (missing_probability < 0.0 || missing_probability > 1.0) {
    throw ValidationError("generator: missing_probability must lie in [0, 1]");
  }
}

GenConfig GenConfig::from_config(const Config& cfg) {
  const std::string s = "generator";
  GenConfig g;
  g.n = cfg.get_size(s, "n", g.n);
  g.path_bd_as = cfg.get_double(s, "path_bd_as", g.path_bd_as);
  g.path_sm_as = cfg.get_double(s, "path_sm_as", g.path_sm_as);
  g.path_bd_fp = cfg.get_double(s, "path_bd_fp", g.path_bd_fp);
  g.path_sm_fp = cfg.get_double(s, "path_sm_fp", g.path_sm_fp);
  g.path_as_fp = cfg.get_double(s, "path_as_fp", g.path_as_fp);
  g.e1 = cfg.get_double(s, "e1", g.e1);
  g.e2 = cfg.get_double(s, "e2", g.e2);
  if (cfg.has(s, "bd_categories")) {
    g.bd_categories.clear();
    for (const auto& tok : cfg.get_list(s, "bd_categories")) {
      std::size_t count = 0;
      const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), count);
      if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
        throw ValidationError("generator: bad category count '" + tok + "'");
      }
      g.bd_categories.push_back(count);
    }
  }
  g.sm_items = cfg.get_size(s, "sm_items", g.sm_items);
  g.as_items = cfg.get_size(s, "as_items", g.as_items);
  g.fp_items = cfg.get_size(s, "fp_items", g.fp_items);
  g.item_scale = cfg.get_double(s, "item_scale", g.item_scale);
  g.item_noise = cfg.get_double(s, "item_noise", g.item_noise);
  g.sm_loading = cfg.get_double(s, "sm_loading", g.sm_loading);
  g.missingness = cfg.get_bool(s, "missingness", g.missingness);
  g.missing_probability = cfg.get_double(s, "missing_probability", g.missing_probability);
  g.seed = cfg.get_u64(s, "seed", g.seed);
  g.validate();
  return g;
}

Config GenConfig::to_config() const {
  Config c;
  const std::string s = "generator";
  c.set(s, "n", std::to_string(n));
  c.set(s, "path_bd_as", format_double(path_bd_as));
  c.set(s, "path_sm_as", format_double(path_sm_as));
  c.set(s, "path_bd_fp", format_double(path_bd_fp));
  c.set(s, "path_sm_fp", format_double(path_sm_fp));
  c.set(s, "path_as_fp", format_double(path_as_fp));
  c.set(s, "e1", format_double(e1));
  c.set(s, "e2", format_double(e2));
  c.set(s, "bd_categories", join_sizes(bd_categories));
  c.set(s, "sm_items", std::to_string(sm_items));
  c.set(s, "as_items", std::to_string(as_items));
  c.set(s, "fp_items", std::to_string(fp_items));
  c.set(s, "item_scale", format_double(item_scale));
  c.set(s, "item_noise", format_double(item_noise));
  c.set(s, "sm_loading", format_double(sm_loading));
  c.set(s, "missingness", missingness ? "true" : "false");
  c.set(s, "missing_probability", format_double(missing_probability));
  c.set(s, "seed", std::to_string(seed));
  return c;
}

DataMatrix simulate(const GenConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.n;
  const Rng root(cfg.seed);

  DataMatrix data;
  std::vector<std::vector<double>> columns;
  auto add_column = [&](std::string name, ColumnKind kind) {
    data.names.push_back(std::move(name));
    data.kinds.push_back(kind);
    columns.emplace_back(n, 0.0);
    return columns.size() - 1;
  };

  // SM: ordinal items loading on one shared factor.
  Rng sm_rng = root.split(kSm);
  std::vector<double> sm_latent(n);
  for (double& z : sm_latent) z = sm_rng.normal();
  const double unique = std::sqrt(1.0 - cfg.sm_loading * cfg.sm_loading);
  std::vector<std::size_t> sm_cols;
  for (std::size_t j = 0; j < cfg.sm_items; ++j) {
    sm_cols.push_back(add_column("sm_" + std::to_string(j + 1), ColumnKind::ordinal));
  }
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < cfg.sm_items; ++j) {
      const double item = cfg.sm_loading * sm_latent[r] + unique * sm_rng.normal();
      columns[sm_cols[j]][r] = ordinal(item, cfg.item_scale, 0.0, sm_rng);
    }
  }

  // BD: uniform categories, one-hot encoded.
  Rng bd_rng = root.split(kBd);
  std::vector<std::vector<std::size_t>> bd_groups;
  for (std::size_t v = 0; v < cfg.bd_categories.size(); ++v) {
    std::vector<std::size_t> group;
    for (std::size_t c = 0; c < cfg.bd_categories[v]; ++c) {
      group.push_back(add_column("bd_v" + two_digits(v + 1) + "_c" + std::to_string(c + 1),
                                 ColumnKind::one_hot));
    }
    bd_groups.push_back(group);
  }
  for (std::size_t r = 0; r < n; ++r) {
    for (const auto& group : bd_groups) {
      columns[group[bd_rng.uniform_index(group.size())]][r] = 1.0;
    }
  }

  // Exogenous scores are exactly the composites the estimator will compute.
  DataMatrix exogenous;
  exogenous.names = data.names;
  exogenous.kinds = data.kinds;
  exogenous.values = Matrix(n, columns.size());
  for (std::size_t c = 0; c < columns.size(); ++c)
    for (std::size_t r = 0; r < n; ++r) exogenous.values(r, c) = columns[c][r];
  MeasurementSpec exo_spec;
  std::vector<std::string> sm_names(data.names.begin(), data.names.begin() + cfg.sm_items);
  std::vector<std::string> bd_names(data.names.begin() + cfg.sm_items, data.names.end());
  exo_spec.model = PathModel::structure({"SM", "BD"}, {}, {sm_names.size(), bd_names.size()});
  exo_spec.node_columns = {sm_names, bd_names};
  for (const auto& group : bd_groups) {
    std::vector<std::string> names;
    for (std::size_t c : group) names.push_back(data.names[c]);
    exo_spec.one_hot_groups.push_back(names);
  }
  const Matrix exo_scores = node_composites(exogenous, exo_spec);

  Rng as_noise = root.split(kAsNoise);
  Rng fp_noise = root.split(kFpNoise);
  std::vector<double> as_score(n), fp_score(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double sm = exo_scores(r, 0);
    const double bd = exo_scores(r, 1);
    as_score[r] = cfg.path_bd_as * bd + cfg.path_sm_as * sm + cfg.e1 * as_noise.normal();
    fp_score[r] = cfg.path_as_fp * as_score[r] + cfg.path_sm_fp * sm + cfg.path_bd_fp * bd +
                  cfg.e2 * fp_noise.normal();
  }

  Rng as_rng = root.split(kAsItems);
  Rng fp_rng = root.split(kFpItems);
  auto emit_items = [&](const std::string& prefix, std::size_t count,
                        const std::vector<double>& score, Rng& rng) {
    std::vector<std::size_t> cols;
    for (std::size_t j = 0; j < count; ++j) {
      cols.push_back(add_column(prefix + std::to_string(j + 1), ColumnKind::ordinal));
    }
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c : cols) columns[c][r] = ordinal(score[r], cfg.item_scale, cfg.item_noise, rng);
    return cols;
  };
  emit_items("as_plan_", cfg.as_items, as_score, as_rng);
  emit_items("as_comp_", cfg.as_items, as_score, as_rng);
  const auto fp_plan = emit_items("fp_plan_", cfg.fp_items, fp_score, fp_rng);
  emit_items("fp_comp_", cfg.fp_items, fp_score, fp_rng);

  std::vector<std::size_t> keep(n);
  std::iota(keep.begin(), keep.end(), 0);
  if (cfg.missingness) {
    std::vector<double> fp_sum(n, 0.0);
    for (std::size_t c : fp_plan)
      for (std::size_t r = 0; r < n; ++r) fp_sum[r] += columns[c][r];
    const double mean = std::accumulate(fp_sum.begin(), fp_sum.end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (double v : fp_sum) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    Rng miss = root.split(kMissing);
    keep.clear();
    for (std::size_t r = 0; r < n; ++r) {
      const bool in_band = fp_sum[r] >= mean + sd && fp_sum[r] <= mean + 2.0 * sd;
      const double u = miss.uniform();
      if (in_band && u < cfg.missing_probability) continue;
      keep.push_back(r);
    }
  }

  data.values = Matrix(keep.size(), columns.size());
  for (std::size_t c = 0; c < columns.size(); ++c)
    for (std::size_t i = 0; i < keep.size(); ++i) data.values(i, c) = columns[c][keep[i]];
  for (const auto& group : bd_groups) data.one_hot_groups.push_back(group);
  data.validate();
  return data;
}

std::string simulate_csv(const GenConfig& cfg) {
  const DataMatrix data = simulate(cfg);
  std::vector<std::string> comments{" synthetic retail survey"};
  const Config recorded = cfg.to_config();
  for (const auto& [k, v] : recorded.entries("generator")) {
    comments.push_back(" " + k + " = " + v);
  }
  comments.push_back(" rows = " + std::to_string(data.rows()));
  return format_csv(data, comments);
}

PathModel generating_model(const GenConfig& cfg) {
  PathModel raw = PathModel::structure(
      {"SM", "BD", "AS", "FP"},
      {{"SM", "AS"}, {"BD", "AS"}, {"SM", "FP"}, {"BD", "FP"}, {"AS", "FP"}},
      {cfg.sm_items, 39, cfg.as_items, cfg.fp_items});
  raw.coefficients = {cfg.path_sm_as, cfg.path_bd_as, cfg.path_sm_fp, cfg.path_bd_fp,
                      cfg.path_as_fp};
  raw.residual_variances = {1.0, 1.0, cfg.e1 * cfg.e1, cfg.e2 * cfg.e2};
  const Matrix cov = implied_covariance(raw);

  PathModel standardized = raw;
  for (std::size_t e = 0; e < raw.edges.size(); ++e) {
    const std::size_t s = raw.node_index(raw.edges[e].src);
    const std::size_t d = raw.node_index(raw.edges[e].dst);
    standardized.coefficients[e] = raw.coefficients[e] * std::sqrt(cov(s, s) / cov(d, d));
  }
  for (std::size_t i = 0; i < raw.nodes.size(); ++i) {
    standardized.residual_variances[i] = raw.residual_variances[i] / cov(i, i);
  }
  standardized.std_errors.assign(raw.edges.size(), 0.0);
  standardized.p_values.assign(raw.edges.size(), 0.0);
  return standardized;
}

std::string default_dag_spec() {
  return R"([graph]
nodes = SM, BD, AS, FP
edges = SM->AS, BD->AS, SM->FP, BD->FP, AS->FP

[columns]
SM = sm_*
BD = bd_*
AS = as_plan_*
FP = fp_plan_*

[onehot]
columns = bd_*

[factors]
AS (compared to sales plan) = as_plan_*
AS (compared to competitors) = as_comp_*
FP (compared to sales plan) = fp_plan_*
FP (compared to competitors) = fp_comp_*
Retail store management (SM) = sm_*
Buyer demographics (BD) = bd_*
)";
}

}  // namespace cbnn
