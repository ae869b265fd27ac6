#include "cbnn/sem.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <numbers>
#include <set>
#include <sstream>

#include "cbnn/linalg.hpp"
#include "json.hpp"

namespace cbnn {

// ---- PathModel ----------------------------------------------------------------

PathModel PathModel::structure(std::vector<std::string> nodes, std::vector<Edge> edges,
                               std::vector<std::size_t> widths) {
  PathModel m;
  m.nodes = std::move(nodes);
  m.edges = std::move(edges);
  m.widths = widths.empty() ? std::vector<std::size_t>(m.nodes.size(), 1) : std::move(widths);
  if (m.widths.size() != m.nodes.size()) throw ValidationError("node widths do not match nodes");
  std::set<std::string> seen;
  for (const auto& n : m.nodes) {
    if (!seen.insert(n).second) throw ValidationError("duplicate node '" + n + "'");
  }
  std::set<std::pair<std::string, std::string>> edge_set;
  for (const auto& e : m.edges) {
    m.node_index(e.src);
    m.node_index(e.dst);
    if (!edge_set.insert({e.src, e.dst}).second) {
      throw ValidationError("duplicate edge " + e.src + "->" + e.dst);
    }
  }
  return m;
}

std::size_t PathModel::node_index(const std::string& name) const {
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i] == name) return i;
  }
  throw ValidationError("unknown node '" + name + "'");
}

std::vector<std::size_t> PathModel::incoming(std::size_t node) const {
  std::vector<std::size_t> out;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    if (edges[e].dst == nodes[node]) out.push_back(e);
  }
  return out;
}

std::vector<std::size_t> PathModel::outgoing(std::size_t node) const {
  std::vector<std::size_t> out;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    if (edges[e].src == nodes[node]) out.push_back(e);
  }
  return out;
}

bool PathModel::adjacent(std::size_t a, std::size_t b) const {
  for (const auto& e : edges) {
    if ((e.src == nodes[a] && e.dst == nodes[b]) || (e.src == nodes[b] && e.dst == nodes[a])) {
      return true;
    }
  }
  return false;
}

double PathModel::coefficient(const std::string& src, const std::string& dst) const {
  for (std::size_t e = 0; e < edges.size(); ++e) {
    if (edges[e].src == src && edges[e].dst == dst) {
      if (e >= coefficients.size()) throw ValidationError("path model is not fitted");
      return coefficients[e];
    }
  }
  throw ValidationError("no edge " + src + "->" + dst);
}

// ---- DAG validation -----------------------------------------------------------

namespace {
std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}
}  // namespace

CycleError::CycleError(std::vector<std::string> cycle)
    : ValidationError("graph has a cycle: " + join(cycle, " -> ")), cycle_(std::move(cycle)) {}

std::size_t DagReport::immoralities() const {
  return static_cast<std::size_t>(
      std::count_if(colliders.begin(), colliders.end(), [](const Collider& c) { return c.immorality; }));
}

DagReport dag_validate(const PathModel& model) {
  const std::size_t n = model.nodes.size();
  std::vector<std::vector<std::size_t>> children(n);
  for (const auto& e : model.edges) {
    children[model.node_index(e.src)].push_back(model.node_index(e.dst));
  }

  // DFS colouring finds a cycle if one exists.
  std::vector<int> colour(n, 0);
  std::vector<std::size_t> stack;
  std::vector<std::string> cycle;
  std::function<bool(std::size_t)> visit = [&](std::size_t u) {
    colour[u] = 1;
    stack.push_back(u);
    for (std::size_t v : children[u]) {
      if (colour[v] == 1) {
        auto it = std::find(stack.begin(), stack.end(), v);
        for (; it != stack.end(); ++it) cycle.push_back(model.nodes[*it]);
        cycle.push_back(model.nodes[v]);
        return true;
      }
      if (colour[v] == 0 && visit(v)) return true;
    }
    stack.pop_back();
    colour[u] = 2;
    return false;
  };
  for (std::size_t u = 0; u < n; ++u) {
    if (colour[u] == 0 && visit(u)) throw CycleError(cycle);
  }

  DagReport report;
  std::vector<std::size_t> indegree(n, 0);
  for (const auto& e : model.edges) ++indegree[model.node_index(e.dst)];
  std::vector<bool> done(n, false);
  for (std::size_t placed = 0; placed < n; ++placed) {
    // lowest declared index among ready nodes keeps the order stable
    std::size_t pick = n;
    for (std::size_t u = 0; u < n; ++u) {
      if (!done[u] && indegree[u] == 0) {
        pick = u;
        break;
      }
    }
    done[pick] = true;
    report.topological_order.push_back(model.nodes[pick]);
    for (std::size_t v : children[pick]) --indegree[v];
  }

  for (const auto& child : report.topological_order) {
    const std::size_t c = model.node_index(child);
    const auto in = model.incoming(c);
    for (std::size_t i = 0; i < in.size(); ++i) {
      for (std::size_t j = i + 1; j < in.size(); ++j) {
        const std::size_t a = model.node_index(model.edges[in[i]].src);
        const std::size_t b = model.node_index(model.edges[in[j]].src);
        report.colliders.push_back(
            Collider{model.nodes[a], child, model.nodes[b], !model.adjacent(a, b)});
      }
    }
  }
  return report;
}

// ---- measurement spec -----------------------------------------------------------

MeasurementSpec parse_measurement_spec(const Config& cfg, const DataMatrix& data) {
  const auto node_names = cfg.get_list("graph", "nodes");
  std::vector<Edge> edges;
  for (const auto& token : cfg.get_list("graph", "edges")) {
    const auto arrow = token.find("->");
    if (arrow == std::string::npos) {
      throw ValidationError(cfg.origin() + ": edge '" + token + "' is not of the form A->B");
    }
    edges.push_back(Edge{trim(token.substr(0, arrow)), trim(token.substr(arrow + 2))});
  }

  MeasurementSpec spec;
  std::vector<std::size_t> widths;
  for (const auto& node : node_names) {
    std::vector<std::string> cols;
    for (const auto& pattern : cfg.get_list("columns", node)) {
      const auto matched = data.match_columns(pattern);
      if (matched.empty()) {
        throw ValidationError(cfg.origin() + ": pattern '" + pattern + "' for node " + node +
                              " matches no column");
      }
      for (std::size_t c : matched) cols.push_back(data.names[c]);
    }
    widths.push_back(cols.size());
    spec.node_columns.push_back(std::move(cols));
  }
  spec.model = PathModel::structure(node_names, edges, widths);

  if (cfg.has("onehot", "columns")) {
    // group columns by the name stem before the final '_'
    for (const auto& pattern : cfg.get_list("onehot", "columns")) {
      for (std::size_t c : data.match_columns(pattern)) {
        const std::string& name = data.names[c];
        const auto cut = name.rfind('_');
        const std::string stem = cut == std::string::npos ? name : name.substr(0, cut);
        auto it = std::find_if(spec.one_hot_groups.begin(), spec.one_hot_groups.end(),
                               [&](const std::vector<std::string>& g) {
                                 return g.front().substr(0, g.front().rfind('_')) == stem;
                               });
        if (it == spec.one_hot_groups.end()) {
          spec.one_hot_groups.push_back({name});
        } else {
          it->push_back(name);
        }
      }
    }
  }

  if (cfg.has_section("factors")) {
    for (const auto& [name, value] : cfg.entries("factors")) {
      MeasurementSpec::FactorGroup g{name, {}};
      for (const auto& pattern : split_list(value)) {
        for (std::size_t c : data.match_columns(pattern)) g.columns.push_back(data.names[c]);
      }
      spec.factor_groups.push_back(std::move(g));
    }
  } else {
    for (std::size_t i = 0; i < node_names.size(); ++i) {
      spec.factor_groups.push_back({node_names[i], spec.node_columns[i]});
    }
  }
  return spec;
}

MeasurementSpec load_measurement_spec(const std::filesystem::path& path, const DataMatrix& data) {
  return parse_measurement_spec(Config::load(path), data);
}

void apply_measurement_spec(const MeasurementSpec& spec, DataMatrix& data) {
  data.one_hot_groups.clear();
  for (const auto& group : spec.one_hot_groups) {
    std::vector<std::size_t> idx;
    for (const auto& name : group) {
      idx.push_back(data.column_index(name));
      data.kinds[idx.back()] = ColumnKind::one_hot;
    }
    data.one_hot_groups.push_back(std::move(idx));
  }
  data.validate();
}

Matrix node_composites(const DataMatrix& data, const MeasurementSpec& spec) {
  const std::size_t n = data.rows();
  if (n < 3) throw ValidationError("need at least 3 observations for composites");
  std::set<std::string> reference_columns;
  for (const auto& g : spec.one_hot_groups) reference_columns.insert(g.front());

  auto standardize = [n](std::vector<double>& v, const std::string& what) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    if (!(sd > 0.0) || sd < 1e-12 * (1.0 + std::abs(mean))) {
      throw ValidationError("zero variance in " + what);
    }
    for (double& x : v) x = (x - mean) / sd;
  };

  Matrix scores(n, spec.model.nodes.size());
  for (std::size_t k = 0; k < spec.model.nodes.size(); ++k) {
    std::vector<double> composite(n, 0.0);
    std::size_t used = 0;
    for (const auto& name : spec.node_columns[k]) {
      if (reference_columns.count(name)) continue;
      auto col = data.column(data.column_index(name));
      standardize(col, "column '" + name + "'");
      for (std::size_t r = 0; r < n; ++r) composite[r] += col[r];
      ++used;
    }
    if (used == 0) throw ValidationError("node " + spec.model.nodes[k] + " has no usable columns");
    standardize(composite, "composite of node " + spec.model.nodes[k]);
    for (std::size_t r = 0; r < n; ++r) scores(r, k) = composite[r];
  }
  return scores;
}

// ---- estimation -----------------------------------------------------------------

PathModel fit_paths(const Matrix& scores, const PathModel& structure) {
  dag_validate(structure);
  const std::size_t n = scores.rows();
  if (scores.cols() != structure.nodes.size()) {
    throw DimensionError("fit_paths: " + std::to_string(scores.cols()) + " score columns for " +
                         std::to_string(structure.nodes.size()) + " nodes");
  }
  std::size_t constant = 0;
  const auto corr = correlation_matrix(scores, &constant);
  if (!corr) {
    throw ValidationError("fit_paths: node '" + structure.nodes[constant] + "' has zero variance");
  }

  PathModel model = structure;
  model.observations = n;
  model.coefficients.assign(model.edges.size(), 0.0);
  model.std_errors.assign(model.edges.size(), 0.0);
  model.p_values.assign(model.edges.size(), 1.0);
  model.residual_variances.assign(model.nodes.size(), 1.0);

  for (std::size_t child = 0; child < model.nodes.size(); ++child) {
    const auto in = model.incoming(child);
    if (in.empty()) continue;
    const std::size_t k = in.size();
    if (n <= k + 1) throw ValidationError("fit_paths: too few observations for " + model.nodes[child]);
    std::vector<std::size_t> parents;
    for (std::size_t e : in) parents.push_back(model.node_index(model.edges[e].src));
    Matrix rpp(k, k);
    std::vector<double> rpy(k);
    for (std::size_t i = 0; i < k; ++i) {
      rpy[i] = (*corr)(parents[i], child);
      for (std::size_t j = 0; j < k; ++j) rpp(i, j) = (*corr)(parents[i], parents[j]);
    }
    std::size_t failed = 0;
    const auto chol = cholesky(rpp, 1e-10, &failed);
    if (!chol) {
      std::vector<std::string> earlier;
      for (std::size_t i = 0; i < failed; ++i) earlier.push_back(model.nodes[parents[i]]);
      throw ValidationError("fit_paths: rank-deficient design for node '" + model.nodes[child] +
                            "': parent '" + model.nodes[parents[failed]] +
                            "' is collinear with {" + join(earlier, ", ") + "}");
    }
    const auto beta = cholesky_solve(*chol, rpy);
    const Matrix inv = cholesky_inverse(*chol);
    double explained = 0.0;
    for (std::size_t i = 0; i < k; ++i) explained += beta[i] * rpy[i];
    const double resid = std::max(1.0 - explained, 0.0);
    model.residual_variances[child] = resid;
    const double dof = static_cast<double>(n - k - 1);
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t e = in[i];
      model.coefficients[e] = beta[i];
      const double se = std::sqrt(resid / dof * inv(i, i));
      model.std_errors[e] = se;
      model.p_values[e] = se > 0.0 ? std::erfc(std::abs(beta[i] / se) / std::numbers::sqrt2) : 0.0;
    }
  }
  return model;
}

PathModel fit_paths(const DataMatrix& data, const MeasurementSpec& spec) {
  return fit_paths(node_composites(data, spec), spec.model);
}

Matrix implied_covariance(const PathModel& model) {
  const DagReport dag = dag_validate(model);
  const std::size_t n = model.nodes.size();
  if (model.residual_variances.size() != n || model.coefficients.size() != model.edges.size()) {
    throw ValidationError("implied_covariance needs a fitted model");
  }
  Matrix b(n, n);
  for (std::size_t e = 0; e < model.edges.size(); ++e) {
    b(model.node_index(model.edges[e].dst), model.node_index(model.edges[e].src)) =
        model.coefficients[e];
  }
  // (I − B)⁻¹ = I + B(I − B)⁻¹, filled row by row in topological order;
  // every parent row is final before its child needs it.
  Matrix total(n, n);
  std::vector<bool> ready(n, false);
  for (const auto& name : dag.topological_order) {
    const std::size_t i = model.node_index(name);
    total(i, i) = 1.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (b(i, j) == 0.0) continue;
      if (!ready[j]) throw std::logic_error("implied_covariance: I - B is not unit triangular");
      for (std::size_t c = 0; c < n; ++c) total(i, c) += b(i, j) * total(j, c);
    }
    ready[i] = true;
  }
  Matrix psi(n, n);
  for (std::size_t i = 0; i < n; ++i) psi(i, i) = model.residual_variances[i];
  return matmul_nt(matmul(total, psi), total);
}

// ---- factor analysis -----------------------------------------------------------

FactorEntry factor_eigenvalues(const Matrix& correlation, const std::string& name) {
  FactorEntry entry;
  entry.name = name;
  entry.feature_count = correlation.rows();
  entry.eigenvalues = jacobi_eigen(correlation).values;
  for (double& v : entry.eigenvalues) v = std::max(v, 0.0);  // clip rounding noise below zero
  entry.leading_eigenvalue = entry.eigenvalues.front();
  entry.percent_variance =
      100.0 * entry.leading_eigenvalue / static_cast<double>(entry.feature_count);
  return entry;
}

FactorReport factor_eigenvalues(const DataMatrix& data,
                                const std::vector<MeasurementSpec::FactorGroup>& groups) {
  FactorReport report;
  for (const auto& g : groups) {
    if (g.columns.size() < 2) {
      throw ValidationError("factor group '" + g.name + "' needs at least 2 columns");
    }
    Matrix cols(data.rows(), g.columns.size());
    for (std::size_t c = 0; c < g.columns.size(); ++c) {
      const std::size_t idx = data.column_index(g.columns[c]);
      for (std::size_t r = 0; r < data.rows(); ++r) cols(r, c) = data.values(r, idx);
    }
    std::size_t constant = 0;
    const auto corr = correlation_matrix(cols, &constant);
    if (!corr) {
      throw ValidationError("factor group '" + g.name + "': column '" + g.columns[constant] +
                            "' has zero variance");
    }
    report.groups.push_back(factor_eigenvalues(*corr, g.name));
  }
  return report;
}

// ---- weakest path / joint density ------------------------------------------------

std::string weakest_path(const PathModel& model) {
  if (!model.fitted()) throw ValidationError("weakest_path needs a fitted model");
  std::string best;
  double best_strength = 0.0;
  for (std::size_t i = 0; i < model.nodes.size(); ++i) {
    const auto out = model.outgoing(i);
    if (out.empty()) continue;
    double strength = 0.0;
    for (std::size_t e : out) strength = std::max(strength, std::abs(model.coefficients[e]));
    if (best.empty() || strength < best_strength ||
        (strength == best_strength && model.nodes[i] < best)) {
      best = model.nodes[i];
      best_strength = strength;
    }
  }
  if (best.empty()) throw ValidationError("weakest_path: no node has outgoing paths");
  return best;
}

double joint_log_prob(const PathModel& model, std::span<const double> x) {
  if (x.size() != model.nodes.size()) throw DimensionError("joint_log_prob: observation length");
  if (model.residual_variances.size() != model.nodes.size() ||
      model.coefficients.size() != model.edges.size()) {
    throw ValidationError("joint_log_prob needs a fitted model");
  }
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  double total = 0.0;
  for (const auto& name : dag_validate(model).topological_order) {
    const std::size_t i = model.node_index(name);
    const double var = model.residual_variances[i];
    if (!(var > 0.0)) throw NumericError("joint_log_prob: non-positive variance for " + name);
    double mean = 0.0;
    for (std::size_t e : model.incoming(i)) {
      mean += model.coefficients[e] * x[model.node_index(model.edges[e].src)];
    }
    const double r = x[i] - mean;
    total += -half_log_2pi - 0.5 * std::log(var) - 0.5 * r * r / var;
  }
  return total;
}

std::string significance_stars(double p) {
  if (p < 0.001) return "***";
  if (p < 0.01) return "**";
  if (p < 0.1) return "*";
  return "";
}

// ---- report -------------------------------------------------------------------------

std::string format_sem_report(const DagReport& dag, const PathModel& model,
                              const FactorReport& factors, const Matrix& implied) {
  std::ostringstream os;
  os << std::fixed;
  os << "# path model report\n\n";
  os << "topological order: " << join(dag.topological_order, ", ") << "\n";
  os << "colliders:\n";
  for (const auto& c : dag.colliders) {
    os << "  " << c.left << " -> " << c.child << " <- " << c.right
       << (c.immorality ? "  (immorality)" : "") << "\n";
  }
  os << "\nfactor group                     features  eigenvalue  % variance\n";
  for (const auto& g : factors.groups) {
    os << "  " << std::left << std::setw(31) << g.name << std::right << std::setw(8)
       << g.feature_count << std::setw(12) << std::setprecision(4) << g.leading_eigenvalue
       << std::setw(12) << std::setprecision(2) << g.percent_variance << "\n";
  }
  os << "\npath            coefficient   std.err   p-value\n";
  for (std::size_t e = 0; e < model.edges.size(); ++e) {
    const std::string label = model.edges[e].src + " -> " + model.edges[e].dst;
    os << "  " << std::left << std::setw(14) << label << std::right << std::setw(11)
       << std::setprecision(4) << model.coefficients[e] << std::setw(10) << model.std_errors[e]
       << std::setw(10) << std::setprecision(4) << model.p_values[e] << " "
       << significance_stars(model.p_values[e]) << "\n";
  }
  os << "\nresidual variances:\n";
  for (std::size_t i = 0; i < model.nodes.size(); ++i) {
    os << "  " << model.nodes[i] << " " << std::setprecision(4) << model.residual_variances[i] << "\n";
  }
  os << "\nweakest path node: " << weakest_path(model) << "\n";
  os << "observations: " << model.observations << "\n";

  nlohmann::ordered_json j;
  j["nodes"] = model.nodes;
  j["widths"] = model.widths;
  j["topological_order"] = dag.topological_order;
  j["weakest_path"] = weakest_path(model);
  j["observations"] = model.observations;
  for (std::size_t e = 0; e < model.edges.size(); ++e) {
    j["paths"].push_back({{"src", model.edges[e].src},
                          {"dst", model.edges[e].dst},
                          {"coefficient", model.coefficients[e]},
                          {"std_error", model.std_errors[e]},
                          {"p_value", model.p_values[e]}});
  }
  j["residual_variances"] = model.residual_variances;
  for (const auto& c : dag.colliders) {
    j["colliders"].push_back(
        {{"left", c.left}, {"child", c.child}, {"right", c.right}, {"immorality", c.immorality}});
  }
  for (const auto& g : factors.groups) {
    j["factors"].push_back({{"name", g.name},
                            {"features", g.feature_count},
                            {"eigenvalues", g.eigenvalues},
                            {"leading_eigenvalue", g.leading_eigenvalue},
                            {"percent_variance", g.percent_variance}});
  }
  std::vector<std::vector<double>> cov(implied.rows());
  for (std::size_t i = 0; i < implied.rows(); ++i) {
    cov[i].assign(implied.row_span(i).begin(), implied.row_span(i).end());
  }
  j["implied_covariance"] = cov;
  os << "\n#json\n" << j.dump(2) << "\n";
  return os.str();
}

}  // namespace cbnn
