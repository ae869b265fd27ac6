#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cbnn/config.hpp"
#include "cbnn/data.hpp"
#include "cbnn/errors.hpp"
#include "cbnn/matrix.hpp"

namespace cbnn {

struct Edge {
  std::string src;
  std::string dst;
  bool operator==(const Edge&) const = default;
};

// Recursive path model over node composites. Coefficients, standard errors
// and p-values are per edge (same order as `edges`); residual variances are
// per node, where an exogenous node's entry is its own variance.
struct PathModel {
  std::vector<std::string> nodes;
  std::vector<std::size_t> widths;
  std::vector<Edge> edges;
  std::vector<double> coefficients;
  std::vector<double> std_errors;
  std::vector<double> p_values;
  std::vector<double> residual_variances;
  std::size_t observations = 0;

  static PathModel structure(std::vector<std::string> nodes, std::vector<Edge> edges,
                             std::vector<std::size_t> widths = {});

  bool fitted() const { return coefficients.size() == edges.size() && !edges.empty(); }
  std::size_t node_index(const std::string& name) const;
  // Edge indices into `nodes[node]`, in edge order.
  std::vector<std::size_t> incoming(std::size_t node) const;
  std::vector<std::size_t> outgoing(std::size_t node) const;
  bool adjacent(std::size_t a, std::size_t b) const;
  double coefficient(const std::string& src, const std::string& dst) const;
};

struct Collider {
  std::string left;
  std::string child;
  std::string right;
  bool immorality = false;  // parents not adjacent
};

struct DagReport {
  std::vector<std::string> topological_order;
  std::vector<Collider> colliders;
  std::size_t immoralities() const;
};

class CycleError : public ValidationError {
 public:
  explicit CycleError(std::vector<std::string> cycle);
  const std::vector<std::string>& cycle() const { return cycle_; }

 private:
  std::vector<std::string> cycle_;
};

// Throws CycleError naming the cycle (first node repeated at the end).
DagReport dag_validate(const PathModel& model);

// How data columns map onto graph nodes, parsed from the DAG spec file.
struct MeasurementSpec {
  PathModel model;  // structure only
  std::vector<std::vector<std::string>> node_columns;   // per node, resolved names
  std::vector<std::vector<std::string>> one_hot_groups;  // resolved names
  struct FactorGroup {
    std::string name;
    std::vector<std::string> columns;
  };
  std::vector<FactorGroup> factor_groups;
};

// Patterns are resolved against `data` (exact names or `prefix*`).
MeasurementSpec parse_measurement_spec(const Config& cfg, const DataMatrix& data);
MeasurementSpec load_measurement_spec(const std::filesystem::path& path, const DataMatrix& data);
// Marks one-hot groups and kinds on `data` from the spec and validates it.
void apply_measurement_spec(const MeasurementSpec& spec, DataMatrix& data);

// Per-node standardized composite scores (rows × nodes). Each node's score
// is the standardized mean of its standardized columns; within a one-hot
// group the first column is the reference category and is left out.
Matrix node_composites(const DataMatrix& data, const MeasurementSpec& spec);

// Standardized least squares for each endogenous node on its parents.
// `scores` columns follow model.nodes. Rank deficiency raises
// ValidationError naming the collinear parents.
PathModel fit_paths(const Matrix& scores, const PathModel& structure);
PathModel fit_paths(const DataMatrix& data, const MeasurementSpec& spec);

// (I − B)⁻¹ Ψ (I − B)⁻ᵀ with Ψ = diag(residual_variances), in node order.
Matrix implied_covariance(const PathModel& model);

struct FactorEntry {
  std::string name;
  std::size_t feature_count = 0;
  std::vector<double> eigenvalues;  // descending
  double leading_eigenvalue = 0.0;
  double percent_variance = 0.0;    // leading / feature_count · 100
};

struct FactorReport {
  std::vector<FactorEntry> groups;
};

FactorReport factor_eigenvalues(const DataMatrix& data,
                                const std::vector<MeasurementSpec::FactorGroup>& groups);
FactorEntry factor_eigenvalues(const Matrix& correlation, const std::string& name);

// Non-terminal node whose largest |outgoing coefficient| is smallest;
// exact ties resolve to the lexicographically first name.
std::string weakest_path(const PathModel& model);

// Σ log N(x_i | Σ β_ij x_j, σ_i²) with x in node order.
double joint_log_prob(const PathModel& model, std::span<const double> x);

// "***" p < 0.001, "**" p < 0.01, "*" p < 0.1.
std::string significance_stars(double p_value);

// Human-readable tables followed by a JSON block after a "#json" line.
std::string format_sem_report(const DagReport& dag, const PathModel& model,
                              const FactorReport& factors, const Matrix& implied);

}  // namespace cbnn
