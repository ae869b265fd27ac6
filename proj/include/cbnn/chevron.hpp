#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cbnn/bayes.hpp"
#include "cbnn/config.hpp"
#include "cbnn/data.hpp"
#include "cbnn/layers.hpp"
#include "cbnn/optim.hpp"
#include "cbnn/sem.hpp"

namespace cbnn {

enum class LayerKind { flipout, dense };
enum class OptimizerKind { adam, vadam };
enum class VadamScope { output, all };

std::string to_string(LayerKind k);
std::string to_string(OptimizerKind k);
std::string to_string(VadamScope s);

// Everything needed to compile the double-chevron network.
struct GraphSpec {
  std::size_t sm_width = 9;
  std::size_t bd_width = 39;
  // Hidden width per chevron; 0 means "same as that chevron's concat width".
  std::size_t hidden1 = 0;
  std::size_t hidden2 = 0;
  LayerKind layer_kind = LayerKind::flipout;
  // "Both" is flipout layers with optimizer = vadam.
  OptimizerKind optimizer = OptimizerKind::adam;
  double lr1 = 0.01;
  double lr2 = 0.01;
  std::size_t n_train = 1;
  double prior_scale = 1.0;
  double head_alpha = 0.05;
  double as_initial_mean = 5.0;
  double fp_initial_mean = 25.0;
  double initial_std = 1.0;
  VadamScope vadam_scope = VadamScope::output;
  double lambda_prior = 0.1;
  std::size_t mc_samples = 1;
  bool vadam_perturb = true;
  // Chevron 2's loss does not reach chevron 1 through the AS prediction.
  bool stop_gradient = true;
  // Feed a sample of the AS distribution instead of its mean.
  bool stochastic_mediation = false;
  // "", "BD", "SM" or "AS".
  std::string ablation;
  std::uint64_t init_seed = 0;

  void validate() const;
  static GraphSpec from_config(const Config& cfg, const std::string& section = "network");
  // Writes every field into `section`.
  void write_config(Config& cfg, const std::string& section = "network") const;
  std::string canonical() const;
};

// FNV-1a over the canonical spec text plus the given seeds.
std::uint64_t fingerprint(const GraphSpec& spec, std::initializer_list<std::uint64_t> seeds = {});
std::string hex64(std::uint64_t v);

// Inputs and targets for the network, rows aligned.
struct NetworkData {
  Matrix sm;                       // B×9
  Matrix bd;                       // B×39
  std::vector<double> as_target;   // mean of AS items
  std::vector<double> fp_target;   // sum of FP items

  std::size_t rows() const { return fp_target.size(); }
  NetworkData subset(std::span<const std::size_t> rows) const;
};

// Column roles come from the measurement spec (nodes SM, BD, AS, FP).
NetworkData network_data(const DataMatrix& data, const MeasurementSpec& spec);

// Per-column affine standardization of SM inputs, fit on training rows.
struct InputScaler {
  std::vector<double> mean;
  std::vector<double> scale;
  static InputScaler fit(const Matrix& x);
  Matrix apply(const Matrix& x) const;
};

struct StepLosses {
  std::optional<double> loss1;  // absent when chevron 1 is ablated
  double loss2 = 0.0;
  double total = 0.0;
  double kl = 0.0;              // Σ KL over all flipout layers, unscaled
};

struct Prediction {
  std::optional<GaussianMoments> as;
  GaussianMoments fp;
};

class Chevron;

class ChevronNet {
 public:
  ChevronNet(const GraphSpec& spec, const PathModel& model);
  ~ChevronNet();
  ChevronNet(ChevronNet&&) noexcept;
  ChevronNet& operator=(ChevronNet&&) noexcept;

  const GraphSpec& spec() const { return spec_; }
  bool has_chevron1() const;
  std::size_t concat_width1() const;  // 0 when chevron 1 is absent
  std::size_t concat_width2() const;
  bool has_bd_prelayer() const;
  std::size_t parameter_count() const;
  ParameterList parameters();
  ParameterList chevron1_parameters();
  ParameterList chevron2_parameters();
  double kl1() const;
  double kl2() const;

  Prediction forward(const Matrix& sm, const Matrix& bd, Rng& rng, Mode mode);

  // Zeroes then fills every gradient with ∂loss/∂θ for each chevron's own
  // objective (NLL + KL/n_train). With stop_gradient off, chevron 1 also
  // receives chevron 2's gradient through the AS prediction. `perturb`
  // draws Vadam weight samples first (restored by step()).
  StepLosses compute_gradients(const NetworkData& batch, Rng& rng, bool perturb = true);
  StepLosses train_step(const NetworkData& batch, Rng& rng);
  // Deterministic: mean-only forward over all rows, Vadam means.
  StepLosses evaluate(const NetworkData& data);
  // Objective value with a stochastic forward; does not touch gradients.
  StepLosses objective(const NetworkData& batch, Rng& rng, Mode mode);

  void step_chevron1();
  void step_chevron2();

  void save_checkpoint(const std::filesystem::path& prefix, std::uint64_t fingerprint_value);
  // Throws ValidationError on any name/shape mismatch; returns the stored fingerprint.
  std::uint64_t load_checkpoint(const std::filesystem::path& prefix);

 private:
  GraphSpec spec_;
  std::unique_ptr<Chevron> c1_;
  std::unique_ptr<Chevron> c2_;
};

// One training run's curves.
struct RunRecord {
  std::string configuration;
  std::string ablation;  // "none", "BD", "SM", "AS"
  std::size_t repetition = 0;
  std::size_t fold = 0;
  std::uint64_t fingerprint = 0;
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  double wall_seconds = 0.0;
  bool degraded = false;
  std::string failure;

  double best_val_loss() const;
};

struct TrainOptions {
  std::size_t epochs = 50;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
};

// Trains a fresh network on `train`, evaluating on `validation` after every
// epoch. A non-finite loss ends the run early with `degraded` set.
RunRecord train_network(GraphSpec spec, const PathModel& model, const NetworkData& train,
                        const NetworkData& validation, const TrainOptions& options);

// epoch,train_loss,val_loss
std::string run_record_csv(const RunRecord& record);

}  // namespace cbnn
