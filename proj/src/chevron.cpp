#include "cbnn/chevron.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "cbnn/errors.hpp"

namespace cbnn {

std::string to_string(LayerKind k) { return k == LayerKind::flipout ? "flipout" : "dense"; }
std::string to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "vadam"; }
std::string to_string(VadamScope s) { return s == VadamScope::output ? "output" : "all"; }

// ---- GraphSpec ------------------------------------------------------------------

void GraphSpec::validate() const {
  if (sm_width < 1 || bd_width < 1) throw ValidationError("network: input widths must be >= 1");
  if (!(lr1 > 0.0) || !(lr2 > 0.0)) throw ValidationError("network: learning rates must be positive");
  if (n_train < 1) throw ValidationError("network: n_train must be >= 1");
  if (!(prior_scale > 0.0)) throw ValidationError("network: prior_scale must be positive");
  if (mc_samples < 1) throw ValidationError("network: mc_samples must be >= 1");
  if (lambda_prior < 0.0) throw ValidationError("network: lambda_prior must be >= 0");
  if (!(as_initial_mean > 0.0) || !(fp_initial_mean > 0.0)) {
    throw ValidationError("network: initial head means must be positive");
  }
  if (!ablation.empty() && ablation != "BD" && ablation != "SM" && ablation != "AS") {
    throw ValidationError("network: unknown ablation '" + ablation + "' (expected BD, SM or AS)");
  }
}

GraphSpec GraphSpec::from_config(const Config& cfg, const std::string& s) {
  GraphSpec g;
  g.sm_width = cfg.get_size(s, "sm_width", g.sm_width);
  g.bd_width = cfg.get_size(s, "bd_width", g.bd_width);
  g.hidden1 = cfg.get_size(s, "hidden1", g.hidden1);
  g.hidden2 = cfg.get_size(s, "hidden2", g.hidden2);
  const std::string kind = cfg.get_or(s, "layer_kind", to_string(g.layer_kind));
  if (kind == "flipout") {
    g.layer_kind = LayerKind::flipout;
  } else if (kind == "dense") {
    g.layer_kind = LayerKind::dense;
  } else {
    throw ValidationError("network: layer_kind must be flipout or dense, got " + kind);
  }
  const std::string opt = cfg.get_or(s, "optimizer", to_string(g.optimizer));
  if (opt == "adam") {
    g.optimizer = OptimizerKind::adam;
  } else if (opt == "vadam") {
    g.optimizer = OptimizerKind::vadam;
  } else {
    throw ValidationError("network: optimizer must be adam or vadam, got " + opt);
  }
  g.lr1 = cfg.get_double(s, "lr1", g.lr1);
  g.lr2 = cfg.get_double(s, "lr2", g.lr2);
  g.n_train = cfg.get_size(s, "n_train", g.n_train);
  g.prior_scale = cfg.get_double(s, "prior_scale", g.prior_scale);
  g.head_alpha = cfg.get_double(s, "head_alpha", g.head_alpha);
  g.as_initial_mean = cfg.get_double(s, "as_initial_mean", g.as_initial_mean);
  g.fp_initial_mean = cfg.get_double(s, "fp_initial_mean", g.fp_initial_mean);
  g.initial_std = cfg.get_double(s, "initial_std", g.initial_std);
  const std::string scope = cfg.get_or(s, "vadam_scope", to_string(g.vadam_scope));
  if (scope == "output") {
    g.vadam_scope = VadamScope::output;
  } else if (scope == "all") {
    g.vadam_scope = VadamScope::all;
  } else {
    throw ValidationError("network: vadam_scope must be output or all, got " + scope);
  }
  g.lambda_prior = cfg.get_double(s, "lambda_prior", g.lambda_prior);
  g.mc_samples = cfg.get_size(s, "mc_samples", g.mc_samples);
  g.vadam_perturb = cfg.get_bool(s, "vadam_perturb", g.vadam_perturb);
  g.stop_gradient = cfg.get_bool(s, "stop_gradient", g.stop_gradient);
  g.stochastic_mediation = cfg.get_bool(s, "stochastic_mediation", g.stochastic_mediation);
  g.ablation = cfg.get_or(s, "ablation", "");
  if (g.ablation == "none") g.ablation.clear();
  g.init_seed = cfg.get_u64(s, "init_seed", g.init_seed);
  g.validate();
  return g;
}

void GraphSpec::write_config(Config& cfg, const std::string& s) const {
  cfg.set(s, "sm_width", std::to_string(sm_width));
  cfg.set(s, "bd_width", std::to_string(bd_width));
  cfg.set(s, "hidden1", std::to_string(hidden1));
  cfg.set(s, "hidden2", std::to_string(hidden2));
  cfg.set(s, "layer_kind", to_string(layer_kind));
  cfg.set(s, "optimizer", to_string(optimizer));
  cfg.set(s, "lr1", format_double(lr1));
  cfg.set(s, "lr2", format_double(lr2));
  cfg.set(s, "n_train", std::to_string(n_train));
  cfg.set(s, "prior_scale", format_double(prior_scale));
  cfg.set(s, "head_alpha", format_double(head_alpha));
  cfg.set(s, "as_initial_mean", format_double(as_initial_mean));
  cfg.set(s, "fp_initial_mean", format_double(fp_initial_mean));
  cfg.set(s, "initial_std", format_double(initial_std));
  cfg.set(s, "vadam_scope", to_string(vadam_scope));
  cfg.set(s, "lambda_prior", format_double(lambda_prior));
  cfg.set(s, "mc_samples", std::to_string(mc_samples));
  cfg.set(s, "vadam_perturb", vadam_perturb ? "true" : "false");
  cfg.set(s, "stop_gradient", stop_gradient ? "true" : "false");
  cfg.set(s, "stochastic_mediation", stochastic_mediation ? "true" : "false");
  cfg.set(s, "ablation", ablation.empty() ? "none" : ablation);
  cfg.set(s, "init_seed", std::to_string(init_seed));
}

std::string GraphSpec::canonical() const {
  Config c;
  write_config(c);
  return c.serialize();
}

std::uint64_t fingerprint(const GraphSpec& spec, std::initializer_list<std::uint64_t> seeds) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](unsigned char byte) {
    h ^= byte;
    h *= 0x100000001b3ULL;
  };
  for (char c : spec.canonical()) feed(static_cast<unsigned char>(c));
  for (std::uint64_t s : seeds)
    for (int i = 0; i < 8; ++i) feed(static_cast<unsigned char>(s >> (8 * i)));
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// ---- data plumbing ------------------------------------------------------------------

NetworkData NetworkData::subset(std::span<const std::size_t> rows) const {
  NetworkData out;
  out.sm = gather_rows(sm, rows);
  out.bd = gather_rows(bd, rows);
  out.as_target.reserve(rows.size());
  out.fp_target.reserve(rows.size());
  for (std::size_t r : rows) {
    out.as_target.push_back(as_target[r]);
    out.fp_target.push_back(fp_target[r]);
  }
  return out;
}

NetworkData network_data(const DataMatrix& data, const MeasurementSpec& spec) {
  auto columns_of = [&](const std::string& node) {
    std::vector<std::size_t> idx;
    for (const auto& name : spec.node_columns[spec.model.node_index(node)]) {
      idx.push_back(data.column_index(name));
    }
    return idx;
  };
  const auto sm = columns_of("SM");
  const auto bd = columns_of("BD");
  const auto as = columns_of("AS");
  const auto fp = columns_of("FP");
  NetworkData out;
  const std::size_t n = data.rows();
  out.sm = Matrix(n, sm.size());
  out.bd = Matrix(n, bd.size());
  out.as_target.assign(n, 0.0);
  out.fp_target.assign(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < sm.size(); ++j) out.sm(r, j) = data.values(r, sm[j]);
    for (std::size_t j = 0; j < bd.size(); ++j) out.bd(r, j) = data.values(r, bd[j]);
    for (std::size_t c : as) out.as_target[r] += data.values(r, c);
    out.as_target[r] /= static_cast<double>(as.size());
    for (std::size_t c : fp) out.fp_target[r] += data.values(r, c);
  }
  return out;
}

InputScaler InputScaler::fit(const Matrix& x) {
  InputScaler s;
  s.mean.assign(x.cols(), 0.0);
  s.scale.assign(x.cols(), 1.0);
  if (x.rows() == 0) return s;
  for (std::size_t c = 0; c < x.cols(); ++c) {
    double m = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) m += x(r, c);
    m /= static_cast<double>(x.rows());
    double ss = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) ss += (x(r, c) - m) * (x(r, c) - m);
    const double sd = std::sqrt(ss / static_cast<double>(x.rows()));
    s.mean[c] = m;
    s.scale[c] = sd > 0.0 ? sd : 1.0;
  }
  return s;
}

Matrix InputScaler::apply(const Matrix& x) const {
  if (x.cols() != mean.size()) throw DimensionError("InputScaler: column count mismatch");
  Matrix out = x;
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = (x(r, c) - mean[c]) / scale[c];
  return out;
}

// ---- one V-structure -----------------------------------------------------------------

class Chevron {
 public:
  Chevron(const std::string& name, const GraphSpec& spec, bool use_sm, bool use_bd,
          bool use_mediator, std::size_t hidden, double initial_mean, double lr, Rng& init_rng)
      : name_(name),
        use_sm_(use_sm),
        use_bd_(use_bd),
        use_mediator_(use_mediator),
        head_(name + ".head", GaussianHead::centered(initial_mean, spec.initial_std, spec.head_alpha)) {
    if (use_bd_) {
      bd_pre_ = make_layer(spec, name + ".bd_pre", spec.bd_width, spec.bd_width, init_rng);
      bd_relu_ = std::make_unique<ReluLayer>(spec.bd_width);
    }
    concat_width_ = (use_sm_ ? spec.sm_width : 0) + (use_bd_ ? spec.bd_width : 0) +
                    (use_mediator_ ? 1 : 0);
    if (concat_width_ == 0) throw ValidationError(name + ": no inputs left after ablation");
    const std::size_t width = hidden == 0 ? concat_width_ : hidden;
    hidden_ = make_layer(spec, name + ".hidden", concat_width_, width, init_rng);
    hidden_relu_ = std::make_unique<ReluLayer>(width);
    projection_ = make_layer(spec, name + ".projection", width, 1, init_rng);

    ParameterList output = output_parameters();
    ParameterList managed_by_vadam;
    if (spec.optimizer == OptimizerKind::vadam) {
      managed_by_vadam = spec.vadam_scope == VadamScope::all ? parameters() : output;
      VadamConfig vc;
      vc.learning_rate = lr;
      vc.n_train = spec.n_train;
      vc.lambda_prior = spec.lambda_prior;
      vc.mc_samples = spec.mc_samples;
      vc.perturb = spec.vadam_perturb;
      vadam_ = std::make_unique<Vadam>(managed_by_vadam, vc);
    }
    ParameterList rest;
    for (Parameter* p : parameters()) {
      if (std::find(managed_by_vadam.begin(), managed_by_vadam.end(), p) == managed_by_vadam.end()) {
        rest.push_back(p);
      }
    }
    if (!rest.empty()) adam_ = std::make_unique<Adam>(rest, AdamConfig{lr, 0.9, 0.999, 1e-8});
  }

  std::size_t concat_width() const { return concat_width_; }
  bool has_bd_prelayer() const { return bd_pre_ != nullptr; }

  GaussianMoments forward(const Matrix& sm, const Matrix& bd, const Matrix* mediator, Rng& rng,
                          Mode mode) {
    std::vector<Matrix> parts;
    if (use_sm_) parts.push_back(sm);
    if (use_bd_) {
      Matrix h = bd_pre_->forward(bd, rng, mode);
      parts.push_back(bd_relu_->forward(h, rng, mode));
    }
    if (use_mediator_) {
      if (!mediator) throw std::logic_error(name_ + ": mediator input missing");
      parts.push_back(*mediator);
    }
    Matrix x = concat_forward(parts, concat_tape_);
    x = hidden_relu_->forward(hidden_->forward(x, rng, mode), rng, mode);
    return head_.forward(projection_->forward(x, rng, mode));
  }

  // Returns ∂/∂mediator (B×1) when the chevron consumes one.
  std::optional<Matrix> backward(const NllGrad& g) {
    Matrix d = head_.backward(g.d_mean, g.d_std);
    d = projection_->backward(d);
    d = hidden_->backward(hidden_relu_->backward(d));
    auto parts = concat_backward(concat_tape_, d);
    std::size_t k = 0;
    if (use_sm_) ++k;
    if (use_bd_) {
      bd_pre_->backward(bd_relu_->backward(parts[k]));
      ++k;
    }
    if (use_mediator_) return parts[k];
    return std::nullopt;
  }

  double kl() const {
    double total = hidden_->kl() + projection_->kl();
    if (bd_pre_) total += bd_pre_->kl();
    return total;
  }

  void accumulate_kl_grad(double scale) {
    hidden_->accumulate_kl_grad(scale);
    projection_->accumulate_kl_grad(scale);
    if (bd_pre_) bd_pre_->accumulate_kl_grad(scale);
  }

  ParameterList parameters() {
    ParameterList out;
    if (bd_pre_) append(out, bd_pre_->parameters());
    append(out, hidden_->parameters());
    append(out, output_parameters());
    return out;
  }

  // The final layer feeding the head, plus the head itself.
  ParameterList output_parameters() {
    ParameterList out = projection_->parameters();
    append(out, head_.parameters());
    return out;
  }

  void zero_grad() {
    for (Parameter* p : parameters()) p->zero_grad();
  }

  void perturb(Rng& rng) {
    if (vadam_) vadam_->perturb(rng);
  }
  void restore() {
    if (vadam_) vadam_->restore();
  }
  void step() {
    if (adam_) adam_->step();
    if (vadam_) vadam_->step();
  }

 private:
  static void append(ParameterList& out, const ParameterList& more) {
    out.insert(out.end(), more.begin(), more.end());
  }

  static std::unique_ptr<Layer> make_layer(const GraphSpec& spec, const std::string& name,
                                           std::size_t in, std::size_t out, Rng& rng) {
    if (spec.layer_kind == LayerKind::flipout) {
      return std::make_unique<FlipoutLayer>(name, in, out, rng, spec.prior_scale);
    }
    return std::make_unique<DenseLayer>(name, in, out, rng);
  }

  std::string name_;
  bool use_sm_;
  bool use_bd_;
  bool use_mediator_;
  std::size_t concat_width_ = 0;
  std::unique_ptr<Layer> bd_pre_;
  std::unique_ptr<ReluLayer> bd_relu_;
  std::unique_ptr<Layer> hidden_;
  std::unique_ptr<ReluLayer> hidden_relu_;
  std::unique_ptr<Layer> projection_;
  GaussianHeadLayer head_;
  ConcatTape concat_tape_;
  std::unique_ptr<Adam> adam_;
  std::unique_ptr<Vadam> vadam_;
};

// ---- ChevronNet ---------------------------------------------------------------------

ChevronNet::ChevronNet(const GraphSpec& spec, const PathModel& model) : spec_(spec) {
  spec_.validate();
  const DagReport dag = dag_validate(model);
  (void)dag;
  for (const char* node : {"SM", "BD", "AS", "FP"}) model.node_index(node);
  if (model.widths[model.node_index("SM")] != spec_.sm_width) {
    throw ValidationError("network: SM width " + std::to_string(spec_.sm_width) +
                          " does not match the path model (" +
                          std::to_string(model.widths[model.node_index("SM")]) + ")");
  }
  if (model.widths[model.node_index("BD")] != spec_.bd_width) {
    throw ValidationError("network: BD width " + std::to_string(spec_.bd_width) +
                          " does not match the path model (" +
                          std::to_string(model.widths[model.node_index("BD")]) + ")");
  }
  if (!spec_.ablation.empty() && model.outgoing(model.node_index(spec_.ablation)).empty()) {
    throw ValidationError("network: ablation target " + spec_.ablation + " is terminal");
  }

  const bool use_sm = spec_.ablation != "SM";
  const bool use_bd = spec_.ablation != "BD";
  const bool use_as = spec_.ablation != "AS";
  const Rng root(spec_.init_seed);
  if (use_as) {
    Rng r1 = root.split(1);
    c1_ = std::make_unique<Chevron>("c1", spec_, use_sm, use_bd, false, spec_.hidden1,
                                    spec_.as_initial_mean, spec_.lr1, r1);
  }
  Rng r2 = root.split(2);
  c2_ = std::make_unique<Chevron>("c2", spec_, use_sm, use_bd, use_as, spec_.hidden2,
                                  spec_.fp_initial_mean, spec_.lr2, r2);
}

ChevronNet::~ChevronNet() = default;
ChevronNet::ChevronNet(ChevronNet&&) noexcept = default;
ChevronNet& ChevronNet::operator=(ChevronNet&&) noexcept = default;

bool ChevronNet::has_chevron1() const { return c1_ != nullptr; }
std::size_t ChevronNet::concat_width1() const { return c1_ ? c1_->concat_width() : 0; }
std::size_t ChevronNet::concat_width2() const { return c2_->concat_width(); }
bool ChevronNet::has_bd_prelayer() const {
  return (c1_ && c1_->has_bd_prelayer()) || c2_->has_bd_prelayer();
}

ParameterList ChevronNet::chevron1_parameters() { return c1_ ? c1_->parameters() : ParameterList{}; }
ParameterList ChevronNet::chevron2_parameters() { return c2_->parameters(); }

ParameterList ChevronNet::parameters() {
  ParameterList out = chevron1_parameters();
  const auto more = chevron2_parameters();
  out.insert(out.end(), more.begin(), more.end());
  return out;
}

std::size_t ChevronNet::parameter_count() const {
  std::size_t total = 0;
  for (const Parameter* p : const_cast<ChevronNet*>(this)->parameters()) total += p->value.size();
  return total;
}

double ChevronNet::kl1() const { return c1_ ? c1_->kl() : 0.0; }
double ChevronNet::kl2() const { return c2_->kl(); }

namespace {
Matrix column_matrix(const std::vector<double>& v) { return Matrix::column(v); }

void require_batch(const NetworkData& batch, const GraphSpec& spec) {
  if (batch.rows() == 0) throw ValidationError("empty batch");
  if (batch.sm.cols() != spec.sm_width || batch.bd.cols() != spec.bd_width) {
    throw DimensionError("batch widths " + batch.sm.shape_string() + " / " +
                         batch.bd.shape_string() + " do not match the network");
  }
  if (batch.sm.rows() != batch.rows() || batch.bd.rows() != batch.rows() ||
      batch.as_target.size() != batch.rows()) {
    throw DimensionError("batch row counts disagree");
  }
  for (std::size_t i = 0; i < batch.rows(); ++i) {
    if (!std::isfinite(batch.as_target[i]) || !std::isfinite(batch.fp_target[i])) {
      throw ValidationError("non-finite target in batch");
    }
  }
}

void require_finite_loss(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + what);
}
}  // namespace

Prediction ChevronNet::forward(const Matrix& sm, const Matrix& bd, Rng& rng, Mode mode) {
  if (sm.cols() != spec_.sm_width || bd.cols() != spec_.bd_width || sm.rows() != bd.rows()) {
    throw DimensionError("forward: input shapes " + sm.shape_string() + " / " + bd.shape_string());
  }
  Prediction out;
  std::optional<Matrix> mediator;
  if (c1_) {
    out.as = c1_->forward(sm, bd, nullptr, rng, mode);
    std::vector<double> m = out.as->mean;
    if (spec_.stochastic_mediation && mode == Mode::stochastic) {
      for (std::size_t i = 0; i < m.size(); ++i) m[i] += out.as->std[i] * rng.normal();
    }
    mediator = column_matrix(m);
  }
  out.fp = c2_->forward(sm, bd, mediator ? &*mediator : nullptr, rng, mode);
  return out;
}

StepLosses ChevronNet::objective(const NetworkData& batch, Rng& rng, Mode mode) {
  require_batch(batch, spec_);
  const Prediction p = forward(batch.sm, batch.bd, rng, mode);
  const ElboConfig cfg{spec_.n_train};
  StepLosses out;
  const double kl_first = kl1();
  const double kl_second = kl2();
  if (p.as) out.loss1 = elbo(gaussian_nll(batch.as_target, p.as->mean, p.as->std), kl_first, cfg);
  out.loss2 = elbo(gaussian_nll(batch.fp_target, p.fp.mean, p.fp.std), kl_second, cfg);
  out.total = out.loss1.value_or(0.0) + out.loss2;
  out.kl = kl_first + kl_second;
  return out;
}

StepLosses ChevronNet::compute_gradients(const NetworkData& batch, Rng& rng, bool perturb) {
  require_batch(batch, spec_);
  if (c1_) c1_->zero_grad();
  c2_->zero_grad();

  const ElboConfig cfg{spec_.n_train};
  const double kl_weight = 1.0 / static_cast<double>(spec_.n_train);
  StepLosses out;
  const double kl_first = kl1();
  const double kl_second = kl2();
  out.kl = kl_first + kl_second;
  if (c1_) c1_->accumulate_kl_grad(kl_weight);
  c2_->accumulate_kl_grad(kl_weight);

  const std::size_t samples = spec_.optimizer == OptimizerKind::vadam ? spec_.mc_samples : 1;
  const double inv_samples = 1.0 / static_cast<double>(samples);
  double nll1 = 0.0;
  double nll2 = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    if (perturb) {
      if (c1_) c1_->perturb(rng);
      c2_->perturb(rng);
    }
    std::optional<GaussianMoments> as;
    std::vector<double> mediation_noise;
    std::optional<Matrix> mediator;
    if (c1_) {
      as = c1_->forward(batch.sm, batch.bd, nullptr, rng, Mode::stochastic);
      std::vector<double> m = as->mean;
      if (spec_.stochastic_mediation) {
        mediation_noise.resize(m.size());
        for (std::size_t i = 0; i < m.size(); ++i) {
          mediation_noise[i] = rng.normal();
          m[i] += as->std[i] * mediation_noise[i];
        }
      }
      mediator = column_matrix(m);
    }
    const GaussianMoments fp =
        c2_->forward(batch.sm, batch.bd, mediator ? &*mediator : nullptr, rng, Mode::stochastic);

    const double l2 = gaussian_nll(batch.fp_target, fp.mean, fp.std);
    require_finite_loss(l2, "FP loss");
    nll2 += l2 * inv_samples;
    NllGrad g2 = gaussian_nll_grad(batch.fp_target, fp.mean, fp.std);
    for (auto& v : g2.d_mean) v *= inv_samples;
    for (auto& v : g2.d_std) v *= inv_samples;
    const auto d_mediator = c2_->backward(g2);

    if (c1_) {
      const double l1 = gaussian_nll(batch.as_target, as->mean, as->std);
      require_finite_loss(l1, "AS loss");
      nll1 += l1 * inv_samples;
      NllGrad g1 = gaussian_nll_grad(batch.as_target, as->mean, as->std);
      for (auto& v : g1.d_mean) v *= inv_samples;
      for (auto& v : g1.d_std) v *= inv_samples;
      if (!spec_.stop_gradient && d_mediator) {
        for (std::size_t i = 0; i < g1.d_mean.size(); ++i) {
          g1.d_mean[i] += (*d_mediator)[i];
          if (spec_.stochastic_mediation) g1.d_std[i] += (*d_mediator)[i] * mediation_noise[i];
        }
      }
      c1_->backward(g1);
    }
  }
  if (c1_) out.loss1 = elbo(nll1, kl_first, cfg);
  out.loss2 = elbo(nll2, kl_second, cfg);
  out.total = out.loss1.value_or(0.0) + out.loss2;
  require_finite_loss(out.total, "total loss");
  return out;
}

StepLosses ChevronNet::train_step(const NetworkData& batch, Rng& rng) {
  StepLosses losses;
  try {
    losses = compute_gradients(batch, rng, true);
  } catch (...) {
    if (c1_) c1_->restore();
    c2_->restore();
    throw;
  }
  step_chevron1();
  step_chevron2();
  return losses;
}

void ChevronNet::step_chevron1() {
  if (c1_) c1_->step();
}

void ChevronNet::step_chevron2() { c2_->step(); }

StepLosses ChevronNet::evaluate(const NetworkData& data) {
  if (data.rows() == 0) throw ValidationError("evaluate: empty dataset");
  if (c1_) c1_->restore();
  c2_->restore();
  Rng unused(0);
  return objective(data, unused, Mode::mean_only);
}

// ---- checkpoints --------------------------------------------------------------------

void ChevronNet::save_checkpoint(const std::filesystem::path& prefix, std::uint64_t fp) {
  if (prefix.has_parent_path()) std::filesystem::create_directories(prefix.parent_path());
  std::ofstream manifest(prefix.string() + ".manifest");
  std::ofstream blob(prefix.string() + ".bin", std::ios::binary);
  if (!manifest || !blob) throw ValidationError("cannot write checkpoint " + prefix.string());
  manifest << "fingerprint " << hex64(fp) << "\n";
  std::size_t offset = 0;
  for (const Parameter* p : parameters()) {
    manifest << p->name << " " << p->value.rows() << " " << p->value.cols() << " " << offset << "\n";
    for (double v : p->value.data()) {
      unsigned char bytes[8];
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
      blob.write(reinterpret_cast<const char*>(bytes), 8);
    }
    offset += p->value.size();
  }
}

std::uint64_t ChevronNet::load_checkpoint(const std::filesystem::path& prefix) {
  std::ifstream manifest(prefix.string() + ".manifest");
  std::ifstream blob(prefix.string() + ".bin", std::ios::binary);
  if (!manifest || !blob) throw ValidationError("cannot read checkpoint " + prefix.string());
  std::string word, hex;
  manifest >> word >> hex;
  if (word != "fingerprint") throw ValidationError("checkpoint manifest lacks a fingerprint");
  const std::uint64_t fp = std::stoull(hex, nullptr, 16);
  for (Parameter* p : parameters()) {
    std::string name;
    std::size_t rows = 0, cols = 0, offset = 0;
    if (!(manifest >> name >> rows >> cols >> offset) || name != p->name ||
        rows != p->value.rows() || cols != p->value.cols()) {
      throw ValidationError("checkpoint does not match parameter " + p->name);
    }
    for (double& v : p->value.data()) {
      unsigned char bytes[8];
      if (!blob.read(reinterpret_cast<char*>(bytes), 8)) {
        throw ValidationError("checkpoint data truncated at " + p->name);
      }
      std::uint64_t bits = 0;
      for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
      std::memcpy(&v, &bits, 8);
    }
  }
  return fp;
}

// ---- training loop -----------------------------------------------------------------

double RunRecord::best_val_loss() const {
  if (val_loss.empty()) return std::numeric_limits<double>::quiet_NaN();
  return *std::min_element(val_loss.begin(), val_loss.end());
}

RunRecord train_network(GraphSpec spec, const PathModel& model, const NetworkData& train,
                        const NetworkData& validation, const TrainOptions& options) {
  if (train.rows() == 0) throw ValidationError("train_network: empty training set");
  if (validation.rows() == 0) throw ValidationError("train_network: empty validation set");
  if (options.batch_size == 0) throw ValidationError("train_network: batch size must be >= 1");
  const auto start = std::chrono::steady_clock::now();
  spec.n_train = train.rows();

  RunRecord record;
  record.ablation = spec.ablation.empty() ? "none" : spec.ablation;
  record.fingerprint = fingerprint(spec, {options.seed});

  const InputScaler scaler = InputScaler::fit(train.sm);
  NetworkData tr = train;
  NetworkData va = validation;
  tr.sm = scaler.apply(train.sm);
  va.sm = scaler.apply(validation.sm);

  ChevronNet net(spec, model);
  const Rng root(options.seed);
  Rng noise = root.split(1);
  std::vector<std::size_t> order(tr.rows());
  std::size_t epoch = 0;
  std::size_t batch_index = 0;
  try {
    for (epoch = 0; epoch < options.epochs; ++epoch) {
      std::iota(order.begin(), order.end(), 0);
      Rng shuffle = root.split(1000 + epoch);
      for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[shuffle.uniform_index(i)]);
      }
      double sum = 0.0;
      std::size_t batches = 0;
      for (batch_index = 0; batch_index * options.batch_size < order.size(); ++batch_index) {
        const std::size_t begin = batch_index * options.batch_size;
        const std::size_t end = std::min(begin + options.batch_size, order.size());
        const NetworkData batch =
            tr.subset(std::span<const std::size_t>(order).subspan(begin, end - begin));
        sum += net.train_step(batch, noise).total;
        ++batches;
      }
      record.train_loss.push_back(sum / static_cast<double>(batches));
      const double val = net.evaluate(va).total;
      if (!std::isfinite(val)) throw NumericError("non-finite validation loss");
      record.val_loss.push_back(val);
    }
  } catch (const NumericError& e) {
    record.degraded = true;
    record.failure = std::string(e.what()) + " at epoch " + std::to_string(epoch + 1) +
                     ", batch " + std::to_string(batch_index + 1);
  }
  record.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return record;
}

std::string run_record_csv(const RunRecord& record) {
  std::string out = "epoch,train_loss,val_loss\n";
  for (std::size_t e = 0; e < record.val_loss.size(); ++e) {
    out += std::to_string(e + 1) + "," + format_double(record.train_loss[e]) + "," +
           format_double(record.val_loss[e]) + "\n";
  }
  return out;
}

}  // namespace cbnn
