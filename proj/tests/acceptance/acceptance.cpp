// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "cbnn/bayes.hpp"
#include "cbnn/chevron.hpp"
#include "cbnn/data.hpp"
#include "cbnn/gradcheck.hpp"
#include "cbnn/harness.hpp"
#include "cbnn/optim.hpp"
#include "cbnn/sem.hpp"
#include "cbnn/synth.hpp"

using namespace cbnn;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void verdict(int id, bool ok, const std::string& detail) {
  std::printf("%s criterion %d: %s\n", ok ? "PASS" : "FAIL", id, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

Matrix uniform_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (double& v : m.data()) v = lo + (hi - lo) * rng.uniform();
  return m;
}

double weighted_sum(const Matrix& out, const Matrix& up) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += up[i] * out[i];
  return s;
}

template <class F>
double simpson(F f, double a, double b, int panels) {
  const double h = (b - a) / panels;
  double s = f(a) + f(b);
  for (int i = 1; i < panels; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

struct Problem {
  DataMatrix data;
  MeasurementSpec spec;
};

Problem simulate_problem(std::size_t n, std::uint64_t seed) {
  GenConfig cfg;
  cfg.n = n;
  cfg.seed = seed;
  Problem p{simulate(cfg), {}};
  p.spec = parse_measurement_spec(Config::parse(default_dag_spec()), p.data);
  apply_measurement_spec(p.spec, p.data);
  return p;
}

// ---- 1 --------------------------------------------------------------------------------

void gradient_correctness() {
  const auto t0 = Clock::now();
  Rng init(101);
  std::vector<std::pair<std::string, double>> layer_errors;

  {  // dense
    DenseLayer layer("dense", 5, 3, init);
    for (double& v : layer.bias().value.data()) v = init.normal();
    Parameter x("x", uniform_matrix(4, 5, init));
    const Matrix up = uniform_matrix(4, 3, init);
    Rng r(0);
    auto params = layer.parameters();
    params.push_back(&x);
    auto loss = [&] { return weighted_sum(layer.forward(x.value, r, Mode::mean_only), up); };
    auto back = [&] {
      for (Parameter* p : params) p->zero_grad();
      layer.forward(x.value, r, Mode::mean_only);
      x.grad = layer.backward(up);
    };
    layer_errors.emplace_back("dense", grad_check(loss, back, params).max_rel_error);
  }
  {  // relu, inputs kept away from the kink
    ReluLayer layer(6);
    Matrix v = uniform_matrix(3, 6, init, 0.2, 1.0);
    for (std::size_t i = 0; i < v.size(); i += 2) v[i] = -v[i];
    Parameter x("x", v);
    const Matrix up = uniform_matrix(3, 6, init);
    Rng r(0);
    auto loss = [&] { return weighted_sum(layer.forward(x.value, r, Mode::mean_only), up); };
    auto back = [&] {
      layer.forward(x.value, r, Mode::mean_only);
      x.grad = layer.backward(up);
    };
    layer_errors.emplace_back("relu", grad_check(loss, back, {&x}).max_rel_error);
  }
  {  // concat
    Parameter a("a", uniform_matrix(3, 2, init)), b("b", uniform_matrix(3, 4, init));
    const Matrix up = uniform_matrix(3, 6, init);
    auto loss = [&] {
      ConcatTape t;
      const std::vector<Matrix> parts{a.value, b.value};
      return weighted_sum(concat_forward(parts, t), up);
    };
    auto back = [&] {
      ConcatTape t;
      const std::vector<Matrix> parts{a.value, b.value};
      concat_forward(parts, t);
      auto g = concat_backward(t, up);
      a.grad = g[0];
      b.grad = g[1];
    };
    layer_errors.emplace_back("concat", grad_check(loss, back, {&a, &b}).max_rel_error);
  }
  {  // flipout, stochastic path with a frozen stream
    FlipoutLayer layer("flipout", 4, 3, init);
    for (double& v : layer.weight_rho().value.data()) v = softplus_inverse(0.2 + 0.3 * init.uniform());
    for (double& v : layer.bias().value.data()) v = init.normal();
    Parameter x("x", uniform_matrix(5, 4, init, -2, 2));
    const Matrix up = uniform_matrix(5, 3, init);
    const Rng frozen(102);
    auto params = layer.parameters();
    params.push_back(&x);
    auto loss = [&] {
      Rng r = frozen;
      return weighted_sum(layer.forward(x.value, r, Mode::stochastic), up);
    };
    auto back = [&] {
      for (Parameter* p : params) p->zero_grad();
      Rng r = frozen;
      layer.forward(x.value, r, Mode::stochastic);
      x.grad = layer.backward(up);
    };
    layer_errors.emplace_back("flipout", grad_check(loss, back, params).max_rel_error);

    auto kl_params = layer.parameters();
    auto kl_back = [&] {
      for (Parameter* p : kl_params) p->zero_grad();
      layer.accumulate_kl_grad(1.0);
    };
    layer_errors.emplace_back("flipout KL", grad_check([&] { return layer.kl(); }, kl_back, kl_params).max_rel_error);
  }
  {  // Gaussian head with its NLL
    GaussianHeadLayer head("head", GaussianHead::centered(25.0, 1.0, 0.05));
    Parameter t("t", uniform_matrix(6, 1, init, -3, 3));
    std::vector<double> y(6);
    for (double& v : y) v = 25.0 + 3.0 * init.normal();
    auto params = head.parameters();
    params.push_back(&t);
    auto loss = [&] {
      const auto m = head.forward(t.value);
      return gaussian_nll(y, m.mean, m.std);
    };
    auto back = [&] {
      for (Parameter* p : params) p->zero_grad();
      const auto m = head.forward(t.value);
      const auto g = gaussian_nll_grad(y, m.mean, m.std);
      t.grad = head.backward(g.d_mean, g.d_std);
    };
    layer_errors.emplace_back("head+nll", grad_check(loss, back, params).max_rel_error);
  }

  // Assembled network, both chevrons, FP loss flowing back into chevron 1.
  const Problem prob = simulate_problem(200, 7);
  const PathModel model = fit_paths(prob.data, prob.spec);
  const NetworkData all = network_data(prob.data, prob.spec);
  const std::vector<std::size_t> rows{0, 1, 2, 3, 4, 5};
  const NetworkData batch = all.subset(rows);
  GraphSpec spec;
  spec.hidden1 = 5;
  spec.hidden2 = 4;
  spec.stop_gradient = false;
  spec.n_train = 40;
  spec.init_seed = 3;
  ChevronNet net(spec, model);
  const Rng frozen(103);
  auto loss = [&] {
    Rng r = frozen;
    return net.objective(batch, r, Mode::stochastic).total;
  };
  auto back = [&] {
    Rng r = frozen;
    net.compute_gradients(batch, r, false);
  };
  // The summed loss is O(10^2): a 1e-4 step balances roundoff against
  // truncation, and gradients below 1e-5 are judged on absolute error.
  GradCheckOptions full_opt;
  full_opt.step = 1e-4;
  full_opt.abs_floor = 1e-5;
  const GradCheckReport full = grad_check(loss, back, net.parameters(), full_opt);
  const double elapsed = seconds_since(t0);

  double worst = 0.0;
  std::string worst_name;
  for (const auto& [name, err] : layer_errors)
    if (err >= worst) worst = err, worst_name = name;
  const bool ok = worst < 1e-5 && full.max_rel_error < 1e-4 && elapsed < 10.0;
  std::ostringstream d;
  d << "layers max rel err " << fmt("%.2e", worst) << " (" << worst_name << ", tol 1e-5); full net "
    << fmt("%.2e", full.max_rel_error) << " over " << full.checked << " params (tol 1e-4, worst "
    << full.worst_parameter << "[" << full.worst_index << "] " << fmt("%.6e", full.worst_analytic)
    << " vs " << fmt("%.6e", full.worst_numeric) << "); "
    << fmt("%.2f", elapsed) << " s (limit 10 s)";
  verdict(1, ok, d.str());
}

// ---- 2 --------------------------------------------------------------------------------

void flipout_mechanics() {
  const auto t0 = Clock::now();
  Rng init(201);

  // (a) σ = 0 reduces to the dense layer.
  FlipoutParams zero;
  zero.w_mean = uniform_matrix(6, 4, init);
  zero.w_rho = Matrix(6, 4, -1000.0);
  zero.bias = uniform_matrix(1, 4, init);
  const Matrix xa = uniform_matrix(5, 6, init);
  FlipoutTape tape;
  DenseTape dtape;
  Rng ra(202);
  const double dist_a = frobenius_distance(flipout_forward(xa, zero, ra, Mode::stochastic, tape),
                                           dense_forward(xa, zero.w_mean, zero.bias, dtape));
  const bool ok_a = dist_a < 1e-12;

  // (b) Monte Carlo mean of the stochastic output equals the mean-only output.
  FlipoutParams p;
  p.w_mean = uniform_matrix(3, 2, init);
  p.w_rho = Matrix(3, 2, softplus_inverse(0.5));
  p.bias = uniform_matrix(1, 2, init);
  const Matrix xb = uniform_matrix(4, 3, init);
  Rng rb(203);
  const Matrix mean = flipout_forward(xb, p, rb, Mode::mean_only, tape);
  const int draws = 100000;
  Matrix s(mean.rows(), mean.cols()), ss(mean.rows(), mean.cols());
  for (int i = 0; i < draws; ++i) {
    const Matrix out = flipout_forward(xb, p, rb, Mode::stochastic, tape);
    for (std::size_t k = 0; k < out.size(); ++k) {
      s[k] += out[k];
      ss[k] += out[k] * out[k];
    }
  }
  double worst_z = 0.0;
  for (std::size_t k = 0; k < mean.size(); ++k) {
    const double m = s[k] / draws;
    const double se = std::sqrt((ss[k] / draws - m * m) / draws);
    worst_z = std::max(worst_z, std::abs(m - mean[k]) / se);
  }
  const bool ok_b = worst_z <= 3.0;

  // (c) Variance of the batch-mean output: flipout vs. one perturbation shared
  // by the whole batch. Rows are identical so the ideal ratio is exactly 1/B.
  FlipoutParams q;
  q.w_mean = uniform_matrix(5, 3, init);
  q.w_rho = Matrix(5, 3, softplus_inverse(0.3));
  q.bias = Matrix(1, 3);
  const Matrix sigma = softplus(q.w_rho);
  const int trials = 10000;
  std::ostringstream dc;
  bool ok_c = true;
  for (std::size_t b : {4u, 16u}) {
    Matrix x(b, 5);
    const Matrix row = uniform_matrix(1, 5, init);
    for (std::size_t r = 0; r < b; ++r)
      for (std::size_t c = 0; c < 5; ++c) x(r, c) = row(0, c);
    Rng rf(204 + b), rs(304 + b);
    double f1 = 0, f2 = 0, s1 = 0, s2 = 0;
    for (int t = 0; t < trials; ++t) {
      const Matrix out = flipout_forward(x, q, rf, Mode::stochastic, tape);
      double mf = 0;
      for (std::size_t r = 0; r < b; ++r) mf += out(r, 0) / b;
      f1 += mf;
      f2 += mf * mf;

      Matrix w = q.w_mean;
      for (std::size_t k = 0; k < w.size(); ++k) w[k] += sigma[k] * rs.normal();
      const Matrix shared = matmul(x, w);
      double ms = 0;
      for (std::size_t r = 0; r < b; ++r) ms += shared(r, 0) / b;
      s1 += ms;
      s2 += ms * ms;
    }
    const double var_f = f2 / trials - (f1 / trials) * (f1 / trials);
    const double var_s = s2 / trials - (s1 / trials) * (s1 / trials);
    const double ratio = var_f / var_s;
    const double rel = ratio * static_cast<double>(b);
    ok_c = ok_c && std::abs(rel - 1.0) <= 0.25;
    dc << " B=" << b << " ratio " << fmt("%.4f", ratio) << " (1/B " << fmt("%.4f", 1.0 / b) << ")";
  }
  const double elapsed = seconds_since(t0);
  std::ostringstream d;
  d << "(a) |flipout-dense| " << fmt("%.1e", dist_a) << " (tol 1e-12); (b) worst |z| "
    << fmt("%.2f", worst_z) << " at 1e5 draws (tol 3 SE); (c)" << dc.str() << " (tol 25%); "
    << fmt("%.2f", elapsed) << " s (limit 60 s)";
  verdict(2, ok_a && ok_b && ok_c && elapsed < 60.0, d.str());
}

// ---- 3 --------------------------------------------------------------------------------

void kl_closed_form() {
  auto logpdf = [](double x, double m, double s) {
    return -0.5 * std::log(2 * std::numbers::pi) - std::log(s) - 0.5 * (x - m) * (x - m) / (s * s);
  };
  double worst = 0.0;
  int points = 0;
  for (int i = 0; i < 5; ++i) {
    const double mu = -3.0 + 1.5 * i;
    for (int j = 0; j < 4; ++j) {
      const double sigma = 0.1 + (3.0 - 0.1) * j / 3.0;
      const double quad = simpson(
          [&](double w) {
            const double lq = logpdf(w, mu, sigma);
            return std::exp(lq) * (lq - logpdf(w, 0.0, 1.0));
          },
          mu - 12 * sigma, mu + 12 * sigma, 4000);
      const double closed = flipout_kl(Matrix(1, 1, mu), Matrix(1, 1, softplus_inverse(sigma)), 1.0);
      worst = std::max({worst, std::abs(closed - quad), std::abs(gaussian_kl(mu, sigma, 0, 1) - quad)});
      ++points;
    }
  }
  verdict(3, worst < 1e-6 && points == 20,
          "max |closed - quadrature| " + fmt("%.2e", worst) + " over " + std::to_string(points) +
              " (mu, sigma) points (tol 1e-6)");
}

// ---- 4 --------------------------------------------------------------------------------

void optimizer_oracles() {
  // Adam: with eps = 0 the first update is exactly α whatever the gradient.
  bool adam_ok = true;
  for (double g : {4.0, -0.003, 1e4, 1e-7}) {
    Parameter p("p", Matrix{{0.0}});
    Adam adam({&p}, AdamConfig{0.01, 0.9, 0.999, 0.0});
    p.grad(0, 0) = g;
    adam.step();
    adam_ok = adam_ok && std::abs(p.value(0, 0)) == 0.01;
  }

  // Vadam with λ = 0 and no perturbation replays Adam(eps = 0) bit for bit.
  bool degenerate_ok = true;
  const std::vector<std::function<double(double, int)>> grads{
      [](double w, int) { return 2.0 * (w - 0.3); },
      [](double w, int t) { return std::sin(3.0 * w) + 0.1 * t; },
      [](double w, int t) { return (t % 3 == 0 ? -1.0 : 1.0) * w * w * w; }};
  for (const auto& grad : grads) {
    Parameter a("a", Matrix{{1.5}}), v("v", Matrix{{1.5}});
    Adam adam({&a}, AdamConfig{0.05, 0.9, 0.999, 0.0});
    VadamConfig vc;
    vc.learning_rate = 0.05;
    vc.n_train = 100;
    vc.lambda_prior = 0.0;
    vc.perturb = false;
    Vadam vadam({&v}, vc);
    Rng rng(401);
    for (int t = 0; t < 50; ++t) {
      a.grad(0, 0) = grad(a.value(0, 0), t);
      adam.step();
      vadam.perturb(rng);
      v.grad(0, 0) = grad(v.value(0, 0), t);
      vadam.step();
      degenerate_ok = degenerate_ok && a.value(0, 0) == v.value(0, 0);
    }
  }

  // Vadam at t = 0: perturbation std 1/√λ for prior precision 0.1.
  Parameter p("p", Matrix(1, 1));
  VadamConfig vc;
  vc.n_train = 450;
  vc.lambda_prior = 0.1;
  Vadam vadam({&p}, vc);
  Rng rng(402);
  const int n = 100000;
  double ss = 0.0;
  for (int i = 0; i < n; ++i) {
    vadam.perturb(rng);
    ss += p.value(0, 0) * p.value(0, 0);
    vadam.restore();
  }
  const double empirical = std::sqrt(ss / n);
  const double target = 1.0 / std::sqrt(0.1);
  const bool std_ok = std::abs(empirical - target) <= 0.02 * target;

  std::ostringstream d;
  d << "Adam first step = alpha " << (adam_ok ? "exact" : "MISMATCH") << "; Vadam(lambda=0) vs Adam(eps=0) "
    << (degenerate_ok ? "bit-identical" : "DIFFERS") << " over 3x50 steps; t=0 perturbation std "
    << fmt("%.4f", empirical) << " vs 3.1623 (tol 2%)";
  verdict(4, adam_ok && degenerate_ok && std_ok, d.str());
}

// ---- 5 --------------------------------------------------------------------------------

void sem_recovery() {
  const PathModel truth = generating_model(GenConfig{});
  double worst = 0.0;
  std::string worst_edge;
  int bd_weakest = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Problem p = simulate_problem(5000, seed);
    const PathModel fit = fit_paths(p.data, p.spec);
    for (std::size_t e = 0; e < truth.edges.size(); ++e) {
      const Edge& edge = truth.edges[e];
      const double err = std::abs(fit.coefficient(edge.src, edge.dst) - truth.coefficients[e]);
      if (err > worst) worst = err, worst_edge = edge.src + "->" + edge.dst;
    }
    bd_weakest += weakest_path(fit) == "BD";
  }
  std::ostringstream d;
  d << "max |fit - generating| " << fmt("%.4f", worst) << " (" << worst_edge
    << ", tol 0.05) over 20 seeds; weakest = BD in " << bd_weakest << "/20 (need >= 19)";
  verdict(5, worst <= 0.05 && bd_weakest >= 19, d.str());
}

// ---- 6 --------------------------------------------------------------------------------

void covariance_consistency() {
  const Problem train = simulate_problem(5000, 1);
  const PathModel fit = fit_paths(train.data, train.spec);
  const Problem fresh = simulate_problem(20000, 1001);
  const Matrix scores = node_composites(fresh.data, fresh.spec);
  const std::size_t n = scores.rows(), k = scores.cols();
  std::vector<double> mean(k, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < k; ++c) mean[c] += scores(r, c) / n;
  Matrix cov(k, k);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j)
        cov(i, j) += (scores(r, i) - mean[i]) * (scores(r, j) - mean[j]) / (n - 1);
  const double dist = frobenius_distance(implied_covariance(fit), cov);
  verdict(6, dist < 0.05, "Frobenius(implied, sample n=20000) " + fmt("%.4f", dist) + " (tol 0.05)");
}

// ---- 7 --------------------------------------------------------------------------------

void joint_normalization() {
  const Problem p = simulate_problem(5000, 1);
  const PathModel fit = fit_paths(p.data, p.spec);
  double worst = 0.0;
  std::string worst_pair;
  for (std::size_t e = 0; e < fit.edges.size(); ++e) {
    const Edge& edge = fit.edges[e];
    PathModel sub = PathModel::structure({edge.src, edge.dst}, {edge});
    sub.coefficients = {fit.coefficients[e]};
    sub.std_errors = {0.0};
    sub.p_values = {0.0};
    sub.residual_variances = {1.0, fit.residual_variances[fit.node_index(edge.dst)]};
    const double total = simpson(
        [&](double a) {
          return simpson(
              [&](double b) {
                const std::vector<double> x{a, b};
                return std::exp(joint_log_prob(sub, x));
              },
              -10, 10, 500);
        },
        -9, 9, 500);
    if (std::abs(total - 1.0) >= worst) worst = std::abs(total - 1.0), worst_pair = edge.src + "->" + edge.dst;
  }
  verdict(7, worst < 1e-4,
          "max |integral - 1| " + fmt("%.2e", worst) + " over " + std::to_string(fit.edges.size()) +
              " two-node submodels (worst " + worst_pair + ", tol 1e-4)");
}

// ---- 8 --------------------------------------------------------------------------------

void headline_property() {
  const Problem p = simulate_problem(500, 1);
  const ExperimentGrid grid = ExperimentGrid::from_config(Config::load(CBNN_CONFIG_DIR "/grid_desk.ini"));
  const auto t0 = Clock::now();
  const GridResult result = run_grid(grid, p.data, p.spec);
  const double elapsed = seconds_since(t0);
  const ConvergenceReport rep = summarize(result.records);

  const CellSummary* full = rep.find("flipout", "none");
  const CellSummary* no_bd = rep.find("flipout", "BD");
  const bool ok_a = full && no_bd && no_bd->median_first_epoch_loss < full->median_first_epoch_loss;

  double lo = INFINITY, hi = -INFINITY;
  for (const char* abl : {"none", "BD", "SM", "AS"}) {
    const CellSummary* c = rep.find("flipout", abl);
    if (!c) continue;
    lo = std::min(lo, c->median_min_val_loss);
    hi = std::max(hi, c->median_min_val_loss);
  }
  const double spread = full ? (hi - lo) / full->median_min_val_loss * 100.0 : INFINITY;
  const bool ok_b = spread <= 5.0;
  const bool ok_time = elapsed < 600.0 && grid.threads == 1;

  std::ostringstream d;
  d << "(a) flipout first-epoch median Full " << fmt("%.3f", full ? full->median_first_epoch_loss : NAN)
    << " vs No BD " << fmt("%.3f", no_bd ? no_bd->median_first_epoch_loss : NAN) << ", drop "
    << fmt("%.1f%%", no_bd && no_bd->first_epoch_drop_percent ? *no_bd->first_epoch_drop_percent : NAN)
    << (ok_a ? " ok" : " WRONG DIRECTION") << "; (b) min-val-loss spread " << fmt("%.1f%%", spread)
    << " of Full (tol 5%)" << (ok_b ? "" : " EXCEEDED") << "; " << result.records.size() << " runs in "
    << fmt("%.0f", elapsed) << " s on 1 thread (limit 600 s)";
  verdict(8, ok_a && ok_b && ok_time, d.str());
}

// ---- 9 --------------------------------------------------------------------------------

bool run(const std::string& cmd) {
  return std::system((cmd + " > /dev/null 2>&1").c_str()) == 0;
}

bool pipeline(const fs::path& dir, const fs::path& grid) {
  const std::string cli = CBNN_CLI_PATH;
  const std::string cfg = CBNN_CONFIG_DIR;
  fs::create_directories(dir);
  const std::string data = (dir / "data.csv").string();
  return run(cli + " gen-data -c " + cfg + "/generator.ini -n 200 --seed 5 -o " + data) &&
         run(cli + " fit-sem -d " + data + " -g " + cfg + "/dag.ini -o " + (dir / "sem.txt").string()) &&
         run(cli + " run -G " + grid.string() + " -d " + data + " -g " + cfg + "/dag.ini -o " +
             (dir / "run").string()) &&
         run(cli + " report -r " + (dir / "run/records.csv").string() + " -o " + (dir / "report").string());
}

std::vector<fs::path> csv_files(const fs::path& root) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().extension() == ".csv") out.push_back(fs::relative(e.path(), root));
  std::sort(out.begin(), out.end());
  return out;
}

void determinism() {
  const fs::path base = fs::temp_directory_path() / "cbnn_acceptance_pipeline";
  fs::remove_all(base);
  fs::create_directories(base);
  const fs::path grid = base / "grid.ini";
  write_text_file(grid,
                  "[grid]\nconfigurations = flipout, vadam, both\nablations = none, BD, SM, AS\n"
                  "repetitions = 1\nfolds = 2\nepochs = 3\nbatch_size = 4\nthreads = 2\n");
  const bool ran = pipeline(base / "a", grid) && pipeline(base / "b", grid);
  std::size_t compared = 0, differing = 0;
  if (ran) {
    const auto fa = csv_files(base / "a"), fb = csv_files(base / "b");
    differing += fa != fb;
    for (const auto& f : fa) {
      ++compared;
      if (!fs::exists(base / "b" / f) || read_text_file(base / "a" / f) != read_text_file(base / "b" / f))
        ++differing;
    }
    differing += read_text_file(base / "a/run/summary.csv") != read_text_file(base / "a/report/summary.csv");
  }
  const bool ok = ran && compared > 0 && differing == 0;
  std::ostringstream d;
  d << (ran ? "" : "pipeline command failed; ") << compared << " CSV files compared across two invocations, "
    << differing << " differ";
  verdict(9, ok, d.str());
  if (ok) fs::remove_all(base);
}

}  // namespace

// Optional arguments select criteria by number; default runs all.
int main(int argc, char** argv) {
  const std::vector<std::function<void()>> criteria{
      gradient_correctness, flipout_mechanics,   kl_closed_form,     optimizer_oracles, sem_recovery,
      covariance_consistency, joint_normalization, headline_property, determinism};
  std::vector<bool> selected(criteria.size(), argc == 1);
  for (int a = 1; a < argc; ++a) {
    const int id = std::atoi(argv[a]);
    if (id < 1 || id > static_cast<int>(criteria.size())) {
      std::fprintf(stderr, "unknown criterion '%s'\n", argv[a]);
      return 2;
    }
    selected[id - 1] = true;
  }
  int ran = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected[i]) continue;
    ++ran;
    try {
      criteria[i]();
    } catch (const std::exception& e) {
      verdict(static_cast<int>(i + 1), false, std::string("exception: ") + e.what());
    }
  }
  std::printf("%d of %d criteria failed\n", failures, ran);
  return failures == 0 ? 0 : 1;
}
