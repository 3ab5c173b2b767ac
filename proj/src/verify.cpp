#include "gora/verify.hpp"

#include "gora/ddpsim.hpp"
#include "gora/tasks.hpp"
#include "gora/trainkit.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>

namespace gora {

namespace {

using Suite = std::function<void(std::uint64_t, std::vector<VerifyCase>&)>;

void add(std::vector<VerifyCase>& out, const char* suite, std::string name, double measured, double bound,
         bool pass) {
  out.push_back(VerifyCase{suite, std::move(name), measured, bound, pass});
}

void suite_projection(std::uint64_t seed, std::vector<VerifyCase>& out) {
  Rng rng(derive_seed(seed, "verify.projection"));
  for (int pair = 0; pair < 200; ++pair) {
    const Matrix a = sample_gaussian(rng, 64, 8);
    const Matrix g = sample_gaussian(rng, 64, 64);
    const Matrix b_hat = -compress_init_B(a, g);  // least-squares minimizer of ‖G − A·B‖
    const double residual = (a.transpose() * (g - a * b_hat)).norm();
    const double scale = std::max(1.0, (a.transpose() * g).norm());
    const double base = (g - a * b_hat).norm();
    bool optimal = true;
    for (int k = 0; k < 100; ++k) {
      const double eps = std::pow(10.0, -3.0 + 3.0 * rng.uniform());
      const Matrix b = b_hat + eps * sample_gaussian(rng, 8, 64);
      if ((g - a * b).norm() < base) optimal = false;
    }
    add(out, "projection", "pair_" + std::to_string(pair), residual / scale, 1e-10,
        residual <= 1e-10 * scale && optimal);
  }
}

void suite_frobenius(std::uint64_t seed, std::vector<VerifyCase>& out) {
  Rng rng(derive_seed(seed, "verify.frobenius"));
  const double mean = frobenius_expectation_oracle(rng, 64, 64, 8, 500);
  const double expected = std::sqrt(64.0 * 8.0);
  const double rel = std::abs(mean - expected) / expected;
  add(out, "frobenius", "mean_norm_vs_sqrt_nr", rel, 0.02, rel <= 0.02);

  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const Matrix p = column_space_projector(sample_gaussian(rng, 64, 8));
    worst = std::max(worst, std::abs(p.trace() - 8.0));
  }
  add(out, "frobenius", "projector_trace", worst, 1e-6, worst <= 1e-6);
}

TeacherTaskConfig ddp_task() {
  TeacherTaskConfig t;
  t.dims = {16, 12, 8};
  t.train_samples = 64 * 8;
  t.batch_size = 8;
  t.layer_decay = 0.5;
  return t;
}

void suite_ddp(std::uint64_t seed, std::vector<VerifyCase>& out) {
  Rng rng(derive_seed(seed, "verify.ddp"));
  const TeacherTask task = make_lowrank_teacher_task(rng, ddp_task());
  const std::size_t total = task.train.size();
  ProbeConfig single_cfg;
  single_cfg.max_steps = total;
  const ProbeResult single = run_probe(task.network, task.train, single_cfg);
  AllocConfig alloc;
  AdapterSpec spec;
  InitConfig init;
  init.seed = derive_seed(seed, "init");
  const RankPlan plan = plan_from_probe(task.network, single, alloc);
  const std::string adapters = serialize_adapters(gora_initialize(plan, single, spec, init).adapters);

  std::size_t host_peak_w1 = 0;
  for (std::size_t w : {1u, 2u, 4u}) {
    ShardedStream stream(task.train, w);
    DdpProbeConfig cfg;
    cfg.probe.max_steps = total / w;
    const DdpProbeResult d = ddp_probe(task.network, stream, WorkerTopology{w}, cfg);
    double diff = 0.0;
    bool same = d.result.layers == single.layers;
    for (std::size_t i = 0; same && i < single.grads.size(); ++i) {
      diff = std::max(diff, (d.result.grads[i] - single.grads[i]).cwiseAbs().maxCoeff());
      same = same && d.result.grads[i].cwiseEqual(single.grads[i]).all();
    }
    const std::string tag = "W" + std::to_string(w);
    add(out, "ddp", tag + "_probe_bit_equal", diff, 0.0, same);

    const DdpInitResult di = ddp_allocate_and_init(task.network, d.result, WorkerTopology{w}, alloc, spec, init);
    bool plans = true, adapters_equal = true;
    for (const auto& ws : di.workers) {
      plans = plans && ws.plan == plan;
      adapters_equal = adapters_equal && serialize_adapters(ws.adapters) == adapters;
    }
    add(out, "ddp", tag + "_plan_equal", plans ? 0.0 : 1.0, 0.0, plans);
    add(out, "ddp", tag + "_adapters_bit_equal", adapters_equal ? 0.0 : 1.0, 0.0, adapters_equal);
    if (w == 1) host_peak_w1 = d.host_peak_bytes;
    add(out, "ddp", tag + "_host_peak_bytes", static_cast<double>(d.host_peak_bytes),
        static_cast<double>(host_peak_w1), d.host_peak_bytes == host_peak_w1);
  }
}

void suite_allocation(std::uint64_t seed, std::vector<VerifyCase>& out) {
  AllocConfig cfg = AllocConfig::with_defaults(8);
  const std::vector<LayerShape> two{{0, 8, 8}, {1, 8, 8}};
  const std::vector<double> adv{0.75, 0.25};
  AllocConfig uncapped = cfg;
  uncapped.cap_at_layer_dim = false;
  const RankPlan hand = allocate_ranks(uncapped, two, adv);
  const bool hand_ok = hand.records[0].rank == 12 && hand.records[1].rank == 4;
  add(out, "allocation", "hand_case_12_4", static_cast<double>(hand.records[0].rank), 12.0, hand_ok);
  const RankPlan capped = allocate_ranks(cfg, two, adv);
  const bool capped_ok = capped.records[0].rank == 8 && capped.records[1].rank == 4;
  add(out, "allocation", "hand_case_capped_8_4", static_cast<double>(capped.records[0].rank), 8.0, capped_ok);

  Rng rng(derive_seed(seed, "verify.allocation"));
  bool uniform_ok = true;
  for (int t = 0; t < 50; ++t) {
    const std::size_t layers = 1 + static_cast<std::size_t>(rng.uniform() * 6);
    const std::size_t m = 16 + static_cast<std::size_t>(rng.uniform() * 48);
    const std::size_t n = 16 + static_cast<std::size_t>(rng.uniform() * 48);
    std::vector<LayerShape> shapes;
    for (std::size_t i = 0; i < layers; ++i) shapes.push_back({i, m, n});
    const std::vector<double> a(layers, 1.0 / static_cast<double>(layers));
    for (const auto& r : allocate_ranks(cfg, shapes, a).records) uniform_ok = uniform_ok && r.rank == cfg.r_ref;
  }
  add(out, "allocation", "homogeneous_uniform", uniform_ok ? 0.0 : 1.0, 0.0, uniform_ok);
}

void suite_compressor(std::uint64_t seed, std::vector<VerifyCase>& out) {
  Rng rng(derive_seed(seed, "verify.compressor"));
  const TeacherTask task = make_lowrank_teacher_task(rng, 32, 32, 4, 50 * 16, 0.0);
  const std::vector<Batch>& batches = task.train;

  Rng arng(derive_seed(seed, "verify.compressor.A"));
  AdapterSet set;
  set.emplace(0, AdapterState{init_A(arng, 32, 8), Matrix::Zero(8, 32), 16.0, ScalingMode::rslora, true});
  OptimConfig oc;
  oc.algorithm = OptimizerKind::sgd;
  oc.lr = 1e-3;
  oc.b_lr_ratio = 1.0;
  oc.warmup_ratio = 0.0;
  oc.decay = LrDecay::none;
  Optimizer opt(oc);
  const AdapterState& ad = set.at(0);
  const double s = ad.scale();
  Matrix expected = Matrix::Zero(32, 32);
  const Matrix aat = ad.a * ad.a.transpose();
  for (std::size_t t = 0; t < 50; ++t) {
    const LossAndGrads lg = forward_backward(task.network, batches[t % batches.size()], low_rank_views(task.network, set));
    expected -= oc.lr * s * s * aat * lg.weight_grads[0];
    opt.step(set, AdapterGradMap{{0, adapter_grads(lg.weight_grads[0], set.at(0))}}, oc.lr);
  }
  const double err = (delta(set.at(0)) - expected).norm();
  add(out, "compressor", "frozen_a_sgd_T50", err, 1e-10, err <= 1e-10);
}

void suite_init_step(std::uint64_t seed, std::vector<VerifyCase>& out) {
  Rng rng(derive_seed(seed, "verify.init_step"));
  const double gamma = 0.05;
  double worst = 0.0, worst_matched = 0.0;
  for (int t = 0; t < 20; ++t) {
    const Matrix g = sample_gaussian(rng, 64, 48);
    const Matrix a = init_A(rng, 64, 8);
    const Matrix b0 = compress_init_B(a, g);
    const double s = scaling_factor(16.0, 8, ScalingMode::rslora);
    const Matrix p = column_space_projector(a);
    const Matrix exact = s * a * (xi_for(XiRule::exact_step, gamma, 16.0, 64, 8, ScalingMode::rslora) * b0);
    worst = std::max(worst, (exact + gamma * p * g).norm());
    const Matrix matched = s * a * (xi(gamma, 16.0, 64, 8, ScalingMode::rslora) * b0);
    worst_matched = std::max(worst_matched, (matched + gamma * std::sqrt(64.0 / 8.0) * p * g).norm());
  }
  add(out, "init_step", "exact_step_delta_eq_minus_gamma_PG", worst, 1e-10, worst <= 1e-10);
  add(out, "init_step", "magnitude_matched_delta_eq_minus_gamma_sqrt_m_over_r_PG", worst_matched, 1e-10,
      worst_matched <= 1e-10);
}

void suite_reconstruction(std::uint64_t seed, std::vector<VerifyCase>& out) {
  double total = 0.0;
  for (std::uint64_t k = 0; k < 200; ++k) {
    Rng rng(derive_seed(seed, "verify.reconstruction", k));
    const Matrix a = init_A(rng, 64, 8);
    const Matrix g = sample_gaussian(rng, 64, 64);
    const Matrix b = xi_for(XiRule::exact_step, 0.05, 16.0, 64, 8, ScalingMode::rslora) * compress_init_B(a, g);
    total += reconstruction_error(a, b, g, 0.05, scaling_factor(16.0, 8, ScalingMode::rslora)).relative;
  }
  const double mean = total / 200.0;
  const double expected = std::sqrt(1.0 - 8.0 / 64.0);
  add(out, "reconstruction", "random_gaussian_baseline", std::abs(mean - expected), 0.02,
      std::abs(mean - expected) <= 0.02);

  // Rank-r gradient inside col(A₀) plus 5% isotropic noise.
  Rng rng(derive_seed(seed, "verify.reconstruction.lowrank"));
  const Matrix a = init_A(rng, 64, 8);
  Matrix g = a * sample_gaussian(rng, 8, 64);
  Matrix noise = sample_gaussian(rng, 64, 64);
  g += 0.05 * g.norm() / noise.norm() * noise;
  const double rel = projection_residual(a, g);
  add(out, "reconstruction", "low_rank_gradient", rel, 0.2, rel <= 0.2);
}

double fd_relative(const std::function<double()>& loss, Matrix& param, const Matrix& analytic, double eps) {
  Matrix fd(param.rows(), param.cols());
  for (Eigen::Index i = 0; i < param.rows(); ++i) {
    for (Eigen::Index j = 0; j < param.cols(); ++j) {
      const double keep = param(i, j);
      param(i, j) = keep + eps;
      const double up = loss();
      param(i, j) = keep - eps;
      const double down = loss();
      param(i, j) = keep;
      fd(i, j) = (up - down) / (2 * eps);
    }
  }
  return (fd - analytic).norm() / std::max(analytic.norm(), 1e-12);
}

void suite_gradients(std::uint64_t seed, std::vector<VerifyCase>& out) {
  double worst = 0.0;
  for (std::uint64_t k = 0; k < 5; ++k) {
    Rng rng(derive_seed(seed, "verify.gradients", k));
    const std::vector<LayerSpec> specs{{5, 6, Activation::tanh, true}, {6, 3, Activation::linear, true}};
    const LossKind loss_kind = k % 2 ? LossKind::softmax_cross_entropy : LossKind::mse;
    Network net = make_network(specs, loss_kind, rng, true);
    Batch batch{sample_gaussian(rng, 7, 5), Matrix::Zero(7, 3)};
    for (Eigen::Index i = 0; i < 7; ++i) {
      if (loss_kind == LossKind::mse) batch.targets.row(i) = sample_gaussian(rng, 1, 3);
      else batch.targets(i, static_cast<Eigen::Index>(rng.uniform() * 3) % 3) = 1.0;
    }
    AdapterSet set;
    set.emplace(0, AdapterState{sample_gaussian(rng, 5, 2), sample_gaussian(rng, 2, 6), 4.0, ScalingMode::rslora, false});
    const LossAndGrads lg = forward_backward(net, batch, low_rank_views(net, set));
    const AdapterGrads ag = adapter_grads(lg.weight_grads[0], set.at(0));
    auto loss = [&] { return evaluate_loss(net, batch, low_rank_views(net, set)); };
    worst = std::max(worst, fd_relative(loss, set.at(0).a, ag.a, 1e-5));
    worst = std::max(worst, fd_relative(loss, set.at(0).b, ag.b, 1e-5));

    std::vector<Layer> layers = net.layers();
    Matrix w1 = layers[1].weight;
    auto base_loss = [&] {
      std::vector<Layer> l = layers;
      l[1].weight = w1;
      return evaluate_loss(Network(l, loss_kind), batch, low_rank_views(net, set));
    };
    worst = std::max(worst, fd_relative(base_loss, w1, lg.weight_grads[1], 1e-5));
  }
  add(out, "gradients", "central_difference_relative", worst, 1e-6, worst <= 1e-6);
}

void suite_autotune(std::uint64_t seed, std::vector<VerifyCase>& out) {
  Rng rng(derive_seed(seed, "verify.autotune"));
  const TeacherTask task = make_lowrank_teacher_task(rng, 32, 32, 4, 256, 0.0);
  ProbeConfig pc;
  pc.max_steps = 4;
  const ProbeResult probe = run_probe(task.network, task.train, pc);
  const RankPlan plan = plan_from_probe(task.network, probe, AllocConfig{});
  InitConfig ic;
  ic.seed = derive_seed(seed, "init");
  const PreparedInit prepared = prepare_gora_init(plan, probe, AdapterSpec{}, ic);
  const AutotuneConfig grid_cfg;
  const AutotuneResult res = autotune_gamma(task.network, prepared, task.train.front(), ic.xi_rule, grid_cfg);

  const std::vector<double> grid = gamma_grid(grid_cfg);
  double best = 0.0, best_loss = std::numeric_limits<double>::infinity();
  for (double g : grid) {
    const AdapterSet ad = apply_gamma(prepared, g, ic.xi_rule);
    const double l = evaluate_loss(task.network, task.train.front(), low_rank_views(task.network, ad));
    if (std::isfinite(l) && l < best_loss) {
      best_loss = l;
      best = g;
    }
  }
  add(out, "autotune", "matches_brute_force", std::abs(res.gamma - best), 0.0, res.gamma == best);
  const bool bounds = grid.size() == 95 && grid.front() == grid_cfg.start && grid.back() == grid_cfg.floor &&
                      res.gamma >= grid_cfg.floor;
  add(out, "autotune", "grid_bounds", static_cast<double>(grid.size()), 0.0, bounds);
}

void suite_adaptive_n(std::uint64_t seed, std::vector<VerifyCase>& out) {
  Rng rng(derive_seed(seed, "verify.adaptive_n"));
  TeacherTaskConfig tc;
  tc.dims = {24, 16, 12};
  tc.train_samples = 64 * 16;
  tc.batch_size = 16;
  tc.layer_decay = 0.5;
  const TeacherTask task = make_lowrank_teacher_task(rng, tc);
  const std::vector<Batch> repeated(64, task.train.front());
  ProbeConfig pc;
  pc.adaptive = true;
  const ProbeResult r = run_probe(task.network, repeated, pc);
  add(out, "adaptive_n", "repeated_stream_stops_at_2", static_cast<double>(r.steps_used), 2.0, r.steps_used == 2);
  const ProbeResult s = run_probe(task.network, task.train, pc);
  add(out, "adaptive_n", "shuffled_stream_cap", static_cast<double>(s.steps_used), 64.0, s.steps_used <= 64);
}

const std::map<std::string, Suite>& registry() {
  static const std::map<std::string, Suite> suites = {
      {"projection", suite_projection},     {"frobenius", suite_frobenius},
      {"ddp", suite_ddp},                   {"allocation", suite_allocation},
      {"compressor", suite_compressor},     {"init_step", suite_init_step},
      {"reconstruction", suite_reconstruction}, {"gradients", suite_gradients},
      {"autotune", suite_autotune},         {"adaptive_n", suite_adaptive_n},
  };
  return suites;
}

}  // namespace

std::vector<std::string> verify_suites() {
  std::vector<std::string> names;
  for (const auto& [name, fn] : registry()) names.push_back(name);
  return names;
}

std::vector<VerifyCase> run_verify(const std::string& suite, std::uint64_t seed) {
  std::vector<VerifyCase> out;
  if (suite == "all") {
    for (const auto& [name, fn] : registry()) fn(seed, out);
    return out;
  }
  auto it = registry().find(suite);
  if (it == registry().end()) throw ConfigError("unknown verify suite '" + suite + "'");
  it->second(seed, out);
  return out;
}

std::string verify_csv(const std::vector<VerifyCase>& cases) {
  std::ostringstream o;
  o << "suite,case,measured,bound,pass\n";
  char buf[64];
  for (const auto& c : cases) {
    o << c.suite << "," << c.name << ",";
    std::snprintf(buf, sizeof buf, "%.6g,%.6g,", c.measured, c.bound);
    o << buf << (c.pass ? "true" : "false") << "\n";
  }
  return o.str();
}

}  // namespace gora
