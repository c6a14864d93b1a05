// Acceptance gate: one PASS/FAIL line per criterion on stdout, nonzero exit
// when anything fails. Run with criterion numbers as arguments to execute a
// subset (e.g. "acceptance 1 9"). Progress chatter goes to stderr.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dr/distill.hpp"
#include "dr/harness.hpp"
#include "dr/strategies.hpp"

#ifndef DR_SOURCE_DIR
#define DR_SOURCE_DIR "."
#endif

using namespace dr;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool ok = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

double rel_diff(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
}

std::string preset_path(const std::string& name) {
  return std::string(DR_SOURCE_DIR) + "/presets/" + name + ".ini";
}

RunConfig load_preset(const std::string& name) {
  return parse_config_file(preset_path(name));
}

LogFn progress() {
  return [](const std::string& line) { std::cerr << "  . " << line << "\n"; };
}

Experience blob_experience(int num_classes, std::size_t per_class,
                           std::size_t dim, double spread,
                           std::uint64_t seed) {
  Experience e;
  e.index = 1;
  e.train = make_blobs(num_classes, per_class, dim, spread, seed);
  e.test = make_blobs(num_classes, per_class, dim, spread, seed + 1);
  for (int c = 0; c < num_classes; ++c) e.classes_present.push_back(c);
  return e;
}

std::size_t horizon(const RunArtifacts& art) {
  std::size_t T = 0;
  for (const auto& r : art.rows)
    T = std::max(T, r.trained_through_experience);
  return T;
}

/// Final average accuracy A_T for one (strategy, seed).
double final_A(const RunArtifacts& art, Strategy s, std::uint64_t seed) {
  const std::size_t T = horizon(art);
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : art.rows)
    if (r.strategy == s && r.seed == seed &&
        r.trained_through_experience == T) {
      sum += r.accuracy;
      ++n;
    }
  if (n == 0) throw ContractError("no rows for requested strategy/seed");
  return sum / static_cast<double>(n);
}

double mean_final_A(const RunArtifacts& art, Strategy s,
                    const std::vector<std::uint64_t>& seeds) {
  double sum = 0.0;
  for (auto seed : seeds) sum += final_A(art, s, seed);
  return sum / static_cast<double>(seeds.size());
}

// --------------------------------------------------------------------------

Outcome c1_meta_gradient_fd() {
  const auto t0 = std::chrono::steady_clock::now();
  ModelSpec model = ModelSpec::make_tiny_mlp(20, 4, 16);
  Experience e = blob_experience(4, 30, 20, 0.5, 131);

  DistillConfig cfg;
  cfg.init_batch = 1;  // J
  cfg.seed = 9;
  DistilledMemory<double> mem = init_memory<double>(e, 1, cfg.seed);  // M=4

  std::vector<std::size_t> ridx(32);
  std::iota(ridx.begin(), ridx.end(), std::size_t{0});
  Tensor<double> xr = gather_images<double>(e.train, ridx);
  std::vector<int> rl;
  for (std::size_t i : ridx) rl.push_back(e.train.labels[i]);
  Tensor<double> yr = one_hot<double>(rl, 4);
  std::vector<Params<double>> inits{init_params<double>(model, {}, 100)};
  const double eta = 0.2;
  const double eps = 1e-5;

  double max_err = 0.0;
  std::size_t coords = 0;
  for (std::size_t S : {std::size_t{1}, std::size_t{3}, std::size_t{5}}) {
    cfg.inner_steps = S;
    MetaStepResult<double> res = meta_step(model, mem, xr, yr, inits, eta, cfg);
    for (std::size_t k = 0; k < mem.samples.size(); ++k) {
      DistilledMemory<double> plus = mem, minus = mem;
      plus.samples[k] += eps;
      minus.samples[k] -= eps;
      const double fd =
          (meta_step(model, plus, xr, yr, inits, eta, cfg).meta_loss -
           meta_step(model, minus, xr, yr, inits, eta, cfg).meta_loss) /
          (2 * eps);
      max_err = std::max(max_err, rel_diff(res.grad_samples[k], fd));
      ++coords;
    }
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  Outcome out;
  out.ok = max_err <= 1e-5 && coords >= 100 && secs < 120.0;
  out.detail = "max_rel_err=" + fmt(max_err) + " coords=" +
               std::to_string(coords) + " time=" + fmt(secs) + "s";
  return out;
}

Outcome c2_quadratic_closed_form() {
  // inner loss 0.5(theta-x)^2, eta=0.4, theta0=1, x=-1: theta1 = 0.2,
  // meta loss 0.5(theta1-2)^2, d/dx = (-1.8)(0.4) = -0.72 exactly.
  Graph<double> g;
  Var x = g.leaf(Tensor<double>::scalar(-1.0), true);
  Var theta0 = g.leaf(Tensor<double>::scalar(1.0), true);
  auto inner = [](Graph<double>& gg, std::span<const Var> th, Var xt, Var) {
    Var d = sub(gg, th[0], xt);
    return scale(gg, mul(gg, d, d), 0.5);
  };
  auto traj = inner_unroll(g, inner, x, x, {theta0}, 1, {}, 0.4);
  Var d = sub(g, traj[0][0], g.constant(Tensor<double>::scalar(2.0)));
  Var meta = scale(g, mul(g, d, d), 0.5);
  const double gx = grad(g, meta, {x})[0].item();
  const double err = std::abs(gx + 0.72);
  return {err <= 1e-12, "grad=" + fmt(gx) + " abs_err=" + fmt(err)};
}

Outcome c3_single_step_mode_identity() {
  Experience e = blob_experience(4, 64, 2, 0.33, 71);
  ModelSpec model = ModelSpec::make_tiny_mlp(2, 4, 16);
  DistillConfig a;
  a.inner_steps = 1;
  a.outer_steps = 6;
  a.inner_lr = 0.5;
  a.outer_lr = 0.05;
  a.init_batch = 2;
  a.real_batch = 32;
  a.seed = 7;
  a.loss_mode = LossMode::sum_all_steps;
  DistillConfig b = a;
  b.loss_mode = LossMode::last_step_only;

  DistilledMemory<double> ma = distill<double>(e, model, {}, a, 1);
  DistilledMemory<double> mb = distill<double>(e, model, {}, b, 1);
  bool same_samples = ma.samples == mb.samples;
  bool same_history = ma.meta_loss_history == mb.meta_loss_history;
  return {same_samples && same_history,
          std::string("samples ") + (same_samples ? "identical" : "differ") +
              ", loss history " + (same_history ? "identical" : "differs")};
}

Outcome c4_toy_blobs() {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig cfg = load_preset("toy-blobs");
  cfg.out_dir = "acceptance_out/c4";
  const std::string text = render_config(cfg);
  RunArtifacts art = exec_run(cfg, text, progress());

  double naive = mean_final_A(art, Strategy::naive, cfg.seeds);
  double dr = mean_final_A(art, Strategy::distilled_replay, cfg.seeds);
  int wins = 0;
  for (auto seed : cfg.seeds)
    if (final_A(art, Strategy::distilled_replay, seed) >=
        final_A(art, Strategy::simple_replay, seed))
      ++wins;
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  Outcome out;
  out.ok = naive <= 0.60 && dr >= 0.85 &&
           wins >= static_cast<int>(cfg.seeds.size()) - 1 && secs < 600.0;
  out.detail = "naive=" + fmt(naive) + " dr=" + fmt(dr) + " dr_wins=" +
               std::to_string(wins) + "/" + std::to_string(cfg.seeds.size()) +
               " time=" + fmt(secs) + "s";
  return out;
}

Outcome c5_split_mnist_ordering() {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig cfg = load_preset("split-mnist-desk");
  cfg.out_dir = "acceptance_out/c5";
  const std::string text = render_config(cfg);
  RunArtifacts art = exec_run(cfg, text, progress());

  double naive = mean_final_A(art, Strategy::naive, cfg.seeds);
  double sr = mean_final_A(art, Strategy::simple_replay, cfg.seeds);
  double dr = mean_final_A(art, Strategy::distilled_replay, cfg.seeds);
  double cum = mean_final_A(art, Strategy::cumulative, cfg.seeds);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  Outcome out;
  out.ok = cum >= dr && dr > sr && sr > naive && (dr - sr) >= 0.05 &&
           (dr - naive) >= 0.30 && secs <= 3600.0;
  out.detail = "cum=" + fmt(cum) + " dr=" + fmt(dr) + " sr=" + fmt(sr) +
               " naive=" + fmt(naive) + " time=" + fmt(secs) + "s";
  return out;
}

Outcome c6_ablation_direction() {
  RunConfig cfg = load_preset("split-mnist-desk");
  cfg.out_dir = "acceptance_out/c6";
  const std::string text = render_config(cfg);
  AblationArtifacts art = exec_ablation(cfg, text, progress());

  double a = mean_final_A(art.sum_fixed, Strategy::distilled_replay,
                          cfg.seeds);
  double b = mean_final_A(art.last_learned, Strategy::distilled_replay,
                          cfg.seeds);
  return {a >= b, "sum_fixed=" + fmt(a) + " last_learned=" + fmt(b)};
}

Outcome c7_timing_linearity() {
  RunConfig cfg = load_preset("split-mnist-desk");
  cfg.timing.s_grid = {2, 4, 8, 16};
  cfg.timing.r_grid = {1};  // only the S sweep feeds the fit
  auto rows = run_timing_grid(cfg, progress());

  std::vector<double> xs, ys;
  for (const auto& r : rows)
    if (r.axis == "S") {
      xs.push_back(static_cast<double>(r.value));
      ys.push_back(r.mean_seconds);
    }
  const std::size_t n = xs.size();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  const double b = sxy / sxx;
  double ss_res = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double pred = my + b * (xs[i] - mx);
    ss_res += (ys[i] - pred) * (ys[i] - pred);
  }
  const double r2 = 1.0 - ss_res / syy;

  std::string times;
  for (std::size_t i = 0; i < n; ++i)
    times += (i ? " " : "") + std::string("S") +
             std::to_string(static_cast<int>(xs[i])) + "=" + fmt(ys[i]) + "s";
  return {r2 >= 0.95, "r2=" + fmt(r2) + " " + times};
}

Outcome c8_deterministic_csv() {
  RunConfig cfg = load_preset("toy-blobs");
  cfg.out_dir = "acceptance_out/c8";
  const std::string text = render_config(cfg);

  auto csv_of = [&]() {
    RunArtifacts art = exec_run(cfg, text, {});
    std::ifstream in(fs::path(art.dir) / "results.csv", std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in),
                       std::istreambuf_iterator<char>());
  };
  const std::string first = csv_of();
  const std::string second = csv_of();
  const bool same = !first.empty() && first == second;
  return {same, same ? "results.csv byte-identical across repeated runs"
                     : "repeated runs differ"};
}

Outcome c9_structural_invariants() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::string> bad;

  Dataset train = make_blobs(8, 24, 4, 0.3, 5);
  Dataset test = make_blobs(8, 8, 4, 0.3, 6);
  DatasetTriple triple{train, {}, test};

  // C-IL class sets: pairwise disjoint, union = all classes
  Stream split = split_stream(triple, 2, ascending_class_order(8));
  std::set<int> seen;
  for (const auto& exp : split.experiences) {
    for (int c : exp.classes_present)
      if (!seen.insert(c).second)
        bad.push_back("class " + std::to_string(c) + " in two experiences");
  }
  if (seen.size() != 8) bad.push_back("split stream lost classes");

  // D-IL class sets: every experience carries every class
  Stream perm = permuted_stream(triple, 3, 99);
  for (const auto& exp : perm.experiences)
    if (exp.classes_present.size() != 8)
      bad.push_back("permuted experience missing classes");

  // permutation bijectivity, identity first
  if (!perm.permutations.empty() && !perm.permutations[0].empty())
    bad.push_back("first experience is not the identity permutation");
  for (std::size_t t = 1; t < perm.permutations.size(); ++t) {
    auto p = perm.permutations[t];
    std::sort(p.begin(), p.end());
    for (std::size_t i = 0; i < p.size(); ++i)
      if (p[i] != i) {
        bad.push_back("permutation " + std::to_string(t) +
                      " is not a bijection");
        break;
      }
  }

  // buffer closed form and T-1 distillations on a T=4 split stream
  ModelSpec model = ModelSpec::make_tiny_mlp(4, 8, 8);
  TrainConfig tc;
  tc.strategy = Strategy::distilled_replay;
  tc.lr = 0.3;
  tc.batch_size = 16;
  tc.per_class = 2;
  tc.seed = 3;
  tc.distill.inner_steps = 2;
  tc.distill.outer_steps = 2;
  tc.distill.inner_lr = 0.3;
  tc.distill.outer_lr = 0.05;
  tc.distill.real_batch = 16;
  RunOutcome<double> dr_out = run_stream<double>(split, model, tc, {});
  const std::size_t T = split.T();
  if (dr_out.distill_count != T - 1)
    bad.push_back("expected " + std::to_string(T - 1) + " distillations, got " +
                  std::to_string(dr_out.distill_count));
  if (dr_out.buffer.memories.size() != T - 1)
    bad.push_back("buffer holds " +
                  std::to_string(dr_out.buffer.memories.size()) +
                  " memories, want T-1");
  // each stored memory: classes_per_exp * per_class samples
  for (std::size_t m = 0; m < dr_out.buffer.memories.size(); ++m) {
    const auto& mem = dr_out.buffer.memories[m];
    if (mem.size() != 2 * tc.per_class)
      bad.push_back("memory " + std::to_string(m) + " holds " +
                    std::to_string(mem.size()) + " samples");
    if (mem.source_experience != static_cast<int>(m + 1))
      bad.push_back("memory source experience mislabeled");
  }
  if (dr_out.buffer.total_samples() != (T - 1) * 2 * tc.per_class)
    bad.push_back("total buffer size violates closed form");

  tc.strategy = Strategy::simple_replay;
  RunOutcome<double> sr_out = run_stream<double>(split, model, tc, {});
  if (sr_out.distill_count != 0)
    bad.push_back("simple replay ran a distillation");
  if (sr_out.buffer.total_samples() != (T - 1) * 2 * tc.per_class)
    bad.push_back("simple replay buffer size violates closed form");

  // accuracy matrix occupancy: lower triangle filled, upper rejected
  for (std::size_t t = 1; t <= T; ++t) {
    for (std::size_t i = 1; i <= t; ++i) dr_out.matrix.at(t, i);
    if (t < T) {
      try {
        dr_out.matrix.at(t, t + 1);
        bad.push_back("upper-triangle read did not throw");
      } catch (const ContractError&) {
      }
    }
  }

  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  Outcome out;
  out.ok = bad.empty() && secs < 60.0;
  out.detail = bad.empty() ? "all invariants hold, time=" + fmt(secs) + "s"
                           : bad.front() + " (+" +
                                 std::to_string(bad.size() - 1) + " more)";
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int num;
    const char* name;
    Outcome (*fn)();
  };
  const std::vector<Criterion> criteria = {
      {1, "meta-gradient-matches-finite-differences", c1_meta_gradient_fd},
      {2, "quadratic-meta-gradient-closed-form", c2_quadratic_closed_form},
      {3, "single-step-loss-modes-identical", c3_single_step_mode_identity},
      {4, "toy-blobs-forgetting-and-recovery", c4_toy_blobs},
      {5, "split-mnist-strategy-ordering", c5_split_mnist_ordering},
      {6, "ablation-direction", c6_ablation_direction},
      {7, "timing-linear-in-inner-steps", c7_timing_linearity},
      {8, "deterministic-csv-output", c8_deterministic_csv},
      {9, "structural-invariants", c9_structural_invariants},
  };

  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.num)) continue;
    Outcome out;
    try {
      out = c.fn();
    } catch (const std::exception& e) {
      out.ok = false;
      out.detail = std::string("exception: ") + e.what();
    }
    if (!out.ok) ++failures;
    std::cout << (out.ok ? "PASS " : "FAIL ") << c.num << " " << c.name
              << "  [" << out.detail << "]" << std::endl;
  }
  if (failures) std::cout << failures << " criteria failed" << std::endl;
  return failures == 0 ? 0 : 1;
}
