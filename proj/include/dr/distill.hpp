#pragma once

#include <concepts>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dr/autodiff.hpp"
#include "dr/data.hpp"
#include "dr/models.hpp"
#include "dr/scenarios.hpp"

namespace dr {

enum class LossMode { sum_all_steps, last_step_only };
enum class LrMode { fixed, learned };

inline const char* loss_mode_name(LossMode m) {
  return m == LossMode::sum_all_steps ? "sum_all_steps" : "last_step_only";
}
inline const char* lr_mode_name(LrMode m) {
  return m == LrMode::fixed ? "fixed" : "learned";
}

/// Buffer-distillation hyperparameters. The method proper uses
/// (sum_all_steps, fixed); (last_step_only, learned) is the ablation arm.
struct DistillConfig {
  std::size_t inner_steps = 10;  // S
  std::size_t outer_steps = 40;  // R (0 accepted: no updates, for tests)
  double inner_lr = 0.1;         // eta
  double outer_lr = 0.1;         // alpha
  // outer step for eta under lr_mode == learned. A scalar learning rate
  // takes a far larger meta-gradient than any one pixel, so sharing alpha
  // kicks eta past the stable range and the unroll blows up.
  double eta_alpha = 0.001;
  std::size_t init_batch = 1;    // J
  std::size_t real_batch = 64;   // n
  LossMode loss_mode = LossMode::sum_all_steps;
  LrMode lr_mode = LrMode::fixed;
  std::uint64_t seed = 0;

  void validate() const {
    if (inner_steps < 1 || init_batch < 1 || real_batch < 1)
      throw ContractError("distill config: S, J, n must be >= 1");
    if (!(inner_lr > 0.0) || !(outer_lr > 0.0))
      throw ContractError("distill config: eta and alpha must be > 0");
    if (!(eta_alpha > 0.0))
      throw ContractError("distill config: eta_alpha must be > 0");
  }
};

inline bool is_distilled_replay_mode(const DistillConfig& cfg) {
  return cfg.loss_mode == LossMode::sum_all_steps &&
         cfg.lr_mode == LrMode::fixed;
}

/// The learned buffer for one experience: samples are optimized, labels are
/// fixed one-hot and never change.
template <typename S>
struct DistilledMemory {
  Tensor<S> samples;  // [M, example_numel]
  Tensor<S> labels;   // [M, num_classes]
  std::vector<int> label_ids;
  int source_experience = 0;
  double final_eta = 0.0;
  std::vector<double> meta_loss_history;

  std::size_t size() const { return label_ids.size(); }
};

/// per_class real examples of each class present in the experience,
/// seed-deterministic; the starting point x~ of buffer distillation and the
/// whole buffer of simple replay.
template <typename S>
DistilledMemory<S> init_memory(const Experience& exp, std::size_t per_class,
                               std::uint64_t seed) {
  if (per_class < 1) throw ContractError("init_memory: per_class >= 1");
  std::vector<std::size_t> chosen;
  for (int cls : exp.classes_present) {
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < exp.train.size(); ++i)
      if (exp.train.labels[i] == cls) pool.push_back(i);
    if (pool.size() < per_class)
      throw ContractError("init_memory: class " + std::to_string(cls) +
                          " has " + std::to_string(pool.size()) +
                          " examples, need " + std::to_string(per_class));
    Rng rng(derive_seed(seed, 0x1217u, static_cast<std::uint64_t>(cls),
                        static_cast<std::uint64_t>(exp.index)));
    for (std::size_t k : rng.sample_without_replacement(pool.size(), per_class))
      chosen.push_back(pool[k]);
  }
  DistilledMemory<S> mem;
  mem.samples = gather_images<S>(exp.train, chosen);
  mem.label_ids.reserve(chosen.size());
  for (std::size_t i : chosen) mem.label_ids.push_back(exp.train.labels[i]);
  mem.labels = one_hot<S>(mem.label_ids, exp.train.num_classes);
  mem.source_experience = exp.index;
  return mem;
}

/// S SGD steps on the buffer, recorded differentiably:
/// theta_s = theta_{s-1} - eta * dloss(x~, theta_{s-1})/dtheta.
/// `loss_fn(g, theta, x, y)` returns the scalar training loss; returns the
/// parameter Vars after each step (theta_1..theta_S).
template <typename S, typename LossFn>
  requires std::invocable<LossFn&, Graph<S>&, std::span<const Var>, Var, Var>
std::vector<std::vector<Var>> inner_unroll(Graph<S>& g, LossFn&& loss_fn,
                                           Var samples, Var labels,
                                           const std::vector<Var>& theta0,
                                           std::size_t steps,
                                           std::optional<Var> eta_var,
                                           double eta) {
  std::vector<std::vector<Var>> trajectory;
  trajectory.reserve(steps);
  std::vector<Var> theta = theta0;
  for (std::size_t s = 1; s <= steps; ++s) {
    try {
      Var l = loss_fn(g, std::span<const Var>(theta), samples, labels);
      std::vector<Var> gs = grad_vars(g, l, std::span<const Var>(theta));
      std::vector<Var> next;
      next.reserve(theta.size());
      for (std::size_t i = 0; i < theta.size(); ++i)
        next.push_back(sub(g, theta[i],
                           eta_var ? scale_var(g, gs[i], *eta_var)
                                   : scale(g, gs[i], eta)));
      theta = std::move(next);
    } catch (const NumericError& e) {
      throw NumericError("inner step " + std::to_string(s) + ": " + e.what());
    }
    trajectory.push_back(theta);
  }
  return trajectory;
}

template <typename S>
std::vector<std::vector<Var>> inner_unroll(Graph<S>& g, const ModelSpec& model,
                                           Var samples, Var labels,
                                           const std::vector<Var>& theta0,
                                           std::size_t steps,
                                           std::optional<Var> eta_var,
                                           double eta) {
  return inner_unroll(
      g,
      [&model](Graph<S>& gg, std::span<const Var> theta, Var x, Var y) {
        return loss(model, gg, theta, x, y);
      },
      samples, labels, theta0, steps, eta_var, eta);
}

template <typename S>
struct MetaStepResult {
  Tensor<S> grad_samples;
  double grad_eta = 0.0;
  double meta_loss = 0.0;
};

/// One outer-step gradient: unrolls S steps from each sampled init, sums
/// the real-data loss over the selected steps and initializations, and
/// differentiates that scalar wrt the buffer samples (and eta if learned).
template <typename S>
MetaStepResult<S> meta_step(const ModelSpec& model,
                            const DistilledMemory<S>& mem,
                            const Tensor<S>& real_x, const Tensor<S>& real_y,
                            const std::vector<Params<S>>& inits, double eta,
                            const DistillConfig& cfg) {
  Graph<S> g;
  Var xt = g.leaf(mem.samples, true);
  Var yt = g.constant(mem.labels);
  Var xr = g.constant(real_x);
  Var yr = g.constant(real_y);
  std::optional<Var> eta_var;
  if (cfg.lr_mode == LrMode::learned)
    eta_var = g.leaf(Tensor<S>::scalar(static_cast<S>(eta)), true);

  std::optional<Var> total;
  for (const Params<S>& theta0 : inits) {
    std::vector<Var> tv = param_leaves(g, theta0, true);
    auto traj =
        inner_unroll(g, model, xt, yt, tv, cfg.inner_steps, eta_var, eta);
    const std::size_t first =
        cfg.loss_mode == LossMode::sum_all_steps ? 0 : traj.size() - 1;
    for (std::size_t s = first; s < traj.size(); ++s) {
      Var term = loss(model, g, traj[s], xr, yr);
      total = total ? add(g, *total, term) : term;
    }
  }

  MetaStepResult<S> res;
  res.meta_loss = static_cast<double>(g.value(*total).item());
  std::vector<Var> wrt{xt};
  if (eta_var) wrt.push_back(*eta_var);
  std::vector<Tensor<S>> gs = grad(g, *total, std::span<const Var>(wrt));
  res.grad_samples = std::move(gs[0]);
  if (eta_var) res.grad_eta = static_cast<double>(gs[1].item());
  return res;
}

/// Buffer distillation: R outer steps, each sampling a real minibatch and J
/// fresh initializations, stepping x~ by alpha against the meta-gradient.
/// Samples are not clamped during optimization. Deterministic given seeds.
/// `mem` is the starting buffer (normally an init_memory draw, so simple
/// replay and distilled replay can share the same exemplars).
template <typename S>
DistilledMemory<S> distill(const Experience& exp, const ModelSpec& model,
                           const InitDistribution& dist,
                           const DistillConfig& cfg, DistilledMemory<S> mem) {
  cfg.validate();
  double eta = cfg.inner_lr;
  mem.meta_loss_history.reserve(cfg.outer_steps);

  for (std::size_t r = 1; r <= cfg.outer_steps; ++r) {
    Rng rb(derive_seed(cfg.seed, 0x2ea1u, r));
    const std::size_t n = std::min(cfg.real_batch, exp.train.size());
    std::vector<std::size_t> ridx =
        rb.sample_without_replacement(exp.train.size(), n);
    Tensor<S> xr = gather_images<S>(exp.train, ridx);
    std::vector<int> rlabels;
    rlabels.reserve(n);
    for (std::size_t i : ridx) rlabels.push_back(exp.train.labels[i]);
    Tensor<S> yr = one_hot<S>(rlabels, exp.train.num_classes);

    std::vector<Params<S>> inits;
    inits.reserve(cfg.init_batch);
    for (std::size_t j = 0; j < cfg.init_batch; ++j)
      inits.push_back(
          init_params<S>(model, dist, derive_seed(cfg.seed, 0x901u, r, j)));

    try {
      MetaStepResult<S> step = meta_step(model, mem, xr, yr, inits, eta, cfg);
      for (std::size_t i = 0; i < mem.samples.size(); ++i)
        mem.samples[i] -= static_cast<S>(cfg.outer_lr) * step.grad_samples[i];
      if (cfg.lr_mode == LrMode::learned)
        eta = std::max(1e-6, eta - cfg.eta_alpha * step.grad_eta);
      mem.meta_loss_history.push_back(step.meta_loss);
      if (!mem.samples.all_finite())
        throw NumericError("buffer samples became non-finite");
    } catch (const NumericError& e) {
      std::string hist;
      for (double v : mem.meta_loss_history)
        hist += (hist.empty() ? "" : ", ") + std::to_string(v);
      throw NumericError("distill diverged at outer step " +
                         std::to_string(r) + ": " + e.what() +
                         "; meta-loss history: [" + hist + "]");
    }
  }
  mem.final_eta = eta;
  return mem;
}

template <typename S>
DistilledMemory<S> distill(const Experience& exp, const ModelSpec& model,
                           const InitDistribution& dist,
                           const DistillConfig& cfg, std::size_t per_class) {
  return distill(exp, model, dist, cfg,
                 init_memory<S>(exp, per_class, cfg.seed));
}

}  // namespace dr
