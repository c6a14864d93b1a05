#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dr/distill.hpp"
#include "dr/metrics.hpp"
#include "dr/models.hpp"
#include "dr/scenarios.hpp"

namespace dr {

enum class Strategy { naive, simple_replay, distilled_replay, cumulative };

inline const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::naive: return "naive";
    case Strategy::simple_replay: return "simple_replay";
    case Strategy::distilled_replay: return "distilled_replay";
    case Strategy::cumulative: return "cumulative";
  }
  return "?";
}

inline Strategy strategy_from_name(const std::string& s) {
  if (s == "naive") return Strategy::naive;
  if (s == "simple_replay") return Strategy::simple_replay;
  if (s == "distilled_replay") return Strategy::distilled_replay;
  if (s == "cumulative") return Strategy::cumulative;
  throw ContractError("unknown strategy: " + s);
}

/// Append-only store of per-experience memories. The usual operating point
/// keeps one pattern per class and never evicts.
template <typename S>
struct ReplayBuffer {
  std::vector<DistilledMemory<S>> memories;

  std::size_t total_samples() const {
    std::size_t n = 0;
    for (const auto& m : memories) n += m.size();
    return n;
  }

  /// All stored samples and one-hot labels stacked into two tensors;
  /// both empty (0 rows) when no memory is stored.
  std::pair<Tensor<S>, Tensor<S>> materialize() const {
    if (memories.empty()) return {Tensor<S>({0, 0}), Tensor<S>({0, 0})};
    const std::size_t d = memories.front().samples.dim(1);
    const std::size_t c = memories.front().labels.dim(1);
    Tensor<S> xs({total_samples(), d});
    Tensor<S> ys({total_samples(), c});
    std::size_t row = 0;
    for (const auto& m : memories) {
      std::copy_n(m.samples.data(), m.samples.size(),
                  xs.data() + row * d);
      std::copy_n(m.labels.data(), m.labels.size(), ys.data() + row * c);
      row += m.size();
    }
    return {std::move(xs), std::move(ys)};
  }
};

struct TrainConfig {
  Strategy strategy = Strategy::naive;
  double lr = 0.1;  // eta, shared with distillation by requirement
  std::size_t batch_size = 64;
  std::size_t per_class = 1;
  std::uint64_t seed = 0;
  DistillConfig distill;
};

namespace detail {

template <typename S>
Tensor<S> vstack(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.dim(0) == 0) return b;
  if (b.dim(0) == 0) return a;
  if (a.dim(1) != b.dim(1))
    throw ShapeError("vstack: " + shape_str(a.shape()) + " / " +
                     shape_str(b.shape()));
  Tensor<S> out({a.dim(0) + b.dim(0), a.dim(1)});
  std::copy_n(a.data(), a.size(), out.data());
  std::copy_n(b.data(), b.size(), out.data() + a.size());
  return out;
}

}  // namespace detail

/// One single-pass epoch over the experience: every minibatch mb_q is the
/// concatenation of the ENTIRE buffer with mb_q, followed by one plain SGD
/// step on the mean loss over that combined batch.
template <typename S>
Params<S> train_experience(const ModelSpec& model, Params<S> params,
                           const Experience& exp,
                           const ReplayBuffer<S>& buffer,
                           const TrainConfig& cfg) {
  auto [bx, by] = buffer.materialize();
  const auto batches = iterate_single_pass(exp, cfg.batch_size, cfg.seed);
  std::size_t q = 0;
  for (const auto& idx : batches) {
    ++q;
    Tensor<S> x = detail::vstack(bx, gather_images<S>(exp.train, idx));
    std::vector<int> lbl;
    lbl.reserve(idx.size());
    for (std::size_t i : idx) lbl.push_back(exp.train.labels[i]);
    Tensor<S> y =
        detail::vstack(by, one_hot<S>(lbl, exp.train.num_classes));
    try {
      Graph<S> g;
      std::vector<Var> pv = param_leaves(g, params, true);
      Var l = loss(model, g, pv, g.constant(x), g.constant(y));
      std::vector<Tensor<S>> gs = grad(g, l, std::span<const Var>(pv));
      for (std::size_t i = 0; i < params.tensors.size(); ++i) {
        S* p = params.tensors[i].data();
        const S* d = gs[i].data();
        const S lr = static_cast<S>(cfg.lr);
        for (std::size_t k = 0; k < gs[i].size(); ++k) p[k] -= lr * d[k];
      }
    } catch (const NumericError& e) {
      throw NumericError("experience " + std::to_string(exp.index) +
                         " step " + std::to_string(q) + ": " + e.what());
    }
  }
  return params;
}

struct ExperienceTiming {
  double train_seconds = 0.0;
  double distill_seconds = 0.0;
};

template <typename S>
struct RunOutcome {
  AccuracyMatrix matrix;
  ReplayBuffer<S> buffer;
  Params<S> params;
  std::vector<ExperienceTiming> timings;
  std::size_t distill_count = 0;
};

/// The full continual loop over the stream: train on each experience (with
/// the strategy's buffer handling), then evaluate on every test set seen so
/// far. Replay strategies store a memory after each experience except the
/// last, whose memory would never be replayed; distilled_replay distills
/// it first. Cumulative retrains single-pass on the shuffled union instead.
template <typename S>
RunOutcome<S> run_stream(
    const Stream& stream, const ModelSpec& model, const TrainConfig& cfg,
    const InitDistribution& dist,
    const std::function<void(const std::string&)>& log = {}) {
  using clock = std::chrono::steady_clock;
  const std::size_t T = stream.T();
  if (T < 1) throw ContractError("run_stream: empty stream");

  RunOutcome<S> out;
  out.matrix = AccuracyMatrix(T);
  out.params = init_params<S>(model, dist, derive_seed(cfg.seed, 0x90deu));
  Dataset cumulative_train;

  for (std::size_t t = 1; t <= T; ++t) {
    const Experience& exp = stream.experiences[t - 1];
    auto t0 = clock::now();
    if (cfg.strategy == Strategy::cumulative) {
      cumulative_train = concat(cumulative_train, exp.train);
      Experience merged;
      merged.index = exp.index;
      merged.train = cumulative_train;
      merged.classes_present = exp.classes_present;
      out.params = train_experience(model, std::move(out.params), merged,
                                    out.buffer, cfg);
    } else {
      out.params = train_experience(model, std::move(out.params), exp,
                                    out.buffer, cfg);
    }
    ExperienceTiming timing;
    timing.train_seconds =
        std::chrono::duration<double>(clock::now() - t0).count();

    const bool stores_memory =
        (cfg.strategy == Strategy::simple_replay ||
         cfg.strategy == Strategy::distilled_replay) &&
        cfg.per_class > 0 && t < T;
    if (stores_memory) {
      auto d0 = clock::now();
      DistilledMemory<S> mem = init_memory<S>(
          exp, cfg.per_class, derive_seed(cfg.seed, 0x5e1u, t));
      if (cfg.strategy == Strategy::distilled_replay) {
        // same exemplar draw as simple replay, then optimized
        DistillConfig dcfg = cfg.distill;
        dcfg.seed = derive_seed(cfg.seed, 0xd157u, t, cfg.distill.seed);
        mem = distill<S>(exp, model, dist, dcfg, std::move(mem));
        ++out.distill_count;
      }
      out.buffer.memories.push_back(std::move(mem));
      timing.distill_seconds =
          std::chrono::duration<double>(clock::now() - d0).count();
    }

    for (std::size_t i = 1; i <= t; ++i)
      out.matrix.set(t, i,
                     accuracy(model, out.params,
                              stream.experiences[i - 1].test));
    out.timings.push_back(timing);
    if (log)
      log("experience " + std::to_string(t) + "/" + std::to_string(T) +
          " [" + strategy_name(cfg.strategy) +
          "] A_t=" + std::to_string(average_accuracy(out.matrix, t)));
  }
  return out;
}

}  // namespace dr
