#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dr/autodiff.hpp"
#include "dr/data.hpp"
#include "dr/graph.hpp"
#include "dr/ops.hpp"
#include "dr/rng.hpp"

namespace dr {

enum class ModelKind { mlp, lenet5, tiny_mlp };

inline const char* model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::mlp: return "mlp";
    case ModelKind::lenet5: return "lenet5";
    case ModelKind::tiny_mlp: return "tiny-mlp";
  }
  return "?";
}

/// Architecture description. MLP variants flatten the input; the LeNet5
/// variant expects a single-channel square image large enough for its two
/// conv/pool stages (28x28 is the intended size).
struct ModelSpec {
  ModelKind kind = ModelKind::mlp;
  Shape input_shape;                // per-example shape
  std::vector<std::size_t> hidden;  // mlp hidden layer widths
  std::size_t num_classes = 0;

  static ModelSpec make_mlp(std::size_t input_dim, std::size_t num_classes,
                            std::size_t hidden_units = 500) {
    return {ModelKind::mlp, {input_dim}, {hidden_units}, num_classes};
  }
  static ModelSpec make_tiny_mlp(std::size_t input_dim,
                                 std::size_t num_classes,
                                 std::size_t hidden_units = 16) {
    return {ModelKind::tiny_mlp, {input_dim}, {hidden_units}, num_classes};
  }
  static ModelSpec make_lenet5(std::size_t hw, std::size_t num_classes) {
    return {ModelKind::lenet5, {1, hw, hw}, {}, num_classes};
  }

  std::size_t input_dim() const { return numel(input_shape); }
};

struct LayerShape {
  std::string name;
  Shape shape;
  std::size_t fan_in, fan_out;
};

inline std::vector<LayerShape> param_layout(const ModelSpec& spec) {
  std::vector<LayerShape> out;
  auto linear = [&](const std::string& name, std::size_t in, std::size_t o) {
    out.push_back({name + ".w", {in, o}, in, o});
    out.push_back({name + ".b", {o}, in, o});
  };
  if (spec.kind == ModelKind::lenet5) {
    if (spec.input_shape.size() != 3 || spec.input_shape[0] != 1 ||
        spec.input_shape[1] != spec.input_shape[2])
      throw ContractError("lenet5 needs [1,hw,hw] input, got " +
                          shape_str(spec.input_shape));
    const std::size_t hw = spec.input_shape[1];
    if (hw < 16 || (hw - 4) % 2 || ((hw - 4) / 2 - 4) % 2)
      throw ContractError("lenet5: unsupported input size " +
                          std::to_string(hw));
    const std::size_t s1 = (hw - 4) / 2, s2 = (s1 - 4) / 2;
    auto conv = [&](const std::string& name, std::size_t ci, std::size_t co) {
      out.push_back({name + ".w", {co, ci, 5, 5}, ci * 25, co * 25});
      out.push_back({name + ".b", {co}, ci * 25, co * 25});
    };
    conv("conv1", 1, 6);
    conv("conv2", 6, 16);
    linear("fc1", 16 * s2 * s2, 120);
    linear("fc2", 120, 84);
    linear("fc3", 84, spec.num_classes);
    return out;
  }
  std::size_t prev = spec.input_dim();
  for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
    linear("fc" + std::to_string(i), prev, spec.hidden[i]);
    prev = spec.hidden[i];
  }
  linear("fc" + std::to_string(spec.hidden.size()), prev, spec.num_classes);
  return out;
}

inline std::size_t param_count(const ModelSpec& spec) {
  std::size_t n = 0;
  for (const auto& l : param_layout(spec)) n += numel(l.shape);
  return n;
}

/// Ordered parameter tensors matching param_layout(spec).
template <typename S>
struct Params {
  std::vector<Tensor<S>> tensors;

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
  }

  std::vector<S> flatten() const {
    std::vector<S> flat;
    flat.reserve(count());
    for (const auto& t : tensors)
      flat.insert(flat.end(), t.values().begin(), t.values().end());
    return flat;
  }

  void unflatten(std::span<const S> flat) {
    if (flat.size() != count())
      throw ContractError("unflatten: got " + std::to_string(flat.size()) +
                          " values for " + std::to_string(count()) +
                          " parameters");
    std::size_t off = 0;
    for (auto& t : tensors) {
      std::copy_n(flat.data() + off, t.size(), t.data());
      off += t.size();
    }
  }

  template <typename O>
  Params<O> cast() const {
    Params<O> out;
    out.tensors.reserve(tensors.size());
    for (const auto& t : tensors) out.tensors.push_back(t.template cast<O>());
    return out;
  }
};

enum class InitScheme { xavier_uniform };

/// The initialization distribution p(theta0) distillation samples from.
struct InitDistribution {
  InitScheme scheme = InitScheme::xavier_uniform;
  std::uint64_t seed_stream = 0;
};

/// Xavier-uniform weights, zero biases; identical output for identical
/// (dist, seed) regardless of scalar type (values drawn in double).
template <typename S>
Params<S> init_params(const ModelSpec& spec, const InitDistribution& dist,
                      std::uint64_t seed) {
  Params<S> p;
  Rng rng(derive_seed(dist.seed_stream, 0x1417u, seed));
  for (const auto& layer : param_layout(spec)) {
    Tensor<S> t(layer.shape);
    if (layer.name.ends_with(".w")) {
      const double limit =
          std::sqrt(6.0 / static_cast<double>(layer.fan_in + layer.fan_out));
      for (std::size_t i = 0; i < t.size(); ++i)
        t[i] = static_cast<S>(rng.uniform(-limit, limit));
    }
    p.tensors.push_back(std::move(t));
  }
  return p;
}

template <typename S>
std::vector<Var> param_leaves(Graph<S>& g, const Params<S>& p,
                              bool requires_grad) {
  std::vector<Var> vars;
  vars.reserve(p.tensors.size());
  for (const auto& t : p.tensors) vars.push_back(g.leaf(t, requires_grad));
  return vars;
}

/// Logits for a batch. x may arrive flattened [B, d] or in the model's
/// native example shape with a leading batch dim; both are accepted.
template <typename S>
Var forward(const ModelSpec& spec, Graph<S>& g, std::span<const Var> params,
            Var x) {
  const auto layout = param_layout(spec);
  if (params.size() != layout.size())
    throw ContractError("forward: " + std::to_string(params.size()) +
                        " param tensors, spec has " +
                        std::to_string(layout.size()));
  const std::size_t batch = g.value(x).dim(0);
  if (g.value(x).size() != batch * spec.input_dim())
    throw ShapeError("forward: input " + shape_str(g.value(x).shape()) +
                     " does not match example shape " +
                     shape_str(spec.input_shape));

  if (spec.kind == ModelKind::lenet5) {
    const std::size_t hw = spec.input_shape[1];
    Var h = g.value(x).rank() == 4 ? x : reshape(g, x, {batch, 1, hw, hw});
    h = maxpool2x2(g, relu(g, add_chanbias(g, conv2d(g, h, params[0]),
                                           params[1])));
    h = maxpool2x2(g, relu(g, add_chanbias(g, conv2d(g, h, params[2]),
                                           params[3])));
    const std::size_t flat = g.value(h).size() / batch;
    h = reshape(g, h, {batch, flat});
    h = relu(g, add_rowvec(g, matmul(g, h, params[4]), params[5]));
    h = relu(g, add_rowvec(g, matmul(g, h, params[6]), params[7]));
    return add_rowvec(g, matmul(g, h, params[8]), params[9]);
  }

  Var h = g.value(x).rank() == 2 ? x : reshape(g, x, {batch, spec.input_dim()});
  for (std::size_t i = 0; i + 1 < layout.size() / 2; ++i)
    h = relu(g, add_rowvec(g, matmul(g, h, params[2 * i]), params[2 * i + 1]));
  const std::size_t last = layout.size() - 2;
  return add_rowvec(g, matmul(g, h, params[last]), params[last + 1]);
}

/// Mean softmax cross-entropy of the batch against one-hot targets.
template <typename S>
Var loss(const ModelSpec& spec, Graph<S>& g, std::span<const Var> params,
         Var x, Var y_onehot) {
  return softmax_cross_entropy(g, forward(spec, g, params, x), y_onehot);
}

/// Argmax-match fraction over a dataset; prediction ties resolve to the
/// lowest class index.
template <typename S>
double accuracy(const ModelSpec& spec, const Params<S>& params,
                const Dataset& ds, std::size_t eval_batch = 256) {
  if (ds.size() == 0) throw ContractError("accuracy: empty dataset");
  std::size_t correct = 0;
  for (std::size_t start = 0; start < ds.size(); start += eval_batch) {
    const std::size_t stop = std::min(ds.size(), start + eval_batch);
    std::vector<std::size_t> idx(stop - start);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
    Graph<S> g;
    std::vector<Var> pv = param_leaves(g, params, false);
    Var x = g.leaf(gather_images<S>(ds, idx));
    const Tensor<S>& logits = g.value(forward(spec, g, pv, x));
    const std::size_t c = logits.dim(1);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const S* row = logits.data() + r * c;
      std::size_t best = 0;
      for (std::size_t j = 1; j < c; ++j)
        if (row[j] > row[best]) best = j;
      if (static_cast<int>(best) == ds.labels[idx[r]]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

}  // namespace dr
