#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "dr/graph.hpp"
#include "dr/ops.hpp"
#include "dr/rng.hpp"

namespace dr {

namespace detail {

template <typename S>
Var fit_shape(Graph<S>& g, Var v, const Shape& target) {
  if (g.value(v).shape() == target) return v;
  return reshape(g, v, target);
}

/// Emit the vector-Jacobian product of one recorded node onto the same
/// graph. The node's metadata is taken by value: emitting ops may grow the
/// node store and invalidate references into it. `adj` is the adjoint of
/// the node's output; contributions go to `acc(input_index, var)` and are
/// only emitted for inputs that require gradients.
template <typename S, typename Acc>
void emit_vjp(Graph<S>& g, Var self, OpKind op,
              const std::vector<std::uint32_t>& inputs, OpAttrs attrs,
              Var adj, Acc&& acc) {
  auto in = [&](std::size_t k) { return Var{inputs[k]}; };
  auto want = [&](std::size_t k) { return g.requires_grad(in(k)); };
  switch (op) {
    case OpKind::leaf:
      return;
    case OpKind::add:
      if (want(0)) acc(0, adj);
      if (want(1)) acc(1, adj);
      return;
    case OpKind::sub:
      if (want(0)) acc(0, adj);
      if (want(1)) acc(1, scale(g, adj, -1.0));
      return;
    case OpKind::mul:
      if (want(0)) acc(0, mul(g, adj, in(1)));
      if (want(1)) acc(1, mul(g, adj, in(0)));
      return;
    case OpKind::scale:
      if (want(0)) acc(0, scale(g, adj, attrs.scalar));
      return;
    case OpKind::scale_var: {
      if (want(0)) acc(0, scale_var(g, adj, in(1)));
      if (want(1)) {
        const Shape s_shape = g.value(in(1)).shape();
        acc(1, fit_shape(g, sum(g, mul(g, adj, in(0))), s_shape));
      }
      return;
    }
    case OpKind::matmul:
      if (want(0)) acc(0, matmul(g, adj, transpose(g, in(1))));
      if (want(1)) acc(1, matmul(g, transpose(g, in(0)), adj));
      return;
    case OpKind::transpose:
      if (want(0)) acc(0, transpose(g, adj));
      return;
    case OpKind::conv2d:
      if (want(0)) acc(0, conv2d_dinput(g, adj, in(1)));
      if (want(1)) acc(1, conv2d_dkernel(g, in(0), adj));
      return;
    case OpKind::conv2d_dinput:
      if (want(0)) acc(0, conv2d(g, adj, in(1)));
      if (want(1)) acc(1, conv2d_dkernel(g, adj, in(0)));
      return;
    case OpKind::conv2d_dkernel:
      if (want(0)) acc(0, conv2d_dinput(g, in(1), adj));
      if (want(1)) acc(1, conv2d(g, in(0), adj));
      return;
    case OpKind::add_rowvec:
      if (want(0)) acc(0, adj);
      if (want(1)) acc(1, col_sum(g, adj));
      return;
    case OpKind::col_sum:
      if (want(0)) acc(0, broadcast_rows(g, adj, g.value(in(0)).dim(0)));
      return;
    case OpKind::broadcast_rows:
      if (want(0)) acc(0, col_sum(g, adj));
      return;
    case OpKind::add_chanbias:
      if (want(0)) acc(0, adj);
      if (want(1)) acc(1, chan_sum(g, adj));
      return;
    case OpKind::chan_sum: {
      if (!want(0)) return;
      const Shape x_shape = g.value(in(0)).shape();
      acc(0, broadcast_chan(g, adj, x_shape));
      return;
    }
    case OpKind::broadcast_chan:
      if (want(0)) acc(0, chan_sum(g, adj));
      return;
    case OpKind::maxpool2x2: {
      if (!want(0)) return;
      OpAttrs a;
      a.shape = g.value(in(0)).shape();
      a.indices = std::move(attrs.indices);
      acc(0, g.apply(OpKind::maxunpool2x2, {adj}, std::move(a)));
      return;
    }
    case OpKind::maxunpool2x2: {
      if (!want(0)) return;
      OpAttrs a;
      a.shape = g.value(in(0)).shape();
      a.indices = std::move(attrs.indices);
      acc(0, g.apply(OpKind::pool_take, {adj}, std::move(a)));
      return;
    }
    case OpKind::pool_take: {
      if (!want(0)) return;
      OpAttrs a;
      a.shape = g.value(in(0)).shape();
      a.indices = std::move(attrs.indices);
      acc(0, g.apply(OpKind::maxunpool2x2, {adj}, std::move(a)));
      return;
    }
    case OpKind::relu:
      if (want(0)) acc(0, mul(g, adj, relu_mask(g, in(0))));
      return;
    case OpKind::relu_mask:
      return;  // zero derivative almost everywhere
    case OpKind::tanh:
      if (want(0)) acc(0, sub(g, adj, mul(g, adj, mul(g, self, self))));
      return;
    case OpKind::reshape: {
      if (!want(0)) return;
      const Shape x_shape = g.value(in(0)).shape();
      acc(0, reshape(g, adj, x_shape));
      return;
    }
    case OpKind::sum: {
      if (!want(0)) return;
      const Shape x_shape = g.value(in(0)).shape();
      acc(0, spread(g, adj, x_shape));
      return;
    }
    case OpKind::mean: {
      if (!want(0)) return;
      const Shape x_shape = g.value(in(0)).shape();
      const double inv_n = 1.0 / static_cast<double>(numel(x_shape));
      acc(0, scale(g, spread(g, adj, x_shape), inv_n));
      return;
    }
    case OpKind::spread: {
      if (!want(0)) return;
      const Shape x_shape = g.value(in(0)).shape();
      acc(0, fit_shape(g, sum(g, adj), x_shape));
      return;
    }
    case OpKind::row_sum:
      if (want(0)) acc(0, broadcast_cols(g, adj, g.value(in(0)).dim(1)));
      return;
    case OpKind::broadcast_cols:
      if (want(0)) acc(0, row_sum(g, adj));
      return;
    case OpKind::softmax: {
      if (!want(0)) return;
      const std::size_t cols = g.value(self).dim(1);
      Var dot = row_sum(g, mul(g, self, adj));
      Var centered = sub(g, adj, broadcast_cols(g, dot, cols));
      acc(0, mul(g, self, centered));
      return;
    }
    case OpKind::softmax_cross_entropy: {
      const double inv_b = 1.0 / static_cast<double>(g.value(in(0)).dim(0));
      if (want(0)) {
        Var diff = sub(g, softmax(g, in(0)), in(1));
        acc(0, scale(g, scale_var(g, diff, adj), inv_b));
      }
      if (want(1)) acc(1, scale(g, scale_var(g, in(0), adj), -inv_b));
      return;
    }
  }
  throw ContractError("emit_vjp: unknown op");
}

}  // namespace detail

/// Reverse-mode gradient of a scalar `out` with respect to `wrt`, emitted
/// as recorded ops on the same graph. Because the backward pass is itself
/// made of graph ops, the returned Vars can be differentiated again.
/// A wrt Var with no path to `out` yields a zero tensor.
template <typename Scalar>
std::vector<Var> grad_vars(Graph<Scalar>& g, Var out,
                           std::span<const Var> wrt) {
  if (g.value(out).size() != 1)
    throw ContractError("grad: output must be scalar, got shape " +
                        shape_str(g.value(out).shape()));
  for (Var v : wrt)
    if (!g.requires_grad(v))
      throw ContractError("grad: wrt var does not require gradient");

  std::vector<std::optional<Var>> adjoint(out.id + 1);
  adjoint[out.id] =
      g.constant(Tensor<Scalar>::full(g.value(out).shape(), Scalar{1}));

  for (std::uint32_t i = out.id + 1; i-- > 0;) {
    if (!adjoint[i].has_value()) continue;
    const auto& node = g.node(Var{i});
    if (node.op == OpKind::leaf || !node.requires_grad) continue;
    const OpKind op = node.op;
    const std::vector<std::uint32_t> inputs = node.inputs;
    OpAttrs attrs = node.attrs;
    detail::emit_vjp(g, Var{i}, op, inputs, std::move(attrs), *adjoint[i],
                     [&](std::size_t k, Var contrib) {
                       const std::uint32_t id = inputs[k];
                       if (adjoint[id].has_value())
                         adjoint[id] = add(g, *adjoint[id], contrib);
                       else
                         adjoint[id] = contrib;
                     });
  }

  std::vector<Var> result;
  result.reserve(wrt.size());
  for (Var v : wrt) {
    if (v.id < adjoint.size() && adjoint[v.id].has_value())
      result.push_back(*adjoint[v.id]);
    else
      result.push_back(
          g.constant(Tensor<Scalar>::zeros(g.value(v).shape())));
  }
  return result;
}

template <typename Scalar>
std::vector<Var> grad_vars(Graph<Scalar>& g, Var out,
                           std::initializer_list<Var> wrt) {
  return grad_vars(g, out, std::span<const Var>(wrt.begin(), wrt.size()));
}

/// Scratch-mode gradient: runs the recorded backward, copies the results
/// out, and truncates the graph back to its size before the call.
template <typename Scalar>
std::vector<Tensor<Scalar>> grad(Graph<Scalar>& g, Var out,
                                 std::span<const Var> wrt) {
  const std::size_t checkpoint = g.size();
  std::vector<Var> vars = grad_vars(g, out, wrt);
  std::vector<Tensor<Scalar>> result;
  result.reserve(vars.size());
  for (Var v : vars) result.push_back(g.value(v));
  g.truncate(checkpoint);
  return result;
}

template <typename Scalar>
std::vector<Tensor<Scalar>> grad(Graph<Scalar>& g, Var out,
                                 std::initializer_list<Var> wrt) {
  return grad(g, out, std::span<const Var>(wrt.begin(), wrt.size()));
}

/// Central-difference check of reverse-mode gradients for a scalar function
/// of several tensors. `build` receives a fresh graph plus one leaf per
/// entry of `at` and returns the scalar output Var. Returns the max
/// relative error over the checked coordinates, with denominator
/// max(|analytic|, |numeric|, 1e-8). With max_coords > 0 a random subset
/// of coordinates is checked.
template <typename Build>
double finite_diff_check_multi(Build&& build,
                               std::vector<Tensor<double>> at, double eps,
                               std::size_t max_coords = 0,
                               std::uint64_t seed = 1) {
  if (!(eps > 0)) throw ContractError("finite_diff_check: eps must be > 0");

  auto eval = [&](const std::vector<Tensor<double>>& point,
                  std::vector<Var>* leaves_out,
                  Graph<double>* graph) -> Var {
    std::vector<Var> leaves;
    leaves.reserve(point.size());
    for (const auto& t : point) leaves.push_back(graph->leaf(t, true));
    Var out = build(*graph, std::span<const Var>(leaves));
    if (graph->value(out).size() != 1)
      throw ContractError("finite_diff_check: function is not scalar");
    if (leaves_out) *leaves_out = std::move(leaves);
    return out;
  };

  Graph<double> g;
  std::vector<Var> leaves;
  Var out = eval(at, &leaves, &g);
  std::vector<Tensor<double>> analytic =
      grad(g, out, std::span<const Var>(leaves));

  std::size_t total = 0;
  for (const auto& t : at) total += t.size();
  std::vector<std::size_t> coords;
  if (max_coords == 0 || total <= max_coords) {
    coords.resize(total);
    for (std::size_t i = 0; i < total; ++i) coords[i] = i;
  } else {
    Rng rng(seed);
    coords = rng.sample_without_replacement(total, max_coords);
  }

  double worst = 0.0;
  for (std::size_t flat : coords) {
    std::size_t ti = 0, off = flat;
    while (off >= at[ti].size()) {
      off -= at[ti].size();
      ++ti;
    }
    const double saved = at[ti][off];

    at[ti][off] = saved + eps;
    Graph<double> gp;
    const double fp = gp.value(eval(at, nullptr, &gp)).item();
    at[ti][off] = saved - eps;
    Graph<double> gm;
    const double fm = gm.value(eval(at, nullptr, &gm)).item();
    at[ti][off] = saved;

    const double numeric = (fp - fm) / (2.0 * eps);
    const double a = analytic[ti][off];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    const double err = std::abs(a - numeric) / denom;
    worst = err > worst ? err : worst;
  }
  return worst;
}

/// Single-tensor convenience spelling of finite_diff_check_multi.
template <typename Build>
double finite_diff_check(Build&& build, const Tensor<double>& at, double eps,
                         std::size_t max_coords = 0, std::uint64_t seed = 1) {
  return finite_diff_check_multi(
      [&](Graph<double>& g, std::span<const Var> xs) {
        return build(g, xs[0]);
      },
      std::vector<Tensor<double>>{at}, eps, max_coords, seed);
}

}  // namespace dr
