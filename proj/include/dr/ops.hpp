#pragma once

#include "dr/graph.hpp"

namespace dr {

/// Free-function spellings for graph ops, so model code reads as math.
/// Each takes the graph explicitly; vars from other graphs are rejected by
/// Graph::apply.

template <typename S>
Var add(Graph<S>& g, Var a, Var b) {
  return g.apply(OpKind::add, {a, b});
}

template <typename S>
Var sub(Graph<S>& g, Var a, Var b) {
  return g.apply(OpKind::sub, {a, b});
}

template <typename S>
Var mul(Graph<S>& g, Var a, Var b) {
  return g.apply(OpKind::mul, {a, b});
}

template <typename S>
Var scale(Graph<S>& g, Var a, double c) {
  OpAttrs attrs;
  attrs.scalar = c;
  return g.apply(OpKind::scale, {a}, std::move(attrs));
}

template <typename S>
Var scale_var(Graph<S>& g, Var a, Var s) {
  return g.apply(OpKind::scale_var, {a, s});
}

template <typename S>
Var matmul(Graph<S>& g, Var a, Var b) {
  return g.apply(OpKind::matmul, {a, b});
}

template <typename S>
Var transpose(Graph<S>& g, Var a) {
  return g.apply(OpKind::transpose, {a});
}

template <typename S>
Var conv2d(Graph<S>& g, Var x, Var w) {
  return g.apply(OpKind::conv2d, {x, w});
}

template <typename S>
Var conv2d_dinput(Graph<S>& g, Var p, Var w) {
  return g.apply(OpKind::conv2d_dinput, {p, w});
}

template <typename S>
Var conv2d_dkernel(Graph<S>& g, Var x, Var p) {
  return g.apply(OpKind::conv2d_dkernel, {x, p});
}

template <typename S>
Var add_rowvec(Graph<S>& g, Var m, Var v) {
  return g.apply(OpKind::add_rowvec, {m, v});
}

template <typename S>
Var col_sum(Graph<S>& g, Var m) {
  return g.apply(OpKind::col_sum, {m});
}

template <typename S>
Var broadcast_rows(Graph<S>& g, Var v, std::size_t rows) {
  OpAttrs attrs;
  attrs.shape = {rows};
  return g.apply(OpKind::broadcast_rows, {v}, std::move(attrs));
}

template <typename S>
Var add_chanbias(Graph<S>& g, Var x, Var b) {
  return g.apply(OpKind::add_chanbias, {x, b});
}

template <typename S>
Var chan_sum(Graph<S>& g, Var x) {
  return g.apply(OpKind::chan_sum, {x});
}

template <typename S>
Var broadcast_chan(Graph<S>& g, Var v, Shape target) {
  OpAttrs attrs;
  attrs.shape = std::move(target);
  return g.apply(OpKind::broadcast_chan, {v}, std::move(attrs));
}

template <typename S>
Var maxpool2x2(Graph<S>& g, Var x) {
  return g.apply(OpKind::maxpool2x2, {x});
}

template <typename S>
Var relu(Graph<S>& g, Var a) {
  return g.apply(OpKind::relu, {a});
}

template <typename S>
Var relu_mask(Graph<S>& g, Var a) {
  return g.apply(OpKind::relu_mask, {a});
}

template <typename S>
Var tanh(Graph<S>& g, Var a) {
  return g.apply(OpKind::tanh, {a});
}

template <typename S>
Var reshape(Graph<S>& g, Var a, Shape target) {
  OpAttrs attrs;
  attrs.shape = std::move(target);
  return g.apply(OpKind::reshape, {a}, std::move(attrs));
}

template <typename S>
Var sum(Graph<S>& g, Var a) {
  return g.apply(OpKind::sum, {a});
}

template <typename S>
Var mean(Graph<S>& g, Var a) {
  return g.apply(OpKind::mean, {a});
}

template <typename S>
Var spread(Graph<S>& g, Var a, Shape target) {
  OpAttrs attrs;
  attrs.shape = std::move(target);
  return g.apply(OpKind::spread, {a}, std::move(attrs));
}

template <typename S>
Var row_sum(Graph<S>& g, Var a) {
  return g.apply(OpKind::row_sum, {a});
}

template <typename S>
Var broadcast_cols(Graph<S>& g, Var a, std::size_t cols) {
  OpAttrs attrs;
  attrs.shape = {cols};
  return g.apply(OpKind::broadcast_cols, {a}, std::move(attrs));
}

template <typename S>
Var softmax(Graph<S>& g, Var z) {
  return g.apply(OpKind::softmax, {z});
}

template <typename S>
Var softmax_cross_entropy(Graph<S>& g, Var logits, Var onehot) {
  return g.apply(OpKind::softmax_cross_entropy, {logits, onehot});
}

}  // namespace dr
