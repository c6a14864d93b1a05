#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dr/common.hpp"
#include "dr/tensor.hpp"

namespace dr {

/// Kinds of recorded operations. The first block is the public surface;
/// the rest are gradient companions so that backward passes can themselves
/// be recorded (and re-differentiated).
enum class OpKind : std::uint8_t {
  leaf,
  add,
  sub,
  mul,         // elementwise
  scale,       // by compile-time-constant scalar (attrs.scalar)
  matmul,
  conv2d,      // stride 1, valid padding
  maxpool2x2,
  relu,
  tanh,
  reshape,
  sum,
  mean,
  softmax_cross_entropy,
  // gradient companions / internal ops
  scale_var,   // tensor * scalar variable
  transpose,
  conv2d_dinput,
  conv2d_dkernel,
  add_rowvec,      // [B,C] + [C]
  col_sum,         // [B,C] -> [C]
  broadcast_rows,  // [C] -> [B,C]
  add_chanbias,    // [B,C,H,W] + [C]
  chan_sum,        // [B,C,H,W] -> [C]
  broadcast_chan,  // [C] -> [B,C,H,W]
  maxunpool2x2,
  pool_take,
  relu_mask,
  spread,          // scalar -> constant-filled tensor
  row_sum,         // [B,C] -> [B,1]
  broadcast_cols,  // [B,1] -> [B,C]
  softmax,
};

inline const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::leaf: return "leaf";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::matmul: return "matmul";
    case OpKind::conv2d: return "conv2d";
    case OpKind::maxpool2x2: return "maxpool2x2";
    case OpKind::relu: return "relu";
    case OpKind::tanh: return "tanh";
    case OpKind::reshape: return "reshape";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::softmax_cross_entropy: return "softmax_cross_entropy";
    case OpKind::scale_var: return "scale_var";
    case OpKind::transpose: return "transpose";
    case OpKind::conv2d_dinput: return "conv2d_dinput";
    case OpKind::conv2d_dkernel: return "conv2d_dkernel";
    case OpKind::add_rowvec: return "add_rowvec";
    case OpKind::col_sum: return "col_sum";
    case OpKind::broadcast_rows: return "broadcast_rows";
    case OpKind::add_chanbias: return "add_chanbias";
    case OpKind::chan_sum: return "chan_sum";
    case OpKind::broadcast_chan: return "broadcast_chan";
    case OpKind::maxunpool2x2: return "maxunpool2x2";
    case OpKind::pool_take: return "pool_take";
    case OpKind::relu_mask: return "relu_mask";
    case OpKind::spread: return "spread";
    case OpKind::row_sum: return "row_sum";
    case OpKind::broadcast_cols: return "broadcast_cols";
    case OpKind::softmax: return "softmax";
  }
  return "?";
}

/// Per-node immediates: a constant factor, a target shape, or pooling
/// indices. Saved at record time so replay and backward need only the node.
struct OpAttrs {
  double scalar = 0.0;
  Shape shape;
  std::vector<std::uint32_t> indices;
};

/// Handle to a node in a Graph. Valid only for the graph that produced it.
struct Var {
  std::uint32_t id = 0;
};

namespace detail {

template <typename Scalar>
void check_same_shape(OpKind op, const Tensor<Scalar>& a,
                      const Tensor<Scalar>& b) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op_name(op)) + ": shapes " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                     " differ");
}

template <typename Scalar>
void check_rank(OpKind op, const Tensor<Scalar>& t, std::size_t rank) {
  if (t.rank() != rank)
    throw ShapeError(std::string(op_name(op)) + ": expected rank " +
                     std::to_string(rank) + ", got " + shape_str(t.shape()));
}

template <typename Scalar>
Tensor<Scalar> eval_conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w) {
  check_rank(OpKind::conv2d, x, 4);
  check_rank(OpKind::conv2d, w, 4);
  const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2),
                    wd = x.dim(3);
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != cin || kh > h || kw > wd)
    throw ShapeError("conv2d: input " + shape_str(x.shape()) + " kernel " +
                     shape_str(w.shape()));
  const std::size_t ho = h - kh + 1, wo = wd - kw + 1;
  Tensor<Scalar> y({batch, cout, ho, wo});
  const Scalar* xd = x.data();
  const Scalar* wdta = w.data();
  Scalar* yd = y.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t c = 0; c < cin; ++c) {
        const Scalar* xb = xd + (b * cin + c) * h * wd;
        const Scalar* wk = wdta + (o * cin + c) * kh * kw;
        Scalar* yb = yd + (b * cout + o) * ho * wo;
        for (std::size_t i = 0; i < ho; ++i)
          for (std::size_t p = 0; p < kh; ++p)
            for (std::size_t q = 0; q < kw; ++q) {
              const Scalar wv = wk[p * kw + q];
              const Scalar* xr = xb + (i + p) * wd + q;
              Scalar* yr = yb + i * wo;
              for (std::size_t j = 0; j < wo; ++j) yr[j] += wv * xr[j];
            }
      }
  return y;
}

// Adjoint of conv2d wrt its input: scatter of pooled adjoint through the
// kernel (full correlation with the flipped kernel).
template <typename Scalar>
Tensor<Scalar> eval_conv2d_dinput(const Tensor<Scalar>& p,
                                  const Tensor<Scalar>& w) {
  check_rank(OpKind::conv2d_dinput, p, 4);
  check_rank(OpKind::conv2d_dinput, w, 4);
  const std::size_t batch = p.dim(0), cout = p.dim(1), ho = p.dim(2),
                    wo = p.dim(3);
  const std::size_t cin = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(0) != cout)
    throw ShapeError("conv2d_dinput: adjoint " + shape_str(p.shape()) +
                     " kernel " + shape_str(w.shape()));
  const std::size_t h = ho + kh - 1, wd = wo + kw - 1;
  Tensor<Scalar> dx({batch, cin, h, wd});
  const Scalar* pd = p.data();
  const Scalar* wdta = w.data();
  Scalar* xd = dx.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t c = 0; c < cin; ++c) {
        const Scalar* pb = pd + (b * cout + o) * ho * wo;
        const Scalar* wk = wdta + (o * cin + c) * kh * kw;
        Scalar* xb = xd + (b * cin + c) * h * wd;
        for (std::size_t i = 0; i < ho; ++i)
          for (std::size_t p_ = 0; p_ < kh; ++p_)
            for (std::size_t q = 0; q < kw; ++q) {
              const Scalar wv = wk[p_ * kw + q];
              const Scalar* pr = pb + i * wo;
              Scalar* xr = xb + (i + p_) * wd + q;
              for (std::size_t j = 0; j < wo; ++j) xr[j] += wv * pr[j];
            }
      }
  return dx;
}

// Adjoint of conv2d wrt its kernel.
template <typename Scalar>
Tensor<Scalar> eval_conv2d_dkernel(const Tensor<Scalar>& x,
                                   const Tensor<Scalar>& p) {
  check_rank(OpKind::conv2d_dkernel, x, 4);
  check_rank(OpKind::conv2d_dkernel, p, 4);
  const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2),
                    wd = x.dim(3);
  const std::size_t cout = p.dim(1), ho = p.dim(2), wo = p.dim(3);
  if (p.dim(0) != batch || ho > h || wo > wd)
    throw ShapeError("conv2d_dkernel: input " + shape_str(x.shape()) +
                     " adjoint " + shape_str(p.shape()));
  const std::size_t kh = h - ho + 1, kw = wd - wo + 1;
  Tensor<Scalar> dw({cout, cin, kh, kw});
  const Scalar* xd = x.data();
  const Scalar* pd = p.data();
  Scalar* wdta = dw.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t c = 0; c < cin; ++c) {
        const Scalar* xb = xd + (b * cin + c) * h * wd;
        const Scalar* pb = pd + (b * cout + o) * ho * wo;
        Scalar* wk = wdta + (o * cin + c) * kh * kw;
        for (std::size_t i = 0; i < ho; ++i)
          for (std::size_t p_ = 0; p_ < kh; ++p_)
            for (std::size_t q = 0; q < kw; ++q) {
              const Scalar* xr = xb + (i + p_) * wd + q;
              const Scalar* pr = pb + i * wo;
              Scalar acc = 0;
              for (std::size_t j = 0; j < wo; ++j) acc += xr[j] * pr[j];
              wk[p_ * kw + q] += acc;
            }
      }
  return dw;
}

// Max over non-overlapping 2x2 windows; ties resolved to the first maximal
// element in row-major order so the backward scatter is deterministic.
template <typename Scalar>
std::pair<Tensor<Scalar>, std::vector<std::uint32_t>> eval_maxpool2x2(
    const Tensor<Scalar>& x) {
  check_rank(OpKind::maxpool2x2, x, 4);
  const std::size_t batch = x.dim(0), ch = x.dim(1), h = x.dim(2),
                    wd = x.dim(3);
  if (h % 2 || wd % 2)
    throw ShapeError("maxpool2x2: spatial dims must be even, got " +
                     shape_str(x.shape()));
  const std::size_t ho = h / 2, wo = wd / 2;
  Tensor<Scalar> y({batch, ch, ho, wo});
  std::vector<std::uint32_t> idx(y.size());
  const Scalar* xd = x.data();
  Scalar* yd = y.data();
  std::size_t k = 0;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t base = (b * ch + c) * h * wd;
      for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j, ++k) {
          std::size_t best = base + (2 * i) * wd + 2 * j;
          Scalar bv = xd[best];
          const std::size_t cand[3] = {base + (2 * i) * wd + 2 * j + 1,
                                       base + (2 * i + 1) * wd + 2 * j,
                                       base + (2 * i + 1) * wd + 2 * j + 1};
          for (std::size_t t : cand)
            if (xd[t] > bv) {
              bv = xd[t];
              best = t;
            }
          yd[k] = bv;
          idx[k] = static_cast<std::uint32_t>(best);
        }
    }
  return {std::move(y), std::move(idx)};
}

template <typename Scalar>
void softmax_rows(const Tensor<Scalar>& z, Tensor<Scalar>& out) {
  const std::size_t rows = z.dim(0), cols = z.dim(1);
  for (std::size_t i = 0; i < rows; ++i) {
    const Scalar* zr = z.data() + i * cols;
    Scalar* pr = out.data() + i * cols;
    Scalar m = zr[0];
    for (std::size_t c = 1; c < cols; ++c) m = zr[c] > m ? zr[c] : m;
    Scalar denom = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      pr[c] = std::exp(zr[c] - m);
      denom += pr[c];
    }
    for (std::size_t c = 0; c < cols; ++c) pr[c] /= denom;
  }
}

}  // namespace detail

/// Execute one op on already-evaluated inputs. Shared by Graph::apply and
/// Graph::replay so a replayed graph reproduces values bit-exactly.
template <typename Scalar>
Tensor<Scalar> eval_op(OpKind op, const OpAttrs& attrs,
                       std::span<const Tensor<Scalar>* const> in) {
  using detail::check_rank;
  using detail::check_same_shape;
  auto arity = [&](std::size_t n) {
    if (in.size() != n)
      throw ContractError(std::string(op_name(op)) + ": expected " +
                          std::to_string(n) + " inputs, got " +
                          std::to_string(in.size()));
  };
  switch (op) {
    case OpKind::leaf:
      throw ContractError("eval_op: leaf has no evaluation rule");
    case OpKind::add: {
      arity(2);
      check_same_shape(op, *in[0], *in[1]);
      Tensor<Scalar> y(in[0]->shape());
      as_array(y) = as_array(*in[0]) + as_array(*in[1]);
      return y;
    }
    case OpKind::sub: {
      arity(2);
      check_same_shape(op, *in[0], *in[1]);
      Tensor<Scalar> y(in[0]->shape());
      as_array(y) = as_array(*in[0]) - as_array(*in[1]);
      return y;
    }
    case OpKind::mul: {
      arity(2);
      check_same_shape(op, *in[0], *in[1]);
      Tensor<Scalar> y(in[0]->shape());
      as_array(y) = as_array(*in[0]) * as_array(*in[1]);
      return y;
    }
    case OpKind::scale: {
      arity(1);
      Tensor<Scalar> y(in[0]->shape());
      as_array(y) = as_array(*in[0]) * static_cast<Scalar>(attrs.scalar);
      return y;
    }
    case OpKind::scale_var: {
      arity(2);
      if (in[1]->size() != 1)
        throw ShapeError("scale_var: second input must be a scalar, got " +
                         shape_str(in[1]->shape()));
      Tensor<Scalar> y(in[0]->shape());
      as_array(y) = as_array(*in[0]) * (*in[1])[0];
      return y;
    }
    case OpKind::matmul: {
      arity(2);
      check_rank(op, *in[0], 2);
      check_rank(op, *in[1], 2);
      if (in[0]->dim(1) != in[1]->dim(0))
        throw ShapeError("matmul: " + shape_str(in[0]->shape()) + " x " +
                         shape_str(in[1]->shape()));
      Tensor<Scalar> y({in[0]->dim(0), in[1]->dim(1)});
      as_matrix(y).noalias() = as_matrix(*in[0]) * as_matrix(*in[1]);
      return y;
    }
    case OpKind::transpose: {
      arity(1);
      check_rank(op, *in[0], 2);
      Tensor<Scalar> y({in[0]->dim(1), in[0]->dim(0)});
      as_matrix(y) = as_matrix(*in[0]).transpose();
      return y;
    }
    case OpKind::conv2d:
      arity(2);
      return detail::eval_conv2d(*in[0], *in[1]);
    case OpKind::conv2d_dinput:
      arity(2);
      return detail::eval_conv2d_dinput(*in[0], *in[1]);
    case OpKind::conv2d_dkernel:
      arity(2);
      return detail::eval_conv2d_dkernel(*in[0], *in[1]);
    case OpKind::add_rowvec: {
      arity(2);
      check_rank(op, *in[0], 2);
      check_rank(op, *in[1], 1);
      if (in[0]->dim(1) != in[1]->dim(0))
        throw ShapeError("add_rowvec: " + shape_str(in[0]->shape()) + " + " +
                         shape_str(in[1]->shape()));
      Tensor<Scalar> y(in[0]->shape());
      as_matrix(y) = as_matrix(*in[0]);
      as_matrix(y).rowwise() +=
          ConstMatrixMap<Scalar>(in[1]->data(), 1,
                                 static_cast<Eigen::Index>(in[1]->dim(0)))
              .row(0);
      return y;
    }
    case OpKind::col_sum: {
      arity(1);
      check_rank(op, *in[0], 2);
      Tensor<Scalar> y({in[0]->dim(1)});
      MatrixMap<Scalar>(y.data(), 1, static_cast<Eigen::Index>(y.dim(0)))
          .row(0) = as_matrix(*in[0]).colwise().sum();
      return y;
    }
    case OpKind::broadcast_rows: {
      arity(1);
      check_rank(op, *in[0], 1);
      if (attrs.shape.size() != 1)
        throw ContractError("broadcast_rows: row count attr required");
      const std::size_t rows = attrs.shape[0];
      Tensor<Scalar> y({rows, in[0]->dim(0)});
      as_matrix(y).rowwise() =
          ConstMatrixMap<Scalar>(in[0]->data(), 1,
                                 static_cast<Eigen::Index>(in[0]->dim(0)))
              .row(0);
      return y;
    }
    case OpKind::add_chanbias: {
      arity(2);
      check_rank(op, *in[0], 4);
      check_rank(op, *in[1], 1);
      if (in[0]->dim(1) != in[1]->dim(0))
        throw ShapeError("add_chanbias: " + shape_str(in[0]->shape()) + " + " +
                         shape_str(in[1]->shape()));
      Tensor<Scalar> y = *in[0];
      const std::size_t batch = y.dim(0), ch = y.dim(1),
                        hw = y.dim(2) * y.dim(3);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < ch; ++c) {
          Scalar* p = y.data() + (b * ch + c) * hw;
          const Scalar v = (*in[1])[c];
          for (std::size_t k = 0; k < hw; ++k) p[k] += v;
        }
      return y;
    }
    case OpKind::chan_sum: {
      arity(1);
      check_rank(op, *in[0], 4);
      const std::size_t batch = in[0]->dim(0), ch = in[0]->dim(1),
                        hw = in[0]->dim(2) * in[0]->dim(3);
      Tensor<Scalar> y({ch});
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < ch; ++c) {
          const Scalar* p = in[0]->data() + (b * ch + c) * hw;
          Scalar acc = 0;
          for (std::size_t k = 0; k < hw; ++k) acc += p[k];
          y[c] += acc;
        }
      return y;
    }
    case OpKind::broadcast_chan: {
      arity(1);
      check_rank(op, *in[0], 1);
      if (attrs.shape.size() != 4 || attrs.shape[1] != in[0]->dim(0))
        throw ContractError("broadcast_chan: target shape attr must be rank 4 "
                            "with matching channels");
      Tensor<Scalar> y(attrs.shape);
      const std::size_t batch = y.dim(0), ch = y.dim(1),
                        hw = y.dim(2) * y.dim(3);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < ch; ++c) {
          Scalar* p = y.data() + (b * ch + c) * hw;
          const Scalar v = (*in[0])[c];
          for (std::size_t k = 0; k < hw; ++k) p[k] = v;
        }
      return y;
    }
    case OpKind::maxpool2x2:
      throw ContractError("eval_op: maxpool2x2 handled by apply/replay");
    case OpKind::maxunpool2x2: {
      arity(1);
      if (attrs.indices.size() != in[0]->size())
        throw ContractError("maxunpool2x2: index count mismatch");
      Tensor<Scalar> y(attrs.shape);
      for (std::size_t k = 0; k < attrs.indices.size(); ++k)
        y[attrs.indices[k]] += (*in[0])[k];
      return y;
    }
    case OpKind::pool_take: {
      arity(1);
      Tensor<Scalar> y(attrs.shape);
      if (attrs.indices.size() != y.size())
        throw ContractError("pool_take: index count mismatch");
      for (std::size_t k = 0; k < attrs.indices.size(); ++k)
        y[k] = (*in[0])[attrs.indices[k]];
      return y;
    }
    case OpKind::relu: {
      arity(1);
      Tensor<Scalar> y(in[0]->shape());
      as_array(y) = as_array(*in[0]).max(Scalar{0});
      return y;
    }
    case OpKind::relu_mask: {
      arity(1);
      Tensor<Scalar> y(in[0]->shape());
      for (std::size_t k = 0; k < y.size(); ++k)
        y[k] = (*in[0])[k] > Scalar{0} ? Scalar{1} : Scalar{0};
      return y;
    }
    case OpKind::tanh: {
      arity(1);
      Tensor<Scalar> y(in[0]->shape());
      for (std::size_t k = 0; k < y.size(); ++k)
        y[k] = std::tanh((*in[0])[k]);
      return y;
    }
    case OpKind::reshape: {
      arity(1);
      return in[0]->reshaped(attrs.shape);
    }
    case OpKind::sum: {
      arity(1);
      Scalar acc = 0;
      for (std::size_t k = 0; k < in[0]->size(); ++k) acc += (*in[0])[k];
      return Tensor<Scalar>::scalar(acc);
    }
    case OpKind::mean: {
      arity(1);
      if (in[0]->size() == 0) throw ContractError("mean: empty tensor");
      Scalar acc = 0;
      for (std::size_t k = 0; k < in[0]->size(); ++k) acc += (*in[0])[k];
      return Tensor<Scalar>::scalar(acc /
                                    static_cast<Scalar>(in[0]->size()));
    }
    case OpKind::spread: {
      arity(1);
      if (in[0]->size() != 1)
        throw ShapeError("spread: input must be a scalar");
      return Tensor<Scalar>::full(attrs.shape, (*in[0])[0]);
    }
    case OpKind::row_sum: {
      arity(1);
      check_rank(op, *in[0], 2);
      Tensor<Scalar> y({in[0]->dim(0), 1});
      MatrixMap<Scalar>(y.data(), static_cast<Eigen::Index>(y.dim(0)), 1)
          .col(0) = as_matrix(*in[0]).rowwise().sum();
      return y;
    }
    case OpKind::broadcast_cols: {
      arity(1);
      check_rank(op, *in[0], 2);
      if (in[0]->dim(1) != 1)
        throw ShapeError("broadcast_cols: input must be [B,1]");
      if (attrs.shape.size() != 1)
        throw ContractError("broadcast_cols: column count attr required");
      const std::size_t cols = attrs.shape[0];
      Tensor<Scalar> y({in[0]->dim(0), cols});
      for (std::size_t i = 0; i < y.dim(0); ++i) {
        const Scalar v = (*in[0])[i];
        Scalar* p = y.data() + i * cols;
        for (std::size_t c = 0; c < cols; ++c) p[c] = v;
      }
      return y;
    }
    case OpKind::softmax: {
      arity(1);
      check_rank(op, *in[0], 2);
      Tensor<Scalar> y(in[0]->shape());
      detail::softmax_rows(*in[0], y);
      return y;
    }
    case OpKind::softmax_cross_entropy: {
      arity(2);
      check_rank(op, *in[0], 2);
      check_same_shape(op, *in[0], *in[1]);
      const std::size_t rows = in[0]->dim(0), cols = in[0]->dim(1);
      if (rows == 0) throw ContractError("softmax_cross_entropy: empty batch");
      Scalar total = 0;
      for (std::size_t i = 0; i < rows; ++i) {
        const Scalar* zr = in[0]->data() + i * cols;
        const Scalar* tr = in[1]->data() + i * cols;
        Scalar m = zr[0];
        for (std::size_t c = 1; c < cols; ++c) m = zr[c] > m ? zr[c] : m;
        Scalar lse = 0;
        Scalar dot = 0;
        for (std::size_t c = 0; c < cols; ++c) {
          lse += std::exp(zr[c] - m);
          dot += zr[c] * tr[c];
        }
        total += m + std::log(lse) - dot;
      }
      return Tensor<Scalar>::scalar(total / static_cast<Scalar>(rows));
    }
  }
  throw ContractError("eval_op: unknown op");
}

/// Append-only record of differentiable operations. Construction and
/// backward are single-threaded per graph; independent graphs are
/// independent. Node ids are topologically ordered by construction.
template <typename Scalar>
class Graph {
 public:
  struct Node {
    OpKind op = OpKind::leaf;
    std::vector<std::uint32_t> inputs;
    OpAttrs attrs;
    Tensor<Scalar> value;
    bool requires_grad = false;
  };

  Var leaf(Tensor<Scalar> value, bool requires_grad = false) {
    Node n;
    n.op = OpKind::leaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  Var constant(Tensor<Scalar> value) { return leaf(std::move(value), false); }

  Var apply(OpKind op, std::span<const Var> inputs, OpAttrs attrs = {}) {
    Node n;
    n.op = op;
    n.attrs = std::move(attrs);
    n.inputs.reserve(inputs.size());
    std::vector<const Tensor<Scalar>*> vals;
    vals.reserve(inputs.size());
    for (Var v : inputs) {
      if (v.id >= nodes_.size())
        throw ContractError("apply: input var not in graph");
      n.inputs.push_back(v.id);
      n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
      vals.push_back(&nodes_[v.id].value);
    }
    if (op == OpKind::relu_mask) n.requires_grad = false;
    if (op == OpKind::maxpool2x2) {
      if (vals.size() != 1) throw ContractError("maxpool2x2: one input");
      auto [y, idx] = detail::eval_maxpool2x2(*vals[0]);
      n.value = std::move(y);
      n.attrs.indices = std::move(idx);
    } else {
      n.value = eval_op<Scalar>(op, n.attrs, vals);
    }
    if (!n.value.all_finite())
      throw NumericError(std::string(op_name(op)) +
                         " produced a non-finite value");
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  Var apply(OpKind op, std::initializer_list<Var> inputs, OpAttrs attrs = {}) {
    return apply(op, std::span<const Var>(inputs.begin(), inputs.size()),
                 std::move(attrs));
  }

  const Tensor<Scalar>& value(Var v) const { return node(v).value; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) throw ContractError("var not in graph");
    return nodes_[v.id];
  }

  std::size_t size() const { return nodes_.size(); }

  /// Drop every node with id >= n (scratch regions emitted by grad()).
  void truncate(std::size_t n) {
    if (n > nodes_.size()) throw ContractError("truncate beyond graph size");
    nodes_.resize(n);
  }

  /// Re-execute every recorded op from the recorded leaves; returns the
  /// largest absolute deviation from the recorded values (0 means the graph
  /// replayed bit-exactly).
  double replay_max_abs_diff() const {
    double worst = 0.0;
    std::vector<Tensor<Scalar>> computed(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Node& n = nodes_[i];
      if (n.op == OpKind::leaf) {
        computed[i] = n.value;
        continue;
      }
      std::vector<const Tensor<Scalar>*> vals;
      vals.reserve(n.inputs.size());
      for (std::uint32_t id : n.inputs) vals.push_back(&computed[id]);
      if (n.op == OpKind::maxpool2x2) {
        auto [y, idx] = detail::eval_maxpool2x2(*vals[0]);
        computed[i] = std::move(y);
      } else {
        computed[i] = eval_op<Scalar>(n.op, n.attrs, vals);
      }
      for (std::size_t k = 0; k < computed[i].size(); ++k) {
        double d = std::abs(static_cast<double>(computed[i][k]) -
                            static_cast<double>(n.value[k]));
        worst = d > worst ? d : worst;
      }
    }
    return worst;
  }

 private:
  std::vector<Node> nodes_;
};

}  // namespace dr
