// SPDX-License-Identifier: Apache-2.0
#include "exsup/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace exsup {

Eigen::Index numel(const Dims& dims) {
  Eigen::Index n = 1;
  for (Eigen::Index d : dims) n *= d;
  return n;
}

std::string dims_to_string(const Dims& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << ',';
    os << dims[i];
  }
  os << ']';
  return os.str();
}

namespace {

[[noreturn]] void shape_error(const std::string& what) { throw std::invalid_argument(what); }

void check_rank(const Tensor& t, std::size_t rank, const char* op, const char* arg) {
  if (t.rank() != rank) {
    shape_error(std::string(op) + ": " + arg + " must have rank " + std::to_string(rank) +
                ", got shape " + dims_to_string(t.shape()));
  }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    shape_error(std::string(op) + ": shape mismatch " + dims_to_string(a.shape()) + " vs " +
                dims_to_string(b.shape()));
  }
}

}  // namespace

Tensor::Tensor(Dims shape, Array data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != numel(shape_)) {
    shape_error("tensor: payload has " + std::to_string(data_.size()) + " values, shape " +
                dims_to_string(shape_) + " wants " + std::to_string(numel(shape_)));
  }
}

Tensor Tensor::constant(Dims shape, Scalar value) {
  const Eigen::Index n = numel(shape);
  return Tensor(std::move(shape), Array::Constant(n, value));
}

Tensor Tensor::zeros(Dims shape) { return constant(std::move(shape), 0.0); }

Tensor Tensor::scalar(Scalar value) { return Tensor({1}, Array::Constant(1, value)); }

Scalar Tensor::value() const {
  if (data_.size() != 1) {
    shape_error("value(): tensor has shape " + dims_to_string(shape_) + ", expected one element");
  }
  return data_[0];
}

Tensor Tape::leaf(Dims shape, Array data) {
  Tensor t(std::move(shape), std::move(data));
  nodes_.push_back(Node{t.size(), true, {}});
  leaf_grads_.emplace_back();
  t.tape_ = this;
  t.node_ = static_cast<int>(nodes_.size()) - 1;
  return t;
}

Tensor Tape::leaf(const Tensor& value) { return leaf(value.shape(), value.data()); }

int Tape::record(Eigen::Index size, Backward backward) {
  nodes_.push_back(Node{size, false, std::move(backward)});
  leaf_grads_.emplace_back();
  return static_cast<int>(nodes_.size()) - 1;
}

Array& Tape::sweep_grad(int node) {
  Array& g = (*sweep_)[static_cast<std::size_t>(node)];
  if (g.size() == 0) g = Array::Zero(nodes_[static_cast<std::size_t>(node)].size);
  return g;
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    shape_error("backward: loss must be scalar, got shape " + dims_to_string(loss.shape()));
  }
  if (loss.tape_ != this || loss.node_ < 0) {
    throw std::logic_error("backward: loss does not live on this tape");
  }
  std::vector<Array> sweep(nodes_.size());
  sweep_ = &sweep;
  sweep[static_cast<std::size_t>(loss.node_)] = Array::Ones(1);
  for (int i = loss.node_; i >= 0; --i) {
    Array& g = sweep[static_cast<std::size_t>(i)];
    if (g.size() == 0) continue;  // node does not influence the loss
    const Node& node = nodes_[static_cast<std::size_t>(i)];
    if (node.is_leaf) {
      Array& acc = leaf_grads_[static_cast<std::size_t>(i)];
      if (acc.size() == 0) acc = Array::Zero(node.size);
      acc += g;
    } else {
      node.backward(g, *this);
    }
    g.resize(0);  // free as we go; upstream of node i is final once visited
  }
  sweep_ = nullptr;
}

const Array& Tape::grad(const Tensor& leaf) const {
  if (leaf.tape_ != this || leaf.node_ < 0 ||
      !nodes_[static_cast<std::size_t>(leaf.node_)].is_leaf) {
    throw std::logic_error("grad: tensor is not a leaf of this tape");
  }
  Array& g = leaf_grads_[static_cast<std::size_t>(leaf.node_)];
  if (g.size() == 0) g = Array::Zero(leaf.size());
  return g;
}

void Tape::clear_grads() {
  for (Array& g : leaf_grads_) g.resize(0);
}

Tensor make_op(Dims shape, Array data, std::initializer_list<const Tensor*> inputs,
               Tape::Backward backward) {
  Tape* tape = nullptr;
  for (const Tensor* in : inputs) {
    if (!in->on_tape()) continue;
    if (tape && tape != in->tape()) {
      throw std::logic_error("op combines tensors from different tapes");
    }
    tape = in->tape();
  }
  Tensor out(std::move(shape), std::move(data));
  if (tape) {
    out.tape_ = tape;
    out.node_ = tape->record(out.size(), std::move(backward));
  }
  return out;
}

// ---------------------------------------------------------------------------
// elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  const int an = a.node(), bn = b.node();
  return make_op(a.shape(), a.data() + b.data(), {&a, &b}, [an, bn](const Array& up, Tape& t) {
    if (an >= 0) t.add_grad(an, up);
    if (bn >= 0) t.add_grad(bn, up);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  const int an = a.node(), bn = b.node();
  return make_op(a.shape(), a.data() - b.data(), {&a, &b}, [an, bn](const Array& up, Tape& t) {
    if (an >= 0) t.add_grad(an, up);
    if (bn >= 0) t.add_grad(bn, -up);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  const int an = a.node(), bn = b.node();
  Array av = (bn >= 0) ? a.data() : Array();  // captured only when needed
  Array bv = (an >= 0) ? b.data() : Array();
  return make_op(a.shape(), a.data() * b.data(), {&a, &b},
                 [an, bn, av = std::move(av), bv = std::move(bv)](const Array& up, Tape& t) {
                   if (an >= 0) t.add_grad(an, up * bv);
                   if (bn >= 0) t.add_grad(bn, up * av);
                 });
}

Tensor div(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "div");
  const int an = a.node(), bn = b.node();
  Array av = (bn >= 0) ? a.data() : Array();
  Array bv = (an >= 0 || bn >= 0) ? b.data() : Array();
  return make_op(a.shape(), a.data() / b.data(), {&a, &b},
                 [an, bn, av = std::move(av), bv = std::move(bv)](const Array& up, Tape& t) {
                   if (an >= 0) t.add_grad(an, up / bv);
                   if (bn >= 0) t.add_grad(bn, -up * av / (bv * bv));
                 });
}

Tensor add_scalar(const Tensor& a, Scalar s) {
  const int an = a.node();
  return make_op(a.shape(), a.data() + s, {&a}, [an](const Array& up, Tape& t) {
    if (an >= 0) t.add_grad(an, up);
  });
}

Tensor mul_scalar(const Tensor& a, Scalar s) {
  const int an = a.node();
  return make_op(a.shape(), a.data() * s, {&a}, [an, s](const Array& up, Tape& t) {
    if (an >= 0) t.add_grad(an, up * s);
  });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor relu(const Tensor& a) {
  const int an = a.node();
  Array mask = (an >= 0) ? Array((a.data() > 0.0).cast<Scalar>()) : Array();
  return make_op(a.shape(), a.data().max(0.0), {&a},
                 [an, mask = std::move(mask)](const Array& up, Tape& t) {
                   if (an >= 0) t.add_grad(an, up * mask);
                 });
}

Tensor tanh(const Tensor& a) {
  const int an = a.node();
  Array out = a.data().tanh();
  Array saved = (an >= 0) ? out : Array();
  return make_op(a.shape(), std::move(out), {&a},
                 [an, saved = std::move(saved)](const Array& up, Tape& t) {
                   if (an >= 0) t.add_grad(an, up * (1.0 - saved.square()));
                 });
}

Tensor sigmoid(const Tensor& a) {
  const int an = a.node();
  Array out = 0.5 * (0.5 * a.data()).tanh() + 0.5;  // stable at large |x|
  Array saved = (an >= 0) ? out : Array();
  return make_op(a.shape(), std::move(out), {&a},
                 [an, saved = std::move(saved)](const Array& up, Tape& t) {
                   if (an >= 0) t.add_grad(an, up * saved * (1.0 - saved));
                 });
}

Tensor abs(const Tensor& a) {
  const int an = a.node();
  Array sgn = (an >= 0) ? Array(a.data().sign()) : Array();
  return make_op(a.shape(), a.data().abs(), {&a},
                 [an, sgn = std::move(sgn)](const Array& up, Tape& t) {
                   if (an >= 0) t.add_grad(an, up * sgn);
                 });
}

Tensor clamp(const Tensor& a, Scalar lo, Scalar hi) {
  if (!(lo <= hi)) shape_error("clamp: lo must not exceed hi");
  const int an = a.node();
  Array mask = (an >= 0) ? Array(((a.data() > lo) && (a.data() < hi)).cast<Scalar>()) : Array();
  return make_op(a.shape(), a.data().max(lo).min(hi), {&a},
                 [an, mask = std::move(mask)](const Array& up, Tape& t) {
                   if (an >= 0) t.add_grad(an, up * mask);
                 });
}

Tensor log(const Tensor& a) {
  const int an = a.node();
  Array av = (an >= 0) ? a.data() : Array();
  return make_op(a.shape(), a.data().log(), {&a},
                 [an, av = std::move(av)](const Array& up, Tape& t) {
                   if (an >= 0) t.add_grad(an, up / av);
                 });
}

Tensor reshape(const Tensor& a, Dims shape) {
  if (numel(shape) != a.size()) {
    shape_error("reshape: cannot view " + dims_to_string(a.shape()) + " as " +
                dims_to_string(shape));
  }
  const int an = a.node();
  return make_op(std::move(shape), a.data(), {&a}, [an](const Array& up, Tape& t) {
    if (an >= 0) t.add_grad(an, up);
  });
}

// ---------------------------------------------------------------------------
// reductions

Tensor sum(const Tensor& a) {
  const int an = a.node();
  const Eigen::Index n = a.size();
  return make_op({1}, Array::Constant(1, a.data().sum()), {&a},
                 [an, n](const Array& up, Tape& t) {
                   if (an >= 0) t.add_grad(an, Array::Constant(n, up[0]));
                 });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) shape_error("mean: empty tensor");
  const int an = a.node();
  const Eigen::Index n = a.size();
  return make_op({1}, Array::Constant(1, a.data().mean()), {&a},
                 [an, n](const Array& up, Tape& t) {
                   if (an >= 0) t.add_grad(an, Array::Constant(n, up[0] / static_cast<Scalar>(n)));
                 });
}

// ---------------------------------------------------------------------------
// linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank(a, 2, "matmul", "lhs");
  check_rank(b, 2, "matmul", "rhs");
  if (a.dim(1) != b.dim(0)) {
    shape_error("matmul: inner dimensions differ, " + dims_to_string(a.shape()) + " x " +
                dims_to_string(b.shape()));
  }
  const Eigen::Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Array out(m * n);
  MapMatR(out.data(), m, n).noalias() =
      MapConstMatR(a.data().data(), m, k) * MapConstMatR(b.data().data(), k, n);
  const int an = a.node(), bn = b.node();
  Array av = (bn >= 0) ? a.data() : Array();
  Array bv = (an >= 0) ? b.data() : Array();
  return make_op({m, n}, std::move(out), {&a, &b},
                 [an, bn, av = std::move(av), bv = std::move(bv), m, k, n](const Array& up,
                                                                           Tape& t) {
                   MapConstMatR upm(up.data(), m, n);
                   if (an >= 0) {
                     Array& ga = t.sweep_grad(an);
                     MapMatR(ga.data(), m, k).noalias() +=
                         upm * MapConstMatR(bv.data(), k, n).transpose();
                   }
                   if (bn >= 0) {
                     Array& gb = t.sweep_grad(bn);
                     MapMatR(gb.data(), k, n).noalias() +=
                         MapConstMatR(av.data(), m, k).transpose() * upm;
                   }
                 });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  check_rank(x, 2, "linear", "input");
  check_rank(w, 2, "linear", "weight");
  check_rank(b, 1, "linear", "bias");
  if (x.dim(1) != w.dim(0) || w.dim(1) != b.dim(0)) {
    shape_error("linear: incompatible shapes " + dims_to_string(x.shape()) + " x " +
                dims_to_string(w.shape()) + " + " + dims_to_string(b.shape()));
  }
  const Eigen::Index n = x.dim(0), in = w.dim(0), out_dim = w.dim(1);
  Array out(n * out_dim);
  MapMatR outm(out.data(), n, out_dim);
  outm.noalias() = MapConstMatR(x.data().data(), n, in) * MapConstMatR(w.data().data(), in, out_dim);
  outm.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data().data(), out_dim);
  const int xn = x.node(), wn = w.node(), bn = b.node();
  Array xv = (wn >= 0) ? x.data() : Array();
  Array wv = (xn >= 0) ? w.data() : Array();
  return make_op({n, out_dim}, std::move(out), {&x, &w, &b},
                 [xn, wn, bn, xv = std::move(xv), wv = std::move(wv), n, in,
                  out_dim](const Array& up, Tape& t) {
                   MapConstMatR upm(up.data(), n, out_dim);
                   if (xn >= 0) {
                     MapMatR(t.sweep_grad(xn).data(), n, in).noalias() +=
                         upm * MapConstMatR(wv.data(), in, out_dim).transpose();
                   }
                   if (wn >= 0) {
                     MapMatR(t.sweep_grad(wn).data(), in, out_dim).noalias() +=
                         MapConstMatR(xv.data(), n, in).transpose() * upm;
                   }
                   if (bn >= 0) {
                     Eigen::Map<Eigen::RowVectorXd>(t.sweep_grad(bn).data(), out_dim) +=
                         upm.colwise().sum();
                   }
                 });
}

// ---------------------------------------------------------------------------
// convolution via batched im2col + GEMM

Eigen::Index conv_output_extent(Eigen::Index in, Eigen::Index kernel, Eigen::Index stride,
                                Eigen::Index padding) {
  if (stride < 1) shape_error("conv2d: stride must be positive");
  if (padding < 0) shape_error("conv2d: padding must be non-negative");
  const Eigen::Index span = in + 2 * padding - kernel;
  if (span < 0 || span % stride != 0) {
    shape_error("conv2d: extent " + std::to_string(in) + " with kernel " + std::to_string(kernel) +
                ", stride " + std::to_string(stride) + ", padding " + std::to_string(padding) +
                " does not produce an integral output size");
  }
  return span / stride + 1;
}

namespace {

struct ConvGeom {
  Eigen::Index n, cin, h, w, cout, k, stride, pad, oh, ow;
  Eigen::Index patch() const { return cin * k * k; }
  Eigen::Index out_hw() const { return oh * ow; }
};

// cols is (cin*k*k) x (n*oh*ow), row-major
void im2col(const Scalar* in, const ConvGeom& g, Scalar* cols) {
  const Eigen::Index ohw = g.out_hw(), ncols = g.n * ohw;
  for (Eigen::Index c = 0; c < g.cin; ++c) {
    for (Eigen::Index ky = 0; ky < g.k; ++ky) {
      for (Eigen::Index kx = 0; kx < g.k; ++kx) {
        Scalar* row = cols + ((c * g.k + ky) * g.k + kx) * ncols;
        for (Eigen::Index n = 0; n < g.n; ++n) {
          const Scalar* img = in + (n * g.cin + c) * g.h * g.w;
          Scalar* dst = row + n * ohw;
          for (Eigen::Index oy = 0; oy < g.oh; ++oy) {
            const Eigen::Index iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.h) {
              std::fill(dst, dst + g.ow, 0.0);
              dst += g.ow;
              continue;
            }
            const Scalar* src = img + iy * g.w;
            for (Eigen::Index ox = 0; ox < g.ow; ++ox) {
              const Eigen::Index ix = ox * g.stride - g.pad + kx;
              *dst++ = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
            }
          }
        }
      }
    }
  }
}

// scatter-add of dCols back into the input gradient; mirrors im2col
void col2im_add(const Scalar* cols, const ConvGeom& g, Scalar* din) {
  const Eigen::Index ohw = g.out_hw(), ncols = g.n * ohw;
  for (Eigen::Index c = 0; c < g.cin; ++c) {
    for (Eigen::Index ky = 0; ky < g.k; ++ky) {
      for (Eigen::Index kx = 0; kx < g.k; ++kx) {
        const Scalar* row = cols + ((c * g.k + ky) * g.k + kx) * ncols;
        for (Eigen::Index n = 0; n < g.n; ++n) {
          Scalar* img = din + (n * g.cin + c) * g.h * g.w;
          const Scalar* src = row + n * ohw;
          for (Eigen::Index oy = 0; oy < g.oh; ++oy) {
            const Eigen::Index iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.h) {
              src += g.ow;
              continue;
            }
            Scalar* dst = img + iy * g.w;
            for (Eigen::Index ox = 0; ox < g.ow; ++ox, ++src) {
              const Eigen::Index ix = ox * g.stride - g.pad + kx;
              if (ix >= 0 && ix < g.w) dst[ix] += *src;
            }
          }
        }
      }
    }
  }
}

// GEMM result rows are output channels over (n, pixel) columns; the tensor
// layout wants [n][cout][pixel]
void scatter_out(const Array& gemm, const ConvGeom& g, Scalar* out) {
  const Eigen::Index ohw = g.out_hw(), ncols = g.n * ohw;
  for (Eigen::Index n = 0; n < g.n; ++n) {
    for (Eigen::Index c = 0; c < g.cout; ++c) {
      const Scalar* src = gemm.data() + c * ncols + n * ohw;
      std::copy(src, src + ohw, out + (n * g.cout + c) * ohw);
    }
  }
}

Array gather_out(const Scalar* grad, const ConvGeom& g) {
  const Eigen::Index ohw = g.out_hw(), ncols = g.n * ohw;
  Array m(g.cout * ncols);
  for (Eigen::Index n = 0; n < g.n; ++n) {
    for (Eigen::Index c = 0; c < g.cout; ++c) {
      const Scalar* src = grad + (n * g.cout + c) * ohw;
      std::copy(src, src + ohw, m.data() + c * ncols + n * ohw);
    }
  }
  return m;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, Eigen::Index stride,
              Eigen::Index padding) {
  check_rank(input, 4, "conv2d", "input");
  check_rank(kernel, 4, "conv2d", "kernel");
  check_rank(bias, 1, "conv2d", "bias");
  if (kernel.dim(2) != kernel.dim(3)) {
    shape_error("conv2d: kernel must be square, got " + dims_to_string(kernel.shape()));
  }
  if (input.dim(1) != kernel.dim(1)) {
    shape_error("conv2d: input has " + std::to_string(input.dim(1)) + " channels, kernel expects " +
                std::to_string(kernel.dim(1)));
  }
  if (bias.dim(0) != kernel.dim(0)) {
    shape_error("conv2d: bias size " + std::to_string(bias.dim(0)) + " does not match " +
                std::to_string(kernel.dim(0)) + " output channels");
  }
  ConvGeom g;
  g.n = input.dim(0);
  g.cin = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.cout = kernel.dim(0);
  g.k = kernel.dim(2);
  g.stride = stride;
  g.pad = padding;
  g.oh = conv_output_extent(g.h, g.k, stride, padding);
  g.ow = conv_output_extent(g.w, g.k, stride, padding);

  const Eigen::Index ncols = g.n * g.out_hw();
  Array cols(g.patch() * ncols);
  im2col(input.data().data(), g, cols.data());

  Array gemm(g.cout * ncols);
  MapMatR(gemm.data(), g.cout, ncols).noalias() =
      MapConstMatR(kernel.data().data(), g.cout, g.patch()) *
      MapConstMatR(cols.data(), g.patch(), ncols);
  for (Eigen::Index c = 0; c < g.cout; ++c) {
    gemm.segment(c * ncols, ncols) += bias.data()[c];
  }
  Array out(g.n * g.cout * g.out_hw());
  scatter_out(gemm, g, out.data());

  const int in_node = input.node(), k_node = kernel.node(), b_node = bias.node();
  // the column buffer is rebuilt in backward; capturing it would hold
  // patch*n*oh*ow doubles per conv for the whole step
  Array in_saved = (k_node >= 0) ? input.data() : Array();
  Array k_saved = (in_node >= 0) ? kernel.data() : Array();
  return make_op(
      {g.n, g.cout, g.oh, g.ow}, std::move(out), {&input, &kernel, &bias},
      [g, in_node, k_node, b_node, in_saved = std::move(in_saved),
       k_saved = std::move(k_saved)](const Array& up, Tape& t) {
        const Eigen::Index ncols = g.n * g.out_hw();
        if (b_node >= 0) {
          Array& gb = t.sweep_grad(b_node);
          for (Eigen::Index n = 0; n < g.n; ++n)
            for (Eigen::Index c = 0; c < g.cout; ++c)
              gb[c] += up.segment((n * g.cout + c) * g.out_hw(), g.out_hw()).sum();
        }
        if (in_node < 0 && k_node < 0) return;
        const Array up_mat = gather_out(up.data(), g);
        if (k_node >= 0) {
          Array cols(g.patch() * ncols);
          im2col(in_saved.data(), g, cols.data());
          MapMatR(t.sweep_grad(k_node).data(), g.cout, g.patch()).noalias() +=
              MapConstMatR(up_mat.data(), g.cout, ncols) *
              MapConstMatR(cols.data(), g.patch(), ncols).transpose();
        }
        if (in_node >= 0) {
          Array dcols(g.patch() * ncols);
          MapMatR(dcols.data(), g.patch(), ncols).noalias() =
              MapConstMatR(k_saved.data(), g.cout, g.patch()).transpose() *
              MapConstMatR(up_mat.data(), g.cout, ncols);
          col2im_add(dcols.data(), g, t.sweep_grad(in_node).data());
        }
      });
}

// ---------------------------------------------------------------------------
// pooling / resampling

Tensor max_pool2d(const Tensor& input, Eigen::Index window, Eigen::Index stride) {
  check_rank(input, 4, "max_pool2d", "input");
  if (window < 1 || stride < 1) shape_error("max_pool2d: window and stride must be positive");
  const Eigen::Index n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (window > h || window > w) {
    shape_error("max_pool2d: window " + std::to_string(window) + " exceeds input " +
                dims_to_string(input.shape()));
  }
  const Eigen::Index oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;
  Array out(n * c * oh * ow);
  std::vector<Eigen::Index> argmax(static_cast<std::size_t>(n * c * oh * ow));
  const Scalar* src = input.data().data();
  Eigen::Index o = 0;
  for (Eigen::Index img = 0; img < n * c; ++img) {
    const Scalar* plane = src + img * h * w;
    for (Eigen::Index oy = 0; oy < oh; ++oy) {
      for (Eigen::Index ox = 0; ox < ow; ++ox, ++o) {
        Scalar best = -std::numeric_limits<Scalar>::infinity();
        Eigen::Index best_idx = 0;
        for (Eigen::Index ky = 0; ky < window; ++ky) {
          const Eigen::Index iy = oy * stride + ky;
          for (Eigen::Index kx = 0; kx < window; ++kx) {
            const Eigen::Index idx = iy * w + ox * stride + kx;
            if (plane[idx] > best) {  // strict: ties keep the first index
              best = plane[idx];
              best_idx = img * h * w + idx;
            }
          }
        }
        out[o] = best;
        argmax[static_cast<std::size_t>(o)] = best_idx;
      }
    }
  }
  const int in_node = input.node();
  if (in_node < 0) argmax.clear();
  return make_op({n, c, oh, ow}, std::move(out), {&input},
                 [in_node, argmax = std::move(argmax)](const Array& up, Tape& t) {
                   if (in_node < 0) return;
                   Array& g = t.sweep_grad(in_node);
                   for (std::size_t i = 0; i < argmax.size(); ++i)
                     g[argmax[i]] += up[static_cast<Eigen::Index>(i)];
                 });
}

Tensor global_avg_pool(const Tensor& input) {
  check_rank(input, 4, "global_avg_pool", "input");
  const Eigen::Index n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  Array out(n * c);
  for (Eigen::Index i = 0; i < n * c; ++i) out[i] = input.data().segment(i * hw, hw).mean();
  const int in_node = input.node();
  return make_op({n, c}, std::move(out), {&input}, [in_node, n, c, hw](const Array& up, Tape& t) {
    if (in_node < 0) return;
    Array& g = t.sweep_grad(in_node);
    for (Eigen::Index i = 0; i < n * c; ++i)
      g.segment(i * hw, hw) += up[i] / static_cast<Scalar>(hw);
  });
}

namespace {

struct LerpTable {
  std::vector<Eigen::Index> lo, hi;
  std::vector<Scalar> frac;
};

// align-corners mapping: out i -> in i*(in-1)/(out-1); out extent 1 pins to 0
LerpTable lerp_table(Eigen::Index in, Eigen::Index out) {
  LerpTable t;
  t.lo.resize(static_cast<std::size_t>(out));
  t.hi.resize(static_cast<std::size_t>(out));
  t.frac.resize(static_cast<std::size_t>(out));
  for (Eigen::Index i = 0; i < out; ++i) {
    Scalar pos = (out == 1) ? 0.0
                            : static_cast<Scalar>(i) * static_cast<Scalar>(in - 1) /
                                  static_cast<Scalar>(out - 1);
    Eigen::Index lo = static_cast<Eigen::Index>(pos);
    if (lo > in - 1) lo = in - 1;
    const Eigen::Index hi = std::min(lo + 1, in - 1);
    t.lo[static_cast<std::size_t>(i)] = lo;
    t.hi[static_cast<std::size_t>(i)] = hi;
    t.frac[static_cast<std::size_t>(i)] = pos - static_cast<Scalar>(lo);
  }
  return t;
}

}  // namespace

Tensor upsample_bilinear(const Tensor& input, Eigen::Index out_h, Eigen::Index out_w) {
  check_rank(input, 4, "upsample_bilinear", "input");
  const Eigen::Index n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (out_h < h || out_w < w) {
    shape_error("upsample_bilinear: output " + std::to_string(out_h) + "x" +
                std::to_string(out_w) + " smaller than input " + dims_to_string(input.shape()));
  }
  const LerpTable ty = lerp_table(h, out_h), tx = lerp_table(w, out_w);
  Array out(n * c * out_h * out_w);
  const Scalar* src = input.data().data();
  Eigen::Index o = 0;
  for (Eigen::Index img = 0; img < n * c; ++img) {
    const Scalar* plane = src + img * h * w;
    for (Eigen::Index y = 0; y < out_h; ++y) {
      const auto yl = ty.lo[static_cast<std::size_t>(y)], yh = ty.hi[static_cast<std::size_t>(y)];
      const Scalar fy = ty.frac[static_cast<std::size_t>(y)];
      for (Eigen::Index x = 0; x < out_w; ++x, ++o) {
        const auto xl = tx.lo[static_cast<std::size_t>(x)], xh = tx.hi[static_cast<std::size_t>(x)];
        const Scalar fx = tx.frac[static_cast<std::size_t>(x)];
        const Scalar top = plane[yl * w + xl] * (1.0 - fx) + plane[yl * w + xh] * fx;
        const Scalar bot = plane[yh * w + xl] * (1.0 - fx) + plane[yh * w + xh] * fx;
        out[o] = top * (1.0 - fy) + bot * fy;
      }
    }
  }
  const int in_node = input.node();
  return make_op({n, c, out_h, out_w}, std::move(out), {&input},
                 [in_node, ty, tx, n, c, h, w, out_h, out_w](const Array& up, Tape& t) {
                   if (in_node < 0) return;
                   Array& g = t.sweep_grad(in_node);
                   Eigen::Index o = 0;
                   for (Eigen::Index img = 0; img < n * c; ++img) {
                     Scalar* plane = g.data() + img * h * w;
                     for (Eigen::Index y = 0; y < out_h; ++y) {
                       const auto yl = ty.lo[static_cast<std::size_t>(y)];
                       const auto yh = ty.hi[static_cast<std::size_t>(y)];
                       const Scalar fy = ty.frac[static_cast<std::size_t>(y)];
                       for (Eigen::Index x = 0; x < out_w; ++x, ++o) {
                         const auto xl = tx.lo[static_cast<std::size_t>(x)];
                         const auto xh = tx.hi[static_cast<std::size_t>(x)];
                         const Scalar fx = tx.frac[static_cast<std::size_t>(x)];
                         const Scalar u = up[o];
                         plane[yl * w + xl] += u * (1.0 - fy) * (1.0 - fx);
                         plane[yl * w + xh] += u * (1.0 - fy) * fx;
                         plane[yh * w + xl] += u * fy * (1.0 - fx);
                         plane[yh * w + xh] += u * fy * fx;
                       }
                     }
                   }
                 });
}

// ---------------------------------------------------------------------------
// classification loss

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  check_rank(logits, 2, "softmax_cross_entropy", "logits");
  const Eigen::Index n = logits.dim(0), k = logits.dim(1);
  if (static_cast<Eigen::Index>(labels.size()) != n) {
    shape_error("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                std::to_string(n) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || y >= k) {
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(y) +
                              " outside [0, " + std::to_string(k) + ")");
    }
  }
  Array probs(n * k);
  Scalar total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = logits.data().segment(i * k, k);
    const Scalar m = row.maxCoeff();
    Array e = (row - m).exp();
    const Scalar z = e.sum();
    probs.segment(i * k, k) = e / z;
    total += std::log(z) + m - row[labels[static_cast<std::size_t>(i)]];
  }
  const int ln = logits.node();
  std::vector<int> ys(labels.begin(), labels.end());
  if (ln < 0) {
    probs.resize(0);
    ys.clear();
  }
  return make_op({1}, Array::Constant(1, total / static_cast<Scalar>(n)), {&logits},
                 [ln, n, k, probs = std::move(probs), ys = std::move(ys)](const Array& up,
                                                                          Tape& t) {
                   if (ln < 0) return;
                   Array& g = t.sweep_grad(ln);
                   const Scalar s = up[0] / static_cast<Scalar>(n);
                   for (Eigen::Index i = 0; i < n; ++i) {
                     g.segment(i * k, k) += s * probs.segment(i * k, k);
                     g[i * k + ys[static_cast<std::size_t>(i)]] -= s;
                   }
                 });
}

// ---------------------------------------------------------------------------

double gradient_check(const std::function<Tensor(const Tensor&)>& f, const Dims& shape,
                      const Array& point, double epsilon) {
  Tape tape;
  Tensor leaf = tape.leaf(shape, point);
  Tensor out = f(leaf);
  if (out.size() != 1) {
    shape_error("gradient_check: f must return a scalar, got " + dims_to_string(out.shape()));
  }
  tape.backward(out);
  const Array analytic = tape.grad(leaf);

  double worst = 0.0;
  Array probe = point;
  for (Eigen::Index i = 0; i < point.size(); ++i) {
    probe[i] = point[i] + epsilon;
    const Scalar up = f(Tensor(shape, probe)).value();
    probe[i] = point[i] - epsilon;
    const Scalar down = f(Tensor(shape, probe)).value();
    probe[i] = point[i];
    const Scalar numeric = (up - down) / (2.0 * epsilon);
    const Scalar err =
        std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + std::abs(numeric) + 1e-12);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace exsup
