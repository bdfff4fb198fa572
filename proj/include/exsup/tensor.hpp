// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace exsup {

using Scalar = double;
// Flat row-major storage for n-d values. All math runs in double; the
// training loop is reproducibility-bound, not memory-bound.
using Array = Eigen::ArrayXd;
using Dims = std::vector<Eigen::Index>;

using MatrixR = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatR = Eigen::Map<MatrixR>;
using MapConstMatR = Eigen::Map<const MatrixR>;

Eigen::Index numel(const Dims& dims);
std::string dims_to_string(const Dims& dims);

class Tape;

// Dense value, optionally attached to a tape node. Tensors are cheap value
// types (the payload is an Eigen array); ops are free functions below.
// A tensor that references a tape must not outlive it.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Dims shape, Array data);  // constant, not differentiated

  static Tensor constant(Dims shape, Scalar value);
  static Tensor zeros(Dims shape);
  static Tensor scalar(Scalar value);  // shape {1}

  const Dims& shape() const { return shape_; }
  Eigen::Index dim(std::size_t i) const { return shape_[i]; }
  std::size_t rank() const { return shape_.size(); }
  Eigen::Index size() const { return data_.size(); }
  const Array& data() const { return data_; }
  Scalar value() const;  // requires size() == 1

  bool on_tape() const { return node_ >= 0; }
  int node() const { return node_; }
  Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  friend Tensor make_op(Dims, Array, std::initializer_list<const Tensor*>,
                        std::function<void(const Array&, Tape&)>);

  Dims shape_;
  Array data_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

// Reverse-mode tape. Nodes are recorded in construction order, which is a
// valid topological order by construction. backward() accumulates into the
// persistent leaf gradients, so two backward passes add up exactly like one
// pass over the summed losses. A tape is confined to a single thread.
class Tape {
 public:
  using Backward = std::function<void(const Array& upstream, Tape& tape)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor leaf(Dims shape, Array data);
  Tensor leaf(const Tensor& value);  // copies the payload onto this tape

  // loss must be a scalar living on this tape
  void backward(const Tensor& loss);

  const Array& grad(const Tensor& leaf) const;
  void clear_grads();
  std::size_t num_nodes() const { return nodes_.size(); }

  // Op-construction interface, used by the free-function ops and open for
  // ops defined in other modules.
  int record(Eigen::Index size, Backward backward);

  // Valid only inside a backward sweep; lazily zero-initialized.
  template <class Derived>
  void add_grad(int node, const Eigen::ArrayBase<Derived>& contribution) {
    sweep_grad(node) += contribution;
  }
  void add_grad(int node, const Array& contribution) { sweep_grad(node) += contribution; }
  Array& sweep_grad(int node);

 private:
  friend class Tensor;
  struct Node {
    Eigen::Index size = 0;
    bool is_leaf = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
  mutable std::vector<Array> leaf_grads_;    // allocated lazily per leaf
  std::vector<Array>* sweep_ = nullptr;      // active during backward()
};

// Records an op producing `data`: attaches the result to the tape shared by
// the taped inputs (all taped inputs must agree), or returns a plain
// constant when no input is on a tape. `backward` receives the upstream
// gradient and pushes contributions to parent nodes via Tape::add_grad.
Tensor make_op(Dims shape, Array data, std::initializer_list<const Tensor*> inputs,
               Tape::Backward backward);

// Elementwise; binary ops require identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, Scalar s);
Tensor mul_scalar(const Tensor& a, Scalar s);
Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);     // subgradient 0 at the kink
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor abs(const Tensor& a);      // subgradient 0 at 0
Tensor clamp(const Tensor& a, Scalar lo, Scalar hi);  // subgradient 0 at both kinks

Tensor log(const Tensor& a);      // natural logarithm
Tensor reshape(const Tensor& a, Dims shape);  // same element count

Tensor sum(const Tensor& a);   // scalar, shape {1}
Tensor mean(const Tensor& a);

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
// x:[n,in] w:[in,out] b:[out] -> [n,out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// input:[N,Cin,H,W] kernel:[Cout,Cin,K,K] bias:[Cout], zero padding.
// The padded extent must land exactly on the stride grid; anything else is
// rejected so silent geometry drift cannot happen.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              Eigen::Index stride, Eigen::Index padding);
Eigen::Index conv_output_extent(Eigen::Index in, Eigen::Index kernel, Eigen::Index stride,
                                Eigen::Index padding);  // throws on non-integral geometry

// window/stride pooling, floor semantics; ties keep the first (row-major) max
Tensor max_pool2d(const Tensor& input, Eigen::Index window, Eigen::Index stride);
// [N,C,H,W] -> [N,C]
Tensor global_avg_pool(const Tensor& input);
// align-corners bilinear, [N,C,h,w] -> [N,C,H,W] with H >= h, W >= w
Tensor upsample_bilinear(const Tensor& input, Eigen::Index out_h, Eigen::Index out_w);

// logits:[N,classes]; returns mean cross-entropy as a scalar. Fused with a
// stable log-sum-exp so the backward pass is the usual (softmax - onehot)/N.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

// Central-difference check of d f / d point against the tape, reported as
// max_i |analytic - numeric| / (|analytic| + |numeric| + 1e-12).
// f must be a pure function of its argument.
double gradient_check(const std::function<Tensor(const Tensor&)>& f, const Dims& shape,
                      const Array& point, double epsilon = 1e-4);

// Named leaf parameter; the unit models and the checkpoint format are built
// from flat lists of these.
struct Param {
  std::string name;
  Dims shape;
  Array value;
};

}  // namespace exsup
