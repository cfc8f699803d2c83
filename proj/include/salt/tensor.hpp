#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "salt/error.hpp"

namespace salt {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

/// Controls whether newly created tensors participate in the gradient tape.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

/// RAII guard disabling the tape for the enclosing scope.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Controls the finiteness check run after every forward op.
class FiniteChecks {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

/// Dense row-major tensor of doubles with optional reverse-mode autodiff.
///
/// Tensor is a cheap value handle onto shared node state. Ops build a
/// graph of nodes; backward() walks it in reverse topological order,
/// deposits gradients on requires_grad leaves and then clears the tape.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);

  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int rank() const;
  int extent(int axis) const;
  int64_t size() const;

  std::span<const double> values() const;
  /// Mutable access to raw values. Only valid for leaves (init, optimizer
  /// updates, checkpoint load); graph nodes are immutable after forward.
  std::span<double> values_mut();

  double item() const;  // scalar tensors only
  double at(std::initializer_list<int> idx) const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Detached copy: same values, no tape participation.
  Tensor detach() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  struct Node;
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
  friend struct OpCtx;
};

/// dLoss/dLeaf for every requires_grad leaf reachable from `loss`.
/// `loss` must be a scalar produced by a taped forward pass. The tape is
/// released afterwards; leaf gradients accumulate until zero_grad().
void backward(const Tensor& loss);

// ---- ops ------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
/// rows [m x n] + bias [n], broadcast over rows.
Tensor add_rowvec(const Tensor& a, const Tensor& bias);
Tensor scale(const Tensor& a, double c);
Tensor sum(const Tensor& a);

/// Numerically stabilized softmax over the last axis.
Tensor softmax_lastdim(const Tensor& t);

/// Dynamic-tanh normalization: gamma * tanh(alpha * x) + beta, per channel
/// on the last axis.
Tensor dyt(const Tensor& x, const Tensor& alpha, const Tensor& gamma,
           const Tensor& beta);

/// Columnwise max over an [n x d] sequence. Backward routes each column's
/// gradient to the first row attaining the max.
Tensor max_over_sequence(const Tensor& x);

/// Depthwise 2D convolution over [H x n x p] attention logits.
///
/// Every head slice is cross-correlated with each kernel (odd height h_i,
/// width w == p) under zero "same" padding on both axes, the per-kernel
/// scalar bias is added, and the kernel responses are averaged.
Tensor depthwise_conv2d_same_avg(const Tensor& logits,
                                 const std::vector<Tensor>& kernels,
                                 const std::vector<Tensor>& biases);

/// Kernel that makes depthwise_conv2d_same_avg the exact identity.
/// Height h must be odd; the single unit weight sits at (h/2, (w-1)/2),
/// matching the left-biased "same" padding used for even widths.
Tensor delta_kernel(int h, int w);

Tensor slice_rows(const Tensor& a, int r0, int r1);
Tensor slice_cols(const Tensor& a, int c0, int c1);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
/// Stack k matrices [n x p] into a rank-3 tensor [k x n x p].
Tensor stack0(const std::vector<Tensor>& parts);
/// Slice one [n x p] matrix out of a rank-3 [k x n x p] tensor.
Tensor slice0(const Tensor& a, int index);

/// Mean over the batch of -log softmax(logits)[label]; stabilized.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace salt
