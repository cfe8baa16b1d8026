#pragma once

// Minimal reverse-mode autodiff over f32 tensors. A graph is recorded while
// ops run (unless a NoGradGuard is active on the calling thread) and is
// released with the last Tensor handle that references it.

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace crowdfm::ad {

using Shape = std::vector<int>;

struct Node {
  Shape shape;
  std::vector<float> value;
  std::vector<float> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<float>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0f);
    return grad;
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<float> data, bool requires_grad = false);
  static Tensor scalar(float value);
  /// Row vector [1 x n].
  static Tensor row(std::vector<float> data, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int axis) const { return node_->shape.at(static_cast<size_t>(axis)); }
  int rows() const { return dim(0); }
  int cols() const { return dim(1); }
  size_t numel() const { return node_->value.size(); }

  std::span<const float> data() const { return node_->value; }
  std::span<float> data_mut() { return node_->value; }
  std::span<const float> grad() const { return node_->grad; }
  float at(int r, int c) const { return node_->value[static_cast<size_t>(r) * cols() + c]; }
  float item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  void zero_grad() { node_->grad.clear(); }

  /// Reverse pass from a scalar; gradients accumulate into every reachable
  /// node that requires them.
  void backward() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

std::string shape_str(const Shape& shape);

bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// ---- ops (all 2-D unless noted) -------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float factor);
/// x[m x n] + b[1 x n] broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
/// x[c x l] + b[1 x c] broadcast over columns (per-channel bias).
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);
/// x[c x l] * (1 + scale[1 x c]) + shift[1 x c].
Tensor film(const Tensor& x, const Tensor& scale, const Tensor& shift);
Tensor relu(const Tensor& x);
/// Normalizes the last axis; eps = 1e-5.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta);
/// Softmax along axis 0 or 1. Row sums are accumulated in sorted order so the
/// result does not depend on the order of entries along the reduced axis.
Tensor softmax(const Tensor& x, int axis = 1);
/// weights[tq x tk] * values[tk x d] with the tk reduction performed in a
/// canonical (sorted) order: permuting keys together with value rows leaves
/// every output bit unchanged.
Tensor attention_mix(const Tensor& weights, const Tensor& values);
/// Cross-correlation. x[c_in x (batch*l)] holds `batch` sequences side by
/// side, each padded independently; kernels[c_out x c_in x k], bias[1 x c_out].
Tensor conv1d(const Tensor& x, const Tensor& kernels, const Tensor& bias, int stride, int padding,
              int batch = 1);
/// Per-column max over the first valid_len rows of x[n x d] -> [1 x d].
Tensor max_pool_global(const Tensor& x, int valid_len);
/// Per-column mean over rows of x[n x d] -> [1 x d].
Tensor mean_rows(const Tensor& x);
Tensor slice_rows(const Tensor& x, int start, int count);
Tensor slice_cols(const Tensor& x, int start, int count);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor reshape(const Tensor& x, Shape shape);
/// Nearest-neighbour resize of each of `batch` side-by-side sequences in
/// x[c x (batch*l)] to out_len columns.
Tensor upsample_nearest(const Tensor& x, int out_len, int batch = 1);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_squares(const Tensor& x);
/// Softmax cross-entropy of logits[1 x k] against class `target`.
Tensor cross_entropy(const Tensor& logits, int target);

/// Interleaved sin/cos embedding of tau * 1000; periods span [1, 1e4].
Tensor sinusoidal_embed(float tau, int dim);

}  // namespace crowdfm::ad
