#pragma once

#include <string>
#include <vector>

#include "crowdfm/params.hpp"
#include "crowdfm/tensor.hpp"

namespace crowdfm::nn {

using ad::ParamStore;
using ad::Tensor;

/// y = x W + b with W stored [in x out].
class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, int in, int out, Rng& rng,
         bool zero_init = false);
  Tensor operator()(const Tensor& x) const;

  int in_features() const { return in_; }
  int out_features() const { return out_; }

 private:
  int in_ = 0;
  int out_ = 0;
  Tensor weight_;
  Tensor bias_;
};

/// Linear layers with ReLU between them (none after the last).
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParamStore& store, const std::string& name, const std::vector<int>& dims, Rng& rng);
  Tensor operator()(const Tensor& x) const;

 private:
  std::vector<Linear> layers_;
};

class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(ParamStore& store, const std::string& name, int c_in, int c_out, int kernel, int stride,
         int padding, Rng& rng, bool zero_init = false);
  /// x: [c_in x batch*l] -> [c_out x batch*l']
  Tensor operator()(const Tensor& x, int batch = 1) const;

 private:
  int stride_ = 1;
  int padding_ = 0;
  Tensor kernels_;
  Tensor bias_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, int dim, Rng& rng);
  Tensor operator()(const Tensor& x) const;

 private:
  Tensor gamma_;
  Tensor beta_;
};

/// Scaled dot-product attention over rows (tokens). Keys at index
/// >= key_valid_len receive an additive -1e9 before the softmax.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& store, const std::string& name, int d_model, int heads, Rng& rng);
  Tensor operator()(const Tensor& queries, const Tensor& keys_values, int key_valid_len = -1) const;

  int heads() const { return heads_; }

 private:
  int d_model_ = 0;
  int heads_ = 1;
  Linear q_, k_, v_, o_;
};

/// Pre-norm encoder layer: x + MHA(LN(x)), then x + FF(LN(x)).
class TransformerLayer {
 public:
  TransformerLayer() = default;
  TransformerLayer(ParamStore& store, const std::string& name, int d_model, int heads, Rng& rng);
  Tensor operator()(const Tensor& x, int valid_len = -1) const;

 private:
  LayerNorm norm1_, norm2_;
  MultiHeadAttention attn_;
  Mlp ff_;
};

class TransformerEncoder {
 public:
  TransformerEncoder() = default;
  TransformerEncoder(ParamStore& store, const std::string& name, int d_model, int heads, int layers,
                     Rng& rng);
  Tensor operator()(const Tensor& x, int valid_len = -1) const;

 private:
  std::vector<TransformerLayer> layers_;
  LayerNorm final_norm_;
};

}  // namespace crowdfm::nn
