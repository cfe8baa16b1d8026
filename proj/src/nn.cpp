#include "crowdfm/nn.hpp"

#include <cmath>

namespace crowdfm::nn {

using ad::Init;

Linear::Linear(ParamStore& store, const std::string& name, int in, int out, Rng& rng, bool zero_init)
    : in_(in), out_(out) {
  const Init init = zero_init ? Init::kZeros : Init::kUniformFanIn;
  weight_ = store.add(name + ".w", {in, out}, init, rng, in);
  bias_ = store.add(name + ".b", {1, out}, init, rng, in);
}

Tensor Linear::operator()(const Tensor& x) const {
  return ad::add_bias(ad::matmul(x, weight_), bias_);
}

Mlp::Mlp(ParamStore& store, const std::string& name, const std::vector<int>& dims, Rng& rng) {
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    layers_.emplace_back(store, name + "." + std::to_string(i), dims[i], dims[i + 1], rng);
  }
}

Tensor Mlp::operator()(const Tensor& x) const {
  Tensor h = x;
  for (size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i](h);
    if (i + 1 < layers_.size()) h = ad::relu(h);
  }
  return h;
}

Conv1d::Conv1d(ParamStore& store, const std::string& name, int c_in, int c_out, int kernel,
               int stride, int padding, Rng& rng, bool zero_init)
    : stride_(stride), padding_(padding) {
  const Init init = zero_init ? Init::kZeros : Init::kUniformFanIn;
  kernels_ = store.add(name + ".w", {c_out, c_in, kernel}, init, rng, c_in * kernel);
  bias_ = store.add(name + ".b", {1, c_out}, init, rng, c_in * kernel);
}

Tensor Conv1d::operator()(const Tensor& x, int batch) const {
  return ad::conv1d(x, kernels_, bias_, stride_, padding_, batch);
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, int dim, Rng& rng) {
  gamma_ = store.add(name + ".gamma", {1, dim}, Init::kOnes, rng);
  beta_ = store.add(name + ".beta", {1, dim}, Init::kZeros, rng);
}

Tensor LayerNorm::operator()(const Tensor& x) const { return ad::layer_norm(x, gamma_, beta_); }

MultiHeadAttention::MultiHeadAttention(ParamStore& store, const std::string& name, int d_model,
                                       int heads, Rng& rng)
    : d_model_(d_model), heads_(heads) {
  if (heads < 1 || d_model % heads != 0) {
    throw Error(ErrorKind::kConfig, name + ": model dim " + std::to_string(d_model) +
                                        " not divisible by " + std::to_string(heads) + " heads");
  }
  q_ = Linear(store, name + ".q", d_model, d_model, rng);
  k_ = Linear(store, name + ".k", d_model, d_model, rng);
  v_ = Linear(store, name + ".v", d_model, d_model, rng);
  o_ = Linear(store, name + ".o", d_model, d_model, rng);
}

Tensor MultiHeadAttention::operator()(const Tensor& queries, const Tensor& keys_values,
                                      int key_valid_len) const {
  const int tq = queries.rows();
  const int tk = keys_values.rows();
  const int head_dim = d_model_ / heads_;
  const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(head_dim));

  const Tensor q = q_(queries);
  const Tensor k = k_(keys_values);
  const Tensor v = v_(keys_values);

  Tensor mask;
  if (key_valid_len >= 0 && key_valid_len < tk) {
    std::vector<float> m(static_cast<size_t>(tq) * tk, 0.0f);
    for (int i = 0; i < tq; ++i)
      for (int j = key_valid_len; j < tk; ++j) m[static_cast<size_t>(i) * tk + j] = -1e9f;
    mask = Tensor::from_data({tq, tk}, std::move(m));
  }

  std::vector<Tensor> outputs;
  outputs.reserve(static_cast<size_t>(heads_));
  for (int h = 0; h < heads_; ++h) {
    const Tensor qh = ad::slice_cols(q, h * head_dim, head_dim);
    const Tensor kh = ad::slice_cols(k, h * head_dim, head_dim);
    const Tensor vh = ad::slice_cols(v, h * head_dim, head_dim);
    Tensor scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt);
    if (mask.defined()) scores = ad::add(scores, mask);
    outputs.push_back(ad::attention_mix(ad::softmax(scores, 1), vh));
  }
  return o_(heads_ == 1 ? outputs.front() : ad::concat_cols(outputs));
}

TransformerLayer::TransformerLayer(ParamStore& store, const std::string& name, int d_model,
                                   int heads, Rng& rng)
    : norm1_(store, name + ".ln1", d_model, rng),
      norm2_(store, name + ".ln2", d_model, rng),
      attn_(store, name + ".attn", d_model, heads, rng),
      ff_(store, name + ".ff", {d_model, 2 * d_model, d_model}, rng) {}

Tensor TransformerLayer::operator()(const Tensor& x, int valid_len) const {
  const Tensor normed = norm1_(x);
  const Tensor h = ad::add(x, attn_(normed, normed, valid_len));
  return ad::add(h, ff_(norm2_(h)));
}

TransformerEncoder::TransformerEncoder(ParamStore& store, const std::string& name, int d_model,
                                       int heads, int layers, Rng& rng) {
  for (int i = 0; i < layers; ++i) {
    layers_.emplace_back(store, name + ".layer" + std::to_string(i), d_model, heads, rng);
  }
  final_norm_ = LayerNorm(store, name + ".ln_out", d_model, rng);
}

Tensor TransformerEncoder::operator()(const Tensor& x, int valid_len) const {
  Tensor h = x;
  for (const auto& layer : layers_) h = layer(h, valid_len);
  return final_norm_(h);
}

}  // namespace crowdfm::nn
