#include <algorithm>
#include <cmath>
#include <limits>

#include "crowdfm/common.hpp"
#include "crowdfm/kernels.hpp"
#include "crowdfm/tensor.hpp"

namespace crowdfm::ad {

namespace {

using NodePtr = std::shared_ptr<Node>;

Tensor make_op(Shape shape, std::vector<float> value, std::vector<NodePtr> inputs,
               std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (grad_enabled()) {
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const NodePtr& n) { return n->requires_grad; });
    if (any) {
      node->requires_grad = true;
      node->parents = std::move(inputs);
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw Error(ErrorKind::kInvalidShape,
              std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

void require_2d(const Tensor& x, const char* op) {
  if (x.rank() != 2) {
    throw Error(ErrorKind::kInvalidShape,
                std::string(op) + ": expected a 2-D tensor, got " + shape_str(x.shape()));
  }
}

float sorted_sum(std::vector<float>& terms) {
  std::sort(terms.begin(), terms.end());
  float acc = 0.0f;
  for (float t : terms) acc += t;
  return acc;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const int m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) shape_error("matmul", a.shape(), b.shape());
  std::vector<float> out(static_cast<size_t>(m) * n, 0.0f);
  kernels::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  Node* an = a.node().get();
  Node* bn = b.node().get();
  return make_op({m, n}, std::move(out), {a.node(), b.node()}, [an, bn, m, k, n](Node& self) {
    if (an->requires_grad) kernels::gemm_nt(self.grad.data(), bn->value.data(), an->ensure_grad().data(), m, n, k);
    if (bn->requires_grad) kernels::gemm_tn(an->value.data(), self.grad.data(), bn->ensure_grad().data(), k, m, n);
  });
}

Tensor transpose(const Tensor& x) {
  require_2d(x, "transpose");
  const int r = x.rows(), c = x.cols();
  std::vector<float> out(x.numel());
  const auto in = x.data();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[static_cast<size_t>(j) * r + i] = in[static_cast<size_t>(i) * c + j];
  Node* xn = x.node().get();
  return make_op({c, r}, std::move(out), {x.node()}, [xn, r, c](Node& self) {
    auto& g = xn->ensure_grad();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) g[static_cast<size_t>(i) * c + j] += self.grad[static_cast<size_t>(j) * r + i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("add", a.shape(), b.shape());
  std::vector<float> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  Node* an = a.node().get();
  Node* bn = b.node().get();
  return make_op(a.shape(), std::move(out), {a.node(), b.node()}, [an, bn](Node& self) {
    for (Node* in : {an, bn}) {
      if (!in->requires_grad) continue;
      auto& g = in->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("sub", a.shape(), b.shape());
  std::vector<float> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  Node* an = a.node().get();
  Node* bn = b.node().get();
  return make_op(a.shape(), std::move(out), {a.node(), b.node()}, [an, bn](Node& self) {
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
  std::vector<float> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  Node* an = a.node().get();
  Node* bn = b.node().get();
  return make_op(a.shape(), std::move(out), {a.node(), b.node()}, [an, bn](Node& self) {
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->value[i];
    }
  });
}

Tensor scale(const Tensor& x, float factor) {
  std::vector<float> out(x.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * factor;
  Node* xn = x.node().get();
  return make_op(x.shape(), std::move(out), {x.node()}, [xn, factor](Node& self) {
    auto& g = xn->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_2d(x, "add_bias");
  const int m = x.rows(), n = x.cols();
  if (static_cast<int>(bias.numel()) != n) shape_error("add_bias", x.shape(), bias.shape());
  std::vector<float> out(x.numel());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(i) * n + j] = x.data()[static_cast<size_t>(i) * n + j] + bias.data()[j];
  Node* xn = x.node().get();
  Node* bn = bias.node().get();
  return make_op(x.shape(), std::move(out), {x.node(), bias.node()}, [xn, bn, m, n](Node& self) {
    if (xn->requires_grad) {
      auto& g = xn->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) g[j] += self.grad[static_cast<size_t>(i) * n + j];
    }
  });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  require_2d(x, "add_channel_bias");
  const int c = x.rows(), l = x.cols();
  if (static_cast<int>(bias.numel()) != c) shape_error("add_channel_bias", x.shape(), bias.shape());
  std::vector<float> out(x.numel());
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < l; ++j) out[static_cast<size_t>(i) * l + j] = x.data()[static_cast<size_t>(i) * l + j] + bias.data()[i];
  Node* xn = x.node().get();
  Node* bn = bias.node().get();
  return make_op(x.shape(), std::move(out), {x.node(), bias.node()}, [xn, bn, c, l](Node& self) {
    if (xn->requires_grad) {
      auto& g = xn->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (int i = 0; i < c; ++i)
        for (int j = 0; j < l; ++j) g[i] += self.grad[static_cast<size_t>(i) * l + j];
    }
  });
}

Tensor film(const Tensor& x, const Tensor& scale_t, const Tensor& shift) {
  require_2d(x, "film");
  const int c = x.rows(), l = x.cols();
  if (static_cast<int>(scale_t.numel()) != c) shape_error("film", x.shape(), scale_t.shape());
  if (static_cast<int>(shift.numel()) != c) shape_error("film", x.shape(), shift.shape());
  std::vector<float> out(x.numel());
  for (int i = 0; i < c; ++i) {
    const float s = 1.0f + scale_t.data()[i];
    const float t = shift.data()[i];
    for (int j = 0; j < l; ++j) {
      const size_t idx = static_cast<size_t>(i) * l + j;
      out[idx] = x.data()[idx] * s + t;
    }
  }
  Node* xn = x.node().get();
  Node* sn = scale_t.node().get();
  Node* tn = shift.node().get();
  return make_op(x.shape(), std::move(out), {x.node(), scale_t.node(), shift.node()},
                 [xn, sn, tn, c, l](Node& self) {
                   for (int i = 0; i < c; ++i) {
                     const float s = 1.0f + sn->value[i];
                     float ds = 0.0f, dt = 0.0f;
                     for (int j = 0; j < l; ++j) {
                       const size_t idx = static_cast<size_t>(i) * l + j;
                       ds += self.grad[idx] * xn->value[idx];
                       dt += self.grad[idx];
                     }
                     if (xn->requires_grad) {
                       auto& g = xn->ensure_grad();
                       for (int j = 0; j < l; ++j) {
                         const size_t idx = static_cast<size_t>(i) * l + j;
                         g[idx] += self.grad[idx] * s;
                       }
                     }
                     if (sn->requires_grad) sn->ensure_grad()[i] += ds;
                     if (tn->requires_grad) tn->ensure_grad()[i] += dt;
                   }
                 });
}

Tensor relu(const Tensor& x) {
  std::vector<float> out(x.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0f, x.data()[i]);
  Node* xn = x.node().get();
  return make_op(x.shape(), std::move(out), {x.node()}, [xn](Node& self) {
    auto& g = xn->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i)
      if (xn->value[i] > 0.0f) g[i] += self.grad[i];
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  require_2d(x, "layer_norm");
  constexpr float kEps = 1e-5f;
  const int m = x.rows(), n = x.cols();
  if (static_cast<int>(gamma.numel()) != n) shape_error("layer_norm", x.shape(), gamma.shape());
  if (static_cast<int>(beta.numel()) != n) shape_error("layer_norm", x.shape(), beta.shape());
  std::vector<float> out(x.numel());
  std::vector<float> xhat(x.numel());
  std::vector<float> inv_std(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) {
    const float* row = x.data().data() + static_cast<size_t>(i) * n;
    float mu = 0.0f;
    for (int j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<float>(n);
    float var = 0.0f;
    for (int j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<float>(n);
    const float is = 1.0f / std::sqrt(var + kEps);
    inv_std[static_cast<size_t>(i)] = is;
    for (int j = 0; j < n; ++j) {
      const size_t idx = static_cast<size_t>(i) * n + j;
      xhat[idx] = (row[j] - mu) * is;
      out[idx] = xhat[idx] * gamma.data()[j] + beta.data()[j];
    }
  }
  Node* xn = x.node().get();
  Node* gn = gamma.node().get();
  Node* bn = beta.node().get();
  return make_op(x.shape(), std::move(out), {x.node(), gamma.node(), beta.node()},
                 [xn, gn, bn, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                   std::vector<float> dxhat(static_cast<size_t>(n));
                   for (int i = 0; i < m; ++i) {
                     const size_t base = static_cast<size_t>(i) * n;
                     float mean_d = 0.0f, mean_dx = 0.0f;
                     for (int j = 0; j < n; ++j) {
                       const float dy = self.grad[base + j];
                       if (gn->requires_grad) gn->ensure_grad()[j] += dy * xhat[base + j];
                       if (bn->requires_grad) bn->ensure_grad()[j] += dy;
                       dxhat[j] = dy * gn->value[j];
                       mean_d += dxhat[j];
                       mean_dx += dxhat[j] * xhat[base + j];
                     }
                     if (!xn->requires_grad) continue;
                     mean_d /= static_cast<float>(n);
                     mean_dx /= static_cast<float>(n);
                     auto& g = xn->ensure_grad();
                     for (int j = 0; j < n; ++j)
                       g[base + j] += inv_std[static_cast<size_t>(i)] * (dxhat[j] - mean_d - xhat[base + j] * mean_dx);
                   }
                 });
}

Tensor softmax(const Tensor& x, int axis) {
  require_2d(x, "softmax");
  if (axis == 0) return transpose(softmax(transpose(x), 1));
  if (axis != 1) throw Error(ErrorKind::kInvalidShape, "softmax axis must be 0 or 1");
  const int m = x.rows(), n = x.cols();
  std::vector<float> out(x.numel());
  std::vector<float> terms(static_cast<size_t>(n));
  for (int i = 0; i < m; ++i) {
    const float* row = x.data().data() + static_cast<size_t>(i) * n;
    const float mx = *std::max_element(row, row + n);
    for (int j = 0; j < n; ++j) terms[j] = std::exp(row[j] - mx);
    float* o = out.data() + static_cast<size_t>(i) * n;
    std::copy(terms.begin(), terms.end(), o);
    const float total = sorted_sum(terms);
    for (int j = 0; j < n; ++j) o[j] /= total;
  }
  Node* xn = x.node().get();
  return make_op(x.shape(), out, {x.node()}, [xn, m, n](Node& self) {
    auto& g = xn->ensure_grad();
    for (int i = 0; i < m; ++i) {
      const size_t base = static_cast<size_t>(i) * n;
      float dot = 0.0f;
      for (int j = 0; j < n; ++j) dot += self.grad[base + j] * self.value[base + j];
      for (int j = 0; j < n; ++j) g[base + j] += self.value[base + j] * (self.grad[base + j] - dot);
    }
  });
}

Tensor attention_mix(const Tensor& weights, const Tensor& values) {
  require_2d(weights, "attention_mix");
  require_2d(values, "attention_mix");
  const int tq = weights.rows(), tk = weights.cols(), d = values.cols();
  if (values.rows() != tk) shape_error("attention_mix", weights.shape(), values.shape());
  std::vector<float> out(static_cast<size_t>(tq) * d);
  std::vector<float> terms(static_cast<size_t>(tk));
  const float* w = weights.data().data();
  const float* v = values.data().data();
  for (int i = 0; i < tq; ++i) {
    for (int c = 0; c < d; ++c) {
      for (int j = 0; j < tk; ++j) terms[j] = w[static_cast<size_t>(i) * tk + j] * v[static_cast<size_t>(j) * d + c];
      out[static_cast<size_t>(i) * d + c] = sorted_sum(terms);
    }
  }
  Node* wn = weights.node().get();
  Node* vn = values.node().get();
  return make_op({tq, d}, std::move(out), {weights.node(), values.node()}, [wn, vn, tq, tk, d](Node& self) {
    if (wn->requires_grad) kernels::gemm_nt(self.grad.data(), vn->value.data(), wn->ensure_grad().data(), tq, d, tk);
    if (vn->requires_grad) kernels::gemm_tn(wn->value.data(), self.grad.data(), vn->ensure_grad().data(), tk, tq, d);
  });
}

Tensor conv1d(const Tensor& x, const Tensor& kernels, const Tensor& bias, int stride, int padding,
              int batch) {
  require_2d(x, "conv1d");
  if (kernels.rank() != 3) {
    throw Error(ErrorKind::kInvalidShape, "conv1d: kernels must be [c_out x c_in x k], got " +
                                              shape_str(kernels.shape()));
  }
  if (batch < 1 || x.cols() % batch != 0) {
    throw Error(ErrorKind::kInvalidShape, "conv1d: " + std::to_string(x.cols()) +
                                              " columns do not split into " + std::to_string(batch) +
                                              " sequences");
  }
  const int c_in = x.rows(), len = x.cols() / batch;
  const int c_out = kernels.dim(0), k = kernels.dim(2);
  if (kernels.dim(1) != c_in) shape_error("conv1d", x.shape(), kernels.shape());
  if (static_cast<int>(bias.numel()) != c_out) shape_error("conv1d", kernels.shape(), bias.shape());
  if (stride < 1 || padding < 0) throw Error(ErrorKind::kInvalidShape, "conv1d: bad stride/padding");
  if (len + 2 * padding < k) {
    throw Error(ErrorKind::kInvalidShape, "conv1d: kernel of width " + std::to_string(k) +
                                              " exceeds padded input length " +
                                              std::to_string(len + 2 * padding));
  }
  const int out_len = (len + 2 * padding - k) / stride + 1;
  const int cols = out_len * batch;
  const int rows = c_in * k;

  // im2col: row (ci, kk), column (b, l) holds x[ci, b*len + l*stride + kk - padding] or 0.
  auto source_index = [=](int ci, int kk, int col) -> long {
    const int b = col / out_len, l = col % out_len;
    const int p = l * stride + kk - padding;
    if (p < 0 || p >= len) return -1;
    return static_cast<long>(ci) * len * batch + static_cast<long>(b) * len + p;
  };
  std::vector<float> im(static_cast<size_t>(rows) * cols, 0.0f);
  const float* xv = x.data().data();
  for (int ci = 0; ci < c_in; ++ci)
    for (int kk = 0; kk < k; ++kk) {
      float* dst = im.data() + static_cast<size_t>(ci * k + kk) * cols;
      for (int col = 0; col < cols; ++col) {
        const long s = source_index(ci, kk, col);
        if (s >= 0) dst[col] = xv[s];
      }
    }

  std::vector<float> out(static_cast<size_t>(c_out) * cols);
  for (int co = 0; co < c_out; ++co)
    std::fill(out.begin() + static_cast<long>(co) * cols, out.begin() + static_cast<long>(co + 1) * cols,
              bias.data()[co]);
  // kernels are laid out [c_out x (c_in*k)], matching the im2col row order.
  kernels::gemm_nn(kernels.data().data(), im.data(), out.data(), c_out, rows, cols);

  Node* xn = x.node().get();
  Node* kn = kernels.node().get();
  Node* bn = bias.node().get();
  return make_op({c_out, cols}, std::move(out), {x.node(), kernels.node(), bias.node()},
                 [xn, kn, bn, im = std::move(im), c_in, k, c_out, rows, cols, source_index](Node& self) {
                   if (bn->requires_grad) {
                     auto& gb = bn->ensure_grad();
                     for (int co = 0; co < c_out; ++co) {
                       const float* dy = self.grad.data() + static_cast<size_t>(co) * cols;
                       float acc = 0.0f;
                       for (int col = 0; col < cols; ++col) acc += dy[col];
                       gb[co] += acc;
                     }
                   }
                   if (kn->requires_grad) {
                     kernels::gemm_nt(self.grad.data(), im.data(), kn->ensure_grad().data(), c_out, cols, rows);
                   }
                   if (xn->requires_grad) {
                     std::vector<float> dim(static_cast<size_t>(rows) * cols, 0.0f);
                     kernels::gemm_tn(kn->value.data(), self.grad.data(), dim.data(), rows, c_out, cols);
                     auto& gx = xn->ensure_grad();
                     for (int ci = 0; ci < c_in; ++ci)
                       for (int kk = 0; kk < k; ++kk) {
                         const float* src = dim.data() + static_cast<size_t>(ci * k + kk) * cols;
                         for (int col = 0; col < cols; ++col) {
                           const long s = source_index(ci, kk, col);
                           if (s >= 0) gx[static_cast<size_t>(s)] += src[col];
                         }
                       }
                   }
                 });
}

Tensor max_pool_global(const Tensor& x, int valid_len) {
  require_2d(x, "max_pool_global");
  const int n = x.rows(), d = x.cols();
  if (valid_len < 1) throw Error(ErrorKind::kInvalidInput, "max_pool_global: empty input (valid_len = 0)");
  if (valid_len > n) throw Error(ErrorKind::kInvalidShape, "max_pool_global: valid_len exceeds rows");
  std::vector<float> out(static_cast<size_t>(d));
  std::vector<int> arg(static_cast<size_t>(d), 0);
  for (int c = 0; c < d; ++c) {
    float best = x.data()[static_cast<size_t>(c)];
    for (int i = 1; i < valid_len; ++i) {
      const float v = x.data()[static_cast<size_t>(i) * d + c];
      if (v > best) {
        best = v;
        arg[c] = i;
      }
    }
    out[c] = best;
  }
  Node* xn = x.node().get();
  return make_op({1, d}, std::move(out), {x.node()}, [xn, d, arg = std::move(arg)](Node& self) {
    auto& g = xn->ensure_grad();
    for (int c = 0; c < d; ++c) g[static_cast<size_t>(arg[c]) * d + c] += self.grad[c];
  });
}

Tensor mean_rows(const Tensor& x) {
  require_2d(x, "mean_rows");
  const int n = x.rows(), d = x.cols();
  std::vector<float> out(static_cast<size_t>(d), 0.0f);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < d; ++c) out[c] += x.data()[static_cast<size_t>(i) * d + c];
  for (float& v : out) v /= static_cast<float>(n);
  Node* xn = x.node().get();
  return make_op({1, d}, std::move(out), {x.node()}, [xn, n, d](Node& self) {
    auto& g = xn->ensure_grad();
    const float inv = 1.0f / static_cast<float>(n);
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < d; ++c) g[static_cast<size_t>(i) * d + c] += self.grad[c] * inv;
  });
}

Tensor slice_rows(const Tensor& x, int start, int count) {
  require_2d(x, "slice_rows");
  const int d = x.cols();
  if (start < 0 || count < 0 || start + count > x.rows()) {
    throw Error(ErrorKind::kInvalidShape, "slice_rows out of range on " + shape_str(x.shape()));
  }
  const auto begin = x.data().begin() + static_cast<long>(start) * d;
  std::vector<float> out(begin, begin + static_cast<long>(count) * d);
  Node* xn = x.node().get();
  return make_op({count, d}, std::move(out), {x.node()}, [xn, start, d](Node& self) {
    auto& g = xn->ensure_grad();
    const size_t off = static_cast<size_t>(start) * d;
    for (size_t i = 0; i < self.grad.size(); ++i) g[off + i] += self.grad[i];
  });
}

Tensor slice_cols(const Tensor& x, int start, int count) {
  require_2d(x, "slice_cols");
  const int r = x.rows(), c = x.cols();
  if (start < 0 || count < 0 || start + count > c) {
    throw Error(ErrorKind::kInvalidShape, "slice_cols out of range on " + shape_str(x.shape()));
  }
  std::vector<float> out(static_cast<size_t>(r) * count);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < count; ++j) out[static_cast<size_t>(i) * count + j] = x.data()[static_cast<size_t>(i) * c + start + j];
  Node* xn = x.node().get();
  return make_op({r, count}, std::move(out), {x.node()}, [xn, r, c, start, count](Node& self) {
    auto& g = xn->ensure_grad();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < count; ++j) g[static_cast<size_t>(i) * c + start + j] += self.grad[static_cast<size_t>(i) * count + j];
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw Error(ErrorKind::kInvalidShape, "concat_rows of nothing");
  const int d = parts.front().cols();
  int total = 0;
  std::vector<NodePtr> inputs;
  for (const auto& p : parts) {
    require_2d(p, "concat_rows");
    if (p.cols() != d) shape_error("concat_rows", parts.front().shape(), p.shape());
    total += p.rows();
    inputs.push_back(p.node());
  }
  std::vector<float> out;
  out.reserve(static_cast<size_t>(total) * d);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  std::vector<Node*> raw;
  for (const auto& n : inputs) raw.push_back(n.get());
  return make_op({total, d}, std::move(out), std::move(inputs), [raw](Node& self) {
    size_t off = 0;
    for (Node* in : raw) {
      if (in->requires_grad) {
        auto& g = in->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[off + i];
      }
      off += in->value.size();
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw Error(ErrorKind::kInvalidShape, "concat_cols of nothing");
  const int r = parts.front().rows();
  int total = 0;
  std::vector<NodePtr> inputs;
  std::vector<int> widths;
  for (const auto& p : parts) {
    require_2d(p, "concat_cols");
    if (p.rows() != r) shape_error("concat_cols", parts.front().shape(), p.shape());
    total += p.cols();
    widths.push_back(p.cols());
    inputs.push_back(p.node());
  }
  std::vector<float> out(static_cast<size_t>(r) * total);
  int col = 0;
  for (const auto& p : parts) {
    const int w = p.cols();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < w; ++j) out[static_cast<size_t>(i) * total + col + j] = p.data()[static_cast<size_t>(i) * w + j];
    col += w;
  }
  std::vector<Node*> raw;
  for (const auto& n : inputs) raw.push_back(n.get());
  return make_op({r, total}, std::move(out), std::move(inputs), [raw, widths, r, total](Node& self) {
    int col0 = 0;
    for (size_t p = 0; p < raw.size(); ++p) {
      const int w = widths[p];
      if (raw[p]->requires_grad) {
        auto& g = raw[p]->ensure_grad();
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < w; ++j) g[static_cast<size_t>(i) * w + j] += self.grad[static_cast<size_t>(i) * total + col0 + j];
      }
      col0 += w;
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  if (n != x.numel()) shape_error("reshape", x.shape(), shape);
  std::vector<float> out(x.data().begin(), x.data().end());
  Node* xn = x.node().get();
  return make_op(std::move(shape), std::move(out), {x.node()}, [xn](Node& self) {
    auto& g = xn->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor upsample_nearest(const Tensor& x, int out_len, int batch) {
  require_2d(x, "upsample_nearest");
  if (out_len < 1) throw Error(ErrorKind::kInvalidShape, "upsample_nearest: out_len < 1");
  if (batch < 1 || x.cols() % batch != 0) {
    throw Error(ErrorKind::kInvalidShape, "upsample_nearest: bad batch split of " + shape_str(x.shape()));
  }
  const int c = x.rows(), len = x.cols() / batch, total_in = x.cols(), total_out = out_len * batch;
  std::vector<int> src(static_cast<size_t>(total_out));
  for (int b = 0; b < batch; ++b)
    for (int j = 0; j < out_len; ++j)
      src[static_cast<size_t>(b * out_len + j)] = b * len + static_cast<int>(static_cast<long>(j) * len / out_len);
  std::vector<float> out(static_cast<size_t>(c) * total_out);
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < total_out; ++j)
      out[static_cast<size_t>(i) * total_out + j] = x.data()[static_cast<size_t>(i) * total_in + src[j]];
  Node* xn = x.node().get();
  return make_op({c, total_out}, std::move(out), {x.node()}, [xn, c, total_in, total_out, src](Node& self) {
    auto& g = xn->ensure_grad();
    for (int i = 0; i < c; ++i)
      for (int j = 0; j < total_out; ++j)
        g[static_cast<size_t>(i) * total_in + src[j]] += self.grad[static_cast<size_t>(i) * total_out + j];
  });
}

Tensor sum(const Tensor& x) {
  float total = 0.0f;
  for (float v : x.data()) total += v;
  Node* xn = x.node().get();
  return make_op({1, 1}, {total}, {x.node()}, [xn](Node& self) {
    auto& g = xn->ensure_grad();
    for (float& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0f / static_cast<float>(x.numel())); }

Tensor sum_squares(const Tensor& x) {
  float total = 0.0f;
  for (float v : x.data()) total += v * v;
  Node* xn = x.node().get();
  return make_op({1, 1}, {total}, {x.node()}, [xn](Node& self) {
    auto& g = xn->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += 2.0f * xn->value[i] * self.grad[0];
  });
}

Tensor cross_entropy(const Tensor& logits, int target) {
  const int k = static_cast<int>(logits.numel());
  if (target < 0 || target >= k) {
    throw Error(ErrorKind::kInvalidInput, "cross_entropy target " + std::to_string(target) +
                                              " outside [0, " + std::to_string(k) + ")");
  }
  const auto z = logits.data();
  const float mx = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (float v : z) total += std::exp(static_cast<double>(v - mx));
  const double lse = static_cast<double>(mx) + std::log(total);
  const float loss = static_cast<float>(lse - z[target]);
  Node* zn = logits.node().get();
  return make_op({1, 1}, {loss}, {logits.node()}, [zn, k, target, lse](Node& self) {
    auto& g = zn->ensure_grad();
    for (int i = 0; i < k; ++i) {
      const double p = std::exp(static_cast<double>(zn->value[i]) - lse);
      g[i] += self.grad[0] * static_cast<float>(p - (i == target ? 1.0 : 0.0));
    }
  });
}

Tensor sinusoidal_embed(float tau, int dim) {
  if (dim < 2 || dim % 2 != 0) {
    throw Error(ErrorKind::kConfig, "sinusoidal embedding dim must be even, got " + std::to_string(dim));
  }
  const int half = dim / 2;
  const double arg = 1000.0 * static_cast<double>(tau);
  std::vector<float> out(static_cast<size_t>(dim));
  for (int i = 0; i < half; ++i) {
    const double freq = half > 1 ? std::pow(1e4, -static_cast<double>(i) / (half - 1)) : 1.0;
    out[2 * i] = static_cast<float>(std::sin(arg * freq));
    out[2 * i + 1] = static_cast<float>(std::cos(arg * freq));
  }
  return Tensor::row(std::move(out));
}

}  // namespace crowdfm::ad
