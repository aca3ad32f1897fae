#include "vlfa/nn.hpp"

#include <cmath>

namespace vlfa {

Linear make_linear(int in, int out, RngBase& rng) {
  // He initialization for the ReLU stacks these layers live in.
  float sd = std::sqrt(2.0f / static_cast<float>(in));
  Array w({in, out});
  for (float& v : w.data) v = sd * rng.normal();
  Linear l;
  l.W = Tensor::param(std::move(w));
  l.b = Tensor::param(Array({out}));
  return l;
}

Mlp make_mlp(const std::vector<int>& dims, RngBase& rng) {
  if (dims.size() < 2) throw ContractError("make_mlp: need at least input and output dims");
  Mlp mlp;
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    mlp.layers.push_back(make_linear(dims[i], dims[i + 1], rng));
  }
  return mlp;
}

Tensor Mlp::forward(const Tensor& x) const {
  bool flat = x.shape().size() == 1;
  Tensor h = flat ? reshape(x, {1, x.numel()}) : x;
  if (h.shape()[1] != in_dim()) {
    throw DimensionError("mlp: input width " + std::to_string(h.shape()[1]) +
                         " does not match first layer " + std::to_string(in_dim()));
  }
  for (size_t i = 0; i < layers.size(); ++i) {
    h = add_bias(matmul(h, layers[i].W), layers[i].b);
    if (i + 1 < layers.size()) h = relu(h);
  }
  return flat ? reshape(h, {h.numel()}) : h;
}

std::vector<Tensor> Mlp::params() const {
  std::vector<Tensor> out;
  for (const Linear& l : layers) {
    out.push_back(l.W);
    out.push_back(l.b);
  }
  return out;
}

std::vector<NamedTensor> named_mlp(const std::string& prefix, const Mlp& mlp) {
  std::vector<NamedTensor> out;
  for (size_t i = 0; i < mlp.layers.size(); ++i) {
    out.push_back({prefix + "." + std::to_string(i) + ".W", mlp.layers[i].W});
    out.push_back({prefix + "." + std::to_string(i) + ".b", mlp.layers[i].b});
  }
  return out;
}

void load_mlp(Mlp& mlp, const std::string& prefix,
              const std::function<const Array*(const std::string&)>& fetch) {
  mlp.layers.clear();
  for (int i = 0;; ++i) {
    std::string base = prefix + "." + std::to_string(i);
    const Array* w = fetch(base + ".W");
    if (!w) break;
    const Array* b = fetch(base + ".b");
    if (!b) throw IntegrityError("checkpoint has " + base + ".W but no matching bias");
    Linear l;
    l.W = Tensor::param(*w);
    l.b = Tensor::param(*b);
    mlp.layers.push_back(std::move(l));
  }
  if (mlp.layers.empty()) {
    throw IntegrityError("no layers found under checkpoint prefix " + prefix);
  }
}

Adam::Adam(std::vector<Tensor> params, float lr, float beta1, float beta2, float eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const Tensor& p : params_) {
    if (!p.requires_grad()) throw ContractError("adam: all parameters must require grad");
    m_.push_back(Array::zeros(p.shape()));
    v_.push_back(Array::zeros(p.shape()));
  }
}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

void Adam::step() {
  ++step_count_;
  float bc1 = 1.0f - std::pow(beta1_, static_cast<float>(step_count_));
  float bc2 = 1.0f - std::pow(beta2_, static_cast<float>(step_count_));
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& p = params_[pi];
    const Array& g = p.grad();
    Array& val = p.mutable_value();
    Array& m = m_[pi];
    Array& v = v_[pi];
    int n = val.numel();
    for (int i = 0; i < n; ++i) {
      float gi = g[i];
      m[i] = beta1_ * m[i] + (1.0f - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1.0f - beta2_) * gi * gi;
      float mh = m[i] / bc1;
      float vh = v[i] / bc2;
      val[i] -= lr_ * mh / (std::sqrt(vh) + eps_);
    }
  }
}

}  // namespace vlfa
