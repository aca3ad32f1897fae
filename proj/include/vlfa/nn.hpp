#pragma once

#include <string>
#include <vector>

#include "vlfa/rng.hpp"
#include "vlfa/tensor.hpp"

namespace vlfa {

// Fully connected layer; W is stored [in, out] so a batch forward is a single
// matmul without transposes.
struct Linear {
  Tensor W;
  Tensor b;

  int in_dim() const { return W.shape()[0]; }
  int out_dim() const { return W.shape()[1]; }
};

Linear make_linear(int in, int out, RngBase& rng);

// MLP with ReLU between layers and a linear head.
struct Mlp {
  std::vector<Linear> layers;

  // x is [B, in] or flat [in]; the result keeps the input's arity.
  Tensor forward(const Tensor& x) const;
  std::vector<Tensor> params() const;
  int in_dim() const { return layers.front().in_dim(); }
  int out_dim() const { return layers.back().out_dim(); }
};

Mlp make_mlp(const std::vector<int>& dims, RngBase& rng);

// Named views of a model's tensors, used by the checkpoint layer.
struct NamedTensor {
  std::string name;
  Tensor t;
};

std::vector<NamedTensor> named_mlp(const std::string& prefix, const Mlp& mlp);

// fetch returns the stored array for a name, or nullptr when the checkpoint
// has no such tensor (used to discover the layer count).
void load_mlp(Mlp& mlp, const std::string& prefix,
              const std::function<const Array*(const std::string&)>& fetch);

class Adam {
 public:
  Adam(std::vector<Tensor> params, float lr, float beta1 = 0.9f, float beta2 = 0.999f,
       float eps = 1e-8f);

  void step();
  void zero_grad();
  float lr() const { return lr_; }
  void set_lr(float lr) { lr_ = lr; }

 private:
  std::vector<Tensor> params_;
  std::vector<Array> m_, v_;
  float lr_, beta1_, beta2_, eps_;
  long step_count_ = 0;
};

}  // namespace vlfa
