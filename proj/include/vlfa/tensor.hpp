#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "vlfa/common.hpp"

namespace vlfa {

using Shape = std::vector<int>;

int shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major float buffer with a shape. Plain value type; the graph
// layer below wraps it.
struct Array {
  Shape shape;
  std::vector<float> data;

  Array() = default;
  explicit Array(Shape s);
  Array(Shape s, std::vector<float> d);

  static Array zeros(Shape s) { return Array(std::move(s)); }
  static Array full(Shape s, float v);

  int numel() const { return static_cast<int>(data.size()); }
  float& operator[](int i) { return data[static_cast<size_t>(i)]; }
  float operator[](int i) const { return data[static_cast<size_t>(i)]; }
  bool finite() const;
};

struct TensorNode {
  Array value;
  Array grad;  // allocated lazily by ensure_grad
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void()> backprop;

  void ensure_grad();
};

// Disables graph construction for its lifetime (inference / plain numeric
// evaluation). Nest freely.
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

// Handle to a graph node. Values are immutable once created except for
// optimizer updates to leaf parameters between graphs.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

  static Tensor constant(Array v);
  static Tensor param(Array v);
  static Tensor scalar(float v);

  bool defined() const { return node_ != nullptr; }
  const Array& value() const;
  Array& mutable_value();
  const Shape& shape() const { return value().shape; }
  int numel() const { return value().numel(); }
  float item() const;
  bool requires_grad() const;
  void set_requires_grad(bool rg);
  const Array& grad() const;
  void zero_grad();
  std::shared_ptr<TensorNode> node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

// Graph operations. Binary elementwise ops accept identical shapes or a
// scalar (numel 1) on either side; anything else is a DimensionError.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, float c);
Tensor shift(const Tensor& a, float c);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor l2norm(const Tensor& a);
Tensor dot(const Tensor& a, const Tensor& b);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add_bias(const Tensor& m, const Tensor& b);
Tensor slice(const Tensor& a, int offset, int count);
Tensor concat(const std::vector<Tensor>& parts);
Tensor reshape(const Tensor& a, Shape s);
Tensor transpose(const Tensor& a);
Tensor cross3(const Tensor& a, const Tensor& b);
Tensor stopgrad(const Tensor& a);

// Sum of squared elements (sum(mul(a, a)) fused into one node).
Tensor sumsq(const Tensor& a);

// Runs reverse-mode accumulation from a scalar root. Gradients add up across
// multiple uses of a node; leaves keep their grads until zero_grad.
void backward(const Tensor& root);

// Raw matmul kernels shared by forward and backward passes.
// C[m,n] += A[m,k] * B[k,n]
void mm_nn(const float* a, const float* b, float* c, int m, int k, int n);
// C[m,k] += G[m,n] * B[k,n]^T
void mm_nt(const float* g, const float* b, float* c, int m, int n, int k);
// C[k,n] += A[m,k]^T * G[m,n]
void mm_tn(const float* a, const float* g, float* c, int m, int k, int n);

}  // namespace vlfa
