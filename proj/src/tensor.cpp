#include "vlfa/tensor.hpp"

#include <cmath>
#include <cstring>
#include <unordered_set>
#include <utility>

namespace vlfa {

int shape_numel(const Shape& s) {
  if (s.empty()) throw DimensionError("shape must have at least one dimension");
  long long n = 1;
  for (int d : s) {
    if (d <= 0) throw DimensionError("shape dimensions must be positive, got " + shape_str(s));
    n *= d;
  }
  return static_cast<int>(n);
}

std::string shape_str(const Shape& s) {
  std::string out;
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(s[i]);
  }
  return out.empty() ? "()" : out;
}

Array::Array(Shape s) : shape(std::move(s)) {
  data.assign(static_cast<size_t>(shape_numel(shape)), 0.0f);
}

Array::Array(Shape s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
  if (shape_numel(shape) != static_cast<int>(data.size())) {
    throw DimensionError("array data size does not match shape " + shape_str(shape));
  }
}

Array Array::full(Shape s, float v) {
  Array a(std::move(s));
  std::fill(a.data.begin(), a.data.end(), v);
  return a;
}

bool Array::finite() const {
  for (float v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void TensorNode::ensure_grad() {
  if (grad.data.empty()) grad = Array::zeros(value.shape);
}

namespace {

thread_local int t_nograd_depth = 0;

}  // namespace

NoGradGuard::NoGradGuard() { ++t_nograd_depth; }
NoGradGuard::~NoGradGuard() { --t_nograd_depth; }

bool grad_enabled() { return t_nograd_depth == 0; }

Tensor Tensor::constant(Array v) {
  auto n = std::make_shared<TensorNode>();
  n->value = std::move(v);
  return Tensor(std::move(n));
}

Tensor Tensor::param(Array v) {
  auto n = std::make_shared<TensorNode>();
  n->value = std::move(v);
  n->requires_grad = true;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(float v) { return constant(Array({1}, {v})); }

const Array& Tensor::value() const {
  if (!node_) throw ContractError("tensor is empty");
  return node_->value;
}

Array& Tensor::mutable_value() {
  if (!node_) throw ContractError("tensor is empty");
  return node_->value;
}

float Tensor::item() const {
  const Array& v = value();
  if (v.numel() != 1) {
    throw ContractError("item: tensor has " + std::to_string(v.numel()) + " elements, expected 1");
  }
  return v.data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool rg) {
  if (!node_) throw ContractError("tensor is empty");
  if (!node_->parents.empty()) {
    throw ContractError("set_requires_grad: only valid on leaf tensors");
  }
  node_->requires_grad = rg;
  if (!rg) node_->grad = Array();
}

const Array& Tensor::grad() const {
  if (!node_) throw ContractError("tensor is empty");
  if (!node_->requires_grad) throw ContractError("grad: tensor does not require grad");
  if (node_->grad.data.empty()) throw ContractError("grad: no backward pass has reached this tensor");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_) throw ContractError("tensor is empty");
  if (!node_->grad.data.empty()) {
    std::fill(node_->grad.data.begin(), node_->grad.data.end(), 0.0f);
  }
}

namespace {

// Builds an op node. bind receives the new node and returns its backprop
// closure; it is only invoked when the result actually needs gradients.
Tensor make_op(Array value, const std::vector<Tensor>& inputs,
               const std::function<std::function<void()>(TensorNode*)>& bind) {
  auto n = std::make_shared<TensorNode>();
  n->value = std::move(value);
  bool rg = grad_enabled();
  if (rg) {
    bool any = false;
    for (const Tensor& t : inputs) any = any || t.requires_grad();
    rg = any;
  }
  n->requires_grad = rg;
  if (rg) {
    n->parents.reserve(inputs.size());
    for (const Tensor& t : inputs) n->parents.push_back(t.node());
    n->backprop = bind(n.get());
  }
  return Tensor(std::move(n));
}

enum class BCast { Same, AScalar, BScalar };

BCast bcast_of(const Array& a, const Array& b, const char* op) {
  if (a.shape == b.shape) return BCast::Same;
  if (a.numel() == 1) return BCast::AScalar;
  if (b.numel() == 1) return BCast::BScalar;
  throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape) + " and " +
                       shape_str(b.shape) + " do not match and neither is a scalar");
}

void require_2d(const Array& a, const char* op) {
  if (a.shape.size() != 2) {
    throw DimensionError(std::string(op) + ": expected a 2-D tensor, got " + shape_str(a.shape));
  }
}

float* grad_of(TensorNode* p) {
  p->ensure_grad();
  return p->grad.data.data();
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const Array& av = a.value();
  const Array& bv = b.value();
  BCast bc = bcast_of(av, bv, "add");
  Array out(bc == BCast::AScalar ? bv.shape : av.shape);
  int n = out.numel();
  if (bc == BCast::Same) {
    for (int i = 0; i < n; ++i) out[i] = av[i] + bv[i];
  } else if (bc == BCast::AScalar) {
    for (int i = 0; i < n; ++i) out[i] = av.data[0] + bv[i];
  } else {
    for (int i = 0; i < n; ++i) out[i] = av[i] + bv.data[0];
  }
  TensorNode* pa = a.node().get();
  TensorNode* pb = b.node().get();
  return make_op(std::move(out), {a, b}, [=](TensorNode* self) {
    return [=] {
      const float* g = self->grad.data.data();
      int m = self->value.numel();
      if (pa->requires_grad) {
        float* ga = grad_of(pa);
        if (bc == BCast::AScalar) {
          for (int i = 0; i < m; ++i) ga[0] += g[i];
        } else {
          for (int i = 0; i < m; ++i) ga[i] += g[i];
        }
      }
      if (pb->requires_grad) {
        float* gb = grad_of(pb);
        if (bc == BCast::BScalar) {
          for (int i = 0; i < m; ++i) gb[0] += g[i];
        } else {
          for (int i = 0; i < m; ++i) gb[i] += g[i];
        }
      }
    };
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const Array& av = a.value();
  const Array& bv = b.value();
  BCast bc = bcast_of(av, bv, "sub");
  Array out(bc == BCast::AScalar ? bv.shape : av.shape);
  int n = out.numel();
  if (bc == BCast::Same) {
    for (int i = 0; i < n; ++i) out[i] = av[i] - bv[i];
  } else if (bc == BCast::AScalar) {
    for (int i = 0; i < n; ++i) out[i] = av.data[0] - bv[i];
  } else {
    for (int i = 0; i < n; ++i) out[i] = av[i] - bv.data[0];
  }
  TensorNode* pa = a.node().get();
  TensorNode* pb = b.node().get();
  return make_op(std::move(out), {a, b}, [=](TensorNode* self) {
    return [=] {
      const float* g = self->grad.data.data();
      int m = self->value.numel();
      if (pa->requires_grad) {
        float* ga = grad_of(pa);
        if (bc == BCast::AScalar) {
          for (int i = 0; i < m; ++i) ga[0] += g[i];
        } else {
          for (int i = 0; i < m; ++i) ga[i] += g[i];
        }
      }
      if (pb->requires_grad) {
        float* gb = grad_of(pb);
        if (bc == BCast::BScalar) {
          for (int i = 0; i < m; ++i) gb[0] -= g[i];
        } else {
          for (int i = 0; i < m; ++i) gb[i] -= g[i];
        }
      }
    };
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const Array& av = a.value();
  const Array& bv = b.value();
  BCast bc = bcast_of(av, bv, "mul");
  Array out(bc == BCast::AScalar ? bv.shape : av.shape);
  int n = out.numel();
  if (bc == BCast::Same) {
    for (int i = 0; i < n; ++i) out[i] = av[i] * bv[i];
  } else if (bc == BCast::AScalar) {
    for (int i = 0; i < n; ++i) out[i] = av.data[0] * bv[i];
  } else {
    for (int i = 0; i < n; ++i) out[i] = av[i] * bv.data[0];
  }
  TensorNode* pa = a.node().get();
  TensorNode* pb = b.node().get();
  return make_op(std::move(out), {a, b}, [=](TensorNode* self) {
    return [=] {
      const float* g = self->grad.data.data();
      const float* va = pa->value.data.data();
      const float* vb = pb->value.data.data();
      int m = self->value.numel();
      if (pa->requires_grad) {
        float* ga = grad_of(pa);
        if (bc == BCast::Same) {
          for (int i = 0; i < m; ++i) ga[i] += g[i] * vb[i];
        } else if (bc == BCast::AScalar) {
          for (int i = 0; i < m; ++i) ga[0] += g[i] * vb[i];
        } else {
          for (int i = 0; i < m; ++i) ga[i] += g[i] * vb[0];
        }
      }
      if (pb->requires_grad) {
        float* gb = grad_of(pb);
        if (bc == BCast::Same) {
          for (int i = 0; i < m; ++i) gb[i] += g[i] * va[i];
        } else if (bc == BCast::BScalar) {
          for (int i = 0; i < m; ++i) gb[0] += g[i] * va[i];
        } else {
          for (int i = 0; i < m; ++i) gb[i] += g[i] * va[0];
        }
      }
    };
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  const Array& av = a.value();
  const Array& bv = b.value();
  BCast bc = bcast_of(av, bv, "div");
  for (float v : bv.data) {
    if (v == 0.0f) throw DomainError("div: divisor contains zero");
  }
  Array out(bc == BCast::AScalar ? bv.shape : av.shape);
  int n = out.numel();
  if (bc == BCast::Same) {
    for (int i = 0; i < n; ++i) out[i] = av[i] / bv[i];
  } else if (bc == BCast::AScalar) {
    for (int i = 0; i < n; ++i) out[i] = av.data[0] / bv[i];
  } else {
    for (int i = 0; i < n; ++i) out[i] = av[i] / bv.data[0];
  }
  TensorNode* pa = a.node().get();
  TensorNode* pb = b.node().get();
  return make_op(std::move(out), {a, b}, [=](TensorNode* self) {
    return [=] {
      const float* g = self->grad.data.data();
      const float* va = pa->value.data.data();
      const float* vb = pb->value.data.data();
      int m = self->value.numel();
      auto bval = [&](int i) { return bc == BCast::BScalar ? vb[0] : vb[i]; };
      auto aval = [&](int i) { return bc == BCast::AScalar ? va[0] : va[i]; };
      if (pa->requires_grad) {
        float* ga = grad_of(pa);
        for (int i = 0; i < m; ++i) {
          float d = g[i] / bval(i);
          if (bc == BCast::AScalar) {
            ga[0] += d;
          } else {
            ga[i] += d;
          }
        }
      }
      if (pb->requires_grad) {
        float* gb = grad_of(pb);
        for (int i = 0; i < m; ++i) {
          float bi = bval(i);
          float d = -g[i] * aval(i) / (bi * bi);
          if (bc == BCast::BScalar) {
            gb[0] += d;
          } else {
            gb[i] += d;
          }
        }
      }
    };
  });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0f); }

Tensor scale(const Tensor& a, float c) {
  const Array& av = a.value();
  Array out(av.shape);
  int n = out.numel();
  for (int i = 0; i < n; ++i) out[i] = av[i] * c;
  TensorNode* pa = a.node().get();
  return make_op(std::move(out), {a}, [=](TensorNode* self) {
    return [=] {
      const float* g = self->grad.data.data();
      float* ga = grad_of(pa);
      int m = self->value.numel();
      for (int i = 0; i < m; ++i) ga[i] += g[i] * c;
    };
  });
}

Tensor shift(const Tensor& a, float c) {
  const Array& av = a.value();
  Array out(av.shape);
  int n = out.numel();
  for (int i = 0; i < n; ++i) out[i] = av[i] + c;
  TensorNode* pa = a.node().get();
  return make_op(std::move(out), {a}, [=](TensorNode* self) {
    return [=] {
      const float* g = self->grad.data.data();
      float* ga = grad_of(pa);
      int m = self->value.numel();
      for (int i = 0; i < m; ++i) ga[i] += g[i];
    };
  });
}

Tensor relu(const Tensor& a) {
  const Array& av = a.value();
  Array out(av.shape);
  int n = out.numel();
  for (int i = 0; i < n; ++i) out[i] = av[i] > 0.0f ? av[i] : 0.0f;
  TensorNode* pa = a.node().get();
  return make_op(std::move(out), {a}, [=](TensorNode* self) {
    return [=] {
      const float* g = self->grad.data.data();
      const float* v = pa->value.data.data();
      float* ga = grad_of(pa);
      int m = self->value.numel();
      for (int i = 0; i < m; ++i) {
        if (v[i] > 0.0f) ga[i] += g[i];
      }
    };
  });
}

Tensor exp(const Tensor& a) {
  const Array& av = a.value();
  Array out(av.shape);
  int n = out.numel();
  for (int i = 0; i < n; ++i) out[i] = std::exp(av[i]);
  TensorNode* pa = a.node().get();
  return make_op(std::move(out), {a}, [=](TensorNode* self) {
    return [=] {
      const float* g = self->grad.data.data();
      const float* y = self->value.data.data();
      float* ga = grad_of(pa);
      int m = self->value.numel();
      for (int i = 0; i < m; ++i) ga[i] += g[i] * y[i];
    };
  });
}

Tensor log(const Tensor& a) {
  const Array& av = a.value();
  for (float v : av.data) {
    if (v <= 0.0f) throw DomainError("log: argument must be positive, got " + std::to_string(v));
  }
  Array out(av.shape);
  int n = out.numel();
  for (int i = 0; i < n; ++i) out[i] = std::log(av[i]);
  TensorNode* pa = a.node().get();
  return make_op(std::move(out), {a}, [=](TensorNode* self) {
    return [=] {
      const float* g = self->grad.data.data();
      const float* v = pa->value.data.data();
      float* ga = grad_of(pa);
      int m = self->value.numel();
      for (int i = 0; i < m; ++i) ga[i] += g[i] / v[i];
    };
  });
}

Tensor sum(const Tensor& a) {
  const Array& av = a.value();
  double acc = 0.0;
  for (float v : av.data) acc += v;
  Array out({1}, {static_cast<float>(acc)});
  TensorNode* pa = a.node().get();
  return make_op(std::move(out), {a}, [=](TensorNode* self) {
    return [=] {
      float g = self->grad.data[0];
      float* ga = grad_of(pa);
      int m = pa->value.numel();
      for (int i = 0; i < m; ++i) ga[i] += g;
    };
  });
}

Tensor mean(const Tensor& a) {
  const Array& av = a.value();
  int n = av.numel();
  double acc = 0.0;
  for (float v : av.data) acc += v;
  Array out({1}, {static_cast<float>(acc / n)});
  TensorNode* pa = a.node().get();
  return make_op(std::move(out), {a}, [=](TensorNode* self) {
    return [=] {
      float g = self->grad.data[0] / pa->value.numel();
      float* ga = grad_of(pa);
      int m = pa->value.numel();
      for (int i = 0; i < m; ++i) ga[i] += g;
    };
  });
}

Tensor sumsq(const Tensor& a) {
  const Array& av = a.value();
  double acc = 0.0;
  for (float v : av.data) acc += static_cast<double>(v) * v;
  Array out({1}, {static_cast<float>(acc)});
  TensorNode* pa = a.node().get();
  return make_op(std::move(out), {a}, [=](TensorNode* self) {
    return [=] {
      float g = self->grad.data[0];
      const float* v = pa->value.data.data();
      float* ga = grad_of(pa);
      int m = pa->value.numel();
      for (int i = 0; i < m; ++i) ga[i] += 2.0f * g * v[i];
    };
  });
}

Tensor l2norm(const Tensor& a) {
  const Array& av = a.value();
  double acc = 0.0;
  for (float v : av.data) acc += static_cast<double>(v) * v;
  float nrm = static_cast<float>(std::sqrt(acc));
  Array out({1}, {nrm});
  TensorNode* pa = a.node().get();
  return make_op(std::move(out), {a}, [=](TensorNode* self) {
    return [=] {
      float y = self->value.data[0];
      if (y == 0.0f) return;
      float g = self->grad.data[0] / y;
      const float* v = pa->value.data.data();
      float* ga = grad_of(pa);
      int m = pa->value.numel();
      for (int i = 0; i < m; ++i) ga[i] += g * v[i];
    };
  });
}

Tensor dot(const Tensor& a, const Tensor& b) {
  const Array& av = a.value();
  const Array& bv = b.value();
  if (av.numel() != bv.numel()) {
    throw DimensionError("dot: element counts differ (" + std::to_string(av.numel()) + " vs " +
                         std::to_string(bv.numel()) + ")");
  }
  double acc = 0.0;
  int n = av.numel();
  for (int i = 0; i < n; ++i) acc += static_cast<double>(av[i]) * bv[i];
  Array out({1}, {static_cast<float>(acc)});
  TensorNode* pa = a.node().get();
  TensorNode* pb = b.node().get();
  return make_op(std::move(out), {a, b}, [=](TensorNode* self) {
    return [=] {
      float g = self->grad.data[0];
      const float* va = pa->value.data.data();
      const float* vb = pb->value.data.data();
      int m = pa->value.numel();
      if (pa->requires_grad) {
        float* ga = grad_of(pa);
        for (int i = 0; i < m; ++i) ga[i] += g * vb[i];
      }
      if (pb->requires_grad) {
        float* gb = grad_of(pb);
        for (int i = 0; i < m; ++i) gb[i] += g * va[i];
      }
    };
  });
}

void mm_nn(const float* a, const float* b, float* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<size_t>(i) * k;
    float* crow = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      float av = arow[p];
      const float* brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void mm_nt(const float* g, const float* b, float* c, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const float* grow = g + static_cast<size_t>(i) * n;
    float* crow = c + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const float* brow = b + static_cast<size_t>(p) * n;
      float acc = 0.0f;
      for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
      crow[p] += acc;
    }
  }
}

void mm_tn(const float* a, const float* g, float* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<size_t>(i) * k;
    const float* grow = g + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      float av = arow[p];
      float* crow = c + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Array& av = a.value();
  const Array& bv = b.value();
  require_2d(av, "matmul");
  require_2d(bv, "matmul");
  int m = av.shape[0], k = av.shape[1];
  int k2 = bv.shape[0], n = bv.shape[1];
  if (k != k2) {
    throw DimensionError("matmul: inner dimensions disagree (" + shape_str(av.shape) + " vs " +
                         shape_str(bv.shape) + ")");
  }
  Array out({m, n});
  if (m >= 64 && !in_parallel_region() && worker_count() > 1) {
    // Row blocks are disjoint, so the parallel result is bit-identical to
    // the serial one.
    const float* pa = av.data.data();
    const float* pb = bv.data.data();
    float* pc = out.data.data();
    parallel_for(m, [&](int i) {
      mm_nn(pa + static_cast<size_t>(i) * k, pb, pc + static_cast<size_t>(i) * n, 1, k, n);
    });
  } else {
    mm_nn(av.data.data(), bv.data.data(), out.data.data(), m, k, n);
  }
  TensorNode* pa = a.node().get();
  TensorNode* pb = b.node().get();
  return make_op(std::move(out), {a, b}, [=](TensorNode* self) {
    return [=] {
      const float* g = self->grad.data.data();
      if (pa->requires_grad) {
        mm_nt(g, pb->value.data.data(), grad_of(pa), m, n, k);
      }
      if (pb->requires_grad) {
        mm_tn(pa->value.data.data(), g, grad_of(pb), m, k, n);
      }
    };
  });
}

Tensor add_bias(const Tensor& m, const Tensor& b) {
  const Array& mv = m.value();
  const Array& bv = b.value();
  require_2d(mv, "add_bias");
  if (bv.shape.size() != 1 || bv.shape[0] != mv.shape[1]) {
    throw DimensionError("add_bias: bias " + shape_str(bv.shape) + " does not match matrix " +
                         shape_str(mv.shape));
  }
  int rows = mv.shape[0], cols = mv.shape[1];
  Array out(mv.shape);
  for (int i = 0; i < rows; ++i) {
    const float* src = mv.data.data() + static_cast<size_t>(i) * cols;
    float* dst = out.data.data() + static_cast<size_t>(i) * cols;
    for (int j = 0; j < cols; ++j) dst[j] = src[j] + bv[j];
  }
  TensorNode* pm = m.node().get();
  TensorNode* pb = b.node().get();
  return make_op(std::move(out), {m, b}, [=](TensorNode* self) {
    return [=] {
      const float* g = self->grad.data.data();
      if (pm->requires_grad) {
        float* gm = grad_of(pm);
        int total = rows * cols;
        for (int i = 0; i < total; ++i) gm[i] += g[i];
      }
      if (pb->requires_grad) {
        float* gb = grad_of(pb);
        for (int i = 0; i < rows; ++i) {
          const float* grow = g + static_cast<size_t>(i) * cols;
          for (int j = 0; j < cols; ++j) gb[j] += grow[j];
        }
      }
    };
  });
}

Tensor slice(const Tensor& a, int offset, int count) {
  const Array& av = a.value();
  if (offset < 0 || count < 1 || offset + count > av.numel()) {
    throw DimensionError("slice: range [" + std::to_string(offset) + ", " +
                         std::to_string(offset + count) + ") out of bounds for " +
                         std::to_string(av.numel()) + " elements");
  }
  Array out({count});
  std::memcpy(out.data.data(), av.data.data() + offset, sizeof(float) * count);
  TensorNode* pa = a.node().get();
  return make_op(std::move(out), {a}, [=](TensorNode* self) {
    return [=] {
      const float* g = self->grad.data.data();
      float* ga = grad_of(pa);
      for (int i = 0; i < count; ++i) ga[offset + i] += g[i];
    };
  });
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat: needs at least one part");
  int total = 0;
  for (const Tensor& t : parts) total += t.numel();
  Array out({total});
  int at = 0;
  for (const Tensor& t : parts) {
    const Array& v = t.value();
    std::memcpy(out.data.data() + at, v.data.data(), sizeof(float) * v.numel());
    at += v.numel();
  }
  std::vector<TensorNode*> raw;
  raw.reserve(parts.size());
  for (const Tensor& t : parts) raw.push_back(t.node().get());
  return make_op(std::move(out), parts, [=](TensorNode* self) {
    return [=] {
      const float* g = self->grad.data.data();
      int at2 = 0;
      for (TensorNode* p : raw) {
        int n = p->value.numel();
        if (p->requires_grad) {
          float* gp = grad_of(p);
          for (int i = 0; i < n; ++i) gp[i] += g[at2 + i];
        }
        at2 += n;
      }
    };
  });
}

Tensor reshape(const Tensor& a, Shape s) {
  const Array& av = a.value();
  if (shape_numel(s) != av.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(av.shape) + " as " + shape_str(s));
  }
  Array out(std::move(s), av.data);
  TensorNode* pa = a.node().get();
  return make_op(std::move(out), {a}, [=](TensorNode* self) {
    return [=] {
      const float* g = self->grad.data.data();
      float* ga = grad_of(pa);
      int m = self->value.numel();
      for (int i = 0; i < m; ++i) ga[i] += g[i];
    };
  });
}

Tensor transpose(const Tensor& a) {
  const Array& av = a.value();
  require_2d(av, "transpose");
  int r = av.shape[0], c = av.shape[1];
  Array out({c, r});
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) {
      out.data[static_cast<size_t>(j) * r + i] = av.data[static_cast<size_t>(i) * c + j];
    }
  }
  TensorNode* pa = a.node().get();
  return make_op(std::move(out), {a}, [=](TensorNode* self) {
    return [=] {
      const float* g = self->grad.data.data();
      float* ga = grad_of(pa);
      for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) {
          ga[static_cast<size_t>(i) * c + j] += g[static_cast<size_t>(j) * r + i];
        }
      }
    };
  });
}

Tensor cross3(const Tensor& a, const Tensor& b) {
  const Array& av = a.value();
  const Array& bv = b.value();
  if (av.numel() != 3 || bv.numel() != 3) {
    throw DimensionError("cross3: both operands must have 3 elements");
  }
  Array out({3});
  out[0] = av[1] * bv[2] - av[2] * bv[1];
  out[1] = av[2] * bv[0] - av[0] * bv[2];
  out[2] = av[0] * bv[1] - av[1] * bv[0];
  TensorNode* pa = a.node().get();
  TensorNode* pb = b.node().get();
  return make_op(std::move(out), {a, b}, [=](TensorNode* self) {
    return [=] {
      const float* g = self->grad.data.data();
      const float* va = pa->value.data.data();
      const float* vb = pb->value.data.data();
      if (pa->requires_grad) {
        float* ga = grad_of(pa);
        ga[0] += vb[1] * g[2] - vb[2] * g[1];
        ga[1] += vb[2] * g[0] - vb[0] * g[2];
        ga[2] += vb[0] * g[1] - vb[1] * g[0];
      }
      if (pb->requires_grad) {
        float* gb = grad_of(pb);
        gb[0] += g[1] * va[2] - g[2] * va[1];
        gb[1] += g[2] * va[0] - g[0] * va[2];
        gb[2] += g[0] * va[1] - g[1] * va[0];
      }
    };
  });
}

Tensor stopgrad(const Tensor& a) { return Tensor::constant(a.value()); }

void backward(const Tensor& root) {
  auto root_node = root.node();
  if (!root_node) throw ContractError("backward: empty tensor");
  TensorNode* r = root_node.get();
  if (r->value.numel() != 1) {
    throw ContractError("backward: root must be a scalar, got " + shape_str(r->value.shape));
  }
  if (!r->requires_grad) {
    throw ContractError("backward: root does not depend on any trainable leaf");
  }

  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<TensorNode*, size_t>> stack;
  stack.emplace_back(r, 0);
  seen.insert(r);
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      TensorNode* p = node->parents[idx++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  r->ensure_grad();
  r->grad.data[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backprop) {
      n->ensure_grad();
      n->backprop();
    }
  }
}

}  // namespace vlfa
