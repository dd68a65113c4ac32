#include "mmfusion/classifier.hpp"

#include <algorithm>
#include <cmath>

#include "mmfusion/error.hpp"

namespace mmfusion {

MoeParams MoeParams::init(std::size_t input_dim, std::size_t classes, std::size_t mixtures,
                          double l2, Rng& rng) {
  MoeParams p;
  p.mixtures = mixtures;
  p.classes = classes;
  p.l2 = l2;
  p.W_gate = xavier_init(input_dim, mixtures * classes, rng);
  p.W_expert = xavier_init(input_dim, mixtures * classes, rng);
  return p;
}

void MoeParams::validate() const {
  if (mixtures == 0 || classes == 0) throw ShapeError("MoE needs m >= 1 and c >= 1");
  if (l2 < 0.0) throw ConfigError("MoE L2 penalty must be nonnegative");
  if (W_gate.cols() != mixtures * classes || !W_gate.same_shape(W_expert)) {
    throw ShapeError("MoE weights " + W_gate.shape_string() + " / " + W_expert.shape_string() +
                     " inconsistent with m*c = " + std::to_string(mixtures * classes));
  }
}

Matrix moe_forward(const Matrix& f, const MoeParams& p, MoeCache* cache) {
  p.validate();
  if (f.cols() != p.input_dim()) {
    throw ShapeError("moe_forward: input " + f.shape_string() + " incompatible with weights " +
                     p.W_gate.shape_string());
  }
  const std::size_t B = f.rows();
  const std::size_t m = p.mixtures;
  Matrix gate = matmul(f, p.W_gate);
  Matrix expert = sigmoid(matmul(f, p.W_expert));
  Matrix d(B, p.classes);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < p.classes; ++c) {
      double* g = gate.data() + b * gate.cols() + c * m;
      const double mx = *std::max_element(g, g + m);
      double total = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        g[i] = std::exp(g[i] - mx);
        total += g[i];
      }
      double acc = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        g[i] /= total;
        acc += g[i] * expert(b, c * m + i);
      }
      d(b, c) = acc;
    }
  }
  if (cache) {
    cache->f = f;
    cache->gate = std::move(gate);
    cache->expert = std::move(expert);
  }
  return d;
}

MoeGrads moe_backward(const Matrix& grad_d, const MoeCache& cache, const MoeParams& p) {
  p.validate();
  const std::size_t B = cache.f.rows();
  const std::size_t m = p.mixtures;
  if (grad_d.rows() != B || grad_d.cols() != p.classes) {
    throw ShapeError("moe_backward: gradient " + grad_d.shape_string() +
                     " does not match the cached forward pass");
  }
  Matrix grad_gate_logits(B, m * p.classes);
  Matrix grad_expert_logits(B, m * p.classes);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < p.classes; ++c) {
      const double up = grad_d(b, c);
      double inner = 0.0;  // sum_i pi_i * sigma_i
      for (std::size_t i = 0; i < m; ++i)
        inner += cache.gate(b, c * m + i) * cache.expert(b, c * m + i);
      for (std::size_t i = 0; i < m; ++i) {
        const double pi = cache.gate(b, c * m + i);
        const double s = cache.expert(b, c * m + i);
        grad_gate_logits(b, c * m + i) = up * pi * (s - inner);
        grad_expert_logits(b, c * m + i) = up * pi * s * (1.0 - s);
      }
    }
  }
  MoeGrads g;
  g.W_gate = matmul_tn(cache.f, grad_gate_logits);
  g.W_expert = matmul_tn(cache.f, grad_expert_logits);
  g.f = matmul_nt(grad_gate_logits, p.W_gate);
  axpy(1.0, matmul_nt(grad_expert_logits, p.W_expert), g.f);
  return g;
}

double moe_l2_penalty(const MoeParams& p) {
  if (p.l2 == 0.0) return 0.0;
  return p.l2 * (squared_norm(p.W_gate) + squared_norm(p.W_expert));
}

void add_moe_l2_gradient(const MoeParams& p, MoeGrads& grads) {
  if (p.l2 == 0.0) return;
  axpy(2.0 * p.l2, p.W_gate, grads.W_gate);
  axpy(2.0 * p.l2, p.W_expert, grads.W_expert);
}

}  // namespace mmfusion
