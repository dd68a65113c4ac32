#pragma once

#include <cstddef>

#include "mmfusion/matrix.hpp"
#include "mmfusion/rng.hpp"

namespace mmfusion {

// Mixture-of-experts multi-label head. Column j*m + i of both weight
// matrices holds expert i of class j.
struct MoeParams {
  Matrix W_gate;    // F x (m*c)
  Matrix W_expert;  // F x (m*c)
  std::size_t mixtures = 2;
  std::size_t classes = 1;
  double l2 = 1e-6;

  static MoeParams init(std::size_t input_dim, std::size_t classes, std::size_t mixtures,
                        double l2, Rng& rng);
  std::size_t input_dim() const { return W_gate.rows(); }
  void validate() const;
};

struct MoeCache {
  Matrix f;
  Matrix gate;    // B x (m*c) softmax weights per class
  Matrix expert;  // B x (m*c) sigmoid activations
};

struct MoeGrads {
  Matrix f;
  Matrix W_gate;
  Matrix W_expert;
};

// d[class] = sum_i softmax(g)_i * sigmoid(e_i).
Matrix moe_forward(const Matrix& f, const MoeParams& p, MoeCache* cache = nullptr);
MoeGrads moe_backward(const Matrix& grad_d, const MoeCache& cache, const MoeParams& p);

// lambda * (|W_gate|^2 + |W_expert|^2)
double moe_l2_penalty(const MoeParams& p);
// Adds 2 * lambda * W to the weight gradients.
void add_moe_l2_gradient(const MoeParams& p, MoeGrads& grads);

}  // namespace mmfusion
