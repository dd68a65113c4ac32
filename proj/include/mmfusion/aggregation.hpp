#pragma once

#include <cstddef>
#include <vector>

#include "mmfusion/matrix.hpp"
#include "mmfusion/rng.hpp"

namespace mmfusion {

// Temporal aggregators. Each one turns an N x D block of frame features
// into a single 1 x D' video-level row. Modalities are aggregated with
// independent parameter sets.

Matrix avgpool(const Matrix& frames);
Matrix avgpool_backward(const Matrix& grad, std::size_t frame_count);

// Deep bag of frames: fc -> ReLU -> batch norm over the frames -> max.
struct DbofParams {
  Matrix W_proj;  // D x P
  Matrix b_proj;  // 1 x P
  Matrix bn_gamma;
  Matrix bn_beta;
  Matrix bn_running_mean;
  Matrix bn_running_var;
  double bn_momentum = 0.99;
  double bn_eps = 1e-5;

  static DbofParams init(std::size_t input_dim, std::size_t projection_dim, Rng& rng);
  std::size_t input_dim() const { return W_proj.rows(); }
  std::size_t output_dim() const { return W_proj.cols(); }
  void validate() const;
};

struct DbofCache {
  Matrix frames;
  Matrix pre;         // frames * W + b
  Matrix normalized;  // (relu(pre) - mean) * inv_std
  Matrix batch_mean;  // statistics of this call (train mode only)
  Matrix batch_var;
  Matrix inv_std;
  std::vector<std::size_t> argmax;  // winning frame per output column
  bool train_mode = false;
};

struct DbofGrads {
  Matrix frames;
  Matrix W_proj;
  Matrix b_proj;
  Matrix bn_gamma;
  Matrix bn_beta;
};

Matrix dbof_forward(const Matrix& frames, const DbofParams& p, bool train_mode,
                    DbofCache* cache = nullptr);
DbofGrads dbof_backward(const Matrix& grad, const DbofCache& cache, const DbofParams& p);
// Folds averaged per-step batch statistics into the running estimates.
void dbof_update_running(DbofParams& p, const Matrix& batch_mean, const Matrix& batch_var);

struct NetVladParams {
  Matrix W_assign;  // D x K
  Matrix b_assign;  // 1 x K
  Matrix centers;   // K x D

  static NetVladParams init(std::size_t input_dim, std::size_t clusters, Rng& rng);
  std::size_t input_dim() const { return W_assign.rows(); }
  std::size_t clusters() const { return W_assign.cols(); }
  std::size_t output_dim() const { return clusters() * input_dim(); }
  void validate() const;
};

struct NetVladCache {
  Matrix frames;
  Matrix assign;  // N x K soft assignments
};

struct NetVladGrads {
  Matrix frames;
  Matrix W_assign;
  Matrix b_assign;
  Matrix centers;
};

Matrix netvlad_assign(const Matrix& frames, const NetVladParams& p);
// Sum_i alpha_ik (h_i - c_k) for every cluster, blocks in cluster order.
Matrix vlad_from_assignments(const Matrix& frames, const Matrix& assign, const Matrix& centers);
Matrix netvlad_forward(const Matrix& frames, const NetVladParams& p,
                       NetVladCache* cache = nullptr);
NetVladGrads netvlad_backward(const Matrix& grad, const NetVladCache& cache,
                              const NetVladParams& p);

// Order-preserving subset when N >= target, otherwise sorted draws with
// replacement.
Matrix sample_frames(const Matrix& frames, std::size_t target, Rng& rng);
std::vector<std::size_t> sample_frame_indices(std::size_t frame_count, std::size_t target,
                                              Rng& rng);

}  // namespace mmfusion
