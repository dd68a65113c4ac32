#pragma once

#include <cstddef>
#include <vector>

#include "mmfusion/matrix.hpp"
#include "mmfusion/rng.hpp"

namespace mmfusion {

inline constexpr double kNormEps = 1e-12;

// Low-rank factor banks. Output unit i owns the k consecutive columns
// [i*k, (i+1)*k) of both U and V.
struct MfbParams {
  Matrix U;  // C x (k*o)
  Matrix V;  // M x (k*o)
  std::size_t k = 1;
  std::size_t o = 1;

  static MfbParams init(std::size_t visual_dim, std::size_t audio_dim, std::size_t k,
                        std::size_t o, Rng& rng);
  void validate() const;
};

struct MfbGrads {
  Matrix l;
  Matrix a;
  Matrix U;
  Matrix V;
};

struct MfbCache {
  Matrix l;
  Matrix a;
  Matrix proj_l;  // l * U
  Matrix proj_a;  // a * V
  Matrix mask;    // dropout mask on the product; empty in eval mode
  Matrix pooled;  // before ReLU
  Matrix rectified;
  Matrix out;
  std::size_t k = 0;
  std::size_t o = 0;
};

// Reference form: f_i = l^T W_i a for each of the o full matrices.
Matrix bilinear_full(const Matrix& l, const Matrix& a, const std::vector<Matrix>& W);

// W_i = U_i V_i^T, the full matrices the factor banks stand for.
std::vector<Matrix> expand_mfb_weights(const MfbParams& p);

// Non-overlapping sum pooling with window k along columns.
Matrix sum_pool(const Matrix& x, std::size_t k);

// (l U) .* (a V) followed by sum pooling over k; B x o.
Matrix mfb_core(const Matrix& l_batch, const Matrix& a_batch, const MfbParams& p);

// product -> dropout (train only) -> sum pool -> ReLU -> row L2 norm.
Matrix mfb_forward(const Matrix& l_batch, const Matrix& a_batch, const MfbParams& p,
                   double dropout_rate, Rng& rng, bool train_mode, MfbCache* cache = nullptr);

MfbGrads mfb_backward(const Matrix& grad_f, const MfbCache& cache, const MfbParams& p);

Matrix concat_forward(const Matrix& l_batch, const Matrix& a_batch);
// Splits a gradient on the concatenation back into (visual, audio) parts.
std::pair<Matrix, Matrix> concat_backward(const Matrix& grad, std::size_t visual_dim);

// Two independent linear projections, concatenated visual-first. Widths
// match MFB's k*o so both carry the same number of parameters.
struct FcConcatParams {
  Matrix Wv;  // C x (k*o)
  Matrix Wa;  // M x (k*o)

  static FcConcatParams init(std::size_t visual_dim, std::size_t audio_dim, std::size_t k,
                             std::size_t o, Rng& rng);
  std::size_t parameter_count() const { return Wv.size() + Wa.size(); }
};

struct FcConcatCache {
  Matrix l;
  Matrix a;
};

struct FcConcatGrads {
  Matrix l;
  Matrix a;
  Matrix Wv;
  Matrix Wa;
};

Matrix fc_concat_forward(const Matrix& l_batch, const Matrix& a_batch, const FcConcatParams& p,
                         FcConcatCache* cache = nullptr);
FcConcatGrads fc_concat_backward(const Matrix& grad, const FcConcatCache& cache,
                                 const FcConcatParams& p);

}  // namespace mmfusion
