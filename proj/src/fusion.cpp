#include "mmfusion/fusion.hpp"

#include <cmath>

#include "mmfusion/error.hpp"

namespace mmfusion {

MfbParams MfbParams::init(std::size_t visual_dim, std::size_t audio_dim, std::size_t k,
                          std::size_t o, Rng& rng) {
  MfbParams p;
  p.k = k;
  p.o = o;
  p.U = xavier_init(visual_dim, k * o, rng);
  p.V = xavier_init(audio_dim, k * o, rng);
  return p;
}

void MfbParams::validate() const {
  if (k == 0 || o == 0) throw ShapeError("MFB requires k >= 1 and o >= 1");
  if (U.cols() != k * o || V.cols() != k * o) {
    throw ShapeError("MFB factor banks must have k*o = " + std::to_string(k * o) +
                     " columns, got U " + U.shape_string() + " and V " + V.shape_string());
  }
}

Matrix bilinear_full(const Matrix& l, const Matrix& a, const std::vector<Matrix>& W) {
  if (l.rows() != a.rows()) {
    throw ShapeError("bilinear_full: batch mismatch " + l.shape_string() + " vs " +
                     a.shape_string());
  }
  Matrix out(l.rows(), W.size());
  for (std::size_t i = 0; i < W.size(); ++i) {
    if (W[i].rows() != l.cols() || W[i].cols() != a.cols()) {
      throw ShapeError("bilinear_full: W[" + std::to_string(i) + "] is " + W[i].shape_string() +
                       ", expected " + std::to_string(l.cols()) + "x" + std::to_string(a.cols()));
    }
    for (std::size_t b = 0; b < l.rows(); ++b) {
      double acc = 0.0;
      for (std::size_t r = 0; r < l.cols(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) acc += l(b, r) * W[i](r, c) * a(b, c);
      out(b, i) = acc;
    }
  }
  return out;
}

std::vector<Matrix> expand_mfb_weights(const MfbParams& p) {
  p.validate();
  std::vector<Matrix> W;
  W.reserve(p.o);
  for (std::size_t i = 0; i < p.o; ++i) {
    W.push_back(matmul_nt(column_slice(p.U, i * p.k, p.k), column_slice(p.V, i * p.k, p.k)));
  }
  return W;
}

Matrix sum_pool(const Matrix& x, std::size_t k) {
  if (k == 0 || x.cols() % k != 0) {
    throw ShapeError("sum_pool: width " + std::to_string(x.cols()) + " not divisible by " +
                     std::to_string(k));
  }
  const std::size_t o = x.cols() / k;
  Matrix out(x.rows(), o);
  for (std::size_t b = 0; b < x.rows(); ++b) {
    auto in = x.row(b);
    for (std::size_t j = 0; j < o; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += in[j * k + t];
      out(b, j) = acc;
    }
  }
  return out;
}

namespace {

void check_mfb_inputs(const Matrix& l, const Matrix& a, const MfbParams& p) {
  p.validate();
  if (l.rows() != a.rows()) {
    throw ShapeError("MFB: batch mismatch " + l.shape_string() + " vs " + a.shape_string());
  }
  if (l.cols() != p.U.rows()) {
    throw ShapeError("MFB: visual input " + l.shape_string() + " incompatible with U " +
                     p.U.shape_string());
  }
  if (a.cols() != p.V.rows()) {
    throw ShapeError("MFB: audio input " + a.shape_string() + " incompatible with V " +
                     p.V.shape_string());
  }
}

}  // namespace

Matrix mfb_core(const Matrix& l_batch, const Matrix& a_batch, const MfbParams& p) {
  check_mfb_inputs(l_batch, a_batch, p);
  return sum_pool(hadamard(matmul(l_batch, p.U), matmul(a_batch, p.V)), p.k);
}

Matrix mfb_forward(const Matrix& l_batch, const Matrix& a_batch, const MfbParams& p,
                   double dropout_rate, Rng& rng, bool train_mode, MfbCache* cache) {
  check_mfb_inputs(l_batch, a_batch, p);
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ConfigError("MFB dropout rate must lie in [0, 1)");
  }
  Matrix proj_l = matmul(l_batch, p.U);
  Matrix proj_a = matmul(a_batch, p.V);
  Matrix product = hadamard(proj_l, proj_a);
  Matrix mask;
  if (train_mode && dropout_rate > 0.0) {
    mask = dropout_mask(product.rows(), product.cols(), dropout_rate, rng);
    product = hadamard(product, mask);
  }
  Matrix pooled = sum_pool(product, p.k);
  Matrix rectified = relu(pooled);
  Matrix out = l2_normalize_rows(rectified, kNormEps);
  if (cache) {
    cache->l = l_batch;
    cache->a = a_batch;
    cache->proj_l = std::move(proj_l);
    cache->proj_a = std::move(proj_a);
    cache->mask = std::move(mask);
    cache->pooled = std::move(pooled);
    cache->rectified = std::move(rectified);
    cache->out = out;
    cache->k = p.k;
    cache->o = p.o;
  }
  return out;
}

MfbGrads mfb_backward(const Matrix& grad_f, const MfbCache& cache, const MfbParams& p) {
  p.validate();
  if (cache.k != p.k || cache.o != p.o || grad_f.rows() != cache.out.rows() ||
      grad_f.cols() != p.o) {
    throw ShapeError("mfb_backward: gradient " + grad_f.shape_string() +
                     " does not match the cached forward pass");
  }
  const std::size_t batch = grad_f.rows();
  // Through y = r / sqrt(|r|^2 + eps): dr = (dy - y <y, dy>) / s.
  Matrix grad_pooled(batch, p.o);
  for (std::size_t b = 0; b < batch; ++b) {
    auto r = cache.rectified.row(b);
    auto y = cache.out.row(b);
    auto dy = grad_f.row(b);
    double ss = 0.0;
    double dot = 0.0;
    for (std::size_t j = 0; j < p.o; ++j) {
      ss += r[j] * r[j];
      dot += y[j] * dy[j];
    }
    const double s = std::sqrt(ss + kNormEps);
    for (std::size_t j = 0; j < p.o; ++j) {
      const double dr = s > 0.0 ? (dy[j] - y[j] * dot) / s : 0.0;
      grad_pooled(b, j) = cache.pooled(b, j) > 0.0 ? dr : 0.0;
    }
  }
  // Sum pooling broadcasts back over each window, then through the mask.
  Matrix grad_product(batch, p.k * p.o);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < p.o; ++j)
      for (std::size_t t = 0; t < p.k; ++t) grad_product(b, j * p.k + t) = grad_pooled(b, j);
  if (!cache.mask.empty()) grad_product = hadamard(grad_product, cache.mask);

  const Matrix grad_proj_l = hadamard(grad_product, cache.proj_a);
  const Matrix grad_proj_a = hadamard(grad_product, cache.proj_l);
  MfbGrads g;
  g.U = matmul_tn(cache.l, grad_proj_l);
  g.V = matmul_tn(cache.a, grad_proj_a);
  g.l = matmul_nt(grad_proj_l, p.U);
  g.a = matmul_nt(grad_proj_a, p.V);
  return g;
}

Matrix concat_forward(const Matrix& l_batch, const Matrix& a_batch) {
  return hconcat(l_batch, a_batch);
}

std::pair<Matrix, Matrix> concat_backward(const Matrix& grad, std::size_t visual_dim) {
  if (visual_dim > grad.cols()) throw ShapeError("concat_backward: split point beyond width");
  return {column_slice(grad, 0, visual_dim),
          column_slice(grad, visual_dim, grad.cols() - visual_dim)};
}

FcConcatParams FcConcatParams::init(std::size_t visual_dim, std::size_t audio_dim, std::size_t k,
                                    std::size_t o, Rng& rng) {
  FcConcatParams p;
  p.Wv = xavier_init(visual_dim, k * o, rng);
  p.Wa = xavier_init(audio_dim, k * o, rng);
  return p;
}

Matrix fc_concat_forward(const Matrix& l_batch, const Matrix& a_batch, const FcConcatParams& p,
                         FcConcatCache* cache) {
  if (l_batch.rows() != a_batch.rows()) {
    throw ShapeError("fc_concat: batch mismatch " + l_batch.shape_string() + " vs " +
                     a_batch.shape_string());
  }
  Matrix out = hconcat(matmul(l_batch, p.Wv), matmul(a_batch, p.Wa));
  if (cache) {
    cache->l = l_batch;
    cache->a = a_batch;
  }
  return out;
}

FcConcatGrads fc_concat_backward(const Matrix& grad, const FcConcatCache& cache,
                                 const FcConcatParams& p) {
  if (grad.cols() != p.Wv.cols() + p.Wa.cols() || grad.rows() != cache.l.rows()) {
    throw ShapeError("fc_concat_backward: gradient " + grad.shape_string() +
                     " does not match the cached forward pass");
  }
  auto [gv, ga] = concat_backward(grad, p.Wv.cols());
  FcConcatGrads g;
  g.Wv = matmul_tn(cache.l, gv);
  g.Wa = matmul_tn(cache.a, ga);
  g.l = matmul_nt(gv, p.Wv);
  g.a = matmul_nt(ga, p.Wa);
  return g;
}

}  // namespace mmfusion
