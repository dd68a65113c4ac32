#include "mmfusion/aggregation.hpp"

#include <algorithm>
#include <cmath>

#include "mmfusion/error.hpp"

namespace mmfusion {

namespace {

void require_frames(const Matrix& frames, const char* who) {
  if (frames.rows() == 0) throw ShapeError(std::string(who) + ": video has no frames");
}

}  // namespace

Matrix avgpool(const Matrix& frames) {
  require_frames(frames, "avgpool");
  return scale(column_sums(frames), 1.0 / static_cast<double>(frames.rows()));
}

Matrix avgpool_backward(const Matrix& grad, std::size_t frame_count) {
  if (frame_count == 0) throw ShapeError("avgpool_backward: video has no frames");
  if (grad.rows() != 1) throw ShapeError("avgpool_backward: expected a 1 x D gradient");
  Matrix out(frame_count, grad.cols());
  const double inv = 1.0 / static_cast<double>(frame_count);
  for (std::size_t i = 0; i < frame_count; ++i)
    for (std::size_t j = 0; j < grad.cols(); ++j) out(i, j) = grad(0, j) * inv;
  return out;
}

// ---------------------------------------------------------------- DBoF

DbofParams DbofParams::init(std::size_t input_dim, std::size_t projection_dim, Rng& rng) {
  DbofParams p;
  p.W_proj = xavier_init(input_dim, projection_dim, rng);
  p.b_proj = Matrix(1, projection_dim);
  p.bn_gamma = Matrix(1, projection_dim, 1.0);
  p.bn_beta = Matrix(1, projection_dim);
  p.bn_running_mean = Matrix(1, projection_dim);
  p.bn_running_var = Matrix(1, projection_dim, 1.0);
  return p;
}

void DbofParams::validate() const {
  const std::size_t P = W_proj.cols();
  if (P == 0 || W_proj.rows() == 0) throw ShapeError("DBoF projection is empty");
  for (const Matrix* m : {&b_proj, &bn_gamma, &bn_beta, &bn_running_mean, &bn_running_var}) {
    if (m->rows() != 1 || m->cols() != P) {
      throw ShapeError("DBoF vector parameter " + m->shape_string() + " expected 1x" +
                       std::to_string(P));
    }
  }
}

Matrix dbof_forward(const Matrix& frames, const DbofParams& p, bool train_mode,
                    DbofCache* cache) {
  require_frames(frames, "dbof_forward");
  p.validate();
  if (frames.cols() != p.input_dim()) {
    throw ShapeError("dbof_forward: frames " + frames.shape_string() +
                     " incompatible with projection " + p.W_proj.shape_string());
  }
  const std::size_t N = frames.rows();
  const std::size_t P = p.output_dim();
  Matrix pre = add_row_vector(matmul(frames, p.W_proj), p.b_proj);
  Matrix act = relu(pre);

  Matrix mean(1, P);
  Matrix var(1, P);
  if (train_mode) {
    mean = scale(column_sums(act), 1.0 / static_cast<double>(N));
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < P; ++j) {
        const double d = act(i, j) - mean(0, j);
        var(0, j) += d * d;
      }
    var = scale(var, 1.0 / static_cast<double>(N));
  } else {
    mean = p.bn_running_mean;
    var = p.bn_running_var;
  }
  Matrix inv_std(1, P);
  for (std::size_t j = 0; j < P; ++j)
    inv_std(0, j) = 1.0 / std::sqrt(std::max(var(0, j), 0.0) + p.bn_eps);

  Matrix normalized(N, P);
  Matrix out(1, P);
  std::vector<std::size_t> argmax(P, 0);
  for (std::size_t j = 0; j < P; ++j) {
    for (std::size_t i = 0; i < N; ++i) {
      normalized(i, j) = (act(i, j) - mean(0, j)) * inv_std(0, j);
      const double y = p.bn_gamma(0, j) * normalized(i, j) + p.bn_beta(0, j);
      // Strict comparison keeps the lowest frame index on ties.
      if (i == 0 || y > out(0, j)) {
        out(0, j) = y;
        argmax[j] = i;
      }
    }
  }
  if (cache) {
    cache->frames = frames;
    cache->pre = std::move(pre);
    cache->normalized = std::move(normalized);
    cache->batch_mean = train_mode ? mean : Matrix();
    cache->batch_var = train_mode ? var : Matrix();
    cache->inv_std = std::move(inv_std);
    cache->argmax = std::move(argmax);
    cache->train_mode = train_mode;
  }
  return out;
}

DbofGrads dbof_backward(const Matrix& grad, const DbofCache& cache, const DbofParams& p) {
  const std::size_t N = cache.frames.rows();
  const std::size_t P = p.output_dim();
  if (grad.rows() != 1 || grad.cols() != P || cache.argmax.size() != P) {
    throw ShapeError("dbof_backward: gradient " + grad.shape_string() +
                     " does not match the cached forward pass");
  }
  DbofGrads g;
  g.bn_gamma = Matrix(1, P);
  g.bn_beta = Matrix(1, P);
  Matrix grad_norm(N, P);
  for (std::size_t j = 0; j < P; ++j) {
    const std::size_t i = cache.argmax[j];
    g.bn_beta(0, j) = grad(0, j);
    g.bn_gamma(0, j) = grad(0, j) * cache.normalized(i, j);
    grad_norm(i, j) = grad(0, j) * p.bn_gamma(0, j);
  }

  Matrix grad_act(N, P);
  if (cache.train_mode) {
    const double n = static_cast<double>(N);
    for (std::size_t j = 0; j < P; ++j) {
      double s = 0.0;
      double sx = 0.0;
      for (std::size_t i = 0; i < N; ++i) {
        s += grad_norm(i, j);
        sx += grad_norm(i, j) * cache.normalized(i, j);
      }
      for (std::size_t i = 0; i < N; ++i) {
        grad_act(i, j) =
            cache.inv_std(0, j) / n * (n * grad_norm(i, j) - s - cache.normalized(i, j) * sx);
      }
    }
  } else {
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < P; ++j) grad_act(i, j) = grad_norm(i, j) * cache.inv_std(0, j);
  }

  Matrix grad_pre(N, P);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < P; ++j)
      grad_pre(i, j) = cache.pre(i, j) > 0.0 ? grad_act(i, j) : 0.0;

  g.W_proj = matmul_tn(cache.frames, grad_pre);
  g.b_proj = column_sums(grad_pre);
  g.frames = matmul_nt(grad_pre, p.W_proj);
  return g;
}

void dbof_update_running(DbofParams& p, const Matrix& batch_mean, const Matrix& batch_var) {
  require_same_shape(batch_mean, p.bn_running_mean, "dbof_update_running");
  require_same_shape(batch_var, p.bn_running_var, "dbof_update_running");
  const double m = p.bn_momentum;
  for (std::size_t j = 0; j < p.output_dim(); ++j) {
    p.bn_running_mean(0, j) = m * p.bn_running_mean(0, j) + (1.0 - m) * batch_mean(0, j);
    p.bn_running_var(0, j) =
        std::max(0.0, m * p.bn_running_var(0, j) + (1.0 - m) * batch_var(0, j));
  }
}

// ---------------------------------------------------------------- NetVLAD

NetVladParams NetVladParams::init(std::size_t input_dim, std::size_t clusters, Rng& rng) {
  NetVladParams p;
  p.W_assign = xavier_init(input_dim, clusters, rng);
  p.b_assign = Matrix(1, clusters);
  p.centers = normal_matrix(clusters, input_dim, 1.0 / std::sqrt(static_cast<double>(input_dim)),
                            rng);
  return p;
}

void NetVladParams::validate() const {
  const std::size_t K = W_assign.cols();
  const std::size_t D = W_assign.rows();
  if (K == 0) throw ShapeError("NetVLAD needs at least one cluster");
  if (b_assign.rows() != 1 || b_assign.cols() != K || centers.rows() != K ||
      centers.cols() != D) {
    throw ShapeError("NetVLAD parameters inconsistent: W " + W_assign.shape_string() + ", b " +
                     b_assign.shape_string() + ", centers " + centers.shape_string());
  }
}

Matrix netvlad_assign(const Matrix& frames, const NetVladParams& p) {
  require_frames(frames, "netvlad_assign");
  p.validate();
  if (frames.cols() != p.input_dim()) {
    throw ShapeError("netvlad: frames " + frames.shape_string() + " incompatible with W " +
                     p.W_assign.shape_string());
  }
  return softmax_rows(add_row_vector(matmul(frames, p.W_assign), p.b_assign));
}

Matrix vlad_from_assignments(const Matrix& frames, const Matrix& assign, const Matrix& centers) {
  const std::size_t N = frames.rows();
  const std::size_t D = frames.cols();
  const std::size_t K = centers.rows();
  if (assign.rows() != N || assign.cols() != K || centers.cols() != D) {
    throw ShapeError("vlad: frames " + frames.shape_string() + ", assignments " +
                     assign.shape_string() + ", centers " + centers.shape_string());
  }
  Matrix out(1, K * D);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t k = 0; k < K; ++k) {
      const double alpha = assign(i, k);
      for (std::size_t d = 0; d < D; ++d) out(0, k * D + d) += alpha * (frames(i, d) - centers(k, d));
    }
  return out;
}

Matrix netvlad_forward(const Matrix& frames, const NetVladParams& p, NetVladCache* cache) {
  Matrix assign = netvlad_assign(frames, p);
  Matrix out = vlad_from_assignments(frames, assign, p.centers);
  if (cache) {
    cache->frames = frames;
    cache->assign = std::move(assign);
  }
  return out;
}

NetVladGrads netvlad_backward(const Matrix& grad, const NetVladCache& cache,
                              const NetVladParams& p) {
  const std::size_t N = cache.frames.rows();
  const std::size_t D = p.input_dim();
  const std::size_t K = p.clusters();
  if (grad.rows() != 1 || grad.cols() != K * D || cache.assign.cols() != K) {
    throw ShapeError("netvlad_backward: gradient " + grad.shape_string() +
                     " does not match the cached forward pass");
  }
  // View the gradient as K x D blocks.
  Matrix grad_blocks(K, D, std::vector<double>(grad.values().begin(), grad.values().end()));
  const Matrix& alpha = cache.assign;

  NetVladGrads g;
  g.frames = matmul(alpha, grad_blocks);  // direct term sum_k alpha_ik G_k
  g.centers = Matrix(K, D);
  Matrix mass = column_sums(alpha);
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t d = 0; d < D; ++d) g.centers(k, d) = -mass(0, k) * grad_blocks(k, d);

  // dalpha_ik = <G_k, h_i - c_k>
  Matrix grad_alpha = matmul_nt(cache.frames, grad_blocks);
  Matrix center_dot = matmul_nt(grad_blocks, p.centers);  // diagonal holds <G_k, c_k>
  Matrix grad_logits(N, K);
  for (std::size_t i = 0; i < N; ++i) {
    double inner = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      grad_alpha(i, k) -= center_dot(k, k);
      inner += alpha(i, k) * grad_alpha(i, k);
    }
    for (std::size_t k = 0; k < K; ++k) grad_logits(i, k) = alpha(i, k) * (grad_alpha(i, k) - inner);
  }
  g.W_assign = matmul_tn(cache.frames, grad_logits);
  g.b_assign = column_sums(grad_logits);
  axpy(1.0, matmul_nt(grad_logits, p.W_assign), g.frames);
  return g;
}

// ---------------------------------------------------------------- sampling

std::vector<std::size_t> sample_frame_indices(std::size_t frame_count, std::size_t target,
                                              Rng& rng) {
  if (frame_count == 0) throw ShapeError("sample_frames: video has no frames");
  if (target == 0) throw ConfigError("sample_frames: target must be positive");
  std::vector<std::size_t> idx;
  idx.reserve(target);
  if (frame_count >= target) {
    // Selection sampling: each subset equally likely, emitted in order.
    std::size_t needed = target;
    for (std::size_t i = 0; i < frame_count && needed > 0; ++i) {
      const std::size_t remaining = frame_count - i;
      if (rng.uniform() * static_cast<double>(remaining) < static_cast<double>(needed)) {
        idx.push_back(i);
        --needed;
      }
    }
  } else {
    for (std::size_t i = 0; i < target; ++i)
      idx.push_back(rng.below(static_cast<std::uint32_t>(frame_count)));
    std::sort(idx.begin(), idx.end());
  }
  return idx;
}

Matrix sample_frames(const Matrix& frames, std::size_t target, Rng& rng) {
  const auto idx = sample_frame_indices(frames.rows(), target, rng);
  Matrix out(idx.size(), frames.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    auto src = frames.row(idx[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

}  // namespace mmfusion
