#include "mmfusion/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "mmfusion/aggregation.hpp"
#include "mmfusion/classifier.hpp"
#include "mmfusion/error.hpp"
#include "mmfusion/fusion.hpp"
#include "mmfusion/model.hpp"
#include "mmfusion/rng.hpp"
#include "mmfusion/training.hpp"

namespace mmfusion {

Matrix numeric_gradient(const std::function<double()>& objective, Matrix& x, double step) {
  Matrix g(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double& v = x.values()[i];
    const double saved = v;
    v = saved + step;
    const double up = objective();
    v = saved - step;
    const double down = objective();
    v = saved;
    g.values()[i] = (up - down) / (2.0 * step);
  }
  return g;
}

double relative_error(const Matrix& analytic, const Matrix& numeric) {
  require_same_shape(analytic, numeric, "relative_error");
  const double diff = std::sqrt(squared_norm(subtract(analytic, numeric)));
  const double denom = std::max({std::sqrt(squared_norm(analytic)),
                                 std::sqrt(squared_norm(numeric)), 1e-6});
  return diff / denom;
}

namespace {

// One instance: the matrices being differentiated, a scalar objective over
// them, and the analytic gradients in the same order.
struct Probe {
  std::vector<Matrix*> inputs;
  std::function<double()> objective;
  std::function<std::vector<Matrix>()> analytic;
};

double probe_error(Probe& probe, double step, bool perturb) {
  std::vector<Matrix> grads = probe.analytic();
  if (grads.size() != probe.inputs.size()) throw Error("gradcheck: gradient count mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (perturb) grads[i] = scale(grads[i], 1.01);
    const Matrix numeric = numeric_gradient(probe.objective, *probe.inputs[i], step);
    worst = std::max(worst, relative_error(grads[i], numeric));
  }
  return worst;
}

// Scalar read-out sum(R .* y) whose gradient with respect to y is R.
double project(const Matrix& y, const Matrix& r) { return sum(hadamard(y, r)); }

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + rng.below(static_cast<std::uint32_t>(hi - lo + 1));
}

struct MfbState {
  Matrix l, a, readout;
  MfbParams p;
  double rate = 0.3;
  std::uint64_t mask_seed = 0;
};

double check_mfb(std::uint64_t seed, const GradcheckOptions& o, bool perturb) {
  Rng rng(seed);
  auto s = std::make_shared<MfbState>();
  const std::size_t B = 3, C = pick(rng, 2, 8), M = pick(rng, 2, 8);
  const std::size_t k = pick(rng, 1, 3), out = pick(rng, 1, 3);
  s->l = normal_matrix(B, C, 1.0, rng);
  s->a = normal_matrix(B, M, 1.0, rng);
  s->p = MfbParams::init(C, M, k, out, rng);
  s->readout = normal_matrix(B, out, 1.0, rng);
  s->mask_seed = seed ^ 0xABCDEFULL;
  Probe probe;
  probe.inputs = {&s->l, &s->a, &s->p.U, &s->p.V};
  probe.objective = [s] {
    Rng mask(s->mask_seed);
    return project(mfb_forward(s->l, s->a, s->p, s->rate, mask, true), s->readout);
  };
  probe.analytic = [s] {
    Rng mask(s->mask_seed);
    MfbCache cache;
    mfb_forward(s->l, s->a, s->p, s->rate, mask, true, &cache);
    auto g = mfb_backward(s->readout, cache, s->p);
    return std::vector<Matrix>{g.l, g.a, g.U, g.V};
  };
  return probe_error(probe, o.step, perturb);
}

double check_fc_concat(std::uint64_t seed, const GradcheckOptions& o, bool perturb) {
  Rng rng(seed);
  struct S {
    Matrix l, a, readout;
    FcConcatParams p;
  };
  auto s = std::make_shared<S>();
  const std::size_t B = 3, C = pick(rng, 2, 8), M = pick(rng, 2, 8);
  const std::size_t k = pick(rng, 1, 3), out = pick(rng, 1, 3);
  s->l = normal_matrix(B, C, 1.0, rng);
  s->a = normal_matrix(B, M, 1.0, rng);
  s->p = FcConcatParams::init(C, M, k, out, rng);
  s->readout = normal_matrix(B, 2 * k * out, 1.0, rng);
  Probe probe;
  probe.inputs = {&s->l, &s->a, &s->p.Wv, &s->p.Wa};
  probe.objective = [s] { return project(fc_concat_forward(s->l, s->a, s->p), s->readout); };
  probe.analytic = [s] {
    FcConcatCache cache;
    fc_concat_forward(s->l, s->a, s->p, &cache);
    auto g = fc_concat_backward(s->readout, cache, s->p);
    return std::vector<Matrix>{g.l, g.a, g.Wv, g.Wa};
  };
  return probe_error(probe, o.step, perturb);
}

double check_avgpool(std::uint64_t seed, const GradcheckOptions& o, bool perturb) {
  Rng rng(seed);
  struct S {
    Matrix frames, readout;
  };
  auto s = std::make_shared<S>();
  const std::size_t N = pick(rng, 1, 6), D = pick(rng, 1, 8);
  s->frames = normal_matrix(N, D, 1.0, rng);
  s->readout = normal_matrix(1, D, 1.0, rng);
  Probe probe;
  probe.inputs = {&s->frames};
  probe.objective = [s] { return project(avgpool(s->frames), s->readout); };
  probe.analytic = [s] { return std::vector<Matrix>{avgpool_backward(s->readout, s->frames.rows())}; };
  return probe_error(probe, o.step, perturb);
}

double check_dbof(std::uint64_t seed, const GradcheckOptions& o, bool perturb, bool train_mode) {
  Rng rng(seed);
  struct S {
    Matrix frames, readout;
    DbofParams p;
    bool train = false;
  };
  auto s = std::make_shared<S>();
  const std::size_t N = pick(rng, 2, 6), D = pick(rng, 2, 6), P = D + pick(rng, 1, 4);
  s->train = train_mode;
  s->frames = normal_matrix(N, D, 1.0, rng);
  s->p = DbofParams::init(D, P, rng);
  s->p.b_proj = normal_matrix(1, P, 0.5, rng);
  s->p.bn_gamma = normal_matrix(1, P, 1.0, rng);
  s->p.bn_beta = normal_matrix(1, P, 1.0, rng);
  s->p.bn_running_mean = normal_matrix(1, P, 0.5, rng);
  for (std::size_t j = 0; j < P; ++j) s->p.bn_running_var(0, j) = rng.uniform(0.5, 2.0);
  s->readout = normal_matrix(1, P, 1.0, rng);
  Probe probe;
  probe.inputs = {&s->frames, &s->p.W_proj, &s->p.b_proj, &s->p.bn_gamma, &s->p.bn_beta};
  probe.objective = [s] { return project(dbof_forward(s->frames, s->p, s->train), s->readout); };
  probe.analytic = [s] {
    DbofCache cache;
    dbof_forward(s->frames, s->p, s->train, &cache);
    auto g = dbof_backward(s->readout, cache, s->p);
    return std::vector<Matrix>{g.frames, g.W_proj, g.b_proj, g.bn_gamma, g.bn_beta};
  };
  return probe_error(probe, o.step, perturb);
}

double check_netvlad(std::uint64_t seed, const GradcheckOptions& o, bool perturb) {
  Rng rng(seed);
  struct S {
    Matrix frames, readout;
    NetVladParams p;
  };
  auto s = std::make_shared<S>();
  const std::size_t N = pick(rng, 1, 6), D = pick(rng, 1, 8), K = pick(rng, 1, 3);
  s->frames = normal_matrix(N, D, 1.0, rng);
  s->p = NetVladParams::init(D, K, rng);
  s->p.b_assign = normal_matrix(1, K, 0.5, rng);
  s->readout = normal_matrix(1, K * D, 1.0, rng);
  Probe probe;
  probe.inputs = {&s->frames, &s->p.W_assign, &s->p.b_assign, &s->p.centers};
  probe.objective = [s] { return project(netvlad_forward(s->frames, s->p), s->readout); };
  probe.analytic = [s] {
    NetVladCache cache;
    netvlad_forward(s->frames, s->p, &cache);
    auto g = netvlad_backward(s->readout, cache, s->p);
    return std::vector<Matrix>{g.frames, g.W_assign, g.b_assign, g.centers};
  };
  return probe_error(probe, o.step, perturb);
}

double check_moe(std::uint64_t seed, const GradcheckOptions& o, bool perturb) {
  Rng rng(seed);
  struct S {
    Matrix f, readout;
    MoeParams p;
  };
  auto s = std::make_shared<S>();
  const std::size_t B = 3, F = pick(rng, 2, 8), c = pick(rng, 1, 4);
  s->f = normal_matrix(B, F, 1.0, rng);
  s->p = MoeParams::init(F, c, 2, 1e-2, rng);
  s->readout = normal_matrix(B, c, 1.0, rng);
  Probe probe;
  probe.inputs = {&s->f, &s->p.W_gate, &s->p.W_expert};
  probe.objective = [s] { return project(moe_forward(s->f, s->p), s->readout) + moe_l2_penalty(s->p); };
  probe.analytic = [s] {
    MoeCache cache;
    moe_forward(s->f, s->p, &cache);
    auto g = moe_backward(s->readout, cache, s->p);
    add_moe_l2_gradient(s->p, g);
    return std::vector<Matrix>{g.f, g.W_gate, g.W_expert};
  };
  return probe_error(probe, o.step, perturb);
}

double check_bce(std::uint64_t seed, const GradcheckOptions& o, bool perturb) {
  Rng rng(seed);
  struct S {
    Matrix d, y;
  };
  auto s = std::make_shared<S>();
  const std::size_t B = pick(rng, 1, 4), c = pick(rng, 1, 4);
  s->d = Matrix(B, c);
  s->y = Matrix(B, c);
  for (double& v : s->d.values()) v = rng.uniform(0.05, 0.95);
  for (double& v : s->y.values()) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
  Probe probe;
  probe.inputs = {&s->d};
  probe.objective = [s] { return bce_loss(s->d, s->y).loss; };
  probe.analytic = [s] { return std::vector<Matrix>{bce_loss(s->d, s->y).grad}; };
  return probe_error(probe, o.step, perturb);
}

// Aggregators, MFB, MoE and the loss composed, in train mode with a fixed
// dropout mask.
double check_end_to_end(std::uint64_t seed, const GradcheckOptions& o, bool perturb,
                        AggregatorKind agg) {
  Rng rng(seed);
  ModelSpec spec;
  spec.fusion = FusionKind::kMfb;
  spec.aggregator = agg;
  spec.visual_dim = 4;
  spec.audio_dim = 4;
  spec.classes = 3;
  spec.k = 2;
  spec.o = 8;
  spec.dropout = 0.1;
  spec.clusters = 2;
  spec.dbof_dim = 6;
  spec.l2 = 1e-3;
  struct S {
    VideoModel model;
    std::vector<Matrix> visual, audio;
    Matrix labels;
    std::uint64_t mask_seed = 0;
  };
  auto s = std::make_shared<S>();
  s->model = VideoModel(spec, seed);
  for (std::size_t b = 0; b < 2; ++b) {
    const std::size_t n = pick(rng, 2, 4);
    s->visual.push_back(normal_matrix(n, 4, 1.0, rng));
    s->audio.push_back(normal_matrix(n, 4, 1.0, rng));
  }
  s->labels = Matrix{{1, 0, 1}, {0, 1, 0}};
  s->mask_seed = seed ^ 0x5EEDULL;
  Probe probe;
  for (auto& p : s->model.parameters()) probe.inputs.push_back(p.value);
  probe.objective = [s] {
    Rng mask(s->mask_seed);
    const Matrix d = s->model.forward(s->visual, s->audio, true, mask);
    return bce_loss(d, s->labels).loss + s->model.l2_penalty();
  };
  probe.analytic = [s] {
    Rng mask(s->mask_seed);
    ModelCache cache;
    const Matrix d = s->model.forward(s->visual, s->audio, true, mask, &cache);
    return s->model.backward(bce_loss(d, s->labels).grad, cache, true);
  };
  return probe_error(probe, o.step, perturb);
}

double dispatch(const std::string& op, std::uint64_t seed, const GradcheckOptions& o, bool perturb) {
  if (op == "mfb") return check_mfb(seed, o, perturb);
  if (op == "fc_concat") return check_fc_concat(seed, o, perturb);
  if (op == "avgpool") return check_avgpool(seed, o, perturb);
  if (op == "dbof") return check_dbof(seed, o, perturb, false);
  if (op == "dbof_train_bn") return check_dbof(seed, o, perturb, true);
  if (op == "netvlad") return check_netvlad(seed, o, perturb);
  if (op == "moe") return check_moe(seed, o, perturb);
  if (op == "bce_loss") return check_bce(seed, o, perturb);
  if (op == "model_avg") return check_end_to_end(seed, o, perturb, AggregatorKind::kAvg);
  if (op == "model_dbof") return check_end_to_end(seed, o, perturb, AggregatorKind::kDbof);
  if (op == "model_netvlad") return check_end_to_end(seed, o, perturb, AggregatorKind::kNetVlad);
  throw ConfigError("unknown gradcheck operator '" + op + "'");
}

}  // namespace

std::vector<std::string> gradcheck_operators() {
  return {"mfb",     "fc_concat", "avgpool",   "dbof",       "dbof_train_bn", "netvlad",
          "moe",     "bce_loss",  "model_avg", "model_dbof", "model_netvlad"};
}

GradcheckResult run_gradcheck(const std::string& op, const GradcheckOptions& options) {
  GradcheckResult r;
  r.op = op;
  for (std::size_t i = 0; i < options.seeds; ++i) {
    const std::uint64_t seed = derive_seed(options.seed, i);
    r.max_rel_error = std::max(r.max_rel_error, dispatch(op, seed, options, options.perturb == op));
    ++r.seeds;
  }
  r.passed = r.max_rel_error < options.tolerance;
  return r;
}

std::vector<GradcheckResult> run_gradcheck_suite(const GradcheckOptions& options) {
  if (!options.perturb.empty()) {
    const auto ops = gradcheck_operators();
    if (std::find(ops.begin(), ops.end(), options.perturb) == ops.end()) {
      throw ConfigError("unknown gradcheck operator '" + options.perturb + "'");
    }
  }
  std::vector<GradcheckResult> out;
  for (const auto& op : gradcheck_operators()) out.push_back(run_gradcheck(op, options));
  return out;
}

}  // namespace mmfusion
