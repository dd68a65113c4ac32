#include "mmfusion/model.hpp"

#include <cmath>
#include <cstdio>

#include "mmfusion/error.hpp"

namespace mmfusion {

std::string to_string(FusionKind kind) {
  switch (kind) {
    case FusionKind::kMfb: return "mfb";
    case FusionKind::kConcat: return "concat";
    case FusionKind::kFcConcat: return "fc_concat";
    case FusionKind::kVideoOnly: return "video_only";
    case FusionKind::kAudioOnly: return "audio_only";
  }
  return "?";
}

std::string to_string(AggregatorKind kind) {
  switch (kind) {
    case AggregatorKind::kAvg: return "avg";
    case AggregatorKind::kDbof: return "dbof";
    case AggregatorKind::kNetVlad: return "netvlad";
  }
  return "?";
}

FusionKind parse_fusion_kind(const std::string& s) {
  for (auto k : {FusionKind::kMfb, FusionKind::kConcat, FusionKind::kFcConcat,
                 FusionKind::kVideoOnly, FusionKind::kAudioOnly}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("fusion.kind must be one of mfb, concat, fc_concat, video_only, audio_only; got '" +
                    s + "'");
}

AggregatorKind parse_aggregator_kind(const std::string& s) {
  for (auto k : {AggregatorKind::kAvg, AggregatorKind::kDbof, AggregatorKind::kNetVlad}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("agg.kind must be one of avg, dbof, netvlad; got '" + s + "'");
}

std::size_t ModelSpec::dbof_audio_dim() const {
  if (visual_dim == 0) return dbof_dim;
  const auto scaled = static_cast<std::size_t>(
      std::llround(static_cast<double>(dbof_dim) * static_cast<double>(audio_dim) /
                   static_cast<double>(visual_dim)));
  return std::max(scaled, audio_dim + 1);
}

void ModelSpec::validate() const {
  if (visual_dim == 0 || audio_dim == 0 || classes == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (k == 0 || o == 0) throw ConfigError("fusion.k and fusion.o must be at least 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("fusion.dropout must lie in [0, 1)");
  if (clusters == 0) throw ConfigError("agg.clusters must be at least 1");
  if (frames == 0) throw ConfigError("agg.frames must be at least 1");
  if (mixtures == 0) throw ConfigError("moe.mixtures must be at least 1");
  if (!(l2 >= 0.0)) throw ConfigError("moe.l2 must be nonnegative");
  if (aggregator == AggregatorKind::kDbof && dbof_dim <= visual_dim) {
    throw ConfigError("agg.dbof_dim must exceed the visual feature dimension");
  }
}

ModelSpec ModelSpec::from_config(const KeyValueConfig& cfg, std::size_t visual_dim,
                                 std::size_t audio_dim, std::size_t classes) {
  ModelSpec s;
  s.visual_dim = visual_dim;
  s.audio_dim = audio_dim;
  s.classes = classes;
  s.fusion = parse_fusion_kind(cfg.get_string("fusion.kind", "mfb"));
  s.aggregator = parse_aggregator_kind(cfg.get_string("agg.kind", "avg"));
  s.k = cfg.get_uint("fusion.k", s.k);
  s.o = cfg.get_uint("fusion.o", s.o);
  s.dropout = cfg.get_double("fusion.dropout", s.dropout);
  s.clusters = cfg.get_uint("agg.clusters", s.clusters);
  s.dbof_dim = cfg.get_uint("agg.dbof_dim", s.dbof_dim);
  s.frames = cfg.get_uint("agg.frames", s.frames);
  s.mixtures = cfg.get_uint("moe.mixtures", s.mixtures);
  s.l2 = cfg.get_double("moe.l2", s.l2);
  s.validate();
  return s;
}

KeyValueConfig ModelSpec::to_config() const {
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  KeyValueConfig c;
  c.set("fusion.kind", to_string(fusion));
  c.set("agg.kind", to_string(aggregator));
  c.set("model.visual_dim", std::to_string(visual_dim));
  c.set("model.audio_dim", std::to_string(audio_dim));
  c.set("model.classes", std::to_string(classes));
  c.set("fusion.k", std::to_string(k));
  c.set("fusion.o", std::to_string(o));
  c.set("fusion.dropout", num(dropout));
  c.set("agg.clusters", std::to_string(clusters));
  c.set("agg.dbof_dim", std::to_string(dbof_dim));
  c.set("agg.frames", std::to_string(frames));
  c.set("moe.mixtures", std::to_string(mixtures));
  c.set("moe.l2", num(l2));
  return c;
}

ModelSpec ModelSpec::from_serialized(const KeyValueConfig& cfg) {
  return from_config(cfg, cfg.get_uint("model.visual_dim", 0), cfg.get_uint("model.audio_dim", 0),
                     cfg.get_uint("model.classes", 0));
}

namespace {

std::size_t aggregator_param_count(AggregatorKind kind) {
  switch (kind) {
    case AggregatorKind::kAvg: return 0;
    case AggregatorKind::kDbof: return 4;
    case AggregatorKind::kNetVlad: return 3;
  }
  return 0;
}

AggregatorParams make_aggregator(AggregatorKind kind, std::size_t dim, std::size_t dbof_dim,
                                 std::size_t clusters, Rng& rng) {
  AggregatorParams p;
  p.kind = kind;
  if (kind == AggregatorKind::kDbof) p.dbof = DbofParams::init(dim, dbof_dim, rng);
  if (kind == AggregatorKind::kNetVlad) p.netvlad = NetVladParams::init(dim, clusters, rng);
  return p;
}

void append_aggregator(std::vector<NamedMatrix>& out, const std::string& prefix,
                       AggregatorParams& p) {
  if (p.kind == AggregatorKind::kDbof) {
    out.push_back({prefix + ".dbof.W_proj", &p.dbof.W_proj});
    out.push_back({prefix + ".dbof.b_proj", &p.dbof.b_proj});
    out.push_back({prefix + ".dbof.bn_gamma", &p.dbof.bn_gamma});
    out.push_back({prefix + ".dbof.bn_beta", &p.dbof.bn_beta});
  } else if (p.kind == AggregatorKind::kNetVlad) {
    out.push_back({prefix + ".netvlad.W_assign", &p.netvlad.W_assign});
    out.push_back({prefix + ".netvlad.b_assign", &p.netvlad.b_assign});
    out.push_back({prefix + ".netvlad.centers", &p.netvlad.centers});
  }
}

}  // namespace

VideoModel::VideoModel(const ModelSpec& spec, std::uint64_t seed) : spec_(spec) {
  spec_.validate();
  Rng rng(derive_seed(seed, 0x4D4F44454CULL));
  if (spec_.uses_visual()) {
    visual_agg_ = make_aggregator(spec_.aggregator, spec_.visual_dim, spec_.dbof_dim,
                                  spec_.clusters, rng);
  }
  if (spec_.uses_audio()) {
    audio_agg_ = make_aggregator(spec_.aggregator, spec_.audio_dim, spec_.dbof_audio_dim(),
                                 spec_.clusters, rng);
  }
  if (spec_.fusion == FusionKind::kMfb) {
    mfb_ = MfbParams::init(aggregated_dim(true), aggregated_dim(false), spec_.k, spec_.o, rng);
  } else if (spec_.fusion == FusionKind::kFcConcat) {
    fc_ = FcConcatParams::init(aggregated_dim(true), aggregated_dim(false), spec_.k, spec_.o, rng);
  }
  moe_ = MoeParams::init(fused_dim(), spec_.classes, spec_.mixtures, spec_.l2, rng);
}

std::size_t VideoModel::aggregated_dim(bool visual) const {
  const std::size_t d = visual ? spec_.visual_dim : spec_.audio_dim;
  switch (spec_.aggregator) {
    case AggregatorKind::kAvg: return d;
    case AggregatorKind::kDbof: return visual ? spec_.dbof_dim : spec_.dbof_audio_dim();
    case AggregatorKind::kNetVlad: return spec_.clusters * d;
  }
  return d;
}

std::size_t VideoModel::fused_dim() const {
  switch (spec_.fusion) {
    case FusionKind::kMfb: return spec_.o;
    case FusionKind::kConcat: return aggregated_dim(true) + aggregated_dim(false);
    case FusionKind::kFcConcat: return 2 * spec_.k * spec_.o;
    case FusionKind::kVideoOnly: return aggregated_dim(true);
    case FusionKind::kAudioOnly: return aggregated_dim(false);
  }
  return 0;
}

std::vector<NamedMatrix> VideoModel::parameters() {
  std::vector<NamedMatrix> out;
  if (spec_.uses_visual()) append_aggregator(out, "visual", visual_agg_);
  if (spec_.uses_audio()) append_aggregator(out, "audio", audio_agg_);
  if (spec_.fusion == FusionKind::kMfb) {
    out.push_back({"fusion.mfb.U", &mfb_.U});
    out.push_back({"fusion.mfb.V", &mfb_.V});
  } else if (spec_.fusion == FusionKind::kFcConcat) {
    out.push_back({"fusion.fc.Wv", &fc_.Wv});
    out.push_back({"fusion.fc.Wa", &fc_.Wa});
  }
  out.push_back({"moe.W_gate", &moe_.W_gate});
  out.push_back({"moe.W_expert", &moe_.W_expert});
  return out;
}

std::vector<NamedMatrix> VideoModel::buffers() {
  std::vector<NamedMatrix> out;
  if (spec_.aggregator != AggregatorKind::kDbof) return out;
  if (spec_.uses_visual()) {
    out.push_back({"visual.dbof.bn_running_mean", &visual_agg_.dbof.bn_running_mean});
    out.push_back({"visual.dbof.bn_running_var", &visual_agg_.dbof.bn_running_var});
  }
  if (spec_.uses_audio()) {
    out.push_back({"audio.dbof.bn_running_mean", &audio_agg_.dbof.bn_running_mean});
    out.push_back({"audio.dbof.bn_running_var", &audio_agg_.dbof.bn_running_var});
  }
  return out;
}

Matrix VideoModel::aggregate(const AggregatorParams& p, const Matrix& frames, bool train_mode,
                             AggregatorCache* cache) const {
  if (cache) cache->frame_count = frames.rows();
  switch (p.kind) {
    case AggregatorKind::kAvg: return avgpool(frames);
    case AggregatorKind::kDbof:
      return dbof_forward(frames, p.dbof, train_mode, cache ? &cache->dbof : nullptr);
    case AggregatorKind::kNetVlad:
      return netvlad_forward(frames, p.netvlad, cache ? &cache->netvlad : nullptr);
  }
  return {};
}

void VideoModel::aggregate_backward(const AggregatorParams& p, const Matrix& grad,
                                    const AggregatorCache& cache, std::vector<Matrix>& grads,
                                    std::size_t offset) const {
  switch (p.kind) {
    case AggregatorKind::kAvg: return;  // no parameters; frame gradients unused
    case AggregatorKind::kDbof: {
      auto g = dbof_backward(grad, cache.dbof, p.dbof);
      axpy(1.0, g.W_proj, grads[offset]);
      axpy(1.0, g.b_proj, grads[offset + 1]);
      axpy(1.0, g.bn_gamma, grads[offset + 2]);
      axpy(1.0, g.bn_beta, grads[offset + 3]);
      return;
    }
    case AggregatorKind::kNetVlad: {
      auto g = netvlad_backward(grad, cache.netvlad, p.netvlad);
      axpy(1.0, g.W_assign, grads[offset]);
      axpy(1.0, g.b_assign, grads[offset + 1]);
      axpy(1.0, g.centers, grads[offset + 2]);
      return;
    }
  }
}

Matrix VideoModel::forward(const std::vector<Matrix>& visual, const std::vector<Matrix>& audio,
                           bool train_mode, Rng& rng, ModelCache* cache) const {
  if (visual.size() != audio.size() || visual.empty()) {
    throw ShapeError("model forward: need matching, nonempty visual and audio batches");
  }
  const std::size_t B = visual.size();
  if (cache) {
    *cache = ModelCache{};
    cache->train_mode = train_mode;
  }
  Matrix L;
  Matrix A;
  if (spec_.uses_visual()) {
    std::vector<Matrix> rows;
    if (cache) cache->visual.resize(B);
    for (std::size_t b = 0; b < B; ++b)
      rows.push_back(aggregate(visual_agg_, visual[b], train_mode, cache ? &cache->visual[b] : nullptr));
    L = vstack(rows);
  }
  if (spec_.uses_audio()) {
    std::vector<Matrix> rows;
    if (cache) cache->audio.resize(B);
    for (std::size_t b = 0; b < B; ++b)
      rows.push_back(aggregate(audio_agg_, audio[b], train_mode, cache ? &cache->audio[b] : nullptr));
    A = vstack(rows);
  }

  Matrix fused;
  switch (spec_.fusion) {
    case FusionKind::kMfb:
      fused = mfb_forward(L, A, mfb_, spec_.dropout, rng, train_mode, cache ? &cache->mfb : nullptr);
      break;
    case FusionKind::kConcat: fused = concat_forward(L, A); break;
    case FusionKind::kFcConcat:
      fused = fc_concat_forward(L, A, fc_, cache ? &cache->fc : nullptr);
      break;
    case FusionKind::kVideoOnly: fused = L; break;
    case FusionKind::kAudioOnly: fused = A; break;
  }
  Matrix d = moe_forward(fused, moe_, cache ? &cache->moe : nullptr);
  if (cache) {
    cache->visual_features = std::move(L);
    cache->audio_features = std::move(A);
  }
  return d;
}

std::vector<Matrix> VideoModel::backward(const Matrix& grad_d, const ModelCache& cache,
                                         bool include_penalty) const {
  const std::size_t visual_count = spec_.uses_visual() ? aggregator_param_count(spec_.aggregator) : 0;
  const std::size_t audio_count = spec_.uses_audio() ? aggregator_param_count(spec_.aggregator) : 0;
  const std::size_t fusion_offset = visual_count + audio_count;
  const bool has_fusion_params =
      spec_.fusion == FusionKind::kMfb || spec_.fusion == FusionKind::kFcConcat;
  const std::size_t moe_offset = fusion_offset + (has_fusion_params ? 2 : 0);

  std::vector<Matrix> grads(moe_offset + 2);
  auto zero_like = [&](std::size_t idx, const Matrix& m) { grads[idx] = Matrix(m.rows(), m.cols()); };
  auto init_agg = [&](const AggregatorParams& p, std::size_t off) {
    if (p.kind == AggregatorKind::kDbof) {
      zero_like(off, p.dbof.W_proj);
      zero_like(off + 1, p.dbof.b_proj);
      zero_like(off + 2, p.dbof.bn_gamma);
      zero_like(off + 3, p.dbof.bn_beta);
    } else if (p.kind == AggregatorKind::kNetVlad) {
      zero_like(off, p.netvlad.W_assign);
      zero_like(off + 1, p.netvlad.b_assign);
      zero_like(off + 2, p.netvlad.centers);
    }
  };
  if (spec_.uses_visual()) init_agg(visual_agg_, 0);
  if (spec_.uses_audio()) init_agg(audio_agg_, visual_count);

  MoeGrads mg = moe_backward(grad_d, cache.moe, moe_);
  if (include_penalty) add_moe_l2_gradient(moe_, mg);
  grads[moe_offset] = std::move(mg.W_gate);
  grads[moe_offset + 1] = std::move(mg.W_expert);

  Matrix grad_L;
  Matrix grad_A;
  switch (spec_.fusion) {
    case FusionKind::kMfb: {
      auto g = mfb_backward(mg.f, cache.mfb, mfb_);
      grads[fusion_offset] = std::move(g.U);
      grads[fusion_offset + 1] = std::move(g.V);
      grad_L = std::move(g.l);
      grad_A = std::move(g.a);
      break;
    }
    case FusionKind::kConcat: {
      auto [gl, ga] = concat_backward(mg.f, aggregated_dim(true));
      grad_L = std::move(gl);
      grad_A = std::move(ga);
      break;
    }
    case FusionKind::kFcConcat: {
      auto g = fc_concat_backward(mg.f, cache.fc, fc_);
      grads[fusion_offset] = std::move(g.Wv);
      grads[fusion_offset + 1] = std::move(g.Wa);
      grad_L = std::move(g.l);
      grad_A = std::move(g.a);
      break;
    }
    case FusionKind::kVideoOnly: grad_L = std::move(mg.f); break;
    case FusionKind::kAudioOnly: grad_A = std::move(mg.f); break;
  }

  if (spec_.uses_visual()) {
    for (std::size_t b = 0; b < cache.visual.size(); ++b)
      aggregate_backward(visual_agg_, row_slice(grad_L, b, 1), cache.visual[b], grads, 0);
  }
  if (spec_.uses_audio()) {
    for (std::size_t b = 0; b < cache.audio.size(); ++b)
      aggregate_backward(audio_agg_, row_slice(grad_A, b, 1), cache.audio[b], grads, visual_count);
  }
  return grads;
}

void VideoModel::update_running_stats(const ModelCache& cache) {
  if (spec_.aggregator != AggregatorKind::kDbof || !cache.train_mode) return;
  auto update = [](DbofParams& p, const std::vector<AggregatorCache>& caches) {
    if (caches.empty()) return;
    Matrix mean(1, p.output_dim());
    Matrix var(1, p.output_dim());
    for (const auto& c : caches) {
      axpy(1.0, c.dbof.batch_mean, mean);
      axpy(1.0, c.dbof.batch_var, var);
    }
    const double inv = 1.0 / static_cast<double>(caches.size());
    dbof_update_running(p, scale(mean, inv), scale(var, inv));
  };
  if (spec_.uses_visual()) update(visual_agg_.dbof, cache.visual);
  if (spec_.uses_audio()) update(audio_agg_.dbof, cache.audio);
}

}  // namespace mmfusion
