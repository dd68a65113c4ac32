#include "mmfusion/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "mmfusion/aggregation.hpp"
#include "mmfusion/error.hpp"
#include "mmfusion/metrics.hpp"

namespace mmfusion {

LossResult bce_loss(const Matrix& predictions, const Matrix& labels) {
  require_same_shape(predictions, labels, "bce_loss");
  if (predictions.rows() == 0) throw ShapeError("bce_loss: empty batch");
  const double inv_batch = 1.0 / static_cast<double>(predictions.rows());
  LossResult r;
  r.grad = Matrix(predictions.rows(), predictions.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double y = labels.values()[i];
    if (y != 0.0 && y != 1.0) throw ShapeError("bce_loss: labels must be 0 or 1");
    const double d = std::clamp(predictions.values()[i], kPredictionClamp, 1.0 - kPredictionClamp);
    total -= y * std::log(d) + (1.0 - y) * std::log(1.0 - d);
    r.grad.values()[i] = inv_batch * (d - y) / (d * (1.0 - d));
  }
  r.loss = total * inv_batch;
  return r;
}

AdamState make_adam_state(const std::vector<NamedMatrix>& params, double learning_rate) {
  AdamState s;
  s.learning_rate = learning_rate;
  for (const auto& p : params) {
    s.first_moment.emplace_back(p.value->rows(), p.value->cols());
    s.second_moment.emplace_back(p.value->rows(), p.value->cols());
  }
  return s;
}

void adam_step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads,
               AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size() ||
      params.size() != state.second_moment.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters, " +
                     std::to_string(grads.size()) + " gradients, " +
                     std::to_string(state.first_moment.size()) + " moment slots");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(*params[i], grads[i], "adam_step");
    require_same_shape(*params[i], state.first_moment[i], "adam_step");
  }
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i]->values();
    auto g = grads[i].values();
    auto m = state.first_moment[i].values();
    auto v = state.second_moment[i].values();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      w[j] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

void adam_step(const std::vector<NamedMatrix>& params, const std::vector<Matrix>& grads,
               AdamState& state) {
  std::vector<Matrix*> ptrs;
  ptrs.reserve(params.size());
  for (const auto& p : params) ptrs.push_back(p.value);
  adam_step(ptrs, grads, state);
}

TrainConfig TrainConfig::from_config(const KeyValueConfig& cfg) {
  TrainConfig c;
  c.batch_size = cfg.get_uint("train.batch_size", c.batch_size);
  c.max_steps = cfg.get_uint("train.max_steps", c.max_steps);
  c.eval_every = cfg.get_uint("train.eval_every", c.eval_every);
  c.seed = cfg.get_uint("train.seed", c.seed);
  c.learning_rate = cfg.get_double("train.learning_rate", c.learning_rate);
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train.batch_size must be at least 1");
  if (eval_every == 0) throw ConfigError("train.eval_every must be at least 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
}

std::string format_log_row(const TrainLogRow& row) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%zu\t%.9g\t%.9g\t%.9g", row.step, row.train_loss, row.val_loss,
                row.val_gap);
  return buf;
}

namespace {

constexpr std::size_t kEvalChunk = 64;
constexpr std::uint64_t kEvalSampleSeed = 0x4556414CULL;

}  // namespace

Matrix predict(const VideoModel& model, const std::vector<VideoRecord>& records) {
  const ModelSpec& spec = model.spec();
  std::vector<Matrix> chunks;
  Rng unused(0);
  for (std::size_t start = 0; start < records.size(); start += kEvalChunk) {
    const std::size_t end = std::min(records.size(), start + kEvalChunk);
    std::vector<Matrix> visual;
    std::vector<Matrix> audio;
    for (std::size_t i = start; i < end; ++i) {
      validate_record(records[i], spec.visual_dim, spec.audio_dim, spec.classes);
      // Frame subsets are drawn jointly so the modalities stay aligned.
      if (records[i].frame_count() <= spec.frames) {
        visual.push_back(records[i].visual);
        audio.push_back(records[i].audio);
      } else {
        Rng rng(derive_seed(kEvalSampleSeed, i));
        const auto pick = sample_frame_indices(records[i].frame_count(), spec.frames, rng);
        Matrix v(pick.size(), spec.visual_dim);
        Matrix a(pick.size(), spec.audio_dim);
        for (std::size_t r = 0; r < pick.size(); ++r) {
          auto sv = records[i].visual.row(pick[r]);
          auto sa = records[i].audio.row(pick[r]);
          std::copy(sv.begin(), sv.end(), v.row(r).begin());
          std::copy(sa.begin(), sa.end(), a.row(r).begin());
        }
        visual.push_back(std::move(v));
        audio.push_back(std::move(a));
      }
    }
    chunks.push_back(model.forward(visual, audio, false, unused));
  }
  return vstack(chunks);
}

EvalResult evaluate(const VideoModel& model, const std::vector<VideoRecord>& records,
                    std::size_t top_k) {
  if (records.empty()) throw ConfigError("evaluate: empty dataset");
  const Matrix d = predict(model, records);
  std::vector<const VideoRecord*> recs;
  std::vector<std::vector<std::uint32_t>> labels;
  for (const auto& r : records) {
    recs.push_back(&r);
    labels.push_back(r.labels);
  }
  EvalResult e;
  e.loss = bce_loss(d, label_matrix(recs, model.spec().classes)).loss;
  e.gap = gap_at_k(d, labels, top_k);
  return e;
}

TrainResult train_model(VideoModel model, const TrainConfig& config,
                        const std::vector<VideoRecord>& train_set,
                        const std::vector<VideoRecord>& val, const LogCallback& on_log) {
  config.validate();
  if (train_set.empty()) throw ConfigError("train: training set is empty");
  const ModelSpec& spec = model.spec();
  for (const auto& r : train_set) validate_record(r, spec.visual_dim, spec.audio_dim, spec.classes);

  TrainResult result;
  AdamState adam = make_adam_state(model.parameters(), config.learning_rate);
  BatchStream stream(train_set, spec.classes, config.batch_size, spec.frames, config.seed);
  Rng dropout_rng(derive_seed(config.seed, 0x44524F50ULL));
  ModelCache cache;
  double window_loss = 0.0;
  std::size_t window_steps = 0;

  for (std::size_t step = 1; step <= config.max_steps; ++step) {
    Batch batch = stream.next();
    const Matrix d = model.forward(batch.visual, batch.audio, true, dropout_rng, &cache);
    LossResult loss = bce_loss(d, batch.labels);
    const double objective = loss.loss + model.l2_penalty();
    if (!std::isfinite(objective)) {
      throw NumericError("non-finite training loss at step " + std::to_string(step));
    }
    const auto grads = model.backward(loss.grad, cache, true);
    adam_step(model.parameters(), grads, adam);
    model.update_running_stats(cache);

    result.step_losses.push_back(objective);
    window_loss += objective;
    ++window_steps;
    if (step % config.eval_every == 0) {
      TrainLogRow row;
      row.step = step;
      row.train_loss = window_loss / static_cast<double>(window_steps);
      if (!val.empty()) {
        const EvalResult e = evaluate(model, val);
        row.val_loss = e.loss;
        row.val_gap = e.gap;
      }
      result.log.push_back(row);
      if (on_log) on_log(row);
      window_loss = 0.0;
      window_steps = 0;
    }
  }
  result.model = std::move(model);
  return result;
}

TrainResult train(const TrainConfig& config, const ModelSpec& spec,
                  const std::vector<VideoRecord>& train_set, const std::vector<VideoRecord>& val,
                  const LogCallback& on_log) {
  return train_model(VideoModel(spec, config.seed), config, train_set, val, on_log);
}

}  // namespace mmfusion
