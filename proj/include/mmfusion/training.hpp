#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mmfusion/config.hpp"
#include "mmfusion/data.hpp"
#include "mmfusion/matrix.hpp"
#include "mmfusion/model.hpp"

namespace mmfusion {

inline constexpr double kPredictionClamp = 1e-7;

struct LossResult {
  double loss = 0.0;  // mean over the batch of the per-video class sum
  Matrix grad;        // d loss / d predictions
};

// Multi-label binary cross-entropy on predictions clamped to
// [1e-7, 1 - 1e-7]. The gradient is evaluated at the clamped value.
LossResult bce_loss(const Matrix& predictions, const Matrix& labels);

struct AdamState {
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::uint64_t step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double learning_rate = 2e-4;
};

AdamState make_adam_state(const std::vector<NamedMatrix>& params, double learning_rate);
// One bias-corrected Adam update of every parameter.
void adam_step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads,
               AdamState& state);
void adam_step(const std::vector<NamedMatrix>& params, const std::vector<Matrix>& grads,
               AdamState& state);

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t max_steps = 5000;
  std::size_t eval_every = 250;
  std::uint64_t seed = 1;
  double learning_rate = 2e-4;

  static TrainConfig from_config(const KeyValueConfig& cfg);
  void validate() const;
};

struct TrainLogRow {
  std::size_t step = 0;
  double train_loss = 0.0;  // mean minibatch loss since the previous row
  double val_loss = 0.0;
  double val_gap = 0.0;
};

// step \t train_loss \t val_loss \t val_gap
std::string format_log_row(const TrainLogRow& row);

struct EvalResult {
  double gap = 0.0;
  double loss = 0.0;
};

struct TrainResult {
  VideoModel model;
  std::vector<TrainLogRow> log;
  std::vector<double> step_losses;
};

using LogCallback = std::function<void(const TrainLogRow&)>;

// Minibatch training of a freshly initialized model. Validation runs every
// eval_every steps when val is nonempty.
TrainResult train(const TrainConfig& config, const ModelSpec& spec,
                  const std::vector<VideoRecord>& train_set, const std::vector<VideoRecord>& val,
                  const LogCallback& on_log = {});
// Continues training an existing model in place.
TrainResult train_model(VideoModel model, const TrainConfig& config,
                        const std::vector<VideoRecord>& train_set,
                        const std::vector<VideoRecord>& val, const LogCallback& on_log = {});

// Eval-mode predictions (no dropout, BN running statistics). Videos longer
// than the frame budget use a fixed, index-seeded subset of frames.
Matrix predict(const VideoModel& model, const std::vector<VideoRecord>& records);
EvalResult evaluate(const VideoModel& model, const std::vector<VideoRecord>& records,
                    std::size_t top_k = 20);

}  // namespace mmfusion
