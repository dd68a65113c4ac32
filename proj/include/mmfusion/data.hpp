#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mmfusion/matrix.hpp"
#include "mmfusion/rng.hpp"

namespace mmfusion {

struct VideoRecord {
  std::string id;
  Matrix visual;                      // N x C
  Matrix audio;                       // N x M
  std::vector<std::uint32_t> labels;  // strictly increasing, < class count

  std::size_t frame_count() const { return visual.rows(); }
  bool operator==(const VideoRecord&) const = default;
};

inline constexpr char kDatasetMagic[5] = {'M', 'M', 'F', 'V', '1'};
inline constexpr std::uint32_t kDatasetVersion = 1;

struct DatasetHeader {
  std::uint32_t version = kDatasetVersion;
  std::uint32_t video_count = 0;
  std::uint32_t visual_dim = 0;
  std::uint32_t audio_dim = 0;
  std::uint32_t classes = 0;
};

struct Dataset {
  DatasetHeader header;
  std::vector<VideoRecord> records;
};

void validate_record(const VideoRecord& r, std::size_t visual_dim, std::size_t audio_dim,
                     std::size_t classes);

// Layout (little-endian): "MMFV1", u32 version, u32 video_count, u32 C,
// u32 M, u32 classes, then per record: u32 id length + id bytes, u32 N,
// u32 label count + u32 labels, N*C f32 visual, N*M f32 audio.
void write_dataset(const std::filesystem::path& path, const Dataset& dataset);
std::vector<std::uint8_t> encode_dataset(const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& path);
Dataset decode_dataset(std::span<const std::uint8_t> bytes);
DatasetHeader read_dataset_header(const std::filesystem::path& path);

// Rounds every feature through 32-bit precision, as a disk round trip does.
VideoRecord quantize_f32(const VideoRecord& r);

// Planted cross-modal structure: class j is active iff
// sigmoid(z_v^T B_j z_a) > threshold, with B_j of rank `rank`.
struct SyntheticSpec {
  std::size_t video_count = 2500;
  std::size_t classes = 10;
  std::size_t visual_dim = 32;
  std::size_t audio_dim = 8;
  std::size_t rank = 2;
  double noise = 0.5;
  std::size_t min_frames = 5;
  std::size_t max_frames = 20;
  double threshold = 0.585;
  std::uint64_t seed = 7;

  void validate() const;
};

struct SyntheticLatents {
  Matrix visual;  // 1 x C
  Matrix audio;   // 1 x M
};

// Class maps B_j (C x M), scaled so z_v^T B_j z_a has unit variance.
std::vector<Matrix> synthetic_class_maps(const SyntheticSpec& spec);
SyntheticLatents synthetic_latents(const SyntheticSpec& spec, std::size_t video);
Dataset generate_synthetic(const SyntheticSpec& spec);
// Splits off the last `count` videos as a second dataset.
std::pair<Dataset, Dataset> split_tail(const Dataset& dataset, std::size_t count);

struct Batch {
  std::vector<std::size_t> indices;
  std::vector<Matrix> visual;  // per video, frames sampled to the target
  std::vector<Matrix> audio;
  Matrix labels;               // B x classes, binary
};

Matrix label_matrix(const std::vector<const VideoRecord*>& records, std::size_t classes);

// Seeded order for one epoch; a pure function of (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, std::size_t epoch);
// Splits one shuffled epoch into batches; the last one may be short.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t count, std::size_t batch_size,
                                                    std::uint64_t seed, std::size_t epoch);

// Endless stream of minibatches over shuffled epochs. Frame sampling to
// `frames` per video (0 disables it) draws from the epoch's generator, so
// the whole stream is a pure function of the seed.
class BatchStream {
 public:
  BatchStream(const std::vector<VideoRecord>& records, std::size_t classes,
              std::size_t batch_size, std::size_t frames, std::uint64_t seed);

  Batch next();
  std::size_t epoch() const { return epoch_; }

 private:
  void start_epoch();

  const std::vector<VideoRecord>* records_;
  std::size_t classes_;
  std::size_t batch_size_;
  std::size_t frames_;
  std::uint64_t seed_;
  std::size_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::vector<std::size_t>> batches_;
  Rng sampler_;
};

}  // namespace mmfusion
