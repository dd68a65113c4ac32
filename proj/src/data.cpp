#include "mmfusion/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include "mmfusion/aggregation.hpp"
#include "mmfusion/error.hpp"

namespace mmfusion {

namespace {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("dataset truncated while reading ") + what + " at byte " +
                        std::to_string(pos_));
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xFFFFFFFFull) throw FormatError(std::string(what) + " exceeds 32-bit range");
  return static_cast<std::uint32_t>(v);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

DatasetHeader decode_header(ByteReader& r) {
  const std::string magic = r.str(sizeof kDatasetMagic, "magic");
  if (std::memcmp(magic.data(), kDatasetMagic, sizeof kDatasetMagic) != 0) {
    throw FormatError("bad dataset magic; expected MMFV1");
  }
  DatasetHeader h;
  h.version = r.u32("version");
  if (h.version != kDatasetVersion) {
    throw FormatError("unsupported dataset version " + std::to_string(h.version));
  }
  h.video_count = r.u32("video count");
  h.visual_dim = r.u32("visual dimension");
  h.audio_dim = r.u32("audio dimension");
  h.classes = r.u32("class count");
  return h;
}

}  // namespace

void validate_record(const VideoRecord& r, std::size_t visual_dim, std::size_t audio_dim,
                     std::size_t classes) {
  if (r.visual.rows() == 0) throw ShapeError("video '" + r.id + "' has no frames");
  if (r.visual.rows() != r.audio.rows()) {
    throw ShapeError("video '" + r.id + "': visual and audio frame counts differ");
  }
  if (r.visual.cols() != visual_dim || r.audio.cols() != audio_dim) {
    throw ShapeError("video '" + r.id + "': features " + r.visual.shape_string() + " / " +
                     r.audio.shape_string() + " do not match dataset dimensions " +
                     std::to_string(visual_dim) + " / " + std::to_string(audio_dim));
  }
  for (std::size_t i = 0; i < r.labels.size(); ++i) {
    if (r.labels[i] >= classes) {
      throw ShapeError("video '" + r.id + "': label " + std::to_string(r.labels[i]) +
                       " out of range");
    }
    if (i > 0 && r.labels[i] <= r.labels[i - 1]) {
      throw ShapeError("video '" + r.id + "': labels must be strictly increasing");
    }
  }
}

std::vector<std::uint8_t> encode_dataset(const Dataset& dataset) {
  const DatasetHeader& h = dataset.header;
  ByteWriter w;
  w.raw(kDatasetMagic, sizeof kDatasetMagic);
  w.u32(kDatasetVersion);
  w.u32(checked_u32(dataset.records.size(), "video count"));
  w.u32(h.visual_dim);
  w.u32(h.audio_dim);
  w.u32(h.classes);
  for (const auto& r : dataset.records) {
    validate_record(r, h.visual_dim, h.audio_dim, h.classes);
    w.u32(checked_u32(r.id.size(), "id length"));
    w.raw(r.id.data(), r.id.size());
    w.u32(checked_u32(r.frame_count(), "frame count"));
    w.u32(checked_u32(r.labels.size(), "label count"));
    for (auto l : r.labels) w.u32(l);
    for (double v : r.visual.values()) w.f32(v);
    for (double v : r.audio.values()) w.f32(v);
  }
  return w.take();
}

void write_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  const auto bytes = encode_dataset(dataset);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path.string());
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  Dataset ds;
  ds.header = decode_header(r);
  const auto& h = ds.header;
  ds.records.reserve(std::min<std::size_t>(h.video_count, 1u << 20));
  for (std::uint32_t v = 0; v < h.video_count; ++v) {
    VideoRecord rec;
    rec.id = r.str(r.u32("id length"), "id");
    const std::uint32_t n = r.u32("frame count");
    if (n == 0) throw FormatError("video '" + rec.id + "' has no frames");
    const std::uint32_t label_count = r.u32("label count");
    r.need(std::size_t{4} * label_count, "labels");
    rec.labels.resize(label_count);
    for (auto& l : rec.labels) l = r.u32("label");
    r.need(std::size_t{4} * n * (h.visual_dim + h.audio_dim), "features");
    rec.visual = Matrix(n, h.visual_dim);
    for (double& x : rec.visual.values()) x = r.f32("visual features");
    rec.audio = Matrix(n, h.audio_dim);
    for (double& x : rec.audio.values()) x = r.f32("audio features");
    try {
      validate_record(rec, h.visual_dim, h.audio_dim, h.classes);
    } catch (const ShapeError& e) {
      throw FormatError(e.what());
    }
    ds.records.push_back(std::move(rec));
  }
  if (!r.at_end()) throw FormatError("trailing bytes after the last dataset record");
  return ds;
}

Dataset read_dataset(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_dataset(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

DatasetHeader read_dataset_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::uint8_t> head(sizeof kDatasetMagic + 5 * 4);
  in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(in.gcount()));
  ByteReader r(head);
  return decode_header(r);
}

VideoRecord quantize_f32(const VideoRecord& r) {
  VideoRecord q = r;
  for (double& v : q.visual.values()) v = static_cast<float>(v);
  for (double& v : q.audio.values()) v = static_cast<float>(v);
  return q;
}

// ---------------------------------------------------------------- synthetic

void SyntheticSpec::validate() const {
  if (classes == 0 || visual_dim == 0 || audio_dim == 0) {
    throw ConfigError("synthetic spec: classes and feature dimensions must be positive");
  }
  if (rank == 0) throw ConfigError("synthetic spec: rank must be at least 1");
  if (!(noise >= 0.0)) throw ConfigError("synthetic spec: noise must be nonnegative");
  if (min_frames == 0 || max_frames < min_frames) {
    throw ConfigError("synthetic spec: need 1 <= min_frames <= max_frames");
  }
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ConfigError("synthetic spec: threshold must lie in (0, 1)");
  }
}

std::vector<Matrix> synthetic_class_maps(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, 0));
  std::vector<Matrix> maps;
  maps.reserve(spec.classes);
  for (std::size_t j = 0; j < spec.classes; ++j) {
    Matrix P = normal_matrix(spec.visual_dim, spec.rank, 1.0, rng);
    Matrix Q = normal_matrix(spec.audio_dim, spec.rank, 1.0, rng);
    Matrix B = matmul_nt(P, Q);
    maps.push_back(scale(B, 1.0 / std::sqrt(squared_norm(B))));
  }
  return maps;
}

SyntheticLatents synthetic_latents(const SyntheticSpec& spec, std::size_t video) {
  Rng rng(derive_seed(spec.seed, video + 1));
  SyntheticLatents z;
  z.visual = normal_matrix(1, spec.visual_dim, 1.0, rng);
  z.audio = normal_matrix(1, spec.audio_dim, 1.0, rng);
  return z;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  const auto maps = synthetic_class_maps(spec);
  Dataset ds;
  ds.header.video_count = checked_u32(spec.video_count, "video count");
  ds.header.visual_dim = checked_u32(spec.visual_dim, "visual dimension");
  ds.header.audio_dim = checked_u32(spec.audio_dim, "audio dimension");
  ds.header.classes = checked_u32(spec.classes, "class count");
  ds.records.reserve(spec.video_count);
  for (std::size_t v = 0; v < spec.video_count; ++v) {
    // Same derived stream as synthetic_latents, continued for the frames.
    Rng rng(derive_seed(spec.seed, v + 1));
    VideoRecord rec;
    const Matrix zv = normal_matrix(1, spec.visual_dim, 1.0, rng);
    const Matrix za = normal_matrix(1, spec.audio_dim, 1.0, rng);
    for (std::size_t j = 0; j < spec.classes; ++j) {
      const double score = matmul(matmul(zv, maps[j]), transpose(za))(0, 0);
      if (sigmoid(score) > spec.threshold) rec.labels.push_back(static_cast<std::uint32_t>(j));
    }
    const std::size_t span = spec.max_frames - spec.min_frames + 1;
    const std::size_t n = spec.min_frames + rng.below(static_cast<std::uint32_t>(span));
    rec.visual = Matrix(n, spec.visual_dim);
    rec.audio = Matrix(n, spec.audio_dim);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t d = 0; d < spec.visual_dim; ++d)
        rec.visual(i, d) = zv(0, d) + spec.noise * rng.normal();
      for (std::size_t d = 0; d < spec.audio_dim; ++d)
        rec.audio(i, d) = za(0, d) + spec.noise * rng.normal();
    }
    char id[32];
    std::snprintf(id, sizeof id, "syn-%06zu", v);
    rec.id = id;
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

std::pair<Dataset, Dataset> split_tail(const Dataset& dataset, std::size_t count) {
  if (count > dataset.records.size()) throw ConfigError("split larger than the dataset");
  const auto cut = dataset.records.begin() +
                   static_cast<std::ptrdiff_t>(dataset.records.size() - count);
  Dataset head{dataset.header, {dataset.records.begin(), cut}};
  Dataset tail{dataset.header, {cut, dataset.records.end()}};
  head.header.video_count = checked_u32(head.records.size(), "video count");
  tail.header.video_count = checked_u32(tail.records.size(), "video count");
  return {std::move(head), std::move(tail)};
}

// ---------------------------------------------------------------- batching

Matrix label_matrix(const std::vector<const VideoRecord*>& records, std::size_t classes) {
  Matrix y(records.size(), classes);
  for (std::size_t b = 0; b < records.size(); ++b)
    for (auto l : records[b]->labels) {
      if (l >= classes) throw ShapeError("label out of range for " + std::to_string(classes) + " classes");
      y(b, l) = 1.0;
    }
  return y;
}

std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  Rng rng(derive_seed(seed, 0x45504F43ULL + epoch));
  // Fisher-Yates with the portable generator.
  for (std::size_t i = count; i > 1; --i) {
    const std::size_t j = rng.below(static_cast<std::uint32_t>(i));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t count, std::size_t batch_size,
                                                    std::uint64_t seed, std::size_t epoch) {
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  const auto order = epoch_order(count, seed, epoch);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < count; start += batch_size) {
    const std::size_t end = std::min(count, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

BatchStream::BatchStream(const std::vector<VideoRecord>& records, std::size_t classes,
                         std::size_t batch_size, std::size_t frames, std::uint64_t seed)
    : records_(&records),
      classes_(classes),
      batch_size_(batch_size),
      frames_(frames),
      seed_(seed),
      sampler_(0) {
  if (records.empty()) throw ConfigError("cannot batch an empty dataset");
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  start_epoch();
}

void BatchStream::start_epoch() {
  batches_ = epoch_batches(records_->size(), batch_size_, seed_, epoch_);
  sampler_ = Rng(derive_seed(seed_, 0x53414D50ULL + epoch_));
  cursor_ = 0;
}

Batch BatchStream::next() {
  if (cursor_ == batches_.size()) {
    ++epoch_;
    start_epoch();
  }
  Batch batch;
  batch.indices = batches_[cursor_++];
  std::vector<const VideoRecord*> recs;
  for (std::size_t idx : batch.indices) {
    const VideoRecord& r = (*records_)[idx];
    recs.push_back(&r);
    if (frames_ == 0) {
      batch.visual.push_back(r.visual);
      batch.audio.push_back(r.audio);
    } else {
      // One index draw keeps visual and audio frames aligned.
      const auto pick = sample_frame_indices(r.frame_count(), frames_, sampler_);
      Matrix v(pick.size(), r.visual.cols());
      Matrix a(pick.size(), r.audio.cols());
      for (std::size_t i = 0; i < pick.size(); ++i) {
        std::copy(r.visual.row(pick[i]).begin(), r.visual.row(pick[i]).end(), v.row(i).begin());
        std::copy(r.audio.row(pick[i]).begin(), r.audio.row(pick[i]).end(), a.row(i).begin());
      }
      batch.visual.push_back(std::move(v));
      batch.audio.push_back(std::move(a));
    }
  }
  batch.labels = label_matrix(recs, classes_);
  return batch;
}

}  // namespace mmfusion
