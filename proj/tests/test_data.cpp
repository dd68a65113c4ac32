#include <gtest/gtest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "mmfusion/data.hpp"
#include "mmfusion/error.hpp"

using namespace mmfusion;

namespace {

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.video_count = 40;
  s.classes = 4;
  s.visual_dim = 6;
  s.audio_dim = 3;
  s.min_frames = 2;
  s.max_frames = 5;
  return s;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("mmfusion_test_" + name);
}

}  // namespace

TEST(DatasetIo, RoundTripMatchesQuantizedRecords) {
  const Dataset d = generate_synthetic(small_spec());
  const auto path = temp_path("roundtrip.bin");
  write_dataset(path, d);
  const Dataset back = read_dataset(path);
  std::filesystem::remove(path);
  ASSERT_EQ(back.records.size(), d.records.size());
  EXPECT_EQ(back.header.video_count, 40u);
  EXPECT_EQ(back.header.visual_dim, 6u);
  EXPECT_EQ(back.header.audio_dim, 3u);
  EXPECT_EQ(back.header.classes, 4u);
  for (std::size_t i = 0; i < d.records.size(); ++i)
    EXPECT_EQ(back.records[i], quantize_f32(d.records[i]));
}

TEST(DatasetIo, EncodingIsStable) {
  const Dataset d = generate_synthetic(small_spec());
  EXPECT_EQ(encode_dataset(d), encode_dataset(decode_dataset(encode_dataset(d))));
}

TEST(DatasetIo, EmptyDataset) {
  Dataset d;
  d.header.visual_dim = 2;
  d.header.audio_dim = 1;
  d.header.classes = 3;
  const Dataset back = decode_dataset(encode_dataset(d));
  EXPECT_EQ(back.header.video_count, 0u);
  EXPECT_EQ(back.header.classes, 3u);
  EXPECT_TRUE(back.records.empty());
}

TEST(DatasetIo, TruncationIsReported) {
  const auto bytes = encode_dataset(generate_synthetic(small_spec()));
  for (std::size_t cut : {std::size_t{3}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    const std::span<const std::uint8_t> part(bytes.data(), cut);
    EXPECT_THROW(decode_dataset(part), FormatError) << cut;
  }
}

TEST(DatasetIo, BadMagicAndTrailingBytes) {
  auto bytes = encode_dataset(generate_synthetic(small_spec()));
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_dataset(bad), FormatError);
  bytes.push_back(0);
  EXPECT_THROW(decode_dataset(bytes), FormatError);
}

TEST(DatasetIo, MissingFile) {
  EXPECT_THROW(read_dataset(temp_path("does_not_exist.bin")), Error);
}

TEST(DatasetIo, HeaderOnlyRead) {
  const auto path = temp_path("header.bin");
  write_dataset(path, generate_synthetic(small_spec()));
  const auto h = read_dataset_header(path);
  std::filesystem::remove(path);
  EXPECT_EQ(h.video_count, 40u);
  EXPECT_EQ(h.version, kDatasetVersion);
}

TEST(DatasetIo, RejectsInvalidRecords) {
  Dataset d;
  d.header = {kDatasetVersion, 1, 2, 1, 3};
  d.records.push_back({"v", Matrix(2, 2), Matrix(2, 1), {1, 1}});
  EXPECT_THROW(encode_dataset(d), Error);
  d.records[0].labels = {3};
  EXPECT_THROW(encode_dataset(d), Error);
  d.records[0].labels = {0, 2};
  d.records[0].audio = Matrix(3, 1);
  EXPECT_THROW(encode_dataset(d), Error);
}

TEST(Synthetic, Deterministic) {
  EXPECT_EQ(encode_dataset(generate_synthetic(small_spec())),
            encode_dataset(generate_synthetic(small_spec())));
  auto other = small_spec();
  other.seed = 8;
  EXPECT_NE(encode_dataset(generate_synthetic(small_spec())),
            encode_dataset(generate_synthetic(other)));
}

TEST(Synthetic, NoiselessFramesEqualLatent) {
  auto spec = small_spec();
  spec.noise = 0.0;
  const Dataset d = generate_synthetic(spec);
  for (std::size_t v = 0; v < 5; ++v) {
    const auto z = synthetic_latents(spec, v);
    const auto& r = d.records[v];
    for (std::size_t n = 0; n < r.frame_count(); ++n) {
      EXPECT_EQ(row_slice(r.visual, n, 1), z.visual);
      EXPECT_EQ(row_slice(r.audio, n, 1), z.audio);
    }
  }
}

TEST(Synthetic, FrameCountsWithinRange) {
  const Dataset d = generate_synthetic(small_spec());
  for (const auto& r : d.records) {
    EXPECT_GE(r.frame_count(), 2u);
    EXPECT_LE(r.frame_count(), 5u);
  }
}

TEST(Synthetic, LabelsFollowThresholdRule) {
  const auto spec = small_spec();
  const Dataset d = generate_synthetic(spec);
  const auto maps = synthetic_class_maps(spec);
  for (std::size_t v = 0; v < d.records.size(); ++v) {
    const auto z = synthetic_latents(spec, v);
    std::vector<std::uint32_t> expected;
    for (std::uint32_t j = 0; j < spec.classes; ++j) {
      const double s = matmul(matmul(z.visual, maps[j]), transpose(z.audio))(0, 0);
      if (sigmoid(s) > spec.threshold) expected.push_back(j);
    }
    EXPECT_EQ(d.records[v].labels, expected);
  }
}

TEST(Synthetic, ClassMapsHaveRequestedRank) {
  const auto spec = small_spec();
  for (const auto& b : synthetic_class_maps(spec)) {
    EXPECT_EQ(b.rows(), 6u);
    EXPECT_EQ(b.cols(), 3u);
    // Rank 2 of a 6x3 matrix: every 3x3 minor of the Gram matrix vanishes.
    const Matrix g = matmul_tn(b, b);
    const double det = g(0, 0) * (g(1, 1) * g(2, 2) - g(1, 2) * g(2, 1)) -
                       g(0, 1) * (g(1, 0) * g(2, 2) - g(1, 2) * g(2, 0)) +
                       g(0, 2) * (g(1, 0) * g(2, 1) - g(1, 1) * g(2, 0));
    EXPECT_NEAR(det, 0.0, 1e-12);
  }
}

TEST(Synthetic, ClassPrevalenceIsBalanced) {
  SyntheticSpec spec;
  spec.video_count = 1000;
  spec.min_frames = 1;
  spec.max_frames = 1;
  const Dataset d = generate_synthetic(spec);
  std::vector<std::size_t> counts(spec.classes);
  for (const auto& r : d.records)
    for (auto l : r.labels) ++counts[l];
  for (auto c : counts) {
    EXPECT_GE(c, 50u);
    EXPECT_LE(c, 950u);
  }
}

TEST(Synthetic, TailSplit) {
  const Dataset d = generate_synthetic(small_spec());
  const auto [head, tail] = split_tail(d, 10);
  EXPECT_EQ(head.records.size(), 30u);
  EXPECT_EQ(tail.records.size(), 10u);
  EXPECT_EQ(head.header.video_count, 30u);
  EXPECT_EQ(tail.records.front(), d.records[30]);
  EXPECT_THROW(split_tail(d, 41), Error);
}

TEST(Batching, BatchSizes) {
  const auto batches = epoch_batches(10, 4, 3, 0);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[0].size(), 4u);
  EXPECT_EQ(batches[1].size(), 4u);
  EXPECT_EQ(batches[2].size(), 2u);
}

TEST(Batching, EpochIsPartition) {
  for (std::size_t epoch = 0; epoch < 4; ++epoch) {
    std::vector<std::size_t> all;
    for (const auto& b : epoch_batches(23, 5, 11, epoch)) all.insert(all.end(), b.begin(), b.end());
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], i);
    EXPECT_EQ(all.size(), 23u);
  }
}

TEST(Batching, ShuffleIsSeededPerEpoch) {
  EXPECT_EQ(epoch_order(50, 9, 2), epoch_order(50, 9, 2));
  EXPECT_NE(epoch_order(50, 9, 0), epoch_order(50, 9, 1));
  EXPECT_NE(epoch_order(50, 9, 0), epoch_order(50, 10, 0));
}

TEST(Batching, LabelMatrix) {
  VideoRecord a{"a", Matrix(1, 1), Matrix(1, 1), {0, 2}};
  VideoRecord b{"b", Matrix(1, 1), Matrix(1, 1), {}};
  EXPECT_EQ(label_matrix({&a, &b}, 3), (Matrix{{1, 0, 1}, {0, 0, 0}}));
}

TEST(Batching, StreamSamplesSameFramesForBothModalities) {
  auto spec = small_spec();
  spec.min_frames = 6;
  spec.max_frames = 9;
  const Dataset d = generate_synthetic(spec);
  BatchStream stream(d.records, spec.classes, 8, 3, 21);
  for (int step = 0; step < 10; ++step) {
    const Batch b = stream.next();
    for (std::size_t i = 0; i < b.indices.size(); ++i) {
      const auto& r = d.records[b.indices[i]];
      ASSERT_EQ(b.visual[i].rows(), 3u);
      ASSERT_EQ(b.audio[i].rows(), 3u);
      // Find each sampled visual row in the source and check the paired audio.
      for (std::size_t n = 0; n < 3; ++n) {
        bool found = false;
        for (std::size_t src = 0; src < r.frame_count() && !found; ++src)
          if (row_slice(r.visual, src, 1) == row_slice(b.visual[i], n, 1)) {
            found = row_slice(r.audio, src, 1) == row_slice(b.audio[i], n, 1);
          }
        EXPECT_TRUE(found);
      }
    }
  }
}

TEST(Batching, StreamIsReproducible) {
  const Dataset d = generate_synthetic(small_spec());
  BatchStream s1(d.records, 4, 6, 3, 5), s2(d.records, 4, 6, 3, 5);
  for (int step = 0; step < 12; ++step) {
    const Batch a = s1.next(), b = s2.next();
    EXPECT_EQ(a.indices, b.indices);
    EXPECT_EQ(a.visual, b.visual);
    EXPECT_EQ(a.labels, b.labels);
  }
  EXPECT_GE(s1.epoch(), 1u);
}
