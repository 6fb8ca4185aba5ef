#include <gtest/gtest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "teleqa/features.hpp"

namespace fs = std::filesystem;
using namespace teleqa;

namespace {

Frame random_frame(int h, int w, uint64_t seed) {
  Rng rng(seed);
  Frame f(h, w);
  for (auto& v : f.data) v = static_cast<float>(rng.uniform01());
  return f;
}

Frame crop_frame(const Frame& f, const RoI& roi) {
  int y0 = static_cast<int>(std::lround(roi.y0 * f.height));
  int y1 = static_cast<int>(std::lround(roi.y1 * f.height));
  int x0 = static_cast<int>(std::lround(roi.x0 * f.width));
  int x1 = static_cast<int>(std::lround(roi.x1 * f.width));
  Frame out(y1 - y0, x1 - x0);
  for (int c = 0; c < 3; ++c)
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) out.at(c, y - y0, x - x0) = f.at(c, y, x);
  return out;
}

std::string temp_file(const std::string& name) {
  auto dir = fs::temp_directory_path() / "teleqa_feature_tests";
  fs::create_directories(dir);
  return (dir / name).string();
}

}  // namespace

TEST(FrameFeatures, PaperScaleDimIs2880) {
  auto ex = paper_frame_extractor(1);
  auto fv = frame_features(random_frame(32, 32, 2), ex);
  EXPECT_EQ(fv.modality, Modality::frame);
  EXPECT_EQ(fv.dim(), 2880);
}

TEST(FrameFeatures, ToyDimIs48AndZeroFrameGivesZeros) {
  auto ex = toy_frame_extractor(1, /*with_bias=*/false);
  auto fv = frame_features(Frame(32, 32), ex);
  EXPECT_EQ(fv.dim(), 48);
  for (float v : fv.values) EXPECT_EQ(v, 0.0f);
}

TEST(FrameFeatures, FlattenIsPositionMajor) {
  auto ex = toy_frame_extractor(3);
  Frame f = random_frame(32, 32, 4);
  auto pooled = adaptive_avg_pool(extract_frame_maps(f, ex), 1, 3);
  auto fv = frame_features(f, ex);
  for (int j = 0; j < 3; ++j)
    for (int c = 0; c < pooled.channels; ++c)
      EXPECT_EQ(fv.values[static_cast<size_t>(j) * pooled.channels + c], pooled.at(c, 0, j));

  auto cols = feature_columns(fv, pooled.channels);
  ASSERT_EQ(cols.size(), 3u);
  for (int j = 0; j < 3; ++j)
    for (int c = 0; c < pooled.channels; ++c)
      EXPECT_EQ(cols[static_cast<size_t>(j)][c], static_cast<double>(pooled.at(c, 0, j)));
}

TEST(ClipFeatures, PaperScaleDimIs1536) {
  auto ex = paper_clip_extractor(5, 8);
  Clip clip;
  for (int t = 0; t < 8; ++t) clip.frames.push_back(random_frame(32, 32, 10 + t));
  auto fv = clip_features(clip, ex);
  EXPECT_EQ(fv.modality, Modality::clip);
  EXPECT_EQ(fv.dim(), 1536);
}

TEST(ClipFeatures, ToyDimIs24AndZeroClipGivesZeros) {
  auto ex = toy_clip_extractor(5, 4, /*with_bias=*/false);
  Clip clip;
  for (int t = 0; t < 4; ++t) clip.frames.emplace_back(32, 32);
  auto fv = clip_features(clip, ex);
  EXPECT_EQ(fv.dim(), 24);
  for (float v : fv.values) EXPECT_EQ(v, 0.0f);
}

TEST(AudioFeatures, PaperScaleDimIs1536) {
  Rng rng(7);
  AudioSegment seg;
  seg.sample_rate = 8000.0;
  seg.samples.resize(2048);
  for (auto& v : seg.samples) v = static_cast<float>(rng.uniform(-1.0, 1.0));

  AudioFrontendConfig cfg{256, 64, 16};
  auto ex = paper_audio_extractor(9);
  auto fv = audio_features(seg, cfg, ex);
  EXPECT_EQ(fv.modality, Modality::audio);
  EXPECT_EQ(fv.dim(), 1536);
}

TEST(AudioFeatures, SilenceGivesZeroVectorOnBiasFreePath) {
  AudioSegment seg;
  seg.sample_rate = 8000.0;
  seg.samples.assign(2048, 0.0f);
  AudioFrontendConfig cfg{256, 64, 16};
  auto ex = toy_audio_extractor(9, /*with_bias=*/false);
  auto fv = audio_features(seg, cfg, ex);
  EXPECT_EQ(fv.dim(), 24);
  for (float v : fv.values) EXPECT_EQ(v, 0.0f);
}

TEST(AudioFeatures, TooShortSegmentPropagatesError) {
  AudioSegment seg;
  seg.sample_rate = 8000.0;
  seg.samples.assign(100, 0.1f);
  AudioFrontendConfig cfg{256, 64, 16};
  auto ex = toy_audio_extractor(9);
  try {
    audio_features(seg, cfg, ex);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("audio segment too short"), std::string::npos);
  }
}

TEST(MultiScaleRois, CountsAndFirstCells) {
  auto d1 = multi_scale_rois(1, 1);
  ASSERT_EQ(d1.size(), 4u);
  EXPECT_EQ(d1[0].x0, 0.0);
  EXPECT_EQ(d1[0].y0, 0.0);
  EXPECT_EQ(d1[0].x1, 0.5);
  EXPECT_EQ(d1[0].y1, 0.5);
  EXPECT_EQ(d1[1].x0, 0.5);  // row-major: next cell moves along x

  EXPECT_EQ(multi_scale_rois(1, 4).size(), 340u);
  EXPECT_EQ(multi_scale_rois(0, 4).size(), 341u);
  auto full = multi_scale_rois(0, 4)[0];
  EXPECT_EQ(full.x1, 1.0);
  EXPECT_EQ(full.y1, 1.0);
}

TEST(PatchFeatures, DimIsAlways341) {
  auto ex = toy_frame_extractor(11);
  auto head = init_regressor(16, 8, 8, 8, 8, 13);
  auto fv = patch_features(random_frame(32, 32, 12), ex, head);
  EXPECT_EQ(fv.modality, Modality::patch);
  EXPECT_EQ(fv.dim(), 341);
}

TEST(PatchFeatures, ConstantFrameGivesConstantVectorWithPointwiseExtractor) {
  auto ex = pointwise_frame_extractor(15, 8);
  auto head = init_regressor(8, 6, 6, 6, 6, 17);
  Frame f(32, 32);
  for (auto& v : f.data) v = 0.6f;
  auto fv = patch_features(f, ex, head);
  for (float v : fv.values) EXPECT_EQ(v, fv.values[0]);
}

TEST(PatchFeatures, FullFrameEntryEqualsFrameLevelScore) {
  auto ex = toy_frame_extractor(19);
  auto head = init_regressor(16, 8, 8, 8, 8, 21);
  Frame f = random_frame(32, 32, 22);

  auto fv = patch_features(f, ex, head);
  auto pooled = adaptive_avg_pool(extract_frame_maps(f, ex), 1, 3);
  double frame_score = score_sequence(head, pooled_columns(pooled));
  EXPECT_EQ(fv.values[0], static_cast<float>(frame_score));
}

// Scoring a sub-RoI of the global map equals running the whole frame pipeline
// on the cropped patch when the extractor is pointwise.
TEST(PatchFeatures, CropOracleExactForPointwiseExtractor) {
  auto ex = pointwise_frame_extractor(23, 8);
  auto head = init_regressor(8, 6, 6, 6, 6, 29);
  Frame f = random_frame(32, 32, 31);
  auto maps = extract_frame_maps(f, ex);

  Rng rng(33);
  for (int trial = 0; trial < 20; ++trial) {
    int gx0 = static_cast<int>(rng.below(7));
    int gy0 = static_cast<int>(rng.below(7));
    int gx1 = gx0 + 1 + static_cast<int>(rng.below(static_cast<uint64_t>(8 - gx0 - 1)));
    int gy1 = gy0 + 1 + static_cast<int>(rng.below(static_cast<uint64_t>(8 - gy0 - 1)));
    RoI roi{gx0 / 8.0, gy0 / 8.0, gx1 / 8.0, gy1 / 8.0};

    double via_roi = score_sequence(head, pooled_columns(roi_pool(maps, roi, 1, 3)));
    auto crop_pooled = adaptive_avg_pool(extract_frame_maps(crop_frame(f, roi), ex), 1, 3);
    double via_crop = score_sequence(head, pooled_columns(crop_pooled));
    EXPECT_EQ(via_roi, via_crop) << "trial " << trial;
  }
}

TEST(MultiScaleRois, QuadrantsReconstructGlobalPooledFeature) {
  auto ex = toy_frame_extractor(35);
  Frame f = random_frame(32, 32, 36);
  auto maps = extract_frame_maps(f, ex);  // 4x4 map; quadrants are 2x2 cells

  auto global = roi_pool(maps, RoI{0, 0, 1, 1}, 1, 1);
  auto quads = multi_scale_rois(1, 1);
  for (int c = 0; c < maps.channels; ++c) {
    double weighted = 0.0;
    for (const auto& roi : quads) weighted += 0.25 * roi_pool(maps, roi, 1, 1).at(c, 0, 0);
    EXPECT_NEAR(weighted, global.at(c, 0, 0), 1e-6);
  }
}

TEST(FuseVisual, DimsAddAndOrderIsPatchFrameClip) {
  FeatureVector fp{Modality::patch, std::vector<float>(341, 1.0f)};
  FeatureVector ff{Modality::frame, std::vector<float>(48, 2.0f)};
  FeatureVector fc{Modality::clip, std::vector<float>(24, 3.0f)};
  auto fused = fuse_visual(fp, ff, fc);
  EXPECT_EQ(fused.modality, Modality::visual_fused);
  EXPECT_EQ(fused.dim(), 413);
  EXPECT_EQ(fused.values[0], 1.0f);
  EXPECT_EQ(fused.values[341], 2.0f);
  EXPECT_EQ(fused.values[341 + 48], 3.0f);

  FeatureVector fp_paper{Modality::patch, std::vector<float>(341, 0.0f)};
  FeatureVector ff_paper{Modality::frame, std::vector<float>(2880, 0.0f)};
  FeatureVector fc_paper{Modality::clip, std::vector<float>(1536, 0.0f)};
  EXPECT_EQ(fuse_visual(fp_paper, ff_paper, fc_paper).dim(), 4757);
}

TEST(FuseVisual, PermutedModalitiesRejected) {
  FeatureVector fp{Modality::patch, std::vector<float>(4, 0.0f)};
  FeatureVector ff{Modality::frame, std::vector<float>(4, 0.0f)};
  FeatureVector fc{Modality::clip, std::vector<float>(4, 0.0f)};
  EXPECT_THROW(fuse_visual(ff, fp, fc), ConfigError);
  EXPECT_THROW(fuse_visual(fp, fc, ff), ConfigError);
}

TEST(FeatureCache, WriteReadIdentity) {
  Rng rng(51);
  std::vector<CacheRecord> records;
  for (uint32_t t = 0; t < 5; ++t) {
    CacheRecord r;
    r.step = t;
    r.modality = Modality::frame;
    r.payload.resize(48);
    for (auto& v : r.payload) v = static_cast<float>(rng.uniform(-2.0, 2.0));
    records.push_back(std::move(r));
    if ((t + 1) % 2 == 0) {
      CacheRecord c;
      c.step = t;
      c.modality = Modality::clip;
      c.payload.assign(24, static_cast<float>(t));
      records.push_back(std::move(c));
    }
  }

  auto path = temp_file("roundtrip.tqaf");
  cache_write(path, records);
  auto loaded = cache_read(path);
  ASSERT_EQ(loaded.size(), records.size());
  for (size_t i = 0; i < records.size(); ++i) {
    EXPECT_EQ(loaded[i].step, records[i].step);
    EXPECT_EQ(loaded[i].modality, records[i].modality);
    ASSERT_EQ(loaded[i].payload.size(), records[i].payload.size());
    EXPECT_EQ(std::memcmp(loaded[i].payload.data(), records[i].payload.data(),
                          records[i].payload.size() * sizeof(float)), 0);
  }
}

TEST(FeatureCache, EmptyCacheIsValid) {
  auto path = temp_file("empty.tqaf");
  cache_write(path, {});
  EXPECT_TRUE(cache_read(path).empty());
}

TEST(FeatureCache, StreamingReaderYieldsRecordsInOrder) {
  std::vector<CacheRecord> records(3);
  for (uint32_t t = 0; t < 3; ++t) {
    records[t].step = t;
    records[t].modality = Modality::audio;
    records[t].payload.assign(8, static_cast<float>(t) * 0.5f);
  }
  auto path = temp_file("stream.tqaf");
  cache_write(path, records);

  CacheReader reader(path);
  for (uint32_t t = 0; t < 3; ++t) {
    auto r = reader.next();
    ASSERT_TRUE(r.has_value());
    EXPECT_EQ(r->step, t);
  }
  EXPECT_FALSE(reader.next().has_value());
}

TEST(FeatureCache, TruncatedFileReportsTruncatedPayload) {
  std::vector<CacheRecord> records(1);
  records[0].payload.assign(16, 1.0f);
  auto path = temp_file("truncated.tqaf");
  cache_write(path, records);

  auto bytes = fs::file_size(path);
  fs::resize_file(path, bytes - 10);
  try {
    cache_read(path);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated payload"), std::string::npos);
  }
}

TEST(FeatureCache, MagicAndVersionAreChecked) {
  auto path = temp_file("magic.tqaf");
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write("XXXX\x01\x00\x00\x00", 8);
  }
  EXPECT_THROW(cache_read(path), IoError);

  auto path2 = temp_file("version.tqaf");
  {
    std::ofstream out(path2, std::ios::binary | std::ios::trunc);
    out.write("TQAF\x09\x00\x00\x00", 8);
  }
  EXPECT_THROW(cache_read(path2), IoError);
}

TEST(FeatureCache, DecreasingStepsPerModalityRejected) {
  std::vector<CacheRecord> records(2);
  records[0].step = 5;
  records[0].modality = Modality::frame;
  records[0].payload.assign(4, 0.0f);
  records[1].step = 3;
  records[1].modality = Modality::frame;
  records[1].payload.assign(4, 0.0f);
  EXPECT_THROW(cache_write(temp_file("order.tqaf"), records), ConfigError);

  records[1].modality = Modality::clip;  // different modality may restart
  EXPECT_NO_THROW(cache_write(temp_file("order_ok.tqaf"), records));
}
