#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <thread>

#include "kifsod/error.hpp"
#include "kifsod/synthgen.hpp"

using namespace kifsod;

namespace {

DatasetSpec spec_with_seed(std::uint64_t seed) {
  DatasetSpec s;
  s.seed = seed;
  return s;
}

std::map<ClassId, int> count_labels(const std::vector<AnnotatedImage>& images) {
  std::map<ClassId, int> n;
  for (const auto& im : images)
    for (ClassId c : im.labels) ++n[c];
  return n;
}

}  // namespace

TEST(ClassTable, TwelveDistinctShapeColorPairs) {
  const auto& classes = shape_classes();
  ASSERT_EQ(classes.size(), 12u);
  std::set<std::pair<Shape, Color>> seen;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    EXPECT_EQ(classes[i].id, static_cast<ClassId>(i));
    seen.insert({classes[i].shape, classes[i].color});
  }
  EXPECT_EQ(seen.size(), 12u);
}

TEST(ClassTable, DefaultSplitIsRedGreenPlusBlueCircleSquare) {
  const DatasetSpec s;
  for (ClassId c : s.base_class_ids) {
    const auto& k = shape_classes()[static_cast<std::size_t>(c)];
    EXPECT_NE(k.shape, Shape::star);
    EXPECT_FALSE(k.color == Color::blue && k.shape == Shape::triangle);
  }
  for (ClassId c : s.novel_class_ids) {
    const auto& k = shape_classes()[static_cast<std::size_t>(c)];
    EXPECT_TRUE(k.shape == Shape::star || k.color == Color::blue);
  }
}

TEST(DatasetSpec, RejectsOverlappingOrIncompleteSplits) {
  DatasetSpec s;
  s.novel_class_ids = {7, 8, 9, 10, 11};
  EXPECT_THROW(s.validate(), ConfigError);
  s = {};
  s.novel_class_ids = {8, 9, 10};
  EXPECT_THROW(s.validate(), ConfigError);
  EXPECT_NO_THROW(DatasetSpec{}.validate());
}

TEST(GenerateDataset, LabelsStayInsideFilter) {
  const DatasetSpec s = spec_with_seed(7);
  const auto images = generate_dataset(s, 100, s.base_class_ids);
  ASSERT_EQ(images.size(), 100u);
  for (const auto& im : images) {
    ASSERT_FALSE(im.labels.empty());
    for (ClassId c : im.labels) EXPECT_TRUE(s.split().is_base(c));
  }
  for (const auto& im : generate_dataset(s, 50, s.novel_class_ids))
    for (ClassId c : im.labels) EXPECT_TRUE(s.split().is_novel(c));
}

TEST(GenerateDataset, BitIdenticalAcrossCalls) {
  const DatasetSpec s = spec_with_seed(3);
  const auto a = generate_dataset(s, 20, s.split().all());
  const auto b = generate_dataset(s, 20, s.split().all());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].pixels, b[i].pixels);
    EXPECT_EQ(a[i].boxes, b[i].boxes);
    EXPECT_EQ(a[i].labels, b[i].labels);
  }
}

TEST(GenerateDataset, ConcurrentGenerationMatchesSequential) {
  const DatasetSpec s = spec_with_seed(5);
  const auto filter = s.split().all();
  const auto seq = generate_dataset(s, 16, filter);
  std::vector<AnnotatedImage> par(16);
  std::vector<std::thread> workers;
  for (int t = 0; t < 4; ++t)
    workers.emplace_back([&, t] {
      for (int i = t; i < 16; i += 4) par[static_cast<std::size_t>(i)] = generate_image(s, filter, i);
    });
  for (auto& w : workers) w.join();
  for (std::size_t i = 0; i < seq.size(); ++i) EXPECT_EQ(seq[i].pixels, par[i].pixels);
}

TEST(GenerateDataset, GeometryInvariants) {
  DatasetSpec s = spec_with_seed(9);
  const auto images = generate_dataset(s, 200, s.split().all());
  for (const auto& im : images) {
    ASSERT_EQ(im.boxes.size(), im.labels.size());
    EXPECT_LE(static_cast<int>(im.boxes.size()), s.max_objects);
    for (std::size_t i = 0; i < im.boxes.size(); ++i) {
      const Box& b = im.boxes[i];
      const double w = b.x1 - b.x0, h = b.y1 - b.y0;
      EXPECT_GE(w, 16);
      EXPECT_LE(w, 48);
      EXPECT_GE(h, 16);
      EXPECT_LE(h, 48);
      EXPECT_GE(b.x0, 0);
      EXPECT_GE(b.y0, 0);
      EXPECT_LE(b.x1, s.image_size);
      EXPECT_LE(b.y1, s.image_size);
      for (std::size_t j = i + 1; j < im.boxes.size(); ++j) EXPECT_LE(match_iou(b, im.boxes[j]), 0.3);
    }
    for (float p : im.pixels) {
      ASSERT_GE(p, 0.0f);
      ASSERT_LE(p, 1.0f);
    }
  }
}

TEST(GenerateDataset, ObjectsAreVisibleInsideTheirBoxes) {
  const DatasetSpec s = spec_with_seed(2);
  for (const auto& im : generate_dataset(s, 20, s.split().all())) {
    for (std::size_t i = 0; i < im.boxes.size(); ++i) {
      const Box& b = im.boxes[i];
      const int cy = static_cast<int>(b.center_y()), cx = static_cast<int>(b.center_x());
      float spread = 0;
      for (int c = 0; c < 3; ++c) spread = std::max(spread, std::abs(im.at(cy, cx, c) - im.at(cy, cx, (c + 1) % 3)));
      EXPECT_GT(spread, 0.2f) << "object center should be saturated color";
    }
  }
}

TEST(GenerateDataset, RejectsEmptyFilter) {
  const DatasetSpec s;
  EXPECT_THROW(generate_dataset(s, 3, std::vector<ClassId>{}), ConfigError);
  EXPECT_THROW(generate_dataset(s, 3, std::vector<ClassId>{12}), ConfigError);
}

class FewShot : public ::testing::Test {
 protected:
  void SetUp() override {
    spec_ = spec_with_seed(21);
    base_ = generate_dataset(spec_, 200, spec_.base_class_ids);
    novel_ = generate_dataset(spec_, 80, spec_.novel_class_ids);
  }
  DatasetSpec spec_;
  std::vector<AnnotatedImage> base_, novel_;
};

TEST_F(FewShot, TenShotsPerClass) {
  const FewShotSet fs = build_fewshot_set(novel_, base_, spec_.split(), 10, 1);
  ASSERT_EQ(fs.per_class_instance_count.size(), 12u);
  for (const auto& [c, n] : fs.per_class_instance_count) EXPECT_EQ(n, 10) << "class " << c;
  // recount from the images themselves
  for (const auto& [c, n] : count_labels(fs.images)) EXPECT_EQ(n, 10) << "class " << c;
  EXPECT_TRUE(fs.warnings.empty());
}

TEST_F(FewShot, OneShotGivesTwelveInstances) {
  const FewShotSet fs = build_fewshot_set(novel_, base_, spec_.split(), 1, 4);
  std::size_t total = 0;
  for (const auto& im : fs.images) total += im.labels.size();
  EXPECT_EQ(total, 12u);
  EXPECT_EQ(fs.num_instances(), 12u);
  for (const auto& [c, n] : count_labels(fs.images)) EXPECT_EQ(n, 1);
}

TEST_F(FewShot, DeterministicGivenSeed) {
  const FewShotSet a = build_fewshot_set(novel_, base_, spec_.split(), 5, 8);
  const FewShotSet b = build_fewshot_set(novel_, base_, spec_.split(), 5, 8);
  ASSERT_EQ(a.images.size(), b.images.size());
  for (std::size_t i = 0; i < a.images.size(); ++i) {
    EXPECT_EQ(a.images[i].boxes, b.images[i].boxes);
    EXPECT_EQ(a.images[i].pixels, b.images[i].pixels);
  }
}

TEST_F(FewShot, ImagesAppearOnce) {
  const FewShotSet fs = build_fewshot_set(novel_, base_, spec_.split(), 10, 2);
  std::set<std::vector<float>> seen;
  for (const auto& im : fs.images) EXPECT_TRUE(seen.insert(im.pixels).second);
}

TEST_F(FewShot, ShortfallRecordsCountAndWarning) {
  // keep exactly 7 instances of novel class 9
  std::vector<AnnotatedImage> pool;
  int kept = 0;
  for (auto im : novel_) {
    AnnotatedImage copy = im;
    copy.boxes.clear();
    copy.labels.clear();
    for (std::size_t a = 0; a < im.labels.size(); ++a) {
      if (im.labels[a] == 9 && kept >= 7) continue;
      kept += im.labels[a] == 9;
      copy.boxes.push_back(im.boxes[a]);
      copy.labels.push_back(im.labels[a]);
    }
    pool.push_back(copy);
  }
  const FewShotSet fs = build_fewshot_set(pool, base_, spec_.split(), 10, 3);
  EXPECT_EQ(fs.per_class_instance_count.at(9), 7);
  EXPECT_EQ(fs.per_class_instance_count.at(8), 10);
  ASSERT_EQ(fs.warnings.size(), 1u);
  EXPECT_NE(fs.warnings[0].find("class 9"), std::string::npos);
}

TEST_F(FewShot, MissingClassIsAnError) {
  std::vector<AnnotatedImage> pool;
  for (const auto& im : novel_)
    if (std::find(im.labels.begin(), im.labels.end(), 11) == im.labels.end()) pool.push_back(im);
  try {
    build_fewshot_set(pool, base_, spec_.split(), 10, 3);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("11"), std::string::npos);
  }
}

TEST_F(FewShot, SampleBatchModes) {
  const FewShotSet fs = build_fewshot_set(novel_, base_, spec_.split(), 10, 5);
  const auto multi =
      std::find_if(fs.images.begin(), fs.images.end(), [](const auto& im) { return im.labels.size() >= 3; });
  ASSERT_NE(multi, fs.images.end());
  FewShotSet single;
  single.images = {*multi};
  const auto img_level = sample_batch(single, BatchMode::image_level, 1, 0);
  EXPECT_EQ(img_level[0].labels.size(), multi->labels.size());
  const auto inst_level = sample_batch(single, BatchMode::instance_level, 1, 0);
  EXPECT_EQ(inst_level[0].labels.size(), 1u);
  EXPECT_EQ(inst_level[0].pixels, multi->pixels);
  EXPECT_EQ(sample_batch(fs, BatchMode::image_level, 4, 1).size(), 4u);
  EXPECT_EQ(sample_batch(single, BatchMode::image_level, 5, 1).size(), 5u);
  EXPECT_THROW(sample_batch(fs, BatchMode::image_level, 0, 1), ConfigError);
}

TEST(BatchMode, StringRoundTrip) {
  for (BatchMode m : {BatchMode::image_level, BatchMode::instance_level})
    EXPECT_EQ(batch_mode_from_string(to_string(m)), m);
  EXPECT_THROW(batch_mode_from_string("episode"), ConfigError);
}
