#include "kifsod/synthgen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <set>

#include "kifsod/error.hpp"
#include "kifsod/rng.hpp"

namespace kifsod {

const std::vector<ShapeClass>& shape_classes() {
  static const std::vector<ShapeClass> table = {
      {0, Shape::circle, Color::red, "red_circle"},       {1, Shape::square, Color::red, "red_square"},
      {2, Shape::triangle, Color::red, "red_triangle"},   {3, Shape::circle, Color::green, "green_circle"},
      {4, Shape::square, Color::green, "green_square"},   {5, Shape::triangle, Color::green, "green_triangle"},
      {6, Shape::circle, Color::blue, "blue_circle"},     {7, Shape::square, Color::blue, "blue_square"},
      {8, Shape::triangle, Color::blue, "blue_triangle"}, {9, Shape::star, Color::red, "red_star"},
      {10, Shape::star, Color::green, "green_star"},      {11, Shape::star, Color::blue, "blue_star"},
  };
  return table;
}

bool ClassSplit::is_base(ClassId c) const { return std::find(base.begin(), base.end(), c) != base.end(); }
bool ClassSplit::is_novel(ClassId c) const { return std::find(novel.begin(), novel.end(), c) != novel.end(); }

std::vector<ClassId> ClassSplit::all() const {
  std::vector<ClassId> ids = base;
  ids.insert(ids.end(), novel.begin(), novel.end());
  return ids;
}

void DatasetSpec::validate() const {
  if (image_size < 16) throw ConfigError("image_size must be at least 16");
  if (num_classes < 1 || num_classes > static_cast<int>(shape_classes().size()))
    throw ConfigError("num_classes must be in [1, " + std::to_string(shape_classes().size()) + "]");
  std::set<ClassId> seen;
  for (const auto* ids : {&base_class_ids, &novel_class_ids}) {
    for (ClassId c : *ids) {
      if (c < 0 || c >= num_classes) throw ConfigError("class id " + std::to_string(c) + " out of range");
      if (!seen.insert(c).second)
        throw ConfigError("class id " + std::to_string(c) + " appears in both base and novel splits");
    }
  }
  if (static_cast<int>(seen.size()) != num_classes)
    throw ConfigError("base and novel ids must cover exactly 0.." + std::to_string(num_classes - 1));
  if (min_objects < 1 || max_objects < min_objects) throw ConfigError("invalid objects_per_image range");
  if (min_object_size < 2 || max_object_size < min_object_size || max_object_size > image_size)
    throw ConfigError("invalid object_size range");
  if (!(max_gt_overlap_iou >= 0 && max_gt_overlap_iou <= 1)) throw ConfigError("max_gt_overlap_iou must be in [0,1]");
  if (background_noise_std < 0) throw ConfigError("background_noise_std must be non-negative");
}

namespace {

std::array<float, 3> base_color(Color c) {
  switch (c) {
    case Color::red:
      return {0.85f, 0.15f, 0.15f};
    case Color::green:
      return {0.15f, 0.70f, 0.20f};
    case Color::blue:
      return {0.15f, 0.30f, 0.85f};
  }
  return {0, 0, 0};
}

using Polygon = std::vector<std::array<double, 2>>;

// Five-pointed star rescaled so its vertex bounding box is exactly the unit square.
const Polygon& unit_star() {
  static const Polygon star = [] {
    Polygon p;
    const double inner = 0.382;
    for (int i = 0; i < 10; ++i) {
      const double r = (i % 2 == 0) ? 1.0 : inner;
      const double a = -std::numbers::pi / 2 + i * std::numbers::pi / 5;
      p.push_back({r * std::cos(a), r * std::sin(a)});
    }
    double lo_x = 1e9, hi_x = -1e9, lo_y = 1e9, hi_y = -1e9;
    for (auto& v : p) {
      lo_x = std::min(lo_x, v[0]);
      hi_x = std::max(hi_x, v[0]);
      lo_y = std::min(lo_y, v[1]);
      hi_y = std::max(hi_y, v[1]);
    }
    for (auto& v : p) v = {(v[0] - lo_x) / (hi_x - lo_x), (v[1] - lo_y) / (hi_y - lo_y)};
    return p;
  }();
  return star;
}

bool inside_polygon(const Polygon& poly, double u, double v) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto& a = poly[i];
    const auto& b = poly[j];
    if ((a[1] > v) != (b[1] > v) && u < (b[0] - a[0]) * (v - a[1]) / (b[1] - a[1]) + a[0]) in = !in;
  }
  return in;
}

// (u, v) are coordinates normalized to the object box.
bool inside_shape(Shape shape, double u, double v) {
  switch (shape) {
    case Shape::circle:
      return (u - 0.5) * (u - 0.5) + (v - 0.5) * (v - 0.5) <= 0.25;
    case Shape::square:
      return u >= 0 && u <= 1 && v >= 0 && v <= 1;
    case Shape::triangle:
      return v <= 1 && v >= 2.0 * std::abs(u - 0.5);
    case Shape::star:
      return inside_polygon(unit_star(), u, v);
  }
  return false;
}

constexpr int kSupersample = 4;

void draw_object(AnnotatedImage& img, const Box& box, Shape shape, const std::array<float, 3>& color) {
  const int xa = static_cast<int>(box.x0), xb = static_cast<int>(box.x1);
  const int ya = static_cast<int>(box.y0), yb = static_cast<int>(box.y1);
  const double w = box.width(), h = box.height();
  for (int y = ya; y < yb; ++y) {
    for (int x = xa; x < xb; ++x) {
      int hits = 0;
      for (int sy = 0; sy < kSupersample; ++sy) {
        for (int sx = 0; sx < kSupersample; ++sx) {
          const double px = x + (sx + 0.5) / kSupersample;
          const double py = y + (sy + 0.5) / kSupersample;
          hits += inside_shape(shape, (px - box.x0) / w, (py - box.y0) / h);
        }
      }
      if (hits == 0) continue;
      const float alpha = static_cast<float>(hits) / (kSupersample * kSupersample);
      float* p = &img.pixels[(static_cast<std::size_t>(y) * img.width + x) * 3];
      for (int c = 0; c < 3; ++c) p[c] = (1.0f - alpha) * p[c] + alpha * color[c];
    }
  }
}

std::uint64_t filter_stream(std::span<const ClassId> filter) {
  std::uint64_t h = 0x51ed270b27a6f3c9ULL;
  for (ClassId c : filter) h = splitmix64(h ^ static_cast<std::uint64_t>(c + 1));
  return h;
}

}  // namespace

AnnotatedImage generate_image(const DatasetSpec& spec, std::span<const ClassId> class_filter,
                              std::uint64_t image_index) {
  Rng rng(derive_seed(derive_seed(spec.seed, filter_stream(class_filter)), image_index));
  const int n = spec.image_size;

  AnnotatedImage img;
  img.width = img.height = n;
  img.pixels.resize(static_cast<std::size_t>(n) * n * 3);
  std::uniform_real_distribution<float> gray_dist(0.42f, 0.58f);
  const float gray = gray_dist(rng);
  std::normal_distribution<float> noise(0.0f, static_cast<float>(spec.background_noise_std));
  for (float& p : img.pixels) p = std::clamp(gray + noise(rng), 0.0f, 1.0f);

  std::uniform_int_distribution<int> count_dist(spec.min_objects, spec.max_objects);
  std::uniform_int_distribution<std::size_t> class_dist(0, class_filter.size() - 1);
  std::uniform_int_distribution<int> size_dist(spec.min_object_size, spec.max_object_size);
  std::uniform_real_distribution<float> jitter(-0.05f, 0.05f);

  const int num_objects = count_dist(rng);
  for (int o = 0; o < num_objects; ++o) {
    const ClassId cls = class_filter[class_dist(rng)];
    const int w = size_dist(rng);
    const int h = size_dist(rng);
    std::uniform_int_distribution<int> x_dist(0, n - w);
    std::uniform_int_distribution<int> y_dist(0, n - h);
    for (int attempt = 0; attempt < kMaxPlacementAttempts; ++attempt) {
      const int x0 = x_dist(rng);
      const int y0 = y_dist(rng);
      const Box box{double(x0), double(y0), double(x0 + w), double(y0 + h)};
      const bool fits = std::all_of(img.boxes.begin(), img.boxes.end(),
                                    [&](const Box& b) { return match_iou(b, box) <= spec.max_gt_overlap_iou; });
      if (!fits) continue;
      const auto& info = shape_classes()[static_cast<std::size_t>(cls)];
      auto color = base_color(info.color);
      for (float& c : color) c = std::clamp(c + jitter(rng), 0.0f, 1.0f);
      draw_object(img, box, info.shape, color);
      img.boxes.push_back(box);
      img.labels.push_back(cls);
      break;
    }
  }
  // Quantize to 8 bits so the in-memory image equals its on-disk RGB encoding.
  for (float& p : img.pixels) p = std::round(p * 255.0f) / 255.0f;
  return img;
}

std::vector<AnnotatedImage> generate_dataset(const DatasetSpec& spec, int num_images,
                                             std::span<const ClassId> class_filter) {
  spec.validate();
  if (class_filter.empty()) throw ConfigError("class_filter must not be empty");
  if (num_images < 1) throw ConfigError("num_images must be at least 1");
  for (ClassId c : class_filter) {
    if (c < 0 || c >= spec.num_classes)
      throw ConfigError("class_filter contains unknown class id " + std::to_string(c));
  }
  std::vector<AnnotatedImage> out;
  out.reserve(static_cast<std::size_t>(num_images));
  for (int i = 0; i < num_images; ++i) out.push_back(generate_image(spec, class_filter, static_cast<std::uint64_t>(i)));
  return out;
}

std::size_t FewShotSet::num_instances() const {
  std::size_t n = 0;
  for (const auto& img : images) n += img.num_annotations();
  return n;
}

FewShotSet build_fewshot_set(std::span<const AnnotatedImage> novel_pool, std::span<const AnnotatedImage> base_pool,
                             const ClassSplit& split, int k, std::uint64_t seed) {
  if (k < 1) throw ConfigError("K must be at least 1");

  // Candidate images are addressed as (pool, index); pool 0 = novel, 1 = base.
  struct Ref {
    int pool;
    std::size_t index;
  };
  auto image_of = [&](const Ref& r) -> const AnnotatedImage& {
    return r.pool == 0 ? novel_pool[r.index] : base_pool[r.index];
  };

  const std::vector<ClassId> classes = split.all();
  std::map<ClassId, int> target, count;
  std::map<ClassId, std::vector<Ref>> candidates;
  FewShotSet out;
  out.k = k;

  for (ClassId c : classes) {
    const bool novel = split.is_novel(c);
    const auto pool = novel ? novel_pool : base_pool;
    int available = 0;
    std::vector<Ref> refs;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      const int n = static_cast<int>(std::count(pool[i].labels.begin(), pool[i].labels.end(), c));
      if (n > 0) refs.push_back({novel ? 0 : 1, i});
      available += n;
    }
    if (available == 0) throw DataError("class " + std::to_string(c) + " has no available instances");
    if (available < k) {
      out.warnings.push_back("class " + std::to_string(c) + " has only " + std::to_string(available) +
                             " instances, fewer than K=" + std::to_string(k));
    }
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
    std::shuffle(refs.begin(), refs.end(), rng);
    candidates[c] = std::move(refs);
    target[c] = std::min(k, available);
    count[c] = 0;
  }

  std::set<std::pair<int, std::size_t>> used;
  auto take = [&](const Ref& r, bool whole) {
    const AnnotatedImage& src = image_of(r);
    AnnotatedImage copy = src;
    copy.boxes.clear();
    copy.labels.clear();
    for (std::size_t a = 0; a < src.labels.size(); ++a) {
      const ClassId c = src.labels[a];
      const bool tracked = target.count(c) > 0;
      if (!whole && (!tracked || count[c] >= target[c])) continue;
      copy.boxes.push_back(src.boxes[a]);
      copy.labels.push_back(c);
      if (tracked) ++count[c];
    }
    used.insert({r.pool, r.index});
    out.images.push_back(std::move(copy));
  };

  // Whole images first, as long as no class overshoots its target.
  for (ClassId c : classes) {
    for (const Ref& r : candidates[c]) {
      if (count[c] >= target[c]) break;
      if (used.count({r.pool, r.index})) continue;
      std::map<ClassId, int> add;
      for (ClassId l : image_of(r).labels) ++add[l];
      const bool fits = std::all_of(add.begin(), add.end(), [&](const auto& kv) {
        return target.count(kv.first) == 0 || count[kv.first] + kv.second <= target[kv.first];
      });
      if (fits) take(r, true);
    }
  }
  // Fill remaining shots from partially annotated images.
  for (ClassId c : classes) {
    for (const Ref& r : candidates[c]) {
      if (count[c] >= target[c]) break;
      if (used.count({r.pool, r.index})) continue;
      take(r, false);
    }
  }

  for (ClassId c : classes) {
    if (count[c] != target[c])
      throw DataError("could not select " + std::to_string(target[c]) + " shots for class " + std::to_string(c));
  }
  out.per_class_instance_count = count;
  return out;
}

std::vector<AnnotatedImage> sample_batch(const FewShotSet& fewshot, BatchMode mode, int batch_size,
                                         std::uint64_t seed) {
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  struct Unit {
    std::size_t image;
    int annotation;  // -1 = whole image
  };
  std::vector<Unit> units;
  for (std::size_t i = 0; i < fewshot.images.size(); ++i) {
    if (mode == BatchMode::image_level) {
      units.push_back({i, -1});
    } else {
      for (std::size_t a = 0; a < fewshot.images[i].num_annotations(); ++a) units.push_back({i, static_cast<int>(a)});
    }
  }
  if (units.empty()) throw DataError("few-shot set is empty");

  Rng rng(seed);
  std::vector<Unit> picked;
  if (static_cast<std::size_t>(batch_size) <= units.size()) {
    std::shuffle(units.begin(), units.end(), rng);
    picked.assign(units.begin(), units.begin() + batch_size);
  } else {
    std::uniform_int_distribution<std::size_t> dist(0, units.size() - 1);
    for (int b = 0; b < batch_size; ++b) picked.push_back(units[dist(rng)]);
  }

  std::vector<AnnotatedImage> batch;
  batch.reserve(picked.size());
  for (const Unit& u : picked) {
    AnnotatedImage img = fewshot.images[u.image];
    if (u.annotation >= 0) {
      const auto a = static_cast<std::size_t>(u.annotation);
      img.boxes = {img.boxes[a]};
      img.labels = {img.labels[a]};
    }
    batch.push_back(std::move(img));
  }
  return batch;
}

std::string to_string(BatchMode mode) { return mode == BatchMode::image_level ? "image_level" : "instance_level"; }

BatchMode batch_mode_from_string(const std::string& s) {
  if (s == "image_level") return BatchMode::image_level;
  if (s == "instance_level") return BatchMode::instance_level;
  throw ConfigError("unknown batch mode '" + s + "'");
}

}  // namespace kifsod
