#include "kifsod/dataset_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "kifsod/error.hpp"

namespace kifsod {

namespace fs = std::filesystem;
using nlohmann::json;

void to_json(json& j, const DatasetSpec& s) {
  j = json{{"image_size", s.image_size},
           {"num_classes", s.num_classes},
           {"base_class_ids", s.base_class_ids},
           {"novel_class_ids", s.novel_class_ids},
           {"objects_per_image", {s.min_objects, s.max_objects}},
           {"object_size", {s.min_object_size, s.max_object_size}},
           {"max_gt_overlap_iou", s.max_gt_overlap_iou},
           {"background_noise_std", s.background_noise_std},
           {"seed", s.seed}};
}

void from_json(const json& j, DatasetSpec& s) {
  s.image_size = j.at("image_size").get<int>();
  s.num_classes = j.at("num_classes").get<int>();
  s.base_class_ids = j.at("base_class_ids").get<std::vector<ClassId>>();
  s.novel_class_ids = j.at("novel_class_ids").get<std::vector<ClassId>>();
  s.min_objects = j.at("objects_per_image").at(0).get<int>();
  s.max_objects = j.at("objects_per_image").at(1).get<int>();
  s.min_object_size = j.at("object_size").at(0).get<int>();
  s.max_object_size = j.at("object_size").at(1).get<int>();
  s.max_gt_overlap_iou = j.at("max_gt_overlap_iou").get<double>();
  s.background_noise_std = j.at("background_noise_std").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
}

void write_ppm(const fs::path& path, const AnnotatedImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  std::string bytes(image.pixels.size(), '\0');
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    const float v = std::clamp(image.pixels[i], 0.0f, 1.0f);
    bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f)));
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + path.string());
}

AnnotatedImage read_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255) throw DataError(path.string() + ": not an 8-bit P6 image");
  in.get();
  std::string bytes(static_cast<std::size_t>(w) * h * 3, '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw DataError(path.string() + ": truncated");
  AnnotatedImage img;
  img.width = w;
  img.height = h;
  img.pixels.resize(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) img.pixels[i] = static_cast<unsigned char>(bytes[i]) / 255.0f;
  return img;
}

void save_dataset(const fs::path& dir, const DatasetSpec& spec, const std::string& pool,
                  const std::vector<AnnotatedImage>& images, const json& extra) {
  fs::create_directories(dir / "images");
  json classes = json::array();
  for (int c = 0; c < spec.num_classes; ++c) classes.push_back(shape_classes()[static_cast<std::size_t>(c)].name);

  json records = json::array();
  for (std::size_t i = 0; i < images.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "images/%06zu.ppm", i);
    write_ppm(dir / name, images[i]);
    json boxes = json::array();
    for (const Box& b : images[i].boxes) boxes.push_back({b.x0, b.y0, b.x1, b.y1});
    records.push_back({{"file", name}, {"boxes", boxes}, {"labels", images[i].labels}});
  }
  json manifest{{"image_size", spec.image_size},
                {"classes", classes},
                {"base_ids", spec.base_class_ids},
                {"novel_ids", spec.novel_class_ids},
                {"spec", spec},
                {"pool", pool},
                {"records", records}};
  for (auto it = extra.begin(); it != extra.end(); ++it) manifest[it.key()] = it.value();

  std::ofstream out(dir / "manifest.json");
  if (!out) throw DataError("cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

StoredDataset load_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw DataError("dataset manifest not found: " + manifest_path.string());
  StoredDataset ds;
  try {
    in >> ds.manifest;
    ds.spec = ds.manifest.at("spec").get<DatasetSpec>();
    ds.pool = ds.manifest.value("pool", "");
    for (const auto& rec : ds.manifest.at("records")) {
      AnnotatedImage img = read_ppm(dir / rec.at("file").get<std::string>());
      for (const auto& b : rec.at("boxes")) {
        img.boxes.push_back(
            {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()});
      }
      img.labels = rec.at("labels").get<std::vector<ClassId>>();
      if (img.labels.size() != img.boxes.size()) throw DataError("record boxes/labels length mismatch");
      ds.images.push_back(std::move(img));
    }
  } catch (const json::exception& e) {
    throw DataError(manifest_path.string() + ": " + e.what());
  }
  return ds;
}

void save_fewshot_set(const fs::path& dir, const DatasetSpec& spec, const FewShotSet& fewshot, std::uint64_t seed) {
  json counts = json::object();
  for (const auto& [c, n] : fewshot.per_class_instance_count) counts[std::to_string(c)] = n;
  save_dataset(dir, spec, "episode", fewshot.images,
               json{{"k", fewshot.k},
                    {"episode_seed", seed},
                    {"per_class_instance_count", counts},
                    {"warnings", fewshot.warnings}});
}

FewShotSet load_fewshot_set(const fs::path& dir, DatasetSpec* spec) {
  StoredDataset ds = load_dataset(dir);
  if (!ds.manifest.contains("k")) throw DataError(dir.string() + " is not a few-shot episode");
  FewShotSet set;
  set.images = std::move(ds.images);
  set.k = ds.manifest.at("k").get<int>();
  for (const auto& [key, n] : ds.manifest.at("per_class_instance_count").items())
    set.per_class_instance_count[std::stoi(key)] = n.get<int>();
  set.warnings = ds.manifest.value("warnings", std::vector<std::string>{});
  if (spec) *spec = ds.spec;
  return set;
}

}  // namespace kifsod
