#include "kifsod/ki_init.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "kifsod/error.hpp"

namespace kifsod {

std::string to_string(InitMode m) {
  switch (m) {
    case InitMode::random:
      return "random";
    case InitMode::l2norm:
      return "l2norm";
    case InitMode::alr:
      return "alr";
    case InitMode::imprinted:
      return "imprinted";
  }
  return "?";
}

InitMode init_mode_from_string(const std::string& s) {
  for (InitMode m : {InitMode::random, InitMode::l2norm, InitMode::alr, InitMode::imprinted})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown init mode '" + s + "'");
}

void to_json(nlohmann::json& j, const CentroidSet& c) {
  auto dump = [](const CentroidMap& m) {
    nlohmann::json o = nlohmann::json::object();
    for (const auto& [id, v] : m) o[std::to_string(id)] = std::vector<double>(v.data(), v.data() + v.size());
    return o;
  };
  j = {{"mode", to_string(c.mode)},
       {"ratio", c.ratio},
       {"centroids", dump(c.centroids)},
       {"raw_aggregates", dump(c.raw_aggregates)}};
}

void from_json(const nlohmann::json& j, CentroidSet& c) {
  auto load = [](const nlohmann::json& o) {
    CentroidMap m;
    for (const auto& [key, arr] : o.items()) {
      const auto v = arr.get<std::vector<double>>();
      m[std::stoi(key)] = Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
    }
    return m;
  };
  c.mode = init_mode_from_string(j.at("mode").get<std::string>());
  c.ratio = j.at("ratio").get<double>();
  c.centroids = load(j.at("centroids"));
  c.raw_aggregates = j.contains("raw_aggregates") ? load(j.at("raw_aggregates")) : CentroidMap{};
}

void to_json(nlohmann::json& j, const LengthStats& s) {
  j = {{"feature_length_mean", s.feature_length_mean},
       {"feature_length_std", s.feature_length_std},
       {"centroid_length_mean", s.centroid_length_mean},
       {"centroid_length_std", s.centroid_length_std},
       {"feature_length_cv", s.feature_cv()}};
}

CentroidMap aggregate_centroids(std::span<const InstanceFeature> features) {
  if (features.empty()) throw DataError("no features to aggregate");
  CentroidMap sum;
  std::map<ClassId, int> count;
  for (const auto& f : features) {
    auto [it, fresh] = sum.try_emplace(f.class_id, Vector::Zero(f.embedding.size()));
    if (it->second.size() != f.embedding.size()) throw ShapeError("features of mixed dimension");
    it->second += f.embedding;
    ++count[f.class_id];
  }
  for (auto& [c, v] : sum) v /= count[c];
  return sum;
}

double estimate_alr_ratio(std::span<const InstanceFeature> base_features, const CentroidMap& base_centroids) {
  if (base_centroids.empty()) throw DataError("no base centroids");
  const CentroidMap means = aggregate_centroids(base_features);
  double feature_len = 0.0, centroid_len = 0.0;
  for (const auto& [c, w] : base_centroids) {
    const auto it = means.find(c);
    if (it == means.end()) throw DataError("no features for base class " + std::to_string(c));
    feature_len += it->second.norm();
    centroid_len += w.norm();
  }
  feature_len /= static_cast<double>(base_centroids.size());
  centroid_len /= static_cast<double>(base_centroids.size());
  if (!(centroid_len > 0.0)) throw DegenerateGeometryError("base centroids have zero mean length");
  if (!(feature_len > 0.0)) throw DegenerateGeometryError("base features have zero mean length");
  return feature_len / centroid_len;
}

CentroidSet make_novel_centroids(const CentroidMap& raw, InitMode mode, double ratio) {
  if (mode == InitMode::random) throw ConfigError("random rows come from random_centroids");
  if (mode == InitMode::alr && !(ratio > 0.0)) throw ConfigError("alr needs a positive ratio");
  CentroidSet out;
  out.raw_aggregates = raw;
  out.mode = mode;
  out.ratio = mode == InitMode::alr ? ratio : 1.0;
  for (const auto& [c, v] : raw) {
    const double n = v.norm();
    if (!(n > 0.0)) throw DegenerateGeometryError("class " + std::to_string(c) + " has a zero-length mean feature");
    out.centroids[c] = mode == InitMode::alr ? Vector(v / ratio) : Vector(v / n);
  }
  return out;
}

CentroidSet random_centroids(std::span<const ClassId> class_ids, int dim, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> dist(0.0, 0.01);
  CentroidSet out;
  out.mode = InitMode::random;
  for (ClassId c : class_ids) out.centroids[c] = Vector::NullaryExpr(dim, [&]() { return dist(rng); });
  return out;
}

DetectorParams install_centroids(const DetectorParams& params, const CentroidSet& centroids) {
  DetectorParams out = params;
  const auto d = params.classifier.weight.cols();
  for (const auto& [c, v] : centroids.centroids) {
    if (v.size() != d)
      throw ShapeError("centroid of class " + std::to_string(c) + " has dimension " + std::to_string(v.size()) +
                       ", classifier expects " + std::to_string(d));
    const int row = params.row_of(c);
    if (row < 0) throw ConfigError("classifier has no row for class " + std::to_string(c));
    out.classifier.weight.row(row) = v.transpose();
    out.classifier.bias[row] = 0.0;
  }
  if (centroids.mode == InitMode::imprinted) out.classifier_kind = ClassifierKind::cosine;
  return out;
}

CentroidMap classifier_rows(const DetectorParams& params, std::span<const ClassId> class_ids) {
  CentroidMap out;
  for (ClassId c : class_ids) {
    const int row = params.row_of(c);
    if (row < 0) throw ConfigError("classifier has no row for class " + std::to_string(c));
    out[c] = params.classifier.weight.row(row).transpose();
  }
  return out;
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double x : xs) m += x;
  m /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - m) * (x - m);
  return {m, std::sqrt(var / static_cast<double>(xs.size()))};
}

}  // namespace

LengthStats hypersphere_stats(std::span<const InstanceFeature> features, const CentroidMap& centroids) {
  std::vector<double> fl, cl;
  if (!features.empty())
    for (const auto& [c, v] : aggregate_centroids(features)) fl.push_back(v.norm());
  for (const auto& [c, v] : centroids) cl.push_back(v.norm());
  LengthStats s;
  std::tie(s.feature_length_mean, s.feature_length_std) = mean_std(fl);
  std::tie(s.centroid_length_mean, s.centroid_length_std) = mean_std(cl);
  return s;
}

std::vector<InstanceFeature> collect_features(const DetectorParams& params, std::span<const AnnotatedImage> images,
                                              int views, std::uint64_t seed) {
  std::vector<InstanceFeature> out;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].boxes.empty()) continue;
    auto f = extract_instance_features(params, images[i], views, derive_seed(seed, static_cast<std::uint64_t>(i)));
    out.insert(out.end(), std::make_move_iterator(f.begin()), std::make_move_iterator(f.end()));
  }
  return out;
}

KiEstimate estimate_knowledge_inheritance(const DetectorParams& params, std::span<const AnnotatedImage> fewshot_images,
                                          const ClassSplit& split, InitMode mode, int views, std::uint64_t seed) {
  KiEstimate est;
  for (auto& f : collect_features(params, fewshot_images, views, seed)) {
    if (split.is_base(f.class_id)) {
      est.base_features.push_back(std::move(f));
    } else if (split.is_novel(f.class_id)) {
      est.novel_features.push_back(std::move(f));
    }
  }
  const CentroidMap base_rows = classifier_rows(params, split.base);
  est.stats = hypersphere_stats(est.base_features, base_rows);
  if (mode == InitMode::random) {
    est.centroids = random_centroids(split.novel, params.arch.embedding_dim, derive_seed(seed, "random-rows"));
    return est;
  }
  if (est.novel_features.empty()) throw DataError("few-shot set has no novel instances");
  const double ratio = mode == InitMode::alr ? estimate_alr_ratio(est.base_features, base_rows) : 1.0;
  est.centroids = make_novel_centroids(aggregate_centroids(est.novel_features), mode, ratio);
  return est;
}

void dump_embeddings(const std::filesystem::path& path, std::span<const InstanceFeature> features,
                     const CentroidMap& centroids) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  Eigen::Index dim = -1;
  auto row = [&](ClassId c, int is_centroid, const Vector& v) {
    if (dim < 0) {
      dim = v.size();
      out << "class_id,is_centroid";
      for (Eigen::Index k = 0; k < dim; ++k) out << ",v" << k;
      out << '\n';
    }
    if (v.size() != dim) throw ShapeError("embeddings of mixed dimension");
    const double n = v.norm();
    if (!(n > 0.0)) throw DegenerateGeometryError("zero-length embedding for class " + std::to_string(c));
    out << c << ',' << is_centroid;
    char buf[32];
    for (Eigen::Index k = 0; k < dim; ++k) {
      std::snprintf(buf, sizeof buf, ",%.6f", v[k] / n);
      out << buf;
    }
    out << '\n';
  };
  for (const auto& f : features) row(f.class_id, 0, f.embedding);
  for (const auto& [c, v] : centroids) row(c, 1, v);
  if (!out) throw DataError("short write to " + path.string());
}

std::vector<EmbeddingRow> read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("class_id,is_centroid", 0) != 0) throw DataError(path.string() + ": missing embedding header");
  std::vector<EmbeddingRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> vals;
    EmbeddingRow r;
    std::getline(ss, cell, ',');
    r.class_id = std::stoi(cell);
    std::getline(ss, cell, ',');
    r.is_centroid = cell == "1";
    while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
    r.values = Eigen::Map<const Vector>(vals.data(), static_cast<Eigen::Index>(vals.size()));
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace kifsod
