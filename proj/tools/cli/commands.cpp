#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <future>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "kifsod/checkpoint.hpp"
#include "kifsod/dataset_io.hpp"
#include "kifsod/error.hpp"
#include "kifsod/evalkit.hpp"
#include "kifsod/rng.hpp"

namespace kifsod::cli {

using json = nlohmann::json;

namespace {

std::mutex g_print_mutex;

template <typename... Args>
void say(std::FILE* stream, const char* fmt, Args... args) {
  std::lock_guard lock(g_print_mutex);
  std::fprintf(stream, fmt, args...);
  std::fflush(stream);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void prepare_output_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) throw ConfigError("output directory " + dir.string() + " is not empty (use --force to overwrite)");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct Benchmark {
  fs::path root;
  json manifest;
  DatasetSpec spec;
  ClassSplit split;
};

Benchmark load_benchmark(const fs::path& data) {
  Benchmark b;
  b.root = resolve_input(data);
  const fs::path manifest = b.root / "manifest.json";
  if (!fs::exists(manifest)) throw DataError("no benchmark manifest at " + manifest.string());
  b.manifest = read_json(manifest);
  b.spec = b.manifest.at("spec").get<DatasetSpec>();
  b.split = b.spec.split();
  return b;
}

json detections_to_json(const std::vector<DetectionRecord>& dets) {
  json arr = json::array();
  for (const auto& d : dets)
    arr.push_back({{"image_id", d.image_id},
                   {"box", {d.box.x0, d.box.y0, d.box.x1, d.box.y1}},
                   {"score", d.score},
                   {"class_id", d.class_id}});
  return arr;
}

std::string class_name(ClassId id) {
  for (const auto& c : shape_classes())
    if (c.id == id) return c.name;
  return "class_" + std::to_string(id);
}

// ---------------------------------------------------------------------------------------------
// transfer / speed

struct RunOutputs {
  bool checkpoints = true;
  bool metrics = true;
};

fs::path run_transfer_seed(const TransferOptions& o, const Benchmark& bench, const DetectorParams& base,
                           const fs::path& dir, std::uint64_t seed, const RunOutputs& outputs) {
  const ClassSplit& split = bench.split;
  DatasetSpec episode_spec;
  const FewShotSet fewshot = load_fewshot_set(episode_dir(bench.root, seed), &episode_spec);
  const std::vector<AnnotatedImage> test = load_dataset(bench.root / kTest).images;

  TransferConfig cfg = preset_config(o.preset);
  if (o.global_lr) cfg.global_lr = *o.global_lr;
  if (o.batch_size) cfg.batch_size = *o.batch_size;
  if (o.dropout_rate) cfg.dropout_rate = *o.dropout_rate;
  if (o.batch_mode) cfg.batch_mode = batch_mode_from_string(*o.batch_mode);
  cfg.iterations = o.iterations;
  cfg.seed = seed;
  cfg.validate();
  SpeedProtocol protocol = o.protocol;
  protocol.max_budget = o.iterations;

  DetectorParams model = extend_classifier(base, split.novel, derive_seed(seed, "extend"));
  const KiEstimate ki = estimate_knowledge_inheritance(base, fewshot.images, split, o.init, o.views, seed);
  model = install_centroids(model, ki.centroids);
  round_to_checkpoint_precision(model);

  const std::string tag = o.preset + "/" + to_string(o.init) + " seed " + std::to_string(seed);
  TransferMonitor monitor;
  monitor.interval = protocol.eval_interval;
  monitor.evaluate = [&](int it, const DetectorParams& p) {
    const MetricReport m = evaluate_ap50(p, test, split);
    say(stderr, "[%s] iter %5d  bAP50 %.4f  nAP50 %.4f\n", tag.c_str(), it, m.bap, m.nap);
    return CurvePoint{it, m.bap, m.nap};
  };
  std::vector<SpeedPoint> points;
  monitor.should_stop = [&](const std::vector<CurvePoint>& curve) {
    points.push_back({curve.back().iteration, curve.back().nap50});
    return o.early_stop && !detect_convergence(points, protocol).budget_exhausted;
  };

  const auto t0 = std::chrono::steady_clock::now();
  const TransferResult result = fewshot_transfer(model, fewshot, cfg, monitor);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const SpeedReport speed = detect_convergence(points, protocol);

  const DetectOptions detect_options;
  const ArchDescriptor arch = describe_architecture(result.params, cfg.proposal_cap(), detect_options.proposal_cap);
  const FlopsReport flops_train = estimate_flops(arch, Phase::train_forward);
  const FlopsReport flops_infer = estimate_flops(arch, Phase::inference);

  json config{{"preset", o.preset},
              {"init", to_string(o.init)},
              {"seed", seed},
              {"views", o.views},
              {"iterations", o.iterations},
              {"early_stop", o.early_stop},
              {"transfer", cfg},
              {"protocol", protocol},
              {"checkpoint", fs::absolute(resolve_input(o.checkpoint)).string()},
              {"data", fs::absolute(bench.root).string()}};
  json ki_json{{"mode", to_string(ki.centroids.mode)}, {"ratio", ki.centroids.ratio}, {"stats", ki.stats}};
  json novel_lengths = json::object();
  for (const auto& [c, v] : ki.centroids.centroids) novel_lengths[std::to_string(c)] = v.norm();
  ki_json["novel_row_lengths"] = novel_lengths;

  json result_json{{"config", config},
                   {"benchmark", {{"spec", bench.spec}, {"k", fewshot.k}}},
                   {"ki", ki_json},
                   {"initial", {{"bAP50", result.curve.front().bap50}, {"nAP50", result.curve.front().nap50}}},
                   {"speed", speed},
                   {"iterations_run", result.iterations_run},
                   {"stopped_early", result.stopped_early},
                   {"flops",
                    {{"train_forward", flops_train.total},
                     {"inference", flops_infer.total},
                     {"proposal_cap_train", arch.proposal_cap_train},
                     {"proposal_cap_infer", arch.proposal_cap_infer}}}};

  fs::create_directories(dir);
  write_curve_csv(dir / "curve.csv", result.curve);
  std::ostringstream summary;
  summary << tag << "\n";
  summary << "  ratio H         " << ki.centroids.ratio << "\n";
  summary << "  initial nAP50   " << result.curve.front().nap50 << "\n";
  summary << "  convergence     " << speed.convergence_iteration
          << (speed.budget_exhausted ? " (budget exhausted)" : "") << "\n";
  summary << "  best nAP50      " << speed.best_nap << "\n";
  summary << "  wall seconds    " << seconds << "\n";
  if (outputs.metrics) {
    const auto dets = detect_all(result.params, test, detect_options);
    MetricReport metrics = compute_ap(dets, test, 0.5, split);
    metrics.ar[100] = average_recall(propose_all(result.params, test, 100), test, 100, {}, split.novel);
    result_json["metrics"] = metrics;
    summary << "  final bAP50     " << metrics.bap << "\n";
    summary << "  final nAP50     " << metrics.nap << "\n";
    summary << "  novel AR@100    " << metrics.ar[100]["all"] << "\n";
  }
  if (outputs.checkpoints) {
    save_checkpoint(dir / "initial.ckpt", model, config);
    save_checkpoint(dir / "final.ckpt", result.params, config);
  }
  write_json(dir / (outputs.metrics ? "result.json" : "speed.json"), result_json);
  write_text(dir / "summary.txt", summary.str());
  say(stdout, "%s", summary.str().c_str());
  return dir;
}

std::vector<fs::path> run_transfer(const TransferOptions& o, const RunOutputs& outputs, const char* kind) {
  if (o.seeds.empty()) throw ConfigError("--seeds must list at least one seed");
  o.protocol.validate();
  if (o.iterations < 0 || o.iterations % o.protocol.eval_interval != 0)
    throw ConfigError("--iterations must be a non-negative multiple of --eval_interval");
  preset_config(o.preset);

  const Benchmark bench = load_benchmark(o.data);
  const Checkpoint ck = load_checkpoint(resolve_input(o.checkpoint));
  if (ck.params.class_ids != bench.split.base)
    throw DataError("checkpoint has " + std::to_string(ck.params.class_ids.size()) +
                    " classes but the benchmark's base split has " + std::to_string(bench.split.base.size()));

  const fs::path out = resolve_output(o.out.empty() ? fs::path(kind) / (o.preset + "_" + to_string(o.init)) : o.out);
  prepare_output_dir(out, o.force);

  std::vector<std::future<fs::path>> jobs;
  for (std::uint64_t seed : o.seeds) {
    const fs::path dir = out / ("seed_" + std::to_string(seed));
    jobs.push_back(std::async(std::launch::async,
                              [&, dir, seed] { return run_transfer_seed(o, bench, ck.params, dir, seed, outputs); }));
  }
  std::vector<fs::path> dirs;
  std::exception_ptr first_error;
  for (auto& j : jobs) {
    try {
      dirs.push_back(j.get());
    } catch (...) {
      if (!first_error) first_error = std::current_exception();
    }
  }
  if (first_error) std::rethrow_exception(first_error);
  return dirs;
}

// ---------------------------------------------------------------------------------------------
// report

std::vector<fs::path> find_results(const fs::path& p) {
  const fs::path root = resolve_input(p);
  if (fs::exists(root / "result.json")) return {root / "result.json"};
  std::vector<fs::path> found;
  if (fs::is_directory(root))
    for (const auto& entry : fs::recursive_directory_iterator(root))
      if (entry.is_regular_file() && entry.path().filename() == "result.json") found.push_back(entry.path());
  std::sort(found.begin(), found.end());
  if (found.empty()) throw DataError("no result.json under " + root.string());
  return found;
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------------------------

fs::path output_root() {
  const char* env = std::getenv("KIFSOD_OUT");
  return env && *env ? fs::path(env) : fs::current_path();
}

fs::path resolve_output(const fs::path& p) { return p.is_absolute() ? p : output_root() / p; }

fs::path resolve_input(const fs::path& p) {
  if (p.is_absolute() || fs::exists(p)) return p;
  const char* env = std::getenv("KIFSOD_OUT");
  if (env && *env && fs::exists(fs::path(env) / p)) return fs::path(env) / p;
  return p;
}

fs::path episode_dir(const fs::path& data, std::uint64_t seed) {
  return data / "episodes" / ("seed_" + std::to_string(seed));
}

void cmd_gen_data(const GenDataOptions& o) {
  o.spec.validate();
  if (o.k < 1) throw ConfigError("--k must be at least 1");
  for (int n : {o.base_train, o.base_test, o.novel_pool, o.test})
    if (n < 1) throw ConfigError("pool sizes must be at least 1");
  const fs::path root = resolve_output(o.out);
  prepare_output_dir(root, o.force);

  const ClassSplit split = o.spec.split();
  DatasetSpec base_test_spec = o.spec, test_spec = o.spec;
  base_test_spec.seed = derive_seed(o.spec.seed, "base_test");
  test_spec.seed = derive_seed(o.spec.seed, "test");
  const std::vector<ClassId> all = split.all();

  const auto base_train = generate_dataset(o.spec, o.base_train, split.base);
  const auto novel_pool = generate_dataset(o.spec, o.novel_pool, split.novel);
  save_dataset(root / kBaseTrain, o.spec, kBaseTrain, base_train);
  save_dataset(root / kNovelPool, o.spec, kNovelPool, novel_pool);
  save_dataset(root / kBaseTest, base_test_spec, kBaseTest, generate_dataset(base_test_spec, o.base_test, split.base));
  save_dataset(root / kTest, test_spec, kTest, generate_dataset(test_spec, o.test, all));

  json classes = json::array();
  for (const auto& c : shape_classes()) {
    if (c.id >= o.spec.num_classes) continue;
    classes.push_back({{"id", c.id}, {"name", c.name}, {"split", split.is_base(c.id) ? "base" : "novel"}});
  }
  json episodes = json::array();
  for (std::uint64_t seed : o.episodes) {
    const FewShotSet fewshot = build_fewshot_set(novel_pool, base_train, split, o.k, seed);
    save_fewshot_set(episode_dir(root, seed), o.spec, fewshot, seed);
    json counts = json::object();
    for (const auto& [c, n] : fewshot.per_class_instance_count) counts[std::to_string(c)] = n;
    episodes.push_back({{"seed", seed},
                        {"dir", episode_dir(".", seed).lexically_normal().generic_string()},
                        {"images", fewshot.images.size()},
                        {"per_class_instance_count", counts},
                        {"warnings", fewshot.warnings}});
    for (const auto& w : fewshot.warnings)
      say(stderr, "episode %llu: %s\n", static_cast<unsigned long long>(seed), w.c_str());
  }
  json pools{{kBaseTrain, {{"images", o.base_train}, {"seed", o.spec.seed}, {"classes", "base"}}},
             {kNovelPool, {{"images", o.novel_pool}, {"seed", o.spec.seed}, {"classes", "novel"}}},
             {kBaseTest, {{"images", o.base_test}, {"seed", base_test_spec.seed}, {"classes", "base"}}},
             {kTest, {{"images", o.test}, {"seed", test_spec.seed}, {"classes", "all"}}}};
  write_json(root / "manifest.json", {{"format", "kifsod-benchmark"},
                                      {"version", 1},
                                      {"spec", o.spec},
                                      {"classes", classes},
                                      {"pools", pools},
                                      {"k", o.k},
                                      {"episodes", episodes}});
  say(stdout, "wrote benchmark to %s (%zu classes, %zu episodes, K=%d)\n", root.string().c_str(), classes.size(),
      episodes.size(), o.k);
}

double cmd_pretrain(const PretrainOptions& o) {
  o.train.validate();
  const Benchmark bench = load_benchmark(o.data);
  const auto train = load_dataset(bench.root / kBaseTrain).images;
  const auto held_out = load_dataset(bench.root / kBaseTest).images;
  const fs::path out = resolve_output(o.out);
  prepare_output_dir(out, o.force);

  PretrainResult result = pretrain_base(train, bench.split.base, o.train, {}, [](const TrainLogEntry& e) {
    say(stderr, "iter %5d  L_rpn %.4f  L_cls %.4f  L_loc %.4f\n", e.iteration, e.rpn, e.cls, e.loc);
  });
  round_to_checkpoint_precision(result.params);

  const json config{{"train", o.train}, {"benchmark", bench.spec}, {"data", fs::absolute(bench.root).string()}};
  save_checkpoint(out / "base.ckpt", result.params, config);
  write_training_log(out / "train_log.csv", result.log);

  const ClassSplit base_only{bench.split.base, {}};
  const auto dets = detect_all(result.params, held_out);
  const MetricReport metrics = compute_ap(dets, held_out, 0.5, base_only);
  write_json(out / "detections.json",
             {{"config", config}, {"pool", kBaseTest}, {"detections", detections_to_json(dets)}});

  const auto features = collect_features(result.params, held_out, 1, derive_seed(o.train.seed, "stats"));
  const LengthStats stats = hypersphere_stats(features, classifier_rows(result.params, bench.split.base));
  json per_class = json::array();
  for (const auto& [c, v] : aggregate_centroids(features))
    per_class.push_back({{"class_id", c}, {"name", class_name(c)}, {"aggregate_length", v.norm()}});

  write_json(out / "pretrain.json", {{"config", config},
                                     {"metrics", metrics},
                                     {"hypersphere", stats},
                                     {"per_class_lengths", per_class},
                                     {"final_losses", result.log.empty() ? json()
                                                                         : json{{"L_rpn", result.log.back().rpn},
                                                                                {"L_cls", result.log.back().cls},
                                                                                {"L_loc", result.log.back().loc}}}});
  say(stdout, "held-out base AP50: %.6f\n", metrics.bap);
  say(stdout, "base feature length CV: %.4f\n", stats.feature_cv());
  return metrics.bap;
}

std::vector<fs::path> cmd_transfer(const TransferOptions& o) { return run_transfer(o, {}, "runs"); }

std::vector<fs::path> cmd_speed(const TransferOptions& o) {
  TransferOptions s = o;
  s.early_stop = true;
  return run_transfer(s, {false, false}, "speed");
}

json cmd_flops(const FlopsOptions& o) {
  const DetectorParams params = o.checkpoint
                                    ? load_checkpoint(resolve_input(*o.checkpoint)).params
                                    : init_detector({}, DatasetSpec{}.split().all(), ClassifierKind::linear, 0);
  const TransferConfig cfg = preset_config(o.preset);
  const ArchDescriptor arch = describe_architecture(params, cfg.proposal_cap(), o.proposal_cap_infer);
  const FlopsReport train = estimate_flops(arch, Phase::train_forward);
  const FlopsReport infer = estimate_flops(arch, Phase::inference);
  const json j{{"preset", o.preset}, {"architecture", arch}, {"train_forward", train}, {"inference", infer}};
  if (o.out) {
    const fs::path path = resolve_output(*o.out);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_json(path, j);
  }
  std::ostringstream text;
  text << "preset " << o.preset << "\n";
  for (const FlopsReport* r : {&train, &infer}) {
    text << to_string(r->phase) << " (proposal cap " << r->proposal_cap << "): " << r->total << " FLOPs\n";
    for (const auto& l : r->layers) text << "  " << l.name << " " << l.flops << "\n";
  }
  text << "activations, NMS and RoI-align arithmetic are not counted\n";
  say(stdout, "%s", text.str().c_str());
  return j;
}

json cmd_report(const ReportOptions& o) {
  if (o.runs.empty()) throw ConfigError("report needs at least one result directory");
  std::vector<std::pair<fs::path, json>> results;
  for (const auto& r : o.runs)
    for (const auto& path : find_results(r)) results.emplace_back(path, read_json(path));

  const json benchmark = results.front().second.at("benchmark");
  for (const auto& [path, r] : results)
    if (r.at("benchmark") != benchmark)
      throw DataError("cannot mix benchmarks: " + path.string() + " differs from " + results.front().first.string());

  const fs::path out = resolve_output(o.out);
  fs::create_directories(out / "curves");
  json rows = json::array(), sphere = json::array();
  std::map<std::string, std::vector<std::size_t>> groups;
  std::ostringstream csv, sphere_csv;
  csv << "run,preset,init,seed,bAP50,nAP50,initial_nAP50,convergence_iteration,best_nAP50,budget_exhausted,ratio,"
         "flops_train,flops_infer\n";
  sphere_csv << "run,init,feature_length_mean,feature_length_std,feature_cv,centroid_length_mean,centroid_length_std\n";

  std::set<std::string> names;
  for (const auto& [path, r] : results) {
    const fs::path dir = path.parent_path();
    std::string name = dir.parent_path().filename().string() + "_" + dir.filename().string();
    while (!names.insert(name).second) name += "_";
    const json& cfg = r.at("config");
    const json& m = r.at("metrics");
    const json& speed = r.at("speed");
    const json& stats = r.at("ki").at("stats");
    json row{{"run", name},
             {"preset", cfg.at("preset")},
             {"init", cfg.at("init")},
             {"seed", cfg.at("seed")},
             {"bAP50", m.at("bAP")},
             {"nAP50", m.at("nAP")},
             {"initial_nAP50", r.at("initial").at("nAP50")},
             {"convergence_iteration", speed.at("convergence_iteration")},
             {"best_nAP50", speed.at("best_nap")},
             {"budget_exhausted", speed.at("budget_exhausted")},
             {"ratio", r.at("ki").at("ratio")},
             {"flops_train", r.at("flops").at("train_forward")},
             {"flops_infer", r.at("flops").at("inference")}};
    rows.push_back(row);
    csv << name << "," << row["preset"].get<std::string>() << "," << row["init"].get<std::string>() << ","
        << row["seed"] << "," << row["bAP50"] << "," << row["nAP50"] << "," << row["initial_nAP50"] << ","
        << row["convergence_iteration"] << "," << row["best_nAP50"] << "," << row["budget_exhausted"] << ","
        << row["ratio"] << "," << row["flops_train"] << "," << row["flops_infer"] << "\n";

    const double mean = stats.at("feature_length_mean").get<double>();
    const double sd = stats.at("feature_length_std").get<double>();
    json srow{{"run", name},
              {"init", cfg.at("init")},
              {"feature_length_mean", mean},
              {"feature_length_std", sd},
              {"feature_cv", mean > 0 ? sd / mean : 0.0},
              {"centroid_length_mean", stats.at("centroid_length_mean")},
              {"centroid_length_std", stats.at("centroid_length_std")}};
    sphere.push_back(srow);
    sphere_csv << name << "," << srow["init"].get<std::string>() << "," << mean << "," << sd << ","
               << srow["feature_cv"] << "," << srow["centroid_length_mean"] << "," << srow["centroid_length_std"]
               << "\n";
    fs::copy_file(dir / "curve.csv", out / "curves" / (name + ".csv"), fs::copy_options::overwrite_existing);
    groups[row["preset"].get<std::string>() + "/" + row["init"].get<std::string>()].push_back(rows.size() - 1);
  }

  json summary = json::array();
  std::ostringstream text;
  text << "runs\n";
  text << "  run                          preset  init       bAP50   nAP50   nAP50@0  conv   FLOPs(train)\n";
  for (const auto& row : rows) {
    char line[256];
    std::snprintf(line, sizeof line, "  %-28s %-7s %-10s %-7s %-7s %-8s %-6d %llu\n",
                  row["run"].get<std::string>().c_str(), row["preset"].get<std::string>().c_str(),
                  row["init"].get<std::string>().c_str(), fixed(row["bAP50"]).c_str(), fixed(row["nAP50"]).c_str(),
                  fixed(row["initial_nAP50"]).c_str(), row["convergence_iteration"].get<int>(),
                  static_cast<unsigned long long>(row["flops_train"].get<std::uint64_t>()));
    text << line;
  }
  text << "\ngroups (medians)\n";
  for (const auto& [key, members] : groups) {
    std::vector<double> conv, nap, bap, nap0;
    for (std::size_t i : members) {
      conv.push_back(rows[i]["convergence_iteration"].get<double>());
      nap.push_back(rows[i]["nAP50"].get<double>());
      bap.push_back(rows[i]["bAP50"].get<double>());
      nap0.push_back(rows[i]["initial_nAP50"].get<double>());
    }
    summary.push_back({{"group", key},
                       {"runs", members.size()},
                       {"median_convergence_iteration", median(conv)},
                       {"median_nAP50", median(nap)},
                       {"median_bAP50", median(bap)},
                       {"median_initial_nAP50", median(nap0)},
                       {"flops_train", rows[members.front()]["flops_train"]}});
    text << "  " << key << ": n=" << members.size() << " conv " << median(conv) << " nAP50 " << fixed(median(nap))
         << " bAP50 " << fixed(median(bap)) << " nAP50@0 " << fixed(median(nap0)) << "\n";
  }
  text << "\nhypersphere statistics (few-shot base features vs base classifier rows)\n";
  for (const auto& s : sphere)
    text << "  " << s["run"].get<std::string>() << ": feature length " << fixed(s["feature_length_mean"]) << " +- "
         << fixed(s["feature_length_std"]) << " (cv " << fixed(s["feature_cv"]) << "), row length "
         << fixed(s["centroid_length_mean"]) << " +- " << fixed(s["centroid_length_std"]) << "\n";
  text << "\nFLOPs count conv and linear layers only; activations, NMS and RoI-align are excluded.\n";

  const json report{{"benchmark", benchmark}, {"rows", rows}, {"groups", summary}, {"hypersphere", sphere}};
  write_json(out / "report.json", report);
  write_text(out / "report.csv", csv.str());
  write_text(out / "hypersphere.csv", sphere_csv.str());
  write_text(out / "report.txt", text.str());
  say(stdout, "%s", text.str().c_str());
  return report;
}

// ---------------------------------------------------------------------------------------------

namespace {

void add_transfer_flags(CLI::App* cmd, TransferOptions& o, std::string& init, std::vector<std::uint64_t>& seeds,
                        std::string& checkpoint, std::string& data, std::string& out) {
  cmd->add_option("--checkpoint", checkpoint, "Pretrained base checkpoint")->capture_default_str();
  cmd->add_option("--data", data, "Benchmark directory written by gen-data")->capture_default_str();
  cmd->add_option("--out", out, "Output directory (one seed_<n> subdirectory per seed)");
  cmd->add_option("--init", init, "Novel classifier initializer")
      ->check(CLI::IsMember({"random", "l2norm", "alr", "imprinted"}))
      ->capture_default_str();
  cmd->add_option("--preset", o.preset, "Transfer preset")
      ->check(CLI::IsMember({"ptf", "ptf_ki"}))
      ->capture_default_str();
  cmd->add_option("--seeds", seeds, "Episode / transfer seeds, run concurrently")->delimiter(',');
  cmd->add_option("--iterations", o.iterations, "Iteration budget")->capture_default_str();
  cmd->add_option("--global_lr", o.global_lr, "Override the preset's global learning rate");
  cmd->add_option("--batch_size", o.batch_size, "Override the preset's batch size");
  cmd->add_option("--dropout_rate", o.dropout_rate, "Override the preset's dropout rate");
  cmd->add_option("--batch_mode", o.batch_mode, "image_level or instance_level")
      ->check(CLI::IsMember({"image_level", "instance_level"}));
  cmd->add_option("--eval_interval", o.protocol.eval_interval, "Evaluation interval")->capture_default_str();
  cmd->add_option("--patience", o.protocol.patience, "Convergence patience")->capture_default_str();
  cmd->add_option("--views", o.views, "Augmented views per image for KI feature extraction")->capture_default_str();
  cmd->add_flag("--force", o.force, "Overwrite a non-empty output directory");
}

int dispatch(CLI::App& app, int argc, const char* const* argv) {
  app.require_subcommand(1);

  GenDataOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Render the synthetic benchmark and K-shot episodes");
  std::string gen_out = gen.out.string();
  gen_cmd->add_option("--out", gen_out, "Output directory")->capture_default_str();
  gen_cmd->add_option("--seed", gen.spec.seed, "Dataset seed")->capture_default_str();
  gen_cmd->add_option("--image_size", gen.spec.image_size)->capture_default_str();
  gen_cmd->add_option("--num_classes", gen.spec.num_classes)->capture_default_str();
  gen_cmd->add_option("--base_class_ids", gen.spec.base_class_ids)->delimiter(',');
  gen_cmd->add_option("--novel_class_ids", gen.spec.novel_class_ids)->delimiter(',');
  gen_cmd->add_option("--min_objects", gen.spec.min_objects)->capture_default_str();
  gen_cmd->add_option("--max_objects", gen.spec.max_objects)->capture_default_str();
  gen_cmd->add_option("--min_object_size", gen.spec.min_object_size)->capture_default_str();
  gen_cmd->add_option("--max_object_size", gen.spec.max_object_size)->capture_default_str();
  gen_cmd->add_option("--max_gt_overlap_iou", gen.spec.max_gt_overlap_iou)->capture_default_str();
  gen_cmd->add_option("--background_noise_std", gen.spec.background_noise_std)->capture_default_str();
  gen_cmd->add_option("--base_train", gen.base_train, "Base training images")->capture_default_str();
  gen_cmd->add_option("--base_test", gen.base_test, "Held-out base images")->capture_default_str();
  gen_cmd->add_option("--novel_pool", gen.novel_pool, "Novel images to draw shots from")->capture_default_str();
  gen_cmd->add_option("--test", gen.test, "Mixed test images (all classes)")->capture_default_str();
  gen_cmd->add_option("--k", gen.k, "Shots per class")->capture_default_str();
  gen_cmd->add_option("--episodes", gen.episodes, "Episode seeds")->delimiter(',');
  gen_cmd->add_flag("--force", gen.force, "Overwrite a non-empty output directory");

  PretrainOptions pre;
  auto* pre_cmd = app.add_subcommand("pretrain", "Train the base detector");
  std::string pre_data = pre.data.string(), pre_out = pre.out.string(), pre_kind = "linear";
  bool no_augment = false;
  pre_cmd->add_option("--data", pre_data, "Benchmark directory")->capture_default_str();
  pre_cmd->add_option("--out", pre_out, "Output directory")->capture_default_str();
  pre_cmd->add_option("--base_lr", pre.train.base_lr)->capture_default_str();
  pre_cmd->add_option("--momentum", pre.train.momentum)->capture_default_str();
  pre_cmd->add_option("--weight_decay", pre.train.weight_decay)->capture_default_str();
  pre_cmd->add_option("--batch_size", pre.train.batch_size)->capture_default_str();
  pre_cmd->add_option("--iterations", pre.train.iterations)->capture_default_str();
  pre_cmd->add_option("--seed", pre.train.seed)->capture_default_str();
  pre_cmd->add_option("--classifier_kind,--classifier", pre_kind)
      ->check(CLI::IsMember({"linear", "cosine"}))
      ->capture_default_str();
  pre_cmd->add_option("--warmup_iterations", pre.train.warmup_iterations)->capture_default_str();
  pre_cmd->add_option("--lr_steps", pre.train.lr_steps)->delimiter(',');
  pre_cmd->add_option("--log_interval", pre.train.log_interval)->capture_default_str();
  pre_cmd->add_option("--proposal_cap", pre.train.proposal_cap)->capture_default_str();
  pre_cmd->add_flag("--no_augment", no_augment, "Disable zoom / flip augmentation");
  pre_cmd->add_flag("--force", pre.force, "Overwrite a non-empty output directory");

  TransferOptions tr;
  auto* tr_cmd = app.add_subcommand("transfer", "Extend, initialize and fine-tune on a K-shot episode");
  std::string tr_init = "alr", tr_ckpt = tr.checkpoint.string(), tr_data = tr.data.string(), tr_out;
  std::vector<std::uint64_t> tr_seeds{0};
  add_transfer_flags(tr_cmd, tr, tr_init, tr_seeds, tr_ckpt, tr_data, tr_out);
  bool no_early_stop = false;
  tr_cmd->add_flag("--no_early_stop", no_early_stop, "Train the full budget even after convergence");

  TransferOptions sp;
  auto* sp_cmd = app.add_subcommand("speed", "Measure adaptation speed (iterations to convergence)");
  std::string sp_init = "alr", sp_ckpt = sp.checkpoint.string(), sp_data = sp.data.string(), sp_out;
  std::vector<std::uint64_t> sp_seeds{0};
  add_transfer_flags(sp_cmd, sp, sp_init, sp_seeds, sp_ckpt, sp_data, sp_out);

  FlopsOptions fl;
  auto* fl_cmd = app.add_subcommand("flops", "Analytic FLOPs of the detector under a preset");
  std::string fl_ckpt, fl_out;
  fl_cmd->add_option("--checkpoint", fl_ckpt, "Checkpoint whose shapes to count (default: 12-class model)");
  fl_cmd->add_option("--preset", fl.preset)->check(CLI::IsMember({"ptf", "ptf_ki"}))->capture_default_str();
  fl_cmd->add_option("--proposal_cap_infer", fl.proposal_cap_infer)->capture_default_str();
  fl_cmd->add_option("--out", fl_out, "Write the JSON report here");

  ReportOptions rep;
  auto* rep_cmd = app.add_subcommand("report", "Merge result directories into comparison tables");
  std::vector<std::string> rep_runs;
  std::string rep_out = rep.out.string();
  rep_cmd->add_option("runs", rep_runs, "Result directories (searched recursively)")->required();
  rep_cmd->add_option("--out", rep_out, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  if (gen_cmd->parsed()) {
    gen.out = gen_out;
    cmd_gen_data(gen);
  } else if (pre_cmd->parsed()) {
    pre.data = pre_data;
    pre.out = pre_out;
    pre.train.classifier_kind = classifier_kind_from_string(pre_kind);
    pre.train.augment = !no_augment;
    cmd_pretrain(pre);
  } else if (tr_cmd->parsed() || sp_cmd->parsed()) {
    const bool speed = sp_cmd->parsed();
    TransferOptions& o = speed ? sp : tr;
    o.init = init_mode_from_string(speed ? sp_init : tr_init);
    o.seeds = speed ? sp_seeds : tr_seeds;
    o.checkpoint = speed ? sp_ckpt : tr_ckpt;
    o.data = speed ? sp_data : tr_data;
    o.out = speed ? sp_out : tr_out;
    if (speed) {
      cmd_speed(o);
    } else {
      o.early_stop = !no_early_stop;
      cmd_transfer(o);
    }
  } else if (fl_cmd->parsed()) {
    if (!fl_ckpt.empty()) fl.checkpoint = fs::path(fl_ckpt);
    if (!fl_out.empty()) fl.out = fs::path(fl_out);
    cmd_flops(fl);
  } else if (rep_cmd->parsed()) {
    rep.runs.assign(rep_runs.begin(), rep_runs.end());
    rep.out = rep_out;
    cmd_report(rep);
  }
  return kOk;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Few-shot detection with knowledge inheritance on a synthetic shapes benchmark", "kifsod"};
  try {
    return dispatch(app, argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure in " << e.component();
    if (e.iteration() >= 0) std::cerr << " at iteration " << e.iteration();
    std::cerr << ": " << e.what() << "\n";
    return kNumerical;
  } catch (const DegenerateGeometryError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
}

int run(const std::vector<std::string>& args) {
  std::vector<char*> argv;
  std::vector<std::string> copy = args;
  copy.insert(copy.begin(), "kifsod");
  for (auto& a : copy) argv.push_back(a.data());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace kifsod::cli
