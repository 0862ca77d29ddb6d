#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mctnet/autoencoder.hpp"
#include "mctnet/confusion.hpp"
#include "mctnet/error.hpp"
#include "mctnet/introspection.hpp"
#include "mctnet/io.hpp"
#include "mctnet/kmeans.hpp"
#include "mctnet/landscape.hpp"
#include "mctnet/oracle.hpp"
#include "mctnet/quantum.hpp"
#include "mctnet/rng.hpp"

namespace mctnet {

namespace fs = std::filesystem;

struct ExperimentConfig {
  // model
  std::string model_id = "LZ";
  double delta = 1.0;
  double delta_a = 1.0;
  double delta_b = 1.0;
  std::optional<std::size_t> initial_index;
  std::optional<std::size_t> target_index;
  // mesh
  std::size_t n_ts = 2;
  double eps_min = -5.0;
  double eps_max = 5.0;
  std::size_t eps_count = 100;
  std::size_t extra_axis_count = 11;
  // time sweep
  double t_start = 0.01;
  double t_end = 10.0;
  double t_step = 0.01;
  // seeds
  std::uint64_t master_seed = 20220607;
  std::optional<std::uint64_t> split_seed;
  // ensemble; members are the product n_hidden x n_features in list order
  std::vector<std::size_t> n_hidden{190, 180, 170, 160, 150, 140, 130, 120, 110, 100};
  std::vector<std::size_t> n_features{40, 30, 20, 10};
  TrainConfig train;
  // clustering and sweep
  std::size_t k_min = 1;
  std::size_t k_max = 8;
  std::optional<std::size_t> k;
  double window_trim = 0.05;
  std::size_t smoothing_width = 1;
  // introspection
  std::optional<double> threshold;
  NodeAggregation aggregation = NodeAggregation::kMean;
  std::vector<double> overlay_times{4.0};
  // long-time study; with longtime_scale every time range is divided by delta
  std::vector<double> longtime_deltas{0.5, 0.7, 1.0};
  double longtime_t_end = 49.9;
  double longtime_t_step = 0.01;
  bool longtime_scale = true;
  unsigned threads = 0;

  ModelId model() const { return model_from_string(model_id); }

  ControlProblem problem() const {
    StateOverride states;
    states.initial = initial_index;
    states.target = target_index;
    return build_problem(model(), delta, delta_a, delta_b, states);
  }

  MeshSpec mesh() const {
    MeshSpec m;
    for (std::size_t k = 0; k < n_ts; ++k)
      m.axes.push_back({eps_min, eps_max, k < 2 ? eps_count : extra_axis_count});
    return m;
  }

  std::vector<double> times() const { return time_grid(t_start, t_end, t_step); }

  std::uint64_t effective_split_seed() const {
    return split_seed.value_or(derive_seed(master_seed, SeedStage::kSplit, 0));
  }

  double effective_threshold() const {
    if (threshold) return *threshold;
    return model() == ModelId::kLandauZener ? 0.7 : 0.5;
  }

  std::vector<ArchitectureSpec> architectures(std::size_t input_dim) const {
    std::vector<ArchitectureSpec> out;
    for (auto nh : n_hidden)
      for (auto fh : n_features) out.push_back({input_dim, nh, fh});
    return out;
  }

  void validate() const {
    (void)model();
    if (!(delta > 0.0)) throw ParameterError("delta must be > 0");
    if (n_ts < 1) throw ParameterError("n_ts must be >= 1");
    mesh().validate();
    if (!(t_step > 0.0)) throw ParameterError("t_step must be > 0");
    if (!(t_start > 0.0) || t_end < t_start) throw ParameterError("time range requires 0 < t_start <= t_end");
    if (n_hidden.empty() || n_features.empty()) throw ParameterError("ensemble grid is empty");
    train.validate();
    if (k_min < 1 || k_max < k_min + 2) throw ParameterError("k range requires 1 <= k_min and k_max >= k_min + 2");
    if (k && *k < 2) throw ParameterError("k must be >= 2");
    if (!(window_trim >= 0.0 && window_trim < 0.5)) throw ParameterError("window_trim must lie in [0, 0.5)");
    if (smoothing_width % 2 == 0) throw ParameterError("smoothing_width must be odd");
    if (threshold && !(*threshold >= 0.0 && *threshold <= 1.0)) throw ParameterError("threshold must lie in [0, 1]");
    if (longtime_deltas.empty()) throw ParameterError("longtime_deltas is empty");
    for (double d : longtime_deltas)
      if (!(d > 0.0)) throw ParameterError("longtime deltas must be > 0");
    if (!(longtime_t_step > 0.0) || !(longtime_t_end > longtime_t_step)) throw ParameterError("bad long-time range");
  }
};

// 50x50 mesh, T step 0.05, four members. The long-time evaluation grid
// keeps its full density; only training is expensive there.
inline ExperimentConfig smoke_profile() {
  ExperimentConfig c;
  c.eps_count = 50;
  c.t_start = 0.05;
  c.t_step = 0.05;
  c.n_hidden = {190, 100};
  c.n_features = {40, 10};
  return c;
}

inline const char* to_string(NodeAggregation a) { return a == NodeAggregation::kMean ? "mean" : "sum"; }

inline NodeAggregation aggregation_from_string(const std::string& s) {
  if (s == "mean") return NodeAggregation::kMean;
  if (s == "sum") return NodeAggregation::kSum;
  throw ParameterError("unknown node aggregation '" + s + "'");
}

inline json to_json(const ExperimentConfig& c) {
  json j = {{"model_id", c.model_id},
            {"delta", c.delta},
            {"delta_a", c.delta_a},
            {"delta_b", c.delta_b},
            {"n_ts", c.n_ts},
            {"eps_min", c.eps_min},
            {"eps_max", c.eps_max},
            {"eps_count", c.eps_count},
            {"extra_axis_count", c.extra_axis_count},
            {"t_start", c.t_start},
            {"t_end", c.t_end},
            {"t_step", c.t_step},
            {"master_seed", c.master_seed},
            {"n_hidden", c.n_hidden},
            {"n_features", c.n_features},
            {"train", train_config_to_json(c.train)},
            {"k_min", c.k_min},
            {"k_max", c.k_max},
            {"window_trim", c.window_trim},
            {"smoothing_width", c.smoothing_width},
            {"aggregation", to_string(c.aggregation)},
            {"overlay_times", c.overlay_times},
            {"longtime_deltas", c.longtime_deltas},
            {"longtime_t_end", c.longtime_t_end},
            {"longtime_t_step", c.longtime_t_step},
            {"longtime_scale", c.longtime_scale}};
  j["train"].erase("seed");
  j["initial_index"] = c.initial_index ? json(*c.initial_index) : json(nullptr);
  j["target_index"] = c.target_index ? json(*c.target_index) : json(nullptr);
  j["split_seed"] = c.split_seed ? json(*c.split_seed) : json(nullptr);
  j["k"] = c.k ? json(*c.k) : json(nullptr);
  j["threshold"] = c.threshold ? json(*c.threshold) : json(nullptr);
  return j;
}

// Missing keys keep their defaults; unknown keys are rejected.
inline ExperimentConfig config_from_json(const json& j, ExperimentConfig c = {}) {
  if (!j.is_object()) throw ParameterError("config document must be a JSON object");
  static const std::set<std::string> known = {
      "model_id", "delta", "delta_a", "delta_b", "initial_index", "target_index", "n_ts", "eps_min", "eps_max",
      "eps_count", "extra_axis_count", "t_start", "t_end", "t_step", "master_seed", "split_seed", "n_hidden",
      "n_features", "train", "k_min", "k_max", "k", "window_trim", "smoothing_width", "threshold", "aggregation",
      "overlay_times", "longtime_deltas", "longtime_t_end", "longtime_t_step", "longtime_scale", "threads"};
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw ParameterError("unknown config key '" + key + "'");
  try {
    auto opt = [&](const char* key, auto& dst) {
      using T = typename std::decay_t<decltype(dst)>::value_type;
      if (j.contains(key)) dst = j.at(key).is_null() ? std::nullopt : std::optional<T>(j.at(key).get<T>());
    };
    c.model_id = j.value("model_id", c.model_id);
    c.delta = j.value("delta", c.delta);
    c.delta_a = j.value("delta_a", c.delta_a);
    c.delta_b = j.value("delta_b", c.delta_b);
    opt("initial_index", c.initial_index);
    opt("target_index", c.target_index);
    c.n_ts = j.value("n_ts", c.n_ts);
    c.eps_min = j.value("eps_min", c.eps_min);
    c.eps_max = j.value("eps_max", c.eps_max);
    c.eps_count = j.value("eps_count", c.eps_count);
    c.extra_axis_count = j.value("extra_axis_count", c.extra_axis_count);
    c.t_start = j.value("t_start", c.t_start);
    c.t_end = j.value("t_end", c.t_end);
    c.t_step = j.value("t_step", c.t_step);
    c.master_seed = j.value("master_seed", c.master_seed);
    opt("split_seed", c.split_seed);
    c.n_hidden = j.value("n_hidden", c.n_hidden);
    c.n_features = j.value("n_features", c.n_features);
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
    c.k_min = j.value("k_min", c.k_min);
    c.k_max = j.value("k_max", c.k_max);
    opt("k", c.k);
    c.window_trim = j.value("window_trim", c.window_trim);
    c.smoothing_width = j.value("smoothing_width", c.smoothing_width);
    opt("threshold", c.threshold);
    if (j.contains("aggregation")) c.aggregation = aggregation_from_string(j.at("aggregation").get<std::string>());
    c.overlay_times = j.value("overlay_times", c.overlay_times);
    c.longtime_deltas = j.value("longtime_deltas", c.longtime_deltas);
    c.longtime_t_end = j.value("longtime_t_end", c.longtime_t_end);
    c.longtime_t_step = j.value("longtime_t_step", c.longtime_t_step);
    c.longtime_scale = j.value("longtime_scale", c.longtime_scale);
    c.threads = j.value("threads", c.threads);
  } catch (const json::exception& e) {
    throw ParameterError(std::string("bad config value: ") + e.what());
  }
  return c;
}

inline ExperimentConfig load_config(const fs::path& path, ExperimentConfig base = {}) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw FormatError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j, std::move(base));
}

// MCT_SEED, when set, replaces master_seed.
inline void apply_env_overrides(ExperimentConfig& c) {
  if (const char* s = std::getenv("MCT_SEED")) {
    std::uint64_t v = 0;
    const char* end = s + std::char_traits<char>::length(s);
    const auto r = std::from_chars(s, end, v);
    if (r.ec != std::errc{} || r.ptr != end) throw ParameterError(std::string("MCT_SEED is not an unsigned integer: ") + s);
    c.master_seed = v;
  }
}

inline std::string config_hash(const ExperimentConfig& c) { return sha256_hex(to_json(c).dump()); }

// Seed of ensemble member m (its position in the architecture list).
inline std::uint64_t member_seed(std::uint64_t master, std::size_t m) {
  return derive_seed(master, SeedStage::kMember, m);
}

inline std::uint64_t member_kmeans_seed(std::uint64_t master, std::size_t m) {
  return derive_seed(master, SeedStage::kKMeans, m);
}

// Shortest round-trip decimal form.
inline std::string num(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

// File name friendly fixed-point form, e.g. 0.7 -> "0.70".
inline std::string tag(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// Run manifest: one JSON document per run directory.

class RunManifest {
 public:
  static constexpr const char* kFileName = "manifest.json";

  explicit RunManifest(fs::path dir) : dir_(std::move(dir)) {
    const fs::path p = dir_ / kFileName;
    if (fs::exists(p)) {
      std::ifstream is(p);
      try {
        doc_ = json::parse(is);
      } catch (const json::exception& e) {
        throw FormatError(p.string() + " is not valid JSON: " + e.what());
      }
    } else {
      doc_ = {{"stages", json::object()}};
    }
  }

  const fs::path& dir() const noexcept { return dir_; }

  bool has_stage(const std::string& name) const { return doc_["stages"].contains(name); }

  const json& stage(const std::string& name) const {
    if (!has_stage(name)) throw FormatError("manifest in " + dir_.string() + " has no '" + name + "' stage; run it first");
    return doc_["stages"][name];
  }

  std::optional<ExperimentConfig> config() const {
    if (!doc_.contains("config")) return std::nullopt;
    return config_from_json(doc_["config"]);
  }

  void set_config(const ExperimentConfig& c) {
    doc_["config"] = to_json(c);
    doc_["config_hash"] = config_hash(c);
  }

  // Relative path plus checksum of a file inside the run directory.
  json file_entry(const fs::path& p) const {
    return {{"path", fs::relative(p, dir_).generic_string()}, {"sha256", sha256_file(p)}};
  }

  // Resolves a file recorded by an earlier stage and checks its checksum.
  fs::path resolve(const json& entry) const {
    const fs::path p = dir_ / entry.at("path").get<std::string>();
    if (!fs::exists(p)) throw FormatError("manifest lists missing file " + p.string());
    if (sha256_file(p) != entry.at("sha256").get<std::string>())
      throw FormatError("checksum mismatch for " + p.string());
    return p;
  }

  fs::path output(const std::string& stage_name, const std::string& key) const {
    const auto& s = stage(stage_name);
    if (!s["outputs"].contains(key)) throw FormatError("stage '" + stage_name + "' recorded no output '" + key + "'");
    return resolve(s["outputs"][key]);
  }

  // A fresh dataset invalidates everything recorded after it.
  void clear_stages() { doc_["stages"] = json::object(); }

  void record(const std::string& name, json stage_doc) {
    doc_["stages"][name] = std::move(stage_doc);
    save();
  }

  void save() const {
    fs::create_directories(dir_);
    std::ofstream os(dir_ / kFileName, std::ios::trunc);
    os << doc_.dump(2) << "\n";
    if (!os) throw FormatError("cannot write manifest in " + dir_.string());
  }

 private:
  fs::path dir_;
  json doc_;
};

namespace detail {

class StageTimer {
 public:
  StageTimer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_;
};

inline std::ofstream open_csv(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::trunc);
  if (!os) throw FormatError("cannot open " + p.string() + " for writing");
  return os;
}

inline std::vector<double> take(const std::vector<double>& v, std::span<const std::size_t> idx) {
  std::vector<double> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(v[i]);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// In-memory building blocks shared by the stages.

struct Member {
  std::size_t index = 0;  // position in the architecture list
  std::string label;
  std::uint64_t seed = 0;
  std::optional<NetworkFile> net;  // empty when training failed
  std::string failure;
};

// Trains every architecture of the config, or only the labeled subset.
// A diverged member is kept with its failure message and no network.
inline std::vector<Member> train_ensemble(const LandscapeDataset& ds, const FourWaySplit& split, const ExperimentConfig& cfg,
                                          const std::vector<std::string>& only, std::ostream& log) {
  const auto specs = cfg.architectures(ds.pixel_count());
  const std::set<std::string> wanted(only.begin(), only.end());
  for (const auto& w : wanted) {
    const bool found = std::any_of(specs.begin(), specs.end(), [&](const ArchitectureSpec& s) { return s.label() == w; });
    if (!found) throw ParameterError("no ensemble member labeled '" + w + "'");
  }
  const Matrix ae = pixel_matrix(ds, split.ae_train);
  const Matrix val = pixel_matrix(ds, split.ae_val);
  std::vector<Member> out;
  for (std::size_t m = 0; m < specs.size(); ++m) {
    Member mem;
    mem.index = m;
    mem.label = specs[m].label();
    if (!wanted.empty() && !wanted.contains(mem.label)) continue;
    mem.seed = member_seed(cfg.master_seed, m);
    TrainConfig tc = cfg.train;
    tc.seed = mem.seed;
    detail::StageTimer timer;
    try {
      TrainResult r = train(ae, val, specs[m], tc);
      log << "  member " << mem.label << ": train mse " << r.report.train_mse.back() << ", val mse "
          << r.report.val_mse.back() << " (" << std::fixed << std::setprecision(1) << timer.seconds() << " s)\n"
          << std::defaultfloat << std::setprecision(6);
      mem.net = NetworkFile{std::move(r.params), tc, std::move(r.report)};
    } catch (const NumericError& e) {
      mem.failure = e.what();
      log << "  member " << mem.label << ": FAILED (" << e.what() << ")\n";
    }
    out.push_back(std::move(mem));
  }
  return out;
}

struct MemberOutcome {
  std::size_t index = 0;
  std::string label;
  std::uint64_t kmeans_seed = 0;
  std::optional<ElbowResult> elbow;
  ClusterModel model;
  AccuracyCurve curve;
  FeatureTable table;
  double transition = 0.0;
};

struct EnsembleOutcome {
  std::vector<MemberOutcome> members;
  std::optional<ElbowResult> elbow;  // normalized ensemble average
  std::size_t k = 2;
  AccuracyCurve curve;  // ensemble mean, smoothed when configured
  MctPrediction prediction;
};

// Features of every trained member, k-means on km_train, confusion sweep on
// perf over the dataset's own time grid, then the ensemble average and T'.
inline EnsembleOutcome evaluate_ensemble(const std::vector<Member>& members, const LandscapeDataset& ds,
                                         const FourWaySplit& split, const ExperimentConfig& cfg, std::ostream& log) {
  for (std::size_t i = 1; i < ds.times.size(); ++i)
    if (!(ds.times[i] > ds.times[i - 1])) throw FormatError("dataset times are not strictly increasing");
  std::vector<std::size_t> all(ds.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto perf_times = detail::take(ds.times, split.perf);

  EnsembleOutcome out;
  std::vector<Matrix> features;
  for (const auto& mem : members) {
    if (!mem.net) continue;
    const auto& p = mem.net->params;
    if (p.spec.input_dim != ds.pixel_count())
      throw ShapeError("member " + mem.label + " expects " + std::to_string(p.spec.input_dim) + " pixels, dataset has " +
                       std::to_string(ds.pixel_count()));
    MemberOutcome mo;
    mo.index = mem.index;
    mo.label = mem.label;
    mo.kmeans_seed = member_kmeans_seed(cfg.master_seed, mem.index);
    features.push_back(encode_rows(p, ds, all));
    if (!cfg.k) {
      const Matrix km = gather_rows(features.back(), split.km_train);
      const std::size_t k_max = std::min<std::size_t>(cfg.k_max, static_cast<std::size_t>(km.rows()));
      mo.elbow = elbow_scan(km, cfg.k_min, k_max, mo.kmeans_seed);
    }
    out.members.push_back(std::move(mo));
  }
  if (out.members.empty()) throw AnalysisError("no trained ensemble members to evaluate");

  if (cfg.k) {
    out.k = *cfg.k;
  } else {
    std::vector<ElbowResult> curves;
    for (const auto& mo : out.members) curves.push_back(*mo.elbow);
    out.elbow = average_normalized_elbow(curves);
    out.k = out.elbow->k_star;
    log << "  elbow selects k = " << out.k << "\n";
  }
  if (out.k != 2)
    throw AnalysisError("the confusion sweep needs k = 2 clusters but k = " + std::to_string(out.k) +
                        " was selected; rerun with --k 2 to force it");

  std::vector<AccuracyCurve> curves;
  for (std::size_t m = 0; m < out.members.size(); ++m) {
    auto& mo = out.members[m];
    const Matrix km = gather_rows(features[m], split.km_train);
    mo.model = kmeans_fit(km, out.k, mo.kmeans_seed);
    const auto all_labels = to_binary_labels(kmeans_assign(mo.model, features[m]));
    std::vector<Label> perf_labels;
    for (auto i : split.perf) perf_labels.push_back(all_labels[i]);
    mo.curve = sweep(perf_labels, perf_times, ds.times);
    mo.table.times = ds.times;
    mo.table.features = std::move(features[m]);
    mo.table.clusters = all_labels;
    mo.transition = feature_transition_time(mo.table, cfg.window_trim);
    curves.push_back(mo.curve);
  }
  out.curve = ensemble_average(curves);
  if (cfg.smoothing_width > 1) out.curve = moving_average(out.curve, cfg.smoothing_width);
  out.prediction = predict_mct(out.curve, cfg.window_trim);
  return out;
}

inline void write_curve_csv(const fs::path& p, const AccuracyCurve& c) {
  auto os = detail::open_csv(p);
  os << "t_aux,accuracy_mean,accuracy_std,n_members\n";
  for (std::size_t i = 0; i < c.t_aux.size(); ++i)
    os << num(c.t_aux[i]) << "," << num(c.accuracy[i]) << "," << num(c.accuracy_std.empty() ? 0.0 : c.accuracy_std[i])
       << "," << c.n_members << "\n";
}

inline void write_feature_table_csv(const fs::path& p, const FeatureTable& t) {
  auto os = detail::open_csv(p);
  os << "T";
  for (Eigen::Index f = 0; f < t.features.cols(); ++f) os << ",f" << (f + 1);
  os << ",cluster\n";
  for (std::size_t i = 0; i < t.times.size(); ++i) {
    os << num(t.times[i]);
    for (Eigen::Index f = 0; f < t.features.cols(); ++f) os << "," << num(t.features(static_cast<Eigen::Index>(i), f));
    os << "," << static_cast<int>(t.clusters[i]) << "\n";
  }
}

// Writes the CSV set of one evaluated ensemble into `out_dir` and returns
// the files written, keyed by a short name.
inline std::map<std::string, fs::path> write_ensemble_outputs(const EnsembleOutcome& e, const fs::path& out_dir) {
  std::map<std::string, fs::path> files;
  files["accuracy_curve"] = out_dir / "accuracy_curve.csv";
  write_curve_csv(files["accuracy_curve"], e.curve);

  files["member_accuracy"] = out_dir / "member_accuracy.csv";
  {
    auto os = detail::open_csv(files["member_accuracy"]);
    os << "t_aux";
    for (const auto& m : e.members) os << "," << m.label;
    os << "\n";
    for (std::size_t i = 0; i < e.curve.t_aux.size(); ++i) {
      os << num(e.curve.t_aux[i]);
      for (const auto& m : e.members) os << "," << num(m.curve.accuracy[i]);
      os << "\n";
    }
  }
  if (e.elbow) {
    files["elbow"] = out_dir / "elbow.csv";
    auto os = detail::open_csv(files["elbow"]);
    os << "k,normalized_inertia_mean";
    for (const auto& m : e.members) os << "," << m.label;
    os << "\n";
    for (std::size_t i = 0; i < e.elbow->ks.size(); ++i) {
      os << e.elbow->ks[i] << "," << num(e.elbow->inertia[i]);
      for (const auto& m : e.members) os << "," << num(m.elbow->inertia[i]);
      os << "\n";
    }
  }
  files["members"] = out_dir / "member_summary.csv";
  {
    auto os = detail::open_csv(files["members"]);
    os << "member,kmeans_seed,k,inertia,feature_transition_T\n";
    for (const auto& m : e.members)
      os << m.label << "," << m.kmeans_seed << "," << m.model.k << "," << num(m.model.inertia) << "," << num(m.transition)
         << "\n";
  }
  for (const auto& m : e.members) {
    const std::string key = "features_" + m.label;
    files[key] = out_dir / "features" / (m.label + "_features_T.csv");
    write_feature_table_csv(files[key], m.table);
  }
  return files;
}

// ---------------------------------------------------------------------------
// Stages. Each reads its inputs through the run manifest and records its
// outputs there with checksums.

inline fs::path cmd_generate(const ExperimentConfig& cfg, const fs::path& dir, std::ostream& log) {
  cfg.validate();
  detail::StageTimer timer;
  const ControlProblem problem = cfg.problem();
  const auto times = cfg.times();
  log << "generating " << times.size() << " landscapes (" << cfg.mesh().pixel_count() << " pixels each)\n";
  const LandscapeDataset ds = generate_dataset(problem, times, cfg.mesh(), cfg.master_seed, cfg.threads);
  const fs::path path = dir / "dataset.mctl";
  save_dataset(ds, path);

  RunManifest man(dir);
  man.clear_stages();
  man.set_config(cfg);
  json stage = {{"seeds", {{"master_seed", cfg.master_seed}}},
                {"outputs", {{"dataset", man.file_entry(path)}}},
                {"landscapes", ds.size()},
                {"empirical_mct", empirical_mct(ds)},
                {"wall_seconds", timer.seconds()}};
  man.record("generate", std::move(stage));
  log << "wrote " << path.string() << "\n";
  return path;
}

inline fs::path cmd_split(const ExperimentConfig& cfg, const fs::path& dir, std::ostream& log) {
  detail::StageTimer timer;
  RunManifest man(dir);
  const fs::path ds_path = man.output("generate", "dataset");
  const std::size_t n = man.stage("generate").at("landscapes").get<std::size_t>();
  const FourWaySplit split = split_dataset(n, cfg.effective_split_seed());
  const fs::path path = dir / "split.txt";
  write_split(split, path);
  man.record("split", {{"seeds", {{"split_seed", split.seed}}},
                       {"inputs", {{"dataset", man.file_entry(ds_path)}}},
                       {"outputs", {{"split", man.file_entry(path)}}},
                       {"sizes", {split.ae_train.size(), split.km_train.size(), split.ae_val.size(), split.perf.size()}},
                       {"wall_seconds", timer.seconds()}});
  log << "split " << n << " landscapes into " << split.ae_train.size() << "/" << split.km_train.size() << "/"
      << split.ae_val.size() << "/" << split.perf.size() << "\n";
  return path;
}

inline std::vector<Member> cmd_train(const ExperimentConfig& cfg, const fs::path& dir, const std::vector<std::string>& only,
                                     std::ostream& log) {
  cfg.validate();
  detail::StageTimer timer;
  RunManifest man(dir);
  const fs::path ds_path = man.output("generate", "dataset");
  const fs::path split_path = man.output("split", "split");
  const LandscapeDataset ds = load_dataset(ds_path);
  const FourWaySplit split = read_split(split_path);
  log << "training on " << split.ae_train.size() << " landscapes, validating on " << split.ae_val.size() << "\n";
  auto members = train_ensemble(ds, split, cfg, only, log);

  json entries = json::array();
  const fs::path losses = dir / "train_losses.csv";
  auto os = detail::open_csv(losses);
  os << "member,epoch,train_loss,train_mse,val_mse\n";
  std::size_t ok = 0;
  for (const auto& m : members) {
    json e = {{"label", m.label}, {"index", m.index}, {"seed", m.seed}};
    if (m.net) {
      const fs::path p = dir / "networks" / (m.label + ".mctn");
      save_network(*m.net, p);
      e["status"] = "ok";
      e["file"] = man.file_entry(p);
      e["final_train_mse"] = m.net->report.train_mse.back();
      e["final_val_mse"] = m.net->report.val_mse.back();
      const auto& r = m.net->report;
      for (std::size_t ep = 0; ep < r.train_loss.size(); ++ep)
        os << m.label << "," << (ep + 1) << "," << num(r.train_loss[ep]) << "," << num(r.train_mse[ep]) << ","
           << num(r.val_mse[ep]) << "\n";
      ++ok;
    } else {
      e["status"] = "failed";
      e["error"] = m.failure;
    }
    entries.push_back(std::move(e));
  }
  os.close();
  man.record("train", {{"seeds", {{"master_seed", cfg.master_seed}}},
                       {"inputs", {{"dataset", man.file_entry(ds_path)}, {"split", man.file_entry(split_path)}}},
                       {"outputs", {{"train_losses", man.file_entry(losses)}}},
                       {"members", entries},
                       {"train_config", train_config_to_json(cfg.train)},
                       {"wall_seconds", timer.seconds()}});
  if (ok == 0) throw NumericError("every ensemble member failed to train");
  log << ok << " of " << members.size() << " members trained\n";
  return members;
}

// Trained members recorded in a run's manifest, loaded and checksum-verified.
inline std::vector<Member> load_members(const RunManifest& man) {
  std::vector<Member> out;
  for (const auto& e : man.stage("train").at("members")) {
    Member m;
    m.index = e.at("index").get<std::size_t>();
    m.label = e.at("label").get<std::string>();
    m.seed = e.at("seed").get<std::uint64_t>();
    if (e.at("status") == "ok") {
      const fs::path p = man.dir() / e.at("file").at("path").get<std::string>();
      if (!fs::exists(p)) throw FormatError("trained member " + m.label + " is missing: " + p.string());
      m.net = load_network(man.resolve(e.at("file")));
    } else {
      m.failure = e.value("error", "failed");
    }
    out.push_back(std::move(m));
  }
  return out;
}

struct PredictOptions {
  std::optional<fs::path> dataset;        // predict on another dataset (transfer mode)
  std::optional<fs::path> networks_from;  // run directory holding the trained members
  std::optional<fs::path> out_dir;        // defaults to <dir>/predict
};

inline double analytic_reference(const ControlProblem& p) {
  return p.model_id == ModelId::kLandauZener ? analytic_mct(p.delta) : std::numeric_limits<double>::quiet_NaN();
}

inline EnsembleOutcome cmd_predict(const ExperimentConfig& cfg, const fs::path& dir, const PredictOptions& opt,
                                   std::ostream& log) {
  cfg.validate();
  detail::StageTimer timer;
  RunManifest man(dir);
  const RunManifest net_man(opt.networks_from.value_or(dir));
  const auto members = load_members(net_man);

  const bool transfer = opt.dataset.has_value();
  const fs::path out_dir = opt.out_dir.value_or(dir / "predict");
  fs::path ds_path;
  FourWaySplit split;
  json inputs;
  if (transfer) {
    ds_path = *opt.dataset;
    if (!fs::exists(ds_path)) throw FormatError("dataset not found: " + ds_path.string());
    inputs["dataset"] = {{"path", fs::absolute(ds_path).generic_string()}, {"sha256", sha256_file(ds_path)}};
  } else {
    ds_path = man.output("generate", "dataset");
    const fs::path split_path = man.output("split", "split");
    split = read_split(split_path);
    inputs["dataset"] = man.file_entry(ds_path);
    inputs["split"] = man.file_entry(split_path);
  }
  const LandscapeDataset ds = load_dataset(ds_path);
  if (transfer) {
    split = split_dataset(ds.size(), cfg.effective_split_seed());
    write_split(split, out_dir / "split.txt");
  }
  inputs["networks_run"] = fs::absolute(net_man.dir()).generic_string();

  log << "evaluating " << members.size() << " members on " << ds.size() << " landscapes"
      << (transfer ? " (transfer)" : "") << "\n";
  EnsembleOutcome e = evaluate_ensemble(members, ds, split, cfg, log);
  auto files = write_ensemble_outputs(e, out_dir);

  const double analytic = analytic_reference(ds.problem);
  const double empirical = empirical_mct(ds);
  const auto& pred = e.prediction;
  json seeds = {{"master_seed", cfg.master_seed}, {"split_seed", split.seed}};
  json kseeds = json::object();
  for (const auto& m : e.members) kseeds[m.label] = m.kmeans_seed;
  seeds["kmeans"] = kseeds;
  json doc = {{"t_prime", pred.t_prime},
              {"window", {pred.t_lo, pred.t_hi}},
              {"grid_step", ds.times.size() > 1 ? ds.times[1] - ds.times[0] : 0.0},
              {"n_members", e.curve.n_members},
              {"k", e.k},
              {"k_source", cfg.k ? "fixed" : "elbow"},
              {"model_id", std::string(to_string(ds.problem.model_id))},
              {"delta", ds.problem.delta},
              {"empirical_mct", empirical},
              {"transfer", transfer},
              {"seeds", seeds}};
  doc["analytic_mct"] = std::isnan(analytic) ? json(nullptr) : json(analytic);
  json models = json::object();
  for (const auto& m : e.members) {
    json centroids = json::array();
    for (Eigen::Index r = 0; r < m.model.centroids.rows(); ++r)
      centroids.push_back(std::vector<double>(m.model.centroids.row(r).begin(), m.model.centroids.row(r).end()));
    models[m.label] = {{"k", m.model.k}, {"centroids", centroids}, {"inertia", m.model.inertia}, {"seed", m.model.seed}};
  }
  doc["cluster_models"] = models;
  files["prediction"] = out_dir / "prediction.json";
  {
    auto os = detail::open_csv(files["prediction"]);
    os << doc.dump(2) << "\n";
  }

  json outputs = json::object();
  for (const auto& [k, p] : files) outputs[k] = man.file_entry(p);
  json failed = json::array();
  for (const auto& m : members)
    if (!m.net) failed.push_back(m.label);
  man.record(transfer ? "predict_transfer" : "predict",
             {{"seeds", seeds}, {"inputs", inputs}, {"outputs", outputs}, {"k", e.k},
              {"elbow_skipped", cfg.k.has_value()}, {"excluded_members", failed}, {"t_prime", pred.t_prime},
              {"wall_seconds", timer.seconds()}});

  log << "T' = " << pred.t_prime << "  (window [" << pred.t_lo << ", " << pred.t_hi << "], " << e.curve.n_members
      << " members, k = " << e.k << ")\n";
  if (!std::isnan(analytic)) log << "analytic MCT pi/delta = " << analytic << "\n";
  log << "empirical MCT (dataset max fidelity) = " << empirical << "\n";
  return e;
}

struct WeightsOutcome {
  ImportanceMap map;
  PixelMask mask;
  double threshold = 0.0;
  double rotation_jaccard = 0.0;
};

inline WeightsOutcome cmd_weights(const ExperimentConfig& cfg, const fs::path& dir, std::ostream& log) {
  cfg.validate();
  detail::StageTimer timer;
  RunManifest man(dir);
  const auto members = load_members(man);
  const fs::path ds_path = man.output("generate", "dataset");
  const LandscapeDataset ds = load_dataset(ds_path);
  std::vector<NetworkParams> nets;
  std::vector<std::string> labels;
  for (const auto& m : members)
    if (m.net) {
      if (m.net->params.spec.input_dim != ds.pixel_count()) throw ShapeError("member " + m.label + " does not match the dataset");
      nets.push_back(m.net->params);
      labels.push_back(m.label);
    }
  if (nets.empty()) throw AnalysisError("no trained members");

  WeightsOutcome w;
  w.threshold = cfg.effective_threshold();
  w.map = weight_importance(nets, cfg.aggregation);
  w.mask = select_pixels(w.map, w.threshold);
  w.rotation_jaccard = rotation_jaccard(w.mask);

  const fs::path out_dir = dir / "weights";
  std::map<std::string, fs::path> files;
  files["weights_map"] = out_dir / "weights_map.csv";
  {
    auto os = detail::open_csv(files["weights_map"]);
    os << "pixel_index";
    for (std::size_t k = 0; k < ds.mesh.segments(); ++k) os << ",eps" << (k + 1);
    os << ",importance\n";
    for (std::size_t j = 0; j < w.map.mean_map.size(); ++j) {
      os << j;
      for (double e : ds.mesh.point(j)) os << "," << num(e);
      os << "," << num(w.map.mean_map[j]) << "\n";
    }
  }
  files["weights_per_architecture"] = out_dir / "weights_per_architecture.csv";
  {
    auto os = detail::open_csv(files["weights_per_architecture"]);
    os << "pixel_index";
    for (const auto& l : labels) os << "," << l;
    os << "\n";
    for (std::size_t j = 0; j < w.map.mean_map.size(); ++j) {
      os << j;
      for (const auto& a : w.map.per_architecture) os << "," << num(a[j]);
      os << "\n";
    }
  }
  for (double t : cfg.overlay_times) {
    const auto it = std::min_element(ds.times.begin(), ds.times.end(),
                                     [&](double a, double b) { return std::abs(a - t) < std::abs(b - t); });
    const auto i = static_cast<std::size_t>(it - ds.times.begin());
    const std::string key = "overlay_T" + tag(ds.times[i]);
    files[key] = out_dir / ("mask_overlay_T" + tag(ds.times[i]) + ".csv");
    auto os = detail::open_csv(files[key]);
    overlay_mask(os, ds.landscapes[i], w.mask);
  }
  json summary = {{"threshold", w.threshold},
                  {"aggregation", to_string(cfg.aggregation)},
                  {"selected_pixels", mask_count(w.mask)},
                  {"pixel_count", w.mask.size()},
                  {"rotation_jaccard", w.rotation_jaccard},
                  {"members", labels}};
  files["summary"] = out_dir / "weights.json";
  {
    auto os = detail::open_csv(files["summary"]);
    os << summary.dump(2) << "\n";
  }
  json outputs = json::object();
  for (const auto& [k, p] : files) outputs[k] = man.file_entry(p);
  man.record("weights", {{"inputs", {{"dataset", man.file_entry(ds_path)}}},
                         {"outputs", outputs},
                         {"threshold", w.threshold},
                         {"selected_pixels", mask_count(w.mask)},
                         {"rotation_jaccard", w.rotation_jaccard},
                         {"wall_seconds", timer.seconds()}});
  log << "threshold " << w.threshold << " selects " << mask_count(w.mask) << " of " << w.mask.size()
      << " pixels; rotation Jaccard " << w.rotation_jaccard << "\n";
  return w;
}

struct LongtimeRow {
  double delta = 0.0;
  PeriodComparison periods;
  AccuracyCurve curve;
  std::vector<double> center_fidelity;
};

// Time ranges of the long-time study for one delta.
struct LongtimeRanges {
  std::vector<double> train_times;
  std::vector<double> long_times;
};

inline LongtimeRanges longtime_ranges(const ExperimentConfig& cfg, double delta) {
  const double s = cfg.longtime_scale ? 1.0 / delta : 1.0;
  LongtimeRanges r;
  r.train_times = time_grid(cfg.t_start * s, cfg.t_end * s, cfg.t_step * s);
  r.long_times = time_grid(cfg.longtime_t_step * s, cfg.longtime_t_end * s, cfg.longtime_t_step * s);
  return r;
}

// For each delta: train the ensemble on the regular time range, evaluate it
// on the long range, and compare the accuracy period with twice the period
// of F(eps = 0)(T).
inline std::vector<LongtimeRow> cmd_longtime(const ExperimentConfig& cfg, const fs::path& dir, std::ostream& log) {
  cfg.validate();
  if (cfg.model() != ModelId::kLandauZener) throw ParameterError("the long-time study needs the LZ model");
  detail::StageTimer timer;
  // The accuracy oscillates with twice the fidelity period 2 pi / delta;
  // refuse ranges too short for 3 of those before any training.
  for (double d : cfg.longtime_deltas) {
    const auto r = longtime_ranges(cfg, d);
    const double span = r.long_times.back() - r.long_times.front();
    const double expected = 2.0 * 2.0 * std::numbers::pi / d;
    if (3.0 * expected > span)
      throw AnalysisError("long-time range for delta=" + num(d) + " spans " + num(span) + ", fewer than 3 periods of " +
                          num(expected));
  }
  RunManifest man(dir);
  man.set_config(cfg);
  const fs::path out_dir = dir / "longtime";
  std::vector<LongtimeRow> rows;
  json outputs = json::object();
  for (double d : cfg.longtime_deltas) {
    ExperimentConfig c = cfg;
    c.delta = d;
    c.k = c.k.value_or(2);
    const ControlProblem problem = c.problem();
    const auto ranges = longtime_ranges(cfg, d);
    log << "delta " << d << ": training on " << ranges.train_times.size() << " landscapes\n";
    const LandscapeDataset train_ds = generate_dataset(problem, ranges.train_times, c.mesh(), c.master_seed, c.threads);
    const FourWaySplit train_split = split_dataset(train_ds.size(), c.effective_split_seed());
    const auto members = train_ensemble(train_ds, train_split, c, {}, log);
    log << "delta " << d << ": evaluating on " << ranges.long_times.size() << " landscapes\n";
    const LandscapeDataset long_ds = generate_dataset(problem, ranges.long_times, c.mesh(), c.master_seed, c.threads);
    const FourWaySplit long_split = split_dataset(long_ds.size(), c.effective_split_seed());
    const EnsembleOutcome e = evaluate_ensemble(members, long_ds, long_split, c, log);

    LongtimeRow row;
    row.delta = d;
    row.curve = e.curve;
    row.center_fidelity = center_fidelity_curve(problem, row.curve.t_aux, c.n_ts);
    row.periods = compare_periods(problem, row.curve);
    log << "delta " << d << ": tau_accuracy " << row.periods.tau_accuracy << ", 2 tau_fidelity "
        << row.periods.two_tau_fidelity << ", ratio " << row.periods.ratio << "\n";

    const fs::path acc = out_dir / ("accuracy_delta" + tag(d) + ".csv");
    write_curve_csv(acc, row.curve);
    const fs::path fid = out_dir / ("center_fidelity_delta" + tag(d) + ".csv");
    {
      auto os = detail::open_csv(fid);
      os << "T,fidelity\n";
      for (std::size_t i = 0; i < row.curve.t_aux.size(); ++i)
        os << num(row.curve.t_aux[i]) << "," << num(row.center_fidelity[i]) << "\n";
    }
    outputs["accuracy_delta" + tag(d)] = man.file_entry(acc);
    outputs["center_fidelity_delta" + tag(d)] = man.file_entry(fid);
    rows.push_back(std::move(row));
  }
  const fs::path periods = out_dir / "longtime_periods.csv";
  {
    auto os = detail::open_csv(periods);
    os << "delta,tau_accuracy,two_tau_fidelity,ratio\n";
    for (const auto& r : rows)
      os << num(r.delta) << "," << num(r.periods.tau_accuracy) << "," << num(r.periods.two_tau_fidelity) << ","
         << num(r.periods.ratio) << "\n";
  }
  outputs["longtime_periods"] = man.file_entry(periods);
  man.record("longtime", {{"seeds", {{"master_seed", cfg.master_seed}, {"split_seed", cfg.effective_split_seed()}}},
                          {"outputs", outputs},
                          {"wall_seconds", timer.seconds()}});
  return rows;
}

inline OracleReport cmd_oracle_check(const ExperimentConfig& cfg, std::ostream& log) {
  const OracleReport r = run_oracle_suite(cfg.master_seed);
  log << "draws " << r.draws << "\n"
      << "max |F - Rabi|           " << r.rabi_error << "\n"
      << "max unitarity defect     " << r.unitarity_error << "\n"
      << "max |F(0) - sin^2|       " << r.zero_control_error << "\n"
      << "max landscape asymmetry  " << r.symmetry_error << "\n"
      << (r.passed() ? "oracle check passed" : "oracle check FAILED") << "\n";
  return r;
}

}  // namespace mctnet
