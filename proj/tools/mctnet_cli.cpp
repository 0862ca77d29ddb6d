// mctnet: command line front end for the landscape / autoencoder / confusion pipeline.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mctnet/mctnet.hpp"

namespace {

namespace fs = std::filesystem;
using mctnet::ExperimentConfig;

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

// Flags that mirror ExperimentConfig fields. Only flags given on the
// command line override the base config.
struct ConfigFlags {
  std::optional<std::string> profile;
  std::optional<std::string> config_file;
  std::optional<std::string> model;
  std::optional<double> delta, delta_a, delta_b;
  std::optional<std::size_t> initial, target;
  std::optional<std::size_t> n_ts, eps_count, extra_axis_count;
  std::optional<double> eps_min, eps_max, t_start, t_end, t_step;
  std::optional<std::uint64_t> seed, split_seed;
  std::vector<std::size_t> n_hidden, n_features;
  std::optional<int> epochs, batch_size;
  std::optional<double> learning_rate, alpha;
  std::optional<bool> regularize_output;
  std::optional<std::size_t> k_min, k_max;
  std::optional<double> trim;
  std::optional<std::size_t> smoothing;
  std::optional<std::string> aggregation;
  std::vector<double> overlay_times;
  std::optional<unsigned> threads;

  void add(CLI::App& app) {
    app.add_option("--profile", profile, "Start from a preset: full (default) or smoke")->check(CLI::IsMember({"full", "smoke"}));
    app.add_option("--config", config_file, "JSON config document");
    app.add_option("--model", model, "LZ or GENERALIZED_LZ3");
    app.add_option("--delta", delta, "Energy gap");
    app.add_option("--delta-a", delta_a, "Generalized LZ coupling A");
    app.add_option("--delta-b", delta_b, "Generalized LZ coupling B");
    app.add_option("--initial", initial, "Initial basis state index");
    app.add_option("--target", target, "Target basis state index");
    app.add_option("--n-ts", n_ts, "Number of control segments");
    app.add_option("--eps-min", eps_min, "Control mesh lower bound");
    app.add_option("--eps-max", eps_max, "Control mesh upper bound");
    app.add_option("--eps-count", eps_count, "Mesh points on the first two axes");
    app.add_option("--extra-axis-count", extra_axis_count, "Mesh points on axes beyond the second");
    app.add_option("--t-start", t_start, "First total time");
    app.add_option("--t-end", t_end, "Last total time");
    app.add_option("--t-step", t_step, "Total time step");
    app.add_option("--seed", seed, "Master seed (MCT_SEED overrides)");
    app.add_option("--split-seed", split_seed, "Seed of the four-way split");
    app.add_option("--n-hidden", n_hidden, "Hidden widths of the ensemble");
    app.add_option("--n-features", n_features, "Feature widths of the ensemble");
    app.add_option("--epochs", epochs, "Training epochs");
    app.add_option("--batch-size", batch_size, "Minibatch size");
    app.add_option("--learning-rate", learning_rate, "Adam learning rate");
    app.add_option("--alpha", alpha, "L2 regularization strength");
    app.add_option("--regularize-output", regularize_output, "Apply L2 to the output layer too");
    app.add_option("--k-min", k_min, "Smallest k of the elbow scan");
    app.add_option("--k-max", k_max, "Largest k of the elbow scan");
    app.add_option("--trim", trim, "Fraction of the T_aux grid dropped at each end before the argmax");
    app.add_option("--smoothing", smoothing, "Odd moving-average width of the reported curve (1 = off)");
    app.add_option("--aggregation", aggregation, "Node aggregation of the weight map: mean or sum");
    app.add_option("--overlay-times", overlay_times, "Total times of the mask overlays");
    app.add_option("--threads", threads, "Worker threads for landscape generation (0 = all cores)");
  }

  ExperimentConfig build(const fs::path& dir) const {
    ExperimentConfig c;
    if (profile) {
      c = *profile == "smoke" ? mctnet::smoke_profile() : ExperimentConfig{};
    } else if (fs::exists(dir / mctnet::RunManifest::kFileName)) {
      if (auto stored = mctnet::RunManifest(dir).config()) c = *stored;
    }
    if (config_file) c = mctnet::load_config(*config_file, c);
    auto set = [](auto& dst, const auto& src) {
      if (src) dst = *src;
    };
    set(c.model_id, model);
    set(c.delta, delta);
    set(c.delta_a, delta_a);
    set(c.delta_b, delta_b);
    if (initial) c.initial_index = initial;
    if (target) c.target_index = target;
    set(c.n_ts, n_ts);
    set(c.eps_min, eps_min);
    set(c.eps_max, eps_max);
    set(c.eps_count, eps_count);
    set(c.extra_axis_count, extra_axis_count);
    set(c.t_start, t_start);
    set(c.t_end, t_end);
    set(c.t_step, t_step);
    set(c.master_seed, seed);
    if (split_seed) c.split_seed = split_seed;
    if (!n_hidden.empty()) c.n_hidden = n_hidden;
    if (!n_features.empty()) c.n_features = n_features;
    set(c.train.epochs, epochs);
    set(c.train.batch_size, batch_size);
    set(c.train.learning_rate, learning_rate);
    set(c.train.l2_alpha, alpha);
    set(c.train.regularize_output, regularize_output);
    set(c.k_min, k_min);
    set(c.k_max, k_max);
    set(c.window_trim, trim);
    set(c.smoothing_width, smoothing);
    if (aggregation) c.aggregation = mctnet::aggregation_from_string(*aggregation);
    if (!overlay_times.empty()) c.overlay_times = overlay_times;
    set(c.threads, threads);
    mctnet::apply_env_overrides(c);
    return c;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Minimum control time estimation from fidelity landscapes"};
  app.require_subcommand(1);
  std::string dir = "run";
  app.add_option("-d,--dir", dir, "Run directory");
  ConfigFlags flags;
  flags.add(app);

  auto* generate = app.add_subcommand("generate", "Generate the landscape dataset")->fallthrough();
  auto* split = app.add_subcommand("split", "Split the dataset into the four index sets")->fallthrough();

  auto* train = app.add_subcommand("train", "Train the autoencoder ensemble")->fallthrough();
  std::vector<std::string> members;
  train->add_option("--members", members, "Only train these members, e.g. 190x40");

  auto* predict = app.add_subcommand("predict", "Cluster, sweep and estimate T'")->fallthrough();
  std::optional<std::size_t> k;
  std::optional<std::string> dataset, networks_from, out_dir;
  predict->add_option("--k", k, "Use this k instead of the elbow choice");
  predict->add_option("--dataset", dataset, "Predict on another dataset file (transfer mode)");
  predict->add_option("--networks-from", networks_from, "Run directory holding the trained members");
  predict->add_option("--out", out_dir, "Output directory");

  auto* weights = app.add_subcommand("weights", "First-layer weight importance and pixel masks")->fallthrough();
  std::optional<double> threshold;
  weights->add_option("--threshold", threshold, "Importance threshold in [0, 1]");

  auto* longtime = app.add_subcommand("longtime", "Long-time oscillation study")->fallthrough();
  std::vector<double> deltas;
  std::optional<double> lt_end, lt_step;
  std::optional<bool> lt_scale;
  longtime->add_option("--deltas", deltas, "Energy gaps to study");
  longtime->add_option("--t-end", lt_end, "Last total time of the long range");
  longtime->add_option("--t-step", lt_step, "Total time step of the long range");
  longtime->add_option("--scale", lt_scale, "Divide the time ranges by delta");

  auto* oracle = app.add_subcommand("oracle-check", "Check the dynamics against closed-form oracles")->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    ExperimentConfig cfg = flags.build(dir);
    if (k) cfg.k = k;
    if (threshold) cfg.threshold = threshold;
    if (!deltas.empty()) cfg.longtime_deltas = deltas;
    if (lt_end) cfg.longtime_t_end = *lt_end;
    if (lt_step) cfg.longtime_t_step = *lt_step;
    if (lt_scale) cfg.longtime_scale = *lt_scale;
    cfg.validate();

    std::ostream& log = std::cout;
    if (generate->parsed()) {
      mctnet::cmd_generate(cfg, dir, log);
    } else if (split->parsed()) {
      mctnet::cmd_split(cfg, dir, log);
    } else if (train->parsed()) {
      mctnet::cmd_train(cfg, dir, members, log);
    } else if (predict->parsed()) {
      mctnet::PredictOptions opt;
      if (dataset) opt.dataset = *dataset;
      if (networks_from) opt.networks_from = *networks_from;
      if (out_dir) opt.out_dir = *out_dir;
      mctnet::cmd_predict(cfg, dir, opt, log);
    } else if (weights->parsed()) {
      mctnet::cmd_weights(cfg, dir, log);
    } else if (longtime->parsed()) {
      mctnet::cmd_longtime(cfg, dir, log);
    } else if (oracle->parsed()) {
      if (!mctnet::cmd_oracle_check(cfg, log).passed()) return kNumeric;
    }
    return kOk;
  } catch (const mctnet::ParameterError& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help();
    return kUsage;
  } catch (const mctnet::FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const mctnet::ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const mctnet::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumeric;
  } catch (const mctnet::AnalysisError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumeric;
  }
}
