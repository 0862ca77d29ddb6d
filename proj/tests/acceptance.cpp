// Acceptance run: one PASS/FAIL line per criterion. Smoke scale by default,
// MCT_PROFILE=full for the full-scale settings. Tolerances do not depend on
// the profile. Stage logs go to <work>/acceptance.log.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "mctnet/mctnet.hpp"

namespace {

namespace fs = std::filesystem;
using namespace mctnet;
using std::numbers::pi;

// criterion 1
constexpr double kOracleTol = 1e-10;
constexpr double kUnitarityTol = 1e-12;
constexpr double kOracleSeconds = 10.0;
// criterion 2
constexpr double kGradRelTol = 1e-4;
constexpr double kGradSeconds = 30.0;
// criterion 3
constexpr double kTPrimeLo = 2.6;
constexpr double kTPrimeHi = 3.5;
constexpr double kSmokeSeconds = 5 * 60.0;
constexpr double kFullSeconds = 45 * 60.0;
// criterion 4
constexpr double kSweepRelTol = 0.25;
// criterion 6
constexpr double kMseRegularized = 1e-1;
constexpr double kMseUnregularized = 1e-2;
// criterion 7
constexpr double kTransitionHalfWidth = 0.5;
constexpr double kTransitionFraction = 0.75;  // 30 of 40
// criterion 8
constexpr double kTransferRelTol = 0.25;
// criterion 9
constexpr double kMinimumLo = 7.5;
constexpr double kMinimumHi = 8.7;
constexpr double kMinimumHalfWidth = 1.0;  // neighbourhood the minimum must dominate
constexpr double kRatioLo = 0.85;
constexpr double kRatioHi = 1.15;
// criterion 10
constexpr double kGlzEmpirical = 5.31;
constexpr double kGlzTol = 0.02;
constexpr double kGlzReportOnly = 0.2;
constexpr double kGlzSlack = 0.5;
// criterion 11
constexpr double kNts3Lo = 1.0;
constexpr double kNts3Hi = 10.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

class Acceptance {
 public:
  Acceptance(ExperimentConfig base, bool full, fs::path work)
      : base_(std::move(base)), full_(full), work_(std::move(work)), log_(work_ / "acceptance.log") {}

  int run() {
    std::cout << "acceptance profile: " << (full_ ? "full" : "smoke") << ", work dir " << work_.string() << std::endl;
    report(1, "oracle suite", [&] { return oracle(); });
    report(2, "gradient check", [&] { return gradients(); });
    report(3, "LZ delta=1 T' reproduction", [&] { return lz_reproduction(); });
    report(4, "delta sweep", [&] { return delta_sweep(); });
    report(5, "elbow selects k=2", [&] { return elbow(); });
    report(6, "training losses", [&] { return losses(); });
    report(7, "feature transition near pi", [&] { return transition(); });
    report(8, "transfer from delta=0.7", [&] { return transfer(); });
    report(9, "long-time oscillation", [&] { return longtime(); });
    report(10, "generalized LZ", [&] { return generalized(); });
    report(11, "N_ts=3 completion", [&] { return three_segments(); });
    report(12, "determinism", [&] { return determinism(); });
    std::cout << failures_ << " of 12 criteria failed" << std::endl;
    return failures_ == 0 ? 0 : 1;
  }

 private:
  void report(int n, const std::string& name, const std::function<Outcome()>& body) {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    log_ << "=== criterion " << n << ": " << name << std::endl;
    try {
      o = body();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    if (!o.pass) ++failures_;
    std::cout << "criterion " << n << " " << (o.pass ? "PASS" : "FAIL") << " " << name << ": " << o.detail << " ["
              << fmt(seconds_since(t0), 3) << " s]" << std::endl;
  }

  // generate, split, train and predict in dir; returns the ensemble outcome
  EnsembleOutcome pipeline(const ExperimentConfig& cfg, const fs::path& dir) {
    fs::remove_all(dir);
    cmd_generate(cfg, dir, log_);
    cmd_split(cfg, dir, log_);
    cmd_train(cfg, dir, {}, log_);
    return cmd_predict(cfg, dir, {}, log_);
  }

  // The main LZ run is shared by criteria 3, 5, 6 and 7.
  void ensure_main() {
    if (main_done_) return;
    main_done_ = true;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      main_ = pipeline(base_, work_ / "lz");
    } catch (const AnalysisError& e) {
      // elbow disagreed; keep going with k fixed so later criteria still run
      main_error_ = e.what();
      ExperimentConfig c = base_;
      c.k = 2;
      main_ = cmd_predict(c, work_ / "lz", {}, log_);
    }
    main_seconds_ = seconds_since(t0);
  }

  Outcome oracle() {
    const auto t0 = std::chrono::steady_clock::now();
    const OracleReport r = run_oracle_suite(base_.master_seed, 1000, 100);
    const double s = seconds_since(t0);
    const bool ok = r.passed(kOracleTol, kUnitarityTol) && s < kOracleSeconds;
    return {ok, "rabi " + fmt(r.rabi_error) + ", unitarity " + fmt(r.unitarity_error) + ", zero-control " +
                    fmt(r.zero_control_error) + ", symmetry " + fmt(r.symmetry_error)};
  }

  static double grad_check(const ArchitectureSpec& spec, std::uint64_t seed) {
    NetworkParams p = init_network(spec, seed);
    SplitMix64 rng(seed + 7);
    for (auto& l : p.layers)
      for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = rng.uniform(-0.3, 0.3);
    Matrix x(6, static_cast<Eigen::Index>(spec.input_dim));
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform();
    const double alpha = 0.005;
    const NetworkParams g = gradient(p, x, alpha);
    const double h = 1e-6;
    double worst = 0.0;
    for (std::size_t l = 0; l < kLayerCount; ++l) {
      auto probe = [&](double* v, double analytic) {
        const double keep = *v;
        *v = keep + h;
        const double up = loss(p, x, alpha);
        *v = keep - h;
        const double down = loss(p, x, alpha);
        *v = keep;
        const double num = (up - down) / (2 * h);
        worst = std::max(worst, std::abs(analytic - num) / std::max(std::abs(analytic) + std::abs(num), 1e-8));
      };
      for (Eigen::Index i = 0; i < p.layers[l].weights.size(); ++i)
        probe(p.layers[l].weights.data() + i, g.layers[l].weights.data()[i]);
      for (Eigen::Index i = 0; i < p.layers[l].bias.size(); ++i) probe(p.layers[l].bias.data() + i, g.layers[l].bias[i]);
    }
    return worst;
  }

  Outcome gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    const std::vector<ArchitectureSpec> shapes{{5, 3, 2}, {12, 7, 4}, {30, 10, 3}};
    for (std::size_t i = 0; i < shapes.size(); ++i) worst = std::max(worst, grad_check(shapes[i], 100 + i));
    const double s = seconds_since(t0);
    return {worst < kGradRelTol && s < kGradSeconds, "max relative error " + fmt(worst) + " over 3 shapes"};
  }

  Outcome lz_reproduction() {
    ensure_main();
    const double t = main_.prediction.t_prime;
    const double limit = full_ ? kFullSeconds : kSmokeSeconds;
    const bool ok = t >= kTPrimeLo && t <= kTPrimeHi && main_seconds_ < limit;
    return {ok, "T' = " + fmt(t) + " (analytic " + fmt(pi) + "), pipeline " + fmt(main_seconds_, 3) + " s of " +
                    fmt(limit, 4) + " s allowed"};
  }

  ExperimentConfig sweep_config(double delta) const {
    ExperimentConfig c = base_;
    c.delta = delta;
    c.t_end = std::max(10.0, 2 * pi / delta + 4);
    c.k = 2;
    return c;
  }

  Outcome delta_sweep() {
    bool ok = true;
    std::string detail;
    for (double d : {0.5, 0.7, 1.0, 1.5}) {
      const auto e = pipeline(sweep_config(d), work_ / ("sweep_" + tag(d)));
      const double ref = pi / d;
      const double rel = std::abs(e.prediction.t_prime - ref) / ref;
      ok = ok && rel <= kSweepRelTol;
      detail += "delta " + fmt(d, 2) + ": T' " + fmt(e.prediction.t_prime) + " vs " + fmt(ref) + " (" + fmt(100 * rel, 3) +
                "%); ";
    }
    return {ok, detail};
  }

  Outcome elbow() {
    ensure_main();
    if (!main_error_.empty()) return {false, main_error_};
    if (!main_.elbow) return {false, "no elbow scan was run"};
    return {main_.elbow->k_star == 2, "ensemble elbow k* = " + std::to_string(main_.elbow->k_star)};
  }

  Outcome losses() {
    ensure_main();
    const RunManifest man(work_ / "lz");
    const auto members = load_members(man);
    double worst = 0.0;
    std::size_t converged = 0;
    for (const auto& m : members)
      if (m.net) {
        worst = std::max(worst, m.net->report.train_mse.back());
        ++converged;
      }
    // designated member: the first architecture, retrained without L2
    const LandscapeDataset ds = load_dataset(man.output("generate", "dataset"));
    const FourWaySplit split = read_split(man.output("split", "split"));
    const auto spec = base_.architectures(ds.pixel_count()).front();
    TrainConfig tc = base_.train;
    tc.l2_alpha = 0.0;
    tc.seed = member_seed(base_.master_seed, 0);
    const auto r = train(pixel_matrix(ds, split.ae_train), pixel_matrix(ds, split.ae_val), spec, tc);
    const double plain = r.report.train_mse.back();
    log_ << "  alpha=0 retrain of " << spec.label() << ": train mse " << plain << std::endl;
    const bool ok = converged > 0 && worst < kMseRegularized && plain < kMseUnregularized;
    return {ok, "max final train MSE " + fmt(worst) + " over " + std::to_string(converged) + " members; " + spec.label() +
                    " with alpha=0: " + fmt(plain)};
  }

  Outcome transition() {
    ensure_main();
    std::size_t near = 0;
    std::string ts;
    for (const auto& m : main_.members) {
      if (std::abs(m.transition - pi) <= kTransitionHalfWidth) ++near;
      ts += (ts.empty() ? "" : " ") + fmt(m.transition, 3);
    }
    const auto need = static_cast<std::size_t>(std::ceil(kTransitionFraction * static_cast<double>(main_.members.size())));
    return {near >= need, std::to_string(near) + " of " + std::to_string(main_.members.size()) + " within pi +- 0.5 (need " +
                              std::to_string(need) + "); transitions " + ts};
  }

  Outcome transfer() {
    // reuses the delta sweep runs: networks from 0.7, datasets from 0.5 and 1.0
    const fs::path source = work_ / "sweep_0.70";
    if (!fs::exists(source / "manifest.json")) pipeline(sweep_config(0.7), source);
    bool ok = true;
    std::string detail;
    for (double d : {0.5, 1.0}) {
      const fs::path target = work_ / ("sweep_" + tag(d));
      if (!fs::exists(target / "dataset.mctl")) pipeline(sweep_config(d), target);
      PredictOptions opt;
      opt.dataset = target / "dataset.mctl";
      opt.out_dir = source / ("transfer_" + tag(d));
      const auto e = cmd_predict(sweep_config(0.7), source, opt, log_);
      const double ref = pi / d;
      const double rel = std::abs(e.prediction.t_prime - ref) / ref;
      ok = ok && rel <= kTransferRelTol;
      detail += "delta " + fmt(d, 2) + ": T' " + fmt(e.prediction.t_prime) + " vs " + fmt(ref) + " (" + fmt(100 * rel, 3) +
                "%); ";
    }
    return {ok, detail};
  }

  static bool local_minimum_in(const AccuracyCurve& c, double lo, double hi, double half, double* where) {
    for (std::size_t i = 0; i < c.t_aux.size(); ++i) {
      const double t = c.t_aux[i];
      if (t < lo || t > hi) continue;
      bool is_min = true;
      for (std::size_t j = 0; j < c.t_aux.size() && is_min; ++j)
        if (std::abs(c.t_aux[j] - t) <= half && c.accuracy[j] < c.accuracy[i]) is_min = false;
      if (is_min) {
        *where = t;
        return true;
      }
    }
    return false;
  }

  Outcome longtime() {
    ExperimentConfig c = base_;
    c.longtime_deltas = {0.5, 0.7, 1.0};
    const fs::path dir = work_ / "longtime";
    fs::remove_all(dir);
    const auto rows = cmd_longtime(c, dir, log_);
    bool ok = true;
    std::string detail;
    for (const auto& r : rows) {
      const bool in = r.periods.ratio >= kRatioLo && r.periods.ratio <= kRatioHi;
      ok = ok && in;
      detail += "delta " + fmt(r.delta, 2) + " ratio " + fmt(r.periods.ratio) + "; ";
      if (std::abs(r.delta - 1.0) < 1e-12) {
        double where = 0.0;
        const bool found = local_minimum_in(r.curve, kMinimumLo, kMinimumHi, kMinimumHalfWidth, &where);
        ok = ok && found;
        detail += found ? "delta 1 minimum at " + fmt(where) + "; " : "no delta 1 minimum in [7.5, 8.7]; ";
      }
    }
    return {ok, detail};
  }

  Outcome generalized() {
    ExperimentConfig c = base_;
    c.model_id = "GENERALIZED_LZ3";
    c.k = 2;
    // the reference value belongs to the 100x100 mesh on the 0.01 T grid
    ExperimentConfig ref = c;
    ref.eps_count = 100;
    const auto scan = scan_empirical_mct(ref.problem(), time_grid(0.01, 10.0, 0.01), ref.mesh());
    const auto e = pipeline(c, work_ / "glz");
    const double t = e.prediction.t_prime;
    const bool scan_ok = std::abs(scan.first - kGlzEmpirical) <= kGlzTol;
    const bool report_only = std::abs(scan.first - kGlzEmpirical) > kGlzReportOnly;
    const bool pred_ok = std::isfinite(t) && t <= scan.first + kGlzSlack;
    std::string detail = "empirical MCT " + fmt(scan.first) + " (max F " + fmt(scan.second, 6) + "), T' " + fmt(t);
    if (report_only) return {true, detail + " (report only: empirical scan far from reference)"};
    return {scan_ok && pred_ok, detail};
  }

  Outcome three_segments() {
    ExperimentConfig c = base_;
    c.n_ts = 3;
    c.k = 2;
    const auto e = pipeline(c, work_ / "nts3");
    const double t = e.prediction.t_prime;
    return {t > kNts3Lo && t < kNts3Hi, "T' = " + fmt(t) + " on " + std::to_string(c.mesh().pixel_count()) + " pixels"};
  }

  static std::map<std::string, std::string> csv_bytes(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& f : fs::recursive_directory_iterator(dir))
      if (f.is_regular_file() && f.path().extension() == ".csv") {
        std::ifstream is(f.path(), std::ios::binary);
        std::ostringstream ss;
        ss << is.rdbuf();
        out[fs::relative(f.path(), dir).generic_string()] = ss.str();
      }
    return out;
  }

  Outcome determinism() {
    // always the smoke profile of criterion 3
    const ExperimentConfig c = smoke_profile();
    fs::path first = work_ / "lz";
    if (full_) {
      first = work_ / "determinism_a";
      pipeline(c, first);
    }
    const fs::path second = work_ / "determinism_b";
    try {
      pipeline(c, second);
    } catch (const AnalysisError&) {
      ExperimentConfig k2 = c;
      k2.k = 2;
      cmd_predict(k2, second, {}, log_);
    }
    const auto a = csv_bytes(first);
    const auto b = csv_bytes(second);
    std::size_t same = 0;
    for (const auto& [k, v] : a)
      if (b.contains(k) && b.at(k) == v) ++same;
    const bool ok = !a.empty() && a.size() == b.size() && same == a.size();
    return {ok, std::to_string(same) + " of " + std::to_string(a.size()) + " CSV files byte-identical"};
  }

  ExperimentConfig base_;
  bool full_;
  fs::path work_;
  std::ofstream log_;
  int failures_ = 0;
  bool main_done_ = false;
  EnsembleOutcome main_;
  std::string main_error_;
  double main_seconds_ = 0.0;
};

}  // namespace

int main() {
  const char* profile = std::getenv("MCT_PROFILE");
  const bool full = profile && std::string(profile) == "full";
  ExperimentConfig cfg = full ? ExperimentConfig{} : smoke_profile();
  apply_env_overrides(cfg);
  const char* dir = std::getenv("MCT_ACCEPTANCE_DIR");
  const fs::path work = dir ? fs::path(dir) : fs::current_path() / "acceptance_runs";
  fs::create_directories(work);
  try {
    return Acceptance(cfg, full, work).run();
  } catch (const std::exception& e) {
    std::cerr << "acceptance aborted: " << e.what() << "\n";
    return 2;
  }
}
