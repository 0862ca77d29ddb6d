#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "mctnet/introspection.hpp"

using namespace mctnet;
using std::numbers::pi;

namespace {

NetworkParams with_first_layer(const Matrix& w) {
  auto p = zero_network({static_cast<std::size_t>(w.rows()), static_cast<std::size_t>(w.cols()), 1});
  p.layers[0].weights = w;
  return p;
}

}  // namespace

TEST(WeightImportance, EqualWeightsGiveOnes) {
  const std::vector<NetworkParams> ens{with_first_layer(Matrix::Constant(6, 3, 0.2)),
                                       with_first_layer(Matrix::Constant(6, 3, -4.0))};
  const auto m = weight_importance(ens);
  for (double v : m.mean_map) EXPECT_DOUBLE_EQ(v, 1.0);
  EXPECT_EQ(m.per_architecture.size(), 2u);
}

TEST(WeightImportance, DominantColumn) {
  Matrix w = Matrix::Constant(5, 4, 0.1);
  w.row(2).setConstant(-1.0);
  const std::vector<NetworkParams> ens{with_first_layer(w)};
  const auto m = weight_importance(ens);
  EXPECT_DOUBLE_EQ(m.mean_map[2], 1.0);
  EXPECT_DOUBLE_EQ(m.mean_map[0], 0.1);
  const auto mask = select_pixels(m, 0.5);
  EXPECT_EQ(mask_count(mask), 1u);
  EXPECT_EQ(mask[2], 1);
}

TEST(WeightImportance, ScaleInvariantPerMember) {
  SplitMix64 rng(1);
  Matrix w(8, 3);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-1, 1);
  const std::vector<NetworkParams> a{with_first_layer(w)};
  const std::vector<NetworkParams> b{with_first_layer(37.5 * w)};
  const auto ma = weight_importance(a);
  const auto mb = weight_importance(b);
  for (std::size_t j = 0; j < 8; ++j) {
    EXPECT_NEAR(ma.mean_map[j], mb.mean_map[j], 1e-15);
    EXPECT_GE(ma.mean_map[j], 0.0);
    EXPECT_LE(ma.mean_map[j], 1.0);
  }
}

TEST(WeightImportance, Errors) {
  EXPECT_THROW(weight_importance(std::vector<NetworkParams>{}), ParameterError);
  const std::vector<NetworkParams> zero{with_first_layer(Matrix::Zero(4, 2))};
  EXPECT_THROW(weight_importance(zero), AnalysisError);
  const std::vector<NetworkParams> mixed{with_first_layer(Matrix::Ones(4, 2)), with_first_layer(Matrix::Ones(5, 2))};
  EXPECT_THROW(weight_importance(mixed), ShapeError);
}

TEST(SelectPixels, MonotoneInThreshold) {
  SplitMix64 rng(2);
  ImportanceMap m;
  for (int i = 0; i < 200; ++i) m.mean_map.push_back(rng.uniform());
  std::size_t prev = m.mean_map.size() + 1;
  for (double th = 0.0; th <= 1.0; th += 0.05) {
    const auto c = mask_count(select_pixels(m, th));
    EXPECT_LE(c, prev);
    prev = c;
  }
  EXPECT_EQ(mask_count(select_pixels(m, 0.0)), m.mean_map.size());
  EXPECT_THROW(select_pixels(m, 1.01), ParameterError);
  EXPECT_THROW(select_pixels(m, -0.1), ParameterError);
}

TEST(RotationJaccard, Cases) {
  EXPECT_EQ(rotation_jaccard(PixelMask{0, 0, 0, 0}), 1.0);
  EXPECT_EQ(rotation_jaccard(PixelMask{1, 0, 0, 1}), 1.0);
  EXPECT_EQ(rotation_jaccard(PixelMask{1, 0, 0, 0}), 0.0);
  EXPECT_DOUBLE_EQ(rotation_jaccard(PixelMask{1, 1, 0, 1}), 0.5);
}

TEST(OverlayMask, Columns) {
  const auto p = build_problem(ModelId::kLandauZener, 1.0);
  const auto l = generate_landscape(p, 3.0, default_mesh(2, 3));
  PixelMask mask(9, 0);
  mask[4] = 1;
  std::ostringstream os;
  overlay_mask(os, l, mask);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "eps1,eps2,fidelity,selected");
  int rows = 0;
  while (std::getline(is, line)) {
    ++rows;
    EXPECT_EQ(line.back(), rows == 5 ? '1' : '0');
  }
  EXPECT_EQ(rows, 9);
  EXPECT_THROW(overlay_mask(os, l, PixelMask(8, 0)), ShapeError);
}

TEST(FeatureTrajectories, SortedAndConsistent) {
  const auto p = build_problem(ModelId::kLandauZener, 1.0);
  auto ds = generate_dataset(p, std::vector<double>{0.5, 1.0, 2.0, 3.0}, default_mesh(2, 4));
  std::swap(ds.landscapes[0], ds.landscapes[3]);  // stored out of T order
  const auto net = init_network({16, 6, 2}, 3);
  const Matrix feats = encode_rows(net, ds, std::vector<std::size_t>{0, 1, 2, 3});
  const auto model = kmeans_fit(feats, 2, 1);
  const auto t = feature_trajectories(net, model, ds);
  EXPECT_EQ(t.times, (std::vector<double>{0.5, 1.0, 2.0, 3.0}));
  EXPECT_EQ(t.features.row(0), feats.row(3));
  EXPECT_EQ(t.features.row(3), feats.row(0));
  ClusterModel wrong = model;
  wrong.centroids = Matrix::Zero(2, 3);
  EXPECT_THROW(feature_trajectories(net, wrong, ds), ShapeError);
}

TEST(FeatureTransition, StepSequence) {
  FeatureTable t;
  for (int i = 1; i <= 100; ++i) {
    t.times.push_back(0.1 * i);
    t.clusters.push_back(i <= 40 ? 1 : 0);
  }
  EXPECT_NEAR(feature_transition_time(t), 4.1, 1e-12);
  t.clusters[0] = 2;
  EXPECT_THROW(feature_transition_time(t), AnalysisError);
}

TEST(CenterFidelity, IsSinSquared) {
  const auto p = build_problem(ModelId::kLandauZener, 1.0);
  const auto t = time_grid(0.01, 20.0, 0.01);
  const auto f = center_fidelity_curve(p, t);
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_NEAR(f[i], std::pow(std::sin(t[i] / 2), 2), 1e-10);
  EXPECT_THROW(center_fidelity_curve(build_problem(ModelId::kGeneralizedLZ3, 1, 1, 1), t), ParameterError);
}

TEST(EstimatePeriod, KnownSignals) {
  const auto t = time_grid(0.02, 40.0, 0.02);
  std::vector<double> s2(t.size()), c(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    s2[i] = std::pow(std::sin(t[i] / 2), 2);
    c[i] = std::cos(t[i]);
  }
  EXPECT_NEAR(estimate_period(t, s2).period, 2 * pi, 0.01 * 2 * pi);
  EXPECT_NEAR(estimate_period(t, c).period, 2 * pi, 0.01 * 2 * pi);
}

TEST(EstimatePeriod, Errors) {
  const auto t = time_grid(0.1, 10.0, 0.1);
  EXPECT_THROW(estimate_period(t, std::vector<double>(t.size(), 0.7)), AnalysisError);
  std::vector<double> slow(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) slow[i] = std::cos(2 * pi * t[i] / 8.0);
  EXPECT_THROW(estimate_period(t, slow), AnalysisError);
  EXPECT_THROW(estimate_period(t, std::vector<double>(3, 0.0)), ShapeError);
}

TEST(ComparePeriods, SyntheticAccuracy) {
  // accuracy that repeats with period 4 pi matches twice the fidelity period at delta 1
  const auto p = build_problem(ModelId::kLandauZener, 1.0);
  AccuracyCurve c;
  c.t_aux = time_grid(0.05, 49.9, 0.05);
  for (double t : c.t_aux) c.accuracy.push_back(0.75 + 0.2 * std::cos(t / 2));
  const auto r = compare_periods(p, c);
  EXPECT_NEAR(r.two_tau_fidelity, 4 * pi, 0.02 * 4 * pi);
  EXPECT_NEAR(r.ratio, 1.0, 0.02);
}

TEST(ComparePeriods, HalfDeltaDoublesFidelityPeriod) {
  const auto p = build_problem(ModelId::kLandauZener, 0.5);
  const auto t = time_grid(0.1, 99.8, 0.1);
  const auto f = center_fidelity_curve(p, t);
  EXPECT_NEAR(estimate_period(t, f).period, 4 * pi, 0.01 * 4 * pi);
}
