#include <cmath>
#include <cstdint>
#include <numbers>

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include "aerloc/counter_rng.hpp"
#include "aerloc/ekf.hpp"

using namespace aerloc;

namespace {

Mat3 random_spd(const CounterRng& rng, std::uint64_t t, double scale) {
  Mat3 a;
  for (int i = 0; i < 9; ++i) a(i / 3, i % 3) = rng.normal(t, static_cast<std::uint64_t>(i));
  return scale * (a * a.transpose() + 1e-3 * Mat3::Identity());
}

double min_eig(const Mat3& m) { return Eigen::SelfAdjointEigenSolver<Mat3>(m).eigenvalues().minCoeff(); }

}  // namespace

TEST(Predict, StationaryAddsProcessNoiseOnly) {
  FilterConfig cfg;
  StateEstimate s{{1.0, 2.0, 0.3}, Vec3(0.5, 0.4, 0.01).asDiagonal(), 0.0};
  const StateEstimate p = predict(s, {0.0, 0.0, 0.0}, 0.5, cfg);
  EXPECT_EQ(p.mu, s.mu);
  EXPECT_LT((p.sigma - (s.sigma + cfg.q_base * 0.5)).norm(), 1e-15);
  EXPECT_EQ(p.timestamp, 0.5);
}

TEST(Predict, StraightLine) {
  const StateEstimate p = predict({{0.0, 0.0, 0.0}, Mat3::Identity(), 0.0}, {1.0, 0.0, 0.0}, 2.0, {});
  EXPECT_EQ(p.mu, (Pose2D{2.0, 0.0, 0.0}));
}

TEST(Predict, HeadingNorth) {
  const Pose2D q = propagate({0.0, 0.0, std::numbers::pi / 2}, 1.0, 0.1, 0.1);
  EXPECT_NEAR(q.x, 0.0, 1e-15);
  EXPECT_NEAR(q.y, 0.1, 1e-15);
  EXPECT_NEAR(q.theta, std::numbers::pi / 2 + 0.01, 1e-15);
}

TEST(Predict, RejectsNegativeDtAndNonFiniteOdometry) {
  EXPECT_THROW(predict({}, {1.0, 0.0, 0.0}, -0.1, {}), std::invalid_argument);
  EXPECT_THROW(predict({}, {NAN, 0.0, 0.0}, 0.1, {}), std::invalid_argument);
}

TEST(Predict, JacobianMatchesCentralDifferences) {
  const CounterRng rng(1, 1);
  const double h = 1e-6;
  for (std::uint64_t t = 0; t < 1000; ++t) {
    const auto [a, b] = rng.uniform2(t, 0);
    const auto [c, d] = rng.uniform2(t, 1);
    const Pose2D p{(a - 0.5) * 200.0, (b - 0.5) * 200.0, (c - 0.5) * 2.0 * std::numbers::pi};
    const double v = 20.0 * d, omega = rng.normal(t, 2) * 0.3, dt = 0.02 + 0.2 * rng.uniform(t, 3);
    const Mat3 f = motion_jacobian(p, v, dt);
    for (int j = 0; j < 3; ++j) {
      Vec3 dp = Vec3::Zero();
      dp(j) = h;
      const Vec3 plus = propagate(Pose2D::from_vec(p.vec() + dp), v, omega, dt).vec();
      const Vec3 minus = propagate(Pose2D::from_vec(p.vec() - dp), v, omega, dt).vec();
      Vec3 diff = plus - minus;
      diff(2) = wrap_angle(diff(2));
      const Vec3 col = diff / (2.0 * h);
      for (int i = 0; i < 3; ++i) ASSERT_NEAR(f(i, j), col(i), 1e-6) << t;
    }
  }
}

TEST(Update, HugeMeasurementNoiseLeavesStateUnchanged) {
  const StateEstimate s{{1.0, 2.0, 0.1}, Vec3(0.3, 0.2, 0.01).asDiagonal(), 0.0};
  const UpdateOutcome u = update(s, {1.5, 2.5, 0.12}, Mat3::Identity() * 1e12, {});
  ASSERT_EQ(u.status, UpdateStatus::kAccepted);
  EXPECT_LT((u.state.mu.vec() - s.mu.vec()).norm(), 1e-6);
  EXPECT_LT((u.state.sigma - s.sigma).norm(), 1e-6);
}

TEST(Update, EqualCovariancesAverage) {
  const StateEstimate s{{0.0, 0.0, 0.0}, Mat3::Identity(), 0.0};
  const UpdateOutcome u = update(s, {1.0, 0.0, 0.0}, Mat3::Identity(), {});
  ASSERT_EQ(u.status, UpdateStatus::kAccepted);
  EXPECT_NEAR(u.state.mu.x, 0.5, 1e-12);
  EXPECT_NEAR(u.state.mu.y, 0.0, 1e-12);
  EXPECT_NEAR(u.state.mu.theta, 0.0, 1e-12);
  EXPECT_LT((u.state.sigma - 0.5 * Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Update, JosephFormMatchesShortFormAndStaysPsd) {
  const CounterRng rng(2, 2);
  FilterConfig cfg;
  cfg.gating_threshold = 1e300;
  for (std::uint64_t t = 0; t < 1000; ++t) {
    const Mat3 p = random_spd(rng, 2 * t, 0.5);
    const Mat3 r = random_spd(rng, 2 * t + 1, 0.2);
    const StateEstimate s{{rng.normal(t, 20), rng.normal(t, 21), 0.1 * rng.normal(t, 22)}, p, 0.0};
    const Pose2D z{s.mu.x + rng.normal(t, 23), s.mu.y + rng.normal(t, 24), s.mu.theta + 0.1 * rng.normal(t, 25)};
    const UpdateOutcome u = update(s, z, r, cfg);
    ASSERT_EQ(u.status, UpdateStatus::kAccepted);
    const Mat3 k = p * (p + r).inverse();
    const Mat3 short_form = (Mat3::Identity() - k) * p;
    ASSERT_LT((u.state.sigma - short_form).cwiseAbs().maxCoeff(), 1e-9) << t;
    ASSERT_EQ(u.state.sigma, u.state.sigma.transpose());
    ASSERT_GT(min_eig(u.state.sigma), -1e-9);
  }
}

TEST(Update, MeasurementAtMeanKeepsMeanAndShrinksVariance) {
  const StateEstimate s{{3.0, -1.0, 2.0}, Vec3(0.4, 0.9, 0.02).asDiagonal(), 0.0};
  const UpdateOutcome u = update(s, s.mu, Vec3(0.1, 0.1, 0.01).asDiagonal(), {});
  EXPECT_EQ(u.state.mu, s.mu);
  for (int i = 0; i < 3; ++i) EXPECT_LE(u.state.sigma(i, i), s.sigma(i, i));
}

TEST(Update, HeadingInnovationIsWrapped) {
  const StateEstimate s{{0.0, 0.0, 3.1}, Mat3::Identity() * 0.1, 0.0};
  const Mat3 r = Mat3::Identity() * 0.1;
  const UpdateOutcome a = update(s, {0.1, 0.0, -3.1}, r, {});
  const UpdateOutcome b = update(s, {0.1, 0.0, -3.1 + 2.0 * std::numbers::pi}, r, {});
  ASSERT_EQ(a.status, UpdateStatus::kAccepted);
  EXPECT_NEAR(a.innovation(2), 2.0 * std::numbers::pi - 6.2, 1e-12);
  EXPECT_LT((a.state.mu.vec() - b.state.mu.vec()).norm(), 1e-12);
}

TEST(Update, OutliersAreGated) {
  const StateEstimate s{{0.0, 0.0, 0.0}, Mat3::Identity() * 0.01, 0.0};
  const UpdateOutcome u = update(s, {5.0, 0.0, 0.0}, Mat3::Identity() * 0.01, {});
  EXPECT_EQ(u.status, UpdateStatus::kGated);
  EXPECT_EQ(u.state.mu, s.mu);
  EXPECT_EQ(u.state.sigma, s.sigma);
  EXPECT_NEAR(u.mahalanobis2, 25.0 / 0.02, 1e-9);
}

TEST(Update, SingularInnovationCovarianceIsReported) {
  const StateEstimate s{{0.0, 0.0, 0.0}, Mat3::Zero(), 0.0};
  const UpdateOutcome u = update(s, {0.1, 0.0, 0.0}, Mat3::Zero(), {});
  EXPECT_EQ(u.status, UpdateStatus::kSingular);
  EXPECT_EQ(u.state.mu, s.mu);
}

TEST(Filter, InterleavedPredictUpdateStaysPsd) {
  const CounterRng rng(3, 3);
  FilterConfig cfg;
  PoseFilter f({{0.0, 0.0, 0.0}, cfg.init_sigma, 0.0}, cfg);
  double t = 0.0;
  for (std::uint64_t i = 0; i < 10000; ++i) {
    t += 0.02 + 0.1 * rng.uniform(i, 0);
    if (rng.uniform(i, 1) < 0.7) {
      f.predict_to({8.0 + rng.normal(i, 2), 0.2 * rng.normal(i, 3), t}, t);
    } else {
      const Pose2D z{f.state().mu.x + 0.1 * rng.normal(i, 4), f.state().mu.y + 0.1 * rng.normal(i, 5),
                     f.state().mu.theta + 0.005 * rng.normal(i, 6)};
      f.apply_fix(z, random_spd(rng, i + 1000000, 0.005), t);
    }
    const Mat3& s = f.state().sigma;
    ASSERT_EQ(s, s.transpose()) << i;
    ASSERT_GT(min_eig(s), -1e-9) << i;
  }
  EXPECT_GT(f.accepted(), 0u);
}

TEST(Filter, StaleFixesAreRejectedAndCounted) {
  FilterConfig cfg;
  cfg.min_updates_settled = 2;
  PoseFilter f({{0.0, 0.0, 0.0}, cfg.init_sigma, 0.0}, cfg);
  f.predict_to({1.0, 0.0, 0.0}, 1.0);
  EXPECT_EQ(f.apply_fix({1.0, 0.0, 0.0}, Mat3::Identity() * 0.01, 1.0).status,
            PoseFilter::FixStatus::kAccepted);
  EXPECT_FALSE(f.settled());
  EXPECT_EQ(f.apply_fix({1.0, 0.0, 0.0}, Mat3::Identity() * 0.01, 0.5).status,
            PoseFilter::FixStatus::kStale);
  EXPECT_EQ(f.stale(), 1u);
  EXPECT_EQ(f.apply_fix({1.0, 0.0, 0.0}, Mat3::Identity() * 0.01, 1.0).status,
            PoseFilter::FixStatus::kAccepted);
  EXPECT_TRUE(f.settled());
  EXPECT_EQ(f.apply_fix({50.0, 0.0, 0.0}, Mat3::Identity() * 0.01, 1.0).status,
            PoseFilter::FixStatus::kGated);
  EXPECT_EQ(f.gated(), 1u);
}

TEST(SearchWindow, ThreeSigmaPerAxis) {
  WindowLimits lim;
  lim.max_xy = 100.0;
  lim.max_theta = 10.0;
  const SearchSpec s = search_window({{}, Vec3(1.0, 4.0, 0.01).asDiagonal(), 0.0}, lim);
  EXPECT_DOUBLE_EQ(s.x_range, 3.0);
  EXPECT_DOUBLE_EQ(s.y_range, 6.0);
  EXPECT_DOUBLE_EQ(s.theta_range, 0.3);
  EXPECT_EQ(s.x_step, lim.x_step);
}

TEST(SearchWindow, ClampedToLimits) {
  const WindowLimits lim;
  const SearchSpec tiny = search_window({{}, Mat3::Identity() * 1e-12, 0.0}, lim);
  EXPECT_EQ(tiny.x_range, lim.min_xy);
  EXPECT_EQ(tiny.y_range, lim.min_xy);
  EXPECT_EQ(tiny.theta_range, lim.theta_step);
  const SearchSpec wide = search_window({{}, FilterConfig{}.init_sigma * 100.0, 0.0}, lim);
  EXPECT_EQ(wide.x_range, lim.max_xy);
  EXPECT_EQ(wide.theta_range, lim.max_theta);
}

TEST(SearchWindow, CoarseningBoundsNodeCount) {
  WindowLimits lim;
  lim.max_nodes_per_axis = 15;
  for (double sigma : {0.01, 0.1, 0.3, 0.5, 1.0, 2.0}) {
    const SearchSpec s = search_window({{}, Vec3(sigma, sigma, 1e-3 * sigma).asDiagonal(), 0.0}, lim);
    const SearchGrid g = make_grid(s);
    EXPECT_LE(g.xs.size(), 15u) << sigma;
    EXPECT_LE(g.thetas.size(), 15u) << sigma;
    const double mult = s.x_step / lim.x_step;
    EXPECT_NEAR(mult, std::round(mult), 1e-12);
    EXPECT_GE(g.xs.back() + s.x_step, s.x_range);  // lattice spans the window
  }
}

TEST(Initialize, FromGpsFix) {
  const GlobalFrame frame(42.2995, -83.699);
  const FilterConfig cfg;
  const StateEstimate a = initialize({42.2995, -83.699, 0.25}, frame, cfg);
  EXPECT_EQ(a.mu, (Pose2D{0.0, 0.0, 0.25}));
  EXPECT_EQ(a.sigma, cfg.init_sigma);
  const StateEstimate b = initialize({42.2995 + 10.0 / frame.meters_per_degree_lat, -83.699, 0.0}, frame, cfg);
  EXPECT_NEAR(b.mu.x, 0.0, 1e-9);
  EXPECT_NEAR(b.mu.y, 10.0, 1e-9);
  EXPECT_THROW(initialize({95.0, 0.0, 0.0}, frame, cfg), std::invalid_argument);
  EXPECT_THROW(initialize({0.0, 0.0, NAN}, frame, cfg), std::invalid_argument);
}
