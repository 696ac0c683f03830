#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "epical/posterior.hpp"
#include "epical/presets.hpp"
#include "oracles.hpp"

using namespace epical;

namespace {

Density1D gaussian_density(double mu, double sigma, std::vector<double> grid) {
  std::vector<double> m;
  for (double x : grid) m.push_back(oracle::normal_pdf(x, mu, sigma));
  return Density1D(std::move(grid), std::move(m));
}

TimeSeries noiseless_sir() {
  auto m = sir_model();
  return integrate(*m, std::vector<double>{0.2, 14.0, 0.0}, std::vector<double>{0.99, 0.01, 0.0},
                   1.0, 100)
      .series;
}

TimeSeries constant_series(const std::string& label, double v, std::size_t rows) {
  std::vector<double> t(rows), x(rows, v);
  for (std::size_t i = 0; i < rows; ++i) t[i] = static_cast<double>(i);
  return TimeSeries(std::move(t), {label}, std::move(x));
}

PosteriorLog one_param_log(std::vector<std::pair<double, double>> records) {
  PosteriorLog log;
  log.names = {"beta"};
  std::size_t e = 0;
  for (auto [x, j] : records) log.add(0, e++, {x}, j);
  return log;
}

}  // namespace

TEST(Density, NormalizesToOne) {
  const Density1D d(linspace(0.0, 3.0, 31), std::vector<double>(31, 7.0));
  EXPECT_NEAR(d.integral(), 1.0, 1e-12);
  const auto g = gaussian_density(0.3, 0.7, linspace(-5.0, 5.0, 401));
  EXPECT_NEAR(g.integral(), 1.0, 1e-9);
  EXPECT_NEAR(g.mean(), 0.3, 1e-6);
  EXPECT_NEAR(g.stddev(), 0.7, 1e-4);
}

TEST(Density, RejectsBadInput) {
  EXPECT_THROW(Density1D({0.0, 1.0}, {1.0}), ShapeError);
  EXPECT_THROW(Density1D({0.0, 0.0}, {1.0, 1.0}), ShapeError);
  EXPECT_THROW(Density1D({0.0, 1.0}, {1.0, -1.0}), ValueError);
  EXPECT_THROW(Density1D({0.0, 1.0}, {0.0, 0.0}), DegenerateLikelihoods);
}

TEST(Hellinger, SelfDistanceIsZero) {
  const auto p = gaussian_density(0.0, 1.0, linspace(-6.0, 6.0, 241));
  EXPECT_EQ(hellinger(p, p), 0.0);
}

TEST(Hellinger, DisjointSupportIsOne) {
  const auto grid = linspace(0.0, 1.0, 11);
  std::vector<double> a(11, 0.0), b(11, 0.0);
  for (int i = 0; i < 5; ++i) a[i] = 1.0;
  for (int i = 6; i < 11; ++i) b[i] = 1.0;
  EXPECT_NEAR(hellinger(Density1D(grid, a), Density1D(grid, b)), 1.0, 1e-12);
}

TEST(Hellinger, UnitShiftedGaussians) {
  const auto grid = linspace(-10.0, 11.0, 4201);
  const auto p = gaussian_density(0.0, 1.0, grid), q = gaussian_density(1.0, 1.0, grid);
  const double want = 1.0 - std::exp(-1.0 / 8.0);
  EXPECT_NEAR(hellinger(p, q), want, 1e-6);
  EXPECT_EQ(hellinger(p, q), hellinger(q, p));
}

TEST(Hellinger, MismatchedGridsThrow) {
  const auto p = gaussian_density(0.0, 1.0, linspace(-5.0, 5.0, 101));
  const auto q = gaussian_density(0.0, 1.0, linspace(-5.0, 5.0, 51));
  EXPECT_THROW(hellinger(p, q), GridMismatch);
  EXPECT_LT(hellinger(p, resample(q, p.grid())), 1e-4);
}

TEST(Kde, SingleRecordGivesGaussianBump) {
  const auto log = one_param_log({{0.2, 0.0}});
  const auto d = marginal_weighted_kde(log, 0, linspace(0.0, 0.4, 401), {0.02, true});
  EXPECT_NEAR(d.integral(), 1.0, 1e-9);
  EXPECT_NEAR(d.mode(), 0.2, 1e-12);
  EXPECT_NEAR(d.mean(), 0.2, 1e-6);
  EXPECT_NEAR(d.stddev(), 0.02, 1e-4);
}

TEST(Kde, LikelihoodWeightsFollowExpMinusJ) {
  const auto log = one_param_log({{0.2, 0.0}, {0.2, std::log(2.0)}, {0.5, 1000.0}});
  const auto w = detail::likelihood_weights(log);
  EXPECT_DOUBLE_EQ(w[0], 1.0);
  EXPECT_DOUBLE_EQ(w[1], 0.5);
  EXPECT_LT(w[2], 1e-300);
}

TEST(Kde, AllZeroLikelihoodsAreDegenerate) {
  PosteriorLog log;
  log.names = {"beta"};
  log.records.push_back({0, 0, {0.2}, 1e6, 0.0});
  log.records.push_back({0, 1, {0.3}, std::numeric_limits<double>::infinity(), 0.0});
  EXPECT_THROW(marginal_weighted_kde(log, 0, linspace(0.0, 1.0, 11)), DegenerateLikelihoods);
}

TEST(Kde, PositivePriorZeroesNonpositiveNodes) {
  const auto log = one_param_log({{0.05, 0.0}});
  const auto d = marginal_weighted_kde(log, 0, linspace(-0.2, 0.3, 51), {0.05, true});
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.grid()[i] <= 0.0) {
      EXPECT_EQ(d.mass()[i], 0.0);
    }
  }
}

TEST(Conditional, FlatLikelihoodIsUniform) {
  PosteriorLog log;
  log.names = {"alpha"};
  Rng rng(3);
  for (int k = 0; k < 500; ++k) log.add(0, k, {uniform(rng, 0.0, 1.0)}, 0.25);
  const auto d = marginal_conditional(log, 0, linspace(0.01, 0.99, 50));
  for (double m : d.mass()) EXPECT_NEAR(m, d.mass().front(), 1e-12);
  EXPECT_NEAR(d.integral(), 1.0, 1e-12);
}

TEST(GridSearch, ModeWithinOneCellOfTruth) {
  const auto prob = presets::sir_problem(noiseless_sir());
  const auto post = grid_search(prob, {linspace(0.0, 1.0, 100), linspace(1.0, 30.0, 100)});
  const auto mode = post.mode();
  EXPECT_LE(std::fabs(mode[0] - 0.2), 1.0 / 99.0);
  EXPECT_LE(std::fabs(mode[1] - 14.0), 29.0 / 99.0);
  // beta = 0 lies outside the support.
  for (std::size_t k = 0; k < 100; ++k) EXPECT_EQ(post.mass()[k], 0.0);
}

TEST(GridSearch, TruthNodeIsModeWhenOnGrid) {
  // Spacings 0.01 and 0.25 put (0.2, 14) exactly on a node.
  const auto prob = presets::sir_problem(noiseless_sir());
  const auto post = grid_search(prob, {linspace(0.0, 1.0, 101), linspace(1.0, 30.0, 117)});
  const auto mode = post.mode();
  EXPECT_NEAR(mode[0], 0.2, 1e-12);
  EXPECT_NEAR(mode[1], 14.0, 1e-12);
}

TEST(GridSearch, SingleNodeIsDelta) {
  const auto prob = presets::sir_problem(noiseless_sir());
  const auto post = grid_search(prob, {{0.2}, {14.0}});
  ASSERT_EQ(post.node_count(), 1u);
  EXPECT_DOUBLE_EQ(post.mass()[0], 1.0);
  EXPECT_EQ(post.marginal(0).mode(), 0.2);
}

TEST(GridSearch, MarginalIsAxisSumOfJoint) {
  const auto prob = presets::sir_problem(synth_generate(presets::sir_reference(1)).densities());
  const auto bx = linspace(0.05, 0.6, 23), tx = linspace(2.0, 30.0, 17);
  const auto post = grid_search(prob, {bx, tx});
  const auto mb = post.marginal(0);
  double total = 0.0;
  for (std::size_t i = 0; i < bx.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < tx.size(); ++j) s += post.mass()[i * tx.size() + j] * post.volume(i * tx.size() + j);
    total += s;
    EXPECT_NEAR(mb.mass()[i] * mb.widths()[i], s, 1e-12);
  }
  EXPECT_NEAR(total, 1.0, 1e-9);
  EXPECT_NEAR(post.marginal(1).integral(), 1.0, 1e-9);
}

TEST(GridSearch, RefinementConverges) {
  // Each 2x refinement moves the marginals less than the previous one, and
  // by less than the coarse grid's relative cell size.
  const auto prob = presets::sir_problem(synth_generate(presets::sir_reference(1)).densities());
  const double b0 = 0.1, b1 = 0.4, t0 = 4.0, t1 = 30.0;
  std::vector<GridPosterior> posts;
  for (std::size_t n : {13u, 25u, 49u, 97u}) {
    posts.push_back(grid_search(prob, {linspace(b0, b1, n), linspace(t0, t1, n)}));
  }
  for (std::size_t axis = 0; axis < 2; ++axis) {
    double prev = 1.0;
    for (std::size_t k = 0; k + 1 < posts.size(); ++k) {
      const auto coarse = posts[k].marginal(axis);
      const auto fine = resample(posts[k + 1].marginal(axis), coarse.grid());
      const double d = hellinger(coarse, fine);
      const double scale = 1.0 / static_cast<double>(coarse.size() - 1);
      EXPECT_LT(d, scale) << "axis " << axis << " level " << k;
      EXPECT_LT(d, prev) << "axis " << axis << " level " << k;
      prev = d;
    }
  }
}

TEST(JointFromLog, MatchesGridOnDenseLog) {
  const auto prob = presets::sir_problem(synth_generate(presets::sir_reference(1)).densities());
  const auto bx = linspace(0.1, 0.4, 21), tx = linspace(4.0, 30.0, 21);
  PosteriorLog log;
  log.names = prob.free_names();
  Rng rng(6);
  for (int k = 0; k < 4000; ++k) {
    const std::vector<double> x{uniform(rng, 0.1, 0.4), uniform(rng, 4.0, 30.0)};
    log.add(0, k, x, prob.loss(x));
  }
  const auto grid = grid_search(prob, {bx, tx});
  const auto joint = joint_from_log(log, {bx, tx});
  for (std::size_t a = 0; a < 2; ++a) EXPECT_LT(hellinger(grid.marginal(a), joint.marginal(a)), 1e-2);
}

TEST(Predict, SingleDrawHasZeroSpread) {
  const auto prob = presets::sir_problem(noiseless_sir());
  const auto spec = PredictSpec::from_problem(prob, 100);
  const auto ens = predict(spec, {{{0.2, 14.0}, 1.0}});
  const auto& want = noiseless_sir();
  ASSERT_EQ(ens.mean.values().size(), want.values().size());
  for (std::size_t c = 0; c < want.values().size(); ++c) {
    EXPECT_EQ(ens.mean.values()[c], want.values()[c]);
    EXPECT_EQ(ens.stddev.values()[c], 0.0);
  }
}

TEST(Predict, TwoEqualDrawsAverage) {
  const auto prob = presets::sir_problem(noiseless_sir());
  const auto spec = PredictSpec::from_problem(prob, 60);
  auto m = sir_model();
  const auto a = integrate(*m, std::vector<double>{0.2, 14.0, 0.0}, prob.initial_state(), 1.0, 60).series;
  const auto b = integrate(*m, std::vector<double>{0.3, 8.0, 0.0}, prob.initial_state(), 1.0, 60).series;
  const auto ens = predict(spec, {{{0.2, 14.0}, 1.0}, {{0.3, 8.0}, 1.0}});
  for (std::size_t c = 0; c < a.values().size(); ++c) {
    const double mu = 0.5 * (a.values()[c] + b.values()[c]);
    EXPECT_NEAR(ens.mean.values()[c], mu, 1e-15);
    EXPECT_NEAR(ens.stddev.values()[c], 0.5 * std::fabs(a.values()[c] - b.values()[c]), 1e-15);
  }
}

TEST(Predict, WeightScaleInvariance) {
  const auto prob = presets::sir_problem(noiseless_sir());
  const auto spec = PredictSpec::from_problem(prob, 80);
  std::vector<WeightedDraw> d{{{0.2, 14.0}, 0.3}, {{0.25, 10.0}, 0.5}, {{0.15, 20.0}, 0.2}};
  auto scaled = d;
  for (auto& w : scaled) w.weight *= 1e6;
  const auto a = predict(spec, d), b = predict(spec, scaled);
  for (std::size_t c = 0; c < a.mean.values().size(); ++c) {
    EXPECT_NEAR(a.mean.values()[c], b.mean.values()[c], 1e-14);
    EXPECT_NEAR(a.stddev.values()[c], b.stddev.values()[c], 1e-14);
  }
}

TEST(Predict, EmptyDrawsRejected) {
  const auto prob = presets::sir_problem(noiseless_sir());
  EXPECT_THROW(predict(PredictSpec::from_problem(prob, 10), {}), ShapeError);
}

TEST(Predict, DrawsFromLogAreWeighted) {
  const auto log = one_param_log({{0.2, 0.0}, {0.3, std::log(4.0)}});
  const auto d = draws_from_log(log, 4, 1);
  ASSERT_EQ(d.size(), 4u);
  for (const auto& w : d) EXPECT_DOUBLE_EQ(w.weight, w.params[0] == 0.2 ? 1.0 : 0.25);
  for (const auto& w : draws_from_log(log, 3, 1, DrawWeighting::uniform)) EXPECT_EQ(w.weight, 1.0);
}

TEST(Residual, PerfectPredictionIsZero) {
  const auto d = noiseless_sir();
  const auto r = residual(d, d, "I", 0, d.rows());
  EXPECT_EQ(r.raw, 0.0);
  EXPECT_EQ(r.relative, 0.0);
}

TEST(Residual, ConstantOffset) {
  const auto data = constant_series("X", 2.0, 20);
  const auto pred = constant_series("X", 2.25, 20);
  const auto r = residual(pred, data, "X", 5, 15);
  EXPECT_DOUBLE_EQ(r.raw, 0.25);
  EXPECT_DOUBLE_EQ(r.relative, 0.125);
}

TEST(Residual, EmptyWindowThrows) {
  const auto d = constant_series("X", 1.0, 10);
  EXPECT_THROW(residual(d, d, "X", 4, 4), EmptyWindow);
  EXPECT_THROW(residual(d, d, "X", 0, 11), EmptyWindow);
}
