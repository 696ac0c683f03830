#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "epical/integrate.hpp"
#include "epical/models.hpp"
#include "epical/parameters.hpp"
#include "epical/timeseries.hpp"
#include "oracles.hpp"

using namespace epical;

namespace {

std::vector<double> drift_of(const Model& m, std::vector<double> y,
                             std::vector<double> p, double t = 0.0) {
  std::vector<double> out(m.state_count());
  m.drift(std::span<const double>(y), std::span<const double>(p), t,
          std::span<double>(out));
  return out;
}

// Berlin-style surrogate rates used across the SEIRD+ tests.
const std::vector<double> kSeirdRates = {0.1,  0.45, 0.18, 0.06, 0.09,
                                         0.16, 0.2,  0.08, 0.05, 0.03,
                                         0.05, 0.02, 1e-5};

std::vector<double> seird_y0() {
  std::vector<double> y(13, 0.0);
  y[SeirdPlusModel::E] = 2e-5;
  y[SeirdPlusModel::I] = 1e-5;
  y[SeirdPlusModel::S] = 1.0 - 3e-5;
  return y;
}

std::pair<std::size_t, double> peak(const TimeSeries& ts, std::size_t col) {
  std::size_t best = 0;
  for (std::size_t r = 1; r < ts.rows(); ++r) {
    if (ts.at(r, col) > ts.at(best, col)) best = r;
  }
  return {best, ts.at(best, col)};
}

}  // namespace

TEST(TimeSeries, RejectsDuplicateLabelsAndUnevenTimes) {
  EXPECT_THROW(TimeSeries({0, 1}, {"S", "S"}, {1, 1, 1, 1}), SchemaError);
  EXPECT_THROW(TimeSeries({0, 1, 3}, {"S"}, {1, 1, 1}), SchemaError);
  EXPECT_THROW(TimeSeries({0, 1}, {"S"}, {1}), ShapeError);
  EXPECT_NO_THROW(TimeSeries({0, 0.5, 1.0}, {"S"}, {1, 1, 1}));
}

TEST(Parameters, PiecewiseEntryStructure) {
  ParameterVector pv({{"a", {1.0}, {}}, {"lambda_E", {1, 2, 3}, {10, 20}}});
  EXPECT_EQ(pv.size(), 4u);
  EXPECT_EQ(pv.flat_names(),
            (std::vector<std::string>{"a", "lambda_E_0", "lambda_E_1", "lambda_E_2"}));
  EXPECT_EQ(pv.entry("lambda_E").at(9.99), 1.0);
  EXPECT_EQ(pv.entry("lambda_E").at(10.0), 2.0);
  EXPECT_EQ(pv.entry("lambda_E").at(25.0), 3.0);
  EXPECT_THROW(ParameterVector({{"b", {1, 2}, {}}}), SchemaError);
  EXPECT_THROW(ParameterVector({{"c", {0.0}, {}}}), OutOfSupport);
  auto back = ParameterVector::from_flat(pv, std::vector<double>{5, 6, 7, 8});
  EXPECT_EQ(back.entry("lambda_E").values[2], 8.0);
}

TEST(Sir, NoInfectedNoDynamics) {
  auto m = sir_model();
  auto d = drift_of(*m, {1, 0, 0}, {0.7, 3.0, 0.1});
  EXPECT_EQ(d, (std::vector<double>{0, 0, 0}));
}

TEST(Sir, HandEvaluatedDrift) {
  auto m = sir_model();
  auto d = drift_of(*m, {0.9, 0.1, 0.0}, {0.2, 14.0, 0.0});
  EXPECT_NEAR(d[0], -0.018, 1e-15);
  EXPECT_NEAR(d[1], 0.018 - 0.1 / 14.0, 1e-15);
  EXPECT_NEAR(d[1], 0.010857142857, 1e-12);
  EXPECT_NEAR(d[2], 0.1 / 14.0, 1e-15);
}

TEST(Sir, DriftSumsToZero) {
  auto m = sir_model();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 200; ++k) {
    auto d = drift_of(*m, {u(rng), u(rng), u(rng)}, {u(rng) + 1e-3, 1 + 29 * u(rng), 0.1});
    EXPECT_NEAR(d[0] + d[1] + d[2], 0.0, 1e-16);
  }
}

TEST(PerturbedSir, AddsInverseOffsetToEveryCompartment) {
  auto base = sir_model();
  auto pert = sir_perturbed_model();
  const std::vector<double> y{0.8, 0.15, 0.05};
  auto d0 = drift_of(*base, y, {0.2, 14, 0});
  auto a0 = drift_of(*pert, y, {0.2, 14, 0, 0.0});
  auto a1 = drift_of(*pert, y, {0.2, 14, 0, 1.0});
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(a0[i] - d0[i], 1.0 / 1000.0, 1e-15);
    EXPECT_NEAR(a1[i] - d0[i], 1.0 / 1001.0, 1e-15);
  }
}

TEST(PerturbedSir, AlphaDerivativeBound) {
  auto pert = sir_perturbed_model();
  for (double alpha : {0.0, 0.25, 0.5, 1.0}) {
    ad::Tape tape;
    std::vector<ad::Var> y{0.8, 0.15, 0.05};
    std::vector<ad::Var> p{0.2, 14.0, 0.0, tape.lift(alpha)};
    std::vector<ad::Var> out(3);
    pert->drift(std::span<const ad::Var>(y), std::span<const ad::Var>(p), 0.0,
                std::span<ad::Var>(out));
    for (auto& o : out) {
      const double d = tape.backward(o)[p[3]];
      EXPECT_LE(std::fabs(d), 1.0 / (1000.0 * 1000.0));
      EXPECT_NEAR(d, -1.0 / ((1000.0 + alpha) * (1000.0 + alpha)), 1e-18);
    }
  }
}

TEST(SeirdPlus, Catalog) {
  auto m = seirdplus_model();
  EXPECT_EQ(SeirdPlusModel::quarantine_rate, 10.25);
  EXPECT_EQ(m->state_count(), 13u);
  EXPECT_EQ(m->parameter_count(), 13u);
  EXPECT_FALSE(m->stochastic());
  auto pv = m->make_parameters(kSeirdRates);
  EXPECT_EQ(pv.entry("lambda_E").values.size(), 5u);
  EXPECT_EQ(pv.entry("lambda_E").breakpoints, SeirdPlusModel::berlin_breakpoints());
}

TEST(SeirdPlus, ZeroQuarantineReducesToDecay) {
  auto m = seirdplus_model();
  std::vector<double> y(13, 0.0);
  y[SeirdPlusModel::S] = 0.9;
  y[SeirdPlusModel::E] = 0.01;
  y[SeirdPlusModel::QE] = 0.004;
  auto d = drift_of(*m, y, kSeirdRates);
  EXPECT_DOUBLE_EQ(d[SeirdPlusModel::QE], -kSeirdRates[SeirdPlusModel::l_I] * 0.004);
}

TEST(SeirdPlus, ZeroStateZeroDrift) {
  auto m = seirdplus_model();
  for (auto variant : {SeirdPlusModel::Variant::transition, SeirdPlusModel::Variant::printed}) {
    auto mv = seirdplus_model(SeirdPlusModel::berlin_breakpoints(), variant);
    auto d = drift_of(*mv, std::vector<double>(13, 0.0), kSeirdRates, 40.0);
    for (double v : d) EXPECT_EQ(v, 0.0);
  }
}

TEST(SeirdPlus, ExposureFollowsSegments) {
  auto m = seirdplus_model();
  std::vector<double> y(13, 0.0);
  y[SeirdPlusModel::S] = 1.0;
  y[SeirdPlusModel::I] = 0.5;
  const double t_of[] = {0.0, 30.0, 50.0, 100.0, 200.0};
  for (int seg = 0; seg < 5; ++seg) {
    auto d = drift_of(*m, y, kSeirdRates, t_of[seg]);
    EXPECT_DOUBLE_EQ(d[SeirdPlusModel::S], -kSeirdRates[1 + seg] * 0.5);
  }
}

TEST(SeirdPlus, VariantsDifferOnlyInExposedDrain) {
  auto a = seirdplus_model(SeirdPlusModel::berlin_breakpoints(), SeirdPlusModel::Variant::transition);
  auto b = seirdplus_model(SeirdPlusModel::berlin_breakpoints(), SeirdPlusModel::Variant::printed);
  auto y = seird_y0();
  y[SeirdPlusModel::E] = 0.01;
  auto da = drift_of(*a, y, kSeirdRates, 1.0);
  auto db = drift_of(*b, y, kSeirdRates, 1.0);
  for (std::size_t i = 0; i < 13; ++i) {
    if (i == SeirdPlusModel::E) {
      EXPECT_NE(da[i], db[i]);
    } else {
      EXPECT_EQ(da[i], db[i]);
    }
  }
}

TEST(Integrate, DiseaseFreeEquilibriumIsConstant) {
  auto m = sir_model();
  auto run = integrate(*m, std::vector<double>{0.2, 14, 0}, std::vector<double>{1, 0, 0}, 1.0, 50);
  ASSERT_EQ(run.series.rows(), 51u);
  for (std::size_t r = 0; r < run.series.rows(); ++r) {
    EXPECT_EQ(run.series.at(r, 0), 1.0);
    EXPECT_EQ(run.series.at(r, 1), 0.0);
  }
}

// Coarse (dt = 1) epidemic curve against a fine-step (dt = 0.01) reference.
TEST(Integrate, CoarseCurveMatchesFineReference) {
  auto m = sir_model();
  const std::vector<double> p{0.2, 14, 0}, y0{0.99, 0.01, 0};
  auto coarse = integrate(*m, p, y0, 1.0, 100).series;
  auto fine = integrate(*m, p, y0, 0.01, 10000).series;
  auto [tc, hc] = peak(coarse, 1);
  auto [tf, hf] = peak(fine, 1);
  const double t_coarse = coarse.times()[tc], t_fine = fine.times()[tf];
  EXPECT_LT(std::fabs(t_coarse - t_fine) / t_fine, 0.05);
  EXPECT_LT(std::fabs(hc - hf) / hf, 0.05);
}

TEST(Integrate, SameSeedIsBitwiseIdentical) {
  auto m = sir_model();
  const std::vector<double> p{0.2, 14, 0.1}, y0{0.99, 0.01, 0};
  auto a = integrate(*m, p, y0, 1.0, 100, NoiseDriver(42));
  auto b = integrate(*m, p, y0, 1.0, 100, NoiseDriver(42));
  auto c = integrate(*m, p, y0, 1.0, 100, NoiseDriver(43));
  EXPECT_EQ(a.series.values(), b.series.values());
  EXPECT_NE(a.series.values(), c.series.values());
}

TEST(Integrate, NoiseClipsAndCounts) {
  auto m = sir_model();
  auto run = integrate(*m, std::vector<double>{0.2, 14, 5.0}, std::vector<double>{0.5, 0.5, 0},
                       1.0, 200, NoiseDriver(1));
  EXPECT_GT(run.stats.clip_events, 0u);
  for (double v : run.series.values()) EXPECT_GE(v, 0.0);
}

TEST(Integrate, PreconditionsAndBlowUp) {
  auto m = sir_model();
  const std::vector<double> y0{0.99, 0.01, 0};
  EXPECT_THROW(integrate(*m, std::vector<double>{0.2, 14, 0}, y0, 0.0, 10), DomainError);
  EXPECT_THROW(integrate(*m, std::vector<double>{0.2, 14, 0}, y0, 1.0, 0), DomainError);
  EXPECT_THROW(integrate(*m, std::vector<double>{0.2, 14, 0}, std::vector<double>{-0.1, 0, 0}, 1.0, 5),
               DomainError);
  EXPECT_THROW(integrate(*m, std::vector<double>{0.0, 14, 0}, y0, 1.0, 5), OutOfSupport);
  try {
    integrate(*m, std::vector<double>{1e200, 14, 0}, y0, 1.0, 50);
    FAIL() << "expected BlowUp";
  } catch (const BlowUp& e) {
    EXPECT_GE(e.step(), 1u);
    EXPECT_LE(e.step(), 50u);
  }
  ad::Tape tape;
  std::vector<ad::Var> p{tape.lift(1e200), tape.lift(14.0), 0.0};
  EXPECT_THROW(integrate_ad(*m, p, y0, 1.0, 50), BlowUp);
}

TEST(IntegrateAd, ValuesAgreeExactlyUnderSameNoise) {
  auto m = sir_model();
  const std::vector<double> p{0.2, 14, 0.1}, y0{0.99, 0.01, 0};
  const auto inc = NoiseDriver(9).increments(100, 3, 1.0);
  auto plain = integrate(*m, p, y0, 1.0, 100, inc);
  ad::Tape tape;
  auto vars = tape.lift(p);
  auto diff = integrate_ad(*m, vars, y0, 1.0, 100, inc);
  ASSERT_EQ(diff.series.values().size(), plain.series.values().size());
  double max_abs = 0.0;
  for (std::size_t i = 0; i < plain.series.values().size(); ++i) {
    max_abs = std::max(max_abs, std::fabs(diff.series.values()[i].value() -
                                          plain.series.values()[i]));
  }
  EXPECT_EQ(max_abs, 0.0);
  EXPECT_EQ(diff.stats.clip_events, plain.stats.clip_events);

  auto m2 = seirdplus_model();
  auto y = seird_y0();
  auto sp = integrate(*m2, kSeirdRates, y, 1.0, 254);
  auto sv = integrate_ad(*m2, tape.lift(kSeirdRates), y, 1.0, 254);
  EXPECT_EQ(values_of(sv.series).values(), sp.series.values());
}

TEST(IntegrateAd, EndpointSensitivityMatchesFiniteDifferences) {
  auto m = sir_model();
  const std::vector<double> y0{0.99, 0.01, 0};
  auto i_end = [&](const std::vector<double>& q) {
    return integrate(*m, std::vector<double>{q[0], q[1], 0.0}, y0, 1.0, 100).series.at(100, 1);
  };
  ad::Tape tape;
  ad::Var beta = tape.lift(0.2), tau = tape.lift(14.0);
  auto run = integrate_ad(*m, std::vector<ad::Var>{beta, tau, 0.0}, y0, 1.0, 100);
  auto g = tape.backward(run.series.at(100, 1));
  auto fd = oracle::gradient_fd(i_end, {0.2, 14.0}, 1e-5);
  EXPECT_LT(oracle::relative_error(g[beta], fd[0]), 1e-4);
  EXPECT_LT(oracle::relative_error(g[tau], fd[1]), 1e-4);
}

// Every compartment receives the same shift, and SIR flows sum to zero, so
// the total's sensitivity is exactly -3 steps dt / (1000 + alpha)^2. Flows move
// that shift between compartments, so single compartments are bounded by the
// total's magnitude rather than by steps dt / 1000^2.
TEST(IntegrateAd, AlphaSensitivityIsBounded) {
  auto m = sir_perturbed_model();
  const std::vector<double> y0{0.99, 0.01, 0};
  const std::size_t steps = 100;
  const double dt = 1.0;
  const double a = 0.5;
  ad::Tape tape;
  ad::Var alpha = tape.lift(a);
  auto run = integrate_ad(*m, std::vector<ad::Var>{0.2, 14.0, 0.0, alpha}, y0, dt, steps);
  const ad::Var total = run.series.at(steps, 0) + run.series.at(steps, 1) + run.series.at(steps, 2);
  const double exact = -3.0 * static_cast<double>(steps) * dt / ((1000.0 + a) * (1000.0 + a));
  EXPECT_LT(oracle::relative_error(tape.backward(total)[alpha], exact), 1e-10);
  const double bound = static_cast<double>(steps) * dt / (1000.0 * 1000.0);
  for (std::size_t c = 0; c < 3; ++c) {
    const double d = tape.backward(run.series.at(steps, c))[alpha];
    EXPECT_LE(std::fabs(d), 3.0 * bound) << "compartment " << c;
  }
}

TEST(Integrate, NoiselessSirConservesTotalAndIsMonotone) {
  auto m = sir_model();
  const std::vector<double> y0{0.97, 0.03, 0.0};
  auto ts = integrate(*m, std::vector<double>{0.35, 9.0, 0.0}, y0, 1.0, 200).series;
  for (std::size_t r = 0; r < ts.rows(); ++r) {
    EXPECT_LT(std::fabs(ts.at(r, 0) + ts.at(r, 1) + ts.at(r, 2) - 1.0), 1e-10);
    if (r > 0) {
      EXPECT_LE(ts.at(r, 0), ts.at(r - 1, 0));
      EXPECT_GE(ts.at(r, 2), ts.at(r - 1, 2));
    }
  }
}

TEST(Integrate, NoisySirConservesTotalPathwise) {
  auto m = sir_model();
  auto ts = integrate(*m, std::vector<double>{0.2, 14.0, 0.1}, std::vector<double>{0.99, 0.01, 0.0},
                      1.0, 100, NoiseDriver(5));
  ASSERT_EQ(ts.stats.clip_events, 0u);
  for (std::size_t r = 0; r < ts.series.rows(); ++r) {
    const auto row = ts.series.row(r);
    EXPECT_LT(std::fabs(row[0] + row[1] + row[2] - 1.0), 1e-10);
  }
}

TEST(Integrate, EulerRefinementRatios) {
  auto m = sir_model();
  const std::vector<double> p{0.2, 14.0, 0.0}, y0{0.99, 0.01, 0.0};
  const double horizon = 60.0;
  std::vector<double> endpoint;
  for (double dt : {1.0, 0.5, 0.25, 0.125, 0.0625}) {
    const auto steps = static_cast<std::size_t>(std::lround(horizon / dt));
    endpoint.push_back(integrate(*m, p, y0, dt, steps).series.at(steps, 1));
  }
  for (std::size_t k = 0; k + 2 < endpoint.size(); ++k) {
    const double ratio = std::fabs(endpoint[k] - endpoint[k + 1]) /
                         std::fabs(endpoint[k + 1] - endpoint[k + 2]);
    EXPECT_GE(ratio, 1.5);
    EXPECT_LE(ratio, 2.5);
  }
}

TEST(Integrate, SeirdPlusStaysNonnegativeForCalibratedRates) {
  auto m = seirdplus_model();
  auto run = integrate(*m, kSeirdRates, seird_y0(), 1.0, 254);
  EXPECT_EQ(run.stats.negative_events, 0u);
}

TEST(Integrate, SeirdPlusNegativeExcursionsAreReportedNotClipped) {
  auto m = seirdplus_model();
  auto rates = kSeirdRates;
  rates[SeirdPlusModel::l_CT] = 1e-3;  // tracing overshoots
  Integration run;
  try {
    run = integrate(*m, rates, seird_y0(), 1.0, 254);
  } catch (const std::exception& e) {
    FAIL() << e.what();
  }
  EXPECT_GT(run.stats.negative_events, 0u);
  const auto ct = run.series.column(SeirdPlusModel::CT);
  EXPECT_LT(*std::min_element(ct.begin(), ct.end()), 0.0);
}
