#include <gtest/gtest.h>

#include "dshm/sensing_faults.hpp"

using namespace dshm;

namespace {

ResponseRecord ten_story_record(double duration = 20.0, std::uint64_t seed = 5) {
  StructureSpec s = uniform_chain(10, 1.0, 1764.0, 0.01, duration);
  ExcitationSpec e;
  e.seed = seed;
  e.cutoff_hz = 5.0;
  return simulate_response(s, e);
}

SignalWindow gaussian_window(std::size_t n, std::uint64_t seed, std::size_t id = 1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  SignalWindow w;
  w.sensor_id = id;
  w.dt = 0.01;
  w.samples.resize(static_cast<Eigen::Index>(n));
  for (auto& v : w.samples) v = g(rng);
  return w;
}

}  // namespace

TEST(Measure, NoiseFreeEqualsDofAcceleration) {
  const ResponseRecord r = ten_story_record();
  SensorArraySpec a = one_sensor_per_story(10);
  const auto w = measure(r, a, 1, 500, 100);
  ASSERT_EQ(w.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(w[i].sensor_id, i + 1);
    EXPECT_TRUE(w[i].samples == r.acceleration.row(i).segment(100, 500).transpose());
  }
}

TEST(Measure, NoiseStdMatchesConfiguration) {
  const ResponseRecord r = ten_story_record(1000.0);
  SensorArraySpec a = one_sensor_per_story(10);
  const Eigen::VectorXd truth = r.acceleration.row(3).head(100000).transpose();
  const double target = 0.1 * rms(truth);
  a.noise_std.assign(10, target);
  const auto w = measure(r, a, 7, 100000);
  const Eigen::VectorXd err = w[3].samples - truth;
  const double sd = std::sqrt((err.array() - err.mean()).square().mean());
  EXPECT_NEAR(sd, target, 0.05 * target);
}

TEST(Measure, SameSeedIsBitIdentical) {
  const ResponseRecord r = ten_story_record();
  SensorArraySpec a = one_sensor_per_story(10);
  a.noise_std.assign(10, 0.05);
  const auto x = measure(r, a, 11, 1000), y = measure(r, a, 11, 1000);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_TRUE(x[i].samples == y[i].samples);
}

TEST(Measure, SelectorMatrixHasOneUnitPerRow) {
  SensorArraySpec a;
  a.dofs = {2, 5, 9};
  const Eigen::MatrixXd q = measurement_matrix(a, 10);
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    EXPECT_EQ(q.row(i).sum(), 1.0);
    EXPECT_EQ(q(i, static_cast<Eigen::Index>(a.dofs[i] - 1)), 1.0);
  }
  a.dofs = {11};
  EXPECT_THROW(measurement_matrix(a, 10), Error);
}

TEST(Faults, UnitGainIsIdentity) {
  const SignalWindow w = gaussian_window(1000, 1);
  FaultProfile f;
  f.kind = FaultKind::debonding_gain;
  f.gain = 1.0;
  EXPECT_TRUE(apply_fault(w, f)->samples == w.samples);
}

TEST(Faults, OffsetShiftsMean) {
  SignalWindow w = gaussian_window(100000, 2);
  FaultProfile f;
  f.kind = FaultKind::offset_bias;
  f.offset = 0.5;
  const auto out = apply_fault(w, f);
  EXPECT_NEAR(out->samples.mean(), 0.5 + w.samples.mean(), 1e-9);
  EXPECT_NEAR(out->samples.mean(), 0.5, 0.02);
}

TEST(Faults, StuckHasZeroVarianceOverOverlap) {
  SignalWindow w = gaussian_window(1000, 3);
  FaultProfile f;
  f.kind = FaultKind::stuck_constant;
  f.stuck_value = 0.2;
  f.onset = 2.0;
  f.duration = 5.0;
  const auto out = apply_fault(w, f);
  const Eigen::VectorXd inside = out->samples.segment(200, 500);
  EXPECT_EQ(inside.maxCoeff(), inside.minCoeff());
  EXPECT_TRUE(out->samples.head(200) == w.samples.head(200));
  EXPECT_TRUE(out->samples.tail(300) == w.samples.tail(300));
}

TEST(Faults, DriftGrowsFromOnset) {
  SignalWindow w;
  w.sensor_id = 1;
  w.dt = 0.1;
  w.samples = Eigen::VectorXd::Zero(100);
  FaultProfile f;
  f.kind = FaultKind::drift;
  f.drift_rate = 2.0;
  f.onset = 5.0;
  const auto out = apply_fault(w, f);
  EXPECT_EQ(out->samples(49), 0.0);
  EXPECT_NEAR(out->samples(60), 2.0, 1e-12);
}

TEST(Faults, PrecisionDegradationQuantizes) {
  SignalWindow w = gaussian_window(1000, 4);
  FaultProfile f;
  f.kind = FaultKind::precision_degradation;
  f.quant_step = 0.25;
  const auto out = apply_fault(w, f);
  for (double v : out->samples) EXPECT_NEAR(v / 0.25, std::round(v / 0.25), 1e-12);
  f.quant_step = 0.0;
  EXPECT_THROW(apply_fault(w, f), Error);
}

TEST(Faults, NoiseBurstAddsVariance) {
  SignalWindow w = gaussian_window(20000, 5);
  FaultProfile f;
  f.kind = FaultKind::noise_burst;
  f.noise_std = 2.0;
  const auto out = apply_fault(w, f);
  const Eigen::VectorXd d = out->samples - w.samples;
  EXPECT_NEAR(std::sqrt(d.squaredNorm() / d.size()), 2.0, 0.05);
}

TEST(Faults, MissingDeliversNoWindow) {
  SignalWindow w = gaussian_window(100, 6);
  FaultProfile f;
  f.kind = FaultKind::missing;
  EXPECT_FALSE(apply_fault(w, f).has_value());
  f.onset = 100.0;  // no overlap with this window
  EXPECT_TRUE(apply_fault(w, f).has_value());
}

TEST(Faults, UnknownKindAndWrongTargetRejected) {
  EXPECT_THROW(parse_fault_kind("bitflip"), Error);
  SignalWindow w = gaussian_window(10, 7, 3);
  FaultProfile f;
  f.sensor_id = 4;
  EXPECT_THROW(apply_fault(w, f), Error);
}

TEST(Faults, ChannelIsolation) {
  const ResponseRecord r = ten_story_record();
  SensorArraySpec a = one_sensor_per_story(10);
  a.noise_std.assign(10, 0.02);
  auto windows = measure(r, a, 3, 1000);
  const auto before = windows;
  FaultProfile f;
  f.kind = FaultKind::debonding_gain;
  f.gain = 0.3;
  f.noise_std = 0.1;
  f.sensor_id = 6;
  for (auto& w : windows)
    if (w.sensor_id == f.sensor_id) w = *apply_fault(w, f);
  for (std::size_t i = 0; i < 10; ++i) {
    if (i == 5)
      EXPECT_FALSE(windows[i].samples == before[i].samples);
    else
      EXPECT_TRUE(windows[i].samples == before[i].samples);
  }
}

TEST(Faults, NonOverlappingProfilesCommute) {
  SignalWindow w = gaussian_window(1000, 8);
  FaultProfile a, b;
  a.kind = FaultKind::offset_bias;
  a.offset = 1.0;
  a.duration = 4.0;
  b.kind = FaultKind::noise_burst;
  b.noise_std = 0.5;
  b.onset = 4.0;
  b.duration = 3.0;
  b.seed = 9;
  const auto ab = apply_fault(*apply_fault(w, a), b);
  const auto ba = apply_fault(*apply_fault(w, b), a);
  EXPECT_TRUE(ab->samples == ba->samples);
}

TEST(SamplingPoints, FormulaValues) {
  EXPECT_EQ(sampling_points(10, 100), 550u);
  EXPECT_EQ(sampling_points(20, 100), 1050u);
  EXPECT_EQ(sampling_points(10, 512), 2816u);
  EXPECT_THROW(sampling_points(10, 0), Error);
  EXPECT_THROW(sampling_points(9, 100), Error);
}
