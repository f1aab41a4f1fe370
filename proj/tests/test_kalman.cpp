#include <gtest/gtest.h>

#include "dshm/kalman_reconstruction.hpp"

using namespace dshm;

namespace {

RoundWindows to_round(const std::vector<SignalWindow>& ws) {
  RoundWindows r;
  for (const auto& w : ws) r[w.sensor_id] = w;
  return r;
}

// Ten-story chain observed by one sensor per story. Round 0 is the training
// round used for the noise bootstrap; the truth windows are noise-free.
struct TenStory {
  static constexpr std::size_t kWarm = 20000, kLen = 2816;
  StructureKnowledge kn;
  ResponseRecord record;
  std::uint64_t seed;
  ReconstructionConfig cfg;

  explicit TenStory(std::uint64_t s, std::size_t rounds = 3) : seed(s) {
    kn.structure = uniform_chain(10, 1.0, 1764.0, 0.01, (kWarm + kLen * rounds) * 0.01);
    kn.sensors = one_sensor_per_story(10);
    ExcitationSpec e;
    e.seed = s;
    e.cutoff_hz = 3.0;
    record = simulate_response(kn.structure, e, std::nullopt, nullptr, kWarm);
    kn.prepare();
    const RoundWindows train = noisy(0);
    for (const auto& [id, w] : truth(0)) kn.signal_var[id] = w.samples.squaredNorm() / w.samples.size();
    std::vector<std::size_t> ids;
    for (std::size_t i = 1; i <= 10; ++i) ids.push_back(i);
    kn.measurement_var = bootstrap_measurement_noise(kn, train, cfg, ids);
  }

  std::size_t first(std::size_t r) const { return kWarm + r * kLen; }

  RoundWindows truth(std::size_t r) const {
    return to_round(measure(record, kn.sensors, 0, kLen, first(r), r));
  }

  RoundWindows noisy(std::size_t r) const {
    SensorArraySpec a = kn.sensors;
    for (double v : window_rms(record, a, first(r), kLen)) a.noise_std.push_back(0.1 * v);
    return to_round(measure(record, a, seed * 77 + r, kLen, first(r), r));
  }
};

double corr(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return correlation_coefficient(a, b).rho;
}

}  // namespace

TEST(Predict, IdentityAndZeroTransition) {
  KalmanFilterState s;
  s.l = Eigen::VectorXd::LinSpaced(4, 1.0, 4.0);
  s.P = Eigen::MatrixXd::Identity(4, 4) * 2.0;
  s.transition = Eigen::MatrixXd::Identity(4, 4);
  s.process_noise = Eigen::MatrixXd::Zero(4, 4);
  s.measurement = Eigen::MatrixXd::Identity(2, 4);
  s.measurement_noise = Eigen::VectorXd::Ones(2);
  s.input = Eigen::MatrixXd::Ones(4, 1);
  auto [l, p] = kf_predict(s, Eigen::VectorXd::Zero(1));
  EXPECT_TRUE(l == s.l);
  EXPECT_TRUE(p == s.P);
  s.transition.setZero();
  std::tie(l, p) = kf_predict(s, Eigen::VectorXd::Constant(1, 3.0));
  EXPECT_TRUE(l == Eigen::VectorXd::Constant(4, 3.0));
  s.transition = Eigen::MatrixXd::Identity(3, 3);
  EXPECT_THROW(kf_predict(s, Eigen::VectorXd()), Error);
}

TEST(Predict, FreeDecayMatchesSimulator) {
  StructureKnowledge kn;
  kn.structure = uniform_chain(1, 1.0, 4.0 * M_PI * M_PI, 0.01, 1.0);
  kn.sensors = one_sensor_per_story(1);
  ReconstructionConfig cfg;
  const StateSpaceModel m = build_state_space(kn, {1}, {}, cfg);
  Eigen::VectorXd z(2);
  z << 0.3, -0.7;
  ExcitationSpec e;
  e.amplitude = 0.0;
  const ResponseRecord r = simulate_response(kn.structure, e, std::nullopt, &z);
  KalmanFilterState s;
  s.l = z;
  s.P = Eigen::MatrixXd::Zero(2, 2);
  s.transition = m.transition;
  s.process_noise = Eigen::MatrixXd::Zero(2, 2);
  s.measurement = m.measurement;
  s.measurement_noise = Eigen::VectorXd::Ones(1);
  for (Eigen::Index t = 1; t <= 99; ++t) {
    auto [l, p] = kf_predict(s, Eigen::VectorXd());
    s.l = l;
    EXPECT_NEAR(l(0), r.displacement(0, t), 1e-9);
    EXPECT_NEAR(l(1), r.velocity(0, t), 1e-9);
  }
}

TEST(Correct, NoiseLimits) {
  KalmanFilterState s;
  s.l = Eigen::VectorXd::Zero(2);
  s.transition = Eigen::MatrixXd::Identity(2, 2);
  s.measurement = Eigen::MatrixXd::Identity(2, 2);
  const Eigen::MatrixXd p = (Eigen::MatrixXd(2, 2) << 2.0, 0.3, 0.3, 1.0).finished();
  const Eigen::VectorXd l_prior = (Eigen::VectorXd(2) << 0.5, -0.5).finished();
  const Eigen::VectorXd m = (Eigen::VectorXd(2) << 3.0, 1.0).finished();
  s.measurement_noise = Eigen::VectorXd::Constant(2, 1e30);
  EXPECT_LT((kf_correct(s, l_prior, p, m) - l_prior).norm(), 1e-20);
  s.measurement_noise = Eigen::VectorXd::Constant(2, 1e-14);
  EXPECT_LT((s.measurement * kf_correct(s, l_prior, p, m) - m).norm(), 1e-12);
  s.measurement_noise = Eigen::VectorXd::Zero(2);
  EXPECT_THROW(kf_correct(s, l_prior, p, m), Error);
}

TEST(Correct, SingularInnovationReportsCondition) {
  KalmanFilterState s;
  s.l = Eigen::VectorXd::Zero(2);
  s.measurement = (Eigen::MatrixXd(2, 2) << 1.0, 0.0, 1.0, 0.0).finished();
  s.measurement_noise = Eigen::VectorXd::Constant(2, 1e-300);
  try {
    kf_correct(s, s.l, Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Zero(2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "kf.singular");
    EXPECT_NE(std::string(e.what()).find("condition"), std::string::npos);
  }
}

TEST(Correct, GainColumnShrinksWhenNoiseInflated) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + trial % 5, k = 1 + trial % 3;
    Eigen::MatrixXd a(n, n), h(k, n);
    for (auto& v : a.reshaped()) v = g(rng);
    for (auto& v : h.reshaped()) v = g(rng);
    KalmanFilterState s;
    s.l = Eigen::VectorXd::Zero(n);
    s.measurement = h;
    const Eigen::MatrixXd p = a * a.transpose() + 1e-3 * Eigen::MatrixXd::Identity(n, n);
    s.measurement_noise = Eigen::VectorXd::Constant(k, 0.5);
    kf_correct(s, s.l, p, Eigen::VectorXd::Zero(k));
    const double before = s.gain.col(0).norm();
    s.measurement_noise(0) *= 10.0;
    kf_correct(s, s.l, p, Eigen::VectorXd::Zero(k));
    EXPECT_LE(s.gain.col(0).norm(), before * (1 + 1e-12));
  }
}

TEST(Filter, TwoDofResidualBelowNoiseAndCovariancePsd) {
  StructureKnowledge kn;
  kn.structure = uniform_chain(2, 1.0, 400.0, 0.01, 120.0);
  kn.sensors = one_sensor_per_story(2);
  ExcitationSpec e;
  e.seed = 8;
  const ResponseRecord r = simulate_response(kn.structure, e, std::nullopt, nullptr, 10000);
  SensorArraySpec a = kn.sensors;
  for (double v : window_rms(r, a, 10000, 2000)) a.noise_std.push_back(0.1 * v);
  const RoundWindows w = to_round(measure(r, a, 3, 2000, 10000));
  for (std::size_t i = 1; i <= 2; ++i) {
    kn.signal_var[i] = std::pow(a.noise_std[i - 1] / 0.1, 2);
    kn.measurement_var[i] = a.noise_std[i - 1] * a.noise_std[i - 1];
  }
  ReconstructionConfig cfg;
  const StateSpaceModel m = build_state_space(kn, {1, 2}, {}, cfg);
  const FilterRun run = run_filter(m, w, channel_noise(kn, m, {}, cfg), cfg, true);
  EXPECT_GE(run.min_p_eigen_ratio, -1e-10);
  for (std::size_t i = 1; i <= 2; ++i) {
    const Eigen::VectorXd post = w.at(i).samples - run.estimate.at(i);
    const double var = post.tail(1800).squaredNorm() / 1800.0;
    EXPECT_LE(var, kn.measurement_var[i]) << i;
  }
}

TEST(SteadyState, SatisfiesRiccatiEquation) {
  TenStory ts(3, 1);
  const StateSpaceModel m = build_state_space(ts.kn, {2, 3, 5, 8}, {}, ts.cfg);
  const Eigen::VectorXd r = channel_noise(ts.kn, m, {}, ts.cfg);
  const Eigen::MatrixXd p = steady_state_prior(m.transition, m.measurement, m.process_noise, r);
  Eigen::MatrixXd s = m.measurement * p * m.measurement.transpose();
  s.diagonal() += r;
  const Eigen::MatrixXd k = p * m.measurement.transpose() * s.inverse();
  const Eigen::MatrixXd post = p - k * m.measurement * p;
  const Eigen::MatrixXd next = m.transition * post * m.transition.transpose() + m.process_noise;
  EXPECT_LT((next - p).cwiseAbs().maxCoeff(), 1e-8 * p.cwiseAbs().maxCoeff());
}

TEST(SteadyState, ModeHiddenFromEverySensorRejected) {
  // stories 1-9 with both ends held: the fifth mode has nodes at all even stories
  TenStory ts(3, 1);
  try {
    build_state_space(ts.kn, {2, 4, 6, 8}, {}, ts.cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "kf.observability");
  }
}

TEST(Bootstrap, RecoversInjectedNoiseLevel) {
  TenStory ts(4, 1);
  SensorArraySpec a = ts.kn.sensors;
  const auto rmsv = window_rms(ts.record, a, ts.first(0), TenStory::kLen);
  for (std::size_t i = 1; i <= 10; ++i) {
    const double truth = std::pow(0.1 * rmsv[i - 1], 2);
    EXPECT_GT(ts.kn.measurement_var[i], 0.5 * truth) << i;
    EXPECT_LT(ts.kn.measurement_var[i], 2.0 * truth) << i;
  }
}

TEST(Reconstruct, EmptyFaultySetIsNoOpAndHealthyTracked) {
  TenStory ts(5);
  const RoundWindows w = ts.noisy(1);
  EXPECT_TRUE(reconstruct_signals({}, w, ts.kn, ts.cfg).empty());
  std::vector<std::size_t> ids;
  for (std::size_t i = 1; i <= 10; ++i) ids.push_back(i);
  const StateSpaceModel m = build_state_space(ts.kn, ids, {}, ts.cfg);
  const FilterRun run = run_filter(m, w, channel_noise(ts.kn, m, {}, ts.cfg), ts.cfg);
  for (std::size_t i = 1; i <= 10; ++i) {
    const Eigen::VectorXd d = w.at(i).samples - run.estimate.at(i);
    EXPECT_LT(rms(d), 2.0 * std::sqrt(ts.kn.measurement_var[i])) << i;
  }
}

TEST(Reconstruct, StuckChannelFollowsGroundTruth) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TenStory ts(seed);
    RoundWindows w = ts.noisy(1);
    const RoundWindows truth = ts.truth(1);
    w[5].samples.setConstant(w[5].samples(0));
    const auto rec = reconstruct_signals({5}, w, ts.kn, ts.cfg, 1, &truth);
    ASSERT_EQ(rec.size(), 1u);
    EXPECT_GE(rec[0].quality, 0.90) << seed;
    EXPECT_EQ(rec[0].window.samples.size(), static_cast<Eigen::Index>(TenStory::kLen));
    EXPECT_EQ(rec[0].residual.size(), static_cast<Eigen::Index>(TenStory::kLen));
  }
}

TEST(Reconstruct, TwoFaultyChannels) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TenStory ts(seed);
    RoundWindows w = ts.noisy(1);
    const RoundWindows truth = ts.truth(1);
    w[5].samples.setConstant(w[5].samples(0));
    w[10].samples *= 0.3;
    const auto rec = reconstruct_signals({5, 10}, w, ts.kn, ts.cfg, 1, &truth);
    ASSERT_EQ(rec.size(), 2u);
    for (const auto& r : rec) EXPECT_GE(r.quality, 0.85) << seed << " sensor " << r.sensor_id;
  }
}

TEST(Reconstruct, IndependentOfCorruptedValues) {
  TenStory ts(6);
  RoundWindows a = ts.noisy(1), b = a;
  a[5].samples.setConstant(a[5].samples(0));
  b[5].samples.array() += 5.0 * std::sqrt(ts.kn.signal_var[5]);
  const auto ra = reconstruct_signals({5}, a, ts.kn, ts.cfg);
  const auto rb = reconstruct_signals({5}, b, ts.kn, ts.cfg);
  EXPECT_LT(rms(ra[0].window.samples - rb[0].window.samples), 1e-6);
}

TEST(Reconstruct, AbsentChannelEstimatedFromModel) {
  TenStory ts(7);
  RoundWindows w = ts.noisy(1);
  const RoundWindows truth = ts.truth(1);
  w.erase(6);
  const auto rec = reconstruct_signals({6}, w, ts.kn, ts.cfg, 1, &truth);
  EXPECT_GE(rec[0].quality, 0.9);
  EXPECT_EQ(rec[0].residual.size(), 0);
}

TEST(Reconstruct, ObservabilityViolation) {
  TenStory ts(8, 2);
  RoundWindows w;
  const RoundWindows all = ts.noisy(1);
  w[3] = all.at(3);
  w[4] = all.at(4);
  try {
    reconstruct_signals({3, 4}, w, ts.kn, ts.cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "kf.observability");
  }
}

TEST(KlDivergence, Properties) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  Eigen::VectorXd y(5000), z(5000);
  for (auto& v : y) v = g(rng);
  for (auto& v : z) v = 0.5 + 1.3 * g(rng);
  const BinEdges e{-5.0, 6.0, 16};
  EXPECT_EQ(kl_divergence(y, y, e), 0.0);
  EXPECT_EQ(kl_divergence(y, z, e), kl_divergence(z, y, e));
  EXPECT_GT(kl_divergence(y, z, e), 0.0);
  const Eigen::VectorXd lo = Eigen::VectorXd::Constant(100, -4.9), hi = Eigen::VectorXd::Constant(100, 5.9);
  const double d = kl_divergence(lo, hi, e);
  EXPECT_TRUE(std::isfinite(d));
  EXPECT_NEAR(d, std::log2(1.0 / 1e-12), 1e-6);
  EXPECT_THROW(kl_divergence(y, Eigen::VectorXd(z.head(10)), e), Error);
}

namespace {

// A detached sensor only records its own electronics noise.
void detach(RoundWindows& w, std::size_t id, const StructureKnowledge& kn, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  const double sd = std::sqrt(kn.measurement_var.at(id));
  for (auto& v : w[id].samples) v = sd * g(rng);
}

std::vector<std::size_t> all_ids() {
  std::vector<std::size_t> ids;
  for (std::size_t i = 1; i <= 10; ++i) ids.push_back(i);
  return ids;
}

}  // namespace

TEST(MissingScan, NullCaseNotReported) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TenStory ts(seed);
    const ScanResult r = missing_sensor_scan(all_ids(), ts.noisy(1), ts.kn, ts.cfg);
    EXPECT_FALSE(r.reported) << seed << " margin " << r.margin;
  }
}

TEST(MissingScan, RemovedNodeFound) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TenStory ts(seed);
    RoundWindows w = ts.noisy(1);
    detach(w, 5, ts.kn, seed);
    const ScanResult r = missing_sensor_scan(all_ids(), w, ts.kn, ts.cfg);
    EXPECT_EQ(r.best, 5u) << seed;
    EXPECT_TRUE(r.reported) << seed;
  }
}

TEST(MissingScan, IteratedScanFindsTwo) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    TenStory ts(seed);
    RoundWindows w = ts.noisy(1);
    detach(w, 3, ts.kn, seed);
    detach(w, 8, ts.kn, seed + 100);
    const ScanResult single = missing_sensor_scan(all_ids(), w, ts.kn, ts.cfg);
    EXPECT_TRUE(single.best == 3 || single.best == 8) << seed;
    auto flagged = iterated_missing_scan(all_ids(), w, ts.kn, ts.cfg);
    std::sort(flagged.begin(), flagged.end());
    EXPECT_EQ(flagged, (std::vector<std::size_t>{3, 8})) << seed;
  }
}

TEST(MissingScan, AbsentWindowsAndTooFewNodes) {
  TenStory ts(9, 2);
  RoundWindows w = ts.noisy(1);
  w.erase(2);
  const ScanResult r = missing_sensor_scan(all_ids(), w, ts.kn, ts.cfg);
  EXPECT_EQ(r.absent, std::vector<std::size_t>{2});
  EXPECT_THROW(missing_sensor_scan({1, 2}, w, ts.kn, ts.cfg), Error);
}
