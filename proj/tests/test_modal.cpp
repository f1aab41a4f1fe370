#include <gtest/gtest.h>

#include "dshm/modal_monitoring.hpp"
#include "dshm/structural_model.hpp"

using namespace dshm;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Ten-story chain, continuous record split into rounds; optional damage
// starting with round `damage_round`.
struct Chain {
  static constexpr std::size_t kWarm = 20000, kLen = 2816;
  StructureSpec structure;
  SensorArraySpec sensors;
  ResponseRecord record;
  ModalConfig cfg;

  Chain(std::uint64_t seed, std::size_t rounds, std::optional<DamageSpec> damage = std::nullopt) {
    structure = uniform_chain(10, 1.0, 1764.0, 0.01, (kWarm + kLen * rounds) * 0.01);
    sensors = one_sensor_per_story(10);
    ExcitationSpec e;
    e.seed = seed;
    e.cutoff_hz = 3.0;
    record = simulate_response(structure, e, damage, nullptr, kWarm);
    cfg.band_hi_hz = 6.0;
  }

  std::vector<SignalWindow> round(std::size_t r, std::uint64_t seed) const {
    SensorArraySpec a = sensors;
    const std::size_t first = kWarm + r * kLen;
    for (double v : window_rms(record, a, first, kLen)) a.noise_std.push_back(0.1 * v);
    return measure(record, a, seed * 31 + r, kLen, first, r);
  }

  GlobalModeShape shape(const std::vector<SignalWindow>& w, const std::vector<double>* hints = nullptr) const {
    std::vector<LocalModeEstimate> est;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const SignalWindow* ref = i == 0 ? &w[1] : &w[i - 1];
      est.push_back(extract_local_modes(w[i], ref, cfg, hints));
    }
    std::vector<std::size_t> loc;
    for (std::size_t i = 1; i <= w.size(); ++i) loc.push_back(i);
    return assemble_global(est, loc, cfg.cluster_bins * est.front().bin_hz, cfg.max_modes, cfg.weak_link);
  }
};

LocalModeEstimate report(std::size_t id, std::size_t ref, std::vector<LocalMode> modes) {
  LocalModeEstimate e;
  e.sensor_id = id;
  e.reference_id = ref;
  e.modes = std::move(modes);
  return e;
}

}  // namespace

TEST(Welch, ParsevalAndSinePeak) {
  const double dt = 0.01;
  Eigen::VectorXd x(4096);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = 2.0 * std::sin(2 * M_PI * 5.0 * dt * i);
  const Spectrum s = welch(x, dt, 512);
  Eigen::Index k;
  s.psd.maxCoeff(&k);
  EXPECT_NEAR(s.frequency(k), 5.0, s.df);
  EXPECT_NEAR(s.psd.sum() * s.df, 2.0, 0.05);  // variance of a sine of amplitude 2
  EXPECT_EQ(s.segments, 15u);
  EXPECT_THROW(welch(x.head(100), dt, 512), Error);
}

TEST(LocalModes, SingleDofWithinOneBin) {
  StructureSpec s = uniform_chain(1, 1.0, 4.0 * M_PI * M_PI, 0.01, 4096 * 0.01);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ExcitationSpec e;
    e.seed = seed;
    const ResponseRecord r = simulate_response(s, e);
    SensorArraySpec a = one_sensor_per_story(1);
    const SignalWindow w = measure(r, a, 0, 4096, 0).front();
    ModalConfig cfg;
    cfg.max_modes = 1;
    const LocalModeEstimate est = extract_local_modes(w, nullptr, cfg);
    ASSERT_FALSE(est.empty);
    ASSERT_EQ(est.modes.size(), 1u);
    EXPECT_NEAR(est.modes[0].frequency_hz, 1.0, 0.024) << seed;
  }
}

TEST(LocalModes, StuckChannelIsEmpty) {
  SignalWindow w;
  w.sensor_id = 4;
  w.dt = 0.01;
  w.samples = Eigen::VectorXd::Constant(2816, 0.7);
  EXPECT_TRUE(extract_local_modes(w, nullptr, ModalConfig{}).empty);
}

TEST(LocalModes, ChainPeaksMatchModel) {
  Chain c(2, 1);
  const ModalBasis b = eigen_modes(c.structure);
  const auto w = c.round(0, 2);
  const LocalModeEstimate est = extract_local_modes(w[9], &w[8], c.cfg);
  ASSERT_EQ(est.modes.size(), 3u);
  for (std::size_t j = 0; j < 3; ++j)
    EXPECT_NEAR(est.modes[j].frequency_hz, b.frequencies(static_cast<Eigen::Index>(j)), est.bin_hz);
}

TEST(Assemble, SignPatternOfFirstTwoModes) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Chain c(seed, 1);
    const GlobalModeShape g = c.shape(c.round(0, seed));
    ASSERT_GE(g.modes(), 2u);
    const Eigen::VectorXd m1 = g.shapes.col(0), m2 = g.shapes.col(1);
    EXPECT_TRUE((m1.array() > 0).all() || (m1.array() < 0).all()) << m1.transpose();
    int changes = 0;
    for (Eigen::Index i = 1; i < m2.size(); ++i) changes += (m2(i) > 0) != (m2(i - 1) > 0);
    EXPECT_EQ(changes, 1) << m2.transpose();
  }
}

TEST(Assemble, MatchesModelShapes) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Chain c(seed, 1);
    const ModalBasis b = eigen_modes(c.structure);
    const GlobalModeShape g = c.shape(c.round(0, seed));
    EXPECT_GE(modal_assurance(g.shapes.col(0), b.shapes.col(0)), 0.95) << seed;
    EXPECT_GE(modal_assurance(g.shapes.col(1), b.shapes.col(1)), 0.9) << seed;
  }
}

TEST(Assemble, IdenticalReportsEqualOneReport) {
  std::vector<LocalModeEstimate> est;
  for (std::size_t id = 1; id <= 4; ++id) est.push_back(report(id, id == 1 ? 2 : id - 1, {{1.0, 2.0, 1, true}}));
  const GlobalModeShape g = assemble_global(est, {1, 2, 3, 4}, 0.1);
  ASSERT_EQ(g.modes(), 1u);
  EXPECT_DOUBLE_EQ(g.frequencies[0], 1.0);
  for (Eigen::Index i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(g.shapes(i, 0), 1.0);
}

TEST(Assemble, MissingNodeFlaggedOthersUnchanged) {
  std::vector<LocalModeEstimate> est;
  const double amp[] = {1.0, 2.0, 4.0, 3.0};
  for (std::size_t id = 1; id <= 4; ++id)
    est.push_back(report(id, id == 1 ? 2 : id - 1, {{1.0, amp[id - 1], 1, true}}));
  const GlobalModeShape full = assemble_global(est, {1, 2, 3, 4}, 0.1);
  est.erase(est.begin() + 1);
  est[1].reference_id = 1;
  const GlobalModeShape part = assemble_global(est, {1, 2, 3, 4}, 0.1);
  EXPECT_TRUE(part.missing[0][1]);
  EXPECT_TRUE(std::isnan(part.shapes(1, 0)));
  for (Eigen::Index i : {0, 2, 3}) EXPECT_DOUBLE_EQ(part.shapes(i, 0), full.shapes(i, 0));
}

TEST(Assemble, QuorumAndSigns) {
  std::vector<LocalModeEstimate> est;
  est.push_back(report(1, 2, {{1.0, 1.0, 1, true}, {3.0, 1.0, -1, true}}));
  est.push_back(report(2, 1, {{1.02, 2.0, 1, true}, {3.0, 1.0, -1, true}}));
  est.push_back(report(3, 2, {{0.99, 3.0, 1, true}}));
  est.push_back(report(4, 3, {{1.0, 3.0, -1, true}, {7.0, 1.0, 1, true}}));
  const GlobalModeShape g = assemble_global(est, {1, 2, 3, 4}, 0.1);
  ASSERT_EQ(g.modes(), 1u);  // 3 Hz and 7 Hz lack quorum
  EXPECT_EQ(g.diagnostics.size(), 2u);
  EXPECT_DOUBLE_EQ(g.shapes(3, 0), -1.0);
  EXPECT_DOUBLE_EQ(g.shapes(2, 0), 1.0);
  EXPECT_THROW(assemble_global({est[0]}, {1}, 0.1), Error);
}

TEST(Normalize, Idempotent) {
  Chain c(3, 1);
  GlobalModeShape g = c.shape(c.round(0, 3));
  const Eigen::MatrixXd once = g.shapes;
  normalize(g);
  EXPECT_TRUE(g.shapes.cwiseEqual(once).count() + g.shapes.array().isNaN().count() == once.size());
  for (Eigen::Index j = 0; j < g.shapes.cols(); ++j) EXPECT_DOUBLE_EQ(g.shapes.col(j).cwiseAbs().maxCoeff(), 1.0);
}

TEST(Curvature, LinearAndQuadratic) {
  const Eigen::VectorXd line = Eigen::VectorXd::LinSpaced(8, 1.0, 8.0);
  const Curvature a = curvature(line);
  for (Eigen::Index i = 0; i < 8; ++i) EXPECT_EQ(a.values(i), 0.0);
  Eigen::VectorXd q(8);
  for (Eigen::Index i = 0; i < 8; ++i) q(i) = static_cast<double>(i * i);
  const Curvature b = curvature(q);
  for (Eigen::Index i = 0; i < 8; ++i) EXPECT_EQ(b.values(i), 2.0);
  EXPECT_EQ(curvature(q, 2.0).values(3), 0.5);
}

TEST(Curvature, Linearity) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> u(-50, 50);
  for (int t = 0; t < 100; ++t) {
    Eigen::VectorXd p(10), s(10);
    for (Eigen::Index i = 0; i < 10; ++i) {
      p(i) = u(rng) / 8.0;
      s(i) = u(rng) / 16.0;
    }
    const double a = 0.25 * u(rng), b = 0.5 * u(rng);
    const Eigen::VectorXd lhs = curvature(a * p + b * s).values;
    const Eigen::VectorXd rhs = a * curvature(p).values + b * curvature(s).values;
    EXPECT_TRUE(lhs == rhs);
  }
}

TEST(Curvature, MissingFlagsNeighbors) {
  Eigen::VectorXd p = Eigen::VectorXd::LinSpaced(8, 0.0, 1.0);
  p(4) = kNaN;
  const Curvature c = curvature(p);
  for (std::size_t i : {3u, 4u, 5u}) EXPECT_TRUE(c.flagged[i]);
  for (std::size_t i : {0u, 1u, 2u, 6u, 7u}) EXPECT_FALSE(c.flagged[i]);
  EXPECT_THROW(curvature(Eigen::VectorXd::Ones(2)), Error);
  Eigen::VectorXd holes(6);
  holes << 1, kNaN, 1, kNaN, 1, 1;
  EXPECT_THROW(curvature(holes), Error);
}

namespace {

struct Monitor {
  Chain chain;
  ModalBaseline baseline;
  std::vector<double> hints;
  std::uint64_t seed;
  static constexpr std::size_t kTrain = 8;

  Monitor(std::uint64_t s, std::optional<DamageSpec> d)
      : chain(s, kTrain + 3, d), seed(s) {
    std::vector<GlobalModeShape> train;
    train.push_back(chain.shape(chain.round(0, s)));
    hints = train.front().frequencies;
    for (std::size_t r = 1; r < kTrain; ++r) train.push_back(chain.shape(chain.round(r, s), &hints));
    baseline = train_baseline(train, chain.cfg);
  }

  DamageReport test_round(std::size_t k, const std::set<std::size_t>& faulty = {}) const {
    return diagnose(chain.shape(chain.round(kTrain + k, seed), &hints), baseline, faulty, chain.cfg);
  }
};

}  // namespace

TEST(Diagnose, NullScenarioQuiet) {
  std::size_t positives = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Monitor m(seed, std::nullopt);
    for (std::size_t k = 0; k < 3; ++k) positives += m.test_round(k).damage.size();
  }
  EXPECT_EQ(positives, 0u);
}

TEST(Diagnose, DamageLocalized) {
  std::size_t hits = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const double onset = (Chain::kWarm + Monitor::kTrain * Chain::kLen) * 0.01;
    const Monitor m(seed, DamageSpec{5, 0.2, onset});
    const DamageReport r = m.test_round(1);
    hits += r.peak >= 4 && r.peak <= 6;
  }
  EXPECT_GE(hits, 9u);
}

TEST(Diagnose, FaultOnlyOutsideDamage) {
  Monitor m(4, std::nullopt);
  const DamageReport r = m.test_round(0, {7});
  EXPECT_EQ(r.fault_only, std::vector<std::size_t>{7});
  ModalBaseline empty;
  EXPECT_THROW(diagnose(m.chain.shape(m.chain.round(9, 4), &m.hints), empty, {}, m.chain.cfg), Error);
}

TEST(Scoring, FaultConfusion) {
  const Confusion c = score_faults({1, 2, 3, 4, 5}, {2, 3}, {3, 4});
  EXPECT_EQ(c.tp, 1u);
  EXPECT_EQ(c.fp, 1u);
  EXPECT_EQ(c.fn, 1u);
  EXPECT_EQ(c.tn, 2u);
  EXPECT_DOUBLE_EQ(c.accuracy(), 0.6);
  EXPECT_EQ(c.decisions(), 5u);
}

TEST(Scoring, DamageTolerance) {
  std::vector<std::size_t> loc{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  Confusion c = score_damage(loc, {6}, {5});
  EXPECT_EQ(c.tp, 1u);
  EXPECT_EQ(c.fp, 0u);
  EXPECT_DOUBLE_EQ(c.ability(), 1.0);
  c = score_damage(loc, {9}, {5});
  EXPECT_EQ(c.fn, 1u);
  EXPECT_EQ(c.fp, 1u);
  EXPECT_EQ(c.tp + c.fn + c.fp + c.tn, 1u + 7u);
  EXPECT_DOUBLE_EQ(c.ability(), 1.0 - (1.0 / 7.0 + 1.0));
  c = score_damage(loc, {}, {});
  EXPECT_DOUBLE_EQ(c.ability(), 1.0);
  EXPECT_EQ(c.tn, 10u);
}
