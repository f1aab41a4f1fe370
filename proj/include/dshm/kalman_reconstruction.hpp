#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dshm/error.hpp"
#include "dshm/mii_detection.hpp"
#include "dshm/sensing_faults.hpp"
#include "dshm/structural_model.hpp"

namespace dshm {

struct KalmanFilterState {
  Eigen::VectorXd l;
  Eigen::MatrixXd P;
  Eigen::MatrixXd transition;
  Eigen::MatrixXd input;
  Eigen::MatrixXd measurement;
  Eigen::MatrixXd process_noise;
  Eigen::VectorXd measurement_noise;  // diagonal of c_v
  Eigen::MatrixXd gain;
};

inline void check_dimensions(const KalmanFilterState& s) {
  const auto n = s.l.size();
  require(s.P.rows() == n && s.P.cols() == n, "kf.dimension", "covariance does not match state");
  require(s.transition.rows() == n && s.transition.cols() == n, "kf.dimension",
          "transition does not match state");
  require(s.process_noise.rows() == n && s.process_noise.cols() == n, "kf.dimension",
          "process noise does not match state");
  require(s.measurement.cols() == n, "kf.dimension", "measurement matrix does not match state");
  require(s.measurement_noise.size() == s.measurement.rows(), "kf.dimension",
          "measurement noise does not match measurement rows");
}

inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> kf_predict(const KalmanFilterState& s,
                                                              const Eigen::VectorXd& u) {
  check_dimensions(s);
  Eigen::VectorXd l = s.transition * s.l;
  if (u.size() > 0) {
    require(s.input.rows() == s.l.size() && s.input.cols() == u.size(), "kf.dimension",
            "input does not match input matrix");
    l += s.input * u;
  }
  Eigen::MatrixXd p = s.transition * s.P * s.transition.transpose() + s.process_noise;
  p = 0.5 * (p + p.transpose()).eval();
  return {l, p};
}

// Updates s.l, s.P and s.gain and returns the posterior state.
inline Eigen::VectorXd kf_correct(KalmanFilterState& s, const Eigen::VectorXd& l_prior,
                                  const Eigen::MatrixXd& p_prior, const Eigen::VectorXd& m) {
  require(m.size() == s.measurement.rows(), "kf.dimension",
          "measurement has " + std::to_string(m.size()) + " entries, expected " +
              std::to_string(s.measurement.rows()));
  require((s.measurement_noise.array() > 0.0).all(), "kf.noise",
          "measurement noise variances must be positive");
  const Eigen::MatrixXd& h = s.measurement;
  const Eigen::MatrixXd ph = p_prior * h.transpose();
  Eigen::MatrixXd innov = h * ph;
  innov.diagonal() += s.measurement_noise;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(innov);
  // LDLT's own estimate misses exactly zero pivots, so take the pivot ratio too
  const Eigen::VectorXd piv = ldlt.vectorD().cwiseAbs();
  const double rcond = ldlt.info() == Eigen::Success && piv.maxCoeff() > 0.0
                           ? std::min(ldlt.rcond(), piv.minCoeff() / piv.maxCoeff())
                           : 0.0;
  if (!(rcond > 1e-15)) {
    std::ostringstream msg;
    msg << "innovation matrix is singular (reciprocal condition number " << rcond << ")";
    throw Error("kf.singular", msg.str());
  }
  s.gain = ldlt.solve(ph.transpose()).transpose();
  s.l = l_prior + s.gain * (m - h * l_prior);
  const auto n = l_prior.size();
  const Eigen::MatrixXd ikh = Eigen::MatrixXd::Identity(n, n) - s.gain * h;
  s.P = ikh * p_prior * ikh.transpose() +
        s.gain * s.measurement_noise.asDiagonal() * s.gain.transpose();
  s.P = 0.5 * (s.P + s.P.transpose()).eval();
  return s.l;
}

// Steady-state prior covariance of the filter Riccati equation, by the
// structure-preserving doubling iteration with a plain fixed-point fallback.
inline Eigen::MatrixXd steady_state_prior(const Eigen::MatrixXd& a, const Eigen::MatrixXd& h,
                                          const Eigen::MatrixXd& q, const Eigen::VectorXd& r) {
  const auto n = a.rows();
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd ak = a.transpose();
  Eigen::MatrixXd gk = h.transpose() * r.cwiseInverse().asDiagonal() * h;
  Eigen::MatrixXd hk = q;
  for (int it = 0; it < 200; ++it) {
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(eye + gk * hk);
    const Eigen::MatrixXd w_a = lu.solve(ak);
    const Eigen::MatrixXd w_g = lu.solve(gk);
    const Eigen::MatrixXd h_next = hk + ak.transpose() * hk * w_a;
    gk = gk + ak * w_g * ak.transpose();
    gk = 0.5 * (gk + gk.transpose()).eval();
    ak = ak * w_a;
    const double change = (h_next - hk).cwiseAbs().maxCoeff();
    hk = 0.5 * (h_next + h_next.transpose());
    if (!hk.allFinite()) break;
    if (change <= 1e-13 * std::max(1e-300, hk.cwiseAbs().maxCoeff())) return hk;
  }
  // Riccati fixed-point iteration.
  KalmanFilterState s;
  s.transition = a;
  s.measurement = h;
  s.process_noise = q;
  s.measurement_noise = r;
  s.l = Eigen::VectorXd::Zero(n);
  Eigen::MatrixXd p = q;
  for (int it = 0; it < 20000; ++it) {
    s.P = p;
    kf_correct(s, s.l, p, Eigen::VectorXd::Zero(h.rows()));
    Eigen::MatrixXd next = a * s.P * a.transpose() + q;
    next = 0.5 * (next + next.transpose()).eval();
    const double change = (next - p).cwiseAbs().maxCoeff();
    p = next;
    if (change <= 1e-12 * p.cwiseAbs().maxCoeff()) break;
  }
  return p;
}

struct ReconstructionConfig {
  double inflation = 1e7;       // faulty c_v = inflation * fault-free signal variance
  double input_noise = 0.03;    // ground input variance in units of mean channel variance
  double boundary_noise = 1.0;  // cut-boundary force variance, relative scale
  bool distributed = true;      // neighborhood sub-structure vs whole structure
  std::size_t buffer_dofs = 1;  // unmeasured stories kept beyond the outermost sensor
  std::size_t time_varying_max_states = 64;
  std::size_t burn_in = 200;  // samples skipped by the noise bootstrap
  std::size_t bootstrap_iterations = 3;
  double floor_band_margin = 1.2;  // spectral floor starts this factor above the top mode
  std::size_t floor_min_bins = 32;
  int kl_bins = 16;
  double scan_margin = 0.5;   // relative gap between the best and the median candidate
  double scan_min_kl = 0.1;   // bits; below this nothing disagrees enough to report
};

// What a node knows about the structure and the fault-free channel statistics.
struct StructureKnowledge {
  StructureSpec structure;
  SensorArraySpec sensors;
  std::size_t excitation_target = 0;
  std::map<std::size_t, double> signal_var;       // fault-free signal variance per sensor
  std::map<std::size_t, double> measurement_var;  // frozen c_v per sensor
  double omega1 = 0.0;

  void prepare() {
    if (omega1 <= 0.0) omega1 = eigen_modes(structure).omegas(0);
  }
  double accel_scale(const std::vector<std::size_t>& ids) const {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t id : ids) {
      auto it = signal_var.find(id);
      if (it == signal_var.end()) continue;
      sum += std::sqrt(it->second);
      ++n;
    }
    return n ? sum / static_cast<double>(n) : 1.0;
  }
};

// Discrete displacement/velocity model for a contiguous run of stories.
struct StateSpaceModel {
  std::size_t first_dof = 1;  // 1-based
  std::size_t last_dof = 1;
  Eigen::MatrixXd transition;
  Eigen::MatrixXd input;          // column 0: ground input; further columns: cut boundaries
  Eigen::MatrixXd process_noise;
  std::vector<std::size_t> channels;          // measured sensor ids, row order
  std::map<std::size_t, Eigen::RowVectorXd> output;  // any sensor id in range -> output row
  Eigen::MatrixXd measurement;

  std::size_t states() const { return static_cast<std::size_t>(transition.rows()); }
};

inline StateSpaceModel build_state_space(const StructureKnowledge& kn,
                                         const std::vector<std::size_t>& measured,
                                         const std::vector<std::size_t>& outputs,
                                         const ReconstructionConfig& cfg) {
  const StructureSpec& st = kn.structure;
  const std::size_t n_total = st.n_dof();
  std::set<std::size_t> ids(measured.begin(), measured.end());
  ids.insert(outputs.begin(), outputs.end());
  require(!ids.empty(), "kf.channels", "no channels for the state-space model");

  StateSpaceModel m;
  std::size_t lo = n_total, hi = 1;
  for (std::size_t id : ids) {
    require(id >= 1 && id <= kn.sensors.size(), "kf.channels",
            "sensor " + std::to_string(id) + " is not part of the array");
    const std::size_t dof = kn.sensors.dofs[id - 1];
    lo = std::min(lo, dof);
    hi = std::max(hi, dof);
  }
  if (cfg.distributed) {
    m.first_dof = lo > cfg.buffer_dofs ? lo - cfg.buffer_dofs : 1;
    m.last_dof = std::min(n_total, hi + cfg.buffer_dofs);
  } else {
    m.first_dof = 1;
    m.last_dof = n_total;
  }
  const auto a = m.first_dof - 1, b = m.last_dof - 1;
  const auto n = static_cast<Eigen::Index>(b - a + 1);

  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd inv_mass(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t g = a + static_cast<std::size_t>(i);
    inv_mass(i) = 1.0 / st.masses[g];
    k(i, i) += st.stiffnesses[g];
    if (g + 1 < n_total) {
      k(i, i) += st.stiffnesses[g + 1];
      if (i + 1 < n) {
        k(i, i + 1) -= st.stiffnesses[g + 1];
        k(i + 1, i) -= st.stiffnesses[g + 1];
      }
    }
  }
  const Eigen::MatrixXd mk = inv_mass.asDiagonal() * k;

  // an undamped mode with a node at every measured story is never corrected
  if (!measured.empty()) {
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(
        k, Eigen::MatrixXd(inv_mass.cwiseInverse().asDiagonal()));
    for (Eigen::Index j = 0; j < n; ++j) {
      const Eigen::VectorXd phi = es.eigenvectors().col(j);
      double seen = 0.0;
      for (std::size_t id : measured)
        seen = std::max(seen, std::abs(phi(static_cast<Eigen::Index>(kn.sensors.dofs[id - 1] - 1 - a))));
      require(seen > 1e-6 * phi.cwiseAbs().maxCoeff(), "kf.observability",
              "mode " + std::to_string(j + 1) + " of stories " + std::to_string(a + 1) + "-" +
                  std::to_string(b + 1) + " has a node at every measured sensor");
    }
  }

  std::vector<Eigen::VectorXd> cols;
  std::vector<double> variances;
  std::vector<std::size_t> ordered(ids.begin(), ids.end());
  const double scale = kn.accel_scale(ordered);
  {
    Eigen::VectorXd c = Eigen::VectorXd::Zero(2 * n);
    if (kn.excitation_target == 0) {
      c.tail(n).setConstant(-1.0);
    } else if (kn.excitation_target - 1 >= a && kn.excitation_target - 1 <= b) {
      c(n + static_cast<Eigen::Index>(kn.excitation_target - 1 - a)) =
          inv_mass(static_cast<Eigen::Index>(kn.excitation_target - 1 - a));
    }
    cols.push_back(c);
    const double mass_scale = kn.excitation_target == 0 ? 1.0 : st.masses[kn.excitation_target - 1];
    variances.push_back(cfg.input_noise * scale * scale * mass_scale * mass_scale);
  }
  const double omega1 = kn.omega1 > 0.0 ? kn.omega1 : eigen_modes(st).omegas(0);
  auto boundary = [&](std::size_t story_spring, Eigen::Index row) {
    Eigen::VectorXd c = Eigen::VectorXd::Zero(2 * n);
    c(n + row) = inv_mass(row);
    cols.push_back(c);
    const double f = st.stiffnesses[story_spring] * scale / (omega1 * omega1);
    variances.push_back(cfg.boundary_noise * f * f);
  };
  if (a > 0) boundary(a, 0);
  if (b + 1 < n_total) boundary(b + 1, n - 1);

  const auto ni = static_cast<Eigen::Index>(cols.size());
  Eigen::MatrixXd aug = Eigen::MatrixXd::Zero(2 * n + ni, 2 * n + ni);
  aug.block(0, n, n, n).setIdentity();
  aug.block(n, 0, n, n) = -mk;
  for (Eigen::Index j = 0; j < ni; ++j) aug.block(0, 2 * n + j, 2 * n, 1) = cols[j];
  const Eigen::MatrixXd e = (aug * st.dt).exp();
  m.transition = e.topLeftCorner(2 * n, 2 * n);
  m.input = e.topRightCorner(2 * n, ni);
  m.process_noise = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  for (Eigen::Index j = 0; j < ni; ++j)
    m.process_noise += variances[j] * m.input.col(j) * m.input.col(j).transpose();

  for (std::size_t id : ids) {
    const auto row = static_cast<Eigen::Index>(kn.sensors.dofs[id - 1] - 1 - a);
    Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(2 * n);
    r.head(n) = -mk.row(row);
    m.output[id] = r;
  }
  m.channels = measured;
  m.measurement.resize(static_cast<Eigen::Index>(measured.size()), 2 * n);
  for (std::size_t i = 0; i < measured.size(); ++i)
    m.measurement.row(static_cast<Eigen::Index>(i)) = m.output.at(measured[i]);
  return m;
}

struct FilterRun {
  std::map<std::size_t, Eigen::VectorXd> estimate;  // per output sensor id
  std::map<std::size_t, Eigen::VectorXd> residual;  // per measured sensor id, m - m_prior
  Eigen::VectorXd prior_variance;                   // diag(H P_prior H^T), measured order
  double min_p_eigen_ratio = 0.0;                   // min over steps of lambda_min(P)/trace(P)
};

// Runs the filter with zero input over one round.
inline FilterRun run_filter(const StateSpaceModel& m, const RoundWindows& windows,
                            const Eigen::VectorXd& c_v, const ReconstructionConfig& cfg,
                            bool track_psd = false) {
  require(c_v.size() == static_cast<Eigen::Index>(m.channels.size()), "kf.noise",
          "one measurement variance per channel required");
  require(!m.channels.empty(), "kf.channels", "filter needs at least one measured channel");
  const Eigen::Index len = windows.at(m.channels.front()).samples.size();
  Eigen::MatrixXd y(static_cast<Eigen::Index>(m.channels.size()), len);
  for (std::size_t i = 0; i < m.channels.size(); ++i) {
    const auto& w = windows.at(m.channels[i]);
    require(w.samples.size() == len, "kf.length", "windows differ in length");
    y.row(static_cast<Eigen::Index>(i)) = w.samples.transpose();
  }
  KalmanFilterState s;
  const auto n = static_cast<Eigen::Index>(m.states());
  s.transition = m.transition;
  s.measurement = m.measurement;
  s.process_noise = m.process_noise;
  s.measurement_noise = c_v;
  s.l = Eigen::VectorXd::Zero(n);
  const Eigen::MatrixXd p_ss = steady_state_prior(m.transition, m.measurement, m.process_noise, c_v);
  const bool varying = m.states() <= cfg.time_varying_max_states;

  FilterRun out;
  std::map<std::size_t, Eigen::VectorXd*> dst;
  for (const auto& [id, row] : m.output) {
    out.estimate[id] = Eigen::VectorXd::Zero(len);
    dst[id] = &out.estimate[id];
  }
  Eigen::MatrixXd res(y.rows(), len);
  Eigen::MatrixXd out_rows(static_cast<Eigen::Index>(m.output.size()), n);
  {
    Eigen::Index r = 0;
    for (const auto& [id, row] : m.output) out_rows.row(r++) = row;
  }
  out.prior_variance = (m.measurement * p_ss * m.measurement.transpose()).diagonal();
  out.min_p_eigen_ratio = std::numeric_limits<double>::infinity();

  Eigen::MatrixXd gain_ss;
  if (!varying) {
    Eigen::MatrixXd innov = m.measurement * p_ss * m.measurement.transpose();
    innov.diagonal() += c_v;
    gain_ss = innov.ldlt().solve(m.measurement * p_ss).transpose();
  }
  // The filter starts from its stationary prior covariance.
  s.P = p_ss;
  Eigen::VectorXd l_prior = s.l;
  Eigen::MatrixXd p_prior = p_ss;
  for (Eigen::Index t = 0; t < len; ++t) {
    if (t > 0) {
      if (varying) {
        std::tie(l_prior, p_prior) = kf_predict(s, Eigen::VectorXd());
      } else {
        l_prior = m.transition * s.l;
      }
    }
    res.col(t) = y.col(t) - m.measurement * l_prior;
    if (varying) {
      kf_correct(s, l_prior, p_prior, y.col(t));
      if (track_psd) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s.P, Eigen::EigenvaluesOnly);
        const double tr = s.P.trace();
        if (tr > 0.0)
          out.min_p_eigen_ratio = std::min(out.min_p_eigen_ratio, es.eigenvalues()(0) / tr);
      }
    } else {
      s.l = l_prior + gain_ss * res.col(t);
    }
    const Eigen::VectorXd o = out_rows * s.l;
    Eigen::Index r = 0;
    for (auto& [id, v] : dst) (*v)(t) = o(r++);
  }
  for (std::size_t i = 0; i < m.channels.size(); ++i)
    out.residual[m.channels[i]] = res.row(static_cast<Eigen::Index>(i)).transpose();
  return out;
}

// White measurement noise level from the spectrum above the highest modal
// frequency, where the structural response has rolled off. Returns nullopt
// when that band is too narrow for a stable average.
inline std::optional<double> spectral_noise_floor(const Eigen::VectorXd& y, double dt, double f_top,
                                                  const ReconstructionConfig& cfg) {
  const auto n = y.size();
  if (n < 64) return std::nullopt;
  const double df = 1.0 / (static_cast<double>(n) * dt);
  const auto k_lo = static_cast<Eigen::Index>(std::ceil(cfg.floor_band_margin * f_top / df));
  const Eigen::Index k_hi = n / 2 - 1;
  if (k_hi - k_lo + 1 < static_cast<Eigen::Index>(cfg.floor_min_bins)) return std::nullopt;
  std::vector<double> x(static_cast<std::size_t>(n));
  const double mean = y.mean();
  double wsum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double w = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) / static_cast<double>(n));
    x[static_cast<std::size_t>(i)] = w * (y(i) - mean);
    wsum += w * w;
  }
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> spec;
  fft.fwd(spec, x);
  double acc = 0.0;
  for (Eigen::Index k = k_lo; k <= k_hi; ++k) acc += std::norm(spec[static_cast<std::size_t>(k)]);
  return acc / static_cast<double>(k_hi - k_lo + 1) / wsum;
}

// Per-channel measurement noise on a fault-free round. The spectral floor is
// used where the sampling rate leaves room above the top mode; otherwise
// innovation matching, c_v = E[innovation^2] - diag(H P_prior H^T).
inline std::map<std::size_t, double> bootstrap_measurement_noise(
    const StructureKnowledge& kn, const RoundWindows& windows, const ReconstructionConfig& cfg,
    const std::vector<std::size_t>& channels) {
  Eigen::VectorXd var(static_cast<Eigen::Index>(channels.size()));
  for (std::size_t i = 0; i < channels.size(); ++i) {
    const auto& s = windows.at(channels[i]).samples;
    const double v = (s.array() - s.mean()).square().mean();
    require(v > 0.0, "kf.bootstrap",
            "sensor " + std::to_string(channels[i]) + " has zero variance in the training round");
    var(static_cast<Eigen::Index>(i)) = v;
  }
  const double f_top = eigen_modes(kn.structure).frequencies.maxCoeff();
  std::map<std::size_t, double> out;
  bool all_spectral = true;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    const auto& w = windows.at(channels[i]);
    const auto f = spectral_noise_floor(w.samples, w.dt, f_top, cfg);
    if (!f || !(*f > 0.0)) {
      all_spectral = false;
      break;
    }
    out[channels[i]] = *f;
  }
  if (all_spectral) return out;

  const StateSpaceModel m = build_state_space(kn, channels, {}, cfg);
  Eigen::VectorXd c_v = 0.01 * var;
  for (std::size_t it = 0; it < cfg.bootstrap_iterations; ++it) {
    const FilterRun run = run_filter(m, windows, c_v, cfg);
    for (std::size_t i = 0; i < channels.size(); ++i) {
      const Eigen::VectorXd& r = run.residual.at(channels[i]);
      const Eigen::Index skip = std::min<Eigen::Index>(static_cast<Eigen::Index>(cfg.burn_in),
                                                       r.size() / 2);
      const double ms = r.tail(r.size() - skip).squaredNorm() / static_cast<double>(r.size() - skip);
      const auto ii = static_cast<Eigen::Index>(i);
      c_v(ii) = std::max(ms - run.prior_variance(ii), 1e-6 * var(ii));
    }
    std::vector<double> sorted(c_v.data(), c_v.data() + c_v.size());
    std::sort(sorted.begin(), sorted.end());
    const double floor = 1e-2 * sorted[sorted.size() / 2];
    c_v = c_v.cwiseMax(floor);
  }
  out.clear();
  for (std::size_t i = 0; i < channels.size(); ++i) out[channels[i]] = c_v(static_cast<Eigen::Index>(i));
  return out;
}

inline Eigen::VectorXd channel_noise(const StructureKnowledge& kn, const StateSpaceModel& m,
                                     const std::set<std::size_t>& inflated,
                                     const ReconstructionConfig& cfg) {
  Eigen::VectorXd c_v(static_cast<Eigen::Index>(m.channels.size()));
  for (std::size_t i = 0; i < m.channels.size(); ++i) {
    const std::size_t id = m.channels[i];
    auto mv = kn.measurement_var.find(id);
    require(mv != kn.measurement_var.end(), "kf.noise",
            "no measurement variance known for sensor " + std::to_string(id));
    double v = mv->second;
    if (inflated.count(id)) {
      auto sv = kn.signal_var.find(id);
      require(sv != kn.signal_var.end(), "kf.noise",
              "no signal variance known for sensor " + std::to_string(id));
      v = cfg.inflation * sv->second;
    }
    c_v(static_cast<Eigen::Index>(i)) = v;
  }
  return c_v;
}

struct ReconstructionResult {
  std::size_t sensor_id = 0;
  SignalWindow window;
  Eigen::VectorXd residual;  // empty for channels that delivered no window
  double residual_rms = 0.0;
  double quality = std::numeric_limits<double>::quiet_NaN();
};

// Reconstructs `faulty` channels from the channels present in `windows`.
// Faulty channels that did deliver a window stay in the filter with an
// inflated noise variance; absent ones are estimated from the model alone.
inline std::vector<ReconstructionResult> reconstruct_signals(
    const std::set<std::size_t>& faulty, const RoundWindows& windows,
    const StructureKnowledge& kn, const ReconstructionConfig& cfg, std::size_t round = 0,
    const RoundWindows* truth = nullptr) {
  if (faulty.empty()) return {};
  std::vector<std::size_t> measured, healthy;
  for (const auto& [id, w] : windows) {
    measured.push_back(id);
    if (!faulty.count(id)) healthy.push_back(id);
  }
  if (healthy.empty()) {
    std::string ids;
    for (std::size_t id : faulty) ids += (ids.empty() ? "" : ", ") + std::to_string(id);
    throw Error("kf.observability",
                "no healthy channel left to observe faulty sensors {" + ids +
                    "}; add a healthy neighbor within range");
  }
  const std::vector<std::size_t> outs(faulty.begin(), faulty.end());
  const StateSpaceModel m = build_state_space(kn, measured, outs, cfg);
  const Eigen::VectorXd c_v = channel_noise(kn, m, faulty, cfg);
  const FilterRun run = run_filter(m, windows, c_v, cfg);

  const SignalWindow& any = windows.begin()->second;
  std::vector<ReconstructionResult> out;
  for (std::size_t id : faulty) {
    ReconstructionResult r;
    r.sensor_id = id;
    r.window.sensor_id = id;
    r.window.round = round;
    r.window.dt = any.dt;
    r.window.start_time = any.start_time;
    r.window.samples = run.estimate.at(id);
    auto res = run.residual.find(id);
    if (res != run.residual.end()) {
      r.residual = res->second;
      r.residual_rms = rms(r.residual);
    }
    if (truth) {
      auto t = truth->find(id);
      if (t != truth->end())
        r.quality = std::max(0.0, correlation_coefficient(t->second.samples, r.window.samples).rho);
    }
    out.push_back(std::move(r));
  }
  return out;
}

// Symmetrised KL divergence in bits between the histograms of y and y_est.
inline double kl_divergence(const Eigen::VectorXd& y, const Eigen::VectorXd& y_est,
                            const BinEdges& edges) {
  require(y.size() == y_est.size(), "kl.length", "windows differ in length");
  require(y.size() > 0, "kl.length", "empty window");
  std::vector<double> p(edges.bins, 0.0), q(edges.bins, 0.0);
  for (Eigen::Index k = 0; k < y.size(); ++k) {
    p[edges.index(y(k))] += 1.0;
    q[edges.index(y_est(k))] += 1.0;
  }
  const double n = static_cast<double>(y.size());
  constexpr double floor = 1e-12;
  double sum = 0.0;
  for (int b = 0; b < edges.bins; ++b) {
    if (p[b] == 0.0 && q[b] == 0.0) continue;
    const double pb = std::max(p[b] / n, floor), qb = std::max(q[b] / n, floor);
    sum += (pb - qb) * (std::log2(pb) - std::log2(qb));
  }
  return 0.5 * sum;
}

inline double kl_divergence(const SignalWindow& y, const SignalWindow& y_est, const BinEdges& edges) {
  return kl_divergence(y.samples, y_est.samples, edges);
}

struct ScanCandidate {
  std::size_t sensor_id = 0;
  double lambda = 0.0;
};

struct ScanResult {
  std::vector<ScanCandidate> candidates;
  std::size_t best = 0;  // sensor id with the smallest indicator
  double median = 0.0;   // lower-median candidate indicator
  double margin = 0.0;   // (median - best) / median
  bool reported = false;
  std::vector<std::size_t> absent;  // node-set members that delivered no window
};

// Mean KL over the channels left trusted when `inflated` is excluded.
inline double scan_indicator(const StateSpaceModel& m, const RoundWindows& present,
                             const StructureKnowledge& kn, const ReconstructionConfig& cfg,
                             const std::set<std::size_t>& inflated) {
  const FilterRun run = run_filter(m, present, channel_noise(kn, m, inflated, cfg), cfg);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t q : m.channels) {
    if (inflated.count(q)) continue;
    const Eigen::VectorXd& y = present.at(q).samples;
    const Eigen::VectorXd& e = run.estimate.at(q);
    const BinEdges edges{std::min(y.minCoeff(), e.minCoeff()), std::max(y.maxCoeff(), e.maxCoeff()),
                         cfg.kl_bins};
    sum += kl_divergence(y, e, edges);
    ++count;
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

struct ScanSetup {
  RoundWindows present;
  std::vector<std::size_t> measured, absent;
};

inline ScanSetup scan_setup(const std::vector<std::size_t>& node_set, const RoundWindows& windows) {
  require(node_set.size() >= 3, "scan.size", "missing-sensor scan needs at least 3 nodes");
  ScanSetup s;
  for (std::size_t id : node_set) {
    auto it = windows.find(id);
    if (it == windows.end()) {
      s.absent.push_back(id);
      continue;
    }
    s.present.emplace(id, it->second);
    s.measured.push_back(id);
  }
  require(s.measured.size() >= 3, "scan.size", "missing-sensor scan needs at least 3 nodes with data");
  return s;
}

inline ScanResult missing_sensor_scan(const std::vector<std::size_t>& node_set,
                                      const RoundWindows& windows, const StructureKnowledge& kn,
                                      const ReconstructionConfig& cfg) {
  const ScanSetup setup = scan_setup(node_set, windows);
  ScanResult out;
  out.absent = setup.absent;
  const StateSpaceModel m = build_state_space(kn, setup.measured, {}, cfg);
  for (std::size_t p : setup.measured)
    out.candidates.push_back({p, scan_indicator(m, setup.present, kn, cfg, {p})});
  std::vector<ScanCandidate> sorted = out.candidates;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const ScanCandidate& x, const ScanCandidate& y) { return x.lambda < y.lambda; });
  out.best = sorted[0].sensor_id;
  // against the median rather than the runner-up, so two absent nodes do not mask each other
  out.median = sorted[(sorted.size() - 1) / 2].lambda;
  out.margin = out.median > 0.0 ? (out.median - sorted[0].lambda) / out.median : 0.0;
  out.reported = out.margin >= cfg.scan_margin && out.median >= cfg.scan_min_kl;
  return out;
}

// Scan, drop the reported node, and scan again until nothing stands out.
// When the channels disagree but no single node explains it, the best
// candidate is paired with each other node and the best pair is tried.
inline std::vector<std::size_t> iterated_missing_scan(const std::vector<std::size_t>& node_set,
                                                      const RoundWindows& windows,
                                                      const StructureKnowledge& kn,
                                                      const ReconstructionConfig& cfg) {
  std::vector<std::size_t> flagged;
  std::vector<std::size_t> remaining = node_set;
  RoundWindows pool = windows;
  auto drop = [&](std::size_t id) {
    flagged.push_back(id);
    pool.erase(id);
    remaining.erase(std::find(remaining.begin(), remaining.end(), id));
  };
  while (remaining.size() >= 3) {
    std::size_t with_data = 0;
    for (std::size_t id : remaining) with_data += pool.count(id);
    if (with_data < 4) break;
    const ScanResult r = missing_sensor_scan(remaining, pool, kn, cfg);
    if (r.reported) {
      drop(r.best);
      continue;
    }
    if (r.median < cfg.scan_min_kl) break;
    const ScanSetup setup = scan_setup(remaining, pool);
    const StateSpaceModel m = build_state_space(kn, setup.measured, {}, cfg);
    std::size_t partner = 0;
    double best_pair = std::numeric_limits<double>::infinity();
    for (std::size_t q : setup.measured) {
      if (q == r.best) continue;
      const double v = scan_indicator(m, setup.present, kn, cfg, {r.best, q});
      if (v < best_pair) {
        best_pair = v;
        partner = q;
      }
    }
    if (!(best_pair <= (1.0 - cfg.scan_margin) * r.median)) break;
    drop(std::min(r.best, partner));
    drop(std::max(r.best, partner));
  }
  return flagged;
}

}  // namespace dshm
